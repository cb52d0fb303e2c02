#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/nn.hpp"
#include "elmkit/rng.hpp"
#include "elmkit/tensor.hpp"

// The trainable EEG encoder, the projection heads, and the frozen
// text-encoder interface with its deterministic hashing stub.

namespace elmkit::encoders {

constexpr std::int64_t kTextDim = 768;

// ---------------------------------------------------------------------------
// Pooling configuration per input length
// ---------------------------------------------------------------------------

struct PoolTableRow {
  std::int64_t input_len;
  std::array<std::int64_t, 4> pools;
  std::array<std::int64_t, 4> dims;  // temporal length after each pool
};

// Published pool configuration. The 500-sample row's pool sizes are the ones
// consistent with its intermediate dimensions (166 = floor(500/3), ...).
inline const std::array<PoolTableRow, 5>& pool_table() {
  static const std::array<PoolTableRow, 5> rows = {{
      {500, {3, 3, 3, 3}, {166, 55, 18, 6}},
      {1000, {3, 3, 3, 3}, {333, 111, 37, 12}},
      {2000, {3, 3, 3, 3}, {666, 222, 74, 24}},
      {3000, {4, 4, 4, 4}, {750, 187, 46, 11}},
      {6000, {4, 4, 4, 4}, {1500, 375, 93, 23}},
  }};
  return rows;
}

inline const PoolTableRow& pool_row_for(std::int64_t input_len) {
  for (const auto& r : pool_table())
    if (r.input_len == input_len) return r;
  fail("no pooling configuration for input length ", input_len,
       " (supported: 500, 1000, 2000, 3000, 6000)");
}

// ---------------------------------------------------------------------------
// EEG encoder
// ---------------------------------------------------------------------------

struct EncoderSpec {
  std::int64_t in_channels = 20;
  std::int64_t filters_per_kernel = 32;
  std::vector<std::int64_t> kernel_sizes = {4, 8, 16};
  std::int64_t input_len = 6000;

  std::int64_t out_dim() const {
    return filters_per_kernel * static_cast<std::int64_t>(kernel_sizes.size());
  }
};

// Residual multi-scale CNN: a multi-kernel stem lifts the montage channels
// to the embedding width, then four residual blocks of two multi-kernel
// convolution groups each, with a pointwise-projected shortcut, max pooling
// after every block, and global average pooling at the end.
class EegEncoder : public nn::Module {
 public:
  EegEncoder(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
    const auto& row = pool_row_for(spec.input_len);
    const std::int64_t w = spec.out_dim();
    stem_conv_ = std::make_unique<nn::MultiKernelConv1d>("encoder.stem", spec.in_channels,
                                                         spec.filters_per_kernel, spec.kernel_sizes, rng);
    stem_bn_ = std::make_unique<nn::BatchNorm>("encoder.stem.bn", w);
    for (int i = 0; i < 4; ++i) {
      Block b;
      const std::string base = concat("encoder.block", i + 1);
      b.conv_a = std::make_unique<nn::MultiKernelConv1d>(base + ".conv_a", w, spec.filters_per_kernel,
                                                         spec.kernel_sizes, rng);
      b.bn_a = std::make_unique<nn::BatchNorm>(base + ".bn_a", w);
      b.conv_b = std::make_unique<nn::MultiKernelConv1d>(base + ".conv_b", w, spec.filters_per_kernel,
                                                         spec.kernel_sizes, rng);
      b.bn_b = std::make_unique<nn::BatchNorm>(base + ".bn_b", w);
      b.shortcut = std::make_unique<nn::PointwiseConv1d>(base + ".shortcut", w, w, rng);
      b.bn_s = std::make_unique<nn::BatchNorm>(base + ".bn_s", w);
      b.pool = std::make_unique<nn::MaxPool1d>(row.pools[static_cast<std::size_t>(i)]);
      blocks_.push_back(std::move(b));
    }
  }

  const EncoderSpec& spec() const { return spec_; }

  // Temporal length after each of the four pooling stages.
  std::array<std::int64_t, 4> intermediate_dims() const {
    std::array<std::int64_t, 4> dims{};
    std::int64_t L = spec_.input_len;
    for (int i = 0; i < 4; ++i) {
      L /= blocks_[static_cast<std::size_t>(i)].pool->pool();
      dims[static_cast<std::size_t>(i)] = L;
    }
    return dims;
  }

  // [B, channels, input_len] -> [B, out_dim]
  NDArray forward(const NDArray& x, bool train) {
    require(x.ndim() == 3, "encoder input must be [batch, channels, samples]");
    if (x.dim(2) != spec_.input_len)
      fail("encoder input length mismatch: expected ", spec_.input_len, ", got ", x.dim(2));
    NDArray h = stem_conv_->forward(x, train);
    h = stem_bn_->forward(h, train);
    h = stem_elu_.forward(h, train);
    for (auto& b : blocks_) {
      NDArray main = b.conv_a->forward(h, train);
      main = b.bn_a->forward(main, train);
      main = b.elu_a.forward(main, train);
      main = b.conv_b->forward(main, train);
      main = b.bn_b->forward(main, train);
      NDArray res = b.shortcut->forward(h, train);
      res = b.bn_s->forward(res, train);
      for (std::size_t i = 0; i < main.v.size(); ++i) main.v[i] += res.v[i];
      main = b.elu_out.forward(main, train);
      h = b.pool->forward(main, train);
    }
    return gap_.forward(h, train);
  }

  // dLoss/d(embedding) [B, out_dim] -> dLoss/d(input); parameter gradients accumulate.
  NDArray backward(const NDArray& dh) {
    NDArray g = gap_.backward(dh);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      auto& b = *it;
      g = b.pool->backward(g);
      g = b.elu_out.backward(g);
      NDArray d_res = b.bn_s->backward(g);
      d_res = b.shortcut->backward(d_res);
      NDArray d_main = b.bn_b->backward(g);
      d_main = b.conv_b->backward(d_main);
      d_main = b.elu_a.backward(d_main);
      d_main = b.bn_a->backward(d_main);
      d_main = b.conv_a->backward(d_main);
      for (std::size_t i = 0; i < d_main.v.size(); ++i) d_main.v[i] += d_res.v[i];
      g = std::move(d_main);
    }
    g = stem_elu_.backward(g);
    g = stem_bn_->backward(g);
    return stem_conv_->backward(g);
  }

  void collect(std::vector<nn::Param*>& out) override {
    stem_conv_->collect(out);
    stem_bn_->collect(out);
    for (auto& b : blocks_) {
      b.conv_a->collect(out);
      b.bn_a->collect(out);
      b.conv_b->collect(out);
      b.bn_b->collect(out);
      b.shortcut->collect(out);
      b.bn_s->collect(out);
    }
  }

  // Running statistics that belong in checkpoints alongside the parameters.
  std::vector<std::pair<std::string, NDArray*>> buffers() {
    std::vector<std::pair<std::string, NDArray*>> out;
    auto add = [&](const std::string& n, nn::BatchNorm& bn) {
      out.emplace_back(n + ".running_mean", &bn.running_mean());
      out.emplace_back(n + ".running_var", &bn.running_var());
    };
    add("encoder.stem.bn", *stem_bn_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      add(concat("encoder.block", i + 1, ".bn_a"), *blocks_[i].bn_a);
      add(concat("encoder.block", i + 1, ".bn_b"), *blocks_[i].bn_b);
      add(concat("encoder.block", i + 1, ".bn_s"), *blocks_[i].bn_s);
    }
    return out;
  }

 private:
  struct Block {
    std::unique_ptr<nn::MultiKernelConv1d> conv_a, conv_b;
    std::unique_ptr<nn::BatchNorm> bn_a, bn_b, bn_s;
    std::unique_ptr<nn::PointwiseConv1d> shortcut;
    std::unique_ptr<nn::MaxPool1d> pool;
    nn::Elu elu_a, elu_out;
  };

  EncoderSpec spec_;
  std::unique_ptr<nn::MultiKernelConv1d> stem_conv_;
  std::unique_ptr<nn::BatchNorm> stem_bn_;
  nn::Elu stem_elu_;
  std::vector<Block> blocks_;
  nn::GlobalAvgPool gap_;
};

// ---------------------------------------------------------------------------
// Projection heads
// ---------------------------------------------------------------------------

enum class Activation { Elu, Relu };

// Single-hidden-layer MLP: Linear -> BN -> activation -> Linear [-> BN].
class Projector : public nn::Module {
 public:
  Projector(std::string name, std::int64_t in, std::int64_t hidden, std::int64_t out, Activation act,
            bool final_bn, Rng& rng)
      : act_(act),
        fc1_(std::make_unique<nn::Linear>(name + ".fc1", in, hidden, rng)),
        bn1_(std::make_unique<nn::BatchNorm>(name + ".bn1", hidden)),
        fc2_(std::make_unique<nn::Linear>(name + ".fc2", hidden, out, rng)),
        bn2_(final_bn ? std::make_unique<nn::BatchNorm>(name + ".bn2", out) : nullptr),
        in_(in), out_(out) {}

  // Shared latent head: in -> 512 -> 256 with exponential linear units.
  static std::unique_ptr<Projector> eeg_elm(std::int64_t in_dim, Rng& rng) {
    return std::make_unique<Projector>("proj.eeg", in_dim, 512, 256, Activation::Elu, false, rng);
  }
  // Text head: 768 -> 1024 -> 256 with rectified linear units and a final BN.
  static std::unique_ptr<Projector> text_elm(Rng& rng) {
    return std::make_unique<Projector>("proj.text", kTextDim, 1024, 256, Activation::Relu, true, rng);
  }
  // Projection into the text encoder's native space: in -> 512 -> 768.
  static std::unique_ptr<Projector> eeg_mflag(std::int64_t in_dim, Rng& rng) {
    return std::make_unique<Projector>("proj.eeg", in_dim, 512, kTextDim, Activation::Elu, false, rng);
  }

  NDArray forward(const NDArray& x, bool train) {
    require(x.ndim() == 2 && x.dim(1) == in_, concat("projector expects input dim ", in_, ", got ",
                                                     x.ndim() == 2 ? x.dim(1) : -1));
    NDArray h = fc1_->forward(x, train);
    h = bn1_->forward(h, train);
    h = act_ == Activation::Elu ? elu_.forward(h, train) : relu_.forward(h, train);
    h = fc2_->forward(h, train);
    if (bn2_) h = bn2_->forward(h, train);
    return h;
  }

  NDArray backward(const NDArray& dy) {
    NDArray g = dy;
    if (bn2_) g = bn2_->backward(g);
    g = fc2_->backward(g);
    g = act_ == Activation::Elu ? elu_.backward(g) : relu_.backward(g);
    g = bn1_->backward(g);
    return fc1_->backward(g);
  }

  void collect(std::vector<nn::Param*>& out) override {
    fc1_->collect(out);
    bn1_->collect(out);
    fc2_->collect(out);
    if (bn2_) bn2_->collect(out);
  }

  std::vector<std::pair<std::string, NDArray*>> buffers(const std::string& name) {
    std::vector<std::pair<std::string, NDArray*>> out;
    out.emplace_back(name + ".bn1.running_mean", &bn1_->running_mean());
    out.emplace_back(name + ".bn1.running_var", &bn1_->running_var());
    if (bn2_) {
      out.emplace_back(name + ".bn2.running_mean", &bn2_->running_mean());
      out.emplace_back(name + ".bn2.running_var", &bn2_->running_var());
    }
    return out;
  }

  std::int64_t out_dim() const { return out_; }

 private:
  Activation act_;
  std::unique_ptr<nn::Linear> fc1_;
  std::unique_ptr<nn::BatchNorm> bn1_;
  std::unique_ptr<nn::Linear> fc2_;
  std::unique_ptr<nn::BatchNorm> bn2_;
  nn::Elu elu_;
  nn::Relu relu_;
  std::int64_t in_, out_;
};

// ---------------------------------------------------------------------------
// Frozen text encoder
// ---------------------------------------------------------------------------

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual NDArray embed(const std::string& text) const = 0;  // [768], L2-normalized
  // Digest of the encoder's internal state; must not change during pretraining.
  virtual std::uint64_t fingerprint() const = 0;
};

// Phrase groups whose members should embed near each other. Shared with the
// synthetic report templates so generated text carries a usable signal.
struct ConceptGroup {
  std::string concept_id;
  std::vector<std::string> phrases;
};

inline std::vector<ConceptGroup> default_concept_lexicon() {
  return {
      {"concept_normal",
       {"normal", "unremarkable", "within normal limits", "no pathology", "no abnormalities",
        "no abnormality", "no abnormalities observed", "no clinical events", "no epileptiform activity",
        "no indications of pathology", "shows no pathology"}},
      {"concept_abnormal",
       {"abnormal", "pathology", "pathology present", "abnormalities", "abnormality",
        "pathologically abnormal", "markedly abnormal", "clinical events detected",
        "indications of pathology", "epileptiform"}},
      {"concept_slow_burst",
       {"slow wave bursts", "slow-wave bursts", "3 hz bursts", "high amplitude bursts",
        "intermittent bursts", "generalized slowing", "rhythmic delta activity"}},
      {"concept_alpha",
       {"posterior dominant rhythm", "alpha rhythm", "well organized background"}},
  };
}

// Deterministic stand-in for a pretrained language model: tokens (with
// scripted phrases collapsed to concept tokens) hash into a fixed random
// 768-dimensional space; the weighted sum is L2-normalized. Equal strings map
// to equal vectors, same-concept phrases land close, different class concepts
// land nearly orthogonal.
class HashingTextEncoder : public TextEncoder {
 public:
  explicit HashingTextEncoder(std::uint64_t seed = 17,
                              std::vector<ConceptGroup> lexicon = default_concept_lexicon())
      : seed_(seed), lexicon_(std::move(lexicon)) {
    for (const auto& g : lexicon_)
      for (const auto& p : g.phrases) {
        auto toks = tokenize(p);
        require(!toks.empty(), "empty phrase in concept lexicon");
        phrase_map_[toks] = g.concept_id;
        max_phrase_len_ = std::max(max_phrase_len_, toks.size());
      }
  }

  NDArray embed(const std::string& text) const override {
    auto toks = tokenize(text);
    // Longest-match canonicalization of scripted phrases into concept tokens.
    std::vector<std::pair<std::string, double>> weighted;
    std::size_t i = 0;
    while (i < toks.size()) {
      bool matched = false;
      std::size_t longest = std::min(max_phrase_len_, toks.size() - i);
      for (std::size_t len = longest; len >= 1 && !matched; --len) {
        std::vector<std::string> cand(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + len));
        auto it = phrase_map_.find(cand);
        if (it != phrase_map_.end()) {
          weighted.emplace_back(it->second, kConceptWeight);
          i += len;
          matched = true;
        }
      }
      if (!matched) {
        const std::string& t = toks[i];
        weighted.emplace_back(t, is_stopword(t) ? kStopWeight : 1.0);
        ++i;
      }
    }

    NDArray out({kTextDim});
    if (weighted.empty()) {
      accumulate_token("<empty>", 1.0, out);
    } else {
      for (const auto& [tok, w] : weighted) accumulate_token(tok, w, out);
    }
    double n = l2_norm(out.v.data(), kTextDim);
    if (n < 1e-12) {
      out.zero();
      accumulate_token("<empty>", 1.0, out);
      n = l2_norm(out.v.data(), kTextDim);
    }
    for (auto& v : out.v) v /= n;
    return out;
  }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = seed_;
    for (const auto& g : lexicon_) {
      h = fnv1a(g.concept_id, h);
      for (const auto& p : g.phrases) h = fnv1a(p, h);
    }
    return h;
  }

  static std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (std::size_t i = 0; i < text.size(); ++i) {
      unsigned char c = static_cast<unsigned char>(text[i]);
      if (std::isalnum(c)) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else if (c == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) &&
                 i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
        cur.push_back('.');  // keep decimals like "9.5" whole
      } else if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

 private:
  static constexpr double kConceptWeight = 5.0;
  static constexpr double kStopWeight = 0.1;

  static bool is_stopword(const std::string& t) {
    static const std::set<std::string> stops = {"the", "a",  "an",  "is", "are", "was", "were", "this",
                                                "that", "of", "in",  "on", "at",  "to",  "and",  "or",
                                                "with", "for", "be", "been", "there", "it"};
    return stops.count(t) > 0;
  }

  void accumulate_token(const std::string& tok, double weight, NDArray& acc) const {
    const NDArray& vec = token_vector(tok);
    for (std::int64_t i = 0; i < kTextDim; ++i) acc[i] += weight * vec[i];
  }

  const NDArray& token_vector(const std::string& tok) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(tok);
    if (it != cache_.end()) return it->second;
    Rng rng(fnv1a(tok) ^ seed_);
    NDArray v({kTextDim});
    const double scale = 1.0 / std::sqrt(static_cast<double>(kTextDim));
    for (auto& x : v.v) x = rng.normal() * scale;
    return cache_.emplace(tok, std::move(v)).first->second;
  }

  std::uint64_t seed_;
  std::vector<ConceptGroup> lexicon_;
  std::map<std::vector<std::string>, std::string> phrase_map_;
  std::size_t max_phrase_len_ = 1;
  mutable std::map<std::string, NDArray> cache_;
  mutable std::mutex mu_;
};

}  // namespace elmkit::encoders
