#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/encoders.hpp"
#include "elmkit/metrics.hpp"
#include "elmkit/optim.hpp"
#include "elmkit/tensor.hpp"
#include "elmkit/trainer.hpp"

// Evaluation battery over frozen checkpoints: retrieval, zero-shot
// classification, linear probing, a supervised reference, within/between-
// subject similarity analysis, and temporal alignment traces.

namespace elmkit::eval {

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Aggregated {
  NDArray vectors;                  // [n_groups x d], L2-normalized
  std::vector<std::uint8_t> valid;  // 0 when the group mean had no direction
};

// Arithmetic mean per group followed by L2 normalization.
inline Aggregated aggregate(const NDArray& emb, const std::vector<std::int64_t>& group,
                            std::int64_t n_groups) {
  require(emb.ndim() == 2 && static_cast<std::int64_t>(group.size()) == emb.dim(0),
          "aggregate: group index size mismatch");
  const std::int64_t d = emb.dim(1);
  Aggregated out;
  out.vectors = NDArray({n_groups, d});
  out.valid.assign(static_cast<std::size_t>(n_groups), 1);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_groups), 0);
  for (std::int64_t i = 0; i < emb.dim(0); ++i) {
    const std::int64_t g = group[static_cast<std::size_t>(i)];
    require(g >= 0 && g < n_groups, "aggregate: group index out of range");
    ++counts[static_cast<std::size_t>(g)];
    for (std::int64_t j = 0; j < d; ++j) out.vectors.at(g, j) += emb.at(i, j);
  }
  for (std::int64_t g = 0; g < n_groups; ++g) {
    require(counts[static_cast<std::size_t>(g)] > 0, concat("aggregate: empty group ", g));
    for (std::int64_t j = 0; j < d; ++j) out.vectors.at(g, j) /= static_cast<double>(counts[static_cast<std::size_t>(g)]);
    const double n = l2_norm(&out.vectors.v[static_cast<std::size_t>(g * d)], d);
    if (n < 1e-12) {
      out.valid[static_cast<std::size_t>(g)] = 0;
      for (std::int64_t j = 0; j < d; ++j) out.vectors.at(g, j) = 0.0;
    } else {
      for (std::int64_t j = 0; j < d; ++j) out.vectors.at(g, j) /= n;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

// Fraction of queries whose true partner (same index) ranks in the cosine
// top k; ties broken by stable index order.
inline double retrieve_topk(const NDArray& queries, const NDArray& candidates, std::int64_t k) {
  require(queries.dim(0) == candidates.dim(0), "retrieve: queries and candidates must pair bijectively");
  require(queries.dim(1) == candidates.dim(1), "retrieve: dim mismatch");
  require(k >= 1 && k <= candidates.dim(0), "retrieve: k out of range");
  NDArray q = l2_normalize_rows(queries);
  NDArray c = l2_normalize_rows(candidates);
  NDArray sims({q.dim(0), c.dim(0)});
  sims.mat().noalias() = q.mat() * c.mat().transpose();
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < q.dim(0); ++i) {
    const double true_sim = sims.at(i, i);
    std::int64_t rank = 1;
    for (std::int64_t j = 0; j < c.dim(0); ++j) {
      if (j == i) continue;
      if (sims.at(i, j) > true_sim || (sims.at(i, j) == true_sim && j < i)) ++rank;
    }
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(q.dim(0));
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

struct PromptEnsemble {
  std::vector<std::string> class_names;              // index = class id
  std::vector<std::vector<std::string>> prompts;     // per class

  void validate() const {
    require(class_names.size() >= 2, "prompt ensemble needs at least two classes");
    require(prompts.size() == class_names.size(), "prompt ensemble: class count mismatch");
    for (const auto& p : prompts) require(!p.empty(), "prompt ensemble: every class needs a prompt");
  }
};

// The 21 normal/abnormal phrasing pairs.
inline PromptEnsemble default_prompt_ensemble() {
  PromptEnsemble e;
  e.class_names = {"normal", "abnormal"};
  e.prompts = {
      {"Normal EEG.", "No pathology present.", "No abnormalities.", "Normal routine EEG.",
       "Normal awake record.", "Normal EEG record.", "This EEG is normal.", "This is a normal EEG.",
       "This EEG is within normal limits", "Normal awake EEG.", "Normal asleep EEG.",
       "Normal awake and asleep EEG.", "Normal EEG in wakefulness and drowsiness.", "No pathology.",
       "EEG shows no pathology.", "No abnormalities.", "No abnormalities observed.",
       "EEG shows no abnormalities.", "No clinical events detected.",
       "No indications of pathology observed.", "The EEG is normal."},
      {"Abnormal EEG.", "Pathology present.", "Abnormalities observed.", "Markedly abnormal EEG.",
       "Abnormal awake record.", "Abnormal EEG record.", "This EEG is abnormal.",
       "This is an abnormal EEG.", "This EEG is mildly abnormal.", "Abnormal awake EEG.",
       "Abnormal asleep EEG.", "Abnormal awake and asleep EEG.",
       "Abnormal EEG in wakefulness and drowsiness.", "Abnormal EEG due to:",
       "Abnormal EEG for a subject of this age due to:", "Abnormalities in the EEG.",
       "Abnormalities observed.", "EEG shows abnormalities.", "Clinical events detected.",
       "Indications of pathology observed.", "The EEG is pathologically abnormal."}};
  return e;
}

struct ZeroShotResult {
  std::vector<int> predictions;
  std::vector<double> scores;  // binary: prototype-similarity margin (class 1 - class 0)
  double balanced_accuracy = 0.0;
  double auroc = 0.0;
  double f1 = 0.0;
};

// Class prototypes: embed every prompt, project into the shared space,
// normalize, average, renormalize. Prediction is the argmax cosine;
// deterministic tie-break to the lowest class index.
inline NDArray class_prototypes(const PromptEnsemble& ensemble, const encoders::TextEncoder& text_enc,
                                const std::function<NDArray(const NDArray&)>& project_text,
                                const std::vector<int>* skip = nullptr) {
  ensemble.validate();
  NDArray protos;
  for (std::size_t cls = 0; cls < ensemble.prompts.size(); ++cls) {
    const auto& plist = ensemble.prompts[cls];
    std::vector<std::string> used;
    for (std::size_t p = 0; p < plist.size(); ++p) {
      if (skip && skip->size() == 2 && static_cast<std::size_t>((*skip)[0]) == cls &&
          static_cast<std::size_t>((*skip)[1]) == p)
        continue;
      used.push_back(plist[p]);
    }
    require(!used.empty(), "class lost all prompts");
    NDArray raw({static_cast<std::int64_t>(used.size()), encoders::kTextDim});
    for (std::size_t p = 0; p < used.size(); ++p) {
      NDArray v = text_enc.embed(used[p]);
      for (std::int64_t j = 0; j < encoders::kTextDim; ++j) raw.at(static_cast<std::int64_t>(p), j) = v[j];
    }
    NDArray proj = project_text(raw);
    NDArray norm = l2_normalize_rows(proj);
    if (protos.numel() == 0) protos = NDArray({static_cast<std::int64_t>(ensemble.prompts.size()), proj.dim(1)});
    for (std::int64_t p = 0; p < norm.dim(0); ++p)
      for (std::int64_t j = 0; j < norm.dim(1); ++j) protos.at(static_cast<std::int64_t>(cls), j) += norm.at(p, j);
    const double n = l2_norm(&protos.v[static_cast<std::size_t>(static_cast<std::int64_t>(cls) * protos.dim(1))],
                             protos.dim(1));
    require(n > 1e-12, "degenerate class prototype");
    for (std::int64_t j = 0; j < protos.dim(1); ++j) protos.at(static_cast<std::int64_t>(cls), j) /= n;
  }
  return protos;
}

inline ZeroShotResult zero_shot(const NDArray& recording_emb, const std::vector<int>& labels,
                                const PromptEnsemble& ensemble, const encoders::TextEncoder& text_enc,
                                const std::function<NDArray(const NDArray&)>& project_text,
                                const std::vector<int>* skip_prompt = nullptr) {
  NDArray protos = class_prototypes(ensemble, text_enc, project_text, skip_prompt);
  require(protos.dim(1) == recording_emb.dim(1),
          "zero_shot: projector output does not match the recording embeddings");
  NDArray rec = l2_normalize_rows(recording_emb);
  const std::int64_t n = rec.dim(0);
  const std::int64_t K = protos.dim(0);
  ZeroShotResult out;
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    double best_sim = -2.0;
    std::vector<double> sims(static_cast<std::size_t>(K));
    for (std::int64_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::int64_t j = 0; j < rec.dim(1); ++j) s += rec.at(i, j) * protos.at(k, j);
      sims[static_cast<std::size_t>(k)] = s;
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(k);
      }
    }
    out.predictions.push_back(best);
    if (K == 2) out.scores.push_back(sims[1] - sims[0]);
  }
  if (!labels.empty()) {
    out.balanced_accuracy = metrics::balanced_accuracy(labels, out.predictions);
    out.f1 = metrics::f1_score(labels, out.predictions);
    if (K == 2) out.auroc = metrics::auroc(labels, out.scores);
  }
  return out;
}

// Leave-one-prompt-out sensitivity: one result per dropped prompt.
inline std::vector<std::pair<std::string, ZeroShotResult>> zero_shot_leave_one_out(
    const NDArray& recording_emb, const std::vector<int>& labels, const PromptEnsemble& ensemble,
    const encoders::TextEncoder& text_enc, const std::function<NDArray(const NDArray&)>& project_text) {
  std::vector<std::pair<std::string, ZeroShotResult>> out;
  for (std::size_t cls = 0; cls < ensemble.prompts.size(); ++cls)
    for (std::size_t p = 0; p < ensemble.prompts[cls].size(); ++p) {
      std::vector<int> skip = {static_cast<int>(cls), static_cast<int>(p)};
      out.emplace_back(ensemble.prompts[cls][p],
                       zero_shot(recording_emb, labels, ensemble, text_enc, project_text, &skip));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeGrid {
  std::vector<double> l2_strengths;
  int folds = 10;

  // 45 logarithmically spaced strengths between 1e-6 and 1e5.
  static ProbeGrid default_grid() {
    ProbeGrid g;
    for (int i = 0; i < 45; ++i)
      g.l2_strengths.push_back(std::pow(10.0, -6.0 + 11.0 * static_cast<double>(i) / 44.0));
    return g;
  }

  void validate() const {
    require(!l2_strengths.empty(), "probe grid is empty");
    for (std::size_t i = 1; i < l2_strengths.size(); ++i)
      require(l2_strengths[i] > l2_strengths[i - 1], "probe grid must be strictly increasing");
  }
};

struct ProbeResult {
  double balanced_accuracy = 0.0;
  double auroc = 0.0;
};

namespace detail {

inline NDArray rows_of(const NDArray& x, const std::vector<std::int64_t>& idx) {
  NDArray out({static_cast<std::int64_t>(idx.size()), x.dim(1)});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::int64_t j = 0; j < x.dim(1); ++j) out.at(static_cast<std::int64_t>(i), j) = x.at(idx[i], j);
  return out;
}

// Stratified subsample: per class, max(1, round(fraction * count)) items.
inline std::vector<std::int64_t> stratified_subsample(const std::vector<std::int64_t>& idx,
                                                      const std::vector<int>& labels, double fraction,
                                                      Rng& rng) {
  std::map<int, std::vector<std::int64_t>> by_class;
  for (auto i : idx) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<std::int64_t> out;
  for (auto& [cls, members] : by_class) {
    const std::int64_t keep = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(members.size()))));
    auto pick = rng.sample_without_replacement(static_cast<std::int64_t>(members.size()),
                                               std::min<std::int64_t>(keep, static_cast<std::int64_t>(members.size())));
    for (auto p : pick) out.push_back(members[static_cast<std::size_t>(p)]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Stratified k-fold probe with per-fold grid search on a validation split,
// metrics averaged over folds.
inline ProbeResult linear_probe(const NDArray& emb, const std::vector<int>& labels, const ProbeGrid& grid,
                                double label_fraction, Rng& rng) {
  grid.validate();
  require(emb.dim(0) == static_cast<std::int64_t>(labels.size()), "linear_probe: label count mismatch");
  int n_classes = 0;
  for (auto l : labels) n_classes = std::max(n_classes, l + 1);
  require(n_classes >= 2, "linear_probe: need at least two classes");

  auto folds = metrics::stratified_folds(labels, grid.folds);
  double sum_bacc = 0.0, sum_auroc = 0.0;
  int n_bacc = 0, n_auroc = 0;
  // Pooled fallback for eval sets so small that single folds lack a class.
  std::vector<int> pooled_truth, pooled_pred;
  std::vector<double> pooled_score;

  for (int f = 0; f < grid.folds; ++f) {
    std::vector<std::int64_t> train_idx, test_idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (folds[i] == f ? test_idx : train_idx).push_back(static_cast<std::int64_t>(i));
    if (test_idx.empty() || train_idx.empty()) continue;

    auto sub = detail::stratified_subsample(train_idx, labels, label_fraction, rng);
    // Classes present after subsampling (guaranteed >= 1 per class by construction).
    std::map<int, std::vector<std::int64_t>> by_class;
    for (auto i : sub) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
    if (static_cast<int>(by_class.size()) < 2) continue;

    // Inner validation split: one fifth per class when a class can spare one.
    std::vector<std::int64_t> fit_idx, val_idx;
    for (auto& [cls, members] : by_class) {
      std::int64_t n_val = members.size() >= 2 ? std::max<std::int64_t>(1, static_cast<std::int64_t>(members.size() / 5)) : 0;
      for (std::size_t i = 0; i < members.size(); ++i)
        (static_cast<std::int64_t>(i) < n_val ? val_idx : fit_idx).push_back(members[i]);
    }
    const bool has_val = !val_idx.empty() && fit_idx.size() >= 2;
    if (!has_val) {
      fit_idx = sub;
      val_idx.clear();
    }
    auto labels_of = [&](const std::vector<std::int64_t>& idx) {
      std::vector<int> out;
      out.reserve(idx.size());
      for (auto i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
      return out;
    };
    NDArray x_fit = detail::rows_of(emb, fit_idx);
    auto y_fit = labels_of(fit_idx);
    // A fit set can lose a class to the validation split at tiny fractions;
    // fall back to fitting on the whole subsample in that case.
    {
      std::set<int> present(y_fit.begin(), y_fit.end());
      if (static_cast<int>(present.size()) < 2) {
        fit_idx = sub;
        val_idx.clear();
        x_fit = detail::rows_of(emb, fit_idx);
        y_fit = labels_of(fit_idx);
      }
    }

    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t gi = 0; gi < grid.l2_strengths.size(); ++gi) {
      auto model = metrics::fit_logistic(x_fit, y_fit, n_classes, grid.l2_strengths[gi]);
      double score;
      if (!val_idx.empty()) {
        auto pred = model.predict(detail::rows_of(emb, val_idx));
        score = metrics::balanced_accuracy(labels_of(val_idx), pred);
      } else {
        auto pred = model.predict(x_fit);
        score = metrics::balanced_accuracy(y_fit, pred);
      }
      if (score > best_score) {
        best_score = score;
        best = gi;
      }
    }
    auto final_model = metrics::fit_logistic(detail::rows_of(emb, sub), labels_of(sub), n_classes,
                                             grid.l2_strengths[best]);
    NDArray x_test = detail::rows_of(emb, test_idx);
    auto y_test = labels_of(test_idx);
    auto pred = final_model.predict(x_test);
    {
      auto dec_all = final_model.decision(x_test);
      for (std::size_t i = 0; i < y_test.size(); ++i) {
        pooled_truth.push_back(y_test[i]);
        pooled_pred.push_back(pred[i]);
        if (n_classes == 2) pooled_score.push_back(dec_all[i]);
      }
      std::set<int> present(y_test.begin(), y_test.end());
      if (present.size() >= 2) {
        sum_bacc += metrics::balanced_accuracy(y_test, pred);
        ++n_bacc;
        if (n_classes == 2) {
          sum_auroc += metrics::auroc(y_test, final_model.decision(x_test));
          ++n_auroc;
        } else {
          // macro one-vs-rest over the per-class logits
          auto dec = final_model.decision(x_test);
          double macro = 0.0;
          int seen = 0;
          for (int k = 0; k < n_classes; ++k) {
            std::vector<int> bin;
            std::vector<double> sc;
            for (std::size_t i = 0; i < y_test.size(); ++i) {
              bin.push_back(y_test[i] == k ? 1 : 0);
              sc.push_back(dec[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(k)]);
            }
            std::set<int> pres(bin.begin(), bin.end());
            if (pres.size() == 2) {
              macro += metrics::auroc(bin, sc);
              ++seen;
            }
          }
          if (seen > 0) {
            sum_auroc += macro / static_cast<double>(seen);
            ++n_auroc;
          }
        }
      }
    }
  }
  ProbeResult out;
  if (n_bacc > 0) {
    out.balanced_accuracy = sum_bacc / static_cast<double>(n_bacc);
    out.auroc = n_auroc > 0 ? sum_auroc / static_cast<double>(n_auroc) : 0.5;
  } else {
    require(!pooled_truth.empty(), "linear_probe: no fold produced a usable test split");
    out.balanced_accuracy = metrics::balanced_accuracy(pooled_truth, pooled_pred);
    std::set<int> present(pooled_truth.begin(), pooled_truth.end());
    out.auroc = (n_classes == 2 && present.size() == 2) ? metrics::auroc(pooled_truth, pooled_score) : 0.5;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Within/between-subject similarity
// ---------------------------------------------------------------------------

// Mean within-subject cosine over mean between-subject cosine, all pairs.
inline double ws_bs_ratio(const NDArray& emb, const std::vector<std::string>& subjects) {
  require(emb.dim(0) == static_cast<std::int64_t>(subjects.size()), "ws_bs_ratio: size mismatch");
  NDArray x = l2_normalize_rows(emb);
  double ws = 0.0, bs = 0.0;
  std::int64_t n_ws = 0, n_bs = 0;
  const std::int64_t n = x.dim(0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < x.dim(1); ++k) s += x.at(i, k) * x.at(j, k);
      if (subjects[static_cast<std::size_t>(i)] == subjects[static_cast<std::size_t>(j)]) {
        ws += s;
        ++n_ws;
      } else {
        bs += s;
        ++n_bs;
      }
    }
  require(n_ws > 0 && n_bs > 0, "ws_bs_ratio: need both within- and between-subject pairs");
  return (ws / static_cast<double>(n_ws)) / (bs / static_cast<double>(n_bs));
}

// ---------------------------------------------------------------------------
// Alignment trace
// ---------------------------------------------------------------------------

struct AlignTrace {
  std::vector<double> similarity;  // per crop, temporal order
  std::int64_t argmax = 0;
  std::int64_t argmin = 0;
};

// Cosine of each projected crop embedding against the projected snippet
// embedding, in temporal order.
inline AlignTrace align_trace(const std::vector<const NDArray*>& crops, const std::string& snippet,
                              train::PretrainModel& model, const encoders::TextEncoder& text_enc) {
  require(!trim(snippet).empty(), "align_trace: empty snippet");
  require(!crops.empty(), "align_trace: no crops");
  NDArray h = model.embed_crops(crops);
  NDArray e = l2_normalize_rows(model.project_eeg(h));
  NDArray raw({1, encoders::kTextDim});
  NDArray v = text_enc.embed(snippet);
  for (std::int64_t j = 0; j < encoders::kTextDim; ++j) raw.at(0, j) = v[j];
  NDArray l = l2_normalize_rows(model.project_text(raw));
  AlignTrace out;
  for (std::int64_t i = 0; i < e.dim(0); ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < e.dim(1); ++j) s += e.at(i, j) * l.at(0, j);
    out.similarity.push_back(s);
    if (s > out.similarity[static_cast<std::size_t>(out.argmax)]) out.argmax = i;
    if (s < out.similarity[static_cast<std::size_t>(out.argmin)]) out.argmin = i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervised reference
// ---------------------------------------------------------------------------

struct SupervisedResult {
  double balanced_accuracy = 0.0;
  double auroc = 0.0;
  double best_weight_decay = 0.0;
};

namespace detail {

struct SupervisedNet {
  std::unique_ptr<encoders::EegEncoder> encoder;
  std::unique_ptr<nn::Linear> fc1;
  std::unique_ptr<nn::Linear> fc2;
  nn::Relu relu;
  nn::Dropout dropout{0.5};

  SupervisedNet(const encoders::EncoderSpec& spec, int n_classes, Rng& rng) {
    encoder = std::make_unique<encoders::EegEncoder>(spec, rng);
    fc1 = std::make_unique<nn::Linear>("head.fc1", spec.out_dim(), 256, rng);
    fc2 = std::make_unique<nn::Linear>("head.fc2", 256, n_classes, rng);
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    encoder->collect(out);
    fc1->collect(out);
    fc2->collect(out);
    return out;
  }

  NDArray forward(const NDArray& x, bool train, Rng& rng) {
    NDArray h = encoder->forward(x, train);
    h = fc1->forward(h, train);
    h = relu.forward(h, train);
    h = dropout.forward(h, train, rng);
    return fc2->forward(h, train);
  }

  void backward(const NDArray& dlogits) {
    NDArray g = fc2->backward(dlogits);
    g = dropout.backward(g);
    g = relu.backward(g);
    g = fc1->backward(g);
    encoder->backward(g);
  }

  std::vector<NDArray> snapshot() {
    std::vector<NDArray> out;
    for (auto* p : params()) out.push_back(p->value);
    for (auto& [n, t] : encoder->buffers()) out.push_back(*t);
    return out;
  }
  void restore(const std::vector<NDArray>& snap) {
    std::size_t i = 0;
    for (auto* p : params()) p->value = snap[i++];
    for (auto& [n, t] : encoder->buffers()) *t = snap[i++];
  }
};

// Mean cross entropy and its gradient from raw logits.
inline double cross_entropy(const NDArray& logits, const std::vector<int>& y, NDArray& dlogits) {
  const std::int64_t n = logits.dim(0), K = logits.dim(1);
  dlogits = NDArray({n, K});
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, logits.at(i, k));
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits.at(i, k) - mx);
    const double lse = mx + std::log(z);
    loss += (lse - logits.at(i, y[static_cast<std::size_t>(i)])) / static_cast<double>(n);
    for (std::int64_t k = 0; k < K; ++k)
      dlogits.at(i, k) = (std::exp(logits.at(i, k) - lse) - (k == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) /
                         static_cast<double>(n);
  }
  return loss;
}

}  // namespace detail

// End-to-end supervised training of the encoder plus a dropout MLP head,
// weight decay selected on the validation split, early stopping after five
// stagnant epochs, then a continued train+val phase until the combined loss
// drops below the best validation loss.
inline SupervisedResult supervised_reference(const train::ExperimentConfig& cfg,
                                             const train::TrainData& train_data,
                                             const train::TrainData& val_data,
                                             const train::TrainData& test_data, int n_classes = 2) {
  struct Item {
    const NDArray* crop;
    int label;
    std::int64_t recording;
  };
  auto collect = [&](const train::TrainData& d, std::int64_t rec_base) {
    std::vector<Item> out;
    for (const auto& s : d.subjects) {
      require(s.label == corpus::Label::Normal || s.label == corpus::Label::Abnormal,
              "supervised_reference: unlabeled subject " + s.subject_id);
      const int y = s.label == corpus::Label::Abnormal ? 1 : 0;
      for (std::size_t c = 0; c < s.crops.size(); ++c)
        out.push_back({s.crops[c], y, rec_base + s.recording_of_crop[c]});
    }
    return out;
  };
  auto train_items = collect(train_data, 0);
  auto val_items = collect(val_data, 0);
  auto test_items = collect(test_data, 0);
  require(!train_items.empty() && !test_items.empty(), "supervised_reference: empty split");

  encoders::EncoderSpec spec;
  spec.in_channels = train_data.channels;
  spec.filters_per_kernel = cfg.filters_per_kernel;
  spec.input_len = cfg.crop_seconds * 100;

  const std::vector<double> wd_grid = {0.1, 0.01, 0.0001};
  const std::int64_t batch = std::min<std::int64_t>(256, static_cast<std::int64_t>(train_items.size()));

  auto epoch_pass = [&](detail::SupervisedNet& net, optim::Adam& adam, std::vector<Item>& items, Rng& rng,
                        bool update) {
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0.0;
    std::int64_t steps = 0;
    for (std::size_t lo = 0; lo + 1 < order.size() || (lo < order.size() && lo == 0); lo += static_cast<std::size_t>(batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(batch));
      if (hi - lo < 2) break;
      NDArray x({static_cast<std::int64_t>(hi - lo), train_data.channels, train_data.crop_len});
      std::vector<int> y;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& it = items[order[i]];
        std::copy(it.crop->v.begin(), it.crop->v.end(),
                  x.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i - lo) * train_data.channels *
                                                            train_data.crop_len));
        y.push_back(it.label);
      }
      NDArray logits = net.forward(x, update, rng);
      NDArray dlogits;
      total += detail::cross_entropy(logits, y, dlogits);
      ++steps;
      if (update) {
        for (auto* p : net.params()) p->grad.zero();
        net.backward(dlogits);
        adam.step();
      }
    }
    return steps > 0 ? total / static_cast<double>(steps) : 0.0;
  };

  auto eval_loss = [&](detail::SupervisedNet& net, std::vector<Item>& items, Rng& rng) {
    if (items.empty()) return 0.0;
    double total = 0.0;
    std::int64_t n = 0;
    for (std::size_t lo = 0; lo < items.size(); lo += 64) {
      const std::size_t hi = std::min(items.size(), lo + 64);
      NDArray x({static_cast<std::int64_t>(hi - lo), train_data.channels, train_data.crop_len});
      std::vector<int> y;
      for (std::size_t i = lo; i < hi; ++i) {
        std::copy(items[i].crop->v.begin(), items[i].crop->v.end(),
                  x.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i - lo) * train_data.channels *
                                                            train_data.crop_len));
        y.push_back(items[i].label);
      }
      NDArray logits = net.forward(x, false, rng);
      NDArray dl;
      total += detail::cross_entropy(logits, y, dl) * static_cast<double>(hi - lo);
      n += static_cast<std::int64_t>(hi - lo);
    }
    return total / static_cast<double>(n);
  };

  double best_wd = wd_grid[0];
  double best_val = 1e300;
  std::vector<NDArray> best_snap;
  for (double wd : wd_grid) {
    Rng rng(cfg.seed + 101);
    detail::SupervisedNet net(spec, n_classes, rng);
    optim::Adam adam(net.params(), 1e-3, wd);
    double wd_best_val = 1e300;
    std::vector<NDArray> wd_snap;
    int stagnant = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      epoch_pass(net, adam, train_items, rng, true);
      const double vl = val_items.empty() ? eval_loss(net, train_items, rng) : eval_loss(net, val_items, rng);
      if (vl < wd_best_val - 1e-9) {
        wd_best_val = vl;
        wd_snap = net.snapshot();
        stagnant = 0;
      } else if (++stagnant >= 5) {
        break;
      }
    }
    if (wd_best_val < best_val) {
      best_val = wd_best_val;
      best_wd = wd;
      best_snap = std::move(wd_snap);
    }
  }

  Rng rng(cfg.seed + 101);
  detail::SupervisedNet net(spec, n_classes, rng);
  if (!best_snap.empty()) net.restore(best_snap);
  // Continued phase on train+val until the combined loss undercuts the best
  // validation loss (bounded).
  if (cfg.epochs > 0 && !val_items.empty()) {
    auto both = train_items;
    both.insert(both.end(), val_items.begin(), val_items.end());
    optim::Adam adam(net.params(), 1e-3, best_wd);
    for (std::int64_t extra = 0; extra < cfg.epochs; ++extra) {
      const double l = epoch_pass(net, adam, both, rng, true);
      if (l < best_val) break;
    }
  }

  // Recording-level prediction: mean class probability over crops.
  std::map<std::int64_t, std::pair<std::vector<double>, int>> by_rec;
  for (std::size_t lo = 0; lo < test_items.size(); lo += 64) {
    const std::size_t hi = std::min(test_items.size(), lo + 64);
    NDArray x({static_cast<std::int64_t>(hi - lo), train_data.channels, train_data.crop_len});
    for (std::size_t i = lo; i < hi; ++i)
      std::copy(test_items[i].crop->v.begin(), test_items[i].crop->v.end(),
                x.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i - lo) * train_data.channels *
                                                          train_data.crop_len));
    NDArray logits = net.forward(x, false, rng);
    for (std::size_t i = lo; i < hi; ++i) {
      auto& slot = by_rec[test_items[i].recording];
      if (slot.first.empty()) slot.first.assign(static_cast<std::size_t>(n_classes), 0.0);
      slot.second = test_items[i].label;
      double mx = logits.at(static_cast<std::int64_t>(i - lo), 0);
      for (int k = 1; k < n_classes; ++k)
        mx = std::max(mx, logits.at(static_cast<std::int64_t>(i - lo), k));
      double z = 0.0;
      for (int k = 0; k < n_classes; ++k) z += std::exp(logits.at(static_cast<std::int64_t>(i - lo), k) - mx);
      for (int k = 0; k < n_classes; ++k)
        slot.first[static_cast<std::size_t>(k)] += std::exp(logits.at(static_cast<std::int64_t>(i - lo), k) - mx) / z;
    }
  }
  std::vector<int> truth, pred;
  std::vector<double> score;
  for (auto& [rec, slot] : by_rec) {
    truth.push_back(slot.second);
    int best = 0;
    for (int k = 1; k < n_classes; ++k)
      if (slot.first[static_cast<std::size_t>(k)] > slot.first[static_cast<std::size_t>(best)]) best = k;
    pred.push_back(best);
    if (n_classes == 2)
      score.push_back(slot.first[1] / (slot.first[0] + slot.first[1]));
  }
  SupervisedResult out;
  out.best_weight_decay = best_wd;
  out.balanced_accuracy = metrics::balanced_accuracy(truth, pred);
  std::set<int> present(truth.begin(), truth.end());
  out.auroc = (n_classes == 2 && present.size() == 2) ? metrics::auroc(truth, score) : 0.5;
  return out;
}

// ---------------------------------------------------------------------------
// Metric records
// ---------------------------------------------------------------------------

// Appends "task, config hash, seed, metric, value" rows.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : path_(path) {}

  void append(const std::string& task, std::uint64_t config_hash, std::uint64_t seed,
              const std::string& metric, double value) {
    const bool fresh = !std::filesystem::exists(path_);
    std::ofstream os(path_, std::ios::app);
    if (!os) throw RuntimeError("cannot write metrics file " + path_);
    if (fresh) os << "task\tconfig_hash\tseed\tmetric\tvalue\n";
    os << task << '\t' << std::hex << config_hash << std::dec << '\t' << seed << '\t' << metric << '\t'
       << std::setprecision(17) << value << "\n";
  }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Embedding helpers over loaded recordings
// ---------------------------------------------------------------------------

struct RecordingEmbeddings {
  NDArray eeg;                   // [n_recordings x d], aggregated and normalized
  NDArray text;                  // [n_recordings x d] for recordings with reports (rows align with eeg)
  std::vector<std::uint8_t> has_text;
  std::vector<int> labels;       // -1 when unlabeled
  std::vector<std::string> subject_ids;
};

// One aggregated EEG (and, when present, report) embedding per recording in
// the shared latent space.
inline RecordingEmbeddings embed_recordings(train::PretrainModel& model,
                                            const encoders::TextEncoder& text_enc,
                                            const std::vector<train::RecordingData>& recs,
                                            const std::set<textseg::Cluster>& clusters,
                                            textseg::Granularity granularity) {
  RecordingEmbeddings out;
  std::vector<const NDArray*> all_crops;
  std::vector<std::int64_t> group;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    for (const auto& c : recs[r].crops) {
      all_crops.push_back(&c);
      group.push_back(static_cast<std::int64_t>(r));
    }
    out.labels.push_back(recs[r].label == corpus::Label::Abnormal
                             ? 1
                             : (recs[r].label == corpus::Label::Normal ? 0 : -1));
    out.subject_ids.push_back(recs[r].subject_id);
  }
  NDArray h = model.embed_crops(all_crops);
  NDArray e = model.project_eeg(h);
  NDArray en = l2_normalize_rows(e);
  out.eeg = aggregate(en, group, static_cast<std::int64_t>(recs.size())).vectors;

  out.has_text.assign(recs.size(), 0);
  out.text = NDArray({static_cast<std::int64_t>(recs.size()), e.dim(1)});
  for (std::size_t r = 0; r < recs.size(); ++r) {
    if (!recs[r].has_report) continue;
    auto units = textseg::eligible_units(recs[r].report, clusters, granularity);
    if (units.empty()) continue;
    NDArray raw({static_cast<std::int64_t>(units.size()), encoders::kTextDim});
    for (std::size_t u = 0; u < units.size(); ++u) {
      NDArray v = text_enc.embed(units[u]);
      for (std::int64_t j = 0; j < encoders::kTextDim; ++j) raw.at(static_cast<std::int64_t>(u), j) = v[j];
    }
    NDArray proj = l2_normalize_rows(model.project_text(raw));
    std::vector<std::int64_t> g(units.size(), 0);
    NDArray agg = aggregate(proj, g, 1).vectors;
    for (std::int64_t j = 0; j < agg.dim(1); ++j) out.text.at(static_cast<std::int64_t>(r), j) = agg.at(0, j);
    out.has_text[r] = 1;
  }
  return out;
}

}  // namespace elmkit::eval
