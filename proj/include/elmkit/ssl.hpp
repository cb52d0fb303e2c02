#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/eegprep.hpp"
#include "elmkit/losses.hpp"
#include "elmkit/nn.hpp"
#include "elmkit/rng.hpp"
#include "elmkit/tensor.hpp"

// EEG-only self-supervised objectives and the augmentation suite they share.

namespace elmkit::ssl {

// ---------------------------------------------------------------------------
// Augmentations
// ---------------------------------------------------------------------------

// One uniform draw per crop; the same parameters apply to every channel.
struct AugmentationParams {
  double amplitude_scale = 1.0;   // [0.5, 1.5]
  std::int64_t time_shift = 0;    // [-60, 60] samples, circular
  double dc_shift_uv = 0.0;       // [-10, 10]
  std::int64_t zero_mask_len = 0; // [0, 200] samples
  std::int64_t zero_mask_start = 0;
  double gaussian_sigma = 0.0;    // [0, 0.2]
  bool bandstop_enabled = false;
  double bandstop_center_hz = 10.0;  // [2.8, 47], 5 Hz stop width
};

inline AugmentationParams draw_augmentation(std::int64_t crop_len, Rng& rng) {
  AugmentationParams p;
  p.amplitude_scale = rng.uniform(0.5, 1.5);
  p.time_shift = rng.uniform_int(-60, 60);
  p.dc_shift_uv = rng.uniform(-10.0, 10.0);
  p.zero_mask_len = rng.uniform_int(0, 200);
  p.zero_mask_start = p.zero_mask_len > 0 ? rng.uniform_int(0, std::max<std::int64_t>(0, crop_len - p.zero_mask_len)) : 0;
  p.gaussian_sigma = rng.uniform(0.0, 0.2);
  p.bandstop_enabled = true;
  p.bandstop_center_hz = rng.uniform(2.8, 47.0);
  return p;
}

namespace detail {

// RBJ-style second-order notch, direct form II transposed, causal.
struct BiquadNotch {
  double b0, b1, b2, a1, a2;

  BiquadNotch(double f0_hz, double bw_hz, double fs) {
    const double w0 = 2.0 * M_PI * f0_hz / fs;
    const double q = f0_hz / bw_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0 = 1.0 / a0;
    b1 = -2.0 * std::cos(w0) / a0;
    b2 = 1.0 / a0;
    a1 = -2.0 * std::cos(w0) / a0;
    a2 = (1.0 - alpha) / a0;
  }

  void apply(double* x, std::int64_t n) const {
    double s1 = 0.0, s2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double in = x[i];
      const double out = b0 * in + s1;
      s1 = b1 * in - a1 * out + s2;
      s2 = b2 * in - a2 * out;
      x[i] = out;
    }
  }
};

}  // namespace detail

// A cascade of second-order notches spanning the 5 Hz stop band.
inline void bandstop_inplace(NDArray& data, double center_hz, double fs = eegprep::kTargetRateHz) {
  for (int k = -2; k <= 2; ++k) {
    const double f0 = center_hz + static_cast<double>(k);
    if (f0 <= 0.1 || f0 >= fs / 2.0 - 0.1) continue;
    detail::BiquadNotch notch(f0, 1.2, fs);
    for (std::int64_t c = 0; c < data.dim(0); ++c)
      notch.apply(&data.v[static_cast<std::size_t>(c * data.dim(1))], data.dim(1));
  }
}

// Applies the six transforms; output shape equals input shape; the +-800 uV
// clip is re-applied last.
inline eegprep::Crop augment(const eegprep::Crop& crop, const AugmentationParams& p, Rng& rng) {
  const std::int64_t C = crop.data.dim(0), L = crop.data.dim(1);
  eegprep::Crop out = crop;

  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t t = 0; t < L; ++t) out.data.at(c, t) = crop.data.at(c, t) * p.amplitude_scale;
  }
  if (p.time_shift != 0) {
    NDArray shifted({C, L});
    const std::int64_t s = ((p.time_shift % L) + L) % L;
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < L; ++t) shifted.at(c, (t + s) % L) = out.data.at(c, t);
    out.data = std::move(shifted);
  }
  if (p.dc_shift_uv != 0.0)
    for (auto& v : out.data.v) v += p.dc_shift_uv;
  if (p.zero_mask_len > 0) {
    const std::int64_t start = std::min(p.zero_mask_start, std::max<std::int64_t>(0, L - p.zero_mask_len));
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = start; t < std::min(L, start + p.zero_mask_len); ++t) out.data.at(c, t) = 0.0;
  }
  if (p.gaussian_sigma > 0.0)
    for (auto& v : out.data.v) v += rng.normal(0.0, p.gaussian_sigma);
  if (p.bandstop_enabled) bandstop_inplace(out.data, p.bandstop_center_hz);
  eegprep::clip_inplace(out.data);
  return out;
}

inline eegprep::Crop augment(const eegprep::Crop& crop, Rng& rng) {
  auto p = draw_augmentation(crop.data.dim(1), rng);
  return augment(crop, p, rng);
}

// ---------------------------------------------------------------------------
// BYOL
// ---------------------------------------------------------------------------

struct ByolResult {
  double value = 0.0;
  NDArray d_online;  // gradient w.r.t. the online predictions; target is grad-free
};

// Mean squared distance of the L2-normalized vectors, 2 - 2 cos per row.
inline ByolResult byol_loss(const NDArray& online_pred, const NDArray& target_proj) {
  require(online_pred.same_shape(target_proj), "byol_loss: shape mismatch");
  const std::int64_t B = online_pred.dim(0), D = online_pred.dim(1);
  NDArray p = l2_normalize_rows(online_pred);
  NDArray z = l2_normalize_rows(target_proj);
  ByolResult out;
  NDArray dp({B, D});
  for (std::int64_t i = 0; i < B; ++i) {
    double c = 0.0;
    for (std::int64_t j = 0; j < D; ++j) c += p.at(i, j) * z.at(i, j);
    out.value += 2.0 - 2.0 * c;
    for (std::int64_t j = 0; j < D; ++j) dp.at(i, j) = -2.0 * z.at(i, j) / static_cast<double>(B);
  }
  out.value /= static_cast<double>(B);
  out.d_online = losses::detail::normalize_rows_backward(online_pred, dp);
  return out;
}

// ---------------------------------------------------------------------------
// VICReg
// ---------------------------------------------------------------------------

struct VicregWeights {
  double invariance = 25.0;
  double variance = 25.0;
  double covariance = 1.0;
};

struct VicregResult {
  double value = 0.0;
  double invariance = 0.0, variance = 0.0, covariance = 0.0;
  NDArray d_z1, d_z2;
};

inline VicregResult vicreg_loss(const NDArray& z1, const NDArray& z2,
                                const VicregWeights& w = VicregWeights{}) {
  require(z1.same_shape(z2), "vicreg_loss: shape mismatch");
  const std::int64_t B = z1.dim(0), D = z1.dim(1);
  require(B >= 2, "vicreg_loss: batch size must be >= 2");
  VicregResult out;
  out.d_z1 = NDArray({B, D});
  out.d_z2 = NDArray({B, D});

  // Invariance: mean squared distance.
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t j = 0; j < D; ++j) {
      const double d = z1.at(i, j) - z2.at(i, j);
      out.invariance += d * d / static_cast<double>(B);
      out.d_z1.at(i, j) += w.invariance * 2.0 * d / static_cast<double>(B);
      out.d_z2.at(i, j) -= w.invariance * 2.0 * d / static_cast<double>(B);
    }

  // Variance hinge and covariance penalty, per branch.
  auto branch = [&](const NDArray& z, NDArray& dz) {
    constexpr double kEps = 1e-4;
    constexpr double kGamma = 1.0;
    std::vector<double> mu(static_cast<std::size_t>(D), 0.0);
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < D; ++j) mu[static_cast<std::size_t>(j)] += z.at(i, j) / static_cast<double>(B);
    NDArray centered({B, D});
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < D; ++j) centered.at(i, j) = z.at(i, j) - mu[static_cast<std::size_t>(j)];

    double var_term = 0.0;
    for (std::int64_t j = 0; j < D; ++j) {
      double var = 0.0;
      for (std::int64_t i = 0; i < B; ++i) var += centered.at(i, j) * centered.at(i, j);
      var /= static_cast<double>(B - 1);
      const double sd = std::sqrt(var + kEps);
      if (sd < kGamma) {
        var_term += (kGamma - sd) / static_cast<double>(D);
        const double g = -w.variance / (static_cast<double>(D) * sd * static_cast<double>(B - 1));
        for (std::int64_t i = 0; i < B; ++i) {
          // d sd / d z_ij = centered_ij / ((B-1) sd); mean term cancels within the column
          dz.at(i, j) += g * centered.at(i, j);
        }
      }
    }

    NDArray cov({D, D});
    cov.mat().noalias() = centered.mat().transpose() * centered.mat() / static_cast<double>(B - 1);
    double cov_term = 0.0;
    NDArray dcov({D, D});
    for (std::int64_t i = 0; i < D; ++i)
      for (std::int64_t j = 0; j < D; ++j) {
        if (i == j) continue;
        cov_term += cov.at(i, j) * cov.at(i, j) / static_cast<double>(D);
        dcov.at(i, j) = 2.0 * cov.at(i, j) / static_cast<double>(D);
      }
    // dC is symmetric, so Z(dC + dC^T) = 2 Z dC.
    NDArray dcent({B, D});
    dcent.mat().noalias() = centered.mat() * dcov.mat() * (2.0 * w.covariance / static_cast<double>(B - 1));
    std::vector<double> colmean(static_cast<std::size_t>(D), 0.0);
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < D; ++j) colmean[static_cast<std::size_t>(j)] += dcent.at(i, j) / static_cast<double>(B);
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < D; ++j) dz.at(i, j) += dcent.at(i, j) - colmean[static_cast<std::size_t>(j)];
    return std::pair<double, double>(var_term, cov_term);
  };
  auto [v1, c1] = branch(z1, out.d_z1);
  auto [v2, c2] = branch(z2, out.d_z2);
  out.variance = v1 + v2;
  out.covariance = c1 + c2;
  out.value = w.invariance * out.invariance + w.variance * out.variance + w.covariance * out.covariance;
  return out;
}

// ---------------------------------------------------------------------------
// ContraWR
// ---------------------------------------------------------------------------

struct ContrawrResult {
  double value = 0.0;
  NDArray d_z1, d_z2;
};

// Triplet-style InfoNCE: each anchor's positive is its second view, the
// negative is the averaged "world" of the other batch elements.
inline ContrawrResult contrawr_loss(const NDArray& z1, const NDArray& z2, double tau) {
  require(z1.same_shape(z2), "contrawr_loss: shape mismatch");
  const std::int64_t B = z1.dim(0), D = z1.dim(1);
  require(B >= 2, "contrawr_loss: batch size must be >= 2");
  NDArray a = l2_normalize_rows(z1);
  NDArray b = l2_normalize_rows(z2);
  ContrawrResult out;
  NDArray da({B, D}), db({B, D});

  // Row sums of b to form leave-one-out worlds.
  std::vector<double> sum_b(static_cast<std::size_t>(D), 0.0);
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t j = 0; j < D; ++j) sum_b[static_cast<std::size_t>(j)] += b.at(i, j);

  for (std::int64_t i = 0; i < B; ++i) {
    std::vector<double> w(static_cast<std::size_t>(D));
    for (std::int64_t j = 0; j < D; ++j)
      w[static_cast<std::size_t>(j)] = (sum_b[static_cast<std::size_t>(j)] - b.at(i, j)) / static_cast<double>(B - 1);
    const double wn = l2_norm(w.data(), D);
    require(wn > 1e-12, "contrawr_loss: degenerate world representation");
    double s_pos = 0.0, s_w = 0.0;
    for (std::int64_t j = 0; j < D; ++j) {
      s_pos += a.at(i, j) * b.at(i, j);
      s_w += a.at(i, j) * w[static_cast<std::size_t>(j)] / wn;
    }
    const double t = (s_w - s_pos) / tau;
    // softplus(t) = -log sigmoid(-t)
    out.value += (t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) / static_cast<double>(B);
    const double sig = 1.0 / (1.0 + std::exp(-t));
    const double g = sig / (tau * static_cast<double>(B));

    // d s_pos terms
    for (std::int64_t j = 0; j < D; ++j) {
      da.at(i, j) += -g * b.at(i, j);
      db.at(i, j) += -g * a.at(i, j);
    }
    // d s_w terms: s_w = a_i . w_hat, w = (sum_b - b_i)/(B-1)
    for (std::int64_t j = 0; j < D; ++j) da.at(i, j) += g * w[static_cast<std::size_t>(j)] / wn;
    // d s_w / d w = (a_i - s_w w_hat)/||w||
    for (std::int64_t j = 0; j < D; ++j) {
      const double dw = g * (a.at(i, j) - s_w * w[static_cast<std::size_t>(j)] / wn) / wn;
      // w depends on every b_k with k != i
      const double per = dw / static_cast<double>(B - 1);
      for (std::int64_t k = 0; k < B; ++k)
        if (k != i) db.at(k, j) += per;
    }
  }
  out.d_z1 = losses::detail::normalize_rows_backward(z1, da);
  out.d_z2 = losses::detail::normalize_rows_backward(z2, db);
  return out;
}

// ---------------------------------------------------------------------------
// Relative positioning / temporal shuffling
// ---------------------------------------------------------------------------

struct PairLossResult {
  double value = 0.0;
  NDArray d_a, d_b, d_c;  // d_c used by the triplet variant only
};

namespace detail {

inline double bce_with_logit(double logit, double label, double& dlogit) {
  // -label*log(sig) - (1-label)*log(1-sig), stable form
  const double sig = 1.0 / (1.0 + std::exp(-logit));
  dlogit = sig - label;
  if (logit >= 0) return std::log1p(std::exp(-logit)) + (1.0 - label) * logit;
  return std::log1p(std::exp(logit)) - label * logit;
}

}  // namespace detail

// Logistic head on the element-wise absolute difference of the two
// representations; binary logistic loss, label 1 = temporally close.
inline PairLossResult rp_loss(const NDArray& h_a, const NDArray& h_b, const std::vector<double>& labels,
                              nn::Linear& head) {
  require(h_a.same_shape(h_b), "rp_loss: shape mismatch");
  const std::int64_t B = h_a.dim(0), D = h_a.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == B, "rp_loss: label count mismatch");
  NDArray feat({B, D});
  for (std::size_t i = 0; i < feat.v.size(); ++i) feat.v[i] = std::abs(h_a.v[i] - h_b.v[i]);
  NDArray logits = head.forward(feat, true);
  PairLossResult out;
  NDArray dlogits({B, 1});
  for (std::int64_t i = 0; i < B; ++i) {
    double dl = 0.0;
    out.value += detail::bce_with_logit(logits.at(i, 0), labels[static_cast<std::size_t>(i)], dl) /
                 static_cast<double>(B);
    dlogits.at(i, 0) = dl / static_cast<double>(B);
  }
  NDArray dfeat = head.backward(dlogits);
  out.d_a = NDArray({B, D});
  out.d_b = NDArray({B, D});
  for (std::size_t i = 0; i < dfeat.v.size(); ++i) {
    const double diff = h_a.v[i] - h_b.v[i];
    const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    out.d_a.v[i] = dfeat.v[i] * sgn;
    out.d_b.v[i] = -dfeat.v[i] * sgn;
  }
  return out;
}

// Triplet variant: concatenated absolute differences, label 1 = in temporal order.
inline PairLossResult ts_loss(const NDArray& h_a, const NDArray& h_b, const NDArray& h_c,
                              const std::vector<double>& labels, nn::Linear& head) {
  require(h_a.same_shape(h_b) && h_b.same_shape(h_c), "ts_loss: shape mismatch");
  const std::int64_t B = h_a.dim(0), D = h_a.dim(1);
  NDArray feat({B, 2 * D});
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t j = 0; j < D; ++j) {
      feat.at(i, j) = std::abs(h_a.at(i, j) - h_b.at(i, j));
      feat.at(i, D + j) = std::abs(h_b.at(i, j) - h_c.at(i, j));
    }
  NDArray logits = head.forward(feat, true);
  PairLossResult out;
  NDArray dlogits({B, 1});
  for (std::int64_t i = 0; i < B; ++i) {
    double dl = 0.0;
    out.value += detail::bce_with_logit(logits.at(i, 0), labels[static_cast<std::size_t>(i)], dl) /
                 static_cast<double>(B);
    dlogits.at(i, 0) = dl / static_cast<double>(B);
  }
  NDArray dfeat = head.backward(dlogits);
  out.d_a = NDArray({B, D});
  out.d_b = NDArray({B, D});
  out.d_c = NDArray({B, D});
  auto sgn = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t j = 0; j < D; ++j) {
      const double s1 = sgn(h_a.at(i, j) - h_b.at(i, j));
      const double s2 = sgn(h_b.at(i, j) - h_c.at(i, j));
      out.d_a.at(i, j) = dfeat.at(i, j) * s1;
      out.d_b.at(i, j) = -dfeat.at(i, j) * s1 + dfeat.at(i, D + j) * s2;
      out.d_c.at(i, j) = -dfeat.at(i, D + j) * s2;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive predictive coding
// ---------------------------------------------------------------------------

// Single-layer gated recurrent summarizer over a sequence of crop embeddings.
class GruCell : public nn::Module {
 public:
  GruCell(std::string name, std::int64_t in, std::int64_t hidden, Rng& rng)
      : in_(in), hidden_(hidden),
        w_r_(name + ".w_r", {hidden, in}), w_z_(name + ".w_z", {hidden, in}), w_n_(name + ".w_n", {hidden, in}),
        u_r_(name + ".u_r", {hidden, hidden}), u_z_(name + ".u_z", {hidden, hidden}), u_n_(name + ".u_n", {hidden, hidden}),
        b_r_(name + ".b_r", {hidden}, true), b_z_(name + ".b_z", {hidden}, true), b_n_(name + ".b_n", {hidden}, true) {
    for (auto* w : {&w_r_, &w_z_, &w_n_}) nn::init_uniform(w->value, in, rng);
    for (auto* u : {&u_r_, &u_z_, &u_n_}) nn::init_uniform(u->value, hidden, rng);
    for (auto* b : {&b_r_, &b_z_, &b_n_}) nn::init_uniform(b->value, hidden, rng);
  }

  std::int64_t hidden_dim() const { return hidden_; }

  // seq [T x in] -> final hidden state [hidden]; caches for BPTT.
  NDArray forward(const NDArray& seq, bool train) {
    require(seq.ndim() == 2 && seq.dim(1) == in_, "gru: input dim mismatch");
    const std::int64_t T = seq.dim(0);
    require(T >= 1, "gru: empty sequence");
    NDArray h({hidden_});
    if (train) {
      seq_ = seq;
      r_.assign(static_cast<std::size_t>(T), NDArray({hidden_}));
      z_.assign(static_cast<std::size_t>(T), NDArray({hidden_}));
      n_.assign(static_cast<std::size_t>(T), NDArray({hidden_}));
      m_.assign(static_cast<std::size_t>(T), NDArray({hidden_}));
      hs_.assign(static_cast<std::size_t>(T + 1), NDArray({hidden_}));
    }
    for (std::int64_t t = 0; t < T; ++t) {
      NDArray r({hidden_}), z({hidden_}), n({hidden_}), m({hidden_});
      for (std::int64_t i = 0; i < hidden_; ++i) {
        double ar = b_r_.value[i], az = b_z_.value[i], an = b_n_.value[i], mm = 0.0;
        for (std::int64_t j = 0; j < in_; ++j) {
          const double x = seq.at(t, j);
          ar += w_r_.value.at(i, j) * x;
          az += w_z_.value.at(i, j) * x;
          an += w_n_.value.at(i, j) * x;
        }
        for (std::int64_t j = 0; j < hidden_; ++j) {
          ar += u_r_.value.at(i, j) * h[j];
          az += u_z_.value.at(i, j) * h[j];
          mm += u_n_.value.at(i, j) * h[j];
        }
        r[i] = 1.0 / (1.0 + std::exp(-ar));
        z[i] = 1.0 / (1.0 + std::exp(-az));
        m[i] = mm;
        n[i] = std::tanh(an + r[i] * mm);
      }
      NDArray h_new({hidden_});
      for (std::int64_t i = 0; i < hidden_; ++i) h_new[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
      if (train) {
        r_[static_cast<std::size_t>(t)] = r;
        z_[static_cast<std::size_t>(t)] = z;
        n_[static_cast<std::size_t>(t)] = n;
        m_[static_cast<std::size_t>(t)] = m;
        hs_[static_cast<std::size_t>(t)] = h;
      }
      h = std::move(h_new);
    }
    if (train) hs_[static_cast<std::size_t>(T)] = h;
    return h;
  }

  // d(final hidden) -> d(sequence); parameter gradients accumulate.
  NDArray backward(const NDArray& d_final) {
    const std::int64_t T = seq_.dim(0);
    NDArray dseq({T, in_});
    NDArray dh = d_final;
    for (std::int64_t t = T - 1; t >= 0; --t) {
      const auto& r = r_[static_cast<std::size_t>(t)];
      const auto& z = z_[static_cast<std::size_t>(t)];
      const auto& n = n_[static_cast<std::size_t>(t)];
      const auto& m = m_[static_cast<std::size_t>(t)];
      const auto& h_prev = hs_[static_cast<std::size_t>(t)];
      NDArray da_r({hidden_}), da_z({hidden_}), da_n({hidden_}), dm({hidden_});
      NDArray dh_prev({hidden_});
      for (std::int64_t i = 0; i < hidden_; ++i) {
        const double dz = dh[i] * (h_prev[i] - n[i]);
        const double dn = dh[i] * (1.0 - z[i]);
        da_z[i] = dz * z[i] * (1.0 - z[i]);
        da_n[i] = dn * (1.0 - n[i] * n[i]);
        const double dr = da_n[i] * m[i];
        da_r[i] = dr * r[i] * (1.0 - r[i]);
        dm[i] = da_n[i] * r[i];
        dh_prev[i] = dh[i] * z[i];
      }
      for (std::int64_t i = 0; i < hidden_; ++i) {
        b_r_.grad[i] += da_r[i];
        b_z_.grad[i] += da_z[i];
        b_n_.grad[i] += da_n[i];
        for (std::int64_t j = 0; j < in_; ++j) {
          const double x = seq_.at(t, j);
          w_r_.grad.at(i, j) += da_r[i] * x;
          w_z_.grad.at(i, j) += da_z[i] * x;
          w_n_.grad.at(i, j) += da_n[i] * x;
          dseq.at(t, j) += w_r_.value.at(i, j) * da_r[i] + w_z_.value.at(i, j) * da_z[i] +
                           w_n_.value.at(i, j) * da_n[i];
        }
        for (std::int64_t j = 0; j < hidden_; ++j) {
          u_r_.grad.at(i, j) += da_r[i] * h_prev[j];
          u_z_.grad.at(i, j) += da_z[i] * h_prev[j];
          u_n_.grad.at(i, j) += dm[i] * h_prev[j];
          dh_prev[j] += u_r_.value.at(i, j) * da_r[i] + u_z_.value.at(i, j) * da_z[i] +
                        u_n_.value.at(i, j) * dm[i];
        }
      }
      dh = std::move(dh_prev);
    }
    return dseq;
  }

  void collect(std::vector<nn::Param*>& out) override {
    for (auto* p : {&w_r_, &w_z_, &w_n_, &u_r_, &u_z_, &u_n_, &b_r_, &b_z_, &b_n_}) out.push_back(p);
  }

 private:
  std::int64_t in_, hidden_;
  nn::Param w_r_, w_z_, w_n_, u_r_, u_z_, u_n_, b_r_, b_z_, b_n_;
  NDArray seq_;
  std::vector<NDArray> r_, z_, n_, m_, hs_;
};

// Bilinear score banks, one per prediction step.
class CpcHead : public nn::Module {
 public:
  CpcHead(std::string name, std::int64_t in, std::int64_t hidden, std::int64_t steps, Rng& rng)
      : gru_(name + ".gru", in, hidden, rng) {
    for (std::int64_t s = 0; s < steps; ++s) {
      bilinear_.push_back(std::make_unique<nn::Param>(concat(name, ".step", s + 1, ".bilinear"),
                                                      std::vector<std::int64_t>{hidden, in}));
      nn::init_uniform(bilinear_.back()->value, hidden, rng);
    }
  }

  GruCell& gru() { return gru_; }
  std::int64_t steps() const { return static_cast<std::int64_t>(bilinear_.size()); }
  nn::Param& bilinear(std::int64_t s) { return *bilinear_[static_cast<std::size_t>(s)]; }

  void collect(std::vector<nn::Param*>& out) override {
    gru_.collect(out);
    for (auto& p : bilinear_) out.push_back(p.get());
  }

 private:
  GruCell gru_;
  std::vector<std::unique_ptr<nn::Param>> bilinear_;
};

struct CpcResult {
  double value = 0.0;
  NDArray d_context;                 // [T x in]
  NDArray d_future;                  // [K x in]
  std::vector<NDArray> d_negatives;  // one [n_neg x in] per step
};

// InfoNCE over bilinear scores of the summarized context against the true
// future crop and its negatives, summed over prediction steps.
inline CpcResult cpc_loss(CpcHead& head, const NDArray& context_seq, const NDArray& future,
                          const std::vector<NDArray>& negatives) {
  const std::int64_t K = future.dim(0);
  require(K >= 1 && K <= head.steps(), "cpc_loss: future step count exceeds head capacity");
  require(static_cast<std::int64_t>(negatives.size()) == K, "cpc_loss: one negative bank per step required");
  for (const auto& n : negatives) require(n.dim(0) >= 1, "cpc_loss: at least one negative per step");

  NDArray c = head.gru().forward(context_seq, true);
  const std::int64_t H = c.dim(0);
  const std::int64_t D = future.dim(1);

  CpcResult out;
  out.d_future = NDArray({K, D});
  NDArray dc({H});
  for (std::int64_t s = 0; s < K; ++s) {
    auto& W = head.bilinear(s);
    const NDArray& neg = negatives[static_cast<std::size_t>(s)];
    const std::int64_t n_neg = neg.dim(0);
    // Wc = W^T c reused for every candidate at this step.
    std::vector<double> wc(static_cast<std::size_t>(D), 0.0);
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < D; ++j) wc[static_cast<std::size_t>(j)] += W.value.at(i, j) * c[i];
    std::vector<double> scores(static_cast<std::size_t>(n_neg + 1));
    scores[0] = dot(wc.data(), &future.v[static_cast<std::size_t>(s * D)], D);
    for (std::int64_t n = 0; n < n_neg; ++n)
      scores[static_cast<std::size_t>(n + 1)] = dot(wc.data(), &neg.v[static_cast<std::size_t>(n * D)], D);
    const double lse = losses::detail::log_sum_exp(scores);
    out.value += lse - scores[0];

    // Softmax gradient over the candidate set; index 0 is the true future.
    out.d_negatives.push_back(NDArray({n_neg, D}));
    NDArray& dneg = out.d_negatives.back();
    std::vector<double> dwc(static_cast<std::size_t>(D), 0.0);
    for (std::int64_t cand = 0; cand <= n_neg; ++cand) {
      const double p = std::exp(scores[static_cast<std::size_t>(cand)] - lse);
      const double g = p - (cand == 0 ? 1.0 : 0.0);
      const double* f = cand == 0 ? &future.v[static_cast<std::size_t>(s * D)]
                                  : &neg.v[static_cast<std::size_t>((cand - 1) * D)];
      double* df = cand == 0 ? &out.d_future.v[static_cast<std::size_t>(s * D)]
                             : &dneg.v[static_cast<std::size_t>((cand - 1) * D)];
      for (std::int64_t j = 0; j < D; ++j) {
        df[j] += g * wc[static_cast<std::size_t>(j)];
        dwc[static_cast<std::size_t>(j)] += g * f[j];
      }
    }
    // wc = W^T c: push into W and c.
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < D; ++j) {
        W.grad.at(i, j) += c[i] * dwc[static_cast<std::size_t>(j)];
        dc[i] += W.value.at(i, j) * dwc[static_cast<std::size_t>(j)];
      }
  }
  out.d_context = head.gru().backward(dc);
  return out;
}

}  // namespace elmkit::ssl
