#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/tensor.hpp"

// Multimodal alignment objectives: bidirectional InfoNCE over paired crops
// and segments, its multiple-instance extension with per-anchor positive
// sets, the aggregation ablations, and the alignment+orthogonality composite
// used when the text side stays in the language model's native space.
// Every loss ships its analytic gradient with respect to the raw (pre-
// normalization) embeddings.

namespace elmkit::losses {

struct SimilarityMatrix {
  NDArray s;  // [B_e x B_l], cosine of normalized pairs
  std::vector<std::string> row_subjects;  // EEG side
  std::vector<std::string> col_subjects;  // text side
  double tau = 0.3;
};

// S[j,k] = normalized_row_j(E) . normalized_row_k(L).
inline SimilarityMatrix similarity(const NDArray& E, const NDArray& L,
                                   std::vector<std::string> row_subjects = {},
                                   std::vector<std::string> col_subjects = {}, double tau = 0.3) {
  require(E.ndim() == 2 && L.ndim() == 2, "similarity expects matrices");
  require(E.dim(1) == L.dim(1), "similarity: embedding dims differ");
  require(tau > 0.0, "temperature must be positive");
  NDArray en = l2_normalize_rows(E);
  NDArray ln = l2_normalize_rows(L);
  SimilarityMatrix out;
  out.s = NDArray({E.dim(0), L.dim(0)});
  out.s.mat().noalias() = en.mat() * ln.mat().transpose();
  for (auto& v : out.s.v) {
    require(std::abs(v) <= 1.0 + 1e-6, "similarity out of [-1,1] range");
    v = std::clamp(v, -1.0, 1.0);
  }
  out.row_subjects = std::move(row_subjects);
  out.col_subjects = std::move(col_subjects);
  out.tau = tau;
  return out;
}

// Index sets of positives: for text k the crops of the same subject, and for
// crop k the texts of the same subject.
struct PositiveSets {
  std::vector<std::vector<std::int64_t>> pos_eeg_for_text;   // one set per text column
  std::vector<std::vector<std::int64_t>> pos_text_for_crop;  // one set per EEG row

  static PositiveSets from_subjects(const std::vector<std::string>& crop_subjects,
                                    const std::vector<std::string>& text_subjects) {
    PositiveSets p;
    p.pos_eeg_for_text.resize(text_subjects.size());
    p.pos_text_for_crop.resize(crop_subjects.size());
    for (std::size_t k = 0; k < text_subjects.size(); ++k)
      for (std::size_t j = 0; j < crop_subjects.size(); ++j)
        if (crop_subjects[j] == text_subjects[k]) {
          p.pos_eeg_for_text[k].push_back(static_cast<std::int64_t>(j));
          p.pos_text_for_crop[j].push_back(static_cast<std::int64_t>(k));
        }
    return p;
  }

  void validate(std::int64_t n_crops, std::int64_t n_texts) const {
    require(static_cast<std::int64_t>(pos_eeg_for_text.size()) == n_texts,
            "positive sets: text count mismatch");
    require(static_cast<std::int64_t>(pos_text_for_crop.size()) == n_crops,
            "positive sets: crop count mismatch");
    for (std::size_t k = 0; k < pos_eeg_for_text.size(); ++k)
      for (auto j : pos_eeg_for_text[k]) {
        require(j >= 0 && j < n_crops, "positive set index out of range");
        const auto& q = pos_text_for_crop[static_cast<std::size_t>(j)];
        require(std::find(q.begin(), q.end(), static_cast<std::int64_t>(k)) != q.end(),
                "positive sets are not symmetric");
      }
  }
};

enum class MilDirection { EegGivenText, TextGivenEeg, Joint };
enum class MilAggregation { Mean, Max, Attention, Sum };

inline MilAggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return MilAggregation::Mean;
  if (s == "max") return MilAggregation::Max;
  if (s == "attention") return MilAggregation::Attention;
  if (s == "sum") return MilAggregation::Sum;
  fail("unknown aggregation mode '", s, "'");
}

namespace detail {

// log(sum(exp(z))) with max-shift stabilization.
inline double log_sum_exp(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// Chain rule through row-wise L2 normalization: given raw X and the gradient
// with respect to X_hat, produce the gradient with respect to X.
inline NDArray normalize_rows_backward(const NDArray& x, const NDArray& d_xhat) {
  NDArray dx(x.shape);
  const std::int64_t n = x.dim(0), d = x.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = &x.v[static_cast<std::size_t>(i * d)];
    const double* gi = &d_xhat.v[static_cast<std::size_t>(i * d)];
    const double norm = l2_norm(xi, d);
    double proj = 0.0;
    for (std::int64_t j = 0; j < d; ++j) proj += gi[j] * xi[j] / norm;
    for (std::int64_t j = 0; j < d; ++j)
      dx.at(i, j) = (gi[j] - proj * xi[j] / norm) / norm;
  }
  return dx;
}

// Given dLoss/dS, push gradients to the raw embeddings on both sides.
inline void similarity_backward(const NDArray& E, const NDArray& L, const NDArray& dS, NDArray& dE,
                                NDArray& dL) {
  NDArray en = l2_normalize_rows(E);
  NDArray ln = l2_normalize_rows(L);
  NDArray d_en({E.dim(0), E.dim(1)});
  NDArray d_ln({L.dim(0), L.dim(1)});
  d_en.mat().noalias() = dS.mat() * ln.mat();
  d_ln.mat().noalias() = dS.mat().transpose() * en.mat();
  dE = normalize_rows_backward(E, d_en);
  dL = normalize_rows_backward(L, d_ln);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bidirectional InfoNCE (diagonal positives)
// ---------------------------------------------------------------------------

// (1/2B) sum_j of the two directional cross-entropies at the diagonal.
inline double info_nce(const SimilarityMatrix& sim) {
  require(sim.s.dim(0) == sim.s.dim(1), "info_nce requires a square similarity matrix");
  const std::int64_t B = sim.s.dim(0);
  const double tau = sim.tau;
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(B)), col(static_cast<std::size_t>(B));
  for (std::int64_t j = 0; j < B; ++j) {
    for (std::int64_t m = 0; m < B; ++m) {
      row[static_cast<std::size_t>(m)] = sim.s.at(j, m) / tau;
      col[static_cast<std::size_t>(m)] = sim.s.at(m, j) / tau;
    }
    total += detail::log_sum_exp(row) - row[static_cast<std::size_t>(j)];
    total += detail::log_sum_exp(col) - col[static_cast<std::size_t>(j)];
  }
  return total / (2.0 * static_cast<double>(B));
}

struct LossGrad {
  double value = 0.0;
  NDArray d_eeg;   // gradient w.r.t. the raw EEG-side embeddings
  NDArray d_text;  // gradient w.r.t. the raw text-side embeddings
};

inline LossGrad info_nce_grad(const NDArray& E, const NDArray& L, double tau) {
  require(E.dim(0) == L.dim(0), "info_nce requires equal batch sizes");
  auto sim = similarity(E, L, {}, {}, tau);
  const std::int64_t B = sim.s.dim(0);
  LossGrad out;
  out.value = info_nce(sim);

  NDArray dS({B, B});
  std::vector<double> z(static_cast<std::size_t>(B));
  const double scale = 1.0 / (2.0 * static_cast<double>(B) * tau);
  for (std::int64_t j = 0; j < B; ++j) {
    for (std::int64_t m = 0; m < B; ++m) z[static_cast<std::size_t>(m)] = sim.s.at(j, m) / tau;
    const double lse = detail::log_sum_exp(z);
    for (std::int64_t m = 0; m < B; ++m)
      dS.at(j, m) += scale * (std::exp(z[static_cast<std::size_t>(m)] - lse) - (m == j ? 1.0 : 0.0));
  }
  for (std::int64_t k = 0; k < B; ++k) {
    for (std::int64_t m = 0; m < B; ++m) z[static_cast<std::size_t>(m)] = sim.s.at(m, k) / tau;
    const double lse = detail::log_sum_exp(z);
    for (std::int64_t m = 0; m < B; ++m)
      dS.at(m, k) += scale * (std::exp(z[static_cast<std::size_t>(m)] - lse) - (m == k ? 1.0 : 0.0));
  }
  detail::similarity_backward(E, L, dS, out.d_eeg, out.d_text);
  return out;
}

// ---------------------------------------------------------------------------
// MIL-InfoNCE and aggregation ablations
// ---------------------------------------------------------------------------

namespace detail {

// One directional multiple-instance loss over columns of `scores` [Ncand x
// Nanchor]: for anchor k the numerator aggregates exp-similarities over
// pos[k], the denominator sums over all candidates. Anchors weigh in at
// 1/Nanchor unless explicit weights are given (per-subject reweighting).
// When d_scores is non-null, dLoss/d(scores) accumulates scaled by `outer`.
inline double mil_directional(const NDArray& scores, const std::vector<std::vector<std::int64_t>>& pos,
                              double tau, MilAggregation mode, NDArray* d_scores, double outer,
                              const std::vector<double>* anchor_weights = nullptr) {
  const std::int64_t n_cand = scores.dim(0);
  const std::int64_t n_anchor = scores.dim(1);
  require(static_cast<std::int64_t>(pos.size()) == n_anchor, "positive sets do not match anchors");
  if (anchor_weights)
    require(static_cast<std::int64_t>(anchor_weights->size()) == n_anchor,
            "anchor weight count mismatch");
  double total = 0.0;
  std::vector<double> z(static_cast<std::size_t>(n_cand));
  for (std::int64_t k = 0; k < n_anchor; ++k) {
    const double wk = anchor_weights ? (*anchor_weights)[static_cast<std::size_t>(k)]
                                     : 1.0 / static_cast<double>(n_anchor);
    const auto& pk = pos[static_cast<std::size_t>(k)];
    if (pk.empty()) fail("empty positive set for anchor ", k);
    for (std::int64_t j = 0; j < n_cand; ++j) z[static_cast<std::size_t>(j)] = scores.at(j, k) / tau;
    const double lse_all = log_sum_exp(z);

    std::vector<double> zp;
    zp.reserve(pk.size());
    for (auto j : pk) zp.push_back(z[static_cast<std::size_t>(j)]);
    const double lse_pos = log_sum_exp(zp);

    double log_numer = 0.0;
    switch (mode) {
      case MilAggregation::Mean:
        log_numer = lse_pos - std::log(static_cast<double>(pk.size()));
        break;
      case MilAggregation::Sum:
        log_numer = lse_pos;
        break;
      case MilAggregation::Max: {
        double best = zp[0];
        for (double v : zp) best = std::max(best, v);
        log_numer = best;
        break;
      }
      case MilAggregation::Attention: {
        // numerator = sum_j softmax(z_j) * exp(z_j) = sum exp(2 z) / sum exp(z)
        std::vector<double> z2(zp.size());
        for (std::size_t i = 0; i < zp.size(); ++i) z2[i] = 2.0 * zp[i];
        log_numer = log_sum_exp(z2) - lse_pos;
        break;
      }
    }
    total += wk * (lse_all - log_numer);

    if (d_scores) {
      // d/dz_j = weight * (softmax_all_j - numerator_share_j)
      std::vector<double> numer_share(static_cast<std::size_t>(n_cand), 0.0);
      switch (mode) {
        case MilAggregation::Mean:
        case MilAggregation::Sum:
          for (auto j : pk)
            numer_share[static_cast<std::size_t>(j)] = std::exp(z[static_cast<std::size_t>(j)] - lse_pos);
          break;
        case MilAggregation::Max: {
          std::int64_t best = pk[0];
          for (auto j : pk)
            if (z[static_cast<std::size_t>(j)] > z[static_cast<std::size_t>(best)]) best = j;
          numer_share[static_cast<std::size_t>(best)] = 1.0;
          break;
        }
        case MilAggregation::Attention: {
          std::vector<double> z2(zp.size());
          for (std::size_t i = 0; i < zp.size(); ++i) z2[i] = 2.0 * zp[i];
          const double lse2 = log_sum_exp(z2);
          for (std::size_t i = 0; i < pk.size(); ++i) {
            const double u = z[static_cast<std::size_t>(pk[i])];
            numer_share[static_cast<std::size_t>(pk[i])] =
                2.0 * std::exp(2.0 * u - lse2) - std::exp(u - lse_pos);
          }
          break;
        }
      }
      for (std::int64_t j = 0; j < n_cand; ++j) {
        const double soft_all = std::exp(z[static_cast<std::size_t>(j)] - lse_all);
        d_scores->at(j, k) += outer * wk * (soft_all - numer_share[static_cast<std::size_t>(j)]) / tau;
      }
    }
  }
  return total;
}

}  // namespace detail

// Value-only form over a precomputed similarity matrix.
inline double mil_info_nce(const SimilarityMatrix& sim, const PositiveSets& pos, MilDirection dir,
                           MilAggregation mode = MilAggregation::Mean) {
  pos.validate(sim.s.dim(0), sim.s.dim(1));
  if (dir == MilDirection::EegGivenText)
    return detail::mil_directional(sim.s, pos.pos_eeg_for_text, sim.tau, mode, nullptr, 0.0);
  NDArray st({sim.s.dim(1), sim.s.dim(0)});
  st.mat() = sim.s.mat().transpose();
  if (dir == MilDirection::TextGivenEeg)
    return detail::mil_directional(st, pos.pos_text_for_crop, sim.tau, mode, nullptr, 0.0);
  return 0.5 * (detail::mil_directional(sim.s, pos.pos_eeg_for_text, sim.tau, mode, nullptr, 0.0) +
                detail::mil_directional(st, pos.pos_text_for_crop, sim.tau, mode, nullptr, 0.0));
}

inline LossGrad mil_info_nce_grad(const NDArray& E, const NDArray& L, const PositiveSets& pos,
                                  MilDirection dir, double tau,
                                  MilAggregation mode = MilAggregation::Mean,
                                  const std::vector<double>* text_anchor_weights = nullptr,
                                  const std::vector<double>* crop_anchor_weights = nullptr) {
  auto sim = similarity(E, L, {}, {}, tau);
  pos.validate(sim.s.dim(0), sim.s.dim(1));
  LossGrad out;
  NDArray dS({sim.s.dim(0), sim.s.dim(1)});

  const bool want_el = dir == MilDirection::EegGivenText || dir == MilDirection::Joint;
  const bool want_le = dir == MilDirection::TextGivenEeg || dir == MilDirection::Joint;
  const double w = dir == MilDirection::Joint ? 0.5 : 1.0;

  if (want_el) {
    NDArray d({sim.s.dim(0), sim.s.dim(1)});
    const double v = detail::mil_directional(sim.s, pos.pos_eeg_for_text, tau, mode, &d, w,
                                             text_anchor_weights);
    out.value += w * v;
    for (std::size_t i = 0; i < dS.v.size(); ++i) dS.v[i] += d.v[i];
  }
  if (want_le) {
    NDArray st({sim.s.dim(1), sim.s.dim(0)});
    st.mat() = sim.s.mat().transpose();
    NDArray d({sim.s.dim(1), sim.s.dim(0)});
    const double v = detail::mil_directional(st, pos.pos_text_for_crop, tau, mode, &d, w,
                                             crop_anchor_weights);
    out.value += w * v;
    dS.mat() += d.mat().transpose();
  }
  detail::similarity_backward(E, L, dS, out.d_eeg, out.d_text);
  return out;
}

// The Table-6a ablations share machinery with the multiple-instance loss;
// mode=Mean reproduces it exactly.
inline double aggregation_variant(const SimilarityMatrix& sim, const PositiveSets& pos,
                                  MilAggregation mode, MilDirection dir = MilDirection::Joint) {
  return mil_info_nce(sim, pos, dir, mode);
}

// ---------------------------------------------------------------------------
// Alignment + orthogonality composite
// ---------------------------------------------------------------------------

struct MflagResult {
  double align = 0.0;
  double orth = 0.0;
  double total = 0.0;
  NDArray d_pre;   // gradient w.r.t. pre-projection EEG embeddings
  NDArray d_proj;  // gradient w.r.t. projected EEG embeddings
  NDArray d_text;  // gradient w.r.t. text embeddings
};

// align: mean over the batch of ||e_hat - l_hat||^2 = 2 - 2 e_hat.l_hat.
// orth: the per-dimension standardized pre-projection batch is pushed toward
// an identity correlation matrix. Standardization divides by max(std, 1e-5)
// so the stated fixed point (exactly decorrelated unit-variance batch) is
// reachable exactly.
inline MflagResult mflag_loss(const NDArray& pre_proj, const NDArray& projected, const NDArray& text) {
  require(pre_proj.ndim() == 2 && projected.ndim() == 2 && text.ndim() == 2, "mflag: matrices expected");
  const std::int64_t B = pre_proj.dim(0);
  require(projected.dim(0) == B && text.dim(0) == B, "mflag: batch sizes differ");
  require(projected.dim(1) == text.dim(1), "mflag: projected and text dims differ");
  require(B >= 2, "mflag: batch size must be >= 2 for the correlation statistics");

  MflagResult out;

  // Alignment term.
  NDArray en = l2_normalize_rows(projected);
  NDArray ln = l2_normalize_rows(text);
  NDArray d_en({B, projected.dim(1)});
  NDArray d_ln({B, text.dim(1)});
  for (std::int64_t i = 0; i < B; ++i) {
    double dp = 0.0;
    for (std::int64_t j = 0; j < projected.dim(1); ++j) dp += en.at(i, j) * ln.at(i, j);
    out.align += 2.0 - 2.0 * dp;
    for (std::int64_t j = 0; j < projected.dim(1); ++j) {
      d_en.at(i, j) = -2.0 * ln.at(i, j) / static_cast<double>(B);
      d_ln.at(i, j) = -2.0 * en.at(i, j) / static_cast<double>(B);
    }
  }
  out.align /= static_cast<double>(B);
  out.d_proj = detail::normalize_rows_backward(projected, d_en);
  out.d_text = detail::normalize_rows_backward(text, d_ln);

  // Orthogonality term on the standardized pre-projection embeddings.
  const std::int64_t D = pre_proj.dim(1);
  constexpr double kStdFloor = 1e-5;
  NDArray z({B, D});
  std::vector<double> mean(static_cast<std::size_t>(D)), sdev(static_cast<std::size_t>(D));
  std::vector<bool> floored(static_cast<std::size_t>(D));
  for (std::int64_t d = 0; d < D; ++d) {
    double mu = 0.0;
    for (std::int64_t b = 0; b < B; ++b) mu += pre_proj.at(b, d);
    mu /= static_cast<double>(B);
    double var = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double e = pre_proj.at(b, d) - mu;
      var += e * e;
    }
    var /= static_cast<double>(B);
    double sd = std::sqrt(var);
    floored[static_cast<std::size_t>(d)] = sd < kStdFloor;
    if (sd < kStdFloor) sd = kStdFloor;
    mean[static_cast<std::size_t>(d)] = mu;
    sdev[static_cast<std::size_t>(d)] = sd;
    for (std::int64_t b = 0; b < B; ++b) z.at(b, d) = (pre_proj.at(b, d) - mu) / sd;
  }
  NDArray corr({D, D});
  corr.mat().noalias() = z.mat().transpose() * z.mat() / static_cast<double>(B);
  NDArray d_corr({D, D});
  for (std::int64_t i = 0; i < D; ++i)
    for (std::int64_t j = 0; j < D; ++j) {
      const double c = corr.at(i, j);
      if (i == j) {
        out.orth += (1.0 - c) * (1.0 - c);
        d_corr.at(i, j) = -2.0 * (1.0 - c);
      } else {
        out.orth += c * c;
        d_corr.at(i, j) = 2.0 * c;
      }
    }
  // dL/dZ = 2 Z dC / B (dC symmetric).
  NDArray dz({B, D});
  dz.mat().noalias() = z.mat() * d_corr.mat() * (2.0 / static_cast<double>(B));
  // Chain through standardization column-wise (batchnorm-style when the
  // standard deviation is live; plain centering when the floor is active).
  out.d_pre = NDArray({B, D});
  for (std::int64_t d = 0; d < D; ++d) {
    double g_mean = 0.0, gz_mean = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      g_mean += dz.at(b, d);
      gz_mean += dz.at(b, d) * z.at(b, d);
    }
    g_mean /= static_cast<double>(B);
    gz_mean /= static_cast<double>(B);
    const double inv_sd = 1.0 / sdev[static_cast<std::size_t>(d)];
    for (std::int64_t b = 0; b < B; ++b) {
      if (floored[static_cast<std::size_t>(d)])
        out.d_pre.at(b, d) = inv_sd * (dz.at(b, d) - g_mean);
      else
        out.d_pre.at(b, d) = inv_sd * (dz.at(b, d) - g_mean - z.at(b, d) * gz_mean);
    }
  }

  out.total = out.align + out.orth;
  return out;
}

}  // namespace elmkit::losses
