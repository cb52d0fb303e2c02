#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/tensor.hpp"

namespace elmkit::metrics {

// Mean per-class recall.
inline double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  require(truth.size() == pred.size() && !truth.empty(), "balanced_accuracy: size mismatch");
  std::map<int, std::pair<std::int64_t, std::int64_t>> per_class;  // class -> (hits, total)
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [hit, total] = per_class[truth[i]];
    ++total;
    if (pred[i] == truth[i]) ++hit;
  }
  double acc = 0.0;
  for (const auto& [cls, ht] : per_class)
    acc += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return acc / static_cast<double>(per_class.size());
}

// Rank-based AUROC with midranks for ties; positive class = 1.
inline double auroc(const std::vector<int>& truth, const std::vector<double>& score) {
  require(truth.size() == score.size() && !truth.empty(), "auroc: size mismatch");
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos_ranks = 0.0;
  std::int64_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (truth[k] == 1) {
      pos_ranks += rank[k];
      ++n_pos;
    }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  require(n_pos > 0 && n_neg > 0, "auroc: both classes must be present");
  return (pos_ranks - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Binary F1 for positive class 1, or macro-F1 when more classes appear.
inline double f1_score(const std::vector<int>& truth, const std::vector<int>& pred) {
  require(truth.size() == pred.size() && !truth.empty(), "f1: size mismatch");
  std::map<int, std::array<std::int64_t, 3>> stats;  // class -> (tp, fp, fn)
  for (auto t : truth) stats[t];
  for (auto p : pred) stats[p];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == truth[i]) ++stats[truth[i]][0];
    else {
      ++stats[pred[i]][1];
      ++stats[truth[i]][2];
    }
  }
  auto f1_of = [&](int cls) {
    const auto& s = stats[cls];
    const double denom = 2.0 * static_cast<double>(s[0]) + static_cast<double>(s[1]) + static_cast<double>(s[2]);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(s[0]) / denom;
  };
  if (stats.size() <= 2 && stats.count(1)) return f1_of(1);
  double macro = 0.0;
  for (const auto& [cls, s] : stats) macro += f1_of(cls);
  return macro / static_cast<double>(stats.size());
}

// ---------------------------------------------------------------------------
// L2-regularized logistic regression (Newton / IRLS), deterministic
// ---------------------------------------------------------------------------

struct LogisticModel {
  NDArray weights;  // binary: [d]; multinomial: [K x d]
  NDArray bias;     // [1] or [K]
  int n_classes = 2;

  // Scores for ranking: binary decision value or per-class logits.
  std::vector<double> decision(const NDArray& x) const {
    const std::int64_t n = x.dim(0), d = x.dim(1);
    std::vector<double> out;
    if (n_classes == 2) {
      out.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = dot(&x.v[static_cast<std::size_t>(i * d)], weights.v.data(), d) + bias[0];
    } else {
      out.resize(static_cast<std::size_t>(n * n_classes));
      for (std::int64_t i = 0; i < n; ++i)
        for (int k = 0; k < n_classes; ++k)
          out[static_cast<std::size_t>(i * n_classes + k)] =
              dot(&x.v[static_cast<std::size_t>(i * d)], &weights.v[static_cast<std::size_t>(k * d)], d) + bias[k];
    }
    return out;
  }

  std::vector<int> predict(const NDArray& x) const {
    auto dec = decision(x);
    std::vector<int> out(static_cast<std::size_t>(x.dim(0)));
    if (n_classes == 2) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = dec[i] > 0.0 ? 1 : 0;
    } else {
      for (std::int64_t i = 0; i < x.dim(0); ++i) {
        int best = 0;
        for (int k = 1; k < n_classes; ++k)
          if (dec[static_cast<std::size_t>(i * n_classes + k)] >
              dec[static_cast<std::size_t>(i * n_classes + best)])
            best = k;
        out[static_cast<std::size_t>(i)] = best;
      }
    }
    return out;
  }
};

// Binary fit: minimize mean log-loss + l2 * ||w||^2 (bias unpenalized).
inline LogisticModel fit_logistic_binary(const NDArray& x, const std::vector<int>& y, double l2,
                                         int max_iter = 60) {
  const std::int64_t n = x.dim(0), d = x.dim(1);
  LogisticModel m;
  m.n_classes = 2;
  m.weights = NDArray({d});
  m.bias = NDArray({1});
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(d + 1);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d + 1, d + 1);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* xi = &x.v[static_cast<std::size_t>(i * d)];
      double logit = theta[d];
      for (std::int64_t j = 0; j < d; ++j) logit += theta[j] * xi[j];
      const double p = 1.0 / (1.0 + std::exp(-logit));
      const double err = p - (y[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0);
      const double wgt = std::max(p * (1.0 - p), 1e-10);
      for (std::int64_t j = 0; j < d; ++j) {
        grad[j] += err * xi[j] / static_cast<double>(n);
        for (std::int64_t k2 = j; k2 < d; ++k2) hess(j, k2) += wgt * xi[j] * xi[k2] / static_cast<double>(n);
        hess(j, d) += wgt * xi[j] / static_cast<double>(n);
      }
      grad[d] += err / static_cast<double>(n);
      hess(d, d) += wgt / static_cast<double>(n);
    }
    for (std::int64_t j = 0; j < d; ++j) {
      grad[j] += 2.0 * l2 * theta[j];
      hess(j, j) += 2.0 * l2;
    }
    for (std::int64_t j = 0; j <= d; ++j)
      for (std::int64_t k2 = 0; k2 < j; ++k2) hess(j, k2) = hess(k2, j);
    hess.diagonal().array() += 1e-10;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    theta -= step;
    if (step.norm() < 1e-10) break;
  }
  for (std::int64_t j = 0; j < d; ++j) m.weights[j] = theta[j];
  m.bias[0] = theta[d];
  return m;
}

// Multinomial fit via damped Newton on the flattened (K x (d+1)) system.
inline LogisticModel fit_logistic_multinomial(const NDArray& x, const std::vector<int>& y, int n_classes,
                                              double l2, int max_iter = 40) {
  const std::int64_t n = x.dim(0), d = x.dim(1);
  const std::int64_t dim = static_cast<std::int64_t>(n_classes) * (d + 1);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  auto logit_of = [&](std::int64_t i, int k) {
    const double* xi = &x.v[static_cast<std::size_t>(i * d)];
    double s = theta[k * (d + 1) + d];
    for (std::int64_t j = 0; j < d; ++j) s += theta[k * (d + 1) + j] * xi[j];
    return s;
  };
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    std::vector<double> p(static_cast<std::size_t>(n_classes));
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int k = 0; k < n_classes; ++k) mx = std::max(mx, logit_of(i, k));
      double z = 0.0;
      for (int k = 0; k < n_classes; ++k) {
        p[static_cast<std::size_t>(k)] = std::exp(logit_of(i, k) - mx);
        z += p[static_cast<std::size_t>(k)];
      }
      for (auto& v : p) v /= z;
      const double* xi = &x.v[static_cast<std::size_t>(i * d)];
      auto xval = [&](std::int64_t j) { return j == d ? 1.0 : xi[j]; };
      for (int k = 0; k < n_classes; ++k) {
        const double err = p[static_cast<std::size_t>(k)] - (y[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0);
        for (std::int64_t j = 0; j <= d; ++j) grad[k * (d + 1) + j] += err * xval(j) / static_cast<double>(n);
        for (int l = 0; l < n_classes; ++l) {
          const double wkl = p[static_cast<std::size_t>(k)] * ((k == l ? 1.0 : 0.0) - p[static_cast<std::size_t>(l)]);
          if (std::abs(wkl) < 1e-14) continue;
          for (std::int64_t j = 0; j <= d; ++j)
            for (std::int64_t j2 = 0; j2 <= d; ++j2)
              hess(k * (d + 1) + j, l * (d + 1) + j2) += wkl * xval(j) * xval(j2) / static_cast<double>(n);
        }
      }
    }
    for (int k = 0; k < n_classes; ++k)
      for (std::int64_t j = 0; j < d; ++j) {
        grad[k * (d + 1) + j] += 2.0 * l2 * theta[k * (d + 1) + j];
        hess(k * (d + 1) + j, k * (d + 1) + j) += 2.0 * l2;
      }
    hess.diagonal().array() += 1e-8;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    theta -= step;
    if (step.norm() < 1e-9) break;
  }
  LogisticModel m;
  m.n_classes = n_classes;
  m.weights = NDArray({static_cast<std::int64_t>(n_classes), d});
  m.bias = NDArray({static_cast<std::int64_t>(n_classes)});
  for (int k = 0; k < n_classes; ++k) {
    for (std::int64_t j = 0; j < d; ++j) m.weights.at(k, j) = theta[k * (d + 1) + j];
    m.bias[k] = theta[k * (d + 1) + d];
  }
  return m;
}

inline LogisticModel fit_logistic(const NDArray& x, const std::vector<int>& y, int n_classes, double l2) {
  require(n_classes >= 2, "fit_logistic: need at least two classes");
  if (n_classes == 2) return fit_logistic_binary(x, y, l2);
  return fit_logistic_multinomial(x, y, n_classes, l2);
}

// Deterministic stratified folds: round-robin over class-sorted items.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int n_folds) {
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  std::vector<int> fold(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
  return fold;
}

}  // namespace elmkit::metrics
