#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "elmkit/common.hpp"

namespace elmkit {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major array of doubles with up to 3 logical dimensions.
// Shapes: {n} vectors, {rows, cols} matrices, {batch, channels, len} signals.
struct NDArray {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  NDArray() = default;
  explicit NDArray(std::initializer_list<std::int64_t> s) : shape(s) { v.assign(static_cast<std::size_t>(numel()), 0.0); }
  explicit NDArray(std::vector<std::int64_t> s) : shape(std::move(s)) { v.assign(static_cast<std::size_t>(numel()), 0.0); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * dim(1) + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * dim(1) + j)]; }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return v[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return v[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  MatMap mat() {
    require(ndim() == 2, "NDArray::mat on non-2d array");
    return MatMap(v.data(), dim(0), dim(1));
  }
  ConstMatMap mat() const {
    require(ndim() == 2, "NDArray::mat on non-2d array");
    return ConstMatMap(v.data(), dim(0), dim(1));
  }

  static NDArray zeros_like(const NDArray& a) { return NDArray(a.shape); }

  bool same_shape(const NDArray& o) const { return shape == o.shape; }
};

inline double l2_norm(const double* x, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

inline double dot(const double* a, const double* b, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Row-wise L2 normalization; rows with norm below eps are rejected.
inline NDArray l2_normalize_rows(const NDArray& x, double eps = 1e-12) {
  require(x.ndim() == 2, "l2_normalize_rows expects a matrix");
  NDArray out = x;
  for (std::int64_t i = 0; i < x.dim(0); ++i) {
    double n = l2_norm(&x.v[static_cast<std::size_t>(i * x.dim(1))], x.dim(1));
    if (n < eps) fail("zero-norm embedding at row ", i);
    for (std::int64_t j = 0; j < x.dim(1); ++j) out.at(i, j) = x.at(i, j) / n;
  }
  return out;
}

// Cosine similarity between two equal-length vectors.
inline double cosine(const double* a, const double* b, std::int64_t n) {
  double na = l2_norm(a, n), nb = l2_norm(b, n);
  if (na < 1e-12 || nb < 1e-12) fail("cosine of zero-norm vector");
  return dot(a, b, n) / (na * nb);
}

}  // namespace elmkit
