#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "elmkit/nn.hpp"
#include "elmkit/rng.hpp"
#include "elmkit/tensor.hpp"

namespace elmkit::testutil {

// Central finite differences against an analytic gradient. Returns the worst
// relative error over all coordinates; denominators are floored so tiny
// gradients do not blow the ratio up.
inline double max_rel_error(const std::function<double()>& value_fn, NDArray& x, const NDArray& analytic,
                            double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double keep = x.v[i];
    x.v[i] = keep + eps;
    const double up = value_fn();
    x.v[i] = keep - eps;
    const double down = value_fn();
    x.v[i] = keep;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic.v[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic.v[i]) / denom);
  }
  return worst;
}

// Same check for a parameter tensor owned by a module.
inline double max_rel_error_param(const std::function<double()>& value_fn, nn::Param& p, double eps = 1e-5) {
  return max_rel_error(value_fn, p.value, p.grad, eps);
}

inline NDArray random_matrix(std::int64_t rows, std::int64_t cols, Rng& rng, double scale = 1.0) {
  NDArray out({rows, cols});
  for (auto& v : out.v) v = rng.normal() * scale;
  return out;
}

// Unique scratch directory under the build tree.
inline std::string scratch_dir(const std::string& tag) {
  auto path = std::filesystem::temp_directory_path() / ("elmkit_test_" + tag);
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

}  // namespace elmkit::testutil
