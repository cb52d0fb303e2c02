#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/rng.hpp"
#include "elmkit/tensor.hpp"

// Minimal layer zoo with hand-written backward passes. Layers cache what
// they need during a train-mode forward; backward consumes the cache and
// accumulates parameter gradients. All reductions run in a fixed order so
// training is bit-reproducible for a given seed and thread count.

namespace elmkit::nn {

struct Param {
  std::string name;
  NDArray value;
  NDArray grad;
  bool norm_or_bias = false;  // excluded from trust-ratio adaptation and weight decay

  explicit Param(std::string n, std::vector<std::int64_t> shape, bool nb = false)
      : name(std::move(n)), value(shape), grad(std::move(shape)), norm_or_bias(nb) {}

  std::int64_t numel() const { return value.numel(); }
};

struct Module {
  virtual ~Module() = default;
  virtual void collect(std::vector<Param*>& out) = 0;
  std::vector<Param*> params() {
    std::vector<Param*> v;
    collect(v);
    return v;
  }
  std::int64_t param_count() {
    std::int64_t n = 0;
    for (auto* p : params()) n += p->numel();
    return n;
  }
  void zero_grad() {
    for (auto* p : params()) p->grad.zero();
  }
};

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline void init_uniform(NDArray& w, std::int64_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.v) v = rng.uniform(-a, a);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

class Linear : public Module {
 public:
  Linear(std::string name, std::int64_t in, std::int64_t out, Rng& rng)
      : in_(in), out_(out), w_(name + ".weight", {out, in}), b_(name + ".bias", {out}, true) {
    init_uniform(w_.value, in, rng);
    init_uniform(b_.value, in, rng);
  }

  NDArray forward(const NDArray& x, bool train) {
    require(x.ndim() == 2 && x.dim(1) == in_, concat("Linear ", w_.name, ": expected input dim ", in_,
                                                     ", got ", x.dim(1)));
    if (train) x_ = x;
    NDArray y({x.dim(0), out_});
    y.mat().noalias() = x.mat() * w_.value.mat().transpose();
    y.mat().rowwise() += Eigen::Map<Eigen::RowVectorXd>(b_.value.v.data(), out_);
    return y;
  }

  NDArray backward(const NDArray& dy) {
    w_.grad.mat().noalias() += dy.mat().transpose() * x_.mat();
    Eigen::Map<Eigen::RowVectorXd>(b_.grad.v.data(), out_) += dy.mat().colwise().sum();
    NDArray dx({x_.dim(0), in_});
    dx.mat().noalias() = dy.mat() * w_.value.mat();
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  std::int64_t in_, out_;
  Param w_, b_;
  NDArray x_;
};

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Shared math for feature ([B,D], stats over B) and channel ([B,C,L], stats
// over B*L) layouts. `spatial` is 1 for the feature layout.
class BatchNorm : public Module {
 public:
  BatchNorm(std::string name, std::int64_t dim, double eps = 1e-5, double momentum = 0.1)
      : dim_(dim), eps_(eps), momentum_(momentum),
        gamma_(name + ".gamma", {dim}, true), beta_(name + ".beta", {dim}, true),
        running_mean_({dim}), running_var_({dim}) {
    for (auto& v : gamma_.value.v) v = 1.0;
    for (auto& v : running_var_.v) v = 1.0;
  }

  NDArray forward(const NDArray& x, bool train) {
    const bool chan = x.ndim() == 3;
    require((chan && x.dim(1) == dim_) || (!chan && x.ndim() == 2 && x.dim(1) == dim_),
            concat("BatchNorm ", gamma_.name, ": dim mismatch"));
    const std::int64_t B = x.dim(0);
    const std::int64_t L = chan ? x.dim(2) : 1;
    const std::int64_t N = B * L;
    NDArray y(x.shape);
    if (train) {
      require(N >= 2, "BatchNorm requires at least 2 samples in train mode");
      mean_ = NDArray({dim_});
      istd_ = NDArray({dim_});
      for (std::int64_t c = 0; c < dim_; ++c) {
        double s = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < L; ++t) s += chan ? x.at(b, c, t) : x.at(b, c);
        const double mu = s / static_cast<double>(N);
        double v = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < L; ++t) {
            const double d = (chan ? x.at(b, c, t) : x.at(b, c)) - mu;
            v += d * d;
          }
        v /= static_cast<double>(N);
        mean_[c] = mu;
        istd_[c] = 1.0 / std::sqrt(v + eps_);
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu;
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * v;
        const double g = gamma_.value[c], be = beta_.value[c], is = istd_[c];
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < L; ++t) {
            const double xv = chan ? x.at(b, c, t) : x.at(b, c);
            const double o = g * (xv - mu) * is + be;
            if (chan) y.at(b, c, t) = o; else y.at(b, c) = o;
          }
      }
      x_ = x;
      trained_forward_ = true;
    } else {
      for (std::int64_t c = 0; c < dim_; ++c) {
        const double mu = running_mean_[c];
        const double is = 1.0 / std::sqrt(running_var_[c] + eps_);
        const double g = gamma_.value[c], be = beta_.value[c];
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < L; ++t) {
            const double xv = chan ? x.at(b, c, t) : x.at(b, c);
            const double o = g * (xv - mu) * is + be;
            if (chan) y.at(b, c, t) = o; else y.at(b, c) = o;
          }
      }
    }
    return y;
  }

  NDArray backward(const NDArray& dy) {
    require(trained_forward_, "BatchNorm backward without train-mode forward");
    const bool chan = dy.ndim() == 3;
    const std::int64_t B = dy.dim(0);
    const std::int64_t L = chan ? dy.dim(2) : 1;
    const std::int64_t N = B * L;
    NDArray dx(dy.shape);
    for (std::int64_t c = 0; c < dim_; ++c) {
      const double mu = mean_[c], is = istd_[c], g = gamma_.value[c];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
          const double d = chan ? dy.at(b, c, t) : dy.at(b, c);
          const double xh = ((chan ? x_.at(b, c, t) : x_.at(b, c)) - mu) * is;
          sum_dy += d;
          sum_dy_xhat += d * xh;
        }
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
      const double inv_n = 1.0 / static_cast<double>(N);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
          const double d = chan ? dy.at(b, c, t) : dy.at(b, c);
          const double xh = ((chan ? x_.at(b, c, t) : x_.at(b, c)) - mu) * is;
          const double o = g * is * (d - inv_n * sum_dy - xh * inv_n * sum_dy_xhat);
          if (chan) dx.at(b, c, t) = o; else dx.at(b, c) = o;
        }
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  NDArray& running_mean() { return running_mean_; }
  NDArray& running_var() { return running_var_; }

 private:
  std::int64_t dim_;
  double eps_, momentum_;
  Param gamma_, beta_;
  NDArray running_mean_, running_var_;
  NDArray x_, mean_, istd_;
  bool trained_forward_ = false;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

class Elu : public Module {
 public:
  NDArray forward(const NDArray& x, bool train) {
    NDArray y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0.0 ? x.v[i] : std::expm1(x.v[i]);
    if (train) y_ = y;
    return y;
  }
  NDArray backward(const NDArray& dy) {
    NDArray dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * (y_.v[i] > 0.0 ? 1.0 : y_.v[i] + 1.0);
    return dx;
  }
  void collect(std::vector<Param*>&) override {}

 private:
  NDArray y_;
};

class Relu : public Module {
 public:
  NDArray forward(const NDArray& x, bool train) {
    NDArray y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0.0 ? x.v[i] : 0.0;
    if (train) x_ = x;
    return y;
  }
  NDArray backward(const NDArray& dy) {
    NDArray dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = x_.v[i] > 0.0 ? dy.v[i] : 0.0;
    return dx;
  }
  void collect(std::vector<Param*>&) override {}

 private:
  NDArray x_;
};

class Dropout : public Module {
 public:
  explicit Dropout(double p) : p_(p) {}
  NDArray forward(const NDArray& x, bool train, Rng& rng) {
    if (!train || p_ <= 0.0) return x;
    mask_ = NDArray(x.shape);
    const double scale = 1.0 / (1.0 - p_);
    NDArray y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      mask_.v[i] = rng.uniform() >= p_ ? scale : 0.0;
      y.v[i] = x.v[i] * mask_.v[i];
    }
    return y;
  }
  NDArray backward(const NDArray& dy) {
    NDArray dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * mask_.v[i];
    return dx;
  }
  void collect(std::vector<Param*>&) override {}

 private:
  double p_;
  NDArray mask_;
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Non-overlapping max pooling; output length floor(L/p), ties to lowest index.
class MaxPool1d : public Module {
 public:
  explicit MaxPool1d(std::int64_t p) : p_(p) { require(p >= 1, "pool size must be >= 1"); }

  NDArray forward(const NDArray& x, bool train) {
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::int64_t Lo = L / p_;
    require(Lo >= 1, "MaxPool1d: input shorter than pool window");
    NDArray y({B, C, Lo});
    if (train) argmax_.assign(static_cast<std::size_t>(B * C * Lo), 0);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t o = 0; o < Lo; ++o) {
          std::int64_t best = o * p_;
          double bv = x.at(b, c, best);
          for (std::int64_t t = o * p_ + 1; t < (o + 1) * p_; ++t)
            if (x.at(b, c, t) > bv) {
              bv = x.at(b, c, t);
              best = t;
            }
          y.at(b, c, o) = bv;
          if (train) argmax_[static_cast<std::size_t>((b * C + c) * Lo + o)] = best;
        }
    if (train) in_shape_ = x.shape;
    return y;
  }

  NDArray backward(const NDArray& dy) {
    NDArray dx(in_shape_);
    const std::int64_t B = dy.dim(0), C = dy.dim(1), Lo = dy.dim(2);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t o = 0; o < Lo; ++o)
          dx.at(b, c, argmax_[static_cast<std::size_t>((b * C + c) * Lo + o)]) += dy.at(b, c, o);
    return dx;
  }

  void collect(std::vector<Param*>&) override {}
  std::int64_t pool() const { return p_; }

 private:
  std::int64_t p_;
  std::vector<std::int64_t> argmax_;
  std::vector<std::int64_t> in_shape_;
};

class GlobalAvgPool : public Module {
 public:
  NDArray forward(const NDArray& x, bool train) {
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    NDArray y({B, C});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::int64_t t = 0; t < L; ++t) s += x.at(b, c, t);
        y.at(b, c) = s / static_cast<double>(L);
      }
    if (train) in_shape_ = x.shape;
    return y;
  }
  NDArray backward(const NDArray& dy) {
    NDArray dx(in_shape_);
    const std::int64_t B = dx.dim(0), C = dx.dim(1), L = dx.dim(2);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double g = dy.at(b, c) / static_cast<double>(L);
        for (std::int64_t t = 0; t < L; ++t) dx.at(b, c, t) = g;
      }
    return dx;
  }
  void collect(std::vector<Param*>&) override {}

 private:
  std::vector<std::int64_t> in_shape_;
};

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

// Reflection index (no edge repeat): -1 -> 1, L -> L-2.
inline std::int64_t reflect(std::int64_t i, std::int64_t L) {
  if (i < 0) i = -i;
  if (i >= L) i = 2 * L - 2 - i;
  return i;
}

// im2col with implicit reflection padding, one crop: out is [C*k, L].
inline void im2col_reflect(const double* x, std::int64_t C, std::int64_t L, std::int64_t k,
                           std::int64_t pad_left, double* out) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t t = 0; t < k; ++t) {
      double* row = out + (c * k + t) * L;
      const double* src = x + c * L;
      for (std::int64_t p = 0; p < L; ++p) row[p] = src[reflect(p + t - pad_left, L)];
    }
}

}  // namespace detail

// Parallel 1D convolutions with reflection padding ("same" length), one
// weight bank per kernel size, outputs concatenated along channels.
class MultiKernelConv1d : public Module {
 public:
  MultiKernelConv1d(std::string name, std::int64_t in_ch, std::int64_t filters,
                    std::vector<std::int64_t> kernels, Rng& rng)
      : in_ch_(in_ch), filters_(filters), kernels_(std::move(kernels)) {
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
      const std::int64_t k = kernels_[i];
      w_.emplace_back(std::make_unique<Param>(concat(name, ".k", k, ".weight"),
                                              std::vector<std::int64_t>{filters, in_ch * k}));
      b_.emplace_back(std::make_unique<Param>(concat(name, ".k", k, ".bias"),
                                              std::vector<std::int64_t>{filters}, true));
      init_uniform(w_.back()->value, in_ch * k, rng);
      init_uniform(b_.back()->value, in_ch * k, rng);
    }
  }

  std::int64_t out_channels() const { return filters_ * static_cast<std::int64_t>(kernels_.size()); }

  NDArray forward(const NDArray& x, bool train) {
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    require(C == in_ch_, concat("conv: expected ", in_ch_, " input channels, got ", C));
    for (auto k : kernels_)
      require(L >= k, concat("conv: input length ", L, " shorter than kernel ", k));
    NDArray y({B, out_channels(), L});
    parallel_for(B, [&](std::int64_t lo, std::int64_t hi) {
      std::vector<double> cols;
      for (std::int64_t b = lo; b < hi; ++b) {
        for (std::size_t ki = 0; ki < kernels_.size(); ++ki) {
          const std::int64_t k = kernels_[ki];
          const std::int64_t pad_left = (k - 1) / 2;
          cols.resize(static_cast<std::size_t>(C * k * L));
          detail::im2col_reflect(&x.v[static_cast<std::size_t>(b * C * L)], C, L, k, pad_left, cols.data());
          ConstMatMap cm(cols.data(), C * k, L);
          MatMap ym(&y.v[static_cast<std::size_t>((b * out_channels() + static_cast<std::int64_t>(ki) * filters_) * L)],
                    filters_, L);
          ym.noalias() = w_[ki]->value.mat() * cm;
          ym.colwise() += Eigen::Map<Eigen::VectorXd>(b_[ki]->value.v.data(), filters_);
        }
      }
    });
    if (train) x_ = x;
    return y;
  }

  NDArray backward(const NDArray& dy) {
    const std::int64_t B = x_.dim(0), C = x_.dim(1), L = x_.dim(2);
    NDArray dx(x_.shape);
    // Per-crop weight-gradient slots keep the final reduction order fixed
    // regardless of thread count.
    std::vector<std::vector<NDArray>> dw_slots(static_cast<std::size_t>(B));
    std::vector<std::vector<NDArray>> db_slots(static_cast<std::size_t>(B));
    parallel_for(B, [&](std::int64_t lo, std::int64_t hi) {
      std::vector<double> cols, dcols;
      for (std::int64_t b = lo; b < hi; ++b) {
        auto& dws = dw_slots[static_cast<std::size_t>(b)];
        auto& dbs = db_slots[static_cast<std::size_t>(b)];
        for (std::size_t ki = 0; ki < kernels_.size(); ++ki) {
          const std::int64_t k = kernels_[ki];
          const std::int64_t pad_left = (k - 1) / 2;
          cols.resize(static_cast<std::size_t>(C * k * L));
          dcols.resize(static_cast<std::size_t>(C * k * L));
          detail::im2col_reflect(&x_.v[static_cast<std::size_t>(b * C * L)], C, L, k, pad_left, cols.data());
          ConstMatMap cm(cols.data(), C * k, L);
          ConstMatMap dym(&dy.v[static_cast<std::size_t>((b * out_channels() + static_cast<std::int64_t>(ki) * filters_) * L)],
                          filters_, L);
          NDArray dw({filters_, C * k});
          dw.mat().noalias() = dym * cm.transpose();
          dws.push_back(std::move(dw));
          NDArray db({filters_});
          Eigen::Map<Eigen::VectorXd>(db.v.data(), filters_) = dym.rowwise().sum();
          dbs.push_back(std::move(db));
          // dX via col2im scatter with the same reflection map.
          MatMap dcm(dcols.data(), C * k, L);
          dcm.noalias() = w_[ki]->value.mat().transpose() * dym;
          double* dst = &dx.v[static_cast<std::size_t>(b * C * L)];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t t = 0; t < k; ++t) {
              const double* row = dcols.data() + (c * k + t) * L;
              for (std::int64_t p = 0; p < L; ++p)
                dst[c * L + detail::reflect(p + t - pad_left, L)] += row[p];
            }
        }
      }
    });
    for (std::int64_t b = 0; b < B; ++b)
      for (std::size_t ki = 0; ki < kernels_.size(); ++ki) {
        MatMap(w_[ki]->grad.v.data(), filters_, C * kernels_[ki]) += dw_slots[static_cast<std::size_t>(b)][ki].mat();
        for (std::int64_t f = 0; f < filters_; ++f)
          b_[ki]->grad[f] += db_slots[static_cast<std::size_t>(b)][ki][f];
      }
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    for (auto& p : w_) out.push_back(p.get());
    for (auto& p : b_) out.push_back(p.get());
  }

 private:
  std::int64_t in_ch_, filters_;
  std::vector<std::int64_t> kernels_;
  std::vector<std::unique_ptr<Param>> w_, b_;
  NDArray x_;
};

// 1x1 convolution (per-position linear map across channels).
class PointwiseConv1d : public Module {
 public:
  PointwiseConv1d(std::string name, std::int64_t in_ch, std::int64_t out_ch, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), w_(name + ".weight", {out_ch, in_ch}),
        b_(name + ".bias", {out_ch}, true) {
    init_uniform(w_.value, in_ch, rng);
    init_uniform(b_.value, in_ch, rng);
  }

  NDArray forward(const NDArray& x, bool train) {
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    require(C == in_ch_, "pointwise conv: channel mismatch");
    NDArray y({B, out_ch_, L});
    parallel_for(B, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t b = lo; b < hi; ++b) {
        ConstMatMap xm(&x.v[static_cast<std::size_t>(b * C * L)], C, L);
        MatMap ym(&y.v[static_cast<std::size_t>(b * out_ch_ * L)], out_ch_, L);
        ym.noalias() = w_.value.mat() * xm;
        ym.colwise() += Eigen::Map<Eigen::VectorXd>(b_.value.v.data(), out_ch_);
      }
    });
    if (train) x_ = x;
    return y;
  }

  NDArray backward(const NDArray& dy) {
    const std::int64_t B = x_.dim(0), C = x_.dim(1), L = x_.dim(2);
    NDArray dx(x_.shape);
    std::vector<NDArray> dw_slots(static_cast<std::size_t>(B));
    std::vector<NDArray> db_slots(static_cast<std::size_t>(B));
    parallel_for(B, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t b = lo; b < hi; ++b) {
        ConstMatMap xm(&x_.v[static_cast<std::size_t>(b * C * L)], C, L);
        ConstMatMap dym(&dy.v[static_cast<std::size_t>(b * out_ch_ * L)], out_ch_, L);
        NDArray dw({out_ch_, in_ch_});
        dw.mat().noalias() = dym * xm.transpose();
        dw_slots[static_cast<std::size_t>(b)] = std::move(dw);
        NDArray db({out_ch_});
        Eigen::Map<Eigen::VectorXd>(db.v.data(), out_ch_) = dym.rowwise().sum();
        db_slots[static_cast<std::size_t>(b)] = std::move(db);
        MatMap dxm(&dx.v[static_cast<std::size_t>(b * C * L)], C, L);
        dxm.noalias() = w_.value.mat().transpose() * dym;
      }
    });
    for (std::int64_t b = 0; b < B; ++b) {
      w_.grad.mat() += dw_slots[static_cast<std::size_t>(b)].mat();
      for (std::int64_t f = 0; f < out_ch_; ++f) b_.grad[f] += db_slots[static_cast<std::size_t>(b)][f];
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  std::int64_t in_ch_, out_ch_;
  Param w_, b_;
  NDArray x_;
};

}  // namespace elmkit::nn
