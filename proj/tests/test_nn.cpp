#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "elmkit/nn.hpp"
#include "support/testutil.hpp"

using namespace elmkit;
using testutil::max_rel_error;
using testutil::random_matrix;

namespace {

// Scalar probe: fixed random weights c, loss = sum(c * y).
struct Probe {
  NDArray c;
  explicit Probe(const NDArray& like, Rng& rng) : c(like.shape) {
    for (auto& v : c.v) v = rng.normal();
  }
  double loss(const NDArray& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) s += c.v[i] * y.v[i];
    return s;
  }
};

}  // namespace

TEST_CASE("linear layer matches manual matmul and finite differences") {
  Rng rng(1);
  nn::Linear lin("fc", 3, 2, rng);
  NDArray x = random_matrix(4, 3, rng);
  NDArray y = lin.forward(x, true);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t o = 0; o < 2; ++o) {
      double want = lin.bias().value[o];
      for (std::int64_t j = 0; j < 3; ++j) want += x.at(i, j) * lin.weight().value.at(o, j);
      CHECK(y.at(i, o) == doctest::Approx(want).epsilon(1e-12));
    }

  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(lin.forward(x, true)); };
  lin.zero_grad();
  NDArray dx = lin.backward(probe.c);
  CHECK(max_rel_error(run, lin.weight().value, lin.weight().grad) < 1e-4);
  CHECK(max_rel_error(run, lin.bias().value, lin.bias().grad) < 1e-4);
  CHECK(max_rel_error(run, x, dx) < 1e-4);
}

TEST_CASE("batchnorm: train statistics, running averages, gradients") {
  Rng rng(2);
  nn::BatchNorm bn("bn", 3);
  NDArray x = random_matrix(8, 3, rng, 2.0);
  NDArray y = bn.forward(x, true);
  for (std::int64_t c = 0; c < 3; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < 8; ++i) mu += y.at(i, c) / 8.0;
    for (std::int64_t i = 0; i < 8; ++i) var += (y.at(i, c) - mu) * (y.at(i, c) - mu) / 8.0;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  std::vector<nn::Param*> ps;
  bn.collect(ps);
  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(bn.forward(x, true)); };
  bn.zero_grad();
  NDArray dx = bn.backward(probe.c);
  CHECK(max_rel_error(run, ps[0]->value, ps[0]->grad) < 1e-4);
  CHECK(max_rel_error(run, ps[1]->value, ps[1]->grad) < 1e-4);
  CHECK(max_rel_error(run, x, dx) < 1e-4);

  // Eval mode uses running averages and needs no batch.
  NDArray one = random_matrix(1, 3, rng);
  NDArray ye = bn.forward(one, false);
  CHECK(std::isfinite(ye.at(0, 0)));

  // Channel layout [B, C, L].
  nn::BatchNorm bnc("bnc", 2);
  NDArray xc({3, 2, 5});
  for (auto& v : xc.v) v = rng.normal();
  NDArray yc = bnc.forward(xc, true);
  Probe probe_c(yc, rng);
  auto run_c = [&]() { return probe_c.loss(bnc.forward(xc, true)); };
  bnc.zero_grad();
  NDArray dxc = bnc.backward(probe_c.c);
  CHECK(max_rel_error(run_c, xc, dxc) < 1e-4);
}

TEST_CASE("activations") {
  Rng rng(3);
  nn::Elu elu;
  NDArray x = random_matrix(4, 5, rng);
  NDArray y = elu.forward(x, true);
  for (std::size_t i = 0; i < x.v.size(); ++i)
    CHECK(y.v[i] == doctest::Approx(x.v[i] > 0 ? x.v[i] : std::exp(x.v[i]) - 1.0).epsilon(1e-12));
  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(elu.forward(x, true)); };
  NDArray dx = elu.backward(probe.c);
  CHECK(max_rel_error(run, x, dx) < 1e-4);

  nn::Relu relu;
  NDArray yr = relu.forward(x, true);
  Probe probe_r(yr, rng);
  auto run_r = [&]() { return probe_r.loss(relu.forward(x, true)); };
  NDArray dxr = relu.backward(probe_r.c);
  CHECK(max_rel_error(run_r, x, dxr) < 1e-4);
}

TEST_CASE("max pooling: floor length, lowest-index ties, gradient routing") {
  nn::MaxPool1d pool(3);
  NDArray x({1, 1, 7});
  const double vals[7] = {1.0, 5.0, 2.0, 4.0, 4.0, 0.0, 9.0};  // last sample dropped
  for (int i = 0; i < 7; ++i) x.v[static_cast<std::size_t>(i)] = vals[i];
  NDArray y = pool.forward(x, true);
  REQUIRE(y.dim(2) == 2);
  CHECK(y.at(0, 0, 0) == 5.0);
  CHECK(y.at(0, 0, 1) == 4.0);  // tie between index 3 and 4
  NDArray dy({1, 1, 2});
  dy.at(0, 0, 0) = 1.0;
  dy.at(0, 0, 1) = 2.0;
  NDArray dx = pool.backward(dy);
  CHECK(dx.at(0, 0, 1) == 1.0);
  CHECK(dx.at(0, 0, 3) == 2.0);  // lowest index wins the tie
  CHECK(dx.at(0, 0, 4) == 0.0);

  Rng rng(4);
  NDArray xr({2, 3, 10});
  for (auto& v : xr.v) v = rng.normal();
  NDArray yr = pool.forward(xr, true);
  Probe probe(yr, rng);
  auto run = [&]() { return probe.loss(pool.forward(xr, true)); };
  NDArray dxr = pool.backward(probe.c);
  CHECK(max_rel_error(run, xr, dxr) < 1e-4);
}

TEST_CASE("global average pooling") {
  Rng rng(5);
  nn::GlobalAvgPool gap;
  NDArray x({2, 3, 6});
  for (auto& v : x.v) v = rng.normal();
  NDArray y = gap.forward(x, true);
  double manual = 0.0;
  for (std::int64_t t = 0; t < 6; ++t) manual += x.at(1, 2, t) / 6.0;
  CHECK(y.at(1, 2) == doctest::Approx(manual).epsilon(1e-12));
  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(gap.forward(x, true)); };
  NDArray dx = gap.backward(probe.c);
  CHECK(max_rel_error(run, x, dx) < 1e-4);
}

TEST_CASE("multi-kernel conv matches a direct reflected convolution") {
  Rng rng(6);
  nn::MultiKernelConv1d conv("conv", 2, 2, {4, 8}, rng);
  NDArray x({2, 2, 12});
  for (auto& v : x.v) v = rng.normal();
  NDArray y = conv.forward(x, true);
  REQUIRE(y.dim(1) == 4);
  REQUIRE(y.dim(2) == 12);

  std::vector<nn::Param*> ps;
  conv.collect(ps);  // [w_k4, w_k8, b_k4, b_k8]
  auto reflect = [](std::int64_t i, std::int64_t L) {
    if (i < 0) i = -i;
    if (i >= L) i = 2 * L - 2 - i;
    return i;
  };
  const std::int64_t kernels[2] = {4, 8};
  for (std::int64_t b = 0; b < 2; ++b)
    for (int ki = 0; ki < 2; ++ki) {
      const std::int64_t k = kernels[ki];
      const std::int64_t pad = (k - 1) / 2;
      for (std::int64_t f = 0; f < 2; ++f)
        for (std::int64_t p = 0; p < 12; ++p) {
          double want = ps[ki + 2]->value[f];
          for (std::int64_t c = 0; c < 2; ++c)
            for (std::int64_t t = 0; t < k; ++t)
              want += ps[ki]->value.at(f, c * k + t) * x.at(b, c, reflect(p + t - pad, 12));
          CHECK(y.at(b, ki * 2 + f, p) == doctest::Approx(want).epsilon(1e-10));
        }
    }

  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(conv.forward(x, true)); };
  conv.zero_grad();
  NDArray dx = conv.backward(probe.c);
  for (auto* p : ps) CHECK(max_rel_error(run, p->value, p->grad) < 1e-4);
  CHECK(max_rel_error(run, x, dx) < 1e-4);
}

TEST_CASE("pointwise conv gradient") {
  Rng rng(7);
  nn::PointwiseConv1d conv("pw", 3, 2, rng);
  NDArray x({2, 3, 5});
  for (auto& v : x.v) v = rng.normal();
  NDArray y = conv.forward(x, true);
  Probe probe(y, rng);
  auto run = [&]() { return probe.loss(conv.forward(x, true)); };
  conv.zero_grad();
  NDArray dx = conv.backward(probe.c);
  std::vector<nn::Param*> ps;
  conv.collect(ps);
  for (auto* p : ps) CHECK(max_rel_error(run, p->value, p->grad) < 1e-4);
  CHECK(max_rel_error(run, x, dx) < 1e-4);
}

TEST_CASE("dropout") {
  Rng rng(8);
  nn::Dropout drop(0.5);
  NDArray x = random_matrix(16, 8, rng);
  NDArray y = drop.forward(x, true, rng);
  std::int64_t zeros = 0;
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    if (y.v[i] == 0.0) ++zeros;
    else CHECK(y.v[i] == doctest::Approx(2.0 * x.v[i]).epsilon(1e-12));
  }
  CHECK(zeros > 20);
  CHECK(zeros < 108);
  // Eval mode passes through.
  NDArray ye = drop.forward(x, false, rng);
  for (std::size_t i = 0; i < x.v.size(); ++i) CHECK(ye.v[i] == x.v[i]);
}
