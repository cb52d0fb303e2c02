#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elmkit/optim.hpp"
#include "support/testutil.hpp"

using namespace elmkit;
using namespace elmkit::optim;

TEST_CASE("lars: zero gradient and zero decay is a fixed point") {
  nn::Param p("w", {3});
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  p.value[2] = 0.5;
  Lars lars({&p}, 0.0);
  const auto before = p.value.v;
  for (int i = 0; i < 5; ++i) lars.step(0.1);
  CHECK(p.value.v == before);
}

TEST_CASE("lars: a single scalar parameter reduces to sgd with a rescaled rate") {
  nn::Param p("w", {1});
  p.value[0] = 2.0;
  p.grad[0] = 0.5;
  Lars lars({&p}, 0.0, 0.9, 1e-9);
  lars.step(0.1);
  // local_lr = lr * |w| / (|g| + eps); update = local_lr * g
  const double local = 0.1 * 2.0 / (0.5 + 1e-9);
  CHECK(p.value[0] == doctest::Approx(2.0 - local * 0.5).epsilon(1e-12));
}

TEST_CASE("lars: trust ratio is invariant to a common positive rescaling") {
  nn::Param a("a", {2}), b("b", {2});
  a.value[0] = 0.3;
  a.value[1] = -0.7;
  a.grad[0] = 0.11;
  a.grad[1] = 0.05;
  const double c = 37.0;
  for (int i = 0; i < 2; ++i) {
    b.value[i] = c * a.value[i];
    b.grad[i] = c * a.grad[i];
  }
  Lars lars({&a, &b}, 0.0, 0.9, 0.0);
  const auto a0 = a.value.v, b0 = b.value.v;
  lars.step(0.05);
  for (int i = 0; i < 2; ++i) {
    const double ua = a0[static_cast<std::size_t>(i)] - a.value[i];
    const double ub = b0[static_cast<std::size_t>(i)] - b.value[i];
    CHECK(ub == doctest::Approx(c * ua).epsilon(1e-12));
  }
}

TEST_CASE("lars: bias and norm parameters skip adaptation and decay") {
  nn::Param p("bn.gamma", {1}, true);
  p.value[0] = 5.0;
  p.grad[0] = 0.2;
  Lars lars({&p}, 1.0);  // huge decay must not touch the excluded tensor
  lars.step(0.1);
  CHECK(p.value[0] == doctest::Approx(5.0 - 0.1 * 0.2).epsilon(1e-12));
}

TEST_CASE("lars: momentum recurrence over two steps") {
  nn::Param p("w", {1});
  p.value[0] = 1.0;
  p.grad[0] = 1.0;
  Lars lars({&p}, 0.0, 0.9, 0.0);
  // step 1: local_lr = lr*|w|/|g|, v1 = local*g
  const double lr = 0.01;
  double w = 1.0, v = 0.0;
  auto expected_step = [&](double grad) {
    const double local = lr * std::abs(w) / std::abs(grad);
    v = 0.9 * v + local * grad;
    w -= v;
  };
  expected_step(1.0);
  lars.step(lr);
  CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));
  p.grad[0] = 1.0;
  expected_step(1.0);
  lars.step(lr);
  CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("lars: lr zero changes nothing even with gradients pending") {
  nn::Param p("w", {2});
  p.value[0] = 1.0;
  p.value[1] = 2.0;
  p.grad[0] = 3.0;
  p.grad[1] = -1.0;
  Lars lars({&p}, 1e-4);
  const auto before = p.value.v;
  lars.step(0.0);
  CHECK(p.value.v == before);
}

TEST_CASE("lars: non-finite gradients abort with the parameter name") {
  nn::Param p("conv.weight", {1});
  p.grad[0] = std::numeric_limits<double>::quiet_NaN();
  Lars lars({&p}, 0.0);
  CHECK_THROWS_WITH_AS(lars.step(0.1), doctest::Contains("conv.weight"), RuntimeError);
}

TEST_CASE("learning rate schedule: warmup, peak scaling, cosine tail") {
  LrSchedule s{0.06, 2048, 4, 50, 10};
  CHECK(s.lr_at(0) == 0.0);
  CHECK(s.peak() == doctest::Approx(0.48).epsilon(1e-12));  // 0.06 * 2048 / 256
  CHECK(s.lr_at(40) == doctest::Approx(0.48).epsilon(1e-12));  // end of warmup
  CHECK(s.lr_at(500) == doctest::Approx(0.0).epsilon(1e-12));  // cosine endpoint

  // Continuity at the junction: one-step jump bounded by the warmup slope.
  const double jump = std::abs(s.lr_at(40) - s.lr_at(39));
  CHECK(jump <= s.peak() / 40.0 + 1e-12);

  // Monotone decay after the warmup.
  for (int t = 41; t <= 500; ++t) CHECK(s.lr_at(t) <= s.lr_at(t - 1) + 1e-15);

  CHECK_THROWS_AS(s.lr_at(501), ValidationError);
}

TEST_CASE("adam minimizes a quadratic") {
  nn::Param p("w", {2});
  p.value[0] = 3.0;
  p.value[1] = -2.0;
  Adam adam({&p}, 0.05);
  for (int i = 0; i < 400; ++i) {
    p.grad[0] = 2.0 * (p.value[0] - 1.0);
    p.grad[1] = 2.0 * (p.value[1] - 4.0);
    adam.step();
  }
  CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(p.value[1] == doctest::Approx(4.0).epsilon(1e-2));
}
