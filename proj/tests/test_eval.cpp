#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elmkit/eval.hpp"
#include "support/testutil.hpp"

using namespace elmkit;
using namespace elmkit::eval;
using testutil::random_matrix;

TEST_CASE("aggregate: identity, degenerate mean, oracle") {
  NDArray one({1, 3});
  one.at(0, 0) = 3.0;
  one.at(0, 1) = 4.0;
  auto a1 = aggregate(one, {0}, 1);
  CHECK(a1.vectors.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(a1.vectors.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(a1.valid[0] == 1);

  NDArray anti({2, 2});
  anti.at(0, 0) = 1.0;
  anti.at(1, 0) = -1.0;
  auto a2 = aggregate(anti, {0, 0}, 1);
  CHECK(a2.valid[0] == 0);

  Rng rng(1);
  NDArray five = random_matrix(5, 4, rng);
  auto a3 = aggregate(five, {0, 0, 0, 0, 0}, 1);
  std::vector<double> mean(4, 0.0);
  for (std::int64_t i = 0; i < 5; ++i)
    for (std::int64_t j = 0; j < 4; ++j) mean[static_cast<std::size_t>(j)] += five.at(i, j) / 5.0;
  const double n = l2_norm(mean.data(), 4);
  for (std::int64_t j = 0; j < 4; ++j)
    CHECK(a3.vectors.at(0, j) == doctest::Approx(mean[static_cast<std::size_t>(j)] / n).epsilon(1e-10));

  CHECK_THROWS_AS(aggregate(five, {0, 0, 0, 0, 0}, 2), ValidationError);  // empty group 1
}

TEST_CASE("retrieval: exact match, chance level, rotation invariance, bounds") {
  Rng rng(2);
  NDArray q = random_matrix(8, 5, rng);
  CHECK(retrieve_topk(q, q, 1) == doctest::Approx(1.0));

  NDArray single = random_matrix(1, 5, rng);
  CHECK(retrieve_topk(single, single, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(retrieve_topk(q, q, 9), ValidationError);
  CHECK_THROWS_AS(retrieve_topk(q, q, 0), ValidationError);

  // Unrelated Gaussian embeddings: top-10 of 437 within 3 sigma of chance.
  NDArray qq = random_matrix(437, 16, rng);
  NDArray cc = random_matrix(437, 16, rng);
  const double acc = retrieve_topk(qq, cc, 10);
  const double p = 10.0 / 437.0;
  const double sigma = std::sqrt(p * (1.0 - p) / 437.0);
  CHECK(std::abs(acc - p) <= 3.0 * sigma);

  // A common orthogonal transform leaves the ranking unchanged.
  NDArray rot({16, 16});
  {
    Eigen::MatrixXd g = Eigen::MatrixXd::NullaryExpr(16, 16, [&]() { return rng.normal(); });
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd qmat = qr.householderQ();
    for (std::int64_t i = 0; i < 16; ++i)
      for (std::int64_t j = 0; j < 16; ++j) rot.at(i, j) = qmat(i, j);
  }
  NDArray q2({437, 16}), c2({437, 16});
  q2.mat().noalias() = qq.mat() * rot.mat();
  c2.mat().noalias() = cc.mat() * rot.mat();
  CHECK(retrieve_topk(q2, c2, 10) == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("metrics: balanced accuracy, auroc with ties, f1") {
  using namespace elmkit::metrics;
  CHECK(balanced_accuracy({0, 0, 1, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
  CHECK(balanced_accuracy({0, 0, 0, 1}, {0, 0, 0, 1}) == doctest::Approx(1.0));

  CHECK(auroc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == doctest::Approx(1.0));
  CHECK(auroc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.5));  // all tied
  CHECK(auroc({0, 1}, {0.9, 0.1}) == doctest::Approx(0.0));

  CHECK(f1_score({1, 1, 0, 0}, {1, 0, 0, 0}) == doctest::Approx(2.0 / 3.0));

  // Logistic regression separates a separable toy set.
  Rng rng(3);
  NDArray x({40, 2});
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const int cls = i % 2;
    x.at(i, 0) = (cls ? 2.0 : -2.0) + 0.1 * rng.normal();
    x.at(i, 1) = rng.normal();
    y.push_back(cls);
  }
  auto model = fit_logistic(x, y, 2, 1e-4);
  CHECK(balanced_accuracy(y, model.predict(x)) == doctest::Approx(1.0));

  auto folds = stratified_folds(y, 10);
  std::map<int, int> per_fold;
  for (auto f : folds) ++per_fold[f];
  for (const auto& [f, n] : per_fold) CHECK(n == 4);
}

TEST_CASE("zero-shot: prototype match, tie break, duplicate-prompt invariance") {
  encoders::HashingTextEncoder text_enc;
  auto identity = [](const NDArray& raw) { return raw; };

  PromptEnsemble ens;
  ens.class_names = {"normal", "abnormal"};
  ens.prompts = {{"The EEG is normal."}, {"The EEG is abnormal."}};
  NDArray protos = class_prototypes(ens, text_enc, identity);

  // A recording embedding equal to a prototype lands in that class.
  NDArray rec({2, encoders::kTextDim});
  for (std::int64_t j = 0; j < encoders::kTextDim; ++j) {
    rec.at(0, j) = protos.at(0, j);
    rec.at(1, j) = protos.at(1, j);
  }
  auto res = zero_shot(rec, {0, 1}, ens, text_enc, identity);
  CHECK(res.predictions == std::vector<int>{0, 1});
  CHECK(res.balanced_accuracy == doctest::Approx(1.0));
  CHECK(res.auroc == doctest::Approx(1.0));

  // Equidistant embedding: deterministic tie-break to class 0.
  NDArray mid({1, encoders::kTextDim});
  for (std::int64_t j = 0; j < encoders::kTextDim; ++j) mid.at(0, j) = protos.at(0, j) + protos.at(1, j);
  auto res_mid = zero_shot(mid, {}, ens, text_enc, identity);
  CHECK(res_mid.predictions[0] == 0);

  // Duplicating a prompt inside a class does not move the prototype.
  PromptEnsemble dup = ens;
  dup.prompts[0].push_back(dup.prompts[0][0]);
  auto res_dup = zero_shot(rec, {0, 1}, dup, text_enc, identity);
  CHECK(res_dup.predictions == res.predictions);
  CHECK(res_dup.scores[0] == doctest::Approx(res.scores[0]).epsilon(1e-12));

  PromptEnsemble bad;
  bad.class_names = {"only"};
  bad.prompts = {{"x"}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  auto full = default_prompt_ensemble();
  full.validate();
  CHECK(full.prompts[0].size() == 21);
  CHECK(full.prompts[1].size() == 21);
}

TEST_CASE("linear probe: separable data, null data, grid endpoints, permutation invariance") {
  auto grid = ProbeGrid::default_grid();
  grid.validate();
  REQUIRE(grid.l2_strengths.size() == 45);
  CHECK(grid.l2_strengths.front() == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK(grid.l2_strengths.back() == doctest::Approx(1e5).epsilon(1e-9));

  Rng rng(4);
  NDArray x({60, 3});
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    const int cls = i % 2;
    x.at(i, 0) = (cls ? 1.5 : -1.5) + 0.05 * rng.normal();
    x.at(i, 1) = rng.normal();
    x.at(i, 2) = rng.normal();
    y.push_back(cls);
  }
  Rng prng(5);
  auto res = linear_probe(x, y, grid, 1.0, prng);
  CHECK(res.balanced_accuracy == doctest::Approx(1.0));
  CHECK(res.auroc == doctest::Approx(1.0));

  // Labels independent of the embeddings: roughly chance.
  NDArray noise = random_matrix(120, 4, rng);
  std::vector<int> ny;
  for (int i = 0; i < 120; ++i) ny.push_back(i % 2);
  Rng prng2(6);
  auto res_null = linear_probe(noise, ny, grid, 1.0, prng2);
  CHECK(std::abs(res_null.auroc - 0.5) < 0.2);

  // Permuting embeddings together with labels changes nothing.
  std::vector<std::int64_t> perm(60);
  for (int i = 0; i < 60; ++i) perm[static_cast<std::size_t>(i)] = (i * 7) % 60;
  NDArray xp({60, 3});
  std::vector<int> yp(60);
  for (int i = 0; i < 60; ++i) {
    yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    for (int j = 0; j < 3; ++j) xp.at(i, j) = x.at(perm[static_cast<std::size_t>(i)], j);
  }
  Rng prng3(5);
  auto res_perm = linear_probe(xp, yp, grid, 1.0, prng3);
  CHECK(res_perm.balanced_accuracy == doctest::Approx(res.balanced_accuracy).epsilon(1e-9));

  // Tiny label fractions keep at least one sample per class.
  Rng prng4(7);
  auto res_tiny = linear_probe(x, y, grid, 0.01, prng4);
  CHECK(res_tiny.balanced_accuracy > 0.9);  // trivially separable even from two points
}

TEST_CASE("linear probe: multinomial variant separates three classes") {
  Rng rng(8);
  NDArray x({90, 2});
  std::vector<int> y;
  for (int i = 0; i < 90; ++i) {
    const int cls = i % 3;
    const double angle = 2.0 * M_PI * static_cast<double>(cls) / 3.0;
    x.at(i, 0) = 2.0 * std::cos(angle) + 0.1 * rng.normal();
    x.at(i, 1) = 2.0 * std::sin(angle) + 0.1 * rng.normal();
    y.push_back(cls);
  }
  ProbeGrid grid;
  grid.l2_strengths = {1e-4, 1e-2, 1.0};
  Rng prng(9);
  auto res = linear_probe(x, y, grid, 1.0, prng);
  CHECK(res.balanced_accuracy == doctest::Approx(1.0));
  CHECK(res.auroc > 0.99);
}

TEST_CASE("ws/bs ratio: unit case, clustered case, degenerate case") {
  NDArray same({4, 3});
  for (std::int64_t i = 0; i < 4; ++i) same.at(i, 1) = 2.0;
  CHECK(ws_bs_ratio(same, {"a", "a", "b", "b"}) == doctest::Approx(1.0));

  Rng rng(10);
  NDArray clustered({8, 4});
  for (std::int64_t i = 0; i < 8; ++i) {
    const std::int64_t cls = i / 4;
    clustered.at(i, cls) = 1.0;
    clustered.at(i, 2) = 0.05 * rng.normal();
  }
  CHECK(ws_bs_ratio(clustered, {"a", "a", "a", "a", "b", "b", "b", "b"}) > 5.0);

  CHECK_THROWS_AS(ws_bs_ratio(same, {"a", "b", "c", "d"}), ValidationError);  // no within pairs
}

TEST_CASE("align trace through a model: determinism, duplicates, empty snippet") {
  train::ExperimentConfig cfg;
  cfg.objective = train::Objective::ElmMilJoint;
  cfg.crop_seconds = 5;
  cfg.filters_per_kernel = 1;
  Rng rng(11);
  auto model = train::PretrainModel::build(cfg, 2, rng);
  encoders::HashingTextEncoder text_enc;

  Rng drng(12);
  NDArray c1({2, 500}), c2({2, 500});
  for (auto& v : c1.v) v = drng.normal();
  c2 = c1;
  NDArray c3({2, 500});
  for (auto& v : c3.v) v = drng.normal() * 2.0;
  std::vector<const NDArray*> crops = {&c1, &c2, &c3};
  auto trace = align_trace(crops, "intermittent bursts", model, text_enc);
  REQUIRE(trace.similarity.size() == 3);
  CHECK(trace.similarity[0] == doctest::Approx(trace.similarity[1]).epsilon(1e-12));
  auto trace2 = align_trace(crops, "intermittent bursts", model, text_enc);
  CHECK(trace.similarity == trace2.similarity);
  CHECK_THROWS_AS(align_trace(crops, "  ", model, text_enc), ValidationError);
}

TEST_CASE("supervised reference: above chance when trained, chance on constant embeddings") {
  train::ExperimentConfig cfg;
  cfg.objective = train::Objective::Supervised;
  cfg.crop_seconds = 5;
  cfg.filters_per_kernel = 1;
  cfg.epochs = 30;
  cfg.seed = 5;

  auto make_data = [&](int n, std::uint64_t seed, bool constant) {
    std::vector<train::RecordingData> recs;
    for (int s = 0; s < n; ++s) {
      Rng rng(seed + static_cast<std::uint64_t>(s));
      train::RecordingData r;
      r.subject_id = concat("V", s, constant ? "c" : "");
      r.session_id = "s01";
      r.label = s % 2 ? corpus::Label::Abnormal : corpus::Label::Normal;
      for (int c = 0; c < 3; ++c) {
        NDArray crop({2, 500});
        for (std::int64_t t = 0; t < 500; ++t) {
          const double sec = static_cast<double>(t) / 100.0;
          const double burst = (s % 2) ? 100.0 * std::sin(2.0 * M_PI * 3.0 * sec) : 0.0;
          crop.at(0, t) = constant ? 1.0 : 5.0 * rng.normal() + burst;
          crop.at(1, t) = constant ? 1.0 : 5.0 * rng.normal() + 0.3 * burst;
        }
        r.crops.push_back(std::move(crop));
      }
      recs.push_back(std::move(r));
    }
    Rng rr(1);
    return train::TrainData::build(std::move(recs), cfg, rr);
  };

  auto tr = make_data(16, 100, false);
  auto va = make_data(6, 200, false);
  auto te = make_data(10, 300, false);
  auto res = eval::supervised_reference(cfg, tr, va, te);
  CHECK(res.balanced_accuracy > 0.6);
  const bool wd_in_grid =
      res.best_weight_decay == 0.1 || res.best_weight_decay == 0.01 || res.best_weight_decay == 0.0001;
  CHECK(wd_in_grid);

  // Identical crops everywhere collapse every prediction to one class: 0.5.
  auto tr_c = make_data(8, 400, true);
  auto te_c = make_data(8, 500, true);
  auto res_c = eval::supervised_reference(cfg, tr_c, va, te_c);
  CHECK(res_c.balanced_accuracy == doctest::Approx(0.5));
}
