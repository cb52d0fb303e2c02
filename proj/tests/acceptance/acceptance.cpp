// Acceptance suite: exercises every toolkit-level guarantee end to end on
// synthetic corpora and prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "elmkit/eval.hpp"
#include "elmkit/losses.hpp"
#include "elmkit/ssl.hpp"
#include "elmkit/synth.hpp"
#include "elmkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace elmkit;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& details) {
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), details.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [ok, details] = fn();
    report(name, ok, details);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string scratch_root() {
  auto p = fs::temp_directory_path() / "elmkit_acceptance";
  return p.string();
}

// Finite-difference check against an analytic gradient (float64, eps 1e-5).
double fd_error(const std::function<double()>& f, NDArray& x, const NDArray& analytic) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double keep = x.v[i];
    x.v[i] = keep + eps;
    const double up = f();
    x.v[i] = keep - eps;
    const double down = f();
    x.v[i] = keep;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic.v[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic.v[i]) / denom);
  }
  return worst;
}

NDArray randn(std::int64_t r, std::int64_t c, Rng& rng) {
  NDArray m({r, c});
  for (auto& v : m.v) v = rng.normal();
  return m;
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient fidelity of every loss
// ---------------------------------------------------------------------------

std::pair<bool, std::string> gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  {  // bidirectional InfoNCE
    NDArray E = randn(4, 6, rng), L = randn(4, 6, rng);
    auto res = losses::info_nce_grad(E, L, 0.3);
    auto f = [&]() { return losses::info_nce_grad(E, L, 0.3).value; };
    track("info_nce/eeg", fd_error(f, E, res.d_eeg));
    track("info_nce/text", fd_error(f, L, res.d_text));
  }
  {  // MIL variants, every direction and aggregation
    std::vector<std::string> cs = {"a", "a", "b", "c"};
    std::vector<std::string> ts = {"a", "b", "b", "c"};
    auto pos = losses::PositiveSets::from_subjects(cs, ts);
    for (auto dir : {losses::MilDirection::EegGivenText, losses::MilDirection::TextGivenEeg,
                     losses::MilDirection::Joint})
      for (auto mode : {losses::MilAggregation::Mean, losses::MilAggregation::Max,
                        losses::MilAggregation::Attention, losses::MilAggregation::Sum}) {
        NDArray E = randn(4, 6, rng), L = randn(4, 6, rng);
        auto res = losses::mil_info_nce_grad(E, L, pos, dir, 0.3, mode);
        auto f = [&]() { return losses::mil_info_nce_grad(E, L, pos, dir, 0.3, mode).value; };
        track("mil/eeg", fd_error(f, E, res.d_eeg));
        track("mil/text", fd_error(f, L, res.d_text));
      }
  }
  {  // alignment + orthogonality composite
    NDArray pre = randn(4, 6, rng), proj = randn(4, 6, rng), text = randn(4, 6, rng);
    auto res = losses::mflag_loss(pre, proj, text);
    auto f = [&]() { return losses::mflag_loss(pre, proj, text).total; };
    track("mflag/pre", fd_error(f, pre, res.d_pre));
    track("mflag/proj", fd_error(f, proj, res.d_proj));
    track("mflag/text", fd_error(f, text, res.d_text));
  }
  {  // BYOL
    NDArray p = randn(4, 6, rng), z = randn(4, 6, rng);
    auto res = ssl::byol_loss(p, z);
    auto f = [&]() { return ssl::byol_loss(p, z).value; };
    track("byol", fd_error(f, p, res.d_online));
  }
  {  // VICReg
    NDArray a = randn(4, 6, rng), b = randn(4, 6, rng);
    auto res = ssl::vicreg_loss(a, b);
    auto f = [&]() { return ssl::vicreg_loss(a, b).value; };
    track("vicreg/z1", fd_error(f, a, res.d_z1));
    track("vicreg/z2", fd_error(f, b, res.d_z2));
  }
  {  // ContraWR
    NDArray a = randn(4, 6, rng), b = randn(4, 6, rng);
    auto res = ssl::contrawr_loss(a, b, 0.3);
    auto f = [&]() { return ssl::contrawr_loss(a, b, 0.3).value; };
    track("contrawr/z1", fd_error(f, a, res.d_z1));
    track("contrawr/z2", fd_error(f, b, res.d_z2));
  }
  {  // RP and TS logistic heads
    nn::Linear rp_head("rp", 6, 1, rng);
    NDArray a = randn(4, 6, rng), b = randn(4, 6, rng);
    auto res = ssl::rp_loss(a, b, {1, 0, 1, 0}, rp_head);
    auto f = [&]() {
      rp_head.zero_grad();
      return ssl::rp_loss(a, b, {1, 0, 1, 0}, rp_head).value;
    };
    track("rp/a", fd_error(f, a, res.d_a));
    track("rp/b", fd_error(f, b, res.d_b));

    nn::Linear ts_head("ts", 12, 1, rng);
    NDArray c = randn(4, 6, rng);
    auto res_ts = ssl::ts_loss(a, b, c, {1, 1, 0, 0}, ts_head);
    auto ft = [&]() {
      ts_head.zero_grad();
      return ssl::ts_loss(a, b, c, {1, 1, 0, 0}, ts_head).value;
    };
    track("ts/a", fd_error(ft, a, res_ts.d_a));
    track("ts/b", fd_error(ft, b, res_ts.d_b));
    track("ts/c", fd_error(ft, c, res_ts.d_c));
  }
  {  // CPC through the recurrent summarizer
    ssl::CpcHead head("cpc", 4, 4, 2, rng);
    NDArray ctx = randn(3, 4, rng), fut = randn(2, 4, rng);
    std::vector<NDArray> negs = {randn(3, 4, rng), randn(3, 4, rng)};
    std::vector<nn::Param*> ps;
    head.collect(ps);
    for (auto* p : ps) p->grad.zero();
    auto res = ssl::cpc_loss(head, ctx, fut, negs);
    auto f = [&]() {
      for (auto* p : ps) p->grad.zero();
      return ssl::cpc_loss(head, ctx, fut, negs).value;
    };
    track("cpc/context", fd_error(f, ctx, res.d_context));
    track("cpc/future", fd_error(f, fut, res.d_future));
  }

  const double secs = seconds_since(t0);
  const bool ok = worst < 1e-4 && secs < 60.0;
  return {ok, concat("max relative error ", worst, " (", worst_name, "), ", secs, " s")};
}

// ---------------------------------------------------------------------------
// Criterion 2: reduction identity
// ---------------------------------------------------------------------------

std::pair<bool, std::string> reduction_identity() {
  Rng rng(1002);
  double worst = 0.0;
  bool joint_exact = true;
  for (int rep = 0; rep < 100; ++rep) {
    NDArray E = randn(4, 6, rng), L = randn(4, 6, rng);
    std::vector<std::string> subj = {"s0", "s1", "s2", "s3"};
    auto pos = losses::PositiveSets::from_subjects(subj, subj);
    auto sim = losses::similarity(E, L, subj, subj, 0.3);
    const double mil = losses::mil_info_nce(sim, pos, losses::MilDirection::Joint);
    const double plain = losses::info_nce(sim);
    worst = std::max(worst, std::abs(mil - plain));
    const double el = losses::mil_info_nce(sim, pos, losses::MilDirection::EegGivenText);
    const double le = losses::mil_info_nce(sim, pos, losses::MilDirection::TextGivenEeg);
    if (mil != 0.5 * (el + le)) joint_exact = false;
  }
  const bool ok = worst < 1e-10 && joint_exact;
  return {ok, concat("max |mil - info_nce| = ", worst, ", joint identity ",
                     joint_exact ? "exact" : "violated", " over 100 instances")};
}

// ---------------------------------------------------------------------------
// Criterion 3: aggregation ordering on the constructed instance
// ---------------------------------------------------------------------------

std::pair<bool, std::string> aggregation_ordering() {
  std::vector<std::string> cs = {"a", "a"};
  std::vector<std::string> ts = {"a"};
  auto pos = losses::PositiveSets::from_subjects(cs, ts);
  NDArray E({2, 2}), L({1, 2});
  E.at(0, 0) = 1.0;
  E.at(1, 0) = 1.0;
  L.at(0, 0) = 1.0;
  auto sim = losses::similarity(E, L, cs, ts, 1.0);
  const double v_sum = losses::aggregation_variant(sim, pos, losses::MilAggregation::Sum,
                                                   losses::MilDirection::EegGivenText);
  const double v_max = losses::aggregation_variant(sim, pos, losses::MilAggregation::Max,
                                                   losses::MilDirection::EegGivenText);
  const double v_mean = losses::aggregation_variant(sim, pos, losses::MilAggregation::Mean,
                                                    losses::MilDirection::EegGivenText);
  const bool ok = std::abs(v_sum) < 1e-9 && std::abs(v_max - std::log(2.0)) < 1e-9 &&
                  std::abs(v_mean - std::log(2.0)) < 1e-9;
  return {ok, concat("sum=", v_sum, " max=", v_max, " mean=", v_mean, " (log 2 = ", std::log(2.0), ")")};
}

// ---------------------------------------------------------------------------
// Criterion 4: alignment/orthogonality fixed points
// ---------------------------------------------------------------------------

std::pair<bool, std::string> mflag_fixed_points() {
  Rng rng(1004);
  NDArray pre = randn(4, 5, rng);
  NDArray proj = randn(4, 6, rng);
  const double align_eq = losses::mflag_loss(pre, proj, proj).align;

  NDArray orth({4, 6});
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 6; j += 2) {
      orth.at(i, j) = -proj.at(i, j + 1);
      orth.at(i, j + 1) = proj.at(i, j);
    }
  const double align_orth = losses::mflag_loss(pre, proj, orth).align;

  NDArray std_pre({4, 2});
  const double c1[4] = {1, 1, -1, -1}, c2[4] = {1, -1, 1, -1};
  for (int i = 0; i < 4; ++i) {
    std_pre.at(i, 0) = 2.0 * c1[i] + 1.0;
    std_pre.at(i, 1) = 0.25 * c2[i] - 3.0;
  }
  const double orth_zero = losses::mflag_loss(std_pre, proj, proj).orth;

  const bool ok = std::abs(align_eq) < 1e-9 && std::abs(align_orth - 2.0) < 1e-9 &&
                  std::abs(orth_zero) < 1e-9;
  return {ok, concat("align(e=l)=", align_eq, " align(orth)=", align_orth,
                     " orth(standardized-decorrelated)=", orth_zero)};
}

// ---------------------------------------------------------------------------
// Criteria 5 and 7 share the main synthetic experiment
// ---------------------------------------------------------------------------

struct MainArtifacts {
  std::string corpus_dir;
  train::Checkpoint checkpoint;
  corpus::Manifest manifest;
  std::shared_ptr<encoders::HashingTextEncoder> text_enc;
  double train_seconds = 0.0;
  bool ready = false;
};

train::ExperimentConfig main_config(const std::string& manifest, const std::string& out_dir) {
  train::ExperimentConfig cfg;
  cfg.manifest = manifest;
  cfg.out_dir = out_dir;
  cfg.objective = train::Objective::ElmMilJoint;
  cfg.crop_seconds = 60;
  cfg.crops_per_subject = 6;
  cfg.texts_per_subject = 4;
  cfg.batch_size = 24;
  cfg.epochs = 10;
  cfg.warmup_epochs = 1;
  cfg.filters_per_kernel = 8;
  cfg.seed = 7;
  return cfg;
}

MainArtifacts prepare_main() {
  MainArtifacts art;
  art.corpus_dir = scratch_root() + "/main_corpus";
  const auto t0 = Clock::now();

  synth::SynthSpec spec;
  spec.n_subjects = 200;
  spec.n_align = 10;
  spec.seed = 7;
  spec.duration_s = 370.0;        // six 60 s crops after the set-up trim
  spec.align_duration_s = 610.0;  // ten crops on the alignment recordings
  art.manifest = synth::generate(spec, art.corpus_dir);

  art.text_enc = std::make_shared<encoders::HashingTextEncoder>();
  auto cfg = main_config((fs::path(art.corpus_dir) / "manifest.tsv").string(),
                         scratch_root() + "/main_run");
  train::Trainer trainer(cfg, art.text_enc);
  art.checkpoint = trainer.run();
  art.train_seconds = seconds_since(t0);
  art.ready = true;
  return art;
}

std::pair<bool, std::string> synthetic_end_to_end(MainArtifacts& art) {
  const auto t0 = Clock::now();
  auto model = train::PretrainModel::from_checkpoint(art.checkpoint, 20);
  const auto& cfg = art.checkpoint.config;

  // Retrieval over every paired recording (chance for top-10 is 10/200).
  std::vector<train::RecordingData> all;
  for (auto split : {corpus::Split::Pretrain, corpus::Split::Test}) {
    auto part = train::load_recordings(art.manifest, split, cfg, true);
    for (auto& r : part)
      if (r.has_report && r.report.has_content_segment()) all.push_back(std::move(r));
  }
  auto emb_all = eval::embed_recordings(model, *art.text_enc, all, cfg.clusters, cfg.granularity);
  const double top10 = eval::retrieve_topk(emb_all.text, emb_all.eeg, 10);
  const double chance = 10.0 / static_cast<double>(emb_all.eeg.dim(0));

  // Zero-shot and probe on the held-out test split.
  auto test = train::load_recordings(art.manifest, corpus::Split::Test, cfg, true);
  auto emb_test = eval::embed_recordings(model, *art.text_enc, test, cfg.clusters, cfg.granularity);
  auto ensemble = eval::default_prompt_ensemble();
  auto project = [&](const NDArray& raw) { return model.project_text(raw); };
  auto zs = eval::zero_shot(emb_test.eeg, emb_test.labels, ensemble, *art.text_enc, project);

  std::vector<const NDArray*> crops;
  std::vector<std::int64_t> group;
  std::vector<int> labels;
  for (std::size_t r = 0; r < test.size(); ++r) {
    for (const auto& c : test[r].crops) {
      crops.push_back(&c);
      group.push_back(static_cast<std::int64_t>(r));
    }
    labels.push_back(test[r].label == corpus::Label::Abnormal ? 1 : 0);
  }
  NDArray h = model.embed_crops(crops);
  NDArray agg = eval::aggregate(l2_normalize_rows(h), group, static_cast<std::int64_t>(test.size())).vectors;
  Rng prng(cfg.seed + 977);
  auto probe = eval::linear_probe(agg, labels, eval::ProbeGrid::default_grid(), 0.01, prng);

  const double total_secs = art.train_seconds + seconds_since(t0);
  const bool ok_time = total_secs < 1800.0;
  const bool ok_ret = top10 >= 5.0 * chance;
  const bool ok_zs = zs.balanced_accuracy >= 0.90;
  const bool ok_probe = probe.balanced_accuracy >= zs.balanced_accuracy - 0.05;
  return {ok_time && ok_ret && ok_zs && ok_probe,
          concat("report->eeg top-10 ", top10, " (chance ", chance, ", need >= ", 5.0 * chance,
                 "); zero-shot balanced accuracy ", zs.balanced_accuracy, " (need >= 0.90); probe@1% ",
                 probe.balanced_accuracy, " (need >= ", zs.balanced_accuracy - 0.05, "); wall ",
                 total_secs, " s (need < 1800)")};
}

std::pair<bool, std::string> alignment_trace(MainArtifacts& art) {
  auto model = train::PretrainModel::from_checkpoint(art.checkpoint, 20);
  const auto& cfg = art.checkpoint.config;
  auto test = train::load_recordings(art.manifest, corpus::Split::Test, cfg, false);

  int n_align = 0, n_hit = 0;
  for (const auto& rec : test) {
    const std::string events_path = art.corpus_dir + "/events/" + rec.subject_id + ".events";
    if (!fs::exists(events_path)) continue;
    auto events = synth::load_events(art.corpus_dir, rec.subject_id);
    if (events.size() != 1) continue;  // alignment subjects carry exactly one planted interval
    ++n_align;
    std::vector<const NDArray*> crops;
    for (const auto& c : rec.crops) crops.push_back(&c);
    auto trace = eval::align_trace(crops, synth::kAbnormalClassPhrase, model, *art.text_enc);
    const double lo = static_cast<double>(trace.argmax) * 60.0;
    const double hi = lo + 60.0;
    if (lo >= events[0].first - 1e-9 && hi <= events[0].second + 1e-9) ++n_hit;
  }
  const bool ok = n_align == 10 && n_hit >= 8;
  return {ok, concat("argmax crop inside the planted interval on ", n_hit, " of ", n_align,
                     " recordings (need >= 8 of 10)")};
}

// ---------------------------------------------------------------------------
// Criterion 6: shuffled-report control
// ---------------------------------------------------------------------------

double crop_ws_bs(train::PretrainModel& model, const train::TrainData& data) {
  std::vector<const NDArray*> crops;
  std::vector<std::string> subjects;
  for (const auto& s : data.subjects)
    for (const auto* c : s.crops) {
      crops.push_back(c);
      subjects.push_back(s.subject_id);
    }
  NDArray h = model.embed_crops(crops);
  return eval::ws_bs_ratio(h, subjects);
}

std::pair<bool, std::string> shuffled_control() {
  const std::string dir = scratch_root() + "/control_corpus";
  synth::SynthSpec spec;
  spec.n_subjects = 40;
  spec.n_align = 0;
  spec.seed = 11;
  spec.duration_s = 190.0;  // three 60 s crops
  auto manifest = synth::generate(spec, dir);

  auto text_enc = std::make_shared<encoders::HashingTextEncoder>();
  auto base_cfg = [&](const std::string& tag) {
    train::ExperimentConfig cfg;
    cfg.manifest = (fs::path(dir) / "manifest.tsv").string();
    cfg.out_dir = scratch_root() + "/control_" + tag;
    cfg.objective = train::Objective::ElmEl;
    cfg.crop_seconds = 60;
    cfg.crops_per_subject = 3;
    cfg.texts_per_subject = 2;
    cfg.batch_size = 24;
    cfg.epochs = 8;
    cfg.warmup_epochs = 1;
    cfg.filters_per_kernel = 8;
    cfg.seed = 11;
    return cfg;
  };

  // Untrained reference: same architecture and seed, no optimization.
  auto cfg0 = base_cfg("untrained");
  auto recs = train::load_recordings(manifest, corpus::Split::Pretrain, cfg0, true);
  Rng drng(cfg0.seed);
  auto data = train::TrainData::build(std::move(recs), cfg0, drng);
  Rng mrng(cfg0.seed);
  auto untrained = train::PretrainModel::build(cfg0, data.channels, mrng);
  const double ratio_untrained = crop_ws_bs(untrained, data);

  auto cfg_paired = base_cfg("paired");
  train::Trainer t_paired(cfg_paired, text_enc);
  auto ck_paired = t_paired.run();
  auto m_paired = train::PretrainModel::from_checkpoint(ck_paired, data.channels);
  const double ratio_paired = crop_ws_bs(m_paired, data);

  auto cfg_shuf = base_cfg("shuffled");
  cfg_shuf.shuffle_reports = true;
  train::Trainer t_shuf(cfg_shuf, text_enc);
  auto ck_shuf = t_shuf.run();
  auto m_shuf = train::PretrainModel::from_checkpoint(ck_shuf, data.channels);
  const double ratio_shuf = crop_ws_bs(m_shuf, data);

  const bool ok = ratio_paired > ratio_untrained && ratio_shuf > ratio_untrained;
  return {ok, concat("within/between ratios: untrained ", ratio_untrained, ", paired reports ",
                     ratio_paired, ", shuffled reports ", ratio_shuf,
                     " (both trained ratios must exceed untrained)")};
}

// ---------------------------------------------------------------------------
// Criterion 8: EEG-only baseline sanity
// ---------------------------------------------------------------------------

std::pair<bool, std::string> baseline_sanity() {
  const std::string dir = scratch_root() + "/baseline_corpus";
  synth::SynthSpec spec;
  spec.n_subjects = 48;
  spec.n_align = 0;
  spec.seed = 13;
  spec.duration_s = 130.0;  // twelve 10 s crops after the trim
  spec.burst_scale = 2.0;   // harder separability so the untrained probe is beatable
  auto manifest = synth::generate(spec, dir);

  auto base_cfg = [&](train::Objective obj, const std::string& tag) {
    train::ExperimentConfig cfg;
    cfg.manifest = (fs::path(dir) / "manifest.tsv").string();
    cfg.out_dir = scratch_root() + "/baseline_" + tag;
    cfg.objective = obj;
    cfg.crop_seconds = 10;
    cfg.batch_size = 32;
    cfg.epochs = 5;
    cfg.warmup_epochs = 1;
    cfg.base_lr = 0.1;
    cfg.filters_per_kernel = 8;
    cfg.seed = 13;
    cfg.rp_pos_max = 2;
    cfg.rp_neg_min = 10;
    cfg.cpc_context = 4;
    cfg.cpc_steps = 4;
    cfg.cpc_negatives = 8;
    return cfg;
  };

  // Probe over all recordings (labels never enter pretraining).
  auto probe_of = [&](train::PretrainModel& model, const train::ExperimentConfig& cfg) {
    std::vector<train::RecordingData> recs;
    for (auto split : {corpus::Split::Pretrain, corpus::Split::Test}) {
      auto part = train::load_recordings(manifest, split, cfg, false);
      for (auto& r : part) recs.push_back(std::move(r));
    }
    std::vector<const NDArray*> crops;
    std::vector<std::int64_t> group;
    std::vector<int> labels;
    for (std::size_t r = 0; r < recs.size(); ++r) {
      for (const auto& c : recs[r].crops) {
        crops.push_back(&c);
        group.push_back(static_cast<std::int64_t>(r));
      }
      labels.push_back(recs[r].label == corpus::Label::Abnormal ? 1 : 0);
    }
    NDArray h = model.embed_crops(crops);
    NDArray agg =
        eval::aggregate(l2_normalize_rows(h), group, static_cast<std::int64_t>(recs.size())).vectors;
    Rng prng(1234);
    return eval::linear_probe(agg, labels, eval::ProbeGrid::default_grid(), 1.0, prng).balanced_accuracy;
  };

  auto cfg0 = base_cfg(train::Objective::Byol, "untrained");
  Rng mrng(cfg0.seed);
  auto untrained = train::PretrainModel::build(cfg0, 20, mrng);
  const double base = probe_of(untrained, cfg0);

  auto text_enc = std::make_shared<encoders::HashingTextEncoder>();
  std::string detail = concat("untrained ", base);
  bool ok = true;
  for (auto obj : {train::Objective::Byol, train::Objective::Vicreg, train::Objective::Contrawr,
                   train::Objective::Rp, train::Objective::Ts, train::Objective::Cpc}) {
    auto cfg = base_cfg(obj, train::to_string(obj));
    train::Trainer trainer(cfg, text_enc);
    auto ck = trainer.run();
    auto model = train::PretrainModel::from_checkpoint(ck, 20);
    const double acc = probe_of(model, cfg);
    detail += concat(", ", train::to_string(obj), " ", acc);
    if (!(acc > base)) ok = false;
  }
  return {ok, detail + " (every baseline must exceed untrained)"};
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism
// ---------------------------------------------------------------------------

std::pair<bool, std::string> determinism() {
  const std::string dir = scratch_root() + "/det_corpus";
  synth::SynthSpec spec;
  spec.n_subjects = 24;
  spec.n_align = 2;
  spec.seed = 5;
  spec.duration_s = 190.0;
  synth::generate(spec, dir);

  auto run_once = [&](const std::string& tag) {
    auto text_enc = std::make_shared<encoders::HashingTextEncoder>();
    train::ExperimentConfig cfg;
    cfg.manifest = (fs::path(dir) / "manifest.tsv").string();
    cfg.out_dir = scratch_root() + "/det_" + tag;
    cfg.objective = train::Objective::ElmMilJoint;
    cfg.crop_seconds = 60;
    cfg.crops_per_subject = 3;
    cfg.texts_per_subject = 2;
    cfg.batch_size = 12;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.filters_per_kernel = 4;
    cfg.seed = 5;
    train::Trainer trainer(cfg, text_enc);
    auto ck = trainer.run();

    // Evaluation metrics from the checkpoint.
    auto model = train::PretrainModel::from_checkpoint(ck, 20);
    auto manifest = corpus::load_manifest(cfg.manifest);
    auto test = train::load_recordings(manifest, corpus::Split::Test, cfg, true);
    auto emb = eval::embed_recordings(model, *text_enc, test, cfg.clusters, cfg.granularity);
    auto zs = eval::zero_shot(emb.eeg, emb.labels, eval::default_prompt_ensemble(), *text_enc,
                              [&](const NDArray& raw) { return model.project_text(raw); });
    const double ret = eval::retrieve_topk(emb.text, emb.eeg, 1);
    return std::tuple<std::string, std::vector<double>, std::map<std::string, NDArray>>(
        corpus::load_text_file(cfg.out_dir + "/train_log.tsv"),
        std::vector<double>{zs.balanced_accuracy, zs.auroc, zs.f1, ret}, model.snapshot());
  };

  auto [log_a, metrics_a, tensors_a] = run_once("a");
  auto [log_b, metrics_b, tensors_b] = run_once("b");
  bool tensors_equal = tensors_a.size() == tensors_b.size();
  if (tensors_equal)
    for (const auto& [name, t] : tensors_a)
      if (!(tensors_b.count(name) && tensors_b.at(name).v == t.v)) {
        tensors_equal = false;
        break;
      }
  const bool ok = log_a == log_b && metrics_a == metrics_b && tensors_equal;
  return {ok, concat("loss trajectory ", log_a == log_b ? "identical" : "DIFFERS",
                     "; evaluation metrics ", metrics_a == metrics_b ? "identical" : "DIFFER",
                     "; parameters ", tensors_equal ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// Criterion 10: preprocessing contract
// ---------------------------------------------------------------------------

std::pair<bool, std::string> preprocessing_contract() {
  // Tone attenuation through the full pipeline.
  auto make_rec = [&](const std::function<double(std::int64_t, double)>& gen) {
    corpus::Recording rec;
    rec.subject_id = "P0";
    rec.session_id = "s01";
    rec.sampling_rate = 250.0;
    rec.reference = corpus::Reference::AR;
    rec.channel_names = {"FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1",
                         "O2",  "F7",  "F8", "T3", "T4", "T5", "T6", "CZ"};
    const std::int64_t n = static_cast<std::int64_t>(250.0 * 80.0);
    rec.signal = NDArray({static_cast<std::int64_t>(rec.channel_names.size()), n});
    for (std::int64_t c = 0; c < rec.signal.dim(0); ++c)
      for (std::int64_t t = 0; t < n; ++t) rec.signal.at(c, t) = gen(c, static_cast<double>(t) / 250.0);
    return rec;
  };
  Rng rng(77);
  std::vector<double> gains;
  for (int c = 0; c < 17; ++c) gains.push_back(rng.uniform(0.5, 1.5));
  auto montage = eegprep::default_tcp_montage();
  auto rms = [](const NDArray& x) {
    double s = 0.0;
    for (auto v : x.v) s += v * v;
    return std::sqrt(s / static_cast<double>(x.v.size()));
  };
  auto tone_rms = [&](double hz) {
    auto rec = make_rec([&](std::int64_t c, double t) {
      return 50.0 * gains[static_cast<std::size_t>(c)] * std::sin(2.0 * M_PI * hz * t);
    });
    return rms(eegprep::preprocess(rec, montage).signal);
  };
  const double db = 20.0 * std::log10(tone_rms(10.0) / tone_rms(60.0));

  // Clipping bound on adversarial input.
  auto spiky = make_rec([&](std::int64_t c, double t) {
    const double base = (t > 30.0 && t < 40.0) ? 5000.0 : 50.0;
    return (c % 2 ? -base : base) * (1.0 + 0.2 * std::sin(2.0 * M_PI * 7.0 * t));
  });
  auto std_sig = eegprep::preprocess(spiky, montage);
  double peak = 0.0;
  for (auto v : std_sig.signal.v) peak = std::max(peak, std::abs(v));

  // Pooling dimension table for all five crop lengths.
  struct Row {
    std::int64_t len;
    std::array<std::int64_t, 4> dims;
  };
  const Row rows[5] = {{500, {166, 55, 18, 6}},
                       {1000, {333, 111, 37, 12}},
                       {2000, {666, 222, 74, 24}},
                       {3000, {750, 187, 46, 11}},
                       {6000, {1500, 375, 93, 23}}};
  bool dims_ok = true;
  for (const auto& row : rows) {
    Rng r2(1);
    encoders::EncoderSpec espec;
    espec.in_channels = 4;
    espec.filters_per_kernel = 1;
    espec.input_len = row.len;
    encoders::EegEncoder enc(espec, r2);
    auto dims = enc.intermediate_dims();
    for (int i = 0; i < 4; ++i)
      if (dims[static_cast<std::size_t>(i)] != row.dims[static_cast<std::size_t>(i)]) dims_ok = false;
  }

  const bool ok = db >= 20.0 && peak <= 800.0 && dims_ok;
  return {ok, concat("60 Hz attenuation ", db, " dB (need >= 20); clipped peak ", peak,
                     " uV (need <= 800); pooling dims ", dims_ok ? "match" : "MISMATCH",
                     " all five published rows")};
}

}  // namespace

int main() {
  std::printf("elmkit acceptance suite\n");
  fs::remove_all(scratch_root());
  fs::create_directories(scratch_root());

  run_criterion("gradient fidelity", gradient_fidelity);
  run_criterion("reduction identity", reduction_identity);
  run_criterion("aggregation ordering", aggregation_ordering);
  run_criterion("alignment/orthogonality fixed points", mflag_fixed_points);
  run_criterion("preprocessing contract", preprocessing_contract);

  MainArtifacts art;
  try {
    art = prepare_main();
  } catch (const std::exception& e) {
    report("synthetic end-to-end", false, std::string("setup exception: ") + e.what());
    report("alignment trace", false, "main experiment unavailable");
  }
  if (art.ready) {
    run_criterion("synthetic end-to-end", [&]() { return synthetic_end_to_end(art); });
    run_criterion("alignment trace", [&]() { return alignment_trace(art); });
  }

  run_criterion("shuffled-report control", shuffled_control);
  run_criterion("baseline sanity", baseline_sanity);
  run_criterion("determinism", determinism);

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
