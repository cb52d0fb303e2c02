// elmkit command line: generate / preprocess / pretrain / evaluate /
// retrieve / zeroshot / probe / trace over the manifest-based corpus format.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "elmkit/checkpoint.hpp"
#include "elmkit/config.hpp"
#include "elmkit/corpus.hpp"
#include "elmkit/eval.hpp"
#include "elmkit/synth.hpp"
#include "elmkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace elmkit;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;

train::ExperimentConfig load_config(const std::string& config_path, const std::vector<std::string>& sets) {
  train::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = train::ExperimentConfig::load(config_path);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    cfg.set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  return cfg;
}

void write_resolved(const train::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "config.resolved.cfg").string());
}

// Minimal SVG line plot for trace/score emission.
void write_svg_line(const std::string& path, const std::vector<double>& xs, const std::vector<double>& ys,
                    const std::string& title) {
  const double w = 720, h = 240, m = 40;
  double x_lo = xs.front(), x_hi = xs.back(), y_lo = ys[0], y_hi = ys[0];
  for (double y : ys) {
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  if (y_hi - y_lo < 1e-12) y_hi = y_lo + 1e-12;
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot write " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << m << "' y='16' font-size='12'>" << title << "</text>\n";
  os << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = m + (xs[i] - x_lo) / (x_hi - x_lo + 1e-12) * (w - 2 * m);
    const double py = h - m - (ys[i] - y_lo) / (y_hi - y_lo) * (h - 2 * m);
    os << px << ',' << py << ' ';
  }
  os << "'/>\n</svg>\n";
}

struct EvalBundle {
  train::Checkpoint ck;
  train::PretrainModel model;
  std::shared_ptr<encoders::HashingTextEncoder> text_enc;
  corpus::Manifest manifest;
};

EvalBundle open_checkpoint(const std::string& ckpt_path, const train::ExperimentConfig* override_cfg) {
  EvalBundle b{train::Checkpoint::load(ckpt_path),
               train::PretrainModel{},
               std::make_shared<encoders::HashingTextEncoder>(),
               {}};
  if (override_cfg) {
    // Only data/evaluation knobs may change at evaluation time.
    b.ck.config.manifest = override_cfg->manifest.empty() ? b.ck.config.manifest : override_cfg->manifest;
    b.ck.config.out_dir = override_cfg->out_dir;
    b.ck.config.cache_dir = override_cfg->cache_dir;
    b.ck.config.eval_tasks = override_cfg->eval_tasks;
    b.ck.config.probe_fractions = override_cfg->probe_fractions;
    b.ck.config.eval_split = override_cfg->eval_split;
  }
  require(!b.ck.config.manifest.empty(), "checkpoint config has no manifest; pass --set manifest=...");
  b.manifest = corpus::load_manifest(b.ck.config.manifest);
  // Channel count comes from the montage (20 bipolar pairs).
  b.model = train::PretrainModel::from_checkpoint(b.ck, 20);
  return b;
}

std::vector<train::RecordingData> load_split(const EvalBundle& b, corpus::Split split, bool want_reports) {
  std::vector<std::string> warnings;
  auto recs = train::load_recordings(b.manifest, split, b.ck.config, want_reports, &warnings);
  for (const auto& w : warnings) std::cerr << "[elmkit] warning: " << w << "\n";
  return recs;
}

std::vector<train::RecordingData> load_all_paired(const EvalBundle& b) {
  std::vector<train::RecordingData> all;
  for (auto split : {corpus::Split::Pretrain, corpus::Split::Train, corpus::Split::Val, corpus::Split::Test}) {
    auto part = load_split(b, split, true);
    for (auto& r : part)
      if (r.has_report && r.report.has_content_segment()) all.push_back(std::move(r));
  }
  return all;
}

int run_generate(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& out_dir) {
  synth::SynthSpec spec;
  auto apply = [&](const std::string& key, const std::string& value) {
    if (key == "n_subjects") spec.n_subjects = std::stoll(value);
    else if (key == "n_align") spec.n_align = std::stoll(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "sampling_rate") spec.sampling_rate = std::stod(value);
    else if (key == "duration_s") spec.duration_s = std::stod(value);
    else if (key == "align_duration_s") spec.align_duration_s = std::stod(value);
    else if (key == "burst_scale") spec.burst_scale = std::stod(value);
    else if (key == "test_fraction") spec.test_fraction = std::stod(value);
    else if (key == "out_dir") { /* positional/--out wins */ }
    else fail("unknown generator key '", key, "'");
  };
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw RuntimeError("cannot read config " + config_path);
    std::string line;
    while (std::getline(is, line)) {
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      require(eq != std::string::npos, "generator config expects key=value lines");
      apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    require(eq != std::string::npos, "--set expects key=value");
    apply(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  auto manifest = synth::generate(spec, out_dir);
  std::cout << "generated " << manifest.entries.size() << " recordings under " << out_dir << "\n";
  std::cout << "manifest: " << (fs::path(out_dir) / "manifest.tsv").string() << "\n";
  return 0;
}

int run_preprocess(const train::ExperimentConfig& cfg) {
  require(!cfg.manifest.empty(), "config must name a manifest");
  require(!cfg.resolved_cache_dir().empty(),
          "preprocess requires cache_dir in the config or ELMKIT_CACHE in the environment");
  auto manifest = corpus::load_manifest(cfg.manifest);
  auto filtered = corpus::filter_by_duration(manifest, cfg.min_duration_s, cfg.max_duration_s, cfg.truncate_s);
  const auto montage = train::resolve_montage(cfg);
  std::int64_t done = 0;
  for (const auto& e : filtered.entries) {
    train::standardize_with_cache(e, cfg, montage);
    ++done;
  }
  write_resolved(cfg);
  std::cout << "standardized " << done << " recordings into " << cfg.resolved_cache_dir() << "\n";
  return 0;
}

int run_pretrain(const train::ExperimentConfig& cfg) {
  auto text_enc = std::make_shared<encoders::HashingTextEncoder>();
  train::Trainer trainer(cfg, text_enc);
  auto ck = trainer.run();
  std::cout << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint.elmk").string() << "\n";
  std::cout << "encoder parameters: " << ck.encoder_param_count << " (total trainable "
            << ck.total_param_count << ")\n";
  return 0;
}

int run_retrieve(EvalBundle& b, eval::MetricsWriter& mw, bool plot) {
  auto paired = load_all_paired(b);
  require(paired.size() >= 2, "retrieval needs at least two paired recordings");
  auto emb = eval::embed_recordings(b.model, *b.text_enc, paired, b.ck.config.clusters,
                                    b.ck.config.granularity);
  const std::uint64_t h = b.ck.config.hash();
  for (std::int64_t k : {std::int64_t(1), std::int64_t(5), std::int64_t(10)}) {
    if (k > emb.eeg.dim(0)) continue;
    const double r2e = eval::retrieve_topk(emb.text, emb.eeg, k);
    const double e2r = eval::retrieve_topk(emb.eeg, emb.text, k);
    mw.append("retrieval", h, b.ck.config.seed, concat("top", k, "_report_to_eeg"), r2e);
    mw.append("retrieval", h, b.ck.config.seed, concat("top", k, "_eeg_to_report"), e2r);
    std::cout << "retrieval top-" << k << ": report->eeg " << r2e << ", eeg->report " << e2r << " (pool "
              << emb.eeg.dim(0) << ")\n";
  }
  (void)plot;
  return 0;
}

int run_zeroshot(EvalBundle& b, eval::MetricsWriter& mw, bool plot, bool leave_one_out) {
  auto recs = load_split(b, corpus::split_from_string(b.ck.config.eval_split), true);
  std::vector<train::RecordingData> labeled;
  for (auto& r : recs)
    if (r.label == corpus::Label::Normal || r.label == corpus::Label::Abnormal)
      labeled.push_back(std::move(r));
  require(!labeled.empty(), "zero-shot needs labeled recordings in the eval split");
  auto emb = eval::embed_recordings(b.model, *b.text_enc, labeled, b.ck.config.clusters,
                                    b.ck.config.granularity);
  auto ensemble = eval::default_prompt_ensemble();
  auto project = [&](const NDArray& raw) { return b.model.project_text(raw); };
  auto res = eval::zero_shot(emb.eeg, emb.labels, ensemble, *b.text_enc, project);
  const std::uint64_t h = b.ck.config.hash();
  mw.append("zeroshot", h, b.ck.config.seed, "balanced_accuracy", res.balanced_accuracy);
  mw.append("zeroshot", h, b.ck.config.seed, "auroc", res.auroc);
  mw.append("zeroshot", h, b.ck.config.seed, "f1", res.f1);
  std::cout << "zero-shot: balanced accuracy " << res.balanced_accuracy << ", auroc " << res.auroc
            << ", f1 " << res.f1 << " (n=" << emb.labels.size() << ")\n";
  {
    std::ofstream os((fs::path(b.ck.config.out_dir) / "zeroshot_scores.tsv").string());
    os << "subject\tlabel\tscore\tprediction\n";
    for (std::size_t i = 0; i < emb.labels.size(); ++i)
      os << emb.subject_ids[i] << '\t' << emb.labels[i] << '\t' << res.scores[i] << '\t'
         << res.predictions[i] << "\n";
  }
  if (leave_one_out) {
    auto loo = eval::zero_shot_leave_one_out(emb.eeg, emb.labels, ensemble, *b.text_enc, project);
    std::ofstream os((fs::path(b.ck.config.out_dir) / "zeroshot_loo.tsv").string());
    os << "left_out_prompt\tbalanced_accuracy\tauroc\tf1\n";
    for (const auto& [prompt, r] : loo)
      os << prompt << '\t' << r.balanced_accuracy << '\t' << r.auroc << '\t' << r.f1 << "\n";
  }
  if (plot) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < res.scores.size(); ++i) {
      xs.push_back(static_cast<double>(i));
      ys.push_back(res.scores[i]);
    }
    write_svg_line((fs::path(b.ck.config.out_dir) / "zeroshot_scores.svg").string(), xs, ys,
                   "zero-shot class-margin per recording");
  }
  return 0;
}

int run_probe(EvalBundle& b, eval::MetricsWriter& mw) {
  auto recs = load_split(b, corpus::split_from_string(b.ck.config.eval_split), false);
  std::vector<train::RecordingData> labeled;
  for (auto& r : recs)
    if (r.label == corpus::Label::Normal || r.label == corpus::Label::Abnormal)
      labeled.push_back(std::move(r));
  require(labeled.size() >= 4, "probe needs at least a handful of labeled recordings");

  // Encoder-output embeddings, aggregated per recording.
  std::vector<const NDArray*> crops;
  std::vector<std::int64_t> group;
  std::vector<int> labels;
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    for (const auto& c : labeled[r].crops) {
      crops.push_back(&c);
      group.push_back(static_cast<std::int64_t>(r));
    }
    labels.push_back(labeled[r].label == corpus::Label::Abnormal ? 1 : 0);
  }
  NDArray h = b.model.embed_crops(crops);
  NDArray agg = eval::aggregate(l2_normalize_rows(h), group, static_cast<std::int64_t>(labeled.size())).vectors;

  auto grid = eval::ProbeGrid::default_grid();
  const std::uint64_t cfg_hash = b.ck.config.hash();
  for (const auto& frac_s : split(b.ck.config.probe_fractions, ',')) {
    if (trim(frac_s).empty()) continue;
    const double frac = std::stod(trim(frac_s));
    Rng rng(b.ck.config.seed + 977);
    auto res = eval::linear_probe(agg, labels, grid, frac, rng);
    mw.append("probe", cfg_hash, b.ck.config.seed, concat("balanced_accuracy@", frac_s), res.balanced_accuracy);
    mw.append("probe", cfg_hash, b.ck.config.seed, concat("auroc@", frac_s), res.auroc);
    std::cout << "probe @" << frac << ": balanced accuracy " << res.balanced_accuracy << ", auroc "
              << res.auroc << "\n";
  }
  return 0;
}

int run_trace(EvalBundle& b, const std::string& subject, const std::string& snippet, bool plot) {
  auto recs = load_split(b, corpus::split_from_string(b.ck.config.eval_split), false);
  const train::RecordingData* target = nullptr;
  for (const auto& r : recs)
    if (r.subject_id == subject) target = &r;
  require(target != nullptr, "subject '" + subject + "' not found in the eval split");
  std::vector<const NDArray*> crops;
  for (const auto& c : target->crops) crops.push_back(&c);
  auto trace = eval::align_trace(crops, snippet, b.model, *b.text_enc);
  fs::create_directories(b.ck.config.out_dir);
  const std::string tsv = (fs::path(b.ck.config.out_dir) / ("trace_" + subject + ".tsv")).string();
  {
    std::ofstream os(tsv);
    os << "crop_index\tstart_s\tsimilarity\n";
    for (std::size_t i = 0; i < trace.similarity.size(); ++i)
      os << i << '\t' << static_cast<double>(i) * static_cast<double>(b.ck.config.crop_seconds) << '\t'
         << trace.similarity[i] << "\n";
  }
  std::cout << "trace written to " << tsv << "\n";
  std::cout << "argmax crop " << trace.argmax << " (starts "
            << trace.argmax * b.ck.config.crop_seconds << " s), argmin crop " << trace.argmin << "\n";
  if (plot) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < trace.similarity.size(); ++i) {
      xs.push_back(static_cast<double>(i) * static_cast<double>(b.ck.config.crop_seconds));
      ys.push_back(trace.similarity[i]);
    }
    write_svg_line((fs::path(b.ck.config.out_dir) / ("trace_" + subject + ".svg")).string(), xs, ys,
                   "alignment trace: " + snippet);
  }
  return 0;
}

int run_supervised(EvalBundle& b, eval::MetricsWriter& mw) {
  auto train_recs = load_split(b, corpus::Split::Train, false);
  if (train_recs.empty()) train_recs = load_split(b, corpus::Split::Pretrain, false);
  auto val_recs = load_split(b, corpus::Split::Val, false);
  auto test_recs = load_split(b, corpus::Split::Test, false);
  Rng dummy(0);
  auto cfg = b.ck.config;
  cfg.shuffle_reports = false;
  auto td = train::TrainData::build(std::move(train_recs), cfg, dummy);
  auto vd = train::TrainData::build(std::move(val_recs), cfg, dummy);
  auto sd = train::TrainData::build(std::move(test_recs), cfg, dummy);
  auto res = eval::supervised_reference(cfg, td, vd, sd);
  const std::uint64_t h = cfg.hash();
  mw.append("supervised", h, cfg.seed, "balanced_accuracy", res.balanced_accuracy);
  mw.append("supervised", h, cfg.seed, "auroc", res.auroc);
  std::cout << "supervised reference: balanced accuracy " << res.balanced_accuracy << ", auroc "
            << res.auroc << " (weight decay " << res.best_weight_decay << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-language pretraining toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, subject, snippet = synth::kAbnormalClassPhrase;
  std::vector<std::string> sets;
  bool plot = false, loo = false;

  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", sets, "config override key=value (repeatable)");
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_flag("--plot", plot, "also render SVG plots");
    if (with_checkpoint)
      cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  };

  auto* c_gen = app.add_subcommand("generate", "write a synthetic paired corpus");
  add_common(c_gen, false);
  auto* c_pre = app.add_subcommand("preprocess", "standardize recordings into the cache");
  add_common(c_pre, false);
  auto* c_train = app.add_subcommand("pretrain", "run the pretraining loop");
  add_common(c_train, false);
  auto* c_eval = app.add_subcommand("evaluate", "run the configured evaluation tasks");
  add_common(c_eval, true);
  auto* c_ret = app.add_subcommand("retrieve", "bidirectional recording/report retrieval");
  add_common(c_ret, true);
  auto* c_zs = app.add_subcommand("zeroshot", "prompt-ensemble zero-shot classification");
  add_common(c_zs, true);
  c_zs->add_flag("--loo", loo, "leave-one-prompt-out sensitivity analysis");
  auto* c_probe = app.add_subcommand("probe", "linear probe over frozen embeddings");
  add_common(c_probe, true);
  auto* c_trace = app.add_subcommand("trace", "per-crop alignment trace for one recording");
  add_common(c_trace, true);
  c_trace->add_option("--subject", subject, "subject id")->required();
  c_trace->add_option("--snippet", snippet, "text snippet to trace against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_gen->parsed()) {
      require(!out_dir.empty(), "generate requires --out <dir>");
      return run_generate(config_path, sets, out_dir);
    }
    auto cfg = load_config(config_path, sets);
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (c_pre->parsed()) return run_preprocess(cfg);
    if (c_train->parsed()) {
      write_resolved(cfg);
      return run_pretrain(cfg);
    }

    // Checkpoint-driven verbs share the loading path.
    EvalBundle bundle = open_checkpoint(checkpoint_path, &cfg);
    write_resolved(bundle.ck.config);
    eval::MetricsWriter mw((fs::path(bundle.ck.config.out_dir) / "metrics.tsv").string());
    if (c_ret->parsed()) return run_retrieve(bundle, mw, plot);
    if (c_zs->parsed()) return run_zeroshot(bundle, mw, plot, loo);
    if (c_probe->parsed()) return run_probe(bundle, mw);
    if (c_trace->parsed()) return run_trace(bundle, subject, snippet, plot);
    if (c_eval->parsed()) {
      for (const auto& task : split(bundle.ck.config.eval_tasks, ',')) {
        const std::string t = trim(task);
        if (t == "retrieval") run_retrieve(bundle, mw, plot);
        else if (t == "zeroshot") run_zeroshot(bundle, mw, plot, loo);
        else if (t == "probe") run_probe(bundle, mw);
        else if (t == "supervised") run_supervised(bundle, mw);
        else if (!t.empty()) fail("unknown eval task '", t, "'");
      }
      return 0;
    }
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
