#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "elmkit/checkpoint.hpp"
#include "elmkit/config.hpp"
#include "elmkit/corpus.hpp"
#include "elmkit/eegprep.hpp"
#include "elmkit/encoders.hpp"
#include "elmkit/losses.hpp"
#include "elmkit/optim.hpp"
#include "elmkit/ssl.hpp"
#include "elmkit/textseg.hpp"

// Batch construction with sub-unit positive sampling, the LARS schedule,
// and the pretraining loop for every objective.

namespace elmkit::train {

// ---------------------------------------------------------------------------
// Standardized data loading (with optional preprocessed-signal cache)
// ---------------------------------------------------------------------------

struct RecordingData {
  std::string subject_id;
  std::string session_id;
  corpus::Label label = corpus::Label::None;
  std::vector<NDArray> crops;  // [C x L] each, in temporal order
  bool has_report = false;
  textseg::Report report;
};

inline eegprep::Montage resolve_montage(const ExperimentConfig& cfg) {
  if (cfg.montage.empty() || cfg.montage == "default") return eegprep::default_tcp_montage();
  return eegprep::Montage::load(cfg.montage);
}

inline textseg::ClusterLexicon resolve_lexicon(const ExperimentConfig& cfg) {
  if (cfg.lexicon.empty() || cfg.lexicon == "default") return textseg::default_lexicon();
  return textseg::ClusterLexicon::load(cfg.lexicon);
}

inline eegprep::StandardSignal standardize_with_cache(const corpus::ManifestEntry& entry,
                                                      const ExperimentConfig& cfg,
                                                      const eegprep::Montage& montage) {
  const std::string cache_dir = cfg.resolved_cache_dir();
  std::string cache_base;
  if (!cache_dir.empty()) {
    const std::uint64_t key =
        fnv1a(concat(entry.signal_path, ":", entry.effective_samples(), ":", cfg.montage));
    std::filesystem::create_directories(cache_dir);
    cache_base = (std::filesystem::path(cache_dir) / concat("std_", std::hex, key, ".f32")).string();
    if (std::filesystem::exists(cache_base) && std::filesystem::exists(corpus::meta_path_for(cache_base))) {
      auto meta = corpus::load_signal_meta(corpus::meta_path_for(cache_base));
      eegprep::StandardSignal sig;
      sig.subject_id = entry.subject_id;
      sig.session_id = entry.session_id;
      sig.channel_names = meta.channel_names;
      sig.signal = corpus::load_signal(cache_base, meta.channels, meta.samples);
      return sig;
    }
  }
  auto rec = corpus::load_recording(entry);
  auto sig = eegprep::preprocess(rec, montage);
  if (!cache_base.empty()) {
    corpus::save_signal(sig.signal, cache_base);
    corpus::SignalMeta meta{sig.channels(), sig.samples(), eegprep::kTargetRateHz, sig.channel_names,
                            corpus::Reference::Other};
    corpus::save_signal_meta(meta, corpus::meta_path_for(cache_base));
  }
  return sig;
}

// Loads, standardizes, and crops every entry of a split. Entries outside the
// duration window are dropped before loading.
inline std::vector<RecordingData> load_recordings(const corpus::Manifest& manifest, corpus::Split split,
                                                  const ExperimentConfig& cfg, bool want_reports,
                                                  std::vector<std::string>* warnings = nullptr) {
  const auto montage = resolve_montage(cfg);
  const auto lexicon = resolve_lexicon(cfg);
  auto filtered = corpus::filter_by_duration(manifest, cfg.min_duration_s, cfg.max_duration_s, cfg.truncate_s);
  std::vector<const corpus::ManifestEntry*> entries;
  for (const auto& e : filtered.entries)
    if (e.split == split) entries.push_back(&e);

  std::vector<RecordingData> out(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(static_cast<std::int64_t>(entries.size()), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const auto& e = *entries[static_cast<std::size_t>(i)];
      RecordingData& r = out[static_cast<std::size_t>(i)];
      r.subject_id = e.subject_id;
      r.session_id = e.session_id;
      r.label = e.label;
      try {
        auto sig = standardize_with_cache(e, cfg, montage);
        r.crops.clear();
        for (auto& c : eegprep::crop(sig, cfg.crop_seconds, cfg.max_crops_per_recording))
          r.crops.push_back(std::move(c.data));
      } catch (const std::exception& ex) {
        errors[static_cast<std::size_t>(i)] = concat(e.subject_id, "/", e.session_id, ": ", ex.what());
      }
      if (want_reports && !e.report_path.empty()) {
        try {
          r.report = textseg::load_report(e, lexicon);
          r.has_report = true;
        } catch (const std::exception& ex) {
          errors[static_cast<std::size_t>(i)] = concat(e.subject_id, "/", e.session_id, ": ", ex.what());
        }
      }
    }
  });
  std::vector<RecordingData> kept;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!errors[i].empty()) {
      if (warnings) warnings->push_back("skipped " + errors[i]);
      continue;
    }
    kept.push_back(std::move(out[i]));
  }
  return kept;
}

// Per-subject view used by the pretraining loop; all sessions of a subject
// contribute crops under the one subject id.
struct SubjectData {
  std::string subject_id;
  corpus::Label label = corpus::Label::None;
  std::vector<const NDArray*> crops;
  std::vector<std::int64_t> recording_of_crop;  // index into the recordings vector
  std::vector<const textseg::Report*> reports;

  bool text_eligible(const std::set<textseg::Cluster>& clusters, textseg::Granularity g) const {
    for (const auto* rep : reports)
      if (!textseg::eligible_units(*rep, clusters, g).empty()) return true;
    return false;
  }
};

struct TrainData {
  std::vector<RecordingData> recordings;
  std::vector<SubjectData> subjects;
  std::int64_t channels = 0;
  std::int64_t crop_len = 0;
  std::int64_t total_crops = 0;

  static TrainData build(std::vector<RecordingData> recs, const ExperimentConfig& cfg, Rng& rng,
                         std::vector<std::string>* warnings = nullptr) {
    TrainData d;
    d.recordings = std::move(recs);
    if (cfg.shuffle_reports) {
      // Reports move between subjects while the EEG stays put (misalignment
      // control). A rotation guarantees no report stays with its owner.
      std::vector<std::size_t> with_report;
      for (std::size_t i = 0; i < d.recordings.size(); ++i)
        if (d.recordings[i].has_report) with_report.push_back(i);
      if (with_report.size() >= 2) {
        std::vector<std::size_t> order = with_report;
        rng.shuffle(order);
        std::vector<textseg::Report> moved;
        moved.reserve(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) moved.push_back(d.recordings[order[i]].report);
        for (std::size_t i = 0; i < order.size(); ++i)
          d.recordings[order[(i + 1) % order.size()]].report = moved[i];
      }
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t ri = 0; ri < d.recordings.size(); ++ri) {
      auto& r = d.recordings[ri];
      auto [it, fresh] = index.emplace(r.subject_id, d.subjects.size());
      if (fresh) {
        d.subjects.push_back({});
        d.subjects.back().subject_id = r.subject_id;
        d.subjects.back().label = r.label;
      }
      SubjectData& s = d.subjects[it->second];
      for (const auto& c : r.crops) {
        s.crops.push_back(&c);
        s.recording_of_crop.push_back(static_cast<std::int64_t>(ri));
        if (d.channels == 0) {
          d.channels = c.dim(0);
          d.crop_len = c.dim(1);
        }
        ++d.total_crops;
      }
      if (r.has_report) s.reports.push_back(&r.report);
    }
    if (warnings)
      for (const auto& s : d.subjects)
        if (is_multimodal(cfg.objective) && !s.text_eligible(cfg.clusters, cfg.granularity))
          warnings->push_back("subject " + s.subject_id + " has no eligible text and is skipped");
    return d;
  }
};

// ---------------------------------------------------------------------------
// Model bundle per objective
// ---------------------------------------------------------------------------

struct PretrainModel {
  ExperimentConfig cfg;
  encoders::EncoderSpec enc_spec;
  std::unique_ptr<encoders::EegEncoder> encoder;
  std::unique_ptr<encoders::Projector> eeg_proj;
  std::unique_ptr<encoders::Projector> text_proj;
  std::unique_ptr<encoders::Projector> ssl_proj;
  std::unique_ptr<encoders::Projector> byol_predictor;
  std::unique_ptr<encoders::EegEncoder> target_encoder;
  std::unique_ptr<encoders::Projector> target_proj;
  std::unique_ptr<nn::Linear> pair_head;
  std::unique_ptr<ssl::CpcHead> cpc_head;

  static PretrainModel build(const ExperimentConfig& cfg, std::int64_t in_channels, Rng& rng) {
    PretrainModel m;
    m.cfg = cfg;
    m.enc_spec.in_channels = in_channels;
    m.enc_spec.filters_per_kernel = cfg.filters_per_kernel;
    m.enc_spec.input_len = cfg.crop_seconds * 100;
    m.encoder = std::make_unique<encoders::EegEncoder>(m.enc_spec, rng);
    const std::int64_t width = m.enc_spec.out_dim();
    switch (cfg.objective) {
      case Objective::ElmEl:
      case Objective::ElmMilJoint:
      case Objective::ElmMilEGivenL:
      case Objective::ElmMilLGivenE:
        m.eeg_proj = encoders::Projector::eeg_elm(width, rng);
        m.text_proj = encoders::Projector::text_elm(rng);
        break;
      case Objective::ElmL:
        m.eeg_proj = encoders::Projector::eeg_mflag(width, rng);
        break;
      case Objective::Byol:
        m.ssl_proj = std::make_unique<encoders::Projector>("proj.ssl", width, 256, 32,
                                                           encoders::Activation::Relu, false, rng);
        m.byol_predictor = std::make_unique<encoders::Projector>("proj.pred", 32, 256, 32,
                                                                 encoders::Activation::Relu, false, rng);
        m.target_encoder = std::make_unique<encoders::EegEncoder>(m.enc_spec, rng);
        m.target_proj = std::make_unique<encoders::Projector>("target.proj", width, 256, 32,
                                                              encoders::Activation::Relu, false, rng);
        m.sync_target(1.0);  // target starts as a copy of the online network
        break;
      case Objective::Vicreg:
        m.ssl_proj = std::make_unique<encoders::Projector>("proj.ssl", width, 256, 256,
                                                           encoders::Activation::Relu, false, rng);
        break;
      case Objective::Contrawr:
        m.ssl_proj = std::make_unique<encoders::Projector>("proj.ssl", width, 256, 32,
                                                           encoders::Activation::Relu, false, rng);
        break;
      case Objective::Rp:
        m.pair_head = std::make_unique<nn::Linear>("head.pair", width, 1, rng);
        break;
      case Objective::Ts:
        m.pair_head = std::make_unique<nn::Linear>("head.pair", 2 * width, 1, rng);
        break;
      case Objective::Cpc:
        m.cpc_head = std::make_unique<ssl::CpcHead>("head.cpc", width, width, cfg.cpc_steps, rng);
        break;
      case Objective::Supervised:
        break;  // the supervised reference head lives in the evaluation module
    }
    return m;
  }

  // Everything the optimizer updates (the BYOL target is EMA-driven).
  std::vector<nn::Param*> trainable_params() {
    std::vector<nn::Param*> out;
    encoder->collect(out);
    if (eeg_proj) eeg_proj->collect(out);
    if (text_proj) text_proj->collect(out);
    if (ssl_proj) ssl_proj->collect(out);
    if (byol_predictor) byol_predictor->collect(out);
    if (pair_head) pair_head->collect(out);
    if (cpc_head) cpc_head->collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : trainable_params()) p->grad.zero();
  }

  // EMA update of the target network; rate 1 copies outright.
  void sync_target(double rate) {
    if (!target_encoder) return;
    auto copy = [&](nn::Module& src, nn::Module& dst) {
      std::vector<nn::Param*> a, b;
      src.collect(a);
      dst.collect(b);
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i]->value.v.size(); ++j)
          b[i]->value.v[j] = (1.0 - rate) * b[i]->value.v[j] + rate * a[i]->value.v[j];
    };
    copy(*encoder, *target_encoder);
    copy(*ssl_proj, *target_proj);
    auto src_buf = encoder->buffers();
    auto dst_buf = target_encoder->buffers();
    for (std::size_t i = 0; i < src_buf.size(); ++i)
      for (std::size_t j = 0; j < src_buf[i].second->v.size(); ++j)
        dst_buf[i].second->v[j] = (1.0 - rate) * dst_buf[i].second->v[j] + rate * src_buf[i].second->v[j];
    auto src_pb = ssl_proj->buffers("proj.ssl");
    auto dst_pb = target_proj->buffers("target.proj");
    for (std::size_t i = 0; i < src_pb.size(); ++i)
      for (std::size_t j = 0; j < src_pb[i].second->v.size(); ++j)
        dst_pb[i].second->v[j] = (1.0 - rate) * dst_pb[i].second->v[j] + rate * src_pb[i].second->v[j];
  }

  std::map<std::string, NDArray> snapshot() {
    std::map<std::string, NDArray> out;
    auto add_params = [&](nn::Module& mod, const std::string& prefix) {
      std::vector<nn::Param*> ps;
      mod.collect(ps);
      for (auto* p : ps) out.emplace(prefix + p->name, p->value);
    };
    add_params(*encoder, "");
    for (auto& [n, t] : encoder->buffers()) out.emplace(n, *t);
    if (eeg_proj) {
      add_params(*eeg_proj, "");
      for (auto& [n, t] : eeg_proj->buffers("proj.eeg")) out.emplace(n, *t);
    }
    if (text_proj) {
      add_params(*text_proj, "");
      for (auto& [n, t] : text_proj->buffers("proj.text")) out.emplace(n, *t);
    }
    if (ssl_proj) {
      add_params(*ssl_proj, "");
      for (auto& [n, t] : ssl_proj->buffers("proj.ssl")) out.emplace(n, *t);
    }
    if (byol_predictor) add_params(*byol_predictor, "");
    if (target_encoder) {
      add_params(*target_encoder, "target.");
      for (auto& [n, t] : target_encoder->buffers()) out.emplace("target." + n, *t);
      add_params(*target_proj, "");
      for (auto& [n, t] : target_proj->buffers("target.proj")) out.emplace(n, *t);
    }
    if (pair_head) add_params(*pair_head, "");
    if (cpc_head) add_params(*cpc_head, "");
    return out;
  }

  void restore(const std::map<std::string, NDArray>& tensors) {
    auto take = [&](const std::string& name, NDArray& dst) {
      auto it = tensors.find(name);
      require(it != tensors.end(), "checkpoint is missing tensor '" + name + "'");
      require(it->second.shape == dst.shape, "checkpoint tensor shape mismatch for '" + name + "'");
      dst = it->second;
    };
    auto restore_params = [&](nn::Module& mod, const std::string& prefix) {
      std::vector<nn::Param*> ps;
      mod.collect(ps);
      for (auto* p : ps) take(prefix + p->name, p->value);
    };
    restore_params(*encoder, "");
    for (auto& [n, t] : encoder->buffers()) take(n, *t);
    if (eeg_proj) {
      restore_params(*eeg_proj, "");
      for (auto& [n, t] : eeg_proj->buffers("proj.eeg")) take(n, *t);
    }
    if (text_proj) {
      restore_params(*text_proj, "");
      for (auto& [n, t] : text_proj->buffers("proj.text")) take(n, *t);
    }
    if (ssl_proj) {
      restore_params(*ssl_proj, "");
      for (auto& [n, t] : ssl_proj->buffers("proj.ssl")) take(n, *t);
    }
    if (byol_predictor) restore_params(*byol_predictor, "");
    if (target_encoder) {
      restore_params(*target_encoder, "target.");
      for (auto& [n, t] : target_encoder->buffers()) take("target." + n, *t);
      restore_params(*target_proj, "");
      for (auto& [n, t] : target_proj->buffers("target.proj")) take(n, *t);
    }
    if (pair_head) restore_params(*pair_head, "");
    if (cpc_head) restore_params(*cpc_head, "");
  }

  static PretrainModel from_checkpoint(const Checkpoint& ck, std::int64_t in_channels) {
    Rng rng(ck.config.seed);
    PretrainModel m = build(ck.config, in_channels, rng);
    m.restore(ck.tensors);
    return m;
  }

  // Batched eval-mode embedding of crops: [n, width].
  NDArray embed_crops(const std::vector<const NDArray*>& crops, std::int64_t chunk = 64) {
    require(!crops.empty(), "embed_crops: empty input");
    const std::int64_t n = static_cast<std::int64_t>(crops.size());
    const std::int64_t C = crops[0]->dim(0), L = crops[0]->dim(1);
    NDArray out({n, enc_spec.out_dim()});
    for (std::int64_t lo = 0; lo < n; lo += chunk) {
      const std::int64_t hi = std::min(n, lo + chunk);
      NDArray x({hi - lo, C, L});
      for (std::int64_t i = lo; i < hi; ++i)
        std::copy(crops[static_cast<std::size_t>(i)]->v.begin(), crops[static_cast<std::size_t>(i)]->v.end(),
                  x.v.begin() + static_cast<std::ptrdiff_t>((i - lo) * C * L));
      NDArray h = encoder->forward(x, false);
      for (std::int64_t i = lo; i < hi; ++i)
        for (std::int64_t j = 0; j < out.dim(1); ++j) out.at(i, j) = h.at(i - lo, j);
    }
    return out;
  }

  NDArray project_eeg(const NDArray& h) {
    require(eeg_proj != nullptr, "model has no EEG projector");
    return eeg_proj->forward(h, false);
  }

  // Text side of the shared latent space; identity for the unprojected kind.
  NDArray project_text(const NDArray& l_raw) {
    if (!text_proj) return l_raw;
    return text_proj->forward(l_raw, false);
  }
};

// ---------------------------------------------------------------------------
// Batch construction
// ---------------------------------------------------------------------------

struct MultimodalBatch {
  NDArray crops;  // [B_e, C, L]
  std::vector<std::string> crop_subjects;
  std::vector<std::string> text_subjects;
  std::vector<std::string> texts;
  losses::PositiveSets pos;
  std::vector<std::string> ids;  // diagnostics: subject/crop identifiers
};

// Draws B/N subjects without replacement, then up to N crops and up to M
// text units within each; positive sets follow subject identity.
inline MultimodalBatch build_batch(const TrainData& data, const std::vector<std::size_t>& subject_pool,
                                   const ExperimentConfig& cfg, Rng& rng) {
  require(!subject_pool.empty(), "build_batch: no eligible subjects in the pretrain split");
  const std::int64_t B = cfg.resolved_batch_size();
  const std::int64_t n_subj =
      std::max<std::int64_t>(1, std::min<std::int64_t>(B / cfg.crops_per_subject,
                                                       static_cast<std::int64_t>(subject_pool.size())));
  auto chosen = rng.sample_without_replacement(static_cast<std::int64_t>(subject_pool.size()), n_subj);

  MultimodalBatch batch;
  std::vector<const NDArray*> crop_ptrs;
  const bool paired = cfg.objective == Objective::ElmEl || cfg.objective == Objective::ElmL;
  for (auto ci : chosen) {
    const SubjectData& s = data.subjects[subject_pool[static_cast<std::size_t>(ci)]];
    const std::int64_t n_crops = std::min<std::int64_t>(cfg.crops_per_subject,
                                                        static_cast<std::int64_t>(s.crops.size()));
    auto crop_idx = rng.sample_without_replacement(static_cast<std::int64_t>(s.crops.size()), n_crops);

    std::vector<std::string> units;
    for (const auto* rep : s.reports) {
      auto u = textseg::eligible_units(*rep, cfg.clusters, cfg.granularity);
      units.insert(units.end(), u.begin(), u.end());
    }
    require(!units.empty(), "build_batch: subject " + s.subject_id + " has no eligible text");

    if (paired) {
      // One text unit drawn per crop; the pairing is positional.
      for (auto idx : crop_idx) {
        crop_ptrs.push_back(s.crops[static_cast<std::size_t>(idx)]);
        batch.crop_subjects.push_back(s.subject_id);
        batch.ids.push_back(concat(s.subject_id, "#", idx));
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(units.size()) - 1);
        batch.texts.push_back(units[static_cast<std::size_t>(pick)]);
        batch.text_subjects.push_back(s.subject_id);
      }
    } else {
      for (auto idx : crop_idx) {
        crop_ptrs.push_back(s.crops[static_cast<std::size_t>(idx)]);
        batch.crop_subjects.push_back(s.subject_id);
        batch.ids.push_back(concat(s.subject_id, "#", idx));
      }
      const std::int64_t n_texts =
          std::min<std::int64_t>(cfg.texts_per_subject, static_cast<std::int64_t>(units.size()));
      auto text_idx = rng.sample_without_replacement(static_cast<std::int64_t>(units.size()), n_texts);
      for (auto ti : text_idx) {
        batch.texts.push_back(units[static_cast<std::size_t>(ti)]);
        batch.text_subjects.push_back(s.subject_id);
      }
    }
  }
  batch.crops = NDArray({static_cast<std::int64_t>(crop_ptrs.size()), data.channels, data.crop_len});
  for (std::size_t i = 0; i < crop_ptrs.size(); ++i)
    std::copy(crop_ptrs[i]->v.begin(), crop_ptrs[i]->v.end(),
              batch.crops.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * data.channels * data.crop_len));
  batch.pos = losses::PositiveSets::from_subjects(batch.crop_subjects, batch.text_subjects);
  return batch;
}

// Inverse-frequency anchor weights so every subject contributes equally.
inline std::vector<double> subject_anchor_weights(const std::vector<std::string>& subjects) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& s : subjects) ++counts[s];
  std::vector<double> w(subjects.size());
  const double n_subj = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < subjects.size(); ++i)
    w[i] = 1.0 / (n_subj * static_cast<double>(counts[subjects[i]]));
  return w;
}

// ---------------------------------------------------------------------------
// Pretraining loop
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::shared_ptr<const encoders::TextEncoder> text_encoder)
      : cfg_(std::move(cfg)), text_encoder_(std::move(text_encoder)) {}

  // Runs the full schedule and writes checkpoint, resolved config, and the
  // per-step loss log into cfg.out_dir.
  Checkpoint run() {
    require(!cfg_.manifest.empty(), "config must name a manifest");
    auto manifest = corpus::load_manifest(cfg_.manifest);
    Rng data_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::string> warnings;
    auto recs = load_recordings(manifest, corpus::Split::Pretrain, cfg_, is_multimodal(cfg_.objective),
                                &warnings);
    require(!recs.empty(), "pretrain split is empty after duration filtering");
    TrainData data = TrainData::build(std::move(recs), cfg_, data_rng, &warnings);
    for (const auto& w : warnings) std::cerr << "[elmkit] warning: " << w << "\n";
    return run_on(data);
  }

  // Same loop on an already-loaded dataset (synthetic harness entry point).
  Checkpoint run_on(TrainData& data) {
    const std::uint64_t fingerprint_before = text_encoder_ ? text_encoder_->fingerprint() : 0;
    Rng rng(cfg_.seed);
    PretrainModel model = PretrainModel::build(cfg_, data.channels, rng);

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
      if (is_multimodal(cfg_.objective) &&
          !data.subjects[i].text_eligible(cfg_.clusters, cfg_.granularity))
        continue;
      if (!data.subjects[i].crops.empty()) pool.push_back(i);
    }
    require(!pool.empty(), "no eligible subjects for pretraining");

    std::int64_t eligible_crops = 0;
    for (auto i : pool) eligible_crops += static_cast<std::int64_t>(data.subjects[i].crops.size());

    const std::int64_t B = cfg_.resolved_batch_size();
    const std::int64_t steps_per_epoch = std::max<std::int64_t>(1, eligible_crops / B);
    optim::LrSchedule sched{cfg_.resolved_base_lr(), B, cfg_.warmup_epochs, cfg_.epochs, steps_per_epoch};
    optim::Lars lars(model.trainable_params(), cfg_.weight_decay);

    std::filesystem::create_directories(cfg_.out_dir);
    cfg_.save((std::filesystem::path(cfg_.out_dir) / "config.resolved.cfg").string());
    std::ofstream log((std::filesystem::path(cfg_.out_dir) / "train_log.tsv").string());
    log << "epoch\tstep\tglobal_step\tlr\tloss\n";

    std::int64_t global_step = 0;
    for (std::int64_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      for (std::int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
        model.zero_grad();
        const double lr = sched.lr_at(global_step);
        std::string batch_ids;
        const double loss = train_step(model, data, pool, rng, &batch_ids);
        if (!std::isfinite(loss))
          throw RuntimeError(concat("training diverged at epoch ", epoch, " step ", step,
                                    " (loss not finite); batch: ", batch_ids));
        lars.step(lr);
        if (model.target_encoder) model.sync_target(1.0 - cfg_.byol_ema);
        log << epoch << '\t' << step << '\t' << global_step << '\t' << lr << '\t' << loss << "\n";
      }
      log.flush();
    }

    if (text_encoder_)
      require(text_encoder_->fingerprint() == fingerprint_before,
              "frozen-text contract violated: text encoder changed during pretraining");

    Checkpoint ck;
    ck.config = cfg_;
    ck.tensors = model.snapshot();
    ck.rng_state = rng.state();
    ck.encoder_param_count = model.encoder->param_count();
    ck.total_param_count = 0;
    for (auto* p : model.trainable_params()) ck.total_param_count += p->numel();
    ck.text_fingerprint = fingerprint_before;
    ck.save((std::filesystem::path(cfg_.out_dir) / "checkpoint.elmk").string());
    return ck;
  }

  // One optimizer step worth of forward/backward; returns the loss.
  double train_step(PretrainModel& model, const TrainData& data, const std::vector<std::size_t>& pool,
                    Rng& rng, std::string* batch_ids = nullptr) {
    switch (cfg_.objective) {
      case Objective::ElmEl:
      case Objective::ElmL:
      case Objective::ElmMilJoint:
      case Objective::ElmMilEGivenL:
      case Objective::ElmMilLGivenE:
        return multimodal_step(model, data, pool, rng, batch_ids);
      case Objective::Byol:
      case Objective::Vicreg:
      case Objective::Contrawr:
        return two_view_step(model, data, pool, rng, batch_ids);
      case Objective::Rp:
        return rp_step(model, data, pool, rng, batch_ids);
      case Objective::Ts:
        return ts_step(model, data, pool, rng, batch_ids);
      case Objective::Cpc:
        return cpc_step(model, data, pool, rng, batch_ids);
      default:
        fail("objective '", to_string(cfg_.objective), "' is not handled by the pretraining loop");
    }
  }

  NDArray embed_text_batch(const std::vector<std::string>& texts) {
    NDArray out({static_cast<std::int64_t>(texts.size()), encoders::kTextDim});
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto it = text_cache_.find(texts[i]);
      if (it == text_cache_.end())
        it = text_cache_.emplace(texts[i], text_encoder_->embed(texts[i])).first;
      for (std::int64_t j = 0; j < encoders::kTextDim; ++j)
        out.at(static_cast<std::int64_t>(i), j) = it->second[j];
    }
    return out;
  }

 private:
  double multimodal_step(PretrainModel& model, const TrainData& data,
                         const std::vector<std::size_t>& pool, Rng& rng, std::string* batch_ids) {
    require(text_encoder_ != nullptr, "multimodal objectives need a text encoder");
    auto batch = build_batch(data, pool, cfg_, rng);
    if (batch_ids) {
      for (const auto& id : batch.ids) *batch_ids += id + " ";
    }
    NDArray h = model.encoder->forward(batch.crops, true);
    NDArray l_raw = embed_text_batch(batch.texts);

    double loss = 0.0;
    NDArray dh;
    if (cfg_.objective == Objective::ElmL) {
      NDArray e = model.eeg_proj->forward(h, true);
      auto res = losses::mflag_loss(h, e, l_raw);
      loss = res.total;
      dh = model.eeg_proj->backward(res.d_proj);
      for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += res.d_pre.v[i];
    } else {
      NDArray e = model.eeg_proj->forward(h, true);
      NDArray l = model.text_proj->forward(l_raw, true);
      losses::LossGrad res;
      if (cfg_.objective == Objective::ElmEl) {
        res = losses::info_nce_grad(e, l, cfg_.temperature);
      } else {
        losses::MilDirection dir = losses::MilDirection::Joint;
        if (cfg_.objective == Objective::ElmMilEGivenL) dir = losses::MilDirection::EegGivenText;
        if (cfg_.objective == Objective::ElmMilLGivenE) dir = losses::MilDirection::TextGivenEeg;
        const auto mode = losses::aggregation_from_string(cfg_.aggregation);
        if (cfg_.subject_reweight) {
          auto wt = subject_anchor_weights(batch.text_subjects);
          auto wc = subject_anchor_weights(batch.crop_subjects);
          res = losses::mil_info_nce_grad(e, l, batch.pos, dir, cfg_.temperature, mode, &wt, &wc);
        } else {
          res = losses::mil_info_nce_grad(e, l, batch.pos, dir, cfg_.temperature, mode);
        }
      }
      loss = res.value;
      dh = model.eeg_proj->backward(res.d_eeg);
      model.text_proj->backward(res.d_text);  // stops at the frozen text embeddings
    }
    model.encoder->backward(dh);
    return loss;
  }

  // Crop sample shared by the EEG-only objectives.
  std::vector<std::pair<std::size_t, std::int64_t>> sample_crop_refs(const TrainData& data,
                                                                     const std::vector<std::size_t>& pool,
                                                                     std::int64_t n, Rng& rng) {
    std::vector<std::pair<std::size_t, std::int64_t>> all;
    for (auto si : pool)
      for (std::size_t c = 0; c < data.subjects[si].crops.size(); ++c)
        all.emplace_back(si, static_cast<std::int64_t>(c));
    auto idx = rng.sample_without_replacement(static_cast<std::int64_t>(all.size()),
                                              std::min<std::int64_t>(n, static_cast<std::int64_t>(all.size())));
    std::vector<std::pair<std::size_t, std::int64_t>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
    return out;
  }

  NDArray stack_crops(const TrainData& data, const std::vector<const NDArray*>& ptrs) {
    NDArray x({static_cast<std::int64_t>(ptrs.size()), data.channels, data.crop_len});
    for (std::size_t i = 0; i < ptrs.size(); ++i)
      std::copy(ptrs[i]->v.begin(), ptrs[i]->v.end(),
                x.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * data.channels * data.crop_len));
    return x;
  }

  double two_view_step(PretrainModel& model, const TrainData& data, const std::vector<std::size_t>& pool,
                       Rng& rng, std::string* batch_ids) {
    const std::int64_t B = std::max<std::int64_t>(2, cfg_.resolved_batch_size());
    auto refs = sample_crop_refs(data, pool, B, rng);
    const std::int64_t n = static_cast<std::int64_t>(refs.size());
    require(n >= 2, "two-view objectives need at least 2 crops");
    // Two independently augmented views, concatenated along the batch.
    NDArray x({2 * n, data.channels, data.crop_len});
    for (std::int64_t v = 0; v < 2; ++v)
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& [si, ci] = refs[static_cast<std::size_t>(i)];
        if (batch_ids && v == 0) *batch_ids += concat(data.subjects[si].subject_id, "#", ci, " ");
        eegprep::Crop c;
        c.data = *data.subjects[si].crops[static_cast<std::size_t>(ci)];
        auto aug = ssl::augment(c, rng);
        std::copy(aug.data.v.begin(), aug.data.v.end(),
                  x.v.begin() + static_cast<std::ptrdiff_t>((v * n + i) * data.channels * data.crop_len));
      }

    NDArray h = model.encoder->forward(x, true);
    NDArray z = model.ssl_proj->forward(h, true);
    auto take_rows = [&](const NDArray& m, std::int64_t lo, std::int64_t cnt) {
      NDArray out({cnt, m.dim(1)});
      for (std::int64_t i = 0; i < cnt; ++i)
        for (std::int64_t j = 0; j < m.dim(1); ++j) out.at(i, j) = m.at(lo + i, j);
      return out;
    };

    double loss = 0.0;
    NDArray dz({2 * n, z.dim(1)});
    if (cfg_.objective == Objective::Byol) {
      NDArray p = model.byol_predictor->forward(z, true);
      // Target consumes the views swapped so that row i pairs with the other view.
      NDArray x_sw({2 * n, data.channels, data.crop_len});
      const std::int64_t half = n * data.channels * data.crop_len;
      std::copy(x.v.begin() + half, x.v.end(), x_sw.v.begin());
      std::copy(x.v.begin(), x.v.begin() + half, x_sw.v.begin() + half);
      NDArray ht = model.target_encoder->forward(x_sw, true);
      NDArray zt = model.target_proj->forward(ht, true);
      auto res = ssl::byol_loss(p, zt);
      loss = res.value;
      dz = model.byol_predictor->backward(res.d_online);
    } else if (cfg_.objective == Objective::Vicreg) {
      auto res = ssl::vicreg_loss(take_rows(z, 0, n), take_rows(z, n, n));
      loss = res.value;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < z.dim(1); ++j) {
          dz.at(i, j) = res.d_z1.at(i, j);
          dz.at(n + i, j) = res.d_z2.at(i, j);
        }
    } else {
      auto res = ssl::contrawr_loss(take_rows(z, 0, n), take_rows(z, n, n), cfg_.temperature);
      loss = res.value;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < z.dim(1); ++j) {
          dz.at(i, j) = res.d_z1.at(i, j);
          dz.at(n + i, j) = res.d_z2.at(i, j);
        }
    }
    NDArray dh = model.ssl_proj->backward(dz);
    model.encoder->backward(dh);
    return loss;
  }

  double rp_step(PretrainModel& model, const TrainData& data, const std::vector<std::size_t>& pool,
                 Rng& rng, std::string* batch_ids) {
    const std::int64_t n_pairs = std::max<std::int64_t>(2, cfg_.resolved_batch_size() / 2);
    std::vector<const NDArray*> a_ptrs, b_ptrs;
    std::vector<double> labels;
    for (std::int64_t i = 0; i < n_pairs; ++i) {
      const bool positive = rng.uniform() < 0.5;
      auto [si, ci] = pick_anchor(data, pool, rng, positive ? 1 : 0);
      const SubjectData& s = data.subjects[si];
      a_ptrs.push_back(s.crops[static_cast<std::size_t>(ci)]);
      if (batch_ids) *batch_ids += concat(s.subject_id, "#", ci, " ");
      if (positive) {
        const std::int64_t other = neighbor_in_recording(s, ci, cfg_.rp_pos_max, rng);
        b_ptrs.push_back(s.crops[static_cast<std::size_t>(other)]);
        labels.push_back(1.0);
      } else {
        b_ptrs.push_back(negative_crop(data, pool, si, ci, rng));
        labels.push_back(0.0);
      }
    }
    const std::int64_t n = static_cast<std::int64_t>(a_ptrs.size());
    std::vector<const NDArray*> all = a_ptrs;
    all.insert(all.end(), b_ptrs.begin(), b_ptrs.end());
    NDArray x = stack_crops(data, all);
    NDArray h = model.encoder->forward(x, true);
    NDArray ha({n, h.dim(1)}), hb({n, h.dim(1)});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h.dim(1); ++j) {
        ha.at(i, j) = h.at(i, j);
        hb.at(i, j) = h.at(n + i, j);
      }
    auto res = ssl::rp_loss(ha, hb, labels, *model.pair_head);
    NDArray dh({2 * n, h.dim(1)});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h.dim(1); ++j) {
        dh.at(i, j) = res.d_a.at(i, j);
        dh.at(n + i, j) = res.d_b.at(i, j);
      }
    model.encoder->backward(dh);
    return res.value;
  }

  double ts_step(PretrainModel& model, const TrainData& data, const std::vector<std::size_t>& pool,
                 Rng& rng, std::string* batch_ids) {
    const std::int64_t n_trip = std::max<std::int64_t>(2, cfg_.resolved_batch_size() / 3);
    std::vector<const NDArray*> a_ptrs, b_ptrs, c_ptrs;
    std::vector<double> labels;
    for (std::int64_t i = 0; i < n_trip; ++i) {
      auto [si, ci] = pick_anchor(data, pool, rng, 2);
      const SubjectData& s = data.subjects[si];
      // Three in-order crops of one recording within the positive window.
      const std::int64_t rec = s.recording_of_crop[static_cast<std::size_t>(ci)];
      std::vector<std::int64_t> same;
      for (std::size_t c = 0; c < s.crops.size(); ++c)
        if (s.recording_of_crop[c] == rec) same.push_back(static_cast<std::int64_t>(c));
      const std::int64_t pos_in_rec = static_cast<std::int64_t>(
          std::find(same.begin(), same.end(), ci) - same.begin());
      const std::int64_t span = std::min<std::int64_t>(cfg_.rp_pos_max, 2);
      const std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(same.size()) - 1,
                                                     pos_in_rec + 2 * span);
      require(hi - pos_in_rec >= 2, "ts_step: recording too short for a triplet");
      const std::int64_t j = pos_in_rec + 1 + rng.uniform_int(0, (hi - pos_in_rec - 2));
      const std::int64_t k = j + 1 + rng.uniform_int(0, hi - j - 1);
      const bool in_order = rng.uniform() < 0.5;
      if (batch_ids) *batch_ids += concat(s.subject_id, "#", ci, " ");
      a_ptrs.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(pos_in_rec)])]);
      if (in_order) {
        b_ptrs.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(j)])]);
        c_ptrs.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(k)])]);
        labels.push_back(1.0);
      } else {
        b_ptrs.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(k)])]);
        c_ptrs.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(j)])]);
        labels.push_back(0.0);
      }
    }
    const std::int64_t n = static_cast<std::int64_t>(a_ptrs.size());
    std::vector<const NDArray*> all = a_ptrs;
    all.insert(all.end(), b_ptrs.begin(), b_ptrs.end());
    all.insert(all.end(), c_ptrs.begin(), c_ptrs.end());
    NDArray x = stack_crops(data, all);
    NDArray h = model.encoder->forward(x, true);
    auto rows = [&](std::int64_t lo) {
      NDArray out({n, h.dim(1)});
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < h.dim(1); ++j) out.at(i, j) = h.at(lo + i, j);
      return out;
    };
    auto res = ssl::ts_loss(rows(0), rows(n), rows(2 * n), labels, *model.pair_head);
    NDArray dh({3 * n, h.dim(1)});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h.dim(1); ++j) {
        dh.at(i, j) = res.d_a.at(i, j);
        dh.at(n + i, j) = res.d_b.at(i, j);
        dh.at(2 * n + i, j) = res.d_c.at(i, j);
      }
    model.encoder->backward(dh);
    return res.value;
  }

  double cpc_step(PretrainModel& model, const TrainData& data, const std::vector<std::size_t>& pool,
                  Rng& rng, std::string* batch_ids) {
    const std::int64_t span = cfg_.cpc_context + cfg_.cpc_steps;
    const std::int64_t n_seq =
        std::max<std::int64_t>(1, cfg_.resolved_batch_size() / (span + cfg_.cpc_steps * cfg_.cpc_negatives));

    struct Seq {
      std::vector<const NDArray*> context, future;
      std::vector<std::vector<const NDArray*>> negs;
    };
    std::vector<Seq> seqs;
    std::vector<const NDArray*> flat;
    for (std::int64_t q = 0; q < n_seq; ++q) {
      // A recording long enough for context + prediction steps.
      std::size_t si = 0;
      std::int64_t rec = -1;
      std::vector<std::int64_t> same;
      for (int attempts = 0; attempts < 200 && rec < 0; ++attempts) {
        si = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        const SubjectData& s = data.subjects[si];
        const std::int64_t ci = rng.uniform_int(0, static_cast<std::int64_t>(s.crops.size()) - 1);
        const std::int64_t r = s.recording_of_crop[static_cast<std::size_t>(ci)];
        same.clear();
        for (std::size_t c = 0; c < s.crops.size(); ++c)
          if (s.recording_of_crop[c] == r) same.push_back(static_cast<std::int64_t>(c));
        if (static_cast<std::int64_t>(same.size()) >= span) rec = r;
      }
      require(rec >= 0, "cpc_step: no recording long enough for the configured context and steps");
      const SubjectData& s = data.subjects[si];
      if (batch_ids) *batch_ids += s.subject_id + " ";
      const std::int64_t start =
          rng.uniform_int(0, static_cast<std::int64_t>(same.size()) - span);
      Seq seq;
      for (std::int64_t t = 0; t < cfg_.cpc_context; ++t)
        seq.context.push_back(s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(start + t)])]);
      for (std::int64_t t = 0; t < cfg_.cpc_steps; ++t) {
        seq.future.push_back(
            s.crops[static_cast<std::size_t>(same[static_cast<std::size_t>(start + cfg_.cpc_context + t)])]);
        std::vector<const NDArray*> negs;
        for (std::int64_t g = 0; g < cfg_.cpc_negatives; ++g)
          negs.push_back(negative_crop(data, pool, si, -1, rng));
        seq.negs.push_back(std::move(negs));
      }
      for (auto* p : seq.context) flat.push_back(p);
      for (auto* p : seq.future) flat.push_back(p);
      for (auto& bank : seq.negs)
        for (auto* p : bank) flat.push_back(p);
      seqs.push_back(std::move(seq));
    }

    NDArray x = stack_crops(data, flat);
    NDArray h = model.encoder->forward(x, true);
    const std::int64_t width = h.dim(1);
    NDArray dh({h.dim(0), width});

    double loss = 0.0;
    std::int64_t cursor = 0;
    for (auto& seq : seqs) {
      NDArray ctx({cfg_.cpc_context, width});
      for (std::int64_t t = 0; t < cfg_.cpc_context; ++t)
        for (std::int64_t j = 0; j < width; ++j) ctx.at(t, j) = h.at(cursor + t, j);
      const std::int64_t fut_base = cursor + cfg_.cpc_context;
      NDArray fut({cfg_.cpc_steps, width});
      for (std::int64_t t = 0; t < cfg_.cpc_steps; ++t)
        for (std::int64_t j = 0; j < width; ++j) fut.at(t, j) = h.at(fut_base + t, j);
      const std::int64_t neg_base = fut_base + cfg_.cpc_steps;
      std::vector<NDArray> negs;
      for (std::int64_t t = 0; t < cfg_.cpc_steps; ++t) {
        NDArray bank({cfg_.cpc_negatives, width});
        for (std::int64_t g = 0; g < cfg_.cpc_negatives; ++g)
          for (std::int64_t j = 0; j < width; ++j)
            bank.at(g, j) = h.at(neg_base + t * cfg_.cpc_negatives + g, j);
        negs.push_back(std::move(bank));
      }
      auto res = ssl::cpc_loss(*model.cpc_head, ctx, fut, negs);
      const double inv = 1.0 / static_cast<double>(seqs.size());
      loss += res.value * inv;
      for (std::int64_t t = 0; t < cfg_.cpc_context; ++t)
        for (std::int64_t j = 0; j < width; ++j) dh.at(cursor + t, j) += inv * res.d_context.at(t, j);
      for (std::int64_t t = 0; t < cfg_.cpc_steps; ++t)
        for (std::int64_t j = 0; j < width; ++j) dh.at(fut_base + t, j) += inv * res.d_future.at(t, j);
      for (std::int64_t t = 0; t < cfg_.cpc_steps; ++t)
        for (std::int64_t g = 0; g < cfg_.cpc_negatives; ++g)
          for (std::int64_t j = 0; j < width; ++j)
            dh.at(neg_base + t * cfg_.cpc_negatives + g, j) +=
                inv * res.d_negatives[static_cast<std::size_t>(t)].at(g, j);
      cursor = neg_base + cfg_.cpc_steps * cfg_.cpc_negatives;
      // The bilinear/GRU gradients accumulated unscaled; rescale once at the end.
    }
    // Average the head gradients over sequences to match the reported loss.
    {
      std::vector<nn::Param*> ps;
      model.cpc_head->collect(ps);
      const double inv = 1.0 / static_cast<double>(seqs.size());
      for (auto* p : ps)
        for (auto& g : p->grad.v) g *= inv;
    }
    model.encoder->backward(dh);
    return loss;
  }

  // Picks a subject (uniform over the pool, retrying until it has a
  // recording with at least `min_margin` crops after some index).
  std::pair<std::size_t, std::int64_t> pick_anchor(const TrainData& data,
                                                   const std::vector<std::size_t>& pool, Rng& rng,
                                                   std::int64_t min_after) {
    for (int attempts = 0; attempts < 1000; ++attempts) {
      const std::size_t si =
          pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
      const SubjectData& s = data.subjects[si];
      if (s.crops.empty()) continue;
      const std::int64_t ci = rng.uniform_int(0, static_cast<std::int64_t>(s.crops.size()) - 1);
      if (min_after == 0) return {si, ci};
      const std::int64_t rec = s.recording_of_crop[static_cast<std::size_t>(ci)];
      std::int64_t after = 0;
      for (std::size_t c = static_cast<std::size_t>(ci) + 1; c < s.crops.size(); ++c)
        if (s.recording_of_crop[c] == rec) ++after;
      if (after >= min_after) return {si, ci};
    }
    fail("could not sample an anchor crop with ", min_after, " successors; recordings too short");
  }

  // A crop within `max_dist` of the anchor, same recording.
  std::int64_t neighbor_in_recording(const SubjectData& s, std::int64_t ci, std::int64_t max_dist,
                                     Rng& rng) {
    const std::int64_t rec = s.recording_of_crop[static_cast<std::size_t>(ci)];
    std::vector<std::int64_t> cands;
    for (std::size_t c = 0; c < s.crops.size(); ++c) {
      if (static_cast<std::int64_t>(c) == ci || s.recording_of_crop[c] != rec) continue;
      if (std::abs(static_cast<std::int64_t>(c) - ci) <= max_dist) cands.push_back(static_cast<std::int64_t>(c));
    }
    require(!cands.empty(), "no temporal neighbor within the positive window");
    return cands[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cands.size()) - 1))];
  }

  // Negative sample: another subject's crop (between-subject sampling), or a
  // far-apart crop of the same recording when disabled.
  const NDArray* negative_crop(const TrainData& data, const std::vector<std::size_t>& pool,
                               std::size_t anchor_subject, std::int64_t anchor_crop, Rng& rng) {
    if (cfg_.between_subject_negatives && pool.size() > 1) {
      for (int attempts = 0; attempts < 1000; ++attempts) {
        const std::size_t si =
            pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        if (si == anchor_subject) continue;
        const SubjectData& s = data.subjects[si];
        if (s.crops.empty()) continue;
        return s.crops[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s.crops.size()) - 1))];
      }
    }
    const SubjectData& s = data.subjects[anchor_subject];
    std::vector<std::int64_t> cands;
    for (std::size_t c = 0; c < s.crops.size(); ++c)
      if (anchor_crop < 0 || std::abs(static_cast<std::int64_t>(c) - anchor_crop) >= cfg_.rp_neg_min)
        cands.push_back(static_cast<std::int64_t>(c));
    require(!cands.empty(), "no negative crop available outside the negative window");
    return s.crops[static_cast<std::size_t>(
        cands[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cands.size()) - 1))])];
  }

  ExperimentConfig cfg_;
  std::shared_ptr<const encoders::TextEncoder> text_encoder_;
  std::map<std::string, NDArray> text_cache_;
};

}  // namespace elmkit::train
