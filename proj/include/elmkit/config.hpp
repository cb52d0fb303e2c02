#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/textseg.hpp"

namespace elmkit::train {

enum class Objective {
  ElmEl,          // bidirectional InfoNCE in a shared projected space
  ElmL,           // alignment + orthogonality in the text encoder's space
  ElmMilJoint,    // multiple-instance InfoNCE, both directions
  ElmMilEGivenL,  // EEG positives per text anchor only
  ElmMilLGivenE,  // text positives per EEG anchor only
  Byol,
  Vicreg,
  Contrawr,
  Rp,
  Ts,
  Cpc,
  Supervised,
};

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::ElmEl: return "elm_el";
    case Objective::ElmL: return "elm_l";
    case Objective::ElmMilJoint: return "elm_mil";
    case Objective::ElmMilEGivenL: return "elm_mil_e_given_l";
    case Objective::ElmMilLGivenE: return "elm_mil_l_given_e";
    case Objective::Byol: return "byol";
    case Objective::Vicreg: return "vicreg";
    case Objective::Contrawr: return "contrawr";
    case Objective::Rp: return "rp";
    case Objective::Ts: return "ts";
    case Objective::Cpc: return "cpc";
    default: return "supervised";
  }
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "elm_el") return Objective::ElmEl;
  if (s == "elm_l") return Objective::ElmL;
  if (s == "elm_mil") return Objective::ElmMilJoint;
  if (s == "elm_mil_e_given_l") return Objective::ElmMilEGivenL;
  if (s == "elm_mil_l_given_e") return Objective::ElmMilLGivenE;
  if (s == "byol") return Objective::Byol;
  if (s == "vicreg") return Objective::Vicreg;
  if (s == "contrawr") return Objective::Contrawr;
  if (s == "rp") return Objective::Rp;
  if (s == "ts") return Objective::Ts;
  if (s == "cpc") return Objective::Cpc;
  if (s == "supervised") return Objective::Supervised;
  fail("unknown objective '", s, "'");
}

inline bool is_multimodal(Objective o) {
  return o == Objective::ElmEl || o == Objective::ElmL || o == Objective::ElmMilJoint ||
         o == Objective::ElmMilEGivenL || o == Objective::ElmMilLGivenE;
}
inline bool is_mil(Objective o) {
  return o == Objective::ElmMilJoint || o == Objective::ElmMilEGivenL || o == Objective::ElmMilLGivenE;
}

struct ExperimentConfig {
  // data
  std::string manifest;
  std::string out_dir = "runs/default";
  std::string cache_dir;           // empty -> ELMKIT_CACHE env or no cache
  std::string lexicon = "default"; // heading lexicon file or "default"
  std::string montage = "default"; // bipolar pair file or "default"
  double min_duration_s = 70.0;
  double max_duration_s = 9000.0;
  double truncate_s = 2700.0;
  bool balance_pretrain = false;

  // objective & sampling
  Objective objective = Objective::ElmMilJoint;
  std::int64_t crop_seconds = 60;
  std::int64_t crops_per_subject = 32;  // max EEG positives per subject in a batch
  std::int64_t texts_per_subject = 8;   // max text positives per subject in a batch
  std::set<textseg::Cluster> clusters = {textseg::Cluster::ClinicalHistory,
                                         textseg::Cluster::RecordDescription,
                                         textseg::Cluster::Medication, textseg::Cluster::Interpretation};
  textseg::Granularity granularity = textseg::Granularity::Paragraph;
  std::string aggregation = "mean";  // mean | max | attention | sum
  bool shuffle_reports = false;      // pair EEG with another subject's report
  bool subject_reweight = false;     // weight anchors by inverse subject frequency
  std::int64_t max_crops_per_recording = -1;

  // optimization
  double temperature = 0.3;
  double base_lr = -1.0;       // <0 -> objective/crop-length default
  std::int64_t batch_size = -1;  // <0 -> crop-length default
  std::int64_t epochs = 50;
  std::int64_t warmup_epochs = 4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  // model
  std::int64_t filters_per_kernel = 32;

  // EEG-only specifics
  std::int64_t rp_pos_max = 2;
  std::int64_t rp_neg_min = 10;
  bool between_subject_negatives = true;
  std::int64_t cpc_steps = 4;
  std::int64_t cpc_negatives = 8;
  std::int64_t cpc_context = 4;
  double byol_ema = 0.996;

  // evaluation
  std::string eval_tasks = "retrieval,zeroshot,probe";
  std::string probe_fractions = "0.01,0.1,1.0";
  std::string eval_split = "test";

  double resolved_base_lr() const {
    if (base_lr > 0.0) return base_lr;
    const bool short_crops = crop_seconds <= 5;
    if (is_mil(objective)) return short_crops ? 0.02 : 0.06;
    if (is_multimodal(objective)) return 0.01;
    return short_crops ? 0.1 : 0.3;
  }

  std::int64_t resolved_batch_size() const {
    if (batch_size > 0) return batch_size;
    const std::int64_t len = crop_seconds * 100;
    if (is_multimodal(objective)) {
      if (len <= 2000) return 2048;
      if (len <= 3000) return 1024;
      return 800;
    }
    if (len <= 1000) return 2048;
    if (len <= 2000) return 1024;
    if (len <= 3000) return 800;
    return 400;
  }

  std::string resolved_cache_dir() const {
    if (!cache_dir.empty()) return cache_dir;
    if (const char* env = std::getenv("ELMKIT_CACHE")) return env;
    return "";
  }

  void set(const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    if (key == "manifest") manifest = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "cache_dir") cache_dir = value;
    else if (key == "lexicon") lexicon = value;
    else if (key == "montage") montage = value;
    else if (key == "min_duration_s") min_duration_s = std::stod(value);
    else if (key == "max_duration_s") max_duration_s = std::stod(value);
    else if (key == "truncate_s") truncate_s = std::stod(value);
    else if (key == "balance_pretrain") balance_pretrain = parse_bool(value);
    else if (key == "objective") objective = objective_from_string(value);
    else if (key == "crop_seconds") crop_seconds = std::stoll(value);
    else if (key == "crops_per_subject") crops_per_subject = std::stoll(value);
    else if (key == "texts_per_subject") texts_per_subject = std::stoll(value);
    else if (key == "clusters") clusters = parse_clusters(value);
    else if (key == "granularity") granularity = textseg::granularity_from_string(value);
    else if (key == "aggregation") aggregation = value;
    else if (key == "shuffle_reports") shuffle_reports = parse_bool(value);
    else if (key == "subject_reweight") subject_reweight = parse_bool(value);
    else if (key == "max_crops_per_recording") max_crops_per_recording = std::stoll(value);
    else if (key == "temperature") temperature = std::stod(value);
    else if (key == "base_lr") base_lr = (value == "auto") ? -1.0 : std::stod(value);
    else if (key == "batch_size") batch_size = (value == "auto") ? -1 : std::stoll(value);
    else if (key == "epochs") epochs = std::stoll(value);
    else if (key == "warmup_epochs") warmup_epochs = std::stoll(value);
    else if (key == "weight_decay") weight_decay = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "filters_per_kernel") filters_per_kernel = std::stoll(value);
    else if (key == "rp_pos_max") rp_pos_max = std::stoll(value);
    else if (key == "rp_neg_min") rp_neg_min = std::stoll(value);
    else if (key == "between_subject_negatives") between_subject_negatives = parse_bool(value);
    else if (key == "cpc_steps") cpc_steps = std::stoll(value);
    else if (key == "cpc_negatives") cpc_negatives = std::stoll(value);
    else if (key == "cpc_context") cpc_context = std::stoll(value);
    else if (key == "byol_ema") byol_ema = std::stod(value);
    else if (key == "eval_tasks") eval_tasks = value;
    else if (key == "probe_fractions") probe_fractions = value;
    else if (key == "eval_split") eval_split = value;
    else fail("unknown config key '", key, "'");
  }

  // Fully resolved key=value form; also the input to the config hash.
  std::string serialize() const {
    std::ostringstream os;
    os << "aggregation=" << aggregation << "\n";
    os << "balance_pretrain=" << (balance_pretrain ? "true" : "false") << "\n";
    os << "base_lr=" << resolved_base_lr() << "\n";
    os << "batch_size=" << resolved_batch_size() << "\n";
    os << "between_subject_negatives=" << (between_subject_negatives ? "true" : "false") << "\n";
    os << "byol_ema=" << byol_ema << "\n";
    os << "cache_dir=" << cache_dir << "\n";
    os << "clusters=" << clusters_string() << "\n";
    os << "cpc_context=" << cpc_context << "\n";
    os << "cpc_negatives=" << cpc_negatives << "\n";
    os << "cpc_steps=" << cpc_steps << "\n";
    os << "crop_seconds=" << crop_seconds << "\n";
    os << "crops_per_subject=" << crops_per_subject << "\n";
    os << "epochs=" << epochs << "\n";
    os << "eval_split=" << eval_split << "\n";
    os << "eval_tasks=" << eval_tasks << "\n";
    os << "filters_per_kernel=" << filters_per_kernel << "\n";
    os << "granularity=" << (granularity == textseg::Granularity::Paragraph ? "paragraph" : "sentence") << "\n";
    os << "lexicon=" << lexicon << "\n";
    os << "manifest=" << manifest << "\n";
    os << "max_crops_per_recording=" << max_crops_per_recording << "\n";
    os << "max_duration_s=" << max_duration_s << "\n";
    os << "min_duration_s=" << min_duration_s << "\n";
    os << "montage=" << montage << "\n";
    os << "objective=" << to_string(objective) << "\n";
    os << "out_dir=" << out_dir << "\n";
    os << "probe_fractions=" << probe_fractions << "\n";
    os << "rp_neg_min=" << rp_neg_min << "\n";
    os << "rp_pos_max=" << rp_pos_max << "\n";
    os << "seed=" << seed << "\n";
    os << "shuffle_reports=" << (shuffle_reports ? "true" : "false") << "\n";
    os << "subject_reweight=" << (subject_reweight ? "true" : "false") << "\n";
    os << "temperature=" << temperature << "\n";
    os << "texts_per_subject=" << texts_per_subject << "\n";
    os << "truncate_s=" << truncate_s << "\n";
    os << "warmup_epochs=" << warmup_epochs << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a(serialize()); }

  static ExperimentConfig load(const std::string& path) {
    ExperimentConfig cfg;
    std::ifstream is(path);
    if (!is) throw RuntimeError("cannot read config " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      require(eq != std::string::npos, concat("config ", path, " line ", lineno, ": expected key=value"));
      try {
        cfg.set(trim(t.substr(0, eq)), t.substr(eq + 1));
      } catch (const std::exception& e) {
        fail("config ", path, " line ", lineno, ": ", e.what());
      }
    }
    return cfg;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw RuntimeError("cannot write config " + path);
    os << serialize();
  }

  std::string clusters_string() const {
    std::string out;
    for (auto c : textseg::kContentClusters)
      if (clusters.count(c)) out += (out.empty() ? "" : ",") + textseg::to_string(c);
    return out;
  }

 private:
  static bool parse_bool(const std::string& v) {
    std::string s = lower(v);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail("invalid boolean '", v, "'");
  }

  static std::set<textseg::Cluster> parse_clusters(const std::string& v) {
    std::set<textseg::Cluster> out;
    for (const auto& part : split(v, ','))
      if (!trim(part).empty()) out.insert(textseg::cluster_from_string(trim(part)));
    require(!out.empty(), "clusters must name at least one cluster");
    return out;
  }
};

}  // namespace elmkit::train
