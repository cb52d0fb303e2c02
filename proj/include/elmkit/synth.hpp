#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/corpus.hpp"
#include "elmkit/eegprep.hpp"
#include "elmkit/rng.hpp"

// Deterministic paired corpus of class-structured synthetic EEG and
// templated reports, so every pipeline runs without clinical data.
//
// Normal subjects carry a subject-specific posterior rhythm over pink-ish
// noise; abnormal subjects additionally carry intermittent high-amplitude
// 3 Hz bursts. Reports describe the rhythm frequency, voltage, and class
// findings with phrasing drawn from the text-encoder concept lexicon, so the
// text carries both subject-specific and class-specific signal.

namespace elmkit::synth {

struct SynthSpec {
  std::int64_t n_subjects = 200;    // split between the two classes
  std::int64_t n_align = 10;        // abnormal test subjects with one long planted burst
  std::uint64_t seed = 7;
  double sampling_rate = 100.0;
  double duration_s = 190.0;        // regular recordings (10 s of it is set-up trim)
  double align_duration_s = 610.0;  // long recordings for alignment traces
  double burst_scale = 6.0;         // burst amplitude relative to background (separability knob)
  double test_fraction = 0.2;
  double align_burst_len_s = 120.0;
  std::int64_t align_margin_s = 60;
};

// The class phrase planted in abnormal report descriptions; alignment traces
// probe for it.
inline const char* kAbnormalClassPhrase = "intermittent high-amplitude slow-wave bursts";

namespace detail {

struct Ar1 {
  double state = 0.0;
  double a;
  double scale;
  Ar1(double a_, double scale_) : a(a_), scale(scale_) {}
  double next(Rng& rng) {
    state = a * state + rng.normal() * scale;
    return state;
  }
};

inline const std::vector<std::string>& electrode_names() {
  static const std::vector<std::string> names = {"FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4",
                                                 "O1",  "O2",  "F7", "F8", "T3", "T4", "T5", "T6",
                                                 "CZ",  "A1",  "A2"};
  return names;
}

inline bool is_posterior(const std::string& e) {
  return e == "O1" || e == "O2" || e == "P3" || e == "P4" || e == "T5" || e == "T6";
}
inline bool is_frontal(const std::string& e) {
  return e == "FP1" || e == "FP2" || e == "F3" || e == "F4" || e == "F7" || e == "F8";
}

}  // namespace detail

struct SubjectPlan {
  std::string subject_id;
  bool abnormal = false;
  bool align = false;  // long recording with a single planted burst interval
  corpus::Split split = corpus::Split::Pretrain;
  double pdr_hz = 10.0;        // posterior dominant rhythm, 0.5 Hz steps
  int voltage_tier = 1;        // 0 low, 1 moderate, 2 high
  std::vector<std::pair<double, double>> burst_intervals_std;  // seconds, post-trim time
  // Align subjects additionally carry weaker background bursts outside the
  // planted interval, so the recording stays abnormal throughout while the
  // planted interval remains the strongest alignment target.
  std::vector<std::pair<double, double>> minor_intervals_std;
};

// Burst plan in standardized (post-trim) time; raw time adds the 10 s trim.
inline std::vector<std::pair<double, double>> plan_bursts(const SynthSpec& spec, bool align, double std_len_s,
                                                          Rng& rng) {
  std::vector<std::pair<double, double>> out;
  if (align) {
    const double lo = static_cast<double>(spec.align_margin_s);
    const double hi = std_len_s - static_cast<double>(spec.align_margin_s) - spec.align_burst_len_s;
    const double start = rng.uniform(lo, std::max(lo + 1.0, hi));
    out.emplace_back(start, start + spec.align_burst_len_s);
    return out;
  }
  // Frequent short bursts so nearly every crop carries the motif.
  double t = rng.uniform(1.0, 6.0);
  while (t < std_len_s - 10.0) {
    const double len = rng.uniform(8.0, 15.0);
    out.emplace_back(t, std::min(t + len, std_len_s - 1.0));
    t += len + rng.uniform(4.0, 12.0);
  }
  return out;
}

inline corpus::Recording synth_recording(const SynthSpec& spec, const SubjectPlan& plan, Rng& rng) {
  const auto& names = detail::electrode_names();
  const std::int64_t C = static_cast<std::int64_t>(names.size());
  const double fs = spec.sampling_rate;
  const double dur = plan.align ? spec.align_duration_s : spec.duration_s;
  const std::int64_t n = static_cast<std::int64_t>(dur * fs);

  corpus::Recording rec;
  rec.subject_id = plan.subject_id;
  rec.session_id = "s01";
  rec.sampling_rate = fs;
  rec.channel_names = names;
  rec.reference = corpus::Reference::AR;
  rec.signal = NDArray({C, n});

  // Per-channel gains for the shared components.
  std::vector<double> common_gain(static_cast<std::size_t>(C)), alpha_gain(static_cast<std::size_t>(C)),
      burst_gain(static_cast<std::size_t>(C)), alpha_phase(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    common_gain[static_cast<std::size_t>(c)] = rng.uniform(0.4, 1.0);
    alpha_gain[static_cast<std::size_t>(c)] =
        detail::is_posterior(names[static_cast<std::size_t>(c)]) ? rng.uniform(0.8, 1.2) : rng.uniform(0.05, 0.25);
    burst_gain[static_cast<std::size_t>(c)] =
        detail::is_frontal(names[static_cast<std::size_t>(c)]) ? rng.uniform(0.8, 1.2) : rng.uniform(0.1, 0.4);
    alpha_phase[static_cast<std::size_t>(c)] = rng.uniform(0.0, 2.0 * M_PI);
  }
  const double alpha_amp = 8.0 + 7.0 * static_cast<double>(plan.voltage_tier);  // 8 / 15 / 22 uV
  const double base_amp = 10.0;
  const double burst_amp = spec.burst_scale * 15.0;

  detail::Ar1 common(0.97, 1.0);
  std::vector<detail::Ar1> priv(static_cast<std::size_t>(C), detail::Ar1(0.9, 1.0));
  const double burst_phase = rng.uniform(0.0, 2.0 * M_PI);

  for (std::int64_t t = 0; t < n; ++t) {
    const double sec = static_cast<double>(t) / fs;
    const double std_sec = sec - eegprep::kTrimSeconds;  // time in the standardized signal
    const double com = common.next(rng);
    double burst_env = 0.0;
    if (plan.abnormal) {
      auto envelope_in = [&](const std::vector<std::pair<double, double>>& intervals, double gain) {
        for (const auto& [b0, b1] : intervals) {
          if (std_sec >= b0 && std_sec < b1) {
            // Soft half-second ramp at the interval edges.
            const double edge = std::min(std_sec - b0, b1 - std_sec);
            return gain * std::min(1.0, edge / 0.5);
          }
        }
        return 0.0;
      };
      burst_env = envelope_in(plan.burst_intervals_std, 1.0);
      if (burst_env == 0.0) burst_env = envelope_in(plan.minor_intervals_std, 0.75);
    }
    const double burst_wave =
        burst_env * burst_amp *
        (std::sin(2.0 * M_PI * 3.0 * sec + burst_phase) + 0.35 * std::sin(2.0 * M_PI * 6.0 * sec + 2.0 * burst_phase));
    const double alpha_mod = 1.0 + 0.15 * std::sin(2.0 * M_PI * 0.11 * sec);
    for (std::int64_t c = 0; c < C; ++c) {
      const double pink = base_amp * (0.6 * common_gain[static_cast<std::size_t>(c)] * com +
                                      0.8 * priv[static_cast<std::size_t>(c)].next(rng)) +
                          2.0 * rng.normal();
      const double alpha = alpha_amp * alpha_gain[static_cast<std::size_t>(c)] * alpha_mod *
                           std::sin(2.0 * M_PI * plan.pdr_hz * sec + alpha_phase[static_cast<std::size_t>(c)]);
      rec.signal.at(c, t) = pink + alpha + burst_gain[static_cast<std::size_t>(c)] * burst_wave;
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Report templates
// ---------------------------------------------------------------------------

inline std::string voltage_word(int tier) {
  return tier == 0 ? "low" : (tier == 1 ? "moderate" : "high");
}

inline std::string format_hz(double hz) {
  std::ostringstream os;
  if (std::abs(hz - std::llround(hz)) < 1e-9) os << static_cast<long long>(std::llround(hz));
  else os << hz;
  return os.str();
}

inline std::string synth_report(const SubjectPlan& plan, Rng& rng) {
  static const std::vector<std::string> normal_history = {
      "presents for routine follow-up", "with recurrent headaches", "with episodes of dizziness",
      "with syncope of unclear origin", "for evaluation of sleep complaints"};
  static const std::vector<std::string> abnormal_history = {
      "with a history of epilepsy", "after a witnessed convulsion", "with episodes of staring spells",
      "with recurrent loss of awareness", "after a breakthrough seizure"};
  static const std::vector<std::string> normal_meds = {"none reported", "aspirin", "lisinopril",
                                                       "metformin", "atorvastatin"};
  static const std::vector<std::string> abnormal_meds = {"levetiracetam", "valproate", "phenytoin",
                                                         "lamotrigine", "carbamazepine"};
  static const std::vector<std::string> normal_impressions = {
      "Normal EEG.", "This EEG is within normal limits.", "Normal awake and asleep EEG.",
      "The EEG is normal.", "Normal routine EEG."};
  static const std::vector<std::string> abnormal_impressions = {
      "Abnormal EEG due to intermittent slow-wave bursts.", "This EEG is abnormal.",
      "Markedly abnormal EEG.", "Abnormal EEG with generalized slowing.",
      "The EEG is pathologically abnormal."};
  static const std::vector<std::string> normal_correlation = {
      "No indications of pathology observed.", "No clinical events detected.",
      "EEG shows no abnormalities.", "No epileptiform activity was seen in this record."};
  static const std::vector<std::string> abnormal_correlation = {
      "These findings indicate pathology.", "Clinical events detected during the record.",
      "Indications of pathology observed.", "The bursts are consistent with epileptiform activity."};

  auto pick = [&](const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
  };

  const int age = static_cast<int>(rng.uniform_int(18, 90));
  const char* sex = rng.uniform() < 0.5 ? "male" : "female";
  std::ostringstream os;
  os << "CLINICAL HISTORY: A " << age << "-year-old " << sex << " "
     << pick(plan.abnormal ? abnormal_history : normal_history) << ".\n\n";
  os << "MEDICATIONS: " << pick(plan.abnormal ? abnormal_meds : normal_meds);
  if (rng.uniform() < 0.4) os << ", " << pick(plan.abnormal ? abnormal_meds : normal_meds);
  os << ".\n\n";
  os << "INTRODUCTION: Digital video EEG was performed in the lab using standard 10-20 electrode "
        "placement with one channel of EKG.\n\n";
  os << "DESCRIPTION OF THE RECORD: The background consists of a " << voltage_word(plan.voltage_tier)
     << " voltage posterior dominant rhythm of " << format_hz(plan.pdr_hz) << " Hz. ";
  if (plan.abnormal) {
    os << "There are " << kAbnormalClassPhrase << " at 3 Hz seen across the record. ";
  } else {
    os << "The record is well organized with no epileptiform activity. ";
  }
  os << "Heart rate " << rng.uniform_int(55, 95) << " bpm.\n\n";
  os << "IMPRESSION: " << pick(plan.abnormal ? abnormal_impressions : normal_impressions) << "\n\n";
  os << "CLINICAL CORRELATION: " << pick(plan.abnormal ? abnormal_correlation : normal_correlation) << "\n";
  return os.str();
}

inline std::string synth_summary(const SubjectPlan& plan, Rng& rng) {
  static const std::vector<std::string> normal_summaries = {
      "The EEG is normal.", "This is a normal EEG without abnormalities.",
      "Normal EEG with no pathology present."};
  static const std::vector<std::string> abnormal_summaries = {
      "This EEG is abnormal due to intermittent slow-wave bursts.",
      "Abnormal EEG with pathology present.", "The EEG is abnormal due to generalized slowing."};
  const auto& v = plan.abnormal ? abnormal_summaries : normal_summaries;
  return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

// Writes recordings, reports, summaries, labels, planted-event sidecars, and
// a split-assigned manifest under out_dir; returns the loaded manifest.
inline corpus::Manifest generate(const SynthSpec& spec, const std::string& out_dir) {
  require(spec.n_subjects >= 2, "need at least two subjects");
  require(spec.n_align <= spec.n_subjects / 2, "too many alignment subjects");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "signals");
  fs::create_directories(fs::path(out_dir) / "reports");
  fs::create_directories(fs::path(out_dir) / "events");

  // Plans: even subject ids are normal, odd abnormal; the last abnormal test
  // subjects carry the single long planted interval.
  const std::int64_t n_test = std::max<std::int64_t>(2, static_cast<std::int64_t>(
                                                            std::llround(spec.test_fraction *
                                                                         static_cast<double>(spec.n_subjects))));
  std::vector<SubjectPlan> plans;
  std::int64_t abnormal_test_seen = 0;
  const std::int64_t n_abnormal_test = n_test / 2;
  for (std::int64_t i = 0; i < spec.n_subjects; ++i) {
    SubjectPlan p;
    p.subject_id = concat("S", i < 100 ? (i < 10 ? "00" : "0") : "", i);
    p.abnormal = (i % 2) == 1;
    // Interleaved split assignment keeps both classes balanced per split.
    p.split = (i >= spec.n_subjects - n_test) ? corpus::Split::Test : corpus::Split::Pretrain;
    if (p.split == corpus::Split::Test && p.abnormal) {
      ++abnormal_test_seen;
      if (abnormal_test_seen > n_abnormal_test - spec.n_align) p.align = true;
    }
    plans.push_back(p);
  }

  corpus::Manifest manifest;
  for (auto& plan : plans) {
    Rng rng(spec.seed ^ fnv1a(plan.subject_id));
    plan.pdr_hz = 8.0 + 0.5 * static_cast<double>(rng.uniform_int(0, 8));  // 8.0 .. 12.0
    plan.voltage_tier = static_cast<int>(rng.uniform_int(0, 2));
    const double dur = plan.align ? spec.align_duration_s : spec.duration_s;
    if (plan.abnormal) {
      plan.burst_intervals_std = plan_bursts(spec, plan.align, dur - eegprep::kTrimSeconds, rng);
      if (plan.align) {
        // Weak background activity away from the planted interval.
        const auto [p0, p1] = plan.burst_intervals_std[0];
        for (const auto& iv : plan_bursts(spec, false, dur - eegprep::kTrimSeconds, rng))
          if (iv.second < p0 - 10.0 || iv.first > p1 + 10.0) plan.minor_intervals_std.push_back(iv);
      }
    }

    auto rec = synth_recording(spec, plan, rng);
    const std::string sig_rel = "signals/" + plan.subject_id + ".f32";
    const std::string sig_path = (fs::path(out_dir) / sig_rel).string();
    corpus::save_recording(rec, sig_path);

    const std::string rep_rel = "reports/" + plan.subject_id + ".txt";
    corpus::save_text_file(synth_report(plan, rng), (fs::path(out_dir) / rep_rel).string());
    corpus::save_text_file(synth_summary(plan, rng) + "\n",
                           (fs::path(out_dir) / ("reports/" + plan.subject_id + ".summary.txt")).string());

    if (plan.abnormal) {
      std::ostringstream ev;
      ev << std::setprecision(17);
      ev << "# burst intervals, seconds in the standardized (post-trim) signal\n";
      for (const auto& [b0, b1] : plan.burst_intervals_std) ev << b0 << '\t' << b1 << "\n";
      corpus::save_text_file(ev.str(), (fs::path(out_dir) / ("events/" + plan.subject_id + ".events")).string());
    }

    corpus::ManifestEntry e;
    e.subject_id = plan.subject_id;
    e.session_id = "s01";
    e.signal_path = sig_path;
    e.report_path = (fs::path(out_dir) / rep_rel).string();
    e.label = plan.abnormal ? corpus::Label::Abnormal : corpus::Label::Normal;
    e.split = plan.split;
    manifest.entries.push_back(e);
  }

  const std::string manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  corpus::save_manifest(manifest, manifest_path);
  return corpus::load_manifest(manifest_path);
}

// Planted burst intervals for a subject, read back from the events sidecar.
inline std::vector<std::pair<double, double>> load_events(const std::string& out_dir,
                                                          const std::string& subject_id) {
  const std::string path =
      (std::filesystem::path(out_dir) / ("events/" + subject_id + ".events")).string();
  std::vector<std::pair<double, double>> out;
  std::ifstream is(path);
  if (!is) throw RuntimeError("cannot read events " + path);
  std::string line;
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto parts = split(t, '\t');
    require(parts.size() == 2, "malformed events line: " + t);
    out.emplace_back(std::stod(parts[0]), std::stod(parts[1]));
  }
  return out;
}

}  // namespace elmkit::synth
