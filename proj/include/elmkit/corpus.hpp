#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/tensor.hpp"

// Data model and ingestion for paired EEG recordings and clinical reports.
// On-disk container: one raw float32 little-endian array per recording
// (row-major, channels x samples) with a key=value sidecar, plus a
// tab-separated manifest describing entries and their splits.

namespace elmkit::corpus {

enum class Reference { AR, LE, Other };
enum class Label { None, Normal, Abnormal, Unknown };
enum class Split { Pretrain, Train, Val, Test };

inline std::string to_string(Reference r) {
  switch (r) {
    case Reference::AR: return "AR";
    case Reference::LE: return "LE";
    default: return "other";
  }
}
inline Reference reference_from_string(const std::string& s) {
  if (s == "AR") return Reference::AR;
  if (s == "LE") return Reference::LE;
  if (s == "other") return Reference::Other;
  fail("unknown reference scheme '", s, "'");
}

inline std::string to_string(Label l) {
  switch (l) {
    case Label::Normal: return "normal";
    case Label::Abnormal: return "abnormal";
    case Label::Unknown: return "unknown";
    default: return "-";
  }
}
inline Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::Normal;
  if (s == "abnormal") return Label::Abnormal;
  if (s == "unknown") return Label::Unknown;
  if (s == "-") return Label::None;
  fail("unknown label '", s, "'");
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}
inline Split split_from_string(const std::string& s) {
  if (s == "pretrain") return Split::Pretrain;
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail("unknown split '", s, "'");
}

// One subject session's multichannel EEG signal plus metadata.
struct Recording {
  std::string subject_id;
  std::string session_id;
  NDArray signal;  // [channels x samples], microvolts
  double sampling_rate = 0.0;
  std::vector<std::string> channel_names;
  Reference reference = Reference::Other;

  std::int64_t channels() const { return signal.dim(0); }
  std::int64_t samples() const { return signal.dim(1); }

  void validate() const {
    require(signal.ndim() == 2 && channels() >= 1 && samples() >= 1, "recording signal must be a non-empty matrix");
    require(sampling_rate > 0.0, "sampling_rate must be positive");
    require(static_cast<std::int64_t>(channel_names.size()) == channels(),
            "channel_names length must equal channel count");
  }
};

struct SignalMeta {
  std::int64_t channels = 0;
  std::int64_t samples = 0;
  double sampling_rate = 0.0;
  std::vector<std::string> channel_names;
  Reference reference = Reference::Other;
};

struct ManifestEntry {
  std::string subject_id;
  std::string session_id;
  std::string signal_path;           // absolute after load
  std::string report_path;           // empty if none
  Label label = Label::None;
  Split split = Split::Pretrain;
  SignalMeta meta;                   // from the sidecar
  std::int64_t max_samples = -1;     // in-memory truncation limit, -1 = none

  double duration_s() const {
    return meta.sampling_rate > 0 ? static_cast<double>(meta.samples) / meta.sampling_rate : 0.0;
  }
  std::int64_t effective_samples() const {
    return max_samples >= 0 ? std::min(max_samples, meta.samples) : meta.samples;
  }
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> in_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  // Pretrain subjects must be disjoint from subjects in any eval split.
  void check_leakage() const {
    std::set<std::string> pretrain, eval;
    for (const auto& e : entries) {
      (e.split == Split::Pretrain ? pretrain : eval).insert(e.subject_id);
    }
    std::vector<std::string> offenders;
    for (const auto& s : pretrain)
      if (eval.count(s)) offenders.push_back(s);
    if (!offenders.empty()) {
      std::string list;
      for (const auto& s : offenders) list += (list.empty() ? "" : ", ") + s;
      fail("split leakage: subject(s) present in both pretrain and eval splits: ", list);
    }
  }
};

// ---------------------------------------------------------------------------
// Sidecar metadata (key=value lines next to each signal file)
// ---------------------------------------------------------------------------

inline std::string meta_path_for(const std::string& signal_path) { return signal_path + ".meta"; }

inline void save_signal_meta(const SignalMeta& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot write " + path);
  os << "channels=" << m.channels << "\n";
  os << "samples=" << m.samples << "\n";
  os << "sampling_rate=" << m.sampling_rate << "\n";
  os << "channel_names=";
  for (std::size_t i = 0; i < m.channel_names.size(); ++i) os << (i ? "," : "") << m.channel_names[i];
  os << "\n";
  os << "reference=" << to_string(m.reference) << "\n";
}

inline SignalMeta load_signal_meta(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RuntimeError("cannot read sidecar " + path);
  SignalMeta m;
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    require(eq != std::string::npos, "malformed sidecar line in " + path + ": " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "channels") m.channels = std::stoll(val);
    else if (key == "samples") m.samples = std::stoll(val);
    else if (key == "sampling_rate") m.sampling_rate = std::stod(val);
    else if (key == "channel_names") { m.channel_names.clear(); if (!val.empty()) m.channel_names = split(val, ','); }
    else if (key == "reference") m.reference = reference_from_string(val);
    else fail("unknown sidecar key '", key, "' in ", path);
  }
  require(m.channels >= 1 && m.samples >= 1, "sidecar " + path + " missing channels/samples");
  require(m.sampling_rate > 0, "sidecar " + path + " missing sampling_rate");
  require(static_cast<std::int64_t>(m.channel_names.size()) == m.channels,
          "sidecar " + path + ": channel_names length != channels");
  return m;
}

// ---------------------------------------------------------------------------
// Signal container (row-major float32, little-endian)
// ---------------------------------------------------------------------------

inline void save_signal(const NDArray& signal, const std::string& path) {
  require(signal.ndim() == 2, "signal must be [channels x samples]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot write " + path);
  std::vector<float> buf(signal.v.begin(), signal.v.end());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline NDArray load_signal(const std::string& path, std::int64_t channels, std::int64_t samples) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot read signal " + path);
  std::vector<float> buf(static_cast<std::size_t>(channels * samples));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw RuntimeError("signal " + path + " shorter than sidecar shape");
  NDArray out({channels, samples});
  for (std::size_t i = 0; i < buf.size(); ++i) out.v[i] = static_cast<double>(buf[i]);
  return out;
}

inline void save_recording(const Recording& rec, const std::string& signal_path) {
  rec.validate();
  save_signal(rec.signal, signal_path);
  SignalMeta m{rec.channels(), rec.samples(), rec.sampling_rate, rec.channel_names, rec.reference};
  save_signal_meta(m, meta_path_for(signal_path));
}

inline Recording load_recording(const ManifestEntry& e) {
  Recording rec;
  rec.subject_id = e.subject_id;
  rec.session_id = e.session_id;
  rec.sampling_rate = e.meta.sampling_rate;
  rec.channel_names = e.meta.channel_names;
  rec.reference = e.meta.reference;
  rec.signal = load_signal(e.signal_path, e.meta.channels, e.meta.samples);
  std::int64_t keep = e.effective_samples();
  if (keep < e.meta.samples) {
    NDArray cut({e.meta.channels, keep});
    for (std::int64_t c = 0; c < e.meta.channels; ++c)
      for (std::int64_t t = 0; t < keep; ++t) cut.at(c, t) = rec.signal.at(c, t);
    rec.signal = std::move(cut);
  }
  rec.validate();
  return rec;
}

// ---------------------------------------------------------------------------
// Manifest file
// ---------------------------------------------------------------------------

inline const char* kManifestHeader = "subject_id\tsession_id\tsignal\treport\tlabel\tsplit";

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RuntimeError("cannot read manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  Manifest m;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header_seen) {
      require(t == kManifestHeader, concat("manifest ", path, " line ", lineno, ": expected header '",
                                           kManifestHeader, "'"));
      header_seen = true;
      continue;
    }
    auto fields = split(t, '\t');
    if (fields.size() != 6)
      fail("manifest ", path, " line ", lineno, ": expected 6 tab-separated fields, got ", fields.size());
    ManifestEntry e;
    e.subject_id = trim(fields[0]);
    e.session_id = trim(fields[1]);
    require(!e.subject_id.empty(), concat("manifest line ", lineno, ": empty subject_id"));
    std::string sig = trim(fields[2]);
    e.signal_path = (base / sig).lexically_normal().string();
    std::string rep = trim(fields[3]);
    e.report_path = (rep == "-" || rep.empty()) ? "" : (base / rep).lexically_normal().string();
    try {
      e.label = label_from_string(trim(fields[4]));
      e.split = split_from_string(trim(fields[5]));
    } catch (const ValidationError& err) {
      fail("manifest ", path, " line ", lineno, ": ", err.what());
    }
    e.meta = load_signal_meta(meta_path_for(e.signal_path));
    m.entries.push_back(std::move(e));
  }
  require(header_seen, "manifest " + path + " is missing its header line");
  m.check_leakage();
  return m;
}

// Writes paths relative to the manifest location.
inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot write manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  os << kManifestHeader << "\n";
  for (const auto& e : m.entries) {
    std::string sig = std::filesystem::relative(e.signal_path, base).string();
    std::string rep = e.report_path.empty() ? "-" : std::filesystem::relative(e.report_path, base).string();
    os << e.subject_id << '\t' << e.session_id << '\t' << sig << '\t' << rep << '\t'
       << to_string(e.label) << '\t' << to_string(e.split) << "\n";
  }
}

// Drops entries outside [min_s, max_s] and truncates the rest to truncate_s.
// Truncation is recorded on the entry and applied when the signal is loaded.
inline Manifest filter_by_duration(const Manifest& m, double min_s = 70.0, double max_s = 9000.0,
                                   double truncate_s = 2700.0) {
  require(min_s < max_s, "filter_by_duration: min_s must be < max_s");
  Manifest out;
  for (const auto& e : m.entries) {
    double d = e.duration_s();
    if (d < min_s || d > max_s) continue;
    ManifestEntry kept = e;
    auto limit = static_cast<std::int64_t>(truncate_s * e.meta.sampling_rate);
    if (kept.max_samples < 0 || limit < kept.max_samples) {
      if (limit < kept.meta.samples) kept.max_samples = limit;
    }
    out.entries.push_back(std::move(kept));
  }
  return out;
}

inline std::string load_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot read " + path);
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline void save_text_file(const std::string& text, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot write " + path);
  os << text;
}

inline std::string summary_path_for(const std::string& report_path) {
  // "X.txt" -> "X.summary.txt"; anything else gets ".summary.txt" appended.
  if (report_path.size() > 4 && report_path.substr(report_path.size() - 4) == ".txt")
    return report_path.substr(0, report_path.size() - 4) + ".summary.txt";
  return report_path + ".summary.txt";
}

}  // namespace elmkit::corpus
