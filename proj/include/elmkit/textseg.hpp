#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/corpus.hpp"
#include "elmkit/rng.hpp"

// Segmentation of multi-paragraph clinical reports into content clusters,
// text-unit sampling for pretraining, and summary-based labeling.

namespace elmkit::textseg {

enum class Cluster { ClinicalHistory, RecordDescription, Medication, Interpretation, Excluded };

inline std::string to_string(Cluster c) {
  switch (c) {
    case Cluster::ClinicalHistory: return "clinical_history";
    case Cluster::RecordDescription: return "record_description";
    case Cluster::Medication: return "medication";
    case Cluster::Interpretation: return "interpretation";
    default: return "excluded";
  }
}
inline Cluster cluster_from_string(const std::string& s) {
  if (s == "clinical_history") return Cluster::ClinicalHistory;
  if (s == "record_description") return Cluster::RecordDescription;
  if (s == "medication") return Cluster::Medication;
  if (s == "interpretation") return Cluster::Interpretation;
  if (s == "excluded") return Cluster::Excluded;
  fail("unknown cluster '", s, "'");
}

constexpr std::array<Cluster, 4> kContentClusters = {Cluster::ClinicalHistory, Cluster::RecordDescription,
                                                     Cluster::Medication, Cluster::Interpretation};

struct Segment {
  std::string heading;  // as written in the report, no trailing colon
  std::string body;
  Cluster cluster = Cluster::Excluded;
  std::vector<std::string> sentences;
};

// Splits on terminal punctuation followed by whitespace and a capital or digit.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i + 1;
    bool ws = false;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) {
      ws = true;
      ++j;
    }
    bool boundary = (j >= text.size()) ||
                    (ws && (std::isupper(static_cast<unsigned char>(text[j])) ||
                            std::isdigit(static_cast<unsigned char>(text[j]))));
    if (boundary) {
      std::string s = trim(text.substr(start, i - start + 1));
      if (!s.empty()) out.push_back(s);
      start = j;
      i = j == 0 ? 0 : j - 1;
    }
  }
  std::string tail = trim(text.substr(start));
  if (!tail.empty()) out.push_back(tail);
  return out;
}

// Heading patterns are case-insensitive substrings matched against a
// whitespace-normalized heading. Longest match wins; a heading matching two
// patterns of different clusters violates the lexicon contract.
class ClusterLexicon {
 public:
  void add(const std::string& pattern, Cluster c) {
    std::string p = normalize(pattern);
    require(!p.empty(), "empty lexicon pattern");
    patterns_.emplace_back(p, c);
  }

  std::optional<Cluster> classify(const std::string& heading) const {
    std::string h = normalize(heading);
    const std::pair<std::string, Cluster>* best = nullptr;
    for (const auto& pc : patterns_) {
      if (h.find(pc.first) == std::string::npos) continue;
      if (!best || pc.first.size() > best->first.size()) best = &pc;
    }
    if (!best) return std::nullopt;
    return best->second;
  }

  // Every heading in the fixture corpus must resolve to exactly one cluster.
  std::vector<std::string> conflicting_headings(const std::vector<std::string>& headings) const {
    std::vector<std::string> bad;
    for (const auto& heading : headings) {
      std::string h = normalize(heading);
      std::set<Cluster> hits;
      for (const auto& pc : patterns_)
        if (h.find(pc.first) != std::string::npos) hits.insert(pc.second);
      if (hits.size() > 1) bad.push_back(heading);
    }
    return bad;
  }

  std::size_t size() const { return patterns_.size(); }

  // File format: one "pattern<TAB>cluster" per line, '#' comments.
  static ClusterLexicon load(const std::string& path) {
    ClusterLexicon lex;
    std::ifstream is(path);
    if (!is) throw RuntimeError("cannot read lexicon " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto fields = split(t, '\t');
      if (fields.size() != 2) fail("lexicon ", path, " line ", lineno, ": expected 'pattern<TAB>cluster'");
      lex.add(trim(fields[0]), cluster_from_string(trim(fields[1])));
    }
    return lex;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw RuntimeError("cannot write lexicon " + path);
    for (const auto& pc : patterns_) os << pc.first << '\t' << to_string(pc.second) << "\n";
  }

  static std::string normalize(const std::string& s) {
    std::string out;
    bool prev_space = true;
    for (char ch : s) {
      unsigned char c = static_cast<unsigned char>(ch);
      if (std::isspace(c)) {
        if (!prev_space) out.push_back(' ');
        prev_space = true;
      } else {
        out.push_back(static_cast<char>(std::toupper(c)));
        prev_space = false;
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
  }

 private:
  std::vector<std::pair<std::string, Cluster>> patterns_;
};

// Heading coverage for the common report styles; replaceable via lexicon files.
inline ClusterLexicon default_lexicon() {
  ClusterLexicon lex;
  lex.add("CLINICAL HISTORY", Cluster::ClinicalHistory);
  lex.add("PATIENT HISTORY", Cluster::ClinicalHistory);
  lex.add("HISTORY", Cluster::ClinicalHistory);
  lex.add("MEDICATIONS", Cluster::Medication);
  lex.add("MEDICATION", Cluster::Medication);
  lex.add("CURRENT MEDICATIONS", Cluster::Medication);
  lex.add("DESCRIPTION OF THE RECORD", Cluster::RecordDescription);
  lex.add("RECORD DESCRIPTION", Cluster::RecordDescription);
  lex.add("DESCRIPTION", Cluster::RecordDescription);
  lex.add("HEART RATE", Cluster::RecordDescription);
  lex.add("IMPRESSION", Cluster::Interpretation);
  lex.add("INTERPRETATION", Cluster::Interpretation);
  lex.add("CLINICAL CORRELATION", Cluster::Interpretation);
  lex.add("CONCLUSION", Cluster::Interpretation);
  lex.add("INTRODUCTION", Cluster::Excluded);
  lex.add("TECHNICAL DIFFICULTIES", Cluster::Excluded);
  lex.add("TECHNICAL PROBLEMS", Cluster::Excluded);
  lex.add("EEG SYSTEM", Cluster::Excluded);
  lex.add("CONDITIONS OF THE RECORDING", Cluster::Excluded);
  lex.add("ACTIVATION PROCEDURES", Cluster::Excluded);
  lex.add("DISCLAIMER", Cluster::Excluded);
  return lex;
}

struct Report {
  std::string subject_id;
  std::string session_id;
  std::string raw_text;
  std::vector<Segment> segments;
  std::optional<std::string> summary;

  bool has_content_segment() const {
    for (const auto& s : segments)
      if (s.cluster != Cluster::Excluded) return true;
    return false;
  }
};

namespace detail {

// A heading candidate is a short leading "NAME:" in ALL CAPS or Title Case
// (every word starts uppercase). Body prose never matches: sentences carry
// lowercase-initial words or run past the length cap before any colon.
inline bool looks_like_heading(const std::string& line, std::size_t& colon) {
  colon = line.find(':');
  if (colon == std::string::npos || colon == 0 || colon > 60) return false;
  bool has_letter = false;
  bool word_start = true;
  for (std::size_t i = 0; i < colon; ++i) {
    unsigned char c = static_cast<unsigned char>(line[i]);
    if (std::isalpha(c)) {
      if (word_start && std::islower(c)) return false;
      has_letter = true;
      word_start = false;
    } else if (std::isspace(c) || c == '-' || c == '/') {
      word_start = true;
    } else if (std::isdigit(c) || c == ',' || c == '(' || c == ')') {
      word_start = false;
    } else {
      return false;
    }
  }
  return has_letter;
}

}  // namespace detail

// Every recognized heading starts a segment; text before the first heading
// and under unmatched headings lands in cluster=excluded. A report whose
// segments are all excluded must be dropped by the caller.
inline std::vector<Segment> segment_report(const std::string& raw_text, const ClusterLexicon& lexicon) {
  std::vector<Segment> out;
  if (trim(raw_text).empty()) return out;

  auto lines = split(raw_text, '\n');
  Segment cur;
  bool started = false;
  auto flush = [&]() {
    cur.body = trim(cur.body);
    if (!cur.heading.empty() || !cur.body.empty()) {
      cur.sentences = split_sentences(cur.body);
      out.push_back(cur);
    }
    cur = Segment{};
  };

  for (const auto& line : lines) {
    std::size_t colon = 0;
    if (detail::looks_like_heading(line, colon)) {
      if (started) flush();
      started = true;
      cur.heading = trim(line.substr(0, colon));
      auto cls = lexicon.classify(cur.heading);
      cur.cluster = cls.value_or(Cluster::Excluded);
      cur.body = line.substr(colon + 1);
      cur.body += '\n';
    } else {
      if (!started && !trim(line).empty()) started = true;  // preamble -> excluded segment
      cur.body += line;
      cur.body += '\n';
    }
  }
  if (started) flush();
  return out;
}

enum class Granularity { Paragraph, Sentence };

inline Granularity granularity_from_string(const std::string& s) {
  if (s == "paragraph") return Granularity::Paragraph;
  if (s == "sentence") return Granularity::Sentence;
  fail("unknown granularity '", s, "'");
}

// All sampleable text units of a report for the given clusters.
inline std::vector<std::string> eligible_units(const Report& report, const std::set<Cluster>& clusters,
                                               Granularity granularity) {
  std::vector<std::string> units;
  for (const auto& seg : report.segments) {
    if (seg.cluster == Cluster::Excluded || !clusters.count(seg.cluster)) continue;
    if (granularity == Granularity::Paragraph) {
      if (!seg.body.empty()) units.push_back(seg.body);
    } else {
      for (const auto& s : seg.sentences) units.push_back(s);
    }
  }
  return units;
}

// The text sampling function: up to m distinct units drawn uniformly
// without replacement from the allowed clusters.
inline std::vector<std::string> sample_text(const Report& report, const std::set<Cluster>& clusters,
                                            Granularity granularity, std::int64_t m, Rng& rng) {
  require(m >= 1, "sample_text: m must be >= 1");
  auto units = eligible_units(report, clusters, granularity);
  if (units.empty())
    fail("no eligible text: report ", report.subject_id, "/", report.session_id,
         " has no segment in the requested clusters");
  auto idx = rng.sample_without_replacement(static_cast<std::int64_t>(units.size()), m);
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(units[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// Summary classification (pattern-based, total, deterministic)
// ---------------------------------------------------------------------------

inline corpus::Label classify_summary(const std::string& summary) {
  // Tokenize to lowercase words.
  std::vector<std::string> tok;
  std::string cur;
  for (char ch : summary) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tok.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tok.push_back(cur);
  if (tok.empty()) return corpus::Label::Unknown;

  static const std::set<std::string> abnormal_words = {"abnormal",   "abnormality", "abnormalities",
                                                       "pathology",  "pathological", "pathologically",
                                                       "seizure",    "seizures",     "epileptiform",
                                                       "slowing"};
  static const std::set<std::string> normal_words = {"normal", "unremarkable"};
  static const std::set<std::string> negators = {"no", "not", "without", "denies"};

  auto negated = [&](std::size_t i) {
    std::size_t lo = i >= 3 ? i - 3 : 0;
    for (std::size_t j = lo; j < i; ++j)
      if (negators.count(tok[j])) return true;
    return false;
  };

  int abnormal_score = 0, normal_score = 0;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (abnormal_words.count(tok[i])) {
      if (negated(i)) ++normal_score; else ++abnormal_score;
    } else if (normal_words.count(tok[i])) {
      if (negated(i)) ++abnormal_score; else ++normal_score;
    } else if (tok[i] == "detected" && i > 0 && (tok[i - 1] == "events" || tok[i - 1] == "event")) {
      if (negated(i - 1)) ++normal_score; else ++abnormal_score;
    }
  }
  if (abnormal_score > 0 && abnormal_score >= normal_score) return corpus::Label::Abnormal;
  if (normal_score > 0) return corpus::Label::Normal;
  return corpus::Label::Unknown;
}

// Subsamples the majority class down to the minority count; entries labeled
// unknown (or unlabeled) are dropped.
inline corpus::Manifest balance_subsample(const corpus::Manifest& manifest, Rng& rng) {
  std::vector<std::size_t> normal_idx, abnormal_idx;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    auto l = manifest.entries[i].label;
    if (l == corpus::Label::Normal) normal_idx.push_back(i);
    else if (l == corpus::Label::Abnormal) abnormal_idx.push_back(i);
  }
  auto& majority = normal_idx.size() >= abnormal_idx.size() ? normal_idx : abnormal_idx;
  const std::size_t keep = std::min(normal_idx.size(), abnormal_idx.size());
  if (majority.size() > keep) {
    auto pick = rng.sample_without_replacement(static_cast<std::int64_t>(majority.size()),
                                               static_cast<std::int64_t>(keep));
    std::vector<std::size_t> kept;
    kept.reserve(pick.size());
    for (auto p : pick) kept.push_back(majority[static_cast<std::size_t>(p)]);
    std::sort(kept.begin(), kept.end());
    majority = std::move(kept);
  }
  std::set<std::size_t> chosen(normal_idx.begin(), normal_idx.end());
  chosen.insert(abnormal_idx.begin(), abnormal_idx.end());
  corpus::Manifest out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (chosen.count(i)) out.entries.push_back(manifest.entries[i]);
  return out;
}

// Reads a report file (and its sidecar summary, if present) and segments it.
inline Report load_report(const corpus::ManifestEntry& entry, const ClusterLexicon& lexicon) {
  require(!entry.report_path.empty(), "entry " + entry.subject_id + " has no report");
  Report r;
  r.subject_id = entry.subject_id;
  r.session_id = entry.session_id;
  r.raw_text = corpus::load_text_file(entry.report_path);
  r.segments = segment_report(r.raw_text, lexicon);
  auto spath = corpus::summary_path_for(entry.report_path);
  if (std::filesystem::exists(spath)) r.summary = trim(corpus::load_text_file(spath));
  return r;
}

}  // namespace elmkit::textseg
