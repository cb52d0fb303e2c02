#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "elmkit/textseg.hpp"
#include "support/testutil.hpp"

using namespace elmkit;
using namespace elmkit::textseg;

namespace {

const char* kFixtureReport =
    "CLINICAL HISTORY: A 54-year-old male with a history of epilepsy.\n"
    "\n"
    "MEDICATIONS: Keppra, Dilantin.\n"
    "\n"
    "DESCRIPTION OF THE RECORD: The background consists of a moderate voltage posterior dominant\n"
    "rhythm of 9.5 Hz. Intermittent bursts were noted.\n"
    "\n"
    "IMPRESSION: Abnormal EEG due to intermittent slow-wave bursts.\n";

std::string strip_ws(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

Report make_report(const std::string& raw, const ClusterLexicon& lex) {
  Report r;
  r.subject_id = "S0";
  r.session_id = "s01";
  r.raw_text = raw;
  r.segments = segment_report(raw, lex);
  return r;
}

}  // namespace

TEST_CASE("fixture report segments into the four content clusters") {
  auto lex = default_lexicon();
  auto segs = segment_report(kFixtureReport, lex);
  REQUIRE(segs.size() == 4);
  CHECK(segs[0].cluster == Cluster::ClinicalHistory);
  CHECK(segs[1].cluster == Cluster::Medication);
  CHECK(segs[2].cluster == Cluster::RecordDescription);
  CHECK(segs[3].cluster == Cluster::Interpretation);
  CHECK(segs[0].heading == "CLINICAL HISTORY");
  CHECK(segs[2].body.find("9.5 Hz") != std::string::npos);
  REQUIRE(segs[2].sentences.size() == 2);
}

TEST_CASE("empty report yields an empty segmentation") {
  auto lex = default_lexicon();
  CHECK(segment_report("", lex).empty());
  CHECK(segment_report("   \n\t  ", lex).empty());
}

TEST_CASE("unrecognized and irrelevant headings become excluded segments") {
  auto lex = default_lexicon();
  auto segs = segment_report("TECHNICAL DIFFICULTIES: electrode T3 detached mid-recording.\n", lex);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].cluster == Cluster::Excluded);

  auto segs2 = segment_report("FROBNICATION NOTES: nothing matched here.\n", lex);
  REQUIRE(segs2.size() == 1);
  CHECK(segs2[0].cluster == Cluster::Excluded);

  // Text before the first heading is excluded preamble.
  auto segs3 = segment_report("Recorded at the central lab.\nIMPRESSION: Normal EEG.\n", lex);
  REQUIRE(segs3.size() == 2);
  CHECK(segs3[0].cluster == Cluster::Excluded);
  CHECK(segs3[0].heading.empty());
  CHECK(segs3[1].cluster == Cluster::Interpretation);
}

TEST_CASE("twenty-report fixture corpus: cluster assignments verified by hand") {
  auto lex = default_lexicon();
  struct Fixture {
    std::string heading;
    Cluster want;
  };
  const std::vector<Fixture> headings = {
      {"CLINICAL HISTORY", Cluster::ClinicalHistory},
      {"Clinical History", Cluster::ClinicalHistory},
      {"HISTORY", Cluster::ClinicalHistory},
      {"PATIENT HISTORY", Cluster::ClinicalHistory},
      {"MEDICATIONS", Cluster::Medication},
      {"MEDICATION", Cluster::Medication},
      {"CURRENT MEDICATIONS", Cluster::Medication},
      {"DESCRIPTION OF THE RECORD", Cluster::RecordDescription},
      {"RECORD DESCRIPTION", Cluster::RecordDescription},
      {"DESCRIPTION", Cluster::RecordDescription},
      {"HEART RATE", Cluster::RecordDescription},
      {"IMPRESSION", Cluster::Interpretation},
      {"INTERPRETATION", Cluster::Interpretation},
      {"CLINICAL CORRELATION", Cluster::Interpretation},
      {"CONCLUSION", Cluster::Interpretation},
      {"INTRODUCTION", Cluster::Excluded},
      {"TECHNICAL DIFFICULTIES", Cluster::Excluded},
      {"EEG SYSTEM", Cluster::Excluded},
      {"ACTIVATION PROCEDURES", Cluster::Excluded},
      {"DISCLAIMER", Cluster::Excluded},
  };
  REQUIRE(headings.size() == 20);
  std::vector<std::string> names;
  for (const auto& f : headings) {
    auto segs = segment_report(f.heading + ": some body text follows here.\n", lex);
    REQUIRE(segs.size() == 1);
    CHECK_MESSAGE(segs[0].cluster == f.want, f.heading);
    names.push_back(f.heading);
  }
  // No heading in the fixture corpus matches two clusters.
  CHECK(lex.conflicting_headings(names).empty());
}

TEST_CASE("segmentation reconstructs the raw text modulo whitespace") {
  auto lex = default_lexicon();
  const std::string reports[] = {
      kFixtureReport,
      "preamble text without heading\nIMPRESSION: Normal EEG.\nsecond line of the impression\n",
      "TECHNICAL DIFFICULTIES: only excluded content\n",
  };
  for (const auto& raw : reports) {
    auto segs = segment_report(raw, lex);
    std::string rebuilt;
    for (const auto& s : segs) {
      if (!s.heading.empty()) rebuilt += s.heading + ":";
      rebuilt += s.body;
    }
    CHECK(strip_ws(rebuilt) == strip_ws(raw));
  }
}

TEST_CASE("sentences concatenate to the body modulo whitespace") {
  auto lex = default_lexicon();
  auto segs = segment_report(kFixtureReport, lex);
  for (const auto& s : segs) {
    std::string joined;
    for (const auto& sent : s.sentences) joined += sent;
    CHECK(strip_ws(joined) == strip_ws(s.body));
  }
}

TEST_CASE("sample_text: forced case, boundary, determinism, exclusion") {
  auto lex = default_lexicon();
  auto rep = make_report(kFixtureReport, lex);

  Rng rng(1);
  auto one = sample_text(rep, {Cluster::Interpretation}, Granularity::Paragraph, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].find("Abnormal EEG due to") != std::string::npos);

  auto all = sample_text(rep, {Cluster::ClinicalHistory, Cluster::RecordDescription, Cluster::Medication,
                               Cluster::Interpretation},
                         Granularity::Paragraph, 99, rng);
  CHECK(all.size() == 4);
  std::set<std::string> uniq(all.begin(), all.end());
  CHECK(uniq.size() == all.size());  // no repetition

  Rng a(42), b(42);
  auto s1 = sample_text(rep, {Cluster::RecordDescription, Cluster::Interpretation}, Granularity::Sentence, 8, a);
  auto s2 = sample_text(rep, {Cluster::RecordDescription, Cluster::Interpretation}, Granularity::Sentence, 8, b);
  CHECK(s1 == s2);

  // Excluded text is never sampled even when the report is mostly excluded.
  auto rep2 = make_report("TECHNICAL DIFFICULTIES: ZZEXCL sentinel text here.\nIMPRESSION: Normal EEG.\n", lex);
  for (int i = 0; i < 10; ++i) {
    Rng r(static_cast<std::uint64_t>(i));
    for (const auto& u : sample_text(rep2, {Cluster::ClinicalHistory, Cluster::RecordDescription,
                                            Cluster::Medication, Cluster::Interpretation},
                                     Granularity::Sentence, 3, r))
      CHECK(u.find("ZZEXCL") == std::string::npos);
  }

  auto rep3 = make_report("TECHNICAL DIFFICULTIES: all excluded.\n", lex);
  Rng r3(0);
  CHECK_THROWS_WITH_AS(sample_text(rep3, {Cluster::Interpretation}, Granularity::Paragraph, 1, r3),
                       doctest::Contains("no eligible text"), ValidationError);
}

TEST_CASE("summary classification over the prompt-style phrasing list") {
  using corpus::Label;
  CHECK(classify_summary("The EEG is normal.") == Label::Normal);
  CHECK(classify_summary("") == Label::Unknown);
  CHECK(classify_summary("This EEG is abnormal due to focal slowing.") == Label::Abnormal);

  const char* normals[] = {"Normal EEG.", "No pathology present.", "No abnormalities observed.",
                           "This EEG is within normal limits", "EEG shows no abnormalities.",
                           "No clinical events detected.", "No indications of pathology observed."};
  for (const auto* s : normals) CHECK_MESSAGE(classify_summary(s) == Label::Normal, s);

  const char* abnormals[] = {"Abnormal EEG.", "Pathology present.", "Markedly abnormal EEG.",
                             "Abnormal EEG due to:", "Clinical events detected.",
                             "The EEG is pathologically abnormal.", "This EEG is not normal."};
  for (const auto* s : abnormals) CHECK_MESSAGE(classify_summary(s) == Label::Abnormal, s);

  CHECK(classify_summary("Patient arrived on time for the appointment.") == Label::Unknown);
  // Total and deterministic on arbitrary input.
  CHECK(classify_summary("?? 123 !!") == classify_summary("?? 123 !!"));
}

TEST_CASE("balance_subsample equalizes classes and drops unknowns") {
  auto make_manifest = [](int n_normal, int n_abnormal, int n_unknown) {
    corpus::Manifest m;
    for (int i = 0; i < n_normal + n_abnormal + n_unknown; ++i) {
      corpus::ManifestEntry e;
      e.subject_id = concat("S", i);
      e.label = i < n_normal ? corpus::Label::Normal
                             : (i < n_normal + n_abnormal ? corpus::Label::Abnormal : corpus::Label::Unknown);
      m.entries.push_back(e);
    }
    return m;
  };

  Rng rng(5);
  auto b1 = balance_subsample(make_manifest(10, 30, 0), rng);
  int n_norm = 0, n_abn = 0;
  for (const auto& e : b1.entries) (e.label == corpus::Label::Normal ? n_norm : n_abn)++;
  CHECK(n_norm == 10);
  CHECK(n_abn == 10);

  auto b2 = balance_subsample(make_manifest(7, 7, 3), rng);
  CHECK(b2.entries.size() == 14);

  auto b3 = balance_subsample(make_manifest(50, 75, 0), rng);
  CHECK(b3.entries.size() == 100);
}

TEST_CASE("lexicon file round trip") {
  auto dir = testutil::scratch_dir("lexicon");
  auto lex = default_lexicon();
  lex.save(dir + "/lex.tsv");
  auto back = ClusterLexicon::load(dir + "/lex.tsv");
  CHECK(back.size() == lex.size());
  CHECK(back.classify("CLINICAL HISTORY").value() == Cluster::ClinicalHistory);
  CHECK(back.classify("impression").value() == Cluster::Interpretation);
  CHECK(!back.classify("UTTERLY NOVEL").has_value());
}
