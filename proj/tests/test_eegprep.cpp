#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elmkit/eegprep.hpp"
#include "support/testutil.hpp"

using namespace elmkit;
using namespace elmkit::eegprep;

namespace {

// Recording over the 17 electrodes the default montage needs, signal built
// per channel by a generator function of (channel, time_seconds).
corpus::Recording make_recording(double fs, double seconds,
                                 const std::function<double(std::int64_t, double)>& gen) {
  corpus::Recording rec;
  rec.subject_id = "T0";
  rec.session_id = "s01";
  rec.sampling_rate = fs;
  rec.reference = corpus::Reference::AR;
  rec.channel_names = {"FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1",
                       "O2",  "F7",  "F8", "T3", "T4", "T5", "T6", "CZ"};
  const auto n = static_cast<std::int64_t>(fs * seconds);
  rec.signal = NDArray({static_cast<std::int64_t>(rec.channel_names.size()), n});
  for (std::int64_t c = 0; c < rec.signal.dim(0); ++c)
    for (std::int64_t t = 0; t < n; ++t)
      rec.signal.at(c, t) = gen(c, static_cast<double>(t) / fs);
  return rec;
}

double rms(const NDArray& x) {
  double s = 0.0;
  for (auto v : x.v) s += v * v;
  return std::sqrt(s / static_cast<double>(x.v.size()));
}

}  // namespace

TEST_CASE("constant zero signal stays zero through the pipeline") {
  auto rec = make_recording(100.0, 70.0, [](std::int64_t, double) { return 0.0; });
  auto sig = preprocess(rec, default_tcp_montage());
  CHECK(sig.channels() == 20);
  for (auto v : sig.signal.v) CHECK(v == 0.0);
}

TEST_CASE("250 Hz input of 70 s yields 6000 output samples at 100 Hz") {
  Rng rng(1);
  auto rec = make_recording(250.0, 70.0, [&](std::int64_t c, double t) {
    return 20.0 * std::sin(2.0 * M_PI * 5.0 * t + static_cast<double>(c));
  });
  auto sig = preprocess(rec, default_tcp_montage());
  CHECK(sig.samples() == 6000);
  CHECK(sig.channels() == 20);
}

TEST_CASE("amplitude clipping bounds adversarial spikes at 800 microvolts") {
  auto rec = make_recording(100.0, 70.0, [](std::int64_t c, double t) {
    // Huge alternating spikes so the bipolar difference stays extreme too.
    const double base = (t > 20.0 && t < 22.0) ? 2000.0 : 30.0;
    return (c % 2 == 0 ? base : -base);
  });
  auto sig = preprocess(rec, default_tcp_montage());
  double peak = 0.0;
  for (auto v : sig.signal.v) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 800.0);
  CHECK(peak > 700.0);  // the clip actually engaged
}

TEST_CASE("60 Hz tone is attenuated at least 20 dB relative to a 10 Hz tone") {
  Rng rng(2);
  std::vector<double> gains;
  for (int c = 0; c < 17; ++c) gains.push_back(rng.uniform(0.5, 1.5));
  auto tone = [&](double hz) {
    auto rec = make_recording(250.0, 80.0, [&](std::int64_t c, double t) {
      return 50.0 * gains[static_cast<std::size_t>(c)] * std::sin(2.0 * M_PI * hz * t);
    });
    return preprocess(rec, default_tcp_montage());
  };
  const double r10 = rms(tone(10.0).signal);
  const double r60 = rms(tone(60.0).signal);
  CHECK(r10 > 1.0);  // the passband tone survives
  const double db = 20.0 * std::log10(r10 / r60);
  CHECK(db >= 20.0);
}

TEST_CASE("preprocess is deterministic") {
  Rng rng(3);
  std::vector<double> noise;
  for (int i = 0; i < 17 * 7100; ++i) noise.push_back(rng.normal() * 25.0);
  auto gen = [&](std::int64_t c, double t) {
    return noise[static_cast<std::size_t>(c * 7100 + static_cast<std::int64_t>(t * 100.0))];
  };
  auto a = preprocess(make_recording(100.0, 71.0, gen), default_tcp_montage());
  auto b = preprocess(make_recording(100.0, 71.0, gen), default_tcp_montage());
  REQUIRE(a.signal.v.size() == b.signal.v.size());
  for (std::size_t i = 0; i < a.signal.v.size(); ++i) CHECK(a.signal.v[i] == b.signal.v[i]);
}

TEST_CASE("missing electrodes and unsupported references are rejected by name") {
  auto rec = make_recording(100.0, 70.0, [](std::int64_t, double) { return 1.0; });
  rec.channel_names[0] = "XX1";  // clobber FP1
  CHECK_THROWS_WITH_AS(preprocess(rec, default_tcp_montage()), doctest::Contains("FP1"), ValidationError);

  auto rec2 = make_recording(100.0, 70.0, [](std::int64_t, double) { return 1.0; });
  rec2.reference = corpus::Reference::Other;
  CHECK_THROWS_WITH_AS(preprocess(rec2, default_tcp_montage()), doctest::Contains("reference"),
                       ValidationError);
}

TEST_CASE("channel name matching is case-insensitive") {
  auto rec = make_recording(100.0, 70.0, [](std::int64_t, double) { return 1.0; });
  for (auto& n : rec.channel_names) n = lower(n);
  CHECK_NOTHROW(preprocess(rec, default_tcp_montage()));
}

TEST_CASE("cropping: arithmetic, boundary, cap, and too-short error") {
  StandardSignal sig;
  sig.subject_id = "T0";
  sig.session_id = "s01";
  sig.signal = NDArray({20, 60000});  // 600 s at 100 Hz
  Rng rng(4);
  for (auto& v : sig.signal.v) v = rng.normal();

  auto crops = crop(sig, 60);
  CHECK(crops.size() == 10);
  for (std::size_t i = 0; i < crops.size(); ++i) {
    CHECK(crops[i].crop_index == static_cast<std::int64_t>(i));
    CHECK(crops[i].data.dim(1) == 6000);
  }
  // Windows tile the signal exactly from sample zero.
  CHECK(crops[3].data.at(7, 11) == sig.signal.at(7, 3 * 6000 + 11));

  auto capped = crop(sig, 5, 120);
  CHECK(capped.size() == 120);

  StandardSignal nearly;
  nearly.signal = NDArray({20, 6100});  // 61 s
  auto one = crop(nearly, 60);
  CHECK(one.size() == 1);

  StandardSignal tiny;
  tiny.signal = NDArray({20, 400});
  CHECK_THROWS_WITH_AS(crop(tiny, 5), doctest::Contains("too short"), ValidationError);

  CHECK_THROWS_AS(crop(sig, 7), ValidationError);  // not a supported crop length
}

TEST_CASE("rational resampling preserves a passband tone") {
  const double fs = 250.0;
  std::vector<double> x;
  for (int i = 0; i < 2500; ++i) x.push_back(std::sin(2.0 * M_PI * 5.0 * static_cast<double>(i) / fs));
  auto y = resample_rational(x, 2, 5);
  REQUIRE(y.size() == 1000);
  // Compare against the ideal 100 Hz sine away from the edges.
  double err = 0.0, ref = 0.0;
  for (int i = 100; i < 900; ++i) {
    const double ideal = std::sin(2.0 * M_PI * 5.0 * static_cast<double>(i) / 100.0);
    err += (y[static_cast<std::size_t>(i)] - ideal) * (y[static_cast<std::size_t>(i)] - ideal);
    ref += ideal * ideal;
  }
  CHECK(std::sqrt(err / ref) < 0.02);

  CHECK(resample_rational(x, 1, 1) == x);
  CHECK(rate_ratio(250.0, 100.0) == std::pair<std::int64_t, std::int64_t>(2, 5));
  CHECK(rate_ratio(256.0, 100.0) == std::pair<std::int64_t, std::int64_t>(25, 64));
}

TEST_CASE("zero-phase filtering does not shift a narrow pulse") {
  auto kernel = design_bandpass(0.5, 30.0, 100.0);
  std::vector<double> x(1000, 0.0);
  for (int i = 0; i < 1000; ++i) {
    const double d = (i - 500) / 10.0;
    x[static_cast<std::size_t>(i)] = std::exp(-d * d);
  }
  auto y = filtfilt(x, kernel);
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > y[argmax]) argmax = i;
  CHECK(std::abs(static_cast<std::ptrdiff_t>(argmax) - 500) <= 1);
}

TEST_CASE("montage file round trip and defaults") {
  auto m = default_tcp_montage();
  REQUIRE(m.pairs.size() == 20);
  CHECK(m.pairs[0].label == "FP1-F7");
  auto dir = testutil::scratch_dir("montage");
  m.save(dir + "/tcp.txt");
  auto back = Montage::load(dir + "/tcp.txt");
  REQUIRE(back.pairs.size() == 20);
  CHECK(back.pairs[7].a == m.pairs[7].a);
  CHECK(back.pairs[7].b == m.pairs[7].b);
}
