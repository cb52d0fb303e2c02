#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/corpus.hpp"
#include "elmkit/tensor.hpp"

// Signal standardization: 10 s trim, 0.1-49 Hz zero-phase bandpass, resample
// to 100 Hz, clip to +-800 uV, bipolar TCP montage, non-overlapping cropping.

namespace elmkit::eegprep {

constexpr double kTargetRateHz = 100.0;
constexpr double kBandLowHz = 0.1;
constexpr double kBandHighHz = 49.0;
constexpr double kClipUv = 800.0;
constexpr double kTrimSeconds = 10.0;

// ---------------------------------------------------------------------------
// FIR design and zero-phase filtering
// ---------------------------------------------------------------------------

inline std::vector<double> hamming_window(std::int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] = 0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

// Windowed-sinc lowpass, unit DC gain, odd tap count.
inline std::vector<double> design_lowpass(double cutoff_hz, double fs, std::int64_t taps) {
  require(taps >= 3 && taps % 2 == 1, "design_lowpass: taps must be odd and >= 3");
  const double fc = cutoff_hz / fs;  // cycles per sample
  const std::int64_t mid = taps / 2;
  auto w = hamming_window(taps);
  std::vector<double> h(static_cast<std::size_t>(taps));
  double sum = 0.0;
  for (std::int64_t i = 0; i < taps; ++i) {
    const double m = static_cast<double>(i - mid);
    double v = (m == 0.0) ? 2.0 * fc : std::sin(2.0 * M_PI * fc * m) / (M_PI * m);
    v *= w[static_cast<std::size_t>(i)];
    h[static_cast<std::size_t>(i)] = v;
    sum += v;
  }
  for (auto& v : h) v /= sum;
  return h;
}

// Bandpass as difference of two lowpasses sharing one window.
inline std::vector<double> design_bandpass(double lo_hz, double hi_hz, double fs, double transition_hz = 2.0) {
  require(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs / 2.0, "design_bandpass: need 0 < lo < hi < Nyquist");
  std::int64_t taps = static_cast<std::int64_t>(std::ceil(3.3 * fs / transition_hz));
  if (taps % 2 == 0) ++taps;
  auto lp_hi = design_lowpass(hi_hz, fs, taps);
  auto lp_lo = design_lowpass(lo_hz, fs, taps);
  std::vector<double> h(lp_hi.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = lp_hi[i] - lp_lo[i];
  return h;
}

inline std::vector<double> convolve_same(const std::vector<double>& x, const std::vector<double>& h) {
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const std::int64_t k = static_cast<std::int64_t>(h.size());
  const std::int64_t mid = k / 2;
  std::vector<double> y(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::int64_t jlo = std::max<std::int64_t>(0, i - n + 1 + mid) ;
    const std::int64_t jhi = std::min<std::int64_t>(k, i + mid + 1);
    for (std::int64_t j = jlo; j < jhi; ++j) acc += h[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(i + mid - j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

// Forward-backward filtering with odd-reflection padding: zero phase,
// squared magnitude response.
inline std::vector<double> filtfilt(const std::vector<double>& x, const std::vector<double>& h) {
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const std::int64_t pad = std::min<std::int64_t>(static_cast<std::int64_t>(h.size()), n - 1);
  require(n >= 2, "filtfilt: signal too short");
  std::vector<double> ext;
  ext.reserve(static_cast<std::size_t>(n + 2 * pad));
  for (std::int64_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<std::size_t>(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::int64_t i = 1; i <= pad; ++i)
    ext.push_back(2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(n - 1 - i)]);

  auto fwd = convolve_same(ext, h);
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = convolve_same(fwd, h);
  std::reverse(bwd.begin(), bwd.end());
  return std::vector<double>(bwd.begin() + pad, bwd.begin() + pad + n);
}

// ---------------------------------------------------------------------------
// Polyphase rational resampling
// ---------------------------------------------------------------------------

inline std::vector<double> resample_rational(const std::vector<double>& x, std::int64_t up, std::int64_t down) {
  require(up >= 1 && down >= 1, "resample factors must be positive");
  const std::int64_t g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;

  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const std::int64_t half = 10 * std::max(up, down);
  const std::int64_t taps = 2 * half + 1;
  // Anti-aliasing lowpass at the up-rate, gain `up` to preserve amplitude.
  const double fc = 0.5 / static_cast<double>(std::max(up, down));
  auto w = hamming_window(taps);
  std::vector<double> h(static_cast<std::size_t>(taps));
  double sum = 0.0;
  for (std::int64_t i = 0; i < taps; ++i) {
    const double m = static_cast<double>(i - half);
    double v = (m == 0.0) ? 2.0 * fc : std::sin(2.0 * M_PI * fc * m) / (M_PI * m);
    v *= w[static_cast<std::size_t>(i)];
    h[static_cast<std::size_t>(i)] = v;
    sum += v;
  }
  for (auto& v : h) v *= static_cast<double>(up) / (sum);

  const std::int64_t out_n = (n * up) / down;
  std::vector<double> y(static_cast<std::size_t>(out_n), 0.0);
  for (std::int64_t o = 0; o < out_n; ++o) {
    const std::int64_t t = o * down;  // position on the upsampled grid
    double acc = 0.0;
    // x contributes at upsampled positions m*up; kernel index t - m*up + half.
    std::int64_t mlo = (t - half + up - 1) / up;
    std::int64_t mhi = (t + half) / up;
    mlo = std::max<std::int64_t>(mlo, 0);
    mhi = std::min<std::int64_t>(mhi, n - 1);
    for (std::int64_t m = mlo; m <= mhi; ++m) {
      const std::int64_t k = t - m * up + half;
      acc += x[static_cast<std::size_t>(m)] * h[static_cast<std::size_t>(k)];
    }
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

// Smallest integer ratio turning `fs` into `target` (errors if irrational-ish).
inline std::pair<std::int64_t, std::int64_t> rate_ratio(double fs, double target) {
  for (std::int64_t denom = 1; denom <= 10000; ++denom) {
    double num = target * static_cast<double>(denom) / fs;
    double r = std::round(num);
    if (std::abs(num - r) < 1e-9 && r >= 1.0) return {static_cast<std::int64_t>(r), denom};
  }
  fail("cannot express resampling ", fs, " -> ", target, " as a rational ratio");
}

// ---------------------------------------------------------------------------
// Bipolar montage
// ---------------------------------------------------------------------------

struct MontagePair {
  std::string label;
  std::string a;
  std::string b;
};

struct Montage {
  std::vector<MontagePair> pairs;

  // "LABEL = CH_A - CH_B" lines, '#' comments.
  static Montage load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw RuntimeError("cannot read montage " + path);
    Montage m;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      require(eq != std::string::npos, concat("montage ", path, " line ", lineno, ": missing '='"));
      std::string label = trim(t.substr(0, eq));
      std::string rhs = t.substr(eq + 1);
      auto dash = rhs.find('-');
      require(dash != std::string::npos, concat("montage ", path, " line ", lineno, ": missing '-'"));
      m.pairs.push_back({label, trim(rhs.substr(0, dash)), trim(rhs.substr(dash + 1))});
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw RuntimeError("cannot write montage " + path);
    for (const auto& p : pairs) os << p.label << " = " << p.a << " - " << p.b << "\n";
  }
};

// 20-derivation temporal central parasagittal scheme; the exact pair list is
// replaceable configuration (Montage::load).
inline Montage default_tcp_montage() {
  Montage m;
  auto add = [&](const char* a, const char* b) { m.pairs.push_back({std::string(a) + "-" + b, a, b}); };
  add("FP1", "F7"); add("F7", "T3"); add("T3", "T5"); add("T5", "O1");
  add("FP2", "F8"); add("F8", "T4"); add("T4", "T6"); add("T6", "O2");
  add("T3", "C3"); add("C3", "CZ"); add("CZ", "C4"); add("C4", "T4");
  add("FP1", "F3"); add("F3", "C3"); add("C3", "P3"); add("P3", "O1");
  add("FP2", "F4"); add("F4", "C4"); add("C4", "P4"); add("P4", "O2");
  return m;
}

// ---------------------------------------------------------------------------
// Standardized signal and crops
// ---------------------------------------------------------------------------

struct StandardSignal {
  NDArray signal;  // [20 x samples], 100 Hz, microvolts, |value| <= 800
  std::string subject_id;
  std::string session_id;
  std::vector<std::string> channel_names;

  std::int64_t channels() const { return signal.dim(0); }
  std::int64_t samples() const { return signal.dim(1); }
};

struct Crop {
  NDArray data;  // [20 x L]
  std::string subject_id;
  std::string session_id;
  std::int64_t crop_index = 0;
};

inline void clip_inplace(NDArray& x, double bound = kClipUv) {
  for (auto& v : x.v) v = std::clamp(v, -bound, bound);
}

// Order of operations: drop first 10 s -> bandpass 0.1-49 Hz -> resample to
// 100 Hz -> clip to +-800 uV -> bipolar montage.
inline StandardSignal preprocess(const corpus::Recording& rec, const Montage& montage) {
  rec.validate();
  if (rec.reference == corpus::Reference::Other)
    fail("unsupported reference scheme for ", rec.subject_id, "/", rec.session_id,
         ": expected AR or LE");
  require(montage.pairs.size() == 20, "montage must define exactly 20 bipolar pairs");

  // Resolve montage channels up front so missing electrodes fail early.
  std::vector<std::pair<std::int64_t, std::int64_t>> idx;
  idx.reserve(montage.pairs.size());
  auto find_channel = [&](const std::string& name) -> std::int64_t {
    for (std::size_t i = 0; i < rec.channel_names.size(); ++i)
      if (lower(trim(rec.channel_names[i])) == lower(name)) return static_cast<std::int64_t>(i);
    fail("missing channel '", name, "' in recording ", rec.subject_id, "/", rec.session_id);
  };
  for (const auto& p : montage.pairs) idx.emplace_back(find_channel(p.a), find_channel(p.b));

  const double fs = rec.sampling_rate;
  const auto trim_n = static_cast<std::int64_t>(std::llround(kTrimSeconds * fs));
  require(rec.samples() > trim_n + 1, "recording shorter than the 10 s set-up trim");
  const std::int64_t n = rec.samples() - trim_n;

  const auto kernel = design_bandpass(kBandLowHz, kBandHighHz, fs);
  const auto [up, down] = rate_ratio(fs, kTargetRateHz);

  // Per-channel filtering/resampling of only the channels the montage needs.
  std::vector<std::int64_t> needed;
  for (const auto& [a, b] : idx) {
    needed.push_back(a);
    needed.push_back(b);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  std::vector<std::vector<double>> processed(rec.channel_names.size());
  parallel_for(static_cast<std::int64_t>(needed.size()), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t w = lo; w < hi; ++w) {
      const std::int64_t c = needed[static_cast<std::size_t>(w)];
      std::vector<double> x(static_cast<std::size_t>(n));
      for (std::int64_t t = 0; t < n; ++t) x[static_cast<std::size_t>(t)] = rec.signal.at(c, trim_n + t);
      x = filtfilt(x, kernel);
      x = resample_rational(x, up, down);
      for (auto& v : x) v = std::clamp(v, -kClipUv, kClipUv);
      processed[static_cast<std::size_t>(c)] = std::move(x);
    }
  });

  const std::int64_t out_n = static_cast<std::int64_t>(processed[static_cast<std::size_t>(needed[0])].size());
  StandardSignal out;
  out.subject_id = rec.subject_id;
  out.session_id = rec.session_id;
  out.signal = NDArray({static_cast<std::int64_t>(montage.pairs.size()), out_n});
  for (std::size_t p = 0; p < montage.pairs.size(); ++p) {
    out.channel_names.push_back(montage.pairs[p].label);
    const auto& a = processed[static_cast<std::size_t>(idx[p].first)];
    const auto& b = processed[static_cast<std::size_t>(idx[p].second)];
    for (std::int64_t t = 0; t < out_n; ++t)
      out.signal.at(static_cast<std::int64_t>(p), t) = a[static_cast<std::size_t>(t)] - b[static_cast<std::size_t>(t)];
  }
  clip_inplace(out.signal);
  return out;
}

constexpr std::array<std::int64_t, 5> kCropSecondsChoices = {5, 10, 20, 30, 60};

// Consecutive non-overlapping windows from sample 0; remainder discarded.
inline std::vector<Crop> crop(const StandardSignal& sig, std::int64_t crop_seconds,
                              std::int64_t max_crops = -1) {
  bool ok = false;
  for (auto c : kCropSecondsChoices) ok = ok || c == crop_seconds;
  require(ok, "crop_seconds must be one of {5,10,20,30,60}");
  const std::int64_t L = crop_seconds * static_cast<std::int64_t>(kTargetRateHz);
  const std::int64_t count = sig.samples() / L;
  if (count == 0)
    fail("signal too short to crop: ", sig.samples(), " samples < ", L, " (", sig.subject_id, "/",
         sig.session_id, ")");
  const std::int64_t n = (max_crops >= 0) ? std::min(count, max_crops) : count;
  std::vector<Crop> crops;
  crops.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Crop c;
    c.subject_id = sig.subject_id;
    c.session_id = sig.session_id;
    c.crop_index = i;
    c.data = NDArray({sig.channels(), L});
    for (std::int64_t ch = 0; ch < sig.channels(); ++ch)
      for (std::int64_t t = 0; t < L; ++t) c.data.at(ch, t) = sig.signal.at(ch, i * L + t);
    crops.push_back(std::move(c));
  }
  return crops;
}

}  // namespace elmkit::eegprep
