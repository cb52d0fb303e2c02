#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "elmkit/common.hpp"
#include "elmkit/config.hpp"
#include "elmkit/tensor.hpp"

namespace elmkit::train {

// Flat record of named parameter tensors (and normalization buffers) plus
// the configuration that produced them and the training RNG state.
struct Checkpoint {
  ExperimentConfig config;
  std::map<std::string, NDArray> tensors;
  std::vector<std::uint64_t> rng_state;
  std::int64_t encoder_param_count = 0;
  std::int64_t total_param_count = 0;  // encoder plus projection/objective heads
  std::uint64_t text_fingerprint = 0;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeError("cannot write checkpoint " + path);
    const char magic[8] = {'E', 'L', 'M', 'K', 'C', 'K', 'P', '1'};
    os.write(magic, 8);
    write_string(os, config.serialize());
    write_i64(os, encoder_param_count);
    write_i64(os, total_param_count);
    write_u64(os, text_fingerprint);
    write_i64(os, static_cast<std::int64_t>(rng_state.size()));
    for (auto v : rng_state) write_u64(os, v);
    write_i64(os, static_cast<std::int64_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      write_string(os, name);
      write_i64(os, static_cast<std::int64_t>(t.shape.size()));
      for (auto d : t.shape) write_i64(os, d);
      os.write(reinterpret_cast<const char*>(t.v.data()),
               static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeError("cannot read checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, "ELMKCKP1", 8) == 0, "not an elmkit checkpoint: " + path);
    Checkpoint ck;
    const std::string cfg_text = read_string(is);
    for (const auto& line : split(cfg_text, '\n')) {
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      require(eq != std::string::npos, "corrupt config block in checkpoint");
      ck.config.set(t.substr(0, eq), t.substr(eq + 1));
    }
    ck.encoder_param_count = read_i64(is);
    ck.total_param_count = read_i64(is);
    ck.text_fingerprint = read_u64(is);
    const std::int64_t n_rng = read_i64(is);
    for (std::int64_t i = 0; i < n_rng; ++i) ck.rng_state.push_back(read_u64(is));
    const std::int64_t n_tensors = read_i64(is);
    for (std::int64_t i = 0; i < n_tensors; ++i) {
      std::string name = read_string(is);
      const std::int64_t ndim = read_i64(is);
      std::vector<std::int64_t> shape;
      for (std::int64_t d = 0; d < ndim; ++d) shape.push_back(read_i64(is));
      NDArray t(shape);
      is.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * sizeof(double)));
      require(is.good(), "truncated checkpoint " + path);
      ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
  }

 private:
  static void write_i64(std::ofstream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  static void write_u64(std::ofstream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  static void write_string(std::ofstream& os, const std::string& s) {
    write_i64(os, static_cast<std::int64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::int64_t read_i64(std::ifstream& is) {
    std::int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  static std::string read_string(std::ifstream& is) {
    const std::int64_t n = read_i64(is);
    require(n >= 0 && n < (1 << 26), "corrupt string in checkpoint");
    std::string s(static_cast<std::size_t>(n), '\0');
    is.read(s.data(), n);
    return s;
  }
};

}  // namespace elmkit::train
