#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/random.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

struct Parameter {
  std::string name;
  Tensor2 value;
  Tensor2 grad;
  Tensor2 m;  // Adam first moment
  Tensor2 v;  // Adam second moment
};

/// Named parameters with matching gradient and optimizer-moment buffers,
/// kept in insertion order.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor2 init) {
    if (index_.contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    const std::size_t r = init.rows(), c = init.cols();
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(init), Tensor2(r, c), Tensor2(r, c), Tensor2(r, c)});
    return params_.back();
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Parameter& at(std::string_view name) { return params_[index_of(name)]; }
  const Parameter& at(std::string_view name) const { return params_[index_of(name)]; }
  Parameter& operator[](std::size_t i) { return params_.at(i); }
  const Parameter& operator[](std::size_t i) const { return params_.at(i); }

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor2 w(fan_in, fan_out);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w.data()) x = rng.uniform(-a, a);
  return w;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update for step `t` (1-based); clears gradients afterwards.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, std::size_t t) {
  if (t == 0) throw InvalidArgument("adam step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.params()) {
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = p.m.data();
    auto v = p.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      g[i] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint: "MVPT", u32 version, u32 count, per tensor u16 name length,
// name bytes, u32 rows, u32 cols, rows*cols f64. Values only, no moments.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const ParamStore& store) {
  bin::Writer w;
  w.put_bytes("MVPT");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.params()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.cols()));
    for (double x : p.value.data()) w.put<double>(x);
  }
  return w.bytes();
}

inline ParamStore decode_checkpoint(std::span<const char> data) {
  bin::Reader r(data);
  if (r.get_bytes(4) != "MVPT") throw BadMagic("not a parameter checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw UnsupportedVersion("checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.get_bytes(len);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (n * 8 > r.remaining()) throw TruncatedFile("tensor '" + name + "' payload");
    std::vector<double> values(n);
    for (auto& x : values) x = r.get<double>();
    Tensor2 value(rows, cols, std::move(values));
    if (!value.all_finite()) throw NonFiniteValue("tensor '" + name + "'");
    store.add(std::move(name), std::move(value));
  }
  return store;
}

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_checkpoint(store));
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bin::read_file(path));
}

}  // namespace mvd
