#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvd/error.hpp"
#include "mvd/geometry.hpp"
#include "mvd/params.hpp"
#include "mvd/random.hpp"
#include "mvd/tape.hpp"

namespace mvd {

/// Shared per-point MLP (widths 3 -> ... -> C_s, ReLU after every layer)
/// followed by a max-pooled classification head (C_s -> hidden... -> classes).
struct EncoderConfig {
  std::vector<std::size_t> widths{3, 64, 64, 128};
  std::vector<std::size_t> head_hidden{64};
  std::size_t num_classes = 4;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2 || widths.front() != 3) throw InvalidArgument("encoder widths must start at 3");
    for (auto w : widths) {
      if (w == 0) throw InvalidArgument("encoder widths must be positive");
    }
    for (auto w : head_hidden) {
      if (w == 0) throw InvalidArgument("head widths must be positive");
    }
    if (num_classes == 0) throw InvalidArgument("need at least one class");
  }

  std::vector<std::size_t> head_widths() const {
    std::vector<std::size_t> h{feature_dim()};
    h.insert(h.end(), head_hidden.begin(), head_hidden.end());
    h.push_back(num_classes);
    return h;
  }
};

inline std::string layer_name(const char* block, std::size_t layer, const char* which) {
  return std::string(block) + "." + std::to_string(layer) + "." + which;
}

/// Adds encoder and head parameters (Glorot weights, zero biases).
inline void init_student(ParamStore& store, const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x5EED));
  for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
    store.add(layer_name("enc", l, "W"), glorot_uniform(cfg.widths[l], cfg.widths[l + 1], rng));
    store.add(layer_name("enc", l, "b"), Tensor2(1, cfg.widths[l + 1]));
  }
  const auto hw = cfg.head_widths();
  for (std::size_t l = 0; l + 1 < hw.size(); ++l) {
    store.add(layer_name("head", l, "W"), glorot_uniform(hw[l], hw[l + 1], rng));
    store.add(layer_name("head", l, "b"), Tensor2(1, hw[l + 1]));
  }
}

/// Recover the architecture from parameter names and shapes.
inline EncoderConfig infer_encoder_config(const ParamStore& store) {
  EncoderConfig cfg;
  cfg.widths.clear();
  cfg.head_hidden.clear();
  for (std::size_t l = 0; store.contains(layer_name("enc", l, "W")); ++l) {
    const auto& w = store.at(layer_name("enc", l, "W")).value;
    if (l == 0) cfg.widths.push_back(w.rows());
    cfg.widths.push_back(w.cols());
  }
  std::size_t l = 0;
  for (; store.contains(layer_name("head", l, "W")); ++l) {
    const auto& w = store.at(layer_name("head", l, "W")).value;
    cfg.head_hidden.push_back(w.cols());
  }
  if (cfg.widths.empty() || l == 0) throw InvalidArgument("checkpoint lacks encoder or head parameters");
  cfg.num_classes = cfg.head_hidden.back();
  cfg.head_hidden.pop_back();
  cfg.validate();
  return cfg;
}

/// Tape handles for one forward pass.
struct StudentVars {
  std::vector<Var> enc_w, enc_b, head_w, head_b;
};

inline StudentVars bind_student(Tape& tape, ParamStore& store, const EncoderConfig& cfg) {
  StudentVars v;
  for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
    v.enc_w.push_back(tape.parameter(store, layer_name("enc", l, "W")));
    v.enc_b.push_back(tape.parameter(store, layer_name("enc", l, "b")));
  }
  const auto hw = cfg.head_widths();
  for (std::size_t l = 0; l + 1 < hw.size(); ++l) {
    v.head_w.push_back(tape.parameter(store, layer_name("head", l, "W")));
    v.head_b.push_back(tape.parameter(store, layer_name("head", l, "b")));
  }
  return v;
}

/// Head weights as tape constants: gradients through the head reach only its input.
inline StudentVars frozen_head(Tape& tape, const ParamStore& store, const StudentVars& live) {
  StudentVars v;
  for (std::size_t l = 0; l < live.head_w.size(); ++l) {
    v.head_w.push_back(tape.constant(store.at(layer_name("head", l, "W")).value));
    v.head_b.push_back(tape.constant(store.at(layer_name("head", l, "b")).value));
  }
  return v;
}

inline Tensor2 points_matrix(const PointCloud& cloud) {
  Tensor2 x(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    x(i, 0) = cloud.points[i].x;
    x(i, 1) = cloud.points[i].y;
    x(i, 2) = cloud.points[i].z;
  }
  return x;
}

/// Per-point embeddings: row i of the result belongs to input row i.
inline Var encode(Tape& tape, const StudentVars& vars, Var points) {
  Var h = points;
  for (std::size_t l = 0; l < vars.enc_w.size(); ++l) {
    h = nn::relu(tape, nn::linear(tape, h, vars.enc_w[l], vars.enc_b[l]));
  }
  return h;
}

/// Order-free shape descriptor: channel-wise max over all embeddings.
inline Var global_descriptor(Tape& tape, Var features) { return nn::channelwise_max(tape, features); }

/// Head MLP over pooled descriptors (one row per shape); no activation on the output.
inline Var classify(Tape& tape, const StudentVars& vars, Var pooled) {
  Var h = pooled;
  for (std::size_t l = 0; l < vars.head_w.size(); ++l) {
    h = nn::linear(tape, h, vars.head_w[l], vars.head_b[l]);
    if (l + 1 < vars.head_w.size()) h = nn::relu(tape, h);
  }
  return h;
}

/// Inference helpers on a frozen store.
inline Tensor2 encode_cloud(const PointCloud& cloud, ParamStore& store) {
  const auto cfg = infer_encoder_config(store);
  Tape tape;
  const auto vars = bind_student(tape, store, cfg);
  return tape.value(encode(tape, vars, tape.constant(points_matrix(cloud))));
}

inline Tensor2 classify_cloud(const PointCloud& cloud, ParamStore& store) {
  const auto cfg = infer_encoder_config(store);
  Tape tape;
  const auto vars = bind_student(tape, store, cfg);
  const Var g = encode(tape, vars, tape.constant(points_matrix(cloud)));
  return tape.value(classify(tape, vars, global_descriptor(tape, g)));
}

}  // namespace mvd
