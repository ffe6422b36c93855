#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

/// Frozen multi-view knowledge for one shape: one descriptor row per rig
/// view, plus optional whole-shape feature and class logits.
struct TeacherKnowledge {
  std::string shape_id;
  Tensor2 descriptors;                   // K x C_t
  std::optional<Tensor2> global_feature;  // 1 x C_g
  std::optional<Tensor2> logits;          // 1 x classes

  std::size_t num_views() const { return descriptors.rows(); }
  std::size_t descriptor_dim() const { return descriptors.cols(); }

  bool operator==(const TeacherKnowledge&) const = default;
};

/// Round every value to single precision, the storage precision of `.tkd`.
inline void round_to_f32(Tensor2& t) {
  for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// .tkd: "MVTK", u32 version, u16 id length + bytes, u32 K, u32 C_t,
// K*C_t f32, u8 has_global [u32 C_g, C_g f32], u8 has_logits [u32 C, C f32].

inline constexpr std::uint32_t kTeacherVersion = 1;

inline std::vector<char> encode_tkd(const TeacherKnowledge& tk) {
  if (tk.shape_id.size() > UINT16_MAX) throw InvalidArgument("shape id too long");
  bin::Writer w;
  w.put_bytes("MVTK");
  w.put<std::uint32_t>(kTeacherVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(tk.shape_id.size()));
  w.put_bytes(tk.shape_id);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tk.descriptors.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tk.descriptors.cols()));
  for (double v : tk.descriptors.data()) w.put<float>(static_cast<float>(v));
  auto put_vector = [&](const std::optional<Tensor2>& t) {
    w.put<std::uint8_t>(t ? 1 : 0);
    if (!t) return;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->size()));
    for (double v : t->data()) w.put<float>(static_cast<float>(v));
  };
  put_vector(tk.global_feature);
  put_vector(tk.logits);
  return w.bytes();
}

inline TeacherKnowledge decode_tkd(std::span<const char> data) {
  bin::Reader r(data);
  if (r.get_bytes(4) != "MVTK") throw BadMagic("not a teacher knowledge file");
  const auto version = r.get<std::uint32_t>();
  if (version != kTeacherVersion) throw UnsupportedVersion("tkd version " + std::to_string(version));
  TeacherKnowledge tk;
  tk.shape_id = r.get_bytes(r.get<std::uint16_t>());
  const auto k = r.get<std::uint32_t>();
  const auto ct = r.get<std::uint32_t>();
  if (static_cast<std::size_t>(k) * ct * 4 > r.remaining()) throw TruncatedFile("descriptor payload");
  tk.descriptors = Tensor2(k, ct);
  for (auto& v : tk.descriptors.data()) v = r.get<float>();
  auto get_vector = [&](const char* what) -> std::optional<Tensor2> {
    const auto flag = r.get<std::uint8_t>();
    if (flag == 0) return std::nullopt;
    if (flag != 1) throw InvalidArgument(std::string("bad presence flag for ") + what);
    const auto n = r.get<std::uint32_t>();
    if (static_cast<std::size_t>(n) * 4 > r.remaining()) throw TruncatedFile(what);
    Tensor2 t(1, n);
    for (auto& v : t.data()) v = r.get<float>();
    return t;
  };
  tk.global_feature = get_vector("global feature");
  tk.logits = get_vector("logits");
  if (r.remaining() != 0) throw InvalidArgument("trailing bytes after teacher payload");
  if (!tk.descriptors.all_finite() || (tk.global_feature && !tk.global_feature->all_finite()) ||
      (tk.logits && !tk.logits->all_finite())) {
    throw NonFiniteValue("teacher file holds non-finite values");
  }
  return tk;
}

inline void write_tkd(const TeacherKnowledge& tk, const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_tkd(tk));
}

inline TeacherKnowledge read_tkd(const std::filesystem::path& path) { return decode_tkd(bin::read_file(path)); }

}  // namespace mvd
