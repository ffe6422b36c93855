#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/geometry.hpp"
#include "mvd/random.hpp"

namespace mvd {

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int label = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  bool operator==(const DatasetManifest&) const = default;
};

inline void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= m.class_names.size()) {
      throw LabelOutOfRange("label " + std::to_string(e.label) + " for " + e.path);
    }
    if (!seen.insert(e.path).second) throw InvalidArgument("duplicate manifest path " + e.path);
  }
}

inline std::string format_manifest(const DatasetManifest& m) {
  validate_manifest(m);
  std::string out = "# classes: ";
  for (std::size_t i = 0; i < m.class_names.size(); ++i) {
    if (i) out += ',';
    out += m.class_names[i];
  }
  out += '\n';
  for (const auto& e : m.entries) out += e.path + '\t' + std::to_string(e.label) + '\n';
  return out;
}

inline DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header) {
      const std::string prefix = "# classes:";
      if (line.rfind(prefix, 0) != 0) throw ParseError(lineno, "expected '# classes: a,b,...' header");
      std::string list = line.substr(prefix.size());
      std::istringstream ls(list);
      std::string name;
      while (std::getline(ls, name, ',')) {
        const auto b = name.find_first_not_of(' ');
        const auto e = name.find_last_not_of(' ');
        if (b == std::string::npos) throw ParseError(lineno, "empty class name");
        m.class_names.push_back(name.substr(b, e - b + 1));
      }
      if (m.class_names.empty()) throw ParseError(lineno, "no classes declared");
      header = true;
      continue;
    }
    if (line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw ParseError(lineno, "expected 'path<TAB>label'");
    ManifestEntry e;
    e.path = line.substr(0, tab);
    const std::string lab = line.substr(tab + 1);
    std::size_t used = 0;
    try {
      e.label = std::stoi(lab, &used);
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad label '" + lab + "'");
    }
    if (used != lab.size()) throw ParseError(lineno, "bad label '" + lab + "'");
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= m.class_names.size()) {
      throw ParseError(lineno, "label " + lab + " outside " + std::to_string(m.class_names.size()) + " classes");
    }
    if (!seen.insert(e.path).second) throw ParseError(lineno, "duplicate path " + e.path);
    m.entries.push_back(std::move(e));
  }
  if (!header) throw ParseError(lineno, "missing '# classes:' header");
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto data = bin::read_file(path);
  return parse_manifest(std::string(data.begin(), data.end()));
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  bin::write_text_atomic(path, format_manifest(m));
}

/// File stem of an entry, used as its shape id.
inline std::string shape_id_of(const ManifestEntry& e) { return std::filesystem::path(e.path).stem().string(); }

// ---------------------------------------------------------------------------
// Synthetic primitives

enum class Primitive { sphere, cube, cylinder, cone };

inline constexpr std::array<Primitive, 4> kAllPrimitives{Primitive::sphere, Primitive::cube, Primitive::cylinder,
                                                         Primitive::cone};

inline const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::sphere: return "sphere";
    case Primitive::cube: return "cube";
    case Primitive::cylinder: return "cylinder";
    case Primitive::cone: return "cone";
  }
  return "?";
}

struct SyntheticSpec {
  std::vector<Primitive> classes{kAllPrimitives.begin(), kAllPrimitives.end()};
  std::size_t count_per_class = 200;
  std::size_t points = 256;
  double jitter = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes.empty()) throw InvalidArgument("no classes requested");
    if (points < 32) throw InvalidArgument("need at least 32 points per cloud");
    if (!(jitter >= 0.0)) throw InvalidArgument("jitter must be non-negative");
  }
};

namespace detail {

inline Vec3 sample_surface(Primitive shape, Rng& rng) {
  constexpr double pi = std::numbers::pi;
  switch (shape) {
    case Primitive::sphere: {
      Vec3 p;
      double r = 0.0;
      while (r < 1e-12) {
        p = {rng.normal(), rng.normal(), rng.normal()};
        r = norm(p);
      }
      return p / r;
    }
    case Primitive::cube: {
      // Six faces of [-1,1]^3, equal area.
      const auto face = rng.index(6);
      const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
      const double s = face % 2 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, u, v};
        case 1: return {u, s, v};
        default: return {u, v, s};
      }
    }
    case Primitive::cylinder: {
      // Radius 1, z in [-1,1]: side 4*pi, each cap pi.
      const double pick = rng.uniform() * 6.0 * pi;
      const double phi = rng.uniform(0, 2 * pi);
      if (pick < 4.0 * pi) return {std::cos(phi), std::sin(phi), rng.uniform(-1, 1)};
      const double r = std::sqrt(rng.uniform());
      return {r * std::cos(phi), r * std::sin(phi), pick < 5.0 * pi ? 1.0 : -1.0};
    }
    case Primitive::cone: {
      // Apex (0,0,1), base radius 1 at z=-1: lateral pi*sqrt(5), base pi.
      const double lateral = pi * std::sqrt(5.0);
      const double pick = rng.uniform() * (lateral + pi);
      const double phi = rng.uniform(0, 2 * pi);
      const double t = std::sqrt(rng.uniform());
      if (pick < lateral) return {t * std::cos(phi), t * std::sin(phi), 1.0 - 2.0 * t};
      return {t * std::cos(phi), t * std::sin(phi), -1.0};
    }
  }
  return {};
}

}  // namespace detail

/// One normalized cloud: area-uniform surface samples, Gaussian jitter,
/// a random rotation about +z.
inline PointCloud generate_primitive(Primitive shape, std::size_t points, double jitter, Rng& rng) {
  PointCloud cloud;
  cloud.points.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    Vec3 p = detail::sample_surface(shape, rng);
    if (jitter > 0.0) p += Vec3{rng.normal(), rng.normal(), rng.normal()} * jitter;
    cloud.points.push_back(p);
  }
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& p : cloud.points) p = {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
  return normalize_cloud(cloud);
}

/// Writes `clouds/<class>_<iiii>.xyz` and `manifest.txt` under `out_dir`.
inline DatasetManifest gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "clouds", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "clouds").string() + ": " + ec.message());

  DatasetManifest manifest;
  for (auto c : spec.classes) manifest.class_names.emplace_back(to_string(c));
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    for (std::size_t i = 0; i < spec.count_per_class; ++i) {
      Rng rng(derive_seed(spec.seed, ci * 1000003ull + i));
      PointCloud cloud = generate_primitive(spec.classes[ci], spec.points, spec.jitter, rng);
      cloud.label = static_cast<int>(ci);
      char name[96];
      std::snprintf(name, sizeof name, "clouds/%s_%04zu.xyz", to_string(spec.classes[ci]), i);
      write_xyz(cloud, out_dir / name);
      manifest.entries.push_back({name, static_cast<int>(ci)});
    }
  }
  write_manifest(manifest, out_dir / "manifest.txt");
  return manifest;
}

}  // namespace mvd
