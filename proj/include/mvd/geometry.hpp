#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/binary_io.hpp"
#include "mvd/error.hpp"
#include "mvd/random.hpp"

namespace mvd {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }

/// An ordered point set. Anchors are the points themselves, so row i of any
/// per-point feature matrix belongs to `points[i]`.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<int> label;

  std::size_t size() const { return points.size(); }
};

inline Vec3 centroid(const PointCloud& cloud) {
  Vec3 c;
  for (const auto& p : cloud.points) c += p;
  return c / static_cast<double>(cloud.points.size());
}

/// Max distance from the origin.
inline double bounding_radius(const PointCloud& cloud) {
  double r = 0.0;
  for (const auto& p : cloud.points) r = std::max(r, norm(p));
  return r;
}

/// Center on the centroid and scale so the farthest point has norm 1.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.points.empty()) throw DegenerateCloud("empty cloud");
  for (const auto& p : cloud.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw DegenerateCloud("non-finite coordinate");
    }
  }
  const Vec3 c = centroid(cloud);
  double r = 0.0;
  for (const auto& p : cloud.points) r = std::max(r, norm(p - c));
  if (!(r > 0.0)) throw DegenerateCloud("all points coincide");
  PointCloud out;
  out.label = cloud.label;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back((p - c) / r);
  return out;
}

// ---------------------------------------------------------------------------
// Cameras

inline constexpr double kDefaultDistanceFactor = 2.2;

/// Viewpoint on a sphere around the cloud centroid. Right-handed, +z up,
/// elevation measured from the xy-plane; distance in multiples of the
/// cloud's bounding radius.
class CameraPose {
 public:
  CameraPose(double azimuth, double elevation, double distance_factor = kDefaultDistanceFactor)
      : azimuth_(azimuth), elevation_(elevation), distance_factor_(distance_factor) {
    if (!std::isfinite(azimuth) || !std::isfinite(elevation) || !std::isfinite(distance_factor)) {
      throw InvalidArgument("camera pose must be finite");
    }
    if (!(elevation > -std::numbers::pi / 2 && elevation < std::numbers::pi / 2)) {
      throw InvalidArgument("elevation must lie in (-pi/2, pi/2)");
    }
    if (!(distance_factor > 1.0)) {
      throw InvalidArgument("distance factor must exceed 1");
    }
  }

  double azimuth() const { return azimuth_; }
  double elevation() const { return elevation_; }
  double distance_factor() const { return distance_factor_; }

  bool operator==(const CameraPose&) const = default;

 private:
  double azimuth_;
  double elevation_;
  double distance_factor_;
};

inline Vec3 camera_position(const CameraPose& pose, double bounding_radius) {
  const double d = pose.distance_factor() * bounding_radius;
  const double ce = std::cos(pose.elevation());
  return {d * ce * std::cos(pose.azimuth()), d * ce * std::sin(pose.azimuth()),
          d * std::sin(pose.elevation())};
}

class ViewRig {
 public:
  explicit ViewRig(std::vector<CameraPose> poses) : poses_(std::move(poses)) {
    if (poses_.empty()) throw InvalidArgument("rig needs at least one pose");
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      for (std::size_t j = i + 1; j < poses_.size(); ++j) {
        if (poses_[i] == poses_[j]) {
          throw InvalidArgument("duplicate pose at " + std::to_string(i) + " and " +
                                std::to_string(j));
        }
      }
    }
  }

  std::size_t size() const { return poses_.size(); }
  const CameraPose& operator[](std::size_t k) const { return poses_.at(k); }
  const std::vector<CameraPose>& poses() const { return poses_; }

  bool operator==(const ViewRig&) const = default;

 private:
  std::vector<CameraPose> poses_;
};

/// K=12 ring: azimuths k*pi/6 (k = 1..12) at elevation pi/6.
inline ViewRig make_classification_rig(double distance_factor = kDefaultDistanceFactor) {
  std::vector<CameraPose> poses;
  for (int k = 1; k <= 12; ++k) {
    poses.emplace_back(k * std::numbers::pi / 6.0, std::numbers::pi / 6.0, distance_factor);
  }
  return ViewRig(std::move(poses));
}

/// K=16: azimuths k*pi/4 (k = 1..8) at elevation +pi/6, then the same ring at -pi/6.
inline ViewRig make_segmentation_rig(double distance_factor = kDefaultDistanceFactor) {
  std::vector<CameraPose> poses;
  for (double el : {std::numbers::pi / 6.0, -std::numbers::pi / 6.0}) {
    for (int k = 1; k <= 8; ++k) {
      poses.emplace_back(k * std::numbers::pi / 4.0, el, distance_factor);
    }
  }
  return ViewRig(std::move(poses));
}

/// Sparser rings for view-count ablations: k=6 uses azimuths k*pi/3, k=4 uses k*pi/2.
inline ViewRig make_reduced_rig(int count, double distance_factor = kDefaultDistanceFactor) {
  if (count != 6 && count != 4) {
    throw UnsupportedCount("reduced rig supports 6 or 4 views, got " + std::to_string(count));
  }
  const double step = 2.0 * std::numbers::pi / count;
  std::vector<CameraPose> poses;
  for (int k = 1; k <= count; ++k) {
    poses.emplace_back(k * step, std::numbers::pi / 6.0, distance_factor);
  }
  return ViewRig(std::move(poses));
}

inline std::size_t sample_random_view(const ViewRig& rig, Rng& rng) {
  return static_cast<std::size_t>(rng.index(rig.size()));
}

/// Resolve a preset name ("classification", "segmentation", "redu6", "redu4").
inline std::optional<ViewRig> rig_preset(const std::string& name,
                                         double distance_factor = kDefaultDistanceFactor) {
  if (name == "classification" || name == "comp12") return make_classification_rig(distance_factor);
  if (name == "segmentation") return make_segmentation_rig(distance_factor);
  if (name == "redu6") return make_reduced_rig(6, distance_factor);
  if (name == "redu4") return make_reduced_rig(4, distance_factor);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Text formats

inline std::string format_rig(const ViewRig& rig) {
  std::string out = "# azimuth_rad elevation_rad distance_factor\n";
  char buf[128];
  for (const auto& p : rig.poses()) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.azimuth(), p.elevation(),
                  p.distance_factor());
    out += buf;
  }
  return out;
}

inline ViewRig parse_rig(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<CameraPose> poses;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double az, el, dist;
    if (!(ls >> az >> el >> dist)) throw ParseError(lineno, "expected 'azimuth elevation distance'");
    std::string rest;
    if (ls >> rest) throw ParseError(lineno, "trailing token '" + rest + "'");
    try {
      poses.emplace_back(az, el, dist);
    } catch (const InvalidArgument& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (poses.empty()) throw ParseError(lineno, "rig file has no poses");
  return ViewRig(std::move(poses));
}

inline void write_rig(const ViewRig& rig, const std::filesystem::path& path) {
  bin::write_text_atomic(path, format_rig(rig));
}

inline ViewRig read_rig(const std::filesystem::path& path) {
  const auto data = bin::read_file(path);
  return parse_rig(std::string(data.begin(), data.end()));
}

/// Preset name or rig file path.
inline ViewRig load_rig(const std::string& preset_or_path,
                        double distance_factor = kDefaultDistanceFactor) {
  if (auto rig = rig_preset(preset_or_path, distance_factor)) return *rig;
  return read_rig(preset_or_path);
}

inline std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  char buf[160];
  if (cloud.label) {
    std::snprintf(buf, sizeof buf, "# label %d\n", *cloud.label);
    out += buf;
  }
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out += buf;
  }
  return out;
}

inline PointCloud parse_xyz(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  PointCloud cloud;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream hs(line.substr(first + 1));
      std::string key;
      int label;
      if ((hs >> key) && key == "label") {
        if (!(hs >> label)) throw ParseError(lineno, "malformed label header");
        cloud.label = label;
      }
      continue;
    }
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z)) throw ParseError(lineno, "expected 'x y z'");
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw ParseError(lineno, "non-finite coordinate");
    }
    cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw ParseError(lineno, "no points");
  return cloud;
}

inline PointCloud read_xyz(const std::filesystem::path& path) {
  const auto data = bin::read_file(path);
  try {
    return parse_xyz(std::string(data.begin(), data.end()));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

inline void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  bin::write_text_atomic(path, format_xyz(cloud));
}

}  // namespace mvd
