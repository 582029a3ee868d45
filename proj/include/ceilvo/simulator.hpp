#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <thread>
#include <vector>

#include "ceilvo/common.hpp"
#include "ceilvo/dataset.hpp"
#include "ceilvo/image.hpp"
#include "ceilvo/png_io.hpp"
#include "ceilvo/se3.hpp"
#include "ceilvo/trajectory.hpp"

namespace ceilvo {

/// Band-limited value-noise texture: four octaves of a seeded lattice with
/// Hermite-smoothed interpolation, wavelengths of 64 down to 8 texels (2 m to
/// 0.25 m at the default 32 texels/m). The amplitude budget is weighted
/// toward the finest octave so that, seen from 4-5 m at the default focal
/// lengths, image gradients clear the candidate-selection threshold while
/// bilinear interpolation error stays inside the photo-consistency bound.
/// Fully determined by (size, seed).
inline Image make_noise_texture(int size_px, std::uint64_t seed, double base = 110.0,
                                double amplitude = 78.0) {
  Image tex(size_px, size_px, static_cast<float>(base));
  constexpr int kWavelengthTexels[4] = {64, 32, 16, 8};
  constexpr double kWeight[4] = {0.15, 0.17, 0.19, 0.75};
  // The finest octave is bimodal (panel-like patches): full-swing transitions
  // appear in most selection blocks instead of only at rare extreme node pairs.
  constexpr bool kBimodal[4] = {false, false, false, true};
  for (int o = 0; o < 4; ++o) {
    const double octave_amp = amplitude * kWeight[o];
    const int lattice = size_px / kWavelengthTexels[o] + 2;
    std::vector<double> values(static_cast<size_t>(lattice) * lattice);
    SplitMix64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(o) + 1);
    for (auto& v : values) {
      const double u = rng.uniform(-1.0, 1.0);
      v = kBimodal[o] ? (u < 0.0 ? -1.0 : 1.0) : u;
    }

    const double scale = 1.0 / kWavelengthTexels[o];
    for (int y = 0; y < size_px; ++y) {
      const double fy = y * scale;
      const int y0 = std::min(static_cast<int>(fy), lattice - 2);
      const double ty = fy - y0;
      const double sy = ty * ty * (3.0 - 2.0 * ty);
      for (int x = 0; x < size_px; ++x) {
        const double fx = x * scale;
        const int x0 = std::min(static_cast<int>(fx), lattice - 2);
        const double tx = fx - x0;
        const double sx = tx * tx * (3.0 - 2.0 * tx);
        const double v00 = values[static_cast<size_t>(y0) * lattice + x0];
        const double v10 = values[static_cast<size_t>(y0) * lattice + x0 + 1];
        const double v01 = values[static_cast<size_t>(y0 + 1) * lattice + x0];
        const double v11 = values[static_cast<size_t>(y0 + 1) * lattice + x0 + 1];
        const double v = (1.0 - sy) * ((1.0 - sx) * v00 + sx * v10) +
                         sy * ((1.0 - sx) * v01 + sx * v11);
        tex.at(x, y) += static_cast<float>(octave_amp * v);
      }
    }
  }
  for (float& v : tex.data()) v = std::clamp(v, 3.0f, 252.0f);
  return tex;
}

/// Stamps soft-edged bright discs (lamps) into a texture.
inline void stamp_lamps(Image& tex, int count, std::uint64_t seed, double radius_px,
                        double edge_px, float brightness = 240.0f) {
  SplitMix64 rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  for (int i = 0; i < count; ++i) {
    const double cx = rng.uniform(radius_px, tex.width() - radius_px);
    const double cy = rng.uniform(radius_px, tex.height() - radius_px);
    const int x0 = std::max(0, static_cast<int>(cx - radius_px - edge_px));
    const int x1 = std::min(tex.width() - 1, static_cast<int>(cx + radius_px + edge_px) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - radius_px - edge_px));
    const int y1 = std::min(tex.height() - 1, static_cast<int>(cy + radius_px + edge_px) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dist = std::hypot(x - cx, y - cy);
        const double u = std::clamp((radius_px + edge_px - dist) / edge_px, 0.0, 1.0);
        const double blend = u * u * (3.0 - 2.0 * u);
        tex.at(x, y) = static_cast<float>((1.0 - blend) * tex.at(x, y) + blend * brightness);
      }
    }
  }
}

/// A textured plane owning a band of world x; the texture is indexed by world
/// (x, y), so a world point has one intensity regardless of the viewing pose.
struct TexturedPlane {
  Vec3 point = Vec3(0, 0, 5);
  Vec3 normal = Vec3(0, 0, -1);  ///< facing the workspace below
  double x_min = -std::numeric_limits<double>::infinity();
  double x_max = std::numeric_limits<double>::infinity();
  Image texture;
  double texels_per_meter = 32.0;
  Vec2 texture_origin = Vec2(-12.0, -12.0);  ///< world xy of texel (0, 0)

  double intensity_at(const Vec3& world) const {
    const double u = (world.x() - texture_origin.x()) * texels_per_meter;
    const double v = (world.y() - texture_origin.y()) * texels_per_meter;
    // C^1 texture sampling: texel creases would otherwise dominate the
    // photo-consistency error of rendered frames.
    return texture.sample_catmull_rom(u, v);
  }
};

struct RayHit {
  bool hit = false;
  Vec3 point = Vec3::Zero();
  double t = 0.0;
  const TexturedPlane* plane = nullptr;
};

/// One or more ceiling planes partitioned along world x; every upward ray from
/// the workspace hits exactly one of them.
class CeilingScene {
 public:
  CeilingScene(std::vector<TexturedPlane> planes, double h_min, double h_max)
      : planes_(std::move(planes)), h_min_(h_min), h_max_(h_max) {}

  const std::vector<TexturedPlane>& planes() const { return planes_; }
  double height_min() const { return h_min_; }
  double height_max() const { return h_max_; }

  RayHit intersect(const Vec3& origin, const Vec3& dir) const {
    RayHit best;
    for (const auto& plane : planes_) {
      const double denom = dir.dot(plane.normal);
      if (std::abs(denom) < 1e-12) continue;
      const double t = (plane.point - origin).dot(plane.normal) / denom;
      if (t <= 1e-9) continue;
      const Vec3 p = origin + t * dir;
      if (p.x() < plane.x_min || p.x() > plane.x_max) continue;
      if (!best.hit || t < best.t) best = RayHit{true, p, t, &plane};
    }
    return best;
  }

  double intensity_at(const Vec3& world) const {
    for (const auto& plane : planes_) {
      if (world.x() >= plane.x_min && world.x() <= plane.x_max) return plane.intensity_at(world);
    }
    return 0.0;
  }

  /// Flat ceiling at the given height; texture spans a square of half-extent
  /// meters around the origin.
  static CeilingScene flat(double height, std::uint64_t seed, double half_extent = 12.0,
                           int lamp_count = 0) {
    TexturedPlane plane;
    plane.point = Vec3(0, 0, height);
    plane.normal = Vec3(0, 0, -1);
    const int tex_px = static_cast<int>(2.0 * half_extent * 32.0);
    plane.texture = make_noise_texture(tex_px, seed);
    if (lamp_count > 0) stamp_lamps(plane.texture, lamp_count, seed, 0.35 * 32.0, 0.20 * 32.0);
    plane.texels_per_meter = 32.0;
    plane.texture_origin = Vec2(-half_extent, -half_extent);
    return CeilingScene({std::move(plane)}, height, height);
  }

  /// Two planes meeting at a ridge (x = ridge_x): h_min at the extent edges
  /// rising to h_max at the ridge.
  static CeilingScene inclined(double h_min, double h_max, std::uint64_t seed,
                               double half_extent = 12.0, double ridge_x = 0.0,
                               int lamp_count = 0) {
    if (!(h_max >= h_min)) throw std::invalid_argument("inclined scene: h_max < h_min");
    const int tex_px = static_cast<int>(2.0 * half_extent * 32.0);
    const double slope_left = (h_max - h_min) / (ridge_x - (-half_extent));
    const double slope_right = (h_max - h_min) / (half_extent - ridge_x);

    TexturedPlane left;
    left.point = Vec3(ridge_x, 0, h_max);
    left.normal = Vec3(-slope_left, 0, 1).normalized() * -1.0;
    left.x_min = -std::numeric_limits<double>::infinity();
    left.x_max = ridge_x;
    left.texture = make_noise_texture(tex_px, seed);
    if (lamp_count > 0) stamp_lamps(left.texture, lamp_count, seed, 0.35 * 32.0, 0.20 * 32.0);
    left.texture_origin = Vec2(-half_extent, -half_extent);

    TexturedPlane right;
    right.point = Vec3(ridge_x, 0, h_max);
    right.normal = Vec3(slope_right, 0, 1).normalized() * -1.0;
    right.x_min = ridge_x;
    right.x_max = std::numeric_limits<double>::infinity();
    right.texture = make_noise_texture(tex_px, seed + 1);
    if (lamp_count > 0) stamp_lamps(right.texture, lamp_count, seed + 1, 0.35 * 32.0, 0.20 * 32.0);
    right.texture_origin = Vec2(-half_extent, -half_extent);

    return CeilingScene({std::move(left), std::move(right)}, h_min, h_max);
  }

 private:
  std::vector<TexturedPlane> planes_;
  double h_min_, h_max_;
};

/// Planar robot path specification. The camera rides at mount_height with its
/// optical axis pointing exactly up.
struct MotionSpec {
  enum class Path { Square, MultiLoop, Waypoints };
  Path kind = Path::Square;
  double side = 4.0;                 ///< Square: side length, m
  int loops = 3;                     ///< MultiLoop: number of circles
  double loop_radius = 1.5;          ///< MultiLoop: first circle radius, m
  std::vector<Vec2> waypoints;       ///< Waypoints path
  double linear_speed = 1.0;         ///< m/s, platform bound 1.4
  double angular_speed = 0.9;        ///< rad/s for in-place turns
  double duration = -1.0;            ///< cap in s; < 0 means natural path length
  double mount_height = 0.5;         ///< camera height above the floor, m
};

constexpr double kMaxLinearSpeed = 1.4;  // m/s

namespace detail {

struct MotionSegment {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
  double dt = 0.0;     // s
};

struct PlanarState {
  double x = 0.0, y = 0.0, heading = 0.0;
};

inline PlanarState advance(const PlanarState& s, const MotionSegment& seg, double tau) {
  PlanarState out = s;
  if (std::abs(seg.omega) < 1e-12) {
    out.x += seg.v * std::cos(s.heading) * tau;
    out.y += seg.v * std::sin(s.heading) * tau;
  } else {
    const double h1 = s.heading + seg.omega * tau;
    out.x += seg.v / seg.omega * (std::sin(h1) - std::sin(s.heading));
    out.y -= seg.v / seg.omega * (std::cos(h1) - std::cos(s.heading));
    out.heading = h1;
  }
  return out;
}

inline std::vector<MotionSegment> build_segments(const MotionSpec& spec) {
  std::vector<MotionSegment> segs;
  const double v = spec.linear_speed;
  const double w = std::abs(spec.angular_speed) > 1e-9 ? std::abs(spec.angular_speed) : 0.9;
  switch (spec.kind) {
    case MotionSpec::Path::Square:
      for (int i = 0; i < 4; ++i) {
        segs.push_back({v, 0.0, spec.side / v});
        segs.push_back({0.0, w, (M_PI / 2.0) / w});
      }
      break;
    case MotionSpec::Path::MultiLoop:
      for (int i = 0; i < std::max(spec.loops, 1); ++i) {
        const double r = spec.loop_radius * (1.0 + 0.5 * i);
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        const double omega = sign * v / r;
        segs.push_back({v, omega, 2.0 * M_PI / std::abs(omega)});
      }
      break;
    case MotionSpec::Path::Waypoints: {
      if (spec.waypoints.size() < 2)
        throw std::invalid_argument("waypoints path needs at least two points");
      PlanarState s{spec.waypoints[0].x(), spec.waypoints[0].y(), 0.0};
      for (size_t i = 1; i < spec.waypoints.size(); ++i) {
        const Vec2 to = spec.waypoints[i] - Vec2(s.x, s.y);
        const double dist = to.norm();
        if (dist < 1e-12) continue;
        const double heading = std::atan2(to.y(), to.x());
        double turn = heading - s.heading;
        while (turn > M_PI) turn -= 2.0 * M_PI;
        while (turn < -M_PI) turn += 2.0 * M_PI;
        if (std::abs(turn) > 1e-12)
          segs.push_back({0.0, turn >= 0 ? w : -w, std::abs(turn) / w});
        segs.push_back({v, 0.0, dist / v});
        s.x = spec.waypoints[i].x();
        s.y = spec.waypoints[i].y();
        s.heading = heading;
      }
      break;
    }
  }
  return segs;
}

}  // namespace detail

/// Samples the differential-drive path at `rate` Hz: timestamped camera poses,
/// planar (z = mount height) with yaw-only orientation and heading tangent to
/// the path. Closed-form integration per segment.
inline Trajectory generate_trajectory(const MotionSpec& spec, double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("generate_trajectory: rate must be positive");
  if (spec.linear_speed > kMaxLinearSpeed + 1e-12)
    throw std::invalid_argument("generate_trajectory: linear speed exceeds the 1.4 m/s bound");
  if (!(spec.linear_speed > 0.0))
    throw std::invalid_argument("generate_trajectory: linear speed must be positive");

  const auto segs = detail::build_segments(spec);
  double total = 0.0;
  for (const auto& s : segs) total += s.dt;
  if (spec.duration >= 0.0) total = std::min(total, spec.duration);

  Trajectory traj;
  const auto pose_at = [&](double t) -> detail::PlanarState {
    detail::PlanarState s;
    double remaining = t;
    for (const auto& seg : segs) {
      if (remaining <= seg.dt + 1e-12) {
        return detail::advance(s, seg, std::min(remaining, seg.dt));
      }
      s = detail::advance(s, seg, seg.dt);
      remaining -= seg.dt;
    }
    return s;
  };

  if (total <= 0.0) {  // degenerate request: a single pose at the origin
    traj.push(0.0, Vec3(0.0, 0.0, spec.mount_height), Eigen::Quaterniond::Identity());
    return traj;
  }
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / rate;
    if (t >= total - 1e-12) break;  // end-exclusive: duration * rate samples
    const detail::PlanarState s = pose_at(t);
    const Eigen::Quaterniond q(Eigen::AngleAxisd(s.heading, Vec3::UnitZ()));
    traj.push(t, Vec3(s.x, s.y, spec.mount_height), q);
  }
  return traj;
}

inline Pose pose_from_sample(const TrajectorySample& s) {
  return Pose(s.orientation.toRotationMatrix(), s.position);
}

struct RenderResult {
  Image image;
  double miss_fraction = 0.0;  ///< pixels whose ray left the scene (rendered 0)
};

/// Ray-casts every pixel against the ceiling, bilinear texture lookup, plus
/// optional additive Gaussian noise (sigma in intensity units). Noiseless
/// renders are photo-consistent: one world point, one intensity.
inline RenderResult render_frame(const CeilingScene& scene, const Pose& camera_pose,
                                 const Intrinsics& K, double noise_sigma = 0.0,
                                 std::uint64_t noise_seed = 0) {
  const Vec3 up = camera_pose.rotation().col(2);
  if (!(up.z() >= std::cos(M_PI / 4.0)))
    throw std::invalid_argument("render_frame: camera must look upward (within 45 deg of +z)");

  RenderResult out;
  out.image = Image(K.width, K.height);
  const Vec3 origin = camera_pose.translation();
  const Mat3 R = camera_pose.rotation();
  SplitMix64 rng(noise_seed);
  long missed = 0;

  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const Vec3 dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const RayHit hit = scene.intersect(origin, R * dir_cam);
      double value = 0.0;
      if (hit.hit) {
        value = hit.plane->intensity_at(hit.point);
      } else {
        ++missed;
      }
      if (noise_sigma > 0.0) value += noise_sigma * rng.normal();
      out.image.at(x, y) = static_cast<float>(std::clamp(value, 0.0, 255.0));
    }
  }
  out.miss_fraction = static_cast<double>(missed) / (static_cast<double>(K.width) * K.height);
  return out;
}

/// Exact z-depth (camera frame) of the ceiling point seen by `pixel`, or 0 on
/// a miss. Ground-truth oracle for inverse depths.
inline double true_depth_at(const CeilingScene& scene, const Pose& camera_pose,
                            const Intrinsics& K, const Vec2& pixel) {
  const Vec3 dir_cam((pixel.x() - K.cx) / K.fx, (pixel.y() - K.cy) / K.fy, 1.0);
  const RayHit hit = scene.intersect(camera_pose.translation(), camera_pose.rotation() * dir_cam);
  if (!hit.hit) return 0.0;
  return (camera_pose.rotation().transpose() * (hit.point - camera_pose.translation())).z();
}

struct DatasetOptions {
  double noise_sigma = 1.0;
  std::uint64_t seed = 1;
  double focal_full = 400.0;  ///< fx == fy at 848x480; scaled for the half size
};

/// Default intrinsics for the two supported sensor modes. The half-size mode
/// carries exactly halved focal lengths and principal point.
inline Intrinsics default_intrinsics(int width, int height, double focal_full = 400.0) {
  if (width == 848 && height == 480) return Intrinsics(focal_full, focal_full, 424.0, 240.0, 848, 480);
  if (width == 424 && height == 240)
    return Intrinsics(focal_full / 2.0, focal_full / 2.0, 212.0, 120.0, 424, 240);
  throw std::invalid_argument("emit_dataset: size must be 848x480 or 424x240");
}

/// Renders the full sequence and writes the dataset layout (images, times,
/// camera, groundtruth). Per-frame noise streams are seeded independently, so
/// renders parallelize without affecting the bytes on disk.
inline void emit_dataset(const CeilingScene& scene, const MotionSpec& spec, double fps, int width,
                         int height, const std::filesystem::path& out_dir,
                         const DatasetOptions& opt = {}) {
  namespace fs = std::filesystem;
  const Intrinsics K = default_intrinsics(width, height, opt.focal_full);
  const Trajectory traj = generate_trajectory(spec, fps);

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create dataset directory " + (out_dir / "images").string() +
                          ": " + ec.message());

  const size_t n = traj.size();
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<Image> rendered(n);
  std::vector<std::future<void>> jobs;
  std::atomic<size_t> next{0};
  for (unsigned w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&]() {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        const std::uint64_t frame_seed =
            opt.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i) * 2654435761ULL + 1;
        rendered[i] = render_frame(scene, pose_from_sample(traj[i]), K, opt.noise_sigma, frame_seed)
                          .image;
      }
    }));
  }
  for (auto& j : jobs) j.get();

  std::ofstream times(out_dir / "times.txt");
  if (!times) throw DataError("cannot write times.txt in " + out_dir.string());
  for (size_t i = 0; i < n; ++i) {
    write_gray_png(out_dir / "images" / frame_image_name(static_cast<int>(i)), rendered[i]);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%06zu %.9f\n", i, traj[i].timestamp);
    times << buf;
  }
  times.close();

  write_camera_file(out_dir / "camera.txt", K);
  write_trajectory(out_dir / "groundtruth.txt", traj);
}

}  // namespace ceilvo
