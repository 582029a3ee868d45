#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "ceilvo/common.hpp"
#include "ceilvo/se3.hpp"

namespace ceilvo {

struct TrajectorySample {
  double timestamp = 0.0;       ///< seconds, shared clock
  Vec3 position = Vec3::Zero();  ///< meters
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

/// Ordered, timestamped poses. Interchange format (one sample per line):
///   timestamp tx ty tz qx qy qz qw
struct Trajectory {
  std::vector<TrajectorySample> samples;

  bool empty() const { return samples.empty(); }
  size_t size() const { return samples.size(); }
  const TrajectorySample& operator[](size_t i) const { return samples[i]; }

  void push(double timestamp, const Vec3& position, const Eigen::Quaterniond& orientation) {
    if (!samples.empty() && !(timestamp > samples.back().timestamp))
      throw DataError("trajectory: timestamps must be strictly increasing");
    samples.push_back({timestamp, position, orientation.normalized()});
  }

  void push(double timestamp, const Pose& pose) {
    push(timestamp, pose.translation(), pose.quaternion());
  }

  /// Cumulative arc length of the position polyline, in meters.
  std::vector<double> arc_length() const {
    std::vector<double> out(samples.size(), 0.0);
    for (size_t i = 1; i < samples.size(); ++i)
      out[i] = out[i - 1] + (samples[i].position - samples[i - 1].position).norm();
    return out;
  }
};

inline std::string format_trajectory_line(const TrajectorySample& s) {
  Eigen::Quaterniond q = s.orientation.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;  // canonical sign for reproducible files
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g", s.timestamp,
                s.position.x(), s.position.y(), s.position.z(), q.x(), q.y(), q.z(), q.w());
  return std::string(buf);
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open trajectory file for writing: " + path.string());
  for (const auto& s : traj.samples) out << format_trajectory_line(s) << '\n';
  if (!out) throw DataError("failed while writing trajectory file: " + path.string());
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path.string());
  Trajectory traj;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw DataError("malformed trajectory line " + std::to_string(line_no) + " in " +
                      path.string());
    Eigen::Quaterniond q(qw, qx, qy, qz);
    const double norm = q.norm();
    if (!(norm > 0.5) || !(norm < 2.0))
      throw DataError("non-unit quaternion at line " + std::to_string(line_no) + " in " +
                      path.string());
    try {
      traj.push(t, Vec3(tx, ty, tz), q);
    } catch (const DataError&) {
      throw DataError("non-increasing timestamp at line " + std::to_string(line_no) + " in " +
                      path.string());
    }
  }
  return traj;
}

}  // namespace ceilvo
