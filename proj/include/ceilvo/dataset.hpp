#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ceilvo/common.hpp"
#include "ceilvo/image.hpp"
#include "ceilvo/photometry.hpp"
#include "ceilvo/png_io.hpp"
#include "ceilvo/se3.hpp"

namespace ceilvo {

/// On-disk dataset layout:
///   images/%06d.png    8-bit grayscale frames
///   times.txt          lines: index timestamp_s [exposure_ms]
///   camera.txt         line:  fx fy cx cy width height
///   pcalib.txt         optional: 256 response samples on line 1
///   vignette.pgm       optional: per-pixel attenuation, sensor size
///   groundtruth.txt    optional: trajectory interchange format
struct DatasetFrameEntry {
  int index = 0;
  double timestamp = 0.0;
  double exposure_s = 1.0;  ///< 1.0 when the dataset carries no exposure
  bool has_exposure = false;
};

inline std::string frame_image_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return std::string(buf);
}

inline void write_camera_file(const std::filesystem::path& path, const Intrinsics& K) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write camera file: " + path.string());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %d %d\n", K.fx, K.fy, K.cx, K.cy, K.width,
                K.height);
  out << buf;
}

inline Intrinsics read_camera_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open camera file: " + path.string());
  double fx, fy, cx, cy;
  int w, h;
  if (!(in >> fx >> fy >> cx >> cy >> w >> h))
    throw DataError("malformed camera file (expected: fx fy cx cy width height): " + path.string());
  try {
    return Intrinsics(fx, fy, cx, cy, w, h);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid intrinsics in ") + path.string() + ": " + e.what());
  }
}

class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.root_ = root;
    if (!fs::exists(root)) throw DataError("dataset directory does not exist: " + root.string());

    ds.intrinsics_ = read_camera_file(root / "camera.txt");

    const fs::path times = root / "times.txt";
    std::ifstream in(times);
    if (!in) throw DataError("cannot open times file: " + times.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      DatasetFrameEntry e;
      double exposure_ms = 0.0;
      if (!(ss >> e.index >> e.timestamp))
        throw DataError("malformed times line " + std::to_string(line_no) + " in " +
                        times.string());
      if (ss >> exposure_ms) {
        if (!(exposure_ms > 0.0))
          throw DataError("non-positive exposure at times line " + std::to_string(line_no));
        e.exposure_s = exposure_ms * 1e-3;
        e.has_exposure = true;
      }
      if (!ds.frames_.empty() && !(e.timestamp > ds.frames_.back().timestamp))
        throw DataError("non-increasing timestamp at times line " + std::to_string(line_no));
      ds.frames_.push_back(e);
    }
    if (ds.frames_.empty()) throw DataError("dataset has no frames: " + times.string());

    const fs::path pcalib = root / "pcalib.txt";
    const fs::path vignette = root / "vignette.pgm";
    if (fs::exists(pcalib) || fs::exists(vignette)) {
      std::vector<double> response(256);
      if (fs::exists(pcalib)) {
        std::ifstream pin(pcalib);
        for (auto& v : response)
          if (!(pin >> v)) throw DataError("pcalib.txt: expected 256 response samples");
      } else {
        for (int i = 0; i < 256; ++i) response[i] = i;  // linear response, vignette only
      }
      Image vig;
      if (fs::exists(vignette)) {
        vig = read_pgm_normalized(vignette);
        if (vig.width() != ds.intrinsics_.width || vig.height() != ds.intrinsics_.height)
          throw DataError("vignette.pgm size does not match camera.txt");
      }
      ds.calib_ = PhotometricCalibration::from_tables(response, std::move(vig));
    }

    const fs::path gt = root / "groundtruth.txt";
    if (fs::exists(gt)) ds.groundtruth_ = gt;
    return ds;
  }

  const std::filesystem::path& root() const { return root_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<DatasetFrameEntry>& frames() const { return frames_; }
  const PhotometricCalibration& calibration() const { return calib_; }
  const std::optional<std::filesystem::path>& groundtruth_path() const { return groundtruth_; }

  Image load_image(size_t i) const {
    const auto path = root_ / "images" / frame_image_name(frames_[i].index);
    Image img = read_gray_png(path);
    if (img.width() != intrinsics_.width || img.height() != intrinsics_.height)
      throw DataError("image size mismatch vs camera.txt: " + path.string());
    return img;
  }

 private:
  std::filesystem::path root_;
  Intrinsics intrinsics_;
  std::vector<DatasetFrameEntry> frames_;
  PhotometricCalibration calib_ = PhotometricCalibration::identity();
  std::optional<std::filesystem::path> groundtruth_;
};

/// Nearest-period frame decimation: for targets t0 + k/fps pick the closest
/// source timestamp, each source frame used at most once. Selected timestamps
/// differ from the ideal grid by less than half the source period.
inline std::vector<size_t> decimate_indices(const std::vector<double>& timestamps,
                                            double target_fps) {
  if (!(target_fps > 0.0)) throw std::invalid_argument("decimate: fps must be positive");
  std::vector<size_t> out;
  if (timestamps.empty()) return out;
  const double period = 1.0 / target_fps;
  const double t0 = timestamps.front();
  size_t nearest = 0;  // non-decreasing across targets since both are sorted
  for (long k = 0;; ++k) {
    const double target = t0 + static_cast<double>(k) * period;
    if (target > timestamps.back() + 1e-9) break;
    while (nearest + 1 < timestamps.size() &&
           std::abs(timestamps[nearest + 1] - target) <= std::abs(timestamps[nearest] - target))
      ++nearest;
    if (out.empty() || nearest != out.back())  // dedupe when the source is slower
      out.push_back(nearest);
  }
  return out;
}

}  // namespace ceilvo
