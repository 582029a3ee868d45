#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ceilvo/common.hpp"
#include "ceilvo/image.hpp"

namespace ceilvo {

/// Per-frame affine brightness parameters: exp(a) gain, b offset.
struct AffineBrightness {
  double a = 0.0;
  double b = 0.0;
};

/// Sensor response G (256 tabulated samples, strictly increasing) and
/// per-pixel vignette V in (0, 1]. In identity mode G(x) = x and V == 1,
/// and photometric correction is a no-op.
class PhotometricCalibration {
 public:
  static PhotometricCalibration identity() { return PhotometricCalibration(); }

  static PhotometricCalibration from_tables(const std::vector<double>& response, Image vignette) {
    PhotometricCalibration calib;
    calib.identity_ = false;
    if (response.size() != 256) throw DataError("photometric response: expected 256 samples");
    for (size_t i = 1; i < response.size(); ++i) {
      if (!(response[i] > response[i - 1]))
        throw DataError("photometric response: samples must be strictly increasing");
    }
    std::copy(response.begin(), response.end(), calib.response_.begin());
    if (!vignette.empty()) {
      for (float v : vignette.data()) {
        if (!(v > 0.0f) || v > 1.0f)
          throw DataError("vignette: values must lie in (0, 1]");
      }
    }
    calib.vignette_ = std::move(vignette);
    return calib;
  }

  bool is_identity() const { return identity_; }
  const Image& vignette() const { return vignette_; }

  /// G(x) for x in [0, 255], linear between table samples.
  double response(double x) const {
    if (identity_) return x;
    if (x <= 0.0) return response_[0];
    if (x >= 255.0) return response_[255];
    const int i = static_cast<int>(x);
    const double f = x - i;
    return response_[i] + f * (response_[i + 1] - response_[i]);
  }

  /// G^-1(v): inverts the tabulated response by bisection over samples plus
  /// linear interpolation; clamps outside the table range.
  double inverse_response(double v) const {
    if (identity_) return v;
    if (v <= response_[0]) return 0.0;
    if (v >= response_[255]) return 255.0;
    int lo = 0, hi = 255;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (response_[mid] <= v)
        lo = mid;
      else
        hi = mid;
    }
    const double span = response_[hi] - response_[lo];
    return lo + (v - response_[lo]) / span;
  }

 private:
  PhotometricCalibration() = default;
  bool identity_ = true;
  std::array<double, 256> response_{};
  Image vignette_;
};

/// One pyramid level: corrected intensities plus central-difference gradients.
struct FrameLevel {
  Image intensity;
  Image grad_x;
  Image grad_y;
};

/// A photometrically corrected input image with its gradient and pyramid.
/// Immutable after construction.
class Frame {
 public:
  Frame(double timestamp, double exposure, std::vector<FrameLevel> levels, int index = -1)
      : timestamp_(timestamp), exposure_(exposure), index_(index), levels_(std::move(levels)) {}

  double timestamp() const { return timestamp_; }
  double exposure() const { return exposure_; }
  int index() const { return index_; }

  int pyramid_levels() const { return static_cast<int>(levels_.size()); }
  const FrameLevel& level(int l) const { return levels_[l]; }
  int width() const { return levels_[0].intensity.width(); }
  int height() const { return levels_[0].intensity.height(); }

 private:
  double timestamp_;
  double exposure_;
  int index_;
  std::vector<FrameLevel> levels_;
};

using FramePtr = std::shared_ptr<const Frame>;

/// Deepest pyramid that keeps the coarsest level at least 50 px in its
/// smaller dimension, capped at 4 levels (4 for 848x480, 3 for 424x240).
inline int default_pyramid_levels(int width, int height) {
  int levels = 1;
  int w = width, h = height;
  while (levels < 4 && w / 2 >= 50 && h / 2 >= 50) {
    w /= 2;
    h /= 2;
    ++levels;
  }
  return levels;
}

/// Photometric correction alone: I(x) = G^-1(I_raw(x)) / V(x). Identity
/// calibration passes intensities through bit-exact.
inline Image correct_image(const Image& raw, const PhotometricCalibration& calib) {
  if (raw.empty()) throw std::invalid_argument("correct_image: empty image");
  if (calib.is_identity()) return raw;
  const Image& vignette = calib.vignette();
  if (!vignette.empty() && (vignette.width() != raw.width() || vignette.height() != raw.height()))
    throw DataError("correct_image: vignette size does not match image");
  Image corrected(raw.width(), raw.height());
  const bool has_vignette = !vignette.empty();
  for (int y = 0; y < raw.height(); ++y) {
    for (int x = 0; x < raw.width(); ++x) {
      double v = calib.inverse_response(raw.at(x, y));
      if (has_vignette) v /= vignette.at(x, y);
      corrected.at(x, y) = static_cast<float>(v);
    }
  }
  return corrected;
}

/// Gradient and pyramid construction over an already-corrected image.
inline Frame build_frame(Image corrected, double exposure, double timestamp,
                         int pyramid_levels = 0, int index = -1) {
  if (!(exposure > 0.0)) throw std::invalid_argument("build_frame: exposure must be positive");
  if (corrected.empty()) throw std::invalid_argument("build_frame: empty image");
  if (pyramid_levels <= 0)
    pyramid_levels = default_pyramid_levels(corrected.width(), corrected.height());
  std::vector<FrameLevel> levels;
  levels.reserve(pyramid_levels);
  for (int l = 0; l < pyramid_levels; ++l) {
    Image intensity = (l == 0) ? std::move(corrected) : levels[l - 1].intensity.downsampled_half();
    auto [gx, gy] = intensity.central_gradients();
    levels.push_back(FrameLevel{std::move(intensity), std::move(gx), std::move(gy)});
  }
  return Frame(timestamp, exposure, std::move(levels), index);
}

/// Photometric correction followed by gradient and pyramid construction.
/// Unknown exposure is the caller's concern: pass 1.0.
inline Frame correct_frame(const Image& raw, const PhotometricCalibration& calib, double exposure,
                           double timestamp, int pyramid_levels = 0, int index = -1) {
  return build_frame(correct_image(raw, calib), exposure, timestamp, pyramid_levels, index);
}

/// Predicted intensity of a host-frame value seen from a target frame:
/// b_j + (t_j e^{a_j}) / (t_i e^{a_i}) * (I_i - b_i).
inline double brightness_transfer(double host_value, double t_i, double t_j,
                                  const AffineBrightness& ab_i, const AffineBrightness& ab_j) {
  if (!(t_i > 0.0) || !(t_j > 0.0))
    throw std::domain_error("brightness_transfer: exposures must be positive");
  const double gain = (t_j * std::exp(ab_j.a)) / (t_i * std::exp(ab_i.a));
  return ab_j.b + gain * (host_value - ab_i.b);
}

}  // namespace ceilvo
