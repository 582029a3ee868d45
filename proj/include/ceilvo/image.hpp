#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <utility>
#include <vector>

namespace ceilvo {

/// Single-channel raster, row-major float storage. Intensities follow the
/// 8-bit convention [0, 255] unless stated otherwise (vignettes use [0, 1]).
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  static Image from_data(int width, int height, std::vector<float> data) {
    Image img;
    img.width_ = width;
    img.height_ = height;
    assert(data.size() == static_cast<size_t>(width) * height);
    img.data_ = std::move(data);
    return img;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  float& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool contains(double x, double y, double border = 0.0) const {
    return x >= border && y >= border && x <= width_ - 1.0 - border && y <= height_ - 1.0 - border;
  }

  /// Bilinear sample of the intensity surface at (x, y), clamped to the valid
  /// sampling domain [0, w-1] x [0, h-1].
  double sample(double x, double y) const { return sample_with_gradient(x, y).value; }

  struct Sampled {
    double value;
    double gx;  ///< d(value)/dx of the bilinear surface within the cell
    double gy;
  };

  /// Bilinear sample together with the exact in-cell derivative of the
  /// interpolant. Using this gradient keeps analytic Jacobians consistent
  /// with finite differences of the sampled intensity.
  Sampled sample_with_gradient(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    int x0 = std::min(static_cast<int>(x), width_ - 2);
    int y0 = std::min(static_cast<int>(y), height_ - 2);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = at(x0, y0);
    const double v10 = at(std::min(x0 + 1, width_ - 1), y0);
    const double v01 = at(x0, std::min(y0 + 1, height_ - 1));
    const double v11 = at(std::min(x0 + 1, width_ - 1), std::min(y0 + 1, height_ - 1));
    Sampled out;
    out.value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
    out.gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    out.gy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    return out;
  }

  /// Catmull-Rom (C^1 cubic) sample, clamped at the borders. Smooth enough
  /// that resampling it on another grid stays close to the underlying surface.
  double sample_catmull_rom(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x1 = std::min(static_cast<int>(x), width_ - 2);
    const int y1 = std::min(static_cast<int>(y), height_ - 2);
    const double tx = x - x1;
    const double ty = y - y1;
    const auto weight = [](double t, double w[4]) {
      const double t2 = t * t, t3 = t2 * t;
      w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
      w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
      w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
      w[3] = 0.5 * (t3 - t2);
    };
    double wx[4], wy[4];
    weight(tx, wx);
    weight(ty, wy);
    double value = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int yy = std::clamp(y1 - 1 + j, 0, height_ - 1);
      double row = 0.0;
      for (int i = 0; i < 4; ++i) {
        const int xx = std::clamp(x1 - 1 + i, 0, width_ - 1);
        row += wx[i] * at(xx, yy);
      }
      value += wy[j] * row;
    }
    return value;
  }

  /// 2x2 box average; output dimensions floor(w/2) x floor(h/2).
  Image downsampled_half() const {
    const int w2 = width_ / 2;
    const int h2 = height_ / 2;
    Image out(w2, h2);
    for (int y = 0; y < h2; ++y) {
      for (int x = 0; x < w2; ++x) {
        out.at(x, y) = 0.25f * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) +
                                at(2 * x + 1, 2 * y + 1));
      }
    }
    return out;
  }

  /// Central-difference gradients with replicated borders.
  std::pair<Image, Image> central_gradients() const {
    Image gx(width_, height_);
    Image gy(width_, height_);
    for (int y = 0; y < height_; ++y) {
      const int ym = std::max(y - 1, 0);
      const int yp = std::min(y + 1, height_ - 1);
      for (int x = 0; x < width_; ++x) {
        const int xm = std::max(x - 1, 0);
        const int xp = std::min(x + 1, width_ - 1);
        gx.at(x, y) = 0.5f * (at(xp, y) - at(xm, y));
        gy.at(x, y) = 0.5f * (at(x, yp) - at(x, ym));
      }
    }
    return {std::move(gx), std::move(gy)};
  }

  double mean() const {
    if (data_.empty()) return 0.0;
    double sum = 0.0;
    for (float v : data_) sum += v;
    return sum / static_cast<double>(data_.size());
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

}  // namespace ceilvo
