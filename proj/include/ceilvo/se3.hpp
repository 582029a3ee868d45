#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ceilvo/common.hpp"

namespace ceilvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// se(3) tangent vector, ordered (translation [m], rotation [rad]).
/// This ordering is fixed project-wide.
using Twist = Vec6;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Rigid-body transform in SE(3). Keyframe poses use this as world-from-camera
/// (X_world = T * X_camera); the type itself is convention-free group math.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose Identity() { return Pose(); }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Pose operator*(const Pose& rhs) const {
    return Pose(rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_);
  }

  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  Pose inverse() const {
    Mat3 rt = rotation_.transpose();
    return Pose(rt, -(rt * translation_));
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_); }

  /// Orthonormality with det +1, within tol.
  bool is_valid(double tol = 1e-9) const {
    const Mat3 should_be_identity = rotation_.transpose() * rotation_ - Mat3::Identity();
    return should_be_identity.cwiseAbs().maxCoeff() < tol &&
           std::abs(rotation_.determinant() - 1.0) < tol && translation_.allFinite();
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

namespace detail {

// Taylor branch threshold for the exp/log V-matrix coefficients; below this
// the closed forms lose digits to cancellation.
constexpr double kSmallAngle = 1e-8;

inline Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 hat = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + hat + 0.5 * hat * hat;
  }
  const double theta_sq = theta * theta;
  const double sin_half = std::sin(0.5 * theta);
  // 1 - cos(theta) == 2 sin^2(theta/2), exact under cancellation.
  const double one_minus_cos = 2.0 * sin_half * sin_half;
  return Mat3::Identity() + (std::sin(theta) / theta) * hat +
         (one_minus_cos / theta_sq) * hat * hat;
}

inline Mat3 se3_left_v(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 hat = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * hat + (1.0 / 6.0) * hat * hat;
  }
  const double theta_sq = theta * theta;
  const double sin_half = std::sin(0.5 * theta);
  const double one_minus_cos = 2.0 * sin_half * sin_half;
  return Mat3::Identity() + (one_minus_cos / theta_sq) * hat +
         ((theta - std::sin(theta)) / (theta_sq * theta)) * hat * hat;
}

inline Mat3 se3_left_v_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 hat = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * hat + (1.0 / 12.0) * hat * hat;
  }
  // 1/theta^2 - cot(theta/2)/(2 theta); the half-angle form avoids the
  // 0/0 of (1+cos)/(2 theta sin) near theta = pi.
  const double half = 0.5 * theta;
  const double coeff = 1.0 / (theta * theta) - std::cos(half) / (2.0 * theta * std::sin(half));
  return Mat3::Identity() - 0.5 * hat + coeff * hat * hat;
}

}  // namespace detail

/// Exponential map se(3) -> SE(3): xi = (rho, omega) -> (exp(omega^), V rho).
inline Pose exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  return Pose(detail::so3_exp(omega), detail::se3_left_v(omega) * rho);
}

/// Logarithm map SE(3) -> se(3). Uses quaternion-based angle-axis extraction,
/// stable over the whole ball ||omega|| < pi.
inline Twist log(const Pose& T) {
  const Eigen::AngleAxisd aa(T.rotation());
  const Vec3 omega = aa.angle() * aa.axis();
  Twist xi;
  xi.tail<3>() = omega;
  xi.head<3>() = detail::se3_left_v_inverse(omega) * T.translation();
  return xi;
}

/// Left tangent-space update: xi (+) T = exp(xi) * T.
inline Pose left_oplus(const Twist& xi, const Pose& T) { return exp(xi) * T; }

/// Relative transform dT with dT * Ti == Tj, i.e. dT = Tj * Ti^-1.
inline Pose relative_transform(const Pose& Ti, const Pose& Tj) { return Tj * Ti.inverse(); }

/// Pinhole camera parameters, all in pixels.
struct Intrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  Intrinsics() = default;
  Intrinsics(double fx_, double fy_, double cx_, double cy_, int width_, int height_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(width_), height(height_) {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (!(cx > 0.0 && cx < width_) || !(cy > 0.0 && cy < height_))
      throw std::invalid_argument("intrinsics: principal point outside image");
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  double diagonal() const { return std::hypot(static_cast<double>(width), static_cast<double>(height)); }

  /// Scaled copy for pyramid level l. Pixel centers align across levels:
  /// x_l = (x_0 + 0.5) / 2^l - 0.5.
  Intrinsics at_level(int level) const {
    if (level == 0) return *this;
    const double s = static_cast<double>(1 << level);
    int w = width, h = height;
    for (int l = 0; l < level; ++l) {
      w /= 2;
      h /= 2;
    }
    return Intrinsics(fx / s, fy / s, (cx + 0.5) / s - 0.5, (cy + 0.5) / s - 0.5, w, h);
  }

  /// Exact halving, the dataset-file convention for the 424x240 mode.
  Intrinsics halved() const {
    return Intrinsics(fx / 2.0, fy / 2.0, cx / 2.0, cy / 2.0, width / 2, height / 2);
  }
};

/// Projection onto the image plane. The result may land outside the image
/// bounds; callers do their own visibility checks.
inline Vec2 project(const Intrinsics& K, const Vec3& X) {
  if (!(X.z() > 0.0)) throw std::domain_error("project: point not in front of camera (z <= 0)");
  return Vec2(K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy);
}

/// Back-projection of pixel p at inverse depth d [1/m] into camera coordinates.
inline Vec3 back_project(const Intrinsics& K, const Vec2& p, double inverse_depth) {
  if (!(inverse_depth > 0.0)) throw std::domain_error("back_project: inverse depth must be positive");
  return Vec3((p.x() - K.cx) / K.fx, (p.y() - K.cy) / K.fy, 1.0) / inverse_depth;
}

/// True when p can be sampled bilinearly with `border` pixels of margin.
inline bool in_image(const Intrinsics& K, const Vec2& p, double border = 0.0) {
  return p.x() >= border && p.y() >= border && p.x() <= K.width - 1.0 - border &&
         p.y() <= K.height - 1.0 - border;
}

}  // namespace ceilvo
