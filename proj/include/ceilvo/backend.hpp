#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ceilvo/common.hpp"
#include "ceilvo/photometry.hpp"
#include "ceilvo/se3.hpp"

namespace ceilvo {

/// Dispersed 8-point residual pattern around a host pixel (radius 2).
inline const std::vector<Eigen::Vector2i>& default_residual_pattern() {
  static const std::vector<Eigen::Vector2i> pattern = {
      {0, 0}, {-2, 0}, {2, 0}, {0, -2}, {0, 2}, {-1, -1}, {1, -1}, {-1, 1}};
  return pattern;
}

struct BackendConfig {
  double huber_gamma = 9.0;       ///< Huber threshold, intensity units
  double gradient_weight_c = 50.0;
  std::vector<Eigen::Vector2i> pattern = default_residual_pattern();
  int max_window = 7;             ///< N_f
  bool optimize_intrinsics = false;
  int gn_iterations = 6;
  double lm_mu_initial = 1e-5;
  double lm_mu_max = 1e4;
  double projection_border = 2.0;  ///< margin when projecting into the target
};

/// Huber norm: 1/2 a^2 inside gamma, gamma (|a| - gamma/2) outside.
inline double huber_norm(double alpha, double gamma) {
  if (!(gamma > 0.0)) throw std::domain_error("huber_norm: gamma must be positive");
  const double abs_a = std::abs(alpha);
  if (abs_a < gamma) return 0.5 * alpha * alpha;
  return gamma * (abs_a - 0.5 * gamma);
}

/// IRLS weight making J^T W J / -J^T W r exact for the Huber objective at the
/// current linearization: 1 inside gamma, gamma/|r| outside.
inline double huber_weight(double residual, double gamma) {
  const double abs_r = std::abs(residual);
  return abs_r < gamma ? 1.0 : gamma / abs_r;
}

/// Gradient-dependent down-weighting w_p = c^2 / (c^2 + ||grad I||^2).
inline double gradient_weight(const Vec2& grad, double c) {
  if (!(c > 0.0)) throw std::domain_error("gradient_weight: c must be positive");
  const double c2 = c * c;
  return c2 / (c2 + grad.squaredNorm());
}

constexpr int kMaxPatternSize = 16;

/// An inverse-depth point hosted in a keyframe, given by its level-0 pixel.
/// Host-side pattern samples never change once the frame exists, so they are
/// cached on first use (keyed by the frame's identity).
struct PointState {
  Vec2 pixel = Vec2::Zero();
  double inv_depth = 1.0;  ///< 1/m, always > 0

  struct HostCache {
    const Frame* frame = nullptr;
    size_t pattern_size = 0;
    std::array<float, kMaxPatternSize> value;
    std::array<float, kMaxPatternSize> grad_x;
    std::array<float, kMaxPatternSize> grad_y;
    std::array<bool, kMaxPatternSize> in_bounds;
  };
  mutable HostCache cache;
};

/// A frame promoted into the optimization window.
struct Keyframe {
  int id = 0;
  FramePtr frame;
  Pose pose;  ///< world-from-camera
  AffineBrightness affine;
  std::vector<PointState> points;  ///< hosted, activated points
};

/// The sliding optimization window: ordered keyframes plus shared intrinsics.
struct WindowState {
  std::vector<Keyframe> keyframes;
  Intrinsics intrinsics;

  size_t total_points() const {
    size_t n = 0;
    for (const auto& kf : keyframes) n += kf.points.size();
    return n;
  }
};

/// Residuals of one point observed from one target keyframe, with optional
/// analytic Jacobians with respect to a left-applied pose increment and the
/// scalar parameters (inverse depth, affine pair, intrinsics). Entries of
/// masked pattern elements are unspecified; always gate on valid[].
struct ResidualEval {
  int count = 0;
  std::array<double, kMaxPatternSize> r;
  std::array<bool, kMaxPatternSize> valid{};
  std::array<double, kMaxPatternSize> grad_weight;  ///< w_p
  std::array<double, kMaxPatternSize> irls_weight;  ///< w_p * huber_weight
  double energy = 0.0;                              ///< sum of w_p ||r||_gamma
  int valid_count = 0;

  std::array<Eigen::Matrix<double, 1, 6>, kMaxPatternSize> J_host_pose;
  std::array<Eigen::Matrix<double, 1, 6>, kMaxPatternSize> J_target_pose;
  std::array<double, kMaxPatternSize> J_inv_depth;
  std::array<double, kMaxPatternSize> J_a_host;
  std::array<double, kMaxPatternSize> J_a_target;
  std::array<double, kMaxPatternSize> J_b_host;
  std::array<double, kMaxPatternSize> J_b_target;
  std::array<Eigen::Matrix<double, 1, 4>, kMaxPatternSize> J_intrinsics;
};

namespace detail {

inline void refresh_host_cache(const PointState& point, const Frame& frame,
                               const std::vector<Eigen::Vector2i>& pattern) {
  PointState::HostCache& cache = point.cache;
  cache.frame = &frame;
  cache.pattern_size = pattern.size();
  const FrameLevel& level = frame.level(0);
  for (size_t k = 0; k < pattern.size(); ++k) {
    const double px = point.pixel.x() + pattern[k].x();
    const double py = point.pixel.y() + pattern[k].y();
    cache.in_bounds[k] = level.intensity.contains(px, py);
    if (!cache.in_bounds[k]) continue;
    cache.value[k] = static_cast<float>(level.intensity.sample(px, py));
    cache.grad_x[k] = static_cast<float>(level.grad_x.sample(px, py));
    cache.grad_y[k] = static_cast<float>(level.grad_y.sample(px, py));
  }
}

}  // namespace detail

/// Evaluates the pattern residuals of `point` (hosted in `host`) observed in
/// `target`. Out-of-bounds or behind-camera pattern pixels are masked, never
/// an error. Level-0 images only.
inline ResidualEval evaluate_residual(const PointState& point, const Keyframe& host,
                                      const Keyframe& target, const Intrinsics& K,
                                      const BackendConfig& cfg, bool with_jacobians) {
  ResidualEval out;
  const int n = static_cast<int>(cfg.pattern.size());
  out.count = n;
  const double d = point.inv_depth;
  if (!(d > 0.0)) return out;

  if (point.cache.frame != host.frame.get() || point.cache.pattern_size != cfg.pattern.size())
    detail::refresh_host_cache(point, *host.frame, cfg.pattern);

  // Warp host camera coordinates into target camera coordinates.
  const Mat3 R_target_t = target.pose.rotation().transpose();
  const Mat3 R_w = R_target_t * host.pose.rotation();
  const Vec3 t_w = R_target_t * (host.pose.translation() - target.pose.translation());

  const double gain = (target.frame->exposure() * std::exp(target.affine.a)) /
                      (host.frame->exposure() * std::exp(host.affine.a));
  const double c2 = cfg.gradient_weight_c * cfg.gradient_weight_c;

  const Image& target_img = target.frame->level(0).intensity;
  const double inv_fx = 1.0 / K.fx;
  const double inv_fy = 1.0 / K.fy;
  const double inv_d = 1.0 / d;

  for (int k = 0; k < n; ++k) {
    if (!point.cache.in_bounds[k]) continue;
    const double px = point.pixel.x() + cfg.pattern[k].x();
    const double py = point.pixel.y() + cfg.pattern[k].y();

    const Vec3 X_host((px - K.cx) * inv_fx * inv_d, (py - K.cy) * inv_fy * inv_d, inv_d);
    const Vec3 X_target = R_w * X_host + t_w;
    if (!(X_target.z() > 1e-6)) continue;

    const double inv_z = 1.0 / X_target.z();
    const Vec2 p_target(K.fx * X_target.x() * inv_z + K.cx, K.fy * X_target.y() * inv_z + K.cy);
    if (!in_image(K, p_target, cfg.projection_border)) continue;

    const double host_val = point.cache.value[k];
    const Image::Sampled target_s = target_img.sample_with_gradient(p_target.x(), p_target.y());

    const double residual = (target_s.value - target.affine.b) - gain * (host_val - host.affine.b);
    const double g2 = static_cast<double>(point.cache.grad_x[k]) * point.cache.grad_x[k] +
                      static_cast<double>(point.cache.grad_y[k]) * point.cache.grad_y[k];
    const double w_p = c2 / (c2 + g2);

    out.valid[k] = true;
    ++out.valid_count;
    out.r[k] = residual;
    out.grad_weight[k] = w_p;
    out.irls_weight[k] = w_p * huber_weight(residual, cfg.huber_gamma);
    out.energy += w_p * huber_norm(residual, cfg.huber_gamma);

    if (!with_jacobians) continue;

    // gX = grad_I * d(projection)/dX_target, row vector.
    const double gx = target_s.gx * K.fx * inv_z;
    const double gy = target_s.gy * K.fy * inv_z;
    const Vec3 gX(gx, gy, -(gx * X_target.x() + gy * X_target.y()) * inv_z);

    // Left-increment derivatives on world-from-camera poses. With the world
    // point Y = T_host X_host: dr/d(rho, omega)_host = [u^T | (Y x u)^T] for
    // u = R_target^T-backrotated gX; the target block is its negative.
    const Vec3 u = R_target_t.transpose() * gX;
    const Vec3 Y = host.pose.rotation() * X_host + host.pose.translation();
    Eigen::Matrix<double, 1, 6>& J_host = out.J_host_pose[k];
    J_host.head<3>() = u.transpose();
    J_host.tail<3>() = Y.cross(u).transpose();
    out.J_target_pose[k] = -J_host;

    out.J_inv_depth[k] = gX.dot(R_w * X_host) * (-inv_d);

    const double host_centered = host_val - host.affine.b;
    out.J_a_host[k] = gain * host_centered;
    out.J_a_target[k] = -gain * host_centered;
    out.J_b_host[k] = gain;
    out.J_b_target[k] = -1.0;

    if (cfg.optimize_intrinsics) {
      Eigen::Matrix<double, 2, 3> dpi_dX;
      // clang-format off
      dpi_dX << K.fx * inv_z, 0.0,          -K.fx * X_target.x() * inv_z * inv_z,
                0.0,          K.fy * inv_z, -K.fy * X_target.y() * inv_z * inv_z;
      // clang-format on
      const Eigen::Matrix<double, 1, 2> gI(target_s.gx, target_s.gy);
      Eigen::Matrix<double, 2, 4> direct;
      // clang-format off
      direct << X_target.x() * inv_z, 0.0,                  1.0, 0.0,
                0.0,                  X_target.y() * inv_z, 0.0, 1.0;
      // clang-format on
      Eigen::Matrix<double, 3, 4> dXh_dK = Eigen::Matrix<double, 3, 4>::Zero();
      dXh_dK(0, 0) = -X_host.x() / K.fx;
      dXh_dK(1, 1) = -X_host.y() / K.fy;
      dXh_dK(0, 2) = -1.0 / (K.fx * d);
      dXh_dK(1, 3) = -1.0 / (K.fy * d);
      out.J_intrinsics[k] = gI * (direct + dpi_dX * (R_w * dXh_dK));
    }
  }
  return out;
}

/// Total photometric energy over all cross-keyframe observations, Huber-robust
/// and gradient-weighted. Masked residuals contribute nothing.
inline double total_energy(const WindowState& window, const BackendConfig& cfg) {
  if (window.keyframes.size() < 2)
    throw std::invalid_argument("total_energy: need at least two keyframes");
  double energy = 0.0;
  const size_t n = window.keyframes.size();
  for (size_t hi = 0; hi < n; ++hi) {
    const Keyframe& host = window.keyframes[hi];
    for (const PointState& point : host.points) {
      for (size_t ti = 0; ti < n; ++ti) {
        if (ti == hi) continue;
        energy += evaluate_residual(point, host, window.keyframes[ti], window.intrinsics, cfg,
                                    /*with_jacobians=*/false)
                      .energy;
      }
    }
  }
  return energy;
}

inline double total_energy(const WindowState& window, double gamma, double c) {
  BackendConfig cfg;
  cfg.huber_gamma = gamma;
  cfg.gradient_weight_c = c;
  return total_energy(window, cfg);
}

/// Dense Gauss-Newton system H = J^T W J, b = -J^T W r over the whole window.
/// Parameter layout: per keyframe [twist(6), a, b], then one inverse depth per
/// point (host order), then optionally [fx, fy, cx, cy].
struct GaussNewtonSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  double energy = 0.0;
  long residual_count = 0;
  int num_keyframes = 0;
  int num_points = 0;
  bool with_intrinsics = false;

  int dimension() const { return static_cast<int>(H.rows()); }
  int keyframe_offset(int k) const { return 8 * k; }
  int point_offset(int global_point_index) const { return 8 * num_keyframes + global_point_index; }
  int intrinsics_offset() const { return 8 * num_keyframes + num_points; }
};

inline GaussNewtonSystem build_system(const WindowState& window, const BackendConfig& cfg) {
  const int nk = static_cast<int>(window.keyframes.size());
  if (nk < 2) throw NumericalError("build_system: need at least two keyframes");
  const int np = static_cast<int>(window.total_points());
  const int dim = 8 * nk + np + (cfg.optimize_intrinsics ? 4 : 0);

  GaussNewtonSystem sys;
  sys.num_keyframes = nk;
  sys.num_points = np;
  sys.with_intrinsics = cfg.optimize_intrinsics;
  sys.H = Eigen::MatrixXd::Zero(dim, dim);
  sys.b = Eigen::VectorXd::Zero(dim);

  // The system is arrow-shaped: points never interact with each other.
  // Accumulate into a dense camera block, one camera-column per point, and a
  // point diagonal, then assemble H once; this keeps the inner loop in cache.
  const int nc = 8 * nk + (cfg.optimize_intrinsics ? 4 : 0);
  Eigen::MatrixXd h_cam = Eigen::MatrixXd::Zero(nc, nc);
  Eigen::MatrixXd h_cam_point = Eigen::MatrixXd::Zero(nc, np);
  Eigen::VectorXd h_point_diag = Eigen::VectorXd::Zero(np);

  const int m = 17 + (cfg.optimize_intrinsics ? 4 : 0);
  std::array<int, 21> cam_idx;  // global camera-parameter ids of local rows
  Eigen::Matrix<double, 21, 21> local_h;
  Eigen::Matrix<double, 21, 1> local_b;
  std::array<double, 21> row;

  int point_base = 0;
  for (int hi = 0; hi < nk; ++hi) {
    const Keyframe& host = window.keyframes[hi];
    for (size_t pi = 0; pi < host.points.size(); ++pi) {
      const int point_id = point_base + static_cast<int>(pi);
      for (int ti = 0; ti < nk; ++ti) {
        if (ti == hi) continue;
        const ResidualEval eval = evaluate_residual(host.points[pi], host, window.keyframes[ti],
                                                    window.intrinsics, cfg, /*with_jacobians=*/true);
        sys.energy += eval.energy;
        if (eval.valid_count == 0) continue;

        // Local layout: [host 8 | target 8 | depth | intrinsics 4].
        for (int c = 0; c < 8; ++c) cam_idx[c] = 8 * hi + c;
        for (int c = 0; c < 8; ++c) cam_idx[8 + c] = 8 * ti + c;
        for (int c = 17; c < m; ++c) cam_idx[c] = 8 * nk + (c - 17);

        local_h.topLeftCorner(m, m).setZero();
        local_b.head(m).setZero();
        for (int k = 0; k < eval.count; ++k) {
          if (!eval.valid[k]) continue;
          ++sys.residual_count;
          for (int c = 0; c < 6; ++c) row[c] = eval.J_host_pose[k](0, c);
          row[6] = eval.J_a_host[k];
          row[7] = eval.J_b_host[k];
          for (int c = 0; c < 6; ++c) row[8 + c] = eval.J_target_pose[k](0, c);
          row[14] = eval.J_a_target[k];
          row[15] = eval.J_b_target[k];
          row[16] = eval.J_inv_depth[k];
          for (int c = 17; c < m; ++c) row[c] = eval.J_intrinsics[k](0, c - 17);

          const double w = eval.irls_weight[k];
          const double wr = w * eval.r[k];
          for (int a = 0; a < m; ++a) {
            local_b(a) -= row[a] * wr;
            const double wva = w * row[a];
            for (int bcol = a; bcol < m; ++bcol) local_h(a, bcol) += wva * row[bcol];
          }
        }

        for (int a = 0; a < m; ++a) {
          const bool a_is_depth = (a == 16);
          // Global b layout: [keyframes 8nk | depths np | intrinsics 4].
          if (a_is_depth)
            sys.b(8 * nk + point_id) += local_b(a);
          else
            sys.b(cam_idx[a] < 8 * nk ? cam_idx[a] : cam_idx[a] + np) += local_b(a);
          for (int bcol = a; bcol < m; ++bcol) {
            const bool b_is_depth = (bcol == 16);
            const double v = local_h(a, bcol);
            if (a_is_depth && b_is_depth) {
              h_point_diag(point_id) += v;
            } else if (b_is_depth) {
              h_cam_point(cam_idx[a], point_id) += v;
            } else if (a_is_depth) {
              h_cam_point(cam_idx[bcol], point_id) += v;
            } else {
              const int ga = cam_idx[a];
              const int gb = cam_idx[bcol];
              h_cam(std::min(ga, gb), std::max(ga, gb)) += v;
            }
          }
        }
      }
    }
    point_base += static_cast<int>(host.points.size());
  }

  if (sys.residual_count == 0)
    throw NumericalError("build_system: no cross-keyframe observations in window");

  // Assemble the dense system with block operations. Camera parameters sit in
  // [0, 8nk) plus the intrinsics tail; point depths occupy [8nk, 8nk + np).
  h_cam.triangularView<Eigen::StrictlyLower>() = h_cam.transpose();
  const int kf_dim = 8 * nk;
  sys.H.topLeftCorner(kf_dim, kf_dim) = h_cam.topLeftCorner(kf_dim, kf_dim);
  sys.H.block(0, kf_dim, kf_dim, np) = h_cam_point.topRows(kf_dim);
  sys.H.block(kf_dim, 0, np, kf_dim) = h_cam_point.topRows(kf_dim).transpose();
  sys.H.diagonal().segment(kf_dim, np) = h_point_diag;
  if (cfg.optimize_intrinsics) {
    const int ko = kf_dim + np;
    sys.H.block(ko, ko, 4, 4) = h_cam.block(kf_dim, kf_dim, 4, 4);
    sys.H.block(0, ko, kf_dim, 4) = h_cam.block(0, kf_dim, kf_dim, 4);
    sys.H.block(ko, 0, 4, kf_dim) = h_cam.block(0, kf_dim, kf_dim, 4).transpose();
    sys.H.block(kf_dim, ko, np, 4) = h_cam_point.bottomRows(4).transpose();
    sys.H.block(ko, kf_dim, 4, np) = h_cam_point.bottomRows(4);
  }
  return sys;
}

namespace detail {

/// Solves (H + mu diag(H)) delta = b exploiting the diagonal point block via
/// Schur elimination; the reduced camera system goes through dense Cholesky.
/// Returns nullopt when the factorization is unusable at this damping level.
inline std::optional<Eigen::VectorXd> solve_damped(const GaussNewtonSystem& sys, double mu) {
  const int nk = sys.num_keyframes;
  const int np = sys.num_points;
  const int nc = 8 * nk + (sys.with_intrinsics ? 4 : 0);
  const int dim = sys.dimension();

  std::vector<int> cam(nc);
  for (int i = 0; i < 8 * nk; ++i) cam[i] = i;
  if (sys.with_intrinsics)
    for (int i = 0; i < 4; ++i) cam[8 * nk + i] = 8 * nk + np + i;
  const int point_base = 8 * nk;

  Eigen::MatrixXd S(nc, nc);
  Eigen::VectorXd rhs(nc);
  for (int i = 0; i < nc; ++i) {
    rhs(i) = sys.b(cam[i]);
    for (int j = 0; j < nc; ++j) S(i, j) = sys.H(cam[i], cam[j]);
    S(i, i) += mu * sys.H(cam[i], cam[i]);
  }

  Eigen::MatrixXd Hcp(nc, np);
  Eigen::VectorXd dpp(np), bp(np);
  for (int j = 0; j < np; ++j) {
    const int col = point_base + j;
    for (int i = 0; i < nc; ++i) Hcp(i, j) = sys.H(cam[i], col);
    dpp(j) = sys.H(col, col) * (1.0 + mu);
    bp(j) = sys.b(col);
  }

  for (int j = 0; j < np; ++j) {
    if (dpp(j) <= 1e-12) continue;  // unobserved point, leave its delta at zero
    const double inv = 1.0 / dpp(j);
    S.noalias() -= (Hcp.col(j) * inv) * Hcp.col(j).transpose();
    rhs.noalias() -= Hcp.col(j) * (inv * bp(j));
  }

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd delta_cam = ldlt.solve(rhs);
  if (!delta_cam.allFinite()) return std::nullopt;
  if ((S * delta_cam - rhs).norm() > 1e-6 * (rhs.norm() + 1.0)) return std::nullopt;

  Eigen::VectorXd delta = Eigen::VectorXd::Zero(dim);
  for (int i = 0; i < nc; ++i) delta(cam[i]) = delta_cam(i);
  for (int j = 0; j < np; ++j) {
    if (dpp(j) <= 1e-12) continue;
    delta(point_base + j) = (bp(j) - Hcp.col(j).dot(delta_cam)) / dpp(j);
  }
  return delta;
}

inline void fix_gauge(GaussNewtonSystem& sys) {
  // Freeze the first keyframe's pose and affine pair.
  for (int i = 0; i < 8; ++i) {
    sys.H.row(i).setZero();
    sys.H.col(i).setZero();
    sys.H(i, i) = 1.0;
    sys.b(i) = 0.0;
  }
}

inline WindowState apply_delta(const WindowState& window, const Eigen::VectorXd& delta,
                               const GaussNewtonSystem& sys) {
  WindowState out = window;
  const int nk = sys.num_keyframes;
  for (int k = 0; k < nk; ++k) {
    Keyframe& kf = out.keyframes[k];
    kf.pose = left_oplus(delta.segment<6>(8 * k), kf.pose);
    kf.affine.a += delta(8 * k + 6);
    kf.affine.b += delta(8 * k + 7);
  }
  int g = 0;
  for (auto& kf : out.keyframes) {
    for (auto& pt : kf.points) {
      pt.inv_depth = std::max(pt.inv_depth + delta(sys.point_offset(g)), 1e-6);
      ++g;
    }
  }
  if (sys.with_intrinsics) {
    const int o = sys.intrinsics_offset();
    Intrinsics& K = out.intrinsics;
    const double fx = std::max(K.fx + delta(o), 1.0);
    const double fy = std::max(K.fy + delta(o + 1), 1.0);
    const double cx = std::clamp(K.cx + delta(o + 2), 1.0, K.width - 1.0);
    const double cy = std::clamp(K.cy + delta(o + 3), 1.0, K.height - 1.0);
    K = Intrinsics(fx, fy, cx, cy, K.width, K.height);
  }
  return out;
}

}  // namespace detail

struct OptimizeResult {
  WindowState window;
  std::vector<double> energy_trace;  ///< initial energy followed by accepted-step energies
};

/// Levenberg-damped Gauss-Newton over the window: poses move by left-oplus,
/// scalars additively, first keyframe frozen as the gauge anchor. Runs
/// cfg.gn_iterations accepted steps (an exact stall at maximum damping ends
/// early; a failed factorization at maximum damping is an error).
inline OptimizeResult optimize_window(WindowState window, const BackendConfig& cfg) {
  if (window.keyframes.size() < 2)
    throw NumericalError("optimize_window: insufficient observations (need two keyframes)");
  OptimizeResult result;
  double energy = 0.0;

  double mu = cfg.lm_mu_initial;
  for (int iter = 0; iter < cfg.gn_iterations; ++iter) {
    GaussNewtonSystem sys = build_system(window, cfg);
    if (iter == 0) {
      energy = sys.energy;
      result.energy_trace.push_back(energy);
    }
    detail::fix_gauge(sys);

    bool accepted = false;
    while (!accepted) {
      const auto delta = detail::solve_damped(sys, mu);
      if (!delta) {
        mu *= 10.0;
        if (mu > cfg.lm_mu_max)
          throw NumericalError("optimize_window: singular system at maximum damping");
        continue;
      }
      WindowState candidate = detail::apply_delta(window, *delta, sys);
      const double candidate_energy = total_energy(candidate, cfg);
      // Tolerant acceptance so a converged window terminates with no-op steps.
      if (std::isfinite(candidate_energy) &&
          candidate_energy <= energy + 1e-12 * std::max(1.0, energy)) {
        window = std::move(candidate);
        energy = std::min(candidate_energy, energy);
        result.energy_trace.push_back(energy);
        mu = std::max(mu * 0.1, 1e-9);
        accepted = true;
      } else {
        mu *= 10.0;
        if (mu > cfg.lm_mu_max) {
          result.window = std::move(window);
          return result;  // local minimum: no step can lower the energy
        }
      }
    }
  }
  result.window = std::move(window);
  return result;
}

/// Shrinks the window to at most max_window keyframes. The victim is the
/// oldest keyframe unless a newer one (never the newest, which anchors
/// tracking) retains under 5% of its points observed elsewhere in the window.
/// Removal drops the keyframe and its hosted points outright.
inline WindowState marginalize(WindowState window, int max_window, const BackendConfig& cfg) {
  while (static_cast<int>(window.keyframes.size()) > max_window) {
    const int n = static_cast<int>(window.keyframes.size());
    int victim = 0;
    for (int k = 1; k + 1 < n; ++k) {
      const Keyframe& kf = window.keyframes[k];
      if (kf.points.empty()) continue;
      size_t observed = 0;
      for (const PointState& pt : kf.points) {
        bool seen = false;
        for (int t = 0; t < n && !seen; ++t) {
          if (t == k) continue;
          seen = evaluate_residual(pt, kf, window.keyframes[t], window.intrinsics, cfg,
                                   /*with_jacobians=*/false)
                     .valid_count > 0;
        }
        if (seen) ++observed;
      }
      if (static_cast<double>(observed) < 0.05 * static_cast<double>(kf.points.size())) {
        victim = k;
        break;
      }
    }
    window.keyframes.erase(window.keyframes.begin() + victim);
  }
  return window;
}

}  // namespace ceilvo
