#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ceilvo/backend.hpp"
#include "ceilvo/photometry.hpp"
#include "ceilvo/se3.hpp"

namespace ceilvo {

enum class PointStatus { Candidate, Activated, Dropped };

/// A pixel picked for depth estimation, with its inverse-depth hypothesis and
/// search interval.
struct CandidatePoint {
  Vec2 pixel = Vec2::Zero();  ///< level-0 coordinates
  double gradient_magnitude = 0.0;
  PointStatus status = PointStatus::Candidate;
  double inv_depth = 1.0;
  double d_min = 0.05;  ///< search interval, 1/m (depths 0.5 m .. 20 m)
  double d_max = 2.0;
};

struct SelectionConfig {
  int block_size = 16;            ///< level-0 pixels per block
  double median_factor = 1.5;     ///< adaptive threshold = median * factor
  double threshold_floor = 7.0;   ///< intensity units
  int pattern_radius = 2;         ///< keep-out border
};

struct SelectionResult {
  std::vector<CandidatePoint> points;
  bool low_texture = false;  ///< selection fell below 25% of the target
};

/// Picks at most one high-gradient pixel per block, thresholded adaptively at
/// max(median * 1.5, floor) of the block's gradient magnitudes. When more
/// blocks qualify than requested, a stride over the row-major block order
/// keeps the selection spatially uniform. Deterministic.
inline SelectionResult select_candidates(const Frame& frame, int target_count,
                                         const SelectionConfig& cfg = {}) {
  if (target_count < 1) throw std::invalid_argument("select_candidates: target_count must be >= 1");
  const FrameLevel& level = frame.level(0);
  const int w = level.intensity.width();
  const int h = level.intensity.height();
  const int bs = cfg.block_size;
  const int border = cfg.pattern_radius;

  std::vector<CandidatePoint> winners;
  std::vector<float> block_mags;
  block_mags.reserve(static_cast<size_t>(bs) * bs);

  for (int by = 0; by < h; by += bs) {
    for (int bx = 0; bx < w; bx += bs) {
      const int x_end = std::min(bx + bs, w);
      const int y_end = std::min(by + bs, h);
      block_mags.clear();
      double best_mag = -1.0;
      int best_x = -1, best_y = -1;
      for (int y = by; y < y_end; ++y) {
        for (int x = bx; x < x_end; ++x) {
          const double gx = level.grad_x.at(x, y);
          const double gy = level.grad_y.at(x, y);
          const double mag = std::sqrt(gx * gx + gy * gy);
          block_mags.push_back(static_cast<float>(mag));
          const bool interior = x >= border && y >= border && x < w - border && y < h - border;
          if (interior && mag > best_mag) {
            best_mag = mag;
            best_x = x;
            best_y = y;
          }
        }
      }
      if (best_x < 0) continue;
      const size_t mid = block_mags.size() / 2;
      std::nth_element(block_mags.begin(), block_mags.begin() + mid, block_mags.end());
      const double threshold = std::max(cfg.median_factor * block_mags[mid], cfg.threshold_floor);
      if (best_mag >= threshold) {
        CandidatePoint cp;
        cp.pixel = Vec2(best_x, best_y);
        cp.gradient_magnitude = best_mag;
        winners.push_back(cp);
      }
    }
  }

  SelectionResult result;
  if (static_cast<int>(winners.size()) > target_count) {
    result.points.reserve(target_count);
    const size_t m = winners.size();
    for (int i = 0; i < target_count; ++i)
      result.points.push_back(winners[static_cast<size_t>(i) * m / target_count]);
  } else {
    result.points = std::move(winners);
  }
  result.low_texture =
      static_cast<double>(result.points.size()) < 0.25 * static_cast<double>(target_count);
  return result;
}

struct TrackingConfig {
  int iterations_per_level = 10;
  double huber_gamma = 9.0;
  double gradient_weight_c = 50.0;
  std::vector<Eigen::Vector2i> pattern = default_residual_pattern();
  double lm_mu_initial = 1e-4;
  double lm_mu_max = 1e5;
  double min_increment = 1e-8;
  double projection_border = 2.0;
};

/// Outcome of direct image alignment of one frame against a keyframe.
struct TrackingResult {
  Pose relative;              ///< maps reference-camera coordinates to new-frame coordinates
  AffineBrightness affine;    ///< new frame's (a, b)
  std::vector<double> level_mean_residual;  ///< mean |r|, coarsest first
  double inlier_fraction = 0.0;             ///< |r| <= gamma among valid residuals
  bool converged = false;
  double mean_flow_px = 0.0;  ///< mean pattern displacement at level 0, px
};

namespace detail {

inline Vec2 level_coords(const Vec2& p0, int level) {
  const double s = static_cast<double>(1 << level);
  return Vec2((p0.x() + 0.5) / s - 0.5, (p0.y() + 0.5) / s - 0.5);
}

struct TrackLevelStats {
  double energy = 0.0;
  double abs_residual_sum = 0.0;
  int valid = 0;
  int inliers = 0;
  double flow_sum = 0.0;
  int flow_count = 0;
};

/// Accumulates the 8-parameter system [twist(6), a, b] for one pyramid level.
/// Returns stats; H/b may be null when only the energy is needed.
inline TrackLevelStats accumulate_tracking(const Keyframe& ref, const Frame& frame,
                                           const Intrinsics& K_level, int level, const Pose& warp,
                                           const AffineBrightness& ab_new,
                                           const TrackingConfig& cfg,
                                           Eigen::Matrix<double, 8, 8>* H,
                                           Eigen::Matrix<double, 8, 1>* b) {
  TrackLevelStats stats;
  const FrameLevel& ref_level = ref.frame->level(level);
  const FrameLevel& new_level = frame.level(level);
  const double t_i = ref.frame->exposure();
  const double t_j = frame.exposure();
  const double gain = (t_j * std::exp(ab_new.a)) / (t_i * std::exp(ref.affine.a));
  const Mat3 R = warp.rotation();
  const Vec3 t = warp.translation();

  for (const PointState& pt : ref.points) {
    const Vec2 p_l = level_coords(pt.pixel, level);
    for (const auto& offset : cfg.pattern) {
      const Vec2 p_host = p_l + offset.cast<double>();
      if (!ref_level.intensity.contains(p_host.x(), p_host.y())) continue;
      const double d = pt.inv_depth;
      const Vec3 X_host((p_host.x() - K_level.cx) / K_level.fx / d,
                        (p_host.y() - K_level.cy) / K_level.fy / d, 1.0 / d);
      const Vec3 X_new = R * X_host + t;
      if (!(X_new.z() > 1e-6)) continue;
      const double inv_z = 1.0 / X_new.z();
      const Vec2 p_new(K_level.fx * X_new.x() * inv_z + K_level.cx,
                       K_level.fy * X_new.y() * inv_z + K_level.cy);
      if (!in_image(K_level, p_new, cfg.projection_border)) continue;

      const double host_val = ref_level.intensity.sample(p_host.x(), p_host.y());
      const Image::Sampled s = new_level.intensity.sample_with_gradient(p_new.x(), p_new.y());
      const double r = (s.value - ab_new.b) - gain * (host_val - ref.affine.b);

      const Vec2 host_grad(ref_level.grad_x.sample(p_host.x(), p_host.y()),
                           ref_level.grad_y.sample(p_host.x(), p_host.y()));
      const double w_p = gradient_weight(host_grad, cfg.gradient_weight_c);
      const double w = w_p * huber_weight(r, cfg.huber_gamma);

      stats.energy += w_p * huber_norm(r, cfg.huber_gamma);
      stats.abs_residual_sum += std::abs(r);
      ++stats.valid;
      if (std::abs(r) <= cfg.huber_gamma) ++stats.inliers;
      if (offset.x() == 0 && offset.y() == 0) {
        stats.flow_sum += (p_new - p_host).norm() * static_cast<double>(1 << level);
        ++stats.flow_count;
      }

      if (H == nullptr) continue;
      Eigen::Matrix<double, 2, 3> dpi_dX;
      // clang-format off
      dpi_dX << K_level.fx * inv_z, 0.0, -K_level.fx * X_new.x() * inv_z * inv_z,
                0.0, K_level.fy * inv_z, -K_level.fy * X_new.y() * inv_z * inv_z;
      // clang-format on
      const Eigen::Matrix<double, 1, 2> gI(s.gx, s.gy);
      const Eigen::Matrix<double, 1, 3> gX = gI * dpi_dX;

      Eigen::Matrix<double, 1, 8> J;
      J.segment<3>(0) = gX;                      // d X_new / d rho = I
      J.segment<3>(3) = -gX * skew(X_new);       // d X_new / d omega = -X_new^
      J(6) = -gain * (host_val - ref.affine.b);  // d r / d a_new
      J(7) = -1.0;                               // d r / d b_new
      H->noalias() += w * J.transpose() * J;
      b->noalias() -= w * J.transpose() * r;
    }
  }
  return stats;
}

}  // namespace detail

/// Coarse-to-fine direct alignment of `frame` against the newest keyframe,
/// optimizing the relative pose and the new frame's affine brightness pair.
/// Never throws on poor image content; a frame that cannot be aligned comes
/// back with converged == false.
inline TrackingResult track_frame(const Frame& frame, const Keyframe& ref, const Intrinsics& K,
                                  const Pose& prior, const TrackingConfig& cfg = {}) {
  if (ref.points.empty())
    throw std::invalid_argument("track_frame: reference keyframe has no active points");

  Pose warp = prior;
  AffineBrightness ab;
  TrackingResult result;

  const int levels = std::min(frame.pyramid_levels(), ref.frame->pyramid_levels());
  result.level_mean_residual.assign(levels, 0.0);

  bool accepted_finest = false;
  bool pose_information = false;
  detail::TrackLevelStats final_stats;

  for (int level = levels - 1; level >= 0; --level) {
    const Intrinsics K_level = K.at_level(level);
    double mu = cfg.lm_mu_initial;

    Eigen::Matrix<double, 8, 8> H;
    Eigen::Matrix<double, 8, 1> b;
    H.setZero();
    b.setZero();
    detail::TrackLevelStats stats =
        detail::accumulate_tracking(ref, frame, K_level, level, warp, ab, cfg, &H, &b);
    double energy = stats.energy;

    int accepted_steps = 0;
    while (accepted_steps < cfg.iterations_per_level) {
      if (stats.valid == 0) break;
      Eigen::Matrix<double, 8, 8> damped = H;
      damped.diagonal() += mu * H.diagonal();
      // Rank guard so an affine-only signal cannot masquerade as a pose fit.
      const double pose_diag = H.diagonal().head<6>().maxCoeff();
      if (!(pose_diag > 1e-10)) break;
      damped.diagonal() = damped.diagonal().cwiseMax(1e-12);

      const Eigen::LDLT<Eigen::Matrix<double, 8, 8>> ldlt(damped);
      Eigen::Matrix<double, 8, 1> delta = ldlt.solve(b);
      if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
        mu *= 10.0;
        if (mu > cfg.lm_mu_max) break;
        continue;
      }

      const Pose warp_try = left_oplus(delta.head<6>(), warp);
      AffineBrightness ab_try{ab.a + delta(6), ab.b + delta(7)};
      const detail::TrackLevelStats stats_try = detail::accumulate_tracking(
          ref, frame, K_level, level, warp_try, ab_try, cfg, nullptr, nullptr);

      if (stats_try.valid > 0 &&
          stats_try.energy <= energy + 1e-12 * std::max(1.0, energy)) {
        warp = warp_try;
        ab = ab_try;
        energy = stats_try.energy;
        ++accepted_steps;
        mu = std::max(mu * 0.1, 1e-8);
        if (level == 0) accepted_finest = true;
        if (delta.norm() < cfg.min_increment) break;
        H.setZero();
        b.setZero();
        stats = detail::accumulate_tracking(ref, frame, K_level, level, warp, ab, cfg, &H, &b);
      } else {
        mu *= 10.0;
        if (mu > cfg.lm_mu_max) break;
      }
    }

    const detail::TrackLevelStats level_final =
        detail::accumulate_tracking(ref, frame, K_level, level, warp, ab, cfg, nullptr, nullptr);
    result.level_mean_residual[level] =
        level_final.valid > 0 ? level_final.abs_residual_sum / level_final.valid : 0.0;
    if (level == 0) {
      final_stats = level_final;
      Eigen::Matrix<double, 8, 8> Hf;
      Eigen::Matrix<double, 8, 1> bf;
      Hf.setZero();
      bf.setZero();
      detail::accumulate_tracking(ref, frame, K_level, level, warp, ab, cfg, &Hf, &bf);
      pose_information = Hf.diagonal().head<6>().maxCoeff() > 1e-10;
    }
  }

  result.relative = warp;
  result.affine = ab;
  result.inlier_fraction =
      final_stats.valid > 0 ? static_cast<double>(final_stats.inliers) / final_stats.valid : 0.0;
  result.mean_flow_px =
      final_stats.flow_count > 0 ? final_stats.flow_sum / final_stats.flow_count : 0.0;
  result.converged = pose_information && accepted_finest && final_stats.valid > 0;
  return result;
}

struct DepthInitConfig {
  double d_floor = 1e-4;        ///< hard lower bound on inverse depth
  int min_samples = 32;
  int max_samples = 512;
  double ambiguity_ratio = 0.10;  ///< second minimum within 10% of the best
  std::vector<Eigen::Vector2i> pattern = default_residual_pattern();
  double projection_border = 2.0;
};

enum class DepthInitOutcome { Refined, Ambiguous, Dropped };

/// Discrete search along the epipolar segment induced by the candidate's
/// inverse-depth interval, scoring pattern SSD at the finest level, followed
/// by a parabolic sub-step refinement. Requires a translational baseline.
inline DepthInitOutcome initialize_depth(CandidatePoint& cand, const Frame& host,
                                         const Frame& target, const Pose& host_to_target,
                                         const Intrinsics& K, const DepthInitConfig& cfg = {}) {
  if (!(host_to_target.translation().norm() > 1e-9))
    throw std::invalid_argument("initialize_depth: zero baseline, depth unobservable");

  const Image& host_img = host.level(0).intensity;
  const Image& target_img = target.level(0).intensity;
  const Mat3 R = host_to_target.rotation();
  const Vec3 t = host_to_target.translation();

  const auto project_at = [&](double d) -> std::optional<Vec2> {
    const Vec3 X_host((cand.pixel.x() - K.cx) / K.fx / d, (cand.pixel.y() - K.cy) / K.fy / d,
                      1.0 / d);
    const Vec3 X = R * X_host + t;
    if (!(X.z() > 1e-6)) return std::nullopt;
    return Vec2(K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy);
  };

  int samples = 128;
  {
    const auto lo = project_at(cand.d_min);
    const auto hi = project_at(cand.d_max);
    if (lo && hi)
      samples = std::clamp(static_cast<int>(std::ceil((*hi - *lo).norm())) + 1, cfg.min_samples,
                           cfg.max_samples);
  }

  const double step = (cand.d_max - cand.d_min) / (samples - 1);
  std::vector<double> score(samples, std::numeric_limits<double>::infinity());
  for (int k = 0; k < samples; ++k) {
    const double d = cand.d_min + k * step;
    double ssd = 0.0;
    bool ok = true;
    for (const auto& offset : cfg.pattern) {
      const Vec2 p_host = cand.pixel + offset.cast<double>();
      if (!host_img.contains(p_host.x(), p_host.y())) {
        ok = false;
        break;
      }
      const Vec3 X_host((p_host.x() - K.cx) / K.fx / d, (p_host.y() - K.cy) / K.fy / d, 1.0 / d);
      const Vec3 X = R * X_host + t;
      if (!(X.z() > 1e-6)) {
        ok = false;
        break;
      }
      const Vec2 p(K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy);
      if (!in_image(K, p, cfg.projection_border)) {
        ok = false;
        break;
      }
      const double diff = target_img.sample(p.x(), p.y()) - host_img.sample(p_host.x(), p_host.y());
      ssd += diff * diff;
    }
    if (ok) score[k] = ssd;
  }

  int best = -1;
  for (int k = 0; k < samples; ++k)
    if (std::isfinite(score[k]) && (best < 0 || score[k] < score[best])) best = k;
  if (best < 0) {
    cand.status = PointStatus::Dropped;
    return DepthInitOutcome::Dropped;
  }

  // Local minima of the score profile; a rival within 10% flags ambiguity.
  bool ambiguous = false;
  for (int k = 0; k < samples; ++k) {
    if (!std::isfinite(score[k]) || std::abs(k - best) <= 2) continue;
    const double prev = k > 0 ? score[k - 1] : std::numeric_limits<double>::infinity();
    const double next = k + 1 < samples ? score[k + 1] : std::numeric_limits<double>::infinity();
    if (score[k] <= prev && score[k] <= next &&
        score[k] <= score[best] * (1.0 + cfg.ambiguity_ratio) + 1e-12) {
      ambiguous = true;
      break;
    }
  }

  double d_best = cand.d_min + best * step;
  if (best > 0 && best + 1 < samples && std::isfinite(score[best - 1]) &&
      std::isfinite(score[best + 1])) {
    const double denom = score[best - 1] - 2.0 * score[best] + score[best + 1];
    if (denom > 1e-12) {
      const double offset = 0.5 * (score[best - 1] - score[best + 1]) / denom;
      d_best += std::clamp(offset, -1.0, 1.0) * step;
    }
  }
  d_best = std::max(d_best, cfg.d_floor);

  if (ambiguous) {
    cand.inv_depth = d_best;
    const double span = cand.d_max - cand.d_min;
    cand.d_min = std::max(cand.d_min - span, cfg.d_floor);
    cand.d_max += span;
    return DepthInitOutcome::Ambiguous;
  }

  cand.inv_depth = d_best;
  cand.d_min = std::max(d_best - 2.0 * step, cfg.d_floor);
  cand.d_max = d_best + 2.0 * step;
  cand.status = PointStatus::Activated;
  return DepthInitOutcome::Refined;
}

struct KeyframePolicy {
  double flow_fraction = 0.02;   ///< of the image diagonal
  double affine_delta = 0.2;     ///< |a_new - a_ref|
  double residual_factor = 2.0;  ///< vs the windowed residual median
};

struct KeyframeContext {
  double image_diagonal_px = 0.0;
  double reference_a = 0.0;
  double residual_median = 0.0;  ///< <= 0 disables the residual trigger
};

/// Keyframe promotion rule: significant optical flow, brightness change, or a
/// residual spike against the recent median. Deterministic in its inputs.
inline bool should_create_keyframe(const TrackingResult& result, const KeyframeContext& ctx,
                                   const KeyframePolicy& policy = {}) {
  if (result.mean_flow_px > policy.flow_fraction * ctx.image_diagonal_px) return true;
  if (std::abs(result.affine.a - ctx.reference_a) > policy.affine_delta) return true;
  if (ctx.residual_median > 0.0 && !result.level_mean_residual.empty() &&
      result.level_mean_residual.front() > policy.residual_factor * ctx.residual_median)
    return true;
  return false;
}

}  // namespace ceilvo
