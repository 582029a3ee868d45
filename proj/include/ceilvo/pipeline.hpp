#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <vector>

#include "ceilvo/backend.hpp"
#include "ceilvo/dataset.hpp"
#include "ceilvo/frontend.hpp"
#include "ceilvo/trajectory.hpp"

namespace ceilvo {

/// Everything a run needs; defaults match the reference operating point
/// (848x480, 30 fps, window of 7).
struct RunConfig {
  int width = 848;
  int height = 480;
  double fps = 30.0;
  int max_window = 7;  ///< N_f

  double huber_gamma = 9.0;
  double gradient_weight_c = 50.0;
  int pyramid_levels = 0;  ///< 0 = auto from image size
  int candidate_target = 400;
  std::uint64_t seed = 0;  ///< echoed into logs; the run itself is deterministic

  KeyframePolicy keyframe;
  SelectionConfig selection;
  TrackingConfig tracking;
  DepthInitConfig depth_init;
  BackendConfig backend;

  int min_bootstrap_points = 16;
  double min_activation_disparity_px = 4.0;  ///< expected disparity gate for epipolar init

  BackendConfig backend_config() const {
    BackendConfig cfg = backend;
    cfg.huber_gamma = huber_gamma;
    cfg.gradient_weight_c = gradient_weight_c;
    cfg.max_window = max_window;
    return cfg;
  }
  TrackingConfig tracking_config() const {
    TrackingConfig cfg = tracking;
    cfg.huber_gamma = huber_gamma;
    cfg.gradient_weight_c = gradient_weight_c;
    return cfg;
  }
};

struct FrameRecord {
  int index = 0;          ///< dataset frame index
  double timestamp = 0.0;
  double wall_ms = 0.0;   ///< processing time, image decode excluded
  bool tracked = false;   ///< a pose was produced for this frame
  bool keyframe = false;
  double mean_residual = 0.0;
  int warnings = 0;
};

struct RunLog {
  RunConfig config;
  std::vector<FrameRecord> records;
  Trajectory trajectory;
  size_t frames_processed = 0;
  size_t keyframe_count = 0;
  size_t warning_count = 0;

  double mean_frame_ms() const {
    if (records.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : records) sum += r.wall_ms;
    return sum / static_cast<double>(records.size());
  }
};

namespace detail {

inline double median_of(std::deque<double> values) {
  std::sort(values.begin(), values.end());
  const size_t m = values.size();
  return m % 2 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
}

/// Re-hosts the window's points into a new keyframe by projection, for
/// keyframes created without a usable epipolar baseline (in-place turns).
inline std::vector<PointState> transfer_points(const WindowState& window, const Pose& new_pose,
                                               const Intrinsics& K, int cap) {
  std::vector<PointState> out;
  const Mat3 R_new_t = new_pose.rotation().transpose();
  for (const auto& host : window.keyframes) {
    const Mat3 R_w = R_new_t * host.pose.rotation();
    const Vec3 t_w = R_new_t * (host.pose.translation() - new_pose.translation());
    for (const auto& pt : host.points) {
      if (static_cast<int>(out.size()) >= cap) return out;
      const Vec3 X_host((pt.pixel.x() - K.cx) / K.fx / pt.inv_depth,
                        (pt.pixel.y() - K.cy) / K.fy / pt.inv_depth, 1.0 / pt.inv_depth);
      const Vec3 X_new = R_w * X_host + t_w;
      if (!(X_new.z() > 1e-6)) continue;
      const Vec2 p(K.fx * X_new.x() / X_new.z() + K.cx, K.fy * X_new.y() / X_new.z() + K.cy);
      if (!in_image(K, p, 3.0)) continue;
      out.push_back(PointState{p, 1.0 / X_new.z()});
    }
  }
  return out;
}

}  // namespace detail

/// Runs the visual-odometry pipeline over a dataset: frame-rate decimation,
/// photometric correction, bootstrap, per-frame tracking, keyframe promotion
/// with inverse-depth initialization, windowed optimization, marginalization.
/// Single-threaded and deterministic: same dataset + config, same trajectory.
inline RunLog run_odometry(const Dataset& dataset, const RunConfig& config) {
  using Clock = std::chrono::steady_clock;

  RunLog log;
  log.config = config;

  const Intrinsics& native = dataset.intrinsics();
  bool halve = false;
  if (config.width == native.width && config.height == native.height) {
    halve = false;
  } else if (config.width * 2 == native.width && config.height * 2 == native.height) {
    halve = true;
  } else {
    throw DataError("run: requested size must be the dataset size or exactly half of it");
  }
  const Intrinsics K = halve ? native.halved() : native;
  const double diag = K.diagonal();

  const BackendConfig backend_cfg = config.backend_config();
  const TrackingConfig tracking_cfg = config.tracking_config();

  std::vector<double> timestamps;
  timestamps.reserve(dataset.frames().size());
  for (const auto& f : dataset.frames()) timestamps.push_back(f.timestamp);
  const std::vector<size_t> selected = decimate_indices(timestamps, config.fps);

  WindowState window;
  window.intrinsics = K;
  int next_keyframe_id = 0;

  bool bootstrapped = false;
  std::vector<CandidatePoint> bootstrap_candidates;

  Pose warp_prev;       // reference -> previous frame
  Pose warp_prev2;      // reference -> frame before that
  bool have_prev = false, have_prev2 = false;
  std::deque<double> residual_history;

  for (size_t si = 0; si < selected.size(); ++si) {
    const DatasetFrameEntry& entry = dataset.frames()[selected[si]];
    Image raw = dataset.load_image(selected[si]);

    const auto t_start = Clock::now();
    FrameRecord record;
    record.index = entry.index;
    record.timestamp = entry.timestamp;
    ++log.frames_processed;

    Image corrected = correct_image(raw, dataset.calibration());
    if (halve) corrected = corrected.downsampled_half();
    const double exposure = entry.has_exposure ? entry.exposure_s : 1.0;
    FramePtr frame = std::make_shared<Frame>(build_frame(
        std::move(corrected), exposure, entry.timestamp, config.pyramid_levels, entry.index));

    const auto finish = [&](bool tracked) {
      record.tracked = tracked;
      record.wall_ms =
          std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
      log.warning_count += record.warnings;
      log.records.push_back(record);
    };

    if (window.keyframes.empty()) {
      // First keyframe: needs enough texture to host candidates.
      SelectionResult sel = select_candidates(*frame, config.candidate_target, config.selection);
      if (sel.low_texture) ++record.warnings;
      if (static_cast<int>(sel.points.size()) < config.min_bootstrap_points) {
        finish(false);
        continue;
      }
      Keyframe kf;
      kf.id = next_keyframe_id++;
      kf.frame = frame;
      kf.pose = Pose::Identity();
      for (const auto& c : sel.points) kf.points.push_back(PointState{c.pixel, 1.0});
      bootstrap_candidates = std::move(sel.points);
      window.keyframes.push_back(std::move(kf));
      ++log.keyframe_count;
      record.keyframe = true;
      log.trajectory.push(entry.timestamp, Pose::Identity());
      finish(true);
      continue;
    }

    if (!bootstrapped) {
      // Track against the seed keyframe under a flat unit-inverse-depth map
      // until there is enough parallax to triangulate.
      Keyframe& kf0 = window.keyframes.front();
      const Pose prior = have_prev ? warp_prev : Pose::Identity();
      TrackingResult result = track_frame(*frame, kf0, K, prior, tracking_cfg);
      record.mean_residual = result.level_mean_residual.empty() ? 0.0
                                                                : result.level_mean_residual[0];
      if (!result.converged) {
        ++record.warnings;
        have_prev2 = false;
        finish(false);
        continue;
      }
      warp_prev2 = warp_prev;
      have_prev2 = have_prev;
      warp_prev = result.relative;
      have_prev = true;

      if (result.mean_flow_px <= config.keyframe.flow_fraction * diag) {
        log.trajectory.push(entry.timestamp, kf0.pose * result.relative.inverse());
        finish(true);
        continue;
      }

      // Enough parallax: triangulate the seed keyframe's candidates.
      std::vector<CandidatePoint> candidates = bootstrap_candidates;
      std::vector<PointState> refined;
      double inv_depth_sum = 0.0;
      for (auto& cand : candidates) {
        if (initialize_depth(cand, *kf0.frame, *frame, result.relative, K, config.depth_init) ==
            DepthInitOutcome::Refined) {
          refined.push_back(PointState{cand.pixel, cand.inv_depth});
          inv_depth_sum += cand.inv_depth;
        }
      }
      if (static_cast<int>(refined.size()) < config.min_bootstrap_points) {
        ++record.warnings;
        log.trajectory.push(entry.timestamp, kf0.pose * result.relative.inverse());
        finish(true);
        continue;
      }

      // Monocular gauge: normalize the map to mean inverse depth 1.
      const double mean_inv_depth = inv_depth_sum / static_cast<double>(refined.size());
      for (auto& pt : refined) pt.inv_depth /= mean_inv_depth;
      const Pose rel_scaled(result.relative.rotation(),
                            result.relative.translation() * mean_inv_depth);
      kf0.points = std::move(refined);

      Keyframe kf1;
      kf1.id = next_keyframe_id++;
      kf1.frame = frame;
      kf1.pose = kf0.pose * rel_scaled.inverse();
      kf1.affine = result.affine;
      SelectionResult sel = select_candidates(*frame, config.candidate_target, config.selection);
      const Pose new_to_seed = rel_scaled.inverse();
      for (auto& cand : sel.points) {
        if (initialize_depth(cand, *frame, *kf0.frame, new_to_seed, K, config.depth_init) ==
            DepthInitOutcome::Refined)
          kf1.points.push_back(PointState{cand.pixel, cand.inv_depth});
      }
      window.keyframes.push_back(std::move(kf1));
      ++log.keyframe_count;
      record.keyframe = true;

      try {
        window = optimize_window(std::move(window), backend_cfg).window;
      } catch (const NumericalError&) {
        ++record.warnings;
      }
      log.trajectory.push(entry.timestamp, window.keyframes.back().pose);
      bootstrapped = true;
      warp_prev = Pose::Identity();  // this frame is the new reference
      have_prev = true;
      have_prev2 = false;
      finish(true);
      continue;
    }

    // Normal operation: track against the newest keyframe.
    const Keyframe& ref = window.keyframes.back();
    Pose prior = have_prev ? warp_prev : Pose::Identity();
    if (have_prev2) prior = warp_prev * warp_prev2.inverse() * warp_prev;
    TrackingResult result = track_frame(*frame, ref, K, prior, tracking_cfg);
    record.mean_residual = result.level_mean_residual.empty() ? 0.0
                                                              : result.level_mean_residual[0];
    if (!result.converged) {
      ++record.warnings;
      have_prev2 = false;
      finish(false);
      continue;
    }
    warp_prev2 = warp_prev;
    have_prev2 = have_prev;
    warp_prev = result.relative;
    have_prev = true;

    const Pose tracked_pose = ref.pose * result.relative.inverse();

    residual_history.push_back(record.mean_residual);
    if (residual_history.size() > 20) residual_history.pop_front();
    KeyframeContext ctx;
    ctx.image_diagonal_px = diag;
    ctx.reference_a = ref.affine.a;
    ctx.residual_median =
        residual_history.size() >= 5 ? detail::median_of(residual_history) : 0.0;

    if (!should_create_keyframe(result, ctx, config.keyframe)) {
      log.trajectory.push(entry.timestamp, tracked_pose);
      finish(true);
      continue;
    }

    Keyframe kf;
    kf.id = next_keyframe_id++;
    kf.frame = frame;
    kf.pose = tracked_pose;
    kf.affine = result.affine;

    // Expected disparity decides between epipolar initialization and point
    // transfer (in-place turns have no usable baseline).
    double mean_window_inv_depth = 0.0;
    size_t n_points = 0;
    for (const auto& wkf : window.keyframes) {
      for (const auto& pt : wkf.points) {
        mean_window_inv_depth += pt.inv_depth;
        ++n_points;
      }
    }
    mean_window_inv_depth = n_points > 0 ? mean_window_inv_depth / n_points : 1.0;
    const double baseline = result.relative.translation().norm();
    const double expected_disparity = K.fx * baseline * mean_window_inv_depth;

    if (expected_disparity >= config.min_activation_disparity_px) {
      SelectionResult sel = select_candidates(*frame, config.candidate_target, config.selection);
      if (sel.low_texture) ++record.warnings;
      const Pose new_to_ref = result.relative.inverse();
      for (auto& cand : sel.points) {
        if (initialize_depth(cand, *frame, *ref.frame, new_to_ref, K, config.depth_init) ==
            DepthInitOutcome::Refined)
          kf.points.push_back(PointState{cand.pixel, cand.inv_depth});
      }
    }
    if (kf.points.size() < static_cast<size_t>(config.candidate_target) / 4) {
      std::vector<PointState> transferred =
          detail::transfer_points(window, kf.pose, K, config.candidate_target);
      if (transferred.size() > kf.points.size()) kf.points = std::move(transferred);
    }
    if (kf.points.empty()) {
      ++record.warnings;  // nothing to host; keep tracking against the old reference
      log.trajectory.push(entry.timestamp, tracked_pose);
      finish(true);
      continue;
    }

    window.keyframes.push_back(std::move(kf));
    ++log.keyframe_count;
    record.keyframe = true;
    try {
      window = optimize_window(std::move(window), backend_cfg).window;
    } catch (const NumericalError&) {
      ++record.warnings;
    }
    window = marginalize(std::move(window), config.max_window, backend_cfg);
    log.trajectory.push(entry.timestamp, window.keyframes.back().pose);
    warp_prev = Pose::Identity();
    have_prev = true;
    have_prev2 = false;
    finish(true);
  }

  return log;
}

}  // namespace ceilvo
