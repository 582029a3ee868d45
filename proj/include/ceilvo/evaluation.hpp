#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "ceilvo/common.hpp"
#include "ceilvo/se3.hpp"
#include "ceilvo/trajectory.hpp"

namespace ceilvo {

/// Similarity transform S = (R, t, lambda): p -> lambda R p + t.
struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 operator*(const Vec3& p) const { return scale * (rotation * p) + translation; }

  SimilarityTransform compose(const SimilarityTransform& inner) const {
    // (this o inner)(p) = this(inner(p))
    SimilarityTransform out;
    out.rotation = rotation * inner.rotation;
    out.scale = scale * inner.scale;
    out.translation = scale * (rotation * inner.translation) + translation;
    return out;
  }
};

/// Greedy nearest-timestamp pairing in time order: for each ground-truth
/// sample the closest not-yet-used estimate sample within tau is taken. Every
/// emitted pair satisfies |t_p - t_g| < tau and no sample is used twice.
inline std::pair<Trajectory, Trajectory> synchronize(const Trajectory& gt, const Trajectory& est,
                                                     double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("synchronize: tau must be positive");
  Trajectory gt_out, est_out;
  size_t cursor = 0;
  for (const auto& g : gt.samples) {
    if (cursor >= est.samples.size()) break;
    size_t best = cursor;
    for (size_t j = cursor + 1; j < est.samples.size(); ++j) {
      if (std::abs(est.samples[j].timestamp - g.timestamp) <=
          std::abs(est.samples[best].timestamp - g.timestamp))
        best = j;
      else
        break;  // estimates are time-sorted; the distance only grows past here
    }
    if (std::abs(est.samples[best].timestamp - g.timestamp) < tau) {
      gt_out.samples.push_back(g);
      est_out.samples.push_back(est.samples[best]);
      cursor = best + 1;
    }
  }
  if (gt_out.samples.empty())
    throw DataError("synchronize: no sample pairs within tau; check clocks or increase tau");
  return {std::move(gt_out), std::move(est_out)};
}

/// Closed-form least-squares similarity minimizing sum ||g_i - (l R p_i + t)||^2:
/// centroid subtraction, SVD of the cross-covariance with determinant-sign
/// correction, scale from the variance ratio. Planar (rank-2) inputs are fine;
/// collinear or coincident ones are not.
inline SimilarityTransform align_similarity(const Trajectory& gt, const Trajectory& est) {
  const size_t n = gt.size();
  if (n != est.size()) throw std::invalid_argument("align_similarity: size mismatch");
  if (n < 3) throw DataError("align_similarity: need at least 3 pairs");

  Vec3 mean_g = Vec3::Zero(), mean_p = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_g += gt[i].position;
    mean_p += est[i].position;
  }
  mean_g /= static_cast<double>(n);
  mean_p /= static_cast<double>(n);

  Mat3 covariance = Mat3::Zero();
  double var_p = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 dg = gt[i].position - mean_g;
    const Vec3 dp = est[i].position - mean_p;
    covariance += dg * dp.transpose();
    var_p += dp.squaredNorm();
  }
  covariance /= static_cast<double>(n);
  var_p /= static_cast<double>(n);
  if (!(var_p > 1e-18)) throw DataError("align_similarity: coincident estimate points");

  Eigen::JacobiSVD<Mat3> svd(covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (!(d(1) > 1e-12 * std::max(d(0), 1e-300)))
    throw DataError("align_similarity: degenerate (collinear) configuration");

  Vec3 signs = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) signs(2) = -1.0;

  SimilarityTransform s;
  s.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  s.scale = d.dot(signs) / var_p;
  if (!(s.scale > 0.0)) throw DataError("align_similarity: non-positive recovered scale");
  s.translation = mean_g - s.scale * (s.rotation * mean_p);
  return s;
}

/// Maps every position through S and rotates orientations; timestamps pass
/// through untouched.
inline Trajectory apply_similarity(const SimilarityTransform& s, const Trajectory& traj) {
  Trajectory out;
  out.samples.reserve(traj.size());
  const Eigen::Quaterniond q_r(s.rotation);
  for (const auto& sample : traj.samples) {
    TrajectorySample mapped = sample;
    mapped.position = s * sample.position;
    mapped.orientation = (q_r * sample.orientation).normalized();
    out.samples.push_back(mapped);
  }
  return out;
}

/// Relative position errors against traveled ground-truth distance.
struct ErrorSeries {
  std::vector<double> distance;  ///< cumulative ground-truth arc length, m
  std::vector<double> epsilon;   ///< ||g_i - p*_i||, m
};

inline ErrorSeries relative_errors(const Trajectory& gt, const Trajectory& est_aligned) {
  if (gt.size() != est_aligned.size())
    throw std::invalid_argument("relative_errors: size mismatch (synchronize first)");
  ErrorSeries series;
  series.distance = gt.arc_length();
  series.epsilon.reserve(gt.size());
  for (size_t i = 0; i < gt.size(); ++i)
    series.epsilon.push_back((gt[i].position - est_aligned[i].position).norm());
  return series;
}

/// Median epsilon per fixed-width distance bin, for error-vs-distance plots.
/// Returns (bin midpoint, median) for every non-empty bin.
inline std::vector<std::pair<double, double>> binned_medians(const ErrorSeries& series,
                                                             double bin_width = 0.5) {
  std::vector<std::pair<double, double>> out;
  if (series.distance.empty() || !(bin_width > 0.0)) return out;

  std::vector<std::vector<double>> bins;
  for (size_t i = 0; i < series.distance.size(); ++i) {
    const size_t bin = static_cast<size_t>(series.distance[i] / bin_width);
    if (bin >= bins.size()) bins.resize(bin + 1);
    bins[bin].push_back(series.epsilon[i]);
  }
  for (size_t b = 0; b < bins.size(); ++b) {
    auto& bin = bins[b];
    if (bin.empty()) continue;
    std::sort(bin.begin(), bin.end());
    const size_t m = bin.size();
    const double median = m % 2 ? bin[m / 2] : 0.5 * (bin[m / 2 - 1] + bin[m / 2]);
    out.emplace_back((static_cast<double>(b) + 0.5) * bin_width, median);
  }
  return out;
}

struct BoxStats {
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
  double whisker_lo = 0.0, whisker_hi = 0.0;
};

/// Quartiles by linear interpolation between closest ranks; whiskers reach
/// the farthest data points within 1.5 IQR of the quartiles.
inline BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: empty series");
  std::sort(values.begin(), values.end());
  const auto quantile = [&values](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
  };
  BoxStats s;
  s.q1 = quantile(0.25);
  s.q2 = quantile(0.5);
  s.q3 = quantile(0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_limit = s.q1 - 1.5 * iqr;
  const double hi_limit = s.q3 + 1.5 * iqr;
  s.whisker_lo = s.q3;
  s.whisker_hi = s.q1;
  for (double v : values) {
    if (v >= lo_limit) {
      s.whisker_lo = v;
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= hi_limit) {
      s.whisker_hi = *it;
      break;
    }
  }
  return s;
}

/// Speed factor kappa = 1 / (t_F[s] * f). kappa > 1 means the pipeline keeps
/// up with the input frame rate.
inline double speed_factor(double t_frame_ms, double rate_hz) {
  if (!(t_frame_ms > 0.0) || !(rate_hz > 0.0))
    throw std::invalid_argument("speed_factor: t_F and f must be positive");
  return 1.0 / (t_frame_ms * 1e-3 * rate_hz);
}

/// Fraction of processed frames promoted to keyframes.
inline double keyframe_ratio(size_t keyframes, size_t frames_processed) {
  if (frames_processed == 0) throw std::invalid_argument("keyframe_ratio: no frames processed");
  return static_cast<double>(keyframes) / static_cast<double>(frames_processed);
}

/// Aggregated evaluation output, the content of the stats CSV.
struct EvalReport {
  ErrorSeries series;
  BoxStats stats;
  double lambda = 1.0;                                     ///< recovered alignment scale
  double t_frame_ms = std::numeric_limits<double>::quiet_NaN();
  double kf_ratio = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
};

/// Full alignment pipeline: synchronize, fit the similarity, map the estimate,
/// compute errors and distribution statistics.
inline EvalReport evaluate_trajectories(const Trajectory& gt, const Trajectory& est, double tau) {
  auto [gt_sync, est_sync] = synchronize(gt, est, tau);
  const SimilarityTransform s = align_similarity(gt_sync, est_sync);
  const Trajectory est_aligned = apply_similarity(s, est_sync);
  EvalReport report;
  report.series = relative_errors(gt_sync, est_aligned);
  report.stats = box_stats(report.series.epsilon);
  report.lambda = s.scale;
  return report;
}

/// Half the shorter median inter-sample period: guarantees at most one
/// candidate per sample when no tau is given explicitly.
inline double default_sync_tau(const Trajectory& a, const Trajectory& b) {
  const auto median_period = [](const Trajectory& t) {
    if (t.size() < 2) return 0.0;
    std::vector<double> diffs;
    diffs.reserve(t.size() - 1);
    for (size_t i = 1; i < t.size(); ++i)
      diffs.push_back(t[i].timestamp - t[i - 1].timestamp);
    std::sort(diffs.begin(), diffs.end());
    return diffs[diffs.size() / 2];
  };
  const double pa = median_period(a);
  const double pb = median_period(b);
  const double shorter = std::min(pa > 0.0 ? pa : 1.0, pb > 0.0 ? pb : 1.0);
  return 0.5 * shorter;
}

}  // namespace ceilvo
