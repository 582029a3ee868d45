#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ceilvo/backend.hpp"
#include "ceilvo/simulator.hpp"
#include "test_helpers.hpp"

using namespace ceilvo;
using namespace ceilvo::testutil;

namespace {

struct FdCheck {
  double max_rel = 0.0;
  int compared = 0;

  void add(double analytic, double fd) {
    const double rel = std::abs(fd - analytic) / std::max({1.0, std::abs(analytic), std::abs(fd)});
    max_rel = std::max(max_rel, rel);
    ++compared;
  }
};

struct ResidualConfig {
  Keyframe host, target;
  PointState point;
  Intrinsics K = small_camera();
  BackendConfig cfg;
};

ResidualConfig random_residual_config(std::mt19937& rng, bool with_intrinsics) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> d_dist(0.25, 1.6);
  std::uniform_real_distribution<double> px(14.0, 145.0), py(14.0, 105.0);
  std::uniform_real_distribution<double> exp_dist(0.5, 2.0);

  ResidualConfig rc;
  rc.cfg.optimize_intrinsics = with_intrinsics;
  rc.K = Intrinsics(140.0 + 10.0 * u(rng), 140.0 + 10.0 * u(rng), 80.0 + 2.0 * u(rng),
                    60.0 + 2.0 * u(rng), 160, 120);

  const auto make_kf = [&](int id, std::uint64_t tex_seed, const Twist& xi) {
    Keyframe kf;
    kf.id = id;
    Image tex = make_noise_texture(160, tex_seed);
    // Crop to camera height.
    Image img(160, 120);
    for (int y = 0; y < 120; ++y)
      for (int x = 0; x < 160; ++x) img.at(x, y) = tex.at(x, y + 20);
    kf.frame = frame_from_image(std::move(img), 0.0, exp_dist(rng), 1, id);
    kf.pose = exp(xi);
    kf.affine.a = 0.3 * u(rng);
    kf.affine.b = 10.0 * u(rng);
    return kf;
  };

  Twist xi_host, xi_target;
  xi_host << 0.3 * u(rng), 0.3 * u(rng), 0.1 * u(rng), 0.05 * u(rng), 0.05 * u(rng), 0.3 * u(rng);
  xi_target = xi_host;
  for (int i = 0; i < 6; ++i) xi_target(i) += (i < 3 ? 0.08 : 0.03) * u(rng);

  rc.host = make_kf(0, rng(), xi_host);
  rc.target = make_kf(1, rng(), xi_target);
  rc.point.pixel = Vec2(px(rng), py(rng));
  rc.point.inv_depth = d_dist(rng);
  return rc;
}

// One full central-difference pass over every parameter block of a residual.
bool check_jacobians_fd(const ResidualConfig& rc, FdCheck& check, double h = 1e-6) {
  const ResidualEval base =
      evaluate_residual(rc.point, rc.host, rc.target, rc.K, rc.cfg, /*with_jacobians=*/true);
  if (base.valid_count != base.count) return false;  // needs full-pattern visibility

  const auto eval_r = [&](const Keyframe& host, const Keyframe& target, const PointState& pt,
                          const Intrinsics& K) {
    return evaluate_residual(pt, host, target, K, rc.cfg, false);
  };
  const auto fd_ok = [&](const ResidualEval& plus, const ResidualEval& minus) {
    return plus.valid_count == base.count && minus.valid_count == base.count;
  };

  for (int axis = 0; axis < 6; ++axis) {
    Twist step = Twist::Zero();
    step(axis) = h;
    Keyframe hp = rc.host, hm = rc.host;
    hp.pose = left_oplus(step, rc.host.pose);
    hm.pose = left_oplus(-step, rc.host.pose);
    const ResidualEval rp = eval_r(hp, rc.target, rc.point, rc.K);
    const ResidualEval rm = eval_r(hm, rc.target, rc.point, rc.K);
    if (!fd_ok(rp, rm)) return false;
    for (int k = 0; k < base.count; ++k)
      check.add(base.J_host_pose[k](0, axis), (rp.r[k] - rm.r[k]) / (2.0 * h));

    Keyframe tp = rc.target, tm = rc.target;
    tp.pose = left_oplus(step, rc.target.pose);
    tm.pose = left_oplus(-step, rc.target.pose);
    const ResidualEval sp = eval_r(rc.host, tp, rc.point, rc.K);
    const ResidualEval sm = eval_r(rc.host, tm, rc.point, rc.K);
    if (!fd_ok(sp, sm)) return false;
    for (int k = 0; k < base.count; ++k)
      check.add(base.J_target_pose[k](0, axis), (sp.r[k] - sm.r[k]) / (2.0 * h));
  }

  {
    PointState pp = rc.point, pm = rc.point;
    pp.inv_depth += h;
    pm.inv_depth -= h;
    const ResidualEval rp = eval_r(rc.host, rc.target, pp, rc.K);
    const ResidualEval rm = eval_r(rc.host, rc.target, pm, rc.K);
    if (!fd_ok(rp, rm)) return false;
    for (int k = 0; k < base.count; ++k)
      check.add(base.J_inv_depth[k], (rp.r[k] - rm.r[k]) / (2.0 * h));
  }

  const auto affine_fd = [&](bool host_side, bool is_a, const auto& analytic) {
    Keyframe plus = host_side ? rc.host : rc.target;
    Keyframe minus = plus;
    (is_a ? plus.affine.a : plus.affine.b) += h;
    (is_a ? minus.affine.a : minus.affine.b) -= h;
    const ResidualEval rp =
        host_side ? eval_r(plus, rc.target, rc.point, rc.K) : eval_r(rc.host, plus, rc.point, rc.K);
    const ResidualEval rm = host_side ? eval_r(minus, rc.target, rc.point, rc.K)
                                      : eval_r(rc.host, minus, rc.point, rc.K);
    if (!fd_ok(rp, rm)) return false;
    for (int k = 0; k < base.count; ++k) check.add(analytic[k], (rp.r[k] - rm.r[k]) / (2.0 * h));
    return true;
  };
  if (!affine_fd(true, true, base.J_a_host)) return false;
  if (!affine_fd(true, false, base.J_b_host)) return false;
  if (!affine_fd(false, true, base.J_a_target)) return false;
  if (!affine_fd(false, false, base.J_b_target)) return false;

  if (rc.cfg.optimize_intrinsics) {
    for (int axis = 0; axis < 4; ++axis) {
      double params[4] = {rc.K.fx, rc.K.fy, rc.K.cx, rc.K.cy};
      params[axis] += h;
      const Intrinsics Kp(params[0], params[1], params[2], params[3], rc.K.width, rc.K.height);
      params[axis] -= 2.0 * h;
      const Intrinsics Km(params[0], params[1], params[2], params[3], rc.K.width, rc.K.height);
      const ResidualEval rp = eval_r(rc.host, rc.target, rc.point, Kp);
      const ResidualEval rm = eval_r(rc.host, rc.target, rc.point, Km);
      if (!fd_ok(rp, rm)) return false;
      for (int k = 0; k < base.count; ++k)
        check.add(base.J_intrinsics[k](0, axis), (rp.r[k] - rm.r[k]) / (2.0 * h));
    }
  }
  return true;
}

WindowState colocated_window(int n) {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 404, 9.0);
  std::vector<Pose> poses(n, Pose(Mat3::Identity(), Vec3(0, 0, 0.5)));
  return build_gt_window(scene, K, poses);
}

}  // namespace

TEST_CASE("huber norm values") {
  CHECK(huber_norm(0.0, 1.0) == 0.0);
  CHECK(huber_norm(0.5, 1.0) == Catch::Approx(0.125));
  CHECK(huber_norm(2.0, 1.0) == Catch::Approx(1.5));
  CHECK(huber_norm(-2.0, 1.0) == Catch::Approx(1.5));
  CHECK_THROWS_AS(huber_norm(1.0, 0.0), std::domain_error);
  // Continuity at the quadratic/linear boundary.
  CHECK(huber_norm(1.0 - 1e-12, 1.0) == Catch::Approx(huber_norm(1.0 + 1e-12, 1.0)).margin(1e-9));
}

TEST_CASE("gradient weight values") {
  CHECK(gradient_weight(Vec2(0, 0), 50.0) == 1.0);
  CHECK(gradient_weight(Vec2(50, 0), 50.0) == Catch::Approx(0.5));
  CHECK(gradient_weight(Vec2(30, 40), 50.0) == Catch::Approx(0.5));
  CHECK_THROWS_AS(gradient_weight(Vec2(1, 1), 0.0), std::domain_error);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> g(-200.0, 200.0);
  for (int i = 0; i < 100; ++i) {
    const double w = gradient_weight(Vec2(g(rng), g(rng)), 50.0);
    CHECK(w > 0.0);
    CHECK(w <= 1.0);
  }
}

TEST_CASE("residuals vanish for a co-located duplicate keyframe") {
  const WindowState window = colocated_window(2);
  const BackendConfig cfg;
  for (const auto& pt : window.keyframes[0].points) {
    const ResidualEval eval =
        evaluate_residual(pt, window.keyframes[0], window.keyframes[1], window.intrinsics, cfg, true);
    for (int k = 0; k < eval.count; ++k) {
      if (!eval.valid[k]) continue;
      CHECK(std::abs(eval.r[k]) < 1e-9);  // projection round-trip noise only
    }
  }
}

TEST_CASE("ground-truth residuals stay under the interpolation noise floor") {
  const Intrinsics K = full_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 2024, 9.0);
  const WindowState window =
      build_gt_window(scene, K, {offset_pose(0), offset_pose(1)}, /*grid_step=*/24);
  const BackendConfig cfg;
  int checked = 0;
  for (const auto& pt : window.keyframes[0].points) {
    const ResidualEval eval = evaluate_residual(pt, window.keyframes[0], window.keyframes[1],
                                                window.intrinsics, cfg, false);
    for (int k = 0; k < eval.count; ++k) {
      if (!eval.valid[k]) continue;
      CHECK(std::abs(eval.r[k]) < 1.0);
      ++checked;
    }
  }
  CHECK(checked > 200);
}

TEST_CASE("points behind the target camera are fully masked") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 11, 9.0);
  WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1)});
  // Move the target camera above the ceiling: every point lands behind it.
  window.keyframes[1].pose = Pose(Mat3::Identity(), Vec3(0, 0, 6.0));
  const BackendConfig cfg;
  for (const auto& pt : window.keyframes[0].points) {
    const ResidualEval eval = evaluate_residual(pt, window.keyframes[0], window.keyframes[1],
                                                window.intrinsics, cfg, false);
    CHECK(eval.valid_count == 0);
  }
}

TEST_CASE("total energy of identical co-located keyframes is zero") {
  const WindowState window = colocated_window(3);
  CHECK(total_energy(window, 9.0, 50.0) < 1e-20);  // squared projection round-trip noise
}

TEST_CASE("total energy at ground truth sits below the noise-floor bound") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 99, 9.0);
  const WindowState window =
      build_gt_window(scene, K, {offset_pose(0), offset_pose(1), offset_pose(2)});
  const BackendConfig cfg;
  const GaussNewtonSystem sys = build_system(window, cfg);
  const double bound = 0.5 * static_cast<double>(sys.residual_count);  // n * w_max * huber(1.0)
  CHECK(total_energy(window, cfg) < bound);
}

TEST_CASE("perturbing one pose strictly increases the energy") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 7, 9.0);
  WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1)});
  const BackendConfig cfg;
  const double at_truth = total_energy(window, cfg);
  Twist nudge = Twist::Zero();
  nudge(0) = 0.01;  // 1 cm
  window.keyframes[1].pose = left_oplus(nudge, window.keyframes[1].pose);
  CHECK(total_energy(window, cfg) > at_truth);
}

TEST_CASE("zero-residual window has a vanishing gradient") {
  const WindowState window = colocated_window(2);
  const GaussNewtonSystem sys = build_system(window, BackendConfig{});
  CHECK(sys.b.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Gauss-Newton system is symmetric positive semidefinite") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 55, 9.0);
  WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1), offset_pose(2)});
  // Perturb so residuals and the Huber reweighting are non-trivial.
  Twist nudge;
  nudge << 0.02, -0.01, 0.005, 0.004, -0.003, 0.02;
  window.keyframes[2].pose = left_oplus(nudge, window.keyframes[2].pose);
  window.keyframes[1].affine.b = 4.0;

  const GaussNewtonSystem sys = build_system(window, BackendConfig{});
  CHECK((sys.H - sys.H.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  std::mt19937 rng(15);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(sys.dimension());
    for (int i = 0; i < x.size(); ++i) x(i) = n01(rng);
    CHECK(x.dot(sys.H * x) >= -1e-9 * x.squaredNorm());
  }
}

TEST_CASE("analytic Jacobians match central finite differences") {
  std::mt19937 rng(0x5eed);
  FdCheck check;
  int done = 0;
  while (done < 24) {
    const ResidualConfig rc = random_residual_config(rng, done % 3 == 0);
    if (check_jacobians_fd(rc, check)) ++done;
  }
  INFO("compared " << check.compared << " entries, max relative error " << check.max_rel);
  CHECK(check.compared > 2000);
  CHECK(check.max_rel < 1e-4);
}

TEST_CASE("optimize_window is a no-op at ground truth") {
  const Intrinsics K = full_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 321, 9.0);
  const WindowState window = build_gt_window(
      scene, K, {offset_pose(0), offset_pose(1), offset_pose(2), offset_pose(3), offset_pose(4)},
      /*grid_step=*/36);
  std::vector<Pose> initial;
  for (const auto& kf : window.keyframes) initial.push_back(kf.pose);

  const OptimizeResult result = optimize_window(window, BackendConfig{});
  REQUIRE(result.energy_trace.size() >= 2);
  CHECK(result.energy_trace.back() <= result.energy_trace.front() * (1.0 + 1e-9));

  for (size_t i = 0; i < initial.size(); ++i) {
    const Pose& after = result.window.keyframes[i].pose;
    CHECK((after.translation() - initial[i].translation()).norm() < 1e-3);  // < 1 mm
    CHECK(rotation_angle(initial[i].rotation(), after.rotation()) < 0.01 * M_PI / 180.0);
  }
}

TEST_CASE("optimize_window recovers a perturbed pose") {
  const Intrinsics K = full_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 888, 9.0);
  WindowState window = build_gt_window(
      scene, K, {offset_pose(0), offset_pose(1), offset_pose(2), offset_pose(3), offset_pose(4)},
      /*grid_step=*/36);
  const Pose truth = window.keyframes[2].pose;

  Twist nudge;
  const double angle = 0.5 * M_PI / 180.0;
  nudge << 0.005 * std::sqrt(1.0 / 3), 0.005 * std::sqrt(1.0 / 3), 0.005 * std::sqrt(1.0 / 3),
      angle * std::sqrt(1.0 / 3), angle * std::sqrt(1.0 / 3), angle * std::sqrt(1.0 / 3);
  window.keyframes[2].pose = left_oplus(nudge, truth);

  const OptimizeResult result = optimize_window(window, BackendConfig{});
  const Pose& recovered = result.window.keyframes[2].pose;
  CHECK((recovered.translation() - truth.translation()).norm() < 1e-3);
  CHECK(rotation_angle(truth.rotation(), recovered.rotation()) < 0.05 * M_PI / 180.0);
}

TEST_CASE("single-keyframe windows cannot be optimized") {
  WindowState window = colocated_window(1);
  CHECK_THROWS_AS(optimize_window(window, BackendConfig{}), NumericalError);
  CHECK_THROWS_AS(build_system(window, BackendConfig{}), NumericalError);
}

TEST_CASE("energy trace is non-increasing from a perturbed start") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 31, 9.0);
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1), offset_pose(2)},
                                         /*grid_step=*/20);
    for (size_t k = 1; k < window.keyframes.size(); ++k) {
      Twist nudge;
      nudge << 0.01 * u(rng), 0.01 * u(rng), 0.004 * u(rng), 0.002 * u(rng), 0.002 * u(rng),
          0.01 * u(rng);
      window.keyframes[k].pose = left_oplus(nudge, window.keyframes[k].pose);
      window.keyframes[k].affine.b += 2.0 * u(rng);
    }
    const OptimizeResult result = optimize_window(window, BackendConfig{});
    for (size_t i = 1; i < result.energy_trace.size(); ++i) {
      CHECK(result.energy_trace[i] <=
            result.energy_trace[i - 1] * (1.0 + 1e-9) + 1e-12);
    }
  }
}

TEST_CASE("marginalization shrinks the window and drops hosted points") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 61, 9.0);
  WindowState window = build_gt_window(
      scene, K,
      {offset_pose(0), offset_pose(1), offset_pose(2), offset_pose(3), offset_pose(4)});
  const BackendConfig cfg;
  const size_t removed_points = window.keyframes.front().points.size();
  const int total_points = static_cast<int>(window.total_points());
  const std::vector<int> surviving_ids = {1, 2, 3, 4};

  const WindowState after = marginalize(window, 4, cfg);
  REQUIRE(after.keyframes.size() == 4);
  for (size_t i = 0; i < after.keyframes.size(); ++i) CHECK(after.keyframes[i].id == surviving_ids[i]);

  const GaussNewtonSystem sys = build_system(after, cfg);
  CHECK(sys.num_points == total_points - static_cast<int>(removed_points));
  CHECK(sys.dimension() == 8 * 4 + sys.num_points);

  // Energy over the survivors equals an independent brute-force accumulation.
  double brute = 0.0;
  for (size_t hi = 0; hi < after.keyframes.size(); ++hi) {
    for (const auto& pt : after.keyframes[hi].points) {
      for (size_t ti = 0; ti < after.keyframes.size(); ++ti) {
        if (ti == hi) continue;
        const ResidualEval eval =
            evaluate_residual(pt, after.keyframes[hi], after.keyframes[ti], after.intrinsics, cfg, false);
        for (int k = 0; k < eval.count; ++k) {
          if (!eval.valid[k]) continue;
          brute += eval.grad_weight[k] * huber_norm(eval.r[k], cfg.huber_gamma);
        }
      }
    }
  }
  CHECK(total_energy(after, cfg) == Catch::Approx(brute).epsilon(1e-12));
}

TEST_CASE("energy is invariant under a rigid world transform") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 123, 9.0);
  WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1), offset_pose(2)});
  Twist nudge;
  nudge << 0.01, -0.02, 0.004, 0.003, -0.002, 0.3;
  window.keyframes[1].pose = left_oplus(nudge, window.keyframes[1].pose);

  const BackendConfig cfg;
  const double original = total_energy(window, cfg);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Twist m;
    m << 3.0 * u(rng), 3.0 * u(rng), 3.0 * u(rng), u(rng), u(rng), u(rng);
    const Pose M = exp(m);
    WindowState moved = window;
    for (auto& kf : moved.keyframes) kf.pose = M * kf.pose;
    const double transformed = total_energy(moved, cfg);
    CHECK(std::abs(transformed - original) <= 1e-9 * std::max(1.0, original));
  }
}

TEST_CASE("residuals are invariant under the global brightness gauge") {
  const Intrinsics K = small_camera();
  const CeilingScene scene = CeilingScene::flat(5.0, 222, 9.0);
  WindowState window = build_gt_window(scene, K, {offset_pose(0), offset_pose(1)});
  window.keyframes[0].affine.b = 3.0;
  window.keyframes[1].affine.b = -2.0;

  const double shift = 16.0;
  WindowState shifted = window;
  for (auto& kf : shifted.keyframes) {
    Image img = kf.frame->level(0).intensity;
    for (float& v : img.data()) v += static_cast<float>(shift);
    kf.frame = frame_from_image(std::move(img), kf.frame->timestamp(), kf.frame->exposure(), 1,
                                kf.frame->index());
    kf.affine.b += shift;
  }

  const BackendConfig cfg;
  for (size_t pi = 0; pi < window.keyframes[0].points.size(); ++pi) {
    const ResidualEval a = evaluate_residual(window.keyframes[0].points[pi], window.keyframes[0],
                                             window.keyframes[1], K, cfg, false);
    const ResidualEval b = evaluate_residual(shifted.keyframes[0].points[pi], shifted.keyframes[0],
                                             shifted.keyframes[1], K, cfg, false);
    REQUIRE(a.valid_count == b.valid_count);
    for (int k = 0; k < a.count; ++k) {
      if (!a.valid[k]) continue;
      CHECK(b.r[k] == Catch::Approx(a.r[k]).margin(1e-3));  // float image storage
    }
  }
}
