#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "ceilvo/simulator.hpp"

using namespace ceilvo;
namespace fs = std::filesystem;

namespace {

// Independent square-path oracle: headings 0, 90, 180, 270 degrees, in-place
// turns at the corners; position by plain segment bookkeeping.
Vec3 square_position_oracle(double t, double side, double v, double w, double mount) {
  const double drive = side / v;
  const double turn = (M_PI / 2.0) / w;
  // clang-format off
  const double corners[4][2] = {{0, 0}, {side, 0}, {side, side}, {0, side}};
  const double headings[4] = {0.0, M_PI / 2.0, M_PI, 3.0 * M_PI / 2.0};
  // clang-format on
  for (int leg = 0; leg < 4; ++leg) {
    if (t < drive) {
      const double s = v * t;
      return Vec3(corners[leg][0] + s * std::cos(headings[leg]),
                  corners[leg][1] + s * std::sin(headings[leg]), mount);
    }
    t -= drive;
    if (t < turn) {
      const int next = (leg + 1) % 4;
      return Vec3(corners[next][0], corners[next][1], mount);
    }
    t -= turn;
  }
  return Vec3(0, 0, mount);
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ceilvo_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("square trajectory sampling, closure and the arc-length oracle") {
  MotionSpec spec;
  spec.kind = MotionSpec::Path::Square;
  spec.side = 4.0;
  spec.linear_speed = 1.0;
  spec.angular_speed = 0.9;
  const Trajectory traj = generate_trajectory(spec, 30.0);

  const double total = 4.0 * (4.0 / 1.0) + 4.0 * (M_PI / 2.0) / 0.9;
  const long expected = static_cast<long>(std::ceil(total * 30.0 - 1e-9));
  CHECK(static_cast<long>(traj.size()) == expected);
  CHECK(expected > 4 * 4 * 30);  // 480 straight-drive samples plus turn samples

  // Start equals end position: the final samples sit in the last in-place turn.
  CHECK((traj.samples.front().position - traj.samples.back().position).norm() < 1e-9);

  for (size_t i = 0; i < traj.size(); i += 7) {
    const Vec3 expected_pos =
        square_position_oracle(traj[i].timestamp, 4.0, 1.0, 0.9, spec.mount_height);
    CHECK((traj[i].position - expected_pos).norm() < 1e-9);
  }

  // Planarity: constant height, yaw-only quaternions.
  for (const auto& s : traj.samples) {
    CHECK(s.position.z() == Catch::Approx(spec.mount_height));
    CHECK(std::abs(s.orientation.x()) < 1e-12);
    CHECK(std::abs(s.orientation.y()) < 1e-12);
  }
}

TEST_CASE("zero duration yields a single pose at the origin") {
  MotionSpec spec;
  spec.duration = 0.0;
  const Trajectory traj = generate_trajectory(spec, 30.0);
  REQUIRE(traj.size() == 1);
  CHECK(traj[0].position.head<2>().norm() == 0.0);
}

TEST_CASE("speed bound is enforced") {
  MotionSpec spec;
  spec.linear_speed = 2.0;
  CHECK_THROWS_AS(generate_trajectory(spec, 30.0), std::invalid_argument);
}

TEST_CASE("constant ceiling renders to a constant image") {
  TexturedPlane plane;
  plane.point = Vec3(0, 0, 5.0);
  plane.normal = Vec3(0, 0, -1);
  plane.texture = Image(16, 16, 137.0f);
  plane.texels_per_meter = 4.0;
  plane.texture_origin = Vec2(-2.0, -2.0);
  const CeilingScene scene({plane}, 5.0, 5.0);

  const Intrinsics K(100.0, 100.0, 40.0, 30.0, 80, 60);
  const Pose camera(Mat3::Identity(), Vec3(0, 0, 0.5));
  const RenderResult r = render_frame(scene, camera, K, 0.0);
  CHECK(r.miss_fraction == 0.0);
  for (float v : r.image.data()) CHECK(v == Catch::Approx(137.0));
}

TEST_CASE("renders are photo-consistent across poses") {
  // At the default sensor mode; the 0.5 bound is what the backend's
  // zero-residual ground-truth checks lean on.
  const CeilingScene scene = CeilingScene::flat(5.0, 77, 9.0);
  const Intrinsics K(400.0, 400.0, 424.0, 240.0, 848, 480);
  const Pose cam_a(Mat3::Identity(), Vec3(0.0, 0.0, 0.5));
  const Pose cam_b(Eigen::AngleAxisd(0.2, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.4, -0.3, 0.5));
  const Image img_a = render_frame(scene, cam_a, K, 0.0).image;
  const Image img_b = render_frame(scene, cam_b, K, 0.0).image;

  // Oracle: intersect rays directly, compare both observations of the same
  // world point (and the scene's own intensity there).
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> px(20.0, 827.0), py(20.0, 459.0);
  int checked = 0;
  for (int i = 0; i < 400; ++i) {
    const Vec2 p_a(px(rng), py(rng));
    const Vec3 dir = cam_a.rotation() * Vec3((p_a.x() - K.cx) / K.fx, (p_a.y() - K.cy) / K.fy, 1.0);
    const RayHit hit = scene.intersect(cam_a.translation(), dir);
    REQUIRE(hit.hit);
    const Vec3 in_b = cam_b.rotation().transpose() * (hit.point - cam_b.translation());
    if (!(in_b.z() > 0.1)) continue;
    const Vec2 p_b(K.fx * in_b.x() / in_b.z() + K.cx, K.fy * in_b.y() / in_b.z() + K.cy);
    if (!in_image(K, p_b, 2.0)) continue;
    ++checked;
    const double i_a = img_a.sample(p_a.x(), p_a.y());
    const double i_b = img_b.sample(p_b.x(), p_b.y());
    CHECK(std::abs(i_a - i_b) < 0.5);
  }
  CHECK(checked > 100);
}

TEST_CASE("pure yaw renders a rotated image") {
  const CeilingScene scene = CeilingScene::flat(5.0, 31, 9.0);
  const Intrinsics K(400.0, 400.0, 424.0, 240.0, 848, 480);
  const double yaw = 0.3;
  const Pose cam_a(Mat3::Identity(), Vec3(0.2, 0.1, 0.5));
  const Pose cam_b(Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), cam_a.translation());
  const Image img_a = render_frame(scene, cam_a, K, 0.0).image;
  const Image img_b = render_frame(scene, cam_b, K, 0.0).image;

  double worst = 0.0, sum = 0.0;
  int n = 0;
  for (int y = 10; y < 470; y += 7) {
    for (int x = 10; x < 838; x += 7) {
      // Pixel p in the yawed camera sees what the original camera saw at
      // R(yaw) (p - c) + c.
      const double dx = x - K.cx, dy = y - K.cy;
      const double rx = std::cos(yaw) * dx - std::sin(yaw) * dy + K.cx;
      const double ry = std::sin(yaw) * dx + std::cos(yaw) * dy + K.cy;
      if (rx < 2 || ry < 2 || rx > K.width - 3 || ry > K.height - 3) continue;
      const double err = std::abs(img_b.at(x, y) - img_a.sample(rx, ry));
      worst = std::max(worst, err);
      sum += err;
      ++n;
    }
  }
  REQUIRE(n > 500);
  CHECK(sum / n < 0.5);
  CHECK(worst < 3.0);  // bilinear interpolation error bound on noise texture
}

TEST_CASE("downward camera is rejected") {
  const CeilingScene scene = CeilingScene::flat(5.0, 1, 4.0);
  const Intrinsics K(100.0, 100.0, 40.0, 30.0, 80, 60);
  Mat3 down = Eigen::AngleAxisd(M_PI, Vec3::UnitX()).toRotationMatrix();
  CHECK_THROWS_AS(render_frame(scene, Pose(down, Vec3(0, 0, 0.5)), K, 0.0),
                  std::invalid_argument);
}

TEST_CASE("inclined scenes cover every upward ray within the extent") {
  const CeilingScene scene = CeilingScene::inclined(4.0, 6.0, 5, 10.0);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> xy(-3.0, 3.0), dxy(-0.8, 0.8);
  for (int i = 0; i < 500; ++i) {
    const Vec3 origin(xy(rng), xy(rng), 0.5);
    const Vec3 dir(dxy(rng), dxy(rng), 1.0);
    const RayHit hit = scene.intersect(origin, dir);
    REQUIRE(hit.hit);
    CHECK(hit.point.z() >= 4.0 - 1e-9);
    CHECK(hit.point.z() <= 6.0 + 1e-9);
  }
}

TEST_CASE("true depth oracle agrees with the plane geometry") {
  const CeilingScene scene = CeilingScene::flat(5.0, 2, 6.0);
  const Intrinsics K(100.0, 100.0, 40.0, 30.0, 80, 60);
  const Pose cam(Mat3::Identity(), Vec3(0.3, -0.2, 0.5));
  // Flat ceiling at 5 m, camera at 0.5 m: depth along the optical axis is 4.5.
  CHECK(true_depth_at(scene, cam, K, Vec2(40.0, 30.0)) == Catch::Approx(4.5).margin(1e-9));
  CHECK(true_depth_at(scene, cam, K, Vec2(10.0, 50.0)) == Catch::Approx(4.5).margin(1e-9));
}

TEST_CASE("emit_dataset writes the expected layout and counts") {
  const fs::path dir = temp_dir("emit");
  MotionSpec spec;
  spec.kind = MotionSpec::Path::Square;
  spec.side = 4.0;
  spec.duration = 10.0;
  const CeilingScene scene = CeilingScene::flat(5.0, 123, 9.0);
  DatasetOptions opt;
  opt.noise_sigma = 0.5;
  opt.seed = 123;
  emit_dataset(scene, spec, 30.0, 424, 240, dir, opt);

  CHECK(fs::exists(dir / "camera.txt"));
  CHECK(fs::exists(dir / "times.txt"));
  CHECK(fs::exists(dir / "groundtruth.txt"));
  size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    (void)e;
    ++images;
  }
  CHECK(images == 300);
  size_t lines = 0;
  std::ifstream times(dir / "times.txt");
  std::string line;
  while (std::getline(times, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 300);
  fs::remove_all(dir);
}

TEST_CASE("half-size emission halves the intrinsics exactly") {
  const fs::path full_dir = temp_dir("emit_full");
  const fs::path half_dir = temp_dir("emit_half");
  MotionSpec spec;
  spec.duration = 0.2;
  const CeilingScene scene = CeilingScene::flat(5.0, 5, 9.0);
  emit_dataset(scene, spec, 10.0, 848, 480, full_dir);
  emit_dataset(scene, spec, 10.0, 424, 240, half_dir);

  const Intrinsics full = read_camera_file(full_dir / "camera.txt");
  const Intrinsics half = read_camera_file(half_dir / "camera.txt");
  CHECK(half.fx == Catch::Approx(full.fx / 2.0).margin(0));
  CHECK(half.fy == Catch::Approx(full.fy / 2.0).margin(0));
  CHECK(half.cx == Catch::Approx(full.cx / 2.0).margin(0));
  CHECK(half.cy == Catch::Approx(full.cy / 2.0).margin(0));
  CHECK(half.width * 2 == full.width);
  fs::remove_all(full_dir);
  fs::remove_all(half_dir);
}

TEST_CASE("same seed reproduces a byte-identical dataset") {
  const fs::path dir_a = temp_dir("det_a");
  const fs::path dir_b = temp_dir("det_b");
  MotionSpec spec;
  spec.duration = 1.0;
  const CeilingScene scene = CeilingScene::flat(4.5, 42, 9.0);
  DatasetOptions opt;
  opt.seed = 7;
  opt.noise_sigma = 1.0;
  emit_dataset(scene, spec, 6.0, 848, 480, dir_a, opt);
  emit_dataset(scene, spec, 6.0, 848, 480, dir_b, opt);

  for (const auto& name : {"camera.txt", "times.txt", "groundtruth.txt"})
    CHECK(slurp(dir_a / name) == slurp(dir_b / name));
  for (const auto& e : fs::directory_iterator(dir_a / "images")) {
    CHECK(slurp(e.path()) == slurp(dir_b / "images" / e.path().filename()));
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("unsupported emission sizes are rejected") {
  MotionSpec spec;
  spec.duration = 0.1;
  const CeilingScene scene = CeilingScene::flat(5.0, 3, 6.0);
  CHECK_THROWS_AS(emit_dataset(scene, spec, 10.0, 640, 480, temp_dir("bad")),
                  std::invalid_argument);
}
