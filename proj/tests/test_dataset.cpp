#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "ceilvo/dataset.hpp"
#include "ceilvo/png_io.hpp"
#include "ceilvo/trajectory.hpp"

using namespace ceilvo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ceilvo_ds_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_minimal_dataset(const fs::path& dir, int frames = 5, bool with_exposure = false) {
  fs::create_directories(dir / "images");
  write_camera_file(dir / "camera.txt", Intrinsics(100.0, 100.0, 16.0, 12.0, 32, 24));
  std::ofstream times(dir / "times.txt");
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> px(0, 255);
  for (int i = 0; i < frames; ++i) {
    Image img(32, 24);
    for (float& v : img.data()) v = static_cast<float>(px(rng));
    write_gray_png(dir / "images" / frame_image_name(i), img);
    times << frame_image_name(i).substr(0, 6) << ' ' << (0.1 * i);
    if (with_exposure) times << " 5.0";
    times << '\n';
  }
}

}  // namespace

TEST_CASE("PNG round trip preserves 8-bit grayscale content") {
  const fs::path dir = scratch("png");
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> px(0, 255);
  for (int trial = 0; trial < 3; ++trial) {
    Image img(33, 17);  // odd sizes on purpose
    for (float& v : img.data()) v = static_cast<float>(px(rng));
    write_gray_png(dir / "t.png", img);
    const Image back = read_gray_png(dir / "t.png");
    REQUIRE(back.width() == img.width());
    REQUIRE(back.height() == img.height());
    for (size_t i = 0; i < img.size(); ++i) CHECK(back.data()[i] == img.data()[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("PNG writer clamps and rounds") {
  const fs::path dir = scratch("pngclamp");
  Image img(4, 1);
  img.at(0, 0) = -5.0f;
  img.at(1, 0) = 300.0f;
  img.at(2, 0) = 127.4f;
  img.at(3, 0) = 127.6f;
  write_gray_png(dir / "t.png", img);
  const Image back = read_gray_png(dir / "t.png");
  CHECK(back.at(0, 0) == 0.0f);
  CHECK(back.at(1, 0) == 255.0f);
  CHECK(back.at(2, 0) == 127.0f);
  CHECK(back.at(3, 0) == 128.0f);
  fs::remove_all(dir);
}

TEST_CASE("PGM vignette parsing (P2 and P5)") {
  const fs::path dir = scratch("pgm");
  {
    std::ofstream out(dir / "v.pgm");
    out << "P2\n# comment\n2 2\n255\n255 128\n64 255\n";
  }
  const Image p2 = read_pgm_normalized(dir / "v.pgm");
  CHECK(p2.at(0, 0) == Catch::Approx(1.0));
  CHECK(p2.at(1, 0) == Catch::Approx(128.0 / 255.0));
  CHECK(p2.at(0, 1) == Catch::Approx(64.0 / 255.0));
  {
    std::ofstream out(dir / "v5.pgm", std::ios::binary);
    out << "P5\n2 1\n255\n";
    const unsigned char bytes[2] = {255, 51};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
  const Image p5 = read_pgm_normalized(dir / "v5.pgm");
  CHECK(p5.at(0, 0) == Catch::Approx(1.0));
  CHECK(p5.at(1, 0) == Catch::Approx(0.2));
  fs::remove_all(dir);
}

TEST_CASE("dataset open validates its pieces") {
  SECTION("missing directory") {
    CHECK_THROWS_AS(Dataset::open("/nonexistent/nowhere"), DataError);
  }
  SECTION("well-formed dataset without exposure") {
    const fs::path dir = scratch("ok");
    write_minimal_dataset(dir);
    const Dataset ds = Dataset::open(dir);
    CHECK(ds.frames().size() == 5);
    CHECK_FALSE(ds.frames()[0].has_exposure);
    CHECK(ds.frames()[0].exposure_s == 1.0);
    CHECK(ds.calibration().is_identity());
    const Image img = ds.load_image(2);
    CHECK(img.width() == 32);
    fs::remove_all(dir);
  }
  SECTION("exposure column in milliseconds") {
    const fs::path dir = scratch("exposure");
    write_minimal_dataset(dir, 3, true);
    const Dataset ds = Dataset::open(dir);
    CHECK(ds.frames()[1].has_exposure);
    CHECK(ds.frames()[1].exposure_s == Catch::Approx(0.005));
    fs::remove_all(dir);
  }
  SECTION("malformed camera file") {
    const fs::path dir = scratch("badcam");
    write_minimal_dataset(dir);
    std::ofstream(dir / "camera.txt") << "only two 2\n";
    CHECK_THROWS_AS(Dataset::open(dir), DataError);
    fs::remove_all(dir);
  }
  SECTION("non-increasing timestamps") {
    const fs::path dir = scratch("badtimes");
    write_minimal_dataset(dir);
    std::ofstream(dir / "times.txt") << "000000 0.2\n000001 0.1\n";
    CHECK_THROWS_AS(Dataset::open(dir), DataError);
    fs::remove_all(dir);
  }
  SECTION("photometric files are picked up") {
    const fs::path dir = scratch("pcalib");
    write_minimal_dataset(dir);
    {
      std::ofstream pc(dir / "pcalib.txt");
      for (int i = 0; i < 256; ++i) pc << 255.0 * std::pow(i / 255.0, 2.2) << ' ';
    }
    {
      std::ofstream out(dir / "vignette.pgm");
      out << "P2\n32 24\n255\n";
      for (int i = 0; i < 32 * 24; ++i) out << "255 ";
    }
    const Dataset ds = Dataset::open(dir);
    CHECK_FALSE(ds.calibration().is_identity());
    CHECK(ds.calibration().inverse_response(255.0 * std::pow(0.5, 2.2)) ==
          Catch::Approx(127.5).margin(1.0));
    fs::remove_all(dir);
  }
}

TEST_CASE("trajectory file round trip") {
  const fs::path dir = scratch("traj");
  Trajectory t;
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 25; ++i) {
    Eigen::Quaterniond q(Eigen::AngleAxisd(u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()));
    t.push(0.1 * i, Vec3(u(rng), u(rng), u(rng)), q);
  }
  write_trajectory(dir / "t.txt", t);
  const Trajectory back = read_trajectory(dir / "t.txt");
  REQUIRE(back.size() == t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    CHECK(std::abs(back[i].timestamp - t[i].timestamp) < 1e-8);
    CHECK((back[i].position - t[i].position).norm() < 1e-6);
    // Quaternion comparison up to sign.
    const double dot = std::abs(back[i].orientation.coeffs().dot(t[i].orientation.coeffs()));
    CHECK(dot == Catch::Approx(1.0).margin(1e-7));
  }

  // Writing what was read back reproduces the bytes (canonical formatting).
  write_trajectory(dir / "t2.txt", back);
  std::ifstream a(dir / "t.txt"), b(dir / "t2.txt");
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  fs::remove_all(dir);
}

TEST_CASE("malformed trajectory files are rejected") {
  const fs::path dir = scratch("badtraj");
  std::ofstream(dir / "bad.txt") << "0.0 1 2 3 0 0 0\n";  // missing qw
  CHECK_THROWS_AS(read_trajectory(dir / "bad.txt"), DataError);
  std::ofstream(dir / "bad2.txt") << "0.0 1 2 3 0 0 0 9\n0.0 1 2 3 0 0 0 1\n";
  CHECK_THROWS_AS(read_trajectory(dir / "bad2.txt"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("decimation picks nearest-period frames") {
  SECTION("30 to 15 keeps every second frame") {
    std::vector<double> ts;
    for (int i = 0; i < 30; ++i) ts.push_back(i / 30.0);
    const auto sel = decimate_indices(ts, 15.0);
    REQUIRE(sel.size() == 15);
    for (size_t i = 0; i < sel.size(); ++i) CHECK(sel[i] == 2 * i);
  }
  SECTION("same rate keeps everything") {
    std::vector<double> ts;
    for (int i = 0; i < 20; ++i) ts.push_back(i / 30.0);
    const auto sel = decimate_indices(ts, 30.0);
    CHECK(sel.size() == 20);
  }
  SECTION("selected timestamps stay within half a source period of the grid (property)") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> jitter(-0.002, 0.002);
    for (double fps : {3.0, 6.0, 15.0}) {
      std::vector<double> ts;
      for (int i = 0; i < 200; ++i) ts.push_back(i / 30.0 + jitter(rng));
      std::sort(ts.begin(), ts.end());
      const auto sel = decimate_indices(ts, fps);
      REQUIRE(!sel.empty());
      const double source_period = 1.0 / 30.0 + 0.004;
      for (size_t k = 0; k < sel.size(); ++k) {
        // Each selected frame is near its own ideal grid slot.
        const double target = ts.front() + std::round((ts[sel[k]] - ts.front()) * fps) / fps;
        CHECK(std::abs(ts[sel[k]] - target) < 0.5 * source_period);
      }
      for (size_t k = 1; k < sel.size(); ++k) CHECK(sel[k] > sel[k - 1]);
    }
  }
}
