// ceilvo command-line front end: synthesize datasets, run the odometry
// pipeline, evaluate trajectories, and sweep parameter grids.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ceilvo/dataset.hpp"
#include "ceilvo/evaluation.hpp"
#include "ceilvo/pipeline.hpp"
#include "ceilvo/simulator.hpp"
#include "ceilvo/svg.hpp"
#include "ceilvo/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct SizeOption {
  int width = 848;
  int height = 480;
};

SizeOption parse_size(const std::string& text) {
  if (text == "848x480") return {848, 480};
  if (text == "424x240") return {424, 240};
  throw CLI::ValidationError("--size", "must be 848x480 or 424x240");
}

ceilvo::CeilingScene build_scene(const std::string& ceiling, double height_min, double height_max,
                                 std::uint64_t seed, double half_extent, int lamps) {
  if (ceiling == "flat")
    return ceilvo::CeilingScene::flat(height_max, seed, half_extent, lamps);
  if (ceiling == "inclined")
    return ceilvo::CeilingScene::inclined(height_min, height_max, seed, half_extent, 0.0, lamps);
  throw CLI::ValidationError("--ceiling", "must be flat or inclined");
}

ceilvo::MotionSpec build_motion(const std::string& path_kind, double side, int loops,
                                double loop_radius, double speed, double angular_speed,
                                double duration) {
  ceilvo::MotionSpec spec;
  if (path_kind == "square")
    spec.kind = ceilvo::MotionSpec::Path::Square;
  else if (path_kind == "multi-loop")
    spec.kind = ceilvo::MotionSpec::Path::MultiLoop;
  else
    throw CLI::ValidationError("--path", "must be square or multi-loop");
  spec.side = side;
  spec.loops = loops;
  spec.loop_radius = loop_radius;
  spec.linear_speed = speed;
  spec.angular_speed = angular_speed;
  spec.duration = duration;
  return spec;
}

void write_runlog(const fs::path& path, const ceilvo::RunLog& log) {
  std::ofstream out(path);
  if (!out) throw ceilvo::DataError("cannot write run log: " + path.string());
  json config;
  config["type"] = "config";
  config["width"] = log.config.width;
  config["height"] = log.config.height;
  config["fps"] = log.config.fps;
  config["window"] = log.config.max_window;
  config["huber_gamma"] = log.config.huber_gamma;
  config["gradient_weight_c"] = log.config.gradient_weight_c;
  config["candidate_target"] = log.config.candidate_target;
  config["seed"] = log.config.seed;
  out << config.dump() << '\n';
  for (const auto& r : log.records) {
    json rec;
    rec["type"] = "frame";
    rec["index"] = r.index;
    rec["timestamp"] = r.timestamp;
    rec["wall_ms"] = r.wall_ms;
    rec["tracked"] = r.tracked;
    rec["keyframe"] = r.keyframe;
    rec["mean_residual"] = r.mean_residual;
    rec["warnings"] = r.warnings;
    out << rec.dump() << '\n';
  }
  json summary;
  summary["type"] = "summary";
  summary["frames_processed"] = log.frames_processed;
  summary["keyframes"] = log.keyframe_count;
  summary["warnings"] = log.warning_count;
  summary["mean_frame_ms"] = log.mean_frame_ms();
  summary["keyframe_ratio"] =
      log.frames_processed > 0
          ? ceilvo::keyframe_ratio(log.keyframe_count, log.frames_processed)
          : 0.0;
  out << summary.dump() << '\n';
}

void write_error_csv(const fs::path& path, const ceilvo::ErrorSeries& series) {
  std::ofstream out(path);
  if (!out) throw ceilvo::DataError("cannot write CSV: " + path.string());
  out << "distance_m,epsilon_m\n";
  char buf[96];
  for (size_t i = 0; i < series.distance.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", series.distance[i], series.epsilon[i]);
    out << buf;
  }
}

void write_stats_csv(const fs::path& path, const ceilvo::EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw ceilvo::DataError("cannot write CSV: " + path.string());
  out << "q1,q2,q3,whisker_lo,whisker_hi,t_f_ms,kf_ratio,kappa,lambda\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                report.stats.q1, report.stats.q2, report.stats.q3, report.stats.whisker_lo,
                report.stats.whisker_hi, report.t_frame_ms, report.kf_ratio, report.kappa,
                report.lambda);
  out << buf;
}

int run_sim(const std::string& out_dir, const SizeOption& size, double fps,
            const std::string& ceiling, double height_min, double height_max,
            const std::string& path_kind, double side, int loops, double loop_radius, double speed,
            double angular_speed, double duration, double noise, int lamps, std::uint64_t seed) {
  const ceilvo::MotionSpec motion =
      build_motion(path_kind, side, loops, loop_radius, speed, angular_speed, duration);

  // Texture extent: path bounding box plus the widest ceiling footprint.
  const ceilvo::Trajectory preview = ceilvo::generate_trajectory(motion, std::max(fps, 1.0));
  double reach = 1.0;
  for (const auto& s : preview.samples)
    reach = std::max({reach, std::abs(s.position.x()), std::abs(s.position.y())});
  const double half_extent = reach + height_max * 1.3;

  const ceilvo::CeilingScene scene =
      build_scene(ceiling, height_min, height_max, seed, half_extent, lamps);
  ceilvo::DatasetOptions options;
  options.noise_sigma = noise;
  options.seed = seed;
  ceilvo::emit_dataset(scene, motion, fps, size.width, size.height, out_dir, options);
  std::cout << "dataset written to " << out_dir << " (" << preview.size() << " frames)\n";
  return 0;
}

int run_run(const std::string& dataset_dir, const std::string& out_dir, const SizeOption& size,
            double fps, int window, std::uint64_t seed) {
  ceilvo::Dataset dataset = ceilvo::Dataset::open(dataset_dir);
  ceilvo::RunConfig config;
  config.width = size.width;
  config.height = size.height;
  config.fps = fps;
  config.max_window = window;
  config.seed = seed;

  const ceilvo::RunLog log = ceilvo::run_odometry(dataset, config);

  fs::create_directories(out_dir);
  ceilvo::write_trajectory(fs::path(out_dir) / "trajectory.txt", log.trajectory);
  write_runlog(fs::path(out_dir) / "runlog.jsonl", log);
  std::printf("processed %zu frames, %zu keyframes (ratio %.3f), mean %.2f ms/frame, %zu warnings\n",
              log.frames_processed, log.keyframe_count,
              log.frames_processed ? ceilvo::keyframe_ratio(log.keyframe_count, log.frames_processed)
                                   : 0.0,
              log.mean_frame_ms(), log.warning_count);
  return 0;
}

int run_eval(const std::string& gt_file, const std::string& est_file, const std::string& out_dir,
             double tau, double bin_width, bool plot, const std::string& runlog_file) {
  const ceilvo::Trajectory gt = ceilvo::read_trajectory(gt_file);
  const ceilvo::Trajectory est = ceilvo::read_trajectory(est_file);
  if (tau <= 0.0) tau = ceilvo::default_sync_tau(gt, est);

  ceilvo::EvalReport report = ceilvo::evaluate_trajectories(gt, est, tau);

  if (!runlog_file.empty()) {
    std::ifstream in(runlog_file);
    if (!in) throw ceilvo::DataError("cannot open run log: " + runlog_file);
    std::string line;
    double fps = 0.0;
    while (std::getline(in, line)) {
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;
      if (j.value("type", "") == "config") fps = j.value("fps", 0.0);
      if (j.value("type", "") == "summary") {
        report.t_frame_ms = j.value("mean_frame_ms", 0.0);
        report.kf_ratio = j.value("keyframe_ratio", 0.0);
        if (report.t_frame_ms > 0.0 && fps > 0.0)
          report.kappa = ceilvo::speed_factor(report.t_frame_ms, fps);
      }
    }
  }

  fs::create_directories(out_dir);
  write_error_csv(fs::path(out_dir) / "errors.csv", report.series);
  write_stats_csv(fs::path(out_dir) / "stats.csv", report);
  if (plot) {
    ceilvo::svg::write_error_curve(fs::path(out_dir) / "error_curve.svg", report.series);
    ceilvo::svg::write_box_plot(fs::path(out_dir) / "error_box.svg",
                                {{"relative error", report.stats}});
  }
  std::printf("pairs %zu, median epsilon %.4f m (Q1 %.4f, Q3 %.4f), lambda %.6g, tau %.4g s\n",
              report.series.epsilon.size(), report.stats.q2, report.stats.q1, report.stats.q3,
              report.lambda, tau);
  (void)bin_width;
  return 0;
}

struct SweepRow {
  std::string size;
  double fps = 0.0;
  int window = 0;
  bool ok = false;
  std::string error;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  double t_f_ms = 0.0, kf_ratio = 0.0, kappa = 0.0;
};

int run_sweep(const std::string& dataset_dir, const std::string& out_dir,
              std::vector<std::string> sizes, std::vector<double> fps_list,
              std::vector<int> windows, double tau) {
  ceilvo::Dataset dataset = ceilvo::Dataset::open(dataset_dir);
  if (!dataset.groundtruth_path())
    throw ceilvo::DataError("sweep requires groundtruth.txt in the dataset");
  const ceilvo::Trajectory gt = ceilvo::read_trajectory(*dataset.groundtruth_path());

  if (sizes.empty()) sizes = {"848x480", "424x240"};
  if (fps_list.empty()) fps_list = {3.0, 6.0, 15.0, 30.0};
  if (windows.empty()) windows = {5, 7, 15};

  std::vector<SweepRow> rows;
  for (const auto& size_text : sizes) {
    const SizeOption size = parse_size(size_text);
    for (double fps : fps_list) {
      for (int window : windows) {
        SweepRow row;
        row.size = size_text;
        row.fps = fps;
        row.window = window;
        const std::string combo = size_text + "_f" + std::to_string(static_cast<int>(fps)) + "_w" +
                                  std::to_string(window);
        try {
          ceilvo::RunConfig config;
          config.width = size.width;
          config.height = size.height;
          config.fps = fps;
          config.max_window = window;
          const ceilvo::RunLog log = ceilvo::run_odometry(dataset, config);

          const double run_tau = tau > 0.0 ? tau : 0.5 / fps;
          ceilvo::EvalReport report =
              ceilvo::evaluate_trajectories(gt, log.trajectory, run_tau);
          report.t_frame_ms = log.mean_frame_ms();
          report.kf_ratio = ceilvo::keyframe_ratio(log.keyframe_count, log.frames_processed);
          report.kappa = ceilvo::speed_factor(report.t_frame_ms, fps);

          const fs::path combo_dir = fs::path(out_dir) / combo;
          fs::create_directories(combo_dir);
          ceilvo::write_trajectory(combo_dir / "trajectory.txt", log.trajectory);
          write_runlog(combo_dir / "runlog.jsonl", log);
          write_error_csv(combo_dir / "errors.csv", report.series);
          write_stats_csv(combo_dir / "stats.csv", report);

          row.ok = true;
          row.median = report.stats.q2;
          row.q1 = report.stats.q1;
          row.q3 = report.stats.q3;
          row.t_f_ms = report.t_frame_ms;
          row.kf_ratio = report.kf_ratio;
          row.kappa = report.kappa;
          std::printf("[done] %s median %.4f m, %.2f ms/frame, kappa %.3f\n", combo.c_str(),
                      row.median, row.t_f_ms, row.kappa);
        } catch (const std::exception& e) {
          row.error = e.what();
          std::printf("[fail] %s: %s\n", combo.c_str(), e.what());
        }
        rows.push_back(row);
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.ok != b.ok) return a.ok;  // failed rows sink to the bottom
    return a.median < b.median;
  });

  fs::create_directories(out_dir);
  const fs::path summary_path = fs::path(out_dir) / "summary.csv";
  std::ofstream out(summary_path);
  if (!out) throw ceilvo::DataError("cannot write " + summary_path.string());
  out << "size,fps,window,median_eps_m,q1_m,q3_m,t_f_ms,kf_ratio,kappa,status\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%g,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", r.size.c_str(),
                  r.fps, r.window, r.median, r.q1, r.q3, r.t_f_ms, r.kf_ratio, r.kappa,
                  r.ok ? "ok" : r.error.c_str());
    out << buf;
  }
  std::cout << "summary written to " << summary_path << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ceilvo: ceiling-facing direct sparse visual odometry toolkit"};
  app.require_subcommand(1);

  // --- sim ---
  auto* sim = app.add_subcommand("sim", "synthesize a ceiling dataset");
  std::string sim_out;
  std::string sim_size_text = "848x480";
  double sim_fps = 30.0;
  std::string ceiling = "flat";
  double height_min = 4.0, height_max = 5.0;
  std::string path_kind = "square";
  double side = 4.0;
  int loops = 3;
  double loop_radius = 1.5;
  double speed = 1.0, angular_speed = 0.9, duration = -1.0, noise = 1.0;
  int lamps = 0;
  std::uint64_t sim_seed = 1;
  sim->add_option("--out", sim_out, "output dataset directory")->required();
  sim->add_option("--size", sim_size_text, "image size: 848x480 or 424x240");
  sim->add_option("--fps", sim_fps, "frame rate in Hz")->check(CLI::PositiveNumber);
  sim->add_option("--ceiling", ceiling, "ceiling shape: flat or inclined");
  sim->add_option("--height-min", height_min, "lowest ceiling height (inclined)");
  sim->add_option("--height-max", height_max, "ceiling height / ridge height");
  sim->add_option("--path", path_kind, "trajectory: square or multi-loop");
  sim->add_option("--side", side, "square side length in meters");
  sim->add_option("--loops", loops, "number of loops (multi-loop)");
  sim->add_option("--loop-radius", loop_radius, "first loop radius in meters");
  sim->add_option("--speed", speed, "linear speed in m/s (max 1.4)");
  sim->add_option("--angular-speed", angular_speed, "turn rate in rad/s");
  sim->add_option("--duration", duration, "cap sequence duration in seconds");
  sim->add_option("--noise", noise, "intensity noise sigma");
  sim->add_option("--lamps", lamps, "number of bright ceiling lamps");
  sim->add_option("--seed", sim_seed, "texture and noise seed");

  // --- run ---
  auto* run = app.add_subcommand("run", "run visual odometry over a dataset");
  std::string run_dataset, run_out;
  std::string run_size_text = "848x480";
  double run_fps = 30.0;
  int run_window = 7;
  std::uint64_t run_seed = 0;
  run->add_option("dataset", run_dataset, "dataset directory")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--size", run_size_text, "processing size: 848x480 or 424x240");
  run->add_option("--fps", run_fps, "processing frame rate")->check(CLI::PositiveNumber);
  run->add_option("--window", run_window, "max keyframe window N_f")->check(CLI::PositiveNumber);
  run->add_option("--seed", run_seed, "seed echoed into the log");

  // --- eval ---
  auto* eval = app.add_subcommand("eval", "compare an estimate against ground truth");
  std::string eval_gt, eval_est, eval_out = "eval_out", eval_runlog;
  double tau = 0.0, bin_width = 0.5;
  bool plot = false;
  eval->add_option("groundtruth", eval_gt, "ground-truth trajectory file")->required();
  eval->add_option("estimate", eval_est, "estimated trajectory file")->required();
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--tau", tau, "sync threshold in seconds (default: half sample period)");
  eval->add_option("--bins", bin_width, "distance bin width in meters");
  eval->add_option("--runlog", eval_runlog, "run log for timing columns");
  eval->add_flag("--plot", plot, "emit SVG plots");

  // --- sweep ---
  auto* sweep = app.add_subcommand("sweep", "run the parameter grid");
  std::string sweep_dataset, sweep_out = "sweep_out";
  std::vector<std::string> sweep_sizes;
  std::vector<double> sweep_fps;
  std::vector<int> sweep_windows;
  double sweep_tau = 0.0;
  sweep->add_option("dataset", sweep_dataset, "dataset directory")->required();
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--sizes", sweep_sizes, "sizes to test (default both)");
  sweep->add_option("--fps", sweep_fps, "frame rates to test (default 3 6 15 30)");
  sweep->add_option("--windows", sweep_windows, "window sizes to test (default 5 7 15)");
  sweep->add_option("--tau", sweep_tau, "sync threshold override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sim->parsed())
      return run_sim(sim_out, parse_size(sim_size_text), sim_fps, ceiling, height_min, height_max,
                     path_kind, side, loops, loop_radius, speed, angular_speed, duration, noise,
                     lamps, sim_seed);
    if (run->parsed())
      return run_run(run_dataset, run_out, parse_size(run_size_text), run_fps, run_window,
                     run_seed);
    if (eval->parsed()) return run_eval(eval_gt, eval_est, eval_out, tau, bin_width, plot, eval_runlog);
    if (sweep->parsed())
      return run_sweep(sweep_dataset, sweep_out, sweep_sizes, sweep_fps, sweep_windows, sweep_tau);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ceilvo::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ceilvo::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
