// ellreach: ellipsoidal reach-set propagation, fusion and anytime supervision.
//
// Exit codes: 0 ok, 1 containment check failed, 2 usage or configuration
// error, 3 numerical failure.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ellreach/anytime.hpp"
#include "ellreach/check.hpp"
#include "ellreach/config.hpp"
#include "ellreach/fusion.hpp"
#include "ellreach/io.hpp"
#include "ellreach/propagation.hpp"

namespace {

using namespace ellreach;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `f`, reclassifying any failure as a usage/config error.
template <typename F>
auto loading(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_json(const std::string& path, const io::Json& j) {
  io::write_text_file(path, j.dump(2) + "\n");
}

/// Flags shared by every subcommand that reads a run configuration.
struct CommonFlags {
  std::string config_path;
  std::optional<int> workers;
  std::optional<int> n;
  std::optional<std::uint64_t> seed;
  std::vector<int> coords;
  std::optional<std::string> disturbance;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run configuration JSON (default: quadrotor preset)");
    cmd->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("-N,--N", n, "number of directions");
    cmd->add_option("--directions-seed", seed, "seed for the direction family");
    cmd->add_option("--coords", coords, "projection coordinates, e.g. 0,1,2")->delimiter(',');
    cmd->add_option("--disturbance-term", disturbance, "additive | subtractive");
  }

  RunConfig load() const {
    return loading([&] {
      RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
      if (workers) c.workers = *workers;
      if (n) c.n = *n;
      if (seed) c.directions_seed = *seed;
      if (!coords.empty()) c.coords = coords;
      if (disturbance) c.disturbance = parse_disturbance_term(*disturbance);
      return c;
    });
  }
};

io::SystemDescription load_system(const RunConfig& cfg) {
  io::SystemDescription d = loading([&] { return cfg.build_system(); });
  loading([&] {
    cfg.validate(d.system.n);
    return 0;
  });
  return d;
}

void write_snapshots(const std::string& path, const std::vector<ReachSnapshot>& snaps) {
  if (ends_with(path, ".csv")) {
    io::write_text_file(path, io::snapshots_to_csv(snaps));
  } else {
    write_json(path, io::to_json(snaps));
  }
}

// --- propagate ---------------------------------------------------------------

std::vector<ReachSnapshot> run_propagate(const RunConfig& cfg, const io::SystemDescription& d) {
  const TimeGrid grid = cfg.grid();
  const std::vector<Vector> dirs = default_directions(d.system.n, cfg.n, cfg.directions_seed);
  return propagate_family(d.system, d.uncertainty, dirs, grid, cfg.propagation());
}

int cmd_propagate(const CommonFlags& flags, const std::string& out_flag) {
  const RunConfig cfg = flags.load();
  const io::SystemDescription d = load_system(cfg);
  const std::vector<ReachSnapshot> snaps = run_propagate(cfg, d);
  const std::string out = out_flag.empty() ? cfg.output("snapshots", "snapshots.json") : out_flag;
  write_snapshots(out, snaps);
  std::cout << "propagate: " << snaps.size() << " snapshots x " << cfg.n << " ellipsoids -> "
            << out << "\n";
  return kExitOk;
}

// --- fuse --------------------------------------------------------------------

io::Json fuse_snapshots(const std::vector<ReachSnapshot>& snaps, const std::vector<int>& coords,
                        const FusionOptions& opt, int* uncertified) {
  io::Json tube = io::Json::array();
  for (const ReachSnapshot& s : snaps) {
    FusionInput inp = FusionInput::FromSnapshot(s);
    if (!coords.empty()) inp = inp.project(coords);
    const FusionResult r = fuse_common_center(inp, opt);
    if (!r.certified) ++*uncertified;
    io::Json entry = io::to_json(r);
    entry["t"] = s.t;
    entry["coords"] = coords;
    tube.push_back(std::move(entry));
  }
  return tube;
}

int cmd_fuse(const CommonFlags& flags, const std::string& snapshots_path, const std::string& out_flag) {
  const RunConfig cfg = flags.load();
  const std::vector<ReachSnapshot> snaps = loading([&] { return io::read_snapshots(snapshots_path); });
  if (snaps.empty()) throw UsageError("fuse: snapshot file is empty");
  loading([&] {
    for (const ReachSnapshot& s : snaps) {
      for (int c : cfg.coords) {
        if (c < 0 || c >= s.center.size()) {
          throw io::FormatError("projection coordinate " + std::to_string(c) + " outside [0, " +
                                std::to_string(s.center.size()) + ")");
        }
      }
    }
    return 0;
  });
  int uncertified = 0;
  const io::Json tube = fuse_snapshots(snaps, cfg.coords, cfg.fusion, &uncertified);
  const std::string out = out_flag.empty() ? cfg.output("fused", "fused.json") : out_flag;
  write_json(out, tube);
  std::cout << "fuse: " << tube.size() << " fused ellipsoids -> " << out;
  if (uncertified) std::cout << " (" << uncertified << " inflated after a failed certificate)";
  std::cout << "\n";
  return kExitOk;
}

// --- benchmark ---------------------------------------------------------------

TimeGrid horizon_grid(const RunConfig& cfg) {
  return TimeGrid(cfg.t_start, cfg.t_start + cfg.dt, cfg.dt / cfg.steps_per_horizon);
}

std::pair<std::vector<TimingSample>, TimingModel> run_benchmark(const RunConfig& cfg,
                                                                const io::SystemDescription& d) {
  const std::vector<TimingSample> samples =
      benchmark(d.system, d.uncertainty, horizon_grid(cfg), cfg.benchmark_ns, cfg.benchmark_reps,
                cfg.propagation(), cfg.directions_seed, cfg.coords);
  return {samples, fit_timing_model(samples)};
}

int cmd_benchmark(const CommonFlags& flags, const std::vector<int>& ns, std::optional<int> reps,
                  const std::string& timing_flag, const std::string& model_flag) {
  RunConfig cfg = flags.load();
  if (!ns.empty()) cfg.benchmark_ns = ns;
  if (reps) cfg.benchmark_reps = *reps;
  if (cfg.benchmark_reps < 3) throw UsageError("benchmark: --reps must be at least 3");
  if (std::set<int>(cfg.benchmark_ns.begin(), cfg.benchmark_ns.end()).size() < 5 ||
      *std::min_element(cfg.benchmark_ns.begin(), cfg.benchmark_ns.end()) < 1) {
    throw UsageError("benchmark: need at least 5 distinct positive family sizes to fit the quartic");
  }
  const io::SystemDescription d = load_system(cfg);
  const auto [samples, model] = run_benchmark(cfg, d);
  const std::string timing_out = timing_flag.empty() ? cfg.output("timing", "timing.csv") : timing_flag;
  const std::string model_out = model_flag.empty() ? cfg.output("model", "model.json") : model_flag;
  io::write_text_file(timing_out, io::timing_to_csv(samples));
  write_json(model_out, io::to_json(model));
  std::cout << "N  t_center  t_shape  t_opt  t_propagation  t_total\n";
  for (const TimingSample& s : samples) {
    std::printf("%2d  %.6f  %.6f  %.6f  %.6f  %.6f\n", s.n, s.t_center, s.t_shape, s.t_opt,
                s.t_propagation, s.t_total);
  }
  std::cout << "benchmark: " << timing_out << ", " << model_out << "\n";
  return kExitOk;
}

// --- anytime -----------------------------------------------------------------

int cmd_anytime(const CommonFlags& flags, const std::string& trace_flag, const std::string& model_flag,
                const std::string& report_flag, const std::string& csv_flag) {
  const RunConfig cfg = flags.load();
  const std::string trace_path = trace_flag.empty() ? cfg.trace_path : trace_flag;
  if (trace_path.empty()) throw UsageError("anytime: an availability trace is required (--trace)");
  const std::vector<double> trace =
      loading([&] { return io::parse_trace(io::read_text_file(trace_path)); });
  const io::SystemDescription d = load_system(cfg);
  TimingModel model;
  if (!model_flag.empty()) {
    model = loading([&] { return io::timing_model_from_json(io::read_json_file(model_flag)); });
  } else {
    model = run_benchmark(cfg, d).second;
  }
  const AnytimeReport report =
      run_horizon(d.uncertainty.x0, d.system, d.uncertainty, cfg.t_start, trace, model, cfg.anytime());
  const std::string json_out = report_flag.empty() ? cfg.output("report", "report.json") : report_flag;
  const std::string csv_out = csv_flag.empty() ? cfg.output("report_csv", "report.csv") : csv_flag;
  write_json(json_out, io::to_json(report));
  io::write_text_file(csv_out, io::report_to_csv(report));
  for (const StepRecord& s : report.steps) {
    std::cout << "k=" << s.k << " t_available=" << s.t_available << " N_max=" << s.n_max
              << " wall=" << s.wall_s << "s certified=" << (s.certified ? "yes" : "no");
    for (const std::string& w : s.warnings) std::cout << " [" << w << "]";
    std::cout << "\n";
  }
  std::cout << "anytime: " << report.steps.size() << " steps -> " << json_out << ", " << csv_out << "\n";
  return kExitOk;
}

// --- check -------------------------------------------------------------------

void print_check(const ContainmentReport& rep, const std::string& label) {
  std::cout << label << ": max quadratic form per snapshot\n";
  for (std::size_t s = 0; s < rep.max_form.size(); ++s) {
    std::printf("  t=%.6f  %.9f\n", rep.times[s], rep.max_form[s]);
  }
  if (rep.passed()) {
    std::printf("PASS: worst %.9f <= 1 + %g\n", rep.worst, rep.tol);
  } else {
    const Violation& v = *rep.first_violation;
    std::printf("FAIL: snapshot %d (t=%.6f) member %d trajectory %d has form %.9f > 1 + %g\n",
                v.snapshot, rep.times[v.snapshot], v.member, v.trajectory, v.form, rep.tol);
  }
}

io::Json check_to_json(const ContainmentReport& rep) {
  io::Json j{{"times", rep.times}, {"max_form", rep.max_form}, {"worst", rep.worst},
             {"tol", rep.tol}, {"passed", rep.passed()}};
  if (rep.first_violation) {
    const Violation& v = *rep.first_violation;
    j["violation"] = {{"snapshot", v.snapshot}, {"member", v.member},
                      {"trajectory", v.trajectory}, {"form", v.form}};
  }
  return j;
}

ContainmentReport check_snapshots(const RunConfig& cfg, const io::SystemDescription& d,
                                  const std::vector<ReachSnapshot>& snaps) {
  std::vector<double> times;
  for (const ReachSnapshot& s : snaps) times.push_back(s.t);
  const TimeGrid grid =
      loading([&] { return TimeGrid::Equispaced(times.front(), times.back(), static_cast<int>(snaps.size()), 200); });
  const std::vector<double> grid_times = grid.snapshot_times();
  for (std::size_t s = 0; s < times.size(); ++s) {
    if (std::abs(grid_times[s] - times[s]) > 1e-9 * std::max(1.0, std::abs(times[s]))) {
      throw UsageError("check: snapshot times must be equispaced (snapshot " + std::to_string(s) + ")");
    }
  }
  const auto states = simulate_states(d.system, d.uncertainty, grid, cfg.check_samples,
                                      cfg.check_seed, cfg.workers);
  return check_containment(times, snapshot_sets(snaps, cfg.coords), states, cfg.check_tol, cfg.coords);
}

ContainmentReport check_report(const RunConfig& cfg, const io::SystemDescription& d,
                               const AnytimeReport& report) {
  if (report.steps.empty()) throw UsageError("check: report has no steps");
  const double t0 = report.steps.front().t_start;
  const double t1 = report.steps.back().t_start + report.dt;
  const int k = static_cast<int>(report.steps.size());
  const TimeGrid grid = loading(
      [&] { return TimeGrid(t0, t1, report.dt / cfg.steps_per_horizon, k + 1); });
  auto states = simulate_states(d.system, d.uncertainty, grid, cfg.check_samples, cfg.check_seed,
                                cfg.workers);
  for (auto& traj : states) traj.erase(traj.begin());  // drop the initial snapshot
  std::vector<double> times;
  std::vector<std::vector<Ellipsoid>> sets;
  for (const StepRecord& s : report.steps) {
    times.push_back(s.t_start + report.dt);
    sets.push_back({s.reported()});
  }
  return check_containment(times, sets, states, cfg.check_tol, report.coords);
}

int cmd_check(const CommonFlags& flags, const std::string& snapshots_path,
              const std::string& report_path, std::optional<int> samples,
              std::optional<std::uint64_t> seed, std::optional<double> tol,
              const std::string& out) {
  RunConfig cfg = flags.load();
  if (samples) cfg.check_samples = *samples;
  if (seed) cfg.check_seed = *seed;
  if (tol) cfg.check_tol = *tol;
  if (snapshots_path.empty() == report_path.empty()) {
    throw UsageError("check: give exactly one of --snapshots or --report");
  }
  const io::SystemDescription d = load_system(cfg);
  ContainmentReport rep;
  if (!snapshots_path.empty()) {
    const auto snaps = loading([&] { return io::read_snapshots(snapshots_path); });
    if (snaps.empty()) throw UsageError("check: snapshot file is empty");
    loading([&] {
      for (const ReachSnapshot& s : snaps) {
        if (s.center.size() != d.system.n) throw io::FormatError("snapshot dimension does not match the system");
      }
      return 0;
    });
    rep = check_snapshots(cfg, d, snaps);
  } else {
    const AnytimeReport report = loading([&] { return io::report_from_json(io::read_json_file(report_path)); });
    rep = check_report(cfg, d, report);
  }
  print_check(rep, "check (" + std::to_string(cfg.check_samples) + " trajectories)");
  if (!out.empty()) write_json(out, check_to_json(rep));
  return rep.passed() ? kExitOk : kExitCheckFailed;
}

// --- quadrotor-demo ----------------------------------------------------------

int cmd_quadrotor_demo(const CommonFlags& flags, const std::string& out_dir, std::optional<int> samples) {
  RunConfig cfg = flags.load();
  if (samples) cfg.check_samples = *samples;
  if (cfg.system_name != "quadrotor") throw UsageError("quadrotor-demo: config must use the quadrotor preset");
  if (cfg.coords.empty()) cfg.coords = {0, 1, 2};
  const io::SystemDescription d = load_system(cfg);
  loading([&] {
    std::filesystem::create_directories(out_dir);
    return 0;
  });
  const std::filesystem::path dir(out_dir);

  const std::vector<ReachSnapshot> snaps = run_propagate(cfg, d);
  write_snapshots((dir / "snapshots.json").string(), snaps);
  write_snapshots((dir / "snapshots.csv").string(), snaps);

  int uncertified = 0;
  const io::Json tube = fuse_snapshots(snaps, cfg.coords, cfg.fusion, &uncertified);
  write_json((dir / "fused_xyz.json").string(), tube);

  RunConfig full_cfg = cfg;
  full_cfg.coords.clear();
  const ContainmentReport rep12 = check_snapshots(full_cfg, d, snaps);
  const ContainmentReport rep3 = check_snapshots(cfg, d, snaps);
  print_check(rep12, "12D members");
  print_check(rep3, "projected members");
  write_json((dir / "check.json").string(), {{"full", check_to_json(rep12)}, {"projected", check_to_json(rep3)}});
  std::cout << "quadrotor-demo: " << snaps.size() << " snapshots, N=" << cfg.n << ", "
            << tube.size() << " fused projections (" << uncertified << " inflated) -> " << out_dir << "\n";
  return rep12.passed() && rep3.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ellipsoidal reach-set propagation, fusion and anytime supervision"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string out, snapshots_path, report_path, trace_path, model_path, report_csv, timing_path;
  std::vector<int> ns;
  std::optional<int> reps, samples;
  std::optional<std::uint64_t> check_seed;
  std::optional<double> tol;
  std::string out_dir = "quadrotor_demo";

  auto* propagate = app.add_subcommand("propagate", "propagate the ellipsoid family and write snapshots");
  flags.attach(propagate);
  propagate->add_option("-o,--out", out, "snapshot file (.json or .csv)");

  auto* fuse = app.add_subcommand("fuse", "fuse each snapshot into one outer ellipsoid");
  flags.attach(fuse);
  fuse->add_option("--snapshots", snapshots_path, "snapshot file (.json or .csv)")->required();
  fuse->add_option("-o,--out", out, "fused-tube JSON");

  auto* bench = app.add_subcommand("benchmark", "time the pipeline against N and fit the quartic model");
  flags.attach(bench);
  bench->add_option("--Ns", ns, "family sizes, e.g. 1,2,3")->delimiter(',');
  bench->add_option("--reps", reps, "repetitions per size (at least 3)");
  bench->add_option("--timing-out", timing_path, "timing CSV");
  bench->add_option("--model-out", model_path, "fitted model JSON");

  auto* anytime = app.add_subcommand("anytime", "run the deadline-adaptive supervisor over a trace");
  flags.attach(anytime);
  anytime->add_option("--trace", trace_path, "availability trace (one budget in seconds per line)");
  anytime->add_option("--model", model_path, "timing model JSON (default: benchmark first)");
  anytime->add_option("--report", report_path, "report JSON");
  anytime->add_option("--report-csv", report_csv, "report CSV");

  auto* check = app.add_subcommand("check", "Monte-Carlo containment check");
  flags.attach(check);
  check->add_option("--snapshots", snapshots_path, "snapshot file to check");
  check->add_option("--report", report_path, "anytime report JSON to check");
  check->add_option("--samples", samples, "number of trajectories");
  check->add_option("--seed", check_seed, "sampling seed");
  check->add_option("--tol", tol, "tolerance on the quadratic form");
  check->add_option("-o,--out", out, "verdict JSON");

  auto* demo = app.add_subcommand("quadrotor-demo", "propagate, fuse and check the quadrotor closed loop");
  flags.attach(demo);
  demo->add_option("--out-dir", out_dir, "output directory");
  demo->add_option("--samples", samples, "number of trajectories for the check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (propagate->parsed()) return cmd_propagate(flags, out);
    if (fuse->parsed()) return cmd_fuse(flags, snapshots_path, out);
    if (bench->parsed()) return cmd_benchmark(flags, ns, reps, timing_path, model_path);
    if (anytime->parsed()) return cmd_anytime(flags, trace_path, model_path, report_path, report_csv);
    if (check->parsed()) {
      return cmd_check(flags, snapshots_path, report_path, samples, check_seed, tol, out);
    }
    if (demo->parsed()) return cmd_quadrotor_demo(flags, out_dir, samples);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}
