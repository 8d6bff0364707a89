#pragma once

// Run configuration shared by the command-line subcommands.
//
// {
//   "system": "quadrotor" | { inline system description, see io.hpp },
//   "quadrotor": { "params": {...}, "horizon": 1.0, "riccati_steps": 2000 },
//   "t_start": 0, "t_end": 1, "h": 0.000555..., "snapshots": 10,
//   "N": 10, "N_cap": 10, "directions_seed": 1, "coords": [0, 1, 2],
//   "workers": 4, "disturbance_term": "additive" | "subtractive",
//   "dt": 0.1, "steps_per_horizon": 200, "K": 10, "trace": "trace.txt",
//   "fusion": { "tol": 1e-8, "max_iterations": 5000, "certificate_samples": 2000, "seed": 0 },
//   "check": { "samples": 2000, "seed": 7, "tol": 1e-3 },
//   "benchmark": { "Ns": [1, ..., 10], "reps": 3 },
//   "outputs": { "snapshots": "...", "fused": "...", ... }
// }

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ellreach/anytime.hpp"
#include "ellreach/io.hpp"
#include "ellreach/parallel.hpp"
#include "ellreach/quadrotor.hpp"

namespace ellreach {

struct RunConfig {
  std::string system_name = "quadrotor";  // "quadrotor" or "inline"
  io::Json system_json;                   // inline description when not a preset
  quadrotor::Params params;
  double lq_horizon = 1.0;
  int riccati_steps = 2000;

  double t_start = 0.0;
  double t_end = 1.0;
  std::optional<double> h;  // default: (t_end - t_start) / ((snapshots - 1) * 200)
  int snapshots = 10;

  int n = 10;
  int n_cap = 10;
  std::uint64_t directions_seed = 1;
  std::vector<int> coords;
  int workers = default_worker_count();
  DisturbanceTerm disturbance = DisturbanceTerm::kAdditive;

  double dt = 0.1;
  int steps_per_horizon = 200;
  int k_steps = 10;
  std::string trace_path;

  FusionOptions fusion;

  int check_samples = 2000;
  std::uint64_t check_seed = 7;
  double check_tol = 1e-3;

  std::vector<int> benchmark_ns = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int benchmark_reps = 3;

  std::map<std::string, std::string> outputs;

  TimeGrid grid() const {
    const double step =
        h ? *h : (t_end - t_start) / (static_cast<double>(snapshots - 1) * 200.0);
    return TimeGrid(t_start, t_end, step, snapshots);
  }

  PropagationOptions propagation() const { return {workers, disturbance}; }

  AnytimeConfig anytime() const {
    AnytimeConfig c;
    c.dt = dt;
    c.steps_per_horizon = steps_per_horizon;
    c.n_cap = n_cap;
    c.directions_seed = directions_seed;
    c.coords = coords;
    c.propagation = propagation();
    c.fusion = fusion;
    return c;
  }

  std::string output(const std::string& key, const std::string& fallback) const {
    const auto it = outputs.find(key);
    return it == outputs.end() ? fallback : it->second;
  }

  /// Throws io::FormatError on inconsistent settings.
  void validate(int state_dim) const {
    auto fail = [](const std::string& m) { throw io::FormatError("config: " + m); };
    if (!(t_end > t_start)) fail("t_end must exceed t_start");
    if (snapshots < 2) fail("snapshots must be at least 2");
    if (n < 1) fail("N must be at least 1");
    if (n_cap < 1) fail("N_cap must be at least 1");
    if (workers < 1) fail("workers must be at least 1");
    if (!(dt > 0.0)) fail("dt must be positive");
    if (steps_per_horizon < 1) fail("steps_per_horizon must be at least 1");
    if (k_steps < 1) fail("K must be at least 1");
    if (!(fusion.tol > 0.0) || fusion.max_iterations < 1) fail("invalid fusion tolerances");
    if (!(check_tol >= 0.0) || check_samples < 1) fail("invalid check settings");
    if (riccati_steps < 1 || !(lq_horizon > 0.0)) fail("invalid quadrotor horizon");
    for (int c : coords) {
      if (c < 0 || c >= state_dim) {
        fail("projection coordinate " + std::to_string(c) + " outside [0, " +
             std::to_string(state_dim) + ")");
      }
    }
    try {
      (void)grid();
    } catch (const ModelError& e) {
      fail(e.what());
    }
  }

  io::SystemDescription build_system() const {
    if (system_name == "quadrotor") {
      quadrotor::ClosedLoop cl = quadrotor::build_closed_loop(quadrotor::build_tracking(
          params, quadrotor::Weights::Default(), lq_horizon, riccati_steps));
      return {std::move(cl.system), std::move(cl.uncertainty)};
    }
    return io::system_from_json(system_json);
  }
};

inline DisturbanceTerm parse_disturbance_term(const std::string& s) {
  if (s == "additive") return DisturbanceTerm::kAdditive;
  if (s == "subtractive") return DisturbanceTerm::kSubtractive;
  throw io::FormatError("disturbance_term must be \"additive\" or \"subtractive\", got \"" + s + "\"");
}

namespace detail {

template <typename T>
void read_key(const io::Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const io::Json::exception& e) {
    throw io::FormatError(std::string("config.") + key + ": " + e.what());
  }
}

}  // namespace detail

inline RunConfig config_from_json(const io::Json& j) {
  if (!j.is_object()) throw io::FormatError("config: expected a JSON object");
  RunConfig c;
  if (j.contains("system")) {
    const io::Json& s = j["system"];
    if (s.is_string()) {
      if (s.get<std::string>() != "quadrotor") {
        throw io::FormatError("config.system: unknown preset \"" + s.get<std::string>() + "\"");
      }
    } else if (s.is_object()) {
      c.system_name = "inline";
      c.system_json = s;
    } else {
      throw io::FormatError("config.system: expected a preset name or an object");
    }
  }
  if (j.contains("quadrotor")) {
    const io::Json& q = j["quadrotor"];
    if (q.contains("params")) {
      const io::Json& p = q["params"];
      detail::read_key(p, "mass", c.params.mass);
      detail::read_key(p, "arm_length", c.params.arm_length);
      detail::read_key(p, "jxx", c.params.jxx);
      detail::read_key(p, "jyy", c.params.jyy);
      detail::read_key(p, "jzz", c.params.jzz);
      detail::read_key(p, "thrust_coeff", c.params.thrust_coeff);
      detail::read_key(p, "drag_coeff", c.params.drag_coeff);
      detail::read_key(p, "gravity", c.params.gravity);
    }
    detail::read_key(q, "horizon", c.lq_horizon);
    detail::read_key(q, "riccati_steps", c.riccati_steps);
  }
  detail::read_key(j, "t_start", c.t_start);
  detail::read_key(j, "t_end", c.t_end);
  if (j.contains("h")) c.h = io::number(j["h"], "config.h");
  detail::read_key(j, "snapshots", c.snapshots);
  detail::read_key(j, "N", c.n);
  detail::read_key(j, "N_cap", c.n_cap);
  detail::read_key(j, "directions_seed", c.directions_seed);
  if (j.contains("coords")) c.coords = io::int_list(j["coords"], "config.coords");
  detail::read_key(j, "workers", c.workers);
  if (j.contains("disturbance_term")) {
    std::string s;
    detail::read_key(j, "disturbance_term", s);
    c.disturbance = parse_disturbance_term(s);
  }
  detail::read_key(j, "dt", c.dt);
  detail::read_key(j, "steps_per_horizon", c.steps_per_horizon);
  detail::read_key(j, "K", c.k_steps);
  detail::read_key(j, "trace", c.trace_path);
  if (j.contains("fusion")) {
    const io::Json& f = j["fusion"];
    detail::read_key(f, "tol", c.fusion.tol);
    detail::read_key(f, "max_iterations", c.fusion.max_iterations);
    detail::read_key(f, "certificate_samples", c.fusion.certificate_samples);
    detail::read_key(f, "seed", c.fusion.seed);
  }
  if (j.contains("check")) {
    detail::read_key(j["check"], "samples", c.check_samples);
    detail::read_key(j["check"], "seed", c.check_seed);
    detail::read_key(j["check"], "tol", c.check_tol);
  }
  if (j.contains("benchmark")) {
    if (j["benchmark"].contains("Ns")) c.benchmark_ns = io::int_list(j["benchmark"]["Ns"], "config.benchmark.Ns");
    detail::read_key(j["benchmark"], "reps", c.benchmark_reps);
  }
  if (j.contains("outputs")) {
    for (const auto& [key, value] : j["outputs"].items()) {
      if (!value.is_string()) throw io::FormatError("config.outputs." + key + ": expected a path");
      c.outputs[key] = value.get<std::string>();
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  return config_from_json(io::read_json_file(path));
}

}  // namespace ellreach
