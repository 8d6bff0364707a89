#pragma once

// Compute-aware supervision: measure t_total = f(N), fit a quartic f^, and
// pick the largest affordable family size N_max for each prediction horizon.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/fusion.hpp"
#include "ellreach/linalg.hpp"
#include "ellreach/model.hpp"
#include "ellreach/propagation.hpp"

namespace ellreach {

class AnytimeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Wall-clock medians (seconds) for one family size.
struct TimingSample {
  int n = 1;
  double t_center = 0.0;
  double t_shape = 0.0;
  double t_opt = 0.0;
  double t_propagation = 0.0;
  double t_total = 0.0;
  int workers = 1;
};

struct TimingModel {
  std::vector<double> coefficients;  // ascending powers, degree 4
  int n_min = 1;
  int n_cap = 1;
  double residual_norm = 0.0;

  double operator()(double n) const { return polyval(coefficients, n); }
};

struct NmaxSelection {
  std::optional<double> n_hat;  // largest root of f^(N) = t_available, if any
  int n_max = 1;
  bool deadline_risk = false;   // even N = 1 is predicted to overrun
};

struct AnytimeConfig {
  double dt = 0.1;
  int steps_per_horizon = 200;  // integration step h = dt / steps_per_horizon
  int n_cap = 10;
  std::uint64_t directions_seed = 1;
  std::vector<int> coords;  // projection for reporting; empty = full state
  PropagationOptions propagation;
  FusionOptions fusion;
};

struct StepRecord {
  int k = 0;
  double t_start = 0.0;
  double t_available = 0.0;
  std::optional<double> n_hat;
  int n_max = 1;
  double wall_s = 0.0;
  Ellipsoid fused;                     // full state at the end of the horizon
  std::optional<Ellipsoid> projected;  // fused after projection, if coords set
  bool certified = true;
  std::vector<std::string> warnings;

  const Ellipsoid& reported() const { return projected ? *projected : fused; }
  double t_end(double dt) const { return t_start + dt; }
};

struct AnytimeReport {
  double dt = 0.0;
  std::vector<int> coords;
  std::vector<StepRecord> steps;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace detail

/// Median-of-reps timings of the center IVP, one shape IVP, the fusion step
/// and the full pipeline for each N. Discretization of the model is shared
/// preprocessing and not timed.
inline std::vector<TimingSample> benchmark(const LtvSystem& sys, const UncertaintySpec& unc,
                                           const TimeGrid& grid, const std::vector<int>& ns,
                                           int reps, const PropagationOptions& prop = {},
                                           std::uint64_t seed = 1,
                                           const std::vector<int>& coords = {}) {
  if (reps < 3) throw AnytimeError("benchmark: need at least 3 repetitions");
  if (ns.empty()) throw AnytimeError("benchmark: empty list of family sizes");
  const DiscretizedModel model(sys, unc, grid);
  std::vector<TimingSample> out;
  for (int n : ns) {
    if (n < 1) throw AnytimeError("benchmark: family sizes must be positive");
    const std::vector<Vector> dirs = default_directions(sys.n, n, seed);
    std::vector<double> center, shape, opt, propagation, total;
    for (int r = 0; r < reps; ++r) {
      auto start = detail::Clock::now();
      (void)propagate_center(model);
      center.push_back(detail::seconds_since(start));

      start = detail::Clock::now();
      (void)propagate_shape(model, dirs[0], prop.disturbance);
      shape.push_back(detail::seconds_since(start));

      start = detail::Clock::now();
      const auto snaps = propagate_family(model, dirs, prop);
      propagation.push_back(detail::seconds_since(start));
      const auto fuse_start = detail::Clock::now();
      if (n > 1) {
        FusionInput inp = FusionInput::FromSnapshot(snaps.back());
        if (!coords.empty()) inp = inp.project(coords);
        (void)fuse_common_center(inp);
        opt.push_back(detail::seconds_since(fuse_start));
      } else {
        opt.push_back(0.0);  // a single ellipsoid needs no optimization
      }
      total.push_back(detail::seconds_since(start));
    }
    out.push_back({n, detail::median(center), detail::median(shape), detail::median(opt),
                   detail::median(propagation), detail::median(total), prop.workers});
  }
  return out;
}

/// Degree-4 least-squares fit of t_total against N.
inline TimingModel fit_timing_model(const std::vector<TimingSample>& samples) {
  std::set<int> distinct;
  std::vector<double> xs, ys;
  for (const TimingSample& s : samples) {
    distinct.insert(s.n);
    xs.push_back(s.n);
    ys.push_back(s.t_total);
  }
  if (distinct.size() < 5) {
    throw AnytimeError("fit_timing_model: need at least 5 distinct N, got " +
                       std::to_string(distinct.size()));
  }
  TimingModel model;
  model.coefficients = polyfit(xs, ys, 4);
  model.n_min = *distinct.begin();
  model.n_cap = *distinct.rbegin();
  double ss = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double r = model(xs[k]) - ys[k];
    ss += r * r;
  }
  model.residual_norm = std::sqrt(ss);
  return model;
}

/// Largest root of f^(N) = t_available on [1, n_cap], found by scanning
/// integer points from the top for a sign change and bisecting it.
/// N_max = n_cap when f^(n_cap) is affordable, else floor(N^), or 1 (flagged
/// as a deadline risk) when no integer N in range is affordable.
inline NmaxSelection select_nmax(const TimingModel& model, double t_available, int n_cap) {
  if (!(t_available > 0.0)) throw AnytimeError("select_nmax: t_available must be positive");
  if (n_cap < 1) throw AnytimeError("select_nmax: N_cap must be at least 1");
  auto excess = [&](double n) { return model(n) - t_available; };

  NmaxSelection out;
  // An affordable cap wins even if a non-monotone fit crosses the budget
  // somewhere below it; N^ is then left unset.
  if (excess(n_cap) <= 0.0) {
    out.n_max = n_cap;
    return out;
  }
  for (int k = n_cap - 1; k >= 1; --k) {
    if (excess(k) > 0.0) continue;
    // excess(k) <= 0 < excess(k + 1): root in [k, k + 1).
    double lo = k;
    double hi = k + 1;
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (excess(mid) <= 0.0 ? lo : hi) = mid;
    }
    out.n_hat = lo;
    out.n_max = std::min(static_cast<int>(std::floor(lo)), n_cap);
    return out;
  }
  out.n_max = 1;
  out.deadline_risk = true;
  return out;
}

/// One prediction horizon [t_start, t_start + dt] from the initial set
/// `state`: choose N_max, propagate, fuse (skipped for N_max = 1).
inline StepRecord anytime_step(const Ellipsoid& state, const LtvSystem& sys,
                               const UncertaintySpec& unc, int k, double t_start,
                               double t_available, const TimingModel& model,
                               const AnytimeConfig& cfg) {
  const auto start = detail::Clock::now();
  const NmaxSelection sel = select_nmax(model, t_available, cfg.n_cap);

  UncertaintySpec local{state, unc.u, unc.w};
  const TimeGrid grid(t_start, t_start + cfg.dt, cfg.dt / cfg.steps_per_horizon);
  const std::vector<Vector> dirs = default_directions(sys.n, sel.n_max, cfg.directions_seed);
  const auto snaps = propagate_family(sys, local, dirs, grid, cfg.propagation);
  const FusionInput full = FusionInput::FromSnapshot(snaps.back());

  StepRecord rec{k, t_start, t_available, sel.n_hat, sel.n_max, 0.0, full.member(0)};
  if (sel.deadline_risk) {
    rec.warnings.push_back("deadline risk: f^(1) = " + std::to_string(model(1.0)) +
                           " s exceeds t_available = " + std::to_string(t_available) + " s");
  }
  if (sel.n_max > 1) {
    FusionResult fr = fuse_common_center(full, cfg.fusion);
    rec.fused = fr.ellipsoid;
    rec.certified = fr.certified;
    for (auto& note : fr.notes) rec.warnings.push_back(std::move(note));
    if (!cfg.coords.empty()) {
      FusionResult pr = fuse_common_center(full.project(cfg.coords), cfg.fusion);
      rec.projected = pr.ellipsoid;
      rec.certified = rec.certified && pr.certified;
      for (auto& note : pr.notes) rec.warnings.push_back(std::move(note));
    }
  } else if (!cfg.coords.empty()) {
    rec.projected = project(rec.fused, cfg.coords);
  }
  rec.wall_s = detail::seconds_since(start);
  return rec;
}

/// Chains K horizons; each fused ellipsoid is the next initial set.
inline AnytimeReport run_horizon(const Ellipsoid& initial, const LtvSystem& sys,
                                 const UncertaintySpec& unc, double t_start,
                                 const std::vector<double>& availability,
                                 const TimingModel& model, const AnytimeConfig& cfg) {
  AnytimeReport report{cfg.dt, cfg.coords, {}};
  Ellipsoid state = initial;
  for (std::size_t k = 0; k < availability.size(); ++k) {
    StepRecord rec = anytime_step(state, sys, unc, static_cast<int>(k),
                                  t_start + static_cast<double>(k) * cfg.dt, availability[k],
                                  model, cfg);
    state = rec.fused;
    report.steps.push_back(std::move(rec));
  }
  return report;
}

}  // namespace ellreach
