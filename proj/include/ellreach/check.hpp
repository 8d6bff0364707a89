#pragma once

// Monte-Carlo falsification of computed over-approximations: simulate
// admissible trajectories and evaluate every snapshot member's quadratic form
// at the simulated states.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/model.hpp"
#include "ellreach/parallel.hpp"
#include "ellreach/propagation.hpp"
#include "ellreach/rng.hpp"

namespace ellreach {

/// Mixture used by the checker: trajectory j cycles through the three input
/// realizations and alternates interior / boundary initial states.
inline TrajectorySamplingOptions mixed_realization(int j) {
  static constexpr InputRealization kinds[] = {InputRealization::kHeldBoundary,
                                               InputRealization::kStepwiseBoundary,
                                               InputRealization::kStepwiseInterior};
  TrajectorySamplingOptions opt;
  opt.inputs = kinds[j % 3];
  opt.initial_on_boundary = (j / 3) % 2 == 0;
  return opt;
}

/// Simulated states at every snapshot of `grid`: result[j][s].
inline std::vector<std::vector<Vector>> simulate_states(const LtvSystem& sys,
                                                        const UncertaintySpec& unc,
                                                        const TimeGrid& grid, int samples,
                                                        std::uint64_t seed, int workers = 1) {
  const TrajectorySampler sampler(sys, unc, grid);
  const CounterRng base(seed);
  std::vector<std::vector<Vector>> out(std::max(0, samples));
  parallel_for(samples, workers, [&](int j) {
    out[j] = sampler.sample(base.split(static_cast<std::uint64_t>(j)), mixed_realization(j)).states;
  });
  return out;
}

struct Violation {
  int snapshot = 0;
  int member = 0;
  int trajectory = 0;
  double form = 0.0;
};

struct ContainmentReport {
  std::vector<double> times;
  std::vector<double> max_form;  // per snapshot, over members and trajectories
  double worst = 0.0;
  double tol = 0.0;
  std::optional<Violation> first_violation;

  bool passed() const { return !first_violation.has_value(); }
};

/// `sets[s]` are the ellipsoids claimed to contain every state at snapshot s;
/// `states[j][s]` are simulated states (projected onto `coords` when set).
inline ContainmentReport check_containment(const std::vector<double>& times,
                                           const std::vector<std::vector<Ellipsoid>>& sets,
                                           const std::vector<std::vector<Vector>>& states,
                                           double tol, const std::vector<int>& coords = {}) {
  ContainmentReport rep;
  rep.times = times;
  rep.tol = tol;
  rep.max_form.assign(sets.size(), 0.0);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t i = 0; i < sets[s].size(); ++i) {
      const Ellipsoid& e = sets[s][i];
      for (std::size_t j = 0; j < states.size(); ++j) {
        const Vector& full = states[j].at(s);
        Vector x = full;
        if (!coords.empty()) {
          x.resize(static_cast<int>(coords.size()));
          for (std::size_t c = 0; c < coords.size(); ++c) x(c) = full(coords[c]);
        }
        const double form = normalized_distance(e, x);
        rep.max_form[s] = std::max(rep.max_form[s], form);
        if (form > 1.0 + tol && !rep.first_violation) {
          rep.first_violation = Violation{static_cast<int>(s), static_cast<int>(i),
                                          static_cast<int>(j), form};
        }
      }
    }
    rep.worst = std::max(rep.worst, rep.max_form[s]);
  }
  return rep;
}

/// Snapshot members, optionally projected.
inline std::vector<std::vector<Ellipsoid>> snapshot_sets(const std::vector<ReachSnapshot>& snaps,
                                                         const std::vector<int>& coords = {}) {
  std::vector<std::vector<Ellipsoid>> out;
  for (const ReachSnapshot& s : snaps) {
    std::vector<Ellipsoid> members;
    for (int i = 0; i < s.size(); ++i) {
      members.push_back(coords.empty() ? s.member(i) : project(s.member(i), coords));
    }
    out.push_back(std::move(members));
  }
  return out;
}

/// Monte-Carlo support along `dir` never exceeding the ellipsoid's support.
inline int count_support_violations(const Ellipsoid& e, const std::vector<Vector>& points,
                                     const Vector& dir, double tol) {
  const double bound = support(e, dir);
  const double scale = std::max(1.0, std::abs(bound));
  int count = 0;
  for (const Vector& x : points) {
    if (dir.dot(x) > bound + tol * scale) ++count;
  }
  return count;
}

}  // namespace ellreach
