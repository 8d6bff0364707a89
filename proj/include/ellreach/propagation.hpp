#pragma once

// External ellipsoidal approximation of forward reach sets. Each unit vector
// l_i0 yields one ellipsoid E(x_c(t), X_i(t)) that contains the reach set and
// touches it along the adjoint direction l_i(t); the reach set is enclosed by
// the intersection of the family.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/linalg.hpp"
#include "ellreach/model.hpp"
#include "ellreach/parallel.hpp"
#include "ellreach/rng.hpp"

namespace ellreach {

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the disturbance enters the shape-matrix ODE.
///  kAdditive:     + pi_w X + GWG^T / pi_w, i.e. w is a second bounded input
///                 and the reach set is the union over all admissible w.
///                 Outer and tight along l(t).
///  kSubtractive:  - X^{1/2} S GWG^T - GWG^T S^T X^{1/2}  with S aligning
///                 GWG^T l to X^{1/2} l. This is the term for a disturbance
///                 acting against the reach set; it does not enclose the union
///                 over w when w has a persistent worst case.
enum class DisturbanceTerm { kSubtractive, kAdditive };

inline const char* to_string(DisturbanceTerm d) {
  return d == DisturbanceTerm::kSubtractive ? "subtractive" : "additive";
}

struct PiCoefficient {
  double value = 0.0;
  bool degenerate = false;
};

/// pi = sqrt(l^T BUB^T l / l^T X l). Degenerate (reported as 0) when the
/// numerator vanishes relative to |BUB^T| |l|^2.
inline PiCoefficient pi_coefficient(const Vector& l, const SymMatrix& bub, const SymMatrix& x) {
  const double den = l.dot(x.matrix() * l);
  if (!(den > 0.0)) {
    throw PropagationError("pi_coefficient: l^T X l = " + std::to_string(den) +
                           " is not positive; shape matrix is corrupted");
  }
  const double num = l.dot(bub.matrix() * l);
  const double scale = bub.matrix().norm() * l.squaredNorm();
  if (scale == 0.0 || num < 1e-14 * scale) return {0.0, true};
  return {std::sqrt(num / den), false};
}

inline PiCoefficient pi_coefficient(const Vector& l, const Matrix& b, const SymMatrix& u_shape,
                                    const SymMatrix& x) {
  return pi_coefficient(l, SymMatrix(b * u_shape.matrix() * b.transpose()), x);
}

/// Orthogonal S with S v2 = v1, as the Householder reflection about
/// w = v2 - v1 (identity when the vectors coincide). O(n^2).
inline Matrix orthogonal_aligner(const Vector& v2, const Vector& v1) {
  if (v1.size() != v2.size()) throw PropagationError("orthogonal_aligner: size mismatch");
  if (std::abs(v1.norm() - 1.0) > 1e-9 || std::abs(v2.norm() - 1.0) > 1e-9) {
    throw PropagationError("orthogonal_aligner: inputs must be unit vectors");
  }
  const int n = static_cast<int>(v1.size());
  Matrix s = Matrix::Identity(n, n);
  const Vector w = v2 - v1;
  const double ww = w.squaredNorm();
  if (ww < 1e-24) return s;
  s.noalias() -= (2.0 / ww) * w * w.transpose();
  return s;
}

struct ShapeOdeTerms {
  double pi = 0.0;
  Vector v1;  // X^{1/2} l / |.|
  Vector v2;  // GWG^T l / |.|
  Matrix s;   // orthogonal, s * v2 == v1
  bool control_degenerate = false;
  bool disturbance_degenerate = false;
};

namespace detail {

/// Square root tolerant of the small indefiniteness of RK4 stage values.
inline Matrix stage_sqrt(const SymMatrix& x) {
  const EigDecomposition e = sym_eig(x);
  return spectral_map(e, [](double l) { return l > 0.0 ? std::sqrt(l) : 0.0; }).matrix();
}

inline bool disturbance_vanishes(const Vector& gwg_l, const SymMatrix& gwg, const Vector& l) {
  const double scale = gwg.matrix().norm() * l.norm();
  return scale == 0.0 || gwg_l.norm() < 1e-14 * scale;
}

}  // namespace detail

inline ShapeOdeTerms shape_ode_terms(const Vector& l, const SymMatrix& x, const SymMatrix& bub,
                                     const SymMatrix& gwg, const Matrix* x_root = nullptr) {
  ShapeOdeTerms terms;
  const PiCoefficient pi = pi_coefficient(l, bub, x);
  terms.pi = pi.value;
  terms.control_degenerate = pi.degenerate;
  const int n = static_cast<int>(l.size());
  const Vector gwg_l = gwg.matrix() * l;
  if (detail::disturbance_vanishes(gwg_l, gwg, l)) {
    terms.disturbance_degenerate = true;
    terms.s = Matrix::Identity(n, n);
    return terms;
  }
  const Matrix root = x_root ? *x_root : detail::stage_sqrt(x);
  const Vector xl = root * l;
  terms.v1 = xl / xl.norm();
  terms.v2 = gwg_l / gwg_l.norm();
  terms.s = orthogonal_aligner(terms.v2, terms.v1);
  return terms;
}

namespace detail {

/// pi X + Q / pi for one bounded input with spread Q. When l(t) sees none
/// of Q the support along l does not depend on the input, but the set still
/// grows in other directions; the trace ratio keeps the bound external there.
inline void add_input_term(Matrix& rhs, const SymMatrix& q, const SymMatrix& x, const Vector& l) {
  const double q_trace = q.matrix().trace();
  if (!(q_trace > 0.0)) return;
  const PiCoefficient pi = pi_coefficient(l, q, x);
  const double value = pi.degenerate ? std::sqrt(q_trace / x.matrix().trace()) : pi.value;
  rhs += value * x.matrix() + (1.0 / value) * q.matrix();
}

inline Matrix shape_rhs_at(const Matrix& a, const SymMatrix& bub, const SymMatrix& gwg,
                           const SymMatrix& x, const Vector& l, DisturbanceTerm mode) {
  Matrix rhs = a * x.matrix();
  rhs += rhs.transpose().eval();
  add_input_term(rhs, bub, x, l);
  if (mode == DisturbanceTerm::kAdditive) {
    add_input_term(rhs, gwg, x, l);
    return rhs;
  }
  const Vector gwg_l = gwg.matrix() * l;
  if (disturbance_vanishes(gwg_l, gwg, l)) return rhs;
  const Matrix root = stage_sqrt(x);
  const Vector xl = root * l;
  const Matrix s = orthogonal_aligner(gwg_l / gwg_l.norm(), xl / xl.norm());
  const Matrix cross = root * s * gwg.matrix();
  rhs -= cross + cross.transpose();
  return rhs;
}

}  // namespace detail

/// Right-hand side of the shape-matrix ODE at time t.
inline Matrix shape_rhs(double t, const SymMatrix& x, const Vector& l, const LtvSystem& sys,
                        const UncertaintySpec& unc,
                        DisturbanceTerm mode = DisturbanceTerm::kAdditive) {
  if (!is_positive_definite(x)) throw PropagationError("shape_rhs: X is not positive definite");
  const SystemMatrices m = evaluate_system(sys, t);
  const SymMatrix bub(m.b * unc.u.shape(t) * m.b.transpose());
  const SymMatrix gwg(m.g * unc.w.shape(t) * m.g.transpose());
  return detail::shape_rhs_at(m.a, bub, gwg, x, l, mode);
}

struct ReachSnapshot {
  double t = 0.0;
  Vector center;
  std::vector<SymMatrix> shapes;
  std::vector<Vector> directions;

  int size() const { return static_cast<int>(shapes.size()); }
  Ellipsoid member(int i) const { return Ellipsoid(center, shapes.at(i)); }
};

struct PropagationOptions {
  int workers = 1;
  DisturbanceTerm disturbance = DisturbanceTerm::kAdditive;
};

/// Center x_c at every snapshot step.
inline std::vector<Vector> propagate_center(const DiscretizedModel& model) {
  const TimeGrid& grid = model.grid();
  const double h = grid.h();
  auto rhs = [&](int j, const Vector& x) -> Vector {
    const auto& nd = model.node(j);
    Vector dx = nd.a * x;
    if (nd.b.cols() > 0) dx += nd.b * nd.u_center;
    if (nd.g.cols() > 0) dx += nd.g * nd.w_center;
    return dx;
  };
  std::vector<Vector> out;
  std::size_t next = 0;
  const auto& snaps = grid.snapshot_steps();
  Vector x = model.x0().center();
  if (snaps[next] == 0) out.push_back(x), ++next;
  for (int k = 0; k < grid.steps(); ++k) {
    const Vector k1 = rhs(2 * k, x);
    const Vector k2 = rhs(2 * k + 1, x + 0.5 * h * k1);
    const Vector k3 = rhs(2 * k + 1, x + 0.5 * h * k2);
    const Vector k4 = rhs(2 * k + 2, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (next < snaps.size() && snaps[next] == k + 1) out.push_back(x), ++next;
  }
  return out;
}

inline std::vector<Vector> propagate_center(const LtvSystem& sys, const UncertaintySpec& unc,
                                            const TimeGrid& grid) {
  return propagate_center(DiscretizedModel(sys, unc, grid));
}

/// Adjoint direction l' = -A(t)^T l at every grid step (steps + 1 values).
/// For constant A this is exp(-A^T (t - t_start)) l0.
inline std::vector<Vector> adjoint_direction(const LtvSystem& sys, const Vector& l0,
                                             const TimeGrid& grid) {
  sys.validate();
  if (l0.size() != sys.n) throw PropagationError("adjoint_direction: dimension mismatch");
  std::vector<Vector> out{l0};
  Vector l = l0;
  for (int k = 0; k < grid.steps(); ++k) {
    l = rk4_step<Vector>(
        [&](double t, const Vector& y) -> Vector { return -(sys.a(t).transpose() * y); },
        grid.time(k), l, grid.h());
    out.push_back(l);
  }
  return out;
}

/// Shape matrices and directions of one family member at the snapshot steps.
struct ShapeTrajectory {
  std::vector<SymMatrix> shapes;
  std::vector<Vector> directions;
};

namespace detail {

/// Symmetrized, eigenvalue-floored copy of x. Throws when the repair would
/// exceed 1e-6 of the trace.
inline SymMatrix maintain_pd(const Matrix& x, int step) {
  const SymMatrix sym(x);
  const double trace = sym.matrix().trace();
  if (!std::isfinite(trace) || !(trace > 0.0)) {
    throw PropagationError("propagate: shape matrix lost positive trace at step " +
                           std::to_string(step));
  }
  const EigDecomposition e = sym_eig(sym);
  const double floor = 1e-12 * trace;
  const double min_eig = e.eigenvalues(e.eigenvalues.size() - 1);
  if (min_eig >= floor) return sym;
  if (floor - min_eig > 1e-6 * trace) {
    throw PropagationError("propagate: shape matrix lost positive definiteness at step " +
                           std::to_string(step) + " (min eigenvalue " +
                           std::to_string(min_eig) + ", trace " + std::to_string(trace) +
                           "); reduce the step size");
  }
  return spectral_map(e, [floor](double l) { return std::max(l, floor); });
}

}  // namespace detail

inline ShapeTrajectory propagate_shape(const DiscretizedModel& model, const Vector& l0,
                                       DisturbanceTerm mode = DisturbanceTerm::kAdditive) {
  const TimeGrid& grid = model.grid();
  const double h = grid.h();
  struct State {
    Vector l;
    SymMatrix x;
  };
  auto rhs = [&](int j, const Vector& l, const SymMatrix& x) -> std::pair<Vector, Matrix> {
    const auto& nd = model.node(j);
    return {-(nd.a.transpose() * l), detail::shape_rhs_at(nd.a, nd.bub, nd.gwg, x, l, mode)};
  };

  ShapeTrajectory out;
  const auto& snaps = grid.snapshot_steps();
  std::size_t next = 0;
  State s{l0, model.x0().shape()};
  if (snaps[next] == 0) {
    out.shapes.push_back(s.x);
    out.directions.push_back(s.l);
    ++next;
  }
  for (int k = 0; k < grid.steps(); ++k) {
    const auto [dl1, dx1] = rhs(2 * k, s.l, s.x);
    const auto [dl2, dx2] = rhs(2 * k + 1, s.l + 0.5 * h * dl1, SymMatrix(s.x.matrix() + 0.5 * h * dx1));
    const auto [dl3, dx3] = rhs(2 * k + 1, s.l + 0.5 * h * dl2, SymMatrix(s.x.matrix() + 0.5 * h * dx2));
    const auto [dl4, dx4] = rhs(2 * k + 2, s.l + h * dl3, SymMatrix(s.x.matrix() + h * dx3));
    s.l += (h / 6.0) * (dl1 + 2.0 * dl2 + 2.0 * dl3 + dl4);
    s.x = detail::maintain_pd(s.x.matrix() + (h / 6.0) * (dx1 + 2.0 * dx2 + 2.0 * dx3 + dx4), k + 1);
    if (next < snaps.size() && snaps[next] == k + 1) {
      out.shapes.push_back(s.x);
      out.directions.push_back(s.l);
      ++next;
    }
  }
  return out;
}

inline void validate_directions(const std::vector<Vector>& directions, int n) {
  if (directions.empty()) throw PropagationError("propagate: need at least one direction");
  for (std::size_t i = 0; i < directions.size(); ++i) {
    if (directions[i].size() != n) {
      throw PropagationError("propagate: direction " + std::to_string(i) + " has wrong length");
    }
    if (std::abs(directions[i].norm() - 1.0) > 1e-12) {
      throw PropagationError("propagate: direction " + std::to_string(i) + " is not a unit vector");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if ((directions[i] - directions[j]).norm() < 1e-12) {
        throw PropagationError("propagate: directions " + std::to_string(j) + " and " +
                               std::to_string(i) + " coincide");
      }
    }
  }
}

/// Center and N shape IVPs as N + 1 independent tasks on the worker pool.
/// Results are gathered by index, so output is identical for any worker count.
inline std::vector<ReachSnapshot> propagate_family(const DiscretizedModel& model,
                                                   const std::vector<Vector>& directions,
                                                   const PropagationOptions& opt = {}) {
  validate_directions(directions, model.n());
  const int count = static_cast<int>(directions.size());
  std::vector<Vector> centers;
  std::vector<ShapeTrajectory> shapes(count);
  parallel_for(count + 1, opt.workers, [&](int task) {
    if (task == 0) {
      centers = propagate_center(model);
    } else {
      shapes[task - 1] = propagate_shape(model, directions[task - 1], opt.disturbance);
    }
  });

  const std::vector<double> times = model.grid().snapshot_times();
  std::vector<ReachSnapshot> out(times.size());
  for (std::size_t s = 0; s < times.size(); ++s) {
    out[s].t = times[s];
    out[s].center = centers[s];
    for (int i = 0; i < count; ++i) {
      out[s].shapes.push_back(shapes[i].shapes[s]);
      out[s].directions.push_back(shapes[i].directions[s]);
    }
  }
  return out;
}

inline std::vector<ReachSnapshot> propagate_family(const LtvSystem& sys,
                                                   const UncertaintySpec& unc,
                                                   const std::vector<Vector>& directions,
                                                   const TimeGrid& grid,
                                                   const PropagationOptions& opt = {}) {
  return propagate_family(DiscretizedModel(sys, unc, grid), directions, opt);
}

/// Coordinate axes first, then seeded pseudorandom unit vectors whose
/// |cos angle| with every earlier direction stays below 0.999. The list for
/// N is a prefix of the list for N + 1.
inline std::vector<Vector> default_directions(int n, int count, std::uint64_t seed) {
  if (n < 1 || count < 1) throw PropagationError("default_directions: need n >= 1 and N >= 1");
  std::vector<Vector> out;
  for (int i = 0; i < std::min(count, n); ++i) out.push_back(Vector::Unit(n, i));
  CounterRng rng(seed);
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 100000) {
      throw PropagationError("default_directions: cannot find enough distinct directions");
    }
    const Vector v = rng.unit_vector(n);
    bool distinct = true;
    for (const Vector& u : out) {
      if (std::abs(u.dot(v)) >= 0.999) {
        distinct = false;
        break;
      }
    }
    if (distinct) out.push_back(v);
  }
  return out;
}

}  // namespace ellreach
