#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellreach/linalg.hpp"
#include "ellreach/rng.hpp"

namespace ellreach {

class EllipsoidError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tolerance used by containment checks unless the caller overrides it.
/// ODE-propagated sets carry integration error, hence not zero.
inline constexpr double kDefaultContainmentTol = 1e-9;

/// Shape eigenvalues below this fraction of the trace count as degenerate.
inline constexpr double kDegenerateShapeRatio = 1e-12;

/// E(q, Q) = { y : (y - q)^T Q^{-1} (y - q) <= 1 } with Q positive definite.
class Ellipsoid {
 public:
  Ellipsoid(Vector center, SymMatrix shape)
      : center_(std::move(center)), shape_(std::move(shape)) {
    if (center_.size() != shape_.order()) {
      throw EllipsoidError("Ellipsoid: center has length " +
                           std::to_string(center_.size()) +
                           " but shape has order " +
                           std::to_string(shape_.order()));
    }
    if (shape_.order() == 0) throw EllipsoidError("Ellipsoid: empty dimension");
    if (!center_.allFinite() || !shape_.matrix().allFinite()) {
      throw EllipsoidError("Ellipsoid: non-finite entries");
    }
    const double trace = shape_.matrix().trace();
    const EigDecomposition e = sym_eig(shape_);
    const double min_eig = e.eigenvalues(e.eigenvalues.size() - 1);
    if (!(trace > 0.0) || min_eig < kDegenerateShapeRatio * trace ||
        !is_positive_definite(shape_)) {
      throw EllipsoidError("Ellipsoid: shape matrix is degenerate (min eigenvalue " +
                           std::to_string(min_eig) + ")");
    }
  }

  static Ellipsoid Ball(const Vector& center, double radius) {
    const int d = static_cast<int>(center.size());
    return Ellipsoid(center, SymMatrix(radius * radius * Matrix::Identity(d, d)));
  }

  int dim() const { return static_cast<int>(center_.size()); }
  const Vector& center() const { return center_; }
  const SymMatrix& shape() const { return shape_; }

 private:
  Vector center_;
  SymMatrix shape_;
};

/// { y : y^T A0 y + 2 y^T b0 + c0 <= 0 }. The offset c0 carries the -1 of the
/// center/shape form, so evaluate() is zero on the boundary.
struct QuadraticForm {
  SymMatrix a0;
  Vector b0;
  double c0 = 0.0;

  int dim() const { return a0.order(); }

  double evaluate(const Vector& y) const {
    return y.dot(a0.matrix() * y) + 2.0 * y.dot(b0) + c0;
  }
};

inline QuadraticForm to_quadratic_form(const Ellipsoid& e) {
  const SymMatrix a0 = inverse_spd(e.shape());
  const Vector qinv_q = a0.matrix() * e.center();
  return {a0, -qinv_q, e.center().dot(qinv_q) - 1.0};
}

inline Ellipsoid from_quadratic_form(const QuadraticForm& f) {
  if (f.b0.size() != f.a0.order()) {
    throw EllipsoidError("from_quadratic_form: b0 length does not match A0");
  }
  if (!is_positive_definite(f.a0)) {
    throw EllipsoidError("from_quadratic_form: A0 is not positive definite");
  }
  const Vector ainv_b = solve_spd(f.a0, f.b0);
  const double slack = f.b0.dot(ainv_b) - f.c0;
  if (!(slack > 0.0)) {
    throw EllipsoidError("from_quadratic_form: the described set is empty");
  }
  // With c0 = q^T A0 q - 1 the slack is exactly 1; otherwise the set is the
  // ellipsoid with shape slack * A0^{-1}.
  return Ellipsoid(-ainv_b, slack * inverse_spd(f.a0));
}

/// (x - q)^T Q^{-1} (x - q).
inline double normalized_distance(const Ellipsoid& e, const Vector& x) {
  if (x.size() != e.dim()) {
    throw EllipsoidError("normalized_distance: dimension mismatch");
  }
  const Vector r = x - e.center();
  return r.dot(solve_spd(e.shape(), r));
}

inline bool contains(const Ellipsoid& e, const Vector& x,
                     double tol = kDefaultContainmentTol) {
  return normalized_distance(e, x) <= 1.0 + tol;
}

/// max over y in e of dir^T y.
inline double support(const Ellipsoid& e, const Vector& dir) {
  if (dir.size() != e.dim()) throw EllipsoidError("support: dimension mismatch");
  if (dir.norm() == 0.0) throw EllipsoidError("support: zero direction");
  return dir.dot(e.center()) +
         std::sqrt(std::max(0.0, dir.dot(e.shape().matrix() * dir)));
}

inline Ellipsoid project(const Ellipsoid& e, const std::vector<int>& coords) {
  if (coords.empty()) throw EllipsoidError("project: empty coordinate list");
  std::vector<bool> seen(e.dim(), false);
  for (int c : coords) {
    if (c < 0 || c >= e.dim()) {
      throw EllipsoidError("project: coordinate " + std::to_string(c) +
                           " out of range for dimension " +
                           std::to_string(e.dim()));
    }
    if (seen[c]) throw EllipsoidError("project: duplicate coordinate");
    seen[c] = true;
  }
  Vector q(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) q(i) = e.center()(coords[i]);
  return Ellipsoid(q, e.shape().principal(coords));
}

inline double unit_ball_volume(int d) {
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

inline double log_volume(const Ellipsoid& e) {
  return std::log(unit_ball_volume(e.dim())) + 0.5 * logdet_spd(e.shape());
}

inline double volume(const Ellipsoid& e) { return std::exp(log_volume(e)); }

enum class SampleMode { kInterior, kBoundary };

/// Deterministic samples; point k only depends on (seed, k). Interior points
/// are uniform in volume.
inline std::vector<Vector> sample(const Ellipsoid& e, int n, SampleMode mode,
                                  std::uint64_t seed) {
  if (n < 1) throw EllipsoidError("sample: need at least one point");
  const Matrix root = sqrt_psd(e.shape()).matrix();
  const CounterRng base(seed);
  std::vector<Vector> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(k));
    const Vector z = mode == SampleMode::kBoundary ? rng.unit_vector(e.dim())
                                                   : rng.unit_ball(e.dim());
    out.push_back(e.center() + root * z);
  }
  return out;
}

}  // namespace ellreach
