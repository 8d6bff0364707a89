#pragma once

// Outer ellipsoid of an intersection of ellipsoids via the S-procedure
// max-det relaxation.
//
// For members E(x_c, X_i) sharing the center x_c, the relaxation is solved by
// A~ = sum_i tau_i X_i^{-1}, b~ = -A~ x_c with tau on the unit simplex
// maximizing log det A~. The general (distinct-center) LMI is only checked,
// not solved, by check_certificate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/linalg.hpp"
#include "ellreach/propagation.hpp"
#include "ellreach/rng.hpp"

namespace ellreach {

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Common-center family E(center, shapes[i]).
struct FusionInput {
  Vector center;
  std::vector<SymMatrix> shapes;

  int dim() const { return static_cast<int>(center.size()); }
  int size() const { return static_cast<int>(shapes.size()); }

  void validate() const {
    if (shapes.empty()) throw FusionError("FusionInput: empty family");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (shapes[i].order() != dim()) {
        throw FusionError("FusionInput: member " + std::to_string(i) + " has wrong dimension");
      }
      if (!is_positive_definite(shapes[i])) {
        throw FusionError("FusionInput: member " + std::to_string(i) +
                          " is not positive definite");
      }
    }
  }

  Ellipsoid member(int i) const { return Ellipsoid(center, shapes.at(i)); }

  /// (A_i, b_i, c_i) = (X_i^{-1}, -X_i^{-1} x_c, x_c^T X_i^{-1} x_c - 1).
  std::vector<QuadraticForm> quadratic_forms() const {
    std::vector<QuadraticForm> out;
    for (const SymMatrix& s : shapes) {
      const SymMatrix a = inverse_spd(s);
      const Vector ax = a.matrix() * center;
      out.push_back({a, -ax, center.dot(ax) - 1.0});
    }
    return out;
  }

  FusionInput project(const std::vector<int>& coords) const {
    FusionInput out;
    const Ellipsoid probe = project_member(0, coords);
    out.center = probe.center();
    for (int i = 0; i < size(); ++i) out.shapes.push_back(project_member(i, coords).shape());
    return out;
  }

  static FusionInput FromSnapshot(const ReachSnapshot& snap) {
    return {snap.center, snap.shapes};
  }

 private:
  Ellipsoid project_member(int i, const std::vector<int>& coords) const {
    return ellreach::project(Ellipsoid(center, shapes.at(i)), coords);
  }
};

struct FusionCertificate {
  SymMatrix a_tilde;
  Vector b_tilde;
  std::vector<double> tau;
};

struct FusionResult {
  Ellipsoid ellipsoid;
  FusionCertificate certificate;
  double logdet = 0.0;  // log det A~
  int iterations = 0;
  double gap = 0.0;     // max_i d_i - sum_j tau_j d_j at termination
  bool certified = false;
  double inflation = 1.0;  // > 1 when the certificate failed and the shape was scaled up
  std::vector<std::string> notes;
};

struct CertificateCheck {
  bool ok = false;
  double max_eigenvalue = 0.0;  // of the assembled block matrix
  double tolerance = 0.0;       // threshold actually applied
  bool a_positive_definite = false;
  bool tau_nonnegative = false;
};

/// Assembles
///   [A~ b~ 0; b~^T -1 b~^T; 0 b~ -A~] - sum_i tau_i [A_i b_i 0; b_i^T c_i 0; 0 0 0]
/// and requires its largest eigenvalue <= tol * max(1, max |entry|), A~ PD
/// and tau >= 0.
inline CertificateCheck check_certificate(const FusionCertificate& cert,
                                          const std::vector<QuadraticForm>& forms,
                                          double tol = 1e-8) {
  CertificateCheck out;
  const int d = cert.a_tilde.order();
  if (cert.b_tilde.size() != d || cert.tau.size() != forms.size() || forms.empty()) {
    return out;
  }
  out.tau_nonnegative =
      std::all_of(cert.tau.begin(), cert.tau.end(), [](double t) { return t >= 0.0; });
  out.a_positive_definite = is_positive_definite(cert.a_tilde);

  Matrix block = Matrix::Zero(2 * d + 1, 2 * d + 1);
  block.topLeftCorner(d, d) = cert.a_tilde.matrix();
  block.block(0, d, d, 1) = cert.b_tilde;
  block.block(d, 0, 1, d) = cert.b_tilde.transpose();
  block(d, d) = -1.0;
  block.block(d, d + 1, 1, d) = cert.b_tilde.transpose();
  block.block(d + 1, d, d, 1) = cert.b_tilde;
  block.bottomRightCorner(d, d) = -cert.a_tilde.matrix();
  for (std::size_t i = 0; i < forms.size(); ++i) {
    const QuadraticForm& f = forms[i];
    if (f.dim() != d) return out;
    block.topLeftCorner(d, d) -= cert.tau[i] * f.a0.matrix();
    block.block(0, d, d, 1) -= cert.tau[i] * f.b0;
    block.block(d, 0, 1, d) -= cert.tau[i] * f.b0.transpose();
    block(d, d) -= cert.tau[i] * f.c0;
  }
  if (!block.allFinite()) return out;
  out.max_eigenvalue = sym_eig(SymMatrix(block)).eigenvalues(0);
  out.tolerance = tol * std::max(1.0, block.cwiseAbs().maxCoeff());
  out.ok = out.tau_nonnegative && out.a_positive_definite &&
           out.max_eigenvalue <= out.tolerance;
  return out;
}

inline bool intersection_membership(const Vector& x, const FusionInput& inp,
                                    double tol = kDefaultContainmentTol) {
  for (int i = 0; i < inp.size(); ++i) {
    const Vector r = x - inp.center;
    if (r.dot(solve_spd(inp.shapes[i], r)) > 1.0 + tol) return false;
  }
  return true;
}

enum class IntersectionSampling {
  kRejection,  // uniform: rejection from the smallest-volume member
  kRadial,     // random ray from the center, uniform radius fraction^(1/d)
  kBoundary,   // random ray from the center, point on the intersection boundary
};

/// Points of the intersection; point k depends only on (seed, k) for the ray
/// modes. Rejection throws once 10^4 n + 10^6 proposals have been spent.
inline std::vector<Vector> sample_intersection(
    const FusionInput& inp, int n, std::uint64_t seed,
    IntersectionSampling mode = IntersectionSampling::kRejection) {
  inp.validate();
  if (n < 1) throw FusionError("sample_intersection: need at least one point");
  const int d = inp.dim();
  std::vector<Vector> out;
  out.reserve(n);
  const CounterRng base(seed);

  if (mode != IntersectionSampling::kRejection) {
    std::vector<SymMatrix> inverses;
    for (const SymMatrix& s : inp.shapes) inverses.push_back(inverse_spd(s));
    for (int k = 0; k < n; ++k) {
      CounterRng rng = base.split(static_cast<std::uint64_t>(k));
      const Vector dir = rng.unit_vector(d);
      double reach = std::numeric_limits<double>::infinity();
      for (const SymMatrix& a : inverses) {
        reach = std::min(reach, 1.0 / std::sqrt(dir.dot(a.matrix() * dir)));
      }
      const double frac =
          mode == IntersectionSampling::kBoundary ? 1.0 : std::pow(rng.uniform(), 1.0 / d);
      out.push_back(inp.center + reach * frac * dir);
    }
    return out;
  }

  int smallest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < inp.size(); ++i) {
    const double ld = logdet_spd(inp.shapes[i]);
    if (ld < best) best = ld, smallest = i;
  }
  const Matrix root = sqrt_psd(inp.shapes[smallest]).matrix();
  CounterRng rng = base.split(0);
  const long long budget = 10000LL * n + 1000000LL;
  for (long long attempt = 0; static_cast<int>(out.size()) < n; ++attempt) {
    if (attempt >= budget) {
      throw FusionError("sample_intersection: acceptance rate too low for rejection sampling");
    }
    const Vector x = inp.center + root * rng.unit_ball(d);
    // Proposals lie in the smallest member by construction; test with zero
    // slack so accepted points are strictly admissible.
    if (intersection_membership(x, inp, 0.0)) out.push_back(x);
  }
  return out;
}

namespace detail {

/// Maximizes sum_k log(1 + g mu_k) over g in [0, g_max].
inline double logdet_line_search(const Vector& mu, double g_max) {
  auto slope = [&](double g) {
    double s = 0.0;
    for (int k = 0; k < mu.size(); ++k) s += mu(k) / (1.0 + g * mu(k));
    return s;
  };
  if (slope(0.0) <= 0.0) return 0.0;
  if (std::isfinite(g_max) && slope(g_max) >= 0.0) return g_max;
  double lo = 0.0;
  double hi = g_max;
  if (!std::isfinite(hi)) {
    hi = 1.0;
    while (slope(hi) > 0.0) hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Eigenvalues of L^{-1} D L^{-T} where M = L L^T.
inline Vector relative_spectrum(const Matrix& chol, const Matrix& direction) {
  const Matrix y = chol.triangularView<Eigen::Lower>().solve(direction);
  const Matrix z = chol.triangularView<Eigen::Lower>().solve(y.transpose());
  return sym_eig(SymMatrix(z)).eigenvalues;
}

}  // namespace detail

struct FusionOptions {
  double tol = 1e-8;
  int max_iterations = 5000;
  int certificate_samples = 2000;  // used only when inflation is needed
  std::uint64_t seed = 0;
};

/// Max-det fusion for a common-center family. Frank-Wolfe with away steps
/// and exact line search over the simplex, starting from uniform tau.
inline FusionResult fuse_common_center(const FusionInput& inp, const FusionOptions& opt = {}) {
  inp.validate();
  const int d = inp.dim();
  const int count = inp.size();
  std::vector<SymMatrix> inverses;
  for (const SymMatrix& s : inp.shapes) inverses.push_back(inverse_spd(s));

  std::vector<double> tau(count, 1.0 / count);
  auto combine = [&] {
    Matrix m = Matrix::Zero(d, d);
    for (int i = 0; i < count; ++i) {
      if (tau[i] != 0.0) m += tau[i] * inverses[i].matrix();
    }
    return SymMatrix(m);
  };

  SymMatrix m = combine();
  int iterations = 0;
  double gap = 0.0;
  for (;;) {
    const Matrix chol = cholesky(m);
    std::vector<double> grad(count);
    for (int i = 0; i < count; ++i) {
      const Matrix y = chol.triangularView<Eigen::Lower>().solve(inverses[i].matrix());
      const Matrix z = chol.transpose().triangularView<Eigen::Upper>().solve(y);
      grad[i] = z.trace();
    }
    double weighted = 0.0;
    for (int i = 0; i < count; ++i) weighted += tau[i] * grad[i];
    const int toward = static_cast<int>(std::max_element(grad.begin(), grad.end()) - grad.begin());
    gap = grad[toward] - weighted;
    if (gap <= opt.tol) break;
    if (iterations >= opt.max_iterations) {
      throw FusionError("fuse_common_center: no convergence after " +
                        std::to_string(iterations) + " iterations (gap " +
                        std::to_string(gap) + ")");
    }
    ++iterations;

    int away = -1;
    for (int i = 0; i < count; ++i) {
      if (tau[i] > 0.0 && (away < 0 || grad[i] < grad[away])) away = i;
    }
    const double away_gap = weighted - grad[away];
    const bool use_away = away_gap > gap && tau[away] < 1.0;

    if (!use_away) {
      const Vector mu = detail::relative_spectrum(chol, inverses[toward].matrix() - m.matrix());
      const double g = detail::logdet_line_search(mu, 1.0);
      for (double& t : tau) t *= (1.0 - g);
      tau[toward] += g;
      if (g == 1.0) std::fill(tau.begin(), tau.end(), 0.0), tau[toward] = 1.0;
    } else {
      const double g_max = tau[away] / (1.0 - tau[away]);
      const Vector mu = detail::relative_spectrum(chol, m.matrix() - inverses[away].matrix());
      const double g = detail::logdet_line_search(mu, g_max);
      for (double& t : tau) t *= (1.0 + g);
      tau[away] -= g;
      if (g == g_max) tau[away] = 0.0;
    }
    // Renormalize against drift off the simplex.
    const double total = std::accumulate(tau.begin(), tau.end(), 0.0);
    for (double& t : tau) t = std::max(0.0, t / total);
    m = combine();
  }

  const Vector b = -(m.matrix() * inp.center);
  FusionResult result{Ellipsoid(inp.center, inverse_spd(m)), FusionCertificate{m, b, tau},
                      logdet_spd(m), iterations, gap};
  const CertificateCheck check = check_certificate(result.certificate, inp.quadratic_forms());
  result.certified = check.ok;
  if (result.certified) return result;

  // Certificate failed numerically: scale the shape until sampled boundary
  // points of the intersection are enclosed.
  double worst = 1.0;
  for (const Vector& x :
       sample_intersection(inp, opt.certificate_samples, opt.seed, IntersectionSampling::kBoundary)) {
    worst = std::max(worst, normalized_distance(result.ellipsoid, x));
  }
  result.inflation = worst * (1.0 + 1e-9);
  if (!std::isfinite(result.inflation)) {
    throw FusionError("fuse_common_center: uncertified result could not be inflated");
  }
  result.ellipsoid = Ellipsoid(inp.center, result.inflation * result.ellipsoid.shape());
  result.notes.push_back("certificate check failed (max eigenvalue " +
                         std::to_string(check.max_eigenvalue) + "); shape inflated by " +
                         std::to_string(result.inflation));
  return result;
}

}  // namespace ellreach
