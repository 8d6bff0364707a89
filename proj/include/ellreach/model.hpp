#pragma once

// Linear time-varying dynamics  x' = A(t) x + B(t) u + G(t) w  with
// ellipsoidal initial, input and disturbance sets, plus a trajectory sampler
// that draws admissible realizations of the reach-set definition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/linalg.hpp"
#include "ellreach/parallel.hpp"
#include "ellreach/rng.hpp"

namespace ellreach {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Matrix-valued function of time: a constant, a closed form, or samples on
/// a strictly increasing grid joined by linear interpolation. Vectors are
/// represented as single-column matrices.
class TimeFunction {
 public:
  using Callable = std::function<Matrix(double)>;

  struct GridData {
    std::vector<double> times;
    std::vector<Matrix> values;
  };

  TimeFunction() = default;

  static TimeFunction Constant(Matrix value) {
    TimeFunction f;
    f.rows_ = static_cast<int>(value.rows());
    f.cols_ = static_cast<int>(value.cols());
    f.repr_ = std::move(value);
    return f;
  }

  static TimeFunction Grid(std::vector<double> times, std::vector<Matrix> values) {
    if (times.empty() || times.size() != values.size()) {
      throw ModelError("TimeFunction: grid needs matching non-empty times and values");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) {
        throw ModelError("TimeFunction: grid times must be strictly increasing");
      }
    }
    for (const Matrix& v : values) {
      if (v.rows() != values.front().rows() || v.cols() != values.front().cols()) {
        throw ModelError("TimeFunction: grid values have inconsistent dimensions");
      }
    }
    TimeFunction f;
    f.rows_ = static_cast<int>(values.front().rows());
    f.cols_ = static_cast<int>(values.front().cols());
    f.repr_ = std::make_shared<const GridData>(GridData{std::move(times), std::move(values)});
    return f;
  }

  static TimeFunction Closed(int rows, int cols, Callable fn) {
    TimeFunction f;
    f.rows_ = rows;
    f.cols_ = cols;
    f.repr_ = std::move(fn);
    return f;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool is_constant() const { return std::holds_alternative<Matrix>(repr_); }

  const GridData* grid() const {
    auto p = std::get_if<std::shared_ptr<const GridData>>(&repr_);
    return p ? p->get() : nullptr;
  }

  Matrix operator()(double t) const {
    if (auto c = std::get_if<Matrix>(&repr_)) return *c;
    if (auto fn = std::get_if<Callable>(&repr_)) {
      Matrix v = (*fn)(t);
      if (v.rows() != rows_ || v.cols() != cols_) {
        throw ModelError("TimeFunction: closed form returned wrong dimensions");
      }
      return v;
    }
    return interpolate(*grid(), t);
  }

 private:
  static Matrix interpolate(const GridData& g, double t) {
    const double t0 = g.times.front();
    const double t1 = g.times.back();
    const double slack = 1e-9 * std::max(1.0, t1 - t0);
    if (t < t0 - slack || t > t1 + slack) {
      throw ModelError("TimeFunction: t = " + std::to_string(t) +
                       " outside grid span [" + std::to_string(t0) + ", " +
                       std::to_string(t1) + "]");
    }
    if (g.times.size() == 1 || t <= t0) return g.values.front();
    if (t >= t1) return g.values.back();
    const auto hi = std::upper_bound(g.times.begin(), g.times.end(), t);
    const std::size_t k = static_cast<std::size_t>(hi - g.times.begin()) - 1;
    const double a = (t - g.times[k]) / (g.times[k + 1] - g.times[k]);
    return (1.0 - a) * g.values[k] + a * g.values[k + 1];
  }

  int rows_ = 0;
  int cols_ = 0;
  std::variant<Matrix, std::shared_ptr<const GridData>, Callable> repr_;
};

struct SystemMatrices {
  Matrix a;
  Matrix b;
  Matrix g;
};

struct LtvSystem {
  int n = 0;  // state
  int m = 0;  // input
  int p = 0;  // disturbance
  TimeFunction a;
  TimeFunction b;
  TimeFunction g;

  void validate() const {
    if (n < 1 || m < 0 || p < 0) throw ModelError("LtvSystem: invalid dimensions");
    auto check = [](const TimeFunction& f, int r, int c, const char* name) {
      if (f.rows() != r || f.cols() != c) {
        throw ModelError(std::string("LtvSystem: ") + name + " is " +
                         std::to_string(f.rows()) + "x" + std::to_string(f.cols()) +
                         ", expected " + std::to_string(r) + "x" + std::to_string(c));
      }
    };
    check(a, n, n, "A");
    check(b, n, m, "B");
    check(g, n, p, "G");
  }
};

inline SystemMatrices evaluate_system(const LtvSystem& sys, double t) {
  return {sys.a(t), sys.b(t), sys.g(t)};
}

/// Possibly degenerate ellipsoid { c + S^{1/2} z : |z| <= 1 } with S PSD.
struct PsdSet {
  Vector center;
  SymMatrix shape;
};

/// Membership for a PSD-shaped set. Components outside the range of the
/// shape must vanish (up to 1e-9 relative).
inline bool contains(const PsdSet& s, const Vector& x, double tol = kDefaultContainmentTol) {
  const Vector r = x - s.center;
  const EigDecomposition e = sym_eig(s.shape);
  const double top = std::max(0.0, e.eigenvalues.size() ? e.eigenvalues(0) : 0.0);
  const Vector proj = e.eigenvectors.transpose() * r;
  double form = 0.0;
  for (int k = 0; k < proj.size(); ++k) {
    const double lambda = e.eigenvalues(k);
    if (lambda > 1e-12 * top && lambda > 0.0) {
      form += proj(k) * proj(k) / lambda;
    } else if (std::abs(proj(k)) > 1e-9 * (1.0 + r.norm())) {
      return false;
    }
  }
  return form <= 1.0 + tol;
}

struct SetFunction {
  TimeFunction center;  // d x 1
  TimeFunction shape;   // d x d, PSD

  int dim() const { return center.rows(); }
  PsdSet operator()(double t) const {
    return {center(t).col(0), SymMatrix(shape(t))};
  }

  static SetFunction Constant(const Vector& c, const Matrix& s) {
    return {TimeFunction::Constant(c), TimeFunction::Constant(s)};
  }
};

struct UncertaintySpec {
  Ellipsoid x0;
  SetFunction u;
  SetFunction w;

  void validate(const LtvSystem& sys) const {
    if (x0.dim() != sys.n) throw ModelError("UncertaintySpec: X0 dimension mismatch");
    if (u.center.rows() != sys.m || u.shape.rows() != sys.m || u.shape.cols() != sys.m ||
        u.center.cols() != 1) {
      throw ModelError("UncertaintySpec: U dimension mismatch");
    }
    if (w.center.rows() != sys.p || w.shape.rows() != sys.p || w.shape.cols() != sys.p ||
        w.center.cols() != 1) {
      throw ModelError("UncertaintySpec: W dimension mismatch");
    }
  }
};

/// Uniform integration grid with snapshot steps (always including both ends).
class TimeGrid {
 public:
  /// `snapshot_count` equispaced snapshots including both endpoints; the
  /// number of steps must be a multiple of snapshot_count - 1.
  TimeGrid(double t_start, double t_end, double h, int snapshot_count = 2)
      : t_start_(t_start), t_end_(t_end), h_(h) {
    if (!(h > 0.0)) throw ModelError("TimeGrid: step h must be positive");
    if (!(t_end > t_start)) throw ModelError("TimeGrid: t_end must exceed t_start");
    const double ratio = (t_end - t_start) / h;
    steps_ = static_cast<int>(std::llround(ratio));
    if (steps_ < 1 || std::abs(ratio - steps_) > 1e-9 * std::max(1.0, ratio)) {
      throw ModelError("TimeGrid: step h does not divide [t_start, t_end]");
    }
    if (snapshot_count < 2) throw ModelError("TimeGrid: need at least two snapshots");
    if (steps_ % (snapshot_count - 1) != 0) {
      throw ModelError("TimeGrid: " + std::to_string(steps_) +
                       " steps cannot be split into " +
                       std::to_string(snapshot_count - 1) + " equal snapshot intervals");
    }
    const int stride = steps_ / (snapshot_count - 1);
    for (int k = 0; k < snapshot_count; ++k) snapshot_steps_.push_back(k * stride);
  }

  static TimeGrid Equispaced(double t_start, double t_end, int snapshot_count,
                             int steps_per_interval = 200) {
    const int intervals = std::max(1, snapshot_count - 1);
    return TimeGrid(t_start, t_end,
                    (t_end - t_start) / (intervals * steps_per_interval),
                    snapshot_count);
  }

  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  double h() const { return h_; }
  int steps() const { return steps_; }
  const std::vector<int>& snapshot_steps() const { return snapshot_steps_; }

  /// Time of (possibly half-integer) step index `half / 2`.
  double half_time(int half) const {
    if (half == 2 * steps_) return t_end_;
    return t_start_ + (t_end_ - t_start_) * (0.5 * half) / steps_;
  }
  double time(int step) const { return half_time(2 * step); }

  std::vector<double> snapshot_times() const {
    std::vector<double> out;
    for (int s : snapshot_steps_) out.push_back(time(s));
    return out;
  }

 private:
  double t_start_;
  double t_end_;
  double h_;
  int steps_ = 0;
  std::vector<int> snapshot_steps_;
};

/// Classical fixed-step fourth-order Runge-Kutta step.
template <typename State, typename Rhs>
State rk4_step(const Rhs& f, double t, const State& y, double h) {
  const State k1 = f(t, y);
  const State k2 = f(t + 0.5 * h, State(y + 0.5 * h * k1));
  const State k3 = f(t + 0.5 * h, State(y + 0.5 * h * k2));
  const State k4 = f(t + h, State(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// System and uncertainty data evaluated once at every half step of a grid
/// (the RK4 stage times), shared read-only by all integrations on the grid.
class DiscretizedModel {
 public:
  struct Node {
    double t = 0.0;
    Matrix a;
    Matrix b;
    Matrix g;
    Vector u_center;
    Vector w_center;
    SymMatrix bub;   // B U B^T
    SymMatrix gwg;   // G W G^T
    Matrix u_root;   // U^{1/2}, filled when roots are requested
    Matrix w_root;   // W^{1/2}
  };

  DiscretizedModel(const LtvSystem& sys, const UncertaintySpec& unc,
                   const TimeGrid& grid, bool with_roots = false)
      : grid_(grid), x0_(unc.x0) {
    sys.validate();
    unc.validate(sys);
    n_ = sys.n;
    const int count = 2 * grid.steps() + 1;
    nodes_.resize(count);
    std::optional<Matrix> u_root_const, w_root_const;
    if (with_roots && unc.u.shape.is_constant()) {
      u_root_const = sqrt_psd(SymMatrix(unc.u.shape(0.0))).matrix();
    }
    if (with_roots && unc.w.shape.is_constant()) {
      w_root_const = sqrt_psd(SymMatrix(unc.w.shape(0.0))).matrix();
    }
    for (int j = 0; j < count; ++j) {
      Node& node = nodes_[j];
      node.t = grid.half_time(j);
      node.a = sys.a(node.t);
      node.b = sys.b(node.t);
      node.g = sys.g(node.t);
      node.u_center = unc.u.center(node.t).col(0);
      node.w_center = unc.w.center(node.t).col(0);
      const SymMatrix u_shape(unc.u.shape(node.t));
      const SymMatrix w_shape(unc.w.shape(node.t));
      node.bub = SymMatrix(node.b * u_shape.matrix() * node.b.transpose());
      node.gwg = SymMatrix(node.g * w_shape.matrix() * node.g.transpose());
      if (with_roots) {
        node.u_root = u_root_const ? *u_root_const : sqrt_psd(u_shape).matrix();
        node.w_root = w_root_const ? *w_root_const : sqrt_psd(w_shape).matrix();
      }
    }
  }

  int n() const { return n_; }
  const TimeGrid& grid() const { return grid_; }
  const Ellipsoid& x0() const { return x0_; }
  /// Node at half-step index j (t = t_start + j h / 2).
  const Node& node(int j) const { return nodes_[j]; }

 private:
  TimeGrid grid_;
  Ellipsoid x0_;
  int n_ = 0;
  std::vector<Node> nodes_;
};

/// How inputs and disturbances are realized along a sampled trajectory. The
/// normalized coordinate z (|z| <= 1) is held constant over each step and
/// mapped through the set at every stage time, so u(t) in U(t) at every
/// evaluated t.
enum class InputRealization {
  kStepwiseInterior,  // fresh uniform z per step
  kStepwiseBoundary,  // fresh |z| = 1 per step
  kHeldBoundary,      // one |z| = 1 for the whole trajectory
};

struct TrajectorySamplingOptions {
  bool initial_on_boundary = false;
  InputRealization inputs = InputRealization::kStepwiseInterior;
  bool record_inputs = false;
};

struct SampledTrajectory {
  std::vector<Vector> states;        // at snapshot steps
  std::vector<Vector> inputs;        // per step, at the step start (if recorded)
  std::vector<Vector> disturbances;  // per step, at the step start (if recorded)
};

class TrajectorySampler {
 public:
  TrajectorySampler(const LtvSystem& sys, const UncertaintySpec& unc, const TimeGrid& grid)
      : model_(sys, unc, grid, /*with_roots=*/true),
        x0_root_(sqrt_psd(unc.x0.shape()).matrix()),
        m_(sys.m),
        p_(sys.p) {}

  SampledTrajectory sample(CounterRng rng, const TrajectorySamplingOptions& opt = {}) const {
    const TimeGrid& grid = model_.grid();
    const int n = model_.n();
    SampledTrajectory out;
    const Vector z0 = opt.initial_on_boundary ? rng.unit_vector(n) : rng.unit_ball(n);
    Vector x = model_.x0().center() + x0_root_ * z0;

    Vector zu = Vector::Zero(m_);
    Vector zw = Vector::Zero(p_);
    auto draw = [&](int d) -> Vector {
      if (d == 0) return Vector::Zero(0);
      return opt.inputs == InputRealization::kStepwiseInterior ? rng.unit_ball(d)
                                                               : rng.unit_vector(d);
    };
    if (opt.inputs == InputRealization::kHeldBoundary) {
      zu = draw(m_);
      zw = draw(p_);
    }

    std::size_t next_snapshot = 0;
    const auto& snaps = grid.snapshot_steps();
    auto record_state = [&](int step) {
      if (next_snapshot < snaps.size() && snaps[next_snapshot] == step) {
        out.states.push_back(x);
        ++next_snapshot;
      }
    };
    record_state(0);
    const double h = grid.h();
    for (int k = 0; k < grid.steps(); ++k) {
      if (opt.inputs != InputRealization::kHeldBoundary) {
        zu = draw(m_);
        zw = draw(p_);
      }
      auto rhs = [&](int j, const Vector& y) -> Vector {
        const auto& nd = model_.node(j);
        Vector dy = nd.a * y;
        if (m_ > 0) dy += nd.b * (nd.u_center + nd.u_root * zu);
        if (p_ > 0) dy += nd.g * (nd.w_center + nd.w_root * zw);
        return dy;
      };
      if (opt.record_inputs) {
        const auto& nd = model_.node(2 * k);
        out.inputs.push_back(m_ > 0 ? Vector(nd.u_center + nd.u_root * zu) : Vector());
        out.disturbances.push_back(p_ > 0 ? Vector(nd.w_center + nd.w_root * zw) : Vector());
      }
      const Vector k1 = rhs(2 * k, x);
      const Vector k2 = rhs(2 * k + 1, x + 0.5 * h * k1);
      const Vector k3 = rhs(2 * k + 1, x + 0.5 * h * k2);
      const Vector k4 = rhs(2 * k + 2, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      record_state(k + 1);
    }
    return out;
  }

  const DiscretizedModel& model() const { return model_; }

 private:
  DiscretizedModel model_;
  Matrix x0_root_;
  int m_;
  int p_;
};

/// One admissible trajectory; deterministic in `seed`.
inline SampledTrajectory sample_trajectory(const LtvSystem& sys, const UncertaintySpec& unc,
                                           const TimeGrid& grid, std::uint64_t seed,
                                           const TrajectorySamplingOptions& opt = {}) {
  return TrajectorySampler(sys, unc, grid).sample(CounterRng(seed), opt);
}

/// `count` trajectories; trajectory j uses stream j of `seed`, so the result
/// does not depend on the worker count.
inline std::vector<SampledTrajectory> sample_trajectories(
    const TrajectorySampler& sampler, int count, std::uint64_t seed,
    const TrajectorySamplingOptions& opt = {}, int workers = 1) {
  std::vector<SampledTrajectory> out(std::max(0, count));
  const CounterRng base(seed);
  parallel_for(count, workers, [&](int j) {
    out[j] = sampler.sample(base.split(static_cast<std::uint64_t>(j)), opt);
  });
  return out;
}

}  // namespace ellreach
