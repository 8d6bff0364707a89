#pragma once

// Linearized hover model of a quadrotor, a finite-horizon LQ tracking
// controller, and the resulting closed-loop LTV system with ellipsoidal
// estimation-error, disturbance and initial-state sets.
//
// State layout follows the block structure of the model matrices:
//   0-2 positions (x, y, z), 3-5 Euler angles (phi, theta, psi),
//   6-8 translational velocities, 9-11 angular rates.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellreach/ellipsoid.hpp"
#include "ellreach/linalg.hpp"
#include "ellreach/model.hpp"

namespace ellreach::quadrotor {

inline constexpr int kStates = 12;
inline constexpr int kInputs = 4;
inline constexpr int kDisturbances = 3;

struct Params {
  double mass = 0.468;          // kg
  double arm_length = 0.225;    // m
  double jxx = 5e-3;            // N m s^2
  double jyy = 5e-3;
  double jzz = 9e-3;
  double thrust_coeff = 7.2e-5; // N s^2
  double drag_coeff = 1.1e-5;   // N m s^2
  double gravity = 9.81;        // m / s^2

  void validate() const {
    for (double v : {mass, arm_length, jxx, jyy, jzz, thrust_coeff, drag_coeff, gravity}) {
      if (!(v > 0.0)) throw std::invalid_argument("quadrotor::Params: all parameters must be positive");
    }
  }
};

struct OpenLoop {
  Matrix a;  // 12 x 12
  Matrix b;  // 12 x 4
  Matrix g;  // 12 x 3
};

inline OpenLoop build_open_loop(const Params& p) {
  p.validate();
  OpenLoop ol{Matrix::Zero(kStates, kStates), Matrix::Zero(kStates, kInputs),
              Matrix::Zero(kStates, kDisturbances)};
  ol.a.block(0, 6, 3, 3).setIdentity();
  ol.a.block(3, 9, 3, 3).setIdentity();
  // Gravity coupling of attitude into translational acceleration.
  ol.a(6, 4) = -p.gravity;
  ol.a(7, 3) = p.gravity;

  ol.b.row(8).setConstant(p.thrust_coeff / p.mass);
  const double roll = p.arm_length * p.thrust_coeff / p.jxx;
  const double pitch = p.arm_length * p.thrust_coeff / p.jyy;
  const double yaw = p.drag_coeff / p.jzz;
  ol.b.row(9) << roll, 0.0, -roll, 0.0;
  ol.b.row(10) << 0.0, pitch, 0.0, -pitch;
  ol.b.row(11) << yaw, -yaw, yaw, -yaw;

  ol.g.block(6, 0, 3, 3).setIdentity();
  return ol;
}

/// Squared rotor speeds balancing weight with zero net torque.
inline Eigen::Vector4d nominal_rotor_speeds(const Params& p) {
  p.validate();
  const double ct = p.thrust_coeff;
  const double lct = p.arm_length * ct;
  const double cd = p.drag_coeff;
  Eigen::Matrix4d mixer;
  mixer << ct, ct, ct, ct,
           lct, 0.0, -lct, 0.0,
           0.0, lct, 0.0, -lct,
           cd, -cd, cd, -cd;
  const Eigen::FullPivLU<Eigen::Matrix4d> lu(mixer);
  if (!lu.isInvertible()) throw std::runtime_error("nominal_rotor_speeds: singular mixer");
  return lu.solve(Eigen::Vector4d(p.mass * p.gravity, 0.0, 0.0, 0.0));
}

struct Weights {
  Matrix q;  // state
  Matrix r;  // control
  Matrix m;  // terminal

  static Weights Default() {
    Vector qd(kStates);
    qd << 1000, 1000, 1000, 1, 1, 10, 1, 1, 1, 1, 1, 1;
    Vector md = Vector::Ones(kStates);
    md.head(3).setConstant(1000.0);
    return {Matrix(qd.asDiagonal()), 0.1 * Matrix::Identity(kInputs, kInputs),
            Matrix(md.asDiagonal())};
  }
};

/// Uniform node times on [0, horizon].
inline std::vector<double> uniform_nodes(double horizon, int steps) {
  if (!(horizon > 0.0) || steps < 1) throw std::invalid_argument("uniform_nodes: bad grid");
  std::vector<double> t(steps + 1);
  for (int k = 0; k <= steps; ++k) t[k] = horizon * k / steps;
  return t;
}

/// Backward RK4 of  -P' = A^T P + P A - P B R^{-1} B^T P + Q,  P(T) = M,
/// on uniform nodes. P is symmetrized at every node.
inline std::vector<SymMatrix> solve_riccati(const Matrix& a, const Matrix& b, const Matrix& q,
                                            const Matrix& r, const Matrix& m,
                                            const std::vector<double>& nodes) {
  const SymMatrix rs(r);
  if (!is_positive_definite(rs)) throw std::invalid_argument("solve_riccati: R must be PD");
  const Matrix s = b * solve_spd(rs, Matrix(b.transpose()));
  auto rhs = [&](double, const Matrix& p) -> Matrix {
    return -(a.transpose() * p + p * a - p * s * p + q);
  };
  std::vector<SymMatrix> out(nodes.size());
  out.back() = SymMatrix(m);
  Matrix p = out.back().matrix();
  for (std::size_t k = nodes.size() - 1; k > 0; --k) {
    const double h = nodes[k - 1] - nodes[k];  // negative: integrate backward
    p = rk4_step<Matrix>(rhs, nodes[k], p, h);
    out[k - 1] = SymMatrix(p);
    p = out[k - 1].matrix();
    if (!is_positive_definite(out[k - 1])) {
      throw std::runtime_error("solve_riccati: P lost positive definiteness at t = " +
                               std::to_string(nodes[k - 1]) + "; refine the grid");
    }
  }
  return out;
}

using VectorPath = std::function<Vector(double)>;

/// Backward RK4 of  v' = -(A - B R^{-1} B^T P(t))^T v - Q x_d(t),
/// v(T) = M x_d(T). P is linearly interpolated between nodes.
inline std::vector<Vector> solve_feedforward(const Matrix& a, const Matrix& b, const Matrix& q,
                                             const Matrix& r, const Matrix& m,
                                             const std::vector<SymMatrix>& p,
                                             const VectorPath& desired,
                                             const std::vector<double>& nodes) {
  if (p.size() != nodes.size()) {
    throw std::invalid_argument("solve_feedforward: P grid does not match nodes");
  }
  const Matrix s = b * solve_spd(SymMatrix(r), Matrix(b.transpose()));
  std::vector<Vector> out(nodes.size());
  out.back() = m * desired(nodes.back());
  Vector v = out.back();
  for (std::size_t k = nodes.size() - 1; k > 0; --k) {
    const double t1 = nodes[k];
    const double t0 = nodes[k - 1];
    const Matrix& p1 = p[k].matrix();
    const Matrix& p0 = p[k - 1].matrix();
    auto rhs = [&](double t, const Vector& y) -> Vector {
      const double w = (t - t0) / (t1 - t0);
      const Matrix pt = (1.0 - w) * p0 + w * p1;
      return -((a - s * pt).transpose() * y) - q * desired(t);
    };
    v = rk4_step<Vector>(rhs, t1, v, t0 - t1);
    out[k - 1] = v;
  }
  return out;
}

/// Positions (cos t, sin t, t) with matching velocities; zeros elsewhere.
inline Vector desired_state(double t) {
  Vector x = Vector::Zero(kStates);
  x.head(3) << std::cos(t), std::sin(t), t;
  x.segment(6, 3) << -std::sin(t), std::cos(t), 1.0;
  return x;
}

struct LqTracking {
  OpenLoop plant;
  Weights weights;
  double horizon = 1.0;
  std::vector<double> nodes;
  std::vector<SymMatrix> p;
  std::vector<Vector> v;
  Matrix r_inv_bt;  // R^{-1} B^T

  /// K(t) = -R^{-1} B^T P(t) at node k.
  Matrix gain(std::size_t k) const { return -r_inv_bt * p.at(k).matrix(); }
  /// R^{-1} B^T v(t) at node k.
  Vector feedforward(std::size_t k) const { return r_inv_bt * v.at(k); }

  TimeFunction p_function() const {
    std::vector<Matrix> vals;
    for (const SymMatrix& s : p) vals.push_back(s.matrix());
    return TimeFunction::Grid(nodes, std::move(vals));
  }
  TimeFunction v_function() const {
    std::vector<Matrix> vals(v.begin(), v.end());
    return TimeFunction::Grid(nodes, std::move(vals));
  }
};

inline LqTracking build_tracking(const Params& params, const Weights& weights = Weights::Default(),
                                 double horizon = 1.0, int steps = 2000,
                                 const VectorPath& desired = desired_state) {
  LqTracking lq;
  lq.plant = build_open_loop(params);
  lq.weights = weights;
  lq.horizon = horizon;
  lq.nodes = uniform_nodes(horizon, steps);
  lq.p = solve_riccati(lq.plant.a, lq.plant.b, weights.q, weights.r, weights.m, lq.nodes);
  lq.v = solve_feedforward(lq.plant.a, lq.plant.b, weights.q, weights.r, weights.m, lq.p,
                           desired, lq.nodes);
  lq.r_inv_bt = solve_spd(SymMatrix(weights.r), Matrix(lq.plant.b.transpose()));
  return lq;
}

/// Uncertainty description of the closed loop.
struct ClosedLoopSetup {
  Vector x0 = Vector::Unit(kStates, 0);
  Vector x0_shape_diag = (Vector(kStates) << 0.8147, 0.4854, 0.7431, 0.0344, 0.6551, 0.9593,
                          0.6160, 0.0540, 0.1656, 0.9961, 0.4314, 0.5132).finished();
  std::function<Matrix(double)> estimation_error_shape = [](double) {
    return Matrix(Matrix::Identity(kStates, kStates));
  };
  std::function<Matrix(double)> disturbance_center = [](double t) {
    return Matrix((Vector(kDisturbances) << std::cos(t), std::sin(t), std::cos(t)).finished());
  };
  Matrix disturbance_shape = 0.01 * Matrix::Identity(kDisturbances, kDisturbances);
};

struct ClosedLoop {
  LtvSystem system;
  UncertaintySpec uncertainty;
};

/// x' = (A + B K(t)) x + B R^{-1} B^T eta + G w with eta in E(v(t), P E P^T)
/// and w in E(w_c(t), W). The input dimension of the closed loop is 12.
inline ClosedLoop build_closed_loop(const LqTracking& lq, const ClosedLoopSetup& setup = {}) {
  const std::size_t count = lq.nodes.size();
  if (lq.p.size() != count || lq.v.size() != count) {
    throw std::invalid_argument("build_closed_loop: tracking grids do not match");
  }
  std::vector<Matrix> a_cl, v_center, v_shape;
  for (std::size_t k = 0; k < count; ++k) {
    a_cl.push_back(lq.plant.a + lq.plant.b * lq.gain(k));
    v_center.push_back(lq.v[k]);
    const Matrix& p = lq.p[k].matrix();
    v_shape.push_back(SymMatrix(p * setup.estimation_error_shape(lq.nodes[k]) * p.transpose()).matrix());
  }
  LtvSystem sys;
  sys.n = kStates;
  sys.m = kStates;
  sys.p = kDisturbances;
  sys.a = TimeFunction::Grid(lq.nodes, std::move(a_cl));
  sys.b = TimeFunction::Constant(lq.plant.b * lq.r_inv_bt);
  sys.g = TimeFunction::Constant(lq.plant.g);

  UncertaintySpec unc{
      Ellipsoid(setup.x0, SymMatrix::Diagonal(setup.x0_shape_diag)),
      SetFunction{TimeFunction::Grid(lq.nodes, std::move(v_center)),
                  TimeFunction::Grid(lq.nodes, std::move(v_shape))},
      SetFunction{TimeFunction::Closed(kDisturbances, 1, setup.disturbance_center),
                  TimeFunction::Constant(setup.disturbance_shape)}};
  sys.validate();
  unc.validate(sys);
  return {std::move(sys), std::move(unc)};
}

/// Closed loop with every default (parameters, weights, sets, 1 s horizon).
inline ClosedLoop default_closed_loop(const Params& params = {}) {
  return build_closed_loop(build_tracking(params));
}

}  // namespace ellreach::quadrotor
