#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ellreach/check.hpp"
#include "ellreach/propagation.hpp"
#include "oracles.hpp"

namespace ellreach {
namespace {

LtvSystem constant_system(const Matrix& a, const Matrix& b, const Matrix& g) {
  LtvSystem sys;
  sys.n = static_cast<int>(a.rows());
  sys.m = static_cast<int>(b.cols());
  sys.p = static_cast<int>(g.cols());
  sys.a = TimeFunction::Constant(a);
  sys.b = TimeFunction::Constant(b);
  sys.g = TimeFunction::Constant(g);
  return sys;
}

SetFunction empty_set() { return SetFunction::Constant(Vector(0), Matrix(0, 0)); }

/// n = 1, A = 0, B = 1, U = [-1, 1], X0 = [-1, 1]: X(t) = (1 + t)^2.
struct ScalarIntegrator {
  LtvSystem sys = constant_system(Matrix::Zero(1, 1), Matrix::Ones(1, 1), Matrix::Zero(1, 0));
  UncertaintySpec unc{Ellipsoid::Ball(Vector::Zero(1), 1.0),
                      SetFunction::Constant(Vector::Zero(1), Matrix::Ones(1, 1)), empty_set()};
};

TEST(PropagateCenterTest, Examples) {
  std::mt19937_64 gen(41);
  const Vector x0 = Eigen::Vector2d(1.0, -2.0);
  const UncertaintySpec unc{Ellipsoid::Ball(x0, 1.0), empty_set(), empty_set()};
  const TimeGrid grid(0.0, 1.0, 1e-3, 3);
  const auto zero = propagate_center(constant_system(Matrix::Zero(2, 2), Matrix::Zero(2, 0), Matrix::Zero(2, 0)), unc, grid);
  for (const Vector& c : zero) EXPECT_EQ(c, x0);

  const auto moving = propagate_center(
      constant_system(oracle::random_matrix(gen, 2, 2), Matrix::Zero(2, 0), Matrix::Zero(2, 0)), unc, grid);
  EXPECT_EQ(moving.front(), x0);

  const UncertaintySpec scalar{Ellipsoid::Ball(Vector::Ones(1), 1.0), empty_set(), empty_set()};
  const auto decay = propagate_center(
      constant_system(-Matrix::Ones(1, 1), Matrix::Zero(1, 0), Matrix::Zero(1, 0)), scalar, TimeGrid(0.0, 1.0, 1e-3));
  EXPECT_NEAR(decay.back()(0), std::exp(-1.0), 1e-6);
}

TEST(AdjointDirectionTest, Examples) {
  const TimeGrid grid(0.0, 1.0, 1e-3);
  const Vector l0 = Eigen::Vector2d(0.6, 0.8);
  for (const Vector& l : adjoint_direction(constant_system(Matrix::Zero(2, 2), Matrix::Zero(2, 0), Matrix::Zero(2, 0)), l0, grid)) {
    EXPECT_EQ(l, l0);
  }
  const auto scalar = adjoint_direction(
      constant_system(Matrix::Constant(1, 1, 0.7), Matrix::Zero(1, 0), Matrix::Zero(1, 0)), Vector::Ones(1), grid);
  EXPECT_NEAR(scalar.back()(0), std::exp(-0.7), 1e-10);

  std::mt19937_64 gen(42);
  const Matrix a = oracle::random_matrix(gen, 3, 3);
  const Vector l3 = oracle::random_unit(gen, 3);
  const auto path = adjoint_direction(constant_system(a, Matrix::Zero(3, 0), Matrix::Zero(3, 0)), l3, grid);
  for (int k : {0, 250, 1000}) {
    const Vector expected = oracle::expm(-a.transpose() * grid.time(k)) * l3;
    EXPECT_LT((path[k] - expected).norm(), 1e-7);
  }
}

TEST(PiCoefficientTest, Examples) {
  std::mt19937_64 gen(43);
  const SymMatrix x(oracle::random_spd(gen, 3));
  const Vector l = oracle::random_unit(gen, 3);
  EXPECT_NEAR(pi_coefficient(l, x, x).value, 1.0, 1e-14);
  EXPECT_NEAR(pi_coefficient(l, 4.0 * x, x).value, 2.0, 1e-14);
  const PiCoefficient zero = pi_coefficient(l, SymMatrix::Zero(3), x);
  EXPECT_TRUE(zero.degenerate);
  EXPECT_EQ(zero.value, 0.0);
  // Through B U B^T with a singular U along l.
  const PiCoefficient flat = pi_coefficient(Eigen::Vector2d(1.0, 0.0), Matrix::Identity(2, 2),
                                            SymMatrix::Diagonal(Eigen::Vector2d(0.0, 1.0)),
                                            SymMatrix::Identity(2));
  EXPECT_TRUE(flat.degenerate);
  EXPECT_THROW(pi_coefficient(l, x, SymMatrix::Zero(3)), PropagationError);
}

TEST(OrthogonalAlignerTest, Examples) {
  const Vector e1 = Eigen::Vector2d(1.0, 0.0);
  EXPECT_EQ(orthogonal_aligner(e1, e1), Matrix::Identity(2, 2));
  const Matrix s = orthogonal_aligner(-e1, e1);
  EXPECT_LT((s - Matrix(Eigen::Vector2d(-1.0, 1.0).asDiagonal())).norm(), 1e-15);
  EXPECT_THROW(orthogonal_aligner(Eigen::Vector2d(2.0, 0.0), e1), PropagationError);

  std::mt19937_64 gen(44);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector v2 = oracle::random_unit(gen, 12);
    const Vector v1 = oracle::random_unit(gen, 12);
    const Matrix q = orthogonal_aligner(v2, v1);
    EXPECT_LT((q * q.transpose() - Matrix::Identity(12, 12)).norm(), 1e-10);
    EXPECT_LT((q * v2 - v1).norm(), 1e-10);
  }
}

TEST(ShapeOdeTermsTest, Invariants) {
  std::mt19937_64 gen(45);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    const SymMatrix x(oracle::random_spd(gen, n));
    const SymMatrix bub(oracle::random_spd(gen, n));
    const SymMatrix gwg(oracle::random_spd(gen, n));
    const Vector l = oracle::random_unit(gen, n);
    const ShapeOdeTerms t = shape_ode_terms(l, x, bub, gwg);
    EXPECT_GT(t.pi, 0.0);
    EXPECT_NEAR(t.v1.norm(), 1.0, 1e-10);
    EXPECT_NEAR(t.v2.norm(), 1.0, 1e-10);
    EXPECT_LT((t.s * t.s.transpose() - Matrix::Identity(n, n)).norm(), 1e-10);
    EXPECT_LT((t.s * t.v2 - t.v1).norm(), 1e-9);
  }
  const ShapeOdeTerms none = shape_ode_terms(Eigen::Vector2d(1, 0), SymMatrix::Identity(2),
                                             SymMatrix::Zero(2), SymMatrix::Zero(2));
  EXPECT_TRUE(none.control_degenerate);
  EXPECT_TRUE(none.disturbance_degenerate);
  EXPECT_EQ(none.s, Matrix::Identity(2, 2));
}

TEST(ShapeRhsTest, Examples) {
  const LtvSystem still = constant_system(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(2, 1));
  const UncertaintySpec unc{Ellipsoid::Ball(Vector::Zero(2), 1.0),
                            SetFunction::Constant(Vector::Zero(1), Matrix::Zero(1, 1)),
                            SetFunction::Constant(Vector::Zero(1), Matrix::Zero(1, 1))};
  for (DisturbanceTerm mode : {DisturbanceTerm::kAdditive, DisturbanceTerm::kSubtractive}) {
    EXPECT_EQ(shape_rhs(0.0, SymMatrix::Identity(2), Eigen::Vector2d(1, 0), still, unc, mode),
              Matrix::Zero(2, 2));
  }

  const ScalarIntegrator s;
  const Matrix rhs = shape_rhs(0.0, SymMatrix::Identity(1), Vector::Ones(1), s.sys, s.unc);
  EXPECT_NEAR(rhs(0, 0), 2.0, 1e-15);

  const LtvSystem lin = constant_system(Matrix::Constant(1, 1, -0.3), Matrix::Zero(1, 0), Matrix::Zero(1, 0));
  const UncertaintySpec lin_unc{Ellipsoid::Ball(Vector::Zero(1), 1.0), empty_set(), empty_set()};
  EXPECT_NEAR(shape_rhs(0.0, 2.0 * SymMatrix::Identity(1), Vector::Ones(1), lin, lin_unc)(0, 0), -1.2, 1e-15);
  EXPECT_THROW(shape_rhs(0.0, SymMatrix::Zero(1), Vector::Ones(1), lin, lin_unc), PropagationError);

  // l blind to the input: the term stays, with pi = sqrt(tr BUB^T / tr X).
  const LtvSystem side = constant_system(Matrix::Zero(2, 2), Matrix(Eigen::Vector2d(0, 1)), Matrix::Zero(2, 0));
  const UncertaintySpec side_unc{Ellipsoid::Ball(Vector::Zero(2), 1.0),
                                 SetFunction::Constant(Vector::Zero(1), Matrix::Constant(1, 1, 2.0)), empty_set()};
  const Matrix blind = shape_rhs(0.0, SymMatrix::Identity(2), Eigen::Vector2d(1, 0), side, side_unc);
  EXPECT_NEAR(blind(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(blind(1, 1), 3.0, 1e-15);
}

TEST(PropagateFamilyTest, DirectionBlindToDisturbanceStaysExternal) {
  // The disturbance drives only the second state and l(t) = e1 never sees
  // it; the member must still enclose the spread it causes.
  const LtvSystem sys = constant_system(Matrix::Zero(2, 2), Matrix::Zero(2, 0), Matrix(Eigen::Vector2d(0, 1)));
  const UncertaintySpec unc{Ellipsoid::Ball(Vector::Zero(2), 0.1), empty_set(),
                            SetFunction::Constant(Vector::Zero(1), Matrix::Ones(1, 1))};
  const TimeGrid grid = TimeGrid::Equispaced(0.0, 1.0, 3, 100);
  const auto snaps = propagate_family(sys, unc, {Vector(Eigen::Vector2d(1, 0))}, grid);
  // A held w = +-1 reaches 0.1 + 1 along e2 at t = 1.
  EXPECT_GE(support(snaps.back().member(0), Eigen::Vector2d(0, 1)), 1.1 - 1e-9);
  const auto states = simulate_states(sys, unc, grid, 300, 9);
  EXPECT_TRUE(check_containment(grid.snapshot_times(), snapshot_sets(snaps), states, 1e-6).passed());
}

TEST(ShapeRhsTest, SubtractiveTermMatchesLiteralFormula) {
  std::mt19937_64 gen(46);
  const int n = 4;
  const Matrix a = oracle::random_matrix(gen, n, n);
  const Matrix b = oracle::random_matrix(gen, n, 2);
  const Matrix g = oracle::random_matrix(gen, n, 3);
  const Matrix u = oracle::random_spd(gen, 2);
  const Matrix w = oracle::random_spd(gen, 3);
  const LtvSystem sys = constant_system(a, b, g);
  const UncertaintySpec unc{Ellipsoid::Ball(Vector::Zero(n), 1.0), SetFunction::Constant(Vector::Zero(2), u),
                            SetFunction::Constant(Vector::Zero(3), w)};
  const Matrix x = oracle::random_spd(gen, n);
  const Vector l = oracle::random_unit(gen, n);

  const Matrix bub = b * u * b.transpose();
  const Matrix gwg = g * w * g.transpose();
  const Eigen::SelfAdjointEigenSolver<Matrix> es(x);
  const Matrix root = es.operatorSqrt();
  const double pi = std::sqrt(l.dot(bub * l) / l.dot(x * l));
  const Vector v1 = (root * l).normalized();
  const Vector v2 = (gwg * l).normalized();
  const Vector hw = v2 - v1;
  const Matrix s = Matrix::Identity(n, n) - 2.0 * hw * hw.transpose() / hw.squaredNorm();
  const Matrix literal = a * x + x * a.transpose() + pi * x + bub / pi - root * s * gwg -
                         gwg * s.transpose() * root;
  const Matrix got = shape_rhs(0.0, SymMatrix(x), l, sys, unc, DisturbanceTerm::kSubtractive);
  EXPECT_LT(oracle::rel_fro(got, literal), 1e-10);

  const double pw = std::sqrt(l.dot(gwg * l) / l.dot(x * l));
  const Matrix additive = a * x + x * a.transpose() + pi * x + bub / pi + pw * x + gwg / pw;
  EXPECT_LT(oracle::rel_fro(shape_rhs(0.0, SymMatrix(x), l, sys, unc), additive), 1e-12);
}

TEST(PropagateFamilyTest, ScalarIntegratorClosedForm) {
  const ScalarIntegrator s;
  const auto snaps = propagate_family(s.sys, s.unc, {Vector::Ones(1)}, TimeGrid(0.0, 1.0, 1e-3));
  ASSERT_EQ(snaps.size(), 2u);
  EXPECT_NEAR(snaps.back().shapes[0](0, 0), 4.0, 4.0 * 1e-5);
  EXPECT_EQ(snaps.front().shapes[0](0, 0), 1.0);
}

TEST(PropagateFamilyTest, ScalarExponentialGrowth) {
  const LtvSystem sys = constant_system(Matrix::Constant(1, 1, 0.4), Matrix::Zero(1, 0), Matrix::Zero(1, 0));
  const UncertaintySpec unc{Ellipsoid(Vector::Zero(1), SymMatrix(Matrix::Constant(1, 1, 2.0))), empty_set(), empty_set()};
  const auto snaps = propagate_family(sys, unc, {Vector::Ones(1)}, TimeGrid(0.0, 1.0, 1e-3));
  EXPECT_NEAR(snaps.back().shapes[0](0, 0), 2.0 * std::exp(0.8), 1e-9);
}

TEST(PropagateFamilyTest, HomogeneousMatchesMatrixExponential) {
  std::mt19937_64 gen(47);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + trial;
    const Matrix a = oracle::random_matrix(gen, n, n, 0.7);
    const Matrix x0 = oracle::random_spd(gen, n);
    const UncertaintySpec unc{Ellipsoid(Vector::Ones(n), SymMatrix(x0)), empty_set(), empty_set()};
    const TimeGrid grid(0.0, 1.0, 1e-3, 5);
    const auto dirs = default_directions(n, n + 2, 3);
    const auto snaps = propagate_family(constant_system(a, Matrix::Zero(n, 0), Matrix::Zero(n, 0)), unc, dirs, grid);
    for (const ReachSnapshot& snap : snaps) {
      const Matrix phi = oracle::expm(a * snap.t);
      const Matrix expected = phi * x0 * phi.transpose();
      EXPECT_LT((snap.center - phi * Vector::Ones(n)).norm(), 1e-9);
      for (const SymMatrix& x : snap.shapes) EXPECT_LT(oracle::rel_fro(x.matrix(), expected), 1e-6);
    }
  }
}

TEST(PropagateFamilyTest, ValidatesDirections) {
  const ScalarIntegrator s;
  const TimeGrid grid(0.0, 1.0, 0.1);
  EXPECT_THROW(propagate_family(s.sys, s.unc, {}, grid), PropagationError);
  EXPECT_THROW(propagate_family(s.sys, s.unc, {Vector::Constant(1, 2.0)}, grid), PropagationError);
  EXPECT_THROW(propagate_family(s.sys, s.unc, {Vector::Ones(1), Vector::Ones(1)}, grid), PropagationError);
  EXPECT_THROW(propagate_family(s.sys, s.unc, {Vector::Ones(2)}, grid), PropagationError);
}

struct RandomInstance {
  LtvSystem sys;
  UncertaintySpec unc;
};

RandomInstance random_instance(std::mt19937_64& gen, int n, bool time_varying) {
  RandomInstance r{constant_system(oracle::random_matrix(gen, n, n, 0.5), oracle::random_matrix(gen, n, 2),
                                   oracle::random_matrix(gen, n, 2)),
                   {Ellipsoid(oracle::random_matrix(gen, n, 1).col(0), SymMatrix(oracle::random_spd(gen, n))),
                    SetFunction::Constant(oracle::random_matrix(gen, 2, 1).col(0), oracle::random_spd(gen, 2)),
                    SetFunction::Constant(oracle::random_matrix(gen, 2, 1).col(0), 0.5 * oracle::random_spd(gen, 2))}};
  if (time_varying) {
    const Matrix a0 = oracle::random_matrix(gen, n, n, 0.5);
    const Matrix a1 = oracle::random_matrix(gen, n, n, 0.5);
    r.sys.a = TimeFunction::Closed(n, n, [a0, a1](double t) { return Matrix(a0 + std::sin(3.0 * t) * a1); });
    r.unc.u.center = TimeFunction::Closed(2, 1, [](double t) { return Matrix(Eigen::Vector2d(std::cos(t), t)); });
  }
  return r;
}

TEST(PropagateFamilyTest, MonteCarloContainmentAndTightness) {
  std::mt19937_64 gen(48);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 2 + trial;
    const RandomInstance inst = random_instance(gen, n, trial % 2 == 1);
    const TimeGrid grid = TimeGrid::Equispaced(0.0, 1.0, 5, 100);
    const auto snaps = propagate_family(inst.sys, inst.unc, default_directions(n, n + 3, 5), grid);
    const auto states = simulate_states(inst.sys, inst.unc, grid, 300, 1000 + trial);
    const ContainmentReport rep = check_containment(grid.snapshot_times(), snapshot_sets(snaps), states, 1e-3);
    EXPECT_TRUE(rep.passed()) << "trial " << trial << " worst " << rep.worst;

    for (std::size_t s = 0; s < snaps.size(); ++s) {
      std::vector<Vector> pts;
      for (const auto& tr : states) pts.push_back(tr[s]);
      for (int i = 0; i < snaps[s].size(); ++i) {
        EXPECT_EQ(count_support_violations(snaps[s].member(i), pts, snaps[s].directions[i], 1e-9), 0);
      }
    }
  }
}

TEST(PropagateFamilyTest, OrderAndWorkerIndependence) {
  std::mt19937_64 gen(49);
  const RandomInstance inst = random_instance(gen, 4, true);
  const TimeGrid grid(0.0, 0.5, 1e-3, 6);
  const auto dirs = default_directions(4, 7, 2);
  const auto serial = propagate_family(inst.sys, inst.unc, dirs, grid, {1, DisturbanceTerm::kAdditive});
  const auto pooled = propagate_family(inst.sys, inst.unc, dirs, grid, {4, DisturbanceTerm::kAdditive});
  auto reversed_dirs = dirs;
  std::reverse(reversed_dirs.begin(), reversed_dirs.end());
  const auto reversed = propagate_family(inst.sys, inst.unc, reversed_dirs, grid);
  for (std::size_t s = 0; s < serial.size(); ++s) {
    EXPECT_EQ(serial[s].center, pooled[s].center);
    for (int i = 0; i < 7; ++i) {
      EXPECT_EQ(serial[s].shapes[i].matrix(), pooled[s].shapes[i].matrix());
      EXPECT_EQ(serial[s].shapes[i].matrix(), reversed[s].shapes[6 - i].matrix());
    }
  }
}

TEST(PropagateFamilyTest, ShapesStaySymmetricPositiveDefinite) {
  std::mt19937_64 gen(50);
  RandomInstance inst = random_instance(gen, 5, true);
  auto expect_pd = [](const std::vector<ReachSnapshot>& snaps) {
    for (const ReachSnapshot& s : snaps) {
      for (const SymMatrix& x : s.shapes) {
        EXPECT_EQ(x.matrix(), x.matrix().transpose());
        EXPECT_GT(sym_eig(x).eigenvalues.minCoeff(), 0.0);
      }
    }
  };
  const TimeGrid grid(0.0, 1.0, 1e-3, 11);
  expect_pd(propagate_family(inst.sys, inst.unc, default_directions(5, 6, 1), grid,
                             {1, DisturbanceTerm::kAdditive}));
  // The subtractive term shrinks the tube, so it only stays PD while the
  // disturbance is weak compared to the input.
  inst.unc.w.shape = TimeFunction::Constant(1e-3 * Matrix::Identity(2, 2));
  expect_pd(propagate_family(inst.sys, inst.unc, default_directions(5, 6, 1), grid,
                             {1, DisturbanceTerm::kSubtractive}));
}

TEST(PropagateFamilyTest, SubtractiveCollapseIsReportedNotReturned) {
  std::mt19937_64 gen(50);
  const RandomInstance inst = random_instance(gen, 5, true);
  EXPECT_THROW(propagate_family(inst.sys, inst.unc, default_directions(5, 6, 1), TimeGrid(0.0, 1.0, 1e-3, 11),
                                {1, DisturbanceTerm::kSubtractive}),
               PropagationError);
}

TEST(MaintainPdTest, ClampsDriftAndAbortsOnCorruption) {
  const SymMatrix clamped = detail::maintain_pd(Matrix(Eigen::Vector2d(1.0, -1e-13).asDiagonal()), 3);
  EXPECT_GT(sym_eig(clamped).eigenvalues.minCoeff(), 0.0);
  EXPECT_THROW(detail::maintain_pd(Matrix(Eigen::Vector2d(1.0, -0.1).asDiagonal()), 3), PropagationError);
}

TEST(DefaultDirectionsTest, Examples) {
  const auto d = default_directions(3, 2, 1);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0], Vector::Unit(3, 0));
  EXPECT_EQ(d[1], Vector::Unit(3, 1));
  const auto a = default_directions(2, 5, 7);
  const auto b = default_directions(2, 5, 7);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i], b[i]);
  const auto q = default_directions(12, 10, 1);
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_NEAR(q[i].norm(), 1.0, 1e-12);
    for (std::size_t j = 0; j < i; ++j) EXPECT_LT(std::abs(q[i].dot(q[j])), 0.999);
  }
  const auto longer = default_directions(2, 8, 7);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i], longer[i]);
}

}  // namespace
}  // namespace ellreach
