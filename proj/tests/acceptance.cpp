// Acceptance run: one PASS/FAIL line per criterion. Criteria 1-7 run twice,
// with one and with four workers, and criterion 9 compares every numerical
// output of the two runs bit for bit. Criterion 8 is reported but not gated.

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ellreach/anytime.hpp"
#include "ellreach/check.hpp"
#include "ellreach/fusion.hpp"
#include "ellreach/propagation.hpp"
#include "ellreach/quadrotor.hpp"
#include "oracles.hpp"

namespace ellreach {
namespace {

using Clock = std::chrono::steady_clock;

const std::vector<int> kXyz = {0, 1, 2};

/// Everything a criterion produced, flattened for the determinism check.
struct Digest {
  std::vector<std::uint64_t> bits;
  void add(double v) { bits.push_back(std::bit_cast<std::uint64_t>(v)); }
  void add(const Matrix& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) add(m.data()[k]);
  }
  void add(const Ellipsoid& e) {
    add(Matrix(e.center()));
    add(e.shape().matrix());
  }
  void add(const std::vector<ReachSnapshot>& snaps) {
    for (const ReachSnapshot& s : snaps) {
      add(Matrix(s.center));
      for (const SymMatrix& x : s.shapes) add(x.matrix());
    }
  }
};

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

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

/// Quadrotor closed loop with every default setting, shared by 3-7.
struct Quadrotor {
  quadrotor::ClosedLoop d = quadrotor::default_closed_loop();
  TimeGrid grid = TimeGrid::Equispaced(0.0, 1.0, 10);
  std::vector<Vector> dirs = default_directions(12, 10, 1);
  std::vector<ReachSnapshot> snaps;
  std::vector<std::vector<Vector>> states;  // 2000 trajectories at the snapshots
};

std::unique_ptr<Quadrotor> build_quadrotor(int workers) {
  auto q = std::make_unique<Quadrotor>();
  q->snaps = propagate_family(q->d.system, q->d.uncertainty, q->dirs, q->grid, {workers, DisturbanceTerm::kAdditive});
  q->states = simulate_states(q->d.system, q->d.uncertainty, q->grid, 2000, 7, workers);
  return q;
}

// 1. Scalar exactness.
Outcome scalar_exactness(int workers, Digest& dg) {
  const auto start = Clock::now();
  const LtvSystem sys = constant_system(Matrix::Zero(1, 1), Matrix::Ones(1, 1), Matrix::Zero(1, 0));
  const UncertaintySpec unc{Ellipsoid::Ball(Vector::Zero(1), 1.0),
                            SetFunction::Constant(Vector::Zero(1), Matrix::Ones(1, 1)), empty_set()};
  const auto snaps = propagate_family(sys, unc, default_directions(1, 1, 1), TimeGrid(0.0, 1.0, 1e-3),
                                      {workers, DisturbanceTerm::kAdditive});
  const double x1 = snaps.back().shapes[0](0, 0);
  dg.add(snaps);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const double rel = std::abs(x1 - 4.0) / 4.0;
  return {rel < 1e-5 && secs < 1.0, "X(1) = " + fmt("%.15g", x1) + ", relative error " + fmt("%.2e", rel)};
}

// 2 and the first half of 4: homogeneous exactness and tightness.
struct Homogeneous {
  Outcome exact;
  bool tight = true;
  double worst_support = 0.0;
};

Homogeneous homogeneous(int workers, Digest& dg) {
  const auto start = Clock::now();
  std::mt19937_64 gen(2024);
  Homogeneous out;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 6;
    const Matrix a = oracle::random_matrix(gen, n, n, 0.5);
    const Ellipsoid x0(oracle::random_matrix(gen, n, 1).col(0), SymMatrix(oracle::random_spd(gen, n)));
    const UncertaintySpec unc{x0, empty_set(), empty_set()};
    // A line has one direction up to sign.
    const auto dirs = default_directions(n, n == 1 ? 1 : n + 2, 3 + trial);
    const auto snaps = propagate_family(constant_system(a, Matrix(n, 0), Matrix(n, 0)), unc, dirs,
                                        TimeGrid::Equispaced(0.0, 1.0, 5, 250), {workers, DisturbanceTerm::kAdditive});
    dg.add(snaps);
    for (std::size_t s = 0; s < snaps.size(); ++s) {
      const double t = s / 4.0;
      const Matrix phi = oracle::expm(t * a);
      const Matrix truth = phi * x0.shape().matrix() * phi.transpose();
      const Vector center = phi * x0.center();
      for (int i = 0; i < snaps[s].size(); ++i) {
        worst = std::max(worst, oracle::rel_fro(snaps[s].shapes[i].matrix(), truth));
        // Support of the exact reach set along l_i(t) = Phi^{-T} l_i(0).
        const Vector l = phi.transpose().fullPivLu().solve(dirs[i]);
        const double exact = l.dot(center) + std::sqrt(l.dot(truth * l));
        const double err = std::abs(support(snaps[s].member(i), l) - exact) / std::max(1.0, std::abs(exact));
        out.worst_support = std::max(out.worst_support, err);
      }
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  out.exact = {worst < 1e-6 && secs < 10.0, "worst relative Frobenius error " + fmt("%.2e", worst)};
  out.tight = out.worst_support < 1e-6;
  return out;
}

// 3 and the second half of 4.
struct QuadrotorChecks {
  Outcome containment;
  int support_violations = 0;
};

QuadrotorChecks quadrotor_containment(const Quadrotor& q, Digest& dg) {
  QuadrotorChecks out;
  const auto times = q.grid.snapshot_times();
  const ContainmentReport full = check_containment(times, snapshot_sets(q.snaps), q.states, 1e-3);
  const ContainmentReport xyz = check_containment(times, snapshot_sets(q.snaps, kXyz), q.states, 1e-3, kXyz);
  dg.add(q.snaps);
  for (double f : full.max_form) dg.add(f);
  for (double f : xyz.max_form) dg.add(f);
  out.containment = {full.passed() && xyz.passed(),
                     "worst quadratic form " + fmt("%.6f", full.worst) + " (12D), " + fmt("%.6f", xyz.worst) +
                         " (xyz) over 2000 trajectories"};
  for (std::size_t s = 0; s < q.snaps.size(); ++s) {
    std::vector<Vector> pts;
    for (const auto& tr : q.states) pts.push_back(tr[s]);
    for (int i = 0; i < q.snaps[s].size(); ++i) {
      out.support_violations += count_support_violations(q.snaps[s].member(i), pts, q.snaps[s].directions[i], 1e-9);
    }
  }
  return out;
}

// 5. Fusion soundness and optimality.
Outcome fusion_checks(const Quadrotor& q, Digest& dg) {
  const auto start = Clock::now();
  std::ostringstream detail;
  bool pass = true;

  const FusionResult balls =
      fuse_common_center({Vector::Zero(2), {SymMatrix::Identity(2), SymMatrix(4.0 * Matrix::Identity(2, 2))}});
  const double vol_err = std::abs(volume(balls.ellipsoid) - std::acos(-1.0));
  const bool a_ok = balls.certificate.tau == std::vector<double>{1.0, 0.0} && vol_err < 1e-9;
  pass &= a_ok;
  detail << "(a) " << (a_ok ? "ok" : "FAILED");

  const SymMatrix x1 = SymMatrix::Diagonal(Vector(Eigen::Vector2d(1.0, 100.0)));
  const SymMatrix x2 = SymMatrix::Diagonal(Vector(Eigen::Vector2d(100.0, 1.0)));
  const FusionResult crossed = fuse_common_center({Vector::Zero(2), {x1, x2}});
  const oracle::ScanResult scan = oracle::simplex_scan(x1.matrix().inverse(), x2.matrix().inverse(), 1e-4);
  const double ld_err = std::abs(crossed.logdet - scan.logdet);
  pass &= ld_err < 1e-6;
  detail << "; (b) logdet error " << fmt("%.1e", ld_err);

  std::mt19937_64 gen(55);
  int uncontained = 0, uncertified = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int d = 1 + inst % 6;
    const int count = 1 + (inst * 7 / 6) % 8;
    FusionInput inp{oracle::random_matrix(gen, d, 1).col(0), {}};
    for (int i = 0; i < count; ++i) inp.shapes.emplace_back(oracle::random_spd(gen, d, 0.05, 4.0));
    const FusionResult r = fuse_common_center(inp);
    dg.add(r.ellipsoid);
    uncertified += !check_certificate(r.certificate, inp.quadratic_forms()).ok;
    for (IntersectionSampling mode : {IntersectionSampling::kRadial, IntersectionSampling::kBoundary}) {
      for (const Vector& x : sample_intersection(inp, 500, 1000 + inst, mode)) {
        uncontained += !contains(r.ellipsoid, x, 1e-9);
      }
    }
  }
  pass &= uncontained == 0 && uncertified == 0;
  detail << "; (c) " << uncontained << " uncontained points, " << uncertified << " uncertified of 200";

  int increases = 0;
  for (const ReachSnapshot& s : q.snaps) {
    double previous = INFINITY;
    for (int n = 1; n <= s.size(); ++n) {
      FusionInput inp{s.center, {s.shapes.begin(), s.shapes.begin() + n}};
      const FusionResult r = fuse_common_center(inp.project(kXyz));
      dg.add(r.ellipsoid);
      const double v = volume(r.ellipsoid);
      increases += v > previous * (1.0 + 1e-9);
      previous = v;
    }
  }
  pass &= increases == 0;
  detail << "; (d) " << increases << " volume increases";

  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  pass &= secs < 120.0;
  return {pass, detail.str()};
}

// 6. Projection chain.
Outcome projection_chain(const Quadrotor& q, Digest& dg) {
  const FusionInput full = FusionInput::FromSnapshot(q.snaps.back());
  const FusionResult projected = fuse_common_center(full.project(kXyz));
  dg.add(projected.ellipsoid);
  int outside = 0;
  double worst = 0.0;
  for (IntersectionSampling mode : {IntersectionSampling::kRadial, IntersectionSampling::kBoundary}) {
    for (const Vector& x : sample_intersection(full, 5000, 66, mode)) {
      const Vector p = x.head(3);
      worst = std::max(worst, normalized_distance(projected.ellipsoid, p));
      outside += !contains(projected.ellipsoid, p, 1e-9);
    }
  }
  return {outside == 0, std::to_string(outside) + " of 10000 projected points outside; worst form " +
                            fmt("%.6f", worst)};
}

// 7. Supervisor correctness.
Outcome supervisor(const Quadrotor& q, int workers, Digest& dg) {
  const auto start = Clock::now();
  TimingModel model;
  model.coefficients = {0.02, 0.01, 0.003, 0.0002, 0.00004};
  model.n_cap = 10;
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> budget(model(1.0), model(10.0) * 1.2);
  int mismatches = 0;
  for (int k = 0; k < 100; ++k) {
    const double t = budget(gen);
    mismatches += select_nmax(model, t, 10).n_max != oracle::integer_scan_nmax([&](double n) { return model(n); }, t, 10);
  }

  AnytimeConfig cfg;
  cfg.coords = kXyz;
  cfg.propagation.workers = workers;
  std::vector<double> trace;
  for (int k = 0; k < 10; ++k) trace.push_back(k % 2 ? 10.0 : 1e-4);
  const AnytimeReport rep = run_horizon(q.d.uncertainty.x0, q.d.system, q.d.uncertainty, 0.0, trace, model, cfg);
  bool alternates = true;
  std::ostringstream seq;
  for (const StepRecord& s : rep.steps) {
    alternates &= s.n_max == (s.k % 2 ? 10 : 1);
    seq << s.n_max << (s.k + 1 < 10 ? "," : "");
    dg.add(s.fused);
    if (s.projected) dg.add(*s.projected);
  }

  const TimeGrid grid(0.0, 1.0, cfg.dt / cfg.steps_per_horizon, 11);
  const auto states = simulate_states(q.d.system, q.d.uncertainty, grid, 2000, 7, workers);
  std::vector<std::vector<Ellipsoid>> full = {{q.d.uncertainty.x0}};
  std::vector<std::vector<Ellipsoid>> xyz = {{project(q.d.uncertainty.x0, kXyz)}};
  for (const StepRecord& s : rep.steps) {
    full.push_back({s.fused});
    xyz.push_back({s.reported()});
  }
  const ContainmentReport a = check_containment(grid.snapshot_times(), full, states, 1e-3);
  const ContainmentReport b = check_containment(grid.snapshot_times(), xyz, states, 1e-3, kXyz);
  for (double f : a.max_form) dg.add(f);
  for (double f : b.max_form) dg.add(f);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const bool pass = mismatches == 0 && alternates && a.passed() && b.passed() && secs < 180.0;
  return {pass, std::to_string(mismatches) + " select_nmax mismatches; N_max " + seq.str() +
                    "; chained worst form " + fmt("%.6f", a.worst) + " (12D), " + fmt("%.6f", b.worst) + " (xyz)"};
}

// 8. Timing-model shape, informational.
Outcome timing_shape(const Quadrotor& q) {
  const auto samples = benchmark(q.d.system, q.d.uncertainty, q.grid, {2, 5, 10}, 3, {1, DisturbanceTerm::kAdditive},
                                 1, kXyz);
  bool pass = true;
  std::ostringstream detail;
  for (const TimingSample& s : samples) {
    const double serial = s.t_center + s.n * s.t_shape;
    const double ratio = s.t_propagation / serial;
    pass &= std::abs(ratio - 1.0) <= 0.2 && s.t_opt < s.t_propagation;
    detail << "N=" << s.n << ": t_prop/(t_c+N t_s) = " << fmt("%.3f", ratio) << ", t_opt/t_prop = "
           << fmt("%.4f", s.t_opt / s.t_propagation) << "; ";
  }
  return {pass, detail.str() + "informational, not gated"};
}

struct Run {
  std::vector<Outcome> outcomes;  // criteria 1..7
  std::vector<Digest> digests;    // one per criterion
};

template <typename F>
Outcome timed(F&& f) {
  const auto start = Clock::now();
  Outcome o = f();
  o.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return o;
}

Run run_criteria(int workers, std::unique_ptr<Quadrotor>& qp) {
  Run run;
  run.digests.resize(7);
  Outcome quad_setup = timed([&] {
    qp = build_quadrotor(workers);
    return Outcome{true, ""};
  });
  const Quadrotor& q = *qp;
  run.outcomes.push_back(timed([&] { return scalar_exactness(workers, run.digests[0]); }));
  Homogeneous hom;
  run.outcomes.push_back(timed([&] {
    hom = homogeneous(workers, run.digests[1]);
    return hom.exact;
  }));
  QuadrotorChecks qc;
  run.outcomes.push_back(timed([&] {
    qc = quadrotor_containment(q, run.digests[2]);
    return qc.containment;
  }));
  // Propagation and sampling belong to criterion 3's budget.
  run.outcomes.back().seconds += quad_setup.seconds;
  run.outcomes.back().pass &= run.outcomes.back().seconds < 300.0;
  run.outcomes.push_back({hom.tight && qc.support_violations == 0,
                          "homogeneous support error " + fmt("%.2e", hom.worst_support) + "; " +
                              std::to_string(qc.support_violations) + " quadrotor support violations"});
  run.outcomes.push_back(timed([&] { return fusion_checks(q, run.digests[4]); }));
  run.outcomes.push_back(timed([&] { return projection_chain(q, run.digests[5]); }));
  run.outcomes.push_back(timed([&] { return supervisor(q, workers, run.digests[6]); }));
  return run;
}

void print(int id, const Outcome& o, const char* suffix = "") {
  std::printf("%s criterion %d: %s (%.1f s)%s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), o.seconds, suffix);
  std::fflush(stdout);
}

}  // namespace
}  // namespace ellreach

int main() {
  using namespace ellreach;
  try {
    std::unique_ptr<Quadrotor> q1, q4;
    const Run serial = run_criteria(1, q1);
    bool all = true;
    for (std::size_t k = 0; k < serial.outcomes.size(); ++k) {
      print(static_cast<int>(k + 1), serial.outcomes[k]);
      all &= serial.outcomes[k].pass;
    }

    print(8, timed([&] { return timing_shape(*q1); }));

    const Run pooled = run_criteria(4, q4);
    std::vector<int> differing;
    for (std::size_t k = 0; k < serial.digests.size(); ++k) {
      if (serial.digests[k].bits != pooled.digests[k].bits) differing.push_back(static_cast<int>(k + 1));
      all &= pooled.outcomes[k].pass;
    }
    std::size_t words = 0;
    for (const Digest& d : serial.digests) words += d.bits.size();
    std::string detail = std::to_string(words) + " values compared between workers 1 and 4";
    if (!differing.empty()) {
      detail += "; differing criteria:";
      for (int k : differing) detail += " " + std::to_string(k);
    }
    const Outcome det{differing.empty(), detail};
    print(9, det);
    all &= det.pass;
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
}
