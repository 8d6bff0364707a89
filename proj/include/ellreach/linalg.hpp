#pragma once

// Dense symmetric kernels for the small (n <= ~16) matrices used throughout
// the library. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ellreach {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Square symmetric matrix. The stored entries are symmetrized on
/// construction so that entries[i][j] == entries[j][i] holds bit-for-bit.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw LinalgError("SymMatrix: matrix is not square (" +
                        std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ")");
    }
    data_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix Identity(int d) { return SymMatrix(Matrix::Identity(d, d)); }
  static SymMatrix Zero(int d) { return SymMatrix(Matrix::Zero(d, d)); }
  static SymMatrix Diagonal(const Vector& diag) {
    return SymMatrix(Matrix(diag.asDiagonal()));
  }

  int order() const { return static_cast<int>(data_.rows()); }
  const Matrix& matrix() const { return data_; }
  double operator()(int i, int j) const { return data_(i, j); }

  /// Principal submatrix on the given coordinates.
  SymMatrix principal(const std::vector<int>& coords) const {
    const int k = static_cast<int>(coords.size());
    Matrix sub(k, k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) sub(i, j) = data_(coords[i], coords[j]);
    }
    return SymMatrix(sub);
  }

  friend SymMatrix operator*(double s, const SymMatrix& m) {
    return SymMatrix(s * m.data_);
  }
  friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
    return SymMatrix(a.data_ + b.data_);
  }

 private:
  Matrix data_;
};

struct EigDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns paired with eigenvalues
};

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (i != j) s += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(s);
}

}  // namespace detail

/// Cyclic Jacobi eigensolver. Stops once the off-diagonal Frobenius norm
/// drops below 1e-12 of the input norm; throws after 100 sweeps.
inline EigDecomposition sym_eig(const SymMatrix& m) {
  constexpr int kMaxSweeps = 100;
  constexpr double kThreshold = 1e-12;

  const int d = m.order();
  Matrix a = m.matrix();
  Matrix v = Matrix::Identity(d, d);
  const double scale = a.norm();

  int sweep = 0;
  while (detail::off_diagonal_norm(a) > kThreshold * scale) {
    if (++sweep > kMaxSweeps) {
      throw LinalgError("sym_eig: Jacobi iteration did not converge");
    }
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Rotation zeroing a(p, q), stable formulation.
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (int k = 0; k < d; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) > a(j, j); });
  EigDecomposition out{Vector(d), Matrix(d, d)};
  for (int k = 0; k < d; ++k) {
    out.eigenvalues(k) = a(order[k], order[k]);
    out.eigenvectors.col(k) = v.col(order[k]);
  }
  return out;
}

/// Rebuilds V diag(f(lambda)) V^T.
template <typename F>
SymMatrix spectral_map(const EigDecomposition& e, F&& f) {
  Vector mapped = e.eigenvalues.unaryExpr(std::forward<F>(f));
  return SymMatrix(e.eigenvectors * mapped.asDiagonal() *
                   e.eigenvectors.transpose());
}

/// Principal square root of a PSD matrix. Eigenvalues in
/// [-1e-12 ||M||, 0) are clamped to zero; anything more negative throws.
inline SymMatrix sqrt_psd(const SymMatrix& m) {
  const EigDecomposition e = sym_eig(m);
  const double tol = 1e-12 * m.matrix().norm();
  if (e.eigenvalues.size() > 0 &&
      e.eigenvalues(e.eigenvalues.size() - 1) < -tol) {
    throw LinalgError("sqrt_psd: matrix has eigenvalue " +
                      std::to_string(e.eigenvalues.minCoeff()) +
                      " below PSD tolerance");
  }
  return spectral_map(e, [](double l) { return l > 0.0 ? std::sqrt(l) : 0.0; });
}

/// Lower-triangular L with L L^T == M.
inline Matrix cholesky(const SymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.matrix());
  if (m.order() == 0 || llt.info() != Eigen::Success) {
    throw LinalgError("cholesky: matrix is not positive definite");
  }
  Matrix l = llt.matrixL();
  // LLT succeeds on some matrices with a tiny non-positive pivot.
  for (int i = 0; i < m.order(); ++i) {
    if (!(l(i, i) > 0.0)) {
      throw LinalgError("cholesky: matrix is not positive definite");
    }
  }
  return l;
}

inline bool is_positive_definite(const SymMatrix& m) {
  try {
    cholesky(m);
    return true;
  } catch (const LinalgError&) {
    return false;
  }
}

inline double logdet_spd(const SymMatrix& m) {
  const Matrix l = cholesky(m);
  return 2.0 * l.diagonal().array().log().sum();
}

inline Matrix solve_spd(const SymMatrix& m, const Matrix& rhs) {
  if (rhs.rows() != m.order()) {
    throw LinalgError("solve_spd: right-hand side has wrong row count");
  }
  const Matrix l = cholesky(m);
  const Matrix y = l.triangularView<Eigen::Lower>().solve(rhs);
  return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

inline Vector solve_spd(const SymMatrix& m, const Vector& rhs) {
  return solve_spd(m, Matrix(rhs)).col(0);
}

inline SymMatrix inverse_spd(const SymMatrix& m) {
  return SymMatrix(solve_spd(m, Matrix(Matrix::Identity(m.order(), m.order()))));
}

/// Least-squares polynomial fit; returns coefficients in ascending powers.
/// Solved by Householder QR on the Vandermonde matrix.
inline std::vector<double> polyfit(const std::vector<double>& xs,
                                   const std::vector<double>& ys, int degree) {
  if (degree < 0) throw LinalgError("polyfit: negative degree");
  if (xs.size() != ys.size()) {
    throw LinalgError("polyfit: xs and ys differ in length");
  }
  const int cols = degree + 1;
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct =
      std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < cols) {
    throw LinalgError("polyfit: need at least " + std::to_string(cols) +
                      " distinct abscissae, got " + std::to_string(distinct));
  }

  const int rows = static_cast<int>(xs.size());
  Matrix vander(rows, cols);
  Vector rhs(rows);
  for (int r = 0; r < rows; ++r) {
    double p = 1.0;
    for (int c = 0; c < cols; ++c) {
      vander(r, c) = p;
      p *= xs[r];
    }
    rhs(r) = ys[r];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(vander);
  if (qr.rank() < cols) throw LinalgError("polyfit: rank-deficient design");
  const Vector coef = qr.solve(rhs);
  return {coef.data(), coef.data() + coef.size()};
}

inline double polyval(const std::vector<double>& coef, double x) {
  double acc = 0.0;
  for (auto it = coef.rbegin(); it != coef.rend(); ++it) acc = acc * x + *it;
  return acc;
}

}  // namespace ellreach
