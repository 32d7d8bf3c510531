#include "gsnf/linalg.hpp"

#include <cmath>

namespace gsnf {

namespace {

Eigen::VectorXd unit(Eigen::VectorXd v) {
  double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

}  // namespace

SpectralState SpectralState::init(std::size_t rows, std::size_t cols,
                                  double target, std::mt19937_64& rng) {
  if (target <= 0.0 || target >= 1.0)
    throw ValidationError("SpectralState: target must lie in (0,1)");
  SpectralState s;
  s.target = target;
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd u(rows), v(cols);
  for (auto& x : u) x = d(rng);
  for (auto& x : v) x = d(rng);
  u = unit(u);
  v = unit(v);
  s.u.assign(u.data(), u.data() + rows);
  s.v.assign(v.data(), v.data() + cols);
  return s;
}

SigmaMaxResult sigma_max(const Tensor& m, int iters) {
  if (iters < 1) throw UsageError("sigma_max: iters must be >= 1");
  auto M = m.map();
  if (M.norm() == 0.0) return {0.0, true};
  // fixed deterministic start vector
  Eigen::VectorXd v = Eigen::VectorXd::Ones(M.cols());
  v = unit(v);
  double sigma = 0.0;
  for (int k = 0; k < iters; ++k) {
    Eigen::VectorXd w = M * v;
    sigma = w.norm();
    Eigen::VectorXd next = M.transpose() * w;
    double n = next.norm();
    if (n == 0.0) break;
    v = next / n;
  }
  sigma = (M * v).norm();
  return {sigma, false};
}

SigmaMaxResult sigma_max(const Tensor& m, int iters, std::mt19937_64& rng) {
  auto M = m.map();
  if (M.norm() == 0.0) return {0.0, true};
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(M.cols());
  for (auto& x : v) x = d(rng);
  v = unit(v);
  for (int k = 0; k < iters; ++k) {
    Eigen::VectorXd next = M.transpose() * (M * v);
    double n = next.norm();
    if (n == 0.0) break;
    v = next / n;
  }
  return {(M * v).norm(), false};
}

std::vector<double> jacobi_eigenvalues(const Tensor& sym, double tol,
                                       int max_sweeps) {
  Eigen::MatrixXd A = sym.map();
  if (A.rows() != A.cols()) throw DimensionError("jacobi: matrix not square");
  const Eigen::Index n = A.rows();
  auto offdiag = [&]() {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = 0; q < n; ++q)
        if (p != q) s += A(p, q) * A(p, q);
    return std::sqrt(s);
  };
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (offdiag() <= tol) {
      std::vector<double> ev(n);
      for (Eigen::Index i = 0; i < n; ++i) ev[(std::size_t)i] = A(i, i);
      return ev;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (apq == 0.0) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        Eigen::VectorXd col_p = A.col(p), col_q = A.col(q);
        A.col(p) = c * col_p - s * col_q;
        A.col(q) = s * col_p + c * col_q;
        Eigen::RowVectorXd row_p = A.row(p), row_q = A.row(q);
        A.row(p) = c * row_p - s * row_q;
        A.row(q) = s * row_p + c * row_q;
        A(p, q) = 0.0;
        A(q, p) = 0.0;
      }
    }
  }
  throw NumericError("jacobi: no convergence after " +
                     std::to_string(max_sweeps) +
                     " sweeps, off-diagonal residual " +
                     std::to_string(offdiag()));
}

double sigma_min(const Tensor& m) {
  if (m.rows() < m.cols())
    throw UsageError("sigma_min: requires rows >= cols");
  if (m.cols() > 256) throw UsageError("sigma_min: dense path limited to n <= 256");
  Eigen::MatrixXd B = m.map().transpose() * m.map();
  // scale-aware absolute tolerance for the Jacobi stop
  double tol = std::max(1e-12, 1e-14 * B.norm());
  auto ev = jacobi_eigenvalues(from_matrix(B), tol);
  double lo = ev[0];
  for (double e : ev) lo = std::min(lo, e);
  return std::sqrt(std::max(lo, 0.0));
}

Tensor spectral_normalize(const Tensor& w, SpectralState& state, int iters) {
  if (state.u.size() != w.rows() || state.v.size() != w.cols())
    throw DimensionError("spectral_normalize: state/matrix shape mismatch");
  auto M = w.map();
  Eigen::Map<Eigen::VectorXd> u(state.u.data(), (Eigen::Index)state.u.size());
  Eigen::Map<Eigen::VectorXd> v(state.v.data(), (Eigen::Index)state.v.size());
  if (M.norm() == 0.0) {
    state.sigma_est = 0.0;
    return w;
  }
  for (int k = 0; k < iters; ++k) {
    v = unit(M.transpose() * u);
    u = unit(M * v);
  }
  state.sigma_est = u.dot(M * v);
  if (state.sigma_est <= state.target) return w;
  return scale(w, state.target / state.sigma_est);
}

}  // namespace gsnf
