#include "tikhonov/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tikhonov {

namespace {

constexpr double kRhsFloor = 1e-30;
constexpr int kExactDiagMaxNodes = 5000;
constexpr int kProbeBlock = 64;

double horner(const Vector& a, double x) {
  double y = 0.0;
  for (Eigen::Index j = a.size() - 1; j >= 0; --j) y = y * x + a[j];
  return y;
}

// diag(L^j), j = 0..max_power, by probing unit vectors in column blocks.
Matrix probe_diag_powers(const SparseMatrix& L, int max_power) {
  const Eigen::Index n = L.rows();
  Matrix out(n, max_power + 1);
  out.col(0).setOnes();
  Matrix block, next;
  for (Eigen::Index start = 0; start < n; start += kProbeBlock) {
    const Eigen::Index w = std::min<Eigen::Index>(kProbeBlock, n - start);
    block = Matrix::Zero(n, w);
    for (Eigen::Index c = 0; c < w; ++c) block(start + c, c) = 1.0;
    for (int j = 1; j <= max_power; ++j) {
      next.noalias() = L * block;
      block.swap(next);
      for (Eigen::Index c = 0; c < w; ++c) out(start + c, j) = block(start + c, c);
    }
  }
  return out;
}

}  // namespace

NodeImportance clamp_q(const Vector& q_tilde, double q_min, double q_max) {
  if (!(q_min > 0.0) || !(q_max > q_min)) {
    throw std::invalid_argument("q clamp bounds must satisfy 0 < q_min < q_max");
  }
  const double log_max = std::log(q_max);
  NodeImportance out{Vector(q_tilde.size()), Vector(q_tilde.size())};
  for (Eigen::Index i = 0; i < q_tilde.size(); ++i) {
    const double t = q_tilde[i];
    if (t < log_max) {
      const double e = std::exp(t);
      out.q[i] = e + q_min;
      out.dq_dqtilde[i] = e;
    } else {
      out.q[i] = q_max + q_min;
      out.dq_dqtilde[i] = 0.0;
    }
  }
  return out;
}

std::shared_ptr<const LaplacianData> make_laplacian_data(SparseMatrix L, int max_power) {
  if (L.rows() != L.cols()) throw std::invalid_argument("Laplacian must be square");
  auto data = std::make_shared<LaplacianData>();
  data->L = std::move(L);
  data->L.makeCompressed();
  const int n = data->size();
  if (n > kExactDiagMaxNodes) max_power = std::min(max_power, 2);
  max_power = std::max(max_power, 2);
  if (n <= kExactDiagMaxNodes) {
    data->diag_powers = probe_diag_powers(data->L, max_power);
  } else {
    data->diag_powers.resize(n, 3);
    data->diag_powers.col(0).setOnes();
    data->diag_powers.col(1) = data->L.diagonal();
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (SparseMatrix::InnerIterator it(data->L, i); it; ++it) s += it.value() * it.value();
      data->diag_powers(i, 2) = s;
    }
  }
  return data;
}

std::shared_ptr<const LaplacianData> make_laplacian_data(const Graph& g, int max_power) {
  return make_laplacian_data(normalized_laplacian(g), max_power);
}

Vector jacobi_precond(const LaplacianData& lap, const Vector& monomial, const Vector& q,
                      PrecondMode mode) {
  const int n = lap.size();
  const int K = static_cast<int>(monomial.size()) - 1;
  Vector diag = Vector::Constant(n, monomial[0]);
  if (mode == PrecondMode::Exact && K <= lap.max_power()) {
    for (int j = 1; j <= K; ++j) diag += monomial[j] * lap.diag_powers.col(j);
  } else if (mode == PrecondMode::Exact && n <= kExactDiagMaxNodes) {
    diag = probe_diag_powers(lap.L, K) * monomial;
  } else {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int s = 0; s <= 200; ++s) {
      const double v = horner(monomial, 2.0 * s / 200.0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int j = 1; j <= K; ++j) diag += monomial[j] * lap.diag_powers.col(std::min(j, 2));
    diag = diag.cwiseMax(lo).cwiseMin(hi);
  }
  Vector out = diag + q;
  const double floor = std::numeric_limits<double>::min();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (!(out[i] > floor)) out[i] = std::max(q[i], 1.0);
  }
  return out;
}

TikhonovOperator::TikhonovOperator(std::shared_ptr<const LaplacianData> lap,
                                   const BernsteinFilter& filter, Vector q, PrecondMode mode)
    : TikhonovOperator(std::move(lap), filter, filter.monomial_coeffs(), std::move(q), mode) {}

TikhonovOperator TikhonovOperator::from_monomial(std::shared_ptr<const LaplacianData> lap,
                                                 Vector monomial, Vector q, PrecondMode mode) {
  return TikhonovOperator(std::move(lap), std::nullopt, std::move(monomial), std::move(q), mode);
}

TikhonovOperator::TikhonovOperator(std::shared_ptr<const LaplacianData> lap,
                                   std::optional<BernsteinFilter> filter, Vector monomial,
                                   Vector q, PrecondMode mode)
    : lap_(std::move(lap)),
      filter_(std::move(filter)),
      monomial_(std::move(monomial)),
      q_(std::move(q)),
      mode_(mode) {
  if (!lap_) throw std::invalid_argument("missing Laplacian");
  if (q_.size() != lap_->size()) {
    throw std::invalid_argument("q has " + std::to_string(q_.size()) + " entries for " +
                                std::to_string(lap_->size()) + " nodes");
  }
  if (monomial_.size() < 1) throw std::invalid_argument("empty polynomial");
  for (double v : q_) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("q must be finite and positive");
  }
  precond_ = jacobi_precond(*lap_, monomial_, q_, mode_);
}

Matrix TikhonovOperator::apply_filter_only(const Matrix& v) const {
  return apply_polynomial(lap_->L, monomial_, v);
}

Matrix TikhonovOperator::apply(const Matrix& v) const {
  Matrix y = apply_polynomial(lap_->L, monomial_, v);
  y.noalias() += q_.asDiagonal() * v;
  return y;
}

bool SolveResult::all_converged() const {
  return std::all_of(converged.begin(), converged.end(), [](bool c) { return c; });
}

int SolveResult::max_iterations() const {
  return iterations.empty() ? 0 : *std::max_element(iterations.begin(), iterations.end());
}

SolveResult pcg_solve(const TikhonovOperator& op, const Matrix& rhs, const SolverOptions& opts) {
  const Eigen::Index n = op.size();
  const Eigen::Index d = rhs.cols();
  if (rhs.rows() != n) throw std::invalid_argument("rhs rows must equal operator size");
  if (!(opts.tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (!rhs.allFinite()) throw std::invalid_argument("rhs contains non-finite values");

  const Vector inv_p = op.preconditioner().cwiseInverse();
  SolveResult res;
  res.z = Matrix::Zero(n, d);
  res.iterations.assign(d, 0);
  res.residual.assign(d, 0.0);
  res.converged.assign(d, false);
  res.breakdown.assign(d, false);
  if (opts.record_coefficients) res.coefficients.resize(d);

  std::vector<double> bnorm(d), rz(d);
  std::vector<bool> active(d, true);
  Matrix r = rhs;
  Matrix z = inv_p.asDiagonal() * r;
  Matrix p = z;
  for (Eigen::Index c = 0; c < d; ++c) {
    bnorm[c] = std::max(rhs.col(c).norm(), kRhsFloor);
    rz[c] = r.col(c).dot(z.col(c));
    if (rhs.col(c).norm() == 0.0) active[c] = false;
  }

  Matrix Ap(n, d);
  for (int it = 0; it < opts.max_iter; ++it) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    Ap = op.apply(p);
    for (Eigen::Index c = 0; c < d; ++c) {
      if (!active[c]) continue;
      const double pAp = p.col(c).dot(Ap.col(c));
      if (!(pAp > 0.0) || !std::isfinite(pAp) || !std::isfinite(rz[c])) {
        res.breakdown[c] = true;
        active[c] = false;
        continue;
      }
      const double alpha = rz[c] / pAp;
      res.z.col(c) += alpha * p.col(c);
      r.col(c) -= alpha * Ap.col(c);
      ++res.iterations[c];
      if (opts.record_coefficients) res.coefficients[c].alpha.push_back(alpha);

      bool restarted = false;
      if (r.col(c).norm() / bnorm[c] <= opts.tol) {
        const Vector true_r = rhs.col(c) - op.apply(res.z.col(c));
        if (true_r.norm() / bnorm[c] <= opts.tol) {
          active[c] = false;
          continue;
        }
        r.col(c) = true_r;
        restarted = true;
      }
      z.col(c) = inv_p.cwiseProduct(r.col(c));
      const double rz_new = r.col(c).dot(z.col(c));
      const double beta = restarted ? 0.0 : rz_new / rz[c];
      p.col(c) = z.col(c) + beta * p.col(c);
      rz[c] = rz_new;
      if (opts.record_coefficients) {
        // A restart is recorded as NaN so replay recomputes the true residual.
        res.coefficients[c].beta.push_back(restarted ? std::numeric_limits<double>::quiet_NaN()
                                                     : beta);
      }
    }
  }

  const Matrix final_r = rhs - op.apply(res.z);
  for (Eigen::Index c = 0; c < d; ++c) {
    res.residual[c] = final_r.col(c).norm() / bnorm[c];
    res.converged[c] = res.residual[c] <= opts.tol;
  }
  return res;
}

Vector pcg_replay(const TikhonovOperator& op, const Vector& rhs, const CgCoefficients& coeffs) {
  const Vector inv_p = op.preconditioner().cwiseInverse();
  Vector x = Vector::Zero(rhs.size());
  Vector r = rhs;
  Vector p = inv_p.cwiseProduct(r);
  for (std::size_t t = 0; t < coeffs.alpha.size(); ++t) {
    const Vector Ap = op.apply(p);
    x += coeffs.alpha[t] * p;
    r -= coeffs.alpha[t] * Ap;
    if (t >= coeffs.beta.size()) break;
    if (std::isnan(coeffs.beta[t])) {
      r = rhs - op.apply(x);
      p = inv_p.cwiseProduct(r);
    } else {
      p = inv_p.cwiseProduct(r) + coeffs.beta[t] * p;
    }
  }
  return x;
}

SolveResult forward(const TikhonovOperator& op, const Matrix& X, const SolverOptions& opts) {
  if (X.rows() != op.size()) throw std::invalid_argument("feature rows must equal node count");
  return pcg_solve(op, op.q().asDiagonal() * X, opts);
}

TikhonovGrad backward(const TikhonovOperator& op, const Matrix& X, const Matrix& Z,
                      const Matrix& Zbar, const SolverOptions& opts) {
  if (X.rows() != op.size() || Z.rows() != op.size() || Zbar.rows() != op.size() ||
      X.cols() != Z.cols() || Z.cols() != Zbar.cols()) {
    throw std::invalid_argument("backward shape mismatch");
  }
  TikhonovGrad g;
  g.adjoint = pcg_solve(op, Zbar, opts);
  const Matrix& U = g.adjoint.z;
  g.dq = U.cwiseProduct(X - Z).rowwise().sum();
  g.dX = op.q().asDiagonal() * U;
  if (op.filter()) {
    const BernsteinFilter& f = *op.filter();
    const std::vector<Matrix> w = apply_basis_all(op.laplacian(), f.degree(), Z);
    g.dtheta.resize(f.degree() + 1);
    for (int k = 0; k <= f.degree(); ++k) {
      g.dtheta[k] = -sigmoid_derivative(f.theta()[k]) * U.cwiseProduct(w[k]).sum();
    }
  }
  return g;
}

Matrix dense_M(const TikhonovOperator& op) {
  if (op.size() > 500) throw std::invalid_argument("dense operator limited to n <= 500");
  Matrix M = dense_polynomial(to_dense(op.laplacian()), op.monomial());
  M.diagonal() += op.q();
  return M;
}

Matrix dense_R(const TikhonovOperator& op) {
  const Matrix M = dense_M(op);
  // LU rather than Cholesky so a nonsymmetric M is not silently symmetrized.
  return M.partialPivLu().solve(Matrix(op.q().asDiagonal()));
}

MultiChannelResult multichannel_forward(const std::vector<TikhonovOperator>& ops, const Matrix& H,
                                        const SolverOptions& opts) {
  if (ops.empty()) throw std::invalid_argument("need at least one channel");
  for (const auto& op : ops) {
    if (op.laplacian_data() != ops.front().laplacian_data()) {
      throw std::invalid_argument("all channels must share one graph");
    }
  }
  MultiChannelResult out;
  out.z.resize(H.rows(), H.cols() * static_cast<Eigen::Index>(ops.size()));
  for (std::size_t j = 0; j < ops.size(); ++j) {
    out.channels.push_back(forward(ops[j], H, opts));
    out.z.middleCols(static_cast<Eigen::Index>(j) * H.cols(), H.cols()) = out.channels.back().z;
  }
  return out;
}

}  // namespace tikhonov
