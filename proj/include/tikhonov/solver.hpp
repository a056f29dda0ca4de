#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "tikhonov/bernstein.hpp"
#include "tikhonov/graph.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

inline constexpr double kDefaultQMin = 1e-10;
inline constexpr double kDefaultQMax = 1e10;

struct NodeImportance {
  Vector q;
  Vector dq_dqtilde;  // exp(q~) where unclamped, 0 where clamped
};

// q = exp(min(q~, log q_max)) + q_min.
NodeImportance clamp_q(const Vector& q_tilde, double q_min = kDefaultQMin,
                       double q_max = kDefaultQMax);

// Laplacian plus diag(L^j) for j = 0..max_power, shared by every operator
// built on the same graph.
struct LaplacianData {
  SparseMatrix L;
  Matrix diag_powers;

  int size() const { return static_cast<int>(L.rows()); }
  int max_power() const { return static_cast<int>(diag_powers.cols()) - 1; }
};

std::shared_ptr<const LaplacianData> make_laplacian_data(SparseMatrix L, int max_power);
std::shared_ptr<const LaplacianData> make_laplacian_data(const Graph& g, int max_power);

enum class PrecondMode { Exact, Approx };

struct SolverOptions {
  double tol = 1e-6;
  int max_iter = 30;
  PrecondMode precond = PrecondMode::Exact;
  // Keep the per-iteration CG scalars (for frozen-coefficient replay).
  bool record_coefficients = false;

  static SolverOptions verification(int n) { return {1e-12, 10 * n, PrecondMode::Exact, false}; }
};

// M = p(L) + Q as an implicit operator.
class TikhonovOperator {
 public:
  TikhonovOperator(std::shared_ptr<const LaplacianData> lap, const BernsteinFilter& filter,
                   Vector q, PrecondMode mode = PrecondMode::Exact);

  // Raw polynomial p(lambda) = sum_j a_j lambda^j, outside the Bernstein
  // family. No filter gradient is available for such operators.
  static TikhonovOperator from_monomial(std::shared_ptr<const LaplacianData> lap,
                                        Vector monomial, Vector q,
                                        PrecondMode mode = PrecondMode::Exact);

  int size() const { return lap_->size(); }
  const SparseMatrix& laplacian() const { return lap_->L; }
  const std::shared_ptr<const LaplacianData>& laplacian_data() const { return lap_; }
  const std::optional<BernsteinFilter>& filter() const { return filter_; }
  const Vector& monomial() const { return monomial_; }
  const Vector& q() const { return q_; }
  const Vector& preconditioner() const { return precond_; }
  PrecondMode precond_mode() const { return mode_; }

  // p(L) v + q .* v
  Matrix apply(const Matrix& v) const;
  Matrix apply_filter_only(const Matrix& v) const;

 private:
  TikhonovOperator(std::shared_ptr<const LaplacianData> lap, std::optional<BernsteinFilter> filter,
                   Vector monomial, Vector q, PrecondMode mode);

  std::shared_ptr<const LaplacianData> lap_;
  std::optional<BernsteinFilter> filter_;
  Vector monomial_;
  Vector q_;
  Vector precond_;
  PrecondMode mode_;
};

// Positive Jacobi diagonal. Exact: diag(p(L)) + q. Approx: the degree <= 2
// terms exactly, diag(L^2) standing in for higher powers, clamped to the
// range of p on [0, 2], plus q.
Vector jacobi_precond(const LaplacianData& lap, const Vector& monomial, const Vector& q,
                      PrecondMode mode);

struct CgCoefficients {
  std::vector<double> alpha;
  std::vector<double> beta;
};

struct SolveResult {
  Matrix z;
  std::vector<int> iterations;
  std::vector<double> residual;  // true relative residual per column
  std::vector<bool> converged;
  std::vector<bool> breakdown;
  std::vector<CgCoefficients> coefficients;  // filled when recorded

  bool all_converged() const;
  int max_iterations() const;
};

// Block Jacobi-PCG from a zero initial guess, one set of CG scalars per
// column. Stops a column when ||M z - b|| / max(||b||, 1e-30) <= tol; if the
// recurrence claims convergence but the true residual disagrees, CG restarts
// from the current iterate within the same iteration budget.
SolveResult pcg_solve(const TikhonovOperator& op, const Matrix& rhs, const SolverOptions& opts);

// Runs the preconditioned CG recurrence for one column with the recorded
// scalars held fixed; the map rhs -> z is then linear.
Vector pcg_replay(const TikhonovOperator& op, const Vector& rhs, const CgCoefficients& coeffs);

// Z = M^{-1} Q X.
SolveResult forward(const TikhonovOperator& op, const Matrix& X, const SolverOptions& opts);

struct TikhonovGrad {
  Matrix dX;
  Vector dq;
  Vector dtheta;  // empty for raw polynomial operators
  SolveResult adjoint;
};

// Implicit-function gradients of <Zbar, Z> with one adjoint solve U = M^{-1} Zbar.
TikhonovGrad backward(const TikhonovOperator& op, const Matrix& X, const Matrix& Z,
                      const Matrix& Zbar, const SolverOptions& opts);

// Dense M and R = M^{-1} Q. Limited to n <= 500.
Matrix dense_M(const TikhonovOperator& op);
Matrix dense_R(const TikhonovOperator& op);

struct MultiChannelResult {
  Matrix z;  // n x (J d), channel blocks side by side
  std::vector<SolveResult> channels;
};

MultiChannelResult multichannel_forward(const std::vector<TikhonovOperator>& ops, const Matrix& H,
                                        const SolverOptions& opts);

}  // namespace tikhonov
