#pragma once

#include <vector>

#include "json.hpp"
#include "tikhonov/graph.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

double sigmoid(double x);
double sigmoid_derivative(double x);

// Spectral polynomial p(lambda) = sum_k sigmoid(theta_k) b_{k,K}(lambda / 2).
// The sigmoid keeps every Bernstein coefficient in (0, 1), and the Bernstein
// partition of unity then pins p strictly inside (0, 1) on [0, 2].
class BernsteinFilter {
 public:
  static constexpr int kMaxDegree = 15;

  BernsteinFilter() : BernsteinFilter(Vector::Zero(6)) {}
  // theta has K + 1 entries, K >= 1.
  explicit BernsteinFilter(Vector theta);

  // theta_k = 0: p == 0.5.
  static BernsteinFilter flat(int degree);
  // p(lambda) = eps + (1/2 - eps) lambda, i.e. coefficients eps + (1 - 2 eps) k / K.
  static BernsteinFilter linear(int degree, double eps = 1e-3);
  // theta_k = logit(c_k). Coefficients of exactly 0 or 1 map to infinite theta.
  static BernsteinFilter from_coefficients(const Vector& c);

  int degree() const { return static_cast<int>(theta_.size()) - 1; }
  const Vector& theta() const { return theta_; }
  Vector coefficients() const;

  // de Casteljau evaluation. Throws std::invalid_argument outside [0, 2].
  double operator()(double lambda) const;
  // b_{k,K}(lambda / 2) for k = 0..K.
  Vector basis(double lambda) const;
  // d p(lambda) / d theta_k = sigmoid'(theta_k) b_{k,K}(lambda / 2).
  Vector grad_theta(double lambda) const;

  // a_0..a_K with p(lambda) = sum_j a_j lambda^j. Rejects K > kMaxDegree,
  // where the binomial expansion loses too many digits.
  Vector monomial_coeffs() const;

  // (lambda, p(lambda)) on `points` equispaced nodes of [0, 2].
  std::vector<std::pair<double, double>> samples(int points = 101) const;

  // {"K", "theta", "samples"}
  nlohmann::json to_json() const;

 private:
  Vector theta_;
};

// y = sum_j a_j L^j x by Horner: K sparse products.
Matrix apply_polynomial(const SparseMatrix& L, const Vector& monomial, const Matrix& x);

// p(L) x.
Matrix apply_filter(const SparseMatrix& L, const BernsteinFilter& f, const Matrix& x);

// w_k = b_{k,K}(L / 2) z for k = 0..K via the triangular recurrence
// b_{k,r} = (1 - t) b_{k,r-1} + t b_{k-1,r-1}, t = L / 2.
std::vector<Matrix> apply_basis_all(const SparseMatrix& L, int degree, const Matrix& z);

// Dense sum_j a_j L^j.
Matrix dense_polynomial(const Matrix& L, const Vector& monomial);

struct KhopViolation {
  int i = 0;
  int j = 0;
  int distance = -1;  // -1: different components
  double value = 0.0;
};

struct KhopReport {
  bool complete = true;
  std::vector<KhopViolation> violations;
};

// Checks P_ij != 0 <=> d(i, j) <= K on dense P = p(L), using |P_ij| > 1e-12
// as the nonzero test. Meant for n <= 200.
KhopReport check_complete_khop(const Graph& g, const BernsteinFilter& f,
                               double nonzero_threshold = 1e-12);

}  // namespace tikhonov
