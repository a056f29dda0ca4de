#include "tikhonov/bernstein.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tikhonov {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 2.0)) {
    throw std::invalid_argument("lambda must lie in [0, 2], got " + std::to_string(lambda));
  }
}

}  // namespace

BernsteinFilter::BernsteinFilter(Vector theta) : theta_(std::move(theta)) {
  if (theta_.size() < 2) throw std::invalid_argument("Bernstein filter needs degree K >= 1");
  for (double t : theta_) {
    if (std::isnan(t)) throw std::invalid_argument("NaN filter parameter");
  }
}

BernsteinFilter BernsteinFilter::flat(int degree) {
  return BernsteinFilter(Vector::Zero(degree + 1));
}

BernsteinFilter BernsteinFilter::linear(int degree, double eps) {
  Vector c(degree + 1);
  for (int k = 0; k <= degree; ++k) c[k] = eps + (1.0 - 2.0 * eps) * k / degree;
  return from_coefficients(c);
}

BernsteinFilter BernsteinFilter::from_coefficients(const Vector& c) {
  Vector theta(c.size());
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    if (!(c[k] >= 0.0 && c[k] <= 1.0)) {
      throw std::invalid_argument("Bernstein coefficients must lie in [0, 1]");
    }
    theta[k] = std::log(c[k]) - std::log1p(-c[k]);
  }
  return BernsteinFilter(std::move(theta));
}

Vector BernsteinFilter::coefficients() const {
  return theta_.unaryExpr([](double t) { return sigmoid(t); });
}

double BernsteinFilter::operator()(double lambda) const {
  check_lambda(lambda);
  const double t = lambda / 2.0;
  Vector b = coefficients();
  for (int r = degree(); r > 0; --r) {
    for (int k = 0; k < r; ++k) b[k] = (1.0 - t) * b[k] + t * b[k + 1];
  }
  return b[0];
}

Vector BernsteinFilter::basis(double lambda) const {
  check_lambda(lambda);
  const double t = lambda / 2.0;
  const int K = degree();
  Vector b = Vector::Zero(K + 1);
  b[0] = 1.0;
  for (int r = 1; r <= K; ++r) {
    for (int k = r; k >= 0; --k) {
      b[k] = (1.0 - t) * b[k] + (k > 0 ? t * b[k - 1] : 0.0);
    }
  }
  return b;
}

Vector BernsteinFilter::grad_theta(double lambda) const {
  Vector g = basis(lambda);
  for (int k = 0; k <= degree(); ++k) g[k] *= sigmoid_derivative(theta_[k]);
  return g;
}

Vector BernsteinFilter::monomial_coeffs() const {
  const int K = degree();
  if (K > kMaxDegree) {
    throw std::invalid_argument("monomial conversion limited to K <= " +
                                std::to_string(kMaxDegree));
  }
  const Vector c = coefficients();
  // Coefficient of t^j in sum_k c_k C(K,k) t^k (1-t)^(K-k), then t = lambda / 2.
  Vector a = Vector::Zero(K + 1);
  for (int j = 0; j <= K; ++j) {
    double s = 0.0;
    for (int k = 0; k <= j; ++k) {
      const double sign = ((j - k) % 2 == 0) ? 1.0 : -1.0;
      s += c[k] * binomial(K, k) * binomial(K - k, j - k) * sign;
    }
    a[j] = s / std::ldexp(1.0, j);
  }
  return a;
}

std::vector<std::pair<double, double>> BernsteinFilter::samples(int points) const {
  std::vector<std::pair<double, double>> out;
  out.reserve(points);
  for (int i = 0; i < points; ++i) {
    const double lambda = (points == 1) ? 0.0 : 2.0 * i / (points - 1);
    out.emplace_back(lambda, (*this)(lambda));
  }
  return out;
}

nlohmann::json BernsteinFilter::to_json() const {
  nlohmann::json j;
  j["K"] = degree();
  j["theta"] = std::vector<double>(theta_.begin(), theta_.end());
  auto s = nlohmann::json::array();
  for (const auto& [lambda, p] : samples(101)) s.push_back({lambda, p});
  j["samples"] = std::move(s);
  return j;
}

Matrix apply_polynomial(const SparseMatrix& L, const Vector& monomial, const Matrix& x) {
  if (x.rows() != L.rows()) throw std::invalid_argument("dimension mismatch in polynomial apply");
  const Eigen::Index K = monomial.size() - 1;
  Matrix y = monomial[K] * x;
  Matrix tmp(x.rows(), x.cols());
  for (Eigen::Index j = K - 1; j >= 0; --j) {
    tmp.noalias() = L * y;
    y = tmp + monomial[j] * x;
  }
  return y;
}

Matrix apply_filter(const SparseMatrix& L, const BernsteinFilter& f, const Matrix& x) {
  return apply_polynomial(L, f.monomial_coeffs(), x);
}

std::vector<Matrix> apply_basis_all(const SparseMatrix& L, int degree, const Matrix& z) {
  if (z.rows() != L.rows()) throw std::invalid_argument("dimension mismatch in basis apply");
  if (degree < 0) throw std::invalid_argument("negative degree");
  std::vector<Matrix> level{z};
  for (int r = 1; r <= degree; ++r) {
    std::vector<Matrix> next(r + 1);
    // t b_{k-1,r-1} is needed for k = 1..r; (1 - t) b_{k,r-1} = b_{k,r-1} - t b_{k,r-1}.
    std::vector<Matrix> t_prev(r);
    for (int k = 0; k < r; ++k) {
      t_prev[k].noalias() = 0.5 * (L * level[k]);
    }
    for (int k = 0; k <= r; ++k) {
      if (k == 0) {
        next[k] = level[0] - t_prev[0];
      } else if (k == r) {
        next[k] = t_prev[r - 1];
      } else {
        next[k] = level[k] - t_prev[k] + t_prev[k - 1];
      }
    }
    level = std::move(next);
  }
  return level;
}

Matrix dense_polynomial(const Matrix& L, const Vector& monomial) {
  const Eigen::Index n = L.rows();
  const Eigen::Index K = monomial.size() - 1;
  Matrix P = monomial[K] * Matrix::Identity(n, n);
  for (Eigen::Index j = K - 1; j >= 0; --j) {
    P = L * P;
    P.diagonal().array() += monomial[j];
  }
  return P;
}

KhopReport check_complete_khop(const Graph& g, const BernsteinFilter& f,
                               double nonzero_threshold) {
  const Matrix P = dense_polynomial(to_dense(normalized_laplacian(g)), f.monomial_coeffs());
  const Eigen::MatrixXi hops = all_pairs_hops(g);
  const int K = f.degree();
  KhopReport report;
  for (int i = 0; i < g.num_nodes(); ++i) {
    for (int j = 0; j < g.num_nodes(); ++j) {
      const int d = hops(i, j);
      const bool within = d >= 0 && d <= K;
      const bool nonzero = std::abs(P(i, j)) > nonzero_threshold;
      if (within != nonzero) report.violations.push_back({i, j, d, P(i, j)});
    }
  }
  report.complete = report.violations.empty();
  return report;
}

}  // namespace tikhonov
