#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "tikhonov/rng.hpp"
#include "tikhonov/solver.hpp"

using namespace tikhonov;

namespace {

Graph random_connected(int n, double p, Rng& rng) {
  std::vector<Edge> e;
  for (int i = 1; i < n; ++i) e.push_back({uniform_int(rng, 0, i - 1), i});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (uniform(rng, 0, 1) < p) e.push_back({i, j});
  return Graph::from_edges(n, e);
}

Vector random_theta(int K, Rng& rng) {
  Vector t(K + 1);
  for (int k = 0; k <= K; ++k) t[k] = uniform(rng, -2.0, 2.0);
  return t;
}

Vector random_q(int n, double lo, double hi, Rng& rng) {
  Vector q(n);
  for (int i = 0; i < n; ++i) q[i] = log_uniform(rng, lo, hi);
  return q;
}

Matrix ramp_dense_R(const Matrix& L, const Vector& q) {
  Matrix M = 0.5 * L;
  M.diagonal() += q;
  return M.inverse() * q.asDiagonal();
}

}  // namespace

TEST_CASE("clamp_q") {
  Vector t(3);
  t << 0.0, 100.0, -30.0;
  NodeImportance c = clamp_q(t);
  CHECK(c.q[0] == 1.0 + 1e-10);
  CHECK(c.dq_dqtilde[0] == 1.0);
  CHECK(c.q[1] == 1e10 + 1e-10);
  CHECK(c.dq_dqtilde[1] == 0.0);
  CHECK(c.q[2] == doctest::Approx(std::exp(-30.0) + 1e-10).epsilon(1e-14));
  CHECK(c.dq_dqtilde[2] == doctest::Approx(std::exp(-30.0)).epsilon(1e-14));
  CHECK_THROWS_AS(clamp_q(t, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(clamp_q(t, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("Jacobi preconditioner") {
  Rng rng(1);
  Graph g = random_connected(40, 0.08, rng);
  auto lap = make_laplacian_data(g, 5);
  Vector q = random_q(40, 0.1, 10.0, rng);

  for (PrecondMode mode : {PrecondMode::Exact, PrecondMode::Approx}) {
    TikhonovOperator flat(lap, BernsteinFilter::flat(3), q, mode);
    CHECK((flat.preconditioner() - (q.array() + 0.5).matrix()).cwiseAbs().maxCoeff() <= 1e-14);

    Vector th(2);
    th << -0.3, 0.8;
    BernsteinFilter f1(th);
    const Vector a = f1.monomial_coeffs();
    TikhonovOperator op1(lap, f1, q, mode);
    CHECK((op1.preconditioner() - (q.array() + a[0] + a[1]).matrix()).cwiseAbs().maxCoeff() <=
          1e-14);
  }

  BernsteinFilter f5(random_theta(5, rng));
  TikhonovOperator op5(lap, f5, q);
  Vector dense_diag = dense_M(op5).diagonal();
  CHECK((op5.preconditioner() - dense_diag).cwiseAbs().maxCoeff() <= 1e-10);

  // Filter degree above the cached powers falls back to probing.
  auto lap2 = make_laplacian_data(g, 2);
  TikhonovOperator op5b(lap2, f5, q);
  CHECK((op5b.preconditioner() - dense_diag).cwiseAbs().maxCoeff() <= 1e-10);

  TikhonovOperator approx(lap, f5, q, PrecondMode::Approx);
  CHECK(approx.preconditioner().minCoeff() > 0.0);
}

TEST_CASE("PCG trivial cases") {
  Rng rng(2);
  Graph g = random_connected(30, 0.1, rng);
  auto lap = make_laplacian_data(g, 5);
  Vector q = Vector::Constant(30, 2.0);
  TikhonovOperator op(lap, BernsteinFilter::flat(5), q);

  SolveResult zero = pcg_solve(op, Matrix::Zero(30, 2), {});
  CHECK(zero.z.isZero(0.0));
  CHECK(zero.iterations == std::vector<int>{0, 0});
  CHECK(zero.all_converged());

  Matrix b = Matrix::Random(30, 3);
  SolveResult s = pcg_solve(op, b, {1e-12, 30});
  CHECK(s.iterations == std::vector<int>{1, 1, 1});
  CHECK((s.z - b / 2.5).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(s.all_converged());
}

TEST_CASE("PCG matches dense Cholesky") {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    Graph g = random_connected(100, 0.04, rng);
    auto lap = make_laplacian_data(g, 5);
    Vector q(100);
    for (int i = 0; i < 100; ++i) q[i] = uniform(rng, 1e-3, 1e3);
    TikhonovOperator op(lap, BernsteinFilter(random_theta(5, rng)), q);
    Matrix X = Matrix::Random(100, 2);
    SolveResult s = forward(op, X, {1e-10, 1000});
    CHECK(s.all_converged());
    for (double r : s.residual) CHECK(r <= 1e-10);
    Matrix ref = dense_M(op).llt().solve(op.q().asDiagonal() * X);
    CHECK((s.z - ref).norm() <= 1e-8 * ref.norm());

    // Any positive diagonal gives the same solution.
    TikhonovOperator approx(lap, *op.filter(), op.q(), PrecondMode::Approx);
    SolveResult sa = forward(approx, X, {1e-10, 1000});
    CHECK((sa.z - ref).norm() <= 1e-8 * ref.norm());
  }
}

TEST_CASE("PCG error is bounded by the residual over the smallest eigenvalue") {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    Graph g = random_connected(120, 0.03, rng);
    auto lap = make_laplacian_data(g, 5);
    TikhonovOperator op(lap, BernsteinFilter(random_theta(5, rng)), random_q(120, 1e-3, 1e3, rng));
    Matrix X = Matrix::Random(120, 1);
    SolveResult s = forward(op, X, {1e-10, 1200});
    CHECK(s.all_converged());
    const Matrix M = dense_M(op);
    const Matrix b = op.q().asDiagonal() * X;
    const Matrix ref = M.llt().solve(b);
    const double lmin = Eigen::SelfAdjointEigenSolver<Matrix>(M).eigenvalues().minCoeff();
    CHECK((s.z - ref).norm() <= 1.01 * s.residual[0] * b.norm() / lmin);
  }
}

TEST_CASE("PCG budget and flags") {
  Rng rng(4);
  Graph g = random_connected(80, 0.03, rng);
  auto lap = make_laplacian_data(g, 5);
  TikhonovOperator op(lap, BernsteinFilter(random_theta(5, rng)), random_q(80, 1e-3, 1e3, rng));
  Matrix X = Matrix::Random(80, 2);
  SolveResult s = forward(op, X, {1e-14, 2});
  for (int it : s.iterations) CHECK(it <= 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(s.converged[c] == (s.residual[c] <= 1e-14));
  }
  CHECK(s.z.allFinite());
  CHECK_THROWS_AS(pcg_solve(op, Matrix::Zero(79, 1), {}), std::invalid_argument);
}

TEST_CASE("frozen-coefficient replay reproduces the iterate") {
  Rng rng(5);
  Graph g = random_connected(50, 0.05, rng);
  auto lap = make_laplacian_data(g, 3);
  TikhonovOperator op(lap, BernsteinFilter(random_theta(3, rng)), random_q(50, 0.1, 10, rng));
  Matrix b = Matrix::Random(50, 1);
  SolverOptions opts{1e-14, 7, PrecondMode::Exact, true};
  SolveResult s = pcg_solve(op, b, opts);
  Vector z = pcg_replay(op, b.col(0), s.coefficients[0]);
  CHECK((z - s.z.col(0)).norm() <= 1e-12 * s.z.norm());
}

TEST_CASE("forward special cases") {
  Rng rng(6);
  Graph g = random_connected(40, 0.08, rng);
  auto lap = make_laplacian_data(g, 5);
  BernsteinFilter f(random_theta(5, rng));
  Matrix X = Matrix::Random(40, 2);

  // Huge q: features preserved.
  TikhonovOperator big(lap, f, Vector::Constant(40, 1e10));
  SolveResult sb = forward(big, X, {1e-12, 400});
  for (int c = 0; c < 2; ++c) {
    CHECK((sb.z.col(c) - X.col(c)).cwiseAbs().maxCoeff() <= X.col(c).norm() / 1e10);
  }

  // Homogeneous q: spectral formula.
  const double qc = 0.7;
  TikhonovOperator hom(lap, f, Vector::Constant(40, qc));
  SolveResult sh = forward(hom, X, {1e-13, 400});
  Eigen::SelfAdjointEigenSolver<Matrix> es(to_dense(lap->L));
  Vector gain(40);
  for (int k = 0; k < 40; ++k) gain[k] = qc / (f(std::clamp(es.eigenvalues()[k], 0.0, 2.0)) + qc);
  Matrix ref = es.eigenvectors() * gain.asDiagonal() * es.eigenvectors().transpose() * X;
  CHECK((sh.z - ref).norm() <= 1e-10 * ref.norm());

  // Isolated nodes decouple.
  auto iso = make_laplacian_data(Graph::from_edges(2, {}), 5);
  Vector q(2);
  q << 0.3, 4.0;
  Matrix x2(2, 1);
  x2 << 1.5, -2.0;
  TikhonovOperator op_iso(iso, f, q);
  SolveResult si = forward(op_iso, x2, {1e-14, 10});
  const double p0 = f(0.0);
  CHECK(si.z(0, 0) == doctest::Approx(0.3 * 1.5 / (p0 + 0.3)).epsilon(1e-14));
  CHECK(si.z(1, 0) == doctest::Approx(4.0 * -2.0 / (p0 + 4.0)).epsilon(1e-14));
}

TEST_CASE("backward trivial cases") {
  Rng rng(7);
  Graph g = random_connected(20, 0.1, rng);
  auto lap = make_laplacian_data(g, 3);
  TikhonovOperator op(lap, BernsteinFilter(random_theta(3, rng)), random_q(20, 0.1, 10, rng));
  Matrix X = Matrix::Random(20, 2);
  SolveResult s = forward(op, X, {1e-12, 200});
  TikhonovGrad gr = backward(op, X, s.z, Matrix::Zero(20, 2), {1e-12, 200});
  CHECK(gr.dX.isZero(0.0));
  CHECK(gr.dq.isZero(0.0));
  CHECK(gr.dtheta.isZero(0.0));

  // Single node: z = q x / (c + q).
  auto one = make_laplacian_data(Graph::from_edges(1, {}), 3);
  BernsteinFilter f(random_theta(3, rng));
  const double c = f(0.0), q = 1.7, x = 0.9, zbar = -1.3;
  TikhonovOperator op1(one, f, Vector::Constant(1, q));
  Matrix X1 = Matrix::Constant(1, 1, x);
  SolveResult s1 = forward(op1, X1, {1e-14, 5});
  TikhonovGrad g1 = backward(op1, X1, s1.z, Matrix::Constant(1, 1, zbar), {1e-14, 5});
  CHECK(g1.dq[0] == doctest::Approx(zbar * x * c / ((c + q) * (c + q))).epsilon(1e-13));
  CHECK(g1.dX(0, 0) == doctest::Approx(zbar * q / (c + q)).epsilon(1e-13));
}

TEST_CASE("implicit gradients against central differences") {
  Rng rng(8);
  for (int t = 0; t < 5; ++t) {
    const int n = 30, d = 2, K = 3;
    Graph g = random_connected(n, 0.08, rng);
    auto lap = make_laplacian_data(g, K);
    const Vector theta = random_theta(K, rng);
    const Vector q = random_q(n, 0.1, 10.0, rng);
    const Matrix X = Matrix::Random(n, d);
    const Matrix G = Matrix::Random(n, d);
    const SolverOptions opts{1e-13, 1000};

    auto loss = [&](const Vector& th, const Vector& qq, const Matrix& XX) {
      TikhonovOperator op(lap, BernsteinFilter(th), qq);
      return G.cwiseProduct(forward(op, XX, opts).z).sum();
    };

    TikhonovOperator op(lap, BernsteinFilter(theta), q);
    SolveResult s = forward(op, X, opts);
    TikhonovGrad gr = backward(op, X, s.z, G, opts);

    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-6); };
    for (int k = 0; k <= K; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[k]));
      Vector tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      CHECK(rel(gr.dtheta[k], (loss(tp, q, X) - loss(tm, q, X)) / (2 * h)) <= 1e-4);
    }
    for (int i = 0; i < n; i += 3) {
      const double h = 1e-5 * q[i];
      Vector qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      CHECK(rel(gr.dq[i], (loss(theta, qp, X) - loss(theta, qm, X)) / (2 * h)) <= 1e-4);
    }
    for (int i = 0; i < n; i += 5) {
      for (int c = 0; c < d; ++c) {
        const double h = 1e-5 * std::max(1.0, std::abs(X(i, c)));
        Matrix Xp = X, Xm = X;
        Xp(i, c) += h;
        Xm(i, c) -= h;
        CHECK(rel(gr.dX(i, c), (loss(theta, q, Xp) - loss(theta, q, Xm)) / (2 * h)) <= 1e-4);
      }
    }
  }
}

TEST_CASE("dense_R small cases") {
  auto edgeless = make_laplacian_data(Graph::from_edges(3, {}), 5);
  TikhonovOperator op(edgeless, BernsteinFilter::flat(5), Vector::Ones(3));
  CHECK((dense_R(op) - (2.0 / 3.0) * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-15);

  const std::vector<Edge> one{{0, 1}};
  auto p2 = make_laplacian_data(Graph::from_edges(2, one), 3);
  Vector c(4);
  c << 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0;
  TikhonovOperator ramp(p2, BernsteinFilter::from_coefficients(c), Vector::Ones(2));
  Matrix expect(2, 2);
  expect << 0.75, 0.25, 0.25, 0.75;
  CHECK((dense_R(ramp) - expect).cwiseAbs().maxCoeff() <= 1e-14);

  Rng rng(9);
  Graph g = random_connected(50, 0.06, rng);
  auto lap = make_laplacian_data(g, 4);
  const Vector q = random_q(50, 0.1, 10, rng);
  Vector cc = Vector::LinSpaced(5, 0.0, 1.0);
  TikhonovOperator r(lap, BernsteinFilter::from_coefficients(cc), q);
  CHECK((dense_R(r) - ramp_dense_R(to_dense(lap->L), q)).cwiseAbs().maxCoeff() <= 1e-12);

  auto big = make_laplacian_data(Graph::from_edges(501, {}), 2);
  TikhonovOperator too_big(big, BernsteinFilter::flat(2), Vector::Ones(501));
  CHECK_THROWS_AS(dense_R(too_big), std::invalid_argument);
}

TEST_CASE("multichannel forward") {
  Rng rng(10);
  Graph g = random_connected(25, 0.1, rng);
  auto lap = make_laplacian_data(g, 5);
  const SolverOptions opts{1e-12, 300};
  Matrix H = Matrix::Random(25, 3);
  TikhonovOperator a(lap, BernsteinFilter(random_theta(5, rng)), random_q(25, 0.1, 10, rng));
  TikhonovOperator b(lap, BernsteinFilter(random_theta(5, rng)), random_q(25, 0.1, 10, rng));

  MultiChannelResult one = multichannel_forward({a}, H, opts);
  CHECK(one.z == forward(a, H, opts).z);

  MultiChannelResult same = multichannel_forward({a, a}, H, opts);
  CHECK(same.z.leftCols(3) == same.z.rightCols(3));

  MultiChannelResult ab = multichannel_forward({a, b}, H, opts);
  MultiChannelResult ba = multichannel_forward({b, a}, H, opts);
  CHECK(ab.z.leftCols(3) == ba.z.rightCols(3));
  CHECK(ab.z.rightCols(3) == ba.z.leftCols(3));

  auto other = make_laplacian_data(g, 5);
  TikhonovOperator c(other, BernsteinFilter::flat(5), Vector::Ones(25));
  CHECK_THROWS_AS(multichannel_forward({a, c}, H, opts), std::invalid_argument);
}
