#include "tikhonov/verification.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "tikhonov/bernstein.hpp"
#include "tikhonov/rng.hpp"
#include "tikhonov/solver.hpp"

namespace tikhonov {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- random draws

Graph connected_random(int n, Rng& rng) {
  if (n == 1) return Graph::from_edges(1, {});
  const double p = std::min(1.0, uniform(rng, 1.2, 3.0) * std::log(std::max(n, 2)) / n);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<Edge> e;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (uniform(rng, 0.0, 1.0) < p) e.push_back({i, j});
    Graph g = Graph::from_edges(n, e);
    if (g.is_connected()) return g;
  }
  std::vector<Edge> e;
  for (int i = 1; i < n; ++i) e.push_back({uniform_int(rng, 0, i - 1), i});
  return Graph::from_edges(n, e);
}

Graph path_graph(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
  return Graph::from_edges(n, e);
}

Graph family_graph(const std::string& family, int n, Rng& rng) {
  if (family == "er") return connected_random(n, rng);
  if (family == "path") return path_graph(n);
  if (family == "cycle") {
    std::vector<Edge> e;
    for (int i = 0; i < n; ++i) e.push_back({i, (i + 1) % n});
    return Graph::from_edges(n, e);
  }
  if (family == "tree") {
    std::vector<Edge> e;
    for (int i = 1; i < n; ++i) e.push_back({uniform_int(rng, 0, i - 1), i});
    return Graph::from_edges(n, e);
  }
  if (family == "two_component") {
    const int a = uniform_int(rng, 1, n - 1);
    const Graph g1 = connected_random(a, rng);
    const Graph g2 = uniform_int(rng, 0, 1) ? connected_random(n - a, rng) : path_graph(n - a);
    std::vector<Edge> e = g1.edge_list();
    for (Edge x : g2.edge_list()) e.push_back({x.u + a, x.v + a});
    return Graph::from_edges(n, e);
  }
  throw std::invalid_argument("unknown graph family " + family);
}

const std::vector<std::string> kAllFamilies = {"er", "path", "cycle", "tree", "two_component"};
const std::vector<std::string> kConnectedFamilies = {"er", "path", "cycle", "tree"};

std::string pick(const std::vector<std::string>& v, Rng& rng) {
  return v[uniform_int(rng, 0, static_cast<int>(v.size()) - 1)];
}

Vector random_theta(int K, Rng& rng) {
  Vector t(K + 1);
  for (int k = 0; k <= K; ++k) t[k] = 1.5 * normal(rng);
  return t;
}

Vector log_uniform_vec(int n, double lo, double hi, Rng& rng) {
  Vector q(n);
  for (int i = 0; i < n; ++i) q[i] = log_uniform(rng, lo, hi);
  return q;
}

Vector normal_vec(int n, Rng& rng) {
  Vector x(n);
  for (int i = 0; i < n; ++i) x[i] = normal(rng);
  return x;
}

Matrix normal_mat(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

VerifyInstance base_instance(const std::string& family, int n, int K, Rng& rng) {
  VerifyInstance inst;
  inst.graph = family_graph(family, n, rng);
  inst.theta = random_theta(K, rng);
  inst.q = log_uniform_vec(n, 1e-2, 1e2, rng);
  inst.seed = rng();
  inst.params["family"] = family;
  return inst;
}

// ---------------------------------------------------------------- helpers

struct Setup {
  std::shared_ptr<const LaplacianData> lap;
  Matrix L;
  BernsteinFilter filter;
};

Setup setup(const VerifyInstance& inst, const std::string& fault) {
  const int K = static_cast<int>(inst.theta.size()) - 1;
  Setup s{make_laplacian_data(verification_laplacian(inst.graph, fault), std::max(2, K)), {},
          BernsteinFilter(inst.theta)};
  s.L = to_dense(s.lap->L);
  return s;
}

TikhonovOperator make_op(const Setup& s, const Vector& q) {
  return TikhonovOperator(s.lap, s.filter, q);
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// p over the spectrum of the (symmetric part of the) Laplacian.
Vector filter_on_spectrum(const Setup& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s.L + s.L.transpose()), Eigen::EigenvaluesOnly);
  Vector out(es.eigenvalues().size());
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    out[k] = s.filter(std::clamp(es.eigenvalues()[k], 0.0, 2.0));
  }
  return out;
}

std::vector<int> components(const Graph& g) { return g.component_of(); }

CheckResult fail(double margin, std::string msg) { return {false, margin, std::move(msg)}; }

std::string fmt(double x) {
  std::ostringstream o;
  o << std::setprecision(6) << x;
  return o.str();
}

// ---------------------------------------------------------------- P1

VerifyInstance gen_p1(Rng& rng, int trial, const VerifyOptions& o) {
  const bool hetero = trial % 2 == 1;
  const int n = uniform_int(rng, 3, std::min(o.max_n, 100));
  VerifyInstance inst = base_instance(pick(hetero ? kConnectedFamilies : kAllFamilies, rng), n,
                                      uniform_int(rng, 1, 6), rng);
  const auto& comp = inst.graph.component_of();
  std::vector<double> level(inst.graph.num_components());
  for (double& v : level) v = log_uniform(rng, 0.1, 10.0);
  for (int i = 0; i < n; ++i) inst.q[i] = level[comp[i]];
  if (hetero) inst.q[uniform_int(rng, 0, n - 1)] *= uniform(rng, 1.5, 3.0);
  inst.params["mode"] = hetero ? "heterogeneous" : "homogeneous";
  return inst;
}

CheckResult check_p1(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const Matrix R = dense_R(make_op(s, inst.q));
  Eigen::EigenSolver<Matrix> es(R, false);
  const auto ev = es.eigenvalues();
  const double imag = ev.imag().cwiseAbs().maxCoeff();
  const double lo = ev.real().minCoeff(), hi = ev.real().maxCoeff();
  const double spec_margin = std::min(lo, 1.0 - hi) - 1e-10;
  if (imag > 1e-8 || spec_margin <= 0.0) {
    return fail(spec_margin, "spectrum of R outside (0, 1): [" + fmt(lo) + ", " + fmt(hi) +
                                 "], max imaginary part " + fmt(imag));
  }
  const double asym = max_abs(R - R.transpose());
  if (inst.params.at("mode") == "homogeneous") {
    const double m = (1e-10 - asym) / 1e-10;
    if (asym > 1e-10) return fail(m, "R not symmetric for componentwise-constant q: " + fmt(asym));
    return {true, std::min(spec_margin, m), ""};
  }
  const double m = (asym - 1e-8) / 1e-8;
  if (asym <= 1e-8) return fail(m, "R symmetric despite heterogeneous q: " + fmt(asym));
  return {true, std::min(spec_margin, m), ""};
}

// ---------------------------------------------------------------- P2

VerifyInstance gen_p2(Rng& rng, int trial, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, o.max_n);
  VerifyInstance inst = base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
  if (trial % 10 == 9) {
    inst.q.setConstant(1e10);
    inst.params["mode"] = "huge_q";
  }
  return inst;
}

CheckResult check_p2(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const int n = inst.graph.num_nodes();
  Rng rng(inst.seed);
  const Vector x = normal_vec(n, rng);
  const TikhonovOperator op = make_op(s, inst.q);
  const SolveResult r = forward(op, x, SolverOptions::verification(n));
  if (!r.all_converged()) return fail(-1.0, "solver did not converge");
  const Vector z = r.z.col(0);
  const Vector pz = op.apply_filter_only(z).col(0);
  const double pmax = filter_on_spectrum(s).maxCoeff();
  const double xn = x.norm();
  double margin = kInf;
  for (int i = 0; i < n; ++i) {
    const double b1 = pmax / inst.q[i] * xn;
    const double b2 = std::sqrt(inst.q[i]) * std::sqrt(pmax) * xn;
    const double l1 = std::abs(z[i] - x[i]);
    const double l2 = std::abs(pz[i]);
    const double slack = 1e-9;
    margin = std::min({margin, (b1 - l1) / b1, (b2 - l2) / b2});
    if (l1 > b1 * (1 + slack) + 1e-12 * xn) {
      return fail((b1 - l1) / b1, "feature preservation bound violated at node " +
                                      std::to_string(i) + ": " + fmt(l1) + " > " + fmt(b1));
    }
    if (l2 > b2 * (1 + slack) + 1e-12 * xn) {
      return fail((b2 - l2) / b2, "harmonicity bound violated at node " + std::to_string(i) +
                                      ": " + fmt(l2) + " > " + fmt(b2));
    }
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- P3

double target_filter(int which, double l) {
  switch (which % 4) {
    case 0: return 0.5 + 0.35 * std::sin(2.0 * l);
    case 1: return 0.9 / (1.0 + l * l);
    case 2: return 0.9 - 0.4 * l;
    default: return 0.05 + 0.9 * std::exp(-l);
  }
}

// Chebyshev interpolant of f on [0, 2] at `nodes` points.
struct Chebyshev {
  Vector c;
  static Chebyshev fit(const std::function<double(double)>& f, int nodes) {
    Chebyshev ch;
    ch.c = Vector::Zero(nodes);
    for (int k = 0; k < nodes; ++k) {
      for (int j = 0; j < nodes; ++j) {
        const double th = M_PI * (j + 0.5) / nodes;
        ch.c[k] += f(1.0 + std::cos(th)) * std::cos(k * th);
      }
      ch.c[k] *= 2.0 / nodes;
    }
    ch.c[0] *= 0.5;
    return ch;
  }
  double operator()(double l) const {
    const double t = l - 1.0;
    double b1 = 0, b2 = 0;
    for (Eigen::Index k = c.size() - 1; k >= 1; --k) {
      const double b0 = c[k] + 2 * t * b1 - b2;
      b2 = b1;
      b1 = b0;
    }
    return c[0] + t * b1 - b2;
  }
  // Clenshaw on a dense matrix argument.
  Matrix operator()(const Matrix& L) const {
    const Eigen::Index n = L.rows();
    const Matrix T = L - Matrix::Identity(n, n);
    Matrix b1 = Matrix::Zero(n, n), b2 = b1;
    for (Eigen::Index k = c.size() - 1; k >= 1; --k) {
      Matrix b0 = 2.0 * T * b1 - b2;
      b0.diagonal().array() += c[k];
      b2 = std::move(b1);
      b1 = std::move(b0);
    }
    Matrix out = T * b1 - b2;
    out.diagonal().array() += c[0];
    return out;
  }
};

VerifyInstance gen_p3(Rng& rng, int trial, const VerifyOptions& o) {
  const int mode = trial % 3;
  const int n = uniform_int(rng, 3, o.max_n);
  VerifyInstance inst = base_instance(pick(mode == 1 ? kConnectedFamilies : kAllFamilies, rng), n,
                                      uniform_int(rng, 1, 6), rng);
  if (mode == 0) {
    inst.q.setConstant(log_uniform(rng, 1e-2, 1e2));
    inst.params["mode"] = "homogeneous";
  } else if (mode == 1) {
    inst.q = log_uniform_vec(n, 0.1, 10.0, rng);
    inst.params["mode"] = "heterogeneous";
  } else {
    inst.params["mode"] = "density";
    inst.params["target"] = trial / 3 % 4;
    inst.params["epsilon"] = 0.02;
  }
  return inst;
}

CheckResult check_p3(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const std::string mode = inst.params.at("mode");
  if (mode != "density") {
    const Matrix R = dense_R(make_op(s, inst.q));
    const double comm = max_abs(R * s.L - s.L * R);
    if (mode == "homogeneous") {
      if (comm > 1e-9) return fail((1e-9 - comm) / 1e-9, "homogeneous R does not commute: " + fmt(comm));
      return {true, (1e-9 - comm) / 1e-9, ""};
    }
    if (comm <= 1e-8) return fail((comm - 1e-8) / 1e-8, "heterogeneous R commutes: " + fmt(comm));
    return {true, (comm - 1e-8) / 1e-8, ""};
  }
  // Constructive density: q < c / (1 + c eps), f = q (1 - h) / h, p ~ f.
  const int which = inst.params.at("target").get<int>();
  const double eps = inst.params.at("epsilon").get<double>();
  auto h = [which](double l) { return target_filter(which, l); };
  double c = kInf, mu = kInf;
  for (int k = 0; k <= 2000; ++k) {
    const double v = h(0.001 * k);
    c = std::min(c, v / (1 - v));
    mu = std::min(mu, (1 - v) / v);
  }
  if (!(eps < mu)) return fail(-1.0, "epsilon must be below mu");
  const double q = 0.5 * c / (1.0 + c * eps);
  auto f = [&](double l) { return q * (1 - h(l)) / h(l); };
  const Chebyshev p = Chebyshev::fit(f, 40);
  double approx = 0.0, pmin = kInf, pmax = -kInf;
  for (int k = 0; k <= 2000; ++k) {
    const double l = 0.001 * k;
    approx = std::max(approx, std::abs(p(l) - f(l)));
    pmin = std::min(pmin, p(l));
    pmax = std::max(pmax, p(l));
  }
  if (approx >= q * eps) return fail(-1.0, "polynomial fit too coarse: " + fmt(approx));
  if (!(pmin > 0.0 && pmax < 1.0)) return fail(-1.0, "fitted polynomial leaves (0, 1)");
  const int n = inst.graph.num_nodes();
  Matrix M = p(s.L);
  M.diagonal().array() += q;
  const Matrix R = M.partialPivLu().solve(q * Matrix::Identity(n, n));
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s.L + s.L.transpose()));
  Vector hv(n);
  for (int k = 0; k < n; ++k) hv[k] = h(std::clamp(es.eigenvalues()[k], 0.0, 2.0));
  const Matrix H = es.eigenvectors() * hv.asDiagonal() * es.eigenvectors().transpose();
  Eigen::JacobiSVD<Matrix> svd(R - H);
  const double err = svd.singularValues()[0];
  if (err > eps) return fail((eps - err) / eps, "homogeneous operator misses target by " + fmt(err));
  return {true, (eps - err) / eps, ""};
}

// ---------------------------------------------------------------- P4

VerifyInstance gen_p4(Rng& rng, int trial, const VerifyOptions& o) {
  const int mode = trial % 3;
  const int n = uniform_int(rng, 4, std::min(o.max_n, mode == 2 ? 12 : 20));
  // Generic pairs use dense random graphs so that |R_ij| stays far above
  // rounding; on long paths the exact entries underflow legitimately.
  const std::string family =
      mode == 0 ? "two_component" : (mode == 2 ? "er" : pick(kAllFamilies, rng));
  VerifyInstance inst = base_instance(family, n, uniform_int(rng, 1, 6), rng);
  inst.q = log_uniform_vec(n, 1e-2, 1.0, rng);
  if (mode == 1) {
    // p(l) = c0 (1 - l/2) + c1 l/2 with c1 > c0: increasing, degree one.
    const double c0 = uniform(rng, 0.05, 0.4);
    const double c1 = c0 + uniform(rng, 0.2, 0.5);
    inst.theta = BernsteinFilter::from_coefficients(Vector{{c0, c1}}).theta();
    inst.params["mode"] = "linear";
  } else {
    inst.params["mode"] = mode == 0 ? "components" : "generic";
  }
  return inst;
}

CheckResult check_p4(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const Matrix R = dense_R(make_op(s, inst.q));
  const auto comp = components(inst.graph);
  const std::string mode = inst.params.at("mode");
  const bool positive = mode == "linear";
  const int n = inst.graph.num_nodes();
  double margin = kInf;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (comp[i] != comp[j]) {
        if (R(i, j) != 0.0) {
          return fail(-std::abs(R(i, j)), "R(" + std::to_string(i) + "," + std::to_string(j) +
                                              ") nonzero across components: " + fmt(R(i, j)));
        }
        continue;
      }
      if (mode == "components") continue;
      if (positive) {
        margin = std::min(margin, R(i, j));
        if (!(R(i, j) > 0.0)) {
          return fail(R(i, j), "R(" + std::to_string(i) + "," + std::to_string(j) +
                                   ") not positive for an increasing linear filter");
        }
      } else {
        margin = std::min(margin, std::abs(R(i, j)) - 1e-12);
        if (std::abs(R(i, j)) <= 1e-12) {
          return fail(std::abs(R(i, j)) - 1e-12, "R(" + std::to_string(i) + "," +
                                                     std::to_string(j) +
                                                     ") vanishes within a component");
        }
      }
    }
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- P5

VerifyInstance gen_p5(Rng& rng, int trial, const VerifyOptions& o) {
  if (trial % 2 == 0) {
    // Paths P5 .. P50 in turn.
    const int n = 5 + (trial / 2) % 46;
    VerifyInstance inst = base_instance("path", n, uniform_int(rng, 1, 6), rng);
    return inst;
  }
  const int n = uniform_int(rng, 3, std::min(o.max_n, 200));
  return base_instance(pick(kConnectedFamilies, rng), n, uniform_int(rng, 1, 6), rng);
}

CheckResult check_p5(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const Matrix R = dense_R(make_op(s, inst.q));
  const Matrix P = dense_polynomial(s.L, s.filter.monomial_coeffs());
  const Vector qis = inst.q.cwiseSqrt().cwiseInverse();
  Matrix S = qis.asDiagonal() * P * qis.asDiagonal();
  S.diagonal().array() += 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  const double kappa = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
  const int K = s.filter.degree();
  const Eigen::MatrixXi d = all_pairs_hops(inst.graph);
  const int n = inst.graph.num_nodes();
  double margin = kInf;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double bound = 2.0 * std::sqrt(inst.q[j] / inst.q[i]) *
                           std::exp(-2.0 * d(i, j) / (K * std::sqrt(kappa)));
      const double v = std::abs(R(i, j));
      margin = std::min(margin, (bound - v) / bound);
      if (v > bound + 1e-12) {
        return fail((bound - v) / bound, "decay bound violated at (" + std::to_string(i) + "," +
                                             std::to_string(j) + "): " + fmt(v) + " > " +
                                             fmt(bound));
      }
    }
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- P6

VerifyInstance gen_p6(Rng& rng, int, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, std::min(o.max_n, 50));
  return base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
}

CheckResult check_p6(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const int n = inst.graph.num_nodes();
  Rng rng(inst.seed);
  Vector q2 = inst.q;
  const int changed = uniform_int(rng, 1, n);
  for (int k = 0; k < changed; ++k) {
    const int i = uniform_int(rng, 0, n - 1);
    q2[i] *= uniform_int(rng, 0, 1) ? uniform(rng, 1.01, 2.0) : uniform(rng, 0.5, 0.99);
  }
  const Matrix R1 = dense_R(make_op(s, inst.q));
  const Matrix R2 = dense_R(make_op(s, q2));
  const double dR = max_abs(R1 - R2);
  if (!(dR > 1e-12)) return fail(dR - 1e-12, "distinct Q produced the same R");
  // Q^{-1} P = R^{-1} - I recovers q on the diagonal.
  const Matrix P = dense_polynomial(s.L, s.filter.monomial_coeffs());
  Matrix G = R1.partialPivLu().inverse();
  G.diagonal().array() -= 1.0;
  double err = 0.0;
  for (int i = 0; i < n; ++i) err = std::max(err, std::abs(P(i, i) / G(i, i) - inst.q[i]) / inst.q[i]);
  if (err > 1e-6) return fail((1e-6 - err) / 1e-6, "q not recoverable from R: " + fmt(err));
  return {true, std::min((dR - 1e-12) / dR, (1e-6 - err) / 1e-6), ""};
}

// ---------------------------------------------------------------- P7

VerifyInstance gen_p7(Rng& rng, int trial, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, o.max_n);
  VerifyInstance inst = base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
  inst.params["alpha"] = trial % 2 == 0 ? 0.5 : 2.0;
  return inst;
}

CheckResult check_p7(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const double a = inst.params.at("alpha").get<double>();
  const TikhonovOperator op = make_op(s, inst.q);
  const TikhonovOperator scaled =
      TikhonovOperator::from_monomial(s.lap, a * s.filter.monomial_coeffs(), a * inst.q);
  const double dR = max_abs(dense_R(op) - dense_R(scaled));
  if (dR > 1e-9) return fail((1e-9 - dR) / 1e-9, "rescaled operator differs: " + fmt(dR));
  const int n = inst.graph.num_nodes();
  Rng rng(inst.seed);
  const Matrix X = normal_mat(n, 2, rng);
  const SolverOptions so = SolverOptions::verification(n);
  const double dz = max_abs(forward(op, X, so).z - forward(scaled, X, so).z);
  if (dz > 1e-8) return fail((1e-8 - dz) / 1e-8, "rescaled solve differs: " + fmt(dz));
  return {true, std::min((1e-9 - dR) / 1e-9, (1e-8 - dz) / 1e-8), ""};
}

// ---------------------------------------------------------------- P8

VerifyInstance gen_p8(Rng& rng, int trial, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, std::min(o.max_n, 40));
  const int J = 2 + trial % 2;
  VerifyInstance inst = base_instance(pick(kConnectedFamilies, rng), n, uniform_int(rng, 1, 5), rng);
  // theta and q hold J channels back to back.
  const int K = static_cast<int>(inst.theta.size()) - 1;
  Vector th(J * (K + 1)), q(J * n);
  for (int j = 0; j < J; ++j) {
    th.segment(j * (K + 1), K + 1) = random_theta(K, rng);
    q.segment(j * n, n) = log_uniform_vec(n, 1e-2, 1e2, rng);
  }
  inst.theta = th;
  inst.q = q;
  inst.params["channels"] = J;
  return inst;
}

CheckResult check_p8(const VerifyInstance& inst, const VerifyOptions& o) {
  const int n = inst.graph.num_nodes();
  const int J = inst.params.at("channels").get<int>();
  const int K = static_cast<int>(inst.theta.size()) / J - 1;
  auto lap = make_laplacian_data(verification_laplacian(inst.graph, o.fault), std::max(2, K));
  Rng rng(inst.seed);
  const Matrix H = normal_mat(n, n + 2, rng);
  std::vector<TikhonovOperator> ops, scaled;
  std::vector<BernsteinFilter> filters;
  for (int j = 0; j < J; ++j) {
    filters.emplace_back(inst.theta.segment(j * (K + 1), K + 1));
    const Vector qj = inst.q.segment(j * n, n);
    ops.emplace_back(lap, filters.back(), qj);
    const double a = log_uniform(rng, 0.1, 10.0);
    scaled.push_back(TikhonovOperator::from_monomial(lap, a * filters.back().monomial_coeffs(), a * qj));
  }
  const SolverOptions so = SolverOptions::verification(n);
  const MultiChannelResult base = multichannel_forward(ops, H, so);
  const Eigen::Index d = H.cols();
  double margin = kInf;

  // Channel permutation permutes output blocks.
  std::vector<TikhonovOperator> rev(ops.rbegin(), ops.rend());
  const MultiChannelResult perm = multichannel_forward(rev, H, so);
  for (int j = 0; j < J; ++j) {
    const double e = max_abs(perm.z.middleCols((J - 1 - j) * d, d) - base.z.middleCols(j * d, d));
    if (e > 1e-12) return fail(-e, "permuted channels do not permute blocks: " + fmt(e));
  }
  // Per-channel rescaling leaves the output unchanged.
  const double es = max_abs(multichannel_forward(scaled, H, so).z - base.z);
  if (es > 1e-8) return fail((1e-8 - es) / 1e-8, "per-channel rescaling changed the output: " + fmt(es));
  margin = std::min(margin, (1e-8 - es) / 1e-8);
  // Rank-n H: each R_j is recovered from its block.
  const Matrix Hpinv = H.transpose() * (H * H.transpose()).partialPivLu().inverse();
  for (int j = 0; j < J; ++j) {
    const Matrix Rj = base.z.middleCols(j * d, d) * Hpinv;
    const double e = max_abs(Rj - dense_R(ops[j]));
    if (e > 1e-6) return fail((1e-6 - e) / 1e-6, "channel operator not recovered: " + fmt(e));
    margin = std::min(margin, (1e-6 - e) / 1e-6);
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- L1

VerifyInstance gen_l1(Rng& rng, int, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, o.max_n);
  return base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
}

CheckResult check_l1(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const Matrix P = dense_polynomial(s.L, s.filter.monomial_coeffs());
  const Eigen::MatrixXi d = all_pairs_hops(inst.graph);
  const int K = s.filter.degree();
  const int n = inst.graph.num_nodes();
  double margin = kInf;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool near = d(i, j) >= 0 && d(i, j) <= K;
      const double v = std::abs(P(i, j));
      if (near) {
        margin = std::min(margin, v - 1e-12);
        if (v <= 1e-12) {
          return fail(v - 1e-12, "P(" + std::to_string(i) + "," + std::to_string(j) +
                                     ") vanishes at distance " + std::to_string(d(i, j)));
        }
      } else if (v > 1e-12) {
        return fail(-v, "P(" + std::to_string(i) + "," + std::to_string(j) +
                            ") nonzero beyond K hops: " + fmt(v));
      }
    }
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- V

VerifyInstance gen_v(Rng& rng, int trial, const VerifyOptions& o) {
  if (trial == 0) {
    VerifyInstance inst = base_instance("path", 2, uniform_int(rng, 1, 6), rng);
    inst.q.setConstant(log_uniform(rng, 0.1, 10.0));
    inst.params["mode"] = "two_node";
    return inst;
  }
  const int n = uniform_int(rng, 3, o.max_n);
  VerifyInstance inst = base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
  inst.params["mode"] = "random";
  return inst;
}

CheckResult check_v(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const int n = inst.graph.num_nodes();
  Rng rng(inst.seed);
  const Vector x = normal_vec(n, rng);
  const TikhonovOperator op = make_op(s, inst.q);
  const SolverOptions so = SolverOptions::verification(n);
  const SolveResult r = forward(op, x, so);
  const Vector z = r.z.col(0);
  const Vector qx = inst.q.cwiseProduct(x);
  auto F = [&](const Vector& u) {
    const Vector pu = op.apply_filter_only(u).col(0);
    return inst.q.dot((x - u).cwiseAbs2()) + u.dot(pu);
  };
  const Vector grad = 2.0 * (op.apply_filter_only(z).col(0) + inst.q.cwiseProduct(z - x));
  const double gbound = 10.0 * so.tol * qx.norm();
  double margin = (gbound - grad.norm()) / gbound;
  if (grad.norm() > gbound) return fail(margin, "gradient of the functional too large: " + fmt(grad.norm()));
  const double Fz = F(z);
  const double scale = 1e-3 * x.norm() / std::sqrt(static_cast<double>(n));
  for (int t = 0; t < 100; ++t) {
    const Vector delta = scale * normal_vec(n, rng);
    const double Fd = F(z + delta);
    if (Fd < Fz) return fail((Fd - Fz) / std::abs(Fz), "perturbation lowers the functional");
  }
  if (inst.params.at("mode") == "two_node") {
    // L = [[1, -1], [-1, 1]]: eigenvalues 0 and 2.
    const double qv = inst.q[0];
    const double g0 = qv / (s.filter(0.0) + qv), g2 = qv / (s.filter(2.0) + qv);
    const double m = 0.5 * (x[0] + x[1]), dlt = 0.5 * (x[0] - x[1]);
    const Vector expect{{g0 * m + g2 * dlt, g0 * m - g2 * dlt}};
    const double e = (expect - z).cwiseAbs().maxCoeff();
    if (e > 1e-12 * x.norm()) return fail(-e, "closed-form minimizer mismatch: " + fmt(e));
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- R1

VerifyInstance gen_r1(Rng& rng, int, const VerifyOptions& o) {
  const int n = uniform_int(rng, 10, std::max(10, std::min(o.max_n, 40)));
  VerifyInstance inst = base_instance("path", n, uniform_int(rng, 1, 3), rng);
  inst.params["T"] = uniform_int(rng, 2, 4);
  return inst;
}

CheckResult check_r1(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const int n = inst.graph.num_nodes();
  const int T = inst.params.at("T").get<int>();
  const int K = s.filter.degree();
  Rng rng(inst.seed);
  const Vector x = normal_vec(n, rng);
  const TikhonovOperator op = make_op(s, inst.q);
  SolverOptions so;
  so.tol = 1e-300;
  so.max_iter = T;
  so.record_coefficients = true;
  const SolveResult r = forward(op, x, so);
  const CgCoefficients& cf = r.coefficients.at(0);
  const Vector zr = pcg_replay(op, inst.q.cwiseProduct(x), cf);
  const double rep = (zr - r.z.col(0)).cwiseAbs().maxCoeff();
  if (rep > 1e-12 * std::max(1.0, r.z.cwiseAbs().maxCoeff())) {
    return fail(-rep, "frozen-coefficient replay does not reproduce the iterate");
  }
  const Eigen::MatrixXi d = all_pairs_hops(inst.graph);
  const int reach = (T - 1) * K;
  for (int j = 0; j < n; ++j) {
    Vector e = Vector::Zero(n);
    e[j] = inst.q[j];
    const Vector col = pcg_replay(op, e, cf);
    for (int i = 0; i < n; ++i) {
      if (d(i, j) > reach && col[i] != 0.0) {
        return fail(-std::abs(col[i]), "sensitivity dz" + std::to_string(i) + "/dx" +
                                           std::to_string(j) + " nonzero at distance " +
                                           std::to_string(d(i, j)) + " > " +
                                           std::to_string(reach));
      }
    }
  }
  return {true, 0.0, ""};
}

// ---------------------------------------------------------------- G

VerifyInstance gen_g(Rng& rng, int, const VerifyOptions& o) {
  const int n = uniform_int(rng, 5, std::min(o.max_n, 30));
  VerifyInstance inst = base_instance(pick(kConnectedFamilies, rng), n, 3, rng);
  inst.q = log_uniform_vec(n, 0.1, 10.0, rng);
  return inst;
}

CheckResult check_g(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const int n = inst.graph.num_nodes();
  Rng rng(inst.seed);
  const Matrix X = normal_mat(n, 2, rng);
  const Matrix Zbar = normal_mat(n, 2, rng);
  const TikhonovOperator op = make_op(s, inst.q);
  const SolverOptions so = SolverOptions::verification(n);
  const SolveResult fw = forward(op, X, so);
  const TikhonovGrad g = backward(op, X, fw.z, Zbar, so);

  auto loss = [&](const Vector& theta, const Vector& q, const Matrix& XX) {
    const TikhonovOperator o2(s.lap, BernsteinFilter(theta), q);
    return (Zbar.cwiseProduct(dense_R(o2) * XX)).sum();
  };
  double worst = 0.0;
  std::string where;
  auto compare = [&](const std::string& name, const Vector& analytic, const Vector& fd) {
    const double floor = 1e-2 * fd.cwiseAbs().maxCoeff() + 1e-10;
    for (Eigen::Index k = 0; k < fd.size(); ++k) {
      const double rel = std::abs(analytic[k] - fd[k]) / std::max(std::abs(fd[k]), floor);
      if (rel > worst) {
        worst = rel;
        where = name + "[" + std::to_string(k) + "]";
      }
    }
  };
  const Vector& th = inst.theta;
  Vector fd_t(th.size());
  for (Eigen::Index k = 0; k < th.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(th[k]));
    Vector a = th, b = th;
    a[k] += h;
    b[k] -= h;
    fd_t[k] = (loss(a, inst.q, X) - loss(b, inst.q, X)) / (2 * h);
  }
  compare("theta", g.dtheta, fd_t);
  Vector fd_q(n);
  for (int i = 0; i < n; ++i) {
    const double h = 1e-5 * inst.q[i];
    Vector a = inst.q, b = inst.q;
    a[i] += h;
    b[i] -= h;
    fd_q[i] = (loss(th, a, X) - loss(th, b, X)) / (2 * h);
  }
  compare("q", g.dq, fd_q);
  Vector fd_x(2 * n), an_x(2 * n);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < n; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(X(i, c)));
      Matrix a = X, b = X;
      a(i, c) += h;
      b(i, c) -= h;
      fd_x[c * n + i] = (loss(th, inst.q, a) - loss(th, inst.q, b)) / (2 * h);
      an_x[c * n + i] = g.dX(i, c);
    }
  }
  compare("X", an_x, fd_x);
  const double margin = (1e-4 - worst) / 1e-4;
  if (worst > 1e-4) return fail(margin, "gradient mismatch at " + where + ": rel " + fmt(worst));
  return {true, margin, ""};
}

// ---------------------------------------------------------------- OS

VerifyInstance gen_os(Rng& rng, int, const VerifyOptions& o) {
  const int n = uniform_int(rng, 3, o.max_n);
  VerifyInstance inst = base_instance(pick(kAllFamilies, rng), n, uniform_int(rng, 1, 6), rng);
  inst.q = log_uniform_vec(n, 1e-2, 1.0, rng);
  return inst;
}

CheckResult check_os(const VerifyInstance& inst, const VerifyOptions& o) {
  const Setup s = setup(inst, o.fault);
  const double pmin = filter_on_spectrum(s).minCoeff();
  double prev = kInf, margin = kInf;
  for (double scale : {1.0, 1e-2, 1e-4, 1e-6}) {
    const Vector q = scale * inst.q;
    const Matrix R = dense_R(make_op(s, q));
    Eigen::JacobiSVD<Matrix> svd(R);
    const double norm = svd.singularValues()[0];
    const double bound = q.maxCoeff() / pmin;
    margin = std::min(margin, (bound - norm) / bound);
    if (norm > bound * (1 + 1e-9)) {
      return fail((bound - norm) / bound, "||R|| exceeds max q / p_min at scale " + fmt(scale));
    }
    if (!(norm < prev)) return fail(-1.0, "||R|| does not shrink as q shrinks");
    prev = norm;
  }
  return {true, margin, ""};
}

// ---------------------------------------------------------------- registry

struct Property {
  std::function<VerifyInstance(Rng&, int, const VerifyOptions&)> gen;
  std::function<CheckResult(const VerifyInstance&, const VerifyOptions&)> check;
  int trials;
};

const std::map<std::string, Property>& registry() {
  static const std::map<std::string, Property> r = {
      {"P1", {gen_p1, check_p1, 200}}, {"P2", {gen_p2, check_p2, 100}},
      {"P3", {gen_p3, check_p3, 120}}, {"P4", {gen_p4, check_p4, 120}},
      {"P5", {gen_p5, check_p5, 100}}, {"P6", {gen_p6, check_p6, 100}},
      {"P7", {gen_p7, check_p7, 100}}, {"P8", {gen_p8, check_p8, 100}},
      {"L1", {gen_l1, check_l1, 100}}, {"V", {gen_v, check_v, 100}},
      {"R1", {gen_r1, check_r1, 100}}, {"G", {gen_g, check_g, 100}},
      {"OS", {gen_os, check_os, 100}},
  };
  return r;
}

const Property& lookup(const std::string& id) {
  auto it = registry().find(id);
  if (it == registry().end()) throw std::invalid_argument("unknown property id '" + id + "'");
  return it->second;
}

}  // namespace

nlohmann::json VerifyInstance::to_json() const {
  return {{"graph", graph_to_json(graph)},
          {"theta", std::vector<double>(theta.data(), theta.data() + theta.size())},
          {"q", std::vector<double>(q.data(), q.data() + q.size())},
          {"seed", seed},
          {"params", params}};
}

VerifyInstance VerifyInstance::from_json(const nlohmann::json& j) {
  VerifyInstance v;
  v.graph = graph_from_json(j.at("graph"));
  const auto th = j.at("theta").get<std::vector<double>>();
  const auto q = j.at("q").get<std::vector<double>>();
  v.theta = Eigen::Map<const Vector>(th.data(), static_cast<Eigen::Index>(th.size()));
  v.q = Eigen::Map<const Vector>(q.data(), static_cast<Eigen::Index>(q.size()));
  v.seed = j.at("seed").get<std::uint64_t>();
  v.params = j.value("params", nlohmann::json::object());
  return v;
}

nlohmann::json PropertyReport::to_json() const {
  auto f = nlohmann::json::array();
  for (const auto& x : failures) {
    f.push_back({{"property", id}, {"fault", fault}, {"message", x.message}, {"instance", x.instance.to_json()}});
  }
  return {{"id", id},
          {"trials", trials},
          {"failures", std::move(f)},
          {"worst_margin", std::isfinite(worst_margin) ? nlohmann::json(worst_margin) : nlohmann::json()},
          {"pass", pass()}};
}

const std::vector<std::string>& property_ids() {
  static const std::vector<std::string> ids = {"P1", "P2", "P3", "P4", "P5", "P6", "P7",
                                               "P8", "L1", "V",  "R1", "G",  "OS"};
  return ids;
}

int default_trials(const std::string& id) { return lookup(id).trials; }

SparseMatrix verification_laplacian(const Graph& g, const std::string& fault) {
  SparseMatrix L = normalized_laplacian(g);
  if (fault.empty()) return L;
  if (fault == "asymmetric_laplacian") {
    // Scale the strictly upper triangle.
    for (int r = 0; r < L.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(L, r); it; ++it)
        if (it.col() > it.row()) it.valueRef() *= 1.1;
    return L;
  }
  throw std::invalid_argument("unknown fault '" + fault + "'");
}

CheckResult check_instance(const std::string& id, const VerifyInstance& inst,
                           const VerifyOptions& opts) {
  try {
    return lookup(id).check(inst, opts);
  } catch (const std::invalid_argument& e) {
    if (registry().count(id) == 0) throw;
    return {false, -kInf, std::string("exception: ") + e.what()};
  } catch (const std::exception& e) {
    return {false, -kInf, std::string("exception: ") + e.what()};
  }
}

PropertyReport run_property(const std::string& id, int trials, std::uint64_t seed,
                            const VerifyOptions& opts) {
  const Property& prop = lookup(id);
  verification_laplacian(Graph::from_edges(2, std::vector<Edge>{{0, 1}}), opts.fault);
  if (trials <= 0) trials = prop.trials;
  PropertyReport rep;
  rep.id = id;
  rep.fault = opts.fault;
  rep.trials = trials;
  rep.worst_margin = kInf;
  Rng rng(derive_seed(seed, "verify/" + id));
  for (int t = 0; t < trials; ++t) {
    const VerifyInstance inst = prop.gen(rng, t, opts);
    const CheckResult r = check_instance(id, inst, opts);
    rep.worst_margin = std::min(rep.worst_margin, r.margin);
    if (!r.ok) rep.failures.push_back({r.message, inst});
  }
  return rep;
}

bool VerifySummary::pass() const {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass(); });
}

nlohmann::json VerifySummary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : reports) j[r.id] = r.to_json();
  return j;
}

std::string VerifySummary::table() const {
  std::ostringstream o;
  o << std::left << std::setw(6) << "id" << std::setw(8) << "trials" << std::setw(10) << "failures"
    << std::setw(16) << "worst_margin"
    << "result\n";
  for (const auto& r : reports) {
    o << std::left << std::setw(6) << r.id << std::setw(8) << r.trials << std::setw(10)
      << r.failures.size() << std::setw(16) << fmt(r.worst_margin) << (r.pass() ? "pass" : "FAIL")
      << "\n";
  }
  return o.str();
}

VerifySummary run_all(std::uint64_t seed, const VerifyOptions& opts, int trials,
                      const std::vector<std::string>& only) {
  VerifySummary s;
  for (const auto& id : only.empty() ? property_ids() : only) {
    s.reports.push_back(run_property(id, trials, seed, opts));
  }
  return s;
}

std::vector<PropertyReport> replay(const nlohmann::json& record) {
  std::vector<PropertyReport> out;
  if (record.is_array()) {
    for (const auto& r : record) {
      auto part = replay(r);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  if (record.contains("instance")) {
    const std::string id = record.at("property").get<std::string>();
    VerifyOptions opts;
    opts.fault = record.value("fault", std::string());
    const VerifyInstance inst = VerifyInstance::from_json(record.at("instance"));
    const CheckResult r = check_instance(id, inst, opts);
    PropertyReport rep;
    rep.id = id;
    rep.fault = opts.fault;
    rep.trials = 1;
    rep.worst_margin = r.margin;
    if (!r.ok) rep.failures.push_back({r.message, inst});
    out.push_back(std::move(rep));
    return out;
  }
  if (record.contains("failures")) return replay(record.at("failures"));
  for (const auto& [key, value] : record.items()) {
    if (value.is_object() && value.contains("failures")) {
      auto part = replay(value.at("failures"));
      out.insert(out.end(), part.begin(), part.end());
    }
  }
  return out;
}

}  // namespace tikhonov
