#include "tikhonov/qnet.hpp"

#include <cmath>
#include <stdexcept>

namespace tikhonov {

namespace {

Matrix glorot(int rows, int cols, double fan, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, -limit, limit);
  return m;
}

// (L - I) X
Matrix shifted(const SparseMatrix& L, const Matrix& X) {
  Matrix y = L * X;
  y -= X;
  return y;
}

Matrix activate(const Matrix& x, Activation a) {
  return a == Activation::Tanh ? Matrix(x.array().tanh()) : x;
}

}  // namespace

QNetParams QNetParams::init(int in_dim, const QNetConfig& cfg, Rng& rng) {
  if (in_dim < 1 || cfg.layers < 1 || cfg.order < 1 || cfg.hidden < 1 || !(cfg.q_init > 0.0)) {
    throw std::invalid_argument("invalid Q-network configuration");
  }
  QNetParams p;
  int d_in = in_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    ChebLayer layer;
    const double fan = (cfg.order + 1) * d_in + cfg.hidden;
    for (int k = 0; k <= cfg.order; ++k) layer.W.push_back(glorot(d_in, cfg.hidden, fan, rng));
    layer.b = Matrix::Zero(1, cfg.hidden);
    if (d_in != cfg.hidden) layer.skip = glorot(d_in, cfg.hidden, d_in + cfg.hidden, rng);
    p.layers.push_back(std::move(layer));
    d_in = cfg.hidden;
  }
  p.head_W1 = glorot(cfg.hidden, cfg.hidden, 2.0 * cfg.hidden, rng);
  p.head_b1 = Matrix::Zero(1, cfg.hidden);
  p.head_W2 = Matrix::Zero(cfg.hidden, 1);
  p.head_b2 = Matrix::Constant(1, 1, std::log(cfg.q_init));
  return p;
}

QNetParams QNetParams::zeros_like() const {
  QNetParams z = *this;
  z.visit("", [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

void QNetParams::visit(const std::string& prefix,
                       const std::function<void(const std::string&, Matrix&)>& fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + "layer" + std::to_string(l) + ".";
    for (std::size_t k = 0; k < layers[l].W.size(); ++k) fn(base + "W" + std::to_string(k), layers[l].W[k]);
    fn(base + "b", layers[l].b);
    if (layers[l].skip.size() > 0) fn(base + "skip", layers[l].skip);
  }
  fn(prefix + "head.W1", head_W1);
  fn(prefix + "head.b1", head_b1);
  fn(prefix + "head.W2", head_W2);
  fn(prefix + "head.b2", head_b2);
}

void QNetParams::visit(const std::string& prefix,
                       const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<QNetParams*>(this)->visit(prefix, [&](const std::string& name, Matrix& m) {
    fn(name, m);
  });
}

std::vector<Matrix> chebyshev_basis(const SparseMatrix& L, const Matrix& X, int order) {
  std::vector<Matrix> T;
  T.reserve(order + 1);
  T.push_back(X);
  if (order >= 1) T.push_back(shifted(L, X));
  for (int k = 2; k <= order; ++k) T.push_back(2.0 * shifted(L, T[k - 1]) - T[k - 2]);
  return T;
}

Matrix cheb_layer_forward(const SparseMatrix& L, const Matrix& H, const ChebLayer& layer,
                          ChebLayerTape* tape) {
  if (H.rows() != L.rows() || H.cols() != layer.in_dim()) {
    throw std::invalid_argument("Chebyshev layer input shape mismatch");
  }
  std::vector<Matrix> T = chebyshev_basis(L, H, layer.order());
  Matrix pre = Matrix::Zero(H.rows(), layer.out_dim());
  for (int k = 0; k <= layer.order(); ++k) pre.noalias() += T[k] * layer.W[k];
  pre.rowwise() += layer.b.row(0);
  Matrix out = activate(pre, layer.activation);
  const Matrix act = out;
  if (layer.use_skip) {
    if (layer.skip.size() > 0) {
      out.noalias() += H * layer.skip;
    } else if (layer.in_dim() == layer.out_dim()) {
      out += H;
    } else {
      throw std::invalid_argument("skip connection needs a projection when widths differ");
    }
  }
  if (tape) {
    tape->input = H;
    tape->cheb = std::move(T);
    tape->pre = std::move(pre);
    tape->act = act;
  }
  return out;
}

Vector qnet_forward(const SparseMatrix& L, const Matrix& X, const QNetParams& params,
                    QNetTape* tape) {
  if (X.rows() != L.rows()) throw std::invalid_argument("feature rows must equal node count");
  if (tape) {
    tape->L = &L;
    tape->layers.assign(params.layers.size(), {});
  }
  Matrix H = X;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    H = cheb_layer_forward(L, H, params.layers[l], tape ? &tape->layers[l] : nullptr);
  }
  Matrix hidden = H * params.head_W1;
  hidden.rowwise() += params.head_b1.row(0);
  hidden = activate(hidden, params.head_activation);
  Matrix q = hidden * params.head_W2;
  q.array() += params.head_b2(0, 0);
  if (tape) {
    tape->trunk = std::move(H);
    tape->hidden = std::move(hidden);
  }
  return q.col(0);
}

Matrix qnet_backward(const QNetTape& tape, const QNetParams& params, const Vector& dqtilde,
                     QNetParams& grads) {
  if (!tape.L || tape.layers.size() != params.layers.size() ||
      dqtilde.size() != tape.hidden.rows()) {
    throw std::invalid_argument("Q-network tape does not match this evaluation");
  }
  const SparseMatrix& L = *tape.L;
  grads.head_W2.noalias() += tape.hidden.transpose() * dqtilde;
  grads.head_b2(0, 0) += dqtilde.sum();
  Matrix dpre = dqtilde * params.head_W2.transpose();
  if (params.head_activation == Activation::Tanh) {
    dpre.array() *= 1.0 - tape.hidden.array().square();
  }
  grads.head_W1.noalias() += tape.trunk.transpose() * dpre;
  grads.head_b1 += dpre.colwise().sum();
  Matrix dout = dpre * params.head_W1.transpose();

  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const ChebLayer& layer = params.layers[l];
    const ChebLayerTape& t = tape.layers[l];
    ChebLayer& g = grads.layers[l];
    Matrix dH = Matrix::Zero(t.input.rows(), t.input.cols());
    if (layer.use_skip) {
      if (layer.skip.size() > 0) {
        g.skip.noalias() += t.input.transpose() * dout;
        dH.noalias() += dout * layer.skip.transpose();
      } else {
        dH += dout;
      }
    }
    Matrix dz = dout;
    if (layer.activation == Activation::Tanh) dz.array() *= 1.0 - t.act.array().square();
    g.b += dz.colwise().sum();
    const int r = layer.order();
    std::vector<Matrix> Y(r + 1);
    for (int k = 0; k <= r; ++k) {
      g.W[k].noalias() += t.cheb[k].transpose() * dz;
      Y[k] = dz * layer.W[k].transpose();
    }
    // Clenshaw for sum_k T_k(L~) Y_k; T_k(L~) is symmetric.
    Matrix b1 = Matrix::Zero(dH.rows(), dH.cols());
    Matrix b2 = b1;
    for (int k = r; k >= 1; --k) {
      Matrix b0 = Y[k] + 2.0 * shifted(L, b1) - b2;
      b2 = std::move(b1);
      b1 = std::move(b0);
    }
    dH += Y[0] + shifted(L, b1) - b2;
    dout = std::move(dH);
  }
  return dout;
}

}  // namespace tikhonov
