#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tikhonov/rng.hpp"
#include "tikhonov/types.hpp"

namespace tikhonov {

enum class Activation { Tanh, Identity };

// Sum_k T_k(L - I) H W_k + b, then the activation, then the skip term
// (H itself, or H S when the widths differ).
struct ChebLayer {
  std::vector<Matrix> W;  // order + 1 matrices, d_in x d_out
  Matrix b;               // 1 x d_out
  Matrix skip;            // d_in x d_out, empty when d_in == d_out
  Activation activation = Activation::Tanh;
  bool use_skip = true;

  int order() const { return static_cast<int>(W.size()) - 1; }
  int in_dim() const { return static_cast<int>(W.front().rows()); }
  int out_dim() const { return static_cast<int>(W.front().cols()); }
};

struct QNetConfig {
  int layers = 5;
  int order = 3;
  int hidden = 8;
  double q_init = 0.1;  // head bias is log(q_init)
};

// Chebyshev layers followed by a per-node MLP hidden -> hidden -> 1.
struct QNetParams {
  std::vector<ChebLayer> layers;
  Matrix head_W1, head_b1, head_W2, head_b2;
  Activation head_activation = Activation::Tanh;

  // Glorot-uniform layers; the head's last layer starts at zero so every
  // node begins at q~ = log(q_init).
  static QNetParams init(int in_dim, const QNetConfig& cfg, Rng& rng);
  // Same shapes, all zeros.
  QNetParams zeros_like() const;

  void visit(const std::string& prefix, const std::function<void(const std::string&, Matrix&)>& fn);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct ChebLayerTape {
  Matrix input;
  std::vector<Matrix> cheb;  // T_k(L~) input
  Matrix pre;                // before the activation
  Matrix act;                // after the activation
};

struct QNetTape {
  const SparseMatrix* L = nullptr;
  std::vector<ChebLayerTape> layers;
  Matrix trunk;   // last layer output
  Matrix hidden;  // head hidden layer after its activation
};

// T_k(L - I) X for k = 0..order.
std::vector<Matrix> chebyshev_basis(const SparseMatrix& L, const Matrix& X, int order);

Matrix cheb_layer_forward(const SparseMatrix& L, const Matrix& H, const ChebLayer& layer,
                          ChebLayerTape* tape = nullptr);

// Returns q~ (n x 1). The tape keeps a pointer to L, which must outlive it.
Vector qnet_forward(const SparseMatrix& L, const Matrix& X, const QNetParams& params,
                    QNetTape* tape = nullptr);

// Accumulates parameter gradients into `grads` (shaped like params) and
// returns d q~ / d X.
Matrix qnet_backward(const QNetTape& tape, const QNetParams& params, const Vector& dqtilde,
                     QNetParams& grads);

}  // namespace tikhonov
