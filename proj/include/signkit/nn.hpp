#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/rng.hpp"
#include "signkit/tensor.hpp"

namespace signkit::nn {

enum class Mode { Train, Eval };

// Weight init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)). Biases start at
// zero except the LSTM forget gate (+1), applied by the model builders.
inline Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in,
                          Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values) v = rng.uniform(-bound, bound);
  return t;
}

inline void matvec_add(const Tensor& w, const double* x, double* y) {
  const std::size_t r = w.dim(0), c = w.dim(1);
  for (std::size_t i = 0; i < r; ++i) y[i] += dot_span(w.row(i), x, c);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

// ---------------------------------------------------------------- linear

struct LinearCache {
  Tensor x;
};

// y = x w^T + b with x [N,in], w [out,in], b [out].
inline Tensor linear_forward(const Tensor& x, const Tensor& w,
                             const Tensor& b, LinearCache* cache = nullptr) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  if (x.dim(1) != w.dim(1) || b.rank() != 1 || b.dim(0) != w.dim(0))
    throw ShapeMismatch("linear: x" + x.shape_str() + " w" + w.shape_str() +
                        " b" + b.shape_str());
  Tensor y = matmul_nt(x, w);
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    double* row = y.row(i);
    for (std::size_t j = 0; j < y.dim(1); ++j) row[j] += b.values[j];
  }
  if (cache) cache->x = x;
  return y;
}

// Accumulates dw/db; returns dx.
inline Tensor linear_backward(const Tensor& dy, const LinearCache& cache,
                              const Tensor& w, Tensor& dw, Tensor& db) {
  matmul_tn_acc(dy, cache.x, dw);
  for (std::size_t i = 0; i < dy.dim(0); ++i) {
    const double* row = dy.row(i);
    for (std::size_t j = 0; j < dy.dim(1); ++j) db.values[j] += row[j];
  }
  return matmul(dy, w);
}

// ----------------------------------------------------------- batch norm

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

// 1D batch normalization over rows of x [N,F]. Train mode normalizes by
// batch statistics (biased variance, eps inside the square root) and
// updates the running stats with momentum 0.1; the running variance uses
// the unbiased estimate. Eval mode applies the running stats.
inline Tensor batchnorm1d_forward(const Tensor& x, const Tensor& gamma,
                                  const Tensor& beta, Tensor& running_mean,
                                  Tensor& running_var, Mode mode,
                                  BatchNormCache* cache = nullptr,
                                  double eps = 1e-5, double momentum = 0.1,
                                  bool update_running = true) {
  require_matrix(x, "batchnorm1d");
  const std::size_t n = x.dim(0), f = x.dim(1);
  if (gamma.size() != f || beta.size() != f || running_mean.size() != f ||
      running_var.size() != f)
    throw ShapeMismatch("batchnorm1d: parameter size != feature count");

  Tensor y = Tensor::zeros({n, f});
  if (mode == Mode::Eval) {
    for (std::size_t j = 0; j < f; ++j) {
      const double inv = 1.0 / std::sqrt(running_var.values[j] + eps);
      const double mu = running_mean.values[j];
      const double g = gamma.values[j], b = beta.values[j];
      for (std::size_t i = 0; i < n; ++i)
        y.at(i, j) = g * ((x.at(i, j) - mu) * inv) + b;
    }
    return y;
  }

  if (n < 2) throw BatchTooSmall("batchnorm1d needs N >= 2 in train mode");
  if (cache) {
    cache->xhat = Tensor::zeros({n, f});
    cache->inv_std.assign(f, 0.0);
  }
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    const double g = gamma.values[j], b = beta.values[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double xhat = (x.at(i, j) - mean) * inv;
      if (cache) cache->xhat.at(i, j) = xhat;
      y.at(i, j) = g * xhat + b;
    }
    if (cache) cache->inv_std[j] = inv;
    if (update_running) {
      const double var_unbiased =
          var * static_cast<double>(n) / static_cast<double>(n - 1);
      running_mean.values[j] =
          (1.0 - momentum) * running_mean.values[j] + momentum * mean;
      running_var.values[j] =
          (1.0 - momentum) * running_var.values[j] + momentum * var_unbiased;
    }
  }
  return y;
}

// Train-mode backward; accumulates dgamma/dbeta, returns dx.
inline Tensor batchnorm1d_backward(const Tensor& dy,
                                   const BatchNormCache& cache,
                                   const Tensor& gamma, Tensor& dgamma,
                                   Tensor& dbeta) {
  const std::size_t n = dy.dim(0), f = dy.dim(1);
  Tensor dx = Tensor::zeros({n, f});
  for (std::size_t j = 0; j < f; ++j) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_dy += dy.at(i, j);
      sum_dy_xhat += dy.at(i, j) * cache.xhat.at(i, j);
    }
    dbeta.values[j] += sum_dy;
    dgamma.values[j] += sum_dy_xhat;
    const double g = gamma.values[j];
    const double inv = cache.inv_std[j];
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double dxhat = dy.at(i, j) * g;
      dx.at(i, j) = inv * (dxhat - inv_n * (g * sum_dy +
                                            cache.xhat.at(i, j) * g *
                                                sum_dy_xhat));
    }
  }
  return dx;
}

// -------------------------------------------------------------- dropout

struct DropoutCache {
  std::vector<double> keep;  // per-element multiplier: 0 or 1/(1-rate)
};

// Train: zeroes each entry with probability rate and scales survivors by
// 1/(1-rate). Eval (or rate 0): identity, and the rng is not consumed.
inline Tensor dropout_forward(const Tensor& x, double rate, Rng& rng,
                              Mode mode, DropoutCache* cache = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw Error("dropout rate must be in [0,1)");
  if (mode == Mode::Eval || rate == 0.0) {
    if (cache) cache->keep.assign(x.size(), 1.0);
    return x;
  }
  const double scale = 1.0 / (1.0 - rate);
  Tensor y = x;
  if (cache) cache->keep.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (rng.uniform() < rate) {
      y.values[i] = 0.0;
    } else {
      y.values[i] *= scale;
      if (cache) cache->keep[i] = scale;
    }
  }
  return y;
}

inline Tensor dropout_backward(const Tensor& dy, const DropoutCache& cache) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values[i] *= cache.keep[i];
  return dx;
}

// -------------------------------------------------- softmax / log-softmax

// Numerically stable row-wise softmax over the last dimension.
inline Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax");
  Tensor y = x;
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = y.row(i);
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return y;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  require_matrix(x, "log_softmax");
  Tensor y = x;
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = y.row(i);
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  return y;
}

// dx for y = softmax(x) given dy and y: dx = y * (dy - sum(dy * y)).
inline Tensor softmax_backward_rows(const Tensor& dy, const Tensor& y) {
  Tensor dx = Tensor::zeros(dy.shape);
  const std::size_t n = dy.dim(0), c = dy.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy.row(i);
    const double* yr = y.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += dyr[j] * yr[j];
    double* dxr = dx.row(i);
    for (std::size_t j = 0; j < c; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
  return dx;
}

// dx for z = log_softmax(x) given dz and z: dx = dz - exp(z) * sum(dz).
inline Tensor log_softmax_backward_rows(const Tensor& dz, const Tensor& z) {
  Tensor dx = dz;
  const std::size_t n = dz.dim(0), c = dz.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dzr = dz.row(i);
    const double* zr = z.row(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += dzr[j];
    double* dxr = dx.row(i);
    for (std::size_t j = 0; j < c; ++j) dxr[j] = dzr[j] - std::exp(zr[j]) * sum;
  }
  return dx;
}

// ----------------------------------------------------------------- LSTM

struct LstmWeightRefs {
  const Tensor* w_ih;  // [4H, in]
  const Tensor* w_hh;  // [4H, H]
  const Tensor* b_ih;  // [4H]
  const Tensor* b_hh;  // [4H]
};

struct LstmGradRefs {
  Tensor* w_ih;
  Tensor* w_hh;
  Tensor* b_ih;
  Tensor* b_hh;
};

struct LstmSeqCache {
  Tensor x;      // [T,in]
  Tensor gates;  // [T,4H], post-activation, gate order i,f,g,o
  Tensor c;      // [T,H] cell states (frame-indexed)
  Tensor h;      // [T,H] outputs (frame-indexed)
  bool reverse = false;
};

// One LSTM step: standard gate equations, gate order i,f,g,o.
inline void lstm_cell(const double* gates_pre, const double* c_prev,
                      std::size_t hidden, double* gates_post, double* c_out,
                      double* h_out) {
  for (std::size_t u = 0; u < hidden; ++u) {
    const double gi = sigmoid(gates_pre[u]);
    const double gf = sigmoid(gates_pre[hidden + u]);
    const double gg = std::tanh(gates_pre[2 * hidden + u]);
    const double go = sigmoid(gates_pre[3 * hidden + u]);
    gates_post[u] = gi;
    gates_post[hidden + u] = gf;
    gates_post[2 * hidden + u] = gg;
    gates_post[3 * hidden + u] = go;
    const double c = gf * c_prev[u] + gi * gg;
    c_out[u] = c;
    h_out[u] = go * std::tanh(c);
  }
}

// Runs a full sequence in forward (or reversed) time order. Output rows are
// frame-indexed regardless of direction.
inline Tensor lstm_forward(const Tensor& x, const LstmWeightRefs& w,
                           std::size_t hidden, bool reverse,
                           LstmSeqCache* cache = nullptr) {
  require_matrix(x, "lstm");
  const std::size_t t_count = x.dim(0);
  const std::size_t in = x.dim(1);
  if (w.w_ih->dim(0) != 4 * hidden || w.w_ih->dim(1) != in ||
      w.w_hh->dim(0) != 4 * hidden || w.w_hh->dim(1) != hidden ||
      w.b_ih->size() != 4 * hidden || w.b_hh->size() != 4 * hidden)
    throw ShapeMismatch("lstm: weight shapes disagree with hidden=" +
                        std::to_string(hidden) + ", in=" + std::to_string(in));

  Tensor xw = matmul_nt(x, *w.w_ih);  // [T,4H]
  Tensor gates = Tensor::zeros({t_count, 4 * hidden});
  Tensor c = Tensor::zeros({t_count, hidden});
  Tensor h = Tensor::zeros({t_count, hidden});
  std::vector<double> pre(4 * hidden);
  std::vector<double> zero(hidden, 0.0);

  for (std::size_t p = 0; p < t_count; ++p) {
    const std::size_t t = reverse ? t_count - 1 - p : p;
    const double* h_prev = (p == 0) ? zero.data()
                                    : h.row(reverse ? t + 1 : t - 1);
    const double* c_prev = (p == 0) ? zero.data()
                                    : c.row(reverse ? t + 1 : t - 1);
    const double* xw_row = xw.row(t);
    for (std::size_t u = 0; u < 4 * hidden; ++u)
      pre[u] = xw_row[u] + w.b_ih->values[u] + w.b_hh->values[u];
    matvec_add(*w.w_hh, h_prev, pre.data());
    lstm_cell(pre.data(), c_prev, hidden, gates.row(t), c.row(t), h.row(t));
  }

  if (cache) {
    cache->x = x;
    cache->gates = gates;
    cache->c = c;
    cache->reverse = reverse;
    cache->h = h;
  }
  return h;
}

// Backpropagation through time; accumulates weight grads, returns dx [T,in].
inline Tensor lstm_backward(const Tensor& dh_out, const LstmSeqCache& cache,
                            const LstmWeightRefs& w, LstmGradRefs g) {
  const std::size_t t_count = cache.x.dim(0);
  const std::size_t hidden = cache.c.dim(1);
  Tensor dgates = Tensor::zeros({t_count, 4 * hidden});  // pre-activation
  std::vector<double> dh(hidden, 0.0), dc(hidden, 0.0), dh_prev(hidden);
  std::vector<double> zero(hidden, 0.0);

  for (std::size_t q = 0; q < t_count; ++q) {
    // Walk processing order backwards.
    const std::size_t p = t_count - 1 - q;
    const std::size_t t = cache.reverse ? t_count - 1 - p : p;
    const double* c_prev =
        (p == 0) ? zero.data() : cache.c.row(cache.reverse ? t + 1 : t - 1);
    const double* gate = cache.gates.row(t);
    const double* c_row = cache.c.row(t);
    double* dgate = dgates.row(t);
    const double* dout = dh_out.row(t);

    for (std::size_t u = 0; u < hidden; ++u) {
      const double gi = gate[u];
      const double gf = gate[hidden + u];
      const double gg = gate[2 * hidden + u];
      const double go = gate[3 * hidden + u];
      const double tc = std::tanh(c_row[u]);
      const double dh_u = dout[u] + dh[u];
      const double dct = dh_u * go * (1.0 - tc * tc) + dc[u];
      const double di = dct * gg;
      const double df = dct * c_prev[u];
      const double dg = dct * gi;
      const double do_ = dh_u * tc;
      dgate[u] = di * gi * (1.0 - gi);
      dgate[hidden + u] = df * gf * (1.0 - gf);
      dgate[2 * hidden + u] = dg * (1.0 - gg * gg);
      dgate[3 * hidden + u] = do_ * go * (1.0 - go);
      dc[u] = dct * gf;
    }
    matvec_t(*w.w_hh, dgate, dh_prev.data());
    dh = dh_prev;
  }

  // Weight gradients batched over time.
  matmul_tn_acc(dgates, cache.x, *g.w_ih);
  Tensor h_prev = Tensor::zeros({t_count, hidden});
  for (std::size_t p = 1; p < t_count; ++p) {
    const std::size_t t = cache.reverse ? t_count - 1 - p : p;
    const std::size_t prev_t = cache.reverse ? t + 1 : t - 1;
    std::copy(cache.h.row(prev_t), cache.h.row(prev_t) + hidden,
              h_prev.row(t));
  }
  matmul_tn_acc(dgates, h_prev, *g.w_hh);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* row = dgates.row(t);
    for (std::size_t u = 0; u < 4 * hidden; ++u) {
      g.b_ih->values[u] += row[u];
      g.b_hh->values[u] += row[u];
    }
  }
  return matmul(dgates, *w.w_ih);
}

// ------------------------------------------------------- max pool (time)

// Column-wise max over rows; ties go to the earliest row so the backward
// pass is deterministic.
inline Tensor max_pool_time(const Tensor& x,
                            std::vector<std::size_t>* argmax = nullptr) {
  require_matrix(x, "max_pool_time");
  const std::size_t t_count = x.dim(0), f = x.dim(1);
  if (t_count == 0) throw ShapeMismatch("max_pool_time: T >= 1 required");
  Tensor y = Tensor::zeros({f});
  if (argmax) argmax->assign(f, 0);
  for (std::size_t j = 0; j < f; ++j) {
    double best = x.at(0, j);
    std::size_t best_t = 0;
    for (std::size_t t = 1; t < t_count; ++t) {
      if (x.at(t, j) > best) {
        best = x.at(t, j);
        best_t = t;
      }
    }
    y.values[j] = best;
    if (argmax) (*argmax)[j] = best_t;
  }
  return y;
}

inline Tensor max_pool_time_backward(const Tensor& dy,
                                     const std::vector<std::size_t>& argmax,
                                     std::size_t t_rows) {
  const std::size_t f = dy.size();
  Tensor dx = Tensor::zeros({t_rows, f});
  for (std::size_t j = 0; j < f; ++j) dx.at(argmax[j], j) += dy.values[j];
  return dx;
}

// ------------------------------------------------- positional encoding

// PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(t / 10000^(2i/d)).
inline Tensor positional_encoding(std::size_t t_count, std::size_t d_model) {
  if (d_model % 2 != 0)
    throw OddDimension("positional encoding needs an even model dimension");
  Tensor pe = Tensor::zeros({t_count, d_model});
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(
          10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      const double arg = static_cast<double>(t) * rate;
      pe.at(t, 2 * i) = std::sin(arg);
      pe.at(t, 2 * i + 1) = std::cos(arg);
    }
  }
  return pe;
}

// ------------------------------------------------------------ layer norm

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

// Row-wise normalization to mean 0, variance 1 (population variance), then
// the affine gamma/beta. eps = 1e-12 keeps the normalized statistics within
// the documented tolerances at double precision.
inline Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& beta,
                                 LayerNormCache* cache = nullptr,
                                 double eps = 1e-12) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.dim(0), f = x.dim(1);
  if (gamma.size() != f || beta.size() != f)
    throw ShapeMismatch("layer_norm: affine size != feature count");
  Tensor y = Tensor::zeros({n, f});
  if (cache) {
    cache->xhat = Tensor::zeros({n, f});
    cache->inv_std.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < f; ++j) mean += row[j];
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(f);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (cache) cache->inv_std[i] = inv;
    for (std::size_t j = 0; j < f; ++j) {
      const double xhat = (row[j] - mean) * inv;
      if (cache) cache->xhat.at(i, j) = xhat;
      y.at(i, j) = gamma.values[j] * xhat + beta.values[j];
    }
  }
  return y;
}

inline Tensor layer_norm_backward(const Tensor& dy,
                                  const LayerNormCache& cache,
                                  const Tensor& gamma, Tensor& dgamma,
                                  Tensor& dbeta) {
  const std::size_t n = dy.dim(0), f = dy.dim(1);
  Tensor dx = Tensor::zeros({n, f});
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy.row(i);
    const double* xhat = cache.xhat.row(i);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      dgamma.values[j] += dyr[j] * xhat[j];
      dbeta.values[j] += dyr[j];
      const double dxhat = dyr[j] * gamma.values[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat[j];
    }
    const double inv = cache.inv_std[i];
    const double inv_f = 1.0 / static_cast<double>(f);
    for (std::size_t j = 0; j < f; ++j) {
      const double dxhat = dyr[j] * gamma.values[j];
      dx.at(i, j) =
          inv * (dxhat - inv_f * (sum_dxhat + xhat[j] * sum_dxhat_xhat));
    }
  }
  return dx;
}

// ------------------------------------------------------------------ relu

struct ReluCache {
  Tensor x;
};

inline Tensor relu_forward(const Tensor& x, ReluCache* cache = nullptr) {
  Tensor y = x;
  for (auto& v : y.values) v = v > 0.0 ? v : 0.0;
  if (cache) cache->x = x;
  return y;
}

inline Tensor relu_backward(const Tensor& dy, const ReluCache& cache) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (cache.x.values[i] <= 0.0) dx.values[i] = 0.0;
  return dx;
}

// ---------------------------------------------- multi-head self-attention

struct MhsaWeightRefs {
  const Tensor *wq, *wk, *wv, *wo;  // [d,d]
  const Tensor *bq, *bk, *bv, *bo;  // [d]
};

struct MhsaGradRefs {
  Tensor *wq, *wk, *wv, *wo;
  Tensor *bq, *bk, *bv, *bo;
};

struct MhsaCache {
  Tensor x, q, k, v;          // [T,d]
  std::vector<Tensor> attn;   // per head, [T,T] softmaxed
  Tensor concat;              // [T,d] head outputs before the O projection
  std::size_t heads = 1;
};

namespace detail {
inline Tensor head_slice(const Tensor& m, std::size_t head,
                         std::size_t head_dim) {
  Tensor out = Tensor::zeros({m.dim(0), head_dim});
  for (std::size_t t = 0; t < m.dim(0); ++t)
    std::copy(m.row(t) + head * head_dim, m.row(t) + (head + 1) * head_dim,
              out.row(t));
  return out;
}

inline void head_scatter_add(Tensor& m, const Tensor& part, std::size_t head,
                             std::size_t head_dim) {
  for (std::size_t t = 0; t < m.dim(0); ++t)
    for (std::size_t j = 0; j < head_dim; ++j)
      m.row(t)[head * head_dim + j] += part.at(t, j);
}
}  // namespace detail

// Full bidirectional (unmasked) multi-head self-attention with learned
// Q,K,V,O projections: per head softmax(Q K^T / sqrt(d/H)) V.
inline Tensor mhsa_forward(const Tensor& x, const MhsaWeightRefs& w,
                           std::size_t heads, MhsaCache* cache = nullptr) {
  require_matrix(x, "mhsa");
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0)
    throw IndivisibleHeads("model dim " + std::to_string(d) +
                           " not divisible by " + std::to_string(heads) +
                           " heads");
  const std::size_t head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor q = linear_forward(x, *w.wq, *w.bq);
  Tensor k = linear_forward(x, *w.wk, *w.bk);
  Tensor v = linear_forward(x, *w.wv, *w.bv);

  Tensor concat = Tensor::zeros({x.dim(0), d});
  std::vector<Tensor> attn;
  attn.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = detail::head_slice(q, h, head_dim);
    Tensor kh = detail::head_slice(k, h, head_dim);
    Tensor vh = detail::head_slice(v, h, head_dim);
    Tensor scores = matmul_nt(qh, kh);
    for (auto& s : scores.values) s *= scale;
    Tensor a = softmax_rows(scores);
    Tensor oh = matmul(a, vh);
    detail::head_scatter_add(concat, oh, h, head_dim);
    attn.push_back(std::move(a));
  }
  Tensor y = linear_forward(concat, *w.wo, *w.bo);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->concat = std::move(concat);
    cache->heads = heads;
  }
  return y;
}

inline Tensor mhsa_backward(const Tensor& dy, const MhsaCache& cache,
                            const MhsaWeightRefs& w, MhsaGradRefs g) {
  const std::size_t d = cache.x.dim(1);
  const std::size_t heads = cache.heads;
  const std::size_t head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Output projection.
  LinearCache out_cache{cache.concat};
  Tensor dconcat = linear_backward(dy, out_cache, *w.wo, *g.wo, *g.bo);

  Tensor dq = Tensor::zeros(cache.q.shape);
  Tensor dk = Tensor::zeros(cache.k.shape);
  Tensor dv = Tensor::zeros(cache.v.shape);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor doh = detail::head_slice(dconcat, h, head_dim);
    Tensor qh = detail::head_slice(cache.q, h, head_dim);
    Tensor kh = detail::head_slice(cache.k, h, head_dim);
    Tensor vh = detail::head_slice(cache.v, h, head_dim);
    const Tensor& a = cache.attn[h];

    Tensor da = matmul_nt(doh, vh);
    Tensor dvh = Tensor::zeros(vh.shape);
    matmul_tn_acc(a, doh, dvh);
    Tensor ds = softmax_backward_rows(da, a);
    for (auto& s : ds.values) s *= scale;
    Tensor dqh = matmul(ds, kh);
    Tensor dkh = Tensor::zeros(kh.shape);
    matmul_tn_acc(ds, qh, dkh);

    detail::head_scatter_add(dq, dqh, h, head_dim);
    detail::head_scatter_add(dk, dkh, h, head_dim);
    detail::head_scatter_add(dv, dvh, h, head_dim);
  }

  LinearCache xc{cache.x};
  Tensor dx = linear_backward(dq, xc, *w.wq, *g.wq, *g.bq);
  Tensor dx_k = linear_backward(dk, xc, *w.wk, *g.wk, *g.bk);
  Tensor dx_v = linear_backward(dv, xc, *w.wv, *g.wv, *g.bv);
  dx.add_scaled(dx_k, 1.0);
  dx.add_scaled(dx_v, 1.0);
  return dx;
}

// ----------------------------------------------------- transformer block

struct TransformerBlockWeightRefs {
  MhsaWeightRefs attn;
  const Tensor *ln1_g, *ln1_b, *ln2_g, *ln2_b;
  const Tensor *ff_w1, *ff_b1, *ff_w2, *ff_b2;
};

struct TransformerBlockGradRefs {
  MhsaGradRefs attn;
  Tensor *ln1_g, *ln1_b, *ln2_g, *ln2_b;
  Tensor *ff_w1, *ff_b1, *ff_w2, *ff_b2;
};

struct TransformerBlockCache {
  MhsaCache attn;
  DropoutCache drop1, drop2;
  LayerNormCache ln1, ln2;
  LinearCache ff1, ff2;
  ReluCache relu;
};

// Post-norm block: x <- LN(x + dropout(MHSA(x))); x <- LN(x + dropout(FF(x)))
// with FF = linear -> ReLU -> linear. Dropout is identity in eval mode or at
// rate 0.
inline Tensor transformer_block_forward(const Tensor& x,
                                        const TransformerBlockWeightRefs& w,
                                        std::size_t heads, double dropout_rate,
                                        Rng& rng, Mode mode,
                                        TransformerBlockCache* cache) {
  MhsaCache* ac = cache ? &cache->attn : nullptr;
  Tensor a = mhsa_forward(x, w.attn, heads, ac);
  a = dropout_forward(a, dropout_rate, rng, mode,
                      cache ? &cache->drop1 : nullptr);
  a.add_scaled(x, 1.0);
  Tensor n1 = layer_norm_forward(a, *w.ln1_g, *w.ln1_b,
                                 cache ? &cache->ln1 : nullptr);

  Tensor f = linear_forward(n1, *w.ff_w1, *w.ff_b1,
                            cache ? &cache->ff1 : nullptr);
  f = relu_forward(f, cache ? &cache->relu : nullptr);
  f = linear_forward(f, *w.ff_w2, *w.ff_b2, cache ? &cache->ff2 : nullptr);
  f = dropout_forward(f, dropout_rate, rng, mode,
                      cache ? &cache->drop2 : nullptr);
  f.add_scaled(n1, 1.0);
  return layer_norm_forward(f, *w.ln2_g, *w.ln2_b,
                            cache ? &cache->ln2 : nullptr);
}

inline Tensor transformer_block_backward(const Tensor& dy,
                                         const TransformerBlockCache& cache,
                                         const TransformerBlockWeightRefs& w,
                                         TransformerBlockGradRefs g) {
  Tensor dr2 =
      layer_norm_backward(dy, cache.ln2, *w.ln2_g, *g.ln2_g, *g.ln2_b);
  // dr2 feeds both the residual (n1) and the feed-forward path.
  Tensor df = dropout_backward(dr2, cache.drop2);
  Tensor dmid = linear_backward(df, cache.ff2, *w.ff_w2, *g.ff_w2, *g.ff_b2);
  dmid = relu_backward(dmid, cache.relu);
  Tensor dn1 = linear_backward(dmid, cache.ff1, *w.ff_w1, *g.ff_w1, *g.ff_b1);
  dn1.add_scaled(dr2, 1.0);

  Tensor dr1 =
      layer_norm_backward(dn1, cache.ln1, *w.ln1_g, *g.ln1_g, *g.ln1_b);
  Tensor da = dropout_backward(dr1, cache.drop1);
  Tensor dx = mhsa_backward(da, cache.attn, w.attn, g.attn);
  dx.add_scaled(dr1, 1.0);
  return dx;
}

}  // namespace signkit::nn
