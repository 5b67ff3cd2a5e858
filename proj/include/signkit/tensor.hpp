#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/rng.hpp"

namespace signkit {

// Dense row-major n-dimensional array of 64-bit floats. Value semantics,
// no views, no broadcasting: shape agreement is checked by the operations.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.values.assign(product(t.shape), 0.0);
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> v) {
    Tensor t;
    t.shape = std::move(shape);
    t.values = std::move(v);
    if (t.values.size() != product(t.shape))
      throw ShapeMismatch("tensor value count does not match shape");
    return t;
  }

  static std::size_t product(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  double& at(std::size_t i) { return values[i]; }
  double at(std::size_t i) const { return values[i]; }
  double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return values[i * shape[1] + j];
  }

  double* row(std::size_t i) { return values.data() + i * shape[1]; }
  const double* row(std::size_t i) const {
    return values.data() + i * shape[1];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

  void fill(double v) { std::fill(values.begin(), values.end(), v); }

  void add_scaled(const Tensor& other, double scale) {
    if (!same_shape(other))
      throw ShapeMismatch("add_scaled: " + shape_str() + " vs " +
                          other.shape_str());
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] += scale * other.values[i];
  }
};

inline void require_matrix(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ShapeMismatch(std::string(who) + ": expected rank-2 tensor, got " + t.shape_str());
}

// Dot product with eight independent accumulators. The lane structure lets
// the compiler vectorize the reduction while keeping a fixed, deterministic
// summation order.
inline double dot_span(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t p = 0;
  for (; p + 8 <= n; p += 8)
    for (int u = 0; u < 8; ++u) acc[u] += a[p + u] * b[p + u];
  double tail = 0.0;
  for (; p < n; ++p) tail += a[p] * b[p];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

// C = A (M,K) * B (K,N). Loop order keeps each row of B resident while it
// is applied to every row of A, so the larger operand is streamed once.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeMismatch("matmul: " + a.shape_str() + " x " + b.shape_str());
  Tensor c = Tensor::zeros({m, n});
  constexpr std::size_t kTile = 64;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    const std::size_t i1 = std::min(m, i0 + kTile);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.row(p);
      for (std::size_t i = i0; i < i1; ++i) {
        const double av = a.row(i)[p];
        if (av == 0.0) continue;
        double* crow = c.row(i);
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

// C = A (M,K) * B^T with B stored (N,K): the x * W^T layout used by the
// layers. Each row of B is read once per tile of A rows.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw ShapeMismatch("matmul_nt: " + a.shape_str() + " x " + b.shape_str() +
                        "^T");
  Tensor c = Tensor::zeros({m, n});
  constexpr std::size_t kTile = 64;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    const std::size_t i1 = std::min(m, i0 + kTile);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.row(j);
      for (std::size_t i = i0; i < i1; ++i)
        c.row(i)[j] = dot_span(a.row(i), brow, k);
    }
  }
  return c;
}

// C += A^T B with A stored (K,M), B (K,N): the dW = dy^T x pattern. A is
// transposed into a scratch block so each row of C accumulates with unit
// stride and is touched exactly once.
inline void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  require_matrix(a, "matmul_tn_acc");
  require_matrix(b, "matmul_tn_acc");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k || c.dim(0) != m || c.dim(1) != n)
    throw ShapeMismatch("matmul_tn_acc: " + a.shape_str() + "^T x " +
                        b.shape_str() + " -> " + c.shape_str());
  std::vector<double> at(k * m);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a.row(p)[i];
  for (std::size_t i = 0; i < m; ++i) {
    const double* acol = at.data() + i * k;
    double* crow = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = acol[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// y = W (R,C) * x (C), written into caller storage.
inline void matvec(const Tensor& w, const double* x, double* y) {
  const std::size_t r = w.dim(0), c = w.dim(1);
  for (std::size_t i = 0; i < r; ++i) y[i] = dot_span(w.row(i), x, c);
}

// y = W^T * x with W stored (R,C), x length R, y length C.
inline void matvec_t(const Tensor& w, const double* x, double* y) {
  const std::size_t r = w.dim(0), c = w.dim(1);
  std::fill(y, y + c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const double xv = x[i];
    if (xv == 0.0) continue;
    const double* wrow = w.row(i);
    for (std::size_t j = 0; j < c; ++j) y[j] += xv * wrow[j];
  }
}

// Named parameter bag with a parallel gradient map. Iteration over the map
// is sorted by path, which fixes the optimizer update order and the
// checkpoint layout. Buffers (e.g. batch-norm running stats) live in the
// same map but are skipped by optimizers.
struct ParameterSet {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> grads;
  std::set<std::string> buffers;

  void add(const std::string& path, Tensor t, bool is_buffer = false) {
    grads[path] = Tensor::zeros(t.shape);
    params[path] = std::move(t);
    if (is_buffer) buffers.insert(path);
  }

  Tensor& param(const std::string& path) {
    auto it = params.find(path);
    if (it == params.end()) throw Error("unknown parameter: " + path);
    return it->second;
  }

  const Tensor& param(const std::string& path) const {
    auto it = params.find(path);
    if (it == params.end()) throw Error("unknown parameter: " + path);
    return it->second;
  }

  Tensor& grad(const std::string& path) {
    auto it = grads.find(path);
    if (it == grads.end()) throw Error("unknown gradient: " + path);
    return it->second;
  }

  bool is_buffer(const std::string& path) const {
    return buffers.count(path) != 0;
  }

  void zero_grads() {
    for (auto& [path, g] : grads) g.fill(0.0);
  }

  // Adds another gradient set (same structure) into this one, in path order.
  void accumulate_grads(const ParameterSet& other) {
    for (auto& [path, g] : grads) {
      const Tensor& og = other.grads.at(path);
      for (std::size_t i = 0; i < g.size(); ++i) g.values[i] += og.values[i];
    }
  }

  std::size_t trainable_value_count() const {
    std::size_t n = 0;
    for (const auto& [path, t] : params)
      if (!is_buffer(path)) n += t.size();
    return n;
  }
};

}  // namespace signkit
