#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/tensor.hpp"

namespace signkit::ctc {

inline constexpr int kBlank = 0;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) with -inf treated as "no mass".
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// T x (C+1) matrix of per-frame log-probabilities, class 0 reserved for the
// blank. Construction checks that every row log-sum-exps to 0 (± 1e-9); the
// loss and decoders below operate on the raw tensor so off-simplex inputs
// (finite-difference probes) stay well-defined.
struct LogProbLattice {
  Tensor values;

  explicit LogProbLattice(Tensor log_probs) : values(std::move(log_probs)) {
    require_matrix(values, "LogProbLattice");
    if (values.dim(1) < 2)
      throw ShapeMismatch("lattice needs blank plus at least one class");
    for (std::size_t t = 0; t < values.dim(0); ++t) {
      double lse = kNegInf;
      for (std::size_t c = 0; c < values.dim(1); ++c)
        lse = log_add(lse, values.at(t, c));
      if (std::abs(lse) > 1e-9)
        throw InvariantViolation("lattice row " + std::to_string(t) +
                                 " does not normalize: lse=" +
                                 std::to_string(lse));
    }
  }
};

// Class indices in [1, C]; no blanks; may be empty.
struct LabelSequence {
  std::vector<int> symbols;
};

inline void validate_target(const std::vector<int>& target, std::size_t c) {
  for (int s : target)
    if (s < 1 || static_cast<std::size_t>(s) > c)
      throw LabelOutOfRange("CTC target symbol " + std::to_string(s) +
                            " outside [1," + std::to_string(c) + "]");
}

// Frames required to emit the target: one per symbol plus a blank between
// adjacent repeats.
inline std::size_t ctc_min_frames(const std::vector<int>& target) {
  std::size_t n = target.size();
  for (std::size_t i = 0; i + 1 < target.size(); ++i)
    if (target[i] == target[i + 1]) ++n;
  return n;
}

struct CtcResult {
  double loss = 0.0;
  Tensor grad;           // d(loss)/d(log p), same shape as the lattice
  bool infeasible = false;
};

// CTC negative log-likelihood via the forward-backward recursions over the
// blank-interleaved extended target, entirely in log space. The gradient
// with respect to the log-probabilities is -(occupancy mass)/P per cell.
// A target too long for T yields +inf loss with zero gradient, flagged.
inline CtcResult ctc_loss(const Tensor& log_probs,
                          const std::vector<int>& target) {
  require_matrix(log_probs, "ctc_loss");
  const std::size_t t_count = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1) - 1;
  validate_target(target, classes);

  CtcResult res;
  res.grad = Tensor::zeros(log_probs.shape);
  if (ctc_min_frames(target) > t_count) {
    res.loss = std::numeric_limits<double>::infinity();
    res.infeasible = true;
    return res;
  }

  const std::size_t s_count = 2 * target.size() + 1;
  auto label_at = [&](std::size_t s) -> int {
    return (s % 2 == 1) ? target[s / 2] : kBlank;
  };

  Tensor alpha = Tensor::from({t_count, s_count},
                              std::vector<double>(t_count * s_count, kNegInf));
  alpha.at(0, 0) = log_probs.at(0, kBlank);
  if (s_count > 1) alpha.at(0, 1) = log_probs.at(0, label_at(1));
  for (std::size_t t = 1; t < t_count; ++t) {
    for (std::size_t s = 0; s < s_count; ++s) {
      double acc = alpha.at(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha.at(t - 1, s - 1));
      if (s >= 2 && label_at(s) != kBlank && label_at(s) != label_at(s - 2))
        acc = log_add(acc, alpha.at(t - 1, s - 2));
      if (acc != kNegInf)
        alpha.at(t, s) = acc + log_probs.at(t, label_at(s));
    }
  }

  double loglik = alpha.at(t_count - 1, s_count - 1);
  if (s_count > 1)
    loglik = log_add(loglik, alpha.at(t_count - 1, s_count - 2));
  res.loss = -loglik;

  // beta[t][s] covers emissions strictly after t, so alpha + beta sums to
  // the log-likelihood at every t.
  Tensor beta = Tensor::from({t_count, s_count},
                             std::vector<double>(t_count * s_count, kNegInf));
  beta.at(t_count - 1, s_count - 1) = 0.0;
  if (s_count > 1) beta.at(t_count - 1, s_count - 2) = 0.0;
  for (std::size_t ti = t_count - 1; ti-- > 0;) {
    for (std::size_t s = 0; s < s_count; ++s) {
      double acc = beta.at(ti + 1, s) == kNegInf
                       ? kNegInf
                       : beta.at(ti + 1, s) + log_probs.at(ti + 1, label_at(s));
      if (s + 1 < s_count && beta.at(ti + 1, s + 1) != kNegInf)
        acc = log_add(acc, beta.at(ti + 1, s + 1) +
                               log_probs.at(ti + 1, label_at(s + 1)));
      if (s + 2 < s_count && label_at(s + 2) != kBlank &&
          label_at(s + 2) != label_at(s) && beta.at(ti + 1, s + 2) != kNegInf)
        acc = log_add(acc, beta.at(ti + 1, s + 2) +
                               log_probs.at(ti + 1, label_at(s + 2)));
      beta.at(ti, s) = acc;
    }
  }

  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t s = 0; s < s_count; ++s) {
      const double ab = alpha.at(t, s) + beta.at(t, s);
      if (ab == kNegInf || std::isnan(ab)) continue;
      res.grad.at(t, label_at(s)) -= std::exp(ab - loglik);
    }
  }
  return res;
}

inline CtcResult ctc_loss(const LogProbLattice& lattice,
                          const LabelSequence& target) {
  return ctc_loss(lattice.values, target.symbols);
}

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;  // (softmax - onehot) / N
};

// Mean negative log-likelihood over the batch, with the gradient w.r.t. the
// logits folded in (softmax is applied internally, max-subtracted).
inline CrossEntropyResult cross_entropy(const Tensor& logits,
                                        const std::vector<int>& labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ShapeMismatch("cross_entropy: batch size mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw LabelOutOfRange("label " + std::to_string(l) + " outside [0," +
                            std::to_string(c) + ")");

  CrossEntropyResult res;
  res.dlogits = Tensor::zeros(logits.shape);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.row(i);
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    res.loss += (lse - row[labels[i]]) * inv_n;
    double* g = res.dlogits.row(i);
    for (std::size_t j = 0; j < c; ++j)
      g[j] = std::exp(row[j] - lse) * inv_n;
    g[labels[i]] -= inv_n;
  }
  return res;
}

}  // namespace signkit::ctc
