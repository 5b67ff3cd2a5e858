#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "signkit/losses.hpp"
#include "signkit/tensor.hpp"

namespace signkit::ctc {

// Per-frame argmax, collapse adjacent repeats, remove blanks.
inline std::vector<int> ctc_greedy_decode(const Tensor& log_probs) {
  require_matrix(log_probs, "ctc_greedy_decode");
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    const double* row = log_probs.row(t);
    int best = 0;
    for (std::size_t c = 1; c < log_probs.dim(1); ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

inline std::vector<int> ctc_greedy_decode(const LogProbLattice& lattice) {
  return ctc_greedy_decode(lattice.values);
}

// Standard prefix beam search in log space: per prefix, blank-ending and
// non-blank-ending masses are tracked separately and merged for scoring.
// Ties are broken by lexicographic prefix order, so the result is
// deterministic. With a width covering every reachable prefix the returned
// sequence is the exact maximum-probability collapsed sequence. Width 1
// ranks prefixes by total collapsed mass, so it need not coincide with the
// greedy per-frame argmax decode.
inline std::vector<int> ctc_beam_search(const Tensor& log_probs,
                                        std::size_t beam_width) {
  require_matrix(log_probs, "ctc_beam_search");
  if (beam_width < 1) throw Error("beam width must be >= 1");
  const std::size_t t_count = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1) - 1;

  struct Mass {
    double blank = kNegInf;     // ends in blank
    double nonblank = kNegInf;  // ends in the prefix's last symbol
    double total() const { return log_add(blank, nonblank); }
  };
  using BeamMap = std::map<std::vector<int>, Mass>;

  BeamMap beams;
  beams[{}] = Mass{0.0, kNegInf};

  for (std::size_t t = 0; t < t_count; ++t) {
    const double* row = log_probs.row(t);
    BeamMap next;
    for (const auto& [prefix, mass] : beams) {
      const double total = mass.total();

      // Emit blank: prefix unchanged, now blank-ending.
      {
        Mass& m = next[prefix];
        m.blank = log_add(m.blank, total + row[kBlank]);
      }
      // Repeat the last symbol: prefix unchanged, only extends the
      // non-blank mass (the repeat collapses).
      if (!prefix.empty()) {
        Mass& m = next[prefix];
        m.nonblank = log_add(m.nonblank, mass.nonblank + row[prefix.back()]);
      }
      // Emit a symbol extending the prefix.
      for (std::size_t c = 1; c <= classes; ++c) {
        std::vector<int> extended = prefix;
        extended.push_back(static_cast<int>(c));
        Mass& m = next[extended];
        if (!prefix.empty() && static_cast<int>(c) == prefix.back()) {
          // Same symbol again only starts a new occurrence after a blank.
          m.nonblank = log_add(m.nonblank, mass.blank + row[c]);
        } else {
          m.nonblank = log_add(m.nonblank, total + row[c]);
        }
      }
    }

    if (next.size() > beam_width) {
      std::vector<BeamMap::const_iterator> order;
      order.reserve(next.size());
      for (auto it = next.begin(); it != next.end(); ++it)
        order.push_back(it);
      std::sort(order.begin(), order.end(), [](auto a, auto b) {
        const double ta = a->second.total(), tb = b->second.total();
        if (ta != tb) return ta > tb;
        return a->first < b->first;
      });
      BeamMap pruned;
      for (std::size_t i = 0; i < beam_width; ++i)
        pruned.insert(*order[i]);
      beams = std::move(pruned);
    } else {
      beams = std::move(next);
    }
  }

  const std::vector<int>* best = nullptr;
  double best_lp = kNegInf;
  for (const auto& [prefix, mass] : beams) {
    const double total = mass.total();
    if (total > best_lp ||
        (total == best_lp && best != nullptr && prefix < *best)) {
      best_lp = total;
      best = &prefix;
    }
  }
  return best ? *best : std::vector<int>{};
}

inline std::vector<int> ctc_beam_search(const LogProbLattice& lattice,
                                        std::size_t beam_width) {
  return ctc_beam_search(lattice.values, beam_width);
}

// Reduction of a decoded sequence to one isolated-sign prediction: a
// length-1 decode is the prediction; an empty decode is a reject; longer
// decodes keep the first symbol and record the multi-symbol flag.
struct IsolatedPrediction {
  bool rejected = false;
  int symbol = 0;       // valid when !rejected, in [1, C]
  bool multi_symbol = false;
};

inline IsolatedPrediction isolated_prediction(const std::vector<int>& decoded) {
  IsolatedPrediction p;
  if (decoded.empty()) {
    p.rejected = true;
    return p;
  }
  p.symbol = decoded.front();
  p.multi_symbol = decoded.size() > 1;
  return p;
}

}  // namespace signkit::ctc
