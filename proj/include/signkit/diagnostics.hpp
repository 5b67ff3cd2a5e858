#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "signkit/dataset.hpp"
#include "signkit/errors.hpp"
#include "signkit/io_util.hpp"

namespace signkit::stats {

// Presence fractions split by prediction correctness (rejects count as
// incorrect, matching the correctness flag).
struct PresenceGroups {
  std::vector<double> correct;
  std::vector<double> incorrect;
};

inline PresenceGroups group_by_correctness(
    const std::vector<PredictionOutcome>& outcomes) {
  PresenceGroups g;
  for (const auto& o : outcomes)
    (o.correct ? g.correct : g.incorrect).push_back(o.dominant_hand_presence);
  return g;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ------------------------------------------------------- rank-sum test

enum class RankSumMethod { Exact, NormalApprox };

struct RankSumResult {
  double u_statistic = 0.0;  // U of group a
  double z_score = 0.0;      // tie-corrected, continuity-corrected
  double p_value = 1.0;      // two-sided
  RankSumMethod method = RankSumMethod::Exact;
  double mean_a = 0.0;
  double mean_b = 0.0;

  bool operator==(const RankSumResult&) const = default;
};

namespace detail {

// Midranks of the pooled sample; returns per-observation ranks in pooled
// order (a first, then b) plus the tie term sum(t^3 - t).
inline std::pair<std::vector<double>, double> midranks(
    const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size() + b.size();
  std::vector<std::pair<double, std::size_t>> pooled(n);
  for (std::size_t i = 0; i < a.size(); ++i) pooled[i] = {a[i], i};
  for (std::size_t i = 0; i < b.size(); ++i)
    pooled[a.size() + i] = {b[i], a.size() + i};
  std::sort(pooled.begin(), pooled.end());

  std::vector<double> ranks(n, 0.0);
  double tie_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].first == pooled[i].first) ++j;
    const double rank = 0.5 * (static_cast<double>(i + 1) +
                               static_cast<double>(j + 1));
    const double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    for (std::size_t q = i; q <= j; ++q) ranks[pooled[q].second] = rank;
    i = j + 1;
  }
  return {std::move(ranks), tie_sum};
}

// Exhaustive permutation null: counts size-na subsets of the pooled ranks
// whose |U - mu| is at least the observed deviation.
inline double exact_two_sided_p(const std::vector<double>& ranks,
                                std::size_t na, double u_observed) {
  const std::size_t n = ranks.size();
  const double mu = 0.5 * static_cast<double>(na) *
                    static_cast<double>(n - na);
  const double offset =
      0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  const double dev = std::abs(u_observed - mu) - 1e-12;

  std::size_t hits = 0, total = 0;
  // Iterative combination walk over rank indices.
  std::vector<std::size_t> pick(na);
  for (std::size_t i = 0; i < na; ++i) pick[i] = i;
  for (;;) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < na; ++i) rank_sum += ranks[pick[i]];
    const double u = rank_sum - offset;
    ++total;
    if (std::abs(u - mu) >= dev) ++hits;

    std::size_t k = na;
    while (k > 0 && pick[k - 1] == n - na + (k - 1)) --k;
    if (k == 0) break;
    ++pick[k - 1];
    for (std::size_t i = k; i < na; ++i) pick[i] = pick[i - 1] + 1;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / M_SQRT2); }

}  // namespace detail

// Two-sided Wilcoxon rank-sum (Mann-Whitney U) test with midranks for ties.
// Exact permutation enumeration when both groups have at most 10 values;
// otherwise the normal approximation with tie-corrected variance and a 0.5
// continuity correction. Monotone transforms of the data leave the result
// unchanged (only ranks enter). force_method overrides the size-based
// choice, e.g. to compare the two p-values on the same data.
inline RankSumResult wilcoxon_rank_sum(
    const std::vector<double>& a, const std::vector<double>& b,
    std::optional<RankSumMethod> force_method = std::nullopt) {
  if (a.empty() || b.empty())
    throw EmptyGroup("rank-sum test needs two nonempty groups");
  const auto [ranks, tie_sum] = detail::midranks(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;

  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];
  const double u = rank_sum_a - 0.5 * na * (na + 1.0);
  const double mu = 0.5 * na * nb;

  double var = na * nb / 12.0 * (n + 1.0);
  if (n > 1.0) var -= na * nb * tie_sum / (12.0 * n * (n - 1.0));
  const double sd = var > 0.0 ? std::sqrt(var) : 0.0;

  RankSumResult res;
  res.u_statistic = u;
  res.mean_a = mean_of(a);
  res.mean_b = mean_of(b);
  if (sd > 0.0) {
    double dev = std::abs(u - mu) - 0.5;
    if (dev < 0.0) dev = 0.0;
    res.z_score = (u >= mu ? 1.0 : -1.0) * dev / sd;
  }

  const bool exact = force_method ? *force_method == RankSumMethod::Exact
                                  : std::max(a.size(), b.size()) <= 10;
  if (exact) {
    res.method = RankSumMethod::Exact;
    res.p_value = detail::exact_two_sided_p(ranks, a.size(), u);
  } else {
    res.method = RankSumMethod::NormalApprox;
    res.p_value =
        sd > 0.0 ? std::min(1.0, 2.0 * detail::normal_sf(std::abs(res.z_score)))
                 : 1.0;
  }
  return res;
}

// ------------------------------------------------------------ histogram

struct HistogramBin {
  double bin_low = 0.0;
  double bin_high = 0.0;
  std::size_t count_correct = 0;
  std::size_t count_incorrect = 0;

  bool operator==(const HistogramBin&) const = default;
};

// Equal-width bins over [0,1]; the last bin is right-inclusive so a
// presence of exactly 1.0 is counted.
inline std::vector<HistogramBin> presence_histogram(const PresenceGroups& g,
                                                    std::size_t bins) {
  if (bins < 1) throw Error("histogram needs at least one bin");
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].bin_low = static_cast<double>(i) / static_cast<double>(bins);
    out[i].bin_high = static_cast<double>(i + 1) / static_cast<double>(bins);
  }
  auto bin_of = [&](double v) {
    if (v >= 1.0) return bins - 1;
    const auto idx = static_cast<std::size_t>(v * static_cast<double>(bins));
    return std::min(idx, bins - 1);
  };
  for (double v : g.correct) out[bin_of(v)].count_correct++;
  for (double v : g.incorrect) out[bin_of(v)].count_incorrect++;
  return out;
}

// --------------------------------------------------------------- report

struct AnalysisReport {
  std::size_t n_outcomes = 0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  std::size_t n_reject = 0;
  std::size_t n_multi_symbol = 0;
  double mean_presence_correct = 0.0;
  double mean_presence_incorrect = 0.0;
  std::optional<RankSumResult> rank_sum;
  std::string skip_reason;  // nonempty when the test was skipped
  std::vector<HistogramBin> histogram;

  bool operator==(const AnalysisReport&) const = default;
};

inline AnalysisReport analysis_report(
    const std::vector<PredictionOutcome>& outcomes, std::size_t bins = 10) {
  AnalysisReport rep;
  rep.n_outcomes = outcomes.size();
  for (const auto& o : outcomes) {
    rep.n_reject += o.rejected ? 1 : 0;
    rep.n_multi_symbol += o.multi_symbol ? 1 : 0;
  }
  const PresenceGroups groups = group_by_correctness(outcomes);
  rep.n_correct = groups.correct.size();
  rep.n_incorrect = groups.incorrect.size();
  rep.mean_presence_correct = mean_of(groups.correct);
  rep.mean_presence_incorrect = mean_of(groups.incorrect);
  rep.histogram = presence_histogram(groups, bins);
  if (groups.correct.empty()) {
    rep.skip_reason = "no correct predictions";
  } else if (groups.incorrect.empty()) {
    rep.skip_reason = "no incorrect predictions";
  } else {
    rep.rank_sum = wilcoxon_rank_sum(groups.correct, groups.incorrect);
  }
  return rep;
}

// ------------------------------------------------------------ serializers

inline void to_json(nlohmann::json& j, const RankSumResult& r) {
  j = {{"u_statistic", r.u_statistic},
       {"z_score", r.z_score},
       {"p_value", r.p_value},
       {"method",
        r.method == RankSumMethod::Exact ? "exact" : "normal_approx"},
       {"mean_a", r.mean_a},
       {"mean_b", r.mean_b}};
}

inline void from_json(const nlohmann::json& j, RankSumResult& r) {
  j.at("u_statistic").get_to(r.u_statistic);
  j.at("z_score").get_to(r.z_score);
  j.at("p_value").get_to(r.p_value);
  r.method = j.at("method").get<std::string>() == "exact"
                 ? RankSumMethod::Exact
                 : RankSumMethod::NormalApprox;
  j.at("mean_a").get_to(r.mean_a);
  j.at("mean_b").get_to(r.mean_b);
}

inline void to_json(nlohmann::json& j, const HistogramBin& b) {
  j = {{"bin_low", b.bin_low},
       {"bin_high", b.bin_high},
       {"count_correct", b.count_correct},
       {"count_incorrect", b.count_incorrect}};
}

inline void from_json(const nlohmann::json& j, HistogramBin& b) {
  j.at("bin_low").get_to(b.bin_low);
  j.at("bin_high").get_to(b.bin_high);
  j.at("count_correct").get_to(b.count_correct);
  j.at("count_incorrect").get_to(b.count_incorrect);
}

inline void to_json(nlohmann::json& j, const AnalysisReport& r) {
  j = {{"n_outcomes", r.n_outcomes},
       {"n_correct", r.n_correct},
       {"n_incorrect", r.n_incorrect},
       {"n_reject", r.n_reject},
       {"n_multi_symbol", r.n_multi_symbol},
       {"mean_presence_correct", r.mean_presence_correct},
       {"mean_presence_incorrect", r.mean_presence_incorrect},
       {"histogram", r.histogram}};
  if (r.rank_sum)
    j["rank_sum"] = *r.rank_sum;
  else
    j["rank_sum"] = nullptr;
  if (!r.skip_reason.empty()) j["skip_reason"] = r.skip_reason;
}

inline void from_json(const nlohmann::json& j, AnalysisReport& r) {
  j.at("n_outcomes").get_to(r.n_outcomes);
  j.at("n_correct").get_to(r.n_correct);
  j.at("n_incorrect").get_to(r.n_incorrect);
  j.at("n_reject").get_to(r.n_reject);
  j.at("n_multi_symbol").get_to(r.n_multi_symbol);
  j.at("mean_presence_correct").get_to(r.mean_presence_correct);
  j.at("mean_presence_incorrect").get_to(r.mean_presence_incorrect);
  r.histogram = j.at("histogram").get<std::vector<HistogramBin>>();
  if (j.contains("rank_sum") && !j.at("rank_sum").is_null())
    r.rank_sum = j.at("rank_sum").get<RankSumResult>();
  else
    r.rank_sum.reset();
  r.skip_reason = j.value("skip_reason", "");
}

// Plot-data table for the presence histogram (the Figure-5 analogue).
inline void write_histogram_csv(const std::string& path,
                                const std::vector<HistogramBin>& bins) {
  std::ostringstream out;
  out << "bin_low,bin_high,count_correct,count_incorrect\n";
  for (const auto& b : bins)
    out << format_double(b.bin_low) << "," << format_double(b.bin_high) << ","
        << b.count_correct << "," << b.count_incorrect << "\n";
  write_file_text(path, out.str());
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
  return buf;
}

// Human-readable summary printed by the analyze command.
inline std::string render_report_text(const AnalysisReport& r) {
  std::ostringstream out;
  out << "outcomes: " << r.n_outcomes << " (" << r.n_correct << " correct, "
      << r.n_incorrect << " incorrect, " << r.n_reject << " rejected, "
      << r.n_multi_symbol << " multi-symbol)\n";
  out << "mean dominant-hand presence (correct):   "
      << format_percent(r.mean_presence_correct) << "\n";
  out << "mean dominant-hand presence (incorrect): "
      << format_percent(r.mean_presence_incorrect) << "\n";
  if (r.rank_sum) {
    const auto& t = *r.rank_sum;
    out << "rank-sum test ("
        << (t.method == RankSumMethod::Exact ? "exact" : "normal approx")
        << "): U=" << format_double(t.u_statistic)
        << " z=" << format_double(t.z_score)
        << " two-sided p=" << format_double(t.p_value) << "\n";
  } else {
    out << "rank-sum test skipped: " << r.skip_reason << "\n";
  }
  return out.str();
}

}  // namespace signkit::stats
