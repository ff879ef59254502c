#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/metrics.hpp"
#include "scarbench/rng.hpp"
#include "scarbench/types.hpp"

namespace scarbench::stats {

// ---------------------------------------------------------------------------
// Patient-level stratified split
// ---------------------------------------------------------------------------

enum class Subset { Train = 0, Valid = 1, Test = 2 };

constexpr std::string_view to_string(Subset s) noexcept {
  switch (s) {
    case Subset::Train: return "train";
    case Subset::Valid: return "valid";
    case Subset::Test: return "test";
  }
  return "?";
}

struct PatientBurden {
  std::string patient_id;
  std::string cohort_id;
  std::uint64_t total_scar_px = 0;
};

struct SplitRatios {
  double train = 0.70;
  double valid = 0.15;
  double test = 0.15;

  std::array<double, 3> as_array() const noexcept { return {train, valid, test}; }
};

/// (cohort_id, patient_id) -> subset.
using PatientKey = std::pair<std::string, std::string>;
using SplitAssignment = std::map<PatientKey, Subset>;

/// Apportions n items by ratio: floors first, then the leftover units go to
/// the largest fractional remainders (earlier subsets win ties).
inline std::array<int, 3> largest_remainder(int n, const SplitRatios& ratios) {
  const auto r = ratios.as_array();
  std::array<int, 3> out{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = n * r[s];
    out[s] = static_cast<int>(std::floor(exact + 1e-12));
    rem[s] = exact - out[s];
    assigned += out[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++out[order[k]];
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void validate_ratios(const SplitRatios& ratios) {
  for (double v : ratios.as_array()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(Errc::InvalidRatios, "split ratios must be positive");
    }
  }
  const auto a = ratios.as_array();
  if (std::abs(a[0] + a[1] + a[2] - 1.0) > 1e-9) {
    throw Error(Errc::InvalidRatios, "split ratios must sum to 1");
  }
}

// Per-bin subset quotas. Rows sum to the bin sizes, columns to the cohort
// targets. Bins with at least three patients get one patient per subset
// whenever the column target leaves room for it. Ties between bins go by
// `priority` (a permutation of bin indices), so no burden range is favoured.
inline std::vector<std::array<int, 3>> bin_quotas(const std::vector<int>& bin_sizes,
                                                  const std::array<int, 3>& targets,
                                                  const std::vector<std::size_t>& priority) {
  const std::size_t nb = bin_sizes.size();
  std::vector<std::array<int, 3>> q(nb, std::array<int, 3>{});
  std::vector<std::size_t> rank(nb);
  for (std::size_t i = 0; i < nb; ++i) rank[priority[i]] = i;

  std::vector<std::size_t> by_size = priority;
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&](std::size_t a, std::size_t b) { return bin_sizes[a] > bin_sizes[b]; });
  for (int s = 0; s < 3; ++s) {
    int budget = targets[s];
    for (std::size_t b : by_size) {
      if (bin_sizes[b] >= 3 && budget > 0) {
        q[b][s] = 1;
        --budget;
      }
    }
  }

  std::vector<long long> row(nb);
  std::array<long long, 3> col{};
  long long total = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    row[b] = bin_sizes[b] - (q[b][0] + q[b][1] + q[b][2]);
    total += row[b];
  }
  for (int s = 0; s < 3; ++s) {
    col[s] = targets[s];
    for (std::size_t b = 0; b < nb; ++b) col[s] -= q[b][s];
  }
  if (total == 0) return q;

  // Proportional fill in exact integer arithmetic, then largest remainders.
  struct Cell {
    long long rem;
    std::size_t b;
    int s;
  };
  std::vector<Cell> cells;
  const std::vector<long long> row0 = row;
  const std::array<long long, 3> col0 = col;
  for (std::size_t b = 0; b < nb; ++b) {
    for (int s = 0; s < 3; ++s) {
      const long long prod = row0[b] * col0[s];
      const long long whole = prod / total;
      q[b][s] += static_cast<int>(whole);
      row[b] -= whole;
      col[s] -= whole;
      cells.push_back({prod % total, b, s});
    }
  }
  std::sort(cells.begin(), cells.end(), [&](const Cell& x, const Cell& y) {
    return std::tie(y.rem, rank[x.b], x.s) < std::tie(x.rem, rank[y.b], y.s);
  });
  for (const auto& c : cells) {
    if (row[c.b] > 0 && col[c.s] > 0) {
      ++q[c.b][c.s];
      --row[c.b];
      --col[c.s];
    }
  }
  for (std::size_t b : priority) {
    for (int s = 0; s < 3 && row[b] > 0; ++s) {
      while (row[b] > 0 && col[s] > 0) {
        ++q[b][s];
        --row[b];
        --col[s];
      }
    }
  }
  return q;
}

}  // namespace detail

/// Within each cohort: sort patients by scar burden, cut into n_bins
/// quantile bins, shuffle each bin with the seed, and hand out patients so
/// the cohort's subset sizes follow the ratios by largest remainder.
inline SplitAssignment stratified_split(std::span<const PatientBurden> burdens,
                                        const SplitRatios& ratios = {}, int n_bins = 4,
                                        std::uint64_t seed = 0) {
  detail::validate_ratios(ratios);
  if (n_bins < 1) throw Error(Errc::InvalidParameter, "n_bins must be >= 1");
  if (burdens.empty()) throw Error(Errc::EmptyCohort, "no patients to split");

  std::map<std::string, std::vector<const PatientBurden*>> cohorts;
  for (const auto& p : burdens) cohorts[p.cohort_id].push_back(&p);

  SplitAssignment out;
  for (auto& [cohort, patients] : cohorts) {
    std::sort(patients.begin(), patients.end(), [](const auto* a, const auto* b) {
      return std::tie(a->total_scar_px, a->patient_id) < std::tie(b->total_scar_px, b->patient_id);
    });
    const int n = static_cast<int>(patients.size());
    std::vector<std::vector<const PatientBurden*>> bins(n_bins);
    for (int i = 0; i < n; ++i) {
      bins[static_cast<std::size_t>(static_cast<long long>(i) * n_bins / n)].push_back(patients[i]);
    }
    std::vector<int> sizes;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      auto& bin = bins[b];
      CounterRng rng(seed, detail::fnv1a(cohort) + b);
      for (std::size_t i = bin.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(bin[i - 1], bin[j]);
      }
      sizes.push_back(static_cast<int>(bin.size()));
    }
    std::vector<std::size_t> priority(bins.size());
    std::iota(priority.begin(), priority.end(), 0);
    CounterRng order(seed, detail::fnv1a(cohort) ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = priority.size(); i > 1; --i) {
      std::swap(priority[i - 1], priority[order.next_u64() % i]);
    }
    const auto quotas = detail::bin_quotas(sizes, largest_remainder(n, ratios), priority);
    for (std::size_t b = 0; b < bins.size(); ++b) {
      std::size_t k = 0;
      for (int s = 0; s < 3; ++s) {
        for (int c = 0; c < quotas[b][s]; ++c, ++k) {
          const auto* p = bins[b][k];
          if (!out.emplace(PatientKey{p->cohort_id, p->patient_id}, static_cast<Subset>(s)).second) {
            throw Error(Errc::InvalidParameter,
                        "duplicate patient " + p->patient_id + " in cohort " + p->cohort_id);
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and sample SD (n - 1 denominator; 0 for a single value). Values are
/// summed in sorted order so the result does not depend on input order.
inline MeanSd mean_sd(std::vector<double> values) {
  if (values.empty()) throw Error(Errc::EmptyInput, "mean of no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  if (values.size() == 1) return {mean, 0.0};
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - mean) * (values[i] - mean);
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double v : sq) ss += v;
  return {mean, std::sqrt(ss / (n - 1.0))};
}

struct AggregateRow {
  std::string group;  // cohort id, or "Total"
  std::size_t n_cases = 0;
  MeanSd dsc;
  std::optional<MeanSd> hd_mm;  // absent when no case in the group has an HD
  std::size_t n_hd = 0;
  MeanSd area_similarity;
  MeanSd perimeter_similarity;
};

/// One row per cohort (sorted by id) followed by "Total". Reports must carry
/// their case record.
inline std::vector<AggregateRow> aggregate(std::span<const metrics::MetricReport> reports) {
  if (reports.empty()) throw Error(Errc::EmptyInput, "nothing to aggregate");
  std::map<std::string, std::vector<const metrics::MetricReport*>> groups;
  std::vector<const metrics::MetricReport*> all;
  for (const auto& r : reports) {
    if (r.case_record == nullptr) {
      throw Error(Errc::InvalidParameter, "metric report without a case record");
    }
    groups[r.case_record->cohort_id].push_back(&r);
    all.push_back(&r);
  }

  auto summarize = [](std::string label, const std::vector<const metrics::MetricReport*>& rs) {
    AggregateRow row;
    row.group = std::move(label);
    row.n_cases = rs.size();
    std::vector<double> d, h, a, p;
    for (const auto* r : rs) {
      d.push_back(r->dsc);
      a.push_back(r->area_similarity);
      p.push_back(r->perimeter_similarity);
      if (r->hd_mm) h.push_back(*r->hd_mm);
    }
    row.dsc = mean_sd(d);
    row.area_similarity = mean_sd(a);
    row.perimeter_similarity = mean_sd(p);
    row.n_hd = h.size();
    if (!h.empty()) row.hd_mm = mean_sd(h);
    return row;
  };

  std::vector<AggregateRow> rows;
  for (const auto& [cohort, rs] : groups) rows.push_back(summarize(cohort, rs));
  rows.push_back(summarize("Total", all));
  return rows;
}

// ---------------------------------------------------------------------------
// Wilcoxon rank-sum (Mann-Whitney) test
// ---------------------------------------------------------------------------

struct RankSumResult {
  double rank_sum = 0.0;  // sum of mid-ranks of the first sample
  double p_value = 1.0;   // two-sided
  bool exact = false;
};

namespace detail {

// Doubled mid-ranks (integers) of the pooled sample, first |a| entries
// belonging to a; plus the tie-correction sum of t^3 - t.
struct PooledRanks {
  std::vector<long long> doubled;
  double tie_term = 0.0;
};

inline PooledRanks pooled_ranks(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() + b.size();
  std::vector<std::pair<double, std::size_t>> v;
  v.reserve(n);
  for (std::size_t i = 0; i < a.size(); ++i) v.emplace_back(a[i], i);
  for (std::size_t i = 0; i < b.size(); ++i) v.emplace_back(b[i], a.size() + i);
  std::sort(v.begin(), v.end());
  PooledRanks out;
  out.doubled.assign(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[j].first == v[i].first) ++j;
    const auto twice_rank = static_cast<long long>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) out.doubled[v[k].second] = twice_rank;
    const double t = static_cast<double>(j - i);
    out.tie_term += t * t * t - t;
    i = j;
  }
  return out;
}

inline void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(Errc::EmptySample, "rank-sum test needs two samples");
  for (double v : a) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidParameter, "non-finite observation");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidParameter, "non-finite observation");
  }
}

}  // namespace detail

/// Exact permutation distribution of the rank sum, counted by dynamic
/// programming over the pooled (mid-)ranks. p = P(|W - E| >= |w - E|).
inline RankSumResult wilcoxon_rank_sum_exact(std::span<const double> a, std::span<const double> b) {
  detail::check_samples(a, b);
  const auto pr = detail::pooled_ranks(a, b);
  const std::size_t n1 = a.size();
  const std::size_t n = pr.doubled.size();
  long long total = 0;
  for (auto r : pr.doubled) total += r;

  // ways[k][s]: subsets of size k with doubled rank sum s.
  std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(total + 1, 0.0));
  ways[0][0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const long long r = pr.doubled[i];
    for (std::size_t k = std::min(n1, i + 1); k >= 1; --k) {
      for (long long s = total; s >= r; --s) ways[k][s] += ways[k - 1][s - r];
    }
  }

  long long observed = 0;
  for (std::size_t i = 0; i < n1; ++i) observed += pr.doubled[i];
  const long long expected = static_cast<long long>(n1) * static_cast<long long>(n + 1);
  const long long dev = std::llabs(observed - expected);
  double hits = 0.0, all = 0.0;
  for (long long s = 0; s <= total; ++s) {
    all += ways[n1][s];
    if (std::llabs(s - expected) >= dev) hits += ways[n1][s];
  }
  return {observed / 2.0, std::min(1.0, hits / all), true};
}

/// Normal approximation with tie and continuity corrections.
inline RankSumResult wilcoxon_rank_sum_normal(std::span<const double> a,
                                              std::span<const double> b) {
  detail::check_samples(a, b);
  const auto pr = detail::pooled_ranks(a, b);
  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w += pr.doubled[i] / 2.0;
  const double mean = n1 * (n + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - pr.tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) return {w, 1.0, false};
  const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
  return {w, std::min(1.0, std::erfc(z / std::numbers::sqrt2)), false};
}

inline constexpr std::size_t kExactMaxSmaller = 10;
inline constexpr std::size_t kExactMaxTotal = 25;

/// Two-sided rank-sum test: exact when min(|a|,|b|) <= 10 and |a|+|b| <= 25,
/// normal approximation otherwise.
inline RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  detail::check_samples(a, b);
  if (std::min(a.size(), b.size()) <= kExactMaxSmaller && a.size() + b.size() <= kExactMaxTotal) {
    return wilcoxon_rank_sum_exact(a, b);
  }
  return wilcoxon_rank_sum_normal(a, b);
}

}  // namespace scarbench::stats
