#pragma once

// Tolerance matching of predicted against labelled anomaly timestamps.
//   TP: ground-truth d with some prediction within r_t
//   FN: ground-truth d with no prediction within r_t
//   FP: prediction p with no ground truth within r_t

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

#include "wattgan/error.hpp"

namespace wattgan {

struct MatchConfig {
    std::int64_t r_t = 24;
};

struct MatchResult {
    std::int64_t tp = 0;
    std::int64_t fn = 0;
    std::int64_t fp = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

namespace detail {

// Distance from v to the nearest element of a sorted, non-empty sequence.
inline std::int64_t nearest_distance(std::span<const std::int64_t> sorted, std::int64_t v) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
    std::int64_t best = INT64_MAX;
    if (it != sorted.end()) best = *it - v;
    if (it != sorted.begin()) best = std::min(best, v - *std::prev(it));
    return best;
}

inline void finish_metrics(MatchResult& r) {
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

}  // namespace detail

// Both inputs must be sorted ascending.
inline MatchResult match(std::span<const std::int64_t> gt, std::span<const std::int64_t> pred, const MatchConfig& cfg) {
    if (cfg.r_t < 0) throw ArgumentError("match: r_t must be >= 0");
    if (!std::is_sorted(gt.begin(), gt.end()) || !std::is_sorted(pred.begin(), pred.end()))
        throw ArgumentError("match: timestamps must be sorted ascending");
    MatchResult r;
    for (std::int64_t d : gt) {
        if (!pred.empty() && detail::nearest_distance(pred, d) <= cfg.r_t)
            ++r.tp;
        else
            ++r.fn;
    }
    for (std::int64_t p : pred)
        if (gt.empty() || detail::nearest_distance(gt, p) > cfg.r_t) ++r.fp;
    detail::finish_metrics(r);
    return r;
}

struct AggregateMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t count = 0;
};

// Unweighted mean over buildings.
inline AggregateMetrics aggregate(std::span<const MatchResult> results) {
    if (results.empty()) throw ArgumentError("aggregate: no results");
    AggregateMetrics a;
    for (const auto& r : results) {
        a.precision += r.precision;
        a.recall += r.recall;
        a.f1 += r.f1;
    }
    const double n = static_cast<double>(results.size());
    a.precision /= n;
    a.recall /= n;
    a.f1 /= n;
    a.count = results.size();
    return a;
}

}  // namespace wattgan
