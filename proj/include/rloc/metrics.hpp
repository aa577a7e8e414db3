#pragma once

#include "rloc/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace rloc {

// Nearest-rank quantile; q in (0,1].
inline double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw data_error("quantile: empty list");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

struct ErrorQuantiles {
    double mean_m = 0.0;
    double median_m = 0.0;
    double p67_m = 0.0;
    double p90_m = 0.0;
    double p95_m = 0.0;
};

inline ErrorQuantiles error_quantiles(const std::vector<double>& errors_m) {
    if (errors_m.empty()) throw data_error("error_quantiles: empty error list");
    ErrorQuantiles q;
    double sum = 0.0;
    for (double e : errors_m) sum += e;
    q.mean_m = sum / static_cast<double>(errors_m.size());
    q.median_m = nearest_rank_quantile(errors_m, 0.50);
    q.p67_m = nearest_rank_quantile(errors_m, 0.67);
    q.p90_m = nearest_rank_quantile(errors_m, 0.90);
    q.p95_m = nearest_rank_quantile(errors_m, 0.95);
    return q;
}

struct DetectionMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
};

// detected / truth are parallel per-sample flag vectors over one universe.
inline DetectionMetrics detection_metrics(const std::vector<bool>& detected, const std::vector<bool>& truth) {
    if (detected.size() != truth.size()) throw data_error("detection_metrics: misaligned sets");
    std::int64_t nd = 0, ng = 0, both = 0;
    for (std::size_t i = 0; i < detected.size(); ++i) {
        nd += detected[i];
        ng += truth[i];
        both += detected[i] && truth[i];
    }
    DetectionMetrics m;
    m.precision = nd > 0 ? static_cast<double>(both) / static_cast<double>(nd) : (ng == 0 ? 1.0 : 0.0);
    m.recall = ng > 0 ? static_cast<double>(both) / static_cast<double>(ng) : (nd == 0 ? 1.0 : 0.0);
    m.f_score = (m.precision + m.recall) > 0.0
                    ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                    : 0.0;
    return m;
}

struct RepairMetrics {
    std::optional<double> repair_accuracy; // null when nothing was detected
    double i_d = 0.0;                      // median error reduction ratio
    double i_s = 0.0;                      // p67
    double i_l = 0.0;                      // p95
};

// before/after are per-sample errors over the whole testing set; correctly
// aligned flags mark detected samples whose repair hit the truth grid.
inline RepairMetrics repair_metrics(const std::vector<double>& before_m, const std::vector<double>& after_m,
                                    const std::vector<bool>& detected,
                                    const std::vector<bool>& correctly_repaired) {
    if (before_m.size() != after_m.size() || detected.size() != before_m.size() ||
        correctly_repaired.size() != before_m.size())
        throw data_error("repair_metrics: misaligned inputs");

    RepairMetrics m;
    std::int64_t nd = 0, nr = 0;
    for (std::size_t i = 0; i < detected.size(); ++i) {
        nd += detected[i];
        nr += detected[i] && correctly_repaired[i];
    }
    if (nd > 0) m.repair_accuracy = static_cast<double>(nr) / static_cast<double>(nd);

    auto ratio = [&](double q) {
        double e = nearest_rank_quantile(before_m, q);
        double er = nearest_rank_quantile(after_m, q);
        return e > 0.0 ? (e - er) / e : 0.0;
    };
    m.i_d = ratio(0.50);
    m.i_s = ratio(0.67);
    m.i_l = ratio(0.95);
    return m;
}

struct CandidateMetrics {
    double p_c = 0.0;             // fraction of flawed samples whose truth grid is among candidates
    double mean_candidates = 0.0; // mean |C|
};

inline CandidateMetrics candidate_metrics(const std::vector<std::size_t>& candidate_counts,
                                          const std::vector<bool>& truth_in_candidates) {
    if (candidate_counts.size() != truth_in_candidates.size())
        throw data_error("candidate_metrics: misaligned inputs");
    CandidateMetrics m;
    if (candidate_counts.empty()) return m;
    std::int64_t hits = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < candidate_counts.size(); ++i) {
        hits += truth_in_candidates[i];
        total += static_cast<double>(candidate_counts[i]);
    }
    m.p_c = static_cast<double>(hits) / static_cast<double>(candidate_counts.size());
    m.mean_candidates = total / static_cast<double>(candidate_counts.size());
    return m;
}

struct EvalReport {
    ErrorQuantiles errors;         // after repair (the pipeline output)
    ErrorQuantiles errors_before;  // raw localization
    DetectionMetrics detection;
    RepairMetrics repair;
    CandidateMetrics candidates;
    double tau_m = 0.0;
    std::int64_t n_samples = 0;
};

} // namespace rloc
