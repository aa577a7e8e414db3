#pragma once

#include "rloc/common.hpp"
#include "rloc/mr.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace rloc {

// Groups samples by IMSI, sorts each group by timestamp and splits wherever
// the gap between neighbours exceeds max_gap_s. Every input sample lands in
// exactly one sequence.
inline std::vector<MrSequence> group_into_sequences(const std::vector<MrSample>& samples, double max_gap_s) {
    std::map<std::string, std::vector<MrSample>> by_imsi;
    for (const auto& s : samples) by_imsi[s.imsi].push_back(s);

    std::vector<MrSequence> out;
    for (auto& [imsi, group] : by_imsi) {
        std::stable_sort(group.begin(), group.end(),
                         [](const MrSample& a, const MrSample& b) { return a.timestamp_ms < b.timestamp_ms; });
        MrSequence cur;
        cur.imsi = imsi;
        for (auto& s : group) {
            if (!cur.samples.empty()) {
                double delta = (s.timestamp_ms - cur.samples.back().timestamp_ms) / 1000.0;
                if (delta > max_gap_s) {
                    out.push_back(std::move(cur));
                    cur = MrSequence{};
                    cur.imsi = imsi;
                } else {
                    cur.deltas_s.push_back(delta);
                }
            }
            cur.samples.push_back(std::move(s));
        }
        if (!cur.samples.empty()) out.push_back(std::move(cur));
    }
    return out;
}

struct DatasetSplit {
    std::vector<MrSequence> d_l;    // localization training
    std::vector<MrSequence> d_c;    // confidence training
    std::vector<MrSequence> d_test; // testing
};

// Whole sequences are assigned to one part so the inter-sample gap structure
// survives the split. Assignment depends only on the seed and the sequence
// identity (imsi, first timestamp), never on input order.
inline DatasetSplit split_dataset(std::vector<MrSequence> sequences, std::uint64_t seed, double p_test,
                                  double p_dc_within_train) {
    if (!(p_test > 0 && p_test < 1) || !(p_dc_within_train > 0 && p_dc_within_train < 1))
        throw config_error("split_dataset: fractions must lie in (0,1)");

    std::sort(sequences.begin(), sequences.end(), [](const MrSequence& a, const MrSequence& b) {
        if (a.imsi != b.imsi) return a.imsi < b.imsi;
        return a.samples.front().timestamp_ms < b.samples.front().timestamp_ms;
    });

    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t n = sequences.size();
    auto n_test = static_cast<std::size_t>(std::llround(p_test * static_cast<double>(n)));
    std::size_t n_train = n - n_test;
    auto n_dc = static_cast<std::size_t>(std::llround(p_dc_within_train * static_cast<double>(n_train)));
    std::size_t n_dl = n_train - n_dc;
    if (n_test == 0 || n_dc == 0 || n_dl == 0)
        throw data_error("split_dataset: too few sequences to populate all three parts");

    DatasetSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        auto& seq = sequences[order[i]];
        if (i < n_test) split.d_test.push_back(std::move(seq));
        else if (i < n_test + n_dl) split.d_l.push_back(std::move(seq));
        else split.d_c.push_back(std::move(seq));
    }
    return split;
}

} // namespace rloc
