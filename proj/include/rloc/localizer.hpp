#pragma once

#include "rloc/common.hpp"
#include "rloc/geo.hpp"
#include "rloc/mr.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

namespace rloc {

struct PredictedLocation {
    GridCellId grid;
    LonLat position; // centroid of grid
    std::vector<std::pair<GridCellId, double>> scores; // sorted by grid id, sums to 1
};

// KNN fingerprint baseline: one signature per occupied grid cell holding the
// per-station discretized level statistics of the training samples located
// there. Level sums are kept as integers so serialization is lossless.
class FingerprintModel {
public:
    struct StationStat {
        StationId id;
        std::int64_t level_sum = 0;
        std::int64_t count = 0;
    };
    struct CellEntry {
        GridCellId grid;
        std::int64_t n_samples = 0;
        std::vector<StationStat> stations; // sorted by id
    };

    FingerprintModel() = default;
    FingerprintModel(int k, double missing_penalty, std::vector<CellEntry> cells)
        : k_(k), missing_penalty_(missing_penalty), cells_(std::move(cells)) {
        rebuild_indexes();
    }

    int k() const { return k_; }
    double missing_penalty() const { return missing_penalty_; }
    const std::vector<CellEntry>& cells() const { return cells_; }

    PredictedLocation predict(const MrSample& sample, const GridSystem& grid) const {
        std::vector<std::pair<StationId, int>> readings;
        for (const auto& c : sample.cells)
            if (auto id = c.station()) readings.emplace_back(*id, c.level());
        std::sort(readings.begin(), readings.end());
        readings.erase(std::unique(readings.begin(), readings.end(),
                                   [](const auto& a, const auto& b) { return a.first == b.first; }),
                       readings.end());
        if (readings.empty()) throw data_error("predict: sample has no identified stations");

        // Accumulate L1 level distance over shared stations, cell by cell.
        std::map<std::size_t, std::pair<double, int>> acc; // cell idx -> (l1, shared)
        for (const auto& [sid, level] : readings) {
            auto it = by_station_.find(sid);
            if (it == by_station_.end()) continue;
            for (auto [cell_idx, stat_idx] : it->second) {
                const auto& st = cells_[cell_idx].stations[stat_idx];
                double mean = static_cast<double>(st.level_sum) / static_cast<double>(st.count);
                auto& slot = acc[cell_idx];
                slot.first += std::abs(static_cast<double>(level) - mean);
                slot.second += 1;
            }
        }

        if (acc.empty()) {
            // No overlap anywhere: fall back to the serving station's
            // strongest training cell when that station is known at all.
            auto it = serving_best_.find(sample.serving());
            if (it == serving_best_.end())
                throw data_error("predict: no coverage for sample stations");
            return single_cell_result(cells_[it->second].grid, grid);
        }

        std::vector<std::pair<double, std::size_t>> ranked; // (similarity, cell idx)
        ranked.reserve(acc.size());
        const auto n_sample = static_cast<double>(readings.size());
        for (const auto& [cell_idx, slot] : acc) {
            double sim = -slot.first - missing_penalty_ * (n_sample - slot.second);
            ranked.emplace_back(sim, cell_idx);
        }
        std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return cells_[a.second].grid < cells_[b.second].grid;
        });
        if (ranked.size() > static_cast<std::size_t>(k_)) ranked.resize(static_cast<std::size_t>(k_));

        double sim_min = ranked.back().first;
        double total = 0.0;
        for (const auto& [sim, idx] : ranked) total += sim - sim_min + 1.0;

        PredictedLocation out;
        out.grid = cells_[ranked.front().second].grid;
        out.position = grid.centroid(out.grid);
        for (const auto& [sim, idx] : ranked)
            out.scores.emplace_back(cells_[idx].grid, (sim - sim_min + 1.0) / total);
        std::sort(out.scores.begin(), out.scores.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        return out;
    }

    std::vector<std::optional<PredictedLocation>> batch_predict(const MrSequence& seq,
                                                                const GridSystem& grid) const {
        std::vector<std::optional<PredictedLocation>> out;
        out.reserve(seq.samples.size());
        for (const auto& s : seq.samples) {
            try {
                out.push_back(predict(s, grid));
            } catch (const data_error&) {
                out.push_back(std::nullopt);
            }
        }
        return out;
    }

private:
    PredictedLocation single_cell_result(GridCellId g, const GridSystem& grid) const {
        PredictedLocation out;
        out.grid = g;
        out.position = grid.centroid(g);
        out.scores.emplace_back(g, 1.0);
        return out;
    }

    void rebuild_indexes() {
        by_station_.clear();
        serving_best_.clear();
        for (std::size_t ci = 0; ci < cells_.size(); ++ci)
            for (std::size_t si = 0; si < cells_[ci].stations.size(); ++si)
                by_station_[cells_[ci].stations[si].id].emplace_back(ci, si);
        for (auto& [sid, refs] : by_station_) {
            std::size_t best = refs.front().first;
            double best_mean = 1e18;
            for (auto [ci, si] : refs) {
                const auto& st = cells_[ci].stations[si];
                double mean = static_cast<double>(st.level_sum) / static_cast<double>(st.count);
                const auto& cur = cells_[ci];
                const auto& bst = cells_[best];
                if (mean < best_mean ||
                    (mean == best_mean && (cur.n_samples > bst.n_samples ||
                                           (cur.n_samples == bst.n_samples && cur.grid < bst.grid)))) {
                    best_mean = mean;
                    best = ci;
                }
            }
            serving_best_[sid] = best;
        }
    }

    int k_ = 5;
    double missing_penalty_ = 2.0;
    std::vector<CellEntry> cells_; // sorted by grid id
    std::map<StationId, std::vector<std::pair<std::size_t, std::size_t>>> by_station_;
    std::map<StationId, std::size_t> serving_best_;
};

inline FingerprintModel train_fingerprint(const std::vector<MrSample>& d_l, const GridSystem& grid, int k,
                                          double missing_penalty) {
    if (d_l.empty()) throw training_error("train_fingerprint: empty training set");
    struct Agg {
        std::int64_t n = 0;
        std::map<StationId, std::pair<std::int64_t, std::int64_t>> st; // sum, count
    };
    std::map<GridCellId, Agg> table;
    for (const auto& s : d_l) {
        if (!s.truth) throw training_error("train_fingerprint: sample without ground truth");
        if (!grid.contains(*s.truth)) throw training_error("train_fingerprint: truth outside grid");
        auto& agg = table[grid.grid_of(*s.truth)];
        agg.n += 1;
        for (const auto& c : s.cells) {
            auto id = c.station();
            if (!id) continue;
            auto& slot = agg.st[*id];
            slot.first += c.level();
            slot.second += 1;
        }
    }
    std::vector<FingerprintModel::CellEntry> cells;
    cells.reserve(table.size());
    for (const auto& [g, agg] : table) {
        FingerprintModel::CellEntry e;
        e.grid = g;
        e.n_samples = agg.n;
        for (const auto& [sid, sc] : agg.st) e.stations.push_back({sid, sc.first, sc.second});
        cells.push_back(std::move(e));
    }
    return FingerprintModel(k, missing_penalty, std::move(cells));
}

} // namespace rloc
