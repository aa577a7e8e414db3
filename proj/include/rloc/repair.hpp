#pragma once

#include "rloc/common.hpp"
#include "rloc/csv.hpp"
#include "rloc/geo.hpp"
#include "rloc/hmm.hpp"
#include "rloc/localizer.hpp"
#include "rloc/mr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace rloc {

using StationDb = std::map<StationId, LonLat>;

inline StationDb station_db(const std::vector<StationRecord>& records) {
    StationDb db;
    for (const auto& r : records) db[r.id] = r.pos;
    return db;
}

struct GridProfile {
    GridCellId grid;
    std::vector<StationId> bs_all;     // sorted: stations seen in any sample located here
    std::vector<StationId> bs_serving; // sorted: serving stations of samples located here
    std::int64_t n_samples = 0;
    double posterior = 0.0; // P(g | BS_g), mass among grids sharing serving stations
};

class ProfileTable {
public:
    ProfileTable() = default;
    explicit ProfileTable(std::vector<GridProfile> profiles) : profiles_(std::move(profiles)) {
        std::sort(profiles_.begin(), profiles_.end(),
                  [](const GridProfile& a, const GridProfile& b) { return a.grid < b.grid; });
        rebuild_posteriors();
        rebuild_indexes();
    }

    const std::vector<GridProfile>& profiles() const { return profiles_; }

    const GridProfile* find(GridCellId g) const {
        auto it = std::lower_bound(profiles_.begin(), profiles_.end(), g,
                                   [](const GridProfile& p, GridCellId id) { return p.grid < id; });
        if (it == profiles_.end() || it->grid != g) return nullptr;
        return &*it;
    }

    const std::map<StationId, std::vector<std::size_t>>& by_station() const { return by_station_; }

private:
    void rebuild_posteriors() {
        std::map<StationId, std::vector<std::size_t>> by_serving;
        for (std::size_t i = 0; i < profiles_.size(); ++i)
            for (const auto& sid : profiles_[i].bs_serving) by_serving[sid].push_back(i);
        for (auto& p : profiles_) {
            std::vector<std::size_t> peers;
            for (const auto& sid : p.bs_serving) {
                const auto& v = by_serving[sid];
                peers.insert(peers.end(), v.begin(), v.end());
            }
            std::sort(peers.begin(), peers.end());
            peers.erase(std::unique(peers.begin(), peers.end()), peers.end());
            std::int64_t denom = 0;
            for (auto i : peers) denom += profiles_[i].n_samples;
            p.posterior = denom > 0 ? static_cast<double>(p.n_samples) / static_cast<double>(denom) : 0.0;
        }
    }

    void rebuild_indexes() {
        by_station_.clear();
        for (std::size_t i = 0; i < profiles_.size(); ++i)
            for (const auto& sid : profiles_[i].bs_all) by_station_[sid].push_back(i);
    }

    std::vector<GridProfile> profiles_;
    std::map<StationId, std::vector<std::size_t>> by_station_;
};

struct ProfileBuildResult {
    ProfileTable table;
    std::int64_t missing_station_warnings = 0; // stations seen in samples but absent from bs_db
};

// Aggregates the training samples per ground-truth grid cell.
inline ProfileBuildResult build_grid_profiles(const std::vector<MrSample>& training, const GridSystem& grid,
                                              const StationDb& bs_db) {
    struct Agg {
        std::vector<StationId> all, serving;
        std::int64_t n = 0;
    };
    std::map<GridCellId, Agg> aggs;
    std::int64_t warnings = 0;
    for (const auto& s : training) {
        if (!s.truth) throw data_error("build_grid_profiles: sample without ground truth");
        auto& agg = aggs[grid.grid_of(*s.truth)];
        agg.n += 1;
        for (const auto& sid : s.station_set()) {
            agg.all.push_back(sid);
            if (!bs_db.count(sid)) ++warnings;
        }
        agg.serving.push_back(s.serving());
    }

    std::vector<GridProfile> profiles;
    profiles.reserve(aggs.size());
    for (auto& [g, agg] : aggs) {
        GridProfile p;
        p.grid = g;
        p.n_samples = agg.n;
        std::sort(agg.all.begin(), agg.all.end());
        agg.all.erase(std::unique(agg.all.begin(), agg.all.end()), agg.all.end());
        std::sort(agg.serving.begin(), agg.serving.end());
        agg.serving.erase(std::unique(agg.serving.begin(), agg.serving.end()), agg.serving.end());
        p.bs_all = std::move(agg.all);
        p.bs_serving = std::move(agg.serving);
        profiles.push_back(std::move(p));
    }
    return {ProfileTable(std::move(profiles)), warnings};
}

// J'(bs_r, BS_g) = |bs_r intersect BS_g| / |bs_r|
inline double candidate_similarity(const BsKey& bs_r, const GridProfile& profile) {
    if (bs_r.empty()) throw data_error("candidate_similarity: empty station set");
    std::size_t i = 0, j = 0, inter = 0;
    while (i < bs_r.size() && j < profile.bs_all.size()) {
        if (bs_r[i] < profile.bs_all[j]) ++i;
        else if (profile.bs_all[j] < bs_r[i]) ++j;
        else {
            ++inter;
            ++i;
            ++j;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(bs_r.size());
}

struct Candidate {
    const GridProfile* profile;
    double jprime;
};

// Eq. (5): profiled grids whose J' reaches xi, keeping the k_max best.
inline std::vector<Candidate> select_candidates(const MrSample& sample, const ProfileTable& profiles,
                                                double xi, int k_max) {
    if (!(xi > 0.0 && xi <= 1.0)) throw config_error("select_candidates: xi must lie in (0,1]");
    BsKey bs_r = sample.station_set();
    std::vector<std::size_t> touched;
    for (const auto& sid : bs_r) {
        auto it = profiles.by_station().find(sid);
        if (it == profiles.by_station().end()) continue;
        touched.insert(touched.end(), it->second.begin(), it->second.end());
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    std::vector<Candidate> out;
    for (auto idx : touched) {
        const auto& p = profiles.profiles()[idx];
        double j = candidate_similarity(bs_r, p);
        if (j >= xi) out.push_back({&p, j});
    }
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.jprime != b.jprime) return a.jprime > b.jprime;
        if (a.profile->n_samples != b.profile->n_samples) return a.profile->n_samples > b.profile->n_samples;
        return a.profile->grid < b.profile->grid;
    });
    if (out.size() > static_cast<std::size_t>(k_max)) out.resize(static_cast<std::size_t>(k_max));
    return out;
}

// Average distance from the sample's serving station to the serving stations
// of the candidate grid; zero when the serving station is one of them.
inline std::optional<double> serving_distance(const MrSample& sample, const GridProfile& profile,
                                              const StationDb& bs_db, const Projection& proj) {
    StationId s = sample.serving();
    if (std::binary_search(profile.bs_serving.begin(), profile.bs_serving.end(), s)) return 0.0;
    auto own = bs_db.find(s);
    if (own == bs_db.end()) return std::nullopt;
    double sum = 0.0;
    std::int64_t n = 0;
    for (const auto& sid : profile.bs_serving) {
        auto it = bs_db.find(sid);
        if (it == bs_db.end()) continue; // station without a known position
        sum += proj.distance_m(own->second, it->second);
        n += 1;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

// Normalized vertex weights for one flawed sample's candidate list. Entries
// whose serving distance is undefined are excluded (weight 0 reported as
// nullopt so callers can drop the vertex).
inline std::vector<std::optional<double>> vertex_weights(const MrSample& sample,
                                                         const std::vector<Candidate>& candidates,
                                                         const StationDb& bs_db, const Projection& proj,
                                                         double d_scale_m) {
    std::vector<std::optional<double>> numer(candidates.size());
    double total = 0.0;
    std::size_t usable = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto d = serving_distance(sample, *candidates[i].profile, bs_db, proj);
        if (!d) continue;
        double v = candidates[i].jprime * candidates[i].profile->posterior * std::exp(-*d / d_scale_m);
        numer[i] = v;
        total += v;
        ++usable;
    }
    if (usable == 0) return numer;
    for (auto& v : numer) {
        if (!v) continue;
        *v = total > 0.0 ? *v / total : 1.0 / static_cast<double>(usable);
    }
    return numer;
}

// Eq. (6) remapped to stay positive: ((1+cos theta)/2 + 0.05) / max(d, cell/2).
// The angular factor collapses to 1 when no previous position fixes a travel
// direction.
inline double edge_weight(const std::optional<LonLat>& prev, LonLat from, LonLat to, double cell_size_m,
                          const Projection& proj) {
    constexpr double kCosFloor = 0.05;
    XY a{0.0, 0.0};
    bool have_dir = false;
    if (prev) {
        a = {(from.lon - prev->lon) * proj.m_per_deg_lon(), (from.lat - prev->lat) * proj.m_per_deg_lat()};
        have_dir = std::hypot(a.x, a.y) > 1e-9;
    }
    XY b{(to.lon - from.lon) * proj.m_per_deg_lon(), (to.lat - from.lat) * proj.m_per_deg_lat()};
    double d = std::hypot(b.x, b.y);

    double angular = 1.0;
    if (have_dir && d > 1e-9) {
        double cos_theta = (a.x * b.x + a.y * b.y) / (std::hypot(a.x, a.y) * d);
        cos_theta = std::clamp(cos_theta, -1.0, 1.0);
        angular = 0.5 * (1.0 + cos_theta) + kCosFloor;
    }
    return angular / std::max(d, cell_size_m / 2.0);
}

struct RepairVertex {
    GridCellId grid;
    LonLat pos;
    double weight = 1.0; // anchors carry weight 1
};

// Leveled DAG for one run of flawed positions: optional anchor levels at both
// ends, complete bipartite edges between consecutive levels.
struct RepairGraph {
    std::vector<std::vector<RepairVertex>> levels;
    // edge_w[t][i][j]: from levels[t][i] to levels[t+1][j]
    std::vector<std::vector<std::vector<double>>> edge_w;

    std::size_t path_count() const {
        if (levels.empty()) return 0;
        std::size_t n = 1;
        for (const auto& lv : levels) n *= lv.size();
        return n;
    }
};

struct RepairLevelSpec {
    std::vector<RepairVertex> vertices;
    std::optional<LonLat> prev_ref; // direction reference for edges leaving this level
};

struct AnchorSpec {
    LonLat pos;
    std::optional<LonLat> prev_ref;
};

inline RepairGraph build_repair_graph(const std::vector<RepairLevelSpec>& flawed_levels,
                                      const std::optional<AnchorSpec>& source,
                                      const std::optional<AnchorSpec>& sink, double cell_size_m,
                                      const Projection& proj) {
    if (flawed_levels.empty()) throw data_error("build_repair_graph: no flawed levels");
    RepairGraph g;
    std::vector<std::optional<LonLat>> prev_refs;
    if (source) {
        g.levels.push_back({{GridCellId{-1, -1}, source->pos, 1.0}});
        prev_refs.push_back(source->prev_ref);
    }
    for (const auto& lv : flawed_levels) {
        if (lv.vertices.empty()) throw data_error("build_repair_graph: empty candidate level");
        g.levels.push_back(lv.vertices);
        prev_refs.push_back(lv.prev_ref);
    }
    if (sink) g.levels.push_back({{GridCellId{-2, -2}, sink->pos, 1.0}});

    for (std::size_t t = 0; t + 1 < g.levels.size(); ++t) {
        const auto& from = g.levels[t];
        const auto& to = g.levels[t + 1];
        std::vector<std::vector<double>> w(from.size(), std::vector<double>(to.size()));
        for (std::size_t i = 0; i < from.size(); ++i)
            for (std::size_t j = 0; j < to.size(); ++j)
                w[i][j] = edge_weight(prev_refs[t], from[i].pos, to[j].pos, cell_size_m, proj);
        g.edge_w.push_back(std::move(w));
    }
    return g;
}

struct DpResult {
    std::vector<std::size_t> picks; // chosen vertex per level
    double log_prob = 0.0;
    std::uint64_t relax_ops = 0; // edge relaxations, for complexity checks
};

// Level-by-level maximization of Eq. (7) in log domain, with per-vertex best
// predecessors and backtracking. Ties prefer the lexicographically smaller
// grid id.
inline DpResult dp_max_joint_path(const RepairGraph& g) {
    if (g.levels.empty()) throw data_error("dp_max_joint_path: empty graph");
    DpResult res;
    std::vector<double> jp;
    for (const auto& v : g.levels[0]) jp.push_back(std::log(v.weight));
    std::vector<std::vector<std::size_t>> parent(g.levels.size());

    for (std::size_t t = 1; t < g.levels.size(); ++t) {
        const auto& level = g.levels[t];
        std::vector<double> next(level.size());
        parent[t].resize(level.size());
        for (std::size_t j = 0; j < level.size(); ++j) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i < g.levels[t - 1].size(); ++i) {
                double cand = jp[i] + std::log(g.edge_w[t - 1][i][j]);
                ++res.relax_ops;
                if (cand > best ||
                    (cand == best && g.levels[t - 1][i].grid < g.levels[t - 1][best_i].grid)) {
                    best = cand;
                    best_i = i;
                }
            }
            next[j] = best + std::log(level[j].weight);
            parent[t][j] = best_i;
        }
        jp = next;
    }

    std::size_t cur = 0;
    for (std::size_t j = 1; j < jp.size(); ++j) {
        if (jp[j] > jp[cur] ||
            (jp[j] == jp[cur] && g.levels.back()[j].grid < g.levels.back()[cur].grid))
            cur = j;
    }
    res.log_prob = jp[cur];
    res.picks.assign(g.levels.size(), 0);
    for (std::size_t t = g.levels.size(); t-- > 0;) {
        res.picks[t] = cur;
        if (t > 0) cur = parent[t][cur];
    }
    return res;
}

struct RepairedSample {
    std::optional<PredictedLocation> original;
    int state = kNormal;
    std::optional<GridCellId> repaired_grid;
    std::optional<LonLat> repaired_pos;
    int run_id = -1;       // flawed-run index, -1 for normal samples
    bool repaired = false; // the DP replaced this position
    bool candidates_empty = false;
};

// Repairs one decoded sequence: flawed samples form maximal runs, each run is
// solved by the max-joint-probability path over its candidate graph. Samples
// without candidates keep their original prediction and split the run.
inline std::vector<RepairedSample> repair_sequence(const MrSequence& seq,
                                                   const std::vector<std::optional<PredictedLocation>>& preds,
                                                   const std::vector<int>& states,
                                                   const ProfileTable& profiles, const StationDb& bs_db,
                                                   const GridSystem& grid, double xi, int k_max,
                                                   double d_scale_m, int* run_counter = nullptr) {
    if (preds.size() != seq.samples.size() || states.size() != seq.samples.size())
        throw data_error("repair_sequence: misaligned inputs");
    const auto& proj = grid.projection();

    std::vector<RepairedSample> out(seq.samples.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t].original = preds[t];
        out[t].state = states[t];
        if (preds[t]) {
            out[t].repaired_grid = preds[t]->grid;
            out[t].repaired_pos = preds[t]->position;
        }
    }

    auto pred_pos = [&](std::size_t t) -> std::optional<LonLat> {
        if (t >= preds.size() || !preds[t]) return std::nullopt;
        return preds[t]->position;
    };

    int local_runs = 0;
    std::size_t t = 0;
    while (t < out.size()) {
        if (states[t] != kFlawed) {
            ++t;
            continue;
        }
        std::size_t run_start = t;
        while (t < out.size() && states[t] == kFlawed) ++t;
        std::size_t run_end = t; // exclusive

        int run_id = run_counter ? (*run_counter)++ : local_runs++;
        for (std::size_t u = run_start; u < run_end; ++u) out[u].run_id = run_id;

        // Candidate level per flawed sample; empty levels split the run.
        std::vector<std::vector<RepairVertex>> levels(run_end - run_start);
        for (std::size_t u = run_start; u < run_end; ++u) {
            auto cands = select_candidates(seq.samples[u], profiles, xi, k_max);
            auto weights = vertex_weights(seq.samples[u], cands, bs_db, proj, d_scale_m);
            for (std::size_t c = 0; c < cands.size(); ++c) {
                if (!weights[c]) continue;
                levels[u - run_start].push_back(
                    {cands[c].profile->grid, grid.centroid(cands[c].profile->grid), *weights[c]});
            }
            if (levels[u - run_start].empty()) out[u].candidates_empty = true;
        }

        std::size_t a = run_start;
        while (a < run_end) {
            if (levels[a - run_start].empty()) {
                ++a;
                continue;
            }
            std::size_t b = a;
            while (b + 1 < run_end && !levels[b + 1 - run_start].empty()) ++b;

            std::vector<RepairLevelSpec> specs;
            for (std::size_t u = a; u <= b; ++u) {
                RepairLevelSpec spec;
                spec.vertices = levels[u - run_start];
                if (u > 0) spec.prev_ref = pred_pos(u - 1);
                specs.push_back(std::move(spec));
            }

            std::optional<AnchorSpec> source, sink;
            if (a == run_start && a > 0 && states[a - 1] == kNormal) {
                if (auto p = pred_pos(a - 1)) {
                    AnchorSpec anchor{*p, std::nullopt};
                    if (a >= 2) anchor.prev_ref = pred_pos(a - 2);
                    source = anchor;
                }
            }
            if (b + 1 == run_end && b + 1 < out.size() && states[b + 1] == kNormal) {
                if (auto p = pred_pos(b + 1)) sink = AnchorSpec{*p, std::nullopt};
            }

            auto graph = build_repair_graph(specs, source, sink, grid.cell_size_m(), proj);
            auto dp = dp_max_joint_path(graph);
            std::size_t first_level = source ? 1 : 0;
            for (std::size_t u = a; u <= b; ++u) {
                const auto& v = graph.levels[first_level + (u - a)][dp.picks[first_level + (u - a)]];
                out[u].repaired_grid = v.grid;
                out[u].repaired_pos = v.pos;
                out[u].repaired = true;
            }
            a = b + 1;
        }
    }
    return out;
}

// Exhaustive oracle for dp_max_joint_path; refuses graphs beyond 1e5 paths.
inline DpResult enumerate_paths(const RepairGraph& g) {
    if (g.levels.empty()) throw data_error("enumerate_paths: empty graph");
    if (g.path_count() > 100000) throw data_error("enumerate_paths: too many paths");

    std::vector<std::size_t> idx(g.levels.size(), 0), best_idx;
    double best = -std::numeric_limits<double>::infinity();
    bool done = false;
    while (!done) {
        double s = std::log(g.levels[0][idx[0]].weight);
        for (std::size_t t = 1; t < g.levels.size(); ++t) {
            s += std::log(g.edge_w[t - 1][idx[t - 1]][idx[t]]);
            s += std::log(g.levels[t][idx[t]].weight);
        }
        bool take = s > best;
        if (!take && s == best && !best_idx.empty()) {
            for (std::size_t t = g.levels.size(); t-- > 0;) {
                auto a = g.levels[t][idx[t]].grid;
                auto b = g.levels[t][best_idx[t]].grid;
                if (a != b) {
                    take = a < b;
                    break;
                }
            }
        }
        if (take) {
            best = s;
            best_idx = idx;
        }
        // odometer increment
        done = true;
        for (std::size_t t = g.levels.size(); t-- > 0;) {
            if (++idx[t] < g.levels[t].size()) {
                done = false;
                break;
            }
            idx[t] = 0;
        }
    }
    DpResult res;
    res.picks = best_idx;
    res.log_prob = best;
    return res;
}

} // namespace rloc
