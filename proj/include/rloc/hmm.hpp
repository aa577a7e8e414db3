#pragma once

#include "rloc/common.hpp"
#include "rloc/fit.hpp"
#include "rloc/mr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace rloc {

// Floor applied to transition clamps, unseen emissions and initial-state
// probabilities so Viterbi never locks a state out at -inf.
inline constexpr double kProbFloor = 1e-6;

// Confidence states: 0 = flawed, 1 = normal.
inline constexpr int kFlawed = 0;
inline constexpr int kNormal = 1;

using BsKey = std::vector<StationId>;  // sorted unique station identities
using SsKey = std::vector<std::uint8_t>; // sorted multiset of discretized levels

struct Observation {
    BsKey bs;
    SsKey ss;
};

// Canonical observation: the identified station set plus the level multiset
// of every reading (anonymous non-serving readings included).
inline Observation observation_of(const MrSample& sample) {
    Observation v;
    v.bs = sample.station_set();
    for (const auto& c : sample.cells) v.ss.push_back(static_cast<std::uint8_t>(c.level()));
    std::sort(v.ss.begin(), v.ss.end());
    return v;
}

inline double jaccard(const BsKey& a, const BsKey& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++inter;
            ++i;
            ++j;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// Count index over the confidence-training samples, keyed by canonical
// station set. Holds everything Eq. (3)/(4) estimates need.
struct EmissionIndex {
    std::array<std::int64_t, 2> state_totals{0, 0};
    std::vector<BsKey> keys; // sorted
    std::vector<std::int64_t> z;
    std::vector<std::map<SsKey, std::array<std::int64_t, 2>>> joint;

    // derived lookups
    std::map<BsKey, std::size_t> key_of;
    std::map<StationId, std::vector<std::size_t>> by_station;

    void rebuild() {
        key_of.clear();
        by_station.clear();
        for (std::size_t i = 0; i < keys.size(); ++i) {
            key_of.emplace(keys[i], i);
            for (const auto& sid : keys[i]) by_station[sid].push_back(i);
        }
    }

    void add(const Observation& v, int state) {
        auto it = key_of.find(v.bs);
        std::size_t idx;
        if (it == key_of.end()) {
            idx = keys.size();
            keys.push_back(v.bs);
            z.push_back(0);
            joint.emplace_back();
            key_of.emplace(v.bs, idx);
            for (const auto& sid : v.bs) by_station[sid].push_back(idx);
        } else {
            idx = it->second;
        }
        z[idx] += 1;
        joint[idx][v.ss][static_cast<std::size_t>(state)] += 1;
        state_totals[static_cast<std::size_t>(state)] += 1;
    }

    void canonicalize() {
        std::vector<std::size_t> order(keys.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
        std::vector<BsKey> nk;
        std::vector<std::int64_t> nz;
        std::vector<std::map<SsKey, std::array<std::int64_t, 2>>> nj;
        for (auto i : order) {
            nk.push_back(std::move(keys[i]));
            nz.push_back(z[i]);
            nj.push_back(std::move(joint[i]));
        }
        keys = std::move(nk);
        z = std::move(nz);
        joint = std::move(nj);
        rebuild();
    }

    std::int64_t z_of(const BsKey& bs) const {
        auto it = key_of.find(bs);
        return it == key_of.end() ? 0 : z[it->second];
    }

    std::int64_t joint_count(std::size_t key_idx, const SsKey& ss, int state) const {
        auto it = joint[key_idx].find(ss);
        return it == joint[key_idx].end() ? 0 : it->second[static_cast<std::size_t>(state)];
    }
};

struct SimilarSet {
    std::size_t key_idx;
    double jaccard;
    double weight; // normalized over the neighborhood
};

// Station sets whose Jaccard similarity with the query reaches epsilon,
// weighted by lg(1+z)*J and normalized. The query's own set participates
// when indexed (J = 1).
inline std::vector<SimilarSet> similar_sets(const EmissionIndex& index, const BsKey& query, double epsilon) {
    std::vector<std::size_t> candidates;
    if (epsilon > 0.0) {
        for (const auto& sid : query) {
            auto it = index.by_station.find(sid);
            if (it == index.by_station.end()) continue;
            candidates.insert(candidates.end(), it->second.begin(), it->second.end());
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    } else {
        candidates.resize(index.keys.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i] = i;
    }

    std::vector<SimilarSet> out;
    double total = 0.0;
    for (auto idx : candidates) {
        double j = jaccard(query, index.keys[idx]);
        if (j < epsilon) continue;
        double w = std::log10(1.0 + static_cast<double>(index.z[idx])) * j;
        out.push_back({idx, j, w});
        total += w;
    }
    if (total > 0.0)
        for (auto& s : out) s.weight /= total;
    return out;
}

// Eq. (3): exact-key estimate with the probability floor for unseen pairs.
inline double static_emission(const EmissionIndex& index, const Observation& v, int state) {
    auto total = index.state_totals[static_cast<std::size_t>(state)];
    if (total <= 0) throw training_error("emission: state " + std::to_string(state) + " has no samples");
    auto it = index.key_of.find(v.bs);
    if (it == index.key_of.end()) return kProbFloor;
    double b = static_cast<double>(index.joint_count(it->second, v.ss, state)) / static_cast<double>(total);
    return std::max(b, kProbFloor);
}

struct StaticHmm {
    std::array<double, 2> pi{0.0, 0.0};
    std::array<std::array<double, 2>, 2> a{}; // a[i][j]
    EmissionIndex index;

    double initial(int j) const { return std::max(pi[static_cast<std::size_t>(j)], kProbFloor); }

    // Parameterized by the stay-normal probability, a_{i,0} = 1 - a_{i,1},
    // clamped like the adaptive form so the two decoders are comparable.
    double transition(int i, int j, double /*delta_s*/) const {
        double a1 = std::clamp(a[static_cast<std::size_t>(i)][1], kProbFloor, 1.0 - kProbFloor);
        return j == 1 ? a1 : 1.0 - a1;
    }

    double emission(const Observation& v, int state) const { return static_emission(index, v, state); }
};

struct LabeledSequence {
    std::vector<Observation> obs;
    std::vector<int> states;
    std::vector<double> deltas_s; // length obs.size()-1
};

// Nearest-rank empirical quantile of prediction errors.
inline double compute_tau(std::vector<double> errors, double quantile) {
    if (errors.empty()) throw training_error("compute_tau: no errors to rank");
    if (!(quantile > 0.0 && quantile < 1.0)) throw config_error("compute_tau: quantile must lie in (0,1)");
    std::sort(errors.begin(), errors.end());
    auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(errors.size())));
    rank = std::clamp<std::size_t>(rank, 1, errors.size());
    return errors[rank - 1];
}

// Definition 1: flawed iff the prediction error strictly exceeds tau.
inline int label_confidence(double error_m, double tau) { return error_m > tau ? kFlawed : kNormal; }

inline StaticHmm train_static_hmm(const std::vector<LabeledSequence>& sequences) {
    bool any_pair = false;
    for (const auto& s : sequences)
        if (s.states.size() >= 2) any_pair = true;
    if (sequences.empty() || !any_pair)
        throw training_error("train_static_hmm: need at least one sequence of length >= 2");

    std::array<std::int64_t, 2> initial{0, 0};
    std::array<std::array<std::int64_t, 2>, 2> trans{};
    StaticHmm hmm;
    for (const auto& seq : sequences) {
        if (seq.states.empty()) continue;
        initial[static_cast<std::size_t>(seq.states.front())] += 1;
        for (std::size_t t = 0; t + 1 < seq.states.size(); ++t)
            trans[static_cast<std::size_t>(seq.states[t])][static_cast<std::size_t>(seq.states[t + 1])] += 1;
        for (std::size_t t = 0; t < seq.states.size(); ++t) hmm.index.add(seq.obs[t], seq.states[t]);
    }
    for (int s : {0, 1})
        if (hmm.index.state_totals[static_cast<std::size_t>(s)] == 0)
            throw training_error("train_static_hmm: state " + std::to_string(s) + " never observed");

    auto total_initial = static_cast<double>(initial[0] + initial[1]);
    hmm.pi = {initial[0] / total_initial, initial[1] / total_initial};
    for (int i : {0, 1}) {
        auto row = static_cast<double>(trans[i][0] + trans[i][1]);
        if (row == 0.0) {
            hmm.a[i] = {0.5, 0.5}; // state only ever seen at sequence ends
        } else {
            hmm.a[i] = {trans[i][0] / row, trans[i][1] / row};
        }
    }
    hmm.index.canonicalize();
    return hmm;
}

struct AdaptiveTransitionParams {
    std::array<double, 2> alpha{0.0, 0.0};
    std::array<double, 2> beta{1.0, 1.0};
    std::array<bool, 2> fallback{false, false}; // fit failed; static transitions kept
};

// Bins transitions out of each state by the integer-second gap, estimates the
// empirical stay-normal probability per bin and fits the exponential decay.
inline AdaptiveTransitionParams fit_adaptive_transition(const std::vector<LabeledSequence>& sequences,
                                                        const StaticHmm& base) {
    AdaptiveTransitionParams params;
    for (int i : {0, 1}) {
        std::map<long long, std::array<std::int64_t, 2>> bins;
        for (const auto& seq : sequences)
            for (std::size_t t = 0; t + 1 < seq.states.size(); ++t) {
                if (seq.states[t] != i) continue;
                auto bin = static_cast<long long>(std::llround(seq.deltas_s[t]));
                bins[bin][static_cast<std::size_t>(seq.states[t + 1])] += 1;
            }

        std::vector<double> xs, ys;
        for (const auto& [delta, counts] : bins) {
            auto total = counts[0] + counts[1];
            if (total == 0) continue;
            xs.push_back(static_cast<double>(delta));
            ys.push_back(static_cast<double>(counts[1]) / static_cast<double>(total));
        }

        double a_i1 = base.a[static_cast<std::size_t>(i)][1];
        if (xs.size() < 2 || !(a_i1 > 0.0)) {
            params.fallback[static_cast<std::size_t>(i)] = true;
            continue;
        }
        try {
            auto fit = fit_exp_decay(xs, ys, a_i1);
            params.alpha[static_cast<std::size_t>(i)] = std::max(fit.alpha, 0.0);
            params.beta[static_cast<std::size_t>(i)] = std::max(fit.beta, 1e-12);
        } catch (const training_error&) {
            params.fallback[static_cast<std::size_t>(i)] = true;
        }
    }
    return params;
}

struct DaHmm {
    StaticHmm base;
    AdaptiveTransitionParams trans;
    double gamma = 5.0;
    double epsilon = 0.5;

    double initial(int j) const { return base.initial(j); }

    // Eq. (1) with the complement rule; clamped so rows stay decodable even
    // when beta*a exceeds 1 at small gaps.
    double transition(int i, int j, double delta_s) const {
        auto ii = static_cast<std::size_t>(i);
        double a1 = std::exp(-trans.alpha[ii] * delta_s) * trans.beta[ii] * base.a[ii][1];
        a1 = std::clamp(a1, kProbFloor, 1.0 - kProbFloor);
        return j == 1 ? a1 : 1.0 - a1;
    }

    // Eq. (3) when the station set is sampled at least gamma times in the
    // training subset, otherwise the Jaccard-weighted estimate of Eq. (4).
    double emission(const Observation& v, int state) const {
        auto total = base.index.state_totals[static_cast<std::size_t>(state)];
        if (total <= 0) throw training_error("emission: state " + std::to_string(state) + " has no samples");
        auto z = base.index.z_of(v.bs);
        if (static_cast<double>(z) >= gamma) return static_emission(base.index, v, state);

        auto sims = similar_sets(base.index, v.bs, epsilon);
        if (sims.empty()) return kProbFloor;
        double b = 0.0;
        for (const auto& s : sims)
            b += s.weight * static_cast<double>(base.index.joint_count(s.key_idx, v.ss, state)) /
                 static_cast<double>(total);
        return std::max(b, kProbFloor);
    }
};

inline DaHmm estimate_da_hmm(StaticHmm base, const std::vector<LabeledSequence>& d_c, double gamma,
                             double epsilon) {
    DaHmm model;
    model.trans = fit_adaptive_transition(d_c, base);
    model.base = std::move(base);
    model.gamma = gamma;
    model.epsilon = epsilon;
    return model;
}

struct DecodeResult {
    std::vector<int> states;
    double log_prob = 0.0;
};

// Max-probability confidence path in log domain. Ties prefer state 1, at the
// final step and at each predecessor choice during backtracking.
template <class Model>
DecodeResult viterbi_decode(const Model& model, const std::vector<Observation>& obs,
                            const std::vector<double>& deltas_s) {
    std::size_t n = obs.size();
    if (n == 0) throw data_error("viterbi_decode: empty sequence");
    if (deltas_s.size() + 1 != n) throw data_error("viterbi_decode: deltas misaligned");

    std::array<double, 2> lp{};
    for (int j : {0, 1})
        lp[static_cast<std::size_t>(j)] =
            std::log(model.initial(j)) + std::log(model.emission(obs[0], j));

    std::vector<std::array<int, 2>> parent(n);
    for (std::size_t t = 1; t < n; ++t) {
        std::array<double, 2> next{};
        for (int j : {0, 1}) {
            double best = -std::numeric_limits<double>::infinity();
            int best_i = kNormal;
            for (int i : {1, 0}) { // state 1 wins exact ties
                double cand = lp[static_cast<std::size_t>(i)] +
                              std::log(model.transition(i, j, deltas_s[t - 1]));
                if (cand > best) {
                    best = cand;
                    best_i = i;
                }
            }
            next[static_cast<std::size_t>(j)] = best + std::log(model.emission(obs[t], j));
            parent[t][static_cast<std::size_t>(j)] = best_i;
        }
        lp = next;
    }

    DecodeResult res;
    int cur = lp[1] >= lp[0] ? 1 : 0;
    res.log_prob = lp[static_cast<std::size_t>(cur)];
    res.states.assign(n, kNormal);
    for (std::size_t t = n; t-- > 0;) {
        res.states[t] = cur;
        if (t > 0) cur = parent[t][static_cast<std::size_t>(cur)];
    }
    return res;
}

// Exhaustive oracle over all 2^n state paths, same scoring order and the same
// tie rule as viterbi_decode.
template <class Model>
DecodeResult brute_force_decode(const Model& model, const std::vector<Observation>& obs,
                                const std::vector<double>& deltas_s) {
    std::size_t n = obs.size();
    if (n == 0) throw data_error("brute_force_decode: empty sequence");
    if (n > 20) throw data_error("brute_force_decode: refusing sequences longer than 20");
    if (deltas_s.size() + 1 != n) throw data_error("brute_force_decode: deltas misaligned");

    DecodeResult best;
    best.log_prob = -std::numeric_limits<double>::infinity();
    std::vector<int> path(n);
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        for (std::size_t t = 0; t < n; ++t) path[t] = (mask >> t) & 1u;
        double s = std::log(model.initial(path[0])) + std::log(model.emission(obs[0], path[0]));
        for (std::size_t t = 1; t < n; ++t) {
            s += std::log(model.transition(path[t - 1], path[t], deltas_s[t - 1]));
            s += std::log(model.emission(obs[t], path[t]));
        }
        bool take = s > best.log_prob;
        if (!take && s == best.log_prob && !best.states.empty()) {
            for (std::size_t t = n; t-- > 0;) {
                if (path[t] != best.states[t]) {
                    take = path[t] == 1;
                    break;
                }
            }
        }
        if (take) {
            best.log_prob = s;
            best.states = path;
        }
    }
    return best;
}

} // namespace rloc
