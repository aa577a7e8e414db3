#pragma once

#include "rloc/common.hpp"
#include "rloc/config.hpp"
#include "rloc/csv.hpp"
#include "rloc/geo.hpp"
#include "rloc/hmm.hpp"
#include "rloc/localizer.hpp"
#include "rloc/metrics.hpp"
#include "rloc/repair.hpp"
#include "rloc/sequence.hpp"
#include "rloc/serialize.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rloc {

// Area of interest: the configured world box when it covers the data,
// otherwise the tight bounding box of the truth positions padded by one cell.
inline GridSystem grid_for_samples(const std::vector<MrSample>& samples, const PipelineConfig& cfg) {
    double min_lon = std::numeric_limits<double>::infinity(), min_lat = min_lon;
    double max_lon = -min_lon, max_lat = -min_lat;
    bool any = false;
    for (const auto& s : samples) {
        if (!s.truth) continue;
        any = true;
        min_lon = std::min(min_lon, s.truth->lon);
        min_lat = std::min(min_lat, s.truth->lat);
        max_lon = std::max(max_lon, s.truth->lon);
        max_lat = std::max(max_lat, s.truth->lat);
    }
    if (!any) throw data_error("grid_for_samples: no ground truth in training data");

    GeoRect world = cfg.world_bbox();
    if (min_lon >= world.min.lon && min_lat >= world.min.lat && max_lon <= world.max.lon &&
        max_lat <= world.max.lat)
        return build_grid_system(world, cfg.cell_size_m);

    Projection proj(0.5 * (min_lat + max_lat));
    double pad_lon = cfg.cell_size_m / proj.m_per_deg_lon();
    double pad_lat = cfg.cell_size_m / proj.m_per_deg_lat();
    return build_grid_system({{min_lon - pad_lon, min_lat - pad_lat}, {max_lon + pad_lon, max_lat + pad_lat}},
                             cfg.cell_size_m);
}

struct TrainResult {
    Bundle bundle;
    std::vector<MrSequence> test_sequences;
};

// Fig. 1 training stage: split, fit the localizer on D_L, predict D_C, derive
// tau and confidence labels, estimate the DA-HMM and the repair profiles.
inline TrainResult train_pipeline(const std::vector<MrSample>& samples,
                                  const std::vector<StationRecord>& stations, const PipelineConfig& cfg) {
    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const error&) {
            throw;
        } catch (const std::exception& e) {
            throw training_error(std::string("train[") + name + "]: " + e.what());
        }
    };

    auto sequences = group_into_sequences(samples, cfg.max_gap_s);
    auto split = split_dataset(std::move(sequences), cfg.seed, cfg.p_test, cfg.p_dc);

    std::vector<MrSample> d_l_samples, d_samples;
    for (const auto& seq : split.d_l)
        d_l_samples.insert(d_l_samples.end(), seq.samples.begin(), seq.samples.end());
    d_samples = d_l_samples;
    for (const auto& seq : split.d_c)
        d_samples.insert(d_samples.end(), seq.samples.begin(), seq.samples.end());

    TrainResult result;
    Bundle& b = result.bundle;
    b.config = cfg;
    b.stations = station_db(stations);
    b.grid = grid_for_samples(d_samples, cfg);
    b.localizer = stage("localizer", [&] {
        return train_fingerprint(d_l_samples, b.grid, cfg.knn_k, cfg.missing_level_penalty);
    });

    // Predict D_C; sequences with unpredictable samples cannot be labeled
    // coherently and are dropped (counted in the bundle metadata).
    std::vector<std::vector<double>> seq_errors;
    std::vector<const MrSequence*> usable;
    std::vector<double> all_errors;
    for (const auto& seq : split.d_c) {
        std::vector<double> errors;
        bool ok = true;
        for (const auto& s : seq.samples) {
            if (!s.truth) throw data_error("train: confidence sample without ground truth");
            try {
                auto pred = b.localizer.predict(s, b.grid);
                errors.push_back(b.grid.distance_m(pred.position, *s.truth));
            } catch (const data_error&) {
                ok = false;
                break;
            }
        }
        if (!ok) {
            b.dropped_dc_sequences += 1;
            continue;
        }
        usable.push_back(&seq);
        all_errors.insert(all_errors.end(), errors.begin(), errors.end());
        seq_errors.push_back(std::move(errors));
    }
    if (usable.empty()) throw training_error("train[confidence]: no usable confidence sequences");

    b.tau_m = stage("tau", [&] { return compute_tau(all_errors, cfg.tau_quantile); });

    std::vector<LabeledSequence> labeled;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        LabeledSequence ls;
        for (std::size_t t = 0; t < usable[i]->samples.size(); ++t) {
            ls.obs.push_back(observation_of(usable[i]->samples[t]));
            ls.states.push_back(label_confidence(seq_errors[i][t], b.tau_m));
        }
        ls.deltas_s = usable[i]->deltas_s;
        labeled.push_back(std::move(ls));
    }

    auto static_hmm = stage("static-hmm", [&] { return train_static_hmm(labeled); });
    b.hmm = stage("da-hmm",
                  [&] { return estimate_da_hmm(std::move(static_hmm), labeled, cfg.gamma, cfg.epsilon); });

    auto built = stage("profiles", [&] { return build_grid_profiles(d_samples, b.grid, b.stations); });
    b.profiles = std::move(built.table);
    b.profile_station_warnings = built.missing_station_warnings;

    result.test_sequences = std::move(split.d_test);
    return result;
}

struct RunRow {
    std::string imsi;
    std::int64_t timestamp_ms = 0;
    std::optional<LonLat> pred_pos;
    int state = kNormal;
    double seq_log_prob = 0.0;
    std::optional<LonLat> rep_pos;
    int run_id = -1;
    bool repaired = false;
};

struct RunResult {
    std::vector<RunRow> rows;
};

struct RunOptions {
    bool detect = true;
    bool repair = true;
};

// Fig. 1 testing stage: localize every sample, decode confidence states and
// repair the flawed runs. Output order is canonical (imsi, timestamp).
inline RunResult run_pipeline(const Bundle& b, std::vector<MrSequence> sequences, RunOptions opt = {}) {
    std::sort(sequences.begin(), sequences.end(), [](const MrSequence& x, const MrSequence& y) {
        if (x.imsi != y.imsi) return x.imsi < y.imsi;
        return x.samples.front().timestamp_ms < y.samples.front().timestamp_ms;
    });

    // Decode memoizes emissions per observation key: test sequences revisit
    // the same station sets constantly.
    struct CachedModel {
        const DaHmm& m;
        mutable std::map<std::pair<BsKey, SsKey>, std::array<double, 2>> cache;
        double initial(int j) const { return m.initial(j); }
        double transition(int i, int j, double d) const { return m.transition(i, j, d); }
        double emission(const Observation& v, int state) const {
            auto key = std::make_pair(v.bs, v.ss);
            auto it = cache.find(key);
            if (it == cache.end()) {
                it = cache.emplace(key, std::array<double, 2>{m.emission(v, 0), m.emission(v, 1)}).first;
            }
            return it->second[static_cast<std::size_t>(state)];
        }
    } model{b.hmm, {}};

    RunResult out;
    int run_counter = 0;
    for (const auto& seq : sequences) {
        auto preds = b.localizer.batch_predict(seq, b.grid);

        std::vector<int> states(seq.samples.size(), kNormal);
        double log_prob = 0.0;
        if (opt.detect) {
            std::vector<Observation> obs;
            obs.reserve(seq.samples.size());
            for (const auto& s : seq.samples) obs.push_back(observation_of(s));
            auto decoded = viterbi_decode(model, obs, seq.deltas_s);
            states = std::move(decoded.states);
            log_prob = decoded.log_prob;
        }

        std::vector<RepairedSample> repaired;
        if (opt.detect && opt.repair) {
            repaired = repair_sequence(seq, preds, states, b.profiles, b.stations, b.grid, b.config.xi,
                                       b.config.k_max, b.config.d_scale_m, &run_counter);
        }

        for (std::size_t t = 0; t < seq.samples.size(); ++t) {
            RunRow row;
            row.imsi = seq.imsi;
            row.timestamp_ms = seq.samples[t].timestamp_ms;
            if (preds[t]) row.pred_pos = preds[t]->position;
            row.state = states[t];
            row.seq_log_prob = log_prob;
            if (!repaired.empty()) {
                row.rep_pos = repaired[t].repaired_pos;
                row.run_id = repaired[t].run_id;
                row.repaired = repaired[t].repaired;
            } else {
                row.rep_pos = row.pred_pos;
            }
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

inline void write_trajectories_csv(std::ostream& os, const RunResult& run) {
    os << "imsi,timestamp,pred_lon,pred_lat,state,rep_lon,rep_lat,run_id\n";
    for (const auto& r : run.rows) {
        os << r.imsi << ',' << r.timestamp_ms << ',';
        if (r.pred_pos) os << detail::fmt_double(r.pred_pos->lon);
        os << ',';
        if (r.pred_pos) os << detail::fmt_double(r.pred_pos->lat);
        os << ',' << r.state << ',';
        if (r.rep_pos) os << detail::fmt_double(r.rep_pos->lon);
        os << ',';
        if (r.rep_pos) os << detail::fmt_double(r.rep_pos->lat);
        os << ',' << r.run_id << '\n';
    }
}

inline RunResult read_trajectories_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("trajectories csv: missing header");
    if (detail::trim(line) != "imsi,timestamp,pred_lon,pred_lat,state,rep_lon,rep_lat,run_id")
        throw data_error("trajectories csv: unexpected header");
    RunResult out;
    std::size_t rowno = 1;
    while (std::getline(in, line)) {
        ++rowno;
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv(line);
        if (f.size() != 8) throw data_error("trajectories csv row " + std::to_string(rowno) + ": bad field count");
        RunRow r;
        r.imsi = std::string(f[0]);
        r.timestamp_ms = *detail::parse_number<std::int64_t>(f[1], rowno, "timestamp");
        auto plon = detail::parse_number<double>(f[2], rowno, "pred_lon");
        auto plat = detail::parse_number<double>(f[3], rowno, "pred_lat");
        if (plon && plat) r.pred_pos = LonLat{*plon, *plat};
        r.state = *detail::parse_number<std::int32_t>(f[4], rowno, "state");
        auto rlon = detail::parse_number<double>(f[5], rowno, "rep_lon");
        auto rlat = detail::parse_number<double>(f[6], rowno, "rep_lat");
        if (rlon && rlat) r.rep_pos = LonLat{*rlon, *rlat};
        r.run_id = *detail::parse_number<std::int32_t>(f[7], rowno, "run_id");
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline void write_detection_csv(std::ostream& os, const RunResult& run) {
    os << "imsi,timestamp,predicted_state,log_prob\n";
    for (const auto& r : run.rows)
        os << r.imsi << ',' << r.timestamp_ms << ',' << r.state << ',' << detail::fmt_double(r.seq_log_prob)
           << '\n';
}

// Metrics over one run: alignment is by (imsi, timestamp) against the MR
// input that carries ground truth. Candidate-set statistics are recomputed
// from the bundle profiles for every detected-flawed sample.
inline EvalReport evaluate_run(const Bundle& b, const RunResult& run, const std::vector<MrSample>& truth_mr,
                               std::vector<std::pair<double, double>>* per_sample_errors = nullptr) {
    std::map<std::pair<std::string, std::int64_t>, const MrSample*> by_key;
    for (const auto& s : truth_mr) by_key.emplace(std::make_pair(s.imsi, s.timestamp_ms), &s);

    std::vector<double> before, after;
    std::vector<bool> detected, truth_flawed, correct;
    std::vector<std::size_t> cand_counts;
    std::vector<bool> cand_hits;

    for (const auto& row : run.rows) {
        auto it = by_key.find(std::make_pair(row.imsi, row.timestamp_ms));
        if (it == by_key.end())
            throw data_error("evaluate: no ground truth for " + row.imsi + "@" +
                             std::to_string(row.timestamp_ms));
        const MrSample& mr = *it->second;
        if (!mr.truth) throw data_error("evaluate: sample without ground truth " + row.imsi);
        if (!row.pred_pos) continue; // flagged localization failure

        double e_before = b.grid.distance_m(*row.pred_pos, *mr.truth);
        LonLat final_pos = row.rep_pos ? *row.rep_pos : *row.pred_pos;
        double e_after = b.grid.distance_m(final_pos, *mr.truth);
        before.push_back(e_before);
        after.push_back(e_after);
        detected.push_back(row.state == kFlawed);
        truth_flawed.push_back(e_before > b.tau_m);
        if (per_sample_errors) per_sample_errors->emplace_back(e_before, e_after);

        bool ok;
        if (b.config.repair_accuracy_mode == "error") {
            ok = e_after < b.tau_m;
        } else {
            ok = b.grid.grid_of(final_pos) == b.grid.grid_of(*mr.truth);
        }
        correct.push_back(ok);

        if (row.state == kFlawed) {
            auto cands = select_candidates(mr, b.profiles, b.config.xi, b.config.k_max);
            cand_counts.push_back(cands.size());
            auto tg = b.grid.grid_of(*mr.truth);
            bool hit = false;
            for (const auto& c : cands)
                if (c.profile->grid == tg) hit = true;
            cand_hits.push_back(hit);
        }
    }
    if (before.empty()) throw data_error("evaluate: no evaluable rows");

    EvalReport r;
    r.errors = error_quantiles(after);
    r.errors_before = error_quantiles(before);
    r.detection = detection_metrics(detected, truth_flawed);
    r.repair = repair_metrics(before, after, detected, correct);
    r.candidates = candidate_metrics(cand_counts, cand_hits);
    r.tau_m = b.tau_m;
    r.n_samples = static_cast<std::int64_t>(before.size());
    return r;
}

} // namespace rloc
