#include "rloc/fit.hpp"
#include "rloc/hmm.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace rloc;

namespace {

constexpr StationId A{6100, 1}, B{6100, 2}, C{6100, 3}, D{6100, 4}, E{6100, 5}, F{6100, 6};

Observation obs(BsKey bs, SsKey ss) {
    std::sort(bs.begin(), bs.end());
    std::sort(ss.begin(), ss.end());
    return {std::move(bs), std::move(ss)};
}

// The worked emission example: four samples sharing one signal level, states
// all flawed except r_c.
EmissionIndex figure4_index() {
    EmissionIndex idx;
    idx.add(obs({A, B, D, E}, {2, 2, 2, 2}), 0); // r_a
    idx.add(obs({B, D, E}, {2, 2, 2}), 0);       // r_b
    idx.add(obs({B, E, F}, {2, 2, 2}), 1);       // r_c
    idx.add(obs({B, D, E}, {2, 2, 2}), 0);       // r_d
    idx.canonicalize();
    return idx;
}

EmissionIndex serving_only_index() {
    EmissionIndex idx;
    idx.add(obs({A}, {2}), 0); // r_a
    idx.add(obs({B}, {2}), 0); // r_b
    idx.add(obs({B}, {2}), 1); // r_c
    idx.add(obs({B}, {2}), 0); // r_d
    idx.canonicalize();
    return idx;
}

DaHmm model_with(EmissionIndex idx, double gamma, double epsilon) {
    DaHmm m;
    m.base.pi = {0.5, 0.5};
    m.base.a = {{{0.5, 0.5}, {0.5, 0.5}}};
    m.base.index = std::move(idx);
    m.gamma = gamma;
    m.epsilon = epsilon;
    return m;
}

} // namespace

TEST_CASE("jaccard of the example station sets is exactly one half") {
    CHECK(jaccard({B, E, F}, {B, D, E}) == 0.5);
    CHECK(jaccard({B, E, F}, {B, E, F}) == 1.0);
    CHECK(jaccard({A}, {B}) == 0.0);
}

TEST_CASE("adaptive emission reproduces the worked smoothing example") {
    auto m = model_with(figure4_index(), 2.0, 0.5);
    auto query = obs({B, E, F}, {2, 2, 2});

    // weights: lg(1+2)*0.5 for {B,D,E}, lg(1+1)*1.0 for {B,E,F} itself
    double w_bde = std::log10(3.0) * 0.5;
    double w_bef = std::log10(2.0) * 1.0;
    double expected = w_bde / (w_bde + w_bef) * (2.0 / 3.0);

    double b = m.emission(query, 0);
    CHECK(b == Catch::Approx(expected).margin(1e-12));
    CHECK(std::abs(b - 0.293) <= 0.005);

    SECTION("the similar-set neighborhood and weights match the example") {
        auto sims = similar_sets(m.base.index, query.bs, 0.5);
        REQUIRE(sims.size() == 2);
        double wsum = 0.0;
        for (const auto& s : sims) wsum += s.weight;
        CHECK(wsum == Catch::Approx(1.0).margin(1e-9));
        for (const auto& s : sims) {
            if (m.base.index.keys[s.key_idx] == BsKey{B, D, E}) {
                CHECK(s.jaccard == 0.5);
                CHECK(s.weight == Catch::Approx(0.44).margin(0.005));
            } else {
                CHECK(m.base.index.keys[s.key_idx] == BsKey{B, E, F});
                CHECK(s.weight == Catch::Approx(0.56).margin(0.005));
            }
        }
    }
}

TEST_CASE("adaptive emission uses the exact-count branch when samples suffice") {
    auto m = model_with(serving_only_index(), 2.0, 0.5);
    CHECK(m.emission(obs({B}, {2}), 0) == 2.0 / 3.0);

    SECTION("gamma = 0 collapses to the static estimate everywhere") {
        auto collapsed = model_with(figure4_index(), 0.0, 0.5);
        for (const auto& key : collapsed.base.index.keys) {
            Observation v{key, SsKey(key.size(), 2)};
            for (int s : {0, 1})
                CHECK(collapsed.emission(v, s) == static_emission(collapsed.base.index, v, s));
        }
    }
    SECTION("gamma above every count forces the weighted branch") {
        auto smoothed = model_with(serving_only_index(), 100.0, 0.5);
        // {B} has z=3 but gamma=100: the weighted branch must still agree on
        // the neighborhood {B} alone (J({B},{A})=0), so the value matches Eq 3.
        CHECK(smoothed.emission(obs({B}, {2}), 0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    }
    SECTION("no similar set yields the probability floor") {
        auto m2 = model_with(serving_only_index(), 2.0, 0.5);
        CHECK(m2.emission(obs({C, D}, {2, 2}), 0) == kProbFloor);
    }
}

TEST_CASE("emission smoothing weights normalize over random neighborhoods") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 1000; ++rep) {
        EmissionIndex idx;
        int n = 2 + static_cast<int>(rng() % 30);
        for (int i = 0; i < n; ++i) {
            BsKey bs;
            for (int s = 1; s <= 6; ++s)
                if (rng() % 2) bs.push_back({6100, s});
            if (bs.empty()) bs.push_back({6100, 1});
            idx.add(obs(bs, {static_cast<std::uint8_t>(1 + rng() % 8)}), static_cast<int>(rng() % 2));
        }
        idx.canonicalize();
        BsKey q;
        for (int s = 1; s <= 6; ++s)
            if (rng() % 2) q.push_back({6100, s});
        if (q.empty()) q.push_back({6100, 2});
        auto sims = similar_sets(idx, q, 0.25 + 0.25 * static_cast<double>(rng() % 4));
        if (sims.empty()) continue;
        double total = 0.0;
        for (const auto& s : sims) total += s.weight;
        REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("compute_tau is the nearest-rank quantile") {
    CHECK(compute_tau({10, 20, 30, 40, 50}, 0.8) == 40.0);
    CHECK(compute_tau({30, 10, 50, 20, 40}, 0.8) == 40.0);
    CHECK(compute_tau({7, 7, 7}, 0.8) == 7.0);
    CHECK_THROWS_AS(compute_tau({}, 0.8), training_error);
}

TEST_CASE("confidence labels follow the strict threshold") {
    CHECK(label_confidence(75.0, 75.0) == kNormal);
    CHECK(label_confidence(75.001, 75.0) == kFlawed);
    CHECK(label_confidence(0.0, 75.0) == kNormal);
}

namespace {

LabeledSequence seq_of(std::vector<int> states, std::vector<double> deltas) {
    LabeledSequence s;
    s.states = std::move(states);
    s.deltas_s = std::move(deltas);
    for (std::size_t i = 0; i < s.states.size(); ++i)
        s.obs.push_back(obs({StationId{6100, static_cast<std::int32_t>(1 + i % 6)}},
                            {static_cast<std::uint8_t>(1 + i % 8)}));
    return s;
}

} // namespace

TEST_CASE("static HMM training counts transitions directly") {
    auto hmm = train_static_hmm({seq_of({1, 1, 0, 0}, {5, 5, 5})});
    CHECK(hmm.a[1][1] == 0.5);
    CHECK(hmm.a[1][0] == 0.5);
    CHECK(hmm.a[0][0] == 1.0);
    CHECK(hmm.a[0][1] == 0.0);
    CHECK(hmm.pi[1] == 1.0);
    CHECK(hmm.a[0][0] + hmm.a[0][1] == 1.0);
    CHECK(hmm.a[1][0] + hmm.a[1][1] == 1.0);
}

TEST_CASE("static HMM training requires both states") {
    CHECK_THROWS_WITH(train_static_hmm({seq_of({1, 1, 1}, {5, 5})}),
                      Catch::Matchers::ContainsSubstring("state 0"));
    CHECK_THROWS_AS(train_static_hmm({}), training_error);
    CHECK_THROWS_AS(train_static_hmm({seq_of({1}, {})}), training_error);
}

TEST_CASE("exponential fit recovers exact parameters from noiseless data") {
    std::vector<double> xs, ys;
    for (double d = 5.0; d <= 120.0; d += 5.0) {
        xs.push_back(d);
        ys.push_back(std::exp(-0.02 * d) * 0.9 * 0.8);
    }
    auto fit = fit_exp_decay(xs, ys, 0.8);
    CHECK(std::abs(fit.alpha - 0.02) / 0.02 < 1e-6);
    CHECK(std::abs(fit.beta - 0.9) / 0.9 < 1e-6);
}

TEST_CASE("exponential fit tolerates observation noise") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> noise(0.0, 0.01);
    int ok = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> xs, ys;
        for (double d = 5.0; d <= 120.0; d += 5.0) {
            xs.push_back(d);
            ys.push_back(std::exp(-0.02 * d) * 0.9 * 0.8 + noise(rng));
        }
        auto fit = fit_exp_decay(xs, ys, 0.8);
        if (std::abs(fit.alpha - 0.02) / 0.02 <= 0.10 && std::abs(fit.beta - 0.9) / 0.9 <= 0.10) ++ok;
    }
    CHECK(ok >= 45);
}

TEST_CASE("adaptive transition behaves per the decay law") {
    DaHmm m = model_with(figure4_index(), 2.0, 0.5);
    m.base.a = {{{0.4, 0.6}, {0.2, 0.8}}};
    m.trans.alpha = {0.01, 0.02};
    m.trans.beta = {1.0, 1.0};

    SECTION("zero gap with unit scale returns the static probability") {
        CHECK(m.transition(1, 1, 0.0) == 0.8);
        CHECK(m.transition(0, 1, 0.0) == 0.6);
    }
    SECTION("rows sum to one and stay clamped for random parameters") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> ua(0.0, 0.2), ub(0.1, 3.0), u01(0.0, 1.0), ud(0.0, 200.0);
        for (int rep = 0; rep < 1000; ++rep) {
            m.trans.alpha = {ua(rng), ua(rng)};
            m.trans.beta = {ub(rng), ub(rng)};
            m.base.a[0][1] = u01(rng);
            m.base.a[1][1] = u01(rng);
            double delta = ud(rng);
            for (int i : {0, 1}) {
                double p1 = m.transition(i, 1, delta), p0 = m.transition(i, 0, delta);
                REQUIRE(p1 + p0 == 1.0);
                REQUIRE(p1 >= kProbFloor);
                REQUIRE(p1 <= 1.0 - kProbFloor);
            }
        }
    }
    SECTION("stay-normal probability never increases with the gap") {
        m.trans.alpha = {0.015, 0.03};
        m.trans.beta = {0.9, 1.1};
        for (int i : {0, 1}) {
            double prev = m.transition(i, 1, 0.0);
            for (double d = 1.0; d <= 300.0; d += 1.0) {
                double cur = m.transition(i, 1, d);
                REQUIRE(cur <= prev + 1e-15);
                prev = cur;
            }
        }
    }
    SECTION("beta blowing past one is clamped") {
        m.trans.alpha = {0.0, 0.0};
        m.trans.beta = {5.0, 5.0};
        CHECK(m.transition(1, 1, 0.0) == 1.0 - kProbFloor);
    }
}

TEST_CASE("fit_adaptive_transition falls back without enough gap diversity") {
    auto hmm = train_static_hmm({seq_of({1, 1, 0, 0}, {5, 5, 5})});
    auto params = fit_adaptive_transition({seq_of({1, 1, 0, 0}, {5, 5, 5})}, hmm);
    CHECK(params.fallback[1]);
    CHECK(params.alpha[1] == 0.0);
    CHECK(params.beta[1] == 1.0);
}

TEST_CASE("fit_adaptive_transition recovers a planted decay") {
    // Plant transitions whose empirical stay-normal rate follows the decay
    // law exactly: N pairs per gap, round(N*y) of them staying normal.
    const double alpha = 0.02, beta = 0.9;
    std::vector<LabeledSequence> seqs;
    auto static_seqs = std::vector<LabeledSequence>{seq_of({1, 1, 1, 0, 0, 1}, {1, 1, 1, 1, 1})};
    auto hmm = train_static_hmm(static_seqs);
    double a11 = hmm.a[1][1];
    const int per_gap = 1000;
    for (double gap = 5.0; gap <= 60.0; gap += 5.0) {
        double y = std::exp(-alpha * gap) * beta * a11;
        int stay = static_cast<int>(std::lround(per_gap * y));
        for (int k = 0; k < per_gap; ++k)
            seqs.push_back(seq_of({1, k < stay ? 1 : 0}, {gap}));
    }
    auto params = fit_adaptive_transition(seqs, hmm);
    REQUIRE(!params.fallback[1]);
    CHECK(params.alpha[1] == Catch::Approx(alpha).epsilon(0.02));
    CHECK(params.beta[1] == Catch::Approx(beta).epsilon(0.02));
}

namespace {

DaHmm random_model(std::mt19937_64& rng) {
    EmissionIndex idx;
    std::uniform_int_distribution<int> nsamples(6, 24);
    int n = nsamples(rng);
    idx.add(obs({A}, {1}), 0); // both states guaranteed present
    idx.add(obs({B}, {2}), 1);
    for (int i = 0; i < n; ++i) {
        BsKey bs;
        for (int s = 1; s <= 6; ++s)
            if (rng() % 2) bs.push_back({6100, s});
        if (bs.empty()) bs.push_back({6100, 1 + static_cast<int>(rng() % 6)});
        SsKey ss;
        for (std::size_t k = 0; k < bs.size(); ++k) ss.push_back(static_cast<std::uint8_t>(1 + rng() % 8));
        idx.add(obs(bs, ss), static_cast<int>(rng() % 2));
    }
    idx.canonicalize();

    DaHmm m;
    std::uniform_real_distribution<double> u01(0.05, 0.95), ua(0.0, 0.1), ub(0.5, 1.5);
    double p = u01(rng);
    m.base.pi = {p, 1.0 - p};
    for (int i : {0, 1}) {
        double a1 = u01(rng);
        m.base.a[i] = {1.0 - a1, a1};
    }
    m.base.index = std::move(idx);
    m.trans.alpha = {ua(rng), ua(rng)};
    m.trans.beta = {ub(rng), ub(rng)};
    m.gamma = static_cast<double>(rng() % 5);
    m.epsilon = 0.25 + 0.25 * static_cast<double>(rng() % 4);
    return m;
}

std::vector<Observation> random_obs(std::mt19937_64& rng, std::size_t len) {
    std::vector<Observation> out;
    for (std::size_t t = 0; t < len; ++t) {
        BsKey bs;
        for (int s = 1; s <= 6; ++s)
            if (rng() % 2) bs.push_back({6100, s});
        if (bs.empty()) bs.push_back({6100, 1 + static_cast<int>(rng() % 6)});
        SsKey ss;
        for (std::size_t k = 0; k < bs.size(); ++k) ss.push_back(static_cast<std::uint8_t>(1 + rng() % 8));
        out.push_back(obs(bs, ss));
    }
    return out;
}

} // namespace

TEST_CASE("viterbi matches the exhaustive oracle on short sequences") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> ud(0.0, 120.0);
    for (int rep = 0; rep < 100; ++rep) {
        auto m = random_model(rng);
        std::size_t len = 1 + rng() % 8;
        auto o = random_obs(rng, len);
        std::vector<double> deltas;
        for (std::size_t t = 0; t + 1 < len; ++t) deltas.push_back(ud(rng));

        auto fast = viterbi_decode(m, o, deltas);
        auto slow = brute_force_decode(m, o, deltas);
        REQUIRE(fast.states == slow.states);
        REQUIRE(std::abs(fast.log_prob - slow.log_prob) <= 1e-9);
    }
}

TEST_CASE("length-1 decoding is the initial argmax") {
    auto m = model_with(figure4_index(), 0.0, 0.5);
    m.base.pi = {0.9, 0.1};
    auto o = std::vector<Observation>{obs({B, D, E}, {2, 2, 2})};
    auto res = viterbi_decode(m, o, {});
    // pi favors flawed strongly; emission favors flawed too (2/3 vs 0/1)
    CHECK(res.states == std::vector<int>{0});
    CHECK(res.log_prob == Catch::Approx(std::log(0.9) + std::log(2.0 / 3.0)));
}

TEST_CASE("uniform emissions leave transitions in charge") {
    EmissionIndex idx;
    idx.add(obs({A}, {2}), 0);
    idx.add(obs({A}, {2}), 1);
    idx.canonicalize();
    DaHmm m;
    m.base.pi = {0.3, 0.7};
    m.base.a = {{{0.6, 0.4}, {0.2, 0.8}}};
    m.base.index = std::move(idx);
    m.gamma = 0.0;
    m.epsilon = 0.5;

    std::vector<Observation> o(6, obs({A}, {2}));
    std::vector<double> deltas(5, 10.0);
    auto res = viterbi_decode(m, o, deltas);
    CHECK(res.states == std::vector<int>(6, 1));
}

TEST_CASE("decoding ties prefer the normal state") {
    EmissionIndex idx;
    idx.add(obs({A}, {2}), 0);
    idx.add(obs({A}, {2}), 1);
    idx.canonicalize();
    DaHmm m;
    m.base.pi = {0.5, 0.5};
    m.base.a = {{{0.5, 0.5}, {0.5, 0.5}}};
    m.base.index = std::move(idx);
    m.gamma = 0.0;
    m.epsilon = 0.5;

    std::vector<Observation> o(4, obs({A}, {2}));
    std::vector<double> deltas(3, 10.0);
    auto fast = viterbi_decode(m, o, deltas);
    auto slow = brute_force_decode(m, o, deltas);
    CHECK(fast.states == std::vector<int>(4, 1));
    CHECK(slow.states == fast.states);
}

TEST_CASE("brute force refuses long sequences") {
    auto m = model_with(figure4_index(), 2.0, 0.5);
    std::vector<Observation> o(21, obs({A}, {2}));
    std::vector<double> deltas(20, 1.0);
    CHECK_THROWS_AS(brute_force_decode(m, o, deltas), data_error);
}

TEST_CASE("collapsed DA-HMM decodes bit-identically to the static HMM") {
    std::mt19937_64 rng(7);
    std::vector<LabeledSequence> train;
    for (int i = 0; i < 40; ++i) {
        std::size_t len = 2 + rng() % 6;
        std::vector<int> states;
        std::vector<double> deltas;
        for (std::size_t t = 0; t < len; ++t) states.push_back(static_cast<int>(rng() % 2));
        for (std::size_t t = 0; t + 1 < len; ++t) deltas.push_back(1.0 + static_cast<double>(rng() % 60));
        train.push_back(seq_of(states, deltas));
    }
    auto static_hmm = train_static_hmm(train);

    DaHmm collapsed;
    collapsed.base = static_hmm;
    collapsed.trans.alpha = {0.0, 0.0};
    collapsed.trans.beta = {1.0, 1.0};
    collapsed.gamma = 0.0;
    collapsed.epsilon = 0.5;

    std::uniform_real_distribution<double> ud(0.0, 120.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::size_t len = 1 + rng() % 12;
        auto o = random_obs(rng, len);
        std::vector<double> deltas;
        for (std::size_t t = 0; t + 1 < len; ++t) deltas.push_back(ud(rng));
        auto via_static = viterbi_decode(static_hmm, o, deltas);
        auto via_da = viterbi_decode(collapsed, o, deltas);
        REQUIRE(via_static.states == via_da.states);
        REQUIRE(via_static.log_prob == via_da.log_prob);
    }
}
