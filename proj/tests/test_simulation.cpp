#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "test_support.hpp"
#include "ti/simulation.hpp"

using namespace ti;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no ti::Error thrown";
    return ErrorCode::InvalidArgument;
}

SimConfig random_config(std::mt19937_64& gen, std::size_t max_n) {
    std::uniform_real_distribution<double> prob(0.05, 0.95);
    SimConfig cfg;
    cfg.beta_a = std::uniform_real_distribution<double>(-2.0, 2.0)(gen);
    cfg.beta_c = std::uniform_real_distribution<double>(0.0, 100.0)(gen);
    cfg.gamma = std::uniform_real_distribution<double>(0.1, 4.0)(gen);
    cfg.pi0 = prob(gen);
    cfg.pi1 = prob(gen);
    cfg.pc = prob(gen);
    cfg.n = 10 + gen() % (max_n - 10);
    cfg.d_signal = 1 + gen() % 4;
    cfg.d_noise = gen() % 4;
    cfg.jitter = gen() % 4 != 0;
    cfg.seed = gen();
    return cfg;
}

}  // namespace

TEST(Simulate, NearNoiselessOutcomes) {
    SimConfig cfg;
    cfg.gamma = 1e-9;
    cfg.beta_c = 0.0;
    cfg.n = 1000;
    const SimSample s = simulate(cfg);
    ASSERT_EQ(s.dataset.size(), 1000u);
    EXPECT_EQ(s.dataset.dim(), cfg.dim());
    for (const Unit& u : s.dataset.units()) EXPECT_NEAR(u.y, u.a == 1 ? 1.0 : 0.0, 1e-6);
}

TEST(Simulate, TreatmentRatesFollowConfounder) {
    SimConfig cfg;
    cfg.n = 10000;
    cfg.seed = 11;
    const SimSample s = simulate(cfg);
    double treated[2] = {0, 0}, total[2] = {0, 0};
    for (std::size_t i = 0; i < s.dataset.size(); ++i) {
        total[s.truth.c[i]] += 1;
        treated[s.truth.c[i]] += s.dataset[i].a;
    }
    EXPECT_NEAR(treated[0] / total[0], 0.8, 0.02);
    EXPECT_NEAR(treated[1] / total[1], 0.6, 0.02);
}

TEST(Simulate, ConfoundingTermIsCentered) {
    SimConfig cfg;
    cfg.beta_a = 0.0;
    cfg.beta_c = 1.0;
    cfg.n = 10000;
    cfg.seed = 5;
    const SimSample s = simulate(cfg);
    double sum = 0.0;
    for (const Unit& u : s.dataset.units()) sum += u.y;
    EXPECT_LE(std::abs(sum / 10000.0), 3.0 * cfg.gamma / 100.0);
}

TEST(Simulate, RejectsBadConfig) {
    for (auto mutate : std::vector<std::function<void(SimConfig&)>>{
             [](SimConfig& c) { c.pi0 = 0.0; }, [](SimConfig& c) { c.pi1 = 1.0; }, [](SimConfig& c) { c.pc = 1.5; },
             [](SimConfig& c) { c.gamma = 0.0; }, [](SimConfig& c) { c.n = 9; }, [](SimConfig& c) { c.d_signal = 0; }}) {
        SimConfig cfg;
        mutate(cfg);
        EXPECT_EQ(code_of([&] { simulate(cfg); }), ErrorCode::ConfigInvalid);
    }
}

TEST(Simulate, BetaOffset) {
    SimConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.beta_o(), 0.7);
    cfg.pc = 0.25;
    EXPECT_DOUBLE_EQ(cfg.beta_o(), 0.75);
}

TEST(DeterministicTreatment, DefaultConfig) {
    const SimSample s = simulate(SimConfig{});
    EXPECT_TRUE(deterministic_treatment_check(s));
    for (const Unit& u : s.dataset.units()) EXPECT_EQ(decode_treatment(u.x, s.config.d_signal), u.a);
}

TEST(DeterministicTreatment, ZeroedSignalBlockFails) {
    SimConfig cfg;
    cfg.n = 500;
    SimSample s = simulate(cfg);
    std::vector<Unit> units = s.dataset.units();
    for (Unit& u : units)
        for (std::size_t k = 0; k < cfg.d_signal; ++k) u.x[k] = 0.0;
    s.dataset = Dataset(std::move(units));
    EXPECT_FALSE(deterministic_treatment_check(s));
}

TEST(DeterministicTreatment, SingleSignalDimensionWithoutJitter) {
    SimConfig cfg;
    cfg.n = 400;
    cfg.d_signal = 1;
    cfg.jitter = false;
    const SimSample s = simulate(cfg);
    EXPECT_TRUE(deterministic_treatment_check(s));
}

TEST(SimulationTruth, OraclesReadTheTruth) {
    SimConfig cfg;
    cfg.n = 50;
    const SimSample s = simulate(cfg);
    const OutcomeOracle q = truth_outcome_oracle(s.truth);
    const PropensityOracle g = truth_propensity_oracle(s.truth);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(q(i, s.dataset[i]), (EtaPair{s.truth.true_q0[i], s.truth.true_q1[i]}));
        EXPECT_EQ(g(i, s.dataset[i]), s.truth.true_g[i]);
    }
}

TEST(SimulationTruth, JsonRoundTripAndAlignment) {
    SimConfig cfg;
    cfg.n = 40;
    cfg.seed = 8;
    const SimSample s = simulate(cfg);
    const auto dir = test::fresh_dir("truth_json");
    write_truth_json(s, dir / "truth.json");
    const SimTruth back = read_truth_json(dir / "truth.json");
    EXPECT_EQ(back.beta_a, s.truth.beta_a);
    EXPECT_EQ(back.ids, s.truth.ids);
    EXPECT_EQ(back.c, s.truth.c);
    EXPECT_EQ(back.true_q0, s.truth.true_q0);
    EXPECT_EQ(back.true_q1, s.truth.true_q1);
    EXPECT_EQ(back.true_g, s.truth.true_g);

    std::vector<Unit> reversed(s.dataset.units().rbegin(), s.dataset.units().rend());
    const Dataset rev(std::move(reversed));
    const SimTruth aligned = align_truth(back, rev);
    for (std::size_t i = 0; i < rev.size(); ++i) {
        EXPECT_EQ(aligned.ids[i], rev[i].id);
        EXPECT_EQ(aligned.true_q0[i], s.truth.true_q0[39 - i]);
    }
    std::vector<Unit> extra = s.dataset.units();
    extra.push_back(test::unit("stranger", 1, 0.0, extra.front().x));
    EXPECT_EQ(code_of([&] { align_truth(back, Dataset(extra)); }), ErrorCode::MissingId);
}

TEST(SimulationTruth, SchemaErrors) {
    EXPECT_EQ(code_of([] { parse_truth_json("[]"); }), ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_truth_json("{"); }), ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse_truth_json(R"({"beta_a":1,"ids":["a"],"c":[0],"true_q0":[0],"true_q1":[1]})"); }),
              ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] {
                  parse_truth_json(R"({"beta_a":1,"ids":["a","b"],"c":[0],"true_q0":[0],"true_q1":[1],"true_g":[0.5]})");
              }),
              ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { read_truth_json("/nonexistent/truth.json"); }), ErrorCode::Io);
}

TEST(SimulationProperty, OutcomeNoiseMoments) {
    std::mt19937_64 gen(51);
    for (int c = 0; c < test::kCases; ++c) {
        SimConfig cfg = random_config(gen, 20);
        cfg.n = 10000;
        const SimSample s = simulate(cfg);
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const Unit& u = s.dataset[i];
            const double r = u.y - (cfg.beta_a * u.a + cfg.beta_c * (cfg.pi(s.truth.c[i]) - cfg.beta_o()));
            sum += r;
            sq += r * r;
        }
        const double m = sum / 10000.0;
        const double var = (sq - 10000.0 * m * m) / 9999.0;
        EXPECT_LE(std::abs(m), 4.0 * cfg.gamma / 100.0);
        EXPECT_NEAR(var, cfg.gamma * cfg.gamma, 0.1 * cfg.gamma * cfg.gamma);
    }
}

TEST(SimulationProperty, TruthMatchesFormulaAndOverlapHolds) {
    std::mt19937_64 gen(52);
    for (int c = 0; c < test::kCases; ++c) {
        const SimConfig cfg = random_config(gen, 300);
        const SimSample s = simulate(cfg);
        ASSERT_EQ(s.truth.true_q0.size(), cfg.n);
        EXPECT_EQ(s.truth.beta_a, cfg.beta_a);
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const int ci = s.truth.c[i];
            const double conf = cfg.beta_c * (cfg.pi(ci) - cfg.beta_o());
            EXPECT_NEAR(s.truth.true_q0[i], conf, 1e-12 * (1.0 + std::abs(conf)));
            EXPECT_NEAR(s.truth.true_q1[i], cfg.beta_a + conf, 1e-12 * (1.0 + std::abs(conf)));
            EXPECT_GT(s.truth.true_g[i], 0.0);
            EXPECT_LT(s.truth.true_g[i], 1.0);
            if (cfg.beta_c != 0.0 && cfg.pi0 != cfg.pi1) EXPECT_EQ(s.truth.true_g[i], cfg.pi(ci));
            EXPECT_EQ(decode_treatment(s.dataset[i].x, cfg.d_signal), s.dataset[i].a);
            EXPECT_EQ(s.truth.ids[i], s.dataset[i].id);
        }
    }
}

TEST(SimulationProperty, ReproducibleBytes) {
    std::mt19937_64 gen(53);
    for (int c = 0; c < test::kCases; ++c) {
        const SimConfig cfg = random_config(gen, 200);
        const SimSample a = simulate(cfg);
        const SimSample b = simulate(cfg);
        EXPECT_EQ(dataset_to_csv(a.dataset), dataset_to_csv(b.dataset));
        EXPECT_EQ(truth_to_json(a), truth_to_json(b));
        SimConfig other = cfg;
        other.seed = cfg.seed + 1;
        EXPECT_NE(dataset_to_csv(simulate(other).dataset), dataset_to_csv(a.dataset));
    }
}

TEST(SimulationProperty, TruthJsonRoundTrip) {
    std::mt19937_64 gen(54);
    for (int c = 0; c < test::kCases; ++c) {
        const SimSample s = simulate(random_config(gen, 100));
        const SimTruth back = parse_truth_json(truth_to_json(s));
        EXPECT_EQ(back.beta_a, s.truth.beta_a);
        EXPECT_EQ(back.ids, s.truth.ids);
        EXPECT_EQ(back.c, s.truth.c);
        EXPECT_EQ(back.true_q0, s.truth.true_q0);
        EXPECT_EQ(back.true_q1, s.truth.true_q1);
        EXPECT_EQ(back.true_g, s.truth.true_g);
    }
}
