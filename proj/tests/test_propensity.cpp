#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "ti/propensity.hpp"
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

std::vector<LabeledEta> random_train(std::mt19937_64& gen, std::size_t n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<LabeledEta> t(n);
    for (LabeledEta& p : t) p = {{nd(gen), nd(gen)}, static_cast<int>(gen() % 2)};
    return t;
}

/// Brute-force k-NN: full stable sort on distance.
double knn_oracle(std::vector<LabeledEta> train, EtaPair q, std::size_t k) {
    auto d2 = [&](const LabeledEta& p) {
        return (p.eta.q0 - q.q0) * (p.eta.q0 - q.q0) + (p.eta.q1 - q.q1) * (p.eta.q1 - q.q1);
    };
    std::stable_sort(train.begin(), train.end(), [&](const auto& l, const auto& r) { return d2(l) < d2(r); });
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += train[i].a;
    return s / static_cast<double>(k);
}

PropensitySpec random_spec(std::mt19937_64& gen) {
    PropensitySpec s;
    switch (gen() % 4) {
        case 0: s = PropensitySpec::knn(1 + gen() % 10); break;
        case 1: s = PropensitySpec::kernel(); break;
        case 2: s = PropensitySpec::logistic(0.1); break;
        default: s = PropensitySpec::gp(); break;
    }
    s.epsilon_clip = std::uniform_real_distribution<double>(0.001, 0.2)(gen);
    return s;
}

QHatTable random_qhat(std::mt19937_64& gen, const Dataset& ds) {
    std::normal_distribution<double> nd(0.0, 1.0);
    QHatTable q;
    for (std::size_t i = 0; i < ds.size(); ++i) q.eta.push_back({nd(gen) + ds[i].a, 5.0 * nd(gen)});
    return q;
}

}  // namespace

TEST(KernelRegress2d, SinglePointAndSymmetry) {
    const std::vector<LabeledEta> one{{{0.3, -2.0}, 1}};
    EXPECT_EQ(kernel_regress_2d(one, {5.0, 5.0}, 1.0), 1.0);
    const std::vector<LabeledEta> two{{{-1.0, 0.0}, 0}, {{1.0, 0.0}, 1}};
    EXPECT_DOUBLE_EQ(kernel_regress_2d(two, {0.0, 0.0}, 0.7), 0.5);
}

TEST(KernelRegress2d, HandWeights) {
    // Squared distances 0, 1, 4 from the origin with bandwidth 1.
    const std::vector<LabeledEta> t{{{0.0, 0.0}, 1}, {{1.0, 0.0}, 0}, {{0.0, 2.0}, 1}};
    const double w0 = 1.0, w1 = std::exp(-0.5), w2 = std::exp(-2.0);
    EXPECT_NEAR(kernel_regress_2d(t, {0.0, 0.0}, 1.0), (w0 + w2) / (w0 + w1 + w2), 1e-15);
}

TEST(KernelRegress2d, UnderflowFallsBackToTrainingMean) {
    const std::vector<LabeledEta> t{{{0.0, 0.0}, 1}, {{0.0, 1.0}, 0}, {{1.0, 0.0}, 0}, {{1.0, 1.0}, 1}};
    EXPECT_DOUBLE_EQ(kernel_regress_2d(t, {1e6, 1e6}, 1e-3), 0.5);
    EXPECT_EQ(code_of([] { kernel_regress_2d({}, {0, 0}, 1.0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { kernel_regress_2d(t, {0, 0}, 0.0); }), ErrorCode::InvalidArgument);
}

TEST(KnnClassify2d, Examples) {
    const std::vector<LabeledEta> t{{{0.0, 0.0}, 1}, {{3.0, 0.0}, 0}, {{0.0, 1.0}, 0}, {{2.0, 2.0}, 1}, {{-1.0, 0.5}, 1}};
    EXPECT_DOUBLE_EQ(knn_classify_2d(t, {7.0, -3.0}, 5), 0.6);
    EXPECT_EQ(knn_classify_2d(t, {3.0, 0.0}, 1), 0.0);
    // Query (0.5, 0.5): squared distances 0.5, 6.5, 0.5, 4.5, 2.25, so the three nearest are 0, 2, 4.
    EXPECT_DOUBLE_EQ(knn_classify_2d(t, {0.5, 0.5}, 3), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(knn_classify_2d(t, {0.5, 0.5}, 3), knn_oracle(t, {0.5, 0.5}, 3));
    EXPECT_EQ(code_of([&] { knn_classify_2d(t, {0, 0}, 6); }), ErrorCode::KTooLarge);
    EXPECT_EQ(code_of([&] { knn_classify_2d(t, {0, 0}, 0); }), ErrorCode::InvalidArgument);
}

TEST(KnnClassify2d, DistanceTiesGoToLowerIndex) {
    const std::vector<LabeledEta> t{{{1.0, 0.0}, 0}, {{-1.0, 0.0}, 1}, {{0.0, 1.0}, 1}, {{0.0, -1.0}, 0}};
    EXPECT_EQ(knn_classify_2d(t, {0.0, 0.0}, 1), 0.0);
    EXPECT_EQ(knn_classify_2d(t, {0.0, 0.0}, 2), 0.5);
    EXPECT_EQ(knn_classify_2d(t, {0.0, 0.0}, 3), 2.0 / 3.0);
}

TEST(SilvermanBandwidth, TwoDimensionalRule) {
    EXPECT_NEAR(silverman_bandwidth(1000, 2), std::pow(1000.0, -1.0 / 6.0), 1e-15);
    EXPECT_NEAR(silverman_bandwidth(1, 1), std::pow(4.0 / 3.0, 0.2), 1e-15);
}

TEST(FitCrossfitPropensity, ConstantEtaGivesTrainingBaseRate) {
    std::mt19937_64 gen(2);
    const Dataset ds = test::random_dataset(gen, 60, 0, 10);
    const CrossFitPlan plan = make_folds(ds, 3, 4);
    const QHatTable q = test::qhat_of(std::vector<double>(60, 1.5), std::vector<double>(60, -2.0));
    // Every training split holds 40 units, so k = 40 reads the whole split.
    for (const PropensitySpec& spec : {PropensitySpec::kernel(), PropensitySpec::knn(40), PropensitySpec::logistic(1.0),
                                       PropensitySpec::gp(), PropensitySpec::logistic(0.0)}) {
        const PropensityTable g = fit_crossfit_propensity(q, ds, plan, spec);
        for (std::size_t j = 0; j < plan.k(); ++j) {
            double treated = 0.0;
            const auto train = plan.complement(j);
            for (std::size_t i : train) treated += ds[i].a;
            const double rate = treated / static_cast<double>(train.size());
            for (std::size_t i : plan.members(j)) EXPECT_NEAR(g.g[i], std::clamp(rate, 0.01, 0.99), 1e-8) << describe(spec);
        }
    }
}

TEST(FitCrossfitPropensity, OneNearestNeighbourMemorizes) {
    std::vector<Unit> units;
    std::vector<EtaPair> eta;
    std::vector<std::size_t> folds;
    for (int copy = 0; copy < 2; ++copy)
        for (int i = 0; i < 10; ++i) {
            units.push_back(test::unit("m" + std::to_string(units.size()), i % 2, 0.0));
            eta.push_back({static_cast<double>(i), static_cast<double>(i * i) / 10.0});
            folds.push_back(static_cast<std::size_t>(copy));
        }
    const Dataset ds(std::move(units));
    QHatTable q;
    q.eta = eta;
    PropensitySpec spec = PropensitySpec::knn(1);
    spec.epsilon_clip = 0.05;
    const PropensityTable g = fit_crossfit_propensity(q, ds, CrossFitPlan(2, folds), spec);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(g.pre_clip[i], static_cast<double>(ds[i].a));
        EXPECT_EQ(g.g[i], ds[i].a == 1 ? 0.95 : 0.05);
    }
    EXPECT_EQ(g.diagnostics.clipped_count, ds.size());
    EXPECT_EQ(g.diagnostics.clipped_fraction, 1.0);
    EXPECT_EQ(g.diagnostics.pre_clip_min, 0.0);
    EXPECT_EQ(g.diagnostics.pre_clip_max, 1.0);
}

TEST(FitCrossfitPropensity, KernelOnOracleEtaRecoversTruePropensity) {
    SimConfig cfg;
    cfg.n = 5000;
    cfg.seed = 12;
    const SimSample s = simulate(cfg);
    QHatTable q;
    for (std::size_t i = 0; i < s.dataset.size(); ++i) q.eta.push_back({s.truth.true_q0[i], s.truth.true_q1[i]});
    const PropensityTable g = fit_crossfit_propensity(q, s.dataset, make_folds(s.dataset, 5, 1), PropensitySpec::kernel());
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) err += std::abs(g.g[i] - cfg.pi(s.truth.c[i]));
    EXPECT_LE(err / static_cast<double>(g.size()), 0.05);
}

TEST(FitCrossfitPropensity, OracleIsClipped) {
    const Dataset ds = test::dataset_of({1, 0, 1, 0}, {0, 0, 0, 0});
    const std::vector<double> truth{0.0, 0.5, 0.999, 0.2};
    const PropensityTable g = fit_crossfit_propensity(test::qhat_of({0, 0, 0, 0}, {0, 0, 0, 0}), ds,
                                                      CrossFitPlan(2, {0, 0, 1, 1}),
                                                      PropensitySpec::from_oracle([&](std::size_t i, const Unit&) {
                                                          return truth[i];
                                                      }));
    EXPECT_EQ(g.pre_clip, truth);
    EXPECT_EQ(g.g, (std::vector<double>{0.01, 0.5, 0.99, 0.2}));
    EXPECT_EQ(g.diagnostics.clipped_count, 2u);
    EXPECT_EQ(g.diagnostics.clipped_fraction, 0.5);
}

TEST(FitCrossfitPropensity, Errors) {
    const Dataset ds = test::dataset_of({1, 0, 1, 0, 0, 0}, {0, 0, 0, 0, 0, 0});
    const QHatTable q = test::qhat_of({0, 1, 2, 3, 4, 5}, {1, 0, 1, 0, 1, 0});
    EXPECT_EQ(code_of([&] { fit_crossfit_propensity(q, ds, CrossFitPlan(2, {0, 1, 0, 1, 1, 1}), PropensitySpec::kernel()); }),
              ErrorCode::DegenerateFold);
    EXPECT_EQ(code_of([&] { fit_crossfit_propensity(test::qhat_of({0}, {0}), ds, CrossFitPlan(2, {0, 1, 0, 1, 0, 1}),
                                                    PropensitySpec::kernel()); }),
              ErrorCode::LengthMismatch);
    PropensitySpec bad = PropensitySpec::kernel();
    bad.epsilon_clip = 0.5;
    EXPECT_EQ(code_of([&] { fit_crossfit_propensity(q, ds, CrossFitPlan(2, {0, 1, 0, 1, 0, 1}), bad); }),
              ErrorCode::ConfigInvalid);
    PropensitySpec unbound;
    unbound.kind = PropensityKind::Oracle;
    EXPECT_EQ(code_of([&] { fit_crossfit_propensity(q, ds, CrossFitPlan(2, {0, 1, 0, 1, 0, 1}), unbound); }),
              ErrorCode::ConfigInvalid);
}

TEST(FitCrossfitPropensity, UnpenalizedLogisticSignalsSeparation) {
    std::vector<Unit> units;
    QHatTable q;
    for (int i = 0; i < 40; ++i) {
        const int a = i % 2;
        units.push_back(test::unit("s" + std::to_string(i), a, 0.0));
        q.eta.push_back({a + 0.01 * i, 0.5 * i});
    }
    const Dataset ds(std::move(units));
    const CrossFitPlan plan = make_folds(ds, 2, 0);
    EXPECT_EQ(code_of([&] { fit_crossfit_propensity(q, ds, plan, PropensitySpec::logistic(0.0)); }),
              ErrorCode::SingularFit);
    EXPECT_NO_THROW(fit_crossfit_propensity(q, ds, plan, PropensitySpec::logistic(1.0)));
}

TEST(FitCrossfitPropensity, RawCovariatesExposeDeterministicTreatment) {
    SimConfig cfg;
    cfg.n = 1000;
    cfg.seed = 3;
    const SimSample s = simulate(cfg);
    const PropensityTable g =
        fit_crossfit_propensity_on_covariates(s.dataset, make_folds(s.dataset, 5, 1), PropensitySpec::knn(1));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < g.size(); ++i) hits += g.pre_clip[i] == static_cast<double>(s.dataset[i].a);
    EXPECT_GT(static_cast<double>(hits) / static_cast<double>(g.size()), 0.95);
}

TEST(PropensitySpecText, ParseAndDescribe) {
    EXPECT_EQ(describe(parse_propensity_spec("kernel")), "kernel:clip=0.01");
    EXPECT_EQ(parse_propensity_spec("knn:k=7").knn_k, 7u);
    EXPECT_EQ(*parse_propensity_spec("kernel:bandwidth=0.3").bandwidth, 0.3);
    EXPECT_EQ(parse_propensity_spec("oracle:path=/tmp/t.json").oracle_path, "/tmp/t.json");
    for (const char* text : {"kernel:bandwidth=0.25,clip=0.05", "knn:k=3,clip=0.01", "logistic:l2=0,clip=0.1",
                             "gp:prior_variance=2,clip=0.01", "oracle:clip=0.02"})
        EXPECT_EQ(describe(parse_propensity_spec(text)), text);
    for (const char* bad : {"svm", "kernel:clip=0.5", "knn:k=0", "kernel:k=3", "gp:prior_variance=0", "logistic:l2=-1"})
        EXPECT_EQ(code_of([&] { parse_propensity_spec(bad); }), ErrorCode::InvalidArgument) << bad;
}

TEST(PropensityProperty, OutputRangeAndDiagnostics) {
    std::mt19937_64 gen(41);
    for (int c = 0; c < test::kCases; ++c) {
        const Dataset ds = test::random_dataset(gen, 30 + gen() % 50, 0, 6);
        const QHatTable q = random_qhat(gen, ds);
        const PropensitySpec spec = random_spec(gen);
        const PropensityTable g = fit_crossfit_propensity(q, ds, make_folds(ds, 2 + gen() % 3, gen()), spec);
        std::size_t clipped = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            EXPECT_GE(g.pre_clip[i], 0.0);
            EXPECT_LE(g.pre_clip[i], 1.0);
            EXPECT_GE(g.g[i], spec.epsilon_clip);
            EXPECT_LE(g.g[i], 1.0 - spec.epsilon_clip);
            if (g.g[i] != g.pre_clip[i]) ++clipped;
        }
        EXPECT_EQ(g.diagnostics.clipped_count, clipped);
        EXPECT_DOUBLE_EQ(g.diagnostics.clipped_fraction, static_cast<double>(clipped) / static_cast<double>(g.size()));
        EXPECT_EQ(g.diagnostics.pre_clip_min, *std::min_element(g.pre_clip.begin(), g.pre_clip.end()));
        EXPECT_EQ(g.diagnostics.pre_clip_max, *std::max_element(g.pre_clip.begin(), g.pre_clip.end()));
    }
}

TEST(PropensityProperty, TrainingOrderDoesNotMatter) {
    std::mt19937_64 gen(42);
    for (int c = 0; c < test::kCases; ++c) {
        std::vector<LabeledEta> t = random_train(gen, 5 + gen() % 40);
        const EtaPair q{std::normal_distribution<double>(0.0, 1.0)(gen), 0.3};
        const std::size_t k = 1 + gen() % t.size();
        const double h = std::uniform_real_distribution<double>(0.1, 2.0)(gen);
        const double kern = kernel_regress_2d(t, q, h);
        const double knn = knn_classify_2d(t, q, k);
        std::shuffle(t.begin(), t.end(), gen);
        EXPECT_NEAR(kernel_regress_2d(t, q, h), kern, 1e-12);
        // Continuous draws: distance ties have probability zero.
        EXPECT_EQ(knn_classify_2d(t, q, k), knn);
        EXPECT_EQ(knn, knn_oracle(t, q, k));
    }
}

TEST(PropensityProperty, LabelFlipSymmetry) {
    std::mt19937_64 gen(43);
    for (int c = 0; c < test::kCases; ++c) {
        const Dataset ds = test::random_dataset(gen, 30 + gen() % 40, 0, 6);
        const QHatTable q = random_qhat(gen, ds);
        const CrossFitPlan plan = make_folds(ds, 2 + gen() % 3, gen());
        const PropensitySpec spec = gen() % 2 ? PropensitySpec::knn(1 + gen() % 8) : PropensitySpec::kernel();
        std::vector<Unit> flipped = ds.units();
        for (Unit& u : flipped) u.a = 1 - u.a;
        const PropensityTable g = fit_crossfit_propensity(q, ds, plan, spec);
        const PropensityTable h = fit_crossfit_propensity(q, Dataset(flipped), plan, spec);
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(h.pre_clip[i], 1.0 - g.pre_clip[i], 1e-12);
    }
}

TEST(PropensityProperty, CrossFitHonesty) {
    std::mt19937_64 gen(44);
    for (int c = 0; c < test::kCases; ++c) {
        const Dataset ds = test::random_dataset(gen, 30 + gen() % 40, 0, 6);
        const QHatTable q = random_qhat(gen, ds);
        const std::size_t k = 2 + gen() % 3;
        const CrossFitPlan plan = make_folds(ds, k, gen());
        const PropensitySpec spec = random_spec(gen);
        const PropensityTable base = fit_crossfit_propensity(q, ds, plan, spec);
        // Flip the labels inside one fold, keeping both arms present overall.
        const std::size_t j = gen() % k;
        std::vector<Unit> units = ds.units();
        for (std::size_t i : plan.members(j)) units[i].a = 1 - units[i].a;
        const PropensityTable moved = fit_crossfit_propensity(q, Dataset(units), plan, spec);
        for (std::size_t i : plan.members(j)) EXPECT_EQ(moved.pre_clip[i], base.pre_clip[i]);
    }
}
