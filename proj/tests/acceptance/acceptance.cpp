// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ti/estimators.hpp"
#include "ti/harness.hpp"
#include "ti/outcome.hpp"
#include "ti/propensity.hpp"
#include "ti/random.hpp"
#include "ti/simulation.hpp"

using namespace ti;

namespace {

const char* const kBudgetGbm = "gbm:trees=25,lr=0.1,depth=3";

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double seconds) {
    char t[32];
    std::snprintf(t, sizeof t, "%.1fs", seconds);
    std::cout << (pass ? "PASS " : "FAIL ") << name << " (" << t << ") " << detail << std::endl;
    if (!pass) ++failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

const CellResult& cell(const std::vector<CellResult>& results, double beta_a, double beta_c, double gamma,
                       EstimatorKind kind) {
    for (const CellResult& c : results)
        if (c.key.beta_a == beta_a && c.key.beta_c == beta_c && c.key.gamma == gamma && c.key.estimator == kind)
            return c;
    throw std::runtime_error("missing cell");
}

template <class F>
void timed(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = false;
    try {
        pass = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    report(name, pass, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// Term-by-term evaluation in long double, independent of the library.
bool influence_algebra(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> real(-5.0, 5.0), prob(0.02, 0.98);
    double worst = 0.0;
    const int cases = 2000;
    for (int c = 0; c < cases; ++c) {
        const std::size_t n = 2 + gen() % 7;
        std::vector<Unit> units(n);
        std::vector<EtaPair> eta(n);
        std::vector<double> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            units[i].id = "u" + std::to_string(i);
            units[i].a = static_cast<int>(gen() % 2);
            units[i].y = real(gen);
            units[i].x = {real(gen)};
            eta[i] = {real(gen), real(gen)};
            g[i] = prob(gen);
        }
        units[0].a = 1;
        units[1].a = 0;
        std::shuffle(units.begin(), units.end(), gen);
        const Dataset ds(units);
        QHatTable q;
        q.eta = eta;

        long double treated = 0;
        for (const Unit& u : units) treated += u.a;
        const long double p = treated / n;
        std::vector<long double> phi(n);
        long double sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const long double resid = static_cast<long double>(units[i].y) - eta[i].q0;
            const long double gi = g[i];
            const long double treated_term = units[i].a * resid / p;
            const long double control_term = gi / (p * (1 - gi)) * (1 - units[i].a) * resid;
            phi[i] = treated_term - control_term;
            sum += phi[i];
        }
        const long double tau = sum / n;

        const InfluenceValues iv = influence_curve(ds, q, g);
        const EffectEstimate e = estimate_tau_ti(ds, q, g, 0.05);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, static_cast<double>(std::fabs(iv.phi[i] - phi[i])));
        worst = std::max(worst, static_cast<double>(std::fabs(e.tau - tau)));
        worst = std::max(worst, static_cast<double>(std::fabs(iv.p_hat - p)));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail = std::to_string(cases) + " instances, max abs diff " + fmt(worst) + " (tol 1e-12), under 1s";
    return worst <= 1e-12 && secs < 1.0;
}

bool oracle_coverage(std::string& detail) {
    ExperimentGrid grid;
    grid.base.n = 5000;
    grid.beta_a = {0.0, 1.0};
    grid.beta_c = {50.0, 100.0};
    grid.gamma = {1.0, 4.0};
    grid.estimators = {EstimatorKind::TiAipwAtt};
    grid.outcome_models = {"oracle"};
    grid.propensity_models = {"oracle"};
    grid.replications = 200;
    grid.base_seed = 101;
    grid.jobs = workers();
    const auto results = run_grid(grid);
    bool pass = results.size() == 8;
    std::ostringstream out;
    out << "coverage per cell in [0.90, 0.98]:";
    for (const CellResult& c : results) {
        const bool ok = c.aggregates.completed == 200 && c.aggregates.coverage >= 0.90 && c.aggregates.coverage <= 0.98;
        pass = pass && ok;
        out << " " << fmt(c.aggregates.coverage);
    }
    detail = out.str();
    return pass;
}

std::vector<CellResult> tabular_grid() {
    ExperimentGrid grid;
    grid.beta_a = {1.0, 0.0};
    grid.beta_c = {50.0, 100.0};
    grid.gamma = {1.0, 4.0};
    grid.estimators = {EstimatorKind::Unadjusted, EstimatorKind::OutcomeOnly, EstimatorKind::TiAipwAtt};
    grid.outcome_models = {kBudgetGbm};
    grid.propensity_models = {"kernel"};
    grid.replications = 100;
    grid.base_seed = 202;
    grid.jobs = workers();
    return run_grid(grid);
}

bool directional(const std::vector<CellResult>& results, std::string& detail) {
    bool pass = true;
    std::ostringstream out;
    out << "beta_c=100 cells (beta_a,gamma: TI bias/Q bias, TI cov/Q cov):";
    for (double beta_a : {1.0, 0.0})
        for (double gamma : {1.0, 4.0}) {
            const auto& ti = cell(results, beta_a, 100.0, gamma, EstimatorKind::TiAipwAtt).aggregates;
            const auto& q = cell(results, beta_a, 100.0, gamma, EstimatorKind::OutcomeOnly).aggregates;
            const bool ok = ti.completed > 0 && q.completed > 0 && ti.mean_abs_bias < q.mean_abs_bias &&
                            ti.coverage >= q.coverage + 0.30;
            pass = pass && ok;
            out << " [" << fmt(beta_a) << "," << fmt(gamma) << ": " << fmt(ti.mean_abs_bias) << "/"
                << fmt(q.mean_abs_bias) << ", " << fmt(ti.coverage) << "/" << fmt(q.coverage) << "]";
        }
    detail = out.str();
    return pass;
}

bool unadjusted_bias(const std::vector<CellResult>& results, std::string& detail) {
    bool pass = true;
    std::ostringstream out;
    out << "(beta_a,gamma: naive bias at 50 -> 100, TI bias at 100):";
    for (double beta_a : {1.0, 0.0})
        for (double gamma : {1.0, 4.0}) {
            const auto& lo = cell(results, beta_a, 50.0, gamma, EstimatorKind::Unadjusted).aggregates;
            const auto& hi = cell(results, beta_a, 100.0, gamma, EstimatorKind::Unadjusted).aggregates;
            const auto& ti = cell(results, beta_a, 100.0, gamma, EstimatorKind::TiAipwAtt).aggregates;
            const bool ok = hi.mean_abs_bias > lo.mean_abs_bias && hi.mean_abs_bias >= 5.0 * ti.mean_abs_bias;
            pass = pass && ok;
            out << " [" << fmt(beta_a) << "," << fmt(gamma) << ": " << fmt(lo.mean_abs_bias) << " -> "
                << fmt(hi.mean_abs_bias) << ", " << fmt(ti.mean_abs_bias) << "]";
        }
    detail = out.str();
    return pass;
}

bool q_loss_diagnostic(std::string& detail) {
    ExperimentGrid grid;
    grid.base.n = 5000;
    grid.beta_a = {1.0};
    grid.beta_c = {50.0};
    grid.gamma = {1.0};
    grid.estimators = {EstimatorKind::TiAipwAtt};
    grid.outcome_models = {"oracle", "oracle:corrupt=0.1", "oracle:corrupt=0.2", "oracle:corrupt=0.3"};
    grid.propensity_models = {"oracle"};
    grid.replications = 50;
    grid.base_seed = 303;
    grid.jobs = workers();
    const auto bins = diagnose_by_q_loss(run_grid(grid), 4);
    int inversions = 0;
    std::ostringstream out;
    out << "coverage by ascending q_loss bin:";
    for (std::size_t b = 0; b < bins.size(); ++b) {
        out << " " << fmt(bins[b].coverage);
        if (b > 0 && bins[b].coverage > bins[b - 1].coverage) ++inversions;
    }
    out << ", inversions " << inversions;
    detail = out.str();
    return bins.size() >= 2 && inversions <= 1;
}

bool overlap_witness(std::string& detail) {
    bool deterministic = true;
    for (std::uint64_t s = 0; s < 10; ++s) {
        SimConfig cfg;
        cfg.seed = s;
        deterministic = deterministic && deterministic_treatment_check(simulate(cfg));
    }
    SimConfig cfg;
    cfg.seed = 404;
    const SimSample s = simulate(cfg);
    const CrossFitPlan plan = make_folds(s.dataset, 5, derive_seed(cfg.seed, {1}));
    const PropensitySpec spec = PropensitySpec::kernel();
    const PropensityTable raw = fit_crossfit_propensity_on_covariates(s.dataset, plan, spec);
    OutcomeModelSpec q_spec = parse_outcome_spec(kBudgetGbm);
    q_spec.seed = derive_seed(cfg.seed, {2});
    const QHatTable q = fit_crossfit_q(s.dataset, plan, q_spec);
    const PropensityTable on_eta = fit_crossfit_propensity(q, s.dataset, plan, spec);
    const double raw_clip = raw.diagnostics.clipped_fraction;
    const double eta_clip = on_eta.diagnostics.clipped_fraction;
    detail = std::string("deterministic check on 10 default sims ") + (deterministic ? "true" : "false") +
             ", clipped on raw X " + fmt(raw_clip) + " (> 0.5), on eta-hat " + fmt(eta_clip) + " (< 0.01)";
    return deterministic && raw_clip > 0.5 && eta_clip < 0.01;
}

bool unit_suites(std::string& detail) {
    std::ifstream in(TI_UNIT_TEST_LIST_FILE);
    std::string path;
    std::size_t total = 0, passed = 0;
    std::string failed;
    while (std::getline(in, path)) {
        if (path.empty()) continue;
        ++total;
        const std::string cmd = "\"" + path + "\" --gtest_brief=1 > /dev/null 2>&1";
        if (std::system(cmd.c_str()) == 0)
            ++passed;
        else
            failed += " " + path.substr(path.find_last_of('/') + 1);
    }
    detail = std::to_string(passed) + "/" + std::to_string(total) + " unit test binaries passed" +
             (failed.empty() ? "" : ", failed:" + failed);
    return total > 0 && passed == total;
}

}  // namespace

int main() {
    timed("influence-curve algebra", influence_algebra);
    timed("oracle coverage", oracle_coverage);

    std::vector<CellResult> tabular;
    const auto t0 = std::chrono::steady_clock::now();
    std::string grid_error;
    try {
        tabular = tabular_grid();
    } catch (const std::exception& e) {
        grid_error = e.what();
    }
    const double grid_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto on_grid = [&](const std::string& name, bool (*check)(const std::vector<CellResult>&, std::string&)) {
        std::string detail = "tabular grid failed: " + grid_error;
        bool pass = false;
        if (grid_error.empty()) {
            try {
                pass = check(tabular, detail);
            } catch (const std::exception& e) {
                detail = std::string("exception: ") + e.what();
            }
        }
        report(name, pass, detail, grid_seconds);
    };
    on_grid("directional tabular reproduction", directional);
    on_grid("unadjusted bias magnitude", unadjusted_bias);

    timed("q_loss diagnostic", q_loss_diagnostic);
    timed("overlap witness", overlap_witness);
    timed("unit and property suites", unit_suites);
    return failures == 0 ? 0 : 1;
}
