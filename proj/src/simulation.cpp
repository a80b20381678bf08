#include "ti/simulation.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <unordered_map>

#include "json.hpp"
#include "text_io.hpp"
#include "ti/random.hpp"

namespace ti {

void SimConfig::validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, "simulation: " + msg); };
    auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!open_unit(pi0) || !open_unit(pi1)) bad("pi0 and pi1 must be in (0, 1)");
    if (!open_unit(pc)) bad("pc must be in (0, 1)");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) bad("gamma must be positive");
    if (!std::isfinite(beta_a) || !std::isfinite(beta_c)) bad("beta_a and beta_c must be finite");
    if (n < 10) bad("n must be at least 10");
    if (d_signal < 1) bad("d_signal must be at least 1");
}

SimSample simulate(const SimConfig& config) {
    config.validate();
    SimSample sample;
    sample.config = config;
    const double bo = config.beta_o();
    // eta = (Q0, Q1) identifies C only when the confounding term varies with C.
    const bool eta_separates_c = config.beta_c * (config.pi1 - config.pi0) != 0.0;

    Rng rng(config.seed);
    auto jit = [&]() { return config.jitter ? rng.uniform(-0.5, 0.5) : 0.0; };

    std::vector<Unit> units(config.n);
    SimTruth& truth = sample.truth;
    truth.beta_a = config.beta_a;
    truth.ids.resize(config.n);
    truth.c.resize(config.n);
    truth.true_q0.resize(config.n);
    truth.true_q1.resize(config.n);
    truth.true_g.resize(config.n);

    for (std::size_t i = 0; i < config.n; ++i) {
        Unit& u = units[i];
        const int c = rng.bernoulli(config.pc) ? 1 : 0;
        const int a = rng.bernoulli(config.pi(c)) ? 1 : 0;
        u.id = "u" + std::to_string(i);
        u.a = a;
        u.x.reserve(config.dim());
        for (std::size_t k = 0; k < config.d_signal; ++k) u.x.push_back((2.0 * a - 1.0) + jit());
        const double pair_code = -0.75 + 0.5 * (2 * a + c);
        for (std::size_t k = 0; k < config.d_signal; ++k) u.x.push_back(pair_code + jit());
        for (std::size_t k = 0; k < config.d_signal; ++k) u.x.push_back((2.0 * c - 1.0) + jit());
        for (std::size_t k = 0; k < config.d_noise; ++k) u.x.push_back(rng.normal());

        const double confounding = config.beta_c * (config.pi(c) - bo);
        u.y = config.beta_a * a + confounding + config.gamma * rng.normal();

        truth.ids[i] = u.id;
        truth.c[i] = c;
        truth.true_q0[i] = confounding;
        truth.true_q1[i] = config.beta_a + confounding;
        truth.true_g[i] = eta_separates_c ? config.pi(c) : bo;
    }
    sample.dataset = Dataset(std::move(units));
    return sample;
}

int decode_treatment(std::span<const double> x, std::size_t d_signal) {
    double s = 0.0;
    for (std::size_t k = 0; k < d_signal && k < x.size(); ++k) s += x[k];
    return s > 0.0 ? 1 : 0;
}

bool deterministic_treatment_check(const SimSample& sample) {
    const Dataset& ds = sample.dataset;
    const std::size_t d = sample.config.d_signal;
    const std::size_t n = ds.size();
    const std::size_t n_train = (8 * n + 9) / 10;
    if (n_train == 0 || n_train >= n) return false;

    auto nearest_label = [&](const Unit& query) {
        double best = std::numeric_limits<double>::infinity();
        int label = 0;
        for (std::size_t t = 0; t < n_train; ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = ds[t].x[k] - query.x[k];
                s += diff * diff;
            }
            if (s < best) {
                best = s;
                label = ds[t].a;
            }
        }
        return label;
    };

    for (std::size_t i = 0; i < n_train; ++i)
        if (nearest_label(ds[i]) != ds[i].a) return false;
    std::size_t correct = 0;
    for (std::size_t i = n_train; i < n; ++i) correct += nearest_label(ds[i]) == ds[i].a ? 1 : 0;
    return static_cast<double>(correct) >= 0.999 * static_cast<double>(n - n_train);
}

OutcomeOracle truth_outcome_oracle(const SimTruth& truth) {
    auto shared = std::make_shared<const SimTruth>(truth);
    return [shared](std::size_t i, const Unit&) { return EtaPair{shared->true_q0.at(i), shared->true_q1.at(i)}; };
}

PropensityOracle truth_propensity_oracle(const SimTruth& truth) {
    auto shared = std::make_shared<const SimTruth>(truth);
    return [shared](std::size_t i, const Unit&) { return shared->true_g.at(i); };
}

std::string truth_to_json(const SimSample& sample) {
    const SimConfig& c = sample.config;
    nlohmann::ordered_json j;
    j["beta_a"] = c.beta_a;
    j["beta_c"] = c.beta_c;
    j["beta_o"] = c.beta_o();
    j["gamma"] = c.gamma;
    j["pi0"] = c.pi0;
    j["pi1"] = c.pi1;
    j["pc"] = c.pc;
    j["n"] = c.n;
    j["d_signal"] = c.d_signal;
    j["d_noise"] = c.d_noise;
    j["jitter"] = c.jitter;
    j["seed"] = c.seed;
    j["ids"] = sample.truth.ids;
    j["c"] = sample.truth.c;
    j["true_q0"] = sample.truth.true_q0;
    j["true_q1"] = sample.truth.true_q1;
    j["true_g"] = sample.truth.true_g;
    return j.dump() + "\n";
}

SimTruth parse_truth_json(std::string_view text) {
    SimTruth t;
    try {
        const auto j = nlohmann::json::parse(text);
        t.beta_a = j.at("beta_a").get<double>();
        t.ids = j.at("ids").get<std::vector<std::string>>();
        t.c = j.at("c").get<std::vector<int>>();
        t.true_q0 = j.at("true_q0").get<std::vector<double>>();
        t.true_q1 = j.at("true_q1").get<std::vector<double>>();
        t.true_g = j.at("true_g").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaError, std::string("truth JSON: ") + ex.what());
    }
    const std::size_t n = t.ids.size();
    if (t.c.size() != n || t.true_q0.size() != n || t.true_q1.size() != n || t.true_g.size() != n)
        throw Error(ErrorCode::SchemaError, "truth JSON: per-unit arrays differ in length");
    return t;
}

void write_truth_json(const SimSample& sample, const std::filesystem::path& path) {
    detail::write_text_file(path, truth_to_json(sample));
}

SimTruth read_truth_json(const std::filesystem::path& path) {
    try {
        return parse_truth_json(detail::read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) throw;
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

SimTruth align_truth(const SimTruth& truth, const Dataset& dataset) {
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < truth.ids.size(); ++i) index.emplace(truth.ids[i], i);
    SimTruth out;
    out.beta_a = truth.beta_a;
    for (const Unit& u : dataset.units()) {
        const auto it = index.find(u.id);
        if (it == index.end()) throw Error(ErrorCode::MissingId, "truth has no entry for id '" + u.id + "'");
        const std::size_t k = it->second;
        out.ids.push_back(u.id);
        out.c.push_back(truth.c[k]);
        out.true_q0.push_back(truth.true_q0[k]);
        out.true_q1.push_back(truth.true_q1[k]);
        out.true_g.push_back(truth.true_g[k]);
    }
    return out;
}

}  // namespace ti
