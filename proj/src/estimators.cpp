#include "ti/estimators.hpp"

#include <cmath>

#include "json.hpp"
#include "ti/numeric.hpp"

namespace ti {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be in (0, 1)");
}

void check_lengths(const Dataset& dataset, std::size_t other, const char* what) {
    if (other != dataset.size())
        throw Error(ErrorCode::LengthMismatch, std::string(what) + " has " + std::to_string(other) +
                                                   " entries but the dataset has " + std::to_string(dataset.size()));
}

void check_propensity(const Dataset& dataset, std::span<const double> g) {
    check_lengths(dataset, g.size(), "propensity table");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) throw Error(ErrorCode::NonFinite, "non-finite propensity for unit '" + dataset[i].id + "'");
        if (!(g[i] > 0.0 && g[i] < 1.0))
            throw Error(ErrorCode::PropensityAtBoundary,
                        "propensity " + format_double(g[i]) + " for unit '" + dataset[i].id + "' is not inside (0, 1)");
    }
}

double treated_fraction(const Dataset& dataset) {
    return static_cast<double>(dataset.n_treated()) / static_cast<double>(dataset.size());
}

EffectEstimate finish(EstimatorKind kind, const Dataset& dataset, double tau, double se, double alpha) {
    EffectEstimate e;
    e.kind = kind;
    e.tau = tau;
    e.se = se;
    e.alpha = alpha;
    const double half = se > 0.0 ? two_sided_z(alpha) * se : 0.0;
    e.ci_low = tau - half;
    e.ci_high = tau + half;
    e.n = dataset.size();
    e.n1 = dataset.n_treated();
    e.p_hat = treated_fraction(dataset);
    return e;
}

/// tau = mean(score), se = sd(score) / sqrt(n).
EffectEstimate from_score(EstimatorKind kind, const Dataset& dataset, std::vector<double> score, double alpha) {
    const double tau = mean(score);
    const double se = sample_sd(score) / std::sqrt(static_cast<double>(score.size()));
    EffectEstimate e = finish(kind, dataset, tau, se, alpha);
    e.influence = std::move(score);
    return e;
}

}  // namespace

EffectEstimate estimate_unadjusted(const Dataset& dataset, double alpha) {
    check_alpha(alpha);
    validate_dataset(dataset);
    std::vector<double> y1, y0;
    for (const Unit& u : dataset.units()) (u.a == 1 ? y1 : y0).push_back(u.y);
    const double tau = mean(y1) - mean(y0);
    const double se = std::sqrt(sample_variance(y1) / static_cast<double>(y1.size()) +
                                sample_variance(y0) / static_cast<double>(y0.size()));
    return finish(EstimatorKind::Unadjusted, dataset, tau, se, alpha);
}

EffectEstimate estimate_tau_q(const Dataset& dataset, const QHatTable& qhat, double alpha) {
    check_alpha(alpha);
    validate_dataset(dataset);
    check_lengths(dataset, qhat.size(), "Q-hat table");
    std::vector<double> diffs;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (dataset[i].a == 1) diffs.push_back(qhat.eta[i].q1 - qhat.eta[i].q0);
    if (diffs.size() < 2) throw Error(ErrorCode::ArmTooSmall, "outcome-only estimator needs at least 2 treated units");
    const double tau = mean(diffs);
    const double se = std::sqrt(sample_variance(diffs) / static_cast<double>(diffs.size()));
    return finish(EstimatorKind::OutcomeOnly, dataset, tau, se, alpha);
}

InfluenceValues influence_curve(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g) {
    validate_dataset(dataset);
    check_lengths(dataset, qhat.size(), "Q-hat table");
    check_propensity(dataset, g);
    InfluenceValues out;
    out.p_hat = treated_fraction(dataset);
    const double p = out.p_hat;
    out.phi.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Unit& u = dataset[i];
        const double resid = u.y - qhat.eta[i].q0;
        out.phi[i] = u.a == 1 ? resid / p : -g[i] / (p * (1.0 - g[i])) * resid;
    }
    return out;
}

InfluenceValues influence_curve(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g) {
    return influence_curve(dataset, qhat, std::span<const double>(g.g));
}

EffectEstimate estimate_tau_ti(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g,
                               double alpha) {
    check_alpha(alpha);
    InfluenceValues inf = influence_curve(dataset, qhat, g);
    const double tau = mean(inf.phi);
    std::vector<double> centered(inf.phi.size());
    for (std::size_t i = 0; i < centered.size(); ++i)
        centered[i] = inf.phi[i] - (dataset[i].a == 1 ? tau / inf.p_hat : 0.0);
    const double se = sample_sd(centered) / std::sqrt(static_cast<double>(centered.size()));
    EffectEstimate e = finish(EstimatorKind::TiAipwAtt, dataset, tau, se, alpha);
    e.influence = std::move(inf.phi);
    return e;
}

EffectEstimate estimate_tau_ti(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g,
                               double alpha) {
    EffectEstimate e = estimate_tau_ti(dataset, qhat, std::span<const double>(g.g), alpha);
    e.clipped_fraction = g.diagnostics.clipped_fraction;
    return e;
}

EffectEstimate estimate_ate_aipw(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g,
                                 double alpha) {
    check_alpha(alpha);
    validate_dataset(dataset);
    check_lengths(dataset, qhat.size(), "Q-hat table");
    check_propensity(dataset, g);
    std::vector<double> psi(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Unit& u = dataset[i];
        const EtaPair& q = qhat.eta[i];
        psi[i] = q.q1 - q.q0 + (u.a == 1 ? (u.y - q.q1) / g[i] : -(u.y - q.q0) / (1.0 - g[i]));
    }
    return from_score(EstimatorKind::AteAipw, dataset, std::move(psi), alpha);
}

EffectEstimate estimate_ate_aipw(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g,
                                 double alpha) {
    EffectEstimate e = estimate_ate_aipw(dataset, qhat, std::span<const double>(g.g), alpha);
    e.clipped_fraction = g.diagnostics.clipped_fraction;
    return e;
}

EffectEstimate estimate_ate_iptw(const Dataset& dataset, std::span<const double> g, double alpha) {
    check_alpha(alpha);
    validate_dataset(dataset);
    check_propensity(dataset, g);
    std::vector<double> psi(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Unit& u = dataset[i];
        psi[i] = u.a == 1 ? u.y / g[i] : -u.y / (1.0 - g[i]);
    }
    return from_score(EstimatorKind::AteIptw, dataset, std::move(psi), alpha);
}

EffectEstimate estimate_ate_iptw(const Dataset& dataset, const PropensityTable& g, double alpha) {
    EffectEstimate e = estimate_ate_iptw(dataset, std::span<const double>(g.g), alpha);
    e.clipped_fraction = g.diagnostics.clipped_fraction;
    return e;
}

EffectEstimate run_estimator(EstimatorKind kind, const Dataset& dataset, const QHatTable* qhat,
                             const PropensityTable* g, double alpha) {
    auto need = [&](bool ok, const char* what) {
        if (!ok)
            throw Error(ErrorCode::InvalidArgument,
                        std::string(to_string(kind)) + " requires " + what);
    };
    switch (kind) {
        case EstimatorKind::Unadjusted:
            return estimate_unadjusted(dataset, alpha);
        case EstimatorKind::OutcomeOnly:
            need(qhat != nullptr, "outcome predictions");
            return estimate_tau_q(dataset, *qhat, alpha);
        case EstimatorKind::TiAipwAtt:
            need(qhat != nullptr && g != nullptr, "outcome predictions and propensities");
            return estimate_tau_ti(dataset, *qhat, *g, alpha);
        case EstimatorKind::AteAipw:
            need(qhat != nullptr && g != nullptr, "outcome predictions and propensities");
            return estimate_ate_aipw(dataset, *qhat, *g, alpha);
        case EstimatorKind::AteIptw:
            need(g != nullptr, "propensities");
            return estimate_ate_iptw(dataset, *g, alpha);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown estimator kind");
}

std::string effect_estimate_to_json(const EffectEstimate& e, int indent) {
    nlohmann::ordered_json j;
    j["kind"] = std::string(to_string(e.kind));
    j["tau"] = e.tau;
    j["se"] = e.se;
    j["ci"] = {e.ci_low, e.ci_high};
    j["alpha"] = e.alpha;
    j["n"] = e.n;
    j["n1"] = e.n1;
    j["p_hat"] = e.p_hat;
    j["clipped_fraction"] = e.clipped_fraction ? nlohmann::ordered_json(*e.clipped_fraction) : nullptr;
    return j.dump(indent);
}

EffectEstimate effect_estimate_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EffectEstimate e;
        e.kind = parse_estimator_kind(j.at("kind").get<std::string>());
        e.tau = j.at("tau").get<double>();
        e.se = j.at("se").get<double>();
        const auto& ci = j.at("ci");
        if (!ci.is_array() || ci.size() != 2) throw Error(ErrorCode::SchemaError, "'ci' must be a two-element array");
        e.ci_low = ci[0].get<double>();
        e.ci_high = ci[1].get<double>();
        e.alpha = j.at("alpha").get<double>();
        e.n = j.at("n").get<std::size_t>();
        e.n1 = j.at("n1").get<std::size_t>();
        e.p_hat = j.at("p_hat").get<double>();
        if (j.contains("clipped_fraction") && !j.at("clipped_fraction").is_null())
            e.clipped_fraction = j.at("clipped_fraction").get<double>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaError, std::string("effect estimate JSON: ") + ex.what());
    }
}

}  // namespace ti
