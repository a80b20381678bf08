#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ti/core.hpp"
#include "ti/outcome.hpp"
#include "ti/propensity.hpp"

namespace ti {

struct InfluenceValues {
    std::vector<double> phi;
    double p_hat = 0.0;
};

/// Difference of arm means with the unpooled two-sample standard error.
EffectEstimate estimate_unadjusted(const Dataset& dataset, double alpha);

/// Mean of q1 - q0 over treated units; se^2 = sample variance of those
/// differences / n1. Throws ArmTooSmall when n1 < 2.
EffectEstimate estimate_tau_q(const Dataset& dataset, const QHatTable& qhat, double alpha);

/// phi_i = a_i (y_i - q0_i) / p - g_i / (p (1 - g_i)) (1 - a_i)(y_i - q0_i)
/// with p the treated fraction. Reads q0 only.
/// Throws PropensityAtBoundary, LengthMismatch.
InfluenceValues influence_curve(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g);
InfluenceValues influence_curve(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g);

/// ATT AIPTW: tau = mean(phi), se = sd(phi_i - a_i tau / p) / sqrt(n).
EffectEstimate estimate_tau_ti(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g, double alpha);
EffectEstimate estimate_tau_ti(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g,
                               double alpha);

/// Doubly robust ATE score q1 - q0 + a(y - q1)/g - (1 - a)(y - q0)/(1 - g).
EffectEstimate estimate_ate_aipw(const Dataset& dataset, const QHatTable& qhat, const PropensityTable& g,
                                 double alpha);
EffectEstimate estimate_ate_aipw(const Dataset& dataset, const QHatTable& qhat, std::span<const double> g,
                                 double alpha);

/// Horvitz-Thompson ATE score a y / g - (1 - a) y / (1 - g).
EffectEstimate estimate_ate_iptw(const Dataset& dataset, const PropensityTable& g, double alpha);
EffectEstimate estimate_ate_iptw(const Dataset& dataset, std::span<const double> g, double alpha);

/// Runs one estimator; `qhat` and `g` may be null for kinds that do not
/// need them. Throws InvalidArgument when a required input is missing.
EffectEstimate run_estimator(EstimatorKind kind, const Dataset& dataset, const QHatTable* qhat,
                             const PropensityTable* g, double alpha);

/// {kind, tau, se, ci: [low, high], alpha, n, n1, p_hat, clipped_fraction}.
/// Influence values are not serialized.
std::string effect_estimate_to_json(const EffectEstimate& estimate, int indent = -1);
EffectEstimate effect_estimate_from_json(std::string_view text);

}  // namespace ti
