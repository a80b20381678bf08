#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ti/core.hpp"
#include "ti/outcome.hpp"

namespace ti {

enum class PropensityKind { Knn, KernelRegression, Logistic, GpDotProductWhite, Oracle };

/// Known Pr(A=1 | unit) for simulation runs; never fitted.
using PropensityOracle = std::function<double(std::size_t index, const Unit& unit)>;

struct PropensitySpec {
    PropensityKind kind = PropensityKind::KernelRegression;
    std::size_t knn_k = 100;
    /// Kernel bandwidth on standardized features; Silverman's rule when unset.
    std::optional<double> bandwidth;
    double logistic_l2 = 1e-4;
    /// Prior variance of the linear-logit slopes for GpDotProductWhite.
    double gp_prior_variance = 1.0;
    double epsilon_clip = 0.01;
    PropensityOracle oracle;
    /// Where an oracle is loaded from (truth JSON); informational.
    std::string oracle_path;

    static PropensitySpec kernel(std::optional<double> bandwidth = std::nullopt);
    static PropensitySpec knn(std::size_t k);
    static PropensitySpec logistic(double l2);
    static PropensitySpec gp(double prior_variance = 1.0);
    static PropensitySpec from_oracle(PropensityOracle fn);

    /// Throws ConfigInvalid.
    void validate() const;
};

/// Parses "kernel[:bandwidth=H]", "knn[:k=K]", "logistic[:l2=L]",
/// "gp[:prior_variance=V]" and "oracle[:path=P]"; every kind also takes
/// "clip=E". Throws InvalidArgument.
PropensitySpec parse_propensity_spec(std::string_view text);
std::string describe(const PropensitySpec& spec);

struct PropensityDiagnostics {
    double pre_clip_min = 0.0;
    double pre_clip_max = 0.0;
    std::size_t clipped_count = 0;
    double clipped_fraction = 0.0;
};

struct PropensityTable {
    std::vector<double> g;
    std::vector<double> pre_clip;
    PropensitySpec spec;
    PropensityDiagnostics diagnostics;

    std::size_t size() const { return g.size(); }
};

struct LabeledEta {
    EtaPair eta;
    int a = 0;
};

/// Nadaraya-Watson estimate with a Gaussian kernel:
/// sum w_i a_i / sum w_i, w_i = exp(-|eta_i - query|^2 / (2 h^2)).
/// Falls back to the training mean when every weight underflows.
double kernel_regress_2d(std::span<const LabeledEta> train, EtaPair query, double bandwidth);

/// Treated fraction among the k nearest training points (Euclidean on eta,
/// distance ties to the lower index). Throws KTooLarge, InvalidArgument.
double knn_classify_2d(std::span<const LabeledEta> train, EtaPair query, std::size_t k);

/// Normal-reference bandwidth for standardized d-dimensional data:
/// (4 / (d + 2))^(1/(d+4)) * n^(-1/(d+4)).
double silverman_bandwidth(std::size_t n, std::size_t d);

/// Cross-fitted propensity on the standardized eta-hat representation.
/// Units in fold j are scored by a classifier trained outside fold j.
/// Throws DegenerateFold, SingularFit, LengthMismatch, ConfigInvalid.
PropensityTable fit_crossfit_propensity(const QHatTable& qhat, const Dataset& dataset, const CrossFitPlan& plan,
                                        const PropensitySpec& spec);

/// Same procedure on the raw covariates instead of eta-hat. Diagnostic only:
/// it exposes the overlap violation that the representation removes.
PropensityTable fit_crossfit_propensity_on_covariates(const Dataset& dataset, const CrossFitPlan& plan,
                                                      const PropensitySpec& spec);

}  // namespace ti
