#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ti/core.hpp"
#include "ti/outcome.hpp"
#include "ti/propensity.hpp"

namespace ti {

/// Semi-synthetic design: C ~ Bern(pc), A ~ Bern(pi(C)),
/// Y = beta_a A + beta_c (pi(C) - beta_o) + gamma N(0, 1).
/// Covariates are four blocks: X_A (encodes A), X_{A and Z} (encodes the
/// pair (A, C)), X_Z (encodes C), then pure-noise dimensions.
struct SimConfig {
    double beta_a = 1.0;
    double beta_c = 50.0;
    double gamma = 1.0;
    double pi0 = 0.8;
    double pi1 = 0.6;
    double pc = 0.5;
    std::size_t n = 10685;
    std::size_t d_signal = 4;
    std::size_t d_noise = 4;
    /// Uniform[-0.5, 0.5] jitter on the block codes.
    bool jitter = true;
    std::uint64_t seed = 0;

    double beta_o() const { return pi0 * (1.0 - pc) + pi1 * pc; }
    double pi(int c) const { return c == 1 ? pi1 : pi0; }
    std::size_t dim() const { return 3 * d_signal + d_noise; }

    /// Throws ConfigInvalid.
    void validate() const;
};

struct SimTruth {
    double beta_a = 0.0;
    std::vector<std::string> ids;
    std::vector<int> c;
    std::vector<double> true_q0;
    std::vector<double> true_q1;
    /// Pr(A = 1 | eta(X)); pi(C) when eta separates the confounder levels.
    std::vector<double> true_g;
};

struct SimSample {
    SimConfig config;
    Dataset dataset;
    SimTruth truth;
};

SimSample simulate(const SimConfig& config);

/// Sign of the X_A block mean.
int decode_treatment(std::span<const double> x, std::size_t d_signal);

/// True when 1-NN on the X_A block reproduces A exactly on the first
/// ceil(0.8 n) units and with accuracy >= 0.999 on the rest.
bool deterministic_treatment_check(const SimSample& sample);

/// Oracles that read the truth by dataset index.
OutcomeOracle truth_outcome_oracle(const SimTruth& truth);
PropensityOracle truth_propensity_oracle(const SimTruth& truth);

/// Truth sidecar: {beta_a, config fields, ids, c, true_q0, true_q1, true_g}.
std::string truth_to_json(const SimSample& sample);
SimTruth parse_truth_json(std::string_view text);
void write_truth_json(const SimSample& sample, const std::filesystem::path& path);
SimTruth read_truth_json(const std::filesystem::path& path);

/// Reorders a truth table to match the dataset by id.
/// Throws MissingId, LengthMismatch.
SimTruth align_truth(const SimTruth& truth, const Dataset& dataset);

}  // namespace ti
