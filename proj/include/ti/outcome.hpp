#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ti/core.hpp"

namespace ti {

enum class OutcomeModelKind { PerArmRidge, PerArmKnn, PerArmGradientBoost, Oracle };

struct BoostingParams {
    std::size_t trees = 100;
    std::size_t max_depth = 3;
    double learning_rate = 0.1;
    std::size_t min_leaf = 20;
    /// Row fraction drawn (without replacement) for each tree.
    double subsample = 1.0;
    std::size_t max_bins = 64;
};

/// Returns (Q(0,x), Q(1,x)) for unit `index` of the dataset being fitted.
using OutcomeOracle = std::function<EtaPair(std::size_t index, const Unit& unit)>;

/// Two-headed outcome model: one regressor per arm, both over x.
struct OutcomeModelSpec {
    OutcomeModelKind kind = OutcomeModelKind::PerArmGradientBoost;
    double ridge_lambda = 1.0;
    std::size_t knn_k = 10;
    BoostingParams boosting;
    /// Predictions are averaged over this many independently seeded fits.
    std::size_t replicates = 1;
    std::uint64_t seed = 0;
    OutcomeOracle oracle;

    static OutcomeModelSpec ridge(double lambda);
    static OutcomeModelSpec knn(std::size_t k);
    static OutcomeModelSpec gradient_boost(BoostingParams params = {});
    static OutcomeModelSpec from_oracle(OutcomeOracle fn);

    /// Throws ConfigInvalid. An Oracle spec without a callback is accepted
    /// here (it is bound later) but rejected by fit_crossfit_q.
    void validate() const;
};

/// Parses "ridge[:lambda=L]", "knn[:k=K]",
/// "gbm[:trees=T,depth=D,lr=R,min_leaf=M,subsample=S,bins=B,replicates=N]"
/// and "oracle". Throws InvalidArgument.
OutcomeModelSpec parse_outcome_spec(std::string_view text);
/// Canonical spec string; parse_outcome_spec(describe(s)) reproduces s.
std::string describe(const OutcomeModelSpec& spec);

enum class QHatProvenance { CrossFitted, Ingested };

/// Per-unit predictions aligned with dataset order.
struct QHatTable {
    std::vector<EtaPair> eta;
    QHatProvenance provenance = QHatProvenance::CrossFitted;
    std::optional<std::vector<std::size_t>> fold_of_origin;

    std::size_t size() const { return eta.size(); }
};

/// Cross-fitted per-arm predictions: units in fold j are predicted by
/// regressors trained only on units outside fold j.
/// Throws DegenerateFold, FitFailure, LengthMismatch, ConfigInvalid.
QHatTable fit_crossfit_q(const Dataset& dataset, const CrossFitPlan& plan, const OutcomeModelSpec& spec);

/// Reads a Q-hat CSV (`id,q0,q1[,fold]`) and aligns it with the dataset by id.
/// Rows whose id is not in the dataset are ignored.
/// Throws MissingId, DuplicateId, SchemaError, NonFinite, Io.
QHatTable ingest_qhat(const Dataset& dataset, const std::filesystem::path& path);
QHatTable parse_qhat_csv(const Dataset& dataset, std::string_view text);

std::string qhat_to_csv(const Dataset& dataset, const QHatTable& table);
void write_qhat_csv(const Dataset& dataset, const QHatTable& table, const std::filesystem::path& path);

/// Mean squared factual-arm error (1/n) sum (y_i - qhat_{a_i}(x_i))^2.
double q_loss(const QHatTable& table, const Dataset& dataset);

}  // namespace ti
