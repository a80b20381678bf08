#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ti/error.hpp"

namespace ti {

/// One observational unit: binary treatment, real outcome, covariates.
struct Unit {
    std::string id;
    int a = 0;
    double y = 0.0;
    std::vector<double> x;
};

/// Ordered sample of units. Construction does not validate; call
/// validate_dataset (every pipeline entry point does).
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Unit> units);

    const std::vector<Unit>& units() const { return units_; }
    const Unit& operator[](std::size_t i) const { return units_[i]; }
    std::size_t size() const { return units_.size(); }
    bool empty() const { return units_.empty(); }

    /// Covariate dimension of the first unit (0 when empty).
    std::size_t dim() const { return units_.empty() ? 0 : units_.front().x.size(); }
    std::size_t n_treated() const;
    std::size_t n_control() const { return size() - n_treated(); }

    std::vector<double> outcomes() const;
    std::vector<int> treatments() const;
    /// Row-major n x dim copy of the covariates.
    std::vector<double> covariate_rows() const;

private:
    std::vector<Unit> units_;
};

/// Throws Error naming the first violated invariant:
/// EmptyDataset, InvalidTreatment, SingleArm, NonFinite or RaggedCovariates.
void validate_dataset(const Dataset& dataset);

/// Assignment of every unit to one of k folds.
class CrossFitPlan {
public:
    CrossFitPlan() = default;
    /// Throws InvalidArgument if k < 2 or any entry is outside [0, k).
    CrossFitPlan(std::size_t k, std::vector<std::size_t> assignment);

    std::size_t k() const { return k_; }
    std::size_t size() const { return assignment_.size(); }
    std::size_t fold_of(std::size_t unit) const { return assignment_[unit]; }
    const std::vector<std::size_t>& assignment() const { return assignment_; }

    /// Unit indices in fold j, ascending.
    std::vector<std::size_t> members(std::size_t fold) const;
    /// Unit indices outside fold j, ascending.
    std::vector<std::size_t> complement(std::size_t fold) const;

    bool operator==(const CrossFitPlan&) const = default;

private:
    std::size_t k_ = 0;
    std::vector<std::size_t> assignment_;
};

/// Treatment-stratified K-fold plan. Treated and control units are shuffled
/// separately and dealt round-robin, so fold sizes differ by at most one and
/// every fold holds both arms. Throws ArmTooSmall if an arm has < k units.
CrossFitPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

/// The two-dimensional representation (Q(0,x), Q(1,x)).
struct EtaPair {
    double q0 = 0.0;
    double q1 = 0.0;

    bool operator==(const EtaPair&) const = default;
};

enum class EstimatorKind { Unadjusted, OutcomeOnly, TiAipwAtt, AteAipw, AteIptw };

std::string_view to_string(EstimatorKind kind);
/// Accepts the canonical names plus the short alias "ti".
EstimatorKind parse_estimator_kind(std::string_view name);
std::vector<EstimatorKind> parse_estimator_list(std::string_view comma_separated);

struct EffectEstimate {
    EstimatorKind kind = EstimatorKind::Unadjusted;
    double tau = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double alpha = 0.05;
    std::vector<double> influence;
    double p_hat = 0.0;
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::optional<double> clipped_fraction;

    bool covers(double truth) const { return ci_low <= truth && truth <= ci_high; }
};

/// Reads the dataset CSV (`id,a,y,x0,...,x{d-1}`). Throws SchemaError,
/// NonFinite, InvalidTreatment, DuplicateId or Io.
Dataset read_dataset_csv(const std::filesystem::path& path);
Dataset parse_dataset_csv(std::string_view text);
void write_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);
std::string dataset_to_csv(const Dataset& dataset);

}  // namespace ti
