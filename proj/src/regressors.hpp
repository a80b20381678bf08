#pragma once

// Tabular regressors behind the per-arm outcome contract. Inputs are
// row-major matrices (n rows of `dim` values).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ti/numeric.hpp"
#include "ti/outcome.hpp"

namespace ti::detail {

class RidgeRegressor {
public:
    explicit RidgeRegressor(double lambda) : lambda_(lambda) {}

    /// Standardizes columns on the training rows; the intercept is not
    /// penalized. Throws FitFailure when the system is singular.
    void fit(std::span<const double> rows, std::size_t dim, std::span<const double> y);
    double predict(std::span<const double> x) const;

private:
    double lambda_;
    std::size_t dim_ = 0;
    Standardizer scaler_;
    std::vector<std::size_t> active_;
    std::vector<double> coef_;
    double intercept_ = 0.0;
};

/// k-nearest-neighbour mean on standardized covariates. Distance ties go to
/// the lower training index; k is clamped to the training size.
class KnnRegressor {
public:
    explicit KnnRegressor(std::size_t k) : k_(k) {}

    void fit(std::span<const double> rows, std::size_t dim, std::span<const double> y);
    double predict(std::span<const double> x) const;

private:
    std::size_t k_;
    std::size_t dim_ = 0;
    Standardizer scaler_;
    std::vector<double> train_;
    std::vector<double> y_;
};

/// Least-squares gradient boosting with depth-limited histogram trees.
class GradientBoostedTrees {
public:
    GradientBoostedTrees(BoostingParams params, std::uint64_t seed) : params_(params), seed_(seed) {}

    void fit(std::span<const double> rows, std::size_t dim, std::span<const double> y);
    double predict(std::span<const double> x) const;
    std::size_t tree_count() const { return roots_.size(); }

private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
        double value = 0.0;
    };

    BoostingParams params_;
    std::uint64_t seed_;
    double base_ = 0.0;
    std::vector<Node> nodes_;
    std::vector<std::size_t> roots_;
};

}  // namespace ti::detail
