#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ti {

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// length of the input, so results are bit-stable for a given order.
double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);

/// Sample variance with the n-1 denominator; 0 for fewer than two values.
double sample_variance(std::span<const double> values);

double sample_sd(std::span<const double> values);

/// Standard normal quantile (Wichura AS241, ~1e-16 relative accuracy).
/// Requires 0 < p < 1.
double normal_quantile(double p);

/// z_{1-alpha/2} for a two-sided interval at level alpha.
double two_sided_z(double alpha);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Strict decimal parse of a full field; returns false on trailing junk.
bool parse_double(std::string_view text, double& out);

/// Per-column affine standardization fitted on a row-major matrix.
/// Columns with zero spread are centered but not scaled.
class Standardizer {
public:
    Standardizer() = default;
    Standardizer(std::span<const double> rows, std::size_t dim);

    std::size_t dim() const { return center_.size(); }
    void apply(std::span<const double> in, std::span<double> out) const;
    std::vector<double> transform(std::span<const double> rows) const;
    /// True when column j had zero spread on the fitted rows.
    bool constant_column(std::size_t j) const { return constant_[j]; }

private:
    std::vector<double> center_;
    std::vector<double> scale_;
    std::vector<bool> constant_;
};

}  // namespace ti
