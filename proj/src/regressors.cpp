#include "regressors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "ti/error.hpp"
#include "ti/random.hpp"

namespace ti::detail {

// ---------------------------------------------------------------------------
// Ridge

void RidgeRegressor::fit(std::span<const double> rows, std::size_t dim, std::span<const double> y) {
    const std::size_t n = y.size();
    if (n == 0) throw Error(ErrorCode::FitFailure, "ridge: empty training set");
    dim_ = dim;
    scaler_ = Standardizer(rows, dim);
    intercept_ = mean(y);

    active_.clear();
    for (std::size_t j = 0; j < dim; ++j)
        if (!scaler_.constant_column(j)) active_.push_back(j);
    const std::size_t p = active_.size();
    coef_.assign(p, 0.0);
    if (p == 0) return;

    Eigen::MatrixXd z(n, p);
    std::vector<double> buf(dim);
    for (std::size_t i = 0; i < n; ++i) {
        scaler_.apply(rows.subspan(i * dim, dim), buf);
        for (std::size_t c = 0; c < p; ++c) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = buf[active_[c]];
    }
    Eigen::VectorXd yc(n);
    for (std::size_t i = 0; i < n; ++i) yc(static_cast<Eigen::Index>(i)) = y[i] - intercept_;

    Eigen::MatrixXd gram = z.transpose() * z;
    gram.diagonal().array() += lambda_;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-12))
        throw Error(ErrorCode::FitFailure, "ridge: normal equations are singular (increase lambda)");
    const Eigen::VectorXd beta = llt.solve(z.transpose() * yc);
    for (std::size_t c = 0; c < p; ++c) coef_[c] = beta(static_cast<Eigen::Index>(c));
}

double RidgeRegressor::predict(std::span<const double> x) const {
    std::vector<double> buf(dim_);
    scaler_.apply(x, buf);
    double out = intercept_;
    for (std::size_t c = 0; c < active_.size(); ++c) out += coef_[c] * buf[active_[c]];
    return out;
}

// ---------------------------------------------------------------------------
// k-NN

void KnnRegressor::fit(std::span<const double> rows, std::size_t dim, std::span<const double> y) {
    if (y.empty()) throw Error(ErrorCode::FitFailure, "knn: empty training set");
    dim_ = dim;
    scaler_ = Standardizer(rows, dim);
    train_ = scaler_.transform(rows);
    y_.assign(y.begin(), y.end());
}

double KnnRegressor::predict(std::span<const double> x) const {
    const std::size_t n = y_.size();
    const std::size_t k = std::min(k_, n);
    std::vector<double> q(dim_);
    scaler_.apply(x, q);

    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            const double diff = train_[i * dim_ + j] - q[j];
            s += diff * diff;
        }
        dist[i] = {s, i};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += y_[dist[i].second];
    return s / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Gradient boosting

namespace {

/// Split thresholds for one feature: midpoints between distinct values at
/// (approximate) quantile positions. bin(x) = #thresholds < x, so
/// x <= thresholds[s] exactly when bin(x) <= s.
std::vector<double> feature_thresholds(std::vector<double> values, std::size_t max_bins) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> thresholds;
    if (values.size() < 2) return thresholds;
    if (values.size() <= max_bins) {
        for (std::size_t i = 0; i + 1 < values.size(); ++i) thresholds.push_back(0.5 * (values[i] + values[i + 1]));
        return thresholds;
    }
    for (std::size_t b = 1; b < max_bins; ++b) {
        const std::size_t pos = b * values.size() / max_bins;
        if (pos == 0 || pos >= values.size()) continue;
        const double t = 0.5 * (values[pos - 1] + values[pos]);
        if (thresholds.empty() || t > thresholds.back()) thresholds.push_back(t);
    }
    return thresholds;
}

}  // namespace

void GradientBoostedTrees::fit(std::span<const double> rows, std::size_t dim, std::span<const double> y) {
    const std::size_t n = y.size();
    if (n == 0) throw Error(ErrorCode::FitFailure, "boosting: empty training set");
    nodes_.clear();
    roots_.clear();
    base_ = mean(y);

    // Binned copy of the training matrix, column-major.
    std::vector<std::vector<double>> thresholds(dim);
    std::vector<std::uint16_t> bins(n * dim);
    std::vector<std::size_t> bin_count(dim);
    {
        std::vector<double> column(n);
        for (std::size_t j = 0; j < dim; ++j) {
            for (std::size_t i = 0; i < n; ++i) column[i] = rows[i * dim + j];
            thresholds[j] = feature_thresholds(column, std::max<std::size_t>(params_.max_bins, 2));
            bin_count[j] = thresholds[j].size() + 1;
            const auto& t = thresholds[j];
            for (std::size_t i = 0; i < n; ++i)
                bins[j * n + i] =
                    static_cast<std::uint16_t>(std::lower_bound(t.begin(), t.end(), column[i]) - t.begin());
        }
    }

    std::vector<double> prediction(n, base_);
    std::vector<double> residual(n);
    std::vector<std::size_t> sample(n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rng(seed_);

    const std::size_t min_leaf = std::max<std::size_t>(params_.min_leaf, 1);
    std::vector<double> hist_sum;
    std::vector<std::size_t> hist_cnt;

    struct Pending {
        std::size_t node;
        std::size_t begin;
        std::size_t end;
        std::size_t depth;
    };

    for (std::size_t t = 0; t < params_.trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - prediction[i];

        sample = all;
        std::size_t m = n;
        if (params_.subsample < 1.0) {
            rng.shuffle(std::span<std::size_t>(sample));
            m = std::max<std::size_t>(1, static_cast<std::size_t>(params_.subsample * static_cast<double>(n)));
            sample.resize(m);
            std::sort(sample.begin(), sample.end());
        }

        const std::size_t root = nodes_.size();
        nodes_.emplace_back();
        roots_.push_back(root);
        std::vector<Pending> stack{{root, 0, m, 0}};

        while (!stack.empty()) {
            const Pending cur = stack.back();
            stack.pop_back();
            const std::size_t count = cur.end - cur.begin;
            double total = 0.0;
            for (std::size_t p = cur.begin; p < cur.end; ++p) total += residual[sample[p]];

            int best_feature = -1;
            std::size_t best_split = 0;
            double best_gain = 0.0;
            if (cur.depth < params_.max_depth && count >= 2 * min_leaf) {
                const double parent_score = total * total / static_cast<double>(count);
                for (std::size_t j = 0; j < dim; ++j) {
                    const std::size_t nb = bin_count[j];
                    if (nb < 2) continue;
                    hist_sum.assign(nb, 0.0);
                    hist_cnt.assign(nb, 0);
                    const std::uint16_t* col = bins.data() + j * n;
                    for (std::size_t p = cur.begin; p < cur.end; ++p) {
                        const std::size_t i = sample[p];
                        hist_sum[col[i]] += residual[i];
                        ++hist_cnt[col[i]];
                    }
                    double left_sum = 0.0;
                    std::size_t left_cnt = 0;
                    for (std::size_t s = 0; s + 1 < nb; ++s) {
                        left_sum += hist_sum[s];
                        left_cnt += hist_cnt[s];
                        if (hist_cnt[s] == 0) continue;
                        if (left_cnt < min_leaf) continue;
                        const std::size_t right_cnt = count - left_cnt;
                        if (right_cnt < min_leaf) break;
                        const double right_sum = total - left_sum;
                        const double gain = left_sum * left_sum / static_cast<double>(left_cnt) +
                                            right_sum * right_sum / static_cast<double>(right_cnt) - parent_score;
                        if (gain > best_gain * (1.0 + 1e-12) + 1e-12) {
                            best_gain = gain;
                            best_feature = static_cast<int>(j);
                            best_split = s;
                        }
                    }
                }
            }

            if (best_feature < 0) {
                nodes_[cur.node].value = params_.learning_rate * total / static_cast<double>(count);
                continue;
            }

            const std::uint16_t* col = bins.data() + static_cast<std::size_t>(best_feature) * n;
            const auto mid = std::stable_partition(
                sample.begin() + static_cast<std::ptrdiff_t>(cur.begin),
                sample.begin() + static_cast<std::ptrdiff_t>(cur.end),
                [&](std::size_t i) { return col[i] <= best_split; });
            const std::size_t split_at = static_cast<std::size_t>(mid - sample.begin());

            const std::size_t left = nodes_.size();
            nodes_.emplace_back();
            const std::size_t right = nodes_.size();
            nodes_.emplace_back();
            Node& node = nodes_[cur.node];
            node.feature = best_feature;
            node.threshold = thresholds[static_cast<std::size_t>(best_feature)][best_split];
            node.left = left;
            node.right = right;
            stack.push_back({right, split_at, cur.end, cur.depth + 1});
            stack.push_back({left, cur.begin, split_at, cur.depth + 1});
        }

        // Advance predictions for every training row, not just the subsample.
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t idx = root;
            while (nodes_[idx].feature >= 0) {
                const Node& node = nodes_[idx];
                const std::size_t j = static_cast<std::size_t>(node.feature);
                const std::size_t s = static_cast<std::size_t>(
                    std::lower_bound(thresholds[j].begin(), thresholds[j].end(), node.threshold) -
                    thresholds[j].begin());
                idx = bins[j * n + i] <= s ? node.left : node.right;
            }
            prediction[i] += nodes_[idx].value;
        }
    }
}

double GradientBoostedTrees::predict(std::span<const double> x) const {
    double out = base_;
    for (std::size_t root : roots_) {
        std::size_t idx = root;
        while (nodes_[idx].feature >= 0) {
            const Node& node = nodes_[idx];
            idx = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
        }
        out += nodes_[idx].value;
    }
    return out;
}

}  // namespace ti::detail
