#include "ti/propensity.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "text_io.hpp"
#include "ti/numeric.hpp"

namespace ti {

PropensitySpec PropensitySpec::kernel(std::optional<double> bandwidth) {
    PropensitySpec s;
    s.kind = PropensityKind::KernelRegression;
    s.bandwidth = bandwidth;
    return s;
}

PropensitySpec PropensitySpec::knn(std::size_t k) {
    PropensitySpec s;
    s.kind = PropensityKind::Knn;
    s.knn_k = k;
    return s;
}

PropensitySpec PropensitySpec::logistic(double l2) {
    PropensitySpec s;
    s.kind = PropensityKind::Logistic;
    s.logistic_l2 = l2;
    return s;
}

PropensitySpec PropensitySpec::gp(double prior_variance) {
    PropensitySpec s;
    s.kind = PropensityKind::GpDotProductWhite;
    s.gp_prior_variance = prior_variance;
    return s;
}

PropensitySpec PropensitySpec::from_oracle(PropensityOracle fn) {
    PropensitySpec s;
    s.kind = PropensityKind::Oracle;
    s.oracle = std::move(fn);
    return s;
}

void PropensitySpec::validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, "propensity model: " + msg); };
    if (!(epsilon_clip > 0.0 && epsilon_clip < 0.5)) bad("clip epsilon must be in (0, 0.5)");
    switch (kind) {
        case PropensityKind::Knn:
            if (knn_k < 1) bad("knn k must be >= 1");
            break;
        case PropensityKind::KernelRegression:
            if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth))) bad("bandwidth must be positive");
            break;
        case PropensityKind::Logistic:
            if (!(logistic_l2 >= 0.0) || !std::isfinite(logistic_l2)) bad("l2 must be finite and >= 0");
            break;
        case PropensityKind::GpDotProductWhite:
            if (!(gp_prior_variance > 0.0) || !std::isfinite(gp_prior_variance)) bad("prior variance must be positive");
            break;
        case PropensityKind::Oracle:
            break;
    }
}

PropensitySpec parse_propensity_spec(std::string_view text) {
    const detail::SpecString parsed = detail::parse_spec_string(text);
    PropensitySpec spec;
    if (parsed.name == "kernel")
        spec.kind = PropensityKind::KernelRegression;
    else if (parsed.name == "knn")
        spec.kind = PropensityKind::Knn;
    else if (parsed.name == "logistic")
        spec.kind = PropensityKind::Logistic;
    else if (parsed.name == "gp")
        spec.kind = PropensityKind::GpDotProductWhite;
    else if (parsed.name == "oracle")
        spec.kind = PropensityKind::Oracle;
    else
        throw Error(ErrorCode::InvalidArgument, "unknown propensity model '" + std::string(parsed.name) + "'");

    for (const auto& [key, value] : parsed.options) {
        if (key == "clip")
            spec.epsilon_clip = detail::option_double(key, value);
        else if (spec.kind == PropensityKind::KernelRegression && key == "bandwidth")
            spec.bandwidth = detail::option_double(key, value);
        else if (spec.kind == PropensityKind::Knn && key == "k")
            spec.knn_k = detail::option_size(key, value);
        else if (spec.kind == PropensityKind::Logistic && key == "l2")
            spec.logistic_l2 = detail::option_double(key, value);
        else if (spec.kind == PropensityKind::GpDotProductWhite && key == "prior_variance")
            spec.gp_prior_variance = detail::option_double(key, value);
        else if (spec.kind == PropensityKind::Oracle && key == "path")
            spec.oracle_path = std::string(value);
        else
            throw Error(ErrorCode::InvalidArgument, "propensity model '" + std::string(parsed.name) +
                                                        "' has no option '" + std::string(key) + "'");
    }
    try {
        spec.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidArgument, e.what());
    }
    return spec;
}

std::string describe(const PropensitySpec& spec) {
    const std::string clip = "clip=" + format_double(spec.epsilon_clip);
    switch (spec.kind) {
        case PropensityKind::KernelRegression:
            return spec.bandwidth ? "kernel:bandwidth=" + format_double(*spec.bandwidth) + "," + clip
                                  : "kernel:" + clip;
        case PropensityKind::Knn:
            return "knn:k=" + std::to_string(spec.knn_k) + "," + clip;
        case PropensityKind::Logistic:
            return "logistic:l2=" + format_double(spec.logistic_l2) + "," + clip;
        case PropensityKind::GpDotProductWhite:
            return "gp:prior_variance=" + format_double(spec.gp_prior_variance) + "," + clip;
        case PropensityKind::Oracle:
            return spec.oracle_path.empty() ? "oracle:" + clip : "oracle:path=" + spec.oracle_path + "," + clip;
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Classifiers on row-major feature matrices

namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

double kernel_regress(std::span<const double> rows, std::size_t d, std::span<const int> labels, const double* query,
                      double bandwidth) {
    const double scale = -0.5 / (bandwidth * bandwidth);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double w = std::exp(scale * squared_distance(rows.data() + i * d, query, d));
        den += w;
        if (labels[i] == 1) num += w;
    }
    if (den > 0.0) return num / den;
    double treated = 0.0;
    for (int a : labels) treated += a;
    return treated / static_cast<double>(labels.size());
}

double knn_fraction(std::span<const double> rows, std::size_t d, std::span<const int> labels, const double* query,
                    std::size_t k) {
    const std::size_t n = labels.size();
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = {squared_distance(rows.data() + i * d, query, d), i};
    // Lexicographic (distance, index) order breaks ties toward the lower index.
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    std::size_t treated = 0;
    for (std::size_t i = 0; i < k; ++i) treated += static_cast<std::size_t>(labels[dist[i].second]);
    return static_cast<double>(treated) / static_cast<double>(k);
}

double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double bernoulli_loglik(std::span<const double> logits, std::span<const int> labels, double scale) {
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        s += labels[i] == 1 ? log_sigmoid(scale * logits[i]) : log_sigmoid(-scale * logits[i]);
    return s;
}

/// Penalized linear-logit fit by Newton-Raphson with step halving. Columns
/// that are constant on the training rows are dropped; the intercept is
/// never penalized.
class LinearLogit {
public:
    void fit(std::span<const double> rows, std::size_t d, std::span<const int> labels, double l2) {
        const std::size_t n = labels.size();
        active_.clear();
        for (std::size_t j = 0; j < d; ++j) {
            bool constant = true;
            for (std::size_t i = 1; i < n && constant; ++i) constant = rows[i * d + j] == rows[j];
            if (!constant) active_.push_back(j);
        }
        const auto p = static_cast<Eigen::Index>(active_.size() + 1);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
        Eigen::VectorXd y(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            x(r, 0) = 1.0;
            for (std::size_t c = 0; c < active_.size(); ++c)
                x(r, static_cast<Eigen::Index>(c + 1)) = rows[i * d + active_[c]];
            y(r) = labels[i];
        }
        Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, l2);
        penalty(0) = 0.0;

        const double rate = y.mean();
        if (rate <= 0.0 || rate >= 1.0)
            throw Error(ErrorCode::SingularFit, "logistic fit: training labels contain a single class");
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        beta(0) = std::log(rate / (1.0 - rate));

        auto objective = [&](const Eigen::VectorXd& b) {
            const Eigen::VectorXd eta = x * b;
            double s = 0.0;
            for (Eigen::Index i = 0; i < eta.size(); ++i)
                s += y(i) > 0.5 ? log_sigmoid(eta(i)) : log_sigmoid(-eta(i));
            return s - 0.5 * (penalty.array() * b.array().square()).sum();
        };

        double current = objective(beta);
        bool converged = false;
        for (int iter = 0; iter < 200 && !converged; ++iter) {
            const Eigen::VectorXd eta = x * beta;
            Eigen::VectorXd mu(eta.size());
            Eigen::VectorXd w(eta.size());
            for (Eigen::Index i = 0; i < eta.size(); ++i) {
                mu(i) = sigmoid(eta(i));
                w(i) = mu(i) * (1.0 - mu(i));
            }
            const Eigen::VectorXd grad = x.transpose() * (y - mu) - penalty.cwiseProduct(beta);
            Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x;
            hess.diagonal() += penalty;
            Eigen::LLT<Eigen::MatrixXd> llt(hess);
            if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14))
                throw Error(ErrorCode::SingularFit,
                            "logistic fit: information matrix is singular (separable data without penalty?)");
            const Eigen::VectorXd step = llt.solve(grad);
            double t = 1.0;
            Eigen::VectorXd next = beta + step;
            double value = objective(next);
            for (int h = 0; h < 40 && !(value >= current); ++h) {
                t *= 0.5;
                next = beta + t * step;
                value = objective(next);
            }
            if (!(value >= current)) break;
            converged = (t * step).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + beta.cwiseAbs().maxCoeff()) ||
                        value - current < 1e-13 * (1.0 + std::abs(current));
            beta = next;
            current = value;
        }
        if (!converged) throw Error(ErrorCode::SingularFit, "logistic fit did not converge");
        const double max_logit = (x * beta).cwiseAbs().maxCoeff();
        if (l2 == 0.0 && max_logit > 30.0)
            throw Error(ErrorCode::SingularFit, "logistic fit: the classes are separable and the fit is unpenalized");
        coef_.assign(beta.data(), beta.data() + beta.size());
    }

    double logit(const double* row) const {
        double s = coef_[0];
        for (std::size_t c = 0; c < active_.size(); ++c) s += coef_[c + 1] * row[active_[c]];
        return s;
    }

private:
    std::vector<std::size_t> active_;
    std::vector<double> coef_;
};

/// Learned white-noise variance s >= 0 for the probit-style moderation
/// p = sigmoid(mu / sqrt(1 + pi s / 8)), chosen to maximize the training
/// log-likelihood. s = 0 is always a candidate.
double fit_white_noise(std::span<const double> logits, std::span<const int> labels) {
    auto scale_of = [](double s) { return 1.0 / std::sqrt(1.0 + std::numbers::pi * s / 8.0); };
    auto score = [&](double s) { return bernoulli_loglik(logits, labels, scale_of(s)); };

    double best_s = 0.0;
    double best = score(0.0);
    double best_log = -4.0;
    for (double e = -3.0; e <= 4.0 + 1e-9; e += 0.25) {
        const double v = score(std::pow(10.0, e));
        if (v > best) {
            best = v;
            best_s = std::pow(10.0, e);
            best_log = e;
        }
    }
    if (best_s == 0.0) return 0.0;

    double lo = best_log - 0.25;
    double hi = best_log + 0.25;
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - ratio * (hi - lo);
    double x2 = lo + ratio * (hi - lo);
    double f1 = score(std::pow(10.0, x1));
    double f2 = score(std::pow(10.0, x2));
    for (int it = 0; it < 60; ++it) {
        if (f1 >= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = score(std::pow(10.0, x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = score(std::pow(10.0, x2));
        }
    }
    const double mid = 0.5 * (lo + hi);
    if (score(std::pow(10.0, mid)) > best) return std::pow(10.0, mid);
    return best_s;
}

PropensityTable crossfit(std::span<const double> features, std::size_t d, const Dataset& dataset,
                         const CrossFitPlan& plan, const PropensitySpec& spec) {
    validate_dataset(dataset);
    spec.validate();
    const std::size_t n = dataset.size();
    if (plan.size() != n)
        throw Error(ErrorCode::LengthMismatch, "fold plan covers " + std::to_string(plan.size()) +
                                                   " units but the dataset has " + std::to_string(n));

    PropensityTable table;
    table.spec = spec;
    table.pre_clip.assign(n, 0.0);

    if (spec.kind == PropensityKind::Oracle) {
        if (!spec.oracle) throw Error(ErrorCode::ConfigInvalid, "oracle propensity has no callback bound");
        for (std::size_t i = 0; i < n; ++i) {
            const double g = spec.oracle(i, dataset[i]);
            if (!std::isfinite(g) || g < 0.0 || g > 1.0)
                throw Error(ErrorCode::NonFinite, "oracle propensity for unit '" + dataset[i].id + "' is not in [0, 1]");
            table.pre_clip[i] = g;
        }
    } else {
        for (std::size_t j = 0; j < plan.k(); ++j) {
            const std::vector<std::size_t> query = plan.members(j);
            if (query.empty()) continue;
            const std::vector<std::size_t> train = plan.complement(j);

            std::vector<double> raw(train.size() * d);
            std::vector<int> labels(train.size());
            std::size_t treated = 0;
            for (std::size_t t = 0; t < train.size(); ++t) {
                std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(train[t] * d), d,
                            raw.begin() + static_cast<std::ptrdiff_t>(t * d));
                labels[t] = dataset[train[t]].a;
                treated += static_cast<std::size_t>(labels[t]);
            }
            if (treated == 0 || treated == train.size())
                throw Error(ErrorCode::DegenerateFold,
                            "training split for fold " + std::to_string(j) + " lacks one treatment arm");

            const Standardizer scaler(raw, d);
            const std::vector<double> rows = scaler.transform(raw);
            std::vector<double> q(d);

            std::vector<double> logits;
            LinearLogit model;
            double moderation = 1.0;
            if (spec.kind == PropensityKind::Logistic || spec.kind == PropensityKind::GpDotProductWhite) {
                const double l2 =
                    spec.kind == PropensityKind::Logistic ? spec.logistic_l2 : 1.0 / spec.gp_prior_variance;
                model.fit(rows, d, labels, l2);
                if (spec.kind == PropensityKind::GpDotProductWhite) {
                    logits.resize(train.size());
                    for (std::size_t t = 0; t < train.size(); ++t) logits[t] = model.logit(rows.data() + t * d);
                    const double s = fit_white_noise(logits, labels);
                    moderation = 1.0 / std::sqrt(1.0 + std::numbers::pi * s / 8.0);
                }
            }
            const double h = spec.bandwidth ? *spec.bandwidth : silverman_bandwidth(train.size(), d);
            const std::size_t k = std::min(spec.knn_k, train.size());

            for (std::size_t i : query) {
                scaler.apply(features.subspan(i * d, d), q);
                double p = 0.0;
                switch (spec.kind) {
                    case PropensityKind::KernelRegression: p = kernel_regress(rows, d, labels, q.data(), h); break;
                    case PropensityKind::Knn: p = knn_fraction(rows, d, labels, q.data(), k); break;
                    case PropensityKind::Logistic:
                    case PropensityKind::GpDotProductWhite: p = sigmoid(moderation * model.logit(q.data())); break;
                    case PropensityKind::Oracle: break;
                }
                table.pre_clip[i] = p;
            }
        }
    }

    const double eps = spec.epsilon_clip;
    table.g.resize(n);
    table.diagnostics.pre_clip_min = *std::min_element(table.pre_clip.begin(), table.pre_clip.end());
    table.diagnostics.pre_clip_max = *std::max_element(table.pre_clip.begin(), table.pre_clip.end());
    for (std::size_t i = 0; i < n; ++i) {
        const double p = table.pre_clip[i];
        if (p < eps || p > 1.0 - eps) ++table.diagnostics.clipped_count;
        table.g[i] = std::clamp(p, eps, 1.0 - eps);
    }
    table.diagnostics.clipped_fraction = static_cast<double>(table.diagnostics.clipped_count) / static_cast<double>(n);
    return table;
}

}  // namespace

double kernel_regress_2d(std::span<const LabeledEta> train, EtaPair query, double bandwidth) {
    if (train.empty()) throw Error(ErrorCode::InvalidArgument, "kernel regression needs training points");
    if (!(bandwidth > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
    std::vector<double> rows(train.size() * 2);
    std::vector<int> labels(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        rows[2 * i] = train[i].eta.q0;
        rows[2 * i + 1] = train[i].eta.q1;
        labels[i] = train[i].a;
    }
    const double q[2] = {query.q0, query.q1};
    return kernel_regress(rows, 2, labels, q, bandwidth);
}

double knn_classify_2d(std::span<const LabeledEta> train, EtaPair query, std::size_t k) {
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (k > train.size())
        throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds the " +
                                              std::to_string(train.size()) + " training points");
    std::vector<double> rows(train.size() * 2);
    std::vector<int> labels(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        rows[2 * i] = train[i].eta.q0;
        rows[2 * i + 1] = train[i].eta.q1;
        labels[i] = train[i].a;
    }
    const double q[2] = {query.q0, query.q1};
    return knn_fraction(rows, 2, labels, q, k);
}

double silverman_bandwidth(std::size_t n, std::size_t d) {
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "bandwidth rule needs n >= 1");
    const double dd = static_cast<double>(d);
    return std::pow(4.0 / (dd + 2.0), 1.0 / (dd + 4.0)) * std::pow(static_cast<double>(n), -1.0 / (dd + 4.0));
}

PropensityTable fit_crossfit_propensity(const QHatTable& qhat, const Dataset& dataset, const CrossFitPlan& plan,
                                        const PropensitySpec& spec) {
    if (qhat.size() != dataset.size())
        throw Error(ErrorCode::LengthMismatch, "Q-hat table has " + std::to_string(qhat.size()) +
                                                   " rows but the dataset has " + std::to_string(dataset.size()));
    std::vector<double> features(qhat.size() * 2);
    for (std::size_t i = 0; i < qhat.size(); ++i) {
        features[2 * i] = qhat.eta[i].q0;
        features[2 * i + 1] = qhat.eta[i].q1;
    }
    return crossfit(features, 2, dataset, plan, spec);
}

PropensityTable fit_crossfit_propensity_on_covariates(const Dataset& dataset, const CrossFitPlan& plan,
                                                      const PropensitySpec& spec) {
    validate_dataset(dataset);
    const std::vector<double> features = dataset.covariate_rows();
    return crossfit(features, dataset.dim(), dataset, plan, spec);
}

}  // namespace ti
