#include "ti/outcome.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "regressors.hpp"
#include "text_io.hpp"
#include "ti/numeric.hpp"
#include "ti/random.hpp"

namespace ti {

OutcomeModelSpec OutcomeModelSpec::ridge(double lambda) {
    OutcomeModelSpec s;
    s.kind = OutcomeModelKind::PerArmRidge;
    s.ridge_lambda = lambda;
    return s;
}

OutcomeModelSpec OutcomeModelSpec::knn(std::size_t k) {
    OutcomeModelSpec s;
    s.kind = OutcomeModelKind::PerArmKnn;
    s.knn_k = k;
    return s;
}

OutcomeModelSpec OutcomeModelSpec::gradient_boost(BoostingParams params) {
    OutcomeModelSpec s;
    s.kind = OutcomeModelKind::PerArmGradientBoost;
    s.boosting = params;
    return s;
}

OutcomeModelSpec OutcomeModelSpec::from_oracle(OutcomeOracle fn) {
    OutcomeModelSpec s;
    s.kind = OutcomeModelKind::Oracle;
    s.oracle = std::move(fn);
    return s;
}

void OutcomeModelSpec::validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, "outcome model: " + msg); };
    if (replicates < 1) bad("replicates must be >= 1");
    switch (kind) {
        case OutcomeModelKind::PerArmRidge:
            if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) bad("ridge lambda must be finite and >= 0");
            break;
        case OutcomeModelKind::PerArmKnn:
            if (knn_k < 1) bad("knn k must be >= 1");
            break;
        case OutcomeModelKind::PerArmGradientBoost:
            if (boosting.trees < 1) bad("trees must be >= 1");
            if (boosting.max_depth < 1) bad("depth must be >= 1");
            if (!(boosting.learning_rate > 0.0) || !std::isfinite(boosting.learning_rate))
                bad("learning rate must be positive");
            if (boosting.min_leaf < 1) bad("min_leaf must be >= 1");
            if (!(boosting.subsample > 0.0 && boosting.subsample <= 1.0)) bad("subsample must be in (0, 1]");
            if (boosting.max_bins < 2 || boosting.max_bins > 65535) bad("bins must be in [2, 65535]");
            break;
        case OutcomeModelKind::Oracle:
            break;
    }
}

OutcomeModelSpec parse_outcome_spec(std::string_view text) {
    const detail::SpecString parsed = detail::parse_spec_string(text);
    OutcomeModelSpec spec;
    if (parsed.name == "ridge")
        spec.kind = OutcomeModelKind::PerArmRidge;
    else if (parsed.name == "knn")
        spec.kind = OutcomeModelKind::PerArmKnn;
    else if (parsed.name == "gbm")
        spec.kind = OutcomeModelKind::PerArmGradientBoost;
    else if (parsed.name == "oracle")
        spec.kind = OutcomeModelKind::Oracle;
    else
        throw Error(ErrorCode::InvalidArgument, "unknown outcome model '" + std::string(parsed.name) + "'");

    for (const auto& [key, value] : parsed.options) {
        const bool ridge = spec.kind == OutcomeModelKind::PerArmRidge;
        const bool knn = spec.kind == OutcomeModelKind::PerArmKnn;
        const bool gbm = spec.kind == OutcomeModelKind::PerArmGradientBoost;
        if (ridge && key == "lambda")
            spec.ridge_lambda = detail::option_double(key, value);
        else if (knn && key == "k")
            spec.knn_k = detail::option_size(key, value);
        else if (gbm && key == "trees")
            spec.boosting.trees = detail::option_size(key, value);
        else if (gbm && key == "depth")
            spec.boosting.max_depth = detail::option_size(key, value);
        else if (gbm && key == "lr")
            spec.boosting.learning_rate = detail::option_double(key, value);
        else if (gbm && key == "min_leaf")
            spec.boosting.min_leaf = detail::option_size(key, value);
        else if (gbm && key == "subsample")
            spec.boosting.subsample = detail::option_double(key, value);
        else if (gbm && key == "bins")
            spec.boosting.max_bins = detail::option_size(key, value);
        else if (!parsed.name.empty() && spec.kind != OutcomeModelKind::Oracle && key == "replicates")
            spec.replicates = detail::option_size(key, value);
        else
            throw Error(ErrorCode::InvalidArgument, "outcome model '" + std::string(parsed.name) +
                                                        "' has no option '" + std::string(key) + "'");
    }
    try {
        spec.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidArgument, e.what());
    }
    return spec;
}

std::string describe(const OutcomeModelSpec& spec) {
    const std::string reps = spec.replicates == 1 ? "" : ",replicates=" + std::to_string(spec.replicates);
    switch (spec.kind) {
        case OutcomeModelKind::PerArmRidge:
            return "ridge:lambda=" + format_double(spec.ridge_lambda) + reps;
        case OutcomeModelKind::PerArmKnn:
            return "knn:k=" + std::to_string(spec.knn_k) + reps;
        case OutcomeModelKind::PerArmGradientBoost: {
            const BoostingParams& b = spec.boosting;
            return "gbm:trees=" + std::to_string(b.trees) + ",depth=" + std::to_string(b.max_depth) +
                   ",lr=" + format_double(b.learning_rate) + ",min_leaf=" + std::to_string(b.min_leaf) +
                   ",subsample=" + format_double(b.subsample) + ",bins=" + std::to_string(b.max_bins) + reps;
        }
        case OutcomeModelKind::Oracle:
            return "oracle";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Cross-fitting

namespace {

template <typename Regressor>
void fit_fold(const Dataset& dataset, const std::vector<std::size_t>& train, const std::vector<std::size_t>& query,
              std::size_t replicates, const std::function<Regressor(std::size_t arm, std::size_t rep)>& make,
              std::vector<EtaPair>& out) {
    const std::size_t d = dataset.dim();
    std::vector<double> query_rows(query.size() * d);
    for (std::size_t q = 0; q < query.size(); ++q)
        std::copy(dataset[query[q]].x.begin(), dataset[query[q]].x.end(),
                  query_rows.begin() + static_cast<std::ptrdiff_t>(q * d));

    for (int arm = 0; arm <= 1; ++arm) {
        std::vector<double> rows;
        std::vector<double> y;
        for (std::size_t i : train) {
            if (dataset[i].a != arm) continue;
            rows.insert(rows.end(), dataset[i].x.begin(), dataset[i].x.end());
            y.push_back(dataset[i].y);
        }
        std::vector<double> sum(query.size(), 0.0);
        for (std::size_t r = 0; r < replicates; ++r) {
            Regressor model = make(static_cast<std::size_t>(arm), r);
            model.fit(rows, d, y);
            for (std::size_t q = 0; q < query.size(); ++q)
                sum[q] += model.predict(std::span<const double>(query_rows).subspan(q * d, d));
        }
        for (std::size_t q = 0; q < query.size(); ++q) {
            const double v = sum[q] / static_cast<double>(replicates);
            if (!std::isfinite(v))
                throw Error(ErrorCode::FitFailure, "outcome model produced a non-finite prediction for unit '" +
                                                       dataset[query[q]].id + "'");
            (arm == 0 ? out[query[q]].q0 : out[query[q]].q1) = v;
        }
    }
}

}  // namespace

QHatTable fit_crossfit_q(const Dataset& dataset, const CrossFitPlan& plan, const OutcomeModelSpec& spec) {
    validate_dataset(dataset);
    spec.validate();
    if (plan.size() != dataset.size())
        throw Error(ErrorCode::LengthMismatch, "fold plan covers " + std::to_string(plan.size()) +
                                                   " units but the dataset has " + std::to_string(dataset.size()));

    QHatTable table;
    table.provenance = QHatProvenance::CrossFitted;
    table.fold_of_origin = plan.assignment();
    table.eta.resize(dataset.size());

    if (spec.kind == OutcomeModelKind::Oracle) {
        if (!spec.oracle) throw Error(ErrorCode::ConfigInvalid, "oracle outcome model has no callback bound");
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            table.eta[i] = spec.oracle(i, dataset[i]);
            if (!std::isfinite(table.eta[i].q0) || !std::isfinite(table.eta[i].q1))
                throw Error(ErrorCode::NonFinite, "oracle returned a non-finite value for unit '" + dataset[i].id + "'");
        }
        return table;
    }

    for (std::size_t j = 0; j < plan.k(); ++j) {
        const std::vector<std::size_t> query = plan.members(j);
        if (query.empty()) continue;
        const std::vector<std::size_t> train = plan.complement(j);
        std::size_t treated = 0;
        for (std::size_t i : train) treated += static_cast<std::size_t>(dataset[i].a);
        if (treated == 0 || treated == train.size())
            throw Error(ErrorCode::DegenerateFold,
                        "training split for fold " + std::to_string(j) + " lacks one treatment arm");

        switch (spec.kind) {
            case OutcomeModelKind::PerArmRidge:
                fit_fold<detail::RidgeRegressor>(
                    dataset, train, query, spec.replicates,
                    [&](std::size_t, std::size_t) { return detail::RidgeRegressor(spec.ridge_lambda); }, table.eta);
                break;
            case OutcomeModelKind::PerArmKnn:
                fit_fold<detail::KnnRegressor>(
                    dataset, train, query, spec.replicates,
                    [&](std::size_t, std::size_t) { return detail::KnnRegressor(spec.knn_k); }, table.eta);
                break;
            case OutcomeModelKind::PerArmGradientBoost:
                fit_fold<detail::GradientBoostedTrees>(
                    dataset, train, query, spec.replicates,
                    [&](std::size_t arm, std::size_t rep) {
                        return detail::GradientBoostedTrees(spec.boosting, derive_seed(spec.seed, {j, arm, rep}));
                    },
                    table.eta);
                break;
            case OutcomeModelKind::Oracle:
                break;
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Q-hat CSV

QHatTable parse_qhat_csv(const Dataset& dataset, std::string_view text) {
    const auto lines = detail::split_lines(text);
    if (lines.empty()) throw Error(ErrorCode::SchemaError, "Q-hat CSV is empty");
    const auto header = detail::split_fields(lines[0]);
    const bool has_fold = header.size() == 4;
    if (!(header.size() == 3 || has_fold) || header[0] != "id" || header[1] != "q0" || header[2] != "q1" ||
        (has_fold && header[3] != "fold"))
        throw Error(ErrorCode::SchemaError, "Q-hat CSV header must be 'id,q0,q1' or 'id,q0,q1,fold'");

    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < dataset.size(); ++i) index.emplace(dataset[i].id, i);

    QHatTable table;
    table.provenance = QHatProvenance::Ingested;
    table.eta.resize(dataset.size());
    std::vector<bool> seen_unit(dataset.size(), false);
    std::vector<std::size_t> folds(has_fold ? dataset.size() : 0, 0);
    std::unordered_set<std::string_view> seen_ids;

    for (std::size_t line_no = 1; line_no < lines.size(); ++line_no) {
        if (lines[line_no].empty()) continue;
        const auto fields = detail::split_fields(lines[line_no]);
        const std::string where = "Q-hat CSV line " + std::to_string(line_no + 1);
        if (fields.size() != header.size())
            throw Error(ErrorCode::SchemaError, where + ": expected " + std::to_string(header.size()) +
                                                    " fields, found " + std::to_string(fields.size()));
        const std::string_view id = fields[0];
        if (id.empty()) throw Error(ErrorCode::SchemaError, where + ": empty id");
        if (!seen_ids.insert(id).second)
            throw Error(ErrorCode::DuplicateId, where + ": duplicate id '" + std::string(id) + "'");
        EtaPair eta;
        if (!parse_double(fields[1], eta.q0) || !parse_double(fields[2], eta.q1))
            throw Error(ErrorCode::SchemaError, where + ": unparseable prediction");
        if (!std::isfinite(eta.q0) || !std::isfinite(eta.q1))
            throw Error(ErrorCode::NonFinite, where + ": non-finite prediction for id '" + std::string(id) + "'");
        std::size_t fold = 0;
        if (has_fold) {
            try {
                fold = detail::option_size("fold", fields[3]);
            } catch (const Error&) {
                throw Error(ErrorCode::SchemaError, where + ": fold must be a non-negative integer");
            }
        }
        const auto it = index.find(id);
        if (it == index.end()) continue;
        table.eta[it->second] = eta;
        seen_unit[it->second] = true;
        if (has_fold) folds[it->second] = fold;
    }
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!seen_unit[i]) throw Error(ErrorCode::MissingId, "Q-hat file has no row for id '" + dataset[i].id + "'");
    if (has_fold) table.fold_of_origin = std::move(folds);
    return table;
}

QHatTable ingest_qhat(const Dataset& dataset, const std::filesystem::path& path) {
    try {
        return parse_qhat_csv(dataset, detail::read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) throw;
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string qhat_to_csv(const Dataset& dataset, const QHatTable& table) {
    if (table.size() != dataset.size())
        throw Error(ErrorCode::LengthMismatch, "Q-hat table and dataset differ in length");
    const bool has_fold = table.fold_of_origin.has_value();
    std::string out = has_fold ? "id,q0,q1,fold\n" : "id,q0,q1\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out += dataset[i].id;
        out += ',';
        out += format_double(table.eta[i].q0);
        out += ',';
        out += format_double(table.eta[i].q1);
        if (has_fold) {
            out += ',';
            out += std::to_string((*table.fold_of_origin)[i]);
        }
        out += '\n';
    }
    return out;
}

void write_qhat_csv(const Dataset& dataset, const QHatTable& table, const std::filesystem::path& path) {
    detail::write_text_file(path, qhat_to_csv(dataset, table));
}

double q_loss(const QHatTable& table, const Dataset& dataset) {
    if (table.size() != dataset.size())
        throw Error(ErrorCode::LengthMismatch, "Q-hat table has " + std::to_string(table.size()) +
                                                   " rows but the dataset has " + std::to_string(dataset.size()));
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no units");
    std::vector<double> sq(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const double pred = dataset[i].a == 1 ? table.eta[i].q1 : table.eta[i].q0;
        const double r = dataset[i].y - pred;
        sq[i] = r * r;
    }
    return mean(sq);
}

}  // namespace ti
