#include "ti/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "text_io.hpp"
#include "ti/numeric.hpp"
#include "ti/random.hpp"

namespace ti {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::SingleArm: return "SingleArm";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::RaggedCovariates: return "RaggedCovariates";
        case ErrorCode::InvalidTreatment: return "InvalidTreatment";
        case ErrorCode::ArmTooSmall: return "ArmTooSmall";
        case ErrorCode::DegenerateFold: return "DegenerateFold";
        case ErrorCode::FitFailure: return "FitFailure";
        case ErrorCode::SingularFit: return "SingularFit";
        case ErrorCode::MissingId: return "MissingId";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::PropensityAtBoundary: return "PropensityAtBoundary";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::TooFewReplications: return "TooFewReplications";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

bool is_numeric_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::FitFailure:
        case ErrorCode::SingularFit:
        case ErrorCode::PropensityAtBoundary:
        case ErrorCode::DegenerateFold:
        case ErrorCode::TooFewReplications:
            return true;
        default:
            return false;
    }
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<Unit> units) : units_(std::move(units)) {}

std::size_t Dataset::n_treated() const {
    return static_cast<std::size_t>(
        std::count_if(units_.begin(), units_.end(), [](const Unit& u) { return u.a == 1; }));
}

std::vector<double> Dataset::outcomes() const {
    std::vector<double> y(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) y[i] = units_[i].y;
    return y;
}

std::vector<int> Dataset::treatments() const {
    std::vector<int> a(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) a[i] = units_[i].a;
    return a;
}

std::vector<double> Dataset::covariate_rows() const {
    const std::size_t d = dim();
    std::vector<double> rows(units_.size() * d);
    for (std::size_t i = 0; i < units_.size(); ++i)
        std::copy(units_[i].x.begin(), units_[i].x.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * d));
    return rows;
}

void validate_dataset(const Dataset& dataset) {
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no units");
    const std::size_t d = dataset.dim();
    std::size_t treated = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Unit& u = dataset[i];
        if (u.a != 0 && u.a != 1)
            throw Error(ErrorCode::InvalidTreatment,
                        "unit '" + u.id + "' has treatment " + std::to_string(u.a) + " (expected 0 or 1)");
        treated += static_cast<std::size_t>(u.a);
    }
    if (treated == 0 || treated == dataset.size())
        throw Error(ErrorCode::SingleArm, "dataset contains only one treatment arm");
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Unit& u = dataset[i];
        if (!std::isfinite(u.y)) throw Error(ErrorCode::NonFinite, "unit '" + u.id + "' has non-finite outcome");
        for (double v : u.x)
            if (!std::isfinite(v))
                throw Error(ErrorCode::NonFinite, "unit '" + u.id + "' has a non-finite covariate");
        if (u.x.size() != d)
            throw Error(ErrorCode::RaggedCovariates, "unit '" + u.id + "' has " + std::to_string(u.x.size()) +
                                                         " covariates, expected " + std::to_string(d));
    }
}

// ---------------------------------------------------------------------------
// Fold planning

CrossFitPlan::CrossFitPlan(std::size_t k, std::vector<std::size_t> assignment)
    : k_(k), assignment_(std::move(assignment)) {
    if (k_ < 2) throw Error(ErrorCode::InvalidArgument, "fold count must be at least 2");
    for (std::size_t f : assignment_)
        if (f >= k_) throw Error(ErrorCode::InvalidArgument, "fold index out of range");
}

std::vector<std::size_t> CrossFitPlan::members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i)
        if (assignment_[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> CrossFitPlan::complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i)
        if (assignment_[i] != fold) out.push_back(i);
    return out;
}

CrossFitPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw Error(ErrorCode::InvalidArgument, "fold count must be at least 2");
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no units");

    std::vector<std::size_t> treated, control;
    for (std::size_t i = 0; i < dataset.size(); ++i) (dataset[i].a == 1 ? treated : control).push_back(i);
    if (treated.size() < k || control.size() < k)
        throw Error(ErrorCode::ArmTooSmall, "each arm needs at least " + std::to_string(k) + " units (treated " +
                                                std::to_string(treated.size()) + ", control " +
                                                std::to_string(control.size()) + ")");
    validate_dataset(dataset);

    Rng rng(derive_seed(seed, {0x666f6c64}));
    rng.shuffle(std::span<std::size_t>(treated));
    rng.shuffle(std::span<std::size_t>(control));

    std::vector<std::size_t> assignment(dataset.size());
    std::size_t slot = 0;
    for (std::size_t i : treated) assignment[i] = slot++ % k;
    // Controls continue where the treated deal stopped so fold sizes stay balanced.
    for (std::size_t i : control) assignment[i] = slot++ % k;
    return CrossFitPlan(k, std::move(assignment));
}

// ---------------------------------------------------------------------------
// Estimator kinds

std::string_view to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::Unadjusted: return "unadjusted";
        case EstimatorKind::OutcomeOnly: return "outcome_only";
        case EstimatorKind::TiAipwAtt: return "ti_aipw_att";
        case EstimatorKind::AteAipw: return "ate_aipw";
        case EstimatorKind::AteIptw: return "ate_iptw";
    }
    return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
    name = detail::trim(name);
    if (name == "unadjusted" || name == "naive") return EstimatorKind::Unadjusted;
    if (name == "outcome_only" || name == "q") return EstimatorKind::OutcomeOnly;
    if (name == "ti_aipw_att" || name == "ti") return EstimatorKind::TiAipwAtt;
    if (name == "ate_aipw") return EstimatorKind::AteAipw;
    if (name == "ate_iptw") return EstimatorKind::AteIptw;
    throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + std::string(name) + "'");
}

std::vector<EstimatorKind> parse_estimator_list(std::string_view comma_separated) {
    std::vector<EstimatorKind> kinds;
    for (std::string_view field : detail::split_fields(comma_separated)) {
        if (detail::trim(field).empty()) continue;
        const EstimatorKind kind = parse_estimator_kind(field);
        if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
    }
    if (kinds.empty()) throw Error(ErrorCode::InvalidArgument, "no estimators requested");
    return kinds;
}

// ---------------------------------------------------------------------------
// Dataset CSV

Dataset parse_dataset_csv(std::string_view text) {
    const auto lines = detail::split_lines(text);
    if (lines.empty()) throw Error(ErrorCode::SchemaError, "dataset CSV is empty");

    const auto header = detail::split_fields(lines[0]);
    if (header.size() < 3 || header[0] != "id" || header[1] != "a" || header[2] != "y")
        throw Error(ErrorCode::SchemaError, "dataset CSV header must start with 'id,a,y'");
    const std::size_t d = header.size() - 3;
    for (std::size_t j = 0; j < d; ++j)
        if (header[3 + j] != "x" + std::to_string(j))
            throw Error(ErrorCode::SchemaError, "dataset CSV header column " + std::to_string(3 + j) +
                                                    " must be 'x" + std::to_string(j) + "'");

    std::vector<Unit> units;
    std::unordered_set<std::string> seen;
    for (std::size_t line_no = 1; line_no < lines.size(); ++line_no) {
        if (lines[line_no].empty()) continue;
        const auto fields = detail::split_fields(lines[line_no]);
        const std::string where = "dataset CSV line " + std::to_string(line_no + 1);
        if (fields.size() != header.size())
            throw Error(ErrorCode::SchemaError, where + ": expected " + std::to_string(header.size()) +
                                                    " fields, found " + std::to_string(fields.size()));
        Unit u;
        u.id = std::string(fields[0]);
        if (u.id.empty()) throw Error(ErrorCode::SchemaError, where + ": empty id");
        if (!seen.insert(u.id).second) throw Error(ErrorCode::DuplicateId, where + ": duplicate id '" + u.id + "'");
        if (fields[1] == "0")
            u.a = 0;
        else if (fields[1] == "1")
            u.a = 1;
        else
            throw Error(ErrorCode::InvalidTreatment, where + ": treatment must be 0 or 1");
        if (!parse_double(fields[2], u.y)) throw Error(ErrorCode::SchemaError, where + ": unparseable outcome");
        if (!std::isfinite(u.y)) throw Error(ErrorCode::NonFinite, where + ": non-finite outcome");
        u.x.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            if (!parse_double(fields[3 + j], u.x[j]))
                throw Error(ErrorCode::SchemaError, where + ": unparseable covariate x" + std::to_string(j));
            if (!std::isfinite(u.x[j]))
                throw Error(ErrorCode::NonFinite, where + ": non-finite covariate x" + std::to_string(j));
        }
        units.push_back(std::move(u));
    }
    return Dataset(std::move(units));
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    try {
        return parse_dataset_csv(detail::read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) throw;
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string dataset_to_csv(const Dataset& dataset) {
    std::string out = "id,a,y";
    for (std::size_t j = 0; j < dataset.dim(); ++j) out += ",x" + std::to_string(j);
    out += '\n';
    for (const Unit& u : dataset.units()) {
        if (u.id.find_first_of(",\n\r") != std::string::npos)
            throw Error(ErrorCode::SchemaError, "unit id '" + u.id + "' cannot be written to CSV");
        out += u.id;
        out += u.a == 1 ? ",1," : ",0,";
        out += format_double(u.y);
        for (double v : u.x) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

void write_dataset_csv(const Dataset& dataset, const std::filesystem::path& path) {
    detail::write_text_file(path, dataset_to_csv(dataset));
}

}  // namespace ti
