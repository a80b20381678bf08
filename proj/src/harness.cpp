#include "ti/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "text_io.hpp"
#include "ti/estimators.hpp"
#include "ti/numeric.hpp"
#include "ti/outcome.hpp"
#include "ti/propensity.hpp"
#include "ti/random.hpp"

namespace ti {

namespace {

struct OutcomeChoice {
    bool oracle = false;
    double corrupt = 0.0;
    OutcomeModelSpec spec;
};

OutcomeChoice parse_outcome_choice(std::string_view label) {
    OutcomeChoice choice;
    const detail::SpecString parsed = detail::parse_spec_string(label);
    if (parsed.name != "oracle") {
        choice.spec = parse_outcome_spec(label);
        return choice;
    }
    choice.oracle = true;
    choice.spec.kind = OutcomeModelKind::Oracle;
    for (const auto& [key, value] : parsed.options) {
        if (key != "corrupt")
            throw Error(ErrorCode::InvalidArgument, "oracle outcome choice has no option '" + std::string(key) + "'");
        choice.corrupt = detail::option_double(key, value);
    }
    return choice;
}

bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool needs_q(EstimatorKind k) { return k != EstimatorKind::Unadjusted && k != EstimatorKind::AteIptw; }
bool needs_g(EstimatorKind k) {
    return k == EstimatorKind::TiAipwAtt || k == EstimatorKind::AteAipw || k == EstimatorKind::AteIptw;
}

std::string describe_error(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e))
        return std::string(error_code_name(err->code())) + ": " + err->what();
    return std::string("Exception: ") + e.what();
}

/// Records for one replication, in flattened cell order.
std::vector<ReplicationRecord> run_replication(const ExperimentGrid& grid, const std::vector<OutcomeChoice>& outcomes,
                                               const std::vector<PropensitySpec>& propensities, std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(grid.base_seed, {r});
    std::vector<ReplicationRecord> out;
    out.reserve(grid.beta_a.size() * grid.beta_c.size() * grid.gamma.size() * outcomes.size() *
                propensities.size() * grid.estimators.size());

    bool want_g = false;
    for (EstimatorKind k : grid.estimators) want_g = want_g || needs_g(k);

    for (double ba : grid.beta_a)
        for (double bc : grid.beta_c)
            for (double gm : grid.gamma) {
                SimConfig cfg = grid.base;
                cfg.beta_a = ba;
                cfg.beta_c = bc;
                cfg.gamma = gm;
                cfg.seed = rep_seed;

                std::optional<SimSample> sample;
                std::optional<CrossFitPlan> plan;
                std::string sim_error;
                try {
                    sample = simulate(cfg);
                    plan = make_folds(sample->dataset, grid.folds, derive_seed(rep_seed, {1}));
                } catch (const std::exception& e) {
                    sim_error = describe_error(e);
                }

                for (const OutcomeChoice& oc : outcomes) {
                    std::optional<QHatTable> q;
                    std::string q_error = sim_error;
                    std::optional<double> loss, true_loss;
                    if (sample) {
                        try {
                            OutcomeModelSpec spec = oc.spec;
                            spec.seed = derive_seed(rep_seed, {2});
                            if (oc.oracle) {
                                const SimTruth& truth = sample->truth;
                                const std::size_t ds = cfg.d_signal;
                                const double delta = oc.corrupt;
                                spec.oracle = [&truth, ds, delta](std::size_t i, const Unit& u) {
                                    const double shift = decode_treatment(u.x, ds) == 1 ? delta : 0.0;
                                    return EtaPair{truth.true_q0[i] + shift, truth.true_q1[i] + shift};
                                };
                            }
                            q = fit_crossfit_q(sample->dataset, *plan, spec);
                            loss = q_loss(*q, sample->dataset);
                            std::vector<double> sq(q->size());
                            for (std::size_t i = 0; i < q->size(); ++i) {
                                const double d0 = q->eta[i].q0 - sample->truth.true_q0[i];
                                const double d1 = q->eta[i].q1 - sample->truth.true_q1[i];
                                sq[i] = 0.5 * (d0 * d0 + d1 * d1);
                            }
                            true_loss = mean(sq);
                        } catch (const std::exception& e) {
                            q_error = describe_error(e);
                        }
                    }

                    for (const PropensitySpec& ps : propensities) {
                        std::optional<PropensityTable> g;
                        std::string g_error = q_error;
                        if (want_g && q) {
                            try {
                                PropensitySpec spec = ps;
                                if (spec.kind == PropensityKind::Oracle)
                                    spec.oracle = truth_propensity_oracle(sample->truth);
                                g = fit_crossfit_propensity(*q, sample->dataset, *plan, spec);
                            } catch (const std::exception& e) {
                                g_error = describe_error(e);
                            }
                        }

                        for (EstimatorKind kind : grid.estimators) {
                            ReplicationRecord rec;
                            rec.replication = r;
                            rec.q_loss = loss;
                            rec.true_q_loss = true_loss;
                            if (!sample) {
                                rec.error = sim_error;
                            } else if (needs_q(kind) && !q) {
                                rec.error = q_error;
                            } else if (needs_g(kind) && !g) {
                                rec.error = g_error;
                            } else {
                                try {
                                    const EffectEstimate e = run_estimator(kind, sample->dataset, q ? &*q : nullptr,
                                                                           g ? &*g : nullptr, grid.alpha);
                                    rec.ok = true;
                                    rec.tau = e.tau;
                                    rec.se = e.se;
                                    rec.ci_low = e.ci_low;
                                    rec.ci_high = e.ci_high;
                                    rec.covered = e.covers(ba);
                                    rec.clipped_fraction = e.clipped_fraction;
                                } catch (const std::exception& e) {
                                    rec.error = describe_error(e);
                                }
                            }
                            out.push_back(std::move(rec));
                        }
                    }
                }
            }
    return out;
}

}  // namespace

void ExperimentGrid::validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, "experiment grid: " + msg); };
    if (replications < 1) bad("replications must be >= 1");
    if (beta_a.empty() || beta_c.empty() || gamma.empty()) bad("beta_a, beta_c and gamma need at least one value");
    if (estimators.empty()) bad("no estimators requested");
    if (outcome_models.empty() || propensity_models.empty()) bad("no outcome or propensity model given");
    if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must be in (0, 1)");
    if (folds < 2) bad("folds must be >= 2");
    if (jobs < 1) bad("jobs must be >= 1");
    for (const auto* labels : {&outcome_models, &propensity_models})
        for (const std::string& label : *labels)
            if (label.find_first_of(" \t\n\r\"") != std::string::npos)
                bad("model label '" + label + "' contains whitespace or quotes");
    for (double ba : beta_a)
        for (double bc : beta_c)
            for (double gm : gamma) {
                SimConfig cfg = base;
                cfg.beta_a = ba;
                cfg.beta_c = bc;
                cfg.gamma = gm;
                try {
                    cfg.validate();
                } catch (const Error& e) {
                    bad(e.what());
                }
            }
    try {
        for (const std::string& label : outcome_models) parse_outcome_choice(label);
        for (const std::string& label : propensity_models) parse_propensity_spec(label);
    } catch (const Error& e) {
        bad(e.what());
    }
}

bool CellAggregates::operator==(const CellAggregates& o) const {
    const bool clip_same = mean_clipped_fraction.has_value() == o.mean_clipped_fraction.has_value() &&
                           (!mean_clipped_fraction || same_number(*mean_clipped_fraction, *o.mean_clipped_fraction));
    return completed == o.completed && failed == o.failed && same_number(mean_abs_bias, o.mean_abs_bias) &&
           same_number(coverage, o.coverage) && same_number(mean_tau, o.mean_tau) &&
           same_number(var_tau, o.var_tau) && same_number(mean_se, o.mean_se) && clip_same;
}

CellAggregates aggregate(const std::vector<ReplicationRecord>& records, double truth) {
    CellAggregates agg;
    std::vector<double> tau, abs_bias, covered, se, clipped;
    for (const ReplicationRecord& r : records) {
        if (!r.ok) {
            ++agg.failed;
            continue;
        }
        ++agg.completed;
        tau.push_back(r.tau);
        abs_bias.push_back(std::abs(r.tau - truth));
        covered.push_back(r.ci_low <= truth && truth <= r.ci_high ? 1.0 : 0.0);
        se.push_back(r.se);
        if (r.clipped_fraction) clipped.push_back(*r.clipped_fraction);
    }
    if (agg.completed == 0) {
        const double nan = std::nan("");
        agg.mean_abs_bias = agg.coverage = agg.mean_tau = agg.var_tau = agg.mean_se = nan;
        return agg;
    }
    agg.mean_abs_bias = mean(abs_bias);
    agg.coverage = mean(covered);
    agg.mean_tau = mean(tau);
    agg.var_tau = sample_variance(tau);
    agg.mean_se = mean(se);
    if (!clipped.empty()) agg.mean_clipped_fraction = mean(clipped);
    return agg;
}

std::vector<CellResult> run_grid(const ExperimentGrid& grid) {
    grid.validate();
    std::vector<OutcomeChoice> outcomes;
    for (const std::string& label : grid.outcome_models) outcomes.push_back(parse_outcome_choice(label));
    std::vector<PropensitySpec> propensities;
    for (const std::string& label : grid.propensity_models) propensities.push_back(parse_propensity_spec(label));

    std::vector<CellResult> cells;
    for (double ba : grid.beta_a)
        for (double bc : grid.beta_c)
            for (double gm : grid.gamma)
                for (const std::string& o : grid.outcome_models)
                    for (const std::string& p : grid.propensity_models)
                        for (EstimatorKind k : grid.estimators) {
                            CellResult cell;
                            cell.key = CellKey{ba, bc, gm, o, p, k};
                            cell.records.resize(grid.replications);
                            cells.push_back(std::move(cell));
                        }

    auto store = [&](std::size_t r, std::vector<ReplicationRecord> recs) {
        for (std::size_t c = 0; c < cells.size(); ++c) cells[c].records[r] = std::move(recs[c]);
    };

    const std::size_t workers = std::min(grid.jobs, grid.replications);
    if (workers <= 1) {
        for (std::size_t r = 0; r < grid.replications; ++r) store(r, run_replication(grid, outcomes, propensities, r));
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex mu;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (std::size_t r = next++; r < grid.replications; r = next++) {
                    auto recs = run_replication(grid, outcomes, propensities, r);
                    const std::lock_guard<std::mutex> lock(mu);
                    store(r, std::move(recs));
                }
            });
        for (std::thread& t : pool) t.join();
    }

    for (CellResult& cell : cells) cell.aggregates = aggregate(cell.records, cell.key.beta_a);
    return cells;
}

// ---------------------------------------------------------------------------
// JSON-lines records

namespace {

nlohmann::ordered_json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
    return v ? number_or_null(*v) : nlohmann::ordered_json(nullptr);
}

double number_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

void key_to_json(nlohmann::ordered_json& j, const CellKey& key) {
    j["beta_a"] = key.beta_a;
    j["beta_c"] = key.beta_c;
    j["gamma"] = key.gamma;
    j["outcome_model"] = key.outcome_model;
    j["propensity_model"] = key.propensity_model;
    j["estimator"] = std::string(to_string(key.estimator));
}

CellKey key_from_json(const nlohmann::json& j) {
    CellKey key;
    key.beta_a = j.at("beta_a").get<double>();
    key.beta_c = j.at("beta_c").get<double>();
    key.gamma = j.at("gamma").get<double>();
    key.outcome_model = j.at("outcome_model").get<std::string>();
    key.propensity_model = j.at("propensity_model").get<std::string>();
    key.estimator = parse_estimator_kind(j.at("estimator").get<std::string>());
    return key;
}

}  // namespace

std::string records_to_jsonl(const std::vector<CellResult>& results) {
    std::string out;
    for (const CellResult& cell : results)
        for (const ReplicationRecord& r : cell.records) {
            nlohmann::ordered_json j;
            key_to_json(j, cell.key);
            j["replication"] = r.replication;
            j["ok"] = r.ok;
            j["error"] = r.ok ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.error);
            j["tau"] = r.ok ? number_or_null(r.tau) : nullptr;
            j["se"] = r.ok ? number_or_null(r.se) : nullptr;
            j["ci"] = r.ok ? nlohmann::ordered_json{number_or_null(r.ci_low), number_or_null(r.ci_high)}
                           : nlohmann::ordered_json(nullptr);
            j["covered"] = r.ok ? nlohmann::ordered_json(r.covered) : nlohmann::ordered_json(nullptr);
            j["q_loss"] = optional_json(r.q_loss);
            j["true_q_loss"] = optional_json(r.true_q_loss);
            j["clipped_fraction"] = optional_json(r.clipped_fraction);
            out += j.dump();
            out += '\n';
        }
    return out;
}

void write_records_jsonl(const std::vector<CellResult>& results, const std::filesystem::path& path) {
    detail::write_text_file(path, records_to_jsonl(results));
}

std::vector<CellResult> parse_records_jsonl(std::string_view text) {
    std::vector<CellResult> cells;
    const auto lines = detail::split_lines(text);
    for (std::size_t line_no = 0; line_no < lines.size(); ++line_no) {
        if (detail::trim(lines[line_no]).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(lines[line_no]);
            const CellKey key = key_from_json(j);
            ReplicationRecord r;
            r.replication = j.at("replication").get<std::size_t>();
            r.ok = j.at("ok").get<bool>();
            if (r.ok) {
                r.tau = number_from(j.at("tau"));
                r.se = number_from(j.at("se"));
                r.ci_low = number_from(j.at("ci").at(0));
                r.ci_high = number_from(j.at("ci").at(1));
                r.covered = j.at("covered").get<bool>();
            } else {
                r.error = j.at("error").is_null() ? "" : j.at("error").get<std::string>();
            }
            r.q_loss = optional_from(j, "q_loss");
            r.true_q_loss = optional_from(j, "true_q_loss");
            r.clipped_fraction = optional_from(j, "clipped_fraction");
            auto it = std::find_if(cells.begin(), cells.end(), [&](const CellResult& c) { return c.key == key; });
            if (it == cells.end()) {
                cells.push_back(CellResult{key, {}, {}});
                it = cells.end() - 1;
            }
            it->records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::SchemaError,
                        "records line " + std::to_string(line_no + 1) + ": " + std::string(ex.what()));
        }
    }
    for (CellResult& cell : cells) cell.aggregates = aggregate(cell.records, cell.key.beta_a);
    return cells;
}

std::vector<CellResult> read_records_jsonl(const std::filesystem::path& path) {
    try {
        return parse_records_jsonl(detail::read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) throw;
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Q-loss diagnostics

std::vector<DiagnosticBin> diagnose_by_q_loss(const std::vector<CellResult>& results, std::size_t bins) {
    if (bins < 1) throw Error(ErrorCode::InvalidArgument, "bins must be >= 1");
    struct Item {
        double loss;
        double error;
        bool covered;
    };
    std::vector<Item> items;
    for (const CellResult& cell : results)
        for (const ReplicationRecord& r : cell.records)
            if (r.ok && r.q_loss)
                items.push_back({*r.q_loss, r.tau - cell.key.beta_a,
                                 r.ci_low <= cell.key.beta_a && cell.key.beta_a <= r.ci_high});
    const std::size_t m = items.size();
    if (m < bins)
        throw Error(ErrorCode::TooFewReplications, std::to_string(m) + " replications cannot fill " +
                                                       std::to_string(bins) + " bins");
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.loss < b.loss; });

    std::vector<std::size_t> cuts{0};
    for (std::size_t b = 1; b < bins; ++b) {
        std::size_t cut = b * m / bins;
        while (cut < m && cut > 0 && items[cut].loss == items[cut - 1].loss) ++cut;
        if (cut > cuts.back() && cut < m) cuts.push_back(cut);
    }
    cuts.push_back(m);

    std::vector<DiagnosticBin> out;
    for (std::size_t b = 0; b + 1 < cuts.size(); ++b) {
        std::vector<double> loss, abs_err, err, cov;
        for (std::size_t i = cuts[b]; i < cuts[b + 1]; ++i) {
            loss.push_back(items[i].loss);
            abs_err.push_back(std::abs(items[i].error));
            err.push_back(items[i].error);
            cov.push_back(items[i].covered ? 1.0 : 0.0);
        }
        DiagnosticBin bin;
        bin.bin = b;
        bin.count = loss.size();
        bin.q_loss_min = loss.front();
        bin.q_loss_max = loss.back();
        bin.q_loss_mean = mean(loss);
        bin.mean_abs_bias = mean(abs_err);
        bin.error_variance = sample_variance(err);
        bin.coverage = mean(cov);
        out.push_back(bin);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

ReportFormat parse_report_format(std::string_view name) {
    if (name == "text" || name == "txt") return ReportFormat::Text;
    if (name == "json") return ReportFormat::Json;
    if (name == "csv") return ReportFormat::Csv;
    throw Error(ErrorCode::InvalidArgument, "unknown report format '" + std::string(name) + "'");
}

namespace {

const std::vector<std::string> kCellColumns = {
    "beta_a",        "beta_c",   "gamma",    "outcome_model", "propensity_model", "estimator", "completed", "failed",
    "mean_abs_bias", "coverage", "mean_tau", "var_tau",       "mean_se",          "mean_clipped_fraction"};

std::vector<std::string> cell_fields(const CellResult& c) {
    const CellAggregates& a = c.aggregates;
    return {format_double(c.key.beta_a),
            format_double(c.key.beta_c),
            format_double(c.key.gamma),
            c.key.outcome_model,
            c.key.propensity_model,
            std::string(to_string(c.key.estimator)),
            std::to_string(a.completed),
            std::to_string(a.failed),
            format_double(a.mean_abs_bias),
            format_double(a.coverage),
            format_double(a.mean_tau),
            format_double(a.var_tau),
            format_double(a.mean_se),
            a.mean_clipped_fraction ? format_double(*a.mean_clipped_fraction) : "-"};
}

double field_double(std::string_view s) {
    double v = 0.0;
    if (!parse_double(s, v)) throw Error(ErrorCode::SchemaError, "report: bad number '" + std::string(s) + "'");
    return v;
}

std::size_t field_size(std::string_view s) {
    try {
        return detail::option_size("count", s);
    } catch (const Error&) {
        throw Error(ErrorCode::SchemaError, "report: bad count '" + std::string(s) + "'");
    }
}

CellResult cell_from_fields(const std::vector<std::string>& f) {
    if (f.size() != kCellColumns.size())
        throw Error(ErrorCode::SchemaError, "report: expected " + std::to_string(kCellColumns.size()) +
                                                " columns, found " + std::to_string(f.size()));
    CellResult c;
    c.key.beta_a = field_double(f[0]);
    c.key.beta_c = field_double(f[1]);
    c.key.gamma = field_double(f[2]);
    c.key.outcome_model = f[3];
    c.key.propensity_model = f[4];
    c.key.estimator = parse_estimator_kind(f[5]);
    c.aggregates.completed = field_size(f[6]);
    c.aggregates.failed = field_size(f[7]);
    c.aggregates.mean_abs_bias = field_double(f[8]);
    c.aggregates.coverage = field_double(f[9]);
    c.aggregates.mean_tau = field_double(f[10]);
    c.aggregates.var_tau = field_double(f[11]);
    c.aggregates.mean_se = field_double(f[12]);
    if (f[13] != "-" && !f[13].empty()) c.aggregates.mean_clipped_fraction = field_double(f[13]);
    return c;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string aligned(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (width.size() <= c) width.push_back(0);
            width[c] = std::max(width[c], row[c].size());
        }
    std::string out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c > 0) line += "  ";
            line += row[c];
            if (c + 1 < row.size()) line.append(width[c] - row[c].size(), ' ');
        }
        out += line + "\n";
    }
    return out;
}

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

/// Rows are (beta_a, beta_c, gamma); columns are estimators showing
/// "bias (coverage%)"; one block per (outcome, propensity) pair.
std::string table_one(const std::vector<CellResult>& results) {
    std::vector<std::pair<std::string, std::string>> models;
    std::vector<EstimatorKind> kinds;
    for (const CellResult& c : results) {
        const auto m = std::make_pair(c.key.outcome_model, c.key.propensity_model);
        if (std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
        if (std::find(kinds.begin(), kinds.end(), c.key.estimator) == kinds.end()) kinds.push_back(c.key.estimator);
    }
    std::string out;
    for (const auto& [outcome, propensity] : models) {
        out += "outcome=" + outcome + "  propensity=" + propensity + "\n";
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> header{"beta_a", "beta_c", "gamma"};
        for (EstimatorKind k : kinds) header.emplace_back(to_string(k));
        header.emplace_back("clipped");
        rows.push_back(header);
        std::vector<std::tuple<double, double, double>> coords;
        for (const CellResult& c : results)
            if (c.key.outcome_model == outcome && c.key.propensity_model == propensity) {
                const auto t = std::make_tuple(c.key.beta_a, c.key.beta_c, c.key.gamma);
                if (std::find(coords.begin(), coords.end(), t) == coords.end()) coords.push_back(t);
            }
        for (const auto& [ba, bc, gm] : coords) {
            std::vector<std::string> row{format_double(ba), format_double(bc), format_double(gm)};
            std::string clipped = "-";
            for (EstimatorKind k : kinds) {
                const auto it = std::find_if(results.begin(), results.end(), [&](const CellResult& c) {
                    return c.key.outcome_model == outcome && c.key.propensity_model == propensity &&
                           c.key.beta_a == ba && c.key.beta_c == bc && c.key.gamma == gm && c.key.estimator == k;
                });
                if (it == results.end()) {
                    row.emplace_back("-");
                    continue;
                }
                const CellAggregates& a = it->aggregates;
                std::string cell = fixed(a.mean_abs_bias, 3) + " (" + fixed(100.0 * a.coverage, 0) + "%)";
                if (a.failed > 0) cell += " [" + std::to_string(a.failed) + " failed]";
                row.push_back(cell);
                if (a.mean_clipped_fraction) clipped = fixed(100.0 * *a.mean_clipped_fraction, 2) + "%";
            }
            row.push_back(clipped);
            rows.push_back(row);
        }
        out += aligned(rows);
        out += "\n";
    }
    return out;
}

std::vector<std::string> diagnostic_fields(const DiagnosticBin& b) {
    return {std::to_string(b.bin),          std::to_string(b.count),       format_double(b.q_loss_min),
            format_double(b.q_loss_max),    format_double(b.q_loss_mean),  format_double(b.mean_abs_bias),
            format_double(b.error_variance), format_double(b.coverage)};
}

const std::vector<std::string> kDiagnosticColumns = {"bin",         "count",         "q_loss_min",
                                                     "q_loss_max",  "q_loss_mean",   "mean_abs_bias",
                                                     "error_variance", "coverage"};

nlohmann::ordered_json diagnostics_json(const std::vector<DiagnosticBin>& bins) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const DiagnosticBin& b : bins) {
        nlohmann::ordered_json j;
        j["bin"] = b.bin;
        j["count"] = b.count;
        j["q_loss_min"] = number_or_null(b.q_loss_min);
        j["q_loss_max"] = number_or_null(b.q_loss_max);
        j["q_loss_mean"] = number_or_null(b.q_loss_mean);
        j["mean_abs_bias"] = number_or_null(b.mean_abs_bias);
        j["error_variance"] = number_or_null(b.error_variance);
        j["coverage"] = number_or_null(b.coverage);
        arr.push_back(j);
    }
    return arr;
}

}  // namespace

std::string render_diagnostics(const std::vector<DiagnosticBin>& bins, ReportFormat format) {
    switch (format) {
        case ReportFormat::Json:
            return diagnostics_json(bins).dump(2) + "\n";
        case ReportFormat::Csv: {
            std::string out;
            for (std::size_t c = 0; c < kDiagnosticColumns.size(); ++c)
                out += (c ? "," : "") + kDiagnosticColumns[c];
            out += '\n';
            for (const DiagnosticBin& b : bins) {
                const auto f = diagnostic_fields(b);
                for (std::size_t c = 0; c < f.size(); ++c) out += (c ? "," : "") + f[c];
                out += '\n';
            }
            return out;
        }
        case ReportFormat::Text: {
            std::vector<std::vector<std::string>> rows{kDiagnosticColumns};
            for (const DiagnosticBin& b : bins) rows.push_back(diagnostic_fields(b));
            return aligned(rows);
        }
    }
    return {};
}

std::string render_report(const std::vector<CellResult>& results, ReportFormat format,
                          const std::vector<DiagnosticBin>& diagnostics) {
    switch (format) {
        case ReportFormat::Json: {
            nlohmann::ordered_json root;
            root["cells"] = nlohmann::ordered_json::array();
            for (const CellResult& c : results) {
                nlohmann::ordered_json j;
                key_to_json(j, c.key);
                const CellAggregates& a = c.aggregates;
                j["completed"] = a.completed;
                j["failed"] = a.failed;
                j["mean_abs_bias"] = number_or_null(a.mean_abs_bias);
                j["coverage"] = number_or_null(a.coverage);
                j["mean_tau"] = number_or_null(a.mean_tau);
                j["var_tau"] = number_or_null(a.var_tau);
                j["mean_se"] = number_or_null(a.mean_se);
                j["mean_clipped_fraction"] = optional_json(a.mean_clipped_fraction);
                root["cells"].push_back(j);
            }
            if (!diagnostics.empty()) root["diagnostics"] = diagnostics_json(diagnostics);
            return root.dump(2) + "\n";
        }
        case ReportFormat::Csv: {
            std::string out;
            for (std::size_t c = 0; c < kCellColumns.size(); ++c) out += (c ? "," : "") + kCellColumns[c];
            out += '\n';
            for (const CellResult& cell : results) {
                const auto f = cell_fields(cell);
                for (std::size_t c = 0; c < f.size(); ++c) out += (c ? "," : "") + csv_quote(f[c]);
                out += '\n';
            }
            return out;
        }
        case ReportFormat::Text: {
            std::string out = "Average absolute bias (CI coverage)\n\n";
            out += table_one(results);
            out += "Cells\n";
            std::vector<std::vector<std::string>> rows{kCellColumns};
            for (const CellResult& cell : results) rows.push_back(cell_fields(cell));
            out += aligned(rows);
            if (!diagnostics.empty()) {
                out += "\nQ-loss diagnostics\n";
                out += render_diagnostics(diagnostics, ReportFormat::Text);
            }
            return out;
        }
    }
    return {};
}

std::vector<CellResult> parse_report(std::string_view text, ReportFormat format) {
    std::vector<CellResult> cells;
    switch (format) {
        case ReportFormat::Json: {
            try {
                const auto root = nlohmann::json::parse(text);
                for (const auto& j : root.at("cells")) {
                    CellResult c;
                    c.key = key_from_json(j);
                    CellAggregates& a = c.aggregates;
                    a.completed = j.at("completed").get<std::size_t>();
                    a.failed = j.at("failed").get<std::size_t>();
                    a.mean_abs_bias = number_from(j.at("mean_abs_bias"));
                    a.coverage = number_from(j.at("coverage"));
                    a.mean_tau = number_from(j.at("mean_tau"));
                    a.var_tau = number_from(j.at("var_tau"));
                    a.mean_se = number_from(j.at("mean_se"));
                    a.mean_clipped_fraction = optional_from(j, "mean_clipped_fraction");
                    cells.push_back(std::move(c));
                }
            } catch (const nlohmann::json::exception& ex) {
                throw Error(ErrorCode::SchemaError, std::string("report JSON: ") + ex.what());
            }
            return cells;
        }
        case ReportFormat::Csv: {
            const auto lines = detail::split_lines(text);
            if (lines.empty() || csv_split(lines[0]) != kCellColumns)
                throw Error(ErrorCode::SchemaError, "report CSV: unexpected header");
            for (std::size_t i = 1; i < lines.size(); ++i)
                if (!lines[i].empty()) cells.push_back(cell_from_fields(csv_split(lines[i])));
            return cells;
        }
        case ReportFormat::Text: {
            const auto lines = detail::split_lines(text);
            std::size_t i = 0;
            while (i < lines.size() && lines[i] != "Cells") ++i;
            if (i + 1 >= lines.size()) throw Error(ErrorCode::SchemaError, "report text: no 'Cells' section");
            i += 2;  // section title and column header
            for (; i < lines.size() && !detail::trim(lines[i]).empty(); ++i) {
                std::vector<std::string> fields;
                std::istringstream in{std::string(lines[i])};
                for (std::string f; in >> f;) fields.push_back(f);
                cells.push_back(cell_from_fields(fields));
            }
            return cells;
        }
    }
    return cells;
}

}  // namespace ti
