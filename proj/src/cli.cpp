#include "ti/cli.hpp"

#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "text_io.hpp"
#include "ti/estimators.hpp"
#include "ti/harness.hpp"
#include "ti/random.hpp"
#include "ti/simulation.hpp"

namespace ti {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string input;
    std::string qhat;
    std::string out;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t folds = 5;
    std::string estimators;
    std::vector<std::string> propensity;
    std::vector<std::string> outcome_model;
    std::size_t replications = 100;
    std::size_t jobs = 1;
    std::vector<double> beta_a;
    std::vector<double> beta_c;
    std::vector<double> gamma;
    std::size_t n = 0;
    std::size_t bins = 4;
    std::string format = "text";
    bool raw_x = false;
};

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    if (fs::exists(dir, ec) && !fs::is_directory(dir, ec))
        throw Error(ErrorCode::Io, "output path '" + dir.string() + "' exists and is not a directory");
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
}

SimConfig sim_config_from(const Options& o) {
    SimConfig cfg;
    if (!o.beta_a.empty()) cfg.beta_a = o.beta_a.front();
    if (!o.beta_c.empty()) cfg.beta_c = o.beta_c.front();
    if (!o.gamma.empty()) cfg.gamma = o.gamma.front();
    if (o.n > 0) cfg.n = o.n;
    cfg.seed = o.seed;
    return cfg;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    if (o.beta_a.size() > 1 || o.beta_c.size() > 1 || o.gamma.size() > 1)
        throw Error(ErrorCode::InvalidArgument, "simulate takes a single value for --beta-a, --beta-c and --gamma");
    const SimSample sample = simulate(sim_config_from(o));
    const fs::path dir(o.out);
    ensure_directory(dir);
    write_dataset_csv(sample.dataset, dir / "dataset.csv");
    write_truth_json(sample, dir / "truth.json");
    QHatTable oracle;
    oracle.provenance = QHatProvenance::Ingested;
    for (std::size_t i = 0; i < sample.dataset.size(); ++i)
        oracle.eta.push_back({sample.truth.true_q0[i], sample.truth.true_q1[i]});
    write_qhat_csv(sample.dataset, oracle, dir / "qhat_oracle.csv");

    nlohmann::ordered_json j;
    j["dataset"] = (dir / "dataset.csv").string();
    j["truth"] = (dir / "truth.json").string();
    j["qhat_oracle"] = (dir / "qhat_oracle.csv").string();
    j["n"] = sample.dataset.size();
    j["n1"] = sample.dataset.n_treated();
    j["beta_a"] = sample.config.beta_a;
    j["beta_c"] = sample.config.beta_c;
    j["gamma"] = sample.config.gamma;
    j["seed"] = sample.config.seed;
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_estimate(const Options& o, std::ostream& out) {
    if (o.outcome_model.size() > 1 || o.propensity.size() > 1)
        throw Error(ErrorCode::InvalidArgument, "estimate takes one --outcome-model and one --propensity");
    const Dataset dataset = read_dataset_csv(o.input);
    validate_dataset(dataset);
    const std::vector<EstimatorKind> kinds =
        parse_estimator_list(o.estimators.empty() ? "unadjusted,outcome_only,ti_aipw_att" : o.estimators);

    bool want_q = false, want_g = false;
    for (EstimatorKind k : kinds) {
        want_q = want_q || k != EstimatorKind::Unadjusted;
        want_g = want_g || k == EstimatorKind::TiAipwAtt || k == EstimatorKind::AteAipw || k == EstimatorKind::AteIptw;
    }
    const CrossFitPlan plan = make_folds(dataset, o.folds, derive_seed(o.seed, {1}));

    std::optional<QHatTable> qhat;
    std::string outcome_label = "none";
    if (!o.qhat.empty()) {
        qhat = ingest_qhat(dataset, o.qhat);
        outcome_label = "ingested:" + o.qhat;
    } else if (want_q || (want_g && !o.raw_x)) {
        OutcomeModelSpec spec = parse_outcome_spec(o.outcome_model.empty() ? "gbm" : o.outcome_model.front());
        if (spec.kind == OutcomeModelKind::Oracle)
            throw Error(ErrorCode::ConfigInvalid,
                        "the oracle outcome model needs the truth; pass its predictions with --qhat");
        spec.seed = derive_seed(o.seed, {2});
        qhat = fit_crossfit_q(dataset, plan, spec);
        outcome_label = describe(spec);
    }

    std::optional<PropensityTable> g;
    if (want_g) {
        PropensitySpec spec = parse_propensity_spec(o.propensity.empty() ? "kernel" : o.propensity.front());
        if (spec.kind == PropensityKind::Oracle) {
            if (spec.oracle_path.empty())
                throw Error(ErrorCode::ConfigInvalid, "oracle propensity needs path=<truth.json>");
            spec.oracle = truth_propensity_oracle(align_truth(read_truth_json(spec.oracle_path), dataset));
        }
        g = o.raw_x ? fit_crossfit_propensity_on_covariates(dataset, plan, spec)
                    : fit_crossfit_propensity(*qhat, dataset, plan, spec);
    }

    nlohmann::ordered_json report;
    report["input"] = o.input;
    report["n"] = dataset.size();
    report["n1"] = dataset.n_treated();
    report["alpha"] = o.alpha;
    report["seed"] = o.seed;
    report["folds"] = o.folds;
    report["outcome_model"] = outcome_label;
    if (qhat) report["q_loss"] = q_loss(*qhat, dataset);
    if (g) {
        nlohmann::ordered_json p;
        p["model"] = describe(g->spec);
        p["features"] = o.raw_x ? "covariates" : "eta";
        p["pre_clip_min"] = g->diagnostics.pre_clip_min;
        p["pre_clip_max"] = g->diagnostics.pre_clip_max;
        p["clipped_count"] = g->diagnostics.clipped_count;
        p["clipped_fraction"] = g->diagnostics.clipped_fraction;
        report["propensity"] = p;
    }
    report["estimates"] = nlohmann::ordered_json::array();
    for (EstimatorKind k : kinds) {
        const EffectEstimate e = run_estimator(k, dataset, qhat ? &*qhat : nullptr, g ? &*g : nullptr, o.alpha);
        report["estimates"].push_back(nlohmann::ordered_json::parse(effect_estimate_to_json(e)));
    }
    const std::string text = report.dump(2) + "\n";
    if (!o.out.empty()) detail::write_text_file(o.out, text);
    out << text;
    return 0;
}

ExperimentGrid grid_from(const Options& o, const std::string& default_estimators) {
    ExperimentGrid grid;
    if (o.n > 0) grid.base.n = o.n;
    if (!o.beta_a.empty()) grid.beta_a = o.beta_a;
    if (!o.beta_c.empty()) grid.beta_c = o.beta_c;
    if (!o.gamma.empty()) grid.gamma = o.gamma;
    grid.estimators = parse_estimator_list(o.estimators.empty() ? default_estimators : o.estimators);
    if (!o.outcome_model.empty()) grid.outcome_models = o.outcome_model;
    if (!o.propensity.empty()) grid.propensity_models = o.propensity;
    grid.replications = o.replications;
    grid.base_seed = o.seed;
    grid.alpha = o.alpha;
    grid.folds = o.folds;
    grid.jobs = o.jobs;
    return grid;
}

int cmd_coverage(const Options& o, std::ostream& out) {
    const ReportFormat format = parse_report_format(o.format);
    const std::vector<CellResult> results = run_grid(grid_from(o, "unadjusted,outcome_only,ti_aipw_att"));
    if (!o.out.empty()) {
        const fs::path dir(o.out);
        ensure_directory(dir);
        detail::write_text_file(dir / "report.json", render_report(results, ReportFormat::Json));
        detail::write_text_file(dir / "report.txt", render_report(results, ReportFormat::Text));
        detail::write_text_file(dir / "report.csv", render_report(results, ReportFormat::Csv));
        write_records_jsonl(results, dir / "records.jsonl");
    }
    out << render_report(results, format);
    return 0;
}

int cmd_diagnose(const Options& o, std::ostream& out) {
    const ReportFormat format = parse_report_format(o.format);
    std::vector<CellResult> results;
    if (!o.input.empty()) {
        const std::vector<EstimatorKind> kinds = parse_estimator_list(o.estimators.empty() ? "ti" : o.estimators);
        for (CellResult& c : read_records_jsonl(o.input))
            if (std::find(kinds.begin(), kinds.end(), c.key.estimator) != kinds.end()) results.push_back(std::move(c));
    } else {
        results = run_grid(grid_from(o, "ti"));
    }
    const std::vector<DiagnosticBin> bins = diagnose_by_q_loss(results, o.bins);
    if (!o.out.empty()) {
        const fs::path dir(o.out);
        ensure_directory(dir);
        detail::write_text_file(dir / "diagnostics.json", render_diagnostics(bins, ReportFormat::Json));
        detail::write_text_file(dir / "diagnostics.csv", render_diagnostics(bins, ReportFormat::Csv));
        if (o.input.empty()) write_records_jsonl(results, dir / "records.jsonl");
    }
    out << render_diagnostics(bins, format);
    return 0;
}

void write_error(std::ostream& err, std::string_view code, std::string_view message) {
    nlohmann::ordered_json j;
    j["error"] = code;
    j["message"] = message;
    err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Text-as-treatment effect estimation: simulate, estimate, coverage, diagnose"};
    app.set_config("--config", "", "Read options from a TOML/INI file; command-line flags take precedence");
    app.require_subcommand(1);
    Options o;

    auto* simulate_cmd = app.add_subcommand("simulate", "Draw a semi-synthetic dataset with known truth");
    auto* estimate_cmd = app.add_subcommand("estimate", "Estimate effects on a dataset CSV");
    auto* coverage_cmd = app.add_subcommand("coverage", "Replicated bias/coverage experiment");
    auto* diagnose_cmd = app.add_subcommand("diagnose", "Coverage and bias binned by Q-loss");

    for (CLI::App* cmd : {simulate_cmd, estimate_cmd, coverage_cmd, diagnose_cmd}) {
        cmd->add_option("--seed", o.seed, "Base random seed");
        cmd->add_option("--out", o.out, "Output file or directory");
    }
    simulate_cmd->get_option("--out")->required();

    for (CLI::App* cmd : {estimate_cmd, coverage_cmd, diagnose_cmd}) {
        cmd->add_option("--alpha", o.alpha, "Nominal level of the two-sided intervals")->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--folds", o.folds, "Cross-fitting folds")->check(CLI::Range(2, 1000));
        cmd->add_option("--estimators", o.estimators,
                        "Comma list of unadjusted, outcome_only (q), ti_aipw_att (ti), ate_aipw, ate_iptw");
        cmd->add_option("--propensity", o.propensity,
                        "Propensity model: kernel[:bandwidth=H], knn[:k=K], logistic[:l2=L], gp, oracle[:path=P]; "
                        "every kind accepts clip=E");
        cmd->add_option("--outcome-model", o.outcome_model,
                        "Outcome model: ridge[:lambda=L], knn[:k=K], gbm[:trees=T,depth=D,lr=R,...], oracle");
    }
    for (CLI::App* cmd : {simulate_cmd, coverage_cmd, diagnose_cmd}) {
        cmd->add_option("--beta-a", o.beta_a, "True effect beta_a (comma list for grids)")->delimiter(',');
        cmd->add_option("--beta-c", o.beta_c, "Confounding strength beta_c (comma list for grids)")->delimiter(',');
        cmd->add_option("--gamma", o.gamma, "Noise scale gamma (comma list for grids)")->delimiter(',');
        cmd->add_option("--n", o.n, "Units per simulated dataset");
    }
    for (CLI::App* cmd : {coverage_cmd, diagnose_cmd}) {
        cmd->add_option("--replications", o.replications, "Replications per cell")->check(CLI::PositiveNumber);
        cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
        cmd->add_option("--format", o.format, "Output format: text, json or csv");
    }
    estimate_cmd->add_option("--input", o.input, "Dataset CSV (id,a,y,x0,...)")->required();
    estimate_cmd->add_option("--qhat", o.qhat, "Precomputed Q-hat CSV (id,q0,q1[,fold]); skips outcome fitting");
    estimate_cmd->add_flag("--raw-x", o.raw_x, "Fit the propensity on raw covariates instead of eta-hat");
    diagnose_cmd->add_option("--input", o.input, "Records JSONL from a coverage run (otherwise a grid is run)");
    diagnose_cmd->add_option("--bins", o.bins, "Number of Q-loss bins")->check(CLI::PositiveNumber);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << e.what() << "\n";
            return 0;
        }
        write_error(err, "InvalidArgument", e.what());
        return 2;
    }

    try {
        if (*simulate_cmd) return cmd_simulate(o, out);
        if (*estimate_cmd) return cmd_estimate(o, out);
        if (*coverage_cmd) return cmd_coverage(o, out);
        if (*diagnose_cmd) return cmd_diagnose(o, out);
    } catch (const Error& e) {
        write_error(err, error_code_name(e.code()), e.what());
        return is_numeric_error(e.code()) ? 3 : 2;
    } catch (const std::exception& e) {
        write_error(err, "Internal", e.what());
        return 3;
    }
    return 2;
}

}  // namespace ti
