#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ti/core.hpp"
#include "ti/simulation.hpp"

namespace ti {

/// Cross-product of simulation settings and model choices, replicated R
/// times. Model choices are spec strings (see parse_outcome_spec and
/// parse_propensity_spec). Two extra forms bind the simulation truth:
/// outcome "oracle[:corrupt=D]" (true Q, shifted by D on units whose
/// covariates decode as treated) and propensity "oracle" (true g).
struct ExperimentGrid {
    /// n, pi0, pi1, pc, block sizes and jitter; the beta/gamma fields and
    /// the seed are overwritten per cell and replication.
    SimConfig base;
    std::vector<double> beta_a{1.0, 0.0};
    std::vector<double> beta_c{50.0, 100.0};
    std::vector<double> gamma{1.0, 4.0};
    std::vector<EstimatorKind> estimators{EstimatorKind::Unadjusted, EstimatorKind::OutcomeOnly,
                                          EstimatorKind::TiAipwAtt};
    std::vector<std::string> outcome_models{"gbm"};
    std::vector<std::string> propensity_models{"kernel"};
    std::size_t replications = 100;
    std::uint64_t base_seed = 0;
    double alpha = 0.05;
    std::size_t folds = 5;
    /// Worker threads; replications are merged in index order regardless.
    std::size_t jobs = 1;

    /// Throws ConfigInvalid.
    void validate() const;
};

struct CellKey {
    double beta_a = 0.0;
    double beta_c = 0.0;
    double gamma = 0.0;
    std::string outcome_model;
    std::string propensity_model;
    EstimatorKind estimator = EstimatorKind::TiAipwAtt;

    bool operator==(const CellKey&) const = default;
};

struct ReplicationRecord {
    std::size_t replication = 0;
    bool ok = false;
    std::string error;
    double tau = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool covered = false;
    /// Factual-arm loss of the Q-hat used (absent when none was fitted).
    std::optional<double> q_loss;
    /// Mean over units of ((q0 - Q0)^2 + (q1 - Q1)^2) / 2 against the truth.
    std::optional<double> true_q_loss;
    std::optional<double> clipped_fraction;
};

/// Aggregates over completed replications. Metrics are NaN when nothing
/// completed; equality treats NaN as equal to NaN.
struct CellAggregates {
    std::size_t completed = 0;
    std::size_t failed = 0;
    double mean_abs_bias = 0.0;
    double coverage = 0.0;
    double mean_tau = 0.0;
    double var_tau = 0.0;
    double mean_se = 0.0;
    std::optional<double> mean_clipped_fraction;

    bool operator==(const CellAggregates& other) const;
};

struct CellResult {
    CellKey key;
    std::vector<ReplicationRecord> records;
    CellAggregates aggregates;
};

CellAggregates aggregate(const std::vector<ReplicationRecord>& records, double truth);

/// Runs every replication of every cell. Deterministic given the grid:
/// replication r simulates with seed derive_seed(base_seed, {r}) in every
/// (beta, gamma) cell, so cells share common random numbers.
std::vector<CellResult> run_grid(const ExperimentGrid& grid);

/// One JSON object per (cell, replication).
std::string records_to_jsonl(const std::vector<CellResult>& results);
void write_records_jsonl(const std::vector<CellResult>& results, const std::filesystem::path& path);
/// Groups records by cell (first-appearance order) and recomputes aggregates.
std::vector<CellResult> parse_records_jsonl(std::string_view text);
std::vector<CellResult> read_records_jsonl(const std::filesystem::path& path);

struct DiagnosticBin {
    std::size_t bin = 0;
    std::size_t count = 0;
    double q_loss_min = 0.0;
    double q_loss_max = 0.0;
    double q_loss_mean = 0.0;
    double mean_abs_bias = 0.0;
    /// Sample variance of tau - beta_a within the bin.
    double error_variance = 0.0;
    double coverage = 0.0;
};

/// Pools completed replications carrying a q_loss, sorts them by q_loss and
/// cuts equal-count bins (ties never straddle a boundary, so fewer bins may
/// result). Bins ascend by loss. Throws TooFewReplications if fewer
/// replications than bins.
std::vector<DiagnosticBin> diagnose_by_q_loss(const std::vector<CellResult>& results, std::size_t bins);

enum class ReportFormat { Text, Json, Csv };
ReportFormat parse_report_format(std::string_view name);

/// The aggregate table (grid coordinates, completed/failed counts, bias,
/// coverage, clipped fractions). Text output leads with a bias (coverage)
/// summary grid; every format carries exact values that parse_report reads back.
std::string render_report(const std::vector<CellResult>& results, ReportFormat format,
                          const std::vector<DiagnosticBin>& diagnostics = {});
/// Cells with keys and aggregates (records are not part of a report).
std::vector<CellResult> parse_report(std::string_view text, ReportFormat format);

std::string render_diagnostics(const std::vector<DiagnosticBin>& bins, ReportFormat format);

}  // namespace ti
