#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kspace/runconfig.hpp"

namespace kspace::eval {

struct EvalResult {
    std::string task;
    Regime regime = Regime::kSt;
    std::string variant;
    uint64_t seed = 0;
    std::optional<double> auroc;
    int64_t n_queries = 0;
    std::string training_tasks;  // '+'-joined
    std::string note;            // reason when auroc is missing
};

struct MatrixOutput {
    std::vector<EvalResult> results;
    bool complete = true;  // false when any cell is missing
    std::string results_csv, results_md, plot_svg;
};

// Runs one (task, regime, variant, seed) cell matrix: resolves regime
// training sets, trains each distinct (training set, variant, seed) model (or
// reuses a valid checkpoint on disk), evaluates every target on its temporal
// test split with support drawn from the target's train split, and writes
// results.csv, results.md, an optional SVG bar chart, per-cell training logs,
// checkpoints, and a frozen copy of the resolved config under out_dir.
// With train_missing false, cells lacking a checkpoint are marked missing.
// With evaluate false, models are only trained (checkpoints and logs written)
// and no report is produced.
MatrixOutput run_matrix(const RunConfig& cfg, bool train_missing, bool evaluate = true);

// Report rendering from a results table (used by the report subcommand).
std::string render_markdown(const std::vector<EvalResult>& results);
std::string render_csv(const std::vector<EvalResult>& results);
std::string render_svg(const std::vector<EvalResult>& results);
std::vector<EvalResult> parse_results_csv(const std::string& text);

}  // namespace kspace::eval
