#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kspace::eval {

enum class Regime { kSt, kWd, kCd, kAll };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct TaskRef {
    std::string task;
    std::string database;
};

// One (regime, target) cell and the training-task set its rule derives:
//   ST : {target}
//   WD : same-database tasks minus target (not computable when empty)
//   CD : all tasks outside the target's database (not computable when empty)
//   ALL: every task
struct RegimeSpec {
    Regime regime = Regime::kSt;
    std::string target;
    std::vector<std::string> training_tasks;
    bool computable = true;
    std::string note;  // reason when not computable
};

std::vector<RegimeSpec> build_regimes(const std::vector<TaskRef>& tasks, const std::vector<Regime>& regimes);

// Temporal train/val/test split: rows ordered by (timestamp, row) and cut at
// the quantile boundaries, so no test row precedes any train row. All-equal
// timestamps fall back to stable order with a warning on stderr.
struct Split {
    std::vector<int64_t> train, val, test;
};
Split temporal_split(const std::vector<int64_t>& times, double train_frac = 0.7, double val_frac = 0.15);

}  // namespace kspace::eval
