#include "kspace/regimes.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include "kspace/error.hpp"

namespace kspace::eval {

std::string to_string(Regime r) {
    switch (r) {
        case Regime::kSt: return "ST";
        case Regime::kWd: return "WD";
        case Regime::kCd: return "CD";
        case Regime::kAll: return "ALL";
    }
    return "?";
}

Regime regime_from_string(const std::string& s) {
    if (s == "ST") return Regime::kSt;
    if (s == "WD") return Regime::kWd;
    if (s == "CD") return Regime::kCd;
    if (s == "ALL") return Regime::kAll;
    throw ConfigError("unknown regime '" + s + "' (expected ST, WD, CD, or ALL)");
}

std::vector<RegimeSpec> build_regimes(const std::vector<TaskRef>& tasks, const std::vector<Regime>& regimes) {
    if (tasks.empty()) throw ContractError("build_regimes: empty task list");
    std::vector<RegimeSpec> out;
    for (Regime regime : regimes) {
        for (const auto& target : tasks) {
            RegimeSpec spec;
            spec.regime = regime;
            spec.target = target.task;
            switch (regime) {
                case Regime::kSt:
                    spec.training_tasks = {target.task};
                    break;
                case Regime::kWd:
                    for (const auto& t : tasks)
                        if (t.database == target.database && t.task != target.task)
                            spec.training_tasks.push_back(t.task);
                    if (spec.training_tasks.empty()) {
                        spec.computable = false;
                        spec.note = "WD not computable: '" + target.database + "' has a single task";
                    }
                    break;
                case Regime::kCd:
                    for (const auto& t : tasks)
                        if (t.database != target.database) spec.training_tasks.push_back(t.task);
                    if (spec.training_tasks.empty()) {
                        spec.computable = false;
                        spec.note = "CD not computable: no tasks outside database '" + target.database + "'";
                    }
                    break;
                case Regime::kAll:
                    for (const auto& t : tasks) spec.training_tasks.push_back(t.task);
                    break;
            }
            out.push_back(std::move(spec));
        }
    }
    return out;
}

Split temporal_split(const std::vector<int64_t>& times, double train_frac, double val_frac) {
    const int64_t n = static_cast<int64_t>(times.size());
    if (n < 10) throw ContractError("temporal_split: too few rows (" + std::to_string(n) + ")");
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac >= 1.0)
        throw ConfigError("temporal_split: bad fractions");

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return times[static_cast<size_t>(a)] < times[static_cast<size_t>(b)]; });
    if (times[static_cast<size_t>(order.front())] == times[static_cast<size_t>(order.back())])
        std::cerr << "warning: temporal_split: all timestamps equal, falling back to stable row order\n";

    const int64_t n_train = static_cast<int64_t>(static_cast<double>(n) * train_frac);
    const int64_t n_val = static_cast<int64_t>(static_cast<double>(n) * val_frac);
    Split s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    if (s.train.empty() || s.test.empty()) throw ContractError("temporal_split: empty split");
    return s;
}

}  // namespace kspace::eval
