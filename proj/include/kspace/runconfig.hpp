#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "kspace/backbone.hpp"
#include "kspace/features.hpp"
#include "kspace/regimes.hpp"
#include "kspace/trainer.hpp"

namespace kspace {

// One experiment run: which tasks/regimes/variants/seeds to cover and every
// model and feature hyperparameter. Defaults carry the tuned configuration:
// 3 layers, hidden 256, fanout [16,8,4], 2 attention heads, temporal features
// on, 32 RWPE steps. Precedence is CLI flags > config file > defaults.
struct RunConfig {
    std::string manifest_path;
    std::string out_dir = "runs/out";
    model::BackboneConfig backbone;
    FeatureConfig features;
    train::TrainConfig train;  // per-cell seed/variant fields overwritten per cell
    std::vector<eval::Regime> regimes = {eval::Regime::kSt, eval::Regime::kWd};
    std::vector<std::string> variants = {"base", "adv"};
    std::vector<uint64_t> seeds = {1};
    std::vector<std::string> targets;  // empty: every task
    bool emit_plot = false;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    void validate() const;  // paths exist, lists nonempty
};

}  // namespace kspace
