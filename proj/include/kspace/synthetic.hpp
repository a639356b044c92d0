#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kspace/bundle.hpp"

namespace kspace::synth {

// Two tasks on a users/items/interactions schema. Both task labels carry a
// shared relational component with weight rho: the mean latent quality of the
// items a user interacted with, visible to a model only through message
// passing. Task A additionally reads an in-row shortcut column with weight
// sigma_s; task B never does, so representations that lean on the shortcut
// transfer poorly to B.
struct LeakageSpec {
    int64_t users = 4000;
    int64_t items = 500;
    int64_t interactions = 40000;
    double rho = 0.8;       // shared relational signal strength, in [0,1]
    double shortcut = 1.0;  // sigma_s, task-A shortcut strength, in [0,1]
    double balance = 0.5;   // target label marginal
    uint64_t seed = 1;
};

// Generative record kept outside the training path: latents, logits, and
// per-table bookkeeping used by oracles and calibration.
struct GroundTruth {
    std::vector<double> user_shared;    // standardized relational aggregate per user
    std::vector<double> user_shortcut;  // standardized shortcut per user
    std::vector<double> item_quality;   // latent item quality
    std::vector<double> logit_a, logit_b;
    std::vector<int64_t> user_degree;  // interactions per user
    double coef = 0.0;
    double intercept_a = 0.0, intercept_b = 0.0;
    LeakageSpec spec;

    nlohmann::json to_json() const;
    static GroundTruth from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static GroundTruth load(const std::string& path);
};

inline constexpr const char* kTaskA = "task_a";
inline constexpr const char* kTaskB = "task_b";

// Writes users.csv, items.csv, interactions.csv, manifest.json, and the
// ground_truth.json sidecar into out_dir. Byte-deterministic given the spec.
GroundTruth generate(const LeakageSpec& spec, const std::string& out_dir);

// Upper-bound AUROC on a task from the generative logits, optionally
// restricted to a row subset; calibrates acceptance thresholds.
double oracle_auroc(const GroundTruth& gt, const RelationalBundle& bundle, const std::string& task,
                    const std::vector<int64_t>* rows = nullptr);

}  // namespace kspace::synth
