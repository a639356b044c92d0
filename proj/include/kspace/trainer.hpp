#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kspace/backbone.hpp"
#include "kspace/checkpoint.hpp"
#include "kspace/features.hpp"
#include "kspace/heads.hpp"
#include "kspace/optimizer.hpp"
#include "kspace/projection.hpp"
#include "kspace/regimes.hpp"

namespace kspace::train {

struct TrainConfig {
    bool adversarial = false;  // base vs adv variant
    OptimizerConfig opt;
    int epochs = 3;
    int n_support = 64;
    int n_query = 64;
    bool detach_support = false;  // stop support-side main-loss gradients at the boundary
    // Test support: bypass the boundary hook and backpropagate straight
    // through; must produce bitwise-identical updates to the hooked base path.
    bool hook_free = false;
    uint64_t seed = 1;

    void validate() const;
};

// Per-task label/time columns plus the temporal split.
struct TaskRuntime {
    std::string name;
    int32_t table = 0;
    std::vector<int> labels;
    std::vector<int64_t> times;
    eval::Split split;
};
TaskRuntime make_task_runtime(const RelationalBundle& bundle, const std::string& task);

// Frozen per-run artifacts shared by training and evaluation: the fitted row
// encoder, the training time range, the feature cache, and the ICL head.
struct PipelineContext {
    model::BackboneConfig backbone_cfg;
    FeatureConfig feature_cfg;
    int64_t t_min = 0, t_max = 1, cutoff = 0;
    model::FrozenIclHead icl{};
    uint64_t walk_seed = 0;
    std::unique_ptr<FeatureContext> features;

    static PipelineContext make(const RelationalBundle& bundle, const HeteroGraph& graph,
                                const model::BackboneConfig& bcfg, const FeatureConfig& fcfg,
                                const std::vector<TaskRuntime>& training_tasks, uint64_t walk_seed);
    static PipelineContext restore(const RelationalBundle& bundle, const HeteroGraph& graph,
                                   const Checkpoint& ck);
};

struct Episode {
    int task_index = 0;
    std::vector<int64_t> support_rows, query_rows;
};

// Queries partition each task's shuffled train split into n_query chunks;
// support is a balanced draw from the remaining train rows. Multi-task
// epochs interleave tasks round-robin.
std::vector<Episode> build_epoch_episodes(const std::vector<TaskRuntime>& tasks, int n_support, int n_query,
                                          RngStream episode_stream);

struct StepMetrics {
    int64_t step = 0;
    int epoch = 0;
    std::string task;
    double loss_main = 0.0;
    std::optional<double> loss_adv;
    double gate_rate = 0.0;
    double mean_alpha = 0.0;
    double boundary_grad_norm = 0.0;
    double refined_grad_norm = 0.0;
    double param_grad_norm = 0.0;
    bool aborted = false;  // non-finite loss: step skipped, parameters untouched

    nlohmann::json to_json() const;
};

struct FitResult {
    Checkpoint checkpoint;               // best by validation AUROC
    std::vector<std::string> log_lines;  // JSON-lines training log
    double best_val_auroc = 0.0;
    int best_epoch = -1;
};

class Trainer {
public:
    Trainer(const RelationalBundle& bundle, const HeteroGraph& graph, PipelineContext& ctx,
            std::vector<TaskRuntime> training_tasks, TrainConfig cfg);

    // One episode: forward to the representation, capture per-query boundary
    // gradients, optionally project against the adversary, resume the
    // backward sweep with the refined rows, and apply the optimizer.
    StepMetrics train_step(const Episode& episode);

    // Epochs of shuffled episodes with per-epoch validation AUROC selection.
    FitResult fit();

    // AUROC of the current parameters on arbitrary rows of a task, with
    // in-context support drawn from that task's train split. Empty when the
    // queried rows are single-class.
    std::optional<double> evaluate(const TaskRuntime& task, const std::vector<int64_t>& query_rows,
                                   const std::vector<int64_t>& support_rows) const;

    const model::ParamStore& params() const { return params_; }
    const model::ParamStore& adversary() const { return adv_params_; }
    model::ParamStore& mutable_params() { return params_; }
    Checkpoint snapshot() const;
    void restore_params(const Checkpoint& ck);

    // Balanced support rows from the task's train split, deterministic per
    // (root seed, task).
    std::vector<int64_t> eval_support_rows(const TaskRuntime& task) const;

    // Test seam: supplies per-query adversarial gradients in place of the
    // adversarial head.
    std::function<Tensor2(const Tensor2& h_query_rows, const std::vector<int>& y)> adv_gradient_override;

private:
    struct ForwardOut {
        ad::Tape tape;
        ad::NodeId h = -1;
        ad::NodeId loss = -1;
        model::TapeParams reg;
        std::vector<int32_t> support_locals, query_locals;
        std::vector<int> y_support, y_query;
    };
    void forward_episode(const Episode& episode, bool with_boundary, ForwardOut& out) const;
    SampledSubgraph sample_for(const TaskRuntime& task, const std::vector<int64_t>& support,
                               const std::vector<int64_t>& query) const;

    const RelationalBundle& bundle_;
    const HeteroGraph& graph_;
    PipelineContext& ctx_;
    std::vector<TaskRuntime> tasks_;
    TrainConfig cfg_;
    RngStream root_;
    model::ParamStore params_;
    model::ParamStore adv_params_;
    AdamW opt_;
    AdamW adv_opt_;
    int64_t step_counter_ = 0;
};

}  // namespace kspace::train
