#pragma once

#include <map>
#include <string>
#include <unordered_map>

#include "kspace/backbone.hpp"
#include "kspace/tensor.hpp"

namespace kspace::train {

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Decay applies to weight matrices only
// (names containing ".W" or ending in "att"); biases, layer-norm affines, and
// scale scalars are exempt.
class AdamW {
public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

    void step(model::ParamStore& params, const std::map<std::string, Tensor2>& grads);
    int64_t steps_taken() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    struct Moments {
        Tensor2 m, v;
    };
    OptimizerConfig cfg_;
    std::unordered_map<std::string, Moments> state_;
    int64_t t_ = 0;
};

bool decays(const std::string& param_name);

}  // namespace kspace::train
