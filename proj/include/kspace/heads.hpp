#pragma once

#include <map>
#include <string>
#include <vector>

#include "kspace/backbone.hpp"
#include "kspace/tape.hpp"
#include "kspace/tensor.hpp"

namespace kspace::model {

// Frozen in-context classifier: softmax attention from each query over the
// support set mixes the support labels into a query probability,
//   p(q) = clamp( sum_i softmax_i(<z_q, z_si>/tau) * y_si, eps, 1-eps ),
// differentiable w.r.t. both query and support representations. tau is fixed
// at sqrt(width), eps at 0.01; the head carries no trainable state.
struct FrozenIclHead {
    double tau;
    double eps = 0.01;

    static FrozenIclHead for_width(int width);
};

// Query probabilities (n_q x 1). Throws ContractError on single-class
// support; the episode builder is responsible for preventing that.
ad::NodeId icl_predict(ad::Tape& tape, const FrozenIclHead& head, ad::NodeId z_query, ad::NodeId z_support,
                       const std::vector<int>& y_support);

// Mean binary cross-entropy over queries.
ad::NodeId main_loss(ad::Tape& tape, ad::NodeId probs, const std::vector<int>& y_query);

// Trainable adversarial MLP (width -> width/2 -> 1, SiLU) predicting the
// label directly from the representation.
ParamStore init_adversary_params(int width, RngStream rng);

struct AdversaryResult {
    double mean_loss = 0.0;
    Tensor2 input_grads;                       // per-row d(loss_row)/d(h_row)
    std::map<std::string, Tensor2> param_grads;  // of the mean loss
};

// Per-row sigmoid BCE on a detached copy of the representation rows; the
// returned input gradients are each row's own loss differentiated w.r.t. its
// own representation. Gradients reach only the adversary's parameters.
AdversaryResult adv_forward_loss(const ParamStore& adv, const Tensor2& h_rows, const std::vector<int>& y);

// Forward-only probabilities for evaluation paths.
Tensor2 adv_predict(const ParamStore& adv, const Tensor2& h_rows);

}  // namespace kspace::model
