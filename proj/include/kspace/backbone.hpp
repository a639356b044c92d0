#pragma once

#include <map>
#include <string>

#include <json.hpp>
#include <unordered_map>
#include <vector>

#include "kspace/rng.hpp"
#include "kspace/sample.hpp"
#include "kspace/tape.hpp"
#include "kspace/tensor.hpp"

namespace kspace::model {

enum class ConvKind { kGcn, kGatv2 };

struct BackboneConfig {
    int layers = 3;
    int hidden = 256;
    int heads = 2;
    ConvKind conv = ConvKind::kGatv2;
    double rope_base = 10000.0;

    void validate() const;
};

// Ordered named parameter set. Iteration order is registration order, fixed
// across runs, so optimizer updates and checkpoints are deterministic.
class ParamStore {
public:
    void add(const std::string& name, Tensor2 value);
    Tensor2& at(const std::string& name);
    const Tensor2& at(const std::string& name) const;
    bool contains(const std::string& name) const { return values_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }

    std::map<std::string, Tensor2> to_map() const;
    static ParamStore from_map(const std::map<std::string, Tensor2>& m, const std::vector<std::string>& order);

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor2> values_;
};

// Per-step registration of a ParamStore onto a tape as requires-grad leaves.
struct TapeParams {
    std::unordered_map<std::string, ad::NodeId> ids;
    std::vector<std::pair<std::string, ad::NodeId>> ordered;

    ad::NodeId at(const std::string& name) const;
};
TapeParams register_params(ad::Tape& tape, const ParamStore& params);

// Gradient map re-keyed by parameter name.
std::map<std::string, Tensor2> named_grads(const TapeParams& reg, const ad::GradMap& grads);

// Backbone parameters: input/output projections plus, per layer, REV and FWD
// sub-block parameter sets shared across all edge types of that direction.
ParamStore init_backbone_params(const BackboneConfig& cfg, int feature_width, RngStream rng);

ad::NodeId input_project(ad::Tape& tape, const TapeParams& p, ad::NodeId features);

ad::NodeId rope_table(ad::Tape& tape, ad::NodeId x, const std::vector<int32_t>& table_of_row, double base);

// Full-shape SMPNN sub-block over every row of x:
//   branch = scale1 * SiLU(conv(linear(LN1(x)), E))
//   out    = scale2 * SiLU(linear(LN2(x + branch)))
// Rows that are not destinations of E see conv output 0.
ad::NodeId smpnn_sub_block(ad::Tape& tape, const TapeParams& p, const BackboneConfig& cfg,
                           const std::string& prefix, ad::NodeId x, const SampledSubgraph::TypedEdges& edges);

// One Hetero block: per edge type, the REV or FWD sub-block produces messages
// for that type's destination rows; messages accumulate per row and are
// count-normalized by the number of active types before the residual add.
// Empty shells return x unchanged. Message computation is restricted to
// destination rows, which matches the full-shape sub-block masked by the
// destination indicator.
ad::NodeId hetero_block(ad::Tape& tape, const TapeParams& p, const BackboneConfig& cfg, int layer,
                        ad::NodeId x, const std::vector<SampledSubgraph::TypedEdges>& shell);

// features -> input projection -> RoPE(table type) -> N hetero blocks
// (consuming shells outermost first) -> output projection. Registers the
// result as the tape's representation boundary unless told otherwise.
ad::NodeId backbone_forward(ad::Tape& tape, const BackboneConfig& cfg, const TapeParams& p,
                            const SampledSubgraph& sg, ad::NodeId features, bool register_boundary = true);

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

}  // namespace kspace::model
