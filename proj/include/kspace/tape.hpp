#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "kspace/tensor.hpp"

namespace kspace::ad {

using NodeId = int32_t;

enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kTranspose,
    kAdd,
    kRowBroadcastAdd,
    kMul,
    kColBroadcastMul,
    kSilu,
    kSigmoid,
    kLog,
    kNeg,
    kSoftplus,
    kLayerNorm,
    kSoftmaxRow,
    kScaleConst,
    kScaleParam,
    kConcatCols,
    kConcatRows,
    kSliceCols,
    kGatherRows,
    kScatterMeanRows,
    kScatterSumRows,
    kSegmentSoftmax,
    kRopeRotate,
    kRowScaleConst,
    kSumAll,
    kClamp,
};

// Gradients keyed by leaf node id. Only leaves created with requires_grad
// (and, on resume, leaves reachable from the boundary) appear.
using GradMap = std::unordered_map<NodeId, Tensor2>;

// Reverse-mode tape over Tensor2 values. Nodes are appended in program order
// (ids strictly increase), forward values are cached, and a single backward
// sweep walks ids in reverse.
//
// One node per step may be registered as the representation boundary. A
// backward sweep captures the per-row gradient arriving at that node and does
// not propagate past it; resume_backward() continues the sweep from the
// boundary with an externally transformed gradient. With the captured
// gradient injected unchanged, the two-stage sweep is bitwise identical to an
// uninterrupted one.
class Tape {
public:
    NodeId leaf(Tensor2 value, bool requires_grad = false);
    NodeId constant(Tensor2 value) { return leaf(std::move(value), false); }
    NodeId scalar(double x) { return constant(Tensor2::scalar(x)); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId add(NodeId a, NodeId b);
    NodeId row_broadcast_add(NodeId x, NodeId bias);
    NodeId mul(NodeId a, NodeId b);
    NodeId col_broadcast_mul(NodeId x, NodeId column);
    NodeId silu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId log(NodeId x);
    NodeId neg(NodeId x);
    NodeId softplus(NodeId x);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId softmax_row(NodeId x);
    NodeId scale_const(NodeId x, double c);
    NodeId scale_param(NodeId x, NodeId s);
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId slice_cols(NodeId x, int64_t c0, int64_t c1);
    NodeId gather_rows(NodeId x, std::vector<int32_t> idx);
    NodeId scatter_mean_rows(NodeId x, std::vector<int32_t> dst, int64_t out_rows);
    NodeId scatter_sum_rows(NodeId x, std::vector<int32_t> dst, int64_t out_rows);
    NodeId segment_softmax(NodeId scores, std::vector<int32_t> seg, int64_t n_segments);
    NodeId rope_rotate(NodeId x, std::vector<int32_t> position, double base);
    NodeId row_scale_const(NodeId x, std::vector<double> scale);
    NodeId sum_all(NodeId x);
    NodeId clamp(NodeId x, double lo, double hi);

    const Tensor2& value(NodeId id) const { return nodes_[check_id(id)].value; }
    size_t size() const { return nodes_.size(); }

    // Registers the step's representation boundary. Must be called before any
    // dependent node is created, and at most once per tape.
    void set_boundary(NodeId h);
    bool has_boundary() const { return boundary_ >= 0; }
    NodeId boundary() const { return boundary_; }

    // Per-row gradient captured at the boundary by the last backward_from.
    const Tensor2& boundary_grad() const;

    // Reverse sweep from a scalar loss. If a boundary is registered, its
    // gradient is captured and the sweep does not continue past it.
    GradMap backward_from(NodeId loss, double seed = 1.0);

    // Continues the sweep from the boundary using `injected` as the upstream
    // gradient. Requires a prior backward_from on this tape.
    GradMap resume_backward(const Tensor2& injected);

private:
    struct Node {
        Op op = Op::kLeaf;
        std::vector<NodeId> in;
        Tensor2 value;
        bool requires_grad = false;
        bool needs = false;  // some leaf below wants a gradient
        std::vector<int32_t> idx;
        std::vector<double> aux;
        double c0 = 0.0, c1 = 0.0;
        int64_t i0 = 0, i1 = 0;
    };

    NodeId push(Node n);
    NodeId check_id(NodeId id) const;
    bool any_needs(const std::vector<NodeId>& in) const;
    GradMap sweep(std::vector<Tensor2>& grad, std::vector<char>& has, NodeId from, bool stop_at_boundary);
    void accumulate(std::vector<Tensor2>& grad, std::vector<char>& has, NodeId id, const Tensor2& g);
    void backprop_node(const Node& n, const Tensor2& g, std::vector<Tensor2>& grad, std::vector<char>& has);

    std::vector<Node> nodes_;
    NodeId boundary_ = -1;
    Tensor2 boundary_grad_;
    bool boundary_captured_ = false;
};

}  // namespace kspace::ad
