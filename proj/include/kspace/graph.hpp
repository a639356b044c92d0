#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kspace/bundle.hpp"

namespace kspace {

// Edge type t = (src table, fk column, dst table). Types [0, n_fk) are the
// original direction (fk row -> target row); type t + n_fk is the reversed
// twin of type t.
struct EdgeTypeInfo {
    int32_t src_table = 0;
    int32_t dst_table = 0;
    std::string fk_column;
    bool reversed = false;
    int32_t twin = 0;
};

// Typed directed temporal graph over all rows of the bundle. One node per
// row; one edge per non-null foreign key plus its reversed twin; edge
// timestamps inherit the source row's timestamp column (static otherwise).
// Immutable after build.
class HeteroGraph {
public:
    struct OutEdge {
        int32_t nbr;
        int32_t type;
        int64_t ts;
    };
    struct InEdge {
        int32_t src;
        int64_t ts;
    };

    static HeteroGraph build(const RelationalBundle& bundle);

    int64_t num_nodes() const { return n_nodes_; }
    int32_t num_tables() const { return static_cast<int32_t>(node_base_.size()) - 1; }
    int32_t num_types() const { return static_cast<int32_t>(types_.size()); }
    const std::vector<EdgeTypeInfo>& types() const { return types_; }

    int32_t node_id(int32_t table, int64_t row) const {
        return static_cast<int32_t>(node_base_[static_cast<size_t>(table)] + row);
    }
    int32_t node_table(int32_t node) const;
    int64_t node_row(int32_t node) const;

    // All outgoing edges of a node across every type (original and reversed),
    // sorted by (ts, nbr, type); the admissible prefix for a seed time is
    // found by binary search. Walk traversal uses this view.
    const OutEdge* out_begin(int32_t node) const { return out_edges_.data() + out_off_[static_cast<size_t>(node)]; }
    int64_t out_degree(int32_t node) const {
        return out_off_[static_cast<size_t>(node) + 1] - out_off_[static_cast<size_t>(node)];
    }
    int64_t admissible_out_degree(int32_t node, int64_t seed_time) const;

    // Incoming edges of `node` under one edge type, sorted by (ts, src).
    // Neighbor sampling uses this view.
    const InEdge* in_begin(int32_t type, int32_t node) const;
    int64_t in_degree(int32_t type, int32_t node) const;
    int64_t admissible_in_degree(int32_t type, int32_t node, int64_t seed_time) const;

    int64_t num_directed_edges() const { return static_cast<int64_t>(out_edges_.size()); }

    // Debug dump: src_table,src_row,fk,dst_table,dst_row,timestamp per
    // original-direction edge.
    void dump_edges(const std::string& path, const RelationalBundle& bundle) const;

private:
    std::vector<EdgeTypeInfo> types_;
    std::vector<int64_t> node_base_;  // per table, plus total sentinel
    int64_t n_nodes_ = 0;

    std::vector<int64_t> out_off_;
    std::vector<OutEdge> out_edges_;

    // per type: CSR keyed by dst node's row within the dst table
    std::vector<std::vector<int64_t>> in_off_;
    std::vector<std::vector<InEdge>> in_edges_;
};

}  // namespace kspace
