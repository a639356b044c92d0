#pragma once

#include <cstdint>
#include <vector>

#include "kspace/graph.hpp"
#include "kspace/rng.hpp"

namespace kspace {

struct Seed {
    int32_t node = 0;
    int64_t time = kStaticTime;
};

// Seed-anchored, fanout-limited, time-admissible neighborhood. Each seed
// expands independently under its own time; node instances are per seed, so a
// shared row reached from two seeds appears once per seed with that seed's
// time. Shells are ordered outward from the seeds (shell 0 touches the
// seeds); the backbone consumes them outermost first.
struct SampledSubgraph {
    struct NodeInstance {
        int32_t global;     // graph node id
        int32_t table;      // table ordinal (RoPE position)
        int32_t seed_index; // which input seed pulled this instance in
        int64_t seed_time;  // admissibility horizon for this instance
    };
    struct TypedEdges {
        int32_t type = 0;
        bool reversed = false;
        std::vector<int32_t> src, dst;  // local node ids, messages flow src -> dst
        std::vector<int64_t> ts;
    };

    std::vector<NodeInstance> nodes;
    std::vector<int32_t> seed_locals;            // local id per input seed
    std::vector<std::vector<TypedEdges>> shells; // [layer][edge type present]

    int64_t num_nodes() const { return static_cast<int64_t>(nodes.size()); }
    int64_t num_edges() const;
};

// Layered in-edge sampling: at shell L, every frontier node draws, per edge
// type, up to fanout[L] admissible in-edges (timestamp <= seed time, static
// always admissible) uniformly without replacement. Each seed uses an rng
// stream derived from (sampling stream, seed node id), so results are
// independent of scheduling order.
SampledSubgraph sample_neighborhood(const HeteroGraph& g, const std::vector<Seed>& seeds,
                                    const std::vector<int>& fanout, const RngStream& sampling_stream);

}  // namespace kspace
