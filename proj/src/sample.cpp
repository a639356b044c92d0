#include "kspace/sample.hpp"

#include <unordered_map>

#include "kspace/error.hpp"

namespace kspace {

int64_t SampledSubgraph::num_edges() const {
    int64_t n = 0;
    for (const auto& shell : shells)
        for (const auto& te : shell) n += static_cast<int64_t>(te.src.size());
    return n;
}

SampledSubgraph sample_neighborhood(const HeteroGraph& g, const std::vector<Seed>& seeds,
                                    const std::vector<int>& fanout, const RngStream& sampling_stream) {
    const size_t n_layers = fanout.size();
    const int32_t n_types = g.num_types();

    SampledSubgraph out;
    out.shells.resize(n_layers);
    for (auto& shell : out.shells) {
        shell.resize(static_cast<size_t>(n_types));
        for (int32_t t = 0; t < n_types; ++t) {
            shell[static_cast<size_t>(t)].type = t;
            shell[static_cast<size_t>(t)].reversed = g.types()[static_cast<size_t>(t)].reversed;
        }
    }

    for (size_t si = 0; si < seeds.size(); ++si) {
        const Seed& seed = seeds[si];
        if (seed.node < 0 || seed.node >= g.num_nodes())
            throw ContractError("sample_neighborhood: unknown seed node " + std::to_string(seed.node));
        RngStream rng = sampling_stream.derive("seed", seed.node);

        std::unordered_map<int32_t, int32_t> local_of;  // global -> local, this seed only
        auto add_node = [&](int32_t global) -> std::pair<int32_t, bool> {
            auto it = local_of.find(global);
            if (it != local_of.end()) return {it->second, false};
            const int32_t local = static_cast<int32_t>(out.nodes.size());
            out.nodes.push_back({global, g.node_table(global), static_cast<int32_t>(si), seed.time});
            local_of.emplace(global, local);
            return {local, true};
        };

        const int32_t seed_local = add_node(seed.node).first;
        out.seed_locals.push_back(seed_local);

        std::vector<int32_t> frontier = {seed_local};
        for (size_t layer = 0; layer < n_layers; ++layer) {
            std::vector<int32_t> next;
            for (int32_t v_local : frontier) {
                const int32_t v_global = out.nodes[static_cast<size_t>(v_local)].global;
                for (int32_t t = 0; t < n_types; ++t) {
                    const int64_t adm = g.admissible_in_degree(t, v_global, seed.time);
                    if (adm == 0) continue;
                    const HeteroGraph::InEdge* in = g.in_begin(t, v_global);
                    auto& te = out.shells[layer][static_cast<size_t>(t)];
                    const auto take = [&](int64_t k) {
                        const auto [src_local, fresh] = add_node(in[k].src);
                        if (fresh) next.push_back(src_local);
                        te.src.push_back(src_local);
                        te.dst.push_back(v_local);
                        te.ts.push_back(in[k].ts);
                    };
                    if (adm <= fanout[layer]) {
                        for (int64_t k = 0; k < adm; ++k) take(k);
                    } else {
                        for (uint32_t k : rng.sample_without_replacement(static_cast<uint32_t>(adm),
                                                                         static_cast<uint32_t>(fanout[layer])))
                            take(k);
                    }
                }
            }
            frontier = std::move(next);
        }
    }

    // drop empty per-type slots, preserving type order
    for (auto& shell : out.shells) {
        std::vector<SampledSubgraph::TypedEdges> kept;
        for (auto& te : shell)
            if (!te.src.empty()) kept.push_back(std::move(te));
        shell = std::move(kept);
    }
    return out;
}

}  // namespace kspace
