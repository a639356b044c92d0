#include "kspace/graph.hpp"

#include <algorithm>
#include <fstream>

#include "kspace/error.hpp"

namespace kspace {

namespace {
struct RawEdge {
    int32_t src, dst, type;
    int64_t ts;
};
}  // namespace

HeteroGraph HeteroGraph::build(const RelationalBundle& bundle) {
    const SchemaManifest& m = bundle.manifest;
    HeteroGraph g;

    g.node_base_.resize(m.tables.size() + 1, 0);
    for (size_t ti = 0; ti < m.tables.size(); ++ti)
        g.node_base_[ti + 1] = g.node_base_[ti] + bundle.tables[ti].n_rows;
    g.n_nodes_ = g.node_base_.back();

    // enumerate fk columns in manifest order: originals first, then twins
    for (size_t ti = 0; ti < m.tables.size(); ++ti)
        for (const auto& c : m.tables[ti].columns)
            if (c.kind == ColumnKind::kForeignKey) {
                EdgeTypeInfo t;
                t.src_table = static_cast<int32_t>(ti);
                t.dst_table = static_cast<int32_t>(m.table_index(c.target_table));
                t.fk_column = c.name;
                t.reversed = false;
                g.types_.push_back(t);
            }
    const int32_t n_orig = static_cast<int32_t>(g.types_.size());
    for (int32_t t = 0; t < n_orig; ++t) {
        EdgeTypeInfo rev = g.types_[static_cast<size_t>(t)];
        std::swap(rev.src_table, rev.dst_table);
        rev.reversed = true;
        rev.twin = t;
        g.types_[static_cast<size_t>(t)].twin = t + n_orig;
        g.types_.push_back(rev);
    }

    // collect original edges: one per non-null resolved fk
    std::vector<RawEdge> edges;
    {
        int32_t type = 0;
        for (size_t ti = 0; ti < m.tables.size(); ++ti) {
            const TableSpec& spec = m.tables[ti];
            const TableData& data = bundle.tables[ti];
            const auto ts_col = spec.timestamp_column();
            const ColumnData* times = ts_col ? &data.column(spec, *ts_col) : nullptr;
            for (size_t ci = 0; ci < spec.columns.size(); ++ci) {
                if (spec.columns[ci].kind != ColumnKind::kForeignKey) continue;
                const ColumnData& col = data.cols[ci];
                const int32_t dst_table = g.types_[static_cast<size_t>(type)].dst_table;
                for (size_t r = 0; r < col.refs.size(); ++r) {
                    if (col.refs[r] < 0) continue;
                    RawEdge e;
                    e.src = g.node_id(static_cast<int32_t>(ti), static_cast<int64_t>(r));
                    e.dst = g.node_id(dst_table, col.refs[r]);
                    e.type = type;
                    e.ts = times ? times->times[r] : kStaticTime;
                    edges.push_back(e);
                }
                ++type;
            }
        }
    }

    // out-edge CSR across both directions (each original edge contributes its
    // reversed twin as an out-edge of the original destination)
    std::vector<int64_t> deg(static_cast<size_t>(g.n_nodes_) + 1, 0);
    for (const auto& e : edges) {
        deg[static_cast<size_t>(e.src) + 1]++;
        deg[static_cast<size_t>(e.dst) + 1]++;
    }
    g.out_off_.assign(deg.begin(), deg.end());
    for (size_t i = 1; i < g.out_off_.size(); ++i) g.out_off_[i] += g.out_off_[i - 1];
    g.out_edges_.resize(static_cast<size_t>(g.out_off_.back()));
    {
        std::vector<int64_t> cursor(g.out_off_.begin(), g.out_off_.end() - 1);
        for (const auto& e : edges) {
            g.out_edges_[static_cast<size_t>(cursor[static_cast<size_t>(e.src)]++)] = {e.dst, e.type, e.ts};
            g.out_edges_[static_cast<size_t>(cursor[static_cast<size_t>(e.dst)]++)] = {
                e.src, g.types_[static_cast<size_t>(e.type)].twin, e.ts};
        }
    }
    for (int64_t v = 0; v < g.n_nodes_; ++v) {
        auto* b = g.out_edges_.data() + g.out_off_[static_cast<size_t>(v)];
        auto* e = g.out_edges_.data() + g.out_off_[static_cast<size_t>(v) + 1];
        std::sort(b, e, [](const OutEdge& x, const OutEdge& y) {
            return std::tie(x.ts, x.nbr, x.type) < std::tie(y.ts, y.nbr, y.type);
        });
    }

    // per-type in-edge CSR keyed by the destination's row within its table
    g.in_off_.resize(g.types_.size());
    g.in_edges_.resize(g.types_.size());
    for (size_t t = 0; t < g.types_.size(); ++t) {
        const int64_t rows = bundle.tables[static_cast<size_t>(g.types_[t].dst_table)].n_rows;
        g.in_off_[t].assign(static_cast<size_t>(rows) + 1, 0);
    }
    for (const auto& e : edges) {
        const auto& orig = g.types_[static_cast<size_t>(e.type)];
        g.in_off_[static_cast<size_t>(e.type)]
                 [static_cast<size_t>(e.dst - g.node_base_[static_cast<size_t>(orig.dst_table)]) + 1]++;
        const int32_t twin = orig.twin;
        g.in_off_[static_cast<size_t>(twin)]
                 [static_cast<size_t>(e.src - g.node_base_[static_cast<size_t>(orig.src_table)]) + 1]++;
    }
    for (size_t t = 0; t < g.types_.size(); ++t) {
        auto& off = g.in_off_[t];
        for (size_t i = 1; i < off.size(); ++i) off[i] += off[i - 1];
        g.in_edges_[t].resize(static_cast<size_t>(off.back()));
    }
    {
        std::vector<std::vector<int64_t>> cursor(g.types_.size());
        for (size_t t = 0; t < g.types_.size(); ++t)
            cursor[t].assign(g.in_off_[t].begin(), g.in_off_[t].end() - 1);
        for (const auto& e : edges) {
            const auto& orig = g.types_[static_cast<size_t>(e.type)];
            const int64_t dst_row = e.dst - g.node_base_[static_cast<size_t>(orig.dst_table)];
            const int64_t src_row = e.src - g.node_base_[static_cast<size_t>(orig.src_table)];
            g.in_edges_[static_cast<size_t>(e.type)]
                       [static_cast<size_t>(cursor[static_cast<size_t>(e.type)][static_cast<size_t>(dst_row)]++)] = {
                e.src, e.ts};
            g.in_edges_[static_cast<size_t>(orig.twin)]
                       [static_cast<size_t>(cursor[static_cast<size_t>(orig.twin)][static_cast<size_t>(src_row)]++)] = {
                e.dst, e.ts};
        }
    }
    for (size_t t = 0; t < g.types_.size(); ++t) {
        const auto& off = g.in_off_[t];
        for (size_t v = 0; v + 1 < off.size(); ++v) {
            auto* b = g.in_edges_[t].data() + off[v];
            auto* e = g.in_edges_[t].data() + off[v + 1];
            std::sort(b, e, [](const InEdge& x, const InEdge& y) {
                return std::tie(x.ts, x.src) < std::tie(y.ts, y.src);
            });
        }
    }
    return g;
}

int32_t HeteroGraph::node_table(int32_t node) const {
    auto it = std::upper_bound(node_base_.begin(), node_base_.end(), static_cast<int64_t>(node));
    return static_cast<int32_t>(it - node_base_.begin()) - 1;
}

int64_t HeteroGraph::node_row(int32_t node) const {
    return static_cast<int64_t>(node) - node_base_[static_cast<size_t>(node_table(node))];
}

int64_t HeteroGraph::admissible_out_degree(int32_t node, int64_t seed_time) const {
    const OutEdge* b = out_begin(node);
    const OutEdge* e = b + out_degree(node);
    auto it = std::upper_bound(b, e, seed_time, [](int64_t t, const OutEdge& x) { return t < x.ts; });
    return it - b;
}

const HeteroGraph::InEdge* HeteroGraph::in_begin(int32_t type, int32_t node) const {
    const int64_t row = static_cast<int64_t>(node) - node_base_[static_cast<size_t>(types_[static_cast<size_t>(type)].dst_table)];
    return in_edges_[static_cast<size_t>(type)].data() + in_off_[static_cast<size_t>(type)][static_cast<size_t>(row)];
}

int64_t HeteroGraph::in_degree(int32_t type, int32_t node) const {
    const auto& info = types_[static_cast<size_t>(type)];
    if (node_table(node) != info.dst_table) return 0;
    const int64_t row = static_cast<int64_t>(node) - node_base_[static_cast<size_t>(info.dst_table)];
    return in_off_[static_cast<size_t>(type)][static_cast<size_t>(row) + 1] -
           in_off_[static_cast<size_t>(type)][static_cast<size_t>(row)];
}

int64_t HeteroGraph::admissible_in_degree(int32_t type, int32_t node, int64_t seed_time) const {
    const int64_t deg = in_degree(type, node);
    if (deg == 0) return 0;
    const InEdge* b = in_begin(type, node);
    auto it = std::upper_bound(b, b + deg, seed_time, [](int64_t t, const InEdge& x) { return t < x.ts; });
    return it - b;
}

void HeteroGraph::dump_edges(const std::string& path, const RelationalBundle& bundle) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("dump_edges: cannot open " + path);
    f << "src_table,src_row,fk,dst_table,dst_row,timestamp\n";
    for (int64_t v = 0; v < n_nodes_; ++v) {
        const OutEdge* b = out_begin(static_cast<int32_t>(v));
        for (int64_t k = 0; k < out_degree(static_cast<int32_t>(v)); ++k) {
            const OutEdge& e = b[k];
            const auto& info = types_[static_cast<size_t>(e.type)];
            if (info.reversed) continue;
            f << bundle.manifest.tables[static_cast<size_t>(info.src_table)].name << ',' << node_row(static_cast<int32_t>(v))
              << ',' << info.fk_column << ',' << bundle.manifest.tables[static_cast<size_t>(info.dst_table)].name << ','
              << node_row(e.nbr) << ',';
            if (e.ts == kStaticTime) f << "static";
            else f << e.ts;
            f << '\n';
        }
    }
}

}  // namespace kspace
