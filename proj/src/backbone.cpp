#include "kspace/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "kspace/error.hpp"

namespace kspace::model {

void BackboneConfig::validate() const {
    if (layers < 1) throw ConfigError("backbone: layers must be >= 1");
    if (hidden < 2 || hidden % 2 != 0) throw ConfigError("backbone: hidden width must be even (RoPE pairs)");
    if (conv == ConvKind::kGatv2 && (heads < 1 || hidden % heads != 0))
        throw ConfigError("backbone: attention heads must divide the hidden width");
    if (rope_base <= 1.0) throw ConfigError("backbone: rope base must exceed 1");
}

void ParamStore::add(const std::string& name, Tensor2 value) {
    if (values_.count(name)) throw ContractError("params: duplicate name " + name);
    order_.push_back(name);
    values_.emplace(name, std::move(value));
}

Tensor2& ParamStore::at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("params: unknown name " + name);
    return it->second;
}

const Tensor2& ParamStore::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("params: unknown name " + name);
    return it->second;
}

std::map<std::string, Tensor2> ParamStore::to_map() const {
    std::map<std::string, Tensor2> out;
    for (const auto& n : order_) out.emplace(n, at(n));
    return out;
}

ParamStore ParamStore::from_map(const std::map<std::string, Tensor2>& m, const std::vector<std::string>& order) {
    ParamStore ps;
    for (const auto& n : order) ps.add(n, m.at(n));
    return ps;
}

ad::NodeId TapeParams::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw ContractError("tape params: unknown name " + name);
    return it->second;
}

TapeParams register_params(ad::Tape& tape, const ParamStore& params) {
    TapeParams reg;
    for (const auto& name : params.names()) {
        const ad::NodeId id = tape.leaf(params.at(name), /*requires_grad=*/true);
        reg.ids.emplace(name, id);
        reg.ordered.emplace_back(name, id);
    }
    return reg;
}

std::map<std::string, Tensor2> named_grads(const TapeParams& reg, const ad::GradMap& grads) {
    std::map<std::string, Tensor2> out;
    for (const auto& [name, id] : reg.ordered) {
        auto it = grads.find(id);
        if (it != grads.end()) out.emplace(name, it->second);
    }
    return out;
}

namespace {

Tensor2 xavier(RngStream& rng, int64_t rows, int64_t cols) {
    Tensor2 t(rows, cols);
    const double scale = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}

}  // namespace

ParamStore init_backbone_params(const BackboneConfig& cfg, int feature_width, RngStream rng) {
    cfg.validate();
    const int d = cfg.hidden;
    ParamStore ps;
    ps.add("in_proj.W", xavier(rng, feature_width, d));
    ps.add("in_proj.b", Tensor2(1, d));
    for (int l = 0; l < cfg.layers; ++l) {
        for (const char* sub : {"rev", "fwd"}) {
            const std::string p = "blk" + std::to_string(l) + "." + sub + ".";
            ps.add(p + "ln1.g", Tensor2::full(1, d, 1.0));
            ps.add(p + "ln1.b", Tensor2(1, d));
            ps.add(p + "conv.W", xavier(rng, d, d));
            ps.add(p + "conv.b", Tensor2(1, d));
            if (cfg.conv == ConvKind::kGatv2) ps.add(p + "att", xavier(rng, d / cfg.heads, cfg.heads));
            ps.add(p + "scale1", Tensor2(1, 1));  // zero: blocks start as identity
            ps.add(p + "ln2.g", Tensor2::full(1, d, 1.0));
            ps.add(p + "ln2.b", Tensor2(1, d));
            ps.add(p + "ff.W", xavier(rng, d, d));
            ps.add(p + "ff.b", Tensor2(1, d));
            ps.add(p + "scale2", Tensor2(1, 1));
        }
    }
    ps.add("out_proj.W", xavier(rng, d, d));
    ps.add("out_proj.b", Tensor2(1, d));
    return ps;
}

ad::NodeId input_project(ad::Tape& tape, const TapeParams& p, ad::NodeId features) {
    return tape.row_broadcast_add(tape.matmul(features, p.at("in_proj.W")), p.at("in_proj.b"));
}

ad::NodeId rope_table(ad::Tape& tape, ad::NodeId x, const std::vector<int32_t>& table_of_row, double base) {
    return tape.rope_rotate(x, table_of_row, base);
}

namespace {

// conv(z, E) restricted to segment-compacted destinations; z holds the linear
// projection of LN1(x) at the edge sources (and destinations for attention).
ad::NodeId conv_aggregate(ad::Tape& tape, const TapeParams& p, const BackboneConfig& cfg,
                          const std::string& prefix, ad::NodeId z_src, ad::NodeId z_dst,
                          const std::vector<int32_t>& dst_compact, int64_t n_dst) {
    if (cfg.conv == ConvKind::kGcn) return tape.scatter_mean_rows(z_src, dst_compact, n_dst);

    const int dh = cfg.hidden / cfg.heads;
    const ad::NodeId att = p.at(prefix + "att");
    const ad::NodeId pre = tape.silu(tape.add(z_src, z_dst));
    std::vector<ad::NodeId> scores;
    for (int h = 0; h < cfg.heads; ++h)
        scores.push_back(tape.matmul(tape.slice_cols(pre, h * dh, (h + 1) * dh), tape.slice_cols(att, h, h + 1)));
    ad::NodeId score = scores[0];
    for (size_t h = 1; h < scores.size(); ++h) score = tape.concat_cols(score, scores[static_cast<size_t>(h)]);
    const ad::NodeId alpha = tape.segment_softmax(score, dst_compact, n_dst);

    ad::NodeId out = -1;
    for (int h = 0; h < cfg.heads; ++h) {
        const ad::NodeId mh = tape.slice_cols(z_src, h * dh, (h + 1) * dh);
        const ad::NodeId wh = tape.col_broadcast_mul(mh, tape.slice_cols(alpha, h, h + 1));
        const ad::NodeId ch = tape.scatter_sum_rows(wh, dst_compact, n_dst);
        out = (h == 0) ? ch : tape.concat_cols(out, ch);
    }
    return out;
}

// Pointwise tail shared by both entry points: y -> scale2*SiLU(lin(LN2(y))).
ad::NodeId pointwise_tail(ad::Tape& tape, const TapeParams& p, const std::string& prefix, ad::NodeId y) {
    const ad::NodeId v = tape.layer_norm(y, p.at(prefix + "ln2.g"), p.at(prefix + "ln2.b"));
    const ad::NodeId q = tape.row_broadcast_add(tape.matmul(v, p.at(prefix + "ff.W")), p.at(prefix + "ff.b"));
    return tape.scale_param(tape.silu(q), p.at(prefix + "scale2"));
}

std::string sub_prefix(int layer, bool reversed) {
    return "blk" + std::to_string(layer) + "." + (reversed ? "rev" : "fwd") + ".";
}

}  // namespace

ad::NodeId smpnn_sub_block(ad::Tape& tape, const TapeParams& p, const BackboneConfig& cfg,
                           const std::string& prefix, ad::NodeId x, const SampledSubgraph::TypedEdges& edges) {
    const int64_t n = tape.value(x).rows();
    const ad::NodeId u = tape.layer_norm(x, p.at(prefix + "ln1.g"), p.at(prefix + "ln1.b"));
    const ad::NodeId z = tape.row_broadcast_add(tape.matmul(u, p.at(prefix + "conv.W")), p.at(prefix + "conv.b"));
    const ad::NodeId z_src = tape.gather_rows(z, edges.src);
    const ad::NodeId z_dst = tape.gather_rows(z, edges.dst);
    const ad::NodeId c = conv_aggregate(tape, p, cfg, prefix, z_src, z_dst, edges.dst, n);
    const ad::NodeId branch = tape.scale_param(tape.silu(c), p.at(prefix + "scale1"));
    const ad::NodeId y = tape.add(x, branch);
    return pointwise_tail(tape, p, prefix, y);
}

ad::NodeId hetero_block(ad::Tape& tape, const TapeParams& p, const BackboneConfig& cfg, int layer,
                        ad::NodeId x, const std::vector<SampledSubgraph::TypedEdges>& shell) {
    const int64_t n = tape.value(x).rows();
    std::vector<double> count(static_cast<size_t>(n), 0.0);
    std::vector<ad::NodeId> msgs;
    std::vector<int32_t> all_dsts;

    // lin(LN1(x)) is shared by every edge type of a direction; computing it
    // once over all rows leaves only gathers at the edge level
    ad::NodeId z_dir[2] = {-1, -1};
    auto projected = [&](bool reversed) {
        auto& z = z_dir[reversed ? 1 : 0];
        if (z < 0) {
            const std::string prefix = sub_prefix(layer, reversed);
            const ad::NodeId u = tape.layer_norm(x, p.at(prefix + "ln1.g"), p.at(prefix + "ln1.b"));
            z = tape.row_broadcast_add(tape.matmul(u, p.at(prefix + "conv.W")), p.at(prefix + "conv.b"));
        }
        return z;
    };

    for (const auto& te : shell) {
        if (te.src.empty()) continue;
        const std::string prefix = sub_prefix(layer, te.reversed);

        // unique destinations, ascending local id
        std::vector<int32_t> uniq = te.dst;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        std::vector<int32_t> compact(te.dst.size());
        for (size_t e = 0; e < te.dst.size(); ++e)
            compact[e] = static_cast<int32_t>(std::lower_bound(uniq.begin(), uniq.end(), te.dst[e]) - uniq.begin());
        for (int32_t d : uniq) count[static_cast<size_t>(d)] += 1.0;

        const ad::NodeId z = projected(te.reversed);
        const ad::NodeId zs = tape.gather_rows(z, te.src);
        const ad::NodeId zd = cfg.conv == ConvKind::kGatv2 ? tape.gather_rows(z, te.dst) : -1;
        const ad::NodeId c = conv_aggregate(tape, p, cfg, prefix, zs, zd, compact, static_cast<int64_t>(uniq.size()));
        const ad::NodeId branch = tape.scale_param(tape.silu(c), p.at(prefix + "scale1"));
        const ad::NodeId y = tape.add(tape.gather_rows(x, uniq), branch);
        msgs.push_back(pointwise_tail(tape, p, prefix, y));
        all_dsts.insert(all_dsts.end(), uniq.begin(), uniq.end());
    }

    if (msgs.empty()) return x;  // A = 0, C = 0: identity

    const ad::NodeId rows = msgs.size() == 1 ? msgs[0] : tape.concat_rows(msgs);
    const ad::NodeId aggregate = tape.scatter_sum_rows(rows, all_dsts, n);
    std::vector<double> inv(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) inv[static_cast<size_t>(r)] = 1.0 / std::max(count[static_cast<size_t>(r)], 1.0);
    return tape.add(x, tape.row_scale_const(aggregate, std::move(inv)));
}

ad::NodeId backbone_forward(ad::Tape& tape, const BackboneConfig& cfg, const TapeParams& p,
                            const SampledSubgraph& sg, ad::NodeId features, bool register_boundary) {
    std::vector<int32_t> table_of_row(sg.nodes.size());
    for (size_t i = 0; i < sg.nodes.size(); ++i) table_of_row[i] = sg.nodes[i].table;

    ad::NodeId x = input_project(tape, p, features);
    x = rope_table(tape, x, table_of_row, cfg.rope_base);
    for (int l = 0; l < cfg.layers; ++l) {
        // outermost shell first: block l consumes sampled shell (layers-1-l)
        const size_t shell_index = static_cast<size_t>(cfg.layers - 1 - l);
        static const std::vector<SampledSubgraph::TypedEdges> kEmpty;
        const auto& shell = shell_index < sg.shells.size() ? sg.shells[shell_index] : kEmpty;
        x = hetero_block(tape, p, cfg, l, x, shell);
    }
    const ad::NodeId h = tape.row_broadcast_add(tape.matmul(x, p.at("out_proj.W")), p.at("out_proj.b"));
    if (register_boundary) tape.set_boundary(h);
    return h;
}

nlohmann::json to_json(const BackboneConfig& cfg) {
    return {{"layers", cfg.layers},
            {"hidden", cfg.hidden},
            {"heads", cfg.heads},
            {"conv", cfg.conv == ConvKind::kGcn ? "gcn" : "gatv2"},
            {"rope_base", cfg.rope_base}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    cfg.layers = j.value("layers", cfg.layers);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.heads = j.value("heads", cfg.heads);
    const std::string conv = j.value("conv", std::string("gatv2"));
    if (conv == "gcn") cfg.conv = ConvKind::kGcn;
    else if (conv == "gatv2") cfg.conv = ConvKind::kGatv2;
    else throw ConfigError("backbone.conv must be 'gcn' or 'gatv2'");
    cfg.rope_base = j.value("rope_base", cfg.rope_base);
    cfg.validate();
    return cfg;
}

}  // namespace kspace::model
