// Test-only straight-line reimplementation of the hetero block: plain loops
// over full-shape arrays, one edge type at a time, independent of the tape.
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "kspace/backbone.hpp"
#include "kspace/sample.hpp"
#include "kspace/tensor.hpp"

namespace kspace::testing {

inline double nsilu(double x) {
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return x * s;
}

inline Tensor2 nlayer_norm(const Tensor2& x, const Tensor2& g, const Tensor2& b, double eps = 1e-5) {
    Tensor2 out(x.rows(), x.cols());
    for (int64_t r = 0; r < x.rows(); ++r) {
        double mu = 0;
        for (int64_t c = 0; c < x.cols(); ++c) mu += x.at(r, c);
        mu /= static_cast<double>(x.cols());
        double var = 0;
        for (int64_t c = 0; c < x.cols(); ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
        var /= static_cast<double>(x.cols());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t c = 0; c < x.cols(); ++c) out.at(r, c) = g.at(0, c) * ((x.at(r, c) - mu) * inv) + b.at(0, c);
    }
    return out;
}

inline Tensor2 nlinear(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
    Tensor2 out(x.rows(), w.cols());
    for (int64_t r = 0; r < x.rows(); ++r)
        for (int64_t c = 0; c < w.cols(); ++c) {
            double s = b.at(0, c);
            for (int64_t k = 0; k < x.cols(); ++k) s += x.at(r, k) * w.at(k, c);
            out.at(r, c) = s;
        }
    return out;
}

// Full-shape SMPNN sub-block per the block diagram:
//   out = scale2*SiLU(lin2(LN2(x + scale1*SiLU(conv(lin1(LN1(x)), E)))))
// conv: per destination, mean of projected sources (gcn) or per-head additive
// attention with SiLU scoring over in-edges (gatv2).
inline Tensor2 naive_sub_block(const model::ParamStore& ps, const std::string& prefix,
                               const model::BackboneConfig& cfg, const Tensor2& x,
                               const SampledSubgraph::TypedEdges& e) {
    const int64_t n = x.rows(), d = x.cols();
    const Tensor2 z = nlinear(nlayer_norm(x, ps.at(prefix + "ln1.g"), ps.at(prefix + "ln1.b")),
                              ps.at(prefix + "conv.W"), ps.at(prefix + "conv.b"));
    Tensor2 conv(n, d);
    if (cfg.conv == model::ConvKind::kGcn) {
        std::vector<int64_t> deg(static_cast<size_t>(n), 0);
        for (size_t k = 0; k < e.src.size(); ++k) {
            deg[static_cast<size_t>(e.dst[k])]++;
            for (int64_t c = 0; c < d; ++c) conv.at(e.dst[k], c) += z.at(e.src[k], c);
        }
        for (int64_t r = 0; r < n; ++r)
            if (deg[static_cast<size_t>(r)])
                for (int64_t c = 0; c < d; ++c) conv.at(r, c) /= static_cast<double>(deg[static_cast<size_t>(r)]);
    } else {
        const int heads = cfg.heads;
        const int64_t dh = d / heads;
        const Tensor2& att = ps.at(prefix + "att");
        for (int64_t v = 0; v < n; ++v) {
            std::vector<size_t> in_edges;
            for (size_t k = 0; k < e.dst.size(); ++k)
                if (e.dst[k] == v) in_edges.push_back(k);
            if (in_edges.empty()) continue;
            for (int h = 0; h < heads; ++h) {
                std::vector<double> score(in_edges.size());
                for (size_t k = 0; k < in_edges.size(); ++k) {
                    double s = 0;
                    for (int64_t c = 0; c < dh; ++c) {
                        const double pre = z.at(e.src[in_edges[k]], h * dh + c) + z.at(v, h * dh + c);
                        s += att.at(c, h) * nsilu(pre);
                    }
                    score[k] = s;
                }
                double mx = score[0];
                for (double s : score) mx = std::max(mx, s);
                double denom = 0;
                for (double& s : score) {
                    s = std::exp(s - mx);
                    denom += s;
                }
                for (size_t k = 0; k < in_edges.size(); ++k)
                    for (int64_t c = 0; c < dh; ++c)
                        conv.at(v, h * dh + c) += (score[k] / denom) * z.at(e.src[in_edges[k]], h * dh + c);
            }
        }
    }
    const double s1 = ps.at(prefix + "scale1").at(0, 0);
    Tensor2 y = x;
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) y.at(r, c) += s1 * nsilu(conv.at(r, c));
    Tensor2 out = nlinear(nlayer_norm(y, ps.at(prefix + "ln2.g"), ps.at(prefix + "ln2.b")), ps.at(prefix + "ff.W"),
                          ps.at(prefix + "ff.b"));
    const double s2 = ps.at(prefix + "scale2").at(0, 0);
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) out.at(r, c) = s2 * nsilu(out.at(r, c));
    return out;
}

// Hetero block, literal per-type loop:
//   A = 0; C = 0
//   for each type t: D = unique dst(E_t); C += 1_D; msg = B_t(x, E_t);
//                    A += msg * 1_D
//   return x + A / max(C, 1)
inline Tensor2 naive_hetero_block(const model::ParamStore& ps, int layer, const model::BackboneConfig& cfg,
                                  const Tensor2& x, const std::vector<SampledSubgraph::TypedEdges>& shell) {
    const int64_t n = x.rows(), d = x.cols();
    Tensor2 a(n, d);
    std::vector<double> count(static_cast<size_t>(n), 0.0);
    for (const auto& te : shell) {
        if (te.src.empty()) continue;
        std::set<int32_t> dsts(te.dst.begin(), te.dst.end());
        for (int32_t v : dsts) count[static_cast<size_t>(v)] += 1.0;
        const std::string prefix = "blk" + std::to_string(layer) + "." + (te.reversed ? "rev" : "fwd") + ".";
        const Tensor2 msg = naive_sub_block(ps, prefix, cfg, x, te);
        for (int32_t v : dsts)
            for (int64_t c = 0; c < d; ++c) a.at(v, c) += msg.at(v, c);
    }
    Tensor2 out = x;
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) out.at(r, c) += a.at(r, c) / std::max(count[static_cast<size_t>(r)], 1.0);
    return out;
}

}  // namespace kspace::testing
