#include "kspace/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kspace/blas.hpp"
#include "kspace/error.hpp"

namespace kspace::ad {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_finite_if_enabled(const Tensor2& t) {
    if (Tensor2::checked_mode()) t.check_finite();
}

}  // namespace

NodeId Tape::push(Node n) {
    check_finite_if_enabled(n.value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::check_id(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw ContractError("tape: bad node id");
    return id;
}

bool Tape::any_needs(const std::vector<NodeId>& in) const {
    for (NodeId i : in)
        if (nodes_[i].needs) return true;
    return false;
}

NodeId Tape::leaf(Tensor2 value, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.needs = requires_grad;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    Node n;
    n.op = Op::kMatmul;
    n.in = {a, b};
    n.needs = any_needs(n.in);
    n.value = gemm(nodes_[a].value, nodes_[b].value);
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
    const Tensor2& x = nodes_[check_id(a)].value;
    Tensor2 y(x.cols(), x.rows());
    for (int64_t r = 0; r < x.rows(); ++r)
        for (int64_t c = 0; c < x.cols(); ++c) y.at(c, r) = x.at(r, c);
    Node n;
    n.op = Op::kTranspose;
    n.in = {a};
    n.needs = any_needs(n.in);
    n.value = std::move(y);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor2& x = nodes_[check_id(a)].value;
    const Tensor2& y = nodes_[check_id(b)].value;
    if (!x.same_shape(y)) throw DimensionError("add: shape mismatch");
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += y.data()[i];
    Node n;
    n.op = Op::kAdd;
    n.in = {a, b};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::row_broadcast_add(NodeId x_id, NodeId bias_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    const Tensor2& b = nodes_[check_id(bias_id)].value;
    if (b.rows() != 1 || b.cols() != x.cols()) throw DimensionError("row_broadcast_add: bias shape");
    Tensor2 out = x;
    for (int64_t r = 0; r < out.rows(); ++r) {
        double* orow = out.row(r);
        for (int64_t c = 0; c < out.cols(); ++c) orow[c] += b.data()[c];
    }
    Node n;
    n.op = Op::kRowBroadcastAdd;
    n.in = {x_id, bias_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor2& x = nodes_[check_id(a)].value;
    const Tensor2& y = nodes_[check_id(b)].value;
    if (!x.same_shape(y)) throw DimensionError("mul: shape mismatch");
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= y.data()[i];
    Node n;
    n.op = Op::kMul;
    n.in = {a, b};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::col_broadcast_mul(NodeId x_id, NodeId col_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    const Tensor2& v = nodes_[check_id(col_id)].value;
    if (v.cols() != 1 || v.rows() != x.rows()) throw DimensionError("col_broadcast_mul: column shape");
    Tensor2 out = x;
    for (int64_t r = 0; r < out.rows(); ++r) {
        const double s = v.at(r, 0);
        double* orow = out.row(r);
        for (int64_t c = 0; c < out.cols(); ++c) orow[c] *= s;
    }
    Node n;
    n.op = Op::kColBroadcastMul;
    n.in = {x_id, col_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::silu(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = out.data()[i];
        out.data()[i] = v * stable_sigmoid(v);
    }
    Node n;
    n.op = Op::kSilu;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = stable_sigmoid(out.data()[i]);
    Node n;
    n.op = Op::kSigmoid;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::log(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
    Node n;
    n.op = Op::kLog;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::neg(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = -out.data()[i];
    Node n;
    n.op = Op::kNeg;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::softplus(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = out.data()[i];
        out.data()[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    }
    Node n;
    n.op = Op::kSoftplus;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x_id, NodeId gain_id, NodeId bias_id, double eps) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    const Tensor2& g = nodes_[check_id(gain_id)].value;
    const Tensor2& b = nodes_[check_id(bias_id)].value;
    if (g.rows() != 1 || g.cols() != x.cols() || b.rows() != 1 || b.cols() != x.cols())
        throw DimensionError("layer_norm: affine shape");
    const int64_t d = x.cols();
    Tensor2 out(x.rows(), d);
    std::vector<double> cache(static_cast<size_t>(2 * x.rows()));
    for (int64_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r);
        double mu = 0.0;
        for (int64_t c = 0; c < d; ++c) mu += xr[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double dv = xr[c] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        cache[static_cast<size_t>(2 * r)] = mu;
        cache[static_cast<size_t>(2 * r + 1)] = inv;
        double* orow = out.row(r);
        for (int64_t c = 0; c < d; ++c) orow[c] = g.data()[c] * ((xr[c] - mu) * inv) + b.data()[c];
    }
    Node n;
    n.op = Op::kLayerNorm;
    n.in = {x_id, gain_id, bias_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.aux = std::move(cache);
    n.c0 = eps;
    return push(std::move(n));
}

NodeId Tape::softmax_row(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out(x.rows(), x.cols());
    for (int64_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r);
        double mx = xr[0];
        for (int64_t c = 1; c < x.cols(); ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        double* orow = out.row(r);
        for (int64_t c = 0; c < x.cols(); ++c) {
            orow[c] = std::exp(xr[c] - mx);
            sum += orow[c];
        }
        for (int64_t c = 0; c < x.cols(); ++c) orow[c] /= sum;
    }
    Node n;
    n.op = Op::kSoftmaxRow;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::scale_const(NodeId x_id, double c) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    Node n;
    n.op = Op::kScaleConst;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.c0 = c;
    return push(std::move(n));
}

NodeId Tape::scale_param(NodeId x_id, NodeId s_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    const Tensor2& s = nodes_[check_id(s_id)].value;
    if (!s.is_scalar()) throw DimensionError("scale_param: scale must be 1x1");
    Tensor2 out = x;
    const double c = s.at(0, 0);
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    Node n;
    n.op = Op::kScaleParam;
    n.in = {x_id, s_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
    const Tensor2& x = nodes_[check_id(a)].value;
    const Tensor2& y = nodes_[check_id(b)].value;
    if (x.rows() != y.rows()) throw DimensionError("concat_cols: row mismatch");
    Tensor2 out(x.rows(), x.cols() + y.cols());
    for (int64_t r = 0; r < x.rows(); ++r) {
        std::copy(x.row(r), x.row(r) + x.cols(), out.row(r));
        std::copy(y.row(r), y.row(r) + y.cols(), out.row(r) + x.cols());
    }
    Node n;
    n.op = Op::kConcatCols;
    n.in = {a, b};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.i0 = x.cols();
    return push(std::move(n));
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    int64_t rows = 0;
    const int64_t cols = nodes_[check_id(parts[0])].value.cols();
    for (NodeId p : parts) {
        const Tensor2& t = nodes_[check_id(p)].value;
        if (t.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        rows += t.rows();
    }
    Tensor2 out(rows, cols);
    int64_t at = 0;
    for (NodeId p : parts) {
        const Tensor2& t = nodes_[p].value;
        std::copy(t.data(), t.data() + t.size(), out.row(at));
        at += t.rows();
    }
    Node n;
    n.op = Op::kConcatRows;
    n.in = parts;
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId x_id, int64_t c0, int64_t c1) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (c0 < 0 || c1 > x.cols() || c0 >= c1) throw DimensionError("slice_cols: bad range");
    Tensor2 out(x.rows(), c1 - c0);
    for (int64_t r = 0; r < x.rows(); ++r) std::copy(x.row(r) + c0, x.row(r) + c1, out.row(r));
    Node n;
    n.op = Op::kSliceCols;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.i0 = c0;
    n.i1 = c1;
    return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId x_id, std::vector<int32_t> idx) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out(static_cast<int64_t>(idx.size()), x.cols());
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= x.rows()) throw DimensionError("gather_rows: index out of range");
        std::copy(x.row(idx[r]), x.row(idx[r]) + x.cols(), out.row(static_cast<int64_t>(r)));
    }
    Node n;
    n.op = Op::kGatherRows;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.idx = std::move(idx);
    return push(std::move(n));
}

NodeId Tape::scatter_mean_rows(NodeId x_id, std::vector<int32_t> dst, int64_t out_rows) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (static_cast<int64_t>(dst.size()) != x.rows()) throw DimensionError("scatter_mean_rows: index count");
    Tensor2 out(out_rows, x.cols());
    std::vector<double> count(static_cast<size_t>(out_rows), 0.0);
    for (size_t r = 0; r < dst.size(); ++r) {
        if (dst[r] < 0 || dst[r] >= out_rows) throw DimensionError("scatter_mean_rows: index out of range");
        count[static_cast<size_t>(dst[r])] += 1.0;
        const double* xr = x.row(static_cast<int64_t>(r));
        double* orow = out.row(dst[r]);
        for (int64_t c = 0; c < x.cols(); ++c) orow[c] += xr[c];
    }
    for (int64_t r = 0; r < out_rows; ++r) {
        if (count[static_cast<size_t>(r)] > 0.0) {
            const double inv = 1.0 / count[static_cast<size_t>(r)];
            double* orow = out.row(r);
            for (int64_t c = 0; c < x.cols(); ++c) orow[c] *= inv;
        }
    }
    Node n;
    n.op = Op::kScatterMeanRows;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.idx = std::move(dst);
    n.aux = std::move(count);
    n.i0 = out_rows;
    return push(std::move(n));
}

NodeId Tape::scatter_sum_rows(NodeId x_id, std::vector<int32_t> dst, int64_t out_rows) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (static_cast<int64_t>(dst.size()) != x.rows()) throw DimensionError("scatter_sum_rows: index count");
    Tensor2 out(out_rows, x.cols());
    for (size_t r = 0; r < dst.size(); ++r) {
        if (dst[r] < 0 || dst[r] >= out_rows) throw DimensionError("scatter_sum_rows: index out of range");
        const double* xr = x.row(static_cast<int64_t>(r));
        double* orow = out.row(dst[r]);
        for (int64_t c = 0; c < x.cols(); ++c) orow[c] += xr[c];
    }
    Node n;
    n.op = Op::kScatterSumRows;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.idx = std::move(dst);
    n.i0 = out_rows;
    return push(std::move(n));
}

NodeId Tape::segment_softmax(NodeId x_id, std::vector<int32_t> seg, int64_t n_segments) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (static_cast<int64_t>(seg.size()) != x.rows()) throw DimensionError("segment_softmax: index count");
    const int64_t cols = x.cols();
    Tensor2 out = x;
    std::vector<double> mx(static_cast<size_t>(n_segments * cols), -std::numeric_limits<double>::infinity());
    std::vector<double> sum(static_cast<size_t>(n_segments * cols), 0.0);
    for (size_t r = 0; r < seg.size(); ++r) {
        if (seg[r] < 0 || seg[r] >= n_segments) throw DimensionError("segment_softmax: segment out of range");
        for (int64_t c = 0; c < cols; ++c) {
            double& m = mx[static_cast<size_t>(seg[r] * cols + c)];
            m = std::max(m, x.at(static_cast<int64_t>(r), c));
        }
    }
    for (size_t r = 0; r < seg.size(); ++r)
        for (int64_t c = 0; c < cols; ++c) {
            double& o = out.at(static_cast<int64_t>(r), c);
            o = std::exp(o - mx[static_cast<size_t>(seg[r] * cols + c)]);
            sum[static_cast<size_t>(seg[r] * cols + c)] += o;
        }
    for (size_t r = 0; r < seg.size(); ++r)
        for (int64_t c = 0; c < cols; ++c) out.at(static_cast<int64_t>(r), c) /= sum[static_cast<size_t>(seg[r] * cols + c)];
    Node n;
    n.op = Op::kSegmentSoftmax;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.idx = std::move(seg);
    n.i0 = n_segments;
    return push(std::move(n));
}

NodeId Tape::rope_rotate(NodeId x_id, std::vector<int32_t> position, double base) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (x.cols() % 2 != 0) throw DimensionError("rope_rotate: odd width");
    if (static_cast<int64_t>(position.size()) != x.rows()) throw DimensionError("rope_rotate: position count");
    const int64_t half = x.cols() / 2;
    Tensor2 out(x.rows(), x.cols());
    for (int64_t r = 0; r < x.rows(); ++r) {
        const double m = static_cast<double>(position[static_cast<size_t>(r)]);
        const double* xr = x.row(r);
        double* orow = out.row(r);
        for (int64_t p = 0; p < half; ++p) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(x.cols()));
            const double a = m * theta;
            const double ca = std::cos(a), sa = std::sin(a);
            const double x0 = xr[2 * p], x1 = xr[2 * p + 1];
            orow[2 * p] = ca * x0 - sa * x1;
            orow[2 * p + 1] = sa * x0 + ca * x1;
        }
    }
    Node n;
    n.op = Op::kRopeRotate;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.idx = std::move(position);
    n.c0 = base;
    return push(std::move(n));
}

NodeId Tape::row_scale_const(NodeId x_id, std::vector<double> scale) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    if (static_cast<int64_t>(scale.size()) != x.rows()) throw DimensionError("row_scale_const: scale count");
    Tensor2 out = x;
    for (int64_t r = 0; r < out.rows(); ++r) {
        const double s = scale[static_cast<size_t>(r)];
        double* orow = out.row(r);
        for (int64_t c = 0; c < out.cols(); ++c) orow[c] *= s;
    }
    Node n;
    n.op = Op::kRowScaleConst;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.aux = std::move(scale);
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId x_id) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x.data()[i];
    Node n;
    n.op = Op::kSumAll;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = Tensor2::scalar(s);
    return push(std::move(n));
}

NodeId Tape::clamp(NodeId x_id, double lo, double hi) {
    const Tensor2& x = nodes_[check_id(x_id)].value;
    Tensor2 out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::min(std::max(out.data()[i], lo), hi);
    Node n;
    n.op = Op::kClamp;
    n.in = {x_id};
    n.needs = any_needs(n.in);
    n.value = std::move(out);
    n.c0 = lo;
    n.c1 = hi;
    return push(std::move(n));
}

void Tape::set_boundary(NodeId h) {
    check_id(h);
    if (boundary_ >= 0) throw ContractError("tape: boundary already registered");
    boundary_ = h;
    nodes_[h].needs = true;
    boundary_captured_ = false;
}

const Tensor2& Tape::boundary_grad() const {
    if (!boundary_captured_) throw ContractError("tape: boundary gradient not captured yet");
    return boundary_grad_;
}

void Tape::accumulate(std::vector<Tensor2>& grad, std::vector<char>& has, NodeId id, const Tensor2& g) {
    if (!has[static_cast<size_t>(id)]) {
        grad[static_cast<size_t>(id)] = g;
        has[static_cast<size_t>(id)] = 1;
        return;
    }
    Tensor2& acc = grad[static_cast<size_t>(id)];
    for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
}

GradMap Tape::backward_from(NodeId loss, double seed) {
    check_id(loss);
    if (!nodes_[loss].value.is_scalar()) throw ContractError("backward_from: loss must be scalar");
    std::vector<Tensor2> grad(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    accumulate(grad, has, loss, Tensor2::scalar(seed));
    return sweep(grad, has, loss, /*stop_at_boundary=*/true);
}

GradMap Tape::resume_backward(const Tensor2& injected) {
    if (boundary_ < 0) throw ContractError("resume_backward: no boundary registered");
    if (!boundary_captured_) throw ContractError("resume_backward: call backward_from first");
    if (!injected.same_shape(nodes_[boundary_].value))
        throw DimensionError("resume_backward: injected gradient shape mismatch");
    std::vector<Tensor2> grad(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    accumulate(grad, has, boundary_, injected);
    return sweep(grad, has, boundary_, /*stop_at_boundary=*/false);
}

GradMap Tape::sweep(std::vector<Tensor2>& grad, std::vector<char>& has, NodeId from, bool stop_at_boundary) {
    GradMap result;
    for (NodeId id = from; id >= 0; --id) {
        if (!has[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs) continue;
        if (stop_at_boundary && id == boundary_) {
            boundary_grad_ = grad[static_cast<size_t>(id)];
            boundary_captured_ = true;
            continue;  // captured, not propagated
        }
        if (n.op == Op::kLeaf) {
            if (n.requires_grad) result.emplace(id, std::move(grad[static_cast<size_t>(id)]));
            continue;
        }
        backprop_node(n, grad[static_cast<size_t>(id)], grad, has);
        grad[static_cast<size_t>(id)] = Tensor2();  // release
    }
    return result;
}

void Tape::backprop_node(const Node& n, const Tensor2& g, std::vector<Tensor2>& grad, std::vector<char>& has) {
    auto needs = [&](size_t k) { return nodes_[static_cast<size_t>(n.in[k])].needs; };
    switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatmul: {
            const Tensor2& a = nodes_[n.in[0]].value;
            const Tensor2& b = nodes_[n.in[1]].value;
            if (needs(0)) accumulate(grad, has, n.in[0], gemm(g, b, false, true));
            if (needs(1)) accumulate(grad, has, n.in[1], gemm(a, g, true, false));
            break;
        }
        case Op::kTranspose: {
            if (!needs(0)) break;
            Tensor2 gt(g.cols(), g.rows());
            for (int64_t r = 0; r < g.rows(); ++r)
                for (int64_t c = 0; c < g.cols(); ++c) gt.at(c, r) = g.at(r, c);
            accumulate(grad, has, n.in[0], gt);
            break;
        }
        case Op::kAdd: {
            if (needs(0)) accumulate(grad, has, n.in[0], g);
            if (needs(1)) accumulate(grad, has, n.in[1], g);
            break;
        }
        case Op::kRowBroadcastAdd: {
            if (needs(0)) accumulate(grad, has, n.in[0], g);
            if (needs(1)) {
                Tensor2 gb(1, g.cols());
                for (int64_t r = 0; r < g.rows(); ++r)
                    for (int64_t c = 0; c < g.cols(); ++c) gb.data()[c] += g.at(r, c);
                accumulate(grad, has, n.in[1], gb);
            }
            break;
        }
        case Op::kMul: {
            const Tensor2& a = nodes_[n.in[0]].value;
            const Tensor2& b = nodes_[n.in[1]].value;
            if (needs(0)) {
                Tensor2 ga = g;
                for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] *= b.data()[i];
                accumulate(grad, has, n.in[0], ga);
            }
            if (needs(1)) {
                Tensor2 gb = g;
                for (size_t i = 0; i < gb.size(); ++i) gb.data()[i] *= a.data()[i];
                accumulate(grad, has, n.in[1], gb);
            }
            break;
        }
        case Op::kColBroadcastMul: {
            const Tensor2& x = nodes_[n.in[0]].value;
            const Tensor2& v = nodes_[n.in[1]].value;
            if (needs(0)) {
                Tensor2 gx = g;
                for (int64_t r = 0; r < gx.rows(); ++r) {
                    const double s = v.at(r, 0);
                    for (int64_t c = 0; c < gx.cols(); ++c) gx.at(r, c) *= s;
                }
                accumulate(grad, has, n.in[0], gx);
            }
            if (needs(1)) {
                Tensor2 gv(x.rows(), 1);
                for (int64_t r = 0; r < x.rows(); ++r) {
                    double s = 0.0;
                    for (int64_t c = 0; c < x.cols(); ++c) s += g.at(r, c) * x.at(r, c);
                    gv.at(r, 0) = s;
                }
                accumulate(grad, has, n.in[1], gv);
            }
            break;
        }
        case Op::kSilu: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) {
                const double s = stable_sigmoid(x.data()[i]);
                gx.data()[i] *= s * (1.0 + x.data()[i] * (1.0 - s));
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kSigmoid: {
            if (!needs(0)) break;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) {
                const double y = n.value.data()[i];
                gx.data()[i] *= y * (1.0 - y);
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kLog: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] /= x.data()[i];
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kNeg: {
            if (!needs(0)) break;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] = -gx.data()[i];
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kSoftplus: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= stable_sigmoid(x.data()[i]);
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kLayerNorm: {
            const Tensor2& x = nodes_[n.in[0]].value;
            const Tensor2& gain = nodes_[n.in[1]].value;
            const int64_t d = x.cols();
            if (needs(1)) {
                Tensor2 gg(1, d);
                for (int64_t r = 0; r < x.rows(); ++r) {
                    const double mu = n.aux[static_cast<size_t>(2 * r)];
                    const double inv = n.aux[static_cast<size_t>(2 * r + 1)];
                    for (int64_t c = 0; c < d; ++c) gg.data()[c] += g.at(r, c) * ((x.at(r, c) - mu) * inv);
                }
                accumulate(grad, has, n.in[1], gg);
            }
            if (needs(2)) {
                Tensor2 gb(1, d);
                for (int64_t r = 0; r < x.rows(); ++r)
                    for (int64_t c = 0; c < d; ++c) gb.data()[c] += g.at(r, c);
                accumulate(grad, has, n.in[2], gb);
            }
            if (needs(0)) {
                Tensor2 gx(x.rows(), d);
                for (int64_t r = 0; r < x.rows(); ++r) {
                    const double mu = n.aux[static_cast<size_t>(2 * r)];
                    const double inv = n.aux[static_cast<size_t>(2 * r + 1)];
                    double mean_gy = 0.0, mean_gy_xhat = 0.0;
                    for (int64_t c = 0; c < d; ++c) {
                        const double xhat = (x.at(r, c) - mu) * inv;
                        const double gy = g.at(r, c) * gain.data()[c];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat;
                    }
                    mean_gy /= static_cast<double>(d);
                    mean_gy_xhat /= static_cast<double>(d);
                    for (int64_t c = 0; c < d; ++c) {
                        const double xhat = (x.at(r, c) - mu) * inv;
                        const double gy = g.at(r, c) * gain.data()[c];
                        gx.at(r, c) = inv * (gy - mean_gy - xhat * mean_gy_xhat);
                    }
                }
                accumulate(grad, has, n.in[0], gx);
            }
            break;
        }
        case Op::kSoftmaxRow: {
            if (!needs(0)) break;
            const Tensor2& y = n.value;
            Tensor2 gx(y.rows(), y.cols());
            for (int64_t r = 0; r < y.rows(); ++r) {
                double dot = 0.0;
                for (int64_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
                for (int64_t c = 0; c < y.cols(); ++c) gx.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kScaleConst: {
            if (!needs(0)) break;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= n.c0;
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kScaleParam: {
            const Tensor2& x = nodes_[n.in[0]].value;
            const double s = nodes_[n.in[1]].value.at(0, 0);
            if (needs(0)) {
                Tensor2 gx = g;
                for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= s;
                accumulate(grad, has, n.in[0], gx);
            }
            if (needs(1)) {
                double acc = 0.0;
                for (size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * g.data()[i];
                accumulate(grad, has, n.in[1], Tensor2::scalar(acc));
            }
            break;
        }
        case Op::kConcatCols: {
            const int64_t split = n.i0;
            if (needs(0)) {
                Tensor2 ga(g.rows(), split);
                for (int64_t r = 0; r < g.rows(); ++r) std::copy(g.row(r), g.row(r) + split, ga.row(r));
                accumulate(grad, has, n.in[0], ga);
            }
            if (needs(1)) {
                Tensor2 gb(g.rows(), g.cols() - split);
                for (int64_t r = 0; r < g.rows(); ++r)
                    std::copy(g.row(r) + split, g.row(r) + g.cols(), gb.row(r));
                accumulate(grad, has, n.in[1], gb);
            }
            break;
        }
        case Op::kConcatRows: {
            int64_t at = 0;
            for (size_t k = 0; k < n.in.size(); ++k) {
                const Tensor2& part = nodes_[n.in[k]].value;
                if (needs(k)) {
                    Tensor2 gp(part.rows(), part.cols());
                    std::copy(g.row(at), g.row(at) + gp.size(), gp.data());
                    accumulate(grad, has, n.in[k], gp);
                }
                at += part.rows();
            }
            break;
        }
        case Op::kSliceCols: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx(x.rows(), x.cols());
            for (int64_t r = 0; r < g.rows(); ++r) std::copy(g.row(r), g.row(r) + g.cols(), gx.row(r) + n.i0);
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kGatherRows: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx(x.rows(), x.cols());
            for (size_t r = 0; r < n.idx.size(); ++r) {
                double* dst = gx.row(n.idx[r]);
                const double* src = g.row(static_cast<int64_t>(r));
                for (int64_t c = 0; c < x.cols(); ++c) dst[c] += src[c];
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kScatterMeanRows: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx(x.rows(), x.cols());
            for (size_t r = 0; r < n.idx.size(); ++r) {
                const double inv = 1.0 / n.aux[static_cast<size_t>(n.idx[r])];
                const double* src = g.row(n.idx[r]);
                double* dst = gx.row(static_cast<int64_t>(r));
                for (int64_t c = 0; c < x.cols(); ++c) dst[c] = src[c] * inv;
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kScatterSumRows: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx(x.rows(), x.cols());
            for (size_t r = 0; r < n.idx.size(); ++r) {
                const double* src = g.row(n.idx[r]);
                double* dst = gx.row(static_cast<int64_t>(r));
                for (int64_t c = 0; c < x.cols(); ++c) dst[c] = src[c];
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kSegmentSoftmax: {
            if (!needs(0)) break;
            const Tensor2& y = n.value;
            const int64_t cols = y.cols();
            std::vector<double> dot(static_cast<size_t>(n.i0 * cols), 0.0);
            for (size_t r = 0; r < n.idx.size(); ++r)
                for (int64_t c = 0; c < cols; ++c)
                    dot[static_cast<size_t>(n.idx[r] * cols + c)] += g.at(static_cast<int64_t>(r), c) * y.at(static_cast<int64_t>(r), c);
            Tensor2 gx(y.rows(), cols);
            for (size_t r = 0; r < n.idx.size(); ++r)
                for (int64_t c = 0; c < cols; ++c)
                    gx.at(static_cast<int64_t>(r), c) =
                        y.at(static_cast<int64_t>(r), c) *
                        (g.at(static_cast<int64_t>(r), c) - dot[static_cast<size_t>(n.idx[r] * cols + c)]);
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kRopeRotate: {
            if (!needs(0)) break;
            const int64_t half = g.cols() / 2;
            Tensor2 gx(g.rows(), g.cols());
            for (int64_t r = 0; r < g.rows(); ++r) {
                const double m = static_cast<double>(n.idx[static_cast<size_t>(r)]);
                for (int64_t p = 0; p < half; ++p) {
                    const double theta = std::pow(n.c0, -2.0 * static_cast<double>(p) / static_cast<double>(g.cols()));
                    const double a = m * theta;
                    const double ca = std::cos(a), sa = std::sin(a);
                    const double g0 = g.at(r, 2 * p), g1 = g.at(r, 2 * p + 1);
                    gx.at(r, 2 * p) = ca * g0 + sa * g1;
                    gx.at(r, 2 * p + 1) = -sa * g0 + ca * g1;
                }
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kRowScaleConst: {
            if (!needs(0)) break;
            Tensor2 gx = g;
            for (int64_t r = 0; r < gx.rows(); ++r) {
                const double s = n.aux[static_cast<size_t>(r)];
                for (int64_t c = 0; c < gx.cols(); ++c) gx.at(r, c) *= s;
            }
            accumulate(grad, has, n.in[0], gx);
            break;
        }
        case Op::kSumAll: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            accumulate(grad, has, n.in[0], Tensor2::full(x.rows(), x.cols(), g.at(0, 0)));
            break;
        }
        case Op::kClamp: {
            if (!needs(0)) break;
            const Tensor2& x = nodes_[n.in[0]].value;
            Tensor2 gx = g;
            for (size_t i = 0; i < gx.size(); ++i)
                if (x.data()[i] <= n.c0 || x.data()[i] >= n.c1) gx.data()[i] = 0.0;
            accumulate(grad, has, n.in[0], gx);
            break;
        }
    }
}

}  // namespace kspace::ad
