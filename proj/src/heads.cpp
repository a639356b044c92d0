#include "kspace/heads.hpp"

#include <cmath>

#include "kspace/error.hpp"

namespace kspace::model {

FrozenIclHead FrozenIclHead::for_width(int width) {
    FrozenIclHead h;
    h.tau = std::sqrt(static_cast<double>(width));
    return h;
}

ad::NodeId icl_predict(ad::Tape& tape, const FrozenIclHead& head, ad::NodeId z_query, ad::NodeId z_support,
                       const std::vector<int>& y_support) {
    const int64_t n_s = tape.value(z_support).rows();
    if (static_cast<int64_t>(y_support.size()) != n_s)
        throw DimensionError("icl_predict: support labels do not match support rows");
    if (n_s < 2) throw ContractError("icl_predict: need at least two support points");
    bool has0 = false, has1 = false;
    for (int y : y_support) (y ? has1 : has0) = true;
    if (!has0 || !has1) throw ContractError("icl_predict: single-class support");

    Tensor2 ys(n_s, 1);
    for (int64_t i = 0; i < n_s; ++i) ys.at(i, 0) = static_cast<double>(y_support[static_cast<size_t>(i)]);

    const ad::NodeId logits = tape.scale_const(tape.matmul(z_query, tape.transpose(z_support)), 1.0 / head.tau);
    const ad::NodeId attention = tape.softmax_row(logits);
    const ad::NodeId p = tape.matmul(attention, tape.constant(std::move(ys)));
    return tape.clamp(p, head.eps, 1.0 - head.eps);
}

ad::NodeId main_loss(ad::Tape& tape, ad::NodeId probs, const std::vector<int>& y_query) {
    const int64_t n = tape.value(probs).rows();
    if (static_cast<int64_t>(y_query.size()) != n)
        throw DimensionError("main_loss: label count does not match probabilities");
    Tensor2 y(n, 1), y_inv(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        y.at(i, 0) = static_cast<double>(y_query[static_cast<size_t>(i)]);
        y_inv.at(i, 0) = 1.0 - y.at(i, 0);
    }
    const ad::NodeId one = tape.constant(Tensor2::full(n, 1, 1.0));
    const ad::NodeId log_p = tape.log(probs);
    const ad::NodeId log_1p = tape.log(tape.add(one, tape.neg(probs)));
    const ad::NodeId ll = tape.add(tape.mul(tape.constant(std::move(y)), log_p),
                                   tape.mul(tape.constant(std::move(y_inv)), log_1p));
    return tape.scale_const(tape.sum_all(ll), -1.0 / static_cast<double>(n));
}

ParamStore init_adversary_params(int width, RngStream rng) {
    const int hidden = std::max(width / 2, 1);
    const double s1 = std::sqrt(2.0 / static_cast<double>(width + hidden));
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden + 1));
    ParamStore ps;
    Tensor2 w1(width, hidden), w2(hidden, 1);
    for (size_t i = 0; i < w1.size(); ++i) w1.data()[i] = s1 * rng.normal();
    for (size_t i = 0; i < w2.size(); ++i) w2.data()[i] = s2 * rng.normal();
    ps.add("adv.W1", std::move(w1));
    ps.add("adv.b1", Tensor2(1, hidden));
    ps.add("adv.W2", std::move(w2));
    ps.add("adv.b2", Tensor2(1, 1));
    return ps;
}

namespace {

// logits of the adversary on its own tape; the representation enters as a
// leaf so nothing propagates back into the producing graph
struct AdvGraph {
    ad::Tape tape;
    ad::NodeId input;
    TapeParams reg;
    ad::NodeId logit;
};

AdvGraph adv_graph(const ParamStore& adv, const Tensor2& h_rows, bool input_grad) {
    AdvGraph g;
    g.input = g.tape.leaf(h_rows, input_grad);
    g.reg = register_params(g.tape, adv);
    const ad::NodeId z1 = g.tape.silu(
        g.tape.row_broadcast_add(g.tape.matmul(g.input, g.reg.at("adv.W1")), g.reg.at("adv.b1")));
    g.logit = g.tape.row_broadcast_add(g.tape.matmul(z1, g.reg.at("adv.W2")), g.reg.at("adv.b2"));
    return g;
}

}  // namespace

AdversaryResult adv_forward_loss(const ParamStore& adv, const Tensor2& h_rows, const std::vector<int>& y) {
    const int64_t n = h_rows.rows();
    if (static_cast<int64_t>(y.size()) != n) throw DimensionError("adv_forward_loss: label count mismatch");
    AdvGraph g = adv_graph(adv, h_rows, /*input_grad=*/true);

    // per-row bce from logits: softplus(logit) - y*logit; the sum's backward
    // yields each row's own gradient since rows are independent
    Tensor2 neg_y(n, 1);
    for (int64_t i = 0; i < n; ++i) neg_y.at(i, 0) = -static_cast<double>(y[static_cast<size_t>(i)]);
    const ad::NodeId per_row =
        g.tape.add(g.tape.softplus(g.logit), g.tape.mul(g.tape.constant(std::move(neg_y)), g.logit));
    const ad::NodeId total = g.tape.sum_all(per_row);

    auto grads = g.tape.backward_from(total);
    AdversaryResult out;
    out.mean_loss = g.tape.value(total).at(0, 0) / static_cast<double>(n);
    out.input_grads = grads.at(g.input);
    auto by_name = named_grads(g.reg, grads);
    for (auto& [name, grad] : by_name) {
        for (size_t i = 0; i < grad.size(); ++i) grad.data()[i] /= static_cast<double>(n);
        out.param_grads.emplace(name, std::move(grad));
    }
    return out;
}

Tensor2 adv_predict(const ParamStore& adv, const Tensor2& h_rows) {
    AdvGraph g = adv_graph(adv, h_rows, /*input_grad=*/false);
    const ad::NodeId p = g.tape.sigmoid(g.logit);
    return g.tape.value(p);
}

}  // namespace kspace::model
