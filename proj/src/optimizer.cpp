#include "kspace/optimizer.hpp"

#include <cmath>

#include "kspace/error.hpp"

namespace kspace::train {

bool decays(const std::string& name) {
    if (name.size() >= 3 && name.compare(name.size() - 3, 3, "att") == 0) return true;
    return name.find(".W") != std::string::npos;
}

void AdamW::step(model::ParamStore& params, const std::map<std::string, Tensor2>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : params.names()) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // no gradient this step
        Tensor2& p = params.at(name);
        const Tensor2& g = git->second;
        if (!p.same_shape(g)) throw DimensionError("adamw: gradient shape mismatch for " + name);

        auto [it, fresh] = state_.try_emplace(name);
        if (fresh) {
            it->second.m = Tensor2(p.rows(), p.cols());
            it->second.v = Tensor2(p.rows(), p.cols());
        }
        Tensor2& m = it->second.m;
        Tensor2& v = it->second.v;
        const double wd = decays(name) ? cfg_.weight_decay : 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi;
            v.data()[i] = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m.data()[i] / bc1;
            const double vhat = v.data()[i] / bc2;
            p.data()[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * p.data()[i]);
        }
    }
}

}  // namespace kspace::train
