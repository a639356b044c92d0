#include "kspace/projection.hpp"

#include <cmath>

#include "kspace/error.hpp"

namespace kspace::train {

double ProjectionResult::gate_rate() const {
    if (reports.empty()) return 0.0;
    int64_t fired = 0;
    for (const auto& r : reports) fired += r.gate_fired ? 1 : 0;
    return static_cast<double>(fired) / static_cast<double>(reports.size());
}

double ProjectionResult::mean_alpha() const {
    double sum = 0.0;
    int64_t fired = 0;
    for (const auto& r : reports)
        if (r.gate_fired) {
            sum += r.alpha;
            ++fired;
        }
    return fired ? sum / static_cast<double>(fired) : 0.0;
}

ProjectionResult project_gradients(const Tensor2& g_main, const Tensor2& g_adv) {
    if (!g_main.same_shape(g_adv)) throw DimensionError("project_gradients: shape mismatch");
    ProjectionResult out;
    out.refined = g_main;
    out.reports.resize(static_cast<size_t>(g_main.rows()));

    const int64_t d = g_main.cols();
    for (int64_t r = 0; r < g_main.rows(); ++r) {
        const double* gm = g_main.row(r);
        const double* ga = g_adv.row(r);
        double dot = 0.0, nm = 0.0, na = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            dot += gm[c] * ga[c];
            nm += gm[c] * gm[c];
            na += ga[c] * ga[c];
        }
        ProjectionReport& rep = out.reports[static_cast<size_t>(r)];
        rep.row = r;
        rep.dot = dot;
        rep.main_norm = std::sqrt(nm);
        rep.adv_norm = std::sqrt(na);
        rep.gate_fired = dot > 0.0;
        if (rep.gate_fired) {
            rep.alpha = dot / na;  // na > 0 whenever dot > 0
            double* gr = out.refined.row(r);
            double nr = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                gr[c] = gm[c] - rep.alpha * ga[c];
                nr += gr[c] * gr[c];
            }
            rep.refined_norm = std::sqrt(nr);
        } else {
            rep.refined_norm = rep.main_norm;  // row left bitwise unchanged
        }
    }
    return out;
}

}  // namespace kspace::train
