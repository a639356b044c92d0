#pragma once

#include <cstdint>
#include <vector>

#include "kspace/tensor.hpp"

namespace kspace::train {

// Per-query record of one gradient-projection decision. The vectors
// themselves are the corresponding rows of the matrices handed to
// project_gradients and of the refined matrix it returns.
struct ProjectionReport {
    int64_t row = 0;
    double dot = 0.0;    // <g_main, g_adv>
    double alpha = 0.0;  // dot / ||g_adv||^2 when the gate fires
    bool gate_fired = false;
    double main_norm = 0.0;
    double adv_norm = 0.0;
    double refined_norm = 0.0;
};

struct ProjectionResult {
    Tensor2 refined;  // same shape as g_main
    std::vector<ProjectionReport> reports;

    double gate_rate() const;
    double mean_alpha() const;  // over fired gates, 0 if none
};

// Sample-wise gradient refinement: per row, when <g_main, g_adv> > 0 the
// component of g_main along g_adv is removed,
//   alpha = <g_main, g_adv> / ||g_adv||^2,  refined = g_main - alpha * g_adv;
// otherwise the row passes through bitwise unchanged. Rows with g_adv = 0
// have dot = 0 and never divide.
ProjectionResult project_gradients(const Tensor2& g_main, const Tensor2& g_adv);

}  // namespace kspace::train
