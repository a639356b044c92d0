#pragma once

#include "kspace/tensor.hpp"

namespace kspace {

// C = op(A) * op(B). Dispatches to CBLAS when built with KSPACE_USE_CBLAS,
// otherwise a plain loop; both paths are deterministic.
Tensor2 gemm(const Tensor2& a, const Tensor2& b, bool trans_a = false, bool trans_b = false);

}  // namespace kspace
