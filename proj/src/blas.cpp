#include "kspace/blas.hpp"

#include "kspace/error.hpp"

#ifdef KSPACE_USE_CBLAS
#include <cblas.h>
#endif

namespace kspace {

Tensor2 gemm(const Tensor2& a, const Tensor2& b, bool trans_a, bool trans_b) {
    const int64_t m = trans_a ? a.cols() : a.rows();
    const int64_t k = trans_a ? a.rows() : a.cols();
    const int64_t kb = trans_b ? b.cols() : b.rows();
    const int64_t n = trans_b ? b.rows() : b.cols();
    if (k != kb)
        throw DimensionError("gemm: inner dimensions " + std::to_string(k) + " vs " + std::to_string(kb));
    Tensor2 c(m, n);
#ifdef KSPACE_USE_CBLAS
    if (m > 0 && n > 0 && k > 0) {
        cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a.data(),
                    static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, c.data(),
                    static_cast<int>(n));
    }
#else
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c.row(i);
        for (int64_t l = 0; l < k; ++l) {
            const double av = trans_a ? a.at(l, i) : a.at(i, l);
            if (av == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * (trans_b ? b.at(j, l) : b.at(l, j));
        }
    }
#endif
    return c;
}

}  // namespace kspace
