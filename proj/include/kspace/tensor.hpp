#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kspace/error.hpp"

namespace kspace {

// Dense row-major 2-D array of 64-bit reals. Immutable by convention once it
// enters the tape; everything numeric in the pipeline lives in one of these.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(int64_t rows, int64_t cols) : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows * cols), 0.0) {
        if (rows < 0 || cols < 0) throw DimensionError("Tensor2: negative shape");
    }
    Tensor2(int64_t rows, int64_t cols, std::vector<double> values) : rows_(rows), cols_(cols), v_(std::move(values)) {
        if (v_.size() != static_cast<size_t>(rows * cols))
            throw DimensionError("Tensor2: values length " + std::to_string(v_.size()) + " != " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
        if (checked_mode()) check_finite();
    }

    static Tensor2 scalar(double x) { return Tensor2(1, 1, {x}); }
    static Tensor2 zeros(int64_t rows, int64_t cols) { return Tensor2(rows, cols); }
    static Tensor2 full(int64_t rows, int64_t cols, double x) {
        Tensor2 t(rows, cols);
        for (auto& e : t.v_) e = x;
        return t;
    }
    static Tensor2 identity(int64_t n) {
        Tensor2 t(n, n);
        for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    size_t size() const { return v_.size(); }

    double& at(int64_t r, int64_t c) { return v_[static_cast<size_t>(r * cols_ + c)]; }
    double at(int64_t r, int64_t c) const { return v_[static_cast<size_t>(r * cols_ + c)]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double* row(int64_t r) { return v_.data() + r * cols_; }
    const double* row(int64_t r) const { return v_.data() + r * cols_; }

    bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }
    void check_finite() const {
        if (!all_finite()) throw NumericError("Tensor2: non-finite entry");
    }

    bool operator==(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_; }

    // Checked mode rejects NaN/Inf at construction; enabled in tests and
    // around untrusted inputs, off in inner loops.
    static bool& checked_mode() {
        static bool enabled = false;
        return enabled;
    }

private:
    int64_t rows_ = 0;
    int64_t cols_ = 0;
    std::vector<double> v_;
};

}  // namespace kspace
