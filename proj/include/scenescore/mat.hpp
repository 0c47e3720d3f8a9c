#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace scenescore {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Small enough on purpose: every model
/// in this project fits in memory many times over, and explicit loops keep
/// the numerics bit-reproducible.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// out = a * b, shapes (m x k) (k x n).
Mat matmul(const Mat& a, const Mat& b);

/// y = A^T x for A (m x n), x length m.
Vec matvec_t(const Mat& a, const Vec& x);

/// y = A x for A (m x n), x length n.
Vec matvec(const Mat& a, const Vec& x);

double dot(const Vec& a, const Vec& b);

}  // namespace scenescore
