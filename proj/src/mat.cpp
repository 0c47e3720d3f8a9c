#include "scenescore/mat.hpp"

#include "scenescore/common.hpp"

namespace scenescore {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw DataError("matmul: inner dimensions differ");
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* oi = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double av = ai[k];
            if (av == 0.0) continue;
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += av * bk[j];
        }
    }
    return out;
}

Vec matvec(const Mat& a, const Vec& x) {
    if (a.cols() != x.size()) throw DataError("matvec: dimension mismatch");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
        y[i] = s;
    }
    return y;
}

Vec matvec_t(const Mat& a, const Vec& x) {
    if (a.rows() != x.size()) throw DataError("matvec_t: dimension mismatch");
    Vec y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double xv = x[i];
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * xv;
    }
    return y;
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace scenescore
