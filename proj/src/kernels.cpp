#include "distillkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dk::kernels {

static void check_mm(const Mat& A, const Mat& B, const Mat& C, int ar, int ac, int br, int bc) {
    if (ac != br || C.rows != ar || C.cols != bc) throw std::invalid_argument("gemm: shape mismatch");
}

void gemm_serial(const Mat& A, const Mat& B, Mat& C) {
    check_mm(A, B, C, A.rows, A.cols, B.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        double* crow = &C.a[static_cast<size_t>(i) * C.cols];
        for (int k = 0; k < A.cols; ++k) {
            double aik = A(i, k);
            if (aik == 0.0) continue;
            const double* brow = &B.a[static_cast<size_t>(k) * B.cols];
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

void gemm_omp(const Mat& A, const Mat& B, Mat& C) {
    check_mm(A, B, C, A.rows, A.cols, B.rows, B.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < A.rows; ++i) {
        double* crow = &C.a[static_cast<size_t>(i) * C.cols];
        for (int k = 0; k < A.cols; ++k) {
            double aik = A(i, k);
            if (aik == 0.0) continue;
            const double* brow = &B.a[static_cast<size_t>(k) * B.cols];
#pragma omp simd
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

void gemm(const Mat& A, const Mat& B, Mat& C) {
#ifdef _OPENMP
    // Tiny products are common in the training loops; the fork/join overhead
    // dwarfs the arithmetic below this cutoff.
    if (static_cast<long>(A.rows) * A.cols * B.cols >= 32768)
        gemm_omp(A, B, C);
    else
        gemm_serial(A, B, C);
#else
    gemm_serial(A, B, C);
#endif
}

void gemm_at_b(const Mat& A, const Mat& B, Mat& C) {
    check_mm(A, B, C, A.cols, A.rows, B.rows, B.cols);
    for (int k = 0; k < A.rows; ++k)
        for (int i = 0; i < A.cols; ++i) {
            double aki = A(k, i);
            if (aki == 0.0) continue;
            const double* brow = &B.a[static_cast<size_t>(k) * B.cols];
            double* crow = &C.a[static_cast<size_t>(i) * C.cols];
            for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
        }
}

void gemm_a_bt(const Mat& A, const Mat& B, Mat& C) {
    check_mm(A, B, C, A.rows, A.cols, B.cols, B.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.rows; ++j) {
            const double* arow = &A.a[static_cast<size_t>(i) * A.cols];
            const double* brow = &B.a[static_cast<size_t>(j) * B.cols];
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
            C(i, j) += s;
        }
}

Mat matmul(const Mat& A, const Mat& B) {
    Mat C(A.rows, B.cols);
    gemm(A, B, C);
    return C;
}

void softmax_rows(Mat& m) {
    for (int i = 0; i < m.rows; ++i) {
        double* row = &m.a[static_cast<size_t>(i) * m.cols];
        double mx = row[0];
        for (int j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (int j = 0; j < m.cols; ++j) row[j] /= s;
    }
}

}  // namespace dk::kernels
