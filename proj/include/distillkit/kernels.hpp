#pragma once

#include "distillkit/mat.hpp"

namespace dk::kernels {

// C += A * B. Serial reference, kept as the oracle for the OpenMP kernel.
void gemm_serial(const Mat& A, const Mat& B, Mat& C);

// C += A * B, rows of C split across threads. Each output row is accumulated
// serially so results are bit-identical to gemm_serial for any thread count.
void gemm_omp(const Mat& A, const Mat& B, Mat& C);

// C += A^T * B and C += A * B^T, used by backward passes.
void gemm_at_b(const Mat& A, const Mat& B, Mat& C);
void gemm_a_bt(const Mat& A, const Mat& B, Mat& C);

// Dispatches to the OpenMP kernel when compiled with OpenMP, else serial.
void gemm(const Mat& A, const Mat& B, Mat& C);

Mat matmul(const Mat& A, const Mat& B);

// Row-wise numerically-stable softmax, in place.
void softmax_rows(Mat& m);

}  // namespace dk::kernels
