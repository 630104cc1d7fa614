#pragma once

// Brute-force transportation oracle shared by the mapping tests and the
// acceptance suite: enumerate every basic solution, i.e. every subset of at
// most M+N-1 cells whose flows can satisfy the marginals exactly, and keep
// the cheapest feasible one. An optimum of the LP is always attained at such
// a vertex, so this is exact (up to fp) for tiny instances.

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "distillkit/mapping.hpp"

inline double brute_force_transport(const dk::FlowProblem& p) {
    const int M = p.cost.rows, N = p.cost.cols;
    const int cells = M * N, rows = M + N, k = M + N - 1;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(k);

    auto try_subset = [&]() {
        // Solve A x = b for the picked cells via normal equations.
        std::vector<std::vector<double>> A(rows, std::vector<double>(k, 0.0));
        std::vector<double> b(rows, 0.0);
        for (int i = 0; i < M; ++i) b[i] = p.supplies[i];
        for (int j = 0; j < N; ++j) b[M + j] = p.demands[j];
        for (int c = 0; c < k; ++c) {
            A[pick[c] / N][c] = 1.0;
            A[M + pick[c] % N][c] = 1.0;
        }
        std::vector<std::vector<double>> G(k, std::vector<double>(k + 1, 0.0));
        for (int a = 0; a < k; ++a) {
            for (int c = 0; c < k; ++c)
                for (int r = 0; r < rows; ++r) G[a][c] += A[r][a] * A[r][c];
            for (int r = 0; r < rows; ++r) G[a][k] += A[r][a] * b[r];
        }
        for (int col = 0; col < k; ++col) {
            int piv = col;
            for (int r = col + 1; r < k; ++r)
                if (std::fabs(G[r][col]) > std::fabs(G[piv][col])) piv = r;
            if (std::fabs(G[piv][col]) < 1e-10) return;  // degenerate basis
            std::swap(G[piv], G[col]);
            for (int r = 0; r < k; ++r) {
                if (r == col) continue;
                double f = G[r][col] / G[col][col];
                for (int c = col; c <= k; ++c) G[r][c] -= f * G[col][c];
            }
        }
        std::vector<double> x(k);
        for (int c = 0; c < k; ++c) x[c] = G[c][k] / G[c][c];
        for (double v : x)
            if (v < -1e-10) return;
        for (int r = 0; r < rows; ++r) {
            double got = 0.0;
            for (int c = 0; c < k; ++c) got += A[r][c] * x[c];
            if (std::fabs(got - b[r]) > 1e-9) return;
        }
        double obj = 0.0;
        for (int c = 0; c < k; ++c) obj += x[c] * p.cost.a[pick[c]];
        best = std::min(best, obj);
    };

    // iterate over all k-subsets of the cells
    std::iota(pick.begin(), pick.end(), 0);
    for (;;) {
        try_subset();
        int i = k - 1;
        while (i >= 0 && pick[i] == cells - k + i) --i;
        if (i < 0) break;
        ++pick[i];
        for (int j = i + 1; j < k; ++j) pick[j] = pick[j - 1] + 1;
    }
    return best;
}
