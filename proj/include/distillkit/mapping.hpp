#pragma once

#include <string>
#include <vector>

#include "distillkit/losses.hpp"

namespace dk {

enum class MapStrategy { Skip, Last, EMD };

std::string to_string(MapStrategy s);
MapStrategy map_strategy_from_string(const std::string& s);

// weights(i, j): mass the j-th student layer draws from the i-th teacher
// layer. Skip/Last rows are 0/1 with exactly one 1 per student column; EMD
// carries the optimal transport flow.
struct MappingMatrix {
    Mat weights;  // M x N, teacher layers x student layers
    MapStrategy strategy = MapStrategy::Skip;
};

struct FlowProblem {
    Mat cost;                      // M x N, finite
    std::vector<double> supplies;  // length M, positive
    std::vector<double> demands;   // length N, positive; sums balance to 1e-12
};

// Skip: student layer s (1-based) pairs with teacher layer s * floor(M/N).
// Last: student layer s pairs with teacher layer s + M - N.
MappingMatrix build_mapping(MapStrategy strategy, int M, int N);

// Exact min-cost transportation flow (successive shortest paths). The
// returned M x N flow is nonnegative with marginals equal to the supplies
// and demands.
Mat solve_transport(const FlowProblem& p);

struct EmdResult {
    double loss = 0.0;
    MappingMatrix mapping;
    Mat costs;  // M x N pairwise state distances the flow was solved on
};

// d(i, j) = inter_loss(kind, Hs[j], Ht[i], proj); uniform marginals 1/M and
// 1/N, so the flow sums to 1 and the loss is the plain flow-weighted cost.
EmdResult emd_loss(const std::vector<Mat>& Hs, const std::vector<Mat>& Ht, InterKind kind,
                   const Projection& proj);

// Differentiable counterpart: the flow is solved on the current values and
// then held constant, so gradients reach the states only through the costs.
Var emd_loss_graph(Tape& t, InterKind kind, const std::vector<Var>& Hs,
                   const std::vector<Var>& Ht, Var proj = {});

}  // namespace dk
