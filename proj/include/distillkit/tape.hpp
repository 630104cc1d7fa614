#pragma once

#include <functional>
#include <vector>

#include "distillkit/mat.hpp"

namespace dk {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Each op records a backward closure; backward() replays
// them in reverse creation order (creation order is topological).
//
// Intended use: parameters live outside the tape as plain Mats; every
// training step builds a fresh tape, lifts parameters with leaf(), runs
// backward once, and reads gradients back out.
class Tape {
   public:
    Var leaf(const Mat& value);
    Var leaf(Mat&& value);
    Var scalar(double v) { return leaf(Mat(1, 1, {v})); }

    const Mat& val(Var v) const { return nodes_[v.id].val; }
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }
    Mat& grad_mut(Var v) { return nodes_[v.id].grad; }

    // Seeds d(loss)/d(loss)=1 at `loss` (must be 1x1) and propagates.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

    // --- elementwise ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var exp(Var a);
    Var log(Var a);
    Var sqrt(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    Var square(Var a) { return mul(a, a); }

    // --- linear algebra / shape ---
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_rows(Var a, int i0, int n);
    Var slice_cols(Var a, int j0, int n);
    Var broadcast_row(Var a, int rows);  // 1xC -> rowsxC
    Var broadcast_col(Var a, int cols);  // Bx1 -> BxC
    Var gather_rows(Var table, const std::vector<int>& ids);
    Var take_diag(Var a);  // BxB -> Bx1

    // --- reductions ---
    Var sum_all(Var a);   // -> 1x1
    Var mean_all(Var a);  // -> 1x1
    Var sum_rows(Var a);  // BxC -> Bx1
    Var mean_rows(Var a);  // TxC -> 1xC (mean over rows)

    // --- fused row-wise nonlinearities ---
    Var softmax_rows(Var a);
    Var log_softmax_rows(Var a);
    Var logsumexp_rows(Var a);  // BxC -> Bx1
    Var layer_norm_rows(Var a, double eps = 1e-5);

    // Elementwise log(alpha*e^a + (1-alpha)*e^b), computed stably.
    Var alpha_mix_log(Var a, Var b, double alpha);

   private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void()> back;  // empty for leaves
    };

    Var push(Mat value, std::function<void()> back = {});
    std::vector<Node> nodes_;
};

}  // namespace dk
