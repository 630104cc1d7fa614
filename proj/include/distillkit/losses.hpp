#pragma once

#include <optional>
#include <string>
#include <vector>

#include "distillkit/mi.hpp"

namespace dk {

enum class PredKind { CE, MSE };
enum class InterKind { MSE, L2, Cos, PKD, CE, MI_alpha };

struct InterLossKind {
    InterKind kind = InterKind::MSE;
    double alpha = 0.5;  // only meaningful for MI_alpha
};

std::string to_string(PredKind k);
std::string to_string(InterKind k);
PredKind pred_kind_from_string(const std::string& s);
InterKind inter_kind_from_string(const std::string& s);

// Learned width bridge from student states to teacher width; empty weight
// matrix means identity (widths already match).
struct Projection {
    Mat w;  // h_s x h_t when present
    bool is_identity() const { return w.size() == 0; }
    static Projection identity() { return {}; }
    static Projection learned(int h_s, int h_t, Rng& rng);
};

// --- prediction-layer losses ---
// Teacher targets: CE uses softmax(teacher logits) as the soft target,
// MSE compares logits to teacher logits directly.
Var pred_loss_teacher(Tape& t, PredKind kind, Var student_logits, const Mat& teacher_logits);
// Soft distribution targets (teacher relabels, mixed labels). Rows must sum
// to 1 within 1e-6. MSE compares logits to the distribution.
Var pred_loss_soft(Tape& t, PredKind kind, Var student_logits, const Mat& target_probs);
// Hard labels, one per logits row.
Var pred_loss_hard(Tape& t, PredKind kind, Var student_logits, const std::vector<int>& labels);

// --- intermediate per-layer-pair losses (all kinds except MI_alpha) ---
// Hs is the (differentiable) student state, Ht the teacher state; proj, when
// valid, is a lifted h_s x h_t projection applied to Hs first.
Var inter_loss_graph(Tape& t, InterKind kind, Var Hs, Var Ht, Var proj = {});

// Numeric evaluation (teacher-style constant inputs); used for EMD cost
// matrices and as a convenience in tests. MI_alpha is batch-level and is
// rejected here.
double inter_loss_value(InterKind kind, const Mat& Hs, const Mat& Ht, const Projection& proj);

// Batch-level MI-alpha intermediate loss: the negated bound over the in-batch
// score matrix of mean-pooled (projected) student states u and teacher
// states v. Minimizing it maximizes the bound.
Var mi_inter_loss_graph(Tape& t, const CriticPair& critic, const CriticPair::GraphVars& cv,
                        const std::vector<Var>& u_pooled, const std::vector<Var>& v_pooled,
                        double alpha);

}  // namespace dk
