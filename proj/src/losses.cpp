#include "distillkit/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "distillkit/kernels.hpp"

namespace dk {

std::string to_string(PredKind k) { return k == PredKind::CE ? "CE" : "MSE"; }

std::string to_string(InterKind k) {
    switch (k) {
        case InterKind::MSE: return "MSE";
        case InterKind::L2: return "L2";
        case InterKind::Cos: return "Cos";
        case InterKind::PKD: return "PKD";
        case InterKind::CE: return "CE";
        case InterKind::MI_alpha: return "MI_alpha";
    }
    return "?";
}

PredKind pred_kind_from_string(const std::string& s) {
    if (s == "CE") return PredKind::CE;
    if (s == "MSE") return PredKind::MSE;
    throw std::invalid_argument("unknown prediction loss: " + s);
}

InterKind inter_kind_from_string(const std::string& s) {
    if (s == "MSE") return InterKind::MSE;
    if (s == "L2") return InterKind::L2;
    if (s == "Cos") return InterKind::Cos;
    if (s == "PKD") return InterKind::PKD;
    if (s == "CE") return InterKind::CE;
    if (s == "MI_alpha") return InterKind::MI_alpha;
    throw std::invalid_argument("unknown intermediate loss: " + s);
}

Projection Projection::learned(int h_s, int h_t, Rng& rng) {
    if (h_s == h_t) return identity();
    Projection p;
    p.w = Mat(h_s, h_t);
    double std = 0.1 / std::sqrt(static_cast<double>(h_s));
    for (double& v : p.w.a) v = rng.normal(0.0, std);
    return p;
}

static void check_soft_target(const Mat& probs) {
    for (int i = 0; i < probs.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < probs.cols; ++j) s += probs(i, j);
        if (std::fabs(s - 1.0) > 1e-6)
            throw std::invalid_argument("pred_loss: soft target row does not sum to 1");
    }
}

static void check_logits(Tape& t, Var logits, int target_cols) {
    const Mat& l = t.val(logits);
    if (!l.all_finite()) throw std::runtime_error("pred_loss: non-finite logits");
    if (l.cols != target_cols) throw std::invalid_argument("pred_loss: class count mismatch");
}

// mean over rows of -sum target * log_softmax(logits)
static Var soft_ce(Tape& t, Var logits, const Mat& target) {
    Var lp = t.log_softmax_rows(logits);
    Var picked = t.mul(lp, t.leaf(target));
    return t.scale(t.sum_all(picked), -1.0 / t.val(logits).rows);
}

Var pred_loss_teacher(Tape& t, PredKind kind, Var student_logits, const Mat& teacher_logits) {
    check_logits(t, student_logits, teacher_logits.cols);
    if (t.val(student_logits).rows != teacher_logits.rows)
        throw std::invalid_argument("pred_loss: row count mismatch");
    if (kind == PredKind::MSE) {
        Var d = t.sub(student_logits, t.leaf(teacher_logits));
        return t.mean_all(t.square(d));
    }
    Mat target = teacher_logits;
    kernels::softmax_rows(target);
    return soft_ce(t, student_logits, target);
}

Var pred_loss_soft(Tape& t, PredKind kind, Var student_logits, const Mat& target_probs) {
    check_logits(t, student_logits, target_probs.cols);
    if (t.val(student_logits).rows != target_probs.rows)
        throw std::invalid_argument("pred_loss: row count mismatch");
    check_soft_target(target_probs);
    if (kind == PredKind::MSE) {
        Var d = t.sub(student_logits, t.leaf(target_probs));
        return t.mean_all(t.square(d));
    }
    return soft_ce(t, student_logits, target_probs);
}

Var pred_loss_hard(Tape& t, PredKind kind, Var student_logits, const std::vector<int>& labels) {
    const Mat& l = t.val(student_logits);
    if (static_cast<int>(labels.size()) != l.rows)
        throw std::invalid_argument("pred_loss: one label required per logits row");
    Mat onehot(l.rows, l.cols);
    for (int i = 0; i < l.rows; ++i) {
        if (labels[i] < 0 || labels[i] >= l.cols)
            throw std::invalid_argument("pred_loss: label out of range");
        onehot(i, labels[i]) = 1.0;
    }
    return pred_loss_soft(t, kind, student_logits, onehot);
}

namespace {

constexpr double kNormEps = 1e-12;

// per-row L2 norms as Bx1, with epsilon added
Var row_norms(Tape& t, Var m) {
    return t.add_scalar(t.sqrt(t.sum_rows(t.square(m))), kNormEps);
}

Var normalize_rows(Tape& t, Var m) {
    return t.div(m, t.broadcast_col(row_norms(t, m), t.val(m).cols));
}

}  // namespace

Var inter_loss_graph(Tape& t, InterKind kind, Var Hs, Var Ht, Var proj) {
    Var u = proj.valid() ? t.matmul(Hs, proj) : Hs;
    const Mat& uv = t.val(u);
    const Mat& vv = t.val(Ht);
    if (uv.cols != vv.cols || uv.rows != vv.rows)
        throw std::invalid_argument("inter_loss: width mismatch after projection");
    switch (kind) {
        case InterKind::MSE:
            return t.mean_all(t.square(t.sub(u, Ht)));
        case InterKind::L2:
            return t.mean_all(t.sqrt(t.sum_rows(t.square(t.sub(u, Ht)))));
        case InterKind::Cos: {
            Var num = t.sum_rows(t.mul(u, Ht));
            Var cosine = t.div(num, t.mul(row_norms(t, u), row_norms(t, Ht)));
            return t.add_scalar(t.scale(t.mean_all(cosine), -1.0), 1.0);
        }
        case InterKind::PKD: {
            Var d = t.sub(normalize_rows(t, u), normalize_rows(t, Ht));
            return t.mean_all(t.sum_rows(t.square(d)));
        }
        case InterKind::CE: {
            Mat target = t.val(Ht);
            kernels::softmax_rows(target);
            return soft_ce(t, u, target);
        }
        case InterKind::MI_alpha:
            throw std::invalid_argument("inter_loss: MI_alpha requires batch context");
    }
    throw std::logic_error("inter_loss: unknown kind");
}

double inter_loss_value(InterKind kind, const Mat& Hs, const Mat& Ht, const Projection& proj) {
    Tape t;
    Var hs = t.leaf(Hs);
    Var pw = proj.is_identity() ? Var{} : t.leaf(proj.w);
    return t.val(inter_loss_graph(t, kind, hs, t.leaf(Ht), pw)).a[0];
}

Var mi_inter_loss_graph(Tape& t, const CriticPair& critic, const CriticPair::GraphVars& cv,
                        const std::vector<Var>& u_pooled, const std::vector<Var>& v_pooled,
                        double alpha) {
    if (u_pooled.size() < 2) throw std::invalid_argument("mi inter loss: batch context needs B >= 2");
    auto [scores, logq] = critic.score_graph_rows(t, cv, u_pooled, v_pooled);
    return t.scale(mi_alpha_bound_graph(t, scores, logq, alpha), -1.0);
}

}  // namespace dk
