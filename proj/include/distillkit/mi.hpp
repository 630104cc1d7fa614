#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "distillkit/adam.hpp"
#include "distillkit/encoder.hpp"

namespace dk {

// BxB critic scores for a batch of paired samples: scores(i,j) = f(x_i, y_j),
// diagonal holds the positive pairs. log_baseline[j] = log q(y_j).
struct ScoreMatrix {
    Mat scores;
    std::vector<double> log_baseline;
    int batch() const { return scores.rows; }
};

// Interpolated multisample MI lower bound (nats). The partition estimate
// m_j averages exp scores over the whole column, positive included; the
// denominator blends it with the learned baseline by alpha.
double mi_alpha_bound(const ScoreMatrix& sm, double alpha);

// Differentiable version over graph-valued scores (BxB) and log-baseline (Bx1).
Var mi_alpha_bound_graph(Tape& t, Var scores, Var log_baseline, double alpha);

// Closed-form MI of d independent correlated Gaussian coordinate pairs.
double gaussian_mi_oracle(double rho, int d);

enum class PluginCritic { NegMse, NegL2, NegPkd, CosMinus1 };

// I_TUBA with a(y)=1 and a fixed, parameter-free critic. Joint term over the
// aligned pairs (rows of X matched with rows of Y), product term over all
// misaligned pairs. A single pair serves as both joint and product sample.
double tuba_plugin_bound(const Mat& X, const Mat& Y, PluginCritic kind);

double plugin_critic_value(const Mat& x, const Mat& y, PluginCritic kind);

struct CriticConfig {
    // Default follows the two-layer-encoder critic, scaled to desk size.
    int n_layers = 2;
    int h_units = 16;
    int h_mid = 32;
    int n_heads = 2;
    int out_dim = 16;  // tower embedding width; f(x,y) = g(x).h(y)/sqrt(out_dim)
};

// Trainable critic: f(x,y) is the scaled inner product of two encoder towers
// (so a full BxB score matrix costs one matmul), q(y) a third scalar-output
// tower parameterized in log space.
struct CriticPair {
    CriticConfig cfg;
    int dim_x = 0, dim_y = 0;
    Mat win_x, win_y, win_q;              // input projections into the towers
    EncoderModel tower_x, tower_y, tower_q;

    static CriticPair init(int dim_x, int dim_y, const CriticConfig& cfg, Rng& rng);

    ScoreMatrix score(const Mat& X, const Mat& Y) const;

    struct GraphVars {
        VarMap tx, ty, tq;
        Var wx, wy, wq;
    };
    GraphVars lift(Tape& t) const;
    // Returns (scores BxB, log_baseline Bx1).
    std::pair<Var, Var> score_graph(Tape& t, const GraphVars& v, const Mat& X, const Mat& Y) const;
    // Same, over graph-valued 1xdim rows; gradients flow into the inputs too
    // (the student path during distillation).
    std::pair<Var, Var> score_graph_rows(Tape& t, const GraphVars& v, const std::vector<Var>& xrows,
                                         const std::vector<Var>& yrows) const;

    // Flattened parameter access, prefix-qualified; used by the optimizer and
    // by gradient checks.
    std::vector<std::pair<std::string, Mat*>> named_params();
    void apply_step(AdamState& opt, const ParamMap& grads);
    ParamMap grads(const Tape& t, const GraphVars& v) const;
};

// Fills X (Bxdim_x) and Y (Bxdim_y) with one minibatch of paired samples.
using PairSampler = std::function<void(Rng& rng, Mat& X, Mat& Y)>;

PairSampler gaussian_pair_sampler(double rho, int d);

struct MiTrainResult {
    CriticPair critic;
    double estimate = 0.0;           // bound averaged over the final 10% of steps
    std::vector<double> bound_trace;
};

MiTrainResult train_mi_alpha(const PairSampler& sampler, int dim_x, int dim_y, double alpha,
                             int steps, int batch, uint64_t seed,
                             const CriticConfig& ccfg = {}, double lr = 1e-3);

}  // namespace dk
