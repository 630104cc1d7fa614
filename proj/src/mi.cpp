#include "distillkit/mi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "distillkit/kernels.hpp"

namespace dk {

double gaussian_mi_oracle(double rho, int d) {
    if (std::fabs(rho) >= 1.0) throw std::invalid_argument("gaussian_mi_oracle: |rho| must be < 1");
    if (d < 1) throw std::invalid_argument("gaussian_mi_oracle: d must be >= 1");
    return -0.5 * d * std::log1p(-rho * rho);
}

double mi_alpha_bound(const ScoreMatrix& sm, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("mi_alpha_bound: alpha outside [0,1]");
    int B = sm.batch();
    if (B < 2) throw std::invalid_argument("mi_alpha_bound: batch must be >= 2");
    if (static_cast<int>(sm.log_baseline.size()) != B)
        throw std::invalid_argument("mi_alpha_bound: baseline length mismatch");
    const Mat& S = sm.scores;
    if (!S.all_finite()) throw std::invalid_argument("mi_alpha_bound: non-finite scores");

    // log m_j = logsumexp_i S(i,j) - log B
    std::vector<double> log_d(B);
    for (int j = 0; j < B; ++j) {
        double mx = S(0, j);
        for (int i = 1; i < B; ++i) mx = std::max(mx, S(i, j));
        double s = 0.0;
        for (int i = 0; i < B; ++i) s += std::exp(S(i, j) - mx);
        double log_m = mx + std::log(s) - std::log(static_cast<double>(B));
        if (alpha == 1.0) {
            log_d[j] = log_m;
        } else if (alpha == 0.0) {
            log_d[j] = sm.log_baseline[j];
        } else {
            double u = std::log(alpha) + log_m;
            double v = std::log1p(-alpha) + sm.log_baseline[j];
            double m2 = std::max(u, v);
            log_d[j] = m2 + std::log(std::exp(u - m2) + std::exp(v - m2));
        }
    }
    double term1 = 0.0;
    for (int i = 0; i < B; ++i) term1 += S(i, i) - log_d[i];
    term1 /= B;
    double term2 = 0.0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
            if (i != j) term2 += std::exp(S(i, j) - log_d[j]);
    term2 /= static_cast<double>(B) * (B - 1);
    return term1 - term2 + 1.0;
}

Var mi_alpha_bound_graph(Tape& t, Var scores, Var log_baseline, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("mi_alpha_bound: alpha outside [0,1]");
    int B = t.val(scores).rows;
    if (B < 2) throw std::invalid_argument("mi_alpha_bound: batch must be >= 2");
    // column logsumexp - log B
    Var log_m = t.add_scalar(t.logsumexp_rows(t.transpose(scores)), -std::log(static_cast<double>(B)));
    Var log_d = t.alpha_mix_log(log_m, log_baseline, alpha);
    Var term1 = t.mean_all(t.sub(t.take_diag(scores), log_d));
    Var shifted = t.sub(scores, t.broadcast_row(t.transpose(log_d), B));
    Mat offdiag(B, B, 1.0);
    for (int i = 0; i < B; ++i) offdiag(i, i) = 0.0;
    Var ratios = t.mul(t.exp(shifted), t.leaf(std::move(offdiag)));
    Var term2 = t.scale(t.sum_all(ratios), 1.0 / (static_cast<double>(B) * (B - 1)));
    return t.add_scalar(t.sub(term1, term2), 1.0);
}

double plugin_critic_value(const Mat& x, const Mat& y, PluginCritic kind) {
    if (x.size() != y.size()) throw std::invalid_argument("plugin critic: dimension mismatch");
    auto sqdist = [&] {
        double s = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            double d = x.a[i] - y.a[i];
            s += d * d;
        }
        return s;
    };
    switch (kind) {
        case PluginCritic::NegMse:
            return -sqdist();
        case PluginCritic::NegL2:
            return -std::sqrt(sqdist());
        case PluginCritic::NegPkd: {
            double nx = std::sqrt(dot(x.a, x.a)) + 1e-12;
            double ny = std::sqrt(dot(y.a, y.a)) + 1e-12;
            double s = 0.0;
            for (size_t i = 0; i < x.size(); ++i) {
                double d = x.a[i] / nx - y.a[i] / ny;
                s += d * d;
            }
            return -s;
        }
        case PluginCritic::CosMinus1: {
            double nx = std::sqrt(dot(x.a, x.a)) + 1e-12;
            double ny = std::sqrt(dot(y.a, y.a)) + 1e-12;
            return dot(x.a, y.a) / (nx * ny) - 1.0;
        }
    }
    throw std::logic_error("plugin critic: unknown kind");
}

double tuba_plugin_bound(const Mat& X, const Mat& Y, PluginCritic kind) {
    if (X.rows != Y.rows || X.cols != Y.cols)
        throw std::invalid_argument("tuba_plugin_bound: batch shape mismatch");
    int B = X.rows;
    if (B < 1) throw std::invalid_argument("tuba_plugin_bound: empty batch");
    auto row = [](const Mat& m, int i) {
        Mat r(1, m.cols);
        for (int j = 0; j < m.cols; ++j) r(0, j) = m(i, j);
        return r;
    };
    double joint = 0.0;
    for (int i = 0; i < B; ++i) joint += plugin_critic_value(row(X, i), row(Y, i), kind);
    joint /= B;
    double product = 0.0;
    if (B == 1) {
        product = std::exp(plugin_critic_value(row(X, 0), row(Y, 0), kind));
    } else {
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < B; ++j)
                if (i != j) product += std::exp(plugin_critic_value(row(X, i), row(Y, j), kind));
        product /= static_cast<double>(B) * (B - 1);
    }
    return joint - product + 1.0;
}

// ---------- trainable critic ----------

static EncoderConfig tower_cfg(const CriticConfig& c, int n_out) {
    EncoderConfig e;
    e.n_layers = c.n_layers;
    e.h_units = c.h_units;
    e.h_mid = c.h_mid;
    e.n_heads = c.n_heads;
    e.vocab_size = 2;  // towers only use the embedded-input path
    e.n_classes = n_out;
    e.max_len = 2;
    e.head = HeadKind::Classification;
    return e;
}

CriticPair CriticPair::init(int dim_x, int dim_y, const CriticConfig& cfg, Rng& rng) {
    if (dim_x < 1 || dim_y < 1) throw std::invalid_argument("CriticPair: bad input dimension");
    CriticPair c;
    c.cfg = cfg;
    c.dim_x = dim_x;
    c.dim_y = dim_y;
    auto randn = [&rng](int r, int cc, double std) {
        Mat w(r, cc);
        for (double& v : w.a) v = rng.normal(0.0, std);
        return w;
    };
    c.win_x = randn(dim_x, cfg.h_units, 1.0 / std::sqrt(static_cast<double>(dim_x)));
    c.win_y = randn(dim_y, cfg.h_units, 1.0 / std::sqrt(static_cast<double>(dim_y)));
    c.win_q = randn(dim_y, cfg.h_units, 1.0 / std::sqrt(static_cast<double>(dim_y)));
    c.tower_x = EncoderModel::init(tower_cfg(cfg, cfg.out_dim), rng);
    c.tower_y = EncoderModel::init(tower_cfg(cfg, cfg.out_dim), rng);
    c.tower_q = EncoderModel::init(tower_cfg(cfg, 1), rng);
    // log q starts at 0: zero the baseline head so exp(log q) = 1 initially.
    for (double& v : c.tower_q.params["head.w"].a) v = 0.0;
    return c;
}

ScoreMatrix CriticPair::score(const Mat& X, const Mat& Y) const {
    if (X.cols != dim_x || Y.cols != dim_y)
        throw std::invalid_argument("CriticPair: input dimension mismatch");
    if (X.rows != Y.rows) throw std::invalid_argument("CriticPair: batch size mismatch");
    int B = X.rows;
    Mat G(B, cfg.out_dim), H(B, cfg.out_dim);
    std::vector<double> logq(B);
    Mat xrow(1, dim_x), yrow(1, dim_y);
    for (int i = 0; i < B; ++i) {
        for (int j = 0; j < dim_x; ++j) xrow(0, j) = X(i, j);
        for (int j = 0; j < dim_y; ++j) yrow(0, j) = Y(i, j);
        Mat gx = tower_x.forward_embedded(kernels::matmul(xrow, win_x)).logits;
        Mat hy = tower_y.forward_embedded(kernels::matmul(yrow, win_y)).logits;
        for (int k = 0; k < cfg.out_dim; ++k) {
            G(i, k) = gx(0, k);
            H(i, k) = hy(0, k);
        }
        logq[i] = tower_q.forward_embedded(kernels::matmul(yrow, win_q)).logits(0, 0);
    }
    ScoreMatrix sm;
    sm.scores = Mat(B, B);
    double scl = 1.0 / std::sqrt(static_cast<double>(cfg.out_dim));
    kernels::gemm_a_bt(G, H, sm.scores);
    for (double& v : sm.scores.a) v *= scl;
    sm.log_baseline = std::move(logq);
    return sm;
}

CriticPair::GraphVars CriticPair::lift(Tape& t) const {
    GraphVars v;
    v.tx = tower_x.lift(t);
    v.ty = tower_y.lift(t);
    v.tq = tower_q.lift(t);
    v.wx = t.leaf(win_x);
    v.wy = t.leaf(win_y);
    v.wq = t.leaf(win_q);
    return v;
}

std::pair<Var, Var> CriticPair::score_graph_rows(Tape& t, const GraphVars& v,
                                                 const std::vector<Var>& xrows,
                                                 const std::vector<Var>& yrows) const {
    if (xrows.size() != yrows.size() || xrows.empty())
        throw std::invalid_argument("CriticPair: batch size mismatch");
    std::vector<Var> gx, hy, lq;
    for (size_t i = 0; i < xrows.size(); ++i) {
        if (t.val(xrows[i]).cols != dim_x || t.val(yrows[i]).cols != dim_y)
            throw std::invalid_argument("CriticPair: input dimension mismatch");
        Var xe = t.matmul(xrows[i], v.wx);
        Var ye = t.matmul(yrows[i], v.wy);
        Var qe = t.matmul(yrows[i], v.wq);
        gx.push_back(tower_x.forward_graph_embedded(t, v.tx, xe).logits);
        hy.push_back(tower_y.forward_graph_embedded(t, v.ty, ye).logits);
        lq.push_back(tower_q.forward_graph_embedded(t, v.tq, qe).logits);
    }
    Var G = t.concat_rows(gx);
    Var H = t.concat_rows(hy);
    Var scores = t.scale(t.matmul(G, t.transpose(H)), 1.0 / std::sqrt(static_cast<double>(cfg.out_dim)));
    Var logq = t.concat_rows(lq);
    return {scores, logq};
}

std::pair<Var, Var> CriticPair::score_graph(Tape& t, const GraphVars& v, const Mat& X,
                                            const Mat& Y) const {
    if (X.cols != dim_x || Y.cols != dim_y)
        throw std::invalid_argument("CriticPair: input dimension mismatch");
    if (X.rows != Y.rows) throw std::invalid_argument("CriticPair: batch size mismatch");
    int B = X.rows;
    std::vector<Var> xrows, yrows;
    for (int i = 0; i < B; ++i) {
        Mat xrow(1, dim_x), yrow(1, dim_y);
        for (int j = 0; j < dim_x; ++j) xrow(0, j) = X(i, j);
        for (int j = 0; j < dim_y; ++j) yrow(0, j) = Y(i, j);
        xrows.push_back(t.leaf(std::move(xrow)));
        yrows.push_back(t.leaf(std::move(yrow)));
    }
    return score_graph_rows(t, v, xrows, yrows);
}

std::vector<std::pair<std::string, Mat*>> CriticPair::named_params() {
    std::vector<std::pair<std::string, Mat*>> out;
    out.emplace_back("win_x", &win_x);
    out.emplace_back("win_y", &win_y);
    out.emplace_back("win_q", &win_q);
    for (auto& [n, w] : tower_x.params) out.emplace_back("fx." + n, &w);
    for (auto& [n, w] : tower_y.params) out.emplace_back("fy." + n, &w);
    for (auto& [n, w] : tower_q.params) out.emplace_back("q." + n, &w);
    return out;
}

ParamMap CriticPair::grads(const Tape& t, const GraphVars& v) const {
    ParamMap g;
    g["win_x"] = t.grad(v.wx);
    g["win_y"] = t.grad(v.wy);
    g["win_q"] = t.grad(v.wq);
    for (const auto& [n, var] : v.tx) g["fx." + n] = t.grad(var);
    for (const auto& [n, var] : v.ty) g["fy." + n] = t.grad(var);
    for (const auto& [n, var] : v.tq) g["q." + n] = t.grad(var);
    return g;
}

void CriticPair::apply_step(AdamState& opt, const ParamMap& grads) {
    ParamMap all;
    for (auto& [name, w] : named_params()) all[name] = *w;
    opt.step(all, grads);
    for (auto& [name, w] : named_params()) *w = all.at(name);
}

PairSampler gaussian_pair_sampler(double rho, int d) {
    if (std::fabs(rho) >= 1.0) throw std::invalid_argument("gaussian sampler: |rho| must be < 1");
    double c = std::sqrt(1.0 - rho * rho);
    return [rho, c, d](Rng& rng, Mat& X, Mat& Y) {
        int B = X.rows;
        if (X.cols != d || Y.cols != d || Y.rows != B)
            throw std::invalid_argument("gaussian sampler: bad batch shape");
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < d; ++j) {
                double u = rng.normal();
                double v = rng.normal();
                X(i, j) = u;
                Y(i, j) = rho * u + c * v;
            }
    };
}

MiTrainResult train_mi_alpha(const PairSampler& sampler, int dim_x, int dim_y, double alpha,
                             int steps, int batch, uint64_t seed, const CriticConfig& ccfg,
                             double lr) {
    if (steps < 0) throw std::invalid_argument("train_mi_alpha: steps must be >= 0");
    if (batch < 2) throw std::invalid_argument("train_mi_alpha: batch must be >= 2");
    Rng root(seed);
    Rng init_rng = root.stream("critic-init");
    Rng data_rng = root.stream("data-order");
    MiTrainResult res;
    res.critic = CriticPair::init(dim_x, dim_y, ccfg, init_rng);
    AdamState opt;
    opt.lr = lr;
    Mat X(batch, dim_x), Y(batch, dim_y);
    if (steps == 0) {
        sampler(data_rng, X, Y);
        res.estimate = mi_alpha_bound(res.critic.score(X, Y), alpha);
        res.bound_trace.push_back(res.estimate);
        return res;
    }
    for (int s = 0; s < steps; ++s) {
        sampler(data_rng, X, Y);
        Tape t;
        auto v = res.critic.lift(t);
        auto [scores, logq] = res.critic.score_graph(t, v, X, Y);
        Var bound = mi_alpha_bound_graph(t, scores, logq, alpha);
        res.bound_trace.push_back(t.val(bound).a[0]);
        Var loss = t.scale(bound, -1.0);  // ascend the bound
        t.backward(loss);
        res.critic.apply_step(opt, res.critic.grads(t, v));
    }
    int tail = std::max(1, steps / 10);
    res.estimate = std::accumulate(res.bound_trace.end() - tail, res.bound_trace.end(), 0.0) / tail;
    return res;
}

}  // namespace dk
