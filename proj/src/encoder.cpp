#include "distillkit/encoder.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "distillkit/kernels.hpp"
#include "json.hpp"

namespace dk {

static std::string lname(int l, const char* part) { return "L" + std::to_string(l) + "." + part; }

EncoderModel EncoderModel::init(const EncoderConfig& cfg, Rng& rng) {
    if (cfg.h_units % cfg.n_heads != 0)
        throw std::invalid_argument("EncoderModel: h_units not divisible by n_heads");
    EncoderModel m;
    m.cfg = cfg;
    auto randn = [&rng](int r, int c, double std) {
        Mat w(r, c);
        for (double& x : w.a) x = rng.normal(0.0, std);
        return w;
    };
    double ws = 1.0 / std::sqrt(static_cast<double>(cfg.h_units));
    m.params["embed"] = randn(cfg.vocab_size, cfg.h_units, 0.1);
    m.params["pos"] = randn(cfg.max_len, cfg.h_units, 0.1);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (const char* p : {"wq", "wk", "wv", "wo"})
            m.params[lname(l, p)] = randn(cfg.h_units, cfg.h_units, ws);
        for (const char* p : {"bq", "bk", "bv", "bo"}) m.params[lname(l, p)] = Mat(1, cfg.h_units);
        m.params[lname(l, "w1")] = randn(cfg.h_units, cfg.h_mid, ws);
        m.params[lname(l, "b1")] = Mat(1, cfg.h_mid);
        m.params[lname(l, "w2")] = randn(cfg.h_mid, cfg.h_units, 1.0 / std::sqrt(static_cast<double>(cfg.h_mid)));
        m.params[lname(l, "b2")] = Mat(1, cfg.h_units);
    }
    m.params["head.w"] = randn(cfg.h_units, cfg.n_classes, ws);
    m.params["head.b"] = Mat(1, cfg.n_classes);
    return m;
}

Mat EncoderModel::embed(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("encoder: empty token sequence");
    int T = static_cast<int>(tokens.size());
    if (T > cfg.max_len) throw std::invalid_argument("encoder: sequence longer than max_len");
    const Mat& E = params.at("embed");
    const Mat& P = params.at("pos");
    Mat x(T, cfg.h_units);
    for (int t = 0; t < T; ++t) {
        if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size)
            throw std::invalid_argument("encoder: token id out of range");
        for (int j = 0; j < cfg.h_units; ++j) x(t, j) = E(tokens[t], j) + P(t, j);
    }
    return x;
}

// ---------- plain forward ----------

namespace {

Mat add_bias(Mat x, const Mat& b) {
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) x(i, j) += b(0, j);
    return x;
}

void layer_norm_inplace(Mat& x, double eps = 1e-5) {
    for (int i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < x.cols; ++j) mu += x(i, j);
        mu /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            double d = x(i, j) - mu;
            var += d * d;
        }
        var /= x.cols;
        double is = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j) x(i, j) = (x(i, j) - mu) * is;
    }
}

}  // namespace

ForwardResult EncoderModel::forward_embedded(const Mat& x0) const {
    if (x0.cols != cfg.h_units) throw std::invalid_argument("encoder: embedded input width != h_units");
    if (x0.rows < 1) throw std::invalid_argument("encoder: empty input");
    int T = x0.rows;
    int dh = cfg.h_units / cfg.n_heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat x = x0;
    ForwardResult out;
    for (int l = 0; l < cfg.n_layers; ++l) {
        Mat Q = add_bias(kernels::matmul(x, params.at(lname(l, "wq"))), params.at(lname(l, "bq")));
        Mat K = add_bias(kernels::matmul(x, params.at(lname(l, "wk"))), params.at(lname(l, "bk")));
        Mat V = add_bias(kernels::matmul(x, params.at(lname(l, "wv"))), params.at(lname(l, "bv")));
        Mat O(T, cfg.h_units);
        for (int h = 0; h < cfg.n_heads; ++h) {
            int c0 = h * dh;
            Mat S(T, T);
            for (int i = 0; i < T; ++i)
                for (int j = 0; j < T; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < dh; ++k) s += Q(i, c0 + k) * K(j, c0 + k);
                    S(i, j) = s * scl;
                }
            kernels::softmax_rows(S);
            for (int i = 0; i < T; ++i)
                for (int k = 0; k < dh; ++k) {
                    double s = 0.0;
                    for (int j = 0; j < T; ++j) s += S(i, j) * V(j, c0 + k);
                    O(i, c0 + k) = s;
                }
        }
        Mat AO = add_bias(kernels::matmul(O, params.at(lname(l, "wo"))), params.at(lname(l, "bo")));
        for (size_t i = 0; i < x.size(); ++i) x.a[i] += AO.a[i];
        layer_norm_inplace(x);
        Mat F1 = add_bias(kernels::matmul(x, params.at(lname(l, "w1"))), params.at(lname(l, "b1")));
        for (double& v : F1.a) v = v > 0.0 ? v : 0.0;
        Mat F2 = add_bias(kernels::matmul(F1, params.at(lname(l, "w2"))), params.at(lname(l, "b2")));
        for (size_t i = 0; i < x.size(); ++i) x.a[i] += F2.a[i];
        layer_norm_inplace(x);
        out.hidden.push_back(x);
    }
    if (cfg.head == HeadKind::Classification) {
        Mat pooled(1, cfg.h_units);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < cfg.h_units; ++j) pooled(0, j) += x(i, j);
        for (double& v : pooled.a) v /= T;
        out.logits = add_bias(kernels::matmul(pooled, params.at("head.w")), params.at("head.b"));
    } else {
        out.logits = add_bias(kernels::matmul(x, params.at("head.w")), params.at("head.b"));
    }
    return out;
}

ForwardResult EncoderModel::forward(const std::vector<int>& tokens) const {
    return forward_embedded(embed(tokens));
}

Mat EncoderModel::predict_proba(const std::vector<int>& tokens) const {
    Mat l = forward(tokens).logits;
    kernels::softmax_rows(l);
    return l;
}

Mat EncoderModel::predict_proba_embedded(const Mat& x) const {
    Mat l = forward_embedded(x).logits;
    kernels::softmax_rows(l);
    return l;
}

// ---------- graph forward ----------

VarMap EncoderModel::lift(Tape& tape) const {
    VarMap vars;
    for (const auto& [name, value] : params) vars[name] = tape.leaf(value);
    return vars;
}

void EncoderModel::accumulate_grads(const Tape& tape, const VarMap& vars, ParamMap& grads) const {
    for (const auto& [name, v] : vars) {
        const Mat& g = tape.grad(v);
        Mat& dst = grads[name];
        if (dst.size() == 0) dst = Mat(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) dst.a[i] += g.a[i];
    }
}

GraphForwardResult EncoderModel::forward_graph_embedded(Tape& t, const VarMap& vars, Var x) const {
    if (t.val(x).cols != cfg.h_units)
        throw std::invalid_argument("encoder: embedded input width != h_units");
    int T = t.val(x).rows;
    int dh = cfg.h_units / cfg.n_heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    GraphForwardResult out;
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto proj = [&](const char* w, const char* b) {
            return t.add(t.matmul(x, vars.at(lname(l, w))), t.broadcast_row(vars.at(lname(l, b)), T));
        };
        Var Q = proj("wq", "bq"), K = proj("wk", "bk"), V = proj("wv", "bv");
        std::vector<Var> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Var Qh = t.slice_cols(Q, h * dh, dh);
            Var Kh = t.slice_cols(K, h * dh, dh);
            Var Vh = t.slice_cols(V, h * dh, dh);
            Var S = t.scale(t.matmul(Qh, t.transpose(Kh)), scl);
            heads.push_back(t.matmul(t.softmax_rows(S), Vh));
        }
        Var O = cfg.n_heads == 1 ? heads[0] : t.concat_cols(heads);
        Var AO = t.add(t.matmul(O, vars.at(lname(l, "wo"))), t.broadcast_row(vars.at(lname(l, "bo")), T));
        x = t.layer_norm_rows(t.add(x, AO));
        Var F1 = t.relu(t.add(t.matmul(x, vars.at(lname(l, "w1"))), t.broadcast_row(vars.at(lname(l, "b1")), T)));
        Var F2 = t.add(t.matmul(F1, vars.at(lname(l, "w2"))), t.broadcast_row(vars.at(lname(l, "b2")), T));
        x = t.layer_norm_rows(t.add(x, F2));
        out.hidden.push_back(x);
    }
    Var feats = cfg.head == HeadKind::Classification ? t.mean_rows(x) : x;
    int fr = t.val(feats).rows;
    out.logits = t.add(t.matmul(feats, vars.at("head.w")), t.broadcast_row(vars.at("head.b"), fr));
    return out;
}

GraphForwardResult EncoderModel::forward_graph(Tape& t, const VarMap& vars,
                                               const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("encoder: empty token sequence");
    int T = static_cast<int>(tokens.size());
    if (T > cfg.max_len) throw std::invalid_argument("encoder: sequence longer than max_len");
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab_size) throw std::invalid_argument("encoder: token id out of range");
    Var emb = t.gather_rows(vars.at("embed"), tokens);
    std::vector<int> pos_ids(tokens.size());
    for (int i = 0; i < T; ++i) pos_ids[i] = i;
    Var x = t.add(emb, t.gather_rows(vars.at("pos"), pos_ids));
    return forward_graph_embedded(t, vars, x);
}

// ---------- checkpoint ----------

void save_checkpoint(const EncoderModel& m, const std::string& path) {
    nlohmann::json j;
    j["n_layers"] = m.cfg.n_layers;
    j["h_units"] = m.cfg.h_units;
    j["h_mid"] = m.cfg.h_mid;
    j["n_heads"] = m.cfg.n_heads;
    j["vocab_size"] = m.cfg.vocab_size;
    j["n_classes"] = m.cfg.n_classes;
    j["max_len"] = m.cfg.max_len;
    j["head"] = m.cfg.head == HeadKind::Classification ? "classification" : "tagging";
    for (const auto& [name, w] : m.params) {
        j["params"][name] = {{"rows", w.rows}, {"cols", w.cols}, {"data", w.a}};
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << j.dump();
}

EncoderModel load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    EncoderModel m;
    m.cfg.n_layers = j.at("n_layers");
    m.cfg.h_units = j.at("h_units");
    m.cfg.h_mid = j.at("h_mid");
    m.cfg.n_heads = j.at("n_heads");
    m.cfg.vocab_size = j.at("vocab_size");
    m.cfg.n_classes = j.at("n_classes");
    m.cfg.max_len = j.at("max_len");
    m.cfg.head = j.at("head") == "classification" ? HeadKind::Classification : HeadKind::Tagging;
    for (auto& [name, pj] : j.at("params").items()) {
        Mat w(pj.at("rows"), pj.at("cols"), pj.at("data").get<std::vector<double>>());
        m.params[name] = std::move(w);
    }
    return m;
}

ParamMap zero_like(const ParamMap& params) {
    ParamMap z;
    for (const auto& [name, w] : params) z[name] = Mat(w.rows, w.cols);
    return z;
}

}  // namespace dk
