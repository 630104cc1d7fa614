#include "distillkit/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dk {

using nlohmann::json;

DistillerConfig DistillerConfig::defaults(AugPolicy aug) {
    DistillerConfig c;
    c.aug_policy = std::move(aug);
    c.aug_policy.validate_and_canonicalize();
    if (c.aug_policy.empty()) {
        c.beta2 = 0.0;
        c.gamma1 = 0.0;
        c.gamma2 = 0.0;
    }
    return c;
}

void DistillerConfig::validate() const {
    if (beta1 < 0 || beta2 < 0 || gamma1 < 0 || gamma2 < 0 || inter_weight < 0)
        throw std::invalid_argument("config: term weights must be nonnegative");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be nonnegative");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
    if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be positive");
    if (inter_loss.kind == InterKind::MI_alpha &&
        (inter_loss.alpha < 0.0 || inter_loss.alpha > 1.0))
        throw std::invalid_argument("config: inter_loss.alpha outside [0, 1]");
    AugPolicy copy = aug_policy;
    copy.validate_and_canonicalize();
    if (copy.ops != aug_policy.ops)
        throw std::invalid_argument("config: augmentation policy not in canonical order");
}

DistillerConfig DistillerConfig::parse_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        if (strip(line).empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }

    AugPolicy aug;
    if (auto it = kv.find("aug.ops"); it != kv.end()) aug = AugPolicy::parse(it->second);
    DistillerConfig c = defaults(aug);

    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto num = [&](const char* key, double& out) {
        if (auto v = take(key)) out = std::stod(*v);
    };
    take("aug.ops");
    if (auto v = take("inter_loss.kind")) c.inter_loss.kind = inter_kind_from_string(*v);
    num("inter_loss.alpha", c.inter_loss.alpha);
    if (auto v = take("pred_loss")) c.pred_loss = pred_kind_from_string(*v);
    if (auto v = take("mapping")) c.mapping = map_strategy_from_string(*v);
    num("aug.ca_mask_p", c.aug_policy.ca_mask_p);
    num("aug.ra_swap_p", c.aug_policy.ra_swap_p);
    num("aug.ra_replace_p", c.aug_policy.ra_replace_p);
    num("aug.mixup_beta_a", c.aug_policy.mixup_beta_a);
    num("beta1", c.beta1);
    num("beta2", c.beta2);
    num("gamma1", c.gamma1);
    num("gamma2", c.gamma2);
    num("inter_weight", c.inter_weight);
    if (auto v = take("epochs")) c.epochs = std::stoi(*v);
    if (auto v = take("batch_size")) c.batch_size = std::stoi(*v);
    num("learning_rate", c.learning_rate);
    if (auto v = take("seed")) c.seed = std::stoull(*v);
    if (!kv.empty()) throw std::invalid_argument("config: unknown key " + kv.begin()->first);
    c.validate();
    return c;
}

std::string DistillerConfig::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "inter_loss.kind = " << dk::to_string(inter_loss.kind) << '\n';
    out << "inter_loss.alpha = " << inter_loss.alpha << '\n';
    out << "pred_loss = " << dk::to_string(pred_loss) << '\n';
    out << "mapping = " << dk::to_string(mapping) << '\n';
    out << "aug.ops = " << aug_policy.describe() << '\n';
    out << "aug.ca_mask_p = " << aug_policy.ca_mask_p << '\n';
    out << "aug.ra_swap_p = " << aug_policy.ra_swap_p << '\n';
    out << "aug.ra_replace_p = " << aug_policy.ra_replace_p << '\n';
    out << "aug.mixup_beta_a = " << aug_policy.mixup_beta_a << '\n';
    out << "beta1 = " << beta1 << '\n';
    out << "beta2 = " << beta2 << '\n';
    out << "gamma1 = " << gamma1 << '\n';
    out << "gamma2 = " << gamma2 << '\n';
    out << "inter_weight = " << inter_weight << '\n';
    out << "epochs = " << epochs << '\n';
    out << "batch_size = " << batch_size << '\n';
    out << "learning_rate = " << learning_rate << '\n';
    out << "seed = " << seed << '\n';
    return out.str();
}

DistillerConfig preset(const std::string& name) {
    if (name == "tinybert-style") {
        DistillerConfig c = DistillerConfig::defaults(AugPolicy{{AugOp::CA}});
        c.pred_loss = PredKind::CE;
        c.inter_loss.kind = InterKind::MSE;
        c.mapping = MapStrategy::Skip;
        return c;
    }
    if (name == "bert-emd-style") {
        DistillerConfig c = DistillerConfig::defaults();
        c.pred_loss = PredKind::CE;
        c.inter_loss.kind = InterKind::MSE;
        c.mapping = MapStrategy::EMD;
        return c;
    }
    if (name == "mixkd-style") {
        DistillerConfig c = DistillerConfig::defaults(AugPolicy{{AugOp::Mixup}});
        c.pred_loss = PredKind::CE;
        c.inter_weight = 0.0;  // prediction-layer distillation only
        return c;
    }
    throw std::invalid_argument("unknown preset: " + name);
}

namespace {

json config_to_json(const DistillerConfig& c) {
    return json{{"inter_loss", {{"kind", to_string(c.inter_loss.kind)}, {"alpha", c.inter_loss.alpha}}},
                {"pred_loss", to_string(c.pred_loss)},
                {"mapping", to_string(c.mapping)},
                {"aug",
                 {{"ops", c.aug_policy.describe()},
                  {"ca_mask_p", c.aug_policy.ca_mask_p},
                  {"ra_swap_p", c.aug_policy.ra_swap_p},
                  {"ra_replace_p", c.aug_policy.ra_replace_p},
                  {"mixup_beta_a", c.aug_policy.mixup_beta_a}}},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"gamma1", c.gamma1},
                {"gamma2", c.gamma2},
                {"inter_weight", c.inter_weight},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"seed", c.seed}};
}

DistillerConfig config_from_json(const json& j) {
    DistillerConfig c;
    c.inter_loss.kind = inter_kind_from_string(j.at("inter_loss").at("kind").get<std::string>());
    c.inter_loss.alpha = j.at("inter_loss").at("alpha").get<double>();
    c.pred_loss = pred_kind_from_string(j.at("pred_loss").get<std::string>());
    c.mapping = map_strategy_from_string(j.at("mapping").get<std::string>());
    c.aug_policy = AugPolicy::parse(j.at("aug").at("ops").get<std::string>());
    c.aug_policy.ca_mask_p = j.at("aug").at("ca_mask_p").get<double>();
    c.aug_policy.ra_swap_p = j.at("aug").at("ra_swap_p").get<double>();
    c.aug_policy.ra_replace_p = j.at("aug").at("ra_replace_p").get<double>();
    c.aug_policy.mixup_beta_a = j.at("aug").at("mixup_beta_a").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.gamma1 = j.at("gamma1").get<double>();
    c.gamma2 = j.at("gamma2").get<double>();
    c.inter_weight = j.at("inter_weight").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_run_records(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write run records: " + path);
    for (const RunRecord& r : records) {
        json j{{"config", config_to_json(r.config)}, {"dataset_id", r.dataset_id},
               {"task_kind", to_string(r.task_kind)}, {"teacher_score", r.teacher_score},
               {"student_score", r.student_score},   {"ratio", r.ratio},
               {"wall_time", r.wall_time},           {"seed", r.seed},
               {"failed", r.failed},                 {"error", r.error}};
        out << j.dump() << '\n';
    }
}

std::vector<RunRecord> load_run_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open run records: " + path);
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        RunRecord r;
        r.config = config_from_json(j.at("config"));
        r.dataset_id = j.at("dataset_id").get<std::string>();
        r.task_kind = task_kind_from_string(j.at("task_kind").get<std::string>());
        r.teacher_score = j.at("teacher_score").get<double>();
        r.student_score = j.at("student_score").get<double>();
        r.ratio = j.at("ratio").get<double>();
        r.wall_time = j.at("wall_time").get<double>();
        r.seed = j.at("seed").get<uint64_t>();
        r.failed = j.at("failed").get<bool>();
        r.error = j.at("error").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

double distillation_ratio(double student_score, double teacher_score) {
    if (!(teacher_score > 0.0))
        throw std::invalid_argument("distillation_ratio: teacher score must be positive");
    return student_score / teacher_score;
}

namespace {

int argmax_row(const Mat& m, int row) {
    int best = 0;
    for (int j = 1; j < m.cols; ++j)
        if (m(row, j) > m(row, best)) best = j;
    return best;
}

struct Span {
    int start, end, tag;  // [start, end), maximal same-tag run
    bool operator==(const Span&) const = default;
};

std::vector<Span> spans_of(const std::vector<int>& tags) {
    std::vector<Span> out;
    for (size_t i = 0; i < tags.size();) {
        size_t j = i;
        while (j < tags.size() && tags[j] == tags[i]) ++j;
        out.push_back({static_cast<int>(i), static_cast<int>(j), tags[i]});
        i = j;
    }
    return out;
}

}  // namespace

EvalResult evaluate_detailed(const EncoderModel& model, const Dataset& split) {
    if (split.examples.empty()) throw std::invalid_argument("evaluate: empty split");
    EvalResult r;
    if (split.task == TaskKind::Classification) {
        int hit = 0;
        for (const Example& ex : split.examples) {
            Mat logits = model.forward(ex.tokens).logits;
            hit += argmax_row(logits, 0) == ex.label;
        }
        r.accuracy = static_cast<double>(hit) / split.examples.size();
        return r;
    }
    long tokens = 0, hits = 0;
    long gold_spans = 0, pred_spans = 0, matched = 0;
    for (const Example& ex : split.examples) {
        Mat logits = model.forward(ex.tokens).logits;
        std::vector<int> pred(ex.tokens.size());
        for (size_t t = 0; t < pred.size(); ++t) {
            pred[t] = argmax_row(logits, static_cast<int>(t));
            hits += pred[t] == ex.tags[t];
        }
        tokens += static_cast<long>(pred.size());
        auto gs = spans_of(ex.tags), ps = spans_of(pred);
        gold_spans += static_cast<long>(gs.size());
        pred_spans += static_cast<long>(ps.size());
        for (const Span& s : ps)
            if (std::find(gs.begin(), gs.end(), s) != gs.end()) ++matched;
    }
    r.accuracy = static_cast<double>(hits) / tokens;
    r.span_f1 = (gold_spans + pred_spans) > 0
                    ? 2.0 * matched / static_cast<double>(gold_spans + pred_spans)
                    : 0.0;
    return r;
}

double evaluate(const EncoderModel& model, const Dataset& split) {
    return evaluate_detailed(model, split).accuracy;
}

EncoderModel train_supervised(const EncoderModel& init, const Dataset& train, int epochs,
                              int batch_size, double lr, uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("train_supervised: batch_size must be positive");
    EncoderModel model = init;
    Rng root(seed);
    Rng order_rng = root.stream("data-order");
    AdamState opt;
    opt.lr = lr;
    const size_t n = train.examples.size();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        for (size_t b0 = 0; b0 < n; b0 += batch_size) {
            size_t b1 = std::min(n, b0 + batch_size);
            Tape t;
            VarMap vars = model.lift(t);
            Var loss = t.scalar(0.0);
            for (size_t k = b0; k < b1; ++k) {
                const Example& ex = train.examples[order[k]];
                GraphForwardResult fr = model.forward_graph(t, vars, ex.tokens);
                std::vector<int> labels = train.task == TaskKind::Classification
                                              ? std::vector<int>{ex.label}
                                              : ex.tags;
                loss = t.add(loss, pred_loss_hard(t, PredKind::CE, fr.logits, labels));
            }
            loss = t.scale(loss, 1.0 / static_cast<double>(b1 - b0));
            t.backward(loss);
            ParamMap grads = zero_like(model.params);
            model.accumulate_grads(t, vars, grads);
            opt.step(model.params, grads);
        }
    }
    return model;
}

DistillState init_distill_state(const DistillerConfig& cfg, const EncoderModel& teacher,
                                const EncoderModel& student_init) {
    cfg.validate();
    const int M = teacher.cfg.n_layers, N = student_init.cfg.n_layers;
    if (N > M)
        throw std::invalid_argument("distill: student has more layers than the teacher");
    if (teacher.cfg.n_classes != student_init.cfg.n_classes)
        throw std::invalid_argument("distill: class count mismatch");
    if (teacher.cfg.vocab_size != student_init.cfg.vocab_size)
        throw std::invalid_argument("distill: vocab mismatch");

    DistillState st;
    st.student = student_init;
    if (cfg.mapping == MapStrategy::EMD) {
        st.mapping.strategy = MapStrategy::EMD;
        st.mapping.weights = Mat(M, N);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) st.pairs.emplace_back(i, j);
    } else {
        st.mapping = build_mapping(cfg.mapping, M, N);
        for (int j = 0; j < N; ++j)
            for (int i = 0; i < M; ++i)
                if (st.mapping.weights(i, j) == 1.0) st.pairs.emplace_back(i, j);
    }

    Rng root(cfg.seed);
    Rng proj_rng = root.stream("proj-init");
    for (int j = 0; j < N; ++j)
        st.projections.push_back(
            Projection::learned(student_init.cfg.h_units, teacher.cfg.h_units, proj_rng));

    if (cfg.inter_loss.kind == InterKind::MI_alpha && cfg.inter_weight > 0.0) {
        Rng critic_rng = root.stream("critic-init");
        CriticConfig ccfg;
        ccfg.n_layers = 1;
        ccfg.h_units = 8;
        ccfg.h_mid = 16;
        ccfg.n_heads = 2;
        ccfg.out_dim = 8;
        for (size_t p = 0; p < st.pairs.size(); ++p)
            st.critics.push_back(
                CriticPair::init(student_init.cfg.h_units, teacher.cfg.h_units, ccfg, critic_rng));
    }
    return st;
}

namespace {

// Per-example augmented view of a batch. When mixup is active the augmented
// input only exists in embedding space, once per model.
struct AugItem {
    std::vector<int> tokens;   // discrete-op output (also mixup ingredient)
    bool mixed = false;
    Mat student_x, teacher_x;  // embedded mixed inputs
    Mat soft_y;                // mixed labels: 1xC or TxC
};

Mat one_hot_rows(const std::vector<int>& ids, int n_classes) {
    Mat m(static_cast<int>(ids.size()), n_classes);
    for (size_t i = 0; i < ids.size(); ++i) m(static_cast<int>(i), ids[i]) = 1.0;
    return m;
}

std::vector<AugItem> build_augmented(const DistillerConfig& cfg,
                                     const std::vector<Example>& batch,
                                     const EncoderModel& teacher, const EncoderModel& student,
                                     TaskKind task, const Lexicon& lex,
                                     const UnigramTable& unigrams, Rng& rng) {
    std::vector<AugItem> items(batch.size());
    for (size_t b = 0; b < batch.size(); ++b)
        items[b].tokens = apply_policy(cfg.aug_policy, batch[b], lex, unigrams, rng).tokens;

    if (!cfg.aug_policy.has_mixup()) return items;

    // Everyone mixes with a shuffled partner at a shared lambda per example,
    // in each model's own embedding space.
    std::vector<size_t> partner(batch.size());
    std::iota(partner.begin(), partner.end(), 0);
    for (size_t i = partner.size(); i > 1; --i) std::swap(partner[i - 1], partner[rng.below(i)]);
    const int C = teacher.cfg.n_classes;

    std::vector<AugItem> mixed(batch.size());
    for (size_t b = 0; b < batch.size(); ++b) {
        size_t p = partner[b];
        double lambda = cfg.aug_policy.mixup_beta_a > 0.0
                            ? rng.beta(cfg.aug_policy.mixup_beta_a, cfg.aug_policy.mixup_beta_a)
                            : rng.uniform();
        size_t len = std::min(items[b].tokens.size(), items[p].tokens.size());
        std::vector<int> ti(items[b].tokens.begin(), items[b].tokens.begin() + len);
        std::vector<int> tj(items[p].tokens.begin(), items[p].tokens.begin() + len);

        AugItem& it = mixed[b];
        it.mixed = true;
        if (task == TaskKind::Classification) {
            Mat yi = one_hot_rows({batch[b].label}, C), yj = one_hot_rows({batch[p].label}, C);
            auto ms = mixup_classification(student.embed(ti), student.embed(tj), yi, yj, lambda);
            auto mt = mixup_classification(teacher.embed(ti), teacher.embed(tj), yi, yj, lambda);
            it.student_x = std::move(ms.x);
            it.teacher_x = std::move(mt.x);
            it.soft_y = std::move(ms.y);
        } else {
            std::vector<int> gi(batch[b].tags.begin(), batch[b].tags.begin() + len);
            std::vector<int> gj(batch[p].tags.begin(), batch[p].tags.begin() + len);
            Mat Yi = one_hot_rows(gi, C), Yj = one_hot_rows(gj, C);
            auto ms = mixup_tagging(student.embed(ti), student.embed(tj), Yi, Yj, lambda);
            auto mt = mixup_tagging(teacher.embed(ti), teacher.embed(tj), Yi, Yj, lambda);
            it.student_x = std::move(ms.x);
            it.teacher_x = std::move(mt.x);
            it.soft_y = std::move(ms.y);
        }
    }
    return mixed;
}

Var batch_mean(Tape& t, const std::vector<Var>& terms) {
    Var s = t.scalar(0.0);
    for (Var v : terms) s = t.add(s, v);
    return t.scale(s, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Var total_objective(Tape& t, const DistillerConfig& cfg, const std::vector<Example>& batch,
                    const EncoderModel& teacher, const DistillState& state,
                    const VarMap& student_vars, const std::vector<Var>& proj_vars,
                    const std::vector<CriticPair::GraphVars>& critic_vars, TaskKind task,
                    const Lexicon& lex, const UnigramTable& unigrams, Rng& aug_rng) {
    if (batch.empty()) throw std::invalid_argument("total_objective: empty batch");
    const bool aug_on = !cfg.aug_policy.empty();
    const size_t B = batch.size();

    // --- original-input pass: beta1 / gamma1 ---
    std::vector<Var> beta1_terms, gamma1_terms;
    std::vector<GraphForwardResult> plain_fwd(B);
    if (cfg.beta1 > 0.0 || cfg.gamma1 > 0.0 || !aug_on) {
        for (size_t b = 0; b < B; ++b) {
            plain_fwd[b] = state.student.forward_graph(t, student_vars, batch[b].tokens);
            if (cfg.beta1 > 0.0) {
                Mat tl = teacher.forward(batch[b].tokens).logits;
                beta1_terms.push_back(pred_loss_teacher(t, cfg.pred_loss, plain_fwd[b].logits, tl));
            }
            if (cfg.gamma1 > 0.0) {
                std::vector<int> labels = task == TaskKind::Classification
                                              ? std::vector<int>{batch[b].label}
                                              : batch[b].tags;
                gamma1_terms.push_back(pred_loss_hard(t, cfg.pred_loss, plain_fwd[b].logits, labels));
            }
        }
    }

    // --- augmented-input pass: beta2 / gamma2 and the intermediate states ---
    std::vector<GraphForwardResult> hat_fwd;
    std::vector<Mat> hat_teacher_hidden_pool;  // flattened [b * pairs], see below
    std::vector<ForwardResult> hat_teacher(B);
    std::vector<Var> beta2_terms, gamma2_terms;
    if (aug_on) {
        std::vector<AugItem> items = build_augmented(cfg, batch, teacher, state.student, task, lex,
                                                     unigrams, aug_rng);
        hat_fwd.resize(B);
        for (size_t b = 0; b < B; ++b) {
            const AugItem& it = items[b];
            if (it.mixed) {
                hat_fwd[b] = state.student.forward_graph_embedded(t, student_vars,
                                                                  t.leaf(it.student_x));
                hat_teacher[b] = teacher.forward_embedded(it.teacher_x);
            } else {
                hat_fwd[b] = state.student.forward_graph(t, student_vars, it.tokens);
                hat_teacher[b] = teacher.forward(it.tokens);
            }
            if (cfg.beta2 > 0.0)
                beta2_terms.push_back(
                    pred_loss_teacher(t, cfg.pred_loss, hat_fwd[b].logits, hat_teacher[b].logits));
            if (cfg.gamma2 > 0.0) {
                if (it.mixed) {
                    gamma2_terms.push_back(
                        pred_loss_soft(t, cfg.pred_loss, hat_fwd[b].logits, it.soft_y));
                } else {
                    std::vector<int> labels = task == TaskKind::Classification
                                                  ? std::vector<int>{batch[b].label}
                                                  : batch[b].tags;
                    gamma2_terms.push_back(
                        pred_loss_hard(t, cfg.pred_loss, hat_fwd[b].logits, labels));
                }
            }
        }
    } else {
        hat_fwd = plain_fwd;
        for (size_t b = 0; b < B; ++b) hat_teacher[b] = teacher.forward(batch[b].tokens);
    }

    Var loss = t.scalar(0.0);

    // --- intermediate term over mapped layer pairs ---
    if (cfg.inter_weight > 0.0 && !state.pairs.empty()) {
        std::vector<Var> pair_losses;
        for (size_t p = 0; p < state.pairs.size(); ++p) {
            auto [ti, sj] = state.pairs[p];
            if (cfg.inter_loss.kind == InterKind::MI_alpha) {
                std::vector<Var> u_rows, v_rows;
                for (size_t b = 0; b < B; ++b) {
                    u_rows.push_back(t.mean_rows(hat_fwd[b].hidden[sj]));
                    const Mat& th = hat_teacher[b].hidden[ti];
                    Mat pooled(1, th.cols);
                    for (int r = 0; r < th.rows; ++r)
                        for (int c2 = 0; c2 < th.cols; ++c2) pooled(0, c2) += th(r, c2) / th.rows;
                    v_rows.push_back(t.leaf(std::move(pooled)));
                }
                pair_losses.push_back(mi_inter_loss_graph(t, state.critics[p], critic_vars[p],
                                                          u_rows, v_rows, cfg.inter_loss.alpha));
            } else {
                std::vector<Var> per_example;
                for (size_t b = 0; b < B; ++b)
                    per_example.push_back(inter_loss_graph(t, cfg.inter_loss.kind,
                                                           hat_fwd[b].hidden[sj],
                                                           t.leaf(hat_teacher[b].hidden[ti]),
                                                           proj_vars[sj]));
                pair_losses.push_back(batch_mean(t, per_example));
            }
        }

        Var inter;
        if (cfg.mapping == MapStrategy::EMD) {
            FlowProblem fp;
            const int M = teacher.cfg.n_layers, N = state.student.cfg.n_layers;
            fp.cost = Mat(M, N);
            for (size_t p = 0; p < state.pairs.size(); ++p)
                fp.cost(state.pairs[p].first, state.pairs[p].second) = t.val(pair_losses[p]).a[0];
            fp.supplies.assign(M, 1.0 / M);
            fp.demands.assign(N, 1.0 / N);
            Mat flow = solve_transport(fp);
            double den = std::accumulate(flow.a.begin(), flow.a.end(), 0.0);
            inter = t.scalar(0.0);
            for (size_t p = 0; p < state.pairs.size(); ++p) {
                double w = flow(state.pairs[p].first, state.pairs[p].second) / den;
                if (w > 0.0) inter = t.add(inter, t.scale(pair_losses[p], w));
            }
        } else {
            inter = t.scalar(0.0);
            for (Var v : pair_losses) inter = t.add(inter, v);
        }
        loss = t.add(loss, t.scale(inter, cfg.inter_weight));
    }

    if (cfg.beta1 > 0.0) loss = t.add(loss, t.scale(batch_mean(t, beta1_terms), cfg.beta1));
    if (cfg.gamma1 > 0.0) loss = t.add(loss, t.scale(batch_mean(t, gamma1_terms), cfg.gamma1));
    if (aug_on && cfg.beta2 > 0.0)
        loss = t.add(loss, t.scale(batch_mean(t, beta2_terms), cfg.beta2));
    if (aug_on && cfg.gamma2 > 0.0)
        loss = t.add(loss, t.scale(batch_mean(t, gamma2_terms), cfg.gamma2));
    return loss;
}

double total_objective_value(const DistillerConfig& cfg, const std::vector<Example>& batch,
                             const EncoderModel& teacher, const DistillState& state, TaskKind task,
                             const Lexicon& lex, const UnigramTable& unigrams, uint64_t aug_seed) {
    Tape t;
    VarMap svars = state.student.lift(t);
    std::vector<Var> proj_vars;
    for (const Projection& p : state.projections)
        proj_vars.push_back(p.is_identity() ? Var{} : t.leaf(p.w));
    std::vector<CriticPair::GraphVars> critic_vars;
    for (const CriticPair& c : state.critics) critic_vars.push_back(c.lift(t));
    Rng aug_rng(aug_seed);
    return t
        .val(total_objective(t, cfg, batch, teacher, state, svars, proj_vars, critic_vars, task,
                             lex, unigrams, aug_rng))
        .a[0];
}

DistillResult distill(const DistillerConfig& cfg, const Dataset& train, const Dataset& eval,
                      const EncoderModel& teacher, const EncoderModel& student_init,
                      const std::string& dataset_id) {
    auto t0 = std::chrono::steady_clock::now();
    DistillState state = init_distill_state(cfg, teacher, student_init);
    if (train.examples.empty()) throw std::invalid_argument("distill: empty training split");

    Lexicon lex = derived_lexicon(train.vocab_size);
    UnigramTable unigrams = UnigramTable::build(train.examples, train.vocab_size);

    Rng root(cfg.seed);
    Rng order_rng = root.stream("data-order");
    Rng aug_rng = root.stream("augmentation");

    AdamState student_opt, proj_opt;
    student_opt.lr = proj_opt.lr = cfg.learning_rate;
    // Critics start from scratch each run and must catch up with the student
    // within the same budget, so they train faster than the student.
    std::vector<AdamState> critic_opts(state.critics.size());
    for (AdamState& o : critic_opts) o.lr = 10.0 * cfg.learning_rate;

    DistillResult result;
    const size_t n = train.examples.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        double epoch_sum = 0.0;
        size_t batches = 0;
        for (size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            size_t b1 = std::min(n, b0 + cfg.batch_size);
            std::vector<Example> batch;
            for (size_t k = b0; k < b1; ++k) batch.push_back(train.examples[order[k]]);

            Tape t;
            VarMap svars = state.student.lift(t);
            std::vector<Var> proj_vars;
            for (const Projection& p : state.projections)
                proj_vars.push_back(p.is_identity() ? Var{} : t.leaf(p.w));
            std::vector<CriticPair::GraphVars> critic_vars;
            for (const CriticPair& c : state.critics) critic_vars.push_back(c.lift(t));

            Var loss = total_objective(t, cfg, batch, teacher, state, svars, proj_vars,
                                       critic_vars, train.task, lex, unigrams, aug_rng);
            t.backward(loss);
            epoch_sum += t.val(loss).a[0];
            ++batches;

            ParamMap sgrads = zero_like(state.student.params);
            state.student.accumulate_grads(t, svars, sgrads);
            student_opt.step(state.student.params, sgrads);

            ParamMap pg, pparams;
            for (size_t j = 0; j < state.projections.size(); ++j) {
                if (state.projections[j].is_identity()) continue;
                std::string name = "proj" + std::to_string(j);
                pparams[name] = state.projections[j].w;
                pg[name] = t.grad(proj_vars[j]);
            }
            if (!pparams.empty()) {
                proj_opt.step(pparams, pg);
                for (size_t j = 0; j < state.projections.size(); ++j)
                    if (!state.projections[j].is_identity())
                        state.projections[j].w = pparams["proj" + std::to_string(j)];
            }

            for (size_t c = 0; c < state.critics.size(); ++c)
                state.critics[c].apply_step(critic_opts[c],
                                            state.critics[c].grads(t, critic_vars[c]));
        }
        result.epoch_loss.push_back(batches ? epoch_sum / batches : 0.0);
    }

    result.student = state.student;
    result.record.config = cfg;
    result.record.dataset_id = dataset_id;
    result.record.task_kind = train.task;
    result.record.seed = cfg.seed;
    result.record.teacher_score = evaluate(teacher, eval);
    result.record.student_score = evaluate(result.student, eval);
    result.record.ratio = result.record.teacher_score > 0.0
                              ? distillation_ratio(result.record.student_score,
                                                   result.record.teacher_score)
                              : 0.0;
    result.record.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace dk
