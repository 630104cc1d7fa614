#include "distillkit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dk {

std::string to_string(AugOp op) {
    switch (op) {
        case AugOp::CA: return "CA";
        case AugOp::RA: return "RA";
        case AugOp::BT: return "BT";
        case AugOp::Mixup: return "Mixup";
    }
    return "?";
}

AugOp aug_op_from_string(const std::string& s) {
    if (s == "CA") return AugOp::CA;
    if (s == "RA") return AugOp::RA;
    if (s == "BT") return AugOp::BT;
    if (s == "Mixup") return AugOp::Mixup;
    throw std::invalid_argument("unknown augmentation op: " + s);
}

bool AugPolicy::has_mixup() const {
    return std::find(ops.begin(), ops.end(), AugOp::Mixup) != ops.end();
}

void AugPolicy::validate_and_canonicalize() {
    if (std::count(ops.begin(), ops.end(), AugOp::Mixup) > 1)
        throw std::invalid_argument("augmentation policy: Mixup may appear at most once");
    // Mixup operates on embedded batches, after all token-level ops.
    auto it = std::find(ops.begin(), ops.end(), AugOp::Mixup);
    if (it != ops.end() && std::next(it) != ops.end()) {
        ops.erase(it);
        ops.push_back(AugOp::Mixup);
    }
}

std::string AugPolicy::describe() const {
    if (ops.empty()) return "none";
    std::string s;
    for (size_t i = 0; i < ops.size(); ++i) {
        if (i) s += '+';
        s += to_string(ops[i]);
    }
    return s;
}

AugPolicy AugPolicy::parse(const std::string& text) {
    AugPolicy p;
    if (text.empty() || text == "none") return p;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '+')) p.ops.push_back(aug_op_from_string(tok));
    p.validate_and_canonicalize();
    return p;
}

UnigramTable UnigramTable::build(const std::vector<Example>& train, int vocab_size) {
    if (vocab_size <= 0) throw std::invalid_argument("unigram table: vocab_size must be positive");
    std::vector<double> counts(vocab_size, 1.0);  // add-one smoothing
    for (const Example& ex : train)
        for (int t : ex.tokens) {
            if (t < 0 || t >= vocab_size)
                throw std::invalid_argument("unigram table: token id out of range");
            counts[t] += 1.0;
        }
    UnigramTable tab;
    tab.cum.resize(vocab_size);
    double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    double run = 0.0;
    for (int t = 0; t < vocab_size; ++t) {
        run += counts[t] / total;
        tab.cum[t] = run;
    }
    tab.cum.back() = 1.0;
    return tab;
}

int UnigramTable::sample(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(cum.begin(), cum.end(), u);
    return static_cast<int>(std::min<size_t>(it - cum.begin(), cum.size() - 1));
}

Lexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon: " + path);
    Lexicon lex;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int from, to;
        if (!(ls >> from >> to))
            throw std::runtime_error("bad lexicon line " + std::to_string(lineno) + " in " + path);
        lex[from] = to;
    }
    return lex;
}

void save_lexicon(const Lexicon& lex, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write lexicon: " + path);
    for (auto [from, to] : lex) out << from << '\t' << to << '\n';
}

Lexicon derived_lexicon(int vocab_size) {
    Lexicon lex;
    for (int t = 0; t + 1 < vocab_size; t += 2) {
        lex[t] = t + 1;
        lex[t + 1] = t;
    }
    return lex;
}

namespace {

void apply_ca(std::vector<int>& tokens, double mask_p, const UnigramTable& unigrams, Rng& rng) {
    for (int& t : tokens)
        if (rng.uniform() < mask_p) t = unigrams.sample(rng);
}

void apply_ra(std::vector<int>& tokens, double swap_p, double replace_p, const Lexicon& lex,
              Rng& rng) {
    for (size_t i = 0; i + 1 < tokens.size(); ++i)
        if (rng.uniform() < swap_p) std::swap(tokens[i], tokens[i + 1]);
    for (int& t : tokens)
        if (rng.uniform() < replace_p) {
            auto it = lex.find(t);
            if (it != lex.end()) t = it->second;
        }
}

// Paraphrase stand-in: synonym-replace everything the lexicon covers, then
// shuffle one adjacent pair.
void apply_bt(std::vector<int>& tokens, const Lexicon& lex, Rng& rng) {
    for (int& t : tokens) {
        auto it = lex.find(t);
        if (it != lex.end()) t = it->second;
    }
    if (tokens.size() >= 2) {
        size_t i = rng.below(tokens.size() - 1);
        std::swap(tokens[i], tokens[i + 1]);
    }
}

}  // namespace

Example apply_policy(const AugPolicy& policy, const Example& ex, const Lexicon& lex,
                     const UnigramTable& unigrams, Rng& rng) {
    if (ex.tokens.empty()) throw std::invalid_argument("apply_policy: empty example");
    Example out = ex;
    for (AugOp op : policy.ops) {
        switch (op) {
            case AugOp::CA: apply_ca(out.tokens, policy.ca_mask_p, unigrams, rng); break;
            case AugOp::RA: apply_ra(out.tokens, policy.ra_swap_p, policy.ra_replace_p, lex, rng); break;
            case AugOp::BT: apply_bt(out.tokens, lex, rng); break;
            case AugOp::Mixup: break;  // batch-level, handled in embedding space
        }
    }
    if (!out.tags.empty()) {
        // Discrete ops here do not reorder tags; RA swaps move tokens but the
        // synthetic taggers label positions, so tags stay aligned by position.
        if (out.tags.size() != out.tokens.size())
            throw std::logic_error("apply_policy: tag length drifted");
    }
    return out;
}

static MixedExample mix(const Mat& xi, const Mat& xj, const Mat& yi, const Mat& yj, double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("mixup: lambda must lie in [0, 1]");
    if (!xi.same_shape(xj) || !yi.same_shape(yj))
        throw std::invalid_argument("mixup: shape mismatch");
    MixedExample m{xi, yi};
    for (size_t k = 0; k < m.x.size(); ++k) m.x.a[k] = lambda * xi.a[k] + (1.0 - lambda) * xj.a[k];
    for (size_t k = 0; k < m.y.size(); ++k) m.y.a[k] = lambda * yi.a[k] + (1.0 - lambda) * yj.a[k];
    return m;
}

MixedExample mixup_classification(const Mat& xi, const Mat& xj, const Mat& yi, const Mat& yj,
                                  double lambda) {
    if (yi.rows != 1) throw std::invalid_argument("mixup_classification: one label row expected");
    return mix(xi, xj, yi, yj, lambda);
}

MixedExample mixup_tagging(const Mat& xi, const Mat& xj, const Mat& Yi, const Mat& Yj,
                           double lambda) {
    if (Yi.rows != xi.rows)
        throw std::invalid_argument("mixup_tagging: one label row per position expected");
    return mix(xi, xj, Yi, Yj, lambda);
}

Mat teacher_relabel(const EncoderModel& teacher, const std::vector<int>& tokens) {
    return teacher.predict_proba(tokens);
}

Mat teacher_relabel_embedded(const EncoderModel& teacher, const Mat& embedded) {
    return teacher.predict_proba_embedded(embedded);
}

}  // namespace dk
