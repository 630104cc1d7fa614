#include "distillkit/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace dk {

std::string to_string(TaskKind k) {
    return k == TaskKind::Classification ? "classification" : "tagging";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "classification") return TaskKind::Classification;
    if (s == "tagging") return TaskKind::Tagging;
    throw std::invalid_argument("unknown task kind: " + s);
}

void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    for (const Example& ex : d.examples) {
        nlohmann::json j;
        j["tokens"] = ex.tokens;
        if (d.task == TaskKind::Classification)
            j["label"] = ex.label;
        else
            j["tags"] = ex.tags;
        out << j.dump() << '\n';
    }
}

Dataset load_dataset(const std::string& path, TaskKind task, int vocab_size, int n_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    Dataset d{task, vocab_size, n_classes, {}};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("tokens"))
            throw std::runtime_error("bad dataset line " + std::to_string(lineno) + " in " + path);
        Example ex;
        ex.tokens = j["tokens"].get<std::vector<int>>();
        if (task == TaskKind::Classification) {
            ex.label = j.at("label").get<int>();
            if (ex.label < 0 || ex.label >= n_classes)
                throw std::runtime_error("label out of range at line " + std::to_string(lineno));
        } else {
            ex.tags = j.at("tags").get<std::vector<int>>();
            if (ex.tags.size() != ex.tokens.size())
                throw std::runtime_error("tag/token length mismatch at line " + std::to_string(lineno));
            for (int t : ex.tags)
                if (t < 0 || t >= n_classes)
                    throw std::runtime_error("tag out of range at line " + std::to_string(lineno));
        }
        for (int t : ex.tokens)
            if (t < 0 || t >= vocab_size)
                throw std::runtime_error("token out of range at line " + std::to_string(lineno));
        d.examples.push_back(std::move(ex));
    }
    return d;
}

namespace {

int sample_cat(const std::vector<double>& probs, Rng& rng) {
    double u = rng.uniform(), run = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        run += probs[i];
        if (u < run) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

// Peaked distribution over the vocab, centered per class/tag so classes are
// separable but overlapping.
std::vector<double> conditional_dist(int vocab_size, int which, int n_which, Rng& rng) {
    std::vector<double> w(vocab_size);
    double center = (which + 0.5) * vocab_size / n_which;
    for (int t = 0; t < vocab_size; ++t) {
        double d = std::fabs(t + 0.5 - center);
        d = std::min(d, vocab_size - d);  // wrap-around distance
        w[t] = std::exp(-0.5 * d) + 0.02 + 0.05 * rng.uniform();
    }
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= total;
    return w;
}

}  // namespace

Dataset synth_classification(int n_examples, int vocab_size, int n_classes, int min_len,
                             int max_len, uint64_t seed) {
    if (n_examples < 0 || vocab_size < 2 || n_classes < 2 || min_len < 1 || max_len < min_len)
        throw std::invalid_argument("synth_classification: bad sizes");
    Rng rng(seed);
    Rng shape_rng = rng.stream("class-shapes");
    std::vector<std::vector<double>> dists;
    for (int c = 0; c < n_classes; ++c)
        dists.push_back(conditional_dist(vocab_size, c, n_classes, shape_rng));

    Dataset d{TaskKind::Classification, vocab_size, n_classes, {}};
    for (int i = 0; i < n_examples; ++i) {
        Example ex;
        ex.label = static_cast<int>(rng.below(static_cast<uint64_t>(n_classes)));
        int len = min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
        for (int t = 0; t < len; ++t) ex.tokens.push_back(sample_cat(dists[ex.label], rng));
        d.examples.push_back(std::move(ex));
    }
    return d;
}

Dataset synth_tagging(int n_examples, int vocab_size, int n_tags, int min_len, int max_len,
                      uint64_t seed) {
    if (n_examples < 0 || vocab_size < 2 || n_tags < 2 || min_len < 1 || max_len < min_len)
        throw std::invalid_argument("synth_tagging: bad sizes");
    Rng rng(seed);
    Rng shape_rng = rng.stream("tag-shapes");
    std::vector<std::vector<double>> emit;
    for (int c = 0; c < n_tags; ++c)
        emit.push_back(conditional_dist(vocab_size, c, n_tags, shape_rng));
    const double stay_p = 0.7;

    Dataset d{TaskKind::Tagging, vocab_size, n_tags, {}};
    for (int i = 0; i < n_examples; ++i) {
        Example ex;
        int len = min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
        int tag = static_cast<int>(rng.below(static_cast<uint64_t>(n_tags)));
        for (int t = 0; t < len; ++t) {
            if (t > 0 && rng.uniform() >= stay_p)
                tag = static_cast<int>(rng.below(static_cast<uint64_t>(n_tags)));
            ex.tags.push_back(tag);
            ex.tokens.push_back(sample_cat(emit[tag], rng));
        }
        d.examples.push_back(std::move(ex));
    }
    return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double first_frac) {
    if (first_frac < 0.0 || first_frac > 1.0)
        throw std::invalid_argument("split_dataset: fraction outside [0, 1]");
    size_t cut = static_cast<size_t>(std::ceil(first_frac * d.examples.size()));
    Dataset a{d.task, d.vocab_size, d.n_classes, {}}, b = a;
    a.examples.assign(d.examples.begin(), d.examples.begin() + cut);
    b.examples.assign(d.examples.begin() + cut, d.examples.end());
    return {a, b};
}

}  // namespace dk
