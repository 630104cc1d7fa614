#include "distillkit/meta.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dk {

using nlohmann::json;

std::vector<double> EmbeddingTable::lookup(const std::string& word) const {
    auto it = vecs.find(word);
    if (it != vecs.end()) return it->second;
    return std::vector<double>(dim, 0.0);
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding table: " + path);
    EmbeddingTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word))
            throw std::runtime_error("bad embedding line " + std::to_string(lineno));
        std::vector<double> v;
        double x;
        while (ls >> x) v.push_back(x);
        if (v.empty()) throw std::runtime_error("bad embedding line " + std::to_string(lineno));
        if (t.dim == 0) t.dim = static_cast<int>(v.size());
        if (static_cast<int>(v.size()) != t.dim)
            throw std::runtime_error("embedding width mismatch at line " + std::to_string(lineno));
        t.vecs[word] = std::move(v);
    }
    return t;
}

void EmbeddingTable::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding table: " + path);
    out.precision(17);
    for (const auto& [word, v] : vecs) {
        out << word;
        for (double x : v) out << '\t' << x;
        out << '\n';
    }
}

EmbeddingTable EmbeddingTable::synthetic(int vocab_size, int dim, uint64_t seed) {
    EmbeddingTable t;
    t.dim = dim;
    Rng rng(seed);
    for (int i = 0; i < vocab_size; ++i) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal(0.0, 1.0);
        t.vecs["t" + std::to_string(i)] = std::move(v);
    }
    return t;
}

std::vector<std::string> corpus_words(const Dataset& d) {
    std::vector<std::string> words;
    for (const Example& ex : d.examples)
        for (int t : ex.tokens) words.push_back("t" + std::to_string(t));
    return words;
}

DatasetFeatures featurize_dataset(const std::vector<std::string>& corpus,
                                  const std::vector<std::string>& description,
                                  const EmbeddingTable& emb,
                                  const std::vector<std::set<std::string>>& collection_vocabs,
                                  double baseline_score, double teacher_score, int n_examples) {
    if (corpus.empty()) throw std::invalid_argument("featurize: empty corpus");
    if (n_examples < 1) throw std::invalid_argument("featurize: n_examples must be >= 1");

    const double N = static_cast<double>(collection_vocabs.size());
    auto idf = [&](const std::string& w) {
        double nw = 0.0;
        for (const auto& vocab : collection_vocabs) nw += vocab.count(w) > 0;
        return std::log((1.0 + N) / (1.0 + nw));
    };

    DatasetFeatures f;
    f.context_embedding.assign(emb.dim, 0.0);
    for (const std::string& w : corpus) {
        double weight = idf(w);
        std::vector<double> v = emb.lookup(w);
        for (int k = 0; k < emb.dim; ++k) f.context_embedding[k] += weight * v[k];
    }
    for (double& x : f.context_embedding) x /= static_cast<double>(corpus.size());

    f.task_embedding.assign(emb.dim, 0.0);
    if (!description.empty()) {
        for (const std::string& w : description) {
            std::vector<double> v = emb.lookup(w);
            for (int k = 0; k < emb.dim; ++k) f.task_embedding[k] += v[k];
        }
        for (double& x : f.task_embedding) x /= static_cast<double>(description.size());
    }

    f.baseline_score = baseline_score;
    f.teacher_score = teacher_score;
    f.n_examples = n_examples;
    return f;
}

namespace {

json features_to_json(const DatasetFeatures& f) {
    return json{{"context_embedding", f.context_embedding},
                {"task_embedding", f.task_embedding},
                {"baseline_score", f.baseline_score},
                {"teacher_score", f.teacher_score},
                {"n_examples", f.n_examples}};
}

DatasetFeatures features_from_json(const json& j) {
    DatasetFeatures f;
    f.context_embedding = j.at("context_embedding").get<std::vector<double>>();
    f.task_embedding = j.at("task_embedding").get<std::vector<double>>();
    f.baseline_score = j.at("baseline_score").get<double>();
    f.teacher_score = j.at("teacher_score").get<double>();
    f.n_examples = j.at("n_examples").get<int>();
    return f;
}

}  // namespace

void save_meta_rows(const std::vector<MetaRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write meta rows: " + path);
    for (const MetaRow& r : rows) {
        json j{{"dataset_id", r.dataset_id},
               {"features", features_to_json(r.features)},
               {"config", r.config.to_text()},
               {"ratio", r.ratio}};
        out << j.dump() << '\n';
    }
}

std::vector<MetaRow> load_meta_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open meta rows: " + path);
    std::vector<MetaRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        MetaRow r;
        r.dataset_id = j.at("dataset_id").get<std::string>();
        r.features = features_from_json(j.at("features"));
        r.config = DistillerConfig::parse_text(j.at("config").get<std::string>());
        r.ratio = j.at("ratio").get<double>();
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<double> encode_meta_features(const DatasetFeatures& f, const DistillerConfig& c) {
    std::vector<double> x = f.context_embedding;
    x.insert(x.end(), f.task_embedding.begin(), f.task_embedding.end());
    x.push_back(f.baseline_score);
    x.push_back(f.teacher_score);
    x.push_back(std::log(static_cast<double>(f.n_examples)));

    static const SearchSpace canon = SearchSpace::full();
    std::vector<std::string> vals = axis_values(c);
    std::vector<std::vector<std::string>> vocab(4);
    for (const InterLossKind& k : canon.inter) {
        DistillerConfig tmp;
        tmp.inter_loss = k;
        vocab[0].push_back(axis_values(tmp)[0]);
    }
    for (PredKind p : canon.pred) vocab[1].push_back(to_string(p));
    for (MapStrategy m : canon.mapping) vocab[2].push_back(to_string(m));
    vocab[3] = canon.aug;

    for (int a = 0; a < 4; ++a)
        for (const std::string& v : vocab[a]) x.push_back(v == vals[a] ? 1.0 : 0.0);
    return x;
}

double MetaModel::Tree::predict(const std::vector<double>& x) const {
    int n = 0;
    while (nodes[n].feature >= 0)
        n = x[nodes[n].feature] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
    return nodes[n].value;
}

double MetaModel::predict_encoded(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != n_features)
        throw std::invalid_argument("meta model: feature width mismatch");
    double y = base;
    for (const Tree& t : trees) y += settings.shrinkage * t.predict(x);
    return y;
}

double MetaModel::predict(const DatasetFeatures& f, const DistillerConfig& c) const {
    return predict_encoded(encode_meta_features(f, c));
}

namespace {

int grow_regression(MetaModel::Tree& tree, const std::vector<std::vector<double>>& xs,
                    const std::vector<double>& ys, const std::vector<int>& idx, int depth,
                    int max_depth) {
    MetaModel::Node node;
    double mean = 0.0;
    for (int i : idx) mean += ys[i];
    node.value = mean / idx.size();

    int best_f = -1;
    double best_thr = 0.0, best_sse = std::numeric_limits<double>::infinity();
    bool pure = std::all_of(idx.begin(), idx.end(), [&](int i) { return ys[i] == ys[idx[0]]; });
    if (depth < max_depth && idx.size() >= 2 && !pure) {
        const int F = static_cast<int>(xs[idx[0]].size());
        for (int f = 0; f < F; ++f) {
            std::vector<int> order(idx);
            std::sort(order.begin(), order.end(),
                      [&](int a, int b) { return xs[a][f] < xs[b][f]; });
            // prefix sums over the sorted targets give every split's SSE
            double total = 0.0, total2 = 0.0;
            for (int i : order) {
                total += ys[i];
                total2 += ys[i] * ys[i];
            }
            double lsum = 0.0, lsum2 = 0.0;
            for (size_t k = 0; k + 1 < order.size(); ++k) {
                double y = ys[order[k]];
                lsum += y;
                lsum2 += y * y;
                if (xs[order[k]][f] == xs[order[k + 1]][f]) continue;
                double nl = static_cast<double>(k + 1), nr = order.size() - nl;
                double sse = (lsum2 - lsum * lsum / nl) +
                             ((total2 - lsum2) - (total - lsum) * (total - lsum) / nr);
                if (sse < best_sse - 1e-15) {
                    best_sse = sse;
                    best_f = f;
                    best_thr = 0.5 * (xs[order[k]][f] + xs[order[k + 1]][f]);
                }
            }
        }
    }

    int self = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);
    if (best_f >= 0) {
        std::vector<int> l, r;
        for (int i : idx) (xs[i][best_f] <= best_thr ? l : r).push_back(i);
        if (!l.empty() && !r.empty()) {
            tree.nodes[self].feature = best_f;
            tree.nodes[self].threshold = best_thr;
            int li = grow_regression(tree, xs, ys, l, depth + 1, max_depth);
            int ri = grow_regression(tree, xs, ys, r, depth + 1, max_depth);
            tree.nodes[self].left = li;
            tree.nodes[self].right = ri;
        }
    }
    return self;
}

}  // namespace

MetaModel train_meta(const std::vector<MetaRow>& rows, const GbrtSettings& settings,
                     uint64_t seed) {
    if (rows.size() < 10) throw std::invalid_argument("train_meta: need at least 10 rows");
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const MetaRow& r : rows) {
        xs.push_back(encode_meta_features(r.features, r.config));
        ys.push_back(r.ratio);
    }

    MetaModel model;
    model.settings = settings;
    model.n_features = static_cast<int>(xs[0].size());
    model.base = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();

    std::vector<double> pred(ys.size(), model.base);
    Rng rng(seed);
    const size_t n = ys.size();
    const size_t take = std::max<size_t>(2, static_cast<size_t>(settings.subsample * n));
    for (int round = 0; round < settings.rounds; ++round) {
        std::vector<double> resid(n);
        for (size_t i = 0; i < n; ++i) resid[i] = ys[i] - pred[i];

        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        for (size_t i = n; i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
        std::vector<int> idx(all.begin(), all.begin() + take);

        MetaModel::Tree tree;
        grow_regression(tree, xs, resid, idx, 0, settings.max_depth);
        for (size_t i = 0; i < n; ++i) pred[i] += settings.shrinkage * tree.predict(xs[i]);
        model.trees.push_back(std::move(tree));

        double mse = 0.0;
        for (size_t i = 0; i < n; ++i) mse += (ys[i] - pred[i]) * (ys[i] - pred[i]);
        model.train_loss.push_back(mse / n);
    }
    return model;
}

void MetaModel::save(const std::string& path) const {
    json jt = json::array();
    for (const Tree& t : trees) {
        json jn = json::array();
        for (const Node& n : t.nodes)
            jn.push_back({{"f", n.feature}, {"t", n.threshold}, {"v", n.value},
                          {"l", n.left}, {"r", n.right}});
        jt.push_back(std::move(jn));
    }
    json j{{"rounds", settings.rounds},       {"max_depth", settings.max_depth},
           {"shrinkage", settings.shrinkage}, {"subsample", settings.subsample},
           {"base", base},                    {"n_features", n_features},
           {"train_loss", train_loss},        {"trees", std::move(jt)}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write meta model: " + path);
    out << j.dump() << '\n';
}

MetaModel MetaModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open meta model: " + path);
    json j = json::parse(in);
    MetaModel m;
    m.settings.rounds = j.at("rounds").get<int>();
    m.settings.max_depth = j.at("max_depth").get<int>();
    m.settings.shrinkage = j.at("shrinkage").get<double>();
    m.settings.subsample = j.at("subsample").get<double>();
    m.base = j.at("base").get<double>();
    m.n_features = j.at("n_features").get<int>();
    m.train_loss = j.at("train_loss").get<std::vector<double>>();
    for (const json& jt : j.at("trees")) {
        Tree t;
        for (const json& jn : jt)
            t.nodes.push_back({jn.at("f").get<int>(), jn.at("t").get<double>(),
                               jn.at("v").get<double>(), jn.at("l").get<int>(),
                               jn.at("r").get<int>()});
        m.trees.push_back(std::move(t));
    }
    return m;
}

std::vector<Recommendation> recommend(const MetaModel& model, const DatasetFeatures& features,
                                      const SearchSpace& space, int n) {
    if (n < 1) throw std::invalid_argument("recommend: n must be >= 1");
    std::vector<Recommendation> all;
    for (const std::string& aug : space.aug)
        for (const InterLossKind& inter : space.inter)
            for (PredKind pred : space.pred)
                for (MapStrategy mapping : space.mapping) {
                    DistillerConfig c = DistillerConfig::defaults(AugPolicy::parse(aug));
                    c.inter_loss = inter;
                    c.pred_loss = pred;
                    c.mapping = mapping;
                    all.push_back({c, model.predict(features, c)});
                }
    std::sort(all.begin(), all.end(), [](const Recommendation& a, const Recommendation& b) {
        if (a.predicted_ratio != b.predicted_ratio) return a.predicted_ratio > b.predicted_ratio;
        return a.config.to_text() < b.config.to_text();
    });
    if (static_cast<size_t>(n) < all.size()) all.resize(n);
    return all;
}

std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length series");
    auto midranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
        std::vector<double> rank(n);
        for (size_t i = 0; i < n;) {
            size_t j = i;
            while (j < n && v[order[j]] == v[order[i]]) ++j;
            double mid = 0.5 * (i + j - 1) + 1.0;  // 1-based average rank of the tie block
            for (size_t k = i; k < j; ++k) rank[order[k]] = mid;
            i = j;
        }
        return rank;
    };
    std::vector<double> rx = midranks(xs), ry = midranks(ys);
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    };
    double mx = mean(rx), my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

LodoResult lodo_eval(const std::vector<MetaRow>& rows, const GbrtSettings& settings,
                     uint64_t seed) {
    std::map<std::string, std::vector<const MetaRow*>> by_dataset;
    for (const MetaRow& r : rows) by_dataset[r.dataset_id].push_back(&r);
    if (by_dataset.size() < 2) throw std::invalid_argument("lodo: need at least 2 datasets");
    for (const auto& [id, group] : by_dataset)
        if (group.size() < 5)
            throw std::invalid_argument("lodo: dataset " + id + " has fewer than 5 configs");

    LodoResult result;
    double sum = 0.0;
    int defined = 0;
    for (const auto& [held_out, group] : by_dataset) {
        std::vector<MetaRow> train_rows;
        for (const MetaRow& r : rows)
            if (r.dataset_id != held_out) train_rows.push_back(r);
        // canonical order: fold results must not depend on input row order
        std::sort(train_rows.begin(), train_rows.end(), [](const MetaRow& a, const MetaRow& b) {
            if (a.dataset_id != b.dataset_id) return a.dataset_id < b.dataset_id;
            std::string at = a.config.to_text(), bt = b.config.to_text();
            if (at != bt) return at < bt;
            return a.ratio < b.ratio;
        });
        MetaModel model = train_meta(train_rows, settings, seed);
        std::vector<const MetaRow*> fold(group);
        std::sort(fold.begin(), fold.end(), [](const MetaRow* a, const MetaRow* b) {
            std::string at = a->config.to_text(), bt = b->config.to_text();
            if (at != bt) return at < bt;
            return a->ratio < b->ratio;
        });
        std::vector<double> predicted, actual;
        for (const MetaRow* r : fold) {
            predicted.push_back(model.predict(r->features, r->config));
            actual.push_back(r->ratio);
        }
        std::optional<double> rho = spearman(predicted, actual);
        result.per_dataset[held_out] = rho;
        if (rho) {
            sum += *rho;
            ++defined;
        } else {
            ++result.skipped;
        }
    }
    result.mean = defined ? sum / defined : 0.0;
    return result;
}

}  // namespace dk
