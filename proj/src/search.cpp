#include "distillkit/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace dk {

SearchSpace SearchSpace::full() {
    SearchSpace s;
    for (InterKind k : {InterKind::MSE, InterKind::L2, InterKind::Cos, InterKind::PKD, InterKind::CE})
        s.inter.push_back({k, 0.0});
    for (double a : {0.1, 0.5, 0.9}) s.inter.push_back({InterKind::MI_alpha, a});
    s.pred = {PredKind::MSE, PredKind::CE};
    s.mapping = {MapStrategy::Skip, MapStrategy::Last, MapStrategy::EMD};
    s.aug = {"none", "CA", "RA", "BT", "Mixup", "CA+RA", "RA+BT", "CA+Mixup", "RA+BT+Mixup"};
    return s;
}

DistillerConfig SearchSpace::sample(Rng& rng) const {
    if (inter.empty() || pred.empty() || mapping.empty() || aug.empty())
        throw std::invalid_argument("search space: empty axis");
    // Draw the augmentation first: it decides the weight defaults.
    AugPolicy policy = AugPolicy::parse(aug[rng.below(aug.size())]);
    DistillerConfig c = DistillerConfig::defaults(policy);
    c.inter_loss = inter[rng.below(inter.size())];
    c.pred_loss = pred[rng.below(pred.size())];
    c.mapping = mapping[rng.below(mapping.size())];
    return c;
}

bool SearchSpace::contains(const DistillerConfig& c) const {
    auto has_inter = std::any_of(inter.begin(), inter.end(), [&](const InterLossKind& k) {
        return k.kind == c.inter_loss.kind &&
               (k.kind != InterKind::MI_alpha || k.alpha == c.inter_loss.alpha);
    });
    return has_inter && std::find(pred.begin(), pred.end(), c.pred_loss) != pred.end() &&
           std::find(mapping.begin(), mapping.end(), c.mapping) != mapping.end() &&
           std::find(aug.begin(), aug.end(), c.aug_policy.describe()) != aug.end();
}

std::vector<RunRecord> random_search(const SearchSpace& space, int budget, uint64_t base_seed,
                                     const TrialRunner& runner, int workers) {
    if (budget < 0) throw std::invalid_argument("random_search: negative budget");
    if (workers < 1) workers = 1;

    // Sample every config up front so the sequence depends only on base_seed.
    Rng rng(base_seed);
    std::vector<DistillerConfig> configs;
    for (int i = 0; i < budget; ++i) {
        DistillerConfig c = space.sample(rng);
        c.seed = rng.next_u64();
        configs.push_back(c);
    }

    std::vector<RunRecord> records(budget);
    std::atomic<int> next{0};
    auto work = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= budget) return;
            try {
                records[i] = runner(configs[i], i);
            } catch (const std::exception& e) {
                records[i] = RunRecord{};
                records[i].config = configs[i];
                records[i].failed = true;
                records[i].error = e.what();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    return records;
}

std::vector<std::string> axis_values(const DistillerConfig& c) {
    std::string inter = to_string(c.inter_loss.kind);
    if (c.inter_loss.kind == InterKind::MI_alpha) {
        std::ostringstream os;
        os << inter << '@' << c.inter_loss.alpha;
        inter = os.str();
    }
    return {inter, to_string(c.pred_loss), to_string(c.mapping), c.aug_policy.describe()};
}

// ---------------------------------------------------------------------------
// Exact factorial ANOVA

namespace {

size_t grid_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int s : shape) n *= static_cast<size_t>(s);
    return n;
}

// mean of scores holding the given axes at fixed levels, averaging the rest
double marginal_mean(const std::vector<int>& shape, const std::vector<double>& scores,
                     const std::vector<std::pair<int, int>>& fixed) {
    double sum = 0.0;
    size_t count = 0;
    const size_t n = scores.size();
    for (size_t idx = 0; idx < n; ++idx) {
        size_t rest = idx;
        bool match = true;
        std::vector<int> coord(shape.size());
        for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
            coord[a] = static_cast<int>(rest % shape[a]);
            rest /= shape[a];
        }
        for (auto [axis, level] : fixed)
            if (coord[axis] != level) {
                match = false;
                break;
            }
        if (!match) continue;
        sum += scores[idx];
        ++count;
    }
    return sum / static_cast<double>(count);
}

}  // namespace

AnovaDecomposition brute_force_anova(const std::vector<int>& shape,
                                     const std::vector<double>& scores) {
    if (shape.empty()) throw std::invalid_argument("anova: no axes");
    for (int s : shape)
        if (s < 1) throw std::invalid_argument("anova: axis with no levels");
    if (scores.size() != grid_size(shape))
        throw std::invalid_argument("anova: incomplete factorial grid");

    const int A = static_cast<int>(shape.size());
    AnovaDecomposition d;
    d.grand_mean = std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
    for (double s : scores) d.total_variance += (s - d.grand_mean) * (s - d.grand_mean);
    d.total_variance /= scores.size();

    // main effects
    std::vector<std::vector<double>> main(A);
    d.individual.assign(A, 0.0);
    for (int a = 0; a < A; ++a) {
        main[a].resize(shape[a]);
        double var = 0.0;
        for (int v = 0; v < shape[a]; ++v) {
            main[a][v] = marginal_mean(shape, scores, {{a, v}}) - d.grand_mean;
            var += main[a][v] * main[a][v];
        }
        d.individual[a] = var / shape[a];
    }

    // pairwise interactions
    d.pairwise.assign(A, std::vector<double>(A, 0.0));
    for (int a = 0; a < A; ++a)
        for (int b = a + 1; b < A; ++b) {
            double var = 0.0;
            for (int va = 0; va < shape[a]; ++va)
                for (int vb = 0; vb < shape[b]; ++vb) {
                    double eff = marginal_mean(shape, scores, {{a, va}, {b, vb}}) - d.grand_mean -
                                 main[a][va] - main[b][vb];
                    var += eff * eff;
                }
            d.pairwise[a][b] = var / (shape[a] * shape[b]);
        }

    if (d.total_variance > 0.0) {
        for (double& v : d.individual) v /= d.total_variance;
        for (auto& row : d.pairwise)
            for (double& v : row) v /= d.total_variance;
    } else {
        for (double& v : d.individual) v = 0.0;
        for (auto& row : d.pairwise)
            for (double& v : row) v = 0.0;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Random-forest surrogate

namespace {

struct TreeNode {
    int axis = -1, level = -1;  // split: axis value == level goes left
    double value = 0.0;         // leaf prediction
    int left = -1, right = -1;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<int>& x) const {
        int n = 0;
        while (nodes[n].axis >= 0) n = x[nodes[n].axis] == nodes[n].level ? nodes[n].left : nodes[n].right;
        return nodes[n].value;
    }
};

double subset_sse(const std::vector<double>& ys, const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    double mean = 0.0;
    for (int i : idx) mean += ys[i];
    mean /= idx.size();
    double sse = 0.0;
    for (int i : idx) sse += (ys[i] - mean) * (ys[i] - mean);
    return sse;
}

int grow(Tree& tree, const std::vector<std::vector<int>>& xs, const std::vector<double>& ys,
         const std::vector<int>& idx, const std::vector<int>& shape, Rng& rng) {
    TreeNode node;
    double mean = 0.0;
    for (int i : idx) mean += ys[i];
    node.value = mean / idx.size();

    double base = subset_sse(ys, idx);
    int best_axis = -1, best_level = -1;
    double best_gain = 1e-9 * base;  // relative: keeps splits invariant to score rescaling
    // Purity by exact value equality, not by SSE == 0: fp noise in the SSE of
    // identical values depends on their magnitude, and conditioning rng draws
    // on it would desynchronize the forest under affine score rescaling.
    bool pure = std::all_of(idx.begin(), idx.end(), [&](int i) { return ys[i] == ys[idx[0]]; });
    if (!pure && idx.size() >= 2) {
        // random subset of size ceil(sqrt(#splittable)) among the axes that
        // still vary inside this node
        std::vector<int> axes;
        for (int a = 0; a < static_cast<int>(shape.size()); ++a)
            for (int i : idx)
                if (xs[i][a] != xs[idx[0]][a]) {
                    axes.push_back(a);
                    break;
                }
        for (size_t i = axes.size(); i > 1; --i) std::swap(axes[i - 1], axes[rng.below(i)]);
        axes.resize(static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(axes.size())))));

        for (int axis : axes)
            for (int level = 0; level < shape[axis]; ++level) {
                std::vector<int> l, r;
                for (int i : idx) (xs[i][axis] == level ? l : r).push_back(i);
                if (l.empty() || r.empty()) continue;
                // sum the child SSEs first: complementary splits of a binary
                // axis then score bit-identically and tie-break by axis order
                double gain = base - (subset_sse(ys, l) + subset_sse(ys, r));
                if (gain > best_gain) {
                    best_gain = gain;
                    best_axis = axis;
                    best_level = level;
                }
            }
    }

    int self = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);
    if (best_axis >= 0) {
        std::vector<int> l, r;
        for (int i : idx) (xs[i][best_axis] == best_level ? l : r).push_back(i);
        tree.nodes[self].axis = best_axis;
        tree.nodes[self].level = best_level;
        int li = grow(tree, xs, ys, l, shape, rng);
        int ri = grow(tree, xs, ys, r, shape, rng);
        tree.nodes[self].left = li;
        tree.nodes[self].right = ri;
    }
    return self;
}

}  // namespace

ImportanceReport fanova_importance(const std::vector<RunRecord>& records, uint64_t seed) {
    ImportanceReport rep;
    rep.axes = kSearchAxes;

    // Encode successful records over the observed value sets. Sorting first
    // makes the report independent of record order.
    std::vector<std::pair<std::vector<std::string>, double>> rows;
    for (const RunRecord& r : records) {
        if (r.failed) {
            ++rep.failed_trials;
            continue;
        }
        rows.emplace_back(axis_values(r.config), r.ratio);
    }
    std::sort(rows.begin(), rows.end());

    std::vector<std::vector<std::string>> levels(kSearchAxes.size());
    std::vector<std::vector<int>> xs;
    std::vector<double> ys;
    for (const auto& [vals, y] : rows) {
        std::vector<int> x(vals.size());
        for (size_t a = 0; a < vals.size(); ++a) {
            auto& lv = levels[a];
            auto it = std::find(lv.begin(), lv.end(), vals[a]);
            if (it == lv.end()) {
                lv.push_back(vals[a]);
                x[a] = static_cast<int>(lv.size()) - 1;
            } else {
                x[a] = static_cast<int>(it - lv.begin());
            }
        }
        xs.push_back(std::move(x));
        ys.push_back(y);
    }
    if (xs.size() < 20) throw std::invalid_argument("fanova: need at least 20 successful records");
    int varying = 0;
    for (const auto& lv : levels) varying += lv.size() >= 2;
    if (varying == 0) throw std::invalid_argument("fanova: no axis takes two values");

    std::vector<int> shape;
    for (const auto& lv : levels) shape.push_back(static_cast<int>(std::max<size_t>(lv.size(), 1)));

    double ymean = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double yvar = 0.0;
    for (double y : ys) yvar += (y - ymean) * (y - ymean);
    if (yvar == 0.0) {
        // degenerate: constant scores
        for (size_t a = 0; a < kSearchAxes.size(); ++a) rep.individual[kSearchAxes[a]] = 0.0;
        for (size_t a = 0; a < kSearchAxes.size(); ++a)
            for (size_t b = a + 1; b < kSearchAxes.size(); ++b)
                rep.pairwise[kSearchAxes[a] + "|" + kSearchAxes[b]] = 0.0;
        rep.total_variance = 0.0;
        return rep;
    }

    // 64 bootstrap trees
    Rng rng(seed);
    std::vector<Tree> forest;
    for (int t = 0; t < 64; ++t) {
        std::vector<int> idx(xs.size());
        for (int& i : idx) i = static_cast<int>(rng.below(xs.size()));
        Tree tree;
        grow(tree, xs, ys, idx, shape, rng);
        forest.push_back(std::move(tree));
    }

    // forest predictions over the full factorial grid of observed values,
    // then the exact decomposition of that surrogate surface
    std::vector<double> grid(grid_size(shape));
    std::vector<int> coord(shape.size(), 0);
    for (size_t idx = 0; idx < grid.size(); ++idx) {
        size_t rest = idx;
        for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
            coord[a] = static_cast<int>(rest % shape[a]);
            rest /= shape[a];
        }
        double pred = 0.0;
        for (const Tree& t : forest) pred += t.predict(coord);
        grid[idx] = pred / forest.size();
    }
    AnovaDecomposition d = brute_force_anova(shape, grid);
    rep.total_variance = d.total_variance;
    for (size_t a = 0; a < kSearchAxes.size(); ++a) rep.individual[kSearchAxes[a]] = d.individual[a];
    for (size_t a = 0; a < kSearchAxes.size(); ++a)
        for (size_t b = a + 1; b < kSearchAxes.size(); ++b)
            rep.pairwise[kSearchAxes[a] + "|" + kSearchAxes[b]] = d.pairwise[a][b];
    return rep;
}

void save_importance_report(const ImportanceReport& r, const std::string& path) {
    nlohmann::json j{{"axes", r.axes},
                     {"individual", r.individual},
                     {"pairwise", r.pairwise},
                     {"total_variance", r.total_variance},
                     {"failed_trials", r.failed_trials}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write importance report: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace dk
