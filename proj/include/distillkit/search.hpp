#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "distillkit/pipeline.hpp"

namespace dk {

// The finite recipe space random search draws from: one categorical axis per
// distillation component.
struct SearchSpace {
    std::vector<InterLossKind> inter;
    std::vector<PredKind> pred;
    std::vector<MapStrategy> mapping;
    std::vector<std::string> aug;  // AugPolicy::describe() strings

    static SearchSpace full();
    size_t size() const { return inter.size() * pred.size() * mapping.size() * aug.size(); }
    DistillerConfig sample(Rng& rng) const;
    bool contains(const DistillerConfig& c) const;
};

using TrialRunner = std::function<RunRecord(const DistillerConfig& cfg, int trial_index)>;

// Samples `budget` configs (seeded, deterministic), runs them through the
// runner up to `workers` at a time, and returns records ordered by trial
// index. A runner that throws yields a failed record; the search continues.
std::vector<RunRecord> random_search(const SearchSpace& space, int budget, uint64_t base_seed,
                                     const TrialRunner& runner, int workers = 1);

inline const std::vector<std::string> kSearchAxes = {"inter_loss", "pred_loss", "mapping", "aug"};

// Categorical value of each axis for a config, as used by the importance
// analysis (e.g. inter_loss = "MI_alpha@0.9").
std::vector<std::string> axis_values(const DistillerConfig& c);

struct ImportanceReport {
    std::vector<std::string> axes;
    std::map<std::string, double> individual;             // axis -> variance fraction
    std::map<std::string, double> pairwise;               // "a|b" -> variance fraction
    double total_variance = 0.0;
    int failed_trials = 0;
};

void save_importance_report(const ImportanceReport& r, const std::string& path);

// Random-forest surrogate over the records' one-hot axes, then an exact
// variance decomposition of the forest's predictions on the full factorial
// grid of observed axis values.
ImportanceReport fanova_importance(const std::vector<RunRecord>& records, uint64_t seed = 0);

// Exact functional ANOVA of a complete factorial table. `shape[a]` is the
// number of levels of axis a; `scores` is laid out with the last axis fastest.
struct AnovaDecomposition {
    double grand_mean = 0.0;
    double total_variance = 0.0;
    std::vector<double> individual;                       // per axis, fraction of total
    std::vector<std::vector<double>> pairwise;            // [a][b], a < b used, fraction
};
AnovaDecomposition brute_force_anova(const std::vector<int>& shape,
                                     const std::vector<double>& scores);

}  // namespace dk
