#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "distillkit/search.hpp"

namespace dk {

// word -> fixed-width vector; unknown words read as the zero vector
struct EmbeddingTable {
    int dim = 0;
    std::map<std::string, std::vector<double>> vecs;

    std::vector<double> lookup(const std::string& word) const;
    static EmbeddingTable load(const std::string& path);
    void save(const std::string& path) const;
    // deterministic random vectors for the synthetic token vocabulary t0..t{V-1}
    static EmbeddingTable synthetic(int vocab_size, int dim, uint64_t seed);
};

// token-id corpus/description expressed in the embedding table's word space
std::vector<std::string> corpus_words(const Dataset& d);

struct DatasetFeatures {
    std::vector<double> context_embedding;  // IDF-weighted mean of corpus word vectors
    std::vector<double> task_embedding;     // plain mean of description word vectors
    double baseline_score = 0.0;
    double teacher_score = 0.0;
    int n_examples = 1;
};

// IDF_w = log((1+N)/(1+N_w)) over the registered dataset collection
// (`collection_vocabs`, one word set per dataset, this corpus included).
DatasetFeatures featurize_dataset(const std::vector<std::string>& corpus,
                                  const std::vector<std::string>& description,
                                  const EmbeddingTable& emb,
                                  const std::vector<std::set<std::string>>& collection_vocabs,
                                  double baseline_score, double teacher_score, int n_examples);

struct MetaRow {
    std::string dataset_id;
    DatasetFeatures features;
    DistillerConfig config;
    double ratio = 0.0;
};

void save_meta_rows(const std::vector<MetaRow>& rows, const std::string& path);
std::vector<MetaRow> load_meta_rows(const std::string& path);

struct GbrtSettings {
    int rounds = 200;
    int max_depth = 3;
    double shrinkage = 0.1;
    double subsample = 0.8;
};

// Gradient-boosted regression trees over (dataset features ⊕ one-hot config).
struct MetaModel {
    struct Node {
        int feature = -1;     // -1: leaf
        double threshold = 0.0;
        double value = 0.0;
        int left = -1, right = -1;
    };
    struct Tree {
        std::vector<Node> nodes;
        double predict(const std::vector<double>& x) const;
    };

    GbrtSettings settings;
    double base = 0.0;
    std::vector<Tree> trees;
    int n_features = 0;
    std::vector<double> train_loss;  // mean squared error per boosting round

    double predict_encoded(const std::vector<double>& x) const;
    double predict(const DatasetFeatures& f, const DistillerConfig& c) const;

    void save(const std::string& path) const;
    static MetaModel load(const std::string& path);
};

// Feature schema: context ⊕ task ⊕ [baseline, teacher, log n] ⊕ one-hot axes.
// Configs outside the canonical axis vocabularies one-hot to all zeros.
std::vector<double> encode_meta_features(const DatasetFeatures& f, const DistillerConfig& c);

MetaModel train_meta(const std::vector<MetaRow>& rows, const GbrtSettings& settings, uint64_t seed);

struct Recommendation {
    DistillerConfig config;
    double predicted_ratio = 0.0;
};

// Scores every config in the space and returns the top n by predicted ratio
// (ties broken by config text, ascending).
std::vector<Recommendation> recommend(const MetaModel& model, const DatasetFeatures& features,
                                      const SearchSpace& space, int n);

// Spearman rank correlation via Pearson on mid-ranks; nullopt when either
// side has zero rank variance.
std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct LodoResult {
    std::map<std::string, std::optional<double>> per_dataset;  // nullopt: undefined, skipped
    double mean = 0.0;  // over the defined folds
    int skipped = 0;
};

LodoResult lodo_eval(const std::vector<MetaRow>& rows, const GbrtSettings& settings, uint64_t seed);

}  // namespace dk
