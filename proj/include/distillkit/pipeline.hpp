#pragma once

#include <optional>
#include <string>
#include <vector>

#include "distillkit/data.hpp"
#include "distillkit/mapping.hpp"
#include "distillkit/mi.hpp"

namespace dk {

// One knowledge-distillation recipe: which losses, which layer mapping,
// which augmentation stack, and the five term weights of the training
// objective. Weight defaults depend on whether augmentation is active:
// beta1 = beta2 = 1 and gamma1 = gamma2 = 0.5 with augmentation, otherwise
// beta1 = 1 and beta2 = gamma1 = gamma2 = 0.
struct DistillerConfig {
    InterLossKind inter_loss;
    PredKind pred_loss = PredKind::CE;
    MapStrategy mapping = MapStrategy::Skip;
    AugPolicy aug_policy;
    double beta1 = 1.0, beta2 = 1.0, gamma1 = 0.5, gamma2 = 0.5;
    double inter_weight = 1.0;  // scale on the whole layer-mapping term; 0 disables it
    int epochs = 20;
    int batch_size = 16;
    double learning_rate = 5e-5;
    uint64_t seed = 0;

    static DistillerConfig defaults(AugPolicy aug = {});
    void validate() const;

    // Flat `key = value` text, dotted keys (inter_loss.kind, aug.ops, ...).
    static DistillerConfig parse_text(const std::string& text);
    std::string to_text() const;
};

// Named recipes from prior work, at this codebase's scale.
DistillerConfig preset(const std::string& name);  // tinybert-style | bert-emd-style | mixkd-style

struct RunRecord {
    DistillerConfig config;
    std::string dataset_id;
    TaskKind task_kind = TaskKind::Classification;
    double teacher_score = 0.0;
    double student_score = 0.0;
    double ratio = 0.0;
    double wall_time = 0.0;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;
};

void save_run_records(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> load_run_records(const std::string& path);

double distillation_ratio(double student_score, double teacher_score);

struct EvalResult {
    double accuracy = 0.0;
    double span_f1 = 0.0;  // tagging only; exact-match over maximal same-tag runs
};
EvalResult evaluate_detailed(const EncoderModel& model, const Dataset& split);
double evaluate(const EncoderModel& model, const Dataset& split);

// Plain supervised cross-entropy training; used for teachers and baselines.
EncoderModel train_supervised(const EncoderModel& init, const Dataset& train, int epochs,
                              int batch_size, double lr, uint64_t seed);

// Everything the distillation objective optimizes besides the student:
// width-bridging projections (one per student layer) and, for the MI-based
// intermediate loss, one trainable critic per mapped layer pair.
struct DistillState {
    EncoderModel student;
    std::vector<std::pair<int, int>> pairs;  // (teacher layer, student layer), 0-based
    MappingMatrix mapping;                   // Skip/Last weights; EMD solved per batch
    std::vector<Projection> projections;     // indexed by student layer
    std::vector<CriticPair> critics;         // indexed like pairs, empty unless MI
};

DistillState init_distill_state(const DistillerConfig& cfg, const EncoderModel& teacher,
                                const EncoderModel& student_init);

// Builds the full training objective for one batch on the tape:
//   sum_{i,j} m_ij * inter(Ht_i(x_hat), Hs_j(x_hat))
//   + beta1 * pred(teacher(x), student(x)) + gamma1 * pred(y, student(x))
//   + beta2 * pred(teacher(x_hat), student(x_hat)) + gamma2 * pred(y_hat, student(x_hat))
// With an empty augmentation policy x_hat = x and the beta2/gamma2 terms are
// skipped. `aug_rng` drives the augmentation draws.
Var total_objective(Tape& t, const DistillerConfig& cfg, const std::vector<Example>& batch,
                    const EncoderModel& teacher, const DistillState& state,
                    const VarMap& student_vars, const std::vector<Var>& proj_vars,
                    const std::vector<CriticPair::GraphVars>& critic_vars, TaskKind task,
                    const Lexicon& lex, const UnigramTable& unigrams, Rng& aug_rng);

// Numeric convenience for tests: evaluates total_objective at the current
// parameters with a fresh augmentation stream.
double total_objective_value(const DistillerConfig& cfg, const std::vector<Example>& batch,
                             const EncoderModel& teacher, const DistillState& state, TaskKind task,
                             const Lexicon& lex, const UnigramTable& unigrams, uint64_t aug_seed);

struct DistillResult {
    EncoderModel student;
    RunRecord record;
    std::vector<double> epoch_loss;  // mean batch objective per epoch
};

DistillResult distill(const DistillerConfig& cfg, const Dataset& train, const Dataset& eval,
                      const EncoderModel& teacher, const EncoderModel& student_init,
                      const std::string& dataset_id = "");

}  // namespace dk
