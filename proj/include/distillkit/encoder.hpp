#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillkit/mat.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tape.hpp"

namespace dk {

enum class HeadKind { Classification, Tagging };

struct EncoderConfig {
    int n_layers = 2;
    int h_units = 32;
    int h_mid = 64;
    int n_heads = 4;
    int vocab_size = 32;
    int n_classes = 2;
    int max_len = 64;
    HeadKind head = HeadKind::Classification;
};

struct ForwardResult {
    Mat logits;                 // 1 x n_classes (classification) or T x n_classes (tagging)
    std::vector<Mat> hidden;    // n_layers entries, each T x h_units
};

struct GraphForwardResult {
    Var logits;
    std::vector<Var> hidden;
};

using ParamMap = std::map<std::string, Mat>;
using VarMap = std::map<std::string, Var>;

// Small pre-LN-free transformer encoder: per block, post-layer-norm attention
// and feed-forward sublayers with residuals. Doubles as teacher, student and
// MI critic tower. Layer norm carries no learned scale/shift, so the all-zero
// parameter model maps everything to zero.
struct EncoderModel {
    EncoderConfig cfg;
    ParamMap params;

    static EncoderModel init(const EncoderConfig& cfg, Rng& rng);

    // Fast inference path, no gradient bookkeeping.
    ForwardResult forward(const std::vector<int>& tokens) const;
    ForwardResult forward_embedded(const Mat& x) const;

    // Differentiable path; `vars` must come from lift(tape).
    GraphForwardResult forward_graph(Tape& tape, const VarMap& vars,
                                     const std::vector<int>& tokens) const;
    GraphForwardResult forward_graph_embedded(Tape& tape, const VarMap& vars, Var x) const;

    // Embedding lookup with positions added, as a plain Mat (mixup input space).
    Mat embed(const std::vector<int>& tokens) const;

    VarMap lift(Tape& tape) const;
    void accumulate_grads(const Tape& tape, const VarMap& vars, ParamMap& grads) const;

    // Softmax of logits; convenience for soft labels.
    Mat predict_proba(const std::vector<int>& tokens) const;
    Mat predict_proba_embedded(const Mat& x) const;
};

void save_checkpoint(const EncoderModel& m, const std::string& path);
EncoderModel load_checkpoint(const std::string& path);

ParamMap zero_like(const ParamMap& params);

}  // namespace dk
