#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillkit/encoder.hpp"

namespace dk {

enum class AugOp { CA, RA, BT, Mixup };

std::string to_string(AugOp op);
AugOp aug_op_from_string(const std::string& s);

// An ordered stack of elementary augmentation operations. The discrete ops
// (CA, RA, BT) run on token sequences; Mixup runs in embedding space on the
// assembled batch, so it is canonicalized to the end of the stack.
struct AugPolicy {
    std::vector<AugOp> ops;
    double ca_mask_p = 0.15;       // contextual-augmentation stand-in: mask-and-refill rate
    double ra_swap_p = 0.1;        // random adjacent swap rate
    double ra_replace_p = 0.1;     // random synonym replacement rate
    double mixup_beta_a = 0.0;     // 0 -> lambda ~ Uniform(0,1); >0 -> Beta(a, a)

    bool empty() const { return ops.empty(); }
    bool has_mixup() const;
    // Throws on duplicate Mixup; moves Mixup last.
    void validate_and_canonicalize();

    std::string describe() const;              // e.g. "CA+Mixup", "none"
    static AugPolicy parse(const std::string&); // inverse of describe
};

struct Example {
    std::vector<int> tokens;
    int label = -1;                // classification
    std::vector<int> tags;        // tagging (length == tokens.size())
};

// token_id -> synonym token_id
using Lexicon = std::map<int, int>;

// Empirical token distribution of a training split; used to refill masked
// positions.
struct UnigramTable {
    std::vector<double> cum;  // cumulative probabilities over token ids
    static UnigramTable build(const std::vector<Example>& train, int vocab_size);
    int sample(Rng& rng) const;
};

Lexicon load_lexicon(const std::string& path);
void save_lexicon(const Lexicon& lex, const std::string& path);
// Pairs up token ids (2i <-> 2i+1) below vocab_size; a usable default when no
// curated synonym file exists.
Lexicon derived_lexicon(int vocab_size);

// Applies the discrete ops of the policy in order (Mixup is batch-level and
// skipped here). Deterministic given the rng state. Token count is preserved;
// labels/tags pass through unchanged.
Example apply_policy(const AugPolicy& policy, const Example& ex, const Lexicon& lex,
                     const UnigramTable& unigrams, Rng& rng);

// x_hat = lambda*xi + (1-lambda)*xj, y_hat likewise; rows of xi/xj are
// embedded token positions, yi/yj are distributions over classes.
struct MixedExample {
    Mat x;  // T x h embedded sequence
    Mat y;  // 1 x C (classification) or T x C (tagging)
};
MixedExample mixup_classification(const Mat& xi, const Mat& xj, const Mat& yi, const Mat& yj,
                                  double lambda);
MixedExample mixup_tagging(const Mat& xi, const Mat& xj, const Mat& Yi, const Mat& Yj,
                           double lambda);

// Soft labels from the teacher: softmax of its logits on x_hat (token or
// embedded form).
Mat teacher_relabel(const EncoderModel& teacher, const std::vector<int>& tokens);
Mat teacher_relabel_embedded(const EncoderModel& teacher, const Mat& embedded);

}  // namespace dk
