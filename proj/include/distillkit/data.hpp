#pragma once

#include <string>
#include <vector>

#include "distillkit/augment.hpp"

namespace dk {

enum class TaskKind { Classification, Tagging };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct Dataset {
    TaskKind task = TaskKind::Classification;
    int vocab_size = 0;
    int n_classes = 0;
    std::vector<Example> examples;
};

// JSON-lines, one example per line:
//   {"tokens":[...], "label": int}    classification
//   {"tokens":[...], "tags":[...]}    tagging
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path, TaskKind task, int vocab_size, int n_classes);

// Sequences drawn from class-conditional token distributions; learnable by a
// small encoder, with enough overlap that accuracy stays below 1.
Dataset synth_classification(int n_examples, int vocab_size, int n_classes, int min_len,
                             int max_len, uint64_t seed);

// Hidden-Markov-style tag sequences: tags follow a sticky chain, tokens are
// emitted from tag-conditional distributions with noise.
Dataset synth_tagging(int n_examples, int vocab_size, int n_tags, int min_len, int max_len,
                      uint64_t seed);

// Deterministic split: the first ceil(frac * n) examples form the first part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double first_frac);

}  // namespace dk
