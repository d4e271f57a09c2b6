#pragma once

// Named experiment presets. "desk" fits on a workstation; "paper" mirrors the
// full-scale recipe and is impractical to run here but kept as configuration.

#include "lglab/datagen.hpp"
#include "lglab/model.hpp"
#include "lglab/trainer.hpp"

namespace lglab {

struct SortPreset {
    ModelConfig model;
    TrainConfig train;
    GenConfig data;       // main task
    GenConfig aux_data;   // successor hints, same input distribution
    std::vector<int> in_dist_lengths;
    std::vector<int> ood_lengths;
};

// Numbers 1..20, depth-2 d=64 model, train lengths 2..8 skewed 80/20 with the
// repetition branch on; evaluation out-of-distribution at lengths 10 and 12.
inline SortPreset desk_sort_preset(uint64_t seed, SoftmaxMode softmax, bool multitask) {
    SortPreset p;
    p.model.depth = 2;
    p.model.d = 64;
    p.model.heads = 4;
    p.model.d_inner = 256;
    p.model.q_vocab = TokenTable{TaskFamily::Sorting}.vocab();
    p.model.activation = Activation::GELU;
    p.model.softmax = softmax;
    p.model.context_length = 64;

    p.train.base_lr = 1e-3;
    p.train.warmup_steps = 400;
    // Multitask runs alternate main and aux updates, so they get twice the
    // step budget to hold main-task updates fixed at 10k across settings.
    p.train.total_steps = multitask ? 20000 : 10000;
    p.train.batch = 64;
    p.train.seed = seed;
    p.train.multitask = multitask;
    p.train.log_every = 50;

    p.data.seed = seed * 1000 + 1;
    p.data.count = 60000;
    p.data.lengths = LengthSpec{2, 5, 6, 8, 0.8};
    p.data.repetition_prob = 0.1;
    p.data.value_lo = 1;
    p.data.value_hi = 20;
    p.data.context_length = p.model.context_length;

    p.aux_data = p.data;
    p.aux_data.seed = seed * 1000 + 2;

    p.in_dist_lengths = {2, 3, 4, 5, 6, 7, 8};
    p.ood_lengths = {10, 12};
    return p;
}

// The published recipe: d=1024, 16 heads, batch 1024, 100k steps, lr 1e-5.
inline SortPreset paper_sort_preset(uint64_t seed, SoftmaxMode softmax, bool multitask) {
    SortPreset p = desk_sort_preset(seed, softmax, multitask);
    p.model.d = 1024;
    p.model.heads = 16;
    p.model.d_inner = 2048;
    p.model.context_length = 512;
    p.train.base_lr = 1e-5;
    p.train.batch = 1024;
    p.train.total_steps = 100000;
    p.train.warmup_steps = 10000;  // ten passes over a batch-sized epoch proxy
    p.data.lengths = LengthSpec{2, 5, 6, 20, 0.8};
    p.data.value_hi = 100;
    p.data.context_length = 512;
    p.aux_data = p.data;
    p.aux_data.seed = seed * 1000 + 2;
    p.in_dist_lengths = {2, 5, 10, 20};
    p.ood_lengths = {30, 50, 100};
    return p;
}

}  // namespace lglab
