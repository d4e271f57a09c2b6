#pragma once

// Per-position, per-depth activation snapshots: the embedding right after a
// block's attention (pre-MLP) and right after its MLP (post-MLP, before any
// block-end normalization). Captured only on request.

#include <vector>

#include "lglab/tensor.hpp"

namespace lglab {

enum class TraceStage { PreMlp, PostMlp };

struct ActivationTrace {
    int depth = 0;
    int positions = 0;
    int width = 0;
    std::vector<Tensor> pre;   // one T x d matrix per depth
    std::vector<Tensor> post;  // one T x d matrix per depth

    static ActivationTrace make(int depth, int positions, int width) {
        ActivationTrace t;
        t.depth = depth;
        t.positions = positions;
        t.width = width;
        t.pre.assign(static_cast<size_t>(depth), Tensor({positions, width}));
        t.post.assign(static_cast<size_t>(depth), Tensor({positions, width}));
        return t;
    }

    const Tensor& at(int d, TraceStage s) const {
        return s == TraceStage::PreMlp ? pre[static_cast<size_t>(d)] : post[static_cast<size_t>(d)];
    }

    const double* row(int d, TraceStage s, int position) const {
        return at(d, s).row(position);
    }
};

}  // namespace lglab
