#pragma once

// Trainable decoder-only transformer. Block layout: per-head attention over
// column slices of the embedding (no output projection, heads concatenated),
// residual, two-layer MLP, residual, one block-end layer norm. There are no
// positional embeddings. Two classification heads share the backbone.
//
// Attention scores are ⟨Q x_i, K x_j⟩ / sqrt(d/h), then multiplied by the
// softmax temperature: 1 in standard mode, beta * ln(n) in tempered mode with
// a learnable per-layer beta and n the instance's input length.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lglab/autograd.hpp"
#include "lglab/datagen.hpp"
#include "lglab/rng.hpp"
#include "lglab/tensor.hpp"
#include "lglab/trace.hpp"

namespace lglab {

enum class SoftmaxMode { Standard, Tempered };
enum class HeadId { Main, Aux };

struct ModelConfig {
    int depth = 2;
    int d = 64;
    int heads = 4;
    int d_inner = 256;
    int q_vocab = 103;
    Activation activation = Activation::GELU;
    SoftmaxMode softmax = SoftmaxMode::Standard;
    int context_length = 64;
    bool layer_norm = true;

    int head_dim() const { return d / heads; }
    void validate() const {
        require(depth >= 0 && d >= 1 && heads >= 1, "model config: bad sizes");
        require(d % heads == 0, "model config: d must be divisible by the head count");
        require(q_vocab >= 3, "model config: vocabulary too small");
        require(context_length >= 2, "model config: context too short");
    }
};

// tau = beta * ln(n) in tempered mode, 1 otherwise.
inline double tempered_tau(double beta, int n_input, SoftmaxMode mode) {
    if (mode == SoftmaxMode::Standard) return 1.0;
    if (n_input < 2)
        throw std::domain_error("tempered_tau: input length must be at least 2 in tempered mode");
    return beta * std::log(static_cast<double>(n_input));
}

template <typename T>
struct BasicBlockParams {
    std::vector<basic_tensor<T>> q, k, v;  // per head, head_dim x head_dim
    basic_tensor<T> w1, b1, w2, b2;        // d_inner x d, d_inner, d x d_inner, d
};

template <typename T>
struct BasicModel {
    ModelConfig cfg;
    basic_tensor<T> embed;  // q_vocab x d
    std::vector<BasicBlockParams<T>> blocks;
    basic_tensor<T> w_main, b_main;  // d x q_vocab, q_vocab
    basic_tensor<T> w_aux, b_aux;
    std::vector<basic_tensor<T>> beta;  // one scalar per layer (tempered mode)

    template <typename U>
    BasicModel<U> cast() const {
        BasicModel<U> out;
        out.cfg = cfg;
        out.embed = embed.template cast<U>();
        for (const auto& b : blocks) {
            BasicBlockParams<U> nb;
            for (const auto& m : b.q) nb.q.push_back(m.template cast<U>());
            for (const auto& m : b.k) nb.k.push_back(m.template cast<U>());
            for (const auto& m : b.v) nb.v.push_back(m.template cast<U>());
            nb.w1 = b.w1.template cast<U>();
            nb.b1 = b.b1.template cast<U>();
            nb.w2 = b.w2.template cast<U>();
            nb.b2 = b.b2.template cast<U>();
            out.blocks.push_back(std::move(nb));
        }
        out.w_main = w_main.template cast<U>();
        out.b_main = b_main.template cast<U>();
        out.w_aux = w_aux.template cast<U>();
        out.b_aux = b_aux.template cast<U>();
        for (const auto& m : beta) out.beta.push_back(m.template cast<U>());
        return out;
    }
};

using Model = BasicModel<double>;
using ModelF = BasicModel<float>;

inline Model init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng root(seed);
    auto gauss = [](Rng rng, std::vector<int> shape, double std) {
        Tensor t(std::move(shape));
        for (size_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
        return t;
    };
    const double block_std = 0.02 / std::sqrt(2.0 * std::max(1, cfg.depth));
    m.embed = gauss(root.fork(1), {cfg.q_vocab, cfg.d}, 0.02);
    const int dh = cfg.head_dim();
    for (int b = 0; b < cfg.depth; ++b) {
        BasicBlockParams<double> blk;
        Rng br = root.fork(2, static_cast<uint64_t>(b));
        for (int h = 0; h < cfg.heads; ++h) {
            blk.q.push_back(gauss(br.fork(0, static_cast<uint64_t>(h)), {dh, dh}, block_std));
            blk.k.push_back(gauss(br.fork(1, static_cast<uint64_t>(h)), {dh, dh}, block_std));
            blk.v.push_back(gauss(br.fork(2, static_cast<uint64_t>(h)), {dh, dh}, block_std));
        }
        blk.w1 = gauss(br.fork(3), {cfg.d_inner, cfg.d}, block_std);
        blk.b1 = Tensor({cfg.d_inner});
        blk.w2 = gauss(br.fork(4), {cfg.d, cfg.d_inner}, block_std);
        blk.b2 = Tensor({cfg.d});
        m.blocks.push_back(std::move(blk));
        Tensor beta({1});
        beta[0] = 1.0;
        m.beta.push_back(beta);
    }
    m.w_main = gauss(root.fork(3), {cfg.d, cfg.q_vocab}, 0.02);
    m.b_main = Tensor({cfg.q_vocab});
    m.w_aux = gauss(root.fork(4), {cfg.d, cfg.q_vocab}, 0.02);
    m.b_aux = Tensor({cfg.q_vocab});
    return m;
}

inline std::vector<std::pair<std::string, Tensor*>> named_params(Model& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embed", &m.embed);
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        for (size_t h = 0; h < m.blocks[b].q.size(); ++h) {
            const std::string hp = p + "h" + std::to_string(h) + ".";
            out.emplace_back(hp + "Q", &m.blocks[b].q[h]);
            out.emplace_back(hp + "K", &m.blocks[b].k[h]);
            out.emplace_back(hp + "V", &m.blocks[b].v[h]);
        }
        out.emplace_back(p + "W1", &m.blocks[b].w1);
        out.emplace_back(p + "b1", &m.blocks[b].b1);
        out.emplace_back(p + "W2", &m.blocks[b].w2);
        out.emplace_back(p + "b2", &m.blocks[b].b2);
    }
    out.emplace_back("head.main.W", &m.w_main);
    out.emplace_back("head.main.b", &m.b_main);
    out.emplace_back("head.aux.W", &m.w_aux);
    out.emplace_back("head.aux.b", &m.b_aux);
    for (size_t b = 0; b < m.beta.size(); ++b)
        out.emplace_back("beta." + std::to_string(b), &m.beta[b]);
    return out;
}

// -------------------------------------------------------------- inference

// logits = embeddings * W_head + b_head, row-wise.
template <typename T>
basic_tensor<T> apply_head(const basic_tensor<T>& final_embeddings, const basic_tensor<T>& w,
                           const basic_tensor<T>& b) {
    basic_tensor<T> logits = matmul(final_embeddings, w);
    for (int r = 0; r < logits.rows(); ++r)
        for (int c = 0; c < logits.cols(); ++c) logits.at(r, c) += b[static_cast<size_t>(c)];
    return logits;
}

template <typename T>
struct ForwardOut {
    basic_tensor<T> logits;
    std::optional<ActivationTrace> trace;
};

// Per-head causal attention over column slices plus the residual.
template <typename T>
basic_tensor<T> attention_sublayer(const basic_tensor<T>& x, const BasicBlockParams<T>& blk,
                                   T tau) {
    const int tlen = x.rows();
    const int heads = static_cast<int>(blk.q.size());
    const int dh = x.cols() / heads;
    const T score_scale = T(1) / std::sqrt(static_cast<T>(dh));
    basic_tensor<T> y = x;
    for (int h = 0; h < heads; ++h) {
        basic_tensor<T> xs({tlen, dh});
        for (int r = 0; r < tlen; ++r)
            std::copy(x.row(r) + h * dh, x.row(r) + (h + 1) * dh, xs.row(r));
        basic_tensor<T> queries = matmul_nt(xs, blk.q[static_cast<size_t>(h)]);
        basic_tensor<T> keys = matmul_nt(xs, blk.k[static_cast<size_t>(h)]);
        basic_tensor<T> scores = matmul_nt(queries, keys);
        for (size_t i = 0; i < scores.size(); ++i) scores[i] *= score_scale;
        basic_tensor<T> att = causal_tempered_softmax(scores, tau);
        basic_tensor<T> mixed = matmul(att, matmul_nt(xs, blk.v[static_cast<size_t>(h)]));
        for (int r = 0; r < tlen; ++r)
            for (int c = 0; c < dh; ++c) y.at(r, h * dh + c) += mixed.at(r, c);
    }
    return y;
}

template <typename T>
basic_tensor<T> mlp_sublayer(const basic_tensor<T>& y, const BasicBlockParams<T>& blk,
                             Activation act) {
    basic_tensor<T> hidden = matmul_nt(y, blk.w1);
    for (int r = 0; r < hidden.rows(); ++r)
        for (int c = 0; c < hidden.cols(); ++c)
            hidden.at(r, c) = activate(hidden.at(r, c) + blk.b1[static_cast<size_t>(c)], act);
    basic_tensor<T> z = matmul_nt(hidden, blk.w2);
    basic_tensor<T> out = y;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c)
            out.at(r, c) += z.at(r, c) + blk.b2[static_cast<size_t>(c)];
    return out;
}

// One full block: attention + residual, MLP + residual, optional norm.
template <typename T>
basic_tensor<T> attention_block(const basic_tensor<T>& x, const BasicBlockParams<T>& blk, T tau,
                                Activation act, bool normalize) {
    require(all_finite(x), "attention_block: non-finite input");
    require(tau > T(0), "attention_block: tau must be positive");
    basic_tensor<T> y = mlp_sublayer(attention_sublayer(x, blk, tau), blk, act);
    return normalize ? layer_norm(y) : y;
}

// Plain forward pass, no gradients. Capture stores pre/post-MLP embeddings.
template <typename T>
ForwardOut<T> forward(const BasicModel<T>& m, std::span<const int> tokens, int n_input,
                      HeadId head, bool capture = false) {
    const ModelConfig& cfg = m.cfg;
    require(static_cast<int>(tokens.size()) <= cfg.context_length,
            "forward: sequence exceeds the context length");
    require(!tokens.empty(), "forward: empty sequence");
    const int tlen = static_cast<int>(tokens.size());
    basic_tensor<T> x({tlen, cfg.d});
    for (int i = 0; i < tlen; ++i) {
        const int id = tokens[static_cast<size_t>(i)];
        require(id >= 0 && id < cfg.q_vocab, "forward: token id out of range");
        std::copy(m.embed.row(id), m.embed.row(id) + cfg.d, x.row(i));
    }
    ForwardOut<T> out;
    if (capture) out.trace = ActivationTrace::make(cfg.depth, tlen, cfg.d);
    for (int b = 0; b < cfg.depth; ++b) {
        const auto& blk = m.blocks[static_cast<size_t>(b)];
        const T tau = static_cast<T>(
            tempered_tau(static_cast<double>(m.beta[static_cast<size_t>(b)][0]), n_input, cfg.softmax));
        basic_tensor<T> y = attention_sublayer(x, blk, tau);
        if (capture)
            out.trace->pre[static_cast<size_t>(b)] = Tensor(y.shape(), std::vector<double>(
                y.raw().begin(), y.raw().end()));
        y = mlp_sublayer(y, blk, cfg.activation);
        if (capture)
            out.trace->post[static_cast<size_t>(b)] = Tensor(y.shape(), std::vector<double>(
                y.raw().begin(), y.raw().end()));
        x = cfg.layer_norm ? lglab::layer_norm(y) : std::move(y);
    }
    out.logits = head == HeadId::Main ? apply_head(x, m.w_main, m.b_main)
                                      : apply_head(x, m.w_aux, m.b_aux);
    return out;
}

// Mean cross-entropy over the masked positions only.
inline double masked_next_token_loss(const Tensor& logits, std::span<const int> targets,
                                     std::span<const uint8_t> mask) {
    require(logits.rank() == 2 && static_cast<size_t>(logits.rows()) == targets.size() &&
                targets.size() == mask.size(),
            "masked_next_token_loss: shape mismatch");
    double total = 0.0;
    int count = 0;
    for (int r = 0; r < logits.rows(); ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const int t = targets[static_cast<size_t>(r)];
        require(t >= 0 && t < logits.cols(), "masked_next_token_loss: target out of range");
        const double* z = logits.row(r);
        double mx = z[0];
        for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, z[c]);
        double s = 0.0;
        for (int c = 0; c < logits.cols(); ++c) s += std::exp(z[c] - mx);
        total += mx + std::log(s) - z[t];
        ++count;
    }
    require(count > 0, "masked_next_token_loss: empty mask");
    return total / count;
}

// Greedy decoding: exactly n_out argmax steps, ties to the lowest token id.
// The prompt must end with the delimiter; n for the tempered softmax is the
// number of tokens before it.
template <typename T>
std::vector<int> greedy_decode(const BasicModel<T>& m, std::span<const int> prompt, int n_out,
                               int delimiter_id = TokenTable::kDelim) {
    require(n_out >= 1, "greedy_decode: n_out must be positive");
    require(!prompt.empty() && prompt.back() == delimiter_id,
            "greedy_decode: prompt must end with the delimiter");
    if (static_cast<int>(prompt.size()) + n_out > m.cfg.context_length)
        throw std::length_error("greedy_decode: decode would exceed the context length");
    const int n_input = static_cast<int>(prompt.size()) - 1;
    std::vector<int> tokens(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < n_out; ++step) {
        auto fw = forward(m, tokens, n_input, HeadId::Main, false);
        const int last = fw.logits.rows() - 1;
        int best = 0;
        T best_v = fw.logits.at(last, 0);
        for (int c = 1; c < fw.logits.cols(); ++c) {
            if (fw.logits.at(last, c) > best_v) {
                best_v = fw.logits.at(last, c);
                best = c;
            }
        }
        out.push_back(best);
        tokens.push_back(best);
    }
    return out;
}

// ----------------------------------------------------------- loss graphs

struct ModelNodes {
    int embed = -1;
    struct BlockNodes {
        std::vector<int> q, k, v;
        int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };
    std::vector<BlockNodes> blocks;
    int w_main = -1, b_main = -1, w_aux = -1, b_aux = -1;
    std::vector<int> beta;
};

// Registers parameters on the tape. Only the active head's parameters are
// registered so a backward pass yields gradients for exactly the tensors the
// optimizer step may touch.
inline ModelNodes register_params(Tape& tape, const Model& m, HeadId head) {
    ModelNodes n;
    n.embed = tape.param(m.embed, "embed");
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        const auto& blk = m.blocks[b];
        ModelNodes::BlockNodes bn;
        const std::string p = "blk" + std::to_string(b) + ".";
        for (size_t h = 0; h < blk.q.size(); ++h) {
            const std::string hp = p + "h" + std::to_string(h) + ".";
            bn.q.push_back(tape.param(blk.q[h], hp + "Q"));
            bn.k.push_back(tape.param(blk.k[h], hp + "K"));
            bn.v.push_back(tape.param(blk.v[h], hp + "V"));
        }
        bn.w1 = tape.param(blk.w1, p + "W1");
        bn.b1 = tape.param(blk.b1, p + "b1");
        bn.w2 = tape.param(blk.w2, p + "W2");
        bn.b2 = tape.param(blk.b2, p + "b2");
        n.blocks.push_back(std::move(bn));
    }
    if (head == HeadId::Main) {
        n.w_main = tape.param(m.w_main, "head.main.W");
        n.b_main = tape.param(m.b_main, "head.main.b");
    } else {
        n.w_aux = tape.param(m.w_aux, "head.aux.W");
        n.b_aux = tape.param(m.b_aux, "head.aux.b");
    }
    if (m.cfg.softmax == SoftmaxMode::Tempered)
        for (size_t b = 0; b < m.beta.size(); ++b)
            n.beta.push_back(tape.param(m.beta[b], "beta." + std::to_string(b)));
    return n;
}

// Builds the masked loss for one example on the tape. The example is trimmed
// to its last masked prediction; everything beyond it is dead weight.
inline int build_example_loss(Tape& tape, const ModelNodes& nodes, const ModelConfig& cfg,
                              const EncodedExample& ex, HeadId head) {
    int last_masked = -1;
    for (size_t i = 0; i < ex.mask.size(); ++i)
        if (ex.mask[i]) last_masked = static_cast<int>(i);
    require(last_masked >= 0, "build_example_loss: empty mask");
    const int tlen = last_masked + 1;
    require(tlen <= cfg.context_length, "build_example_loss: context overflow");
    std::vector<int> tokens(ex.tokens.begin(), ex.tokens.begin() + tlen);
    std::vector<int> targets(ex.targets.begin(), ex.targets.begin() + tlen);
    std::vector<uint8_t> mask(ex.mask.begin(), ex.mask.begin() + tlen);

    int x = tape.embedding(nodes.embed, tokens);
    const int dh = cfg.head_dim();
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int b = 0; b < cfg.depth; ++b) {
        const auto& bn = nodes.blocks[static_cast<size_t>(b)];
        int tau_node = -1;
        if (cfg.softmax == SoftmaxMode::Tempered) {
            require(ex.n_input >= 2, "build_example_loss: tempered mode needs n >= 2");
            tau_node = tape.scale(nodes.beta[static_cast<size_t>(b)],
                                  std::log(static_cast<double>(ex.n_input)));
        }
        int y = x;
        for (int h = 0; h < cfg.heads; ++h) {
            int xs = tape.slice_cols(x, h * dh, dh);
            int queries = tape.matmul_nt(xs, bn.q[static_cast<size_t>(h)]);
            int keys = tape.matmul_nt(xs, bn.k[static_cast<size_t>(h)]);
            int scores = tape.scale(tape.matmul_nt(queries, keys), score_scale);
            if (tau_node >= 0) scores = tape.scale_by(scores, tau_node);
            int att = tape.causal_softmax(scores, 1.0);
            int mixed = tape.matmul(att, tape.matmul_nt(xs, bn.v[static_cast<size_t>(h)]));
            y = tape.add(y, tape.pad_cols(mixed, h * dh, cfg.d));
        }
        int hidden = tape.activation(tape.add_row_vector(tape.matmul_nt(y, bn.w1), bn.b1),
                                     cfg.activation);
        int z = tape.add_row_vector(tape.matmul_nt(hidden, bn.w2), bn.b2);
        int post = tape.add(y, z);
        x = cfg.layer_norm ? tape.layer_norm_rows(post) : post;
    }
    const int w = head == HeadId::Main ? nodes.w_main : nodes.w_aux;
    const int bb = head == HeadId::Main ? nodes.b_main : nodes.b_aux;
    int logits = tape.add_row_vector(tape.matmul(x, w), bb);
    return tape.masked_cross_entropy(logits, std::move(targets), std::move(mask));
}

}  // namespace lglab
