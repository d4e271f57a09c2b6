#pragma once

// Training loop: Adam with bias correction, linear warmup into a one-cycle
// cosine decay, strict main/aux alternation for multitask runs, and a binary
// checkpoint format that restores training bit-for-bit in deterministic mode.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lglab/autograd.hpp"
#include "lglab/datagen.hpp"
#include "lglab/model.hpp"

namespace lglab {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamSlot {
    Tensor m, v;
    int64_t t = 0;  // updates applied to this parameter
};

using Optimizer = std::map<std::string, AdamSlot>;

// One parameter update. Bias correction uses the slot's own step count, so a
// parameter that sits out a step (inactive head) is untouched by it.
inline void adam_update(Tensor& p, const Tensor& g, AdamSlot& slot, double lr,
                        const AdamConfig& cfg) {
    require(p.same_shape(g), "adam_update: shape mismatch");
    if (!all_finite(g)) throw std::runtime_error("adam_update: non-finite gradient");
    if (slot.t == 0) {
        slot.m = Tensor(p.shape());
        slot.v = Tensor(p.shape());
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
    for (size_t i = 0; i < p.size(); ++i) {
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

struct TrainConfig {
    double base_lr = 3e-4;
    int warmup_steps = 200;
    int total_steps = 10000;
    int batch = 64;
    AdamConfig adam;
    uint64_t seed = 1;
    bool multitask = false;
    double clip_norm = 0.0;  // 0 disables clipping
    int run_until = 0;  // stop after this step (0 = total); the schedule keeps its horizon
    int threads = 1;
    bool deterministic = true;  // forces single-threaded numerics, zeroes wallclock
    int log_every = 1;

    void validate() const {
        require(total_steps > warmup_steps, "train config: total steps must exceed warmup");
        require(batch >= 1, "train config: batch must be positive");
    }
};

// Linear ramp to base over the warmup, then one cosine cycle down to zero.
inline double lr_at(int step, const TrainConfig& cfg) {
    require(step >= 0 && step <= cfg.total_steps, "lr_at: step out of range");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.base_lr * static_cast<double>(step) / cfg.warmup_steps;
    const double progress = cfg.total_steps == cfg.warmup_steps
                                ? 1.0
                                : static_cast<double>(step - cfg.warmup_steps) /
                                      (cfg.total_steps - cfg.warmup_steps);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct MetricsRow {
    int step = 0;
    std::string task;
    double loss = 0.0;
    double lr = 0.0;
    double wallclock = 0.0;  // zero in deterministic mode
};

inline void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "write_metrics_csv: cannot open " + path);
    os << "step,task,loss,lr,wallclock\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.12g,%.12g,%.3f\n", r.step, r.task.c_str(), r.loss,
                      r.lr, r.wallclock);
        os << buf;
    }
}

namespace detail {

struct BatchGrads {
    ParamSet grads;
    double loss = 0.0;
};

// Forward/backward over a batch chunk on its own tape; gradients come back
// scaled by 1/batch.
inline BatchGrads chunk_grads(const Model& model, const std::vector<EncodedExample>& ds,
                              std::span<const int64_t> indices, HeadId head, int batch) {
    Tape tape;
    ModelNodes nodes = register_params(tape, model, head);
    int total = -1;
    for (int64_t idx : indices) {
        int loss = build_example_loss(tape, nodes, model.cfg, ds[static_cast<size_t>(idx)], head);
        total = total < 0 ? loss : tape.add(total, loss);
    }
    BatchGrads out;
    if (total < 0) return out;
    int scaled = tape.scale(total, 1.0 / batch);
    out.loss = tape.value(scaled)[0];
    out.grads = tape.backward(scaled);
    return out;
}

}  // namespace detail

struct StepCallback {
    // called after each optimizer step; return false to stop early
    std::function<bool(int step, const MetricsRow&)> fn;
};

struct TrainResult {
    Model model;
    Optimizer opt;
    std::vector<MetricsRow> log;
};

// Runs steps start_step+1 .. run_until (default: total_steps). The cosine
// horizon is always total_steps, so stopping early and resuming replays the
// uninterrupted run exactly. Multitask runs strictly alternate main-head and
// aux-head updates, starting with main; each step's batch is a pure function
// of (seed, step).
inline TrainResult train(Model model, const std::vector<EncodedExample>& main_ds,
                         const std::vector<EncodedExample>* aux_ds, const TrainConfig& cfg,
                         int start_step = 0, Optimizer opt = {},
                         const StepCallback& callback = {}) {
    cfg.validate();
    require(!main_ds.empty(), "train: empty main dataset");
    if (cfg.multitask) require(aux_ds && !aux_ds->empty(), "train: multitask needs an aux dataset");
    auto params = named_params(model);
    std::map<std::string, Tensor*> by_name(params.begin(), params.end());
    const int threads = cfg.deterministic ? 1 : std::max(1, cfg.threads);
    Rng root(cfg.seed);
    TrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    const int last_step = cfg.run_until > 0 ? std::min(cfg.run_until, cfg.total_steps)
                                            : cfg.total_steps;

    for (int step = start_step + 1; step <= last_step; ++step) {
        const bool aux_step = cfg.multitask && step % 2 == 0;
        const HeadId head = aux_step ? HeadId::Aux : HeadId::Main;
        const auto& ds = aux_step ? *aux_ds : main_ds;
        Rng batch_rng = root.fork(0xba7c4, static_cast<uint64_t>(step));
        std::vector<int64_t> indices(static_cast<size_t>(cfg.batch));
        for (auto& idx : indices) idx = batch_rng.uniform_int(0, static_cast<int64_t>(ds.size()) - 1);

        // Chunked data parallelism; chunk results are merged in chunk order,
        // so a fixed thread count gives a fixed reduction order.
        std::vector<detail::BatchGrads> parts(static_cast<size_t>(threads));
        if (threads == 1) {
            parts[0] = detail::chunk_grads(model, ds, indices, head, cfg.batch);
        } else {
            std::vector<std::thread> pool;
            const int per = (cfg.batch + threads - 1) / threads;
            for (int t = 0; t < threads; ++t) {
                const int lo = t * per;
                const int hi = std::min(cfg.batch, lo + per);
                if (lo >= hi) break;
                pool.emplace_back([&, t, lo, hi] {
                    parts[static_cast<size_t>(t)] = detail::chunk_grads(
                        model, ds, std::span<const int64_t>(indices.data() + lo,
                                                            static_cast<size_t>(hi - lo)),
                        head, cfg.batch);
                });
            }
            for (auto& th : pool) th.join();
        }
        ParamSet grads;
        double loss = 0.0;
        for (auto& part : parts) {
            loss += part.loss;
            for (auto& [name, g] : part.grads) {
                auto it = grads.find(name);
                if (it == grads.end()) {
                    grads.emplace(name, std::move(g));
                } else {
                    for (size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
                }
            }
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

        if (cfg.clip_norm > 0.0) {
            double sq = 0.0;
            for (auto& [name, g] : grads)
                for (size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) {
                const double s = cfg.clip_norm / norm;
                for (auto& [name, g] : grads)
                    for (size_t i = 0; i < g.size(); ++i) g[i] *= s;
            }
        }

        const double lr = lr_at(step, cfg);
        for (auto& [name, g] : grads) adam_update(*by_name.at(name), g, opt[name], lr, cfg.adam);

        MetricsRow row;
        row.step = step;
        row.task = aux_step ? "aux" : "main";
        row.loss = loss;
        row.lr = lr;
        row.wallclock = cfg.deterministic
                            ? 0.0
                            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                  .count();
        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == last_step))
            res.log.push_back(row);
        if (callback.fn && !callback.fn(step, row)) break;
    }
    res.model = std::move(model);
    res.opt = std::move(opt);
    return res;
}

// ------------------------------------------------------------ checkpoints

inline constexpr char kCheckpointMagic[4] = {'L', 'G', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    Optimizer opt;
    int step = 0;
    uint64_t seed = 0;
    nlohmann::json meta;  // run settings, free form
};

namespace detail {

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return nlohmann::json{{"depth", c.depth},
                          {"d", c.d},
                          {"heads", c.heads},
                          {"d_inner", c.d_inner},
                          {"q_vocab", c.q_vocab},
                          {"activation", c.activation == Activation::ReLU ? "relu" : "gelu"},
                          {"softmax", c.softmax == SoftmaxMode::Standard ? "standard" : "tempered"},
                          {"context_length", c.context_length},
                          {"layer_norm", c.layer_norm}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.depth = j.at("depth").get<int>();
    c.d = j.at("d").get<int>();
    c.heads = j.at("heads").get<int>();
    c.d_inner = j.at("d_inner").get<int>();
    c.q_vocab = j.at("q_vocab").get<int>();
    c.activation = j.at("activation").get<std::string>() == "relu" ? Activation::ReLU
                                                                   : Activation::GELU;
    c.softmax = j.at("softmax").get<std::string>() == "standard" ? SoftmaxMode::Standard
                                                                 : SoftmaxMode::Tempered;
    c.context_length = j.at("context_length").get<int>();
    c.layer_norm = j.at("layer_norm").get<bool>();
    return c;
}

inline void write_blob(std::ofstream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_blob(std::ifstream& is, const std::vector<int>& shape) {
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is.good()) throw std::runtime_error("checkpoint: truncated tensor data");
    return t;
}

}  // namespace detail

// Layout: magic, version, u64 header length, JSON header (config, step, seed,
// tensor manifest), then raw little-endian doubles in manifest order.
inline void save_checkpoint(const std::string& path, const Model& model, const Optimizer& opt,
                            int step, uint64_t seed, const nlohmann::json& meta = {}) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_checkpoint: cannot open " + path);
    Model& m = const_cast<Model&>(model);
    auto params = named_params(m);
    nlohmann::json manifest = nlohmann::json::array();
    for (auto& [name, t] : params)
        manifest.push_back({{"name", name}, {"shape", t->shape()}});
    nlohmann::json adam_manifest = nlohmann::json::array();
    for (const auto& [name, slot] : opt)
        adam_manifest.push_back(
            {{"name", name}, {"shape", slot.m.shape()}, {"t", slot.t}});
    nlohmann::json header{{"config", detail::model_config_json(model.cfg)},
                          {"step", step},
                          {"seed", seed},
                          {"params", manifest},
                          {"adam", adam_manifest},
                          {"meta", meta}};
    const std::string htext = header.dump();
    os.write(kCheckpointMagic, 4);
    const uint32_t version = kCheckpointVersion;
    os.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t hlen = htext.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (auto& [name, t] : params) detail::write_blob(os, *t);
    for (const auto& [name, slot] : opt) {
        detail::write_blob(os, slot.m);
        detail::write_blob(os, slot.v);
    }
    require(os.good(), "save_checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is.good() || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic");
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!is.good() || version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version");
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!is.good() || hlen > (1ull << 30)) throw std::runtime_error("load_checkpoint: bad header");
    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!is.good()) throw std::runtime_error("load_checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(htext);

    Checkpoint ck;
    ck.step = header.at("step").get<int>();
    ck.seed = header.at("seed").get<uint64_t>();
    ck.meta = header.value("meta", nlohmann::json::object());
    const ModelConfig cfg = detail::model_config_from_json(header.at("config"));
    ck.model = init_model(cfg, 0);  // shapes only; data overwritten below
    auto params = named_params(ck.model);
    std::map<std::string, Tensor*> by_name(params.begin(), params.end());
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("load_checkpoint: unknown tensor " + name);
        *it->second = detail::read_blob(is, shape);
    }
    for (const auto& entry : header.at("adam")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        AdamSlot slot;
        slot.t = entry.at("t").get<int64_t>();
        slot.m = detail::read_blob(is, shape);
        slot.v = detail::read_blob(is, shape);
        ck.opt.emplace(name, std::move(slot));
    }
    return ck;
}

}  // namespace lglab
