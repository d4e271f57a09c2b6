#pragma once

// Seed-reproducible generators for the sorting and increment task families,
// their auxiliary hint variants, tokenization, and the dataset file format.
// Every example's random stream is keyed by (seed, example index): order of
// generation and thread layout never change the content.

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lglab/construction.hpp"
#include "lglab/rng.hpp"
#include "lglab/tensor.hpp"

namespace lglab {

// ---------------------------------------------------------------- tokens

enum class TaskFamily { Sorting, Increment };

// Fixed id layout per family; these ids are part of the file format.
struct TokenTable {
    TaskFamily family = TaskFamily::Sorting;

    static constexpr int kPad = 0;
    static constexpr int kDelim = 1;

    int vocab() const { return family == TaskFamily::Sorting ? 103 : 14; }
    std::string version() const {
        return family == TaskFamily::Sorting ? "sorting/1" : "increment/1";
    }

    // sorting: numbers 1..100 -> 2..101 (102 reserved)
    int number_id(int v) const {
        require(family == TaskFamily::Sorting && v >= 1 && v <= 100, "token table: bad number");
        return v + 1;
    }
    int number_of(int id) const {
        require(family == TaskFamily::Sorting && id >= 2 && id <= 101, "token table: not a number id");
        return id - 1;
    }
    bool is_number(int id) const { return family == TaskFamily::Sorting && id >= 2 && id <= 101; }

    // increment: digits 0..9 -> 2..11, carry marker -> 12 (13 reserved)
    int digit_id(int d) const {
        require(family == TaskFamily::Increment && d >= 0 && d <= 9, "token table: bad digit");
        return d + 2;
    }
    int digit_of(int id) const {
        require(family == TaskFamily::Increment && id >= 2 && id <= 11, "token table: not a digit id");
        return id - 2;
    }
    int carry_marker_id() const {
        require(family == TaskFamily::Increment, "token table: wrong family");
        return 12;
    }
};

// -------------------------------------------------------------- examples

struct RawExample {
    std::string task;
    std::vector<int> tokens;    // full teacher sequence, unpadded
    std::vector<uint8_t> mask;  // mask[i] trains the prediction of tokens[i+1]
    int n_input = 0;            // tokens before the delimiter
};

struct EncodedExample {
    std::vector<int> tokens;  // padded to context length
    std::vector<int> targets;
    std::vector<uint8_t> mask;
    int n_input = 0;
    std::string task;
};

inline EncodedExample encode_example(const RawExample& raw, const TokenTable& table,
                                     int context_length) {
    (void)table;
    const int n = static_cast<int>(raw.tokens.size());
    if (n > context_length)
        throw std::length_error("encode_example: sequence exceeds the context length");
    require(n == static_cast<int>(raw.mask.size()), "encode_example: mask length mismatch");
    require(raw.n_input >= 1, "encode_example: n_input must be at least 1");
    EncodedExample e;
    e.task = raw.task;
    e.n_input = raw.n_input;
    e.tokens.assign(static_cast<size_t>(context_length), TokenTable::kPad);
    e.targets.assign(static_cast<size_t>(context_length), TokenTable::kPad);
    e.mask.assign(static_cast<size_t>(context_length), 0);
    std::copy(raw.tokens.begin(), raw.tokens.end(), e.tokens.begin());
    for (int i = 0; i + 1 < n; ++i) e.targets[static_cast<size_t>(i)] = raw.tokens[static_cast<size_t>(i) + 1];
    std::copy(raw.mask.begin(), raw.mask.end(), e.mask.begin());
    e.mask[static_cast<size_t>(n) - 1] = 0;  // nothing to predict after the last token
    return e;
}

// ---------------------------------------------------------------- config

struct LengthSpec {
    int short_lo = 2, short_hi = 5;
    int long_lo = 6, long_hi = 20;
    double short_mass = 0.8;
};

struct GenConfig {
    uint64_t seed = 1;
    int count = 0;
    LengthSpec lengths;             // sorting default; increment preset below
    double repetition_prob = 0.0;   // sorting: 0.1 when the repetition mode is on
    double nines_prob = 0.1;        // increment: trailing-9s branch
    int value_lo = 1, value_hi = 100;
    int context_length = 64;
};

inline GenConfig increment_gen_defaults() {
    GenConfig g;
    g.lengths = LengthSpec{2, 4, 5, 10, 0.8};
    return g;
}

inline int skewed_length_sample(Rng& rng, const LengthSpec& spec) {
    require(spec.short_lo >= 1 && spec.short_hi >= spec.short_lo && spec.long_lo > spec.short_hi &&
                spec.long_hi >= spec.long_lo && spec.short_mass > 0.0 && spec.short_mass < 1.0,
            "length spec: invalid tiers");
    if (rng.next_unit() < spec.short_mass)
        return static_cast<int>(rng.uniform_int(spec.short_lo, spec.short_hi));
    return static_cast<int>(rng.uniform_int(spec.long_lo, spec.long_hi));
}

// ------------------------------------------------------- sorting family

inline std::vector<int> sample_sort_input(Rng& rng, const GenConfig& cfg,
                                          bool* used_repetition = nullptr) {
    const int len = skewed_length_sample(rng, cfg.lengths);
    std::vector<int> values(static_cast<size_t>(len));
    const bool repeat = cfg.repetition_prob > 0.0 && rng.bernoulli(cfg.repetition_prob);
    if (used_repetition) *used_repetition = repeat;
    if (repeat) {
        // Small palette drawn without replacement, positions drawn from it
        // with replacement: non-trivial repetitions.
        const int k = std::max(1, len / 2);
        std::vector<int> palette(static_cast<size_t>(cfg.value_hi - cfg.value_lo + 1));
        for (size_t i = 0; i < palette.size(); ++i) palette[i] = cfg.value_lo + static_cast<int>(i);
        rng.shuffle(palette);
        palette.resize(static_cast<size_t>(k));
        for (auto& v : values) v = palette[static_cast<size_t>(rng.uniform_int(0, k - 1))];
    } else {
        for (auto& v : values) v = static_cast<int>(rng.uniform_int(cfg.value_lo, cfg.value_hi));
    }
    return values;
}

inline RawExample make_sort_example(const TokenTable& table, std::span<const int> values) {
    RawExample e;
    e.task = "sort";
    e.n_input = static_cast<int>(values.size());
    const std::vector<int> sorted = oracle_sort(std::vector<int>(values.begin(), values.end()));
    for (int v : values) e.tokens.push_back(table.number_id(v));
    e.tokens.push_back(TokenTable::kDelim);
    for (int v : sorted) e.tokens.push_back(table.number_id(v));
    e.mask.assign(e.tokens.size(), 0);
    // predictions of the n output tokens: delimiter position through the
    // penultimate output position
    for (size_t i = values.size(); i < values.size() + sorted.size(); ++i) e.mask[i] = 1;
    return e;
}

inline RawExample gen_sort_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    return make_sort_example(table, sample_sort_input(rng, cfg));
}

// Successor of `a` in the sorted sequence: the element right after the first
// occurrence of `a`; the delimiter when that occurrence is the last element.
inline int successor_in_sorted(std::span<const int> sorted, int a) {
    for (size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] == a)
            return i + 1 < sorted.size() ? sorted[i + 1] : -1;  // -1 encodes the delimiter
    }
    throw std::invalid_argument("successor_in_sorted: query not in sequence");
}

inline RawExample gen_successor_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    const std::vector<int> values = sample_sort_input(rng, cfg);
    const std::vector<int> sorted = oracle_sort(values);
    const int pos = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(values.size()) - 1));
    const int query = values[static_cast<size_t>(pos)];
    const int succ = successor_in_sorted(sorted, query);
    RawExample e;
    e.task = "successor";
    e.n_input = static_cast<int>(values.size());
    for (int v : values) e.tokens.push_back(table.number_id(v));
    e.tokens.push_back(TokenTable::kDelim);
    e.tokens.push_back(table.number_id(query));
    e.tokens.push_back(succ == -1 ? TokenTable::kDelim : table.number_id(succ));
    e.mask.assign(e.tokens.size(), 0);
    e.mask[values.size() + 1] = 1;  // only the answer prediction is trained
    return e;
}

// Two symbols interleaved at random; the answer is the under-represented one,
// or the delimiter when the counts tie. Ties need an even total and gaps must
// match the length's parity, so the feasible branch is taken when the drawn
// one has no valid instance.
inline RawExample gen_count_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    const int len = skewed_length_sample(rng, cfg.lengths);
    const int a = static_cast<int>(rng.uniform_int(cfg.value_lo, cfg.value_hi));
    int b = a;
    while (b == a) b = static_cast<int>(rng.uniform_int(cfg.value_lo, cfg.value_hi));
    std::vector<int> gaps;
    for (int g = 1; g <= 5 && g <= len - 2; ++g)
        if ((len - g) % 2 == 0) gaps.push_back(g);
    bool tie = rng.bernoulli(0.5);
    if (gaps.empty()) tie = true;
    std::vector<int> seq;
    int answer = -1;  // -1 encodes the delimiter
    if (tie) {
        const int m = std::max(1, len / 2);
        seq.insert(seq.end(), static_cast<size_t>(m), a);
        seq.insert(seq.end(), static_cast<size_t>(m), b);
    } else {
        const int gap = gaps[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(gaps.size()) - 1))];
        const int low = (len - gap) / 2;
        const bool a_low = rng.bernoulli(0.5);
        answer = a_low ? a : b;
        seq.insert(seq.end(), static_cast<size_t>(low), a_low ? a : b);
        seq.insert(seq.end(), static_cast<size_t>(low + gap), a_low ? b : a);
    }
    rng.shuffle(seq);
    RawExample e;
    e.task = "count";
    e.n_input = static_cast<int>(seq.size());
    for (int v : seq) e.tokens.push_back(table.number_id(v));
    e.tokens.push_back(TokenTable::kDelim);
    e.tokens.push_back(answer == -1 ? TokenTable::kDelim : table.number_id(answer));
    e.mask.assign(e.tokens.size(), 0);
    e.mask[seq.size()] = 1;
    return e;
}

// A single symbol repeated m times, then a prefix of j copies after the
// delimiter; the model fills in the remaining m-j.
inline RawExample gen_fill_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    const int len = skewed_length_sample(rng, cfg.lengths);
    const int m = static_cast<int>(rng.uniform_int(1, std::max(1, len / 2)));
    const int j = static_cast<int>(rng.uniform_int(0, m - 1));
    const int a = static_cast<int>(rng.uniform_int(cfg.value_lo, cfg.value_hi));
    RawExample e;
    e.task = "fill";
    e.n_input = m;
    e.tokens.assign(static_cast<size_t>(m), table.number_id(a));
    e.tokens.push_back(TokenTable::kDelim);
    e.tokens.insert(e.tokens.end(), static_cast<size_t>(m), table.number_id(a));
    e.mask.assign(e.tokens.size(), 0);
    for (int i = m + j; i < 2 * m; ++i) e.mask[static_cast<size_t>(i)] = 1;
    return e;
}

struct RepTestConfig {
    int i = 0;      // sequence length
    int r = 0;      // repetition factor
    int count = 0;
    int value_lo = 1, value_hi = 100;

    void validate() const {
        require(r >= 2 && i >= r, "rep test: need r >= 2 and i >= r");
        require(value_hi - value_lo + 1 >= i / r, "rep test: palette too small");
    }
};

inline std::vector<int> gen_rep_test_input(Rng& rng, const RepTestConfig& cfg) {
    cfg.validate();
    const int k = cfg.i / cfg.r;
    std::vector<int> palette(static_cast<size_t>(cfg.value_hi - cfg.value_lo + 1));
    for (size_t idx = 0; idx < palette.size(); ++idx) palette[idx] = cfg.value_lo + static_cast<int>(idx);
    rng.shuffle(palette);
    std::vector<int> values;
    for (int d = 0; d < k; ++d)
        values.insert(values.end(), static_cast<size_t>(cfg.r), palette[static_cast<size_t>(d)]);
    while (static_cast<int>(values.size()) < cfg.i)
        values.push_back(static_cast<int>(rng.uniform_int(cfg.value_lo, cfg.value_hi)));
    rng.shuffle(values);
    return values;
}

inline std::vector<RawExample> gen_rep_test_set(const RepTestConfig& cfg, uint64_t seed,
                                                const TokenTable& table) {
    std::vector<RawExample> out;
    Rng root(seed);
    for (int idx = 0; idx < cfg.count; ++idx) {
        Rng rng = root.fork(static_cast<uint64_t>(idx));
        out.push_back(make_sort_example(table, gen_rep_test_input(rng, cfg)));
    }
    return out;
}

// ------------------------------------------------------ increment family

// digits most-significant first -> digits of value+1 least-significant first,
// with the per-position carries.
struct IncrementResult {
    std::vector<int> out_digits;  // least significant first; may be one longer
    std::vector<int> carries;     // carry produced at each output position
};

inline IncrementResult increment_digits(std::span<const int> digits_msf) {
    IncrementResult r;
    int carry = 1;
    for (size_t k = digits_msf.size(); k-- > 0;) {
        const int s = digits_msf[k] + carry;
        r.out_digits.push_back(s % 10);
        carry = s / 10;
        r.carries.push_back(carry);
    }
    if (carry) {
        r.out_digits.push_back(1);
        r.carries.push_back(0);
    }
    return r;
}

inline std::vector<int> sample_increment_digits(Rng& rng, const GenConfig& cfg,
                                                bool* used_nines = nullptr) {
    const int len = skewed_length_sample(rng, cfg.lengths);
    std::vector<int> digits(static_cast<size_t>(len));
    digits[0] = static_cast<int>(rng.uniform_int(1, 9));
    for (size_t k = 1; k < digits.size(); ++k)
        digits[k] = static_cast<int>(rng.uniform_int(0, 9));
    const bool nines = rng.bernoulli(cfg.nines_prob);
    if (used_nines) *used_nines = nines;
    if (nines) {
        const int k = static_cast<int>(rng.uniform_int(1, len));
        for (int p = len - k; p < len; ++p) digits[static_cast<size_t>(p)] = 9;
    }
    return digits;
}

inline RawExample make_increment_example(const TokenTable& table, std::span<const int> digits_msf) {
    const IncrementResult inc = increment_digits(digits_msf);
    RawExample e;
    e.task = "increment";
    e.n_input = static_cast<int>(digits_msf.size());
    for (int d : digits_msf) e.tokens.push_back(table.digit_id(d));
    e.tokens.push_back(TokenTable::kDelim);
    for (int d : inc.out_digits) e.tokens.push_back(table.digit_id(d));
    e.mask.assign(e.tokens.size(), 0);
    for (size_t i = digits_msf.size(); i < digits_msf.size() + inc.out_digits.size(); ++i)
        e.mask[i] = 1;
    return e;
}

inline RawExample gen_increment_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    return make_increment_example(table, sample_increment_digits(rng, cfg));
}

// Digit, carry-marker, carry triples; the markers are given, digits and
// carries are trained.
inline RawExample make_carry_example(const TokenTable& table, std::span<const int> digits_msf) {
    const IncrementResult inc = increment_digits(digits_msf);
    RawExample e;
    e.task = "carry";
    e.n_input = static_cast<int>(digits_msf.size());
    for (int d : digits_msf) e.tokens.push_back(table.digit_id(d));
    e.tokens.push_back(TokenTable::kDelim);
    for (size_t k = 0; k < inc.out_digits.size(); ++k) {
        e.tokens.push_back(table.digit_id(inc.out_digits[k]));
        e.tokens.push_back(table.carry_marker_id());
        e.tokens.push_back(table.digit_id(inc.carries[k]));
    }
    e.mask.assign(e.tokens.size(), 0);
    for (size_t i = digits_msf.size(); i + 1 < e.tokens.size(); ++i)
        e.mask[i] = e.tokens[i + 1] != table.carry_marker_id() ? 1 : 0;
    return e;
}

inline RawExample gen_carry_example(Rng& rng, const GenConfig& cfg, const TokenTable& table) {
    return make_carry_example(table, sample_increment_digits(rng, cfg));
}

// ---------------------------------------------------------- batch helper

inline RawExample gen_example(const std::string& task, Rng& rng, const GenConfig& cfg,
                              const TokenTable& table) {
    if (task == "sort") return gen_sort_example(rng, cfg, table);
    if (task == "successor") return gen_successor_example(rng, cfg, table);
    if (task == "count") return gen_count_example(rng, cfg, table);
    if (task == "fill") return gen_fill_example(rng, cfg, table);
    if (task == "increment") return gen_increment_example(rng, cfg, table);
    if (task == "carry") return gen_carry_example(rng, cfg, table);
    throw std::invalid_argument("unknown task: " + task);
}

inline TokenTable table_for_task(const std::string& task) {
    if (task == "increment" || task == "carry") return TokenTable{TaskFamily::Increment};
    return TokenTable{TaskFamily::Sorting};
}

inline std::vector<EncodedExample> gen_dataset(const std::string& task, const GenConfig& cfg) {
    const TokenTable table = table_for_task(task);
    std::vector<EncodedExample> out;
    out.reserve(static_cast<size_t>(cfg.count));
    Rng root(cfg.seed);
    for (int idx = 0; idx < cfg.count; ++idx) {
        Rng rng = root.fork(static_cast<uint64_t>(idx));
        out.push_back(encode_example(gen_example(task, rng, cfg, table), table, cfg.context_length));
    }
    return out;
}

// gen_sort_dataset(cfg, repetition_mode): the sorting recipe with the
// repetition branch toggled explicitly.
inline std::vector<EncodedExample> gen_sort_dataset(GenConfig cfg, bool repetition_mode) {
    cfg.repetition_prob = repetition_mode ? 0.1 : 0.0;
    return gen_dataset("sort", cfg);
}

// -------------------------------------------------------------- file I/O

inline constexpr const char* kDatasetFormat = "lg-dataset/1";

struct DatasetHeader {
    std::string format = kDatasetFormat;
    std::string task;
    std::string table_version;
    uint64_t seed = 0;
    int count = 0;
    int context_length = 0;
    nlohmann::json config;  // generator settings, echoed verbatim
};

inline nlohmann::json gen_config_json(const GenConfig& cfg) {
    return nlohmann::json{{"seed", cfg.seed},
                          {"count", cfg.count},
                          {"short_lo", cfg.lengths.short_lo},
                          {"short_hi", cfg.lengths.short_hi},
                          {"long_lo", cfg.lengths.long_lo},
                          {"long_hi", cfg.lengths.long_hi},
                          {"short_mass", cfg.lengths.short_mass},
                          {"repetition_prob", cfg.repetition_prob},
                          {"nines_prob", cfg.nines_prob},
                          {"value_lo", cfg.value_lo},
                          {"value_hi", cfg.value_hi},
                          {"context_length", cfg.context_length}};
}

inline void write_dataset(const std::string& path, const DatasetHeader& header,
                          std::span<const EncodedExample> examples) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "write_dataset: cannot open " + path);
    nlohmann::json h{{"format", header.format},       {"task", header.task},
                     {"table", header.table_version}, {"seed", header.seed},
                     {"count", header.count},         {"context_length", header.context_length},
                     {"config", header.config}};
    os << h.dump() << '\n';
    for (const auto& e : examples) {
        // records are stored unpadded; the header's context length restores
        // the padding on load
        int used = static_cast<int>(e.tokens.size());
        while (used > 1 && e.tokens[static_cast<size_t>(used) - 1] == TokenTable::kPad) --used;
        nlohmann::json rec{{"task", e.task}, {"n", e.n_input}};
        rec["tokens"] = std::vector<int>(e.tokens.begin(), e.tokens.begin() + used);
        rec["targets"] = std::vector<int>(e.targets.begin(), e.targets.begin() + used);
        rec["mask"] = std::vector<int>(e.mask.begin(), e.mask.begin() + used);
        os << rec.dump() << '\n';
    }
    require(os.good(), "write_dataset: write failed for " + path);
}

struct Dataset {
    DatasetHeader header;
    std::vector<EncodedExample> examples;
};

inline Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("read_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_dataset: empty file");
    nlohmann::json h = nlohmann::json::parse(line);
    Dataset ds;
    ds.header.format = h.at("format").get<std::string>();
    if (ds.header.format != kDatasetFormat)
        throw std::runtime_error("read_dataset: unsupported format " + ds.header.format);
    ds.header.task = h.at("task").get<std::string>();
    ds.header.table_version = h.at("table").get<std::string>();
    ds.header.seed = h.at("seed").get<uint64_t>();
    ds.header.count = h.at("count").get<int>();
    ds.header.context_length = h.at("context_length").get<int>();
    ds.header.config = h.value("config", nlohmann::json::object());
    const size_t ctx = static_cast<size_t>(ds.header.context_length);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        EncodedExample e;
        e.task = rec.at("task").get<std::string>();
        e.n_input = rec.at("n").get<int>();
        auto tokens = rec.at("tokens").get<std::vector<int>>();
        auto targets = rec.at("targets").get<std::vector<int>>();
        auto mask = rec.at("mask").get<std::vector<int>>();
        if (tokens.size() != targets.size() || tokens.size() != mask.size() || tokens.size() > ctx)
            throw std::runtime_error("read_dataset: malformed record");
        e.tokens.assign(ctx, TokenTable::kPad);
        e.targets.assign(ctx, TokenTable::kPad);
        e.mask.assign(ctx, 0);
        std::copy(tokens.begin(), tokens.end(), e.tokens.begin());
        std::copy(targets.begin(), targets.end(), e.targets.begin());
        for (size_t i = 0; i < mask.size(); ++i) e.mask[i] = static_cast<uint8_t>(mask[i]);
        ds.examples.push_back(std::move(e));
    }
    if (static_cast<int>(ds.examples.size()) != ds.header.count)
        throw std::runtime_error("read_dataset: record count does not match header");
    return ds;
}

}  // namespace lglab
