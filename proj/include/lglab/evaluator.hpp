#pragma once

// Greedy-decode evaluation across lengths and test distributions: full
// sequence accuracy and mean token-level edit distance, reported per length
// tag and emitted as CSV.

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lglab/construction.hpp"
#include "lglab/datagen.hpp"
#include "lglab/model.hpp"
#include "lglab/parallel.hpp"

namespace lglab {

// Levenshtein distance with unit insert/delete/substitute.
inline int edit_distance(std::span<const int> a, std::span<const int> b) {
    const size_t n = b.size();
    std::vector<int> row(n + 1);
    for (size_t j = 0; j <= n; ++j) row[j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        int diag = row[0];
        row[0] = static_cast<int>(i);
        for (size_t j = 1; j <= n; ++j) {
            const int subst = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            diag = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, subst});
        }
    }
    return row[n];
}

// prompt tokens (ending with the delimiter) -> decoded output tokens
using DecodeFn = std::function<std::vector<int>(const std::vector<int>&, int)>;

struct EvalCase {
    std::vector<int> prompt;  // token ids, ends with the delimiter
    std::vector<int> target;  // expected output token ids
};

struct EvalRow {
    std::string tag;
    int count = 0;
    double accuracy = 0.0;
    double mean_edit_distance = 0.0;
};

struct EvalReport {
    std::vector<std::string> comments;  // emitted as leading '#' lines
    std::vector<EvalRow> rows;

    void to_csv(std::ostream& os) const {
        for (const auto& c : comments) os << "# " << c << '\n';
        os << "tag,n_examples,full_seq_acc,mean_edit_distance\n";
        char buf[128];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f\n", r.tag.c_str(), r.count,
                          r.accuracy, r.mean_edit_distance);
            os << buf;
        }
    }
    void to_csv_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        require(os.good(), "eval report: cannot open " + path);
        to_csv(os);
    }
};

struct CaseOutcome {
    int exact = 0;
    int64_t edit_total = 0;
};

inline CaseOutcome run_cases(const DecodeFn& decode, std::span<const EvalCase> cases,
                             int threads) {
    std::vector<CaseOutcome> slots(cases.size());
    parallel_for(static_cast<int64_t>(cases.size()), threads, [&](int64_t i) {
        const EvalCase& c = cases[static_cast<size_t>(i)];
        const std::vector<int> out = decode(c.prompt, static_cast<int>(c.target.size()));
        slots[static_cast<size_t>(i)].exact = out == c.target ? 1 : 0;
        slots[static_cast<size_t>(i)].edit_total = edit_distance(out, c.target);
    });
    CaseOutcome total;
    for (const auto& s : slots) {
        total.exact += s.exact;
        total.edit_total += s.edit_total;
    }
    return total;
}

inline double full_sequence_accuracy(const DecodeFn& decode, std::span<const EvalCase> cases,
                                     int threads = 1) {
    require(!cases.empty(), "full_sequence_accuracy: no cases");
    return static_cast<double>(run_cases(decode, cases, threads).exact) /
           static_cast<double>(cases.size());
}

// ------------------------------------------------------------ case makers

inline EvalCase sort_case(const TokenTable& table, std::span<const int> values) {
    EvalCase c;
    for (int v : values) c.prompt.push_back(table.number_id(v));
    c.prompt.push_back(TokenTable::kDelim);
    for (int v : oracle_sort(std::vector<int>(values.begin(), values.end())))
        c.target.push_back(table.number_id(v));
    return c;
}

inline std::vector<EvalCase> uniform_sort_cases(const TokenTable& table, int length, int count,
                                                uint64_t seed, int value_lo, int value_hi) {
    std::vector<EvalCase> cases;
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Rng rng = root.fork(static_cast<uint64_t>(i));
        std::vector<int> values(static_cast<size_t>(length));
        for (auto& v : values) v = static_cast<int>(rng.uniform_int(value_lo, value_hi));
        cases.push_back(sort_case(table, values));
    }
    return cases;
}

inline std::vector<EvalCase> rep_sort_cases(const TokenTable& table, const RepTestConfig& cfg,
                                            uint64_t seed) {
    std::vector<EvalCase> cases;
    Rng root(seed);
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng = root.fork(static_cast<uint64_t>(i));
        cases.push_back(sort_case(table, gen_rep_test_input(rng, cfg)));
    }
    return cases;
}

struct LengthSuite {
    std::string tag;  // "7" or "rep(10,3)"
    std::vector<EvalCase> cases;
};

// One report row per requested length / rep tag.
inline EvalReport evaluate_suites(const DecodeFn& decode, std::span<const LengthSuite> suites,
                                  int threads = 1) {
    EvalReport report;
    for (const auto& s : suites) {
        require(!s.cases.empty(), "evaluate: empty suite " + s.tag);
        const CaseOutcome o = run_cases(decode, s.cases, threads);
        EvalRow row;
        row.tag = s.tag;
        row.count = static_cast<int>(s.cases.size());
        row.accuracy = static_cast<double>(o.exact) / row.count;
        row.mean_edit_distance = static_cast<double>(o.edit_total) / row.count;
        report.rows.push_back(row);
    }
    return report;
}

inline EvalReport evaluate_lengths(const DecodeFn& decode, const TokenTable& table,
                                   std::span<const int> lengths, int per_length, uint64_t seed,
                                   int value_lo, int value_hi, int threads = 1) {
    std::vector<LengthSuite> suites;
    for (size_t k = 0; k < lengths.size(); ++k) {
        LengthSuite s;
        s.tag = std::to_string(lengths[k]);
        s.cases = uniform_sort_cases(table, lengths[k], per_length, seed + k, value_lo, value_hi);
        suites.push_back(std::move(s));
    }
    return evaluate_suites(decode, suites, threads);
}

inline std::vector<EvalCase> uniform_increment_cases(const TokenTable& table, int length,
                                                     int count, uint64_t seed) {
    std::vector<EvalCase> cases;
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Rng rng = root.fork(static_cast<uint64_t>(i));
        std::vector<int> digits(static_cast<size_t>(length));
        digits[0] = static_cast<int>(rng.uniform_int(1, 9));
        for (size_t k = 1; k < digits.size(); ++k)
            digits[k] = static_cast<int>(rng.uniform_int(0, 9));
        EvalCase c;
        for (int d : digits) c.prompt.push_back(table.digit_id(d));
        c.prompt.push_back(TokenTable::kDelim);
        for (int d : increment_digits(digits).out_digits) c.target.push_back(table.digit_id(d));
        cases.push_back(std::move(c));
    }
    return cases;
}

// Reversed-digit outputs; an overflow case is only correct when the extra
// leading digit is produced.
inline EvalReport evaluate_increment(const DecodeFn& decode, std::span<const int> lengths,
                                     int per_length, uint64_t seed, int threads = 1) {
    const TokenTable table{TaskFamily::Increment};
    std::vector<LengthSuite> suites;
    for (size_t k = 0; k < lengths.size(); ++k) {
        LengthSuite s;
        s.tag = std::to_string(lengths[k]);
        s.cases = uniform_increment_cases(table, lengths[k], per_length, seed + k);
        suites.push_back(std::move(s));
    }
    return evaluate_suites(decode, suites, threads);
}

// --------------------------------------------------------------- decoders

template <typename T>
DecodeFn model_decoder(const BasicModel<T>& m) {
    return [&m](const std::vector<int>& prompt, int n_out) {
        return greedy_decode(m, prompt, n_out);
    };
}

// Sorting-table prompts routed through the exact construction; a model is
// built per instance length on the fly.
inline DecodeFn construction_decoder(int q, const TokenTable& table,
                                     bool doubled_layernorm = false) {
    return [q, table, doubled_layernorm](const std::vector<int>& prompt, int n_out) {
        require(!prompt.empty() && prompt.back() == TokenTable::kDelim,
                "construction decoder: prompt must end with the delimiter");
        std::vector<int> values;
        for (size_t i = 0; i + 1 < prompt.size(); ++i)
            values.push_back(table.number_of(prompt[i]));
        require(n_out == static_cast<int>(values.size()),
                "construction decoder: output length must equal the input length");
        ConstructionModel m = build_construction(
            {.q = q, .n = static_cast<int>(values.size()), .doubled_layernorm = doubled_layernorm});
        std::vector<int> out;
        for (int v : construction_sort(m, values)) out.push_back(table.number_id(v));
        return out;
    };
}

inline DecodeFn oracle_sort_decoder(const TokenTable& table) {
    return [table](const std::vector<int>& prompt, int n_out) {
        std::vector<int> values;
        for (size_t i = 0; i + 1 < prompt.size(); ++i)
            values.push_back(table.number_of(prompt[i]));
        (void)n_out;
        std::vector<int> out;
        for (int v : oracle_sort(values)) out.push_back(table.number_id(v));
        return out;
    };
}

inline DecodeFn oracle_increment_decoder(const TokenTable& table) {
    return [table](const std::vector<int>& prompt, int n_out) {
        std::vector<int> digits;
        for (size_t i = 0; i + 1 < prompt.size(); ++i)
            digits.push_back(table.digit_of(prompt[i]));
        (void)n_out;
        std::vector<int> out;
        for (int d : increment_digits(digits).out_digits) out.push_back(table.digit_id(d));
        return out;
    };
}

}  // namespace lglab
