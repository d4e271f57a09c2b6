#pragma once

// Embedding-basis probing: encoder basis = rows of the input embedding
// table, decoder basis = columns of the main classification head. Activation
// rows projected onto these bases expose the copy / min / identity+successor
// mechanisms; two accuracy metrics quantify them on any traced model.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lglab/construction.hpp"
#include "lglab/model.hpp"
#include "lglab/parallel.hpp"
#include "lglab/trace.hpp"

namespace lglab {

struct BasisPair {
    Tensor encoder;  // one row per symbol
    Tensor decoder;
    int symbol_base = 0;  // label of row 0 in reports
};

inline BasisPair extract_bases(const Model& m) {
    BasisPair b;
    b.encoder = m.embed;
    b.decoder = transpose(m.w_main);  // rows = head columns
    return b;
}

// The construction's decode directions double as its decoder basis; encoder
// rows are the token embeddings. Rows are indexed by symbol-1.
inline BasisPair construction_bases(const ConstructionModel& m) {
    const BasisAtlas& at = m.atlas;
    BasisPair b;
    b.symbol_base = 1;
    b.encoder = Tensor({m.cfg.q, at.dim()});
    b.decoder = Tensor({m.cfg.q, at.dim()});
    for (int s = 1; s <= m.cfg.q; ++s) {
        const std::vector<double> enc = at.encode(s);
        std::copy(enc.begin(), enc.end(), b.encoder.row(s - 1));
        std::span<double> dec(b.decoder.row(s - 1), static_cast<size_t>(at.dim()));
        at.add_to(dec, Family::Ident, s, 1.0);
        at.add_to(dec, Family::Cand, s, 1.0);
    }
    return b;
}

struct OrthoReport {
    int count = 0;
    double max_offdiag_cos = 0.0;
    double min_len = 0.0;
    double max_len = 0.0;
};

inline OrthoReport orthogonality_report(const Tensor& family) {
    require(family.rank() == 2 && family.rows() >= 2, "orthogonality_report: need at least 2 vectors");
    OrthoReport r;
    r.count = family.rows();
    std::vector<double> len(static_cast<size_t>(family.rows()));
    for (int i = 0; i < family.rows(); ++i) {
        double sq = 0.0;
        for (int c = 0; c < family.cols(); ++c) sq += family.at(i, c) * family.at(i, c);
        len[static_cast<size_t>(i)] = std::sqrt(sq);
    }
    r.min_len = *std::min_element(len.begin(), len.end());
    r.max_len = *std::max_element(len.begin(), len.end());
    for (int i = 0; i < family.rows(); ++i) {
        for (int j = i + 1; j < family.rows(); ++j) {
            double d = 0.0;
            for (int c = 0; c < family.cols(); ++c) d += family.at(i, c) * family.at(j, c);
            const double denom = len[static_cast<size_t>(i)] * len[static_cast<size_t>(j)];
            const double cos = denom > 0.0 ? std::abs(d) / denom : (d == 0.0 ? 0.0 : 1.0);
            r.max_offdiag_cos = std::max(r.max_offdiag_cos, cos);
        }
    }
    return r;
}

enum class BasisKind { Encoder, Decoder };

struct ProjectionProfile {
    int position = 0;
    int depth = 0;
    TraceStage stage = TraceStage::PreMlp;
    BasisKind basis = BasisKind::Encoder;
    int symbol_base = 0;
    std::vector<double> values;  // one per basis vector
};

inline ProjectionProfile project_trace(const ActivationTrace& trace, const BasisPair& bases,
                                       int position, int depth, TraceStage stage,
                                       BasisKind basis) {
    require(depth >= 0 && depth < trace.depth, "project_trace: depth out of range");
    require(position >= 0 && position < trace.positions, "project_trace: position out of range");
    const Tensor& fam = basis == BasisKind::Encoder ? bases.encoder : bases.decoder;
    require(fam.cols() == trace.width, "project_trace: basis/trace width mismatch");
    const double* row = trace.row(depth, stage, position);
    ProjectionProfile p;
    p.position = position;
    p.depth = depth;
    p.stage = stage;
    p.basis = basis;
    p.symbol_base = bases.symbol_base;
    p.values.resize(static_cast<size_t>(fam.rows()));
    for (int s = 0; s < fam.rows(); ++s) {
        double d = 0.0;
        const double* f = fam.row(s);
        for (int c = 0; c < fam.cols(); ++c) d += row[c] * f[c];
        p.values[static_cast<size_t>(s)] = d;
    }
    return p;
}

// ---------------------------------------------------------- probe targets

// A model that can run a teacher-forced sorting trace: input values, then the
// delimiter, then all but the last sorted output.
struct ProbeTarget {
    BasisPair bases;
    std::function<ActivationTrace(std::span<const int> values)> traced_sort;
    std::function<int(int value)> row_of_value;  // value -> basis row
};

inline ProbeTarget probe_construction(const ConstructionModel& m) {
    ProbeTarget t;
    t.bases = construction_bases(m);
    t.traced_sort = [&m](std::span<const int> values) {
        require(static_cast<int>(values.size()) == m.cfg.n, "probe: length must match cfg.n");
        std::vector<int> tokens(values.begin(), values.end());
        tokens.push_back(kDelimiter);
        const std::vector<int> sorted = oracle_sort(std::vector<int>(values.begin(), values.end()));
        tokens.insert(tokens.end(), sorted.begin(), sorted.end() - 1);
        return *construction_forward(m, tokens, true).trace;
    };
    t.row_of_value = [](int v) { return v - 1; };
    return t;
}

inline ProbeTarget probe_model(const Model& m, const TokenTable& table) {
    ProbeTarget t;
    t.bases = extract_bases(m);
    t.traced_sort = [&m, table](std::span<const int> values) {
        std::vector<int> tokens;
        for (int v : values) tokens.push_back(table.number_id(v));
        tokens.push_back(TokenTable::kDelim);
        const std::vector<int> sorted = oracle_sort(std::vector<int>(values.begin(), values.end()));
        for (size_t i = 0; i + 1 < sorted.size(); ++i) tokens.push_back(table.number_id(sorted[i]));
        return *forward(m, tokens, static_cast<int>(values.size()), HeadId::Main, true).trace;
    };
    t.row_of_value = [table](int v) { return table.number_id(v); };
    return t;
}

namespace detail {

inline void top2_rows(std::span<const double> values, int& best, int& second) {
    best = 0;
    second = -1;
    double bv = values[0], sv = -1e300;
    for (int s = 1; s < static_cast<int>(values.size()); ++s) {
        const double v = values[static_cast<size_t>(s)];
        if (v > bv) {
            second = best;
            sv = bv;
            best = s;
            bv = v;
        } else if (v > sv) {
            second = s;
            sv = v;
        }
    }
}

}  // namespace detail

// Fraction of inputs whose delimiter-row decoder projection peaks on the true
// minimum after the configured block's attention.
inline double min_finding_accuracy(const ProbeTarget& target,
                                   std::span<const std::vector<int>> inputs, int depth_index = 0,
                                   int threads = 1) {
    require(!inputs.empty(), "min_finding_accuracy: no inputs");
    std::vector<int> hits(inputs.size(), 0);
    parallel_for(static_cast<int64_t>(inputs.size()), threads, [&](int64_t i) {
        const std::vector<int>& values = inputs[static_cast<size_t>(i)];
        const ActivationTrace trace = target.traced_sort(values);
        const int n = static_cast<int>(values.size());
        ProjectionProfile p = project_trace(trace, target.bases, n, depth_index,
                                            TraceStage::PreMlp, BasisKind::Decoder);
        int best, second;
        detail::top2_rows(p.values, best, second);
        const int want = target.row_of_value(*std::min_element(values.begin(), values.end()));
        hits[static_cast<size_t>(i)] = best == want ? 1 : 0;
    });
    int total = 0;
    for (int h : hits) total += h;
    return static_cast<double>(total) / static_cast<double>(inputs.size());
}

// Fraction of output positions whose top-2 decoder projections after the
// configured block's attention name the current symbol and its successor in
// the sorted output (top-1 when they coincide).
inline double identity_successor_accuracy(const ProbeTarget& target,
                                          std::span<const std::vector<int>> inputs,
                                          int depth_index = 1, int threads = 1) {
    require(!inputs.empty(), "identity_successor_accuracy: no inputs");
    std::vector<std::pair<int, int>> perinput(inputs.size(), {0, 0});  // hits, positions
    parallel_for(static_cast<int64_t>(inputs.size()), threads, [&](int64_t idx) {
        const std::vector<int>& values = inputs[static_cast<size_t>(idx)];
        const ActivationTrace trace = target.traced_sort(values);
        const int n = static_cast<int>(values.size());
        const std::vector<int> sorted = oracle_sort(values);
        int hits = 0, count = 0;
        for (int i = n + 1; i < trace.positions; ++i) {
            const int current = sorted[static_cast<size_t>(i - n - 1)];
            const int next = sorted[static_cast<size_t>(i - n)];
            ProjectionProfile p = project_trace(trace, target.bases, i, depth_index,
                                                TraceStage::PreMlp, BasisKind::Decoder);
            int best, second;
            detail::top2_rows(p.values, best, second);
            const int want_cur = target.row_of_value(current);
            const int want_next = target.row_of_value(next);
            bool ok;
            if (current == next) {
                ok = best == want_cur;
            } else {
                ok = (best == want_cur && second == want_next) ||
                     (best == want_next && second == want_cur);
            }
            hits += ok ? 1 : 0;
            ++count;
        }
        perinput[static_cast<size_t>(idx)] = {hits, count};
    });
    int hits = 0, count = 0;
    for (auto [h, c] : perinput) {
        hits += h;
        count += c;
    }
    require(count > 0, "identity_successor_accuracy: no output positions");
    return static_cast<double>(hits) / static_cast<double>(count);
}

// ----------------------------------------------------------------- output

inline void emit_projection_csv(std::ostream& os, std::span<const ProjectionProfile> profiles) {
    os << "position,depth,stage,basis,symbol,value\n";
    char buf[96];
    for (const auto& p : profiles) {
        for (size_t s = 0; s < p.values.size(); ++s) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%s,%s,%d,%.12g\n", p.position, p.depth,
                          p.stage == TraceStage::PreMlp ? "pre" : "post",
                          p.basis == BasisKind::Encoder ? "encoder" : "decoder",
                          static_cast<int>(s) + p.symbol_base, p.values[s]);
            os << buf;
        }
    }
}

inline void write_svg_bars(const std::string& path, const ProjectionProfile& p) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "write_svg_bars: cannot open " + path);
    const int n = static_cast<int>(p.values.size());
    const double w = std::max(320.0, n * 6.0), h = 200.0, pad = 20.0;
    double vmax = 1e-12;
    for (double v : p.values) vmax = std::max(vmax, std::abs(v));
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\">\n";
    os << "<text x=\"4\" y=\"14\" font-size=\"11\">pos " << p.position << " depth " << p.depth
       << (p.stage == TraceStage::PreMlp ? " pre" : " post")
       << (p.basis == BasisKind::Encoder ? " encoder" : " decoder") << "</text>\n";
    const double mid = h / 2.0, bw = (w - 2 * pad) / n;
    os << "<line x1=\"" << pad << "\" y1=\"" << mid << "\" x2=\"" << w - pad << "\" y2=\"" << mid
       << "\" stroke=\"#999\"/>\n";
    for (int s = 0; s < n; ++s) {
        const double v = p.values[static_cast<size_t>(s)] / vmax * (mid - pad);
        const double x = pad + s * bw;
        const double y = v >= 0 ? mid - v : mid;
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bw * 0.8 << "\" height=\""
           << std::abs(v) << "\" fill=\"#2166ac\"/>\n";
    }
    os << "</svg>\n";
}

inline void emit_projection_report(std::span<const ProjectionProfile> profiles,
                                   const std::string& csv_path, bool svg = false,
                                   const std::string& svg_dir = {}) {
    std::ofstream os(csv_path, std::ios::binary);
    require(os.good(), "emit_projection_report: cannot open " + csv_path);
    emit_projection_csv(os, profiles);
    if (svg) {
        for (size_t k = 0; k < profiles.size(); ++k) {
            const auto& p = profiles[k];
            const std::string name = svg_dir + "/profile_p" + std::to_string(p.position) + "_d" +
                                     std::to_string(p.depth) +
                                     (p.stage == TraceStage::PreMlp ? "_pre" : "_post") +
                                     (p.basis == BasisKind::Encoder ? "_enc" : "_dec") + ".svg";
            write_svg_bars(name, p);
        }
    }
}

}  // namespace lglab
