#include <catch2/catch_amalgamated.hpp>

#include "lglab/construction.hpp"
#include "lglab/rng.hpp"

using namespace lglab;

namespace {

std::vector<double> basis_vec(const BasisAtlas& at, Family f, int s, double coeff = 1.0) {
    std::vector<double> v(static_cast<size_t>(at.dim()), 0.0);
    at.add_to(v, f, s, coeff);
    return v;
}

std::vector<int> random_seq(Rng& rng, int n, int q) {
    std::vector<int> s(static_cast<size_t>(n));
    for (auto& x : s) x = static_cast<int>(rng.uniform_int(1, q));
    return s;
}

std::vector<int> forced_tokens(std::span<const int> seq) {
    std::vector<int> toks(seq.begin(), seq.end());
    toks.push_back(kDelimiter);
    const std::vector<int> sorted = oracle_sort(std::vector<int>(seq.begin(), seq.end()));
    toks.insert(toks.end(), sorted.begin(), sorted.end() - 1);
    return toks;
}

}  // namespace

TEST_CASE("oracle sort basics") {
    CHECK(oracle_sort({3, 1, 2}) == std::vector<int>{1, 2, 3});
    CHECK(oracle_sort({}) == std::vector<int>{});
    CHECK(oracle_sort({2, 2, 1}) == std::vector<int>{1, 2, 2});
}

TEST_CASE("count occurrences") {
    std::vector<int> seq{2, 1, 2};
    CHECK(count_occurrences(seq, 2, 0, 2) == 2);
    CHECK(count_occurrences(seq, 3, 0, 2) == 0);
    std::vector<int> ones{1, 1, 1, 1};
    CHECK(count_occurrences(ones, 1, 1, 2) == 2);
    CHECK_THROWS_AS(count_occurrences(seq, 1, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(count_occurrences(seq, 1, 0, 3), std::invalid_argument);
}

TEST_CASE("atlas layout") {
    BasisAtlas at = build_atlas(2);
    CHECK(at.dim() == 18);
    std::vector<bool> seen(static_cast<size_t>(at.dim()), false);
    for (Family f : {Family::Sym, Family::Copy, Family::Side, Family::Ident, Family::Sym2,
                     Family::Cand}) {
        for (int s = 0; s <= 2; ++s) {
            const int c = at.coord(f, s);
            REQUIRE(c >= 0);
            REQUIRE(c < at.dim());
            CHECK_FALSE(seen[static_cast<size_t>(c)]);
            seen[static_cast<size_t>(c)] = true;
        }
    }
    CHECK_THROWS_AS(build_atlas(1), std::invalid_argument);
}

TEST_CASE("token encodings are orthogonal with squared length two") {
    BasisAtlas at = build_atlas(5);
    for (int a = 0; a <= 5; ++a) {
        const auto ea = at.encode(a);
        for (int b = 0; b <= 5; ++b) {
            const auto eb = at.encode(b);
            double d = 0;
            for (size_t i = 0; i < ea.size(); ++i) d += ea[i] * eb[i];
            CHECK(d == (a == b ? 2.0 : 0.0));
        }
    }
}

TEST_CASE("block-1 head-1 query scores: self match 1, delimiter boost C") {
    ConstructionModel m = build_construction({.q = 4, .n = 3});
    const BasisAtlas& at = m.atlas;
    const ConstructionHead& head = m.blocks[0].heads[0];
    const int w = head.width;
    const int a = 2;
    std::vector<double> enc = at.encode(a);
    std::span<const double> slice(enc.data() + head.col0, static_cast<size_t>(w));
    std::vector<double> query(static_cast<size_t>(w)), key(static_cast<size_t>(w));
    head.query.matvec(slice, std::span<double>(query));

    std::vector<double> enc_delim = at.encode(kDelimiter);
    head.key.matvec(std::span<const double>(enc_delim.data() + head.col0, static_cast<size_t>(w)),
                    std::span<double>(key));
    double score_delim = 0, score_self = 0;
    for (int i = 0; i < w; ++i) score_delim += query[static_cast<size_t>(i)] * key[static_cast<size_t>(i)];
    head.key.matvec(slice, std::span<double>(key));
    for (int i = 0; i < w; ++i) score_self += query[static_cast<size_t>(i)] * key[static_cast<size_t>(i)];
    CHECK(score_delim == m.cfg.sharpness);
    CHECK(score_self == 1.0);
}

TEST_CASE("block-1 MLP rewrites the delimiter copy marker") {
    ConstructionModel m = build_construction({.q = 4, .n = 3});
    const BasisAtlas& at = m.atlas;
    const int b = 3;
    std::vector<double> x(static_cast<size_t>(at.dim()), 0.0);
    at.add_to(x, Family::Sym, b, 1.0);
    at.add_to(x, Family::Copy, kDelimiter, 1.0);
    std::vector<double> hidden(m.blocks[0].mlp.b1.size());
    m.blocks[0].mlp.w1.matvec(x, std::span<double>(hidden));
    for (size_t k = 0; k < hidden.size(); ++k) hidden[k] = relu(hidden[k] + m.blocks[0].mlp.b1[k]);
    std::vector<double> delta(static_cast<size_t>(at.dim()), 0.0);
    m.blocks[0].mlp.w2.matvec_add(hidden, std::span<double>(delta));
    CHECK(delta[static_cast<size_t>(at.coord(Family::Side, b))] == -1.0);
    CHECK(delta[static_cast<size_t>(at.coord(Family::Copy, kDelimiter))] == -1.0);
    for (int s = 1; s <= 4; ++s) {
        if (s == b) continue;
        CHECK(delta[static_cast<size_t>(at.coord(Family::Side, s))] == 0.0);
    }
}

TEST_CASE("block-2 MLP nullifies the candidate spike of output-side tokens") {
    ConstructionModel m = build_construction({.q = 4, .n = 3});
    const BasisAtlas& at = m.atlas;
    const int b = 2;
    std::vector<double> x(static_cast<size_t>(at.dim()), 0.0);
    at.add_to(x, Family::Side, b, -1.0);
    std::vector<double> hidden(m.blocks[1].mlp.b1.size());
    m.blocks[1].mlp.w1.matvec(x, std::span<double>(hidden));
    for (size_t k = 0; k < hidden.size(); ++k) hidden[k] = relu(hidden[k] + m.blocks[1].mlp.b1[k]);
    std::vector<double> delta(static_cast<size_t>(at.dim()), 0.0);
    m.blocks[1].mlp.w2.matvec_add(hidden, std::span<double>(delta));
    CHECK(delta[static_cast<size_t>(at.coord(Family::Cand, b))] == -1.0);
    // positive side markers (input tokens) leave the MLP inert
    std::vector<double> xp = basis_vec(at, Family::Side, b, 1.0);
    m.blocks[1].mlp.w1.matvec(xp, std::span<double>(hidden));
    for (size_t k = 0; k < hidden.size(); ++k) hidden[k] = relu(hidden[k] + m.blocks[1].mlp.b1[k]);
    std::fill(delta.begin(), delta.end(), 0.0);
    m.blocks[1].mlp.w2.matvec_add(hidden, std::span<double>(delta));
    for (double v : delta) CHECK(v == 0.0);
}

TEST_CASE("forward predicts the minimum at the delimiter") {
    ConstructionModel m = build_construction({.q = 100, .n = 5});
    std::vector<int> toks{5, 17, 43, 78, 92, kDelimiter};
    auto res = construction_forward(m, toks);
    CHECK(res.prediction == 5);
}

TEST_CASE("forward handles duplicates ordinally") {
    ConstructionModel m = build_construction({.q = 3, .n = 3});
    CHECK(construction_forward(m, std::vector<int>{2, 1, 2, kDelimiter, 1}).prediction == 2);
    CHECK(construction_forward(m, std::vector<int>{2, 1, 2, kDelimiter, 1, 2}).prediction == 2);
}

TEST_CASE("forward validates the token layout") {
    ConstructionModel m = build_construction({.q = 3, .n = 3});
    CHECK_THROWS_AS(construction_forward(m, std::vector<int>{1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(construction_forward(m, std::vector<int>{1, 2, kDelimiter, 1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(construction_forward(m, std::vector<int>{1, 9, 3, kDelimiter}),
                    std::invalid_argument);
}

TEST_CASE("construction sort small cases") {
    ConstructionModel m3 = build_construction({.q = 10, .n = 3});
    CHECK(construction_sort(m3, std::vector<int>{3, 1, 2}) == std::vector<int>{1, 2, 3});
    ConstructionModel m2 = build_construction({.q = 10, .n = 2});
    CHECK(construction_sort(m2, std::vector<int>{7, 7}) == std::vector<int>{7, 7});
    CHECK_THROWS_AS(construction_sort(m3, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST_CASE("construction sort is exhaustive-exact for short sequences") {
    for (int n = 2; n <= 3; ++n) {
        ConstructionModel m = build_construction({.q = 10, .n = n});
        std::vector<int> seq(static_cast<size_t>(n), 1);
        while (true) {
            REQUIRE(construction_sort(m, seq) == oracle_sort(seq));
            int k = n - 1;
            while (k >= 0 && seq[static_cast<size_t>(k)] == 10) {
                seq[static_cast<size_t>(k)] = 1;
                --k;
            }
            if (k < 0) break;
            seq[static_cast<size_t>(k)]++;
        }
    }
}

TEST_CASE("construction sort matches the oracle on random length-100 sequences") {
    ConstructionModel m = build_construction({.q = 100, .n = 100});
    Rng rng(1234);
    for (int rep = 0; rep < 5; ++rep) {
        Rng r = rng.fork(static_cast<uint64_t>(rep));
        const std::vector<int> seq = random_seq(r, 100, 100);
        CHECK(construction_sort(m, seq) == oracle_sort(seq));
    }
}

TEST_CASE("duplicate multiplicities are preserved") {
    ConstructionModel m = build_construction({.q = 10, .n = 6});
    Rng rng(5150);
    for (int rep = 0; rep < 20; ++rep) {
        Rng r = rng.fork(static_cast<uint64_t>(rep));
        std::vector<int> seq = random_seq(r, 6, 4);  // small alphabet forces repeats
        const std::vector<int> out = construction_sort(m, seq);
        for (int a = 1; a <= 4; ++a)
            CHECK(count_occurrences(out, a, 0, 5) == count_occurrences(seq, a, 0, 5));
    }
}

TEST_CASE("stage checks pass with the documented winners") {
    ConstructionModel m = build_construction({.q = 100, .n = 5});
    std::vector<int> seq{5, 17, 43, 78, 92};
    const std::vector<int> toks = forced_tokens(seq);
    auto fw = construction_forward(m, toks, true);
    REQUIRE(fw.trace.has_value());
    StageReport rep = verify_stages(*fw.trace, toks, m);
    CHECK(rep.pass);
    bool saw_min = false, saw_identity = false;
    for (const auto& c : rep.checks) {
        if (c.kind == StageKind::Copy) CHECK(c.winner == seq[static_cast<size_t>(c.position)]);
        if (c.kind == StageKind::Min) {
            saw_min = true;
            CHECK(c.winner == 5);
        }
        if (c.kind == StageKind::IdentitySuccessor && c.position == 8) {
            saw_identity = true;
            // output position holding 43: spikes on 43 and its successor 78
            CHECK(((c.winner == 43 && c.winner2 == 78) || (c.winner == 78 && c.winner2 == 43)));
        }
    }
    CHECK(saw_min);
    CHECK(saw_identity);
}

TEST_CASE("stage report rejects mismatched traces") {
    ConstructionModel m = build_construction({.q = 10, .n = 3});
    std::vector<int> toks{3, 1, 2, kDelimiter};
    auto fw = construction_forward(m, toks, true);
    std::vector<int> other{3, 1, 2, kDelimiter, 1};
    CHECK_THROWS_AS(verify_stages(*fw.trace, other, m), std::invalid_argument);
}

TEST_CASE("verification suite over random sequences stays within the noise budget") {
    const ToleranceConfig tol;
    for (auto [q, n] : {std::pair{100, 20}, std::pair{20, 50}}) {
        ConstructionModel m = build_construction({.q = q, .n = n});
        Rng rng(42 + static_cast<uint64_t>(q));
        for (int rep = 0; rep < 10; ++rep) {
            Rng r = rng.fork(static_cast<uint64_t>(rep));
            const std::vector<int> seq = random_seq(r, n, q);
            const std::vector<int> toks = forced_tokens(seq);
            auto fw = construction_forward(m, toks, true);
            StageReport report = verify_stages(*fw.trace, toks, m, tol);
            CHECK(report.pass);
            CHECK(report.max_residual <= tol.budget(n));
        }
    }
}

TEST_CASE("doubled layer-norm variant") {
    ConstructionConfig cfg{.q = 10, .n = 3};
    ConstructionModel base = build_construction(cfg);
    ConstructionModel doubled = doubled_layernorm_variant(base);
    CHECK(doubled.atlas.dim() == 2 * base.atlas.dim());
    CHECK(doubled.normalize);

    SECTION("embeddings have exactly zero mean") {
        for (int s = 0; s <= 10; ++s) {
            const auto e = doubled.atlas.encode(s);
            double sum = 0;
            for (double v : e) sum += v;
            CHECK(sum == 0.0);
        }
    }
    SECTION("sorted outputs match the base variant") {
        Rng rng(9);
        CHECK(construction_sort(doubled, std::vector<int>{3, 1, 2}) == std::vector<int>{1, 2, 3});
        for (int rep = 0; rep < 10; ++rep) {
            Rng r = rng.fork(static_cast<uint64_t>(rep));
            const std::vector<int> seq = random_seq(r, 3, 10);
            CHECK(construction_sort(doubled, seq) == construction_sort(base, seq));
        }
    }
    SECTION("decoding is invariant under positive rescaling") {
        std::vector<int> toks{3, 1, 2, kDelimiter};
        auto fw = construction_forward(base, toks, true);
        const Tensor& final_rows = fw.trace->post[1];
        std::vector<double> row(final_rows.row(3), final_rows.row(3) + final_rows.cols());
        const int before = base.decode(row);
        for (auto& v : row) v *= 17.5;
        CHECK(base.decode(row) == before);
    }
}

TEST_CASE("stage CSV emission") {
    ConstructionModel m = build_construction({.q = 10, .n = 2});
    std::vector<int> toks{2, 1, kDelimiter, 1};
    auto fw = construction_forward(m, toks, true);
    StageReport rep = verify_stages(*fw.trace, toks, m);
    std::ostringstream os;
    append_stage_csv(os, 7, rep);
    const std::string text = os.str();
    CHECK(text.find("7,2,min,1,1,") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(rep.checks.size()));
}
