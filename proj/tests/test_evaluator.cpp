#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "lglab/evaluator.hpp"
#include "lglab/model.hpp"

using namespace lglab;

namespace {

// brute-force reference: plain recursion, no memoization
int edit_distance_reference(std::span<const int> a, std::span<const int> b) {
    if (a.empty()) return static_cast<int>(b.size());
    if (b.empty()) return static_cast<int>(a.size());
    const int del = edit_distance_reference(a.subspan(1), b) + 1;
    const int ins = edit_distance_reference(a, b.subspan(1)) + 1;
    const int sub = edit_distance_reference(a.subspan(1), b.subspan(1)) + (a[0] == b[0] ? 0 : 1);
    return std::min({del, ins, sub});
}

std::vector<int> random_tokens(Rng& rng, int max_len, int alphabet) {
    std::vector<int> v(static_cast<size_t>(rng.uniform_int(0, max_len)));
    for (auto& x : v) x = static_cast<int>(rng.uniform_int(1, alphabet));
    return v;
}

}  // namespace

TEST_CASE("edit distance basics") {
    CHECK(edit_distance(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}) == 0);
    CHECK(edit_distance(std::vector<int>{1, 2, 3}, std::vector<int>{1, 3}) == 1);
    CHECK(edit_distance(std::vector<int>{}, std::vector<int>{4, 5}) == 2);
    CHECK(edit_distance(std::vector<int>{1, 2}, std::vector<int>{2, 1}) == 2);
}

TEST_CASE("edit distance matches the exhaustive recursion on random pairs") {
    Rng rng(2024);
    for (int rep = 0; rep < 300; ++rep) {
        Rng r = rng.fork(static_cast<uint64_t>(rep));
        const auto a = random_tokens(r, 8, 4);
        const auto b = random_tokens(r, 8, 4);
        CHECK(edit_distance(a, b) == edit_distance_reference(a, b));
    }
}

TEST_CASE("edit distance is a metric") {
    Rng rng(77);
    for (int rep = 0; rep < 500; ++rep) {
        Rng r = rng.fork(static_cast<uint64_t>(rep));
        const auto a = random_tokens(r, 7, 5);
        const auto b = random_tokens(r, 7, 5);
        const auto c = random_tokens(r, 7, 5);
        const int ab = edit_distance(a, b);
        const int ba = edit_distance(b, a);
        CHECK(ab == ba);
        CHECK((ab == 0) == (a == b));
        CHECK(edit_distance(a, c) <= ab + edit_distance(b, c));
    }
}

TEST_CASE("construction decoder scores perfectly on sorting suites") {
    const TokenTable table{TaskFamily::Sorting};
    DecodeFn decode = construction_decoder(100, table);
    auto cases = uniform_sort_cases(table, 12, 40, 5, 1, 100);
    CHECK(full_sequence_accuracy(decode, cases) == 1.0);
    auto report = evaluate_lengths(decode, table, std::vector<int>{5, 9}, 25, 6, 1, 100);
    REQUIRE(report.rows.size() == 2);
    for (const auto& row : report.rows) {
        CHECK(row.accuracy == 1.0);
        CHECK(row.mean_edit_distance == 0.0);  // accuracy one forces edit distance zero
        CHECK(row.count == 25);
    }
}

TEST_CASE("single exact case scores one") {
    const TokenTable table{TaskFamily::Sorting};
    std::vector<EvalCase> cases{sort_case(table, std::vector<int>{3, 1, 2})};
    DecodeFn decode = oracle_sort_decoder(table);
    CHECK(full_sequence_accuracy(decode, cases) == 1.0);
}

TEST_CASE("an untrained model is at chance level on length 10") {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.d_inner = 16;
    cfg.q_vocab = 103;
    cfg.context_length = 32;
    Model m = init_model(cfg, 99);
    const TokenTable table{TaskFamily::Sorting};
    auto cases = uniform_sort_cases(table, 10, 100, 4, 1, 100);
    CHECK(full_sequence_accuracy(model_decoder(m), cases, 2) < 0.01);
}

TEST_CASE("rep suites have the declared composition") {
    const TokenTable table{TaskFamily::Sorting};
    RepTestConfig rc;
    rc.i = 10;
    rc.r = 5;
    rc.count = 20;
    auto cases = rep_sort_cases(table, rc, 3);
    for (const auto& c : cases) {
        std::map<int, int> counts;
        for (size_t i = 0; i + 1 < c.prompt.size(); ++i) counts[c.prompt[i]]++;
        int repeated = 0;
        for (auto& [tok, n] : counts)
            if (n >= 5) ++repeated;
        CHECK(repeated == 2);  // floor(10/5) distinct symbols repeated five times
    }
}

TEST_CASE("increment evaluation with the oracle decoder") {
    DecodeFn decode = oracle_increment_decoder(TokenTable{TaskFamily::Increment});
    auto report = evaluate_increment(decode, std::vector<int>{2, 5, 11}, 50, 7);
    REQUIRE(report.rows.size() == 3);
    for (const auto& row : report.rows) CHECK(row.accuracy == 1.0);
}

TEST_CASE("overflow cases require the extra digit") {
    const TokenTable table{TaskFamily::Increment};
    // prompt 99: target 0,0,1 reversed digits
    EvalCase c;
    c.prompt = {table.digit_id(9), table.digit_id(9), TokenTable::kDelim};
    c.target = {table.digit_id(0), table.digit_id(0), table.digit_id(1)};
    DecodeFn good = oracle_increment_decoder(table);
    CHECK(full_sequence_accuracy(good, std::vector<EvalCase>{c}) == 1.0);
    // a decoder that drops the overflow digit fails the case
    DecodeFn truncating = [&table](const std::vector<int>& prompt, int n_out) {
        auto out = oracle_increment_decoder(table)(prompt, n_out);
        out.pop_back();
        return out;
    };
    CHECK(full_sequence_accuracy(truncating, std::vector<EvalCase>{c}) == 0.0);
}

TEST_CASE("report CSV layout") {
    EvalReport report;
    report.comments = {"model: test"};
    report.rows = {{"8", 100, 0.975, 0.0625}, {"rep(10,3)", 50, 1.0, 0.0}};
    std::ostringstream os;
    report.to_csv(os);
    const std::string text = os.str();
    CHECK(text.find("# model: test\n") != std::string::npos);
    CHECK(text.find("tag,n_examples,full_seq_acc,mean_edit_distance\n") != std::string::npos);
    CHECK(text.find("8,100,0.975000,0.062500\n") != std::string::npos);
    CHECK(text.find("rep(10,3),50,1.000000,0.000000\n") != std::string::npos);
}

TEST_CASE("evaluation is deterministic and read-only") {
    const TokenTable table{TaskFamily::Sorting};
    DecodeFn decode = oracle_sort_decoder(table);
    auto r1 = evaluate_lengths(decode, table, std::vector<int>{4}, 30, 11, 1, 50);
    auto r2 = evaluate_lengths(decode, table, std::vector<int>{4}, 30, 11, 1, 50, 2);
    CHECK(r1.rows[0].accuracy == r2.rows[0].accuracy);
    CHECK(r1.rows[0].mean_edit_distance == r2.rows[0].mean_edit_distance);
}
