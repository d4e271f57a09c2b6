#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lglab/datagen.hpp"

using namespace lglab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("token tables") {
    TokenTable sorting{TaskFamily::Sorting};
    CHECK(sorting.vocab() == 103);
    CHECK(sorting.number_id(1) == 2);
    CHECK(sorting.number_id(100) == 101);
    CHECK(sorting.number_of(43) == 42);
    CHECK_THROWS_AS(sorting.number_id(0), std::invalid_argument);
    TokenTable inc{TaskFamily::Increment};
    CHECK(inc.vocab() == 14);
    CHECK(inc.digit_id(0) == 2);
    CHECK(inc.digit_id(9) == 11);
    CHECK(inc.carry_marker_id() == 12);
}

TEST_CASE("skewed length sampler hits the documented tier masses") {
    LengthSpec spec;  // sorting defaults: 80% on 2..5, 20% on 6..20
    Rng rng(99);
    const int draws = 100000;
    int short_tier = 0, threes = 0, tens = 0;
    for (int i = 0; i < draws; ++i) {
        const int len = skewed_length_sample(rng, spec);
        REQUIRE(len >= 2);
        REQUIRE(len <= 20);
        if (len <= 5) ++short_tier;
        if (len == 3) ++threes;
        if (len == 10) ++tens;
    }
    CHECK_THAT(short_tier / double(draws), Catch::Matchers::WithinAbs(0.80, 0.01));
    CHECK_THAT(threes / double(draws), Catch::Matchers::WithinAbs(0.20, 0.01));
    CHECK_THAT(tens / double(draws), Catch::Matchers::WithinAbs(0.2 / 15.0, 0.005));
}

TEST_CASE("sort examples: structure, mask, targets") {
    TokenTable table{TaskFamily::Sorting};
    RawExample e = make_sort_example(table, std::vector<int>{9, 4});
    CHECK(e.n_input == 2);
    CHECK(e.tokens == std::vector<int>{table.number_id(9), table.number_id(4), TokenTable::kDelim,
                                       table.number_id(4), table.number_id(9)});
    CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 2);
    CHECK(e.mask[2] == 1);  // delimiter predicts the first output
    CHECK(e.mask[3] == 1);
    CHECK(e.mask[4] == 0);
}

TEST_CASE("repetition branch uses a halved palette") {
    GenConfig cfg;
    cfg.repetition_prob = 1.0;
    cfg.value_lo = 1;
    cfg.value_hi = 100;
    cfg.lengths = LengthSpec{6, 6, 7, 8, 0.999999};  // force length 6
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::vector<int> v = sample_sort_input(rng, cfg);
        REQUIRE(v.size() == 6);
        std::set<int> distinct(v.begin(), v.end());
        CHECK(distinct.size() <= 3);
    }
}

TEST_CASE("successor rule") {
    std::vector<int> sorted1 = oracle_sort({5, 17, 43, 78, 92});
    CHECK(successor_in_sorted(sorted1, 43) == 78);
    std::vector<int> sorted2 = oracle_sort({4, 4, 9});
    CHECK(successor_in_sorted(sorted2, 4) == 4);  // duplicate follows its first copy
    std::vector<int> sorted3 = oracle_sort({5, 17});
    CHECK(successor_in_sorted(sorted3, 17) == -1);  // maximum maps to the delimiter
}

TEST_CASE("successor examples mask exactly the answer") {
    TokenTable table{TaskFamily::Sorting};
    GenConfig cfg;
    cfg.value_hi = 20;
    Rng rng(21);
    for (int rep = 0; rep < 50; ++rep) {
        RawExample e = gen_successor_example(rng, cfg, table);
        CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 1);
        CHECK(e.mask[static_cast<size_t>(e.n_input) + 1] == 1);
        CHECK(e.tokens[static_cast<size_t>(e.n_input)] == TokenTable::kDelim);
        // answer consistency with the rule
        std::vector<int> values;
        for (int i = 0; i < e.n_input; ++i) values.push_back(table.number_of(e.tokens[static_cast<size_t>(i)]));
        const int query = table.number_of(e.tokens[static_cast<size_t>(e.n_input) + 1]);
        const int succ = successor_in_sorted(oracle_sort(values), query);
        const int answer_token = e.tokens[static_cast<size_t>(e.n_input) + 2];
        CHECK(answer_token == (succ == -1 ? TokenTable::kDelim : table.number_id(succ)));
    }
}

TEST_CASE("count examples: gap bounds and the tie label") {
    TokenTable table{TaskFamily::Sorting};
    GenConfig cfg;
    Rng rng(31);
    int ties = 0;
    for (int rep = 0; rep < 400; ++rep) {
        RawExample e = gen_count_example(rng, cfg, table);
        std::map<int, int> counts;
        for (int i = 0; i < e.n_input; ++i) counts[e.tokens[static_cast<size_t>(i)]]++;
        REQUIRE(counts.size() == 2);
        auto it = counts.begin();
        const int c1 = it->second;
        const int t1 = it->first;
        ++it;
        const int c2 = it->second;
        const int t2 = it->first;
        const int answer = e.tokens.back();
        if (c1 == c2) {
            CHECK(answer == TokenTable::kDelim);
            ++ties;
        } else {
            const int gap = std::abs(c1 - c2);
            CHECK(gap >= 1);
            CHECK(gap <= 5);
            CHECK(answer == (c1 < c2 ? t1 : t2));
        }
        CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 1);
    }
    CHECK(ties > 100);  // ties arrive with probability one half
    CHECK(ties < 300);
}

TEST_CASE("fill examples") {
    TokenTable table{TaskFamily::Sorting};
    GenConfig cfg;
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
        RawExample e = gen_fill_example(rng, cfg, table);
        const int m = e.n_input;
        CHECK(static_cast<int>(e.tokens.size()) == 2 * m + 1);
        const int ones = static_cast<int>(std::count(e.mask.begin(), e.mask.end(), 1));
        CHECK(ones >= 1);
        CHECK(ones <= m);
        for (size_t i = 0; i < e.tokens.size(); ++i)
            if (i != static_cast<size_t>(m)) CHECK(e.tokens[i] == e.tokens[0]);
    }
}

TEST_CASE("rep test composition") {
    TokenTable table{TaskFamily::Sorting};
    RepTestConfig cfg;
    cfg.i = 10;
    cfg.r = 3;
    cfg.count = 30;
    auto examples = gen_rep_test_set(cfg, 77, table);
    REQUIRE(examples.size() == 30);
    for (const auto& e : examples) {
        REQUIRE(e.n_input == 10);
        std::map<int, int> counts;
        for (int i = 0; i < 10; ++i) counts[e.tokens[static_cast<size_t>(i)]]++;
        int full_groups = 0;
        for (auto& [sym, c] : counts)
            if (c >= 3) ++full_groups;
        CHECK(full_groups >= 3);  // 3 distinct symbols repeated 3 times, 1 filler
    }
    RepTestConfig bad;
    bad.i = 3;
    bad.r = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("increment arithmetic") {
    SECTION("no carry") {
        auto r = increment_digits(std::vector<int>{1, 2, 3});
        CHECK(r.out_digits == std::vector<int>{4, 2, 1});
        CHECK(r.carries == std::vector<int>{0, 0, 0});
    }
    SECTION("full carry chain with overflow") {
        auto r = increment_digits(std::vector<int>{9, 9});
        CHECK(r.out_digits == std::vector<int>{0, 0, 1});
        CHECK(r.carries == std::vector<int>{1, 1, 0});
    }
    SECTION("partial carry") {
        auto r = increment_digits(std::vector<int>{1, 9, 9});
        CHECK(r.out_digits == std::vector<int>{0, 0, 2});
        CHECK(r.carries == std::vector<int>{1, 1, 0});
    }
}

TEST_CASE("increment examples") {
    TokenTable table{TaskFamily::Increment};
    RawExample e = make_increment_example(table, std::vector<int>{1, 2, 3});
    CHECK(e.tokens == std::vector<int>{table.digit_id(1), table.digit_id(2), table.digit_id(3),
                                       TokenTable::kDelim, table.digit_id(4), table.digit_id(2),
                                       table.digit_id(1)});
    CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 3);
    RawExample o = make_increment_example(table, std::vector<int>{9, 9});
    CHECK(std::count(o.mask.begin(), o.mask.end(), 1) == 3);  // overflow digit included
}

TEST_CASE("carry examples interleave digit, marker, carry") {
    TokenTable table{TaskFamily::Increment};
    auto expect_tokens = [&table](std::vector<int> digits, std::vector<int> out) {
        std::vector<int> t;
        for (int d : digits) t.push_back(table.digit_id(d));
        t.push_back(TokenTable::kDelim);
        for (size_t k = 0; k + 1 < out.size(); k += 2) {
            t.push_back(table.digit_id(out[k]));
            t.push_back(table.carry_marker_id());
            t.push_back(table.digit_id(out[k + 1]));
        }
        return t;
    };
    CHECK(make_carry_example(table, std::vector<int>{1, 2, 3}).tokens ==
          expect_tokens({1, 2, 3}, {4, 0, 2, 0, 1, 0}));
    CHECK(make_carry_example(table, std::vector<int>{1, 9, 9}).tokens ==
          expect_tokens({1, 9, 9}, {0, 1, 0, 1, 2, 0}));
    CHECK(make_carry_example(table, std::vector<int>{9}).tokens ==
          expect_tokens({9}, {0, 1, 1, 0}));
    RawExample e = make_carry_example(table, std::vector<int>{1, 2, 3});
    // markers are given, not predicted
    for (size_t i = 0; i + 1 < e.tokens.size(); ++i)
        if (e.tokens[i + 1] == table.carry_marker_id()) CHECK(e.mask[i] == 0);
    CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 6);
}

TEST_CASE("nines branch frequency") {
    GenConfig cfg = increment_gen_defaults();
    Rng rng(55);
    int nines = 0;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const std::vector<int> d = sample_increment_digits(rng, cfg);
        if (d.back() == 9) ++nines;
    }
    // 10% forced plus ~1/10 natural nines on the last position
    CHECK(nines / double(draws) > 0.1);
    CHECK(nines / double(draws) < 0.3);
}

TEST_CASE("encode pads and trims consistently") {
    TokenTable table{TaskFamily::Sorting};
    RawExample raw = make_sort_example(table, std::vector<int>{9, 4});
    EncodedExample e = encode_example(raw, table, 16);
    CHECK(e.tokens.size() == 16);
    CHECK(std::count(e.mask.begin(), e.mask.end(), 1) == 2);
    for (size_t i = raw.tokens.size(); i < 16; ++i) {
        CHECK(e.tokens[i] == TokenTable::kPad);
        CHECK(e.mask[i] == 0);
    }
    // round trip: strip padding to recover the raw sequence
    std::vector<int> back(e.tokens.begin(), e.tokens.begin() + static_cast<long>(raw.tokens.size()));
    CHECK(back == raw.tokens);
    for (size_t i = 0; i + 1 < raw.tokens.size(); ++i) CHECK(e.targets[i] == raw.tokens[i + 1]);
    CHECK_THROWS_AS(encode_example(raw, table, 4), std::length_error);
}

TEST_CASE("dataset file round trip and versioning") {
    GenConfig cfg;
    cfg.seed = 17;
    cfg.count = 3;
    cfg.value_hi = 20;
    auto examples = gen_sort_dataset(cfg, false);
    DatasetHeader header;
    header.task = "sort";
    header.table_version = TokenTable{TaskFamily::Sorting}.version();
    header.seed = cfg.seed;
    header.count = cfg.count;
    header.context_length = cfg.context_length;
    header.config = gen_config_json(cfg);
    const std::string path = temp_path("lglab_ds_test.jsonl");
    write_dataset(path, header, examples);

    Dataset ds = read_dataset(path);
    REQUIRE(ds.examples.size() == examples.size());
    for (size_t i = 0; i < examples.size(); ++i) {
        CHECK(ds.examples[i].tokens == examples[i].tokens);
        CHECK(ds.examples[i].targets == examples[i].targets);
        CHECK(ds.examples[i].mask == examples[i].mask);
        CHECK(ds.examples[i].n_input == examples[i].n_input);
    }

    // byte-identical regeneration under a fixed seed
    const std::string path2 = temp_path("lglab_ds_test2.jsonl");
    write_dataset(path2, header, gen_sort_dataset(cfg, false));
    CHECK(slurp(path) == slurp(path2));

    // unknown version is rejected
    std::string text = slurp(path);
    const auto pos = text.find("lg-dataset/1");
    text.replace(pos, 12, "lg-dataset/9");
    const std::string bad = temp_path("lglab_ds_bad.jsonl");
    std::ofstream(bad, std::ios::binary) << text;
    CHECK_THROWS_AS(read_dataset(bad), std::runtime_error);
    std::remove(path.c_str());
    std::remove(path2.c_str());
    std::remove(bad.c_str());
}

TEST_CASE("generation is order-independent") {
    GenConfig cfg;
    cfg.seed = 3;
    cfg.count = 10;
    auto all = gen_dataset("sort", cfg);
    // regenerate example 7 alone by forking the same stream
    TokenTable table{TaskFamily::Sorting};
    Rng root(cfg.seed);
    Rng rng = root.fork(7);
    EncodedExample e = encode_example(gen_sort_example(rng, cfg, table), table, cfg.context_length);
    CHECK(e.tokens == all[7].tokens);
    CHECK(e.mask == all[7].mask);
}

TEST_CASE("structural invariants over a generated batch") {
    TokenTable table{TaskFamily::Sorting};
    GenConfig cfg;
    cfg.seed = 8;
    cfg.count = 500;
    cfg.repetition_prob = 0.1;
    auto examples = gen_dataset("sort", cfg);
    for (const auto& e : examples) {
        std::vector<int> values, outputs;
        for (int i = 0; i < e.n_input; ++i) values.push_back(table.number_of(e.tokens[static_cast<size_t>(i)]));
        for (size_t i = static_cast<size_t>(e.n_input) + 1; i < e.tokens.size() &&
                                                            e.tokens[i] != TokenTable::kPad;
             ++i)
            outputs.push_back(table.number_of(e.tokens[i]));
        CHECK(outputs == oracle_sort(values));
        // masked targets reproduce exactly the sorted outputs
        std::vector<int> masked;
        for (size_t i = 0; i < e.mask.size(); ++i)
            if (e.mask[i]) masked.push_back(table.number_of(e.targets[i]));
        CHECK(masked == outputs);
    }
}
