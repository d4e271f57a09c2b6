#include <catch2/catch_amalgamated.hpp>

#include "lglab/autograd.hpp"
#include "lglab/rng.hpp"

using namespace lglab;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("product rule") {
    Tape tape;
    Tensor xv({1}), yv({1});
    xv[0] = 3.0;
    yv[0] = -2.0;
    int x = tape.param(xv, "x");
    int y = tape.param(yv, "y");
    int f = tape.mul(x, y);
    ParamSet grads = tape.backward(f);
    CHECK(grads.at("x")[0] == -2.0);
    CHECK(grads.at("y")[0] == 3.0);
}

TEST_CASE("softmax row sums are constant, so their gradient vanishes") {
    Rng rng(4);
    Tape tape;
    int s = tape.param(random_tensor(rng, {5, 5}, 2.0), "s");
    int p = tape.causal_softmax(s, 1.7);
    int f = tape.sum(p);
    ParamSet grads = tape.backward(f);
    CHECK_THAT(tape.value(f)[0], Catch::Matchers::WithinAbs(5.0, 1e-12));
    for (size_t i = 0; i < grads.at("s").size(); ++i)
        CHECK(std::abs(grads.at("s")[i]) < 1e-14);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    int x = tape.param(Tensor({2, 2}), "x");
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("two-layer MLP loss matches central finite differences") {
    Rng rng(12);
    Tensor w1 = random_tensor(rng, {4, 3}, 0.7);
    Tensor b1 = random_tensor(rng, {4}, 0.3);
    Tensor w2 = random_tensor(rng, {2, 4}, 0.7);
    Tensor x = random_tensor(rng, {5, 3});

    auto loss_of = [&x](const ParamSet& p) {
        Tape t;
        int w1n = t.leaf(p.at("w1"));
        int b1n = t.leaf(p.at("b1"));
        int w2n = t.leaf(p.at("w2"));
        int xn = t.leaf(x);
        int h = t.activation(t.add_row_vector(t.matmul_nt(xn, w1n), b1n), Activation::GELU);
        int out = t.matmul_nt(h, w2n);
        return t.value(t.sum(t.mul(out, out)))[0];
    };
    Tape tape;
    int w1n = tape.param(w1, "w1");
    int b1n = tape.param(b1, "b1");
    int w2n = tape.param(w2, "w2");
    int xn = tape.leaf(x);
    int h = tape.activation(tape.add_row_vector(tape.matmul_nt(xn, w1n), b1n), Activation::GELU);
    int out = tape.matmul_nt(h, w2n);
    ParamSet analytic = tape.backward(tape.sum(tape.mul(out, out)));

    ParamSet theta{{"w1", w1}, {"b1", b1}, {"w2", w2}};
    GradReport report = finite_difference_check(loss_of, theta, analytic);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("randomized composition of every kernel differentiates correctly") {
    Rng rng(77);
    for (int rep = 0; rep < 4; ++rep) {
        Rng r = rng.fork(static_cast<uint64_t>(rep));
        const int t_rows = 4 + static_cast<int>(r.uniform_int(0, 3));
        const int d = 6;
        Tensor table = random_tensor(r, {5, d}, 0.8);
        Tensor w = random_tensor(r, {d, d}, 0.5);
        std::vector<int> ids;
        for (int i = 0; i < t_rows; ++i) ids.push_back(static_cast<int>(r.uniform_int(0, 4)));
        std::vector<int> targets;
        std::vector<uint8_t> mask;
        for (int i = 0; i < t_rows; ++i) {
            targets.push_back(static_cast<int>(r.uniform_int(0, d - 1)));
            mask.push_back(static_cast<uint8_t>(r.bernoulli(0.7) ? 1 : 0));
        }
        mask[static_cast<size_t>(t_rows) - 1] = 1;

        auto build = [&](Tape& t, int table_n, int w_n) {
            int x = t.embedding(table_n, ids);
            int left = t.slice_cols(x, 0, d / 2);
            int scores = t.scale(t.matmul_nt(left, t.slice_cols(x, d / 2, d / 2)), 0.4);
            int att = t.causal_softmax(scores, 2.0);
            int mixed = t.matmul(att, left);
            int y = t.add(x, t.pad_cols(mixed, 0, d));
            y = t.layer_norm_rows(y);
            y = t.activation(t.matmul_nt(y, w_n), Activation::ReLU);
            int logits = t.sub(y, t.scale(x, 0.1));
            return t.masked_cross_entropy(logits, targets, mask);
        };
        Tape tape;
        int tn = tape.param(table, "table");
        int wn = tape.param(w, "w");
        ParamSet analytic = tape.backward(build(tape, tn, wn));
        auto loss_of = [&](const ParamSet& p) {
            Tape t;
            int tn2 = t.leaf(p.at("table"));
            int wn2 = t.leaf(p.at("w"));
            return t.value(build(t, tn2, wn2))[0];
        };
        GradReport report = finite_difference_check(loss_of, {{"table", table}, {"w", w}}, analytic);
        CHECK(report.pass);
    }
}

TEST_CASE("finite difference harness basics") {
    SECTION("x^2 at 3") {
        ParamSet theta{{"x", Tensor({1}, {3.0})}};
        ParamSet analytic{{"x", Tensor({1}, {6.0})}};
        auto f = [](const ParamSet& p) { return p.at("x")[0] * p.at("x")[0]; };
        GradReport r = finite_difference_check(f, theta, analytic);
        CHECK(r.pass);
        CHECK(r.max_rel_err < 1e-6);
    }
    SECTION("constants have zero gradient on both sides") {
        ParamSet theta{{"x", Tensor({3})}};
        ParamSet analytic{{"x", Tensor({3})}};
        auto f = [](const ParamSet&) { return 42.0; };
        GradReport r = finite_difference_check(f, theta, analytic);
        CHECK(r.pass);
        CHECK(r.max_rel_err == 0.0);
    }
    SECTION("a wrong gradient is flagged") {
        ParamSet theta{{"x", Tensor({1}, {3.0})}};
        ParamSet analytic{{"x", Tensor({1}, {5.0})}};
        auto f = [](const ParamSet& p) { return p.at("x")[0] * p.at("x")[0]; };
        CHECK_FALSE(finite_difference_check(f, theta, analytic).pass);
    }
}

TEST_CASE("embedding backward accumulates duplicate ids") {
    Tape tape;
    Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
    int tn = tape.param(table, "table");
    int x = tape.embedding(tn, {1, 1, 2});
    ParamSet grads = tape.backward(tape.sum(x));
    CHECK(grads.at("table").at(0, 0) == 0.0);
    CHECK(grads.at("table").at(1, 0) == 2.0);
    CHECK(grads.at("table").at(2, 1) == 1.0);
}

TEST_CASE("masked cross entropy rejects an empty mask") {
    Tape tape;
    int logits = tape.leaf(Tensor({2, 3}));
    CHECK_THROWS_AS(tape.masked_cross_entropy(logits, {0, 1}, {0, 0}), std::invalid_argument);
}
