#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqa/ops.hpp"
#include "sqa/rng.hpp"

using namespace sqa;

TEST_CASE("tensor shape bookkeeping") {
    auto t = make_tensor<float>({2, 3, 4});
    CHECK(t->numel() == 24);
    CHECK(t->rank() == 3);
    CHECK_THROWS_AS(make_tensor<float>({2, 0, 4}), ShapeError);
    CHECK_THROWS_AS(make_tensor<float>({2, 2}, std::vector<float>{1.f, 2.f, 3.f}), ShapeError);
}

TEST_CASE("grad buffers track data shape") {
    auto t = make_tensor<float>({3, 3}, true);
    CHECK(t->grad.empty());
    t->ensure_grad();
    CHECK(t->grad.size() == t->data.size());
}

TEST_CASE("backward of sum gives all-ones") {
    auto x = make_tensor<float>({2, 3}, std::vector<float>{1, -2, 3, 4, -5, 6}, true);
    Tape<float> tape;
    auto loss = reduce_sum_all(&tape, x);
    tape.backward(loss);
    for (float g : x->grad) CHECK(g == 1.0f);
}

TEST_CASE("backward of sum of squares gives 2x") {
    auto x = make_tensor<float>({4}, std::vector<float>{1, -2, 3, 0.5f}, true);
    Tape<float> tape;
    auto loss = reduce_sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(2.0f * x->data[i]));
}

TEST_CASE("non-scalar loss is a usage error") {
    auto x = make_tensor<float>({2, 2}, true);
    Tape<float> tape;
    auto y = relu(&tape, x);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("tensors without requires_grad receive no gradient") {
    auto x = make_tensor<float>({3}, std::vector<float>{1, 2, 3}, true);
    auto c = make_tensor<float>({3}, std::vector<float>{2, 2, 2}, false);
    Tape<float> tape;
    auto loss = reduce_sum_all(&tape, mul(&tape, x, c));
    tape.backward(loss);
    CHECK(c->grad.empty());
    CHECK(x->grad.size() == 3);
}

TEST_CASE("tape records ops in execution order with inputs preceding consumers") {
    auto x = make_tensor<float>({2}, std::vector<float>{1, 2}, true);
    Tape<float> tape;
    auto y = relu(&tape, x);
    auto z = mul(&tape, y, y);
    auto loss = reduce_sum_all(&tape, z);
    (void)loss;
    REQUIRE(tape.size() == 3);
    // every node's inputs are either leaves or outputs of earlier nodes
    for (std::size_t i = 0; i < tape.size(); ++i) {
        for (const auto& in : tape.node(i).inputs) {
            if (!in || in == x) continue;
            bool found = false;
            for (std::size_t j = 0; j < i; ++j) found = found || (tape.node(j).output == in);
            CHECK(found);
        }
    }
}

TEST_CASE("repeated forward is bit-identical") {
    Rng rng(11);
    auto x = randn_tensor<float>(rng, {2, 3, 8, 8});
    auto w = randn_tensor<float>(rng, {4, 3, 3, 3}, 0.2);
    auto b = randn_tensor<float>(rng, {4}, 0.2);
    Conv2dSpec spec;
    spec.padding = 1;
    auto y1 = conv2d<float>(nullptr, x, w, b, spec);
    auto y2 = conv2d<float>(nullptr, x, w, b, spec);
    REQUIRE(y1->data.size() == y2->data.size());
    for (std::size_t i = 0; i < y1->data.size(); ++i) CHECK(y1->data[i] == y2->data[i]);
}

TEST_CASE("finite-check mode names the offending op") {
    auto x = make_tensor<float>({2}, std::vector<float>{-1.0f, 0.5f}, true);
    Tape<float> tape;
    tape.set_check_finite(true);
    CHECK_THROWS_WITH_AS(log(&tape, x), doctest::Contains("log"), NumericsError);
}

TEST_CASE("concat then split along the same axis is the identity") {
    Rng rng(12);
    auto a = randn_tensor<float>(rng, {2, 3, 4, 4});
    auto b = randn_tensor<float>(rng, {2, 5, 4, 4});
    auto joined = concat<float>(nullptr, {a, b}, 1);
    auto back = split<float>(nullptr, joined, 1, {3, 5});
    REQUIRE(back.size() == 2);
    CHECK(back[0]->dims == a->dims);
    CHECK(back[1]->dims == b->dims);
    for (std::size_t i = 0; i < a->data.size(); ++i) CHECK(back[0]->data[i] == a->data[i]);
    for (std::size_t i = 0; i < b->data.size(); ++i) CHECK(back[1]->data[i] == b->data[i]);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Rng rng(13);
    auto x = randn_tensor<float>(rng, {3, 5, 2, 2});
    for (int axis : {0, 1, 2, 3}) {
        auto p = softmax<float>(nullptr, x, axis);
        for (float v : p->data) CHECK(v >= 0.0f);
        // sum along the reduced axis
        std::int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= x->dim(std::size_t(i));
        const std::int64_t len = x->dim(std::size_t(axis));
        for (std::size_t i = std::size_t(axis) + 1; i < x->rank(); ++i) inner *= x->dim(i);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                float s = 0.0f;
                for (std::int64_t l = 0; l < len; ++l)
                    s += p->data[std::size_t(o * len * inner + l * inner + in)];
                CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
            }
    }
}
