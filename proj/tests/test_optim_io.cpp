#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sqa/optim.hpp"
#include "sqa/ops.hpp"
#include "sqa/rng.hpp"
#include "sqa/weights_io.hpp"

using namespace sqa;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched under zero gradients") {
    auto p = make_tensor<float>({3}, std::vector<float>{1.0f, -2.0f, 0.5f}, true);
    p->ensure_grad();
    Adam opt({p}, {});
    const auto before = p->data;
    for (int i = 0; i < 3; ++i) opt.step();
    CHECK(opt.step_count() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p->data[i] == before[i]);
}

TEST_CASE("adam single step matches the hand-evaluated update") {
    auto p = make_tensor<float>({1}, std::vector<float>{1.0f}, true);
    p->ensure_grad();
    p->grad[0] = 1.0f;
    AdamConfig cfg;  // lr 1e-3 default; use 0.1 per the worked example
    cfg.lr = 0.1f;
    Adam opt({p}, cfg);
    opt.step();
    // m = 0.1*g, v = 0.001*g^2; mhat = m/(1-0.9), vhat = v/(1-0.999)
    // => mhat = 1, vhat = 1, update = 0.1 * 1/(sqrt(1)+1e-8)
    const double expected = 1.0 - 0.1 * (1.0 / (std::sqrt(1.0) + 1e-8));
    CHECK(p->data[0] == doctest::Approx(expected).epsilon(1e-7));
}

TEST_CASE("adam runs are bit-identical for identical seeds") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto p = randn_tensor<float>(rng, {4, 4}, 1.0, true);
        Adam opt({p}, {});
        for (int step = 0; step < 10; ++step) {
            Tape<float> tape;
            auto loss = reduce_mean_all(&tape, mul(&tape, p, p));
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        return p->data;
    };
    const auto a = run(99), b = run(99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("weight files round-trip bit-exactly") {
    Rng rng(5);
    std::vector<NamedTensor> tensors{
        {"resnet.stem.conv.weight", randn_tensor<float>(rng, {8, 4, 7, 7})},
        {"vit.pos_embed", randn_tensor<float>(rng, {1, 16, 24})},
        {"neck.fuse1.conv1.weight", randn_tensor<float>(rng, {4, 8, 3, 3})},
    };
    const auto path = temp_file("sqa_roundtrip.aqsw");
    save_weights(path.string(), tensors);
    const auto loaded = load_weights(path.string());
    REQUIRE(loaded.size() == tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        CHECK(loaded[i].name == tensors[i].name);
        REQUIRE(loaded[i].tensor->dims == tensors[i].tensor->dims);
        for (std::size_t j = 0; j < tensors[i].tensor->data.size(); ++j)
            CHECK(loaded[i].tensor->data[j] == tensors[i].tensor->data[j]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("weight file header layout is bit-exact") {
    auto t = make_tensor<float>({2}, std::vector<float>{1.0f, -2.0f});
    const auto path = temp_file("sqa_layout.aqsw");
    save_weights(path.string(), {{"ab", t}});
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // magic, version=1, count=1, namelen=2, "ab", rank=1, dim=2, payload
    const std::string expected_head =
        std::string("AQSW") + std::string("\x01\x00\x00\x00", 4) +
        std::string("\x01\x00\x00\x00", 4) + std::string("\x02\x00\x00\x00", 4) + "ab" +
        std::string("\x01\x00\x00\x00", 4) + std::string("\x02\x00\x00\x00", 4);
    REQUIRE(buf.size() == expected_head.size() + 8);
    CHECK(buf.substr(0, expected_head.size()) == expected_head);
    float v0, v1;
    std::memcpy(&v0, buf.data() + expected_head.size(), 4);
    std::memcpy(&v1, buf.data() + expected_head.size() + 4, 4);
    CHECK(v0 == 1.0f);
    CHECK(v1 == -2.0f);
    std::filesystem::remove(path);
}

TEST_CASE("malformed weight files fail with a byte offset") {
    const auto path = temp_file("sqa_malformed.aqsw");
    {
        std::ofstream out(path, std::ios::binary);
        out << "AQSW";
        const std::uint32_t version = 1, count = 1, namelen = 300;
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 4);
        out.write(reinterpret_cast<const char*>(&namelen), 4);
        out << "xy";  // truncated name
    }
    CHECK_THROWS_WITH_AS(load_weights(path.string()), doctest::Contains("byte offset"),
                         FormatError);

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_weights(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("assign_weights enforces name and shape agreement") {
    auto stored_t = make_tensor<float>({2, 2}, std::vector<float>{1, 2, 3, 4});
    auto dest_t = make_tensor<float>({2, 2});
    assign_weights({{"w", stored_t}}, {{"w", dest_t}});
    CHECK(dest_t->data == stored_t->data);

    auto wrong_shape = make_tensor<float>({4});
    CHECK_THROWS_AS(assign_weights({{"w", stored_t}}, {{"w", wrong_shape}}), FormatError);
    CHECK_THROWS_AS(assign_weights({{"w", stored_t}}, {{"other", dest_t}}), FormatError);
    CHECK_THROWS_AS(assign_weights({{"w", stored_t}, {"extra", stored_t}}, {{"w", dest_t}}),
                    FormatError);
}
