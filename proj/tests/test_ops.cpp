#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sqa/ops.hpp"
#include "sqa/rng.hpp"

using namespace sqa;

namespace {

// Direct nested-loop cross-correlation, the reference for conv2d.
template <typename T>
std::vector<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>* bias,
                           int stride, int padding, int dilation) {
    const std::int64_t B = x.dims[0], Cin = x.dims[1], H = x.dims[2], W = x.dims[3];
    const std::int64_t Cout = w.dims[0], K = w.dims[2];
    const std::int64_t OH = (H + 2 * padding - dilation * (K - 1) - 1) / stride + 1;
    const std::int64_t OW = (W + 2 * padding - dilation * (K - 1) - 1) / stride + 1;
    std::vector<T> out(std::size_t(B * Cout * OH * OW), T(0));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t oy = 0; oy < OH; ++oy)
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    T acc = bias ? (*bias)[std::size_t(co)] : T(0);
                    for (std::int64_t ci = 0; ci < Cin; ++ci)
                        for (std::int64_t ky = 0; ky < K; ++ky)
                            for (std::int64_t kx = 0; kx < K; ++kx) {
                                const std::int64_t iy = oy * stride - padding + ky * dilation;
                                const std::int64_t ix = ox * stride - padding + kx * dilation;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.data[std::size_t(((b * Cin + ci) * H + iy) * W + ix)] *
                                       w.data[std::size_t(((co * Cin + ci) * K + ky) * K + kx)];
                            }
                    out[std::size_t(((b * Cout + co) * OH + oy) * OW + ox)] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel passes input through") {
    Rng rng(1);
    auto x = randn_tensor<float>(rng, {1, 1, 5, 6});
    auto w = full_tensor<float>({1, 1, 1, 1}, 1.0f);
    auto y = conv2d<float>(nullptr, x, w, nullptr, {});
    REQUIRE(y->dims == x->dims);
    for (std::size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("conv2d all-ones 3x3 kernel on constant input gives 9c") {
    const float c = 0.37f;
    auto x = full_tensor<float>({1, 1, 6, 6}, c);
    auto w = full_tensor<float>({1, 1, 3, 3}, 1.0f);
    auto y = conv2d<float>(nullptr, x, w, nullptr, {});
    REQUIRE(y->dims == std::vector<std::int64_t>{1, 1, 4, 4});
    for (float v : y->data) CHECK(v == doctest::Approx(9.0f * c).epsilon(1e-6));
}

TEST_CASE("conv2d with stride 2 and dilation 2 matches the nested-loop oracle") {
    Rng rng(2);
    auto x = randn_tensor<double>(rng, {2, 3, 7, 7});
    auto w = randn_tensor<double>(rng, {4, 3, 3, 3});
    auto b = randn_tensor<double>(rng, {4});
    Conv2dSpec spec;
    spec.stride = 2;
    spec.dilation = 2;
    auto y = conv2d<double>(nullptr, x, w, b, spec);
    auto ref = conv_oracle<double>(*x, *w, &b->data, 2, 0, 2);
    REQUIRE(y->data.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(std::abs(y->data[i] - ref[i]) < 1e-6);
}

TEST_CASE("dilated conv with matching padding preserves extent and matches oracle") {
    Rng rng(3);
    for (int rate : {2, 6}) {
        auto x = randn_tensor<double>(rng, {1, 3, 16, 16});
        auto w = randn_tensor<double>(rng, {2, 3, 3, 3});
        Conv2dSpec spec;
        spec.dilation = rate;
        spec.padding = rate;
        auto y = conv2d<double>(nullptr, x, w, nullptr, spec);
        CHECK(y->dim(2) == 16);
        CHECK(y->dim(3) == 16);
        auto ref = conv_oracle<double>(*x, *w, nullptr, 1, rate, rate);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(y->data[i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("conv2d rejects mismatched and degenerate configurations") {
    auto x = make_tensor<float>({1, 3, 8, 8});
    auto w = make_tensor<float>({4, 4, 3, 3});
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, w, nullptr, {}), ShapeError);
    auto w2 = make_tensor<float>({4, 3, 9, 9});
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, w2, nullptr, {}), ConfigError);
}

TEST_CASE("bilinear_resize to the same extents is exact identity") {
    Rng rng(4);
    auto x = randn_tensor<float>(rng, {2, 3, 5, 7});
    auto y = bilinear_resize<float>(nullptr, x, 5, 7);
    for (std::size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("bilinear_resize of a constant stays constant") {
    auto x = full_tensor<float>({1, 2, 3, 3}, 1.25f);
    auto y = bilinear_resize<float>(nullptr, x, 8, 5);
    for (float v : y->data) CHECK(v == doctest::Approx(1.25f).epsilon(1e-7));
}

TEST_CASE("bilinear_resize 2x2 to 4x4 matches the half-pixel closed form") {
    auto x = make_tensor<float>({1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
    auto y = bilinear_resize<float>(nullptr, x, 4, 4);
    // per-pixel closed-form oracle with half-pixel centers and edge clamping
    auto sample1d = [](double o) {
        double s = (o + 0.5) * 0.5 - 0.5;
        return std::min(std::max(s, 0.0), 1.0);
    };
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
            const double sy = sample1d(oy), sx = sample1d(ox);
            const double expected = 2.0 * sy + sx;  // value field v(y,x) = 2y + x
            CHECK(y->data[std::size_t(oy * 4 + ox)] ==
                  doctest::Approx(float(expected)).epsilon(1e-6));
        }
}

TEST_CASE("attention over a single token reduces to the projection chain") {
    Rng rng(5);
    const std::int64_t d = 6;
    auto tokens = randn_tensor<double>(rng, {1, 1, d});
    MhsaParams<double> p;
    p.wq = randn_tensor<double>(rng, {d, d});
    p.bq = randn_tensor<double>(rng, {d});
    p.wk = randn_tensor<double>(rng, {d, d});
    p.bk = randn_tensor<double>(rng, {d});
    p.wv = randn_tensor<double>(rng, {d, d});
    p.bv = randn_tensor<double>(rng, {d});
    p.wo = randn_tensor<double>(rng, {d, d});
    p.bo = randn_tensor<double>(rng, {d});
    auto y = multi_head_self_attention<double>(nullptr, tokens, p, 2);

    // softmax over one element is exactly 1, so out = Wo (Wv x + bv) + bo
    std::vector<double> v(std::size_t(d), 0.0), expect(std::size_t(d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) {
        double acc = p.bv->data[std::size_t(i)];
        for (std::int64_t j = 0; j < d; ++j)
            acc += p.wv->data[std::size_t(i * d + j)] * tokens->data[std::size_t(j)];
        v[std::size_t(i)] = acc;
    }
    for (std::int64_t i = 0; i < d; ++i) {
        double acc = p.bo->data[std::size_t(i)];
        for (std::int64_t j = 0; j < d; ++j) acc += p.wo->data[std::size_t(i * d + j)] * v[std::size_t(j)];
        expect[std::size_t(i)] = acc;
    }
    for (std::int64_t i = 0; i < d; ++i)
        CHECK(y->data[std::size_t(i)] == doctest::Approx(expect[std::size_t(i)]).epsilon(1e-9));
}

TEST_CASE("attention matches an explicit small-matrix oracle") {
    Rng rng(6);
    const std::int64_t n = 3, d = 4;
    const int heads = 2;
    const std::int64_t dh = d / heads;
    auto tokens = randn_tensor<double>(rng, {1, n, d});
    MhsaParams<double> p;
    p.wq = randn_tensor<double>(rng, {d, d});
    p.bq = randn_tensor<double>(rng, {d});
    p.wk = randn_tensor<double>(rng, {d, d});
    p.bk = randn_tensor<double>(rng, {d});
    p.wv = randn_tensor<double>(rng, {d, d});
    p.bv = randn_tensor<double>(rng, {d});
    p.wo = randn_tensor<double>(rng, {d, d});
    p.bo = randn_tensor<double>(rng, {d});
    auto y = multi_head_self_attention<double>(nullptr, tokens, p, heads);

    // oracle: materialize Q,K,V row by row, per-head softmax, weighted sum
    auto project = [&](const TensorPtr<double>& w, const TensorPtr<double>& b) {
        std::vector<double> out(std::size_t(n * d), 0.0);
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t i = 0; i < d; ++i) {
                double acc = b->data[std::size_t(i)];
                for (std::int64_t j = 0; j < d; ++j)
                    acc += w->data[std::size_t(i * d + j)] * tokens->data[std::size_t(r * d + j)];
                out[std::size_t(r * d + i)] = acc;
            }
        return out;
    };
    const auto q = project(p.wq, p.bq), k = project(p.wk, p.bk), v = project(p.wv, p.bv);

    std::vector<double> ctx(std::size_t(n * d), 0.0);
    for (int h = 0; h < heads; ++h) {
        const std::int64_t off = h * dh;
        for (std::int64_t r = 0; r < n; ++r) {
            std::vector<double> row(std::size_t(n), 0.0);
            for (std::int64_t c = 0; c < n; ++c) {
                double s = 0.0;
                for (std::int64_t j = 0; j < dh; ++j)
                    s += q[std::size_t(r * d + off + j)] * k[std::size_t(c * d + off + j)];
                row[std::size_t(c)] = s / std::sqrt(double(dh));
            }
            const double mx = *std::max_element(row.begin(), row.end());
            double denom = 0.0;
            for (auto& s : row) {
                s = std::exp(s - mx);
                denom += s;
            }
            double rowsum = 0.0;
            for (auto& s : row) {
                s /= denom;
                rowsum += s;
            }
            CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));  // row-stochastic
            for (std::int64_t j = 0; j < dh; ++j) {
                double acc = 0.0;
                for (std::int64_t c = 0; c < n; ++c)
                    acc += row[std::size_t(c)] * v[std::size_t(c * d + off + j)];
                ctx[std::size_t(r * d + off + j)] = acc;
            }
        }
    }
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t i = 0; i < d; ++i) {
            double acc = p.bo->data[std::size_t(i)];
            for (std::int64_t j = 0; j < d; ++j)
                acc += p.wo->data[std::size_t(i * d + j)] * ctx[std::size_t(r * d + j)];
            CHECK(y->data[std::size_t(r * d + i)] == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("attention requires the head count to divide the embed dim") {
    auto tokens = make_tensor<float>({1, 2, 6});
    MhsaParams<float> p;
    p.wq = make_tensor<float>({6, 6});
    p.bq = make_tensor<float>({6});
    p.wk = make_tensor<float>({6, 6});
    p.bk = make_tensor<float>({6});
    p.wv = make_tensor<float>({6, 6});
    p.bv = make_tensor<float>({6});
    p.wo = make_tensor<float>({6, 6});
    p.bo = make_tensor<float>({6});
    CHECK_THROWS_AS(multi_head_self_attention<float>(nullptr, tokens, p, 4), ConfigError);
}

TEST_CASE("csam with zeroed attention parameters scales input by exactly 1/4") {
    Rng rng(7);
    auto x = randn_tensor<float>(rng, {2, 8, 4, 4});
    CsamWeights<float> w;
    w.mlp_w1 = make_tensor<float>({1, 8, 1, 1});
    w.mlp_b1 = make_tensor<float>({1});
    w.mlp_w2 = make_tensor<float>({8, 1, 1, 1});
    w.mlp_b2 = make_tensor<float>({8});
    w.spatial_w = make_tensor<float>({1, 2, 7, 7});
    w.spatial_b = make_tensor<float>({1});
    auto y = csam<float>(nullptr, x, w);
    // zero logits: sigmoid(0) = 0.5 at both stages, and 0.25*x is exact
    for (std::size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == 0.25f * x->data[i]);
}

TEST_CASE("csam matches a hand-rolled oracle on a tiny tensor") {
    Rng rng(8);
    const std::int64_t c = 4, cr = 2, hh = 2, ww = 2;
    auto x = randn_tensor<double>(rng, {1, c, hh, ww});
    CsamWeights<double> w;
    w.mlp_w1 = randn_tensor<double>(rng, {cr, c, 1, 1});
    w.mlp_b1 = randn_tensor<double>(rng, {cr});
    w.mlp_w2 = randn_tensor<double>(rng, {c, cr, 1, 1});
    w.mlp_b2 = randn_tensor<double>(rng, {c});
    w.spatial_w = randn_tensor<double>(rng, {1, 2, 7, 7});
    w.spatial_b = randn_tensor<double>(rng, {1});
    auto y = csam<double>(nullptr, x, w);

    const std::int64_t hw = hh * ww;
    auto sigmoidv = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto mlp = [&](const std::vector<double>& pooled) {
        std::vector<double> hid(std::size_t(cr), 0.0);
        for (std::int64_t i = 0; i < cr; ++i) {
            double acc = w.mlp_b1->data[std::size_t(i)];
            for (std::int64_t j = 0; j < c; ++j)
                acc += w.mlp_w1->data[std::size_t(i * c + j)] * pooled[std::size_t(j)];
            hid[std::size_t(i)] = std::max(acc, 0.0);
        }
        std::vector<double> out(std::size_t(c), 0.0);
        for (std::int64_t i = 0; i < c; ++i) {
            double acc = w.mlp_b2->data[std::size_t(i)];
            for (std::int64_t j = 0; j < cr; ++j)
                acc += w.mlp_w2->data[std::size_t(i * cr + j)] * hid[std::size_t(j)];
            out[std::size_t(i)] = acc;
        }
        return out;
    };
    std::vector<double> avg(std::size_t(c), 0.0), mx(std::size_t(c), 0.0);
    for (std::int64_t ci = 0; ci < c; ++ci) {
        double s = 0.0, m = x->data[std::size_t(ci * hw)];
        for (std::int64_t i = 0; i < hw; ++i) {
            const double v = x->data[std::size_t(ci * hw + i)];
            s += v;
            m = std::max(m, v);
        }
        avg[std::size_t(ci)] = s / double(hw);
        mx[std::size_t(ci)] = m;
    }
    const auto a1 = mlp(avg), a2 = mlp(mx);
    std::vector<double> xc(std::size_t(c * hw), 0.0);
    for (std::int64_t ci = 0; ci < c; ++ci) {
        const double gate = sigmoidv(a1[std::size_t(ci)] + a2[std::size_t(ci)]);
        for (std::int64_t i = 0; i < hw; ++i)
            xc[std::size_t(ci * hw + i)] = x->data[std::size_t(ci * hw + i)] * gate;
    }
    for (std::int64_t py = 0; py < hh; ++py)
        for (std::int64_t px = 0; px < ww; ++px) {
            double meanc = 0.0, maxc = xc[std::size_t(py * ww + px)];
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const double v = xc[std::size_t(ci * hw + py * ww + px)];
                meanc += v;
                maxc = std::max(maxc, v);
            }
            meanc /= double(c);
            double acc = w.spatial_b->data[0];
            for (std::int64_t ky = 0; ky < 7; ++ky)
                for (std::int64_t kx = 0; kx < 7; ++kx) {
                    const std::int64_t iy = py - 3 + ky, ix = px - 3 + kx;
                    if (iy < 0 || iy >= hh || ix < 0 || ix >= ww) continue;
                    double meann = 0.0, maxn = xc[std::size_t(iy * ww + ix)];
                    for (std::int64_t ci = 0; ci < c; ++ci) {
                        const double v = xc[std::size_t(ci * hw + iy * ww + ix)];
                        meann += v;
                        maxn = std::max(maxn, v);
                    }
                    meann /= double(c);
                    acc += w.spatial_w->data[std::size_t(ky * 7 + kx)] * meann +
                           w.spatial_w->data[std::size_t(49 + ky * 7 + kx)] * maxn;
                }
            const double gate = sigmoidv(acc);
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const double expected = xc[std::size_t(ci * hw + py * ww + px)] * gate;
                CHECK(y->data[std::size_t(ci * hw + py * ww + px)] ==
                      doctest::Approx(expected).epsilon(1e-6));
            }
        }
}

TEST_CASE("csam attention multipliers stay strictly inside (0,1)") {
    Rng rng(9);
    auto x = randn_tensor<float>(rng, {1, 8, 4, 4});
    CsamWeights<float> w;
    w.mlp_w1 = randn_tensor<float>(rng, {1, 8, 1, 1});
    w.mlp_b1 = randn_tensor<float>(rng, {1});
    w.mlp_w2 = randn_tensor<float>(rng, {8, 1, 1, 1});
    w.mlp_b2 = randn_tensor<float>(rng, {8});
    w.spatial_w = randn_tensor<float>(rng, {1, 2, 7, 7});
    w.spatial_b = randn_tensor<float>(rng, {1});
    auto y = csam<float>(nullptr, x, w);
    // gates in (0,1) mean |y| < |x| wherever x is nonzero
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        if (x->data[i] == 0.0f) continue;
        CHECK(std::abs(y->data[i]) < std::abs(x->data[i]));
        CHECK(y->data[i] * x->data[i] > 0.0f);  // same sign: gates are positive
    }
}
