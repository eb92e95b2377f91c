#include "sqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>

#include "sqa/ops.hpp"
#include "sqa/rng.hpp"

namespace sqa {

namespace {

using D = double;
using Inputs = std::vector<TensorPtr<D>>;
using OpFn = std::function<TensorPtr<D>(Tape<D>*, const Inputs&)>;

TensorPtr<D> rand_uniform(Rng& rng, std::vector<std::int64_t> dims, double lo, double hi,
                          bool rg) {
    auto t = make_tensor<D>(std::move(dims), rg);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Values nudged off the relu kink so finite differences stay one-sided-free.
TensorPtr<D> rand_off_kink(Rng& rng, std::vector<std::int64_t> dims, bool rg) {
    auto t = rand_uniform(rng, std::move(dims), -1.0, 1.0, rg);
    for (auto& v : t->data)
        if (std::abs(v) < 0.1) v += v >= 0 ? 0.2 : -0.2;
    return t;
}

// Pairwise-distinct values with gaps far wider than the probe step, so argmax
// selections cannot flip under perturbation.
TensorPtr<D> rand_distinct(Rng& rng, std::vector<std::int64_t> dims, bool rg) {
    auto t = make_tensor<D>(std::move(dims), rg);
    const std::size_t n = t->data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    rng.shuffle(order);
    for (std::size_t i = 0; i < n; ++i)
        t->data[i] = 0.05 * double(order[i]) + rng.uniform(0.0, 0.02) - 0.5;
    return t;
}

TensorPtr<D> rand_labels(Rng& rng, std::vector<std::int64_t> dims, std::int64_t classes) {
    auto t = make_tensor<D>(std::move(dims));
    for (auto& v : t->data) v = double(rng.uniform_int(0, classes - 1));
    return t;
}

double contract(const TensorPtr<D>& y, const TensorPtr<D>& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y->data.size(); ++i) acc += y->data[i] * r->data[i];
    return acc;
}

// One randomized trial: analytic gradients via the tape vs central finite
// differences of the R-weighted scalar contraction.
double run_trial(const OpFn& fn, Inputs inputs, Rng& rng, double h) {
    auto probe = fn(nullptr, inputs);
    auto r = rand_uniform(rng, probe->dims, -1.0, 1.0, false);

    Tape<D> tape;
    auto y = fn(&tape, inputs);
    auto loss = reduce_sum_all(&tape, mul(&tape, y, r));
    tape.backward(loss);

    std::vector<std::vector<D>> analytic;
    for (auto& in : inputs) {
        if (!in || !in->requires_grad) {
            analytic.emplace_back();
            continue;
        }
        in->ensure_grad();
        analytic.push_back(in->grad);
    }

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& in = inputs[i];
        if (!in || !in->requires_grad) continue;
        for (std::size_t j = 0; j < in->data.size(); ++j) {
            const double saved = in->data[j];
            in->data[j] = saved + h;
            const double up = contract(fn(nullptr, inputs), r);
            in->data[j] = saved - h;
            const double dn = contract(fn(nullptr, inputs), r);
            in->data[j] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double an = analytic[i][j];
            const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

struct CheckCase {
    const char* name;
    std::function<double(Rng&, double)> trial;
};

std::vector<CheckCase> build_cases() {
    std::vector<CheckCase> cases;
    auto push = [&](const char* name, std::function<double(Rng&, double)> t) {
        cases.push_back({name, std::move(t)});
    };

    push("conv2d", [](Rng& rng, double h) {
        const std::int64_t b = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 3);
        const std::int64_t cout = rng.uniform_int(1, 3), k = rng.uniform_int(1, 3);
        Conv2dSpec spec;
        spec.stride = int(rng.uniform_int(1, 2));
        spec.dilation = int(rng.uniform_int(1, 2));
        spec.padding = int(rng.uniform_int(0, 2));
        const std::int64_t hw = 4 + k * spec.dilation + rng.uniform_int(0, 3);
        auto x = rand_uniform(rng, {b, cin, hw, hw}, -1, 1, true);
        auto w = rand_uniform(rng, {cout, cin, k, k}, -1, 1, true);
        auto bias = rand_uniform(rng, {cout}, -1, 1, true);
        return run_trial(
            [spec](Tape<D>* t, const Inputs& in) { return conv2d(t, in[0], in[1], in[2], spec); },
            {x, w, bias}, rng, h);
    });

    push("bilinear_resize", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 2, rng.uniform_int(2, 6), rng.uniform_int(2, 6)}, -1, 1, true);
        const std::int64_t oh = rng.uniform_int(1, 8), ow = rng.uniform_int(1, 8);
        return run_trial(
            [oh, ow](Tape<D>* t, const Inputs& in) { return bilinear_resize(t, in[0], oh, ow); },
            {x}, rng, h);
    });

    push("multi_head_self_attention", [](Rng& rng, double h) {
        const std::int64_t b = rng.uniform_int(1, 2), n = rng.uniform_int(2, 4), d = 4;
        const int heads = rng.bernoulli(0.5) ? 2 : 1;
        auto tokens = rand_uniform(rng, {b, n, d}, -1, 1, true);
        Inputs ins{tokens};
        for (int i = 0; i < 4; ++i) {
            ins.push_back(rand_uniform(rng, {d, d}, -0.7, 0.7, true));
            ins.push_back(rand_uniform(rng, {d}, -0.3, 0.3, true));
        }
        return run_trial(
            [heads](Tape<D>* t, const Inputs& in) {
                MhsaParams<D> p{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
                return multi_head_self_attention(t, in[0], p, heads);
            },
            ins, rng, h);
    });

    push("linear", [](Rng& rng, double h) {
        const std::int64_t din = rng.uniform_int(2, 5), dout = rng.uniform_int(2, 5);
        auto x = rand_uniform(rng, {2, 3, din}, -1, 1, true);
        auto w = rand_uniform(rng, {dout, din}, -1, 1, true);
        auto b = rand_uniform(rng, {dout}, -1, 1, true);
        return run_trial(
            [](Tape<D>* t, const Inputs& in) { return linear(t, in[0], in[1], in[2]); },
            {x, w, b}, rng, h);
    });

    push("bmm", [](Rng& rng, double h) {
        const bool tb = rng.bernoulli(0.5);
        const std::int64_t g = 2, m = rng.uniform_int(2, 4), k = rng.uniform_int(2, 4),
                           n = rng.uniform_int(2, 4);
        auto a = rand_uniform(rng, {g, m, k}, -1, 1, true);
        auto b = tb ? rand_uniform(rng, {g, n, k}, -1, 1, true)
                    : rand_uniform(rng, {g, k, n}, -1, 1, true);
        return run_trial([tb](Tape<D>* t, const Inputs& in) { return bmm(t, in[0], in[1], tb); },
                         {a, b}, rng, h);
    });

    auto push_binary = [&push](const char* name, auto opfn, double blo, double bhi) {
        push(name, [opfn, blo, bhi](Rng& rng, double h) {
            auto a = rand_uniform(rng, {2, 3, 4}, -1, 1, true);
            auto b = rand_uniform(rng, {2, 3, 4}, blo, bhi, true);
            return run_trial(
                [opfn](Tape<D>* t, const Inputs& in) { return opfn(t, in[0], in[1]); }, {a, b},
                rng, h);
        });
    };
    push_binary("add", [](Tape<D>* t, const TensorPtr<D>& a, const TensorPtr<D>& b) { return add(t, a, b); }, -1, 1);
    push_binary("sub", [](Tape<D>* t, const TensorPtr<D>& a, const TensorPtr<D>& b) { return sub(t, a, b); }, -1, 1);
    push_binary("mul", [](Tape<D>* t, const TensorPtr<D>& a, const TensorPtr<D>& b) { return mul(t, a, b); }, -1, 1);
    push_binary("div", [](Tape<D>* t, const TensorPtr<D>& a, const TensorPtr<D>& b) { return div(t, a, b); }, 0.5, 1.5);

    push("add_broadcast", [](Rng& rng, double h) {
        auto a = rand_uniform(rng, {2, 3, 2, 2}, -1, 1, true);
        auto b = rand_uniform(rng, {1, 3, 1, 1}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return add(t, in[0], in[1]); }, {a, b},
                         rng, h);
    });
    push("mul_broadcast", [](Rng& rng, double h) {
        auto a = rand_uniform(rng, {2, 3, 2, 2}, -1, 1, true);
        const bool spatial = rng.bernoulli(0.5);
        auto b = spatial ? rand_uniform(rng, {2, 1, 2, 2}, -1, 1, true)
                         : rand_uniform(rng, {2, 3, 1, 1}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return mul(t, in[0], in[1]); }, {a, b},
                         rng, h);
    });

    push("affine", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {3, 4}, -1, 1, true);
        const double al = rng.uniform(-2, 2), be = rng.uniform(-1, 1);
        return run_trial(
            [al, be](Tape<D>* t, const Inputs& in) { return affine(t, in[0], al, be); }, {x}, rng,
            h);
    });

    push("relu", [](Rng& rng, double h) {
        auto x = rand_off_kink(rng, {2, 3, 4}, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return relu(t, in[0]); }, {x}, rng, h);
    });
    push("gelu", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 4}, -2, 2, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return gelu(t, in[0]); }, {x}, rng, h);
    });
    push("sigmoid", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 4}, -3, 3, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return sigmoid(t, in[0]); }, {x}, rng,
                         h);
    });
    push("log", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 4}, 0.5, 2.0, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return log(t, in[0]); }, {x}, rng, h);
    });

    push("softmax", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 2, 2}, -2, 2, true);
        const int axis = int(rng.uniform_int(0, 3));
        return run_trial(
            [axis](Tape<D>* t, const Inputs& in) { return softmax(t, in[0], axis); }, {x}, rng, h);
    });

    push("concat", [](Rng& rng, double h) {
        auto a = rand_uniform(rng, {2, 2, 3, 3}, -1, 1, true);
        auto b = rand_uniform(rng, {2, 3, 3, 3}, -1, 1, true);
        auto c = rand_uniform(rng, {2, 1, 3, 3}, -1, 1, true);
        return run_trial(
            [](Tape<D>* t, const Inputs& in) { return concat<D>(t, {in[0], in[1], in[2]}, 1); },
            {a, b, c}, rng, h);
    });
    push("split", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 6, 2, 2}, -1, 1, true);
        const std::size_t piece = std::size_t(rng.uniform_int(0, 2));
        return run_trial(
            [piece](Tape<D>* t, const Inputs& in) {
                return split(t, in[0], 1, {2, 3, 1})[piece];
            },
            {x}, rng, h);
    });

    push("batch_norm", [](Rng& rng, double h) {
        const bool training = !rng.bernoulli(0.25);
        auto x = rand_uniform(rng, {3, 2, 2, 2}, -1, 1, true);
        auto gamma = rand_uniform(rng, {2}, 0.5, 1.5, true);
        auto beta = rand_uniform(rng, {2}, -0.5, 0.5, true);
        auto rm = rand_uniform(rng, {2}, -0.2, 0.2, false);
        auto rv = rand_uniform(rng, {2}, 0.8, 1.2, false);
        return run_trial(
            [rm, rv, training](Tape<D>* t, const Inputs& in) {
                // fresh running buffers per eval so repeated forwards agree
                auto rm2 = make_tensor<D>(rm->dims, rm->data);
                auto rv2 = make_tensor<D>(rv->dims, rv->data);
                return batch_norm(t, in[0], in[1], in[2], rm2, rv2, 0.1, 1e-5, training);
            },
            {x, gamma, beta}, rng, h);
    });

    push("layer_norm", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 5}, -1, 1, true);
        auto gamma = rand_uniform(rng, {5}, 0.5, 1.5, true);
        auto beta = rand_uniform(rng, {5}, -0.5, 0.5, true);
        return run_trial(
            [](Tape<D>* t, const Inputs& in) { return layer_norm(t, in[0], in[1], in[2], 1e-5); },
            {x, gamma, beta}, rng, h);
    });

    push("global_avg_pool", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 3, 4}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return global_avg_pool(t, in[0]); },
                         {x}, rng, h);
    });
    push("global_max_pool", [](Rng& rng, double h) {
        auto x = rand_distinct(rng, {2, 3, 3, 4}, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return global_max_pool(t, in[0]); },
                         {x}, rng, h);
    });
    push("max_pool2d", [](Rng& rng, double h) {
        auto x = rand_distinct(rng, {2, 2, 6, 6}, true);
        const bool stem_style = rng.bernoulli(0.5);
        return run_trial(
            [stem_style](Tape<D>* t, const Inputs& in) {
                return stem_style ? max_pool2d(t, in[0], 3, 2, 1) : max_pool2d(t, in[0], 2, 2, 0);
            },
            {x}, rng, h);
    });
    push("channel_mean", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 4, 3, 3}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return channel_mean(t, in[0]); }, {x},
                         rng, h);
    });
    push("channel_max", [](Rng& rng, double h) {
        auto x = rand_distinct(rng, {2, 4, 3, 3}, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return channel_max(t, in[0]); }, {x},
                         rng, h);
    });

    push("permute", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 4, 5}, -1, 1, true);
        std::vector<int> perm{0, 1, 2, 3};
        rng.shuffle(perm);
        return run_trial(
            [perm](Tape<D>* t, const Inputs& in) { return permute(t, in[0], perm); }, {x}, rng, h);
    });
    push("reshape", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 4}, -1, 1, true);
        return run_trial(
            [](Tape<D>* t, const Inputs& in) { return reshape(t, in[0], {4, 6}); }, {x}, rng, h);
    });

    push("reduce_sum_all", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {3, 4, 5}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return reduce_sum_all(t, in[0]); },
                         {x}, rng, h);
    });
    push("reduce_mean_all", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {3, 4, 5}, -1, 1, true);
        return run_trial([](Tape<D>* t, const Inputs& in) { return reduce_mean_all(t, in[0]); },
                         {x}, rng, h);
    });
    push("reduce_sum_channelwise", [](Rng& rng, double h) {
        auto x = rand_uniform(rng, {2, 3, 3, 3}, -1, 1, true);
        return run_trial(
            [](Tape<D>* t, const Inputs& in) { return reduce_sum_channelwise(t, in[0]); }, {x},
            rng, h);
    });

    push("csam", [](Rng& rng, double h) {
        const std::int64_t c = 4, cr = 2;
        auto x = rand_distinct(rng, {1, c, 3, 3}, true);
        CsamWeights<D> w;
        Inputs ins{x,
                   rand_uniform(rng, {cr, c, 1, 1}, -0.7, 0.7, true),
                   rand_uniform(rng, {cr}, -0.3, 0.3, true),
                   rand_uniform(rng, {c, cr, 1, 1}, -0.7, 0.7, true),
                   rand_uniform(rng, {c}, -0.3, 0.3, true),
                   rand_uniform(rng, {1, 2, 7, 7}, -0.3, 0.3, true),
                   rand_uniform(rng, {1}, -0.3, 0.3, true)};
        return run_trial(
            [](Tape<D>* t, const Inputs& in) {
                CsamWeights<D> w{in[1], in[2], in[3], in[4], in[5], in[6]};
                return csam(t, in[0], w);
            },
            ins, rng, h);
    });

    push("softmax_cross_entropy", [](Rng& rng, double h) {
        auto logits = rand_uniform(rng, {2, 3, 3, 3}, -2, 2, true);
        auto labels = rand_labels(rng, {2, 3, 3}, 3);
        return run_trial(
            [labels](Tape<D>* t, const Inputs& in) {
                return softmax_cross_entropy(t, in[0], labels);
            },
            {logits}, rng, h);
    });
    push("dice_loss", [](Rng& rng, double h) {
        auto logits = rand_uniform(rng, {2, 3, 3, 3}, -2, 2, true);
        auto labels = rand_labels(rng, {2, 3, 3}, 3);
        return run_trial(
            [labels](Tape<D>* t, const Inputs& in) { return dice_loss(t, in[0], labels, 1.0); },
            {logits}, rng, h);
    });

    return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int trials, double step,
                                                 double tolerance) {
    std::vector<GradCheckResult> results;
    const auto cases = build_cases();
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        GradCheckResult res;
        res.op = cases[ci].name;
        res.trials = trials;
        for (int t = 0; t < trials; ++t) {
            Rng rng = Rng::for_stream(seed, ci * 1009 + std::uint64_t(t));
            res.max_rel_err = std::max(res.max_rel_err, cases[ci].trial(rng, step));
        }
        res.pass = res.max_rel_err < tolerance;
        results.push_back(std::move(res));
    }
    return results;
}

bool report_gradcheck(std::ostream& os, const std::vector<GradCheckResult>& results) {
    bool all = true;
    for (const auto& r : results) {
        os << (r.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(26) << r.op
           << " trials=" << r.trials << "  max_rel_err=" << std::scientific
           << std::setprecision(3) << r.max_rel_err << std::defaultfloat << "\n";
        all = all && r.pass;
    }
    return all;
}

}  // namespace sqa
