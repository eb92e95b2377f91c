#pragma once

#include <string>
#include <vector>

#include "sqa/ops.hpp"
#include "sqa/weights_io.hpp"

namespace sqa {

using FTensor = TensorPtr<float>;
using FTape = Tape<float>;

// Gathers a module tree's tensors under dotted names. Buffers (running
// statistics) persist to weight files but never reach the optimizer.
struct ParamCollector {
    std::vector<NamedTensor> named;
    std::vector<FTensor> trainable;

    void param(const std::string& name, const FTensor& t) {
        named.push_back({name, t});
        if (t->requires_grad) trainable.push_back(t);
    }
    void buffer(const std::string& name, const FTensor& t) { named.push_back({name, t}); }
};

// He-normal weight, zero bias. Frozen layers opt out of gradients entirely.
inline FTensor he_conv_weight(Rng& rng, std::int64_t cout, std::int64_t cin, int k, bool frozen) {
    const double stddev = std::sqrt(2.0 / double(cin * k * k));
    return randn_tensor<float>(rng, {cout, cin, k, k}, stddev, !frozen);
}

struct ConvLayer {
    FTensor w, b;
    Conv2dSpec spec;

    void init(Rng& rng, std::int64_t cout, std::int64_t cin, int k, bool bias, Conv2dSpec s,
              bool frozen = false) {
        w = he_conv_weight(rng, cout, cin, k, frozen);
        b = bias ? make_tensor<float>({cout}, !frozen) : nullptr;
        spec = s;
    }
    FTensor forward(FTape* tape, const FTensor& x) const { return conv2d(tape, x, w, b, spec); }
    FTensor forward(FTape* tape, const FTensor& x, const Conv2dSpec& override_spec) const {
        return conv2d(tape, x, w, b, override_spec);
    }
    void collect(const std::string& prefix, ParamCollector& pc) const {
        pc.param(prefix + ".weight", w);
        if (b) pc.param(prefix + ".bias", b);
    }
    std::int64_t param_count() const { return w->numel() + (b ? b->numel() : 0); }
};

struct BatchNormLayer {
    FTensor gamma, beta, running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    void init(std::int64_t ch, bool frozen = false) {
        gamma = full_tensor<float>({ch}, 1.0f, !frozen);
        beta = make_tensor<float>({ch}, !frozen);
        running_mean = make_tensor<float>({ch});
        running_var = full_tensor<float>({ch}, 1.0f);
    }
    FTensor forward(FTape* tape, const FTensor& x, bool training) const {
        return batch_norm(tape, x, gamma, beta, running_mean, running_var, momentum, eps,
                          training);
    }
    void collect(const std::string& prefix, ParamCollector& pc) const {
        pc.param(prefix + ".gamma", gamma);
        pc.param(prefix + ".beta", beta);
        pc.buffer(prefix + ".running_mean", running_mean);
        pc.buffer(prefix + ".running_var", running_var);
    }
    std::int64_t param_count() const { return gamma->numel() + beta->numel(); }
};

struct LinearLayer {
    FTensor w, b;

    void init(Rng& rng, std::int64_t dout, std::int64_t din, bool frozen = false) {
        const double stddev = std::sqrt(2.0 / double(din));
        w = randn_tensor<float>(rng, {dout, din}, stddev, !frozen);
        b = make_tensor<float>({dout}, !frozen);
    }
    FTensor forward(FTape* tape, const FTensor& x) const { return linear(tape, x, w, b); }
    void collect(const std::string& prefix, ParamCollector& pc) const {
        pc.param(prefix + ".weight", w);
        pc.param(prefix + ".bias", b);
    }
    std::int64_t param_count() const { return w->numel() + b->numel(); }
};

struct LayerNormLayer {
    FTensor gamma, beta;
    double eps = 1e-5;

    void init(std::int64_t d, bool frozen = false) {
        gamma = full_tensor<float>({d}, 1.0f, !frozen);
        beta = make_tensor<float>({d}, !frozen);
    }
    FTensor forward(FTape* tape, const FTensor& x) const {
        return layer_norm(tape, x, gamma, beta, eps);
    }
    void collect(const std::string& prefix, ParamCollector& pc) const {
        pc.param(prefix + ".gamma", gamma);
        pc.param(prefix + ".beta", beta);
    }
    std::int64_t param_count() const { return gamma->numel() + beta->numel(); }
};

// FNV-1a over the raw float bytes of every tensor whose name starts with the
// prefix; the frozen-backbone invariant checks compare these digests.
std::uint64_t hash_tensors(const std::vector<NamedTensor>& named, const std::string& prefix);

}  // namespace sqa
