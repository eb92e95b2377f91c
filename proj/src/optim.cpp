#include "sqa/optim.hpp"

#include <cmath>

#include "sqa/error.hpp"
#include "sqa/parallel.hpp"

namespace sqa {

Adam::Adam(std::vector<TensorPtr<float>> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& p : params) {
        if (!p->requires_grad)
            throw UsageError("Adam: parameter does not require gradients");
        Slot s;
        s.param = p;
        s.m.assign(p->data.size(), 0.0f);
        s.v.assign(p->data.size(), 0.0f);
        slots_.push_back(std::move(s));
    }
}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(step_));
    const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(step_));
    for (auto& s : slots_) {
        auto& p = *s.param;
        p.ensure_grad();  // a parameter never touched by backward has zero gradient
        if (p.grad.size() != p.data.size())
            throw UsageError("Adam: gradient buffer shape mismatch");
        auto span = [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                const float g = p.grad[std::size_t(i)];
                s.m[std::size_t(i)] = cfg_.beta1 * s.m[std::size_t(i)] + (1.0f - cfg_.beta1) * g;
                s.v[std::size_t(i)] =
                    cfg_.beta2 * s.v[std::size_t(i)] + (1.0f - cfg_.beta2) * g * g;
                const float mhat = float(double(s.m[std::size_t(i)]) / bc1);
                const float vhat = float(double(s.v[std::size_t(i)]) / bc2);
                p.data[std::size_t(i)] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        };
        if (p.data.size() >= 65536)
            parallel_rows(std::int64_t(p.data.size()), span);
        else
            span(0, std::int64_t(p.data.size()));
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
}

}  // namespace sqa
