#pragma once

#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers are shaped like their parameters
// and the step counter advances by exactly one per update.
class Adam {
public:
    Adam(std::vector<TensorPtr<float>> params, AdamConfig cfg);

    // Applies one update from the parameters' accumulated gradients.
    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        TensorPtr<float> param;
        std::vector<float> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    std::int64_t step_ = 0;
};

}  // namespace sqa
