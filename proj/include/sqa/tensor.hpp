#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sqa/error.hpp"
#include "sqa/rng.hpp"

namespace sqa {

// Dense rank-N array in (batch, channel, height, width) layout for images,
// with an optional gradient buffer of identical shape. Values are mutated
// only at construction time and through explicit optimizer updates.
template <typename T>
struct Tensor {
    std::vector<std::int64_t> dims;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until the first backward touch

    std::int64_t numel() const { return std::int64_t(data.size()); }
    std::int64_t dim(std::size_t i) const { return dims.at(i); }
    std::size_t rank() const { return dims.size(); }

    void ensure_grad() {
        if (requires_grad && grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
std::int64_t shape_numel(const std::vector<std::int64_t>& dims) {
    std::int64_t n = 1;
    for (auto d : dims) {
        if (d <= 0) throw ShapeError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

template <typename T>
std::string shape_str(const std::vector<std::int64_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> dims, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    const std::int64_t n = shape_numel<T>(dims);
    t->dims = std::move(dims);
    t->data.assign(std::size_t(n), T(0));
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> dims, std::vector<T> values,
                         bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    const std::int64_t n = shape_numel<T>(dims);
    if (n != std::int64_t(values.size()))
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str<T>(dims));
    t->dims = std::move(dims);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> full_tensor(std::vector<std::int64_t> dims, T value, bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(dims), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

template <typename T>
TensorPtr<T> randn_tensor(Rng& rng, std::vector<std::int64_t> dims, double stddev = 1.0,
                          bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(dims), requires_grad);
    for (auto& v : t->data) v = T(rng.normal() * stddev);
    return t;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(double(v))) return false;
    return true;
}

template <typename T>
bool same_dims(const Tensor<T>& a, const Tensor<T>& b) {
    return a.dims == b.dims;
}

// Record of one executed operation: the inputs it read, the output it
// produced and the rule that pushes the output's gradient back to them.
// Records are appended in execution order, so inputs always precede their
// consumers and the list is trivially acyclic.
template <typename T>
class Tape {
public:
    struct Node {
        const char* op;
        std::vector<TensorPtr<T>> inputs;
        TensorPtr<T> output;
        std::function<void()> backward;  // may be empty if nothing needs grad
    };

    void record(const char* op, std::vector<TensorPtr<T>> inputs, TensorPtr<T> output,
                std::function<void()> backward) {
        if (check_finite_ && !all_finite(*output))
            throw NumericsError(std::string("non-finite value produced by op '") + op + "'");
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
    // Gradients accumulate only into tensors with requires_grad set.
    void backward(const TensorPtr<T>& loss) {
        if (!loss || loss->numel() != 1)
            throw UsageError("backward: loss must be a scalar tensor");
        if (!loss->requires_grad)
            throw UsageError("backward: loss does not require gradients");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->backward) continue;
            // Outputs never touched by a downstream rule carry no gradient.
            if (it->output->grad.empty()) continue;
            it->backward();
        }
    }

    void set_check_finite(bool v) { check_finite_ = v; }
    bool check_finite() const { return check_finite_; }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
    bool check_finite_ = false;
};

// Gradient pointer for backward rules: non-null only when the tensor
// participates in gradient flow, with the buffer lazily allocated.
template <typename T>
T* grad_ptr(const TensorPtr<T>& t) {
    if (!t->requires_grad) return nullptr;
    t->ensure_grad();
    return t->grad.data();
}

}  // namespace sqa
