#pragma once

#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

// Neural operations over NCHW tensors. Every op takes the recording tape as
// its first argument; passing nullptr runs pure inference (no graph, outputs
// never require gradients). All ops are deterministic functions of their
// inputs and are differentiable where noted, with analytic backward rules
// validated against central finite differences.

struct Conv2dSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

// Cross-correlation (no kernel flip). input [B,Cin,H,W], weight
// [Cout,Cin,k,k], optional bias [Cout]. Differentiable in input/weight/bias.
template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias, const Conv2dSpec& spec);

// Half-pixel-center (align-corners=false) bilinear interpolation.
template <typename T>
TensorPtr<T> bilinear_resize(Tape<T>* tape, const TensorPtr<T>& x, std::int64_t out_h,
                             std::int64_t out_w);

// Elementwise binary ops. rhs may broadcast: same rank, each extent equal to
// lhs or 1. Output takes the lhs shape.
template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> div(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

// out = alpha * x + beta, elementwise with scalar coefficients.
template <typename T>
TensorPtr<T> affine(Tape<T>* tape, const TensorPtr<T>& x, double alpha, double beta);

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x);
template <typename T>
TensorPtr<T> gelu(Tape<T>* tape, const TensorPtr<T>& x);  // exact erf form
template <typename T>
TensorPtr<T> sigmoid(Tape<T>* tape, const TensorPtr<T>& x);
template <typename T>
TensorPtr<T> log(Tape<T>* tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> softmax(Tape<T>* tape, const TensorPtr<T>& x, int axis);

template <typename T>
TensorPtr<T> concat(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts, int axis);
template <typename T>
std::vector<TensorPtr<T>> split(Tape<T>* tape, const TensorPtr<T>& x, int axis,
                                const std::vector<std::int64_t>& sizes);

// Per-channel batch normalization over (B,H,W). Training mode normalizes by
// batch statistics and folds them into the running buffers (momentum-weighted,
// unbiased variance); eval mode normalizes by the running buffers.
template <typename T>
TensorPtr<T> batch_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                        const TensorPtr<T>& running_var, double momentum, double eps,
                        bool training);

// Normalizes the last axis; gamma/beta sized to that axis.
template <typename T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, double eps);

template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x);  // -> [B,C,1,1]
template <typename T>
TensorPtr<T> global_max_pool(Tape<T>* tape, const TensorPtr<T>& x);  // -> [B,C,1,1]
template <typename T>
TensorPtr<T> max_pool2d(Tape<T>* tape, const TensorPtr<T>& x, int kernel, int stride,
                        int padding);
template <typename T>
TensorPtr<T> channel_mean(Tape<T>* tape, const TensorPtr<T>& x);  // -> [B,1,H,W]
template <typename T>
TensorPtr<T> channel_max(Tape<T>* tape, const TensorPtr<T>& x);  // -> [B,1,H,W]

// x [..., Din] @ w[Dout,Din]^T + b.
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b);

// Batched matmul: a [G,M,K] with b [G,K,N], or b [G,N,K] when transpose_b.
template <typename T>
TensorPtr<T> bmm(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b, bool transpose_b);

template <typename T>
TensorPtr<T> permute(Tape<T>* tape, const TensorPtr<T>& x, const std::vector<int>& perm);
template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, std::vector<std::int64_t> dims);

template <typename T>
TensorPtr<T> reduce_sum_all(Tape<T>* tape, const TensorPtr<T>& x);  // -> [1]
template <typename T>
TensorPtr<T> reduce_mean_all(Tape<T>* tape, const TensorPtr<T>& x);  // -> [1]
template <typename T>
TensorPtr<T> reduce_sum_channelwise(Tape<T>* tape, const TensorPtr<T>& x);  // [B,C,H,W] -> [C]

template <typename T>
struct MhsaParams {
    TensorPtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product self-attention with row-stochastic weights per head and
// an output projection. Requires embed dim divisible by the head count.
template <typename T>
TensorPtr<T> multi_head_self_attention(Tape<T>* tape, const TensorPtr<T>& tokens,
                                       const MhsaParams<T>& p, int heads);

template <typename T>
struct CsamWeights {
    // channel-attention MLP as 1x1 convolutions (squeeze ratio r), shared
    // between the average- and max-pooled branches
    TensorPtr<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    // spatial attention: 7x7 convolution over the stacked channel mean/max
    TensorPtr<T> spatial_w, spatial_b;
};

// Channel-then-spatial attention enhancement:
//   x'  = x  * sigmoid(MLP(avgpool(x)) + MLP(maxpool(x)))   broadcast over space
//   x'' = x' * sigmoid(conv7x7([mean_c(x'), max_c(x')]))     broadcast over channels
template <typename T>
TensorPtr<T> csam(Tape<T>* tape, const TensorPtr<T>& x, const CsamWeights<T>& w);

// Mean softmax cross-entropy over all pixels. labels [B,H,W] must hold exact
// integers in [0, C).
template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits,
                                   const TensorPtr<T>& labels);

// Multi-class soft dice: mean over classes of 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps),
// with p the per-pixel softmax probabilities and g the one-hot labels.
template <typename T>
TensorPtr<T> dice_loss(Tape<T>* tape, const TensorPtr<T>& logits, const TensorPtr<T>& labels,
                       double eps);

// Throws UsageError unless every value is an exact integer in [0, num_classes).
template <typename T>
void validate_labels(const TensorPtr<T>& labels, std::int64_t num_classes);

}  // namespace sqa
