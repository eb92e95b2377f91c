#include "sqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "sqa/gemm.hpp"
#include "sqa/kernels.hpp"
#include "sqa/parallel.hpp"

namespace sqa {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
bool wants_grad(Tape<T>* tape, std::initializer_list<TensorPtr<T>> ins) {
    if (!tape) return false;
    for (const auto& t : ins)
        if (t && t->requires_grad) return true;
    return false;
}

template <typename T>
void record(Tape<T>* tape, const char* op, std::vector<TensorPtr<T>> ins, TensorPtr<T> out,
            std::function<void()> bw) {
    if (!tape) return;
    tape->record(op, std::move(ins), std::move(out),
                 out && out->requires_grad ? std::move(bw) : std::function<void()>{});
}

// C[M,N] += A^T[M,K] * B[K,N] where A is stored [K,M]. Used by the weight
// gradients of conv/linear/bmm.
template <typename T>
void gemm_tn_acc(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
    auto rows = [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            T* crow = c + i * n;
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = a[p * m + i];
                if (av != T(0)) kern::axpy(av, b + p * n, crow, std::size_t(n));
            }
        }
    };
    if (m * n * k >= (1 << 20))
        parallel_rows(m, rows);
    else
        rows(0, m);
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvDims {
    std::int64_t batch, cin, h, w, cout, k, oh, ow;
};

template <typename T>
ConvDims conv_check(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    const Conv2dSpec& s) {
    if (input->rank() != 4)
        throw ShapeError("conv2d: input must be rank 4, got " + shape_str<T>(input->dims));
    if (weight->rank() != 4 || weight->dim(2) != weight->dim(3))
        throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str<T>(weight->dims));
    if (s.stride < 1 || s.dilation < 1 || s.padding < 0 || weight->dim(2) < 1)
        throw ConfigError("conv2d: stride/dilation must be >= 1 and padding >= 0");
    ConvDims d;
    d.batch = input->dim(0);
    d.cin = input->dim(1);
    d.h = input->dim(2);
    d.w = input->dim(3);
    d.cout = weight->dim(0);
    d.k = weight->dim(2);
    if (weight->dim(1) != d.cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(weight->dim(1)) +
                         " input channels but input has " + std::to_string(d.cin));
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.cout))
        throw ShapeError("conv2d: bias must be [Cout]");
    const std::int64_t span_h = d.h + 2 * s.padding - s.dilation * (d.k - 1) - 1;
    const std::int64_t span_w = d.w + 2 * s.padding - s.dilation * (d.k - 1) - 1;
    if (span_h < 0 || span_w < 0)
        throw ConfigError("conv2d: non-positive output extent for input " +
                          shape_str<T>(input->dims) + " with k=" + std::to_string(d.k) +
                          " stride=" + std::to_string(s.stride) +
                          " padding=" + std::to_string(s.padding) +
                          " dilation=" + std::to_string(s.dilation));
    d.oh = span_h / s.stride + 1;
    d.ow = span_w / s.stride + 1;
    return d;
}

// Unrolls one image into patch rows: [OH*OW, Cin*k*k]. Row-major patches keep
// the GEMM inner loops on long contiguous spans.
template <typename T>
void im2row(const T* img, const ConvDims& d, const Conv2dSpec& s, T* rows) {
    const std::int64_t ckk = d.cin * d.k * d.k;
    for (std::int64_t oy = 0; oy < d.oh; ++oy) {
        for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            T* row = rows + (oy * d.ow + ox) * ckk;
            for (std::int64_t c = 0; c < d.cin; ++c) {
                const T* plane = img + c * d.h * d.w;
                for (std::int64_t ky = 0; ky < d.k; ++ky) {
                    const std::int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                    T* dst = row + (c * d.k + ky) * d.k;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(dst, dst + d.k, T(0));
                        continue;
                    }
                    const T* src = plane + iy * d.w;
                    const std::int64_t ix0 = ox * s.stride - s.padding;
                    if (s.dilation == 1 && ix0 >= 0 && ix0 + d.k <= d.w) {
                        std::memcpy(dst, src + ix0, std::size_t(d.k) * sizeof(T));
                    } else {
                        for (std::int64_t kx = 0; kx < d.k; ++kx) {
                            const std::int64_t ix = ix0 + kx * s.dilation;
                            dst[kx] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of patch rows back onto the image grid.
template <typename T>
void row2im_add(const T* rows, const ConvDims& d, const Conv2dSpec& s, T* img) {
    const std::int64_t ckk = d.cin * d.k * d.k;
    for (std::int64_t oy = 0; oy < d.oh; ++oy) {
        for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const T* row = rows + (oy * d.ow + ox) * ckk;
            for (std::int64_t c = 0; c < d.cin; ++c) {
                T* plane = img + c * d.h * d.w;
                for (std::int64_t ky = 0; ky < d.k; ++ky) {
                    const std::int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= d.h) continue;
                    T* dst = plane + iy * d.w;
                    const T* src = row + (c * d.k + ky) * d.k;
                    const std::int64_t ix0 = ox * s.stride - s.padding;
                    if (s.dilation == 1 && ix0 >= 0 && ix0 + d.k <= d.w) {
                        kern::axpy(T(1), src, dst + ix0, std::size_t(d.k));
                    } else {
                        for (std::int64_t kx = 0; kx < d.k; ++kx) {
                            const std::int64_t ix = ix0 + kx * s.dilation;
                            if (ix >= 0 && ix < d.w) dst[ix] += src[kx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias, const Conv2dSpec& spec) {
    const ConvDims d = conv_check(input, weight, bias, spec);
    const bool pointwise = d.k == 1 && spec.stride == 1 && spec.padding == 0 && spec.dilation == 1;
    const std::int64_t ohw = d.oh * d.ow;
    const std::int64_t ckk = d.cin * d.k * d.k;

    auto out = make_tensor<T>({d.batch, d.cout, d.oh, d.ow},
                              wants_grad(tape, {input, weight, bias}));
    std::vector<T> rows;
    if (!pointwise) rows.resize(std::size_t(ckk * ohw));
    std::vector<T> xt;  // transposed input for the pointwise case: [HW, Cin]
    if (pointwise) xt.resize(std::size_t(ckk * ohw));
    for (std::int64_t b = 0; b < d.batch; ++b) {
        const T* x = input->data.data() + b * d.cin * d.h * d.w;
        T* y = out->data.data() + b * d.cout * ohw;
        const T* patches;
        if (pointwise) {
            for (std::int64_t c = 0; c < d.cin; ++c)
                for (std::int64_t p = 0; p < ohw; ++p)
                    xt[std::size_t(p * d.cin + c)] = x[c * ohw + p];
            patches = xt.data();
        } else {
            im2row(x, d, spec, rows.data());
            patches = rows.data();
        }
        // y[co, p] = dot(weight[co, :], patches[p, :]), transposed on store
        std::vector<T> yt(std::size_t(ohw * d.cout));
        gemm_nt(ohw, d.cout, ckk, patches, weight->data.data(), yt.data(), false);
        for (std::int64_t c = 0; c < d.cout; ++c) {
            const T bv = bias ? bias->data[std::size_t(c)] : T(0);
            T* yrow = y + c * ohw;
            for (std::int64_t p = 0; p < ohw; ++p) yrow[p] = yt[std::size_t(p * d.cout + c)] + bv;
        }
    }

    auto bw = [input, weight, bias, out, d, spec, pointwise, ohw, ckk]() {
        const T* gy = out->grad.data();
        T* gx = grad_ptr(input);
        T* gw = grad_ptr(weight);
        T* gb = bias ? grad_ptr(bias) : nullptr;
        if (gb) {
            for (std::int64_t b = 0; b < d.batch; ++b)
                for (std::int64_t c = 0; c < d.cout; ++c)
                    gb[c] += kern::sum(gy + (b * d.cout + c) * ohw, std::size_t(ohw));
        }
        if (!gx && !gw) return;
        std::vector<T> rows(std::size_t(ckk * ohw));
        std::vector<T> gyt(std::size_t(ohw * d.cout));  // gy transposed to [HW, Cout]
        std::vector<T> drows;
        if (gx) drows.resize(std::size_t(ckk * ohw));
        for (std::int64_t b = 0; b < d.batch; ++b) {
            const T* x = input->data.data() + b * d.cin * d.h * d.w;
            const T* gyb = gy + b * d.cout * ohw;
            for (std::int64_t c = 0; c < d.cout; ++c)
                for (std::int64_t p = 0; p < ohw; ++p)
                    gyt[std::size_t(p * d.cout + c)] = gyb[c * ohw + p];
            T* patches = rows.data();
            if (pointwise) {
                for (std::int64_t c = 0; c < d.cin; ++c)
                    for (std::int64_t p = 0; p < ohw; ++p)
                        patches[p * d.cin + c] = x[c * ohw + p];
            } else {
                im2row(x, d, spec, patches);
            }
            // gw[co, r] += sum_p gyt[p, co] * patches[p, r]
            if (gw) gemm_tn_acc(d.cout, ckk, ohw, gyt.data(), patches, gw);
            if (gx) {
                // drows[p, r] = sum_co gyt[p, co] * weight[co, r]
                gemm_nn(ohw, ckk, d.cout, gyt.data(), weight->data.data(), drows.data(), false);
                T* gxb = gx + b * d.cin * d.h * d.w;
                if (pointwise) {
                    for (std::int64_t c = 0; c < d.cin; ++c)
                        for (std::int64_t p = 0; p < ohw; ++p)
                            gxb[c * ohw + p] += drows[std::size_t(p * d.cin + c)];
                } else {
                    row2im_add(drows.data(), d, spec, gxb);
                }
            }
        }
    };
    record<T>(tape, "conv2d", {input, weight, bias}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize
// ---------------------------------------------------------------------------

namespace {

struct ResizeAxis {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets (1 - w1)
};

ResizeAxis resize_axis(std::int64_t in, std::int64_t out) {
    ResizeAxis ax;
    ax.i0.resize(std::size_t(out));
    ax.i1.resize(std::size_t(out));
    ax.w1.resize(std::size_t(out));
    const double scale = double(in) / double(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (double(o) + 0.5) * scale - 0.5;
        src = std::min(std::max(src, 0.0), double(in - 1));
        const std::int64_t lo = std::int64_t(std::floor(src));
        ax.i0[std::size_t(o)] = lo;
        ax.i1[std::size_t(o)] = std::min(lo + 1, in - 1);
        ax.w1[std::size_t(o)] = src - double(lo);
    }
    return ax;
}

}  // namespace

template <typename T>
TensorPtr<T> bilinear_resize(Tape<T>* tape, const TensorPtr<T>& x, std::int64_t out_h,
                             std::int64_t out_w) {
    if (x->rank() != 4) throw ShapeError("bilinear_resize: input must be rank 4");
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: target extents must be >= 1");
    const std::int64_t bsz = x->dim(0), ch = x->dim(1), h = x->dim(2), w = x->dim(3);
    const ResizeAxis ay = resize_axis(h, out_h);
    const ResizeAxis axx = resize_axis(w, out_w);

    auto out = make_tensor<T>({bsz, ch, out_h, out_w}, wants_grad(tape, {x}));
    for (std::int64_t bc = 0; bc < bsz * ch; ++bc) {
        const T* src = x->data.data() + bc * h * w;
        T* dst = out->data.data() + bc * out_h * out_w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const std::int64_t y0 = ay.i0[std::size_t(oy)], y1 = ay.i1[std::size_t(oy)];
            const T wy = T(ay.w1[std::size_t(oy)]);
            const T* r0 = src + y0 * w;
            const T* r1 = src + y1 * w;
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const std::int64_t x0 = axx.i0[std::size_t(ox)], x1 = axx.i1[std::size_t(ox)];
                const T wx = T(axx.w1[std::size_t(ox)]);
                const T top = r0[x0] + wx * (r0[x1] - r0[x0]);
                const T bot = r1[x0] + wx * (r1[x1] - r1[x0]);
                dst[oy * out_w + ox] = top + wy * (bot - top);
            }
        }
    }

    auto bw = [x, out, ay, axx, bsz, ch, h, w, out_h, out_w]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T* gy = out->grad.data();
        for (std::int64_t bc = 0; bc < bsz * ch; ++bc) {
            T* gplane = gx + bc * h * w;
            const T* gyp = gy + bc * out_h * out_w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const std::int64_t y0 = ay.i0[std::size_t(oy)], y1 = ay.i1[std::size_t(oy)];
                const T wy = T(ay.w1[std::size_t(oy)]);
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const std::int64_t x0 = axx.i0[std::size_t(ox)], x1 = axx.i1[std::size_t(ox)];
                    const T wx = T(axx.w1[std::size_t(ox)]);
                    const T g = gyp[oy * out_w + ox];
                    gplane[y0 * w + x0] += g * (T(1) - wy) * (T(1) - wx);
                    gplane[y0 * w + x1] += g * (T(1) - wy) * wx;
                    gplane[y1 * w + x0] += g * wy * (T(1) - wx);
                    gplane[y1 * w + x1] += g * wy * wx;
                }
            }
        }
    };
    record<T>(tape, "bilinear_resize", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// elementwise binary with limited broadcast
// ---------------------------------------------------------------------------

namespace {

// rhs strides with zeros on broadcast axes; shapes validated same-rank.
template <typename T>
std::vector<std::int64_t> bcast_strides(const TensorPtr<T>& a, const TensorPtr<T>& b,
                                        const char* op) {
    if (a->rank() != b->rank())
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str<T>(a->dims) + " vs " +
                         shape_str<T>(b->dims));
    std::vector<std::int64_t> strides(b->rank());
    std::int64_t s = 1;
    for (std::size_t i = b->rank(); i-- > 0;) {
        strides[i] = s;
        s *= b->dim(i);
    }
    for (std::size_t i = 0; i < a->rank(); ++i) {
        if (b->dim(i) == a->dim(i)) continue;
        if (b->dim(i) == 1) {
            strides[i] = 0;
            continue;
        }
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str<T>(a->dims) + " vs " +
                         shape_str<T>(b->dims));
    }
    return strides;
}

// Walks the output index space mapping each flat lhs index to its rhs index.
template <typename T, typename Fn>
void bcast_for_each(const TensorPtr<T>& a, const std::vector<std::int64_t>& bstrides, Fn&& fn) {
    const std::size_t rank = a->rank();
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t n = a->numel();
    std::int64_t bi = 0;
    for (std::int64_t ai = 0; ai < n; ++ai) {
        fn(ai, bi);
        for (std::size_t dpos = rank; dpos-- > 0;) {
            idx[dpos]++;
            bi += bstrides[dpos];
            if (idx[dpos] < a->dim(dpos)) break;
            bi -= bstrides[dpos] * a->dim(dpos);
            idx[dpos] = 0;
        }
    }
}

enum class BinOp { add, sub, mul, div };

template <typename T>
TensorPtr<T> binary_op(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b, BinOp op,
                       const char* name) {
    const auto bstr = bcast_strides(a, b, name);
    const bool same = a->dims == b->dims;
    auto out = make_tensor<T>(a->dims, wants_grad(tape, {a, b}));
    const std::size_t n = a->data.size();
    if (same) {
        switch (op) {
            case BinOp::add: kern::add(a->data.data(), b->data.data(), out->data.data(), n); break;
            case BinOp::sub: kern::sub(a->data.data(), b->data.data(), out->data.data(), n); break;
            case BinOp::mul: kern::mul(a->data.data(), b->data.data(), out->data.data(), n); break;
            case BinOp::div:
                for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] / b->data[i];
                break;
        }
    } else {
        const T* pa = a->data.data();
        const T* pb = b->data.data();
        T* po = out->data.data();
        bcast_for_each(a, bstr, [&](std::int64_t ai, std::int64_t bi) {
            switch (op) {
                case BinOp::add: po[ai] = pa[ai] + pb[bi]; break;
                case BinOp::sub: po[ai] = pa[ai] - pb[bi]; break;
                case BinOp::mul: po[ai] = pa[ai] * pb[bi]; break;
                case BinOp::div: po[ai] = pa[ai] / pb[bi]; break;
            }
        });
    }

    auto bw = [a, b, out, bstr, op, same]() {
        const T* gy = out->grad.data();
        T* ga = grad_ptr(a);
        T* gb = grad_ptr(b);
        const T* pa = a->data.data();
        const T* pb = b->data.data();
        const std::size_t n = a->data.size();
        if (same) {
            switch (op) {
                case BinOp::add:
                    if (ga) kern::axpy(T(1), gy, ga, n);
                    if (gb) kern::axpy(T(1), gy, gb, n);
                    break;
                case BinOp::sub:
                    if (ga) kern::axpy(T(1), gy, ga, n);
                    if (gb) kern::axpy(T(-1), gy, gb, n);
                    break;
                case BinOp::mul:
                    for (std::size_t i = 0; i < n; ++i) {
                        if (ga) ga[i] += gy[i] * pb[i];
                        if (gb) gb[i] += gy[i] * pa[i];
                    }
                    break;
                case BinOp::div:
                    for (std::size_t i = 0; i < n; ++i) {
                        if (ga) ga[i] += gy[i] / pb[i];
                        if (gb) gb[i] -= gy[i] * pa[i] / (pb[i] * pb[i]);
                    }
                    break;
            }
            return;
        }
        bcast_for_each(a, bstr, [&](std::int64_t ai, std::int64_t bi) {
            switch (op) {
                case BinOp::add:
                    if (ga) ga[ai] += gy[ai];
                    if (gb) gb[bi] += gy[ai];
                    break;
                case BinOp::sub:
                    if (ga) ga[ai] += gy[ai];
                    if (gb) gb[bi] -= gy[ai];
                    break;
                case BinOp::mul:
                    if (ga) ga[ai] += gy[ai] * pb[bi];
                    if (gb) gb[bi] += gy[ai] * pa[ai];
                    break;
                case BinOp::div:
                    if (ga) ga[ai] += gy[ai] / pb[bi];
                    if (gb) gb[bi] -= gy[ai] * pa[ai] / (pb[bi] * pb[bi]);
                    break;
            }
        });
    };
    record<T>(tape, name, {a, b}, out, bw);
    return out;
}

}  // namespace

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return binary_op(tape, a, b, BinOp::add, "add");
}
template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return binary_op(tape, a, b, BinOp::sub, "sub");
}
template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return binary_op(tape, a, b, BinOp::mul, "mul");
}
template <typename T>
TensorPtr<T> div(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return binary_op(tape, a, b, BinOp::div, "div");
}

template <typename T>
TensorPtr<T> affine(Tape<T>* tape, const TensorPtr<T>& x, double alpha, double beta) {
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    const T a = T(alpha), b = T(beta);
    for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = a * x->data[i] + b;
    auto bw = [x, out, a]() {
        T* gx = grad_ptr(x);
        if (gx) kern::axpy(a, out->grad.data(), gx, x->data.size());
    };
    record<T>(tape, "affine", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// unary activations
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    kern::relu(x->data.data(), out->data.data(), x->data.size());
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (gx) kern::relu_backward(x->data.data(), out->grad.data(), gx, x->data.size());
    };
    record<T>(tape, "relu", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> gelu(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const double v = double(x->data[i]);
        out->data[i] = T(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T* gy = out->grad.data();
        for (std::size_t i = 0; i < x->data.size(); ++i) {
            const double v = double(x->data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += gy[i] * T(cdf + v * pdf);
        }
    };
    record<T>(tape, "gelu", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    for (std::size_t i = 0; i < x->data.size(); ++i)
        out->data[i] = T(1) / (T(1) + T(std::exp(-double(x->data[i]))));
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T* gy = out->grad.data();
        const T* s = out->data.data();
        for (std::size_t i = 0; i < x->data.size(); ++i) gx[i] += gy[i] * s[i] * (T(1) - s[i]);
    };
    record<T>(tape, "sigmoid", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> log(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = T(std::log(double(x->data[i])));
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T* gy = out->grad.data();
        for (std::size_t i = 0; i < x->data.size(); ++i) gx[i] += gy[i] / x->data[i];
    };
    record<T>(tape, "log", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void axis_extents(const TensorPtr<T>& x, int axis, std::int64_t& outer, std::int64_t& len,
                  std::int64_t& inner, const char* op) {
    if (axis < 0 || std::size_t(axis) >= x->rank())
        throw ConfigError(std::string(op) + ": axis out of range");
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x->dim(std::size_t(i));
    len = x->dim(std::size_t(axis));
    for (std::size_t i = std::size_t(axis) + 1; i < x->rank(); ++i) inner *= x->dim(i);
}

}  // namespace

template <typename T>
TensorPtr<T> softmax(Tape<T>* tape, const TensorPtr<T>& x, int axis) {
    std::int64_t outer, len, inner;
    axis_extents(x, axis, outer, len, inner, "softmax");
    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x}));
    const T* px = x->data.data();
    T* po = out->data.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            T mx = px[base];
            for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
            T denom = T(0);
            for (std::int64_t l = 0; l < len; ++l) {
                const T e = T(std::exp(double(px[base + l * inner] - mx)));
                po[base + l * inner] = e;
                denom += e;
            }
            for (std::int64_t l = 0; l < len; ++l) po[base + l * inner] /= denom;
        }
    }
    auto bw = [x, out, outer, len, inner]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T* gy = out->grad.data();
        const T* p = out->data.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * len * inner + in;
                T dotv = T(0);
                for (std::int64_t l = 0; l < len; ++l)
                    dotv += gy[base + l * inner] * p[base + l * inner];
                for (std::int64_t l = 0; l < len; ++l) {
                    const std::int64_t i = base + l * inner;
                    gx[i] += p[i] * (gy[i] - dotv);
                }
            }
        }
    };
    record<T>(tape, "softmax", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// concat / split
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> concat(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const auto& first = parts.front();
    if (axis < 0 || std::size_t(axis) >= first->rank()) throw ConfigError("concat: axis out of range");
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p->rank() != first->rank()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < first->rank(); ++i)
            if (i != std::size_t(axis) && p->dim(i) != first->dim(i))
                throw ShapeError("concat: shape mismatch " + shape_str<T>(p->dims) + " vs " +
                                 shape_str<T>(first->dims));
        axis_total += p->dim(std::size_t(axis));
    }
    std::vector<std::int64_t> dims = first->dims;
    dims[std::size_t(axis)] = axis_total;

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first->dim(std::size_t(i));
    for (std::size_t i = std::size_t(axis) + 1; i < first->rank(); ++i) inner *= first->dim(i);

    bool rg = false;
    if (tape)
        for (const auto& p : parts) rg = rg || p->requires_grad;
    auto out = make_tensor<T>(dims, rg);
    const std::int64_t out_stride = axis_total * inner;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t blk = p->dim(std::size_t(axis)) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out->data.data() + o * out_stride + offset, p->data.data() + o * blk,
                        std::size_t(blk) * sizeof(T));
        offset += blk;
    }

    auto bw = [parts, out, outer, inner, out_stride]() {
        const T* gy = out->grad.data();
        std::int64_t offset = 0;
        for (const auto& p : parts) {
            const std::int64_t blk = p->numel() / outer;
            T* gp = grad_ptr(p);
            if (gp)
                for (std::int64_t o = 0; o < outer; ++o)
                    kern::axpy(T(1), gy + o * out_stride + offset, gp + o * blk, std::size_t(blk));
            offset += blk;
        }
    };
    std::vector<TensorPtr<T>> ins = parts;
    record<T>(tape, "concat", std::move(ins), out, bw);
    return out;
}

template <typename T>
std::vector<TensorPtr<T>> split(Tape<T>* tape, const TensorPtr<T>& x, int axis,
                                const std::vector<std::int64_t>& sizes) {
    if (axis < 0 || std::size_t(axis) >= x->rank()) throw ConfigError("split: axis out of range");
    std::int64_t total = 0;
    for (auto s : sizes) total += s;
    if (total != x->dim(std::size_t(axis)))
        throw ShapeError("split: sizes do not cover axis extent");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x->dim(std::size_t(i));
    for (std::size_t i = std::size_t(axis) + 1; i < x->rank(); ++i) inner *= x->dim(i);
    const std::int64_t in_stride = x->dim(std::size_t(axis)) * inner;

    std::vector<TensorPtr<T>> outs;
    std::int64_t offset = 0;
    for (auto s : sizes) {
        std::vector<std::int64_t> dims = x->dims;
        dims[std::size_t(axis)] = s;
        auto piece = make_tensor<T>(dims, wants_grad(tape, {x}));
        const std::int64_t blk = s * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(piece->data.data() + o * blk, x->data.data() + o * in_stride + offset,
                        std::size_t(blk) * sizeof(T));
        const std::int64_t piece_offset = offset;
        auto bw = [x, piece, outer, inner, in_stride, piece_offset, blk]() {
            T* gx = grad_ptr(x);
            if (!gx) return;
            const T* gy = piece->grad.data();
            for (std::int64_t o = 0; o < outer; ++o)
                kern::axpy(T(1), gy + o * blk, gx + o * in_stride + piece_offset, std::size_t(blk));
        };
        record<T>(tape, "split", {x}, piece, bw);
        outs.push_back(std::move(piece));
        offset += blk;
    }
    return outs;
}

// ---------------------------------------------------------------------------
// batch_norm / layer_norm
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> batch_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                        const TensorPtr<T>& running_var, double momentum, double eps,
                        bool training) {
    if (x->rank() != 4) throw ShapeError("batch_norm: input must be rank 4");
    const std::int64_t bsz = x->dim(0), ch = x->dim(1), hw = x->dim(2) * x->dim(3);
    if (gamma->numel() != ch || beta->numel() != ch || running_mean->numel() != ch ||
        running_var->numel() != ch)
        throw ShapeError("batch_norm: parameter extents must match channel count");
    const std::int64_t n = bsz * hw;

    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x, gamma, beta}));
    auto mean = std::make_shared<std::vector<T>>(std::size_t(ch), T(0));
    auto invstd = std::make_shared<std::vector<T>>(std::size_t(ch), T(0));

    for (std::int64_t c = 0; c < ch; ++c) {
        T m, v;
        if (training) {
            T acc = T(0);
            for (std::int64_t b = 0; b < bsz; ++b)
                acc += kern::sum(x->data.data() + (b * ch + c) * hw, std::size_t(hw));
            m = acc / T(n);
            T vacc = T(0);
            for (std::int64_t b = 0; b < bsz; ++b) {
                const T* p = x->data.data() + (b * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T dlt = p[i] - m;
                    vacc += dlt * dlt;
                }
            }
            v = vacc / T(n);
            const T unbiased = n > 1 ? vacc / T(n - 1) : v;
            running_mean->data[std::size_t(c)] =
                T(1.0 - momentum) * running_mean->data[std::size_t(c)] + T(momentum) * m;
            running_var->data[std::size_t(c)] =
                T(1.0 - momentum) * running_var->data[std::size_t(c)] + T(momentum) * unbiased;
        } else {
            m = running_mean->data[std::size_t(c)];
            v = running_var->data[std::size_t(c)];
        }
        (*mean)[std::size_t(c)] = m;
        (*invstd)[std::size_t(c)] = T(1.0 / std::sqrt(double(v) + eps));
        const T g = gamma->data[std::size_t(c)], bt = beta->data[std::size_t(c)];
        const T is = (*invstd)[std::size_t(c)];
        for (std::int64_t b = 0; b < bsz; ++b) {
            const T* p = x->data.data() + (b * ch + c) * hw;
            T* q = out->data.data() + (b * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) q[i] = g * (p[i] - m) * is + bt;
        }
    }

    auto bw = [x, gamma, beta, out, mean, invstd, bsz, ch, hw, n, training]() {
        const T* gy = out->grad.data();
        T* gx = grad_ptr(x);
        T* gg = grad_ptr(gamma);
        T* gb = grad_ptr(beta);
        for (std::int64_t c = 0; c < ch; ++c) {
            const T m = (*mean)[std::size_t(c)];
            const T is = (*invstd)[std::size_t(c)];
            const T g = gamma->data[std::size_t(c)];
            T sum_gy = T(0), sum_gy_xhat = T(0);
            for (std::int64_t b = 0; b < bsz; ++b) {
                const T* p = x->data.data() + (b * ch + c) * hw;
                const T* gyp = gy + (b * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum_gy += gyp[i];
                    sum_gy_xhat += gyp[i] * (p[i] - m) * is;
                }
            }
            if (gg) gg[c] += sum_gy_xhat;
            if (gb) gb[c] += sum_gy;
            if (!gx) continue;
            if (training) {
                const T mean_gy = sum_gy / T(n);
                const T mean_gy_xhat = sum_gy_xhat / T(n);
                for (std::int64_t b = 0; b < bsz; ++b) {
                    const T* p = x->data.data() + (b * ch + c) * hw;
                    const T* gyp = gy + (b * ch + c) * hw;
                    T* gxp = gx + (b * ch + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const T xhat = (p[i] - m) * is;
                        gxp[i] += g * is * (gyp[i] - mean_gy - xhat * mean_gy_xhat);
                    }
                }
            } else {
                for (std::int64_t b = 0; b < bsz; ++b) {
                    const T* gyp = gy + (b * ch + c) * hw;
                    T* gxp = gx + (b * ch + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gxp[i] += gyp[i] * g * is;
                }
            }
        }
    };
    record<T>(tape, "batch_norm", {x, gamma, beta}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, double eps) {
    if (x->rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::int64_t dlen = x->dim(x->rank() - 1);
    if (gamma->numel() != dlen || beta->numel() != dlen)
        throw ShapeError("layer_norm: gamma/beta must match last axis");
    const std::int64_t rows = x->numel() / dlen;

    auto out = make_tensor<T>(x->dims, wants_grad(tape, {x, gamma, beta}));
    auto mean = std::make_shared<std::vector<T>>(std::size_t(rows));
    auto invstd = std::make_shared<std::vector<T>>(std::size_t(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* p = x->data.data() + r * dlen;
        T* q = out->data.data() + r * dlen;
        const T m = kern::sum(p, std::size_t(dlen)) / T(dlen);
        T vacc = T(0);
        for (std::int64_t i = 0; i < dlen; ++i) {
            const T dlt = p[i] - m;
            vacc += dlt * dlt;
        }
        const T is = T(1.0 / std::sqrt(double(vacc) / double(dlen) + eps));
        (*mean)[std::size_t(r)] = m;
        (*invstd)[std::size_t(r)] = is;
        for (std::int64_t i = 0; i < dlen; ++i)
            q[i] = gamma->data[std::size_t(i)] * (p[i] - m) * is + beta->data[std::size_t(i)];
    }

    auto bw = [x, gamma, beta, out, mean, invstd, rows, dlen]() {
        const T* gy = out->grad.data();
        T* gx = grad_ptr(x);
        T* gg = grad_ptr(gamma);
        T* gb = grad_ptr(beta);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* p = x->data.data() + r * dlen;
            const T* gyp = gy + r * dlen;
            const T m = (*mean)[std::size_t(r)];
            const T is = (*invstd)[std::size_t(r)];
            T mean_t1 = T(0), mean_t2 = T(0);
            for (std::int64_t i = 0; i < dlen; ++i) {
                const T xhat = (p[i] - m) * is;
                const T t = gyp[i] * gamma->data[std::size_t(i)];
                mean_t1 += t;
                mean_t2 += t * xhat;
                if (gg) gg[i] += gyp[i] * xhat;
                if (gb) gb[i] += gyp[i];
            }
            if (!gx) continue;
            mean_t1 /= T(dlen);
            mean_t2 /= T(dlen);
            T* gxp = gx + r * dlen;
            for (std::int64_t i = 0; i < dlen; ++i) {
                const T xhat = (p[i] - m) * is;
                const T t = gyp[i] * gamma->data[std::size_t(i)];
                gxp[i] += is * (t - mean_t1 - xhat * mean_t2);
            }
        }
    };
    record<T>(tape, "layer_norm", {x, gamma, beta}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) throw ShapeError("global_avg_pool: input must be rank 4");
    const std::int64_t bc = x->dim(0) * x->dim(1), hw = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({x->dim(0), x->dim(1), 1, 1}, wants_grad(tape, {x}));
    for (std::int64_t i = 0; i < bc; ++i)
        out->data[std::size_t(i)] = kern::sum(x->data.data() + i * hw, std::size_t(hw)) / T(hw);
    auto bw = [x, out, bc, hw]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::int64_t i = 0; i < bc; ++i) {
            const T g = out->grad[std::size_t(i)] / T(hw);
            T* p = gx + i * hw;
            for (std::int64_t j = 0; j < hw; ++j) p[j] += g;
        }
    };
    record<T>(tape, "global_avg_pool", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> global_max_pool(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) throw ShapeError("global_max_pool: input must be rank 4");
    const std::int64_t bc = x->dim(0) * x->dim(1), hw = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({x->dim(0), x->dim(1), 1, 1}, wants_grad(tape, {x}));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(bc));
    for (std::int64_t i = 0; i < bc; ++i) {
        const T* p = x->data.data() + i * hw;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < hw; ++j)
            if (p[j] > p[best]) best = j;
        (*argmax)[std::size_t(i)] = best;
        out->data[std::size_t(i)] = p[best];
    }
    auto bw = [x, out, argmax, bc, hw]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::int64_t i = 0; i < bc; ++i)
            gx[i * hw + (*argmax)[std::size_t(i)]] += out->grad[std::size_t(i)];
    };
    record<T>(tape, "global_max_pool", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> max_pool2d(Tape<T>* tape, const TensorPtr<T>& x, int kernel, int stride,
                        int padding) {
    if (x->rank() != 4) throw ShapeError("max_pool2d: input must be rank 4");
    if (kernel < 1 || stride < 1 || padding < 0) throw ConfigError("max_pool2d: invalid window");
    const std::int64_t bc = x->dim(0) * x->dim(1), h = x->dim(2), w = x->dim(3);
    const std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
    const std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ConfigError("max_pool2d: non-positive output extent");

    auto out = make_tensor<T>({x->dim(0), x->dim(1), oh, ow}, wants_grad(tape, {x}));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(bc * oh * ow));
    for (std::int64_t i = 0; i < bc; ++i) {
        const T* plane = x->data.data() + i * h * w;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::int64_t best_idx = -1;
                for (std::int64_t ky = 0; ky < kernel; ++ky) {
                    const std::int64_t iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t kx = 0; kx < kernel; ++kx) {
                        const std::int64_t ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const T v = plane[iy * w + ix];
                        if (v > best) {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                const std::int64_t oidx = i * oh * ow + oy * ow + ox;
                out->data[std::size_t(oidx)] = best;
                (*argmax)[std::size_t(oidx)] = i * h * w + best_idx;
            }
        }
    }
    auto bw = [x, out, argmax]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::size_t i = 0; i < out->grad.size(); ++i) gx[(*argmax)[i]] += out->grad[i];
    };
    record<T>(tape, "max_pool2d", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> channel_mean(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) throw ShapeError("channel_mean: input must be rank 4");
    const std::int64_t bsz = x->dim(0), ch = x->dim(1), hw = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({bsz, 1, x->dim(2), x->dim(3)}, wants_grad(tape, {x}));
    for (std::int64_t b = 0; b < bsz; ++b) {
        T* q = out->data.data() + b * hw;
        std::fill(q, q + hw, T(0));
        for (std::int64_t c = 0; c < ch; ++c)
            kern::axpy(T(1), x->data.data() + (b * ch + c) * hw, q, std::size_t(hw));
        kern::scale(T(1) / T(ch), q, q, std::size_t(hw));
    }
    auto bw = [x, out, bsz, ch, hw]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::int64_t b = 0; b < bsz; ++b) {
            const T* gyp = out->grad.data() + b * hw;
            for (std::int64_t c = 0; c < ch; ++c)
                kern::axpy(T(1) / T(ch), gyp, gx + (b * ch + c) * hw, std::size_t(hw));
        }
    };
    record<T>(tape, "channel_mean", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> channel_max(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) throw ShapeError("channel_max: input must be rank 4");
    const std::int64_t bsz = x->dim(0), ch = x->dim(1), hw = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({bsz, 1, x->dim(2), x->dim(3)}, wants_grad(tape, {x}));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(bsz * hw));
    for (std::int64_t b = 0; b < bsz; ++b) {
        for (std::int64_t i = 0; i < hw; ++i) {
            std::int64_t best_c = 0;
            T best = x->data[std::size_t(b * ch * hw + i)];
            for (std::int64_t c = 1; c < ch; ++c) {
                const T v = x->data[std::size_t((b * ch + c) * hw + i)];
                if (v > best) {
                    best = v;
                    best_c = c;
                }
            }
            out->data[std::size_t(b * hw + i)] = best;
            (*argmax)[std::size_t(b * hw + i)] = (b * ch + best_c) * hw + i;
        }
    }
    auto bw = [x, out, argmax]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::size_t i = 0; i < out->grad.size(); ++i) gx[(*argmax)[i]] += out->grad[i];
    };
    record<T>(tape, "channel_max", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// linear / bmm
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
    if (x->rank() < 1 || w->rank() != 2) throw ShapeError("linear: weight must be [Dout,Din]");
    const std::int64_t din = x->dim(x->rank() - 1);
    const std::int64_t dout = w->dim(0);
    if (w->dim(1) != din)
        throw ShapeError("linear: weight expects input width " + std::to_string(w->dim(1)) +
                         " but got " + std::to_string(din));
    if (b && b->numel() != dout) throw ShapeError("linear: bias must be [Dout]");
    const std::int64_t rows = x->numel() / din;

    std::vector<std::int64_t> dims = x->dims;
    dims.back() = dout;
    auto out = make_tensor<T>(dims, wants_grad(tape, {x, w, b}));
    gemm_nt(rows, dout, din, x->data.data(), w->data.data(), out->data.data(), false);
    if (b) {
        for (std::int64_t r = 0; r < rows; ++r)
            kern::axpy(T(1), b->data.data(), out->data.data() + r * dout, std::size_t(dout));
    }
    auto bw = [x, w, b, out, rows, din, dout]() {
        const T* gy = out->grad.data();
        T* gx = grad_ptr(x);
        T* gw = grad_ptr(w);
        T* gb = b ? grad_ptr(b) : nullptr;
        if (gx) gemm_nn(rows, din, dout, gy, w->data.data(), gx, true);
        if (gw) gemm_tn_acc(dout, din, rows, gy, x->data.data(), gw);
        if (gb)
            for (std::int64_t r = 0; r < rows; ++r)
                kern::axpy(T(1), gy + r * dout, gb, std::size_t(dout));
    };
    record<T>(tape, "linear", {x, w, b}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> bmm(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b, bool transpose_b) {
    if (a->rank() != 3 || b->rank() != 3) throw ShapeError("bmm: inputs must be rank 3");
    if (a->dim(0) != b->dim(0)) throw ShapeError("bmm: batch extents differ");
    const std::int64_t g = a->dim(0), m = a->dim(1), k = a->dim(2);
    const std::int64_t n = transpose_b ? b->dim(1) : b->dim(2);
    const std::int64_t bk = transpose_b ? b->dim(2) : b->dim(1);
    if (bk != k) throw ShapeError("bmm: inner extents differ");

    auto out = make_tensor<T>({g, m, n}, wants_grad(tape, {a, b}));
    for (std::int64_t i = 0; i < g; ++i) {
        const T* pa = a->data.data() + i * m * k;
        const T* pb = b->data.data() + i * k * n;
        T* pc = out->data.data() + i * m * n;
        if (transpose_b)
            gemm_nt(m, n, k, pa, pb, pc, false);
        else
            gemm_nn(m, n, k, pa, pb, pc, false);
    }
    auto bw = [a, b, out, g, m, k, n, transpose_b]() {
        const T* gy = out->grad.data();
        T* ga = grad_ptr(a);
        T* gb = grad_ptr(b);
        for (std::int64_t i = 0; i < g; ++i) {
            const T* gyp = gy + i * m * n;
            const T* pa = a->data.data() + i * m * k;
            const T* pb = b->data.data() + i * k * n;
            if (transpose_b) {
                if (ga) gemm_nn(m, k, n, gyp, pb, ga + i * m * k, true);
                if (gb) gemm_tn_acc(n, k, m, gyp, pa, gb + i * n * k);
            } else {
                if (ga) gemm_nt(m, k, n, gyp, pb, ga + i * m * k, true);
                if (gb) gemm_tn_acc(k, n, m, pa, gyp, gb + i * k * n);
            }
        }
    };
    record<T>(tape, "bmm", {a, b}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> permute(Tape<T>* tape, const TensorPtr<T>& x, const std::vector<int>& perm) {
    if (perm.size() != x->rank()) throw ConfigError("permute: perm length must equal rank");
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || std::size_t(p) >= perm.size() || seen[std::size_t(p)])
            throw ConfigError("permute: invalid permutation");
        seen[std::size_t(p)] = true;
    }
    std::vector<std::int64_t> odims(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) odims[i] = x->dim(std::size_t(perm[i]));

    std::vector<std::int64_t> xstr(x->rank()), ostr_in_x(x->rank());
    std::int64_t s = 1;
    for (std::size_t i = x->rank(); i-- > 0;) {
        xstr[i] = s;
        s *= x->dim(i);
    }
    for (std::size_t i = 0; i < perm.size(); ++i) ostr_in_x[i] = xstr[std::size_t(perm[i])];

    auto out = make_tensor<T>(odims, wants_grad(tape, {x}));
    const std::size_t rank = odims.size();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t xi = 0;
    const std::int64_t total = out->numel();
    for (std::int64_t oi = 0; oi < total; ++oi) {
        out->data[std::size_t(oi)] = x->data[std::size_t(xi)];
        for (std::size_t dpos = rank; dpos-- > 0;) {
            idx[dpos]++;
            xi += ostr_in_x[dpos];
            if (idx[dpos] < odims[dpos]) break;
            xi -= ostr_in_x[dpos] * odims[dpos];
            idx[dpos] = 0;
        }
    }
    auto bw = [x, out, ostr_in_x, odims]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const std::size_t rank = odims.size();
        std::vector<std::int64_t> idx(rank, 0);
        std::int64_t xi = 0;
        const std::int64_t total = out->numel();
        for (std::int64_t oi = 0; oi < total; ++oi) {
            gx[std::size_t(xi)] += out->grad[std::size_t(oi)];
            for (std::size_t dpos = rank; dpos-- > 0;) {
                idx[dpos]++;
                xi += ostr_in_x[dpos];
                if (idx[dpos] < odims[dpos]) break;
                xi -= ostr_in_x[dpos] * odims[dpos];
                idx[dpos] = 0;
            }
        }
    };
    record<T>(tape, "permute", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, std::vector<std::int64_t> dims) {
    if (shape_numel<T>(dims) != x->numel())
        throw ShapeError("reshape: element count mismatch for " + shape_str<T>(x->dims) + " -> " +
                         shape_str<T>(dims));
    auto out = make_tensor<T>(std::move(dims), wants_grad(tape, {x}));
    out->data = x->data;
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (gx) kern::axpy(T(1), out->grad.data(), gx, out->grad.size());
    };
    record<T>(tape, "reshape", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reduce_sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1}, wants_grad(tape, {x}));
    out->data[0] = kern::sum(x->data.data(), x->data.size());
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T g = out->grad[0];
        for (std::size_t i = 0; i < x->data.size(); ++i) gx[i] += g;
    };
    record<T>(tape, "reduce_sum_all", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> reduce_mean_all(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1}, wants_grad(tape, {x}));
    out->data[0] = kern::sum(x->data.data(), x->data.size()) / T(x->numel());
    auto bw = [x, out]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        const T g = out->grad[0] / T(x->numel());
        for (std::size_t i = 0; i < x->data.size(); ++i) gx[i] += g;
    };
    record<T>(tape, "reduce_mean_all", {x}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> reduce_sum_channelwise(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) throw ShapeError("reduce_sum_channelwise: input must be rank 4");
    const std::int64_t bsz = x->dim(0), ch = x->dim(1), hw = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({ch}, wants_grad(tape, {x}));
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t c = 0; c < ch; ++c)
            out->data[std::size_t(c)] +=
                kern::sum(x->data.data() + (b * ch + c) * hw, std::size_t(hw));
    auto bw = [x, out, bsz, ch, hw]() {
        T* gx = grad_ptr(x);
        if (!gx) return;
        for (std::int64_t b = 0; b < bsz; ++b)
            for (std::int64_t c = 0; c < ch; ++c) {
                const T g = out->grad[std::size_t(c)];
                T* p = gx + (b * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) p[i] += g;
            }
    };
    record<T>(tape, "reduce_sum_channelwise", {x}, out, bw);
    return out;
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> multi_head_self_attention(Tape<T>* tape, const TensorPtr<T>& tokens,
                                       const MhsaParams<T>& p, int heads) {
    if (tokens->rank() != 3) throw ShapeError("attention: tokens must be [B,N,D]");
    const std::int64_t bsz = tokens->dim(0), n = tokens->dim(1), d = tokens->dim(2);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("attention: embed dim " + std::to_string(d) +
                          " not divisible by head count " + std::to_string(heads));
    const std::int64_t dh = d / heads;

    auto split_heads = [&](const TensorPtr<T>& t) {
        auto r = reshape(tape, t, {bsz, n, heads, dh});
        auto pm = permute(tape, r, {0, 2, 1, 3});
        return reshape(tape, pm, {bsz * heads, n, dh});
    };
    auto q = split_heads(linear(tape, tokens, p.wq, p.bq));
    auto k = split_heads(linear(tape, tokens, p.wk, p.bk));
    auto v = split_heads(linear(tape, tokens, p.wv, p.bv));

    auto scores = affine(tape, bmm(tape, q, k, true), 1.0 / std::sqrt(double(dh)), 0.0);
    auto attn = softmax(tape, scores, 2);
    auto ctx = bmm(tape, attn, v, false);
    auto merged = reshape(
        tape, permute(tape, reshape(tape, ctx, {bsz, heads, n, dh}), {0, 2, 1, 3}), {bsz, n, d});
    return linear(tape, merged, p.wo, p.bo);
}

template <typename T>
TensorPtr<T> csam(Tape<T>* tape, const TensorPtr<T>& x, const CsamWeights<T>& w) {
    const Conv2dSpec pointwise{};
    auto mlp = [&](const TensorPtr<T>& pooled) {
        auto hidden = relu(tape, conv2d(tape, pooled, w.mlp_w1, w.mlp_b1, pointwise));
        return conv2d(tape, hidden, w.mlp_w2, w.mlp_b2, pointwise);
    };
    auto ca = sigmoid(tape, add(tape, mlp(global_avg_pool(tape, x)),
                                mlp(global_max_pool(tape, x))));
    auto xc = mul(tape, x, ca);
    auto stacked = concat<T>(tape, {channel_mean(tape, xc), channel_max(tape, xc)}, 1);
    Conv2dSpec sp;
    sp.padding = int(w.spatial_w->dim(2)) / 2;
    auto sa = sigmoid(tape, conv2d(tape, stacked, w.spatial_w, w.spatial_b, sp));
    return mul(tape, xc, sa);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <typename T>
void validate_labels(const TensorPtr<T>& labels, std::int64_t num_classes) {
    for (T v : labels->data) {
        const double dv = double(v);
        if (dv != std::floor(dv) || dv < 0 || dv >= double(num_classes))
            throw UsageError("labels must be exact integers in [0, " +
                             std::to_string(num_classes) + "), got " + std::to_string(dv));
    }
}

template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits,
                                   const TensorPtr<T>& labels) {
    if (logits->rank() != 4) throw ShapeError("cross_entropy: logits must be [B,C,H,W]");
    const std::int64_t bsz = logits->dim(0), ch = logits->dim(1), hw = logits->dim(2) * logits->dim(3);
    if (labels->rank() != 3 || labels->dim(0) != bsz || labels->dim(1) != logits->dim(2) ||
        labels->dim(2) != logits->dim(3))
        throw ShapeError("cross_entropy: labels must be [B,H,W] matching the logits");
    validate_labels(labels, ch);

    const std::int64_t npix = bsz * hw;
    auto out = make_tensor<T>({1}, wants_grad(tape, {logits}));
    double acc = 0.0;
    for (std::int64_t b = 0; b < bsz; ++b) {
        const T* z = logits->data.data() + b * ch * hw;
        const T* lb = labels->data.data() + b * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            double mx = double(z[i]);
            for (std::int64_t c = 1; c < ch; ++c) mx = std::max(mx, double(z[c * hw + i]));
            double denom = 0.0;
            for (std::int64_t c = 0; c < ch; ++c) denom += std::exp(double(z[c * hw + i]) - mx);
            const std::int64_t lab = std::int64_t(lb[i]);
            acc += mx + std::log(denom) - double(z[lab * hw + i]);
        }
    }
    out->data[0] = T(acc / double(npix));

    auto bw = [logits, labels, out, bsz, ch, hw, npix]() {
        T* gx = grad_ptr(logits);
        if (!gx) return;
        const T g = out->grad[0] / T(npix);
        for (std::int64_t b = 0; b < bsz; ++b) {
            const T* z = logits->data.data() + b * ch * hw;
            const T* lb = labels->data.data() + b * hw;
            T* gp = gx + b * ch * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                double mx = double(z[i]);
                for (std::int64_t c = 1; c < ch; ++c) mx = std::max(mx, double(z[c * hw + i]));
                double denom = 0.0;
                for (std::int64_t c = 0; c < ch; ++c) denom += std::exp(double(z[c * hw + i]) - mx);
                const std::int64_t lab = std::int64_t(lb[i]);
                for (std::int64_t c = 0; c < ch; ++c) {
                    const T prob = T(std::exp(double(z[c * hw + i]) - mx) / denom);
                    gp[c * hw + i] += g * (prob - (c == lab ? T(1) : T(0)));
                }
            }
        }
    };
    record<T>(tape, "softmax_cross_entropy", {logits}, out, bw);
    return out;
}

template <typename T>
TensorPtr<T> dice_loss(Tape<T>* tape, const TensorPtr<T>& logits, const TensorPtr<T>& labels,
                       double eps) {
    if (logits->rank() != 4) throw ShapeError("dice_loss: logits must be [B,C,H,W]");
    const std::int64_t bsz = logits->dim(0), ch = logits->dim(1), hw = logits->dim(2) * logits->dim(3);
    if (labels->rank() != 3 || labels->dim(0) != bsz || labels->dim(1) != logits->dim(2) ||
        labels->dim(2) != logits->dim(3))
        throw ShapeError("dice_loss: labels must be [B,H,W] matching the logits");
    validate_labels(labels, ch);

    // one-hot targets and per-class pixel counts as constants
    auto onehot = make_tensor<T>(logits->dims);
    auto gsum = make_tensor<T>({ch});
    for (std::int64_t b = 0; b < bsz; ++b) {
        const T* lb = labels->data.data() + b * hw;
        T* oh = onehot->data.data() + b * ch * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const std::int64_t lab = std::int64_t(lb[i]);
            oh[lab * hw + i] = T(1);
            gsum->data[std::size_t(lab)] += T(1);
        }
    }

    auto p = softmax(tape, logits, 1);
    auto inter = reduce_sum_channelwise(tape, mul(tape, p, onehot));
    auto psum = reduce_sum_channelwise(tape, p);
    auto num = affine(tape, inter, 2.0, eps);
    auto den = affine(tape, add(tape, psum, gsum), 1.0, eps);
    auto frac = div(tape, num, den);
    auto per_class = affine(tape, frac, -1.0, 1.0);
    return reduce_mean_all(tape, per_class);
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define SQA_INSTANTIATE_OPS(T)                                                                     \
    template TensorPtr<T> conv2d<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,           \
                                    const TensorPtr<T>&, const Conv2dSpec&);                       \
    template TensorPtr<T> bilinear_resize<T>(Tape<T>*, const TensorPtr<T>&, std::int64_t,         \
                                             std::int64_t);                                        \
    template TensorPtr<T> add<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);             \
    template TensorPtr<T> sub<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);             \
    template TensorPtr<T> mul<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);             \
    template TensorPtr<T> div<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);             \
    template TensorPtr<T> affine<T>(Tape<T>*, const TensorPtr<T>&, double, double);               \
    template TensorPtr<T> relu<T>(Tape<T>*, const TensorPtr<T>&);                                 \
    template TensorPtr<T> gelu<T>(Tape<T>*, const TensorPtr<T>&);                                 \
    template TensorPtr<T> sigmoid<T>(Tape<T>*, const TensorPtr<T>&);                              \
    template TensorPtr<T> log<T>(Tape<T>*, const TensorPtr<T>&);                                  \
    template TensorPtr<T> softmax<T>(Tape<T>*, const TensorPtr<T>&, int);                         \
    template TensorPtr<T> concat<T>(Tape<T>*, const std::vector<TensorPtr<T>>&, int);             \
    template std::vector<TensorPtr<T>> split<T>(Tape<T>*, const TensorPtr<T>&, int,               \
                                                const std::vector<std::int64_t>&);                \
    template TensorPtr<T> batch_norm<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,       \
                                        const TensorPtr<T>&, const TensorPtr<T>&,                 \
                                        const TensorPtr<T>&, double, double, bool);               \
    template TensorPtr<T> layer_norm<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,       \
                                        const TensorPtr<T>&, double);                             \
    template TensorPtr<T> global_avg_pool<T>(Tape<T>*, const TensorPtr<T>&);                      \
    template TensorPtr<T> global_max_pool<T>(Tape<T>*, const TensorPtr<T>&);                      \
    template TensorPtr<T> max_pool2d<T>(Tape<T>*, const TensorPtr<T>&, int, int, int);            \
    template TensorPtr<T> channel_mean<T>(Tape<T>*, const TensorPtr<T>&);                         \
    template TensorPtr<T> channel_max<T>(Tape<T>*, const TensorPtr<T>&);                          \
    template TensorPtr<T> linear<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,           \
                                    const TensorPtr<T>&);                                         \
    template TensorPtr<T> bmm<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&, bool);       \
    template TensorPtr<T> permute<T>(Tape<T>*, const TensorPtr<T>&, const std::vector<int>&);     \
    template TensorPtr<T> reshape<T>(Tape<T>*, const TensorPtr<T>&, std::vector<std::int64_t>);   \
    template TensorPtr<T> reduce_sum_all<T>(Tape<T>*, const TensorPtr<T>&);                       \
    template TensorPtr<T> reduce_mean_all<T>(Tape<T>*, const TensorPtr<T>&);                      \
    template TensorPtr<T> reduce_sum_channelwise<T>(Tape<T>*, const TensorPtr<T>&);               \
    template TensorPtr<T> multi_head_self_attention<T>(Tape<T>*, const TensorPtr<T>&,             \
                                                       const MhsaParams<T>&, int);                \
    template TensorPtr<T> csam<T>(Tape<T>*, const TensorPtr<T>&, const CsamWeights<T>&);          \
    template TensorPtr<T> softmax_cross_entropy<T>(Tape<T>*, const TensorPtr<T>&,                 \
                                                   const TensorPtr<T>&);                          \
    template TensorPtr<T> dice_loss<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,        \
                                       double);                                                   \
    template void validate_labels<T>(const TensorPtr<T>&, std::int64_t);

SQA_INSTANTIATE_OPS(float)
SQA_INSTANTIATE_OPS(double)

}  // namespace sqa
