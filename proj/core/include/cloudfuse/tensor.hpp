#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cloudfuse {

// Dense row-major n-d array participating in a reverse-mode gradient
// graph. Templated on scalar so training runs in float while gradient
// checks run the identical code paths in double.
template <typename T>
struct TensorT : std::enable_shared_from_this<TensorT<T>> {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated iff requires_grad
    bool requires_grad = false;
    std::string name;

    // graph links for one forward pass
    std::vector<std::shared_ptr<TensorT<T>>> parents;
    std::function<void()> backward_fn;
    bool backward_consumed = false;

    static std::shared_ptr<TensorT<T>> create(std::vector<int> shape,
                                              bool requires_grad = false) {
        auto t = std::make_shared<TensorT<T>>();
        t->shape = std::move(shape);
        std::size_t n = 1;
        for (int d : t->shape) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        t->data.assign(n, T(0));
        t->requires_grad = requires_grad;
        if (requires_grad) t->grad.assign(n, T(0));
        return t;
    }

    static std::shared_ptr<TensorT<T>> from_data(std::vector<int> shape,
                                                 std::vector<T> values,
                                                 bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        if (values.size() != t->data.size())
            throw std::invalid_argument("tensor data length does not match shape");
        t->data = std::move(values);
        return t;
    }

    static std::shared_ptr<TensorT<T>> scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    std::size_t numel() const { return data.size(); }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), T(0));
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

namespace detail {

template <typename T>
inline void check_same_shape(const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                             const char* op) {
    if (a->shape != b->shape) {
        std::ostringstream os;
        os << op << ": shape mismatch [";
        for (int d : a->shape) os << d << " ";
        os << "] vs [";
        for (int d : b->shape) os << d << " ";
        os << "]";
        throw std::invalid_argument(os.str());
    }
}

template <typename T>
inline TensorPtrT<T> make_result(std::vector<int> shape,
                                 std::vector<TensorPtrT<T>> parents) {
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    auto out = TensorT<T>::create(std::move(shape), rg);
    if (rg) out->parents = std::move(parents);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_result<T>(a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [a, b, ow]() {
            auto out = ow.lock();
            if (a->requires_grad)
                for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[i];
        };
    }
    return out;
}

// out = mul * t + shift, elementwise with scalar coefficients
template <typename T>
TensorPtrT<T> affine(const TensorPtrT<T>& t, T mul, T shift) {
    auto out = detail::make_result<T>(t->shape, {t});
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = mul * t->data[i] + shift;
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [t, mul, ow]() {
            auto out = ow.lock();
            for (std::size_t i = 0; i < t->numel(); ++i) t->grad[i] += mul * out->grad[i];
        };
    }
    return out;
}

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& t) {
    auto out = detail::make_result<T>(t->shape, {t});
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = t->data[i] > T(0) ? t->data[i] : T(0);
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [t, ow]() {
            auto out = ow.lock();
            for (std::size_t i = 0; i < t->numel(); ++i)
                if (t->data[i] > T(0)) t->grad[i] += out->grad[i];
        };
    }
    return out;
}

template <typename T>
TensorPtrT<T> sigmoid(const TensorPtrT<T>& t) {
    auto out = detail::make_result<T>(t->shape, {t});
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = T(1) / (T(1) + std::exp(-t->data[i]));
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [t, ow]() {
            auto out = ow.lock();
            for (std::size_t i = 0; i < t->numel(); ++i) {
                T s = out->data[i];
                t->grad[i] += out->grad[i] * s * (T(1) - s);
            }
        };
    }
    return out;
}

// x: [N,C,H,W], w: [N,1,H,W]; broadcasts the single-channel weight over C
template <typename T>
TensorPtrT<T> mul_channel_broadcast(const TensorPtrT<T>& x, const TensorPtrT<T>& w) {
    if (x->shape.size() != 4 || w->shape.size() != 4 || w->shape[1] != 1 ||
        x->shape[0] != w->shape[0] || x->shape[2] != w->shape[2] ||
        x->shape[3] != w->shape[3])
        throw std::invalid_argument("mul_channel_broadcast: expected [N,C,H,W] x [N,1,H,W]");
    const int N = x->shape[0], C = x->shape[1];
    const std::size_t hw = static_cast<std::size_t>(x->shape[2]) * x->shape[3];
    auto out = detail::make_result<T>(x->shape, {x, w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x->data.data() + (static_cast<std::size_t>(n) * C + c) * hw;
            const T* wp = w->data.data() + static_cast<std::size_t>(n) * hw;
            T* op = out->data.data() + (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) op[i] = xp[i] * wp[i];
        }
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [x, w, N, C, hw, ow]() {
            auto out = ow.lock();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const std::size_t xoff = (static_cast<std::size_t>(n) * C + c) * hw;
                    const std::size_t woff = static_cast<std::size_t>(n) * hw;
                    const T* g = out->grad.data() + xoff;
                    if (x->requires_grad)
                        for (std::size_t i = 0; i < hw; ++i)
                            x->grad[xoff + i] += g[i] * w->data[woff + i];
                    if (w->requires_grad)
                        for (std::size_t i = 0; i < hw; ++i)
                            w->grad[woff + i] += g[i] * x->data[xoff + i];
                }
        };
    }
    return out;
}

// concatenate along the channel axis of [N,C,H,W]
template <typename T>
TensorPtrT<T> concat_channels(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->shape.size() != 4 || b->shape.size() != 4 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[2] || a->shape[3] != b->shape[3])
        throw std::invalid_argument("concat_channels: incompatible shapes");
    const int N = a->shape[0], Ca = a->shape[1], Cb = b->shape[1];
    const std::size_t hw = static_cast<std::size_t>(a->shape[2]) * a->shape[3];
    auto out = detail::make_result<T>({N, Ca + Cb, a->shape[2], a->shape[3]}, {a, b});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a->data.data() + static_cast<std::size_t>(n) * Ca * hw, Ca * hw,
                    out->data.data() + static_cast<std::size_t>(n) * (Ca + Cb) * hw);
        std::copy_n(b->data.data() + static_cast<std::size_t>(n) * Cb * hw, Cb * hw,
                    out->data.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * hw);
    }
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [a, b, N, Ca, Cb, hw, ow]() {
            auto out = ow.lock();
            for (int n = 0; n < N; ++n) {
                const std::size_t ooff = static_cast<std::size_t>(n) * (Ca + Cb) * hw;
                if (a->requires_grad)
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * hw; ++i)
                        a->grad[static_cast<std::size_t>(n) * Ca * hw + i] += out->grad[ooff + i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * hw; ++i)
                        b->grad[static_cast<std::size_t>(n) * Cb * hw + i] +=
                            out->grad[ooff + Ca * hw + i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial ops

template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& input, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias, int stride = 1, int padding = 0) {
    if (input->shape.size() != 4 || weight->shape.size() != 4)
        throw std::invalid_argument("conv2d: input and weight must be 4-d");
    const int N = input->shape[0], C = input->shape[1];
    const int H = input->shape[2], W = input->shape[3];
    const int F = weight->shape[0], k = weight->shape[2];
    if (weight->shape[2] != weight->shape[3])
        throw std::invalid_argument("conv2d: kernel must be square");
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (weight->shape[1] != C) {
        std::ostringstream os;
        os << "conv2d: input has " << C << " channels but weight expects "
           << weight->shape[1];
        throw std::invalid_argument(os.str());
    }
    if (bias->shape != std::vector<int>{F})
        throw std::invalid_argument("conv2d: bias must have shape [F]");
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: output would be empty");

    auto out = detail::make_result<T>({N, F, Ho, Wo}, {input, weight, bias});
    const std::size_t in_hw = static_cast<std::size_t>(H) * W;
    const std::size_t out_hw = static_cast<std::size_t>(Ho) * Wo;

    // valid output index range [lo, hi) for one kernel offset, hoisted out of
    // the pixel loops so the innermost loop is branch-free and vectorizable
    const auto valid = [stride, padding](int kk, int in_size, int out_size, int& lo, int& hi) {
        int a = padding - kk;
        lo = a > 0 ? (a + stride - 1) / stride : 0;
        int b = in_size - 1 + padding - kk;
        hi = b < 0 ? 0 : std::min(out_size, b / stride + 1);
    };

    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
            T* op = out->data.data() + (static_cast<std::size_t>(n) * F + f) * out_hw;
            std::fill_n(op, out_hw, bias->data[f]);
            for (int c = 0; c < C; ++c) {
                const T* ip = input->data.data() + (static_cast<std::size_t>(n) * C + c) * in_hw;
                const T* wp = weight->data.data() +
                              (static_cast<std::size_t>(f) * C + c) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                    int oy_lo, oy_hi;
                    valid(ky, H, Ho, oy_lo, oy_hi);
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wp[ky * k + kx];
                        int ox_lo, ox_hi;
                        valid(kx, W, Wo, ox_lo, ox_hi);
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            T* orow = op + static_cast<std::size_t>(oy) * Wo;
                            const T* irow = ip + static_cast<std::size_t>(iy) * W;
                            if (stride == 1) {
                                const T* ir = irow - padding + kx;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += wv * ir[ox];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += wv * irow[ox * stride - padding + kx];
                            }
                        }
                    }
                }
            }
        }

    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [input, weight, bias, stride, padding, N, C, H, W, F, k,
                            Ho, Wo, in_hw, out_hw, ow]() {
            auto out = ow.lock();
            for (int n = 0; n < N; ++n)
                for (int f = 0; f < F; ++f) {
                    const T* gp = out->grad.data() +
                                  (static_cast<std::size_t>(n) * F + f) * out_hw;
                    if (bias->requires_grad) {
                        T s = 0;
                        for (std::size_t i = 0; i < out_hw; ++i) s += gp[i];
                        bias->grad[f] += s;
                    }
                    for (int c = 0; c < C; ++c) {
                        const std::size_t ioff = (static_cast<std::size_t>(n) * C + c) * in_hw;
                        const std::size_t woff = (static_cast<std::size_t>(f) * C + c) * k * k;
                        const auto valid = [stride, padding](int kk, int in_size, int out_size,
                                                             int& lo, int& hi) {
                            int a = padding - kk;
                            lo = a > 0 ? (a + stride - 1) / stride : 0;
                            int b = in_size - 1 + padding - kk;
                            hi = b < 0 ? 0 : std::min(out_size, b / stride + 1);
                        };
                        for (int ky = 0; ky < k; ++ky) {
                            int oy_lo, oy_hi;
                            valid(ky, H, Ho, oy_lo, oy_hi);
                            for (int kx = 0; kx < k; ++kx) {
                                const T wv = weight->data[woff + ky * k + kx];
                                int ox_lo, ox_hi;
                                valid(kx, W, Wo, ox_lo, ox_hi);
                                T wgrad = 0;
                                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                    const int iy = oy * stride - padding + ky;
                                    const T* grow = gp + static_cast<std::size_t>(oy) * Wo;
                                    const T* irow = input->data.data() + ioff +
                                                    static_cast<std::size_t>(iy) * W;
                                    T* igrow = input->requires_grad
                                                   ? input->grad.data() + ioff +
                                                         static_cast<std::size_t>(iy) * W
                                                   : nullptr;
                                    if (stride == 1) {
                                        const T* ir = irow - padding + kx;
#pragma omp simd reduction(+ : wgrad)
                                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                                            wgrad += grow[ox] * ir[ox];
                                        if (igrow) {
                                            T* igr = igrow - padding + kx;
#pragma omp simd
                                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                                igr[ox] += wv * grow[ox];
                                        }
                                    } else {
                                        for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                            const int ix = ox * stride - padding + kx;
                                            wgrad += grow[ox] * irow[ix];
                                            if (igrow) igrow[ix] += wv * grow[ox];
                                        }
                                    }
                                }
                                if (weight->requires_grad)
                                    weight->grad[woff + ky * k + kx] += wgrad;
                            }
                        }
                    }
                }
        };
    }
    return out;
}

template <typename T>
TensorPtrT<T> upsample_nearest2x(const TensorPtrT<T>& input) {
    if (input->shape.size() != 4)
        throw std::invalid_argument("upsample_nearest2x: input must be 4-d");
    const int N = input->shape[0], C = input->shape[1];
    const int H = input->shape[2], W = input->shape[3];
    auto out = detail::make_result<T>({N, C, 2 * H, 2 * W}, {input});
    for (int nc = 0; nc < N * C; ++nc) {
        const T* ip = input->data.data() + static_cast<std::size_t>(nc) * H * W;
        T* op = out->data.data() + static_cast<std::size_t>(nc) * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const T v = ip[y * W + x];
                T* o = op + (2 * y) * (2 * W) + 2 * x;
                o[0] = v;
                o[1] = v;
                o[2 * W] = v;
                o[2 * W + 1] = v;
            }
    }
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [input, N, C, H, W, ow]() {
            auto out = ow.lock();
            for (int nc = 0; nc < N * C; ++nc) {
                T* ig = input->grad.data() + static_cast<std::size_t>(nc) * H * W;
                const T* og = out->grad.data() + static_cast<std::size_t>(nc) * 4 * H * W;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const T* o = og + (2 * y) * (2 * W) + 2 * x;
                        ig[y * W + x] += o[0] + o[1] + o[2 * W] + o[2 * W + 1];
                    }
            }
        };
    }
    return out;
}

// 2x2 average pooling; spatial dims must be even
template <typename T>
TensorPtrT<T> avg_pool2x(const TensorPtrT<T>& input) {
    if (input->shape.size() != 4)
        throw std::invalid_argument("avg_pool2x: input must be 4-d");
    const int N = input->shape[0], C = input->shape[1];
    const int H = input->shape[2], W = input->shape[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("avg_pool2x: spatial dims must be even");
    const int Ho = H / 2, Wo = W / 2;
    auto out = detail::make_result<T>({N, C, Ho, Wo}, {input});
    for (int nc = 0; nc < N * C; ++nc) {
        const T* ip = input->data.data() + static_cast<std::size_t>(nc) * H * W;
        T* op = out->data.data() + static_cast<std::size_t>(nc) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                const T* i = ip + (2 * y) * W + 2 * x;
                op[y * Wo + x] = (i[0] + i[1] + i[W] + i[W + 1]) * T(0.25);
            }
    }
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [input, N, C, H, W, Ho, Wo, ow]() {
            auto out = ow.lock();
            for (int nc = 0; nc < N * C; ++nc) {
                T* ig = input->grad.data() + static_cast<std::size_t>(nc) * H * W;
                const T* og = out->grad.data() + static_cast<std::size_t>(nc) * Ho * Wo;
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x) {
                        const T g = og[y * Wo + x] * T(0.25);
                        T* i = ig + (2 * y) * W + 2 * x;
                        i[0] += g;
                        i[1] += g;
                        i[W] += g;
                        i[W + 1] += g;
                    }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// stack softmax: per-pixel softmax across K tensors of identical shape

template <typename T>
std::vector<TensorPtrT<T>> softmax_over_stack(const std::vector<TensorPtrT<T>>& inputs) {
    if (inputs.empty())
        throw std::invalid_argument("softmax_over_stack: empty stack");
    const std::size_t K = inputs.size();
    const std::size_t n = inputs[0]->numel();
    for (auto& t : inputs) detail::check_same_shape(inputs[0], t, "softmax_over_stack");

    std::vector<TensorPtrT<T>> outs(K);
    for (std::size_t j = 0; j < K; ++j)
        outs[j] = detail::make_result<T>(inputs[0]->shape, inputs);

    std::vector<T> denom(n, T(0));
    std::vector<T> mx(n, -std::numeric_limits<T>::infinity());
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t i = 0; i < n; ++i) mx[i] = std::max(mx[i], inputs[j]->data[i]);
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            const T e = std::exp(inputs[j]->data[i] - mx[i]);
            outs[j]->data[i] = e;
            denom[i] += e;
        }
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t i = 0; i < n; ++i) outs[j]->data[i] /= denom[i];

    if (outs[0]->requires_grad) {
        // per output node m: dL/dq_j += dL/dw_m * w_m * (delta_jm - w_j);
        // weights are snapshotted so each node's backward is self-contained
        auto weights = std::make_shared<std::vector<std::vector<T>>>();
        weights->reserve(K);
        for (std::size_t j = 0; j < K; ++j) weights->push_back(outs[j]->data);
        for (std::size_t m = 0; m < K; ++m) {
            auto om = std::weak_ptr<TensorT<T>>(outs[m]);
            std::vector<TensorPtrT<T>> ins = inputs;
            outs[m]->backward_fn = [ins, weights, m, n, om]() {
                auto outm = om.lock();
                for (std::size_t j = 0; j < ins.size(); ++j) {
                    if (!ins[j]->requires_grad) continue;
                    const std::vector<T>& wj = (*weights)[j];
                    const std::vector<T>& wm = (*weights)[m];
                    for (std::size_t i = 0; i < n; ++i) {
                        const T delta = (j == m) ? T(1) : T(0);
                        ins[j]->grad[i] += outm->grad[i] * wm[i] * (delta - wj[i]);
                    }
                }
            };
        }
    }
    return outs;
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
TensorPtrT<T> cross_entropy(const TensorPtrT<T>& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 4)
        throw std::invalid_argument("cross_entropy: logits must be [N,C,H,W]");
    const int N = logits->shape[0], C = logits->shape[1];
    const int H = logits->shape[2], W = logits->shape[3];
    if (labels.size() != static_cast<std::size_t>(N) * H * W)
        throw std::invalid_argument("cross_entropy: label count does not match pixels");
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const std::size_t chw = static_cast<std::size_t>(C) * hw;

    auto out = detail::make_result<T>({1}, {logits});
    // per-pixel softmax probabilities, kept for the backward pass
    auto probs = std::make_shared<std::vector<T>>(logits->data.size());
    T loss = 0;
    for (int n = 0; n < N; ++n)
        for (std::size_t p = 0; p < hw; ++p) {
            const int y = n * H * W + static_cast<int>(p);
            const int label = labels[y];
            if (label < 0 || label >= C) {
                std::ostringstream os;
                os << "cross_entropy: label " << label << " out of range [0," << C
                   << ") at pixel (n=" << n << ", y=" << p / W << ", x=" << p % W << ")";
                throw std::invalid_argument(os.str());
            }
            const std::size_t base = static_cast<std::size_t>(n) * chw + p;
            T mx = logits->data[base];
            for (int c = 1; c < C; ++c) mx = std::max(mx, logits->data[base + c * hw]);
            T denom = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(logits->data[base + c * hw] - mx);
                (*probs)[base + c * hw] = e;
                denom += e;
            }
            for (int c = 0; c < C; ++c) (*probs)[base + c * hw] /= denom;
            loss -= std::log((*probs)[base + label * hw]);
        }
    const T inv_count = T(1) / (static_cast<T>(N) * static_cast<T>(hw));
    out->data[0] = loss * inv_count;

    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [logits, labels, probs, N, C, H, W, hw, chw, inv_count, ow]() {
            auto out = ow.lock();
            const T g = out->grad[0] * inv_count;
            for (int n = 0; n < N; ++n)
                for (std::size_t p = 0; p < hw; ++p) {
                    const int label = labels[static_cast<std::size_t>(n) * hw + p];
                    const std::size_t base = static_cast<std::size_t>(n) * chw + p;
                    for (int c = 0; c < C; ++c) {
                        T d = (*probs)[base + c * hw];
                        if (c == label) d -= T(1);
                        logits->grad[base + c * hw] += g * d;
                    }
                }
        };
    }
    return out;
}

inline constexpr double kBceClamp = 1e-7;

template <typename T>
TensorPtrT<T> bce_loss(const TensorPtrT<T>& pred, const TensorPtrT<T>& target) {
    detail::check_same_shape(pred, target, "bce_loss");
    const std::size_t n = pred->numel();
    const T eps = static_cast<T>(kBceClamp);
    auto out = detail::make_result<T>({1}, {pred});
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T p = std::clamp(pred->data[i], eps, T(1) - eps);
        const T t = target->data[i];
        loss -= t * std::log(p) + (T(1) - t) * std::log(T(1) - p);
    }
    out->data[0] = loss / static_cast<T>(n);
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [pred, target, n, eps, ow]() {
            auto out = ow.lock();
            const T g = out->grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T p = std::clamp(pred->data[i], eps, T(1) - eps);
                const T t = target->data[i];
                if (pred->data[i] > eps && pred->data[i] < T(1) - eps)
                    pred->grad[i] += g * (-t / p + (T(1) - t) / (T(1) - p));
            }
        };
    }
    return out;
}

inline constexpr double kDiceSmooth = 1.0;

template <typename T>
TensorPtrT<T> dice_coefficient(const TensorPtrT<T>& pred, const TensorPtrT<T>& target) {
    detail::check_same_shape(pred, target, "dice_coefficient");
    const std::size_t n = pred->numel();
    const T eps = static_cast<T>(kDiceSmooth);
    T inter = 0, psum = 0, tsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        inter += pred->data[i] * target->data[i];
        psum += pred->data[i];
        tsum += target->data[i];
    }
    const T num = T(2) * inter + eps;
    const T den = psum + tsum + eps;
    auto out = detail::make_result<T>({1}, {pred});
    out->data[0] = num / den;
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [pred, target, n, num, den, ow]() {
            auto out = ow.lock();
            const T g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i)
                pred->grad[i] +=
                    g * (T(2) * target->data[i] * den - num) / (den * den);
        };
    }
    return out;
}

template <typename T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& t) {
    auto out = detail::make_result<T>({1}, {t});
    T s = 0;
    for (T v : t->data) s += v;
    out->data[0] = s;
    if (out->requires_grad) {
        auto ow = std::weak_ptr<TensorT<T>>(out);
        out->backward_fn = [t, ow]() {
            auto out = ow.lock();
            for (std::size_t i = 0; i < t->numel(); ++i) t->grad[i] += out->grad[0];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward pass

template <typename T>
void backward(const TensorPtrT<T>& root) {
    if (root->numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    if (!root->requires_grad)
        throw std::invalid_argument("backward: root does not require grad");
    if (root->backward_consumed)
        throw std::logic_error("backward: graph already consumed; run a new forward pass");

    // iterative post-order topological sort
    std::vector<TensorT<T>*> order;
    std::unordered_set<TensorT<T>*> visited;
    std::vector<std::pair<TensorPtrT<T>, std::size_t>> stack;
    stack.push_back({root, 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && visited.count(node.get())) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            auto next = node->parents[idx];
            ++idx;
            if (!visited.count(next.get()) && next->requires_grad)
                stack.push_back({next, 0});
        } else {
            visited.insert(node.get());
            order.push_back(node.get());
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorT<T>* node = *it;
        if (node->backward_fn) node->backward_fn();
        node->backward_consumed = true;
    }
}

} // namespace cloudfuse
