#pragma once

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>
#include <vector>

#include "evhar/common.hpp"
#include "evhar/detail/gemm.hpp"
#include "evhar/tensor.hpp"

// Forward/backward passes for the layer set of the clip classifier.
// Conventions: 5-d activations are (B, C, T, H, W) row-major; convolutions
// are 3x3x3 cross-correlations with stride 1 and zero padding 1, realized
// as one GEMM per (sample, time slice) over a gathered patch matrix.
//
// Every parallel region partitions work by sample or channel and keeps all
// floating-point reductions inside a single thread, so results are
// independent of the worker count.

namespace evhar::nn {

enum class Mode { train, eval };

namespace conv_detail {

inline void check_5d(const std::vector<int64_t>& s, const char* what) {
    if (s.size() != 5) throw ShapeError(std::string(what) + " must be 5-d (B,C,T,H,W)");
}

// Zero-pads one sample (C,T,H,W) by 1 on each of T/H/W.
template <typename T>
void pad_sample(const T* src, int64_t c, int64_t t, int64_t h, int64_t w, std::vector<T>& dst) {
    const int64_t tp = t + 2, hp = h + 2, wp = w + 2;
    dst.assign(static_cast<size_t>(c * tp * hp * wp), T(0));
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t hi = 0; hi < h; ++hi) {
                const T* s = src + ((ci * t + ti) * h + hi) * w;
                T* d = dst.data() + (((ci * tp + ti + 1) * hp + hi + 1) * wp + 1);
                std::memcpy(d, s, sizeof(T) * static_cast<size_t>(w));
            }
}

// Patch panel for one padded temporal plane: (C*9, H*W) with row
// ci*9 + dh*3 + dw. `padded` is the (C, T+2, H+2, W+2) buffer from
// pad_sample, `plane` indexes its T+2 axis.
template <typename T>
void gather_plane(const std::vector<T>& padded, int64_t c, int64_t t, int64_t h, int64_t w,
                  int64_t plane, std::vector<T>& panel) {
    const int64_t tp = t + 2, hp = h + 2, wp = w + 2;
    panel.resize(static_cast<size_t>(c * 9 * h * w));
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* src = padded.data() + (ci * tp + plane) * hp * wp;
        for (int64_t dh = 0; dh < 3; ++dh)
            for (int64_t dw = 0; dw < 3; ++dw) {
                T* row = panel.data() + (ci * 9 + dh * 3 + dw) * h * w;
                for (int64_t hi = 0; hi < h; ++hi)
                    std::memcpy(row + hi * w, src + (hi + dh) * wp + dw,
                                sizeof(T) * static_cast<size_t>(w));
            }
    }
}

// Ring of three gathered panels: consecutive output slices share two of
// their three temporal planes, so each padded plane is gathered once.
template <typename T>
class PanelRing {
public:
    const std::vector<T>& get(const std::vector<T>& padded, int64_t c, int64_t t, int64_t h,
                              int64_t w, int64_t plane) {
        const size_t slot = static_cast<size_t>(plane % 3);
        if (plane_of_[slot] != plane) {
            gather_plane(padded, c, t, h, w, plane, panels_[slot]);
            plane_of_[slot] = plane;
        }
        return panels_[slot];
    }
    void reset() { plane_of_[0] = plane_of_[1] = plane_of_[2] = -1; }

private:
    std::vector<T> panels_[3];
    int64_t plane_of_[3] = {-1, -1, -1};
};

}  // namespace conv_detail

// ---------------------------------------------------------------- conv3d

template <typename T>
struct Conv3dCache {
    Tensor<T> input;
    Tensor<T> weights;
};

template <typename T>
struct Conv3dGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::type_identity_t<Conv3dCache<T>*> cache) {
    conv_detail::check_5d(input.shape(), "conv3d input");
    if (weights.rank() != 5 || weights.dim(2) != 3 || weights.dim(3) != 3 || weights.dim(4) != 3)
        throw ShapeError("conv3d weights must be (C_out,C_in,3,3,3)");
    const int64_t b = input.dim(0), c_in = input.dim(1), t = input.dim(2), h = input.dim(3),
                  w = input.dim(4);
    const int64_t c_out = weights.dim(0);
    if (weights.dim(1) != c_in) throw ShapeError("conv3d channel mismatch");
    if (bias.size() != c_out) throw ShapeError("conv3d bias length mismatch");

    Tensor<T> out({b, c_out, t, h, w});
    const int64_t k9 = c_in * 9, n = h * w;
    const int64_t sample_in = c_in * t * h * w, sample_out = c_out * t * h * w;

    // weights regrouped by temporal tap: wd[dt] is (C_out, C_in*9)
    std::vector<T> wd(static_cast<size_t>(3 * c_out * k9));
    for (int64_t co = 0; co < c_out; ++co)
        for (int64_t ci = 0; ci < c_in; ++ci)
            for (int64_t dt = 0; dt < 3; ++dt)
                std::memcpy(wd.data() + (dt * c_out + co) * k9 + ci * 9,
                            weights.data() + ((co * c_in + ci) * 3 + dt) * 9,
                            sizeof(T) * 9);

    // prefill with the bias; the tap GEMMs accumulate on top (beta = 1)
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t row = 0; row < b * c_out; ++row) {
        const T bv = bias[row % c_out];
        T* dst = out.data() + row * t * n;
        for (int64_t i = 0; i < t * n; ++i) dst[i] = bv;
    }

#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t bi = 0; bi < b; ++bi) {
        thread_local std::vector<T> padded;
        thread_local conv_detail::PanelRing<T> ring;
        conv_detail::pad_sample(input.data() + bi * sample_in, c_in, t, h, w, padded);
        ring.reset();
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t dt = 0; dt < 3; ++dt) {
                const std::vector<T>& panel = ring.get(padded, c_in, t, h, w, ti + dt);
                // out rows for this slice are strided by t*n
                detail::gemm(false, false, c_out, n, k9, T(1), wd.data() + dt * c_out * k9, k9,
                             panel.data(), n, T(1), out.data() + bi * sample_out + ti * n, t * n);
            }
    }
    if (cache) {
        cache->input = input;
        cache->weights = weights;
    }
    EVHAR_CHECK_FINITE(out);
    return out;
}

// `need_input_grad = false` skips the input-gradient pass (for the first
// layer, whose input is data); grads.input is left empty in that case.
template <typename T>
Conv3dGrads<T> conv3d_backward(const Conv3dCache<T>& cache, const Tensor<T>& grad_out,
                               bool need_input_grad = true) {
    const Tensor<T>& input = cache.input;
    const Tensor<T>& weights = cache.weights;
    if (input.size() == 0) throw Error("conv3d cache is stale or empty");
    const int64_t b = input.dim(0), c_in = input.dim(1), t = input.dim(2), h = input.dim(3),
                  w = input.dim(4);
    const int64_t c_out = weights.dim(0);
    if (grad_out.shape() != std::vector<int64_t>{b, c_out, t, h, w})
        throw ShapeError("conv3d grad_out shape mismatch");

    Conv3dGrads<T> grads;
    if (need_input_grad) grads.input = Tensor<T>({b, c_in, t, h, w});
    grads.weights = Tensor<T>({c_out, c_in, 3, 3, 3});
    grads.bias = Tensor<T>({c_out});

    const int64_t k9 = c_in * 9, g9 = c_out * 9, n = h * w;
    const int64_t sample_in = c_in * t * h * w, sample_out = c_out * t * h * w;

    // Weights with swapped channel roles and flipped taps, regrouped by
    // temporal tap, for the input gradient expressed as a same-padded
    // convolution of grad_out: wf[dt] is (C_in, C_out*9).
    std::vector<T> wf;
    if (need_input_grad) {
        wf.resize(static_cast<size_t>(3 * c_in * g9));
        for (int64_t co = 0; co < c_out; ++co)
            for (int64_t ci = 0; ci < c_in; ++ci)
                for (int64_t dt = 0; dt < 3; ++dt)
                    for (int64_t ds = 0; ds < 9; ++ds)
                        wf[(dt * c_in + ci) * g9 + co * 9 + ds] =
                            weights[(co * c_in + ci) * 27 + (2 - dt) * 9 + (8 - ds)];
    }

    // Per-sample, per-tap partial weight/bias gradients, reduced in sample
    // order below so accumulation does not depend on thread count.
    std::vector<T> w_slab(static_cast<size_t>(b) * 3 * c_out * k9, T(0));
    std::vector<T> b_slab(static_cast<size_t>(b) * c_out, T(0));

#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t bi = 0; bi < b; ++bi) {
        thread_local std::vector<T> padded_in, padded_g;
        thread_local conv_detail::PanelRing<T> in_ring, g_ring;
        conv_detail::pad_sample(input.data() + bi * sample_in, c_in, t, h, w, padded_in);
        in_ring.reset();
        if (need_input_grad) {
            conv_detail::pad_sample(grad_out.data() + bi * sample_out, c_out, t, h, w, padded_g);
            g_ring.reset();
        }
        T* wg = w_slab.data() + bi * 3 * c_out * k9;
        T* bg = b_slab.data() + bi * c_out;
        for (int64_t ti = 0; ti < t; ++ti) {
            // this sample's grad_out slice, as a (C_out, n) view with row stride t*n
            const T* gslice = grad_out.data() + bi * sample_out + ti * n;
            for (int64_t co = 0; co < c_out; ++co) {
                T s = 0;
                const T* g = gslice + co * t * n;
                for (int64_t i = 0; i < n; ++i) s += g[i];
                bg[co] += s;
            }
            for (int64_t dt = 0; dt < 3; ++dt) {
                // dW[dt] += gslice * panel^T
                const std::vector<T>& panel = in_ring.get(padded_in, c_in, t, h, w, ti + dt);
                detail::gemm(false, true, c_out, k9, n, T(1), gslice, t * n, panel.data(), n,
                             T(1), wg + dt * c_out * k9, k9);
                if (!need_input_grad) continue;
                // dX slice += wf[dt] * grad panel
                const std::vector<T>& gpanel = g_ring.get(padded_g, c_out, t, h, w, ti + dt);
                detail::gemm(false, false, c_in, n, g9, T(1), wf.data() + dt * c_in * g9, g9,
                             gpanel.data(), n, dt == 0 ? T(0) : T(1),
                             grads.input.data() + bi * sample_in + ti * n, t * n);
            }
        }
    }

    for (int64_t bi = 0; bi < b; ++bi) {
        const T* wg = w_slab.data() + bi * 3 * c_out * k9;
        const T* bg = b_slab.data() + bi * c_out;
        for (int64_t co = 0; co < c_out; ++co)
            for (int64_t ci = 0; ci < c_in; ++ci)
                for (int64_t dt = 0; dt < 3; ++dt)
                    for (int64_t ds = 0; ds < 9; ++ds)
                        grads.weights[(co * c_in + ci) * 27 + dt * 9 + ds] +=
                            wg[(dt * c_out + co) * k9 + ci * 9 + ds];
        for (int64_t i = 0; i < c_out; ++i) grads.bias[i] += bg[i];
    }
    return grads;
}

// ------------------------------------------------------------ batchnorm3d

// The cache keeps the input (moved in, not copied) plus per-channel
// statistics; the backward pass renormalizes on the fly.
template <typename T>
struct BatchNorm3dCache {
    Tensor<T> input;
    std::vector<T> mean;
    std::vector<T> invstd;
    Tensor<T> gamma;
    Mode mode = Mode::train;
};

// Running stats start at mean 0, var 1 and are updated in train mode as
// running <- (1-momentum)*running + momentum*batch (biased batch variance).
// The input is taken by value; pass with std::move to avoid the copy.
template <typename T>
Tensor<T> batchnorm3d_forward(Tensor<T> input, const Tensor<T>& gamma, const Tensor<T>& beta,
                              Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                              double momentum, double epsilon, std::type_identity_t<BatchNorm3dCache<T>*> cache) {
    conv_detail::check_5d(input.shape(), "batchnorm3d input");
    const int64_t b = input.dim(0), c = input.dim(1), t = input.dim(2), h = input.dim(3),
                  w = input.dim(4);
    if (gamma.size() != c || beta.size() != c) throw ShapeError("batchnorm3d gamma/beta length mismatch");
    if (running_mean.size() != c || running_var.size() != c)
        throw ShapeError("batchnorm3d running stats length mismatch");
    if (epsilon <= 0) throw ConfigError("batchnorm3d epsilon must be > 0");

    const int64_t plane = t * h * w;
    const int64_t per_channel = b * plane;
    Tensor<T> out(input.shape());
    std::vector<T> means(static_cast<size_t>(c)), invstds(static_cast<size_t>(c));

#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t ci = 0; ci < c; ++ci) {
        T mean, invstd;
        if (mode == Mode::train) {
            double sum = 0, sum_sq = 0;
            for (int64_t bi = 0; bi < b; ++bi) {
                const T* x = input.data() + (bi * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(x[i]);
                    sum += v;
                    sum_sq += v * v;
                }
            }
            const double mu = sum / static_cast<double>(per_channel);
            const double var = std::max(0.0, sum_sq / static_cast<double>(per_channel) - mu * mu);
            running_mean[ci] =
                static_cast<T>((1.0 - momentum) * running_mean[ci] + momentum * mu);
            running_var[ci] =
                static_cast<T>((1.0 - momentum) * running_var[ci] + momentum * var);
            mean = static_cast<T>(mu);
            invstd = static_cast<T>(1.0 / std::sqrt(var + epsilon));
        } else {
            mean = running_mean[ci];
            invstd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ci]) + epsilon));
        }
        means[static_cast<size_t>(ci)] = mean;
        invstds[static_cast<size_t>(ci)] = invstd;
        const T g = gamma[ci], be = beta[ci];
        for (int64_t bi = 0; bi < b; ++bi) {
            const T* x = input.data() + (bi * c + ci) * plane;
            T* y = out.data() + (bi * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) y[i] = g * ((x[i] - mean) * invstd) + be;
        }
    }
    if (cache) {
        cache->input = std::move(input);
        cache->mean = std::move(means);
        cache->invstd = std::move(invstds);
        cache->gamma = gamma;
        cache->mode = mode;
    }
    EVHAR_CHECK_FINITE(out);
    return out;
}

template <typename T>
struct BatchNorm3dGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
BatchNorm3dGrads<T> batchnorm3d_backward(const BatchNorm3dCache<T>& cache,
                                         const Tensor<T>& grad_out) {
    const Tensor<T>& xhat = cache.xhat;
    if (grad_out.shape() != xhat.shape()) throw ShapeError("batchnorm3d grad_out shape mismatch");
    const int64_t b = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3) * xhat.dim(4);
    const double n = static_cast<double>(b * plane);

    BatchNorm3dGrads<T> grads;
    grads.input = Tensor<T>(xhat.shape());
    grads.gamma = Tensor<T>({c});
    grads.beta = Tensor<T>({c});

#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t ci = 0; ci < c; ++ci) {
        double sum_g = 0, sum_gx = 0;
        for (int64_t bi = 0; bi < b; ++bi) {
            const T* g = grad_out.data() + (bi * c + ci) * plane;
            const T* xh = xhat.data() + (bi * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                sum_g += static_cast<double>(g[i]);
                sum_gx += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
            }
        }
        grads.beta[ci] = static_cast<T>(sum_g);
        grads.gamma[ci] = static_cast<T>(sum_gx);
        const T gm = cache.gamma[ci], is = cache.invstd[static_cast<size_t>(ci)];
        if (cache.mode == Mode::train) {
            const T mean_g = static_cast<T>(sum_g / n), mean_gx = static_cast<T>(sum_gx / n);
            for (int64_t bi = 0; bi < b; ++bi) {
                const T* g = grad_out.data() + (bi * c + ci) * plane;
                const T* xh = xhat.data() + (bi * c + ci) * plane;
                T* gi = grads.input.data() + (bi * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i)
                    gi[i] = gm * is * (g[i] - mean_g - xh[i] * mean_gx);
            }
        } else {
            for (int64_t bi = 0; bi < b; ++bi) {
                const T* g = grad_out.data() + (bi * c + ci) * plane;
                T* gi = grads.input.data() + (bi * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i) gi[i] = gm * is * g[i];
            }
        }
    }
    return grads;
}

// ----------------------------------------------------------------- relu

template <typename T>
struct ReluCache {
    std::vector<uint8_t> mask;
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input, std::type_identity_t<ReluCache<T>*> cache) {
    Tensor<T> out(input.shape());
    const int64_t n = input.size();
    if (cache) cache->mask.assign(static_cast<size_t>(n), 0);
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < n; ++i) {
        const bool pos = input[i] > T(0);
        out[i] = pos ? input[i] : T(0);
        if (cache) cache->mask[static_cast<size_t>(i)] = pos;
    }
    return out;
}

template <typename T>
Tensor<T> relu_backward(const ReluCache<T>& cache, const Tensor<T>& grad_out) {
    if (cache.mask.size() != static_cast<size_t>(grad_out.size()))
        throw ShapeError("relu grad_out size mismatch");
    Tensor<T> grad_in(grad_out.shape());
    const int64_t n = grad_out.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < n; ++i)
        grad_in[i] = cache.mask[static_cast<size_t>(i)] ? grad_out[i] : T(0);
    return grad_in;
}

// ------------------------------------------------------------- maxpool3d

// kernel (1,2,2), stride (1,2,2): halves H and W, keeps T.
template <typename T>
struct MaxPool3dCache {
    std::vector<int64_t> in_shape;
    std::vector<uint8_t> argmax;  // 2*dh + dw within each window, first max wins
};

template <typename T>
Tensor<T> maxpool3d_forward(const Tensor<T>& input, std::type_identity_t<MaxPool3dCache<T>*> cache) {
    conv_detail::check_5d(input.shape(), "maxpool3d input");
    const int64_t b = input.dim(0), c = input.dim(1), t = input.dim(2), h = input.dim(3),
                  w = input.dim(4);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool3d requires even H and W");
    const int64_t ho = h / 2, wo = w / 2;
    Tensor<T> out({b, c, t, ho, wo});
    if (cache) {
        cache->in_shape = input.shape();
        cache->argmax.assign(static_cast<size_t>(out.size()), 0);
    }
    const int64_t planes = b * c * t;
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t p = 0; p < planes; ++p) {
        const T* in_plane = input.data() + p * h * w;
        T* out_plane = out.data() + p * ho * wo;
        uint8_t* am = cache ? cache->argmax.data() + p * ho * wo : nullptr;
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                T best = in_plane[(2 * y) * w + 2 * x];
                uint8_t best_i = 0;
                for (uint8_t k = 1; k < 4; ++k) {
                    const T v = in_plane[(2 * y + k / 2) * w + 2 * x + k % 2];
                    if (v > best) {
                        best = v;
                        best_i = k;
                    }
                }
                out_plane[y * wo + x] = best;
                if (am) am[y * wo + x] = best_i;
            }
    }
    return out;
}

template <typename T>
Tensor<T> maxpool3d_backward(const MaxPool3dCache<T>& cache, const Tensor<T>& grad_out) {
    const auto& s = cache.in_shape;
    const int64_t b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
    const int64_t ho = h / 2, wo = w / 2;
    if (grad_out.shape() != std::vector<int64_t>{b, c, t, ho, wo})
        throw ShapeError("maxpool3d grad_out shape mismatch");
    Tensor<T> grad_in({b, c, t, h, w});
    const int64_t planes = b * c * t;
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t p = 0; p < planes; ++p) {
        const T* g = grad_out.data() + p * ho * wo;
        const uint8_t* am = cache.argmax.data() + p * ho * wo;
        T* gi = grad_in.data() + p * h * w;
        for (int64_t y = 0; y < ho; ++y)
            for (int64_t x = 0; x < wo; ++x) {
                const uint8_t k = am[y * wo + x];
                gi[(2 * y + k / 2) * w + 2 * x + k % 2] = g[y * wo + x];
            }
    }
    return grad_in;
}

// --------------------------------------------------------- global avg pool

template <typename T>
struct GapCache {
    std::vector<int64_t> in_shape;
};

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input, std::type_identity_t<GapCache<T>*> cache) {
    conv_detail::check_5d(input.shape(), "global_avg_pool input");
    const int64_t b = input.dim(0), c = input.dim(1),
                  plane = input.dim(2) * input.dim(3) * input.dim(4);
    Tensor<T> out({b, c});
    const int64_t bc = b * c;
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < bc; ++i) {
        const T* x = input.data() + i * plane;
        double s = 0;
        for (int64_t j = 0; j < plane; ++j) s += static_cast<double>(x[j]);
        out[i] = static_cast<T>(s / static_cast<double>(plane));
    }
    if (cache) cache->in_shape = input.shape();
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const GapCache<T>& cache, const Tensor<T>& grad_out) {
    const auto& s = cache.in_shape;
    const int64_t b = s[0], c = s[1], plane = s[2] * s[3] * s[4];
    if (grad_out.shape() != std::vector<int64_t>{b, c})
        throw ShapeError("global_avg_pool grad_out shape mismatch");
    Tensor<T> grad_in(s);
    const int64_t bc = b * c;
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < bc; ++i) {
        const T v = grad_out[i] / static_cast<T>(plane);
        T* gi = grad_in.data() + i * plane;
        for (int64_t j = 0; j < plane; ++j) gi[j] = v;
    }
    return grad_in;
}

// ---------------------------------------------------------------- linear

template <typename T>
struct LinearCache {
    Tensor<T> input;
    Tensor<T> weights;
};

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::type_identity_t<LinearCache<T>*> cache) {
    if (input.rank() != 2 || weights.rank() != 2) throw ShapeError("linear expects 2-d input and weights");
    const int64_t b = input.dim(0), f = input.dim(1), k = weights.dim(0);
    if (weights.dim(1) != f) throw ShapeError("linear feature dimension mismatch");
    if (bias.size() != k) throw ShapeError("linear bias length mismatch");
    Tensor<T> out({b, k});
    for (int64_t bi = 0; bi < b; ++bi)
        std::memcpy(out.data() + bi * k, bias.data(), sizeof(T) * static_cast<size_t>(k));
    detail::gemm(false, true, b, k, f, T(1), input.data(), f, weights.data(), f, T(1), out.data(),
                 k);
    if (cache) {
        cache->input = input;
        cache->weights = weights;
    }
    return out;
}

template <typename T>
LinearGrads<T> linear_backward(const LinearCache<T>& cache, const Tensor<T>& grad_out) {
    const Tensor<T>& input = cache.input;
    const Tensor<T>& weights = cache.weights;
    const int64_t b = input.dim(0), f = input.dim(1), k = weights.dim(0);
    if (grad_out.shape() != std::vector<int64_t>{b, k}) throw ShapeError("linear grad_out shape mismatch");
    LinearGrads<T> grads;
    grads.input = Tensor<T>({b, f});
    grads.weights = Tensor<T>({k, f});
    grads.bias = Tensor<T>({k});
    detail::gemm(true, false, k, f, b, T(1), grad_out.data(), k, input.data(), f, T(0),
                 grads.weights.data(), f);
    detail::gemm(false, false, b, f, k, T(1), grad_out.data(), k, weights.data(), f, T(0),
                 grads.input.data(), f);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ki = 0; ki < k; ++ki) grads.bias[ki] += grad_out[bi * k + ki];
    return grads;
}

// --------------------------------------------------------------- dropout

template <typename T>
struct DropoutCache {
    std::vector<uint8_t> keep;
    double rate = 0;
    Mode mode = Mode::eval;
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode, Rng& rng,
                          std::type_identity_t<DropoutCache<T>*> cache) {
    if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must be in [0, 1)");
    if (cache) {
        cache->rate = rate;
        cache->mode = mode;
        cache->keep.clear();
    }
    if (mode == Mode::eval || rate == 0) {
        if (cache) cache->mode = Mode::eval;  // identity path for backward
        return input;
    }
    Tensor<T> out(input.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    const int64_t n = input.size();
    if (cache) cache->keep.assign(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        const bool keep = rng.uniform() >= rate;
        out[i] = keep ? input[i] * scale : T(0);
        if (cache) cache->keep[static_cast<size_t>(i)] = keep;
    }
    return out;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutCache<T>& cache, const Tensor<T>& grad_out) {
    if (cache.mode == Mode::eval || cache.rate == 0) return grad_out;
    if (cache.keep.size() != static_cast<size_t>(grad_out.size()))
        throw ShapeError("dropout grad_out size mismatch");
    Tensor<T> grad_in(grad_out.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - cache.rate));
    for (int64_t i = 0; i < grad_out.size(); ++i)
        grad_in[i] = cache.keep[static_cast<size_t>(i)] ? grad_out[i] * scale : T(0);
    return grad_in;
}

// --------------------------------------------------------------- softmax

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects (B, K)");
    const int64_t b = logits.dim(0), k = logits.dim(1);
    Tensor<T> out({b, k});
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* x = logits.data() + bi * k;
        T* p = out.data() + bi * k;
        T mx = x[0];
        for (int64_t i = 1; i < k; ++i) mx = std::max(mx, x[i]);
        double sum = 0;
        for (int64_t i = 0; i < k; ++i) {
            const double e = std::exp(static_cast<double>(x[i] - mx));
            p[i] = static_cast<T>(e);
            sum += e;
        }
        for (int64_t i = 0; i < k; ++i) p[i] = static_cast<T>(static_cast<double>(p[i]) / sum);
    }
    return out;
}

// --------------------------------------------------------- initialization

template <typename T>
void kaiming_uniform(Tensor<T>& weights, int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < weights.size(); ++i)
        weights[i] = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace evhar::nn
