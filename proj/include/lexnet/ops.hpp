#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <vector>

#include "lexnet/tensor.hpp"

namespace lexnet {

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1, no bias.
//
// Implemented as im2col + a small matrix product so the inner loop runs over
// the contiguous spatial axis. Kernel layout [Co,Ci,3,3] flattens to
// [Co][Ci*9] row-major, which matches the column layout below exactly.
// ---------------------------------------------------------------------------

namespace detail {

// col: [Ci*9][H*W], f = ci*9 + kh*3 + kw, zero-padded borders.
inline void im2col_3x3(const Tensor& x, std::vector<float>& col) {
    const int ci_n = x.shape[0], hh = x.shape[1], ww = x.shape[2];
    const int cells = hh * ww;
    col.assign(static_cast<std::size_t>(ci_n) * 9 * cells, 0.0f);
    for (int ci = 0; ci < ci_n; ++ci) {
        const float* xp = x.data.data() + static_cast<std::size_t>(ci) * cells;
        for (int kh = 0; kh < 3; ++kh) {
            const int dh = kh - 1;
            for (int kw = 0; kw < 3; ++kw) {
                const int dw = kw - 1;
                float* crow = col.data() +
                              (static_cast<std::size_t>(ci) * 9 + kh * 3 + kw) * cells;
                const int h0 = std::max(0, -dh), h1 = std::min(hh, hh - dh);
                const int w0 = std::max(0, -dw), w1 = std::min(ww, ww - dw);
                for (int h = h0; h < h1; ++h) {
                    const float* src = xp + (h + dh) * ww + dw;
                    float* dst = crow + h * ww;
                    for (int w = w0; w < w1; ++w) dst[w] = src[w];
                }
            }
        }
    }
}

// Scatter-add of a column buffer back onto the input gradient.
inline void col2im_3x3_add(const std::vector<float>& col, Tensor& dx) {
    const int ci_n = dx.shape[0], hh = dx.shape[1], ww = dx.shape[2];
    const int cells = hh * ww;
    for (int ci = 0; ci < ci_n; ++ci) {
        float* xp = dx.data.data() + static_cast<std::size_t>(ci) * cells;
        for (int kh = 0; kh < 3; ++kh) {
            const int dh = kh - 1;
            for (int kw = 0; kw < 3; ++kw) {
                const int dw = kw - 1;
                const float* crow = col.data() +
                                    (static_cast<std::size_t>(ci) * 9 + kh * 3 + kw) * cells;
                const int h0 = std::max(0, -dh), h1 = std::min(hh, hh - dh);
                const int w0 = std::max(0, -dw), w1 = std::min(ww, ww - dw);
                for (int h = h0; h < h1; ++h) {
                    float* dst = xp + (h + dh) * ww + dw;
                    const float* src = crow + h * ww;
                    for (int w = w0; w < w1; ++w) dst[w] += src[w];
                }
            }
        }
    }
}

inline std::vector<float>& conv_scratch() {
    thread_local std::vector<float> buf;
    return buf;
}

inline std::vector<float>& conv_scratch2() {
    thread_local std::vector<float> buf;
    return buf;
}

}  // namespace detail

inline void conv2d_forward(const Tensor& x, const Tensor& k, Tensor& y) {
    if (x.shape.size() != 3 || k.shape.size() != 4 || k.shape[2] != 3 || k.shape[3] != 3)
        throw ShapeError("conv2d: want input (C,H,W) and kernel (Co,Ci,3,3), got " +
                         shape_str(x.shape) + " and " + shape_str(k.shape));
    if (k.shape[1] != x.shape[0])
        throw ShapeError("conv2d: kernel expects " + std::to_string(k.shape[1]) +
                         " input channels, input has " + std::to_string(x.shape[0]));
    const int co_n = k.shape[0], hh = x.shape[1], ww = x.shape[2];
    const int cells = hh * ww;
    const int f_n = x.shape[0] * 9;

    std::vector<float>& col = detail::conv_scratch();
    detail::im2col_3x3(x, col);

    y.shape = {co_n, hh, ww};
    y.data.assign(static_cast<std::size_t>(co_n) * cells, 0.0f);
    for (int co = 0; co < co_n; ++co) {
        float* yp = y.data.data() + static_cast<std::size_t>(co) * cells;
        const float* kp = k.data.data() + static_cast<std::size_t>(co) * f_n;
        for (int f = 0; f < f_n; ++f) {
            const float kv = kp[f];
            const float* crow = col.data() + static_cast<std::size_t>(f) * cells;
            for (int c = 0; c < cells; ++c) yp[c] += kv * crow[c];
        }
    }
}

/// Gradients of conv2d w.r.t. input (written) and kernel (accumulated).
/// Either output may be null.
inline void conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                            Tensor* dx, std::vector<float>* dk_accum) {
    const int co_n = k.shape[0], hh = x.shape[1], ww = x.shape[2];
    const int cells = hh * ww;
    const int f_n = x.shape[0] * 9;
    if (dy.shape != Shape{co_n, hh, ww})
        throw ShapeError("conv2d backward: dy shape " + shape_str(dy.shape));

    std::vector<float>& col = detail::conv_scratch();
    detail::im2col_3x3(x, col);

    if (dk_accum) {
        for (int co = 0; co < co_n; ++co) {
            const float* dyp = dy.data.data() + static_cast<std::size_t>(co) * cells;
            float* dkp = dk_accum->data() + static_cast<std::size_t>(co) * f_n;
            for (int f = 0; f < f_n; ++f) {
                const float* crow = col.data() + static_cast<std::size_t>(f) * cells;
                float acc = 0.0f;
                for (int c = 0; c < cells; ++c) acc += dyp[c] * crow[c];
                dkp[f] += acc;
            }
        }
    }
    if (dx) {
        std::vector<float>& dcol = detail::conv_scratch2();
        dcol.assign(static_cast<std::size_t>(f_n) * cells, 0.0f);
        for (int co = 0; co < co_n; ++co) {
            const float* dyp = dy.data.data() + static_cast<std::size_t>(co) * cells;
            const float* kp = k.data.data() + static_cast<std::size_t>(co) * f_n;
            for (int f = 0; f < f_n; ++f) {
                const float kv = kp[f];
                float* crow = dcol.data() + static_cast<std::size_t>(f) * cells;
                for (int c = 0; c < cells; ++c) crow[c] += kv * dyp[c];
            }
        }
        dx->shape = x.shape;
        dx->data.assign(x.data.size(), 0.0f);
        detail::col2im_3x3_add(dcol, *dx);
    }
}

// ---------------------------------------------------------------------------
// Depthwise 3x3: one linear 3x3 map per channel, no bias. Channel c of the
// output depends only on channel c of the input.
// ---------------------------------------------------------------------------

inline void depthwise3x3_forward(const Tensor& x, const Tensor& k, Tensor& y) {
    if (x.shape.size() != 3 || k.shape.size() != 3 || k.shape[1] != 3 || k.shape[2] != 3)
        throw ShapeError("depthwise3x3: want input (C,H,W) and kernel (C,3,3)");
    if (k.shape[0] != x.shape[0])
        throw ShapeError("depthwise3x3: kernel has " + std::to_string(k.shape[0]) +
                         " filters, input has " + std::to_string(x.shape[0]) + " channels");
    const int cn = x.shape[0], hh = x.shape[1], ww = x.shape[2];
    y.shape = x.shape;
    y.data.assign(x.data.size(), 0.0f);
    for (int c = 0; c < cn; ++c) {
        const float* xp = x.data.data() + static_cast<std::size_t>(c) * hh * ww;
        float* yp = y.data.data() + static_cast<std::size_t>(c) * hh * ww;
        const float* kp = k.data.data() + static_cast<std::size_t>(c) * 9;
        for (int kh = 0; kh < 3; ++kh) {
            const int dh = kh - 1;
            for (int kw = 0; kw < 3; ++kw) {
                const int dw = kw - 1;
                const float kv = kp[kh * 3 + kw];
                const int h0 = std::max(0, -dh), h1 = std::min(hh, hh - dh);
                const int w0 = std::max(0, -dw), w1 = std::min(ww, ww - dw);
                for (int h = h0; h < h1; ++h) {
                    const float* src = xp + (h + dh) * ww + dw;
                    float* dst = yp + h * ww;
                    for (int w = w0; w < w1; ++w) dst[w] += kv * src[w];
                }
            }
        }
    }
}

inline void depthwise3x3_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                                  Tensor* dx, std::vector<float>* dk_accum) {
    const int cn = x.shape[0], hh = x.shape[1], ww = x.shape[2];
    if (dy.shape != x.shape) throw ShapeError("depthwise3x3 backward: dy shape");
    if (dx) {
        dx->shape = x.shape;
        dx->data.assign(x.data.size(), 0.0f);
    }
    for (int c = 0; c < cn; ++c) {
        const float* xp = x.data.data() + static_cast<std::size_t>(c) * hh * ww;
        const float* dyp = dy.data.data() + static_cast<std::size_t>(c) * hh * ww;
        const float* kp = k.data.data() + static_cast<std::size_t>(c) * 9;
        float* dxp = dx ? dx->data.data() + static_cast<std::size_t>(c) * hh * ww : nullptr;
        float* dkp = dk_accum ? dk_accum->data() + static_cast<std::size_t>(c) * 9 : nullptr;
        for (int kh = 0; kh < 3; ++kh) {
            const int dh = kh - 1;
            for (int kw = 0; kw < 3; ++kw) {
                const int dw = kw - 1;
                const float kv = kp[kh * 3 + kw];
                const int h0 = std::max(0, -dh), h1 = std::min(hh, hh - dh);
                const int w0 = std::max(0, -dw), w1 = std::min(ww, ww - dw);
                float acc = 0.0f;
                for (int h = h0; h < h1; ++h) {
                    const float* xs = xp + (h + dh) * ww + dw;
                    const float* ds = dyp + h * ww;
                    float* dxs = dxp ? dxp + (h + dh) * ww + dw : nullptr;
                    for (int w = w0; w < w1; ++w) {
                        acc += ds[w] * xs[w];
                        if (dxs) dxs[w] += kv * ds[w];
                    }
                }
                if (dkp) dkp[kh * 3 + kw] += acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 1x1 convolution (channel mixing), used only by the standard residual
// block's shortcut. Kernel layout [Co,Ci,1,1].
// ---------------------------------------------------------------------------

inline void conv1x1_forward(const Tensor& x, const Tensor& k, Tensor& y) {
    if (k.shape.size() != 4 || k.shape[2] != 1 || k.shape[3] != 1 || k.shape[1] != x.shape[0])
        throw ShapeError("conv1x1: kernel " + shape_str(k.shape) + " vs input " +
                         shape_str(x.shape));
    const int co_n = k.shape[0], ci_n = x.shape[0];
    const int cells = x.shape[1] * x.shape[2];
    y.shape = {co_n, x.shape[1], x.shape[2]};
    y.data.assign(static_cast<std::size_t>(co_n) * cells, 0.0f);
    for (int co = 0; co < co_n; ++co) {
        float* yp = y.data.data() + static_cast<std::size_t>(co) * cells;
        for (int ci = 0; ci < ci_n; ++ci) {
            const float kv = k.data[static_cast<std::size_t>(co) * ci_n + ci];
            const float* xp = x.data.data() + static_cast<std::size_t>(ci) * cells;
            for (int c = 0; c < cells; ++c) yp[c] += kv * xp[c];
        }
    }
}

inline void conv1x1_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                             Tensor* dx, std::vector<float>* dk_accum) {
    const int co_n = k.shape[0], ci_n = x.shape[0];
    const int cells = x.shape[1] * x.shape[2];
    if (dx) {
        dx->shape = x.shape;
        dx->data.assign(x.data.size(), 0.0f);
    }
    for (int co = 0; co < co_n; ++co) {
        const float* dyp = dy.data.data() + static_cast<std::size_t>(co) * cells;
        for (int ci = 0; ci < ci_n; ++ci) {
            const float* xp = x.data.data() + static_cast<std::size_t>(ci) * cells;
            if (dk_accum) {
                float acc = 0.0f;
                for (int c = 0; c < cells; ++c) acc += dyp[c] * xp[c];
                (*dk_accum)[static_cast<std::size_t>(co) * ci_n + ci] += acc;
            }
            if (dx) {
                const float kv = k.data[static_cast<std::size_t>(co) * ci_n + ci];
                float* dxp = dx->data.data() + static_cast<std::size_t>(ci) * cells;
                for (int c = 0; c < cells; ++c) dxp[c] += kv * dyp[c];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batch normalization. Statistics are taken per channel over (batch, H, W).
// Two trainable parameters per channel (scale, shift); running stats are
// kept for inference. Train mode needs batch size >= 2.
// ---------------------------------------------------------------------------

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    bool initialized = false;

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), 0.0f),
          running_var(static_cast<std::size_t>(channels), 1.0f) {}
};

struct BatchNormCache {
    std::vector<float> mean;
    std::vector<float> inv_std;
};

inline void batch_norm_train_forward(const std::vector<Tensor>& xs, const Tensor& gamma,
                                     const Tensor& beta, BatchNormState& state,
                                     std::vector<Tensor>& ys, BatchNormCache& cache,
                                     float momentum = kBnMomentum, float eps = kBnEps) {
    if (xs.size() < 2) throw StateError("batch_norm train mode requires batch size >= 2");
    const int cn = xs[0].shape[0], hh = xs[0].shape[1], ww = xs[0].shape[2];
    const std::size_t plane = static_cast<std::size_t>(hh) * ww;
    const double m_count = static_cast<double>(xs.size()) * plane;

    cache.mean.assign(static_cast<std::size_t>(cn), 0.0f);
    cache.inv_std.assign(static_cast<std::size_t>(cn), 0.0f);
    if (state.running_mean.size() != static_cast<std::size_t>(cn))
        throw ShapeError("batch_norm: state channel count mismatch");

    ys.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].shape != xs[0].shape) throw ShapeError("batch_norm: ragged batch");
        ys[i].shape = xs[i].shape;
        ys[i].data.resize(xs[i].data.size());
    }

    for (int c = 0; c < cn; ++c) {
        double sum = 0.0;
        for (const Tensor& x : xs) {
            const float* xp = x.data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) sum += xp[j];
        }
        const double mean = sum / m_count;
        double sq = 0.0;
        for (const Tensor& x : xs) {
            const float* xp = x.data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = xp[j] - mean;
                sq += d * d;
            }
        }
        const double var = sq / m_count;  // biased, used for normalization
        const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
        cache.mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
        cache.inv_std[static_cast<std::size_t>(c)] = inv_std;

        const float g = gamma.data[static_cast<std::size_t>(c)];
        const float b = beta.data[static_cast<std::size_t>(c)];
        const float mu = static_cast<float>(mean);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const float* xp = xs[i].data.data() + static_cast<std::size_t>(c) * plane;
            float* yp = ys[i].data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j)
                yp[j] = g * (xp[j] - mu) * inv_std + b;
        }

        // unbiased variance for the running estimate
        const double var_u = m_count > 1.0 ? var * m_count / (m_count - 1.0) : var;
        float& rm = state.running_mean[static_cast<std::size_t>(c)];
        float& rv = state.running_var[static_cast<std::size_t>(c)];
        if (!state.initialized) {
            rm = static_cast<float>(mean);
            rv = static_cast<float>(var_u);
        } else {
            rm = (1.0f - momentum) * rm + momentum * static_cast<float>(mean);
            rv = (1.0f - momentum) * rv + momentum * static_cast<float>(var_u);
        }
    }
    state.initialized = true;
}

inline void batch_norm_train_backward(const std::vector<Tensor>& xs, const BatchNormCache& cache,
                                      const Tensor& gamma, const std::vector<Tensor>& dys,
                                      std::vector<Tensor>& dxs, std::vector<float>& dgamma_accum,
                                      std::vector<float>& dbeta_accum) {
    const int cn = xs[0].shape[0];
    const std::size_t plane =
        static_cast<std::size_t>(xs[0].shape[1]) * static_cast<std::size_t>(xs[0].shape[2]);
    const double m_count = static_cast<double>(xs.size()) * plane;

    dxs.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        dxs[i].shape = xs[i].shape;
        dxs[i].data.assign(xs[i].data.size(), 0.0f);
    }

    for (int c = 0; c < cn; ++c) {
        const float mu = cache.mean[static_cast<std::size_t>(c)];
        const float is = cache.inv_std[static_cast<std::size_t>(c)];
        const float g = gamma.data[static_cast<std::size_t>(c)];

        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const float* xp = xs[i].data.data() + static_cast<std::size_t>(c) * plane;
            const float* dp = dys[i].data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const float xhat = (xp[j] - mu) * is;
                sum_dy += dp[j];
                sum_dy_xhat += static_cast<double>(dp[j]) * xhat;
            }
        }
        dbeta_accum[static_cast<std::size_t>(c)] += static_cast<float>(sum_dy);
        dgamma_accum[static_cast<std::size_t>(c)] += static_cast<float>(sum_dy_xhat);

        const float mean_dy = static_cast<float>(sum_dy / m_count);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m_count);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const float* xp = xs[i].data.data() + static_cast<std::size_t>(c) * plane;
            const float* dp = dys[i].data.data() + static_cast<std::size_t>(c) * plane;
            float* dxp = dxs[i].data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const float xhat = (xp[j] - mu) * is;
                dxp[j] = g * is * (dp[j] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
}

inline void batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             const BatchNormState& state, Tensor& y, float eps = kBnEps) {
    if (!state.initialized)
        throw StateError("batch_norm: inference before any statistics were recorded");
    const int cn = x.shape[0];
    const std::size_t plane =
        static_cast<std::size_t>(x.shape[1]) * static_cast<std::size_t>(x.shape[2]);
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (int c = 0; c < cn; ++c) {
        const float is =
            1.0f / std::sqrt(state.running_var[static_cast<std::size_t>(c)] + eps);
        const float scale = gamma.data[static_cast<std::size_t>(c)] * is;
        const float shift = beta.data[static_cast<std::size_t>(c)] -
                            scale * state.running_mean[static_cast<std::size_t>(c)];
        const float* xp = x.data.data() + static_cast<std::size_t>(c) * plane;
        float* yp = y.data.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t j = 0; j < plane; ++j) yp[j] = scale * xp[j] + shift;
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations. The relu subgradient at 0 is 0.
// ---------------------------------------------------------------------------

inline void relu_forward(const Tensor& x, Tensor& y) {
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
        y.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
}

inline void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    dx.shape = x.shape;
    dx.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
        dx.data[i] = x.data[i] > 0.0f ? dy.data[i] : 0.0f;
}

inline float sigmoid_scalar(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

inline void sigmoid_forward(const Tensor& x, Tensor& y) {
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = sigmoid_scalar(x.data[i]);
}

/// Backward from the sigmoid *output* y.
inline void sigmoid_backward(const Tensor& y, const Tensor& dy, Tensor& dx) {
    dx.shape = y.shape;
    dx.data.resize(y.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i)
        dx.data[i] = dy.data[i] * y.data[i] * (1.0f - y.data[i]);
}

// ---------------------------------------------------------------------------
// Channel concat / split and elementwise add.
// ---------------------------------------------------------------------------

inline void concat_channels(const Tensor& a, const Tensor& b, Tensor& y) {
    if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[1] != b.shape[1] ||
        a.shape[2] != b.shape[2])
        throw ShapeError("concat_channels: spatial dims differ: " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
    y.shape = {a.shape[0] + b.shape[0], a.shape[1], a.shape[2]};
    y.data.resize(a.data.size() + b.data.size());
    std::memcpy(y.data.data(), a.data.data(), a.data.size() * sizeof(float));
    std::memcpy(y.data.data() + a.data.size(), b.data.data(), b.data.size() * sizeof(float));
}

/// Backward of concat: split dy into the two channel ranges.
inline void concat_channels_backward(const Tensor& dy, int c_a, Tensor& da, Tensor& db) {
    const int c_b = dy.shape[0] - c_a;
    da.shape = {c_a, dy.shape[1], dy.shape[2]};
    db.shape = {c_b, dy.shape[1], dy.shape[2]};
    const std::size_t plane =
        static_cast<std::size_t>(dy.shape[1]) * static_cast<std::size_t>(dy.shape[2]);
    da.data.assign(dy.data.begin(),
                   dy.data.begin() + static_cast<std::ptrdiff_t>(plane * c_a));
    db.data.assign(dy.data.begin() + static_cast<std::ptrdiff_t>(plane * c_a), dy.data.end());
}

inline void add_forward(const Tensor& a, const Tensor& b, Tensor& y) {
    if (a.shape != b.shape)
        throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    y.shape = a.shape;
    y.data.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
}

// ---------------------------------------------------------------------------
// Global max pooling with argmax over a single (H,W) map. Ties break to the
// first occurrence in row-major order so explanations are deterministic.
// ---------------------------------------------------------------------------

struct ArgMax2d {
    float value = 0.0f;
    int h = 0;
    int w = 0;
};

inline ArgMax2d global_max_pool(const float* map, int hh, int ww) {
    if (hh * ww < 1) throw ShapeError("global_max_pool: empty map");
    ArgMax2d out{map[0], 0, 0};
    for (int h = 0; h < hh; ++h) {
        for (int w = 0; w < ww; ++w) {
            const float v = map[h * ww + w];
            if (v > out.value) out = {v, h, w};
        }
    }
    return out;
}

inline ArgMax2d global_max_pool(const Tensor& map) {
    if (map.shape.size() != 2) throw ShapeError("global_max_pool: want (H,W) map");
    return global_max_pool(map.data.data(), map.shape[0], map.shape[1]);
}

// ---------------------------------------------------------------------------
// Linear head: logits = W * scores, no bias.
// ---------------------------------------------------------------------------

inline void linear_forward(std::span<const float> x, const Tensor& w, std::vector<float>& y) {
    if (w.shape.size() != 2 || w.shape[1] != static_cast<int>(x.size()))
        throw ShapeError("linear: weight " + shape_str(w.shape) + " vs input length " +
                         std::to_string(x.size()));
    const int kk = w.shape[0], nn = w.shape[1];
    y.assign(static_cast<std::size_t>(kk), 0.0f);
    for (int k = 0; k < kk; ++k) {
        const float* wp = w.data.data() + static_cast<std::size_t>(k) * nn;
        float acc = 0.0f;
        for (int n = 0; n < nn; ++n) acc += wp[n] * x[static_cast<std::size_t>(n)];
        y[static_cast<std::size_t>(k)] = acc;
    }
}

inline void linear_backward(std::span<const float> x, const Tensor& w,
                            std::span<const float> dy, std::vector<float>* dx,
                            std::vector<float>* dw_accum) {
    const int kk = w.shape[0], nn = w.shape[1];
    if (dx) dx->assign(static_cast<std::size_t>(nn), 0.0f);
    for (int k = 0; k < kk; ++k) {
        const float g = dy[static_cast<std::size_t>(k)];
        const float* wp = w.data.data() + static_cast<std::size_t>(k) * nn;
        float* dwp = dw_accum ? dw_accum->data() + static_cast<std::size_t>(k) * nn : nullptr;
        for (int n = 0; n < nn; ++n) {
            if (dwp) dwp[n] += g * x[static_cast<std::size_t>(n)];
            if (dx) (*dx)[static_cast<std::size_t>(n)] += g * wp[n];
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy. Returns the loss and the gradient over logits
// (softmax - one_hot).
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<float> dlogits;
    std::vector<float> probs;
};

inline CrossEntropyResult softmax_cross_entropy(std::span<const float> logits, int label) {
    const int kk = static_cast<int>(logits.size());
    if (label < 0 || label >= kk)
        throw Error("softmax_cross_entropy: label " + std::to_string(label) +
                    " out of range [0," + std::to_string(kk) + ")");
    CrossEntropyResult out;
    out.probs.resize(logits.size());
    float max_logit = logits[0];
    for (float v : logits) max_logit = std::max(max_logit, v);
    double denom = 0.0;
    for (int k = 0; k < kk; ++k)
        denom += std::exp(static_cast<double>(logits[static_cast<std::size_t>(k)]) - max_logit);
    const double log_denom = std::log(denom);
    out.loss = log_denom -
               (static_cast<double>(logits[static_cast<std::size_t>(label)]) - max_logit);
    out.dlogits.resize(logits.size());
    for (int k = 0; k < kk; ++k) {
        const double p =
            std::exp(static_cast<double>(logits[static_cast<std::size_t>(k)]) - max_logit) /
            denom;
        out.probs[static_cast<std::size_t>(k)] = static_cast<float>(p);
        out.dlogits[static_cast<std::size_t>(k)] =
            static_cast<float>(p) - (k == label ? 1.0f : 0.0f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// SGD with per-group weight decay: p <- p - lr * (grad + 2*lambda*p).
// Only parameters of the requested group are touched; their gradients are
// cleared afterwards.
// ---------------------------------------------------------------------------

inline void sgd_step(std::span<Parameter* const> params, ParamGroup group, float lr,
                     float weight_decay = 0.0f) {
    for (Parameter* p : params) {
        if (p->group != group || !p->trainable) continue;
        if (!p->tensor.has_grad())
            throw StateError("sgd_step: parameter '" + p->name + "' has no gradient");
        for (std::size_t i = 0; i < p->tensor.data.size(); ++i) {
            const float g = p->tensor.grad[i] + 2.0f * weight_decay * p->tensor.data[i];
            p->tensor.data[i] -= lr * g;
        }
        p->tensor.zero_grad();
    }
}

inline void zero_all_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check:
//   fd_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
// compared per coordinate against an analytic gradient. Uses only forward
// evaluations, so it is independent of every backward path it verifies.
// ---------------------------------------------------------------------------

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-2});
    return std::abs(a - b) / denom;
}

inline double finite_diff_max_rel_error(const std::function<double()>& f, Tensor& x,
                                        std::span<const float> analytic, float eps) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const float orig = x.data[i];
        x.data[i] = orig + eps;
        const double fp = f();
        x.data[i] = orig - eps;
        const double fm = f();
        x.data[i] = orig;
        const double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
        worst = std::max(worst,
                         relative_error(fd, static_cast<double>(analytic[i])));
    }
    return worst;
}

}  // namespace lexnet
