#pragma once

// Test-side double-precision reference of the stage-1 training loss
// (cross-entropy over a batch, train-mode batch norm, plus the prototype L2
// term). Written as plain nested loops, independent of the library's float
// implementation; finite differences of this function are the mathematical
// derivative to ~1e-13.
//
// Also reports a "kink signature" (relu masks and argmin/argmax choices)
// so gradient checks can skip coordinates that cross a nonsmooth point
// inside the probed interval.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lexnet/model.hpp"

namespace refmodel {

using lexnet::Tensor;

struct Map {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Map() = default;
    Map(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int hi, int wi) {
        return v[static_cast<std::size_t>((ci * h + hi) * w + wi)];
    }
    double at(int ci, int hi, int wi) const {
        return v[static_cast<std::size_t>((ci * h + hi) * w + wi)];
    }
};

struct KinkHash {
    std::uint64_t h = 1469598103934665603ULL;
    void add(std::uint64_t x) {
        h ^= x;
        h *= 1099511628211ULL;
    }
};

inline Map conv3x3(const Map& x, const std::vector<float>& k, int co_n) {
    Map y(co_n, x.h, x.w);
    for (int co = 0; co < co_n; ++co)
        for (int h = 0; h < x.h; ++h)
            for (int w = 0; w < x.w; ++w) {
                double acc = 0.0;
                for (int ci = 0; ci < x.c; ++ci)
                    for (int kh = 0; kh < 3; ++kh)
                        for (int kw = 0; kw < 3; ++kw) {
                            const int hs = h + kh - 1, ws = w + kw - 1;
                            if (hs < 0 || hs >= x.h || ws < 0 || ws >= x.w) continue;
                            acc += x.at(ci, hs, ws) *
                                   static_cast<double>(k[static_cast<std::size_t>(
                                       ((co * x.c + ci) * 3 + kh) * 3 + kw)]);
                        }
                y.at(co, h, w) = acc;
            }
    return y;
}

inline Map depthwise3x3(const Map& x, const std::vector<float>& k) {
    Map y(x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c)
        for (int h = 0; h < x.h; ++h)
            for (int w = 0; w < x.w; ++w) {
                double acc = 0.0;
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const int hs = h + kh - 1, ws = w + kw - 1;
                        if (hs < 0 || hs >= x.h || ws < 0 || ws >= x.w) continue;
                        acc += x.at(c, hs, ws) *
                               static_cast<double>(
                                   k[static_cast<std::size_t>((c * 3 + kh) * 3 + kw)]);
                    }
                y.at(c, h, w) = acc;
            }
    return y;
}

/// Train-mode batch norm over a batch of maps (biased variance, eps 1e-5).
inline void batch_norm(std::vector<Map>& xs, const std::vector<float>& gamma,
                       const std::vector<float>& beta) {
    const int cn = xs[0].c;
    const double m = static_cast<double>(xs.size()) * xs[0].h * xs[0].w;
    for (int c = 0; c < cn; ++c) {
        double mean = 0.0;
        for (const Map& x : xs)
            for (int h = 0; h < x.h; ++h)
                for (int w = 0; w < x.w; ++w) mean += x.at(c, h, w);
        mean /= m;
        double var = 0.0;
        for (const Map& x : xs)
            for (int h = 0; h < x.h; ++h)
                for (int w = 0; w < x.w; ++w) {
                    const double d = x.at(c, h, w) - mean;
                    var += d * d;
                }
        var /= m;
        const double inv_std = 1.0 / std::sqrt(var + 1e-5);
        for (Map& x : xs)
            for (int h = 0; h < x.h; ++h)
                for (int w = 0; w < x.w; ++w)
                    x.at(c, h, w) = static_cast<double>(gamma[static_cast<std::size_t>(c)]) *
                                        (x.at(c, h, w) - mean) * inv_std +
                                    static_cast<double>(beta[static_cast<std::size_t>(c)]);
    }
}

inline void relu(std::vector<Map>& xs, KinkHash* kink) {
    for (Map& x : xs)
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            if (kink) kink->add(x.v[i] > 0.0 ? 0x9e3779b9u + i : i);
            if (x.v[i] < 0.0) x.v[i] = 0.0;
        }
}

inline void sigmoid(std::vector<Map>& xs) {
    for (Map& x : xs)
        for (double& v : x.v) v = 1.0 / (1.0 + std::exp(-v));
}

/// Stage-1 batch loss in double precision. Mirrors the production model's
/// structure from its parameters; `kink` accumulates the discrete choices
/// (relu masks, per-prototype argmin cells) hit along the way.
inline double stage1_loss(const lexnet::LexNetModel& model,
                          const std::vector<lexnet::MtsSample>& batch, float proto_l2,
                          KinkHash* kink = nullptr) {
    using namespace lexnet;
    const BackboneConfig& cfg = model.backbone.config;

    std::vector<Map> cur;
    for (const MtsSample& s : batch) {
        Map m(1, cfg.height, cfg.width);
        for (std::size_t i = 0; i < s.grid.data.size(); ++i)
            m.v[i] = static_cast<double>(s.grid.data[i]);
        cur.push_back(std::move(m));
    }

    // stem
    {
        std::vector<Map> out;
        for (const Map& x : cur)
            out.push_back(conv3x3(x, model.backbone.stem.kernel.tensor.data,
                                  cfg.stem_channels));
        batch_norm(out, model.backbone.stem.gamma.tensor.data,
                   model.backbone.stem.beta.tensor.data);
        relu(out, kink);
        cur = std::move(out);
    }

    for (std::size_t bi = 0; bi < model.backbone.blocks.size(); ++bi) {
        const Activation act = model.backbone.block_activation(bi);
        std::visit(
            [&](const auto& blk) {
                using T = std::decay_t<decltype(blk)>;
                std::vector<Map> pre;
                if constexpr (std::is_same_v<T, LeResExpandBlock>) {
                    std::vector<Map> a;
                    for (const Map& x : cur)
                        a.push_back(conv3x3(x, blk.conv1.kernel.tensor.data, blk.n));
                    batch_norm(a, blk.conv1.gamma.tensor.data, blk.conv1.beta.tensor.data);
                    relu(a, kink);
                    std::vector<Map> u;
                    for (const Map& ai : a) {
                        Map g = depthwise3x3(ai, blk.ghost.tensor.data);
                        Map cat(2 * blk.n, ai.h, ai.w);
                        std::copy(ai.v.begin(), ai.v.end(), cat.v.begin());
                        std::copy(g.v.begin(), g.v.end(),
                                  cat.v.begin() + static_cast<std::ptrdiff_t>(ai.v.size()));
                        u.push_back(std::move(cat));
                    }
                    std::vector<Map> v;
                    for (const Map& ui : u)
                        v.push_back(conv3x3(ui, blk.conv2.kernel.tensor.data, 2 * blk.n));
                    batch_norm(v, blk.conv2.gamma.tensor.data, blk.conv2.beta.tensor.data);
                    for (std::size_t i = 0; i < cur.size(); ++i) {
                        Map z(2 * blk.n, cur[i].h, cur[i].w);
                        for (int c = 0; c < blk.n; ++c)
                            for (int h = 0; h < z.h; ++h)
                                for (int w = 0; w < z.w; ++w) {
                                    z.at(c, h, w) = v[i].at(c, h, w) + cur[i].at(c, h, w);
                                    z.at(c + blk.n, h, w) =
                                        v[i].at(c + blk.n, h, w) + a[i].at(c, h, w);
                                }
                        pre.push_back(std::move(z));
                    }
                } else if constexpr (std::is_same_v<T, EqualResBlock>) {
                    std::vector<Map> a;
                    for (const Map& x : cur)
                        a.push_back(conv3x3(x, blk.conv1.kernel.tensor.data, blk.n));
                    batch_norm(a, blk.conv1.gamma.tensor.data, blk.conv1.beta.tensor.data);
                    relu(a, kink);
                    std::vector<Map> v;
                    for (const Map& ai : a)
                        v.push_back(conv3x3(ai, blk.conv2.kernel.tensor.data, blk.n));
                    batch_norm(v, blk.conv2.gamma.tensor.data, blk.conv2.beta.tensor.data);
                    for (std::size_t i = 0; i < cur.size(); ++i) {
                        Map z = v[i];
                        for (std::size_t j = 0; j < z.v.size(); ++j) z.v[j] += cur[i].v[j];
                        pre.push_back(std::move(z));
                    }
                } else {  // ResExpandBlock
                    std::vector<Map> a;
                    for (const Map& x : cur)
                        a.push_back(conv3x3(x, blk.conv1.kernel.tensor.data, 2 * blk.n));
                    batch_norm(a, blk.conv1.gamma.tensor.data, blk.conv1.beta.tensor.data);
                    relu(a, kink);
                    std::vector<Map> v;
                    for (const Map& ai : a)
                        v.push_back(conv3x3(ai, blk.conv2.kernel.tensor.data, 2 * blk.n));
                    batch_norm(v, blk.conv2.gamma.tensor.data, blk.conv2.beta.tensor.data);
                    std::vector<Map> s;
                    for (const Map& x : cur) {
                        Map si(2 * blk.n, x.h, x.w);
                        for (int co = 0; co < 2 * blk.n; ++co)
                            for (int ci = 0; ci < blk.n; ++ci)
                                for (int h = 0; h < x.h; ++h)
                                    for (int w = 0; w < x.w; ++w)
                                        si.at(co, h, w) +=
                                            x.at(ci, h, w) *
                                            static_cast<double>(
                                                blk.shortcut.kernel.tensor
                                                    .data[static_cast<std::size_t>(
                                                        co * blk.n + ci)]);
                        s.push_back(std::move(si));
                    }
                    batch_norm(s, blk.shortcut.gamma.tensor.data,
                               blk.shortcut.beta.tensor.data);
                    for (std::size_t i = 0; i < cur.size(); ++i) {
                        Map z = v[i];
                        for (std::size_t j = 0; j < z.v.size(); ++j) z.v[j] += s[i].v[j];
                        pre.push_back(std::move(z));
                    }
                }
                if (act == Activation::relu)
                    relu(pre, kink);
                else
                    sigmoid(pre);
                cur = std::move(pre);
            },
            model.backbone.blocks[bi]);
    }

    // lproto scores -> head -> mean cross-entropy
    double ce = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
        const Map& lat = cur[i];
        std::vector<double> scores;
        for (int j = 0; j < model.protos.size(); ++j) {
            const auto& vec = model.protos.protos[static_cast<std::size_t>(j)].vec();
            double best = -1.0;
            int best_cell = 0;
            for (int h = 0; h < lat.h; ++h)
                for (int w = 0; w < lat.w; ++w) {
                    double d2 = 0.0;
                    for (int d = 0; d < lat.c; ++d) {
                        const double diff =
                            lat.at(d, h, w) - static_cast<double>(vec[static_cast<std::size_t>(d)]);
                        d2 += diff * diff;
                    }
                    if (best < 0.0 || d2 < best) {
                        best = d2;
                        best_cell = h * lat.w + w;
                    }
                }
            if (kink) kink->add(static_cast<std::uint64_t>(best_cell) * 131 + j);
            scores.push_back(std::log((best + 1.0) / (best + 1e-4)));
        }
        const int kk = model.head.n_classes();
        const int mm = model.head.n_protos();
        std::vector<double> logits(static_cast<std::size_t>(kk), 0.0);
        for (int k = 0; k < kk; ++k)
            for (int j = 0; j < mm; ++j)
                logits[static_cast<std::size_t>(k)] +=
                    static_cast<double>(
                        model.head.weight.tensor.data[static_cast<std::size_t>(k * mm + j)]) *
                    scores[static_cast<std::size_t>(j)];
        double max_logit = logits[0];
        for (double v : logits) max_logit = std::max(max_logit, v);
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - max_logit);
        ce += std::log(denom) - (logits[static_cast<std::size_t>(batch[i].label_id)] - max_logit);
    }
    double loss = ce / static_cast<double>(batch.size());
    double l2 = 0.0;
    for (const auto& p : model.protos.protos)
        for (float x : p.vec()) l2 += static_cast<double>(x) * x;
    return loss + static_cast<double>(proto_l2) * l2;
}

}  // namespace refmodel
