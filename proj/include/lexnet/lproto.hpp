#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lexnet/ops.hpp"
#include "lexnet/tensor.hpp"

namespace lexnet {

/// Inverted-distance activation: sim(d2) = ln((d2+1)/(d2+eps)). Strictly
/// decreasing, sim(0) = ln(1/eps), sim(inf) -> 0+.
inline constexpr double kSimilarityEps = 1e-4;

inline double similarity(double d2, double eps = kSimilarityEps) {
    if (d2 < 0.0) throw Error("similarity: negative squared distance");
    return std::log((d2 + 1.0) / (d2 + eps));
}

inline double similarity_ddist(double d2, double eps = kSimilarityEps) {
    return 1.0 / (d2 + 1.0) - 1.0 / (d2 + eps);
}

/// Where a prototype came from after its last projection.
struct Provenance {
    int sample_index = -1;     // index into the training set at projection time
    std::string flow_id;
    int t = -1, v = -1;        // latent cell
};

/// A class-specific (1,1) prototype over the latent map. The vector lives in
/// its own Parameter so the training stages can select it by group.
struct Prototype {
    int id = 0;
    int class_id = 0;
    Parameter param;  // shape {D}
    std::optional<Provenance> provenance;

    Prototype() = default;
    Prototype(int proto_id, int cls, int depth)
        : id(proto_id),
          class_id(cls),
          param(Shape{depth}, ParamGroup::prototype, "proto" + std::to_string(proto_id)) {}

    const std::vector<float>& vec() const { return param.tensor.data; }
    std::vector<float>& vec() { return param.tensor.data; }
};

struct PrototypeSet {
    int depth = 0;
    int n_classes = 0;
    std::vector<Prototype> protos;
    int next_id = 0;

    PrototypeSet() = default;
    PrototypeSet(int d, int k) : depth(d), n_classes(k) {}

    int size() const { return static_cast<int>(protos.size()); }

    std::vector<int> class_members(int cls) const {
        std::vector<int> out;
        for (int j = 0; j < size(); ++j)
            if (protos[static_cast<std::size_t>(j)].class_id == cls) out.push_back(j);
        return out;
    }

    int class_count(int cls) const {
        int n = 0;
        for (const Prototype& p : protos)
            if (p.class_id == cls) ++n;
        return n;
    }

    /// One prototype per class, drawn Uniform([0,1]^D).
    void init_one_per_class(Rng& rng) {
        protos.clear();
        next_id = 0;
        for (int k = 0; k < n_classes; ++k) {
            Prototype p(next_id++, k, depth);
            for (float& x : p.vec()) x = rng.unit();
            protos.push_back(std::move(p));
        }
    }

    Prototype& add(int cls) {
        protos.emplace_back(next_id++, cls, depth);
        return protos.back();
    }

    void collect(std::vector<Parameter*>& out) {
        for (Prototype& p : protos) out.push_back(&p.param);
    }

    std::int64_t param_count() const {
        return static_cast<std::int64_t>(protos.size()) * depth;
    }

    double l2_norm_sum() const {
        double s = 0.0;
        for (const Prototype& p : protos)
            for (float x : p.vec()) s += static_cast<double>(x) * x;
        return s;
    }
};

/// Classification head: logits = weight * scores. No bias. Column j belongs
/// to prototype j's class; a fresh column is 1 on its class row and -0.5
/// elsewhere.
struct LastLayer {
    Parameter weight;  // {K, m}

    LastLayer() = default;
    LastLayer(int k_classes, const PrototypeSet& protos)
        : weight(Shape{k_classes, protos.size()}, ParamGroup::last_layer, "head.weight") {
        for (int k = 0; k < k_classes; ++k)
            for (int j = 0; j < protos.size(); ++j)
                weight.tensor.data[static_cast<std::size_t>(k) * protos.size() + j] =
                    protos.protos[static_cast<std::size_t>(j)].class_id == k ? 1.0f : -0.5f;
    }

    int n_classes() const { return weight.tensor.shape.empty() ? 0 : weight.tensor.shape[0]; }
    int n_protos() const { return weight.tensor.shape.size() < 2 ? 0 : weight.tensor.shape[1]; }

    /// Append one column for a new prototype of class `cls`, preserving all
    /// existing weights.
    void grow_column(int cls) {
        const int kk = n_classes(), m = n_protos();
        Tensor next(Shape{kk, m + 1});
        for (int k = 0; k < kk; ++k) {
            for (int j = 0; j < m; ++j)
                next.data[static_cast<std::size_t>(k) * (m + 1) + j] =
                    weight.tensor.data[static_cast<std::size_t>(k) * m + j];
            next.data[static_cast<std::size_t>(k) * (m + 1) + m] = (k == cls) ? 1.0f : -0.5f;
        }
        weight.tensor = std::move(next);
    }
};

// ---------------------------------------------------------------------------
// Distance and similarity maps.
// ---------------------------------------------------------------------------

/// Squared L2 distance between a depth-D vector and every latent patch of a
/// (ph,pw) window; for the default (1,1) prototypes this is per-cell.
/// vec layout for patches: d-major over the window, matching a latent slice.
inline Tensor patch_distance_map(const Tensor& latent, std::span<const float> vec, int ph,
                                 int pw) {
    const int dd = latent.shape[0], hh = latent.shape[1], ww = latent.shape[2];
    if (static_cast<int>(vec.size()) != dd * ph * pw)
        throw ShapeError("distance_map: prototype depth " + std::to_string(vec.size()) +
                         " vs latent depth " + std::to_string(dd * ph * pw));
    const int oh = hh - ph + 1, ow = ww - pw + 1;
    if (oh < 1 || ow < 1) throw ShapeError("distance_map: patch larger than map");
    Tensor out(Shape{oh, ow});
    for (int h = 0; h < oh; ++h) {
        for (int w = 0; w < ow; ++w) {
            double acc = 0.0;
            for (int d = 0; d < dd; ++d)
                for (int dh = 0; dh < ph; ++dh)
                    for (int dw = 0; dw < pw; ++dw) {
                        const float diff = latent.at(d, h + dh, w + dw) -
                                           vec[static_cast<std::size_t>(
                                               (d * ph + dh) * pw + dw)];
                        acc += static_cast<double>(diff) * diff;
                    }
            out.data[static_cast<std::size_t>(h) * ow + w] = static_cast<float>(acc);
        }
    }
    return out;
}

inline Tensor distance_map(const Tensor& latent, const Prototype& p) {
    return patch_distance_map(latent, p.vec(), 1, 1);
}

inline Tensor similarity_map(const Tensor& d2map) {
    Tensor out(d2map.shape);
    for (std::size_t i = 0; i < d2map.data.size(); ++i)
        out.data[i] = static_cast<float>(similarity(d2map.data[i]));
    return out;
}

// ---------------------------------------------------------------------------
// LProto forward: per prototype, the similarity map reduced by global max
// pooling to one score plus its argmax cell.
// ---------------------------------------------------------------------------

struct ProtoActivation {
    float score = 0.0f;
    float d2 = 0.0f;  // squared distance at the argmax cell
    int t = 0, v = 0;
};

struct LprotoOut {
    std::vector<float> scores;
    std::vector<ProtoActivation> acts;
};

inline LprotoOut lproto_forward(const Tensor& latent, const PrototypeSet& protos) {
    if (protos.size() == 0) throw StateError("lproto_forward: empty prototype set");
    if (latent.shape[0] != protos.depth)
        throw ShapeError("lproto_forward: latent depth " + std::to_string(latent.shape[0]) +
                         " vs prototype depth " + std::to_string(protos.depth));
    const int dd = latent.shape[0], hh = latent.shape[1], ww = latent.shape[2];
    const int cells = hh * ww;

    // cell-major copy of the latent so the depth loop is contiguous
    thread_local std::vector<float> lat_t;
    lat_t.resize(static_cast<std::size_t>(cells) * dd);
    for (int d = 0; d < dd; ++d) {
        const float* src = latent.data.data() + static_cast<std::size_t>(d) * cells;
        for (int c = 0; c < cells; ++c)
            lat_t[static_cast<std::size_t>(c) * dd + d] = src[c];
    }

    LprotoOut out;
    out.scores.resize(static_cast<std::size_t>(protos.size()));
    out.acts.resize(static_cast<std::size_t>(protos.size()));
    for (int j = 0; j < protos.size(); ++j) {
        const float* pv = protos.protos[static_cast<std::size_t>(j)].vec().data();
        // max of sim(d2) == sim(min d2): track the smallest distance
        float best_d2 = 0.0f;
        int best_c = 0;
        for (int c = 0; c < cells; ++c) {
            const float* lc = lat_t.data() + static_cast<std::size_t>(c) * dd;
            float acc = 0.0f;
            for (int d = 0; d < dd; ++d) {
                const float diff = lc[d] - pv[d];
                acc += diff * diff;
            }
            if (c == 0 || acc < best_d2) {
                best_d2 = acc;
                best_c = c;
            }
        }
        ProtoActivation a;
        a.d2 = best_d2;
        a.score = static_cast<float>(similarity(best_d2));
        a.t = best_c / ww;
        a.v = best_c % ww;
        out.acts[static_cast<std::size_t>(j)] = a;
        out.scores[static_cast<std::size_t>(j)] = a.score;
    }
    return out;
}

/// Backward of scores w.r.t. the latent map and the prototype vectors.
/// Gradient flows only through each prototype's argmax cell.
inline void lproto_backward(const Tensor& latent, PrototypeSet& protos, const LprotoOut& fwd,
                            std::span<const float> dscores, Tensor& dlatent) {
    const int dd = latent.shape[0], ww = latent.shape[2];
    const int cells = latent.shape[1] * ww;
    dlatent.shape = latent.shape;
    dlatent.data.assign(latent.data.size(), 0.0f);
    for (int j = 0; j < protos.size(); ++j) {
        const float ds = dscores[static_cast<std::size_t>(j)];
        if (ds == 0.0f) continue;
        const ProtoActivation& a = fwd.acts[static_cast<std::size_t>(j)];
        const double dd2 = static_cast<double>(ds) * similarity_ddist(a.d2);
        Prototype& p = protos.protos[static_cast<std::size_t>(j)];
        p.param.tensor.ensure_grad();
        const int cell = a.t * ww + a.v;
        for (int d = 0; d < dd; ++d) {
            const std::size_t li = static_cast<std::size_t>(d) * cells + cell;
            const float diff = latent.data[li] - p.vec()[static_cast<std::size_t>(d)];
            const float g = static_cast<float>(2.0 * dd2 * diff);
            dlatent.data[li] += g;
            p.param.tensor.grad[static_cast<std::size_t>(d)] -= g;
        }
    }
}

/// Latent gradient only (no prototype gradients); used by attribution
/// methods on a read-only model.
inline void lproto_backward_latent(const Tensor& latent, const PrototypeSet& protos,
                                   const LprotoOut& fwd, std::span<const float> dscores,
                                   Tensor& dlatent) {
    const int dd = latent.shape[0], ww = latent.shape[2];
    const int cells = latent.shape[1] * ww;
    dlatent.shape = latent.shape;
    dlatent.data.assign(latent.data.size(), 0.0f);
    for (int j = 0; j < protos.size(); ++j) {
        const float ds = dscores[static_cast<std::size_t>(j)];
        if (ds == 0.0f) continue;
        const ProtoActivation& a = fwd.acts[static_cast<std::size_t>(j)];
        const double dd2 = static_cast<double>(ds) * similarity_ddist(a.d2);
        const Prototype& p = protos.protos[static_cast<std::size_t>(j)];
        const int cell = a.t * ww + a.v;
        for (int d = 0; d < dd; ++d) {
            const std::size_t li = static_cast<std::size_t>(d) * cells + cell;
            const float diff = latent.data[li] - p.vec()[static_cast<std::size_t>(d)];
            dlatent.data[li] += static_cast<float>(2.0 * dd2 * diff);
        }
    }
}

// ---------------------------------------------------------------------------
// Classification over similarity scores.
// ---------------------------------------------------------------------------

inline std::vector<float> classify_logits(std::span<const float> scores, const LastLayer& last) {
    std::vector<float> logits;
    linear_forward(scores, last.weight.tensor, logits);
    return logits;
}

/// Argmax with lowest-class-id tie-break.
inline int argmax_class(std::span<const float> logits) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(logits.size()); ++k)
        if (logits[static_cast<std::size_t>(k)] > logits[static_cast<std::size_t>(best)])
            best = k;
    return best;
}

}  // namespace lexnet
