#pragma once

#include <algorithm>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexnet/model.hpp"

namespace lexnet {

// ---------------------------------------------------------------------------
// By-design explanations: the prototypes of the predicted class, their
// similarity scores and argmax cells, and where each prototype was projected
// from.
// ---------------------------------------------------------------------------

struct ExplanationEntry {
    int proto_id = 0;
    int class_id = 0;
    float score = 0.0f;
    int t = 0, v = 0;  // argmax cell of this prototype's similarity map
    std::string source;
};

struct Explanation {
    std::string sample_id;
    int predicted = -1;
    std::vector<ExplanationEntry> entries;
};

inline const char* variable_name(int v) { return v == 0 ? "size" : "direction"; }

inline Explanation explain_prediction(const LexNetModel& model, const MtsSample& sample) {
    LexNetModel::Forward f = model.forward_infer(sample.grid);
    Explanation ex;
    ex.sample_id = sample.flow_id;
    ex.predicted = f.predicted;
    for (int j = 0; j < model.protos.size(); ++j) {
        const Prototype& p = model.protos.protos[static_cast<std::size_t>(j)];
        if (p.class_id != f.predicted) continue;
        if (!p.provenance)
            throw StateError("explain_prediction: prototype " + std::to_string(p.id) +
                             " has no projection provenance (model not trained)");
        const ProtoActivation& a = f.lp.acts[static_cast<std::size_t>(j)];
        ExplanationEntry e;
        e.proto_id = p.id;
        e.class_id = p.class_id;
        e.score = a.score;
        e.t = a.t;
        e.v = a.v;
        e.source = "train flow " + p.provenance->flow_id + " @ packet " +
                   std::to_string(p.provenance->t) + ", " + variable_name(p.provenance->v);
        ex.entries.push_back(std::move(e));
    }
    return ex;
}

// ---------------------------------------------------------------------------
// Post hoc attribution maps.
// ---------------------------------------------------------------------------

enum class AttributionMethod { bydesign, gradcam, shapley_mc, random_baseline };

inline const char* attribution_method_name(AttributionMethod m) {
    switch (m) {
        case AttributionMethod::bydesign: return "bydesign";
        case AttributionMethod::gradcam: return "gradcam";
        case AttributionMethod::shapley_mc: return "shapley";
        case AttributionMethod::random_baseline: return "random";
    }
    return "?";
}

struct AttributionMap {
    AttributionMethod method = AttributionMethod::gradcam;
    Tensor values;  // (T, V)
    int target_class = -1;
};

// --- Grad-CAM --------------------------------------------------------------

struct GradCamResult {
    AttributionMap map;
    std::vector<float> channel_weights;
    bool zero_gradient = false;
};

/// The pure Grad-CAM combination: channel weights are the spatial mean of
/// the logit gradient per channel; the map is relu of the weighted channel
/// sum. No upsampling (feature maps already match the input dims).
inline GradCamResult grad_cam_from_gradients(const Tensor& latent, const Tensor& dlatent) {
    const int dd = latent.shape[0], hh = latent.shape[1], ww = latent.shape[2];
    const int cells = hh * ww;
    GradCamResult out;
    out.channel_weights.resize(static_cast<std::size_t>(dd));
    for (int d = 0; d < dd; ++d) {
        double acc = 0.0;
        const float* gp = dlatent.data.data() + static_cast<std::size_t>(d) * cells;
        for (int c = 0; c < cells; ++c) acc += gp[c];
        out.channel_weights[static_cast<std::size_t>(d)] =
            static_cast<float>(acc / static_cast<double>(cells));
    }
    out.map.values = Tensor(Shape{hh, ww});
    bool any_grad = false;
    for (float g : dlatent.data)
        if (g != 0.0f) any_grad = true;
    out.zero_gradient = !any_grad;
    for (int c = 0; c < cells; ++c) {
        double acc = 0.0;
        for (int d = 0; d < dd; ++d)
            acc += static_cast<double>(out.channel_weights[static_cast<std::size_t>(d)]) *
                   latent.data[static_cast<std::size_t>(d) * cells + c];
        out.map.values.data[static_cast<std::size_t>(c)] =
            acc > 0.0 ? static_cast<float>(acc) : 0.0f;
    }
    return out;
}

inline GradCamResult grad_cam(const LexNetModel& model, const MtsSample& sample,
                              int target_class) {
    LexNetModel::Forward f = model.forward_infer(sample.grid);
    const int m = model.protos.size();
    // d logit[target] / d scores = the target row of the head weight
    std::vector<float> dscores(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j)
        dscores[static_cast<std::size_t>(j)] =
            model.head.weight.tensor
                .data[static_cast<std::size_t>(target_class) * m + j];
    Tensor dlatent;
    lproto_backward_latent(f.latent, model.protos, f.lp, dscores, dlatent);
    GradCamResult out = grad_cam_from_gradients(f.latent, dlatent);
    out.map.method = AttributionMethod::gradcam;
    out.map.target_class = target_class;
    return out;
}

// --- Monte-Carlo Shapley -----------------------------------------------------

/// Permutation estimator of Shapley values for an arbitrary set function.
/// value[i] = mean over sampled permutations of f(prefix + {i}) - f(prefix),
/// with unrevealed features held at the baseline.
inline std::vector<double> shapley_permutation_estimate(
    int n_features, const std::function<double(const std::vector<float>&)>& f,
    const std::vector<float>& x, const std::vector<float>& baseline, int n_permutations,
    Rng& rng) {
    if (n_permutations < 1) throw Error("shapley: need at least one permutation");
    if (static_cast<int>(x.size()) != n_features ||
        static_cast<int>(baseline.size()) != n_features)
        throw ShapeError("shapley: feature vector lengths disagree");
    std::vector<double> attr(static_cast<std::size_t>(n_features), 0.0);
    std::vector<int> order(static_cast<std::size_t>(n_features));
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> cur(baseline);
    for (int p = 0; p < n_permutations; ++p) {
        rng.shuffle(order);
        cur = baseline;
        double prev = f(cur);
        for (int idx : order) {
            cur[static_cast<std::size_t>(idx)] = x[static_cast<std::size_t>(idx)];
            const double val = f(cur);
            attr[static_cast<std::size_t>(idx)] += val - prev;
            prev = val;
        }
    }
    for (double& a : attr) a /= static_cast<double>(n_permutations);
    return attr;
}

/// Shapley attribution over the 40 input cells, baseline = zero grid (the
/// padding value). Deterministic under the seed.
inline AttributionMap shapley_mc(const LexNetModel& model, const MtsSample& sample,
                                 int target_class, int n_permutations, std::uint64_t seed) {
    const int hh = sample.grid.shape[1], ww = sample.grid.shape[2];
    const int n = hh * ww;
    std::vector<float> x(sample.grid.data.begin(), sample.grid.data.end());
    std::vector<float> baseline(static_cast<std::size_t>(n), 0.0f);
    Tensor grid(sample.grid.shape);
    auto f = [&](const std::vector<float>& cells) {
        std::copy(cells.begin(), cells.end(), grid.data.begin());
        LexNetModel::Forward fw = model.forward_infer(grid);
        return static_cast<double>(fw.logits[static_cast<std::size_t>(target_class)]);
    };
    Rng rng(seed);
    std::vector<double> attr = shapley_permutation_estimate(n, f, x, baseline,
                                                            n_permutations, rng);
    AttributionMap out;
    out.method = AttributionMethod::shapley_mc;
    out.target_class = target_class;
    out.values = Tensor(Shape{hh, ww});
    for (int c = 0; c < n; ++c)
        out.values.data[static_cast<std::size_t>(c)] =
            static_cast<float>(attr[static_cast<std::size_t>(c)]);
    return out;
}

// --- Region ranking ----------------------------------------------------------

struct Cell {
    int t = 0, v = 0;
    bool operator==(const Cell&) const = default;
    bool operator<(const Cell& o) const { return t != o.t ? t < o.t : v < o.v; }
};

/// The k highest-valued cells, row-major tie-break; a deterministic total
/// order for a fixed map.
inline std::vector<Cell> top_regions(const AttributionMap& map, int k) {
    const int hh = map.values.shape[0], ww = map.values.shape[1];
    const int n = hh * ww;
    if (k < 1 || k > n)
        throw Error("top_regions: k=" + std::to_string(k) + " out of range [1," +
                    std::to_string(n) + "]");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        const float va = map.values.data[static_cast<std::size_t>(a)];
        const float vb = map.values.data[static_cast<std::size_t>(b)];
        if (va != vb) return va > vb;
        return a < b;  // row-major tie-break
    });
    std::vector<Cell> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back({idx[static_cast<std::size_t>(i)] / ww,
                                               idx[static_cast<std::size_t>(i)] % ww});
    return out;
}

// --- Faithfulness ------------------------------------------------------------

/// Attribution callback: (model, sample, target class, per-sample seed).
using Attributor =
    std::function<AttributionMap(const LexNetModel&, const MtsSample&, int, std::uint64_t)>;

inline Attributor make_gradcam_attributor() {
    return [](const LexNetModel& m, const MtsSample& s, int target, std::uint64_t) {
        return grad_cam(m, s, target).map;
    };
}

inline Attributor make_shapley_attributor(int n_permutations) {
    return [n_permutations](const LexNetModel& m, const MtsSample& s, int target,
                            std::uint64_t seed) {
        return shapley_mc(m, s, target, n_permutations, seed);
    };
}

inline Attributor make_random_attributor() {
    return [](const LexNetModel&, const MtsSample& s, int target, std::uint64_t seed) {
        Rng rng(seed);
        AttributionMap map;
        map.method = AttributionMethod::random_baseline;
        map.target_class = target;
        map.values = Tensor(Shape{s.grid.shape[1], s.grid.shape[2]});
        for (float& v : map.values.data) v = rng.unit();
        return map;
    };
}

/// The model's own regions rendered as an indicator map; evaluating the
/// faithfulness harness against it must score 100%.
inline Attributor make_bydesign_attributor() {
    return [](const LexNetModel& m, const MtsSample& s, int target, std::uint64_t) {
        LexNetModel::Forward f = m.forward_infer(s.grid);
        AttributionMap map;
        map.method = AttributionMethod::bydesign;
        map.target_class = target;
        map.values = Tensor(Shape{s.grid.shape[1], s.grid.shape[2]});
        for (int j = 0; j < m.protos.size(); ++j) {
            const Prototype& p = m.protos.protos[static_cast<std::size_t>(j)];
            if (p.class_id != target) continue;
            const ProtoActivation& a = f.lp.acts[static_cast<std::size_t>(j)];
            float& cell = map.values.data[static_cast<std::size_t>(
                a.t * s.grid.shape[2] + a.v)];
            cell = std::max(cell, a.score);
        }
        return map;
    };
}

struct FaithfulnessReport {
    double top_protos_accuracy = 0.0;
    double top_10_accuracy = 0.0;
    double region_hit_rate_protos = 0.0;  // secondary: per-region recovery rate
    double region_hit_rate_10 = 0.0;
    int samples = 0;
};

/// For each sample, ground truth is the set of argmax cells of the predicted
/// class's prototypes. A sample scores 1 under top-m iff every ground-truth
/// cell appears in the method's m highest cells, with m = the predicted
/// class's prototype count (top-protos) or m = 10 (top-10).
inline FaithfulnessReport faithfulness_eval(const LexNetModel& model,
                                            const std::vector<MtsSample>& samples,
                                            const Attributor& attributor,
                                            std::uint64_t seed) {
    if (samples.empty()) throw Error("faithfulness_eval: empty dataset");
    FaithfulnessReport rep;
    double hit_protos = 0.0, hit_10 = 0.0;
    int strict_protos = 0, strict_10 = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const MtsSample& s = samples[i];
        LexNetModel::Forward f = model.forward_infer(s.grid);
        std::set<Cell> truth;
        int m_protos = 0;
        for (int j = 0; j < model.protos.size(); ++j) {
            const Prototype& p = model.protos.protos[static_cast<std::size_t>(j)];
            if (p.class_id != f.predicted) continue;
            ++m_protos;
            const ProtoActivation& a = f.lp.acts[static_cast<std::size_t>(j)];
            truth.insert({a.t, a.v});
        }
        const AttributionMap map =
            attributor(model, s, f.predicted, derive_seed(seed, 0xa771 + i));
        auto count_hits = [&](int k) {
            const std::vector<Cell> top = top_regions(map, k);
            int hits = 0;
            for (const Cell& c : truth)
                if (std::find(top.begin(), top.end(), c) != top.end()) ++hits;
            return hits;
        };
        const int hits_m = count_hits(m_protos);
        const int hits_10 = count_hits(10);
        strict_protos += hits_m == static_cast<int>(truth.size()) ? 1 : 0;
        strict_10 += hits_10 == static_cast<int>(truth.size()) ? 1 : 0;
        hit_protos += static_cast<double>(hits_m) / static_cast<double>(truth.size());
        hit_10 += static_cast<double>(hits_10) / static_cast<double>(truth.size());
        ++rep.samples;
    }
    rep.top_protos_accuracy = static_cast<double>(strict_protos) / rep.samples;
    rep.top_10_accuracy = static_cast<double>(strict_10) / rep.samples;
    rep.region_hit_rate_protos = hit_protos / rep.samples;
    rep.region_hit_rate_10 = hit_10 / rep.samples;
    return rep;
}

// ---------------------------------------------------------------------------
// Rendering: two bar charts (size, direction) over the 20 packet positions
// as a standalone SVG, highlighted cells boxed, plus a machine-readable
// JSONL sidecar listing the highlighted (position, variable) pairs.
// ---------------------------------------------------------------------------

namespace detail {

inline void svg_bar_chart(std::ostringstream& os, double x0, double y0, double width,
                          double height, const Tensor& grid, int var,
                          const std::set<Cell>& highlights, const char* title,
                          double vmin, double vmax) {
    const int t_len = grid.shape[1];
    const double bar_w = width / t_len;
    const double zero_y = y0 + height * (vmax / (vmax - vmin));
    os << "<text x=\"" << x0 << "\" y=\"" << y0 - 6 << "\" font-size=\"12\">" << title
       << "</text>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << zero_y << "\" x2=\"" << x0 + width
       << "\" y2=\"" << zero_y << "\" stroke=\"#888\" stroke-width=\"0.5\"/>\n";
    for (int t = 0; t < t_len; ++t) {
        const double v = grid.at(0, t, var);
        const double h = std::abs(v) / (vmax - vmin) * height;
        const double bx = x0 + t * bar_w + bar_w * 0.15;
        const double by = v >= 0 ? zero_y - h : zero_y;
        os << "<rect x=\"" << bx << "\" y=\"" << by << "\" width=\"" << bar_w * 0.7
           << "\" height=\"" << h << "\" fill=\"#4a6fa5\"/>\n";
        if (highlights.count({t, var})) {
            os << "<rect x=\"" << x0 + t * bar_w << "\" y=\"" << y0 << "\" width=\"" << bar_w
               << "\" height=\"" << height
               << "\" fill=\"none\" stroke=\"#1133cc\" stroke-width=\"2\"/>\n";
        }
        os << "<text x=\"" << x0 + t * bar_w + bar_w * 0.5 << "\" y=\"" << y0 + height + 12
           << "\" font-size=\"8\" text-anchor=\"middle\">" << t + 1 << "</text>\n";
    }
}

}  // namespace detail

struct RenderPayload {
    std::string svg;
    std::string sidecar_jsonl;
};

inline RenderPayload render_explanation(const MtsSample& sample,
                                        const std::vector<Cell>& cells,
                                        const std::vector<float>& scores,
                                        const std::string& method,
                                        bool* empty_highlight = nullptr) {
    std::set<Cell> hs(cells.begin(), cells.end());
    if (empty_highlight) *empty_highlight = hs.empty();
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 680 360\" "
          "font-family=\"sans-serif\">\n";
    os << "<text x=\"20\" y=\"20\" font-size=\"14\">flow " << sample.flow_id << " ("
       << method << ")</text>\n";
    detail::svg_bar_chart(os, 40, 50, 600, 110, sample.grid, 0, hs, "packet size (scaled)",
                          0.0, 1.0);
    detail::svg_bar_chart(os, 40, 210, 600, 110, sample.grid, 1, hs,
                          "direction (+1 up / -1 down)", -1.0, 1.0);
    os << "</svg>\n";

    nlohmann::json j;
    j["sample_id"] = sample.flow_id;
    j["method"] = method;
    j["cells"] = nlohmann::json::array();
    for (const Cell& c : cells) j["cells"].push_back({c.t, c.v});
    j["scores"] = scores;
    return {os.str(), j.dump() + "\n"};
}

inline RenderPayload render_explanation(const Explanation& ex, const MtsSample& sample) {
    std::vector<Cell> cells;
    std::vector<float> scores;
    for (const ExplanationEntry& e : ex.entries) {
        cells.push_back({e.t, e.v});
        scores.push_back(e.score);
    }
    return render_explanation(sample, cells, scores, "bydesign");
}

inline RenderPayload render_explanation(const AttributionMap& map, const MtsSample& sample,
                                        int k) {
    std::vector<Cell> cells = top_regions(map, k);
    std::vector<float> scores;
    for (const Cell& c : cells)
        scores.push_back(map.values.data[static_cast<std::size_t>(
            c.t * map.values.shape[1] + c.v)]);
    return render_explanation(sample, cells, scores, attribution_method_name(map.method));
}

}  // namespace lexnet
