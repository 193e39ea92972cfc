#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lexnet/config.hpp"
#include "lexnet/model.hpp"

namespace lexnet {

// ---------------------------------------------------------------------------
// Statistics used by the growth rule.
// ---------------------------------------------------------------------------

/// Fisher excess kurtosis with bias-corrected sample moments (normal -> 0).
/// Degenerate inputs (n < 4 or zero variance) return 0, which never triggers
/// growth.
inline double excess_kurtosis(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n < 4) return 0.0;
    const double nd = static_cast<double>(n);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= nd;
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs) {
        const double d = x - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    const double s2 = m2 / (nd - 1.0);  // sample variance
    if (s2 <= 0.0 || m2 <= 0.0) return 0.0;
    const double term1 = nd * (nd + 1.0) / ((nd - 1.0) * (nd - 2.0) * (nd - 3.0));
    const double term2 = 3.0 * (nd - 1.0) * (nd - 1.0) / ((nd - 2.0) * (nd - 3.0));
    return term1 * (m4 / (s2 * s2)) - term2;
}

/// Linear-interpolation quantile on a copy of the data (p in [0,1]).
inline double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) throw Error("quantile of empty vector");
    std::sort(xs.begin(), xs.end());
    const double idx = p * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    if (lo + 1 >= xs.size()) return xs.back();
    const double frac = idx - static_cast<double>(lo);
    return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

// ---------------------------------------------------------------------------
// Batching: shuffled index chunks; a trailing singleton is folded into the
// previous batch so train-mode batch norm always sees >= 2 samples.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < n; i += batch_size) {
        const int end = std::min(n, i + batch_size);
        batches.emplace_back(order.begin() + i, order.begin() + end);
    }
    if (batches.size() >= 2 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Stage 1: SGD on backbone + prototypes, last layer frozen.
// Loss = mean cross-entropy + proto_l2 * sum_j ||p_j||^2.
// ---------------------------------------------------------------------------

inline double stage1_epoch(LexNetModel& model, const std::vector<MtsSample>& samples,
                           const TrainConfig& cfg, float lr_backbone_effective, Rng& rng) {
    if (samples.empty()) throw Error("stage1_epoch: empty dataset");
    std::vector<Parameter*> params = model.params();
    for (Parameter* p : params)
        if (p->group != ParamGroup::last_layer) p->tensor.ensure_grad();

    const auto batches =
        make_batches(static_cast<int>(samples.size()), cfg.batch_size, rng);
    double loss_sum = 0.0;
    for (const std::vector<int>& batch : batches) {
        std::vector<Tensor> grids;
        grids.reserve(batch.size());
        for (int i : batch) grids.push_back(samples[static_cast<std::size_t>(i)].grid);

        BackboneCache cache;
        std::vector<Tensor> latents;
        model.backbone.forward_train(grids, latents, cache);

        const float inv_n = 1.0f / static_cast<float>(batch.size());
        std::vector<Tensor> dlatents(batch.size());
        double ce_sum = 0.0, clst_sum = 0.0, sep_sum = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const MtsSample& s = samples[static_cast<std::size_t>(batch[b])];
            LprotoOut lp = lproto_forward(latents[b], model.protos);
            std::vector<float> logits = classify_logits(lp.scores, model.head);
            CrossEntropyResult ce = softmax_cross_entropy(logits, s.label_id);
            ce_sum += ce.loss;
            for (float& g : ce.dlogits) g *= inv_n;
            std::vector<float> dscores;
            linear_backward(lp.scores, model.head.weight.tensor, ce.dlogits, &dscores,
                            nullptr);

            // nearest own-class / highest-scoring other-class prototypes
            int own = -1, other = -1;
            for (int j = 0; j < model.protos.size(); ++j) {
                const bool same =
                    model.protos.protos[static_cast<std::size_t>(j)].class_id == s.label_id;
                int& pick = same ? own : other;
                if (pick < 0 || lp.acts[static_cast<std::size_t>(j)].d2 <
                                    lp.acts[static_cast<std::size_t>(pick)].d2)
                    pick = j;
            }
            if (other >= 0 && cfg.separation_cost > 0.0f) {
                // separation: penalize the top other-class similarity score
                sep_sum += lp.scores[static_cast<std::size_t>(other)];
                dscores[static_cast<std::size_t>(other)] += cfg.separation_cost * inv_n;
            }
            lproto_backward(latents[b], model.protos, lp, dscores, dlatents[b]);

            if (own >= 0 && cfg.cluster_cost > 0.0f) {
                // cluster: pull the nearest own-class prototype patch closer
                const float weight = cfg.cluster_cost * inv_n;
                const ProtoActivation& a = lp.acts[static_cast<std::size_t>(own)];
                Prototype& p = model.protos.protos[static_cast<std::size_t>(own)];
                p.param.tensor.ensure_grad();
                const int ww = latents[b].shape[2];
                const int cells = latents[b].shape[1] * ww;
                const int cell = a.t * ww + a.v;
                clst_sum += a.d2;
                for (int d = 0; d < model.protos.depth; ++d) {
                    const std::size_t li = static_cast<std::size_t>(d) * cells + cell;
                    const float diff =
                        latents[b].data[li] - p.vec()[static_cast<std::size_t>(d)];
                    dlatents[b].data[li] += 2.0f * weight * diff;
                    p.param.tensor.grad[static_cast<std::size_t>(d)] -= 2.0f * weight * diff;
                }
            }
        }
        model.backbone.backward(cache, dlatents);

        loss_sum += (ce_sum + cfg.cluster_cost * clst_sum + cfg.separation_cost * sep_sum) /
                        static_cast<double>(batch.size()) +
                    static_cast<double>(cfg.proto_l2) * model.protos.l2_norm_sum();

        sgd_step(params, ParamGroup::backbone, lr_backbone_effective);
        sgd_step(params, ParamGroup::prototype, cfg.lr_proto, cfg.proto_l2);
    }
    return loss_sum / static_cast<double>(batches.size());
}

inline double stage1_epoch(LexNetModel& model, const std::vector<MtsSample>& samples,
                           const TrainConfig& cfg, Rng& rng) {
    return stage1_epoch(model, samples, cfg, cfg.lr_backbone, rng);
}

// ---------------------------------------------------------------------------
// Stage 2: projection of each prototype onto the nearest latent training
// patch of its own class, plus the per-class coverage statistics feeding the
// growth rule.
// ---------------------------------------------------------------------------

inline std::vector<Tensor> compute_latents(const LexNetModel& model,
                                           const std::vector<MtsSample>& samples) {
    std::vector<Tensor> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out[i] = model.backbone.forward_infer(samples[i].grid);
    return out;
}

struct ProjectionEntry {
    int proto_id = 0;
    int class_id = 0;
    int sample_index = -1;
    std::string flow_id;
    int t = 0, v = 0;
    double d2_before = 0.0;
};

using ProjectionLog = std::vector<ProjectionEntry>;

inline ProjectionLog project_prototypes_impl(LexNetModel& model,
                                             const std::vector<MtsSample>& samples,
                                             const std::vector<Tensor>& latents) {
    const int k_classes = model.n_classes();
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(k_classes));
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_class[static_cast<std::size_t>(samples[i].label_id)].push_back(
            static_cast<int>(i));

    ProjectionLog log;
    for (Prototype& p : model.protos.protos) {
        const auto& members = by_class[static_cast<std::size_t>(p.class_id)];
        if (members.empty())
            throw Error("project_prototypes: class '" +
                        model.labels[static_cast<std::size_t>(p.class_id)] +
                        "' has no training samples");
        double best_d2 = 0.0;
        int best_sample = -1, best_t = 0, best_v = 0;
        for (int si : members) {
            const Tensor& lat = latents[static_cast<std::size_t>(si)];
            const int dd = lat.shape[0], hh = lat.shape[1], ww = lat.shape[2];
            const int cells = hh * ww;
            for (int c = 0; c < cells; ++c) {
                double d2 = 0.0;
                for (int d = 0; d < dd; ++d) {
                    const float diff = lat.data[static_cast<std::size_t>(d) * cells + c] -
                                       p.vec()[static_cast<std::size_t>(d)];
                    d2 += static_cast<double>(diff) * diff;
                }
                // strict < keeps the first (sample id, row-major cell) minimum
                if (best_sample < 0 || d2 < best_d2) {
                    best_d2 = d2;
                    best_sample = si;
                    best_t = c / ww;
                    best_v = c % ww;
                }
            }
        }
        const Tensor& lat = latents[static_cast<std::size_t>(best_sample)];
        const int cells = lat.shape[1] * lat.shape[2];
        const int cell = best_t * lat.shape[2] + best_v;
        for (int d = 0; d < model.protos.depth; ++d)
            p.vec()[static_cast<std::size_t>(d)] =
                lat.data[static_cast<std::size_t>(d) * cells + cell];
        p.provenance = Provenance{best_sample,
                                  samples[static_cast<std::size_t>(best_sample)].flow_id,
                                  best_t, best_v};
        log.push_back({p.id, p.class_id, best_sample,
                       samples[static_cast<std::size_t>(best_sample)].flow_id, best_t, best_v,
                       best_d2});
    }
    return log;
}

inline ProjectionLog project_prototypes(LexNetModel& model,
                                        const std::vector<MtsSample>& samples) {
    return project_prototypes_impl(model, samples, compute_latents(model, samples));
}

/// Per-class average of each sample's min squared distance to its class
/// prototypes, plus the worst-covered sample and its best patch (used to
/// initialize grown prototypes).
struct ClassCoverage {
    std::vector<double> avg_dists;
    struct Worst {
        int sample = -1;
        double dist = -1.0;
        int t = 0, v = 0;  // the cell realizing that sample's min distance
    };
    std::vector<Worst> worst;
};

inline ClassCoverage compute_class_coverage_impl(const LexNetModel& model,
                                                 const std::vector<MtsSample>& samples,
                                                 const std::vector<Tensor>& latents) {
    const int k_classes = model.n_classes();
    ClassCoverage cov;
    cov.avg_dists.assign(static_cast<std::size_t>(k_classes), 0.0);
    cov.worst.assign(static_cast<std::size_t>(k_classes), {});
    std::vector<int> counts(static_cast<std::size_t>(k_classes), 0);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int cls = samples[i].label_id;
        const Tensor& lat = latents[i];
        const int dd = lat.shape[0], ww = lat.shape[2];
        const int cells = lat.shape[1] * ww;
        double best = -1.0;
        int best_t = 0, best_v = 0;
        for (const Prototype& p : model.protos.protos) {
            if (p.class_id != cls) continue;
            for (int c = 0; c < cells; ++c) {
                double d2 = 0.0;
                for (int d = 0; d < dd; ++d) {
                    const float diff = lat.data[static_cast<std::size_t>(d) * cells + c] -
                                       p.vec()[static_cast<std::size_t>(d)];
                    d2 += static_cast<double>(diff) * diff;
                }
                if (best < 0.0 || d2 < best) {
                    best = d2;
                    best_t = c / ww;
                    best_v = c % ww;
                }
            }
        }
        if (best < 0.0)
            throw Error("compute_avg_dists: class '" +
                        model.labels[static_cast<std::size_t>(cls)] + "' has no prototypes");
        cov.avg_dists[static_cast<std::size_t>(cls)] += best;
        counts[static_cast<std::size_t>(cls)]++;
        ClassCoverage::Worst& w = cov.worst[static_cast<std::size_t>(cls)];
        if (best > w.dist) w = {static_cast<int>(i), best, best_t, best_v};
    }
    for (int k = 0; k < k_classes; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0)
            throw Error("compute_avg_dists: class '" + model.labels[static_cast<std::size_t>(k)] +
                        "' has no samples");
        cov.avg_dists[static_cast<std::size_t>(k)] /= counts[static_cast<std::size_t>(k)];
    }
    return cov;
}

inline std::vector<double> compute_avg_dists(const LexNetModel& model,
                                             const std::vector<MtsSample>& samples) {
    return compute_class_coverage_impl(model, samples, compute_latents(model, samples))
        .avg_dists;
}

// ---------------------------------------------------------------------------
// Growth rule: if the avg_dists distribution is fat-tailed (excess kurtosis
// > 0), every class in the worst quartile (avg_dist >= the 75th percentile)
// and below the cap gains one prototype, initialized to the worst-covered
// sample's best patch. The head gains a matching column.
// ---------------------------------------------------------------------------

struct GrowthLog {
    double kurtosis = 0.0;
    double threshold = 0.0;
    bool triggered = false;
    std::vector<int> grown_classes;
};

inline GrowthLog grow_prototypes_impl(LexNetModel& model, const std::vector<MtsSample>& samples,
                                      const std::vector<Tensor>& latents,
                                      const ClassCoverage& cov, const TrainConfig& cfg) {
    GrowthLog log;
    log.kurtosis = excess_kurtosis(cov.avg_dists);
    if (model.n_classes() < 4 || log.kurtosis <= 0.0) return log;
    log.triggered = true;
    log.threshold = quantile(cov.avg_dists, 1.0 - cfg.growth_quantile);
    for (int k = 0; k < model.n_classes(); ++k) {
        if (cov.avg_dists[static_cast<std::size_t>(k)] < log.threshold) continue;
        if (model.protos.class_count(k) >= cfg.proto_cap_per_class) continue;
        const ClassCoverage::Worst& w = cov.worst[static_cast<std::size_t>(k)];
        if (w.sample < 0) continue;
        Prototype& p = model.protos.add(k);
        const Tensor& lat = latents[static_cast<std::size_t>(w.sample)];
        const int cells = lat.shape[1] * lat.shape[2];
        const int cell = w.t * lat.shape[2] + w.v;
        for (int d = 0; d < model.protos.depth; ++d)
            p.vec()[static_cast<std::size_t>(d)] =
                lat.data[static_cast<std::size_t>(d) * cells + cell];
        p.provenance =
            Provenance{w.sample, samples[static_cast<std::size_t>(w.sample)].flow_id, w.t, w.v};
        model.head.grow_column(k);
        log.grown_classes.push_back(k);
    }
    return log;
}

inline GrowthLog grow_prototypes(LexNetModel& model, const std::vector<MtsSample>& samples,
                                 const TrainConfig& cfg) {
    std::vector<Tensor> latents = compute_latents(model, samples);
    ClassCoverage cov = compute_class_coverage_impl(model, samples, latents);
    return grow_prototypes_impl(model, samples, latents, cov, cfg);
}

// ---------------------------------------------------------------------------
// Stage 3: last layer only, on similarity scores precomputed once per sample
// (backbone and prototypes are constant during this stage).
// ---------------------------------------------------------------------------

inline std::vector<std::vector<float>> precompute_scores(const LexNetModel& model,
                                                         const std::vector<MtsSample>& samples) {
    std::vector<std::vector<float>> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Tensor latent = model.backbone.forward_infer(samples[i].grid);
        out[i] = lproto_forward(latent, model.protos).scores;
    }
    return out;
}

inline double stage3_epoch_on_scores(LexNetModel& model,
                                     const std::vector<std::vector<float>>& scores,
                                     const std::vector<MtsSample>& samples,
                                     const TrainConfig& cfg, Rng& rng) {
    if (samples.empty()) throw Error("stage3_epoch: empty dataset");
    std::vector<Parameter*> params = model.params();
    model.head.weight.tensor.ensure_grad();

    const auto batches =
        make_batches(static_cast<int>(samples.size()), cfg.batch_size, rng);
    double loss_sum = 0.0;
    for (const std::vector<int>& batch : batches) {
        const float inv_n = 1.0f / static_cast<float>(batch.size());
        double ce_sum = 0.0;
        for (int i : batch) {
            const std::vector<float>& s = scores[static_cast<std::size_t>(i)];
            std::vector<float> logits = classify_logits(s, model.head);
            CrossEntropyResult ce =
                softmax_cross_entropy(logits, samples[static_cast<std::size_t>(i)].label_id);
            ce_sum += ce.loss;
            for (float& g : ce.dlogits) g *= inv_n;
            linear_backward(s, model.head.weight.tensor, ce.dlogits, nullptr,
                            &model.head.weight.tensor.grad);
        }
        loss_sum += ce_sum / static_cast<double>(batch.size());
        sgd_step(params, ParamGroup::last_layer, cfg.lr_last);
    }
    return loss_sum / static_cast<double>(batches.size());
}

inline double stage3_epoch(LexNetModel& model, const std::vector<MtsSample>& samples,
                           const TrainConfig& cfg, Rng& rng) {
    return stage3_epoch_on_scores(model, precompute_scores(model, samples), samples, cfg, rng);
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct Metrics {
    double accuracy = 0.0;
    int correct = 0, total = 0;
    std::vector<double> per_class_accuracy;
    std::vector<int> per_class_support;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
};

inline Metrics evaluate(const LexNetModel& model, const std::vector<MtsSample>& samples) {
    if (samples.empty()) throw Error("evaluate: empty dataset");
    const int kk = model.n_classes();
    Metrics m;
    m.confusion.assign(static_cast<std::size_t>(kk),
                       std::vector<int>(static_cast<std::size_t>(kk), 0));
    m.per_class_support.assign(static_cast<std::size_t>(kk), 0);
    std::vector<int> per_class_correct(static_cast<std::size_t>(kk), 0);
    for (const MtsSample& s : samples) {
        const int pred = model.forward_infer(s.grid).predicted;
        m.confusion[static_cast<std::size_t>(s.label_id)][static_cast<std::size_t>(pred)]++;
        m.per_class_support[static_cast<std::size_t>(s.label_id)]++;
        if (pred == s.label_id) {
            ++m.correct;
            per_class_correct[static_cast<std::size_t>(s.label_id)]++;
        }
        ++m.total;
    }
    m.accuracy = static_cast<double>(m.correct) / m.total;
    m.per_class_accuracy.assign(static_cast<std::size_t>(kk), 0.0);
    for (int k = 0; k < kk; ++k)
        if (m.per_class_support[static_cast<std::size_t>(k)] > 0)
            m.per_class_accuracy[static_cast<std::size_t>(k)] =
                static_cast<double>(per_class_correct[static_cast<std::size_t>(k)]) /
                m.per_class_support[static_cast<std::size_t>(k)];
    return m;
}

// ---------------------------------------------------------------------------
// The full three-stage loop.
// ---------------------------------------------------------------------------

struct IterationRecord {
    int iteration = 0;
    std::vector<double> stage1_losses;
    std::vector<double> stage3_losses;
    double train_accuracy = -1.0;
    double test_accuracy = -1.0;
    std::vector<int> protos_per_class;
    double kurtosis = 0.0;
    bool growth_triggered = false;
    std::vector<int> grown_classes;
};

struct TrainReport {
    std::vector<IterationRecord> iterations;
    double final_train_accuracy = -1.0;
    double final_test_accuracy = -1.0;
    std::vector<double> final_per_class_accuracy;
    double mean_protos_per_class = 0.0;
    int min_protos_per_class = 0;
    int max_protos_per_class = 0;
};

inline std::vector<int> protos_per_class(const LexNetModel& model) {
    std::vector<int> out(static_cast<std::size_t>(model.n_classes()), 0);
    for (const Prototype& p : model.protos.protos)
        out[static_cast<std::size_t>(p.class_id)]++;
    return out;
}

inline TrainReport train(LexNetModel& model, const std::vector<MtsSample>& train_set,
                         const std::vector<MtsSample>* test_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw Error("train: empty training set");
    model.train_snapshot = cfg;

    Rng batch_rng(derive_seed(cfg.seed, 0xba7c4));
    TrainReport report;
    int stage1_epoch_counter = 0;

    for (int outer = 1; outer <= cfg.n_epochs_outer; ++outer) {
        IterationRecord rec;
        rec.iteration = outer;

        // Stage 1: backbone + prototypes, warm-up ramp on the backbone lr.
        for (int e = 0; e < cfg.n_sgd; ++e) {
            float ramp = 1.0f;
            if (stage1_epoch_counter < cfg.warmup_epochs)
                ramp = static_cast<float>(stage1_epoch_counter + 1) /
                       static_cast<float>(cfg.warmup_epochs);
            rec.stage1_losses.push_back(
                stage1_epoch(model, train_set, cfg, cfg.lr_backbone * ramp, batch_rng));
            ++stage1_epoch_counter;
        }

        // Stage 2: projection, coverage, growth.
        std::vector<Tensor> latents = compute_latents(model, train_set);
        project_prototypes_impl(model, train_set, latents);
        ClassCoverage cov = compute_class_coverage_impl(model, train_set, latents);
        GrowthLog growth = grow_prototypes_impl(model, train_set, latents, cov, cfg);
        rec.kurtosis = growth.kurtosis;
        rec.growth_triggered = growth.triggered;
        rec.grown_classes = growth.grown_classes;

        // Stage 3: last layer on fixed scores.
        std::vector<std::vector<float>> scores = precompute_scores(model, train_set);
        for (int e = 0; e < cfg.n_last; ++e)
            rec.stage3_losses.push_back(
                stage3_epoch_on_scores(model, scores, train_set, cfg, batch_rng));

        rec.protos_per_class = protos_per_class(model);
        rec.train_accuracy = evaluate(model, train_set).accuracy;
        if (test_set && !test_set->empty())
            rec.test_accuracy = evaluate(model, *test_set).accuracy;
        report.iterations.push_back(std::move(rec));
    }

    model.trained = true;
    Metrics train_metrics = evaluate(model, train_set);
    report.final_train_accuracy = train_metrics.accuracy;
    if (test_set && !test_set->empty()) {
        Metrics test_metrics = evaluate(model, *test_set);
        report.final_test_accuracy = test_metrics.accuracy;
        report.final_per_class_accuracy = test_metrics.per_class_accuracy;
    } else {
        report.final_per_class_accuracy = train_metrics.per_class_accuracy;
    }
    const std::vector<int> counts = protos_per_class(model);
    report.min_protos_per_class = *std::min_element(counts.begin(), counts.end());
    report.max_protos_per_class = *std::max_element(counts.begin(), counts.end());
    report.mean_protos_per_class =
        static_cast<double>(model.protos.size()) / model.n_classes();
    return report;
}

/// One record per outer iteration, stable formatting (no timing), suitable
/// for byte-for-byte comparison across runs.
inline std::string report_to_text(const TrainReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "iter\tstage1_first\tstage1_last\tstage3_last\ttrain_acc\ttest_acc\tkurtosis\t"
          "grown\tprotos_per_class\n";
    for (const IterationRecord& it : r.iterations) {
        os << it.iteration << '\t' << it.stage1_losses.front() << '\t'
           << it.stage1_losses.back() << '\t' << it.stage3_losses.back() << '\t'
           << it.train_accuracy << '\t' << it.test_accuracy << '\t' << it.kurtosis << '\t';
        for (std::size_t i = 0; i < it.grown_classes.size(); ++i)
            os << (i ? "," : "") << it.grown_classes[i];
        if (it.grown_classes.empty()) os << "-";
        os << '\t';
        for (std::size_t i = 0; i < it.protos_per_class.size(); ++i)
            os << (i ? "," : "") << it.protos_per_class[i];
        os << '\n';
    }
    os << "final_train_accuracy\t" << r.final_train_accuracy << '\n';
    os << "final_test_accuracy\t" << r.final_test_accuracy << '\n';
    os << "mean_protos_per_class\t" << r.mean_protos_per_class << '\n';
    os << "min_protos_per_class\t" << r.min_protos_per_class << '\n';
    os << "max_protos_per_class\t" << r.max_protos_per_class << '\n';
    return os.str();
}

}  // namespace lexnet
