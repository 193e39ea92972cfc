#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "lexnet/model.hpp"

namespace lexnet {

// ---------------------------------------------------------------------------
// Parameter accounting, Table-style rows: layer input dims, operator, stride,
// output channels and running parameter total.
// ---------------------------------------------------------------------------

struct ParamRow {
    std::string input_dims;
    std::string op;
    std::string stride;
    std::string out_channels;
    std::int64_t cum_params = 0;
};

inline std::vector<ParamRow> report_params(const LexNetModel& model) {
    const BackboneConfig& cfg = model.backbone.config;
    std::vector<ParamRow> rows;
    auto dims = [&](int c) {
        return std::to_string(c) + "x" + std::to_string(cfg.height) + "x" +
               std::to_string(cfg.width);
    };
    const std::vector<std::int64_t> cum = model.backbone.cumulative_param_counts();
    rows.push_back({dims(cfg.input_channels), "Conv3x3+BN", "1",
                    std::to_string(cfg.stem_channels), cum[0]});
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const BlockSpec& b = cfg.blocks[i];
        rows.push_back({dims(b.in_channels),
                        b.kind == BlockKind::leres ? "LERes Block" : "Res Block", "1",
                        std::to_string(b.out_channels), cum[i + 1]});
    }
    const int m = model.protos.size();
    std::int64_t total = model.backbone.param_count() + model.protos.param_count();
    rows.push_back({dims(cfg.output_channels()), "LProto Layer", "-", std::to_string(m), total});
    rows.push_back({dims(m), "Max Pooling", "-", std::to_string(m), total});
    total += model.head.weight.tensor.numel();
    rows.push_back({std::to_string(m) + "x1x1", "FC", "-", std::to_string(model.n_classes()),
                    total});
    return rows;
}

inline std::string format_param_table(const std::vector<ParamRow>& rows) {
    auto group_digits = [](std::int64_t v) {
        std::string s = std::to_string(v);
        for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3)
            s.insert(static_cast<std::size_t>(i), ",");
        return s;
    };
    std::ostringstream os;
    os << "Input Dims      Operator       Stride  Out Channels  Cum. Params\n";
    for (const ParamRow& r : rows) {
        os << r.input_dims;
        os << std::string(r.input_dims.size() < 16 ? 16 - r.input_dims.size() : 1, ' ');
        os << r.op << std::string(r.op.size() < 15 ? 15 - r.op.size() : 1, ' ');
        os << r.stride << std::string(7, ' ');
        os << r.out_channels
           << std::string(r.out_channels.size() < 14 ? 14 - r.out_channels.size() : 1, ' ');
        os << group_digits(r.cum_params) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// CPU inference benchmark: wall-clock timing of single-sample forward passes
// (encode excluded), warmup discarded, single-threaded for reproducibility.
// ---------------------------------------------------------------------------

struct BenchReport {
    double samples_per_s = 0.0;
    double mean_us = 0.0;
    double p50_us = 0.0;
    double p95_us = 0.0;
    double p99_us = 0.0;
    int batch = 1;
    int warmup_iters = 0;
    int measured_iters = 0;
    std::int64_t param_count = 0;
    std::string env_note;
};

inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    // nearest-rank
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

inline BenchReport bench_inference(const LexNetModel& model,
                                   const std::vector<MtsSample>& samples, int warmup_iters,
                                   int measured_iters, int batch = 1) {
    if (samples.empty()) throw Error("bench_inference: empty dataset");
    using clock = std::chrono::steady_clock;

    volatile float sink = 0.0f;  // keep the forward pass observable
    auto run_one = [&](const MtsSample& s) {
        LexNetModel::Forward f = model.forward_infer(s.grid);
        sink = sink + f.logits[static_cast<std::size_t>(f.predicted)];
    };

    for (int i = 0; i < warmup_iters; ++i) run_one(samples[i % samples.size()]);

    std::vector<double> lat_us;
    lat_us.reserve(static_cast<std::size_t>(measured_iters));
    const auto t_total0 = clock::now();
    for (int i = 0; i < measured_iters; ++i) {
        const auto t0 = clock::now();
        for (int b = 0; b < batch; ++b) run_one(samples[(i * batch + b) % samples.size()]);
        const auto t1 = clock::now();
        lat_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() / batch);
    }
    const auto t_total1 = clock::now();
    const double total_s = std::chrono::duration<double>(t_total1 - t_total0).count();

    BenchReport rep;
    rep.batch = batch;
    rep.warmup_iters = warmup_iters;
    rep.measured_iters = measured_iters;
    rep.param_count = model.param_count_total();
    rep.samples_per_s = static_cast<double>(measured_iters) * batch / total_s;
    double sum = 0.0;
    for (double v : lat_us) sum += v;
    rep.mean_us = sum / static_cast<double>(lat_us.size());
    std::sort(lat_us.begin(), lat_us.end());
    rep.p50_us = percentile_sorted(lat_us, 0.50);
    rep.p95_us = percentile_sorted(lat_us, 0.95);
    rep.p99_us = percentile_sorted(lat_us, 0.99);
    rep.env_note = "single-thread CPU, steady_clock, per-sample forward (encode excluded)";
    return rep;
}

inline std::string format_bench_report(const BenchReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << "samples/s:      " << r.samples_per_s << '\n';
    os << "mean latency:   " << r.mean_us << " us/sample\n";
    os << "p50 latency:    " << r.p50_us << " us/sample\n";
    os << "p95 latency:    " << r.p95_us << " us/sample\n";
    os << "p99 latency:    " << r.p99_us << " us/sample\n";
    os << "batch:          " << r.batch << '\n';
    os << "warmup iters:   " << r.warmup_iters << '\n';
    os << "measured iters: " << r.measured_iters << '\n';
    os << "parameters:     " << r.param_count << '\n';
    os << "environment:    " << r.env_note << '\n';
    return os.str();
}

}  // namespace lexnet
