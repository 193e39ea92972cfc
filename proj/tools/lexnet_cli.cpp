// lexnet: train, evaluate, explain and benchmark the flow classifier from
// the command line. One subcommand per invocation; all randomness flows
// through --seed; LEXNET_THREADS controls parallel classification.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "lexnet/bench.hpp"
#include "lexnet/explain.hpp"
#include "lexnet/serialize.hpp"
#include "lexnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int thread_count() {
    const char* env = std::getenv("LEXNET_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

std::vector<int> imbalanced_counts(int classes, int flows_per_class, double imbalance) {
    // linear ramp from imbalance*base down to base, mean ~= flows_per_class
    std::vector<int> counts(static_cast<std::size_t>(classes));
    if (imbalance <= 1.0) {
        std::fill(counts.begin(), counts.end(), flows_per_class);
        return counts;
    }
    const double mean_factor = (imbalance + 1.0) / 2.0;
    const double base = static_cast<double>(flows_per_class) / mean_factor;
    for (int c = 0; c < classes; ++c) {
        const double f = classes > 1 ? static_cast<double>(c) / (classes - 1) : 0.0;
        counts[static_cast<std::size_t>(c)] =
            std::max(2, static_cast<int>(std::llround(base * (imbalance - f * (imbalance - 1.0)))));
    }
    return counts;
}

lexnet::BackboneConfig config_from_json(const json& j) {
    using namespace lexnet;
    BackboneConfig cfg = BackboneConfig::lexnet_default();
    if (!j.contains("model")) return cfg;
    const json& m = j["model"];
    if (m.contains("stem_channels")) cfg.stem_channels = m["stem_channels"].get<int>();
    const BlockKind bk = (m.contains("kind") && m["kind"] == "standard_res")
                             ? BlockKind::standard_res
                             : BlockKind::leres;
    for (BlockSpec& b : cfg.blocks) b.kind = bk;
    if (m.contains("blocks")) {
        cfg.blocks.clear();
        for (const auto& pair : m["blocks"])
            cfg.blocks.push_back({pair[0].get<int>(), pair[1].get<int>(), bk});
    }
    if (m.contains("final_activation"))
        cfg.final_activation = m["final_activation"] == "relu" ? Activation::relu
                                                               : Activation::sigmoid;
    else if (bk == BlockKind::standard_res)
        cfg.final_activation = Activation::relu;
    cfg.validate();
    return cfg;
}

lexnet::TrainConfig train_config_from_json(const json& j) {
    lexnet::TrainConfig cfg;
    if (!j.contains("train")) return cfg;
    const json& t = j["train"];
    auto get_int = [&](const char* key, int& out) {
        if (t.contains(key)) out = t[key].get<int>();
    };
    auto get_float = [&](const char* key, float& out) {
        if (t.contains(key)) out = t[key].get<float>();
    };
    get_int("n_epochs_outer", cfg.n_epochs_outer);
    get_int("n_sgd", cfg.n_sgd);
    get_int("n_last", cfg.n_last);
    get_int("warmup_epochs", cfg.warmup_epochs);
    get_float("lr_backbone", cfg.lr_backbone);
    get_float("lr_proto", cfg.lr_proto);
    get_float("lr_last", cfg.lr_last);
    get_float("proto_l2", cfg.proto_l2);
    get_float("cluster_cost", cfg.cluster_cost);
    get_float("separation_cost", cfg.separation_cost);
    get_int("batch_size", cfg.batch_size);
    get_int("proto_cap_per_class", cfg.proto_cap_per_class);
    if (t.contains("growth_quantile")) cfg.growth_quantile = t["growth_quantile"].get<double>();
    if (t.contains("seed")) cfg.seed = t["seed"].get<std::uint64_t>();
    return cfg;
}

struct LoadedData {
    std::vector<lexnet::MtsSample> train;
    std::vector<lexnet::MtsSample> test;
    lexnet::LabelMap labels;
};

LoadedData load_dir_with_labels(const std::string& dir, const lexnet::LabelMap* fixed_labels) {
    using namespace lexnet;
    LoadedData out;
    const fs::path train_path = fs::path(dir) / "train.csv";
    const fs::path test_path = fs::path(dir) / "test.csv";
    if (!fs::exists(train_path) && !fs::exists(test_path))
        throw IoError("data dir '" + dir + "' has neither train.csv nor test.csv");
    std::vector<FlowRecord> train_recs, test_recs;
    if (fs::exists(train_path)) train_recs = parse_flows_file(train_path.string());
    if (fs::exists(test_path)) test_recs = parse_flows_file(test_path.string());
    if (fixed_labels) {
        out.labels = *fixed_labels;
    } else {
        std::vector<FlowRecord> all = train_recs;
        all.insert(all.end(), test_recs.begin(), test_recs.end());
        out.labels = build_label_map(all);
    }
    out.train = encode_dataset(train_recs, out.labels);
    out.test = encode_dataset(test_recs, out.labels);
    return out;
}

lexnet::LabelMap model_labels(const lexnet::LexNetModel& model) {
    lexnet::LabelMap m;
    m.names = model.labels;
    return m;
}

// --- subcommands ------------------------------------------------------------

int cmd_synth(int classes, int flows, double noise, double imbalance, std::uint64_t seed,
              const std::string& out_dir, double test_fraction) {
    using namespace lexnet;
    fs::create_directories(out_dir);
    const std::vector<int> counts = imbalanced_counts(classes, flows, imbalance);
    SynthCorpus corpus = synth_generate(classes, counts, noise, seed);
    RecordSplit split = stratified_split_records(corpus.records, test_fraction, seed);
    write_flows_csv(split.train, (fs::path(out_dir) / "train.csv").string());
    write_flows_csv(split.test, (fs::path(out_dir) / "test.csv").string());
    write_signatures_jsonl(corpus.signatures,
                           (fs::path(out_dir) / "signatures.jsonl").string());
    std::cout << "wrote " << split.train.size() << " train / " << split.test.size()
              << " test flows across " << classes << " classes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& model_out, const std::string& report_out,
              std::int64_t seed_override) {
    using namespace lexnet;
    json cfg_json = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open config file: " + config_path);
        in >> cfg_json;
    }
    BackboneConfig backbone_cfg = config_from_json(cfg_json);
    TrainConfig cfg = train_config_from_json(cfg_json);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

    LoadedData data = load_dir_with_labels(data_dir, nullptr);
    if (data.train.empty()) throw Error("no training flows found in " + data_dir);

    LexNetModel model = LexNetModel::build(backbone_cfg, data.labels.names, cfg.seed);
    TrainReport report =
        train(model, data.train, data.test.empty() ? nullptr : &data.test, cfg);

    save_model(model, model_out);
    if (!report_out.empty()) {
        std::ofstream out(report_out);
        if (!out) throw IoError("cannot write report file: " + report_out);
        out << report_to_text(report);
    }
    std::cout << "final train accuracy: " << report.final_train_accuracy << "\n";
    if (report.final_test_accuracy >= 0.0)
        std::cout << "final test accuracy:  " << report.final_test_accuracy << "\n";
    std::cout << "prototypes/class mean: " << report.mean_protos_per_class << "\n";
    std::cout << "model checksum: " << std::hex << file_checksum(model_out) << std::dec
              << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& split_name) {
    using namespace lexnet;
    LexNetModel model = load_model(model_path);
    LabelMap labels = model_labels(model);
    LoadedData data = load_dir_with_labels(data_dir, &labels);
    const std::vector<MtsSample>& samples = split_name == "train" ? data.train : data.test;
    if (samples.empty()) throw Error("split '" + split_name + "' is empty in " + data_dir);
    Metrics m = evaluate(model, samples);
    std::cout << "samples:  " << m.total << "\n";
    std::cout << "accuracy: " << m.accuracy << "\n";
    std::cout << "class\tsupport\taccuracy\tprototypes\n";
    for (int c = 0; c < model.n_classes(); ++c)
        std::cout << model.labels[static_cast<std::size_t>(c)] << '\t'
                  << m.per_class_support[static_cast<std::size_t>(c)] << '\t'
                  << m.per_class_accuracy[static_cast<std::size_t>(c)] << '\t'
                  << model.protos.class_count(c) << "\n";
    return 0;
}

int cmd_classify(const std::string& model_path, const std::string& flows_path,
                 const std::string& out_path) {
    using namespace lexnet;
    LexNetModel model = load_model(model_path);
    std::vector<FlowRecord> records = parse_flows_file(flows_path);
    std::vector<LexNetModel::Prediction> preds(records.size());

    const int threads = thread_count();
    if (threads <= 1 || records.size() < 2) {
        for (std::size_t i = 0; i < records.size(); ++i)
            preds[i] = model.predict(encode_grid(records[i]));
    } else {
        // read-only model shared across workers; each index written once
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&]() {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= records.size()) return;
                    preds[i] = model.predict(encode_grid(records[i]));
                }
            });
        for (std::thread& t : pool) t.join();
    }

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw IoError("cannot write output file: " + out_path);
        out = &file;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        json j;
        j["flow_id"] = records[i].flow_id;
        j["label"] = model.labels[static_cast<std::size_t>(preds[i].label_id)];
        j["confidence"] = preds[i].confidence;
        (*out) << j.dump() << "\n";
    }
    if (records.empty())
        std::cerr << "warning: no flows in " << flows_path << ", empty output\n";
    return 0;
}

int cmd_explain(const std::string& model_path, const std::string& flows_path,
                const std::string& flow_id, const std::string& method,
                const std::string& out_dir, int top_k, int permutations,
                std::uint64_t seed) {
    using namespace lexnet;
    LexNetModel model = load_model(model_path);
    std::vector<FlowRecord> records = parse_flows_file(flows_path);
    const FlowRecord* rec = nullptr;
    for (const FlowRecord& r : records)
        if (r.flow_id == flow_id) rec = &r;
    if (!rec) throw Error("flow id '" + flow_id + "' not found in " + flows_path);

    MtsSample sample;
    sample.grid = encode_grid(*rec);
    sample.flow_id = rec->flow_id;
    const int predicted = model.forward_infer(sample.grid).predicted;

    RenderPayload payload;
    if (method == "bydesign") {
        Explanation ex = explain_prediction(model, sample);
        payload = render_explanation(ex, sample);
        std::cout << "predicted: " << model.labels[static_cast<std::size_t>(ex.predicted)]
                  << "\n";
        for (const ExplanationEntry& e : ex.entries)
            std::cout << "prototype " << e.proto_id << " score " << e.score << " @ (packet "
                      << e.t + 1 << ", " << variable_name(e.v) << ") from " << e.source
                      << "\n";
    } else if (method == "gradcam") {
        GradCamResult r = grad_cam(model, sample, predicted);
        if (r.zero_gradient) std::cerr << "warning: zero gradient, all-zero map\n";
        payload = render_explanation(r.map, sample, top_k);
    } else if (method == "shapley") {
        AttributionMap m = shapley_mc(model, sample, predicted, permutations, seed);
        payload = render_explanation(m, sample, top_k);
    } else {
        throw Error("unknown method '" + method + "' (want bydesign|gradcam|shapley)");
    }

    fs::create_directories(out_dir);
    const std::string base = flow_id + "." + method;
    const fs::path svg_path = fs::path(out_dir) / (base + ".svg");
    const fs::path sidecar_path = fs::path(out_dir) / (base + ".jsonl");
    std::ofstream svg(svg_path);
    svg << payload.svg;
    std::ofstream sidecar(sidecar_path);
    sidecar << payload.sidecar_jsonl;
    std::cout << "wrote " << svg_path.string() << " and " << sidecar_path.string() << "\n";
    return 0;
}

int cmd_faithfulness(const std::string& model_path, const std::string& data_dir,
                     const std::string& method, const std::string& split_name,
                     int permutations, std::uint64_t seed) {
    using namespace lexnet;
    LexNetModel model = load_model(model_path);
    LabelMap labels = model_labels(model);
    LoadedData data = load_dir_with_labels(data_dir, &labels);
    const std::vector<MtsSample>& samples = split_name == "test" ? data.test : data.train;
    if (samples.empty()) throw Error("split '" + split_name + "' is empty in " + data_dir);

    Attributor attributor;
    if (method == "gradcam")
        attributor = make_gradcam_attributor();
    else if (method == "shapley")
        attributor = make_shapley_attributor(permutations);
    else if (method == "bydesign")
        attributor = make_bydesign_attributor();
    else if (method == "random")
        attributor = make_random_attributor();
    else
        throw Error("unknown method '" + method + "' (want bydesign|gradcam|shapley|random)");

    FaithfulnessReport rep = faithfulness_eval(model, samples, attributor, seed);
    std::cout << "method:                   " << method << "\n";
    std::cout << "samples:                  " << rep.samples << "\n";
    std::cout << "top-protos accuracy:      " << rep.top_protos_accuracy * 100.0 << "%\n";
    std::cout << "top-10 accuracy:          " << rep.top_10_accuracy * 100.0 << "%\n";
    std::cout << "region hit rate (protos): " << rep.region_hit_rate_protos * 100.0 << "%\n";
    std::cout << "region hit rate (top10):  " << rep.region_hit_rate_10 * 100.0 << "%\n";
    return 0;
}

int cmd_bench(const std::string& model_path, const std::string& data_dir, int warmup,
              int iters) {
    using namespace lexnet;
    LexNetModel model = load_model(model_path);
    LabelMap labels = model_labels(model);
    LoadedData data = load_dir_with_labels(data_dir, &labels);
    const std::vector<MtsSample>& samples = data.test.empty() ? data.train : data.test;
    BenchReport rep = bench_inference(model, samples, warmup, iters);
    std::cout << format_bench_report(rep);
    return 0;
}

int cmd_params(const std::string& model_path) {
    using namespace lexnet;
    if (!model_path.empty()) {
        LexNetModel model = load_model(model_path);
        std::cout << format_param_table(report_params(model));
        return 0;
    }
    // published sizing: 200 classes, 340 prototypes
    std::vector<std::string> labels(200);
    for (int i = 0; i < 200; ++i) labels[static_cast<std::size_t>(i)] = "app" + std::to_string(i);
    LexNetModel model = LexNetModel::build(BackboneConfig::lexnet_default(), labels, 0);
    while (model.protos.size() < 340) {
        const int cls = model.protos.size() % 200;
        model.protos.add(cls);
        model.head.grow_column(cls);
    }
    std::cout << format_param_table(report_params(model));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lexnet: lightweight explainable-by-design flow classifier"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a planted-signature corpus");
    int classes = 10, flows = 100;
    double noise = 0.1, imbalance = 1.0, test_fraction = 0.5;
    std::uint64_t seed = 42;
    std::string out_dir;
    synth->add_option("--classes", classes, "number of classes")->check(CLI::Range(2, 10000));
    synth->add_option("--flows", flows, "mean flows per class")->check(CLI::Range(2, 1000000));
    synth->add_option("--noise", noise, "noise level in [0,1]");
    synth->add_option("--imbalance", imbalance, "max:min class size ratio (>=1)");
    synth->add_option("--test-fraction", test_fraction, "held-out fraction");
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--out", out_dir, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "run the three-stage training loop");
    std::string data_dir, config_path, model_out = "model.lex", report_out;
    std::int64_t seed_override = -1;
    train_cmd->add_option("--data", data_dir, "data directory (train.csv[, test.csv])")
        ->required();
    train_cmd->add_option("--config", config_path, "JSON config (model + train sections)");
    train_cmd->add_option("--out", model_out, "output model file");
    train_cmd->add_option("--report", report_out, "training report file");
    train_cmd->add_option("--seed", seed_override, "override config seed");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a dataset");
    std::string model_path, split_name = "test";
    eval_cmd->add_option("--model", model_path, "model file")->required();
    eval_cmd->add_option("--data", data_dir, "data directory")->required();
    eval_cmd->add_option("--split", split_name, "train|test (default test)");

    // classify
    auto* classify_cmd = app.add_subcommand("classify", "classify flows to JSONL");
    std::string flows_path, out_path;
    classify_cmd->add_option("--model", model_path, "model file")->required();
    classify_cmd->add_option("--flows", flows_path, "flow file (csv or jsonl)")->required();
    classify_cmd->add_option("--out", out_path, "output JSONL (default stdout)");

    // explain
    auto* explain_cmd = app.add_subcommand("explain", "explain one flow prediction");
    std::string flow_id, method = "bydesign";
    int top_k = 10, permutations = 32;
    explain_cmd->add_option("--model", model_path, "model file")->required();
    explain_cmd->add_option("--flows", flows_path, "flow file containing the flow")
        ->required();
    explain_cmd->add_option("--flow", flow_id, "flow id to explain")->required();
    explain_cmd->add_option("--method", method, "bydesign|gradcam|shapley");
    explain_cmd->add_option("--out", out_dir, "output directory")->required();
    explain_cmd->add_option("--topk", top_k, "highlighted cells for post hoc maps");
    explain_cmd->add_option("--permutations", permutations, "shapley permutations");
    explain_cmd->add_option("--seed", seed, "rng seed");

    // faithfulness
    auto* faith_cmd = app.add_subcommand("faithfulness", "faithfulness of post hoc methods");
    std::string faith_split = "train";
    faith_cmd->add_option("--model", model_path, "model file")->required();
    faith_cmd->add_option("--data", data_dir, "data directory")->required();
    faith_cmd->add_option("--method", method, "bydesign|gradcam|shapley|random")->required();
    faith_cmd->add_option("--split", faith_split, "train|test (default train)");
    faith_cmd->add_option("--permutations", permutations, "shapley permutations");
    faith_cmd->add_option("--seed", seed, "rng seed");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "CPU inference benchmark");
    int warmup = 200, iters = 2000;
    bench_cmd->add_option("--model", model_path, "model file")->required();
    bench_cmd->add_option("--data", data_dir, "data directory")->required();
    bench_cmd->add_option("--warmup", warmup, "warmup iterations");
    bench_cmd->add_option("--iters", iters, "measured iterations");

    // params
    auto* params_cmd = app.add_subcommand("params", "parameter accounting table");
    params_cmd->add_option("--model", model_path, "model file (default: published sizing)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(classes, flows, noise, imbalance, seed, out_dir, test_fraction);
        if (train_cmd->parsed())
            return cmd_train(data_dir, config_path, model_out, report_out, seed_override);
        if (eval_cmd->parsed()) return cmd_eval(model_path, data_dir, split_name);
        if (classify_cmd->parsed()) return cmd_classify(model_path, flows_path, out_path);
        if (explain_cmd->parsed())
            return cmd_explain(model_path, flows_path, flow_id, method, out_dir, top_k,
                               permutations, seed);
        if (faith_cmd->parsed())
            return cmd_faithfulness(model_path, data_dir, method, faith_split, permutations,
                                    seed);
        if (bench_cmd->parsed()) return cmd_bench(model_path, data_dir, warmup, iters);
        if (params_cmd->parsed())
            return cmd_params(params_cmd->count("--model") ? model_path : "");
    } catch (const lexnet::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const lexnet::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const lexnet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
