#pragma once

#include <string>
#include <vector>

#include "lexnet/backbone.hpp"
#include "lexnet/config.hpp"
#include "lexnet/flowdata.hpp"
#include "lexnet/lproto.hpp"

namespace lexnet {

/// The full classifier: backbone -> prototype layer -> linear head, plus the
/// label map and the training-config snapshot that produced it.
struct LexNetModel {
    Backbone backbone;
    PrototypeSet protos;
    LastLayer head;
    std::vector<std::string> labels;
    TrainConfig train_snapshot;
    bool trained = false;

    int n_classes() const { return static_cast<int>(labels.size()); }

    static LexNetModel build(const BackboneConfig& cfg, std::vector<std::string> label_names,
                             std::uint64_t seed) {
        LexNetModel m;
        m.labels = std::move(label_names);
        m.backbone = Backbone(cfg);
        Rng backbone_rng(derive_seed(seed, 0xbac0));
        m.backbone.init(backbone_rng);
        m.protos = PrototypeSet(cfg.output_channels(), m.n_classes());
        Rng proto_rng(derive_seed(seed, 0x9207));
        m.protos.init_one_per_class(proto_rng);
        m.head = LastLayer(m.n_classes(), m.protos);
        return m;
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> out;
        backbone.collect(out);
        protos.collect(out);
        out.push_back(&head.weight);
        return out;
    }

    std::int64_t param_count_backbone() const { return backbone.param_count(); }
    std::int64_t param_count_total() const {
        return backbone.param_count() + protos.param_count() + head.weight.tensor.numel();
    }

    struct Forward {
        Tensor latent;
        LprotoOut lp;
        std::vector<float> logits;
        int predicted = -1;
    };

    Forward forward_infer(const Tensor& grid) const {
        Forward f;
        f.latent = backbone.forward_infer(grid);
        f.lp = lproto_forward(f.latent, protos);
        f.logits = classify_logits(f.lp.scores, head);
        f.predicted = argmax_class(f.logits);
        return f;
    }

    struct Prediction {
        int label_id = -1;
        float confidence = 0.0f;  // softmax probability of the predicted class
    };

    Prediction predict(const Tensor& grid) const {
        Forward f = forward_infer(grid);
        // softmax over logits for the confidence only
        float max_logit = f.logits[0];
        for (float v : f.logits) max_logit = std::max(max_logit, v);
        double denom = 0.0;
        for (float v : f.logits) denom += std::exp(static_cast<double>(v) - max_logit);
        const double p =
            std::exp(static_cast<double>(f.logits[static_cast<std::size_t>(f.predicted)]) -
                     max_logit) /
            denom;
        return {f.predicted, static_cast<float>(p)};
    }
};

}  // namespace lexnet
