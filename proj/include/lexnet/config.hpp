#pragma once

#include <cstdint>

#include "lexnet/tensor.hpp"

namespace lexnet {

/// Hyperparameters of the three-stage training loop.
struct TrainConfig {
    int n_epochs_outer = 5;    // outer iterations (stage1 -> project/grow -> stage3)
    int n_sgd = 20;            // stage-1 epochs per outer iteration
    int n_last = 5;            // stage-3 epochs per outer iteration
    int warmup_epochs = 5;     // linear lr ramp on the backbone, first stage-1 epochs
    float lr_backbone = 0.05f;
    float lr_proto = 0.05f;
    float lr_last = 0.02f;
    float proto_l2 = 1e-4f;    // L2 regularization on prototype vectors only
    // Optional prototype-network cluster/separation costs, off by default.
    // Cluster pulls each sample's nearest own-class prototype patch closer
    // (weight on the min squared distance); separation penalizes the highest
    // other-class similarity score, which is bounded and concentrates on
    // prototypes that fire indiscriminately across classes.
    float cluster_cost = 0.0f;
    float separation_cost = 0.0f;
    int batch_size = 64;
    int proto_cap_per_class = 5;
    double growth_quantile = 0.25;  // worst quartile of avg_dists gains a prototype
    std::uint64_t seed = 42;

    void validate() const {
        if (n_epochs_outer <= 0 || n_sgd <= 0 || n_last <= 0 || warmup_epochs <= 0)
            throw Error("train config: epoch counts must be positive");
        if (lr_backbone <= 0.0f || lr_proto <= 0.0f || lr_last <= 0.0f)
            throw Error("train config: learning rates must be positive");
        if (proto_l2 < 0.0f) throw Error("train config: proto_l2 must be >= 0");
        if (batch_size < 2) throw Error("train config: batch_size must be >= 2 (batch norm)");
        if (proto_cap_per_class < 1) throw Error("train config: prototype cap must be >= 1");
        if (growth_quantile <= 0.0 || growth_quantile >= 1.0)
            throw Error("train config: growth_quantile must be in (0,1)");
    }
};

}  // namespace lexnet
