#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lexnet/ops.hpp"
#include "lexnet/tensor.hpp"

namespace lexnet {

enum class BlockKind { leres, standard_res };
enum class Activation { relu, sigmoid };

/// One residual block. Stride is always 1; out_channels is either equal to
/// in_channels (plain two-conv residual) or twice it (expansion).
struct BlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    BlockKind kind = BlockKind::leres;
};

struct BackboneConfig {
    int input_channels = 1;
    int height = 20;
    int width = 2;
    int stem_channels = 8;
    std::vector<BlockSpec> blocks;
    Activation final_activation = Activation::sigmoid;

    void validate() const {
        int ch = stem_channels;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const BlockSpec& b = blocks[i];
            if (b.in_channels != ch)
                throw ShapeError("backbone config: block " + std::to_string(i) + " expects " +
                                 std::to_string(b.in_channels) + " input channels, chain has " +
                                 std::to_string(ch));
            if (b.out_channels != b.in_channels && b.out_channels != 2 * b.in_channels)
                throw ShapeError("backbone config: block " + std::to_string(i) +
                                 " output channels must be n or 2n");
            ch = b.out_channels;
        }
    }

    int output_channels() const {
        return blocks.empty() ? stem_channels : blocks.back().out_channels;
    }

    /// The published LEXNet stack: stem 1->8, blocks 8->16, 16->16, 16->32,
    /// 32->32, sigmoid after the last block.
    static BackboneConfig lexnet_default() {
        BackboneConfig c;
        c.blocks = {{8, 16, BlockKind::leres},
                    {16, 16, BlockKind::leres},
                    {16, 32, BlockKind::leres},
                    {32, 32, BlockKind::leres}};
        c.final_activation = Activation::sigmoid;
        return c;
    }

    /// Standard-residual twin at the same widths, relu throughout. Used only
    /// for comparison runs.
    static BackboneConfig resnet_twin() {
        BackboneConfig c = lexnet_default();
        for (BlockSpec& b : c.blocks) b.kind = BlockKind::standard_res;
        c.final_activation = Activation::relu;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Conv + BN unit (the "Conv3x3+BN" and shortcut "Conv1x1+BN" boxes).
// ---------------------------------------------------------------------------

struct ConvBn {
    int in_ch = 0, out_ch = 0, ksize = 3;
    Parameter kernel, gamma, beta;
    BatchNormState bn;

    ConvBn() = default;
    ConvBn(int in_c, int out_c, int k, const std::string& name)
        : in_ch(in_c),
          out_ch(out_c),
          ksize(k),
          kernel(Shape{out_c, in_c, k, k}, ParamGroup::backbone, name + ".kernel"),
          gamma(Shape{out_c}, ParamGroup::backbone, name + ".gamma"),
          beta(Shape{out_c}, ParamGroup::backbone, name + ".beta"),
          bn(out_c) {}

    void init(Rng& rng) {
        const float fan_in = static_cast<float>(in_ch * ksize * ksize);
        const float bound = std::sqrt(6.0f / fan_in);  // Kaiming uniform
        for (float& v : kernel.tensor.data) v = rng.uniform(-bound, bound);
        std::fill(gamma.tensor.data.begin(), gamma.tensor.data.end(), 1.0f);
        std::fill(beta.tensor.data.begin(), beta.tensor.data.end(), 0.0f);
        bn.initialized = false;
    }

    std::int64_t param_count() const { return kernel.tensor.numel() + 2 * out_ch; }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&kernel);
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    struct Cache {
        std::vector<Tensor> x;         // layer input batch
        std::vector<Tensor> conv_out;  // pre-BN
        BatchNormCache bn;
    };

    void conv(const Tensor& x, Tensor& y) const {
        if (ksize == 3)
            conv2d_forward(x, kernel.tensor, y);
        else
            conv1x1_forward(x, kernel.tensor, y);
    }

    void forward_train(const std::vector<Tensor>& xs, std::vector<Tensor>& ys, Cache& cache) {
        cache.x = xs;
        cache.conv_out.resize(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) conv(xs[i], cache.conv_out[i]);
        batch_norm_train_forward(cache.conv_out, gamma.tensor, beta.tensor, bn, ys, cache.bn);
    }

    void forward_infer(const Tensor& x, Tensor& y) const {
        Tensor c;
        conv(x, c);
        batch_norm_infer(c, gamma.tensor, beta.tensor, bn, y);
    }

    /// dys is the gradient at the BN output; dxs receives the gradient at the
    /// layer input. Parameter gradients accumulate.
    void backward(const Cache& cache, const std::vector<Tensor>& dys,
                  std::vector<Tensor>& dxs) {
        kernel.tensor.ensure_grad();
        gamma.tensor.ensure_grad();
        beta.tensor.ensure_grad();
        std::vector<Tensor> dconv;
        batch_norm_train_backward(cache.conv_out, cache.bn, gamma.tensor, dys, dconv,
                                  gamma.tensor.grad, beta.tensor.grad);
        dxs.resize(cache.x.size());
        for (std::size_t i = 0; i < cache.x.size(); ++i) {
            if (ksize == 3)
                conv2d_backward(cache.x[i], kernel.tensor, dconv[i], &dxs[i],
                                &kernel.tensor.grad);
            else
                conv1x1_backward(cache.x[i], kernel.tensor, dconv[i], &dxs[i],
                                 &kernel.tensor.grad);
        }
    }
};

// ---------------------------------------------------------------------------
// Residual blocks.
//
// LERes expansion (n -> 2n): both convolutions keep an equal channel width;
// the extra feature maps come from a depthwise 3x3 linear map of the first
// convolution's output, and the shortcut concatenates the block input with
// that same output instead of converting it with a third convolution.
//
// Equal-width blocks (n -> n) are plain two-conv residual blocks with an
// identity shortcut for both kinds.
//
// Standard expansion (n -> 2n) matches the shortcut dimensions with a 1x1
// convolution + BN.
// ---------------------------------------------------------------------------

struct BlockCache {
    ConvBn::Cache c1, c2, sc;
    std::vector<Tensor> bn1_out;  // pre-relu
    std::vector<Tensor> a;        // relu(BN1(conv1))
    std::vector<Tensor> pre_act;  // v + shortcut, before the closing activation
    std::vector<Tensor> out;      // after the closing activation
};

namespace detail {

inline void apply_activation(Activation act, const Tensor& z, Tensor& y) {
    if (act == Activation::relu)
        relu_forward(z, y);
    else
        sigmoid_forward(z, y);
}

inline void activation_backward(Activation act, const Tensor& z, const Tensor& y,
                                const Tensor& dy, Tensor& dz) {
    if (act == Activation::relu)
        relu_backward(z, dy, dz);
    else
        sigmoid_backward(y, dy, dz);
}

}  // namespace detail

struct LeResExpandBlock {
    int n = 0;
    ConvBn conv1;      // n -> n
    Parameter ghost;   // depthwise (n,3,3)
    ConvBn conv2;      // 2n -> 2n

    LeResExpandBlock() = default;
    LeResExpandBlock(int n_in, const std::string& name)
        : n(n_in),
          conv1(n_in, n_in, 3, name + ".conv1"),
          ghost(Shape{n_in, 3, 3}, ParamGroup::backbone, name + ".ghost"),
          conv2(2 * n_in, 2 * n_in, 3, name + ".conv2") {}

    void init(Rng& rng) {
        conv1.init(rng);
        const float bound = std::sqrt(6.0f / 9.0f);
        for (float& v : ghost.tensor.data) v = rng.uniform(-bound, bound);
        conv2.init(rng);
    }

    std::int64_t param_count() const {
        return conv1.param_count() + ghost.tensor.numel() + conv2.param_count();
    }

    void collect(std::vector<Parameter*>& out) {
        conv1.collect(out);
        out.push_back(&ghost);
        conv2.collect(out);
    }

    void forward_train(const std::vector<Tensor>& xs, Activation act, BlockCache& cache) {
        conv1.forward_train(xs, cache.bn1_out, cache.c1);
        const std::size_t nb = xs.size();
        cache.a.resize(nb);
        std::vector<Tensor> u(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            relu_forward(cache.bn1_out[i], cache.a[i]);
            Tensor g;
            depthwise3x3_forward(cache.a[i], ghost.tensor, g);
            concat_channels(cache.a[i], g, u[i]);
        }
        std::vector<Tensor> v;
        conv2.forward_train(u, v, cache.c2);
        cache.pre_act.resize(nb);
        cache.out.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            Tensor s;
            concat_channels(xs[i], cache.a[i], s);
            add_forward(v[i], s, cache.pre_act[i]);
            detail::apply_activation(act, cache.pre_act[i], cache.out[i]);
        }
    }

    void forward_infer(const Tensor& x, Activation act, Tensor& y) const {
        Tensor bn1, a, g, u, v, s, z;
        conv1.forward_infer(x, bn1);
        relu_forward(bn1, a);
        depthwise3x3_forward(a, ghost.tensor, g);
        concat_channels(a, g, u);
        conv2.forward_infer(u, v);
        concat_channels(x, a, s);
        add_forward(v, s, z);
        detail::apply_activation(act, z, y);
    }

    void backward(const BlockCache& cache, Activation act, const std::vector<Tensor>& dys,
                  std::vector<Tensor>& dxs) {
        ghost.tensor.ensure_grad();
        const std::size_t nb = dys.size();
        std::vector<Tensor> dv(nb);
        std::vector<Tensor> dx_short(nb), da(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            Tensor dz;
            detail::activation_backward(act, cache.pre_act[i], cache.out[i], dys[i], dz);
            dv[i] = dz;  // add node: both branches get dz
            concat_channels_backward(dz, n, dx_short[i], da[i]);
        }
        std::vector<Tensor> du;
        conv2.backward(cache.c2, dv, du);
        std::vector<Tensor> dbn1(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            Tensor da_c2, dg;
            concat_channels_backward(du[i], n, da_c2, dg);
            Tensor da_ghost;
            depthwise3x3_backward(cache.a[i], ghost.tensor, dg, &da_ghost, &ghost.tensor.grad);
            // three consumers of a: shortcut concat, conv2 input, ghost input
            for (std::size_t j = 0; j < da[i].data.size(); ++j)
                da[i].data[j] += da_c2.data[j] + da_ghost.data[j];
            relu_backward(cache.bn1_out[i], da[i], dbn1[i]);
        }
        std::vector<Tensor> dx_c1;
        conv1.backward(cache.c1, dbn1, dx_c1);
        dxs.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            dxs[i] = dx_c1[i];
            for (std::size_t j = 0; j < dxs[i].data.size(); ++j)
                dxs[i].data[j] += dx_short[i].data[j];
        }
    }
};

struct EqualResBlock {
    int n = 0;
    ConvBn conv1, conv2;  // both n -> n

    EqualResBlock() = default;
    EqualResBlock(int n_in, const std::string& name)
        : n(n_in), conv1(n_in, n_in, 3, name + ".conv1"), conv2(n_in, n_in, 3, name + ".conv2") {}

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
    }

    std::int64_t param_count() const { return conv1.param_count() + conv2.param_count(); }

    void collect(std::vector<Parameter*>& out) {
        conv1.collect(out);
        conv2.collect(out);
    }

    void forward_train(const std::vector<Tensor>& xs, Activation act, BlockCache& cache) {
        conv1.forward_train(xs, cache.bn1_out, cache.c1);
        const std::size_t nb = xs.size();
        cache.a.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) relu_forward(cache.bn1_out[i], cache.a[i]);
        std::vector<Tensor> v;
        conv2.forward_train(cache.a, v, cache.c2);
        cache.pre_act.resize(nb);
        cache.out.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            add_forward(v[i], xs[i], cache.pre_act[i]);
            detail::apply_activation(act, cache.pre_act[i], cache.out[i]);
        }
    }

    void forward_infer(const Tensor& x, Activation act, Tensor& y) const {
        Tensor bn1, a, v, z;
        conv1.forward_infer(x, bn1);
        relu_forward(bn1, a);
        conv2.forward_infer(a, v);
        add_forward(v, x, z);
        detail::apply_activation(act, z, y);
    }

    void backward(const BlockCache& cache, Activation act, const std::vector<Tensor>& dys,
                  std::vector<Tensor>& dxs) {
        const std::size_t nb = dys.size();
        std::vector<Tensor> dv(nb);
        dxs.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            Tensor dz;
            detail::activation_backward(act, cache.pre_act[i], cache.out[i], dys[i], dz);
            dv[i] = dz;
            dxs[i] = dz;  // identity shortcut
        }
        std::vector<Tensor> da;
        conv2.backward(cache.c2, dv, da);
        std::vector<Tensor> dbn1(nb);
        for (std::size_t i = 0; i < nb; ++i) relu_backward(cache.bn1_out[i], da[i], dbn1[i]);
        std::vector<Tensor> dx_c1;
        conv1.backward(cache.c1, dbn1, dx_c1);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j < dxs[i].data.size(); ++j)
                dxs[i].data[j] += dx_c1[i].data[j];
    }
};

struct ResExpandBlock {
    int n = 0;
    ConvBn conv1;     // n -> 2n
    ConvBn conv2;     // 2n -> 2n
    ConvBn shortcut;  // 1x1, n -> 2n

    ResExpandBlock() = default;
    ResExpandBlock(int n_in, const std::string& name)
        : n(n_in),
          conv1(n_in, 2 * n_in, 3, name + ".conv1"),
          conv2(2 * n_in, 2 * n_in, 3, name + ".conv2"),
          shortcut(n_in, 2 * n_in, 1, name + ".shortcut") {}

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        shortcut.init(rng);
    }

    std::int64_t param_count() const {
        return conv1.param_count() + conv2.param_count() + shortcut.param_count();
    }

    void collect(std::vector<Parameter*>& out) {
        conv1.collect(out);
        conv2.collect(out);
        shortcut.collect(out);
    }

    void forward_train(const std::vector<Tensor>& xs, Activation act, BlockCache& cache) {
        conv1.forward_train(xs, cache.bn1_out, cache.c1);
        const std::size_t nb = xs.size();
        cache.a.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) relu_forward(cache.bn1_out[i], cache.a[i]);
        std::vector<Tensor> v;
        conv2.forward_train(cache.a, v, cache.c2);
        std::vector<Tensor> s;
        shortcut.forward_train(xs, s, cache.sc);
        cache.pre_act.resize(nb);
        cache.out.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            add_forward(v[i], s[i], cache.pre_act[i]);
            detail::apply_activation(act, cache.pre_act[i], cache.out[i]);
        }
    }

    void forward_infer(const Tensor& x, Activation act, Tensor& y) const {
        Tensor bn1, a, v, s, z;
        conv1.forward_infer(x, bn1);
        relu_forward(bn1, a);
        conv2.forward_infer(a, v);
        shortcut.forward_infer(x, s);
        add_forward(v, s, z);
        detail::apply_activation(act, z, y);
    }

    void backward(const BlockCache& cache, Activation act, const std::vector<Tensor>& dys,
                  std::vector<Tensor>& dxs) {
        const std::size_t nb = dys.size();
        std::vector<Tensor> dz(nb);
        for (std::size_t i = 0; i < nb; ++i)
            detail::activation_backward(act, cache.pre_act[i], cache.out[i], dys[i], dz[i]);
        std::vector<Tensor> dx_sc;
        shortcut.backward(cache.sc, dz, dx_sc);
        std::vector<Tensor> da;
        conv2.backward(cache.c2, dz, da);
        std::vector<Tensor> dbn1(nb);
        for (std::size_t i = 0; i < nb; ++i) relu_backward(cache.bn1_out[i], da[i], dbn1[i]);
        conv1.backward(cache.c1, dbn1, dxs);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j < dxs[i].data.size(); ++j)
                dxs[i].data[j] += dx_sc[i].data[j];
    }
};

using Block = std::variant<LeResExpandBlock, EqualResBlock, ResExpandBlock>;

// ---------------------------------------------------------------------------
// Backbone: stem Conv3x3+BN (+relu) followed by the configured blocks. The
// closing activation of the last block is the configured final activation;
// every other activation is relu. All feature maps keep the input's spatial
// dims (fully padded convolutions, stride 1).
// ---------------------------------------------------------------------------

struct BackboneCache {
    std::vector<Tensor> stem_bn_out;
    std::vector<Tensor> stem_act;
    ConvBn::Cache stem;
    std::vector<BlockCache> blocks;
};

struct Backbone {
    BackboneConfig config;
    ConvBn stem;
    std::vector<Block> blocks;

    Backbone() = default;

    explicit Backbone(BackboneConfig cfg) : config(std::move(cfg)) {
        config.validate();
        stem = ConvBn(config.input_channels, config.stem_channels, 3, "stem");
        for (std::size_t i = 0; i < config.blocks.size(); ++i) {
            const BlockSpec& spec = config.blocks[i];
            const std::string name = "block" + std::to_string(i);
            if (spec.out_channels == spec.in_channels) {
                blocks.emplace_back(EqualResBlock(spec.in_channels, name));
            } else if (spec.kind == BlockKind::leres) {
                blocks.emplace_back(LeResExpandBlock(spec.in_channels, name));
            } else {
                blocks.emplace_back(ResExpandBlock(spec.in_channels, name));
            }
        }
    }

    void init(Rng& rng) {
        stem.init(rng);
        for (Block& b : blocks)
            std::visit([&](auto& blk) { blk.init(rng); }, b);
    }

    void collect(std::vector<Parameter*>& out) {
        stem.collect(out);
        for (Block& b : blocks)
            std::visit([&](auto& blk) { blk.collect(out); }, b);
    }

    std::int64_t param_count() const {
        std::int64_t total = stem.param_count();
        for (const Block& b : blocks)
            total += std::visit([](const auto& blk) { return blk.param_count(); }, b);
        return total;
    }

    /// Running totals per layer, Table-style: stem first, then each block.
    std::vector<std::int64_t> cumulative_param_counts() const {
        std::vector<std::int64_t> out;
        std::int64_t acc = stem.param_count();
        out.push_back(acc);
        for (const Block& b : blocks) {
            acc += std::visit([](const auto& blk) { return blk.param_count(); }, b);
            out.push_back(acc);
        }
        return out;
    }

    Activation block_activation(std::size_t i) const {
        return (i + 1 == blocks.size()) ? config.final_activation : Activation::relu;
    }

    Tensor forward_infer(const Tensor& x) const {
        require_shape(x, {config.input_channels, config.height, config.width},
                      "backbone input");
        Tensor cur, next;
        stem.forward_infer(x, cur);
        Tensor stem_act;
        if (blocks.empty())
            detail::apply_activation(config.final_activation, cur, stem_act);
        else
            relu_forward(cur, stem_act);
        cur = std::move(stem_act);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const Activation act = block_activation(i);
            std::visit([&](const auto& blk) { blk.forward_infer(cur, act, next); }, blocks[i]);
            cur = std::move(next);
        }
        return cur;
    }

    void forward_train(const std::vector<Tensor>& xs, std::vector<Tensor>& latents,
                       BackboneCache& cache) {
        for (const Tensor& x : xs)
            require_shape(x, {config.input_channels, config.height, config.width},
                          "backbone input");
        stem.forward_train(xs, cache.stem_bn_out, cache.stem);
        cache.stem_act.resize(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (blocks.empty())
                detail::apply_activation(config.final_activation, cache.stem_bn_out[i],
                                         cache.stem_act[i]);
            else
                relu_forward(cache.stem_bn_out[i], cache.stem_act[i]);
        }
        cache.blocks.assign(blocks.size(), BlockCache{});
        const std::vector<Tensor>* cur = &cache.stem_act;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const Activation act = block_activation(i);
            std::visit([&](auto& blk) { blk.forward_train(*cur, act, cache.blocks[i]); },
                       blocks[i]);
            cur = &cache.blocks[i].out;
        }
        latents = *cur;
        for (const Tensor& t : latents) check_finite(t, "backbone latent");
    }

    /// Accumulates parameter gradients; input gradients are discarded (the
    /// encoded sample is not trainable).
    void backward(const BackboneCache& cache, const std::vector<Tensor>& dlatents) {
        std::vector<Tensor> d = dlatents;
        std::vector<Tensor> dprev;
        for (std::size_t i = blocks.size(); i-- > 0;) {
            const Activation act = block_activation(i);
            std::visit([&](auto& blk) { blk.backward(cache.blocks[i], act, d, dprev); },
                       blocks[i]);
            d = std::move(dprev);
        }
        // stem activation
        std::vector<Tensor> dstem(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (blocks.empty() && config.final_activation == Activation::sigmoid)
                sigmoid_backward(cache.stem_act[i], d[i], dstem[i]);
            else
                relu_backward(cache.stem_bn_out[i], d[i], dstem[i]);
        }
        std::vector<Tensor> dx;
        stem.backward(cache.stem, dstem, dx);
    }
};

}  // namespace lexnet
