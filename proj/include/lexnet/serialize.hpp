#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lexnet/model.hpp"

namespace lexnet {

// ---------------------------------------------------------------------------
// CRC32 (IEEE), used as the model-file content checksum.
// ---------------------------------------------------------------------------

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t crc = 0xFFFFFFFFu) {
    const auto* p = static_cast<const unsigned char*>(data);
    const auto& table = crc32_table();
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc;
}

inline std::uint32_t crc32_final(std::uint32_t crc) { return crc ^ 0xFFFFFFFFu; }

// ---------------------------------------------------------------------------
// Binary writer/reader over a byte buffer. Floats are stored as raw IEEE
// bits, so a round trip reproduces bit-identical predictions.
// ---------------------------------------------------------------------------

namespace detail {

struct ByteWriter {
    std::string buf;

    void raw(const void* p, std::size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f32(float v) { raw(&v, 4); }
    void f32s(const std::vector<float>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(float));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void raw(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw IoError("model file truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        raw(&v, 4);
        return v;
    }
    float f32() {
        float v;
        raw(&v, 4);
        return v;
    }
    std::vector<float> f32s() {
        const std::uint64_t n = u64();
        if (pos + n * sizeof(float) > buf.size()) throw IoError("model file truncated");
        std::vector<float> v(n);
        raw(v.data(), n * sizeof(float));
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
};

inline void write_conv_bn(ByteWriter& w, const ConvBn& c) {
    w.f32s(c.kernel.tensor.data);
    w.f32s(c.gamma.tensor.data);
    w.f32s(c.beta.tensor.data);
    w.f32s(c.bn.running_mean);
    w.f32s(c.bn.running_var);
    w.u8(c.bn.initialized ? 1 : 0);
}

inline void read_conv_bn(ByteReader& r, ConvBn& c) {
    c.kernel.tensor.data = r.f32s();
    c.gamma.tensor.data = r.f32s();
    c.beta.tensor.data = r.f32s();
    c.bn.running_mean = r.f32s();
    c.bn.running_var = r.f32s();
    c.bn.initialized = r.u8() != 0;
    if (c.kernel.tensor.numel() != shape_numel(c.kernel.tensor.shape))
        throw IoError("model file: conv tensor size mismatch");
}

inline void write_train_config(ByteWriter& w, const TrainConfig& c) {
    w.i32(c.n_epochs_outer);
    w.i32(c.n_sgd);
    w.i32(c.n_last);
    w.i32(c.warmup_epochs);
    w.f32(c.lr_backbone);
    w.f32(c.lr_proto);
    w.f32(c.lr_last);
    w.f32(c.proto_l2);
    w.f32(c.cluster_cost);
    w.f32(c.separation_cost);
    w.i32(c.batch_size);
    w.i32(c.proto_cap_per_class);
    w.f32(static_cast<float>(c.growth_quantile));
    w.u64(c.seed);
}

inline TrainConfig read_train_config(ByteReader& r) {
    TrainConfig c;
    c.n_epochs_outer = r.i32();
    c.n_sgd = r.i32();
    c.n_last = r.i32();
    c.warmup_epochs = r.i32();
    c.lr_backbone = r.f32();
    c.lr_proto = r.f32();
    c.lr_last = r.f32();
    c.proto_l2 = r.f32();
    c.cluster_cost = r.f32();
    c.separation_cost = r.f32();
    c.batch_size = r.i32();
    c.proto_cap_per_class = r.i32();
    c.growth_quantile = r.f32();
    c.seed = r.u64();
    return c;
}

}  // namespace detail

inline constexpr char kModelMagic[4] = {'L', 'E', 'X', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string serialize_model(const LexNetModel& model) {
    detail::ByteWriter w;

    // backbone config
    const BackboneConfig& cfg = model.backbone.config;
    w.i32(cfg.input_channels);
    w.i32(cfg.height);
    w.i32(cfg.width);
    w.i32(cfg.stem_channels);
    w.u8(cfg.final_activation == Activation::sigmoid ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(cfg.blocks.size()));
    for (const BlockSpec& b : cfg.blocks) {
        w.i32(b.in_channels);
        w.i32(b.out_channels);
        w.u8(b.kind == BlockKind::leres ? 0 : 1);
    }

    // backbone tensors, structural order
    detail::write_conv_bn(w, model.backbone.stem);
    for (const Block& blk : model.backbone.blocks) {
        std::visit(
            [&](const auto& b) {
                using T = std::decay_t<decltype(b)>;
                if constexpr (std::is_same_v<T, LeResExpandBlock>) {
                    detail::write_conv_bn(w, b.conv1);
                    w.f32s(b.ghost.tensor.data);
                    detail::write_conv_bn(w, b.conv2);
                } else if constexpr (std::is_same_v<T, EqualResBlock>) {
                    detail::write_conv_bn(w, b.conv1);
                    detail::write_conv_bn(w, b.conv2);
                } else {
                    detail::write_conv_bn(w, b.conv1);
                    detail::write_conv_bn(w, b.conv2);
                    detail::write_conv_bn(w, b.shortcut);
                }
            },
            blk);
    }

    // prototypes with provenance
    w.i32(model.protos.depth);
    w.i32(model.protos.n_classes);
    w.i32(model.protos.next_id);
    w.u32(static_cast<std::uint32_t>(model.protos.protos.size()));
    for (const Prototype& p : model.protos.protos) {
        w.i32(p.id);
        w.i32(p.class_id);
        w.f32s(p.param.tensor.data);
        w.u8(p.provenance ? 1 : 0);
        if (p.provenance) {
            w.i32(p.provenance->sample_index);
            w.str(p.provenance->flow_id);
            w.i32(p.provenance->t);
            w.i32(p.provenance->v);
        }
    }

    // head
    w.i32(model.head.weight.tensor.shape[0]);
    w.i32(model.head.weight.tensor.shape[1]);
    w.f32s(model.head.weight.tensor.data);

    // labels + provenance
    w.u32(static_cast<std::uint32_t>(model.labels.size()));
    for (const std::string& s : model.labels) w.str(s);
    detail::write_train_config(w, model.train_snapshot);
    w.u8(model.trained ? 1 : 0);

    // container: magic, version, payload length, payload, checksum
    std::string out;
    out.append(kModelMagic, 4);
    detail::ByteWriter head;
    head.u32(kModelVersion);
    head.u64(w.buf.size());
    out += head.buf;
    out += w.buf;
    const std::uint32_t crc = crc32_final(crc32(w.buf.data(), w.buf.size()));
    out.append(reinterpret_cast<const char*>(&crc), 4);
    return out;
}

inline LexNetModel deserialize_model(const std::string& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
        throw IoError("not a model file (bad magic)");
    detail::ByteReader hdr(bytes);
    hdr.pos = 4;
    const std::uint32_t version = hdr.u32();
    if (version != kModelVersion)
        throw IoError("unsupported model file version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kModelVersion) + ")");
    const std::uint64_t payload_len = hdr.u64();
    if (bytes.size() != 16 + payload_len + 4) throw IoError("model file truncated");
    const std::string payload = bytes.substr(16, payload_len);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + 16 + payload_len, 4);
    const std::uint32_t actual_crc = crc32_final(crc32(payload.data(), payload.size()));
    if (stored_crc != actual_crc) throw IoError("model file checksum mismatch");

    detail::ByteReader r(payload);
    BackboneConfig cfg;
    cfg.input_channels = r.i32();
    cfg.height = r.i32();
    cfg.width = r.i32();
    cfg.stem_channels = r.i32();
    cfg.final_activation = r.u8() ? Activation::sigmoid : Activation::relu;
    const std::uint32_t n_blocks = r.u32();
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        BlockSpec b;
        b.in_channels = r.i32();
        b.out_channels = r.i32();
        b.kind = r.u8() == 0 ? BlockKind::leres : BlockKind::standard_res;
        cfg.blocks.push_back(b);
    }

    LexNetModel m;
    m.backbone = Backbone(cfg);
    detail::read_conv_bn(r, m.backbone.stem);
    for (Block& blk : m.backbone.blocks) {
        std::visit(
            [&](auto& b) {
                using T = std::decay_t<decltype(b)>;
                if constexpr (std::is_same_v<T, LeResExpandBlock>) {
                    detail::read_conv_bn(r, b.conv1);
                    b.ghost.tensor.data = r.f32s();
                    detail::read_conv_bn(r, b.conv2);
                } else if constexpr (std::is_same_v<T, EqualResBlock>) {
                    detail::read_conv_bn(r, b.conv1);
                    detail::read_conv_bn(r, b.conv2);
                } else {
                    detail::read_conv_bn(r, b.conv1);
                    detail::read_conv_bn(r, b.conv2);
                    detail::read_conv_bn(r, b.shortcut);
                }
            },
            blk);
    }

    const int depth = r.i32();
    const int n_classes = r.i32();
    m.protos = PrototypeSet(depth, n_classes);
    m.protos.next_id = r.i32();
    const std::uint32_t n_protos = r.u32();
    for (std::uint32_t i = 0; i < n_protos; ++i) {
        const int id = r.i32();
        const int cls = r.i32();
        Prototype p(id, cls, depth);
        p.param.tensor.data = r.f32s();
        if (static_cast<int>(p.param.tensor.data.size()) != depth)
            throw IoError("model file: prototype depth mismatch");
        if (r.u8()) {
            Provenance prov;
            prov.sample_index = r.i32();
            prov.flow_id = r.str();
            prov.t = r.i32();
            prov.v = r.i32();
            p.provenance = prov;
        }
        m.protos.protos.push_back(std::move(p));
    }

    const int kk = r.i32();
    const int mm = r.i32();
    m.head.weight = Parameter(Shape{kk, mm}, ParamGroup::last_layer, "head.weight");
    m.head.weight.tensor.data = r.f32s();
    if (m.head.weight.tensor.numel() != static_cast<std::int64_t>(kk) * mm)
        throw IoError("model file: head size mismatch");

    const std::uint32_t n_labels = r.u32();
    for (std::uint32_t i = 0; i < n_labels; ++i) m.labels.push_back(r.str());
    m.train_snapshot = detail::read_train_config(r);
    m.trained = r.u8() != 0;
    return m;
}

inline void save_model(const LexNetModel& model, const std::string& path) {
    const std::string bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to model file: " + path);
}

inline LexNetModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

/// CRC32 of a whole file; the determinism checks compare this across runs.
inline std::uint32_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::uint32_t crc = 0xFFFFFFFFu;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        crc = crc32(buf, static_cast<std::size_t>(in.gcount()), crc);
    }
    return crc32_final(crc);
}

}  // namespace lexnet
