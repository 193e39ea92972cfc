#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexnet/tensor.hpp"

namespace lexnet {

enum class Direction { up, down };
enum class Transport { tcp, udp };

struct Packet {
    int size = 0;  // bytes, 0..65535
    Direction dir = Direction::up;
};

struct FlowRecord {
    std::string flow_id;
    std::string label;
    std::vector<Packet> packets;
    std::optional<Transport> transport;
};

inline constexpr int kMtsLength = 20;     // first 20 packets
inline constexpr int kMtsVars = 2;        // size, direction
inline constexpr int kSizeScale = 1500;   // Ethernet MTU; larger sizes clamp to 1.0

/// Encoded flow: grid (1, 20, 2), variable 0 = scaled size in [0,1],
/// variable 1 = direction in {-1,0,+1} with 0 marking padding.
struct MtsSample {
    Tensor grid;
    int label_id = -1;
    std::string flow_id;
};

struct LabelMap {
    std::vector<std::string> names;  // id -> name, sorted

    int id_of(const std::string& name) const {
        auto it = std::lower_bound(names.begin(), names.end(), name);
        if (it == names.end() || *it != name) return -1;
        return static_cast<int>(it - names.begin());
    }
    int size() const { return static_cast<int>(names.size()); }
};

struct DatasetSplit {
    std::vector<MtsSample> train;
    std::vector<MtsSample> test;
    LabelMap labels;
};

// ---------------------------------------------------------------------------
// Parsing. CSV schema: header `flow_id,label,sizes,dirs`, packet lists
// `;`-separated, direction tokens U/D. JSONL mirror: one object per line with
// fields flow_id, label, sizes:[int], dirs:["U"|"D"], optional transport.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline int parse_size(const std::string& tok, int line_no) {
    if (tok.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty size");
    for (char c : tok)
        if (c < '0' || c > '9')
            throw ParseError("line " + std::to_string(line_no) + ": non-numeric size '" + tok +
                             "'");
    long v = std::stol(tok);
    if (v > 65535)
        throw ParseError("line " + std::to_string(line_no) + ": size " + std::to_string(v) +
                         " exceeds 65535");
    return static_cast<int>(v);
}

inline Direction parse_dir(const std::string& tok, int line_no) {
    if (tok == "U") return Direction::up;
    if (tok == "D") return Direction::down;
    throw ParseError("line " + std::to_string(line_no) + ": unknown direction token '" + tok +
                     "' (want U or D)");
}

inline FlowRecord make_record(std::string flow_id, std::string label,
                              const std::vector<std::string>& sizes,
                              const std::vector<std::string>& dirs, int line_no) {
    if (sizes.size() != dirs.size())
        throw ParseError("line " + std::to_string(line_no) + ": " +
                         std::to_string(sizes.size()) + " sizes but " +
                         std::to_string(dirs.size()) + " dirs");
    if (sizes.empty() || (sizes.size() == 1 && sizes[0].empty()))
        throw ParseError("line " + std::to_string(line_no) + ": flow has no packets");
    FlowRecord rec;
    rec.flow_id = std::move(flow_id);
    rec.label = std::move(label);
    for (std::size_t i = 0; i < sizes.size(); ++i)
        rec.packets.push_back({parse_size(sizes[i], line_no), parse_dir(dirs[i], line_no)});
    return rec;
}

}  // namespace detail

inline std::vector<FlowRecord> parse_flows_csv(std::istream& in) {
    std::vector<FlowRecord> out;
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != "flow_id,label,sizes,dirs")
                throw ParseError("line 1: expected header 'flow_id,label,sizes,dirs', got '" +
                                 line + "'");
            saw_header = true;
            continue;
        }
        auto fields = detail::split(line, ',');
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 columns, got " +
                             std::to_string(fields.size()));
        out.push_back(detail::make_record(fields[0], fields[1], detail::split(fields[2], ';'),
                                          detail::split(fields[3], ';'), line_no));
    }
    return out;
}

inline std::vector<FlowRecord> parse_flows_jsonl(std::istream& in) {
    std::vector<FlowRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        if (!j.contains("flow_id") || !j.contains("label") || !j.contains("sizes") ||
            !j.contains("dirs"))
            throw ParseError("line " + std::to_string(line_no) +
                             ": missing one of flow_id/label/sizes/dirs");
        std::vector<std::string> sizes, dirs;
        for (const auto& v : j["sizes"]) sizes.push_back(std::to_string(v.get<long>()));
        for (const auto& v : j["dirs"]) dirs.push_back(v.get<std::string>());
        FlowRecord rec = detail::make_record(j["flow_id"].get<std::string>(),
                                             j["label"].get<std::string>(), sizes, dirs, line_no);
        if (j.contains("transport")) {
            const std::string t = j["transport"].get<std::string>();
            if (t == "tcp")
                rec.transport = Transport::tcp;
            else if (t == "udp")
                rec.transport = Transport::udp;
            else
                throw ParseError("line " + std::to_string(line_no) + ": unknown transport '" +
                                 t + "'");
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<FlowRecord> parse_flows_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open flow file: " + path);
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl")
        return parse_flows_jsonl(in);
    return parse_flows_csv(in);
}

inline void write_flows_csv(const std::vector<FlowRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write flow file: " + path);
    out << "flow_id,label,sizes,dirs\n";
    for (const FlowRecord& r : records) {
        out << r.flow_id << ',' << r.label << ',';
        for (std::size_t i = 0; i < r.packets.size(); ++i)
            out << (i ? ";" : "") << r.packets[i].size;
        out << ',';
        for (std::size_t i = 0; i < r.packets.size(); ++i)
            out << (i ? ";" : "") << (r.packets[i].dir == Direction::up ? "U" : "D");
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Encoding.
// ---------------------------------------------------------------------------

inline Tensor encode_grid(const FlowRecord& rec, int t_len = kMtsLength,
                          int size_scale = kSizeScale) {
    Tensor grid(Shape{1, t_len, kMtsVars});
    const int n = std::min<int>(static_cast<int>(rec.packets.size()), t_len);
    for (int i = 0; i < n; ++i) {
        const Packet& p = rec.packets[static_cast<std::size_t>(i)];
        grid.at(0, i, 0) =
            static_cast<float>(std::min(p.size, size_scale)) / static_cast<float>(size_scale);
        grid.at(0, i, 1) = p.dir == Direction::up ? 1.0f : -1.0f;
    }
    return grid;  // cells past the flow length stay (0,0)
}

inline MtsSample encode_flow(const FlowRecord& rec, const LabelMap& labels,
                             int t_len = kMtsLength, int size_scale = kSizeScale) {
    MtsSample s;
    s.grid = encode_grid(rec, t_len, size_scale);
    s.label_id = labels.id_of(rec.label);
    s.flow_id = rec.flow_id;
    return s;
}

inline LabelMap build_label_map(const std::vector<FlowRecord>& records) {
    std::set<std::string> names;
    for (const FlowRecord& r : records) names.insert(r.label);
    LabelMap m;
    m.names.assign(names.begin(), names.end());
    return m;
}

inline std::vector<MtsSample> encode_dataset(const std::vector<FlowRecord>& records,
                                             const LabelMap& labels) {
    std::vector<MtsSample> out;
    out.reserve(records.size());
    for (const FlowRecord& r : records) {
        MtsSample s = encode_flow(r, labels);
        if (s.label_id < 0) throw Error("label '" + r.label + "' missing from label map");
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic planted-signature corpus. Each class carries 1-3 markers, each
// at its own packet position: a size marker fixes the packet size to
// value +/- 2 (jitter scaled by the noise level), a direction marker fixes
// the direction. All other cells are background draws; background sizes
// avoid every class's size-marker band so marker cells stay discriminative.
// ---------------------------------------------------------------------------

enum class MarkerKind { size, dir };

/// Synthetic flows vary in length (12..20 packets); markers always sit below
/// the minimum length so every flow carries its class signature, while the
/// trailing cells flip between padding and traffic from flow to flow.
inline constexpr int kMinSynthLen = 12;

struct Marker {
    int pos = 0;
    MarkerKind kind = MarkerKind::size;
    int value = 0;  // size in bytes, or +1 up / -1 down
};

struct ClassSignature {
    std::string label;
    std::vector<Marker> markers;
};

struct SynthCorpus {
    std::vector<FlowRecord> records;
    std::vector<ClassSignature> signatures;
};

inline SynthCorpus synth_generate(int k_classes, const std::vector<int>& flows_per_class,
                                  double noise, std::uint64_t seed) {
    if (k_classes < 2) throw Error("synth_generate: need at least 2 classes");
    if (static_cast<int>(flows_per_class.size()) != k_classes)
        throw Error("synth_generate: flows_per_class length != k_classes");
    if (noise < 0.0 || noise > 1.0) throw Error("synth_generate: noise must be in [0,1]");

    SynthCorpus corpus;
    Rng sig_rng(derive_seed(seed, 1));

    // Marker size values live on a mid-range grid while background sizes are
    // drawn from the extremes, so a marker packet is both far from every
    // background value and the most stable content in its neighborhood.
    constexpr int kSizePalette = 16;
    auto palette_value = [](int slot) { return 500 + 32 * (slot % kSizePalette); };

    std::set<int> banned_sizes;
    for (int k = 0; k < k_classes; ++k) {
        ClassSignature sig;
        sig.label = "app" + std::to_string(k);
        std::set<int> used_pos;

        // primary signature: a class-distinctive packet, pinning both the
        // size and the direction at a class-derived position. Positions stay
        // below the minimum flow length so every flow carries its markers.
        const int p0 = k % kMinSynthLen;
        sig.markers.push_back({p0, MarkerKind::size, palette_value(k)});
        sig.markers.push_back({p0, MarkerKind::dir, (k / kMinSynthLen) % 2 == 0 ? 1 : -1});
        used_pos.insert(p0);

        if (sig_rng.unit() < 0.5f) {  // optional third marker
            Marker m;
            do {
                m.pos = static_cast<int>(sig_rng.bounded(kMinSynthLen));
            } while (used_pos.count(m.pos));
            used_pos.insert(m.pos);
            if (sig_rng.unit() < 0.5f) {
                m.kind = MarkerKind::size;
                m.value = palette_value(static_cast<int>(sig_rng.bounded(kSizePalette)));
            } else {
                m.kind = MarkerKind::dir;
                m.value = sig_rng.unit() < 0.5f ? 1 : -1;
            }
            sig.markers.push_back(m);
        }
        for (const Marker& m : sig.markers)
            if (m.kind == MarkerKind::size)
                for (int d = -40; d <= 40; ++d) banned_sizes.insert(m.value + d);
        corpus.signatures.push_back(std::move(sig));
    }

    Rng flow_rng(derive_seed(seed, 2));
    // Background sizes are bimodal extremes (tiny or MTU-sized packets), far
    // from every marker value and high-variance from flow to flow.
    auto background_size = [&]() {
        while (true) {
            const int s = flow_rng.unit() < 0.5f
                              ? 40 + static_cast<int>(flow_rng.bounded(41))     // 40..80
                              : 1420 + static_cast<int>(flow_rng.bounded(41));  // 1420..1460
            if (!banned_sizes.count(s)) return s;
        }
    };

    for (int k = 0; k < k_classes; ++k) {
        const ClassSignature& sig = corpus.signatures[static_cast<std::size_t>(k)];
        for (int f = 0; f < flows_per_class[static_cast<std::size_t>(k)]; ++f) {
            FlowRecord rec;
            rec.flow_id = "c" + std::to_string(k) + "-f" + std::to_string(f);
            rec.label = sig.label;
            const int flow_len =
                kMinSynthLen + static_cast<int>(flow_rng.bounded(kMtsLength - kMinSynthLen + 1));
            rec.packets.resize(static_cast<std::size_t>(flow_len));
            for (int pos = 0; pos < flow_len; ++pos) {
                rec.packets[static_cast<std::size_t>(pos)] = {
                    background_size(), flow_rng.unit() < 0.5f ? Direction::up : Direction::down};
            }
            for (const Marker& m : sig.markers) {
                Packet& p = rec.packets[static_cast<std::size_t>(m.pos)];
                if (m.kind == MarkerKind::size) {
                    int jitter = 0;
                    if (noise > 0.0 && flow_rng.unit() < noise)
                        jitter = static_cast<int>(flow_rng.bounded(5)) - 2;  // -2..2
                    p.size = std::clamp(m.value + jitter, 1, kSizeScale);
                } else {
                    p.dir = m.value > 0 ? Direction::up : Direction::down;
                }
            }
            corpus.records.push_back(std::move(rec));
        }
    }
    return corpus;
}

inline void write_signatures_jsonl(const std::vector<ClassSignature>& sigs,
                                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write signature file: " + path);
    for (const ClassSignature& s : sigs) {
        nlohmann::json j;
        j["class"] = s.label;
        j["markers"] = nlohmann::json::array();
        for (const Marker& m : s.markers) {
            nlohmann::json jm;
            jm["pos"] = m.pos;
            jm["kind"] = m.kind == MarkerKind::size ? "size" : "dir";
            if (m.kind == MarkerKind::size)
                jm["value"] = m.value;
            else
                jm["value"] = m.value > 0 ? "U" : "D";
            j["markers"].push_back(jm);
        }
        out << j.dump() << '\n';
    }
}

inline std::vector<ClassSignature> read_signatures_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open signature file: " + path);
    std::vector<ClassSignature> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ClassSignature s;
        s.label = j["class"].get<std::string>();
        for (const auto& jm : j["markers"]) {
            Marker m;
            m.pos = jm["pos"].get<int>();
            if (jm["kind"].get<std::string>() == "size") {
                m.kind = MarkerKind::size;
                m.value = jm["value"].get<int>();
            } else {
                m.kind = MarkerKind::dir;
                m.value = jm["value"].get<std::string>() == "U" ? 1 : -1;
            }
            s.markers.push_back(m);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified split: per-class shuffle, test fraction rounded per class,
// class proportions preserved. Deterministic under the seed.
// ---------------------------------------------------------------------------

struct RecordSplit {
    std::vector<FlowRecord> train;
    std::vector<FlowRecord> test;
};

inline RecordSplit stratified_split_records(const std::vector<FlowRecord>& records,
                                            double test_fraction, std::uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw Error("stratified_split: test_fraction must be in (0,1)");
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < records.size(); ++i) by_label[records[i].label].push_back(i);

    std::vector<char> is_test(records.size(), 0);
    std::uint64_t class_tag = 0;
    for (auto& [label, idxs] : by_label) {
        if (idxs.size() < 2)
            throw Error("stratified_split: class '" + label + "' has only " +
                        std::to_string(idxs.size()) + " record(s)");
        Rng rng(derive_seed(seed, 0x5eed0000ULL + class_tag++));
        std::vector<std::size_t> order = idxs;
        rng.shuffle(order);
        std::size_t n_test = static_cast<std::size_t>(
            std::llround(static_cast<double>(idxs.size()) * test_fraction));
        n_test = std::clamp<std::size_t>(n_test, 1, idxs.size() - 1);
        for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
    }

    RecordSplit out;
    for (std::size_t i = 0; i < records.size(); ++i)
        (is_test[i] ? out.test : out.train).push_back(records[i]);
    return out;
}

inline DatasetSplit stratified_split(const std::vector<FlowRecord>& records,
                                     double test_fraction, std::uint64_t seed) {
    RecordSplit rs = stratified_split_records(records, test_fraction, seed);
    DatasetSplit out;
    out.labels = build_label_map(records);
    out.train = encode_dataset(rs.train, out.labels);
    out.test = encode_dataset(rs.test, out.labels);
    return out;
}

}  // namespace lexnet
