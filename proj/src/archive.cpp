#include "smoe/archive.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace smoe {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'M', 'A', 'F'};
constexpr uint32_t kVersion = 1;

uint64_t align8(uint64_t x) { return (x + 7) & ~7ull; }

struct TensorRef {
    std::string name;
    const Matrix* m;
};

void collect_tensors(const ModelManifest& m, std::vector<TensorRef>& out) {
    for (size_t t = 0; t < m.layers.size(); ++t) {
        const auto& layer = m.layers[t];
        const std::string base = "layers." + std::to_string(t);
        out.push_back({base + ".router", &layer.router});
        for (size_t s = 0; s < layer.experts.size(); ++s) {
            const std::string eb = base + ".experts." + std::to_string(s);
            if (is_dense(layer.experts[s])) {
                const auto& e = std::get<ExpertWeights>(layer.experts[s]);
                out.push_back({eb + ".w_in", &e.w_in});
                out.push_back({eb + ".w_out", &e.w_out});
            } else {
                const auto& d = std::get<DecomposedExpert>(layer.experts[s]);
                out.push_back({eb + ".u_in", &d.in.u});
                out.push_back({eb + ".v_in", &d.in.v});
                out.push_back({eb + ".s_in", &d.in.s_kept});
                out.push_back({eb + ".u_out", &d.out.u});
                out.push_back({eb + ".v_out", &d.out.v});
                out.push_back({eb + ".s_out", &d.out.s_kept});
            }
        }
    }
    if (!m.readout.empty()) out.push_back({"readout", &m.readout});
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_floats(std::ostream& os, const std::vector<float>& data) {
    // Little-endian float32, independent of host byte order.
    std::vector<unsigned char> buf(data.size() * 4);
    for (size_t i = 0; i < data.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        for (int k = 0; k < 4; ++k)
            buf[i * 4 + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Matrix parse_tensor(const std::vector<unsigned char>& blob, uint64_t offset, int rows, int cols,
                    const std::string& name) {
    if (rows < 0 || cols < 0) throw std::runtime_error("smaf: bad shape for tensor " + name);
    const uint64_t bytes = 4ull * rows * cols;
    if (offset % 8 != 0) throw std::runtime_error("smaf: unaligned offset for tensor " + name);
    if (offset + bytes > blob.size())
        throw std::runtime_error("smaf: data section truncated, missing tensor " + name);
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.data.size(); ++i) {
        uint32_t bits = 0;
        for (int k = 0; k < 4; ++k)
            bits |= static_cast<uint32_t>(blob[offset + i * 4 + k]) << (8 * k);
        std::memcpy(&m.data[i], &bits, 4);
    }
    return m;
}

}  // namespace

void write_model(const ModelManifest& m, const std::string& path) {
    validate(m);

    std::vector<TensorRef> tensors;
    collect_tensors(m, tensors);

    json header;
    header["d_model"] = m.d_model;
    header["d_ff"] = m.d_ff;
    header["backbone_params"] = m.backbone_params;
    header["backbone_includes_dense_ffn"] = m.backbone_includes_dense_ffn;
    header["skip_layers"] = std::vector<int>(m.skip_layers.begin(), m.skip_layers.end());
    header["has_readout"] = !m.readout.empty();

    json layers = json::array();
    for (const auto& layer : m.layers) {
        json jl;
        jl["redirect"] = layer.redirect;
        if (!layer.active.empty()) {
            std::vector<int> act(layer.active.begin(), layer.active.end());
            jl["active"] = act;
        }
        json slots = json::array();
        for (const auto& slot : layer.experts) {
            json js;
            if (is_dense(slot)) {
                js["kind"] = "dense";
            } else {
                const auto& d = std::get<DecomposedExpert>(slot);
                js["kind"] = "decomposed";
                js["rank"] = d.in.rank();
                js["kept_in"] = d.in.kept_cols;
                js["kept_out"] = d.out.kept_cols;
            }
            slots.push_back(js);
        }
        jl["experts"] = slots;
        layers.push_back(jl);
    }
    header["layers"] = layers;

    // Offsets are relative to the start of the data section, 8-byte aligned.
    json index = json::array();
    uint64_t cursor = 0;
    std::vector<uint64_t> offsets;
    for (const auto& t : tensors) {
        cursor = align8(cursor);
        offsets.push_back(cursor);
        json jt;
        jt["name"] = t.name;
        jt["rows"] = t.m->rows;
        jt["cols"] = t.m->cols;
        jt["offset"] = cursor;
        index.push_back(jt);
        cursor += 4ull * t.m->rows * t.m->cols;
    }
    header["tensors"] = index;

    std::string header_text = header.dump();
    // Pad with spaces so the data section starts on an 8-byte file offset.
    while ((16 + header_text.size()) % 8 != 0) header_text.push_back(' ');

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("smaf: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    uint64_t written = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
        while (written < offsets[i]) {
            os.put('\0');
            ++written;
        }
        write_floats(os, tensors[i].m->data);
        written += 4ull * tensors[i].m->data.size();
    }
    os.flush();
    if (!os) throw std::runtime_error("smaf: write failed for " + path);
}

ModelManifest read_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("smaf: cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("smaf: bad magic in " + path);
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("smaf: unsupported version " + std::to_string(version));
    const uint64_t header_len = read_u64(is);
    std::string header_text(header_len, '\0');
    is.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw std::runtime_error("smaf: truncated header in " + path);

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("smaf: malformed header JSON: ") + e.what());
    }

    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());

    std::map<std::string, Matrix> by_name;
    for (const auto& jt : header.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        by_name[name] = parse_tensor(blob, jt.at("offset").get<uint64_t>(),
                                     jt.at("rows").get<int>(), jt.at("cols").get<int>(), name);
    }
    auto take = [&](const std::string& name) -> Matrix {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("smaf: missing tensor " + name);
        Matrix m = std::move(it->second);
        by_name.erase(it);
        return m;
    };

    ModelManifest m;
    m.d_model = header.at("d_model").get<int>();
    m.d_ff = header.at("d_ff").get<int>();
    m.backbone_params = header.at("backbone_params").get<uint64_t>();
    m.backbone_includes_dense_ffn = header.value("backbone_includes_dense_ffn", false);
    for (int s : header.at("skip_layers")) m.skip_layers.insert(s);
    if (header.value("has_readout", false)) m.readout = take("readout");

    const auto& jlayers = header.at("layers");
    for (size_t t = 0; t < jlayers.size(); ++t) {
        const auto& jl = jlayers[t];
        SmoeLayer layer;
        const std::string base = "layers." + std::to_string(t);
        layer.router = take(base + ".router");
        layer.redirect = jl.at("redirect").get<std::vector<int>>();
        if (jl.contains("active")) {
            for (int a : jl.at("active")) layer.active.push_back(static_cast<uint8_t>(a != 0));
        }
        const auto& slots = jl.at("experts");
        for (size_t s = 0; s < slots.size(); ++s) {
            const std::string eb = base + ".experts." + std::to_string(s);
            const std::string kind = slots[s].at("kind").get<std::string>();
            if (kind == "dense") {
                ExpertWeights e;
                e.w_in = take(eb + ".w_in");
                e.w_out = take(eb + ".w_out");
                layer.experts.emplace_back(std::move(e));
            } else if (kind == "decomposed") {
                DecomposedExpert d;
                d.in.u = take(eb + ".u_in");
                d.in.v = take(eb + ".v_in");
                d.in.s_kept = take(eb + ".s_in");
                d.in.kept_cols = slots[s].at("kept_in").get<std::vector<int>>();
                d.out.u = take(eb + ".u_out");
                d.out.v = take(eb + ".v_out");
                d.out.s_kept = take(eb + ".s_out");
                d.out.kept_cols = slots[s].at("kept_out").get<std::vector<int>>();
                layer.experts.emplace_back(std::move(d));
            } else {
                throw std::runtime_error("smaf: unknown expert kind '" + kind + "'");
            }
        }
        m.layers.push_back(std::move(layer));
    }

    validate(m);
    return m;
}

}  // namespace smoe
