#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "oracles.hpp"
#include "smoe/archive.hpp"
#include "smoe/model.hpp"
#include "smoe/runtime.hpp"

using namespace smoe;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

ModelManifest toy_model(uint64_t seed = 5) {
    ToySpec spec;
    spec.n_layers = 2;
    spec.n_experts = 4;
    spec.d_model = 8;
    spec.d_ff = 12;
    spec.n_tokens = 4;
    return gen_toy(seed, spec).first;
}

}  // namespace

TEST_CASE("smaf round-trip is bit-exact") {
    const ModelManifest m = toy_model();
    const auto path = temp_file("roundtrip.smaf");
    write_model(m, path.string());
    const ModelManifest r = read_model(path.string());

    REQUIRE(r.layers.size() == m.layers.size());
    CHECK(r.d_model == m.d_model);
    CHECK(r.d_ff == m.d_ff);
    CHECK(r.skip_layers == m.skip_layers);
    CHECK(r.readout.data == m.readout.data);
    for (size_t t = 0; t < m.layers.size(); ++t) {
        CHECK(r.layers[t].router.data == m.layers[t].router.data);
        CHECK(r.layers[t].redirect == m.layers[t].redirect);
        for (size_t s = 0; s < m.layers[t].experts.size(); ++s) {
            const auto& a = std::get<ExpertWeights>(m.layers[t].experts[s]);
            const auto& b = std::get<ExpertWeights>(r.layers[t].experts[s]);
            CHECK(a.w_in.data == b.w_in.data);
            CHECK(a.w_out.data == b.w_out.data);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("smaf round-trips decomposed experts and active masks") {
    ModelManifest m = toy_model();
    Rng rng(3);
    DecomposedExpert d;
    d.in.u = oracle::random_matrix(rng, m.d_ff, 2);
    d.in.v = oracle::random_matrix(rng, 2, m.d_model);
    d.in.kept_cols = {1, 4, 6};
    d.in.s_kept = oracle::random_matrix(rng, m.d_ff, 3);
    d.out.u = oracle::random_matrix(rng, m.d_model, 2);
    d.out.v = oracle::random_matrix(rng, 2, m.d_ff);
    d.out.kept_cols = {0, 5};
    d.out.s_kept = oracle::random_matrix(rng, m.d_model, 2);
    m.layers[1].experts[2] = d;
    m.layers[0].active.assign(m.layers[0].n_experts(), 1);
    m.layers[0].active[3] = 0;

    const auto path = temp_file("roundtrip_decomposed.smaf");
    write_model(m, path.string());
    const ModelManifest r = read_model(path.string());
    const auto& rd = std::get<DecomposedExpert>(r.layers[1].experts[2]);
    CHECK(rd.in.u.data == d.in.u.data);
    CHECK(rd.in.v.data == d.in.v.data);
    CHECK(rd.in.s_kept.data == d.in.s_kept.data);
    CHECK(rd.in.kept_cols == d.in.kept_cols);
    CHECK(rd.out.kept_cols == d.out.kept_cols);
    CHECK(r.layers[0].active == m.layers[0].active);
    std::filesystem::remove(path);
}

TEST_CASE("smaf header length field equals the JSON byte count") {
    const ModelManifest m = toy_model();
    const auto path = temp_file("header_len.smaf");
    write_model(m, path.string());

    std::ifstream is(path, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "SMAF");
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    CHECK(version == 1);
    uint64_t header_len = 0;
    is.read(reinterpret_cast<char*>(&header_len), 8);
    std::string header(header_len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(header_len));
    REQUIRE(is.good());
    bool parses_as_object = false;
    try {
        parses_as_object = nlohmann::json::parse(header).is_object();
    } catch (const nlohmann::json::exception&) {
    }
    CHECK(parses_as_object);
    CHECK((16 + header_len) % 8 == 0);  // data section starts aligned
    std::filesystem::remove(path);
}

TEST_CASE("smaf rejects corrupt magic") {
    const ModelManifest m = toy_model();
    const auto path = temp_file("bad_magic.smaf");
    write_model(m, path.string());
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_WITH_AS(read_model(path.string()), doctest::Contains("magic"),
                         std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("smaf names the missing tensor on truncation") {
    const ModelManifest m = toy_model();
    const auto path = temp_file("truncated.smaf");
    write_model(m, path.string());
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 64);
    try {
        read_model(path.string());
        FAIL("expected a truncation error");
    } catch (const std::runtime_error& e) {
        // The readout is the last tensor written, so it is the one cut off.
        CHECK(std::string(e.what()).find("missing tensor readout") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("validation rejects a redirect past the slot list") {
    ModelManifest m = toy_model();
    m.layers[0].redirect[1] = 99;
    CHECK_THROWS_WITH_AS(validate(m), doctest::Contains("redirect"), std::runtime_error);
}

TEST_CASE("account on the toy arithmetic example") {
    // 4 layers x 8 experts at d_model 16, d_ff 32.
    ModelShape shape;
    shape.d_model = 16;
    shape.d_ff = 32;
    for (int t = 0; t < 4; ++t) {
        LayerShape l;
        l.n_experts = 8;
        l.slots.assign(8, SlotShape{});
        shape.layers.push_back(l);
    }
    const SizeReport rep = account(shape);
    uint64_t experts = 0;
    for (uint64_t p : rep.per_layer_params) experts += p;
    CHECK(experts == 4ull * 8 * 2 * 16 * 32);  // 32768
    CHECK(rep.router_params == 4ull * 8 * 16);  // 512
    CHECK(rep.total_params == experts + rep.router_params);
}

TEST_CASE("account is additive in experts and ignores redirects") {
    ModelManifest m = toy_model();
    const SizeReport before = account(m);

    // Redirecting an expert without dropping storage changes nothing.
    ModelManifest redirected = m;
    redirected.layers[1].redirect[3] = 0;
    CHECK(account(redirected).total_params == before.total_params);

    // Dropping one stored expert removes exactly 2 * d_model * d_ff.
    ModelManifest dropped = m;
    dropped.layers[1].experts.pop_back();
    for (int& r : dropped.layers[1].redirect)
        if (r >= static_cast<int>(dropped.layers[1].experts.size())) r = 0;
    CHECK(before.total_params - account(dropped).total_params ==
          2ull * m.d_model * m.d_ff);
}

TEST_CASE("account nets out replaced dense FFNs when the backbone includes them") {
    ModelShape shape;
    shape.d_model = 16;
    shape.d_ff = 32;
    shape.backbone_params = 100000;
    LayerShape l;
    l.n_experts = 4;
    l.slots.assign(4, SlotShape{});
    shape.layers.assign(2, l);
    const uint64_t plain = account(shape).total_params;
    shape.backbone_includes_dense_ffn = true;
    const uint64_t netted = account(shape).total_params;
    CHECK(plain - netted == 2ull * 2 * 16 * 32);
}
