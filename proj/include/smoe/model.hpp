#pragma once

#include <cstdint>
#include <set>
#include <variant>
#include <vector>

#include "smoe/matrix.hpp"

namespace smoe {

// One expert: x -> w_out * relu(w_in * x), no biases.
// w_in is d_ff × d_model, w_out is d_model × d_ff.
struct ExpertWeights {
    Matrix w_in;
    Matrix w_out;
};

// One weight matrix approximated as u*v + s with pruned s columns.
// u is d_out × r (singular values absorbed), v is r × d_in,
// s_kept is d_out × |kept_cols|.
struct DecomposedPart {
    Matrix u;
    Matrix v;
    Matrix s_kept;
    std::vector<int> kept_cols;  // strictly increasing, subset of 0..d_in-1

    int d_out() const { return u.rows; }
    int d_in() const { return v.cols; }
    int rank() const { return v.rows; }
};

struct DecomposedExpert {
    DecomposedPart in;   // replaces w_in
    DecomposedPart out;  // replaces w_out
};

using ExpertSlot = std::variant<ExpertWeights, DecomposedExpert>;

bool is_dense(const ExpertSlot& slot);
// Dense d_ff×d_model / d_model×d_ff weights of a slot, reconstructing u*v + s
// for decomposed storage (pruned columns read back as zero).
ExpertWeights materialize(const ExpertSlot& slot);

struct SmoeLayer {
    Matrix router;                   // n_experts × d_model
    std::vector<ExpertSlot> experts; // storage slots
    std::vector<int> redirect;       // original expert index -> storage slot
    std::vector<uint8_t> active;     // original expert index routable? (one-shot pruning)

    int n_experts() const { return router.rows; }
};

struct ModelManifest {
    int d_model = 0;
    int d_ff = 0;
    uint64_t backbone_params = 0;
    // When set, backbone_params is a dense-model total that still counts one
    // dense FFN per SMoE layer; those replaced FFNs are netted out by account().
    bool backbone_includes_dense_ffn = false;
    std::vector<SmoeLayer> layers;
    std::set<int> skip_layers;  // exempt from merging
    Matrix readout;             // optional task head, n_classes × d_model; empty if absent
};

// Throws std::runtime_error naming the first violated invariant.
void validate(const ModelManifest& m);

struct SizeReport {
    uint64_t total_params = 0;
    std::vector<uint64_t> per_layer_params;  // expert storage per layer
    uint64_t router_params = 0;
    uint64_t backbone_params = 0;  // after dense-FFN netting, if any
    uint64_t ffn_flops_per_token = 0;
};

// Shape-only view, enough for size/FLOPs accounting without tensor data.
struct SlotShape {
    bool dense = true;
    int rank = 0;
    int kept_in = 0;   // surviving s columns of the w_in part
    int kept_out = 0;  // surviving s columns of the w_out part
};

struct LayerShape {
    int n_experts = 0;
    std::vector<SlotShape> slots;
};

struct ModelShape {
    int d_model = 0;
    int d_ff = 0;
    uint64_t backbone_params = 0;
    bool backbone_includes_dense_ffn = false;
    std::vector<LayerShape> layers;
};

ModelShape shape_of(const ModelManifest& m);
uint64_t slot_params(const ModelShape& shape, const SlotShape& slot);
SizeReport account(const ModelShape& shape);
SizeReport account(const ModelManifest& m);

}  // namespace smoe
