#include "smoe/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace smoe {

bool is_dense(const ExpertSlot& slot) { return std::holds_alternative<ExpertWeights>(slot); }

namespace {

Matrix materialize_part(const DecomposedPart& p) {
    Matrix w = matmul(p.u, p.v);
    for (int i = 0; i < p.s_kept.rows; ++i)
        for (size_t k = 0; k < p.kept_cols.size(); ++k)
            w.at(i, p.kept_cols[k]) += p.s_kept.at(i, static_cast<int>(k));
    return w;
}

void check(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error("model validation: " + what);
}

void validate_part(const DecomposedPart& p, int d_out, int d_in, const std::string& where) {
    check(p.u.rows == d_out && p.v.cols == d_in, where + ": factor shapes inconsistent");
    check(p.u.cols == p.v.rows && p.rank() >= 1, where + ": bad rank");
    check(p.s_kept.rows == d_out, where + ": s row count");
    check(p.s_kept.cols == static_cast<int>(p.kept_cols.size()), where + ": kept column count");
    int prev = -1;
    for (int c : p.kept_cols) {
        check(c > prev && c < d_in, where + ": kept columns not strictly increasing in range");
        prev = c;
    }
    check(all_finite(p.u) && all_finite(p.v) && all_finite(p.s_kept), where + ": non-finite values");
}

}  // namespace

ExpertWeights materialize(const ExpertSlot& slot) {
    if (is_dense(slot)) return std::get<ExpertWeights>(slot);
    const auto& d = std::get<DecomposedExpert>(slot);
    return {materialize_part(d.in), materialize_part(d.out)};
}

void validate(const ModelManifest& m) {
    check(m.d_model > 0 && m.d_ff > 0, "non-positive dimensions");
    for (int s : m.skip_layers)
        check(s >= 0 && s < static_cast<int>(m.layers.size()), "skip layer out of range");
    if (!m.readout.empty()) {
        check(m.readout.cols == m.d_model, "readout width != d_model");
        check(all_finite(m.readout), "readout non-finite");
    }
    if (m.backbone_includes_dense_ffn) {
        const uint64_t replaced =
            m.layers.size() * 2ull * static_cast<uint64_t>(m.d_model) * static_cast<uint64_t>(m.d_ff);
        check(m.backbone_params >= replaced, "backbone smaller than the dense FFNs it includes");
    }
    for (size_t t = 0; t < m.layers.size(); ++t) {
        const auto& layer = m.layers[t];
        const std::string where = "layer " + std::to_string(t);
        const int n = layer.n_experts();
        check(n >= 1, where + ": empty router");
        check(layer.router.cols == m.d_model, where + ": router width != d_model");
        check(all_finite(layer.router), where + ": router non-finite");
        check(static_cast<int>(layer.redirect.size()) == n, where + ": redirect length != router rows");
        check(layer.active.empty() || static_cast<int>(layer.active.size()) == n,
              where + ": active mask length");
        bool any_active = layer.active.empty();
        for (uint8_t a : layer.active) any_active = any_active || a;
        check(any_active, where + ": no routable expert");
        for (int r : layer.redirect)
            check(r >= 0 && r < static_cast<int>(layer.experts.size()),
                  where + ": redirect target is not a valid slot");
        for (size_t s = 0; s < layer.experts.size(); ++s) {
            const std::string slot_where = where + " slot " + std::to_string(s);
            if (is_dense(layer.experts[s])) {
                const auto& e = std::get<ExpertWeights>(layer.experts[s]);
                check(e.w_in.rows == m.d_ff && e.w_in.cols == m.d_model,
                      slot_where + ": w_in shape");
                check(e.w_out.rows == m.d_model && e.w_out.cols == m.d_ff,
                      slot_where + ": w_out shape");
                check(all_finite(e.w_in) && all_finite(e.w_out), slot_where + ": non-finite values");
            } else {
                const auto& d = std::get<DecomposedExpert>(layer.experts[s]);
                validate_part(d.in, m.d_ff, m.d_model, slot_where + " (in)");
                validate_part(d.out, m.d_model, m.d_ff, slot_where + " (out)");
            }
        }
    }
}

ModelShape shape_of(const ModelManifest& m) {
    ModelShape shape;
    shape.d_model = m.d_model;
    shape.d_ff = m.d_ff;
    shape.backbone_params = m.backbone_params;
    shape.backbone_includes_dense_ffn = m.backbone_includes_dense_ffn;
    for (const auto& layer : m.layers) {
        LayerShape ls;
        ls.n_experts = layer.n_experts();
        for (const auto& slot : layer.experts) {
            SlotShape ss;
            if (!is_dense(slot)) {
                const auto& d = std::get<DecomposedExpert>(slot);
                ss.dense = false;
                ss.rank = d.in.rank();
                ss.kept_in = static_cast<int>(d.in.kept_cols.size());
                ss.kept_out = static_cast<int>(d.out.kept_cols.size());
            }
            ls.slots.push_back(ss);
        }
        shape.layers.push_back(ls);
    }
    return shape;
}

uint64_t slot_params(const ModelShape& shape, const SlotShape& slot) {
    const uint64_t dm = shape.d_model, dff = shape.d_ff;
    if (slot.dense) return 2ull * dm * dff;
    const uint64_t r = slot.rank;
    // Per matrix: r*(d_in+d_out) factors plus the surviving s columns.
    const uint64_t in_part = r * (dm + dff) + dff * static_cast<uint64_t>(slot.kept_in);
    const uint64_t out_part = r * (dff + dm) + dm * static_cast<uint64_t>(slot.kept_out);
    return in_part + out_part;
}

namespace {

uint64_t slot_flops(const ModelShape& shape, const SlotShape& slot) {
    const uint64_t dm = shape.d_model, dff = shape.d_ff;
    if (slot.dense) return 4ull * dm * dff;  // two products, multiply-add counted as 2
    const uint64_t r = slot.rank;
    const uint64_t in_part = 2ull * r * (dm + dff) + 2ull * dff * static_cast<uint64_t>(slot.kept_in);
    const uint64_t out_part = 2ull * r * (dff + dm) + 2ull * dm * static_cast<uint64_t>(slot.kept_out);
    return in_part + out_part;
}

}  // namespace

SizeReport account(const ModelShape& shape) {
    SizeReport rep;
    uint64_t backbone = shape.backbone_params;
    if (shape.backbone_includes_dense_ffn) {
        const uint64_t replaced = shape.layers.size() * 2ull *
                                  static_cast<uint64_t>(shape.d_model) *
                                  static_cast<uint64_t>(shape.d_ff);
        backbone = backbone >= replaced ? backbone - replaced : 0;
    }
    rep.backbone_params = backbone;
    for (const auto& layer : shape.layers) {
        uint64_t experts = 0;
        uint64_t flops = 0;
        for (const auto& slot : layer.slots) {
            experts += slot_params(shape, slot);
            flops += slot_flops(shape, slot);
        }
        rep.per_layer_params.push_back(experts);
        rep.router_params += static_cast<uint64_t>(layer.n_experts) * shape.d_model;
        // Router cost plus the expected expert cost, uniform over storage slots.
        rep.ffn_flops_per_token += 2ull * layer.n_experts * shape.d_model;
        if (!layer.slots.empty()) rep.ffn_flops_per_token += flops / layer.slots.size();
    }
    rep.total_params = backbone + rep.router_params;
    for (uint64_t p : rep.per_layer_params) rep.total_params += p;
    return rep;
}

SizeReport account(const ModelManifest& m) { return account(shape_of(m)); }

}  // namespace smoe
