#include "smoe/alignment.hpp"

#include <stdexcept>

namespace smoe {

Permutation weight_matching(const ExpertWeights& e, const ExpertWeights& e_ref) {
    if (!e.w_in.same_shape(e_ref.w_in) || !e.w_out.same_shape(e_ref.w_out))
        throw std::invalid_argument("weight_matching: expert shapes differ");
    Matrix score = matmul(e_ref.w_in, transpose(e.w_in));
    const Matrix out_score = matmul(transpose(e_ref.w_out), e.w_out);
    for (size_t i = 0; i < score.data.size(); ++i) score.data[i] += out_score.data[i];
    return solve_assignment(score);
}

ExpertWeights permute_expert(const ExpertWeights& e, const Permutation& p) {
    if (p.size() != e.w_in.rows)
        throw std::invalid_argument("permute_expert: permutation length != d_ff");
    if (!is_permutation(p)) throw std::invalid_argument("permute_expert: not a permutation");
    ExpertWeights out;
    out.w_in = Matrix(e.w_in.rows, e.w_in.cols);
    out.w_out = Matrix(e.w_out.rows, e.w_out.cols);
    for (int i = 0; i < e.w_in.rows; ++i) {
        const int src = p.mapping[i];
        for (int j = 0; j < e.w_in.cols; ++j) out.w_in.at(i, j) = e.w_in.at(src, j);
        for (int r = 0; r < e.w_out.rows; ++r) out.w_out.at(r, i) = e.w_out.at(r, src);
    }
    return out;
}

SmoeLayer align_layer(const SmoeLayer& layer, int reference_slot) {
    if (layer.experts.empty()) throw std::invalid_argument("align_layer: no experts");
    if (reference_slot < 0 || reference_slot >= static_cast<int>(layer.experts.size()))
        throw std::invalid_argument("align_layer: reference slot out of range");
    for (const auto& slot : layer.experts)
        if (!is_dense(slot)) throw std::invalid_argument("align_layer: decomposed experts cannot be aligned");

    SmoeLayer out = layer;
    const auto& ref = std::get<ExpertWeights>(layer.experts[reference_slot]);
    for (size_t s = 0; s < layer.experts.size(); ++s) {
        if (static_cast<int>(s) == reference_slot) continue;
        const auto& e = std::get<ExpertWeights>(layer.experts[s]);
        out.experts[s] = permute_expert(e, weight_matching(e, ref));
    }
    return out;
}

}  // namespace smoe
