#include "smoe/merging.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace smoe {

MergeStrategy parse_merge_strategy(const std::string& name) {
    if (name == "frequency") return MergeStrategy::frequency;
    if (name == "uniform") return MergeStrategy::uniform;
    if (name == "fisher") return MergeStrategy::fisher;
    throw std::invalid_argument("unknown merge strategy '" + name + "'");
}

namespace {

Matrix weighted_average(const std::vector<const Matrix*>& mats, const std::vector<double>& alpha) {
    Matrix out(mats[0]->rows, mats[0]->cols);
    for (size_t p = 0; p < out.data.size(); ++p) {
        double acc = 0.0;
        for (size_t i = 0; i < mats.size(); ++i)
            acc += alpha[i] * static_cast<double>(mats[i]->data[p]);
        out.data[p] = static_cast<float>(acc);
    }
    return out;
}

Matrix fisher_average(const std::vector<const Matrix*>& mats,
                      const std::vector<const Matrix*>& grads) {
    constexpr double eps = 1e-8;
    Matrix out(mats[0]->rows, mats[0]->cols);
    for (size_t p = 0; p < out.data.size(); ++p) {
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < mats.size(); ++i) {
            const double g = grads[i]->data[p];
            const double w = g * g + eps;
            num += w * static_cast<double>(mats[i]->data[p]);
            den += w;
        }
        out.data[p] = static_cast<float>(num / den);
    }
    return out;
}

}  // namespace

ExpertWeights merge_group(const std::vector<ExpertWeights>& experts,
                          const std::vector<double>& weights, MergeStrategy strategy,
                          const std::vector<FfnGrads>* grads) {
    if (experts.empty()) throw std::invalid_argument("merge_group: empty group");
    if (experts.size() == 1) return experts[0];
    for (const auto& e : experts)
        if (!e.w_in.same_shape(experts[0].w_in) || !e.w_out.same_shape(experts[0].w_out))
            throw std::invalid_argument("merge_group: mismatched expert shapes");

    const size_t k = experts.size();
    if (strategy == MergeStrategy::fisher) {
        if (grads == nullptr || grads->size() != k)
            throw std::invalid_argument("merge_group: fisher strategy needs per-expert grads");
        std::vector<const Matrix*> w_in(k), w_out(k), g_in(k), g_out(k);
        for (size_t i = 0; i < k; ++i) {
            w_in[i] = &experts[i].w_in;
            w_out[i] = &experts[i].w_out;
            g_in[i] = &(*grads)[i].d_w_in;
            g_out[i] = &(*grads)[i].d_w_out;
        }
        return {fisher_average(w_in, g_in), fisher_average(w_out, g_out)};
    }

    std::vector<double> alpha(k, 1.0);
    if (strategy == MergeStrategy::frequency) {
        if (weights.size() != k) throw std::invalid_argument("merge_group: weight count mismatch");
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw std::invalid_argument("merge_group: negative weight");
            sum += w;
        }
        if (sum <= 0.0) throw std::invalid_argument("merge_group: all-zero weights");
        for (size_t i = 0; i < k; ++i) alpha[i] = weights[i] / sum;
    } else {
        for (double& a : alpha) a = 1.0 / static_cast<double>(k);
    }

    std::vector<const Matrix*> w_in(k), w_out(k);
    for (size_t i = 0; i < k; ++i) {
        w_in[i] = &experts[i].w_in;
        w_out[i] = &experts[i].w_out;
    }
    return {weighted_average(w_in, alpha), weighted_average(w_out, alpha)};
}

ModelManifest merge_model(const ModelManifest& m, const GroupingPlan& plan,
                          const RoutingStats& stats, MergeStrategy strategy,
                          const GroupingContext* grad_ctx) {
    validate_plan(plan, m);
    if (stats.frequencies.size() != m.layers.size())
        throw std::invalid_argument("merge_model: stats/model layer mismatch");
    if (strategy == MergeStrategy::fisher && (grad_ctx == nullptr || !grad_ctx->has_grads))
        throw std::invalid_argument("merge_model: fisher strategy needs a gradient context");

    ModelManifest out;
    out.d_model = m.d_model;
    out.d_ff = m.d_ff;
    out.backbone_params = m.backbone_params;
    out.backbone_includes_dense_ffn = m.backbone_includes_dense_ffn;
    out.skip_layers = m.skip_layers;
    out.readout = m.readout;

    for (size_t t = 0; t < m.layers.size(); ++t) {
        const auto& layer = m.layers[t];
        const int n = layer.n_experts();
        SmoeLayer merged;
        merged.router = layer.router;
        merged.active = layer.active;
        merged.redirect.assign(n, 0);

        std::map<int, int> slot_of_dominant;
        for (int d : plan.dominant[t]) {
            std::vector<ExpertWeights> members;
            std::vector<double> alpha;
            std::vector<FfnGrads> member_grads;
            for (int i = 0; i < n; ++i) {
                if (plan.labels[t][i] != d) continue;
                members.push_back(materialize(layer.experts[layer.redirect[i]]));
                alpha.push_back(stats.frequencies[t][i]);
                if (strategy == MergeStrategy::fisher) member_grads.push_back(grad_ctx->grads[t][i]);
            }
            // A whole group can be inactive on the stats batch; Eq-style
            // frequency weighting is undefined there, fall back to uniform.
            MergeStrategy effective = strategy;
            if (strategy == MergeStrategy::frequency && members.size() > 1) {
                double sum = 0.0;
                for (double a : alpha) sum += a;
                if (sum <= 0.0) effective = MergeStrategy::uniform;
            }
            const int slot = static_cast<int>(merged.experts.size());
            merged.experts.emplace_back(merge_group(
                members, alpha, effective,
                strategy == MergeStrategy::fisher ? &member_grads : nullptr));
            slot_of_dominant[d] = slot;
        }
        for (int i = 0; i < n; ++i) merged.redirect[i] = slot_of_dominant.at(plan.labels[t][i]);
        out.layers.push_back(std::move(merged));
    }
    validate(out);
    return out;
}

ModelManifest prune_non_dominant(const ModelManifest& m,
                                 const std::vector<std::vector<int>>& dominant) {
    if (dominant.size() != m.layers.size())
        throw std::invalid_argument("prune_non_dominant: layer count mismatch");
    ModelManifest out;
    out.d_model = m.d_model;
    out.d_ff = m.d_ff;
    out.backbone_params = m.backbone_params;
    out.backbone_includes_dense_ffn = m.backbone_includes_dense_ffn;
    out.skip_layers = m.skip_layers;
    out.readout = m.readout;

    for (size_t t = 0; t < m.layers.size(); ++t) {
        const auto& layer = m.layers[t];
        if (dominant[t].empty()) throw std::invalid_argument("prune_non_dominant: empty dominant set");
        SmoeLayer pruned;
        pruned.router = layer.router;
        pruned.active.assign(layer.n_experts(), 0);
        pruned.redirect.assign(layer.n_experts(), 0);
        std::map<int, int> slot_of;
        for (int d : dominant[t]) {
            slot_of[d] = static_cast<int>(pruned.experts.size());
            pruned.experts.push_back(layer.experts[layer.redirect[d]]);
        }
        for (int i = 0; i < layer.n_experts(); ++i) {
            auto it = slot_of.find(i);
            if (it != slot_of.end()) {
                pruned.active[i] = 1;
                pruned.redirect[i] = it->second;
            } else {
                pruned.redirect[i] = slot_of.begin()->second;  // masked, never routed
            }
        }
        out.layers.push_back(std::move(pruned));
    }
    validate(out);
    return out;
}

}  // namespace smoe
