#include "smoe/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smoe {

void validate_plan(const GroupingPlan& plan, const ModelManifest& m) {
    if (plan.dominant.size() != m.layers.size() || plan.labels.size() != m.layers.size())
        throw std::runtime_error("grouping plan: layer count mismatch");
    for (size_t t = 0; t < m.layers.size(); ++t) {
        const int n = m.layers[t].n_experts();
        const auto& dom = plan.dominant[t];
        const auto& lab = plan.labels[t];
        if (dom.empty()) throw std::runtime_error("grouping plan: layer without dominant expert");
        if (static_cast<int>(lab.size()) != n)
            throw std::runtime_error("grouping plan: label count != expert count");
        std::set<int> dset(dom.begin(), dom.end());
        if (dset.size() != dom.size()) throw std::runtime_error("grouping plan: duplicate dominant");
        for (int d : dom) {
            if (d < 0 || d >= n) throw std::runtime_error("grouping plan: dominant out of range");
            if (lab[d] != d) throw std::runtime_error("grouping plan: dominant not self-labeled");
        }
        for (int l : lab)
            if (!dset.count(l)) throw std::runtime_error("grouping plan: label target not dominant");
    }
}

std::vector<std::vector<double>> normalize_frequencies(
    const std::vector<std::vector<double>>& freqs) {
    std::vector<std::vector<double>> out;
    out.reserve(freqs.size());
    for (const auto& layer : freqs) {
        double mx = 0.0;
        for (double f : layer) mx = std::max(mx, f);
        if (mx <= 0.0) throw std::runtime_error("normalize_frequencies: all-zero layer");
        std::vector<double> norm(layer.size());
        for (size_t i = 0; i < layer.size(); ++i) norm[i] = layer[i] / mx;
        out.push_back(std::move(norm));
    }
    return out;
}

std::vector<std::vector<int>> select_dominant(const std::vector<std::vector<double>>& a_norm,
                                              int k_total, const std::set<int>& skip) {
    const int n_layers = static_cast<int>(a_norm.size());
    std::vector<std::vector<int>> dominant(n_layers);

    int non_skipped = 0;
    int capacity = 0;
    for (int t = 0; t < n_layers; ++t) {
        if (skip.count(t)) {
            dominant[t].resize(a_norm[t].size());
            for (size_t i = 0; i < a_norm[t].size(); ++i) dominant[t][i] = static_cast<int>(i);
        } else {
            ++non_skipped;
            capacity += static_cast<int>(a_norm[t].size());
        }
    }
    if (k_total < non_skipped || k_total > capacity)
        throw std::invalid_argument("select_dominant: infeasible budget");

    // Reserve the per-layer argmax so no layer can be starved by ties.
    std::vector<std::set<int>> chosen(n_layers);
    for (int t = 0; t < n_layers; ++t) {
        if (skip.count(t)) continue;
        int best = 0;
        for (size_t i = 1; i < a_norm[t].size(); ++i)
            if (a_norm[t][i] > a_norm[t][best]) best = static_cast<int>(i);
        chosen[t].insert(best);
    }

    struct Entry {
        double freq;
        int layer;
        int expert;
    };
    std::vector<Entry> pool;
    for (int t = 0; t < n_layers; ++t) {
        if (skip.count(t)) continue;
        for (size_t i = 0; i < a_norm[t].size(); ++i)
            if (!chosen[t].count(static_cast<int>(i)))
                pool.push_back({a_norm[t][i], t, static_cast<int>(i)});
    }
    std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
        if (a.freq != b.freq) return a.freq > b.freq;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.expert < b.expert;
    });
    int remaining = k_total - non_skipped;
    for (const Entry& e : pool) {
        if (remaining == 0) break;
        chosen[e.layer].insert(e.expert);
        --remaining;
    }
    for (int t = 0; t < n_layers; ++t)
        if (!skip.count(t)) dominant[t].assign(chosen[t].begin(), chosen[t].end());
    return dominant;
}

GroupingContext build_grouping_context(const ModelManifest& m, const RoutingStats& stats,
                                       const TokenBatch& batch, const GroupingContextOptions& opts) {
    GroupingContext ctx;
    ctx.model = &m;
    ctx.stats = &stats;
    ctx.seed = opts.seed;
    if (!opts.need_features && !opts.need_grads) return ctx;

    const ForwardCapture cap = model_forward(m, batch.embeddings);
    if (opts.need_features) {
        for (size_t t = 0; t < m.layers.size(); ++t) {
            const int n = m.layers[t].n_experts();
            std::vector<std::vector<double>> sum(n, std::vector<double>(m.d_model, 0.0));
            std::vector<std::vector<double>> sum_abs(n, std::vector<double>(m.d_model, 0.0));
            std::vector<int> count(n, 0);
            const Matrix& x = cap.layer_inputs[t];
            for (int tok = 0; tok < x.rows; ++tok) {
                const int e = cap.assignment[t][tok];
                ++count[e];
                for (int j = 0; j < m.d_model; ++j) {
                    sum[e][j] += x.at(tok, j);
                    sum_abs[e][j] += std::abs(x.at(tok, j));
                }
            }
            std::vector<std::vector<float>> mean(n), mean_abs(n);
            for (int e = 0; e < n; ++e) {
                mean[e].assign(m.d_model, 0.0f);
                mean_abs[e].assign(m.d_model, 0.0f);
                if (count[e] > 0) {
                    for (int j = 0; j < m.d_model; ++j) {
                        mean[e][j] = static_cast<float>(sum[e][j] / count[e]);
                        mean_abs[e][j] = static_cast<float>(sum_abs[e][j] / count[e]);
                    }
                }
            }
            ctx.mean_features.push_back(std::move(mean));
            ctx.mean_abs_features.push_back(std::move(mean_abs));
        }
    }
    if (opts.need_grads) {
        if (m.readout.empty())
            throw std::runtime_error("build_grouping_context: gradients need a readout head");
        const Matrix logits = task_logits(m, cap.output);
        // Teacher = the model itself, so only the task term drives these grads.
        const Matrix d_logits =
            loss_grad_logits(logits, logits, batch.labels, opts.kd_alpha, opts.kd_temperature);
        const Matrix d_y = matmul(d_logits, m.readout);
        const ModelGrads grads = model_backward(m, cap, d_y);
        for (size_t t = 0; t < m.layers.size(); ++t) {
            std::vector<FfnGrads> per_expert;
            for (int e = 0; e < m.layers[t].n_experts(); ++e)
                per_expert.push_back(grads.experts[t][m.layers[t].redirect[e]]);
            ctx.grads.push_back(std::move(per_expert));
        }
        ctx.has_grads = true;
    }
    return ctx;
}

namespace {

std::vector<float> representation(const std::string& method, const GroupingContext& ctx, int layer,
                                  int expert) {
    const ModelManifest& m = *ctx.model;
    const SmoeLayer& l = m.layers[layer];
    if (method == "random") {
        Rng rng(ctx.seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(layer + 1)) ^
                (0xBF58476D1CE4E5B9ull * static_cast<uint64_t>(expert + 1)));
        std::vector<float> rep(64);
        for (float& v : rep) v = static_cast<float>(rng.gaussian());
        return rep;
    }
    if (method == "expert-weight" || method == "expert-weight-feature") {
        const ExpertWeights w = materialize(l.experts[l.redirect[expert]]);
        std::vector<float> rep;
        rep.reserve(w.w_in.size() + w.w_out.size());
        rep.insert(rep.end(), w.w_in.data.begin(), w.w_in.data.end());
        rep.insert(rep.end(), w.w_out.data.begin(), w.w_out.data.end());
        if (method == "expert-weight-feature") {
            if (ctx.mean_features.empty())
                throw std::invalid_argument("expert_similarity: features missing from context");
            const float scale =
                static_cast<float>(norm(std::span<const float>(ctx.mean_features[layer][expert])));
            for (float& v : rep) v *= scale;
        }
        return rep;
    }
    if (method == "expert-gradient") {
        if (!ctx.has_grads)
            throw std::invalid_argument("expert_similarity: gradients missing from context");
        const FfnGrads& g = ctx.grads[layer][expert];
        std::vector<float> rep;
        rep.reserve(g.d_w_in.size() + g.d_w_out.size());
        rep.insert(rep.end(), g.d_w_in.data.begin(), g.d_w_in.data.end());
        rep.insert(rep.end(), g.d_w_out.data.begin(), g.d_w_out.data.end());
        return rep;
    }
    if (method == "expert-feature") {
        if (ctx.mean_features.empty())
            throw std::invalid_argument("expert_similarity: features missing from context");
        return ctx.mean_features[layer][expert];
    }
    if (method == "expert-feature.abs") {
        if (ctx.mean_abs_features.empty())
            throw std::invalid_argument("expert_similarity: features missing from context");
        return ctx.mean_abs_features[layer][expert];
    }
    if (method == "router-weight") {
        const auto row = l.router.row(expert);
        return {row.begin(), row.end()};
    }
    if (method == "router-logits") {
        if (ctx.stats == nullptr || ctx.stats->logits.empty())
            throw std::invalid_argument("expert_similarity: router logits missing from context");
        const auto row = ctx.stats->logits[layer].row(expert);
        return {row.begin(), row.end()};
    }
    throw std::invalid_argument("expert_similarity: unknown method '" + method + "'");
}

}  // namespace

double expert_similarity(const std::string& method, const GroupingContext& ctx, int layer, int i,
                         int j) {
    const std::vector<float> ri = representation(method, ctx, layer, i);
    const std::vector<float> rj = representation(method, ctx, layer, j);
    return cosine(ri, rj);
}

std::vector<int> assign_groups(const std::string& method, const GroupingContext& ctx, int layer,
                               const std::vector<int>& dominant) {
    if (dominant.empty()) throw std::invalid_argument("assign_groups: no dominant experts");
    const int n = ctx.model->layers[layer].n_experts();
    std::set<int> dset(dominant.begin(), dominant.end());

    // Cache representations once per expert.
    std::vector<std::vector<float>> reps(n);
    for (int e = 0; e < n; ++e) reps[e] = representation(method, ctx, layer, e);

    std::vector<int> labels(n);
    for (int e = 0; e < n; ++e) {
        if (dset.count(e)) {
            labels[e] = e;
            continue;
        }
        int best = dominant.front();
        double best_sim = cosine(reps[e], reps[best]);
        for (size_t k = 1; k < dominant.size(); ++k) {
            const double sim = cosine(reps[e], reps[dominant[k]]);
            if (sim > best_sim) {
                best_sim = sim;
                best = dominant[k];
            }
        }
        labels[e] = best;
    }
    return labels;
}

GroupingPlan make_grouping_plan(const GroupingContext& ctx, const std::string& method, int k_total,
                                const std::set<int>& skip) {
    const auto a_norm = normalize_frequencies(ctx.stats->frequencies);
    GroupingPlan plan;
    plan.method = method;
    plan.dominant = select_dominant(a_norm, k_total, skip);
    for (size_t t = 0; t < ctx.model->layers.size(); ++t)
        plan.labels.push_back(assign_groups(method, ctx, static_cast<int>(t), plan.dominant[t]));
    validate_plan(plan, *ctx.model);
    return plan;
}

}  // namespace smoe
