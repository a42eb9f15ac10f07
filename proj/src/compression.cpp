#include "smoe/compression.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "smoe/svd.hpp"

namespace smoe {

double stable_rank(const Matrix& w) {
    const double fro = frobenius_norm(w);
    if (fro <= 0.0) throw std::invalid_argument("stable_rank: zero matrix");
    const SvdResult dec = svd(w);
    const double s1 = dec.sigma[0];
    return (fro * fro) / (s1 * s1);
}

std::vector<double> stable_rank_report(const ModelManifest& before, const ModelManifest& after,
                                       const GroupingPlan& plan) {
    if (before.layers.size() != after.layers.size() || plan.dominant.size() != before.layers.size())
        throw std::invalid_argument("stable_rank_report: layer count mismatch");
    std::vector<double> ratios;
    for (size_t t = 0; t < before.layers.size(); ++t) {
        double acc = 0.0;
        int count = 0;
        for (int d : plan.dominant[t]) {
            const ExpertWeights eb =
                materialize(before.layers[t].experts[before.layers[t].redirect[d]]);
            const ExpertWeights ea =
                materialize(after.layers[t].experts[after.layers[t].redirect[d]]);
            const Matrix* pairs[2][2] = {{&eb.w_in, &ea.w_in}, {&eb.w_out, &ea.w_out}};
            for (const auto& pair : pairs) {
                const double sr_before = stable_rank(*pair[0]);
                const double sr_after = stable_rank(*pair[1]);
                acc += (sr_after - sr_before) / sr_before;
                ++count;
            }
        }
        ratios.push_back(count > 0 ? acc / count : 0.0);
    }
    return ratios;
}

namespace {

DecomposedPart decompose_matrix(const Matrix& w, int rank) {
    const SvdResult dec = svd(w);
    DecomposedPart part;
    part.u = Matrix(w.rows, rank);
    part.v = Matrix(rank, w.cols);
    for (int k = 0; k < rank; ++k) {
        const double sigma = dec.sigma[k];
        for (int i = 0; i < w.rows; ++i)
            part.u.at(i, k) = static_cast<float>(sigma * static_cast<double>(dec.u.at(i, k)));
        for (int j = 0; j < w.cols; ++j) part.v.at(k, j) = dec.v.at(j, k);
    }
    // s = w - u*v, accumulated in double.
    part.s_kept = Matrix(w.rows, w.cols);
    for (int i = 0; i < w.rows; ++i) {
        for (int j = 0; j < w.cols; ++j) {
            double acc = w.at(i, j);
            for (int k = 0; k < rank; ++k)
                acc -= static_cast<double>(part.u.at(i, k)) * static_cast<double>(part.v.at(k, j));
            part.s_kept.at(i, j) = static_cast<float>(acc);
        }
    }
    part.kept_cols.resize(w.cols);
    std::iota(part.kept_cols.begin(), part.kept_cols.end(), 0);
    return part;
}

}  // namespace

DecomposedExpert decompose_expert(const ExpertWeights& e, int rank) {
    const int full = std::min(e.w_in.rows, e.w_in.cols);
    if (rank < 1 || rank >= full)
        throw std::invalid_argument("decompose_expert: rank must be in [1, min(d_model, d_ff))");
    return {decompose_matrix(e.w_in, rank), decompose_matrix(e.w_out, rank)};
}

double cubic_ratio(int t, const PruneSchedule& s) {
    if (s.t_initial < 0 || s.t_final < 0 || s.t_initial + s.t_final >= s.t_total ||
        s.final_keep_ratio <= 0.0 || s.final_keep_ratio > 1.0 || s.exponent < 1.0)
        throw std::invalid_argument("cubic_ratio: invalid schedule");
    if (t < 0) throw std::invalid_argument("cubic_ratio: negative step");
    if (t < s.t_initial) return 1.0;
    if (t >= s.t_total - s.t_final) return s.final_keep_ratio;
    const double span = s.t_total - s.t_initial - s.t_final;
    const double x = 1.0 - (t - s.t_initial) / span;
    return s.final_keep_ratio + (1.0 - s.final_keep_ratio) * std::pow(x, s.exponent);
}

std::vector<double> importance_column_scores(const Matrix& s, const Matrix& grad_s) {
    if (!s.same_shape(grad_s))
        throw std::invalid_argument("importance_column_scores: shape mismatch");
    std::vector<double> scores(s.cols, 0.0);
    for (int i = 0; i < s.rows; ++i)
        for (int j = 0; j < s.cols; ++j)
            scores[j] += std::abs(static_cast<double>(s.at(i, j)) * static_cast<double>(grad_s.at(i, j)));
    return scores;
}

std::vector<uint8_t> global_prune_count(const std::vector<ScoredColumn>& scores,
                                        size_t keep_count) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
        const ColumnId &ia = scores[a].id, &ib = scores[b].id;
        return std::tie(ia.layer, ia.slot, ia.matrix, ia.column) <
               std::tie(ib.layer, ib.slot, ib.matrix, ib.column);
    });
    std::vector<uint8_t> keep(scores.size(), 0);
    for (size_t k = 0; k < std::min(keep_count, order.size()); ++k) keep[order[k]] = 1;
    return keep;
}

std::vector<uint8_t> global_prune(const std::vector<ScoredColumn>& scores, double keep_ratio) {
    if (keep_ratio <= 0.0 || keep_ratio > 1.0)
        throw std::invalid_argument("global_prune: keep_ratio must be in (0, 1]");
    const size_t keep_count =
        static_cast<size_t>(std::ceil(keep_ratio * static_cast<double>(scores.size())));
    return global_prune_count(scores, keep_count);
}

namespace {

// Working state of one decomposed matrix during the pruning loop: s is held
// dense with pruned columns zeroed, and only collapsed to s_kept at the end.
struct WorkingPart {
    std::vector<char> kept;
    std::vector<double> score;
};

}  // namespace

ModelManifest compress_model(const ModelManifest& merged, const ModelManifest& teacher,
                             const TokenBatch& data, const PruneSchedule& sched, int rank,
                             const CompressOptions& opts) {
    cubic_ratio(0, sched);  // schedule validity
    if (data.embeddings.rows < 1) throw std::invalid_argument("compress_model: empty data batch");
    if (merged.readout.empty() || teacher.readout.empty())
        throw std::invalid_argument("compress_model: both models need a readout head");
    for (const auto& layer : merged.layers)
        for (const auto& slot : layer.experts)
            if (!is_dense(slot))
                throw std::invalid_argument("compress_model: model is already decomposed");

    // Skip layers are exempt from consolidation altogether and stay dense.
    ModelManifest work = merged;
    std::vector<std::vector<std::array<WorkingPart, 2>>> state(work.layers.size());
    size_t total_columns = 0;
    for (size_t t = 0; t < work.layers.size(); ++t) {
        if (work.skip_layers.count(static_cast<int>(t))) continue;
        state[t].resize(work.layers[t].experts.size());
        for (size_t s = 0; s < work.layers[t].experts.size(); ++s) {
            const auto& e = std::get<ExpertWeights>(work.layers[t].experts[s]);
            DecomposedExpert d = decompose_expert(e, rank);
            state[t][s][0].kept.assign(d.in.d_in(), 1);
            state[t][s][0].score.assign(d.in.d_in(), 0.0);
            state[t][s][1].kept.assign(d.out.d_in(), 1);
            state[t][s][1].score.assign(d.out.d_in(), 0.0);
            total_columns += d.in.d_in() + d.out.d_in();
            work.layers[t].experts[s] = std::move(d);
        }
    }
    if (total_columns == 0)
        throw std::invalid_argument("compress_model: every layer is skipped");

    // Teacher logits are fixed; compute them once over the whole batch.
    const Matrix teacher_logits =
        task_logits(teacher, model_forward(teacher, data.embeddings).output);

    const int b = data.embeddings.rows;
    const int step_tokens = std::max(1, std::min(opts.step_tokens, b));
    size_t kept_total = total_columns;
    int cursor = 0;

    for (int t_step = 0; t_step <= sched.t_total; ++t_step) {
        // Cyclic sub-batch.
        Matrix x(step_tokens, merged.d_model);
        Matrix t_logits(step_tokens, teacher_logits.cols);
        std::vector<int> labels(data.labels.empty() ? 0 : step_tokens);
        for (int i = 0; i < step_tokens; ++i) {
            const int src = (cursor + i) % b;
            for (int j = 0; j < merged.d_model; ++j) x.at(i, j) = data.embeddings.at(src, j);
            for (int j = 0; j < teacher_logits.cols; ++j)
                t_logits.at(i, j) = teacher_logits.at(src, j);
            if (!data.labels.empty()) labels[i] = data.labels[src];
        }
        cursor = (cursor + step_tokens) % b;

        const ForwardCapture cap = model_forward(work, x);
        const Matrix s_logits = task_logits(work, cap.output);
        const Matrix d_logits =
            loss_grad_logits(s_logits, t_logits, labels, opts.kd_alpha, opts.kd_temperature);
        const Matrix d_y = matmul(d_logits, work.readout);
        const ModelGrads grads = model_backward(work, cap, d_y);

        // Touched slots: routed to by at least one token this step.
        std::vector<std::vector<char>> touched(work.layers.size());
        for (size_t t = 0; t < work.layers.size(); ++t) {
            touched[t].assign(work.layers[t].experts.size(), 0);
            for (int tok = 0; tok < step_tokens; ++tok)
                touched[t][work.layers[t].redirect[cap.assignment[t][tok]]] = 1;
        }

        for (size_t t = 0; t < work.layers.size(); ++t) {
            if (state[t].empty()) continue;
            for (size_t s = 0; s < work.layers[t].experts.size(); ++s) {
                if (!touched[t][s]) continue;
                const auto& d = std::get<DecomposedExpert>(work.layers[t].experts[s]);
                const Matrix* s_mats[2] = {&d.in.s_kept, &d.out.s_kept};
                const Matrix* g_mats[2] = {&grads.experts[t][s].d_w_in, &grads.experts[t][s].d_w_out};
                for (int part = 0; part < 2; ++part) {
                    const std::vector<double> inst = importance_column_scores(*s_mats[part], *g_mats[part]);
                    auto& st = state[t][s][part];
                    for (size_t c = 0; c < inst.size(); ++c) {
                        if (opts.use_ema)
                            st.score[c] = opts.ema_decay * st.score[c] + (1.0 - opts.ema_decay) * inst[c];
                        else
                            st.score[c] = inst[c];
                    }
                }
            }
        }

        const double ratio = cubic_ratio(t_step, sched);
        const size_t budget =
            static_cast<size_t>(std::ceil(ratio * static_cast<double>(total_columns)));
        if (budget >= kept_total) continue;

        // Prune among the still-kept columns only; pruned stays pruned.
        std::vector<ScoredColumn> pool;
        pool.reserve(kept_total);
        for (size_t t = 0; t < state.size(); ++t)
            for (size_t s = 0; s < state[t].size(); ++s)
                for (int part = 0; part < 2; ++part) {
                    const auto& st = state[t][s][part];
                    for (size_t c = 0; c < st.kept.size(); ++c)
                        if (st.kept[c])
                            pool.push_back({{static_cast<int>(t), static_cast<int>(s), part,
                                             static_cast<int>(c)},
                                            st.score[c]});
                }
        const std::vector<uint8_t> keep = global_prune_count(pool, budget);
        for (size_t i = 0; i < pool.size(); ++i) {
            if (keep[i]) continue;
            const ColumnId& id = pool[i].id;
            auto& st = state[id.layer][id.slot][id.matrix];
            st.kept[id.column] = 0;
            auto& d = std::get<DecomposedExpert>(work.layers[id.layer].experts[id.slot]);
            Matrix& s_mat = id.matrix == 0 ? d.in.s_kept : d.out.s_kept;
            for (int r = 0; r < s_mat.rows; ++r) s_mat.at(r, id.column) = 0.0f;
            --kept_total;
        }
    }

    // Collapse the dense working s matrices to their surviving columns.
    for (size_t t = 0; t < work.layers.size(); ++t) {
        if (state[t].empty()) continue;
        for (size_t s = 0; s < work.layers[t].experts.size(); ++s) {
            auto& d = std::get<DecomposedExpert>(work.layers[t].experts[s]);
            for (int part = 0; part < 2; ++part) {
                DecomposedPart& p = part == 0 ? d.in : d.out;
                const auto& st = state[t][s][part];
                std::vector<int> kept_cols;
                for (size_t c = 0; c < st.kept.size(); ++c)
                    if (st.kept[c]) kept_cols.push_back(static_cast<int>(c));
                Matrix s_kept(p.s_kept.rows, static_cast<int>(kept_cols.size()));
                for (int r = 0; r < p.s_kept.rows; ++r)
                    for (size_t k = 0; k < kept_cols.size(); ++k)
                        s_kept.at(r, static_cast<int>(k)) = p.s_kept.at(r, kept_cols[k]);
                p.s_kept = std::move(s_kept);
                p.kept_cols = std::move(kept_cols);
            }
        }
    }
    validate(work);
    return work;
}

}  // namespace smoe
