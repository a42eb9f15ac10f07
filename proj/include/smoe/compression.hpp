#pragma once

#include <vector>

#include "smoe/grouping.hpp"
#include "smoe/model.hpp"
#include "smoe/runtime.hpp"

namespace smoe {

// ||W||_F^2 / sigma_1^2, in [1, min(d1, d2)]. Throws on a zero matrix.
double stable_rank(const Matrix& w);

// Per layer, mean over dominant experts and both matrices of
// (after - before) / before on the stable rank.
std::vector<double> stable_rank_report(const ModelManifest& before, const ModelManifest& after,
                                       const GroupingPlan& plan);

// Rank-r truncated SVD per matrix (u absorbs singular values), s = w - u*v
// with every column initially kept. Requires r < min(d_model, d_ff).
DecomposedExpert decompose_expert(const ExpertWeights& e, int rank);

struct PruneSchedule {
    int t_total = 200;
    int t_initial = 8;  // warm-up steps at keep ratio 1
    int t_final = 32;   // cool-down steps at the final ratio
    double final_keep_ratio = 0.1;
    double exponent = 3.0;
};

// Keep ratio at step t: 1 before t_initial, final_keep_ratio from
// t_total - t_final on, and P + (1-P)*(1 - (t-Ti)/(T-Ti-Tf))^exponent between.
double cubic_ratio(int t, const PruneSchedule& s);

// Column j gets sum_i |s[i][j] * grad[i][j]|.
std::vector<double> importance_column_scores(const Matrix& s, const Matrix& grad_s);

struct ColumnId {
    int layer = 0;
    int slot = 0;
    int matrix = 0;  // 0 = in part, 1 = out part
    int column = 0;
};

struct ScoredColumn {
    ColumnId id;
    double score = 0.0;
};

// Keep flags (aligned with the input) for the top keep_count columns by
// score, ties broken by ascending (layer, slot, matrix, column).
std::vector<uint8_t> global_prune_count(const std::vector<ScoredColumn>& scores,
                                        size_t keep_count);

// Same with keep_count = ceil(keep_ratio * scores.size()), 0 < keep_ratio <= 1.
std::vector<uint8_t> global_prune(const std::vector<ScoredColumn>& scores, double keep_ratio);

struct CompressOptions {
    double ema_decay = 0.85;
    bool use_ema = true;  // false: instantaneous scores
    int step_tokens = 32;
    double kd_alpha = 0.2;
    double kd_temperature = 2.0;
};

// Decomposes every stored expert at the given rank, then runs the scheduled
// structural pruning of s columns: each step forwards a sub-batch, takes the
// task+KD loss against the teacher, scores s columns by |s * grad|, and
// applies the cubic keep ratio globally. Pruned columns are hard-zeroed and
// dropped from storage at the end.
ModelManifest compress_model(const ModelManifest& merged, const ModelManifest& teacher,
                             const TokenBatch& data, const PruneSchedule& sched, int rank,
                             const CompressOptions& opts = {});

}  // namespace smoe
