#pragma once

#include <string>
#include <vector>

#include "smoe/grouping.hpp"
#include "smoe/model.hpp"
#include "smoe/runtime.hpp"

namespace smoe {

enum class MergeStrategy { frequency, uniform, fisher };

MergeStrategy parse_merge_strategy(const std::string& name);

// Weighted element-wise average of aligned experts. frequency normalizes the
// weights to sum 1 in 64-bit before combining; uniform ignores them; fisher
// weights each parameter by squared gradient + 1e-8. A single-member group is
// returned unchanged. Throws on an all-zero weight vector (frequency) or
// missing grads (fisher).
ExpertWeights merge_group(const std::vector<ExpertWeights>& experts,
                          const std::vector<double>& weights, MergeStrategy strategy,
                          const std::vector<FfnGrads>* grads = nullptr);

// One merged expert per dominant slot, redirect table pointing every group
// member at it, non-dominant storage dropped, router untouched.
ModelManifest merge_model(const ModelManifest& m, const GroupingPlan& plan,
                          const RoutingStats& stats, MergeStrategy strategy,
                          const GroupingContext* grad_ctx = nullptr);

// One-shot pruning baseline: drop non-dominant experts and mask routing to
// the survivors (softmax over surviving logits).
ModelManifest prune_non_dominant(const ModelManifest& m,
                                 const std::vector<std::vector<int>>& dominant);

}  // namespace smoe
