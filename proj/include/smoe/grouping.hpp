#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/runtime.hpp"

namespace smoe {

struct GroupingPlan {
    std::vector<std::vector<int>> dominant;  // per layer, sorted original indices
    std::vector<std::vector<int>> labels;    // per layer, expert -> dominant index
    std::string method;
};

// Throws if the plan's invariants do not hold against the model.
void validate_plan(const GroupingPlan& plan, const ModelManifest& m);

// Per layer, divide by the layer max so the most active expert is exactly 1.
std::vector<std::vector<double>> normalize_frequencies(
    const std::vector<std::vector<double>>& freqs);

// Skipped layers keep every expert dominant. Among the rest, the per-layer
// argmax is reserved first, then the budget is filled globally by descending
// normalized frequency, ties broken by (layer, expert) ascending. k_total
// counts dominants over non-skipped layers only.
std::vector<std::vector<int>> select_dominant(const std::vector<std::vector<double>>& a_norm,
                                              int k_total, const std::set<int>& skip);

// Everything expert_similarity can draw a representation from. Feature and
// gradient members stay empty unless requested from build_grouping_context.
struct GroupingContext {
    const ModelManifest* model = nullptr;
    const RoutingStats* stats = nullptr;
    std::vector<std::vector<std::vector<float>>> mean_features;      // [layer][expert] d_model
    std::vector<std::vector<std::vector<float>>> mean_abs_features;  // [layer][expert] d_model
    std::vector<std::vector<FfnGrads>> grads;                        // [layer][expert], optional
    bool has_grads = false;
    uint64_t seed = 0;
};

struct GroupingContextOptions {
    bool need_features = true;
    bool need_grads = false;
    double kd_alpha = 0.2;
    double kd_temperature = 2.0;
    uint64_t seed = 0;
};

GroupingContext build_grouping_context(const ModelManifest& m, const RoutingStats& stats,
                                       const TokenBatch& batch, const GroupingContextOptions& opts);

inline const char* const kSimilarityMethods[] = {
    "random",          "expert-weight", "expert-weight-feature", "expert-gradient",
    "expert-feature",  "expert-feature.abs", "router-weight",    "router-logits",
};

// Cosine similarity of the two experts' representation vectors under the
// given method. Throws on unknown methods or missing context.
double expert_similarity(const std::string& method, const GroupingContext& ctx, int layer, int i,
                         int j);

// Dominants self-assign; everyone else joins the most similar dominant, ties
// to the lowest dominant index.
std::vector<int> assign_groups(const std::string& method, const GroupingContext& ctx, int layer,
                               const std::vector<int>& dominant);

GroupingPlan make_grouping_plan(const GroupingContext& ctx, const std::string& method, int k_total,
                                const std::set<int>& skip);

}  // namespace smoe
