#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "smoe/grouping.hpp"

using namespace smoe;

TEST_CASE("normalize_frequencies divides by the layer max") {
    const std::vector<std::vector<double>> freqs = {{0.5, 0.3, 0.2}};
    const auto norm = normalize_frequencies(freqs);
    CHECK(norm[0][0] == 1.0);
    CHECK(norm[0][1] == doctest::Approx(0.6));
    CHECK(norm[0][2] == doctest::Approx(0.4));

    const auto uniform = normalize_frequencies({{0.25, 0.25, 0.25, 0.25}});
    for (double v : uniform[0]) CHECK(v == 1.0);

    // Layers normalize independently.
    const auto two = normalize_frequencies({{0.5, 0.25}, {0.1, 0.05}});
    CHECK(two[0][0] == 1.0);
    CHECK(two[1][0] == 1.0);
    CHECK(two[0][1] == doctest::Approx(0.5));
    CHECK(two[1][1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(normalize_frequencies({{0.0, 0.0}}), std::runtime_error);
}

TEST_CASE("select_dominant matches the hand-enumerated example") {
    const std::vector<std::vector<double>> a_norm = {{1.0, 0.9, 0.1, 0.1},
                                                     {1.0, 0.2, 0.2, 0.2}};
    const auto d = select_dominant(a_norm, 4, {});
    CHECK(d[0] == std::vector<int>{0, 1});
    CHECK(d[1] == std::vector<int>{0, 1});  // .2 tie broken by (layer, expert)
}

TEST_CASE("select_dominant budget edge cases") {
    const std::vector<std::vector<double>> a_norm = {{1.0, 0.5}, {1.0, 0.7}};
    const auto all = select_dominant(a_norm, 4, {});
    CHECK(all[0].size() == 2);
    CHECK(all[1].size() == 2);

    // Skipped layers keep everything and do not consume budget.
    const auto skipped = select_dominant(a_norm, 1, {0});
    CHECK(skipped[0] == std::vector<int>{0, 1});
    CHECK(skipped[1] == std::vector<int>{0});

    CHECK_THROWS_AS(select_dominant(a_norm, 1, {}), std::invalid_argument);
    CHECK_THROWS_AS(select_dominant(a_norm, 5, {}), std::invalid_argument);
}

TEST_CASE("select_dominant spends the budget exactly and guarantees each layer") {
    Rng rng(701);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> freqs(4, std::vector<double>(8));
        for (auto& layer : freqs) {
            for (auto& f : layer) f = rng.uniform() + 1e-3;
        }
        const auto a_norm = normalize_frequencies(freqs);
        const int k_total = 4 + static_cast<int>(rng.eng() % 20);
        const auto d = select_dominant(a_norm, k_total, {});
        int total = 0;
        for (const auto& layer : d) {
            CHECK(!layer.empty());
            total += static_cast<int>(layer.size());
        }
        CHECK(total == k_total);
    }
}

TEST_CASE("layerwise adaptivity: stronger layers get at least as many dominants") {
    // Layer 0 dominates layer 1 entry-wise after normalization.
    const std::vector<std::vector<double>> a_norm = {{1.0, 0.9, 0.8, 0.7},
                                                     {1.0, 0.3, 0.2, 0.1}};
    for (int k = 2; k <= 8; ++k) {
        const auto d = select_dominant(a_norm, k, {});
        CHECK(d[0].size() >= d[1].size());
    }
}

TEST_CASE("router-logits similarity is 1 on the diagonal and matches an independent oracle") {
    auto [model, batch] = gen_toy(73, ToySpec{});
    const RoutingStats stats = collect_stats(model, batch);
    GroupingContextOptions opts;
    opts.need_features = false;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);

    CHECK(expert_similarity("router-logits", ctx, 1, 3, 3) == doctest::Approx(1.0));

    // Independent H: unbatched chained forward, cosine straight off the rows.
    const ForwardCapture cap = model_forward(model, batch.embeddings);
    const int t = 2;
    const Matrix h = matmul(model.layers[t].router, transpose(cap.layer_inputs[t]));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const double want = cosine(h.row(i), h.row(j));
            CHECK(expert_similarity("router-logits", ctx, t, i, j) ==
                  doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("duplicated router rows give router-weight similarity 1") {
    auto [model, batch] = gen_toy(79, ToySpec{});
    for (int j = 0; j < model.d_model; ++j)
        model.layers[1].router.at(2, j) = model.layers[1].router.at(5, j);
    const RoutingStats stats = collect_stats(model, batch);
    GroupingContextOptions opts;
    opts.need_features = false;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);
    CHECK(expert_similarity("router-weight", ctx, 1, 2, 5) == doctest::Approx(1.0));
}

TEST_CASE("unknown methods and missing context throw") {
    auto [model, batch] = gen_toy(83, ToySpec{});
    const RoutingStats stats = collect_stats(model, batch);
    GroupingContextOptions opts;
    opts.need_features = false;
    opts.need_grads = false;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);
    CHECK_THROWS_AS(expert_similarity("nope", ctx, 0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(expert_similarity("expert-gradient", ctx, 0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(expert_similarity("expert-feature", ctx, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("assign_groups basics and exhaustive argmax oracle") {
    auto [model, batch] = gen_toy(89, ToySpec{});
    const RoutingStats stats = collect_stats(model, batch);
    GroupingContextOptions opts;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);

    // Single dominant: one group.
    const std::vector<int> one = assign_groups("router-logits", ctx, 1, {3});
    for (int label : one) CHECK(label == 3);

    // Labels equal the brute-force argmax over dominants.
    const std::vector<int> dominant = {0, 2, 5};
    const std::vector<int> labels = assign_groups("router-logits", ctx, 2, dominant);
    for (int e = 0; e < model.layers[2].n_experts(); ++e) {
        if (std::find(dominant.begin(), dominant.end(), e) != dominant.end()) {
            CHECK(labels[e] == e);
            continue;
        }
        int best = dominant[0];
        double best_sim = expert_similarity("router-logits", ctx, 2, e, best);
        for (int d : dominant) {
            const double sim = expert_similarity("router-logits", ctx, 2, e, d);
            if (sim > best_sim) {
                best_sim = sim;
                best = d;
            }
        }
        CHECK(labels[e] == best);
    }
}

TEST_CASE("a non-dominant expert with a dominant's logit row joins that dominant") {
    auto [model, batch] = gen_toy(97, ToySpec{});
    RoutingStats stats = collect_stats(model, batch);
    // Forge expert 6's logits to equal dominant 1's row exactly.
    const int t = 1;
    for (int tok = 0; tok < stats.logits[t].cols; ++tok)
        stats.logits[t].at(6, tok) = stats.logits[t].at(1, tok);
    GroupingContextOptions opts;
    opts.need_features = false;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);
    const std::vector<int> labels = assign_groups("router-logits", ctx, t, {1, 2});
    CHECK(labels[6] == 1);
}

TEST_CASE("every similarity method yields a valid plan") {
    auto [model, batch] = gen_toy(103, ToySpec{});
    const RoutingStats stats = collect_stats(model, batch);
    GroupingContextOptions opts;
    opts.need_features = true;
    opts.need_grads = true;
    opts.seed = 103;
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);
    for (const char* method : kSimilarityMethods) {
        const GroupingPlan plan = make_grouping_plan(ctx, method, 6, {0});
        CHECK(plan.method == method);
        CHECK_NOTHROW(validate_plan(plan, model));
        int total = 0;
        for (size_t t = 1; t < plan.dominant.size(); ++t)
            total += static_cast<int>(plan.dominant[t].size());
        CHECK(total == 6);
    }
}
