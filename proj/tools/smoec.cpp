// smoec: consolidate a sparse mixture-of-experts archive by aligning,
// grouping and frequency-weighted merging of experts, with optional
// low-rank-plus-sparse compression of the result.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "smoe/alignment.hpp"
#include "smoe/archive.hpp"
#include "smoe/pipeline.hpp"
#include "smoe/reports.hpp"

using namespace smoe;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> k_avg;
    std::optional<std::string> method;
    std::optional<std::string> strategy;
    bool no_align = false;
    std::optional<int> rank;
    std::optional<double> keep_ratio;
    std::optional<std::string> model;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "pipeline config JSON");
    cmd->add_option("--seed", o.seed, "override the stats/toy seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--model", o.model, "input SMAF archive");
    cmd->add_option("--k-avg", o.k_avg, "average dominant experts per non-skipped layer");
    cmd->add_option("--method", o.method, "similarity method for grouping");
    cmd->add_option("--strategy", o.strategy, "merge strategy: frequency|uniform|fisher");
    cmd->add_flag("--no-align", o.no_align, "skip permutation alignment");
    cmd->add_option("--rank", o.rank, "low-rank factor for compression");
    cmd->add_option("--keep-ratio", o.keep_ratio, "final keep ratio of s columns");
}

PipelineConfig build_config(const CommonOpts& o) {
    PipelineConfig c;
    if (!o.config_path.empty()) c = load_pipeline_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out_dir = *o.out;
    if (o.model) c.model_path = *o.model;
    if (o.k_avg) c.k_avg = *o.k_avg;
    if (o.method) c.group_method = *o.method;
    if (o.strategy) c.merge_strategy = *o.strategy;
    if (o.no_align) c.align_enabled = false;
    if (o.rank) c.compress_rank = *o.rank;
    if (o.keep_ratio) c.schedule.final_keep_ratio = *o.keep_ratio;
    return c;
}

int cmd_gen_toy(const CommonOpts& o, const ToySpec& spec) {
    PipelineConfig c = build_config(o);
    ToySpec s = spec;
    auto [model, batch] = gen_toy(c.seed, s);
    (void)batch;
    std::filesystem::create_directories(c.out_dir);
    const std::string path = (std::filesystem::path(c.out_dir) / "toy.smaf").string();
    write_model(model, path);
    std::cout << path << "\n";
    return 0;
}

int cmd_stats(const CommonOpts& o) {
    PipelineConfig c = build_config(o);
    const ModelManifest model = read_model(c.model_path);
    const TokenBatch batch = gen_tokens(model, c.seed, c.stats_batch);
    const RoutingStats stats = collect_stats(model, batch);
    std::filesystem::create_directories(c.out_dir);
    const std::string path = (std::filesystem::path(c.out_dir) / "frequencies.csv").string();
    write_frequency_csv(stats, path);
    validate_frequency_csv(path);
    std::cout << path << "\n";
    return 0;
}

int cmd_align(const CommonOpts& o) {
    PipelineConfig c = build_config(o);
    ModelManifest model = read_model(c.model_path);
    const std::set<int> skip = c.skip_layers ? *c.skip_layers : model.skip_layers;
    for (size_t t = 0; t < model.layers.size(); ++t) {
        if (skip.count(static_cast<int>(t))) continue;
        model.layers[t] = align_layer(model.layers[t], c.align_reference);
    }
    validate(model);
    std::filesystem::create_directories(c.out_dir);
    const std::string path = (std::filesystem::path(c.out_dir) / "aligned.smaf").string();
    write_model(model, path);
    std::cout << path << "\n";
    return 0;
}

int cmd_group(const CommonOpts& o) {
    PipelineConfig c = build_config(o);
    const ModelManifest model = read_model(c.model_path);
    const TokenBatch batch = gen_tokens(model, c.seed, c.stats_batch);
    const RoutingStats stats = collect_stats(model, batch);
    const std::set<int> skip = c.skip_layers ? *c.skip_layers : model.skip_layers;
    GroupingContextOptions opts;
    opts.seed = c.seed;
    opts.need_grads = c.group_method == "expert-gradient";
    const GroupingContext ctx = build_grouping_context(model, stats, batch, opts);
    int non_skipped = 0;
    for (size_t t = 0; t < model.layers.size(); ++t)
        if (!skip.count(static_cast<int>(t))) ++non_skipped;
    const GroupingPlan plan = make_grouping_plan(ctx, c.group_method, c.k_avg * non_skipped, skip);
    std::filesystem::create_directories(c.out_dir);
    const std::string path = (std::filesystem::path(c.out_dir) / "grouping.json").string();
    write_grouping_json(plan, stats, path);
    validate_grouping_json(path);
    std::cout << path << "\n";
    return 0;
}

int run_stages(const CommonOpts& o, bool compress) {
    PipelineConfig c = build_config(o);
    c.compress_enabled = compress;
    const PipelineResult res = run_pipeline(c);
    for (const auto& f : res.artifacts) std::cout << f << "\n";
    return 0;
}

int cmd_verify(const CommonOpts& o) {
    PipelineConfig c = build_config(o);
    const ModelManifest model = read_model(c.model_path);
    const SizeReport rep = account(model);
    std::cout << "ok: " << model.layers.size() << " layers, d_model " << model.d_model
              << ", d_ff " << model.d_ff << ", " << rep.total_params << " params\n";
    return 0;
}

int cmd_account(const CommonOpts& o) {
    PipelineConfig c = build_config(o);
    const ModelManifest model = read_model(c.model_path);
    const SizeReport rep = account(model);
    nlohmann::json j;
    j["total_params"] = rep.total_params;
    j["router_params"] = rep.router_params;
    j["backbone_params"] = rep.backbone_params;
    j["per_layer_params"] = rep.per_layer_params;
    j["ffn_flops_per_token"] = rep.ffn_flops_per_token;
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SMoE expert consolidation: align, group, merge, compress"};
    app.require_subcommand(1);

    CommonOpts opts;
    ToySpec toy;

    auto* gen = app.add_subcommand("gen-toy", "generate a toy SMoE archive");
    add_common(gen, opts);
    gen->add_option("--d-model", toy.d_model, "embedding width");
    gen->add_option("--d-ff", toy.d_ff, "expert hidden width");
    gen->add_option("--layers", toy.n_layers, "SMoE layer count");
    gen->add_option("--experts", toy.n_experts, "experts per layer");
    gen->add_option("--classes", toy.n_classes, "synthetic task classes");

    auto* stats = app.add_subcommand("stats", "collect routing statistics");
    add_common(stats, opts);
    auto* align = app.add_subcommand("align", "permutation-align experts per layer");
    add_common(align, opts);
    auto* group = app.add_subcommand("group", "dominant selection and group labels");
    add_common(group, opts);
    auto* merge = app.add_subcommand("merge", "run the pipeline up to merging");
    add_common(merge, opts);
    auto* compress = app.add_subcommand("compress", "run the pipeline with compression");
    add_common(compress, opts);
    auto* pipeline = app.add_subcommand("pipeline", "run the configured pipeline");
    add_common(pipeline, opts);
    auto* verify = app.add_subcommand("verify", "read and validate an archive");
    add_common(verify, opts);
    auto* acct = app.add_subcommand("account", "parameter and FLOPs report");
    add_common(acct, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_toy(opts, toy);
        if (stats->parsed()) return cmd_stats(opts);
        if (align->parsed()) return cmd_align(opts);
        if (group->parsed()) return cmd_group(opts);
        if (merge->parsed()) return run_stages(opts, false);
        if (compress->parsed()) return run_stages(opts, true);
        if (pipeline->parsed()) {
            PipelineConfig c = build_config(opts);
            const PipelineResult res = run_pipeline(c);
            for (const auto& f : res.artifacts) std::cout << f << "\n";
            return 0;
        }
        if (verify->parsed()) return cmd_verify(opts);
        if (acct->parsed()) return cmd_account(opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
