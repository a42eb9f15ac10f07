#include "smoe/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "smoe/alignment.hpp"
#include "smoe/archive.hpp"
#include "smoe/reports.hpp"

namespace smoe {

namespace {

using nlohmann::json;

[[noreturn]] void stage_error(const std::string& stage, const std::string& what) {
    throw std::runtime_error("stage " + stage + ": " + what);
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config: malformed JSON: ") + e.what());
    }
    PipelineConfig c;
    if (root.contains("model")) c.model_path = root["model"].get<std::string>();
    if (root.contains("toy_spec")) {
        const auto& t = root["toy_spec"];
        c.toy.d_model = t.value("d_model", c.toy.d_model);
        c.toy.d_ff = t.value("d_ff", c.toy.d_ff);
        c.toy.n_layers = t.value("layers", c.toy.n_layers);
        c.toy.n_experts = t.value("experts", c.toy.n_experts);
        c.toy.n_tokens = t.value("tokens", c.toy.n_tokens);
        c.toy.n_classes = t.value("classes", c.toy.n_classes);
        c.toy.router_gain = t.value("router_gain", c.toy.router_gain);
        c.toy.skip_first_layer = t.value("skip_first_layer", c.toy.skip_first_layer);
    }
    if (root.contains("stats")) {
        c.stats_batch = root["stats"].value("batch", c.stats_batch);
        c.seed = root["stats"].value("seed", c.seed);
    }
    if (root.contains("align")) {
        c.align_enabled = root["align"].value("enabled", c.align_enabled);
        c.align_reference = root["align"].value("reference", c.align_reference);
    }
    if (root.contains("group")) {
        c.group_method = root["group"].value("method", c.group_method);
        c.k_avg = root["group"].value("k_avg", c.k_avg);
        if (root["group"].contains("skip_layers")) {
            std::set<int> skip;
            for (int s : root["group"]["skip_layers"]) skip.insert(s);
            c.skip_layers = skip;
        }
    }
    if (root.contains("merge")) c.merge_strategy = root["merge"].value("strategy", c.merge_strategy);
    if (root.contains("compress")) {
        const auto& cc = root["compress"];
        c.compress_enabled = cc.value("enabled", c.compress_enabled);
        c.compress_rank = cc.value("rank", c.compress_rank);
        if (cc.contains("keep_ratio"))
            c.schedule.final_keep_ratio = cc["keep_ratio"].get<double>();
        if (cc.contains("schedule")) {
            const auto& s = cc["schedule"];
            c.schedule.t_total = s.value("total", c.schedule.t_total);
            c.schedule.t_initial = s.value("warmup", c.schedule.t_initial);
            c.schedule.t_final = s.value("cooldown", c.schedule.t_final);
            c.schedule.exponent = s.value("exponent", c.schedule.exponent);
        }
        c.compress_opts.step_tokens = cc.value("step_tokens", c.compress_opts.step_tokens);
        c.compress_opts.ema_decay = cc.value("ema_decay", c.compress_opts.ema_decay);
        c.compress_opts.use_ema = cc.value("use_ema", c.compress_opts.use_ema);
    }
    if (root.contains("kd")) {
        c.compress_opts.kd_alpha = root["kd"].value("alpha", c.compress_opts.kd_alpha);
        c.compress_opts.kd_temperature = root["kd"].value("temperature", c.compress_opts.kd_temperature);
    }
    if (root.contains("output")) c.out_dir = root["output"].get<std::string>();
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_pipeline_config(text);
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    namespace fs = std::filesystem;
    PipelineResult result;
    std::vector<std::string>& artifacts = result.artifacts;

    auto out_path = [&](const std::string& name) {
        return (fs::path(config.out_dir) / name).string();
    };
    auto track = [&](const std::string& path) {
        artifacts.push_back(path);
        return path;
    };
    auto cleanup = [&]() {
        for (const auto& f : artifacts) {
            std::error_code ec;
            fs::remove(f, ec);
        }
    };

    try {
        fs::create_directories(config.out_dir);

        // -- load / generate ------------------------------------------------
        ModelManifest model;
        TokenBatch batch;
        try {
            if (!config.model_path.empty()) {
                model = read_model(config.model_path);
                batch = gen_tokens(model, config.seed, config.stats_batch);
            } else {
                ToySpec spec = config.toy;
                spec.n_tokens = config.stats_batch;
                auto gen = gen_toy(config.seed, spec);
                model = std::move(gen.first);
                batch = std::move(gen.second);
                write_model(model, track(out_path("input.smaf")));
            }
            validate(model);
        } catch (const std::exception& e) {
            stage_error("load", e.what());
        }
        const std::set<int> skip = config.skip_layers ? *config.skip_layers : model.skip_layers;
        model.skip_layers = skip;  // downstream stages read the effective set

        // -- stats ----------------------------------------------------------
        RoutingStats stats;
        try {
            stats = collect_stats(model, batch);
            write_frequency_csv(stats, track(out_path("frequencies.csv")));
            validate_frequency_csv(out_path("frequencies.csv"));
        } catch (const std::exception& e) {
            stage_error("stats", e.what());
        }

        // Teacher for compression KD: the model before any merging.
        const ModelManifest teacher = model;

        // -- align ----------------------------------------------------------
        try {
            if (config.align_enabled) {
                for (size_t t = 0; t < model.layers.size(); ++t) {
                    if (skip.count(static_cast<int>(t))) continue;  // not merged, leave untouched
                    model.layers[t] = align_layer(model.layers[t], config.align_reference);
                }
                validate(model);
            }
        } catch (const std::exception& e) {
            stage_error("align", e.what());
        }

        // -- group ----------------------------------------------------------
        GroupingPlan plan;
        GroupingContext ctx;
        const bool need_grads =
            config.group_method == "expert-gradient" || config.merge_strategy == "fisher";
        try {
            GroupingContextOptions opts;
            opts.seed = config.seed;
            opts.need_grads = need_grads;
            opts.kd_alpha = config.compress_opts.kd_alpha;
            opts.kd_temperature = config.compress_opts.kd_temperature;
            ctx = build_grouping_context(model, stats, batch, opts);
            int non_skipped = 0;
            for (size_t t = 0; t < model.layers.size(); ++t)
                if (!skip.count(static_cast<int>(t))) ++non_skipped;
            const int k_total = config.k_avg * non_skipped;
            plan = make_grouping_plan(ctx, config.group_method, k_total, skip);
            write_grouping_json(plan, stats, track(out_path("grouping.json")));
            validate_grouping_json(out_path("grouping.json"));
        } catch (const std::exception& e) {
            stage_error("group", e.what());
        }

        // -- merge ----------------------------------------------------------
        ModelManifest merged;
        try {
            merged = merge_model(model, plan, stats, parse_merge_strategy(config.merge_strategy),
                                 need_grads ? &ctx : nullptr);
            validate(merged);
            write_stable_rank_json(stable_rank_report(model, merged, plan),
                                   track(out_path("stable_rank.json")));
            validate_stable_rank_json(out_path("stable_rank.json"));
        } catch (const std::exception& e) {
            stage_error("merge", e.what());
        }

        // -- compress (optional) ---------------------------------------------
        ModelManifest final_model = merged;
        if (config.compress_enabled) {
            try {
                int rank = config.compress_rank;
                if (rank <= 0) rank = std::max(1, std::min(merged.d_model, merged.d_ff) / 4);
                final_model =
                    compress_model(merged, teacher, batch, config.schedule, rank, config.compress_opts);
                validate(final_model);
            } catch (const std::exception& e) {
                stage_error("compress", e.what());
            }
        }

        // -- emit -------------------------------------------------------------
        try {
            write_model(final_model, track(out_path("model.smaf")));
            const SizeReport original = account(teacher);
            const SizeReport finished = account(final_model);
            write_size_json(finished, &original, track(out_path("size_report.json")));
            validate_size_json(out_path("size_report.json"));
            ModelManifest reread = read_model(out_path("model.smaf"));
            validate(reread);
        } catch (const std::exception& e) {
            stage_error("emit", e.what());
        }

        result.final_model = std::move(final_model);
        return result;
    } catch (...) {
        cleanup();
        throw;
    }
}

}  // namespace smoe
