#pragma once

#include <optional>
#include <set>
#include <string>

#include "smoe/compression.hpp"
#include "smoe/merging.hpp"
#include "smoe/runtime.hpp"

namespace smoe {

// Single JSON config document driving the whole pipeline; every field has a
// default mirroring the reference setup (router-logits grouping, frequency
// merging, skip the first layer, 256 stats tokens, KD alpha 0.2 at T 2).
struct PipelineConfig {
    std::string model_path;               // SMAF input; empty -> generate a toy model
    ToySpec toy;
    int stats_batch = 256;
    uint64_t seed = 42;
    bool align_enabled = true;
    int align_reference = 0;
    std::string group_method = "router-logits";
    int k_avg = 2;                        // dominants per non-skipped layer on average
    std::optional<std::set<int>> skip_layers;  // overrides the manifest when set
    std::string merge_strategy = "frequency";
    bool compress_enabled = false;
    int compress_rank = 0;                // 0 -> min(d_model, d_ff) / 4
    PruneSchedule schedule;
    CompressOptions compress_opts;
    std::string out_dir = "out";
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text);

struct PipelineResult {
    ModelManifest final_model;
    std::vector<std::string> artifacts;  // files written under out_dir
};

// stats -> align -> group -> merge -> (optional) compress. Each stage's
// output is re-validated; on failure every file written so far is removed
// and the error names the stage.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace smoe
