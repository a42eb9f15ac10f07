#pragma once

#include <string>
#include <vector>

#include "smoe/grouping.hpp"
#include "smoe/model.hpp"
#include "smoe/runtime.hpp"

namespace smoe {

// frequencies.csv: one row per layer of raw activation frequencies.
void write_frequency_csv(const RoutingStats& stats, const std::string& path);

// grouping.json: per layer, (expert, label, normalized frequency) triples.
void write_grouping_json(const GroupingPlan& plan, const RoutingStats& stats,
                         const std::string& path);

// stable_rank.json: per-layer mean stable-rank change ratio.
void write_stable_rank_json(const std::vector<double>& ratios, const std::string& path);

// size_report.json: account() output plus the remaining-parameter ratio per
// layer against a reference report.
void write_size_json(const SizeReport& report, const SizeReport* reference,
                     const std::string& path);

// Schema validators; throw std::runtime_error on malformed files.
void validate_frequency_csv(const std::string& path);
void validate_grouping_json(const std::string& path);
void validate_stable_rank_json(const std::string& path);
void validate_size_json(const std::string& path);

// Writes every report the stage has data for into out_dir, file names
// prefixed with the stage tag, each validated after writing. plan may be
// null before grouping has run. Returns the paths written.
std::vector<std::string> emit_reports(const ModelManifest& model, const RoutingStats& stats,
                                      const GroupingPlan* plan, const std::string& stage,
                                      const std::string& out_dir);

}  // namespace smoe
