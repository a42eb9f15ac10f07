#include "smoe/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace smoe {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("report: cannot open " + path);
    os << text;
    if (!os.flush()) throw std::runtime_error("report: write failed for " + path);
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("report: cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error("report: malformed JSON in " + path + ": " + e.what());
    }
}

}  // namespace

void write_frequency_csv(const RoutingStats& stats, const std::string& path) {
    std::ostringstream os;
    size_t width = 0;
    for (const auto& layer : stats.frequencies) width = std::max(width, layer.size());
    os << "layer";
    for (size_t i = 0; i < width; ++i) os << ",expert_" << i;
    os << "\n";
    for (size_t t = 0; t < stats.frequencies.size(); ++t) {
        os << t;
        for (size_t i = 0; i < width; ++i)
            os << "," << (i < stats.frequencies[t].size() ? fmt_double(stats.frequencies[t][i]) : "");
        os << "\n";
    }
    write_text(path, os.str());
}

void write_grouping_json(const GroupingPlan& plan, const RoutingStats& stats,
                         const std::string& path) {
    const auto a_norm = normalize_frequencies(stats.frequencies);
    json root;
    root["method"] = plan.method;
    json layers = json::array();
    for (size_t t = 0; t < plan.labels.size(); ++t) {
        json jl;
        jl["layer"] = t;
        jl["dominant"] = plan.dominant[t];
        json experts = json::array();
        for (size_t i = 0; i < plan.labels[t].size(); ++i) {
            json je;
            je["expert"] = i;
            je["label"] = plan.labels[t][i];
            je["normalized_frequency"] = a_norm[t][i];
            experts.push_back(je);
        }
        jl["experts"] = experts;
        layers.push_back(jl);
    }
    root["layers"] = layers;
    write_text(path, root.dump(2) + "\n");
}

void write_stable_rank_json(const std::vector<double>& ratios, const std::string& path) {
    json root;
    json layers = json::array();
    for (size_t t = 0; t < ratios.size(); ++t) {
        json jl;
        jl["layer"] = t;
        jl["mean_change_ratio"] = ratios[t];
        layers.push_back(jl);
    }
    root["layers"] = layers;
    write_text(path, root.dump(2) + "\n");
}

void write_size_json(const SizeReport& report, const SizeReport* reference,
                     const std::string& path) {
    json root;
    root["total_params"] = report.total_params;
    root["router_params"] = report.router_params;
    root["backbone_params"] = report.backbone_params;
    root["per_layer_params"] = report.per_layer_params;
    root["ffn_flops_per_token"] = report.ffn_flops_per_token;
    if (reference != nullptr) {
        root["reference_total_params"] = reference->total_params;
        root["remaining_ratio"] =
            static_cast<double>(report.total_params) / static_cast<double>(reference->total_params);
        json per_layer = json::array();
        for (size_t t = 0; t < report.per_layer_params.size(); ++t) {
            const double ref = t < reference->per_layer_params.size()
                                   ? static_cast<double>(reference->per_layer_params[t])
                                   : 0.0;
            per_layer.push_back(ref > 0.0 ? report.per_layer_params[t] / ref : 0.0);
        }
        root["per_layer_remaining_ratio"] = per_layer;
    }
    write_text(path, root.dump(2) + "\n");
}

void validate_frequency_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("report: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("layer,expert_0", 0) != 0)
        throw std::runtime_error("frequency csv: bad header in " + path);
    size_t cols = 1;
    for (char c : line) cols += c == ',';
    int row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        size_t fields = 1;
        for (char c : line) fields += c == ',';
        if (fields != cols)
            throw std::runtime_error("frequency csv: ragged row in " + path);
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        if (std::stoi(cell) != row) throw std::runtime_error("frequency csv: bad layer index");
        double sum = 0.0;
        while (std::getline(ls, cell, ','))
            if (!cell.empty()) sum += std::stod(cell);
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::runtime_error("frequency csv: layer row does not sum to 1");
        ++row;
    }
    if (row == 0) throw std::runtime_error("frequency csv: no data rows");
}

void validate_grouping_json(const std::string& path) {
    const json root = load_json(path);
    if (!root.contains("method") || !root.contains("layers") || !root["layers"].is_array())
        throw std::runtime_error("grouping json: missing fields in " + path);
    for (const auto& jl : root["layers"]) {
        if (!jl.contains("dominant") || !jl.contains("experts"))
            throw std::runtime_error("grouping json: missing layer fields");
        std::set<int> dom;
        for (int d : jl["dominant"]) dom.insert(d);
        if (dom.empty()) throw std::runtime_error("grouping json: empty dominant set");
        for (const auto& je : jl["experts"]) {
            const int label = je.at("label").get<int>();
            if (!dom.count(label)) throw std::runtime_error("grouping json: label not dominant");
            const double f = je.at("normalized_frequency").get<double>();
            if (f < 0.0 || f > 1.0 + 1e-9)
                throw std::runtime_error("grouping json: normalized frequency out of range");
        }
    }
}

void validate_stable_rank_json(const std::string& path) {
    const json root = load_json(path);
    if (!root.contains("layers") || !root["layers"].is_array())
        throw std::runtime_error("stable rank json: missing layers in " + path);
    for (const auto& jl : root["layers"]) {
        jl.at("layer").get<int>();
        const double r = jl.at("mean_change_ratio").get<double>();
        if (!std::isfinite(r)) throw std::runtime_error("stable rank json: non-finite ratio");
    }
}

void validate_size_json(const std::string& path) {
    const json root = load_json(path);
    uint64_t total = root.at("total_params").get<uint64_t>();
    uint64_t sum = root.at("router_params").get<uint64_t>() +
                   root.at("backbone_params").get<uint64_t>();
    for (uint64_t p : root.at("per_layer_params")) sum += p;
    if (total != sum) throw std::runtime_error("size json: totals do not add up in " + path);
}

std::vector<std::string> emit_reports(const ModelManifest& model, const RoutingStats& stats,
                                      const GroupingPlan* plan, const std::string& stage,
                                      const std::string& out_dir) {
    const std::string prefix = out_dir + "/" + (stage.empty() ? "" : stage + "_");
    std::vector<std::string> files;

    files.push_back(prefix + "frequencies.csv");
    write_frequency_csv(stats, files.back());
    validate_frequency_csv(files.back());

    if (plan != nullptr) {
        files.push_back(prefix + "grouping.json");
        write_grouping_json(*plan, stats, files.back());
        validate_grouping_json(files.back());
    }

    files.push_back(prefix + "sizes.json");
    write_size_json(account(model), nullptr, files.back());
    validate_size_json(files.back());
    return files;
}

}  // namespace smoe
