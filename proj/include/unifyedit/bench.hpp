#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unifyedit/errors.hpp"
#include "unifyedit/io.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/pipeline.hpp"
#include "unifyedit/toy_backend.hpp"

namespace unifyedit {

// One benchmark entry: a source image latent, its edit region, the prompt
// pair, and the words being changed. bbox = [x, y, w, h] optionally restricts
// the alignment metric to a sub-window of the edited image.
struct BenchItem {
    std::string id;
    std::string image_path;
    std::optional<std::string> mask_path;
    std::string source_prompt;
    std::string target_prompt;
    std::vector<std::string> target_tokens;
    EditType edit_type = EditType::color;
    std::optional<std::array<int, 4>> bbox;

    bool operator==(const BenchItem&) const = default;
};

struct MetricRecord {
    std::string id;
    double dino_similarity = 0.0;
    double clip_score = 0.0;
    std::vector<std::string> provider_ids;
};

namespace detail {

inline std::string manifest_context(const std::string& path, int line) {
    return path + ":" + std::to_string(line) + ": ";
}

inline BenchItem parse_manifest_line(const nlohmann::json& doc, const std::string& context) {
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!doc.contains(key)) throw parse_error(context + "missing field '" + key + "'");
        return doc.at(key);
    };
    BenchItem item;
    try {
        item.id = need("id").get<std::string>();
        item.image_path = need("image_path").get<std::string>();
        item.source_prompt = need("source_prompt").get<std::string>();
        item.target_prompt = need("target_prompt").get<std::string>();
        item.target_tokens = need("target_tokens").get<std::vector<std::string>>();
        item.edit_type = edit_type_from_string(need("edit_type").get<std::string>());
        if (doc.contains("mask_path") && !doc.at("mask_path").is_null()) {
            item.mask_path = doc.at("mask_path").get<std::string>();
        }
        if (doc.contains("bbox") && !doc.at("bbox").is_null()) {
            std::vector<int> box = doc.at("bbox").get<std::vector<int>>();
            if (box.size() != 4) throw parse_error(context + "bbox must have 4 entries");
            item.bbox = std::array<int, 4>{box[0], box[1], box[2], box[3]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(context + e.what());
    }
    if (item.id.empty()) throw parse_error(context + "id must be non-empty");
    if (item.edit_type != EditType::style && !item.mask_path) {
        throw parse_error(context + "edit type '" + to_string(item.edit_type) +
                          "' requires mask_path");
    }
    if (item.bbox) {
        const std::array<int, 4>& b = *item.bbox;
        if (b[0] < 0 || b[1] < 0 || b[2] <= 0 || b[3] <= 0) {
            throw parse_error(context + "bbox must be [x>=0, y>=0, w>0, h>0]");
        }
    }
    return item;
}

}  // namespace detail

// Manifests are JSON Lines: one object per line, blank lines ignored. Errors
// carry the file and line number.
inline std::vector<BenchItem> parse_manifest(const std::string& text,
                                             const std::string& path = "<memory>") {
    std::vector<BenchItem> items;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string context = detail::manifest_context(path, line_number);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(context + e.what());
        }
        if (!doc.is_object()) throw parse_error(context + "expected a JSON object");
        BenchItem item = detail::parse_manifest_line(doc, context);
        auto [it, inserted] = seen.emplace(item.id, line_number);
        if (!inserted) {
            throw parse_error(context + "duplicate id '" + item.id + "' (first seen on line " +
                              std::to_string(it->second) + ")");
        }
        items.push_back(std::move(item));
    }
    return items;
}

inline std::vector<BenchItem> load_manifest(const std::string& path) {
    return parse_manifest(read_text_file(path), path);
}

inline std::string serialize_manifest(std::span<const BenchItem> items) {
    std::string out;
    for (const BenchItem& item : items) {
        nlohmann::json doc;
        doc["id"] = item.id;
        doc["image_path"] = item.image_path;
        if (item.mask_path) doc["mask_path"] = *item.mask_path;
        doc["source_prompt"] = item.source_prompt;
        doc["target_prompt"] = item.target_prompt;
        doc["target_tokens"] = item.target_tokens;
        doc["edit_type"] = to_string(item.edit_type);
        if (item.bbox) doc["bbox"] = std::vector<int>(item.bbox->begin(), item.bbox->end());
        out += doc.dump();
        out += "\n";
    }
    return out;
}

inline void save_manifest(const std::string& path, std::span<const BenchItem> items) {
    write_text_file(path, serialize_manifest(items));
}

// Structural-fidelity score in (0, 1]: 1 means the edited image left the
// source untouched. Real deployments plug in a feature-space model here; the
// stub below scores plain per-cell agreement.
class StructureMetricProvider {
public:
    virtual ~StructureMetricProvider() = default;
    virtual std::string id() const = 0;
    virtual double similarity(const LatentGrid& original, const LatentGrid& edited) const = 0;
};

// Prompt-alignment score in [0, 1]. The caption argument carries whatever
// side information the provider wants about the edited image content; the
// stub treats it as ground-truth description text.
class AlignmentMetricProvider {
public:
    virtual ~AlignmentMetricProvider() = default;
    virtual std::string id() const = 0;
    virtual double score(const LatentGrid& edited_region, const std::string& target_prompt,
                         const std::vector<std::string>& target_tokens,
                         const std::string& caption) const = 0;
};

class StubStructureMetric final : public StructureMetricProvider {
public:
    std::string id() const override { return "stub-structure"; }
    double similarity(const LatentGrid& original, const LatentGrid& edited) const override {
        detail::require_shape(original.same_shape(edited),
                              "StubStructureMetric: image shapes differ");
        const double mse =
            (original.values - edited.values).squaredNorm() / static_cast<double>(original.size());
        return 1.0 / (1.0 + mse);
    }
};

// Scores the fraction of the queried words that appear in the caption, using
// the same token normalization as the toy prompt encoder. Queried words are
// the target tokens, or the whole target prompt when no tokens were given.
class StubAlignmentMetric final : public AlignmentMetricProvider {
public:
    std::string id() const override { return "stub-alignment"; }
    double score(const LatentGrid&, const std::string& target_prompt,
                 const std::vector<std::string>& target_tokens,
                 const std::string& caption) const override {
        std::vector<std::string> caption_tokens = ToyBackend::tokenize(caption);
        std::vector<std::string> queried;
        if (target_tokens.empty()) {
            queried = ToyBackend::tokenize(target_prompt);
        } else {
            for (const std::string& token : target_tokens) {
                for (std::string& sub : ToyBackend::tokenize(token)) {
                    queried.push_back(std::move(sub));
                }
            }
        }
        if (queried.empty()) return 0.0;
        int hits = 0;
        for (const std::string& token : queried) {
            if (std::find(caption_tokens.begin(), caption_tokens.end(), token) !=
                caption_tokens.end()) {
                ++hits;
            }
        }
        return static_cast<double>(hits) / static_cast<double>(queried.size());
    }
};

inline LatentGrid crop_latent(const LatentGrid& grid, int x, int y, int w, int h) {
    grid.validate();
    detail::require(x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= grid.width &&
                        y + h <= grid.height,
                    "crop_latent: window [" + std::to_string(x) + "," + std::to_string(y) + "," +
                        std::to_string(w) + "," + std::to_string(h) + "] exceeds " +
                        std::to_string(grid.width) + "x" + std::to_string(grid.height));
    LatentGrid out = LatentGrid::zeros(grid.channels, h, w, grid.timestep);
    for (int c = 0; c < grid.channels; ++c) {
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                out.at(c, yy, xx) = grid.at(c, y + yy, x + xx);
            }
        }
    }
    return out;
}

// Scores one finished edit. The structure metric always sees the full
// images; the bbox, when present, restricts only the alignment metric's view
// of the edited image.
inline MetricRecord evaluate_item(const BenchItem& item, const LatentGrid& original,
                                  const LatentGrid& edited,
                                  const StructureMetricProvider& structure,
                                  const AlignmentMetricProvider& alignment,
                                  const std::string& caption) {
    MetricRecord record;
    record.id = item.id;
    record.dino_similarity = structure.similarity(original, edited);
    LatentGrid region = edited;
    if (item.bbox) {
        const std::array<int, 4>& b = *item.bbox;
        region = crop_latent(edited, b[0], b[1], b[2], b[3]);
    }
    record.clip_score =
        alignment.score(region, item.target_prompt, item.target_tokens, caption);
    record.provider_ids = {structure.id(), alignment.id()};
    return record;
}

struct BenchSummaryRow {
    EditType edit_type = EditType::color;
    int count = 0;
    double mean_dino = 0.0;
    double mean_clip = 0.0;
};

struct ScatterPoint {
    std::string method_tag;
    EditType edit_type = EditType::color;
    double clip_score = 0.0;
    double dino_similarity = 0.0;
};

struct BenchSummary {
    std::string method_tag;
    std::vector<BenchSummaryRow> rows;  // edit types with at least one record
    BenchSummaryRow overall;
    std::vector<ScatterPoint> points;
};

// Joins records with their manifest items by id and reduces to per-type
// means. Records are processed in id order, so the output is invariant to
// the order metric records arrive in.
inline BenchSummary aggregate(std::span<const MetricRecord> records,
                              std::span<const BenchItem> items, std::string method_tag) {
    std::map<std::string, const BenchItem*> by_id;
    for (const BenchItem& item : items) by_id[item.id] = &item;

    std::vector<const MetricRecord*> ordered;
    ordered.reserve(records.size());
    for (const MetricRecord& record : records) ordered.push_back(&record);
    std::sort(ordered.begin(), ordered.end(),
              [](const MetricRecord* a, const MetricRecord* b) { return a->id < b->id; });

    BenchSummary summary;
    summary.method_tag = std::move(method_tag);
    std::map<EditType, BenchSummaryRow> buckets;
    for (const MetricRecord* record : ordered) {
        auto found = by_id.find(record->id);
        detail::require(found != by_id.end(),
                        "aggregate: record id '" + record->id + "' is not in the manifest");
        const BenchItem& item = *found->second;
        BenchSummaryRow& row = buckets[item.edit_type];
        row.edit_type = item.edit_type;
        row.count += 1;
        row.mean_dino += record->dino_similarity;
        row.mean_clip += record->clip_score;
        summary.overall.count += 1;
        summary.overall.mean_dino += record->dino_similarity;
        summary.overall.mean_clip += record->clip_score;
        summary.points.push_back(ScatterPoint{summary.method_tag, item.edit_type,
                                              record->clip_score, record->dino_similarity});
    }
    for (auto& [type, row] : buckets) {
        row.mean_dino /= row.count;
        row.mean_clip /= row.count;
        summary.rows.push_back(row);
    }
    if (summary.overall.count > 0) {
        summary.overall.mean_dino /= summary.overall.count;
        summary.overall.mean_clip /= summary.overall.count;
    }
    return summary;
}

inline std::string format_summary(const BenchSummary& summary) {
    char line[160];
    std::string out = "method: " + summary.method_tag + "\n";
    std::snprintf(line, sizeof(line), "%-20s %6s %16s %12s\n", "edit_type", "items",
                  "dino_similarity", "clip_score");
    out += line;
    for (const BenchSummaryRow& row : summary.rows) {
        std::snprintf(line, sizeof(line), "%-20s %6d %16.6f %12.6f\n",
                      to_string(row.edit_type).c_str(), row.count, row.mean_dino, row.mean_clip);
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-20s %6d %16.6f %12.6f\n", "overall",
                  summary.overall.count, summary.overall.mean_dino, summary.overall.mean_clip);
    out += line;
    return out;
}

inline std::string format_scatter_csv(const BenchSummary& summary) {
    std::string out = "method,edit_type,clip_score,dino_similarity\n";
    char line[160];
    for (const ScatterPoint& point : summary.points) {
        std::snprintf(line, sizeof(line), "%s,%s,%.12g,%.12g\n", point.method_tag.c_str(),
                      to_string(point.edit_type).c_str(), point.clip_score,
                      point.dino_similarity);
        out += line;
    }
    return out;
}

inline constexpr const char* kTraceHeader =
    "t,iter,lambda1,lambda2,loss_sap,loss_caa,grad_sap_mean_abs,grad_caa_mean_abs,"
    "grad_sap_l2,grad_caa_l2";

namespace detail {

// 12 significant digits: short enough to stay readable, precise enough that
// parsing a column back reproduces scheduler weights to well below 1e-9, and
// decimal -> double -> decimal is exact at this length so emitted files
// round-trip byte-identically.
inline std::string format_trace_value(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.12g", value);
    return buffer;
}

}  // namespace detail

inline std::string format_trace(const GradientTrace& trace) {
    std::string out = std::string(kTraceHeader) + "\n";
    for (const TraceRow& row : trace.rows) {
        out += std::to_string(row.t) + "," + std::to_string(row.iteration);
        for (double value : {row.lambda1, row.lambda2, row.loss_sap, row.loss_caa,
                             row.grad_sap_mean_abs, row.grad_caa_mean_abs, row.grad_sap_l2,
                             row.grad_caa_l2}) {
            out += ",";
            out += detail::format_trace_value(value);
        }
        out += "\n";
    }
    return out;
}

inline void emit_trace(const GradientTrace& trace, const std::string& path) {
    write_text_file(path, format_trace(trace));
}

inline GradientTrace parse_trace(const std::string& text, const std::string& path = "<memory>") {
    std::istringstream in(text);
    std::string line;
    int line_number = 0;
    GradientTrace trace;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string context = detail::manifest_context(path, line_number);
        if (!saw_header) {
            if (line != kTraceHeader) throw parse_error(context + "bad trace header");
            saw_header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 10) {
            throw parse_error(context + "expected 10 columns, got " +
                              std::to_string(cells.size()));
        }
        TraceRow row;
        try {
            row.t = std::stoi(cells[0]);
            row.iteration = std::stoi(cells[1]);
            double* fields[8] = {&row.lambda1,           &row.lambda2,
                                 &row.loss_sap,          &row.loss_caa,
                                 &row.grad_sap_mean_abs, &row.grad_caa_mean_abs,
                                 &row.grad_sap_l2,       &row.grad_caa_l2};
            for (int i = 0; i < 8; ++i) {
                std::size_t used = 0;
                *fields[i] = std::stod(cells[static_cast<std::size_t>(i) + 2], &used);
                if (used != cells[static_cast<std::size_t>(i) + 2].size()) {
                    throw std::invalid_argument(cells[static_cast<std::size_t>(i) + 2]);
                }
            }
        } catch (const std::exception&) {
            throw parse_error(context + "bad numeric cell");
        }
        trace.rows.push_back(row);
    }
    if (!saw_header) throw parse_error(path + ": empty trace file");
    return trace;
}

inline GradientTrace load_trace(const std::string& path) {
    return parse_trace(read_text_file(path), path);
}

// Long format for plotting tools: one (t, iter, series, value) row per finite
// cell of the wide table.
inline std::string format_trace_long(const GradientTrace& trace) {
    static constexpr const char* kSeries[8] = {
        "lambda1", "lambda2", "loss_sap", "loss_caa",
        "grad_sap_mean_abs", "grad_caa_mean_abs", "grad_sap_l2", "grad_caa_l2"};
    std::string out = "t,iter,series,value\n";
    for (const TraceRow& row : trace.rows) {
        const double values[8] = {row.lambda1,           row.lambda2,
                                  row.loss_sap,          row.loss_caa,
                                  row.grad_sap_mean_abs, row.grad_caa_mean_abs,
                                  row.grad_sap_l2,       row.grad_caa_l2};
        for (int i = 0; i < 8; ++i) {
            if (!std::isfinite(values[i])) continue;
            out += std::to_string(row.t) + "," + std::to_string(row.iteration) + "," +
                   kSeries[i] + "," + detail::format_trace_value(values[i]) + "\n";
        }
    }
    return out;
}

// Sidecar description for a source image: "<image>.caption" next to the
// image file. Missing sidecars read as an empty caption.
inline std::string caption_for_image(const std::string& image_path) {
    try {
        return read_text_file(image_path + ".caption");
    } catch (const io_error&) {
        return "";
    }
}

inline nlohmann::json config_to_json(const EditConfig& config) {
    nlohmann::json doc;
    doc["scheduler"] = {{"beta1", config.scheduler.beta1},
                        {"beta2", config.scheduler.beta2},
                        {"k1", config.scheduler.k1},
                        {"k2", config.scheduler.k2},
                        {"total_steps", config.scheduler.total_steps},
                        {"form", to_string(config.scheduler.form)}};
    doc["tau1"] = config.tau1;
    doc["tau2"] = config.tau2;
    doc["max_iterations"] = config.max_iterations;
    doc["cfg_scale"] = config.cfg_scale;
    doc["sa_resolutions"] = config.sa_resolutions;
    doc["sap_mode"] = to_string(config.sap_mode);
    doc["sa_source"] = to_string(config.sa_source);
    doc["guidance_mode"] = to_string(config.guidance_mode);
    doc["strategy"] = to_string(config.strategy);
    return doc;
}

// Accepts partial documents: absent keys keep the values already in `config`,
// so a preset file only has to name what it changes.
inline EditConfig config_from_json(const nlohmann::json& doc, EditConfig config = {}) {
    try {
        if (doc.contains("scheduler")) {
            const nlohmann::json& s = doc.at("scheduler");
            if (s.contains("beta1")) config.scheduler.beta1 = s.at("beta1").get<double>();
            if (s.contains("beta2")) config.scheduler.beta2 = s.at("beta2").get<double>();
            if (s.contains("k1")) config.scheduler.k1 = s.at("k1").get<double>();
            if (s.contains("k2")) config.scheduler.k2 = s.at("k2").get<double>();
            if (s.contains("total_steps")) {
                config.scheduler.total_steps = s.at("total_steps").get<int>();
            }
            if (s.contains("form")) {
                config.scheduler.form = scheduler_form_from_string(s.at("form").get<std::string>());
            }
        }
        if (doc.contains("tau1")) config.tau1 = doc.at("tau1").get<int>();
        if (doc.contains("tau2")) config.tau2 = doc.at("tau2").get<int>();
        if (doc.contains("max_iterations")) {
            config.max_iterations = doc.at("max_iterations").get<int>();
        }
        if (doc.contains("cfg_scale")) config.cfg_scale = doc.at("cfg_scale").get<double>();
        if (doc.contains("sa_resolutions")) {
            config.sa_resolutions = doc.at("sa_resolutions").get<std::set<int>>();
        }
        if (doc.contains("sap_mode")) {
            config.sap_mode = sap_mode_from_string(doc.at("sap_mode").get<std::string>());
        }
        if (doc.contains("sa_source")) {
            config.sa_source = sa_source_from_string(doc.at("sa_source").get<std::string>());
        }
        if (doc.contains("guidance_mode")) {
            config.guidance_mode =
                guidance_mode_from_string(doc.at("guidance_mode").get<std::string>());
        }
        if (doc.contains("strategy")) {
            config.strategy =
                gradient_strategy_from_string(doc.at("strategy").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("EditConfig: ") + e.what());
    }
    config.validate();
    return config;
}

inline nlohmann::json toy_config_to_json(const ToyBackendConfig& config) {
    return nlohmann::json{{"channels", config.channels},
                          {"spatial", config.spatial},
                          {"sa_resolutions", config.sa_resolutions},
                          {"ca_resolutions", config.ca_resolutions},
                          {"sa_layers_per_resolution", config.sa_layers_per_resolution},
                          {"L", config.ca_layers_per_resolution},
                          {"embed_dim", config.embed_dim},
                          {"max_timestep", config.max_timestep}};
}

inline ToyBackendConfig toy_config_from_json(const nlohmann::json& doc,
                                             ToyBackendConfig config = {}) {
    try {
        if (doc.contains("channels")) config.channels = doc.at("channels").get<int>();
        if (doc.contains("spatial")) config.spatial = doc.at("spatial").get<int>();
        if (doc.contains("sa_resolutions")) {
            config.sa_resolutions = doc.at("sa_resolutions").get<std::vector<int>>();
        }
        if (doc.contains("ca_resolutions")) {
            config.ca_resolutions = doc.at("ca_resolutions").get<std::vector<int>>();
        }
        if (doc.contains("sa_layers_per_resolution")) {
            config.sa_layers_per_resolution = doc.at("sa_layers_per_resolution").get<int>();
        }
        if (doc.contains("L")) config.ca_layers_per_resolution = doc.at("L").get<int>();
        if (doc.contains("embed_dim")) config.embed_dim = doc.at("embed_dim").get<int>();
        if (doc.contains("max_timestep")) config.max_timestep = doc.at("max_timestep").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("ToyBackendConfig: ") + e.what());
    }
    config.validate();
    return config;
}

}  // namespace unifyedit
