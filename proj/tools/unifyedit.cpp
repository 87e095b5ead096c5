// Command-line front end: invert latents, run single edits, sweep gradient
// strategies, score benchmark manifests, and reshape trace files.
//
// Exit codes: 0 success, 2 invalid input (bad flags, malformed files, shape
// mismatches), 3 diverged optimization.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unifyedit/unifyedit.hpp"

namespace {

using namespace unifyedit;

struct GlobalOptions {
    std::uint64_t seed = 0;
    std::string backend = "toy";
    std::string backend_config_path;
    std::string schedule_path;
};

struct ConfigOverrides {
    std::string preset_path;
    double beta1 = 0.0, beta2 = 0.0, k1 = 0.0, k2 = 0.0, cfg_scale = 0.0;
    int steps = 0, tau1 = 0, tau2 = 0, max_iterations = 0;
    std::vector<int> sa_resolutions;
    std::string strategy, sap_mode, sa_source, guidance_mode, form;
};

void add_config_options(CLI::App* cmd, ConfigOverrides& o) {
    cmd->add_option("--preset", o.preset_path,
                    "JSON file with EditConfig fields; overrides the edit-type preset, "
                    "individual flags override both");
    cmd->add_option("--beta1", o.beta1, "Preservation weight amplitude");
    cmd->add_option("--beta2", o.beta2, "Alignment weight amplitude");
    cmd->add_option("--k1", o.k1, "Preservation weight decay rate");
    cmd->add_option("--k2", o.k2, "Alignment weight decay rate");
    cmd->add_option("--steps", o.steps, "Denoising steps T");
    cmd->add_option("--tau1", o.tau1, "Alignment window bound: active while t >= tau1");
    cmd->add_option("--tau2", o.tau2, "Preservation window bound: active while t >= tau2");
    cmd->add_option("--max-iterations", o.max_iterations, "Optimization iterations per step");
    cmd->add_option("--cfg-scale", o.cfg_scale, "Classifier-free guidance scale");
    cmd->add_option("--sa-resolutions", o.sa_resolutions,
                    "Self-attention resolutions for preservation (comma separated)")
        ->delimiter(',');
    cmd->add_option("--strategy", o.strategy,
                    "Gradient combination: naive, norm, blc, sap_only, caa_only");
    cmd->add_option("--sap-mode", o.sap_mode, "Preservation scope: global or region");
    cmd->add_option("--sa-source", o.sa_source,
                    "Reference maps: source_branch or inversion_trajectory");
    cmd->add_option("--guidance-mode", o.guidance_mode,
                    "latent_optimization or noise_guidance");
    cmd->add_option("--form", o.form, "Weight schedule form: by_progress or by_timestep");
}

EditConfig resolve_config(EditType type, const ConfigOverrides& o, const CLI::App* cmd) {
    EditConfig config = preset_for_edit_type(type);
    if (!o.preset_path.empty()) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(o.preset_path));
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(o.preset_path + ": " + e.what());
        }
        config = config_from_json(doc, config);
    }
    if (cmd->count("--beta1")) config.scheduler.beta1 = o.beta1;
    if (cmd->count("--beta2")) config.scheduler.beta2 = o.beta2;
    if (cmd->count("--k1")) config.scheduler.k1 = o.k1;
    if (cmd->count("--k2")) config.scheduler.k2 = o.k2;
    if (cmd->count("--steps")) config.scheduler.total_steps = o.steps;
    if (cmd->count("--tau1")) config.tau1 = o.tau1;
    if (cmd->count("--tau2")) config.tau2 = o.tau2;
    if (cmd->count("--max-iterations")) config.max_iterations = o.max_iterations;
    if (cmd->count("--cfg-scale")) config.cfg_scale = o.cfg_scale;
    if (cmd->count("--sa-resolutions")) {
        config.sa_resolutions =
            std::set<int>(o.sa_resolutions.begin(), o.sa_resolutions.end());
    }
    if (cmd->count("--strategy")) config.strategy = gradient_strategy_from_string(o.strategy);
    if (cmd->count("--sap-mode")) config.sap_mode = sap_mode_from_string(o.sap_mode);
    if (cmd->count("--sa-source")) config.sa_source = sa_source_from_string(o.sa_source);
    if (cmd->count("--guidance-mode")) {
        config.guidance_mode = guidance_mode_from_string(o.guidance_mode);
    }
    if (cmd->count("--form")) config.scheduler.form = scheduler_form_from_string(o.form);
    config.validate();
    return config;
}

std::shared_ptr<const DiffusionBackend> make_backend(const GlobalOptions& global) {
    if (global.backend == "toy") {
        ToyBackendConfig config;
        if (!global.backend_config_path.empty()) {
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(read_text_file(global.backend_config_path));
            } catch (const nlohmann::json::exception& e) {
                throw parse_error(global.backend_config_path + ": " + e.what());
            }
            config = toy_config_from_json(doc, config);
        }
        return make_toy_backend(global.seed, config);
    }
    if (global.backend.rfind("adapter:", 0) == 0) {
        throw validation_error("no backend adapter registered for '" + global.backend +
                               "'; adapters are provided by embedding applications");
    }
    throw validation_error("unknown backend '" + global.backend +
                           "' (expected toy or adapter:<id>)");
}

// An explicit schedule file defines T; otherwise a linear-beta schedule is
// built to match the configured step count.
AlphaSchedule make_schedule(const GlobalOptions& global, int steps) {
    if (!global.schedule_path.empty()) return read_schedule(global.schedule_path);
    return AlphaSchedule::linear_beta(steps);
}

nlohmann::json backend_to_json(const GlobalOptions& global, const DiffusionBackend& backend) {
    nlohmann::json doc;
    doc["id"] = backend.info().id;
    doc["seed"] = global.seed;
    if (const auto* toy = dynamic_cast<const ToyBackend*>(&backend)) {
        doc["config"] = toy_config_to_json(toy->config());
    }
    return doc;
}

struct EditInputs {
    std::string input_path;
    std::string mask_path;
    std::string edit_type = "color";
    std::string source_prompt;
    std::string target_prompt;
    std::vector<std::string> target_tokens;
    std::string out_dir;
};

void add_edit_inputs(CLI::App* cmd, EditInputs& inputs) {
    cmd->add_option("--input", inputs.input_path, "Clean source latent (.arr, tagged t=0)")
        ->required();
    cmd->add_option("--source-prompt", inputs.source_prompt, "Prompt describing the input")
        ->required();
    cmd->add_option("--target-prompt", inputs.target_prompt, "Prompt describing the edit")
        ->required();
    cmd->add_option("--target-tokens", inputs.target_tokens,
                    "Target-prompt words driving the edit (comma separated)")
        ->delimiter(',');
    cmd->add_option("--mask", inputs.mask_path, "Edit region mask (PGM, >=128 is inside)");
    cmd->add_option("--edit-type", inputs.edit_type,
                    "color, texture, object_replacement, background, style or face")
        ->required();
    cmd->add_option("--out", inputs.out_dir, "Output directory")->required();
}

EditSpec build_spec(const EditInputs& inputs) {
    EditSpec spec;
    spec.source_prompt = inputs.source_prompt;
    spec.target_prompt = inputs.target_prompt;
    spec.target_tokens = inputs.target_tokens;
    spec.edit_type = edit_type_from_string(inputs.edit_type);
    if (!inputs.mask_path.empty()) spec.mask = mask_from_pgm(inputs.mask_path);
    spec.validate();
    return spec;
}

nlohmann::json spec_to_json(const EditSpec& spec, const std::string& mask_path) {
    nlohmann::json doc;
    doc["source_prompt"] = spec.source_prompt;
    doc["target_prompt"] = spec.target_prompt;
    doc["target_tokens"] = spec.target_tokens;
    doc["edit_type"] = to_string(spec.edit_type);
    if (!mask_path.empty()) doc["mask_path"] = mask_path;
    return doc;
}

void write_json(const std::string& path, const nlohmann::json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

int run_invert(const GlobalOptions& global, const std::string& input_path,
               const std::string& prompt_text, int steps, const std::string& out_path,
               const std::string& trajectory_dir) {
    auto backend = make_backend(global);
    AlphaSchedule schedule = make_schedule(global, steps);
    LatentGrid z0 = read_latent(input_path, 0);
    PromptEncoding prompt = backend->encode_prompt(prompt_text);
    Trajectory trajectory = invert_trajectory(z0, prompt, schedule, *backend);
    write_latent(out_path, trajectory.latents.back());
    if (!trajectory_dir.empty()) {
        std::filesystem::create_directories(trajectory_dir);
        for (const LatentGrid& z : trajectory.latents) {
            char name[32];
            std::snprintf(name, sizeof(name), "z_%03d.arr", z.timestep);
            write_latent(trajectory_dir + "/" + name, z);
        }
    }
    nlohmann::json doc;
    doc["command"] = "invert";
    doc["backend"] = backend_to_json(global, *backend);
    doc["steps"] = schedule.max_timestep();
    doc["prompt"] = prompt_text;
    doc["terminal_latent"] = out_path;
    write_json(out_path + ".json", doc);
    std::printf("inverted %s over %d steps -> %s\n", input_path.c_str(),
                schedule.max_timestep(), out_path.c_str());
    return 0;
}

void write_edit_outputs(const std::string& out_dir, const EditResult& result,
                        const EditAssessment& assessment, const nlohmann::json& run_doc) {
    std::filesystem::create_directories(out_dir);
    write_latent(out_dir + "/edited.arr", result.edited_latent);
    write_latent(out_dir + "/source_final.arr", result.final_source_latent);
    emit_trace(result.trace, out_dir + "/trace.csv");
    nlohmann::json doc = run_doc;
    doc["steps_run"] = result.steps_run;
    doc["diverged"] = result.diverged;
    if (std::isfinite(assessment.final_sa_loss)) {
        doc["final_sa_loss"] = assessment.final_sa_loss;
    }
    if (std::isfinite(assessment.final_mean_ratio)) {
        doc["final_mean_ratio"] = assessment.final_mean_ratio;
    }
    write_json(out_dir + "/run.json", doc);
}

int run_edit_command(const GlobalOptions& global, const EditInputs& inputs,
                     const ConfigOverrides& overrides, const CLI::App* cmd) {
    auto backend = make_backend(global);
    EditSpec spec = build_spec(inputs);
    EditConfig config = resolve_config(spec.edit_type, overrides, cmd);
    AlphaSchedule schedule = make_schedule(global, config.scheduler.total_steps);
    config.scheduler.total_steps = schedule.max_timestep();

    LatentGrid z0 = read_latent(inputs.input_path, 0);
    DdimInversion inversion;
    ReferenceCapture references =
        capture_reference_maps(z0, spec, config, schedule, *backend, inversion);
    EditSession session(spec, config, schedule, *backend, std::move(references));
    EditResult result = session.run();

    nlohmann::json run_doc;
    run_doc["command"] = "edit";
    run_doc["backend"] = backend_to_json(global, *backend);
    run_doc["spec"] = spec_to_json(spec, inputs.mask_path);
    run_doc["config"] = config_to_json(config);
    run_doc["inversion_provider"] = inversion.id();
    if (result.diverged) {
        run_doc["divergence"] = {{"timestep", result.divergence_timestep},
                                 {"iteration", result.divergence_iteration},
                                 {"message", result.divergence_message}};
        write_edit_outputs(inputs.out_dir, result, EditAssessment{}, run_doc);
        std::fprintf(stderr, "edit diverged: %s\n", result.divergence_message.c_str());
        return 3;
    }
    EditAssessment assessment = session.assess(result);
    write_edit_outputs(inputs.out_dir, result, assessment, run_doc);
    std::printf("edited %s (%s, %d steps) -> %s\n", inputs.input_path.c_str(),
                to_string(config.strategy).c_str(), result.steps_run, inputs.out_dir.c_str());
    return 0;
}

int run_ablate(const GlobalOptions& global, const EditInputs& inputs,
               const ConfigOverrides& overrides, const std::vector<std::string>& strategy_names,
               const CLI::App* cmd) {
    auto backend = make_backend(global);
    EditSpec spec = build_spec(inputs);
    EditConfig base_config = resolve_config(spec.edit_type, overrides, cmd);
    AlphaSchedule schedule = make_schedule(global, base_config.scheduler.total_steps);
    base_config.scheduler.total_steps = schedule.max_timestep();
    LatentGrid z0 = read_latent(inputs.input_path, 0);
    DdimInversion inversion;

    std::filesystem::create_directories(inputs.out_dir);
    std::string summary = "strategy        status     final_sa_loss  final_mean_ratio\n";
    for (const std::string& name : strategy_names) {
        EditConfig config = base_config;
        config.strategy = gradient_strategy_from_string(name);
        ReferenceCapture references =
            capture_reference_maps(z0, spec, config, schedule, *backend, inversion);
        EditSession session(spec, config, schedule, *backend, std::move(references));
        EditResult result = session.run();

        const std::string dir = inputs.out_dir + "/" + name;
        nlohmann::json run_doc;
        run_doc["command"] = "ablate";
        run_doc["backend"] = backend_to_json(global, *backend);
        run_doc["spec"] = spec_to_json(spec, inputs.mask_path);
        run_doc["config"] = config_to_json(config);
        run_doc["inversion_provider"] = inversion.id();

        char line[128];
        if (result.diverged) {
            run_doc["divergence"] = {{"timestep", result.divergence_timestep},
                                     {"iteration", result.divergence_iteration},
                                     {"message", result.divergence_message}};
            write_edit_outputs(dir, result, EditAssessment{}, run_doc);
            std::snprintf(line, sizeof(line), "%-15s diverged(t=%d)             -               -\n",
                          name.c_str(), result.divergence_timestep);
        } else {
            EditAssessment assessment = session.assess(result);
            write_edit_outputs(dir, result, assessment, run_doc);
            std::snprintf(line, sizeof(line), "%-15s ok         %13.6f  %16.6f\n", name.c_str(),
                          assessment.final_sa_loss, assessment.final_mean_ratio);
        }
        summary += line;
    }
    write_text_file(inputs.out_dir + "/summary.txt", summary);
    std::fputs(summary.c_str(), stdout);
    return 0;
}

int run_bench(const GlobalOptions& global, const std::string& manifest_path,
              const std::string& out_dir, const std::string& method_tag,
              const ConfigOverrides& overrides, const CLI::App* cmd) {
    auto backend = make_backend(global);
    std::vector<BenchItem> items = load_manifest(manifest_path);
    detail::require(!items.empty(), "bench: manifest is empty");
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& relative) {
        std::filesystem::path p(relative);
        return p.is_absolute() ? p.string() : (base / p).string();
    };

    DdimInversion inversion;
    StubStructureMetric structure;
    StubAlignmentMetric alignment;
    std::vector<MetricRecord> records;
    for (const BenchItem& item : items) {
        EditSpec spec;
        spec.source_prompt = item.source_prompt;
        spec.target_prompt = item.target_prompt;
        spec.target_tokens = item.target_tokens;
        spec.edit_type = item.edit_type;
        if (item.mask_path) spec.mask = mask_from_pgm(resolve(*item.mask_path));
        EditConfig config = resolve_config(item.edit_type, overrides, cmd);
        AlphaSchedule schedule = make_schedule(global, config.scheduler.total_steps);
        config.scheduler.total_steps = schedule.max_timestep();

        LatentGrid original = read_latent(resolve(item.image_path), 0);
        EditResult result = run_edit(original, spec, config, schedule, *backend, inversion);
        records.push_back(evaluate_item(item, original, result.edited_latent, structure,
                                        alignment,
                                        caption_for_image(resolve(item.image_path))));
    }

    BenchSummary summary = aggregate(records, items, method_tag);
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/summary.txt", format_summary(summary));
    write_text_file(out_dir + "/scatter.csv", format_scatter_csv(summary));
    nlohmann::json records_doc = nlohmann::json::array();
    for (const MetricRecord& record : records) {
        records_doc.push_back({{"id", record.id},
                               {"dino_similarity", record.dino_similarity},
                               {"clip_score", record.clip_score},
                               {"provider_ids", record.provider_ids}});
    }
    nlohmann::json run_doc;
    run_doc["command"] = "bench";
    run_doc["backend"] = backend_to_json(global, *backend);
    run_doc["manifest"] = manifest_path;
    run_doc["method_tag"] = method_tag;
    run_doc["records"] = records_doc;
    write_json(out_dir + "/records.json", run_doc);
    std::fputs(format_summary(summary).c_str(), stdout);
    return 0;
}

int run_trace(const std::string& input_path, const std::string& out_path) {
    GradientTrace trace = load_trace(input_path);
    write_text_file(out_path, format_trace_long(trace));
    std::printf("wrote %zu rows in long format -> %s\n", trace.rows.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-constrained latent diffusion editing"};
    app.require_subcommand(1);

    GlobalOptions global;
    app.add_option("--seed", global.seed, "Backend weight seed")->capture_default_str();
    app.add_option("--backend", global.backend, "toy or adapter:<id>")->capture_default_str();
    app.add_option("--backend-config", global.backend_config_path,
                   "JSON file with backend construction parameters");
    app.add_option("--schedule", global.schedule_path,
                   "Alpha schedule file (one value per line); defaults to linear-beta");

    // invert
    auto* invert_cmd = app.add_subcommand("invert", "Noise a clean latent deterministically");
    std::string invert_input, invert_prompt, invert_out, invert_trajectory_dir;
    int invert_steps = 50;
    invert_cmd->add_option("--input", invert_input, "Clean latent (.arr)")->required();
    invert_cmd->add_option("--prompt", invert_prompt, "Conditioning prompt")->required();
    invert_cmd->add_option("--steps", invert_steps, "Inversion steps")->capture_default_str();
    invert_cmd->add_option("--out", invert_out, "Terminal latent output path (.arr)")->required();
    invert_cmd->add_option("--trajectory-dir", invert_trajectory_dir,
                           "Also write every intermediate latent into this directory");

    // edit
    auto* edit_cmd = app.add_subcommand("edit", "Run one constrained edit");
    EditInputs edit_inputs;
    ConfigOverrides edit_overrides;
    add_edit_inputs(edit_cmd, edit_inputs);
    add_config_options(edit_cmd, edit_overrides);

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Sweep gradient strategies on one edit");
    EditInputs ablate_inputs;
    ConfigOverrides ablate_overrides;
    std::vector<std::string> ablate_strategies = {"naive", "norm", "blc", "sap_only", "caa_only"};
    add_edit_inputs(ablate_cmd, ablate_inputs);
    add_config_options(ablate_cmd, ablate_overrides);
    ablate_cmd->add_option("--strategies", ablate_strategies, "Strategies to sweep")
        ->delimiter(',')
        ->capture_default_str();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Edit and score a benchmark manifest");
    std::string bench_manifest, bench_out, bench_tag = "blc";
    ConfigOverrides bench_overrides;
    bench_cmd->add_option("--manifest", bench_manifest, "JSON Lines manifest")->required();
    bench_cmd->add_option("--out", bench_out, "Output directory")->required();
    bench_cmd->add_option("--method-tag", bench_tag, "Label for scatter rows")
        ->capture_default_str();
    add_config_options(bench_cmd, bench_overrides);

    // trace
    auto* trace_cmd = app.add_subcommand("trace", "Convert a trace CSV to long format");
    std::string trace_input, trace_out;
    trace_cmd->add_option("--input", trace_input, "Wide trace CSV")->required();
    trace_cmd->add_option("--out", trace_out, "Long-format output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (invert_cmd->parsed()) {
            return run_invert(global, invert_input, invert_prompt, invert_steps, invert_out,
                              invert_trajectory_dir);
        }
        if (edit_cmd->parsed()) {
            return run_edit_command(global, edit_inputs, edit_overrides, edit_cmd);
        }
        if (ablate_cmd->parsed()) {
            return run_ablate(global, ablate_inputs, ablate_overrides, ablate_strategies,
                              ablate_cmd);
        }
        if (bench_cmd->parsed()) {
            return run_bench(global, bench_manifest, bench_out, bench_tag, bench_overrides,
                             bench_cmd);
        }
        if (trace_cmd->parsed()) {
            return run_trace(trace_input, trace_out);
        }
    } catch (const divergence_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
