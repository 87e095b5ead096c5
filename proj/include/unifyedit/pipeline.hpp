#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unifyedit/backend.hpp"
#include "unifyedit/constraints.hpp"
#include "unifyedit/errors.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/mask.hpp"
#include "unifyedit/sampler.hpp"
#include "unifyedit/scheduler.hpp"
#include "unifyedit/toy_backend.hpp"

namespace unifyedit {

enum class EditType { color, texture, object_replacement, background, style, face };

inline std::string to_string(EditType type) {
    switch (type) {
        case EditType::color: return "color";
        case EditType::texture: return "texture";
        case EditType::object_replacement: return "object_replacement";
        case EditType::background: return "background";
        case EditType::style: return "style";
        case EditType::face: return "face";
    }
    return "unknown";
}

inline EditType edit_type_from_string(const std::string& name) {
    if (name == "color") return EditType::color;
    if (name == "texture") return EditType::texture;
    if (name == "object_replacement") return EditType::object_replacement;
    if (name == "background") return EditType::background;
    if (name == "style") return EditType::style;
    if (name == "face") return EditType::face;
    throw validation_error("unknown edit type: '" + name + "'");
}

enum class SapMode { global, region };
enum class SaSource { source_branch, inversion_trajectory };
enum class GuidanceMode { latent_optimization, noise_guidance };

inline std::string to_string(SapMode mode) {
    return mode == SapMode::global ? "global" : "region";
}
inline std::string to_string(SaSource source) {
    return source == SaSource::source_branch ? "source_branch" : "inversion_trajectory";
}
inline std::string to_string(GuidanceMode mode) {
    return mode == GuidanceMode::latent_optimization ? "latent_optimization" : "noise_guidance";
}

inline SapMode sap_mode_from_string(const std::string& name) {
    if (name == "global") return SapMode::global;
    if (name == "region") return SapMode::region;
    throw validation_error("unknown sap mode: '" + name + "' (expected global or region)");
}
inline SaSource sa_source_from_string(const std::string& name) {
    if (name == "source_branch") return SaSource::source_branch;
    if (name == "inversion_trajectory") return SaSource::inversion_trajectory;
    throw validation_error("unknown sa source: '" + name +
                           "' (expected source_branch or inversion_trajectory)");
}
inline GuidanceMode guidance_mode_from_string(const std::string& name) {
    if (name == "latent_optimization") return GuidanceMode::latent_optimization;
    if (name == "noise_guidance") return GuidanceMode::noise_guidance;
    throw validation_error("unknown guidance mode: '" + name +
                           "' (expected latent_optimization or noise_guidance)");
}

// What to edit: the prompt pair, the words of the target prompt that describe
// the change, and the region it may touch. Style edits are global and ignore
// the mask; every other type requires one.
struct EditSpec {
    std::string source_prompt;
    std::string target_prompt;
    std::vector<std::string> target_tokens;
    std::optional<BinaryMask> mask;
    EditType edit_type = EditType::color;

    void validate() const {
        detail::require(!source_prompt.empty() && !target_prompt.empty(),
                        "EditSpec: prompts must be non-empty");
        if (edit_type != EditType::style) {
            detail::require(mask.has_value(),
                            "EditSpec: edit type '" + to_string(edit_type) + "' requires a mask");
        }
        if (mask) mask->validate();
    }
};

// How to run the edit. tau1/tau2 bound the alignment/preservation windows:
// a constraint is active at timestep t exactly when t >= tau.
struct EditConfig {
    SchedulerParams scheduler;
    int tau1 = 25;
    int tau2 = 25;
    int max_iterations = 1;
    double cfg_scale = 7.5;
    std::set<int> sa_resolutions;  // empty: every resolution the backend declares
    SapMode sap_mode = SapMode::global;
    SaSource sa_source = SaSource::source_branch;
    GuidanceMode guidance_mode = GuidanceMode::latent_optimization;
    GradientStrategy strategy = GradientStrategy::balanced;

    void validate() const {
        scheduler.validate();
        detail::require(tau1 >= 1 && tau1 <= scheduler.total_steps,
                        "EditConfig: tau1 must lie in [1, total_steps]");
        detail::require(tau2 >= 1 && tau2 <= scheduler.total_steps,
                        "EditConfig: tau2 must lie in [1, total_steps]");
        detail::require(max_iterations >= 1, "EditConfig: max_iterations must be >= 1");
        detail::require(std::isfinite(cfg_scale) && cfg_scale > 0.0,
                        "EditConfig: cfg_scale must be positive");
    }
};

// Per-type defaults. The decay rate tracks how aggressive the edit is: slow
// for color changes, fast for faces, so alignment pressure tapers off sooner
// the more invasive the edit. Color edits keep the alignment window open
// almost to the end; object replacement additionally preserves coarse
// self-attention and restricts preservation to the edited region.
inline EditConfig preset_for_edit_type(EditType type) {
    EditConfig config;
    config.scheduler.beta1 = 5.0;
    config.scheduler.beta2 = 5.0;
    config.scheduler.total_steps = 50;
    config.scheduler.form = SchedulerForm::by_progress;
    config.tau1 = 25;
    config.tau2 = 25;
    config.max_iterations = 1;
    config.cfg_scale = 7.5;
    double rate = 0.05;
    switch (type) {
        case EditType::color:
            rate = 0.05;
            config.tau1 = 5;
            break;
        case EditType::texture: rate = 0.08; break;
        case EditType::background: rate = 0.08; break;
        case EditType::object_replacement:
            rate = 0.15;
            config.sa_resolutions = {16, 8};
            config.sap_mode = SapMode::region;
            break;
        case EditType::style: rate = 0.1; break;
        case EditType::face: rate = 0.25; break;
    }
    config.scheduler.k1 = rate;
    config.scheduler.k2 = rate;
    return config;
}

// One optimization iteration's diagnostics. Inactive constraint columns hold
// NaN. The lambda columns always record the scheduled weight pair at t, even
// for strategies that combine with static amplitudes, so a trace can be
// checked against the schedule independently of the strategy. The grad
// columns describe each term's actual contribution to the applied update.
struct TraceRow {
    int t = 0;
    int iteration = 0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double loss_sap = std::numeric_limits<double>::quiet_NaN();
    double loss_caa = std::numeric_limits<double>::quiet_NaN();
    double grad_sap_mean_abs = std::numeric_limits<double>::quiet_NaN();
    double grad_caa_mean_abs = std::numeric_limits<double>::quiet_NaN();
    double grad_sap_l2 = std::numeric_limits<double>::quiet_NaN();
    double grad_caa_l2 = std::numeric_limits<double>::quiet_NaN();
};

struct GradientTrace {
    std::vector<TraceRow> rows;
};

struct EditResult {
    LatentGrid edited_latent;
    LatentGrid final_source_latent;
    GradientTrace trace;
    EditConfig config;
    int steps_run = 0;
    bool diverged = false;
    int divergence_timestep = -1;
    int divergence_iteration = -1;
    std::string divergence_message;
};

// Final-state quality numbers: preservation as the unmasked self-attention
// discrepancy between the finished branches at t=0, alignment as the mean
// in-region attention ratio of the target tokens (NaN when there are none).
struct EditAssessment {
    double final_sa_loss = std::numeric_limits<double>::quiet_NaN();
    double final_mean_ratio = std::numeric_limits<double>::quiet_NaN();
};

// Output of the reference-preparation stage: the fully noised latent both
// branches start from, plus the whole inversion trajectory. The trajectory
// carries attention bundles only when the edit will use recorded maps as its
// preservation reference instead of a live source branch.
struct ReferenceCapture {
    LatentGrid z_terminal;
    Trajectory inversion;
};

// Intersection of the configured self-attention resolutions with what the
// backend declares; an empty configuration selects everything.
inline std::set<int> effective_sa_resolutions(const EditConfig& config,
                                              const BackendInfo& info) {
    std::set<int> effective;
    for (int r : info.sa_resolutions) {
        if (config.sa_resolutions.empty() || config.sa_resolutions.count(r)) {
            effective.insert(r);
        }
    }
    detail::require(!effective.empty(),
                    "EditConfig: none of the configured self-attention resolutions exist on "
                    "this backend");
    return effective;
}

inline ReferenceCapture capture_reference_maps(const LatentGrid& z0, const EditSpec& spec,
                                               const EditConfig& config,
                                               const AlphaSchedule& schedule,
                                               const DiffusionBackend& backend,
                                               const InversionProvider& provider) {
    spec.validate();
    config.validate();
    std::optional<CaptureConfig> capture;
    if (config.sa_source == SaSource::inversion_trajectory) {
        capture = CaptureConfig{effective_sa_resolutions(config, backend.info()), {},
                                CapturePass::conditional};
    }
    PromptEncoding source_prompt = backend.encode_prompt(spec.source_prompt);
    ReferenceCapture refs;
    refs.inversion = provider.invert(z0, source_prompt, schedule, backend, capture);
    refs.z_terminal = refs.inversion.latents.back();
    return refs;
}

struct BranchState {
    LatentGrid source;
    LatentGrid target;
};

// Holds everything resolved once per edit (prompt encodings, token groups,
// masks at every needed resolution, references) and drives the dual-branch
// denoising loop. Construct it through run_edit unless a test needs to step
// manually.
class EditSession {
public:
    EditSession(EditSpec spec, EditConfig config, AlphaSchedule schedule,
                const DiffusionBackend& backend, ReferenceCapture references)
        : spec_(std::move(spec)),
          config_(std::move(config)),
          schedule_(std::move(schedule)),
          backend_(backend),
          references_(std::move(references)) {
        spec_.validate();
        config_.validate();
        schedule_.validate();
        detail::require(schedule_.max_timestep() == config_.scheduler.total_steps,
                        "EditSession: schedule length does not match scheduler total_steps");
        detail::require(schedule_.max_timestep() <= backend_.info().max_timestep,
                        "EditSession: schedule exceeds backend timestep range");

        const BackendInfo& info = backend_.info();
        resolve_sa_resolutions(info);

        prompt_source_ = backend_.encode_prompt(spec_.source_prompt);
        prompt_target_ = backend_.encode_prompt(spec_.target_prompt);
        prompt_uncond_ = backend_.unconditional_prompt();
        resolve_token_groups();

        // Style edits operate globally; the update/blend mask covers all
        // cells and latent blending is skipped entirely.
        if (spec_.edit_type == EditType::style) {
            latent_mask_ = BinaryMask::all_ones(info.height, info.width);
            blend_enabled_ = false;
        } else {
            latent_mask_ = resample_mask(*spec_.mask, info.height, info.width);
            latent_mask_.validate();
            blend_enabled_ = true;
        }
        ca_mask_ = mask_at_resolution(latent_mask_, info.primary_ca_resolution());
        detail::require(ca_mask_.vector.sum() > 0.0,
                        "EditSession: mask selects no cells at the cross-attention resolution");
        if (config_.sap_mode == SapMode::region) {
            for (int r : effective_sa_resolutions_) {
                sa_outers_.push_back(mask_outer(mask_at_resolution(latent_mask_, r)));
            }
        }

        capture_ = CaptureConfig{effective_sa_resolutions_,
                                 {info.primary_ca_resolution()},
                                 CapturePass::conditional};

        if (config_.sa_source == SaSource::inversion_trajectory) {
            detail::require(!references_.inversion.bundles.empty(),
                            "EditSession: inversion trajectory reference requires captured "
                            "attention bundles");
            const std::size_t expected =
                effective_sa_resolutions_.size() *
                static_cast<std::size_t>(info.sa_layers_per_resolution);
            detail::require(
                references_.inversion.bundles.front().sa_at(effective_sa_resolutions_).size() ==
                    expected,
                "EditSession: captured bundles lack the configured self-attention resolutions");
        }
        references_.z_terminal.validate();
        detail::require(references_.z_terminal.timestep == schedule_.max_timestep(),
                        "EditSession: terminal latent must be tagged with the last timestep");
    }

    const EditSpec& spec() const { return spec_; }
    const EditConfig& config() const { return config_; }
    const BinaryMask& latent_mask() const { return latent_mask_; }
    const std::vector<std::vector<int>>& token_groups() const { return token_groups_; }

    bool sap_active_at(int t) const {
        return config_.strategy != GradientStrategy::caa_only && t >= config_.tau2;
    }
    bool caa_active_at(int t) const {
        return config_.strategy != GradientStrategy::sap_only && !token_groups_.empty() &&
               t >= config_.tau1;
    }

    struct OptimizeResult {
        LatentGrid target;
        Eigen::VectorXd noise_adjustment;  // zero unless guidance_mode is noise_guidance
        std::vector<TraceRow> rows;
    };

    // The inner loop at one timestep: evaluates the active constraints on the
    // two branches and applies max_iterations masked updates to the target
    // latent (or, in noise-guidance mode, derives an additive noise
    // correction and leaves the latent untouched).
    OptimizeResult optimize(const LatentGrid& z_source, const LatentGrid& z_target) const {
        const int t = z_target.timestep;
        detail::require(z_source.timestep == t,
                        "optimize: branch latents are tagged with different timesteps");
        detail::require(t >= 1 && t <= schedule_.max_timestep(),
                        "optimize: timestep out of range");
        OptimizeResult result;
        result.target = z_target;
        result.noise_adjustment = Eigen::VectorXd::Zero(z_target.size());
        const bool sap_active = sap_active_at(t);
        const bool caa_active = caa_active_at(t);
        if (!sap_active && !caa_active) return result;

        for (int iteration = 1; iteration <= config_.max_iterations; ++iteration) {
            try {
                run_iteration(z_source, t, iteration, sap_active, caa_active, result);
            } catch (const divergence_error&) {
                throw;
            } catch (const validation_error& e) {
                // All user inputs were validated up front, so a validation
                // failure here means the optimization drove the latent into a
                // degenerate state (e.g. saturated attention).
                throw divergence_error(t, iteration,
                                       "optimization reached a degenerate state at t=" +
                                           std::to_string(t) + ", iteration " +
                                           std::to_string(iteration) + ": " + e.what());
            }
        }
        return result;
    }

    struct StepResult {
        BranchState next;
        std::vector<TraceRow> rows;
    };

    // One full timestep: constraint optimization, then the guided DDIM step
    // for both branches, then latent blending.
    StepResult step(const BranchState& state) const {
        detail::require(state.source.timestep == state.target.timestep,
                        "step: branch latents are tagged with different timesteps");
        const int t = state.target.timestep;
        detail::require(t >= 1 && t <= schedule_.max_timestep(), "step: timestep out of range");

        OptimizeResult optimized = optimize(state.source, state.target);

        StepResult result;
        result.rows = std::move(optimized.rows);

        Eigen::VectorXd eps_target = guided_noise(optimized.target, prompt_target_);
        if (config_.guidance_mode == GuidanceMode::noise_guidance) {
            eps_target = apply_noise_guidance(eps_target, optimized.noise_adjustment);
        }
        result.next.target = ddim_sample_step(optimized.target, eps_target, schedule_.at(t),
                                              schedule_.at(t - 1));

        if (config_.sa_source == SaSource::inversion_trajectory) {
            result.next.source = references_.inversion.at_timestep(t - 1);
        } else {
            Eigen::VectorXd eps_source = guided_noise(state.source, prompt_source_);
            result.next.source = ddim_sample_step(state.source, eps_source, schedule_.at(t),
                                                  schedule_.at(t - 1));
        }

        if (!result.next.target.all_finite() || !result.next.source.all_finite()) {
            throw divergence_error(t, config_.max_iterations,
                                   "sampling step produced non-finite values at t=" +
                                       std::to_string(t));
        }

        if (blend_enabled_) {
            result.next.target = blend_latents(result.next.target, result.next.source,
                                               latent_mask_);
        }
        return result;
    }

    EditResult run() const {
        EditResult result;
        result.config = config_;
        BranchState state{references_.z_terminal, references_.z_terminal};
        const int total = schedule_.max_timestep();
        for (int t = total; t >= 1; --t) {
            try {
                StepResult step_result = step(state);
                state = std::move(step_result.next);
                for (TraceRow& row : step_result.rows) {
                    result.trace.rows.push_back(row);
                }
                ++result.steps_run;
            } catch (const divergence_error& e) {
                result.diverged = true;
                result.divergence_timestep = e.timestep;
                result.divergence_iteration = e.iteration;
                result.divergence_message = e.what();
                break;
            }
        }
        result.edited_latent = state.target;
        result.final_source_latent = state.source;
        return result;
    }

    EditAssessment assess(const EditResult& result) const {
        EditAssessment assessment;
        NoisePrediction source_pass =
            backend_.predict_noise(result.final_source_latent, 0, prompt_source_, capture_);
        NoisePrediction target_pass =
            backend_.predict_noise(result.edited_latent, 0, prompt_target_, capture_);
        assessment.final_sa_loss = sa_preservation(source_pass.bundle.sa_layers,
                                                   target_pass.bundle.sa_layers);
        if (!token_groups_.empty()) {
            std::vector<AttentionMap> ca =
                target_pass.bundle.ca_at(backend_.info().primary_ca_resolution());
            assessment.final_mean_ratio = mean_ca_ratio(ca, token_groups_, ca_mask_);
        }
        return assessment;
    }

private:
    void resolve_sa_resolutions(const BackendInfo& info) {
        effective_sa_resolutions_ = effective_sa_resolutions(config_, info);
    }

    // Maps each requested target word onto the indices of its (possibly
    // multiple) occurrences in the target prompt tokenization; multi-word
    // targets contribute every word's indices to one group.
    void resolve_token_groups() {
        for (const std::string& target : spec_.target_tokens) {
            std::vector<std::string> wanted = ToyBackend::tokenize(target);
            detail::require(!wanted.empty(),
                            "EditSpec: target token '" + target + "' normalizes to nothing");
            std::vector<int> group;
            for (const std::string& token : wanted) {
                bool found = false;
                for (int i = 0; i < prompt_target_.token_count(); ++i) {
                    if (prompt_target_.token_strings[static_cast<std::size_t>(i)] == token) {
                        group.push_back(i);
                        found = true;
                    }
                }
                detail::require(found, "EditSpec: target token '" + token +
                                           "' does not occur in the target prompt");
            }
            std::sort(group.begin(), group.end());
            group.erase(std::unique(group.begin(), group.end()), group.end());
            token_groups_.push_back(std::move(group));
        }
    }

    Eigen::VectorXd guided_noise(const LatentGrid& z, const PromptEncoding& prompt) const {
        // Capture is irrelevant here; restrict it to one resolution per kind
        // to avoid building bundles nobody reads.
        CaptureConfig minimal;
        minimal.sa_resolutions = {backend_.info().sa_resolutions.front()};
        minimal.ca_resolutions = {backend_.info().ca_resolutions.front()};
        Eigen::VectorXd eps_cond = backend_.predict_noise(z, z.timestep, prompt, minimal).eps;
        Eigen::VectorXd eps_uncond =
            backend_.predict_noise(z, z.timestep, prompt_uncond_, minimal).eps;
        return cfg_noise(eps_uncond, eps_cond, config_.cfg_scale);
    }

    std::vector<AttentionMap> reference_sa_for(const LatentGrid& z_source, int t) const {
        if (config_.sa_source == SaSource::inversion_trajectory) {
            // The inversion never evaluates at the terminal step, so t = T
            // falls back to the last recorded bundle.
            const int index = std::min(t, static_cast<int>(references_.inversion.bundles.size()) -
                                              1);
            return references_.inversion.bundles[static_cast<std::size_t>(index)].sa_at(
                capture_.sa_resolutions);
        }
        NoisePrediction pass = backend_.predict_noise(z_source, t, prompt_source_, capture_);
        return pass.bundle.sa_at(capture_.sa_resolutions);
    }

    void run_iteration(const LatentGrid& z_source, int t, int iteration, bool sap_active,
                       bool caa_active, OptimizeResult& result) const {
        NoisePrediction target_pass =
            backend_.predict_noise(result.target, t, prompt_target_, capture_);
        std::vector<AttentionMap> target_sa = target_pass.bundle.sa_at(capture_.sa_resolutions);
        std::vector<AttentionMap> target_ca =
            target_pass.bundle.ca_at(backend_.info().primary_ca_resolution());

        TraceRow row;
        row.t = t;
        row.iteration = iteration;
        LambdaWeights scheduled = lambda_weights(t, config_.scheduler);
        row.lambda1 = scheduled.lambda1;
        row.lambda2 = scheduled.lambda2;

        Eigen::VectorXd grad_sap = Eigen::VectorXd::Zero(result.target.size());
        Eigen::VectorXd grad_caa = Eigen::VectorXd::Zero(result.target.size());
        if (sap_active) {
            std::vector<AttentionMap> reference_sa = reference_sa_for(z_source, t);
            ConstraintDescriptor descriptor;
            if (config_.sap_mode == SapMode::region) {
                row.loss_sap = region_sa_preservation(reference_sa, target_sa, sa_outers_);
                descriptor = ConstraintDescriptor::region_sap_on(
                    std::move(reference_sa), latent_mask_, effective_sa_resolutions_);
            } else {
                row.loss_sap = sa_preservation(reference_sa, target_sa);
                descriptor = ConstraintDescriptor::sap_on(std::move(reference_sa),
                                                          effective_sa_resolutions_);
            }
            grad_sap = backend_.latent_gradient(result.target, t, prompt_target_, descriptor);
        }
        if (caa_active) {
            row.loss_caa = ca_alignment(target_ca, token_groups_, ca_mask_);
            ConstraintDescriptor descriptor =
                ConstraintDescriptor::caa_on(token_groups_, latent_mask_);
            grad_caa = backend_.latent_gradient(result.target, t, prompt_target_, descriptor);
        }

        const bool normalize = config_.strategy != GradientStrategy::naive;
        double weight1 = 0.0;
        double weight2 = 0.0;
        switch (config_.strategy) {
            case GradientStrategy::naive:
            case GradientStrategy::norm:
                weight1 = config_.scheduler.beta1;
                weight2 = config_.scheduler.beta2;
                break;
            case GradientStrategy::balanced:
            case GradientStrategy::sap_only:
            case GradientStrategy::caa_only:
                weight1 = scheduled.lambda1;
                weight2 = scheduled.lambda2;
                break;
        }

        Eigen::VectorXd term_sap =
            sap_active ? detail::weighted_term(grad_sap, weight1, normalize)
                       : Eigen::VectorXd::Zero(result.target.size());
        Eigen::VectorXd term_caa =
            caa_active ? detail::weighted_term(grad_caa, weight2, normalize)
                       : Eigen::VectorXd::Zero(result.target.size());
        if (sap_active) {
            row.grad_sap_mean_abs = term_sap.cwiseAbs().mean();
            row.grad_sap_l2 = term_sap.norm();
        }
        if (caa_active) {
            row.grad_caa_mean_abs = term_caa.cwiseAbs().mean();
            row.grad_caa_l2 = term_caa.norm();
        }

        Eigen::VectorXd combined = term_sap + term_caa;
        if (!combined.allFinite()) {
            throw divergence_error(t, iteration, "combined gradient is non-finite at t=" +
                                                     std::to_string(t));
        }

        if (config_.guidance_mode == GuidanceMode::latent_optimization) {
            result.target = apply_update(result.target, combined, latent_mask_);
            if (!result.target.all_finite()) {
                throw divergence_error(t, iteration, "latent update diverged at t=" +
                                                         std::to_string(t));
            }
        } else {
            // Noise guidance leaves the latent alone; the latest combined
            // gradient becomes the additive noise correction for this step.
            result.noise_adjustment = combined;
        }
        result.rows.push_back(row);
    }

    EditSpec spec_;
    EditConfig config_;
    AlphaSchedule schedule_;
    const DiffusionBackend& backend_;
    ReferenceCapture references_;

    PromptEncoding prompt_source_;
    PromptEncoding prompt_target_;
    PromptEncoding prompt_uncond_;
    std::vector<std::vector<int>> token_groups_;
    BinaryMask latent_mask_;
    FlattenedMask ca_mask_;
    std::vector<SAMaskOuter> sa_outers_;
    std::set<int> effective_sa_resolutions_;
    CaptureConfig capture_;
    bool blend_enabled_ = true;
};

// End-to-end edit of a clean latent: invert with the source prompt, denoise
// both branches with constraint optimization, and return the edited latent.
// Raises divergence_error if any update or sampling step blows up.
inline EditResult run_edit(const LatentGrid& z0, const EditSpec& spec, const EditConfig& config,
                           const AlphaSchedule& schedule, const DiffusionBackend& backend,
                           const InversionProvider& provider) {
    ReferenceCapture references =
        capture_reference_maps(z0, spec, config, schedule, backend, provider);
    EditSession session(spec, config, schedule, backend, std::move(references));
    EditResult result = session.run();
    if (result.diverged) {
        throw divergence_error(result.divergence_timestep, result.divergence_iteration,
                               result.divergence_message);
    }
    return result;
}

}  // namespace unifyedit
