#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unifyedit/backend.hpp"
#include "unifyedit/errors.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/mask.hpp"

namespace unifyedit {

// Classifier-free guidance: push the conditional prediction away from the
// unconditional one by the guidance scale.
inline Eigen::VectorXd cfg_noise(const Eigen::VectorXd& eps_uncond,
                                 const Eigen::VectorXd& eps_cond, double scale) {
    detail::require_shape(eps_uncond.size() == eps_cond.size(),
                          "cfg_noise: prediction sizes differ");
    detail::require(std::isfinite(scale) && scale > 0.0, "cfg_noise: scale must be positive");
    return eps_uncond + scale * (eps_cond - eps_uncond);
}

namespace detail {

inline LatentGrid ddim_transport(const LatentGrid& z, const Eigen::VectorXd& eps,
                                 double alpha_from, double alpha_to, int timestep_delta,
                                 const char* caller) {
    z.validate();
    require_shape(eps.size() == z.size(), std::string(caller) + ": eps size does not match latent");
    require(alpha_from > 0.0 && alpha_from <= 1.0 && alpha_to > 0.0 && alpha_to <= 1.0,
            std::string(caller) + ": alphas must lie in (0, 1]");
    // Deterministic transport of the current noise estimate between two
    // signal-retention levels:
    //   z' = sqrt(a_to / a_from) z + sqrt(a_to) (sqrt(1/a_to - 1) - sqrt(1/a_from - 1)) eps
    // For a fixed eps this map is an exact bijection between the two levels,
    // which is what makes inversion followed by sampling an identity.
    const double coef_z = std::sqrt(alpha_to / alpha_from);
    const double coef_eps = std::sqrt(alpha_to) *
                            (std::sqrt(1.0 / alpha_to - 1.0) - std::sqrt(1.0 / alpha_from - 1.0));
    LatentGrid out = z;
    out.values = coef_z * z.values + coef_eps * eps;
    out.timestep = z.timestep + timestep_delta;
    return out;
}

}  // namespace detail

// One noising step: carries the latent from signal level alpha_t up to the
// noisier level alpha_next and advances the timestep tag.
inline LatentGrid ddim_invert_step(const LatentGrid& z, const Eigen::VectorXd& eps,
                                   double alpha_t, double alpha_next) {
    return detail::ddim_transport(z, eps, alpha_t, alpha_next, +1, "ddim_invert_step");
}

// One denoising step: carries the latent from signal level alpha_t down to
// the cleaner level alpha_prev and decrements the timestep tag.
inline LatentGrid ddim_sample_step(const LatentGrid& z, const Eigen::VectorXd& eps,
                                   double alpha_t, double alpha_prev) {
    return detail::ddim_transport(z, eps, alpha_t, alpha_prev, -1, "ddim_sample_step");
}

enum class TrajectoryDirection { inversion, sampling };

// Latents visited by a full inversion or sampling run, index i tagged with
// timestep latents[i].timestep. When attention capture was requested,
// bundles[i] holds the maps recorded while predicting noise at latents[i]
// (the terminal latent has no prediction of its own).
struct Trajectory {
    std::vector<LatentGrid> latents;
    std::vector<AttentionBundle> bundles;
    TrajectoryDirection direction = TrajectoryDirection::inversion;

    void validate() const {
        detail::require(latents.size() >= 2, "Trajectory: need at least two latents");
        const int step = direction == TrajectoryDirection::inversion ? 1 : -1;
        for (std::size_t i = 0; i < latents.size(); ++i) {
            latents[i].validate();
            if (i > 0) {
                detail::require(latents[i].timestep == latents[i - 1].timestep + step,
                                "Trajectory: timestep tags are not consecutive");
                detail::require_shape(latents[i].same_shape(latents[0]),
                                      "Trajectory: latent shapes differ");
            }
        }
        detail::require(bundles.empty() || bundles.size() == latents.size() - 1,
                        "Trajectory: bundle count must be zero or latent count minus one");
    }

    const LatentGrid& at_timestep(int t) const {
        for (const LatentGrid& z : latents) {
            if (z.timestep == t) return z;
        }
        throw validation_error("Trajectory: no latent tagged with timestep " + std::to_string(t));
    }
};

// Deterministic DDIM inversion of a clean latent through every schedule step.
// The noise estimate uses the conditional prompt only (guidance scale 1), so
// the recorded trajectory can be replayed exactly by the sampler.
inline Trajectory invert_trajectory(const LatentGrid& z0, const PromptEncoding& prompt,
                                    const AlphaSchedule& schedule, const DiffusionBackend& backend,
                                    const std::optional<CaptureConfig>& capture = std::nullopt) {
    z0.validate();
    schedule.validate();
    detail::require(z0.timestep == 0, "invert_trajectory: input latent must be tagged t=0");
    const int total = schedule.max_timestep();
    detail::require(total <= backend.info().max_timestep,
                    "invert_trajectory: schedule exceeds backend timestep range");

    Trajectory trajectory;
    trajectory.direction = TrajectoryDirection::inversion;
    trajectory.latents.reserve(static_cast<std::size_t>(total) + 1);
    trajectory.latents.push_back(z0);
    const bool keep_bundles = capture.has_value();
    CaptureConfig effective = capture.value_or(CaptureConfig{});
    for (int t = 0; t < total; ++t) {
        NoisePrediction prediction =
            backend.predict_noise(trajectory.latents.back(), t, prompt, effective);
        trajectory.latents.push_back(ddim_invert_step(trajectory.latents.back(), prediction.eps,
                                                      schedule.at(t), schedule.at(t + 1)));
        if (keep_bundles) trajectory.bundles.push_back(std::move(prediction.bundle));
    }
    trajectory.validate();
    return trajectory;
}

// Keeps the target latent inside the mask and the source latent outside it.
inline LatentGrid blend_latents(const LatentGrid& target, const LatentGrid& source,
                                const BinaryMask& mask) {
    target.validate();
    source.validate();
    mask.validate(true);
    detail::require_shape(target.same_shape(source), "blend_latents: latent shapes differ");
    detail::require(target.timestep == source.timestep,
                    "blend_latents: latents are tagged with different timesteps");
    detail::require_shape(mask.height() == target.height && mask.width() == target.width,
                          "blend_latents: mask must match latent spatial size");
    LatentGrid out = target;
    for (int c = 0; c < target.channels; ++c) {
        for (int y = 0; y < target.height; ++y) {
            for (int x = 0; x < target.width; ++x) {
                if (mask.values(y, x) == 0.0) out.at(c, y, x) = source.at(c, y, x);
            }
        }
    }
    return out;
}

// Pluggable inversion strategy; the deterministic DDIM pass below is the
// reference implementation and the default everywhere.
class InversionProvider {
public:
    virtual ~InversionProvider() = default;
    virtual std::string id() const = 0;
    virtual Trajectory invert(const LatentGrid& z0, const PromptEncoding& prompt,
                              const AlphaSchedule& schedule, const DiffusionBackend& backend,
                              const std::optional<CaptureConfig>& capture) const = 0;
};

class DdimInversion final : public InversionProvider {
public:
    std::string id() const override { return "ddim"; }
    Trajectory invert(const LatentGrid& z0, const PromptEncoding& prompt,
                      const AlphaSchedule& schedule, const DiffusionBackend& backend,
                      const std::optional<CaptureConfig>& capture) const override {
        return invert_trajectory(z0, prompt, schedule, backend, capture);
    }
};

}  // namespace unifyedit
