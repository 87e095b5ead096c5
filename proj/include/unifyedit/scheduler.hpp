#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "unifyedit/errors.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/mask.hpp"

namespace unifyedit {

// Gradient terms whose norm falls below this are treated as zero instead of
// being normalized, so a vanished constraint cannot be blown up to unit size.
inline constexpr double kZeroNormGuard = 1e-12;

// Two published shapes of the time-dependent weight pair. by_progress (the
// default) drives the exponents with the number of completed denoising steps
// T - t, so the preservation weight starts at exactly 0 at t = T and the
// alignment weight starts at exactly beta2. by_timestep drives them with the
// raw timestep t instead, with the roles of the two exponentials swapped;
// the curves are qualitatively similar but none of the endpoints are exact.
enum class SchedulerForm { by_progress, by_timestep };

inline std::string to_string(SchedulerForm form) {
    return form == SchedulerForm::by_progress ? "by_progress" : "by_timestep";
}

inline SchedulerForm scheduler_form_from_string(const std::string& name) {
    if (name == "by_progress") return SchedulerForm::by_progress;
    if (name == "by_timestep") return SchedulerForm::by_timestep;
    throw validation_error("unknown scheduler form: '" + name +
                           "' (expected by_progress or by_timestep)");
}

struct SchedulerParams {
    double beta1 = 5.0;
    double beta2 = 5.0;
    double k1 = 0.05;
    double k2 = 0.05;
    int total_steps = 50;
    SchedulerForm form = SchedulerForm::by_progress;

    // beta may be exactly zero: forcing one side's amplitude to zero is how
    // the single-constraint ablations are expressed.
    void validate() const {
        detail::require(std::isfinite(beta1) && beta1 >= 0.0 && std::isfinite(beta2) &&
                            beta2 >= 0.0,
                        "SchedulerParams: amplitudes must be non-negative");
        detail::require(std::isfinite(k1) && k1 > 0.0 && std::isfinite(k2) && k2 > 0.0,
                        "SchedulerParams: rates must be strictly positive");
        detail::require(total_steps >= 1, "SchedulerParams: total_steps must be >= 1");
    }
};

struct LambdaWeights {
    double lambda1 = 0.0;  // scales the preservation gradient
    double lambda2 = 0.0;  // scales the alignment gradient
};

// Time-dependent balance between preservation and alignment: early denoising
// steps (t near T) favor alignment, late steps favor preservation.
inline LambdaWeights lambda_weights(int t, const SchedulerParams& params) {
    params.validate();
    detail::require(t >= 1 && t <= params.total_steps,
                    "lambda_weights: t must lie in [1, total_steps]");
    LambdaWeights w;
    if (params.form == SchedulerForm::by_progress) {
        const double completed = static_cast<double>(params.total_steps - t);
        w.lambda1 = params.beta1 * (1.0 - std::exp(-params.k1 * completed));
        w.lambda2 = params.beta2 * std::exp(-params.k2 * completed);
    } else {
        w.lambda1 = params.beta1 * std::exp(-params.k1 * static_cast<double>(t));
        w.lambda2 = params.beta2 * (1.0 - std::exp(-params.k2 * static_cast<double>(t)));
    }
    return w;
}

enum class GradientStrategy { naive, norm, balanced, sap_only, caa_only };

inline std::string to_string(GradientStrategy strategy) {
    switch (strategy) {
        case GradientStrategy::naive: return "naive";
        case GradientStrategy::norm: return "norm";
        case GradientStrategy::balanced: return "blc";
        case GradientStrategy::sap_only: return "sap_only";
        case GradientStrategy::caa_only: return "caa_only";
    }
    return "unknown";
}

inline GradientStrategy gradient_strategy_from_string(const std::string& name) {
    if (name == "naive") return GradientStrategy::naive;
    if (name == "norm") return GradientStrategy::norm;
    if (name == "blc") return GradientStrategy::balanced;
    if (name == "sap_only") return GradientStrategy::sap_only;
    if (name == "caa_only") return GradientStrategy::caa_only;
    throw validation_error("unknown gradient strategy: '" + name +
                           "' (expected naive, norm, blc, sap_only or caa_only)");
}

struct CombinedGradient {
    Eigen::VectorXd values;
    GradientStrategy strategy = GradientStrategy::balanced;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
};

namespace detail {

// One weighted term of a combined update. With normalization the term is
// scaled to length lambda; the guard leaves genuinely vanished gradients at
// zero rather than inflating noise to unit length.
inline Eigen::VectorXd weighted_term(const Eigen::VectorXd& gradient, double lambda,
                                     bool normalize) {
    if (!normalize) return lambda * gradient;
    const double norm = gradient.norm();
    if (norm < kZeroNormGuard) return Eigen::VectorXd::Zero(gradient.size());
    return (lambda / norm) * gradient;
}

inline void check_same_size(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                            const char* caller) {
    require_shape(a.size() == b.size(), std::string(caller) + ": gradient sizes differ");
}

}  // namespace detail

// Raw weighted sum of the two constraint gradients.
inline CombinedGradient combine_naive(const Eigen::VectorXd& grad_sap,
                                      const Eigen::VectorXd& grad_caa, double lambda1,
                                      double lambda2) {
    detail::check_same_size(grad_sap, grad_caa, "combine_naive");
    CombinedGradient g;
    g.strategy = GradientStrategy::naive;
    g.lambda1 = lambda1;
    g.lambda2 = lambda2;
    g.values = detail::weighted_term(grad_sap, lambda1, false) +
               detail::weighted_term(grad_caa, lambda2, false);
    return g;
}

// Weighted sum of the unit-normalized gradients, removing the raw magnitude
// imbalance between the two terms.
inline CombinedGradient combine_normalized(const Eigen::VectorXd& grad_sap,
                                           const Eigen::VectorXd& grad_caa, double lambda1,
                                           double lambda2) {
    detail::check_same_size(grad_sap, grad_caa, "combine_normalized");
    CombinedGradient g;
    g.strategy = GradientStrategy::norm;
    g.lambda1 = lambda1;
    g.lambda2 = lambda2;
    g.values = detail::weighted_term(grad_sap, lambda1, true) +
               detail::weighted_term(grad_caa, lambda2, true);
    return g;
}

// Normalized combination with the time-dependent weight pair: the balanced
// update the editing loop uses by default.
inline CombinedGradient combine_balanced(const Eigen::VectorXd& grad_sap,
                                         const Eigen::VectorXd& grad_caa, int t,
                                         const SchedulerParams& params) {
    LambdaWeights w = lambda_weights(t, params);
    CombinedGradient g = combine_normalized(grad_sap, grad_caa, w.lambda1, w.lambda2);
    g.strategy = GradientStrategy::balanced;
    return g;
}

// Masked latent update z - M .* g with the spatial mask broadcast across
// channels. Cells outside the mask keep their exact bit pattern.
inline LatentGrid apply_update(const LatentGrid& z, const Eigen::VectorXd& gradient,
                               const BinaryMask& mask) {
    z.validate();
    detail::require_shape(gradient.size() == z.size(),
                          "apply_update: gradient size does not match latent");
    mask.validate(true);
    detail::require_shape(mask.height() == z.height && mask.width() == z.width,
                          "apply_update: mask must match latent spatial size");
    LatentGrid out = z;
    for (int c = 0; c < z.channels; ++c) {
        for (int y = 0; y < z.height; ++y) {
            for (int x = 0; x < z.width; ++x) {
                if (mask.values(y, x) == 1.0) {
                    const Eigen::Index i =
                        (static_cast<Eigen::Index>(c) * z.height + y) * z.width + x;
                    out.values[i] = z.values[i] - gradient[i];
                }
            }
        }
    }
    return out;
}

// Guidance applied in noise space instead of latent space: the combined
// gradient is subtracted from the noise prediction before the sampler step.
inline Eigen::VectorXd apply_noise_guidance(const Eigen::VectorXd& eps,
                                            const Eigen::VectorXd& gradient) {
    detail::check_same_size(eps, gradient, "apply_noise_guidance");
    return eps - gradient;
}

}  // namespace unifyedit
