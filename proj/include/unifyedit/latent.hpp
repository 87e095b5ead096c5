#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "unifyedit/errors.hpp"

namespace unifyedit {

// Latent tensor in channel-major layout: values[(c * height + y) * width + x].
// The timestep tag records which diffusion step the latent belongs to
// (0 = clean, max = fully noised) and is advanced by the sampler ops.
struct LatentGrid {
    Eigen::VectorXd values;
    int channels = 0;
    int height = 0;
    int width = 0;
    int timestep = 0;

    static LatentGrid zeros(int channels, int height, int width, int timestep = 0) {
        LatentGrid g;
        g.channels = channels;
        g.height = height;
        g.width = width;
        g.timestep = timestep;
        g.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(channels) * height * width);
        return g;
    }

    int spatial_size() const { return height * width; }
    Eigen::Index size() const { return values.size(); }

    double& at(int c, int y, int x) {
        return values[(static_cast<Eigen::Index>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return values[(static_cast<Eigen::Index>(c) * height + y) * width + x];
    }

    bool same_shape(const LatentGrid& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }

    bool all_finite() const { return values.allFinite(); }

    void validate() const {
        detail::require(channels > 0 && height > 0 && width > 0,
                        "LatentGrid: dimensions must be positive");
        detail::require_shape(values.size() == static_cast<Eigen::Index>(channels) * height * width,
                              "LatentGrid: values size does not match channels*height*width");
        detail::require(timestep >= 0, "LatentGrid: timestep must be non-negative");
    }
};

// Cumulative signal-retention schedule indexed by timestep. alphas[0] belongs
// to the clean image and stays close to 1; alphas[t] decreases strictly as t
// grows toward the terminal step.
struct AlphaSchedule {
    std::vector<double> alphas;

    int max_timestep() const { return static_cast<int>(alphas.size()) - 1; }

    double at(int t) const {
        detail::require(t >= 0 && t <= max_timestep(),
                        "AlphaSchedule: timestep " + std::to_string(t) + " out of range [0, " +
                            std::to_string(max_timestep()) + "]");
        return alphas[static_cast<std::size_t>(t)];
    }

    void validate() const {
        detail::require(alphas.size() >= 2, "AlphaSchedule: need at least two entries");
        detail::require(alphas.front() > 0.99 && alphas.front() <= 1.0,
                        "AlphaSchedule: alphas[0] must lie in (0.99, 1]");
        for (std::size_t i = 0; i < alphas.size(); ++i) {
            detail::require(std::isfinite(alphas[i]) && alphas[i] > 0.0 && alphas[i] <= 1.0,
                            "AlphaSchedule: entries must lie in (0, 1]");
            if (i > 0) {
                detail::require(alphas[i] < alphas[i - 1],
                                "AlphaSchedule: entries must be strictly decreasing");
            }
        }
    }

    // Classic linear-beta construction: per-step noise rates interpolate
    // linearly from beta_start to beta_end over `steps` steps and alphas[t]
    // stores the running product of (1 - beta) over the first t steps.
    static AlphaSchedule linear_beta(int steps, double beta_start = 1e-4, double beta_end = 0.08) {
        detail::require(steps >= 1, "AlphaSchedule: steps must be >= 1");
        detail::require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
                        "AlphaSchedule: betas must satisfy 0 < beta_start <= beta_end < 1");
        AlphaSchedule s;
        s.alphas.resize(static_cast<std::size_t>(steps) + 1);
        s.alphas[0] = 1.0;
        double cumulative = 1.0;
        for (int t = 1; t <= steps; ++t) {
            double beta = beta_start;
            if (steps > 1) beta += (beta_end - beta_start) * (t - 1) / (steps - 1);
            cumulative *= 1.0 - beta;
            s.alphas[static_cast<std::size_t>(t)] = cumulative;
        }
        s.validate();
        return s;
    }
};

}  // namespace unifyedit
