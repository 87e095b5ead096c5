#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "unifyedit/attention.hpp"
#include "unifyedit/errors.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/mask.hpp"

namespace unifyedit {

// Which attention maps a noise prediction should record. Empty resolution
// sets mean "everything the backend declares". Capture never changes the
// predicted noise, only what is reported alongside it.
struct CaptureConfig {
    std::set<int> sa_resolutions;
    std::set<int> ca_resolutions;
    CapturePass capture_pass = CapturePass::conditional;
};

enum class ConstraintKind { sap, region_sap, caa };

inline std::string to_string(ConstraintKind kind) {
    switch (kind) {
        case ConstraintKind::sap: return "sap";
        case ConstraintKind::region_sap: return "region_sap";
        case ConstraintKind::caa: return "caa";
    }
    return "unknown";
}

// Everything a backend needs to evaluate one attention constraint and
// differentiate it with respect to the latent:
//  - sap:        reference_sa, optional sa_resolutions restriction
//  - region_sap: reference_sa plus mask (at the latent's spatial size)
//  - caa:        token_groups plus mask
// token_groups lists, per target token, the prompt token indices whose
// cross-attention columns are averaged; single tokens are a group of one.
struct ConstraintDescriptor {
    ConstraintKind kind = ConstraintKind::sap;
    std::vector<AttentionMap> reference_sa;
    std::optional<BinaryMask> mask;
    std::vector<std::vector<int>> token_groups;
    std::set<int> sa_resolutions;

    static ConstraintDescriptor sap_on(std::vector<AttentionMap> reference,
                                       std::set<int> resolutions = {}) {
        ConstraintDescriptor d;
        d.kind = ConstraintKind::sap;
        d.reference_sa = std::move(reference);
        d.sa_resolutions = std::move(resolutions);
        return d;
    }

    static ConstraintDescriptor region_sap_on(std::vector<AttentionMap> reference,
                                              BinaryMask region,
                                              std::set<int> resolutions = {}) {
        ConstraintDescriptor d;
        d.kind = ConstraintKind::region_sap;
        d.reference_sa = std::move(reference);
        d.mask = std::move(region);
        d.sa_resolutions = std::move(resolutions);
        return d;
    }

    static ConstraintDescriptor caa_on(std::vector<std::vector<int>> groups, BinaryMask region) {
        ConstraintDescriptor d;
        d.kind = ConstraintKind::caa;
        d.token_groups = std::move(groups);
        d.mask = std::move(region);
        return d;
    }

    // Convenience for plain token index lists: each index becomes its own
    // group.
    static ConstraintDescriptor caa_on_tokens(const std::vector<int>& token_indices,
                                              BinaryMask region) {
        std::vector<std::vector<int>> groups;
        groups.reserve(token_indices.size());
        for (int idx : token_indices) groups.push_back({idx});
        return caa_on(std::move(groups), std::move(region));
    }

    void validate() const {
        switch (kind) {
            case ConstraintKind::sap:
                detail::require(!reference_sa.empty(),
                                "ConstraintDescriptor: sap needs reference maps");
                break;
            case ConstraintKind::region_sap:
                detail::require(!reference_sa.empty(),
                                "ConstraintDescriptor: region_sap needs reference maps");
                detail::require(mask.has_value(), "ConstraintDescriptor: region_sap needs a mask");
                break;
            case ConstraintKind::caa:
                detail::require(!token_groups.empty(),
                                "ConstraintDescriptor: caa needs target token groups");
                detail::require(mask.has_value(), "ConstraintDescriptor: caa needs a mask");
                for (const std::vector<int>& group : token_groups) {
                    detail::require(!group.empty(),
                                    "ConstraintDescriptor: empty token group");
                }
                break;
        }
        if (mask) mask->validate();
    }
};

struct BackendInfo {
    std::string id;
    int channels = 0;
    int height = 0;
    int width = 0;
    int max_timestep = 0;
    std::vector<int> sa_resolutions;
    std::vector<int> ca_resolutions;
    int sa_layers_per_resolution = 0;
    int ca_layers_per_resolution = 0;
    int embed_dim = 0;

    // Cross-attention constraints operate on the finest declared resolution.
    int primary_ca_resolution() const {
        detail::require(!ca_resolutions.empty(), "BackendInfo: no cross-attention resolutions");
        return *std::max_element(ca_resolutions.begin(), ca_resolutions.end());
    }
};

struct NoisePrediction {
    Eigen::VectorXd eps;  // same flat layout as the latent values
    AttentionBundle bundle;
};

// Denoising model abstraction. Implementations must be deterministic: the
// same (z, t, prompt, capture) always yields bitwise-identical results, and
// capture settings must not influence eps. latent_gradient differentiates
// the described constraint loss, evaluated on the attention maps of a fresh
// forward pass at (z, t, prompt), with respect to z.
class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual const BackendInfo& info() const = 0;
    virtual PromptEncoding encode_prompt(std::string_view text) const = 0;
    virtual PromptEncoding unconditional_prompt() const = 0;
    virtual NoisePrediction predict_noise(const LatentGrid& z, int t,
                                          const PromptEncoding& prompt,
                                          const CaptureConfig& capture) const = 0;
    virtual Eigen::VectorXd latent_gradient(const LatentGrid& z, int t,
                                            const PromptEncoding& prompt,
                                            const ConstraintDescriptor& constraint) const = 0;

protected:
    void check_query(const LatentGrid& z, int t) const {
        const BackendInfo& i = info();
        detail::require_shape(z.channels == i.channels && z.height == i.height &&
                                  z.width == i.width,
                              "DiffusionBackend: latent shape does not match backend");
        detail::require(z.values.allFinite(), "DiffusionBackend: latent has non-finite values");
        detail::require(t >= 0 && t <= i.max_timestep,
                        "DiffusionBackend: timestep " + std::to_string(t) + " out of range [0, " +
                            std::to_string(i.max_timestep) + "]");
    }

    void check_capture(const CaptureConfig& capture) const {
        const BackendInfo& i = info();
        for (int r : capture.sa_resolutions) {
            detail::require(std::find(i.sa_resolutions.begin(), i.sa_resolutions.end(), r) !=
                                i.sa_resolutions.end(),
                            "CaptureConfig: self-attention resolution " + std::to_string(r) +
                                " not declared by backend");
        }
        for (int r : capture.ca_resolutions) {
            detail::require(std::find(i.ca_resolutions.begin(), i.ca_resolutions.end(), r) !=
                                i.ca_resolutions.end(),
                            "CaptureConfig: cross-attention resolution " + std::to_string(r) +
                                " not declared by backend");
        }
    }
};

using BackendPtr = std::shared_ptr<const DiffusionBackend>;

}  // namespace unifyedit
