#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "unifyedit/attention.hpp"
#include "unifyedit/errors.hpp"
#include "unifyedit/mask.hpp"

namespace unifyedit {

// Ratios this close to zero are clamped before the square root so the
// alignment loss stays differentiable.
inline constexpr double kMinRatio = 1e-12;

namespace detail {

inline const AttentionMap& matching_layer(std::span<const AttentionMap> maps,
                                          const AttentionMap& probe,
                                          const char* caller) {
    const AttentionMap* found = nullptr;
    for (const AttentionMap& m : maps) {
        if (m.layer_id == probe.layer_id && m.resolution == probe.resolution) {
            require(found == nullptr,
                    std::string(caller) + ": duplicate layer id " + std::to_string(probe.layer_id));
            found = &m;
        }
    }
    require(found != nullptr, std::string(caller) + ": no reference map for layer id " +
                                  std::to_string(probe.layer_id) + " at resolution " +
                                  std::to_string(probe.resolution));
    require_shape(found->map.rows() == probe.map.rows() && found->map.cols() == probe.map.cols(),
                  std::string(caller) + ": reference/current map shapes differ");
    return *found;
}

}  // namespace detail

// Sum of squared differences between matched reference and current
// self-attention maps, summed over layers and entries. Layers are matched by
// (layer_id, resolution); every current layer must have exactly one
// counterpart.
inline double sa_preservation(std::span<const AttentionMap> reference,
                              std::span<const AttentionMap> current) {
    detail::require(!current.empty(), "sa_preservation: no attention maps given");
    detail::require(reference.size() == current.size(),
                    "sa_preservation: layer counts differ");
    double loss = 0.0;
    for (const AttentionMap& cur : current) {
        const AttentionMap& ref = detail::matching_layer(reference, cur, "sa_preservation");
        loss += (cur.map - ref.map).squaredNorm();
    }
    return loss;
}

// Gradient of sa_preservation with respect to one current map.
inline Eigen::MatrixXd sa_preservation_map_gradient(const AttentionMap& reference,
                                                    const AttentionMap& current) {
    detail::require_shape(reference.map.rows() == current.map.rows() &&
                              reference.map.cols() == current.map.cols(),
                          "sa_preservation_map_gradient: shape mismatch");
    return 2.0 * (current.map - reference.map);
}

// Region-restricted variant: differences are weighted by the outer product
// m m^T of the flattened region mask at the map's resolution, so only
// query/key pairs inside the region contribute.
inline double region_sa_preservation(std::span<const AttentionMap> reference,
                                     std::span<const AttentionMap> current,
                                     std::span<const SAMaskOuter> outers) {
    detail::require(!current.empty(), "region_sa_preservation: no attention maps given");
    detail::require(reference.size() == current.size(),
                    "region_sa_preservation: layer counts differ");
    double loss = 0.0;
    for (const AttentionMap& cur : current) {
        const AttentionMap& ref = detail::matching_layer(reference, cur, "region_sa_preservation");
        const SAMaskOuter* outer = nullptr;
        for (const SAMaskOuter& o : outers) {
            if (o.resolution == cur.resolution) outer = &o;
        }
        detail::require(outer != nullptr,
                        "region_sa_preservation: no mask outer product for resolution " +
                            std::to_string(cur.resolution));
        detail::require_shape(outer->matrix.rows() == cur.map.rows() &&
                                  outer->matrix.cols() == cur.map.cols(),
                              "region_sa_preservation: mask outer product shape mismatch");
        loss += outer->matrix.cwiseProduct(cur.map - ref.map).squaredNorm();
    }
    return loss;
}

inline Eigen::MatrixXd region_sa_preservation_map_gradient(const AttentionMap& reference,
                                                           const AttentionMap& current,
                                                           const SAMaskOuter& outer) {
    detail::require_shape(reference.map.rows() == current.map.rows() &&
                              reference.map.cols() == current.map.cols() &&
                              outer.matrix.rows() == current.map.rows() &&
                              outer.matrix.cols() == current.map.cols(),
                          "region_sa_preservation_map_gradient: shape mismatch");
    // Entries of the outer product are 0 or 1, so the weight squares away.
    return 2.0 * outer.matrix.cwiseProduct(current.map - reference.map);
}

// Inside/outside attention ratio of one cross-attention column. With a mask
// that selects everything the denominator vanishes, and the ratio degrades
// gracefully to the inside mean.
inline double ca_ratio_column(const Eigen::VectorXd& column, const FlattenedMask& mask) {
    mask.validate();
    detail::require_shape(column.size() == mask.vector.size(),
                          "ca_ratio_column: column length does not match mask");
    double inside_count = mask.vector.sum();
    double outside_count = static_cast<double>(mask.vector.size()) - inside_count;
    detail::require(inside_count > 0.0,
                    "ca_ratio_column: mask selects no cells at this resolution");
    double inside_mean = column.dot(mask.vector) / inside_count;
    if (outside_count == 0.0) return inside_mean;
    double outside_sum = column.sum() - column.dot(mask.vector);
    double outside_mean = outside_sum / outside_count;
    detail::require(outside_mean != 0.0,
                    "ca_ratio_column: outside attention mass is exactly zero");
    return inside_mean / outside_mean;
}

// Gradient of ca_ratio_column with respect to the column.
inline Eigen::VectorXd ca_ratio_column_gradient(const Eigen::VectorXd& column,
                                                const FlattenedMask& mask) {
    mask.validate();
    detail::require_shape(column.size() == mask.vector.size(),
                          "ca_ratio_column_gradient: column length does not match mask");
    double inside_count = mask.vector.sum();
    double outside_count = static_cast<double>(mask.vector.size()) - inside_count;
    detail::require(inside_count > 0.0,
                    "ca_ratio_column_gradient: mask selects no cells at this resolution");
    Eigen::VectorXd grad(column.size());
    if (outside_count == 0.0) {
        grad.setConstant(1.0 / inside_count);
        return grad;
    }
    double inside_mean = column.dot(mask.vector) / inside_count;
    double outside_sum = column.sum() - column.dot(mask.vector);
    double outside_mean = outside_sum / outside_count;
    detail::require(outside_mean != 0.0,
                    "ca_ratio_column_gradient: outside attention mass is exactly zero");
    double ratio = inside_mean / outside_mean;
    for (Eigen::Index j = 0; j < column.size(); ++j) {
        if (mask.vector[j] == 1.0) {
            grad[j] = 1.0 / (inside_count * outside_mean);
        } else {
            grad[j] = -ratio / (outside_mean * outside_count);
        }
    }
    return grad;
}

// Extracts the effective column for a token group: the per-cell mean of the
// group's cross-attention columns. Single tokens are a group of one.
inline Eigen::VectorXd group_column(const Eigen::MatrixXd& ca_map,
                                    std::span<const int> group) {
    detail::require(!group.empty(), "group_column: empty token group");
    Eigen::VectorXd column = Eigen::VectorXd::Zero(ca_map.rows());
    for (int idx : group) {
        detail::require(idx >= 0 && idx < ca_map.cols(),
                        "group_column: token index " + std::to_string(idx) +
                            " out of range for " + std::to_string(ca_map.cols()) + " columns");
        column += ca_map.col(idx);
    }
    return column / static_cast<double>(group.size());
}

// Alignment loss over target tokens: for each token group, the per-layer
// ratios are clamped, square-rooted, summed over layers, squared, and
// negated; groups are averaged. Maximizing total in-region attention across
// layers therefore minimizes this loss.
inline double ca_alignment(std::span<const AttentionMap> ca_layers,
                           std::span<const std::vector<int>> token_groups,
                           const FlattenedMask& mask) {
    detail::require(!ca_layers.empty(), "ca_alignment: no cross-attention maps given");
    detail::require(!token_groups.empty(), "ca_alignment: no target tokens given");
    double loss = 0.0;
    for (const std::vector<int>& group : token_groups) {
        double root_sum = 0.0;
        for (const AttentionMap& layer : ca_layers) {
            double ratio = ca_ratio_column(group_column(layer.map, group), mask);
            root_sum += std::sqrt(std::max(ratio, kMinRatio));
        }
        loss -= root_sum * root_sum;
    }
    return loss / static_cast<double>(token_groups.size());
}

// Per-layer gradients of ca_alignment with respect to the cross-attention
// maps, in the same order as ca_layers.
inline std::vector<Eigen::MatrixXd> ca_alignment_map_gradients(
    std::span<const AttentionMap> ca_layers,
    std::span<const std::vector<int>> token_groups, const FlattenedMask& mask) {
    detail::require(!ca_layers.empty(), "ca_alignment_map_gradients: no maps given");
    detail::require(!token_groups.empty(), "ca_alignment_map_gradients: no target tokens given");
    std::vector<Eigen::MatrixXd> grads;
    grads.reserve(ca_layers.size());
    for (const AttentionMap& layer : ca_layers) {
        grads.push_back(Eigen::MatrixXd::Zero(layer.map.rows(), layer.map.cols()));
    }
    const double group_count = static_cast<double>(token_groups.size());
    for (const std::vector<int>& group : token_groups) {
        std::vector<double> ratios(ca_layers.size());
        double root_sum = 0.0;
        for (std::size_t l = 0; l < ca_layers.size(); ++l) {
            ratios[l] = ca_ratio_column(group_column(ca_layers[l].map, group), mask);
            root_sum += std::sqrt(std::max(ratios[l], kMinRatio));
        }
        for (std::size_t l = 0; l < ca_layers.size(); ++l) {
            if (ratios[l] <= kMinRatio) continue;  // clamped: locally constant
            double dloss_dratio =
                -root_sum / (group_count * std::sqrt(std::max(ratios[l], kMinRatio)));
            Eigen::VectorXd column = group_column(ca_layers[l].map, group);
            Eigen::VectorXd dratio = ca_ratio_column_gradient(column, mask);
            Eigen::VectorXd dcolumn = dloss_dratio * dratio;
            for (int idx : group) {
                grads[l].col(idx) += dcolumn / static_cast<double>(group.size());
            }
        }
    }
    return grads;
}

// Diagnostic: mean ratio across layers and token groups, used to report how
// concentrated target-token attention is inside the region.
inline double mean_ca_ratio(std::span<const AttentionMap> ca_layers,
                            std::span<const std::vector<int>> token_groups,
                            const FlattenedMask& mask) {
    detail::require(!ca_layers.empty() && !token_groups.empty(),
                    "mean_ca_ratio: need maps and token groups");
    double total = 0.0;
    for (const std::vector<int>& group : token_groups) {
        for (const AttentionMap& layer : ca_layers) {
            total += ca_ratio_column(group_column(layer.map, group), mask);
        }
    }
    return total / static_cast<double>(token_groups.size() * ca_layers.size());
}

}  // namespace unifyedit
