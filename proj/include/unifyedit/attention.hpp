#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "unifyedit/errors.hpp"

namespace unifyedit {

// Token embeddings for one prompt, one row per token. token_strings keeps the
// normalized token text so target words can be matched back to columns of the
// cross-attention maps.
struct PromptEncoding {
    Eigen::MatrixXd token_embeddings;  // tokens x embed_dim
    std::vector<std::string> token_strings;

    int token_count() const { return static_cast<int>(token_embeddings.rows()); }

    void validate() const {
        detail::require(token_embeddings.rows() >= 1, "PromptEncoding: need at least one token");
        detail::require_shape(static_cast<Eigen::Index>(token_strings.size()) ==
                                  token_embeddings.rows(),
                              "PromptEncoding: token strings and embeddings disagree");
    }
};

enum class CapturePass { conditional, unconditional };

// One attention probability map. Self-attention maps are square
// (resolution^2 x resolution^2); cross-attention maps have one column per
// prompt token. layer_id is unique within its backend and stable across
// calls so that maps from different passes can be matched up.
struct AttentionMap {
    int layer_id = 0;
    int resolution = 0;
    Eigen::MatrixXd map;
};

struct AttentionBundle {
    std::vector<AttentionMap> sa_layers;
    std::vector<AttentionMap> ca_layers;
    CapturePass source_pass = CapturePass::conditional;

    std::vector<AttentionMap> sa_at(const std::set<int>& resolutions) const {
        std::vector<AttentionMap> out;
        for (const AttentionMap& m : sa_layers) {
            if (resolutions.empty() || resolutions.count(m.resolution)) out.push_back(m);
        }
        return out;
    }

    std::vector<AttentionMap> ca_at(int resolution) const {
        std::vector<AttentionMap> out;
        for (const AttentionMap& m : ca_layers) {
            if (m.resolution == resolution) out.push_back(m);
        }
        return out;
    }
};

// Numerically stable row-wise softmax.
inline Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::ArrayXd row = logits.row(i).array();
        Eigen::ArrayXd shifted = (row - row.maxCoeff()).exp();
        out.row(i) = (shifted / shifted.sum()).matrix();
    }
    return out;
}

// Given probabilities = row_softmax(logits) and an upstream gradient with
// respect to the probabilities, returns the gradient with respect to the
// logits: per row, a .* (g - dot(g, a)).
inline Eigen::MatrixXd row_softmax_backward(const Eigen::MatrixXd& probabilities,
                                            const Eigen::MatrixXd& upstream) {
    detail::require_shape(probabilities.rows() == upstream.rows() &&
                              probabilities.cols() == upstream.cols(),
                          "row_softmax_backward: shape mismatch");
    Eigen::MatrixXd out(probabilities.rows(), probabilities.cols());
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
        double inner = probabilities.row(i).dot(upstream.row(i));
        out.row(i) = probabilities.row(i).cwiseProduct(
            (upstream.row(i).array() - inner).matrix());
    }
    return out;
}

struct AttentionResult {
    Eigen::MatrixXd output;  // queries x value_dim
    Eigen::MatrixXd map;     // queries x keys, rows sum to 1
};

// Scaled dot-product attention: map = row_softmax(Q K^T / sqrt(d)),
// output = map * V. d defaults to the query feature dimension.
inline AttentionResult compute_attention(const Eigen::MatrixXd& queries,
                                         const Eigen::MatrixXd& keys,
                                         const Eigen::MatrixXd& values, int d = 0) {
    if (d == 0) d = static_cast<int>(queries.cols());
    detail::require(d > 0, "compute_attention: d must be positive");
    detail::require_shape(queries.cols() == keys.cols(),
                          "compute_attention: query/key feature dims differ");
    detail::require_shape(keys.rows() == values.rows(),
                          "compute_attention: key/value row counts differ");
    AttentionResult result;
    Eigen::MatrixXd logits = queries * keys.transpose() / std::sqrt(static_cast<double>(d));
    result.map = row_softmax(logits);
    result.output = result.map * values;
    return result;
}

}  // namespace unifyedit
