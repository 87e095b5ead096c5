#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "unifyedit/attention.hpp"

using namespace unifyedit;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    }
    return m;
}

}  // namespace

TEST(RowSoftmax, TwoLogitOracle) {
    // softmax(1/sqrt(2), 0), evaluated independently at double precision.
    Eigen::MatrixXd logits(1, 2);
    logits << 1.0 / std::sqrt(2.0), 0.0;
    Eigen::MatrixXd p = row_softmax(logits);
    EXPECT_NEAR(p(0, 0), 0.66976154932665693, 1e-15);
    EXPECT_NEAR(p(0, 1), 0.33023845067334307, 1e-15);
    EXPECT_DOUBLE_EQ(p(0, 0) + p(0, 1), 1.0);
}

TEST(RowSoftmax, RowsAreStochasticAndShiftInvariant) {
    Eigen::MatrixXd logits = random_matrix(5, 7, 99);
    Eigen::MatrixXd p = row_softmax(logits);
    for (int r = 0; r < p.rows(); ++r) {
        EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-14);
        for (int c = 0; c < p.cols(); ++c) EXPECT_GT(p(r, c), 0.0);
    }
    Eigen::MatrixXd shifted = logits;
    shifted.array() += 123.25;  // per-row constant shift must not change anything
    Eigen::MatrixXd q = row_softmax(shifted);
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(RowSoftmax, SurvivesExtremeLogits) {
    Eigen::MatrixXd logits(1, 3);
    logits << 5000.0, -5000.0, 4999.0;
    Eigen::MatrixXd p = row_softmax(logits);
    EXPECT_TRUE(p.allFinite());
    EXPECT_NEAR(p.row(0).sum(), 1.0, 1e-14);
}

TEST(RowSoftmaxBackward, MatchesFiniteDifferences) {
    const Eigen::MatrixXd logits = random_matrix(3, 4, 7);
    const Eigen::MatrixXd upstream = random_matrix(3, 4, 8);
    const Eigen::MatrixXd probabilities = row_softmax(logits);
    const Eigen::MatrixXd analytic = row_softmax_backward(probabilities, upstream);

    const double h = 1e-6;
    for (int r = 0; r < logits.rows(); ++r) {
        for (int c = 0; c < logits.cols(); ++c) {
            Eigen::MatrixXd plus = logits, minus = logits;
            plus(r, c) += h;
            minus(r, c) -= h;
            const double f_plus = (row_softmax(plus).array() * upstream.array()).sum();
            const double f_minus = (row_softmax(minus).array() * upstream.array()).sum();
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            EXPECT_NEAR(analytic(r, c), numeric, 1e-7) << "entry (" << r << "," << c << ")";
        }
    }
}

TEST(ComputeAttention, UniformWhenQueryIsZero) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 3);
    Eigen::MatrixXd k = random_matrix(4, 3, 11);
    Eigen::MatrixXd v = random_matrix(4, 5, 12);
    AttentionResult r = compute_attention(q, k, v);
    Eigen::RowVectorXd mean = v.colwise().mean();
    for (int row = 0; row < 2; ++row) {
        EXPECT_LT((r.output.row(row) - mean).cwiseAbs().maxCoeff(), 1e-14);
        for (int col = 0; col < 4; ++col) EXPECT_NEAR(r.map(row, col), 0.25, 1e-15);
    }
}

TEST(ComputeAttention, ScalesLogitsByInverseSqrtDim) {
    Eigen::MatrixXd q(1, 2), k(2, 2), v(2, 1);
    q << 1.0, 0.0;
    k << 1.0, 0.0, 0.0, 1.0;
    v << 1.0, 0.0;
    AttentionResult r = compute_attention(q, k, v);  // d defaults to q.cols() = 2
    EXPECT_NEAR(r.map(0, 0), 0.66976154932665693, 1e-15);
    EXPECT_NEAR(r.map(0, 1), 0.33023845067334307, 1e-15);
    EXPECT_NEAR(r.output(0, 0), 0.66976154932665693, 1e-15);
}

TEST(ComputeAttention, RejectsMismatchedShapes) {
    Eigen::MatrixXd q = random_matrix(2, 3, 1);
    Eigen::MatrixXd k = random_matrix(4, 2, 2);  // key dim != query dim
    Eigen::MatrixXd v = random_matrix(4, 5, 3);
    EXPECT_THROW(compute_attention(q, k, v), shape_error);
    Eigen::MatrixXd k_ok = random_matrix(4, 3, 4);
    Eigen::MatrixXd v_bad = random_matrix(3, 5, 5);  // value rows != key rows
    EXPECT_THROW(compute_attention(q, k_ok, v_bad), shape_error);
}

TEST(AttentionBundle, SelectsByResolutionAndSet) {
    AttentionBundle bundle;
    bundle.sa_layers = {AttentionMap{0, 16, Eigen::MatrixXd::Zero(2, 2)},
                        AttentionMap{1, 8, Eigen::MatrixXd::Zero(2, 2)},
                        AttentionMap{2, 16, Eigen::MatrixXd::Zero(2, 2)}};
    bundle.ca_layers = {AttentionMap{3, 16, Eigen::MatrixXd::Zero(2, 3)}};
    EXPECT_EQ(bundle.sa_at({16}).size(), 2u);
    EXPECT_EQ(bundle.sa_at({8}).size(), 1u);
    EXPECT_EQ(bundle.sa_at({}).size(), 3u);  // empty set keeps every layer
    EXPECT_EQ(bundle.ca_at(16).size(), 1u);
    EXPECT_EQ(bundle.ca_at(8).size(), 0u);
}
