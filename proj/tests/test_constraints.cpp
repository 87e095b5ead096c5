#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "unifyedit/constraints.hpp"

using namespace unifyedit;

namespace {

AttentionMap make_map(int layer, int resolution, const Eigen::MatrixXd& m) {
    return AttentionMap{layer, resolution, m};
}

FlattenedMask make_flat(std::initializer_list<double> values) {
    FlattenedMask f;
    f.vector = Eigen::VectorXd(static_cast<Eigen::Index>(values.size()));
    int i = 0;
    for (double v : values) f.vector[i++] = v;
    f.resolution = static_cast<int>(std::lround(std::sqrt(static_cast<double>(values.size()))));
    return f;
}

Eigen::MatrixXd random_stochastic(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += (m(r, c) = dist(rng));
        m.row(r) /= sum;
    }
    return m;
}

}  // namespace

TEST(SaPreservation, ZeroOnIdenticalMaps) {
    std::vector<AttentionMap> a = {make_map(0, 2, random_stochastic(4, 4, 1)),
                                   make_map(1, 2, random_stochastic(4, 4, 2))};
    EXPECT_DOUBLE_EQ(sa_preservation(a, a), 0.0);
}

TEST(SaPreservation, SumsSquaredDifferencesOverLayers) {
    Eigen::MatrixXd ref = Eigen::MatrixXd::Constant(2, 2, 0.25);
    Eigen::MatrixXd cur = ref;
    cur(0, 0) += 0.5;
    cur(1, 1) -= 0.25;
    std::vector<AttentionMap> reference = {make_map(0, 2, ref), make_map(1, 2, ref)};
    std::vector<AttentionMap> current = {make_map(0, 2, cur), make_map(1, 2, ref)};
    EXPECT_DOUBLE_EQ(sa_preservation(reference, current), 0.25 + 0.0625);
}

TEST(SaPreservation, MatchesLayersByIdNotOrder) {
    Eigen::MatrixXd a = random_stochastic(3, 3, 3);
    Eigen::MatrixXd b = random_stochastic(3, 3, 4);
    std::vector<AttentionMap> reference = {make_map(0, 3, a), make_map(1, 3, b)};
    std::vector<AttentionMap> current = {make_map(1, 3, b), make_map(0, 3, a)};
    EXPECT_DOUBLE_EQ(sa_preservation(reference, current), 0.0);
}

TEST(SaPreservation, GradientIsTwiceTheResidual) {
    AttentionMap ref = make_map(0, 2, random_stochastic(4, 4, 5));
    AttentionMap cur = make_map(0, 2, random_stochastic(4, 4, 6));
    Eigen::MatrixXd g = sa_preservation_map_gradient(ref, cur);
    EXPECT_LT((g - 2.0 * (cur.map - ref.map)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(RegionSaPreservation, AllOnesMaskEqualsGlobalBitwise) {
    std::vector<AttentionMap> reference = {make_map(0, 2, random_stochastic(4, 4, 7))};
    std::vector<AttentionMap> current = {make_map(0, 2, random_stochastic(4, 4, 8))};
    std::vector<SAMaskOuter> outers = {mask_outer(make_flat({1, 1, 1, 1}))};
    const double global = sa_preservation(reference, current);
    const double region = region_sa_preservation(reference, current, outers);
    EXPECT_EQ(global, region);
}

TEST(RegionSaPreservation, WeightsPairsByMaskOuterProduct) {
    Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(4, 4);
    Eigen::MatrixXd cur = Eigen::MatrixXd::Constant(4, 4, 0.5);
    std::vector<SAMaskOuter> outers = {mask_outer(make_flat({1, 0, 0, 1}))};
    std::vector<AttentionMap> reference = {make_map(0, 2, ref)};
    std::vector<AttentionMap> current = {make_map(0, 2, cur)};
    // Only the 4 (row, col) pairs with both endpoints inside the mask count.
    const double loss = region_sa_preservation(reference, current, outers);
    EXPECT_DOUBLE_EQ(loss, 4 * 0.25);
    Eigen::MatrixXd g =
        region_sa_preservation_map_gradient(reference[0], current[0], outers[0]);
    EXPECT_DOUBLE_EQ(g(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(g(0, 3), 1.0);
    EXPECT_DOUBLE_EQ(g(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(g(2, 2), 0.0);
}

TEST(CaRatio, UniformColumnGivesOne) {
    Eigen::VectorXd column = Eigen::VectorXd::Constant(4, 0.2);
    EXPECT_DOUBLE_EQ(ca_ratio_column(column, make_flat({1, 0, 0, 1})), 1.0);
    Eigen::VectorXd varied(4);
    varied << 0.3, 0.3, 0.1, 0.1;  // same inside and outside means by symmetry
    EXPECT_DOUBLE_EQ(ca_ratio_column(varied, make_flat({1, 0, 1, 0})), 1.0);
}

TEST(CaRatio, InsideOverOutsideMeans) {
    Eigen::VectorXd column(4);
    column << 0.6, 0.1, 0.1, 0.2;  // inside {0,3}: mean 0.4; outside: mean 0.1
    EXPECT_NEAR(ca_ratio_column(column, make_flat({1, 0, 0, 1})), 4.0, 1e-14);
}

TEST(CaRatio, AllOnesMaskFallsBackToInsideMean) {
    Eigen::VectorXd column(4);
    column << 0.4, 0.2, 0.2, 0.2;
    EXPECT_DOUBLE_EQ(ca_ratio_column(column, make_flat({1, 1, 1, 1})), 0.25);
}

TEST(CaRatio, ZeroOutsideMassThrows) {
    Eigen::VectorXd column(4);
    column << 0.5, 0.0, 0.0, 0.5;
    EXPECT_THROW(ca_ratio_column(column, make_flat({1, 0, 0, 1})), validation_error);
}

TEST(CaRatio, GradientMatchesFiniteDifferences) {
    Eigen::VectorXd column(9);
    column << 0.2, 0.05, 0.1, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1;
    FlattenedMask mask = make_flat({1, 0, 0, 1, 1, 0, 0, 0, 1});
    Eigen::VectorXd analytic = ca_ratio_column_gradient(column, mask);
    const double h = 1e-7;
    for (int i = 0; i < column.size(); ++i) {
        Eigen::VectorXd plus = column, minus = column;
        plus[i] += h;
        minus[i] -= h;
        const double numeric =
            (ca_ratio_column(plus, mask) - ca_ratio_column(minus, mask)) / (2.0 * h);
        EXPECT_NEAR(analytic[i], numeric, 1e-6) << "coordinate " << i;
    }
}

TEST(GroupColumn, AveragesSelectedColumns) {
    Eigen::MatrixXd ca(2, 3);
    ca << 0.2, 0.3, 0.5,  //
        0.1, 0.6, 0.3;
    const std::vector<int> both = {0, 2};
    Eigen::VectorXd g = group_column(ca, both);
    EXPECT_DOUBLE_EQ(g[0], 0.35);
    EXPECT_DOUBLE_EQ(g[1], 0.2);
    const std::vector<int> out_of_range = {3};
    EXPECT_THROW(group_column(ca, out_of_range), validation_error);
    const std::vector<int> empty;
    EXPECT_THROW(group_column(ca, empty), validation_error);
}

TEST(CaAlignment, UnitRatiosGiveMinusLayerCountSquared) {
    // Five uniform layers: every ratio is exactly 1, so the loss is -(5)^2.
    std::vector<AttentionMap> layers;
    for (int l = 0; l < 5; ++l) {
        layers.push_back(make_map(l, 2, Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0)));
    }
    const std::vector<std::vector<int>> groups = {{0}};
    const double loss = ca_alignment(layers, groups, make_flat({1, 0, 0, 1}));
    EXPECT_DOUBLE_EQ(loss, -25.0);
}

TEST(CaAlignment, AveragesOverTokenGroups) {
    Eigen::MatrixXd ca(4, 2);
    ca << 0.8, 0.1,  //
        0.1, 0.4,    //
        0.1, 0.4,    //
        0.8, 0.1;
    std::vector<AttentionMap> layers = {make_map(0, 2, ca)};
    FlattenedMask mask = make_flat({1, 0, 0, 1});
    const std::vector<std::vector<int>> g0 = {{0}}, g1 = {{1}}, g01 = {{0}, {1}};
    const double loss_0 = ca_alignment(layers, g0, mask);
    const double loss_1 = ca_alignment(layers, g1, mask);
    const double loss_both = ca_alignment(layers, g01, mask);
    EXPECT_NEAR(loss_both, 0.5 * (loss_0 + loss_1), 1e-14);
    EXPECT_LT(loss_0, loss_1);  // token 0 is concentrated inside the mask
}

TEST(CaAlignment, MapGradientsMatchFiniteDifferences) {
    Eigen::MatrixXd ca0(4, 2), ca1(4, 2);
    ca0 << 0.5, 0.2, 0.2, 0.3, 0.2, 0.3, 0.1, 0.2;
    ca1 << 0.3, 0.1, 0.3, 0.4, 0.2, 0.4, 0.2, 0.1;
    std::vector<AttentionMap> layers = {make_map(0, 2, ca0), make_map(1, 2, ca1)};
    const std::vector<std::vector<int>> groups = {{0}, {1}};
    FlattenedMask mask = make_flat({1, 0, 0, 1});
    std::vector<Eigen::MatrixXd> grads = ca_alignment_map_gradients(layers, groups, mask);
    ASSERT_EQ(grads.size(), 2u);

    const double h = 1e-7;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 2; ++c) {
                std::vector<AttentionMap> plus = layers, minus = layers;
                plus[l].map(r, c) += h;
                minus[l].map(r, c) -= h;
                const double numeric = (ca_alignment(plus, groups, mask) -
                                        ca_alignment(minus, groups, mask)) /
                                       (2.0 * h);
                EXPECT_NEAR(grads[l](r, c), numeric, 1e-6)
                    << "layer " << l << " entry (" << r << "," << c << ")";
            }
        }
    }
}

TEST(MeanCaRatio, AveragesRatiosAcrossLayersAndGroups) {
    Eigen::MatrixXd ca(4, 1);
    ca << 0.4, 0.1, 0.1, 0.4;  // ratio 4 for the single token
    std::vector<AttentionMap> layers = {make_map(0, 2, ca), make_map(1, 2, ca)};
    const std::vector<std::vector<int>> groups = {{0}};
    EXPECT_NEAR(mean_ca_ratio(layers, groups, make_flat({1, 0, 0, 1})), 4.0, 1e-14);
}
