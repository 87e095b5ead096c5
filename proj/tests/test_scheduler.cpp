#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "unifyedit/scheduler.hpp"

using namespace unifyedit;

namespace {

SchedulerParams default_params() {
    SchedulerParams p;
    p.beta1 = 5.0;
    p.beta2 = 5.0;
    p.k1 = 0.05;
    p.k2 = 0.05;
    p.total_steps = 50;
    p.form = SchedulerForm::by_progress;
    return p;
}

Eigen::VectorXd vec3(double a, double b, double c) {
    Eigen::VectorXd v(3);
    v << a, b, c;
    return v;
}

}  // namespace

TEST(LambdaWeights, FrozenMidpointValues) {
    // beta (1 - exp(-k (T - t))) and beta exp(-k (T - t)) at t = 25,
    // evaluated independently at full double precision.
    LambdaWeights w = lambda_weights(25, default_params());
    EXPECT_NEAR(w.lambda1, 3.5674760156990495, 1e-12);
    EXPECT_NEAR(w.lambda2, 1.4325239843009505, 1e-12);
    EXPECT_NEAR(w.lambda1 + w.lambda2, 5.0, 1e-12);
}

TEST(LambdaWeights, EndpointValues) {
    LambdaWeights start = lambda_weights(50, default_params());
    EXPECT_DOUBLE_EQ(start.lambda1, 0.0);  // no denoising progress yet
    EXPECT_DOUBLE_EQ(start.lambda2, 5.0);
    LambdaWeights end = lambda_weights(1, default_params());
    EXPECT_NEAR(end.lambda1, 4.5685320675031474, 1e-12);
    EXPECT_NEAR(end.lambda2, 0.43146793249685255, 1e-12);
}

TEST(LambdaWeights, MonotoneOverDenoising) {
    const SchedulerParams p = default_params();
    LambdaWeights prev = lambda_weights(50, p);
    for (int t = 49; t >= 1; --t) {
        LambdaWeights w = lambda_weights(t, p);
        EXPECT_GT(w.lambda1, prev.lambda1) << "t=" << t;
        EXPECT_LT(w.lambda2, prev.lambda2) << "t=" << t;
        EXPECT_GE(w.lambda1, 0.0);
        EXPECT_LE(w.lambda1, p.beta1);
        EXPECT_GE(w.lambda2, 0.0);
        EXPECT_LE(w.lambda2, p.beta2);
        prev = w;
    }
}

TEST(LambdaWeights, TimestepFormMirrorsProgressFormAtMidpoint) {
    SchedulerParams p = default_params();
    p.form = SchedulerForm::by_timestep;
    // With T = 50 and t = 25 the exponent k*t equals k*(T-t), so the pair is
    // exactly the progress-form pair with the roles swapped.
    LambdaWeights w = lambda_weights(25, p);
    EXPECT_NEAR(w.lambda1, 1.4325239843009505, 1e-12);
    EXPECT_NEAR(w.lambda2, 3.5674760156990495, 1e-12);
}

TEST(LambdaWeights, RejectsOutOfRangeTimestep) {
    EXPECT_THROW(lambda_weights(0, default_params()), validation_error);
    EXPECT_THROW(lambda_weights(51, default_params()), validation_error);
}

TEST(SchedulerParams, ValidationRules) {
    SchedulerParams p = default_params();
    EXPECT_NO_THROW(p.validate());
    p.beta1 = 0.0;  // zero amplitude is how single-constraint runs are built
    EXPECT_NO_THROW(p.validate());
    p.beta1 = -1.0;
    EXPECT_THROW(p.validate(), validation_error);
    p = default_params();
    p.k1 = 0.0;
    EXPECT_THROW(p.validate(), validation_error);
    p = default_params();
    p.total_steps = 0;
    EXPECT_THROW(p.validate(), validation_error);
}

TEST(SchedulerEnums, RoundTripThroughStrings) {
    EXPECT_EQ(scheduler_form_from_string(to_string(SchedulerForm::by_timestep)),
              SchedulerForm::by_timestep);
    EXPECT_EQ(gradient_strategy_from_string("blc"), GradientStrategy::balanced);
    EXPECT_EQ(to_string(GradientStrategy::balanced), "blc");
    for (GradientStrategy s : {GradientStrategy::naive, GradientStrategy::norm,
                               GradientStrategy::sap_only, GradientStrategy::caa_only}) {
        EXPECT_EQ(gradient_strategy_from_string(to_string(s)), s);
    }
    EXPECT_THROW(gradient_strategy_from_string("bogus"), validation_error);
    EXPECT_THROW(scheduler_form_from_string("bogus"), validation_error);
}

TEST(Combine, NaiveIsPlainWeightedSum) {
    CombinedGradient g = combine_naive(vec3(1, 2, 3), vec3(-1, 0, 1), 2.0, 3.0);
    EXPECT_TRUE(g.values.isApprox(vec3(-1, 4, 9)));
    EXPECT_EQ(g.strategy, GradientStrategy::naive);
    EXPECT_DOUBLE_EQ(g.lambda1, 2.0);
    EXPECT_DOUBLE_EQ(g.lambda2, 3.0);
}

TEST(Combine, NormalizedHasWeightMagnitudesOnOrthogonalTerms) {
    // Orthogonal unit directions: the combined norm is hypot(l1, l2) no
    // matter how large the raw gradients were.
    CombinedGradient g =
        combine_normalized(vec3(100, 0, 0), vec3(0, 0.001, 0), 2.0, 3.0);
    EXPECT_NEAR(g.values[0], 2.0, 1e-14);
    EXPECT_NEAR(g.values[1], 3.0, 1e-14);
    EXPECT_DOUBLE_EQ(g.values[2], 0.0);
}

TEST(Combine, BalancedUsesScheduledWeights) {
    const SchedulerParams p = default_params();
    CombinedGradient g = combine_balanced(vec3(9, 0, 0), vec3(0, -4, 0), 25, p);
    EXPECT_NEAR(g.values[0], 3.5674760156990495, 1e-12);
    EXPECT_NEAR(g.values[1], -1.4325239843009505, 1e-12);
    EXPECT_NEAR(g.values.norm(), 3.8443478105116133, 1e-12);  // hypot of the pair
    EXPECT_NEAR(g.lambda1, 3.5674760156990495, 1e-12);
    EXPECT_NEAR(g.lambda2, 1.4325239843009505, 1e-12);
}

TEST(Combine, ZeroGradientGuardProducesNoNaNs) {
    CombinedGradient g = combine_normalized(Eigen::VectorXd::Zero(3), vec3(0, 5, 0), 2.0, 3.0);
    EXPECT_TRUE(g.values.allFinite());
    EXPECT_DOUBLE_EQ(g.values[0], 0.0);
    EXPECT_NEAR(g.values[1], 3.0, 1e-14);
}

TEST(Combine, MismatchedSizesThrow) {
    EXPECT_THROW(combine_naive(vec3(1, 2, 3), Eigen::VectorXd::Zero(2), 1.0, 1.0), shape_error);
}

TEST(ApplyUpdate, OutsideMaskIsBitwiseUntouched) {
    LatentGrid z = LatentGrid::zeros(2, 2, 2);
    z.values << 0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8;
    Eigen::VectorXd g = Eigen::VectorXd::Constant(8, 10.0);
    BinaryMask mask;
    mask.values = Eigen::MatrixXd(2, 2);
    mask.values << 1, 0, 0, 1;
    LatentGrid out = apply_update(z, g, mask);
    // Masked-in cells of every channel move, the rest keep exact bits.
    for (int c = 0; c < 2; ++c) {
        EXPECT_DOUBLE_EQ(out.at(c, 0, 0), z.at(c, 0, 0) - 10.0);
        EXPECT_DOUBLE_EQ(out.at(c, 1, 1), z.at(c, 1, 1) - 10.0);
        EXPECT_EQ(std::memcmp(&out.at(c, 0, 1), &z.at(c, 0, 1), sizeof(double)), 0);
        EXPECT_EQ(std::memcmp(&out.at(c, 1, 0), &z.at(c, 1, 0), sizeof(double)), 0);
    }
}

TEST(ApplyNoiseGuidance, SubtractsAdjustment) {
    Eigen::VectorXd eps = vec3(1, 2, 3);
    Eigen::VectorXd g = vec3(0.5, -0.5, 1.0);
    Eigen::VectorXd out = apply_noise_guidance(eps, g);
    EXPECT_TRUE(out.isApprox(vec3(0.5, 2.5, 2.0)));
}
