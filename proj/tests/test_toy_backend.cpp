#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <string>

#include "unifyedit/constraints.hpp"
#include "unifyedit/io.hpp"
#include "unifyedit/toy_backend.hpp"

using namespace unifyedit;

namespace {

// Small model so finite-difference sweeps stay fast.
ToyBackendConfig small_config() {
    ToyBackendConfig config;
    config.channels = 2;
    config.spatial = 8;
    config.sa_resolutions = {8, 4};
    config.ca_resolutions = {8};
    config.sa_layers_per_resolution = 1;
    config.ca_layers_per_resolution = 2;
    config.embed_dim = 4;
    config.max_timestep = 10;
    return config;
}

LatentGrid random_latent(const BackendInfo& info, std::uint64_t seed, int timestep) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    LatentGrid z = LatentGrid::zeros(info.channels, info.height, info.width);
    for (int i = 0; i < z.size(); ++i) z.values[i] = dist(rng);
    z.timestep = timestep;
    return z;
}

BinaryMask left_half_mask(int size) {
    BinaryMask m;
    m.values = Eigen::MatrixXd::Zero(size, size);
    m.values.leftCols(size / 2).setOnes();
    return m;
}

// Loss evaluated through the public capture interface, for checking
// latent_gradient against finite differences.
double constraint_loss(const DiffusionBackend& backend, const LatentGrid& z, int t,
                       const PromptEncoding& prompt, const ConstraintDescriptor& descriptor) {
    CaptureConfig capture;
    capture.sa_resolutions = descriptor.sa_resolutions;
    capture.ca_resolutions = {backend.info().primary_ca_resolution()};
    NoisePrediction pass = backend.predict_noise(z, t, prompt, capture);
    switch (descriptor.kind) {
        case ConstraintKind::sap: {
            std::vector<AttentionMap> current = pass.bundle.sa_at(descriptor.sa_resolutions);
            return sa_preservation(descriptor.reference_sa, current);
        }
        case ConstraintKind::region_sap: {
            std::vector<AttentionMap> current = pass.bundle.sa_at(descriptor.sa_resolutions);
            std::vector<SAMaskOuter> outers;
            for (const AttentionMap& map : current) {
                outers.push_back(mask_outer(mask_at_resolution(*descriptor.mask, map.resolution)));
            }
            return region_sa_preservation(descriptor.reference_sa, current, outers);
        }
        case ConstraintKind::caa: {
            std::vector<AttentionMap> ca =
                pass.bundle.ca_at(backend.info().primary_ca_resolution());
            FlattenedMask flat =
                mask_at_resolution(*descriptor.mask, backend.info().primary_ca_resolution());
            return ca_alignment(ca, descriptor.token_groups, flat);
        }
    }
    throw std::logic_error("unreachable");
}

void expect_gradient_matches(const DiffusionBackend& backend, const LatentGrid& z, int t,
                             const PromptEncoding& prompt,
                             const ConstraintDescriptor& descriptor, int probes,
                             std::uint64_t seed) {
    Eigen::VectorXd analytic = backend.latent_gradient(z, t, prompt, descriptor);
    ASSERT_EQ(analytic.size(), z.size());
    ASSERT_TRUE(analytic.allFinite());

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, z.size() - 1);
    const double h = 1e-4;
    for (int probe = 0; probe < probes; ++probe) {
        const int i = pick(rng);
        LatentGrid plus = z, minus = z;
        plus.values[i] += h;
        minus.values[i] -= h;
        const double numeric = (constraint_loss(backend, plus, t, prompt, descriptor) -
                                constraint_loss(backend, minus, t, prompt, descriptor)) /
                               (2.0 * h);
        const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
        EXPECT_LT(std::abs(analytic[i] - numeric) / scale, 1e-4)
            << "coordinate " << i << ": analytic " << analytic[i] << " numeric " << numeric;
    }
}

}  // namespace

TEST(ToyBackend, SameSeedSameOutput) {
    auto a = make_toy_backend(42);
    auto b = make_toy_backend(42);
    auto c = make_toy_backend(43);
    LatentGrid z = random_latent(a->info(), 1, 5);
    PromptEncoding prompt_a = a->encode_prompt("a red car");
    PromptEncoding prompt_b = b->encode_prompt("a red car");
    ASSERT_TRUE(prompt_a.token_embeddings.isApprox(prompt_b.token_embeddings, 0.0));
    Eigen::VectorXd eps_a = a->predict_noise(z, 5, prompt_a, {}).eps;
    Eigen::VectorXd eps_b = b->predict_noise(z, 5, prompt_b, {}).eps;
    EXPECT_TRUE((eps_a.array() == eps_b.array()).all());
    Eigen::VectorXd eps_c = c->predict_noise(z, 5, c->encode_prompt("a red car"), {}).eps;
    EXPECT_GT((eps_a - eps_c).norm(), 1e-8);
}

TEST(ToyBackend, CaptureDoesNotChangeEps) {
    auto backend = make_toy_backend(7);
    LatentGrid z = random_latent(backend->info(), 2, 10);
    PromptEncoding prompt = backend->encode_prompt("a blue bird");
    CaptureConfig full;
    full.sa_resolutions = {16, 8};
    full.ca_resolutions = {16};
    Eigen::VectorXd bare = backend->predict_noise(z, 10, prompt, {}).eps;
    Eigen::VectorXd captured = backend->predict_noise(z, 10, prompt, full).eps;
    EXPECT_TRUE((bare.array() == captured.array()).all());
}

TEST(ToyBackend, CaptureCountsMatchDeclaredLayers) {
    auto backend = make_toy_backend(7);
    LatentGrid z = random_latent(backend->info(), 3, 4);
    PromptEncoding prompt = backend->encode_prompt("a blue bird on snow");
    CaptureConfig capture;
    capture.sa_resolutions = {};  // empty set means every declared resolution
    capture.ca_resolutions = {};
    NoisePrediction pass = backend->predict_noise(z, 4, prompt, capture);
    EXPECT_EQ(pass.bundle.sa_layers.size(), 4u);  // 2 resolutions x 2 layers
    EXPECT_EQ(pass.bundle.ca_layers.size(), 5u);
    for (const AttentionMap& map : pass.bundle.sa_layers) {
        EXPECT_EQ(map.map.rows(), map.resolution * map.resolution);
        EXPECT_EQ(map.map.cols(), map.resolution * map.resolution);
        for (int r = 0; r < map.map.rows(); ++r) EXPECT_NEAR(map.map.row(r).sum(), 1.0, 1e-12);
    }
    for (const AttentionMap& map : pass.bundle.ca_layers) {
        EXPECT_EQ(map.map.rows(), map.resolution * map.resolution);
        EXPECT_EQ(map.map.cols(), prompt.token_count());
    }
    CaptureConfig undeclared;
    undeclared.sa_resolutions = {32};
    EXPECT_THROW(backend->predict_noise(z, 4, prompt, undeclared), validation_error);
}

TEST(ToyBackend, TimestepShapesAttention) {
    auto backend = make_toy_backend(7);
    LatentGrid z = random_latent(backend->info(), 4, 0);
    PromptEncoding prompt = backend->encode_prompt("a blue bird");
    LatentGrid z_late = z;
    z_late.timestep = 50;
    Eigen::VectorXd early = backend->predict_noise(z, 0, prompt, {}).eps;
    Eigen::VectorXd late = backend->predict_noise(z_late, 50, prompt, {}).eps;
    EXPECT_GT((early - late).norm(), 1e-10);
}

TEST(ToyBackend, PromptEncodingIsPerTokenDeterministic) {
    auto backend = make_toy_backend(11);
    PromptEncoding repeated = backend->encode_prompt("cat cat dog");
    ASSERT_EQ(repeated.token_count(), 3);
    EXPECT_TRUE(repeated.token_embeddings.row(0).isApprox(repeated.token_embeddings.row(1), 0.0));
    EXPECT_FALSE(repeated.token_embeddings.row(0).isApprox(repeated.token_embeddings.row(2)));

    PromptEncoding uncond = backend->unconditional_prompt();
    ASSERT_EQ(uncond.token_count(), 1);
    EXPECT_DOUBLE_EQ(uncond.token_embeddings.cwiseAbs().maxCoeff(), 0.0);
    PromptEncoding empty = backend->encode_prompt("");
    EXPECT_TRUE(empty.token_embeddings.isApprox(uncond.token_embeddings, 0.0));
}

TEST(ToyBackend, TokenizeNormalizesCaseAndPunctuation) {
    std::vector<std::string> tokens = ToyBackend::tokenize("A Red  car, on (the) road!");
    EXPECT_EQ(tokens,
              (std::vector<std::string>{"a", "red", "car", "on", "the", "road"}));
    EXPECT_TRUE(ToyBackend::tokenize("  ").empty());
}

TEST(ToyBackend, RejectsBadQueries) {
    auto backend = make_toy_backend(1);
    PromptEncoding prompt = backend->encode_prompt("x");
    LatentGrid wrong = LatentGrid::zeros(1, 4, 4);
    EXPECT_THROW(backend->predict_noise(wrong, 0, prompt, {}), validation_error);
    LatentGrid z = random_latent(backend->info(), 5, 0);
    EXPECT_THROW(backend->predict_noise(z, 999, prompt, {}), validation_error);
    LatentGrid nan_latent = z;
    nan_latent.values[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(backend->predict_noise(nan_latent, 0, prompt, {}), validation_error);
}

TEST(ToyBackendGradient, SaPreservationMatchesFiniteDifferences) {
    auto backend = make_toy_backend(21, small_config());
    PromptEncoding prompt = backend->encode_prompt("a cat on grass");
    LatentGrid z_ref = random_latent(backend->info(), 6, 5);
    CaptureConfig capture;
    capture.sa_resolutions = {8, 4};
    NoisePrediction reference = backend->predict_noise(z_ref, 5, prompt, capture);

    ConstraintDescriptor descriptor =
        ConstraintDescriptor::sap_on(reference.bundle.sa_at({8, 4}), {8, 4});
    LatentGrid z = random_latent(backend->info(), 7, 5);
    expect_gradient_matches(*backend, z, 5, prompt, descriptor, 20, 100);
}

TEST(ToyBackendGradient, RegionSaPreservationMatchesFiniteDifferences) {
    auto backend = make_toy_backend(22, small_config());
    PromptEncoding prompt = backend->encode_prompt("a cat on grass");
    LatentGrid z_ref = random_latent(backend->info(), 8, 4);
    CaptureConfig capture;
    capture.sa_resolutions = {8, 4};
    NoisePrediction reference = backend->predict_noise(z_ref, 4, prompt, capture);

    ConstraintDescriptor descriptor = ConstraintDescriptor::region_sap_on(
        reference.bundle.sa_at({8, 4}), left_half_mask(8), {8, 4});
    LatentGrid z = random_latent(backend->info(), 9, 4);
    expect_gradient_matches(*backend, z, 4, prompt, descriptor, 20, 200);
}

TEST(ToyBackendGradient, CaAlignmentMatchesFiniteDifferences) {
    auto backend = make_toy_backend(23, small_config());
    PromptEncoding prompt = backend->encode_prompt("a red car on a road");
    ConstraintDescriptor descriptor =
        ConstraintDescriptor::caa_on({{1}, {2}}, left_half_mask(8));
    LatentGrid z = random_latent(backend->info(), 10, 6);
    expect_gradient_matches(*backend, z, 6, prompt, descriptor, 20, 300);
}

TEST(ToyBackendGradient, RejectsUndeclaredResolutionAndBadTokens) {
    auto backend = make_toy_backend(24, small_config());
    PromptEncoding prompt = backend->encode_prompt("one two");
    LatentGrid z = random_latent(backend->info(), 11, 3);
    CaptureConfig capture;
    capture.sa_resolutions = {8};
    NoisePrediction pass = backend->predict_noise(z, 3, prompt, capture);

    ConstraintDescriptor bad_res = ConstraintDescriptor::sap_on(pass.bundle.sa_at({8}), {16});
    EXPECT_THROW(backend->latent_gradient(z, 3, prompt, bad_res), validation_error);

    ConstraintDescriptor bad_token =
        ConstraintDescriptor::caa_on({{5}}, left_half_mask(8));
    EXPECT_THROW(backend->latent_gradient(z, 3, prompt, bad_token), validation_error);
}

// Frozen output committed under the fixture tree: any change to the backend's
// arithmetic, seeding, or attention plumbing shows up as a bitwise diff here.
// Regenerate with the make_fixtures tool if the change is intentional.
TEST(ToyBackendGolden, Seed7PredictionMatchesCommittedFixture) {
    const std::string path = std::string(UNIFYEDIT_FIXTURE_DIR) + "/golden/eps_seed7.arr";
    LatentGrid frozen = read_latent(path, 0);

    auto backend = make_toy_backend(7);
    LatentGrid z = LatentGrid::zeros(4, 16, 16);
    z.timestep = 25;
    PromptEncoding prompt = backend->encode_prompt("a red car on a road");
    NoisePrediction pass = backend->predict_noise(z, 25, prompt, {});

    ASSERT_EQ(frozen.channels, z.channels);
    ASSERT_EQ(frozen.height, z.height);
    ASSERT_EQ(frozen.width, z.width);
    ASSERT_EQ(frozen.values.size(), pass.eps.size());
    EXPECT_EQ(std::memcmp(frozen.values.data(), pass.eps.data(),
                          sizeof(double) * static_cast<std::size_t>(pass.eps.size())),
              0);
}
