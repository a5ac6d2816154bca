#include "radarfuse/core.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

namespace {

using radarfuse::AdcCube;
using radarfuse::ContractError;
using radarfuse::derive_resolutions;
using radarfuse::Domain;
using radarfuse::RadarConfig;

TEST(RadarConfig, DefaultsAreSelfConsistent) {
    RadarConfig config;
    EXPECT_NO_THROW(config.validate());
    // ~1.282 GHz sweep gives ~0.117 m range bins over ~15 m.
    EXPECT_NEAR(config.bandwidth_hz(), 1.282e9, 1e6);
    const auto res = derive_resolutions(config);
    EXPECT_NEAR(res.range_res_m, 0.117, 5e-4);
    EXPECT_NEAR(res.max_range_m, 15.0, 0.05);
    EXPECT_NEAR(res.max_velocity_mps, 2.02, 0.01);
    EXPECT_NEAR(res.azimuth_res_deg, radarfuse::rad_to_deg(2.0 / 86.0), 1e-12);
    EXPECT_GT(res.velocity_res_mps, 0.0);
}

TEST(RadarConfig, ResolutionIdentities) {
    const RadarConfig config;
    const auto res = derive_resolutions(config);
    EXPECT_DOUBLE_EQ(res.max_range_m, config.num_samples * res.range_res_m);
    EXPECT_DOUBLE_EQ(res.max_velocity_mps, config.num_chirps / 2 * res.velocity_res_mps);
}

TEST(RadarConfig, BandwidthOfOnePointTwoEightGigahertzGivesTableRangeRes) {
    RadarConfig config;
    config.adc_sample_rate_hz = 8e6;
    config.num_samples = 128;
    config.chirp_slope_hz_per_s = 1.282e9 * config.adc_sample_rate_hz / config.num_samples;
    EXPECT_NEAR(config.bandwidth_hz(), 1.282e9, 1.0);
    EXPECT_NEAR(derive_resolutions(config).range_res_m, 0.117, 5e-4);
}

TEST(RadarConfig, ScalingLaws) {
    RadarConfig config;
    const auto base = derive_resolutions(config);
    // k times the slope divides the range bin by k.
    RadarConfig scaled = config;
    scaled.chirp_slope_hz_per_s *= 3.0;
    EXPECT_NEAR(derive_resolutions(scaled).range_res_m, base.range_res_m / 3.0, 1e-12);
    // Doubling the sample rate with fixed slope and count halves the
    // bandwidth and doubles the range bin.
    RadarConfig faster = config;
    faster.adc_sample_rate_hz *= 2.0;
    EXPECT_NEAR(derive_resolutions(faster).range_res_m, 2.0 * base.range_res_m, 1e-12);
}

TEST(RadarConfig, DeterministicDerivation) {
    const RadarConfig config;
    const auto a = derive_resolutions(config);
    const auto b = derive_resolutions(config);
    EXPECT_EQ(a.range_res_m, b.range_res_m);
    EXPECT_EQ(a.velocity_res_mps, b.velocity_res_mps);
    EXPECT_EQ(a.azimuth_res_deg, b.azimuth_res_deg);
}

TEST(RadarConfig, RejectsInvalidValues) {
    RadarConfig config;
    config.num_samples = 0;
    EXPECT_THROW(config.validate(), ContractError);

    config = RadarConfig{};
    config.chirp_slope_hz_per_s = -1.0;
    EXPECT_THROW(config.validate(), ContractError);

    config = RadarConfig{};
    config.num_virtual = config.num_tx * config.num_rx + 1;
    EXPECT_THROW(config.validate(), ContractError);

    config = RadarConfig{};
    config.frame_rate_hz = 0.0;
    EXPECT_THROW(derive_resolutions(config), ContractError);
}

TEST(RadarConfig, JsonRoundTrip) {
    RadarConfig config;
    config.carrier_freq_hz = 76.5e9;
    config.num_chirps = 32;
    const nlohmann::json j = config;
    const auto back = j.get<RadarConfig>();
    EXPECT_EQ(back, config);
}

TEST(AdcCube, RejectsLengthMismatch) {
    std::vector<std::complex<double>> data(10, {1.0, 0.0});
    EXPECT_THROW(AdcCube(2, 2, 2, Domain::adc, data), ContractError);
    EXPECT_NO_THROW(AdcCube(2, 5, 1, Domain::adc, data));
}

TEST(AdcCube, RejectsNonFiniteSamples) {
    std::vector<std::complex<double>> data(8, {0.0, 0.0});
    data[3] = {std::numeric_limits<double>::quiet_NaN(), 0.0};
    EXPECT_THROW(AdcCube(2, 2, 2, Domain::adc, data), ContractError);
}

TEST(AdcCube, IndexOrderIsChirpFastest) {
    AdcCube cube(2, 3, 4, Domain::adc);
    EXPECT_EQ(cube.index(0, 0, 0), 0u);
    EXPECT_EQ(cube.index(0, 0, 3), 3u);
    EXPECT_EQ(cube.index(0, 1, 0), 4u);
    EXPECT_EQ(cube.index(1, 0, 0), 12u);
    EXPECT_EQ(cube.size(), 24u);
}

TEST(AdcCube, DomainGuard) {
    const AdcCube cube(2, 2, 2, Domain::range);
    EXPECT_NO_THROW(cube.require_domain(Domain::range, "op"));
    EXPECT_THROW(cube.require_domain(Domain::adc, "op"), ContractError);
}

}  // namespace
