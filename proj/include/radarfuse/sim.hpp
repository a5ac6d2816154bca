#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "radarfuse/core.hpp"
#include "radarfuse/csv.hpp"
#include "radarfuse/errors.hpp"

namespace radarfuse {

/// An ideal point reflector used as simulation ground truth.
struct PointTarget {
    double range_m = 0.0;
    double velocity_mps = 0.0;
    double azimuth_deg = 0.0;
    double amplitude = 1.0;
};

/// Per-virtual-channel hardware imperfections of the cascade.
///
/// `phase_offsets_rad[v]` rotates every sample of channel v. A delay offset
/// of d samples shifts channel v's beat tone by d range bins, i.e. the
/// channel signal is additionally multiplied by exp(j*2*pi*d*n/N) over
/// fast-time index n. Channel 0 is conventionally the clean reference.
struct ChannelErrorProfile {
    std::vector<double> phase_offsets_rad;
    std::vector<double> delay_offsets_samples;

    static ChannelErrorProfile none(int num_virtual) {
        ChannelErrorProfile p;
        p.phase_offsets_rad.assign(static_cast<std::size_t>(num_virtual), 0.0);
        p.delay_offsets_samples.assign(static_cast<std::size_t>(num_virtual), 0.0);
        return p;
    }

    void validate(int num_virtual) const {
        const auto n = static_cast<std::size_t>(num_virtual);
        if (phase_offsets_rad.size() != n || delay_offsets_samples.size() != n) {
            throw ContractError("ChannelErrorProfile: vector lengths (" +
                                std::to_string(phase_offsets_rad.size()) + ", " +
                                std::to_string(delay_offsets_samples.size()) +
                                ") must equal num_virtual " + std::to_string(num_virtual));
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (!std::isfinite(phase_offsets_rad[v]) || !std::isfinite(delay_offsets_samples[v])) {
                throw ContractError("ChannelErrorProfile: non-finite entry at channel " +
                                    std::to_string(v));
            }
        }
    }
};

namespace detail {

/// Standard-normal pairs via Box-Muller on raw mt19937_64 draws. Avoids
/// std::normal_distribution so identical seeds give identical cubes across
/// standard library implementations.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    std::complex<double> next_pair() {
        const double u1 = 1.0 - uniform01();  // in (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

private:
    double uniform01() {
        return static_cast<double>(rng_() >> 11) * 0x1.0p-53;  // [0, 1)
    }

    std::mt19937_64 rng_;
};

}  // namespace detail

/// Synthesizes one raw frame from point targets.
///
/// Sample (fast-time n, channel v, chirp k) is the sum over targets of
///   amplitude * exp(j*2*pi*(f_b*n/f_s + f_d*k*T_c + spacing*v*sin(az)))
/// with beat frequency f_b = 2*slope*range/c and Doppler f_d = 2*velocity/
/// wavelength, multiplied by the channel error response, plus circular
/// complex Gaussian noise with standard deviation `noise_std` per complex
/// sample. The positive-frequency beat convention is a fixed choice of this
/// simulator. Deterministic for a fixed seed.
///
/// Targets outside the unambiguous range/velocity/angle region are rejected
/// (aliased returns would silently corrupt downstream oracles).
inline AdcCube synthesize_adc_cube(const RadarConfig& config,
                                   const std::vector<PointTarget>& targets,
                                   double noise_std = 0.0,
                                   const ChannelErrorProfile* errors = nullptr,
                                   std::uint64_t seed = 0) {
    config.validate();
    const DerivedResolutions res = derive_resolutions(config);
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw ContractError("synthesize_adc_cube: noise_std must be finite and >= 0");
    }
    if (errors != nullptr) errors->validate(config.num_virtual);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const PointTarget& t = targets[i];
        std::ostringstream why;
        if (!(t.range_m > 0.0) || t.range_m >= res.max_range_m) {
            why << "range " << t.range_m << " m outside (0, " << res.max_range_m << ")";
        } else if (std::abs(t.velocity_mps) >= res.max_velocity_mps) {
            why << "velocity " << t.velocity_mps << " m/s outside (-" << res.max_velocity_mps
                << ", " << res.max_velocity_mps << ")";
        } else if (std::abs(t.azimuth_deg) >= 90.0) {
            why << "azimuth " << t.azimuth_deg << " deg outside (-90, 90)";
        } else if (!(t.amplitude > 0.0)) {
            why << "amplitude " << t.amplitude << " must be > 0";
        }
        if (!why.str().empty()) {
            throw ContractError("synthesize_adc_cube: target " + std::to_string(i) +
                                " would alias or is invalid: " + why.str());
        }
    }

    const int n_r = config.num_samples;
    const int n_v = config.num_virtual;
    const int n_k = config.num_chirps;
    AdcCube cube(n_r, n_v, n_k, Domain::adc);

    const double two_pi = 2.0 * std::numbers::pi;
    // Separable per-target phasor tables: tone over fast time, Doppler over
    // chirps, steering over channels.
    std::vector<std::vector<std::complex<double>>> fast(targets.size()), slow(targets.size()),
        steer(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const double beat_cycles_per_sample =
            2.0 * config.chirp_slope_hz_per_s * targets[t].range_m /
            (kSpeedOfLight * config.adc_sample_rate_hz);
        const double doppler_cycles_per_chirp =
            2.0 * targets[t].velocity_mps * config.chirp_period_s / config.wavelength_m();
        const double steer_cycles_per_channel =
            config.element_spacing_wavelengths * std::sin(deg_to_rad(targets[t].azimuth_deg));
        fast[t].resize(static_cast<std::size_t>(n_r));
        for (int n = 0; n < n_r; ++n) {
            fast[t][static_cast<std::size_t>(n)] =
                targets[t].amplitude * std::polar(1.0, two_pi * beat_cycles_per_sample * n);
        }
        slow[t].resize(static_cast<std::size_t>(n_k));
        for (int k = 0; k < n_k; ++k) {
            slow[t][static_cast<std::size_t>(k)] =
                std::polar(1.0, two_pi * doppler_cycles_per_chirp * k);
        }
        steer[t].resize(static_cast<std::size_t>(n_v));
        for (int v = 0; v < n_v; ++v) {
            steer[t][static_cast<std::size_t>(v)] =
                std::polar(1.0, two_pi * steer_cycles_per_channel * v);
        }
    }

    // Channel error response over (channel, fast time).
    std::vector<std::complex<double>> chan_response;
    if (errors != nullptr) {
        chan_response.resize(static_cast<std::size_t>(n_v) * static_cast<std::size_t>(n_r));
        for (int v = 0; v < n_v; ++v) {
            for (int n = 0; n < n_r; ++n) {
                const double phase =
                    errors->phase_offsets_rad[static_cast<std::size_t>(v)] +
                    two_pi * errors->delay_offsets_samples[static_cast<std::size_t>(v)] *
                        static_cast<double>(n) / static_cast<double>(n_r);
                chan_response[static_cast<std::size_t>(v) * static_cast<std::size_t>(n_r) +
                              static_cast<std::size_t>(n)] = std::polar(1.0, phase);
            }
        }
    }

    for (int n = 0; n < n_r; ++n) {
        for (int v = 0; v < n_v; ++v) {
            std::complex<double>* line = &cube.at(n, v, 0);
            for (int k = 0; k < n_k; ++k) {
                std::complex<double> s{0.0, 0.0};
                for (std::size_t t = 0; t < targets.size(); ++t) {
                    s += fast[t][static_cast<std::size_t>(n)] *
                         steer[t][static_cast<std::size_t>(v)] *
                         slow[t][static_cast<std::size_t>(k)];
                }
                if (errors != nullptr) {
                    s *= chan_response[static_cast<std::size_t>(v) * static_cast<std::size_t>(n_r) +
                                       static_cast<std::size_t>(n)];
                }
                line[k] = s;
            }
        }
    }

    if (noise_std > 0.0) {
        detail::GaussianSource gauss(seed);
        const double component_std = noise_std / std::numbers::sqrt2;
        for (auto& sample : cube.data) sample += component_std * gauss.next_pair();
    }
    return cube;
}

/// A stationary unit-amplitude boresight reflector, the standard channel
/// calibration scene. Equivalent to synthesize_adc_cube with that single
/// target plus the given channel errors and no noise.
inline AdcCube make_corner_reflector_scene(const RadarConfig& config, double range_m,
                                           const ChannelErrorProfile& errors,
                                           std::uint64_t seed = 0) {
    return synthesize_adc_cube(config, {PointTarget{range_m, 0.0, 0.0, 1.0}}, 0.0, &errors, seed);
}

inline constexpr const char* kTargetsCsvHeader = "range_m,velocity_mps,azimuth_deg,amplitude";

/// Reads targets from comma-separated text with the exact header
/// `range_m,velocity_mps,azimuth_deg,amplitude`. Blank lines and lines
/// starting with '#' are skipped.
inline std::vector<PointTarget> load_targets_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_targets_csv: cannot open " + path.string());
    std::vector<PointTarget> targets;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        if (!header_seen) {
            if (line != kTargetsCsvHeader) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": expected header '" + kTargetsCsvHeader + "', got '" + line +
                                 "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                             std::to_string(fields.size()));
        }
        PointTarget t;
        t.range_m = detail::parse_double_field(fields[0], path.string(), line_no);
        t.velocity_mps = detail::parse_double_field(fields[1], path.string(), line_no);
        t.azimuth_deg = detail::parse_double_field(fields[2], path.string(), line_no);
        t.amplitude = detail::parse_double_field(fields[3], path.string(), line_no);
        targets.push_back(t);
    }
    if (!header_seen) throw ParseError(path.string() + ": missing header line");
    return targets;
}

inline void write_targets_csv(const std::vector<PointTarget>& targets,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_targets_csv: cannot open " + path.string());
    out << kTargetsCsvHeader << "\n";
    out.precision(17);
    for (const auto& t : targets) {
        out << t.range_m << "," << t.velocity_mps << "," << t.azimuth_deg << "," << t.amplitude
            << "\n";
    }
    if (!out) throw IoError("write_targets_csv: write failed for " + path.string());
}

}  // namespace radarfuse
