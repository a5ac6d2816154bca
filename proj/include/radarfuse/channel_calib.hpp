#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radarfuse/core.hpp"
#include "radarfuse/errors.hpp"
#include "radarfuse/fft.hpp"

namespace radarfuse {

/// Parameters tying a calibration capture to the operating waveform. The
/// sample-rate and slope ratios rescale a peak-index offset measured under
/// the calibration waveform into the operating waveform's sample domain.
struct ChannelCalibParams {
    double calib_sample_rate_hz = 8.0e6;
    double chirp_sample_rate_hz = 8.0e6;
    double original_slope_hz_per_s = 8.0125e13;
    double calib_slope_hz_per_s = 8.0125e13;
    int num_samples = 128;
    double interp_factor = 4.0;  // transform length / num_samples

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw ContractError(std::string("ChannelCalibParams: ") + name +
                                    " must be positive and finite");
            }
        };
        positive(calib_sample_rate_hz, "calib_sample_rate_hz");
        positive(chirp_sample_rate_hz, "chirp_sample_rate_hz");
        positive(original_slope_hz_per_s, "original_slope_hz_per_s");
        positive(calib_slope_hz_per_s, "calib_slope_hz_per_s");
        if (num_samples < 2) {
            throw ContractError("ChannelCalibParams: num_samples must be >= 2, got " +
                                std::to_string(num_samples));
        }
        if (!(interp_factor >= 1.0) || !std::isfinite(interp_factor)) {
            throw ContractError("ChannelCalibParams: interp_factor must be >= 1");
        }
    }

    /// Length of the zero-padded transform used for peak measurement.
    int fft_size() const {
        return static_cast<int>(std::llround(interp_factor * static_cast<double>(num_samples)));
    }

    bool operator==(const ChannelCalibParams&) const = default;
};

/// Raw per-channel measurements from a calibration scene: fractional peak
/// index offsets relative to channel 0 (in interpolated bins) and the
/// complex spectrum value at each channel's peak bin.
struct MeasuredChannelOffsets {
    std::vector<double> delta_p;
    std::vector<std::complex<double>> peaks;
};

/// Measures per-channel peak offsets and peak phasors from a scene with a
/// single dominant stationary target (a corner reflector). The fast-time
/// line of each channel is averaged coherently over chirps, zero-padded by
/// the interpolation factor, transformed, and its magnitude peak refined by
/// parabolic interpolation. A channel whose peak does not rise at least
/// 10 dB above its median spectrum aborts calibration.
inline MeasuredChannelOffsets measure_channel_offsets(const AdcCube& corner_cube,
                                                      const ChannelCalibParams& params) {
    corner_cube.require_domain(Domain::adc, "measure_channel_offsets");
    params.validate();
    if (corner_cube.n_range != params.num_samples) {
        throw ContractError("measure_channel_offsets: cube has " +
                            std::to_string(corner_cube.n_range) + " samples but params expect " +
                            std::to_string(params.num_samples));
    }
    const int m = params.fft_size();
    MeasuredChannelOffsets result;
    result.delta_p.resize(static_cast<std::size_t>(corner_cube.n_chan));
    result.peaks.resize(static_cast<std::size_t>(corner_cube.n_chan));

    std::vector<double> refined(static_cast<std::size_t>(corner_cube.n_chan));
    std::vector<std::complex<double>> line(static_cast<std::size_t>(m));
    std::vector<double> mags(static_cast<std::size_t>(m));
    for (int v = 0; v < corner_cube.n_chan; ++v) {
        std::fill(line.begin(), line.end(), std::complex<double>{0.0, 0.0});
        const double inv_chirps = 1.0 / static_cast<double>(corner_cube.n_chirp);
        for (int n = 0; n < corner_cube.n_range; ++n) {
            std::complex<double> acc{0.0, 0.0};
            for (int k = 0; k < corner_cube.n_chirp; ++k) acc += corner_cube.at(n, v, k);
            line[static_cast<std::size_t>(n)] = acc * inv_chirps;
        }
        fft::forward(line);
        int peak = 0;
        for (int i = 0; i < m; ++i) {
            mags[static_cast<std::size_t>(i)] = std::abs(line[static_cast<std::size_t>(i)]);
            if (mags[static_cast<std::size_t>(i)] > mags[static_cast<std::size_t>(peak)]) peak = i;
        }
        std::vector<double> sorted_mags = mags;
        std::nth_element(sorted_mags.begin(), sorted_mags.begin() + m / 2, sorted_mags.end());
        const double median = sorted_mags[static_cast<std::size_t>(m / 2)];
        const double peak_mag = mags[static_cast<std::size_t>(peak)];
        // 10 dB in power is a factor sqrt(10) in magnitude.
        if (!(peak_mag > 0.0) || (median > 0.0 && peak_mag < median * std::sqrt(10.0))) {
            throw NumericError("measure_channel_offsets: channel " + std::to_string(v) +
                               " has no peak 10 dB above its median spectrum; scene unusable for "
                               "calibration");
        }
        double offset = 0.0;
        if (peak > 0 && peak < m - 1) {
            offset = fft::parabolic_offset(mags[static_cast<std::size_t>(peak - 1)],
                                           mags[static_cast<std::size_t>(peak)],
                                           mags[static_cast<std::size_t>(peak + 1)]);
        }
        refined[static_cast<std::size_t>(v)] = static_cast<double>(peak) + offset;
        result.peaks[static_cast<std::size_t>(v)] = line[static_cast<std::size_t>(peak)];
    }
    for (int v = 0; v < corner_cube.n_chan; ++v) {
        result.delta_p[static_cast<std::size_t>(v)] = refined[static_cast<std::size_t>(v)] - refined[0];
    }
    result.delta_p[0] = 0.0;
    return result;
}

/// Frequency-compensation phase ramp for one channel: entry n is
/// 2*pi * delta_p * (f_s_calib / f_s_chirp) * (slope / slope_calib)
///   / (num_samples * interp_factor) * n.
/// `delta_p` is the fractional peak-index offset in interpolated bins, so
/// the interpolation factor cancels and the ramp advances by one cycle over
/// the frame exactly when the channel is offset by one range bin.
inline std::vector<double> freq_comp_vector(const ChannelCalibParams& params, double delta_p) {
    params.validate();
    if (!std::isfinite(delta_p)) {
        throw ContractError("freq_comp_vector: delta_p must be finite");
    }
    const double scale = 2.0 * std::numbers::pi * delta_p *
                         (params.calib_sample_rate_hz / params.chirp_sample_rate_hz) *
                         (params.original_slope_hz_per_s / params.calib_slope_hz_per_s) /
                         (static_cast<double>(params.num_samples) * params.interp_factor);
    std::vector<double> ramp(static_cast<std::size_t>(params.num_samples));
    for (int n = 0; n < params.num_samples; ++n) {
        ramp[static_cast<std::size_t>(n)] = scale * static_cast<double>(n);
    }
    return ramp;
}

/// Residual phase correction per channel: the reference channel's peak
/// phasor divided by each channel's own. Channel 0 is exactly 1.
inline std::vector<std::complex<double>> phase_comp_factors(
    const std::vector<std::complex<double>>& peaks) {
    if (peaks.empty()) throw ContractError("phase_comp_factors: no peaks given");
    std::vector<std::complex<double>> factors(peaks.size());
    for (std::size_t v = 0; v < peaks.size(); ++v) {
        if (!(std::abs(peaks[v]) > 0.0)) {
            throw NumericError("phase_comp_factors: zero-magnitude peak on channel " +
                               std::to_string(v));
        }
        factors[v] = peaks[0] / peaks[v];
    }
    factors[0] = {1.0, 0.0};
    return factors;
}

/// Complete per-channel calibration: peak offsets, the derived frequency
/// compensation ramps, and residual phase factors. The reference channel's
/// entries are identically zero / one.
struct ChannelCalibration {
    ChannelCalibParams params;
    std::vector<double> delta_p;
    std::vector<std::vector<double>> freq_comp;  // one ramp of length num_samples per channel
    std::vector<std::complex<double>> phase_comp;

    int num_channels() const { return static_cast<int>(delta_p.size()); }

    static ChannelCalibration identity(const ChannelCalibParams& params, int num_channels) {
        ChannelCalibration c;
        c.params = params;
        c.delta_p.assign(static_cast<std::size_t>(num_channels), 0.0);
        c.phase_comp.assign(static_cast<std::size_t>(num_channels), {1.0, 0.0});
        c.rebuild_freq_comp();
        return c;
    }

    void rebuild_freq_comp() {
        freq_comp.clear();
        freq_comp.reserve(delta_p.size());
        for (double dp : delta_p) freq_comp.push_back(freq_comp_vector(params, dp));
    }

    void validate() const {
        params.validate();
        if (delta_p.empty() || delta_p.size() != phase_comp.size() ||
            delta_p.size() != freq_comp.size()) {
            throw ContractError("ChannelCalibration: inconsistent per-channel vector lengths");
        }
        if (delta_p[0] != 0.0 || phase_comp[0] != std::complex<double>{1.0, 0.0}) {
            throw ContractError("ChannelCalibration: reference channel entries must be 0 and 1");
        }
        for (const auto& ramp : freq_comp) {
            if (ramp.size() != static_cast<std::size_t>(params.num_samples)) {
                throw ContractError("ChannelCalibration: ramp length mismatch");
            }
        }
    }
};

/// Measures a calibration from a corner-reflector cube and assembles the
/// compensation tables.
inline ChannelCalibration measure_channel_calibration(const AdcCube& corner_cube,
                                                      const ChannelCalibParams& params) {
    const MeasuredChannelOffsets measured = measure_channel_offsets(corner_cube, params);
    ChannelCalibration calib;
    calib.params = params;
    calib.delta_p = measured.delta_p;
    calib.phase_comp = phase_comp_factors(measured.peaks);
    calib.rebuild_freq_comp();
    return calib;
}

/// Applies the calibration: sample(n, v, k) is multiplied by
/// exp(-j * ramp_v[n]) and by the residual phase factor of channel v. The
/// measured error is removed, so the reference channel passes through
/// unchanged and an identity calibration is a bit-exact no-op.
inline AdcCube apply_channel_calibration(const AdcCube& cube, const ChannelCalibration& calib) {
    cube.require_domain(Domain::adc, "apply_channel_calibration");
    calib.validate();
    if (calib.num_channels() != cube.n_chan) {
        throw ContractError("apply_channel_calibration: calibration has " +
                            std::to_string(calib.num_channels()) + " channels, cube has " +
                            std::to_string(cube.n_chan));
    }
    if (calib.params.num_samples != cube.n_range) {
        throw ContractError("apply_channel_calibration: calibration ramps cover " +
                            std::to_string(calib.params.num_samples) + " samples, cube has " +
                            std::to_string(cube.n_range));
    }
    AdcCube out = cube;
    for (int v = 0; v < cube.n_chan; ++v) {
        const auto& ramp = calib.freq_comp[static_cast<std::size_t>(v)];
        const std::complex<double> residual = calib.phase_comp[static_cast<std::size_t>(v)];
        const bool identity_channel =
            calib.delta_p[static_cast<std::size_t>(v)] == 0.0 &&
            residual == std::complex<double>{1.0, 0.0};
        if (identity_channel) continue;
        for (int n = 0; n < cube.n_range; ++n) {
            const std::complex<double> factor =
                std::polar(1.0, -ramp[static_cast<std::size_t>(n)]) * residual;
            for (int k = 0; k < cube.n_chirp; ++k) out.at(n, v, k) *= factor;
        }
    }
    return out;
}

inline void to_json(nlohmann::json& j, const ChannelCalibParams& p) {
    j = nlohmann::json{{"calib_sample_rate_hz", p.calib_sample_rate_hz},
                       {"chirp_sample_rate_hz", p.chirp_sample_rate_hz},
                       {"original_slope_hz_per_s", p.original_slope_hz_per_s},
                       {"calib_slope_hz_per_s", p.calib_slope_hz_per_s},
                       {"num_samples", p.num_samples},
                       {"interp_factor", p.interp_factor}};
}

inline void from_json(const nlohmann::json& j, ChannelCalibParams& p) {
    j.at("calib_sample_rate_hz").get_to(p.calib_sample_rate_hz);
    j.at("chirp_sample_rate_hz").get_to(p.chirp_sample_rate_hz);
    j.at("original_slope_hz_per_s").get_to(p.original_slope_hz_per_s);
    j.at("calib_slope_hz_per_s").get_to(p.calib_slope_hz_per_s);
    j.at("num_samples").get_to(p.num_samples);
    j.at("interp_factor").get_to(p.interp_factor);
}

/// Serialized form carries params, delta_p and phase_comp as [re, im]
/// pairs; the frequency ramps are recomputed on load, so the round trip is
/// lossless at double precision.
inline void to_json(nlohmann::json& j, const ChannelCalibration& c) {
    nlohmann::json phases = nlohmann::json::array();
    for (const auto& z : c.phase_comp) phases.push_back({z.real(), z.imag()});
    j = nlohmann::json{{"params", c.params}, {"delta_p", c.delta_p}, {"phase_comp", phases}};
}

inline void from_json(const nlohmann::json& j, ChannelCalibration& c) {
    j.at("params").get_to(c.params);
    j.at("delta_p").get_to(c.delta_p);
    c.phase_comp.clear();
    for (const auto& pair : j.at("phase_comp")) {
        if (!pair.is_array() || pair.size() != 2) {
            throw ParseError("ChannelCalibration: phase_comp entries must be [re, im] pairs");
        }
        c.phase_comp.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
    c.rebuild_freq_comp();
    c.validate();
}

}  // namespace radarfuse
