#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radarfuse/errors.hpp"

namespace radarfuse {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Processing domain of a radar cube. Each stage of the chain consumes one
/// domain and produces the next; applying a stage to the wrong domain is a
/// contract error rather than silent garbage.
enum class Domain : std::uint8_t {
    adc = 0,            // raw beat-signal samples
    range = 1,          // after the fast-time transform
    range_doppler = 2,  // after the slow-time transform (zero Doppler centered)
    spectrum = 3,       // angle spectrum or other fully transformed data
};

inline std::string to_string(Domain d) {
    switch (d) {
        case Domain::adc: return "adc";
        case Domain::range: return "range";
        case Domain::range_doppler: return "range_doppler";
        case Domain::spectrum: return "spectrum";
    }
    return "unknown(" + std::to_string(static_cast<int>(d)) + ")";
}

/// Waveform and array parameters of the cascaded TDM-MIMO sensor.
///
/// Defaults describe a 12TX/16RX 77 GHz cascade producing 86 azimuth virtual
/// channels, 128 samples per chirp, 64 chirps per frame, ~1.282 GHz swept
/// bandwidth (0.117 m range bins over ~15 m) and a slow-time interval giving
/// ~2.02 m/s of unambiguous velocity. `chirp_period_s` is the per-chirp
/// repetition interval as seen by the slow-time dimension, i.e. already
/// including any transmitter multiplexing.
struct RadarConfig {
    int num_tx = 12;
    int num_rx = 16;
    int num_virtual = 86;
    int num_samples = 128;  // fast-time samples per chirp
    int num_chirps = 64;    // chirps per frame
    double carrier_freq_hz = 77.0e9;
    double chirp_slope_hz_per_s = 8.0125e13;
    double adc_sample_rate_hz = 8.0e6;
    double chirp_period_s = 4.82e-4;
    double frame_rate_hz = 5.0;
    double element_spacing_wavelengths = 0.5;

    /// Swept bandwidth over the sampled portion of the chirp.
    double bandwidth_hz() const {
        return chirp_slope_hz_per_s * static_cast<double>(num_samples) / adc_sample_rate_hz;
    }

    double wavelength_m() const { return kSpeedOfLight / carrier_freq_hz; }

    void validate() const {
        auto positive_count = [](int v, const char* name) {
            if (v < 1) {
                throw ContractError(std::string("RadarConfig: ") + name +
                                    " must be >= 1, got " + std::to_string(v));
            }
        };
        positive_count(num_tx, "num_tx");
        positive_count(num_rx, "num_rx");
        positive_count(num_virtual, "num_virtual");
        positive_count(num_samples, "num_samples");
        positive_count(num_chirps, "num_chirps");
        if (num_virtual > num_tx * num_rx) {
            throw ContractError("RadarConfig: num_virtual (" + std::to_string(num_virtual) +
                                ") exceeds num_tx * num_rx (" + std::to_string(num_tx * num_rx) +
                                ")");
        }
        auto positive_real = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw ContractError(std::string("RadarConfig: ") + name +
                                    " must be positive and finite, got " + std::to_string(v));
            }
        };
        positive_real(carrier_freq_hz, "carrier_freq_hz");
        positive_real(chirp_slope_hz_per_s, "chirp_slope_hz_per_s");
        positive_real(adc_sample_rate_hz, "adc_sample_rate_hz");
        positive_real(chirp_period_s, "chirp_period_s");
        positive_real(frame_rate_hz, "frame_rate_hz");
        positive_real(element_spacing_wavelengths, "element_spacing_wavelengths");
        positive_real(bandwidth_hz(), "derived bandwidth");
    }

    bool operator==(const RadarConfig&) const = default;
};

/// Resolutions and unambiguous limits derived from a RadarConfig.
struct DerivedResolutions {
    double range_res_m = 0.0;
    double max_range_m = 0.0;
    double velocity_res_mps = 0.0;
    double max_velocity_mps = 0.0;
    double azimuth_res_deg = 0.0;
};

/// Computes bin widths and unambiguous limits from the waveform parameters.
/// Every value comes from the config; none is a hardware datasheet constant.
inline DerivedResolutions derive_resolutions(const RadarConfig& config) {
    config.validate();
    DerivedResolutions r;
    r.range_res_m = kSpeedOfLight / (2.0 * config.bandwidth_hz());
    r.max_range_m = static_cast<double>(config.num_samples) * r.range_res_m;
    r.velocity_res_mps = config.wavelength_m() /
                         (2.0 * static_cast<double>(config.num_chirps) * config.chirp_period_s);
    r.max_velocity_mps = static_cast<double>(config.num_chirps) / 2.0 * r.velocity_res_mps;
    // Beamwidth of a uniform half-wavelength line array, ~2/N radians.
    r.azimuth_res_deg = rad_to_deg(2.0 / static_cast<double>(config.num_virtual));
    return r;
}

/// A frame of complex radar data: fast-time x virtual channel x chirp.
/// Samples are stored with chirp fastest, i.e. index (r * n_chan + ch) *
/// n_chirp + k. The same index order is used by the on-disk cube format.
struct AdcCube {
    int n_range = 0;
    int n_chan = 0;
    int n_chirp = 0;
    Domain domain = Domain::adc;
    std::vector<std::complex<double>> data;

    AdcCube() = default;

    /// Zero-filled cube.
    AdcCube(int n_range_, int n_chan_, int n_chirp_, Domain domain_)
        : n_range(n_range_), n_chan(n_chan_), n_chirp(n_chirp_), domain(domain_) {
        check_dims();
        data.assign(size(), {0.0, 0.0});
    }

    /// Takes ownership of `samples`; rejects length mismatches and
    /// non-finite samples.
    AdcCube(int n_range_, int n_chan_, int n_chirp_, Domain domain_,
            std::vector<std::complex<double>> samples)
        : n_range(n_range_), n_chan(n_chan_), n_chirp(n_chirp_), domain(domain_),
          data(std::move(samples)) {
        check_dims();
        if (data.size() != size()) {
            throw ContractError("AdcCube: data length " + std::to_string(data.size()) +
                                " does not match dims " + dims_string());
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(data[i].real()) || !std::isfinite(data[i].imag())) {
                throw ContractError("AdcCube: non-finite sample at flat index " +
                                    std::to_string(i));
            }
        }
    }

    std::size_t size() const {
        return static_cast<std::size_t>(n_range) * static_cast<std::size_t>(n_chan) *
               static_cast<std::size_t>(n_chirp);
    }

    std::size_t index(int r, int ch, int k) const {
        return (static_cast<std::size_t>(r) * static_cast<std::size_t>(n_chan) +
                static_cast<std::size_t>(ch)) *
                   static_cast<std::size_t>(n_chirp) +
               static_cast<std::size_t>(k);
    }

    std::complex<double>& at(int r, int ch, int k) { return data[index(r, ch, k)]; }
    const std::complex<double>& at(int r, int ch, int k) const { return data[index(r, ch, k)]; }

    std::string dims_string() const {
        return std::to_string(n_range) + "x" + std::to_string(n_chan) + "x" +
               std::to_string(n_chirp);
    }

    /// Throws unless the cube is in the expected domain. `op` names the
    /// operation for the error message.
    void require_domain(Domain expected, const char* op) const {
        if (domain != expected) {
            throw ContractError(std::string(op) + ": expected " + to_string(expected) +
                                "-domain cube, got " + to_string(domain));
        }
    }

private:
    void check_dims() const {
        if (n_range < 1 || n_chan < 1 || n_chirp < 1) {
            throw ContractError("AdcCube: all dims must be >= 1, got " + dims_string());
        }
    }
};

inline void to_json(nlohmann::json& j, const RadarConfig& c) {
    j = nlohmann::json{{"num_tx", c.num_tx},
                       {"num_rx", c.num_rx},
                       {"num_virtual", c.num_virtual},
                       {"num_samples", c.num_samples},
                       {"num_chirps", c.num_chirps},
                       {"carrier_freq_hz", c.carrier_freq_hz},
                       {"chirp_slope_hz_per_s", c.chirp_slope_hz_per_s},
                       {"adc_sample_rate_hz", c.adc_sample_rate_hz},
                       {"chirp_period_s", c.chirp_period_s},
                       {"frame_rate_hz", c.frame_rate_hz},
                       {"element_spacing_wavelengths", c.element_spacing_wavelengths}};
}

inline void from_json(const nlohmann::json& j, RadarConfig& c) {
    j.at("num_tx").get_to(c.num_tx);
    j.at("num_rx").get_to(c.num_rx);
    j.at("num_virtual").get_to(c.num_virtual);
    j.at("num_samples").get_to(c.num_samples);
    j.at("num_chirps").get_to(c.num_chirps);
    j.at("carrier_freq_hz").get_to(c.carrier_freq_hz);
    j.at("chirp_slope_hz_per_s").get_to(c.chirp_slope_hz_per_s);
    j.at("adc_sample_rate_hz").get_to(c.adc_sample_rate_hz);
    j.at("chirp_period_s").get_to(c.chirp_period_s);
    j.at("frame_rate_hz").get_to(c.frame_rate_hz);
    j.at("element_spacing_wavelengths").get_to(c.element_spacing_wavelengths);
}

}  // namespace radarfuse
