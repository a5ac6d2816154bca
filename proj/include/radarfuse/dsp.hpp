#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "radarfuse/core.hpp"
#include "radarfuse/csv.hpp"
#include "radarfuse/errors.hpp"
#include "radarfuse/fft.hpp"

namespace radarfuse {

/// Channel-summed power over range and Doppler bins.
struct RangeDopplerMap {
    int n_range = 0;
    int n_doppler = 0;
    std::vector<double> power;  // row-major, doppler fastest

    double& at(int r, int k) {
        return power[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_doppler) +
                     static_cast<std::size_t>(k)];
    }
    double at(int r, int k) const {
        return power[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_doppler) +
                     static_cast<std::size_t>(k)];
    }

    void validate() const {
        if (power.size() !=
            static_cast<std::size_t>(n_range) * static_cast<std::size_t>(n_doppler)) {
            throw ContractError("RangeDopplerMap: power length does not match dims");
        }
        for (std::size_t i = 0; i < power.size(); ++i) {
            if (!(power[i] >= 0.0) || !std::isfinite(power[i])) {
                throw ContractError("RangeDopplerMap: entry " + std::to_string(i) +
                                    " must be finite and non-negative, got " +
                                    std::to_string(power[i]));
            }
        }
    }
};

/// Cell-averaging detector parameters. Counts are per dimension, so the
/// full training window spans 2*(guard+training)+1 cells on each axis.
struct CfarParams {
    int guard_cells = 2;
    int training_cells = 4;
    double probability_false_alarm = 1e-4;

    void validate() const {
        if (guard_cells < 0) {
            throw ContractError("CfarParams: guard_cells must be >= 0, got " +
                                std::to_string(guard_cells));
        }
        if (training_cells < 1) {
            throw ContractError("CfarParams: training_cells must be >= 1, got " +
                                std::to_string(training_cells));
        }
        if (!(probability_false_alarm > 0.0) || !(probability_false_alarm < 1.0)) {
            throw ContractError("CfarParams: probability_false_alarm must lie in (0, 1)");
        }
    }
};

/// One cell that crossed the adaptive threshold.
struct CfarDetection {
    int range_bin = 0;
    int doppler_bin = 0;
    double snr_db = 0.0;
};

/// A resolved target: bins, physical quantities and the 3D point in the
/// radar frame (x right, y forward along boresight, z up; z is always 0 for
/// this azimuth-only array).
struct RadarDetection {
    int range_bin = 0;
    int doppler_bin = 0;
    double range_m = 0.0;
    double velocity_mps = 0.0;
    double azimuth_deg = 0.0;
    double snr_db = 0.0;
    std::array<double, 3> point_m{0.0, 0.0, 0.0};
};

using PointCloud = std::vector<RadarDetection>;

enum class Window {
    none,  // keeps peak-bin oracles exact
    hann,  // sidelobe control at the cost of amplitude scaling
};

namespace detail {

inline std::vector<double> make_window(Window w, int n) {
    std::vector<double> taps(static_cast<std::size_t>(n), 1.0);
    if (w == Window::hann && n > 1) {
        for (int i = 0; i < n; ++i) {
            taps[static_cast<std::size_t>(i)] =
                0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
        }
    }
    return taps;
}

}  // namespace detail

/// Forward unnormalized DFT along fast time for every (channel, chirp)
/// pair. Consumes an adc-domain cube, produces a range-domain cube of the
/// same dims.
inline AdcCube range_fft(const AdcCube& cube, Window window = Window::none) {
    cube.require_domain(Domain::adc, "range_fft");
    AdcCube out(cube.n_range, cube.n_chan, cube.n_chirp, Domain::range);
    const auto taps = detail::make_window(window, cube.n_range);
    std::vector<std::complex<double>> line(static_cast<std::size_t>(cube.n_range));
    for (int ch = 0; ch < cube.n_chan; ++ch) {
        for (int k = 0; k < cube.n_chirp; ++k) {
            for (int r = 0; r < cube.n_range; ++r) {
                line[static_cast<std::size_t>(r)] =
                    cube.at(r, ch, k) * taps[static_cast<std::size_t>(r)];
            }
            fft::forward(line);
            for (int r = 0; r < cube.n_range; ++r) out.at(r, ch, k) = line[static_cast<std::size_t>(r)];
        }
    }
    return out;
}

/// Forward unnormalized DFT along the chirp dimension, with the zero
/// Doppler bin shifted to index n_chirp/2 so bin index maps linearly to
/// signed velocity. Consumes range domain, produces range_doppler.
inline AdcCube doppler_fft(const AdcCube& cube, Window window = Window::none) {
    cube.require_domain(Domain::range, "doppler_fft");
    if (cube.n_chirp % 2 != 0) {
        throw ContractError("doppler_fft: chirp count must be even for a centered spectrum, got " +
                            std::to_string(cube.n_chirp));
    }
    AdcCube out(cube.n_range, cube.n_chan, cube.n_chirp, Domain::range_doppler);
    const auto taps = detail::make_window(window, cube.n_chirp);
    std::vector<std::complex<double>> line(static_cast<std::size_t>(cube.n_chirp));
    for (int r = 0; r < cube.n_range; ++r) {
        for (int ch = 0; ch < cube.n_chan; ++ch) {
            for (int k = 0; k < cube.n_chirp; ++k) {
                line[static_cast<std::size_t>(k)] =
                    cube.at(r, ch, k) * taps[static_cast<std::size_t>(k)];
            }
            fft::forward(line);
            fft::shift_zero_to_center(line);
            for (int k = 0; k < cube.n_chirp; ++k) out.at(r, ch, k) = line[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

/// Incoherent channel sum: power[r][k] = sum over channels of |sample|^2.
inline RangeDopplerMap rd_map(const AdcCube& cube) {
    cube.require_domain(Domain::range_doppler, "rd_map");
    RangeDopplerMap map;
    map.n_range = cube.n_range;
    map.n_doppler = cube.n_chirp;
    map.power.assign(static_cast<std::size_t>(cube.n_range) * static_cast<std::size_t>(cube.n_chirp),
                     0.0);
    for (int r = 0; r < cube.n_range; ++r) {
        for (int ch = 0; ch < cube.n_chan; ++ch) {
            for (int k = 0; k < cube.n_chirp; ++k) {
                map.at(r, k) += std::norm(cube.at(r, ch, k));
            }
        }
    }
    return map;
}

/// 2D cell-averaging CFAR. A cell fires when its power exceeds
/// alpha * mean(training ring), with alpha = N*(pfa^(-1/N) - 1) for N
/// available training cells; this keeps the design false-alarm rate exact
/// for exponentially distributed noise power. Cells near the border use
/// the truncated training ring that fits inside the map, with alpha
/// recomputed for the reduced N. Detections are returned in row-major scan
/// order.
inline std::vector<CfarDetection> cfar_detect(const RangeDopplerMap& map, const CfarParams& params) {
    params.validate();
    map.validate();
    const int reach = params.guard_cells + params.training_cells;
    if (map.n_range <= 2 * reach + 1 || map.n_doppler <= 2 * reach + 1) {
        throw ContractError("cfar_detect: map dims " + std::to_string(map.n_range) + "x" +
                            std::to_string(map.n_doppler) + " must exceed " +
                            std::to_string(2 * reach + 1) + " in each dimension");
    }
    std::vector<CfarDetection> detections;
    const double log_inv_pfa = -std::log(params.probability_false_alarm);
    for (int r = 0; r < map.n_range; ++r) {
        for (int k = 0; k < map.n_doppler; ++k) {
            double training_sum = 0.0;
            int training_count = 0;
            const int r_lo = std::max(0, r - reach);
            const int r_hi = std::min(map.n_range - 1, r + reach);
            const int k_lo = std::max(0, k - reach);
            const int k_hi = std::min(map.n_doppler - 1, k + reach);
            for (int rr = r_lo; rr <= r_hi; ++rr) {
                for (int kk = k_lo; kk <= k_hi; ++kk) {
                    if (std::abs(rr - r) <= params.guard_cells &&
                        std::abs(kk - k) <= params.guard_cells) {
                        continue;  // guard region, cell under test included
                    }
                    training_sum += map.at(rr, kk);
                    ++training_count;
                }
            }
            const double n = static_cast<double>(training_count);
            const double alpha = n * (std::exp(log_inv_pfa / n) - 1.0);
            const double mean_train = training_sum / n;
            const double cell = map.at(r, k);
            if (cell > 0.0 && cell > alpha * mean_train) {
                // Floor the noise estimate so a peak over an exactly zero
                // background reports a large finite SNR.
                const double mean_eff = std::max(mean_train, cell * 1e-15);
                detections.push_back({r, k, 10.0 * std::log10(cell / mean_eff)});
            }
        }
    }
    return detections;
}

inline constexpr int kDoaFftSize = 256;

/// Azimuth estimate from the virtual-channel snapshot at one range-Doppler
/// cell: zero-padded forward DFT over channels, magnitude peak with
/// parabolic refinement, then sin(theta) = u / (spacing * fft_size) with u
/// the signed bin offset from the spectrum center. Returns the azimuth in
/// degrees and the centered 256-bin magnitude spectrum.
struct DoaEstimate {
    double azimuth_deg = 0.0;
    std::vector<double> angle_spectrum;
};

inline DoaEstimate doa_estimate(const AdcCube& cube, int range_bin, int doppler_bin,
                                const RadarConfig& config) {
    cube.require_domain(Domain::range_doppler, "doa_estimate");
    if (range_bin < 0 || range_bin >= cube.n_range || doppler_bin < 0 ||
        doppler_bin >= cube.n_chirp) {
        throw ContractError("doa_estimate: cell (" + std::to_string(range_bin) + ", " +
                            std::to_string(doppler_bin) + ") out of bounds for " +
                            cube.dims_string());
    }
    if (cube.n_chan > kDoaFftSize) {
        throw ContractError("doa_estimate: channel count " + std::to_string(cube.n_chan) +
                            " exceeds angle transform size " + std::to_string(kDoaFftSize));
    }
    std::vector<std::complex<double>> snapshot(static_cast<std::size_t>(kDoaFftSize), {0.0, 0.0});
    for (int v = 0; v < cube.n_chan; ++v) {
        snapshot[static_cast<std::size_t>(v)] = cube.at(range_bin, v, doppler_bin);
    }
    fft::forward(snapshot);
    fft::shift_zero_to_center(snapshot);

    DoaEstimate est;
    est.angle_spectrum.resize(static_cast<std::size_t>(kDoaFftSize));
    int peak = 0;
    for (int i = 0; i < kDoaFftSize; ++i) {
        est.angle_spectrum[static_cast<std::size_t>(i)] = std::abs(snapshot[static_cast<std::size_t>(i)]);
        if (est.angle_spectrum[static_cast<std::size_t>(i)] >
            est.angle_spectrum[static_cast<std::size_t>(peak)]) {
            peak = i;
        }
    }
    if (!(est.angle_spectrum[static_cast<std::size_t>(peak)] > 0.0)) {
        throw NumericError("doa_estimate: zero-energy snapshot at cell (" +
                           std::to_string(range_bin) + ", " + std::to_string(doppler_bin) +
                           "), no angle to estimate");
    }
    double refined = static_cast<double>(peak);
    if (peak > 0 && peak < kDoaFftSize - 1) {
        refined += fft::parabolic_offset(est.angle_spectrum[static_cast<std::size_t>(peak - 1)],
                                         est.angle_spectrum[static_cast<std::size_t>(peak)],
                                         est.angle_spectrum[static_cast<std::size_t>(peak + 1)]);
    }
    const double u = refined - kDoaFftSize / 2.0;
    const double sin_theta = u / (config.element_spacing_wavelengths * kDoaFftSize);
    if (std::abs(sin_theta) > 1.0) {
        throw NumericError("doa_estimate: peak bin offset " + std::to_string(u) +
                           " maps outside the visible region (|sin| = " +
                           std::to_string(std::abs(sin_theta)) + ")");
    }
    est.azimuth_deg = rad_to_deg(std::asin(sin_theta));
    return est;
}

namespace detail {

/// Collapses 8-connected CFAR cells into one detection per component,
/// keeping the strongest cell (first in scan order on ties). A point
/// target straddling bins lights up adjacent cells; without grouping each
/// of those cells would be reported as a separate target.
inline std::vector<CfarDetection> strongest_per_cluster(const std::vector<CfarDetection>& cells,
                                                        const RangeDopplerMap& map) {
    const std::size_t n = cells.size();
    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(cells[i].range_bin - cells[j].range_bin) <= 1 &&
                std::abs(cells[i].doppler_bin - cells[j].doppler_bin) <= 1) {
                parent[find(i)] = find(j);
            }
        }
    }
    std::vector<std::size_t> best(n, SIZE_MAX);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = find(i);
        if (best[root] == SIZE_MAX ||
            map.at(cells[i].range_bin, cells[i].doppler_bin) >
                map.at(cells[best[root]].range_bin, cells[best[root]].doppler_bin)) {
            best[root] = i;
        }
    }
    std::vector<CfarDetection> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (best[find(i)] == i) out.push_back(cells[i]);
    }
    std::sort(out.begin(), out.end(), [](const CfarDetection& a, const CfarDetection& b) {
        return a.range_bin != b.range_bin ? a.range_bin < b.range_bin
                                          : a.doppler_bin < b.doppler_bin;
    });
    return out;
}

}  // namespace detail

/// Full chain from a raw cube to a point cloud: fast-time transform,
/// slow-time transform, channel power sum, CFAR, cluster grouping, then one
/// azimuth estimate per detection. Bin indices map to physical units via
/// the config-derived resolutions.
///
/// The cell-averaging detector assumes a noise background. On a noise-free
/// off-grid scene the only background is spectral leakage, whose ridges it
/// will happily report; simulate with a noise floor when detection counts
/// matter.
inline PointCloud cube_to_pointcloud(const AdcCube& cube, const RadarConfig& config,
                                     const CfarParams& cfar, Window window = Window::none) {
    cube.require_domain(Domain::adc, "cube_to_pointcloud");
    const DerivedResolutions res = derive_resolutions(config);
    const AdcCube rd = doppler_fft(range_fft(cube, window), window);
    const RangeDopplerMap map = rd_map(rd);
    const auto cells = detail::strongest_per_cluster(cfar_detect(map, cfar), map);
    PointCloud cloud;
    cloud.reserve(cells.size());
    for (const CfarDetection& cell : cells) {
        const DoaEstimate doa = doa_estimate(rd, cell.range_bin, cell.doppler_bin, config);
        RadarDetection det;
        det.range_bin = cell.range_bin;
        det.doppler_bin = cell.doppler_bin;
        det.snr_db = cell.snr_db;
        det.range_m = cell.range_bin * res.range_res_m;
        det.velocity_mps = (cell.doppler_bin - cube.n_chirp / 2) * res.velocity_res_mps;
        det.azimuth_deg = doa.azimuth_deg;
        const double az = deg_to_rad(det.azimuth_deg);
        det.point_m = {det.range_m * std::sin(az), det.range_m * std::cos(az), 0.0};
        cloud.push_back(det);
    }
    return cloud;
}

inline constexpr const char* kPointCloudCsvHeader =
    "x_m,y_m,z_m,range_m,velocity_mps,azimuth_deg,snr_db";

inline void write_pointcloud_csv(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_pointcloud_csv: cannot open " + path.string());
    out << kPointCloudCsvHeader << "\n";
    out.precision(17);
    for (const auto& d : cloud) {
        out << d.point_m[0] << "," << d.point_m[1] << "," << d.point_m[2] << "," << d.range_m
            << "," << d.velocity_mps << "," << d.azimuth_deg << "," << d.snr_db << "\n";
    }
    if (!out) throw IoError("write_pointcloud_csv: write failed for " + path.string());
}

inline PointCloud read_pointcloud_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_pointcloud_csv: cannot open " + path.string());
    PointCloud cloud;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        if (!header_seen) {
            if (line != kPointCloudCsvHeader) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": expected header '" + kPointCloudCsvHeader + "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 7) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected 7 fields, got " + std::to_string(fields.size()));
        }
        RadarDetection d;
        d.point_m[0] = detail::parse_double_field(fields[0], path.string(), line_no);
        d.point_m[1] = detail::parse_double_field(fields[1], path.string(), line_no);
        d.point_m[2] = detail::parse_double_field(fields[2], path.string(), line_no);
        d.range_m = detail::parse_double_field(fields[3], path.string(), line_no);
        d.velocity_mps = detail::parse_double_field(fields[4], path.string(), line_no);
        d.azimuth_deg = detail::parse_double_field(fields[5], path.string(), line_no);
        d.snr_db = detail::parse_double_field(fields[6], path.string(), line_no);
        cloud.push_back(d);
    }
    if (!header_seen) throw ParseError(path.string() + ": missing header line");
    return cloud;
}

/// Writes the map as an 8-bit binary portable graymap of log power,
/// min-max scaled. Width is the Doppler axis, height the range axis. A
/// constant map writes as all zeros.
inline void write_rd_map_pgm(const RangeDopplerMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_rd_map_pgm: cannot open " + path.string());
    double max_power = 0.0;
    for (double p : map.power) max_power = std::max(max_power, p);
    const double floor = max_power > 0.0 ? max_power * 1e-12 : 1.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::vector<double> log_power(map.power.size());
    for (std::size_t i = 0; i < map.power.size(); ++i) {
        log_power[i] = std::log10(map.power[i] + floor);
        lo = std::min(lo, log_power[i]);
        hi = std::max(hi, log_power[i]);
    }
    out << "P5\n" << map.n_doppler << " " << map.n_range << "\n255\n";
    const double span = hi - lo;
    for (std::size_t i = 0; i < log_power.size(); ++i) {
        const double scaled = span > 0.0 ? (log_power[i] - lo) / span : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled * 255.0))));
    }
    if (!out) throw IoError("write_rd_map_pgm: write failed for " + path.string());
}

}  // namespace radarfuse
