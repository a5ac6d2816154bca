#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "radarfuse/core.hpp"
#include "radarfuse/depth.hpp"
#include "radarfuse/dsp.hpp"
#include "radarfuse/errors.hpp"
#include "radarfuse/png_io.hpp"

namespace radarfuse {

// ---------------------------------------------------------------------------
// Radar cube files
//
// Fixed little-endian layout:
//   offset  0: 8-byte magic "RRGBDCUB"
//   offset  8: u8 format version (1)
//   offset  9: u8 domain tag
//   offset 10: 6 reserved zero bytes (pads the prelude to 16 bytes)
//   offset 16: u32 n_range, u32 n_chan, u32 n_chirp
//   offset 28: payload, one float32 (re, im) pair per sample in index order
//              (r * n_chan + ch) * n_chirp + k
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kCubeMagic = {'R', 'R', 'G', 'B', 'D', 'C', 'U', 'B'};
inline constexpr std::uint8_t kCubeFormatVersion = 1;
inline constexpr std::size_t kCubeHeaderBytes = 28;
inline constexpr const char* kCubeExtension = ".rcube";

namespace detail {

inline void put_u32_le(unsigned char* p, std::uint32_t v) {
    p[0] = static_cast<unsigned char>(v);
    p[1] = static_cast<unsigned char>(v >> 8);
    p[2] = static_cast<unsigned char>(v >> 16);
    p[3] = static_cast<unsigned char>(v >> 24);
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32_le(unsigned char* p, float v) {
    put_u32_le(p, std::bit_cast<std::uint32_t>(v));
}

inline float get_f32_le(const unsigned char* p) {
    return std::bit_cast<float>(get_u32_le(p));
}

}  // namespace detail

/// Writes a cube in the canonical binary layout. Samples are narrowed to
/// float32; reading the file back reproduces them bit-for-bit at that
/// precision.
inline void write_cube(const AdcCube& cube, const std::filesystem::path& path) {
    if (cube.data.size() != cube.size()) {
        throw ContractError("write_cube: cube data length does not match dims");
    }
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        if (!std::isfinite(cube.data[i].real()) || !std::isfinite(cube.data[i].imag())) {
            throw ContractError("write_cube: non-finite sample at flat index " + std::to_string(i));
        }
    }
    std::vector<unsigned char> buf(kCubeHeaderBytes + cube.size() * 8);
    std::memcpy(buf.data(), kCubeMagic.data(), kCubeMagic.size());
    buf[8] = kCubeFormatVersion;
    buf[9] = static_cast<unsigned char>(cube.domain);
    // bytes 10..15 stay zero
    detail::put_u32_le(&buf[16], static_cast<std::uint32_t>(cube.n_range));
    detail::put_u32_le(&buf[20], static_cast<std::uint32_t>(cube.n_chan));
    detail::put_u32_le(&buf[24], static_cast<std::uint32_t>(cube.n_chirp));
    unsigned char* p = &buf[kCubeHeaderBytes];
    for (const auto& z : cube.data) {
        detail::put_f32_le(p, static_cast<float>(z.real()));
        detail::put_f32_le(p + 4, static_cast<float>(z.imag()));
        p += 8;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_cube: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_cube: write failed for " + path.string());
}

/// Reads a cube, validating magic, version, domain tag, dims and the exact
/// payload length before any payload-sized allocation happens. Declared
/// dims are never trusted over the actual file size.
inline AdcCube read_cube(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("read_cube: cannot open " + path.string());
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);
    auto fail = [&](std::size_t offset, const std::string& what) -> ParseError {
        return ParseError(path.string() + ": offset " + std::to_string(offset) + ": " + what);
    };
    std::array<unsigned char, kCubeHeaderBytes> header{};
    if (file_size < kCubeHeaderBytes) {
        throw fail(static_cast<std::size_t>(file_size), "file shorter than the " +
                                                            std::to_string(kCubeHeaderBytes) +
                                                            "-byte header");
    }
    in.read(reinterpret_cast<char*>(header.data()), kCubeHeaderBytes);
    if (!in) throw IoError("read_cube: header read failed for " + path.string());
    if (std::memcmp(header.data(), kCubeMagic.data(), kCubeMagic.size()) != 0) {
        throw fail(0, "bad magic, not a radar cube file");
    }
    if (header[8] != kCubeFormatVersion) {
        throw fail(8, "unsupported format version " + std::to_string(header[8]) + ", expected " +
                          std::to_string(kCubeFormatVersion));
    }
    if (header[9] > static_cast<std::uint8_t>(Domain::spectrum)) {
        throw fail(9, "unknown domain tag " + std::to_string(header[9]));
    }
    const std::uint32_t n_range = detail::get_u32_le(&header[16]);
    const std::uint32_t n_chan = detail::get_u32_le(&header[20]);
    const std::uint32_t n_chirp = detail::get_u32_le(&header[24]);
    if (n_range == 0 || n_chan == 0 || n_chirp == 0) {
        throw fail(16, "all dims must be positive, got " + std::to_string(n_range) + "x" +
                           std::to_string(n_chan) + "x" + std::to_string(n_chirp));
    }
    const unsigned __int128 samples = static_cast<unsigned __int128>(n_range) * n_chan * n_chirp;
    const unsigned __int128 expected_size = kCubeHeaderBytes + samples * 8;
    if (expected_size != file_size) {
        throw fail(16, "dims " + std::to_string(n_range) + "x" + std::to_string(n_chan) + "x" +
                           std::to_string(n_chirp) + " require " +
                           std::to_string(static_cast<std::uint64_t>(expected_size)) +
                           " bytes but the file has " + std::to_string(file_size));
    }
    if (n_range > (1u << 20) || n_chan > (1u << 20) || n_chirp > (1u << 20)) {
        throw fail(16, "implausibly large dims");
    }

    std::vector<std::complex<double>> data(static_cast<std::size_t>(samples));
    std::vector<unsigned char> payload(static_cast<std::size_t>(samples) * 8);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!in) throw IoError("read_cube: payload read failed for " + path.string());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const float re = detail::get_f32_le(&payload[i * 8]);
        const float im = detail::get_f32_le(&payload[i * 8 + 4]);
        if (!std::isfinite(re) || !std::isfinite(im)) {
            throw fail(kCubeHeaderBytes + i * 8, "non-finite sample");
        }
        data[i] = {static_cast<double>(re), static_cast<double>(im)};
    }
    return AdcCube(static_cast<int>(n_range), static_cast<int>(n_chan), static_cast<int>(n_chirp),
                   static_cast<Domain>(header[9]), std::move(data));
}

// ---------------------------------------------------------------------------
// Depth rasters: 16-bit grayscale files storing round(depth * 1000)
// millimeters, with 0 meaning invalid. Round-trips are exact to 1 mm;
// depths under half a millimeter quantize to invalid.
// ---------------------------------------------------------------------------

inline constexpr double kMaxStorableDepth = 65.535;  // meters

inline void write_depth(const DepthImage& img, const std::filesystem::path& path) {
    img.validate();
    png::Gray16 raster;
    raster.width = img.width;
    raster.height = img.height;
    raster.pixels.resize(img.pixel_count());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        if (!img.valid[i]) {
            raster.pixels[i] = 0;
            continue;
        }
        const long mm = std::lround(img.values[i] * 1000.0);
        if (mm > 65535) {
            throw ContractError("write_depth: depth " + std::to_string(img.values[i]) +
                                " m at pixel " + std::to_string(i) + " exceeds the storable " +
                                std::to_string(kMaxStorableDepth) + " m");
        }
        raster.pixels[i] = static_cast<std::uint16_t>(mm);
    }
    png::write_gray16(raster, path);
}

inline DepthImage read_depth(const std::filesystem::path& path) {
    const png::Gray16 raster = png::read_gray16(path);
    DepthImage img(raster.width, raster.height);
    for (std::size_t i = 0; i < raster.pixels.size(); ++i) {
        if (raster.pixels[i] == 0) continue;
        img.values[i] = static_cast<double>(raster.pixels[i]) / 1000.0;
        img.valid[i] = 1;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Timestamps: one line per frame, frame id followed by whitespace-separated
// per-sensor decimal seconds. '#' comments and blank lines are skipped.
// ---------------------------------------------------------------------------

struct FrameTimestamps {
    std::int64_t frame_id = 0;
    std::vector<double> stamps;

    bool operator==(const FrameTimestamps&) const = default;
};

inline constexpr const char* kTimestampsFileName = "timestamps.txt";
inline constexpr const char* kTimestampColumns = "frame_id radar rgb depth ir pointcloud";

inline std::vector<FrameTimestamps> parse_timestamps(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("parse_timestamps: cannot open " + path.string());
    std::vector<FrameTimestamps> frames;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        auto fail = [&](const std::string& what) -> ParseError {
            return ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
        };
        FrameTimestamps frame;
        const char* p = line.data();
        const char* end = p + line.size();
        auto skip_ws = [&] {
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
        };
        skip_ws();
        {
            const auto [next, ec] = std::from_chars(p, end, frame.frame_id);
            if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t')) {
                throw fail("expected an integer frame id");
            }
            p = next;
        }
        while (true) {
            skip_ws();
            if (p == end) break;
            double stamp = 0.0;
            const auto [next, ec] = std::from_chars(p, end, stamp);
            if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t') ||
                !std::isfinite(stamp)) {
                throw fail("expected a finite decimal timestamp, got '" +
                           std::string(p, end) + "'");
            }
            frame.stamps.push_back(stamp);
            p = next;
        }
        if (frame.stamps.empty()) throw fail("frame has no timestamps");
        frames.push_back(std::move(frame));
    }
    return frames;
}

inline void write_timestamps(const std::vector<FrameTimestamps>& frames,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_timestamps: cannot open " + path.string());
    out << "# " << kTimestampColumns << "\n";
    char buf[64];
    for (const auto& frame : frames) {
        out << frame.frame_id;
        for (double stamp : frame.stamps) {
            const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), stamp);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
            (void)ec;
        }
        out << "\n";
    }
    if (!out) throw IoError("write_timestamps: write failed for " + path.string());
}

/// Checks what well-formed capture logs guarantee: per-sensor stamps never
/// decrease from frame to frame, and every frame lists the same sensors.
inline void validate_timestamps(const std::vector<FrameTimestamps>& frames,
                                const std::string& context) {
    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].stamps.size() != frames[0].stamps.size()) {
            throw ParseError(context + ": frame " + std::to_string(frames[i].frame_id) + " lists " +
                             std::to_string(frames[i].stamps.size()) + " sensors, expected " +
                             std::to_string(frames[0].stamps.size()));
        }
        for (std::size_t s = 0; s < frames[i].stamps.size(); ++s) {
            if (frames[i].stamps[s] < frames[i - 1].stamps[s]) {
                throw ParseError(context + ": sensor " + std::to_string(s) +
                                 " timestamp decreases at frame " +
                                 std::to_string(frames[i].frame_id));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset layout: a root directory with five modality folders plus one
// calibration folder, and timestamps.txt at the root. Frames are zero-padded
// six-digit file names so lexicographic order is numeric order.
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 5> kModalityDirs = {"radar_cube", "rgb", "depth", "ir",
                                                             "pointcloud"};
inline constexpr const char* kCalibDir = "calib";

struct DatasetRoot {
    std::filesystem::path path;

    void validate_layout() const {
        if (!std::filesystem::is_directory(path)) {
            throw IoError("DatasetRoot: " + path.string() + " is not a directory");
        }
        for (const char* dir : kModalityDirs) {
            if (!std::filesystem::is_directory(path / dir)) {
                throw ParseError("DatasetRoot: missing modality folder '" + std::string(dir) +
                                 "' under " + path.string());
            }
        }
        if (!std::filesystem::is_directory(path / kCalibDir)) {
            throw ParseError("DatasetRoot: missing calibration folder '" + std::string(kCalibDir) +
                             "' under " + path.string());
        }
    }
};

/// Creates the canonical folder structure (idempotent).
inline DatasetRoot create_dataset_root(const std::filesystem::path& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    for (const char* dir : kModalityDirs) std::filesystem::create_directories(path / dir, ec);
    std::filesystem::create_directories(path / kCalibDir, ec);
    DatasetRoot root{path};
    root.validate_layout();
    return root;
}

inline std::string frame_basename(std::int64_t frame_id) {
    if (frame_id < 0) throw ContractError("frame_basename: frame id must be >= 0");
    std::string s = std::to_string(frame_id);
    if (s.size() < 6) s.insert(0, 6 - s.size(), '0');
    return s;
}

/// Per-frame manifest: which modality files exist and the per-sensor
/// timestamps from timestamps.txt.
struct DatasetFrame {
    std::int64_t frame_id = 0;
    std::optional<std::filesystem::path> radar_cube_path;
    std::optional<std::filesystem::path> rgb_path;
    std::optional<std::filesystem::path> depth_path;
    std::optional<std::filesystem::path> ir_path;
    std::optional<std::filesystem::path> pointcloud_path;
    std::vector<double> timestamps;
};

/// A frame manifest plus the decoded payloads of the modalities this
/// library owns. Color and infrared images stay path references.
struct LoadedFrame {
    DatasetFrame frame;
    std::optional<AdcCube> cube;
    std::optional<DepthImage> depth;
    std::optional<PointCloud> pointcloud;
};

/// Loads one frame by id. The timestamps file is mandatory and must list
/// the frame; missing modality files are reported as absent, not errors.
inline LoadedFrame load_frame(const DatasetRoot& root, std::int64_t frame_id) {
    root.validate_layout();
    const std::filesystem::path ts_path = root.path / kTimestampsFileName;
    if (!std::filesystem::exists(ts_path)) {
        throw ParseError("load_frame: mandatory " + std::string(kTimestampsFileName) +
                         " missing under " + root.path.string());
    }
    const auto all_stamps = parse_timestamps(ts_path);
    validate_timestamps(all_stamps, ts_path.string());
    const FrameTimestamps* entry = nullptr;
    for (const auto& f : all_stamps) {
        if (f.frame_id == frame_id) {
            entry = &f;
            break;
        }
    }
    if (entry == nullptr) {
        throw ContractError("load_frame: frame " + std::to_string(frame_id) + " not present in " +
                            ts_path.string());
    }

    LoadedFrame loaded;
    loaded.frame.frame_id = frame_id;
    loaded.frame.timestamps = entry->stamps;
    const std::string base = frame_basename(frame_id);
    auto resolve = [&](const char* dir, const char* ext) -> std::optional<std::filesystem::path> {
        std::filesystem::path p = root.path / dir / (base + ext);
        if (std::filesystem::exists(p)) return p;
        return std::nullopt;
    };
    loaded.frame.radar_cube_path = resolve("radar_cube", kCubeExtension);
    loaded.frame.rgb_path = resolve("rgb", ".png");
    loaded.frame.depth_path = resolve("depth", ".png");
    loaded.frame.ir_path = resolve("ir", ".png");
    loaded.frame.pointcloud_path = resolve("pointcloud", ".csv");

    if (loaded.frame.radar_cube_path) loaded.cube = read_cube(*loaded.frame.radar_cube_path);
    if (loaded.frame.depth_path) loaded.depth = read_depth(*loaded.frame.depth_path);
    if (loaded.frame.pointcloud_path) {
        loaded.pointcloud = read_pointcloud_csv(*loaded.frame.pointcloud_path);
    }
    return loaded;
}

}  // namespace radarfuse
