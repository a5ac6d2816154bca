#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "radarfuse/errors.hpp"

// Reader/writer for the one raster profile this project stores on disk:
// 16-bit single-channel grayscale, non-interlaced portable network graphics.
// The writer emits filter-0 scanlines in a single compressed chunk; the
// reader accepts any standards-conforming file of that profile (all five
// scanline filters, split IDAT chunks) and fails with a located parse error
// on anything else. Allocation is bounded by the declared raster size,
// which is itself sanity-capped before use.

namespace radarfuse::png {

struct Gray16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> pixels;  // row-major
};

namespace detail {

inline constexpr std::array<unsigned char, 8> kSignature = {137, 80, 78, 71, 13, 10, 26, 10};
inline constexpr std::uint64_t kMaxPixels = 1ull << 26;  // 64M pixels, ~128 MB raw

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline std::uint32_t get_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<unsigned char>& out, const char type[5],
                         const std::vector<unsigned char>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, body.data(), static_cast<uInt>(body.size())));
    put_u32_be(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline void write_gray16(const Gray16& img, const std::filesystem::path& path) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
        throw ContractError("png::write_gray16: raster size does not match dims");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * 2;
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (row_bytes + 1));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter type: none
        for (int x = 0; x < img.width; ++x) {
            const std::uint16_t v =
                img.pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) +
                           static_cast<std::size_t>(x)];
            raw.push_back(static_cast<unsigned char>(v >> 8));  // big-endian samples
            raw.push_back(static_cast<unsigned char>(v & 0xff));
        }
    }
    uLongf compressed_len = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(compressed_len);
    if (::compress2(compressed.data(), &compressed_len, raw.data(), static_cast<uLong>(raw.size()),
                    Z_DEFAULT_COMPRESSION) != Z_OK) {
        throw IoError("png::write_gray16: deflate failed for " + path.string());
    }
    compressed.resize(compressed_len);

    std::vector<unsigned char> file(detail::kSignature.begin(), detail::kSignature.end());
    std::vector<unsigned char> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(16);  // bit depth
    ihdr.push_back(0);   // color type: grayscale
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // interlace: none
    detail::append_chunk(file, "IHDR", ihdr);
    detail::append_chunk(file, "IDAT", compressed);
    detail::append_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("png::write_gray16: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError("png::write_gray16: write failed for " + path.string());
}

inline Gray16 read_gray16(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("png::read_gray16: cannot open " + path.string());
    const auto file_size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<unsigned char> file(file_size);
    in.read(reinterpret_cast<char*>(file.data()), static_cast<std::streamsize>(file_size));
    if (!in) throw IoError("png::read_gray16: read failed for " + path.string());

    auto fail = [&](std::size_t offset, const std::string& what) -> ParseError {
        return ParseError(path.string() + ": offset " + std::to_string(offset) + ": " + what);
    };
    if (file_size < detail::kSignature.size() ||
        !std::equal(detail::kSignature.begin(), detail::kSignature.end(), file.begin())) {
        throw fail(0, "not a portable network graphics file");
    }

    std::uint32_t width = 0, height = 0;
    bool header_seen = false, end_seen = false;
    std::vector<unsigned char> compressed;
    std::size_t pos = detail::kSignature.size();
    while (pos < file_size) {
        if (file_size - pos < 12) throw fail(pos, "truncated chunk header");
        const std::uint32_t len = detail::get_u32_be(&file[pos]);
        if (file_size - pos - 12 < len) throw fail(pos, "chunk length exceeds file size");
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const unsigned char* data = &file[pos + 8];
        const std::uint32_t stored_crc = detail::get_u32_be(&file[pos + 8 + len]);
        const auto computed_crc = static_cast<std::uint32_t>(
            ::crc32(0L, &file[pos + 4], static_cast<uInt>(len + 4)));
        if (stored_crc != computed_crc) throw fail(pos, "chunk checksum mismatch");
        const std::string type_str(type, 4);
        if (type_str == "IHDR") {
            if (header_seen) throw fail(pos, "duplicate header chunk");
            if (len != 13) throw fail(pos, "header chunk must be 13 bytes");
            width = detail::get_u32_be(data);
            height = detail::get_u32_be(data + 4);
            if (width == 0 || height == 0 ||
                static_cast<std::uint64_t>(width) * height > detail::kMaxPixels) {
                throw fail(pos, "unsupported raster size " + std::to_string(width) + "x" +
                                    std::to_string(height));
            }
            if (data[8] != 16 || data[9] != 0) {
                throw fail(pos, "only 16-bit grayscale rasters are supported");
            }
            if (data[10] != 0 || data[11] != 0 || data[12] != 0) {
                throw fail(pos, "unsupported compression, filter method, or interlacing");
            }
            header_seen = true;
        } else if (type_str == "IDAT") {
            if (!header_seen) throw fail(pos, "image data before header");
            compressed.insert(compressed.end(), data, data + len);
        } else if (type_str == "IEND") {
            end_seen = true;
            break;
        }
        // Ancillary chunks are skipped.
        pos += 12 + len;
    }
    if (!header_seen) throw fail(file_size, "missing header chunk");
    if (!end_seen) throw fail(file_size, "missing end chunk");
    if (compressed.empty()) throw fail(file_size, "missing image data");

    const std::size_t row_bytes = static_cast<std::size_t>(width) * 2;
    const std::size_t expected_raw = static_cast<std::size_t>(height) * (row_bytes + 1);
    std::vector<unsigned char> raw(expected_raw);
    uLongf raw_len = static_cast<uLongf>(expected_raw);
    const int zrc = ::uncompress(raw.data(), &raw_len, compressed.data(),
                                 static_cast<uLong>(compressed.size()));
    if (zrc != Z_OK || raw_len != expected_raw) {
        throw ParseError(path.string() + ": image data does not inflate to " +
                         std::to_string(expected_raw) + " bytes");
    }

    Gray16 img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.pixels.resize(static_cast<std::size_t>(width) * height);
    std::vector<unsigned char> prev(row_bytes, 0);
    std::vector<unsigned char> cur(row_bytes, 0);
    constexpr int bpp = 2;
    for (std::uint32_t y = 0; y < height; ++y) {
        const unsigned char* row = &raw[static_cast<std::size_t>(y) * (row_bytes + 1)];
        const unsigned char filter = row[0];
        const unsigned char* src = row + 1;
        switch (filter) {
            case 0:
                std::memcpy(cur.data(), src, row_bytes);
                break;
            case 1:  // sub
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    const int a = i >= bpp ? cur[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>(src[i] + a);
                }
                break;
            case 2:  // up
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    cur[i] = static_cast<unsigned char>(src[i] + prev[i]);
                }
                break;
            case 3:  // average
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    const int a = i >= bpp ? cur[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>(src[i] + (a + prev[i]) / 2);
                }
                break;
            case 4:  // paeth
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    const int a = i >= bpp ? cur[i - bpp] : 0;
                    const int c = i >= bpp ? prev[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>(src[i] + detail::paeth(a, prev[i], c));
                }
                break;
            default:
                throw ParseError(path.string() + ": row " + std::to_string(y) +
                                 " uses unknown scanline filter " + std::to_string(filter));
        }
        for (std::uint32_t x = 0; x < width; ++x) {
            img.pixels[static_cast<std::size_t>(y) * width + x] =
                static_cast<std::uint16_t>((cur[2 * x] << 8) | cur[2 * x + 1]);
        }
        std::swap(prev, cur);
    }
    return img;
}

}  // namespace radarfuse::png
