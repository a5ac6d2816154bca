#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "radarfuse/errors.hpp"

namespace radarfuse::fft {

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// In-place iterative radix-2 transform. `sign` is the exponent sign of the
/// twiddle factors: -1 forward, +1 inverse (no scaling applied here).
inline void fft_pow2(std::complex<double>* a, std::size_t n, int sign) {
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto w = std::polar(1.0, ang * static_cast<double>(k));
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

/// Bluestein's chirp-z transform for arbitrary n, forward direction.
inline void bluestein_forward(std::complex<double>* a, std::size_t n) {
    const std::size_t m = next_pow2(2 * n - 1);
    std::vector<std::complex<double>> w(n), fa(m), fb(m);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the twiddle argument small and exact.
        const std::size_t k2 = (k * k) % (2 * n);
        w[k] = std::polar(1.0, -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n));
    }
    for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * w[k];
    fb[0] = std::conj(w[0]);
    for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(w[k]);
    fft_pow2(fa.data(), m, -1);
    fft_pow2(fb.data(), m, -1);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    fft_pow2(fa.data(), m, +1);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * w[k] * scale;
}

}  // namespace detail

/// Forward unnormalized DFT, in place. Handles any length.
inline void forward(std::complex<double>* data, std::size_t n) {
    if (n <= 1) return;
    if (detail::is_pow2(n)) {
        detail::fft_pow2(data, n, -1);
    } else {
        detail::bluestein_forward(data, n);
    }
}

inline void forward(std::vector<std::complex<double>>& data) { forward(data.data(), data.size()); }

/// Inverse DFT with 1/n scaling, in place.
inline void inverse(std::complex<double>* data, std::size_t n) {
    if (n == 0) return;
    for (std::size_t i = 0; i < n; ++i) data[i] = std::conj(data[i]);
    forward(data, n);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::conj(data[i]) * scale;
}

inline void inverse(std::vector<std::complex<double>>& data) { inverse(data.data(), data.size()); }

/// Rotates a spectrum so the zero-frequency bin lands at index n/2.
/// Requires even length; shifted index i holds unshifted bin (i - n/2) mod n.
inline void shift_zero_to_center(std::vector<std::complex<double>>& data) {
    if (data.size() % 2 != 0) {
        throw ContractError("shift_zero_to_center: length must be even, got " +
                            std::to_string(data.size()));
    }
    std::rotate(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(data.size() / 2),
                data.end());
}

/// Fractional peak refinement from three samples around a local maximum.
/// Returns the sub-bin offset in [-0.5, 0.5] relative to the center sample.
inline double parabolic_offset(double left, double center, double right) {
    const double denom = left - 2.0 * center + right;
    if (denom == 0.0) return 0.0;
    double delta = 0.5 * (left - right) / denom;
    return std::clamp(delta, -0.5, 0.5);
}

}  // namespace radarfuse::fft
