#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radarfuse/errors.hpp"

namespace radarfuse {

/// Smallest depth a valid pixel may carry (meters).
inline constexpr double kMinValidDepth = 1e-3;

/// A metric depth raster with a validity mask. Invalid pixels carry value
/// 0; valid pixels carry a finite positive depth in meters.
struct DepthImage {
    int width = 0;
    int height = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    DepthImage() = default;

    DepthImage(int width_, int height_) : width(width_), height(height_) {
        if (width < 1 || height < 1) {
            throw ContractError("DepthImage: dims must be >= 1, got " + std::to_string(width) +
                                "x" + std::to_string(height));
        }
        values.assign(pixel_count(), 0.0);
        valid.assign(pixel_count(), 0);
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(x);
    }

    double at(int x, int y) const { return values[index(x, y)]; }
    bool valid_at(int x, int y) const { return valid[index(x, y)] != 0; }

    void set(int x, int y, double depth) {
        if (!(depth > 0.0) || !std::isfinite(depth)) {
            throw ContractError("DepthImage::set: valid depth must be finite and > 0, got " +
                                std::to_string(depth));
        }
        values[index(x, y)] = depth;
        valid[index(x, y)] = 1;
    }

    void clear(int x, int y) {
        values[index(x, y)] = 0.0;
        valid[index(x, y)] = 0;
    }

    std::size_t valid_count() const {
        return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
    }

    void validate() const {
        if (values.size() != pixel_count() || valid.size() != pixel_count()) {
            throw ContractError("DepthImage: raster length does not match dims");
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (valid[i]) {
                if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
                    throw ContractError("DepthImage: valid pixel " + std::to_string(i) +
                                        " has non-positive or non-finite depth");
                }
            } else if (values[i] != 0.0) {
                throw ContractError("DepthImage: invalid pixel " + std::to_string(i) +
                                    " must carry value 0");
            }
        }
    }

    bool same_dims(const DepthImage& other) const {
        return width == other.width && height == other.height;
    }
};

using PixelMask = std::vector<std::uint8_t>;

namespace detail {

inline void require_same_dims(const DepthImage& a, const DepthImage& b, const char* op) {
    if (!a.same_dims(b)) {
        throw ContractError(std::string(op) + ": image dims differ (" + std::to_string(a.width) +
                            "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) +
                            "x" + std::to_string(b.height) + ")");
    }
}

inline void require_mask_size(const PixelMask& mask, const DepthImage& img, const char* op) {
    if (mask.size() != img.pixel_count()) {
        throw ContractError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                            " does not match pixel count " + std::to_string(img.pixel_count()));
    }
}

/// Binary dilation with a k x k square element. Out-of-image neighborhood
/// is treated as empty, the neutral element for the union.
inline PixelMask dilate(const PixelMask& mask, int width, int height, int k) {
    const int r = k / 2;
    PixelMask out(mask.size(), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            std::uint8_t hit = 0;
            for (int dy = -r; dy <= r && !hit; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= height) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= width) continue;
                    if (mask[static_cast<std::size_t>(yy) * static_cast<std::size_t>(width) +
                             static_cast<std::size_t>(xx)]) {
                        hit = 1;
                        break;
                    }
                }
            }
            out[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)] = hit;
        }
    }
    return out;
}

/// Binary erosion with a k x k square element. Out-of-image neighborhood is
/// treated as full, the neutral element for the intersection; with the
/// dilation convention above this keeps opening anti-extensive and closing
/// extensive up to the border.
inline PixelMask erode(const PixelMask& mask, int width, int height, int k) {
    const int r = k / 2;
    PixelMask out(mask.size(), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            std::uint8_t all = 1;
            for (int dy = -r; dy <= r && all; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= height) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= width) continue;
                    if (!mask[static_cast<std::size_t>(yy) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(xx)]) {
                        all = 0;
                        break;
                    }
                }
            }
            out[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)] = all;
        }
    }
    return out;
}

inline PixelMask close_mask(const PixelMask& m, int w, int h, int k) {
    return erode(dilate(m, w, h, k), w, h, k);
}

inline PixelMask open_mask(const PixelMask& m, int w, int h, int k) {
    return dilate(erode(m, w, h, k), w, h, k);
}

/// Median of the valid depths in the k x k window around (x, y). Averages
/// the two central values for even counts. Returns 0 when the window holds
/// no valid pixel.
inline double window_median(const DepthImage& img, int x, int y, int k) {
    const int r = k / 2;
    std::vector<double> depths;
    for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= img.height) continue;
        for (int dx = -r; dx <= r; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= img.width) continue;
            if (img.valid_at(xx, yy)) depths.push_back(img.at(xx, yy));
        }
    }
    if (depths.empty()) return 0.0;
    std::sort(depths.begin(), depths.end());
    const std::size_t n = depths.size();
    return n % 2 == 1 ? depths[n / 2] : 0.5 * (depths[n / 2 - 1] + depths[n / 2]);
}

}  // namespace detail

/// Mask denoising: closes the validity mask (connecting large valid areas
/// across small gaps), then opens it (removing isolated specks). Pixels the
/// closing made valid are filled with the median valid depth in their
/// closing window; pixels the opening removed become invalid. Kernels are
/// odd square side lengths; 1 is the identity.
inline DepthImage denoise_depth(const DepthImage& img, int close_kernel, int open_kernel) {
    img.validate();
    if (close_kernel < 1 || close_kernel % 2 == 0 || open_kernel < 1 || open_kernel % 2 == 0) {
        throw ContractError("denoise_depth: kernels must be odd and >= 1, got close=" +
                            std::to_string(close_kernel) + " open=" + std::to_string(open_kernel));
    }
    const PixelMask closed = detail::close_mask(img.valid, img.width, img.height, close_kernel);
    const PixelMask final_mask = detail::open_mask(closed, img.width, img.height, open_kernel);

    DepthImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t i = img.index(x, y);
            if (!final_mask[i]) continue;
            if (img.valid[i]) {
                out.set(x, y, img.values[i]);
            } else {
                const double fill = detail::window_median(img, x, y, close_kernel);
                if (fill > 0.0) out.set(x, y, fill);
            }
        }
    }
    return out;
}

/// Maps a [0, 1] activation raster to metric depth: depth = raw * max_depth,
/// clamped below at the minimum representable valid depth. Every output
/// pixel is valid.
inline DepthImage sigmoid_to_depth(int width, int height, std::span<const double> raw,
                                   double max_depth_m) {
    if (!(max_depth_m > 0.0) || !std::isfinite(max_depth_m)) {
        throw ContractError("sigmoid_to_depth: max_depth must be positive and finite");
    }
    DepthImage out(width, height);
    if (raw.size() != out.pixel_count()) {
        throw ContractError("sigmoid_to_depth: raster length " + std::to_string(raw.size()) +
                            " does not match dims");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!(raw[i] >= 0.0) || !(raw[i] <= 1.0)) {
            throw ContractError("sigmoid_to_depth: value " + std::to_string(raw[i]) +
                                " at pixel " + std::to_string(i) + " outside [0, 1]");
        }
        out.values[i] = std::max(raw[i] * max_depth_m, kMinValidDepth);
        out.valid[i] = 1;
    }
    return out;
}

struct ScaleShift {
    double scale = 1.0;
    double shift = 0.0;
};

/// Least-squares affine alignment of `ref` onto `pred` over the masked
/// pixels: minimizes sum of (scale * ref_i + shift - pred_i)^2 via the 2x2
/// normal equations. Needs at least two masked pixels and a non-constant
/// ref on the mask.
inline ScaleShift fit_scale_shift(const DepthImage& pred, const DepthImage& ref,
                                  const PixelMask& mask) {
    detail::require_same_dims(pred, ref, "fit_scale_shift");
    detail::require_mask_size(mask, pred, "fit_scale_shift");
    double sum_r = 0.0, sum_p = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        sum_r += ref.values[i];
        sum_p += pred.values[i];
        ++n;
    }
    if (n < 2) {
        throw NumericError("fit_scale_shift: need >= 2 masked pixels, got " + std::to_string(n));
    }
    const double mean_r = sum_r / static_cast<double>(n);
    const double mean_p = sum_p / static_cast<double>(n);
    double var_r = 0.0, cov_rp = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double dr = ref.values[i] - mean_r;
        var_r += dr * dr;
        cov_rp += dr * (pred.values[i] - mean_p);
    }
    const double scale_floor = 1e-12 * static_cast<double>(n) * std::max(1.0, mean_r * mean_r);
    if (var_r <= scale_floor) {
        throw NumericError("fit_scale_shift: reference is constant on the mask, fit is singular");
    }
    ScaleShift st;
    st.scale = cov_rp / var_r;
    st.shift = mean_p - st.scale * mean_r;
    return st;
}

struct SsiResult {
    double loss = 0.0;
    ScaleShift fit;
};

/// Scale-shift-invariant supervision: fits (scale, shift) on `fit_mask`
/// (the trusted pixels), then takes the mean absolute difference between
/// `pred` and the aligned pseudo labels over `apply_mask` (the remaining
/// pixels). An empty apply mask yields loss 0 with a valid fit.
inline SsiResult ssi_loss(const DepthImage& pred, const DepthImage& pseudo,
                          const PixelMask& fit_mask, const PixelMask& apply_mask) {
    detail::require_same_dims(pred, pseudo, "ssi_loss");
    detail::require_mask_size(fit_mask, pred, "ssi_loss");
    detail::require_mask_size(apply_mask, pred, "ssi_loss");
    SsiResult result;
    result.fit = fit_scale_shift(pred, pseudo, fit_mask);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < apply_mask.size(); ++i) {
        if (!apply_mask[i]) continue;
        sum += std::abs(pred.values[i] -
                        (result.fit.scale * pseudo.values[i] + result.fit.shift));
        ++n;
    }
    result.loss = n > 0 ? sum / static_cast<double>(n) : 0.0;
    return result;
}

/// Scale-invariant logarithmic loss over the masked pixels:
/// sqrt(mean(g^2) - lambda * mean(g)^2) with g = log(pred) - log(gt).
/// Insensitive to a common scale on both images; lambda defaults to 0.5.
inline double silog_loss(const DepthImage& pred, const DepthImage& gt, const PixelMask& mask,
                         double lambda = 0.5) {
    detail::require_same_dims(pred, gt, "silog_loss");
    detail::require_mask_size(mask, pred, "silog_loss");
    if (!(lambda >= 0.0) || !(lambda <= 1.0)) {
        throw ContractError("silog_loss: lambda must lie in [0, 1]");
    }
    double sum_g = 0.0, sum_g2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        if (!(pred.values[i] > 0.0) || !(gt.values[i] > 0.0)) {
            throw ContractError("silog_loss: non-positive depth at masked pixel " +
                                std::to_string(i));
        }
        const double g = std::log(pred.values[i]) - std::log(gt.values[i]);
        sum_g += g;
        sum_g2 += g * g;
        ++n;
    }
    if (n == 0) return 0.0;
    const double mean_g = sum_g / static_cast<double>(n);
    const double value = sum_g2 / static_cast<double>(n) - lambda * mean_g * mean_g;
    return std::sqrt(std::max(value, 0.0));
}

/// Huber-style absolute depth supervision, mean over the masked pixels:
/// 0.5 e^2 / beta inside |e| < beta, |e| - 0.5 beta outside.
inline double smooth_l1_loss(const DepthImage& pred, const DepthImage& gt, const PixelMask& mask,
                             double beta = 1.0) {
    detail::require_same_dims(pred, gt, "smooth_l1_loss");
    detail::require_mask_size(mask, pred, "smooth_l1_loss");
    if (!(beta > 0.0)) throw ContractError("smooth_l1_loss: beta must be > 0");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double e = std::abs(pred.values[i] - gt.values[i]);
        sum += e < beta ? 0.5 * e * e / beta : e - 0.5 * beta;
        ++n;
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

namespace detail {

inline std::vector<double> fourth_power_residual(const DepthImage& pred,
                                                 const DepthImage& aligned) {
    std::vector<double> r(pred.pixel_count());
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double e = pred.values[i] - aligned.values[i];
        const double e2 = e * e;
        r[i] = e2 * e2;
    }
    return r;
}

inline int clamp_coord(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

/// 3x3 edge responses with replicate padding. `horizontal` selects the
/// x-direction kernel; the y kernel is its transpose.
inline std::vector<double> sobel(const std::vector<double>& img, int w, int h, bool horizontal) {
    static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    std::vector<double> out(img.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = clamp_coord(x + dx, 0, w - 1);
                    const int yy = clamp_coord(y + dy, 0, h - 1);
                    const int weight = horizontal ? kx[dy + 1][dx + 1] : ky[dy + 1][dx + 1];
                    acc += weight * img[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
                                        static_cast<std::size_t>(xx)];
                }
            }
            out[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                static_cast<std::size_t>(x)] = acc;
        }
    }
    return out;
}

}  // namespace detail

/// Gradient-matching loss: the residual image R = (pred - aligned)^4 should
/// be flat, so the loss is the mean over the masked pixels of
/// |forward-difference of R in x| + |same in y|. Absolute values keep
/// opposing gradients from cancelling to a spurious zero. Differences that
/// would cross the image border contribute nothing.
inline double gm_loss(const DepthImage& pred, const DepthImage& aligned_pseudo,
                      const PixelMask& mask) {
    detail::require_same_dims(pred, aligned_pseudo, "gm_loss");
    detail::require_mask_size(mask, pred, "gm_loss");
    const auto r = detail::fourth_power_residual(pred, aligned_pseudo);
    const int w = pred.width, h = pred.height;
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = pred.index(x, y);
            if (!mask[i]) continue;
            double term = 0.0;
            if (x + 1 < w) term += std::abs(r[i + 1] - r[i]);
            if (y + 1 < h) term += std::abs(r[i + static_cast<std::size_t>(w)] - r[i]);
            sum += term;
            ++n;
        }
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

/// Gradient-regression loss: mean squared difference of the two directional
/// edge responses between prediction and aligned pseudo labels, over the
/// masked pixels.
inline double gr_loss(const DepthImage& pred, const DepthImage& aligned_pseudo,
                      const PixelMask& mask) {
    detail::require_same_dims(pred, aligned_pseudo, "gr_loss");
    detail::require_mask_size(mask, pred, "gr_loss");
    const int w = pred.width, h = pred.height;
    const auto ex_p = detail::sobel(pred.values, w, h, true);
    const auto ex_a = detail::sobel(aligned_pseudo.values, w, h, true);
    const auto ey_p = detail::sobel(pred.values, w, h, false);
    const auto ey_a = detail::sobel(aligned_pseudo.values, w, h, false);
    double sum_x = 0.0, sum_y = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double dx = ex_p[i] - ex_a[i];
        const double dy = ey_p[i] - ey_a[i];
        sum_x += dx * dx;
        sum_y += dy * dy;
        ++n;
    }
    if (n == 0) return 0.0;
    return sum_x / static_cast<double>(n) + sum_y / static_cast<double>(n);
}

/// Term multipliers and shape parameters of the combined loss. The default
/// weights leave the plain unweighted sum.
struct LossOptions {
    double lambda = 0.5;     // silog variance blend
    double beta = 1.0;       // smooth-l1 transition point, meters
    double weight_silog = 1.0;
    double weight_ssi = 1.0;
    double weight_smooth_l1 = 1.0;
    double weight_gm = 1.0;
    double weight_gr = 1.0;
};

/// The five loss terms (already weighted), their sum, and the pseudo-label
/// alignment that produced the ssi/gm/gr terms.
struct LossBreakdown {
    double silog = 0.0;
    double ssi = 0.0;
    double smooth_l1 = 0.0;
    double gm = 0.0;
    double gr = 0.0;
    double total = 0.0;
    double fitted_scale = 1.0;
    double fitted_shift = 0.0;
};

namespace detail {

inline DepthImage align_pseudo(const DepthImage& pseudo, const ScaleShift& st) {
    DepthImage aligned = pseudo;
    for (std::size_t i = 0; i < aligned.values.size(); ++i) {
        aligned.values[i] = st.scale * pseudo.values[i] + st.shift;
        aligned.valid[i] = 1;
    }
    return aligned;
}

}  // namespace detail

/// Combined depth supervision. Ground truth drives the silog and smooth-l1
/// terms on its valid pixels and the pseudo-label alignment fit; the ssi
/// term supervises the pixels ground truth does not cover; the two gradient
/// terms compare prediction and aligned pseudo labels over the full raster.
inline LossBreakdown total_loss(const DepthImage& pred, const DepthImage& gt,
                                const DepthImage& pseudo, const LossOptions& opts = {}) {
    detail::require_same_dims(pred, gt, "total_loss");
    detail::require_same_dims(pred, pseudo, "total_loss");
    const PixelMask& fit_mask = gt.valid;
    PixelMask apply_mask(fit_mask.size());
    for (std::size_t i = 0; i < fit_mask.size(); ++i) apply_mask[i] = fit_mask[i] ? 0 : 1;
    const PixelMask all_mask(fit_mask.size(), 1);

    LossBreakdown out;
    out.silog = opts.weight_silog * silog_loss(pred, gt, fit_mask, opts.lambda);
    out.smooth_l1 = opts.weight_smooth_l1 * smooth_l1_loss(pred, gt, fit_mask, opts.beta);
    const SsiResult ssi = ssi_loss(pred, pseudo, fit_mask, apply_mask);
    out.ssi = opts.weight_ssi * ssi.loss;
    out.fitted_scale = ssi.fit.scale;
    out.fitted_shift = ssi.fit.shift;
    const DepthImage aligned = detail::align_pseudo(pseudo, ssi.fit);
    out.gm = opts.weight_gm * gm_loss(pred, aligned, all_mask);
    out.gr = opts.weight_gr * gr_loss(pred, aligned, all_mask);
    out.total = out.silog + out.ssi + out.smooth_l1 + out.gm + out.gr;
    return out;
}

/// Analytic per-pixel derivative of total_loss with respect to the
/// prediction. The fitted (scale, shift) pair is treated as a constant
/// during differentiation, matching the two-phase fit-then-penalize
/// definition of the pseudo-label terms. At the non-differentiable points
/// (exact silog match, smooth-l1 kink, absolute-value ties) the zero
/// subgradient is chosen.
inline std::vector<double> total_loss_gradient(const DepthImage& pred, const DepthImage& gt,
                                               const DepthImage& pseudo,
                                               const LossOptions& opts = {}) {
    detail::require_same_dims(pred, gt, "total_loss_gradient");
    detail::require_same_dims(pred, pseudo, "total_loss_gradient");
    const std::size_t n_pixels = pred.pixel_count();
    const int w = pred.width, h = pred.height;
    const PixelMask& fit_mask = gt.valid;
    std::vector<double> grad(n_pixels, 0.0);

    // silog over the ground-truth mask.
    {
        double sum_g = 0.0, sum_g2 = 0.0;
        std::size_t m = 0;
        for (std::size_t i = 0; i < n_pixels; ++i) {
            if (!fit_mask[i]) continue;
            if (!(pred.values[i] > 0.0) || !(gt.values[i] > 0.0)) {
                throw ContractError("total_loss_gradient: non-positive depth at masked pixel " +
                                    std::to_string(i));
            }
            const double g = std::log(pred.values[i]) - std::log(gt.values[i]);
            sum_g += g;
            sum_g2 += g * g;
            ++m;
        }
        if (m > 0) {
            const double mean_g = sum_g / static_cast<double>(m);
            const double value = std::max(sum_g2 / static_cast<double>(m) - opts.lambda * mean_g * mean_g, 0.0);
            const double loss = std::sqrt(value);
            if (loss > 0.0) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t i = 0; i < n_pixels; ++i) {
                    if (!fit_mask[i]) continue;
                    const double g = std::log(pred.values[i]) - std::log(gt.values[i]);
                    const double dv = 2.0 * inv_m * (g - opts.lambda * mean_g) / pred.values[i];
                    grad[i] += opts.weight_silog * dv / (2.0 * loss);
                }
            }
        }
    }

    // smooth-l1 over the ground-truth mask.
    {
        std::size_t m = 0;
        for (std::size_t i = 0; i < n_pixels; ++i) m += fit_mask[i] ? 1 : 0;
        if (m > 0) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < n_pixels; ++i) {
                if (!fit_mask[i]) continue;
                const double e = pred.values[i] - gt.values[i];
                const double d = std::abs(e) < opts.beta
                                     ? e / opts.beta
                                     : (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
                grad[i] += opts.weight_smooth_l1 * inv_m * d;
            }
        }
    }

    // Pseudo-label terms share one frozen alignment.
    PixelMask apply_mask(n_pixels);
    for (std::size_t i = 0; i < n_pixels; ++i) apply_mask[i] = fit_mask[i] ? 0 : 1;
    const ScaleShift st = fit_scale_shift(pred, pseudo, fit_mask);
    const DepthImage aligned = detail::align_pseudo(pseudo, st);

    // ssi over the complement mask.
    {
        std::size_t m = 0;
        for (std::size_t i = 0; i < n_pixels; ++i) m += apply_mask[i] ? 1 : 0;
        if (m > 0) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < n_pixels; ++i) {
                if (!apply_mask[i]) continue;
                const double e = pred.values[i] - aligned.values[i];
                grad[i] += opts.weight_ssi * inv_m * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
            }
        }
    }

    // gm: chain rule through the fourth-power residual image.
    {
        const auto r = detail::fourth_power_residual(pred, aligned);
        std::vector<double> grad_r(n_pixels, 0.0);
        const double inv_n = 1.0 / static_cast<double>(n_pixels);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = pred.index(x, y);
                if (x + 1 < w) {
                    const double d = r[i + 1] - r[i];
                    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    grad_r[i + 1] += inv_n * s;
                    grad_r[i] -= inv_n * s;
                }
                if (y + 1 < h) {
                    const double d = r[i + static_cast<std::size_t>(w)] - r[i];
                    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    grad_r[i + static_cast<std::size_t>(w)] += inv_n * s;
                    grad_r[i] -= inv_n * s;
                }
            }
        }
        for (std::size_t i = 0; i < n_pixels; ++i) {
            const double e = pred.values[i] - aligned.values[i];
            grad[i] += opts.weight_gm * grad_r[i] * 4.0 * e * e * e;
        }
    }

    // gr: adjoint of the edge responses with replicate padding.
    {
        const auto ex_p = detail::sobel(pred.values, w, h, true);
        const auto ex_a = detail::sobel(aligned.values, w, h, true);
        const auto ey_p = detail::sobel(pred.values, w, h, false);
        const auto ey_a = detail::sobel(aligned.values, w, h, false);
        static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
        static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
        const double inv_n = 1.0 / static_cast<double>(n_pixels);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = pred.index(x, y);
                const double up_x = 2.0 * inv_n * (ex_p[i] - ex_a[i]);
                const double up_y = 2.0 * inv_n * (ey_p[i] - ey_a[i]);
                if (up_x == 0.0 && up_y == 0.0) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = detail::clamp_coord(x + dx, 0, w - 1);
                        const int yy = detail::clamp_coord(y + dy, 0, h - 1);
                        const std::size_t j = pred.index(xx, yy);
                        grad[j] += opts.weight_gr *
                                   (up_x * kx[dy + 1][dx + 1] + up_y * ky[dy + 1][dx + 1]);
                    }
                }
            }
        }
    }
    return grad;
}

/// Marks the ceil(fraction * N) highest-loss pixels as ignored (false in
/// the returned mask). Ties at the threshold are broken by pixel index:
/// lower indices are kept.
inline PixelMask top_loss_mask(std::span<const double> loss_map, double fraction) {
    if (!(fraction >= 0.0) || !(fraction < 1.0)) {
        throw ContractError("top_loss_mask: fraction must lie in [0, 1)");
    }
    const std::size_t n = loss_map.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(loss_map[i])) {
            throw ContractError("top_loss_mask: non-finite loss at pixel " + std::to_string(i));
        }
    }
    const auto ignore_count =
        static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    PixelMask mask(n, 1);
    if (ignore_count == 0) return mask;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // "More ignorable" = larger loss, then larger index.
    auto more_ignorable = [&](std::size_t a, std::size_t b) {
        if (loss_map[a] != loss_map[b]) return loss_map[a] > loss_map[b];
        return a > b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ignore_count - 1),
                     order.end(), more_ignorable);
    for (std::size_t i = 0; i < ignore_count; ++i) mask[order[i]] = 0;
    return mask;
}

/// Depth completion metrics over the jointly valid pixels.
struct DepthMetrics {
    double rmse_m = 0.0;
    double mae_m = 0.0;
    double irmse_inv_m = 0.0;
    double imae_inv_m = 0.0;
    std::size_t valid_count = 0;
};

/// RMSE/MAE on depth and on inverse depth over the joint valid mask. The
/// inverse metrics use only pixels where both depths exceed the minimum
/// valid depth. An empty joint mask is an evaluation error, never a silent
/// perfect score.
inline DepthMetrics depth_metrics(const DepthImage& pred, const DepthImage& gt) {
    detail::require_same_dims(pred, gt, "depth_metrics");
    DepthMetrics m;
    double sum_e2 = 0.0, sum_abs_e = 0.0, sum_i2 = 0.0, sum_abs_i = 0.0;
    std::size_t n_inv = 0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        if (!pred.valid[i] || !gt.valid[i]) continue;
        const double e = pred.values[i] - gt.values[i];
        sum_e2 += e * e;
        sum_abs_e += std::abs(e);
        ++m.valid_count;
        if (pred.values[i] > kMinValidDepth && gt.values[i] > kMinValidDepth) {
            const double ie = 1.0 / pred.values[i] - 1.0 / gt.values[i];
            sum_i2 += ie * ie;
            sum_abs_i += std::abs(ie);
            ++n_inv;
        }
    }
    if (m.valid_count == 0) {
        throw NumericError("depth_metrics: no jointly valid pixels to evaluate");
    }
    m.rmse_m = std::sqrt(sum_e2 / static_cast<double>(m.valid_count));
    m.mae_m = sum_abs_e / static_cast<double>(m.valid_count);
    if (n_inv > 0) {
        m.irmse_inv_m = std::sqrt(sum_i2 / static_cast<double>(n_inv));
        m.imae_inv_m = sum_abs_i / static_cast<double>(n_inv);
    }
    return m;
}

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
    j = nlohmann::json{{"silog", b.silog},   {"ssi", b.ssi},
                       {"smooth_l1", b.smooth_l1}, {"gm", b.gm},
                       {"gr", b.gr},         {"total", b.total},
                       {"fitted_scale", b.fitted_scale}, {"fitted_shift", b.fitted_shift}};
}

inline void to_json(nlohmann::json& j, const DepthMetrics& m) {
    j = nlohmann::json{{"rmse_m", m.rmse_m},
                       {"mae_m", m.mae_m},
                       {"irmse_inv_m", m.irmse_inv_m},
                       {"imae_inv_m", m.imae_inv_m},
                       {"valid_count", m.valid_count}};
}

}  // namespace radarfuse
