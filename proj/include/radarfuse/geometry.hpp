#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "radarfuse/csv.hpp"
#include "radarfuse/depth.hpp"
#include "radarfuse/dsp.hpp"
#include "radarfuse/errors.hpp"

namespace radarfuse {

/// Ideal pinhole camera. Lens distortion is out of scope; distorted inputs
/// must be rectified upstream.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) {
            throw ContractError("CameraIntrinsics: focal lengths must be positive");
        }
        if (width < 1 || height < 1) {
            throw ContractError("CameraIntrinsics: image size must be >= 1x1");
        }
        if (!(cx >= 0.0) || cx >= static_cast<double>(width) || !(cy >= 0.0) ||
            cy >= static_cast<double>(height)) {
            throw ContractError("CameraIntrinsics: principal point must lie inside the image");
        }
    }
};

/// SE(3) pose as a rotation matrix and translation vector, p' = R p + T.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }

    void validate() const {
        const Eigen::Matrix3d defect = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        if (defect.cwiseAbs().maxCoeff() > 1e-9) {
            throw ContractError("RigidTransform: rotation is not orthonormal (defect " +
                                std::to_string(defect.cwiseAbs().maxCoeff()) + ")");
        }
        if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
            throw ContractError("RigidTransform: rotation determinant is " +
                                std::to_string(rotation.determinant()) + ", expected +1");
        }
        if (!translation.allFinite()) {
            throw ContractError("RigidTransform: non-finite translation");
        }
    }
};

inline Eigen::Vector3d transform_point(const RigidTransform& t, const Eigen::Vector3d& p) {
    return t.rotation * p + t.translation;
}

inline RigidTransform invert_transform(const RigidTransform& t) {
    RigidTransform inv;
    inv.rotation = t.rotation.transpose();
    inv.translation = -(inv.rotation * t.translation);
    return inv;
}

/// a then b reversed: compose(a, b) applies b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform c;
    c.rotation = a.rotation * b.rotation;
    c.translation = a.rotation * b.translation + a.translation;
    return c;
}

/// World-to-sensor poses of the color and infrared cameras for one
/// calibration view.
struct ViewExtrinsics {
    RigidTransform rgb;
    RigidTransform ir;
};

namespace detail {

/// Nearest rotation to an arbitrary 3x3 matrix in the Frobenius sense:
/// SVD with the determinant-corrected middle factor.
inline Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d s = Eigen::Vector3d::Ones();
    if ((u * v.transpose()).determinant() < 0.0) s(2) = -1.0;
    return u * s.asDiagonal() * v.transpose();
}

}  // namespace detail

/// Combines per-view infrared-to-color estimates into one transform. Each
/// view contributes R_i = R_rgb * R_ir^-1 and T_i = T_rgb - R_i * T_ir;
/// rotations are averaged by the chordal mean (matrix sum projected back to
/// the nearest rotation) and translations arithmetically. Noiseless views
/// all encode the same transform, so the mean reproduces it exactly.
inline RigidTransform joint_extrinsics(const std::vector<ViewExtrinsics>& views) {
    if (views.empty()) throw ContractError("joint_extrinsics: need at least one view");
    Eigen::Matrix3d rotation_sum = Eigen::Matrix3d::Zero();
    Eigen::Vector3d translation_sum = Eigen::Vector3d::Zero();
    for (const ViewExtrinsics& view : views) {
        view.rgb.validate();
        view.ir.validate();
        const Eigen::Matrix3d r = view.rgb.rotation * view.ir.rotation.transpose();
        rotation_sum += r;
        translation_sum += view.rgb.translation - r * view.ir.translation;
    }
    RigidTransform result;
    result.rotation = detail::project_to_rotation(rotation_sum);
    result.translation = translation_sum / static_cast<double>(views.size());
    return result;
}

/// Lifts pixel (u, v) at the given depth into the camera frame:
/// depth * ((u - cx)/fx, (v - cy)/fy, 1).
inline Eigen::Vector3d backproject_pixel(double u, double v, double depth,
                                         const CameraIntrinsics& intrinsics) {
    intrinsics.validate();
    if (!(depth > 0.0) || !std::isfinite(depth)) {
        throw ContractError("backproject_pixel: depth must be positive and finite, got " +
                            std::to_string(depth));
    }
    return {depth * (u - intrinsics.cx) / intrinsics.fx,
            depth * (v - intrinsics.cy) / intrinsics.fy, depth};
}

struct PixelDepth {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

/// Projects a camera-frame point to pixel coordinates and depth. Points at
/// or behind the image plane are an error.
inline PixelDepth project_point(const Eigen::Vector3d& p, const CameraIntrinsics& intrinsics) {
    intrinsics.validate();
    if (!(p.z() > 0.0)) {
        throw NumericError("project_point: point is behind the camera (z = " +
                           std::to_string(p.z()) + ")");
    }
    return {intrinsics.fx * p.x() / p.z() + intrinsics.cx,
            intrinsics.fy * p.y() / p.z() + intrinsics.cy, p.z()};
}

/// One radar/infrared observation of the same reflector, both in meters.
struct CorrespondencePair {
    Eigen::Vector3d radar_point = Eigen::Vector3d::Zero();
    Eigen::Vector3d ir_point = Eigen::Vector3d::Zero();
};

struct RigidFit {
    RigidTransform transform;
    double rms_residual_m = 0.0;
};

/// Closed-form least squares pose between two point sets: centroid
/// subtraction, cross-covariance SVD, determinant-corrected rotation,
/// translation from the centroids. Needs at least three pairs whose source
/// points span a plane; a collinear configuration leaves the rotation
/// under-determined and is rejected.
inline RigidFit estimate_rigid_transform(const std::vector<CorrespondencePair>& pairs) {
    if (pairs.size() < 3) {
        throw ContractError("estimate_rigid_transform: need >= 3 pairs, got " +
                            std::to_string(pairs.size()));
    }
    Eigen::Vector3d centroid_radar = Eigen::Vector3d::Zero();
    Eigen::Vector3d centroid_ir = Eigen::Vector3d::Zero();
    for (const auto& pair : pairs) {
        if (!pair.radar_point.allFinite() || !pair.ir_point.allFinite()) {
            throw ContractError("estimate_rigid_transform: non-finite correspondence");
        }
        centroid_radar += pair.radar_point;
        centroid_ir += pair.ir_point;
    }
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    centroid_radar *= inv_n;
    centroid_ir *= inv_n;

    Eigen::Matrix3Xd centered(3, static_cast<Eigen::Index>(pairs.size()));
    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Eigen::Vector3d a = pairs[i].radar_point - centroid_radar;
        const Eigen::Vector3d b = pairs[i].ir_point - centroid_ir;
        centered.col(static_cast<Eigen::Index>(i)) = a;
        cross += b * a.transpose();
    }
    {
        Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
        const auto& sv = svd.singularValues();
        if (sv(0) <= 0.0 || sv(1) < 1e-9 * sv(0)) {
            throw NumericError(
                "estimate_rigid_transform: source points are collinear or coincident, pose is "
                "under-determined");
        }
    }
    RigidFit fit;
    fit.transform.rotation = detail::project_to_rotation(cross);
    fit.transform.translation = centroid_ir - fit.transform.rotation * centroid_radar;

    double sum_sq = 0.0;
    for (const auto& pair : pairs) {
        sum_sq += (transform_point(fit.transform, pair.radar_point) - pair.ir_point).squaredNorm();
    }
    fit.rms_residual_m = std::sqrt(sum_sq * inv_n);
    return fit;
}

/// Rotation taking radar coordinates (x right, y forward along boresight,
/// z up) into camera coordinates (x right, y down, z forward). The usual
/// starting point when composing a radar-to-camera extrinsic.
inline RigidTransform radar_to_camera_axes() {
    RigidTransform t;
    t.rotation << 1.0, 0.0, 0.0,
                  0.0, 0.0, -1.0,
                  0.0, 1.0, 0.0;
    return t;
}

struct SparseDepthResult {
    DepthImage depth;
    std::size_t dropped = 0;  // detections behind the camera or off the image
};

/// Renders radar detections into a sparse depth raster: each point is
/// transformed into the camera frame, projected, and written to its nearest
/// pixel. Out-of-bounds and behind-camera points are dropped silently but
/// counted; when two detections land on the same pixel the nearer depth
/// wins. Untouched pixels stay invalid.
inline SparseDepthResult radar_to_sparse_depth(const PointCloud& cloud,
                                               const RigidTransform& radar_to_ir,
                                               const CameraIntrinsics& intrinsics) {
    radar_to_ir.validate();
    intrinsics.validate();
    SparseDepthResult result{DepthImage(intrinsics.width, intrinsics.height), 0};
    for (const RadarDetection& det : cloud) {
        const Eigen::Vector3d radar_point(det.point_m[0], det.point_m[1], det.point_m[2]);
        const Eigen::Vector3d cam = transform_point(radar_to_ir, radar_point);
        if (!(cam.z() > 0.0)) {
            ++result.dropped;
            continue;
        }
        const double u = intrinsics.fx * cam.x() / cam.z() + intrinsics.cx;
        const double v = intrinsics.fy * cam.y() / cam.z() + intrinsics.cy;
        const auto px = static_cast<long>(std::lround(u));
        const auto py = static_cast<long>(std::lround(v));
        if (px < 0 || px >= intrinsics.width || py < 0 || py >= intrinsics.height) {
            ++result.dropped;
            continue;
        }
        const int x = static_cast<int>(px);
        const int y = static_cast<int>(py);
        const double depth = std::max(cam.z(), kMinValidDepth);
        if (!result.depth.valid_at(x, y) || depth < result.depth.at(x, y)) {
            result.depth.set(x, y, depth);
        }
    }
    return result;
}

inline constexpr const char* kPairsCsvHeader = "xr,yr,zr,xi,yi,zi";

/// Correspondences from comma-separated text with header `xr,yr,zr,xi,yi,zi`
/// (radar point, then infrared point, meters).
inline std::vector<CorrespondencePair> load_pairs_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_pairs_csv: cannot open " + path.string());
    std::vector<CorrespondencePair> pairs;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        if (!header_seen) {
            if (line != kPairsCsvHeader) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": expected header '" + kPairsCsvHeader + "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 6) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected 6 fields, got " + std::to_string(fields.size()));
        }
        CorrespondencePair pair;
        for (int c = 0; c < 3; ++c) {
            pair.radar_point(c) =
                detail::parse_double_field(fields[static_cast<std::size_t>(c)], path.string(), line_no);
            pair.ir_point(c) = detail::parse_double_field(fields[static_cast<std::size_t>(c + 3)],
                                                          path.string(), line_no);
        }
        pairs.push_back(pair);
    }
    if (!header_seen) throw ParseError(path.string() + ": missing header line");
    return pairs;
}

inline void write_pairs_csv(const std::vector<CorrespondencePair>& pairs,
                            const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_pairs_csv: cannot open " + path.string());
    out << kPairsCsvHeader << "\n";
    out.precision(17);
    for (const auto& p : pairs) {
        out << p.radar_point.x() << "," << p.radar_point.y() << "," << p.radar_point.z() << ","
            << p.ir_point.x() << "," << p.ir_point.y() << "," << p.ir_point.z() << "\n";
    }
    if (!out) throw IoError("write_pairs_csv: write failed for " + path.string());
}

inline void to_json(nlohmann::json& j, const RigidTransform& t) {
    nlohmann::json rotation = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) rotation.push_back(t.rotation(r, c));
    }
    j = nlohmann::json{{"rotation", rotation},
                       {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline void from_json(const nlohmann::json& j, RigidTransform& t) {
    const auto& rotation = j.at("rotation");
    const auto& translation = j.at("translation");
    if (!rotation.is_array() || rotation.size() != 9 || !translation.is_array() ||
        translation.size() != 3) {
        throw ParseError("RigidTransform: expected 9-element rotation and 3-element translation");
    }
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            t.rotation(r, c) = rotation[static_cast<std::size_t>(3 * r + c)].get<double>();
        }
    }
    for (int c = 0; c < 3; ++c) t.translation(c) = translation[static_cast<std::size_t>(c)].get<double>();
}

inline void to_json(nlohmann::json& j, const CameraIntrinsics& k) {
    j = nlohmann::json{{"fx", k.fx},       {"fy", k.fy},          {"cx", k.cx},
                       {"cy", k.cy},       {"width", k.width},    {"height", k.height}};
}

inline void from_json(const nlohmann::json& j, CameraIntrinsics& k) {
    j.at("fx").get_to(k.fx);
    j.at("fy").get_to(k.fy);
    j.at("cx").get_to(k.cx);
    j.at("cy").get_to(k.cy);
    j.at("width").get_to(k.width);
    j.at("height").get_to(k.height);
}

}  // namespace radarfuse
