#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "typlab/common.hpp"
#include "typlab/pointcloud.hpp"

namespace typlab::geometry {

/// Upright oriented box: center (meters, world or frame-local), full extents
/// (length along local x, width along local y, height along z), yaw in
/// [-pi, pi).
struct ObjectBox {
    std::array<double, 3> center{0, 0, 0};
    std::array<double, 3> size{1, 1, 1};  // (l, w, h), all > 0
    double yaw = 0.0;

    double z_min() const { return center[2] - size[2] * 0.5; }
    double z_max() const { return center[2] + size[2] * 0.5; }
};

inline void validate(const ObjectBox& b) {
    if (!(b.size[0] > 0 && b.size[1] > 0 && b.size[2] > 0))
        throw ArgumentError("ObjectBox: all size components must be > 0");
    if (!(b.yaw >= -kPi && b.yaw < kPi))
        throw ArgumentError("ObjectBox: yaw must lie in [-pi, pi)");
}

/// Sensor pose: position in meters (z is the sensor height above ground) and
/// planar yaw.
struct AgentPose {
    std::array<double, 3> position{0, 0, 0};
    double yaw = 0.0;
};

inline void validate(const AgentPose& p) {
    if (!(std::isfinite(p.position[0]) && std::isfinite(p.position[1]) &&
          std::isfinite(p.position[2])))
        throw ArgumentError("AgentPose: position must be finite");
    if (!(p.yaw >= -kPi && p.yaw < kPi)) throw ArgumentError("AgentPose: yaw must lie in [-pi, pi)");
}

/// Planar rigid transform (yaw-only rotation plus 3D translation) between two
/// named frames: p_target = R(yaw) * p_source + translation.
struct FrameTransform {
    std::string source_frame;
    std::string target_frame;
    std::array<double, 3> translation{0, 0, 0};
    double yaw = 0.0;

    std::array<double, 3> apply(const std::array<double, 3>& p) const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        return {c * p[0] - s * p[1] + translation[0], s * p[0] + c * p[1] + translation[1],
                p[2] + translation[2]};
    }

    FrameTransform inverse() const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        FrameTransform inv;
        inv.source_frame = target_frame;
        inv.target_frame = source_frame;
        inv.yaw = -yaw;
        inv.translation = {-(c * translation[0] + s * translation[1]),
                           -(-s * translation[0] + c * translation[1]), -translation[2]};
        return inv;
    }
};

/// first ∘ second: applies `second`, then `first`.
inline FrameTransform compose(const FrameTransform& first, const FrameTransform& second) {
    if (second.target_frame != first.source_frame)
        throw FrameError("compose: cannot chain " + second.target_frame + " -> " +
                         first.source_frame);
    FrameTransform out;
    out.source_frame = second.source_frame;
    out.target_frame = first.target_frame;
    out.yaw = first.yaw + second.yaw;
    out.translation = first.apply(second.translation);
    return out;
}

/// Transform mapping points in the pose's local sensor frame to the frame the
/// pose itself is expressed in (x-axis along yaw, origin at the sensor).
inline FrameTransform pose_to_parent(const AgentPose& pose, const std::string& local,
                                     const std::string& parent) {
    FrameTransform t;
    t.source_frame = local;
    t.target_frame = parent;
    t.translation = pose.position;
    t.yaw = pose.yaw;
    return t;
}

inline PointCloud transform_cloud(const PointCloud& cloud, const FrameTransform& t) {
    if (cloud.frame != t.source_frame)
        throw FrameError("transform_cloud: cloud is in frame '" + cloud.frame +
                         "' but transform expects '" + t.source_frame + "'");
    PointCloud out;
    out.frame = t.target_frame;
    out.points.reserve(cloud.points.size());
    const double c = std::cos(t.yaw), s = std::sin(t.yaw);
    for (const auto& p : cloud.points) {
        const double x = c * p[0] - s * p[1] + t.translation[0];
        const double y = s * p[0] + c * p[1] + t.translation[1];
        const double z = p[2] + t.translation[2];
        out.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    }
    return out;
}

/// Re-expresses a cloud captured in the ego sensor frame in the reference
/// sensor frame. Both poses must be given in the world frame.
inline PointCloud ego_to_reference(const PointCloud& cloud_ego, const AgentPose& ego,
                                   const AgentPose& ref) {
    const FrameTransform ego_to_world = pose_to_parent(ego, cloud_ego.frame, "world");
    const FrameTransform world_to_ref = pose_to_parent(ref, "reference", "world").inverse();
    return transform_cloud(transform_cloud(cloud_ego, ego_to_world), world_to_ref);
}

inline std::vector<ObjectBox> transform_boxes(const std::vector<ObjectBox>& boxes,
                                              const FrameTransform& t) {
    std::vector<ObjectBox> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        ObjectBox nb = b;
        nb.center = t.apply(b.center);
        nb.yaw = wrap_angle(b.yaw + t.yaw);
        out.push_back(nb);
    }
    return out;
}

/// Removes `remove_indices` (validated, distinct), keeping survivor order,
/// then appends `add`.
inline std::vector<ObjectBox> edit_boxes(const std::vector<ObjectBox>& boxes,
                                         const std::vector<ObjectBox>& add,
                                         const std::vector<int>& remove_indices) {
    std::set<int> removed;
    for (int idx : remove_indices) {
        if (idx < 0 || idx >= static_cast<int>(boxes.size()))
            throw ArgumentError("edit_boxes: remove index " + std::to_string(idx) +
                                " out of range");
        if (!removed.insert(idx).second)
            throw ArgumentError("edit_boxes: duplicate remove index " + std::to_string(idx));
    }
    std::vector<ObjectBox> out;
    out.reserve(boxes.size() - removed.size() + add.size());
    for (int i = 0; i < static_cast<int>(boxes.size()); ++i)
        if (!removed.count(i)) out.push_back(boxes[static_cast<std::size_t>(i)]);
    out.insert(out.end(), add.begin(), add.end());
    return out;
}

/// BEV footprint corners in counterclockwise order.
inline std::array<std::array<double, 2>, 4> footprint_corners(const ObjectBox& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.size[0] * 0.5, hw = b.size[1] * 0.5;
    std::array<std::array<double, 2>, 4> out;
    const double dx[4] = {hl, -hl, -hl, hl};
    const double dy[4] = {hw, hw, -hw, -hw};
    for (int i = 0; i < 4; ++i)
        out[static_cast<std::size_t>(i)] = {b.center[0] + c * dx[i] - s * dy[i],
                                            b.center[1] + s * dx[i] + c * dy[i]};
    return out;
}

/// True iff the BEV point (x, y) lies inside (or on the boundary of) the
/// box's rotated footprint.
inline bool footprint_contains(const ObjectBox& b, double x, double y) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double dx = x - b.center[0], dy = y - b.center[1];
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return std::abs(u) <= b.size[0] * 0.5 && std::abs(v) <= b.size[1] * 0.5;
}

}  // namespace typlab::geometry
