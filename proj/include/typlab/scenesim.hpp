#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "typlab/bevrep.hpp"
#include "typlab/common.hpp"
#include "typlab/geometry.hpp"
#include "typlab/pointcloud.hpp"

namespace typlab::scenesim {

using geometry::AgentPose;
using geometry::ObjectBox;

/// Procedurally generated 2.5D scene: flat ground plane at z = 0, upright
/// boxes (vehicles), upright thin boxes (occluder walls), and sensor poses.
struct SceneSpec {
    std::uint64_t seed = 0;
    double extent = 12.8;  // square half-width, meters
    std::vector<ObjectBox> boxes;
    std::vector<ObjectBox> occluder_walls;
    std::vector<AgentPose> agent_poses;
};

struct SceneSample {
    SceneSpec spec;
    std::vector<PointCloud> clouds;  // one per agent, in that agent's sensor frame
    std::vector<ObjectBox> boxes_world;
};

/// Beam model: `azimuth_count` rays per elevation, sensor-frame azimuths at
/// 2*pi*a/A. Candidate returns are dropped with probability
/// p(r) = drop_scale * min(1, r/max_range)^drop_power, nondecreasing in r.
struct LidarModel {
    int azimuth_count = 180;
    std::vector<double> elevations_rad = {deg2rad(-26), deg2rad(-16), deg2rad(-10),
                                          deg2rad(-6),  deg2rad(-3.5), deg2rad(-2)};
    double max_range = 30.0;
    double drop_scale = 0.5;
    double drop_power = 1.0;
    std::uint64_t seed = 0;

    double drop_probability(double r) const {
        const double f = std::min(1.0, r / max_range);
        return drop_scale * std::pow(f, drop_power);
    }
};

// ---------------------------------------------------------------------------
// Ray / segment intersection against the 2.5D world
// ---------------------------------------------------------------------------

enum class HitKind { ground, box, wall };

struct Hit {
    double t = 0.0;  // distance along the unit-direction ray
    HitKind kind = HitKind::ground;
    int index = -1;  // box or wall index, -1 for ground
};

/// Slab test of a ray against an upright yawed box; returns the entry
/// distance if the ray passes through the box volume ahead of the origin.
inline std::optional<double> ray_box_entry(const std::array<double, 3>& origin,
                                           const std::array<double, 3>& dir, const ObjectBox& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    // into box-local axes (rotation only affects x/y)
    const double ox = c * (origin[0] - b.center[0]) + s * (origin[1] - b.center[1]);
    const double oy = -s * (origin[0] - b.center[0]) + c * (origin[1] - b.center[1]);
    const double oz = origin[2] - b.center[2];
    const double dx = c * dir[0] + s * dir[1];
    const double dy = -s * dir[0] + c * dir[1];
    const double dz = dir[2];

    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    const double half[3] = {b.size[0] * 0.5, b.size[1] * 0.5, b.size[2] * 0.5};
    const double o[3] = {ox, oy, oz};
    const double d[3] = {dx, dy, dz};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(d[axis]) < 1e-12) {
            if (std::abs(o[axis]) > half[axis]) return std::nullopt;
            continue;
        }
        double ta = (-half[axis] - o[axis]) / d[axis];
        double tb = (half[axis] - o[axis]) / d[axis];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    if (t1 <= 1e-9) return std::nullopt;  // box entirely behind the origin
    return t0;
}

/// First intersection of a ray with ground plane, boxes, or walls, within
/// max_range. Returns nullopt when the ray escapes.
inline std::optional<Hit> first_hit(const SceneSpec& spec, const std::array<double, 3>& origin,
                                    const std::array<double, 3>& dir, double max_range) {
    std::optional<Hit> best;
    auto consider = [&](double t, HitKind kind, int index) {
        if (t < 1e-9 || t > max_range) return;
        if (!best || t < best->t) best = Hit{t, kind, index};
    };
    if (dir[2] < -1e-12) consider(-origin[2] / dir[2], HitKind::ground, -1);
    for (int i = 0; i < static_cast<int>(spec.boxes.size()); ++i)
        if (auto t = ray_box_entry(origin, dir, spec.boxes[static_cast<std::size_t>(i)]))
            consider(*t, HitKind::box, i);
    for (int i = 0; i < static_cast<int>(spec.occluder_walls.size()); ++i)
        if (auto t = ray_box_entry(origin, dir, spec.occluder_walls[static_cast<std::size_t>(i)]))
            consider(*t, HitKind::wall, i);
    return best;
}

/// True iff the open segment from a to b crosses any box or wall interior
/// (an endpoint lying exactly on a surface does not count). `skip_box`
/// excludes one box (used when testing visibility of that box itself).
inline bool segment_blocked(const SceneSpec& spec, const std::array<double, 3>& a,
                            const std::array<double, 3>& b, int skip_box = -1) {
    const double len = std::hypot(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    if (len < 1e-12) return false;
    const std::array<double, 3> dir = {(b[0] - a[0]) / len, (b[1] - a[1]) / len,
                                       (b[2] - a[2]) / len};
    const double t_end = len * (1.0 - 1e-9) - 1e-9;
    for (int i = 0; i < static_cast<int>(spec.boxes.size()); ++i) {
        if (i == skip_box) continue;
        if (auto t = ray_box_entry(a, dir, spec.boxes[static_cast<std::size_t>(i)]))
            if (*t > 1e-9 && *t < t_end) return true;
    }
    for (const auto& w : spec.occluder_walls)
        if (auto t = ray_box_entry(a, dir, w))
            if (*t > 1e-9 && *t < t_end) return true;
    return false;
}

/// A box is occluded from an agent when the sight line to its center is
/// blocked by some other object.
inline bool box_occluded_from(const SceneSpec& spec, int agent_index, int box_index) {
    const AgentPose& pose = spec.agent_poses[static_cast<std::size_t>(agent_index)];
    const ObjectBox& box = spec.boxes[static_cast<std::size_t>(box_index)];
    return segment_blocked(spec, pose.position, box.center, box_index);
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    double extent = 12.8;
    int box_count_min = 3, box_count_max = 7;
    int wall_count_min = 1, wall_count_max = 3;
    int agent_count_min = 2, agent_count_max = 2;
    double sensor_height = 1.8;
    double box_length_min = 3.8, box_length_max = 4.8;
    double box_width_min = 1.8, box_width_max = 2.1;
    double box_height_min = 1.4, box_height_max = 1.8;
    double wall_length_min = 4.0, wall_length_max = 8.0;
    double wall_height_min = 2.2, wall_height_max = 3.0;
    double wall_thickness = 0.3;
    double min_agent_separation = 3.0;
    /// Fraction of scenes required to contain at least one box occluded from
    /// agent 0 yet visible from agent 1 (satisfied by rejection sampling
    /// over layouts).
    double must_occlude_fraction = 0.5;
    int max_attempts = 64;
};

namespace detail {

inline bool place_agents(Rng& rng, const GeneratorConfig& cfg, std::vector<AgentPose>& agents,
                         int n_agents) {
    agents.clear();
    for (int k = 0; k < n_agents; ++k) {
        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
            AgentPose pose;
            pose.position = {rng.uniform(-0.55, 0.55) * cfg.extent,
                             rng.uniform(-0.55, 0.55) * cfg.extent, cfg.sensor_height};
            pose.yaw = wrap_angle(rng.uniform(-kPi, kPi));
            bool ok = true;
            for (const auto& other : agents) {
                const double d = std::hypot(pose.position[0] - other.position[0],
                                            pose.position[1] - other.position[1]);
                if (d < cfg.min_agent_separation) ok = false;
            }
            if (ok) {
                agents.push_back(pose);
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return true;
}

inline bool overlaps_agent(const ObjectBox& box, const std::vector<AgentPose>& agents,
                           double margin) {
    ObjectBox grown = box;
    grown.size[0] += 2 * margin;
    grown.size[1] += 2 * margin;
    for (const auto& a : agents)
        if (geometry::footprint_contains(grown, a.position[0], a.position[1])) return true;
    return false;
}

inline bool place_boxes(Rng& rng, const GeneratorConfig& cfg,
                        const std::vector<AgentPose>& agents, std::vector<ObjectBox>& boxes,
                        int n_boxes) {
    boxes.clear();
    for (int k = 0; k < n_boxes; ++k) {
        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
            ObjectBox box;
            box.size = {rng.uniform(cfg.box_length_min, cfg.box_length_max),
                        rng.uniform(cfg.box_width_min, cfg.box_width_max),
                        rng.uniform(cfg.box_height_min, cfg.box_height_max)};
            box.center = {rng.uniform(-0.85, 0.85) * cfg.extent,
                          rng.uniform(-0.85, 0.85) * cfg.extent, box.size[2] * 0.5};
            box.yaw = wrap_angle(rng.uniform(-kPi, kPi));
            bool ok = !overlaps_agent(box, agents, 0.5);
            for (const auto& other : boxes) {
                const double sep = std::hypot(box.center[0] - other.center[0],
                                              box.center[1] - other.center[1]);
                const double need = 0.6 * (std::hypot(box.size[0], box.size[1]) +
                                           std::hypot(other.size[0], other.size[1])) *
                                    0.5;
                if (sep < need + 0.8) ok = false;
            }
            if (ok) {
                boxes.push_back(box);
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return true;
}

inline bool place_walls(Rng& rng, const GeneratorConfig& cfg,
                        const std::vector<AgentPose>& agents, const std::vector<ObjectBox>& boxes,
                        std::vector<ObjectBox>& walls, int n_walls) {
    walls.clear();
    for (int k = 0; k < n_walls; ++k) {
        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
            ObjectBox wall;
            wall.size = {rng.uniform(cfg.wall_length_min, cfg.wall_length_max), cfg.wall_thickness,
                         rng.uniform(cfg.wall_height_min, cfg.wall_height_max)};
            wall.center = {rng.uniform(-0.8, 0.8) * cfg.extent, rng.uniform(-0.8, 0.8) * cfg.extent,
                           wall.size[2] * 0.5};
            wall.yaw = wrap_angle(rng.uniform(-kPi, kPi));
            bool ok = !overlaps_agent(wall, agents, 0.5);
            for (const auto& b : boxes)
                if (geometry::footprint_contains(wall, b.center[0], b.center[1])) ok = false;
            if (ok) {
                walls.push_back(wall);
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return true;
}

}  // namespace detail

/// Deterministic scene generation: the same (seed, config) always yields the
/// same SceneSpec. Scenes flagged by `must_occlude_fraction` are re-laid-out
/// until some box is hidden from agent 0.
inline SceneSpec generate_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
    if (cfg.box_count_min < 1 || cfg.box_count_max < cfg.box_count_min)
        throw ArgumentError("generate_scene: box count range must satisfy 1 <= min <= max");
    if (cfg.agent_count_min < 2 || cfg.agent_count_max < cfg.agent_count_min)
        throw ArgumentError("generate_scene: agent count range must satisfy 2 <= min <= max");
    if (cfg.wall_count_min < 0 || cfg.wall_count_max < cfg.wall_count_min)
        throw ArgumentError("generate_scene: wall count range invalid");

    const bool must_occlude = hash_uniform(seed, std::uint64_t{0xA11}) < cfg.must_occlude_fraction;

    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        Rng rng(hash64(seed, static_cast<std::uint64_t>(attempt), std::uint64_t{0x5ce17e}));
        SceneSpec spec;
        spec.seed = seed;
        spec.extent = cfg.extent;

        const int n_agents =
            static_cast<int>(rng.uniform_int(cfg.agent_count_min, cfg.agent_count_max));
        const int n_boxes = static_cast<int>(rng.uniform_int(cfg.box_count_min, cfg.box_count_max));
        const int n_walls = static_cast<int>(rng.uniform_int(cfg.wall_count_min, cfg.wall_count_max));

        if (!detail::place_agents(rng, cfg, spec.agent_poses, n_agents)) continue;
        if (!detail::place_boxes(rng, cfg, spec.agent_poses, spec.boxes, n_boxes)) continue;
        if (!detail::place_walls(rng, cfg, spec.agent_poses, spec.boxes, spec.occluder_walls,
                                 n_walls))
            continue;

        if (must_occlude) {
            bool found = false;
            for (int b = 0; b < static_cast<int>(spec.boxes.size()) && !found; ++b)
                found = box_occluded_from(spec, 0, b) && !box_occluded_from(spec, 1, b);
            if (!found) continue;
        }
        return spec;
    }
    throw GenerationError(
        "generate_scene: could not satisfy the occlusion constraint within " +
        std::to_string(cfg.max_attempts) + " layout attempts (seed " + std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Ray-cast LiDAR
// ---------------------------------------------------------------------------

struct RayReturn {
    Vec3f point_sensor;
    std::array<double, 3> point_world;
    double range = 0.0;
    HitKind kind = HitKind::ground;
    int index = -1;
    int elevation = 0;
    int azimuth = 0;
};

/// Full per-ray returns (used by oracles and metrics); `raycast_lidar` wraps
/// this into the plain point cloud contract.
inline std::vector<RayReturn> raycast_lidar_returns(const SceneSpec& spec, int agent_index,
                                                    const LidarModel& lidar) {
    if (agent_index < 0 || agent_index >= static_cast<int>(spec.agent_poses.size()))
        throw ArgumentError("raycast_lidar: agent index " + std::to_string(agent_index) +
                            " out of range");
    const AgentPose& pose = spec.agent_poses[static_cast<std::size_t>(agent_index)];
    const double cy = std::cos(pose.yaw), sy = std::sin(pose.yaw);
    std::vector<RayReturn> out;
    const std::uint64_t drop_seed = hash64(lidar.seed, spec.seed,
                                           static_cast<std::uint64_t>(agent_index));
    for (int ei = 0; ei < static_cast<int>(lidar.elevations_rad.size()); ++ei) {
        const double el = lidar.elevations_rad[static_cast<std::size_t>(ei)];
        const double ce = std::cos(el), se = std::sin(el);
        for (int ai = 0; ai < lidar.azimuth_count; ++ai) {
            const double az = pose.yaw + 2.0 * kPi * ai / lidar.azimuth_count;
            const std::array<double, 3> dir = {ce * std::cos(az), ce * std::sin(az), se};
            const auto hit = first_hit(spec, pose.position, dir, lidar.max_range);
            if (!hit) continue;
            const double u = hash_uniform(drop_seed, static_cast<std::uint64_t>(ei),
                                          static_cast<std::uint64_t>(ai));
            if (u < lidar.drop_probability(hit->t)) continue;
            const std::array<double, 3> pw = {pose.position[0] + hit->t * dir[0],
                                              pose.position[1] + hit->t * dir[1],
                                              pose.position[2] + hit->t * dir[2]};
            // world -> sensor frame
            const double rx = pw[0] - pose.position[0], ry = pw[1] - pose.position[1];
            RayReturn ret;
            ret.point_sensor = {static_cast<float>(cy * rx + sy * ry),
                                static_cast<float>(-sy * rx + cy * ry),
                                static_cast<float>(pw[2] - pose.position[2])};
            ret.point_world = pw;
            ret.range = hit->t;
            ret.kind = hit->kind;
            ret.index = hit->index;
            ret.elevation = ei;
            ret.azimuth = ai;
            out.push_back(ret);
        }
    }
    return out;
}

inline PointCloud raycast_lidar(const SceneSpec& spec, int agent_index, const LidarModel& lidar) {
    PointCloud cloud;
    cloud.frame = "agent" + std::to_string(agent_index);
    for (const auto& ret : raycast_lidar_returns(spec, agent_index, lidar))
        cloud.points.push_back(ret.point_sensor);
    return cloud;
}

/// Visibility of the cells of a grid anchored at `anchor`'s sensor frame,
/// as seen by `observer`: a cell is visible when the open segment from the
/// observer's sensor to the cell center at ground level is unobstructed and
/// no longer than max_range.
inline bevrep::BinaryMap visibility_mask_from(const SceneSpec& spec, int observer_index,
                                              const AgentPose& anchor,
                                              const bevrep::GridGeometry& grid, double max_range) {
    if (observer_index < 0 || observer_index >= static_cast<int>(spec.agent_poses.size()))
        throw ArgumentError("visibility_mask: agent index out of range");
    bevrep::validate(grid);
    const AgentPose& obs = spec.agent_poses[static_cast<std::size_t>(observer_index)];
    const double cy = std::cos(anchor.yaw), sy = std::sin(anchor.yaw);
    bevrep::BinaryMap mask(grid);
    for (int ix = 0; ix < grid.H; ++ix)
        for (int iy = 0; iy < grid.W; ++iy) {
            const double lx = grid.cell_x(ix), ly = grid.cell_y(iy);
            const std::array<double, 3> probe = {anchor.position[0] + cy * lx - sy * ly,
                                                 anchor.position[1] + sy * lx + cy * ly, 0.0};
            const double dist = std::hypot(probe[0] - obs.position[0],
                                           probe[1] - obs.position[1], obs.position[2]);
            if (dist > max_range) continue;
            if (!segment_blocked(spec, obs.position, probe)) mask.at(ix, iy) = 1;
        }
    return mask;
}

/// BEV visibility in the agent's own sensor frame.
inline bevrep::BinaryMap visibility_mask(const SceneSpec& spec, int agent_index,
                                         const bevrep::GridGeometry& grid, double max_range) {
    if (agent_index < 0 || agent_index >= static_cast<int>(spec.agent_poses.size()))
        throw ArgumentError("visibility_mask: agent index out of range");
    return visibility_mask_from(spec, agent_index,
                                spec.agent_poses[static_cast<std::size_t>(agent_index)], grid,
                                max_range);
}

/// Ray-casts every agent of a scene.
inline SceneSample sample_scene(const SceneSpec& spec, const LidarModel& lidar) {
    SceneSample sample;
    sample.spec = spec;
    sample.boxes_world = spec.boxes;
    for (int k = 0; k < static_cast<int>(spec.agent_poses.size()); ++k) {
        LidarModel agent_lidar = lidar;
        agent_lidar.seed = hash64(lidar.seed, spec.seed, static_cast<std::uint64_t>(k));
        sample.clouds.push_back(raycast_lidar(spec, k, agent_lidar));
    }
    return sample;
}

}  // namespace typlab::scenesim
