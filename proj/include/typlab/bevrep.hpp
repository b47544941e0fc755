#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "typlab/common.hpp"
#include "typlab/geometry.hpp"
#include "typlab/io.hpp"
#include "typlab/pointcloud.hpp"
#include "typlab/tensor.hpp"

namespace typlab::bevrep {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Uniform voxel grid over a fixed spatial extent. H bins span x, W bins
/// span y, C bins span z; cell data is row-major in (x, y, z) order.
struct GridGeometry {
    double x_min = -12.8, x_max = 12.8;
    double y_min = -12.8, y_max = 12.8;
    double z_min = -2.0, z_max = 0.0;
    int H = 64, W = 64, C = 8;

    double step_x() const { return (x_max - x_min) / H; }
    double step_y() const { return (y_max - y_min) / W; }
    double step_z() const { return (z_max - z_min) / C; }

    double cell_x(int ix) const { return x_min + (ix + 0.5) * step_x(); }
    double cell_y(int iy) const { return y_min + (iy + 0.5) * step_y(); }
    double cell_z(int iz) const { return z_min + (iz + 0.5) * step_z(); }

    std::size_t cells() const {
        return static_cast<std::size_t>(H) * static_cast<std::size_t>(W) *
               static_cast<std::size_t>(C);
    }
    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * W + iy) * C + iz;
    }

    bool operator==(const GridGeometry& o) const {
        return x_min == o.x_min && x_max == o.x_max && y_min == o.y_min && y_max == o.y_max &&
               z_min == o.z_min && z_max == o.z_max && H == o.H && W == o.W && C == o.C;
    }
};

inline void validate(const GridGeometry& g) {
    if (g.H <= 0 || g.W <= 0 || g.C <= 0)
        throw ArgumentError("GridGeometry: cell counts must be positive");
    if (!(g.x_max > g.x_min && g.y_max > g.y_min && g.z_max > g.z_min))
        throw ArgumentError("GridGeometry: each axis range must be nonempty");
}

/// Binary voxel occupancy x in {0,1}^(H*W*C).
struct OccupancyGrid {
    GridGeometry geometry;
    std::vector<std::uint8_t> data;

    OccupancyGrid() = default;
    explicit OccupancyGrid(const GridGeometry& g) : geometry(g), data(g.cells(), 0) {}

    std::uint8_t& at(int ix, int iy, int iz) { return data[geometry.index(ix, iy, iz)]; }
    std::uint8_t at(int ix, int iy, int iz) const { return data[geometry.index(ix, iy, iz)]; }

    std::size_t count_occupied() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

/// Binary BEV map (H*W), used for object maps and visibility masks.
struct BinaryMap {
    GridGeometry geometry;  // C is ignored
    std::vector<std::uint8_t> data;

    BinaryMap() = default;
    explicit BinaryMap(const GridGeometry& g)
        : geometry(g), data(static_cast<std::size_t>(g.H) * g.W, 0) {}

    std::uint8_t& at(int ix, int iy) { return data[static_cast<std::size_t>(ix) * geometry.W + iy]; }
    std::uint8_t at(int ix, int iy) const {
        return data[static_cast<std::size_t>(ix) * geometry.W + iy];
    }
};

using ObjectMap = BinaryMap;

/// Pre-sigmoid occupancy scores at full grid resolution.
struct LogitGrid {
    GridGeometry geometry;
    std::vector<float> data;

    LogitGrid() = default;
    explicit LogitGrid(const GridGeometry& g) : geometry(g), data(g.cells(), 0.f) {}
};

struct VoxelizeResult {
    OccupancyGrid grid;
    std::size_t ignored = 0;  // points outside the grid extent
};

/// Bins points into half-open cells [lo, hi) per axis; out-of-range points
/// (including points exactly at an axis maximum) are counted, not binned.
inline VoxelizeResult voxelize(const PointCloud& cloud, const GridGeometry& g) {
    validate(g);
    VoxelizeResult res{OccupancyGrid(g), 0};
    const double sx = g.step_x(), sy = g.step_y(), sz = g.step_z();
    for (const auto& p : cloud.points) {
        const double fx = (p[0] - g.x_min) / sx;
        const double fy = (p[1] - g.y_min) / sy;
        const double fz = (p[2] - g.z_min) / sz;
        const int ix = static_cast<int>(std::floor(fx));
        const int iy = static_cast<int>(std::floor(fy));
        const int iz = static_cast<int>(std::floor(fz));
        if (ix < 0 || ix >= g.H || iy < 0 || iy >= g.W || iz < 0 || iz >= g.C ||
            p[0] >= g.x_max || p[1] >= g.y_max || p[2] >= g.z_max) {
            ++res.ignored;
            continue;
        }
        res.grid.data[g.index(ix, iy, iz)] = 1;
    }
    return res;
}

/// One point per occupied cell, at the cell center.
inline PointCloud devoxelize(const OccupancyGrid& grid, const std::string& frame = "grid") {
    PointCloud out;
    out.frame = frame;
    const GridGeometry& g = grid.geometry;
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy)
            for (int iz = 0; iz < g.C; ++iz)
                if (grid.data[g.index(ix, iy, iz)])
                    out.points.push_back({static_cast<float>(g.cell_x(ix)),
                                          static_cast<float>(g.cell_y(iy)),
                                          static_cast<float>(g.cell_z(iz))});
    return out;
}

/// Marks cells whose BEV center lies inside any box footprint.
inline ObjectMap rasterize_boxes(const std::vector<geometry::ObjectBox>& boxes,
                                 const GridGeometry& g) {
    validate(g);
    ObjectMap map(g);
    for (const auto& b : boxes) {
        // Only sweep the cells the footprint can reach.
        const double reach = 0.5 * std::hypot(b.size[0], b.size[1]);
        const int ix0 = std::max(0, static_cast<int>((b.center[0] - reach - g.x_min) / g.step_x()));
        const int ix1 =
            std::min(g.H - 1, static_cast<int>((b.center[0] + reach - g.x_min) / g.step_x()));
        const int iy0 = std::max(0, static_cast<int>((b.center[1] - reach - g.y_min) / g.step_y()));
        const int iy1 =
            std::min(g.W - 1, static_cast<int>((b.center[1] + reach - g.y_min) / g.step_y()));
        for (int ix = ix0; ix <= ix1; ++ix)
            for (int iy = iy0; iy <= iy1; ++iy)
                if (geometry::footprint_contains(b, g.cell_x(ix), g.cell_y(iy))) map.at(ix, iy) = 1;
    }
    return map;
}

/// Three-band thresholding of generated logits: certain cells are kept or
/// dropped outright, uncertain ones are resolved by Gaussian perturbation of
/// the logit. Deterministic given the seed; the per-cell noise draw does not
/// depend on the thresholds.
inline PointCloud postprocess(const LogitGrid& logits, double low, double high, double noise_sigma,
                              std::uint64_t seed, const std::string& frame = "grid") {
    if (low > high) throw ArgumentError("postprocess: low threshold exceeds high");
    if (noise_sigma < 0) throw ArgumentError("postprocess: noise_sigma must be >= 0");
    const GridGeometry& g = logits.geometry;
    PointCloud out;
    out.frame = frame;
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy)
            for (int iz = 0; iz < g.C; ++iz) {
                const std::size_t i = g.index(ix, iy, iz);
                const double s = sigmoid(logits.data[i]);
                bool keep;
                if (s < low) {
                    keep = false;
                } else if (s > high) {
                    keep = true;
                } else {
                    const double eps = noise_sigma * hash_normal(seed, static_cast<std::uint64_t>(i));
                    keep = sigmoid(logits.data[i] + eps) > high;
                }
                if (keep)
                    out.points.push_back({static_cast<float>(g.cell_x(ix)),
                                          static_cast<float>(g.cell_y(iy)),
                                          static_cast<float>(g.cell_z(iz))});
            }
    return out;
}

/// Occupancy grid from thresholding logits at sigmoid 0.5 (logit 0).
inline OccupancyGrid threshold_logits(const LogitGrid& logits) {
    OccupancyGrid grid(logits.geometry);
    for (std::size_t i = 0; i < logits.data.size(); ++i) grid.data[i] = logits.data[i] > 0.f;
    return grid;
}

// ---------------------------------------------------------------------------
// Serialization: 32-byte header (magic TYPG, version, H, W, C, reserved),
// then the axis ranges as 6 little-endian 32-bit floats, then the cells
// bit-packed row-major, LSB first.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kGridVersion = 1;

inline std::string serialize_grid(const OccupancyGrid& grid) {
    std::string out;
    out += "TYPG";
    io::put_u32_le(out, kGridVersion);
    io::put_u32_le(out, static_cast<std::uint32_t>(grid.geometry.H));
    io::put_u32_le(out, static_cast<std::uint32_t>(grid.geometry.W));
    io::put_u32_le(out, static_cast<std::uint32_t>(grid.geometry.C));
    out.append(12, '\0');
    const GridGeometry& g = grid.geometry;
    for (double r : {g.x_min, g.x_max, g.y_min, g.y_max, g.z_min, g.z_max})
        io::put_f32_le(out, static_cast<float>(r));
    std::uint8_t acc = 0;
    int nbits = 0;
    for (std::size_t i = 0; i < grid.data.size(); ++i) {
        acc |= static_cast<std::uint8_t>((grid.data[i] & 1u) << nbits);
        if (++nbits == 8) {
            out.push_back(static_cast<char>(acc));
            acc = 0;
            nbits = 0;
        }
    }
    if (nbits) out.push_back(static_cast<char>(acc));
    return out;
}

inline OccupancyGrid deserialize_grid(const std::string& bytes) {
    io::Reader r(bytes);
    if (r.bytes(4) != "TYPG") throw PersistenceError("bad grid magic");
    if (r.u32() != kGridVersion) throw PersistenceError("unsupported grid version");
    GridGeometry g;
    g.H = static_cast<int>(r.u32());
    g.W = static_cast<int>(r.u32());
    g.C = static_cast<int>(r.u32());
    r.bytes(12);
    g.x_min = r.f32();
    g.x_max = r.f32();
    g.y_min = r.f32();
    g.y_max = r.f32();
    g.z_min = r.f32();
    g.z_max = r.f32();
    validate(g);
    OccupancyGrid grid(g);
    const std::string packed = r.bytes((grid.data.size() + 7) / 8);
    for (std::size_t i = 0; i < grid.data.size(); ++i)
        grid.data[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1u;
    return grid;
}

inline void write_grid(const io::fs::path& path, const OccupancyGrid& grid) {
    io::atomic_write_file(path, serialize_grid(grid));
}

inline OccupancyGrid read_grid(const io::fs::path& path) {
    return deserialize_grid(io::read_file(path));
}

// Grid <-> channel-major tensor conversion for the networks (z becomes the
// channel axis, per-sample layout [C][H][W]).

template <typename T>
Tensor<T> grid_to_tensor(const OccupancyGrid& grid) {
    const GridGeometry& g = grid.geometry;
    Tensor<T> t({g.C, g.H, g.W});
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy)
            for (int iz = 0; iz < g.C; ++iz)
                t.at(iz, ix, iy) = static_cast<T>(grid.data[g.index(ix, iy, iz)]);
    return t;
}

template <typename T>
Tensor<T> map_to_tensor(const BinaryMap& map) {
    const GridGeometry& g = map.geometry;
    Tensor<T> t({1, g.H, g.W});
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy) t.at(0, ix, iy) = static_cast<T>(map.at(ix, iy));
    return t;
}

template <typename T>
LogitGrid tensor_to_logits(const Tensor<T>& t, const GridGeometry& g) {
    if (t.shape.size() != 3 || t.dim(0) != g.C || t.dim(1) != g.H || t.dim(2) != g.W)
        throw ShapeError("tensor_to_logits: tensor does not match grid geometry");
    LogitGrid logits(g);
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy)
            for (int iz = 0; iz < g.C; ++iz)
                logits.data[g.index(ix, iy, iz)] = static_cast<float>(t.at(iz, ix, iy));
    return logits;
}

}  // namespace typlab::bevrep
