#include <gtest/gtest.h>

#include <cmath>

#include "typlab/bevrep.hpp"

using namespace typlab;
using namespace typlab::bevrep;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, const GridGeometry& g, double overshoot = 1.2) {
    PointCloud c;
    c.frame = "grid";
    for (std::size_t i = 0; i < n; ++i)
        c.points.push_back(
            {static_cast<float>(rng.uniform(g.x_min * overshoot, g.x_max * overshoot)),
             static_cast<float>(rng.uniform(g.y_min * overshoot, g.y_max * overshoot)),
             static_cast<float>(rng.uniform(g.z_min - 0.5, g.z_max + 0.5))});
    return c;
}

// Brute-force binning oracle, kept independent of voxelize(): per point,
// scan all cells and test the half-open interval membership directly.
OccupancyGrid bruteforce_voxelize(const PointCloud& cloud, const GridGeometry& g) {
    OccupancyGrid grid(g);
    for (const auto& p : cloud.points)
        for (int ix = 0; ix < g.H; ++ix)
            for (int iy = 0; iy < g.W; ++iy)
                for (int iz = 0; iz < g.C; ++iz) {
                    const double x0 = g.x_min + ix * g.step_x(), x1 = x0 + g.step_x();
                    const double y0 = g.y_min + iy * g.step_y(), y1 = y0 + g.step_y();
                    const double z0 = g.z_min + iz * g.step_z(), z1 = z0 + g.step_z();
                    if (p[0] >= x0 && p[0] < x1 && p[1] >= y0 && p[1] < y1 && p[2] >= z0 &&
                        p[2] < z1)
                        grid.data[g.index(ix, iy, iz)] = 1;
                }
    return grid;
}

}  // namespace

TEST(Voxelize, EmptyCloudAllZero) {
    GridGeometry g;
    PointCloud empty;
    empty.frame = "grid";
    const auto res = voxelize(empty, g);
    EXPECT_EQ(res.grid.count_occupied(), 0u);
    EXPECT_EQ(res.ignored, 0u);
}

TEST(Voxelize, PaperScaleCellSize) {
    GridGeometry g;
    g.x_min = -51.2;
    g.x_max = 51.2;
    g.y_min = -51.2;
    g.y_max = 51.2;
    g.z_min = -3.0;
    g.z_max = 1.0;
    g.H = 512;
    g.W = 512;
    g.C = 20;
    EXPECT_NEAR(g.step_x(), 0.2, 1e-12);
    EXPECT_NEAR(g.step_y(), 0.2, 1e-12);
    EXPECT_NEAR(g.step_z(), 0.2, 1e-12);
    EXPECT_EQ(g.cells(), 512u * 512u * 20u);
}

TEST(Voxelize, MatchesBruteForceBinning) {
    GridGeometry g;
    g.H = 12;
    g.W = 10;
    g.C = 4;
    g.x_min = -3;
    g.x_max = 3;
    g.y_min = -2.5;
    g.y_max = 2.5;
    g.z_min = -1;
    g.z_max = 1;
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const PointCloud cloud = random_cloud(500, rng, g);
        const auto fast = voxelize(cloud, g);
        const auto slow = bruteforce_voxelize(cloud, g);
        EXPECT_EQ(fast.grid.data, slow.data);
    }
}

TEST(Voxelize, PointAtGlobalMaxIgnored) {
    GridGeometry g;
    PointCloud c;
    c.frame = "grid";
    c.points.push_back({static_cast<float>(g.x_max), 0.f, -1.f});
    const auto res = voxelize(c, g);
    EXPECT_EQ(res.grid.count_occupied(), 0u);
    EXPECT_EQ(res.ignored, 1u);
}

TEST(Voxelize, DegenerateGeometryRejected) {
    GridGeometry g;
    g.H = 0;
    PointCloud c;
    EXPECT_THROW(voxelize(c, g), ArgumentError);
}

TEST(Devoxelize, AllZeroGivesEmptyCloud) {
    GridGeometry g;
    OccupancyGrid grid(g);
    EXPECT_TRUE(devoxelize(grid).empty());
}

TEST(Devoxelize, SingleCellLandsAtCenter) {
    GridGeometry g;
    OccupancyGrid grid(g);
    grid.at(3, 5, 2) = 1;
    const PointCloud c = devoxelize(grid);
    ASSERT_EQ(c.points.size(), 1u);
    EXPECT_NEAR(c.points[0][0], g.cell_x(3), 1e-5);
    EXPECT_NEAR(c.points[0][1], g.cell_y(5), 1e-5);
    EXPECT_NEAR(c.points[0][2], g.cell_z(2), 1e-5);
}

// Exhaustive round-trip on small grids: voxelize(devoxelize(g)) == g.
TEST(Devoxelize, RoundTripIdentityOnRandomGrids) {
    GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 4;
    g.x_min = -12.8;
    g.x_max = 12.8;
    g.y_min = -12.8;
    g.y_max = 12.8;
    g.z_min = -2;
    g.z_max = 0;
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        OccupancyGrid grid(g);
        for (auto& v : grid.data) v = rng.uniform() < 0.3;
        const auto round = voxelize(devoxelize(grid), g);
        EXPECT_EQ(round.grid.data, grid.data);
        EXPECT_EQ(round.ignored, 0u);
    }
}

TEST(RasterizeBoxes, NoBoxesAllZero) {
    GridGeometry g;
    const ObjectMap map = rasterize_boxes({}, g);
    for (auto v : map.data) EXPECT_EQ(v, 0);
}

// Point-in-rectangle oracle: an axis-aligned 2x2 box on the center of a
// 1 m grid marks exactly the 4 cells whose centers fall inside.
TEST(RasterizeBoxes, FourCellOracle) {
    GridGeometry g;
    g.x_min = -8;
    g.x_max = 8;
    g.y_min = -8;
    g.y_max = 8;
    g.H = 16;
    g.W = 16;
    geometry::ObjectBox box;
    box.center = {0, 0, 0.5};
    box.size = {2, 2, 1};
    const ObjectMap map = rasterize_boxes({box}, g);
    std::size_t marked = 0;
    for (auto v : map.data) marked += v;
    EXPECT_EQ(marked, 4u);
    EXPECT_EQ(map.at(7, 7), 1);
    EXPECT_EQ(map.at(7, 8), 1);
    EXPECT_EQ(map.at(8, 7), 1);
    EXPECT_EQ(map.at(8, 8), 1);
}

TEST(RasterizeBoxes, FullTurnLeavesMapUnchanged) {
    GridGeometry g;
    geometry::ObjectBox box;
    box.center = {2.3, -1.7, 0.75};
    box.size = {4.2, 1.9, 1.5};
    box.yaw = 0.4;
    const ObjectMap a = rasterize_boxes({box}, g);
    geometry::ObjectBox turned = box;
    turned.yaw = wrap_angle(box.yaw + 2 * kPi);
    const ObjectMap b = rasterize_boxes({turned}, g);
    EXPECT_EQ(a.data, b.data);
}

TEST(RasterizeBoxes, OrderInvariant) {
    GridGeometry g;
    Rng rng(5);
    std::vector<geometry::ObjectBox> boxes;
    for (int i = 0; i < 5; ++i) {
        geometry::ObjectBox b;
        b.center = {rng.uniform(-10, 10), rng.uniform(-10, 10), 0.75};
        b.size = {rng.uniform(2, 5), rng.uniform(1, 2.5), 1.5};
        b.yaw = rng.uniform(-kPi, kPi);
        boxes.push_back(b);
    }
    const ObjectMap a = rasterize_boxes(boxes, g);
    std::reverse(boxes.begin(), boxes.end());
    const ObjectMap b = rasterize_boxes(boxes, g);
    EXPECT_EQ(a.data, b.data);
}

TEST(Postprocess, AllBelowLowGivesEmpty) {
    GridGeometry g;
    g.H = 4;
    g.W = 4;
    g.C = 2;
    LogitGrid logits(g);
    for (auto& v : logits.data) v = -10.f;  // sigmoid ~ 0
    EXPECT_TRUE(postprocess(logits, 0.3, 0.7, 1.0, 1).empty());
}

TEST(Postprocess, ZeroSigmaEqualsHardThreshold) {
    GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 4;
    Rng rng(31);
    LogitGrid logits(g);
    for (auto& v : logits.data) v = static_cast<float>(rng.normal() * 3);
    const PointCloud soft = postprocess(logits, 0.3, 0.7, 0.0, 7);
    std::size_t expected = 0;
    for (auto v : logits.data) expected += sigmoid(v) > 0.7;
    EXPECT_EQ(soft.points.size(), expected);
}

TEST(Postprocess, DeterministicGivenSeed) {
    GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 4;
    Rng rng(32);
    LogitGrid logits(g);
    for (auto& v : logits.data) v = static_cast<float>(rng.normal());
    const PointCloud a = postprocess(logits, 0.3, 0.7, 1.0, 55);
    const PointCloud b = postprocess(logits, 0.3, 0.7, 1.0, 55);
    ASSERT_EQ(a.points.size(), b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
}

// Threshold sweep oracle: kept count is monotone nonincreasing in both
// thresholds (per-cell noise draws do not depend on the thresholds).
TEST(Postprocess, MonotoneInThresholds) {
    GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 4;
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        LogitGrid logits(g);
        for (auto& v : logits.data) v = static_cast<float>(rng.normal() * 2);
        std::size_t prev = SIZE_MAX;
        for (double low = 0.0; low <= 0.65; low += 0.05) {
            const std::size_t n = postprocess(logits, low, 0.7, 1.0, 5).points.size();
            EXPECT_LE(n, prev);
            prev = n;
        }
        prev = SIZE_MAX;
        for (double high = 0.3; high <= 0.95; high += 0.05) {
            const std::size_t n = postprocess(logits, 0.3, high, 1.0, 5).points.size();
            EXPECT_LE(n, prev);
            prev = n;
        }
    }
}

TEST(Postprocess, LowAboveHighRejected) {
    GridGeometry g;
    LogitGrid logits(g);
    EXPECT_THROW(postprocess(logits, 0.8, 0.2, 1.0, 1), ArgumentError);
    EXPECT_THROW(postprocess(logits, 0.3, 0.7, -1.0, 1), ArgumentError);
}

TEST(GridSerialization, HeaderIs32BytesAndRoundTrips) {
    GridGeometry g;
    Rng rng(8);
    OccupancyGrid grid(g);
    for (auto& v : grid.data) v = rng.uniform() < 0.2;
    const std::string bytes = serialize_grid(grid);
    EXPECT_EQ(bytes.substr(0, 4), "TYPG");
    // 32-byte header + 6 range floats + bit-packed payload
    EXPECT_EQ(bytes.size(), 32u + 24u + (grid.data.size() + 7) / 8);
    const OccupancyGrid back = deserialize_grid(bytes);
    EXPECT_EQ(back.data, grid.data);
    EXPECT_EQ(back.geometry.H, grid.geometry.H);
    EXPECT_EQ(back.geometry.W, grid.geometry.W);
    EXPECT_EQ(back.geometry.C, grid.geometry.C);
    // ranges are stored as 32-bit floats
    EXPECT_EQ(static_cast<float>(back.geometry.x_min), static_cast<float>(grid.geometry.x_min));
    EXPECT_EQ(static_cast<float>(back.geometry.z_max), static_cast<float>(grid.geometry.z_max));
}

TEST(GridSerialization, FileRoundTrip) {
    GridGeometry g;
    g.H = 16;
    g.W = 16;
    g.C = 8;
    Rng rng(9);
    OccupancyGrid grid(g);
    for (auto& v : grid.data) v = rng.uniform() < 0.4;
    const auto path = std::filesystem::temp_directory_path() / "typlab_grid_test.typg";
    write_grid(path, grid);
    const OccupancyGrid back = read_grid(path);
    EXPECT_EQ(back.data, grid.data);
    std::filesystem::remove(path);
}

TEST(GridTensor, RoundTripThroughTensor) {
    GridGeometry g;
    g.H = 8;
    g.W = 6;
    g.C = 4;
    Rng rng(10);
    OccupancyGrid grid(g);
    for (auto& v : grid.data) v = rng.uniform() < 0.5;
    const auto t = grid_to_tensor<float>(grid);
    EXPECT_EQ(t.shape, (std::vector<int>{4, 8, 6}));
    // map logits so threshold_logits reproduces the grid
    Tensor<float> logits = t;
    for (auto& v : logits.data) v = v > 0.5f ? 4.f : -4.f;
    const OccupancyGrid back = threshold_logits(tensor_to_logits(logits, g));
    EXPECT_EQ(back.data, grid.data);
}
