#include <gtest/gtest.h>

#include <cmath>

#include "typlab/evalmetrics.hpp"
#include "typlab/scenesim.hpp"

using namespace typlab;
using namespace typlab::evalmetrics;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3f> pts) {
    PointCloud c;
    c.frame = "grid";
    c.points = pts;
    return c;
}

BEVHistogram two_bin(double p0, double p1) {
    BEVHistogram h;
    h.bins = 1;  // trick: use a pair of 1x1 histograms? no - build 2 bins manually
    h.bins = 2;
    h.x_min = 0;
    h.x_max = 2;
    h.y_min = 0;
    h.y_max = 1;
    h.p = {p0, 0.0, p1, 0.0};
    h.empty = false;
    return h;
}

// independent point-in-rotated-rectangle via corner cross products
bool inside_quad(const std::array<std::array<double, 2>, 4>& corners, double x, double y) {
    double sign = 0;
    for (int i = 0; i < 4; ++i) {
        const auto& a = corners[static_cast<std::size_t>(i)];
        const auto& b = corners[static_cast<std::size_t>((i + 1) % 4)];
        const double cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        if (std::abs(cross) < 1e-12) continue;
        if (sign == 0)
            sign = cross > 0 ? 1 : -1;
        else if ((cross > 0 ? 1 : -1) != sign)
            return false;
    }
    return true;
}

}  // namespace

TEST(BevHistogram, OneHotAndOrderInvariance) {
    const auto c = cloud_of({{1.f, 1.f, 0.f}, {1.2f, 1.1f, -0.5f}});
    const auto h = bev_histogram({c}, -12.8, 12.8, -12.8, 12.8, 8);
    EXPECT_FALSE(h.empty);
    double sum = 0, maxv = 0;
    for (double v : h.p) {
        sum += v;
        maxv = std::max(maxv, v);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_NEAR(maxv, 1.0, 1e-9);  // both points share one bin

    // ordering of clouds and points must not matter
    const auto c2 = cloud_of({{1.2f, 1.1f, -0.5f}, {1.f, 1.f, 0.f}});
    const auto h2 = bev_histogram({c2}, -12.8, 12.8, -12.8, 12.8, 8);
    EXPECT_EQ(h.p, h2.p);
}

TEST(BevHistogram, EmptyFlagInsteadOfNaN) {
    PointCloud empty;
    empty.frame = "grid";
    const auto h = bev_histogram({empty}, -1.0, 1.0, -1.0, 1.0, 4);
    EXPECT_TRUE(h.empty);
    for (double v : h.p) EXPECT_EQ(v, 0.0);
}

// Monte-Carlo convergence: uniform points drive the max deviation from the
// flat distribution down as the sample count grows.
TEST(BevHistogram, UniformConvergence) {
    Rng rng(1);
    auto deviation = [&](std::size_t n) {
        PointCloud c;
        c.frame = "grid";
        for (std::size_t i = 0; i < n; ++i)
            c.points.push_back({static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1)), 0.f});
        const auto h = bev_histogram({c}, -1, 1, -1, 1, 5);
        double dev = 0;
        for (double v : h.p) dev = std::max(dev, std::abs(v - 1.0 / 25.0));
        return dev;
    };
    EXPECT_LT(deviation(200000), deviation(500));
}

TEST(Jsd, IdenticalZeroDisjointLnTwo) {
    const auto p = two_bin(0.5, 0.5);
    EXPECT_DOUBLE_EQ(jsd(p, p), 0.0);
    const auto a = two_bin(1.0, 0.0);
    const auto b = two_bin(0.0, 1.0);
    EXPECT_NEAR(jsd(a, b), std::log(2.0), 1e-12);
}

// Direct formula evaluation for p=(0.5,0.5), q=(0.9,0.1):
// m = (0.7, 0.3); JSD = H(m) - (H(p)+H(q))/2 = 0.101749... nats.
TEST(Jsd, TwoBinOracleValue) {
    const auto p = two_bin(0.5, 0.5);
    const auto q = two_bin(0.9, 0.1);
    const double expect = 0.5 * (0.5 * std::log(0.5 / 0.7) + 0.5 * std::log(0.5 / 0.3)) +
                          0.5 * (0.9 * std::log(0.9 / 0.7) + 0.1 * std::log(0.1 / 0.3));
    EXPECT_NEAR(expect, 0.1017495, 1e-6);  // frozen from the direct evaluation
    EXPECT_NEAR(jsd(p, q), expect, 1e-12);
    EXPECT_DOUBLE_EQ(jsd(p, q), jsd(q, p));  // symmetry
}

TEST(Jsd, BoundedAndValidated) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        double a = rng.uniform(0.01, 0.99);
        double b = rng.uniform(0.01, 0.99);
        const double v = jsd(two_bin(a, 1 - a), two_bin(b, 1 - b));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, std::log(2.0) + 1e-12);
    }
    BEVHistogram other = two_bin(0.5, 0.5);
    other.bins = 3;
    other.p.assign(9, 1.0 / 9);
    EXPECT_THROW(jsd(two_bin(0.5, 0.5), other), ArgumentError);
}

TEST(Mmd, IdenticalSetsAndSeparation) {
    Rng rng(3);
    auto population = [&](double center, int n) {
        std::vector<BEVHistogram> set;
        for (int i = 0; i < n; ++i) {
            PointCloud c;
            c.frame = "grid";
            for (int k = 0; k < 200; ++k)
                c.points.push_back({static_cast<float>(center + rng.normal() * 0.3),
                                    static_cast<float>(rng.normal() * 0.3), 0.f});
            set.push_back(bev_histogram({c}, -6, 6, -6, 6, 20));
        }
        return set;
    };
    const auto a = population(-1.0, 6);
    const double sigma = median_heuristic_bandwidth(a, a);
    EXPECT_DOUBLE_EQ(mmd(a, a, sigma, /*unbiased=*/false), 0.0);
    // feeding the very same samples twice skews the unbiased estimator by
    // at most -2/m from the excluded diagonal
    const double self_u = mmd(a, a, sigma, /*unbiased=*/true);
    EXPECT_LE(self_u, 1e-12);
    EXPECT_GE(self_u, -2.0 / 6 - 1e-9);

    // two independent draws of the same population: near zero
    const auto a2 = population(-1.0, 6);
    const auto far = population(3.0, 6);
    const double s2 = median_heuristic_bandwidth(a, far);
    const double mmd_same = mmd(a, a2, s2);
    const double mmd_far = mmd(a, far, s2);
    EXPECT_GT(mmd_far, 0.0);
    EXPECT_GT(mmd_far, mmd_same + 0.01);

    EXPECT_THROW(mmd({a[0]}, a, sigma), ArgumentError);
}

TEST(ConsistencyIou, TrivialCasesAndBruteForce) {
    bevrep::GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 4;
    Rng rng(4);
    bevrep::OccupancyGrid a(g), b(g);
    bevrep::BinaryMap mask(g);
    for (auto& v : mask.data) v = 1;
    for (auto& v : a.data) v = rng.uniform() < 0.3;
    EXPECT_EQ(consistency_iou(a, a, mask).value(), 1.0);

    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = !a.data[i];
    EXPECT_EQ(consistency_iou(a, b, mask).value(), 0.0);

    // random mask: compare against a brute-force set-arithmetic recount
    bevrep::BinaryMap half(g);
    for (auto& v : half.data) v = rng.uniform() < 0.5;
    bevrep::OccupancyGrid c(g);
    for (auto& v : c.data) v = rng.uniform() < 0.3;
    std::size_t inter = 0, uni = 0;
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy)
            for (int iz = 0; iz < g.C; ++iz) {
                if (!half.at(ix, iy)) continue;
                inter += a.at(ix, iy, iz) && c.at(ix, iy, iz);
                uni += a.at(ix, iy, iz) || c.at(ix, iy, iz);
            }
    const auto got = consistency_iou(a, c, half);
    ASSERT_TRUE(got.has_value());
    EXPECT_DOUBLE_EQ(*got, static_cast<double>(inter) / static_cast<double>(uni));

    bevrep::BinaryMap none(g);
    EXPECT_FALSE(consistency_iou(a, b, none).has_value());
}

TEST(ConsistencyIou, MonotoneUnderCorrectFill) {
    bevrep::GridGeometry g;
    g.H = 8;
    g.W = 8;
    g.C = 2;
    Rng rng(5);
    bevrep::OccupancyGrid oracle(g), gen(g);
    bevrep::BinaryMap mask(g);
    for (auto& v : mask.data) v = 1;
    for (auto& v : oracle.data) v = rng.uniform() < 0.4;
    double prev = consistency_iou(gen, oracle, mask).value();
    for (std::size_t i = 0; i < oracle.data.size(); ++i) {
        if (!oracle.data[i]) continue;
        gen.data[i] = 1;  // add one correct voxel at a time
        const double now = consistency_iou(gen, oracle, mask).value();
        EXPECT_GE(now, prev);
        prev = now;
    }
    EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(CollaborationGain, NoCollaboratorsRatioOne) {
    bevrep::GridGeometry g;
    scenesim::GeneratorConfig gen_cfg;
    const auto spec = scenesim::generate_scene(3, gen_cfg);
    scenesim::LidarModel lidar;
    lidar.azimuth_count = 120;
    const auto returns = scenesim::raycast_lidar_returns(spec, 0, lidar);
    PointCloud ego;
    ego.frame = "world";
    for (const auto& r : returns)
        ego.points.push_back({static_cast<float>(r.point_world[0]),
                              static_cast<float>(r.point_world[1]),
                              static_cast<float>(r.point_world[2])});
    bevrep::GridGeometry world_grid = g;
    world_grid.z_min = -0.5;
    world_grid.z_max = 3.5;
    const auto covs = collaboration_gain(ego, {}, spec.boxes, world_grid);
    ASSERT_EQ(covs.size(), spec.boxes.size());
    for (const auto& c : covs) {
        EXPECT_EQ(c.ego, c.fused);
        EXPECT_EQ(c.ratio, 1.0);
    }
}

TEST(CollaborationGain, OccludedBoxOnlyFusedSeesIt) {
    // hand-built scene: one box hidden from the ego by a wall, visible to
    // the reference
    scenesim::SceneSpec spec;
    geometry::AgentPose ego_pose;
    ego_pose.position = {-8, 0, 1.8};
    geometry::AgentPose ref_pose;
    ref_pose.position = {8, 0, 1.8};
    ref_pose.yaw = kPi;  // wrapped already
    ref_pose.yaw = wrap_angle(kPi);
    spec.agent_poses = {ego_pose, ref_pose};
    geometry::ObjectBox box;
    box.center = {2, 0, 0.75};
    box.size = {4, 2, 1.5};
    spec.boxes = {box};
    geometry::ObjectBox wall;
    wall.center = {-2, 0, 1.5};
    wall.size = {0.4, 10, 3.0};
    spec.occluder_walls = {wall};

    scenesim::LidarModel lidar;
    lidar.azimuth_count = 360;
    lidar.drop_scale = 0.0;
    auto world_points = [&](int agent) {
        PointCloud c;
        c.frame = "world";
        for (const auto& r : scenesim::raycast_lidar_returns(spec, agent, lidar))
            c.points.push_back({static_cast<float>(r.point_world[0]),
                                static_cast<float>(r.point_world[1]),
                                static_cast<float>(r.point_world[2])});
        return c;
    };
    const PointCloud ego = world_points(0);
    const PointCloud ref = world_points(1);

    bevrep::GridGeometry grid;
    grid.x_min = -12.8;
    grid.x_max = 12.8;
    grid.y_min = -12.8;
    grid.y_max = 12.8;
    grid.z_min = -0.5;
    grid.z_max = 3.5;
    grid.C = 8;
    const auto covs = collaboration_gain(ego, {ref}, spec.boxes, grid);
    ASSERT_EQ(covs.size(), 1u);
    EXPECT_EQ(covs[0].ego, 0.0);
    EXPECT_GT(covs[0].fused, 0.0);
    EXPECT_TRUE(std::isinf(covs[0].ratio));
}

// Recount oracle: coverage fractions recomputed by scanning every voxel
// with an independent membership test.
TEST(CollaborationGain, MatchesBruteForceRecount) {
    scenesim::GeneratorConfig gen_cfg;
    const auto spec = scenesim::generate_scene(11, gen_cfg);
    scenesim::LidarModel lidar;
    lidar.azimuth_count = 180;
    auto world_points = [&](int agent) {
        PointCloud c;
        c.frame = "world";
        lidar.seed = static_cast<std::uint64_t>(agent);
        for (const auto& r : scenesim::raycast_lidar_returns(spec, agent, lidar))
            c.points.push_back({static_cast<float>(r.point_world[0]),
                                static_cast<float>(r.point_world[1]),
                                static_cast<float>(r.point_world[2])});
        return c;
    };
    const PointCloud ego = world_points(0);
    const PointCloud ref = world_points(1);
    bevrep::GridGeometry grid;
    grid.z_min = -0.5;
    grid.z_max = 3.5;
    const auto covs = collaboration_gain(ego, {ref}, spec.boxes, grid);

    const auto ego_grid = bevrep::voxelize(ego, grid).grid;
    auto fused_grid = ego_grid;
    const auto ref_grid = bevrep::voxelize(ref, grid).grid;
    for (std::size_t i = 0; i < fused_grid.data.size(); ++i)
        fused_grid.data[i] |= ref_grid.data[i];

    const double margin = 0.5 * std::max(grid.step_x(), grid.step_y());
    for (std::size_t b = 0; b < spec.boxes.size(); ++b) {
        const auto& box = spec.boxes[b];
        geometry::ObjectBox outer = box;
        outer.size[0] += 2 * margin;
        outer.size[1] += 2 * margin;
        geometry::ObjectBox inner = box;
        inner.size[0] = std::max(0.05, box.size[0] - 2 * margin);
        inner.size[1] = std::max(0.05, box.size[1] - 2 * margin);
        const auto oc = geometry::footprint_corners(outer);
        const auto ic = geometry::footprint_corners(inner);
        std::size_t shell = 0, ego_hits = 0, fused_hits = 0;
        for (int ix = 0; ix < grid.H; ++ix)
            for (int iy = 0; iy < grid.W; ++iy)
                for (int iz = 0; iz < grid.C; ++iz) {
                    const double cx = grid.cell_x(ix), cy = grid.cell_y(iy),
                                 cz = grid.cell_z(iz);
                    if (!inside_quad(oc, cx, cy) || inside_quad(ic, cx, cy)) continue;
                    if (cz < box.z_min() - 0.5 * grid.step_z() ||
                        cz > box.z_max() + 0.5 * grid.step_z())
                        continue;
                    ++shell;
                    ego_hits += ego_grid.at(ix, iy, iz);
                    fused_hits += fused_grid.at(ix, iy, iz);
                }
        ASSERT_GT(shell, 0u);
        EXPECT_NEAR(covs[b].ego, static_cast<double>(ego_hits) / shell, 1e-12);
        EXPECT_NEAR(covs[b].fused, static_cast<double>(fused_hits) / shell, 1e-12);
        EXPECT_GE(covs[b].ratio, 1.0);  // fusion is a superset of ego points
    }
}
