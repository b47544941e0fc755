#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "typlab/bevrep.hpp"
#include "typlab/common.hpp"
#include "typlab/geometry.hpp"
#include "typlab/pointcloud.hpp"

namespace typlab::evalmetrics {

// ---------------------------------------------------------------------------
// BEV histograms
// ---------------------------------------------------------------------------

struct BEVHistogram {
    int bins = 100;
    double x_min = -12.8, x_max = 12.8, y_min = -12.8, y_max = 12.8;
    std::vector<double> p;  // bins*bins, normalized to sum 1 unless empty
    bool empty = true;

    bool same_binning(const BEVHistogram& o) const {
        return bins == o.bins && x_min == o.x_min && x_max == o.x_max && y_min == o.y_min &&
               y_max == o.y_max;
    }
};

/// Normalized BEV point-count histogram aggregated over a set of clouds.
/// Zero in-range points yields the explicit empty flag, never NaN.
inline BEVHistogram bev_histogram(const std::vector<const PointCloud*>& clouds, double x_min,
                                  double x_max, double y_min, double y_max, int bins = 100) {
    if (bins <= 0) throw ArgumentError("bev_histogram: bins must be positive");
    BEVHistogram h;
    h.bins = bins;
    h.x_min = x_min;
    h.x_max = x_max;
    h.y_min = y_min;
    h.y_max = y_max;
    h.p.assign(static_cast<std::size_t>(bins) * bins, 0.0);
    double total = 0;
    const double sx = (x_max - x_min) / bins, sy = (y_max - y_min) / bins;
    for (const PointCloud* cloud : clouds)
        for (const auto& pt : cloud->points) {
            const int ix = static_cast<int>(std::floor((pt[0] - x_min) / sx));
            const int iy = static_cast<int>(std::floor((pt[1] - y_min) / sy));
            if (ix < 0 || ix >= bins || iy < 0 || iy >= bins) continue;
            h.p[static_cast<std::size_t>(ix) * bins + iy] += 1.0;
            total += 1.0;
        }
    if (total > 0) {
        for (auto& v : h.p) v /= total;
        h.empty = false;
    }
    return h;
}

inline BEVHistogram bev_histogram(const std::vector<PointCloud>& clouds, double x_min,
                                  double x_max, double y_min, double y_max, int bins = 100) {
    std::vector<const PointCloud*> ptrs;
    ptrs.reserve(clouds.size());
    for (const auto& c : clouds) ptrs.push_back(&c);
    return bev_histogram(ptrs, x_min, x_max, y_min, y_max, bins);
}

// ---------------------------------------------------------------------------
// Jensen-Shannon divergence (natural log, bounded by ln 2)
// ---------------------------------------------------------------------------

inline double jsd(const BEVHistogram& p, const BEVHistogram& q) {
    if (!p.same_binning(q)) throw ArgumentError("jsd: histogram binnings differ");
    if (p.empty || q.empty) throw ArgumentError("jsd: empty distribution");
    auto kl_to_mix = [&](const std::vector<double>& a) {
        double kl = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] <= 0) continue;  // 0 log 0 = 0
            const double m = 0.5 * (p.p[i] + q.p[i]);
            kl += a[i] * std::log(a[i] / m);
        }
        return kl;
    };
    return 0.5 * kl_to_mix(p.p) + 0.5 * kl_to_mix(q.p);
}

// ---------------------------------------------------------------------------
// Maximum mean discrepancy over per-sample histograms, Gaussian kernel
// ---------------------------------------------------------------------------

inline double histogram_sq_dist(const BEVHistogram& a, const BEVHistogram& b) {
    if (!a.same_binning(b)) throw ArgumentError("mmd: histogram binnings differ");
    double d = 0;
    for (std::size_t i = 0; i < a.p.size(); ++i) {
        const double diff = a.p[i] - b.p[i];
        d += diff * diff;
    }
    return d;
}

/// Median of pairwise distances across both sets (the usual kernel
/// bandwidth heuristic).
inline double median_heuristic_bandwidth(const std::vector<BEVHistogram>& a,
                                         const std::vector<BEVHistogram>& b) {
    std::vector<double> dists;
    std::vector<const BEVHistogram*> all;
    for (const auto& h : a) all.push_back(&h);
    for (const auto& h : b) all.push_back(&h);
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j)
            dists.push_back(std::sqrt(histogram_sq_dist(*all[i], *all[j])));
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    const double median = dists[dists.size() / 2];
    return median > 1e-12 ? median : 1.0;
}

/// Squared-MMD estimate with kernel k(u,v) = exp(-||u-v||^2 / (2 sigma^2)).
/// The unbiased estimator can be slightly negative by sampling noise; the
/// biased one is exactly 0 on identical sets.
inline double mmd(const std::vector<BEVHistogram>& set_a, const std::vector<BEVHistogram>& set_b,
                  double bandwidth, bool unbiased = true) {
    if (set_a.size() < 2 || set_b.size() < 2)
        throw ArgumentError("mmd: each set needs at least 2 samples");
    if (bandwidth <= 0) throw ArgumentError("mmd: bandwidth must be positive");
    const double denom = 2.0 * bandwidth * bandwidth;
    auto kernel = [&](const BEVHistogram& u, const BEVHistogram& v) {
        return std::exp(-histogram_sq_dist(u, v) / denom);
    };
    const double m = static_cast<double>(set_a.size());
    const double n = static_cast<double>(set_b.size());
    double kaa = 0, kbb = 0, kab = 0;
    for (std::size_t i = 0; i < set_a.size(); ++i)
        for (std::size_t j = 0; j < set_a.size(); ++j) {
            if (unbiased && i == j) continue;
            kaa += kernel(set_a[i], set_a[j]);
        }
    for (std::size_t i = 0; i < set_b.size(); ++i)
        for (std::size_t j = 0; j < set_b.size(); ++j) {
            if (unbiased && i == j) continue;
            kbb += kernel(set_b[i], set_b[j]);
        }
    for (const auto& u : set_a)
        for (const auto& v : set_b) kab += kernel(u, v);
    if (unbiased) return kaa / (m * (m - 1)) + kbb / (n * (n - 1)) - 2.0 * kab / (m * n);
    return kaa / (m * m) + kbb / (n * n) - 2.0 * kab / (m * n);
}

// ---------------------------------------------------------------------------
// Cross-view consistency IoU
// ---------------------------------------------------------------------------

/// IoU of occupied voxels restricted to BEV columns where the mask is set;
/// an empty mask yields nullopt rather than NaN.
inline std::optional<double> consistency_iou(const bevrep::OccupancyGrid& generated,
                                             const bevrep::OccupancyGrid& oracle,
                                             const bevrep::BinaryMap& mask) {
    if (!(generated.geometry == oracle.geometry))
        throw ArgumentError("consistency_iou: grid geometries differ");
    if (mask.geometry.H != generated.geometry.H || mask.geometry.W != generated.geometry.W)
        throw ArgumentError("consistency_iou: mask geometry differs");
    const bevrep::GridGeometry& g = generated.geometry;
    std::size_t inter = 0, uni = 0, masked_cols = 0;
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy) {
            if (!mask.at(ix, iy)) continue;
            ++masked_cols;
            for (int iz = 0; iz < g.C; ++iz) {
                const bool a = generated.data[g.index(ix, iy, iz)];
                const bool b = oracle.data[g.index(ix, iy, iz)];
                inter += a && b;
                uni += a || b;
            }
        }
    if (masked_cols == 0) return std::nullopt;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Collaboration-utility proxy: per-box surface coverage
// ---------------------------------------------------------------------------

struct BoxCoverage {
    double ego = 0;    // fraction of surface-shell voxels hit by the ego cloud
    double fused = 0;  // same for ego + collaborators (early fusion)
    double ratio = 1;  // fused / ego (1 when both are empty)
};

namespace detail {

/// Voxels adjacent to the box's vertical surfaces: BEV centers within half
/// a cell of the footprint boundary, z overlapping the box height.
inline std::vector<std::size_t> surface_shell(const geometry::ObjectBox& box,
                                              const bevrep::GridGeometry& g) {
    std::vector<std::size_t> shell;
    const double margin = 0.5 * std::max(g.step_x(), g.step_y());
    geometry::ObjectBox outer = box;
    outer.size[0] += 2 * margin;
    outer.size[1] += 2 * margin;
    geometry::ObjectBox inner = box;
    inner.size[0] = std::max(0.05, box.size[0] - 2 * margin);
    inner.size[1] = std::max(0.05, box.size[1] - 2 * margin);
    const double reach = 0.5 * std::hypot(outer.size[0], outer.size[1]);
    const int ix0 = std::max(0, static_cast<int>((box.center[0] - reach - g.x_min) / g.step_x()));
    const int ix1 =
        std::min(g.H - 1, static_cast<int>((box.center[0] + reach - g.x_min) / g.step_x()));
    const int iy0 = std::max(0, static_cast<int>((box.center[1] - reach - g.y_min) / g.step_y()));
    const int iy1 =
        std::min(g.W - 1, static_cast<int>((box.center[1] + reach - g.y_min) / g.step_y()));
    for (int ix = ix0; ix <= ix1; ++ix)
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double cx = g.cell_x(ix), cy = g.cell_y(iy);
            if (!geometry::footprint_contains(outer, cx, cy)) continue;
            if (geometry::footprint_contains(inner, cx, cy)) continue;
            for (int iz = 0; iz < g.C; ++iz) {
                const double cz = g.cell_z(iz);
                if (cz < box.z_min() - 0.5 * g.step_z() || cz > box.z_max() + 0.5 * g.step_z())
                    continue;
                shell.push_back(g.index(ix, iy, iz));
            }
        }
    return shell;
}

}  // namespace detail

/// Early-fusion coverage gain per ground-truth box: the fraction of each
/// box's surface shell occupied by the ego cloud alone vs the fused union.
/// All clouds and boxes must share one frame.
inline std::vector<BoxCoverage> collaboration_gain(const PointCloud& ego_cloud,
                                                   const std::vector<PointCloud>& other_clouds,
                                                   const std::vector<geometry::ObjectBox>& boxes,
                                                   const bevrep::GridGeometry& geometry) {
    const bevrep::OccupancyGrid ego_grid = bevrep::voxelize(ego_cloud, geometry).grid;
    bevrep::OccupancyGrid fused_grid = ego_grid;
    for (const auto& cloud : other_clouds) {
        const bevrep::OccupancyGrid extra = bevrep::voxelize(cloud, geometry).grid;
        for (std::size_t i = 0; i < fused_grid.data.size(); ++i)
            fused_grid.data[i] |= extra.data[i];
    }
    std::vector<BoxCoverage> out;
    for (const auto& box : boxes) {
        const auto shell = detail::surface_shell(box, geometry);
        BoxCoverage cov;
        if (!shell.empty()) {
            std::size_t ego_hits = 0, fused_hits = 0;
            for (std::size_t idx : shell) {
                ego_hits += ego_grid.data[idx];
                fused_hits += fused_grid.data[idx];
            }
            cov.ego = static_cast<double>(ego_hits) / static_cast<double>(shell.size());
            cov.fused = static_cast<double>(fused_hits) / static_cast<double>(shell.size());
        }
        if (cov.ego > 0)
            cov.ratio = cov.fused / cov.ego;
        else
            cov.ratio = cov.fused > 0 ? std::numeric_limits<double>::infinity() : 1.0;
        out.push_back(cov);
    }
    return out;
}

}  // namespace typlab::evalmetrics
