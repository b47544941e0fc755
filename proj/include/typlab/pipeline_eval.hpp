#pragma once

#include <cmath>
#include <optional>
#include <set>

#include "typlab/pipeline.hpp"

namespace typlab::pipeline {

// ---------------------------------------------------------------------------
// Codec reconstruction quality
// ---------------------------------------------------------------------------

/// Mean held-out voxel IoU of encode -> quantize -> decode -> threshold.
inline double eval_codec_iou(const PipelineConfig& cfg, codec::CodecNet<float>& net,
                             const fs::path& data_dir, const std::string& split = "test") {
    const auto samples = dataset::read_split(data_dir, split);
    if (samples.empty()) throw DependencyError("no '" + split + "' split in " + data_dir.string());
    const bevrep::GridGeometry g = grid_geometry(cfg);
    double total = 0;
    for (const auto& s : samples) {
        const bevrep::OccupancyGrid grid = bevrep::voxelize(s.clouds[0], g).grid;
        total += codec::grid_iou(codec::reconstruct(net, grid), grid);
    }
    return total / static_cast<double>(samples.size());
}

struct CodecDiagnostics {
    double iou = 0;              // quantized reconstruction
    double iou_unquantized = 0;  // decoder fed the continuous latent
    int codes_used = 0;
    double mean_quant_err = 0;  // mean squared quantization residual per vector
};

inline CodecDiagnostics eval_codec_diagnostics(const PipelineConfig& cfg,
                                               codec::CodecNet<float>& net,
                                               const fs::path& data_dir,
                                               const std::string& split = "test") {
    const auto samples = dataset::read_split(data_dir, split);
    if (samples.empty()) throw DependencyError("no '" + split + "' split in " + data_dir.string());
    const bevrep::GridGeometry g = grid_geometry(cfg);
    CodecDiagnostics d;
    std::set<int> used;
    double qerr = 0;
    std::size_t vectors = 0;
    for (const auto& s : samples) {
        const bevrep::OccupancyGrid grid = bevrep::voxelize(s.clouds[0], g).grid;
        codec::LatentMap<float> z = codec::encode(net, grid);
        auto [zq, qi] = codec::quantize(net.codebook, z);
        used.insert(qi.idx.begin(), qi.idx.end());
        for (std::size_t i = 0; i < z.data.numel(); ++i) {
            const double diff = z.data.data[i] - zq.data.data[i];
            qerr += diff * diff;
        }
        vectors += qi.idx.size();
        d.iou += codec::grid_iou(bevrep::threshold_logits(codec::decode(net, zq)), grid);
        d.iou_unquantized += codec::grid_iou(bevrep::threshold_logits(codec::decode(net, z)), grid);
    }
    d.iou /= static_cast<double>(samples.size());
    d.iou_unquantized /= static_cast<double>(samples.size());
    d.codes_used = static_cast<int>(used.size());
    d.mean_quant_err = qerr / static_cast<double>(vectors);
    return d;
}

// ---------------------------------------------------------------------------
// Stage-1 generation quality (JSD / MMD against held-out clouds)
// ---------------------------------------------------------------------------

struct Stage1Eval {
    double jsd = 0;
    double mmd = 0;
    double jsd_untrained = 0;
    std::vector<PointCloud> generated;
};

/// Samples the stage-1 model on the held-out object maps and compares the
/// generated point distribution to the held-out real clouds. Also scores an
/// untrained copy of the denoiser as the reference baseline.
inline Stage1Eval eval_stage1(const PipelineConfig& cfg, diffusion::Denoiser<float>& denoiser,
                              codec::CodecNet<float>& codec_x, codec::CodecNet<float>& codec_y,
                              const fs::path& data_dir, int max_scenes = 0) {
    auto samples = dataset::read_split(data_dir, "test");
    if (samples.empty()) throw DependencyError("no test split in " + data_dir.string());
    if (max_scenes > 0 && static_cast<int>(samples.size()) > max_scenes)
        samples.resize(static_cast<std::size_t>(max_scenes));
    const bevrep::GridGeometry g = grid_geometry(cfg);

    diffusion::Denoiser<float> untrained(denoiser.cfg);
    {
        Rng rng(hash64(cfg.seed, std::uint64_t{0x0BA5E}));
        untrained.unet.init(rng);
        untrained.schedule_T = denoiser.schedule_T;
        untrained.x_scale = denoiser.x_scale;
        untrained.y_scale = denoiser.y_scale;
    }

    control::GenerationStack<float> stack{&denoiser, nullptr, &codec_x, &codec_y};
    control::GenerationStack<float> base_stack{&untrained, nullptr, &codec_x, &codec_y};

    Stage1Eval out;
    std::vector<PointCloud> real, baseline;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SingleView v = single_view(samples[i], g);
        control::SamplingConfig sc;
        sc.steps = cfg.sample_steps;
        sc.seed = hash64(cfg.seed, std::uint64_t{0x6E4E}, static_cast<std::uint64_t>(i));
        sc.low = cfg.post_low;
        sc.high = cfg.post_high;
        sc.noise_sigma = cfg.post_sigma;
        out.generated.push_back(control::generate_from_map(stack, v.map, sc));
        baseline.push_back(control::generate_from_map(base_stack, v.map, sc));
        real.push_back(samples[i].clouds[0]);
    }

    const auto hist = [&](const std::vector<PointCloud>& clouds) {
        return evalmetrics::bev_histogram(clouds, g.x_min, g.x_max, g.y_min, g.y_max);
    };
    out.jsd = evalmetrics::jsd(hist(out.generated), hist(real));
    out.jsd_untrained = evalmetrics::jsd(hist(baseline), hist(real));

    std::vector<evalmetrics::BEVHistogram> gen_h, real_h;
    for (std::size_t i = 0; i < real.size(); ++i) {
        gen_h.push_back(hist({out.generated[i]}));
        real_h.push_back(hist({real[i]}));
    }
    out.mmd = evalmetrics::mmd(gen_h, real_h,
                               evalmetrics::median_heuristic_bandwidth(gen_h, real_h));
    return out;
}

// ---------------------------------------------------------------------------
// Conditioned (stage-2) evaluation over pair scenes
// ---------------------------------------------------------------------------

struct SceneEval {
    std::optional<double> iou_conditioned;
    std::optional<double> iou_unconditional;
    bool has_gap_box = false;  // some box hidden from the ego, seen by the reference
    double cov_ego = 0, cov_fused_gen = 0, cov_fused_oracle = 0;
    bool remove_effect = false, add_effect = false;
    PointCloud generated;  // reference frame
    PointCloud oracle;     // reference frame
};

struct ConditionedEvalOptions {
    int max_scenes = 0;
    bool editing = true;
    bool coverage = true;
};

/// Above-ground occupancy rate helpers for the scene-editing check. The
/// ground band is excluded so object presence dominates the measurement.
inline std::pair<double, double> footprint_vs_background_rate(
    const bevrep::OccupancyGrid& grid, const std::vector<geometry::ObjectBox>& all_footprints,
    const geometry::ObjectBox& target, double ground_z) {
    const bevrep::GridGeometry& g = grid.geometry;
    const double z_floor = ground_z + 0.3;
    std::size_t in_cells = 0, in_occ = 0, bg_cells = 0, bg_occ = 0;
    for (int ix = 0; ix < g.H; ++ix)
        for (int iy = 0; iy < g.W; ++iy) {
            const double cx = g.cell_x(ix), cy = g.cell_y(iy);
            const bool in_target = geometry::footprint_contains(target, cx, cy);
            bool in_any = in_target;
            for (const auto& b : all_footprints)
                if (!in_any && geometry::footprint_contains(b, cx, cy)) in_any = true;
            for (int iz = 0; iz < g.C; ++iz) {
                if (g.cell_z(iz) < z_floor) continue;
                const bool occ = grid.data[g.index(ix, iy, iz)];
                if (in_target) {
                    ++in_cells;
                    in_occ += occ;
                } else if (!in_any) {
                    ++bg_cells;
                    bg_occ += occ;
                }
            }
        }
    const double in_rate = in_cells ? static_cast<double>(in_occ) / in_cells : 0.0;
    const double bg_rate = bg_cells ? static_cast<double>(bg_occ) / bg_cells : 0.0;
    return {in_rate, bg_rate};
}

/// Picks a free spot for the editing check's added box.
inline geometry::ObjectBox sample_free_box(const scenesim::SceneSample& s,
                                           const geometry::AgentPose& ref_pose,
                                           std::uint64_t seed) {
    Rng rng(hash64(seed, std::uint64_t{0xADDB0}));
    geometry::ObjectBox box;
    box.size = {4.4, 2.0, 1.6};
    for (int tries = 0; tries < 200; ++tries) {
        // positions in the reference frame, in front half of the grid
        const double x = rng.uniform(-9.0, 9.0);
        const double y = rng.uniform(-9.0, 9.0);
        const double wx = ref_pose.position[0] + std::cos(ref_pose.yaw) * x -
                          std::sin(ref_pose.yaw) * y;
        const double wy = ref_pose.position[1] + std::sin(ref_pose.yaw) * x +
                          std::cos(ref_pose.yaw) * y;
        bool clear = std::hypot(x, y) > 2.5;
        for (const auto& b : s.boxes_world)
            if (std::hypot(wx - b.center[0], wy - b.center[1]) < 4.5) clear = false;
        for (const auto& w : s.spec.occluder_walls)
            if (std::hypot(wx - w.center[0], wy - w.center[1]) < 4.5) clear = false;
        if (clear) {
            box.center = {x, y, box.size[2] * 0.5 - ref_pose.position[2]};
            box.yaw = wrap_angle(rng.uniform(-kPi, kPi));
            return box;
        }
    }
    box.center = {6.0, 0.0, box.size[2] * 0.5 - ref_pose.position[2]};
    return box;
}

/// Runs the conditioned sampler over held-out pair scenes and scores
/// grounding IoU (vs the unconditional model), collaboration coverage, and
/// the scene-editing effect.
inline std::vector<SceneEval> eval_conditioned(const PipelineConfig& cfg,
                                               control::GenerationStack<float>& stack,
                                               const fs::path& pairs_dir,
                                               const ConditionedEvalOptions& opt,
                                               const std::string& domain = "target") {
    auto samples = dataset::read_split(pairs_dir, "test");
    if (samples.empty()) throw DependencyError("no test split in " + pairs_dir.string());
    if (opt.max_scenes > 0 && static_cast<int>(samples.size()) > opt.max_scenes)
        samples.resize(static_cast<std::size_t>(opt.max_scenes));
    const bevrep::GridGeometry g = grid_geometry(cfg);
    const double max_range = domain == "target" ? cfg.t_range : cfg.s_range;

    control::GenerationStack<float> uncond{stack.denoiser, nullptr, stack.cloud_codec,
                                           stack.map_codec};

    std::vector<SceneEval> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const scenesim::SceneSample& s = samples[i];
        const auto& ego_pose = s.spec.agent_poses[0];
        const auto& ref_pose = s.spec.agent_poses[1];
        SceneEval ev;

        control::SamplingConfig sc;
        sc.steps = cfg.sample_steps;
        sc.seed = hash64(cfg.seed, std::uint64_t{0xC02D}, static_cast<std::uint64_t>(i));
        sc.low = cfg.post_low;
        sc.high = cfg.post_high;
        sc.noise_sigma = cfg.post_sigma;

        const auto boxes_ego = boxes_in_agent_frame(s.boxes_world, ego_pose);
        const auto gen =
            control::generate_reference(stack, s.clouds[0], ego_pose, ref_pose, boxes_ego, {}, sc);
        ev.generated = gen.cloud;
        ev.oracle = s.clouds[1];

        // unconditional baseline on the same object map and seed
        const PointCloud uncond_cloud =
            control::generate_from_map(uncond, gen.y_used, sc, "reference");

        const bevrep::OccupancyGrid oracle_grid = bevrep::voxelize(s.clouds[1], g).grid;
        const bevrep::OccupancyGrid gen_grid = bevrep::voxelize(gen.cloud, g).grid;
        const bevrep::OccupancyGrid uncond_grid = bevrep::voxelize(uncond_cloud, g).grid;

        // common-visibility mask anchored at the reference
        bevrep::BinaryMap common =
            scenesim::visibility_mask_from(s.spec, 1, ref_pose, g, max_range);
        const bevrep::BinaryMap from_ego =
            scenesim::visibility_mask_from(s.spec, 0, ref_pose, g, max_range);
        for (std::size_t c = 0; c < common.data.size(); ++c) common.data[c] &= from_ego.data[c];

        ev.iou_conditioned = evalmetrics::consistency_iou(gen_grid, oracle_grid, common);
        ev.iou_unconditional = evalmetrics::consistency_iou(uncond_grid, oracle_grid, common);

        for (std::size_t b = 0; b < s.spec.boxes.size() && !ev.has_gap_box; ++b)
            ev.has_gap_box = scenesim::box_occluded_from(s.spec, 0, static_cast<int>(b)) &&
                             !scenesim::box_occluded_from(s.spec, 1, static_cast<int>(b));

        if (opt.coverage) {
            // world-frame early-fusion coverage with generated vs oracle
            // reference clouds
            auto to_world = [](const PointCloud& cloud, const geometry::AgentPose& pose,
                               const std::string& local) {
                PointCloud c = cloud;
                c.frame = local;
                return geometry::transform_cloud(c, geometry::pose_to_parent(pose, local, "world"));
            };
            const PointCloud ego_world = to_world(s.clouds[0], ego_pose, "a");
            const PointCloud gen_world = to_world(gen.cloud, ref_pose, "b");
            const PointCloud oracle_world = to_world(s.clouds[1], ref_pose, "c");
            bevrep::GridGeometry cov_g = g;
            cov_g.z_min = -0.2;
            cov_g.z_max = 3.0;
            auto mean_cov = [&](const std::vector<PointCloud>& others, bool ego_side) {
                const auto covs =
                    evalmetrics::collaboration_gain(ego_world, others, s.boxes_world, cov_g);
                double acc = 0;
                for (const auto& c : covs) acc += ego_side ? c.ego : c.fused;
                return covs.empty() ? 0.0 : acc / static_cast<double>(covs.size());
            };
            ev.cov_ego = mean_cov({}, true);
            ev.cov_fused_gen = mean_cov({gen_world}, false);
            ev.cov_fused_oracle = mean_cov({oracle_world}, false);
        }

        if (opt.editing && !s.boxes_world.empty()) {
            const auto boxes_ref = boxes_in_agent_frame(s.boxes_world, ref_pose);
            // pick the box closest to the reference sensor so the effect is
            // inside the well-modeled region
            int target_idx = 0;
            double best = 1e300;
            for (int b = 0; b < static_cast<int>(boxes_ref.size()); ++b) {
                const auto& c = boxes_ref[static_cast<std::size_t>(b)].center;
                const double dist = std::hypot(c[0], c[1]);
                if (dist < best) {
                    best = dist;
                    target_idx = b;
                }
            }
            control::BoxEdits remove_edit;
            remove_edit.remove_indices = {target_idx};
            const auto removed = control::generate_reference(stack, s.clouds[0], ego_pose,
                                                             ref_pose, boxes_ego, remove_edit, sc);
            const auto removed_grid = bevrep::voxelize(removed.cloud, g).grid;
            const auto [in_rate_rm, bg_rate_rm] = footprint_vs_background_rate(
                removed_grid, boxes_ref, boxes_ref[static_cast<std::size_t>(target_idx)],
                -ref_pose.position[2]);
            ev.remove_effect = in_rate_rm < bg_rate_rm;

            control::BoxEdits add_edit;
            add_edit.add.push_back(sample_free_box(s, ref_pose, sc.seed));
            const auto added = control::generate_reference(stack, s.clouds[0], ego_pose, ref_pose,
                                                           boxes_ego, add_edit, sc);
            const auto added_grid = bevrep::voxelize(added.cloud, g).grid;
            auto footprints = boxes_ref;
            footprints.push_back(add_edit.add[0]);
            const auto [in_rate_add, bg_rate_add] = footprint_vs_background_rate(
                added_grid, footprints, add_edit.add[0], -ref_pose.position[2]);
            ev.add_effect = in_rate_add > bg_rate_add;
        }
        out.push_back(std::move(ev));
    }
    return out;
}

/// Aggregate JSD of conditioned generations against the true reference
/// clouds (used by the one-stage vs two-stage comparison).
inline double conditioned_jsd(const PipelineConfig& cfg, const std::vector<SceneEval>& evals) {
    const bevrep::GridGeometry g = grid_geometry(cfg);
    std::vector<PointCloud> gen, real;
    for (const auto& ev : evals) {
        gen.push_back(ev.generated);
        real.push_back(ev.oracle);
    }
    return evalmetrics::jsd(evalmetrics::bev_histogram(gen, g.x_min, g.x_max, g.y_min, g.y_max),
                            evalmetrics::bev_histogram(real, g.x_min, g.x_max, g.y_min, g.y_max));
}

// ---------------------------------------------------------------------------
// Adaptation evaluation: decoded source reconstructions vs target data
// ---------------------------------------------------------------------------

struct AdaptEval {
    double jsd_before = 0, jsd_after = 0;
    double mmd_before = 0, mmd_after = 0;
    bool has_mmd = false;  // needs >= 2 nonempty decoded clouds per side
};

/// Decodes held-out source clouds through (a) the frozen target codec and
/// (b) the adapted source codec, and measures JSD/MMD of the decoded point
/// distributions against held-out target clouds.
inline AdaptEval eval_adaptation(const PipelineConfig& cfg, codec::CodecNet<float>& target_codec,
                                 codec::CodecNet<float>& source_codec, const fs::path& source_dir,
                                 const fs::path& target_dir, int max_scenes = 0) {
    const bevrep::GridGeometry g = grid_geometry(cfg);
    auto load = [&](const fs::path& dir) {
        auto samples = dataset::read_split(dir, "test");
        if (samples.empty()) throw DependencyError("no test split in " + dir.string());
        if (max_scenes > 0 && static_cast<int>(samples.size()) > max_scenes)
            samples.resize(static_cast<std::size_t>(max_scenes));
        return samples;
    };
    const auto source_samples = load(source_dir);
    const auto target_samples = load(target_dir);

    std::vector<PointCloud> target_real, decoded_before, decoded_after;
    for (const auto& s : target_samples) target_real.push_back(s.clouds[0]);
    for (const auto& s : source_samples) {
        const bevrep::OccupancyGrid grid = bevrep::voxelize(s.clouds[0], g).grid;
        decoded_before.push_back(
            bevrep::devoxelize(codec::reconstruct(target_codec, grid), "grid"));
        decoded_after.push_back(
            bevrep::devoxelize(codec::reconstruct(source_codec, grid), "grid"));
    }

    const auto agg = [&](const std::vector<PointCloud>& clouds) {
        return evalmetrics::bev_histogram(clouds, g.x_min, g.x_max, g.y_min, g.y_max);
    };
    AdaptEval out;
    const auto target_hist = agg(target_real);
    out.jsd_before = evalmetrics::jsd(agg(decoded_before), target_hist);
    out.jsd_after = evalmetrics::jsd(agg(decoded_after), target_hist);

    auto per_sample = [&](const std::vector<PointCloud>& clouds) {
        std::vector<evalmetrics::BEVHistogram> hs;
        for (const auto& c : clouds) {
            const auto h = agg({c});
            if (!h.empty) hs.push_back(h);
        }
        return hs;
    };
    const auto ht = per_sample(target_real);
    const auto hb = per_sample(decoded_before);
    const auto ha = per_sample(decoded_after);
    if (ht.size() >= 2 && hb.size() >= 2 && ha.size() >= 2) {
        const double bw = evalmetrics::median_heuristic_bandwidth(ht, hb);
        out.mmd_before = evalmetrics::mmd(hb, ht, bw);
        out.mmd_after = evalmetrics::mmd(ha, ht, bw);
        out.has_mmd = true;
    }
    return out;
}

}  // namespace typlab::pipeline
