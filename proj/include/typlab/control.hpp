#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "typlab/bevrep.hpp"
#include "typlab/checkpoint.hpp"
#include "typlab/codec.hpp"
#include "typlab/common.hpp"
#include "typlab/diffusion.hpp"
#include "typlab/geometry.hpp"
#include "typlab/nn.hpp"

namespace typlab::control {

using diffusion::AdapterFeatures;
using diffusion::Denoiser;
using diffusion::DiffusionSchedule;
using diffusion::kScales;

// ---------------------------------------------------------------------------
// Adapter: four convolutional stages producing multi-scale control features
// injected into the frozen denoiser. Each stage ends in a zero-initialized
// projection, so a fresh adapter contributes exactly nothing.
// ---------------------------------------------------------------------------

template <typename T>
struct Adapter {
    diffusion::UNetConfig denoiser_cfg;
    std::array<nn::Conv2d<T>, kScales> conv1, conv2, proj;
    std::array<nn::Conv2d<T>, kScales - 1> downs;
    std::array<nn::SiLU<T>, kScales> act1, act2;
    std::array<nn::SiLU<T>, kScales - 1> act_d;

    Adapter() = default;
    explicit Adapter(const diffusion::UNetConfig& dcfg) : denoiser_cfg(dcfg) {
        int c = dcfg.x_channels;
        for (int s = 0; s < kScales; ++s) {
            const int w = dcfg.widths[static_cast<std::size_t>(s)];
            conv1[static_cast<std::size_t>(s)] = nn::Conv2d<T>(c, w, 3, 1);
            conv2[static_cast<std::size_t>(s)] = nn::Conv2d<T>(w, w, 3, 1);
            proj[static_cast<std::size_t>(s)] = nn::Conv2d<T>(w, w, 1, 1, 0);
            if (s < kScales - 1)
                downs[static_cast<std::size_t>(s)] =
                    nn::Conv2d<T>(w, dcfg.widths[static_cast<std::size_t>(s) + 1], 3, 2);
            c = dcfg.widths[static_cast<std::size_t>(s) + (s < kScales - 1 ? 1 : 0)];
        }
    }

    void init(Rng& rng) {
        for (auto& l : conv1) l.init(rng);
        for (auto& l : conv2) l.init(rng);
        for (auto& l : downs) l.init(rng);
        for (auto& l : proj) l.zero_init();  // zero-init contract
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        for (int s = 0; s < kScales; ++s) {
            conv1[static_cast<std::size_t>(s)].collect(out, "ad.s" + std::to_string(s) + ".conv1");
            conv2[static_cast<std::size_t>(s)].collect(out, "ad.s" + std::to_string(s) + ".conv2");
            proj[static_cast<std::size_t>(s)].collect(out, "ad.s" + std::to_string(s) + ".proj");
            if (s < kScales - 1)
                downs[static_cast<std::size_t>(s)].collect(out,
                                                           "ad.s" + std::to_string(s) + ".down");
        }
        return out;
    }

    AdapterFeatures<T> forward(const Tensor<T>& ego_latent) {
        if (ego_latent.dim(0) != denoiser_cfg.x_channels ||
            ego_latent.dim(1) != denoiser_cfg.latent_h ||
            ego_latent.dim(2) != denoiser_cfg.latent_w)
            throw ShapeError("Adapter: ego latent shape does not match the configured denoiser");
        AdapterFeatures<T> out;
        Tensor<T> h = ego_latent;
        for (int s = 0; s < kScales; ++s) {
            if (s > 0) h = act_d[static_cast<std::size_t>(s) - 1].forward(
                downs[static_cast<std::size_t>(s) - 1].forward(h));
            h = act1[static_cast<std::size_t>(s)].forward(
                conv1[static_cast<std::size_t>(s)].forward(h));
            h = act2[static_cast<std::size_t>(s)].forward(
                conv2[static_cast<std::size_t>(s)].forward(h));
            out.maps[static_cast<std::size_t>(s)] = proj[static_cast<std::size_t>(s)].forward(h);
        }
        return out;
    }

    /// Pre-activation of the first stage's first convolution (test probe).
    Tensor<T> first_stage_preactivation(const Tensor<T>& ego_latent) {
        return conv1[0].forward(ego_latent);
    }

    void backward(const AdapterFeatures<T>& gfeatures) {
        Tensor<T> pending;  // gradient flowing from stage s+1 back into h2 of stage s
        bool has_pending = false;
        for (int s = kScales - 1; s >= 0; --s) {
            Tensor<T> gh2 = proj[static_cast<std::size_t>(s)].backward(
                gfeatures.maps[static_cast<std::size_t>(s)]);
            if (has_pending) gh2 += pending;
            Tensor<T> gh1 = conv2[static_cast<std::size_t>(s)].backward(
                act2[static_cast<std::size_t>(s)].backward(gh2));
            Tensor<T> gh = conv1[static_cast<std::size_t>(s)].backward(
                act1[static_cast<std::size_t>(s)].backward(gh1));
            if (s > 0) {
                pending = downs[static_cast<std::size_t>(s) - 1].backward(
                    act_d[static_cast<std::size_t>(s) - 1].backward(gh));
                has_pending = true;
            }
        }
    }
};

/// The spec's adapter_forward.
template <typename T>
AdapterFeatures<T> adapter_forward(Adapter<T>& adapter, const codec::LatentMap<T>& ego_latent) {
    return adapter.forward(ego_latent.data);
}

// ---------------------------------------------------------------------------
// Stage-2 training (and the one-stage joint ablation)
// ---------------------------------------------------------------------------

/// One conditioned training tuple in codec latent units (unscaled).
template <typename T>
struct AdapterTrainSample {
    Tensor<T> x_latent;    // reference cloud latent (the generation target)
    Tensor<T> y_latent;    // object map latent y_r^f
    Tensor<T> ego_latent;  // x_e'^f, the transformed ego cloud latent
};

struct Stage2Config {
    int epochs = 60;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool train_denoiser = false;  // one-stage joint ablation switch
};

/// Shared minibatch loop for stage-2 and enhancement. The sample provider
/// is called once per epoch; with a constant provider this is exactly plain
/// stage-2 training.
template <typename T>
std::vector<diffusion::DiffEpochLog> adapter_training_run(
    Denoiser<T>& d, Adapter<T>& adapter,
    const std::function<std::vector<const AdapterTrainSample<T>*>(int)>& provider,
    const Stage2Config& cfg,
    const std::function<void(int, const diffusion::DiffEpochLog&)>& on_epoch = nullptr) {
    const DiffusionSchedule schedule = diffusion::make_schedule(d.schedule_T);
    const std::string denoiser_hash_before = checkpoint::params_sha256(d.params());

    nn::ParamList<T> aparams = adapter.params();
    nn::ParamList<T> dparams = d.params();
    nn::Adam<T> opt_a(cfg.lr);
    nn::Adam<T> opt_d(cfg.lr);
    Rng rng(hash64(cfg.seed, std::uint64_t{0x57A6E2}));

    std::vector<diffusion::DiffEpochLog> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<const AdapterTrainSample<T>*> samples = provider(epoch);
        if (samples.empty()) throw ConfigError("adapter training: empty sample stream");
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        diffusion::DiffEpochLog el;
        el.epoch = epoch;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t end =
                std::min(order.size(), cursor + static_cast<std::size_t>(cfg.batch_size));
            nn::zero_grads(aparams);
            nn::zero_grads(dparams);
            for (std::size_t i = cursor; i < end; ++i) {
                const AdapterTrainSample<T>& s = *samples[order[i]];
                Tensor<T> x0 = s.x_latent;
                x0 *= static_cast<T>(1.0 / d.x_scale);
                Tensor<T> y = s.y_latent;
                y *= static_cast<T>(1.0 / d.y_scale);
                Tensor<T> ego = s.ego_latent;
                ego *= static_cast<T>(1.0 / d.x_scale);

                const AdapterFeatures<T> control = adapter.forward(ego);
                AdapterFeatures<T> gcontrol;
                const int t = static_cast<int>(rng.uniform_int(1, schedule.T));
                el.loss +=
                    diffusion::denoising_loss_step(d, schedule, x0, y, t, rng, &control, &gcontrol);
                adapter.backward(gcontrol);
            }
            const double scale = 1.0 / static_cast<double>(end - cursor);
            for (auto& p : aparams)
                for (auto& g : p.grad->data) g = static_cast<T>(g * scale);
            opt_a.step(aparams);
            if (cfg.train_denoiser) {
                for (auto& p : dparams)
                    for (auto& g : p.grad->data) g = static_cast<T>(g * scale);
                opt_d.step(dparams);
            }
            cursor = end;
        }
        el.loss /= static_cast<double>(samples.size());
        log.push_back(el);
        if (on_epoch) on_epoch(epoch, el);
    }

    if (!cfg.train_denoiser &&
        checkpoint::params_sha256(d.params()) != denoiser_hash_before)
        throw IntegrityError("stage-2 training modified the frozen denoiser");
    return log;
}

/// Plain stage-2: only the adapter learns; the denoiser hash is verified
/// unchanged (unless the one-stage ablation switch is on).
template <typename T>
std::vector<diffusion::DiffEpochLog> train_stage2(
    Denoiser<T>& d, Adapter<T>& adapter, const std::vector<AdapterTrainSample<T>>& pairs,
    const Stage2Config& cfg,
    const std::function<void(int, const diffusion::DiffEpochLog&)>& on_epoch = nullptr) {
    if (pairs.empty()) throw ConfigError("train_stage2: empty pair dataset");
    auto provider = [&pairs](int) {
        std::vector<const AdapterTrainSample<T>*> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) out.push_back(&p);
        return out;
    };
    return adapter_training_run<T>(d, adapter, provider, cfg, on_epoch);
}

// ---------------------------------------------------------------------------
// Reference-view generation
// ---------------------------------------------------------------------------

struct SamplingConfig {
    int steps = diffusion::kDefaultDdimSteps;
    std::uint64_t seed = 0;
    double low = 0.3, high = 0.7, noise_sigma = 1.0;
};

struct BoxEdits {
    std::vector<geometry::ObjectBox> add;  // reference-frame boxes
    std::vector<int> remove_indices;
};

/// Frozen generation stack: everything needed to run the conditioned
/// sampler in one domain.
template <typename T>
struct GenerationStack {
    Denoiser<T>* denoiser = nullptr;
    Adapter<T>* adapter = nullptr;  // may be null for unconditional sampling
    codec::CodecNet<T>* cloud_codec = nullptr;
    codec::CodecNet<T>* map_codec = nullptr;
};

/// Unconditional (stage-1) generation from an object map.
template <typename T>
PointCloud generate_from_map(GenerationStack<T>& stack, const bevrep::ObjectMap& object_map,
                             const SamplingConfig& cfg, const std::string& frame = "generated",
                             bevrep::LogitGrid* logits_out = nullptr) {
    const DiffusionSchedule schedule = diffusion::make_schedule(stack.denoiser->schedule_T);
    const codec::LatentMap<T> y = codec::encode(*stack.map_codec, object_map);
    codec::LatentMap<T> lat =
        diffusion::ddim_sample(*stack.denoiser, y.data, cfg.steps, cfg.seed, schedule);
    auto [zq, qi] = codec::quantize(stack.cloud_codec->codebook, lat);
    const bevrep::LogitGrid logits = codec::decode(*stack.cloud_codec, zq);
    if (logits_out) *logits_out = logits;
    return bevrep::postprocess(logits, cfg.low, cfg.high, cfg.noise_sigma,
                               hash64(cfg.seed, std::uint64_t{0x9057}), frame);
}

struct GeneratedReference {
    PointCloud cloud;          // reference sensor frame
    bevrep::ObjectMap y_used;  // the object map actually conditioned on
};

/// Full conditioned pipeline: transform ego data into the reference frame,
/// apply box edits, rasterize the condition, encode, sample with adapter
/// control, decode, post-process.
template <typename T>
GeneratedReference generate_reference(GenerationStack<T>& stack, const PointCloud& ego_cloud,
                                      const geometry::AgentPose& ego_pose,
                                      const geometry::AgentPose& ref_pose,
                                      const std::vector<geometry::ObjectBox>& boxes_ego_frame,
                                      const BoxEdits& edits, const SamplingConfig& cfg,
                                      bevrep::LogitGrid* logits_out = nullptr) {
    if (!stack.adapter) throw DependencyError("generate_reference: no trained adapter in stack");
    const bevrep::GridGeometry& grid = stack.cloud_codec->cfg.geometry;

    // semantic condition: ego-frame boxes re-expressed at the reference, edited
    const geometry::FrameTransform ego_to_world =
        geometry::pose_to_parent(ego_pose, "ego", "world");
    const geometry::FrameTransform world_to_ref =
        geometry::pose_to_parent(ref_pose, "reference", "world").inverse();
    const auto boxes_ref = geometry::transform_boxes(
        geometry::transform_boxes(boxes_ego_frame, ego_to_world), world_to_ref);
    const auto boxes_used = geometry::edit_boxes(boxes_ref, edits.add, edits.remove_indices);
    const bevrep::ObjectMap y_map = bevrep::rasterize_boxes(boxes_used, grid);

    // grounding condition: ego cloud in the reference frame
    const PointCloud cloud_ref = geometry::ego_to_reference(ego_cloud, ego_pose, ref_pose);
    const bevrep::OccupancyGrid ego_grid = bevrep::voxelize(cloud_ref, grid).grid;
    codec::LatentMap<T> ego_latent = codec::encode(*stack.cloud_codec, ego_grid);
    ego_latent.data *= static_cast<T>(1.0 / stack.denoiser->x_scale);
    const AdapterFeatures<T> control = stack.adapter->forward(ego_latent.data);

    const DiffusionSchedule schedule = diffusion::make_schedule(stack.denoiser->schedule_T);
    const codec::LatentMap<T> y = codec::encode(*stack.map_codec, y_map);
    codec::LatentMap<T> lat =
        diffusion::ddim_sample(*stack.denoiser, y.data, cfg.steps, cfg.seed, schedule, &control);
    auto [zq, qi] = codec::quantize(stack.cloud_codec->codebook, lat);
    const bevrep::LogitGrid logits = codec::decode(*stack.cloud_codec, zq);
    if (logits_out) *logits_out = logits;
    PointCloud out = bevrep::postprocess(logits, cfg.low, cfg.high, cfg.noise_sigma,
                                         hash64(cfg.seed, std::uint64_t{0x9057}), "reference");
    return {std::move(out), y_map};
}

// ---------------------------------------------------------------------------
// Target-domain enhancement
// ---------------------------------------------------------------------------

/// A target-domain single-agent scene prepared for enhancement.
template <typename T>
struct EnhanceScene {
    PointCloud ego_cloud;  // ego sensor frame
    geometry::AgentPose ego_pose;
    std::vector<geometry::ObjectBox> boxes_world;
    Tensor<T> x_latent;    // encoded real cloud (the target of stream a)
    Tensor<T> y_latent;    // encoded object map at the ego view
    Tensor<T> ego_latent;  // encoded real ego grid (conditioning of stream b)
};

struct EnhanceConfig {
    Stage2Config base;
    int ratio_dummy = 1;   // stream (a): dummy-ego target samples
    int ratio_pseudo = 1;  // stream (b): self-training pseudo tuples
    int ratio_source = 1;  // stream (c): source pairs
    int pseudo_steps = 50;
    double pseudo_low = 0.3, pseudo_high = 0.7, pseudo_sigma = 1.0;
};

/// Reference pose for self-training: mounted on a labeled box, oriented
/// with it (sensor z from the scene's sensors).
inline geometry::AgentPose reference_pose_from_box(const geometry::ObjectBox& box,
                                                   double sensor_height) {
    geometry::AgentPose pose;
    pose.position = {box.center[0], box.center[1], sensor_height};
    pose.yaw = box.yaw;
    return pose;
}

/// Fine-tunes the adapter with the three enhancement streams. With dummy
/// and pseudo ratios zero this reduces to plain stage-2 on the source
/// pairs, seed for seed.
template <typename T>
std::vector<diffusion::DiffEpochLog> enhance_target(
    GenerationStack<T>& stack, std::vector<EnhanceScene<T>>& target_scenes,
    const std::vector<AdapterTrainSample<T>>& source_pairs, const EnhanceConfig& cfg,
    const std::function<void(int, const diffusion::DiffEpochLog&)>& on_epoch = nullptr) {
    Denoiser<T>& d = *stack.denoiser;
    Adapter<T>& adapter = *stack.adapter;
    codec::CodecNet<T>& cloud_codec = *stack.cloud_codec;

    if ((cfg.ratio_dummy > 0 || cfg.ratio_pseudo > 0) && target_scenes.empty())
        throw ConfigError("enhance_target: target streams enabled but no target scenes given");

    // stream (a): the dummy ego is an encoded all-zero grid, not a zero latent
    Tensor<T> dummy_latent;
    if (cfg.ratio_dummy > 0) {
        const bevrep::OccupancyGrid zero_grid(cloud_codec.cfg.geometry);
        dummy_latent = codec::encode(cloud_codec, zero_grid).data;
    }

    std::vector<AdapterTrainSample<T>> dummy_samples;
    if (cfg.ratio_dummy > 0)
        for (const auto& scene : target_scenes)
            dummy_samples.push_back({scene.x_latent, scene.y_latent, dummy_latent});

    std::vector<AdapterTrainSample<T>> pseudo_samples;  // regenerated per epoch

    auto provider = [&](int epoch) {
        if (cfg.ratio_pseudo > 0) {
            // self-training: one pseudo cloud per scene per epoch, at a
            // reference pose sampled from the labeled boxes
            pseudo_samples.clear();
            for (std::size_t i = 0; i < target_scenes.size(); ++i) {
                EnhanceScene<T>& scene = target_scenes[i];
                if (scene.boxes_world.empty())
                    throw ConfigError("enhance_target: self-training requires labeled boxes");
                const std::uint64_t scene_seed =
                    hash64(cfg.base.seed, static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(i));
                const std::size_t pick = static_cast<std::size_t>(
                    hash64(scene_seed, std::uint64_t{0xB0}) % scene.boxes_world.size());
                const geometry::AgentPose ref_pose = reference_pose_from_box(
                    scene.boxes_world[pick], scene.ego_pose.position[2]);

                // boxes in the ego frame feed the shared generation pipeline
                const geometry::FrameTransform world_to_ego =
                    geometry::pose_to_parent(scene.ego_pose, "ego", "world").inverse();
                const auto boxes_ego = geometry::transform_boxes(scene.boxes_world, world_to_ego);

                SamplingConfig sampling;
                sampling.steps = cfg.pseudo_steps;
                sampling.seed = scene_seed;
                sampling.low = cfg.pseudo_low;
                sampling.high = cfg.pseudo_high;
                sampling.noise_sigma = cfg.pseudo_sigma;
                const GeneratedReference gen = generate_reference(
                    stack, scene.ego_cloud, scene.ego_pose, ref_pose, boxes_ego, {}, sampling);

                const bevrep::OccupancyGrid pseudo_grid =
                    bevrep::voxelize(gen.cloud, cloud_codec.cfg.geometry).grid;
                AdapterTrainSample<T> s;
                s.x_latent = codec::encode(cloud_codec, pseudo_grid).data;
                s.y_latent = codec::encode(*stack.map_codec, gen.y_used).data;
                s.ego_latent = scene.ego_latent;
                pseudo_samples.push_back(std::move(s));
            }
        }
        std::vector<const AdapterTrainSample<T>*> out;
        for (int r = 0; r < cfg.ratio_dummy; ++r)
            for (const auto& s : dummy_samples) out.push_back(&s);
        for (int r = 0; r < cfg.ratio_pseudo; ++r)
            for (const auto& s : pseudo_samples) out.push_back(&s);
        for (int r = 0; r < cfg.ratio_source; ++r)
            for (const auto& s : source_pairs) out.push_back(&s);
        return out;
    };

    const std::string codec_hash_before = checkpoint::params_sha256(cloud_codec.params());
    auto log = adapter_training_run<T>(d, adapter, provider, cfg.base, on_epoch);
    if (checkpoint::params_sha256(cloud_codec.params()) != codec_hash_before)
        throw IntegrityError("enhance_target modified the frozen codec");
    return log;
}

}  // namespace typlab::control
