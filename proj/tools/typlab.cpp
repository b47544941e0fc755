// typlab: desk-scale viewpoint-transfer LiDAR generation pipeline.
//
// Subcommands cover the full recipe: simulate datasets, train the VQ
// codecs, train the object-conditioned latent diffusion model, adapt the
// source-domain codec adversarially, ground generation on the ego view with
// an adapter, enhance in the target domain, generate reference-view clouds,
// and evaluate.

#include <CLI11.hpp>
#include <iostream>

#include "typlab/pipeline.hpp"
#include "typlab/pipeline_eval.hpp"

using namespace typlab;
namespace pl = typlab::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_file, "config file (sectioned key = value)");
    cmd->add_option("--set", c.overrides, "override a config key: section.key=value")
        ->take_all();
    cmd->add_option_function<std::uint64_t>(
           "--seed",
           [&c](const std::uint64_t& v) {
               c.seed = v;
               c.seed_set = true;
           },
           "root seed (overrides run.seed)");
}

pl::PipelineConfig resolve_config(const CommonOpts& c) {
    pl::PipelineConfig cfg =
        c.config_file.empty() ? pl::PipelineConfig{} : pl::load_config(c.config_file);
    for (const auto& o : c.overrides) pl::apply_override(cfg, o);
    if (c.seed_set) cfg.seed = c.seed;
    return cfg;
}

geometry::AgentPose parse_pose(const std::string& csv, double default_yaw) {
    std::vector<double> v;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) v.push_back(std::stod(item));
    if (v.size() != 3 && v.size() != 4)
        throw ArgumentError("--ref-pose expects x,y,z[,yaw]");
    geometry::AgentPose pose;
    pose.position = {v[0], v[1], v[2]};
    pose.yaw = wrap_angle(v.size() == 4 ? v[3] : default_yaw);
    return pose;
}

geometry::ObjectBox parse_box(const std::string& csv) {
    std::vector<double> v;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) v.push_back(std::stod(item));
    if (v.size() != 7) throw ArgumentError("--add-box expects cx,cy,cz,l,w,h,yaw");
    geometry::ObjectBox b;
    b.center = {v[0], v[1], v[2]};
    b.size = {v[3], v[4], v[5]};
    b.yaw = wrap_angle(v[6]);
    geometry::validate(b);
    return b;
}

std::string cloud_to_xyz(const PointCloud& cloud) {
    std::string out;
    for (const auto& p : cloud.points)
        for (float v : p) io::put_f32_le(out, v);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"typlab: viewpoint-transfer LiDAR generation at desk scale"};
    app.require_subcommand(1);

    // ---- gen-data ----
    CommonOpts gd_c;
    std::string gd_domain = "target", gd_out;
    int gd_scenes = -1;
    auto* gd = app.add_subcommand("gen-data", "simulate a dataset for one domain flavor");
    add_common(gd, gd_c);
    gd->add_option("--domain", gd_domain, "target | source")
        ->check(CLI::IsMember({"target", "source"}));
    gd->add_option("--out", gd_out, "dataset directory");
    gd->add_option("--scenes", gd_scenes, "scene count (default from config)");

    // ---- train-codec ----
    CommonOpts tc_c;
    std::string tc_data, tc_role = "occupancy", tc_domain = "target", tc_out;
    auto* tc = app.add_subcommand("train-codec", "train a VQ codec on the train split");
    add_common(tc, tc_c);
    tc->add_option("--data", tc_data, "dataset directory")->required();
    tc->add_option("--role", tc_role, "occupancy | objectmap")
        ->check(CLI::IsMember({"occupancy", "objectmap"}));
    tc->add_option("--domain", tc_domain, "target | source");
    tc->add_option("--out", tc_out, "checkpoint path");

    // ---- train-stage1 ----
    CommonOpts s1_c;
    std::string s1_data, s1_cx, s1_cy, s1_out;
    auto* s1 = app.add_subcommand("train-stage1",
                                  "train the object-conditioned latent diffusion model");
    add_common(s1, s1_c);
    s1->add_option("--data", s1_data, "single-agent dataset directory")->required();
    s1->add_option("--codec-x", s1_cx, "occupancy codec checkpoint");
    s1->add_option("--codec-y", s1_cy, "object-map codec checkpoint");
    s1->add_option("--out", s1_out, "denoiser checkpoint path");

    // ---- adapt ----
    CommonOpts ad_c;
    std::string ad_target_codec, ad_source_data, ad_target_data, ad_out_codec, ad_out_disc;
    auto* ad = app.add_subcommand("adapt", "adversarially adapt a source-domain codec");
    add_common(ad, ad_c);
    ad->add_option("--target-codec", ad_target_codec, "frozen target codec checkpoint");
    ad->add_option("--source-data", ad_source_data, "source dataset directory")->required();
    ad->add_option("--target-data", ad_target_data, "target dataset directory")->required();
    ad->add_option("--out-codec", ad_out_codec, "adapted source codec path");
    ad->add_option("--out-disc", ad_out_disc, "discriminator path");

    // ---- train-stage2 ----
    CommonOpts s2_c;
    std::string s2_pairs, s2_cx, s2_cy, s2_denoiser, s2_out;
    bool s2_one_stage = false;
    auto* s2 = app.add_subcommand("train-stage2", "train the grounding adapter on pair data");
    add_common(s2, s2_c);
    s2->add_option("--pairs", s2_pairs, "pair dataset directory")->required();
    s2->add_option("--codec-x", s2_cx, "cloud codec for encoding (target or adapted source)");
    s2->add_option("--codec-y", s2_cy, "object-map codec checkpoint");
    s2->add_option("--denoiser", s2_denoiser, "frozen stage-1 denoiser checkpoint");
    s2->add_option("--out", s2_out, "adapter checkpoint path");
    s2->add_flag("--one-stage", s2_one_stage,
                 "ablation: train denoiser and adapter jointly from scratch");

    // ---- enhance ----
    CommonOpts en_c;
    std::string en_adapter, en_target_data, en_pairs, en_cx, en_cy, en_denoiser, en_out;
    int en_max_scenes = 60;
    auto* en = app.add_subcommand("enhance", "fine-tune the adapter in the target domain");
    add_common(en, en_c);
    en->add_option("--adapter", en_adapter, "stage-2 adapter checkpoint");
    en->add_option("--target-data", en_target_data, "target single-agent dataset")->required();
    en->add_option("--pairs", en_pairs, "source pair dataset")->required();
    en->add_option("--codec-x", en_cx, "target cloud codec");
    en->add_option("--codec-y", en_cy, "object-map codec");
    en->add_option("--denoiser", en_denoiser, "frozen denoiser");
    en->add_option("--out", en_out, "enhanced adapter path");
    en->add_option("--max-scenes", en_max_scenes, "cap on target scenes used");

    // ---- generate ----
    CommonOpts gn_c;
    std::string gn_data, gn_scene, gn_split = "test", gn_cx, gn_cy, gn_denoiser, gn_adapter;
    std::string gn_ref_pose, gn_out_cloud, gn_out_map;
    int gn_agent = 0, gn_ref_agent = 1, gn_steps = -1;
    std::uint64_t gn_sample_seed = 0;
    std::vector<std::string> gn_add_boxes;
    std::vector<int> gn_remove;
    auto* gn = app.add_subcommand("generate", "generate a reference-view cloud from an ego view");
    add_common(gn, gn_c);
    gn->add_option("--data", gn_data, "dataset directory")->required();
    gn->add_option("--scene", gn_scene, "scene id (e.g. scene_000481)")->required();
    gn->add_option("--split", gn_split, "dataset split of the scene");
    gn->add_option("--agent", gn_agent, "ego agent index");
    gn->add_option("--ref-agent", gn_ref_agent, "reference agent index (pose source)");
    gn->add_option("--ref-pose", gn_ref_pose,
                   "explicit reference pose x,y,z[,yaw]; yaw defaults to the ego yaw");
    gn->add_option("--add-box", gn_add_boxes, "add a reference-frame box cx,cy,cz,l,w,h,yaw")
        ->take_all();
    gn->add_option("--remove-box-index", gn_remove, "remove a box by index")->take_all();
    gn->add_option("--steps", gn_steps, "DDIM steps (default sample.steps = 200)");
    gn->add_option("--sample-seed", gn_sample_seed, "sampling seed");
    gn->add_option("--codec-x", gn_cx, "cloud codec");
    gn->add_option("--codec-y", gn_cy, "object-map codec");
    gn->add_option("--denoiser", gn_denoiser, "denoiser");
    gn->add_option("--adapter", gn_adapter, "adapter");
    gn->add_option("--out-cloud", gn_out_cloud, "output .xyz (float32 LE)");
    gn->add_option("--out-map", gn_out_map, "output object map (TYPG)");

    // ---- eval ----
    CommonOpts ev_c;
    std::string ev_suite = "all", ev_data, ev_pairs, ev_source_data, ev_out;
    std::string ev_cx, ev_cy, ev_denoiser, ev_adapter, ev_src_codec;
    int ev_max_scenes = 0;
    bool ev_images = false;
    auto* ev = app.add_subcommand("eval", "compute metrics and write a JSON report");
    add_common(ev, ev_c);
    ev->add_option("--suite", ev_suite, "codec | stage1 | conditioned | adapt | all")
        ->check(CLI::IsMember({"codec", "stage1", "conditioned", "adapt", "all"}));
    ev->add_option("--data", ev_data, "target dataset directory");
    ev->add_option("--pairs", ev_pairs, "pair dataset directory");
    ev->add_option("--source-data", ev_source_data, "source dataset directory");
    ev->add_option("--codec-x", ev_cx, "cloud codec");
    ev->add_option("--codec-y", ev_cy, "object-map codec");
    ev->add_option("--denoiser", ev_denoiser, "denoiser");
    ev->add_option("--adapter", ev_adapter, "adapter");
    ev->add_option("--source-codec", ev_src_codec, "adapted source codec");
    ev->add_option("--out", ev_out, "report JSON path");
    ev->add_option("--max-scenes", ev_max_scenes, "cap on evaluated scenes (0 = all)");
    ev->add_flag("--images", ev_images, "also render BEV comparison images");

    // ---- report ----
    CommonOpts rp_c;
    std::vector<std::string> rp_inputs;
    std::string rp_out = "report";
    bool rp_force = false;
    auto* rp = app.add_subcommand("report", "aggregate eval JSONs into a summary");
    add_common(rp, rp_c);
    rp->add_option("--inputs", rp_inputs, "eval JSON files")->required()->take_all();
    rp->add_option("--out", rp_out, "output directory");
    rp->add_flag("--force", rp_force, "allow mixing mismatched config hashes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const fs::path root = pl::artifact_root();

        if (gd->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(gd_c);
            const int scenes =
                gd_scenes > 0 ? gd_scenes
                              : (gd_domain == "target" ? cfg.scenes : cfg.source_scenes);
            const fs::path out = gd_out.empty() ? root / "data" / gd_domain : fs::path(gd_out);
            const auto manifest = pl::run_gen_data(cfg, gd_domain, scenes, out);
            std::cout << "wrote " << manifest.entries.size() << " scenes to " << out.string()
                      << " (config " << pl::config_hash(cfg) << ")\n";
        } else if (tc->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(tc_c);
            const fs::path out =
                tc_out.empty() ? root / (tc_role == "occupancy" ? "codec_x.typc" : "codec_y.typc")
                               : fs::path(tc_out);
            std::vector<codec::EpochLog> log;
            pl::run_train_codec(cfg, tc_data, tc_role, tc_domain, out, &log);
            std::cout << "codec[" << tc_role << "] trained: final loss " << log.back().total
                      << " -> " << out.string() << "\n";
        } else if (s1->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(s1_c);
            auto codec_x = pl::load_codec(
                s1_cx.empty() ? root / "codec_x.typc" : fs::path(s1_cx), "train-codec");
            auto codec_y = pl::load_codec(
                s1_cy.empty() ? root / "codec_y.typc" : fs::path(s1_cy),
                "train-codec --role objectmap");
            const fs::path out = s1_out.empty() ? root / "denoiser.typc" : fs::path(s1_out);
            std::vector<diffusion::DiffEpochLog> log;
            pl::run_train_stage1(cfg, s1_data, codec_x, codec_y, out, &log);
            std::cout << "stage-1 trained: loss " << log.front().loss << " -> "
                      << log.back().loss << " -> " << out.string() << "\n";
        } else if (ad->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(ad_c);
            auto target_codec = pl::load_codec(
                ad_target_codec.empty() ? root / "codec_x.typc" : fs::path(ad_target_codec),
                "train-codec");
            const fs::path out_codec =
                ad_out_codec.empty() ? root / "codec_src.typc" : fs::path(ad_out_codec);
            const fs::path out_disc =
                ad_out_disc.empty() ? root / "disc.typc" : fs::path(ad_out_disc);
            std::vector<adapt::AdaptEpochLog> log;
            pl::run_adapt(cfg, target_codec, ad_source_data, ad_target_data, out_codec, out_disc,
                          &log);
            std::cout << "adaptation done: disc loss " << log.back().loss_d << ", rec "
                      << log.back().loss_rec << " -> " << out_codec.string() << "\n";
        } else if (s2->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(s2_c);
            auto codec_x = pl::load_codec(
                s2_cx.empty() ? root / "codec_x.typc" : fs::path(s2_cx), "train-codec");
            auto codec_y = pl::load_codec(
                s2_cy.empty() ? root / "codec_y.typc" : fs::path(s2_cy),
                "train-codec --role objectmap");
            diffusion::Denoiser<float> denoiser =
                s2_one_stage
                    ? [&] {
                          diffusion::Denoiser<float> d(pl::unet_config(cfg));
                          Rng rng(hash64(cfg.seed, std::uint64_t{0x57A6E1}));
                          d.unet.init(rng);
                          d.schedule_T = cfg.s1_T;
                          return d;
                      }()
                    : pl::load_denoiser(
                          s2_denoiser.empty() ? root / "denoiser.typc" : fs::path(s2_denoiser),
                          "train-stage1");
            const fs::path out = s2_out.empty() ? root / "adapter.typc" : fs::path(s2_out);
            std::vector<diffusion::DiffEpochLog> log;
            pl::run_train_stage2(cfg, s2_pairs, codec_x, codec_y, denoiser, out, s2_one_stage,
                                 &log);
            std::cout << "stage-2" << (s2_one_stage ? " (one-stage ablation)" : "")
                      << " trained: loss " << log.back().loss << " -> " << out.string() << "\n";
        } else if (en->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(en_c);
            auto codec_x = pl::load_codec(
                en_cx.empty() ? root / "codec_x.typc" : fs::path(en_cx), "train-codec");
            auto codec_y = pl::load_codec(
                en_cy.empty() ? root / "codec_y.typc" : fs::path(en_cy),
                "train-codec --role objectmap");
            auto denoiser = pl::load_denoiser(
                en_denoiser.empty() ? root / "denoiser.typc" : fs::path(en_denoiser),
                "train-stage1");
            auto adapter = pl::load_adapter(
                en_adapter.empty() ? root / "adapter.typc" : fs::path(en_adapter), "train-stage2");

            const bevrep::GridGeometry g = pl::grid_geometry(cfg);
            auto target_samples = dataset::read_split(en_target_data, "train");
            if (static_cast<int>(target_samples.size()) > en_max_scenes)
                target_samples.resize(static_cast<std::size_t>(en_max_scenes));
            std::vector<control::EnhanceScene<float>> scenes;
            for (const auto& s : target_samples) {
                control::EnhanceScene<float> sc;
                sc.ego_cloud = s.clouds[0];
                sc.ego_pose = s.spec.agent_poses[0];
                sc.boxes_world = s.boxes_world;
                const pl::SingleView v = pl::single_view(s, g);
                sc.x_latent = codec::encode(codec_x, v.grid).data;
                sc.y_latent = codec::encode(codec_y, v.map).data;
                sc.ego_latent = sc.x_latent;
                scenes.push_back(std::move(sc));
            }
            const auto pair_samples = dataset::read_split(en_pairs, "train");
            const auto pairs = pl::build_pairs(const_cast<std::vector<scenesim::SceneSample>&>(
                                                   pair_samples),
                                               codec_x, codec_y, g);
            control::GenerationStack<float> stack{&denoiser, &adapter, &codec_x, &codec_y};
            control::EnhanceConfig ecfg;
            ecfg.base.epochs = cfg.en_epochs;
            ecfg.base.batch_size = cfg.s2_batch;
            ecfg.base.lr = cfg.s2_lr;
            ecfg.base.seed = hash64(cfg.seed, std::uint64_t{0x7EA5});
            ecfg.ratio_dummy = cfg.en_ratio_dummy;
            ecfg.ratio_pseudo = cfg.en_ratio_pseudo;
            ecfg.ratio_source = cfg.en_ratio_source;
            ecfg.pseudo_steps = cfg.en_pseudo_steps;
            ecfg.pseudo_low = cfg.post_low;
            ecfg.pseudo_high = cfg.post_high;
            ecfg.pseudo_sigma = cfg.post_sigma;
            const auto log = control::enhance_target<float>(stack, scenes, pairs, ecfg);
            const fs::path out =
                en_out.empty() ? root / "adapter_enhanced.typc" : fs::path(en_out);
            pl::save_adapter(out, adapter, pl::config_hash(cfg));
            std::cout << "enhancement done: loss " << log.back().loss << " -> " << out.string()
                      << "\n";
        } else if (gn->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(gn_c);
            auto codec_x = pl::load_codec(
                gn_cx.empty() ? root / "codec_x.typc" : fs::path(gn_cx), "train-codec");
            auto codec_y = pl::load_codec(
                gn_cy.empty() ? root / "codec_y.typc" : fs::path(gn_cy),
                "train-codec --role objectmap");
            auto denoiser = pl::load_denoiser(
                gn_denoiser.empty() ? root / "denoiser.typc" : fs::path(gn_denoiser),
                "train-stage1");
            auto adapter = pl::load_adapter(
                gn_adapter.empty() ? root / "adapter.typc" : fs::path(gn_adapter), "train-stage2");

            const auto manifest = dataset::read_manifest(gn_data);
            const dataset::ManifestEntry* entry = nullptr;
            for (const auto& e : manifest.entries)
                if (e.scene_id == gn_scene && (gn_split.empty() || e.split == gn_split)) entry = &e;
            if (!entry)
                throw DependencyError("scene " + gn_scene + " not found in " + gn_data +
                                      " (run gen-data first)");
            const auto sample = dataset::read_sample(gn_data, *entry);
            if (gn_agent < 0 || gn_agent >= static_cast<int>(sample.clouds.size()))
                throw ArgumentError("--agent out of range");
            const auto& ego_pose = sample.spec.agent_poses[static_cast<std::size_t>(gn_agent)];
            geometry::AgentPose ref_pose;
            if (!gn_ref_pose.empty())
                ref_pose = parse_pose(gn_ref_pose, ego_pose.yaw);
            else if (gn_ref_agent >= 0 &&
                     gn_ref_agent < static_cast<int>(sample.spec.agent_poses.size()))
                ref_pose = sample.spec.agent_poses[static_cast<std::size_t>(gn_ref_agent)];
            else
                throw ArgumentError("--ref-agent out of range and no --ref-pose given");

            control::BoxEdits edits;
            for (const auto& b : gn_add_boxes) edits.add.push_back(parse_box(b));
            edits.remove_indices = gn_remove;

            control::SamplingConfig sc;
            sc.steps = gn_steps > 0 ? gn_steps : cfg.sample_steps;
            sc.seed = gn_sample_seed;
            sc.low = cfg.post_low;
            sc.high = cfg.post_high;
            sc.noise_sigma = cfg.post_sigma;

            control::GenerationStack<float> stack{&denoiser, &adapter, &codec_x, &codec_y};
            const auto boxes_ego = pl::boxes_in_agent_frame(sample.boxes_world, ego_pose);
            const auto gen = control::generate_reference(
                stack, sample.clouds[static_cast<std::size_t>(gn_agent)], ego_pose, ref_pose,
                boxes_ego, edits, sc);

            const fs::path out_cloud =
                gn_out_cloud.empty() ? root / "generated.xyz" : fs::path(gn_out_cloud);
            io::atomic_write_file(out_cloud, cloud_to_xyz(gen.cloud));
            if (!gn_out_map.empty()) {
                bevrep::OccupancyGrid map_grid(gen.y_used.geometry);
                map_grid.geometry.C = 1;
                map_grid.data.assign(gen.y_used.data.begin(), gen.y_used.data.end());
                bevrep::write_grid(gn_out_map, map_grid);
            }
            std::cout << "generated " << gen.cloud.points.size() << " points -> "
                      << out_cloud.string() << "\n";
        } else if (ev->parsed()) {
            const pl::PipelineConfig cfg = resolve_config(ev_c);
            json report;
            report["config_hash"] = pl::config_hash(cfg);
            report["suite"] = ev_suite;
            json& metrics = report["metrics"];
            metrics = json::object();
            const fs::path out = ev_out.empty() ? root / "eval" / (ev_suite + ".json")
                                                : fs::path(ev_out);

            const bool want_codec = ev_suite == "codec" || ev_suite == "all";
            const bool want_stage1 = ev_suite == "stage1" || ev_suite == "all";
            const bool want_cond = ev_suite == "conditioned" || ev_suite == "all";
            const bool want_adapt = ev_suite == "adapt" || ev_suite == "all";

            std::optional<codec::CodecNet<float>> codec_x, codec_y;
            auto need_codec_x = [&] {
                if (!codec_x)
                    codec_x = pl::load_codec(
                        ev_cx.empty() ? root / "codec_x.typc" : fs::path(ev_cx), "train-codec");
            };
            auto need_codecs = [&] {
                need_codec_x();
                if (!codec_y)
                    codec_y = pl::load_codec(
                        ev_cy.empty() ? root / "codec_y.typc" : fs::path(ev_cy),
                        "train-codec --role objectmap");
            };

            if (want_codec) {
                need_codec_x();
                if (ev_data.empty()) throw ArgumentError("eval codec needs --data");
                const auto d = pl::eval_codec_diagnostics(cfg, *codec_x, ev_data);
                metrics["codec_iou"] = d.iou;
                metrics["codec_iou_unquantized"] = d.iou_unquantized;
                metrics["codec_codes_used"] = d.codes_used;
                metrics["codec_quant_err"] = d.mean_quant_err;
            }
            if (want_stage1) {
                need_codecs();
                if (ev_data.empty()) throw ArgumentError("eval stage1 needs --data");
                auto denoiser = pl::load_denoiser(
                    ev_denoiser.empty() ? root / "denoiser.typc" : fs::path(ev_denoiser),
                    "train-stage1");
                const auto s1_eval =
                    pl::eval_stage1(cfg, denoiser, *codec_x, *codec_y, ev_data, ev_max_scenes);
                metrics["stage1_jsd"] = s1_eval.jsd;
                metrics["stage1_mmd"] = s1_eval.mmd;
                metrics["stage1_jsd_untrained"] = s1_eval.jsd_untrained;
                if (ev_images) {
                    const bevrep::GridGeometry g = pl::grid_geometry(cfg);
                    auto real = dataset::read_split(ev_data, "test");
                    std::vector<PointCloud> real_clouds;
                    for (const auto& s : real) real_clouds.push_back(s.clouds[0]);
                    pl::write_pgm(out.parent_path() / "stage1_generated.pgm",
                                  evalmetrics::bev_histogram(s1_eval.generated, g.x_min, g.x_max,
                                                             g.y_min, g.y_max));
                    pl::write_pgm(out.parent_path() / "stage1_real.pgm",
                                  evalmetrics::bev_histogram(real_clouds, g.x_min, g.x_max,
                                                             g.y_min, g.y_max));
                }
            }
            if (want_cond) {
                need_codecs();
                if (ev_pairs.empty()) throw ArgumentError("eval conditioned needs --pairs");
                auto denoiser = pl::load_denoiser(
                    ev_denoiser.empty() ? root / "denoiser.typc" : fs::path(ev_denoiser),
                    "train-stage1");
                auto adapter = pl::load_adapter(
                    ev_adapter.empty() ? root / "adapter.typc" : fs::path(ev_adapter),
                    "train-stage2");
                control::GenerationStack<float> stack{&denoiser, &adapter, &*codec_x, &*codec_y};
                pl::ConditionedEvalOptions opt;
                opt.max_scenes = ev_max_scenes;
                const auto evals = pl::eval_conditioned(cfg, stack, ev_pairs, opt);
                double iou_c = 0, iou_u = 0, cov_e = 0, cov_g = 0, cov_o = 0;
                int n_iou = 0, n_gap = 0, n_edit = 0, remove_ok = 0, add_ok = 0;
                for (const auto& e : evals) {
                    if (e.iou_conditioned && e.iou_unconditional) {
                        iou_c += *e.iou_conditioned;
                        iou_u += *e.iou_unconditional;
                        ++n_iou;
                    }
                    if (e.has_gap_box) {
                        cov_e += e.cov_ego;
                        cov_g += e.cov_fused_gen;
                        cov_o += e.cov_fused_oracle;
                        ++n_gap;
                    }
                    ++n_edit;
                    remove_ok += e.remove_effect;
                    add_ok += e.add_effect;
                }
                metrics["conditioned_iou"] = n_iou ? iou_c / n_iou : 0.0;
                metrics["unconditional_iou"] = n_iou ? iou_u / n_iou : 0.0;
                metrics["conditioned_jsd"] = pl::conditioned_jsd(cfg, evals);
                metrics["coverage_ego"] = n_gap ? cov_e / n_gap : 0.0;
                metrics["coverage_fused_generated"] = n_gap ? cov_g / n_gap : 0.0;
                metrics["coverage_fused_oracle"] = n_gap ? cov_o / n_gap : 0.0;
                metrics["edit_remove_rate"] = n_edit ? static_cast<double>(remove_ok) / n_edit : 0.0;
                metrics["edit_add_rate"] = n_edit ? static_cast<double>(add_ok) / n_edit : 0.0;
            }
            if (want_adapt) {
                need_codecs();
                if (ev_source_data.empty() || ev_data.empty())
                    throw ArgumentError("eval adapt needs --source-data and --data");
                auto source_codec = pl::load_codec(
                    ev_src_codec.empty() ? root / "codec_src.typc" : fs::path(ev_src_codec),
                    "adapt");
                const auto ae = pl::eval_adaptation(cfg, *codec_x, source_codec, ev_source_data,
                                                    ev_data, ev_max_scenes);
                metrics["adapt_jsd_before"] = ae.jsd_before;
                metrics["adapt_jsd_after"] = ae.jsd_after;
                if (ae.has_mmd) {
                    metrics["adapt_mmd_before"] = ae.mmd_before;
                    metrics["adapt_mmd_after"] = ae.mmd_after;
                }
            }

            io::atomic_write_file(out, report.dump(2) + "\n");
            std::cout << "eval[" << ev_suite << "] -> " << out.string() << "\n";
        } else if (rp->parsed()) {
            json summary;
            summary["reports"] = json::array();
            std::string hash;
            for (const auto& file : rp_inputs) {
                if (!fs::exists(file))
                    throw DependencyError("missing eval report " + file + " (run eval first)");
                const json r = json::parse(io::read_file(file));
                const std::string h = r.value("config_hash", "");
                if (hash.empty()) hash = h;
                if (h != hash && !rp_force)
                    throw IntegrityError("config hash mismatch across eval reports (" + hash +
                                         " vs " + h + "); pass --force to combine anyway");
                summary["reports"].push_back(r);
            }
            summary["config_hash"] = hash;
            fs::create_directories(rp_out);
            io::atomic_write_file(fs::path(rp_out) / "summary.json", summary.dump(2) + "\n");

            std::ostringstream table;
            table << "metric                            value\n";
            table << "--------------------------------  ----------\n";
            for (const auto& r : summary["reports"])
                for (auto it = r.at("metrics").begin(); it != r.at("metrics").end(); ++it) {
                    std::ostringstream name;
                    name << it.key();
                    std::string n = name.str();
                    n.resize(32, ' ');
                    table << n << "  " << it.value().dump() << "\n";
                }
            io::atomic_write_file(fs::path(rp_out) / "summary.txt", table.str());
            std::cout << table.str();
        }
        return 0;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
