#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "typlab/adapt.hpp"
#include "typlab/checkpoint.hpp"
#include "typlab/codec.hpp"
#include "typlab/control.hpp"
#include "typlab/dataset.hpp"
#include "typlab/diffusion.hpp"
#include "typlab/evalmetrics.hpp"
#include "typlab/scenesim.hpp"

namespace typlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration: sectioned key = value text, unknown keys rejected, every
// field defaulted, canonical serialization hashed into every artifact.
// ---------------------------------------------------------------------------

struct PipelineConfig {
    // [run]
    std::uint64_t seed = 0;

    // [grid]
    int grid_h = 64, grid_w = 64, grid_c = 8;
    double x_min = -12.8, x_max = 12.8, y_min = -12.8, y_max = 12.8;
    double z_min = -2.0, z_max = 0.0;

    // [data]
    int scenes = 500;
    int source_scenes = 240;
    double train_frac = 0.9;

    // [scene]
    double extent = 12.8;
    int box_min = 3, box_max = 7;
    int wall_min = 1, wall_max = 3;
    int agent_min = 2, agent_max = 2;
    double must_occlude = 0.5;
    int max_attempts = 64;

    // [target_lidar]
    int t_azimuths = 180;
    std::string t_elevations = "-26,-16,-10,-6,-3.5,-2";
    double t_range = 30.0;
    double t_drop_scale = 0.5, t_drop_power = 1.0;
    double t_sensor_height = 1.8;

    // [source_lidar]
    int s_azimuths = 120;
    std::string s_elevations = "-22,-13,-7,-3";
    double s_range = 30.0;
    double s_drop_scale = 0.7, s_drop_power = 1.0;
    double s_sensor_height = 1.5;

    // [source_scene] box size distribution of the source flavor
    double s_box_length_min = 5.5, s_box_length_max = 7.5;
    double s_box_width_min = 2.2, s_box_width_max = 2.6;
    double s_box_height_min = 2.0, s_box_height_max = 2.6;

    // [codec]
    int cx_latent = 8, cx_down = 3, cx_width = 16, cx_codebook = 256;
    double cx_beta = 0.25, cx_gamma = 2.0;
    int cx_epochs = 18, cx_batch = 8;
    double cx_lr = 2e-3;

    // [codec_y]
    int cy_latent = 3, cy_down = 3, cy_width = 8, cy_codebook = 64;
    int cy_epochs = 6, cy_batch = 8;
    double cy_lr = 2e-3;

    // [stage1]
    int s1_epochs = 140, s1_batch = 8, s1_T = 1000, s1_temb = 64;
    double s1_lr = 1e-3;
    std::string s1_widths = "32,64,96,128";

    // [stage2]
    int s2_epochs = 70, s2_batch = 8;
    double s2_lr = 1e-3;

    // [adapt]
    int ad_epochs = 12, ad_batch = 6;
    double ad_lr = 1e-3, ad_disc_lr = 2e-4, ad_lambda = 1.0;

    // [enhance]
    int en_epochs = 2, en_ratio_dummy = 1, en_ratio_pseudo = 1, en_ratio_source = 1;
    int en_pseudo_steps = 50;

    // [post]
    double post_low = 0.3, post_high = 0.7, post_sigma = 1.0;

    // [sample]
    int sample_steps = diffusion::kDefaultDdimSteps;
};

namespace cfgdetail {

enum class Kind { Int, Double, U64, Str };

struct Entry {
    const char* key;
    Kind kind;
    void* ptr;
};

inline std::vector<Entry> schema(PipelineConfig& c) {
    return {
        {"run.seed", Kind::U64, &c.seed},
        {"grid.h", Kind::Int, &c.grid_h},
        {"grid.w", Kind::Int, &c.grid_w},
        {"grid.c", Kind::Int, &c.grid_c},
        {"grid.x_min", Kind::Double, &c.x_min},
        {"grid.x_max", Kind::Double, &c.x_max},
        {"grid.y_min", Kind::Double, &c.y_min},
        {"grid.y_max", Kind::Double, &c.y_max},
        {"grid.z_min", Kind::Double, &c.z_min},
        {"grid.z_max", Kind::Double, &c.z_max},
        {"data.scenes", Kind::Int, &c.scenes},
        {"data.source_scenes", Kind::Int, &c.source_scenes},
        {"data.train_frac", Kind::Double, &c.train_frac},
        {"scene.extent", Kind::Double, &c.extent},
        {"scene.box_min", Kind::Int, &c.box_min},
        {"scene.box_max", Kind::Int, &c.box_max},
        {"scene.wall_min", Kind::Int, &c.wall_min},
        {"scene.wall_max", Kind::Int, &c.wall_max},
        {"scene.agent_min", Kind::Int, &c.agent_min},
        {"scene.agent_max", Kind::Int, &c.agent_max},
        {"scene.must_occlude", Kind::Double, &c.must_occlude},
        {"scene.max_attempts", Kind::Int, &c.max_attempts},
        {"target_lidar.azimuths", Kind::Int, &c.t_azimuths},
        {"target_lidar.elevations", Kind::Str, &c.t_elevations},
        {"target_lidar.range", Kind::Double, &c.t_range},
        {"target_lidar.drop_scale", Kind::Double, &c.t_drop_scale},
        {"target_lidar.drop_power", Kind::Double, &c.t_drop_power},
        {"target_lidar.sensor_height", Kind::Double, &c.t_sensor_height},
        {"source_lidar.azimuths", Kind::Int, &c.s_azimuths},
        {"source_lidar.elevations", Kind::Str, &c.s_elevations},
        {"source_lidar.range", Kind::Double, &c.s_range},
        {"source_lidar.drop_scale", Kind::Double, &c.s_drop_scale},
        {"source_lidar.drop_power", Kind::Double, &c.s_drop_power},
        {"source_lidar.sensor_height", Kind::Double, &c.s_sensor_height},
        {"source_scene.box_length_min", Kind::Double, &c.s_box_length_min},
        {"source_scene.box_length_max", Kind::Double, &c.s_box_length_max},
        {"source_scene.box_width_min", Kind::Double, &c.s_box_width_min},
        {"source_scene.box_width_max", Kind::Double, &c.s_box_width_max},
        {"source_scene.box_height_min", Kind::Double, &c.s_box_height_min},
        {"source_scene.box_height_max", Kind::Double, &c.s_box_height_max},
        {"codec.latent_channels", Kind::Int, &c.cx_latent},
        {"codec.n_down", Kind::Int, &c.cx_down},
        {"codec.base_width", Kind::Int, &c.cx_width},
        {"codec.codebook", Kind::Int, &c.cx_codebook},
        {"codec.beta", Kind::Double, &c.cx_beta},
        {"codec.gamma", Kind::Double, &c.cx_gamma},
        {"codec.epochs", Kind::Int, &c.cx_epochs},
        {"codec.batch", Kind::Int, &c.cx_batch},
        {"codec.lr", Kind::Double, &c.cx_lr},
        {"codec_y.latent_channels", Kind::Int, &c.cy_latent},
        {"codec_y.n_down", Kind::Int, &c.cy_down},
        {"codec_y.base_width", Kind::Int, &c.cy_width},
        {"codec_y.codebook", Kind::Int, &c.cy_codebook},
        {"codec_y.epochs", Kind::Int, &c.cy_epochs},
        {"codec_y.batch", Kind::Int, &c.cy_batch},
        {"codec_y.lr", Kind::Double, &c.cy_lr},
        {"stage1.epochs", Kind::Int, &c.s1_epochs},
        {"stage1.batch", Kind::Int, &c.s1_batch},
        {"stage1.T", Kind::Int, &c.s1_T},
        {"stage1.temb", Kind::Int, &c.s1_temb},
        {"stage1.lr", Kind::Double, &c.s1_lr},
        {"stage1.widths", Kind::Str, &c.s1_widths},
        {"stage2.epochs", Kind::Int, &c.s2_epochs},
        {"stage2.batch", Kind::Int, &c.s2_batch},
        {"stage2.lr", Kind::Double, &c.s2_lr},
        {"adapt.epochs", Kind::Int, &c.ad_epochs},
        {"adapt.batch", Kind::Int, &c.ad_batch},
        {"adapt.lr", Kind::Double, &c.ad_lr},
        {"adapt.disc_lr", Kind::Double, &c.ad_disc_lr},
        {"adapt.lambda_src", Kind::Double, &c.ad_lambda},
        {"enhance.epochs", Kind::Int, &c.en_epochs},
        {"enhance.ratio_dummy", Kind::Int, &c.en_ratio_dummy},
        {"enhance.ratio_pseudo", Kind::Int, &c.en_ratio_pseudo},
        {"enhance.ratio_source", Kind::Int, &c.en_ratio_source},
        {"enhance.pseudo_steps", Kind::Int, &c.en_pseudo_steps},
        {"post.low", Kind::Double, &c.post_low},
        {"post.high", Kind::Double, &c.post_high},
        {"post.sigma", Kind::Double, &c.post_sigma},
        {"sample.steps", Kind::Int, &c.sample_steps},
    };
}

inline void set_entry(const Entry& e, const std::string& value) {
    try {
        switch (e.kind) {
            case Kind::Int:
                *static_cast<int*>(e.ptr) = std::stoi(value);
                break;
            case Kind::Double:
                *static_cast<double*>(e.ptr) = std::stod(value);
                break;
            case Kind::U64:
                *static_cast<std::uint64_t*>(e.ptr) = std::stoull(value);
                break;
            case Kind::Str:
                *static_cast<std::string*>(e.ptr) = value;
                break;
        }
    } catch (const std::exception&) {
        throw ConfigError(std::string("config: bad value for ") + e.key + ": " + value);
    }
}

inline std::string get_entry(const Entry& e) {
    std::ostringstream out;
    out.precision(17);
    switch (e.kind) {
        case Kind::Int:
            out << *static_cast<int*>(e.ptr);
            break;
        case Kind::Double:
            out << *static_cast<double*>(e.ptr);
            break;
        case Kind::U64:
            out << *static_cast<std::uint64_t*>(e.ptr);
            break;
        case Kind::Str:
            out << *static_cast<std::string*>(e.ptr);
            break;
    }
    return out.str();
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace cfgdetail

/// Applies one "section.key=value" override.
inline void apply_override(PipelineConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config override must look like section.key=value: " + assignment);
    const std::string key = cfgdetail::trim(assignment.substr(0, eq));
    const std::string value = cfgdetail::trim(assignment.substr(eq + 1));
    for (const auto& e : cfgdetail::schema(cfg))
        if (key == e.key) {
            cfgdetail::set_entry(e, value);
            return;
        }
    throw ConfigError("config: unknown key " + key);
}

/// Parses the sectioned key = value grammar:
///   [section]
///   key = value        # comment
inline PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgdetail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key =
            (section.empty() ? "" : section + ".") + cfgdetail::trim(line.substr(0, eq));
        apply_override(cfg, key + "=" + cfgdetail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
    return parse_config_text(io::read_file(path));
}

/// Canonical serialization: declaration order, one key per line.
inline std::string serialize_config(const PipelineConfig& cfg) {
    PipelineConfig copy = cfg;
    std::string out;
    std::string section;
    for (const auto& e : cfgdetail::schema(copy)) {
        const std::string key = e.key;
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            section = sec;
            out += "[" + section + "]\n";
        }
        out += key.substr(dot + 1) + " = " + cfgdetail::get_entry(e) + "\n";
    }
    return out;
}

inline std::string config_hash(const PipelineConfig& cfg) {
    return checkpoint::sha256_hex(serialize_config(cfg)).substr(0, 16);
}

/// Artifact root: TYPLAB_CACHE when set, ./artifacts otherwise.
inline fs::path artifact_root() {
    if (const char* env = std::getenv("TYPLAB_CACHE")) return fs::path(env);
    return fs::path("artifacts");
}

// ---------------------------------------------------------------------------
// Domain wiring
// ---------------------------------------------------------------------------

inline bevrep::GridGeometry grid_geometry(const PipelineConfig& c) {
    bevrep::GridGeometry g;
    g.H = c.grid_h;
    g.W = c.grid_w;
    g.C = c.grid_c;
    g.x_min = c.x_min;
    g.x_max = c.x_max;
    g.y_min = c.y_min;
    g.y_max = c.y_max;
    g.z_min = c.z_min;
    g.z_max = c.z_max;
    bevrep::validate(g);
    return g;
}

inline std::vector<double> parse_degree_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ','))
        if (!cfgdetail::trim(item).empty()) out.push_back(deg2rad(std::stod(item)));
    if (out.empty()) throw ConfigError("elevation list is empty: " + csv);
    return out;
}

inline std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ','))
        if (!cfgdetail::trim(item).empty()) out.push_back(std::stoi(item));
    return out;
}

inline scenesim::LidarModel lidar_for(const PipelineConfig& c, const std::string& domain) {
    scenesim::LidarModel m;
    if (domain == "target") {
        m.azimuth_count = c.t_azimuths;
        m.elevations_rad = parse_degree_list(c.t_elevations);
        m.max_range = c.t_range;
        m.drop_scale = c.t_drop_scale;
        m.drop_power = c.t_drop_power;
    } else if (domain == "source") {
        m.azimuth_count = c.s_azimuths;
        m.elevations_rad = parse_degree_list(c.s_elevations);
        m.max_range = c.s_range;
        m.drop_scale = c.s_drop_scale;
        m.drop_power = c.s_drop_power;
    } else {
        throw ArgumentError("unknown domain: " + domain);
    }
    return m;
}

inline scenesim::GeneratorConfig generator_for(const PipelineConfig& c,
                                               const std::string& domain) {
    scenesim::GeneratorConfig g;
    g.extent = c.extent;
    g.box_count_min = c.box_min;
    g.box_count_max = c.box_max;
    g.wall_count_min = c.wall_min;
    g.wall_count_max = c.wall_max;
    g.agent_count_min = c.agent_min;
    g.agent_count_max = c.agent_max;
    g.must_occlude_fraction = c.must_occlude;
    g.max_attempts = c.max_attempts;
    if (domain == "target") {
        g.sensor_height = c.t_sensor_height;
    } else if (domain == "source") {
        g.sensor_height = c.s_sensor_height;
        g.box_length_min = c.s_box_length_min;
        g.box_length_max = c.s_box_length_max;
        g.box_width_min = c.s_box_width_min;
        g.box_width_max = c.s_box_width_max;
        g.box_height_min = c.s_box_height_min;
        g.box_height_max = c.s_box_height_max;
    } else {
        throw ArgumentError("unknown domain: " + domain);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dataset generation and loading
// ---------------------------------------------------------------------------

/// Deterministic dataset build for one domain flavor.
inline dataset::Manifest run_gen_data(const PipelineConfig& cfg, const std::string& domain,
                                      int n_scenes, const fs::path& out_dir) {
    const scenesim::GeneratorConfig gen = generator_for(cfg, domain);
    const scenesim::LidarModel lidar = lidar_for(cfg, domain);
    const int n_train = static_cast<int>(std::floor(cfg.train_frac * n_scenes));
    std::vector<dataset::TaggedSample> samples;
    const std::uint64_t domain_tag = domain == "target" ? 0x7A26E7 : 0x50AACE;
    for (int i = 0; i < n_scenes; ++i) {
        const std::uint64_t scene_seed = hash64(cfg.seed, domain_tag, static_cast<std::uint64_t>(i));
        const scenesim::SceneSpec spec = scenesim::generate_scene(scene_seed, gen);
        samples.push_back(
            {scenesim::sample_scene(spec, lidar), i < n_train ? "train" : "test"});
    }
    return dataset::write_dataset(samples, out_dir, config_hash(cfg));
}

inline geometry::FrameTransform world_to_agent(const geometry::AgentPose& pose,
                                               const std::string& local) {
    return geometry::pose_to_parent(pose, local, "world").inverse();
}

/// Boxes re-expressed in an agent's sensor frame.
inline std::vector<geometry::ObjectBox> boxes_in_agent_frame(
    const std::vector<geometry::ObjectBox>& boxes_world, const geometry::AgentPose& pose) {
    return geometry::transform_boxes(boxes_world, world_to_agent(pose, "agent"));
}

/// Single-agent training views (agent 0): occupancy grid and object map.
struct SingleView {
    bevrep::OccupancyGrid grid;
    bevrep::ObjectMap map;
};

inline SingleView single_view(const scenesim::SceneSample& sample,
                              const bevrep::GridGeometry& g, int agent = 0) {
    SingleView v;
    v.grid = bevrep::voxelize(sample.clouds[static_cast<std::size_t>(agent)], g).grid;
    v.map = bevrep::rasterize_boxes(
        boxes_in_agent_frame(sample.boxes_world,
                             sample.spec.agent_poses[static_cast<std::size_t>(agent)]),
        g);
    return v;
}

// ---------------------------------------------------------------------------
// Checkpoint wiring (meta tensors carry the module configuration)
// ---------------------------------------------------------------------------

inline checkpoint::NamedTensor meta_tensor(const std::string& name,
                                           const std::vector<float>& values) {
    checkpoint::NamedTensor t;
    t.name = name;
    t.shape = {static_cast<int>(values.size())};
    t.data = values;
    return t;
}

inline void save_codec(const fs::path& path, codec::CodecNet<float>& net,
                       const std::string& config_hash_str) {
    checkpoint::Checkpoint ckpt = checkpoint::snapshot(
        net.params(), net.role == "occupancy" ? "codec" : "codec-objectmap", net.domain,
        config_hash_str);
    if (net.domain == "source") ckpt.role = "codec-source";
    const auto& c = net.cfg;
    ckpt.tensors.insert(
        ckpt.tensors.begin(),
        meta_tensor("meta.codec",
                    {static_cast<float>(c.geometry.H), static_cast<float>(c.geometry.W),
                     static_cast<float>(c.geometry.C), static_cast<float>(c.geometry.x_min),
                     static_cast<float>(c.geometry.x_max), static_cast<float>(c.geometry.y_min),
                     static_cast<float>(c.geometry.y_max), static_cast<float>(c.geometry.z_min),
                     static_cast<float>(c.geometry.z_max), static_cast<float>(c.in_channels),
                     static_cast<float>(c.latent_channels), static_cast<float>(c.n_down),
                     static_cast<float>(c.base_width), static_cast<float>(c.codebook_size),
                     static_cast<float>(c.beta), static_cast<float>(c.gamma),
                     net.role == "occupancy" ? 0.f : 1.f}));
    checkpoint::write(path, ckpt);
}

inline codec::CodecNet<float> load_codec(const fs::path& path, const std::string& required_by) {
    if (!fs::exists(path))
        throw DependencyError("missing codec checkpoint " + path.string() + " (run " +
                              required_by + " first)");
    const checkpoint::Checkpoint ckpt = checkpoint::read(path);
    const auto& m = ckpt.find("meta.codec").data;
    codec::CodecConfig c;
    c.geometry.H = static_cast<int>(m[0]);
    c.geometry.W = static_cast<int>(m[1]);
    c.geometry.C = static_cast<int>(m[2]);
    c.geometry.x_min = m[3];
    c.geometry.x_max = m[4];
    c.geometry.y_min = m[5];
    c.geometry.y_max = m[6];
    c.geometry.z_min = m[7];
    c.geometry.z_max = m[8];
    c.in_channels = static_cast<int>(m[9]);
    c.latent_channels = static_cast<int>(m[10]);
    c.n_down = static_cast<int>(m[11]);
    c.base_width = static_cast<int>(m[12]);
    c.codebook_size = static_cast<int>(m[13]);
    c.beta = m[14];
    c.gamma = m[15];
    const std::string role = m[16] == 0.f ? "occupancy" : "objectmap";
    codec::CodecNet<float> net(c, role, ckpt.domain);
    checkpoint::Checkpoint body = ckpt;
    body.tensors.erase(body.tensors.begin());
    auto params = net.params();
    checkpoint::load_into(body, params);
    return net;
}

inline void save_denoiser(const fs::path& path, diffusion::Denoiser<float>& d,
                          const std::string& config_hash_str, const std::string& role = "denoiser") {
    checkpoint::Checkpoint ckpt = checkpoint::snapshot(d.params(), role, "target", config_hash_str);
    const auto& c = d.cfg;
    ckpt.tensors.insert(
        ckpt.tensors.begin(),
        meta_tensor("meta.denoiser",
                    {static_cast<float>(c.x_channels), static_cast<float>(c.y_channels),
                     static_cast<float>(c.latent_h), static_cast<float>(c.latent_w),
                     static_cast<float>(c.widths[0]), static_cast<float>(c.widths[1]),
                     static_cast<float>(c.widths[2]), static_cast<float>(c.widths[3]),
                     static_cast<float>(c.temb_dim), static_cast<float>(d.schedule_T),
                     static_cast<float>(d.x_scale), static_cast<float>(d.y_scale)}));
    checkpoint::write(path, ckpt);
}

inline diffusion::Denoiser<float> load_denoiser(const fs::path& path,
                                                const std::string& required_by) {
    if (!fs::exists(path))
        throw DependencyError("missing denoiser checkpoint " + path.string() + " (run " +
                              required_by + " first)");
    const checkpoint::Checkpoint ckpt = checkpoint::read(path);
    const auto& m = ckpt.find("meta.denoiser").data;
    diffusion::UNetConfig c;
    c.x_channels = static_cast<int>(m[0]);
    c.y_channels = static_cast<int>(m[1]);
    c.latent_h = static_cast<int>(m[2]);
    c.latent_w = static_cast<int>(m[3]);
    c.widths = {static_cast<int>(m[4]), static_cast<int>(m[5]), static_cast<int>(m[6]),
                static_cast<int>(m[7])};
    c.temb_dim = static_cast<int>(m[8]);
    diffusion::Denoiser<float> d(c);
    d.schedule_T = static_cast<int>(m[9]);
    d.x_scale = m[10];
    d.y_scale = m[11];
    checkpoint::Checkpoint body = ckpt;
    body.tensors.erase(body.tensors.begin());
    auto params = d.params();
    checkpoint::load_into(body, params);
    return d;
}

inline void save_adapter(const fs::path& path, control::Adapter<float>& a,
                         const std::string& config_hash_str) {
    checkpoint::Checkpoint ckpt =
        checkpoint::snapshot(a.params(), "adapter", "target", config_hash_str);
    const auto& c = a.denoiser_cfg;
    ckpt.tensors.insert(
        ckpt.tensors.begin(),
        meta_tensor("meta.adapter",
                    {static_cast<float>(c.x_channels), static_cast<float>(c.y_channels),
                     static_cast<float>(c.latent_h), static_cast<float>(c.latent_w),
                     static_cast<float>(c.widths[0]), static_cast<float>(c.widths[1]),
                     static_cast<float>(c.widths[2]), static_cast<float>(c.widths[3]),
                     static_cast<float>(c.temb_dim)}));
    checkpoint::write(path, ckpt);
}

inline control::Adapter<float> load_adapter(const fs::path& path, const std::string& required_by) {
    if (!fs::exists(path))
        throw DependencyError("missing adapter checkpoint " + path.string() + " (run " +
                              required_by + " first)");
    const checkpoint::Checkpoint ckpt = checkpoint::read(path);
    const auto& m = ckpt.find("meta.adapter").data;
    diffusion::UNetConfig c;
    c.x_channels = static_cast<int>(m[0]);
    c.y_channels = static_cast<int>(m[1]);
    c.latent_h = static_cast<int>(m[2]);
    c.latent_w = static_cast<int>(m[3]);
    c.widths = {static_cast<int>(m[4]), static_cast<int>(m[5]), static_cast<int>(m[6]),
                static_cast<int>(m[7])};
    c.temb_dim = static_cast<int>(m[8]);
    control::Adapter<float> a(c);
    checkpoint::Checkpoint body = ckpt;
    body.tensors.erase(body.tensors.begin());
    auto params = a.params();
    checkpoint::load_into(body, params);
    return a;
}

inline void require_role(const fs::path& path, const std::string& expected) {
    const checkpoint::Checkpoint ckpt = checkpoint::read(path);
    if (ckpt.role != expected)
        throw IntegrityError("checkpoint " + path.string() + " has role '" + ckpt.role +
                             "', expected '" + expected + "'");
}

// ---------------------------------------------------------------------------
// Training step runners
// ---------------------------------------------------------------------------

inline codec::CodecConfig codec_config(const PipelineConfig& cfg, const std::string& role) {
    codec::CodecConfig c;
    c.geometry = grid_geometry(cfg);
    if (role == "occupancy") {
        c.in_channels = cfg.grid_c;
        c.latent_channels = cfg.cx_latent;
        c.n_down = cfg.cx_down;
        c.base_width = cfg.cx_width;
        c.codebook_size = cfg.cx_codebook;
        c.beta = cfg.cx_beta;
        c.gamma = cfg.cx_gamma;
    } else {
        c.in_channels = 1;
        c.latent_channels = cfg.cy_latent;
        c.n_down = cfg.cy_down;
        c.base_width = cfg.cy_width;
        c.codebook_size = cfg.cy_codebook;
        c.beta = cfg.cx_beta;
        c.gamma = cfg.cx_gamma;
    }
    return c;
}

/// Trains one codec (occupancy or object map) on the train split of a
/// dataset. Returns the trained net; per-epoch checkpoints land next to
/// `out` with an .epochN suffix, with the final net at `out`.
inline codec::CodecNet<float> run_train_codec(const PipelineConfig& cfg, const fs::path& data_dir,
                                              const std::string& role, const std::string& domain,
                                              const fs::path& out,
                                              std::vector<codec::EpochLog>* log_out = nullptr) {
    const auto samples = dataset::read_split(data_dir, "train");
    if (samples.empty()) throw DependencyError("no train split in " + data_dir.string() +
                                               " (run gen-data first)");
    const bevrep::GridGeometry g = grid_geometry(cfg);
    std::vector<Tensor<float>> inputs;
    for (const auto& s : samples) {
        const SingleView v = single_view(s, g);
        inputs.push_back(role == "occupancy" ? bevrep::grid_to_tensor<float>(v.grid)
                                             : bevrep::map_to_tensor<float>(v.map));
    }
    codec::CodecNet<float> net(codec_config(cfg, role), role, domain);
    Rng rng(hash64(cfg.seed, std::uint64_t{role == "occupancy" ? 0xC0DE1u : 0xC0DE2u}));
    net.init(rng);
    codec::CodecTrainConfig tc;
    tc.epochs = role == "occupancy" ? cfg.cx_epochs : cfg.cy_epochs;
    tc.batch_size = role == "occupancy" ? cfg.cx_batch : cfg.cy_batch;
    tc.lr = role == "occupancy" ? cfg.cx_lr : cfg.cy_lr;
    tc.seed = hash64(cfg.seed, std::uint64_t{0x7EA1}, std::uint64_t{role == "occupancy" ? 1u : 2u});
    const std::string hash = config_hash(cfg);
    auto log = codec::train_codec<float>(
        net, inputs, tc,
        [&](int epoch, codec::CodecNet<float>& n, const codec::EpochLog&) {
            save_codec(out.string() + ".epoch" + std::to_string(epoch), n, hash);
        });
    save_codec(out, net, hash);
    if (log_out) *log_out = log;
    return net;
}

/// Encodes the single-agent train split into latent pairs for stage 1.
inline void encode_singles(codec::CodecNet<float>& codec_x, codec::CodecNet<float>& codec_y,
                           const std::vector<scenesim::SceneSample>& samples,
                           const bevrep::GridGeometry& g, std::vector<Tensor<float>>& xs,
                           std::vector<Tensor<float>>& ys) {
    for (const auto& s : samples) {
        const SingleView v = single_view(s, g);
        xs.push_back(codec::encode(codec_x, v.grid).data);
        ys.push_back(codec::encode(codec_y, v.map).data);
    }
}

inline diffusion::UNetConfig unet_config(const PipelineConfig& cfg) {
    const auto widths = parse_int_list(cfg.s1_widths);
    if (widths.size() != 4) throw ConfigError("stage1.widths must list 4 values");
    diffusion::UNetConfig u;
    u.x_channels = cfg.cx_latent;
    u.y_channels = cfg.cy_latent;
    u.latent_h = cfg.grid_h >> cfg.cx_down;
    u.latent_w = cfg.grid_w >> cfg.cx_down;
    u.widths = {widths[0], widths[1], widths[2], widths[3]};
    u.temb_dim = cfg.s1_temb;
    return u;
}

inline diffusion::Denoiser<float> run_train_stage1(
    const PipelineConfig& cfg, const fs::path& data_dir, codec::CodecNet<float>& codec_x,
    codec::CodecNet<float>& codec_y, const fs::path& out,
    std::vector<diffusion::DiffEpochLog>* log_out = nullptr) {
    const auto samples = dataset::read_split(data_dir, "train");
    if (samples.empty())
        throw DependencyError("no train split in " + data_dir.string() + " (run gen-data first)");
    std::vector<Tensor<float>> xs, ys;
    encode_singles(codec_x, codec_y, samples, grid_geometry(cfg), xs, ys);
    diffusion::Denoiser<float> d(unet_config(cfg));
    Rng rng(hash64(cfg.seed, std::uint64_t{0x57A6E1}));
    d.unet.init(rng);
    diffusion::Stage1Config tc;
    tc.epochs = cfg.s1_epochs;
    tc.batch_size = cfg.s1_batch;
    tc.lr = cfg.s1_lr;
    tc.T = cfg.s1_T;
    tc.seed = hash64(cfg.seed, std::uint64_t{0x7EA2});
    auto log = diffusion::train_stage1<float>(d, xs, ys, tc);
    save_denoiser(out, d, config_hash(cfg));
    if (log_out) *log_out = log;
    return d;
}

/// Builds stage-2 tuples from a pair dataset split: agent 0 is the ego,
/// agent 1 the reference.
inline std::vector<control::AdapterTrainSample<float>> build_pairs(
    const std::vector<scenesim::SceneSample>& samples, codec::CodecNet<float>& cloud_codec,
    codec::CodecNet<float>& map_codec, const bevrep::GridGeometry& g) {
    std::vector<control::AdapterTrainSample<float>> pairs;
    for (const auto& s : samples) {
        if (s.clouds.size() < 2) continue;
        const auto& ego_pose = s.spec.agent_poses[0];
        const auto& ref_pose = s.spec.agent_poses[1];
        control::AdapterTrainSample<float> p;
        p.x_latent =
            codec::encode(cloud_codec, bevrep::voxelize(s.clouds[1], g).grid).data;
        p.y_latent =
            codec::encode(map_codec,
                          bevrep::rasterize_boxes(boxes_in_agent_frame(s.boxes_world, ref_pose), g))
                .data;
        const PointCloud ego_in_ref = geometry::ego_to_reference(s.clouds[0], ego_pose, ref_pose);
        p.ego_latent = codec::encode(cloud_codec, bevrep::voxelize(ego_in_ref, g).grid).data;
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw DependencyError("pair dataset has no usable two-agent scenes");
    return pairs;
}

inline control::Adapter<float> run_train_stage2(
    const PipelineConfig& cfg, const fs::path& pairs_dir, codec::CodecNet<float>& cloud_codec,
    codec::CodecNet<float>& map_codec, diffusion::Denoiser<float>& denoiser, const fs::path& out,
    bool one_stage = false, std::vector<diffusion::DiffEpochLog>* log_out = nullptr) {
    const auto samples = dataset::read_split(pairs_dir, "train");
    if (samples.empty())
        throw DependencyError("no train split in " + pairs_dir.string() + " (run gen-data first)");
    const auto pairs = build_pairs(samples, cloud_codec, map_codec, grid_geometry(cfg));
    if (one_stage) {
        // a from-scratch joint run never saw stage 1, so measure the latent
        // scaling here
        std::vector<Tensor<float>> xs, ys;
        for (const auto& p : pairs) {
            xs.push_back(p.x_latent);
            ys.push_back(p.y_latent);
        }
        denoiser.x_scale = diffusion::tensor_std(xs);
        denoiser.y_scale = diffusion::tensor_std(ys);
    }
    control::Adapter<float> adapter(denoiser.cfg);
    Rng rng(hash64(cfg.seed, std::uint64_t{0x57A6E3}));
    adapter.init(rng);
    control::Stage2Config tc;
    tc.epochs = cfg.s2_epochs;
    tc.batch_size = cfg.s2_batch;
    tc.lr = cfg.s2_lr;
    tc.seed = hash64(cfg.seed, std::uint64_t{0x7EA3});
    tc.train_denoiser = one_stage;
    auto log = control::train_stage2<float>(denoiser, adapter, pairs, tc);
    save_adapter(out, adapter, config_hash(cfg));
    if (one_stage) save_denoiser(out.string() + ".denoiser", denoiser, config_hash(cfg));
    if (log_out) *log_out = log;
    return adapter;
}

inline std::pair<codec::CodecNet<float>, adapt::Discriminator<float>> run_adapt(
    const PipelineConfig& cfg, codec::CodecNet<float>& target_codec, const fs::path& source_dir,
    const fs::path& target_dir, const fs::path& out_codec, const fs::path& out_disc,
    std::vector<adapt::AdaptEpochLog>* log_out = nullptr) {
    const bevrep::GridGeometry g = grid_geometry(cfg);
    auto to_tensors = [&](const fs::path& dir) {
        std::vector<Tensor<float>> out;
        for (const auto& s : dataset::read_split(dir, "train"))
            out.push_back(bevrep::grid_to_tensor<float>(bevrep::voxelize(s.clouds[0], g).grid));
        return out;
    };
    const auto source_inputs = to_tensors(source_dir);
    const auto target_inputs = to_tensors(target_dir);

    codec::CodecNet<float> source_codec = adapt::clone_as_source(target_codec);
    adapt::Discriminator<float> disc(target_codec.cfg.latent_channels);
    Rng rng(hash64(cfg.seed, std::uint64_t{0xD15C}));
    disc.init(rng);
    adapt::AdaptConfig ac;
    ac.epochs = cfg.ad_epochs;
    ac.batch_size = cfg.ad_batch;
    ac.lr = cfg.ad_lr;
    ac.disc_lr = cfg.ad_disc_lr;
    ac.lambda_src = cfg.ad_lambda;
    ac.seed = hash64(cfg.seed, std::uint64_t{0x7EA4});
    auto log = adapt::adapt_source_codec<float>(target_codec, source_codec, disc, source_inputs,
                                                target_inputs, ac);
    const std::string hash = config_hash(cfg);
    save_codec(out_codec, source_codec, hash);
    {
        checkpoint::Checkpoint ckpt =
            checkpoint::snapshot(disc.params(), "discriminator", "source", hash);
        checkpoint::write(out_disc, ckpt);
    }
    if (log_out) *log_out = log;
    return {std::move(source_codec), std::move(disc)};
}

// ---------------------------------------------------------------------------
// Rendering (plot output for eval/report)
// ---------------------------------------------------------------------------

/// Grayscale PGM of a BEV histogram, max-normalized.
inline void write_pgm(const fs::path& path, const evalmetrics::BEVHistogram& h) {
    double maxv = 0;
    for (double v : h.p) maxv = std::max(maxv, v);
    std::string out = "P5\n" + std::to_string(h.bins) + " " + std::to_string(h.bins) + "\n255\n";
    for (int i = 0; i < h.bins * h.bins; ++i) {
        const double v = maxv > 0 ? h.p[static_cast<std::size_t>(i)] / maxv : 0.0;
        out.push_back(static_cast<char>(static_cast<int>(std::round(255 * std::sqrt(v)))));
    }
    io::atomic_write_file(path, out);
}

}  // namespace typlab::pipeline
