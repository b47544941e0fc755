#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "typlab/common.hpp"
#include "typlab/io.hpp"
#include "typlab/scenesim.hpp"

namespace typlab::dataset {

namespace fs = std::filesystem;
using nlohmann::json;
using scenesim::SceneSample;
using scenesim::SceneSpec;

inline constexpr const char* kSchema = "typlab.dataset.v1";

struct ManifestEntry {
    std::string scene_id;
    std::string split;
    std::uint64_t seed = 0;
    int agents = 0;
    int boxes = 0;
};

struct Manifest {
    std::string schema = kSchema;
    std::string config_hash;
    std::vector<ManifestEntry> entries;
};

struct TaggedSample {
    SceneSample sample;
    std::string split = "train";
};

namespace detail {

inline std::string cloud_bytes(const PointCloud& cloud) {
    std::string out;
    out.reserve(cloud.points.size() * 12);
    for (const auto& p : cloud.points)
        for (float v : p) io::put_f32_le(out, v);
    return out;
}

inline PointCloud cloud_from_bytes(const std::string& bytes, const std::string& frame) {
    if (bytes.size() % 12 != 0)
        throw PersistenceError("point cloud file size is not a multiple of 12 bytes");
    PointCloud cloud;
    cloud.frame = frame;
    io::Reader r(bytes);
    for (std::size_t i = 0; i < bytes.size() / 12; ++i) {
        Vec3f p{r.f32(), r.f32(), r.f32()};
        cloud.points.push_back(p);
    }
    return cloud;
}

inline json box_to_json(const geometry::ObjectBox& b) {
    return json{{"cx", b.center[0]}, {"cy", b.center[1]}, {"cz", b.center[2]},
                {"l", b.size[0]},    {"w", b.size[1]},    {"h", b.size[2]},
                {"yaw", b.yaw}};
}

inline geometry::ObjectBox box_from_json(const json& j) {
    geometry::ObjectBox b;
    b.center = {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("cz").get<double>()};
    b.size = {j.at("l").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
    b.yaw = j.at("yaw").get<double>();
    return b;
}

inline std::string boxes_jsonl(const std::vector<geometry::ObjectBox>& boxes) {
    std::string out;
    for (const auto& b : boxes) out += box_to_json(b).dump() + "\n";
    return out;
}

inline std::vector<geometry::ObjectBox> boxes_from_jsonl(const std::string& text) {
    std::vector<geometry::ObjectBox> boxes;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        boxes.push_back(box_from_json(json::parse(line)));
    }
    return boxes;
}

}  // namespace detail

inline std::string scene_id_for(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%06zu", index);
    return buf;
}

/// Writes samples under `<root>/<split>/<scene_id>/` with per-agent binary
/// float32 clouds plus jsonl metadata, and a manifest.json at the root.
/// Re-reading reproduces the samples exactly.
inline Manifest write_dataset(const std::vector<TaggedSample>& samples, const fs::path& root,
                              const std::string& config_hash = "") {
    Manifest manifest;
    manifest.config_hash = config_hash;
    try {
        fs::create_directories(root);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const TaggedSample& ts = samples[i];
            const SceneSample& s = ts.sample;
            const std::string id = scene_id_for(i);
            const fs::path dir = root / ts.split / id;
            fs::create_directories(dir);

            for (std::size_t k = 0; k < s.clouds.size(); ++k)
                io::atomic_write_file(dir / ("agent" + std::to_string(k) + ".xyz"),
                                      detail::cloud_bytes(s.clouds[k]));
            io::atomic_write_file(dir / "boxes.jsonl", detail::boxes_jsonl(s.boxes_world));
            io::atomic_write_file(dir / "walls.jsonl", detail::boxes_jsonl(s.spec.occluder_walls));
            std::string poses;
            for (const auto& p : s.spec.agent_poses)
                poses += json{{"x", p.position[0]},
                              {"y", p.position[1]},
                              {"z", p.position[2]},
                              {"yaw", p.yaw}}
                             .dump() +
                         "\n";
            io::atomic_write_file(dir / "poses.jsonl", poses);
            io::atomic_write_file(dir / "scene.json",
                                  json{{"seed", s.spec.seed}, {"extent", s.spec.extent}}.dump(2));

            manifest.entries.push_back({id, ts.split, s.spec.seed,
                                        static_cast<int>(s.clouds.size()),
                                        static_cast<int>(s.boxes_world.size())});
        }
        json m{{"schema", manifest.schema}, {"config_hash", manifest.config_hash}};
        m["samples"] = json::array();
        for (const auto& e : manifest.entries)
            m["samples"].push_back(json{{"scene_id", e.scene_id},
                                        {"split", e.split},
                                        {"seed", e.seed},
                                        {"agents", e.agents},
                                        {"boxes", e.boxes}});
        io::atomic_write_file(root / "manifest.json", m.dump(2) + "\n");
    } catch (const fs::filesystem_error& e) {
        throw PersistenceError("write_dataset failed at " + root.string() + ": " + e.what());
    }
    return manifest;
}

inline Manifest read_manifest(const fs::path& root) {
    const fs::path path = root / "manifest.json";
    if (!fs::exists(path))
        throw DependencyError("missing dataset manifest: " + path.string() +
                              " (run gen-data first)");
    const json m = json::parse(io::read_file(path));
    if (m.at("schema").get<std::string>() != kSchema)
        throw PersistenceError("unsupported dataset schema in " + path.string());
    Manifest manifest;
    manifest.schema = kSchema;
    manifest.config_hash = m.value("config_hash", "");
    for (const auto& e : m.at("samples"))
        manifest.entries.push_back({e.at("scene_id").get<std::string>(),
                                    e.at("split").get<std::string>(),
                                    e.at("seed").get<std::uint64_t>(), e.at("agents").get<int>(),
                                    e.at("boxes").get<int>()});
    return manifest;
}

inline SceneSample read_sample(const fs::path& root, const ManifestEntry& entry) {
    const fs::path dir = root / entry.split / entry.scene_id;
    SceneSample s;
    const json scene = json::parse(io::read_file(dir / "scene.json"));
    s.spec.seed = scene.at("seed").get<std::uint64_t>();
    s.spec.extent = scene.at("extent").get<double>();
    s.boxes_world = detail::boxes_from_jsonl(io::read_file(dir / "boxes.jsonl"));
    s.spec.boxes = s.boxes_world;
    s.spec.occluder_walls = detail::boxes_from_jsonl(io::read_file(dir / "walls.jsonl"));
    {
        std::istringstream in(io::read_file(dir / "poses.jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            geometry::AgentPose pose;
            pose.position = {j.at("x").get<double>(), j.at("y").get<double>(),
                             j.at("z").get<double>()};
            pose.yaw = j.at("yaw").get<double>();
            s.spec.agent_poses.push_back(pose);
        }
    }
    for (int k = 0; k < entry.agents; ++k)
        s.clouds.push_back(detail::cloud_from_bytes(
            io::read_file(dir / ("agent" + std::to_string(k) + ".xyz")),
            "agent" + std::to_string(k)));
    return s;
}

/// Reads every sample of one split (all splits when `split` is empty).
inline std::vector<SceneSample> read_split(const fs::path& root, const std::string& split) {
    const Manifest manifest = read_manifest(root);
    std::vector<SceneSample> out;
    for (const auto& e : manifest.entries)
        if (split.empty() || e.split == split) out.push_back(read_sample(root, e));
    return out;
}

}  // namespace typlab::dataset
