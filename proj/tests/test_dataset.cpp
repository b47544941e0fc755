#include <gtest/gtest.h>

#include <filesystem>

#include "typlab/dataset.hpp"

using namespace typlab;
using namespace typlab::dataset;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("typlab_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<TaggedSample> make_samples(std::size_t n) {
    scenesim::GeneratorConfig cfg;
    scenesim::LidarModel lidar;
    lidar.azimuth_count = 60;
    std::vector<TaggedSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto spec = scenesim::generate_scene(i, cfg);
        out.push_back({scenesim::sample_scene(spec, lidar), i % 5 == 0 ? "test" : "train"});
    }
    return out;
}

}  // namespace

TEST(Dataset, RoundTripExact) {
    const fs::path root = temp_dir("roundtrip");
    const auto samples = make_samples(10);
    const Manifest manifest = write_dataset(samples, root, "cfghash");
    ASSERT_EQ(manifest.entries.size(), 10u);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SceneSample loaded = read_sample(root, manifest.entries[i]);
        const SceneSample& orig = samples[i].sample;
        ASSERT_EQ(loaded.clouds.size(), orig.clouds.size());
        for (std::size_t k = 0; k < orig.clouds.size(); ++k) {
            ASSERT_EQ(loaded.clouds[k].points.size(), orig.clouds[k].points.size());
            for (std::size_t p = 0; p < orig.clouds[k].points.size(); ++p)
                EXPECT_EQ(loaded.clouds[k].points[p], orig.clouds[k].points[p]);
        }
        ASSERT_EQ(loaded.boxes_world.size(), orig.boxes_world.size());
        for (std::size_t b = 0; b < orig.boxes_world.size(); ++b) {
            EXPECT_EQ(loaded.boxes_world[b].center, orig.boxes_world[b].center);
            EXPECT_EQ(loaded.boxes_world[b].size, orig.boxes_world[b].size);
            EXPECT_EQ(loaded.boxes_world[b].yaw, orig.boxes_world[b].yaw);
        }
        ASSERT_EQ(loaded.spec.agent_poses.size(), orig.spec.agent_poses.size());
        for (std::size_t a = 0; a < orig.spec.agent_poses.size(); ++a) {
            EXPECT_EQ(loaded.spec.agent_poses[a].position, orig.spec.agent_poses[a].position);
            EXPECT_EQ(loaded.spec.agent_poses[a].yaw, orig.spec.agent_poses[a].yaw);
        }
        EXPECT_EQ(loaded.spec.occluder_walls.size(), orig.spec.occluder_walls.size());
    }
    fs::remove_all(root);
}

TEST(Dataset, EmptySampleListGivesEmptyManifest) {
    const fs::path root = temp_dir("empty");
    const Manifest manifest = write_dataset({}, root);
    EXPECT_TRUE(manifest.entries.empty());
    const Manifest reread = read_manifest(root);
    EXPECT_TRUE(reread.entries.empty());
    EXPECT_EQ(reread.schema, std::string(kSchema));
    fs::remove_all(root);
}

TEST(Dataset, HundredSamplesCounted) {
    const fs::path root = temp_dir("hundred");
    scenesim::GeneratorConfig cfg;
    cfg.box_count_min = cfg.box_count_max = 1;
    cfg.wall_count_min = cfg.wall_count_max = 0;
    cfg.must_occlude_fraction = 0.0;
    scenesim::LidarModel lidar;
    lidar.azimuth_count = 8;
    std::vector<TaggedSample> samples;
    for (std::size_t i = 0; i < 100; ++i)
        samples.push_back({scenesim::sample_scene(scenesim::generate_scene(i, cfg), lidar), "train"});
    const Manifest manifest = write_dataset(samples, root);
    EXPECT_EQ(manifest.entries.size(), 100u);
    EXPECT_EQ(read_manifest(root).entries.size(), 100u);
    fs::remove_all(root);
}

TEST(Dataset, MissingManifestIsDependencyError) {
    const fs::path root = temp_dir("missing");
    EXPECT_THROW(read_manifest(root / "nope"), DependencyError);
    fs::remove_all(root);
}

TEST(Dataset, SplitFiltering) {
    const fs::path root = temp_dir("split");
    const auto samples = make_samples(10);
    write_dataset(samples, root);
    EXPECT_EQ(read_split(root, "test").size(), 2u);
    EXPECT_EQ(read_split(root, "train").size(), 8u);
    EXPECT_EQ(read_split(root, "").size(), 10u);
    fs::remove_all(root);
}
