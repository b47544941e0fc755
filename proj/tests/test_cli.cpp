#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "typlab/checkpoint.hpp"
#include "typlab/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string typlab_bin() {
    const char* env = std::getenv("TYPLAB_BIN");
    if (!env) throw std::runtime_error("TYPLAB_BIN not set (run through ctest)");
    return env;
}

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run(const std::string& args, const fs::path& cache) {
    const std::string cmd = "TYPLAB_CACHE=" + cache.string() + " " + typlab_bin() + " " + args +
                            " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) r.output += buf;
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// tiny-scale configuration shared by the CLI tests
const char* kTinySet =
    " --set data.scenes=50 --set data.source_scenes=12 --set grid.h=32 --set grid.w=32"
    " --set codec.epochs=2 --set codec.n_down=2 --set codec.base_width=8"
    " --set codec_y.epochs=1 --set codec_y.n_down=2 --set codec_y.base_width=8"
    " --set stage1.epochs=2 --set stage1.T=100 --set stage1.widths=8,12,16,16"
    " --set stage2.epochs=2 --set adapt.epochs=2 --set adapt.batch=3"
    " --set sample.steps=8 --set enhance.epochs=1 --set enhance.pseudo_steps=4";

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), root).string()] =
                typlab::checkpoint::file_sha256(entry.path());
    return out;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("typlab_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

// Full pipeline smoke run on 50 scenes: every subcommand once, report JSON
// with all metric keys present.
TEST(Cli, FiftyScenePipelineSmoke) {
    const fs::path cache = fresh_dir("smoke");
    ASSERT_EQ(run(std::string("gen-data --domain target") + kTinySet, cache).exit_code, 0);
    ASSERT_EQ(run(std::string("gen-data --domain source") + kTinySet, cache).exit_code, 0);
    ASSERT_EQ(
        run(std::string("train-codec --data ") + (cache / "data/target").string() + kTinySet, cache)
            .exit_code,
        0);
    ASSERT_EQ(run(std::string("train-codec --role objectmap --data ") +
                      (cache / "data/target").string() + kTinySet,
                  cache)
                  .exit_code,
              0);
    ASSERT_EQ(
        run(std::string("train-stage1 --data ") + (cache / "data/target").string() + kTinySet,
            cache)
            .exit_code,
        0);
    ASSERT_EQ(run(std::string("adapt --source-data ") + (cache / "data/source").string() +
                      " --target-data " + (cache / "data/target").string() + kTinySet,
                  cache)
                  .exit_code,
              0);
    ASSERT_EQ(
        run(std::string("train-stage2 --pairs ") + (cache / "data/target").string() + kTinySet,
            cache)
            .exit_code,
        0);
    ASSERT_EQ(run(std::string("enhance --target-data ") + (cache / "data/target").string() +
                      " --pairs " + (cache / "data/source").string() + " --max-scenes 3" +
                      kTinySet,
                  cache)
                  .exit_code,
              0);
    const auto gen = run(std::string("generate --data ") + (cache / "data/target").string() +
                             " --scene scene_000047 --split test --sample-seed 3 --steps 8" +
                             kTinySet,
                         cache);
    ASSERT_EQ(gen.exit_code, 0) << gen.output;
    EXPECT_TRUE(fs::exists(cache / "generated.xyz"));

    const auto ev = run(std::string("eval --suite all --data ") +
                            (cache / "data/target").string() + " --pairs " +
                            (cache / "data/target").string() + " --source-data " +
                            (cache / "data/source").string() + " --max-scenes 3" + kTinySet,
                        cache);
    ASSERT_EQ(ev.exit_code, 0) << ev.output;
    const json report = json::parse(typlab::io::read_file(cache / "eval" / "all.json"));
    for (const char* key :
         {"codec_iou", "stage1_jsd", "stage1_jsd_untrained", "stage1_mmd", "conditioned_iou",
          "unconditional_iou", "conditioned_jsd", "coverage_ego", "coverage_fused_generated",
          "coverage_fused_oracle", "edit_remove_rate", "edit_add_rate", "adapt_jsd_before",
          "adapt_jsd_after"})
        EXPECT_TRUE(report.at("metrics").contains(key)) << key;
    EXPECT_FALSE(report.at("config_hash").get<std::string>().empty());

    const auto rp = run(std::string("report --inputs ") + (cache / "eval" / "all.json").string() +
                            " --out " + (cache / "report").string(),
                        cache);
    ASSERT_EQ(rp.exit_code, 0) << rp.output;
    EXPECT_TRUE(fs::exists(cache / "report" / "summary.json"));
    EXPECT_TRUE(fs::exists(cache / "report" / "summary.txt"));
    fs::remove_all(cache);
}

// Rerunning a subcommand with identical config and seed reproduces the
// artifacts bitwise.
TEST(Cli, DeterministicReruns) {
    const fs::path cache = fresh_dir("determ");
    const std::string small =
        " --set data.scenes=8 --set grid.h=32 --set grid.w=32 --set codec.epochs=1"
        " --set codec.n_down=2 --set codec.base_width=8";
    ASSERT_EQ(run("gen-data --domain target --out " + (cache / "d1").string() + small, cache)
                  .exit_code,
              0);
    ASSERT_EQ(run("gen-data --domain target --out " + (cache / "d2").string() + small, cache)
                  .exit_code,
              0);
    EXPECT_EQ(tree_hashes(cache / "d1"), tree_hashes(cache / "d2"));

    ASSERT_EQ(run("train-codec --data " + (cache / "d1").string() + " --out " +
                      (cache / "c1.typc").string() + small,
                  cache)
                  .exit_code,
              0);
    ASSERT_EQ(run("train-codec --data " + (cache / "d1").string() + " --out " +
                      (cache / "c2.typc").string() + small,
                  cache)
                  .exit_code,
              0);
    EXPECT_EQ(typlab::checkpoint::file_sha256(cache / "c1.typc"),
              typlab::checkpoint::file_sha256(cache / "c2.typc"));

    // a different seed must change the data
    ASSERT_EQ(run("gen-data --domain target --seed 9 --out " + (cache / "d3").string() + small,
                  cache)
                  .exit_code,
              0);
    EXPECT_NE(tree_hashes(cache / "d1"), tree_hashes(cache / "d3"));
    fs::remove_all(cache);
}

TEST(Cli, ExitCodes) {
    const fs::path cache = fresh_dir("exitcodes");
    // usage errors
    EXPECT_EQ(run("gen-data --no-such-flag", cache).exit_code, 2);
    EXPECT_EQ(run("gen-data --set nonsense.key=1", cache).exit_code, 2);
    // ordering violation: stage 2 before anything exists
    const auto dep = run("train-stage2 --pairs " + (cache / "nope").string(), cache);
    EXPECT_EQ(dep.exit_code, 3);
    EXPECT_NE(dep.output.find("run train-codec first"), std::string::npos);
    // report refuses mismatched config hashes without --force
    typlab::io::atomic_write_file(cache / "a.json",
                                  json{{"config_hash", "aaaa"}, {"metrics", json::object()}}.dump());
    typlab::io::atomic_write_file(cache / "b.json",
                                  json{{"config_hash", "bbbb"}, {"metrics", json::object()}}.dump());
    const auto mix = run("report --inputs " + (cache / "a.json").string() + " " +
                             (cache / "b.json").string() + " --out " + (cache / "rep").string(),
                         cache);
    EXPECT_EQ(mix.exit_code, 4);
    const auto forced = run("report --force --inputs " + (cache / "a.json").string() + " " +
                                (cache / "b.json").string() + " --out " + (cache / "rep").string(),
                            cache);
    EXPECT_EQ(forced.exit_code, 0);
    fs::remove_all(cache);
}

TEST(Cli, ConfigFilePlusOverride) {
    const fs::path cache = fresh_dir("config");
    typlab::io::atomic_write_file(cache / "exp.cfg",
                                  "[data]\nscenes = 5\n\n[scene]\nbox_min = 2 # comment\n"
                                  "box_max = 2\n");
    ASSERT_EQ(run("gen-data --domain target --config " + (cache / "exp.cfg").string() +
                      " --set data.scenes=6 --out " + (cache / "d").string(),
                  cache)
                  .exit_code,
              0);
    const json manifest = json::parse(typlab::io::read_file(cache / "d" / "manifest.json"));
    EXPECT_EQ(manifest.at("samples").size(), 6u);  // the flag override wins
    // config file's box range applied
    const json boxes_meta = manifest.at("samples")[0];
    EXPECT_EQ(boxes_meta.at("boxes").get<int>(), 2);
    fs::remove_all(cache);
}
