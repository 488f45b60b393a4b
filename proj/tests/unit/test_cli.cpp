#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "image_io.hpp"
#include "json.hpp"
#include "maskforge/reference_models.hpp"
#include "maskforge/synthetic.hpp"
#include "oracles.hpp"

namespace maskforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "maskforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) { return json::parse(io::read_text(p)); }

// A planted scene written to disk, with the selector of its model.
struct Scene {
  TempDir dir{"cli"};
  fs::path image;
  std::string model;
  Region region;

  explicit Scene(int size = 56) {
    PlantedSceneOptions opts;
    opts.height = size;
    opts.width = size;
    const PlantedScene s = make_planted_scene(opts, 11);
    region = s.region;
    image = dir / "scene.png";
    io::write_png(image, s.image);
    std::ostringstream sel;
    sel << "builtin:planted:" << region.top << ',' << region.left << ',' << region.height << ',' << region.width;
    model = sel.str();
  }
};

TEST(CliExplain, WritesOutputsInRange) {
  const Scene s;
  const auto r = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out", s.dir.path().string(),
                          "--prefix", "run", "--iterations", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* suffix : {"_mask.png", "_mask.csv", "_overlay.png", "_trace.json", "_manifest.json"}) {
    EXPECT_TRUE(fs::exists(s.dir / (std::string("run") + suffix))) << suffix;
  }
  const Grid mask = io::read_heatmap(s.dir / "run_mask.csv");
  EXPECT_EQ(mask.height(), 28);
  EXPECT_TRUE(within_unit_interval(mask));
  EXPECT_LT(mask.min(), 1.0);
  const Grid png = io::read_image(s.dir / "run_mask.png");
  EXPECT_EQ(png.height(), 56);
}

TEST(CliExplain, ManifestRecordsResolvedClassAndConfig) {
  const Scene s;
  const auto r = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out", s.dir.path().string(),
                          "--class", "argmax", "--resolution", "28", "--lambda1", "1", "--lambda2", "20",
                          "--iterations", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(s.dir / "explain_manifest.json");
  EXPECT_EQ(m["class_id"], 0);
  EXPECT_EQ(m["class_selector"], "argmax");
  EXPECT_EQ(m["config"]["mask_h"], 28);
  EXPECT_EQ(m["config"]["mask_w"], 28);
  EXPECT_EQ(m["config"]["reg"]["lambda1"], 1.0);
  EXPECT_EQ(m["config"]["reg"]["lambda2"], 20.0);
  EXPECT_EQ(m["config"]["iterations"], 2);
  EXPECT_TRUE(m.contains("heatmap_note"));
}

TEST(CliExplain, RerunIsByteIdenticalAndManifestReplays) {
  const Scene s;
  const auto first = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out",
                              s.dir.path().string(), "--prefix", "a", "--iterations", "4", "--seed", "9"});
  ASSERT_EQ(first.code, 0) << first.err;
  const auto second = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out",
                               s.dir.path().string(), "--prefix", "b", "--config",
                               (s.dir / "a_manifest.json").string()});
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(io::read_text(s.dir / "a_mask.csv"), io::read_text(s.dir / "b_mask.csv"));
  EXPECT_EQ(io::read_text(s.dir / "a_trace.json"), io::read_text(s.dir / "b_trace.json"));
  EXPECT_EQ(read_json(s.dir / "b_manifest.json")["seed"], 9);
}

TEST(CliExplain, SeedFromEnvironmentAndFlagPrecedence) {
  const Scene s;
  ::setenv("MASKFORGE_SEED", "31", 1);
  auto r = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out", s.dir.path().string(),
                    "--iterations", "1"});
  EXPECT_EQ(read_json(s.dir / "explain_manifest.json")["seed"], 31);
  r = run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--out", s.dir.path().string(),
               "--iterations", "1", "--seed", "5"});
  ::unsetenv("MASKFORGE_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(s.dir / "explain_manifest.json")["seed"], 5);
}

TEST(CliExplain, ErrorsMapToExitCodes) {
  const Scene s;
  const std::string out = s.dir.path().string();
  EXPECT_EQ(run_cli({"explain", "--image", (s.dir / "missing.png").string(), "--model", s.model}).code, 4);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string(), "--model", "builtin:nothing"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string(), "--model", "builtin:linear", "--class", "7"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--preset", "best"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string(), "--model", s.model, "--resolution", "99"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string()}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--image", s.image.string(), "--model", "bridge:tcp:127.0.0.1:1", "--out", out}).code,
            3);
}

TEST(CliEvaluate, TiesOnConstantModel) {
  const Scene s;
  io::write_heatmap_csv(s.dir / "ties.csv", Grid(7, 7, 1, 0.5));
  const auto r = run_cli({"evaluate", "--image", s.image.string(), "--model", "builtin:constant:0.37", "--heatmap",
                          (s.dir / "ties.csv").string(), "--orientation", "mask", "--out", s.dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json summary = read_json(s.dir / "evaluate_summary.json");
  EXPECT_NEAR(summary["deletion_auc"].get<double>(), 0.37, 1e-12);
  EXPECT_NEAR(summary["insertion_auc"].get<double>(), 0.37, 1e-12);
  const std::string curve = io::read_text(s.dir / "evaluate_deletion.csv");
  EXPECT_EQ(curve.rfind("fraction,confidence\n", 0), 0u);
}

TEST(CliEvaluate, OracleInsertionBeatsDeletionAndOrientationsAgree) {
  const Scene s;
  Grid oracle = Grid::ones(56, 56);
  for (int y = 0; y < 56; ++y) {
    for (int x = 0; x < 56; ++x) {
      if (s.region.contains(y, x)) oracle.at(0, y, x) = 0.0;
    }
  }
  io::write_heatmap_csv(s.dir / "oracle.csv", oracle);
  io::write_heatmap_csv(s.dir / "saliency.csv", Grid::ones(56, 56) - oracle);
  const std::string out = s.dir.path().string();
  ASSERT_EQ(run_cli({"evaluate", "--image", s.image.string(), "--model", s.model, "--heatmap",
                     (s.dir / "oracle.csv").string(), "--orientation", "mask", "--out", out, "--prefix", "m"})
                .code,
            0);
  ASSERT_EQ(run_cli({"evaluate", "--image", s.image.string(), "--model", s.model, "--heatmap",
                     (s.dir / "saliency.csv").string(), "--orientation", "saliency", "--out", out, "--prefix", "s"})
                .code,
            0);
  const json m = read_json(s.dir / "m_summary.json");
  const json sal = read_json(s.dir / "s_summary.json");
  EXPECT_GT(m["insertion_auc"].get<double>(), m["deletion_auc"].get<double>());
  EXPECT_EQ(m["deletion_auc"], sal["deletion_auc"]);
  EXPECT_EQ(m["insertion_auc"], sal["insertion_auc"]);
}

TEST(CliEvaluate, MissingOrientationIsUsageError) {
  const Scene s;
  io::write_heatmap_csv(s.dir / "h.csv", Grid(4, 4, 1, 0.5));
  const auto r = run_cli({"evaluate", "--image", s.image.string(), "--model", s.model, "--heatmap",
                          (s.dir / "h.csv").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--orientation"), std::string::npos);
}

TEST(CliEvaluate, MalformedHeatmapIsIoError) {
  const Scene s;
  io::write_text(s.dir / "bad.csv", "0.1,0.2\n0.3\n");
  EXPECT_EQ(run_cli({"evaluate", "--image", s.image.string(), "--model", s.model, "--heatmap",
                     (s.dir / "bad.csv").string(), "--orientation", "mask"})
                .code,
            4);
}

TEST(CliAblate, TwoPresetRowsWithFourAucColumns) {
  TempDir dir("ablate");
  ASSERT_EQ(run_cli({"synth", "--out", (dir / "suite").string(), "--count", "3", "--size", "28"}).code, 0);
  const auto r = run_cli({"ablate", "--images", (dir / "suite").string(), "--model", "suite", "--presets",
                          "igos_pp,igos", "--resolutions", "full,14", "--iterations", "3", "--jobs", "2", "--out",
                          (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream table(io::read_text(dir / "out" / "ablation.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "preset,deletion_auc_full,insertion_auc_full,deletion_auc_14,insertion_auc_14,runs_ok,runs_failed");
  EXPECT_EQ(lines[1].rfind("igos_pp,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("igos,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "out" / "runs" / "igos_pp_14_scene_000_manifest.json"));
}

TEST(CliAblate, JobsDoNotChangeResults) {
  TempDir dir("ablate_jobs");
  ASSERT_EQ(run_cli({"synth", "--out", (dir / "suite").string(), "--count", "3", "--size", "28"}).code, 0);
  for (const char* jobs : {"1", "3"}) {
    ASSERT_EQ(run_cli({"ablate", "--images", (dir / "suite").string(), "--model", "suite", "--resolutions", "14",
                       "--iterations", "2", "--jobs", jobs, "--out", (dir / jobs).string()})
                  .code,
              0);
  }
  EXPECT_EQ(io::read_text(dir / "1" / "ablation_runs.csv"), io::read_text(dir / "3" / "ablation_runs.csv"));
}

TEST(CliAblate, EmptyDirectoryIsUsageError) {
  TempDir dir("empty");
  EXPECT_EQ(run_cli({"ablate", "--images", dir.path().string(), "--model", "builtin:linear"}).code, 2);
}

TEST(CliAblate, FailedRunsAreSkipped) {
  TempDir dir("partial");
  ASSERT_EQ(run_cli({"synth", "--out", dir.path().string(), "--count", "2", "--size", "28"}).code, 0);
  io::write_text(dir / "broken.png", "not a png");
  const auto r = run_cli({"ablate", "--images", dir.path().string(), "--model", "suite", "--resolutions", "14",
                          "--presets", "igos_pp", "--iterations", "1", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("broken.png"), std::string::npos);
  EXPECT_NE(io::read_text(dir / "out" / "ablation.csv").find(",2,1"), std::string::npos);
}

TEST(CliBridgeCheck, LoopbackPasses) {
  const auto r = run_cli({"bridge-check", "--endpoint",
                          std::string("stdio:") + MASKFORGE_CLI_PATH + " serve --model builtin:linear --shape 8x8x1"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("bridge check passed"), std::string::npos);
}

TEST(CliBridgeCheck, WrongGradientShapeExitsThree) {
  const auto r = run_cli({"bridge-check", "--endpoint", std::string("stdio:") + FAKE_BRIDGE_PATH + " bad-grad"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("payload:"), std::string::npos);
}

TEST(CliBridgeCheck, UnreachableEndpointExitsThree) {
  const auto r = run_cli({"bridge-check", "--endpoint", "tcp:127.0.0.1:1", "--timeout-ms", "500"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("FAIL handshake"), std::string::npos);
}

TEST(CliSynth, WritesSuiteIndex) {
  TempDir dir("synth");
  ASSERT_EQ(run_cli({"synth", "--out", dir.path().string(), "--count", "2", "--size", "32", "--channels", "1"}).code,
            0);
  const json suite = read_json(dir / "suite.json");
  ASSERT_EQ(suite["images"].size(), 2u);
  const Grid img = io::read_image(dir / suite["images"][0]["file"].get<std::string>());
  EXPECT_EQ(img.channels(), 1);
  EXPECT_EQ(img.height(), 32);
  const Grid oracle = io::read_heatmap(dir / suite["images"][0]["oracle"].get<std::string>());
  EXPECT_EQ(oracle.min(), 0.0);
}

TEST(MakeModel, Selectors) {
  const InputShape shape{10, 10, 1};
  EXPECT_EQ(cli::make_model("builtin:linear:3", shape)->num_classes(), 3);
  EXPECT_EQ(cli::make_model("builtin:constant", shape)->score(Grid(10, 10), 0), 0.5);
  EXPECT_EQ(cli::make_model("builtin:planted:1,1,3,3,4", shape)->num_classes(), 2);
  EXPECT_THROW(cli::make_model("builtin:planted:1,1", shape), std::exception);
  EXPECT_THROW(cli::make_model("local:thing", shape), std::exception);
  EXPECT_THROW(cli::make_model("builtin:tinyconv", {10, 10, 3}), std::exception);
}

}  // namespace
}  // namespace maskforge
