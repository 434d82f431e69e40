#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "prtube/errors.hpp"
#include "prtube/io.hpp"
#include "prtube/pipeline.hpp"
#include "support.hpp"

using namespace prtube;
namespace fs = std::filesystem;

namespace {

const std::string kData = PRTUBE_DATA_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("prtube_test_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Writes the bundled scenario's detections and annotations.
void synthesize(const std::vector<ScenarioSpec>& specs, const std::string& det, const std::string& ann) {
  std::vector<DetectionStream> streams;
  std::vector<GroundTruthTube> truth;
  for (const auto& s : specs) {
    auto g = generate(s);
    streams.push_back(g.stream);
    truth.insert(truth.end(), g.truth.begin(), g.truth.end());
  }
  std::ofstream d(det);
  io::write_detections(d, streams);
  std::ofstream a(ann);
  io::write_annotations(a, truth);
}

RunConfig base_config(const TempDir& dir, double alpha) {
  RunConfig cfg;
  cfg.detections_path = dir / "det.txt";
  cfg.annotations_path = dir / "ann.txt";
  cfg.tubes_out = dir / "tubes.txt";
  cfg.csv_out = dir / "report.csv";
  cfg.linker.alpha = {alpha, alpha};
  return cfg;
}

double v_map_at(const EvalReport& r, double d) {
  for (const auto& m : r.video_map) {
    if (std::abs(m.threshold - d) < 1e-9) return m.ap.mean;
  }
  return -1.0;
}

}  // namespace

TEST_CASE("pipeline on the hard-negative scenario") {
  TempDir dir;
  const auto specs = io::parse_scenarios(fs::path(kData + "/hard_negative.json"));
  synthesize(specs, dir / "det.txt", dir / "ann.txt");
  std::ostringstream table;

  const auto rate_driven = run_pipeline(base_config(dir, 1.0), table);
  REQUIRE(rate_driven.report);
  CHECK(v_map_at(*rate_driven.report, 0.5) == 1.0);
  const std::string csv_one = slurp(dir / "report.csv");
  const auto written = io::parse_tubes(fs::path(dir / "tubes.txt"));
  CHECK(written.size() == rate_driven.tubes.size());

  const auto score_driven = run_pipeline(base_config(dir, 0.0), table);
  CHECK(v_map_at(*score_driven.report, 0.5) < v_map_at(*rate_driven.report, 0.5));

  SUBCASE("identical inputs give identical CSV bytes") {
    run_pipeline(base_config(dir, 1.0), table);
    CHECK(slurp(dir / "report.csv") == csv_one);
  }
  SUBCASE("parallel videos give the same report") {
    RunConfig cfg = base_config(dir, 1.0);
    cfg.jobs = 3;
    const auto par = run_pipeline(cfg, table);
    CHECK(slurp(dir / "report.csv") == csv_one);
    CHECK(testing::compare_tubes(par.tubes, rate_driven.tubes, 0.0).empty());
  }
  SUBCASE("rate errors convert to alpha") {
    RunConfig cfg = base_config(dir, 1.0);
    cfg.linker.alpha.clear();
    cfg.rate_error = {0.0, 0.0};
    run_pipeline(cfg, table);
    CHECK(slurp(dir / "report.csv") == csv_one);
  }
}

TEST_CASE("pipeline: empty detection file") {
  TempDir dir;
  { std::ofstream(dir / "det.txt") << io::kDetectionsHeader << " classes=1\n"; }
  { std::ofstream(dir / "ann.txt") << io::kAnnotationsHeader << "\n"; }
  std::ostringstream table;
  const auto r = run_pipeline(base_config(dir, 1.0), table);
  CHECK(r.tubes.empty());
  REQUIRE(r.report);
  for (const auto& m : r.report->video_map) CHECK(m.ap.mean == 0.0);
  CHECK(r.report->video_map_coco == 0.0);
  CHECK(slurp(dir / "tubes.txt") == std::string(io::kTubesHeader) + "\n");
}

TEST_CASE("pipeline configuration errors") {
  TempDir dir;
  { std::ofstream(dir / "det.txt") << io::kDetectionsHeader << " classes=1\n"; }
  std::ostringstream table;
  RunConfig cfg = base_config(dir, 1.0);
  cfg.annotations_path.clear();
  CHECK_THROWS_AS(run_pipeline(cfg, table), ConfigError);
  cfg.evaluate = false;
  CHECK_NOTHROW(run_pipeline(cfg, table));
  cfg.grids_path = dir / "grids.txt";
  CHECK_THROWS_AS(run_pipeline(cfg, table), ConfigError);
  cfg = base_config(dir, 1.0);
  cfg.jobs = 0;
  CHECK_THROWS_AS(run_pipeline(cfg, table), ConfigError);
  cfg = base_config(dir, 1.0);
  cfg.detections_path = dir / "missing.txt";
  CHECK_THROWS_AS(run_pipeline(cfg, table), ConfigError);
}

TEST_CASE("streaming link matches the materialized path") {
  const auto streams = io::parse_detections(fs::path(kData + "/fixture_3videos.det"));
  std::ifstream in(kData + "/fixture_3videos.det");
  io::DetectionReader reader(in);
  std::vector<FinalTube> streamed;
  const LinkerConfig cfg;
  const NmsOptions nms;
  const LinkStats stats = link_detections(reader, cfg, nms, [&](const FinalTube& t) { streamed.push_back(t); });
  CHECK(stats.videos == 3);
  std::vector<FinalTube> materialized;
  for (const auto& s : streams) {
    for (auto& t : link_stream(s, cfg, nms)) materialized.push_back(t);
  }
  CHECK(testing::compare_tubes(streamed, materialized, 0.0).empty());
}

TEST_CASE("raw grids decode into a detection file") {
  const GridShape shape{3, 5, 2};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  std::ostringstream grids;
  io::write_grid_header(grids);
  for (int f = 1; f <= 4; ++f) {
    std::vector<double> flat(shape.size());
    for (double& v : flat) v = n(rng);
    io::write_grid(grids, "g", f, RawGrid::from_flat(shape, flat));
  }
  std::istringstream in(grids.str());
  std::ostringstream dets;
  CHECK(decode_grids(in, dets, default_anchors(), {}) == 4);
  std::istringstream back(dets.str());
  const auto streams = io::parse_detections(back);
  REQUIRE(streams.size() == 1);
  CHECK(streams[0].classes == 2);
  CHECK(streams[0].frame_count() == 4);
}
