// prtube: decode grids, link tubes, evaluate, synthesize scenarios and
// check loss gradients from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "prtube/errors.hpp"
#include "prtube/io.hpp"
#include "prtube/loss.hpp"
#include "prtube/pipeline.hpp"

namespace {

using namespace prtube;

struct LinkFlags {
  double gamma = 0.3;
  int patience = 6;
  int max_tubes = 10;
  double score_floor = 1e-3;
  std::vector<double> alpha;
  std::vector<double> rate_error;
  double score_threshold = 1e-3;
  double nms_iou = 0.45;
};

void add_nms_flags(CLI::App* cmd, LinkFlags& f) {
  cmd->add_option("--score-threshold", f.score_threshold, "drop candidates at or below this confidence")
      ->capture_default_str();
  cmd->add_option("--nms-iou", f.nms_iou, "suppress boxes overlapping a kept box above this IoU")
      ->capture_default_str();
}

void add_link_flags(CLI::App* cmd, LinkFlags& f) {
  add_nms_flags(cmd, f);
  cmd->add_option("--gamma", f.gamma, "IoU gate for linking")->capture_default_str();
  cmd->add_option("--patience,-K", f.patience, "accumulator cap and completion patience")->capture_default_str();
  cmd->add_option("--max-tubes,-M", f.max_tubes, "live tubes kept per class")->capture_default_str();
  cmd->add_option("--score-floor", f.score_floor, "minimum confidence for seeding a tube")->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "per-class score/rate trade-off (class order)")->delimiter(',');
  cmd->add_option("--rate-error", f.rate_error, "per-class mean rate training error, converted to alpha")
      ->delimiter(',');
}

RunConfig to_config(const LinkFlags& f) {
  RunConfig cfg;
  cfg.linker.iou_gate = f.gamma;
  cfg.linker.patience = f.patience;
  cfg.linker.max_tubes = f.max_tubes;
  cfg.linker.score_floor = f.score_floor;
  cfg.linker.alpha = f.alpha;
  cfg.rate_error = f.rate_error;
  cfg.nms.score_threshold = f.score_threshold;
  cfg.nms.nms_iou = f.nms_iou;
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return in;
}

int cmd_decode(const std::string& grids, const std::string& out_path, const LinkFlags& f) {
  RunConfig cfg = to_config(f);
  cfg.resolve();
  auto in = open_in(grids);
  auto out = open_out(out_path);
  const long frames = decode_grids(in, out, cfg.anchors, cfg.nms, grids);
  std::fprintf(stderr, "decoded %ld frames\n", frames);
  return 0;
}

int cmd_link(const std::string& detections, const std::string& out_path, const std::string& engine,
             const LinkFlags& f) {
  RunConfig cfg = to_config(f);
  cfg.resolve();
  auto in = open_in(detections);
  auto out = open_out(out_path);
  io::write_tube_header(out);

  if (engine == "oracle") {
    // Reference path: materialize each video and run the plain transcription.
    long tubes = 0;
    for (DetectionStream s : io::parse_detections(in, detections)) {
      for (auto& frame : s.frames) frame = refilter(frame, cfg.nms);
      for (const FinalTube& t : oracle_link(s, cfg.linker)) {
        io::write_tube(out, t);
        ++tubes;
      }
    }
    std::fprintf(stderr, "linked %ld tubes (oracle)\n", tubes);
    return 0;
  }

  io::DetectionReader reader(in, detections);
  const LinkStats stats = link_detections(reader, cfg.linker, cfg.nms, [&](const FinalTube& t) { io::write_tube(out, t); });
  std::fprintf(stderr, "linked %ld tubes from %ld frames in %d videos (peak %zu resident boxes)\n", stats.tubes,
               stats.frames, stats.videos, stats.peak_resident_boxes);
  return 0;
}

int cmd_eval(const std::string& tubes_path, const std::string& annotations, const std::string& thresholds,
             const std::string& detections, const std::string& csv) {
  const auto tubes = io::parse_tubes(std::filesystem::path(tubes_path));
  const auto truth = io::parse_annotations(std::filesystem::path(annotations));
  const auto deltas = io::parse_thresholds(thresholds);

  std::vector<FrameDetection> frames;
  if (!detections.empty()) {
    auto in = open_in(detections);
    io::DetectionReader reader(in, detections);
    while (auto f = reader.next()) {
      for (const auto& per_class : f->boxes) {
        for (const CandidateBox& b : per_class) frames.push_back({f->video_id, f->frame, b});
      }
    }
  }
  const auto report = detections.empty()
                          ? evaluate(tubes, truth, deltas)
                          : evaluate(tubes, truth, deltas, std::span<const FrameDetection>(frames));
  io::print_report(std::cout, report);
  if (!csv.empty()) {
    auto out = open_out(csv);
    io::write_report_csv(out, report);
  }
  return 0;
}

int cmd_synth(const std::string& scenario, const std::string& det_path, const std::string& ann_path) {
  const auto specs = io::parse_scenarios(std::filesystem::path(scenario));
  std::vector<DetectionStream> streams;
  std::vector<GroundTruthTube> truth;
  for (const ScenarioSpec& spec : specs) {
    auto g = generate(spec);
    streams.push_back(std::move(g.stream));
    std::move(g.truth.begin(), g.truth.end(), std::back_inserter(truth));
  }
  auto det = open_out(det_path);
  io::write_detections(det, streams);
  auto ann = open_out(ann_path);
  io::write_annotations(ann, truth);
  std::fprintf(stderr, "generated %zu videos, %zu ground-truth tubes\n", streams.size(), truth.size());
  return 0;
}

int cmd_losscheck(int seeds, double eps, int cells, int anchors, int classes) {
  AnchorSet set = default_anchors();
  if (anchors < 1) throw ConfigError("anchors must be >= 1");
  set.resize(static_cast<std::size_t>(anchors), set.back());
  const GridShape shape{cells, anchors, classes};
  shape.validate();
  if (!(eps > 0 && eps < 1e-2)) throw ConfigError("eps must lie in (0, 0.01)");

  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto c = random_gradient_case(static_cast<std::uint64_t>(s), shape, set);
    worst = std::max(worst, check_gradients(c.pred, c.target, LossWeights{}, eps));
  }
  std::printf("max relative error %.3e over %d seeds\n", worst, seeds);
  return worst < 1e-4 ? 0 : 1;
}

int cmd_run(RunConfig cfg, const LinkFlags& f) {
  const RunConfig base = to_config(f);
  cfg.linker = base.linker;
  cfg.rate_error = base.rate_error;
  cfg.nms = base.nms;
  const auto result = run_pipeline(cfg, std::cout);
  std::fprintf(stderr, "linked %ld tubes from %ld frames in %d videos\n", result.stats.tubes, result.stats.frames,
               result.stats.videos);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online action-tube linking with progress-rate temporal labeling"};
  app.set_config("--config", "", "TOML file with option values; [section] per subcommand");
  app.require_subcommand(1);

  LinkFlags flags;
  std::string in_path, out_path, engine = "stream";

  auto* decode = app.add_subcommand("decode", "raw grids -> detections");
  decode->add_option("--grids", in_path, "raw-grid file")->required()->envname("PRTUBE_GRIDS");
  decode->add_option("--out,-o", out_path, "detection file to write")->required();
  add_nms_flags(decode, flags);

  auto* link = app.add_subcommand("link", "detections -> tubes");
  link->add_option("--detections", in_path, "detection file")->required()->envname("PRTUBE_DETECTIONS");
  link->add_option("--out,-o", out_path, "tube file to write")->required()->envname("PRTUBE_TUBES");
  link->add_option("--engine", engine, "stream (default) or oracle")
      ->check(CLI::IsMember({"stream", "oracle"}))
      ->capture_default_str();
  add_link_flags(link, flags);

  std::string tubes_path, annotations, thresholds = "0.1,0.2,0.3,0.5:0.95", csv, frame_dets;
  auto* eval = app.add_subcommand("eval", "tubes + annotations -> report");
  eval->add_option("--tubes", tubes_path, "tube file")->required()->envname("PRTUBE_TUBES");
  eval->add_option("--annotations", annotations, "annotation file")->required()->envname("PRTUBE_ANNOTATIONS");
  eval->add_option("--thresholds", thresholds, "tube-IoU thresholds, e.g. 0.5 or 0.5:0.95")->capture_default_str();
  eval->add_option("--detections", frame_dets, "detections for frame mAP")->envname("PRTUBE_DETECTIONS");
  eval->add_option("--csv", csv, "CSV report to write")->envname("PRTUBE_CSV");

  std::string scenario, ann_out;
  auto* synth = app.add_subcommand("synth", "scenario -> detections + annotations");
  synth->add_option("--scenario", scenario, "scenario JSON file")->required()->envname("PRTUBE_SCENARIO");
  synth->add_option("--detections", out_path, "detection file to write")->required();
  synth->add_option("--annotations", ann_out, "annotation file to write")->required();

  int seeds = 100, cells = 3, anchors = 5, classes = 2;
  double eps = 1e-5;
  auto* losscheck = app.add_subcommand("losscheck", "finite-difference check of the loss gradients");
  losscheck->add_option("--seeds", seeds, "random cases")->capture_default_str();
  losscheck->add_option("--eps", eps, "central difference step")->capture_default_str();
  losscheck->add_option("--cells", cells, "grid side S")->capture_default_str();
  losscheck->add_option("--anchors", anchors, "anchors per cell B")->capture_default_str();
  losscheck->add_option("--classes", classes, "classes C")->capture_default_str();

  RunConfig run_cfg;
  std::string run_thresholds = "0.1,0.2,0.3,0.5:0.95";
  bool no_eval = false;
  auto* run = app.add_subcommand("run", "detections or grids -> tubes -> report");
  auto* run_det = run->add_option("--detections", run_cfg.detections_path, "detection file")
                      ->envname("PRTUBE_DETECTIONS");
  run->add_option("--grids", run_cfg.grids_path, "raw-grid file")->envname("PRTUBE_GRIDS")->excludes(run_det);
  run->add_option("--annotations", run_cfg.annotations_path, "annotation file")->envname("PRTUBE_ANNOTATIONS");
  run->add_option("--tubes-out", run_cfg.tubes_out, "tube file to write")->envname("PRTUBE_TUBES");
  run->add_option("--csv", run_cfg.csv_out, "CSV report to write")->envname("PRTUBE_CSV");
  run->add_option("--thresholds", run_thresholds, "tube-IoU thresholds")->capture_default_str();
  run->add_option("--jobs,-j", run_cfg.jobs, "videos linked in parallel")->capture_default_str();
  run->add_flag("--no-eval", no_eval, "skip evaluation");
  add_link_flags(run, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*decode) return cmd_decode(in_path, out_path, flags);
    if (*link) return cmd_link(in_path, out_path, engine, flags);
    if (*eval) return cmd_eval(tubes_path, annotations, thresholds, frame_dets, csv);
    if (*synth) return cmd_synth(scenario, out_path, ann_out);
    if (*losscheck) return cmd_losscheck(seeds, eps, cells, anchors, classes);
    if (*run) {
      run_cfg.thresholds = io::parse_thresholds(run_thresholds);
      run_cfg.evaluate = !no_eval;
      return cmd_run(run_cfg, flags);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "prtube: configuration error: %s\n", e.what());
    return 2;
  } catch (const prtube::Error& e) {
    std::fprintf(stderr, "prtube: %s\n", e.what());
    return 1;
  }
  return 0;
}
