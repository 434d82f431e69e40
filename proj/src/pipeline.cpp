#include "prtube/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iterator>
#include <ostream>
#include <sstream>

#include "prtube/errors.hpp"

namespace prtube {

void RunConfig::resolve() {
  for (std::size_t c = linker.alpha.size(); c < rate_error.size(); ++c) {
    if (!(rate_error[c] >= 0)) throw ConfigError("rate errors must be non-negative");
    linker.alpha.push_back(alpha_from_training_error(rate_error[c]));
  }
  linker.validate();
  if (!(nms.score_threshold >= 0 && nms.score_threshold < 1)) throw ConfigError("score threshold must lie in [0, 1)");
  if (!(nms.nms_iou > 0 && nms.nms_iou < 1)) throw ConfigError("NMS IoU must lie in (0, 1)");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (thresholds.empty()) throw ConfigError("at least one tube-IoU threshold is required");
}

ClassCandidates refilter(const ClassCandidates& boxes, const NmsOptions& nms) {
  ClassCandidates out(boxes.size());
  for (std::size_t c = 0; c < boxes.size(); ++c) out[c] = suppress(boxes[c], nms);
  return out;
}

std::vector<FinalTube> link_stream(const DetectionStream& stream, const LinkerConfig& linker, const NmsOptions& nms) {
  VideoLinker video(linker, std::max(stream.classes, 1), stream.video_id);
  std::vector<FinalTube> out;
  for (int f = 1; f <= stream.frame_count(); ++f) {
    video.step(f, refilter(stream.frames[static_cast<std::size_t>(f - 1)], nms));
    auto done = video.take_finished();
    std::move(done.begin(), done.end(), std::back_inserter(out));
  }
  auto rest = video.finalize();
  std::move(rest.begin(), rest.end(), std::back_inserter(out));
  return out;
}

LinkStats link_detections(io::DetectionReader& reader, const LinkerConfig& linker, const NmsOptions& nms,
                          const TubeSink& sink, const FrameSink& on_frame) {
  LinkStats stats;
  std::optional<VideoLinker> video;
  std::string current;
  auto flush = [&](std::vector<FinalTube> tubes) {
    for (const FinalTube& t : tubes) {
      ++stats.tubes;
      if (sink) sink(t);
    }
  };

  while (auto frame = reader.next()) {
    if (!video || frame->video_id != current) {
      if (video) flush(video->finalize());
      current = frame->video_id;
      video.emplace(linker, reader.classes(), current);
      ++stats.videos;
    }
    frame->boxes = refilter(frame->boxes, nms);
    if (on_frame) on_frame(*frame);
    video->step(frame->frame, frame->boxes);
    flush(video->take_finished());
    stats.peak_resident_boxes = std::max(stats.peak_resident_boxes, video->resident_boxes());
    ++stats.frames;
  }
  if (video) flush(video->finalize());
  return stats;
}

LinkStats link_source(FrameSource& source, const std::string& video_id, int classes, const LinkerConfig& linker,
                      const NmsOptions& nms, const TubeSink& sink) {
  LinkStats stats;
  stats.videos = 1;
  VideoLinker video(linker, classes, video_id);
  auto flush = [&](std::vector<FinalTube> tubes) {
    for (const FinalTube& t : tubes) {
      ++stats.tubes;
      if (sink) sink(t);
    }
  };
  while (!source.done()) {
    const int f = source.next_frame();
    video.step(f, refilter(source.next(), nms));
    flush(video.take_finished());
    stats.peak_resident_boxes = std::max(stats.peak_resident_boxes, video.resident_boxes());
    ++stats.frames;
  }
  flush(video.finalize());
  return stats;
}

long decode_grids(std::istream& in, std::ostream& out, const AnchorSet& anchors, const NmsOptions& nms,
                  const std::string& source) {
  io::GridReader reader(in, source);
  std::optional<io::DetectionWriter> writer;
  int classes = 0;
  long frames = 0;
  while (auto rec = reader.next()) {
    if (!writer) {
      classes = rec->grid.shape.classes;
      writer.emplace(out, classes);
    } else if (rec->grid.shape.classes != classes) {
      throw StructuralError(source + ": class count changes between frames");
    }
    const auto decoded = decode_grid(rec->grid, anchors);
    writer->write(rec->video_id, rec->frame, filter_and_nms(decoded, classes, nms));
    ++frames;
  }
  if (!writer) io::DetectionWriter(out, 1);
  return frames;
}

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

// Links every video of a materialized file, `jobs` videos at a time.
std::vector<FinalTube> link_parallel(const std::vector<DetectionStream>& streams, const RunConfig& config,
                                     std::vector<FrameDetection>& frames) {
  std::vector<std::vector<FinalTube>> per_video(streams.size());
  for (std::size_t begin = 0; begin < streams.size(); begin += static_cast<std::size_t>(config.jobs)) {
    const std::size_t end = std::min(streams.size(), begin + static_cast<std::size_t>(config.jobs));
    std::vector<std::future<std::vector<FinalTube>>> work;
    for (std::size_t v = begin; v < end; ++v) {
      work.push_back(std::async(std::launch::async, [&, v] { return link_stream(streams[v], config.linker, config.nms); }));
    }
    for (std::size_t v = begin; v < end; ++v) per_video[v] = work[v - begin].get();
  }
  std::vector<FinalTube> out;
  for (std::size_t v = 0; v < streams.size(); ++v) {
    const DetectionStream& s = streams[v];
    for (int f = 1; f <= s.frame_count(); ++f) {
      for (const auto& per_class : refilter(s.frames[static_cast<std::size_t>(f - 1)], config.nms)) {
        for (const CandidateBox& b : per_class) frames.push_back({s.video_id, f, b});
      }
    }
    std::move(per_video[v].begin(), per_video[v].end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config_in, std::ostream& table) {
  RunConfig config = config_in;
  config.resolve();
  if (config.evaluate && config.annotations_path.empty()) {
    throw ConfigError("evaluation requested but no annotation file given");
  }
  if (config.detections_path.empty() == config.grids_path.empty()) {
    throw ConfigError("give exactly one of a detection file or a raw-grid file");
  }

  // Raw grids are decoded into an in-memory detection file first.
  std::stringstream decoded;
  std::ifstream file_in;
  std::istream* det_in = nullptr;
  std::string source;
  if (!config.grids_path.empty()) {
    std::ifstream grids(config.grids_path);
    if (!grids) throw ConfigError("cannot open '" + config.grids_path + "'");
    decode_grids(grids, decoded, config.anchors, config.nms, config.grids_path);
    det_in = &decoded;
    source = config.grids_path;
  } else {
    file_in.open(config.detections_path);
    if (!file_in) throw ConfigError("cannot open '" + config.detections_path + "'");
    det_in = &file_in;
    source = config.detections_path;
  }

  PipelineResult result;
  std::vector<FrameDetection> frames;
  std::optional<std::ofstream> tubes_out;
  if (!config.tubes_out.empty()) {
    tubes_out = open_output(config.tubes_out);
    io::write_tube_header(*tubes_out);
  }

  if (config.jobs == 1) {
    io::DetectionReader reader(*det_in, source);
    result.stats = link_detections(
        reader, config.linker, config.nms,
        [&](const FinalTube& t) {
          if (tubes_out) io::write_tube(*tubes_out, t);
          if (config.evaluate) result.tubes.push_back(t);
        },
        [&](const io::FrameRecords& f) {
          if (!config.evaluate) return;
          for (const auto& per_class : f.boxes) {
            for (const CandidateBox& b : per_class) frames.push_back({f.video_id, f.frame, b});
          }
        });
  } else {
    const auto streams = io::parse_detections(*det_in, source);
    result.tubes = link_parallel(streams, config, frames);
    result.stats.videos = static_cast<int>(streams.size());
    result.stats.tubes = static_cast<long>(result.tubes.size());
    for (const auto& s : streams) result.stats.frames += s.frame_count();
    if (tubes_out) {
      for (const FinalTube& t : result.tubes) io::write_tube(*tubes_out, t);
    }
  }

  if (config.evaluate) {
    const auto truth = io::parse_annotations(std::filesystem::path(config.annotations_path));
    const std::span<const FrameDetection> frame_span(frames);
    result.report = evaluate(result.tubes, truth, config.thresholds, frame_span);
    io::print_report(table, *result.report);
    if (!config.csv_out.empty()) {
      auto csv = open_output(config.csv_out);
      io::write_report_csv(csv, *result.report);
    }
  }
  return result;
}

}  // namespace prtube
