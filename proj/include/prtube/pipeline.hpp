#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/io.hpp"
#include "prtube/linker.hpp"
#include "prtube/metrics.hpp"
#include "prtube/synthetic.hpp"

namespace prtube {

struct RunConfig {
  LinkerConfig linker;
  NmsOptions nms;
  AnchorSet anchors = default_anchors();
  std::vector<double> thresholds = default_thresholds();
  /// Per-class mean rate training error; converted to alpha when no
  /// explicit alpha is given for the class.
  std::vector<double> rate_error;

  std::string detections_path;
  std::string grids_path;
  std::string annotations_path;
  std::string tubes_out;
  std::string csv_out;
  bool evaluate = true;
  int jobs = 1;

  /// Fills linker.alpha from rate_error where missing and validates.
  void resolve();
};

/// Re-applies thresholding and NMS to one frame's candidates.
ClassCandidates refilter(const ClassCandidates& boxes, const NmsOptions& nms);

/// Links a fully materialized stream.
std::vector<FinalTube> link_stream(const DetectionStream& stream, const LinkerConfig& linker, const NmsOptions& nms);

struct LinkStats {
  long frames = 0;
  int videos = 0;
  long tubes = 0;
  std::size_t peak_resident_boxes = 0;
};

using TubeSink = std::function<void(const FinalTube&)>;
using FrameSink = std::function<void(const io::FrameRecords&)>;

/// Streams a detection file through per-video linkers, holding one frame of
/// input at a time. Tubes reach `sink` as soon as they complete;
/// `on_frame` sees every post-NMS frame.
LinkStats link_detections(io::DetectionReader& reader, const LinkerConfig& linker, const NmsOptions& nms,
                          const TubeSink& sink, const FrameSink& on_frame = {});

/// Links a lazily generated scenario without materializing it.
LinkStats link_source(FrameSource& source, const std::string& video_id, int classes, const LinkerConfig& linker,
                      const NmsOptions& nms, const TubeSink& sink);

/// Decodes a raw-grid file into a detection file.
long decode_grids(std::istream& in, std::ostream& out, const AnchorSet& anchors, const NmsOptions& nms,
                  const std::string& source = "<rawgrid>");

struct PipelineResult {
  std::vector<FinalTube> tubes;
  std::optional<EvalReport> report;
  LinkStats stats;
};

/// Detections (or raw grids) -> NMS -> linking -> optional evaluation.
/// Writes tubes and the CSV report to the configured paths and prints the
/// report table to `table`.
PipelineResult run_pipeline(const RunConfig& config, std::ostream& table);

}  // namespace prtube
