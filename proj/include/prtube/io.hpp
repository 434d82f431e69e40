#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/metrics.hpp"
#include "prtube/synthetic.hpp"
#include "prtube/tube.hpp"

namespace prtube::io {

/// Line-oriented text formats. Each file starts with a header naming the
/// format and its version; detection and grid headers also carry the class
/// count. Fields are whitespace separated; reals use 9 significant digits.
///
///   # prtube detections v1 classes=<C>
///   <video> <frame> <class> <x_min> <y_min> <x_max> <y_max> <confidence> <rate>
///
///   # prtube tubes v1
///   <video> <class> <t_start> <t_end> <score> (<x_min> <y_min> <x_max> <y_max>){t_end-t_start+1}
///
///   # prtube annotations v1
///   <video> <class> <t_start> <t_end> (<x_min> <y_min> <x_max> <y_max>){t_end-t_start+1}
///
///   # prtube rawgrid v1
///   <video> <frame> <S> <B> <C> <S*S*B*(5+3C) logits>
inline constexpr const char* kDetectionsHeader = "# prtube detections v1";
inline constexpr const char* kTubesHeader = "# prtube tubes v1";
inline constexpr const char* kAnnotationsHeader = "# prtube annotations v1";
inline constexpr const char* kRawGridHeader = "# prtube rawgrid v1";

std::string format_real(double v);

/// All candidates of one video frame, grouped by class.
struct FrameRecords {
  std::string video_id;
  int frame = 0;
  ClassCandidates boxes;
};

/// Streaming detection reader: holds one frame at a time. Videos must be
/// contiguous and frames strictly increasing within a video.
class DetectionReader {
 public:
  explicit DetectionReader(std::istream& in, std::string source = "<detections>");

  int classes() const { return classes_; }
  std::optional<FrameRecords> next();

 private:
  struct Record {
    std::string video;
    int frame = 0;
    CandidateBox box;
  };
  std::optional<Record> read_record();
  [[noreturn]] void fail_parse(const std::string& what) const;

  std::istream& in_;
  std::string source_;
  int classes_ = 0;
  long line_ = 0;
  std::optional<Record> pending_;
  std::string current_video_;
  int current_frame_ = 0;
  std::vector<std::string> finished_videos_;
};

class DetectionWriter {
 public:
  DetectionWriter(std::ostream& out, int classes);
  void write(const std::string& video_id, int frame, const ClassCandidates& boxes);

 private:
  std::ostream& out_;
  int classes_;
};

/// Materializes every video of a detection file; frames without records are
/// filled with empty candidate lists.
std::vector<DetectionStream> parse_detections(std::istream& in, const std::string& source = "<detections>");
std::vector<DetectionStream> parse_detections(const std::filesystem::path& path);
void write_detections(std::ostream& out, std::span<const DetectionStream> streams);

void write_tube_header(std::ostream& out);
void write_tube(std::ostream& out, const FinalTube& tube);
std::vector<FinalTube> parse_tubes(std::istream& in, const std::string& source = "<tubes>");
std::vector<FinalTube> parse_tubes(const std::filesystem::path& path);

void write_annotations(std::ostream& out, std::span<const GroundTruthTube> truth);
std::vector<GroundTruthTube> parse_annotations(std::istream& in, const std::string& source = "<annotations>");
std::vector<GroundTruthTube> parse_annotations(const std::filesystem::path& path);

struct GridRecord {
  std::string video_id;
  int frame = 0;
  RawGrid grid;
};

/// Reads raw grids one frame at a time.
class GridReader {
 public:
  explicit GridReader(std::istream& in, std::string source = "<rawgrid>");
  std::optional<GridRecord> next();

 private:
  std::istream& in_;
  std::string source_;
  long line_ = 0;
  std::string last_video_;
  int last_frame_ = 0;
};

void write_grid_header(std::ostream& out);
void write_grid(std::ostream& out, const std::string& video_id, int frame, const RawGrid& grid);

/// Scenario file: JSON object with shared "seed"/"noise" and a "videos" list.
std::vector<ScenarioSpec> parse_scenarios(std::istream& in, const std::string& source = "<scenario>");
std::vector<ScenarioSpec> parse_scenarios(const std::filesystem::path& path);

/// CSV columns: metric,class,threshold,value.
void write_report_csv(std::ostream& out, const EvalReport& report);
void print_report(std::ostream& out, const EvalReport& report);

/// Parses "0.5", "0.1,0.3", "0.5:0.95" (step 0.05) or "0.5:0.95:0.1".
std::vector<double> parse_thresholds(const std::string& text);

}  // namespace prtube::io
