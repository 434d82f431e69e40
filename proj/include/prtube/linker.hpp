#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/tube.hpp"

namespace prtube {

struct LinkerConfig {
  /// Minimum IoU (exclusive) between a box and a tube's last box for linking.
  double iou_gate = 0.3;
  /// K: accumulator cap, label window and completion patience.
  int patience = 6;
  /// M: live tubes kept per class after each frame's sort.
  int max_tubes = 10;
  /// Per-class score/rate trade-off; a class missing here uses 1.
  std::vector<double> alpha;
  /// Boxes at or below this confidence never seed a tube.
  double score_floor = 1e-3;

  double alpha_for(int class_id) const;
  void validate() const;
};

/// Maps a class's mean progress-rate training error to its trade-off factor.
double alpha_from_training_error(double mean_rate_error);

struct LinkedBox {
  int frame = 0;
  Box box;
  double score = 0.0;
  double rate = 0.0;
  std::uint8_t label = 0;

  friend bool operator==(const LinkedBox&, const LinkedBox&) = default;
};

enum class TubeStatus { active, completed };

struct TubeState {
  std::uint64_t id = 0;
  int class_id = 0;
  std::vector<LinkedBox> boxes;
  int n_up = 0;
  int n_down = 0;
  double score_sum = 0.0;
  double avg_score = 0.0;
  int frames_since_link = 0;
  TubeStatus status = TubeStatus::active;

  int t_start() const { return boxes.front().frame; }
  int t_end() const { return boxes.back().frame; }
  const LinkedBox& last() const { return boxes.back(); }
};

/// Starts a tube from a single box: label 0, both accumulators 0.
TubeState seed_tube(std::uint64_t id, int class_id, int frame, const CandidateBox& box);

/// Appends a linked box and runs one step of the online temporal labeling:
/// saturating rate accumulators, then relabeling of the linked frames that
/// fall inside the trailing window [frame - K + 1, frame].
void temporal_label_step(TubeState& tube, const LinkedBox& incoming, double alpha, int patience);

/// Trims a tube to the tightest interval covering its label-1 frames.
/// Returns nothing when no frame carries label 1.
std::optional<FinalTube> trim_tube(const TubeState& tube, const std::string& video_id = {});

/// Online tube generation for one class of one video. Frames must arrive in
/// strictly increasing order; skipped frame indices count as empty frames.
/// Frame 1 opens at most M tubes; later frames open one per unclaimed box.
class TubeLinker {
 public:
  TubeLinker(const LinkerConfig& config, int class_id, std::string video_id = {});

  void step(int frame, std::span<const CandidateBox> boxes);

  /// Removes and returns the tubes completed so far (already trimmed).
  std::vector<FinalTube> take_finished();

  /// Completes every live tube; returns everything not yet taken.
  std::vector<FinalTube> finalize();

  const std::vector<TubeState>& active() const { return active_; }
  std::optional<int> last_frame() const { return last_frame_; }
  int class_id() const { return class_id_; }
  /// Boxes currently held by live tubes.
  std::size_t resident_boxes() const;

 private:
  void process_frame(int frame, std::span<const CandidateBox> boxes);
  void complete(TubeState& tube);

  double gate_;
  int patience_;
  int max_tubes_;
  double alpha_;
  double score_floor_;
  int class_id_;
  std::string video_id_;
  std::optional<int> last_frame_;
  std::uint64_t next_id_ = 0;
  std::vector<TubeState> active_;
  std::vector<FinalTube> finished_;
};

/// Per-class linkers for one video.
class VideoLinker {
 public:
  VideoLinker(const LinkerConfig& config, int classes, std::string video_id = {});

  /// `frame_boxes[c]` holds class c's candidates; missing classes are empty.
  void step(int frame, const ClassCandidates& frame_boxes);
  std::vector<FinalTube> take_finished();
  std::vector<FinalTube> finalize();

  const TubeLinker& linker(int class_id) const { return linkers_[static_cast<std::size_t>(class_id)]; }
  int classes() const { return static_cast<int>(linkers_.size()); }
  std::size_t resident_boxes() const;

 private:
  std::vector<TubeLinker> linkers_;
};

}  // namespace prtube
