#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prtube/box.hpp"

namespace prtube {

/// Annotated action instance: one box per frame over the inclusive range
/// [t_start, t_end]. Frame indices are 1-based.
struct GroundTruthTube {
  std::string video_id;
  int class_id = 0;
  int t_start = 1;
  int t_end = 1;
  std::vector<Box> boxes;

  int length() const { return t_end - t_start + 1; }
  bool covers(int t) const { return t >= t_start && t <= t_end; }
  const Box& box_at(int t) const { return boxes[static_cast<std::size_t>(t - t_start)]; }

  /// Throws InputError on an empty range, a box count mismatch or a
  /// degenerate box.
  void validate() const;

  friend bool operator==(const GroundTruthTube&, const GroundTruthTube&) = default;
};

/// A linked, trimmed detection tube. `boxes` and `labels` hold one entry per
/// frame of [t_start, t_end]; frames the tube skipped carry the previous
/// geometry and label 0.
struct FinalTube {
  std::string video_id;
  int class_id = 0;
  int t_start = 1;
  int t_end = 1;
  double score = 0.0;
  std::vector<Box> boxes;
  std::vector<std::uint8_t> labels;

  int length() const { return t_end - t_start + 1; }
  const Box& box_at(int t) const { return boxes[static_cast<std::size_t>(t - t_start)]; }
};

}  // namespace prtube
