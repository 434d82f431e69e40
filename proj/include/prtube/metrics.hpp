#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/tube.hpp"

namespace prtube {

/// Inclusive frame interval.
struct FrameRange {
  int start = 1;
  int end = 1;
};

/// |intersection| / |union| of two inclusive frame ranges.
double temporal_iou(FrameRange a, FrameRange b);

/// Mean spatial IoU over the temporally shared frames times the temporal IoU.
double tube_iou(const FinalTube& detection, const GroundTruthTube& truth);

/// Marks detections as true positives by greedy one-to-one matching.
/// Detections are visited by descending score (stable on ties); each claims
/// the unmatched ground truth with the highest overlap and counts as a hit
/// when that overlap exceeds `threshold`. `candidates(i)` yields
/// (truth index, overlap) pairs for detection i.
template <typename CandidatesFn>
std::vector<std::uint8_t> greedy_match(std::span<const double> scores, std::size_t truth_count, double threshold,
                                       CandidatesFn&& candidates) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::uint8_t> hit(scores.size(), 0);
  std::vector<bool> taken(truth_count, false);
  for (std::size_t d : order) {
    std::optional<std::size_t> best;
    double best_overlap = 0.0;
    for (const auto& [g, overlap] : candidates(d)) {
      if (taken[g]) continue;
      if (!best || overlap > best_overlap) {
        best = g;
        best_overlap = overlap;
      }
    }
    if (best && best_overlap > threshold) {
      taken[*best] = true;
      hit[d] = 1;
    }
  }
  return hit;
}

/// All-point interpolated average precision from per-detection hit flags.
/// Returns 0 when there is no ground truth.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> hits,
                         std::size_t truth_count);

/// A frame-level detection used for frame mAP.
struct FrameDetection {
  std::string video_id;
  int frame = 0;
  CandidateBox candidate;
};

/// Per-class AP; classes without ground truth hold nullopt and are left out
/// of the mean.
struct ClassAp {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

ClassAp f_map(std::span<const FrameDetection> detections, std::span<const GroundTruthTube> truth,
              double threshold = 0.5);

ClassAp v_ap(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth, double threshold);

/// The ten thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

/// Default report thresholds: 0.1, 0.2, 0.3, 0.5, 0.75 and 0.50:0.95.
std::vector<double> default_thresholds();

struct TemporalRecovery {
  /// Per class: mean over ground-truth tubes of the best t-IoU among detected
  /// tubes of that class in the same video.
  std::vector<std::optional<double>> best_overlap;
  /// Same, but taking the highest-scoring detected tube instead.
  std::vector<std::optional<double>> best_score;
};

TemporalRecovery avg_t_iou(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth);

struct ThresholdMap {
  double threshold = 0.0;
  ClassAp ap;
};

struct EvalReport {
  std::optional<ClassAp> frame_map;  // present when frame detections were supplied
  std::vector<ThresholdMap> video_map;
  double video_map_coco = 0.0;  // mean over coco_thresholds()
  TemporalRecovery temporal;
  int classes = 0;
};

EvalReport evaluate(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth,
                    std::span<const double> thresholds,
                    std::optional<std::span<const FrameDetection>> frame_detections = std::nullopt);

}  // namespace prtube
