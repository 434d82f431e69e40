#include "prtube/metrics.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "prtube/errors.hpp"

namespace prtube {

void GroundTruthTube::validate() const {
  if (t_start < 1 || t_end < t_start) {
    throw InputError("ground-truth tube in '" + video_id + "' has invalid range [" + std::to_string(t_start) +
                     ", " + std::to_string(t_end) + "]");
  }
  if (static_cast<int>(boxes.size()) != length()) {
    throw InputError("ground-truth tube in '" + video_id + "' needs one box per frame");
  }
  for (const Box& b : boxes) {
    if (b.degenerate()) throw InputError("ground-truth tube in '" + video_id + "' has a degenerate box");
  }
}

double temporal_iou(FrameRange a, FrameRange b) {
  const int inter = std::min(a.end, b.end) - std::max(a.start, b.start) + 1;
  if (inter <= 0) return 0.0;
  const int uni = (a.end - a.start + 1) + (b.end - b.start + 1) - inter;
  return static_cast<double>(inter) / uni;
}

double tube_iou(const FinalTube& detection, const GroundTruthTube& truth) {
  const int lo = std::max(detection.t_start, truth.t_start);
  const int hi = std::min(detection.t_end, truth.t_end);
  if (lo > hi) return 0.0;
  double spatial = 0.0;
  for (int t = lo; t <= hi; ++t) spatial += box_iou(detection.box_at(t), truth.box_at(t));
  spatial /= (hi - lo + 1);
  return spatial * temporal_iou({detection.t_start, detection.t_end}, {truth.t_start, truth.t_end});
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> hits,
                         std::size_t truth_count) {
  if (truth_count == 0) return 0.0;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> recall{0.0};
  std::vector<double> precision{0.0};
  double tp = 0;
  double fp = 0;
  for (std::size_t d : order) {
    (hits[d] ? tp : fp) += 1;
    recall.push_back(tp / static_cast<double>(truth_count));
    precision.push_back(tp / (tp + fp));
  }
  recall.push_back(1.0);
  precision.push_back(0.0);

  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

namespace {

int class_count(std::span<const GroundTruthTube> truth, int at_least) {
  int n = at_least;
  for (const auto& g : truth) n = std::max(n, g.class_id + 1);
  return n;
}

void finish_mean(ClassAp& out) {
  double sum = 0.0;
  int n = 0;
  for (const auto& ap : out.per_class) {
    if (ap) {
      sum += *ap;
      ++n;
    }
  }
  out.mean = n > 0 ? sum / n : 0.0;
}

}  // namespace

ClassAp f_map(std::span<const FrameDetection> detections, std::span<const GroundTruthTube> truth, double threshold) {
  int classes = 0;
  for (const auto& d : detections) classes = std::max(classes, d.candidate.class_id + 1);
  classes = class_count(truth, classes);

  ClassAp out;
  out.per_class.assign(static_cast<std::size_t>(classes), std::nullopt);
  for (int c = 0; c < classes; ++c) {
    std::vector<Box> gt_boxes;
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_frame;
    for (const auto& g : truth) {
      if (g.class_id != c) continue;
      for (int t = g.t_start; t <= g.t_end; ++t) {
        by_frame[{g.video_id, t}].push_back(gt_boxes.size());
        gt_boxes.push_back(g.box_at(t));
      }
    }
    if (gt_boxes.empty()) continue;

    std::vector<const FrameDetection*> dets;
    std::vector<double> scores;
    for (const auto& d : detections) {
      if (d.candidate.class_id != c) continue;
      dets.push_back(&d);
      scores.push_back(d.candidate.confidence);
    }
    const auto hits = greedy_match(scores, gt_boxes.size(), threshold, [&](std::size_t i) {
      std::vector<std::pair<std::size_t, double>> cands;
      const auto it = by_frame.find({dets[i]->video_id, dets[i]->frame});
      if (it == by_frame.end()) return cands;
      for (std::size_t g : it->second) cands.emplace_back(g, box_iou(dets[i]->candidate.box, gt_boxes[g]));
      return cands;
    });
    out.per_class[static_cast<std::size_t>(c)] = average_precision(scores, hits, gt_boxes.size());
  }
  finish_mean(out);
  return out;
}

ClassAp v_ap(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth, double threshold) {
  int classes = 0;
  for (const auto& t : tubes) classes = std::max(classes, t.class_id + 1);
  classes = class_count(truth, classes);

  ClassAp out;
  out.per_class.assign(static_cast<std::size_t>(classes), std::nullopt);
  for (int c = 0; c < classes; ++c) {
    std::vector<const GroundTruthTube*> gts;
    for (const auto& g : truth) {
      if (g.class_id == c) gts.push_back(&g);
    }
    if (gts.empty()) continue;
    std::vector<const FinalTube*> dets;
    std::vector<double> scores;
    for (const auto& t : tubes) {
      if (t.class_id != c) continue;
      dets.push_back(&t);
      scores.push_back(t.score);
    }
    const auto hits = greedy_match(scores, gts.size(), threshold, [&](std::size_t i) {
      std::vector<std::pair<std::size_t, double>> cands;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g]->video_id == dets[i]->video_id) cands.emplace_back(g, tube_iou(*dets[i], *gts[g]));
      }
      return cands;
    });
    out.per_class[static_cast<std::size_t>(c)] = average_precision(scores, hits, gts.size());
  }
  finish_mean(out);
  return out;
}

std::vector<double> coco_thresholds() {
  std::vector<double> out;
  for (int k = 10; k <= 19; ++k) out.push_back(k * 5 / 100.0);
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> out{0.1, 0.2, 0.3};
  for (double d : coco_thresholds()) out.push_back(d);
  return out;
}

TemporalRecovery avg_t_iou(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth) {
  int classes = 0;
  for (const auto& t : tubes) classes = std::max(classes, t.class_id + 1);
  classes = class_count(truth, classes);

  std::vector<double> overlap_sum(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> score_sum(static_cast<std::size_t>(classes), 0.0);
  std::vector<int> count(static_cast<std::size_t>(classes), 0);
  for (const auto& g : truth) {
    double best = 0.0;
    const FinalTube* top = nullptr;
    for (const auto& t : tubes) {
      if (t.class_id != g.class_id || t.video_id != g.video_id) continue;
      best = std::max(best, temporal_iou({t.t_start, t.t_end}, {g.t_start, g.t_end}));
      if (!top || t.score > top->score) top = &t;
    }
    const auto c = static_cast<std::size_t>(g.class_id);
    overlap_sum[c] += best;
    if (top) score_sum[c] += temporal_iou({top->t_start, top->t_end}, {g.t_start, g.t_end});
    ++count[c];
  }

  TemporalRecovery out;
  out.best_overlap.assign(static_cast<std::size_t>(classes), std::nullopt);
  out.best_score.assign(static_cast<std::size_t>(classes), std::nullopt);
  for (std::size_t c = 0; c < count.size(); ++c) {
    if (count[c] == 0) continue;
    out.best_overlap[c] = overlap_sum[c] / count[c];
    out.best_score[c] = score_sum[c] / count[c];
  }
  return out;
}

EvalReport evaluate(std::span<const FinalTube> tubes, std::span<const GroundTruthTube> truth,
                    std::span<const double> thresholds,
                    std::optional<std::span<const FrameDetection>> frame_detections) {
  for (const auto& g : truth) g.validate();
  EvalReport report;
  int classes = 0;
  for (const auto& t : tubes) classes = std::max(classes, t.class_id + 1);
  report.classes = class_count(truth, classes);

  if (frame_detections) {
    report.frame_map = f_map(*frame_detections, truth, 0.5);
    report.frame_map->per_class.resize(static_cast<std::size_t>(report.classes));
  }
  for (double d : thresholds) {
    ThresholdMap m{d, v_ap(tubes, truth, d)};
    m.ap.per_class.resize(static_cast<std::size_t>(report.classes));
    report.video_map.push_back(std::move(m));
  }
  double sum = 0.0;
  for (double d : coco_thresholds()) sum += v_ap(tubes, truth, d).mean;
  report.video_map_coco = sum / static_cast<double>(coco_thresholds().size());
  report.temporal = avg_t_iou(tubes, truth);
  report.temporal.best_overlap.resize(static_cast<std::size_t>(report.classes));
  report.temporal.best_score.resize(static_cast<std::size_t>(report.classes));
  return report;
}

}  // namespace prtube
