#include "prtube/linker.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prtube/errors.hpp"

namespace prtube {

double LinkerConfig::alpha_for(int class_id) const {
  if (class_id >= 0 && static_cast<std::size_t>(class_id) < alpha.size()) {
    return alpha[static_cast<std::size_t>(class_id)];
  }
  return 1.0;
}

void LinkerConfig::validate() const {
  if (!(iou_gate > 0 && iou_gate < 1)) throw ConfigError("gamma must lie in (0, 1)");
  if (patience < 1) throw ConfigError("K must be >= 1");
  if (max_tubes < 1) throw ConfigError("M must be >= 1");
  for (double a : alpha) {
    if (!(a >= 0 && a <= 1)) throw ConfigError("every alpha must lie in [0, 1]");
  }
  if (!(score_floor >= 0 && score_floor < 1)) throw ConfigError("score floor must lie in [0, 1)");
}

double alpha_from_training_error(double mean_rate_error) {
  return std::exp(-(mean_rate_error * mean_rate_error) / 1e-2);
}

TubeState seed_tube(std::uint64_t id, int class_id, int frame, const CandidateBox& box) {
  TubeState tube;
  tube.id = id;
  tube.class_id = class_id;
  tube.boxes.push_back({frame, box.box, box.confidence, box.rate, 0});
  tube.score_sum = box.confidence;
  tube.avg_score = box.confidence;
  return tube;
}

void temporal_label_step(TubeState& tube, const LinkedBox& incoming, double alpha, int patience) {
  const double previous_rate = tube.last().rate;
  LinkedBox box = incoming;
  box.label = tube.last().label;
  tube.boxes.push_back(box);
  tube.score_sum += box.score;
  tube.avg_score = tube.score_sum / static_cast<double>(tube.boxes.size());

  if (box.rate > previous_rate) {
    tube.n_up = std::min(patience, tube.n_up + 1);
    tube.n_down = std::max(0, tube.n_down - 1);
  } else {
    tube.n_down = std::min(patience, tube.n_down + 1);
    tube.n_up = std::max(0, tube.n_up - 1);
  }

  // Mean of the last K linked scores, summed oldest first.
  const std::size_t n = tube.boxes.size();
  const std::size_t window = std::min<std::size_t>(n, static_cast<std::size_t>(patience));
  double recent = 0.0;
  for (std::size_t i = n - window; i < n; ++i) recent += tube.boxes[i].score;
  recent /= static_cast<double>(window);

  std::optional<std::uint8_t> assign;
  if (tube.n_up == patience) {
    assign = 1;
  } else if (recent > alpha) {
    // Confident boxes are accepted without consulting the rates, so this
    // check precedes the decreasing-rate reset.
    assign = 1;
  } else if (tube.n_down == patience) {
    assign = 0;
  }
  if (!assign) return;

  const int oldest = box.frame - patience + 1;
  for (auto it = tube.boxes.rbegin(); it != tube.boxes.rend() && it->frame >= oldest; ++it) {
    it->label = *assign;
  }
}

std::optional<FinalTube> trim_tube(const TubeState& tube, const std::string& video_id) {
  const auto is_on = [](const LinkedBox& b) { return b.label == 1; };
  const auto first = std::find_if(tube.boxes.begin(), tube.boxes.end(), is_on);
  if (first == tube.boxes.end()) return std::nullopt;
  const auto last = std::find_if(tube.boxes.rbegin(), tube.boxes.rend(), is_on).base() - 1;

  FinalTube out;
  out.video_id = video_id;
  out.class_id = tube.class_id;
  out.t_start = first->frame;
  out.t_end = last->frame;
  out.boxes.reserve(static_cast<std::size_t>(out.length()));
  out.labels.reserve(static_cast<std::size_t>(out.length()));

  double sum = 0.0;
  std::size_t count = 0;
  for (auto it = first; it <= last; ++it) {
    // Fill any skipped frames with the last linked geometry.
    while (static_cast<int>(out.boxes.size()) < it->frame - out.t_start) {
      out.boxes.push_back(out.boxes.back());
      out.labels.push_back(0);
    }
    out.boxes.push_back(it->box);
    out.labels.push_back(it->label);
    sum += it->score;
    ++count;
  }
  out.score = sum / static_cast<double>(count);
  return out;
}

TubeLinker::TubeLinker(const LinkerConfig& config, int class_id, std::string video_id)
    : gate_(config.iou_gate),
      patience_(config.patience),
      max_tubes_(config.max_tubes),
      alpha_(config.alpha_for(class_id)),
      score_floor_(config.score_floor),
      class_id_(class_id),
      video_id_(std::move(video_id)) {
  config.validate();
}

void TubeLinker::step(int frame, std::span<const CandidateBox> boxes) {
  if (last_frame_ && frame <= *last_frame_) {
    throw SequencingError("frame " + std::to_string(frame) + " presented after frame " +
                          std::to_string(*last_frame_));
  }
  if (last_frame_) {
    // Empty frames only matter while there are live tubes to age.
    for (int f = *last_frame_ + 1; f < frame && !active_.empty(); ++f) process_frame(f, {});
  }
  process_frame(frame, boxes);
  last_frame_ = frame;
}

void TubeLinker::complete(TubeState& tube) {
  tube.status = TubeStatus::completed;
  if (auto trimmed = trim_tube(tube, video_id_)) finished_.push_back(std::move(*trimmed));
}

void TubeLinker::process_frame(int frame, std::span<const CandidateBox> boxes) {
  if (frame == 1) {
    // Video start: only the M best boxes open tubes.
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (boxes[i].confidence > score_floor_) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return boxes[a].confidence > boxes[b].confidence; });
    if (order.size() > static_cast<std::size_t>(max_tubes_)) order.resize(static_cast<std::size_t>(max_tubes_));
    for (std::size_t i : order) active_.push_back(seed_tube(next_id_++, class_id_, frame, boxes[i]));
    return;
  }

  std::stable_sort(active_.begin(), active_.end(), [](const TubeState& a, const TubeState& b) {
    if (a.avg_score != b.avg_score) return a.avg_score > b.avg_score;
    if (a.t_start() != b.t_start()) return a.t_start() < b.t_start();
    return a.id < b.id;
  });
  if (active_.size() > static_cast<std::size_t>(max_tubes_)) active_.resize(static_cast<std::size_t>(max_tubes_));

  std::vector<bool> used(boxes.size(), false);
  for (TubeState& tube : active_) {
    std::optional<std::size_t> pick;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (used[i] || !(box_iou(boxes[i].box, tube.last().box) > gate_)) continue;
      if (!pick || boxes[i].confidence > boxes[*pick].confidence) pick = i;
    }
    if (pick) {
      used[*pick] = true;
      const CandidateBox& b = boxes[*pick];
      temporal_label_step(tube, {frame, b.box, b.confidence, b.rate, 0}, alpha_, patience_);
      tube.frames_since_link = 0;
    } else if (++tube.frames_since_link >= patience_) {
      complete(tube);
    }
  }
  std::erase_if(active_, [](const TubeState& t) { return t.status == TubeStatus::completed; });

  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!used[i] && boxes[i].confidence > score_floor_) {
      active_.push_back(seed_tube(next_id_++, class_id_, frame, boxes[i]));
    }
  }
}

std::vector<FinalTube> TubeLinker::take_finished() {
  std::vector<FinalTube> out;
  out.swap(finished_);
  return out;
}

std::vector<FinalTube> TubeLinker::finalize() {
  for (TubeState& tube : active_) complete(tube);
  active_.clear();
  return take_finished();
}

std::size_t TubeLinker::resident_boxes() const {
  std::size_t n = 0;
  for (const TubeState& t : active_) n += t.boxes.size();
  return n;
}

VideoLinker::VideoLinker(const LinkerConfig& config, int classes, std::string video_id) {
  if (classes < 1) throw ConfigError("a video linker needs at least one class");
  linkers_.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) linkers_.emplace_back(config, c, video_id);
}

void VideoLinker::step(int frame, const ClassCandidates& frame_boxes) {
  if (frame_boxes.size() > linkers_.size()) {
    throw StructuralError("frame carries " + std::to_string(frame_boxes.size()) + " classes, linker has " +
                          std::to_string(linkers_.size()));
  }
  for (std::size_t c = 0; c < linkers_.size(); ++c) {
    if (c < frame_boxes.size()) {
      linkers_[c].step(frame, frame_boxes[c]);
    } else {
      linkers_[c].step(frame, {});
    }
  }
}

std::vector<FinalTube> VideoLinker::take_finished() {
  std::vector<FinalTube> out;
  for (TubeLinker& l : linkers_) {
    auto part = l.take_finished();
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<FinalTube> VideoLinker::finalize() {
  std::vector<FinalTube> out;
  for (TubeLinker& l : linkers_) {
    auto part = l.finalize();
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::size_t VideoLinker::resident_boxes() const {
  std::size_t n = 0;
  for (const TubeLinker& l : linkers_) n += l.resident_boxes();
  return n;
}

}  // namespace prtube
