// Reference linker. Deliberately shares no code with TubeLinker beyond the
// public data types: every frame is processed explicitly, completion is
// derived from the last linked frame, and averages are recomputed from
// scratch.

#include <algorithm>
#include <vector>

#include "prtube/synthetic.hpp"

namespace prtube {

namespace {

struct RefTube {
  std::size_t order = 0;
  std::vector<int> frame;
  std::vector<Box> box;
  std::vector<double> score;
  std::vector<double> rate;
  std::vector<int> label;
  int up = 0;
  int down = 0;
  bool done = false;

  double mean_score() const {
    double s = 0.0;
    for (double v : score) s += v;
    return s / static_cast<double>(score.size());
  }
};

double overlap(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

void label_frame(RefTube& tube, int t, double alpha, int k) {
  const std::size_t n = tube.frame.size();
  tube.label.push_back(tube.label[n - 2]);
  if (tube.rate[n - 1] > tube.rate[n - 2]) {
    tube.up = tube.up + 1 > k ? k : tube.up + 1;
    tube.down = tube.down - 1 < 0 ? 0 : tube.down - 1;
  } else {
    tube.down = tube.down + 1 > k ? k : tube.down + 1;
    tube.up = tube.up - 1 < 0 ? 0 : tube.up - 1;
  }
  // Summed oldest first: at exact ties with alpha the summation order
  // decides the comparison.
  const std::size_t used = n < static_cast<std::size_t>(k) ? n : static_cast<std::size_t>(k);
  double recent = 0.0;
  for (std::size_t i = n - used; i < n; ++i) recent += tube.score[i];
  recent /= static_cast<double>(used);

  int value = -1;
  if (tube.up == k) {
    value = 1;
  } else if (recent > alpha) {
    value = 1;
  } else if (tube.down == k) {
    value = 0;
  }
  if (value < 0) return;
  for (std::size_t i = 0; i < n; ++i) {
    if (tube.frame[i] >= t - k + 1 && tube.frame[i] <= t) tube.label[i] = value;
  }
}

bool trim(const RefTube& tube, int class_id, const std::string& video, FinalTube& out) {
  int first = -1;
  int last = -1;
  for (std::size_t i = 0; i < tube.label.size(); ++i) {
    if (tube.label[i] == 1) {
      if (first < 0) first = static_cast<int>(i);
      last = static_cast<int>(i);
    }
  }
  if (first < 0) return false;
  out = FinalTube{};
  out.video_id = video;
  out.class_id = class_id;
  out.t_start = tube.frame[static_cast<std::size_t>(first)];
  out.t_end = tube.frame[static_cast<std::size_t>(last)];
  double s = 0.0;
  int count = 0;
  std::size_t i = static_cast<std::size_t>(first);
  Box held = tube.box[i];
  for (int t = out.t_start; t <= out.t_end; ++t) {
    if (tube.frame[i] == t) {
      held = tube.box[i];
      out.boxes.push_back(held);
      out.labels.push_back(static_cast<std::uint8_t>(tube.label[i]));
      s += tube.score[i];
      ++count;
      ++i;
    } else {
      out.boxes.push_back(held);
      out.labels.push_back(0);
    }
  }
  out.score = s / count;
  return true;
}

}  // namespace

std::vector<FinalTube> oracle_link(const DetectionStream& stream, const LinkerConfig& config) {
  config.validate();
  const int k = config.patience;
  const std::size_t m_keep = static_cast<std::size_t>(config.max_tubes);
  std::vector<FinalTube> result;

  for (int c = 0; c < stream.classes; ++c) {
    const double alpha = config.alpha_for(c);
    std::vector<RefTube> tubes;
    std::vector<RefTube> closed;
    std::size_t created = 0;

    for (int t = 1; t <= stream.frame_count(); ++t) {
      const ClassCandidates& frame = stream.frames[static_cast<std::size_t>(t - 1)];
      std::vector<CandidateBox> boxes;
      if (static_cast<std::size_t>(c) < frame.size()) boxes = frame[static_cast<std::size_t>(c)];

      auto start_tube = [&](const CandidateBox& b) {
        RefTube tube;
        tube.order = created++;
        tube.frame.push_back(t);
        tube.box.push_back(b.box);
        tube.score.push_back(b.confidence);
        tube.rate.push_back(b.rate);
        tube.label.push_back(0);
        tubes.push_back(tube);
      };

      if (t == 1) {
        // Best M boxes, highest score first, earlier index on ties.
        std::vector<bool> taken(boxes.size(), false);
        for (std::size_t round = 0; round < m_keep; ++round) {
          int best = -1;
          for (std::size_t i = 0; i < boxes.size(); ++i) {
            if (taken[i] || !(boxes[i].confidence > config.score_floor)) continue;
            if (best < 0 || boxes[i].confidence > boxes[static_cast<std::size_t>(best)].confidence) {
              best = static_cast<int>(i);
            }
          }
          if (best < 0) break;
          taken[static_cast<std::size_t>(best)] = true;
          start_tube(boxes[static_cast<std::size_t>(best)]);
        }
        continue;
      }

      std::sort(tubes.begin(), tubes.end(), [](const RefTube& a, const RefTube& b) {
        const double sa = a.mean_score();
        const double sb = b.mean_score();
        if (sa != sb) return sa > sb;
        if (a.frame.front() != b.frame.front()) return a.frame.front() < b.frame.front();
        return a.order < b.order;
      });
      if (tubes.size() > m_keep) tubes.erase(tubes.begin() + static_cast<std::ptrdiff_t>(m_keep), tubes.end());

      std::vector<CandidateBox> remaining = boxes;
      std::vector<int> alive(boxes.size(), 1);
      for (RefTube& tube : tubes) {
        int pick = -1;
        for (std::size_t i = 0; i < remaining.size(); ++i) {
          if (!alive[i]) continue;
          if (overlap(remaining[i].box, tube.box.back()) <= config.iou_gate) continue;
          if (pick < 0 || remaining[i].confidence > remaining[static_cast<std::size_t>(pick)].confidence) {
            pick = static_cast<int>(i);
          }
        }
        if (pick >= 0) {
          const CandidateBox& b = remaining[static_cast<std::size_t>(pick)];
          alive[static_cast<std::size_t>(pick)] = 0;
          tube.frame.push_back(t);
          tube.box.push_back(b.box);
          tube.score.push_back(b.confidence);
          tube.rate.push_back(b.rate);
          label_frame(tube, t, alpha, k);
        } else if (t - tube.frame.back() >= k) {
          tube.done = true;
        }
      }
      for (RefTube& tube : tubes) {
        if (tube.done) closed.push_back(tube);
      }
      std::erase_if(tubes, [](const RefTube& tube) { return tube.done; });

      for (std::size_t i = 0; i < remaining.size(); ++i) {
        if (alive[i] && remaining[i].confidence > config.score_floor) start_tube(remaining[i]);
      }
    }

    for (RefTube& tube : tubes) closed.push_back(tube);
    for (const RefTube& tube : closed) {
      FinalTube f;
      if (trim(tube, c, stream.video_id, f)) result.push_back(std::move(f));
    }
  }
  return result;
}

}  // namespace prtube
