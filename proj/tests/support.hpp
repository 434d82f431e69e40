#pragma once

// Shared fixtures for the test binaries: random detection streams, a
// score-only reference linker and tube comparison helpers.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "prtube/linker.hpp"
#include "prtube/synthetic.hpp"

namespace testing {

using namespace prtube;

struct StreamShape {
  int frames = 30;
  int max_boxes = 5;
  int classes = 2;
  // Scores are quantized to this step so that ties actually happen.
  double score_step = 0.05;
};

// A few slowly moving objects plus clutter, random rates, quantized scores.
inline DetectionStream random_stream(std::uint64_t seed, const StreamShape& shape = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> frames_dist(0, shape.frames);
  DetectionStream s;
  s.video_id = "rand" + std::to_string(seed);
  s.classes = shape.classes;
  const int frames = frames_dist(rng);

  struct Mover {
    double cx, cy, w, h, vx, vy, rate;
    int cls;
  };
  std::vector<Mover> movers;
  const int n_movers = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < n_movers; ++k) {
    movers.push_back({0.2 + 0.6 * unit(rng), 0.2 + 0.6 * unit(rng), 0.1 + 0.2 * unit(rng), 0.1 + 0.2 * unit(rng),
                      0.02 * (unit(rng) - 0.5), 0.02 * (unit(rng) - 0.5), unit(rng),
                      std::uniform_int_distribution<int>(0, shape.classes - 1)(rng)});
  }
  auto quant = [&](double v) {
    const double q = std::round(v / shape.score_step) * shape.score_step;
    return std::clamp(q, shape.score_step, 1.0);
  };
  auto clamp_box = [](double cx, double cy, double w, double h) {
    return Box{std::clamp(cx - w / 2, 0.0, 0.98), std::clamp(cy - h / 2, 0.0, 0.98),
               std::clamp(cx + w / 2, 0.02, 1.0), std::clamp(cy + h / 2, 0.02, 1.0)};
  };

  for (int t = 1; t <= frames; ++t) {
    ClassCandidates frame(static_cast<std::size_t>(shape.classes));
    int budget = std::uniform_int_distribution<int>(0, shape.max_boxes)(rng);
    for (Mover& m : movers) {
      m.cx += m.vx;
      m.cy += m.vy;
      // Rates mostly drift upward with occasional drops.
      m.rate = unit(rng) < 0.75 ? std::min(1.0, m.rate + 0.05 * unit(rng)) : std::max(0.0, m.rate - 0.1 * unit(rng));
      if (budget == 0 || unit(rng) < 0.2) continue;
      --budget;
      const double j = 0.01;
      frame[static_cast<std::size_t>(m.cls)].push_back(
          {m.cls, clamp_box(m.cx + j * (unit(rng) - 0.5), m.cy + j * (unit(rng) - 0.5), m.w, m.h), quant(unit(rng)),
           m.rate});
    }
    while (budget-- > 0) {
      const int c = std::uniform_int_distribution<int>(0, shape.classes - 1)(rng);
      frame[static_cast<std::size_t>(c)].push_back(
          {c, clamp_box(unit(rng), unit(rng), 0.05 + 0.3 * unit(rng), 0.05 + 0.3 * unit(rng)), quant(unit(rng)),
           unit(rng)});
    }
    s.frames.push_back(std::move(frame));
  }
  return s;
}

// Runs the production linker over a materialized stream, no NMS.
inline std::vector<FinalTube> link_all(const DetectionStream& s, const LinkerConfig& cfg) {
  VideoLinker video(cfg, s.classes, s.video_id);
  std::vector<FinalTube> out;
  for (int t = 1; t <= s.frame_count(); ++t) {
    video.step(t, s.frames[static_cast<std::size_t>(t - 1)]);
    for (auto& f : video.take_finished()) out.push_back(std::move(f));
  }
  for (auto& f : video.finalize()) out.push_back(std::move(f));
  return out;
}

inline void sort_canonical(std::vector<FinalTube>& tubes) {
  std::stable_sort(tubes.begin(), tubes.end(), [](const FinalTube& a, const FinalTube& b) {
    return std::tie(a.video_id, a.class_id, a.t_start, a.t_end, a.score) <
           std::tie(b.video_id, b.class_id, b.t_start, b.t_end, b.score);
  });
}

// Empty string when equal; otherwise a description of the first difference.
inline std::string compare_tubes(std::vector<FinalTube> a, std::vector<FinalTube> b, double score_tol = 1e-9) {
  sort_canonical(a);
  sort_canonical(b);
  if (a.size() != b.size()) return "tube count " + std::to_string(a.size()) + " vs " + std::to_string(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const FinalTube& x = a[i];
    const FinalTube& y = b[i];
    const std::string at = "tube " + std::to_string(i) + ": ";
    if (x.video_id != y.video_id || x.class_id != y.class_id) return at + "identity";
    if (x.t_start != y.t_start || x.t_end != y.t_end) {
      return at + "range [" + std::to_string(x.t_start) + "," + std::to_string(x.t_end) + "] vs [" +
             std::to_string(y.t_start) + "," + std::to_string(y.t_end) + "]";
    }
    if (x.boxes != y.boxes) return at + "geometry";
    if (x.labels != y.labels) return at + "labels";
    if (std::abs(x.score - y.score) > score_tol) return at + "score";
  }
  return {};
}

// Links like the online procedure but labels purely by confidence: every
// link relabels the trailing K frames as action. Equivalent to alpha = 0
// whenever all scores are positive.
inline std::vector<FinalTube> score_only_link(const DetectionStream& stream, const LinkerConfig& cfg) {
  struct Tube {
    std::size_t id;
    std::vector<int> frames;
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<int> labels;
    double sum = 0.0;
  };
  std::vector<FinalTube> out;
  const int k = cfg.patience;

  auto finish = [&](const Tube& tube, int cls) {
    auto first = std::find(tube.labels.begin(), tube.labels.end(), 1);
    if (first == tube.labels.end()) return;
    const std::size_t lo = static_cast<std::size_t>(first - tube.labels.begin());
    std::size_t hi = tube.labels.size() - 1;
    while (tube.labels[hi] != 1) --hi;
    FinalTube f;
    f.video_id = stream.video_id;
    f.class_id = cls;
    f.t_start = tube.frames[lo];
    f.t_end = tube.frames[hi];
    double sum = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) {
      while (!f.boxes.empty() && f.t_start + static_cast<int>(f.boxes.size()) < tube.frames[i]) {
        f.boxes.push_back(f.boxes.back());
        f.labels.push_back(0);
      }
      f.boxes.push_back(tube.boxes[i]);
      f.labels.push_back(static_cast<std::uint8_t>(tube.labels[i]));
      sum += tube.scores[i];
    }
    f.score = sum / static_cast<double>(hi - lo + 1);
    out.push_back(f);
  };

  for (int c = 0; c < stream.classes; ++c) {
    std::vector<Tube> live;
    std::size_t next_id = 0;
    for (int t = 1; t <= stream.frame_count(); ++t) {
      const auto& boxes = stream.frames[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(c)];
      std::vector<bool> used(boxes.size(), false);
      auto seed = [&](std::size_t i) {
        live.push_back({next_id++, {t}, {boxes[i].box}, {boxes[i].confidence}, {0}, boxes[i].confidence});
      };
      if (t == 1) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
          if (boxes[i].confidence > cfg.score_floor) idx.push_back(i);
        }
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return boxes[a].confidence > boxes[b].confidence; });
        for (std::size_t n = 0; n < idx.size() && n < static_cast<std::size_t>(cfg.max_tubes); ++n) seed(idx[n]);
        continue;
      }
      std::stable_sort(live.begin(), live.end(), [](const Tube& a, const Tube& b) {
        const double sa = a.sum / static_cast<double>(a.scores.size());
        const double sb = b.sum / static_cast<double>(b.scores.size());
        if (sa != sb) return sa > sb;
        if (a.frames[0] != b.frames[0]) return a.frames[0] < b.frames[0];
        return a.id < b.id;
      });
      if (live.size() > static_cast<std::size_t>(cfg.max_tubes)) live.resize(static_cast<std::size_t>(cfg.max_tubes));
      std::vector<Tube> kept;
      for (Tube& tube : live) {
        int pick = -1;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
          if (used[i] || !(box_iou(boxes[i].box, tube.boxes.back()) > cfg.iou_gate)) continue;
          if (pick < 0 || boxes[i].confidence > boxes[static_cast<std::size_t>(pick)].confidence) {
            pick = static_cast<int>(i);
          }
        }
        if (pick >= 0) {
          const auto& b = boxes[static_cast<std::size_t>(pick)];
          used[static_cast<std::size_t>(pick)] = true;
          tube.frames.push_back(t);
          tube.boxes.push_back(b.box);
          tube.scores.push_back(b.confidence);
          tube.sum += b.confidence;
          tube.labels.push_back(1);
          for (std::size_t i = 0; i < tube.frames.size(); ++i) {
            if (tube.frames[i] > t - k) tube.labels[i] = 1;
          }
          kept.push_back(std::move(tube));
        } else if (t - tube.frames.back() >= k) {
          finish(tube, c);
        } else {
          kept.push_back(std::move(tube));
        }
      }
      live = std::move(kept);
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (!used[i] && boxes[i].confidence > cfg.score_floor) seed(i);
      }
    }
    for (const Tube& tube : live) finish(tube, c);
  }
  return out;
}

}  // namespace testing
