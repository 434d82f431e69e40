#include "prtube/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prtube/errors.hpp"

namespace prtube {

namespace {

bool in_unit_square(const Box& b) {
  return !b.degenerate() && b.x_min >= 0 && b.y_min >= 0 && b.x_max <= 1 && b.y_max <= 1;
}

bool valid_range(const ScoreRange& r) { return r.lo >= 0 && r.hi <= 1 && r.lo <= r.hi; }

int context_frames(const NoiseModel& noise, int length) {
  return static_cast<int>(std::lround(noise.context_fraction * length));
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

}  // namespace

Box ScenarioTube::box_at_offset(int offset) const {
  const int len = length();
  const double lambda = len > 1 ? static_cast<double>(offset) / (len - 1) : 0.0;
  return {first_box.x_min + lambda * (last_box.x_min - first_box.x_min),
          first_box.y_min + lambda * (last_box.y_min - first_box.y_min),
          first_box.x_max + lambda * (last_box.x_max - first_box.x_max),
          first_box.y_max + lambda * (last_box.y_max - first_box.y_max)};
}

bool ScenarioSpec::is_periodic(int class_id) const {
  return std::find(periodic_classes.begin(), periodic_classes.end(), class_id) != periodic_classes.end();
}

void ScenarioSpec::validate() const {
  const std::string where = "scenario '" + video_id + "': ";
  if (frames < 1) throw StructuralError(where + "frames must be >= 1");
  if (classes < 1) throw StructuralError(where + "classes must be >= 1");
  if (period < 1) throw StructuralError(where + "period must be >= 1");
  if (tile_period < 0) throw StructuralError(where + "tile_period must be >= 0");
  for (int c : periodic_classes) {
    if (c < 0 || c >= classes) throw StructuralError(where + "periodic class out of range");
  }
  const NoiseModel& n = noise;
  if (!(n.geometry_jitter >= 0 && n.rate_noise >= 0 && n.context_rate_noise >= 0 && n.distractor_rate >= 0 &&
        n.context_fraction >= 0)) {
    throw StructuralError(where + "noise parameters must be non-negative");
  }
  if (!(n.context_rate >= 0 && n.context_rate <= 1)) throw StructuralError(where + "context_rate must lie in [0, 1]");
  if (!valid_range(n.action_scores) || !valid_range(n.context_scores) || !valid_range(n.distractor_scores)) {
    throw StructuralError(where + "score ranges must satisfy 0 <= lo <= hi <= 1");
  }
  for (std::size_t k = 0; k < tubes.size(); ++k) {
    const ScenarioTube& tube = tubes[k];
    const std::string which = where + "tube " + std::to_string(k) + ": ";
    if (tube.class_id < 0 || tube.class_id >= classes) throw StructuralError(which + "class out of range");
    if (tube.t_start < 1 || tube.t_end < tube.t_start || tube.t_end > frames) {
      throw StructuralError(which + "range must lie within [1, frames]");
    }
    if (!in_unit_square(tube.first_box) || !in_unit_square(tube.last_box)) {
      throw StructuralError(which + "boxes must be non-degenerate and inside the unit square");
    }
    for (int i = 1; i < tube.length(); ++i) {
      if (!(box_iou(tube.box_at_offset(i - 1), tube.box_at_offset(i)) > 0.5)) {
        throw StructuralError(which + "trajectory moves too fast (consecutive IoU <= 0.5)");
      }
    }
  }
}

FrameSource::FrameSource(ScenarioSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) { spec_.validate(); }

void FrameSource::emit(ClassCandidates& out, int class_id, const Box& box, double score, double rate) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double j = spec_.noise.geometry_jitter;
  const double w = box.width();
  const double h = box.height();
  const double n0 = normal(rng_);
  const double n1 = normal(rng_);
  const double n2 = normal(rng_);
  const double n3 = normal(rng_);
  Box jittered{std::clamp(box.x_min + j * w * n0, 0.0, 1.0), std::clamp(box.y_min + j * h * n1, 0.0, 1.0),
               std::clamp(box.x_max + j * w * n2, 0.0, 1.0), std::clamp(box.y_max + j * h * n3, 0.0, 1.0)};
  if (jittered.degenerate()) jittered = box;
  out[static_cast<std::size_t>(class_id)].push_back({class_id, jittered, score, std::clamp(rate, 0.0, 1.0)});
}

ClassCandidates FrameSource::next() {
  const int t = next_frame_++;
  const NoiseModel& noise = spec_.noise;
  ClassCandidates out(static_cast<std::size_t>(spec_.classes));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](const ScoreRange& r) { return r.lo + (r.hi - r.lo) * unit(rng_); };

  for (const ScenarioTube& tube : spec_.tubes) {
    const int len = tube.length();
    const int ctx = context_frames(noise, len);
    int m_lo = 0;
    int m_hi = 0;
    if (spec_.tile_period > 0) {
      const int p = spec_.tile_period;
      m_lo = std::max(0, ceil_div(t - tube.t_end - ctx, p));
      m_hi = std::min((spec_.frames - tube.t_end) / p, floor_div(t - tube.t_start + ctx, p));
    }
    for (int m = m_lo; m <= m_hi; ++m) {
      const int start = tube.t_start + m * std::max(spec_.tile_period, 0);
      const int local = t - start;
      if (local >= 0 && local < len) {
        double rate = 0.0;
        if (spec_.is_periodic(tube.class_id)) {
          rate = static_cast<double>(local % spec_.period + 1) / spec_.period;
        } else {
          rate = static_cast<double>(local + 1) / len;
        }
        const double score = draw(noise.action_scores);
        rate += noise.rate_noise * normal(rng_);
        emit(out, tube.class_id, tube.box_at_offset(local), score, rate);
      } else if (local >= -ctx && local < len + ctx) {
        const Box& anchor = local < 0 ? tube.first_box : tube.last_box;
        const double score = draw(noise.context_scores);
        const double rate = noise.context_rate + noise.context_rate_noise * normal(rng_);
        emit(out, tube.class_id, anchor, score, rate);
      }
    }
  }

  if (noise.distractor_rate > 0) {
    std::poisson_distribution<int> count(noise.distractor_rate);
    const int n = count(rng_);
    for (int k = 0; k < n; ++k) {
      const int c = std::uniform_int_distribution<int>(0, spec_.classes - 1)(rng_);
      const double cx = unit(rng_);
      const double cy = unit(rng_);
      const double bw = 0.05 + 0.25 * unit(rng_);
      const double bh = 0.05 + 0.25 * unit(rng_);
      const Box b{std::max(0.0, cx - bw / 2), std::max(0.0, cy - bh / 2), std::min(1.0, cx + bw / 2),
                  std::min(1.0, cy + bh / 2)};
      const double score = draw(noise.distractor_scores);
      const double rate = unit(rng_);
      out[static_cast<std::size_t>(c)].push_back({c, b, score, rate});
    }
  }
  return out;
}

std::vector<GroundTruthTube> scenario_truth(const ScenarioSpec& spec) {
  spec.validate();
  std::vector<GroundTruthTube> out;
  for (const ScenarioTube& tube : spec.tubes) {
    for (int m = 0;; ++m) {
      const int shift = m * spec.tile_period;
      if (tube.t_end + shift > spec.frames || (m > 0 && spec.tile_period <= 0)) break;
      GroundTruthTube g;
      g.video_id = spec.video_id;
      g.class_id = tube.class_id;
      g.t_start = tube.t_start + shift;
      g.t_end = tube.t_end + shift;
      for (int i = 0; i < tube.length(); ++i) g.boxes.push_back(tube.box_at_offset(i));
      out.push_back(std::move(g));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const GroundTruthTube& a, const GroundTruthTube& b) {
    return a.t_start < b.t_start;
  });
  return out;
}

GeneratedScenario generate(const ScenarioSpec& spec) {
  GeneratedScenario out;
  out.truth = scenario_truth(spec);
  out.stream.video_id = spec.video_id;
  out.stream.classes = spec.classes;
  FrameSource source(spec);
  out.stream.frames.reserve(static_cast<std::size_t>(spec.frames));
  while (!source.done()) out.stream.frames.push_back(source.next());
  return out;
}

}  // namespace prtube
