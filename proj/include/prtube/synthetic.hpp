#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/linker.hpp"
#include "prtube/tube.hpp"

namespace prtube {

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// An action instance moving linearly from `first_box` to `last_box`.
struct ScenarioTube {
  int class_id = 0;
  int t_start = 1;
  int t_end = 1;
  Box first_box;
  Box last_box;

  int length() const { return t_end - t_start + 1; }
  Box box_at_offset(int offset) const;
};

struct NoiseModel {
  /// Corner jitter, as a fraction of the box side.
  double geometry_jitter = 0.0;
  ScoreRange action_scores{0.7, 1.0};
  /// Scores around a tube; the default makes them hard negatives.
  ScoreRange context_scores{0.7, 1.0};
  double rate_noise = 0.0;
  /// Flat progress rate reported on context frames, plus optional noise.
  double context_rate = 0.0;
  double context_rate_noise = 0.0;
  /// Context frames on each side, as a fraction of the tube length.
  double context_fraction = 0.25;
  /// Mean number of random boxes per frame.
  double distractor_rate = 0.0;
  ScoreRange distractor_scores{0.0, 0.3};
};

struct ScenarioSpec {
  std::string video_id = "video";
  int frames = 1;
  int classes = 1;
  std::vector<ScenarioTube> tubes;
  NoiseModel noise;
  /// Classes whose rates follow a sawtooth of `period` frames.
  std::vector<int> periodic_classes;
  int period = 8;
  /// When positive, every tube repeats with this frame period until the
  /// end of the video.
  int tile_period = 0;
  std::uint64_t seed = 0;

  bool is_periodic(int class_id) const;
  /// Throws StructuralError on out-of-range tubes, discontinuous
  /// trajectories or invalid noise parameters.
  void validate() const;
};

/// Per-frame, per-class candidates for one video; frames[0] is frame 1.
struct DetectionStream {
  std::string video_id;
  int classes = 1;
  std::vector<ClassCandidates> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  friend bool operator==(const DetectionStream&, const DetectionStream&) = default;
};

/// Lazily produces one scenario's frames in order; memory does not grow
/// with the number of frames.
class FrameSource {
 public:
  explicit FrameSource(ScenarioSpec spec);

  bool done() const { return next_frame_ > spec_.frames; }
  int next_frame() const { return next_frame_; }
  ClassCandidates next();

 private:
  void emit(ClassCandidates& out, int class_id, const Box& box, double score, double rate);

  ScenarioSpec spec_;
  std::mt19937_64 rng_;
  int next_frame_ = 1;
};

/// Every ground-truth instance of a scenario, tiling included.
std::vector<GroundTruthTube> scenario_truth(const ScenarioSpec& spec);

struct GeneratedScenario {
  DetectionStream stream;
  std::vector<GroundTruthTube> truth;
};

GeneratedScenario generate(const ScenarioSpec& spec);

/// Straight per-frame transcription of online tube generation with temporal
/// labeling, kept separate from TubeLinker as a reference implementation.
std::vector<FinalTube> oracle_link(const DetectionStream& stream, const LinkerConfig& config);

}  // namespace prtube
