#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "prtube/box.hpp"

namespace prtube {

/// Dimensions of a detection grid: S x S cells, B anchors per cell, C classes.
struct GridShape {
  int cells = 1;
  int anchors = 1;
  int classes = 1;

  /// Attributes per box: actionness, 4 offsets, then C class scores,
  /// C progression scores and C progress rates.
  int attributes() const { return 5 + 3 * classes; }
  int boxes() const { return cells * cells * anchors; }
  std::size_t size() const {
    return static_cast<std::size_t>(boxes()) * static_cast<std::size_t>(attributes());
  }
  void validate() const;

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Column offsets inside one box's attribute row.
namespace channel {
inline constexpr int kActionness = 0;
inline constexpr int kX = 1;
inline constexpr int kY = 2;
inline constexpr int kW = 3;
inline constexpr int kH = 4;
inline constexpr int kClassBegin = 5;
inline int progression_begin(int classes) { return 5 + classes; }
inline int rate_begin(int classes) { return 5 + 2 * classes; }
}  // namespace channel

/// Row index of (cell_x, cell_y, anchor) in a grid's attribute matrix.
inline int box_row(const GridShape& shape, int cell_x, int cell_y, int anchor) {
  return (cell_y * shape.cells + cell_x) * shape.anchors + anchor;
}

/// Per-box attribute matrix: one row per (cell, anchor), one column per
/// attribute. Holds raw logits for a RawGrid and activated values otherwise.
using AttributeMatrix = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raw network output for one frame.
struct RawGrid {
  GridShape shape;
  AttributeMatrix values;

  RawGrid() = default;
  RawGrid(GridShape shape, AttributeMatrix values);
  /// Builds from a flat S*S*B*(5+3C) buffer in row-major (cell_y, cell_x, anchor, attribute) order.
  static RawGrid from_flat(GridShape shape, std::span<const double> flat);
};

/// Activated attributes for a whole grid (the same layout as RawGrid).
struct AttributeGrid {
  GridShape shape;
  AttributeMatrix values;
};

struct Anchor {
  double width = 1.0;   // cell units
  double height = 1.0;  // cell units
};

using AnchorSet = std::vector<Anchor>;

/// The five-anchor set obtained by dimension clustering on VOC.
AnchorSet default_anchors();

struct BoxAttributes {
  double actionness = 0.0;
  double x = 0.0;  // activated cell offset
  double y = 0.0;  // activated cell offset
  double w = 0.0;  // raw log-scale offset
  double h = 0.0;  // raw log-scale offset
  Eigen::ArrayXd class_scores;
  Eigen::ArrayXd progression;
  Eigen::ArrayXd rates;
};

struct DecodedBox {
  int cell_x = 0;
  int cell_y = 0;
  int anchor = 0;
  BoxAttributes attributes;
  Box geometry;
};

struct CandidateBox {
  int class_id = 0;
  Box box;
  double confidence = 0.0;
  double rate = 0.0;

  friend bool operator==(const CandidateBox&, const CandidateBox&) = default;
};

/// One frame's candidates, indexed by class.
using ClassCandidates = std::vector<std::vector<CandidateBox>>;

struct NmsOptions {
  double score_threshold = 1e-3;
  double nms_iou = 0.45;
};

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

/// Applies sigmoid to actionness, x, y, progression and rate; softmax over
/// the class block; leaves w and h linear.
AttributeGrid activate(const RawGrid& raw);

/// Decodes every (cell, anchor) box into attributes and clamped geometry.
std::vector<DecodedBox> decode_grid(const RawGrid& raw, const AnchorSet& anchors);

/// Final per-class confidence: actionness x class probability x progression.
double confidence(const BoxAttributes& attributes, int class_id);

/// Thresholds and greedily suppresses a single-class candidate list. Output
/// is sorted by descending confidence; ties keep input order.
std::vector<CandidateBox> suppress(std::vector<CandidateBox> candidates, const NmsOptions& options);

/// Expands each decoded box into per-class candidates and runs suppress()
/// independently per class.
ClassCandidates filter_and_nms(std::span<const DecodedBox> decoded, int classes,
                               const NmsOptions& options);

}  // namespace prtube
