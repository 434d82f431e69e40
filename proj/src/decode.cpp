#include "prtube/decode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prtube/errors.hpp"

namespace prtube {

namespace {

// Smallest normalized extent a decoded box may have, so clamping never
// produces a zero-area box.
constexpr double kMinExtent = 1e-9;

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void GridShape::validate() const {
  if (cells < 1 || anchors < 1 || classes < 1) {
    throw StructuralError("grid shape requires S, B, C >= 1 (got S=" + std::to_string(cells) +
                          ", B=" + std::to_string(anchors) + ", C=" + std::to_string(classes) + ")");
  }
}

RawGrid::RawGrid(GridShape shape_in, AttributeMatrix values_in)
    : shape(shape_in), values(std::move(values_in)) {
  shape.validate();
  if (values.rows() != shape.boxes() || values.cols() != shape.attributes()) {
    throw StructuralError("raw grid is " + std::to_string(values.rows()) + "x" +
                          std::to_string(values.cols()) + ", shape requires " +
                          std::to_string(shape.boxes()) + "x" + std::to_string(shape.attributes()));
  }
}

RawGrid RawGrid::from_flat(GridShape shape, std::span<const double> flat) {
  shape.validate();
  if (flat.size() != shape.size()) {
    throw StructuralError("raw grid holds " + std::to_string(flat.size()) + " values, S*S*B*(5+3C) = " +
                          std::to_string(shape.size()));
  }
  AttributeMatrix values =
      Eigen::Map<const AttributeMatrix>(flat.data(), shape.boxes(), shape.attributes());
  return RawGrid(shape, std::move(values));
}

AnchorSet default_anchors() {
  return {{1.3221, 1.73145}, {3.19275, 4.00944}, {5.05587, 8.09892}, {9.47112, 4.84053},
          {11.2364, 10.0071}};
}

AttributeGrid activate(const RawGrid& raw) {
  const GridShape& shape = raw.shape;
  const int c = shape.classes;
  AttributeGrid out{shape, raw.values};
  auto& v = out.values;

  auto sig = [](double x) { return sigmoid(x); };
  v.col(channel::kActionness) = raw.values.col(channel::kActionness).unaryExpr(sig);
  v.col(channel::kX) = raw.values.col(channel::kX).unaryExpr(sig);
  v.col(channel::kY) = raw.values.col(channel::kY).unaryExpr(sig);

  auto cls = v.middleCols(channel::kClassBegin, c);
  const Eigen::ArrayXd row_max = raw.values.middleCols(channel::kClassBegin, c).rowwise().maxCoeff();
  cls = (raw.values.middleCols(channel::kClassBegin, c).colwise() - row_max).exp();
  const Eigen::ArrayXd row_sum = cls.rowwise().sum();
  cls.colwise() /= row_sum;

  v.middleCols(channel::progression_begin(c), 2 * c) =
      raw.values.middleCols(channel::progression_begin(c), 2 * c).unaryExpr(sig);
  return out;
}

std::vector<DecodedBox> decode_grid(const RawGrid& raw, const AnchorSet& anchors) {
  const GridShape& shape = raw.shape;
  shape.validate();
  if (static_cast<int>(anchors.size()) != shape.anchors) {
    throw StructuralError("anchor set has " + std::to_string(anchors.size()) + " entries, grid expects B=" +
                          std::to_string(shape.anchors));
  }
  for (const Anchor& a : anchors) {
    if (!(a.width > 0 && a.height > 0)) throw StructuralError("anchor sizes must be positive");
  }
  if (raw.values.rows() != shape.boxes() || raw.values.cols() != shape.attributes()) {
    throw StructuralError("raw grid values do not match the declared shape");
  }

  const AttributeGrid act = activate(raw);
  const int c = shape.classes;
  const double s = shape.cells;

  std::vector<DecodedBox> out;
  out.reserve(static_cast<std::size_t>(shape.boxes()));
  for (int cy = 0; cy < shape.cells; ++cy) {
    for (int cx = 0; cx < shape.cells; ++cx) {
      for (int j = 0; j < shape.anchors; ++j) {
        const auto row = act.values.row(box_row(shape, cx, cy, j));
        DecodedBox d;
        d.cell_x = cx;
        d.cell_y = cy;
        d.anchor = j;
        BoxAttributes& a = d.attributes;
        a.actionness = row(channel::kActionness);
        a.x = row(channel::kX);
        a.y = row(channel::kY);
        a.w = row(channel::kW);
        a.h = row(channel::kH);
        a.class_scores = row.segment(channel::kClassBegin, c).transpose();
        a.progression = row.segment(channel::progression_begin(c), c).transpose();
        a.rates = row.segment(channel::rate_begin(c), c).transpose();

        const double center_x = (cx + a.x) / s;
        const double center_y = (cy + a.y) / s;
        const double w = std::max(anchors[j].width * std::exp(a.w) / s, kMinExtent);
        const double h = std::max(anchors[j].height * std::exp(a.h) / s, kMinExtent);
        d.geometry = {clamp_unit(center_x - w / 2), clamp_unit(center_y - h / 2),
                      clamp_unit(center_x + w / 2), clamp_unit(center_y + h / 2)};
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

double confidence(const BoxAttributes& attributes, int class_id) {
  return attributes.actionness * attributes.class_scores(class_id) * attributes.progression(class_id);
}

std::vector<CandidateBox> suppress(std::vector<CandidateBox> candidates, const NmsOptions& options) {
  std::erase_if(candidates,
                [&](const CandidateBox& b) { return !(b.confidence > options.score_threshold); });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CandidateBox& a, const CandidateBox& b) { return a.confidence > b.confidence; });

  std::vector<CandidateBox> kept;
  kept.reserve(candidates.size());
  for (const CandidateBox& cand : candidates) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const CandidateBox& k) {
      return box_iou(k.box, cand.box) > options.nms_iou;
    });
    if (!overlaps) kept.push_back(cand);
  }
  return kept;
}

ClassCandidates filter_and_nms(std::span<const DecodedBox> decoded, int classes, const NmsOptions& options) {
  ClassCandidates per_class(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    std::vector<CandidateBox> cands;
    for (const DecodedBox& d : decoded) {
      const double score = confidence(d.attributes, c);
      if (!(score > options.score_threshold)) continue;
      cands.push_back({c, d.geometry, score, d.attributes.rates(c)});
    }
    per_class[static_cast<std::size_t>(c)] = suppress(std::move(cands), options);
  }
  return per_class;
}

}  // namespace prtube
