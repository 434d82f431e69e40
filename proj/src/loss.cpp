#include "prtube/loss.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "prtube/errors.hpp"

namespace prtube {

void LossWeights::validate() const {
  for (double l : {coord, act, noact, cls, hp, sp}) {
    if (!(l >= 0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(theta >= 0 && theta <= 1)) throw ConfigError("theta must lie in [0, 1]");
}

namespace {

double centered_iou(double w, double h, double aw, double ah) {
  const double inter = std::min(w, aw) * std::min(h, ah);
  return inter / (w * h + aw * ah - inter);
}

}  // namespace

TargetAssignment build_targets(std::span<const GroundTruthTube> truth, int t, const GridShape& shape,
                               const AnchorSet& anchors) {
  shape.validate();
  if (static_cast<int>(anchors.size()) != shape.anchors) {
    throw StructuralError("anchor count does not match grid B");
  }
  const int rows = shape.boxes();
  const int c = shape.classes;
  const double s = shape.cells;

  TargetAssignment out;
  out.shape = shape;
  out.act = Eigen::ArrayXd::Zero(rows);
  out.class_act = AttributeMatrix::Zero(rows, c);
  out.target = AttributeMatrix::Zero(rows, shape.attributes());

  for (const GroundTruthTube& gt : truth) {
    if (!gt.covers(t)) continue;
    if (gt.class_id < 0 || gt.class_id >= c) {
      throw InputError("ground-truth class " + std::to_string(gt.class_id) + " outside [0, C)");
    }
    const Box& b = gt.box_at(t);
    if (b.degenerate() || b.x_min < 0 || b.y_min < 0 || b.x_max > 1 || b.y_max > 1) {
      throw InputError("ground-truth box at frame " + std::to_string(t) + " is outside the unit square");
    }
    const double cx = (b.x_min + b.x_max) / 2;
    const double cy = (b.y_min + b.y_max) / 2;
    const int cell_x = std::min(shape.cells - 1, static_cast<int>(std::floor(cx * s)));
    const int cell_y = std::min(shape.cells - 1, static_cast<int>(std::floor(cy * s)));

    int best = 0;
    double best_iou = -1.0;
    for (int j = 0; j < shape.anchors; ++j) {
      const double iou = centered_iou(b.width(), b.height(), anchors[j].width / s, anchors[j].height / s);
      if (iou > best_iou) {
        best_iou = iou;
        best = j;
      }
    }

    // A later instance landing on the same (cell, anchor) replaces the earlier one.
    const int r = box_row(shape, cell_x, cell_y, best);
    out.act(r) = 1.0;
    out.class_act.row(r).setZero();
    out.class_act(r, gt.class_id) = 1.0;
    auto row = out.target.row(r);
    row.setZero();
    row(channel::kActionness) = 1.0;
    row(channel::kX) = cx * s - cell_x;
    row(channel::kY) = cy * s - cell_y;
    row(channel::kW) = std::log(b.width() * s / anchors[best].width);
    row(channel::kH) = std::log(b.height() * s / anchors[best].height);
    row(channel::kClassBegin + gt.class_id) = 1.0;
    row(channel::progression_begin(c) + gt.class_id) = 1.0;
    row(channel::rate_begin(c) + gt.class_id) = static_cast<double>(t - gt.t_start + 1) / gt.length();
  }
  out.noact = 1.0 - out.act;
  return out;
}

AttributeMatrix loss_gradient(const AttributeMatrix& pred, const TargetAssignment& target, const LossWeights& w) {
  const int c = target.shape.classes;
  const int hb = channel::progression_begin(c);
  const int rb = channel::rate_begin(c);
  AttributeMatrix grad = AttributeMatrix::Zero(pred.rows(), pred.cols());

  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const double act = target.act(i);
    const double noact = target.noact(i);
    const double sa = pred(i, channel::kActionness);
    const auto p = pred.row(i);
    const auto g = target.target.row(i);

    grad(i, channel::kActionness) = 2 * w.act * act * (sa - 1) + 2 * w.noact * noact * sa;
    grad.row(i).segment(channel::kX, 4) = 2 * w.coord * act * (p.segment(channel::kX, 4) - g.segment(channel::kX, 4));
    grad.row(i).segment(channel::kClassBegin, c) =
        2 * w.cls * act * (p.segment(channel::kClassBegin, c) - g.segment(channel::kClassBegin, c));

    const double gate = (noact != 0 && sa > w.theta) ? 1.0 : 0.0;
    for (int k = 0; k < c; ++k) {
      const double cact = target.class_act(i, k);
      grad(i, hb + k) = 2 * w.hp * cact * (p(hb + k) - 1) + 2 * gate * p(hb + k);
      grad(i, rb + k) = 2 * w.sp * cact * (p(rb + k) - g(rb + k));
    }
  }
  return grad;
}

double check_gradients(const AttributeMatrix& pred, const TargetAssignment& target, const LossWeights& w,
                       double eps) {
  using Ext = Eigen::Array<long double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const AttributeMatrix analytic = loss_gradient(pred, target, w);
  Ext probe = pred.cast<long double>();
  // A power-of-two step keeps x + h and x - h exact, so quadratic terms
  // difference without rounding.
  const long double h = std::exp2(std::round(std::log2(eps)));

  double worst = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      if (j == channel::kActionness && target.noact(i) != 0 && std::abs(pred(i, j) - w.theta) <= static_cast<double>(h)) continue;
      const long double saved = probe(i, j);
      probe(i, j) = saved + h;
      const long double up = loss_terms(probe, target, w).total;
      probe(i, j) = saved - h;
      const long double down = loss_terms(probe, target, w).total;
      probe(i, j) = saved;

      const double numeric = static_cast<double>((up - down) / (2 * h));
      const double a = analytic(i, j);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

GradientCase random_gradient_case(std::uint64_t seed, const GridShape& shape, const AnchorSet& anchors) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int c = shape.classes;
  constexpr int kFrame = 5;

  std::vector<GroundTruthTube> truth;
  const int n = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < n; ++k) {
    GroundTruthTube gt;
    gt.class_id = std::uniform_int_distribution<int>(0, c - 1)(rng);
    const int len = std::uniform_int_distribution<int>(1, 10)(rng);
    gt.t_start = std::uniform_int_distribution<int>(kFrame - len + 1, kFrame)(rng);
    gt.t_end = gt.t_start + len - 1;
    for (int f = 0; f < len; ++f) {
      const double cx = 0.1 + 0.8 * unit(rng);
      const double cy = 0.1 + 0.8 * unit(rng);
      const double bw = std::min(0.05 + 0.45 * unit(rng), 2 * std::min(cx, 1 - cx));
      const double bh = std::min(0.05 + 0.45 * unit(rng), 2 * std::min(cy, 1 - cy));
      gt.boxes.push_back(box_from_center(cx, cy, bw, bh));
    }
    truth.push_back(std::move(gt));
  }

  GradientCase out;
  out.target = build_targets(truth, kFrame, shape, anchors);
  out.pred.resize(shape.boxes(), shape.attributes());
  for (Eigen::Index i = 0; i < out.pred.rows(); ++i) {
    out.pred(i, channel::kActionness) = unit(rng);
    out.pred(i, channel::kX) = unit(rng);
    out.pred(i, channel::kY) = unit(rng);
    out.pred(i, channel::kW) = normal(rng);
    out.pred(i, channel::kH) = normal(rng);
    Eigen::ArrayXd logits(c);
    for (int k = 0; k < c; ++k) logits(k) = normal(rng);
    logits = logits.exp();
    out.pred.row(i).segment(channel::kClassBegin, c) = (logits / logits.sum()).transpose();
    for (int k = 0; k < 2 * c; ++k) out.pred(i, channel::progression_begin(c) + k) = unit(rng);
  }
  return out;
}

}  // namespace prtube
