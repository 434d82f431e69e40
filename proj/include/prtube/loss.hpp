#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>

#include "prtube/decode.hpp"
#include "prtube/tube.hpp"

namespace prtube {

struct LossWeights {
  double coord = 5.0;
  double act = 10.0;
  double noact = 5.0;
  double cls = 5.0;
  double hp = 5.0;
  double sp = 5.0;
  /// Actionness above which a no-action box becomes a progression negative.
  double theta = 0.2;

  void validate() const;
};

/// Training targets for one frame. `target` uses the prediction layout
/// (activated parameterization); masks are indexed by box row.
struct TargetAssignment {
  GridShape shape;
  Eigen::ArrayXd act;        // responsible (cell, anchor) for some instance
  Eigen::ArrayXd noact;      // no instance assigned
  AttributeMatrix class_act;  // rows x C: responsible for an instance of class c
  AttributeMatrix target;     // rows x (5+3C)
};

template <typename Scalar>
struct BasicLossBreakdown {
  Scalar coord{0};
  Scalar conf{0};
  Scalar cls{0};
  Scalar hp{0};
  Scalar sp{0};
  Scalar total{0};
};

using LossBreakdown = BasicLossBreakdown<double>;

/// Assigns every ground-truth box covering frame `t` to the anchor of its
/// center cell with the highest co-centered shape IoU.
TargetAssignment build_targets(std::span<const GroundTruthTube> truth, int t, const GridShape& shape,
                               const AnchorSet& anchors);

/// Evaluates the five loss terms over an activated prediction matrix. The
/// scalar type follows the prediction so the same kernel can be run in
/// extended precision.
template <typename Derived>
BasicLossBreakdown<typename Derived::Scalar> loss_terms(const Eigen::ArrayBase<Derived>& pred,
                                                        const TargetAssignment& target,
                                                        const LossWeights& w) {
  using Scalar = typename Derived::Scalar;
  const int c = target.shape.classes;
  const int hb = channel::progression_begin(c);
  const int rb = channel::rate_begin(c);
  BasicLossBreakdown<Scalar> out;

  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const auto p = pred.derived().row(i);
    const auto g = target.target.row(i).template cast<Scalar>();
    const Scalar act = Scalar(target.act(i));
    const Scalar noact = Scalar(target.noact(i));

    if (act != Scalar(0)) {
      out.coord += Scalar(w.coord) * act * (p.segment(channel::kX, 4) - g.segment(channel::kX, 4)).square().sum();
      out.cls += Scalar(w.cls) * act * (p.segment(channel::kClassBegin, c) - g.segment(channel::kClassBegin, c)).square().sum();
    }
    const Scalar sa = p(channel::kActionness);
    out.conf += Scalar(w.act) * act * (sa - Scalar(1)) * (sa - Scalar(1)) + Scalar(w.noact) * noact * sa * sa;

    const Scalar gate = (noact != Scalar(0) && sa > Scalar(w.theta)) ? Scalar(1) : Scalar(0);
    for (int k = 0; k < c; ++k) {
      const Scalar cact = Scalar(target.class_act(i, k));
      const Scalar sh = p(hb + k);
      out.hp += Scalar(w.hp) * cact * (sh - Scalar(1)) * (sh - Scalar(1)) + gate * sh * sh;
      const Scalar dr = p(rb + k) - g(rb + k);
      out.sp += Scalar(w.sp) * cact * dr * dr;
    }
  }
  out.total = out.coord + out.conf + out.cls + out.hp + out.sp;
  return out;
}

/// Analytic derivative of the total loss with respect to every predicted
/// attribute. The negative-mining gate is treated as locally constant.
AttributeMatrix loss_gradient(const AttributeMatrix& pred, const TargetAssignment& target, const LossWeights& w);

/// Worst component-wise relative error between loss_gradient and central
/// differences of loss_terms (evaluated in long double). Actionness entries
/// whose stencil straddles the negative-mining threshold are skipped since
/// the loss is discontinuous there.
double check_gradients(const AttributeMatrix& pred, const TargetAssignment& target, const LossWeights& w,
                       double eps);

struct GradientCase {
  AttributeMatrix pred;
  TargetAssignment target;
};

/// Random activated prediction plus targets from random ground truth.
GradientCase random_gradient_case(std::uint64_t seed, const GridShape& shape, const AnchorSet& anchors);

}  // namespace prtube
