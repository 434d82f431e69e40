#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "prtube/decode.hpp"
#include "prtube/errors.hpp"

using namespace prtube;

namespace {

RawGrid random_grid(std::uint64_t seed, GridShape shape, double spread = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> flat(shape.size());
  for (double& v : flat) v = n(rng);
  return RawGrid::from_flat(shape, flat);
}

CandidateBox cand(Box b, double s) { return {0, b, s, 0.5}; }

}  // namespace

TEST_CASE("zero logits decode to anchor-sized boxes at cell centers") {
  const GridShape shape{2, 1, 1};
  const RawGrid raw = RawGrid::from_flat(shape, std::vector<double>(shape.size(), 0.0));
  const auto boxes = decode_grid(raw, {{1.0, 1.0}});
  REQUIRE(boxes.size() == 4);
  for (const auto& d : boxes) {
    const double cx = (d.cell_x + 0.5) / 2;
    const double cy = (d.cell_y + 0.5) / 2;
    CHECK(d.geometry.x_min == doctest::Approx(cx - 0.25));
    CHECK(d.geometry.x_max == doctest::Approx(cx + 0.25));
    CHECK(d.geometry.y_min == doctest::Approx(cy - 0.25));
    CHECK(d.geometry.y_max == doctest::Approx(cy + 0.25));
    CHECK(d.attributes.actionness == 0.5);
    CHECK(d.attributes.class_scores(0) == 1.0);
    CHECK(d.attributes.progression(0) == 0.5);
    CHECK(d.attributes.rates(0) == 0.5);
  }
}

TEST_CASE("very negative actionness logit") {
  const GridShape shape{1, 1, 1};
  std::vector<double> flat(shape.size(), 0.0);
  flat[channel::kActionness] = -20.0;
  const auto boxes = decode_grid(RawGrid::from_flat(shape, flat), {{1.0, 1.0}});
  CHECK(boxes[0].attributes.actionness == doctest::Approx(2.0611536e-9).epsilon(1e-6));
}

TEST_CASE("decode matches a scalar re-evaluation of every element") {
  const GridShape shape{4, 3, 3};
  const AnchorSet anchors{{1.0, 2.0}, {2.5, 1.5}, {0.7, 0.9}};
  const RawGrid raw = random_grid(7, shape);
  const auto boxes = decode_grid(raw, anchors);
  REQUIRE(static_cast<int>(boxes.size()) == shape.boxes());

  const int a = shape.attributes();
  const int c = shape.classes;
  std::vector<double> flat(raw.values.data(), raw.values.data() + raw.values.size());
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::size_t k = 0;
  for (int cy = 0; cy < shape.cells; ++cy) {
    for (int cx = 0; cx < shape.cells; ++cx) {
      for (int j = 0; j < shape.anchors; ++j, ++k) {
        const double* p = flat.data() + ((cy * shape.cells + cx) * shape.anchors + j) * a;
        const auto& d = boxes[k];
        CHECK(d.cell_x == cx);
        CHECK(d.cell_y == cy);
        CHECK(d.anchor == j);
        CHECK(d.attributes.actionness == doctest::Approx(sig(p[0])).epsilon(1e-12));
        double denom = 0.0;
        for (int q = 0; q < c; ++q) denom += std::exp(p[5 + q]);
        for (int q = 0; q < c; ++q) {
          CHECK(d.attributes.class_scores(q) == doctest::Approx(std::exp(p[5 + q]) / denom).epsilon(1e-12));
          CHECK(d.attributes.progression(q) == doctest::Approx(sig(p[5 + c + q])).epsilon(1e-12));
          CHECK(d.attributes.rates(q) == doctest::Approx(sig(p[5 + 2 * c + q])).epsilon(1e-12));
        }
        const double ctr_x = (cx + sig(p[1])) / shape.cells;
        const double ctr_y = (cy + sig(p[2])) / shape.cells;
        const double w = anchors[j].width * std::exp(p[3]) / shape.cells;
        const double h = anchors[j].height * std::exp(p[4]) / shape.cells;
        auto clip = [](double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); };
        CHECK(d.geometry.x_min == doctest::Approx(clip(ctr_x - w / 2)).epsilon(1e-12));
        CHECK(d.geometry.y_min == doctest::Approx(clip(ctr_y - h / 2)).epsilon(1e-12));
        CHECK(d.geometry.x_max == doctest::Approx(clip(ctr_x + w / 2)).epsilon(1e-12));
        CHECK(d.geometry.y_max == doctest::Approx(clip(ctr_y + h / 2)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("decode rejects mismatched shapes") {
  const GridShape shape{2, 2, 1};
  CHECK_THROWS_AS(RawGrid::from_flat(shape, std::vector<double>(shape.size() - 1)), StructuralError);
  CHECK_THROWS_AS(RawGrid(shape, AttributeMatrix::Zero(3, shape.attributes())), StructuralError);
  CHECK_THROWS_AS(RawGrid::from_flat({0, 1, 1}, std::vector<double>{}), StructuralError);
  const RawGrid raw = RawGrid::from_flat(shape, std::vector<double>(shape.size(), 0.0));
  CHECK_THROWS_AS(decode_grid(raw, {{1.0, 1.0}}), StructuralError);
  CHECK_THROWS_AS(decode_grid(raw, {{1.0, 1.0}, {0.0, 1.0}}), StructuralError);
}

TEST_CASE("confidence is the product of actionness, class and progression") {
  auto attrs = [](double a, double c, double h) {
    BoxAttributes b;
    b.actionness = a;
    b.class_scores = Eigen::ArrayXd::Constant(1, c);
    b.progression = Eigen::ArrayXd::Constant(1, h);
    return b;
  };
  CHECK(confidence(attrs(1.0, 1.0, 1.0), 0) == 1.0);
  CHECK(confidence(attrs(0.8, 0.5, 0.5), 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(confidence(attrs(0.9, 0.9, 0.0), 0) == 0.0);
}

TEST_CASE("NMS hand cases") {
  const NmsOptions opts{1e-3, 0.5};
  SUBCASE("coincident boxes keep the stronger one") {
    const Box b{0.1, 0.1, 0.4, 0.4};
    const auto kept = suppress({cand(b, 0.8), cand(b, 0.9)}, opts);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].confidence == 0.9);
  }
  SUBCASE("disjoint boxes both survive") {
    const auto kept = suppress({cand({0, 0, 0.2, 0.2}, 0.9), cand({0.5, 0.5, 0.7, 0.7}, 0.8)}, opts);
    CHECK(kept.size() == 2);
  }
  SUBCASE("chain A-B-C keeps A and C") {
    // B overlaps both A and C above the threshold; A and C overlap below it.
    // Once A suppresses B, nothing is left to suppress C.
    const Box a{0.0, 0.0, 0.5, 1.0};
    const Box b{0.1, 0.0, 0.6, 1.0};
    const Box c{0.225, 0.0, 0.725, 1.0};
    CHECK(box_iou(a, b) == doctest::Approx(0.4 / 0.6));
    CHECK(box_iou(b, c) == doctest::Approx(0.375 / 0.625));
    CHECK(box_iou(a, c) == doctest::Approx(0.275 / 0.725));
    const auto kept = suppress({cand(b, 0.8), cand(c, 0.7), cand(a, 0.9)}, opts);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].box == a);
    CHECK(kept[1].box == c);
  }
  SUBCASE("scores at the threshold are dropped") {
    CHECK(suppress({cand({0, 0, 1, 1}, 1e-3)}, opts).empty());
  }
}

TEST_CASE("filter_and_nms duplicates boxes across classes with their class rate") {
  const GridShape shape{1, 1, 2};
  std::vector<double> flat(shape.size(), 0.0);
  flat[5 + 2 * 2 + 0] = 2.0;   // rate for class 0
  flat[5 + 2 * 2 + 1] = -2.0;  // rate for class 1
  const auto decoded = decode_grid(RawGrid::from_flat(shape, flat), {{1.0, 1.0}});
  const auto out = filter_and_nms(decoded, 2, {});
  REQUIRE(out.size() == 2);
  REQUIRE(out[0].size() == 1);
  REQUIRE(out[1].size() == 1);
  CHECK(out[0][0].rate == doctest::Approx(sigmoid(2.0)));
  CHECK(out[1][0].rate == doctest::Approx(sigmoid(-2.0)));
  CHECK(out[0][0].class_id == 0);
  CHECK(out[1][0].class_id == 1);
  CHECK(out[0][0].confidence == 0.5 * 0.5 * 0.5);
}

TEST_CASE("decode properties over random grids") {
  const GridShape shape{5, 5, 3};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Large spread drives sigmoids and exponentials into saturation.
    const RawGrid raw = random_grid(seed, shape, seed % 2 ? 3.0 : 60.0);
    const auto decoded = decode_grid(raw, default_anchors());
    const auto again = decode_grid(raw, default_anchors());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      const Box& g = decoded[i].geometry;
      CHECK(g == again[i].geometry);
      CHECK(g.x_min >= 0.0);
      CHECK(g.y_min >= 0.0);
      CHECK(g.x_max <= 1.0);
      CHECK(g.y_max <= 1.0);
      CHECK(!g.degenerate());
      const auto& a = decoded[i].attributes;
      CHECK(a.class_scores.sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK((a.progression >= 0).all());
      CHECK((a.progression <= 1).all());
      CHECK((a.rates >= 0).all());
      CHECK((a.rates <= 1).all());
    }

    const auto lo = filter_and_nms(decoded, shape.classes, {1e-3, 0.45});
    const auto hi = filter_and_nms(decoded, shape.classes, {0.05, 0.45});
    for (int c = 0; c < shape.classes; ++c) {
      const auto& kept = lo[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i > 0) CHECK(kept[i - 1].confidence >= kept[i].confidence);
        for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(box_iou(kept[i].box, kept[j].box) <= 0.45);
        // Emitted confidence is exactly the score of some decoded box.
        bool found = false;
        for (const auto& d : decoded) {
          if (d.geometry == kept[i].box && confidence(d.attributes, c) == kept[i].confidence) found = true;
        }
        CHECK(found);
      }
      CHECK(hi[static_cast<std::size_t>(c)].size() <= kept.size());
      for (const auto& h : hi[static_cast<std::size_t>(c)]) {
        CHECK(std::find(kept.begin(), kept.end(), h) != kept.end());
      }
    }
  }
}
