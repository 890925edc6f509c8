#include <gtest/gtest.h>

#include "edgespot/metrics.hpp"
#include "edgespot/rng.hpp"

using namespace edgespot;

namespace {

TextInstance gt(Box b, std::string text) { return {{}, std::move(text), b, 10}; }
Detection det(double score, Box b, std::string text) { return {score, b, std::move(text), {}}; }

// Box in corner form -> (cx, cy, w, h).
Box from_corners(double x0, double y0, double x1, double y1) { return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0}; }

}  // namespace

TEST(Iou, HandValues) {
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
  EXPECT_NEAR(iou(box_corners(from_corners(0, 0, 2, 2)), box_corners(from_corners(1, 1, 3, 3))), 1.0 / 7.0, 1e-12);
}

TEST(HarmonicMean, Identities) {
  EXPECT_NEAR(harmonic_mean(0.8, 0.5), 8.0 / 13.0, 1e-12);
  EXPECT_NEAR(harmonic_mean(0.8, 0.5), 0.6154, 1e-4);
  EXPECT_DOUBLE_EQ(harmonic_mean(0.3, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(harmonic_mean(0, 0), 0.0);
}

TEST(Match, PerfectPredictions) {
  std::vector<TextInstance> g = {gt({0.2, 0.2, 0.1, 0.1}, "AB"), gt({0.7, 0.7, 0.2, 0.1}, "c")};
  std::vector<Detection> p = {det(0.9, g[0].bbox, "AB"), det(0.8, g[1].bbox, "c")};
  auto r = end_to_end_metrics({count_image("x", p, g)});
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
  EXPECT_DOUBLE_EQ(r.hmean, 1.0);
}

TEST(Match, NoPredictions) {
  auto r = end_to_end_metrics({count_image("x", {}, {gt({0.5, 0.5, 0.2, 0.2}, "A")})});
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.f1, 0.0);
}

TEST(Match, TwoPredictionsOneTruthHigherScoreWins) {
  const std::vector<TextInstance> g = {gt({0.5, 0.5, 0.2, 0.2}, "A")};
  for (bool swap : {false, true}) {
    std::vector<Detection> p = {det(0.6, {0.5, 0.5, 0.2, 0.2}, "A"), det(0.9, {0.51, 0.5, 0.2, 0.2}, "B")};
    if (swap) std::swap(p[0], p[1]);
    const auto m = match_detections(p, g);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(p[m[0].first].score, 0.9);
    // Recognition matching skips the wrong transcription and takes the other.
    const auto mr = match_detections(p, g, 0.5, true);
    ASSERT_EQ(mr.size(), 1u);
    EXPECT_EQ(p[mr[0].first].text, "A");
  }
}

TEST(Match, ThresholdIsStrictAndTextIsCaseSensitive) {
  // IoU exactly 0.5: [0,0,2,1] vs [0,0,1,1].
  const std::vector<TextInstance> g = {gt(from_corners(0, 0, 2, 1), "Ab")};
  EXPECT_TRUE(match_detections({det(1, from_corners(0, 0, 1, 1), "Ab")}, g).empty());
  EXPECT_EQ(match_detections({det(1, from_corners(0, 0, 1.9, 1), "Ab")}, g).size(), 1u);
  EXPECT_TRUE(match_detections({det(1, g[0].bbox, "ab")}, g, 0.5, true).empty());
}

TEST(Match, InvariantToListOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TextInstance> g;
    std::vector<Detection> p;
    for (int i = 0; i < 6; ++i) {
      Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
      g.push_back(gt(b, "x"));
      b[0] += rng.uniform(-0.05, 0.05);
      p.push_back(det(rng.uniform(), b, rng.uniform() < 0.5 ? "x" : "y"));
    }
    const auto base = end_to_end_metrics({count_image("a", p, g)});
    for (int k = 0; k < 5; ++k) {
      for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
      const auto r = end_to_end_metrics({count_image("a", p, g)});
      EXPECT_EQ(r.detection_tp, base.detection_tp);
      EXPECT_EQ(r.recognition_tp, base.recognition_tp);
    }
  }
}

TEST(Match, EqualScoresBreakTiesByIndex) {
  const std::vector<TextInstance> g = {gt({0.5, 0.5, 0.2, 0.2}, "A")};
  const std::vector<Detection> p = {det(0.7, {0.5, 0.5, 0.2, 0.2}, "first"), det(0.7, {0.5, 0.5, 0.2, 0.2}, "second")};
  const auto m = match_detections(p, g);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].first, 0u);
}

TEST(Metrics, MicroAverageAndBounds) {
  // Image 1: 4 predictions, 2 correct boxes (1 correct text), 3 truths.
  // Image 2: 1 prediction, correct, 5 truths.
  std::vector<TextInstance> g1 = {gt({0.1, 0.1, 0.1, 0.1}, "a"), gt({0.4, 0.4, 0.1, 0.1}, "b"), gt({0.7, 0.7, 0.1, 0.1}, "c")};
  std::vector<Detection> p1 = {det(0.9, g1[0].bbox, "a"), det(0.8, g1[1].bbox, "z"), det(0.7, {0.9, 0.1, 0.05, 0.05}, "q"),
                               det(0.6, {0.9, 0.3, 0.05, 0.05}, "q")};
  std::vector<TextInstance> g2;
  for (int i = 0; i < 5; ++i) g2.push_back(gt({0.1 + 0.18 * i, 0.5, 0.1, 0.1}, "k"));
  std::vector<Detection> p2 = {det(0.9, g2[2].bbox, "k")};
  auto r = end_to_end_metrics({count_image("1", p1, g1), count_image("2", p2, g2)});
  EXPECT_NEAR(r.precision, 3.0 / 5.0, 1e-12);
  EXPECT_NEAR(r.recall, 3.0 / 8.0, 1e-12);
  EXPECT_NEAR(r.f1, 2 * 0.6 * 0.375 / 0.975, 1e-12);
  EXPECT_NEAR(r.rec_precision, 2.0 / 5.0, 1e-12);
  EXPECT_NEAR(r.rec_recall, 2.0 / 8.0, 1e-12);
  EXPECT_LE(r.f1, std::max(r.precision, r.recall));
  EXPECT_GE(r.f1, 0.0);

  // Dropping a correct match lowers recall.
  p2.clear();
  auto worse = end_to_end_metrics({count_image("1", p1, g1), count_image("2", p2, g2)});
  EXPECT_LT(worse.recall, r.recall);
}

TEST(Metrics, EmptyDatasetIsAnError) { EXPECT_THROW(end_to_end_metrics({}), std::invalid_argument); }

TEST(Nms, SuppressesOverlapsKeepsBest) {
  std::vector<Detection> d = {det(0.5, {0.5, 0.5, 0.2, 0.2}, "a"), det(0.9, {0.51, 0.5, 0.2, 0.2}, "b"),
                              det(0.7, {0.1, 0.1, 0.1, 0.1}, "c")};
  auto k = non_max_suppression(d, 0.5);
  ASSERT_EQ(k.size(), 2u);
  EXPECT_EQ(k[0].text, "b");
  EXPECT_EQ(k[1].text, "c");
}

TEST(EvalResult, CsvRow) {
  EvalResult r;
  r.precision = 0.5;
  r.recall = 0.25;
  EXPECT_EQ(r.csv_header(), "precision,recall,f1,rec_precision,rec_recall,hmean");
  EXPECT_EQ(r.csv_row().substr(0, 9), "0.5,0.25,");
}
