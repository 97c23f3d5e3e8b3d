#include <gtest/gtest.h>

#include "avsam/metrics.hpp"
#include "metric_oracles.hpp"

using namespace avsam;

TEST(Metrics, IoUAndFScoreMatchOracle) {
  for (const auto& f : oracle::fixtures()) {
    EXPECT_NEAR(metrics::iou(f.pred, f.gt), oracle::iou(f.pred, f.gt), 1e-12);
    for (double b2 : {0.3, 1.0}) EXPECT_NEAR(metrics::f_score(f.pred, f.gt, b2), oracle::fscore(f.pred, f.gt, b2), 1e-12);
  }
}

TEST(Metrics, HandComputedValues) {
  const auto fx = oracle::fixtures();
  // 12-pixel block vs 12-pixel block sharing 6 pixels: 6 / 18.
  EXPECT_NEAR(metrics::iou(fx[0].pred, fx[0].gt), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(metrics::iou(fx[1].pred, fx[1].gt), 0.0);
  EXPECT_EQ(metrics::iou(fx[2].pred, fx[2].gt), 1.0);
  // P = R = 1/2 gives F = 1/2 for any beta.
  EXPECT_NEAR(metrics::f_score(fx[0].pred, fx[0].gt, 0.3), 0.5, 1e-15);
  EXPECT_EQ(metrics::f_score(fx[1].pred, fx[1].gt, 1.0), 0.0);
}

TEST(Metrics, EmptyMaskConventions) {
  const Tensor empty({8, 8}, 0.0);
  EXPECT_EQ(metrics::iou(empty, empty), 1.0);
  EXPECT_EQ(metrics::f_score(empty, empty, 0.3), 0.0);
  EXPECT_THROW(metrics::iou(empty, Tensor({4, 4})), ContractError);
}

TEST(Metrics, AveragePrecisionHandCase) {
  // Hits at ranks 1, 3 and 6: (1 + 2/3 + 1/2) / 3.
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.4}, l{1, 0, 1, 0, 0, 1};
  EXPECT_NEAR(metrics::average_precision(s, l), 13.0 / 18.0, 1e-15);
  EXPECT_NEAR(oracle::average_precision(s, l), 13.0 / 18.0, 1e-15);
}

TEST(Metrics, AveragePrecisionTiesAndPerfectRanking) {
  EXPECT_NEAR(metrics::average_precision({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 0}), 0.25, 1e-15);
  EXPECT_EQ(metrics::average_precision({0.9, 0.8, 0.1}, {1, 1, 0}), 1.0);
  EXPECT_THROW(metrics::average_precision({0.1, 0.2}, {0, 0}), ContractError);
}

TEST(Metrics, PooledAPMatchesOracle) {
  std::vector<Tensor> scores, gts;
  std::vector<double> s, l;
  for (const auto& f : oracle::fixtures()) {
    scores.push_back(f.scores);
    gts.push_back(f.gt);
    s.insert(s.end(), f.scores.data.begin(), f.scores.data.end());
    l.insert(l.end(), f.gt.data.begin(), f.gt.data.end());
  }
  EXPECT_NEAR(metrics::pixel_ap(scores, gts), oracle::average_precision(s, l), 1e-12);
}

TEST(Metrics, CiouAndAucMatchOracle) {
  const std::vector<double> ious{0.0, 0.05, 0.3, 0.5, 0.5000001, 0.77, 1.0};
  const auto loc = metrics::ciou_auc(ious);
  EXPECT_NEAR(loc.ciou, oracle::ciou(ious), 1e-15);
  EXPECT_NEAR(loc.auc, oracle::auc(ious), 1e-12);
  EXPECT_NEAR(loc.ciou, 3.0 / 7.0, 1e-15);
  EXPECT_EQ(metrics::ciou_auc({1.0, 1.0}).auc, 1.0);
  EXPECT_EQ(metrics::ciou_auc({0.0}).auc, 0.0);
}

TEST(Metrics, SummaryReportIsOrderedAndComplete) {
  std::vector<metrics::ScoredSample> samples;
  const auto fx = oracle::fixtures();
  for (std::size_t i = 0; i < fx.size(); ++i) samples.push_back({"id" + std::to_string(2 - i), fx[i].scores, fx[i].pred, fx[i].gt});
  const auto r = metrics::summarize(samples, 0.3);
  ASSERT_EQ(r.per_sample.size(), 3u);
  EXPECT_EQ(r.per_sample[0].id, "id0");
  EXPECT_NEAR(r.miou, (1.0 / 3.0 + 0.0 + 1.0) / 3.0, 1e-15);
  const auto j = r.to_json();
  for (const char* k : {"miou", "fscore", "beta_sq", "ap", "ciou", "auc", "per_sample"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.begin().key(), "miou");
}
