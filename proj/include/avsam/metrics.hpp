#pragma once

// Localization metrics (pixel AP, cIoU, AUC) and segmentation metrics (mIoU,
// F-beta). Masks are (H, W) tensors holding 0/1.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsam/error.hpp"
#include "avsam/tensor.hpp"

namespace avsam::metrics {

namespace detail {
inline void check_pair(const Tensor& pred, const Tensor& gt, const char* what) {
  require(pred.shape == gt.shape, std::string(what) + ": shape mismatch " + shape_str(pred.shape) + " vs " +
                                      shape_str(gt.shape));
}
}  // namespace detail

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const Tensor& pred, const Tensor& gt) {
  detail::check_pair(pred, gt, "confusion");
  Confusion c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != 0.0, g = gt[i] != 0.0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// |pred AND gt| / |pred OR gt|; two empty masks score 1.
inline double iou(const Tensor& pred, const Tensor& gt) {
  const Confusion c = confusion(pred, gt);
  const std::size_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

/// (1 + b2) P R / (b2 P + R), zero when the denominator vanishes.
inline double f_score(const Tensor& pred, const Tensor& gt, double beta_sq) {
  require(beta_sq > 0.0, "f_score: beta_sq must be positive");
  const Confusion c = confusion(pred, gt);
  const double precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double denom = beta_sq * precision + recall;
  return denom == 0.0 ? 0.0 : (1.0 + beta_sq) * precision * recall / denom;
}

/// Success ratio (fraction of IoUs strictly above t) at t = 0, 0.05, ..., 0.95.
struct ThresholdCurve {
  std::vector<double> thresholds;
  std::vector<double> success_ratio;
};

inline ThresholdCurve threshold_curve(const std::vector<double>& ious) {
  require(!ious.empty(), "threshold_curve: empty IoU list");
  ThresholdCurve c;
  for (int k = 0; k < 20; ++k) {
    const double t = k / 20.0;
    const auto hits = std::count_if(ious.begin(), ious.end(), [t](double v) { return v > t; });
    c.thresholds.push_back(t);
    c.success_ratio.push_back(static_cast<double>(hits) / static_cast<double>(ious.size()));
  }
  return c;
}

struct LocalizationScores {
  double ciou = 0.0;  // fraction of samples with IoU > 0.5
  double auc = 0.0;   // mean success ratio over the threshold grid
};

inline LocalizationScores ciou_auc(const std::vector<double>& ious) {
  require(!ious.empty(), "ciou_auc: empty IoU list");
  for (double v : ious) require(v >= 0.0 && v <= 1.0, "ciou_auc: IoU outside [0,1]");
  const ThresholdCurve c = threshold_curve(ious);
  LocalizationScores s;
  s.ciou = static_cast<double>(std::count_if(ious.begin(), ious.end(), [](double v) { return v > 0.5; })) /
           static_cast<double>(ious.size());
  s.auc = std::accumulate(c.success_ratio.begin(), c.success_ratio.end(), 0.0) /
          static_cast<double>(c.success_ratio.size());
  return s;
}

/// Average precision of scored binary labels, sum over distinct score
/// thresholds of (R_k - R_{k-1}) * P_k. Tied scores form one threshold.
inline double average_precision(const std::vector<double>& scores, const std::vector<double>& labels) {
  require(scores.size() == labels.size(), "average_precision: size mismatch");
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](double v) { return v != 0.0; }));
  require(positives > 0, "average_precision: no positive pixels in the evaluation set; AP is undefined");
  for (double s : scores) require(std::isfinite(s), "average_precision: non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      ++seen;
      if (labels[order[i]] != 0.0) ++tp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Pixel AP with all pixels of all samples pooled into one ranking.
inline double pixel_ap(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts) {
  require(scores.size() == gts.size(), "pixel_ap: sample count mismatch");
  std::vector<double> s, l;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    detail::check_pair(scores[i], gts[i], "pixel_ap");
    s.insert(s.end(), scores[i].data.begin(), scores[i].data.end());
    l.insert(l.end(), gts[i].data.begin(), gts[i].data.end());
  }
  return average_precision(s, l);
}

/// Mean of per-image AP over images that contain at least one positive pixel.
inline double pixel_ap_per_image(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts) {
  require(scores.size() == gts.size(), "pixel_ap_per_image: sample count mismatch");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    detail::check_pair(scores[i], gts[i], "pixel_ap_per_image");
    if (std::none_of(gts[i].data.begin(), gts[i].data.end(), [](double v) { return v != 0.0; })) continue;
    total += average_precision(scores[i].data, gts[i].data);
    ++n;
  }
  require(n > 0, "pixel_ap_per_image: no image has positive pixels; AP is undefined");
  return total / static_cast<double>(n);
}

struct SampleScore {
  std::string id;
  double iou = 0.0;
  double fscore = 0.0;
};

struct MetricReport {
  double ap = 0.0;
  double ciou = 0.0;
  double auc = 0.0;
  double miou = 0.0;
  double fscore = 0.0;
  double beta_sq = 0.3;
  std::vector<SampleScore> per_sample;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["miou"] = miou;
    j["fscore"] = fscore;
    j["beta_sq"] = beta_sq;
    j["ap"] = ap;
    j["ciou"] = ciou;
    j["auc"] = auc;
    j["per_sample"] = nlohmann::ordered_json::array();
    for (const auto& s : per_sample) j["per_sample"].push_back({{"id", s.id}, {"iou", s.iou}, {"fscore", s.fscore}});
    return j;
  }
};

struct ScoredSample {
  std::string id;
  Tensor scores;  // per-pixel foreground probability
  Tensor pred;    // binarized prediction
  Tensor gt;
};

/// Aggregates per-sample masks into the five-metric report. Samples are
/// reported in id order.
inline MetricReport summarize(std::vector<ScoredSample> samples, double beta_sq, bool per_image_ap = false) {
  require(!samples.empty(), "summarize: no samples");
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  MetricReport r;
  r.beta_sq = beta_sq;
  std::vector<double> ious;
  std::vector<Tensor> scores, gts;
  double f_total = 0.0;
  for (const auto& s : samples) {
    const double i = iou(s.pred, s.gt);
    const double f = f_score(s.pred, s.gt, beta_sq);
    r.per_sample.push_back({s.id, i, f});
    ious.push_back(i);
    f_total += f;
    scores.push_back(s.scores);
    gts.push_back(s.gt);
  }
  r.miou = std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
  r.fscore = f_total / static_cast<double>(samples.size());
  const LocalizationScores loc = ciou_auc(ious);
  r.ciou = loc.ciou;
  r.auc = loc.auc;
  r.ap = per_image_ap ? pixel_ap_per_image(scores, gts) : pixel_ap(scores, gts);
  return r;
}

}  // namespace avsam::metrics
