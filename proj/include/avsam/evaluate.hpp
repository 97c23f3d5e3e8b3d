#pragma once

#include <cmath>
#include <vector>

#include "avsam/config.hpp"
#include "avsam/metrics.hpp"
#include "avsam/model.hpp"

namespace avsam {

inline Tensor sigmoid(const Tensor& logits) {
  Tensor p = logits;
  for (double& v : p.data) v = 1.0 / (1.0 + std::exp(-v));
  return p;
}

inline Tensor binarize(const Tensor& probs, double threshold) {
  Tensor m = probs;
  for (double& v : m.data) v = v > threshold ? 1.0 : 0.0;
  return m;
}

/// Prompt-free inference over every example, scored against its mask.
/// `ablate_audio` replaces the audio embedding with zeros.
inline metrics::MetricReport evaluate(const Model& model, const std::vector<Example>& examples, const EvalConfig& ecfg,
                                      bool ablate_audio = false) {
  require(!examples.empty(), "evaluate: no examples");
  ForwardOptions fo;
  fo.ablate_audio = ablate_audio;
  std::vector<metrics::ScoredSample> scored;
  scored.reserve(examples.size());
  for (const auto& ex : examples) {
    const Tensor probs = sigmoid(model.predict(ex.spectrogram, ex.image, fo).values);
    scored.push_back({ex.id, probs, binarize(probs, ecfg.threshold), ex.mask});
  }
  return metrics::summarize(std::move(scored), ecfg.beta_sq, ecfg.per_image_ap);
}

}  // namespace avsam
