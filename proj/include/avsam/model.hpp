#pragma once

#include <array>
#include <string>
#include <vector>

#include "avsam/backbone.hpp"
#include "avsam/config.hpp"
#include "avsam/fusion.hpp"
#include "avsam/params.hpp"
#include "avsam/seg_head.hpp"

namespace avsam {

inline constexpr std::array<const char*, 5> kModules = {"image_encoder", "prompt_encoder", "mask_decoder", "fusion",
                                                        "audio_encoder"};

/// Per-module trainability flags.
struct FreezePlan {
  bool image_encoder = true;
  bool prompt_encoder = true;
  bool mask_decoder = true;
  bool fusion = true;
  bool audio_encoder = true;

  bool trainable(const std::string& module) const {
    if (module == "image_encoder") return image_encoder;
    if (module == "prompt_encoder") return prompt_encoder;
    if (module == "mask_decoder") return mask_decoder;
    if (module == "fusion") return fusion;
    if (module == "audio_encoder") return audio_encoder;
    throw ContractError("unknown module: " + module);
  }
  bool& flag(const std::string& module) {
    if (module == "image_encoder") return image_encoder;
    if (module == "prompt_encoder") return prompt_encoder;
    if (module == "mask_decoder") return mask_decoder;
    if (module == "fusion") return fusion;
    if (module == "audio_encoder") return audio_encoder;
    throw ContractError("unknown module: " + module);
  }

  static FreezePlan all_frozen() { return {false, false, false, false, false}; }

  /// The four ablation rows over (mask decoder, prompt encoder, image
  /// encoder); fusion and the audio encoder always train.
  static std::array<FreezePlan, 4> ablation_rows() {
    return {FreezePlan{false, false, false, true, true}, FreezePlan{false, false, true, true, true},
            FreezePlan{false, true, true, true, true}, FreezePlan{true, true, true, true, true}};
  }

  std::string describe() const {
    std::string s;
    for (const char* m : kModules) s += std::string(s.empty() ? "" : ",") + m + "=" + (trainable(m) ? "train" : "frozen");
    return s;
  }
};

/// One (spectrogram, image, mask) training or evaluation example.
struct Example {
  std::string id;
  Tensor spectrogram;  // (F, T)
  Tensor image;        // (3, H, W)
  Tensor mask;         // (H, W), binary
};

struct ForwardOptions {
  bool ablate_audio = false;
  PromptSet prompts;
};

struct ForwardResult {
  Var logits;  // (H, W)
  Var audio;   // (D)
  std::vector<Var> pyramid;
  std::vector<Var> fused;
};

struct Model {
  Config cfg;
  ParamStore params;

  static Model init(const Config& cfg) {
    cfg.validate();
    Model m{cfg, {}};
    InitRng rng(cfg.model.seed);
    backbone::init_audio_encoder(m.params, rng, cfg.model);
    backbone::init_image_encoder(m.params, rng, cfg.model);
    fusion::init(m.params, rng, cfg.model);
    seg_head::init_prompt_encoder(m.params, rng, cfg.model);
    seg_head::init_mask_decoder(m.params, rng, cfg.model);
    return m;
  }

  ForwardResult forward(Binder& p, const Tensor& spectrogram, const Tensor& image, const ForwardOptions& opt = {}) const {
    Graph& g = p.graph();
    ForwardResult r;
    r.audio = backbone::encode_audio(p, spectrogram, cfg);
    if (opt.ablate_audio) r.audio = g.constant(Tensor({cfg.model.D}, 0.0));
    r.pyramid = backbone::encode_image(p, image, cfg);
    r.fused = fusion::fuse_pyramid(p, r.pyramid, r.audio, cfg.model);
    const auto prompts = seg_head::encode_prompts(p, opt.prompts, cfg.model);
    r.logits = seg_head::decode_mask(p, r.fused, prompts, cfg.model);
    return r;
  }

  MaskLogits predict(const Tensor& spectrogram, const Tensor& image, const ForwardOptions& opt = {}) const {
    Graph g;
    Binder p(g, params);
    return MaskLogits{g.value(forward(p, spectrogram, image, opt).logits)};
  }
};

}  // namespace avsam
