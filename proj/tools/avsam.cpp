// avsam: command-line front end for data generation, training, evaluation,
// inference, gradient checking and mask overlays.
//
// Exit codes: 0 success, 1 bad input or usage, 2 internal invariant failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avsam/checkpoint.hpp"
#include "avsam/evaluate.hpp"
#include "avsam/image_io.hpp"
#include "avsam/runtime.hpp"
#include "avsam/synth.hpp"
#include "avsam/train.hpp"

namespace fs = std::filesystem;
using namespace avsam;

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;  // key=value

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "Config file of `key = value` lines");
    cmd->add_option("--set", overrides, "Override one config key (key=value); repeatable");
  }

  /// default < config file < AVSAM_SEED < explicit flags
  void apply(Config& cfg) const {
    if (!file.empty()) cfg.load_file(file);
    if (const char* env = std::getenv("AVSAM_SEED"); env != nullptr && *env != '\0') {
      cfg.set("model.seed", env);
      cfg.set("train.seed", env);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path);
  out << text;
  require(out.good(), "write failed: " + path);
}

FreezePlan parse_freeze(const std::vector<std::string>& modules) {
  FreezePlan plan;
  for (const auto& m : modules) plan.flag(m) = false;
  return plan;
}

PromptPoint parse_point(const std::string& s) {
  PromptPoint p;
  int fg = 1;
  char tail = 0;
  require(std::sscanf(s.c_str(), "%lf,%lf,%d%c", &p.x, &p.y, &fg, &tail) == 3 && (fg == 0 || fg == 1),
          "--point expects x,y,label with label 0 or 1, got '" + s + "'");
  p.foreground = fg == 1;
  return p;
}

PromptBox parse_box(const std::string& s) {
  PromptBox b;
  char tail = 0;
  require(std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf%c", &b.x0, &b.y0, &b.x1, &b.y1, &tail) == 4,
          "--box expects x0,y0,x1,y1, got '" + s + "'");
  return b;
}

Model load_model(const std::string& ckpt_path, const ConfigFlags& flags, Config* cfg_out) {
  const Checkpoint c = load_checkpoint(ckpt_path);
  Config cfg = checkpoint_config(c);
  flags.apply(cfg);
  if (cfg_out) *cfg_out = cfg;
  return restore_model(c, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  runtime::init();
  CLI::App app{"Audio-visual sounding-object segmentation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic two-shape dataset with a JSON-lines manifest");
  std::size_t gen_n = 3000;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  ConfigFlags gen_cfg;
  gen->add_option("--n", gen_n, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen_cfg.attach(gen);

  // train
  auto* train = app.add_subcommand("train", "Train from a manifest; writes checkpoint.avsam and loss.csv");
  std::string train_manifest, train_out;
  std::vector<std::string> train_freeze;
  ConfigFlags train_cfg;
  train->add_option("--manifest", train_manifest, "Manifest (train split is used)")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--freeze", train_freeze, "Modules to freeze (comma separated)")
      ->delimiter(',')
      ->check(CLI::IsMember({"image_encoder", "prompt_encoder", "mask_decoder", "fusion", "audio_encoder"}));
  train_cfg.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints metrics JSON");
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out;
  bool eval_ablate = false;
  ConfigFlags eval_cfg;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Manifest")->required();
  eval->add_option("--split", eval_split, "Split to evaluate (train, val, test or all)")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--out", eval_out, "Write metrics JSON here instead of stdout");
  eval->add_flag("--ablate-audio", eval_ablate, "Zero the audio embedding");
  eval_cfg.attach(eval);

  // infer
  auto* infer = app.add_subcommand("infer", "Predict a mask PNG for each (image, audio) pair");
  std::string infer_ckpt, infer_out;
  std::vector<std::string> infer_images, infer_audio, infer_points, infer_boxes;
  ConfigFlags infer_cfg;
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer->add_option("--image", infer_images, "RGB PNG; repeatable")->required();
  infer->add_option("--audio", infer_audio, "PCM16 mono WAV; repeatable, paired with --image in order")->required();
  infer->add_option("--out", infer_out, "Output directory")->required();
  infer->add_option("--point", infer_points, "Point prompt x,y,label (label 1 foreground); repeatable");
  infer->add_option("--box", infer_boxes, "Box prompt x0,y0,x1,y1; repeatable");
  infer_cfg.attach(infer);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences on the tiny model");
  GradcheckOptions gc_opt;
  ConfigFlags gc_cfg;
  gc->add_flag("--zero-mu", gc_opt.zero_mu, "Zero-initialise the fusion output projections");
  gc->add_option("--seed", gc_opt.seed, "Seed for the random inputs");
  gc->add_option("--corrupt", gc_opt.corrupt_param, "Test hook: scale this parameter's analytic gradient by 2");
  gc_cfg.attach(gc);

  // visualize
  auto* vis = app.add_subcommand("visualize", "Blend a mask over an image in red");
  std::string vis_image, vis_mask, vis_out, vis_ckpt, vis_audio;
  ConfigFlags vis_cfg;
  vis->add_option("--image", vis_image, "RGB PNG")->required();
  vis->add_option("--mask", vis_mask, "Mask PNG (or use --checkpoint with --audio)");
  vis->add_option("--checkpoint", vis_ckpt, "Predict the mask with this checkpoint");
  vis->add_option("--audio", vis_audio, "WAV paired with --image when predicting");
  vis->add_option("--out", vis_out, "Output PNG")->required();
  vis_cfg.attach(vis);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      Config cfg;
      gen_cfg.apply(cfg);
      const auto m = synth::generate_dataset(gen_n, cfg, gen_out, gen_seed);
      std::size_t counts[3] = {0, 0, 0};
      for (const auto& r : m.records) ++counts[r.split == "train" ? 0 : r.split == "val" ? 1 : 2];
      std::cout << "wrote " << m.records.size() << " samples (train " << counts[0] << ", val " << counts[1] << ", test "
                << counts[2] << ") to " << (fs::path(gen_out) / "manifest.jsonl").string() << '\n';
    } else if (train->parsed()) {
      Config cfg;
      train_cfg.apply(cfg);
      const FreezePlan plan = parse_freeze(train_freeze);
      const auto manifest = synth::load_manifest(train_manifest);
      const auto records = manifest.split("train");
      require(!records.empty(), "manifest " + train_manifest + " has no train records");
      const auto examples = synth::load_examples(records, cfg);
      std::cerr << "training on " << examples.size() << " examples; " << plan.describe() << '\n';
      const std::size_t steps_per_epoch = (examples.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
      double epoch_total = 0.0;
      const auto res = run_training(examples, cfg, plan, [&](const LossRecord& r) {
        epoch_total += r.loss;
        if (r.step % steps_per_epoch == 0) {
          std::fprintf(stderr, "epoch %zu mean loss %.6f\n", r.epoch, epoch_total / static_cast<double>(steps_per_epoch));
          epoch_total = 0.0;
        }
      });
      std::error_code ec;
      fs::create_directories(train_out, ec);
      require(!ec, "cannot create " + train_out + ": " + ec.message());
      save_checkpoint(res.checkpoint(), (fs::path(train_out) / "checkpoint.avsam").string());
      write_text((fs::path(train_out) / "loss.csv").string(), loss_csv(res.log));
      std::cout << "wrote " << (fs::path(train_out) / "checkpoint.avsam").string() << " and loss.csv\n";
    } else if (eval->parsed()) {
      Config cfg;
      const Model model = load_model(eval_ckpt, eval_cfg, &cfg);
      const auto manifest = synth::load_manifest(eval_manifest);
      const auto records = manifest.split(eval_split == "all" ? "" : eval_split);
      require(!records.empty(), "manifest " + eval_manifest + " has no " + eval_split + " records");
      const auto report = evaluate(model, synth::load_examples(records, cfg), cfg.eval, eval_ablate);
      const std::string text = report.to_json().dump(2) + "\n";
      if (eval_out.empty()) std::cout << text;
      else write_text(eval_out, text);
    } else if (infer->parsed()) {
      require(infer_images.size() == infer_audio.size(),
              "got " + std::to_string(infer_images.size()) + " --image but " + std::to_string(infer_audio.size()) +
                  " --audio; they are paired in order");
      Config cfg;
      const Model model = load_model(infer_ckpt, infer_cfg, &cfg);
      ForwardOptions fo;
      for (const auto& s : infer_points) fo.prompts.points.push_back(parse_point(s));
      for (const auto& s : infer_boxes) fo.prompts.boxes.push_back(parse_box(s));
      // Decode and predict everything before writing anything.
      const std::size_t n = cfg.model.image_size;
      std::vector<std::pair<std::string, Tensor>> outputs;
      for (std::size_t i = 0; i < infer_images.size(); ++i) {
        const Tensor image = image_io::load_rgb(infer_images[i]);
        require_shape(image, {3, n, n}, "image " + infer_images[i]);
        const Tensor spec = compute_log_spectrogram(load_waveform(infer_audio[i], cfg.audio), cfg.audio).values;
        const Tensor mask = binarize(sigmoid(model.predict(spec, image, fo).values), cfg.eval.threshold);
        const std::string name = fs::path(infer_images[i]).stem().string() + "_mask.png";
        for (const auto& [other, t] : outputs) require(other != name, "two inputs would both write " + name);
        outputs.emplace_back(name, mask);
      }
      std::error_code ec;
      fs::create_directories(infer_out, ec);
      require(!ec, "cannot create " + infer_out + ": " + ec.message());
      for (const auto& [name, mask] : outputs) {
        image_io::save_mask((fs::path(infer_out) / name).string(), mask);
        std::cout << (fs::path(infer_out) / name).string() << '\n';
      }
    } else if (gc->parsed()) {
      Config cfg = Config::tiny();
      gc_cfg.apply(cfg);
      const auto report = gradcheck(cfg, gc_opt);
      std::cout << report.table();
      return report.passed() ? 0 : 1;
    } else if (vis->parsed()) {
      const Tensor image = image_io::load_rgb(vis_image);
      Tensor mask;
      if (!vis_mask.empty()) {
        require(vis_ckpt.empty(), "pass either --mask or --checkpoint, not both");
        mask = image_io::load_mask(vis_mask);
      } else {
        require(!vis_ckpt.empty() && !vis_audio.empty(), "visualize needs --mask, or --checkpoint with --audio");
        Config cfg;
        const Model model = load_model(vis_ckpt, vis_cfg, &cfg);
        require_shape(image, {3, cfg.model.image_size, cfg.model.image_size}, "image " + vis_image);
        const Tensor spec = compute_log_spectrogram(load_waveform(vis_audio, cfg.audio), cfg.audio).values;
        mask = binarize(sigmoid(model.predict(spec, image).values), cfg.eval.threshold);
      }
      image_io::save_rgb(vis_out, image_io::overlay(image, mask, 0.5));
    }
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
