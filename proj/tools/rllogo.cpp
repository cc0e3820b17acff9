// Command-line entry point: dataset generation, the two training stages,
// inference, evaluation, trajectory visualization and the reward ablation.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rllogo/eval.hpp"
#include "rllogo/pipeline.hpp"
#include "rllogo/synthgen.hpp"

namespace fs = std::filesystem;
using namespace rllogo;

namespace {

pipeline::TrainConfig config_or_default(const std::string& path) {
  if (path.empty()) return pipeline::TrainConfig{};
  return pipeline::load_config(path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t at = 0;
  while (at < csv.size()) {
    std::size_t comma = csv.find(',', at);
    if (comma == std::string::npos) comma = csv.size();
    seeds.push_back(std::stoull(csv.substr(at, comma - at)));
    at = comma + 1;
  }
  return seeds;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << j.dump(2) << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"RL-LOGO: confidence-guided reinforcement-learning logo localization"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic logo-scene dataset");
  synthgen::DatasetOptions gen_opt;
  std::string gen_out = "data";
  gen->add_option("--classes", gen_opt.num_classes, "Number of logo classes")
      ->capture_default_str();
  gen->add_option("--train", gen_opt.n_train, "Training scenes")->capture_default_str();
  gen->add_option("--eval", gen_opt.n_eval, "Evaluation scenes")->capture_default_str();
  gen->add_option("--scale-min", gen_opt.scale_min, "Minimum logo scale")
      ->capture_default_str();
  gen->add_option("--scale-max", gen_opt.scale_max, "Maximum logo scale")
      ->capture_default_str();
  gen->add_option("--canvas", gen_opt.canvas, "Canvas side in pixels")
      ->capture_default_str();
  gen->add_option("--seed", gen_opt.seed, "Master seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Stage 1: classification pre-training");
  std::string pre_train, pre_eval, pre_config, pre_out = "pretrained.bin";
  std::uint64_t pre_seed = 1;
  pre->add_option("--train", pre_train, "Training manifest (jsonl)")->required();
  pre->add_option("--eval", pre_eval, "Evaluation manifest (jsonl)")->required();
  pre->add_option("--config", pre_config, "TrainConfig JSON file");
  pre->add_option("--seed", pre_seed, "Training seed")->capture_default_str();
  pre->add_option("--out", pre_out, "Output checkpoint path")->capture_default_str();

  // train-joint
  auto* joint = app.add_subcommand("train-joint", "Stage 2: joint DQN training");
  std::string joint_ckpt, joint_train, joint_config, joint_out = "joint.bin";
  std::string joint_reward = "confidence";
  std::uint64_t joint_seed = 1;
  joint->add_option("--ckpt", joint_ckpt, "Pre-trained checkpoint")->required();
  joint->add_option("--train", joint_train, "Training manifest (jsonl)")->required();
  joint->add_option("--reward", joint_reward, "Reward kind: confidence|iou")
      ->capture_default_str();
  joint->add_option("--config", joint_config, "TrainConfig JSON file");
  joint->add_option("--seed", joint_seed, "Training seed")->capture_default_str();
  joint->add_option("--out", joint_out, "Output checkpoint path")->capture_default_str();

  // infer
  auto* inf = app.add_subcommand("infer", "Localize and classify one image");
  std::string inf_ckpt, inf_image, inf_out;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--image", inf_image, "Input PPM image")->required();
  inf->add_option("--out", inf_out, "Write the result JSON here (default stdout)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  std::string ev_ckpt, ev_manifest, ev_out;
  double ev_threshold = 0.5;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "Evaluation manifest")->required();
  ev->add_option("--iou-threshold", ev_threshold, "Recall IoU threshold")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "Write the report JSON here (default stdout)");

  // viz
  auto* viz = app.add_subcommand("viz", "Render the inference trajectory");
  std::string viz_ckpt, viz_image, viz_out = "trace.ppm";
  viz->add_option("--ckpt", viz_ckpt, "Checkpoint")->required();
  viz->add_option("--image", viz_image, "Input PPM image")->required();
  viz->add_option("--out", viz_out, "Annotated PPM path")->capture_default_str();

  // ablate-rewards
  auto* abl = app.add_subcommand("ablate-rewards",
                                 "Train and evaluate both reward functions");
  std::string abl_train, abl_eval, abl_config, abl_out, abl_seeds = "1,2,3";
  abl->add_option("--train", abl_train, "Training manifest")->required();
  abl->add_option("--eval", abl_eval, "Evaluation manifest")->required();
  abl->add_option("--seeds", abl_seeds, "Comma-separated seed list")
      ->capture_default_str();
  abl->add_option("--config", abl_config, "TrainConfig JSON file");
  abl->add_option("--out", abl_out, "Write the ablation JSON here (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints the message and usage
    return code == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    auto [train, eval] = synthgen::generate_dataset(gen_opt, gen_out);
    std::cout << "wrote " << train.records.size() << " train and "
              << eval.records.size() << " eval scenes to " << gen_out << "\n";
    return 0;
  }

  if (pre->parsed()) {
    auto config = config_or_default(pre_config);
    auto train_manifest = synthgen::load_manifest(pre_train);
    auto eval_manifest = synthgen::load_manifest(pre_eval);
    auto out = pipeline::pretrain(config, train_manifest, eval_manifest, pre_seed,
                                  &std::cerr);
    pipeline::save_checkpoint(out.checkpoint, pre_out);
    std::cout << "pretrained checkpoint written to " << pre_out << " (final top1 "
              << (out.log.empty() ? 0.0 : out.log.back().eval_top1) << ")\n";
    return 0;
  }

  if (joint->parsed()) {
    auto ckpt = pipeline::load_checkpoint(joint_ckpt);
    auto config = joint_config.empty() ? ckpt.config : pipeline::load_config(joint_config);
    auto train_manifest = synthgen::load_manifest(joint_train);
    auto kind = pipeline::reward_kind_from_string(joint_reward);
    auto out = pipeline::train_joint(config, ckpt, train_manifest, joint_seed, kind,
                                     &std::cerr);
    pipeline::save_checkpoint(out.checkpoint, joint_out);
    std::cout << "joint checkpoint written to " << joint_out << "\n";
    return 0;
  }

  if (inf->parsed()) {
    auto ckpt = pipeline::load_checkpoint(inf_ckpt);
    Image image = read_ppm(inf_image);
    auto result = pipeline::infer(ckpt.net, image, ckpt.config.env.to_params());
    nlohmann::json j;
    j["class_id"] = result.predicted_class;
    j["class_name"] = synthgen::class_name_for(result.predicted_class);
    j["box"] = {result.final_box.x1, result.final_box.y1, result.final_box.x2,
                result.final_box.y2};
    j["steps"] = result.steps;
    j["triggered"] = result.triggered;
    write_json(j, inf_out);
    return 0;
  }

  if (ev->parsed()) {
    auto ckpt = pipeline::load_checkpoint(ev_ckpt);
    auto data = pipeline::load_dataset(fs::path(ev_manifest));
    auto report = eval::evaluate(ckpt.net, data, ckpt.config.env.to_params(),
                                 ev_threshold);
    write_json(report.to_json(), ev_out);
    return 0;
  }

  if (viz->parsed()) {
    auto ckpt = pipeline::load_checkpoint(viz_ckpt);
    Image image = read_ppm(viz_image);
    auto result = pipeline::infer(ckpt.net, image, ckpt.config.env.to_params());
    eval::render_trace(image, result.trace, viz_out);
    std::cout << "trace with " << result.trace.size() << " states written to "
              << viz_out << "\n";
    return 0;
  }

  if (abl->parsed()) {
    auto config = config_or_default(abl_config);
    auto report = eval::ablate_rewards(config, abl_train, abl_eval,
                                       parse_seed_list(abl_seeds), &std::cerr);
    write_json(report.to_json(), abl_out);
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
