#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rllogo/agent.hpp"
#include "rllogo/checkpoint.hpp"
#include "rllogo/locenv.hpp"
#include "rllogo/synthgen.hpp"

// Orchestrates the two-stage training procedure (classification pre-training,
// then joint DQN training) and the inference rollout, with checkpointing and
// seeded reproducibility end to end.
namespace rllogo::pipeline {

using locenv::Action;
using locenv::BBox;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration. The JSON config file mirrors this tree exactly; unknown keys
// are rejected. Defaults are the desk-scale defaults.

struct PretrainConfig {
  int epochs = 60;
  double lr = 0.001;
  double lr_after_drop = 0.0001;
  int drop_epoch = 45;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int batch = 8;
  bool rotation_augment = true;
};

struct EpsilonConfig {
  double start = 1.0;
  double end = 0.1;
  double anneal_epochs = 5;
};

struct JointConfig {
  int epochs = 15;
  EpsilonConfig epsilon;
  double gamma = 0.9;
  int replay_capacity = 10000;
  int batch = 32;
  int target_sync = 500;       // q_updates between target refreshes; 0 = online target
  int update_every = 8;        // env steps between q_updates
  int episodes_per_scene = 1;
  bool sub_epoch_anneal = false;
  std::string exploration = "uniform";
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
};

struct EnvConfig {
  double alpha = 0.2;
  int max_steps = 40;
  double min_box = 0.05;
  int encoder_input_side = 32;
  int history_len = 10;

  locenv::EnvParams to_params() const {
    locenv::EnvParams p;
    p.alpha = alpha;
    p.max_steps = max_steps;
    p.min_box = min_box;
    p.encoder_input_side = encoder_input_side;
    p.history_len = history_len;
    return p;
  }
};

struct ModelConfig {
  int encoder_hidden = 512;
  int feature_dim = 256;
  int trunk_width = 1024;
};

struct TrainConfig {
  PretrainConfig pretrain;
  JointConfig joint;
  EnvConfig env;
  ModelConfig model;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};

  agent::ModelShape shape(int num_classes) const {
    agent::ModelShape s;
    s.encoder_input_side = env.encoder_input_side;
    s.encoder_hidden = model.encoder_hidden;
    s.feature_dim = model.feature_dim;
    s.trunk_width = model.trunk_width;
    s.history_len = env.history_len;
    s.num_classes = num_classes;
    return s;
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object())
    throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void assign(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  detail::check_keys(j, {"pretrain", "joint", "env", "model", "seeds"}, "root");
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    detail::check_keys(p,
                       {"epochs", "lr", "lr_after_drop", "drop_epoch", "momentum",
                        "weight_decay", "batch", "rotation_augment"},
                       "pretrain");
    detail::assign(p, "epochs", c.pretrain.epochs);
    detail::assign(p, "lr", c.pretrain.lr);
    detail::assign(p, "lr_after_drop", c.pretrain.lr_after_drop);
    detail::assign(p, "drop_epoch", c.pretrain.drop_epoch);
    detail::assign(p, "momentum", c.pretrain.momentum);
    detail::assign(p, "weight_decay", c.pretrain.weight_decay);
    detail::assign(p, "batch", c.pretrain.batch);
    detail::assign(p, "rotation_augment", c.pretrain.rotation_augment);
  }
  if (j.contains("joint")) {
    const auto& p = j.at("joint");
    detail::check_keys(p,
                       {"epochs", "epsilon", "gamma", "replay_capacity", "batch",
                        "target_sync", "update_every", "episodes_per_scene",
                        "sub_epoch_anneal", "exploration", "lr", "momentum",
                        "weight_decay"},
                       "joint");
    detail::assign(p, "epochs", c.joint.epochs);
    if (p.contains("epsilon")) {
      const auto& e = p.at("epsilon");
      detail::check_keys(e, {"start", "end", "anneal_epochs"}, "joint.epsilon");
      detail::assign(e, "start", c.joint.epsilon.start);
      detail::assign(e, "end", c.joint.epsilon.end);
      detail::assign(e, "anneal_epochs", c.joint.epsilon.anneal_epochs);
    }
    detail::assign(p, "gamma", c.joint.gamma);
    detail::assign(p, "replay_capacity", c.joint.replay_capacity);
    detail::assign(p, "batch", c.joint.batch);
    detail::assign(p, "target_sync", c.joint.target_sync);
    detail::assign(p, "update_every", c.joint.update_every);
    detail::assign(p, "episodes_per_scene", c.joint.episodes_per_scene);
    detail::assign(p, "sub_epoch_anneal", c.joint.sub_epoch_anneal);
    detail::assign(p, "exploration", c.joint.exploration);
    detail::assign(p, "lr", c.joint.lr);
    detail::assign(p, "momentum", c.joint.momentum);
    detail::assign(p, "weight_decay", c.joint.weight_decay);
  }
  if (j.contains("env")) {
    const auto& p = j.at("env");
    detail::check_keys(
        p, {"alpha", "max_steps", "min_box", "encoder_input_side", "history_len"},
        "env");
    detail::assign(p, "alpha", c.env.alpha);
    detail::assign(p, "max_steps", c.env.max_steps);
    detail::assign(p, "min_box", c.env.min_box);
    detail::assign(p, "encoder_input_side", c.env.encoder_input_side);
    detail::assign(p, "history_len", c.env.history_len);
  }
  if (j.contains("model")) {
    const auto& p = j.at("model");
    detail::check_keys(p, {"encoder_hidden", "feature_dim", "trunk_width"}, "model");
    detail::assign(p, "encoder_hidden", c.model.encoder_hidden);
    detail::assign(p, "feature_dim", c.model.feature_dim);
    detail::assign(p, "trunk_width", c.model.trunk_width);
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (c.joint.exploration != "uniform")
    throw std::invalid_argument("config: unknown exploration policy '" +
                                c.joint.exploration + "'");
  if (c.pretrain.lr <= 0 || c.pretrain.lr_after_drop <= 0 || c.joint.lr < 0)
    throw std::invalid_argument("config: learning rates must be positive");
  if (c.pretrain.epochs > 0 && c.pretrain.drop_epoch >= c.pretrain.epochs)
    throw std::invalid_argument("config: drop_epoch must be < pretrain.epochs");
  return c;
}

inline json config_to_json(const TrainConfig& c) {
  json j;
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"lr_after_drop", c.pretrain.lr_after_drop},
                   {"drop_epoch", c.pretrain.drop_epoch},
                   {"momentum", c.pretrain.momentum},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"batch", c.pretrain.batch},
                   {"rotation_augment", c.pretrain.rotation_augment}};
  j["joint"] = {{"epochs", c.joint.epochs},
                {"epsilon",
                 {{"start", c.joint.epsilon.start},
                  {"end", c.joint.epsilon.end},
                  {"anneal_epochs", c.joint.epsilon.anneal_epochs}}},
                {"gamma", c.joint.gamma},
                {"replay_capacity", c.joint.replay_capacity},
                {"batch", c.joint.batch},
                {"target_sync", c.joint.target_sync},
                {"update_every", c.joint.update_every},
                {"episodes_per_scene", c.joint.episodes_per_scene},
                {"sub_epoch_anneal", c.joint.sub_epoch_anneal},
                {"exploration", c.joint.exploration},
                {"lr", c.joint.lr},
                {"momentum", c.joint.momentum},
                {"weight_decay", c.joint.weight_decay}};
  j["env"] = {{"alpha", c.env.alpha},
              {"max_steps", c.env.max_steps},
              {"min_box", c.env.min_box},
              {"encoder_input_side", c.env.encoder_input_side},
              {"history_len", c.env.history_len}};
  j["model"] = {{"encoder_hidden", c.model.encoder_hidden},
                {"feature_dim", c.model.feature_dim},
                {"trunk_width", c.model.trunk_width}};
  j["seeds"] = c.seeds;
  return j;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return config_from_json(json::parse(f));
}

// ---------------------------------------------------------------------------
// Checkpoints: agent parameters, optimizer velocities, stage counters, the
// config snapshot and the training rng state, all riding in the tensor file.

struct Checkpoint {
  agent::AgentNet net;
  std::map<std::string, numkit::Tensor> velocity;  // keyed by parameter name
  TrainConfig config;
  int pretrain_epochs_done = 0;
  int joint_epochs_done = 0;
  std::int64_t update_count = 0;
  std::uint64_t rng_state = 0;
};

inline std::vector<std::pair<std::string, numkit::Tensor*>> named_params(
    agent::AgentNet& net) {
  std::vector<std::pair<std::string, numkit::Tensor*>> out;
  for (std::size_t i = 0; i < net.encoder.size(); ++i) {
    std::string base = "agent.encoder" + std::to_string(i);
    out.emplace_back(base + ".weight", &net.encoder[i].weight);
    out.emplace_back(base + ".bias", &net.encoder[i].bias);
  }
  auto add = [&](const char* base, numkit::LinearLayerT<float>& l) {
    out.emplace_back(std::string(base) + ".weight", &l.weight);
    out.emplace_back(std::string(base) + ".bias", &l.bias);
  };
  add("agent.trunk1", net.trunk1);
  add("agent.trunk2", net.trunk2);
  add("agent.q_head", net.q_head);
  add("agent.class_head", net.class_head);
  return out;
}

inline ckpt::TensorFile pack_checkpoint(const Checkpoint& c) {
  ckpt::TensorFile file;
  agent::AgentNet& net = const_cast<agent::AgentNet&>(c.net);
  for (auto& [name, tensor] : named_params(net)) {
    file.tensors[name] = *tensor;
    auto it = c.velocity.find(name);
    file.tensors["opt.velocity." + name] =
        it != c.velocity.end() ? it->second : numkit::make_zeros<float>(tensor->dims);
  }
  file.tensors["meta.config_json"] =
      ckpt::string_to_tensor(config_to_json(c.config).dump());
  file.tensors["meta.counters"] = numkit::Tensor(
      {3}, {static_cast<float>(c.pretrain_epochs_done),
            static_cast<float>(c.joint_epochs_done),
            static_cast<float>(c.update_count)});
  file.rng_state = c.rng_state;
  return file;
}

inline Checkpoint unpack_checkpoint(const ckpt::TensorFile& file) {
  Checkpoint c;
  auto need = [&](const std::string& name) -> const numkit::Tensor& {
    auto it = file.tensors.find(name);
    if (it == file.tensors.end())
      throw ckpt::CheckpointIoError(ckpt::CheckpointError::truncated,
                                    "checkpoint: missing tensor " + name);
    return it->second;
  };
  c.config = config_from_json(json::parse(ckpt::tensor_to_string(need("meta.config_json"))));
  const auto& class_head_w = need("agent.class_head.weight");
  int num_classes = class_head_w.dims.at(0);
  Rng dummy(0);
  c.net = agent::AgentNet::init(c.config.shape(num_classes), dummy);
  for (auto& [name, tensor] : named_params(c.net)) {
    const numkit::Tensor& stored = need(name);
    if (stored.dims != tensor->dims)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    *tensor = stored;
    c.velocity[name] = need("opt.velocity." + name);
  }
  const auto& counters = need("meta.counters");
  c.pretrain_epochs_done = static_cast<int>(counters.data.at(0));
  c.joint_epochs_done = static_cast<int>(counters.data.at(1));
  c.update_count = static_cast<std::int64_t>(counters.data.at(2));
  c.rng_state = file.rng_state;
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  ckpt::save_tensor_file(pack_checkpoint(c), path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return unpack_checkpoint(ckpt::load_tensor_file(path));
}

// ---------------------------------------------------------------------------
// Dataset loading: scenes are small, so whole splits live in memory.

struct LoadedDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<BBox> gt_boxes;
  std::vector<std::string> class_names;  // indexed by class id
  std::vector<int> ids;
  bool has_gt_boxes = true;
  int num_classes = 0;
};

inline LoadedDataset load_dataset(const synthgen::DatasetManifest& manifest) {
  LoadedDataset d;
  d.num_classes = manifest.num_classes;
  d.class_names.resize(manifest.num_classes);
  for (const auto& rec : manifest.records) {
    d.images.push_back(read_ppm(manifest.resolve(rec).string()));
    d.labels.push_back(rec.class_id);
    d.gt_boxes.push_back(rec.gt_box);
    d.ids.push_back(rec.id);
    if (rec.class_id >= 0 && rec.class_id < manifest.num_classes)
      d.class_names[rec.class_id] = rec.class_name;
    if (!(rec.gt_box.x1 < rec.gt_box.x2 && rec.gt_box.y1 < rec.gt_box.y2))
      d.has_gt_boxes = false;
  }
  return d;
}

inline LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  return load_dataset(synthgen::load_manifest(manifest_path));
}

// ---------------------------------------------------------------------------
// Stage 1: classification pre-training on whole scene images.

struct PretrainEpochLog {
  int epoch = 0;
  double train_loss = 0;
  double eval_top1 = 0;
};

struct PretrainOutput {
  Checkpoint checkpoint;
  std::vector<PretrainEpochLog> log;
};

namespace detail {

// Whole-image encoder input, downscaled once and cached; rotations are exact
// and commute with the symmetric resample grid, so they apply to the cache.
inline std::vector<Image> downscaled_cache(const std::vector<Image>& images,
                                           int side) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images)
    out.push_back(locenv::crop_resize(img, BBox::full(), side));
  return out;
}

inline void fill_pixels(numkit::Tensor& batch, int row, const Image& crop) {
  float* dst = batch.ptr() + static_cast<std::size_t>(row) * crop.pixels.size();
  for (std::size_t i = 0; i < crop.pixels.size(); ++i)
    dst[i] = static_cast<float>(crop.pixels[i] / 255.0 - 0.5);
}

inline int classify_whole(const agent::AgentNet& net, const Image& downscaled) {
  auto features = agent::encode(net, downscaled);
  locenv::Observation obs(net.shape.obs_dim(), 0.0f);
  std::copy(features.begin(), features.end(), obs.begin());
  auto out = agent::forward_one(net, obs);
  return numkit::argmax(out.class_logits);
}

}  // namespace detail

inline PretrainOutput pretrain(const TrainConfig& config,
                               const synthgen::DatasetManifest& train_manifest,
                               const synthgen::DatasetManifest& eval_manifest,
                               std::uint64_t seed,
                               std::ostream* progress = nullptr) {
  if (train_manifest.num_classes != eval_manifest.num_classes)
    throw std::invalid_argument("pretrain: train/eval class count mismatch");
  LoadedDataset train = load_dataset(train_manifest);
  LoadedDataset eval = load_dataset(eval_manifest);

  Rng init_rng = Rng::stream(seed, 1);
  Rng order_rng = Rng::stream(seed, 2);
  Rng augment_rng = Rng::stream(seed, 3);

  agent::AgentNet net = agent::AgentNet::init(config.shape(train.num_classes), init_rng);

  std::vector<numkit::Tensor*> params;
  std::vector<const numkit::Tensor*> grads;
  auto bind = [&](numkit::LinearLayerT<float>& l) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
    grads.push_back(&l.grad_weight);
    grads.push_back(&l.grad_bias);
  };
  for (auto& l : net.encoder) bind(l);
  bind(net.trunk1);
  bind(net.trunk2);
  bind(net.class_head);  // q_head stays at its initialization
  auto opt = numkit::SgdMomentum::for_params(params, config.pretrain.lr,
                                             config.pretrain.momentum,
                                             config.pretrain.weight_decay);

  const int side = config.env.encoder_input_side;
  std::vector<Image> train_small = detail::downscaled_cache(train.images, side);
  std::vector<Image> eval_small = detail::downscaled_cache(eval.images, side);

  const int pixel_dim = 3 * side * side;
  const int hist_dim = config.shape(train.num_classes).history_dim();

  PretrainOutput out;
  std::vector<int> order(train.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    opt.learning_rate = epoch < config.pretrain.drop_epoch ? config.pretrain.lr
                                                           : config.pretrain.lr_after_drop;
    // Fisher-Yates with the order stream.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(order_rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += config.pretrain.batch) {
      int b = static_cast<int>(std::min<std::size_t>(config.pretrain.batch,
                                                     order.size() - at));
      numkit::Tensor pixels = numkit::make_zeros<float>({b, pixel_dim});
      numkit::Tensor history = numkit::make_zeros<float>({b, hist_dim});
      std::vector<int> labels(b);
      for (int i = 0; i < b; ++i) {
        int idx = order[at + i];
        int k = config.pretrain.rotation_augment
                    ? static_cast<int>(augment_rng.uniform_int(4))
                    : 0;
        Image crop = k == 0 ? train_small[idx] : rotate_90k(train_small[idx], k);
        detail::fill_pixels(pixels, i, crop);
        labels[i] = train.labels[idx];
      }
      auto cache = agent::forward_full(net, std::move(pixels), history);
      auto [loss, grad_cls] = numkit::cross_entropy_loss(cache.trunk.cls, labels);
      numkit::Tensor grad_q = numkit::make_zeros<float>({b, locenv::kNumActions});
      net.zero_grad();
      agent::backward_full(net, cache, grad_q, grad_cls);
      opt.step(params, grads);
      loss_sum += loss;
      ++batches;
    }

    int correct = 0;
    for (std::size_t i = 0; i < eval_small.size(); ++i)
      correct += detail::classify_whole(net, eval_small[i]) == eval.labels[i];
    PretrainEpochLog log;
    log.epoch = epoch;
    log.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    log.eval_top1 = eval_small.empty() ? 0.0
                                       : static_cast<double>(correct) / eval_small.size();
    out.log.push_back(log);
    if (progress)
      (*progress) << "pretrain epoch " << epoch << " loss " << log.train_loss
                  << " eval_top1 " << log.eval_top1 << "\n";
  }

  out.checkpoint.net = std::move(net);
  {
    // Velocities follow the bind order: encoder layers, trunk1, trunk2,
    // class_head; q_head was not trained and keeps no velocity.
    auto names = named_params(out.checkpoint.net);
    std::size_t vi = 0;
    for (auto& [name, tensor] : names) {
      (void)tensor;
      if (name.rfind("agent.q_head", 0) == 0) continue;
      if (vi < opt.velocity.size()) out.checkpoint.velocity[name] = opt.velocity[vi++];
    }
  }
  out.checkpoint.config = config;
  out.checkpoint.pretrain_epochs_done = config.pretrain.epochs;
  out.checkpoint.rng_state = order_rng.state();
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: joint DQN + classification training.

enum class RewardKind { confidence, iou };

inline RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "confidence") return RewardKind::confidence;
  if (s == "iou") return RewardKind::iou;
  throw std::invalid_argument("unknown reward kind '" + s + "'");
}

struct JointEpochLog {
  int epoch = 0;
  double epsilon = 0;
  double mean_steps = 0;
  double trigger_rate = 0;
  double mean_q_loss = 0;
  double mean_class_loss = 0;
};

struct JointOutput {
  Checkpoint checkpoint;
  std::vector<JointEpochLog> log;
};

namespace detail {

inline void check_replay_reward(float r, const agent::RewardParams& p) {
  bool ok = r == 1.0f || r == 0.0f || r == -1.0f ||
            r == static_cast<float>(p.eta) || r == static_cast<float>(-p.eta);
  if (!ok)
    throw std::logic_error("replay invariant: reward " + std::to_string(r) +
                           " outside {-1,0,+1,+/-eta}");
}

}  // namespace detail

inline JointOutput train_joint(const TrainConfig& config, const Checkpoint& pretrained,
                               const synthgen::DatasetManifest& train_manifest,
                               std::uint64_t seed, RewardKind reward_kind,
                               std::ostream* progress = nullptr) {
  LoadedDataset train = load_dataset(train_manifest);
  if (reward_kind == RewardKind::iou && !train.has_gt_boxes)
    throw std::invalid_argument(
        "train_joint: iou reward requires ground-truth boxes in the manifest");
  if (pretrained.net.shape.num_classes != train.num_classes)
    throw std::invalid_argument("train_joint: checkpoint class count mismatch");

  agent::AgentNet net = pretrained.net;
  agent::AgentNet target = agent::sync_target(net);
  agent::RewardParams reward_params;
  reward_params.gamma = config.joint.gamma;
  agent::EpsilonSchedule schedule{config.joint.epsilon.start, config.joint.epsilon.end,
                                  config.joint.epsilon.anneal_epochs};
  locenv::EnvParams envp = config.env.to_params();

  // Joint stage trains the trunk and both heads on stored observations; the
  // encoder stays as pre-trained (replay holds features, not crops).
  std::vector<numkit::Tensor*> params;
  for (auto* l : net.trunk_and_heads()) {
    params.push_back(&l->weight);
    params.push_back(&l->bias);
  }
  auto opt = numkit::SgdMomentum::for_params(params, config.joint.lr,
                                             config.joint.momentum,
                                             config.joint.weight_decay);

  agent::ReplayBuffer replay(config.joint.replay_capacity, Rng::stream(seed, 10).next_u64());
  Rng explore_rng = Rng::stream(seed, 11);
  Rng order_rng = Rng::stream(seed, 12);

  auto encoder_fn = [&](const Image& crop) { return agent::encode(net, crop); };

  std::int64_t update_count = pretrained.update_count;
  std::int64_t step_counter = 0;

  JointOutput out;
  std::vector<int> order(train.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.joint.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(order_rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    double steps_sum = 0, q_loss_sum = 0, class_loss_sum = 0;
    int episodes = 0, triggered = 0, updates = 0;

    for (std::size_t scene_pos = 0; scene_pos < order.size(); ++scene_pos) {
      int idx = order[scene_pos];
      const Image& image = train.images[idx];
      int label = train.labels[idx];
      const BBox& gt = train.gt_boxes[idx];
      double epoch_point =
          config.joint.sub_epoch_anneal
              ? epoch + static_cast<double>(scene_pos) / order.size()
              : static_cast<double>(epoch);
      double eps = schedule.value(epoch_point);

      for (int episode = 0; episode < config.joint.episodes_per_scene; ++episode) {
        locenv::EnvState state = locenv::EnvState::start(image, envp);
        locenv::Observation obs = locenv::build_observation(encoder_fn, state, envp);
        agent::HeadOutputs head = agent::forward_one(net, obs);
        double signal = reward_kind == RewardKind::confidence
                            ? agent::confidence(head.class_logits, label)
                            : locenv::iou(state.box, gt);

        bool done = false;
        while (!done) {
          Action action = agent::select_action(head.q_values, eps, explore_rng);
          agent::Transition t;
          t.obs = obs;
          t.action = action;
          t.label = label;
          if (action == Action::Trigger) {
            double r = reward_kind == RewardKind::confidence
                           ? agent::reward_terminal_confidence(signal, reward_params)
                           : agent::reward_terminal_iou(state.box, gt, reward_params);
            t.reward = static_cast<float>(r);
            t.next_obs = obs;
            t.terminal = true;
            done = true;
            ++triggered;
          } else {
            locenv::EnvState next_state = locenv::env_step(state, action, envp);
            locenv::Observation next_obs =
                locenv::build_observation(encoder_fn, next_state, envp);
            agent::HeadOutputs next_head = agent::forward_one(net, next_obs);
            double next_signal =
                reward_kind == RewardKind::confidence
                    ? agent::confidence(next_head.class_logits, label)
                    : locenv::iou(next_state.box, gt);
            if (next_state.done) {
              double r = reward_kind == RewardKind::confidence
                             ? agent::reward_terminal_confidence(next_signal, reward_params)
                             : agent::reward_terminal_iou(next_state.box, gt, reward_params);
              t.reward = static_cast<float>(r);
              t.terminal = true;
              done = true;
            } else {
              int r = reward_kind == RewardKind::confidence
                          ? agent::reward_step_confidence(signal, next_signal)
                          : agent::reward_step_iou(state.box, next_state.box, gt);
              t.reward = static_cast<float>(r);
              t.terminal = false;
            }
            t.next_obs = next_obs;
            state = next_state;
            obs = std::move(next_obs);
            head = std::move(next_head);
            signal = next_signal;
          }
          detail::check_replay_reward(t.reward, reward_params);
          replay.push(std::move(t));
          ++step_counter;

          if (replay.size() >= config.joint.batch &&
              step_counter % config.joint.update_every == 0) {
            auto batch = replay.sample(config.joint.batch);
            auto result = agent::q_update(net, target, batch, reward_params, opt);
            q_loss_sum += result.q_loss;
            class_loss_sum += result.class_loss;
            ++updates;
            ++update_count;
            if (config.joint.target_sync > 0 &&
                update_count % config.joint.target_sync == 0)
              target = agent::sync_target(net);
          }
        }
        steps_sum += state.step_count;
        ++episodes;
      }
    }

    JointEpochLog log;
    log.epoch = epoch;
    log.epsilon = schedule.value(static_cast<double>(epoch));
    log.mean_steps = episodes > 0 ? steps_sum / episodes : 0;
    log.trigger_rate = episodes > 0 ? static_cast<double>(triggered) / episodes : 0;
    log.mean_q_loss = updates > 0 ? q_loss_sum / updates : 0;
    log.mean_class_loss = updates > 0 ? class_loss_sum / updates : 0;
    out.log.push_back(log);
    if (progress)
      (*progress) << "joint epoch " << log.epoch << " eps " << log.epsilon
                  << " mean_steps " << log.mean_steps << " trigger_rate "
                  << log.trigger_rate << " q_loss " << log.mean_q_loss
                  << " class_loss " << log.mean_class_loss << "\n";
  }

  out.checkpoint.net = std::move(net);
  {
    auto names = named_params(out.checkpoint.net);
    std::size_t vi = 0;
    for (auto& [name, tensor] : names) {
      (void)tensor;
      if (name.rfind("agent.encoder", 0) == 0) continue;
      if (vi < opt.velocity.size()) out.checkpoint.velocity[name] = opt.velocity[vi++];
    }
  }
  out.checkpoint.config = config;
  out.checkpoint.pretrain_epochs_done = pretrained.pretrain_epochs_done;
  out.checkpoint.joint_epochs_done = config.joint.epochs;
  out.checkpoint.update_count = update_count;
  out.checkpoint.rng_state = explore_rng.state();
  return out;
}

// ---------------------------------------------------------------------------
// Inference: greedy rollout from the full-image box.

struct TraceEntry {
  int step = 0;
  BBox box;
  std::optional<Action> action;  // empty on a cap-ended final state
  float confidence = 0;          // softmax of the predicted class
  int predicted_class = 0;
};

struct InferenceResult {
  int predicted_class = 0;
  BBox final_box;
  std::vector<TraceEntry> trace;
  bool triggered = false;
  int steps = 0;
  std::vector<float> final_logits;  // ranking source for top-k metrics
};

inline InferenceResult infer(const agent::AgentNet& net, const Image& image,
                             const locenv::EnvParams& envp) {
  auto encoder_fn = [&](const Image& crop) { return agent::encode(net, crop); };
  locenv::EnvState state = locenv::EnvState::start(image, envp);
  InferenceResult result;
  while (true) {
    locenv::Observation obs = locenv::build_observation(encoder_fn, state, envp);
    agent::HeadOutputs head = agent::forward_one(net, obs);
    auto probs = numkit::softmax(head.class_logits);
    TraceEntry entry;
    entry.step = state.step_count;
    entry.box = state.box;
    entry.predicted_class = numkit::argmax(head.class_logits);
    entry.confidence = probs[entry.predicted_class];

    if (state.done) {  // step cap reached: keep the last prediction
      result.trace.push_back(entry);
      result.predicted_class = entry.predicted_class;
      result.final_box = state.box;
      result.triggered = false;
      result.steps = state.step_count;
      result.final_logits = head.class_logits;
      return result;
    }

    Rng greedy_rng(0);  // never consulted at epsilon 0
    Action action = agent::select_action(head.q_values, 0.0, greedy_rng);
    entry.action = action;
    result.trace.push_back(entry);
    if (action == Action::Trigger) {
      result.predicted_class = entry.predicted_class;
      result.final_box = state.box;
      result.triggered = true;
      result.steps = state.step_count;
      result.final_logits = head.class_logits;
      return result;
    }
    state = locenv::env_step(state, action, envp);
  }
}

}  // namespace rllogo::pipeline
