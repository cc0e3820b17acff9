#include "rllogo/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace rllogo;
using namespace rllogo::pipeline;
namespace fs = std::filesystem;

namespace {

// Small corpus + small net so pipeline tests stay fast.
TrainConfig tiny_config() {
  TrainConfig c;
  c.pretrain.epochs = 2;
  c.pretrain.drop_epoch = 1;
  c.pretrain.batch = 8;
  c.joint.epochs = 2;
  c.joint.replay_capacity = 512;
  c.joint.batch = 8;
  c.joint.update_every = 4;
  c.joint.target_sync = 50;
  c.env.encoder_input_side = 16;
  c.model.encoder_hidden = 48;
  c.model.feature_dim = 32;
  c.model.trunk_width = 64;
  c.seeds = {1};
  return c;
}

struct Corpus {
  fs::path dir;
  synthgen::DatasetManifest train;
  synthgen::DatasetManifest eval;
};

const Corpus& tiny_corpus() {
  static Corpus c = [] {
    Corpus corpus;
    corpus.dir = fs::path(testing::TempDir()) / "pipeline_corpus";
    fs::remove_all(corpus.dir);
    synthgen::DatasetOptions opt;
    opt.num_classes = 3;
    opt.n_train = 24;
    opt.n_eval = 9;
    opt.seed = 7;
    auto [train, eval] = synthgen::generate_dataset(opt, corpus.dir);
    corpus.train = std::move(train);
    corpus.eval = std::move(eval);
    return corpus;
  }();
  return c;
}

bool same_params(agent::AgentNet& a, agent::AgentNet& b) {
  auto pa = named_params(a), pb = named_params(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].second->data != pb[i].second->data) return false;
  return true;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

TEST(Config, JsonRoundTripAndDefaults) {
  TrainConfig def;
  json j = config_to_json(def);
  TrainConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  EXPECT_EQ(def.joint.epochs, 15);
  EXPECT_DOUBLE_EQ(def.joint.epsilon.start, 1.0);
  EXPECT_DOUBLE_EQ(def.joint.epsilon.end, 0.1);
  EXPECT_DOUBLE_EQ(def.joint.gamma, 0.9);
  EXPECT_EQ(def.env.max_steps, 40);
  EXPECT_DOUBLE_EQ(def.env.alpha, 0.2);
  EXPECT_DOUBLE_EQ(def.env.min_box, 0.05);
  EXPECT_EQ(def.model.trunk_width, 1024);
  EXPECT_EQ(def.seeds.size(), 4u);
}

TEST(Config, UnknownKeysRejected) {
  json j = config_to_json(TrainConfig{});
  j["bogus"] = 1;
  EXPECT_THROW(config_from_json(j), std::invalid_argument);
  json j2 = config_to_json(TrainConfig{});
  j2["joint"]["bogus"] = 1;
  EXPECT_THROW(config_from_json(j2), std::invalid_argument);
  json j3 = config_to_json(TrainConfig{});
  j3["joint"]["epsilon"]["middle"] = 0.5;
  EXPECT_THROW(config_from_json(j3), std::invalid_argument);
}

TEST(Checkpoint, RoundTripOnFreshInit) {
  TrainConfig config = tiny_config();
  Rng rng(3);
  Checkpoint c;
  c.net = agent::AgentNet::init(config.shape(3), rng);
  c.config = config;
  c.pretrain_epochs_done = 1;
  c.joint_epochs_done = 2;
  c.update_count = 123;
  c.rng_state = 0xDEADBEEFCAFEull;

  fs::path path = fs::path(testing::TempDir()) / "ckpt_roundtrip.bin";
  save_checkpoint(c, path.string());
  Checkpoint back = load_checkpoint(path.string());
  EXPECT_TRUE(same_params(c.net, back.net));
  EXPECT_EQ(back.pretrain_epochs_done, 1);
  EXPECT_EQ(back.joint_epochs_done, 2);
  EXPECT_EQ(back.update_count, 123);
  EXPECT_EQ(back.rng_state, 0xDEADBEEFCAFEull);
  EXPECT_EQ(config_to_json(back.config).dump(), config_to_json(config).dump());

  // save(load(x)) is byte-identical to x.
  fs::path path2 = fs::path(testing::TempDir()) / "ckpt_roundtrip2.bin";
  save_checkpoint(back, path2.string());
  EXPECT_EQ(file_bytes(path), file_bytes(path2));
}

TEST(Checkpoint, DistinctErrorCodes) {
  TrainConfig config = tiny_config();
  Rng rng(5);
  Checkpoint c;
  c.net = agent::AgentNet::init(config.shape(2), rng);
  c.config = config;
  fs::path path = fs::path(testing::TempDir()) / "ckpt_err.bin";
  save_checkpoint(c, path.string());
  std::string good = file_bytes(path);

  auto write_and_load = [&](std::string bytes) {
    fs::path p = fs::path(testing::TempDir()) / "ckpt_bad.bin";
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    return load_checkpoint(p.string());
  };

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  try {
    write_and_load(bad_magic);
    FAIL() << "bad magic accepted";
  } catch (const ckpt::CheckpointIoError& e) {
    EXPECT_EQ(e.code, ckpt::CheckpointError::bad_magic);
  }

  std::string bad_version = good;
  bad_version[4] = 9;
  try {
    write_and_load(bad_version);
    FAIL() << "bad version accepted";
  } catch (const ckpt::CheckpointIoError& e) {
    EXPECT_EQ(e.code, ckpt::CheckpointError::bad_version);
  }

  std::string truncated = good.substr(0, good.size() / 2);
  try {
    write_and_load(truncated);
    FAIL() << "truncated file accepted";
  } catch (const ckpt::CheckpointIoError& e) {
    EXPECT_EQ(e.code, ckpt::CheckpointError::truncated);
  }

  std::string padded = good + "xx";
  try {
    write_and_load(padded);
    FAIL() << "padded file accepted";
  } catch (const ckpt::CheckpointIoError& e) {
    EXPECT_EQ(e.code, ckpt::CheckpointError::truncated);
  }
}

TEST(Pretrain, ZeroEpochsEqualsInitialization) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  config.pretrain.epochs = 0;
  config.pretrain.drop_epoch = 0;
  auto out = pretrain(config, corpus.train, corpus.eval, 11);
  Rng init_rng = Rng::stream(11, 1);
  agent::AgentNet fresh = agent::AgentNet::init(config.shape(3), init_rng);
  EXPECT_TRUE(same_params(out.checkpoint.net, fresh));
}

TEST(Pretrain, SameSeedByteIdenticalCheckpoints) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  auto a = pretrain(config, corpus.train, corpus.eval, 21);
  auto b = pretrain(config, corpus.train, corpus.eval, 21);
  fs::path pa = fs::path(testing::TempDir()) / "pre_a.bin";
  fs::path pb = fs::path(testing::TempDir()) / "pre_b.bin";
  save_checkpoint(a.checkpoint, pa.string());
  save_checkpoint(b.checkpoint, pb.string());
  EXPECT_EQ(file_bytes(pa), file_bytes(pb));
  EXPECT_EQ(a.log.size(), 2u);  // per-epoch eval Top-1 reported
}

TEST(Pretrain, LossDecreasesOnTinyCorpus) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  config.pretrain.epochs = 30;
  config.pretrain.drop_epoch = 25;
  config.pretrain.lr = 0.01;
  config.pretrain.rotation_augment = false;
  auto out = pretrain(config, corpus.train, corpus.eval, 31);
  EXPECT_LT(out.log.back().train_loss, 0.5 * out.log.front().train_loss);
}

TEST(TrainJoint, ZeroLearningRateKeepsPretrainedParams) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  auto pre = pretrain(config, corpus.train, corpus.eval, 41);
  config.joint.lr = 0.0;
  config.joint.epochs = 1;
  auto joint = train_joint(config, pre.checkpoint, corpus.train, 41,
                           RewardKind::confidence);
  EXPECT_TRUE(same_params(joint.checkpoint.net, pre.checkpoint.net));
}

TEST(TrainJoint, EpsilonFollowsEpochSchedule) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  config.joint.epochs = 7;
  auto pre = pretrain(config, corpus.train, corpus.eval, 51);
  auto joint = train_joint(config, pre.checkpoint, corpus.train, 51,
                           RewardKind::confidence);
  ASSERT_EQ(joint.log.size(), 7u);
  EXPECT_DOUBLE_EQ(joint.log[0].epsilon, 1.0);
  EXPECT_DOUBLE_EQ(joint.log[1].epsilon, 0.82);
  EXPECT_DOUBLE_EQ(joint.log[5].epsilon, 0.1);
  EXPECT_DOUBLE_EQ(joint.log[6].epsilon, 0.1);
}

TEST(TrainJoint, OneToOneUpdateCadence) {
  // update_every=1 is the 1:1 update-per-step contract.
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  config.joint.epochs = 1;
  config.joint.update_every = 1;
  config.joint.batch = 4;
  auto pre = pretrain(config, corpus.train, corpus.eval, 61);
  auto joint = train_joint(config, pre.checkpoint, corpus.train, 61,
                           RewardKind::confidence);
  EXPECT_GT(joint.checkpoint.update_count, 0);
}

TEST(TrainJoint, DeterministicAcrossRuns) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  auto pre = pretrain(config, corpus.train, corpus.eval, 71);
  auto a = train_joint(config, pre.checkpoint, corpus.train, 71, RewardKind::iou);
  auto b = train_joint(config, pre.checkpoint, corpus.train, 71, RewardKind::iou);
  fs::path pa = fs::path(testing::TempDir()) / "joint_a.bin";
  fs::path pb = fs::path(testing::TempDir()) / "joint_b.bin";
  save_checkpoint(a.checkpoint, pa.string());
  save_checkpoint(b.checkpoint, pb.string());
  EXPECT_EQ(file_bytes(pa), file_bytes(pb));
}

TEST(TrainJoint, IouRewardNeedsGtBoxes) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  auto pre = pretrain(config, corpus.train, corpus.eval, 81);

  // Manifest whose gt boxes are degenerate (no localization annotation).
  fs::path dir = fs::path(testing::TempDir()) / "nogt";
  fs::create_directories(dir);
  synthgen::DatasetManifest stripped = corpus.train;
  for (auto& rec : stripped.records) rec.gt_box = {0, 0, 0, 0};
  // Copy images over so the manifest still resolves.
  for (const auto& rec : corpus.train.records)
    fs::copy_file(corpus.train.resolve(rec), dir / rec.image_path,
                  fs::copy_options::skip_existing);
  stripped.base_dir = dir;
  synthgen::write_manifest(stripped, dir / "train.jsonl");
  auto loaded = synthgen::load_manifest(dir / "train.jsonl");
  EXPECT_THROW(
      train_joint(config, pre.checkpoint, loaded, 81, RewardKind::iou),
      std::invalid_argument);
}

TEST(Infer, TriggerHappyAgentStopsAtZeroSteps) {
  TrainConfig config = tiny_config();
  Rng rng(91);
  agent::AgentNet net = agent::AgentNet::init(config.shape(3), rng);
  std::fill(net.q_head.weight.data.begin(), net.q_head.weight.data.end(), 0.0f);
  std::fill(net.q_head.bias.data.begin(), net.q_head.bias.data.end(), 0.0f);
  net.q_head.bias.data[static_cast<int>(locenv::Action::Trigger)] = 10.0f;

  const Corpus& corpus = tiny_corpus();
  Image img = read_ppm(corpus.train.resolve(corpus.train.records[0]).string());
  auto result = infer(net, img, config.env.to_params());
  EXPECT_EQ(result.steps, 0);
  EXPECT_TRUE(result.triggered);
  EXPECT_EQ(result.trace.size(), 1u);
  EXPECT_EQ(result.final_box, locenv::BBox::full());
  ASSERT_TRUE(result.trace[0].action.has_value());
  EXPECT_EQ(*result.trace[0].action, locenv::Action::Trigger);
}

TEST(Infer, NeverTriggeringAgentHitsCap) {
  TrainConfig config = tiny_config();
  Rng rng(92);
  agent::AgentNet net = agent::AgentNet::init(config.shape(3), rng);
  std::fill(net.q_head.weight.data.begin(), net.q_head.weight.data.end(), 0.0f);
  std::fill(net.q_head.bias.data.begin(), net.q_head.bias.data.end(), 0.0f);
  net.q_head.bias.data[static_cast<int>(locenv::Action::ScaleDown)] = 10.0f;

  const Corpus& corpus = tiny_corpus();
  Image img = read_ppm(corpus.train.resolve(corpus.train.records[1]).string());
  auto result = infer(net, img, config.env.to_params());
  EXPECT_EQ(result.steps, 40);
  EXPECT_FALSE(result.triggered);
  EXPECT_EQ(result.trace.size(), 41u);  // steps + 1, initial state included
  EXPECT_FALSE(result.trace.back().action.has_value());
  for (const auto& e : result.trace) EXPECT_TRUE(e.box.valid());
}

TEST(Infer, DeterministicTraces) {
  const Corpus& corpus = tiny_corpus();
  TrainConfig config = tiny_config();
  auto pre = pretrain(config, corpus.train, corpus.eval, 93);
  Image img = read_ppm(corpus.eval.resolve(corpus.eval.records[0]).string());
  auto a = infer(pre.checkpoint.net, img, config.env.to_params());
  auto b = infer(pre.checkpoint.net, img, config.env.to_params());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  EXPECT_EQ(a.predicted_class, b.predicted_class);
  EXPECT_EQ(a.steps, b.steps);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].box, b.trace[i].box);
    EXPECT_EQ(a.trace[i].confidence, b.trace[i].confidence);
  }
}

}  // namespace
