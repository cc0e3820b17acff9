#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rllogo/parallel.hpp"
#include "rllogo/pipeline.hpp"

// Metrics (Top-1/Top-5, localization recall, iteration statistics),
// trajectory visualization, the reward-function ablation harness.
namespace rllogo::eval {

using locenv::BBox;
using nlohmann::json;
using pipeline::InferenceResult;

// Fraction of scenes whose label appears in the first k entries of the
// ranked class list.
inline double top_k_accuracy(const std::vector<std::vector<int>>& ranked,
                             const std::vector<int>& labels, int k) {
  if (ranked.empty() || ranked.size() != labels.size())
    throw std::invalid_argument("top_k_accuracy: empty or mismatched input");
  if (k < 1) throw std::invalid_argument("top_k_accuracy: k must be >= 1");
  int hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (static_cast<int>(ranked[i].size()) < k)
      throw std::invalid_argument("top_k_accuracy: ranked list shorter than k");
    for (int j = 0; j < k; ++j)
      if (ranked[i][j] == labels[i]) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / ranked.size();
}

// Classes sorted by descending logit, ties broken by lower class id.
inline std::vector<int> rank_classes(const std::vector<float>& logits) {
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  return order;
}

// Fraction of scenes with IoU(final box, ground truth) >= threshold; class
// predictions are ignored.
inline double recall_at_iou(const std::vector<InferenceResult>& results,
                            const std::vector<BBox>& gt_boxes,
                            double threshold = 0.5) {
  if (results.empty() || results.size() != gt_boxes.size())
    throw std::invalid_argument("recall_at_iou: empty or mismatched input");
  int hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i)
    hits += locenv::iou(results[i].final_box, gt_boxes[i]) >= threshold;
  return static_cast<double>(hits) / results.size();
}

// Median (order statistic; mean of the two middle values for even n) and
// mean of the step counts. A step-0 trigger counts as zero iterations.
inline std::pair<double, double> iteration_stats(const std::vector<int>& steps) {
  if (steps.empty()) throw std::invalid_argument("iteration_stats: empty input");
  std::vector<int> sorted = steps;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  double median = n % 2 == 1
                      ? sorted[n / 2]
                      : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  return {median, mean};
}

struct PerClassStats {
  int class_id = 0;
  std::string class_name;
  int n = 0;
  double top1 = 0;
};

struct EvalReport {
  double top1 = 0;
  double top5 = 0;
  double recall_iou50 = 0;
  double iter_median = 0;
  double iter_mean = 0;
  int n = 0;
  std::vector<PerClassStats> per_class;

  json to_json() const {
    json j;
    j["top1"] = top1;
    j["top5"] = top5;
    j["recall_iou50"] = recall_iou50;
    j["iter_median"] = iter_median;
    j["iter_mean"] = iter_mean;
    j["n"] = n;
    j["per_class"] = json::array();
    for (const auto& c : per_class)
      j["per_class"].push_back({{"class_id", c.class_id},
                                {"class_name", c.class_name},
                                {"n", c.n},
                                {"top1", c.top1}});
    return j;
  }
};

// Greedy-policy evaluation over a manifest; scenes run in parallel against
// the read-only network, results keyed by scene index so output is
// order-stable.
inline std::vector<InferenceResult> run_inference(
    const agent::AgentNet& net, const pipeline::LoadedDataset& data,
    const locenv::EnvParams& envp) {
  std::vector<InferenceResult> results(data.images.size());
  int n = static_cast<int>(data.images.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(effective_threads())
  for (int i = 0; i < n; ++i)
    results[i] = pipeline::infer(net, data.images[i], envp);
  return results;
}

inline EvalReport report_from_results(const std::vector<InferenceResult>& results,
                                      const pipeline::LoadedDataset& data,
                                      double iou_threshold = 0.5) {
  EvalReport rep;
  rep.n = static_cast<int>(results.size());
  std::vector<std::vector<int>> ranked;
  std::vector<int> steps;
  ranked.reserve(results.size());
  for (const auto& r : results) {
    ranked.push_back(rank_classes(r.final_logits));
    steps.push_back(r.steps);
  }
  rep.top1 = top_k_accuracy(ranked, data.labels, 1);
  rep.top5 = top_k_accuracy(ranked, data.labels,
                            std::min(5, data.num_classes));
  if (data.has_gt_boxes)
    rep.recall_iou50 = recall_at_iou(results, data.gt_boxes, iou_threshold);
  auto [median, mean] = iteration_stats(steps);
  rep.iter_median = median;
  rep.iter_mean = mean;

  std::vector<PerClassStats> per(data.num_classes);
  for (int c = 0; c < data.num_classes; ++c) {
    per[c].class_id = c;
    per[c].class_name = c < static_cast<int>(data.class_names.size())
                            ? data.class_names[c]
                            : synthgen::class_name_for(c);
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& p = per[data.labels[i]];
    p.n += 1;
    p.top1 += results[i].predicted_class == data.labels[i] ? 1 : 0;
  }
  for (auto& p : per) p.top1 = p.n > 0 ? p.top1 / p.n : 0.0;
  rep.per_class = std::move(per);
  return rep;
}

inline EvalReport evaluate(const agent::AgentNet& net,
                           const pipeline::LoadedDataset& data,
                           const locenv::EnvParams& envp,
                           double iou_threshold = 0.5) {
  return report_from_results(run_inference(net, data, envp), data, iou_threshold);
}

// Random-policy baseline: uniform transform actions with the trigger forced
// at the step cap.
inline std::vector<InferenceResult> run_random_policy(
    const agent::AgentNet& net, const pipeline::LoadedDataset& data,
    const locenv::EnvParams& envp, std::uint64_t seed) {
  std::vector<InferenceResult> results(data.images.size());
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    Rng rng = Rng::stream(seed, i);
    locenv::EnvState state = locenv::EnvState::start(data.images[i], envp);
    while (!state.done) {
      auto a = static_cast<locenv::Action>(rng.uniform_int(8));  // transforms only
      state = locenv::env_step(state, a, envp);
    }
    auto encoder_fn = [&](const Image& crop) { return agent::encode(net, crop); };
    locenv::Observation obs = locenv::build_observation(encoder_fn, state, envp);
    auto head = agent::forward_one(net, obs);
    InferenceResult r;
    r.predicted_class = numkit::argmax(head.class_logits);
    r.final_box = state.box;
    r.triggered = false;
    r.steps = state.step_count;
    r.final_logits = head.class_logits;
    results[i] = std::move(r);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Trajectory rendering: intermediate boxes in a light tint, the final box in
// pure red, one-pixel strokes clipped to the canvas.

namespace detail {

inline void draw_box(Image& img, const BBox& box, std::uint8_t r, std::uint8_t g,
                     std::uint8_t b) {
  int x0 = std::clamp(static_cast<int>(std::lround(box.x1 * img.width)), 0, img.width - 1);
  int x1 = std::clamp(static_cast<int>(std::lround(box.x2 * img.width)) - 1, 0, img.width - 1);
  int y0 = std::clamp(static_cast<int>(std::lround(box.y1 * img.height)), 0, img.height - 1);
  int y1 = std::clamp(static_cast<int>(std::lround(box.y2 * img.height)) - 1, 0, img.height - 1);
  for (int x = x0; x <= x1; ++x) {
    img.set(x, y0, r, g, b);
    img.set(x, y1, r, g, b);
  }
  for (int y = y0; y <= y1; ++y) {
    img.set(x0, y, r, g, b);
    img.set(x1, y, r, g, b);
  }
}

}  // namespace detail

inline Image render_trace(const Image& scene,
                          const std::vector<pipeline::TraceEntry>& trace) {
  if (trace.empty()) throw std::invalid_argument("render_trace: empty trace");
  Image out = scene;
  for (std::size_t i = 0; i + 1 < trace.size(); ++i)
    detail::draw_box(out, trace[i].box, 255, 230, 150);
  detail::draw_box(out, trace.back().box, 255, 0, 0);
  return out;
}

inline void render_trace(const Image& scene,
                         const std::vector<pipeline::TraceEntry>& trace,
                         const std::string& out_path) {
  write_ppm(render_trace(scene, trace), out_path);
}

// ---------------------------------------------------------------------------
// Reward-function ablation: one agent per reward kind per seed on identical
// data, plus the random-policy baseline.

// FNV-1a over the manifest file bytes; recorded in reports so ablation arms
// can prove they share the exact eval set.
inline std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("file_hash: cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (f.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

struct AblationArm {
  std::string name;
  EvalReport mean;
  std::vector<std::pair<std::uint64_t, EvalReport>> per_seed;
};

struct AblationReport {
  AblationArm confidence;
  AblationArm iou;
  AblationArm random;
  std::uint64_t eval_manifest_hash = 0;

  json to_json() const {
    auto arm = [](const AblationArm& a) {
      json j;
      j["mean"] = a.mean.to_json();
      j["per_seed"] = json::array();
      for (const auto& [seed, rep] : a.per_seed) {
        json r = rep.to_json();
        r["seed"] = seed;
        j["per_seed"].push_back(r);
      }
      return j;
    };
    json j;
    j["confidence"] = arm(confidence);
    j["iou"] = arm(iou);
    j["random"] = arm(random);
    j["eval_manifest_hash"] = eval_manifest_hash;
    return j;
  }
};

inline EvalReport mean_report(const std::vector<EvalReport>& reports) {
  EvalReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.top1 += r.top1;
    m.top5 += r.top5;
    m.recall_iou50 += r.recall_iou50;
    m.iter_median += r.iter_median;
    m.iter_mean += r.iter_mean;
    m.n = r.n;
  }
  double k = static_cast<double>(reports.size());
  m.top1 /= k;
  m.top5 /= k;
  m.recall_iou50 /= k;
  m.iter_median /= k;
  m.iter_mean /= k;
  return m;
}

inline AblationReport ablate_rewards(const pipeline::TrainConfig& config,
                                     const std::filesystem::path& train_manifest_path,
                                     const std::filesystem::path& eval_manifest_path,
                                     const std::vector<std::uint64_t>& seeds,
                                     std::ostream* progress = nullptr) {
  auto train_manifest = synthgen::load_manifest(train_manifest_path);
  auto eval_manifest = synthgen::load_manifest(eval_manifest_path);
  pipeline::LoadedDataset eval_data = pipeline::load_dataset(eval_manifest);
  if (!eval_data.has_gt_boxes)
    throw std::invalid_argument("ablate_rewards: eval manifest lacks gt boxes");
  locenv::EnvParams envp = config.env.to_params();

  AblationReport report;
  report.eval_manifest_hash = file_hash(eval_manifest_path);
  report.confidence.name = "confidence";
  report.iou.name = "iou";
  report.random.name = "random";
  std::vector<EvalReport> conf_reports, iou_reports, random_reports;

  for (std::uint64_t seed : seeds) {
    if (progress) (*progress) << "ablation seed " << seed << ": pretrain\n";
    auto pre = pipeline::pretrain(config, train_manifest, eval_manifest, seed, progress);
    for (auto kind : {pipeline::RewardKind::confidence, pipeline::RewardKind::iou}) {
      if (progress)
        (*progress) << "ablation seed " << seed << ": joint ("
                    << (kind == pipeline::RewardKind::confidence ? "confidence" : "iou")
                    << ")\n";
      auto joint = pipeline::train_joint(config, pre.checkpoint, train_manifest,
                                         seed, kind, progress);
      EvalReport rep = evaluate(joint.checkpoint.net, eval_data, envp);
      if (kind == pipeline::RewardKind::confidence) {
        conf_reports.push_back(rep);
        report.confidence.per_seed.emplace_back(seed, rep);
      } else {
        iou_reports.push_back(rep);
        report.iou.per_seed.emplace_back(seed, rep);
      }
    }
    auto random_results = run_random_policy(pre.checkpoint.net, eval_data, envp, seed);
    EvalReport rep = report_from_results(random_results, eval_data);
    random_reports.push_back(rep);
    report.random.per_seed.emplace_back(seed, rep);
  }
  report.confidence.mean = mean_report(conf_reports);
  report.iou.mean = mean_report(iou_reports);
  report.random.mean = mean_report(random_reports);
  return report;
}

}  // namespace rllogo::eval

// run_4shot composes pretrain + joint + evaluation, so it lives here where
// the metrics are available; its home namespace stays pipeline.
namespace rllogo::pipeline {

inline nlohmann::json run_4shot(const TrainConfig& config,
                                const std::filesystem::path& train_manifest_path,
                                const std::filesystem::path& eval_manifest_path,
                                RewardKind reward_kind,
                                std::ostream* progress = nullptr) {
  if (config.seeds.empty())
    throw std::invalid_argument("run_4shot: config has no seeds");
  auto train_manifest = synthgen::load_manifest(train_manifest_path);
  auto eval_manifest = synthgen::load_manifest(eval_manifest_path);
  LoadedDataset eval_data = load_dataset(eval_manifest);
  locenv::EnvParams envp = config.env.to_params();

  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<eval::EvalReport> reports;
  for (std::uint64_t seed : config.seeds) {
    if (progress) (*progress) << "4shot seed " << seed << "\n";
    auto pre = pretrain(config, train_manifest, eval_manifest, seed, progress);
    auto joint = train_joint(config, pre.checkpoint, train_manifest, seed,
                             reward_kind, progress);
    eval::EvalReport rep = eval::evaluate(joint.checkpoint.net, eval_data, envp);
    nlohmann::json row = rep.to_json();
    row["seed"] = seed;
    per_seed.push_back(row);
    reports.push_back(rep);
  }
  eval::EvalReport mean = eval::mean_report(reports);
  nlohmann::json out;
  out["top1"] = mean.top1;
  out["top5"] = mean.top5;
  out["recall_iou50"] = mean.recall_iou50;
  out["iter_median"] = mean.iter_median;
  out["iter_mean"] = mean.iter_mean;
  out["per_seed"] = per_seed;
  return out;
}

}  // namespace rllogo::pipeline
