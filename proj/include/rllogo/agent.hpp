#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rllogo/locenv.hpp"
#include "rllogo/numkit.hpp"
#include "rllogo/rng.hpp"

// The joint DQN: a shared vision encoder, two 1024-unit trunk layers, a 9-way
// Q head and a C-way class head, plus both reward functions, the replay
// buffer, the epsilon schedule and the one-step Q-learning update.
namespace rllogo::agent {

using locenv::Action;
using locenv::BBox;
using locenv::Observation;
using numkit::LinearLayerT;
using numkit::TensorT;

struct ModelShape {
  int encoder_input_side = 32;
  int encoder_hidden = 512;   // 0 disables the hidden encoder layer
  int feature_dim = 256;
  int trunk_width = 1024;
  int history_len = locenv::kHistoryLen;
  int num_classes = 10;

  int pixel_dim() const { return 3 * encoder_input_side * encoder_input_side; }
  int history_dim() const { return history_len * locenv::kNumActions; }
  int obs_dim() const { return feature_dim + history_dim(); }
};

// Confidence-guided reward constants; eta/tau follow the paper, gamma is the
// cited prior work's discount.
struct RewardParams {
  double eta = 2.0;
  double tau = 0.75;
  double gamma = 0.9;
};

template <typename T>
struct AgentNetT {
  ModelShape shape;
  std::vector<LinearLayerT<T>> encoder;  // pixels -> ... -> feature_dim, ReLU each
  LinearLayerT<T> trunk1;                // obs_dim -> trunk_width
  LinearLayerT<T> trunk2;                // trunk_width -> trunk_width
  LinearLayerT<T> q_head;                // trunk_width -> 9
  LinearLayerT<T> class_head;            // trunk_width -> num_classes

  static AgentNetT init(const ModelShape& shape, Rng& rng) {
    AgentNetT net;
    net.shape = shape;
    int in = shape.pixel_dim();
    if (shape.encoder_hidden > 0) {
      net.encoder.push_back(LinearLayerT<T>::init(in, shape.encoder_hidden, rng));
      in = shape.encoder_hidden;
    }
    net.encoder.push_back(LinearLayerT<T>::init(in, shape.feature_dim, rng));
    net.trunk1 = LinearLayerT<T>::init(shape.obs_dim(), shape.trunk_width, rng);
    net.trunk2 = LinearLayerT<T>::init(shape.trunk_width, shape.trunk_width, rng);
    net.q_head = LinearLayerT<T>::init(shape.trunk_width, locenv::kNumActions, rng);
    net.class_head = LinearLayerT<T>::init(shape.trunk_width, shape.num_classes, rng);
    return net;
  }

  template <typename U>
  AgentNetT<U> cast() const {
    AgentNetT<U> net;
    net.shape = shape;
    for (const auto& l : encoder) net.encoder.push_back(l.template cast<U>());
    net.trunk1 = trunk1.template cast<U>();
    net.trunk2 = trunk2.template cast<U>();
    net.q_head = q_head.template cast<U>();
    net.class_head = class_head.template cast<U>();
    return net;
  }

  std::vector<LinearLayerT<T>*> all_layers() {
    std::vector<LinearLayerT<T>*> out;
    for (auto& l : encoder) out.push_back(&l);
    out.push_back(&trunk1);
    out.push_back(&trunk2);
    out.push_back(&q_head);
    out.push_back(&class_head);
    return out;
  }

  std::vector<LinearLayerT<T>*> trunk_and_heads() {
    return {&trunk1, &trunk2, &q_head, &class_head};
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    auto add = [&](const LinearLayerT<T>& l) {
      n += l.weight.numel() + l.bias.numel();
    };
    for (const auto& l : encoder) add(l);
    add(trunk1);
    add(trunk2);
    add(q_head);
    add(class_head);
    return n;
  }

  void zero_grad() {
    for (auto* l : all_layers()) l->zero_grad();
  }
};

using AgentNet = AgentNetT<float>;

// Crop pixels normalized to [-0.5, 0.5].
template <typename T>
TensorT<T> pixels_to_input(const Image& crop) {
  TensorT<T> x = numkit::make_zeros<T>({1, static_cast<int>(crop.pixels.size())});
  for (std::size_t i = 0; i < crop.pixels.size(); ++i)
    x.data[i] = static_cast<T>(crop.pixels[i] / 255.0 - 0.5);
  return x;
}

// Feature extraction for a single crop (rollout path; no caches kept).
template <typename T>
std::vector<float> encode(const AgentNetT<T>& net, const Image& crop) {
  if (static_cast<int>(crop.pixels.size()) != net.shape.pixel_dim())
    throw std::invalid_argument("encode: crop size does not match encoder input");
  TensorT<T> x = pixels_to_input<T>(crop);
  for (const auto& l : net.encoder) x = numkit::relu(numkit::linear_forward(l, x));
  std::vector<float> out(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i)
    out[i] = static_cast<float>(x.data[i]);
  return out;
}

// Activations of the trunk and both heads for one observation batch.
template <typename T>
struct TrunkCache {
  TensorT<T> obs;      // [batch, obs_dim]
  TensorT<T> h1_pre, h1, h2_pre, h2;
  TensorT<T> q;        // [batch, 9]
  TensorT<T> cls;      // [batch, C]
};

template <typename T>
TrunkCache<T> forward_trunk(const AgentNetT<T>& net, TensorT<T> obs) {
  if (obs.dims.size() != 2 || obs.dims[1] != net.shape.obs_dim())
    throw std::invalid_argument("forward_trunk: observation dim mismatch");
  TrunkCache<T> c;
  c.obs = std::move(obs);
  c.h1_pre = numkit::linear_forward(net.trunk1, c.obs);
  c.h1 = numkit::relu(c.h1_pre);
  c.h2_pre = numkit::linear_forward(net.trunk2, c.h1);
  c.h2 = numkit::relu(c.h2_pre);
  c.q = numkit::linear_forward(net.q_head, c.h2);
  c.cls = numkit::linear_forward(net.class_head, c.h2);
  return c;
}

// Backpropagates both heads (equal loss weights: gradients just add) through
// the trunk, accumulating parameter gradients. Returns d(loss)/d(obs).
template <typename T>
TensorT<T> backward_trunk(AgentNetT<T>& net, const TrunkCache<T>& c,
                          const TensorT<T>& grad_q, const TensorT<T>& grad_cls) {
  TensorT<T> gh2 = numkit::linear_backward(net.q_head, c.h2, grad_q);
  TensorT<T> gh2_cls = numkit::linear_backward(net.class_head, c.h2, grad_cls);
  for (std::size_t i = 0; i < gh2.data.size(); ++i) gh2.data[i] += gh2_cls.data[i];
  TensorT<T> gh2_pre = numkit::relu_backward(c.h2_pre, gh2);
  TensorT<T> gh1 = numkit::linear_backward(net.trunk2, c.h1, gh2_pre);
  TensorT<T> gh1_pre = numkit::relu_backward(c.h1_pre, gh1);
  return numkit::linear_backward(net.trunk1, c.obs, gh1_pre);
}

// Full-path activations (pixels through encoder and trunk); used by
// pre-training and by the gradient-check oracle.
template <typename T>
struct FullCache {
  TensorT<T> pixels;                     // [batch, pixel_dim]
  std::vector<TensorT<T>> enc_pre;       // per encoder layer
  std::vector<TensorT<T>> enc_act;
  TrunkCache<T> trunk;
};

template <typename T>
FullCache<T> forward_full(const AgentNetT<T>& net, TensorT<T> pixels,
                          const TensorT<T>& history) {
  int batch = pixels.dims[0];
  if (history.dims[0] != batch || history.dims[1] != net.shape.history_dim())
    throw std::invalid_argument("forward_full: history shape mismatch");
  FullCache<T> c;
  c.pixels = std::move(pixels);
  const TensorT<T>* x = &c.pixels;
  for (const auto& l : net.encoder) {
    c.enc_pre.push_back(numkit::linear_forward(l, *x));
    c.enc_act.push_back(numkit::relu(c.enc_pre.back()));
    x = &c.enc_act.back();
  }
  TensorT<T> obs = numkit::make_zeros<T>({batch, net.shape.obs_dim()});
  int fd = net.shape.feature_dim, hd = net.shape.history_dim();
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < fd; ++i)
      obs.data[static_cast<std::size_t>(b) * (fd + hd) + i] =
          x->data[static_cast<std::size_t>(b) * fd + i];
    for (int i = 0; i < hd; ++i)
      obs.data[static_cast<std::size_t>(b) * (fd + hd) + fd + i] =
          history.data[static_cast<std::size_t>(b) * hd + i];
  }
  c.trunk = forward_trunk(net, std::move(obs));
  return c;
}

template <typename T>
void backward_full(AgentNetT<T>& net, const FullCache<T>& c,
                   const TensorT<T>& grad_q, const TensorT<T>& grad_cls) {
  TensorT<T> gobs = backward_trunk(net, c.trunk, grad_q, grad_cls);
  int batch = gobs.dims[0];
  int fd = net.shape.feature_dim, hd = net.shape.history_dim();
  TensorT<T> gfeat = numkit::make_zeros<T>({batch, fd});
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < fd; ++i)
      gfeat.data[static_cast<std::size_t>(b) * fd + i] =
          gobs.data[static_cast<std::size_t>(b) * (fd + hd) + i];
  for (int li = static_cast<int>(net.encoder.size()) - 1; li >= 0; --li) {
    TensorT<T> gpre = numkit::relu_backward(c.enc_pre[li], gfeat);
    const TensorT<T>& input = li == 0 ? c.pixels : c.enc_act[li - 1];
    gfeat = numkit::linear_backward(net.encoder[li], input, gpre);
  }
}

// Rollout-path forward for one observation: both heads from the shared trunk.
struct HeadOutputs {
  std::vector<float> q_values;      // 9
  std::vector<float> class_logits;  // C
};

template <typename T>
HeadOutputs forward_one(const AgentNetT<T>& net, const Observation& obs) {
  if (static_cast<int>(obs.size()) != net.shape.obs_dim())
    throw std::invalid_argument("forward_one: observation dim mismatch");
  TensorT<T> x = numkit::make_zeros<T>({1, net.shape.obs_dim()});
  for (std::size_t i = 0; i < obs.size(); ++i) x.data[i] = static_cast<T>(obs[i]);
  TrunkCache<T> c = forward_trunk(net, std::move(x));
  HeadOutputs out;
  out.q_values.assign(c.q.data.begin(), c.q.data.end());
  out.class_logits.assign(c.cls.data.begin(), c.cls.data.end());
  return out;
}

// Softmax probability of the target class under the class head's logits.
template <typename T>
double confidence(const std::vector<T>& class_logits, int target_class) {
  if (target_class < 0 || target_class >= static_cast<int>(class_logits.size()))
    throw std::out_of_range("confidence: class out of range");
  auto probs = numkit::softmax(class_logits);
  return static_cast<double>(probs[target_class]);
}

// Eq.-style step reward: sign of the confidence change, with sign(0) = 0.
inline int reward_step_confidence(double c_prev, double c_next) {
  if (c_next > c_prev) return 1;
  if (c_next < c_prev) return -1;
  return 0;
}

// Terminal reward: +eta when the final confidence clears tau (inclusive).
inline double reward_terminal_confidence(double c_final, const RewardParams& p) {
  return c_final >= p.tau ? p.eta : -p.eta;
}

// IoU-based baseline from the cited prior work (ablation only). Ties are
// penalized: no improvement earns -1.
inline int reward_step_iou(const BBox& box_prev, const BBox& box_next,
                           const BBox& gt_box) {
  return locenv::iou(box_next, gt_box) > locenv::iou(box_prev, gt_box) ? 1 : -1;
}

inline double reward_terminal_iou(const BBox& box_final, const BBox& gt_box,
                                  const RewardParams& p, double threshold = 0.5) {
  return locenv::iou(box_final, gt_box) >= threshold ? p.eta : -p.eta;
}

// Epsilon-greedy: with probability epsilon a uniform action, otherwise the
// greedy argmax with lowest-index tie-break.
inline Action select_action(const std::vector<float>& q_values, double epsilon,
                            Rng& rng) {
  if (static_cast<int>(q_values.size()) != locenv::kNumActions)
    throw std::invalid_argument("select_action: expected 9 q-values");
  if (epsilon > 0.0 && rng.uniform() < epsilon)
    return static_cast<Action>(rng.uniform_int(locenv::kNumActions));
  return static_cast<Action>(numkit::argmax(q_values));
}

// Linear annealing from start to end over the first anneal_epochs epochs,
// constant afterwards. Accepts fractional epochs for sub-epoch annealing.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.1;
  double anneal_epochs = 5;

  double value(double epoch) const {
    if (epoch <= 0) return start;
    if (epoch >= anneal_epochs) return end;
    return start - (start - end) * (epoch / anneal_epochs);
  }
};

struct Transition {
  Observation obs;
  Action action = Action::Trigger;
  float reward = 0;
  Observation next_obs;
  bool terminal = false;
  int label = 0;
};

// Fixed-capacity ring; oldest transitions are evicted first. Sampling is
// uniform with replacement from the buffer's own seeded generator.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, std::uint64_t seed)
      : capacity_(capacity), rng_(seed) {
    if (capacity <= 0) throw std::invalid_argument("ReplayBuffer: capacity <= 0");
    storage_.reserve(capacity);
  }

  void push(Transition t) {
    if (static_cast<int>(storage_.size()) < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
  }

  int size() const { return static_cast<int>(storage_.size()); }
  int capacity() const { return capacity_; }

  const Transition& at(int i) const { return storage_[i]; }

  std::vector<const Transition*> sample(int batch) {
    if (storage_.empty()) throw std::logic_error("ReplayBuffer: sample from empty");
    std::vector<const Transition*> out(batch);
    for (int i = 0; i < batch; ++i)
      out[i] = &storage_[rng_.uniform_int(storage_.size())];
    return out;
  }

  std::uint64_t rng_state() const { return rng_.state(); }
  void set_rng_state(std::uint64_t s) { rng_.set_state(s); }

 private:
  int capacity_;
  std::vector<Transition> storage_;
  std::size_t next_ = 0;
  Rng rng_;
};

struct QUpdateResult {
  double q_loss = 0;
  double class_loss = 0;
};

// One-step TD update with joint classification loss (equal weights) and one
// SGD-momentum step over the trunk and both heads. Targets come from the
// target network and are treated as constants. Replay stores observations
// (encoder features + history), so the encoder receives no gradient here.
template <typename T>
QUpdateResult q_update(AgentNetT<T>& net, const AgentNetT<T>& target_net,
                       const std::vector<const Transition*>& batch,
                       const RewardParams& params,
                       numkit::SgdMomentumT<T>& optimizer) {
  if (batch.empty()) throw std::invalid_argument("q_update: empty batch");
  const int b = static_cast<int>(batch.size());
  const int d = net.shape.obs_dim();
  TensorT<T> obs = numkit::make_zeros<T>({b, d});
  TensorT<T> next_obs = numkit::make_zeros<T>({b, d});
  std::vector<int> labels(b);
  for (int i = 0; i < b; ++i) {
    const Transition& t = *batch[i];
    if (static_cast<int>(t.obs.size()) != d ||
        static_cast<int>(t.next_obs.size()) != d)
      throw std::invalid_argument("q_update: transition obs dim mismatch");
    for (int j = 0; j < d; ++j) {
      obs.data[static_cast<std::size_t>(i) * d + j] = static_cast<T>(t.obs[j]);
      next_obs.data[static_cast<std::size_t>(i) * d + j] =
          static_cast<T>(t.next_obs[j]);
    }
    labels[i] = t.label;
  }

  // TD targets from the target network.
  TrunkCache<T> next_cache = forward_trunk(target_net, std::move(next_obs));
  std::vector<double> y(b);
  for (int i = 0; i < b; ++i) {
    const Transition& t = *batch[i];
    double target = t.reward;
    if (!t.terminal) {
      const T* row = next_cache.q.ptr() + static_cast<std::size_t>(i) * locenv::kNumActions;
      double best = row[0];
      for (int a = 1; a < locenv::kNumActions; ++a)
        best = std::max(best, static_cast<double>(row[a]));
      target += params.gamma * best;
    }
    y[i] = target;
  }

  TrunkCache<T> cache = forward_trunk(net, std::move(obs));

  QUpdateResult result;
  TensorT<T> grad_q = numkit::make_zeros<T>({b, locenv::kNumActions});
  for (int i = 0; i < b; ++i) {
    int a = static_cast<int>(batch[i]->action);
    double pred = cache.q.data[static_cast<std::size_t>(i) * locenv::kNumActions + a];
    auto [loss, grad] = numkit::mse_loss(pred, y[i]);
    result.q_loss += loss / b;
    grad_q.data[static_cast<std::size_t>(i) * locenv::kNumActions + a] =
        static_cast<T>(grad / b);
  }

  auto [class_loss, grad_cls] = numkit::cross_entropy_loss(cache.cls, labels);
  result.class_loss = class_loss;

  net.zero_grad();
  backward_trunk(net, cache, grad_q, grad_cls);

  std::vector<TensorT<T>*> params_list;
  std::vector<const TensorT<T>*> grads_list;
  for (auto* l : net.trunk_and_heads()) {
    params_list.push_back(&l->weight);
    params_list.push_back(&l->bias);
    grads_list.push_back(&l->grad_weight);
    grads_list.push_back(&l->grad_bias);
  }
  optimizer.step(params_list, grads_list);
  return result;
}

// Deep copy for the periodic target-network refresh.
template <typename T>
AgentNetT<T> sync_target(const AgentNetT<T>& net) {
  return net;
}

}  // namespace rllogo::agent
