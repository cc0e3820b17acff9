#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rllogo/image.hpp"

// The bounding-box MDP: normalized boxes, the nine transformation actions,
// action history, observation construction and geometry utilities.
namespace rllogo::locenv {

inline constexpr double kDefaultAlpha = 0.2;
inline constexpr double kMinBoxSide = 0.05;
inline constexpr int kMaxSteps = 40;
inline constexpr int kNumActions = 9;
inline constexpr int kHistoryLen = 10;

// Normalized axis-aligned rectangle in [0,1]^2 with x1 < x2, y1 < y2 and both
// sides at least the minimum box size.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid(double min_side = kMinBoxSide) const {
    return x1 >= 0 && y1 >= 0 && x2 <= 1 && y2 <= 1 && x1 < x2 && y1 < y2 &&
           width() >= min_side - 1e-12 && height() >= min_side - 1e-12;
  }

  bool operator==(const BBox& o) const {
    return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
  }

  static BBox full() { return {0, 0, 1, 1}; }
};

// Stable integer encoding 0..8 in this order.
enum class Action : int {
  MoveLeft = 0,
  MoveRight = 1,
  MoveUp = 2,
  MoveDown = 3,
  ScaleUp = 4,
  ScaleDown = 5,
  Fatter = 6,
  Taller = 7,
  Trigger = 8,
};

inline const char* action_name(Action a) {
  switch (a) {
    case Action::MoveLeft: return "move_left";
    case Action::MoveRight: return "move_right";
    case Action::MoveUp: return "move_up";
    case Action::MoveDown: return "move_down";
    case Action::ScaleUp: return "scale_up";
    case Action::ScaleDown: return "scale_down";
    case Action::Fatter: return "fatter";
    case Action::Taller: return "taller";
    case Action::Trigger: return "trigger";
  }
  return "?";
}

// Box transformation with magnitude alpha of the current box dimensions.
// Translations truncate at the image border preserving the box size; scaling
// works about the center; Fatter/Taller shrink one dimension. The result is
// always a valid box; passing Trigger is a contract violation.
inline BBox apply_action(const BBox& box, Action action,
                         double alpha = kDefaultAlpha,
                         double min_side = kMinBoxSide) {
  if (action == Action::Trigger)
    throw std::logic_error("apply_action: Trigger is not a transformation");
  double w = box.width(), h = box.height();
  BBox b = box;
  auto shift_x = [&](double dx) {
    dx = std::max(-box.x1, std::min(dx, 1.0 - box.x2));
    b.x1 = box.x1 + dx;
    b.x2 = box.x2 + dx;
  };
  auto shift_y = [&](double dy) {
    dy = std::max(-box.y1, std::min(dy, 1.0 - box.y2));
    b.y1 = box.y1 + dy;
    b.y2 = box.y2 + dy;
  };
  auto resize_about_center = [&](double nw, double nh) {
    nw = std::max(nw, min_side);
    nh = std::max(nh, min_side);
    b.x1 = std::max(0.0, box.cx() - nw / 2);
    b.x2 = std::min(1.0, box.cx() + nw / 2);
    b.y1 = std::max(0.0, box.cy() - nh / 2);
    b.y2 = std::min(1.0, box.cy() + nh / 2);
  };
  switch (action) {
    case Action::MoveLeft: shift_x(-alpha * w); break;
    case Action::MoveRight: shift_x(alpha * w); break;
    case Action::MoveUp: shift_y(-alpha * h); break;
    case Action::MoveDown: shift_y(alpha * h); break;
    case Action::ScaleUp: resize_about_center(w * (1 + alpha), h * (1 + alpha)); break;
    case Action::ScaleDown: resize_about_center(w * (1 - alpha), h * (1 - alpha)); break;
    case Action::Fatter: resize_about_center(w, h * (1 - alpha)); break;
    case Action::Taller: resize_about_center(w * (1 - alpha), h); break;
    case Action::Trigger: break;  // unreachable
  }
  return b;
}

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Bilinear resample of the box region to an out_side x out_side raster.
// Output pixel centers map linearly onto the box span in source pixel space;
// a full-image box with out_side equal to the source side is the identity.
inline Image crop_resize(const Image& img, const BBox& box, int out_side) {
  if (out_side < 8) throw std::invalid_argument("crop_resize: out_side < 8");
  Image out(out_side, out_side);
  double bx = box.x1 * img.width, bw = box.width() * img.width;
  double by = box.y1 * img.height, bh = box.height() * img.height;
  for (int y = 0; y < out_side; ++y) {
    double sy = by + (y + 0.5) * bh / out_side - 0.5;
    for (int x = 0; x < out_side; ++x) {
      double sx = bx + (x + 0.5) * bw / out_side - 0.5;
      double rgb[3];
      bilinear_sample(img, sx, sy, rgb);
      out.set(x, y, static_cast<std::uint8_t>(std::llround(rgb[0])),
              static_cast<std::uint8_t>(std::llround(rgb[1])),
              static_cast<std::uint8_t>(std::llround(rgb[2])));
    }
  }
  return out;
}

// Ring of the most recent actions, one-hot over the nine actions per slot,
// newest in slot 0. Untaken slots stay all-zero.
struct ActionHistory {
  int capacity = kHistoryLen;
  std::vector<int> recent;  // newest first, size <= capacity

  void push(Action a) {
    recent.insert(recent.begin(), static_cast<int>(a));
    if (static_cast<int>(recent.size()) > capacity) recent.pop_back();
  }

  std::vector<float> flatten() const {
    std::vector<float> v(static_cast<std::size_t>(capacity) * kNumActions, 0.0f);
    for (std::size_t s = 0; s < recent.size(); ++s)
      v[s * kNumActions + recent[s]] = 1.0f;
    return v;
  }

  int dim() const { return capacity * kNumActions; }
};

struct EnvParams {
  double alpha = kDefaultAlpha;
  int max_steps = kMaxSteps;
  double min_box = kMinBoxSide;
  int encoder_input_side = 32;
  int history_len = kHistoryLen;
};

struct EnvState {
  const Image* scene = nullptr;
  BBox box = BBox::full();
  ActionHistory history;
  int step_count = 0;
  bool done = false;

  static EnvState start(const Image& scene, const EnvParams& params) {
    EnvState s;
    s.scene = &scene;
    s.history.capacity = params.history_len;
    return s;
  }
};

// Feature vector of the current box crop concatenated with the flattened
// action history.
using Observation = std::vector<float>;

template <typename EncoderFn>
Observation build_observation(EncoderFn&& encoder, const EnvState& state,
                              const EnvParams& params) {
  Image crop = crop_resize(*state.scene, state.box, params.encoder_input_side);
  std::vector<float> features = encoder(crop);
  std::vector<float> hist = state.history.flatten();
  Observation obs;
  obs.reserve(features.size() + hist.size());
  obs.insert(obs.end(), features.begin(), features.end());
  obs.insert(obs.end(), hist.begin(), hist.end());
  return obs;
}

// Trigger (or reaching the step cap) ends the episode; any other action
// transforms the box, records itself in the history and counts as one step.
inline EnvState env_step(const EnvState& state, Action action,
                         const EnvParams& params) {
  if (state.done) throw std::logic_error("env_step: episode already done");
  EnvState next = state;
  if (action == Action::Trigger) {
    next.done = true;
    return next;
  }
  next.box = apply_action(state.box, action, params.alpha, params.min_box);
  next.history.push(action);
  next.step_count = state.step_count + 1;
  if (next.step_count >= params.max_steps) next.done = true;
  return next;
}

}  // namespace rllogo::locenv
