#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rllogo/parallel.hpp"
#include "rllogo/rng.hpp"

// Dense numerical kernel: tensors, linear layers, activations, losses,
// SGD-with-momentum and finite-difference gradient verification. Everything
// is templated on the scalar type; training runs on float, gradient checks
// instantiate the same code on double. Reductions (dot products, loss sums,
// gradient accumulation over a batch) always accumulate in double.
namespace rllogo::numkit {

template <typename T>
struct TensorT {
  std::vector<int> dims;
  std::vector<T> data;

  TensorT() = default;
  TensorT(std::vector<int> d, std::vector<T> values)
      : dims(std::move(d)), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(numel_of(dims)))
      throw std::invalid_argument("Tensor: data length != product of dims");
  }

  std::int64_t numel() const { return numel_of(dims); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out[i] = static_cast<U>(data[i]);
    return TensorT<U>(dims, std::move(out));
  }

  static std::int64_t numel_of(const std::vector<int>& d) {
    std::int64_t n = 1;
    for (int x : d) {
      if (x <= 0) throw std::invalid_argument("Tensor: dims must be positive");
      n *= x;
    }
    return n;
  }
};

template <typename T>
TensorT<T> make_zeros(std::vector<int> dims) {
  std::size_t n = static_cast<std::size_t>(TensorT<T>::numel_of(dims));
  return TensorT<T>(std::move(dims), std::vector<T>(n, T(0)));
}

using Tensor = TensorT<float>;

// Dot product with eight independent partial sums in double. The lane split
// breaks the accumulator dependency chain so the loop vectorizes; the final
// combine order is fixed, so results are bit-stable for a given build.
template <typename T>
inline double dot_acc(const T* a, const T* b, int n) {
  double acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
  double acc4 = 0, acc5 = 0, acc6 = 0, acc7 = 0;
  int n8 = n & ~7;
  for (int i = 0; i < n8; i += 8) {
    acc0 += static_cast<double>(a[i + 0]) * static_cast<double>(b[i + 0]);
    acc1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    acc2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    acc3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    acc4 += static_cast<double>(a[i + 4]) * static_cast<double>(b[i + 4]);
    acc5 += static_cast<double>(a[i + 5]) * static_cast<double>(b[i + 5]);
    acc6 += static_cast<double>(a[i + 6]) * static_cast<double>(b[i + 6]);
    acc7 += static_cast<double>(a[i + 7]) * static_cast<double>(b[i + 7]);
  }
  double tail = 0;
  for (int i = n8; i < n; ++i)
    tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7)) + tail;
}

template <typename T>
struct LinearLayerT {
  TensorT<T> weight;       // [out, in]
  TensorT<T> bias;         // [out]
  TensorT<T> grad_weight;  // [out, in]
  TensorT<T> grad_bias;    // [out]

  int in() const { return weight.dims[1]; }
  int out() const { return weight.dims[0]; }

  // Glorot-uniform weights, zero biases, drawn from the given generator.
  static LinearLayerT init(int in_dim, int out_dim, Rng& rng) {
    LinearLayerT l;
    l.weight = make_zeros<T>({out_dim, in_dim});
    l.bias = make_zeros<T>({out_dim});
    l.grad_weight = make_zeros<T>({out_dim, in_dim});
    l.grad_bias = make_zeros<T>({out_dim});
    double bound = std::sqrt(6.0 / (in_dim + out_dim));
    for (auto& w : l.weight.data)
      w = static_cast<T>(rng.uniform(-bound, bound));
    return l;
  }

  void zero_grad() {
    std::fill(grad_weight.data.begin(), grad_weight.data.end(), T(0));
    std::fill(grad_bias.data.begin(), grad_bias.data.end(), T(0));
  }

  template <typename U>
  LinearLayerT<U> cast() const {
    LinearLayerT<U> l;
    l.weight = weight.template cast<U>();
    l.bias = bias.template cast<U>();
    l.grad_weight = grad_weight.template cast<U>();
    l.grad_bias = grad_bias.template cast<U>();
    return l;
  }
};

using LinearLayer = LinearLayerT<float>;

inline void check_2d(const std::vector<int>& dims, const char* what) {
  if (dims.size() != 2)
    throw std::invalid_argument(std::string(what) + ": expected a 2-D tensor");
}

// y = x * W^T + b.  x: [batch, in] -> y: [batch, out].
template <typename T>
TensorT<T> linear_forward(const LinearLayerT<T>& layer, const TensorT<T>& x) {
  check_2d(x.dims, "linear_forward");
  int batch = x.dims[0], in = x.dims[1], out = layer.out();
  if (in != layer.in())
    throw std::invalid_argument("linear_forward: input dim " + std::to_string(in) +
                                " != layer in dim " + std::to_string(layer.in()));
  TensorT<T> y = make_zeros<T>({batch, out});
  const T* xp = x.ptr();
  const T* wp = layer.weight.ptr();
  const T* bp = layer.bias.ptr();
  T* yp = y.ptr();
  constexpr int kBlock = 8;
  int nblocks = (out + kBlock - 1) / kBlock;
  bool big = static_cast<std::int64_t>(batch) * in * out > (1 << 16);
#pragma omp parallel for schedule(static) if (big)
  for (int ob = 0; ob < nblocks; ++ob) {
    int o0 = ob * kBlock, o1 = std::min(o0 + kBlock, out);
    for (int b = 0; b < batch; ++b) {
      const T* xb = xp + static_cast<std::size_t>(b) * in;
      for (int o = o0; o < o1; ++o)
        yp[static_cast<std::size_t>(b) * out + o] = static_cast<T>(
            dot_acc(xb, wp + static_cast<std::size_t>(o) * in, in) +
            static_cast<double>(bp[o]));
    }
  }
  return y;
}

// Accumulates grad_weight += grad_out^T * x and grad_bias += colsum(grad_out);
// returns grad_in = grad_out * W.
template <typename T>
TensorT<T> linear_backward(LinearLayerT<T>& layer, const TensorT<T>& x,
                           const TensorT<T>& grad_out) {
  check_2d(x.dims, "linear_backward");
  check_2d(grad_out.dims, "linear_backward");
  int batch = x.dims[0], in = x.dims[1], out = layer.out();
  if (in != layer.in() || grad_out.dims[0] != batch || grad_out.dims[1] != out)
    throw std::invalid_argument("linear_backward: shape mismatch");

  const T* xp = x.ptr();
  const T* gp = grad_out.ptr();
  const T* wp = layer.weight.ptr();
  T* gwp = layer.grad_weight.ptr();
  T* gbp = layer.grad_bias.ptr();

  bool big = static_cast<std::int64_t>(batch) * in * out > (1 << 16);

  // Parameter gradients: each thread owns a contiguous range of output rows,
  // accumulating over the batch in a double scratch row.
#pragma omp parallel if (big)
  {
    std::vector<double> row(static_cast<std::size_t>(in));
#pragma omp for schedule(static)
    for (int o = 0; o < out; ++o) {
      std::fill(row.begin(), row.end(), 0.0);
      double gb = 0.0;
      for (int b = 0; b < batch; ++b) {
        double g = gp[static_cast<std::size_t>(b) * out + o];
        gb += g;
        const T* xb = xp + static_cast<std::size_t>(b) * in;
        for (int i = 0; i < in; ++i) row[i] += g * static_cast<double>(xb[i]);
      }
      T* gw = gwp + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i)
        gw[i] = static_cast<T>(static_cast<double>(gw[i]) + row[i]);
      gbp[o] = static_cast<T>(static_cast<double>(gbp[o]) + gb);
    }
  }

  TensorT<T> grad_in = make_zeros<T>({batch, in});
  T* gip = grad_in.ptr();
#pragma omp parallel if (big)
  {
    std::vector<double> row(static_cast<std::size_t>(in));
#pragma omp for schedule(static)
    for (int b = 0; b < batch; ++b) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int o = 0; o < out; ++o) {
        double g = gp[static_cast<std::size_t>(b) * out + o];
        const T* wo = wp + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) row[i] += g * static_cast<double>(wo[i]);
      }
      T* gi = gip + static_cast<std::size_t>(b) * in;
      for (int i = 0; i < in; ++i) gi[i] = static_cast<T>(row[i]);
    }
  }
  return grad_in;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

// Gradient at exactly 0 is defined as 0.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
  if (x.dims != grad_out.dims)
    throw std::invalid_argument("relu_backward: shape mismatch");
  TensorT<T> grad_in = grad_out;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (!(x.data[i] > T(0))) grad_in.data[i] = T(0);
  return grad_in;
}

// Max-subtracted softmax over a vector of logits.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = logits[0];
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += e[i];
  }
  std::vector<T> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    probs[i] = static_cast<T>(e[i] / sum);
  return probs;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

// Mean negative log-likelihood over the batch plus the gradient
// (softmax - onehot) / batch.  logits: [batch, C], labels in [0, C).
template <typename T>
std::pair<double, TensorT<T>> cross_entropy_loss(const TensorT<T>& logits,
                                                 const std::vector<int>& labels) {
  check_2d(logits.dims, "cross_entropy_loss");
  int batch = logits.dims[0], c = logits.dims[1];
  if (static_cast<int>(labels.size()) != batch)
    throw std::invalid_argument("cross_entropy_loss: labels size != batch");
  TensorT<T> grad = make_zeros<T>({batch, c});
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    int label = labels[b];
    if (label < 0 || label >= c)
      throw std::out_of_range("cross_entropy_loss: label out of range");
    const T* row = logits.ptr() + static_cast<std::size_t>(b) * c;
    double mx = row[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < c; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    double lse = mx + std::log(sum);
    loss += lse - static_cast<double>(row[label]);
    T* grow = grad.ptr() + static_cast<std::size_t>(b) * c;
    for (int i = 0; i < c; ++i) {
      double p = std::exp(static_cast<double>(row[i]) - lse);
      grow[i] = static_cast<T>((p - (i == label ? 1.0 : 0.0)) / batch);
    }
  }
  return {loss / batch, std::move(grad)};
}

// loss = (pred - target)^2, grad d(loss)/d(pred) = 2 (pred - target).
inline std::pair<double, double> mse_loss(double pred, double target) {
  double d = pred - target;
  return {d * d, 2.0 * d};
}

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
template <typename T>
struct SgdMomentumT {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<TensorT<T>> velocity;  // one buffer per bound parameter

  static SgdMomentumT for_params(const std::vector<TensorT<T>*>& params,
                                 double lr, double m, double wd) {
    SgdMomentumT s;
    s.learning_rate = lr;
    s.momentum = m;
    s.weight_decay = wd;
    s.velocity.reserve(params.size());
    for (const auto* p : params) s.velocity.push_back(make_zeros<T>(p->dims));
    return s;
  }

  void step(const std::vector<TensorT<T>*>& params,
            const std::vector<const TensorT<T>*>& grads) {
    if (params.size() != velocity.size() || grads.size() != velocity.size())
      throw std::invalid_argument("sgd step: parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      TensorT<T>& p = *params[k];
      const TensorT<T>& g = *grads[k];
      TensorT<T>& v = velocity[k];
      if (p.dims != g.dims || p.dims != v.dims)
        throw std::invalid_argument("sgd step: shape mismatch");
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        double vel = momentum * static_cast<double>(v.data[i]) +
                     static_cast<double>(g.data[i]) +
                     weight_decay * static_cast<double>(p.data[i]);
        v.data[i] = static_cast<T>(vel);
        p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                   learning_rate * static_cast<double>(v.data[i]));
      }
    }
  }
};

using SgdMomentum = SgdMomentumT<float>;

// Central finite-difference verification. `loss` evaluates the scalar loss at
// the current parameter values; `analytic` holds d(loss)/d(param) for each
// bound parameter tensor. Parameters are perturbed in place with step h and
// restored exactly. Relative error uses max(|a|, |fd|, 1e-3) as denominator,
// so dead-zero pairs score 0 and finite-difference noise on near-zero
// gradients does not mask genuine backward bugs (which show up at the scale
// of the gradient itself).
inline double grad_check(const std::vector<TensorT<double>*>& params,
                         const std::vector<const TensorT<double>*>& analytic,
                         const std::function<double()>& loss, double h = 1e-3) {
  std::int64_t count = 0;
  for (const auto* p : params) count += p->numel();
  if (count > 10000)
    throw std::invalid_argument("grad_check: parameter count > 10000");
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    TensorT<double>& p = *params[k];
    const TensorT<double>& a = *analytic[k];
    if (p.dims != a.dims)
      throw std::invalid_argument("grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double keep = p.data[i];
      p.data[i] = keep + h;
      double up = loss();
      p.data[i] = keep - h;
      double down = loss();
      p.data[i] = keep;
      double fd = (up - down) / (2.0 * h);
      double ana = a.data[i];
      double denom = std::max({std::fabs(ana), std::fabs(fd), 1e-3});
      double rel = std::fabs(ana - fd) / denom;
      if (std::fabs(ana) == 0.0 && std::fabs(fd) == 0.0) rel = 0.0;
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Lowest-index argmax.
template <typename T>
int argmax(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename T>
int argmax(const std::vector<T>& values) {
  return argmax(std::span<const T>(values));
}

}  // namespace rllogo::numkit
