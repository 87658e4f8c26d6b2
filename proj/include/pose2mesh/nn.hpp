#pragma once

// Trainable layers: fully connected, 1-D batch normalization, ReLU + dropout,
// and the Chebyshev graph-convolution block.

#include "pose2mesh/error.hpp"
#include "pose2mesh/graph.hpp"
#include "pose2mesh/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace p2m {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Uniform(-s, s) with s = sqrt(6 / fan_in).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-s, s);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
struct Linear {
  Tensor<T> weight; // [n_in, n_out]
  Tensor<T> bias;   // [n_out]

  Linear() = default;
  Linear(std::size_t n_in, std::size_t n_out, std::mt19937_64& rng)
      : weight(fan_in_uniform<T>({n_in, n_out}, n_in, rng)), bias(Shape{n_out}, T(0), true) {}

  std::size_t n_in() const { return weight.size(0); }
  std::size_t n_out() const { return weight.size(1); }

  void zero_init() {
    std::fill(weight.values().begin(), weight.values().end(), T(0));
    std::fill(bias.values().begin(), bias.values().end(), T(0));
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// y = x W + b for x of shape [B, n_in].
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const Linear<T>& layer) {
  if (x.dim() != 2 || x.size(1) != layer.n_in())
    throw ShapeError("fc_forward: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(layer.weight.shape()));
  return add_bias(matmul(x, layer.weight), layer.bias);
}

/// Per-feature normalization over the rows of [N, n].
template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta;              // trainable
  Tensor<T> running_mean, running_var; // buffers, excluded from gradients
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t n)
      : gamma(Shape{n}, T(1), true), beta(Shape{n}, T(0), true), running_mean(Shape{n}, T(0)),
        running_var(Shape{n}, T(1)) {}

  std::size_t features() const { return gamma.numel(); }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
  }
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm<T>& bn, bool training) {
  const std::size_t n = bn.features();
  if (x.dim() != 2 || x.size(1) != n)
    throw ShapeError("batchnorm_forward: input " + shape_str(x.shape()) + " vs " +
                     std::to_string(n) + " features");
  const std::size_t N = x.size(0);
  if (training && N < 2)
    throw ValueError("batchnorm_forward: training mode needs at least 2 rows, got " + std::to_string(N));

  std::vector<T> mean(n, T(0)), inv_std(n, T(0));
  if (training) {
    std::vector<double> m(n, 0.0), var(n, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < n; ++j) m[j] += x[i * n + j];
    for (auto& v : m) v /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double d = x[i * n + j] - m[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < n; ++j) {
      const double biased = var[j] / static_cast<double>(N);
      mean[j] = static_cast<T>(m[j]);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(biased + bn.eps));
      const double unbiased = var[j] / static_cast<double>(N - 1);
      bn.running_mean[j] = static_cast<T>((1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * m[j]);
      bn.running_var[j] = static_cast<T>((1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      mean[j] = bn.running_mean[j];
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(bn.running_var[j]) + bn.eps));
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (x[i * n + j] - mean[j]) * inv_std[j];
      xhat[i * n + j] = h;
      y[i * n + j] = bn.gamma[j] * h + bn.beta[j];
    }

  if (detail::should_record({&x, &bn.gamma, &bn.beta})) {
    auto xi = x.impl(), gi = bn.gamma.impl(), bi = bn.beta.impl(), oi = y.impl();
    auto hi = xhat.impl();
    detail::record<T>("batchnorm", {xi, gi, bi}, y, [xi, gi, bi, oi, hi, inv_std, N, n, training] {
      const auto& dy = oi->grad;
      const auto& h = hi->data;
      std::vector<T> sum_dh(n, T(0)), sum_dh_h(n, T(0));
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T dh = dy[i * n + j] * gi->data[j];
          sum_dh[j] += dh;
          sum_dh_h[j] += dh * h[i * n + j];
        }
      if (gi->requires_grad) {
        auto& g = gi->grad_buffer();
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * h[i * n + j];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
      }
      if (xi->requires_grad) {
        auto& g = xi->grad_buffer();
        const T invN = T(1) / static_cast<T>(N);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const T dh = dy[i * n + j] * gi->data[j];
            if (training)
              g[i * n + j] += inv_std[j] * (dh - invN * sum_dh[j] - h[i * n + j] * invN * sum_dh_h[j]);
            else
              g[i * n + j] += inv_std[j] * dh;
          }
      }
    });
  }
  return y;
}

/// max(x, 0) followed by inverted dropout in training mode.
template <typename T>
Tensor<T> relu_dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValueError("relu_dropout: p must be in [0, 1)");
  Tensor<T> y = relu(x);
  if (!training || p == 0.0) return y;
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.values()) m = keep(rng) ? s : T(0);
  return mul(y, mask);
}

template <typename T>
struct ChebConv {
  ChebFilter<T> filter;

  ChebConv() = default;
  ChebConv(std::size_t f_in, std::size_t f_out, std::size_t order, std::mt19937_64& rng) {
    if (order < 1) throw ValueError("ChebConv: order K must be >= 1");
    for (std::size_t k = 0; k < order; ++k)
      filter.theta.push_back(fan_in_uniform<T>({f_in, f_out}, order * f_in, rng));
  }

  void zero_init() {
    for (auto& t : filter.theta) std::fill(t.values().begin(), t.values().end(), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, const ScaledLaplacian& lap) const {
    return chebyshev_conv(x, lap, filter);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    for (std::size_t k = 0; k < filter.order(); ++k)
      out.emplace_back(prefix + ".theta" + std::to_string(k), filter.theta[k]);
  }
};

/// Chebyshev conv -> batch norm over (batch x vertices) -> ReLU.
template <typename T>
struct GraphConvBlock {
  ChebConv<T> conv;
  BatchNorm<T> bn;

  GraphConvBlock() = default;
  GraphConvBlock(std::size_t f_in, std::size_t f_out, std::size_t order, std::mt19937_64& rng)
      : conv(f_in, f_out, order, rng), bn(f_out) {}

  Tensor<T> forward(const Tensor<T>& x, const ScaledLaplacian& lap, bool training) {
    if (x.dim() != 3) throw ShapeError("GraphConvBlock: expected [B,V,f], got " + shape_str(x.shape()));
    const std::size_t B = x.size(0), V = x.size(1);
    Tensor<T> y = conv.forward(x, lap);
    const std::size_t f = y.size(2);
    y = batchnorm_forward(reshape(y, {B * V, f}), bn, training);
    return reshape(relu(y), {B, V, f});
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    conv.collect(prefix + ".conv", out);
    bn.collect(prefix + ".bn", out);
  }
};

} // namespace p2m
