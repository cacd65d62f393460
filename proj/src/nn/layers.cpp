#include "cigli/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace cigli::nn {

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor normal_param(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = to_float_grid(dist(rng));
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor constant_param(Shape shape, double value) { return Tensor::full(std::move(shape), to_float_grid(value), true); }

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng, bool with_bias, double init_std)
    : weight(normal_param({out_features, in_features}, init_std, rng)) {
  if (with_bias) bias = constant_param({out_features}, 0.0);
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, std::mt19937_64& rng,
               double init_std)
    : weight(normal_param({out_channels, in_channels, kernel, kernel}, init_std, rng)),
      bias(constant_param({out_channels}, 0.0)),
      stride(stride_),
      padding(padding_) {}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Lstm::Lstm(int input_size, int hidden_size, std::mt19937_64& rng, double init_std)
    : input(input_size, 4 * hidden_size, rng, true, init_std),
      hidden_weight(normal_param({4 * hidden_size, hidden_size}, init_std, rng)) {
  // forget-gate bias starts at 1
  for (int j = hidden_size; j < 2 * hidden_size; ++j) input.bias.data()[static_cast<std::size_t>(j)] = 1.0;
}

Lstm::State Lstm::zero_state(int batch) const {
  const int h = hidden_size();
  return {Tensor::zeros({batch, h}), Tensor::zeros({batch, h})};
}

Lstm::State Lstm::step(const Tensor& x, const State& s) const {
  const int h = hidden_size();
  Tensor gates = add(input.forward(x), linear(s.h, hidden_weight, Tensor()));
  Tensor i = sigmoid(slice(gates, 0, h));
  Tensor f = sigmoid(slice(gates, h, h));
  Tensor g = tanh(slice(gates, 2 * h, h));
  Tensor o = sigmoid(slice(gates, 3 * h, h));
  Tensor c = add(mul(f, s.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

Tensor Lstm::final_hidden(const std::vector<Tensor>& steps, std::span<const int> lengths) const {
  if (steps.empty()) throw std::invalid_argument("Lstm::final_hidden: no time steps");
  const int batch = steps.front().dim(0);
  if (static_cast<int>(lengths.size()) != batch) throw std::invalid_argument("Lstm::final_hidden: lengths size");
  State s = zero_state(batch);
  std::vector<char> active(static_cast<std::size_t>(batch));
  for (std::size_t t = 0; t < steps.size(); ++t) {
    bool all = true, any = false;
    for (int b = 0; b < batch; ++b) {
      active[static_cast<std::size_t>(b)] = static_cast<std::size_t>(lengths[static_cast<std::size_t>(b)]) > t;
      all = all && active[static_cast<std::size_t>(b)];
      any = any || active[static_cast<std::size_t>(b)];
    }
    if (!any) break;
    State next = step(steps[t], s);
    if (all) {
      s = std::move(next);
    } else {
      s = {where_rows(active, next.h, s.h), where_rows(active, next.c, s.c)};
    }
  }
  return s.h;
}

void Lstm::collect(ParamList& out, const std::string& prefix) const {
  input.collect(out, prefix + ".input");
  out.push_back({prefix + ".hidden_weight", hidden_weight});
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = bc1 > 0.0 ? m[i] / bc1 : m[i];
      const double vhat = v[i] / bc2;
      w[i] = to_float_grid(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double total_grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

void zero_grads(const ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

}  // namespace cigli::nn
