#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "cigli/nn/ops.hpp"
#include "cigli/nn/tensor.hpp"

namespace cigli::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::vector<Tensor> tensors_of(const ParamList& params);

// Rounds to the nearest float32 value. Parameters always live on the float32
// grid so checkpoints (stored as float32) round-trip bit-exactly.
inline double to_float_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

// Zero-mean normal parameter, snapped to the float32 grid.
Tensor normal_param(Shape shape, double stddev, std::mt19937_64& rng);
Tensor constant_param(Shape shape, double value);

struct Linear {
  Linear() = default;
  Linear(int in_features, int out_features, std::mt19937_64& rng, bool with_bias = true, double init_std = 0.02);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }

  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
};

struct Conv2d {
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng,
         double init_std = 0.02);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;
};

// Single-layer LSTM. Gate order in the stacked weights is (input, forget, cell, output).
struct Lstm {
  struct State {
    Tensor h;
    Tensor c;
  };

  Lstm() = default;
  Lstm(int input_size, int hidden_size, std::mt19937_64& rng, double init_std = 0.02);

  State zero_state(int batch) const;
  State step(const Tensor& x, const State& s) const;
  // Runs over time-major inputs (steps[t] is [B, input]) and returns the
  // hidden state of each row after its own last valid step.
  Tensor final_hidden(const std::vector<Tensor>& steps, std::span<const int> lengths) const;
  void collect(ParamList& out, const std::string& prefix) const;
  int hidden_size() const { return hidden_weight.dim(1); }

  Linear input;          // [4H, in] + bias [4H]
  Tensor hidden_weight;  // [4H, H]
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

double total_grad_norm(const ParamList& params);
void zero_grads(const ParamList& params);

}  // namespace cigli::nn
