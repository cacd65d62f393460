#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "cigli/nn/layers.hpp"
#include "cigli/text.hpp"

// Building blocks shared by the generator, captioner, verifier and classifier.
namespace cigli::models {

using nn::ParamList;
using nn::Tensor;

// Number of stride-2 stages from `resolution` down to 4x4. Throws unless the
// resolution is a power of two >= 4.
int stages_to_4x4(int resolution);
// 16 channels at full resolution doubling to 64 by the 8x8 stage.
std::vector<int> default_encoder_channels(int resolution);

// conv3x3 stem then conv4x4/stride-2 stages down to 4x4 (leaky ReLU after each),
// flattened into a Linear to d_out. channels.size() must be stages_to_4x4 + 1.
// init_std <= 0 selects fan-in scaled (He) initialisation.
struct ConvEncoder {
  ConvEncoder() = default;
  ConvEncoder(int resolution, std::vector<int> channels, int d_out, std::mt19937_64& rng, double init_std = 0.02);

  Tensor features(const Tensor& images) const;  // [B, C_last, 4, 4]
  Tensor forward(const Tensor& images) const;   // [B, d_out]
  void collect(ParamList& out, const std::string& prefix) const;
  int d_out() const { return head.out_features(); }

  int resolution = 0;
  std::vector<nn::Conv2d> convs;
  nn::Linear head;
};

// Token embedding + single-layer LSTM; the embedding is the final hidden state.
struct TextEncoder {
  TextEncoder() = default;
  TextEncoder(int vocab_size, int d_word, int d_hidden, std::mt19937_64& rng);

  Tensor forward(const text::TokenBatch& batch) const;  // [B, d_hidden]
  void collect(ParamList& out, const std::string& prefix) const;
  int d_out() const { return lstm.hidden_size(); }

  Tensor embedding;  // [V, d_word]
  nn::Lstm lstm;
};

// Two-layer MLP used for per-block modulation parameters.
struct Mlp {
  Mlp() = default;
  Mlp(int d_in, int d_hidden, int d_out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  nn::Linear l1, l2;
};

}  // namespace cigli::models
