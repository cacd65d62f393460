#include "cigli/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cigli::models {

using namespace nn;

int stages_to_4x4(int resolution) {
  if (resolution < 4 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("resolution must be a power of two >= 4, got " + std::to_string(resolution));
  }
  int s = 0;
  for (int r = resolution; r > 4; r /= 2) ++s;
  return s;
}

std::vector<int> default_encoder_channels(int resolution) {
  const int stages = stages_to_4x4(resolution);
  std::vector<int> ch(static_cast<std::size_t>(stages + 1));
  for (int i = 0; i <= stages; ++i) ch[static_cast<std::size_t>(i)] = std::max(16, 64 >> std::max(0, stages - 1 - i));
  return ch;
}

ConvEncoder::ConvEncoder(int resolution_, std::vector<int> channels, int d_out, std::mt19937_64& rng, double init_std)
    : resolution(resolution_) {
  auto std_for = [&](int fan_in) { return init_std > 0 ? init_std : std::sqrt(2.0 / fan_in); };
  const int stages = stages_to_4x4(resolution);
  if (static_cast<int>(channels.size()) != stages + 1) {
    throw std::invalid_argument("ConvEncoder: expected " + std::to_string(stages + 1) + " channel entries for resolution " +
                                std::to_string(resolution) + ", got " + std::to_string(channels.size()));
  }
  convs.emplace_back(3, channels[0], 3, 1, 1, rng, std_for(27));
  for (int s = 0; s < stages; ++s) {
    const int cin = channels[static_cast<std::size_t>(s)];
    convs.emplace_back(cin, channels[static_cast<std::size_t>(s + 1)], 4, 2, 1, rng, std_for(cin * 16));
  }
  head = Linear(channels.back() * 16, d_out, rng, true, std_for(channels.back() * 16) / std::sqrt(2.0));
}

Tensor ConvEncoder::features(const Tensor& images) const {
  if (images.shape().size() != 4 || images.dim(1) != 3 || images.dim(2) != resolution || images.dim(3) != resolution) {
    throw std::invalid_argument("image encoder expects [B,3," + std::to_string(resolution) + "," +
                                std::to_string(resolution) + "], got " + shape_str(images.shape()));
  }
  Tensor h = images;
  for (const auto& c : convs) h = leaky_relu(c.forward(h));
  return h;
}

Tensor ConvEncoder::forward(const Tensor& images) const {
  Tensor f = features(images);
  return head.forward(reshape(f, {f.dim(0), f.dim(1) * 16}));
}

void ConvEncoder::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + ".conv" + std::to_string(i));
  head.collect(out, prefix + ".head");
}

TextEncoder::TextEncoder(int vocab_size, int d_word, int d_hidden, std::mt19937_64& rng)
    : embedding(normal_param({vocab_size, d_word}, 0.1, rng)), lstm(d_word, d_hidden, rng, 0.1) {}

Tensor TextEncoder::forward(const text::TokenBatch& batch) const {
  if (batch.ids.empty()) throw std::invalid_argument("text encoder: empty batch");
  for (int len : batch.lengths)
    if (len == 0) throw std::invalid_argument("text encoder: empty token sequence");
  std::vector<Tensor> steps;
  steps.reserve(static_cast<std::size_t>(batch.max_len));
  for (int t = 0; t < batch.max_len; ++t) {
    const auto col = batch.column(t);
    for (int id : col)
      if (id < 0 || id >= embedding.dim(0)) throw std::invalid_argument("text encoder: token id out of range");
    steps.push_back(nn::embedding(embedding, col));
  }
  return lstm.final_hidden(steps, batch.lengths);
}

void TextEncoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".embedding", embedding});
  lstm.collect(out, prefix + ".lstm");
}

Mlp::Mlp(int d_in, int d_hidden, int d_out, std::mt19937_64& rng) : l1(d_in, d_hidden, rng), l2(d_hidden, d_out, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return l2.forward(relu(l1.forward(x))); }

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  l1.collect(out, prefix + ".l1");
  l2.collect(out, prefix + ".l2");
}

}  // namespace cigli::models
