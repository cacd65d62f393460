#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigli/image.hpp"
#include "cigli/models.hpp"
#include "cigli/nn/layers.hpp"
#include "cigli/text.hpp"

namespace cigli::fusion {

using nn::ParamList;
using nn::Tensor;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FusionMode { text_only, concat, sum };
std::string to_string(FusionMode m);
FusionMode parse_mode(const std::string& s);

struct FusionConfig {
  FusionMode mode = FusionMode::concat;
  int d_txt = 256;
  int d_img = 256;
  int d_fuse = 256;
  int d_word = 32;
  int noise_dim = 100;
  int image_resolution = 64;
  // gen_channels[0] is the 4x4 grid width; block i maps gen_channels[i] -> gen_channels[i+1].
  std::vector<int> gen_channels;
  std::vector<int> disc_channels;
  std::vector<int> enc_channels;
  int mod_hidden = 64;
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  int batch_size = 24;
  int epochs = 120;
  int max_text_len = 64;
  bool gradient_penalty = false;
  double gp_weight = 2.0;
  // Conv/linear init std; <= 0 selects fan-in scaled init.
  double init_std = 0.02;
  // Starting to_rgb bias, i.e. the pre-sigmoid output of an all-zero feature map.
  double rgb_bias_init = 0.0;

  // Batch 16, epochs 30.
  static FusionConfig desk();
  // 32x32, 64-d embeddings, fan-in init, output bias at the background grey,
  // batch 16, 12 epochs. Trains in minutes on one core.
  static FusionConfig small();

  int condition_dim() const;
  // Fills empty channel schedules with defaults for the resolution, then checks invariants.
  void finalize();
  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys.
  static FusionConfig from_json(const nlohmann::json& j);
  bool operator==(const FusionConfig&) const = default;
};

std::vector<int> default_gen_channels(int resolution);
std::vector<int> default_disc_channels(int resolution);

struct Fusion {
  Fusion() = default;
  Fusion(FusionMode mode, int d_txt, int d_img, int d_fuse, std::mt19937_64& rng);

  // `image` may be undefined only in text_only mode, where it is never read.
  Tensor forward(const Tensor& text, const Tensor& image) const;
  void collect(ParamList& out, const std::string& prefix) const;
  int out_dim() const;

  FusionMode mode = FusionMode::concat;
  int d_txt = 0, d_img = 0;
  nn::Linear proj_text, proj_image;  // sum mode only, no bias
};

// One generator block: upsample x2, conv3x3, condition-dependent affine modulation, leaky ReLU.
struct GenBlock {
  GenBlock() = default;
  GenBlock(int c_in, int c_out, int cond_dim, int mod_hidden, std::mt19937_64& rng, double init_std = 0.02);
  Tensor forward(const Tensor& x, const Tensor& cond) const;
  void collect(ParamList& out, const std::string& prefix) const;

  nn::Conv2d conv;
  models::Mlp gamma, beta;  // last layer starts at gamma = 1, beta = 0
};

struct Generator {
  Generator() = default;
  Generator(int noise_dim, int cond_dim, int resolution, std::vector<int> channels, int mod_hidden, std::mt19937_64& rng,
            double init_std = 0.02, double rgb_bias = 0.0);

  Tensor forward(const Tensor& noise, const Tensor& cond) const;  // [B,3,R,R] in [0,1]
  void collect(ParamList& out, const std::string& prefix) const;

  int noise_dim = 0, cond_dim = 0, resolution = 0;
  nn::Linear fc;
  std::vector<GenBlock> blocks;
  nn::Conv2d to_rgb;
};

struct Discriminator {
  Discriminator() = default;
  // With empty `channels` the input must already be 4x4 and goes straight to the joint head.
  Discriminator(int resolution, std::vector<int> channels, int cond_dim, std::mt19937_64& rng, double init_std = 0.02);

  Tensor forward(const Tensor& images, const Tensor& cond) const;  // [B,1] logits
  void collect(ParamList& out, const std::string& prefix) const;

  int resolution = 0, cond_dim = 0;
  std::vector<nn::Conv2d> down;
  nn::Conv2d joint;   // conv3x3 over [features ; replicated condition]
  nn::Conv2d logit;   // conv4x4 valid -> 1
};

struct HingeLosses {
  Tensor d_loss;
  Tensor g_loss;
};
// mean(relu(1 - s_real)) + (mean(relu(1 + s_fake)) + mean(relu(1 + s_mis))) / 2
Tensor d_hinge_loss(const Tensor& s_real, const Tensor& s_fake, const Tensor& s_mis);
// -mean(s_fake)
Tensor g_hinge_loss(const Tensor& s_fake);
// Rotate-by-one derangement used to build mismatched conditions. Throws when batch < 2.
std::vector<int> mismatch_permutation(int batch);

// Parameter groups reported by gradient checks.
inline const std::vector<std::string>& param_groups() {
  static const std::vector<std::string> g{"text_encoder", "image_encoder", "fusion", "generator", "discriminator"};
  return g;
}

struct TrainExample {
  std::string text;  // caption, or the concatenated caption string in text_only mode
  Image image1;
  Image image2;
};

struct StepRecord {
  long step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  std::map<std::string, double> grad_norms;
};

class FusionModel {
 public:
  FusionModel(FusionConfig cfg, text::Vocabulary vocab, std::uint64_t seed);

  const FusionConfig& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }

  text::TokenBatch tokenize(const std::vector<std::string>& texts) const;
  Tensor encode_text(const text::TokenBatch& tokens) const;
  Tensor encode_image(const Tensor& images) const;
  // Encodes and fuses a batch; image1 is not read in text_only mode.
  Tensor condition(const std::vector<std::string>& texts, const std::vector<const Image*>& image1) const;
  Tensor generate(const Tensor& noise, const Tensor& cond) const;
  Tensor discriminate(const Tensor& images, const Tensor& cond) const;

  Tensor sample_noise(int batch, std::mt19937_64& rng) const;
  // Deterministic generation for one example (noise drawn from noise_seed).
  Image generate_image(const std::string& text, const Image& image1, std::uint64_t noise_seed) const;

  ParamList parameters() const;
  ParamList group(const std::string& name) const;

  // One discriminator update followed by one generator update.
  StepRecord train_step(const std::vector<const TrainExample*>& batch, std::mt19937_64& rng);
  long step() const { return step_; }
  std::uint64_t seed() const { return seed_; }

  void save(const std::filesystem::path& dir) const;
  static FusionModel load(const std::filesystem::path& dir);

  models::TextEncoder text_encoder;
  models::ConvEncoder image_encoder;
  Fusion fusion;
  Generator generator;
  Discriminator discriminator;

 private:
  void build_optimizers();

  FusionConfig cfg_;
  text::Vocabulary vocab_;
  std::uint64_t seed_ = 0;
  long step_ = 0;
  nn::Adam opt_d_, opt_g_;
};

struct TrainResult {
  std::vector<StepRecord> trace;
};

using ProgressFn = std::function<void(const StepRecord&)>;

// Trains for cfg.epochs over full batches of a seed-shuffled order.
// Aborts with TrainingError on a non-finite loss.
TrainResult train(FusionModel& model, const std::vector<TrainExample>& data, std::uint64_t seed,
                  const ProgressFn& progress = {});

}  // namespace cigli::fusion
