#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigli/image.hpp"
#include "cigli/models.hpp"
#include "cigli/synthscenes.hpp"
#include "cigli/text.hpp"

namespace cigli::caption {

using nn::Tensor;

class CaptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Caption {
  std::vector<int> tokens;  // ends with EOS unless cut at max length
  std::string text;
  double logprob = 0.0;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Next-token log-probabilities for a batch of prefixes (BOS implicit, not included).
class StepDecoder {
 public:
  virtual ~StepDecoder() = default;
  virtual int vocab_size() const = 0;
  virtual int eos() const = 0;
  virtual std::vector<std::vector<double>> next_logprobs(const std::vector<std::vector<int>>& prefixes) = 0;
};

struct Hypothesis {
  std::vector<int> tokens;
  double logprob = 0.0;
};

// Keeps the beam_size best partial hypotheses per step (ties broken by the
// lexicographically smaller token sequence). A hypothesis completes when it
// emits EOS or reaches max_len tokens. Returns the n_best completed ones, best first.
std::vector<Hypothesis> beam_search(StepDecoder& dec, int beam_size, int n_best, int max_len);
// Argmax decoding with the same tie rule.
Hypothesis greedy_decode(StepDecoder& dec, int max_len);

// Joins original and generated caption texts with the "<sep>" token, original
// first, cutting the tail so the result has at most max_tokens tokens.
std::string concat_captions(const std::string& original, std::span<const Caption> generated, int max_tokens = 64);

// Count-free description of a scene: shape class and colour, never a number.
// `variant` picks one of several phrasings.
std::string describe_scene(const synth::SceneSpec& spec, int variant);
int describe_variants();

struct CaptionerConfig {
  int image_resolution = 64;
  int d_feat = 128;
  int d_word = 32;
  int d_hidden = 128;
  std::vector<int> enc_channels;  // empty -> default for the resolution
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 6;
  int max_len = 16;

  void finalize();
  nlohmann::json to_json() const;
  static CaptionerConfig from_json(const nlohmann::json& j);
};

struct CaptionPair {
  Image image;
  std::string text;
};

class Captioner {
 public:
  Captioner(CaptionerConfig cfg, text::Vocabulary vocab, std::uint64_t seed);

  const CaptionerConfig& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  bool trained() const { return step_ > 0; }
  long step() const { return step_; }

  // [B, d_feat] encoder output.
  Tensor features(const Tensor& images) const;
  std::vector<double> extract_features(const Image& img) const;

  // Teacher-forced cross-entropy over target tokens plus EOS.
  Tensor loss(const std::vector<const CaptionPair*>& batch) const;
  double train_epoch(const std::vector<CaptionPair>& data, std::mt19937_64& rng);

  std::vector<Caption> beam_caption(const Image& img, int beam_size, int n_captions) const;
  Caption greedy_caption(const Image& img) const;

  nn::ParamList parameters() const;
  void save(const std::filesystem::path& dir) const;
  static Captioner load(const std::filesystem::path& dir);

  models::ConvEncoder encoder;
  nn::Linear init_h;
  Tensor embedding;
  nn::Lstm lstm;
  nn::Linear out;

 private:
  friend class CaptionerDecoder;
  CaptionerConfig cfg_;
  text::Vocabulary vocab_;
  std::uint64_t seed_;
  long step_ = 0;
  nn::Adam opt_;
};

// Builds (image, description) pairs from both images of every example.
std::vector<CaptionPair> captioner_pairs(std::span<const synth::SynthExample> examples, std::uint64_t seed);

Captioner train_captioner(const std::vector<CaptionPair>& data, CaptionerConfig cfg, std::uint64_t seed);

}  // namespace cigli::caption
