#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigli/image.hpp"
#include "cigli/models.hpp"
#include "cigli/synthscenes.hpp"
#include "cigli/text.hpp"

namespace cigli::metrics {

using nn::Tensor;

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kLogEps = 1e-12;

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
  int n_splits = 0;
};

// Contiguous splits; per split exp(mean KL(p(y|x) || p_bar(y))); population std
// across splits.
InceptionScore inception_score(std::span<const std::vector<double>> conditionals, int n_splits);
// Requested splits reduced so every split holds at least n_classes images.
int auto_splits(std::size_t n_images, int n_classes, int requested = 10);

// Class 0 is the empty canvas, otherwise 1 + shape * max_objects + (count - 1).
// Scenes are expected to hold one shape class; the most frequent one wins.
int scene_label(const synth::SceneSpec& spec, int max_objects);
int scene_classes(int max_objects);

struct ClassifierConfig {
  int image_resolution = 64;
  int max_objects = 6;
  std::vector<int> channels;  // empty -> default for the resolution
  int d_hidden = 64;
  double lr = 1e-3;
  int batch_size = 32;
  int steps = 600;

  void finalize();
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct LabeledImage {
  const Image* image = nullptr;
  int label = 0;
};

class ClassifierModel {
 public:
  ClassifierModel(ClassifierConfig cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  int n_classes() const { return scene_classes(cfg_.max_objects); }
  long step() const { return step_; }

  Tensor logits(const Tensor& images) const;
  // One probability row per image.
  std::vector<std::vector<double>> predict(std::span<const Image> images) const;
  double train_step(std::span<const LabeledImage> batch);
  double accuracy(std::span<const LabeledImage> data) const;

  nn::ParamList parameters() const;
  void save(const std::filesystem::path& dir) const;
  static ClassifierModel load(const std::filesystem::path& dir);

  models::ConvEncoder encoder;
  nn::Linear out;

 private:
  ClassifierConfig cfg_;
  std::uint64_t seed_;
  long step_ = 0;
  nn::Adam opt_;
};

// Both images of every example, labelled by their scene specs.
std::vector<LabeledImage> classifier_data(std::span<const synth::SynthExample> examples, int max_objects);
ClassifierModel train_classifier(std::span<const LabeledImage> data, ClassifierConfig cfg, std::uint64_t seed);

InceptionScore inception_score(std::span<const Image> images, const ClassifierModel& clf, int n_splits);

struct VerifierConfig {
  int image_resolution = 64;
  std::vector<int> channels;
  int d_img = 64;
  int d_word = 32;
  int d_txt = 64;
  int d_hidden = 128;
  int max_text_len = 32;
  double lr = 1e-3;
  int batch_size = 32;
  int steps = 2000;

  void finalize();
  nlohmann::json to_json() const;
  static VerifierConfig from_json(const nlohmann::json& j);
};

// A (caption, image1, image2) triple. The images are borrowed and must outlive it.
struct Triple {
  std::string caption;
  const Image* image1 = nullptr;
  const Image* image2 = nullptr;
  bool label = true;
};

class Verifier {
 public:
  Verifier(VerifierConfig cfg, text::Vocabulary vocab, std::uint64_t seed);

  const VerifierConfig& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  long step() const { return step_; }

  Tensor logits(const std::vector<const Triple*>& batch) const;  // [B, 1]
  std::vector<double> probabilities(std::span<const Triple> triples) const;
  double train_step(const std::vector<const Triple*>& batch);
  void set_lr(double lr);
  double accuracy(std::span<const Triple> triples) const;

  nn::ParamList parameters() const;
  void save(const std::filesystem::path& dir) const;
  static Verifier load(const std::filesystem::path& dir);

  models::ConvEncoder image_encoder;  // shared by both images
  models::TextEncoder text_encoder;
  nn::Linear hidden;
  nn::Linear out;

 private:
  VerifierConfig cfg_;
  text::Vocabulary vocab_;
  std::uint64_t seed_;
  long step_ = 0;
  nn::Adam opt_;
};

// Shape class named by a cross-image caption.
synth::ShapeClass caption_shape(const std::string& caption);
// Whether a scene placed as the second image makes the example's caption true.
bool second_image_satisfies(const synth::SynthExample& ex, const synth::SceneSpec& candidate);

// One TRUE triple per example plus one FALSE triple whose second image is
// borrowed from another example and falsifies the caption. Half of the FALSE
// partners share the caption's shape class so that counts must be read.
std::vector<Triple> verifier_triples(std::span<const synth::SynthExample> examples, std::uint64_t seed);

// The learning rate decays linearly to zero over the run. Throws MetricsError
// when `train` holds a single class.
Verifier finetune_verifier(std::span<const Triple> train, VerifierConfig cfg, std::uint64_t seed);

struct VerifierScores {
  double accuracy = 0.0;
  double consistency = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_groups = 0;
};

// accuracy = % of pairs accepted; consistency = % of caption groups with every pair accepted.
VerifierScores verifier_scores(std::span<const std::string> captions, std::span<const char> accepted);
VerifierScores verifier_scores(std::span<const Triple> triples, const Verifier& v);

struct MetricReport {
  std::string model_tag;
  double inception_mean = 0.0;
  double inception_std = 0.0;
  int inception_splits = 0;
  double verifier_accuracy = 0.0;
  double verifier_consistency = 0.0;
  std::size_t n_examples = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  std::string dump() const;  // canonical serialisation
};

// Produces the second image for one eval example.
using ImageSource = std::function<Image(const synth::SynthExample& ex, std::size_t index)>;

ImageSource gold_source();
ImageSource noise_source(std::uint64_t seed);

struct EvalOptions {
  int n_splits = 10;
  // Directory for generated PNGs and their manifest; empty skips caching.
  std::filesystem::path cache_dir;
};

MetricReport evaluate_generations(const std::string& model_tag, const ImageSource& source,
                                  std::span<const synth::SynthExample> eval_set, const Verifier& v,
                                  const ClassifierModel& clf, const EvalOptions& opts = {});

}  // namespace cigli::metrics
