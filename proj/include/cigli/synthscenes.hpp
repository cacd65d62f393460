#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigli/corpus.hpp"
#include "cigli/image.hpp"

namespace cigli::synth {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeClass { circle, square, triangle };

const std::vector<ShapeClass>& all_shapes();
std::string to_string(ShapeClass s);
ShapeClass parse_shape(const std::string& name);
std::array<double, 3> shape_color(ShapeClass s);
std::array<double, 3> background_color();

struct SceneSpec {
  std::map<ShapeClass, int> shape_counts;
  int canvas_size = 64;
  std::uint64_t jitter_seed = 0;
  int max_objects = 6;

  int total() const;
  int count(ShapeClass s) const;
  void validate() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
  bool same_counts(const SceneSpec& other) const;
  bool operator==(const SceneSpec&) const = default;
};

// Solid shapes on a uniform background, one shape per grid cell with seeded
// jitter. Throws SceneError when the counts do not fit without overlap.
Image render_scene(const SceneSpec& spec);

struct SynthOptions {
  int canvas_size = 64;
  int max_objects = 6;
  std::vector<ShapeClass> shapes = all_shapes();
};

struct SynthExample {
  std::string identifier;
  std::string caption;
  Image image1;
  Image image2_gold;
  std::string template_id;
  std::optional<SceneSpec> first_spec;
  std::optional<SceneSpec> target_spec;
  bool label = true;
};

// aggregate: "there are exactly N <shape>s in total", first image k, second N-k.
// disjunctive: "one image has X <shape>s while the other has Y <shape>s".
// distractor: "the left image contains exactly N <shape>s" (per-image; filter tests only).
const std::vector<std::string>& registered_templates();
bool is_cross_image(const std::string& template_id);

struct AggregateDraw {
  int total = 0;
  int first = 0;
};
// The (N, k) draw an aggregate-template seed produces.
AggregateDraw draw_aggregate(std::uint64_t rng_seed, int max_objects, std::size_t n_shapes);

SynthExample sample_example(std::uint64_t rng_seed, const std::string& template_id, const SynthOptions& opts = {});

// Every target count a caption alone admits (enumerated over the first image's count).
std::vector<int> admissible_targets(const SynthExample& ex, int max_objects);

struct CorpusConfig {
  int size = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> template_mix{{"aggregate", 0.5}, {"disjunctive", 0.5}};
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  SynthOptions scene;
};

struct SynthCorpus {
  std::vector<SynthExample> train;
  std::vector<SynthExample> val;
  std::vector<SynthExample> eval;

  const std::vector<SynthExample>& split(corpus::Split s) const;
  std::size_t size() const { return train.size() + val.size() + eval.size(); }
};

SynthCorpus build_synth_corpus(const CorpusConfig& cfg);

// Dataset view (image references point at images/<identifier>_{1,2}.png).
corpus::Dataset to_dataset(std::span<const SynthExample> examples, corpus::Split split);

// Writes images/ as 8-bit PNG plus <split>.jsonl index files.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);
void write_examples(std::span<const SynthExample> examples, corpus::Split split, const std::filesystem::path& dir);
// Loads a JSONL index (corpus schema) and the images it references, relative to the file.
std::vector<SynthExample> load_examples(const std::filesystem::path& jsonl);

std::string number_word(int n);

}  // namespace cigli::synth
