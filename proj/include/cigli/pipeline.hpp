#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cigli/autometrics.hpp"
#include "cigli/captionpipe.hpp"
#include "cigli/corpus.hpp"
#include "cigli/evalserver.hpp"
#include "cigli/fusiongan.hpp"
#include "cigli/synthscenes.hpp"

// End-to-end orchestration shared by the command-line tool, the Python module
// and the acceptance suite. Every stage writes into a directory and echoes the
// effective configuration there as config.json.
namespace cigli::pipeline {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthSettings {
  int size = 2000;
  std::map<std::string, double> template_mix{{"aggregate", 0.5}, {"disjunctive", 0.5}};
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  int canvas_size = 64;
  int max_objects = 6;

  synth::CorpusConfig corpus_config(std::uint64_t seed) const;
};

struct CaptionSettings {
  caption::CaptionerConfig model;
  int beam_size = 3;
  int n_captions = 2;
  int max_tokens = 64;
};

struct MetricSettings {
  metrics::VerifierConfig verifier;
  metrics::ClassifierConfig classifier;
  int n_splits = 10;
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::vector<std::string> annotators = evalserver::default_annotators();
};

// Model resolutions follow synth.canvas_size and the classifier's object cap
// follows synth.max_objects; a config that sets them to something else is rejected.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  SynthSettings synth;
  CaptionSettings captioner;
  fusion::FusionConfig fusion = fusion::FusionConfig::desk();
  MetricSettings metrics;
  ServeSettings serve;

  static RunConfig desk();
  // 32x32 scenes with at most four objects; the full pipeline fits in half an hour on one core.
  static RunConfig small();
  static RunConfig preset(const std::string& name);

  void finalize();
  std::uint64_t seed_value() const { return seed.value_or(0); }

  nlohmann::json to_json() const;
  // Missing keys keep the values of `base`; unknown keys throw PipelineError.
  static RunConfig from_json(const nlohmann::json& j, const RunConfig& base = desk());
  static RunConfig load(const std::filesystem::path& file, const RunConfig& base = desk());
};

// flag > config > CIGLI_SEED > 0. A malformed CIGLI_SEED throws.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config,
                           const char* env_value);
// Independent per-stage seed derived from the global one.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

void write_config(const RunConfig& cfg, const std::filesystem::path& dir);

// Filtered JSONL (with matched_rule) at `out` and statistics at <out>.stats.json.
corpus::FilterStats run_filter(const std::filesystem::path& in, const std::filesystem::path& out);
std::filesystem::path stats_path(const std::filesystem::path& out);

// Writes images/ and {train,val,eval}.jsonl.
synth::SynthCorpus run_synth(const RunConfig& cfg, const std::filesystem::path& dir);
std::vector<synth::SynthExample> load_split(const std::filesystem::path& corpus_dir, corpus::Split split);

// A trained fusion model plus, for text_only, the captioner that builds its text input.
struct Generator {
  fusion::FusionModel model;
  std::optional<caption::Captioner> captioner;
  CaptionSettings caption_settings;

  std::string model_tag() const { return fusion::to_string(model.config().mode); }
  // Caption as the model reads it: the caption itself, or for text_only the
  // caption joined with generated captions of the first image.
  std::string model_text(const std::string& caption, const Image& image1) const;
  Image generate(const synth::SynthExample& ex) const;

  static Generator load(const std::filesystem::path& run_dir);
};

using ProgressFn = std::function<void(const std::string& stage, const nlohmann::json& info)>;

// Trains one generator on <corpus_dir>/train.jsonl into run_dir (model/, captioner/,
// train_log.jsonl, config.json).
Generator run_train(const RunConfig& cfg, fusion::FusionMode mode, const std::filesystem::path& corpus_dir,
                    const std::filesystem::path& run_dir, const ProgressFn& progress = {});

// Verifier and classifier trained on the corpus train split, checked on val
// (verifier/, classifier/, validation.json, config.json).
struct MetricModels {
  metrics::Verifier verifier;
  metrics::ClassifierModel classifier;

  static MetricModels load(const std::filesystem::path& dir);
};
MetricModels run_train_metrics(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                               const std::filesystem::path& out_dir, const ProgressFn& progress = {});

// Second-image source for a model tag: a run directory, "gold", or "noise".
metrics::ImageSource generator_source(const Generator& g);
metrics::ImageSource baseline_source(const std::string& tag, std::uint64_t seed);

// PNG per example plus manifest.json {model_tag, images: {identifier: file}}.
void write_generations(const std::string& model_tag, const metrics::ImageSource& source,
                       std::span<const synth::SynthExample> examples, const std::filesystem::path& dir);

metrics::MetricReport run_evaluate(const RunConfig& cfg, const std::string& model_tag,
                                   const metrics::ImageSource& source,
                                   std::span<const synth::SynthExample> eval_set, const MetricModels& models,
                                   const std::filesystem::path& out_file,
                                   const std::filesystem::path& cache_dir = {});

// Markdown table over several reports, one row each in the given order.
std::string report_table(const std::vector<metrics::MetricReport>& reports);

// Seeds a blind rating session over eval items and generation directories written
// by write_generations (tag -> directory). The manifest lands in session_dir.
evalserver::SessionManifest create_session(const std::filesystem::path& eval_jsonl,
                                           const std::map<std::string, std::filesystem::path>& generation_dirs,
                                           const std::vector<std::string>& annotators, std::uint64_t seed,
                                           const std::filesystem::path& session_dir);

// synth -> metric models -> one generator per mode -> MetricReport per mode, plus gold and noise.
struct PipelineResult {
  std::map<std::string, metrics::MetricReport> reports;
  std::map<std::string, double> seconds;  // wall time per stage
};
PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<fusion::FusionMode>& modes,
                            const std::filesystem::path& dir, const ProgressFn& progress = {});

}  // namespace cigli::pipeline
