#include "cigli/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cigli::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw PipelineError(where + " must be a JSON object");
  const std::set<std::string> names(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!names.count(it.key())) throw PipelineError("unknown config key '" + where + "." + it.key() + "'");
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw PipelineError("config key '" + where + "." + key + "': " + e.what());
  }
}

// Runs a component's own from_json over its current values patched with `j`.
template <typename C>
C patch(const C& base, const json& j, const std::string& where) {
  if (!j.is_object()) throw PipelineError(where + " must be a JSON object");
  json merged = base.to_json();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!merged.contains(it.key())) throw PipelineError("unknown config key '" + where + "." + it.key() + "'");
    merged[it.key()] = it.value();
  }
  try {
    return C::from_json(merged);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(where + ": " + e.what());
  }
}

void check_follow(const json& section, const char* key, int expected, const std::string& where) {
  if (section.is_object() && section.contains(key) && section.at(key) != expected)
    throw PipelineError("config key '" + where + "." + key + "' must equal " + std::to_string(expected) +
                        " (it follows the synth settings)");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void notify(const ProgressFn& progress, const std::string& stage, const json& info) {
  if (progress) progress(stage, info);
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw PipelineError("cannot write " + file.string());
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw PipelineError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw PipelineError(file.string() + ": " + e.what());
  }
}

}  // namespace

synth::CorpusConfig SynthSettings::corpus_config(std::uint64_t seed) const {
  synth::CorpusConfig c;
  c.size = size;
  c.seed = seed;
  c.template_mix = template_mix;
  c.train_fraction = train_fraction;
  c.val_fraction = val_fraction;
  c.scene.canvas_size = canvas_size;
  c.scene.max_objects = max_objects;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.finalize();
  return c;
}

RunConfig RunConfig::small() {
  RunConfig c;
  c.synth.canvas_size = 32;
  c.synth.max_objects = 4;
  c.captioner.model.d_feat = 32;
  c.captioner.model.d_hidden = 48;
  c.captioner.model.lr = 3e-3;
  c.captioner.model.epochs = 4;
  c.fusion = fusion::FusionConfig::small();
  c.metrics.verifier.channels = {8, 16, 32, 32};
  c.metrics.classifier.channels = {8, 16, 32, 32};
  c.finalize();
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "small") return small();
  throw PipelineError("unknown preset '" + name + "' (expected desk or small)");
}

void RunConfig::finalize() {
  if (synth.size < 1) throw PipelineError("synth.size must be positive");
  const int r = synth.canvas_size;
  captioner.model.image_resolution = r;
  fusion.image_resolution = r;
  metrics.verifier.image_resolution = r;
  metrics.classifier.image_resolution = r;
  metrics.classifier.max_objects = synth.max_objects;
  if (captioner.beam_size < 1 || captioner.n_captions < 1 || captioner.n_captions > captioner.beam_size)
    throw PipelineError("captioner needs 1 <= n_captions <= beam_size");
  if (captioner.max_tokens < 1) throw PipelineError("captioner.max_tokens must be positive");
  if (metrics.n_splits < 1) throw PipelineError("metrics.n_splits must be positive");
  if (serve.port < 0 || serve.port > 65535) throw PipelineError("serve.port out of range");
  if (serve.annotators.empty()) throw PipelineError("serve.annotators must not be empty");
  try {
    captioner.model.finalize();
    fusion.finalize();
    metrics.verifier.finalize();
    metrics.classifier.finalize();
  } catch (const std::invalid_argument& e) {
    throw PipelineError(e.what());
  }
}

json RunConfig::to_json() const {
  json j;
  if (seed) j["seed"] = *seed;
  j["synth"] = {{"size", synth.size},
                {"template_mix", synth.template_mix},
                {"train_fraction", synth.train_fraction},
                {"val_fraction", synth.val_fraction},
                {"canvas_size", synth.canvas_size},
                {"max_objects", synth.max_objects}};
  j["captioner"] = {{"model", captioner.model.to_json()},
                    {"beam_size", captioner.beam_size},
                    {"n_captions", captioner.n_captions},
                    {"max_tokens", captioner.max_tokens}};
  j["fusion"] = fusion.to_json();
  j["metrics"] = {{"verifier", metrics.verifier.to_json()},
                  {"classifier", metrics.classifier.to_json()},
                  {"n_splits", metrics.n_splits}};
  j["serve"] = {{"host", serve.host}, {"port", serve.port}, {"static_dir", serve.static_dir},
                {"annotators", serve.annotators}};
  return j;
}

RunConfig RunConfig::from_json(const json& j, const RunConfig& base) {
  reject_unknown(j, {"seed", "synth", "captioner", "fusion", "metrics", "serve"}, "config");
  RunConfig c = base;
  if (j.contains("seed")) {
    const json& v = j["seed"];
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw PipelineError("config key 'seed' must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    reject_unknown(s, {"size", "template_mix", "train_fraction", "val_fraction", "canvas_size", "max_objects"}, "synth");
    get(s, "size", c.synth.size, "synth");
    get(s, "template_mix", c.synth.template_mix, "synth");
    get(s, "train_fraction", c.synth.train_fraction, "synth");
    get(s, "val_fraction", c.synth.val_fraction, "synth");
    get(s, "canvas_size", c.synth.canvas_size, "synth");
    get(s, "max_objects", c.synth.max_objects, "synth");
  }
  const int r = c.synth.canvas_size;
  // Encoder channel defaults are resolution-specific, so a resolution change re-derives them.
  if (c.captioner.model.image_resolution != r) {
    c.captioner.model.image_resolution = r;
    c.captioner.model.enc_channels.clear();
  }
  if (c.metrics.verifier.image_resolution != r) {
    c.metrics.verifier.image_resolution = r;
    c.metrics.verifier.channels.clear();
  }
  if (c.metrics.classifier.image_resolution != r) {
    c.metrics.classifier.image_resolution = r;
    c.metrics.classifier.channels.clear();
  }
  if (c.fusion.image_resolution != r) {
    c.fusion.image_resolution = r;
    c.fusion.gen_channels = c.fusion.disc_channels = c.fusion.enc_channels = {};
  }
  c.metrics.classifier.max_objects = c.synth.max_objects;
  if (j.contains("captioner")) {
    const json& s = j["captioner"];
    reject_unknown(s, {"model", "beam_size", "n_captions", "max_tokens"}, "captioner");
    if (s.contains("model")) {
      check_follow(s["model"], "image_resolution", r, "captioner.model");
      c.captioner.model = patch(c.captioner.model, s["model"], "captioner.model");
    }
    get(s, "beam_size", c.captioner.beam_size, "captioner");
    get(s, "n_captions", c.captioner.n_captions, "captioner");
    get(s, "max_tokens", c.captioner.max_tokens, "captioner");
  }
  if (j.contains("fusion")) {
    check_follow(j["fusion"], "image_resolution", r, "fusion");
    c.fusion = patch(c.fusion, j["fusion"], "fusion");
  }
  if (j.contains("metrics")) {
    const json& s = j["metrics"];
    reject_unknown(s, {"verifier", "classifier", "n_splits"}, "metrics");
    if (s.contains("verifier")) {
      check_follow(s["verifier"], "image_resolution", r, "metrics.verifier");
      c.metrics.verifier = patch(c.metrics.verifier, s["verifier"], "metrics.verifier");
    }
    if (s.contains("classifier")) {
      check_follow(s["classifier"], "image_resolution", r, "metrics.classifier");
      check_follow(s["classifier"], "max_objects", c.synth.max_objects, "metrics.classifier");
      c.metrics.classifier = patch(c.metrics.classifier, s["classifier"], "metrics.classifier");
    }
    get(s, "n_splits", c.metrics.n_splits, "metrics");
  }
  if (j.contains("serve")) {
    const json& s = j["serve"];
    reject_unknown(s, {"host", "port", "static_dir", "annotators"}, "serve");
    get(s, "host", c.serve.host, "serve");
    get(s, "port", c.serve.port, "serve");
    get(s, "static_dir", c.serve.static_dir, "serve");
    get(s, "annotators", c.serve.annotators, "serve");
  }
  c.finalize();
  return c;
}

RunConfig RunConfig::load(const fs::path& file, const RunConfig& base) { return from_json(read_json(file), base); }

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config,
                           const char* env_value) {
  if (flag) return *flag;
  if (config) return *config;
  if (env_value && *env_value) {
    const std::string s(env_value);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (s.front() == '-') throw std::invalid_argument("negative");
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || used == 0) throw PipelineError("CIGLI_SEED is not a non-negative integer: '" + s + "'");
    return v;
  }
  return 0;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return corpus::fnv1a64(stage, seed); }

void write_config(const RunConfig& cfg, const fs::path& dir) { write_text(dir / "config.json", cfg.to_json().dump(2) + "\n"); }

fs::path stats_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".stats.json");
  return p;
}

corpus::FilterStats run_filter(const fs::path& in, const fs::path& out) {
  const auto loaded = corpus::load_nlvr2_jsonl(in);
  auto filtered = corpus::build_cigli_dataset(loaded.dataset);
  filtered.stats.total_in += loaded.duplicates;
  filtered.stats.dropped_duplicate += loaded.duplicates;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  corpus::write_jsonl(filtered.dataset, out, true);
  json stats = filtered.stats.to_json();
  stats["malformed_lines"] = loaded.errors.size();
  write_text(stats_path(out), stats.dump(2) + "\n");
  return filtered.stats;
}

synth::SynthCorpus run_synth(const RunConfig& cfg, const fs::path& dir) {
  auto corp = synth::build_synth_corpus(cfg.synth.corpus_config(stage_seed(cfg.seed_value(), "synth")));
  fs::create_directories(dir);
  synth::write_corpus(corp, dir);
  write_config(cfg, dir);
  return corp;
}

std::vector<synth::SynthExample> load_split(const fs::path& corpus_dir, corpus::Split split) {
  const fs::path file = corpus_dir / (corpus::to_string(split) + ".jsonl");
  if (!fs::exists(file)) throw PipelineError("missing corpus split " + file.string());
  return synth::load_examples(file);
}

std::string Generator::model_text(const std::string& caption, const Image& image1) const {
  if (model.config().mode != fusion::FusionMode::text_only) return caption;
  if (!captioner) throw PipelineError("text_only generator has no captioner");
  const auto caps = captioner->beam_caption(image1, caption_settings.beam_size, caption_settings.n_captions);
  return caption::concat_captions(caption, caps, caption_settings.max_tokens);
}

Image Generator::generate(const synth::SynthExample& ex) const {
  return model.generate_image(model_text(ex.caption, ex.image1), ex.image1, corpus::fnv1a64(ex.identifier, model.seed()));
}

Generator Generator::load(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "model")) throw PipelineError("no trained model under " + run_dir.string());
  auto cfg = fs::exists(run_dir / "config.json") ? RunConfig::load(run_dir / "config.json") : RunConfig::desk();
  Generator g{fusion::FusionModel::load(run_dir / "model"), std::nullopt, cfg.captioner};
  if (fs::exists(run_dir / "captioner")) g.captioner = caption::Captioner::load(run_dir / "captioner");
  return g;
}

Generator run_train(const RunConfig& cfg, fusion::FusionMode mode, const fs::path& corpus_dir, const fs::path& run_dir,
                    const ProgressFn& progress) {
  const auto train = load_split(corpus_dir, corpus::Split::train);
  if (train.empty()) throw PipelineError("empty training split in " + corpus_dir.string());
  const std::uint64_t seed = cfg.seed_value();
  fs::create_directories(run_dir);

  fusion::FusionConfig fc = cfg.fusion;
  fc.mode = mode;
  std::optional<caption::Captioner> captioner;
  if (mode == fusion::FusionMode::text_only) {
    const auto t0 = std::chrono::steady_clock::now();
    captioner = caption::train_captioner(caption::captioner_pairs(train, stage_seed(seed, "captioner-data")),
                                         cfg.captioner.model, stage_seed(seed, "captioner"));
    captioner->save(run_dir / "captioner");
    notify(progress, "captioner", {{"seconds", seconds_since(t0)}});
  }
  // The model seed depends on the mode so the three generators are independent draws.
  Generator g{fusion::FusionModel(fc, text::Vocabulary(), 0), std::move(captioner), cfg.captioner};
  std::vector<fusion::TrainExample> data;
  std::vector<std::string> texts;
  data.reserve(train.size());
  for (const auto& ex : train) {
    data.push_back({g.model_text(ex.caption, ex.image1), ex.image1, ex.image2_gold});
    texts.push_back(data.back().text);
  }
  g.model = fusion::FusionModel(fc, text::Vocabulary::build(texts), stage_seed(seed, "fusion-" + to_string(mode)));

  std::ofstream log(run_dir / "train_log.jsonl", std::ios::binary);
  const auto t0 = std::chrono::steady_clock::now();
  fusion::train(g.model, data, stage_seed(seed, "fusion-order-" + to_string(mode)), [&](const fusion::StepRecord& r) {
    log << json{{"step", r.step}, {"d_loss", r.d_loss}, {"g_loss", r.g_loss}}.dump() << '\n';
    if (progress && (r.step % 100 == 0))
      progress("train", {{"mode", to_string(mode)}, {"step", r.step}, {"d_loss", r.d_loss}, {"g_loss", r.g_loss},
                         {"seconds", seconds_since(t0)}});
  });
  g.model.save(run_dir / "model");
  RunConfig echo = cfg;
  echo.fusion = fc;
  write_config(echo, run_dir);
  return g;
}

MetricModels MetricModels::load(const fs::path& dir) {
  if (!fs::exists(dir / "verifier") || !fs::exists(dir / "classifier"))
    throw PipelineError("no verifier/classifier under " + dir.string());
  return MetricModels{metrics::Verifier::load(dir / "verifier"), metrics::ClassifierModel::load(dir / "classifier")};
}

MetricModels run_train_metrics(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir,
                               const ProgressFn& progress) {
  const auto train = load_split(corpus_dir, corpus::Split::train);
  const auto val = load_split(corpus_dir, corpus::Split::val);
  const std::uint64_t seed = cfg.seed_value();
  fs::create_directories(out_dir);

  auto t0 = std::chrono::steady_clock::now();
  const auto train_triples = metrics::verifier_triples(train, stage_seed(seed, "verifier-triples"));
  auto verifier = metrics::finetune_verifier(train_triples, cfg.metrics.verifier, stage_seed(seed, "verifier"));
  const auto val_triples = metrics::verifier_triples(val, stage_seed(seed, "verifier-val"));
  const double v_acc = val_triples.empty() ? 0.0 : verifier.accuracy(val_triples);
  notify(progress, "verifier", {{"val_accuracy", v_acc}, {"seconds", seconds_since(t0)}});

  t0 = std::chrono::steady_clock::now();
  const int max_objects = cfg.synth.max_objects;
  auto classifier = metrics::train_classifier(metrics::classifier_data(train, max_objects), cfg.metrics.classifier,
                                              stage_seed(seed, "classifier"));
  const auto val_images = metrics::classifier_data(val, max_objects);
  const double c_acc = val_images.empty() ? 0.0 : classifier.accuracy(val_images);
  notify(progress, "classifier", {{"val_accuracy", c_acc}, {"seconds", seconds_since(t0)}});

  verifier.save(out_dir / "verifier");
  classifier.save(out_dir / "classifier");
  write_text(out_dir / "validation.json",
             json{{"verifier_val_accuracy", v_acc}, {"classifier_val_accuracy", c_acc}}.dump(2) + "\n");
  write_config(cfg, out_dir);
  return MetricModels{std::move(verifier), std::move(classifier)};
}

metrics::ImageSource generator_source(const Generator& g) {
  return [&g](const synth::SynthExample& ex, std::size_t) { return g.generate(ex); };
}

metrics::ImageSource baseline_source(const std::string& tag, std::uint64_t seed) {
  if (tag == "gold") return metrics::gold_source();
  if (tag == "noise") return metrics::noise_source(stage_seed(seed, "noise"));
  throw PipelineError("unknown baseline '" + tag + "' (expected gold or noise)");
}

void write_generations(const std::string& model_tag, const metrics::ImageSource& source,
                       std::span<const synth::SynthExample> examples, const fs::path& dir) {
  fs::create_directories(dir);
  json images = json::object();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::string file = examples[i].identifier + ".png";
    write_png(source(examples[i], i), dir / file);
    images[examples[i].identifier] = file;
  }
  write_text(dir / "manifest.json", json{{"model_tag", model_tag}, {"images", images}}.dump(2) + "\n");
}

metrics::MetricReport run_evaluate(const RunConfig& cfg, const std::string& model_tag, const metrics::ImageSource& source,
                                   std::span<const synth::SynthExample> eval_set, const MetricModels& models,
                                   const fs::path& out_file, const fs::path& cache_dir) {
  metrics::EvalOptions opts;
  opts.n_splits = cfg.metrics.n_splits;
  opts.cache_dir = cache_dir;
  auto report = metrics::evaluate_generations(model_tag, source, eval_set, models.verifier, models.classifier, opts);
  if (!out_file.empty()) {
    write_text(out_file, report.dump());
    write_config(cfg, out_file.has_parent_path() ? out_file.parent_path() : fs::path("."));
  }
  return report;
}

std::string report_table(const std::vector<metrics::MetricReport>& reports) {
  std::ostringstream out;
  out << "| model | IS | verifier accuracy | verifier consistency | n |\n";
  out << "|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "| %s | %.2f +- %.2f | %.2f | %.2f | %zu |\n", r.model_tag.c_str(), r.inception_mean,
                  r.inception_std, r.verifier_accuracy, r.verifier_consistency, r.n_examples);
    out << buf;
  }
  return out.str();
}

evalserver::SessionManifest create_session(const fs::path& eval_jsonl, const std::map<std::string, fs::path>& generation_dirs,
                                           const std::vector<std::string>& annotators, std::uint64_t seed,
                                           const fs::path& session_dir) {
  const auto loaded = corpus::load_nlvr2_jsonl(eval_jsonl);
  if (!loaded.errors.empty())
    throw PipelineError(eval_jsonl.string() + ": line " + std::to_string(loaded.errors.front().line) + ": " +
                        loaded.errors.front().message);
  const fs::path base = fs::absolute(eval_jsonl).parent_path();
  std::vector<evalserver::SessionItem> items;
  for (const auto& dp : loaded.dataset.points) {
    fs::path first(dp.left_image);
    if (first.is_relative()) first = base / first;
    items.push_back({dp.identifier, dp.caption, first});
  }
  std::map<std::string, std::map<std::string, fs::path>> generations;
  for (const auto& [tag, dir] : generation_dirs) {
    const json m = read_json(dir / "manifest.json");
    auto& per = generations[tag];
    for (auto it = m.at("images").begin(); it != m.at("images").end(); ++it)
      per[it.key()] = fs::absolute(dir / it.value().get<std::string>());
  }
  auto manifest = evalserver::seed_session(items, generations, annotators, seed);
  fs::create_directories(session_dir);
  manifest.save(session_dir / "manifest.json");
  return manifest;
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<fusion::FusionMode>& modes, const fs::path& dir,
                            const ProgressFn& progress) {
  PipelineResult out;
  auto t0 = std::chrono::steady_clock::now();
  run_synth(cfg, dir / "corpus");
  out.seconds["synth"] = seconds_since(t0);
  const auto eval_set = load_split(dir / "corpus", corpus::Split::eval);

  t0 = std::chrono::steady_clock::now();
  const auto models = run_train_metrics(cfg, dir / "corpus", dir / "metrics", progress);
  out.seconds["metrics"] = seconds_since(t0);

  for (const std::string tag : {"gold", "noise"}) {
    out.reports.emplace(tag, run_evaluate(cfg, tag, baseline_source(tag, cfg.seed_value()), eval_set, models,
                                          dir / "reports" / (tag + ".json")));
  }
  for (auto mode : modes) {
    const std::string tag = fusion::to_string(mode);
    t0 = std::chrono::steady_clock::now();
    const auto g = run_train(cfg, mode, dir / "corpus", dir / "runs" / tag, progress);
    out.seconds["train_" + tag] = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    out.reports.emplace(tag, run_evaluate(cfg, tag, generator_source(g), eval_set, models, dir / "reports" / (tag + ".json"),
                                          dir / "generations" / tag));
    out.seconds["evaluate_" + tag] = seconds_since(t0);
    notify(progress, "evaluate", out.reports.at(tag).to_json());
  }
  return out;
}

}  // namespace cigli::pipeline
