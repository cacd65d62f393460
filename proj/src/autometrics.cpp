#include "cigli/autometrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "cigli/checkpoint.hpp"

namespace cigli::metrics {

using json = nlohmann::json;
using nn::Adam;
using nn::AdamConfig;
using nn::Linear;
using nn::NoGradGuard;
using nn::ParamList;

namespace {

void reject_unknown(const json& j, const json& known, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + " config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("unknown " + what + " config key '" + it.key() + "'");
}

void check_resolution(const Image& img, int resolution, const std::string& who) {
  if (!img.valid() || img.height != resolution || img.width != resolution) {
    throw MetricsError(who + ": expected a valid " + std::to_string(resolution) + "x" + std::to_string(resolution) +
                       " image, got " + std::to_string(img.height) + "x" + std::to_string(img.width));
  }
}

// Epoch-wise shuffled batches drawn from [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch, std::uint64_t seed) : n_(n), batch_(static_cast<std::size_t>(batch)), rng_(seed) {}
  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < std::min(batch_, n_)) {
      if (pos_ == order_.size()) {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------- inception

InceptionScore inception_score(std::span<const std::vector<double>> conditionals, int n_splits) {
  if (conditionals.empty()) throw MetricsError("inception_score: no images");
  if (n_splits < 1) throw MetricsError("inception_score: n_splits must be at least 1");
  if (static_cast<std::size_t>(n_splits) > conditionals.size()) {
    throw MetricsError("inception_score: " + std::to_string(n_splits) + " splits for " +
                       std::to_string(conditionals.size()) + " images");
  }
  const std::size_t c = conditionals.front().size();
  for (const auto& p : conditionals) {
    if (p.size() != c || c == 0) throw MetricsError("inception_score: ragged class distributions");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw MetricsError("inception_score: negative or non-finite probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw MetricsError("inception_score: distribution sums to " + std::to_string(s));
  }
  const std::size_t n = conditionals.size();
  std::vector<double> scores;
  for (int k = 0; k < n_splits; ++k) {
    const std::size_t lo = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(n_splits);
    const std::size_t hi = n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(n_splits);
    std::vector<double> marginal(c, 0.0);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t y = 0; y < c; ++y) marginal[y] += conditionals[i][y];
    for (double& m : marginal) m /= static_cast<double>(hi - lo);
    double kl = 0.0;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t y = 0; y < c; ++y) {
        const double p = conditionals[i][y];
        if (p > 0.0) kl += p * (std::log(p + kLogEps) - std::log(marginal[y] + kLogEps));
      }
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  InceptionScore out;
  out.n_splits = n_splits;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - out.mean) * (s - out.mean);
  out.std = std::sqrt(var / static_cast<double>(scores.size()));
  return out;
}

int auto_splits(std::size_t n_images, int n_classes, int requested) {
  if (requested < 1) throw MetricsError("requested splits must be at least 1");
  if (n_images == 0) throw MetricsError("no images to split");
  const auto per = static_cast<std::size_t>(std::max(1, n_classes));
  const auto fit = static_cast<int>(std::min<std::size_t>(n_images / per, static_cast<std::size_t>(requested)));
  return std::max(1, fit);
}

// --------------------------------------------------------------- classifier

int scene_classes(int max_objects) { return 1 + static_cast<int>(synth::all_shapes().size()) * max_objects; }

int scene_label(const synth::SceneSpec& spec, int max_objects) {
  const int total = spec.total();
  if (total == 0) return 0;
  if (total > max_objects) throw MetricsError("scene holds more than " + std::to_string(max_objects) + " objects");
  int best = 0, best_n = -1;
  const auto& shapes = synth::all_shapes();
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    if (spec.count(shapes[s]) > best_n) {
      best_n = spec.count(shapes[s]);
      best = static_cast<int>(s);
    }
  }
  return 1 + best * max_objects + (total - 1);
}

void ClassifierConfig::finalize() {
  if (channels.empty()) channels = models::default_encoder_channels(image_resolution);
  (void)models::stages_to_4x4(image_resolution);
  if (max_objects < 1 || d_hidden < 1 || batch_size < 1 || steps < 0 || !(lr > 0)) {
    throw std::invalid_argument("invalid classifier config");
  }
}

json ClassifierConfig::to_json() const {
  return json{{"image_resolution", image_resolution}, {"max_objects", max_objects}, {"channels", channels},
              {"d_hidden", d_hidden},                 {"lr", lr},                   {"batch_size", batch_size},
              {"steps", steps}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  reject_unknown(j, c.to_json(), "classifier");
  c.image_resolution = j.value("image_resolution", c.image_resolution);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.channels = j.value("channels", c.channels);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  return c;
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.finalize();
  std::mt19937_64 rng(seed);
  encoder = models::ConvEncoder(cfg_.image_resolution, cfg_.channels, cfg_.d_hidden, rng, 0.0);
  out = Linear(cfg_.d_hidden, n_classes(), rng, true, 0.02);
  opt_ = Adam(nn::tensors_of(parameters()), AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
}

ParamList ClassifierModel::parameters() const {
  ParamList p;
  encoder.collect(p, "encoder");
  out.collect(p, "out");
  return p;
}

Tensor ClassifierModel::logits(const Tensor& images) const {
  return out.forward(nn::leaky_relu(encoder.forward(images)));
}

std::vector<std::vector<double>> ClassifierModel::predict(std::span<const Image> images) const {
  NoGradGuard guard;
  std::vector<std::vector<double>> rows;
  const int c = n_classes();
  for (std::size_t start = 0; start < images.size(); start += 64) {
    const std::size_t end = std::min(images.size(), start + 64);
    for (std::size_t i = start; i < end; ++i) check_resolution(images[i], cfg_.image_resolution, "classifier");
    const Tensor lp = nn::log_softmax(logits(to_batch(images.subspan(start, end - start))));
    for (std::size_t i = 0; i < end - start; ++i) {
      std::vector<double> row(static_cast<std::size_t>(c));
      for (int y = 0; y < c; ++y) row[static_cast<std::size_t>(y)] = std::exp(lp.at(i * static_cast<std::size_t>(c) + static_cast<std::size_t>(y)));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

double ClassifierModel::train_step(std::span<const LabeledImage> batch) {
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  for (const auto& li : batch) {
    check_resolution(*li.image, cfg_.image_resolution, "classifier");
    if (li.label < 0 || li.label >= n_classes()) throw MetricsError("classifier label out of range");
    imgs.push_back(li.image);
    labels.push_back(li.label);
  }
  opt_.zero_grad();
  const Tensor l = nn::cross_entropy(logits(to_batch(std::span<const Image* const>(imgs))), labels);
  if (!std::isfinite(l.item())) throw MetricsError("non-finite classifier loss at step " + std::to_string(step_ + 1));
  l.backward();
  opt_.step();
  ++step_;
  return l.item();
}

double ClassifierModel::accuracy(std::span<const LabeledImage> data) const {
  if (data.empty()) throw MetricsError("classifier accuracy over no images");
  std::vector<Image> imgs;
  for (const auto& li : data) imgs.push_back(*li.image);
  const auto probs = predict(imgs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = probs[i];
    ok += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == data[i].label;
  }
  return 100.0 * static_cast<double>(ok) / static_cast<double>(data.size());
}

void ClassifierModel::save(const std::filesystem::path& dir) const {
  ckpt::save(dir, "classifier", cfg_.to_json(), parameters(), step_, seed_);
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& dir) {
  const auto m = ckpt::read_manifest(dir);
  ClassifierModel c(ClassifierConfig::from_json(m.config), m.seed);
  ckpt::load_into(dir, "classifier", c.parameters());
  c.step_ = m.step;
  return c;
}

std::vector<LabeledImage> classifier_data(std::span<const synth::SynthExample> examples, int max_objects) {
  std::vector<LabeledImage> out;
  for (const auto& ex : examples) {
    if (!ex.first_spec || !ex.target_spec) throw MetricsError("example '" + ex.identifier + "' has no scene specs");
    out.push_back({&ex.image1, scene_label(*ex.first_spec, max_objects)});
    out.push_back({&ex.image2_gold, scene_label(*ex.target_spec, max_objects)});
  }
  return out;
}

ClassifierModel train_classifier(std::span<const LabeledImage> data, ClassifierConfig cfg, std::uint64_t seed) {
  if (data.empty()) throw MetricsError("classifier training data is empty");
  ClassifierModel clf(std::move(cfg), seed);
  BatchSampler sampler(data.size(), clf.config().batch_size, seed ^ 0x5bd1e995ULL);
  std::vector<LabeledImage> batch;
  for (int s = 0; s < clf.config().steps; ++s) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(data[i]);
    clf.train_step(batch);
  }
  return clf;
}

InceptionScore inception_score(std::span<const Image> images, const ClassifierModel& clf, int n_splits) {
  if (images.empty()) throw MetricsError("inception_score: no images");
  const auto probs = clf.predict(images);
  return inception_score(probs, n_splits);
}

// ----------------------------------------------------------------- verifier

void VerifierConfig::finalize() {
  if (channels.empty()) channels = models::default_encoder_channels(image_resolution);
  (void)models::stages_to_4x4(image_resolution);
  if (d_img < 1 || d_word < 1 || d_txt < 1 || d_hidden < 1 || max_text_len < 1 || batch_size < 1 || steps < 0 ||
      !(lr > 0)) {
    throw std::invalid_argument("invalid verifier config");
  }
}

json VerifierConfig::to_json() const {
  return json{{"image_resolution", image_resolution}, {"channels", channels}, {"d_img", d_img},
              {"d_word", d_word},   {"d_txt", d_txt},     {"d_hidden", d_hidden},
              {"max_text_len", max_text_len}, {"lr", lr}, {"batch_size", batch_size},
              {"steps", steps}};
}

VerifierConfig VerifierConfig::from_json(const json& j) {
  VerifierConfig c;
  reject_unknown(j, c.to_json(), "verifier");
  c.image_resolution = j.value("image_resolution", c.image_resolution);
  c.channels = j.value("channels", c.channels);
  c.d_img = j.value("d_img", c.d_img);
  c.d_word = j.value("d_word", c.d_word);
  c.d_txt = j.value("d_txt", c.d_txt);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  return c;
}

Verifier::Verifier(VerifierConfig cfg, text::Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), seed_(seed) {
  cfg_.finalize();
  std::mt19937_64 rng(seed);
  image_encoder = models::ConvEncoder(cfg_.image_resolution, cfg_.channels, cfg_.d_img, rng, 0.0);
  text_encoder = models::TextEncoder(vocab_.size(), cfg_.d_word, cfg_.d_txt, rng);
  hidden = Linear(cfg_.d_txt + 2 * cfg_.d_img, cfg_.d_hidden, rng, true, 0.05);
  out = Linear(cfg_.d_hidden, 1, rng, true, 0.05);
  opt_ = Adam(nn::tensors_of(parameters()), AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
}

ParamList Verifier::parameters() const {
  ParamList p;
  image_encoder.collect(p, "image_encoder");
  text_encoder.collect(p, "text_encoder");
  hidden.collect(p, "hidden");
  out.collect(p, "out");
  return p;
}

Tensor Verifier::logits(const std::vector<const Triple*>& batch) const {
  if (batch.empty()) throw MetricsError("verifier: empty batch");
  std::vector<std::vector<int>> seqs;
  std::vector<const Image*> first, second;
  for (const Triple* t : batch) {
    auto ids = vocab_.encode(t->caption);
    if (ids.empty()) throw MetricsError("verifier: caption '" + t->caption + "' has no tokens");
    if (static_cast<int>(ids.size()) > cfg_.max_text_len) ids.resize(static_cast<std::size_t>(cfg_.max_text_len));
    seqs.push_back(std::move(ids));
    check_resolution(*t->image1, cfg_.image_resolution, "verifier image1");
    check_resolution(*t->image2, cfg_.image_resolution, "verifier image2");
    first.push_back(t->image1);
    second.push_back(t->image2);
  }
  const Tensor txt = text_encoder.forward(text::make_batch(seqs));
  const Tensor e1 = image_encoder.forward(to_batch(std::span<const Image* const>(first)));
  const Tensor e2 = image_encoder.forward(to_batch(std::span<const Image* const>(second)));
  return out.forward(nn::leaky_relu(hidden.forward(nn::concat({txt, e1, e2}))));
}

std::vector<double> Verifier::probabilities(std::span<const Triple> triples) const {
  NoGradGuard guard;
  std::vector<double> out;
  for (std::size_t start = 0; start < triples.size(); start += 64) {
    std::vector<const Triple*> batch;
    for (std::size_t i = start; i < std::min(triples.size(), start + 64); ++i) batch.push_back(&triples[i]);
    const Tensor l = logits(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(1.0 / (1.0 + std::exp(-l.at(i))));
  }
  return out;
}

void Verifier::set_lr(double lr) { opt_.set_lr(lr); }

double Verifier::train_step(const std::vector<const Triple*>& batch) {
  std::vector<double> targets;
  for (const Triple* t : batch) targets.push_back(t->label ? 1.0 : 0.0);
  opt_.zero_grad();
  const Tensor l = nn::bce_with_logits(logits(batch), targets);
  if (!std::isfinite(l.item())) throw MetricsError("non-finite verifier loss at step " + std::to_string(step_ + 1));
  l.backward();
  opt_.step();
  ++step_;
  return l.item();
}

double Verifier::accuracy(std::span<const Triple> triples) const {
  if (triples.empty()) throw MetricsError("verifier accuracy over no examples");
  const auto p = probabilities(triples);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < triples.size(); ++i) ok += (p[i] >= 0.5) == triples[i].label;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(triples.size());
}

void Verifier::save(const std::filesystem::path& dir) const {
  ckpt::save(dir, "verifier", cfg_.to_json(), parameters(), step_, seed_, json{{"vocab", vocab_.to_json()}});
  vocab_.save(dir / "vocab.json");
}

Verifier Verifier::load(const std::filesystem::path& dir) {
  const auto m = ckpt::read_manifest(dir);
  Verifier v(VerifierConfig::from_json(m.config), text::Vocabulary::from_json(m.extra.at("vocab")), m.seed);
  ckpt::load_into(dir, "verifier", v.parameters());
  v.step_ = m.step;
  return v;
}

synth::ShapeClass caption_shape(const std::string& caption) {
  for (const auto& tok : text::tokenize(caption)) {
    for (auto s : synth::all_shapes()) {
      const std::string name = synth::to_string(s);
      if (tok == name || tok == name + "s") return s;
    }
  }
  throw MetricsError("caption '" + caption + "' names no shape class");
}

bool second_image_satisfies(const synth::SynthExample& ex, const synth::SceneSpec& candidate) {
  if (!ex.target_spec) throw MetricsError("example '" + ex.identifier + "' has no target spec");
  if (!synth::is_cross_image(ex.template_id)) {
    throw MetricsError("example '" + ex.identifier + "' is not a cross-image template");
  }
  // Given the first image, both cross-image templates pin the second image's
  // count of the named shape; other shapes are irrelevant to the caption.
  const auto shape = caption_shape(ex.caption);
  return candidate.count(shape) == ex.target_spec->count(shape);
}

std::vector<Triple> verifier_triples(std::span<const synth::SynthExample> examples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Triple> out;
  if (examples.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  std::vector<synth::ShapeClass> shapes;
  for (const auto& ex : examples) shapes.push_back(caption_shape(ex.caption));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    out.push_back({ex.caption, &ex.image1, &ex.image2_gold, true});
    const bool want_same_shape = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    std::size_t fallback = examples.size(), chosen = examples.size();
    for (int attempt = 0; attempt < 64 && chosen == examples.size(); ++attempt) {
      const std::size_t j = pick(rng);
      if (j == i || second_image_satisfies(ex, *examples[j].target_spec)) continue;
      const bool same = examples[j].target_spec->count(shapes[i]) > 0;
      if (same == want_same_shape) {
        chosen = j;
      } else if (fallback == examples.size()) {
        fallback = j;
      }
    }
    if (chosen == examples.size()) chosen = fallback;
    if (chosen != examples.size()) out.push_back({ex.caption, &ex.image1, &examples[chosen].image2_gold, false});
  }
  return out;
}

Verifier finetune_verifier(std::span<const Triple> train, VerifierConfig cfg, std::uint64_t seed) {
  const auto positives = std::count_if(train.begin(), train.end(), [](const Triple& t) { return t.label; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(train.size())) {
    throw MetricsError("verifier training data holds a single class");
  }
  std::vector<std::string> texts;
  for (const auto& t : train) texts.push_back(t.caption);
  Verifier v(std::move(cfg), text::Vocabulary::build(texts), seed);
  BatchSampler sampler(train.size(), v.config().batch_size, seed ^ 0x27d4eb2f165667c5ULL);
  std::vector<const Triple*> batch;
  const int steps = v.config().steps;
  for (int s = 0; s < steps; ++s) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(&train[i]);
    v.set_lr(v.config().lr * (1.0 - static_cast<double>(s) / steps));
    v.train_step(batch);
  }
  return v;
}

VerifierScores verifier_scores(std::span<const std::string> captions, std::span<const char> accepted) {
  if (captions.empty()) throw MetricsError("verifier_scores: no examples");
  if (captions.size() != accepted.size()) throw MetricsError("verifier_scores: caption and prediction counts differ");
  std::map<std::string, bool> groups;
  std::size_t yes = 0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    yes += accepted[i] != 0;
    auto [it, inserted] = groups.emplace(captions[i], true);
    it->second = it->second && accepted[i] != 0;
  }
  std::size_t all_yes = 0;
  for (const auto& [caption, ok] : groups) all_yes += ok;
  VerifierScores s;
  s.n_pairs = captions.size();
  s.n_groups = groups.size();
  s.accuracy = 100.0 * static_cast<double>(yes) / static_cast<double>(s.n_pairs);
  s.consistency = 100.0 * static_cast<double>(all_yes) / static_cast<double>(s.n_groups);
  return s;
}

VerifierScores verifier_scores(std::span<const Triple> triples, const Verifier& v) {
  if (triples.empty()) throw MetricsError("verifier_scores: no examples");
  const auto p = v.probabilities(triples);
  std::vector<std::string> captions;
  std::vector<char> accepted;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    captions.push_back(triples[i].caption);
    accepted.push_back(p[i] >= 0.5 ? 1 : 0);
  }
  return verifier_scores(captions, accepted);
}

// ------------------------------------------------------------------- report

json MetricReport::to_json() const {
  return json{{"model_tag", model_tag},
              {"inception_mean", inception_mean},
              {"inception_std", inception_std},
              {"inception_splits", inception_splits},
              {"verifier_accuracy", verifier_accuracy},
              {"verifier_consistency", verifier_consistency},
              {"n_examples", n_examples}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.model_tag = j.at("model_tag").get<std::string>();
  r.inception_mean = j.at("inception_mean").get<double>();
  r.inception_std = j.at("inception_std").get<double>();
  r.inception_splits = j.at("inception_splits").get<int>();
  r.verifier_accuracy = j.at("verifier_accuracy").get<double>();
  r.verifier_consistency = j.at("verifier_consistency").get<double>();
  r.n_examples = j.at("n_examples").get<std::size_t>();
  return r;
}

std::string MetricReport::dump() const { return to_json().dump(2) + "\n"; }

ImageSource gold_source() {
  return [](const synth::SynthExample& ex, std::size_t) { return ex.image2_gold; };
}

ImageSource noise_source(std::uint64_t seed) {
  return [seed](const synth::SynthExample& ex, std::size_t index) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (index + 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img = Image::filled(ex.image1.height, ex.image1.width, {0.0, 0.0, 0.0});
    for (double& p : img.pixels) p = u(rng);
    return img;
  };
}

MetricReport evaluate_generations(const std::string& model_tag, const ImageSource& source,
                                  std::span<const synth::SynthExample> eval_set, const Verifier& v,
                                  const ClassifierModel& clf, const EvalOptions& opts) {
  if (eval_set.empty()) throw MetricsError("evaluate_generations: empty eval set");
  std::vector<Image> generated;
  generated.reserve(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const auto& ex = eval_set[i];
    try {
      Image img = source(ex, i);
      check_resolution(img, v.config().image_resolution, "generated image");
      generated.push_back(std::move(img));
    } catch (const std::exception& e) {
      throw MetricsError("example '" + ex.identifier + "': " + e.what());
    }
  }
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < eval_set.size(); ++i) triples.push_back({eval_set[i].caption, &eval_set[i].image1, &generated[i], true});
  const VerifierScores vs = verifier_scores(triples, v);
  const InceptionScore is =
      inception_score(std::span<const Image>(generated), clf, auto_splits(generated.size(), clf.n_classes(), opts.n_splits));

  if (!opts.cache_dir.empty()) {
    std::filesystem::create_directories(opts.cache_dir);
    json manifest = json::object();
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      const std::string file = eval_set[i].identifier + ".png";
      write_png(generated[i], opts.cache_dir / file);
      manifest[eval_set[i].identifier] = file;
    }
    std::ofstream(opts.cache_dir / "manifest.json") << json{{"model_tag", model_tag}, {"images", manifest}}.dump(2) << "\n";
  }

  MetricReport r;
  r.model_tag = model_tag;
  r.inception_mean = is.mean;
  r.inception_std = is.std;
  r.inception_splits = is.n_splits;
  r.verifier_accuracy = vs.accuracy;
  r.verifier_consistency = vs.consistency;
  r.n_examples = eval_set.size();
  return r;
}

}  // namespace cigli::metrics
