#include "cigli/captionpipe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cigli/checkpoint.hpp"

namespace cigli::caption {

using nlohmann::json;
using namespace nn;

namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(StepDecoder& dec, int beam_size, int n_best, int max_len) {
  if (n_best < 1) throw CaptionError("n_captions must be at least 1");
  if (beam_size < n_best) {
    throw CaptionError("beam_size " + std::to_string(beam_size) + " is smaller than n_captions " + std::to_string(n_best));
  }
  if (max_len < 1) throw CaptionError("max_len must be at least 1");
  const int eos = dec.eos();
  std::vector<Hypothesis> beams{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int t = 0; t < max_len && !beams.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : beams) prefixes.push_back(h.tokens);
    const auto lp = dec.next_logprobs(prefixes);
    std::vector<Hypothesis> cand;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      for (int v = 0; v < dec.vocab_size(); ++v) {
        const double l = lp[i][static_cast<std::size_t>(v)];
        if (!std::isfinite(l)) continue;
        Hypothesis h{beams[i].tokens, beams[i].logprob + l};
        h.tokens.push_back(v);
        cand.push_back(std::move(h));
      }
    }
    const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(beam_size));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
    beams.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      if (cand[i].tokens.back() == eos || static_cast<int>(cand[i].tokens.size()) == max_len) {
        finished.push_back(std::move(cand[i]));
      } else {
        beams.push_back(std::move(cand[i]));
      }
    }
  }
  std::sort(finished.begin(), finished.end(), better);
  if (static_cast<int>(finished.size()) > n_best) finished.resize(static_cast<std::size_t>(n_best));
  return finished;
}

Hypothesis greedy_decode(StepDecoder& dec, int max_len) {
  Hypothesis h;
  for (int t = 0; t < max_len; ++t) {
    const auto lp = dec.next_logprobs({h.tokens}).front();
    int best = -1;
    for (int v = 0; v < dec.vocab_size(); ++v) {
      if (!std::isfinite(lp[static_cast<std::size_t>(v)])) continue;
      if (best < 0 || lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;
    }
    if (best < 0) throw CaptionError("decoder assigns zero probability to every token");
    h.tokens.push_back(best);
    h.logprob += lp[static_cast<std::size_t>(best)];
    if (best == dec.eos()) break;
  }
  return h;
}

std::string concat_captions(const std::string& original, std::span<const Caption> generated, int max_tokens) {
  if (original.empty()) throw CaptionError("concat_captions: original caption is empty");
  if (max_tokens < 1) throw CaptionError("concat_captions: max_tokens must be positive");
  if (generated.empty()) return original;
  auto join = [](const std::vector<std::string>& toks) {
    std::string s;
    for (const auto& t : toks) s += (s.empty() ? "" : " ") + t;
    return s;
  };
  const auto orig = text::tokenize(original);
  if (static_cast<int>(orig.size()) >= max_tokens) {
    return join(std::vector<std::string>(orig.begin(), orig.begin() + max_tokens));
  }
  std::string out = original;
  int used = static_cast<int>(orig.size());
  for (const auto& c : generated) {
    const auto toks = text::tokenize(c.text);
    if (used + 2 > max_tokens) break;  // room for the separator and at least one token
    out += std::string(" ") + text::kSepSurface;
    ++used;
    for (const auto& t : toks) {
      if (used == max_tokens) break;
      out += " " + t;
      ++used;
    }
  }
  return out;
}

namespace {

std::string colour_name(synth::ShapeClass s) {
  switch (s) {
    case synth::ShapeClass::circle: return "red";
    case synth::ShapeClass::square: return "blue";
    case synth::ShapeClass::triangle: return "green";
  }
  return "";
}

}  // namespace

int describe_variants() { return 3; }

std::string describe_scene(const synth::SceneSpec& spec, int variant) {
  variant = ((variant % describe_variants()) + describe_variants()) % describe_variants();
  std::vector<synth::ShapeClass> present;
  for (auto s : synth::all_shapes())
    if (spec.count(s) > 0) present.push_back(s);
  if (present.empty()) {
    static const char* empty[] = {"a plain gray background", "an empty gray canvas", "nothing on a gray background"};
    return empty[variant];
  }
  std::string things, coloured;
  for (std::size_t i = 0; i < present.size(); ++i) {
    const std::string sep = i == 0 ? "" : " and ";
    things += sep + colour_name(present[i]) + " " + synth::to_string(present[i]) + " shapes";
    coloured += sep + synth::to_string(present[i]) + " shapes in " + colour_name(present[i]);
  }
  switch (variant) {
    case 0: return things + " on a gray background";
    case 1: return "a gray background with " + things;
    default: return coloured + " on a gray canvas";
  }
}

void CaptionerConfig::finalize() {
  if (enc_channels.empty()) enc_channels = models::default_encoder_channels(image_resolution);
  if (d_feat < 1 || d_word < 1 || d_hidden < 1) throw std::invalid_argument("captioner dimensions must be positive");
  if (batch_size < 1 || epochs < 0 || max_len < 1 || lr <= 0) throw std::invalid_argument("invalid captioner training settings");
  (void)models::stages_to_4x4(image_resolution);
}

json CaptionerConfig::to_json() const {
  return json{{"image_resolution", image_resolution}, {"d_feat", d_feat}, {"d_word", d_word},
              {"d_hidden", d_hidden},                 {"enc_channels", enc_channels}, {"lr", lr},
              {"batch_size", batch_size},             {"epochs", epochs},           {"max_len", max_len}};
}

CaptionerConfig CaptionerConfig::from_json(const json& j) {
  CaptionerConfig c;
  const json known = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("unknown captioner config key '" + it.key() + "'");
  c.image_resolution = j.value("image_resolution", c.image_resolution);
  c.d_feat = j.value("d_feat", c.d_feat);
  c.d_word = j.value("d_word", c.d_word);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.max_len = j.value("max_len", c.max_len);
  return c;
}

Captioner::Captioner(CaptionerConfig cfg, text::Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), seed_(seed) {
  cfg_.finalize();
  std::mt19937_64 rng(seed);
  encoder = models::ConvEncoder(cfg_.image_resolution, cfg_.enc_channels, cfg_.d_feat, rng, 0.0);
  init_h = Linear(cfg_.d_feat, cfg_.d_hidden, rng, true, 0.1);
  embedding = normal_param({vocab_.size(), cfg_.d_word}, 0.1, rng);
  lstm = Lstm(cfg_.d_word + cfg_.d_feat, cfg_.d_hidden, rng, 0.1);
  out = Linear(cfg_.d_hidden, vocab_.size(), rng, true, 0.1);
  opt_ = Adam(tensors_of(parameters()), AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
}

ParamList Captioner::parameters() const {
  ParamList p;
  encoder.collect(p, "encoder");
  init_h.collect(p, "init_h");
  p.push_back({"embedding", embedding});
  lstm.collect(p, "lstm");
  out.collect(p, "out");
  return p;
}

Tensor Captioner::features(const Tensor& images) const { return encoder.forward(images); }

std::vector<double> Captioner::extract_features(const Image& img) const {
  if (!img.valid()) throw CaptionError("extract_features: invalid image");
  if (img.height != cfg_.image_resolution || img.width != cfg_.image_resolution) {
    throw CaptionError("extract_features: expected a " + std::to_string(cfg_.image_resolution) + "x" +
                       std::to_string(cfg_.image_resolution) + " image, got " + std::to_string(img.height) + "x" +
                       std::to_string(img.width));
  }
  NoGradGuard guard;
  const Tensor f = features(to_batch(std::span<const Image>(&img, 1)));
  return {f.data().begin(), f.data().end()};
}

Tensor Captioner::loss(const std::vector<const CaptionPair*>& batch) const {
  const int b = static_cast<int>(batch.size());
  std::vector<const Image*> imgs;
  std::vector<std::vector<int>> targets;
  int t_max = 0;
  for (const auto* p : batch) {
    imgs.push_back(&p->image);
    auto ids = vocab_.encode(p->text);
    if (static_cast<int>(ids.size()) >= cfg_.max_len) ids.resize(static_cast<std::size_t>(cfg_.max_len - 1));
    ids.push_back(text::kEos);
    t_max = std::max(t_max, static_cast<int>(ids.size()));
    targets.push_back(std::move(ids));
  }
  const Tensor feat = features(to_batch(std::span<const Image* const>(imgs)));
  Lstm::State s{tanh(init_h.forward(feat)), Tensor::zeros({b, cfg_.d_hidden})};
  int total = 0;
  for (const auto& t : targets) total += static_cast<int>(t.size());
  Tensor acc;
  for (int t = 0; t < t_max; ++t) {
    std::vector<int> in(static_cast<std::size_t>(b)), tgt(static_cast<std::size_t>(b));
    int count = 0;
    for (int i = 0; i < b; ++i) {
      const auto& seq = targets[static_cast<std::size_t>(i)];
      in[static_cast<std::size_t>(i)] = t == 0 ? text::kBos : (t - 1 < static_cast<int>(seq.size()) ? seq[static_cast<std::size_t>(t - 1)] : text::kPad);
      tgt[static_cast<std::size_t>(i)] = t < static_cast<int>(seq.size()) ? seq[static_cast<std::size_t>(t)] : -1;
      count += tgt[static_cast<std::size_t>(i)] >= 0;
    }
    s = lstm.step(concat({nn::embedding(embedding, in), feat}), s);
    if (count == 0) continue;
    Tensor l = scale(cross_entropy(out.forward(s.h), tgt, -1), static_cast<double>(count) / total);
    acc = acc.defined() ? add(acc, l) : l;
  }
  return acc;
}

double Captioner::train_epoch(const std::vector<CaptionPair>& data, std::mt19937_64& rng) {
  if (data.empty()) throw CaptionError("captioner training data is empty");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  double sum = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
    std::vector<const CaptionPair*> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size)); ++i)
      batch.push_back(&data[order[i]]);
    opt_.zero_grad();
    Tensor l = loss(batch);
    if (!std::isfinite(l.item())) throw CaptionError("non-finite captioner loss at step " + std::to_string(step_ + 1));
    l.backward();
    opt_.step();
    ++step_;
    sum += l.item();
    ++batches;
  }
  opt_.zero_grad();
  return sum / batches;
}

// Incremental LSTM decoding over a fixed image; states cached per prefix.
class CaptionerDecoder : public StepDecoder {
 public:
  CaptionerDecoder(const Captioner& c, const Image& img) : c_(c) {
    NoGradGuard guard;
    const Tensor feat = c.features(to_batch(std::span<const Image>(&img, 1)));
    root_ = {tanh(c.init_h.forward(feat)), Tensor::zeros({1, c.cfg_.d_hidden})};
    feat_ = feat;
  }
  int vocab_size() const override { return c_.vocab_.size(); }
  int eos() const override { return text::kEos; }

  std::vector<std::vector<double>> next_logprobs(const std::vector<std::vector<int>>& prefixes) override {
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      const Tensor lp = log_softmax(c_.out.forward(state(p).h));
      std::vector<double> row(lp.data().begin(), lp.data().end());
      for (int special : {text::kPad, text::kBos, text::kUnk, text::kSep}) row[static_cast<std::size_t>(special)] = kNegInf;
      out.push_back(std::move(row));
    }
    return out;
  }

 private:
  // State after consuming BOS followed by `prefix`.
  const Lstm::State& state(const std::vector<int>& prefix) {
    if (auto it = cache_.find(prefix); it != cache_.end()) return it->second;
    Lstm::State prev;
    int input = text::kBos;
    if (prefix.empty()) {
      prev = root_;
    } else {
      prev = state(std::vector<int>(prefix.begin(), prefix.end() - 1));
      input = prefix.back();
    }
    const std::vector<int> in{input};
    return cache_.emplace(prefix, c_.lstm.step(concat({nn::embedding(c_.embedding, in), feat_}), prev)).first->second;
  }

  const Captioner& c_;
  Lstm::State root_;
  Tensor feat_;
  std::map<std::vector<int>, Lstm::State> cache_;
};

namespace {

Caption to_caption(const Hypothesis& h, const text::Vocabulary& v) { return Caption{h.tokens, v.decode(h.tokens), h.logprob}; }

}  // namespace

std::vector<Caption> Captioner::beam_caption(const Image& img, int beam_size, int n_captions) const {
  if (!trained()) throw CaptionError("no trained captioner loaded");
  if (beam_size < n_captions) {
    throw CaptionError("beam_size " + std::to_string(beam_size) + " is smaller than n_captions " + std::to_string(n_captions));
  }
  (void)extract_features(img);  // shape validation
  CaptionerDecoder dec(*this, img);
  std::vector<Caption> out;
  for (const auto& h : beam_search(dec, beam_size, n_captions, cfg_.max_len)) out.push_back(to_caption(h, vocab_));
  return out;
}

Caption Captioner::greedy_caption(const Image& img) const {
  if (!trained()) throw CaptionError("no trained captioner loaded");
  (void)extract_features(img);
  CaptionerDecoder dec(*this, img);
  return to_caption(greedy_decode(dec, cfg_.max_len), vocab_);
}

void Captioner::save(const std::filesystem::path& dir) const {
  ckpt::save(dir, "captioner", cfg_.to_json(), parameters(), step_, seed_, json{{"vocab", vocab_.to_json()}});
  vocab_.save(dir / "vocab.json");
}

Captioner Captioner::load(const std::filesystem::path& dir) {
  const auto m = ckpt::read_manifest(dir);
  Captioner c(CaptionerConfig::from_json(m.config), text::Vocabulary::from_json(m.extra.at("vocab")), m.seed);
  ckpt::load_into(dir, "captioner", c.parameters());
  c.step_ = m.step;
  return c;
}

std::vector<CaptionPair> captioner_pairs(std::span<const synth::SynthExample> examples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> variant(0, describe_variants() - 1);
  std::vector<CaptionPair> out;
  for (const auto& ex : examples) {
    if (!ex.first_spec || !ex.target_spec) throw CaptionError("example '" + ex.identifier + "' has no scene specs");
    out.push_back({ex.image1, describe_scene(*ex.first_spec, variant(rng))});
    out.push_back({ex.image2_gold, describe_scene(*ex.target_spec, variant(rng))});
  }
  return out;
}

Captioner train_captioner(const std::vector<CaptionPair>& data, CaptionerConfig cfg, std::uint64_t seed) {
  if (data.empty()) throw CaptionError("captioner training data is empty");
  std::vector<std::string> texts;
  for (const auto& p : data) texts.push_back(p.text);
  Captioner c(std::move(cfg), text::Vocabulary::build(texts), seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int e = 0; e < c.config().epochs; ++e) c.train_epoch(data, rng);
  return c;
}

}  // namespace cigli::caption
