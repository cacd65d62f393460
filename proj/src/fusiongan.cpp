#include "cigli/fusiongan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cigli/checkpoint.hpp"
#include "cigli/synthscenes.hpp"

namespace cigli::fusion {

using nlohmann::json;
using namespace nn;

namespace {

// Fan-in scaled std for leaky-ReLU layers when init_std <= 0.
double init_or_he(double init_std, int fan_in) { return init_std > 0 ? init_std : std::sqrt(2.0 / fan_in); }

}  // namespace

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::text_only: return "text_only";
    case FusionMode::concat: return "concat";
    case FusionMode::sum: return "sum";
  }
  return "concat";
}

FusionMode parse_mode(const std::string& s) {
  if (s == "text_only") return FusionMode::text_only;
  if (s == "concat") return FusionMode::concat;
  if (s == "sum") return FusionMode::sum;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected text_only, concat or sum)");
}

FusionConfig FusionConfig::desk() {
  FusionConfig c;
  c.batch_size = 16;
  c.epochs = 30;
  return c;
}

FusionConfig FusionConfig::small() {
  FusionConfig c = desk();
  c.image_resolution = 32;
  c.d_txt = c.d_img = c.d_fuse = 64;
  c.init_std = 0.0;
  const double bg = synth::background_color()[0];
  c.rgb_bias_init = std::log(bg / (1.0 - bg));
  c.epochs = 12;
  return c;
}

int FusionConfig::condition_dim() const {
  switch (mode) {
    case FusionMode::text_only: return d_txt;
    case FusionMode::concat: return d_txt + d_img;
    case FusionMode::sum: return d_fuse;
  }
  return d_txt;
}

std::vector<int> default_gen_channels(int resolution) {
  const int blocks = models::stages_to_4x4(resolution);
  std::vector<int> ch{64};
  for (int b = 0; b < blocks; ++b) ch.push_back(std::max(16, 64 >> std::max(0, b)));
  return ch;
}

std::vector<int> default_disc_channels(int resolution) { return models::default_encoder_channels(resolution); }

void FusionConfig::finalize() {
  if (image_resolution >= 4 && (image_resolution & (image_resolution - 1)) == 0) {
    if (gen_channels.empty()) gen_channels = default_gen_channels(image_resolution);
    if (disc_channels.empty()) disc_channels = default_disc_channels(image_resolution);
    if (enc_channels.empty()) enc_channels = default_disc_channels(image_resolution);
  }
  validate();
}

void FusionConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid fusion config: " + m); };
  if (image_resolution < 32 || (image_resolution & (image_resolution - 1)) != 0)
    fail("image_resolution must be a power of two >= 32");
  if (d_txt <= 0 || d_img <= 0 || d_word <= 0 || noise_dim <= 0 || mod_hidden <= 0) fail("dimensions must be positive");
  if (mode == FusionMode::sum && d_fuse <= 0) fail("sum mode needs d_fuse");
  const auto stages = static_cast<std::size_t>(models::stages_to_4x4(image_resolution));
  if (gen_channels.size() != stages + 1) fail("gen_channels needs " + std::to_string(stages + 1) + " entries");
  if (disc_channels.size() != stages + 1) fail("disc_channels needs " + std::to_string(stages + 1) + " entries");
  if (enc_channels.size() != stages + 1) fail("enc_channels needs " + std::to_string(stages + 1) + " entries");
  for (const auto* v : {&gen_channels, &disc_channels, &enc_channels})
    for (int c : *v)
      if (c <= 0) fail("channel counts must be positive");
  if (lr_g <= 0 || lr_d <= 0) fail("learning rates must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must lie in [0, 1)");
  if (batch_size < 2) fail("batch_size must be at least 2 (mismatched conditions need a shuffle)");
  if (epochs < 0) fail("epochs must be non-negative");
  if (max_text_len < 1) fail("max_text_len must be positive");
  if (!std::isfinite(init_std) || !std::isfinite(rgb_bias_init)) fail("init values must be finite");
}

json FusionConfig::to_json() const {
  return json{{"mode", to_string(mode)},
              {"d_txt", d_txt},
              {"d_img", d_img},
              {"d_fuse", d_fuse},
              {"d_word", d_word},
              {"noise_dim", noise_dim},
              {"image_resolution", image_resolution},
              {"gen_channels", gen_channels},
              {"disc_channels", disc_channels},
              {"enc_channels", enc_channels},
              {"mod_hidden", mod_hidden},
              {"lr_g", lr_g},
              {"lr_d", lr_d},
              {"beta1", beta1},
              {"beta2", beta2},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"max_text_len", max_text_len},
              {"gradient_penalty", gradient_penalty},
              {"gp_weight", gp_weight},
              {"init_std", init_std},
              {"rgb_bias_init", rgb_bias_init}};
}

FusionConfig FusionConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("fusion config must be a JSON object");
  FusionConfig c;
  const json known = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("unknown fusion config key '" + it.key() + "'");
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("d_txt", c.d_txt);
  get("d_img", c.d_img);
  get("d_fuse", c.d_fuse);
  get("d_word", c.d_word);
  get("noise_dim", c.noise_dim);
  get("image_resolution", c.image_resolution);
  get("gen_channels", c.gen_channels);
  get("disc_channels", c.disc_channels);
  get("enc_channels", c.enc_channels);
  get("mod_hidden", c.mod_hidden);
  get("lr_g", c.lr_g);
  get("lr_d", c.lr_d);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("max_text_len", c.max_text_len);
  get("gradient_penalty", c.gradient_penalty);
  get("gp_weight", c.gp_weight);
  get("init_std", c.init_std);
  get("rgb_bias_init", c.rgb_bias_init);
  return c;
}

Fusion::Fusion(FusionMode mode_, int d_txt_, int d_img_, int d_fuse, std::mt19937_64& rng)
    : mode(mode_), d_txt(d_txt_), d_img(d_img_) {
  if (mode == FusionMode::sum) {
    proj_text = Linear(d_txt, d_fuse, rng, false);
    proj_image = Linear(d_img, d_fuse, rng, false);
  }
}

int Fusion::out_dim() const {
  switch (mode) {
    case FusionMode::text_only: return d_txt;
    case FusionMode::concat: return d_txt + d_img;
    case FusionMode::sum: return proj_text.out_features();
  }
  return d_txt;
}

Tensor Fusion::forward(const Tensor& t, const Tensor& i) const {
  if (t.rank() != 2 || t.dim(1) != d_txt) throw std::invalid_argument("fuse: text embedding must be [B," + std::to_string(d_txt) + "]");
  if (mode == FusionMode::text_only) return t;
  if (!i.defined()) throw std::invalid_argument("fuse: " + to_string(mode) + " mode needs an image embedding");
  if (i.rank() != 2 || i.dim(1) != d_img || i.dim(0) != t.dim(0))
    throw std::invalid_argument("fuse: image embedding must be [B," + std::to_string(d_img) + "]");
  if (mode == FusionMode::concat) return concat({t, i});
  return add(proj_text.forward(t), proj_image.forward(i));
}

void Fusion::collect(ParamList& out, const std::string& prefix) const {
  if (mode != FusionMode::sum) return;
  proj_text.collect(out, prefix + ".proj_text");
  proj_image.collect(out, prefix + ".proj_image");
}

GenBlock::GenBlock(int c_in, int c_out, int cond_dim, int mod_hidden, std::mt19937_64& rng, double init_std)
    : conv(c_in, c_out, 3, 1, 1, rng, init_or_he(init_std, c_in * 9)),
      gamma(cond_dim, mod_hidden, c_out, rng),
      beta(cond_dim, mod_hidden, c_out, rng) {
  for (models::Mlp* m : {&gamma, &beta}) std::fill(m->l2.weight.data().begin(), m->l2.weight.data().end(), 0.0);
  std::fill(gamma.l2.bias.data().begin(), gamma.l2.bias.data().end(), 1.0);
}

Tensor GenBlock::forward(const Tensor& x, const Tensor& cond) const {
  Tensor h = conv.forward(upsample_nearest2x(x));
  return leaky_relu(modulate(h, gamma.forward(cond), beta.forward(cond)));
}

void GenBlock::collect(ParamList& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  gamma.collect(out, prefix + ".gamma");
  beta.collect(out, prefix + ".beta");
}

Generator::Generator(int noise_dim_, int cond_dim_, int resolution_, std::vector<int> channels, int mod_hidden,
                     std::mt19937_64& rng, double init_std, double rgb_bias)
    : noise_dim(noise_dim_), cond_dim(cond_dim_), resolution(resolution_) {
  const auto blocks = static_cast<std::size_t>(models::stages_to_4x4(resolution));
  if (channels.size() != blocks + 1) throw std::invalid_argument("generator channel schedule has the wrong length");
  fc = Linear(noise_dim, channels[0] * 16, rng, true, init_or_he(init_std, noise_dim));
  for (std::size_t b = 0; b < blocks; ++b)
    this->blocks.emplace_back(channels[b], channels[b + 1], cond_dim, mod_hidden, rng, init_std);
  to_rgb = Conv2d(channels.back(), 3, 3, 1, 1, rng, init_std > 0 ? init_std : std::sqrt(1.0 / (channels.back() * 9)));
  for (double& v : to_rgb.bias.data()) v = nn::to_float_grid(rgb_bias);
}

Tensor Generator::forward(const Tensor& noise, const Tensor& cond) const {
  if (noise.rank() != 2 || noise.dim(1) != noise_dim)
    throw std::invalid_argument("generate: noise must be [B," + std::to_string(noise_dim) + "], got " + shape_str(noise.shape()));
  if (cond.rank() != 2 || cond.dim(1) != cond_dim || cond.dim(0) != noise.dim(0))
    throw std::invalid_argument("generate: condition must be [B," + std::to_string(cond_dim) + "], got " + shape_str(cond.shape()));
  const int b = noise.dim(0);
  Tensor h = reshape(fc.forward(noise), {b, fc.out_features() / 16, 4, 4});
  for (const auto& blk : blocks) h = blk.forward(h, cond);
  return sigmoid(to_rgb.forward(h));
}

void Generator::collect(ParamList& out, const std::string& prefix) const {
  fc.collect(out, prefix + ".fc");
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  to_rgb.collect(out, prefix + ".to_rgb");
}

Discriminator::Discriminator(int resolution_, std::vector<int> channels, int cond_dim_, std::mt19937_64& rng,
                             double init_std)
    : resolution(resolution_), cond_dim(cond_dim_) {
  int feat = 3;
  if (channels.empty()) {
    if (resolution != 4) throw std::invalid_argument("discriminator without a downsampling stack needs 4x4 input");
  } else {
    const auto stages = static_cast<std::size_t>(models::stages_to_4x4(resolution));
    if (channels.size() != stages + 1) throw std::invalid_argument("discriminator channel schedule has the wrong length");
    down.emplace_back(3, channels[0], 3, 1, 1, rng, init_or_he(init_std, 27));
    for (std::size_t s = 0; s < stages; ++s)
      down.emplace_back(channels[s], channels[s + 1], 4, 2, 1, rng, init_or_he(init_std, channels[s] * 16));
    feat = channels.back();
  }
  joint = Conv2d(feat + cond_dim, std::max(feat, 16), 3, 1, 1, rng, init_or_he(init_std, (feat + cond_dim) * 9));
  logit = Conv2d(std::max(feat, 16), 1, 4, 1, 0, rng, init_or_he(init_std, std::max(feat, 16) * 16) / std::sqrt(2.0));
}

Tensor Discriminator::forward(const Tensor& images, const Tensor& cond) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != resolution || images.dim(3) != resolution)
    throw std::invalid_argument("discriminate: images must be [B,3," + std::to_string(resolution) + "," +
                                std::to_string(resolution) + "], got " + shape_str(images.shape()));
  if (cond.rank() != 2 || cond.dim(1) != cond_dim || cond.dim(0) != images.dim(0))
    throw std::invalid_argument("discriminate: condition must be [B," + std::to_string(cond_dim) + "]");
  Tensor h = images;
  for (const auto& c : down) h = leaky_relu(c.forward(h));
  h = concat({h, replicate_spatial(cond, 4, 4)});
  h = leaky_relu(joint.forward(h));
  return reshape(logit.forward(h), {images.dim(0), 1});
}

void Discriminator::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < down.size(); ++i) down[i].collect(out, prefix + ".down" + std::to_string(i));
  joint.collect(out, prefix + ".joint");
  logit.collect(out, prefix + ".logit");
}

Tensor d_hinge_loss(const Tensor& s_real, const Tensor& s_fake, const Tensor& s_mis) {
  Tensor real = mean(relu(add_scalar(scale(s_real, -1.0), 1.0)));
  Tensor fake = mean(relu(add_scalar(s_fake, 1.0)));
  Tensor mis = mean(relu(add_scalar(s_mis, 1.0)));
  return add(real, scale(add(fake, mis), 0.5));
}

Tensor g_hinge_loss(const Tensor& s_fake) { return scale(mean(s_fake), -1.0); }

std::vector<int> mismatch_permutation(int batch) {
  if (batch < 2) throw std::invalid_argument("mismatched conditions need a batch of at least 2, got " + std::to_string(batch));
  std::vector<int> perm(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) perm[static_cast<std::size_t>(i)] = (i + 1) % batch;
  return perm;
}

FusionModel::FusionModel(FusionConfig cfg, text::Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), seed_(seed) {
  cfg_.finalize();
  std::mt19937_64 rng(seed);
  text_encoder = models::TextEncoder(vocab_.size(), cfg_.d_word, cfg_.d_txt, rng);
  if (cfg_.mode != FusionMode::text_only)
    image_encoder = models::ConvEncoder(cfg_.image_resolution, cfg_.enc_channels, cfg_.d_img, rng, cfg_.init_std);
  fusion = Fusion(cfg_.mode, cfg_.d_txt, cfg_.d_img, cfg_.d_fuse, rng);
  generator = Generator(cfg_.noise_dim, cfg_.condition_dim(), cfg_.image_resolution, cfg_.gen_channels, cfg_.mod_hidden, rng,
                        cfg_.init_std, cfg_.rgb_bias_init);
  discriminator = Discriminator(cfg_.image_resolution, cfg_.disc_channels, cfg_.condition_dim(), rng, cfg_.init_std);
  build_optimizers();
}

void FusionModel::build_optimizers() {
  ParamList d_side;
  for (const char* g : {"text_encoder", "image_encoder", "fusion", "discriminator"}) {
    const auto p = group(g);
    d_side.insert(d_side.end(), p.begin(), p.end());
  }
  opt_d_ = Adam(tensors_of(d_side), AdamConfig{cfg_.lr_d, cfg_.beta1, cfg_.beta2, 1e-8});
  opt_g_ = Adam(tensors_of(group("generator")), AdamConfig{cfg_.lr_g, cfg_.beta1, cfg_.beta2, 1e-8});
}

ParamList FusionModel::group(const std::string& name) const {
  ParamList out;
  if (name == "text_encoder") {
    text_encoder.collect(out, "text_encoder");
  } else if (name == "image_encoder") {
    if (!image_encoder.convs.empty()) image_encoder.collect(out, "image_encoder");
  } else if (name == "fusion") {
    fusion.collect(out, "fusion");
  } else if (name == "generator") {
    generator.collect(out, "generator");
  } else if (name == "discriminator") {
    discriminator.collect(out, "discriminator");
  } else {
    throw std::invalid_argument("unknown parameter group '" + name + "'");
  }
  return out;
}

ParamList FusionModel::parameters() const {
  ParamList out;
  for (const auto& g : param_groups()) {
    const auto p = group(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

text::TokenBatch FusionModel::tokenize(const std::vector<std::string>& texts) const {
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) {
    auto ids = vocab_.encode(t);
    if (ids.empty()) throw std::invalid_argument("caption '" + t + "' has no tokens");
    if (static_cast<int>(ids.size()) > cfg_.max_text_len) ids.resize(static_cast<std::size_t>(cfg_.max_text_len));
    seqs.push_back(std::move(ids));
  }
  return text::make_batch(seqs);
}

Tensor FusionModel::encode_text(const text::TokenBatch& tokens) const { return text_encoder.forward(tokens); }

Tensor FusionModel::encode_image(const Tensor& images) const {
  if (cfg_.mode == FusionMode::text_only) throw std::logic_error("text_only model has no image encoder");
  return image_encoder.forward(images);
}

Tensor FusionModel::condition(const std::vector<std::string>& texts, const std::vector<const Image*>& image1) const {
  Tensor t = encode_text(tokenize(texts));
  if (cfg_.mode == FusionMode::text_only) return fusion.forward(t, Tensor());
  if (image1.size() != texts.size()) throw std::invalid_argument("condition: one first image per caption required");
  for (const Image* im : image1)
    if (im == nullptr) throw std::invalid_argument("condition: missing first image");
  return fusion.forward(t, encode_image(to_batch(std::span<const Image* const>(image1))));
}

Tensor FusionModel::generate(const Tensor& noise, const Tensor& cond) const { return generator.forward(noise, cond); }

Tensor FusionModel::discriminate(const Tensor& images, const Tensor& cond) const {
  return discriminator.forward(images, cond);
}

Tensor FusionModel::sample_noise(int batch, std::mt19937_64& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(batch) * static_cast<std::size_t>(cfg_.noise_dim));
  for (double& x : v) x = n(rng);
  return Tensor::from({batch, cfg_.noise_dim}, std::move(v));
}

Image FusionModel::generate_image(const std::string& text, const Image& image1, std::uint64_t noise_seed) const {
  NoGradGuard guard;
  std::mt19937_64 rng(noise_seed);
  const Tensor c = condition({text}, {&image1});
  return from_batch(generate(sample_noise(1, rng), c), 0);
}

namespace {

double finite_or_throw(double v, long step, const std::string& what, const StepRecord& rec) {
  if (!std::isfinite(v)) {
    throw TrainingError("non-finite " + what + " at step " + std::to_string(step) + " (d_loss=" +
                        std::to_string(rec.d_loss) + ", g_loss=" + std::to_string(rec.g_loss) + ")");
  }
  return v;
}

// Finite-difference estimate of E||grad_x D(x, c)||^2 using one Gaussian direction per example.
Tensor fd_gradient_penalty(const Discriminator& d, const Tensor& x, const Tensor& c, std::mt19937_64& rng) {
  constexpr double h = 1e-3;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> u(x.size());
  for (double& v : u) v = n(rng);
  const Tensor dir = Tensor::from(x.shape(), std::move(u));
  Tensor plus = d.forward(add(x, scale(dir, h)), c);
  Tensor minus = d.forward(sub(x, scale(dir, h)), c);
  Tensor slope = scale(sub(plus, minus), 1.0 / (2.0 * h));
  return mean(mul(slope, slope));
}

}  // namespace

StepRecord FusionModel::train_step(const std::vector<const TrainExample*>& batch, std::mt19937_64& rng) {
  const int b = static_cast<int>(batch.size());
  const auto perm = mismatch_permutation(b);
  std::vector<std::string> texts;
  std::vector<const Image*> first, second;
  for (const auto* ex : batch) {
    texts.push_back(ex->text);
    first.push_back(&ex->image1);
    second.push_back(&ex->image2);
  }
  const Tensor real = to_batch(std::span<const Image* const>(second));

  StepRecord rec;
  rec.step = step_ + 1;
  zero_grads(parameters());

  // Discriminator side: D, encoders and fusion.
  Tensor c = condition(texts, first);
  Tensor fake;
  {
    NoGradGuard guard;
    fake = generate(sample_noise(b, rng), c.detach());
  }
  Tensor s_real = discriminate(real, c);
  Tensor s_fake = discriminate(fake, c);
  Tensor s_mis = discriminate(real, index_rows(c, perm));
  Tensor d_loss = d_hinge_loss(s_real, s_fake, s_mis);
  if (cfg_.gradient_penalty) d_loss = add(d_loss, scale(fd_gradient_penalty(discriminator, real, c, rng), cfg_.gp_weight));
  rec.d_loss = d_loss.item();
  finite_or_throw(rec.d_loss, rec.step, "discriminator loss", rec);
  d_loss.backward();
  for (const char* g : {"text_encoder", "image_encoder", "fusion", "discriminator"}) {
    const auto p = group(g);
    if (!p.empty()) rec.grad_norms[g] = total_grad_norm(p);
  }
  opt_d_.step();

  // Generator side, with the condition held fixed.
  zero_grads(parameters());
  const Tensor cd = c.detach();
  Tensor g_loss = g_hinge_loss(discriminate(generate(sample_noise(b, rng), cd), cd));
  rec.g_loss = g_loss.item();
  finite_or_throw(rec.g_loss, rec.step, "generator loss", rec);
  g_loss.backward();
  rec.grad_norms["generator"] = total_grad_norm(group("generator"));
  opt_g_.step();
  zero_grads(parameters());
  ++step_;
  return rec;
}

void FusionModel::save(const std::filesystem::path& dir) const {
  ckpt::save(dir, "generator", cfg_.to_json(), parameters(), step_, seed_, json{{"vocab", vocab_.to_json()}});
  vocab_.save(dir / "vocab.json");
}

FusionModel FusionModel::load(const std::filesystem::path& dir) {
  const auto m = ckpt::read_manifest(dir);
  if (m.kind != "generator") throw ckpt::CheckpointError(dir.string() + " is not a generator checkpoint");
  FusionModel model(FusionConfig::from_json(m.config), text::Vocabulary::from_json(m.extra.at("vocab")), m.seed);
  ckpt::load_into(dir, "generator", model.parameters());
  model.step_ = m.step;
  return model;
}

TrainResult train(FusionModel& model, const std::vector<TrainExample>& data, std::uint64_t seed,
                  const ProgressFn& progress) {
  const auto& cfg = model.config();
  if (data.empty()) throw TrainingError("training corpus is empty");
  const int bs = cfg.batch_size;
  const int n_batches = static_cast<int>(data.size()) / bs;
  if (n_batches == 0)
    throw TrainingError("corpus of " + std::to_string(data.size()) + " examples is smaller than batch_size " + std::to_string(bs));
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  TrainResult result;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<const TrainExample*> batch;
      for (int k = 0; k < bs; ++k) batch.push_back(&data[order[static_cast<std::size_t>(bi * bs + k)]]);
      result.trace.push_back(model.train_step(batch, rng));
      if (progress) progress(result.trace.back());
    }
  }
  return result;
}

}  // namespace cigli::fusion
