#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cigli/checkpoint.hpp"
#include "cigli/fusiongan.hpp"
#include "cigli/synthscenes.hpp"
#include "support/gradcheck.hpp"

using namespace cigli;
using namespace cigli::fusion;
using cigli::testing::gradcheck;
using cigli::testing::random_tensor;
using cigli::testing::weighted_sum;
using nn::Tensor;

namespace {

FusionConfig tiny_config(FusionMode mode) {
  FusionConfig c;
  c.mode = mode;
  c.image_resolution = 32;
  c.d_txt = 12;
  c.d_img = 10;
  c.d_fuse = 8;
  c.d_word = 6;
  c.noise_dim = 8;
  c.gen_channels = {16, 8, 8, 8};
  c.disc_channels = {4, 8, 8, 8};
  c.enc_channels = {4, 8, 8, 8};
  c.mod_hidden = 8;
  c.batch_size = 4;
  c.epochs = 1;
  return c;
}

std::vector<TrainExample> tiny_data(int n, std::uint64_t seed) {
  synth::CorpusConfig cc;
  cc.size = n;
  cc.seed = seed;
  cc.scene.canvas_size = 32;
  cc.train_fraction = 1.0;
  cc.val_fraction = 0.0;
  std::vector<TrainExample> out;
  for (const auto& ex : synth::build_synth_corpus(cc).train) out.push_back({ex.caption, ex.image1, ex.image2_gold});
  return out;
}

text::Vocabulary vocab_for(const std::vector<TrainExample>& data) {
  std::vector<std::string> texts;
  for (const auto& d : data) texts.push_back(d.text);
  return text::Vocabulary::build(texts);
}

void randomize(const ParamList& params, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto p : params)
    for (double& v : p.tensor.data()) v = n(rng);
}

// Scores bounded away from the hinge kinks at -1 and +1.
Tensor kink_free_scores(int b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(static_cast<std::size_t>(b));
  for (double& x : v) {
    do x = u(rng);
    while (std::abs(std::abs(x) - 1.0) < 0.05);
  }
  return Tensor::from({b, 1}, v, true);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double lrelu(double x) { return x > 0 ? x : 0.2 * x; }

}  // namespace

TEST_CASE("gradient suite over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);

    // modulation block with non-trivial modulation transforms
    GenBlock blk(3, 2, 4, 5, rng);
    ParamList bp;
    blk.collect(bp, "blk");
    randomize(bp, rng);
    Tensor x = random_tensor({2, 3, 2, 2}, rng);
    Tensor c = random_tensor({2, 4}, rng);
    auto inputs = nn::tensors_of(bp);
    inputs.push_back(x);
    inputs.push_back(c);
    const auto r_blk = gradcheck([&] { return weighted_sum(blk.forward(x, c), seed); }, inputs);
    CHECK(r_blk.all_finite);
    CHECK(r_blk.max_rel_error < 1e-4);

    for (FusionMode mode : {FusionMode::concat, FusionMode::sum}) {
      Fusion f(mode, 4, 3, 5, rng);
      ParamList fp;
      f.collect(fp, "f");
      randomize(fp, rng);
      Tensor t = random_tensor({3, 4}, rng);
      Tensor i = random_tensor({3, 3}, rng);
      auto in = nn::tensors_of(fp);
      in.push_back(t);
      in.push_back(i);
      const auto r = gradcheck([&] { return weighted_sum(f.forward(t, i), seed + 100); }, in);
      CHECK(r.max_rel_error < 1e-4);
    }

    Tensor sr = kink_free_scores(5, rng), sf = kink_free_scores(5, rng), sm = kink_free_scores(5, rng);
    CHECK(gradcheck([&] { return d_hinge_loss(sr, sf, sm); }, {sr, sf, sm}).max_rel_error < 1e-4);
    CHECK(gradcheck([&] { return g_hinge_loss(sf); }, {sf}).max_rel_error < 1e-4);

    // end to end through the discriminator, so the loss gradient reaches conditions and images
    Discriminator d(4, {}, 2, rng);
    ParamList dp;
    d.collect(dp, "d");
    randomize(dp, rng, 0.3);
    Tensor img = random_tensor({3, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor cond = random_tensor({3, 2}, rng);
    auto din = nn::tensors_of(dp);
    din.push_back(img);
    din.push_back(cond);
    const auto perm = mismatch_permutation(3);
    const auto r_d = gradcheck(
        [&] {
          Tensor s = d.forward(img, cond);
          return d_hinge_loss(s, nn::scale(s, -0.5), d.forward(img, nn::index_rows(cond, perm)));
        },
        din);
    CHECK(r_d.max_rel_error < 1e-4);
  }
}

TEST_CASE("two-unit recurrent encoder matches the hand recurrence") {
  std::mt19937_64 rng(0);
  models::TextEncoder enc(3, 2, 2, rng);
  // embedding rows for tokens 0..2
  const std::vector<double> emb{0.5, -0.25, 0.1, 0.8, -0.6, 0.3};
  std::copy(emb.begin(), emb.end(), enc.embedding.data().begin());
  // stacked gates (i, f, g, o), 2 units each: W_x [8,2], b [8], W_h [8,2]
  std::vector<double> wx(16), bx(8), wh(16);
  for (int k = 0; k < 16; ++k) {
    wx[static_cast<std::size_t>(k)] = 0.1 * (k % 5) - 0.2;
    wh[static_cast<std::size_t>(k)] = 0.05 * (k % 7) - 0.15;
  }
  for (int k = 0; k < 8; ++k) bx[static_cast<std::size_t>(k)] = 0.03 * k - 0.1;
  std::copy(wx.begin(), wx.end(), enc.lstm.input.weight.data().begin());
  std::copy(bx.begin(), bx.end(), enc.lstm.input.bias.data().begin());
  std::copy(wh.begin(), wh.end(), enc.lstm.hidden_weight.data().begin());

  const std::vector<int> seq{2, 1};
  double h[2] = {0, 0}, c[2] = {0, 0};
  for (int tok : seq) {
    double pre[8];
    for (int r = 0; r < 8; ++r) {
      pre[r] = bx[static_cast<std::size_t>(r)];
      for (int j = 0; j < 2; ++j) {
        pre[r] += wx[static_cast<std::size_t>(r * 2 + j)] * emb[static_cast<std::size_t>(tok * 2 + j)];
        pre[r] += wh[static_cast<std::size_t>(r * 2 + j)] * h[j];
      }
    }
    for (int u = 0; u < 2; ++u) {
      const double ig = sigmoid(pre[u]), fg = sigmoid(pre[2 + u]), gg = std::tanh(pre[4 + u]), og = sigmoid(pre[6 + u]);
      c[u] = fg * c[u] + ig * gg;
      h[u] = og * std::tanh(c[u]);
    }
  }
  const Tensor out = enc.forward(text::make_batch({seq}));
  CHECK(out.data()[0] == doctest::Approx(h[0]).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(h[1]).epsilon(1e-12));
}

TEST_CASE("modulation on a 2x2 feature map") {
  const Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, -1, 0.5, 0, 2});
  const Tensor gamma = Tensor::from({1, 2}, {2.0, -0.5});
  const Tensor beta = Tensor::from({1, 2}, {0.25, 1.0});
  const Tensor y = nn::modulate(x, gamma, beta);
  const std::vector<double> expect{2.25, 4.25, 6.25, 8.25, 1.5, 0.75, 1.0, 0.0};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("modulation is the identity at initialisation") {
  std::mt19937_64 rng(5);
  GenBlock blk(3, 4, 6, 8, rng);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng, -1, 1, false);
  const Tensor c = random_tensor({2, 6}, rng, -3, 3, false);
  const Tensor plain = nn::leaky_relu(blk.conv.forward(nn::upsample_nearest2x(x)));
  const Tensor y = blk.forward(x, c);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == plain.data()[i]);
  CHECK(blk.gamma.forward(c).data()[0] == 1.0);
  CHECK(blk.beta.forward(c).data()[0] == 0.0);
}

TEST_CASE("4x4 discriminator matches direct arithmetic") {
  std::mt19937_64 rng(9);
  Discriminator d(4, {}, 1, rng);
  ParamList p;
  d.collect(p, "d");
  randomize(p, rng, 0.4);
  const Tensor img = random_tensor({1, 3, 4, 4}, rng, 0, 1, false);
  const double cval = 0.7;
  const Tensor c = Tensor::from({1, 1}, {cval});

  const int cin = 4, cj = d.joint.weight.dim(0);
  auto in_at = [&](int ch, int y, int x) -> double {
    if (y < 0 || x < 0 || y >= 4 || x >= 4) return 0.0;
    return ch < 3 ? img.data()[static_cast<std::size_t>((ch * 4 + y) * 4 + x)] : cval;
  };
  std::vector<double> hid(static_cast<std::size_t>(cj * 16));
  for (int o = 0; o < cj; ++o)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double s = d.joint.bias.data()[static_cast<std::size_t>(o)];
        for (int ch = 0; ch < cin; ++ch)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              s += d.joint.weight.data()[static_cast<std::size_t>(((o * cin + ch) * 3 + ky) * 3 + kx)] * in_at(ch, y + ky - 1, x + kx - 1);
        hid[static_cast<std::size_t>((o * 4 + y) * 4 + x)] = lrelu(s);
      }
  double score = d.logit.bias.data()[0];
  for (int ch = 0; ch < cj; ++ch)
    for (int k = 0; k < 16; ++k)
      score += d.logit.weight.data()[static_cast<std::size_t>(ch * 16 + k)] * hid[static_cast<std::size_t>(ch * 16 + k)];
  const Tensor s = d.forward(img, c);
  CHECK(s.shape() == nn::Shape{1, 1});
  CHECK(s.item() == doctest::Approx(score).epsilon(1e-12));
  CHECK(d.forward(img, c).item() == s.item());
}

TEST_CASE("hinge losses") {
  const Tensor zero = Tensor::zeros({4, 1});
  CHECK(d_hinge_loss(zero, zero, zero).item() == doctest::Approx(2.0));
  CHECK(g_hinge_loss(zero).item() == doctest::Approx(0.0));
  CHECK(d_hinge_loss(Tensor::full({3, 1}, 2.0), Tensor::full({3, 1}, -2.0), Tensor::full({3, 1}, -2.0)).item() == 0.0);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor({6, 1}, rng, -3, 3, false), b = random_tensor({6, 1}, rng, -3, 3, false),
                 m = random_tensor({6, 1}, rng, -3, 3, false);
    double real = 0, fake = 0, mis = 0, g = 0;
    for (int i = 0; i < 6; ++i) {
      real += std::max(0.0, 1.0 - a.at(static_cast<std::size_t>(i))) / 6;
      fake += std::max(0.0, 1.0 + b.at(static_cast<std::size_t>(i))) / 6;
      mis += std::max(0.0, 1.0 + m.at(static_cast<std::size_t>(i))) / 6;
      g -= b.at(static_cast<std::size_t>(i)) / 6;
    }
    CHECK(d_hinge_loss(a, b, m).item() == doctest::Approx(real + 0.5 * (fake + mis)).epsilon(1e-12));
    CHECK(g_hinge_loss(b).item() == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("mismatch permutation is a derangement") {
  CHECK_THROWS_AS(mismatch_permutation(1), std::invalid_argument);
  for (int b = 2; b < 30; ++b) {
    const auto p = mismatch_permutation(b);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < b; ++i) {
      CHECK(p[static_cast<std::size_t>(i)] != i);
      CHECK(sorted[static_cast<std::size_t>(i)] == i);
    }
  }
}

TEST_CASE("fusion algebra") {
  std::mt19937_64 rng(3);
  Fusion cat(FusionMode::concat, 256, 256, 256, rng);
  const Tensor t = random_tensor({2, 256}, rng, -1, 1, false), i = random_tensor({2, 256}, rng, -1, 1, false);
  const Tensor ti = cat.forward(t, i);
  CHECK(ti.shape() == nn::Shape{2, 512});
  CHECK(cat.out_dim() == 512);
  const Tensor t_back = nn::slice(ti, 0, 256), i_back = nn::slice(ti, 256, 256);
  CHECK(std::equal(t_back.data().begin(), t_back.data().end(), t.data().begin()));
  CHECK(std::equal(i_back.data().begin(), i_back.data().end(), i.data().begin()));
  CHECK_THROWS_AS(cat.forward(t, Tensor()), std::invalid_argument);

  Fusion sum(FusionMode::sum, 4, 3, 4, rng);
  auto pt = sum.proj_text.weight.data();
  std::fill(pt.begin(), pt.end(), 0.0);
  for (int k = 0; k < 4; ++k) pt[static_cast<std::size_t>(k * 4 + k)] = 1.0;
  const Tensor t4 = random_tensor({3, 4}, rng, -1, 1, false);
  const Tensor y = sum.forward(t4, Tensor::zeros({3, 3}));
  for (std::size_t k = 0; k < y.size(); ++k) CHECK(y.data()[k] == t4.data()[k]);
  // zero image projection reduces to the text projection alone
  randomize([&] { ParamList p; sum.collect(p, "s"); return p; }(), rng);
  std::fill(sum.proj_image.weight.data().begin(), sum.proj_image.weight.data().end(), 0.0);
  const Tensor i3 = random_tensor({3, 3}, rng, -1, 1, false);
  const Tensor only_t = sum.proj_text.forward(t4);
  const Tensor fused = sum.forward(t4, i3);
  for (std::size_t k = 0; k < fused.size(); ++k) CHECK(fused.data()[k] == only_t.data()[k]);
  CHECK_THROWS_AS(sum.forward(t4, Tensor()), std::invalid_argument);

  Fusion txt(FusionMode::text_only, 4, 3, 4, rng);
  const Tensor same = txt.forward(t4, Tensor());
  CHECK(std::equal(same.data().begin(), same.data().end(), t4.data().begin()));
}

TEST_CASE("generator contracts") {
  const auto data = tiny_data(8, 2);
  FusionModel m(tiny_config(FusionMode::concat), vocab_for(data), 4);
  std::mt19937_64 rng(1);
  const int cd = m.config().condition_dim();
  CHECK(cd == 22);
  CHECK_THROWS_AS(m.generate(Tensor::zeros({1, 7}), Tensor::zeros({1, cd})), std::invalid_argument);
  CHECK_THROWS_AS(m.generate(Tensor::zeros({1, 8}), Tensor::zeros({1, cd + 1})), std::invalid_argument);
  const Tensor z = m.sample_noise(2, rng), c = random_tensor({2, cd}, rng, -1, 1, false);
  const Tensor a = m.generate(z, c), b = m.generate(z, c);
  CHECK(a.shape() == nn::Shape{2, 3, 32, 32});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  // output range for extreme inputs, with non-trivial weights
  randomize(m.group("generator"), rng, 0.5);
  for (double mag : {1.0, 100.0, 1e6}) {
    const Tensor y = m.generate(nn::scale(m.sample_noise(3, rng), mag), nn::scale(random_tensor({3, cd}, rng, -1, 1, false), mag));
    for (double v : y.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  const Image g1 = m.generate_image(data[0].text, data[0].image1, 99);
  CHECK(g1 == m.generate_image(data[0].text, data[0].image1, 99));
  CHECK(g1.height == 32);
}

TEST_CASE("encoders") {
  const auto data = tiny_data(8, 2);
  FusionModel m(tiny_config(FusionMode::concat), vocab_for(data), 4);
  const Tensor zero_img = Tensor::zeros({2, 3, 32, 32});
  const Tensor e = m.encode_image(zero_img);
  CHECK(e.shape() == nn::Shape{2, 10});
  for (double v : e.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(m.encode_image(Tensor::zeros({1, 3, 16, 16})), std::invalid_argument);

  const Tensor t1 = m.encode_text(m.tokenize({data[0].text}));
  const Tensor t2 = m.encode_text(m.tokenize({data[0].text}));
  CHECK(t1.shape() == nn::Shape{1, 12});
  CHECK(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));
  for (double v : t1.data()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(m.tokenize({"...!"}), std::invalid_argument);
}

TEST_CASE("text_only never reads the first image") {
  const auto data = tiny_data(8, 2);
  FusionModel m(tiny_config(FusionMode::text_only), vocab_for(data), 4);
  CHECK(m.group("image_encoder").empty());
  const Image other = Image::filled(32, 32, {0.1, 0.9, 0.3});
  const Tensor a = m.condition({data[0].text}, {&data[0].image1});
  const Tensor b = m.condition({data[0].text}, {&other});
  const Tensor c = m.condition({data[0].text}, {nullptr});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("no parameter group is frozen after one step") {
  const auto data = tiny_data(8, 3);
  for (FusionMode mode : {FusionMode::concat, FusionMode::sum}) {
    CAPTURE(to_string(mode));
    FusionModel m(tiny_config(mode), vocab_for(data), 11);
    std::vector<const TrainExample*> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(&data[static_cast<std::size_t>(i)]);
    std::mt19937_64 rng(1);
    const auto before = m.group("text_encoder").front().tensor.clone();
    const StepRecord r = m.train_step(batch, rng);
    for (const auto& g : param_groups()) {
      if (mode == FusionMode::concat && g == "fusion") continue;  // concatenation has no parameters
      CAPTURE(g);
      REQUIRE(r.grad_norms.count(g) == 1);
      CHECK(r.grad_norms.at(g) > 0.0);
    }
    CHECK(std::isfinite(r.d_loss));
    CHECK(std::isfinite(r.g_loss));
    CHECK(m.step() == 1);
    const auto after = m.group("text_encoder").front().tensor;
    CHECK_FALSE(std::equal(before.data().begin(), before.data().end(), after.data().begin()));
  }
}

TEST_CASE("training is deterministic and counts steps") {
  const auto data = tiny_data(10, 5);
  auto run = [&] {
    FusionModel m(tiny_config(FusionMode::sum), vocab_for(data), 21);
    const auto res = train(m, data, 8);
    return std::make_pair(res, m.step());
  };
  const auto [a, steps_a] = run();
  const auto [b, steps_b] = run();
  CHECK(steps_a == 2);  // 1 epoch x floor(10 / 4) batches
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].d_loss == b.trace[i].d_loss);
    CHECK(a.trace[i].g_loss == b.trace[i].g_loss);
  }
  FusionModel m(tiny_config(FusionMode::sum), vocab_for(data), 21);
  CHECK_THROWS_AS(train(m, {}, 1), TrainingError);
  CHECK_THROWS_AS(train(m, tiny_data(3, 1), 1), TrainingError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto data = tiny_data(8, 5);
  FusionModel m(tiny_config(FusionMode::concat), vocab_for(data), 21);
  m.discriminator.logit.bias.data()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(train(m, data, 1), doctest::Contains("step 1"), TrainingError);
}

TEST_CASE("gradient penalty option trains") {
  const auto data = tiny_data(8, 5);
  auto cfg = tiny_config(FusionMode::concat);
  cfg.gradient_penalty = true;
  FusionModel m(cfg, vocab_for(data), 21);
  const auto res = train(m, data, 1);
  for (const auto& r : res.trace) CHECK(std::isfinite(r.d_loss));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto data = tiny_data(8, 6);
  FusionModel m(tiny_config(FusionMode::sum), vocab_for(data), 31);
  train(m, data, 2);
  const auto dir = std::filesystem::temp_directory_path() / "cigli_fusion_ckpt";
  std::filesystem::remove_all(dir);
  m.save(dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "vocab.json"));
  const FusionModel back = FusionModel::load(dir);
  CHECK(back.config() == m.config());
  CHECK(back.step() == m.step());
  CHECK(back.vocab() == m.vocab());
  const auto pa = m.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
  }
  CHECK(m.generate_image(data[1].text, data[1].image1, 5) == back.generate_image(data[1].text, data[1].image1, 5));

  const auto manifest = ckpt::read_manifest(dir);
  CHECK(manifest.params.front().at("dtype") == "float32");
  CHECK(FusionConfig::from_json(manifest.config) == m.config());
  std::filesystem::remove(dir / manifest.params.front().at("file").get<std::string>());
  CHECK_THROWS_AS(FusionModel::load(dir), ckpt::CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  FusionConfig c = FusionConfig::desk();
  CHECK(c.batch_size == 16);
  CHECK(c.epochs == 30);
  CHECK(c.d_txt == 256);
  CHECK(c.rgb_bias_init == 0.0);
  CHECK(c.noise_dim == 100);
  c.finalize();
  CHECK(c.condition_dim() == 512);
  CHECK(FusionConfig::from_json(c.to_json()) == c);
  auto j = c.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(FusionConfig::from_json(j), std::invalid_argument);
  FusionConfig bad = c;
  bad.image_resolution = 48;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_mode("product"), std::invalid_argument);
}

TEST_CASE("small preset starts at the background grey") {
  auto cfg = FusionConfig::small();
  cfg.finalize();
  CHECK(cfg.image_resolution == 32);
  CHECK(FusionConfig::from_json(cfg.to_json()) == cfg);
  FusionModel m(cfg, vocab_for(tiny_data(20, 3)), 5);
  for (double b : m.generator.to_rgb.bias.data()) CHECK(1.0 / (1.0 + std::exp(-b)) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("short training run produces varied images") {
  const auto data = tiny_data(200, 8);
  auto cfg = FusionConfig::small();
  cfg.epochs = 1;
  FusionModel m(cfg, vocab_for(data), 1);
  const auto res = train(m, data, 2);
  CHECK(res.trace.size() == 12);
  for (const auto& r : res.trace) {
    CHECK(std::isfinite(r.d_loss));
    CHECK(std::isfinite(r.g_loss));
  }
  // pixel std across samples
  std::vector<Image> imgs;
  for (int i = 0; i < 10; ++i) imgs.push_back(m.generate_image(data[static_cast<std::size_t>(i)].text, data[static_cast<std::size_t>(i)].image1, static_cast<std::uint64_t>(i)));
  double worst = 0.0;
  for (std::size_t p = 0; p < imgs[0].pixels.size(); ++p) {
    double mean = 0, var = 0;
    for (const auto& im : imgs) mean += im.pixels[p] / 10;
    for (const auto& im : imgs) var += (im.pixels[p] - mean) * (im.pixels[p] - mean) / 10;
    worst = std::max(worst, std::sqrt(var));
  }
  CHECK(worst > 1e-3);
}
