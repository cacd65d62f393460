#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cigli/autometrics.hpp"
#include "cigli/synthscenes.hpp"

using namespace cigli;
using namespace cigli::metrics;

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng, int c, double peak) {
  std::gamma_distribution<double> g(peak, 1.0);
  std::vector<double> p(static_cast<std::size_t>(c));
  double s = 0.0;
  for (double& v : p) s += (v = g(rng) + 1e-300);
  for (double& v : p) v /= s;
  return p;
}

// IS through entropies: mean KL(p || p_bar) = H(p_bar) - mean H(p).
double is_by_entropy(const std::vector<std::vector<double>>& rows, std::size_t lo, std::size_t hi) {
  const std::size_t c = rows[0].size();
  std::vector<double> bar(c, 0.0);
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t y = 0; y < c; ++y) bar[y] += rows[i][y] / static_cast<double>(hi - lo);
  auto entropy = [](const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
      if (v > 0) h -= v * std::log(v);
    return h;
  };
  double mean_h = 0.0;
  for (std::size_t i = lo; i < hi; ++i) mean_h += entropy(rows[i]) / static_cast<double>(hi - lo);
  return std::exp(entropy(bar) - mean_h);
}

synth::SynthCorpus small_corpus(int n, std::uint64_t seed, int max_objects = 6) {
  synth::CorpusConfig cc;
  cc.size = n;
  cc.seed = seed;
  cc.scene.canvas_size = 32;
  cc.scene.max_objects = max_objects;
  cc.train_fraction = 0.6;
  cc.val_fraction = 0.2;
  return synth::build_synth_corpus(cc);
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

int word_number(const std::string& w) {
  static const std::vector<std::string> names{"no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  const auto it = std::find(names.begin(), names.end(), w);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

// Truth of the caption for (first, candidate) read from the caption words alone.
bool caption_true(const synth::SynthExample& ex, const synth::SceneSpec& candidate) {
  const auto w = words(ex.caption);
  std::vector<int> nums;
  std::string shape_word;
  for (std::size_t i = 0; i < w.size(); ++i) {
    // "one image has" is not a count.
    if (w[i] == "one" && i + 1 < w.size() && w[i + 1] == "image") continue;
    const int n = word_number(w[i]);
    if (n >= 0 && i + 1 < w.size()) {
      nums.push_back(n);
      shape_word = w[i + 1];
    }
  }
  if (!shape_word.empty() && shape_word.back() == 's') shape_word.pop_back();
  const auto shape = synth::parse_shape(shape_word);
  const int a = ex.first_spec->count(shape), b = candidate.count(shape);
  if (ex.template_id == "aggregate") return nums.size() == 1 && a + b == nums[0];
  REQUIRE(nums.size() == 2);
  return (a == nums[0] && b == nums[1]) || (a == nums[1] && b == nums[0]);
}

VerifierConfig small_verifier(int steps) {
  VerifierConfig vc;
  vc.image_resolution = 32;
  vc.channels = {8, 16, 16, 16};
  vc.d_img = 24;
  vc.d_txt = 24;
  vc.d_word = 12;
  vc.d_hidden = 32;
  vc.batch_size = 16;
  vc.steps = steps;
  return vc;
}

// Large enough to learn the counting task in well under a minute.
VerifierConfig trained_verifier_config() {
  VerifierConfig vc;
  vc.image_resolution = 32;
  vc.channels = {8, 16, 32, 32};
  vc.steps = 750;
  return vc;
}

ClassifierConfig small_classifier(int steps) {
  ClassifierConfig cc;
  cc.image_resolution = 32;
  cc.channels = {8, 16, 16, 16};
  cc.d_hidden = 32;
  cc.batch_size = 16;
  cc.steps = steps;
  return cc;
}

}  // namespace

TEST_CASE("inception score of identical conditionals is one") {
  std::mt19937_64 rng(1);
  const auto p = random_distribution(rng, 7, 1.0);
  const std::vector<std::vector<double>> rows(50, p);
  for (int splits : {1, 5, 10}) {
    const auto is = inception_score(rows, splits);
    CHECK(std::abs(is.mean - 1.0) < 1e-9);
    CHECK(is.std < 1e-9);
  }
  const std::vector<std::vector<double>> uniform(30, std::vector<double>(19, 1.0 / 19));
  CHECK(std::abs(inception_score(uniform, 3).mean - 1.0) < 1e-9);
}

TEST_CASE("one-hot conditionals covering ten classes give ten") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(10, 0.0);
    p[static_cast<std::size_t>(i % 10)] = 1.0;
    rows.push_back(p);
  }
  const auto is = inception_score(rows, 10);
  CHECK(std::abs(is.mean - 10.0) < 1e-6);
  CHECK(is.std < 1e-6);
}

TEST_CASE("inception score matches an entropy-based computation") {
  std::mt19937_64 rng(11);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 40; ++i) rows.push_back(random_distribution(rng, 6, 0.5));
  const auto is = inception_score(rows, 4);
  std::vector<double> per;
  for (std::size_t k = 0; k < 4; ++k) per.push_back(is_by_entropy(rows, k * 10, k * 10 + 10));
  double mean = 0.0, var = 0.0;
  for (double v : per) mean += v / 4.0;
  for (double v : per) var += (v - mean) * (v - mean) / 4.0;
  CHECK(std::abs(is.mean - mean) < 1e-9);
  CHECK(std::abs(is.std - std::sqrt(var)) < 1e-9);
  CHECK(is.n_splits == 4);
}

TEST_CASE("inception score lies between one and the class count") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + static_cast<int>(rng() % 20);
    const int n = 1 + static_cast<int>(rng() % 40);
    const double peak = std::uniform_real_distribution<double>(0.05, 3.0)(rng);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < n; ++i) rows.push_back(random_distribution(rng, c, peak));
    const int splits = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::min(n, 5)));
    const auto is = inception_score(rows, splits);
    CHECK(is.mean >= 1.0 - 1e-12);
    CHECK(is.mean <= c + 1e-9);
  }
}

TEST_CASE("inception score ignores order within a split") {
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 25; ++i) rows.push_back(random_distribution(rng, 5, 0.7));
  const double a = inception_score(rows, 1).mean;
  std::shuffle(rows.begin(), rows.end(), rng);
  CHECK(std::abs(inception_score(rows, 1).mean - a) < 1e-12);
}

TEST_CASE("inception score argument errors") {
  const std::vector<std::vector<double>> none;
  CHECK_THROWS_AS(inception_score(none, 1), MetricsError);
  const std::vector<std::vector<double>> two(2, {0.5, 0.5});
  CHECK_THROWS_AS(inception_score(two, 3), MetricsError);
  CHECK_THROWS_AS(inception_score(two, 0), MetricsError);
  const std::vector<std::vector<double>> bad{{0.5, 0.6}};
  CHECK_THROWS_AS(inception_score(bad, 1), MetricsError);
  const std::vector<std::vector<double>> ragged{{0.5, 0.5}, {1.0}};
  CHECK_THROWS_AS(inception_score(ragged, 1), MetricsError);
}

TEST_CASE("splits shrink until each split holds a class count of images") {
  CHECK(auto_splits(1000, 19, 10) == 10);
  CHECK(auto_splits(190, 19, 10) == 10);
  CHECK(auto_splits(189, 19, 10) == 9);
  CHECK(auto_splits(40, 19, 10) == 2);
  CHECK(auto_splits(5, 19, 10) == 1);
  CHECK_THROWS_AS(auto_splits(0, 19, 10), MetricsError);
}

TEST_CASE("verifier scores on hand cases") {
  {
    const std::vector<std::string> caps{"a", "b", "c", "d"};
    const std::vector<char> acc{1, 1, 0, 1};
    const auto s = verifier_scores(caps, acc);
    CHECK(s.accuracy == doctest::Approx(75.0));
    CHECK(s.consistency == doctest::Approx(75.0));
  }
  {
    const std::vector<std::string> caps{"A", "A", "B"};
    const std::vector<char> acc{1, 0, 1};
    const auto s = verifier_scores(caps, acc);
    CHECK(std::abs(s.accuracy - 200.0 / 3.0) < 1e-9);
    CHECK(s.consistency == doctest::Approx(50.0));
    CHECK(s.n_groups == 2);
  }
  {
    const std::vector<std::string> caps{"x", "x", "y"};
    const std::vector<char> acc{1, 1, 1};
    const auto s = verifier_scores(caps, acc);
    CHECK(s.accuracy == 100.0);
    CHECK(s.consistency == 100.0);
  }
  const std::vector<std::string> none;
  CHECK_THROWS_AS(verifier_scores(none, std::vector<char>{}), MetricsError);
}

TEST_CASE("consistency equals accuracy for singleton groups") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 30);
    std::vector<std::string> caps;
    std::vector<char> acc;
    for (int i = 0; i < n; ++i) {
      caps.push_back("caption " + std::to_string(i));
      acc.push_back(static_cast<char>(rng() % 2));
    }
    const auto s = verifier_scores(caps, acc);
    CHECK(s.accuracy == s.consistency);
    CHECK(s.consistency <= s.accuracy + 1e-12);
  }
}

TEST_CASE("consistency never exceeds accuracy") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> caps;
    std::vector<char> acc;
    for (int i = 0; i < 20; ++i) {
      caps.push_back("g" + std::to_string(rng() % 6));
      acc.push_back(static_cast<char>(rng() % 4 != 0));
    }
    const auto s = verifier_scores(caps, acc);
    CHECK(s.consistency <= s.accuracy + 1e-9);
    CHECK(s.accuracy >= 0.0);
    CHECK(s.accuracy <= 100.0);
  }
}

TEST_CASE("scene labels") {
  synth::SceneSpec s;
  s.canvas_size = 32;
  CHECK(scene_label(s, 6) == 0);
  s.shape_counts[synth::ShapeClass::circle] = 1;
  CHECK(scene_label(s, 6) == 1);
  s.shape_counts[synth::ShapeClass::circle] = 6;
  CHECK(scene_label(s, 6) == 6);
  s.shape_counts.clear();
  s.shape_counts[synth::ShapeClass::triangle] = 2;
  CHECK(scene_label(s, 6) == 1 + 2 * 6 + 1);
  CHECK(scene_classes(6) == 19);
  CHECK(scene_classes(4) == 13);
}

TEST_CASE("second image truth agrees with a caption-word oracle") {
  const auto corp = small_corpus(300, 21);
  std::mt19937_64 rng(2);
  int checked = 0, true_count = 0;
  for (const auto& ex : corp.train) {
    CHECK(second_image_satisfies(ex, *ex.target_spec));
    for (int k = 0; k < 5; ++k) {
      const auto& other = corp.train[rng() % corp.train.size()];
      const bool got = second_image_satisfies(ex, *other.target_spec);
      CHECK(got == caption_true(ex, *other.target_spec));
      true_count += got;
      ++checked;
    }
  }
  CHECK(checked == 5 * static_cast<int>(corp.train.size()));
  CHECK(true_count > 0);
  CHECK(caption_shape("there are exactly two squares in total") == synth::ShapeClass::square);
  CHECK_THROWS_AS(caption_shape("nothing to see"), MetricsError);
}

TEST_CASE("verifier triples are balanced and correctly labelled") {
  const auto corp = small_corpus(300, 22);
  const auto triples = verifier_triples(corp.train, 9);
  std::size_t pos = 0, neg = 0, same_shape = 0;
  for (const auto& t : triples) {
    const auto it = std::find_if(corp.train.begin(), corp.train.end(),
                                 [&](const synth::SynthExample& e) { return &e.image1 == t.image1; });
    REQUIRE(it != corp.train.end());
    const auto owner = std::find_if(corp.train.begin(), corp.train.end(),
                                    [&](const synth::SynthExample& e) { return &e.image2_gold == t.image2; });
    REQUIRE(owner != corp.train.end());
    CHECK(t.caption == it->caption);
    CHECK(t.label == caption_true(*it, *owner->target_spec));
    if (t.label) {
      ++pos;
    } else {
      ++neg;
      same_shape += owner->target_spec->count(caption_shape(t.caption)) > 0;
    }
  }
  CHECK(pos == corp.train.size());
  CHECK(neg == corp.train.size());
  CHECK(same_shape > neg / 4);
  CHECK(same_shape < 3 * neg / 4);
  const auto again = verifier_triples(corp.train, 9);
  REQUIRE(again.size() == triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) CHECK(again[i].image2 == triples[i].image2);
}

TEST_CASE("untrained verifier sits at chance") {
  const auto corp = small_corpus(1250, 23);
  const auto val = verifier_triples(corp.val, 1);
  REQUIRE(val.size() == 500);
  const auto train = verifier_triples(corp.train, 2);
  const Verifier v = finetune_verifier(train, small_verifier(0), 3);
  CHECK(v.step() == 0);
  const double acc = v.accuracy(val);
  CHECK(acc >= 45.0);
  CHECK(acc <= 55.0);
  for (double p : v.probabilities(val)) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("verifier training is deterministic and rejects a single class") {
  const auto corp = small_corpus(120, 24);
  const auto train = verifier_triples(corp.train, 2);
  const auto val = verifier_triples(corp.val, 3);
  const Verifier a = finetune_verifier(train, small_verifier(20), 7);
  const Verifier b = finetune_verifier(train, small_verifier(20), 7);
  CHECK(a.step() == 20);
  CHECK(a.accuracy(val) == b.accuracy(val));
  CHECK(a.probabilities(val) == b.probabilities(val));

  std::vector<Triple> only_true;
  for (const auto& t : train)
    if (t.label) only_true.push_back(t);
  CHECK_THROWS_AS(finetune_verifier(only_true, small_verifier(1), 7), MetricsError);
}

TEST_CASE("verifier checkpoint round-trips") {
  const auto corp = small_corpus(60, 25);
  const auto train = verifier_triples(corp.train, 2);
  const Verifier v = finetune_verifier(train, small_verifier(5), 7);
  const auto dir = std::filesystem::temp_directory_path() / "cigli_test_verifier_ckpt";
  std::filesystem::remove_all(dir);
  v.save(dir);
  const Verifier w = Verifier::load(dir);
  CHECK(w.step() == 5);
  CHECK(w.vocab() == v.vocab());
  CHECK(w.probabilities(train) == v.probabilities(train));
  std::filesystem::remove_all(dir);
}

TEST_CASE("classifier outputs distributions and learns above chance") {
  const auto corp = small_corpus(400, 26, 3);
  ClassifierConfig cfg = small_classifier(250);
  cfg.max_objects = 3;
  const auto data = classifier_data(corp.train, 3);
  const auto val = classifier_data(corp.val, 3);
  const ClassifierModel clf = train_classifier(data, cfg, 5);
  CHECK(clf.n_classes() == 10);
  std::vector<Image> imgs;
  for (const auto& li : val) imgs.push_back(*li.image);
  for (const auto& row : clf.predict(imgs)) {
    REQUIRE(row.size() == 10);
    double s = 0.0;
    for (double p : row) {
      CHECK(p >= 0.0);
      s += p;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK(clf.accuracy(val) > 40.0);  // chance is 10%

  const auto is = inception_score(std::span<const Image>(imgs), clf, 4);
  CHECK(is.mean >= 1.0);
  CHECK(is.mean <= 10.0);

  const auto dir = std::filesystem::temp_directory_path() / "cigli_test_classifier_ckpt";
  std::filesystem::remove_all(dir);
  clf.save(dir);
  const ClassifierModel back = ClassifierModel::load(dir);
  CHECK(back.predict(imgs) == clf.predict(imgs));
  std::filesystem::remove_all(dir);

  Image wrong = Image::filled(16, 16, {0.5, 0.5, 0.5});
  CHECK_THROWS_AS(clf.predict(std::span<const Image>(&wrong, 1)), MetricsError);
}

TEST_CASE("evaluation ranks gold above noise and is deterministic") {
  const auto corp = small_corpus(1000, 27, 4);
  const auto train = verifier_triples(corp.train, 2);
  const Verifier v = finetune_verifier(train, trained_verifier_config(), 7);
  CHECK(v.accuracy(verifier_triples(corp.val, 4)) >= 80.0);
  ClassifierConfig ccfg = small_classifier(50);
  ccfg.max_objects = 4;
  const ClassifierModel clf = train_classifier(classifier_data(corp.train, 4), ccfg, 5);

  const auto dir = std::filesystem::temp_directory_path() / "cigli_test_eval_cache";
  std::filesystem::remove_all(dir);
  EvalOptions opts;
  opts.cache_dir = dir;
  const MetricReport gold = evaluate_generations("gold", gold_source(), corp.eval, v, clf, opts);
  const MetricReport noise = evaluate_generations("noise", noise_source(3), corp.eval, v, clf);
  CHECK(gold.n_examples == corp.eval.size());
  CHECK(gold.verifier_accuracy > noise.verifier_accuracy);
  CHECK(gold.inception_mean >= 1.0);
  CHECK(gold.verifier_consistency <= gold.verifier_accuracy + 1e-9);
  CHECK(gold.inception_splits == auto_splits(corp.eval.size(), clf.n_classes(), 10));

  // Gold pass-through equals scoring the real pairs directly.
  std::vector<Triple> real;
  for (const auto& ex : corp.eval) real.push_back({ex.caption, &ex.image1, &ex.image2_gold, true});
  CHECK(verifier_scores(real, v).accuracy == gold.verifier_accuracy);

  const MetricReport again = evaluate_generations("gold", gold_source(), corp.eval, v, clf);
  CHECK(again.dump() == gold.dump());
  CHECK(MetricReport::from_json(nlohmann::json::parse(gold.dump())).dump() == gold.dump());

  std::ifstream mf(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  CHECK(manifest.at("images").size() == corp.eval.size());
  const std::string first = manifest.at("images").at(corp.eval[0].identifier).get<std::string>();
  const Image cached = read_png(dir / first);
  REQUIRE(cached.pixels.size() == corp.eval[0].image2_gold.pixels.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < cached.pixels.size(); ++i)
    worst = std::max(worst, std::abs(cached.pixels[i] - corp.eval[0].image2_gold.pixels[i]));
  CHECK(worst <= 0.5 / 255.0 + 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation errors carry the example identifier") {
  const auto corp = small_corpus(40, 28);
  const auto train = verifier_triples(corp.train, 2);
  const Verifier v = finetune_verifier(train, small_verifier(0), 7);
  const ClassifierModel clf(small_classifier(0), 5);
  CHECK_THROWS_AS(evaluate_generations("x", gold_source(), std::span<const synth::SynthExample>{}, v, clf), MetricsError);
  const ImageSource broken = [](const synth::SynthExample& ex, std::size_t) {
    return Image::filled(ex.image1.height / 2, ex.image1.width / 2, {0, 0, 0});
  };
  try {
    evaluate_generations("x", broken, corp.eval, v, clf);
    FAIL("expected an error");
  } catch (const MetricsError& e) {
    CHECK(std::string(e.what()).find(corp.eval[0].identifier) != std::string::npos);
  }
}

TEST_CASE("config JSON rejects unknown keys") {
  CHECK_THROWS(VerifierConfig::from_json(nlohmann::json{{"bogus", 1}}));
  CHECK_THROWS(ClassifierConfig::from_json(nlohmann::json{{"bogus", 1}}));
  VerifierConfig v;
  v.steps = 17;
  CHECK(VerifierConfig::from_json(v.to_json()).steps == 17);
}
