#include "cigli/synthscenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace cigli::synth {

using nlohmann::json;

const std::vector<ShapeClass>& all_shapes() {
  static const std::vector<ShapeClass> shapes{ShapeClass::circle, ShapeClass::square, ShapeClass::triangle};
  return shapes;
}

std::string to_string(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
  }
  return "circle";
}

ShapeClass parse_shape(const std::string& name) {
  for (ShapeClass s : all_shapes())
    if (to_string(s) == name) return s;
  throw SceneError("unknown shape class '" + name + "'");
}

std::array<double, 3> shape_color(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return {0.85, 0.15, 0.15};
    case ShapeClass::square: return {0.15, 0.3, 0.85};
    case ShapeClass::triangle: return {0.1, 0.65, 0.2};
  }
  return {0.0, 0.0, 0.0};
}

std::array<double, 3> background_color() { return {0.9, 0.9, 0.9}; }

int SceneSpec::total() const {
  int t = 0;
  for (const auto& [s, n] : shape_counts) t += n;
  return t;
}

int SceneSpec::count(ShapeClass s) const {
  const auto it = shape_counts.find(s);
  return it == shape_counts.end() ? 0 : it->second;
}

void SceneSpec::validate() const {
  if (canvas_size < 32) throw SceneError("canvas_size must be at least 32, got " + std::to_string(canvas_size));
  for (const auto& [s, n] : shape_counts)
    if (n < 0) throw SceneError("negative count for " + to_string(s));
  if (total() > max_objects) {
    throw SceneError("scene has " + std::to_string(total()) + " objects, max_objects is " +
                     std::to_string(max_objects));
  }
}

json SceneSpec::to_json() const {
  json counts = json::object();
  for (ShapeClass s : all_shapes()) counts[to_string(s)] = count(s);
  return json{{"shape_counts", counts},
              {"canvas_size", canvas_size},
              {"jitter_seed", jitter_seed},
              {"max_objects", max_objects}};
}

SceneSpec SceneSpec::from_json(const json& j) {
  SceneSpec s;
  for (auto it = j.at("shape_counts").begin(); it != j.at("shape_counts").end(); ++it) {
    const int n = it.value().get<int>();
    if (n != 0) s.shape_counts[parse_shape(it.key())] = n;
  }
  s.canvas_size = j.at("canvas_size").get<int>();
  s.jitter_seed = j.at("jitter_seed").get<std::uint64_t>();
  s.max_objects = j.value("max_objects", 6);
  return s;
}

bool SceneSpec::same_counts(const SceneSpec& other) const {
  for (ShapeClass s : all_shapes())
    if (count(s) != other.count(s)) return false;
  return true;
}

namespace {

int grid_side(int max_objects) {
  int g = 1;
  while (g * g < max_objects) ++g;
  return g;
}

void draw_shape(Image& img, ShapeClass shape, int x0, int y0, int r) {
  const auto color = shape_color(shape);
  const int cx = x0 + r, cy = y0 + r;
  for (int y = y0; y <= y0 + 2 * r; ++y) {
    for (int x = x0; x <= x0 + 2 * r; ++x) {
      const int dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (shape) {
        case ShapeClass::circle: inside = dx * dx + dy * dy <= r * r + r; break;
        case ShapeClass::square: inside = std::abs(dx) <= r - 1 && std::abs(dy) <= r - 1; break;
        case ShapeClass::triangle: {
          const double depth = static_cast<double>(y - (cy - r)) / (2.0 * r);  // 0 at apex, 1 at base
          inside = std::abs(dx) <= depth * r + 0.5;
          break;
        }
      }
      if (inside)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<std::size_t>(c)];
    }
  }
}

}  // namespace

Image render_scene(const SceneSpec& spec) {
  spec.validate();
  const int g = grid_side(spec.max_objects);
  const int cell = spec.canvas_size / g;
  const int r = std::max(2, static_cast<int>(cell * 0.3));
  const int box = 2 * r + 1;
  const int slack = cell - box - 2;  // one blank pixel on each side of a cell
  if (spec.total() > g * g || slack < 0) {
    throw SceneError("over-full canvas: " + std::to_string(spec.total()) + " shapes cannot be placed without overlap on a " +
                     std::to_string(spec.canvas_size) + "px canvas");
  }
  Image img = Image::filled(spec.canvas_size, spec.canvas_size, background_color());
  std::mt19937_64 rng(spec.jitter_seed);
  std::vector<int> cells(static_cast<std::size_t>(g * g));
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::uniform_int_distribution<int> jitter(0, slack);
  std::size_t next = 0;
  for (ShapeClass s : all_shapes()) {
    for (int i = 0; i < spec.count(s); ++i) {
      const int c = cells[next++];
      const int x0 = (c % g) * cell + 1 + jitter(rng);
      const int y0 = (c / g) * cell + 1 + jitter(rng);
      draw_shape(img, s, x0, y0, r);
    }
  }
  return img;
}

const std::vector<std::string>& registered_templates() {
  static const std::vector<std::string> t{"aggregate", "disjunctive", "distractor"};
  return t;
}

bool is_cross_image(const std::string& template_id) {
  return template_id == "aggregate" || template_id == "disjunctive";
}

std::string number_word(int n) {
  static const std::array<const char*, 11> words{"no",  "one", "two",   "three", "four", "five",
                                                 "six", "seven", "eight", "nine",  "ten"};
  if (n < 0 || n > 10) return std::to_string(n);
  return words[static_cast<std::size_t>(n)];
}

namespace {

std::string counted(int n, ShapeClass s) { return number_word(n) + " " + to_string(s) + (n == 1 ? "" : "s"); }

SceneSpec make_spec(ShapeClass s, int n, const SynthOptions& opts, std::uint64_t jitter_seed) {
  SceneSpec spec;
  if (n > 0) spec.shape_counts[s] = n;
  spec.canvas_size = opts.canvas_size;
  spec.max_objects = opts.max_objects;
  spec.jitter_seed = jitter_seed;
  return spec;
}

}  // namespace

AggregateDraw draw_aggregate(std::uint64_t rng_seed, int max_objects, std::size_t n_shapes) {
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick_shape(0, n_shapes - 1);
  (void)pick_shape(rng);
  AggregateDraw d;
  d.total = std::uniform_int_distribution<int>(1, max_objects)(rng);
  d.first = std::uniform_int_distribution<int>(0, d.total)(rng);
  return d;
}

SynthExample sample_example(std::uint64_t rng_seed, const std::string& template_id, const SynthOptions& opts) {
  if (std::find(registered_templates().begin(), registered_templates().end(), template_id) ==
      registered_templates().end()) {
    throw SceneError("unknown template '" + template_id + "'");
  }
  if (opts.shapes.empty()) throw SceneError("no shape classes enabled");
  if (opts.max_objects < 1) throw SceneError("max_objects must be positive");

  std::mt19937_64 rng(rng_seed);
  const ShapeClass shape =
      opts.shapes[std::uniform_int_distribution<std::size_t>(0, opts.shapes.size() - 1)(rng)];
  SynthExample ex;
  ex.template_id = template_id;
  ex.identifier = "synth-" + template_id + "-" + std::to_string(rng_seed);
  int first = 0, second = 0;
  if (template_id == "aggregate") {
    const int total = std::uniform_int_distribution<int>(1, opts.max_objects)(rng);
    first = std::uniform_int_distribution<int>(0, total)(rng);
    second = total - first;
    ex.caption = total == 1 ? "there is exactly one " + to_string(shape) + " in total"
                            : "there are exactly " + counted(total, shape) + " in total";
  } else if (template_id == "disjunctive") {
    const int x = std::uniform_int_distribution<int>(0, opts.max_objects)(rng);
    int y = std::uniform_int_distribution<int>(0, opts.max_objects - 1)(rng);
    if (y >= x) ++y;
    const bool first_is_x = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    first = first_is_x ? x : y;
    second = first_is_x ? y : x;
    ex.caption = "one image has " + counted(x, shape) + " while the other has " + counted(y, shape);
  } else {
    second = std::uniform_int_distribution<int>(1, opts.max_objects)(rng);
    first = std::uniform_int_distribution<int>(0, opts.max_objects)(rng);
    ex.caption = "the left image contains exactly " + counted(second, shape);
  }
  const std::uint64_t seed1 = rng(), seed2 = rng();
  ex.first_spec = make_spec(shape, first, opts, seed1);
  ex.target_spec = make_spec(shape, second, opts, seed2);
  ex.image1 = render_scene(*ex.first_spec);
  ex.image2_gold = render_scene(*ex.target_spec);
  return ex;
}

std::vector<int> admissible_targets(const SynthExample& ex, int max_objects) {
  if (!ex.first_spec || !ex.target_spec) throw SceneError("example carries no scene specs");
  const int total_seen = ex.first_spec->total() + ex.target_spec->total();
  std::vector<int> out;
  if (ex.template_id == "aggregate") {
    for (int k = 0; k <= total_seen; ++k) out.push_back(total_seen - k);
  } else if (ex.template_id == "disjunctive") {
    // Either image may hold either count.
    out = {ex.first_spec->total(), ex.target_spec->total()};
  } else {
    out = {ex.target_spec->total()};
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  out.erase(std::remove_if(out.begin(), out.end(), [&](int n) { return n > max_objects; }), out.end());
  return out;
}

const std::vector<SynthExample>& SynthCorpus::split(corpus::Split s) const {
  switch (s) {
    case corpus::Split::train: return train;
    case corpus::Split::val: return val;
    case corpus::Split::eval: return eval;
  }
  return train;
}

SynthCorpus build_synth_corpus(const CorpusConfig& cfg) {
  if (cfg.size <= 0) throw SceneError("corpus size must be positive, got " + std::to_string(cfg.size));
  if (cfg.train_fraction < 0 || cfg.val_fraction < 0 || cfg.train_fraction + cfg.val_fraction > 1.0) {
    throw SceneError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::string> names;
  std::vector<double> weights;
  for (const auto& [name, w] : cfg.template_mix) {
    if (w <= 0) continue;
    if (!is_cross_image(name)) {
      throw SceneError("template '" + name + "' is not cross-image and cannot enter a corpus");
    }
    names.push_back(name);
    weights.push_back(w);
  }
  if (names.empty()) throw SceneError("template mix selects no template");

  std::mt19937_64 rng(cfg.seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const int n_train = static_cast<int>(std::lround(cfg.size * cfg.train_fraction));
  const int n_val = static_cast<int>(std::lround(cfg.size * cfg.val_fraction));
  SynthCorpus out;
  for (int i = 0; i < cfg.size; ++i) {
    const std::string& tmpl = names[pick(rng)];
    const std::uint64_t ex_seed = rng();
    SynthExample ex = sample_example(ex_seed, tmpl, cfg.scene);
    ex.identifier = "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
    if (i < n_train) {
      out.train.push_back(std::move(ex));
    } else if (i < n_train + n_val) {
      out.val.push_back(std::move(ex));
    } else {
      out.eval.push_back(std::move(ex));
    }
  }
  return out;
}

corpus::Dataset to_dataset(std::span<const SynthExample> examples, corpus::Split split) {
  corpus::Dataset ds;
  ds.split_name = split;
  ds.provenance = corpus::Provenance::synthetic;
  for (const auto& ex : examples) {
    corpus::DataPoint dp;
    dp.identifier = ex.identifier;
    dp.caption = ex.caption;
    dp.label = ex.label;
    dp.left_image = "images/" + ex.identifier + "_1.png";
    dp.right_image = "images/" + ex.identifier + "_2.png";
    dp.extra["template_id"] = ex.template_id;
    if (ex.target_spec) dp.extra["target_spec"] = ex.target_spec->to_json();
    if (ex.first_spec) dp.extra["first_spec"] = ex.first_spec->to_json();
    ds.points.push_back(std::move(dp));
  }
  return ds;
}

void write_examples(std::span<const SynthExample> examples, corpus::Split split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const corpus::Dataset ds = to_dataset(examples, split);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    write_png(examples[i].image1, dir / ds.points[i].left_image);
    write_png(examples[i].image2_gold, dir / ds.points[i].right_image);
  }
  corpus::write_jsonl(ds, dir / (corpus::to_string(split) + ".jsonl"));
}

void write_corpus(const SynthCorpus& c, const std::filesystem::path& dir) {
  for (auto s : {corpus::Split::train, corpus::Split::val, corpus::Split::eval}) write_examples(c.split(s), s, dir);
}

std::vector<SynthExample> load_examples(const std::filesystem::path& jsonl) {
  const auto loaded = corpus::load_nlvr2_jsonl(jsonl);
  if (!loaded.errors.empty()) {
    throw corpus::CorpusError(jsonl.string() + ": line " + std::to_string(loaded.errors.front().line) + ": " +
                              loaded.errors.front().message);
  }
  const auto base = jsonl.parent_path();
  std::vector<SynthExample> out;
  out.reserve(loaded.dataset.points.size());
  for (const auto& dp : loaded.dataset.points) {
    SynthExample ex;
    ex.identifier = dp.identifier;
    ex.caption = dp.caption;
    ex.label = dp.label;
    ex.template_id = dp.extra.value("template_id", "");
    if (dp.extra.contains("target_spec")) ex.target_spec = SceneSpec::from_json(dp.extra["target_spec"]);
    if (dp.extra.contains("first_spec")) ex.first_spec = SceneSpec::from_json(dp.extra["first_spec"]);
    auto resolve = [&](const std::string& ref) {
      const std::filesystem::path p(ref);
      return p.is_absolute() ? p : base / p;
    };
    ex.image1 = read_png(resolve(dp.left_image));
    ex.image2_gold = read_png(resolve(dp.right_image));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace cigli::synth
