#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "cigli/autometrics.hpp"
#include "cigli/corpus.hpp"
#include "cigli/evalserver.hpp"
#include "cigli/pipeline.hpp"
#include "cigli/synthscenes.hpp"

namespace py = pybind11;
using json = nlohmann::json;
using namespace cigli;

// JSON crosses the boundary as text; the Python package decodes it.
namespace {

pipeline::RunConfig config_from(const std::string& config_json, const std::string& preset) {
  const auto base = pipeline::RunConfig::preset(preset);
  auto cfg = config_json.empty() ? base : pipeline::RunConfig::from_json(json::parse(config_json), base);
  cfg.seed = pipeline::resolve_seed(std::nullopt, cfg.seed, std::getenv("CIGLI_SEED"));
  return cfg;
}

std::string filter_caption(const std::string& caption) {
  const auto d = corpus::filter_caption(caption);
  return json{{"qualified", d.qualified},
              {"matched_rule", d.matched_rule ? json(*d.matched_rule) : json(nullptr)},
              {"reason", d.reason}}
      .dump();
}

std::string effective_config(const std::string& config_json, const std::string& preset) {
  return config_from(config_json, preset).to_json().dump();
}

std::string run_filter(const std::filesystem::path& in, const std::filesystem::path& out) {
  return pipeline::run_filter(in, out).to_json().dump();
}

std::string run_synth(const std::string& config_json, const std::string& preset, const std::filesystem::path& dir) {
  py::gil_scoped_release release;
  const auto c = pipeline::run_synth(config_from(config_json, preset), dir);
  return json{{"train", c.train.size()}, {"val", c.val.size()}, {"eval", c.eval.size()}}.dump();
}

void run_train(const std::string& config_json, const std::string& preset, const std::string& mode,
               const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir) {
  const auto cfg = config_from(config_json, preset);
  py::gil_scoped_release release;
  if (mode == "metrics") {
    pipeline::run_train_metrics(cfg, corpus_dir, out_dir);
  } else {
    pipeline::run_train(cfg, fusion::parse_mode(mode), corpus_dir, out_dir);
  }
}

std::string run_evaluate(const std::string& config_json, const std::string& preset, const std::string& source,
                         const std::filesystem::path& eval_jsonl, const std::filesystem::path& metrics_dir,
                         const std::filesystem::path& out_file) {
  const auto cfg = config_from(config_json, preset);
  py::gil_scoped_release release;
  const auto eval = synth::load_examples(eval_jsonl);
  const auto models = pipeline::MetricModels::load(metrics_dir);
  if (source == "gold" || source == "noise")
    return pipeline::run_evaluate(cfg, source, pipeline::baseline_source(source, cfg.seed_value()), eval, models, out_file)
        .dump();
  const auto g = pipeline::Generator::load(source);
  return pipeline::run_evaluate(cfg, g.model_tag(), pipeline::generator_source(g), eval, models, out_file).dump();
}

void write_generations(const std::string& source, const std::filesystem::path& eval_jsonl, const std::filesystem::path& out,
                       std::uint64_t seed) {
  py::gil_scoped_release release;
  const auto eval = synth::load_examples(eval_jsonl);
  if (source == "gold" || source == "noise") {
    pipeline::write_generations(source, pipeline::baseline_source(source, seed), eval, out);
    return;
  }
  const auto g = pipeline::Generator::load(source);
  pipeline::write_generations(g.model_tag(), pipeline::generator_source(g), eval, out);
}

py::tuple inception_score(const std::vector<std::vector<double>>& conditionals, int n_splits) {
  const auto s = metrics::inception_score(conditionals, n_splits);
  return py::make_tuple(s.mean, s.std, s.n_splits);
}

py::dict verifier_scores(const std::vector<std::string>& captions, const std::vector<bool>& accepted) {
  std::vector<char> acc(accepted.begin(), accepted.end());
  const auto s = metrics::verifier_scores(captions, acc);
  py::dict d;
  d["accuracy"] = s.accuracy;
  d["consistency"] = s.consistency;
  d["n_pairs"] = s.n_pairs;
  d["n_groups"] = s.n_groups;
  return d;
}

std::string create_session(const std::filesystem::path& eval_jsonl,
                           const std::map<std::string, std::filesystem::path>& generation_dirs,
                           const std::vector<std::string>& annotators, std::uint64_t seed,
                           const std::filesystem::path& session_dir) {
  const auto& who = annotators.empty() ? evalserver::default_annotators() : annotators;
  return pipeline::create_session(eval_jsonl, generation_dirs, who, seed, session_dir).to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_cigli, m) {
  m.doc() = "Native core of the cigli package";

  py::register_exception<corpus::CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<pipeline::PipelineError>(m, "PipelineError", PyExc_ValueError);
  py::register_exception<metrics::MetricsError>(m, "MetricsError", PyExc_ValueError);
  py::register_exception<synth::SceneError>(m, "SceneError", PyExc_ValueError);
  static py::exception<evalserver::EvalError> eval_error(m, "EvalError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const evalserver::EvalError& e) {
      py::object err = py::reinterpret_borrow<py::object>(eval_error.ptr())(e.what());
      err.attr("status") = e.status();
      PyErr_SetObject(eval_error.ptr(), err.ptr());
    }
  });

  m.def("filter_caption", &filter_caption, py::arg("caption"));
  m.def("effective_config", &effective_config, py::arg("config_json"), py::arg("preset"));
  m.def("run_filter", &run_filter, py::arg("src"), py::arg("out"));
  m.def("run_synth", &run_synth, py::arg("config_json"), py::arg("preset"), py::arg("out_dir"));
  m.def("run_train", &run_train, py::arg("config_json"), py::arg("preset"), py::arg("mode"), py::arg("corpus_dir"),
        py::arg("out_dir"));
  m.def("run_evaluate", &run_evaluate, py::arg("config_json"), py::arg("preset"), py::arg("source"),
        py::arg("eval_jsonl"), py::arg("metrics_dir"), py::arg("out_file"));
  m.def("write_generations", &write_generations, py::arg("source"), py::arg("eval_jsonl"), py::arg("out_dir"),
        py::arg("seed") = 0);
  m.def("inception_score", &inception_score, py::arg("conditionals"), py::arg("n_splits"));
  m.def("auto_splits", &metrics::auto_splits, py::arg("n_images"), py::arg("n_classes"), py::arg("requested") = 10);
  m.def("verifier_scores", &verifier_scores, py::arg("captions"), py::arg("accepted"));
  m.def("create_session", &create_session, py::arg("eval_jsonl"), py::arg("generation_dirs"), py::arg("annotators"),
        py::arg("seed"), py::arg("session_dir"));

  py::class_<evalserver::Session>(m, "Session")
      .def_static(
          "open", [](const std::filesystem::path& manifest) { return evalserver::Session::open(manifest); },
          py::arg("manifest"))
      .def(
          "next_assignment",
          [](evalserver::Session& s, const std::string& annotator) -> std::string {
            const auto a = s.next_assignment(annotator);
            return a ? a->to_json().dump() : "null";
          },
          py::arg("annotator"))
      .def(
          "submit_rating",
          [](evalserver::Session& s, const std::string& record_json) {
            json j;
            try {
              j = json::parse(record_json);
            } catch (const json::parse_error&) {
              throw evalserver::EvalError(400, "rating is not valid JSON");
            }
            s.submit_rating(evalserver::RatingRecord::from_json(j));
          },
          py::arg("record_json"))
      .def("report", [](const evalserver::Session& s) { return s.report().to_json().dump(); })
      .def("image_bytes", [](const evalserver::Session& s, const std::string& key) { return py::bytes(s.image_bytes(key)); },
           py::arg("key"));
}
