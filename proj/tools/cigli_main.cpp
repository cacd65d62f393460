#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <json.hpp>

#include "cigli/pipeline.hpp"

using namespace cigli;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_file;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON run config (flags override it)")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "Base settings before the config file")->check(CLI::IsMember({"desk", "small"}));
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config and CIGLI_SEED)");
  cmd->add_flag("--quiet", c.quiet, "No progress output");
}

pipeline::RunConfig effective_config(const Common& c) {
  const auto base = pipeline::RunConfig::preset(c.preset);
  auto cfg = c.config_file.empty() ? base : pipeline::RunConfig::load(c.config_file, base);
  cfg.seed = pipeline::resolve_seed(c.seed, cfg.seed, std::getenv("CIGLI_SEED"));
  return cfg;
}

pipeline::ProgressFn progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& stage, const json& info) { std::cerr << "[" << stage << "] " << info.dump() << "\n"; };
}

std::vector<synth::SynthExample> load_eval(const std::string& eval_file) {
  if (eval_file.empty()) throw pipeline::PipelineError("--eval is required");
  return synth::load_examples(eval_file);
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cigli: caption + first image -> second image generation, evaluation and human rating"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // filter
  auto* filter = app.add_subcommand("filter", "Keep TRUE NLVR2 points whose captions span both images");
  std::string filter_in, filter_out;
  filter->add_option("--in", filter_in, "NLVR2-style JSONL")->required()->check(CLI::ExistingFile);
  filter->add_option("--out", filter_out, "Filtered JSONL (stats go to <out>.stats.json)")->required();

  // synth
  Common synth_c;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic counting corpus");
  std::string synth_out;
  std::optional<int> synth_size;
  synth_cmd->add_option("--out", synth_out, "Corpus directory")->required();
  synth_cmd->add_option("--size", synth_size, "Number of examples");
  add_common(synth_cmd, synth_c);

  // train
  Common train_c;
  auto* train_cmd = app.add_subcommand("train", "Train a generator (text_only, concat, sum) or the metric models (metrics)");
  std::string train_corpus, train_out, train_mode;
  std::optional<int> train_epochs;
  train_cmd->add_option("--corpus", train_corpus, "Corpus directory written by synth")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--mode", train_mode, "What to train")
      ->required()
      ->check(CLI::IsMember({"text_only", "concat", "sum", "metrics"}));
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->add_option("--epochs", train_epochs, "Generator epochs");
  add_common(train_cmd, train_c);

  // generate
  Common gen_c;
  auto* gen_cmd = app.add_subcommand("generate", "Write second images for an eval split");
  std::string gen_ckpt, gen_eval, gen_out, gen_mode;
  gen_cmd->add_option("--ckpt", gen_ckpt, "Run directory from train")->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--mode", gen_mode, "gold or noise instead of a checkpoint");
  gen_cmd->add_option("--eval", gen_eval, "Eval JSONL")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  add_common(gen_cmd, gen_c);

  // evaluate
  Common eval_c;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score generated second images with the verifier and classifier");
  std::string ev_ckpt, ev_mode, ev_eval, ev_metrics, ev_out, ev_cache;
  eval_cmd->add_option("--ckpt", ev_ckpt, "Run directory from train")->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--mode", ev_mode, "Model mode (checked against the checkpoint), or gold / noise");
  eval_cmd->add_option("--eval", ev_eval, "Eval JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--metrics", ev_metrics, "Directory from `train --mode metrics` (default: <ckpt>/../metrics)");
  eval_cmd->add_option("--out", ev_out, "MetricReport JSON (default: <ckpt>/report.json)");
  eval_cmd->add_option("--cache", ev_cache, "Also keep the generated PNGs here");
  add_common(eval_cmd, eval_c);

  // serve
  Common serve_c;
  auto* serve_cmd = app.add_subcommand("serve", "Run the blind human-evaluation server");
  std::string sv_session, sv_host, sv_static, sv_eval;
  std::optional<int> sv_port;
  std::vector<std::string> sv_gens, sv_annotators;
  bool sv_create_only = false;
  serve_cmd->add_option("--session", sv_session, "Session manifest.json")->required();
  serve_cmd->add_option("--port", sv_port, "Port (0 picks a free one)");
  serve_cmd->add_option("--host", sv_host, "Bind address");
  serve_cmd->add_option("--static", sv_static, "UI bundle directory")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--eval", sv_eval, "Create the session from this eval JSONL")->check(CLI::ExistingFile);
  serve_cmd->add_option("--gen", sv_gens, "TAG=DIR generation directory (repeatable) for session creation");
  serve_cmd->add_option("--annotators", sv_annotators, "Annotator ids for session creation")->delimiter(',');
  serve_cmd->add_flag("--create-only", sv_create_only, "Write the session and exit");
  add_common(serve_cmd, serve_c);

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarise metric reports or a human-evaluation session");
  std::vector<std::string> rp_metrics;
  std::string rp_session, rp_out;
  report_cmd->add_option("--metrics", rp_metrics, "MetricReport JSON files")->check(CLI::ExistingFile);
  report_cmd->add_option("--session", rp_session, "Session manifest.json")->check(CLI::ExistingFile);
  report_cmd->add_option("--out", rp_out, "Write here instead of stdout");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
    if (!known) {
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*filter) {
      const auto stats = pipeline::run_filter(filter_in, filter_out);
      std::cout << stats.to_json().dump(2) << "\n";
      return 0;
    }

    if (*synth_cmd) {
      auto cfg = effective_config(synth_c);
      if (synth_size) cfg.synth.size = *synth_size;
      cfg.finalize();
      const auto corp = pipeline::run_synth(cfg, synth_out);
      std::cout << json{{"train", corp.train.size()}, {"val", corp.val.size()}, {"eval", corp.eval.size()}}.dump() << "\n";
      return 0;
    }

    if (*train_cmd) {
      auto cfg = effective_config(train_c);
      if (train_epochs) cfg.fusion.epochs = *train_epochs;
      cfg.finalize();
      if (train_mode == "metrics") {
        pipeline::run_train_metrics(cfg, train_corpus, train_out, progress_for(train_c));
      } else {
        pipeline::run_train(cfg, fusion::parse_mode(train_mode), train_corpus, train_out, progress_for(train_c));
      }
      return 0;
    }

    if (*gen_cmd) {
      const auto cfg = effective_config(gen_c);
      const auto eval = load_eval(gen_eval);
      if (!gen_ckpt.empty() == !gen_mode.empty()) throw pipeline::PipelineError("give exactly one of --ckpt or --mode");
      if (!gen_ckpt.empty()) {
        const auto g = pipeline::Generator::load(gen_ckpt);
        pipeline::write_generations(g.model_tag(), pipeline::generator_source(g), eval, gen_out);
      } else {
        pipeline::write_generations(gen_mode, pipeline::baseline_source(gen_mode, cfg.seed_value()), eval, gen_out);
      }
      return 0;
    }

    if (*eval_cmd) {
      auto cfg = effective_config(eval_c);
      const auto eval = load_eval(ev_eval);
      std::optional<pipeline::Generator> g;
      std::string tag = ev_mode;
      metrics::ImageSource source;
      if (!ev_ckpt.empty()) {
        g = pipeline::Generator::load(ev_ckpt);
        if (!ev_mode.empty() && ev_mode != g->model_tag())
          throw pipeline::PipelineError("--mode " + ev_mode + " does not match the checkpoint's mode " + g->model_tag());
        tag = g->model_tag();
        source = pipeline::generator_source(*g);
      } else if (ev_mode == "gold" || ev_mode == "noise") {
        source = pipeline::baseline_source(ev_mode, cfg.seed_value());
      } else {
        throw pipeline::PipelineError("give --ckpt, or --mode gold / noise");
      }
      if (ev_metrics.empty()) {
        if (ev_ckpt.empty()) throw pipeline::PipelineError("--metrics is required without --ckpt");
        ev_metrics = (fs::path(ev_ckpt).lexically_normal().parent_path() / "metrics").string();
      }
      if (ev_out.empty()) {
        if (ev_ckpt.empty()) throw pipeline::PipelineError("--out is required without --ckpt");
        ev_out = (fs::path(ev_ckpt) / "report.json").string();
      }
      const auto models = pipeline::MetricModels::load(ev_metrics);
      const auto report = pipeline::run_evaluate(cfg, tag, source, eval, models, ev_out, ev_cache);
      std::cout << report.dump();
      return 0;
    }

    if (*serve_cmd) {
      auto cfg = effective_config(serve_c);
      if (sv_port) cfg.serve.port = *sv_port;
      if (!sv_host.empty()) cfg.serve.host = sv_host;
      if (!sv_static.empty()) cfg.serve.static_dir = sv_static;
      if (!sv_annotators.empty()) cfg.serve.annotators = sv_annotators;
      cfg.finalize();
      const fs::path manifest(sv_session);
      if (!sv_eval.empty()) {
        if (fs::exists(manifest)) throw pipeline::PipelineError(manifest.string() + " already exists");
        std::map<std::string, fs::path> gens;
        for (const auto& g : sv_gens) {
          const auto eq = g.find('=');
          if (eq == std::string::npos || eq == 0) throw pipeline::PipelineError("--gen expects TAG=DIR, got " + g);
          gens[g.substr(0, eq)] = g.substr(eq + 1);
        }
        if (gens.empty()) throw pipeline::PipelineError("session creation needs at least one --gen TAG=DIR");
        pipeline::create_session(sv_eval, gens, cfg.serve.annotators, cfg.seed_value(), manifest.parent_path());
        pipeline::write_config(cfg, manifest.parent_path());
        std::cerr << "session written to " << manifest.string() << "\n";
        if (sv_create_only) return 0;
      }
      auto session = evalserver::Session::open(manifest);
      evalserver::HttpServer server(*session, {cfg.serve.host, cfg.serve.port, cfg.serve.static_dir});
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int port = server.start();
      std::cerr << "serving on http://" << cfg.serve.host << ":" << port << "\n";
      std::cout << json{{"port", port}}.dump() << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      server.stop();
      return 0;
    }

    if (*report_cmd) {
      if (rp_metrics.empty() == rp_session.empty()) throw pipeline::PipelineError("give --metrics or --session");
      std::string text;
      if (!rp_session.empty()) {
        text = evalserver::Session::open(rp_session)->report().to_json().dump(2) + "\n";
      } else {
        std::vector<metrics::MetricReport> reports;
        for (const auto& f : rp_metrics) {
          std::ifstream in(f);
          reports.push_back(metrics::MetricReport::from_json(json::parse(in)));
        }
        text = pipeline::report_table(reports);
      }
      if (rp_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(rp_out, std::ios::binary) << text;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
