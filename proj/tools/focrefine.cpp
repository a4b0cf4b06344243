// Copyright 2026 The focrefine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// focrefine: corpus generation, training, evaluation, simulation and the
// interactive service from one command line.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "focrefine/evalbench/bench.hpp"
#include "focrefine/learn/trainer.hpp"
#include "focrefine/serve/config.hpp"
#include "focrefine/serve/service.hpp"
#include "focrefine/synthdata/corpus.hpp"

namespace fs = std::filesystem;
using namespace focrefine;

namespace {

// Finds --config before full parsing so its values can seed flag defaults.
std::optional<std::string> prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

// A split directory has a manifest; a corpus root has <split>/manifest.tsv.
std::string split_dir(const std::string& corpus, const std::string& split) {
  if (fs::exists(fs::path(corpus) / "manifest.tsv")) return corpus;
  const auto p = fs::path(corpus) / split;
  if (fs::exists(p / "manifest.tsv")) return p.string();
  throw std::runtime_error("no manifest under " + corpus + " (or " + p.string() + ")");
}

std::shared_ptr<samlite::Model> load_model(const std::string& checkpoint, const serve::AppConfig& cfg,
                                           bool apply_refiner_overrides) {
  if (checkpoint.empty()) throw std::runtime_error("a checkpoint is required (--checkpoint or model.checkpoint)");
  if (!apply_refiner_overrides || (!cfg.refiner.window && !cfg.refiner.variant)) {
    return samlite::Model::load(checkpoint);
  }
  const auto saved = samlite::config_from_json(samlite::read_checkpoint(checkpoint).config_json);
  const auto rc = cfg.refiner_config(saved.refiner);
  if (rc.window != saved.refiner.window) {
    std::cerr << "warning: window " << rc.window << " differs from the checkpoint's " << saved.refiner.window
              << "; refiner weights start from initialization (identity)\n";
  }
  return samlite::Model::load(checkpoint, rc);
}

synthdata::Dataset load_data(const std::string& dir, int max_images, double only_contrast) {
  synthdata::LoadOptions lo;
  lo.max_images = max_images;
  lo.only_contrast = only_contrast;
  auto d = synthdata::load_split(dir, lo);
  if (d.samples.empty()) throw std::runtime_error("no samples in " + dir);
  return d;
}

void write_reports(const std::vector<evalbench::MetricsRecord>& recs, const fs::path& dir, const std::string& stem,
                   const evalbench::ReportOptions& ro) {
  fs::create_directories(dir);
  evalbench::report_emit(recs, evalbench::ReportFormat::kTable, (dir / (stem + "_noc.tsv")).string(), ro);
  evalbench::report_emit(recs, evalbench::ReportFormat::kJsonLines, (dir / (stem + "_records.jsonl")).string(), ro);
  evalbench::report_emit(recs, evalbench::ReportFormat::kHistogramTsv, (dir / (stem + "_stability.tsv")).string(),
                         ro);
}

serve::HttpServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  serve::AppConfig cfg;
  try {
    if (const auto path = serve::resolve_config_path(prescan_config(argc, argv))) cfg = serve::load_config(*path);
  } catch (const std::exception& e) {
    std::cerr << "focrefine: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"Focus-refined interactive segmentation: data, training, evaluation and service"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  std::string config_path;
  app.add_option("--config", config_path, "INI config file (default: $FOCREFINE_CONFIG)");

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
  synthdata::CorpusOptions co;
  std::string gen_out = "corpus";
  gen->add_option("--out", gen_out, "Corpus root")->capture_default_str();
  gen->add_option("--train", co.n_train, "Training scenes")->capture_default_str();
  gen->add_option("--eval", co.n_eval, "Held-out scenes")->capture_default_str();
  gen->add_option("--seed", co.seed, "Base seed")->capture_default_str();
  gen->add_option("--size", co.size, "Image side")->capture_default_str();
  gen->add_option("--max-objects", co.max_objects, "Objects per scene")->capture_default_str();
  gen->add_option("--contrast", co.contrast_mix, "Contrast mix")->capture_default_str();
  gen->add_flag("--overwrite", co.overwrite, "Replace existing splits");

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train stage 1 (backbone) or stage 2 (refiner)");
  learn::TrainConfig tc;
  std::string train_corpus = cfg.eval.corpus, init_ckpt, out_ckpt = cfg.model.checkpoint, preset = cfg.model.preset;
  std::uint64_t model_seed = cfg.model.seed;
  int max_images = -1;
  train->add_option("--corpus", train_corpus, "Corpus root or train split")->required(train_corpus.empty());
  train->add_option("--stage", tc.stage, "1 or 2")->capture_default_str();
  train->add_option("--steps", tc.steps, "Optimizer steps")->capture_default_str();
  train->add_option("--batch", tc.batch, "Episodes per step")->capture_default_str();
  train->add_option("--lr", tc.schedule.peak, "Peak learning rate")->capture_default_str();
  train->add_option("--lr-floor", tc.schedule.floor, "Learning rate at step 0")->capture_default_str();
  train->add_option("--warmup", tc.schedule.warmup, "Warmup steps")->capture_default_str();
  train->add_option("--power", tc.schedule.power, "Polynomial decay power")->capture_default_str();
  train->add_option("--seed", tc.seed, "Training seed")->capture_default_str();
  train->add_option("--init", init_ckpt, "Starting checkpoint (required for stage 2)");
  train->add_option("--out", out_ckpt, "Output checkpoint")->required(out_ckpt.empty());
  train->add_option("--preset", preset, "Model preset for a fresh stage-1 model")->capture_default_str();
  train->add_option("--model-seed", model_seed, "Initialization seed")->capture_default_str();
  train->add_option("--log", tc.log_path, "JSON-lines training log");
  train->add_option("--checkpoint-every", tc.checkpoint_every, "Periodic checkpoint interval")->capture_default_str();
  train->add_option("--probe-every", tc.probe_every, "IoU probe interval (0 disables)")->capture_default_str();
  train->add_option("--max-images", max_images, "Limit training images")->capture_default_str();
  train->add_option("--max-clicks", tc.max_clicks, "Click-count support")->capture_default_str();
  std::optional<int> train_window;
  std::string train_variant;
  train->add_option("--window", train_window, "Refiner window S (stage 2)");
  train->add_option("--variant", train_variant, "Refiner variant: full, dwin_only, pdyrelu_only (stage 2)");
  bool no_flip = false;
  train->add_flag("--no-flip", no_flip, "Disable horizontal-flip augmentation");

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "NoC, stability and optional SPC reports");
  std::string eval_ckpt = cfg.model.checkpoint, eval_corpus = cfg.eval.corpus, eval_variant, oracle = cfg.eval.oracle;
  std::vector<int> windows;
  bool no_refiner = !cfg.refiner.enabled, run_spc = false;
  double only_contrast = -1.0;
  int spc_reps = 3;
  eval->add_option("--corpus", eval_corpus, "Corpus root or split directory")->required(eval_corpus.empty());
  eval->add_option("--split", cfg.eval.split, "Split when --corpus is a root")->capture_default_str();
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required(eval_ckpt.empty());
  eval->add_option("--noc", cfg.eval.noc, "NoC threshold")->capture_default_str();
  eval->add_option("--cap", cfg.eval.cap, "Click cap")->capture_default_str();
  eval->add_option("--variant", eval_variant, "Refiner variant: full, dwin_only, pdyrelu_only");
  eval->add_option("--window", windows, "Refiner window size(s); several values run a sweep");
  eval->add_option("--refine-step", cfg.refiner.refine_step, "Refine step K")->capture_default_str();
  eval->add_option("--oracle", oracle, "center or random")->capture_default_str();
  eval->add_option("--max-samples", cfg.eval.max_samples, "Limit images")->capture_default_str();
  eval->add_option("--only-contrast", only_contrast, "Keep scenes of this contrast");
  eval->add_option("--out", cfg.eval.output, "Report directory")->capture_default_str();
  eval->add_flag("--no-refiner", no_refiner, "Evaluate the refiner-free pipeline");
  eval->add_flag("--spc", run_spc, "Also time seconds per click");
  eval->add_option("--spc-reps", spc_reps, "Timed repetitions for --spc")->capture_default_str();

  // simulate ---------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Write per-click IoU trajectories");
  std::string sim_ckpt = cfg.model.checkpoint, sim_corpus = cfg.eval.corpus, sim_out = "trajectories.jsonl";
  int sim_clicks = cfg.eval.clicks;
  bool sim_no_refiner = !cfg.refiner.enabled;
  double sim_contrast = -1.0;
  sim->add_option("--corpus", sim_corpus, "Corpus root or split directory")->required(sim_corpus.empty());
  sim->add_option("--split", cfg.eval.split, "Split when --corpus is a root")->capture_default_str();
  sim->add_option("--checkpoint", sim_ckpt, "Model checkpoint")->required(sim_ckpt.empty());
  sim->add_option("--clicks", sim_clicks, "Clicks per trajectory")->capture_default_str();
  sim->add_option("--oracle", oracle, "center or random")->capture_default_str();
  sim->add_option("--max-samples", cfg.eval.max_samples, "Limit images")->capture_default_str();
  sim->add_option("--only-contrast", sim_contrast, "Keep scenes of this contrast");
  sim->add_option("--out", sim_out, "Records file (JSON lines)")->capture_default_str();
  sim->add_flag("--no-refiner", sim_no_refiner, "Simulate the refiner-free pipeline");

  // serve ------------------------------------------------------------------
  auto* srv = app.add_subcommand("serve", "Run the HTTP session service");
  std::string srv_ckpt = cfg.model.checkpoint;
  srv->add_option("--checkpoint", srv_ckpt, "Model checkpoint");
  srv->add_option("--host", cfg.service.host, "Bind address")->capture_default_str();
  srv->add_option("--port", cfg.service.port, "Port")->capture_default_str();
  srv->add_option("--state-dir", cfg.service.state_dir, "Session log and uploads");
  srv->add_option("--corpus", cfg.service.corpus, "Corpus root for corpus-id sessions");
  srv->add_option("--threads", cfg.service.threads, "Worker threads")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      synthdata::build_corpus(gen_out, co);
      std::cout << "wrote " << co.n_train << " train and " << co.n_eval << " eval scenes to " << gen_out << '\n';
      return 0;
    }

    if (*train) {
      tc.schedule.total = tc.steps;
      tc.hflip = !no_flip;
      const auto data = load_data(split_dir(train_corpus, "train"), max_images, -1.0);
      std::shared_ptr<samlite::Model> model;
      if (!init_ckpt.empty()) {
        std::optional<refiner::Config> rc;
        if (train_window || !train_variant.empty()) {
          auto r = samlite::config_from_json(samlite::read_checkpoint(init_ckpt).config_json).refiner;
          if (train_window) r.window = *train_window;
          if (!train_variant.empty()) r.variant = refiner::variant_from_string(train_variant);
          rc = r;
        }
        model = samlite::Model::load(init_ckpt, rc);
      } else if (tc.stage == 2) {
        throw std::runtime_error("stage 2 needs a stage-1 checkpoint (--init)");
      } else {
        model = samlite::Model::create(samlite::ModelConfig::from_preset(preset), model_seed);
      }
      tc.checkpoint_path = out_ckpt;
      std::cout << "training stage " << tc.stage << " on " << data.samples.size() << " samples for " << tc.steps
                << " steps\n";
      const auto res = learn::train(*model, data, tc, [&](const learn::LogRecord& r) {
        if (r.step % 50 == 0 || r.iou_probe || r.step == tc.steps) std::cout << learn::to_json_line(r) << '\n';
      });
      std::cout << "saved " << out_ckpt << " (trained " << res.trained_checksum << ", frozen "
                << res.frozen_checksum << ")\n";
      return 0;
    }

    if (*eval) {
      if (!eval_variant.empty()) cfg.refiner.variant = refiner::variant_from_string(eval_variant);
      if (windows.empty() && cfg.refiner.window) windows.push_back(*cfg.refiner.window);
      const auto data = load_data(split_dir(eval_corpus, cfg.eval.split), cfg.eval.max_samples, only_contrast);
      evalbench::EvalOptions eo;
      eo.max_clicks = cfg.eval.cap;
      eo.mode = interact::oracle_mode_from_string(oracle);
      eo.use_refiner = !no_refiner;
      eo.refine_step = cfg.refiner.refine_step;
      evalbench::ReportOptions ro;
      ro.noc_thresholds = {0.85, cfg.eval.noc};
      if (cfg.eval.noc == 0.85) ro.noc_thresholds = {0.85};
      ro.cap = cfg.eval.cap;
      const std::vector<std::optional<int>> sweep =
          windows.empty() ? std::vector<std::optional<int>>{std::nullopt}
                          : std::vector<std::optional<int>>(windows.begin(), windows.end());
      for (const auto& w : sweep) {
        cfg.refiner.window = w;
        std::shared_ptr<const samlite::Model> model = load_model(eval_ckpt, cfg, true);
        const auto& rcfg = model->config().refiner;
        const std::string stem = (no_refiner ? std::string("baseline") : refiner::to_string(rcfg.variant)) + "_S" +
                                 std::to_string(rcfg.window);
        ro.label = stem;
        const auto recs = evalbench::evaluate(model, data, eo);
        write_reports(recs, cfg.eval.output, stem, ro);
        std::cout << evalbench::render_report(recs, evalbench::ReportFormat::kTable, ro);
        if (run_spc) {
          evalbench::SpcOptions so;
          so.repetitions = spc_reps;
          so.refine_step = eo.refine_step;
          std::vector<RgbImage> imgs(data.images.begin(), data.images.begin() + std::min<std::size_t>(3, data.images.size()));
          const auto rep = evalbench::spc_benchmark(model, imgs, so);
          std::ofstream(fs::path(cfg.eval.output) / (stem + "_spc.json")) << evalbench::spc_to_json(rep) << '\n';
          std::cout << evalbench::spc_to_json(rep) << '\n';
        }
      }
      return 0;
    }

    if (*sim) {
      const auto data = load_data(split_dir(sim_corpus, cfg.eval.split), cfg.eval.max_samples, sim_contrast);
      std::shared_ptr<const samlite::Model> model = load_model(sim_ckpt, cfg, true);
      evalbench::EvalOptions eo;
      eo.max_clicks = sim_clicks;
      eo.mode = interact::oracle_mode_from_string(oracle);
      eo.use_refiner = !sim_no_refiner;
      eo.refine_step = cfg.refiner.refine_step;
      const auto recs = evalbench::evaluate(model, data, eo);
      if (const auto parent = fs::path(sim_out).parent_path(); !parent.empty()) fs::create_directories(parent);
      evalbench::report_emit(recs, evalbench::ReportFormat::kJsonLines, sim_out);
      const auto st = evalbench::delta_iou_stability(recs);
      std::cout << "wrote " << recs.size() << " trajectories to " << sim_out << "; " << st.events.size()
                << " drops of at least 1% IoU over " << st.total_deltas << " click pairs\n";
      return 0;
    }

    if (*srv) {
      std::shared_ptr<const samlite::Model> model;
      if (!srv_ckpt.empty()) model = load_model(srv_ckpt, cfg, true);
      else std::cerr << "focrefine: no checkpoint; session creation will answer 503\n";
      serve::Service service(model, {cfg.service.state_dir, cfg.service.corpus, cfg.refiner.refine_step,
                                     cfg.refiner.enabled});
      if (const auto n = service.restore(); n > 0) std::cout << "restored " << n << " sessions\n";
      serve::HttpServer server(service, cfg.service.threads);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::cout << "listening on " << cfg.service.host << ":" << cfg.service.port << std::endl;
      server.run(cfg.service.host, cfg.service.port);
      g_server = nullptr;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "focrefine: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
