#include "tsvr/cli.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsvr/error.hpp"
#include "tsvr/gradcheck.hpp"
#include "tsvr/inference.hpp"
#include "tsvr/run_config.hpp"
#include "tsvr/simd.hpp"
#include "tsvr/training.hpp"

namespace tsvr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

json read_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

json loss_json(const LossReport& r) {
  json j{{"iteration", r.iteration}, {"pre", r.pre},     {"ent", r.ent},
         {"rec", r.rec},             {"total", r.total}, {"clamped_scores", r.clamped_scores}};
  j["align"] = r.align ? json(*r.align) : json(nullptr);
  return j;
}

json accuracy_json(const PredictionResult& p, double entropy) {
  return json{{"mca", p.mca},
              {"per_class_accuracy", p.per_class_accuracy},
              {"overall_accuracy", p.overall_accuracy},
              {"average_entropy", entropy}};
}

void check_model_fits(const Model& model, const ZslDataset& data) {
  if (model.dims.feature_dim != data.feature_dim()) {
    throw ValidationError("checkpoint expects d=" + std::to_string(model.dims.feature_dim) +
                          " but the dataset has d=" + std::to_string(data.feature_dim()));
  }
  if (model.dims.attribute_dim != data.attribute_dim()) {
    throw ValidationError("checkpoint expects r=" + std::to_string(model.dims.attribute_dim) +
                          " but the dataset has r=" + std::to_string(data.attribute_dim()));
  }
}

// ---- synth ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string format = "mtxb";
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  SyntheticSpec spec;
  if (!a.spec.empty()) spec = synthetic_spec_from_json(read_json(a.spec, "synthetic spec"));
  if (a.seed) spec.seed = *a.seed;
  const SyntheticData syn = generate_synthetic(spec);
  const fs::path dir = a.out;
  const DatasetManifest m = save_dataset(syn.dataset, dir, parse_matrix_format(a.format));
  save_matrix_mtxb(syn.projection, dir / "projection.mtxb");
  write_text(dir / "spec.json", synthetic_spec_to_json(spec).dump(2) + "\n");
  err << dataset_summary(syn.dataset) << "\n";
  out << "wrote " << (dir / "manifest.json").string() << "\n";
  (void)m;
  return kExitOk;
}

// ---- train ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string resume;
  std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(a.config, a.overrides);
  const fs::path dir = a.out.empty() ? cfg.resolve(cfg.output_dir) : fs::path(a.out);
  const ZslDataset data = load_run_dataset(cfg);
  err << dataset_summary(data) << "\n";
  const TrainingView view(data);

  TrainingState state;
  if (a.resume.empty()) {
    state = init_training(cfg.train, view);
  } else {
    state = load_checkpoint(a.resume);
    check_model_fits(state.model, data);
    state.config.max_iterations = cfg.train.max_iterations;
    err << "resuming at iteration " << state.iteration << "\n";
  }

  fs::create_directories(dir);
  std::ofstream loss_csv(dir / "loss.csv", std::ios::trunc);
  if (!loss_csv) throw InputError("cannot write " + (dir / "loss.csv").string());
  loss_csv << loss_csv_header() << "\n";

  const auto start = std::chrono::steady_clock::now();
  std::optional<LossReport> last;
  const std::size_t log_every = cfg.train.log_every;
  run_training(state, view, [&](const LossReport& r) {
    loss_csv << loss_csv_row(r) << "\n";
    last = r;
    if (r.iteration % log_every == 0 || r.iteration == state.config.max_iterations) {
      char line[200];
      std::snprintf(line, sizeof(line), "iter %zu  pre %.6f  ent %.6f  rec %.6f  total %.6f\n",
                    r.iteration, r.pre, r.ent, r.rec, r.total);
      err << line;
    }
  });
  loss_csv.close();
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  save_checkpoint(state, dir / "checkpoint.tsvr");
  json summary{{"config", run_config_to_json(cfg)},
               {"overrides", cfg.overrides},
               {"seed", cfg.train.seed},
               {"iterations", state.iteration},
               {"wall_time_seconds", seconds},
               {"kernel_isa", std::string(simd::isa_name(simd::active_isa()))},
               {"dataset", dataset_summary(data)}};
  summary["final_losses"] = last ? loss_json(*last) : json(nullptr);
  if (!a.resume.empty()) summary["resumed_from"] = a.resume;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "trained " << state.iteration << " iterations in " << seconds << " s; checkpoint "
      << (dir / "checkpoint.tsvr").string() << "\n";
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::vector<std::string> overrides;
  bool no_label_prop = false;
  std::string out;
  std::string dump_hidden;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  const fs::path dir = a.out.empty() ? cfg.resolve(cfg.output_dir) : fs::path(a.out);
  const TrainingState state = load_checkpoint(a.checkpoint);
  const ZslDataset data = load_run_dataset(cfg);
  check_model_fits(state.model, data);
  const std::size_t kt = data.target_categories();

  const ScoreMatrix raw = score_target(state.model, data);
  const PredictionResult raw_result = mca(predict_argmax(raw.scores), data.target_labels, kt);

  json metrics{{"seed", state.config.seed},
               {"iterations", state.iteration},
               {"train_config", train_config_to_json(state.config)},
               {"config", run_config_to_json(cfg)},
               {"target_classes", data.target_classes},
               {"raw", accuracy_json(raw_result, average_entropy(raw.logits))}};

  const bool refine = cfg.label_propagation.enabled && !a.no_label_prop;
  const Matrix* final_scores = &raw.scores;
  const PredictionResult* final_result = &raw_result;
  std::optional<RefinedScores> refined;
  std::optional<PredictionResult> refined_result;
  if (refine) {
    refined = label_propagation(raw, data.target_features, cfg.label_propagation);
    refined_result = mca(predict_argmax(refined->scores), data.target_labels, kt);
    if (!refined->isolated.empty()) {
      err << "label propagation: " << refined->isolated.size()
          << " target images have zero-norm features and keep their raw scores\n";
    }
    json r = accuracy_json(*refined_result, NAN);
    r.erase("average_entropy");
    r["isolated_images"] = refined->isolated;
    r["k"] = cfg.label_propagation.k;
    r["omega"] = cfg.label_propagation.omega;
    r["iters"] = cfg.label_propagation.iterations;
    metrics["refined"] = r;
    final_scores = &refined->scores;
    final_result = &*refined_result;
  }
  metrics["label_propagation"] = refine;
  metrics["mca"] = final_result->mca;
  metrics["per_class_accuracy"] = final_result->per_class_accuracy;

  std::ostringstream csv;
  csv << "image_index,predicted_category,score\n";
  char line[96];
  for (std::size_t i = 0; i < final_result->predicted_labels.size(); ++i) {
    const std::size_t c = final_result->predicted_labels[i];
    std::snprintf(line, sizeof(line), "%zu,%zu,%.17g\n", i, c, (*final_scores)(i, c));
    csv << line;
  }
  write_text(dir / "predictions.csv", csv.str());
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  if (!a.dump_hidden.empty()) {
    dump_hidden_activations(state.model, data, raw_result.predicted_labels, a.dump_hidden);
  }

  char buf[128];
  std::snprintf(buf, sizeof(buf), "MCA raw: %.4f\n", raw_result.mca);
  out << buf;
  if (refined_result) {
    std::snprintf(buf, sizeof(buf), "MCA refined: %.4f\n", refined_result->mca);
    out << buf;
  }
  return kExitOk;
}

// ---- ablate --------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string modes = "dsbn,singlebn,mmd,dann,none";
  std::size_t seeds = 5;
  std::size_t jobs = 1;
  std::string out;
};

struct AblationRun {
  AlignmentMode mode;
  std::uint64_t seed;
  std::optional<double> mca;
  std::optional<double> refined_mca;
  std::string error;
};

void run_one(AblationRun& run, const RunConfig& base, const ZslDataset& data) {
  TrainConfig cfg = base.train;
  cfg.alignment_mode = run.mode;
  cfg.seed = run.seed;
  try {
    const TrainResult result = train(data, cfg);
    const ScoreMatrix raw = score_target(result.model, data);
    run.mca = mca(predict_argmax(raw.scores), data.target_labels, data.target_categories()).mca;
    if (base.label_propagation.enabled) {
      const RefinedScores r = label_propagation(raw, data.target_features, base.label_propagation);
      run.refined_mca =
          mca(predict_argmax(r.scores), data.target_labels, data.target_categories()).mca;
    }
  } catch (const std::exception& e) {
    run.error = e.what();
  }
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  const fs::path dir = a.out.empty() ? cfg.resolve(cfg.output_dir) : fs::path(a.out);
  std::vector<AlignmentMode> modes;
  std::stringstream ss(a.modes);
  for (std::string m; std::getline(ss, m, ',');) {
    if (!m.empty()) modes.push_back(parse_alignment_mode(m));
  }
  if (modes.empty()) throw ConfigError("--modes lists no alignment modes");
  if (a.seeds == 0) throw ConfigError("--seeds must be at least 1");
  const ZslDataset data = load_run_dataset(cfg);
  err << dataset_summary(data) << "\n";

  std::vector<AblationRun> runs;
  for (AlignmentMode m : modes) {
    for (std::size_t s = 0; s < a.seeds; ++s) runs.push_back({m, cfg.train.seed + s, {}, {}, {}});
  }
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      run_one(runs[i], cfg, data);
      std::lock_guard lock(log_mutex);
      err << alignment_mode_name(runs[i].mode) << " seed " << runs[i].seed << ": "
          << (runs[i].mca ? std::to_string(*runs[i].mca) : "failed: " + runs[i].error) << "\n";
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(a.jobs, 1, runs.size());
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ostringstream table, per_run;
  table << "mode,runs,failed,mca_mean,mca_std";
  if (cfg.label_propagation.enabled) table << ",refined_mca_mean,refined_mca_std";
  table << "\n";
  per_run << "mode,seed,mca,refined_mca,status\n";
  char buf[256];
  for (AlignmentMode m : modes) {
    std::vector<double> values, refined;
    std::size_t failed = 0;
    for (const auto& r : runs) {
      if (r.mode != m) continue;
      if (r.mca) {
        values.push_back(*r.mca);
        if (r.refined_mca) refined.push_back(*r.refined_mca);
      } else {
        ++failed;
      }
      std::string status = r.error;
      std::replace(status.begin(), status.end(), ',', ';');
      std::replace(status.begin(), status.end(), '\n', ' ');
      per_run << alignment_mode_name(m) << "," << r.seed << ","
              << (r.mca ? std::to_string(*r.mca) : "") << ","
              << (r.refined_mca ? std::to_string(*r.refined_mca) : "") << ","
              << (r.mca ? "ok" : "failed: " + status) << "\n";
    }
    table << alignment_mode_name(m) << "," << values.size() + failed << "," << failed;
    if (values.empty()) {
      table << ",failed,failed";
    } else {
      const auto [mean, sd] = mean_std(values);
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", mean, sd);
      table << buf;
    }
    if (cfg.label_propagation.enabled) {
      if (refined.empty()) {
        table << ",failed,failed";
      } else {
        const auto [mean, sd] = mean_std(refined);
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", mean, sd);
        table << buf;
      }
    }
    table << "\n";
  }
  write_text(dir / "ablation.csv", table.str());
  write_text(dir / "ablation_runs.csv", per_run.str());
  out << table.str();
  return kExitOk;
}

// ---- gradcheck -----------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;
  std::string corrupt;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  GradcheckOptions options;
  for (std::size_t i = 0; i < a.seeds; ++i) options.seeds.push_back(a.seed + i);
  options.corrupt_component = a.corrupt;
  if (!a.corrupt.empty()) {
    const auto names = gradcheck_components();
    if (std::find(names.begin(), names.end(), a.corrupt) == names.end()) {
      throw ConfigError("unknown gradcheck component '" + a.corrupt + "'");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const GradcheckReport report = run_gradcheck(options);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << format_gradcheck_report(report);
  out << report.components.size() << " components, " << a.seeds << " seeds, " << seconds << " s\n";
  if (!report.passed) {
    err << "gradient check failed:";
    for (const auto& name : report.failing()) err << " " << name;
    err << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transductive zero-shot recognition with domain-specific batch normalization"};
  app.require_subcommand(1);
  std::string isa = "auto";
  app.add_option("--isa", isa, "kernel path: auto, scalar or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset and its manifest");
  s->add_option("--spec", synth.spec, "JSON synthetic spec (defaults when omitted)");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "overrides the spec seed");
  s->add_option("--format", synth.format, "block format: mtxb or csv")
      ->check(CLI::IsMember({"mtxb", "csv"}));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "run config JSON")->required();
  t->add_option("--override", tr.overrides, "key=value, repeatable")->take_all();
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_option("--out", tr.out, "output directory (default: output_dir of the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score the target domain and report MCA");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--config", ev.config, "run config JSON")->required();
  e->add_option("--override", ev.overrides, "key=value, repeatable")->take_all();
  e->add_flag("--no-label-prop", ev.no_label_prop, "report only the raw argmax prediction");
  e->add_option("--out", ev.out, "output directory (default: output_dir of the config)");
  e->add_option("--dump-hidden", ev.dump_hidden, "write hidden activations (MTXB) here");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "train and evaluate several alignment modes");
  b->add_option("--config", ab.config, "run config JSON")->required();
  b->add_option("--override", ab.overrides, "key=value, repeatable")->take_all();
  b->add_option("--modes", ab.modes, "comma-separated alignment modes");
  b->add_option("--seeds", ab.seeds, "runs per mode (seeds seed, seed+1, ...)");
  b->add_option("--jobs", ab.jobs, "concurrent runs");
  b->add_option("--out", ab.out, "output directory (default: output_dir of the config)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  g->add_option("--seed", gc.seed, "first seed");
  g->add_option("--seeds", gc.seeds, "number of seeds")->check(CLI::PositiveNumber);
  g->add_option("--corrupt", gc.corrupt, "perturb one component's gradient (negative control)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    return kExitInputError;
  }

  try {
    if (isa == "scalar") simd::set_active_isa(simd::Isa::Scalar);
    if (isa == "avx2") simd::set_active_isa(simd::Isa::Avx2);
    if (s->parsed()) return cmd_synth(synth, out, err);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (b->parsed()) return cmd_ablate(ab, out, err);
    if (g->parsed()) return cmd_gradcheck(gc, out, err);
  } catch (const InputError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInputError;
  } catch (const NumericError& ex) {
    err << "numeric abort: " << ex.what() << "\n";
    return kExitNumericAbort;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitInputError;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

int run_cli(int argc, char** argv) {
  tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace tsvr
