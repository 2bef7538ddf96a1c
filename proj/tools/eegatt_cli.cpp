// eegatt: generate, train, eval, benchmark, explain, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "eegatt/allocator.hpp"
#include "eegatt/eegatt.hpp"

namespace fs = std::filesystem;
using namespace eegatt;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

struct DataOptions {
  std::string task = "position";
  std::size_t subjects = 10;
  std::size_t samples_per_subject = 200;
  std::size_t electrodes = 128;
  std::size_t timepoints = 500;
  double noise_std = 10.0;
  std::uint64_t seed = 0;

  void add(CLI::App* app, const std::string& seed_flag = "--data-seed") {
    app->add_option("--task", task, "position | direction")->check(CLI::IsMember({"position", "direction"}));
    app->add_option("--subjects", subjects, "number of synthetic subjects")->check(CLI::PositiveNumber);
    app->add_option("--samples-per-subject", samples_per_subject)->check(CLI::PositiveNumber);
    app->add_option("--electrodes", electrodes)->check(CLI::PositiveNumber);
    app->add_option("--timepoints", timepoints)->check(CLI::PositiveNumber);
    app->add_option("--noise-std", noise_std, "sensor noise in microvolts")->check(CLI::NonNegativeNumber);
    app->add_option(seed_flag, seed, "synthetic data seed");
  }

  SynthConfig synth() const {
    SynthConfig c;
    c.task = dataset_task_from_string(task);
    c.n_subjects = subjects;
    c.samples_per_subject = samples_per_subject;
    c.n_electrodes = electrodes;
    c.n_timepoints = timepoints;
    c.noise_std = noise_std;
    c.seed = seed;
    return c;
  }
};

struct ModelOptions {
  std::string variant = "both";
  std::size_t blocks = 12;
  std::size_t residual_period = 3;
  std::size_t features = 64;
  std::size_t kernel = 64;
  std::size_t se_ratio = 4;
  std::size_t sa_dk = 64;
  std::size_t proj_dim = 128;
  std::string sa_pooling = "received";
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool with_variant = true) {
    if (with_variant) {
      app->add_option("--variant", variant, "cnn | se | sa | both")->check(CLI::IsMember({"cnn", "se", "sa", "both"}));
    }
    app->add_option("--blocks", blocks, "conv blocks")->check(CLI::PositiveNumber);
    app->add_option("--residual-period", residual_period)->check(CLI::PositiveNumber);
    app->add_option("--features", features, "hidden features per conv")->check(CLI::PositiveNumber);
    app->add_option("--kernel", kernel, "temporal kernel size")->check(CLI::PositiveNumber);
    app->add_option("--se-ratio", se_ratio)->check(CLI::PositiveNumber);
    app->add_option("--sa-dk", sa_dk)->check(CLI::PositiveNumber);
    app->add_option("--proj-dim", proj_dim)->check(CLI::PositiveNumber);
    app->add_option("--sa-pooling", sa_pooling)->check(CLI::IsMember({"received", "given"}));
    app->add_option("--model-seed", seed, "weight initialization seed");
  }

  ModelConfig config(TaskKind task, std::size_t electrodes, std::size_t timepoints) const {
    ModelConfig c;
    c.n_electrodes = electrodes;
    c.n_timepoints = timepoints;
    c.n_conv_blocks = blocks;
    c.residual_period = residual_period;
    c.hidden_features = features;
    c.kernel_size = kernel;
    c.use_se = variant == "se" || variant == "both";
    c.use_sa = variant == "sa" || variant == "both";
    c.task = task;
    c.se_ratio = se_ratio;
    c.sa_dk = sa_dk;
    c.proj_dim = proj_dim;
    c.sa_pooling = sa_pooling_from_string(sa_pooling);
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct TrainOptions {
  TrainConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber);
    app->add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber);
    app->add_option("--lr", cfg.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    app->add_option("--seed", cfg.seed, "training seed (shuffling)");
    app->add_option("--clip-grad-norm", cfg.clip_grad_norm, "0 disables")->check(CLI::NonNegativeNumber);
    app->add_option("--beta", cfg.smooth_l1_beta, "smooth-L1 beta")->check(CLI::PositiveNumber);
  }
};

void add_precision(CLI::App* app, std::string& precision) {
  app->add_option("--precision", precision, "double | float")->check(CLI::IsMember({"double", "float"}));
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Subcommand options that must be set either on the command line or in the config file.
std::vector<std::pair<CLI::App*, CLI::Option*>> g_required;

CLI::Option* required(CLI::App* app, CLI::Option* opt) {
  g_required.emplace_back(app, opt);
  return opt;
}

void add_config(CLI::App* app, std::string& path) {
  app->add_option("--config", path, "key=value file; command-line flags take precedence");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Fills options of `app` that were not given on the command line from a key=value file.
void apply_config(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    CLI::Option* opt = key == "config" ? nullptr : app->get_option_no_throw("--" + key);
    if (!opt) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void check_required(CLI::App* app) {
  for (const auto& [owner, opt] : g_required) {
    if (owner == app && opt->count() == 0) throw UsageError(opt->get_name() + " is required");
  }
}

TaskKind model_task(const std::string& flag, DatasetTask ds) {
  if (flag.empty()) return ds == DatasetTask::position ? TaskKind::position : TaskKind::angle;
  const TaskKind t = task_from_string(flag);
  if (dataset_task_for(t) != ds) throw std::invalid_argument("task " + flag + " does not match a " + to_string(ds) + " dataset");
  return t;
}

// ---------------------------------------------------------------------------

int cmd_generate(const DataOptions& d, double noisy_fraction, std::size_t noisy_per_sample, const std::string& layout_path,
                 const std::string& out) {
  std::optional<ElectrodeLayout> layout;
  if (!layout_path.empty()) layout = load_layout(layout_path);
  auto cfg = d.synth();
  if (layout) cfg.n_electrodes = layout->size();
  auto ds = synth_generate(cfg, layout ? &*layout : nullptr);
  if (noisy_fraction > 0) ds = inject_noisy_electrodes(std::move(ds), noisy_fraction, noisy_per_sample, d.seed);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.size() << " samples (" << ds.subjects().size() << " subjects) to " << out << '\n';
  return 0;
}

template <typename T>
int cmd_train(const std::string& data_path, const std::string& task_flag, std::uint64_t split_seed,
              const ModelOptions& m, TrainConfig t, const std::string& out_dir) {
  const auto ds = load_dataset(data_path);
  const auto split = split_by_subject(ds, {0.70, 0.15, 0.15}, split_seed);
  const auto mcfg = m.config(model_task(task_flag, ds.task), ds.n_electrodes, ds.n_timepoints);
  std::cout << "train " << split.train.size() << " / val " << split.val.size() << " / test " << split.test.size()
            << " samples, " << variant_label(mcfg.use_se, mcfg.use_sa) << '\n';
  auto run = train<T>(mcfg, t, split.train, split.val, [](std::size_t e, double loss, double val) {
    std::printf("epoch %3zu  train_loss %.6f  val %.6f\n", e, loss, val);
    std::fflush(stdout);
  });
  run.metrics.test = evaluate(run.best, split.test, t.px_per_degree);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_checkpoint(run.best, (dir / "checkpoint.acnn").string());
  write_text(dir / "metrics.json", dump(to_json(run.metrics)));
  std::printf("selected epoch %zu, best val %.6f, test %.6f, %.1f s\n", run.metrics.selected_epoch,
              run.metrics.best_val_metric, run.metrics.test->primary(), run.metrics.wall_clock_s);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split_name,
             std::uint64_t split_seed, const std::string& precision, const std::string& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  auto ds = load_dataset(data_path);
  if (split_name != "all") {
    auto split = split_by_subject(ds, {0.70, 0.15, 0.15}, split_seed);
    ds = split_name == "train" ? std::move(split.train) : split_name == "val" ? std::move(split.val) : std::move(split.test);
  }
  check_compatible(ckpt.config, ds, "evaluation");
  MetricReport rep;
  if (precision == "float") {
    auto model = model_from_checkpoint<float>(ckpt);
    rep = evaluate(model, ds);
  } else {
    rep = evaluate(ckpt, ds);
  }
  const std::string text = dump(to_json(rep));
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return 0;
}

template <typename T>
int cmd_benchmark(BenchmarkConfig cfg, const std::string& out_json, const std::string& out_text) {
  const auto table = run_benchmark<T>(cfg, [](const std::string& v, TaskKind task, std::size_t seed, const RunMetrics& m) {
    std::printf("%-12s %-9s seed %zu  test %.6f  (%.1f s)\n", v.c_str(), to_string(task).c_str(), seed,
                m.test ? m.test->primary() : 0.0, m.wall_clock_s);
    std::fflush(stdout);
  });
  const std::string text = to_text(table);
  std::cout << text;
  if (!out_json.empty()) write_text(out_json, dump(to_json(table)));
  if (!out_text.empty()) write_text(out_text, text);
  return 0;
}

std::vector<double> mean_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> m(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
  }
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

template <typename T>
int cmd_explain(const std::string& ckpt_path, const std::string& data_path, const std::string& mode,
                const std::string& norm, double tau, std::size_t sample, std::size_t component, std::size_t n_svg,
                const std::string& out_dir) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto ds = load_dataset(data_path);
  check_compatible(ckpt.config, ds, "explain");
  if (sample >= ds.size()) throw std::out_of_range("--sample exceeds dataset size");
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const auto& cfg = ckpt.config;

  if (!cfg.use_se && !cfg.use_sa) {
    const auto& sig = ds.samples[sample].signal;
    const auto map = lrp_epsilon(ckpt, std::vector<double>(sig.begin(), sig.end()), component);
    write_text(dir / "relevance.json", dump(to_json(map)));
    TopomapSpec spec{ds.layout, map.per_electrode(), {}, "LRP relevance, sample " + std::to_string(sample)};
    write_text(dir / "topomap_relevance.svg", render_topomap(spec));
    std::printf("relevance leakage %.3e over %zu electrodes\n", map.leakage(), map.electrodes);
    return 0;
  }
  auto model = model_from_checkpoint<T>(ckpt);
  const auto rep = attention_report(model, ds, summary_mode_from_string(mode),
                                    norm == "sum_to_one" ? NormalizeMode::sum_to_one : NormalizeMode::min_max, tau);
  write_text(dir / "attention.json", dump(to_json(rep)));
  TopomapSpec mean_spec{ds.layout, mean_rows(rep.normalized), rep.important, "Mean normalized attention"};
  write_text(dir / "topomap_mean.svg", render_topomap(mean_spec));
  for (std::size_t i = 0; i < std::min(n_svg, rep.normalized.size()); ++i) {
    const auto imp = important_electrodes({rep.normalized[i]});
    TopomapSpec s{ds.layout, rep.normalized[i], imp, "Attention, sample " + std::to_string(i)};
    char name[48];
    std::snprintf(name, sizeof name, "topomap_sample_%04zu.svg", i);
    write_text(dir / name, render_topomap(s));
  }
  std::printf("%zu samples, %zu important electrodes\n", rep.normalized.size(), rep.important.size());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto results = run_gradcheck_suite(seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-28s max rel err %.3e (tol %.0e)\n", r.passed() ? "ok" : "FAIL", r.name.c_str(), r.max_rel_error,
                r.tolerance);
    ok = ok && r.passed();
  }
  std::printf("%s: %zu checks\n", ok ? "gradcheck passed" : "gradcheck FAILED", results.size());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Attention-CNN EEG gaze estimation"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "synthesize an EEGS dataset");
  DataOptions gen_data;
  double gen_noisy = 0;
  std::size_t gen_noisy_n = 2;
  std::string gen_layout, gen_out;
  gen_data.add(gen, "--seed");
  gen->add_option("--noisy-fraction", gen_noisy, "fraction of samples with injected noisy electrodes")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--noisy-per-sample", gen_noisy_n)->check(CLI::PositiveNumber);
  gen->add_option("--layout", gen_layout, "electrode layout CSV (index,name,x,y)");
  required(gen, gen->add_option("--out,-o", gen_out, "output EEGS file"));
  std::string gen_config;
  add_config(gen, gen_config);

  // train
  auto* tr = app.add_subcommand("train", "train one model; writes checkpoint.acnn and metrics.json");
  std::string tr_data, tr_task, tr_out, tr_prec = "double";
  std::uint64_t tr_split_seed = 0;
  ModelOptions tr_model;
  TrainOptions tr_train;
  required(tr, tr->add_option("--data", tr_data, "EEGS dataset"));
  tr->add_option("--task", tr_task, "position | angle | amplitude")->check(CLI::IsMember({"position", "angle", "amplitude"}));
  tr->add_option("--split-seed", tr_split_seed, "subject split seed");
  required(tr, tr->add_option("--out-dir", tr_out, "run directory"));
  tr_model.add(tr);
  tr_train.add(tr);
  add_precision(tr, tr_prec);
  std::string tr_config;
  add_config(tr, tr_config);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint; prints MetricReport JSON");
  std::string ev_ckpt, ev_data, ev_split = "all", ev_out, ev_prec = "double";
  std::uint64_t ev_split_seed = 0;
  required(ev, ev->add_option("--checkpoint", ev_ckpt));
  required(ev, ev->add_option("--data", ev_data));
  ev->add_option("--split", ev_split, "all | train | val | test")->check(CLI::IsMember({"all", "train", "val", "test"}));
  ev->add_option("--split-seed", ev_split_seed);
  ev->add_option("--out,-o", ev_out, "write JSON here instead of stdout");
  add_precision(ev, ev_prec);
  std::string ev_config;
  add_config(ev, ev_config);

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "four-variant ablation over seeds on synthetic data");
  DataOptions bm_data;
  ModelOptions bm_model;
  TrainOptions bm_train;
  std::size_t bm_seeds = 3, bm_noisy_n = 2;
  double bm_noisy = 0;
  std::string bm_json, bm_text, bm_prec = "double";
  bm_data.add(bm);
  bm_model.add(bm, false);
  bm_train.add(bm);
  bm->add_option("--seeds", bm_seeds, "independent seeds per variant")->check(CLI::PositiveNumber);
  bm->add_option("--noisy-fraction", bm_noisy)->check(CLI::Range(0.0, 1.0));
  bm->add_option("--noisy-per-sample", bm_noisy_n)->check(CLI::PositiveNumber);
  bm->add_option("--out-json", bm_json);
  bm->add_option("--out-text", bm_text);
  add_precision(bm, bm_prec);
  std::string bm_config;
  add_config(bm, bm_config);

  // explain
  auto* ex = app.add_subcommand("explain", "attention report or LRP relevance with topomaps");
  std::string ex_ckpt, ex_data, ex_mode = "sa_only", ex_norm = "min_max", ex_out, ex_prec = "double";
  double ex_tau = kDefaultAttentionThreshold;
  std::size_t ex_sample = 0, ex_component = 0, ex_svg = 4;
  required(ex, ex->add_option("--checkpoint", ex_ckpt));
  required(ex, ex->add_option("--data", ex_data));
  ex->add_option("--mode", ex_mode, "sa_only | se_mean | all_mean")->check(CLI::IsMember({"sa_only", "se_mean", "all_mean"}));
  ex->add_option("--normalize", ex_norm, "min_max | sum_to_one")->check(CLI::IsMember({"min_max", "sum_to_one"}));
  ex->add_option("--tau", ex_tau, "attention threshold");
  ex->add_option("--sample", ex_sample, "sample explained by LRP");
  ex->add_option("--component", ex_component, "output component explained by LRP");
  ex->add_option("--svg-samples", ex_svg, "per-sample attention topomaps to write");
  required(ex, ex->add_option("--out-dir", ex_out));
  add_precision(ex, ex_prec);
  std::string ex_config;
  add_config(ex, ex_config);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and a tiny model");
  std::uint64_t gc_seed = 2024;
  gc->add_option("--seed", gc_seed);
  std::string gc_config;
  add_config(gc, gc_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::pair<CLI::App*, std::string*> subs[] = {{gen, &gen_config}, {tr, &tr_config}, {ev, &ev_config},
                                                       {bm, &bm_config},   {ex, &ex_config}, {gc, &gc_config}};
    for (const auto& [sub, cfg] : subs) {
      if (!*sub) continue;
      apply_config(sub, *cfg);
      check_required(sub);
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_generate(gen_data, gen_noisy, gen_noisy_n, gen_layout, gen_out);
    if (*tr) {
      return tr_prec == "float" ? cmd_train<float>(tr_data, tr_task, tr_split_seed, tr_model, tr_train.cfg, tr_out)
                                : cmd_train<double>(tr_data, tr_task, tr_split_seed, tr_model, tr_train.cfg, tr_out);
    }
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_split_seed, ev_prec, ev_out);
    if (*bm) {
      BenchmarkConfig cfg;
      cfg.data = bm_data.synth();
      cfg.task = cfg.data.task;
      cfg.n_seeds = bm_seeds;
      cfg.noisy_fraction = bm_noisy;
      cfg.noisy_per_sample = bm_noisy_n;
      cfg.model = bm_model.config(TaskKind::position, bm_data.electrodes, bm_data.timepoints);
      cfg.train = bm_train.cfg;
      return bm_prec == "float" ? cmd_benchmark<float>(cfg, bm_json, bm_text) : cmd_benchmark<double>(cfg, bm_json, bm_text);
    }
    if (*ex) {
      return ex_prec == "float"
                 ? cmd_explain<float>(ex_ckpt, ex_data, ex_mode, ex_norm, ex_tau, ex_sample, ex_component, ex_svg, ex_out)
                 : cmd_explain<double>(ex_ckpt, ex_data, ex_mode, ex_norm, ex_tau, ex_sample, ex_component, ex_svg, ex_out);
    }
    if (*gc) return cmd_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
