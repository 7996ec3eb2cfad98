// mgrade: sequence-modeling toolkit CLI.
//
// Subcommands: gen (datasets), train, eval, export-hidden, memplan,
// gradcheck. Every command resolves its configuration, runs, and leaves a
// manifest.json in the output directory recording inputs, outputs and
// timings. Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgrade/analysis.hpp"
#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"
#include "mgrade/gradaudit.hpp"
#include "mgrade/jsonutil.hpp"
#include "mgrade/manifest.hpp"
#include "mgrade/memplan.hpp"
#include "mgrade/model.hpp"
#include "mgrade/tasks/flipflop.hpp"
#include "mgrade/tasks/images.hpp"
#include "mgrade/tasks/lorenz.hpp"
#include "mgrade/training.hpp"
#include "mgrade/version.hpp"

namespace fs = std::filesystem;
using namespace mgrade;

namespace {

// ---------------------------------------------------------------------------
// Config parsing (strict keys, nearest-name suggestions)
// ---------------------------------------------------------------------------

NetworkConfig parse_model_config(const nlohmann::json& j) {
  check_keys(j, {"layers", "hidden", "input", "output", "conv", "head", "readout", "recurrence",
                 "use_mlp", "use_norm", "gru_skip", "mlp_skip", "decoder_bias", "norm_eps",
                 "gate_bias_init"},
             "model.");
  if (j.contains("conv")) {
    check_keys(j.at("conv"),
               {"variant", "taps", "dilation", "base_dilation", "max_delay", "sigma",
                "position_init", "train_sigma"},
               "model.conv.");
  }
  return config_from_json(j);
}

TrainOptions parse_train_options(const nlohmann::json& j) {
  check_keys(j, {"epochs", "batch_size", "base_lr", "warmup_frac", "beta1", "beta2", "adam_eps",
                 "weight_decay", "clip_norm", "seed", "limit", "loss", "metric_target",
                 "metric_higher_is_better"},
             "train.");
  TrainOptions o;
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.base_lr = j.value("base_lr", o.base_lr);
  o.warmup_frac = j.value("warmup_frac", o.warmup_frac);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.adam_eps = j.value("adam_eps", o.adam_eps);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.seed = j.value("seed", o.seed);
  o.limit = j.value("limit", o.limit);
  o.metric_target = j.value("metric_target", o.metric_target);
  o.metric_higher_is_better = j.value("metric_higher_is_better", o.metric_higher_is_better);
  const std::string loss = j.value("loss", "auto");
  if (loss == "auto") {
    o.loss = TrainLoss::Auto;
  } else if (loss == "cross_entropy") {
    o.loss = TrainLoss::CrossEntropy;
  } else if (loss == "mse") {
    o.loss = TrainLoss::Mse;
  } else if (loss == "mase") {
    o.loss = TrainLoss::Mase;
  } else {
    throw UsageError("unknown train.loss '" + loss + "'");
  }
  return o;
}

std::string dataset_task(const SequenceDataset<float>& ds) {
  if (!ds.train.task.empty()) return ds.train.task;
  if (!ds.test.task.empty()) return ds.test.task;
  return ds.meta.value("task", std::string{});
}

MetricFn<float> metric_for_task(const std::string& task, bool* higher_is_better) {
  *higher_is_better = true;
  if (task == "flipflop") {
    // Reads are rare in the sparse regime; gating on the minimum keeps the
    // metric honest about recall instead of rewarding the easy positions.
    return [](const NetworkParams<float>& p, const SequenceBatch<float>& b) {
      const flipflop::SetAccuracy acc = flipflop::set_accuracy(p, b);
      return std::min(acc.all_steps, acc.read_steps);
    };
  }
  if (task == "smnist" || task == "gscifar") {
    return [](const NetworkParams<float>& p, const SequenceBatch<float>& b) {
      const NetworkForward<float> fw = network_forward(p, b.inputs, false);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < b.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.config.output; ++c) {
          if (fw.output.at2(i, c) > fw.output.at2(i, best)) best = c;
        }
        hits += static_cast<std::int32_t>(best) == b.seq_labels[i];
      }
      return static_cast<double>(hits) / static_cast<double>(b.size());
    };
  }
  if (task == "lorenz") {
    *higher_is_better = false;
    return [](const NetworkParams<float>& p, const SequenceBatch<float>& b) {
      const NetworkForward<float> fw = network_forward(p, b.inputs, false);
      return mase_loss(fw.output, b.targets, mase_denominator(b.targets)).value;
    };
  }
  return nullptr;
}

const SequenceBatch<float>& pick_split(const SequenceDataset<float>& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val.empty() ? ds.train : ds.val;
  if (split == "test") return ds.test.empty() ? (ds.val.empty() ? ds.train : ds.val) : ds.test;
  throw UsageError("unknown split '" + split + "' (train|val|test)");
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string task;
  std::string config_path;
  std::string out;
  std::string source;     // images
  std::string source_dir; // images
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t length = 0;
  double p_ignore = -1.0;
  double dt = -1.0;
  double noise = -1.0;
  std::size_t burn_in = static_cast<std::size_t>(-1);
  double val_frac = -1.0;
};

void cmd_gen(const GenArgs& args) {
  nlohmann::json cfg = nlohmann::json::object();
  if (!args.config_path.empty()) cfg = load_json_file(args.config_path);

  RunManifest manifest("gen " + args.task, args.seed);
  if (!args.config_path.empty()) manifest.add_input(args.config_path);
  SequenceDataset<float> ds;

  if (args.task == "flipflop") {
    check_keys(cfg, {"n", "length", "p_ignore", "seed", "val_frac"}, "");
    flipflop::FlipFlopConfig fcfg;
    fcfg.length = args.length ? args.length : cfg.value("length", fcfg.length);
    fcfg.p_ignore = args.p_ignore >= 0 ? args.p_ignore : cfg.value("p_ignore", fcfg.p_ignore);
    fcfg.seed = args.seed ? args.seed : cfg.value("seed", fcfg.seed);
    const std::size_t n = args.n ? args.n : cfg.value("n", std::size_t{1000});
    const double val_frac = args.val_frac >= 0 ? args.val_frac : cfg.value("val_frac", 0.1);

    auto timer = manifest.time("generate");
    const SequenceBatch<float> all = flipflop::gen_batch<float>(fcfg, n);
    const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
    std::vector<std::size_t> head_rows, tail_rows;
    for (std::size_t i = 0; i < n - n_val; ++i) head_rows.push_back(i);
    for (std::size_t i = n - n_val; i < n; ++i) tail_rows.push_back(i);
    ds.train = all.select(head_rows);
    ds.val = all.select(tail_rows);
    ds.meta = {{"task", "flipflop"},
               {"n", n},
               {"length", fcfg.length},
               {"p_ignore", fcfg.p_ignore},
               {"seed", fcfg.seed},
               {"regime", fcfg.p_ignore >= 0.9 ? "ood_sparse" : "dense"}};
  } else if (args.task == "lorenz") {
    check_keys(cfg, {"n_trajectories", "length", "dt", "noise", "burn_in", "seed", "sigma", "rho",
                     "beta", "train_frac", "val_frac"},
               "");
    lorenz::LorenzConfig lcfg;
    lcfg.n_trajectories = args.n ? args.n : cfg.value("n_trajectories", lcfg.n_trajectories);
    lcfg.length = args.length ? args.length : cfg.value("length", lcfg.length);
    lcfg.dt = args.dt >= 0 ? args.dt : cfg.value("dt", lcfg.dt);
    lcfg.noise = args.noise >= 0 ? args.noise : cfg.value("noise", lcfg.noise);
    lcfg.burn_in =
        args.burn_in != static_cast<std::size_t>(-1) ? args.burn_in : cfg.value("burn_in", lcfg.burn_in);
    lcfg.seed = args.seed ? args.seed : cfg.value("seed", lcfg.seed);
    lcfg.sigma = cfg.value("sigma", lcfg.sigma);
    lcfg.rho = cfg.value("rho", lcfg.rho);
    lcfg.beta = cfg.value("beta", lcfg.beta);
    lcfg.train_frac = cfg.value("train_frac", lcfg.train_frac);
    lcfg.val_frac = args.val_frac >= 0 ? args.val_frac : cfg.value("val_frac", lcfg.val_frac);
    if (!(lcfg.dt > 0)) throw UsageError("gen lorenz: dt must be positive");

    auto timer = manifest.time("generate");
    ds = lorenz::gen_dataset<float>(lcfg);
  } else if (args.task == "images") {
    check_keys(cfg, {"source", "dir", "val_frac"}, "");
    const std::string source = !args.source.empty() ? args.source : cfg.value("source", "");
    const std::string dir = !args.source_dir.empty() ? args.source_dir : cfg.value("dir", "");
    if (source.empty() || dir.empty()) {
      throw UsageError("gen images: --source (smnist|gscifar) and --dir are required");
    }
    manifest.add_input(dir);
    auto timer = manifest.time("generate");
    if (source == "smnist") {
      const double vf = args.val_frac >= 0 ? args.val_frac : cfg.value("val_frac", 1.0 / 12.0);
      ds = images::load_smnist<float>(dir, vf);
    } else if (source == "gscifar") {
      ds = images::load_gscifar<float>(dir);
    } else {
      throw UsageError("gen images: unknown source '" + source + "'");
    }
  } else {
    throw UsageError("gen: unknown task '" + args.task + "' (flipflop|lorenz|images)");
  }

  {
    auto timer = manifest.time("write");
    save_dataset(args.out, ds);
  }
  manifest.set_config(ds.meta);
  manifest.add_output(args.out);
  manifest.write(args.out);
  std::cout << "wrote dataset cache to " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string val_data;
  std::string out;
  std::string resume;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> limit;
};

void cmd_train(const TrainArgs& args) {
  const nlohmann::json cfg = load_json_file(args.config_path);
  check_keys(cfg, {"model", "train"}, "");
  NetworkConfig model = parse_model_config(cfg.value("model", nlohmann::json::object()));
  TrainOptions options = parse_train_options(cfg.value("train", nlohmann::json::object()));
  if (args.epochs) options.epochs = *args.epochs;
  if (args.batch_size) options.batch_size = *args.batch_size;
  if (args.lr) options.base_lr = *args.lr;
  if (args.seed) options.seed = *args.seed;
  if (args.limit) options.limit = *args.limit;

  const SequenceDataset<float> ds = load_dataset<float>(args.data);
  if (ds.train.empty()) throw DataError("train: dataset at " + args.data + " has no train split");
  SequenceBatch<float> val = ds.val;
  if (!args.val_data.empty()) {
    const SequenceDataset<float> vds = load_dataset<float>(args.val_data);
    val = vds.val.empty() ? vds.train : vds.val;
  }
  if (ds.train.inputs.dim(2) != model.input) {
    throw DataError("train: dataset channel width " + std::to_string(ds.train.inputs.dim(2)) +
                    " does not match model input " + std::to_string(model.input));
  }
  const std::string task = dataset_task(ds);
  bool higher = true;
  MetricFn<float> metric = metric_for_task(task, &higher);
  options.metric_higher_is_better = higher && options.metric_higher_is_better;

  RunManifest manifest("train", options.seed);
  manifest.add_input(args.config_path);
  manifest.add_input(args.data);
  if (!args.val_data.empty()) manifest.add_input(args.val_data);
  nlohmann::json resolved = {{"model", to_json(model)}, {"task", task}};
  resolved["train"] = {{"epochs", options.epochs},
                       {"batch_size", options.batch_size},
                       {"base_lr", options.base_lr},
                       {"warmup_frac", options.warmup_frac},
                       {"weight_decay", options.weight_decay},
                       {"clip_norm", options.clip_norm},
                       {"seed", options.seed},
                       {"limit", options.limit}};
  manifest.set_config(resolved);

  AdamConfig acfg;
  acfg.lr = options.base_lr;
  acfg.beta1 = options.beta1;
  acfg.beta2 = options.beta2;
  acfg.eps = options.adam_eps;
  acfg.weight_decay = options.weight_decay;
  GroupedAdam<float> optimizer(acfg);
  NetworkParams<float> warm;
  NetworkParams<float>* warm_ptr = nullptr;
  std::size_t first_epoch = 0;
  if (!args.resume.empty()) {
    const Archive<float> ar = load_archive<float>(args.resume);
    warm = params_from_archive(ar);
    if (to_json(warm.config) != to_json(model)) {
      throw UsageError("train: --resume checkpoint config does not match --config");
    }
    optimizer.load(ar);
    first_epoch = ar.meta.value("epoch", std::size_t{0}) + 1;
    warm_ptr = &warm;
    manifest.add_input(args.resume);
  }

  TrainResult<float> result;
  {
    auto timer = manifest.time("train");
    result = train(model, options, ds.train, val, metric, warm_ptr, &optimizer, first_epoch);
  }

  fs::create_directories(args.out);
  const std::string csv_path = (fs::path(args.out) / "metrics.csv").string();
  write_text_file(csv_path, metrics_csv(result.history));

  auto save_ckpt = [&](const NetworkParams<float>& p, const std::string& name, bool with_opt,
                       std::size_t epoch) {
    Archive<float> ar = params_to_archive(p);
    ar.meta["task"] = task;
    ar.meta["seed"] = options.seed;
    ar.meta["epoch"] = epoch;
    if (with_opt) optimizer.save(ar);
    const std::string path = (fs::path(args.out) / name).string();
    save_archive(path, ar);
    manifest.add_output(path);
  };
  save_ckpt(result.best_params, "best.ckpt", false, result.best_epoch);
  save_ckpt(result.params, "last.ckpt", true, result.epochs_run ? result.epochs_run - 1 : 0);
  manifest.add_output(csv_path);
  manifest.write(args.out);

  std::cout << "trained " << result.epochs_run << " epochs; best val metric "
            << result.best_metric << " at epoch " << result.best_epoch << "\n";
}

// ---------------------------------------------------------------------------
// eval / export-hidden
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "test";
  std::string dump_kernels;
  std::string pca_csv;
};

void cmd_eval(const EvalArgs& args) {
  const Archive<float> ar = load_archive<float>(args.checkpoint);
  const NetworkParams<float> params = params_from_archive(ar);
  const SequenceDataset<float> ds = load_dataset<float>(args.data);
  const std::string task = dataset_task(ds);

  RunManifest manifest("eval", ar.meta.value("seed", std::uint64_t{0}));
  manifest.add_input(args.checkpoint);
  manifest.add_input(args.data);
  manifest.set_config({{"task", task}, {"split", args.split}, {"model", to_json(params.config)}});

  nlohmann::json metrics;
  {
    auto timer = manifest.time("eval");
    if (task == "lorenz") {
      metrics = analysis::eval_suite(params, ds, task);
    } else {
      SequenceDataset<float> view;
      view.train = pick_split(ds, args.split);
      view.meta = ds.meta;
      metrics = analysis::eval_suite(params, view, task);
    }
  }
  metrics["task"] = task;
  metrics["split"] = args.split;

  fs::create_directories(args.out);
  const std::string metrics_path = (fs::path(args.out) / "metrics.json").string();
  write_text_file(metrics_path, metrics.dump(2) + "\n");
  manifest.add_output(metrics_path);

  if (!args.dump_kernels.empty()) {
    std::ostringstream os;
    os << "layer,channel,n,value\n";
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      if (!params.layers[l].conv) continue;
      const Tensor<float> k = materialize_kernel(*params.layers[l].conv);
      for (std::size_t h = 0; h < k.dim(0); ++h) {
        for (std::size_t n = 0; n < k.dim(1); ++n) {
          os << l << ',' << h << ',' << n << ',' << k.at2(h, n) << '\n';
        }
      }
    }
    write_text_file(args.dump_kernels, os.str());
    manifest.add_output(args.dump_kernels);
  }
  if (!args.pca_csv.empty()) {
    const SequenceBatch<float>& split = pick_split(ds, args.split);
    const Tensor64 hidden = analysis::export_hidden(params, split.inputs, 0, 20000);
    const std::size_t comps = std::min<std::size_t>(3, hidden.dim(1));
    const analysis::PcaResult pca = analysis::pca(hidden, comps);
    std::ostringstream os;
    for (std::size_t c = 0; c < comps; ++c) os << (c ? "," : "") << "pc" << c + 1;
    os << '\n';
    for (std::size_t i = 0; i < pca.projections.dim(0); ++i) {
      for (std::size_t c = 0; c < comps; ++c) {
        os << (c ? "," : "") << pca.projections.at2(i, c);
      }
      os << '\n';
    }
    write_text_file(args.pca_csv, os.str());
    manifest.add_output(args.pca_csv);
  }
  manifest.write(args.out);
  std::cout << metrics.dump(2) << "\n";
}

struct ExportArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "test";
  std::size_t warmup = 0;
};

void cmd_export_hidden(const ExportArgs& args) {
  const Archive<float> ar = load_archive<float>(args.checkpoint);
  const NetworkParams<float> params = params_from_archive(ar);
  const SequenceDataset<float> ds = load_dataset<float>(args.data);
  const SequenceBatch<float>& split = pick_split(ds, args.split);
  const Tensor64 hidden = analysis::export_hidden(params, split.inputs, args.warmup);
  save_tensor(args.out, hidden.cast<float>());

  RunManifest manifest("export-hidden", ar.meta.value("seed", std::uint64_t{0}));
  manifest.add_input(args.checkpoint);
  manifest.add_input(args.data);
  manifest.add_output(args.out);
  manifest.write(fs::path(args.out).parent_path().empty()
                     ? "."
                     : fs::path(args.out).parent_path().string());
  std::cout << "wrote " << hidden.dim(0) << " x " << hidden.dim(1) << " hidden states to "
            << args.out << "\n";
}

// ---------------------------------------------------------------------------
// memplan / gradcheck
// ---------------------------------------------------------------------------

struct MemplanArgs {
  std::string config_path;
  std::string checkpoint;
  std::string sweep_path;
  std::string csv_out;
  std::string out;
  bool bytes = false;
};

void cmd_memplan(const MemplanArgs& args) {
  if (!args.sweep_path.empty()) {
    const nlohmann::json grid_json = load_json_file(args.sweep_path);
    check_keys(grid_json, {"grid"}, "");
    std::vector<memplan::SweepEntry> grid;
    for (const auto& entry : grid_json.at("grid")) {
      check_keys(entry, {"label", "model"}, "grid.");
      grid.push_back({parse_model_config(entry.at("model")), entry.value("label", "")});
    }
    const std::string csv = memplan::sweep_csv(grid);
    if (!args.csv_out.empty()) {
      write_text_file(args.csv_out, csv);
      std::cout << "wrote sweep table to " << args.csv_out << "\n";
    } else {
      std::cout << csv;
    }
    return;
  }
  if (args.config_path.empty()) throw UsageError("memplan: --config or --sweep is required");
  const nlohmann::json cfg = load_json_file(args.config_path);
  check_keys(cfg, {"model", "train"}, "");
  const NetworkConfig model = parse_model_config(cfg.value("model", nlohmann::json::object()));

  memplan::MemoryReport report;
  if (!args.checkpoint.empty()) {
    const NetworkParams<float> params = params_from_archive(load_archive<float>(args.checkpoint));
    report = memplan::footprint(model, &params);
  } else {
    report = memplan::footprint<float>(model);
  }
  nlohmann::json out = memplan::to_json(report);
  if (args.bytes) {
    out["param_bytes_f32"] = report.param_mem * 4;
    out["buffer_bytes_f32"] = report.buffer_mem * 4;
    out["total_bytes_f32"] = report.total_mem * 4;
  }
  std::cout << out.dump(2) << "\n";
  if (!args.out.empty()) {
    RunManifest manifest("memplan", 0);
    manifest.add_input(args.config_path);
    if (!args.checkpoint.empty()) manifest.add_input(args.checkpoint);
    manifest.set_config({{"model", to_json(model)}});
    fs::create_directories(args.out);
    const std::string path = (fs::path(args.out) / "memplan.json").string();
    write_text_file(path, out.dump(2) + "\n");
    manifest.add_output(path);
    manifest.write(args.out);
  }
}

void cmd_gradcheck(std::uint64_t seed, const std::string& out) {
  const GradAuditReport report = run_grad_audit(seed);
  for (const GradAuditRow& row : report.rows) {
    std::cout << (row.max_rel_error < report.threshold ? "ok   " : "FAIL ") << row.name
              << " max_rel_error=" << row.max_rel_error << "\n";
  }
  std::cout << (report.pass() ? "PASS" : "FAIL") << " worst=" << report.worst
            << " threshold=" << report.threshold << "\n";
  if (!out.empty()) {
    RunManifest manifest("gradcheck", seed);
    fs::create_directories(out);
    const std::string path = (fs::path(out) / "gradcheck.json").string();
    write_text_file(path, report.to_json().dump(2) + "\n");
    manifest.add_output(path);
    manifest.write(out);
  }
  if (!report.pass()) throw NumericError("gradient audit failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgrade: hybrid conv/recurrent sequence-modeling toolkit"};
  app.set_version_flag("--version", std::string("mgrade ") + kVersion);
  app.require_subcommand(1);

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a dataset cache");
  gen->add_option("task", gen_args.task, "flipflop|lorenz|images")->required();
  gen->add_option("--config", gen_args.config_path, "generator config JSON");
  gen->add_option("--out", gen_args.out, "output cache directory")->required();
  gen->add_option("--seed", gen_args.seed, "rng seed");
  gen->add_option("--n", gen_args.n, "number of sequences/trajectories");
  gen->add_option("--length,--t", gen_args.length, "sequence length");
  gen->add_option("--p-ignore", gen_args.p_ignore, "flipflop ignore probability");
  gen->add_option("--dt", gen_args.dt, "lorenz integration step");
  gen->add_option("--noise", gen_args.noise, "lorenz observation noise fraction");
  gen->add_option("--burn-in", gen_args.burn_in, "lorenz burn-in steps");
  gen->add_option("--val-frac", gen_args.val_frac, "validation fraction");
  gen->add_option("--source", gen_args.source, "images source (smnist|gscifar)");
  gen->add_option("--dir", gen_args.source_dir, "raw image file directory");

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "train a model on a dataset cache");
  tr->add_option("--config", train_args.config_path, "model+train config JSON")->required();
  tr->add_option("--data", train_args.data, "dataset cache directory")->required();
  tr->add_option("--val-data", train_args.val_data, "separate validation cache");
  tr->add_option("--out", train_args.out, "output directory")->required();
  tr->add_option("--resume", train_args.resume, "checkpoint to resume from");
  std::size_t opt_epochs = 0, opt_batch = 0, opt_limit = 0;
  double opt_lr = 0.0;
  std::uint64_t opt_seed = 0;
  CLI::Option* epochs_opt = tr->add_option("--epochs", opt_epochs, "override epochs");
  CLI::Option* batch_opt = tr->add_option("--batch-size", opt_batch, "override batch size");
  CLI::Option* lr_opt = tr->add_option("--lr", opt_lr, "override base learning rate");
  CLI::Option* seed_opt = tr->add_option("--seed", opt_seed, "override seed");
  CLI::Option* limit_opt = tr->add_option("--limit", opt_limit, "restrict training set size");

  EvalArgs eval_args;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_args.data, "dataset cache directory")->required();
  ev->add_option("--out", eval_args.out, "output directory")->required();
  ev->add_option("--split", eval_args.split, "train|val|test (default test)");
  ev->add_option("--dump-kernels", eval_args.dump_kernels, "write materialized kernels CSV");
  ev->add_option("--pca-csv", eval_args.pca_csv, "write hidden-state PCA projections CSV");

  ExportArgs export_args;
  CLI::App* ex = app.add_subcommand("export-hidden", "export time-aligned hidden states");
  ex->add_option("--checkpoint", export_args.checkpoint, "checkpoint file")->required();
  ex->add_option("--data", export_args.data, "dataset cache directory")->required();
  ex->add_option("--out", export_args.out, "output tensor file")->required();
  ex->add_option("--split", export_args.split, "train|val|test");
  ex->add_option("--warmup", export_args.warmup, "steps to drop per sequence");

  MemplanArgs mem_args;
  CLI::App* mem = app.add_subcommand("memplan", "inference memory footprint report");
  mem->add_option("--config", mem_args.config_path, "model config JSON");
  mem->add_option("--checkpoint", mem_args.checkpoint, "trained checkpoint (variant L)");
  mem->add_option("--sweep", mem_args.sweep_path, "sweep grid JSON");
  mem->add_option("--csv", mem_args.csv_out, "sweep CSV output path");
  mem->add_option("--out", mem_args.out, "report output directory");
  mem->add_flag("--bytes", mem_args.bytes, "also report f32 byte sizes");

  std::uint64_t gc_seed = 0;
  std::string gc_out;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference audit of every backward pass");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--out", gc_out, "report output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      cmd_gen(gen_args);
    } else if (*tr) {
      if (epochs_opt->count()) train_args.epochs = opt_epochs;
      if (batch_opt->count()) train_args.batch_size = opt_batch;
      if (lr_opt->count()) train_args.lr = opt_lr;
      if (seed_opt->count()) train_args.seed = opt_seed;
      if (limit_opt->count()) train_args.limit = opt_limit;
      cmd_train(train_args);
    } else if (*ev) {
      cmd_eval(eval_args);
    } else if (*ex) {
      cmd_export_hidden(export_args);
    } else if (*mem) {
      cmd_memplan(mem_args);
    } else if (*gc) {
      cmd_gradcheck(gc_seed, gc_out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
