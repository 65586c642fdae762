// Command-line front end. Subcommands mirror the experiment layer: train,
// eval, noise-sweep, grid, ood, ablate. Flags override config-file values,
// which override defaults; eval-style commands start from the config stored
// in the checkpoint. Exit codes: 0 success, 1 usage or config, 2 data,
// 3 numeric or internal failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "mnp/mnp.hpp"

namespace fs = std::filesystem;

namespace {

struct CliState {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::string axis;
  bool svg = false;
  // flag order is preserved so later flags win over earlier ones
  std::vector<std::function<void(mnp::ExperimentConfig&)>> overrides;
};

mnp::ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw mnp::data_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mnp::config_error(path + ": " + e.what());
  }
  return mnp::config_from_json(j);
}

// effective config for fresh runs: defaults <- config file <- flags
mnp::ExperimentConfig resolve_config(const CliState& st) {
  mnp::ExperimentConfig cfg;
  if (!st.config_path.empty()) cfg = load_config_file(st.config_path);
  for (const auto& apply : st.overrides) apply(cfg);
  cfg.validate();
  return cfg;
}

// effective config for checkpoint commands: stored <- config file <- flags
mnp::ExperimentConfig resolve_eval_config(const CliState& st,
                                          const mnp::MnpModel& model) {
  mnp::ExperimentConfig cfg = model.config();
  if (!st.config_path.empty()) cfg = load_config_file(st.config_path);
  for (const auto& apply : st.overrides) apply(cfg);
  cfg.validate();
  return cfg;
}

fs::path output_dir(const CliState& st, const std::string& command,
                    const mnp::ExperimentConfig& cfg) {
  if (!st.out_dir.empty()) return fs::path(st.out_dir);
  return mnp::artifact_root() / (command + "-" + mnp::config_hash(cfg));
}

void add_config_flags(CLI::App* cmd, CliState& st) {
  cmd->add_option("--config", st.config_path, "JSON config file");
  cmd->add_option("--out", st.out_dir,
                  "artifact directory (default $MNP_ARTIFACT_ROOT/<cmd>-<hash>)");

  auto set = [&st](auto field) {
    return [&st, field](const auto& v) {
      st.overrides.push_back(
          [field, v](mnp::ExperimentConfig& c) { c.*field = v; });
    };
  };
  using C = mnp::ExperimentConfig;
  cmd->add_option_function<std::string>("--dataset", set(&C::dataset),
                                        "moons | moons-views | feature-files");
  cmd->add_option_function<std::size_t>("--n-train", set(&C::n_train),
                                        "training samples (synthetic)");
  cmd->add_option_function<std::size_t>("--n-test", set(&C::n_test),
                                        "test samples (synthetic)");
  cmd->add_option_function<double>("--moons-noise", set(&C::moons_noise),
                                   "moons jitter std");
  cmd->add_option_function<std::size_t>("--views", set(&C::views),
                                        "modal view count for moons-views");
  cmd->add_option_function<double>("--view-noise", set(&C::view_noise),
                                   "per-view observation noise std");
  cmd->add_option_function<std::vector<std::string>>(
      "--features", set(&C::feature_paths), "feature CSV, one per modality");
  cmd->add_option_function<std::string>("--labels", set(&C::labels_path),
                                        "label CSV (one integer column)");
  cmd->add_option_function<double>("--split-ratio", set(&C::split_ratio),
                                   "train fraction for feature-files");

  cmd->add_option_function<std::size_t>("--d-e", set(&C::d_e),
                                        "latent embedding width");
  cmd->add_option_function<std::size_t>("--mc-samples", set(&C::mc_samples),
                                        "Monte Carlo samples per prediction");
  cmd->add_flag_callback(
      "--extractor",
      [&st]() {
        st.overrides.push_back(
            [](mnp::ExperimentConfig& c) { c.feature_extractor = true; });
      },
      "enable the residual feature extractor");
  cmd->add_flag_callback(
      "--no-extractor",
      [&st]() {
        st.overrides.push_back(
            [](mnp::ExperimentConfig& c) { c.feature_extractor = false; });
      },
      "feed raw features to the encoders");
  cmd->add_option_function<std::size_t>(
      "--extractor-dim", set(&C::extractor_dim), "extractor output width");
  cmd->add_option_function<double>("--leaky-slope", set(&C::leaky_slope),
                                   "LeakyReLU negative slope");

  cmd->add_option_function<std::string>("--similarity", set(&C::similarity),
                                        "rbf | dot");
  cmd->add_option_function<std::string>("--normalisation",
                                        set(&C::normalisation),
                                        "softmax | sparsemax");
  cmd->add_option_function<std::string>("--rbf-scaling", set(&C::rbf_scaling),
                                        "squared | plain");
  cmd->add_option_function<double>("--lengthscale-init",
                                   set(&C::lengthscale_init),
                                   "initial RBF lengthscale");

  cmd->add_option_function<std::size_t>("--n-context", set(&C::n_context),
                                        "context memory slots (per modality)");
  cmd->add_option_function<std::string>("--memory-strategy",
                                        set(&C::memory_strategy),
                                        "mse | ce | fifo | random | frozen");
  cmd->add_option_function<std::string>("--memory-scope",
                                        set(&C::memory_scope),
                                        "class-consistent | literal");

  cmd->add_option_function<std::string>("--aggregation", set(&C::aggregation),
                                        "bayes | mean | concat");
  cmd->add_flag_callback(
      "--rbf-loss",
      [&st]() {
        st.overrides.push_back(
            [](mnp::ExperimentConfig& c) { c.rbf_loss = true; });
      },
      "train attention kernels with the contrastive objective");
  cmd->add_flag_callback(
      "--no-rbf-loss",
      [&st]() {
        st.overrides.push_back(
            [](mnp::ExperimentConfig& c) { c.rbf_loss = false; });
      },
      "disable the contrastive kernel objective");
  cmd->add_option_function<double>("--alpha", set(&C::alpha),
                                   "lengthscale norm penalty weight");
  cmd->add_option_function<double>("--beta", set(&C::beta),
                                   "kernel loss weight in the total");
  cmd->add_option_function<double>("--tau", set(&C::tau),
                                   "contrastive temperature");

  cmd->add_option_function<std::size_t>("--epochs", set(&C::epochs),
                                        "training epochs");
  cmd->add_option_function<std::size_t>("--batch-size", set(&C::batch_size),
                                        "mini-batch size");
  cmd->add_option_function<double>("--lr", set(&C::learning_rate),
                                   "Adam learning rate");
  cmd->add_option_function<std::uint64_t>("--seed", set(&C::seed),
                                          "run seed");

  cmd->add_option_function<std::string>("--uncertainty", set(&C::uncertainty),
                                        "entropy | mc-variance");
  cmd->add_option_function<std::string>("--ood", set(&C::ood),
                                        "shifted-moons | copy | feature-files");
  cmd->add_option_function<double>("--ood-shift", set(&C::ood_shift),
                                   "plane shift for shifted-moons");
  cmd->add_option_function<std::vector<std::string>>(
      "--ood-features", set(&C::ood_paths),
      "OOD feature CSV, one per modality");
  cmd->add_option_function<std::size_t>("--grid-nx", set(&C::grid_nx),
                                        "grid columns");
  cmd->add_option_function<std::size_t>("--grid-ny", set(&C::grid_ny),
                                        "grid rows");
  cmd->add_option_function<double>("--grid-pad", set(&C::grid_pad),
                                   "padding around the data bounding box");
  cmd->add_option_function<std::vector<double>>(
         "--probe",
         [&st](const std::vector<double>& flat) {
           if (flat.size() % 2 != 0)
             throw CLI::ValidationError("--probe", "expects x y pairs");
           st.overrides.push_back([flat](mnp::ExperimentConfig& c) {
             c.probes.clear();
             for (std::size_t i = 0; i < flat.size(); i += 2)
               c.probes.push_back({flat[i], flat[i + 1]});
           });
         },
         "attention probe point; repeatable, two coords each");
}

int run(int argc, char** argv) {
  CLI::App app{"multimodal neural process workbench"};
  app.require_subcommand(1);
  CliState st;

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  add_config_flags(train, st);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a stored checkpoint");
  eval->add_option("--checkpoint", st.checkpoint_path, "checkpoint.bin path")
      ->required();
  add_config_flags(eval, st);

  CLI::App* sweep = app.add_subcommand(
      "noise-sweep", "accuracy under per-modality corruption levels");
  sweep->add_option("--checkpoint", st.checkpoint_path, "checkpoint.bin path")
      ->required();
  add_config_flags(sweep, st);

  CLI::App* grid = app.add_subcommand(
      "grid", "decision-surface and uncertainty dump over the plane");
  grid->add_option("--checkpoint", st.checkpoint_path, "checkpoint.bin path")
      ->required();
  grid->add_flag("--svg", st.svg, "also render grid.svg");
  add_config_flags(grid, st);

  CLI::App* ood = app.add_subcommand(
      "ood", "in- vs out-of-distribution separation report");
  ood->add_option("--checkpoint", st.checkpoint_path, "checkpoint.bin path")
      ->required();
  add_config_flags(ood, st);

  CLI::App* ablate = app.add_subcommand(
      "ablate", "train every variant along one design axis");
  ablate
      ->add_option("--axis", st.axis,
                   "memory | aggregation | attention | rbf-loss")
      ->required();
  add_config_flags(ablate, st);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 1;
  }

  if (train->parsed()) {
    const mnp::ExperimentConfig cfg = resolve_config(st);
    const fs::path dir = output_dir(st, "train", cfg);
    const mnp::TrainOutcome r = mnp::run_train(cfg, dir);
    std::printf("test accuracy %.4f  ece %.4f\n", r.test.accuracy, r.test.ece);
    std::printf("artifacts: %s\n", dir.string().c_str());
    return 0;
  }
  if (ablate->parsed()) {
    const mnp::ExperimentConfig cfg = resolve_config(st);
    const fs::path dir = output_dir(st, "ablate-" + st.axis, cfg);
    const auto rows = mnp::run_ablate(cfg, st.axis, dir);
    for (const auto& row : rows)
      std::printf("%-14s accuracy %.4f  ece %.4f\n", row.variant.c_str(),
                  row.test.accuracy, row.test.ece);
    std::printf("artifacts: %s\n", dir.string().c_str());
    return 0;
  }

  mnp::MnpModel model = mnp::load_checkpoint(st.checkpoint_path);
  const mnp::ExperimentConfig cfg = resolve_eval_config(st, model);
  if (eval->parsed()) {
    const fs::path dir = output_dir(st, "eval", cfg);
    const mnp::EvalMetrics m = mnp::run_eval(model, cfg, dir);
    std::printf("test accuracy %.4f  ece %.4f\n", m.accuracy, m.ece);
    std::printf("artifacts: %s\n", dir.string().c_str());
    return 0;
  }
  if (sweep->parsed()) {
    const fs::path dir = output_dir(st, "noise-sweep", cfg);
    const std::vector<double> acc = mnp::run_noise_sweep(model, cfg, dir);
    for (std::size_t i = 0; i < acc.size(); ++i)
      std::printf("level %zu accuracy %.4f\n", i, acc[i]);
    std::printf("artifacts: %s\n", dir.string().c_str());
    return 0;
  }
  if (grid->parsed()) {
    const fs::path dir = output_dir(st, "grid", cfg);
    const mnp::GridOutcome g = mnp::run_grid(model, cfg, dir, st.svg);
    std::printf("grid %zu rows over [%.3f, %.3f] x [%.3f, %.3f]\n", g.rows,
                g.x0, g.x1, g.y0, g.y1);
    std::printf("artifacts: %s\n", dir.string().c_str());
    return 0;
  }
  const fs::path dir = output_dir(st, "ood", cfg);
  const mnp::OodReport r = mnp::run_ood(model, cfg, dir);
  std::printf("auroc entropy %.4f  mc-variance %.4f  (%zu id, %zu ood)\n",
              r.auroc_entropy, r.auroc_mc_variance, r.n_id, r.n_ood);
  std::printf("artifacts: %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mnp::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const mnp::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const mnp::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
