#pragma once

// Run orchestration: builds datasets from a config, trains and evaluates
// models, and writes the artifact set the CLI exposes. Every command is a
// pure function of (config, checkpoint, seed): artifacts never embed wall
// clocks or machine state, so re-runs reproduce them byte for byte.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mnp/checkpoint.hpp"
#include "mnp/config.hpp"
#include "mnp/data.hpp"
#include "mnp/metrics.hpp"
#include "mnp/model.hpp"
#include "mnp/svg.hpp"

namespace mnp {

namespace detail {

// %.12g keeps CSVs compact while re-reading bit-stably for doubles that
// matter here; identical doubles always print identically.
inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot open for writing: " + path.string());
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw data_error("write failed: " + path.string());
}

// fixed stream ids so every command derives independent generators from the
// one config seed
constexpr std::uint64_t kStreamTrainData = 11;
constexpr std::uint64_t kStreamTestData = 12;
constexpr std::uint64_t kStreamViewMaps = 13;
constexpr std::uint64_t kStreamShuffle = 14;
constexpr std::uint64_t kStreamEval = 15;
constexpr std::uint64_t kStreamSweep = 16;
constexpr std::uint64_t kStreamOod = 17;
constexpr std::uint64_t kStreamGrid = 18;

}  // namespace detail

inline std::filesystem::path artifact_root() {
  const char* env = std::getenv("MNP_ARTIFACT_ROOT");
  if (env != nullptr && *env != '\0') return std::filesystem::path(env);
  return std::filesystem::path("artifacts");
}

// A resolved dataset. Planar datasets (moons, moons-views) also carry the
// base-plane coordinates and the fixed view maps so grid and OOD commands
// can push new plane points through the identical generative pipeline.
struct DatasetBundle {
  MultimodalBatch train;
  MultimodalBatch test;
  Tensor base_train;          // planar only, [n x 2]
  Tensor base_test;           // planar only, [n x 2]
  std::vector<Tensor> maps;   // moons-views only
  bool planar = false;
};

inline DatasetBundle build_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  DatasetBundle out;
  Rng seeder(cfg.seed);
  const std::uint64_t train_seed = seeder.child(detail::kStreamTrainData).raw();
  const std::uint64_t test_seed = seeder.child(detail::kStreamTestData).raw();

  if (cfg.dataset == "moons") {
    out.train = make_moons(cfg.n_train, cfg.moons_noise, train_seed);
    out.test = make_moons(cfg.n_test, cfg.moons_noise, test_seed);
    out.base_train = out.train.features[0];
    out.base_test = out.test.features[0];
    out.planar = true;
    return out;
  }
  if (cfg.dataset == "moons-views") {
    // the map generator restarts per split so both splits share the maps
    Rng map_rng_train = seeder.child(detail::kStreamViewMaps);
    Rng map_rng_test = seeder.child(detail::kStreamViewMaps);
    out.train = make_multimodal_moons(cfg.n_train, cfg.moons_noise, cfg.views,
                                      cfg.view_noise, map_rng_train,
                                      train_seed);
    out.test = make_multimodal_moons(cfg.n_test, cfg.moons_noise, cfg.views,
                                     cfg.view_noise, map_rng_test, test_seed);
    out.base_train = make_moons(cfg.n_train, cfg.moons_noise, train_seed)
                         .features[0];
    out.base_test = make_moons(cfg.n_test, cfg.moons_noise, test_seed)
                        .features[0];
    Rng map_rng = seeder.child(detail::kStreamViewMaps);
    out.maps = view_maps(cfg.views, map_rng);
    out.planar = true;
    return out;
  }
  SplitDataset split = load_feature_dataset(cfg.feature_paths, cfg.labels_path,
                                            cfg.split_ratio, cfg.seed);
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  return out;
}

// Projects base-plane points through the dataset's view pipeline. Zero view
// noise probes the clean response surface; pass a positive std and an rng to
// mimic observed samples instead.
inline MultimodalBatch planar_batch(const DatasetBundle& data, Tensor xy,
                                    std::size_t num_classes,
                                    double view_noise = 0.0,
                                    Rng* noise_rng = nullptr) {
  if (!data.planar)
    throw contract_error("planar_batch needs a planar dataset");
  MultimodalBatch base;
  base.labels = Tensor({xy.rows(), num_classes});
  for (std::size_t i = 0; i < xy.rows(); ++i) base.labels.at(i, 0) = 1.0;
  base.features.push_back(std::move(xy));
  if (data.maps.empty()) return base;
  Rng silent(0);
  return apply_views(base, data.maps, noise_rng ? view_noise : 0.0,
                     noise_rng ? *noise_rng : silent);
}

struct EvalMetrics {
  double accuracy = 0.0;
  double ece = 0.0;
};

// Shared evaluation path: the random memory strategy refreshes its slots
// from the training set first, everything else predicts as stored. `salt`
// separates rng streams when one command evaluates many times.
inline EvalMetrics evaluate_model(MnpModel& model, const MultimodalBatch& test,
                                  const MultimodalBatch& train,
                                  std::uint64_t salt = 0) {
  const ExperimentConfig& cfg = model.config();
  Rng rng = Rng(cfg.seed).child(detail::kStreamEval + 1000 * salt);
  if (cfg.memory_strategy_kind() == MemoryStrategy::Random)
    model.memory().resample(train.features, train.labels, rng);
  Prediction pred = model.predict(test, cfg.mc_samples, rng);
  EvalMetrics out;
  out.accuracy = accuracy(pred.probs, test.labels);
  out.ece = expected_calibration_error(pred.probs, test.labels);
  return out;
}

constexpr const char* kMetricsHeader =
    "phase,epoch,total,task,rbf,penalty,accuracy,ece\n";

struct TrainOutcome {
  std::vector<LossReport> epoch_losses;
  EvalMetrics test;
  std::string hash;
};

// Trains to completion and writes config.json, checkpoint.bin, metrics.csv
// and report.json into `dir`.
inline TrainOutcome run_train(const ExperimentConfig& cfg,
                              const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  DatasetBundle data = build_dataset(cfg);
  std::vector<std::size_t> raw_dims;
  for (const Tensor& f : data.train.features) raw_dims.push_back(f.cols());

  MnpModel model(cfg, raw_dims, data.train.num_classes());
  model.init_memory(data.train);

  TrainOutcome out;
  out.hash = config_hash(cfg);
  Rng shuffle_rng = Rng(cfg.seed).child(detail::kStreamShuffle);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::string csv = kMetricsHeader;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    LossReport mean;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + stop);
      const LossReport r = model.train_step(data.train.rows(idx));
      mean.total += r.total;
      mean.task += r.task;
      mean.rbf += r.rbf;
      mean.penalty += r.penalty;
      ++steps;
    }
    const auto d = static_cast<double>(steps);
    mean.total /= d;
    mean.task /= d;
    mean.rbf /= d;
    mean.penalty /= d;
    out.epoch_losses.push_back(mean);
    csv += "train," + std::to_string(epoch) + "," + detail::fmt_g(mean.total) +
           "," + detail::fmt_g(mean.task) + "," + detail::fmt_g(mean.rbf) +
           "," + detail::fmt_g(mean.penalty) + ",,\n";
  }

  out.test = evaluate_model(model, data.test, data.train);
  csv += "test," + std::to_string(cfg.epochs) + ",,,,," +
         detail::fmt_g(out.test.accuracy) + "," + detail::fmt_g(out.test.ece) +
         "\n";

  fs::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(cfg).dump(2) + "\n");
  save_checkpoint((dir / "checkpoint.bin").string(), model);
  detail::write_text_file(dir / "metrics.csv", csv);
  nlohmann::json report;
  report["accuracy"] = out.test.accuracy;
  report["ece"] = out.test.ece;
  report["epochs"] = cfg.epochs;
  report["config_hash"] = out.hash;
  detail::write_text_file(dir / "report.json", report.dump(2) + "\n");
  return out;
}

// Re-evaluates a stored model on the config's test split.
inline EvalMetrics run_eval(MnpModel& model, const ExperimentConfig& cfg,
                            const std::filesystem::path& dir) {
  DatasetBundle data = build_dataset(cfg);
  const EvalMetrics m = evaluate_model(model, data.test, data.train);
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(cfg).dump(2) + "\n");
  std::string csv = kMetricsHeader;
  csv += "test," + std::to_string(cfg.epochs) + ",,,,," +
         detail::fmt_g(m.accuracy) + "," + detail::fmt_g(m.ece) + "\n";
  detail::write_text_file(dir / "metrics.csv", csv);
  nlohmann::json report;
  report["accuracy"] = m.accuracy;
  report["ece"] = m.ece;
  report["n_test"] = data.test.size();
  report["config_hash"] = config_hash(cfg);
  detail::write_text_file(dir / "report.json", report.dump(2) + "\n");
  return m;
}

// Corruption sweep: for each of the ten log-spaced noise levels, corrupt
// every ceil(M/2)-sized modality subset of the test set in turn and average
// the resulting accuracies. Needs M >= 2 to have something to corrupt.
inline std::vector<double> run_noise_sweep(MnpModel& model,
                                           const ExperimentConfig& cfg,
                                           const std::filesystem::path& dir) {
  DatasetBundle data = build_dataset(cfg);
  if (data.test.modalities() < 2)
    throw config_error(
        "noise sweep needs at least two modalities; train on moons-views or "
        "multi-file features");
  if (cfg.memory_strategy_kind() == MemoryStrategy::Random) {
    Rng rng = Rng(cfg.seed).child(detail::kStreamEval);
    model.memory().resample(data.train.features, data.train.labels, rng);
  }

  const std::vector<double> levels = noise_levels();
  const auto subsets = modality_subsets(data.test.modalities());
  Rng seeder = Rng(cfg.seed).child(detail::kStreamSweep);

  std::vector<double> mean_acc;
  std::string csv = "level,std,accuracy\n";
  for (std::size_t l = 0; l < levels.size(); ++l) {
    double acc = 0.0;
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      const MultimodalBatch noisy =
          inject_noise(data.test, subsets[s], levels[l], seeder.raw());
      Rng rng = seeder.child(1 + l * subsets.size() + s);
      acc += accuracy(model.predict(noisy, cfg.mc_samples, rng).probs,
                      data.test.labels);
    }
    acc /= static_cast<double>(subsets.size());
    mean_acc.push_back(acc);
    csv += std::to_string(l) + "," + detail::fmt_g(levels[l]) + "," +
           detail::fmt_g(acc) + "\n";
  }
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(cfg).dump(2) + "\n");
  detail::write_text_file(dir / "metrics.csv", csv);
  return mean_acc;
}

// chunked so a 100x100 grid never materialises 10k-row activation tensors
inline Prediction predict_chunked(MnpModel& model, const MultimodalBatch& all,
                                  std::size_t samples, Rng& rng,
                                  std::size_t chunk = 1000) {
  Prediction out;
  for (std::size_t start = 0; start < all.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(all.size(), start + chunk); ++i)
      idx.push_back(i);
    Prediction p = model.predict(all.rows(idx), samples, rng);
    if (start == 0) {
      out = std::move(p);
      continue;
    }
    out.probs = vstack(out.probs, p.probs);
    for (std::size_t m = 0; m < p.unimodal.size(); ++m) {
      out.unimodal[m] = vstack(out.unimodal[m], p.unimodal[m]);
      out.attention[m] = vstack(out.attention[m], p.attention[m]);
    }
    for (std::size_t s = 0; s < p.draws.size(); ++s)
      out.draws[s] = vstack(out.draws[s], p.draws[s]);
  }
  return out;
}

struct GridOutcome {
  std::size_t rows = 0;
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
};

// Decision-surface dump over the padded training bounding box, plus
// attention vectors for the configured probe points.
inline GridOutcome run_grid(MnpModel& model, const ExperimentConfig& cfg,
                            const std::filesystem::path& dir,
                            bool svg = false) {
  if (cfg.dataset == "feature-files")
    throw config_error("grid needs a planar synthetic dataset (moons)");
  DatasetBundle data = build_dataset(cfg);

  GridOutcome out;
  out.x0 = out.x1 = data.base_train.at(0, 0);
  out.y0 = out.y1 = data.base_train.at(0, 1);
  for (std::size_t i = 0; i < data.base_train.rows(); ++i) {
    out.x0 = std::min(out.x0, data.base_train.at(i, 0));
    out.x1 = std::max(out.x1, data.base_train.at(i, 0));
    out.y0 = std::min(out.y0, data.base_train.at(i, 1));
    out.y1 = std::max(out.y1, data.base_train.at(i, 1));
  }
  out.x0 -= cfg.grid_pad;
  out.x1 += cfg.grid_pad;
  out.y0 -= cfg.grid_pad;
  out.y1 += cfg.grid_pad;

  const Tensor mesh =
      mesh_grid(out.x0, out.x1, out.y0, out.y1, cfg.grid_nx, cfg.grid_ny);
  const std::size_t num_classes = data.train.num_classes();
  MultimodalBatch grid_batch = planar_batch(data, mesh, num_classes);
  Rng rng = Rng(cfg.seed).child(detail::kStreamGrid);
  Prediction pred = predict_chunked(model, grid_batch, cfg.mc_samples, rng);

  const std::vector<double> unc =
      cfg.uncertainty_kind() == UncertaintyKind::Entropy
          ? entropy_scores(pred.probs)
          : mc_variance_scores(pred.draws);
  std::string csv = "x,y,p_class1,uncertainty\n";
  for (std::size_t i = 0; i < mesh.rows(); ++i)
    csv += detail::fmt_g(mesh.at(i, 0)) + "," + detail::fmt_g(mesh.at(i, 1)) +
           "," + detail::fmt_g(pred.probs.at(i, 1)) + "," +
           detail::fmt_g(unc[i]) + "\n";
  out.rows = mesh.rows();

  std::string probe_csv = "probe,x,y,modality,slot,weight\n";
  if (!cfg.probes.empty()) {
    Tensor pts({cfg.probes.size(), 2});
    for (std::size_t i = 0; i < cfg.probes.size(); ++i) {
      pts.at(i, 0) = cfg.probes[i][0];
      pts.at(i, 1) = cfg.probes[i][1];
    }
    MultimodalBatch probe_batch = planar_batch(data, pts, num_classes);
    Rng probe_rng = Rng(cfg.seed).child(detail::kStreamGrid + 1);
    Prediction pp = model.predict(probe_batch, cfg.mc_samples, probe_rng);
    for (std::size_t i = 0; i < cfg.probes.size(); ++i)
      for (std::size_t m = 0; m < pp.attention.size(); ++m)
        for (std::size_t s = 0; s < pp.attention[m].cols(); ++s)
          probe_csv += std::to_string(i) + "," +
                       detail::fmt_g(cfg.probes[i][0]) + "," +
                       detail::fmt_g(cfg.probes[i][1]) + "," +
                       std::to_string(m) + "," + std::to_string(s) + "," +
                       detail::fmt_g(pp.attention[m].at(i, s)) + "\n";
  }

  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(cfg).dump(2) + "\n");
  detail::write_text_file(dir / "grid.csv", csv);
  detail::write_text_file(dir / "attention_probe.csv", probe_csv);
  if (svg) {
    std::vector<double> vals(mesh.rows());
    for (std::size_t i = 0; i < mesh.rows(); ++i)
      vals[i] = pred.probs.at(i, 1);
    std::vector<SvgPoint> points;
    const std::vector<std::size_t> labels = data.test.label_indices();
    for (std::size_t i = 0; i < data.base_test.rows(); ++i)
      points.push_back({data.base_test.at(i, 0), data.base_test.at(i, 1),
                        labels[i]});
    detail::write_text_file(
        dir / "grid.svg",
        render_heatmap_svg(cfg.grid_nx, cfg.grid_ny, out.x0, out.x1, out.y0,
                           out.y1, vals, points));
  }
  return out;
}

struct OodReport {
  double auroc_entropy = 0.0;
  double auroc_mc_variance = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

// Builds the configured OOD set, scores ID-vs-OOD separation with both
// uncertainty kinds, and writes report.json.
inline OodReport run_ood(MnpModel& model, const ExperimentConfig& cfg,
                         const std::filesystem::path& dir) {
  if (cfg.mc_samples < 2)
    throw config_error("ood scoring needs mc_samples >= 2 for mc-variance");
  DatasetBundle data = build_dataset(cfg);

  MultimodalBatch ood_batch;
  if (cfg.ood == "copy") {
    ood_batch = data.test;
  } else if (cfg.ood == "shifted-moons") {
    if (!data.planar)
      throw config_error("shifted-moons ood needs a planar dataset");
    Tensor shifted = data.base_test;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
      shifted.at(i, 0) += cfg.ood_shift;
      shifted.at(i, 1) += cfg.ood_shift;
    }
    Rng noise_rng = Rng(cfg.seed).child(detail::kStreamOod);
    ood_batch = planar_batch(data, shifted, data.test.num_classes(),
                             cfg.view_noise, &noise_rng);
  } else {  // feature-files
    if (cfg.ood_paths.size() != data.test.modalities())
      throw data_error("ood feature files must cover every modality");
    for (std::size_t m = 0; m < cfg.ood_paths.size(); ++m) {
      const auto rows = detail::read_csv(cfg.ood_paths[m]);
      Tensor f({rows.size(), rows.front().size()});
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
          f.at(i, j) = rows[i][j];
      if (f.cols() != data.test.features[m].cols())
        throw data_error("ood modality " + std::to_string(m) +
                         " width does not match the checkpointed model");
      ood_batch.features.push_back(std::move(f));
    }
    ood_batch.labels = Tensor({ood_batch.features[0].rows(),
                               data.test.num_classes()});
    for (std::size_t i = 0; i < ood_batch.labels.rows(); ++i)
      ood_batch.labels.at(i, 0) = 1.0;
  }

  if (cfg.memory_strategy_kind() == MemoryStrategy::Random) {
    Rng rng = Rng(cfg.seed).child(detail::kStreamEval);
    model.memory().resample(data.train.features, data.train.labels, rng);
  }
  Rng id_rng = Rng(cfg.seed).child(detail::kStreamOod + 1);
  Rng ood_rng = Rng(cfg.seed).child(detail::kStreamOod + 2);
  Prediction id_pred = model.predict(data.test, cfg.mc_samples, id_rng);
  Prediction ood_pred = model.predict(ood_batch, cfg.mc_samples, ood_rng);

  OodReport out;
  out.n_id = data.test.size();
  out.n_ood = ood_batch.size();
  out.auroc_entropy =
      auroc(entropy_scores(ood_pred.probs), entropy_scores(id_pred.probs));
  out.auroc_mc_variance = auroc(mc_variance_scores(ood_pred.draws),
                                mc_variance_scores(id_pred.draws));

  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(cfg).dump(2) + "\n");
  nlohmann::json report;
  report["auroc_entropy"] = out.auroc_entropy;
  report["auroc_mc_variance"] = out.auroc_mc_variance;
  report["n_id"] = out.n_id;
  report["n_ood"] = out.n_ood;
  detail::write_text_file(dir / "report.json", report.dump(2) + "\n");
  return out;
}

struct AblateRow {
  std::string variant;
  std::string hash;
  EvalMetrics test;
};

// One full training run per variant on the chosen axis, all sharing the base
// config (and its seed) except for the ablated field(s). The comparison
// table records each variant's own hash next to the shared base hash.
inline std::vector<AblateRow> run_ablate(const ExperimentConfig& base,
                                         const std::string& axis,
                                         const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  auto with = [&](const std::string& name, auto&& patch) {
    ExperimentConfig c = base;
    patch(c);
    variants.emplace_back(name, std::move(c));
  };
  if (axis == "memory") {
    for (const char* s : {"random", "fifo", "ce", "mse"})
      with(s, [&](ExperimentConfig& c) { c.memory_strategy = s; });
  } else if (axis == "aggregation") {
    for (const char* s : {"bayes", "mean", "concat"})
      with(s, [&](ExperimentConfig& c) { c.aggregation = s; });
  } else if (axis == "attention") {
    for (const char* sim : {"rbf", "dot"})
      for (const char* norm : {"softmax", "sparsemax"})
        with(std::string(sim) + "-" + norm, [&](ExperimentConfig& c) {
          c.similarity = sim;
          c.normalisation = norm;
        });
  } else if (axis == "rbf-loss") {
    with("on", [](ExperimentConfig& c) { c.rbf_loss = true; });
    with("off", [](ExperimentConfig& c) { c.rbf_loss = false; });
  } else {
    throw config_error("unknown ablation axis: " + axis +
                       " (memory | aggregation | attention | rbf-loss)");
  }

  const std::string base_hash = config_hash(base);
  std::vector<AblateRow> rows;
  std::string csv = "axis,variant,config_hash,base_hash,accuracy,ece\n";
  for (auto& [name, cfg] : variants) {
    const TrainOutcome r = run_train(cfg, dir / name);
    rows.push_back({name, config_hash(cfg), r.test});
    csv += axis + "," + name + "," + rows.back().hash + "," + base_hash + "," +
           detail::fmt_g(r.test.accuracy) + "," + detail::fmt_g(r.test.ece) +
           "\n";
  }
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir / "config.json",
                          config_to_json(base).dump(2) + "\n");
  detail::write_text_file(dir / "metrics.csv", csv);
  return rows;
}

}  // namespace mnp
