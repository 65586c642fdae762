#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mnp/rng.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

// One dataset or mini-batch: per-modality feature matrices sharing a row
// order, plus one-hot labels.
struct MultimodalBatch {
  std::vector<Tensor> features;  // per modality, [n x d_m]
  Tensor labels;                 // [n x num_classes], one-hot rows

  std::size_t size() const { return labels.rows(); }
  std::size_t modalities() const { return features.size(); }
  std::size_t num_classes() const { return labels.cols(); }

  MultimodalBatch rows(const std::vector<std::size_t>& idx) const {
    MultimodalBatch out;
    out.features.reserve(features.size());
    for (const Tensor& f : features) {
      Tensor sub({idx.size(), f.cols()});
      for (std::size_t i = 0; i < idx.size(); ++i)
        sub.set_row(i, f.row_copy(idx[i]));
      out.features.push_back(std::move(sub));
    }
    Tensor sub({idx.size(), labels.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i)
      sub.set_row(i, labels.row_copy(idx[i]));
    out.labels = std::move(sub);
    return out;
  }

  std::vector<std::size_t> label_indices() const {
    std::vector<std::size_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < labels.cols(); ++k)
        if (labels.at(i, k) > labels.at(i, best)) best = k;
      out[i] = best;
    }
    return out;
  }
};

// Two interleaving half-circles: class 0 on the upper arc (cos t, sin t),
// class 1 on the lower arc (1 - cos t, 1/2 - sin t), t evenly spaced over
// [0, pi], plus isotropic Gaussian jitter.  Rows are shuffled.
inline MultimodalBatch make_moons(std::size_t n, double noise_std,
                                  std::uint64_t seed) {
  if (n < 2) throw contract_error("make_moons needs at least two samples");
  const std::size_t n_out = n / 2 + (n % 2);  // class 0 gets the odd one
  const std::size_t n_in = n - n_out;
  Rng rng(seed);

  Tensor x({n, 2});
  Tensor y({n, 2});
  auto arc_t = [](std::size_t i, std::size_t count) {
    const double pi = 3.14159265358979323846;
    return count == 1 ? 0.0 : pi * static_cast<double>(i) /
                                  static_cast<double>(count - 1);
  };
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = arc_t(i, n_out);
    x.at(i, 0) = std::cos(t);
    x.at(i, 1) = std::sin(t);
    y.at(i, 0) = 1.0;
  }
  for (std::size_t i = 0; i < n_in; ++i) {
    const double t = arc_t(i, n_in);
    x.at(n_out + i, 0) = 1.0 - std::cos(t);
    x.at(n_out + i, 1) = 0.5 - std::sin(t);
    y.at(n_out + i, 1) = 1.0;
  }
  if (noise_std > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        x.at(i, j) += rng.normal(0.0, noise_std);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  MultimodalBatch raw{{std::move(x)}, std::move(y)};
  return raw.rows(order);
}

// Row-major evaluation lattice: y is the outer loop, x the inner one.
inline Tensor mesh_grid(double x0, double x1, double y0, double y1,
                        std::size_t nx, std::size_t ny) {
  if (nx < 2 || ny < 2) throw contract_error("mesh_grid needs >= 2 per axis");
  Tensor out({nx * ny, 2});
  for (std::size_t iy = 0; iy < ny; ++iy) {
    const double y = y0 + (y1 - y0) * static_cast<double>(iy) /
                              static_cast<double>(ny - 1);
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double x = x0 + (x1 - x0) * static_cast<double>(ix) /
                                static_cast<double>(nx - 1);
      out.at(iy * nx + ix, 0) = x;
      out.at(iy * nx + ix, 1) = y;
    }
  }
  return out;
}

// Fixed random linear map per view: rotation times a per-axis scale drawn
// from [0.8, 1.25], so every map stays well conditioned.
inline std::vector<Tensor> view_maps(std::size_t modalities, Rng& rng) {
  std::vector<Tensor> maps;
  maps.reserve(modalities);
  for (std::size_t m = 0; m < modalities; ++m) {
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double c = std::cos(theta), s = std::sin(theta);
    const double s0 = rng.uniform(0.8, 1.25);
    const double s1 = rng.uniform(0.8, 1.25);
    maps.push_back(Tensor::matrix(2, 2, {c * s0, -s * s1, s * s0, c * s1}));
  }
  return maps;
}

// Views of a base dataset: x W per modality plus fresh Gaussian noise.
// The maps stay fixed per experiment; callers reuse them across splits.
inline MultimodalBatch apply_views(const MultimodalBatch& base,
                                   const std::vector<Tensor>& maps,
                                   double noise_std, Rng& rng) {
  if (base.modalities() != 1)
    throw contract_error("apply_views expects a single-modality base");
  const Tensor& x = base.features[0];
  MultimodalBatch out;
  out.labels = base.labels;
  out.features.reserve(maps.size());
  for (const Tensor& w : maps) {
    if (w.rows() != x.cols())
      throw shape_error("view map does not match the base feature width");
    Tensor v({x.rows(), w.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < x.cols(); ++k)
          acc += x.at(i, k) * w.at(k, j);
        v.at(i, j) = acc + (noise_std > 0.0 ? rng.normal(0.0, noise_std) : 0.0);
      }
    out.features.push_back(std::move(v));
  }
  return out;
}

inline MultimodalBatch make_multimodal_moons(std::size_t n, double moons_noise,
                                             std::size_t modalities,
                                             double view_noise, Rng& map_rng,
                                             std::uint64_t sample_seed) {
  MultimodalBatch base = make_moons(n, moons_noise, sample_seed);
  const std::vector<Tensor> maps = view_maps(modalities, map_rng);
  Rng noise_rng = Rng(sample_seed).child(0x76696577);  // "view"
  return apply_views(base, maps, view_noise, noise_rng);
}

// Corruption sweep helpers.  Levels are ten log-spaced noise standard
// deviations from 1e-2 to 1e+1; subsets are every way of corrupting
// ceil(M/2) of the M modalities, in lexicographic order.
inline std::vector<double> noise_levels() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i)
    out.push_back(std::pow(10.0, -2.0 + static_cast<double>(i) / 3.0));
  return out;
}

inline std::vector<std::vector<std::size_t>> modality_subsets(
    std::size_t modalities) {
  if (modalities == 0) throw contract_error("modality_subsets needs M >= 1");
  const std::size_t pick = (modalities + 1) / 2;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (cur.size() == pick) {
      out.push_back(cur);
      return;
    }
    for (std::size_t i = start; i < modalities; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

// Returns a corrupted copy; the input batch is never touched.
inline MultimodalBatch inject_noise(const MultimodalBatch& batch,
                                    const std::vector<std::size_t>& subset,
                                    double noise_std, std::uint64_t seed) {
  MultimodalBatch out = batch;
  Rng rng(seed);
  for (std::size_t m : subset) {
    if (m >= out.modalities())
      throw contract_error("noise subset names a missing modality");
    Tensor& f = out.features[m];
    for (std::size_t i = 0; i < f.rows(); ++i)
      for (std::size_t j = 0; j < f.cols(); ++j)
        f.at(i, j) += rng.normal(0.0, noise_std);
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw data_error(path + ":" + std::to_string(lineno) +
                         ": not a number: '" + cell + "'");
      }
      while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
        ++used;
      if (used != cell.size())
        throw data_error(path + ":" + std::to_string(lineno) +
                         ": not a number: '" + cell + "'");
      row.push_back(v);
    }
    if (row.empty())
      throw data_error(path + ":" + std::to_string(lineno) + ": empty row");
    if (!rows.empty() && row.size() != rows.front().size())
      throw data_error(path + ":" + std::to_string(lineno) +
                       ": ragged row (expected " +
                       std::to_string(rows.front().size()) + " columns)");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw data_error(path + ": no data rows");
  return rows;
}

}  // namespace detail

struct SplitDataset {
  MultimodalBatch train;
  MultimodalBatch test;
};

// Loads one CSV per modality plus an integer-label CSV, standardises each
// feature column with train-split statistics, and splits stratified by
// class so per-class proportions survive the cut.
inline SplitDataset load_feature_dataset(
    const std::vector<std::string>& feature_paths,
    const std::string& labels_path, double split_ratio, std::uint64_t seed) {
  if (feature_paths.empty())
    throw contract_error("load_feature_dataset needs at least one modality");
  if (split_ratio <= 0.0 || split_ratio >= 1.0)
    throw contract_error("split_ratio must lie in (0, 1)");

  const auto label_rows = detail::read_csv(labels_path);
  if (label_rows.front().size() != 1)
    throw data_error(labels_path + ": expected a single label column");
  const std::size_t n = label_rows.size();
  std::vector<std::size_t> labels(n);
  std::size_t num_classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = label_rows[i][0];
    if (v < 0.0 || v != std::floor(v))
      throw data_error(labels_path + ": labels must be integers >= 0");
    labels[i] = static_cast<std::size_t>(v);
    num_classes = std::max(num_classes, labels[i] + 1);
  }
  if (num_classes < 2) throw data_error(labels_path + ": need >= 2 classes");

  MultimodalBatch all;
  for (const std::string& path : feature_paths) {
    const auto rows = detail::read_csv(path);
    if (rows.size() != n)
      throw data_error(path + ": row count does not match the labels file");
    Tensor f({n, rows.front().size()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        f.at(i, j) = rows[i][j];
    all.features.push_back(std::move(f));
  }
  all.labels = Tensor({n, num_classes});
  for (std::size_t i = 0; i < n; ++i) all.labels.at(i, labels[i]) = 1.0;

  // stratified split
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> per_class(num_classes);
  for (std::size_t i = 0; i < n; ++i) per_class[labels[i]].push_back(i);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& members = per_class[k];
    if (members.empty())
      throw data_error(labels_path + ": class " + std::to_string(k) +
                       " has no samples");
    rng.shuffle(members);
    const auto take = static_cast<std::size_t>(std::floor(
        split_ratio * static_cast<double>(members.size()) + 0.5));
    const std::size_t n_train = std::max<std::size_t>(1, std::min(take, members.size()));
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < n_train ? train_idx : test_idx).push_back(members[i]);
  }
  if (test_idx.empty())
    throw data_error("split produced an empty test set; lower split_ratio");
  rng.shuffle(train_idx);
  rng.shuffle(test_idx);

  SplitDataset out{all.rows(train_idx), all.rows(test_idx)};

  // standardise with train statistics; constant columns keep scale 1
  for (std::size_t m = 0; m < out.train.modalities(); ++m) {
    Tensor& tr = out.train.features[m];
    Tensor& te = out.test.features[m];
    for (std::size_t j = 0; j < tr.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < tr.rows(); ++i) mean += tr.at(i, j);
      mean /= static_cast<double>(tr.rows());
      double var = 0.0;
      for (std::size_t i = 0; i < tr.rows(); ++i) {
        const double d = tr.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(tr.rows());
      const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
      for (std::size_t i = 0; i < tr.rows(); ++i)
        tr.at(i, j) = (tr.at(i, j) - mean) / sd;
      for (std::size_t i = 0; i < te.rows(); ++i)
        te.at(i, j) = (te.at(i, j) - mean) / sd;
    }
  }
  return out;
}

}  // namespace mnp
