#pragma once

// Binary model snapshots. A checkpoint stores the resolved config, every
// named parameter tensor, and the context memory (features + FIFO cursors),
// enough to rebuild a model that predicts bit-identically to the one saved.
// Optimizer moments are deliberately not stored; checkpoints resume
// inference, not training. Format is native-endian and intended for
// same-machine round trips.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mnp/config.hpp"
#include "mnp/context_memory.hpp"
#include "mnp/model.hpp"
#include "mnp/tensor.hpp"

namespace mnp {

namespace detail {

constexpr char kCkptMagic[8] = {'M', 'N', 'P', 'C', 'K', 'P', 'T', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw data_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > (1ull << 30)) throw data_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw data_error("checkpoint: truncated file");
  return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.shape().size());
  for (std::size_t d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = read_u64(is);
  if (rank > 4) throw data_error("checkpoint: implausible tensor rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data().data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw data_error("checkpoint: truncated file");
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const MnpModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot open checkpoint for writing: " + path);

  os.write(detail::kCkptMagic, sizeof detail::kCkptMagic);
  detail::write_string(os, config_to_json(model.config()).dump());

  detail::write_u64(os, model.raw_dims().size());
  for (std::size_t d : model.raw_dims()) detail::write_u64(os, d);
  detail::write_u64(os, model.num_classes());

  const auto params = model.named_parameters();
  detail::write_u64(os, params.size());
  for (const auto& [name, v] : params) {
    detail::write_string(os, name);
    detail::write_tensor(os, v.value());
  }

  const ContextMemory& mem = model.memory();
  detail::write_u64(os, mem.per_class());
  if (mem.per_class() > 0) {
    for (std::size_t m = 0; m < mem.modalities(); ++m)
      detail::write_tensor(os, mem.features(m));
    for (const auto& per_class_cursor : mem.fifo_state()) {
      detail::write_u64(os, per_class_cursor.size());
      for (std::size_t c : per_class_cursor) detail::write_u64(os, c);
    }
  }
  if (!os) throw data_error("checkpoint: write failed: " + path);
}

inline MnpModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint: " + path);

  char magic[sizeof detail::kCkptMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof magic) != 0)
    throw data_error("not a checkpoint file: " + path);

  ExperimentConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(detail::read_string(is)));
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("checkpoint: bad embedded config: ") + e.what());
  }

  std::vector<std::size_t> raw_dims(detail::read_u64(is));
  for (auto& d : raw_dims) d = static_cast<std::size_t>(detail::read_u64(is));
  const auto num_classes = static_cast<std::size_t>(detail::read_u64(is));

  MnpModel model(cfg, raw_dims, num_classes);

  const std::uint64_t n_params = detail::read_u64(is);
  auto params = model.named_parameters();
  if (n_params != params.size())
    throw data_error("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = detail::read_string(is);
    if (name != params[i].first)
      throw data_error("checkpoint: unexpected parameter " + name);
    Tensor t = detail::read_tensor(is);
    if (t.shape() != params[i].second.value().shape())
      throw data_error("checkpoint: shape mismatch for " + name);
    params[i].second.mutable_value() = std::move(t);
  }

  const auto per_class = static_cast<std::size_t>(detail::read_u64(is));
  if (per_class > 0) {
    std::vector<Tensor> features;
    features.reserve(raw_dims.size());
    for (std::size_t m = 0; m < raw_dims.size(); ++m)
      features.push_back(detail::read_tensor(is));
    std::vector<std::vector<std::size_t>> fifo(raw_dims.size());
    for (auto& per_class_cursor : fifo) {
      per_class_cursor.resize(detail::read_u64(is));
      for (auto& c : per_class_cursor)
        c = static_cast<std::size_t>(detail::read_u64(is));
    }
    model.set_memory(ContextMemory::from_parts(per_class, num_classes,
                                               std::move(features),
                                               std::move(fifo)));
  }
  return model;
}

}  // namespace mnp
