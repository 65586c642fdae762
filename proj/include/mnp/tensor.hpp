#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnp {

// Error taxonomy.  The CLI maps these onto process exit codes; library code
// just throws and lets the caller decide.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Operand shapes are incompatible with the requested operation.
struct shape_error : error {
  using error::error;
};
// An API precondition was violated (non-positive variance, reused graph, ...).
struct contract_error : error {
  using error::error;
};
// Bad user-supplied configuration or command line.
struct config_error : error {
  using error::error;
};
// Ingestion problems: unreadable files, ragged CSV rows, label mismatches.
struct data_error : error {
  using error::error;
};
// Numerics went off the rails (non-finite loss or gradients, domain errors).
struct numeric_error : error {
  using error::error;
};

// Dense row-major tensor of 64-bit floats.  Rank is 1 or 2 everywhere in this
// library; rank-1 is treated as a single row by the broadcasting rules.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw shape_error("tensor data length does not match shape");
  }

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  // values listed row by row
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  // rank-1 tensors behave as a single row
  std::size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  std::size_t cols() const {
    if (rank() == 0) return 0;
    return rank() == 1 ? shape_[0] : shape_[1];
  }

  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double min_value() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double x : data_) m = std::min(m, x);
    return m;
  }

  double max_value() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double x : data_) m = std::max(m, x);
    return m;
  }

  Tensor row_copy(std::size_t i) const {
    Tensor out({1, cols()});
    for (std::size_t j = 0; j < cols(); ++j) out.at(0, j) = at(i, j);
    return out;
  }

  void set_row(std::size_t i, const Tensor& src, std::size_t src_row = 0) {
    if (src.cols() != cols()) throw shape_error("set_row: column mismatch");
    for (std::size_t j = 0; j < cols(); ++j) at(i, j) = src.at(src_row, j);
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw shape_error("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline Tensor vstack(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw shape_error("vstack: column mismatch");
  Tensor out({a.rows() + b.rows(), a.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) out.set_row(i, a, i);
  for (std::size_t i = 0; i < b.rows(); ++i) out.set_row(a.rows() + i, b, i);
  return out;
}

}  // namespace mnp
