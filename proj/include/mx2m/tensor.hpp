// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mx2m {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  if (s.empty()) throw ShapeError("tensor shape must have at least one dimension");
  int64_t n = 1;
  for (int d : s) {
    if (d < 1) throw ShapeError("tensor dimensions must be >= 1");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major tensor of 64-bit floats.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

  static Tensor scalar(double v) {
    Tensor t(Shape{1});
    t.data[0] = v;
    return t;
  }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor from(Shape s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (shape_numel(t.shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(t.shape));
    t.data = std::move(values);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  int rows() const {
    if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[0];
  }
  int cols() const {
    if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[1];
  }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols_unchecked() + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols_unchecked() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Any NaN/Inf makes the |v| running sum non-finite; a spurious overflow of
  // the sum itself would need magnitudes ~1e308, far outside desk scale.
  bool all_finite() const {
    double acc = 0.0;
    for (double v : data) acc += std::fabs(v);
    return std::isfinite(acc);
  }

 private:
  size_t cols_unchecked() const { return static_cast<size_t>(shape[1]); }
};

}  // namespace mx2m
