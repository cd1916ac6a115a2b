#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "radnmt/error.hpp"
#include "radnmt/rng.hpp"

namespace radnmt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles with an optional gradient accumulator.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor of shape " + shape_str(shape_) + " given " + std::to_string(data_.size()) + " values");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  bool requires_grad() const noexcept { return requires_grad_; }

  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on)
      grad_.assign(data_.size(), 0.0);
    else
      grad_.clear();
    return *this;
  }

  bool has_grad() const noexcept { return requires_grad_; }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Same shape and bit-identical values.
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

/// i.i.d. uniform values in [low, high).
inline Tensor uniform_init(const Shape& shape, Rng& rng, double low = -0.1, double high = 0.1) {
  if (!(low < high)) throw std::invalid_argument("uniform_init requires low < high");
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(low, high);
  return t;
}

/// Global L2 norm over the gradients of `params`.
inline double global_grad_norm(std::span<Tensor* const> params) {
  double sq = 0.0;
  for (const Tensor* p : params)
    for (double g : p->grad()) sq += g * g;
  return std::sqrt(sq);
}

/// Rescales all gradients by max_norm / norm when the global norm exceeds max_norm.
/// Returns the norm before clipping.
inline double clip_by_global_norm(std::span<Tensor* const> params, double max_norm = 1.0) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("clip_by_global_norm: gradient norm is not finite");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor* p : params)
      for (double& g : p->grad()) g *= scale;
  }
  return norm;
}

}  // namespace radnmt
