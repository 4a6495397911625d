#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "umono/common.hpp"

namespace umono {

template <typename Scalar>
class Graph;

// Dense row-major n-d array. Value-semantic: copies are independent values.
// The tape/node fields tie a value to the graph that produced it; the weak
// token lapses when that graph dies or resets, after which the tensor is a
// plain constant again.
template <typename Scalar>
struct Tensor {
  std::vector<int> shape;
  std::vector<Scalar> data;
  bool requires_grad = false;

  std::weak_ptr<Graph<Scalar>* const> tape;
  int node = -1;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp, Scalar fill = Scalar(0))
      : shape(std::move(shp)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
  static Tensor full(std::vector<int> shp, Scalar v) { return Tensor(std::move(shp), v); }
  static Tensor scalar(Scalar v) { return Tensor({1}, v); }
  static Tensor from(std::vector<int> shp, std::vector<Scalar> values) {
    if (shape_numel(shp) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shp));
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(values);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::int64_t offset(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
      off = off * shape[static_cast<std::size_t>(axis)] + i;
      ++axis;
    }
    return off;
  }

  Scalar& at(std::initializer_list<int> idx) { return data[static_cast<std::size_t>(offset(idx))]; }
  const Scalar& at(std::initializer_list<int> idx) const {
    return data[static_cast<std::size_t>(offset(idx))];
  }

  // Value copy with no tape linkage.
  Tensor detached() const {
    Tensor t;
    t.shape = shape;
    t.data = data;
    return t;
  }

  bool all_finite() const {
    for (Scalar v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

inline std::vector<std::int64_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<std::int64_t> st(shape.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return st;
}

}  // namespace umono
