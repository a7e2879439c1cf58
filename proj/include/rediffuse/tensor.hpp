#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rediffuse {

// Dense row-major tensor, up to 4 axes. The two shapes used throughout:
//   planar image : (H, W, C)          values in [0,1] for image data
//   feature field: (H, W, M, C)       M = rotation-group order
// Last axis is fastest-varying.
template <typename T>
struct Tensor {
  std::array<int, 4> dims{1, 1, 1, 1};
  int ndim = 0;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::initializer_list<int> shape) { resize(shape); }

  void resize(std::initializer_list<int> shape) {
    if (shape.size() == 0 || shape.size() > 4)
      throw std::invalid_argument("tensor rank must be 1..4");
    ndim = static_cast<int>(shape.size());
    dims = {1, 1, 1, 1};
    int i = 0;
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      dims[i++] = d;
      n *= static_cast<size_t>(d);
    }
    data.assign(n, T(0));
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // rank-4 (field) access
  T& operator()(int i, int j, int g, int c) {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + g) * dims[3] + c];
  }
  const T& operator()(int i, int j, int g, int c) const {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + g) * dims[3] + c];
  }

  // rank-3 (planar) access
  T& operator()(int i, int j, int c) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + c];
  }
  const T& operator()(int i, int j, int c) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + c];
  }

  // rank-1 access
  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return ndim == o.ndim && dims == o.dims; }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < ndim; ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  Tensor<T> r;
  r.dims = t.dims;
  r.ndim = t.ndim;
  r.data.assign(t.data.size(), T(0));
  return r;
}

template <typename T, typename U>
Tensor<T> cast_tensor(const Tensor<U>& t) {
  Tensor<T> r;
  r.dims = t.dims;
  r.ndim = t.ndim;
  r.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) r.data[i] = static_cast<T>(t.data[i]);
  return r;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace rediffuse
