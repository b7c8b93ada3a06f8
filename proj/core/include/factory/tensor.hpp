#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace factory {

class Rng;

/// Dense row-major double tensor, rank 0..4. The convention throughout is
/// [N, C, H, W] for activations, [Cout, Cin, kh, kw] for conv kernels,
/// [rows, cols] for matrices and [n] for vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<double> values);  // 1-D
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double& at3(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double& at4(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at4(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  double item() const {
    assert(size() == 1);
    return data_[0];
  }
  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;

  void fill(double v);
  void add_inplace(const Tensor& o, double scale = 1.0);
  void scale_inplace(double s);

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::int64_t shape_size(const std::vector<int>& shape);

}  // namespace factory
