#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcalsbo {

/// Raised when two operands have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Vectors are 1 x n, scalars 1 x 1.
///
/// Every kernel below computes each output row from the matching input row
/// with a fixed summation order, so the result for a given row never depends
/// on how many other rows share the batch.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double item() const;

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<double> row_vector(std::size_t r) const;

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const;
  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Adds the 1 x cols bias to every row in place.
void add_row_bias(Tensor& a, const Tensor& bias);

double sigmoid(double v);
double softplus(double v);

void apply_tanh(Tensor& a);
void apply_sigmoid(Tensor& a);

/// Row-stacks two tensors with equal column counts.
Tensor vstack(const Tensor& top, const Tensor& bottom);
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);

}  // namespace kernels

}  // namespace lcalsbo
