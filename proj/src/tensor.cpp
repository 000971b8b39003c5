#include "lcalsbo/tensor.hpp"

#include <cmath>

namespace lcalsbo {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string());
  }
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for tensor");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

std::vector<double> Tensor::row_vector(std::size_t r) const {
  auto s = row_span(r);
  return {s.begin(), s.end()};
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out(n, m);
  const double* bp = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* op = out.data() + i * m;
    const double* ap = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[p];
      const double* brow = bp + p * m;
      for (std::size_t j = 0; j < m; ++j) op[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out(k, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ap = a.data() + i * k;
    const double* brow = b.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[p];
      double* op = out.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) op[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ap = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bp = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ap[p] * bp[p];
      out(i, j) = s;
    }
  }
  return out;
}

void add_row_bias(Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("bias " + bias.shape_string() + " for " + a.shape_string());
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* r = a.data() + i * a.cols();
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += bias.data()[j];
  }
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus(double v) {
  // log(1 + e^v) without overflow
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

void apply_tanh(Tensor& a) {
  for (double& v : a.values()) v = std::tanh(v);
}

void apply_sigmoid(Tensor& a) {
  for (double& v : a.values()) v = sigmoid(v);
}

Tensor vstack(const Tensor& top, const Tensor& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols() != bottom.cols()) {
    throw ShapeError("vstack " + top.shape_string() + " over " + bottom.shape_string());
  }
  std::vector<double> data = top.values();
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Tensor(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = a.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace kernels
}  // namespace lcalsbo
