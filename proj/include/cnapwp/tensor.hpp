#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cnapwp {

/// Dense row-major matrix of doubles. Products accumulate strictly in index
/// order so that zero-padded shapes reproduce unpadded results bit for bit.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// out += a^T * b
void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a * b^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// Stacks `top` over `bottom` (equal column counts).
Matrix vstack(const Matrix& top, const Matrix& bottom);

/// Learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace cnapwp
