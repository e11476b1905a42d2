#include "tar2/nn/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::nn {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) fail(Errc::shape_mismatch,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape");
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, Errc::shape_mismatch, "ragged tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::size_t rows, std::size_t cols) {
  require(rows * cols == data_.size(), Errc::shape_mismatch, "reshape changes element count");
  rows_ = rows;
  cols_ = cols;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::axpy(double alpha, const Tensor& other) {
  require(same_shape(other), Errc::shape_mismatch, "axpy shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += alpha * other.data_[k];
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

}  // namespace

void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c, bool accumulate) {
  const ConstMap A(a.ptr(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  const ConstMap B(b.ptr(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MutMap C(c.ptr(), static_cast<Eigen::Index>(c.rows()), static_cast<Eigen::Index>(c.cols()));
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b)
    C.noalias() += A * B;
  else if (trans_a && !trans_b)
    C.noalias() += A.transpose() * B;
  else if (!trans_a && trans_b)
    C.noalias() += A * B.transpose();
  else
    C.noalias() += A.transpose() * B.transpose();
}

}  // namespace tar2::nn
