#include "expredit/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>

namespace expredit {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ")";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void add_inplace(Tensor& y, const Tensor& x) {
  require(y.same_shape(x), "add_inplace: shape mismatch " + y.shape_str() + " vs " + x.shape_str());
  double* yd = y.data();
  const double* xd = x.data();
  for (size_t i = 0; i < y.size(); ++i) yd[i] += xd[i];
}

void axpy(Tensor& y, double a, const Tensor& x) {
  require(y.same_shape(x), "axpy: shape mismatch");
  double* yd = y.data();
  const double* xd = x.data();
  for (size_t i = 0; i < y.size(); ++i) yd[i] += a * xd[i];
}

void matmul(const double* A, long rA, long K, const double* B, long cB, double* C,
            bool accumulate) {
  CMapMat a(A, rA, K), b(B, K, cB);
  MapMat c(C, rA, cB);
  if (accumulate)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

void matmul_at_b(const double* A, long rowsA, long colsA, const double* B, long colsB,
                 double* C, bool accumulate) {
  CMapMat a(A, rowsA, colsA), b(B, rowsA, colsB);
  MapMat c(C, colsA, colsB);
  if (accumulate)
    c.noalias() += a.transpose() * b;
  else
    c.noalias() = a.transpose() * b;
}

void matmul_a_bt(const double* A, long rA, long K, const double* B, long rB, double* C,
                 bool accumulate) {
  CMapMat a(A, rA, K), b(B, rB, K);
  MapMat c(C, rA, rB);
  if (accumulate)
    c.noalias() += a * b.transpose();
  else
    c.noalias() = a * b.transpose();
}

}  // namespace expredit
