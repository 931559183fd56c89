#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "expredit/util.hpp"

namespace expredit {

// Dense double tensor. Layout is row-major over dims; images are NHWC
// (index ((n*H + h)*W + w)*C + c), feature matrices are (N, F).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> dims) : dims_(std::move(dims)) {
    long n = 1;
    for (long d : dims_) {
      require(d >= 0, "Tensor: negative dim");
      n *= d;
    }
    data_.assign(size_t(n), 0.0);
  }
  Tensor(std::initializer_list<long> dims) : Tensor(std::vector<long>(dims)) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.dims_); }

  const std::vector<long>& dims() const { return dims_; }
  long dim(int i) const { return dims_[size_t(i)]; }
  int rank() const { return int(dims_.size()); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at2(long n, long f) { return data_[size_t(n * dims_[1] + f)]; }
  const double& at2(long n, long f) const { return data_[size_t(n * dims_[1] + f)]; }
  double& at4(long n, long h, long w, long c) {
    return data_[size_t(((n * dims_[1] + h) * dims_[2] + w) * dims_[3] + c)];
  }
  const double& at4(long n, long h, long w, long c) const {
    return data_[size_t(((n * dims_[1] + h) * dims_[2] + w) * dims_[3] + c)];
  }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  std::string shape_str() const;
  bool all_finite() const;

  Tensor reshaped(std::vector<long> dims) const {
    Tensor t;
    long n = 1;
    for (long d : dims) n *= d;
    require(size_t(n) == data_.size(), "reshape: element count mismatch");
    t.dims_ = std::move(dims);
    t.data_ = data_;
    return t;
  }

 private:
  std::vector<long> dims_;
  std::vector<double> data_;
};

// y += x (same shape).
void add_inplace(Tensor& y, const Tensor& x);
// y += a*x
void axpy(Tensor& y, double a, const Tensor& x);

// C = A(rA x K) * B(K x cB), all row-major dense; accumulate adds into C.
void matmul(const double* A, long rA, long K, const double* B, long cB, double* C,
            bool accumulate);
// C = A^T(K x rA -> rA x K input) * B(rA-rows x cB): result K x cB.
void matmul_at_b(const double* A, long rowsA, long colsA, const double* B, long colsB,
                 double* C, bool accumulate);
// C = A(rA x K) * B^T where B is (rB x K): result rA x rB.
void matmul_a_bt(const double* A, long rA, long K, const double* B, long rB, double* C,
                 bool accumulate);

}  // namespace expredit
