#pragma once

#include <vector>

#include "expredit/rng.hpp"
#include "expredit/util.hpp"

namespace expredit {

// Block layout of the expression code: K class blocks of d elements each,
// stored block-major (block i occupies [i*d, (i+1)*d)).
struct CodeLayout {
  int K = 3;
  int d = 5;

  int total() const { return K * d; }
  void validate() const {
    require(K >= 2, "CodeLayout: K must be >= 2");
    require(d >= 1, "CodeLayout: d must be >= 1");
  }
};

// One-hot expression label.
struct ExpressionLabel {
  std::vector<int> y;

  static ExpressionLabel of_class(int cls, int K) {
    require(cls >= 0 && cls < K, "ExpressionLabel: class index out of range");
    ExpressionLabel l;
    l.y.assign(size_t(K), 0);
    l.y[size_t(cls)] = 1;
    return l;
  }
  int active_class() const {
    int idx = -1, ones = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      if (y[i] == 1) {
        idx = int(i);
        ++ones;
      } else {
        require(y[i] == 0, "ExpressionLabel: entries must be 0 or 1");
      }
    }
    require(ones == 1, "ExpressionLabel: exactly one entry must be 1");
    return idx;
  }
};

// Block-structured continuous condition vector. The sign pattern of the
// blocks encodes the class; the shared magnitudes carry intensity style.
struct ExpressionCode {
  std::vector<double> values;  // length K*d, block-major
  CodeLayout layout;

  double block(int i, int m) const { return values[size_t(i * layout.d + m)]; }
  std::vector<double> block_vec(int i) const {
    return {values.begin() + i * layout.d, values.begin() + (i + 1) * layout.d};
  }
  double block_mean(int i) const {
    double s = 0;
    for (int m = 0; m < layout.d; ++m) s += block(i, m);
    return s / layout.d;
  }
  // Label recovery: the active block is the one with the largest mean.
  int recover_class() const {
    int best = 0;
    for (int i = 1; i < layout.K; ++i)
      if (block_mean(i) > block_mean(best)) best = i;
    return best;
  }
};

// c_i = |z_y| * (2*y_i - 1): the active block carries +|z_y|, all others -|z_y|.
ExpressionCode make_code(const ExpressionLabel& y, const std::vector<double>& z_y,
                         const CodeLayout& layout);

// Draws z_y ~ U(-1,1)^d, then applies make_code.
ExpressionCode sample_code(const ExpressionLabel& y, const CodeLayout& layout, Rng& rng);

// Test-time construction: target block all +1, every other block all -1.
ExpressionCode edit_code(int target_class, const CodeLayout& layout);

// Test-time intensity construction: one element of the target block is +1,
// every other element of the whole code is -1.
ExpressionCode sweep_code(int target_class, int level, const CodeLayout& layout);

// All elements -1: generates the neutral expression absent from training.
ExpressionCode neutral_code(const CodeLayout& layout);

}  // namespace expredit
