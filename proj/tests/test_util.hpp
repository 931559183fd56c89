#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "expredit/nn.hpp"
#include "expredit/tensor.hpp"

namespace testutil {

// Central finite differences with step 1e-5 against an analytic gradient.
// rel err uses max(|a|, |fd|, 1) as denominator; near-zero pairs pass on an
// absolute 1e-8 test.
struct GradCheck {
  double max_rel = 0;
  int worst_index = -1;
  bool ok = true;
};

inline GradCheck check_grad(std::vector<double*> slots, const std::vector<double>& analytic,
                            const std::function<double()>& loss, double step = 1e-5,
                            double tol = 1e-4) {
  GradCheck r;
  for (size_t i = 0; i < slots.size(); ++i) {
    const double orig = *slots[i];
    *slots[i] = orig + step;
    const double up = loss();
    *slots[i] = orig - step;
    const double dn = loss();
    *slots[i] = orig;
    const double fd = (up - dn) / (2 * step);
    const double a = analytic[i];
    if (std::abs(a) < 1e-8 && std::abs(fd) < 1e-8) continue;
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = int(i);
    }
    if (rel > tol) r.ok = false;
  }
  return r;
}

inline std::vector<double*> tensor_slots(expredit::Tensor& t) {
  std::vector<double*> s;
  for (size_t i = 0; i < t.size(); ++i) s.push_back(&t[i]);
  return s;
}

inline std::vector<double*> param_slots(const std::vector<expredit::nn::Param*>& ps) {
  std::vector<double*> s;
  for (auto* p : ps)
    if (p->learnable)
      for (size_t i = 0; i < p->value.size(); ++i) s.push_back(&p->value[i]);
  return s;
}

inline std::vector<double> param_grads(const std::vector<expredit::nn::Param*>& ps) {
  std::vector<double> g;
  for (auto* p : ps)
    if (p->learnable)
      for (size_t i = 0; i < p->grad.size(); ++i) g.push_back(p->grad[i]);
  return g;
}

inline std::vector<double> tensor_vec(const expredit::Tensor& t) {
  return {t.data(), t.data() + t.size()};
}

}  // namespace testutil
