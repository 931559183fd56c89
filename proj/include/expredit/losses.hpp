#pragma once

#include <vector>

#include "expredit/exprcode.hpp"
#include "expredit/tensor.hpp"

namespace expredit {

struct LossWeights {
  double lambda_id = 1.0;
  double lambda_q = 1.0;
  double lambda_adv_img = 0.01;
  double lambda_adv_z = 0.01;
  double lambda_tv = 0.001;
  std::vector<double> beta = {1, 1, 1, 1, 1};  // per feature tap

  void validate() const;
};

struct LossReport {
  double pixel = 0, id = 0, q = 0, adv_img = 0, adv_z = 0, tv = 0;
  double total = 0;
};

// Mean absolute difference over all entries. Optional gradient wrt xhat.
double pixel_loss(const Tensor& xhat, const Tensor& x, Tensor* dxhat = nullptr);

// Sum_l beta[l] * mean-abs difference of the feature taps. Gradients are wrt
// the xhat-side taps.
double identity_loss(const std::vector<Tensor>& taps_xhat, const std::vector<Tensor>& taps_x,
                     const std::vector<double>& beta,
                     std::vector<Tensor>* dtaps_xhat = nullptr);

// Negative log-density of the code's active block under a unit-variance
// factored Gaussian with mean mu: 0.5 * sum_m ((c_y[m]-mu[m])^2 + ln 2pi).
// The conditional entropy of the code is constant and omitted.
double q_loss(const std::vector<double>& mu, const ExpressionCode& c, const ExpressionLabel& y,
              std::vector<double>* dmu = nullptr);

// Anisotropic total variation: sum of |horizontal diff| + |vertical diff|
// divided by the entry count N*H*W*C. Degenerate 1x1 image gives 0.
double tv_loss(const Tensor& img, Tensor* dimg = nullptr);

struct AdvPair {
  double d_loss = 0, g_loss = 0;
};

// Two-sided discriminator cross-entropy plus the non-saturating generator
// loss, on discriminator probability outputs of shape (N, 1). Probabilities
// are clamped to [1e-7, 1-1e-7] before logs; the clamp gates the gradients.
double adv_d_loss(const Tensor& p_real, const Tensor& p_fake, Tensor* dp_real = nullptr,
                  Tensor* dp_fake = nullptr);
double adv_g_loss(const Tensor& p_fake, Tensor* dp_fake = nullptr);

// Prior-matching pair for the identity code: d_loss treats prior samples as
// real and encoded codes as fake.
AdvPair adv_z_losses(const Tensor& p_prior, const Tensor& p_encoded);
// Conditional image pair: probabilities come from the image discriminator on
// (x, y) and (xhat, y).
AdvPair adv_img_losses(const Tensor& p_real, const Tensor& p_fake);

// Weighted sum of all terms. The accumulation order is fixed and documented:
// starting from the smallest weighted term,
//   lambda_tv*tv + lambda_adv_z*adv_z + lambda_adv_img*adv_img
//     + lambda_q*q + lambda_id*id + pixel,
// so recomputing a report's total from its components is bit-reproducible.
LossReport total_loss(double pixel, double id, double q, double adv_img, double adv_z,
                      double tv, const LossWeights& w);

struct MiBoundResult {
  double bound = 0;
  double true_mi = 0;
};

// Discrete toy check of the variational lower bound on I(c; xhat | y) for one
// fixed y. joint[i][j] = P(c=i, xhat=j), normalized. q_table[i][j] = q(c=i |
// xhat=j), each column normalized. bound = E[log q(c|xhat)] + H(c); true_mi
// by direct summation. bound <= true_mi with equality iff q is the posterior.
MiBoundResult mi_bound_toy_check(const std::vector<std::vector<double>>& joint,
                                 const std::vector<std::vector<double>>& q_table);

}  // namespace expredit
