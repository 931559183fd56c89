#include "expredit/losses.hpp"

#include <cmath>

namespace expredit {

namespace {

constexpr double kProbLo = 1e-7;
constexpr double kProbHi = 1.0 - 1e-7;
const double kLn2Pi = std::log(2.0 * std::acos(-1.0));

double clamp_prob(double p) { return p < kProbLo ? kProbLo : (p > kProbHi ? kProbHi : p); }

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

void LossWeights::validate() const {
  const double ws[] = {lambda_id, lambda_q, lambda_adv_img, lambda_adv_z, lambda_tv};
  for (double w : ws) require(std::isfinite(w) && w >= 0, "LossWeights: weights must be finite and >= 0");
  require(beta.size() == 5, "LossWeights: expected 5 feature-tap weights");
  for (double b : beta) require(std::isfinite(b) && b >= 0, "LossWeights: beta must be finite and >= 0");
}

double pixel_loss(const Tensor& xhat, const Tensor& x, Tensor* dxhat) {
  require(xhat.same_shape(x), "pixel_loss: shape mismatch " + xhat.shape_str() + " vs " + x.shape_str());
  const size_t n = xhat.size();
  require(n > 0, "pixel_loss: empty input");
  double sum = 0;
  for (size_t i = 0; i < n; ++i) sum += std::abs(xhat[i] - x[i]);
  const double loss = sum / double(n);
  if (dxhat) {
    *dxhat = Tensor::zeros_like(xhat);
    for (size_t i = 0; i < n; ++i) (*dxhat)[i] = sgn(xhat[i] - x[i]) / double(n);
  }
  return loss;
}

double identity_loss(const std::vector<Tensor>& taps_xhat, const std::vector<Tensor>& taps_x,
                     const std::vector<double>& beta, std::vector<Tensor>* dtaps_xhat) {
  require(taps_xhat.size() == taps_x.size() && taps_xhat.size() == beta.size(),
          "identity_loss: tap/weight count mismatch");
  if (dtaps_xhat) dtaps_xhat->clear();
  double loss = 0;
  for (size_t l = 0; l < taps_xhat.size(); ++l) {
    Tensor grad;
    const double term = pixel_loss(taps_xhat[l], taps_x[l], dtaps_xhat ? &grad : nullptr);
    loss += beta[l] * term;
    if (dtaps_xhat) {
      for (size_t i = 0; i < grad.size(); ++i) grad[i] *= beta[l];
      dtaps_xhat->push_back(std::move(grad));
    }
  }
  return loss;
}

double q_loss(const std::vector<double>& mu, const ExpressionCode& c, const ExpressionLabel& y,
              std::vector<double>* dmu) {
  const int d = c.layout.d;
  require(int(mu.size()) == d, "q_loss: mu length != d");
  for (double m : mu) require(std::isfinite(m), "q_loss: non-finite mu");
  require(int(y.y.size()) == c.layout.K, "q_loss: label length != K");
  const std::vector<double> cy = c.block_vec(y.active_class());
  double loss = 0;
  if (dmu) dmu->assign(size_t(d), 0.0);
  for (int m = 0; m < d; ++m) {
    require(std::isfinite(cy[size_t(m)]), "q_loss: non-finite code");
    const double e = cy[size_t(m)] - mu[size_t(m)];
    loss += 0.5 * (e * e + kLn2Pi);
    if (dmu) (*dmu)[size_t(m)] = -e;
  }
  return loss;
}

double tv_loss(const Tensor& img, Tensor* dimg) {
  require(img.rank() == 4, "tv_loss: expected NHWC image, got " + img.shape_str());
  const long N = img.dim(0), H = img.dim(1), W = img.dim(2), C = img.dim(3);
  const double M = double(N) * H * W * C;
  require(M > 0, "tv_loss: empty image");
  if (dimg) *dimg = Tensor::zeros_like(img);
  double sum = 0;
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < H; ++h)
      for (long w = 0; w < W; ++w)
        for (long c = 0; c < C; ++c) {
          const double v = img.at4(n, h, w, c);
          if (w + 1 < W) {
            const double diff = img.at4(n, h, w + 1, c) - v;
            sum += std::abs(diff);
            if (dimg) {
              dimg->at4(n, h, w + 1, c) += sgn(diff) / M;
              dimg->at4(n, h, w, c) -= sgn(diff) / M;
            }
          }
          if (h + 1 < H) {
            const double diff = img.at4(n, h + 1, w, c) - v;
            sum += std::abs(diff);
            if (dimg) {
              dimg->at4(n, h + 1, w, c) += sgn(diff) / M;
              dimg->at4(n, h, w, c) -= sgn(diff) / M;
            }
          }
        }
  return sum / M;
}

double adv_d_loss(const Tensor& p_real, const Tensor& p_fake, Tensor* dp_real, Tensor* dp_fake) {
  const size_t nr = p_real.size(), nf = p_fake.size();
  require(nr > 0 && nf > 0, "adv_d_loss: empty probability batch");
  if (dp_real) *dp_real = Tensor::zeros_like(p_real);
  if (dp_fake) *dp_fake = Tensor::zeros_like(p_fake);
  double loss = 0;
  for (size_t i = 0; i < nr; ++i) {
    const double p = clamp_prob(p_real[i]);
    loss -= std::log(p) / double(nr);
    if (dp_real && p_real[i] > kProbLo && p_real[i] < kProbHi)
      (*dp_real)[i] = -1.0 / (p * double(nr));
  }
  for (size_t i = 0; i < nf; ++i) {
    const double p = clamp_prob(p_fake[i]);
    loss -= std::log(1.0 - p) / double(nf);
    if (dp_fake && p_fake[i] > kProbLo && p_fake[i] < kProbHi)
      (*dp_fake)[i] = 1.0 / ((1.0 - p) * double(nf));
  }
  return loss;
}

double adv_g_loss(const Tensor& p_fake, Tensor* dp_fake) {
  const size_t n = p_fake.size();
  require(n > 0, "adv_g_loss: empty probability batch");
  if (dp_fake) *dp_fake = Tensor::zeros_like(p_fake);
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double p = clamp_prob(p_fake[i]);
    loss -= std::log(p) / double(n);
    if (dp_fake && p_fake[i] > kProbLo && p_fake[i] < kProbHi)
      (*dp_fake)[i] = -1.0 / (p * double(n));
  }
  return loss;
}

AdvPair adv_z_losses(const Tensor& p_prior, const Tensor& p_encoded) {
  return {adv_d_loss(p_prior, p_encoded), adv_g_loss(p_encoded)};
}

AdvPair adv_img_losses(const Tensor& p_real, const Tensor& p_fake) {
  return {adv_d_loss(p_real, p_fake), adv_g_loss(p_fake)};
}

LossReport total_loss(double pixel, double id, double q, double adv_img, double adv_z,
                      double tv, const LossWeights& w) {
  w.validate();
  const double comps[] = {pixel, id, q, adv_img, adv_z, tv};
  const char* names[] = {"pixel", "id", "q", "adv_img", "adv_z", "tv"};
  for (int i = 0; i < 6; ++i)
    if (!std::isfinite(comps[i]))
      throw TrainError(std::string("total_loss: non-finite component ") + names[i]);
  LossReport r;
  r.pixel = pixel;
  r.id = id;
  r.q = q;
  r.adv_img = adv_img;
  r.adv_z = adv_z;
  r.tv = tv;
  // Fixed order: smallest weighted terms first. Keep in sync with the header
  // comment; tests pin the exact bits.
  r.total = w.lambda_tv * tv + w.lambda_adv_z * adv_z + w.lambda_adv_img * adv_img +
            w.lambda_q * q + w.lambda_id * id + pixel;
  return r;
}

MiBoundResult mi_bound_toy_check(const std::vector<std::vector<double>>& joint,
                                 const std::vector<std::vector<double>>& q_table) {
  const size_t nc = joint.size();
  require(nc > 0 && nc <= 16, "mi_bound_toy_check: bad c support");
  const size_t nx = joint[0].size();
  require(nx > 0 && nx <= 16, "mi_bound_toy_check: bad xhat support");
  require(q_table.size() == nc, "mi_bound_toy_check: q rows != c support");
  double total = 0;
  for (const auto& row : joint) {
    require(row.size() == nx, "mi_bound_toy_check: ragged joint");
    for (double p : row) {
      require(std::isfinite(p) && p >= 0, "mi_bound_toy_check: bad joint entry");
      total += p;
    }
  }
  require(std::abs(total - 1.0) <= 1e-9, "mi_bound_toy_check: joint not normalized");
  for (size_t j = 0; j < nx; ++j) {
    double col = 0;
    for (size_t i = 0; i < nc; ++i) {
      require(q_table[i].size() == nx, "mi_bound_toy_check: ragged q");
      require(std::isfinite(q_table[i][j]) && q_table[i][j] >= 0,
              "mi_bound_toy_check: bad q entry");
      col += q_table[i][j];
    }
    require(std::abs(col - 1.0) <= 1e-9, "mi_bound_toy_check: q column not normalized");
  }

  std::vector<double> pc(nc, 0.0), px(nx, 0.0);
  for (size_t i = 0; i < nc; ++i)
    for (size_t j = 0; j < nx; ++j) {
      pc[i] += joint[i][j];
      px[j] += joint[i][j];
    }

  double hc = 0;
  for (size_t i = 0; i < nc; ++i)
    if (pc[i] > 0) hc -= pc[i] * std::log(pc[i]);

  MiBoundResult r;
  double e_log_q = 0;
  for (size_t i = 0; i < nc; ++i)
    for (size_t j = 0; j < nx; ++j) {
      const double p = joint[i][j];
      if (p <= 0) continue;
      e_log_q += p * std::log(std::max(q_table[i][j], 1e-300));
      r.true_mi += p * std::log(p / (pc[i] * px[j]));
    }
  r.bound = e_log_q + hc;
  return r;
}

}  // namespace expredit
