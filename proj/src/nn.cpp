#include "expredit/nn.hpp"

#include <algorithm>
#include <cmath>

namespace expredit::nn {

namespace {

// Bounds the transient im2col buffer (~32 MB of doubles).
constexpr long kMaxColDoubles = 4L * 1024 * 1024;

void init_matrix(Param& p, double gain, long fan_in, Rng& rng) {
  const double std = gain / std::sqrt(double(fan_in));
  for (size_t i = 0; i < p.value.size(); ++i) p.value[i] = std * rng.normal();
}

struct PadSpec {
  long out, before, after;
};

PadSpec same_pad(long in, long k, long stride) {
  const long out = (in + stride - 1) / stride;
  const long total = std::max<long>(0, (out - 1) * stride + k - in);
  return {out, total / 2, total - total / 2};
}

// Extracts k x k patches (SAME padding, zeros outside) for rows [n0, n1) of the
// batch into cols: one row per output pixel, k*k*C columns.
void im2col(const Tensor& x, long n0, long n1, long k, long stride, const PadSpec& ph,
            const PadSpec& pw, Tensor& cols) {
  const long H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const long OH = ph.out, OW = pw.out;
  const long patch = k * k * C;
  double* out = cols.data();
  const double* in = x.data();
  for (long n = n0; n < n1; ++n) {
    const double* img = in + n * H * W * C;
    for (long oh = 0; oh < OH; ++oh) {
      const long h0 = oh * stride - ph.before;
      for (long ow = 0; ow < OW; ++ow) {
        const long w0 = ow * stride - pw.before;
        double* row = out + (((n - n0) * OH + oh) * OW + ow) * patch;
        for (long kh = 0; kh < k; ++kh) {
          const long h = h0 + kh;
          double* dst = row + kh * k * C;
          if (h < 0 || h >= H) {
            std::fill(dst, dst + k * C, 0.0);
            continue;
          }
          for (long kw = 0; kw < k; ++kw) {
            const long w = w0 + kw;
            if (w < 0 || w >= W)
              std::fill(dst + kw * C, dst + (kw + 1) * C, 0.0);
            else
              std::copy(img + (h * W + w) * C, img + (h * W + w) * C + C, dst + kw * C);
          }
        }
      }
    }
  }
}

// Scatter-adds patch gradients back to the input image gradient.
void col2im(const Tensor& dcols, long n0, long n1, long k, long stride, const PadSpec& ph,
            const PadSpec& pw, Tensor& dx) {
  const long H = dx.dim(1), W = dx.dim(2), C = dx.dim(3);
  const long OH = ph.out, OW = pw.out;
  const long patch = k * k * C;
  const double* in = dcols.data();
  double* out = dx.data();
  for (long n = n0; n < n1; ++n) {
    double* img = out + n * H * W * C;
    for (long oh = 0; oh < OH; ++oh) {
      const long h0 = oh * stride - ph.before;
      for (long ow = 0; ow < OW; ++ow) {
        const long w0 = ow * stride - pw.before;
        const double* row = in + (((n - n0) * OH + oh) * OW + ow) * patch;
        for (long kh = 0; kh < k; ++kh) {
          const long h = h0 + kh;
          if (h < 0 || h >= H) continue;
          for (long kw = 0; kw < k; ++kw) {
            const long w = w0 + kw;
            if (w < 0 || w >= W) continue;
            const double* src = row + (kh * k + kw) * C;
            double* dst = img + (h * W + w) * C;
            for (long c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- Dense ----

Dense::Dense(int in, int out, double init_gain, Rng& rng, const std::string& name)
    : in_(in), out_(out) {
  W.name = name + ".W";
  W.value = Tensor({long(in), long(out)});
  b.name = name + ".b";
  b.value = Tensor({long(out)});
  init_matrix(W, init_gain, in, rng);
}

Tensor Dense::forward(const Tensor& x, bool) {
  require(x.rank() == 2 && x.dim(1) == in_, "Dense: bad input shape " + x.shape_str());
  x_cache_ = x;
  const long N = x.dim(0);
  Tensor y({N, long(out_)});
  matmul(x.data(), N, in_, W.value.data(), out_, y.data(), false);
  for (long n = 0; n < N; ++n)
    for (long f = 0; f < out_; ++f) y.at2(n, f) += b.value[size_t(f)];
  return y;
}

Tensor Dense::backward(const Tensor& dy, bool acc) {
  const long N = dy.dim(0);
  if (acc) {
    W.ensure_grad();
    b.ensure_grad();
    matmul_at_b(x_cache_.data(), N, in_, dy.data(), out_, W.grad.data(), true);
    for (long n = 0; n < N; ++n)
      for (long f = 0; f < out_; ++f) b.grad[size_t(f)] += dy.at2(n, f);
  }
  Tensor dx({N, long(in_)});
  matmul_a_bt(dy.data(), N, out_, W.value.data(), in_, dx.data(), false);
  return dx;
}

void Dense::collect_params(std::vector<Param*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// ---- Conv2d ----

Conv2d::Conv2d(int in_c, int out_c, int k, int stride, double init_gain, Rng& rng,
               const std::string& name)
    : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride) {
  W.name = name + ".W";
  W.value = Tensor({long(k) * k * in_c, long(out_c)});
  b.name = name + ".b";
  b.value = Tensor({long(out_c)});
  init_matrix(W, init_gain, long(k) * k * in_c, rng);
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  require(x.rank() == 4 && x.dim(3) == in_c_, "Conv2d: bad input shape " + x.shape_str());
  x_cache_ = x;
  const long N = x.dim(0);
  const PadSpec ph = same_pad(x.dim(1), k_, stride_);
  const PadSpec pw = same_pad(x.dim(2), k_, stride_);
  const long patch = long(k_) * k_ * in_c_;
  const long rows_per_img = ph.out * pw.out;
  const long chunk = std::max<long>(1, kMaxColDoubles / std::max<long>(1, rows_per_img * patch));

  Tensor y({N, ph.out, pw.out, long(out_c_)});
  Tensor cols({std::min(chunk, N) * rows_per_img, patch});
  for (long n0 = 0; n0 < N; n0 += chunk) {
    const long n1 = std::min(N, n0 + chunk);
    im2col(x, n0, n1, k_, stride_, ph, pw, cols);
    matmul(cols.data(), (n1 - n0) * rows_per_img, patch, W.value.data(), out_c_,
           y.data() + n0 * rows_per_img * out_c_, false);
  }
  double* yd = y.data();
  for (long r = 0; r < N * rows_per_img; ++r)
    for (long c = 0; c < out_c_; ++c) yd[r * out_c_ + c] += b.value[size_t(c)];
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool acc) {
  const Tensor& x = x_cache_;
  const long N = x.dim(0);
  const PadSpec ph = same_pad(x.dim(1), k_, stride_);
  const PadSpec pw = same_pad(x.dim(2), k_, stride_);
  const long patch = long(k_) * k_ * in_c_;
  const long rows_per_img = ph.out * pw.out;
  const long chunk = std::max<long>(1, kMaxColDoubles / std::max<long>(1, rows_per_img * patch));

  if (acc) {
    W.ensure_grad();
    b.ensure_grad();
    const double* dyd = dy.data();
    for (long r = 0; r < N * rows_per_img; ++r)
      for (long c = 0; c < out_c_; ++c) b.grad[size_t(c)] += dyd[r * out_c_ + c];
  }

  Tensor dx(x.dims());
  Tensor cols({std::min(chunk, N) * rows_per_img, patch});
  Tensor dcols({std::min(chunk, N) * rows_per_img, patch});
  for (long n0 = 0; n0 < N; n0 += chunk) {
    const long n1 = std::min(N, n0 + chunk);
    const long rows = (n1 - n0) * rows_per_img;
    const double* dy_chunk = dy.data() + n0 * rows_per_img * out_c_;
    if (acc) {
      im2col(x, n0, n1, k_, stride_, ph, pw, cols);
      matmul_at_b(cols.data(), rows, patch, dy_chunk, out_c_, W.grad.data(), true);
    }
    matmul_a_bt(dy_chunk, rows, out_c_, W.value.data(), patch, dcols.data(), false);
    col2im(dcols, n0, n1, k_, stride_, ph, pw, dx);
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// ---- NNUpsample2 ----

Tensor NNUpsample2::forward(const Tensor& x, bool) {
  const long N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor y({N, 2 * H, 2 * W, C});
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < 2 * H; ++h)
      for (long w = 0; w < 2 * W; ++w) {
        const double* src = &x.at4(n, h / 2, w / 2, 0);
        double* dst = &y.at4(n, h, w, 0);
        std::copy(src, src + C, dst);
      }
  return y;
}

Tensor NNUpsample2::backward(const Tensor& dy, bool) {
  const long N = dy.dim(0), H2 = dy.dim(1), W2 = dy.dim(2), C = dy.dim(3);
  Tensor dx({N, H2 / 2, W2 / 2, C});
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < H2; ++h)
      for (long w = 0; w < W2; ++w) {
        const double* src = &dy.at4(n, h, w, 0);
        double* dst = &dx.at4(n, h / 2, w / 2, 0);
        for (long c = 0; c < C; ++c) dst[c] += src[c];
      }
  return dx;
}

// ---- activations ----

Tensor ReLU::forward(const Tensor& x, bool) {
  x_cache_ = x;
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0 ? y[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& dy, bool) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (x_cache_[i] <= 0) dx[i] = 0.0;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool) {
  x_cache_ = x;
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0) y[i] *= slope_;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy, bool) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (x_cache_[i] < 0) dx[i] *= slope_;
  return dx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  y_cache_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& dy, bool) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y_cache_[i] * y_cache_[i];
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  y_cache_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy, bool) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) dx[i] *= y_cache_[i] * (1.0 - y_cache_[i]);
  return dx;
}

// ---- BatchNorm ----

BatchNorm::BatchNorm(int channels, const std::string& name) : c_(channels) {
  gamma.name = name + ".gamma";
  gamma.value = Tensor({long(channels)});
  gamma.value.fill(1.0);
  beta.name = name + ".beta";
  beta.value = Tensor({long(channels)});
  run_mean.name = name + ".run_mean";
  run_mean.value = Tensor({long(channels)});
  run_mean.learnable = false;
  run_var.name = name + ".run_var";
  run_var.value = Tensor({long(channels)});
  run_var.value.fill(1.0);
  run_var.learnable = false;
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  const long C = x.dims().back();
  require(C == c_, "BatchNorm: channel mismatch");
  in_dims_ = x.dims();
  const long rows = long(x.size()) / C;
  const double* xd = x.data();

  std::vector<double> mean(size_t(C), 0.0), var(size_t(C), 0.0);
  if (train) {
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < C; ++c) mean[size_t(c)] += xd[r * C + c];
    for (long c = 0; c < C; ++c) mean[size_t(c)] /= double(rows);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < C; ++c) {
        const double d = xd[r * C + c] - mean[size_t(c)];
        var[size_t(c)] += d * d;
      }
    for (long c = 0; c < C; ++c) var[size_t(c)] /= double(rows);
    for (long c = 0; c < C; ++c) {
      run_mean.value[size_t(c)] = momentum_ * run_mean.value[size_t(c)] + (1 - momentum_) * mean[size_t(c)];
      run_var.value[size_t(c)] = momentum_ * run_var.value[size_t(c)] + (1 - momentum_) * var[size_t(c)];
    }
  } else {
    for (long c = 0; c < C; ++c) {
      mean[size_t(c)] = run_mean.value[size_t(c)];
      var[size_t(c)] = run_var.value[size_t(c)];
    }
  }

  invstd_cache_.assign(size_t(C), 0.0);
  for (long c = 0; c < C; ++c) invstd_cache_[size_t(c)] = 1.0 / std::sqrt(var[size_t(c)] + eps_);

  Tensor xhat = x;
  double* hd = xhat.data();
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < C; ++c)
      hd[r * C + c] = (hd[r * C + c] - mean[size_t(c)]) * invstd_cache_[size_t(c)];
  xhat_cache_ = xhat;
  train_mode_cache_ = train;

  Tensor y = xhat;
  double* yd = y.data();
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < C; ++c)
      yd[r * C + c] = gamma.value[size_t(c)] * yd[r * C + c] + beta.value[size_t(c)];
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy, bool acc) {
  const long C = c_;
  const long rows = long(dy.size()) / C;
  const double* dyd = dy.data();
  const double* hd = xhat_cache_.data();

  std::vector<double> sum_dy(size_t(C), 0.0), sum_dy_xhat(size_t(C), 0.0);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < C; ++c) {
      sum_dy[size_t(c)] += dyd[r * C + c];
      sum_dy_xhat[size_t(c)] += dyd[r * C + c] * hd[r * C + c];
    }

  if (acc) {
    gamma.ensure_grad();
    beta.ensure_grad();
    for (long c = 0; c < C; ++c) {
      gamma.grad[size_t(c)] += sum_dy_xhat[size_t(c)];
      beta.grad[size_t(c)] += sum_dy[size_t(c)];
    }
  }

  Tensor dx(in_dims_);
  double* dxd = dx.data();
  if (train_mode_cache_) {
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < C; ++c) {
        const double g = gamma.value[size_t(c)] * invstd_cache_[size_t(c)];
        dxd[r * C + c] = g * (dyd[r * C + c] - sum_dy[size_t(c)] / double(rows) -
                              hd[r * C + c] * sum_dy_xhat[size_t(c)] / double(rows));
      }
  } else {
    // Eval mode: mean/var are constants.
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < C; ++c)
        dxd[r * C + c] = dyd[r * C + c] * gamma.value[size_t(c)] * invstd_cache_[size_t(c)];
  }
  return dx;
}

void BatchNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&run_mean);
  out.push_back(&run_var);
}

// ---- reshapes ----

Tensor Flatten::forward(const Tensor& x, bool) {
  in_dims_ = x.dims();
  const long N = x.dim(0);
  return x.reshaped({N, long(x.size()) / N});
}

Tensor Flatten::backward(const Tensor& dy, bool) { return dy.reshaped(in_dims_); }

Tensor Unflatten::forward(const Tensor& x, bool) {
  require(x.dim(1) == h_ * w_ * c_, "Unflatten: feature count mismatch");
  return x.reshaped({x.dim(0), h_, w_, c_});
}

Tensor Unflatten::backward(const Tensor& dy, bool) {
  return dy.reshaped({dy.dim(0), h_ * w_ * c_});
}

// ---- Sequential ----

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train);
  return cur;
}

Tensor Sequential::forward_with_taps(const Tensor& x, bool train, const std::vector<int>& taps,
                                     std::vector<Tensor>& tap_out) {
  tap_out.clear();
  Tensor cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, train);
    for (int t : taps)
      if (size_t(t) == i) tap_out.push_back(cur);
  }
  return cur;
}

Tensor Sequential::backward(const Tensor& dy, bool acc) {
  Tensor cur = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur, acc);
  return cur;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

// ---- Adam ----

void Adam::step(const std::vector<Param*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (Param* p : params) {
    if (!p->learnable) continue;
    p->ensure_grad();
    if (!p->m.same_shape(p->value)) {
      p->m = Tensor::zeros_like(p->value);
      p->v = Tensor::zeros_like(p->value);
    }
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg_.beta1 * p->m[i] + (1 - cfg_.beta1) * g;
      p->v[i] = cfg_.beta2 * p->v[i] + (1 - cfg_.beta2) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) {
    p->ensure_grad();
    p->grad.zero();
  }
}

uint64_t params_hash(const std::vector<Param*>& params) {
  uint64_t h = 14695981039346656037ull;
  for (const Param* p : params)
    h = fnv1a64(p->value.data(), p->value.size() * sizeof(double), h);
  return h;
}

size_t params_count(const std::vector<Param*>& params) {
  size_t n = 0;
  for (const Param* p : params)
    if (p->learnable) n += p->value.size();
  return n;
}

// ---- classification utilities ----

Tensor softmax_rows(const Tensor& logits) {
  const long N = logits.dim(0), K = logits.dim(1);
  Tensor p = logits;
  for (long n = 0; n < N; ++n) {
    double mx = p.at2(n, 0);
    for (long k = 1; k < K; ++k) mx = std::max(mx, p.at2(n, k));
    double sum = 0;
    for (long k = 0; k < K; ++k) {
      p.at2(n, k) = std::exp(p.at2(n, k) - mx);
      sum += p.at2(n, k);
    }
    for (long k = 0; k < K; ++k) p.at2(n, k) /= sum;
  }
  return p;
}

double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const long N = logits.dim(0), K = logits.dim(1);
  require(long(labels.size()) == N, "softmax_ce: label count mismatch");
  Tensor p = softmax_rows(logits);
  double loss = 0;
  for (long n = 0; n < N; ++n)
    loss -= std::log(std::max(p.at2(n, labels[size_t(n)]), 1e-300));
  loss /= double(N);
  if (dlogits) {
    *dlogits = p;
    for (long n = 0; n < N; ++n) {
      dlogits->at2(n, labels[size_t(n)]) -= 1.0;
      for (long k = 0; k < K; ++k) dlogits->at2(n, k) /= double(N);
    }
  }
  return loss;
}

}  // namespace expredit::nn
