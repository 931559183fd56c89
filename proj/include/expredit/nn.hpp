#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "expredit/rng.hpp"
#include "expredit/tensor.hpp"

namespace expredit::nn {

// One learnable (or tracked) tensor. Adam moments live here so a parameter
// set plus its optimizer state serialize as one unit.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;          // Adam moments, sized on first step
  bool learnable = true;  // false for batch-norm running stats

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor::zeros_like(value);
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Caches whatever backward needs; backward may be called repeatedly on the
  // same cached forward (shared trunks take separate head gradients).
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy, bool acc_param_grads) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
};

using LayerPtr = std::unique_ptr<Layer>;

class Dense : public Layer {
 public:
  Dense(int in, int out, double init_gain, Rng& rng, const std::string& name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;
  void collect_params(std::vector<Param*>& out) override;

  Param W, b;

 private:
  int in_, out_;
  Tensor x_cache_;
};

// 2D convolution with TF-style SAME padding: out = ceil(in/stride).
class Conv2d : public Layer {
 public:
  Conv2d(int in_c, int out_c, int k, int stride, double init_gain, Rng& rng,
         const std::string& name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;
  void collect_params(std::vector<Param*>& out) override;

  Param W, b;  // W is (k*k*in_c, out_c)

 private:
  int in_c_, out_c_, k_, stride_;
  Tensor x_cache_;
};

// Nearest-neighbor 2x upsampling.
class NNUpsample2 : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  Tensor x_cache_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  double slope_;
  Tensor x_cache_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  Tensor y_cache_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  Tensor y_cache_;
};

// Batch normalization over (N,H,W) per channel for rank-4 inputs, over N per
// feature for rank-2. Biased batch variance; running stats tracked with
// momentum 0.9 and used in eval mode.
class BatchNorm : public Layer {
 public:
  BatchNorm(int channels, const std::string& name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta;
  Param run_mean, run_var;  // learnable=false

 private:
  int c_;
  double eps_ = 1e-5, momentum_ = 0.9;
  bool train_mode_cache_ = true;
  Tensor xhat_cache_;
  std::vector<double> invstd_cache_;
  std::vector<long> in_dims_;
};

// NHWC -> (N, H*W*C)
class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  std::vector<long> in_dims_;
};

// (N, F) -> (N, h, w, c) with h*w*c == F
class Unflatten : public Layer {
 public:
  Unflatten(long h, long w, long c) : h_(h), w_(w), c_(c) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;

 private:
  long h_, w_, c_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(LayerPtr l) { layers_.push_back(std::move(l)); }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy, bool acc) override;
  void collect_params(std::vector<Param*>& out) override;
  // Forward that also returns the output of selected layer indices (feature taps).
  Tensor forward_with_taps(const Tensor& x, bool train, const std::vector<int>& taps,
                           std::vector<Tensor>& tap_out);
  size_t size() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

 private:
  std::vector<LayerPtr> layers_;
};

// ---- optimizer ----

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Param*>& params);
  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

void zero_grads(const std::vector<Param*>& params);
uint64_t params_hash(const std::vector<Param*>& params);
size_t params_count(const std::vector<Param*>& params);  // learnable scalars only

// ---- classification utilities ----

// Row-wise softmax of logits (N, K).
Tensor softmax_rows(const Tensor& logits);
// Mean cross-entropy of integer labels under softmax(logits); dlogits is the
// gradient of that mean.
double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits);

}  // namespace expredit::nn
