#pragma once

#include <memory>
#include <string>
#include <vector>

#include "expredit/exprcode.hpp"
#include "expredit/nn.hpp"
#include "expredit/rng.hpp"
#include "expredit/tensor.hpp"

namespace expredit {

// Shape contract for every subnetwork. The desk preset is the scaled-down
// default; the paper preset reproduces the published dimensions.
struct ArchitectureSpec {
  int resolution = 64;
  int img_channels = 3;
  std::vector<int> enc_channels = {32, 64, 128, 256, 512};  // 5x5 stride-2 convs
  int n_z = 32;
  CodeLayout layout{3, 5};
  int dec_start_channels = 512;  // FC target at 1x1 before upsampling
  std::vector<int> dec_channels = {256, 128, 64, 32, 16, 3};  // per up stage
  std::vector<int> trunk_channels = {16, 32, 64, 128};  // shared D/Q trunk
  int trunk_feat = 256;
  std::vector<int> dz_hidden = {64, 32, 16};
  int q_hidden = 64;
  bool generator_batchnorm = false;

  static ArchitectureSpec desk();
  static ArchitectureSpec paper();
  void validate() const;
  int dec_stages() const { return int(dec_channels.size()); }
  long code_len() const { return long(layout.total()); }
};

// Identity encoder: image -> g in (-1,1)^{n_z}. The squash keeps the output
// inside the support of the uniform prior imposed by the code discriminator.
class Encoder {
 public:
  Encoder(const ArchitectureSpec& spec, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dg, bool acc);
  void collect_params(std::vector<nn::Param*>& out) { net.collect_params(out); }

  nn::Sequential net;

 private:
  int resolution_, channels_;
};

// Decoder: (g, c) -> image in [-1,1]. FC to a 1x1 map, then one
// nearest-neighbor upsample + 3x3 conv per stage up to the target resolution.
class Decoder {
 public:
  Decoder(const ArchitectureSpec& spec, Rng& rng);
  // x: (N, n_z + K*d)
  Tensor forward(const Tensor& gc, bool train);
  Tensor backward(const Tensor& dimg, bool acc);
  void collect_params(std::vector<nn::Param*>& out) { net.collect_params(out); }

  nn::Sequential net;

 private:
  long in_len_;
};

// Stacks g and per-sample codes into the decoder input batch.
Tensor decoder_input(const Tensor& g, const std::vector<ExpressionCode>& cs);

// Conditional image discriminator with the regularizer sharing its trunk.
// The label is consumed by tiling y into K constant channels appended to the
// image. The trunk plus the probability head form the discriminator's
// parameter set; the K regression branches are a separate set.
class DiscImgQ {
 public:
  DiscImgQ(const ArchitectureSpec& spec, Rng& rng);

  Tensor with_labels(const Tensor& x, const std::vector<ExpressionLabel>& ys) const;

  Tensor forward_trunk(const Tensor& x_labeled, bool train);  // -> (N, feat)
  Tensor forward_prob(const Tensor& feat, bool train);        // -> (N, 1)
  // Per-sample branch selection by the active class: -> (N, d).
  Tensor forward_q(const Tensor& feat, const std::vector<ExpressionLabel>& ys, bool train);

  // Backwards replay the cached forwards; each returns the gradient at the
  // trunk feature, to be summed by the caller before backward_trunk.
  Tensor backward_prob(const Tensor& dprob, bool acc);
  Tensor backward_q(const Tensor& dmu, const std::vector<ExpressionLabel>& ys, bool acc);
  Tensor backward_trunk(const Tensor& dfeat, bool acc);  // -> grad at labeled input

  // Convenience pair matching the conditional-discriminator contract.
  std::pair<Tensor, Tensor> disc_image(const Tensor& x, const std::vector<ExpressionLabel>& ys,
                                       bool train);

  std::vector<nn::Param*> params_disc();   // trunk + probability head
  std::vector<nn::Param*> params_q();      // branches only
  std::vector<nn::Param*> params_trunk();

  nn::Sequential trunk, d_head;
  std::vector<std::unique_ptr<nn::Sequential>> q_branches;

 private:
  int K_, d_, img_channels_;
};

// Strips the K tiled label channels from a gradient at the labeled input.
Tensor strip_label_channels(const Tensor& dxl, int img_channels);

// Prior discriminator on identity codes.
class DiscZ {
 public:
  DiscZ(const ArchitectureSpec& spec, Rng& rng);
  Tensor forward(const Tensor& g, bool train);  // (N, n_z) -> (N, 1)
  Tensor backward(const Tensor& dp, bool acc);
  void collect_params(std::vector<nn::Param*>& out) { net.collect_params(out); }

  nn::Sequential net;
};

// Encoder-shaped classifier: the expression classifier (K outputs) and the
// identity-feature network are both instances. The feature taps are the
// post-activation outputs of the 5 convolution stages.
class ConvClassifier {
 public:
  ConvClassifier(const ArchitectureSpec& spec, int n_out, Rng& rng, const std::string& name);

  Tensor logits(const Tensor& x, bool train);
  Tensor backward(const Tensor& dlogits, bool acc);
  Tensor probs(const Tensor& x);  // eval mode, softmax

  // Eval-mode forward returning the 5 tap activations (caches for
  // backward_from_taps).
  std::vector<Tensor> feature_taps(const Tensor& x);
  // Gradient of sum_l <dtaps[l], tap_l(x)> wrt x; never touches parameters.
  Tensor backward_from_taps(const std::vector<Tensor>& dtaps);

  void collect_params(std::vector<nn::Param*>& out) {
    convs.collect_params(out);
    head.collect_params(out);
  }

  nn::Sequential convs, head;
  std::vector<int> tap_indices;  // indices into convs
  int n_out = 0;
  bool trained = false;
};

// All subnetworks plus bookkeeping. The feature network is built at
// pretraining time (its width is the identity count of the dataset).
struct ModelBundle {
  ArchitectureSpec spec;
  std::unique_ptr<Encoder> enc;
  std::unique_ptr<Decoder> dec;
  std::unique_ptr<DiscImgQ> disc;
  std::unique_ptr<DiscZ> disc_z;
  std::unique_ptr<ConvClassifier> classifier;  // expression, K outputs
  std::unique_ptr<ConvClassifier> phi;         // identity features
  int stage = 0;  // last completed curriculum stage
  uint64_t seed = 0;

  static ModelBundle init(const ArchitectureSpec& spec, uint64_t seed);
  void build_phi(int n_identities, Rng& rng);

  std::vector<nn::Param*> params_enc() const;
  std::vector<nn::Param*> params_dec() const;
  std::vector<nn::Param*> params_disc() const;
  std::vector<nn::Param*> params_q() const;
  std::vector<nn::Param*> params_trunk() const;
  std::vector<nn::Param*> params_disc_z() const;
  std::vector<nn::Param*> params_classifier() const;
  std::vector<nn::Param*> params_phi() const;
  std::vector<nn::Param*> params_all() const;

  // encode/decode wrappers with the domain checks of the public contract.
  Tensor encode(const Tensor& x, bool train = false);
  Tensor decode(const Tensor& g, const std::vector<ExpressionCode>& cs, bool train = false);
  Tensor classify_expression(const Tensor& x);
  std::vector<Tensor> feature_maps(const Tensor& x);

  std::string checkpoint_id() const;
  void save(const std::string& dir) const;
  static ModelBundle load(const std::string& dir);
};

// Named parameter array serialization ("XPRD" container). Each entry carries
// name, dims and f64 data; Adam moments ride along as <name>#m / <name>#v.
void save_params_bin(const std::string& path, const std::vector<nn::Param*>& params,
                     bool with_moments);
// Fills matching params in place; returns the set of names found.
std::vector<std::string> load_params_bin(const std::string& path,
                                         const std::vector<nn::Param*>& params);

}  // namespace expredit
