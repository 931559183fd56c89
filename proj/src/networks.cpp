#include "expredit/networks.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "expredit/json_io.hpp"

namespace expredit {

namespace {

const double kReluGain = std::sqrt(2.0);
const double kLeakyGain = std::sqrt(2.0 / 1.04);  // leaky slope 0.2

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

}  // namespace

ArchitectureSpec ArchitectureSpec::desk() { return {}; }

ArchitectureSpec ArchitectureSpec::paper() {
  ArchitectureSpec s;
  s.resolution = 128;
  s.enc_channels = {64, 128, 256, 512, 1024};
  s.n_z = 50;
  s.layout = {6, 5};
  s.dec_start_channels = 1024;
  s.dec_channels = {512, 256, 128, 64, 32, 16, 3};
  s.trunk_channels = {16, 32, 64, 128};
  s.trunk_feat = 1024;
  return s;
}

void ArchitectureSpec::validate() const {
  require(power_of_two(resolution) && resolution >= 32,
          "ArchitectureSpec: resolution must be a power of 2, >= 32");
  require(img_channels >= 1, "ArchitectureSpec: img_channels >= 1");
  require(enc_channels.size() == 5, "ArchitectureSpec: encoder has 5 downsampling stages");
  layout.validate();
  require(n_z >= 1, "ArchitectureSpec: n_z >= 1");
  require(int(dec_channels.size()) == log2i(resolution),
          "ArchitectureSpec: decoder stages must reach the resolution from 1x1");
  require(dec_channels.back() == img_channels,
          "ArchitectureSpec: last decoder stage must emit the image channels");
  require(trunk_channels.size() == 4, "ArchitectureSpec: trunk has 4 downsampling blocks");
  require(trunk_feat >= 1 && q_hidden >= 1 && dec_start_channels >= 1,
          "ArchitectureSpec: widths must be >= 1");
  require(!dz_hidden.empty(), "ArchitectureSpec: dz_hidden empty");
}

void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json{{"resolution", s.resolution},
                     {"img_channels", s.img_channels},
                     {"enc_channels", s.enc_channels},
                     {"n_z", s.n_z},
                     {"K", s.layout.K},
                     {"d", s.layout.d},
                     {"dec_start_channels", s.dec_start_channels},
                     {"dec_channels", s.dec_channels},
                     {"trunk_channels", s.trunk_channels},
                     {"trunk_feat", s.trunk_feat},
                     {"dz_hidden", s.dz_hidden},
                     {"q_hidden", s.q_hidden},
                     {"generator_batchnorm", s.generator_batchnorm}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  s.resolution = j.at("resolution").get<int>();
  s.img_channels = j.at("img_channels").get<int>();
  s.enc_channels = j.at("enc_channels").get<std::vector<int>>();
  s.n_z = j.at("n_z").get<int>();
  s.layout.K = j.at("K").get<int>();
  s.layout.d = j.at("d").get<int>();
  s.dec_start_channels = j.at("dec_start_channels").get<int>();
  s.dec_channels = j.at("dec_channels").get<std::vector<int>>();
  s.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
  s.trunk_feat = j.at("trunk_feat").get<int>();
  s.dz_hidden = j.at("dz_hidden").get<std::vector<int>>();
  s.q_hidden = j.at("q_hidden").get<int>();
  s.generator_batchnorm = j.at("generator_batchnorm").get<bool>();
  s.validate();
}

// ---- Encoder ----

Encoder::Encoder(const ArchitectureSpec& spec, Rng& rng)
    : resolution_(spec.resolution), channels_(spec.img_channels) {
  spec.validate();
  int in_c = spec.img_channels;
  int res = spec.resolution;
  for (size_t i = 0; i < spec.enc_channels.size(); ++i) {
    const int ch = spec.enc_channels[i];
    net.add(std::make_unique<nn::Conv2d>(in_c, ch, 5, 2, kReluGain, rng,
                                         "enc.conv" + std::to_string(i)));
    if (spec.generator_batchnorm)
      net.add(std::make_unique<nn::BatchNorm>(ch, "enc.bn" + std::to_string(i)));
    net.add(std::make_unique<nn::ReLU>());
    in_c = ch;
    res = (res + 1) / 2;
  }
  net.add(std::make_unique<nn::Flatten>());
  net.add(std::make_unique<nn::Dense>(res * res * in_c, spec.n_z, 1.0, rng, "enc.fc"));
  net.add(std::make_unique<nn::Tanh>());
}

Tensor Encoder::forward(const Tensor& x, bool train) {
  require(x.rank() == 4 && x.dim(1) == resolution_ && x.dim(2) == resolution_ &&
              x.dim(3) == channels_,
          "encode: image shape mismatch, got " + x.shape_str());
  return net.forward(x, train);
}

Tensor Encoder::backward(const Tensor& dg, bool acc) { return net.backward(dg, acc); }

// ---- Decoder ----

Decoder::Decoder(const ArchitectureSpec& spec, Rng& rng) {
  spec.validate();
  in_len_ = spec.n_z + spec.code_len();
  net.add(std::make_unique<nn::Dense>(int(in_len_), spec.dec_start_channels, kReluGain, rng,
                                      "dec.fc"));
  net.add(std::make_unique<nn::ReLU>());
  net.add(std::make_unique<nn::Unflatten>(1, 1, spec.dec_start_channels));
  int in_c = spec.dec_start_channels;
  for (size_t i = 0; i < spec.dec_channels.size(); ++i) {
    const int ch = spec.dec_channels[i];
    const bool last = i + 1 == spec.dec_channels.size();
    net.add(std::make_unique<nn::NNUpsample2>());
    net.add(std::make_unique<nn::Conv2d>(in_c, ch, 3, 1, last ? 1.0 : kReluGain, rng,
                                         "dec.conv" + std::to_string(i)));
    if (last) {
      net.add(std::make_unique<nn::Tanh>());
    } else {
      if (spec.generator_batchnorm)
        net.add(std::make_unique<nn::BatchNorm>(ch, "dec.bn" + std::to_string(i)));
      net.add(std::make_unique<nn::ReLU>());
    }
    in_c = ch;
  }
}

Tensor Decoder::forward(const Tensor& gc, bool train) {
  require(gc.rank() == 2 && gc.dim(1) == in_len_,
          "decode: input length mismatch, got " + gc.shape_str());
  return net.forward(gc, train);
}

Tensor Decoder::backward(const Tensor& dimg, bool acc) { return net.backward(dimg, acc); }

Tensor decoder_input(const Tensor& g, const std::vector<ExpressionCode>& cs) {
  const long N = g.dim(0), nz = g.dim(1);
  require(long(cs.size()) == N, "decoder_input: code count != batch");
  const long cl = long(cs[0].layout.total());
  Tensor out({N, nz + cl});
  for (long n = 0; n < N; ++n) {
    for (long i = 0; i < nz; ++i) out.at2(n, i) = g.at2(n, i);
    require(long(cs[size_t(n)].values.size()) == cl, "decoder_input: code length mismatch");
    for (long i = 0; i < cl; ++i) out.at2(n, nz + i) = cs[size_t(n)].values[size_t(i)];
  }
  return out;
}

// ---- DiscImgQ ----

DiscImgQ::DiscImgQ(const ArchitectureSpec& spec, Rng& rng)
    : K_(spec.layout.K), d_(spec.layout.d), img_channels_(spec.img_channels) {
  spec.validate();
  int in_c = spec.img_channels + K_;
  int res = spec.resolution;
  for (size_t i = 0; i < spec.trunk_channels.size(); ++i) {
    const int ch = spec.trunk_channels[i];
    trunk.add(std::make_unique<nn::Conv2d>(in_c, ch, 5, 2, kLeakyGain, rng,
                                           "disc.conv" + std::to_string(i)));
    trunk.add(std::make_unique<nn::BatchNorm>(ch, "disc.bn" + std::to_string(i)));
    trunk.add(std::make_unique<nn::LeakyReLU>(0.2));
    in_c = ch;
    res = (res + 1) / 2;
  }
  trunk.add(std::make_unique<nn::Flatten>());
  trunk.add(std::make_unique<nn::Dense>(res * res * in_c, spec.trunk_feat, kLeakyGain, rng,
                                        "disc.fc"));
  trunk.add(std::make_unique<nn::LeakyReLU>(0.2));

  d_head.add(std::make_unique<nn::Dense>(spec.trunk_feat, 1, 1.0, rng, "disc.out"));
  d_head.add(std::make_unique<nn::Sigmoid>());

  for (int k = 0; k < K_; ++k) {
    auto br = std::make_unique<nn::Sequential>();
    const std::string base = "q.b" + std::to_string(k);
    br->add(std::make_unique<nn::Dense>(spec.trunk_feat, spec.q_hidden, kLeakyGain, rng,
                                        base + ".fc1"));
    br->add(std::make_unique<nn::LeakyReLU>(0.2));
    br->add(std::make_unique<nn::Dense>(spec.q_hidden, d_, 1.0, rng, base + ".fc2"));
    q_branches.push_back(std::move(br));
  }
}

Tensor DiscImgQ::with_labels(const Tensor& x, const std::vector<ExpressionLabel>& ys) const {
  const long N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  require(C == img_channels_, "with_labels: channel mismatch");
  require(long(ys.size()) == N, "with_labels: label count != batch");
  Tensor out({N, H, W, C + K_});
  for (long n = 0; n < N; ++n) {
    const int cls = ys[size_t(n)].active_class();
    require(int(ys[size_t(n)].y.size()) == K_, "with_labels: label length != K");
    for (long h = 0; h < H; ++h)
      for (long w = 0; w < W; ++w) {
        for (long c = 0; c < C; ++c) out.at4(n, h, w, c) = x.at4(n, h, w, c);
        out.at4(n, h, w, C + cls) = 1.0;
      }
  }
  return out;
}

Tensor DiscImgQ::forward_trunk(const Tensor& x_labeled, bool train) {
  require(x_labeled.rank() == 4 && x_labeled.dim(3) == img_channels_ + K_,
          "forward_trunk: expected labeled image, got " + x_labeled.shape_str());
  return trunk.forward(x_labeled, train);
}

Tensor DiscImgQ::forward_prob(const Tensor& feat, bool train) {
  return d_head.forward(feat, train);
}

Tensor DiscImgQ::forward_q(const Tensor& feat, const std::vector<ExpressionLabel>& ys,
                           bool train) {
  const long N = feat.dim(0);
  require(long(ys.size()) == N, "forward_q: label count != batch");
  Tensor mu({N, long(d_)});
  for (int k = 0; k < K_; ++k) {
    const Tensor out_k = q_branches[size_t(k)]->forward(feat, train);
    for (long n = 0; n < N; ++n)
      if (ys[size_t(n)].active_class() == k)
        for (int m = 0; m < d_; ++m) mu.at2(n, m) = out_k.at2(n, m);
  }
  return mu;
}

Tensor DiscImgQ::backward_prob(const Tensor& dprob, bool acc) {
  return d_head.backward(dprob, acc);
}

Tensor DiscImgQ::backward_q(const Tensor& dmu, const std::vector<ExpressionLabel>& ys,
                            bool acc) {
  const long N = dmu.dim(0);
  Tensor dfeat;
  for (int k = 0; k < K_; ++k) {
    Tensor dmu_k = Tensor::zeros_like(dmu);
    for (long n = 0; n < N; ++n)
      if (ys[size_t(n)].active_class() == k)
        for (int m = 0; m < d_; ++m) dmu_k.at2(n, m) = dmu.at2(n, m);
    Tensor part = q_branches[size_t(k)]->backward(dmu_k, acc);
    if (dfeat.empty())
      dfeat = std::move(part);
    else
      add_inplace(dfeat, part);
  }
  return dfeat;
}

Tensor DiscImgQ::backward_trunk(const Tensor& dfeat, bool acc) {
  return trunk.backward(dfeat, acc);
}

std::pair<Tensor, Tensor> DiscImgQ::disc_image(const Tensor& x,
                                               const std::vector<ExpressionLabel>& ys,
                                               bool train) {
  const Tensor feat = forward_trunk(with_labels(x, ys), train);
  return {forward_prob(feat, train), feat};
}

std::vector<nn::Param*> DiscImgQ::params_disc() {
  std::vector<nn::Param*> out;
  trunk.collect_params(out);
  d_head.collect_params(out);
  return out;
}

std::vector<nn::Param*> DiscImgQ::params_q() {
  std::vector<nn::Param*> out;
  for (auto& br : q_branches) br->collect_params(out);
  return out;
}

std::vector<nn::Param*> DiscImgQ::params_trunk() {
  std::vector<nn::Param*> out;
  trunk.collect_params(out);
  return out;
}

Tensor strip_label_channels(const Tensor& dxl, int img_channels) {
  const long N = dxl.dim(0), H = dxl.dim(1), W = dxl.dim(2);
  Tensor out({N, H, W, long(img_channels)});
  for (long n = 0; n < N; ++n)
    for (long h = 0; h < H; ++h)
      for (long w = 0; w < W; ++w)
        for (long c = 0; c < img_channels; ++c) out.at4(n, h, w, c) = dxl.at4(n, h, w, c);
  return out;
}

// ---- DiscZ ----

DiscZ::DiscZ(const ArchitectureSpec& spec, Rng& rng) {
  int in_w = spec.n_z;
  for (size_t i = 0; i < spec.dz_hidden.size(); ++i) {
    const int w = spec.dz_hidden[i];
    net.add(std::make_unique<nn::Dense>(in_w, w, kLeakyGain, rng,
                                        "dz.fc" + std::to_string(i)));
    net.add(std::make_unique<nn::BatchNorm>(w, "dz.bn" + std::to_string(i)));
    net.add(std::make_unique<nn::LeakyReLU>(0.2));
    in_w = w;
  }
  net.add(std::make_unique<nn::Dense>(in_w, 1, 1.0, rng, "dz.out"));
  net.add(std::make_unique<nn::Sigmoid>());
}

Tensor DiscZ::forward(const Tensor& g, bool train) {
  require(g.rank() == 2, "disc_z: expected (N, n_z), got " + g.shape_str());
  return net.forward(g, train);
}

Tensor DiscZ::backward(const Tensor& dp, bool acc) { return net.backward(dp, acc); }

// ---- ConvClassifier ----

ConvClassifier::ConvClassifier(const ArchitectureSpec& spec, int n_out_, Rng& rng,
                               const std::string& name)
    : n_out(n_out_) {
  spec.validate();
  require(n_out >= 2, "ConvClassifier: need >= 2 outputs");
  int in_c = spec.img_channels;
  int res = spec.resolution;
  for (size_t i = 0; i < spec.enc_channels.size(); ++i) {
    const int ch = spec.enc_channels[i];
    convs.add(std::make_unique<nn::Conv2d>(in_c, ch, 5, 2, kReluGain, rng,
                                           name + ".conv" + std::to_string(i)));
    convs.add(std::make_unique<nn::ReLU>());
    tap_indices.push_back(int(convs.size()) - 1);
    in_c = ch;
    res = (res + 1) / 2;
  }
  head.add(std::make_unique<nn::Flatten>());
  head.add(std::make_unique<nn::Dense>(res * res * in_c, spec.n_z, 1.0, rng, name + ".fc1"));
  head.add(std::make_unique<nn::Tanh>());
  head.add(std::make_unique<nn::Dense>(spec.n_z, n_out, 1.0, rng, name + ".fc2"));
}

Tensor ConvClassifier::logits(const Tensor& x, bool train) {
  return head.forward(convs.forward(x, train), train);
}

Tensor ConvClassifier::backward(const Tensor& dlogits, bool acc) {
  return convs.backward(head.backward(dlogits, acc), acc);
}

Tensor ConvClassifier::probs(const Tensor& x) { return nn::softmax_rows(logits(x, false)); }

std::vector<Tensor> ConvClassifier::feature_taps(const Tensor& x) {
  std::vector<Tensor> taps;
  convs.forward_with_taps(x, false, tap_indices, taps);
  return taps;
}

Tensor ConvClassifier::backward_from_taps(const std::vector<Tensor>& dtaps) {
  require(dtaps.size() == tap_indices.size(), "backward_from_taps: tap count mismatch");
  Tensor cur = dtaps.back();
  int t = int(tap_indices.size()) - 2;
  for (int i = tap_indices.back(); i >= 0; --i) {
    cur = convs.layer(size_t(i)).backward(cur, false);
    if (t >= 0 && i - 1 == tap_indices[size_t(t)]) {
      add_inplace(cur, dtaps[size_t(t)]);
      --t;
    }
  }
  return cur;
}

// ---- ModelBundle ----

ModelBundle ModelBundle::init(const ArchitectureSpec& spec, uint64_t seed) {
  spec.validate();
  ModelBundle b;
  b.spec = spec;
  b.seed = seed;
  Rng rng(seed);
  b.enc = std::make_unique<Encoder>(spec, rng);
  b.dec = std::make_unique<Decoder>(spec, rng);
  b.disc = std::make_unique<DiscImgQ>(spec, rng);
  b.disc_z = std::make_unique<DiscZ>(spec, rng);
  b.classifier = std::make_unique<ConvClassifier>(spec, spec.layout.K, rng, "cls");
  return b;
}

void ModelBundle::build_phi(int n_identities, Rng& rng) {
  phi = std::make_unique<ConvClassifier>(spec, n_identities, rng, "phi");
}

std::vector<nn::Param*> ModelBundle::params_enc() const {
  std::vector<nn::Param*> out;
  enc->collect_params(out);
  return out;
}

std::vector<nn::Param*> ModelBundle::params_dec() const {
  std::vector<nn::Param*> out;
  dec->collect_params(out);
  return out;
}

std::vector<nn::Param*> ModelBundle::params_disc() const { return disc->params_disc(); }
std::vector<nn::Param*> ModelBundle::params_q() const { return disc->params_q(); }
std::vector<nn::Param*> ModelBundle::params_trunk() const { return disc->params_trunk(); }

std::vector<nn::Param*> ModelBundle::params_disc_z() const {
  std::vector<nn::Param*> out;
  disc_z->collect_params(out);
  return out;
}

std::vector<nn::Param*> ModelBundle::params_classifier() const {
  std::vector<nn::Param*> out;
  classifier->collect_params(out);
  return out;
}

std::vector<nn::Param*> ModelBundle::params_phi() const {
  std::vector<nn::Param*> out;
  if (phi) phi->collect_params(out);
  return out;
}

std::vector<nn::Param*> ModelBundle::params_all() const {
  std::vector<nn::Param*> out;
  enc->collect_params(out);
  dec->collect_params(out);
  disc->trunk.collect_params(out);
  disc->d_head.collect_params(out);
  for (auto& br : disc->q_branches) br->collect_params(out);
  disc_z->collect_params(out);
  classifier->collect_params(out);
  if (phi) phi->collect_params(out);
  return out;
}

Tensor ModelBundle::encode(const Tensor& x, bool train) { return enc->forward(x, train); }

Tensor ModelBundle::decode(const Tensor& g, const std::vector<ExpressionCode>& cs, bool train) {
  require(g.rank() == 2 && g.dim(1) == spec.n_z, "decode: identity code length mismatch");
  return dec->forward(decoder_input(g, cs), train);
}

Tensor ModelBundle::classify_expression(const Tensor& x) { return classifier->probs(x); }

std::vector<Tensor> ModelBundle::feature_maps(const Tensor& x) {
  require(phi != nullptr && phi->trained, "feature network not initialized");
  return phi->feature_taps(x);
}

std::string ModelBundle::checkpoint_id() const {
  uint64_t h = fnv1a64("expredit-bundle");
  h = fnv1a64(&stage, sizeof(stage), h);
  h = fnv1a64(&seed, sizeof(seed), h);
  for (const nn::Param* p : params_all()) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = fnv1a64(p->value.data(), p->value.size() * sizeof(double), h);
  }
  return "ck" + hex16(h);
}

// ---- serialization ----

namespace {

constexpr char kMagic[4] = {'X', 'P', 'R', 'D'};
constexpr uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_array(std::ofstream& f, const std::string& name, const Tensor& t) {
  const uint32_t nl = uint32_t(name.size());
  write_pod(f, nl);
  f.write(name.data(), nl);
  const uint32_t rank = uint32_t(t.rank());
  write_pod(f, rank);
  for (long d : t.dims()) write_pod(f, uint64_t(d));
  f.write(reinterpret_cast<const char*>(t.data()),
          std::streamsize(t.size() * sizeof(double)));
}

}  // namespace

void save_params_bin(const std::string& path, const std::vector<nn::Param*>& params,
                     bool with_moments) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "save_params_bin: cannot open " + path);
  f.write(kMagic, 4);
  write_pod(f, kFormatVersion);
  uint64_t count = 0;
  for (const nn::Param* p : params) {
    ++count;
    if (with_moments && !p->m.empty()) count += 2;
  }
  write_pod(f, count);
  for (const nn::Param* p : params) {
    write_array(f, p->name, p->value);
    if (with_moments && !p->m.empty()) {
      write_array(f, p->name + "#m", p->m);
      write_array(f, p->name + "#v", p->v);
    }
  }
  require(f.good(), "save_params_bin: write failure on " + path);
}

std::vector<std::string> load_params_bin(const std::string& path,
                                         const std::vector<nn::Param*>& params) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_params_bin: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, kMagic, 4) == 0,
          "load_params_bin: bad magic in " + path);
  uint32_t version = 0;
  read_pod(f, version);
  require(version == kFormatVersion,
          "load_params_bin: unsupported format version " + std::to_string(version));
  uint64_t count = 0;
  read_pod(f, count);

  std::map<std::string, nn::Param*> by_name;
  for (nn::Param* p : params) {
    require(by_name.emplace(p->name, p).second,
            "load_params_bin: duplicate parameter name " + p->name);
  }

  std::vector<std::string> found;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nl = 0;
    read_pod(f, nl);
    require(f.good() && nl < 4096, "load_params_bin: corrupt entry");
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    uint32_t rank = 0;
    read_pod(f, rank);
    require(f.good() && rank <= 8, "load_params_bin: corrupt rank");
    std::vector<long> dims(rank);
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint64_t d = 0;
      read_pod(f, d);
      dims[r] = long(d);
      numel *= size_t(d);
    }
    Tensor t(dims);
    f.read(reinterpret_cast<char*>(t.data()), std::streamsize(numel * sizeof(double)));
    require(f.good(), "load_params_bin: truncated data for " + name);

    std::string base = name;
    int kind = 0;  // 0 value, 1 m, 2 v
    if (name.size() > 2 && name.compare(name.size() - 2, 2, "#m") == 0) {
      base = name.substr(0, name.size() - 2);
      kind = 1;
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, "#v") == 0) {
      base = name.substr(0, name.size() - 2);
      kind = 2;
    }
    auto it = by_name.find(base);
    if (it == by_name.end()) continue;  // array for a subnet this bundle lacks
    nn::Param* p = it->second;
    require(t.dims() == p->value.dims(),
            "load_params_bin: shape mismatch for " + name + " (" + t.shape_str() + " vs " +
                p->value.shape_str() + ")");
    if (kind == 0) {
      p->value = std::move(t);
      found.push_back(base);
    } else if (kind == 1) {
      p->m = std::move(t);
    } else {
      p->v = std::move(t);
    }
  }
  return found;
}

void ModelBundle::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = "1";
  meta["spec"] = spec;
  meta["stage"] = stage;
  meta["seed"] = seed;
  meta["phi_out"] = phi ? phi->n_out : 0;
  meta["phi_trained"] = phi ? phi->trained : false;
  meta["classifier_trained"] = classifier->trained;
  std::ofstream mf(dir + "/metadata.json");
  require(mf.good(), "ModelBundle::save: cannot write metadata in " + dir);
  mf << meta.dump(2) << "\n";
  require(mf.good(), "ModelBundle::save: metadata write failure");
  mf.close();
  save_params_bin(dir + "/params.bin", params_all(), true);
}

ModelBundle ModelBundle::load(const std::string& dir) {
  std::ifstream mf(dir + "/metadata.json");
  require(mf.good(), "ModelBundle::load: missing metadata.json in " + dir);
  nlohmann::json meta = nlohmann::json::parse(mf);
  const std::string version = meta.at("format_version").get<std::string>();
  require(version == "1", "ModelBundle::load: unsupported checkpoint version " + version);
  ArchitectureSpec spec = meta.at("spec").get<ArchitectureSpec>();
  ModelBundle b = init(spec, meta.at("seed").get<uint64_t>());
  b.stage = meta.at("stage").get<int>();
  const int phi_out = meta.at("phi_out").get<int>();
  if (phi_out > 0) {
    Rng scratch(b.seed ^ 0x9e3779b97f4a7c15ull);
    b.build_phi(phi_out, scratch);
    b.phi->trained = meta.at("phi_trained").get<bool>();
  }
  b.classifier->trained = meta.at("classifier_trained").get<bool>();

  const auto params = b.params_all();
  const auto found = load_params_bin(dir + "/params.bin", params);
  require(found.size() == params.size(),
          "ModelBundle::load: checkpoint is missing " +
              std::to_string(params.size() - found.size()) + " parameter arrays");
  for (const nn::Param* p : params)
    require(p->value.all_finite(), "ModelBundle::load: non-finite values in " + p->name);
  return b;
}

}  // namespace expredit
