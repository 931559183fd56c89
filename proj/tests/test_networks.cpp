#include "doctest.h"
#include "expredit/json_io.hpp"
#include "expredit/networks.hpp"
#include "expredit/rng.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <fstream>

using namespace expredit;

namespace {

Tensor random_tensor(std::vector<long> dims, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(dims));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// A minimal valid spec for the expensive structural tests.
ArchitectureSpec tiny() {
  ArchitectureSpec s;
  s.resolution = 32;
  s.enc_channels = {2, 2, 3, 3, 4};
  s.n_z = 3;
  s.layout = CodeLayout{2, 2};
  s.dec_start_channels = 4;
  s.dec_channels = {4, 4, 3, 3, 3};
  s.trunk_channels = {2, 2, 3, 3};
  s.trunk_feat = 8;
  s.dz_hidden = {4, 3, 2};
  s.q_hidden = 4;
  return s;
}

// Parameter counting from the architecture contract, written independently of
// the layer classes (batch norm contributes scale+shift; running stats are
// buffers, not parameters).
long conv_n(int k, int in, int out) { return long(k) * k * in * out + out; }
long dense_n(long in, long out) { return in * out + out; }
long bn_n(int ch) { return 2L * ch; }

long expect_encoder(const ArchitectureSpec& s) {
  long n = 0;
  int in = s.img_channels, res = s.resolution;
  for (int ch : s.enc_channels) {
    n += conv_n(5, in, ch);
    if (s.generator_batchnorm) n += bn_n(ch);
    in = ch;
    res /= 2;
  }
  return n + dense_n(long(res) * res * in, s.n_z);
}

long expect_decoder(const ArchitectureSpec& s) {
  long n = dense_n(s.n_z + s.code_len(), s.dec_start_channels);
  int in = s.dec_start_channels;
  for (size_t i = 0; i < s.dec_channels.size(); ++i) {
    const int ch = s.dec_channels[i];
    n += conv_n(3, in, ch);
    if (s.generator_batchnorm && i + 1 < s.dec_channels.size()) n += bn_n(ch);
    in = ch;
  }
  return n;
}

long expect_disc(const ArchitectureSpec& s) {
  long n = 0;
  int in = s.img_channels + s.layout.K, res = s.resolution;
  for (int ch : s.trunk_channels) {
    n += conv_n(5, in, ch) + bn_n(ch);
    in = ch;
    res /= 2;
  }
  n += dense_n(long(res) * res * in, s.trunk_feat);
  return n + dense_n(s.trunk_feat, 1);
}

long expect_q(const ArchitectureSpec& s) {
  return s.layout.K * (dense_n(s.trunk_feat, s.q_hidden) + dense_n(s.q_hidden, s.layout.d));
}

long expect_dz(const ArchitectureSpec& s) {
  long n = 0;
  int in = s.n_z;
  for (int w : s.dz_hidden) {
    n += dense_n(in, w) + bn_n(w);
    in = w;
  }
  return n + dense_n(in, 1);
}

long expect_classifier(const ArchitectureSpec& s, int n_out) {
  long n = 0;
  int in = s.img_channels, res = s.resolution;
  for (int ch : s.enc_channels) {
    n += conv_n(5, in, ch);
    in = ch;
    res /= 2;
  }
  return n + dense_n(long(res) * res * in, s.n_z) + dense_n(s.n_z, n_out);
}

void check_counts(const ArchitectureSpec& s) {
  ModelBundle b = ModelBundle::init(s, 1);
  CHECK(long(nn::params_count(b.params_enc())) == expect_encoder(s));
  CHECK(long(nn::params_count(b.params_dec())) == expect_decoder(s));
  CHECK(long(nn::params_count(b.params_disc())) == expect_disc(s));
  CHECK(long(nn::params_count(b.params_q())) == expect_q(s));
  CHECK(long(nn::params_count(b.params_disc_z())) == expect_dz(s));
  CHECK(long(nn::params_count(b.params_classifier())) == expect_classifier(s, s.layout.K));
}

}  // namespace

TEST_CASE("preset specs validate and match the published dimensions") {
  const ArchitectureSpec d = ArchitectureSpec::desk();
  d.validate();
  CHECK(d.resolution == 64);
  CHECK(d.n_z == 32);
  CHECK(d.layout.K == 3);
  CHECK(d.layout.d == 5);

  const ArchitectureSpec p = ArchitectureSpec::paper();
  p.validate();
  CHECK(p.resolution == 128);
  CHECK(p.n_z == 50);
  CHECK(p.layout.K == 6);
  CHECK(p.layout.d == 5);
  CHECK(p.enc_channels.back() == 1024);
  CHECK(int(p.dec_channels.size()) == 7);
  CHECK(p.trunk_feat == 1024);
  CHECK(p.trunk_channels == std::vector<int>{16, 32, 64, 128});
}

TEST_CASE("invalid specs are rejected") {
  ArchitectureSpec s = tiny();
  s.resolution = 48;  // not a power of two
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = tiny();
  s.resolution = 16;  // too small
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = tiny();
  s.dec_channels = {4, 3, 3};  // needs log2(res) stages
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = tiny();
  s.dec_channels.back() = 4;  // must end on the image channels
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = tiny();
  s.enc_channels = {2, 3};
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("spec json round trip") {
  const ArchitectureSpec s = ArchitectureSpec::desk();
  nlohmann::json j = s;
  const ArchitectureSpec back = j.get<ArchitectureSpec>();
  CHECK(back.resolution == s.resolution);
  CHECK(back.enc_channels == s.enc_channels);
  CHECK(back.layout.K == s.layout.K);
  CHECK(back.layout.d == s.layout.d);
  CHECK(back.dec_channels == s.dec_channels);
  CHECK(back.generator_batchnorm == s.generator_batchnorm);
}

TEST_CASE("parameter counts match the architecture contract") {
  check_counts(tiny());
  check_counts(ArchitectureSpec::desk());
  check_counts(ArchitectureSpec::paper());
  // hand-computed desk totals as an extra guard
  ModelBundle b = ModelBundle::init(ArchitectureSpec::desk(), 1);
  CHECK(nn::params_count(b.params_enc()) == 4420960u);
  CHECK(nn::params_count(b.params_dec()) == 1596835u);
}

TEST_CASE("encode and decode keep the shape and range contracts") {
  ModelBundle b = ModelBundle::init(ArchitectureSpec::desk(), 11);
  Rng rng(12);
  const Tensor x = random_tensor({2, 64, 64, 3}, rng);
  const Tensor g = b.encode(x);
  REQUIRE(g.rank() == 2);
  CHECK(g.dim(0) == 2);
  CHECK(g.dim(1) == 32);
  for (size_t i = 0; i < g.size(); ++i) {
    CHECK(g[i] > -1.0);
    CHECK(g[i] < 1.0);
  }

  std::vector<ExpressionCode> cs;
  cs.push_back(sample_code(ExpressionLabel::of_class(0, 3), b.spec.layout, rng));
  cs.push_back(sample_code(ExpressionLabel::of_class(2, 3), b.spec.layout, rng));
  const Tensor xhat = b.decode(g, cs);
  REQUIRE(xhat.rank() == 4);
  CHECK(xhat.dim(0) == 2);
  CHECK(xhat.dim(1) == 64);
  CHECK(xhat.dim(2) == 64);
  CHECK(xhat.dim(3) == 3);
  for (size_t i = 0; i < xhat.size(); ++i) {
    CHECK(xhat[i] >= -1.0);
    CHECK(xhat[i] <= 1.0);
  }

  // eval-mode forwards are deterministic
  const Tensor g2 = b.encode(x);
  for (size_t i = 0; i < g.size(); ++i) CHECK(g[i] == g2[i]);

  Tensor bad({2, 32, 32, 3});
  CHECK_THROWS_AS(b.encode(bad), ValidationError);
  Tensor gbad({2, 16});
  CHECK_THROWS_AS(b.decode(gbad, cs), ValidationError);
}

TEST_CASE("decoder input stacks identity then code") {
  Tensor g({2, 3});
  for (size_t i = 0; i < 6; ++i) g[i] = double(i) * 0.1;
  CodeLayout lay{2, 2};
  std::vector<ExpressionCode> cs{edit_code(0, lay), edit_code(1, lay)};
  const Tensor in = decoder_input(g, cs);
  REQUIRE(in.dim(0) == 2);
  REQUIRE(in.dim(1) == 7);
  CHECK(in.at2(0, 0) == 0.0);
  CHECK(in.at2(0, 2) == 0.2);
  CHECK(in.at2(0, 3) == 1.0);  // active block of class 0
  CHECK(in.at2(0, 5) == -1.0);
  CHECK(in.at2(1, 3) == -1.0);
  CHECK(in.at2(1, 5) == 1.0);  // active block of class 1
}

TEST_CASE("conditional discriminator responds to the label") {
  ModelBundle b = ModelBundle::init(tiny(), 21);
  Rng rng(22);
  const Tensor x = random_tensor({2, 32, 32, 3}, rng);
  const std::vector<ExpressionLabel> y0(2, ExpressionLabel::of_class(0, 2));
  const std::vector<ExpressionLabel> y1(2, ExpressionLabel::of_class(1, 2));

  const auto [p0, feat0] = b.disc->disc_image(x, y0, false);
  REQUIRE(p0.rank() == 2);
  CHECK(p0.dim(0) == 2);
  CHECK(p0.dim(1) == 1);
  CHECK(feat0.dim(1) == 8);
  for (size_t i = 0; i < p0.size(); ++i) {
    CHECK(p0[i] > 0.0);
    CHECK(p0[i] < 1.0);
  }
  const auto [p1, feat1] = b.disc->disc_image(x, y1, false);
  bool differs = false;
  for (size_t i = 0; i < p0.size(); ++i) differs |= (p0[i] != p1[i]);
  CHECK(differs);
}

TEST_CASE("label tiling and stripping are consistent") {
  ModelBundle b = ModelBundle::init(tiny(), 23);
  Rng rng(24);
  const Tensor x = random_tensor({2, 32, 32, 3}, rng);
  std::vector<ExpressionLabel> ys{ExpressionLabel::of_class(1, 2),
                                  ExpressionLabel::of_class(0, 2)};
  const Tensor xl = b.disc->with_labels(x, ys);
  REQUIRE(xl.dim(3) == 5);
  for (long h = 0; h < 32; ++h)
    for (long w = 0; w < 32; ++w) {
      CHECK(xl.at4(0, h, w, 3) == 0.0);
      CHECK(xl.at4(0, h, w, 4) == 1.0);
      CHECK(xl.at4(1, h, w, 3) == 1.0);
      CHECK(xl.at4(1, h, w, 4) == 0.0);
    }
  for (long c = 0; c < 3; ++c) CHECK(xl.at4(1, 5, 7, c) == x.at4(1, 5, 7, c));

  const Tensor stripped = strip_label_channels(xl, 3);
  REQUIRE(stripped.dims() == x.dims());
  for (size_t i = 0; i < x.size(); ++i) CHECK(stripped[i] == x[i]);
}

TEST_CASE("regression branches are selected per sample") {
  ModelBundle b = ModelBundle::init(tiny(), 25);
  Rng rng(26);
  const Tensor x = random_tensor({2, 32, 32, 3}, rng);
  std::vector<ExpressionLabel> ys{ExpressionLabel::of_class(0, 2),
                                  ExpressionLabel::of_class(1, 2)};
  const Tensor feat = b.disc->forward_trunk(b.disc->with_labels(x, ys), false);
  const Tensor mu = b.disc->forward_q(feat, ys, false);
  REQUIRE(mu.dim(0) == 2);
  REQUIRE(mu.dim(1) == 2);

  // flipping a sample's class routes it through the other branch
  std::vector<ExpressionLabel> ys2{ExpressionLabel::of_class(1, 2),
                                   ExpressionLabel::of_class(1, 2)};
  const Tensor mu2 = b.disc->forward_q(feat, ys2, false);
  bool row0_differs = false;
  for (int m = 0; m < 2; ++m) row0_differs |= (mu.at2(0, m) != mu2.at2(0, m));
  CHECK(row0_differs);
  for (int m = 0; m < 2; ++m) CHECK(mu.at2(1, m) == mu2.at2(1, m));
}

TEST_CASE("code discriminator maps codes to probabilities") {
  ModelBundle b = ModelBundle::init(tiny(), 27);
  Rng rng(28);
  const Tensor g = random_tensor({4, 3}, rng);
  const Tensor p = b.disc_z->forward(g, false);
  REQUIRE(p.dim(0) == 4);
  REQUIRE(p.dim(1) == 1);
  for (size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] > 0.0);
    CHECK(p[i] < 1.0);
  }
}

TEST_CASE("expression classifier emits a distribution") {
  ModelBundle b = ModelBundle::init(tiny(), 29);
  Rng rng(30);
  const Tensor x = random_tensor({3, 32, 32, 3}, rng);
  const Tensor p = b.classify_expression(x);
  REQUIRE(p.dim(0) == 3);
  REQUIRE(p.dim(1) == 2);
  for (long n = 0; n < 3; ++n) {
    double s = 0;
    for (long k = 0; k < 2; ++k) {
      CHECK(p.at2(n, k) > 0.0);
      s += p.at2(n, k);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("feature maps require a trained feature network") {
  ModelBundle b = ModelBundle::init(tiny(), 31);
  Rng rng(32);
  const Tensor x = random_tensor({1, 32, 32, 3}, rng);
  try {
    b.feature_maps(x);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("feature network not initialized") != std::string::npos);
  }
  b.build_phi(4, rng);
  CHECK_THROWS_AS(b.feature_maps(x), ValidationError);  // built but untrained
  b.phi->trained = true;
  const std::vector<Tensor> taps = b.feature_maps(x);
  REQUIRE(taps.size() == 5);
  CHECK(taps[0].dim(1) == 16);
  CHECK(taps[4].dim(1) == 1);
  const std::vector<Tensor> taps2 = b.feature_maps(x);
  for (size_t l = 0; l < taps.size(); ++l)
    for (size_t i = 0; i < taps[l].size(); ++i) CHECK(taps[l][i] == taps2[l][i]);
}

TEST_CASE("tap backward equals the plain backward when only the last tap is fed") {
  Rng rng(33);
  ConvClassifier cls(tiny(), 4, rng, "phi");
  const Tensor x = random_tensor({1, 32, 32, 3}, rng);
  const std::vector<Tensor> taps = cls.feature_taps(x);

  std::vector<Tensor> dtaps;
  for (const Tensor& t : taps) dtaps.push_back(Tensor::zeros_like(t));
  Tensor r = random_tensor(taps.back().dims(), rng);
  dtaps.back() = r;
  const Tensor dx_a = cls.backward_from_taps(dtaps);

  cls.convs.forward(x, false);
  const Tensor dx_b = cls.convs.backward(r, false);
  REQUIRE(dx_a.dims() == dx_b.dims());
  for (size_t i = 0; i < dx_a.size(); ++i) CHECK(dx_a[i] == dx_b[i]);
}

TEST_CASE("tap backward matches finite differences on sampled pixels") {
  Rng rng(34);
  ConvClassifier cls(tiny(), 4, rng, "phi");
  Tensor x = random_tensor({1, 32, 32, 3}, rng);
  const std::vector<Tensor> taps0 = cls.feature_taps(x);
  std::vector<Tensor> r;
  for (const Tensor& t : taps0) r.push_back(random_tensor(t.dims(), rng));

  auto loss = [&]() {
    const std::vector<Tensor> taps = cls.feature_taps(x);
    double s = 0;
    for (size_t l = 0; l < taps.size(); ++l)
      for (size_t i = 0; i < taps[l].size(); ++i) s += r[l][i] * taps[l][i];
    return s;
  };

  cls.feature_taps(x);
  const Tensor dx = cls.backward_from_taps(r);
  std::vector<double*> slots;
  std::vector<double> analytic;
  for (int k = 0; k < 12; ++k) {
    const size_t idx = size_t(rng.below(uint64_t(x.size())));
    slots.push_back(&x[idx]);
    analytic.push_back(dx[idx]);
  }
  auto g = testutil::check_grad(slots, analytic, loss);
  CHECK_MESSAGE(g.ok, "tap grad rel err " << g.max_rel);
}

TEST_CASE("bundle save and load round trip") {
  namespace fs = std::filesystem;
  const std::string dir = "testtmp_bundle";
  fs::remove_all(dir);

  ModelBundle b = ModelBundle::init(tiny(), 77);
  Rng rng(5);
  b.build_phi(4, rng);
  b.phi->trained = true;
  b.stage = 2;
  b.classifier->trained = true;
  b.save(dir);

  ModelBundle b2 = ModelBundle::load(dir);
  CHECK(b2.stage == 2);
  CHECK(b2.seed == 77);
  CHECK(b2.spec.resolution == 32);
  REQUIRE(b2.phi != nullptr);
  CHECK(b2.phi->trained);
  CHECK(b2.classifier->trained);
  CHECK(nn::params_hash(b.params_all()) == nn::params_hash(b2.params_all()));
  CHECK(b.checkpoint_id() == b2.checkpoint_id());

  const Tensor x = random_tensor({2, 32, 32, 3}, rng);
  const Tensor g1 = b.encode(x);
  const Tensor g2 = b2.encode(x);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);

  // ids track the weights
  b2.params_enc()[0]->value[0] += 1e-9;
  CHECK(b.checkpoint_id() != b2.checkpoint_id());

  fs::remove_all(dir);
}

TEST_CASE("version mismatches are reported with the offending version") {
  namespace fs = std::filesystem;
  const std::string dir = "testtmp_bundle_v";
  fs::remove_all(dir);
  ModelBundle b = ModelBundle::init(tiny(), 9);
  b.save(dir);
  {
    std::ifstream mf(dir + "/metadata.json");
    nlohmann::json meta = nlohmann::json::parse(mf);
    mf.close();
    meta["format_version"] = "9";
    std::ofstream out(dir + "/metadata.json", std::ios::trunc);
    out << meta.dump(2) << "\n";
  }
  try {
    ModelBundle::load(dir);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("version 9") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("parameter container loads are tolerant but checked") {
  namespace fs = std::filesystem;
  const std::string path = "testtmp_params.bin";
  Rng rng(41);
  nn::Dense d1(2, 3, 1.0, rng, "w1");
  nn::Dense d2(3, 2, 1.0, rng, "w2");
  save_params_bin(path, {&d1.W, &d1.b}, false);

  nn::Dense e1(2, 3, 1.0, rng, "w1");
  nn::Dense e2(3, 2, 1.0, rng, "w2");
  const auto found = load_params_bin(path, {&e1.W, &e1.b, &e2.W, &e2.b});
  CHECK(found.size() == 2);
  for (size_t i = 0; i < d1.W.value.size(); ++i) CHECK(e1.W.value[i] == d1.W.value[i]);

  // same name, different shape
  nn::Dense f1(3, 3, 1.0, rng, "w1");
  CHECK_THROWS_AS(load_params_bin(path, {&f1.W}), ValidationError);
  fs::remove(path);
}

TEST_CASE("adam moments ride along in the container") {
  namespace fs = std::filesystem;
  const std::string path = "testtmp_moments.bin";
  Rng rng(43);
  nn::Dense d(2, 2, 1.0, rng, "m1");
  d.W.ensure_grad();
  for (size_t i = 0; i < d.W.grad.size(); ++i) d.W.grad[i] = 0.5;
  d.b.ensure_grad();
  nn::Adam opt;
  opt.step({&d.W, &d.b});
  REQUIRE(!d.W.m.empty());
  save_params_bin(path, {&d.W, &d.b}, true);

  nn::Dense e(2, 2, 1.0, rng, "m1");
  load_params_bin(path, {&e.W, &e.b});
  REQUIRE(e.W.m.size() == d.W.m.size());
  for (size_t i = 0; i < d.W.m.size(); ++i) {
    CHECK(e.W.m[i] == d.W.m[i]);
    CHECK(e.W.v[i] == d.W.v[i]);
  }
  fs::remove(path);
}
