#include "doctest.h"
#include "expredit/datagen.hpp"
#include "expredit/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace expredit;

namespace {

SyntheticFaceParams params_for(int id, int cls, double intensity, uint64_t seed = 7) {
  SyntheticFaceParams p;
  p.identity_id = id;
  p.geometry = identity_geometry(id, seed);
  p.expr_class = cls;
  p.intensity = intensity;
  return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("rendering is a pure function of the parameters") {
  const SyntheticFaceParams p = params_for(3, kSmile, 0.7);
  const LabeledImage a = render_face(p, 64);
  const LabeledImage b = render_face(p, 64);
  REQUIRE(a.pixels.dims() == std::vector<long>{64, 64, 3});
  for (size_t i = 0; i < a.pixels.size(); ++i) CHECK(a.pixels[i] == b.pixels[i]);
  CHECK(a.label.active_class() == kSmile);
  CHECK(a.identity_id == 3);
  CHECK(a.intensity == 0.7);
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    CHECK(a.pixels[i] >= -1.0);
    CHECK(a.pixels[i] <= 1.0);
  }
}

TEST_CASE("intensity zero is the shared neutral face") {
  for (int id : {0, 5, 11}) {
    const Tensor smile = render_face(params_for(id, kSmile, 0.0), 64).pixels;
    const Tensor frown = render_face(params_for(id, kFrown, 0.0), 64).pixels;
    const Tensor surprise = render_face(params_for(id, kSurprise, 0.0), 64).pixels;
    for (size_t i = 0; i < smile.size(); ++i) {
      CHECK(smile[i] == frown[i]);
      CHECK(smile[i] == surprise[i]);
    }
  }
}

TEST_CASE("expression pixels stay inside the mouth and brow regions") {
  const int res = 64;
  for (int id : {1, 8}) {
    const Tensor mask = class_region_mask(params_for(id, kSmile, 0.0), res);
    double active = 0;
    for (size_t i = 0; i < mask.size(); ++i) active += mask[i];
    CHECK(active > 0);
    CHECK(active < 0.35 * double(mask.size()));  // a minority of the canvas

    const Tensor base = render_face(params_for(id, kSmile, 0.9), res).pixels;
    for (auto [cls, inten] : {std::pair{kFrown, 0.4}, std::pair{kSurprise, 1.0},
                              std::pair{kSmile, 0.1}}) {
      const Tensor other = render_face(params_for(id, cls, inten), res).pixels;
      for (long h = 0; h < res; ++h)
        for (long w = 0; w < res; ++w) {
          if (mask[size_t(h * res + w)] != 0.0) continue;
          for (long c = 0; c < 3; ++c) {
            REQUIRE(base[size_t((h * res + w) * 3 + c)] ==
                    other[size_t((h * res + w) * 3 + c)]);
          }
        }
    }
  }
}

TEST_CASE("identity pixels differ between identities") {
  const Tensor a = render_face(params_for(0, kSmile, 0.5), 64).pixels;
  const Tensor b = render_face(params_for(1, kSmile, 0.5), 64).pixels;
  CHECK(max_abs_diff(a, b) > 0.01);
}

TEST_CASE("the class attribute increases strictly on a ten point intensity grid") {
  for (int cls : {kSmile, kFrown, kSurprise}) {
    for (int id : {2, 9, 14}) {
      double prev = -1e9;
      for (int k = 1; k <= 10; ++k) {
        const double inten = double(k) / 10.0;
        const LabeledImage im = render_face(params_for(id, cls, inten), 64);
        const double attr = expression_attribute(im.pixels, cls);
        CHECK_MESSAGE(attr > prev, "class " << cls << " id " << id << " level " << k);
        prev = attr;
      }
    }
  }
}

TEST_CASE("the analytic curvature tracks the measured curvature") {
  const SyntheticFaceParams lo = params_for(4, kSmile, 0.2);
  const SyntheticFaceParams hi = params_for(4, kSmile, 0.8);
  CHECK(mouth_curvature_of(hi, 64) > mouth_curvature_of(lo, 64));
  const double m_lo = mouth_curvature(render_face(lo, 64).pixels);
  const double m_hi = mouth_curvature(render_face(hi, 64).pixels);
  CHECK(m_hi > m_lo);
  // frowns measure negative, smiles positive
  CHECK(mouth_curvature(render_face(params_for(4, kFrown, 0.8), 64).pixels) < 0.0);
  CHECK(m_hi > 0.0);
  // measured deflection lands near the drawn one (both in pixels)
  const double drawn = mouth_curvature_of(hi, 64);
  CHECK(std::abs(m_hi - drawn) < 0.35 * drawn);
}

TEST_CASE("parameter validation names the offending field") {
  SyntheticFaceParams p = params_for(0, kSmile, 0.5);
  p.geometry[2] = 1.4;
  try {
    render_face(p, 64);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("eye_size") != std::string::npos);
  }
  p = params_for(0, kSmile, 0.5);
  p.intensity = -0.2;
  try {
    render_face(p, 64);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("intensity") != std::string::npos);
  }
  p = params_for(0, kSmile, 0.5);
  p.expr_class = 3;
  CHECK_THROWS_AS(render_face(p, 64), ValidationError);
  CHECK_THROWS_AS(render_face(params_for(0, kSmile, 0.5), 16), ValidationError);
}

TEST_CASE("identity geometry is deterministic and in range") {
  const auto a = identity_geometry(12, 99);
  const auto b = identity_geometry(12, 99);
  CHECK(a == b);
  CHECK(identity_geometry(12, 100) != a);
  CHECK(identity_geometry(13, 99) != a);
  for (double v : a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("dataset sampling fills every cell reproducibly") {
  DatasetSpec spec;
  spec.n_identities = 4;
  spec.images_per_identity_per_class = 2;
  spec.resolution = 32;
  spec.seed = 5;
  const auto data = sample_dataset(spec);
  REQUIRE(data.size() == 24);

  std::map<std::pair<int, int>, int> cells;
  for (const auto& im : data) {
    cells[{im.identity_id, im.label.active_class()}]++;
    CHECK(im.intensity >= 0.3);
    CHECK(im.intensity <= 1.0);
    CHECK(im.pixels.dim(0) == 32);
  }
  CHECK(cells.size() == 12);
  for (const auto& [cell, n] : cells) CHECK(n == 2);

  const auto again = sample_dataset(spec);
  REQUIRE(again.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i)
    CHECK(max_abs_diff(data[i].pixels, again[i].pixels) == 0.0);

  spec.seed = 6;
  const auto other = sample_dataset(spec);
  double diff = 0;
  for (size_t i = 0; i < data.size(); ++i)
    diff = std::max(diff, max_abs_diff(data[i].pixels, other[i].pixels));
  CHECK(diff > 0.0);

  spec.resolution = 48;  // not a multiple of 32
  CHECK_THROWS_AS(sample_dataset(spec), ValidationError);
}

TEST_CASE("horizontal flip is an involution that keeps the metadata") {
  const LabeledImage im = render_face(params_for(6, kFrown, 0.6), 32);
  const LabeledImage f = flip_horizontal(im);
  CHECK(max_abs_diff(f.pixels, im.pixels) > 0.0);
  const LabeledImage ff = flip_horizontal(f);
  CHECK(max_abs_diff(ff.pixels, im.pixels) == 0.0);
  CHECK(f.label.active_class() == im.label.active_class());
  CHECK(f.identity_id == im.identity_id);
  CHECK(f.intensity == im.intensity);
}

TEST_CASE("random flips happen about half the time") {
  LabeledImage im;
  im.pixels = Tensor({1, 2, 3});
  im.pixels[0] = 1.0;  // asymmetric so a flip is detectable
  im.label = ExpressionLabel::of_class(0, 3);
  Rng rng(2024);
  int flipped = 0;
  for (int i = 0; i < 10000; ++i)
    if (augment_flip(im, rng).pixels[0] != 1.0) ++flipped;
  CHECK(flipped > 4700);
  CHECK(flipped < 5300);
}

TEST_CASE("identity split partitions the dataset") {
  std::vector<LabeledImage> data;
  for (int id = 0; id < 80; ++id)
    for (int j = 0; j < 2; ++j) {
      LabeledImage im;
      im.pixels = Tensor({1, 1, 3});
      im.label = ExpressionLabel::of_class(j % 3, 3);
      im.identity_id = id;
      data.push_back(im);
    }
  const auto [train, test] = split_by_identity(data, 0.1, 17);
  CHECK(train.size() + test.size() == data.size());
  std::set<int> train_ids, test_ids;
  for (const auto& im : train) train_ids.insert(im.identity_id);
  for (const auto& im : test) test_ids.insert(im.identity_id);
  CHECK(test_ids.size() == 8);
  for (int id : test_ids) CHECK(train_ids.count(id) == 0);
  CHECK(train_ids.size() + test_ids.size() == 80);

  const auto [train2, test2] = split_by_identity(data, 0.1, 17);
  CHECK(train2.size() == train.size());
  std::set<int> test_ids2;
  for (const auto& im : test2) test_ids2.insert(im.identity_id);
  CHECK(test_ids2 == test_ids);

  const auto [train3, test3] = split_by_identity(data, 0.1, 18);
  std::set<int> test_ids3;
  for (const auto& im : test3) test_ids3.insert(im.identity_id);
  CHECK(test_ids3 != test_ids);  // seeded differently

  std::vector<LabeledImage> one(data.begin(), data.begin() + 2);
  CHECK_THROWS_AS(split_by_identity(one, 0.5, 1), ValidationError);
  CHECK_THROWS_AS(split_by_identity(data, 0.0, 1), ValidationError);
}

TEST_CASE("saved datasets reload with only quantization error") {
  namespace fs = std::filesystem;
  const std::string dir = "testtmp_dataset";
  fs::remove_all(dir);

  DatasetSpec spec;
  spec.n_identities = 2;
  spec.images_per_identity_per_class = 1;
  spec.resolution = 32;
  spec.seed = 9;
  const auto data = sample_dataset(spec);
  save_dataset(data, dir, default_class_names(3), spec.seed);
  CHECK(fs::exists(dir + "/manifest.jsonl"));
  CHECK(fs::exists(dir + "/images/smile/id0000/img_00000.png"));

  const auto back = load_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].identity_id == data[i].identity_id);
    CHECK(back[i].label.active_class() == data[i].label.active_class());
    CHECK(back[i].intensity == data[i].intensity);
    CHECK(max_abs_diff(back[i].pixels, data[i].pixels) <= 1.0 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST_CASE("folder ingestion matches the emitted layout") {
  namespace fs = std::filesystem;
  const std::string dir = "testtmp_ingest";
  fs::remove_all(dir);

  DatasetSpec spec;
  spec.n_identities = 2;
  spec.images_per_identity_per_class = 2;
  spec.resolution = 32;
  spec.seed = 13;
  const auto data = sample_dataset(spec);
  save_dataset(data, dir, default_class_names(3), spec.seed);

  const std::map<std::string, int> cmap{{"smile", 0}, {"frown", 1}, {"surprise", 2}};
  const auto in = ingest_folder(dir + "/images", cmap, 32);
  REQUIRE(in.size() == data.size());
  // ingest groups by class then identity; match records by (class, identity)
  std::map<std::pair<int, int>, int> counts;
  for (const auto& im : in) {
    counts[{im.label.active_class(), im.identity_id}]++;
    CHECK(im.intensity < 0);  // unknown after ingestion
  }
  CHECK(counts.size() == 6);
  for (const auto& [k, n] : counts) CHECK(n == 2);

  // re-ingestion of emitted pixels is idempotent up to quantization
  std::map<std::pair<int, int>, std::vector<const LabeledImage*>> orig;
  for (const auto& im : data) orig[{im.label.active_class(), im.identity_id}].push_back(&im);
  std::map<std::pair<int, int>, std::vector<const LabeledImage*>> got;
  for (const auto& im : in) got[{im.label.active_class(), im.identity_id}].push_back(&im);
  for (const auto& [cell, imgs] : orig) {
    REQUIRE(got[cell].size() == imgs.size());
    for (size_t i = 0; i < imgs.size(); ++i)
      CHECK(max_abs_diff(got[cell][i]->pixels, imgs[i]->pixels) <= 1.0 / 255.0 + 1e-12);
  }

  // unknown class directory
  fs::create_directories(dir + "/images/sneer/id0000");
  try {
    ingest_folder(dir + "/images", cmap, 32);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("sneer") != std::string::npos);
  }
  fs::remove_all(dir + "/images/sneer");

  // empty tree
  fs::create_directories(dir + "/empty");
  CHECK_THROWS_AS(ingest_folder(dir + "/empty", cmap, 32), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("eight bit extremes map to the unit range ends") {
  namespace fs = std::filesystem;
  const std::string dir = "testtmp_extremes";
  fs::remove_all(dir);
  fs::create_directories(dir + "/bright/id0");

  Tensor img({2, 2, 3});
  for (size_t i = 0; i < 6; ++i) img[i] = 1.0;    // saturated white half
  for (size_t i = 6; i < 12; ++i) img[i] = -1.0;  // black half
  save_image(img, dir + "/bright/id0/a.png");

  const auto in = ingest_folder(dir, {{"bright", 0}}, 2);
  REQUIRE(in.size() == 1);
  CHECK(int(in[0].label.y.size()) == 1);
  CHECK(in[0].label.active_class() == 0);
  for (size_t i = 0; i < 6; ++i) CHECK(in[0].pixels[i] == 1.0);
  for (size_t i = 6; i < 12; ++i) CHECK(in[0].pixels[i] == -1.0);

  // resize contract: non-square inputs crop then resize to the target
  Tensor wide({4, 8, 3});
  wide.fill(0.2);
  save_image(wide, dir + "/bright/id0/b.png");
  const auto in2 = ingest_folder(dir, {{"bright", 0}}, 2);
  REQUIRE(in2.size() == 2);
  for (const auto& im : in2) {
    CHECK(im.pixels.dim(0) == 2);
    CHECK(im.pixels.dim(1) == 2);
  }
  fs::remove_all(dir);
}
