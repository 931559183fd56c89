#include "expredit/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "expredit/image_io.hpp"
#include "json.hpp"

namespace expredit {

namespace {

// All scene measures are in unit coordinates on a square canvas, y downward.
// Geometry that depends on the expression is confined to the mouth and brow
// regions so that class and intensity never leak identity pixels.

constexpr double kHeadCx = 0.5, kHeadCy = 0.52;
constexpr double kEyeY = 0.40;
constexpr double kMouthY = 0.70;
constexpr double kMouthHalfW = 0.16;
constexpr double kMouthHalfTh = 0.018;
constexpr double kBrowHalfTh = 0.008;
// peak deflection of the mouth curve, units per unit intensity
constexpr double kCurveAmp = 10.0 / 128.0;
constexpr double kBrowRaiseMax = 0.05;
constexpr double kOpenRyMax = 0.063;
constexpr double kOpenRx = 0.112;

struct Shade {
  double r, g, b;
};

Shade mix(const Shade& under, const Shade& over, double a) {
  return {under.r + (over.r - under.r) * a, under.g + (over.g - under.g) * a,
          under.b + (over.b - under.b) * a};
}

double sd_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double fx = (x - cx) / rx, fy = (y - cy) / ry;
  return (std::sqrt(fx * fx + fy * fy) - 1.0) * std::min(rx, ry);
}

double sd_circle(double x, double y, double cx, double cy, double r) {
  return std::hypot(x - cx, y - cy) - r;
}

double sd_segment(double x, double y, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double px = x - ax, py = y - ay;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - t * dx, py - t * dy);
}

struct Scene {
  double rx, ry;              // head
  double edx, ex_r, sclera;   // eyes (centers at 0.5 +- edx)
  double brow_y, brow_hw;     // brows (already raised for the class)
  double amp;                 // signed mouth deflection, units
  double open_ry;             // surprise interior half-height (0 when closed)
  Shade skin, lip;
  std::array<double, 34> mouth_pts;  // 17 (x, y) samples of the mouth curve
};

Scene build_scene(const SyntheticFaceParams& p) {
  Scene s{};
  const double aspect = p.geometry[0], spacing = p.geometry[1], size = p.geometry[2],
               browh = p.geometry[3], hue = p.geometry[4];
  s.rx = 0.34 + 0.06 * aspect;
  s.ry = 0.42 - 0.06 * aspect;
  s.edx = 0.13 + 0.07 * spacing;
  s.sclera = 0.038 + 0.022 * size;
  const double raise = p.expr_class == kSurprise ? kBrowRaiseMax * p.intensity : 0.0;
  s.brow_y = kEyeY - 0.065 - 0.045 * browh - raise;
  s.brow_hw = 1.3 * s.sclera;

  const double dir = p.expr_class == kSmile ? 1.0 : (p.expr_class == kFrown ? -1.0 : 0.0);
  s.amp = dir * kCurveAmp * p.intensity;
  s.open_ry = p.expr_class == kSurprise ? kOpenRyMax * p.intensity : 0.0;

  s.skin = {0.96 - 0.26 * hue, 0.82 - 0.28 * hue, 0.70 - 0.28 * hue};
  s.lip = {0.55, 0.17, 0.19};

  for (int i = 0; i < 17; ++i) {
    const double t = -1.0 + 2.0 * double(i) / 16.0;
    s.mouth_pts[size_t(2 * i)] = 0.5 + t * kMouthHalfW;
    s.mouth_pts[size_t(2 * i + 1)] = kMouthY + s.amp * (0.5 - t * t);
  }
  return s;
}

double mouth_dist(const Scene& s, double x, double y) {
  double best = 1e9;
  for (int i = 0; i < 16; ++i)
    best = std::min(best, sd_segment(x, y, s.mouth_pts[size_t(2 * i)],
                                     s.mouth_pts[size_t(2 * i + 1)],
                                     s.mouth_pts[size_t(2 * i + 2)],
                                     s.mouth_pts[size_t(2 * i + 3)]));
  return best;
}

Shade shade_point(const Scene& s, double x, double y, double aa) {
  auto cov = [aa](double sdf) { return std::clamp(0.5 - sdf / aa, 0.0, 1.0); };

  Shade c{0.10, 0.11, 0.13};
  c = mix(c, s.skin, cov(sd_ellipse(x, y, kHeadCx, kHeadCy, s.rx, s.ry)));
  const Shade white{0.95, 0.95, 0.97}, pupil{0.13, 0.10, 0.09}, brow{0.18, 0.12, 0.08},
      interior{0.16, 0.08, 0.09};
  for (double side : {-1.0, 1.0}) {
    const double ex = 0.5 + side * s.edx;
    c = mix(c, white, cov(sd_circle(x, y, ex, kEyeY, s.sclera)));
    c = mix(c, pupil, cov(sd_circle(x, y, ex, kEyeY, 0.5 * s.sclera)));
    c = mix(c, brow,
            cov(sd_segment(x, y, ex - s.brow_hw, s.brow_y, ex + s.brow_hw, s.brow_y) -
                kBrowHalfTh));
  }
  c = mix(c, s.lip, cov(mouth_dist(s, x, y) - kMouthHalfTh));
  if (s.open_ry > 0)
    c = mix(c, interior, cov(sd_ellipse(x, y, 0.5, kMouthY, kOpenRx, s.open_ry)));
  return c;
}

double luma01(const Tensor& img, long h, long w) {
  return ((img.at4(0, h, w, 0) + img.at4(0, h, w, 1) + img.at4(0, h, w, 2)) / 3.0 + 1.0) / 2.0;
}

// darkness weight for the mouth probes; zero on skin, positive below the
// threshold (0.5 catches the lips, 0.22 only the open-mouth interior)
double darkness(const Tensor& img, long h, long w, double thresh) {
  return std::max(0.0, thresh - luma01(img, h, w));
}

struct ProbeBox {
  long x0, x1, y0, y1;  // half-open pixel ranges
};

ProbeBox mouth_probe_box(long H, long W) {
  ProbeBox b;
  b.x0 = std::lround(0.29 * double(W));
  b.x1 = std::lround(0.71 * double(W));
  b.y0 = std::lround(0.605 * double(H));
  b.y1 = std::lround(0.795 * double(H));
  return b;
}

Tensor as_batch(const Tensor& img) {
  require(img.rank() == 3 || img.rank() == 4, "probe: expected an image, got " + img.shape_str());
  if (img.rank() == 4) {
    require(img.dim(0) == 1, "probe: expected a single image");
    return img;
  }
  return img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
}

}  // namespace

void SyntheticFaceParams::validate() const {
  static const char* names[5] = {"head_aspect", "eye_spacing", "eye_size", "brow_height",
                                 "hue"};
  require(identity_id >= 0, "render_face: identity_id out of range");
  for (int i = 0; i < 5; ++i)
    require(geometry[size_t(i)] >= 0.0 && geometry[size_t(i)] <= 1.0,
            std::string("render_face: ") + names[i] + " out of range");
  require(expr_class >= 0 && expr_class < kSyntheticClasses,
          "render_face: expr_class out of range");
  require(intensity >= 0.0 && intensity <= 1.0, "render_face: intensity out of range");
}

void DatasetSpec::validate() const {
  require(n_identities >= 1, "DatasetSpec: n_identities out of range");
  require(images_per_identity_per_class >= 1, "DatasetSpec: images per cell out of range");
  require(K == kSyntheticClasses, "DatasetSpec: the synthetic renderer defines 3 classes");
  require(resolution >= 32 && resolution % 32 == 0,
          "DatasetSpec: resolution must be a positive multiple of 32");
  require(intensity_min >= 0.0 && intensity_min <= intensity_max && intensity_max <= 1.0,
          "DatasetSpec: bad intensity range");
}

std::array<double, 5> identity_geometry(int identity_id, uint64_t seed) {
  require(identity_id >= 0, "identity_geometry: negative id");
  uint64_t h = fnv1a64(&seed, sizeof(seed));
  h = fnv1a64(&identity_id, sizeof(identity_id), h);
  Rng rng(h);
  std::array<double, 5> g{};
  for (auto& v : g) v = rng.uniform01();
  return g;
}

LabeledImage render_face(const SyntheticFaceParams& params, int resolution) {
  params.validate();
  require(resolution >= 32, "render_face: resolution below 32");
  const Scene s = build_scene(params);
  const double inv = 1.0 / double(resolution);
  const double aa = 0.6 * inv / 2.0;

  LabeledImage out;
  out.pixels = Tensor({long(resolution), long(resolution), 3});
  for (int h = 0; h < resolution; ++h)
    for (int w = 0; w < resolution; ++w) {
      Shade acc{0, 0, 0};
      for (double oy : {0.25, 0.75})
        for (double ox : {0.25, 0.75}) {
          const Shade c = shade_point(s, (w + ox) * inv, (h + oy) * inv, aa);
          acc.r += c.r;
          acc.g += c.g;
          acc.b += c.b;
        }
      const size_t base = size_t((h * resolution + w) * 3);
      out.pixels[base + 0] = acc.r / 4.0 * 2.0 - 1.0;
      out.pixels[base + 1] = acc.g / 4.0 * 2.0 - 1.0;
      out.pixels[base + 2] = acc.b / 4.0 * 2.0 - 1.0;
    }
  out.label = ExpressionLabel::of_class(params.expr_class, kSyntheticClasses);
  out.identity_id = params.identity_id;
  out.intensity = params.intensity;
  return out;
}

double mouth_curvature_of(const SyntheticFaceParams& params, int resolution) {
  params.validate();
  const double dir =
      params.expr_class == kSmile ? 1.0 : (params.expr_class == kFrown ? -1.0 : 0.0);
  // center-vs-ends deflection of the drawn curve, in output pixels
  return dir * kCurveAmp * params.intensity * double(resolution);
}

Tensor class_region_mask(const SyntheticFaceParams& params, int resolution) {
  params.validate();
  const Scene s = build_scene(params);
  Tensor mask({long(resolution), long(resolution)});
  const double pad = 2.5 / double(resolution);

  auto paint = [&](double x0, double x1, double y0, double y1) {
    const long w0 = std::max(0L, long(std::floor((x0 - pad) * resolution)));
    const long w1 = std::min(long(resolution), long(std::ceil((x1 + pad) * resolution)));
    const long h0 = std::max(0L, long(std::floor((y0 - pad) * resolution)));
    const long h1 = std::min(long(resolution), long(std::ceil((y1 + pad) * resolution)));
    for (long h = h0; h < h1; ++h)
      for (long w = w0; w < w1; ++w) mask[size_t(h * resolution + w)] = 1.0;
  };

  const double m_off = std::max(0.5 * kCurveAmp, kOpenRyMax) + kMouthHalfTh;
  paint(0.5 - kMouthHalfW - kMouthHalfTh, 0.5 + kMouthHalfW + kMouthHalfTh,
        kMouthY - m_off, kMouthY + m_off);
  const double brow_hi = kEyeY - 0.065 - 0.045 * params.geometry[3];
  for (double side : {-1.0, 1.0}) {
    const double ex = 0.5 + side * s.edx;
    paint(ex - s.brow_hw, ex + s.brow_hw, brow_hi - kBrowRaiseMax - kBrowHalfTh,
          brow_hi + kBrowHalfTh);
  }
  return mask;
}

double mouth_curvature(const Tensor& img_in) {
  const Tensor img = as_batch(img_in);
  const long H = img.dim(1), W = img.dim(2);
  const ProbeBox b = mouth_probe_box(H, W);

  // coverage-weighted centroid per column, restricted to the interior of the
  // mouth span so the stroke's round caps never enter the fit. The weight
  // recovers the anti-aliased lip coverage of each pixel linearly (brightest
  // pixel in the column stands in for the local skin tone), so the centroid
  // tracks the stroke sub-pixel instead of snapping to pixel centers.
  const double lip_l01 = (0.55 + 0.17 + 0.19) / 3.0;
  const double cx = 0.5 * double(W);
  const double fit_half = 0.8 * kMouthHalfW * double(W);
  std::vector<double> xs, ys, wsv;
  for (long w = b.x0; w < b.x1; ++w) {
    if (std::abs(double(w) + 0.5 - cx) > fit_half) continue;
    double ref = 0.0;
    for (long h = b.y0; h < b.y1; ++h) ref = std::max(ref, luma01(img, h, w));
    const double denom = std::max(ref - lip_l01, 0.05);
    double ws = 0, wy = 0;
    for (long h = b.y0; h < b.y1; ++h) {
      const double cov = std::clamp((ref - luma01(img, h, w)) / denom, 0.0, 1.0);
      ws += cov;
      wy += cov * double(h);
    }
    if (ws > 0.5) {
      xs.push_back(double(w));
      ys.push_back(wy / ws);
      wsv.push_back(ws);
    }
  }
  if (xs.size() < 5) return 0.0;

  // weighted least-squares parabola y = a + b u + c u^2, u centered
  double wsum = 0, xbar = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    wsum += wsv[i];
    xbar += wsv[i] * xs[i];
  }
  xbar /= wsum;
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double rhs[3] = {0, 0, 0};
  for (size_t i = 0; i < xs.size(); ++i) {
    const double u = xs[i] - xbar, wt = wsv[i];
    const double pw[5] = {1, u, u * u, u * u * u, u * u * u * u};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += wt * pw[r + c];
      rhs[r] += wt * pw[r] * ys[i];
    }
  }
  // gaussian elimination with partial pivoting
  int idx[3] = {0, 1, 2};
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(m[idx[r]][c]) > std::abs(m[idx[piv]][c])) piv = r;
    std::swap(idx[c], idx[piv]);
    const double d = m[idx[c]][c];
    if (std::abs(d) < 1e-12) return 0.0;
    for (int r = c + 1; r < 3; ++r) {
      const double f = m[idx[r]][c] / d;
      for (int k = c; k < 3; ++k) m[idx[r]][k] -= f * m[idx[c]][k];
      rhs[idx[r]] -= f * rhs[idx[c]];
    }
  }
  double sol[3];
  for (int c = 2; c >= 0; --c) {
    double v = rhs[idx[c]];
    for (int k = c + 1; k < 3; ++k) v -= m[idx[c]][k] * sol[k];
    sol[c] = v / m[idx[c]][c];
  }
  // extrapolate the fitted parabola to the full drawn half-width so the
  // result is the center-vs-corner deflection in pixels
  const double half_span = kMouthHalfW * double(W);
  return -sol[2] * half_span * half_span;  // smile bows downward in y(x)
}

double mouth_openness(const Tensor& img_in) {
  const Tensor img = as_batch(img_in);
  const long H = img.dim(1), W = img.dim(2);
  const ProbeBox b = mouth_probe_box(H, W);
  // only the open-mouth interior passes this threshold, so the spread starts
  // at zero for a closed mouth and grows with the opening
  double ws = 0, wy = 0, wyy = 0;
  for (long w = b.x0; w < b.x1; ++w)
    for (long h = b.y0; h < b.y1; ++h) {
      const double wt = darkness(img, h, w, 0.22);
      ws += wt;
      wy += wt * double(h);
      wyy += wt * double(h) * double(h);
    }
  if (ws <= 0) return 0.0;
  const double ybar = wy / ws;
  return ws / double(b.x1 - b.x0) * std::sqrt(std::max(0.0, wyy / ws - ybar * ybar));
}

double expression_attribute(const Tensor& img, int expr_class) {
  require(expr_class >= 0 && expr_class < kSyntheticClasses,
          "expression_attribute: class out of range");
  if (expr_class == kSmile) return mouth_curvature(img);
  if (expr_class == kFrown) return -mouth_curvature(img);
  return mouth_openness(img);
}

std::vector<LabeledImage> sample_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<LabeledImage> out;
  out.reserve(size_t(spec.n_identities) * size_t(spec.K) *
              size_t(spec.images_per_identity_per_class));
  for (int id = 0; id < spec.n_identities; ++id) {
    SyntheticFaceParams p;
    p.identity_id = id;
    p.geometry = identity_geometry(id, spec.seed);
    for (int cls = 0; cls < spec.K; ++cls) {
      p.expr_class = cls;
      for (int j = 0; j < spec.images_per_identity_per_class; ++j) {
        p.intensity = rng.uniform(spec.intensity_min, spec.intensity_max);
        out.push_back(render_face(p, spec.resolution));
      }
    }
  }
  return out;
}

std::vector<LabeledImage> ingest_folder(const std::string& root,
                                        const std::map<std::string, int>& class_name_map,
                                        int resolution) {
  namespace fs = std::filesystem;
  require(fs::is_directory(root), "ingest_folder: not a directory: " + root);
  require(!class_name_map.empty(), "ingest_folder: empty class map");
  int K = 0;
  for (const auto& [name, cls] : class_name_map) {
    require(cls >= 0, "ingest_folder: negative class index for " + name);
    K = std::max(K, cls + 1);
  }

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& d : class_dirs)
    require(class_name_map.count(d) > 0, "ingest_folder: unknown class directory " + d);

  // identities are shared across classes by directory name
  std::set<std::string> id_names;
  for (const auto& d : class_dirs)
    for (const auto& e : fs::directory_iterator(fs::path(root) / d))
      if (e.is_directory()) id_names.insert(e.path().filename().string());
  std::map<std::string, int> id_of;
  for (const auto& n : id_names) id_of.emplace(n, int(id_of.size()));

  std::vector<LabeledImage> out;
  for (const auto& d : class_dirs) {
    const int cls = class_name_map.at(d);
    for (const auto& [id_name, id] : id_of) {
      const fs::path idp = fs::path(root) / d / id_name;
      if (!fs::is_directory(idp)) continue;
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(idp))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        LabeledImage im;
        im.pixels = load_image(f, resolution);
        im.label = ExpressionLabel::of_class(cls, K);
        im.identity_id = id;
        out.push_back(std::move(im));
      }
    }
  }
  require(!out.empty(), "ingest_folder: no images under " + root);
  return out;
}

LabeledImage flip_horizontal(const LabeledImage& im) {
  const long H = im.pixels.dim(0), W = im.pixels.dim(1), C = im.pixels.dim(2);
  LabeledImage out = im;
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long c = 0; c < C; ++c)
        out.pixels[size_t((h * W + w) * C + c)] = im.pixels[size_t((h * W + (W - 1 - w)) * C + c)];
  return out;
}

LabeledImage augment_flip(const LabeledImage& im, Rng& rng) {
  return rng.uniform01() < 0.5 ? flip_horizontal(im) : im;
}

std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split_by_identity(
    const std::vector<LabeledImage>& dataset, double test_fraction, uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0,
          "split_by_identity: test_fraction must be in (0,1)");
  std::set<int> id_set;
  for (const auto& im : dataset) id_set.insert(im.identity_id);
  require(id_set.size() >= 2, "split_by_identity: need at least 2 identities");
  std::vector<int> ids(id_set.begin(), id_set.end());
  Rng rng(seed);
  rng.shuffle(ids);
  size_t n_test = size_t(std::lround(test_fraction * double(ids.size())));
  n_test = std::clamp(n_test, size_t(1), ids.size() - 1);
  std::set<int> test_ids(ids.begin(), ids.begin() + long(n_test));

  std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> parts;
  for (const auto& im : dataset)
    (test_ids.count(im.identity_id) ? parts.second : parts.first).push_back(im);
  return parts;
}

std::vector<std::string> default_class_names(int K) {
  require(K >= 1, "default_class_names: K out of range");
  if (K == kSyntheticClasses) return {"smile", "frown", "surprise"};
  std::vector<std::string> names;
  for (int k = 0; k < K; ++k) names.push_back("expr" + std::to_string(k));
  return names;
}

void save_dataset(const std::vector<LabeledImage>& data, const std::string& out_dir,
                  const std::vector<std::string>& class_names, uint64_t seed) {
  namespace fs = std::filesystem;
  require(!data.empty(), "save_dataset: empty dataset");
  std::ofstream manifest;
  fs::create_directories(out_dir);
  manifest.open(out_dir + "/manifest.jsonl", std::ios::trunc);
  require(manifest.good(), "save_dataset: cannot write manifest in " + out_dir);

  std::map<std::string, int> counters;
  char buf[32];
  for (const auto& im : data) {
    const int cls = im.label.active_class();
    require(cls < int(class_names.size()), "save_dataset: class name list too short");
    std::snprintf(buf, sizeof(buf), "id%04d", im.identity_id);
    const std::string rel_dir = "images/" + class_names[size_t(cls)] + "/" + buf;
    fs::create_directories(fs::path(out_dir) / rel_dir);
    const int n = counters[rel_dir]++;
    std::snprintf(buf, sizeof(buf), "img_%05d.png", n);
    const std::string rel = rel_dir + "/" + buf;
    save_image(im.pixels, out_dir + "/" + rel);

    nlohmann::json rec;
    rec["path"] = rel;
    rec["class"] = cls;
    rec["identity"] = im.identity_id;
    if (im.intensity >= 0) rec["intensity"] = im.intensity;
    rec["seed"] = seed;
    manifest << rec.dump() << "\n";
  }
  require(manifest.good(), "save_dataset: manifest write failure");
}

std::vector<LabeledImage> load_dataset(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.jsonl");
  require(manifest.good(), "load_dataset: missing manifest.jsonl in " + dir);
  struct Rec {
    std::string path;
    int cls, identity;
    double intensity;
  };
  std::vector<Rec> recs;
  int K = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    Rec r;
    r.path = j.at("path").get<std::string>();
    r.cls = j.at("class").get<int>();
    r.identity = j.at("identity").get<int>();
    r.intensity = j.contains("intensity") ? j.at("intensity").get<double>() : -1.0;
    K = std::max(K, r.cls + 1);
    recs.push_back(std::move(r));
  }
  require(!recs.empty(), "load_dataset: empty manifest in " + dir);

  std::vector<LabeledImage> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    LabeledImage im;
    im.pixels = load_image_native(dir + "/" + r.path);
    im.label = ExpressionLabel::of_class(r.cls, K);
    im.identity_id = r.identity;
    im.intensity = r.intensity;
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace expredit
