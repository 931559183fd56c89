#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "expredit/exprcode.hpp"
#include "expredit/rng.hpp"
#include "expredit/tensor.hpp"

namespace expredit {

// The synthetic face is a vector-drawn head whose identity is fixed by five
// geometry factors and whose expression is one of three classes (smile,
// frown, surprise), each driven by a scalar intensity. Intensity zero is the
// shared neutral configuration; class-dependent pixels stay inside the mouth
// and brow regions by construction.

constexpr int kSmile = 0;
constexpr int kFrown = 1;
constexpr int kSurprise = 2;
constexpr int kSyntheticClasses = 3;

struct SyntheticFaceParams {
  int identity_id = 0;
  // head aspect, eye spacing, eye size, brow height, hue; each in [0,1]
  std::array<double, 5> geometry{0.5, 0.5, 0.5, 0.5, 0.5};
  int expr_class = kSmile;
  double intensity = 0.0;  // [0,1]

  void validate() const;  // names the offending field
};

struct LabeledImage {
  Tensor pixels;  // (H, W, C) in [-1,1]
  ExpressionLabel label;
  int identity_id = 0;
  double intensity = -1.0;  // < 0 means unknown
};

struct DatasetSpec {
  int n_identities = 20;
  int images_per_identity_per_class = 30;
  int K = kSyntheticClasses;
  int resolution = 64;
  double intensity_min = 0.3;  // training faces are near-peak expressions;
  double intensity_max = 1.0;  // neutral is held out by construction
  uint64_t seed = 1;

  void validate() const;
};

// Deterministic geometry factors for an identity under a dataset seed.
std::array<double, 5> identity_geometry(int identity_id, uint64_t seed);

// Pure rasterizer (4x supersampled). Same params, same pixels.
LabeledImage render_face(const SyntheticFaceParams& params, int resolution);

// The analytic mouth-curvature attribute of a parameter set, in output
// pixels, signed so that smiles are positive.
double mouth_curvature_of(const SyntheticFaceParams& params, int resolution);

// Pixels that may differ between two renders of the same identity (union of
// the mouth and brow regions over all classes and intensities): (H, W), 1/0.
Tensor class_region_mask(const SyntheticFaceParams& params, int resolution);

// Image-space probes. Both work on any image of the synthetic layout,
// rendered or generated; the mouth region has an identity-independent
// position. Curvature is the quadratic coefficient of the darkness-weighted
// column centroids in the mouth region, in pixels, smile-positive; openness
// is the darkness-weighted vertical spread there.
double mouth_curvature(const Tensor& img);
double mouth_openness(const Tensor& img);
// The class-aligned attribute that grows with intensity: +curvature for
// smile, -curvature for frown, openness for surprise.
double expression_attribute(const Tensor& img, int expr_class);

std::vector<LabeledImage> sample_dataset(const DatasetSpec& spec);

// Directory layout <root>/<class>/<identity>/<image>. Images are decoded,
// center-cropped square, resized, and mapped to [-1,1].
std::vector<LabeledImage> ingest_folder(const std::string& root,
                                        const std::map<std::string, int>& class_name_map,
                                        int resolution);

LabeledImage flip_horizontal(const LabeledImage& im);
// Mirrors with probability 1/2; label, identity and intensity are kept.
LabeledImage augment_flip(const LabeledImage& im, Rng& rng);

// Disjoint identity split; round(test_fraction * identities) test identities.
std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split_by_identity(
    const std::vector<LabeledImage>& dataset, double test_fraction, uint64_t seed);

std::vector<std::string> default_class_names(int K);

// Writes <out>/images/<class>/<identity>/img_*.png plus manifest.jsonl with
// one record per image: path, class index, identity id, intensity (omitted
// when unknown), dataset seed.
void save_dataset(const std::vector<LabeledImage>& data, const std::string& out_dir,
                  const std::vector<std::string>& class_names, uint64_t seed);
std::vector<LabeledImage> load_dataset(const std::string& dir);

}  // namespace expredit
