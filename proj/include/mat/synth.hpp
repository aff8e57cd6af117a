#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mat/fft.hpp"
#include "mat/image.hpp"
#include "mat/rng.hpp"

namespace mat {

// The four editable face regions, canonical order.
enum Region : int { kNose = 0, kEyes = 1, kMouth = 2, kBrows = 3 };
constexpr int kNumRegions = 4;
const char* region_name(int r);
int region_from_name(const std::string& name);

using Mask = std::vector<uint8_t>;  // h*w, 1 inside the region

struct BaseImage {
  Image img;
  std::array<Mask, 4> masks;  // indexed by Region
  uint64_t seed = 0;
};

// Procedural stand-in for a face photo: background gradient plus elliptical
// regions placed with seeded jitter. Deterministic in (seed, size);
// size must be 32, 64 or 128.
BaseImage gen_base_image(uint64_t seed, int size);

// One simulated editor model. The three editors write their texture into
// disjoint spatial-frequency bands (relative to Nyquist), which is what the
// spectrum-based separability oracle keys on.
struct EditorParadigm {
  char id = '?';                    // 'S', 'D' or 'F'
  double band_lo = 0.0;             // signature band (fraction of Nyquist)
  double band_hi = 0.0;
  double pattern_amp = 0.0;         // texture amplitude inside the region
  double smooth_radius = 0.0;       // blur sigma used by the editor
  std::vector<double> warp_angles;  // grating/clone directions (radians), F only
  double global_side_effect = 0.0;  // whole-image perturbation amplitude, S only
};

const EditorParadigm& editor_paradigm(char id);
constexpr char kEditorIds[3] = {'S', 'D', 'F'};

// Applies one editor to one region and returns the edited image.
//
// All editors replace the masked region with their parametric synthesis and
// add a fixed luminance step per other region that already looks edited
// (detected from the current pixels), so an edit's temporal rank is
// observable afterwards. Editor S additionally perturbs every pixel with a
// low-amplitude smooth regeneration residual (slight global smoothing plus
// smooth noise). Editors D and F leave pixels outside the mask unchanged,
// except for F's feathered blend halo of at most 2 pixels.
Image apply_editor(const Image& img, const std::array<Mask, 4>& masks, int region,
                   const EditorParadigm& editor, uint64_t seed);

struct ManipulationPlan {
  std::array<int, 4> region_order;  // permutation of Region values
  std::array<char, 4> editors;      // surjective onto {S,D,F}
};

// region_order uniform over the 24 permutations; editors uniform over the
// 36 length-4 assignments that use all three ids.
ManipulationPlan sample_plan(Rng& rng);

// Deterministic score from local-contrast statistics and clipping fraction;
// higher is better. Constant images land below the default 0.2 threshold.
float quality_score(const Image& img);

// Stage-shade detector: RMS of the region's high-pass gray content inside the
// eroded mask. Freshly drawn base regions are smooth and score near zero;
// every editor leaves texture that scores well above the detection threshold.
double region_edit_residual(const Image& img, const Mask& mask, int h, int w);

struct SetRecord {
  int id = 0;
  uint64_t seed = 0;
  std::array<int, 4> region_order{};
  std::array<char, 4> editors{};
  std::array<std::string, 5> paths;  // original + 4 stages, relative to manifest
  float quality = 0.0f;
};

struct DatasetManifest {
  int size = 0;  // image side length
  uint64_t seed = 0;
  float quality_threshold = 0.0f;
  std::vector<SetRecord> records;
};

struct GenConfig {
  std::string out_dir;
  int sets = 10;
  int size = 64;
  uint64_t seed = 1;
  float quality_threshold = 0.2f;
};

// Generates sets*5 PPM images plus "manifest.jsonl". Per-set seeds are
// derived by hashing (seed, set id, attempt), so generation is order
// independent and sets below the quality threshold are retried
// deterministically until `sets` survive.
DatasetManifest gen_dataset(const GenConfig& cfg);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// In-memory generation of one set (original + 4 stages); used by gen_dataset
// and by tests that need ground truth without touching disk.
struct GeneratedSet {
  BaseImage base;
  std::array<Image, 5> stages;  // stages[0] == base.img
  ManipulationPlan plan;
  float quality = 0.0f;
};
GeneratedSet gen_set(uint64_t set_seed, int size);

// Nearest-centroid editor classifier over spectral band features. Fitting on
// a couple hundred single-stage edits certifies that the three paradigms are
// separable before any neural training.
struct CentroidOracle {
  std::array<BandFeatures, 3> centroids;  // indexed by editor (S,D,F)
  int classify(const BandFeatures& f) const;
};
CentroidOracle fit_centroid_oracle(uint64_t seed, int n_fit, int size);
double editor_separability_accuracy(uint64_t seed, int n_fit, int n_eval, int size);

// Fraction of seeded trials on which finishing with editor S moves the
// image's band signature closer to a pure-S edit than to the previous
// stage's editor signature.
double overwrite_property_rate(uint64_t seed, int trials, int size);

}  // namespace mat
