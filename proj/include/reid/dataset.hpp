#pragma once

#include <random>
#include <string>
#include <vector>

#include "reid/tensor.hpp"

namespace reid {

struct Image {
  long h = 0, w = 0;
  std::vector<double> rgb;  // h*w*3 row-major, values in [0,1]

  double& at(long y, long x, long c) { return rgb[static_cast<size_t>((y * w + x) * 3 + c)]; }
  double at(long y, long x, long c) const { return rgb[static_cast<size_t>((y * w + x) * 3 + c)]; }
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

enum class Split { kTrain, kQuery, kGallery };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  long object_id = 0;
  long camera_id = 0;
  Split split = Split::kTrain;
};

// CSV manifest: header "path,object_id,camera_id,split". Image paths are
// stored relative to the manifest file and resolved on load.
struct DatasetManifest {
  std::string base_dir;
  std::vector<ManifestRecord> records;

  static DatasetManifest load(const std::string& csv_path, bool check_paths = true);
  void save(const std::string& csv_path) const;
  std::string resolve(const ManifestRecord& rec) const;
  std::vector<long> indices_of(Split split) const;
};

struct SyntheticSpec {
  long num_ids = 8;
  long cams = 2;
  long images_per_id_per_cam = 8;
  long image_size = 64;
  double altitude_lo = 0.28;  // rendered object size as a fraction of the frame
  double altitude_hi = 0.55;
  double cam_brightness = 0.10;  // per-camera fixed brightness offset magnitude
  double cam_hue_shift = 0.45;   // per-camera fixed hue rotation magnitude (radians)
  double noise = 0.06;           // additive Gaussian pixel noise
  unsigned long long seed = 7;

  void validate() const;
};

// Renders one object instance: an id-determined body (hue) and marker pattern
// on a clutter background whose layout is a deterministic function of the
// altitude draw and camera, followed by the camera's fixed style transform.
// noise_rng, when non-null, adds per-pixel Gaussian noise.
Image render_instance(const SyntheticSpec& spec, long object_id, long camera_id, double altitude,
                      std::mt19937_64* noise_rng);

// Writes images plus manifest.csv (train/query/gallery split) and
// manifest_sanity.csv (train images doubling as query and gallery) under
// out_dir. Fully deterministic given spec.seed.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// PK batch sampler: every batch holds exactly P identities with K instances
// each, so every anchor has positives. An epoch covers each eligible identity
// at least once.
class PkSampler {
 public:
  PkSampler(std::vector<long> labels, long p, long k, unsigned long long seed);
  // Batches of indices into the label vector; at least min_batches are
  // produced (identities recycle with fresh shuffles).
  std::vector<std::vector<long>> epoch_batches(long min_batches = 0);
  long num_eligible() const { return static_cast<long>(groups_.size()); }

 private:
  long p_, k_;
  std::vector<std::vector<long>> groups_;  // indices grouped by eligible identity
  std::vector<long> id_queue_;
  std::mt19937_64 rng_;
  void refill_queue();
};

// Loads every referenced image; all must share the same extents.
std::vector<Image> load_images(const DatasetManifest& manifest);

// Stacks images into a (B, H, W, 3) tensor with values mapped to [-1, 1].
Tensor images_to_tensor(const std::vector<Image>& images, const std::vector<long>& indices);

}  // namespace reid
