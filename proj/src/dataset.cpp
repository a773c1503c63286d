#include "reid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace reid {

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_ppm: cannot open " + path);
  out << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  std::vector<unsigned char> raw(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); ++i) {
    double v = std::min(std::max(img.rgb[i], 0.0), 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write_ppm: write failure on " + path);
}

namespace {

int next_token(std::istream& in) {
  // skips whitespace and '#' comments, returns the next int
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value;
  if (!(in >> value)) throw IoError("read_ppm: malformed header");
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError("read_ppm: not a binary PPM: " + path);
  long w = next_token(in);
  long h = next_token(in);
  long maxval = next_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("read_ppm: unsupported header in " + path);
  in.get();  // single whitespace before the raster
  Image img;
  img.w = w;
  img.h = h;
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError("read_ppm: truncated raster in " + path);
  }
  img.rgb.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) img.rgb[i] = static_cast<double>(raw[i]) / 255.0;
  return img;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "query") return Split::kQuery;
  if (name == "gallery") return Split::kGallery;
  throw IoError("manifest: unknown split '" + name + "'");
}

DatasetManifest DatasetManifest::load(const std::string& csv_path, bool check_paths) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("manifest: cannot open " + csv_path);
  DatasetManifest m;
  m.base_dir = fs::path(csv_path).parent_path().string();
  std::string line;
  if (!std::getline(in, line) || line != "path,object_id,camera_id,split") {
    throw IoError("manifest: bad header in " + csv_path);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestRecord rec;
    std::string obj, cam, split;
    if (!std::getline(row, rec.path, ',') || !std::getline(row, obj, ',') ||
        !std::getline(row, cam, ',') || !std::getline(row, split)) {
      throw IoError("manifest: malformed row '" + line + "'");
    }
    rec.object_id = std::stol(obj);
    rec.camera_id = std::stol(cam);
    rec.split = split_from_name(split);
    m.records.push_back(std::move(rec));
  }
  if (check_paths) {
    for (const auto& rec : m.records) {
      if (!fs::exists(m.resolve(rec))) {
        throw IoError("manifest: missing image " + m.resolve(rec));
      }
    }
  }
  return m;
}

void DatasetManifest::save(const std::string& csv_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("manifest: cannot write " + csv_path);
  out << "path,object_id,camera_id,split\n";
  for (const auto& rec : records) {
    out << rec.path << ',' << rec.object_id << ',' << rec.camera_id << ','
        << split_name(rec.split) << '\n';
  }
  if (!out) throw IoError("manifest: write failure on " + csv_path);
}

std::string DatasetManifest::resolve(const ManifestRecord& rec) const {
  if (base_dir.empty()) return rec.path;
  return (fs::path(base_dir) / rec.path).string();
}

std::vector<long> DatasetManifest::indices_of(Split split) const {
  std::vector<long> out;
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(static_cast<long>(i));
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (num_ids < 2) throw ConfigError("synthetic: num_ids must be >= 2");
  if (cams < 2) throw ConfigError("synthetic: need >= 2 cameras for cross-camera evaluation");
  if (images_per_id_per_cam < 3) {
    throw ConfigError("synthetic: need >= 3 images per id per camera to carve train/query/gallery");
  }
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("synthetic: image_size must be a positive multiple of 32");
  }
  if (!(altitude_lo > 0.0) || altitude_hi < altitude_lo || altitude_hi > 0.95) {
    throw ConfigError("synthetic: altitude range must satisfy 0 < lo <= hi <= 0.95");
  }
  if (noise < 0.0) throw ConfigError("synthetic: noise must be non-negative");
}

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  return {r + (v - c), g + (v - c), b + (v - c)};
}

// Rotation about the gray axis; keeps luminance roughly constant.
void rotate_hue(double angle, double& r, double& g, double& b) {
  double cosa = std::cos(angle), sina = std::sin(angle);
  double m[3][3];
  const double third = 1.0 / 3.0;
  const double rt = std::sqrt(third);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      m[i][j] = third * (1.0 - cosa) + (i == j ? cosa : 0.0);
    }
  }
  m[0][1] += -rt * sina; m[0][2] += rt * sina;
  m[1][0] += rt * sina;  m[1][2] += -rt * sina;
  m[2][0] += -rt * sina; m[2][1] += rt * sina;
  double nr = m[0][0] * r + m[0][1] * g + m[0][2] * b;
  double ng = m[1][0] * r + m[1][1] * g + m[1][2] * b;
  double nb = m[2][0] * r + m[2][1] * g + m[2][2] * b;
  r = nr; g = ng; b = nb;
}

void fill_rect(Image& img, long x0, long y0, long x1, long y1, const Rgb& c) {
  x0 = std::max(x0, 0L); y0 = std::max(y0, 0L);
  x1 = std::min(x1, img.w); y1 = std::min(y1, img.h);
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      img.at(y, x, 0) = c.r;
      img.at(y, x, 1) = c.g;
      img.at(y, x, 2) = c.b;
    }
  }
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, const Rgb& c) {
  long y0 = static_cast<long>(std::floor(cy - ry)), y1 = static_cast<long>(std::ceil(cy + ry)) + 1;
  long x0 = static_cast<long>(std::floor(cx - rx)), x1 = static_cast<long>(std::ceil(cx + rx)) + 1;
  y0 = std::max(y0, 0L); x0 = std::max(x0, 0L);
  y1 = std::min(y1, img.h); x1 = std::min(x1, img.w);
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        img.at(y, x, 0) = c.r;
        img.at(y, x, 1) = c.g;
        img.at(y, x, 2) = c.b;
      }
    }
  }
}

double id_hue(long object_id) {
  return std::fmod(0.618033988749895 * static_cast<double>(object_id + 1), 1.0);
}

uint32_t marker_bits(long object_id) {
  uint32_t bits = static_cast<uint32_t>(mix64(static_cast<uint64_t>(object_id) + 1) & 0x1ffu);
  return bits | 1u;  // at least one marker
}

}  // namespace

Image render_instance(const SyntheticSpec& spec, long object_id, long camera_id, double altitude,
                      std::mt19937_64* noise_rng) {
  long S = spec.image_size;
  Image img;
  img.h = S;
  img.w = S;
  img.rgb.assign(static_cast<size_t>(S * S * 3), 0.0);

  // The scene (clutter layout, object placement) is a deterministic function
  // of camera and the altitude draw: identical draws reproduce the scene.
  uint64_t alt_bits;
  static_assert(sizeof(double) == sizeof(uint64_t));
  std::memcpy(&alt_bits, &altitude, sizeof(alt_bits));
  std::mt19937_64 scene(mix64(spec.seed ^ mix64(alt_bits) ^
                              mix64(0xC0FFEEull + static_cast<uint64_t>(camera_id))));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Rgb base = hsv_to_rgb(uni(scene), 0.25, 0.30 + 0.30 * uni(scene));
  fill_rect(img, 0, 0, S, S, base);
  for (int i = 0; i < 14; ++i) {
    double w = (0.08 + 0.30 * uni(scene)) * static_cast<double>(S);
    double h = (0.08 + 0.30 * uni(scene)) * static_cast<double>(S);
    double x = uni(scene) * static_cast<double>(S) - w / 2;
    double y = uni(scene) * static_cast<double>(S) - h / 2;
    Rgb c = hsv_to_rgb(uni(scene), 0.4 + 0.5 * uni(scene), 0.25 + 0.6 * uni(scene));
    fill_rect(img, static_cast<long>(x), static_cast<long>(y), static_cast<long>(x + w),
              static_cast<long>(y + h), c);
  }

  double rx = altitude * static_cast<double>(S) * 0.5;
  double ry = altitude * static_cast<double>(S) * 0.36;
  double margin_x = (static_cast<double>(S) - 2.0 * rx) * 0.5;
  double margin_y = (static_cast<double>(S) - 2.0 * ry) * 0.5;
  double cx = static_cast<double>(S) * 0.5 + (uni(scene) - 0.5) * margin_x;
  double cy = static_cast<double>(S) * 0.5 + (uni(scene) - 0.5) * margin_y;

  double hue = id_hue(object_id);
  Rgb body = hsv_to_rgb(hue, 0.75, 0.85);
  Rgb marker = hsv_to_rgb(hue + 0.5, 0.9, 0.95);
  fill_ellipse(img, cx, cy, rx, ry, body);
  uint32_t bits = marker_bits(object_id);
  double mr = std::max(1.2, altitude * static_cast<double>(S) * 0.055);
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      if (!(bits & (1u << (j * 3 + i)))) continue;
      double mx = cx + static_cast<double>(i - 1) * rx * 0.52;
      double my = cy + static_cast<double>(j - 1) * ry * 0.52;
      fill_ellipse(img, mx, my, mr, mr, marker);
    }
  }

  double spread = spec.cams > 1 ? 2.0 * static_cast<double>(camera_id) /
                                      static_cast<double>(spec.cams - 1) - 1.0
                                : 0.0;
  double brightness = spec.cam_brightness * spread;
  double hue_angle = spec.cam_hue_shift * spread;
  for (long y = 0; y < S; ++y) {
    for (long x = 0; x < S; ++x) {
      double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      rotate_hue(hue_angle, r, g, b);
      img.at(y, x, 0) = r + brightness;
      img.at(y, x, 1) = g + brightness;
      img.at(y, x, 2) = b + brightness;
    }
  }

  if (noise_rng && spec.noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, spec.noise);
    for (double& v : img.rgb) v += gauss(*noise_rng);
  }
  for (double& v : img.rgb) v = std::min(std::max(v, 0.0), 1.0);
  return img;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "images");

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  long per = spec.images_per_id_per_cam;

  for (long id = 0; id < spec.num_ids; ++id) {
    for (long cam = 0; cam < spec.cams; ++cam) {
      for (long k = 0; k < per; ++k) {
        double altitude = spec.altitude_lo + uni(rng) * (spec.altitude_hi - spec.altitude_lo);
        Image img = render_instance(spec, id, cam, altitude, spec.noise > 0.0 ? &rng : nullptr);
        char name[96];
        std::snprintf(name, sizeof(name), "images/id%03ld_c%ld_%02ld.ppm", id, cam, k);
        write_ppm((fs::path(out_dir) / name).string(), img);
        ManifestRecord rec;
        rec.path = name;
        rec.object_id = id;
        rec.camera_id = cam;
        rec.split = k < per - 2 ? Split::kTrain : (k == per - 2 ? Split::kQuery : Split::kGallery);
        manifest.records.push_back(std::move(rec));
      }
    }
  }
  manifest.save((fs::path(out_dir) / "manifest.csv").string());

  // Sanity variant: every train image doubles as query and gallery, so an
  // overfit check can rank the training set against itself cross-camera.
  DatasetManifest sanity;
  sanity.base_dir = out_dir;
  for (const auto& rec : manifest.records) {
    if (rec.split != Split::kTrain) continue;
    sanity.records.push_back(rec);
  }
  for (Split s : {Split::kQuery, Split::kGallery}) {
    for (const auto& rec : manifest.records) {
      if (rec.split != Split::kTrain) continue;
      ManifestRecord copy = rec;
      copy.split = s;
      sanity.records.push_back(std::move(copy));
    }
  }
  sanity.save((fs::path(out_dir) / "manifest_sanity.csv").string());
  return manifest;
}

PkSampler::PkSampler(std::vector<long> labels, long p, long k, unsigned long long seed)
    : p_(p), k_(k), rng_(seed) {
  if (p < 2 || k < 2) throw ConfigError("pk_sample: need P >= 2 and K >= 2");
  std::vector<std::pair<long, std::vector<long>>> by_label;
  for (size_t i = 0; i < labels.size(); ++i) {
    long l = labels[i];
    auto it = std::find_if(by_label.begin(), by_label.end(),
                           [l](const auto& e) { return e.first == l; });
    if (it == by_label.end()) {
      by_label.push_back({l, {static_cast<long>(i)}});
    } else {
      it->second.push_back(static_cast<long>(i));
    }
  }
  std::sort(by_label.begin(), by_label.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [label, idx] : by_label) {
    if (static_cast<long>(idx.size()) >= k) groups_.push_back(std::move(idx));
  }
  if (static_cast<long>(groups_.size()) < p) {
    throw ConfigError("pk_sample: only " + std::to_string(groups_.size()) +
                      " identities have >= " + std::to_string(k) + " images; need P = " +
                      std::to_string(p));
  }
}

void PkSampler::refill_queue() {
  std::vector<long> ids(groups_.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng_);
  for (long id : ids) id_queue_.push_back(id);
}

std::vector<std::vector<long>> PkSampler::epoch_batches(long min_batches) {
  long num_ids = static_cast<long>(groups_.size());
  long batches = (num_ids + p_ - 1) / p_;
  batches = std::max(batches, min_batches);
  std::vector<std::vector<long>> out;
  for (long b = 0; b < batches; ++b) {
    std::vector<long> batch;
    std::set<long> used;
    std::vector<long> deferred;  // queued ids already present in this batch
    while (static_cast<long>(used.size()) < p_) {
      if (id_queue_.empty()) refill_queue();
      long gid = id_queue_.front();
      id_queue_.erase(id_queue_.begin());
      if (used.count(gid)) {
        deferred.push_back(gid);
        continue;
      }
      used.insert(gid);
      std::vector<long> pool = groups_[static_cast<size_t>(gid)];
      std::shuffle(pool.begin(), pool.end(), rng_);
      for (long k = 0; k < k_; ++k) batch.push_back(pool[static_cast<size_t>(k)]);
    }
    id_queue_.insert(id_queue_.begin(), deferred.begin(), deferred.end());
    out.push_back(std::move(batch));
  }
  return out;
}

std::vector<Image> load_images(const DatasetManifest& manifest) {
  std::vector<Image> images;
  images.reserve(manifest.records.size());
  long h = -1, w = -1;
  for (const auto& rec : manifest.records) {
    Image img = read_ppm(manifest.resolve(rec));
    if (h < 0) {
      h = img.h;
      w = img.w;
    } else if (img.h != h || img.w != w) {
      throw ContractError("load_images: mixed image extents in manifest");
    }
    images.push_back(std::move(img));
  }
  return images;
}

Tensor images_to_tensor(const std::vector<Image>& images, const std::vector<long>& indices) {
  if (indices.empty()) throw ContractError("images_to_tensor: empty batch");
  long h = images[static_cast<size_t>(indices[0])].h;
  long w = images[static_cast<size_t>(indices[0])].w;
  long B = static_cast<long>(indices.size());
  Tensor t = Tensor::zeros({B, h, w, 3});
  Real* d = t.data();
  for (long b = 0; b < B; ++b) {
    const Image& img = images[static_cast<size_t>(indices[static_cast<size_t>(b)])];
    for (size_t i = 0; i < img.rgb.size(); ++i) {
      d[static_cast<size_t>(b) * img.rgb.size() + i] = img.rgb[i] * 2.0 - 1.0;
    }
  }
  return t;
}

}  // namespace reid
