#include "reid/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "reid/checkpoint.hpp"

namespace fs = std::filesystem;

namespace reid {

TrainConfig TrainConfig::from_file(const std::string& path) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  TrainConfig cfg = from_kv(kv);
  kv.check_fully_consumed();
  cfg.apply_env_seed();
  return cfg;
}

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv) {
  TrainConfig cfg;
  BackboneConfig& bb = cfg.model.backbone;
  long image = kv.get_long("image_size", bb.image_h);
  bb.image_h = kv.get_long("image_h", image);
  bb.image_w = kv.get_long("image_w", image);

  auto read4 = [&kv](const char* key, std::array<long, 4>& out) {
    std::vector<long> v = kv.get_longs(key, std::vector<long>(out.begin(), out.end()));
    if (v.size() != 4) throw ConfigError(std::string("config: '") + key + "' needs 4 values");
    std::copy(v.begin(), v.end(), out.begin());
  };
  read4("embed_dims", bb.embed_dims);
  read4("depths", bb.depths);
  read4("heads", bb.num_heads);
  read4("sr_ratios", bb.sr_ratios);
  read4("patch_sizes", bb.patch_sizes);
  read4("strides", bb.strides);
  read4("paddings", bb.paddings);
  bb.mlp_ratio = kv.get_real("mlp_ratio", bb.mlp_ratio);

  cfg.model.fused_dim = kv.get_long("fused_dim", cfg.model.fused_dim);
  cfg.model.cam_dim = kv.get_long("cam_dim", cfg.model.cam_dim);
  cfg.model.gate_reduction = kv.get_long("gate_reduction", cfg.model.gate_reduction);
  cfg.model.cam_classifier = kv.get_bool("cam_classifier", cfg.model.cam_classifier);
  cfg.model.log_var_clamp = kv.get_real("log_var_clamp", cfg.model.log_var_clamp);
  cfg.loss_options.log_var_clamp = cfg.model.log_var_clamp;

  cfg.weights.alpha1 = kv.get_real("alpha1", cfg.weights.alpha1);
  cfg.weights.alpha2 = kv.get_real("alpha2", cfg.weights.alpha2);
  cfg.weights.alpha3 = kv.get_real("alpha3", cfg.weights.alpha3);
  std::string sigma_mode = kv.get_string("center_sigma_mode", "batch_mean");
  if (sigma_mode == "global") {
    cfg.loss_options.center_sigma_global = true;
  } else if (sigma_mode != "batch_mean") {
    throw ConfigError("config: center_sigma_mode must be batch_mean or global");
  }
  std::string grouping = kv.get_string("camid_grouping", "object");
  if (grouping == "camera") {
    cfg.loss_options.camid_group_by_camera = true;
  } else if (grouping != "object") {
    throw ConfigError("config: camid_grouping must be object or camera");
  }
  cfg.loss_options.cam_ce_weight = kv.get_real("cam_ce_weight", cfg.loss_options.cam_ce_weight);

  cfg.batch_size = kv.get_long("batch_size", cfg.batch_size);
  cfg.pk_p = kv.get_long("pk_p", cfg.pk_p);
  cfg.pk_k = kv.get_long("pk_k", cfg.pk_k);
  cfg.lr = kv.get_real("lr", cfg.lr);
  cfg.min_lr_frac = kv.get_real("min_lr_frac", cfg.min_lr_frac);
  cfg.weight_decay = kv.get_real("weight_decay", cfg.weight_decay);
  cfg.beta1 = kv.get_real("beta1", cfg.beta1);
  cfg.beta2 = kv.get_real("beta2", cfg.beta2);
  cfg.adam_eps = kv.get_real("adam_eps", cfg.adam_eps);
  cfg.epochs = kv.get_long("epochs", cfg.epochs);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  return cfg;
}

void TrainConfig::apply_env_seed() {
  if (const char* env = std::getenv("REID_SEED")) {
    try {
      seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("REID_SEED is not an unsigned integer: " + std::string(env));
    }
  }
}

void TrainConfig::validate() const {
  if (pk_p * pk_k != batch_size) {
    throw ConfigError("train: P*K must equal batch_size (" + std::to_string(pk_p) + "*" +
                      std::to_string(pk_k) + " != " + std::to_string(batch_size) + ")");
  }
  if (pk_k < 2) throw ConfigError("train: K must be >= 2");
  if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (min_lr_frac < 0.0 || min_lr_frac > 1.0) throw ConfigError("train: min_lr_frac in [0,1]");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  weights.validate();
}

namespace {

struct TrainData {
  std::vector<Image> images;        // train images only
  std::vector<long> object_labels;  // remapped to 0..num_ids-1
  std::vector<long> camera_labels;
  long num_ids = 0;
  long num_cams = 0;
};

TrainData collect_train_data(const DatasetManifest& manifest) {
  TrainData data;
  std::vector<long> idx = manifest.indices_of(Split::kTrain);
  if (idx.empty()) throw ConfigError("train: manifest has no train records");

  std::map<long, long> id_map;
  std::map<long, long> count;
  for (long i : idx) {
    count[manifest.records[static_cast<size_t>(i)].object_id]++;
  }
  for (const auto& [id, n] : count) {
    if (n < 2) {
      throw ConfigError("train: identity " + std::to_string(id) +
                        " has fewer than 2 train images");
    }
    long next = static_cast<long>(id_map.size());
    id_map[id] = next;
  }
  std::map<long, long> cam_map;
  for (long i : idx) {
    const ManifestRecord& rec = manifest.records[static_cast<size_t>(i)];
    data.images.push_back(read_ppm(manifest.resolve(rec)));
    data.object_labels.push_back(id_map[rec.object_id]);
    if (!cam_map.count(rec.camera_id)) {
      long next = static_cast<long>(cam_map.size());
      cam_map[rec.camera_id] = next;
    }
    data.camera_labels.push_back(cam_map[rec.camera_id]);
  }
  data.num_ids = static_cast<long>(id_map.size());
  data.num_cams = static_cast<long>(cam_map.size());
  return data;
}

void write_abort_dump(const std::string& out_dir, const TrainingAbort& abort, long epoch,
                      double lr) {
  nlohmann::json j;
  j["component"] = abort.component;
  j["step"] = abort.step;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["message"] = abort.what();
  std::ofstream out((fs::path(out_dir) / "abort_dump.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const std::string& out_dir, const EpochCallback& on_epoch_end) {
  cfg.validate();
  fs::create_directories(out_dir);
  TrainData data = collect_train_data(manifest);

  ModelConfig mc = cfg.model;
  mc.num_ids = data.num_ids;
  mc.num_cams = data.num_cams;
  Model model(mc, cfg.seed);
  AdamW opt(model.store(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  PkSampler sampler(data.object_labels, cfg.pk_p, cfg.pk_k, cfg.seed ^ 0x5eedbeefULL);

  long n_train = static_cast<long>(data.images.size());
  long min_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("train: cannot write " + log_path);
  log << LossReport::csv_header() << '\n';

  std::string last_ckpt = (fs::path(out_dir) / "checkpoint_last.bin").string();
  TrainResult result;
  long step = 0;
  double min_lr = cfg.lr * cfg.min_lr_frac;

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cosine_lr(cfg.lr, min_lr, epoch, cfg.epochs);
    for (const std::vector<long>& batch : sampler.epoch_batches(min_batches)) {
      Tensor images = images_to_tensor(data.images, batch);
      std::vector<long> obj, cam;
      for (long i : batch) {
        obj.push_back(data.object_labels[static_cast<size_t>(i)]);
        cam.push_back(data.camera_labels[static_cast<size_t>(i)]);
      }
      ModelOutputs out = model.forward(images, Mode::kTrain);
      TotalLoss loss;
      try {
        loss = compute_losses(model, out, obj, cam, cfg.weights, cfg.loss_options, step);
      } catch (const TrainingAbort& abort) {
        write_abort_dump(out_dir, abort, epoch, lr);
        throw;
      }
      opt.zero_grad();
      backward(loss.total);
      opt.step(lr);
      log << loss.report.csv_row(step) << '\n';
      ++step;
    }
    save_checkpoint(last_ckpt, model);
    result.epochs_run = epoch + 1;
    if (on_epoch_end && on_epoch_end(epoch, model)) break;
  }

  log.flush();
  std::string final_ckpt = (fs::path(out_dir) / "checkpoint_final.bin").string();
  save_checkpoint(final_ckpt, model);
  result.log_path = log_path;
  result.final_checkpoint = final_ckpt;
  result.steps = step;
  return result;
}

namespace {

// Embeds every image referenced by the given records, one forward per unique
// path, in chunks.
std::map<std::string, std::vector<double>> embed_records(Model& model,
                                                         const DatasetManifest& manifest,
                                                         const std::vector<long>& indices,
                                                         long embed_batch) {
  std::vector<std::string> paths;
  std::map<std::string, std::vector<double>> cache;
  for (long i : indices) {
    std::string p = manifest.resolve(manifest.records[static_cast<size_t>(i)]);
    if (!cache.count(p)) {
      cache[p] = {};
      paths.push_back(p);
    }
  }
  for (size_t start = 0; start < paths.size(); start += static_cast<size_t>(embed_batch)) {
    size_t end = std::min(paths.size(), start + static_cast<size_t>(embed_batch));
    std::vector<Image> imgs;
    std::vector<long> order;
    for (size_t i = start; i < end; ++i) {
      imgs.push_back(read_ppm(paths[i]));
      order.push_back(static_cast<long>(i - start));
    }
    Tensor batch = images_to_tensor(imgs, order);
    Tensor emb = model.embed(batch);
    long d = emb.dim(1);
    for (size_t i = start; i < end; ++i) {
      const Real* row = emb.data() + static_cast<long>(i - start) * d;
      cache[paths[i]] = std::vector<double>(row, row + d);
    }
  }
  return cache;
}

metrics::EvalSet build_eval_set(Model& model, const DatasetManifest& manifest, long embed_batch) {
  std::vector<long> q_idx = manifest.indices_of(Split::kQuery);
  std::vector<long> g_idx = manifest.indices_of(Split::kGallery);
  if (q_idx.empty() || g_idx.empty()) {
    throw ContractError("evaluate: manifest needs query and gallery splits");
  }
  std::vector<long> all = q_idx;
  all.insert(all.end(), g_idx.begin(), g_idx.end());
  auto cache = embed_records(model, manifest, all, embed_batch);

  metrics::EvalSet set;
  for (long i : q_idx) {
    const ManifestRecord& rec = manifest.records[static_cast<size_t>(i)];
    set.query.push_back(cache.at(manifest.resolve(rec)));
    set.query_ids.push_back(rec.object_id);
    set.query_cams.push_back(rec.camera_id);
  }
  for (long i : g_idx) {
    const ManifestRecord& rec = manifest.records[static_cast<size_t>(i)];
    set.gallery.push_back(cache.at(manifest.resolve(rec)));
    set.gallery_ids.push_back(rec.object_id);
    set.gallery_cams.push_back(rec.camera_id);
  }
  return set;
}

}  // namespace

metrics::EvalResult evaluate_in_memory(Model& model, const DatasetManifest& manifest,
                                       long max_rank, long embed_batch) {
  return metrics::evaluate(build_eval_set(model, manifest, embed_batch), max_rank);
}

metrics::EvalSet embed_eval_set(Model& model, const DatasetManifest& manifest, long embed_batch) {
  return build_eval_set(model, manifest, embed_batch);
}

EvalOutput evaluate_model(Model& model, const DatasetManifest& manifest,
                          const std::string& out_dir, const EvalOptions& opts) {
  fs::create_directories(out_dir);
  metrics::EvalSet set = build_eval_set(model, manifest, opts.embed_batch);
  metrics::EvalResult res = metrics::evaluate(set, opts.max_rank);

  EvalOutput out;
  out.result = res;
  out.num_query = static_cast<long>(set.query.size());
  out.num_gallery = static_cast<long>(set.gallery.size());
  out.curve_path = (fs::path(out_dir) / "cmc.csv").string();
  metrics::export_curves(res, out.curve_path,
                         opts.write_svg ? (fs::path(out_dir) / "cmc.svg").string() : "");

  nlohmann::json j;
  j["mAP"] = res.mean_ap;
  auto rank_at = [&res](size_t k) {
    return res.cmc.empty() ? 0.0 : res.cmc[std::min(k, res.cmc.size()) - 1];
  };
  j["rank1"] = rank_at(1);
  j["rank5"] = rank_at(5);
  j["rank10"] = rank_at(10);
  j["cmc"] = res.cmc;
  j["evaluated"] = res.evaluated;
  j["skipped"] = res.skipped;
  j["num_query"] = out.num_query;
  j["num_gallery"] = out.num_gallery;
  out.report_path = (fs::path(out_dir) / "report.json").string();
  std::ofstream rep(out.report_path);
  if (!rep) throw IoError("evaluate: cannot write " + out.report_path);
  rep << j.dump(2) << '\n';
  return out;
}

EvalOutput evaluate_checkpoint(const std::string& checkpoint_path,
                               const DatasetManifest& manifest, const std::string& out_dir,
                               const EvalOptions& opts) {
  Model model = load_checkpoint(checkpoint_path);
  return evaluate_model(model, manifest, out_dir, opts);
}

}  // namespace reid
