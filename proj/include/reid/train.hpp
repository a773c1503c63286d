#pragma once

#include <functional>
#include <string>

#include "reid/config.hpp"
#include "reid/dataset.hpp"
#include "reid/losses.hpp"
#include "reid/metrics.hpp"
#include "reid/model.hpp"
#include "reid/optimizer.hpp"

namespace reid {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  LossOptions loss_options;
  long batch_size = 32;
  long pk_p = 8;
  long pk_k = 4;
  double lr = 3e-4;
  double min_lr_frac = 0.01;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long epochs = 200;
  unsigned long long seed = 42;

  // Flat key = value text; see the README for the schema. REID_SEED in the
  // environment overrides the seed.
  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_kv(const KeyValueConfig& kv);
  void apply_env_seed();
  void validate() const;  // P*K == batch, K >= 2, lr > 0
};

struct TrainResult {
  std::string log_path;
  std::string final_checkpoint;
  long steps = 0;
  long epochs_run = 0;
};

// Returns true to stop training after the current epoch.
using EpochCallback = std::function<bool(long epoch, Model& model)>;

// PK-sampled AdamW training with a per-epoch cosine learning rate. Writes
// train_log.csv (one LossReport row per step), a rolling per-epoch checkpoint
// and a final checkpoint under out_dir. Deterministic given the seed. A
// non-finite loss aborts with a diagnostic dump (abort_dump.json).
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const std::string& out_dir, const EpochCallback& on_epoch_end = {});

struct EvalOptions {
  long max_rank = 20;
  bool write_svg = false;
  long embed_batch = 32;
};

struct EvalOutput {
  metrics::EvalResult result;
  long num_query = 0;
  long num_gallery = 0;
  std::string report_path;
  std::string curve_path;
};

// Embeds the manifest's query and gallery splits with a model and runs the
// retrieval evaluation; writes report.json and cmc.csv under out_dir.
EvalOutput evaluate_model(Model& model, const DatasetManifest& manifest,
                          const std::string& out_dir, const EvalOptions& opts = {});

// Same, loading the model from a checkpoint first.
EvalOutput evaluate_checkpoint(const std::string& checkpoint_path,
                               const DatasetManifest& manifest, const std::string& out_dir,
                               const EvalOptions& opts = {});

// In-memory sanity evaluation (no files written).
metrics::EvalResult evaluate_in_memory(Model& model, const DatasetManifest& manifest,
                                       long max_rank = 20, long embed_batch = 32);

// Embeds the manifest's query/gallery splits without scoring them; feeds
// permutation baselines and custom protocols.
metrics::EvalSet embed_eval_set(Model& model, const DatasetManifest& manifest,
                                long embed_batch = 32);

}  // namespace reid
