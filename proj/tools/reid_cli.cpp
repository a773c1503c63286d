#include <cstdio>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "reid/checkpoint.hpp"
#include "reid/gradcheck_suite.hpp"
#include "reid/metrics_reference.hpp"
#include "reid/train.hpp"

namespace {

using namespace reid;

SyntheticSpec spec_from_file(const std::string& path) {
  SyntheticSpec spec;
  if (path.empty()) return spec;
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  spec.num_ids = kv.get_long("num_ids", spec.num_ids);
  spec.cams = kv.get_long("cams", spec.cams);
  spec.images_per_id_per_cam = kv.get_long("images_per_id_per_cam", spec.images_per_id_per_cam);
  spec.image_size = kv.get_long("image_size", spec.image_size);
  spec.altitude_lo = kv.get_real("altitude_lo", spec.altitude_lo);
  spec.altitude_hi = kv.get_real("altitude_hi", spec.altitude_hi);
  spec.cam_brightness = kv.get_real("cam_brightness", spec.cam_brightness);
  spec.cam_hue_shift = kv.get_real("cam_hue_shift", spec.cam_hue_shift);
  spec.noise = kv.get_real("noise", spec.noise);
  spec.seed = kv.get_u64("seed", spec.seed);
  kv.check_fully_consumed();
  return spec;
}

void apply_env_seed(unsigned long long& seed) {
  if (const char* env = std::getenv("REID_SEED")) {
    try {
      seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("REID_SEED is not an unsigned integer: " + std::string(env));
    }
  }
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir) {
  SyntheticSpec spec = spec_from_file(spec_path);
  apply_env_seed(spec.seed);
  DatasetManifest manifest = generate_synthetic(spec, out_dir);
  long train = static_cast<long>(manifest.indices_of(Split::kTrain).size());
  long query = static_cast<long>(manifest.indices_of(Split::kQuery).size());
  long gallery = static_cast<long>(manifest.indices_of(Split::kGallery).size());
  std::printf("wrote %zu images to %s (train %ld / query %ld / gallery %ld)\n",
              manifest.records.size(), out_dir.c_str(), train, query, gallery);
  std::printf("manifests: %s/manifest.csv, %s/manifest_sanity.csv\n", out_dir.c_str(),
              out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir) {
  TrainConfig cfg =
      config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
  if (config_path.empty()) cfg.apply_env_seed();
  DatasetManifest manifest = DatasetManifest::load(data_path);
  TrainResult result = train(cfg, manifest, out_dir);
  std::printf("trained %ld steps over %ld epochs\n", result.steps, result.epochs_run);
  std::printf("log: %s\ncheckpoint: %s\n", result.log_path.c_str(),
              result.final_checkpoint.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_dir, const std::string& config_path, bool svg,
             long max_rank) {
  if (!config_path.empty()) {
    // cross-check the stored model dimensions against an expected config
    TrainConfig expected = TrainConfig::from_file(config_path);
    ModelConfig stored = checkpoint_config(ckpt_path);
    if (stored.fused_dim != expected.model.fused_dim ||
        stored.cam_dim != expected.model.cam_dim ||
        stored.backbone.embed_dims != expected.model.backbone.embed_dims) {
      throw ConfigError("eval: checkpoint dimensions do not match the supplied config");
    }
  }
  DatasetManifest manifest = DatasetManifest::load(data_path);
  EvalOptions opts;
  opts.write_svg = svg;
  opts.max_rank = max_rank;
  EvalOutput out = evaluate_checkpoint(ckpt_path, manifest, out_dir, opts);
  std::printf("queries %ld (evaluated %ld, skipped %ld), gallery %ld\n", out.num_query,
              out.result.evaluated, out.result.skipped, out.num_gallery);
  std::printf("rank1 %.4f  mAP %.4f\n", out.result.cmc.empty() ? 0.0 : out.result.cmc[0],
              out.result.mean_ap);
  std::printf("report: %s\ncurves: %s\n", out.report_path.c_str(), out.curve_path.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& op) {
  std::vector<GradCheckOutcome> outcomes = run_gradcheck_suite(op);
  int failures = 0;
  for (const GradCheckOutcome& o : outcomes) {
    std::printf("%-20s max rel err %.3e  (tol %.0e)  %s\n", o.name.c_str(), o.max_rel_error,
                o.tolerance, o.passed ? "ok" : "FAIL");
    if (!o.passed) ++failures;
  }
  std::printf("%zu checks, %d failures\n", outcomes.size(), failures);
  return failures == 0 ? 0 : 1;
}

int cmd_oracle_metrics(long trials, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  long mismatches = 0;
  for (long t = 0; t < trials; ++t) {
    metrics::EvalSet set;
    long nq = 1 + static_cast<long>(rng() % 8);
    long ng = 2 + static_cast<long>(rng() % 31);
    long dim = 3;
    auto vec = [&]() {
      std::vector<double> v(static_cast<size_t>(dim));
      for (double& x : v) x = uni(rng);
      return v;
    };
    for (long i = 0; i < nq; ++i) {
      set.query.push_back(vec());
      set.query_ids.push_back(static_cast<long>(rng() % 4));
      set.query_cams.push_back(static_cast<long>(rng() % 2));
    }
    for (long i = 0; i < ng; ++i) {
      set.gallery.push_back(vec());
      set.gallery_ids.push_back(static_cast<long>(rng() % 4));
      set.gallery_cams.push_back(static_cast<long>(rng() % 2));
    }
    set.gallery_ids[0] = set.query_ids[0];
    set.gallery_cams[0] = 1 - set.query_cams[0];
    long max_rank = 1 + static_cast<long>(rng() % 20);

    metrics::EvalResult a = metrics::evaluate(set, max_rank);
    metrics::ReferenceResult b = metrics::brute_force_evaluate(set, max_rank);
    bool same = a.mean_ap == b.mean_ap && a.evaluated == b.evaluated &&
                a.skipped == b.skipped && a.cmc.size() == b.cmc.size();
    if (same) {
      for (size_t k = 0; k < a.cmc.size(); ++k) same = same && a.cmc[k] == b.cmc[k];
    }
    if (!same) {
      ++mismatches;
      std::printf("trial %ld: MISMATCH (mAP %.17g vs %.17g)\n", t, a.mean_ap, b.mean_ap);
    }
  }
  std::printf("%ld trials, %ld mismatches\n", trials, mismatches);
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV object re-identification: synthetic data, training, retrieval evaluation"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_path, ckpt_path, op;
  bool svg = false;
  long max_rank = 20;
  long trials = 200;
  unsigned long long seed = 1;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "synthetic spec file (key = value)");
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "training config file (key = value)");
  tr->add_option("--data", data_path, "dataset manifest CSV")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "dataset manifest CSV")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--config", config_path, "cross-check config against the checkpoint");
  ev->add_flag("--svg", svg, "also write an SVG CMC plot");
  ev->add_option("--max-rank", max_rank, "CMC curve length");

  CLI::App* gc = app.add_subcommand("gradcheck", "run central-difference gradient checks");
  gc->add_option("--op", op, "check a single op by name");

  CLI::App* om = app.add_subcommand("oracle-metrics",
                                    "compare evaluate() with the brute-force oracle");
  om->add_option("--trials", trials, "number of randomized instances");
  om->add_option("--seed", seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(spec_path, out_dir);
    if (tr->parsed()) return cmd_train(config_path, data_path, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, out_dir, config_path, svg, max_rank);
    if (gc->parsed()) return cmd_gradcheck(op);
    if (om->parsed()) return cmd_oracle_metrics(trials, seed);
  } catch (const reid::TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const reid::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
