#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "reid/checkpoint.hpp"
#include "reid/train.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig tiny_model_config(long num_ids) {
  ModelConfig mc;
  mc.backbone.image_h = mc.backbone.image_w = 32;
  mc.backbone.embed_dims = {4, 6, 8, 12};
  mc.backbone.depths = {1, 1, 1, 1};
  mc.backbone.num_heads = {1, 2, 2, 4};
  mc.backbone.sr_ratios = {8, 4, 2, 1};
  mc.fused_dim = 16;
  mc.cam_dim = 8;
  mc.gate_reduction = 4;
  mc.num_ids = num_ids;
  return mc;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model = tiny_model_config(0);
  cfg.batch_size = 4;
  cfg.pk_p = 2;
  cfg.pk_k = 2;
  cfg.lr = 1e-3;
  cfg.epochs = 2;
  cfg.seed = 5;
  return cfg;
}

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.num_ids = 3;
  spec.cams = 2;
  spec.images_per_id_per_cam = 3;
  spec.image_size = 32;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_CASE("train config parses flat key-value text") {
  std::string text =
      "image_size = 64\n"
      "embed_dims = 8,12,16,24\n"
      "heads = 1,2,2,4\n"
      "# a comment\n"
      "batch_size = 8\n"
      "pk_p = 4\n"
      "pk_k = 2\n"
      "lr = 0.001\n"
      "alpha2 = 0.25\n"
      "epochs = 3\n"
      "seed = 99\n"
      "camid_grouping = camera\n";
  KeyValueConfig kv = KeyValueConfig::parse_string(text);
  TrainConfig cfg = TrainConfig::from_kv(kv);
  kv.check_fully_consumed();
  CHECK(cfg.model.backbone.image_h == 64);
  CHECK(cfg.model.backbone.embed_dims[3] == 24);
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.weights.alpha2 == doctest::Approx(0.25));
  CHECK(cfg.seed == 99);
  CHECK(cfg.loss_options.camid_group_by_camera);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("unknown config keys fail loudly") {
  KeyValueConfig kv = KeyValueConfig::parse_string("lr = 0.001\nlearning_rate = 2\n");
  TrainConfig::from_kv(kv);
  CHECK_THROWS_AS(kv.check_fully_consumed(), ConfigError);
}

TEST_CASE("train config invariants") {
  TrainConfig cfg = tiny_train_config();
  cfg.pk_p = 3;  // 3*2 != 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train_config();
  cfg.pk_k = 1;
  cfg.pk_p = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train_config();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("REID_SEED overrides the configured seed") {
  setenv("REID_SEED", "1234", 1);
  TrainConfig cfg = tiny_train_config();
  cfg.apply_env_seed();
  CHECK(cfg.seed == 1234);
  setenv("REID_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(cfg.apply_env_seed(), ConfigError);
  unsetenv("REID_SEED");
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
  CHECK(cosine_lr(3e-4, 3e-6, 0, 200) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(cosine_lr(3e-4, 3e-6, 200, 200) == doctest::Approx(3e-6).epsilon(1e-15));
  double prev = cosine_lr(1.0, 0.01, 0, 50);
  for (long e = 1; e <= 50; ++e) {
    double lr = cosine_lr(1.0, 0.01, e, 50);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
}

TEST_CASE("optimizer with zero learning rate leaves parameters unchanged") {
  ParamStore store;
  std::mt19937_64 rng(3);
  Tensor w = store.add_param("w", Tensor::randn({4}, rng), true);
  std::vector<Real> before = w.data_vec();
  AdamW opt(store);
  backward(sum_all(mul(w, w)));
  opt.step(0.0);
  for (size_t i = 0; i < before.size(); ++i) CHECK(w.data_vec()[i] == before[i]);
  opt.step(0.1);
  bool moved = false;
  for (size_t i = 0; i < before.size(); ++i) moved = moved || w.data_vec()[i] != before[i];
  CHECK(moved);
}

TEST_CASE("rho parameters are projected back into [0,1] after a step") {
  ParamStore store;
  Tensor rho = store.add_param("rho", Tensor::full({3}, 0.99), false, /*clamp01=*/true);
  AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);
  // push rho upward: gradient of -sum(rho) is -1
  backward(sum_all(mul_scalar(rho, -1.0)));
  opt.step(0.5);
  for (long i = 0; i < 3; ++i) {
    CHECK(rho.data()[i] <= 1.0);
    CHECK(rho.data()[i] >= 0.0);
  }
}

TEST_CASE("one small step does not increase the loss on average") {
  double total_delta = 0.0;
  for (unsigned seed = 0; seed < 10; ++seed) {
    ModelConfig mc = tiny_model_config(2);
    Model model(mc, seed);
    std::mt19937_64 rng(seed + 100);
    Tensor images = Tensor::uniform({4, 32, 32, 3}, rng, -1.0, 1.0);
    std::vector<long> labels{0, 0, 1, 1};
    std::vector<long> cams{0, 1, 0, 1};
    LossWeights w;
    LossOptions opts;

    ModelOutputs out0 = model.forward(images, Mode::kTrain);
    TotalLoss l0 = compute_losses(model, out0, labels, cams, w, opts, 0);
    AdamW opt(model.store());
    opt.zero_grad();
    backward(l0.total);
    opt.step(1e-4);

    ModelOutputs out1 = model.forward(images, Mode::kTrain);
    TotalLoss l1 = compute_losses(model, out1, labels, cams, w, opts, 1);
    total_delta += l1.report.total - l0.report.total;
  }
  CHECK(total_delta / 10.0 <= 0.0);
}

TEST_CASE("training is deterministic and logs the loss schema") {
  TempDir data_dir("reid_train_data");
  TempDir out_a("reid_train_a");
  TempDir out_b("reid_train_b");
  generate_synthetic(tiny_spec(), data_dir.path.string());
  DatasetManifest manifest = DatasetManifest::load((data_dir.path / "manifest.csv").string());

  TrainConfig cfg = tiny_train_config();
  TrainResult ra = train(cfg, manifest, out_a.path.string());
  TrainResult rb = train(cfg, manifest, out_b.path.string());

  std::string log_a = read_file(ra.log_path);
  CHECK(log_a.substr(0, 64).find("step,total,softmax,triplet,camid,center") == 0);
  CHECK(log_a == read_file(rb.log_path));
  CHECK(read_file(ra.final_checkpoint) == read_file(rb.final_checkpoint));
  CHECK(ra.steps == rb.steps);
  CHECK(ra.steps >= 2 * cfg.epochs);  // at least min_batches per epoch
  CHECK(fs::exists(out_a.path / "checkpoint_last.bin"));
}

TEST_CASE("checkpoint round-trip reproduces the evaluation report") {
  TempDir data_dir("reid_ckpt_data");
  TempDir out_dir("reid_ckpt_out");
  generate_synthetic(tiny_spec(), data_dir.path.string());
  DatasetManifest manifest = DatasetManifest::load((data_dir.path / "manifest.csv").string());

  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  TrainResult res = train(cfg, manifest, out_dir.path.string());

  Model loaded = load_checkpoint(res.final_checkpoint);
  EvalOptions opts;
  EvalOutput a = evaluate_model(loaded, manifest, (out_dir.path / "eval_a").string(), opts);
  Model loaded2 = load_checkpoint(res.final_checkpoint);
  EvalOutput b = evaluate_model(loaded2, manifest, (out_dir.path / "eval_b").string(), opts);
  CHECK(read_file(a.report_path) == read_file(b.report_path));
  CHECK(read_file(a.curve_path) == read_file(b.curve_path));
  CHECK(a.result.mean_ap == b.result.mean_ap);

  // shape mismatch between checkpoint and a differently sized model
  ModelConfig other = tiny_model_config(5);
  other.fused_dim = 24;
  Model wrong(other, 1);
  CHECK_THROWS_AS(load_checkpoint_into(res.final_checkpoint, wrong), ConfigError);
}

TEST_CASE("evaluating a checkpoint twice writes identical reports") {
  TempDir data_dir("reid_eval_data");
  TempDir out_dir("reid_eval_out");
  generate_synthetic(tiny_spec(), data_dir.path.string());
  DatasetManifest manifest = DatasetManifest::load((data_dir.path / "manifest.csv").string());
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  TrainResult res = train(cfg, manifest, out_dir.path.string());

  EvalOutput a = evaluate_checkpoint(res.final_checkpoint, manifest,
                                     (out_dir.path / "ea").string());
  EvalOutput b = evaluate_checkpoint(res.final_checkpoint, manifest,
                                     (out_dir.path / "eb").string());
  CHECK(read_file(a.report_path) == read_file(b.report_path));
}
