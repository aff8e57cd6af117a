#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "mat/checkpoint.hpp"
#include "mat/train.hpp"

using namespace mat;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// small dataset shared by the training tests (generated once)
const std::string& shared_dataset() {
  static std::string dir = [] {
    auto p = fresh_dir("mat_train_ds");
    GenConfig g;
    g.out_dir = p.string();
    g.sets = 24;
    g.size = 32;
    g.seed = 7;
    gen_dataset(g);
    return p.string();
  }();
  return dir;
}

TrainConfig tiny_train_cfg(const std::string& out) {
  TrainConfig cfg;
  cfg.data_dir = shared_dataset();
  cfg.out_dir = out;
  cfg.epochs = 2;
  cfg.milestones = {1};
  cfg.batch_size = 8;
  cfg.d = 16;
  cfg.seed = 3;
  cfg.early_stop_perfect_val = false;
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule drops by 10x at each milestone") {
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.milestones = {70, 120};
  cfg.lr_transformer = 1e-3f;
  cfg.lr_backbone = 1e-4f;
  auto [t0, b0] = lr_at(0, cfg);
  CHECK(t0 == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(b0 == doctest::Approx(1e-4).epsilon(1e-6));
  auto [t70, b70] = lr_at(70, cfg);
  CHECK(t70 == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(b70 == doctest::Approx(1e-5).epsilon(1e-6));
  auto [t120, b120] = lr_at(120, cfg);
  CHECK(t120 == doctest::Approx(1e-5).epsilon(1e-6));
  CHECK(b120 == doctest::Approx(1e-6).epsilon(1e-6));
  auto [t69, b69] = lr_at(69, cfg);
  CHECK(t69 == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(b69 == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(150, cfg), std::invalid_argument);
}

TEST_CASE("train config validation and kv round trip") {
  TrainConfig cfg;
  cfg.milestones = {5, 3};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.milestones = {3, 5};
  cfg.epochs = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.epochs = 10;
  CHECK_NOTHROW(cfg.validate());

  cfg.data_dir = "somewhere";
  cfg.slice_mode = SliceMode::kFullHistoryOnly;
  cfg.model_kind = ModelKind::kMultiClass;
  cfg.use_trace_map = false;
  cfg.seed = 123456789;
  auto back = TrainConfig::from_kv(cfg.to_kv());
  CHECK(back.to_kv() == cfg.to_kv());
  CHECK_THROWS_AS(TrainConfig::from_kv("bogus_key=1\n"), std::invalid_argument);
}

TEST_CASE("split assignment is disjoint with roughly 80/10/10 mass") {
  int counts[3] = {};
  for (int id = 0; id < 20000; ++id) {
    const int s = split_of(id);
    REQUIRE(s >= 0);
    REQUIRE(s <= 2);
    counts[s]++;
    CHECK(split_of(id) == s);  // stable
  }
  CHECK(counts[0] / 20000.0 == doctest::Approx(0.8).epsilon(0.05));
  CHECK(counts[1] / 20000.0 == doctest::Approx(0.1).epsilon(0.25));
  CHECK(counts[2] / 20000.0 == doctest::Approx(0.1).epsilon(0.25));
  CHECK(split_from_name("val") == 1);
  CHECK_THROWS_AS(split_from_name("dev"), std::invalid_argument);
}

TEST_CASE("checkpoint files round-trip bit-exactly and reject mismatched configs") {
  ModelConfig mc;
  mc.image_size = 16;
  mc.d = 16;
  Model model(mc, 5);
  TrainConfig cfg;
  cfg.d = 16;
  auto dir = fresh_dir("mat_ckpt");
  const std::string path = (dir / "m.ckpt").string();
  save_model_checkpoint(path, model, cfg, 3, 0xDEADBEEFCAFEull);

  auto rm = load_model_checkpoint(path);
  CHECK(rm.epoch == 3);
  CHECK(rm.rng_state == 0xDEADBEEFCAFEull);
  CHECK(rm.model.cfg.d == 16);
  REQUIRE(rm.model.params.ordered.size() == model.params.ordered.size());
  for (size_t i = 0; i < model.params.ordered.size(); ++i) {
    CHECK(rm.model.params.ordered[i]->name == model.params.ordered[i]->name);
    CHECK(rm.model.params.ordered[i]->value == model.params.ordered[i]->value);
  }

  // byte-identical re-save
  const std::string path2 = (dir / "m2.ckpt").string();
  save_model_checkpoint(path2, rm.model, rm.cfg, rm.epoch, rm.rng_state);
  CHECK(read_file(path) == read_file(path2));

  // a truncated file is rejected
  auto bytes = read_file(path);
  std::ofstream trunc((dir / "bad.ckpt").string(), std::ios::binary);
  trunc.write(bytes.data(), (std::streamsize)bytes.size() - 5);
  trunc.close();
  CHECK_THROWS(load_model_checkpoint((dir / "bad.ckpt").string()));
  fs::remove_all(dir);
}

TEST_CASE("nan values survive the checkpoint as exact bit patterns") {
  auto t = tensor({3}, {1.0f, 2.0f, 3.0f});
  t->name = "x";
  t->value[1] = std::numeric_limits<float>::quiet_NaN();
  auto dir = fresh_dir("mat_ckpt_bits");
  write_checkpoint((dir / "b.ckpt").string(), {t});
  auto back = read_checkpoint((dir / "b.ckpt").string());
  REQUIRE(back.size() == 1);
  uint32_t a, b;
  std::memcpy(&a, &t->value[1], 4);
  std::memcpy(&b, &back[0]->value[1], 4);
  CHECK(a == b);
  fs::remove_all(dir);
}

TEST_CASE("overfit smoke: eight slice pairs reach zero-ish loss and perfect tokens") {
  ModelConfig mc;
  mc.image_size = 16;
  mc.d = 16;
  Model model(mc, 77);
  struct P {
    Image ref, tgt;
    std::vector<int> labels;
  };
  // eight fixed pairs with sliced labels; a capacity check, so the images
  // are distinct random textures
  std::vector<P> pairs;
  Rng rng(5);
  for (int i = 0; i < 8; ++i) {
    Image a(16, 16), b(16, 16);
    Rng r1(hash_seed(9, (uint64_t)i)), r2(hash_seed(19, (uint64_t)i));
    for (auto& v : a.px) v = r1.uniform_f(0.0f, 1.0f);
    for (auto& v : b.px) v = r2.uniform_f(0.0f, 1.0f);
    std::vector<char> editors;
    for (int k = 0; k < 4; ++k) editors.push_back(kEditorIds[rng.randint(3)]);
    const int t = 1 + (int)rng.randint(4);
    const int n = 1 + (int)rng.randint(t);
    pairs.push_back({a, b, slice_labels(editors, t, n)});
  }
  double final_loss = 1e9;
  for (int step = 0; step < 200; ++step) {
    double acc = 0.0;
    for (auto& p : pairs) {
      Tape tape;
      auto ctx = model.forward_pair(&tape, p.ref, p.tgt);
      auto loss = model.pair_loss(&tape, ctx, p.labels);
      acc += loss->value[0];
      tape.backward(scalar_mul(&tape, loss, 1.0f / 8.0f));
    }
    sgd_step(model.backbone_params(), 5e-3f);
    sgd_step(model.transformer_params(), 5e-2f);
    final_loss = acc / 8.0;
    if (final_loss < 0.01) break;
  }
  CHECK(final_loss < 0.05);
  double ada = 0.0;
  for (auto& p : pairs) ada += ada_acc(model.decode_greedy(p.ref, p.tgt), p.labels);
  CHECK(ada / 8.0 == doctest::Approx(1.0));
}

TEST_CASE("loss strictly decreases over the first 10 steps for 9 of 10 seeds") {
  int good = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig mc;
    mc.image_size = 16;
    mc.d = 16;
    Model model(mc, hash_seed(500, seed));
    std::vector<std::pair<Image, Image>> batch;
    Rng rng(hash_seed(501, seed));
    for (int i = 0; i < 4; ++i) {
      Image a(16, 16), b(16, 16);
      for (auto& v : a.px) v = rng.uniform_f(0.0f, 1.0f);
      for (auto& v : b.px) v = rng.uniform_f(0.0f, 1.0f);
      batch.emplace_back(a, b);
    }
    const std::vector<int> labels = {kTokS, kTokD, kTokF, kTokNM};
    bool strictly = true;
    double prev = 1e30;
    for (int step = 0; step < 10; ++step) {
      double acc = 0.0;
      for (auto& [ref, tgt] : batch) {
        Tape tape;
        auto ctx = model.forward_pair(&tape, ref, tgt);
        auto loss = model.pair_loss(&tape, ctx, labels);
        acc += loss->value[0];
        tape.backward(scalar_mul(&tape, loss, 0.25f));
      }
      sgd_step(model.backbone_params(), 1e-4f);
      sgd_step(model.transformer_params(), 1e-3f);
      acc /= 4.0;
      if (acc >= prev) { strictly = false; break; }
      prev = acc;
    }
    if (strictly) ++good;
  }
  CHECK(good >= 9);
}

TEST_CASE("training end-to-end is deterministic and checkpoints reproduce metrics") {
  auto out1 = fresh_dir("mat_train_run1");
  auto out2 = fresh_dir("mat_train_run2");
  auto r1 = train(tiny_train_cfg(out1.string()));
  auto r2 = train(tiny_train_cfg(out2.string()));
  CHECK(r1.loss_trace == r2.loss_trace);
  CHECK(read_file((out1 / "train_log.csv").string()) == read_file((out2 / "train_log.csv").string()));
  // checkpoints agree tensor-for-tensor; only the recorded out_dir differs
  {
    auto t1 = read_checkpoint(r1.checkpoint_path);
    auto t2 = read_checkpoint(r2.checkpoint_path);
    REQUIRE(t1.size() == t2.size());
    for (size_t i = 0; i < t1.size(); ++i) {
      if (t1[i]->name == "meta.train_config_text") continue;
      CHECK(t1[i]->name == t2[i]->name);
      CHECK(t1[i]->value == t2[i]->value);
    }
  }

  // evaluation rows are identical when re-run from the saved checkpoint
  auto ev1 = fresh_dir("mat_eval_run1");
  auto ev2 = fresh_dir("mat_eval_run2");
  auto rep1 = evaluate_checkpoint(r1.checkpoint_path, shared_dataset(), 0, ev1.string());
  auto rep2 = evaluate_checkpoint(r2.checkpoint_path, shared_dataset(), 0, ev2.string());
  CHECK(rep1.mean_ada == rep2.mean_ada);
  CHECK(read_file((ev1 / "report.csv").string()) == read_file((ev2 / "report.csv").string()));

  // report has one row per slice pair in the split
  LoadedDataset data = load_dataset(shared_dataset());
  const size_t train_sets = data.by_split[0].size();
  std::string report = read_file((ev1 / "report.csv").string());
  const size_t rows = (size_t)std::count(report.begin(), report.end(), '\n') - 1;
  CHECK(rows == train_sets * 10);

  // evaluation does not mutate parameters: second evaluation bit-identical
  auto rep3 = evaluate_checkpoint(r1.checkpoint_path, shared_dataset(), 0, ev1.string());
  CHECK(rep3.mean_ada == rep1.mean_ada);

  fs::remove_all(out1);
  fs::remove_all(out2);
  fs::remove_all(ev1);
  fs::remove_all(ev2);
}

TEST_CASE("multi-class baseline trains and evaluates") {
  auto out = fresh_dir("mat_train_mc");
  auto cfg = tiny_train_cfg(out.string());
  cfg.model_kind = ModelKind::kMultiClass;
  cfg.epochs = 1;
  cfg.milestones = {};
  auto r = train(cfg);
  CHECK(fs::exists(r.checkpoint_path));
  auto evdir = fresh_dir("mat_eval_mc");
  auto rep = evaluate_checkpoint(r.checkpoint_path, shared_dataset(), 0, evdir.string());
  CHECK(rep.count == (int64_t)load_dataset(shared_dataset()).by_split[0].size());
  CHECK(rep.mean_ada >= 0.0);
  fs::remove_all(out);
  fs::remove_all(evdir);
}
