#include "mat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mat/checkpoint.hpp"
#include "mat/kernels.hpp"
#include "mat/slice.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace mat {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (lambda_spread <= 0.0f) throw std::invalid_argument("lambda must be positive");
  if (lr_transformer <= 0.0f || lr_backbone <= 0.0f)
    throw std::invalid_argument("learning rates must be positive");
  int prev = -1;
  for (int m : milestones) {
    if (m <= prev) throw std::invalid_argument("milestones must be strictly increasing");
    if (m >= epochs) throw std::invalid_argument("milestones must be below epochs");
    prev = m;
  }
}

std::string TrainConfig::to_kv() const {
  std::ostringstream os;
  os << "data_dir=" << data_dir << "\n";
  os << "out_dir=" << out_dir << "\n";
  os << "epochs=" << epochs << "\n";
  os << "milestones=";
  for (size_t i = 0; i < milestones.size(); ++i) os << (i ? "," : "") << milestones[i];
  os << "\n";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", (double)lr_transformer);
  os << "lr_transformer=" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.9g", (double)lr_backbone);
  os << "lr_backbone=" << buf << "\n";
  os << "batch_size=" << batch_size << "\n";
  std::snprintf(buf, sizeof(buf), "%.9g", (double)lambda_spread);
  os << "lambda=" << buf << "\n";
  os << "seed=" << seed << "\n";
  os << "d=" << d << "\n";
  os << "stages=" << stages << "\n";
  os << "slice_mode=" << (slice_mode == SliceMode::kAll ? "all" : "full_only") << "\n";
  os << "use_trace_map=" << (use_trace_map ? 1 : 0) << "\n";
  os << "model_kind=" << (model_kind == ModelKind::kSequence ? "mat" : "mc-cls") << "\n";
  os << "early_stop=" << (early_stop_perfect_val ? 1 : 0) << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_kv(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line missing '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "data_dir") cfg.data_dir = val;
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "milestones") {
      cfg.milestones.clear();
      std::istringstream ms(val);
      std::string tok;
      while (std::getline(ms, tok, ','))
        if (!tok.empty()) cfg.milestones.push_back(std::stoi(tok));
    } else if (key == "lr_transformer") cfg.lr_transformer = std::stof(val);
    else if (key == "lr_backbone") cfg.lr_backbone = std::stof(val);
    else if (key == "batch_size") cfg.batch_size = std::stoi(val);
    else if (key == "lambda") cfg.lambda_spread = std::stof(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "d") cfg.d = std::stoi(val);
    else if (key == "stages") cfg.stages = std::stoi(val);
    else if (key == "slice_mode") {
      if (val == "all") cfg.slice_mode = SliceMode::kAll;
      else if (val == "full_only") cfg.slice_mode = SliceMode::kFullHistoryOnly;
      else throw std::invalid_argument("slice_mode must be all|full_only");
    } else if (key == "use_trace_map") cfg.use_trace_map = val != "0";
    else if (key == "model_kind") {
      if (val == "mat") cfg.model_kind = ModelKind::kSequence;
      else if (val == "mc-cls") cfg.model_kind = ModelKind::kMultiClass;
      else throw std::invalid_argument("model_kind must be mat|mc-cls");
    } else if (key == "early_stop") cfg.early_stop_perfect_val = val != "0";
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  return cfg;
}

std::pair<float, float> lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " out of range");
  float f = 1.0f;
  for (int m : cfg.milestones)
    if (epoch >= m) f *= 0.1f;
  return {cfg.lr_transformer * f, cfg.lr_backbone * f};
}

int split_of(int set_id) {
  const uint64_t h = hash_seed(0x517A11D5ull, (uint64_t)set_id);
  const int b = (int)(h % 10);
  return b < 8 ? 0 : (b == 8 ? 1 : 2);
}

const char* split_name(int split) {
  switch (split) {
    case 0: return "train";
    case 1: return "val";
    case 2: return "test";
    default: throw std::invalid_argument("bad split id");
  }
}

int split_from_name(const std::string& name) {
  for (int s = 0; s < 3; ++s)
    if (name == split_name(s)) return s;
  throw std::invalid_argument("split must be train|val|test, got '" + name + "'");
}

LoadedDataset load_dataset(const std::string& data_dir) {
  LoadedDataset out;
  out.manifest = load_manifest((fs::path(data_dir) / "manifest.jsonl").string());
  out.sets.resize(out.manifest.records.size());
  for (size_t i = 0; i < out.manifest.records.size(); ++i) {
    const auto& rec = out.manifest.records[i];
    out.sets[i].rec = rec;
    for (int k = 0; k < 5; ++k) {
      auto img = load_ppm((fs::path(data_dir) / rec.paths[(size_t)k]).string());
      if (img.h != out.manifest.size || img.w != out.manifest.size)
        throw std::runtime_error("image size mismatch in set " + std::to_string(rec.id));
      out.sets[i].images[(size_t)k] = std::move(img);
    }
    out.by_split[split_of(rec.id)].push_back(i);
  }
  return out;
}

namespace {

std::vector<char> editor_labels(const SetRecord& rec) {
  return std::vector<char>(rec.editors.begin(), rec.editors.end());
}

struct PairRef {
  size_t set_idx;
  int t, n;
};

std::vector<PairRef> make_pairs(const LoadedDataset& data, int split, SliceMode mode, int stages) {
  std::vector<PairRef> pairs;
  for (size_t idx : data.by_split[split]) {
    for (auto [t, n] : enumerate_slice_indices(stages)) {
      if (mode == SliceMode::kFullHistoryOnly && n != t) continue;
      pairs.push_back({idx, t, n});
    }
  }
  return pairs;
}

// mean Ada-ACC of greedy decodes over the split's full-history slices
double val_ada(const Model& model, const LoadedDataset& data, int split) {
  std::vector<PairRef> pairs = make_pairs(data, split, SliceMode::kFullHistoryOnly, model.cfg.stages);
  if (pairs.empty()) return -1.0;
  std::vector<double> scores(pairs.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < (int64_t)pairs.size(); ++i) {
    const auto& pr = pairs[(size_t)i];
    const auto& set = data.sets[pr.set_idx];
    auto pred = model.decode_greedy(set.images[(size_t)(pr.t - pr.n)], set.images[(size_t)pr.t]);
    auto gt = slice_labels(editor_labels(set.rec), pr.t, pr.n);
    scores[(size_t)i] = ada_acc(pred, gt);
  }
  double acc = 0.0;
  for (double s : scores) acc += s;
  return acc / (double)pairs.size();
}

std::vector<TensorPtr> meta_tensors(const TrainConfig& cfg, const ModelConfig& mc, int epoch,
                                    uint64_t rng_state) {
  std::vector<TensorPtr> out;
  auto add_meta = [&](const std::string& name, std::vector<float> vals) {
    const int n = (int)vals.size();
    auto t = tensor({n}, std::move(vals));
    t->name = name;
    out.push_back(t);
  };
  add_meta("meta.model_config",
           {(float)mc.image_size, (float)mc.d, (float)mc.heads, (float)mc.enc_layers,
            (float)mc.dec_layers, (float)mc.ffn_mult, (float)mc.stages, mc.lambda_spread,
            mc.use_trace_map ? 1.0f : 0.0f, mc.use_pos ? 1.0f : 0.0f, (float)mc.mc_classes});
  add_meta("meta.epoch", {(float)epoch});
  float lo, hi;
  const uint32_t rlo = (uint32_t)(rng_state & 0xffffffffull);
  const uint32_t rhi = (uint32_t)(rng_state >> 32);
  std::memcpy(&lo, &rlo, 4);
  std::memcpy(&hi, &rhi, 4);
  add_meta("meta.rng", {lo, hi});
  const std::string kv = cfg.to_kv();
  std::vector<float> bytes(kv.size());
  for (size_t i = 0; i < kv.size(); ++i) bytes[i] = (float)(unsigned char)kv[i];
  add_meta("meta.train_config_text", std::move(bytes));
  return out;
}

}  // namespace

void save_model_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                           int epoch, uint64_t rng_state) {
  std::vector<TensorPtr> tensors = model.params.ordered;
  for (auto& t : meta_tensors(cfg, model.cfg, epoch, rng_state)) tensors.push_back(t);
  write_checkpoint(path, tensors);
}

RestoredModel load_model_checkpoint(const std::string& path) {
  auto tensors = read_checkpoint(path);
  std::map<std::string, TensorPtr> by_name;
  for (auto& t : tensors) by_name[t->name] = t;
  auto need = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor '" + name + "'");
    return it->second;
  };
  auto mc_t = need("meta.model_config");
  if (mc_t->numel() != 11) throw std::runtime_error("unexpected model config length in checkpoint");
  ModelConfig mc;
  mc.image_size = (int)mc_t->value[0];
  mc.d = (int)mc_t->value[1];
  mc.heads = (int)mc_t->value[2];
  mc.enc_layers = (int)mc_t->value[3];
  mc.dec_layers = (int)mc_t->value[4];
  mc.ffn_mult = (int)mc_t->value[5];
  mc.stages = (int)mc_t->value[6];
  mc.lambda_spread = mc_t->value[7];
  mc.use_trace_map = mc_t->value[8] != 0.0f;
  mc.use_pos = mc_t->value[9] != 0.0f;
  mc.mc_classes = (int)mc_t->value[10];

  auto text_t = need("meta.train_config_text");
  std::string kv((size_t)text_t->numel(), '\0');
  for (int64_t i = 0; i < text_t->numel(); ++i) kv[(size_t)i] = (char)(int)text_t->value[(size_t)i];

  RestoredModel rm{Model(mc, 0), TrainConfig::from_kv(kv), (int)need("meta.epoch")->value[0], 0};
  auto rng_t = need("meta.rng");
  uint32_t rlo, rhi;
  std::memcpy(&rlo, &rng_t->value[0], 4);
  std::memcpy(&rhi, &rng_t->value[1], 4);
  rm.rng_state = ((uint64_t)rhi << 32) | rlo;

  for (auto& p : rm.model.params.ordered) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint/config mismatch: missing parameter '" + p->name + "'");
    if (it->second->shape != p->shape)
      throw std::runtime_error("checkpoint/config mismatch: shape of '" + p->name + "'");
    p->value = it->second->value;
  }
  return rm;
}

namespace {

// Batch examples are spread over model replicas, one per worker thread;
// every replica shares the master's values at batch start and its gradients
// are merged back in replica order, so results are deterministic for any
// fixed thread count (and bit-identical re-runs in every mode).
struct ReplicaSet {
  std::vector<Model> models;  // models[0] is the master

  explicit ReplicaSet(const Model& master, int threads) {
    models.push_back(master);
    for (int r = 1; r < threads; ++r) {
      Model copy(master.cfg, 0);
      sync_one(copy);
      models.push_back(std::move(copy));
    }
  }

  void sync_one(Model& m) const {
    for (size_t p = 0; p < m.params.ordered.size(); ++p)
      m.params.ordered[p]->value = models[0].params.ordered[p]->value;
  }

  void merge_grads_and_sync() {
    Model& master = models[0];
    for (size_t r = 1; r < models.size(); ++r) {
      for (size_t p = 0; p < master.params.ordered.size(); ++p) {
        auto& src = models[r].params.ordered[p];
        if (!src->has_grad()) continue;
        auto& dst = master.params.ordered[p];
        dst->ensure_grad();
        kern::vec_axpy(1.0f, src->grad.data(), dst->grad.data(), dst->numel());
        src->zero_grad();
      }
    }
  }

  void broadcast_values() {
    for (size_t r = 1; r < models.size(); ++r) sync_one(models[r]);
  }
};

double replica_pair_pass(Model& model, const LoadedDataset& data, const PairRef& pr, float inv_b) {
  const auto& set = data.sets[pr.set_idx];
  Tape tape;
  PairContext ctx = model.forward_pair(&tape, set.images[(size_t)(pr.t - pr.n)],
                                       set.images[(size_t)pr.t]);
  auto gt = slice_labels(editor_labels(set.rec), pr.t, pr.n);
  auto loss = model.pair_loss(&tape, ctx, gt);
  const double v = loss->value[0];
  tape.backward(scalar_mul(&tape, loss, inv_b));
  return v;
}

// one optimizer step over a batch of slice pairs; returns the mean loss
double sequence_batch_step(ReplicaSet& reps, const LoadedDataset& data,
                           const std::vector<PairRef>& batch, float lr_t, float lr_b) {
  const float inv_b = 1.0f / (float)batch.size();
  const int threads = (int)reps.models.size();
  std::vector<double> losses(batch.size(), 0.0);
  std::string err;
  if (threads == 1) {
    for (size_t i = 0; i < batch.size(); ++i)
      losses[i] = replica_pair_pass(reps.models[0], data, batch[i], inv_b);
  } else {
#pragma omp parallel num_threads(threads)
    {
#ifdef _OPENMP
      const int tid = omp_get_thread_num();
#else
      const int tid = 0;
#endif
      try {
        for (size_t i = (size_t)tid; i < batch.size(); i += (size_t)threads)
          losses[i] = replica_pair_pass(reps.models[(size_t)tid], data, batch[i], inv_b);
      } catch (const std::exception& e) {
#pragma omp critical
        if (err.empty()) err = e.what();
      }
    }
    if (!err.empty()) throw std::runtime_error(err);
    reps.merge_grads_and_sync();
  }
  Model& master = reps.models[0];
  sgd_step(master.backbone_params(), lr_b);
  sgd_step(master.transformer_params(), lr_t);
  if (threads > 1) reps.broadcast_values();
  double loss_acc = 0.0;
  for (double v : losses) loss_acc += v;
  return loss_acc / (double)batch.size();
}

TrainResult train_sequence(const TrainConfig& cfg, const LoadedDataset& data) {
  ModelConfig mc;
  mc.image_size = data.manifest.size;
  mc.d = cfg.d;
  mc.stages = cfg.stages;
  mc.lambda_spread = cfg.lambda_spread;
  mc.use_trace_map = cfg.use_trace_map;
  Model seed_model(mc, hash_seed(cfg.seed, 0x30DE1ull));
  ReplicaSet reps(seed_model, std::max(1, kern::max_threads()));
  Model& model = reps.models[0];

  std::vector<PairRef> pairs = make_pairs(data, 0, cfg.slice_mode, cfg.stages);
  if (pairs.empty()) throw std::runtime_error("train: no training pairs in split");
  Rng rng(hash_seed(cfg.seed, 0x7107ull));

  std::ofstream log((fs::path(cfg.out_dir) / "train_log.csv").string(), std::ios::binary);
  log << "epoch,step,loss,lr_t,lr_b,val_ada_acc\n";
  char buf[160];

  TrainResult result;
  const std::string best_path = (fs::path(cfg.out_dir) / "checkpoint_best.ckpt").string();
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto [lrt, lrb] = lr_at(epoch, cfg);
    rng.shuffle(pairs);
    for (size_t off = 0; off < pairs.size(); off += (size_t)cfg.batch_size) {
      const size_t endi = std::min(pairs.size(), off + (size_t)cfg.batch_size);
      std::vector<PairRef> batch(pairs.begin() + (std::ptrdiff_t)off,
                                 pairs.begin() + (std::ptrdiff_t)endi);
      double loss;
      try {
        loss = sequence_batch_step(reps, data, batch, lrt, lrb);
      } catch (const std::exception& e) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
      result.loss_trace.push_back((float)loss);
      std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,\n", epoch, step, loss, (double)lrt,
                    (double)lrb);
      log << buf;
      ++step;
    }
    const double v = val_ada(model, data, 1);
    std::snprintf(buf, sizeof(buf), "%d,%d,,,,%.9g\n", epoch, step, v);
    log << buf;
    log.flush();
    result.epochs_run = epoch + 1;
    if (v > result.best_val_ada) {
      result.best_val_ada = v;
      result.best_epoch = epoch;
      save_model_checkpoint(best_path, model, cfg, epoch, rng.state());
    }
    if (cfg.early_stop_perfect_val && v >= 1.0) break;  // best-val cannot improve
  }
  if (result.best_epoch < 0) {
    save_model_checkpoint(best_path, model, cfg, cfg.epochs - 1, rng.state());
    result.best_epoch = cfg.epochs - 1;
  }
  save_model_checkpoint((fs::path(cfg.out_dir) / "checkpoint_last.ckpt").string(), model, cfg,
                        result.epochs_run - 1, rng.state());
  result.checkpoint_path = best_path;
  return result;
}

std::vector<int> padded_labels(const SetRecord& rec) {
  std::vector<int> out;
  for (char e : rec.editors) out.push_back(token_for_editor(e));
  return out;
}

double mc_val_ada(const Model& model, const LoadedDataset& data, const ClassTable& table, int split) {
  const auto& idxs = data.by_split[split];
  if (idxs.empty()) return -1.0;
  std::vector<double> scores(idxs.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < (int64_t)idxs.size(); ++i) {
    const auto& set = data.sets[idxs[(size_t)i]];
    auto pooled = model.pooled_pair_features(nullptr, set.images[0], set.images[4]);
    auto pred = mc_cls_eval(nullptr, pooled, model.params.get("mc.head.w"),
                            model.params.get("mc.head.b"), table);
    scores[(size_t)i] = ada_acc_payload(pred, padded_labels(set.rec));
  }
  double acc = 0.0;
  for (double s : scores) acc += s;
  return acc / (double)idxs.size();
}

TrainResult train_multiclass(const TrainConfig& cfg, const LoadedDataset& data) {
  DatasetManifest train_manifest;
  train_manifest.size = data.manifest.size;
  for (size_t idx : data.by_split[0]) train_manifest.records.push_back(data.sets[idx].rec);
  const ClassTable table = ClassTable::from_manifest(train_manifest);

  ModelConfig mc;
  mc.image_size = data.manifest.size;
  mc.d = cfg.d;
  mc.stages = cfg.stages;
  mc.mc_classes = (int)table.sequences.size();
  Model model(mc, hash_seed(cfg.seed, 0x30DE1ull));

  std::vector<size_t> train_sets = data.by_split[0];
  if (train_sets.empty()) throw std::runtime_error("train: empty training split");
  Rng rng(hash_seed(cfg.seed, 0x7107ull));

  std::ofstream log((fs::path(cfg.out_dir) / "train_log.csv").string(), std::ios::binary);
  log << "epoch,step,loss,lr_t,lr_b,val_ada_acc\n";
  char buf[160];

  TrainResult result;
  const std::string best_path = (fs::path(cfg.out_dir) / "checkpoint_best.ckpt").string();
  auto head_params = model.params.with_prefix("enc.");
  {
    auto mch = model.params.with_prefix("mc.");
    head_params.insert(head_params.end(), mch.begin(), mch.end());
  }
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto [lrt, lrb] = lr_at(epoch, cfg);
    rng.shuffle(train_sets);
    for (size_t off = 0; off < train_sets.size(); off += (size_t)cfg.batch_size) {
      const size_t endi = std::min(train_sets.size(), off + (size_t)cfg.batch_size);
      double loss_acc = 0.0;
      const float inv_b = 1.0f / (float)(endi - off);
      for (size_t i = off; i < endi; ++i) {
        const auto& set = data.sets[train_sets[i]];
        const int cls = table.index_of(padded_labels(set.rec));
        Tape tape;
        auto pooled = model.pooled_pair_features(&tape, set.images[0], set.images[4]);
        auto logits = add(&tape, matmul(&tape, reshape(&tape, pooled, {1, 2 * cfg.d}),
                                        model.params.get("mc.head.w")),
                          model.params.get("mc.head.b"));
        auto loss = cross_entropy_logits(&tape, logits, {cls});
        loss_acc += loss->value[0];
        tape.backward(scalar_mul(&tape, loss, inv_b));
      }
      sgd_step(model.backbone_params(), lrb);
      sgd_step(head_params, lrt);
      const double loss = loss_acc / (double)(endi - off);
      result.loss_trace.push_back((float)loss);
      std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,\n", epoch, step, loss, (double)lrt,
                    (double)lrb);
      log << buf;
      ++step;
    }
    const double v = mc_val_ada(model, data, table, 1);
    std::snprintf(buf, sizeof(buf), "%d,%d,,,,%.9g\n", epoch, step, v);
    log << buf;
    log.flush();
    result.epochs_run = epoch + 1;
    if (v > result.best_val_ada) {
      result.best_val_ada = v;
      result.best_epoch = epoch;
      std::vector<TensorPtr> extra = {[&] {
        std::vector<float> seqs;
        for (const auto& s : table.sequences)
          for (int id : s) seqs.push_back((float)id);
        auto t = tensor({(int)table.sequences.size(), cfg.stages}, std::move(seqs));
        t->name = "meta.class_table";
        return t;
      }()};
      std::vector<TensorPtr> tensors = model.params.ordered;
      for (auto& t : meta_tensors(cfg, model.cfg, epoch, rng.state())) tensors.push_back(t);
      tensors.push_back(extra[0]);
      write_checkpoint(best_path, tensors);
    }
    if (cfg.early_stop_perfect_val && v >= 1.0) break;
  }
  result.checkpoint_path = best_path;
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream cf((fs::path(cfg.out_dir) / "train_config.txt").string(), std::ios::binary);
    cf << cfg.to_kv();
  }
  LoadedDataset data = load_dataset(cfg.data_dir);
  if (cfg.model_kind == ModelKind::kMultiClass) return train_multiclass(cfg, data);
  return train_sequence(cfg, data);
}

std::vector<MetricsRow> evaluate(const Model& model, const LoadedDataset& data, int split) {
  std::vector<PairRef> pairs = make_pairs(data, split, SliceMode::kAll, model.cfg.stages);
  std::vector<MetricsRow> rows(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < (int64_t)pairs.size(); ++i) {
    const auto& pr = pairs[(size_t)i];
    const auto& set = data.sets[pr.set_idx];
    auto pred = model.decode_greedy(set.images[(size_t)(pr.t - pr.n)], set.images[(size_t)pr.t]);
    auto gt = slice_labels(editor_labels(set.rec), pr.t, pr.n);
    MetricsRow row;
    row.set_id = set.rec.id;
    row.t = pr.t;
    row.n = pr.n;
    row.pred_payload = std::vector<int>(pred.begin() + 1, pred.end() - 1);
    row.gt_payload = gt;
    row.ada = ada_acc(pred, gt);
    row.strict = strict_match(pred, gt);
    rows[(size_t)i] = std::move(row);
  }
  return rows;
}

MetricsReport evaluate_checkpoint(const std::string& ckpt_path, const std::string& data_dir,
                                  int split, const std::string& out_dir,
                                  const std::string& trace_dump_dir) {
  RestoredModel rm = load_model_checkpoint(ckpt_path);
  LoadedDataset data = load_dataset(data_dir);
  if (data.manifest.size != rm.model.cfg.image_size)
    throw std::runtime_error("dataset image size does not match checkpoint config");
  fs::create_directories(out_dir);

  std::vector<MetricsRow> rows;
  if (rm.model.cfg.mc_classes > 0) {
    auto tensors = read_checkpoint(ckpt_path);
    ClassTable table;
    for (const auto& t : tensors) {
      if (t->name != "meta.class_table") continue;
      for (int r = 0; r < t->shape[0]; ++r) {
        std::vector<int> seq;
        for (int c = 0; c < t->shape[1]; ++c)
          seq.push_back((int)t->value[(size_t)r * t->shape[1] + c]);
        table.sequences.push_back(std::move(seq));
      }
    }
    if (table.sequences.empty()) throw std::runtime_error("checkpoint has no class table");
    const auto& idxs = data.by_split[split];
    rows.resize(idxs.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < (int64_t)idxs.size(); ++i) {
      const auto& set = data.sets[idxs[(size_t)i]];
      auto pooled = rm.model.pooled_pair_features(nullptr, set.images[0], set.images[4]);
      auto pred = mc_cls_eval(nullptr, pooled, rm.model.params.get("mc.head.w"),
                              rm.model.params.get("mc.head.b"), table);
      MetricsRow row;
      row.set_id = set.rec.id;
      row.t = rm.model.cfg.stages;
      row.n = rm.model.cfg.stages;
      row.pred_payload = pred;
      row.gt_payload = padded_labels(set.rec);
      row.ada = ada_acc_payload(pred, row.gt_payload);
      row.strict = strict_match_payload(pred, row.gt_payload);
      rows[(size_t)i] = std::move(row);
    }
  } else {
    rows = evaluate(rm.model, data, split);
  }

  write_report_csv(rows, (fs::path(out_dir) / "report.csv").string());
  MetricsReport report = aggregate(rows);
  write_summary_csv(report, (fs::path(out_dir) / "summary.csv").string());

  if (!trace_dump_dir.empty() && rm.model.cfg.mc_classes == 0) {
    fs::create_directories(trace_dump_dir);
    const int g = rm.model.cfg.grid();
    for (size_t idx : data.by_split[split]) {
      const auto& set = data.sets[idx];
      for (auto [t, n] : enumerate_slice_indices(rm.model.cfg.stages)) {
        auto f_t = rm.model.backbone_forward(nullptr, image_to_tensor(set.images[(size_t)t]));
        auto f_tn = rm.model.backbone_forward(nullptr, image_to_tensor(set.images[(size_t)(t - n)]));
        auto tm = rm.model.compute_trace_map(nullptr, f_t, f_tn);
        char name[64];
        std::snprintf(name, sizeof(name), "trace_set%05d_t%d_n%d.pgm", set.rec.id, t, n);
        save_pgm(tm.m->value, g, g, (fs::path(trace_dump_dir) / name).string());
      }
    }
  }
  return report;
}

}  // namespace mat
