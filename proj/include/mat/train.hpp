#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mat/metrics.hpp"
#include "mat/model.hpp"
#include "mat/synth.hpp"

namespace mat {

enum class SliceMode { kAll, kFullHistoryOnly };
enum class ModelKind { kSequence, kMultiClass };

struct TrainConfig {
  std::string data_dir;   // directory holding manifest.jsonl
  std::string out_dir;
  int epochs = 30;
  std::vector<int> milestones = {14, 24};  // x0.1 at each passed milestone
  float lr_transformer = 1e-3f;
  float lr_backbone = 1e-4f;
  int batch_size = 32;
  float lambda_spread = 4.0f;
  uint64_t seed = 1;
  int d = 64;
  int stages = 4;
  SliceMode slice_mode = SliceMode::kAll;
  bool use_trace_map = true;
  ModelKind model_kind = ModelKind::kSequence;
  bool early_stop_perfect_val = true;  // stopping at val Ada-ACC == 1 cannot
                                       // change the best-val checkpoint
  void validate() const;
  std::string to_kv() const;                       // flat key=value text
  static TrainConfig from_kv(const std::string&);  // inverse of to_kv
};

// epoch -> (transformer LR, backbone LR); throws if epoch out of range
std::pair<float, float> lr_at(int epoch, const TrainConfig& cfg);

// 80/10/10 split by set-id hash: 0 = train, 1 = val, 2 = test
int split_of(int set_id);
const char* split_name(int split);
int split_from_name(const std::string& name);

// Dataset held as quantized pixels; images decode to [0,1] floats on use.
struct LoadedSet {
  SetRecord rec;
  std::array<Image, 5> images;
};
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<LoadedSet> sets;     // all sets, manifest order
  std::vector<size_t> by_split[3];
};
LoadedDataset load_dataset(const std::string& data_dir);

struct TrainResult {
  double best_val_ada = -1.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::string checkpoint_path;
  std::vector<float> loss_trace;  // one mean loss per optimizer step
};

TrainResult train(const TrainConfig& cfg);

std::vector<MetricsRow> evaluate(const Model& model, const LoadedDataset& data, int split);
// loads the checkpoint, restores the model+config, evaluates, writes
// report.csv/summary.csv into out_dir, optionally dumps trace maps as PGMs
MetricsReport evaluate_checkpoint(const std::string& ckpt_path, const std::string& data_dir,
                                  int split, const std::string& out_dir,
                                  const std::string& trace_dump_dir = "");

// checkpoint <-> model plumbing (meta tensors carry config/epoch/rng state)
void save_model_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                           int epoch, uint64_t rng_state);
struct RestoredModel {
  Model model;
  TrainConfig cfg;
  int epoch = 0;
  uint64_t rng_state = 0;
};
RestoredModel load_model_checkpoint(const std::string& path);

}  // namespace mat
