#include "mat/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "mat/fft.hpp"
#include "mat/kernels.hpp"
#include "mat/slice.hpp"
#include "mat/synth.hpp"
#include "mat/train.hpp"

namespace fs = std::filesystem;

namespace mat {

namespace {

void apply_thread_env() {
  if (const char* env = std::getenv("MAT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) kern::set_max_threads(n);
  }
}

void log_resolved_config(const std::string& out_dir, const std::string& text) {
  std::ofstream f((fs::path(out_dir) / "run_config.txt").string(), std::ios::binary);
  f << text;
}

int cmd_gen(const GenConfig& cfg, std::ostream& out) {
  DatasetManifest m = gen_dataset(cfg);
  std::ostringstream rc;
  rc << "verb=gen\nout=" << cfg.out_dir << "\nsets=" << cfg.sets << "\nsize=" << cfg.size
     << "\nseed=" << cfg.seed << "\nquality_threshold=" << cfg.quality_threshold << "\n";
  log_resolved_config(cfg.out_dir, rc.str());
  out << "wrote " << m.records.size() << " sets (" << m.records.size() * 5 << " images) to "
      << cfg.out_dir << "\n";
  return 0;
}

int cmd_slice(const std::string& manifest_path, int set_id, int t, int n, std::ostream& out) {
  DatasetManifest m = load_manifest(manifest_path);
  const SetRecord* rec = nullptr;
  for (const auto& r : m.records)
    if (r.id == set_id) { rec = &r; break; }
  if (!rec) throw std::invalid_argument("set id " + std::to_string(set_id) + " not in manifest");
  std::vector<char> editors(rec->editors.begin(), rec->editors.end());
  auto labels = slice_labels(editors, t, n);
  std::vector<int> framed = {kTokSOS};
  for (int id : labels) framed.push_back(id);
  framed.push_back(kTokEOS);
  out << "set " << set_id << " editors:";
  for (char e : rec->editors) out << " " << e;
  out << "\nslice t=" << t << " n=" << n << " labels: " << tokens_str(labels) << "\n";
  out << "token ids:";
  for (int id : framed) out << " " << id;
  out << "  (" << tokens_str(framed) << ")\n";
  return 0;
}

int cmd_spectrum(const std::string& in_path, const std::string& out_path, std::ostream& out) {
  Image img = load_ppm(in_path);
  auto spec = spectrum(img);
  float mx = 0.0f;
  for (float v : spec) mx = std::max(mx, v);
  save_pgm(spec, img.h, img.w, out_path, 0.0f, mx > 0 ? mx : 1.0f);
  out << "wrote spectrum of " << in_path << " to " << out_path << "\n";
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  apply_thread_env();
  CLI::App app{"modelship attribution toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a labeled multi-stage editing dataset");
  GenConfig gcfg;
  gen->add_option("--out", gcfg.out_dir, "output directory")->required();
  gen->add_option("--sets", gcfg.sets, "number of image sets");
  gen->add_option("--size", gcfg.size, "image side length (32|64|128)");
  gen->add_option("--seed", gcfg.seed, "global seed");
  gen->add_option("--quality-threshold", gcfg.quality_threshold, "drop sets scoring below this");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  TrainConfig tcfg;
  std::string config_file;
  std::string slice_mode = "all", model_kind = "mat", milestones_s;
  bool no_trace = false, no_early_stop = false;
  tr->add_option("--config", config_file, "key=value config file (flags override)");
  tr->add_option("--data", tcfg.data_dir, "dataset directory (holds manifest.jsonl)");
  tr->add_option("--out", tcfg.out_dir, "output directory");
  tr->add_option("--epochs", tcfg.epochs, "training epochs");
  tr->add_option("--milestones", milestones_s, "comma-separated LR drop epochs");
  tr->add_option("--lr-transformer", tcfg.lr_transformer, "transformer-side learning rate");
  tr->add_option("--lr-backbone", tcfg.lr_backbone, "backbone-side learning rate");
  tr->add_option("--batch", tcfg.batch_size, "batch size");
  tr->add_option("--lambda", tcfg.lambda_spread, "trace-map Gaussian spread");
  tr->add_option("--seed", tcfg.seed, "training seed");
  tr->add_option("--d", tcfg.d, "model width");
  tr->add_option("--slice-mode", slice_mode, "all|full_only");
  tr->add_option("--model", model_kind, "mat|mc-cls");
  tr->add_flag("--no-trace-map", no_trace, "disable the spatial trace map bias");
  tr->add_flag("--no-early-stop", no_early_stop, "always run every epoch");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write CSV reports");
  std::string ev_data, ev_ckpt, ev_out, ev_split = "test", ev_dump;
  uint64_t ev_seed = 1;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--dump-trace-maps", ev_dump, "directory for trace-map PGMs");
  ev->add_option("--seed", ev_seed, "unused; accepted for uniformity");

  // slice
  auto* sl = app.add_subcommand("slice", "print the sliced label sequence of one set");
  std::string sl_manifest;
  int sl_set = 0, sl_t = 4, sl_n = 1;
  uint64_t sl_seed = 1;
  sl->add_option("--manifest", sl_manifest, "manifest.jsonl path")->required();
  sl->add_option("--set", sl_set, "set id")->required();
  sl->add_option("--t", sl_t, "target stage")->required();
  sl->add_option("--n", sl_n, "slice depth")->required();
  sl->add_option("--seed", sl_seed, "unused; accepted for uniformity");

  // spectrum
  auto* sp = app.add_subcommand("spectrum", "write the centered log-magnitude spectrum as PGM");
  std::string sp_in, sp_out;
  uint64_t sp_seed = 1;
  sp->add_option("--in", sp_in, "input PPM image")->required();
  sp->add_option("--out", sp_out, "output PGM path")->required();
  sp->add_option("--seed", sp_seed, "unused; accepted for uniformity");

  std::vector<const char*> argv;
  argv.push_back("mat");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse((int)argv.size(), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen(gcfg, out);
    if (*tr) {
      // resolve: explicit command-line values win, then config-file values,
      // then built-in defaults
      if (tr->count("--slice-mode")) {
        if (slice_mode == "all") tcfg.slice_mode = SliceMode::kAll;
        else if (slice_mode == "full_only") tcfg.slice_mode = SliceMode::kFullHistoryOnly;
        else throw std::invalid_argument("--slice-mode must be all|full_only");
      }
      if (tr->count("--model")) {
        if (model_kind == "mat") tcfg.model_kind = ModelKind::kSequence;
        else if (model_kind == "mc-cls") tcfg.model_kind = ModelKind::kMultiClass;
        else throw std::invalid_argument("--model must be mat|mc-cls");
      }
      if (tr->count("--milestones")) {  // an empty value clears the schedule
        tcfg.milestones.clear();
        std::stringstream ms(milestones_s);
        std::string tok;
        while (std::getline(ms, tok, ','))
          if (!tok.empty()) tcfg.milestones.push_back(std::stoi(tok));
      }
      if (!config_file.empty()) {
        std::ifstream f(config_file);
        if (!f) throw std::invalid_argument("cannot open config file: " + config_file);
        std::stringstream ss;
        ss << f.rdbuf();
        const TrainConfig file_cfg = TrainConfig::from_kv(ss.str());
        if (!tr->count("--data") && !file_cfg.data_dir.empty()) tcfg.data_dir = file_cfg.data_dir;
        if (!tr->count("--out") && !file_cfg.out_dir.empty()) tcfg.out_dir = file_cfg.out_dir;
        if (!tr->count("--epochs")) tcfg.epochs = file_cfg.epochs;
        if (!tr->count("--milestones")) tcfg.milestones = file_cfg.milestones;
        if (!tr->count("--lr-transformer")) tcfg.lr_transformer = file_cfg.lr_transformer;
        if (!tr->count("--lr-backbone")) tcfg.lr_backbone = file_cfg.lr_backbone;
        if (!tr->count("--batch")) tcfg.batch_size = file_cfg.batch_size;
        if (!tr->count("--lambda")) tcfg.lambda_spread = file_cfg.lambda_spread;
        if (!tr->count("--seed")) tcfg.seed = file_cfg.seed;
        if (!tr->count("--d")) tcfg.d = file_cfg.d;
        if (!tr->count("--slice-mode")) tcfg.slice_mode = file_cfg.slice_mode;
        if (!tr->count("--model")) tcfg.model_kind = file_cfg.model_kind;
        if (!no_trace) tcfg.use_trace_map = file_cfg.use_trace_map;
        if (!no_early_stop) tcfg.early_stop_perfect_val = file_cfg.early_stop_perfect_val;
      }
      if (no_trace) tcfg.use_trace_map = false;
      if (no_early_stop) tcfg.early_stop_perfect_val = false;
      if (tcfg.data_dir.empty() || tcfg.out_dir.empty())
        throw std::invalid_argument("train requires --data and --out");
      TrainResult r = train(tcfg);
      log_resolved_config(tcfg.out_dir, tcfg.to_kv());
      char buf[160];
      std::snprintf(buf, sizeof(buf), "best val Ada-ACC %.9g at epoch %d (%d epochs run)\n",
                    r.best_val_ada, r.best_epoch, r.epochs_run);
      out << buf << "checkpoint: " << r.checkpoint_path << "\n";
      return 0;
    }
    if (*ev) {
      MetricsReport rep = evaluate_checkpoint(ev_ckpt, ev_data, split_from_name(ev_split), ev_out,
                                              ev_dump);
      std::ostringstream rc;
      rc << "verb=eval\ndata=" << ev_data << "\nckpt=" << ev_ckpt << "\nsplit=" << ev_split << "\n";
      log_resolved_config(ev_out, rc.str());
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: %lld rows, Ada-ACC %.9g, Strict-Match %.9g\n",
                    ev_split.c_str(), (long long)rep.count, rep.mean_ada, rep.mean_strict);
      out << buf;
      return 0;
    }
    if (*sl) return cmd_slice(sl_manifest, sl_set, sl_t, sl_n, out);
    if (*sp) return cmd_spectrum(sp_in, sp_out, out);
    err << app.help();
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mat
