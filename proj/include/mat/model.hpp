#pragma once

#include <map>
#include <string>
#include <vector>

#include "mat/autograd.hpp"
#include "mat/image.hpp"
#include "mat/rng.hpp"
#include "mat/slice.hpp"

namespace mat {

struct ModelConfig {
  int image_size = 64;
  int d = 64;          // channel/embedding width
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn_mult = 2;    // feed-forward hidden = ffn_mult * d
  int stages = 4;      // T
  float lambda_spread = 4.0f;  // Gaussian spread of the trace map
  bool use_trace_map = true;
  bool use_pos = true;  // test hook: zero the spatial positional embedding
  int mc_classes = 0;   // >0 builds the flat multi-class variant instead:
                        // backbone + encoder + pooled classification head

  int grid() const { return image_size / 4; }
  int seq_len() const { return grid() * grid(); }
  int tokens() const { return stages + 2; }
  int head_dim() const { return d / heads; }
  void validate() const;
};

// Named parameter collection; creation order is the checkpoint order.
struct Params {
  std::vector<TensorPtr> ordered;
  std::map<std::string, TensorPtr> by_name;

  TensorPtr get(const std::string& name) const;
  std::vector<TensorPtr> with_prefix(const std::string& prefix) const;
  std::vector<TensorPtr> without_prefix(const std::string& prefix) const;
};

// Optional probe filled during forward passes: every attention softmax
// output, in execution order.
struct AttentionDiag {
  std::vector<TensorPtr> attention;
};

// Everything computed once per (reference, target) pair before decoding.
struct PairContext {
  TensorPtr f_t_ori, f_tn_ori;  // backbone maps (d, g, g)
  TensorPtr f_t_enc, f_tn_enc;  // encoder outputs (N, d)
  TensorPtr f_cross;            // cross-attended features (N, d)
  TensorPtr trace;              // spatial trace map, flattened (N); null when disabled
};

struct TraceMapOut {
  TensorPtr delta_norm;  // (N), in [0,1]
  TensorPtr center_h, center_w, scale_h, scale_w;  // scalars
  TensorPtr m;           // (N) trace map
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  TensorPtr backbone_forward(Tape* tp, const TensorPtr& image) const;  // (d, g, g)
  TensorPtr encoder_forward(Tape* tp, const TensorPtr& fmap, AttentionDiag* diag = nullptr) const;  // (N, d)
  TensorPtr cross_attend(Tape* tp, const TensorPtr& f_t_enc, const TensorPtr& f_tn_enc,
                         AttentionDiag* diag = nullptr) const;  // (N, d)
  TraceMapOut compute_trace_map(Tape* tp, const TensorPtr& f_t_ori, const TensorPtr& f_tn_ori) const;

  // tokens_in: current prefix (teacher forcing passes the full framed
  // sequence). trace may be null for the bias-free ablation. Output (L, 6);
  // row j holds the logits predicting token j+1.
  TensorPtr decoder_forward(Tape* tp, const std::vector<int>& tokens_in, const TensorPtr& f_cross,
                            const TensorPtr& trace, AttentionDiag* diag = nullptr) const;

  PairContext forward_pair(Tape* tp, const Image& reference, const Image& target) const;

  // teacher-forced mean token cross-entropy for one pair
  TensorPtr pair_loss(Tape* tp, const PairContext& ctx, const std::vector<int>& sliced_labels) const;

  // greedy autoregressive decode; returns framed ids [SOS] payload [EOS].
  // SOS is never emitted as a payload token; ties break to the lowest id.
  std::vector<int> decode_greedy(const Image& reference, const Image& target) const;
  std::vector<int> decode_greedy(const PairContext& ctx) const;

  // mean-pooled twin-tower features for the flat multi-class baseline, (2d)
  TensorPtr pooled_pair_features(Tape* tp, const Image& reference, const Image& target) const;

  std::vector<TensorPtr> backbone_params() const { return params.with_prefix("backbone."); }
  std::vector<TensorPtr> transformer_params() const;  // everything else that trains

  ModelConfig cfg;
  Params params;
  TensorPtr pos;        // (N, d) fixed 2-D sinusoidal positional embedding
  TensorPtr token_pos;  // (T+2, d) fixed positional embedding for token slots

 private:
  // handles resolved once at construction; name lookups are too slow for
  // the per-op hot path
  struct Norm { TensorPtr g, b; };
  struct Attn { std::vector<TensorPtr> q, k, v; TensorPtr out_w, out_b; };
  struct Ffn { TensorPtr w1, b1, w2, b2; };
  struct Conv { TensorPtr w, b; };
  struct EncLayer { Norm ln1, ln2; Attn attn; Ffn ffn; };
  struct DecLayer { Norm sa_ln, ca_ln_q, ca_ln_kv, ffn_ln; Attn sa, ca; Ffn ffn; };

  struct Handles {
    Conv stem1, stem2, s1c1, s1c2, s2c1, s2c2, s2sk, s3c1, s3c2, s3sk, lat1, lat2, lat3;
    std::vector<EncLayer> enc;
    Norm cross_ln_q, cross_ln_kv, cross_ln2;
    Attn cross_attn;
    Ffn cross_ffn;
    TensorPtr trace_w1, trace_b1, trace_w2, trace_b2;
    TensorPtr embed;
    std::vector<DecLayer> dec;
    Norm head_ln;
    TensorPtr head_w, head_b;
  } h_;

  void build_handles();
  TensorPtr attention_block(Tape* tp, const TensorPtr& q_in, const TensorPtr& kv_in,
                            const Attn& attn, const TensorPtr& bias_row,
                            const TensorPtr& causal_mask, AttentionDiag* diag) const;
  TensorPtr ffn_block(Tape* tp, const TensorPtr& x, const Ffn& ffn) const;
};

TensorPtr image_to_tensor(const Image& img);
TensorPtr sinusoidal_grid_embedding(int grid, int d);     // (grid*grid, d)
TensorPtr sinusoidal_token_embedding(int length, int d);  // (length, d)

}  // namespace mat
