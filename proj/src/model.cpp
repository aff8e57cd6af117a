#include "mat/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mat {

void ModelConfig::validate() const {
  if (image_size % 4 != 0 || image_size < 8)
    throw std::invalid_argument("image_size must be a multiple of 4 and >= 8");
  if (d % 4 != 0 || d < 8) throw std::invalid_argument("d must be a multiple of 4 and >= 8");
  if (d % heads != 0) throw std::invalid_argument("d must be divisible by heads");
  if (stages < 1) throw std::invalid_argument("stages must be >= 1");
  if (lambda_spread <= 0.0f) throw std::invalid_argument("lambda_spread must be positive");
  if (enc_layers < 1 || dec_layers < 1 || ffn_mult < 1)
    throw std::invalid_argument("layer counts must be >= 1");
}

TensorPtr Params::get(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<TensorPtr> Params::with_prefix(const std::string& prefix) const {
  std::vector<TensorPtr> out;
  for (const auto& t : ordered)
    if (t->name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

std::vector<TensorPtr> Params::without_prefix(const std::string& prefix) const {
  std::vector<TensorPtr> out;
  for (const auto& t : ordered)
    if (t->name.rfind(prefix, 0) != 0) out.push_back(t);
  return out;
}

TensorPtr image_to_tensor(const Image& img) {
  return tensor({3, img.h, img.w}, std::vector<float>(img.px));
}

namespace {

// interleaved sin/cos over one coordinate, filling dims [d0, d0+span)
void fill_sinusoid(std::vector<float>& buf, int pos_count, int d, int d0, int span,
                   const std::vector<int>& coord) {
  for (int p = 0; p < pos_count; ++p) {
    for (int k = 0; k < span; ++k) {
      const double rate = std::pow(10000.0, -2.0 * (k / 2) / (double)span);
      const double v = coord[(size_t)p] * rate;
      buf[(size_t)p * d + d0 + k] = (float)((k % 2 == 0) ? std::sin(v) : std::cos(v));
    }
  }
}

}  // namespace

TensorPtr sinusoidal_grid_embedding(int grid, int d) {
  const int n = grid * grid;
  std::vector<float> buf((size_t)n * d, 0.0f);
  std::vector<int> rows((size_t)n), cols((size_t)n);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      rows[(size_t)(r * grid + c)] = r;
      cols[(size_t)(r * grid + c)] = c;
    }
  fill_sinusoid(buf, n, d, 0, d / 2, rows);
  fill_sinusoid(buf, n, d, d / 2, d - d / 2, cols);
  return tensor({n, d}, std::move(buf));
}

TensorPtr sinusoidal_token_embedding(int length, int d) {
  std::vector<float> buf((size_t)length * d, 0.0f);
  std::vector<int> idx((size_t)length);
  for (int i = 0; i < length; ++i) idx[(size_t)i] = i;
  fill_sinusoid(buf, length, d, 0, d, idx);
  return tensor({length, d}, std::move(buf));
}

namespace {

struct ParamBuilder {
  Params& params;
  uint64_t seed;

  TensorPtr make(const std::string& name, std::vector<int> shape, double scale, bool uniform,
                 double constant = 0.0, bool use_constant = false) {
    auto t = tensor(std::move(shape));
    if (use_constant) {
      std::fill(t->value.begin(), t->value.end(), (float)constant);
    } else {
      Rng rng(hash_seed(seed, hash_str(name.c_str())));
      for (auto& v : t->value)
        v = (float)(uniform ? rng.uniform(-scale, scale) : rng.normal() * scale);
    }
    t->requires_grad = true;
    t->name = name;
    params.ordered.push_back(t);
    params.by_name[name] = t;
    return t;
  }

  // conv weight (O,C,kh,kw) with He initialization, bias zero
  void conv(const std::string& name, int o, int c, int k) {
    make(name + ".w", {o, c, k, k}, std::sqrt(2.0 / (c * k * k)), false);
    make(name + ".b", {o}, 0.0, false, 0.0, true);
  }

  // linear weight (in, out) Xavier-uniform, optional bias
  void linear(const std::string& name, int in, int out, bool bias = true) {
    make(name + ".w", {in, out}, std::sqrt(6.0 / (in + out)), true);
    if (bias) make(name + ".b", {out}, 0.0, false, 0.0, true);
  }

  void norm(const std::string& name, int d) {
    make(name + ".g", {d}, 0.0, false, 1.0, true);
    make(name + ".b", {d}, 0.0, false, 0.0, true);
  }

  void attention(const std::string& prefix, int d, int heads) {
    const int dk = d / heads;
    for (int h = 0; h < heads; ++h) {
      linear(prefix + ".q" + std::to_string(h), d, dk, false);
      linear(prefix + ".k" + std::to_string(h), d, dk, false);
      linear(prefix + ".v" + std::to_string(h), d, dk, false);
    }
    linear(prefix + ".out", d, d);
  }
};

}  // namespace

Model::Model(ModelConfig config, uint64_t seed) : cfg(config) {
  cfg.validate();
  ParamBuilder b{params, seed};
  const int d = cfg.d;
  const int c1 = d / 2, c2 = d, c3 = d + d / 2;

  // backbone: stride-4 stem, then three residual stages at strides 1/2/2
  b.conv("backbone.stem1", d / 4, 3, 3);
  b.conv("backbone.stem2", c1, d / 4, 3);
  b.conv("backbone.s1.c1", c1, c1, 3);
  b.conv("backbone.s1.c2", c1, c1, 3);
  b.conv("backbone.s2.c1", c2, c1, 3);
  b.conv("backbone.s2.c2", c2, c2, 3);
  b.conv("backbone.s2.sk", c2, c1, 1);
  b.conv("backbone.s3.c1", c3, c2, 3);
  b.conv("backbone.s3.c2", c3, c3, 3);
  b.conv("backbone.s3.sk", c3, c2, 1);
  b.conv("backbone.lat1", d, c1, 1);
  b.conv("backbone.lat2", d, c2, 1);
  b.conv("backbone.lat3", d, c3, 1);

  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    b.norm(p + ".ln1", d);
    b.attention(p + ".attn", d, cfg.heads);
    b.norm(p + ".ln2", d);
    b.linear(p + ".ffn.fc1", d, cfg.ffn_mult * d);
    b.linear(p + ".ffn.fc2", cfg.ffn_mult * d, d);
  }

  if (cfg.mc_classes > 0) {
    // flat multi-class variant: pooled twin-tower features, single softmax
    b.linear("mc.head", 2 * d, cfg.mc_classes);
    pos = sinusoidal_grid_embedding(cfg.grid(), d);
    if (!cfg.use_pos) pos = tensor(pos->shape);
    token_pos = sinusoidal_token_embedding(cfg.tokens(), d);
    return;
  }

  b.norm("cross.ln_q", d);
  b.norm("cross.ln_kv", d);
  b.attention("cross.attn", d, cfg.heads);
  b.norm("cross.ln2", d);
  b.linear("cross.ffn.fc1", d, cfg.ffn_mult * d);
  b.linear("cross.ffn.fc2", cfg.ffn_mult * d, d);

  const int n = cfg.seq_len();
  b.linear("trace.mlp.fc1", n, d);
  b.linear("trace.mlp.fc2", d, 4);

  b.make("embed.table", {kVocabSize, d}, 0.1, true);

  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    b.norm(p + ".sa.ln", d);
    b.attention(p + ".sa.attn", d, cfg.heads);
    b.norm(p + ".ca.ln_q", d);
    b.norm(p + ".ca.ln_kv", d);
    b.attention(p + ".ca.attn", d, cfg.heads);
    b.norm(p + ".ffn.ln", d);
    b.linear(p + ".ffn.fc1", d, cfg.ffn_mult * d);
    b.linear(p + ".ffn.fc2", cfg.ffn_mult * d, d);
  }
  b.norm("head.ln", d);
  b.linear("head.out", d, kVocabSize);

  pos = sinusoidal_grid_embedding(cfg.grid(), d);
  if (!cfg.use_pos) pos = tensor(pos->shape);  // zeros
  token_pos = sinusoidal_token_embedding(cfg.tokens(), d);
  build_handles();
}

void Model::build_handles() {
  auto conv = [&](const std::string& p) { return Conv{params.get(p + ".w"), params.get(p + ".b")}; };
  auto norm = [&](const std::string& p) { return Norm{params.get(p + ".g"), params.get(p + ".b")}; };
  auto attn = [&](const std::string& p) {
    Attn a;
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hs = std::to_string(h);
      a.q.push_back(params.get(p + ".q" + hs + ".w"));
      a.k.push_back(params.get(p + ".k" + hs + ".w"));
      a.v.push_back(params.get(p + ".v" + hs + ".w"));
    }
    a.out_w = params.get(p + ".out.w");
    a.out_b = params.get(p + ".out.b");
    return a;
  };
  auto ffn = [&](const std::string& p) {
    return Ffn{params.get(p + ".fc1.w"), params.get(p + ".fc1.b"), params.get(p + ".fc2.w"),
               params.get(p + ".fc2.b")};
  };
  h_.stem1 = conv("backbone.stem1");
  h_.stem2 = conv("backbone.stem2");
  h_.s1c1 = conv("backbone.s1.c1");
  h_.s1c2 = conv("backbone.s1.c2");
  h_.s2c1 = conv("backbone.s2.c1");
  h_.s2c2 = conv("backbone.s2.c2");
  h_.s2sk = conv("backbone.s2.sk");
  h_.s3c1 = conv("backbone.s3.c1");
  h_.s3c2 = conv("backbone.s3.c2");
  h_.s3sk = conv("backbone.s3.sk");
  h_.lat1 = conv("backbone.lat1");
  h_.lat2 = conv("backbone.lat2");
  h_.lat3 = conv("backbone.lat3");
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    h_.enc.push_back({norm(p + ".ln1"), norm(p + ".ln2"), attn(p + ".attn"), ffn(p + ".ffn")});
  }
  if (cfg.mc_classes > 0) return;
  h_.cross_ln_q = norm("cross.ln_q");
  h_.cross_ln_kv = norm("cross.ln_kv");
  h_.cross_ln2 = norm("cross.ln2");
  h_.cross_attn = attn("cross.attn");
  h_.cross_ffn = ffn("cross.ffn");
  h_.trace_w1 = params.get("trace.mlp.fc1.w");
  h_.trace_b1 = params.get("trace.mlp.fc1.b");
  h_.trace_w2 = params.get("trace.mlp.fc2.w");
  h_.trace_b2 = params.get("trace.mlp.fc2.b");
  h_.embed = params.get("embed.table");
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    h_.dec.push_back({norm(p + ".sa.ln"), norm(p + ".ca.ln_q"), norm(p + ".ca.ln_kv"),
                      norm(p + ".ffn.ln"), attn(p + ".sa.attn"), attn(p + ".ca.attn"),
                      ffn(p + ".ffn")});
  }
  h_.head_ln = norm("head.ln");
  h_.head_w = params.get("head.out.w");
  h_.head_b = params.get("head.out.b");
}

std::vector<TensorPtr> Model::transformer_params() const {
  auto rest = params.without_prefix("backbone.");
  if (cfg.use_trace_map) return rest;
  std::vector<TensorPtr> out;
  for (const auto& t : rest)
    if (t->name.rfind("trace.", 0) != 0) out.push_back(t);
  return out;
}

namespace {



// nearest-neighbour x2 via duplicate-and-interleave, built from concat/reshape
TensorPtr upsample2x(Tape* tp, const TensorPtr& x) {
  const int d = x->shape[0], h = x->shape[1], w = x->shape[2];
  auto a = reshape(tp, x, {d, h, 1, w, 1});
  auto rows = concat(tp, {a, a}, 2);        // (d, h, 2, w, 1)
  auto cols = concat(tp, {rows, rows}, 4);  // (d, h, 2, w, 2)
  return reshape(tp, cols, {d, 2 * h, 2 * w});
}

}  // namespace

TensorPtr Model::backbone_forward(Tape* tp, const TensorPtr& image) const {
  if (image->shape != std::vector<int>{3, cfg.image_size, cfg.image_size})
    throw std::invalid_argument("backbone: expected image shape (3," +
                                std::to_string(cfg.image_size) + "," +
                                std::to_string(cfg.image_size) + "), got " +
                                shape_str(image->shape));
  auto block = [&](const TensorPtr& in, const Conv& c1, const Conv& c2, const Conv* sk,
                   int stride) {
    auto h = relu(tp, conv2d(tp, in, c1.w, c1.b, stride, 1));
    h = conv2d(tp, h, c2.w, c2.b, 1, 1);
    TensorPtr skip = sk ? conv2d(tp, in, sk->w, sk->b, stride, 0) : in;
    return relu(tp, add(tp, h, skip));
  };
  auto x = relu(tp, conv2d(tp, image, h_.stem1.w, h_.stem1.b, 2, 1));
  x = relu(tp, conv2d(tp, x, h_.stem2.w, h_.stem2.b, 2, 1));
  auto s1 = block(x, h_.s1c1, h_.s1c2, nullptr, 1);    // (d/2, g, g)
  auto s2 = block(s1, h_.s2c1, h_.s2c2, &h_.s2sk, 2);  // (d, g/2, g/2)
  auto s3 = block(s2, h_.s3c1, h_.s3c2, &h_.s3sk, 2);  // (3d/2, g/4, g/4)
  // top-down pyramid with 1x1 lateral projections; the finest fused level
  // is the output
  auto p3 = conv2d(tp, s3, h_.lat3.w, h_.lat3.b, 1, 0);
  auto p2 = add(tp, conv2d(tp, s2, h_.lat2.w, h_.lat2.b, 1, 0), upsample2x(tp, p3));
  auto p1 = add(tp, conv2d(tp, s1, h_.lat1.w, h_.lat1.b, 1, 0), upsample2x(tp, p2));
  return p1;  // (d, g, g)
}

TensorPtr Model::attention_block(Tape* tp, const TensorPtr& q_in, const TensorPtr& kv_in,
                                 const Attn& attn, const TensorPtr& bias_row,
                                 const TensorPtr& causal_mask, AttentionDiag* diag) const {
  const float inv_sqrt_dk = 1.0f / std::sqrt((float)cfg.head_dim());
  std::vector<TensorPtr> head_out;
  head_out.reserve((size_t)cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    auto q = matmul(tp, q_in, attn.q[(size_t)h]);
    auto k = matmul(tp, kv_in, attn.k[(size_t)h]);
    auto v = matmul(tp, kv_in, attn.v[(size_t)h]);
    auto scores = scalar_mul(tp, matmul(tp, q, transpose(tp, k)), inv_sqrt_dk);
    if (bias_row) scores = add(tp, scores, bias_row);
    if (causal_mask) scores = add(tp, scores, causal_mask);
    auto weights = softmax_last(tp, scores);
    if (diag) diag->attention.push_back(weights);
    head_out.push_back(matmul(tp, weights, v));
  }
  auto merged = concat(tp, head_out, 1);
  return add(tp, matmul(tp, merged, attn.out_w), attn.out_b);
}

TensorPtr Model::ffn_block(Tape* tp, const TensorPtr& x, const Ffn& ffn) const {
  auto h = relu(tp, add(tp, matmul(tp, x, ffn.w1), ffn.b1));
  return add(tp, matmul(tp, h, ffn.w2), ffn.b2);
}

TensorPtr Model::encoder_forward(Tape* tp, const TensorPtr& fmap, AttentionDiag* diag) const {
  const int d = cfg.d, n = cfg.seq_len();
  if (fmap->shape != std::vector<int>{d, cfg.grid(), cfg.grid()})
    throw std::invalid_argument("encoder: feature map shape mismatch: " + shape_str(fmap->shape));
  auto x = transpose(tp, reshape(tp, fmap, {d, n}));  // (N, d)
  const float inv_sqrt_dk = 1.0f / std::sqrt((float)cfg.head_dim());
  for (const auto& layer : h_.enc) {
    auto a = layernorm(tp, x, layer.ln1.g, layer.ln1.b);
    // positional embedding enters queries and keys only; values see the
    // features themselves
    auto a_pos = add(tp, a, pos);
    std::vector<TensorPtr> head_out;
    for (int h = 0; h < cfg.heads; ++h) {
      auto q = matmul(tp, a_pos, layer.attn.q[(size_t)h]);
      auto k = matmul(tp, a_pos, layer.attn.k[(size_t)h]);
      auto v = matmul(tp, a, layer.attn.v[(size_t)h]);
      auto weights = softmax_last(tp, scalar_mul(tp, matmul(tp, q, transpose(tp, k)), inv_sqrt_dk));
      if (diag) diag->attention.push_back(weights);
      head_out.push_back(matmul(tp, weights, v));
    }
    auto merged = concat(tp, head_out, 1);
    x = add(tp, x, add(tp, matmul(tp, merged, layer.attn.out_w), layer.attn.out_b));
    auto bnorm = layernorm(tp, x, layer.ln2.g, layer.ln2.b);
    x = add(tp, x, ffn_block(tp, bnorm, layer.ffn));
  }
  return x;  // (N, d)
}

TensorPtr Model::cross_attend(Tape* tp, const TensorPtr& f_t_enc, const TensorPtr& f_tn_enc,
                              AttentionDiag* diag) const {
  auto q_in = add(tp, layernorm(tp, f_t_enc, h_.cross_ln_q.g, h_.cross_ln_q.b), pos);
  auto kv = layernorm(tp, f_tn_enc, h_.cross_ln_kv.g, h_.cross_ln_kv.b);
  auto kv_pos = add(tp, kv, pos);
  const float inv_sqrt_dk = 1.0f / std::sqrt((float)cfg.head_dim());
  std::vector<TensorPtr> head_out;
  for (int h = 0; h < cfg.heads; ++h) {
    auto q = matmul(tp, q_in, h_.cross_attn.q[(size_t)h]);
    auto k = matmul(tp, kv_pos, h_.cross_attn.k[(size_t)h]);
    auto v = matmul(tp, kv, h_.cross_attn.v[(size_t)h]);
    auto weights = softmax_last(tp, scalar_mul(tp, matmul(tp, q, transpose(tp, k)), inv_sqrt_dk));
    if (diag) diag->attention.push_back(weights);
    head_out.push_back(matmul(tp, weights, v));
  }
  auto merged = concat(tp, head_out, 1);
  auto x = add(tp, f_t_enc, add(tp, matmul(tp, merged, h_.cross_attn.out_w), h_.cross_attn.out_b));
  auto bnorm = layernorm(tp, x, h_.cross_ln2.g, h_.cross_ln2.b);
  return add(tp, x, ffn_block(tp, bnorm, h_.cross_ffn));
}

TraceMapOut Model::compute_trace_map(Tape* tp, const TensorPtr& f_t_ori,
                                     const TensorPtr& f_tn_ori) const {
  const int g = cfg.grid(), n = cfg.seq_len();
  TraceMapOut out;
  auto diff = abs(tp, sub(tp, f_t_ori, f_tn_ori));       // (d, g, g)
  auto dmap = reshape(tp, max_axis(tp, diff, 0), {n});   // channel max, flattened
  auto mx = max_all(tp, dmap);
  if (mx->value[0] < 1e-12f) {
    out.delta_norm = tensor({n});
    out.center_h = scalar(0.0f);
    out.center_w = scalar(0.0f);
    out.scale_h = scalar(0.5f);
    out.scale_w = scalar(0.5f);
    out.m = tensor({n});  // identical inputs leave no trace
    return out;
  }
  auto inv_mx = exp(tp, scalar_mul(tp, log(tp, mx), -1.0f));
  auto dnorm = mul(tp, dmap, inv_mx);  // (N) in [0,1]
  out.delta_norm = dnorm;

  // 2-layer MLP on the flattened normalized difference predicts the
  // Gaussian's center and scales
  auto h1 = relu(tp, add(tp, matmul(tp, reshape(tp, dnorm, {1, n}), h_.trace_w1), h_.trace_b1));
  auto raw = add(tp, matmul(tp, h1, h_.trace_w2), h_.trace_b2);
  auto pick = [&](int idx) {
    auto sel = tensor({4, 1});
    sel->value[(size_t)idx] = 1.0f;
    return reshape(tp, matmul(tp, raw, sel), {1});
  };
  out.center_h = scalar_mul(tp, sigmoid(tp, pick(0)), (float)(g - 1));
  out.center_w = scalar_mul(tp, sigmoid(tp, pick(1)), (float)(g - 1));
  auto half = full({1}, 0.5f);
  out.scale_h = add(tp, softplus(tp, pick(2)), half);
  out.scale_w = add(tp, softplus(tp, pick(3)), half);

  std::vector<float> rows((size_t)n), cols((size_t)n);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      rows[(size_t)(r * g + c)] = (float)r;
      cols[(size_t)(r * g + c)] = (float)c;
    }
  auto row_idx = tensor({n}, std::move(rows));
  auto col_idx = tensor({n}, std::move(cols));
  const float inv_lambda = 1.0f / cfg.lambda_spread;
  auto axis_term = [&](const TensorPtr& coords, const TensorPtr& center, const TensorPtr& scale) {
    auto dd = sub(tp, coords, center);
    auto d2 = mul(tp, dd, dd);
    auto inv_s2 = exp(tp, scalar_mul(tp, log(tp, mul(tp, scale, scale)), -1.0f));
    return scalar_mul(tp, mul(tp, d2, inv_s2), inv_lambda);
  };
  auto expo = add(tp, axis_term(row_idx, out.center_h, out.scale_h),
                  axis_term(col_idx, out.center_w, out.scale_w));
  out.m = mul(tp, dnorm, exp(tp, scalar_mul(tp, expo, -1.0f)));
  return out;
}

TensorPtr Model::decoder_forward(Tape* tp, const std::vector<int>& tokens_in,
                                 const TensorPtr& f_cross, const TensorPtr& trace,
                                 AttentionDiag* diag) const {
  const int l = (int)tokens_in.size();
  const int d = cfg.d;
  if (l < 1 || l > cfg.tokens())
    throw std::invalid_argument("decoder: prefix length " + std::to_string(l) + " out of range");

  // token embeddings plus fixed slot embeddings (the causal mask alone
  // cannot count positions)
  auto emb = embedding(tp, h_.embed, tokens_in);  // (L, d)
  std::vector<float> tp_rows((size_t)l * d);
  for (int i = 0; i < l; ++i)
    std::copy(token_pos->value.begin() + (size_t)i * d, token_pos->value.begin() + (size_t)(i + 1) * d,
              tp_rows.begin() + (size_t)i * d);
  auto y = add(tp, emb, tensor({l, d}, std::move(tp_rows)));

  // attention bias: log of the clamped trace map, one row broadcast to all
  // query rows and heads
  TensorPtr bias_row;
  if (trace) {
    auto floor_t = full({(int)trace->numel()}, 1e-6f);
    auto clamped = add(tp, relu(tp, sub(tp, trace, floor_t)), floor_t);  // max(M, 1e-6)
    bias_row = log(tp, clamped);
  }
  TensorPtr causal;
  {
    auto m = tensor({l, l});
    for (int i = 0; i < l; ++i)
      for (int j = i + 1; j < l; ++j) m->value[(size_t)i * l + j] = -1e9f;
    causal = m;
  }

  for (const auto& layer : h_.dec) {
    auto a = layernorm(tp, y, layer.sa_ln.g, layer.sa_ln.b);
    y = add(tp, y, attention_block(tp, a, a, layer.sa, nullptr, causal, diag));
    auto q = layernorm(tp, y, layer.ca_ln_q.g, layer.ca_ln_q.b);
    auto kv = layernorm(tp, f_cross, layer.ca_ln_kv.g, layer.ca_ln_kv.b);
    y = add(tp, y, attention_block(tp, q, kv, layer.ca, bias_row, nullptr, diag));
    auto f = layernorm(tp, y, layer.ffn_ln.g, layer.ffn_ln.b);
    y = add(tp, y, ffn_block(tp, f, layer.ffn));
  }
  auto h = layernorm(tp, y, h_.head_ln.g, h_.head_ln.b);
  return add(tp, matmul(tp, h, h_.head_w), h_.head_b);  // (L, 6)
}

PairContext Model::forward_pair(Tape* tp, const Image& reference, const Image& target) const {
  PairContext ctx;
  auto t_img = image_to_tensor(target);
  auto r_img = image_to_tensor(reference);
  ctx.f_t_ori = backbone_forward(tp, t_img);
  ctx.f_tn_ori = backbone_forward(tp, r_img);
  ctx.f_t_enc = encoder_forward(tp, ctx.f_t_ori);
  ctx.f_tn_enc = encoder_forward(tp, ctx.f_tn_ori);
  ctx.f_cross = cross_attend(tp, ctx.f_t_enc, ctx.f_tn_enc);
  if (cfg.use_trace_map) ctx.trace = compute_trace_map(tp, ctx.f_t_ori, ctx.f_tn_ori).m;
  return ctx;
}

TensorPtr Model::pair_loss(Tape* tp, const PairContext& ctx,
                           const std::vector<int>& sliced_labels) const {
  if ((int)sliced_labels.size() != cfg.stages)
    throw std::invalid_argument("pair_loss: sliced labels must have length " +
                                std::to_string(cfg.stages));
  std::vector<int> ids;
  ids.push_back(kTokSOS);
  for (int id : sliced_labels) ids.push_back(id);
  ids.push_back(kTokEOS);
  auto logits = decoder_forward(tp, ids, ctx.f_cross, ctx.trace);
  // position j predicts token j+1; positions after the first EOS are ignored
  std::vector<int> targets(ids.size(), -1);
  for (size_t j = 0; j + 1 < ids.size(); ++j) {
    targets[j] = ids[j + 1];
    if (ids[j + 1] == kTokEOS) break;
  }
  return cross_entropy_logits(tp, logits, targets);
}

std::vector<int> Model::decode_greedy(const PairContext& ctx) const {
  std::vector<int> ids = {kTokSOS};
  for (int step = 0; step < cfg.stages + 1; ++step) {
    auto logits = decoder_forward(nullptr, ids, ctx.f_cross, ctx.trace);
    const float* row = logits->value.data() + (size_t)(ids.size() - 1) * kVocabSize;
    int best = kTokEOS;  // SOS (id 0) is never emitted; scan ids 1..5
    for (int cand = kTokEOS + 1; cand < kVocabSize; ++cand)
      if (row[cand] > row[best]) best = cand;
    ids.push_back(best);
    if (best == kTokEOS) break;
  }
  if (ids.back() != kTokEOS) ids.push_back(kTokEOS);
  return ids;
}

std::vector<int> Model::decode_greedy(const Image& reference, const Image& target) const {
  PairContext ctx = forward_pair(nullptr, reference, target);
  return decode_greedy(ctx);
}

TensorPtr Model::pooled_pair_features(Tape* tp, const Image& reference, const Image& target) const {
  auto f_r = encoder_forward(tp, backbone_forward(tp, image_to_tensor(reference)));
  auto f_t = encoder_forward(tp, backbone_forward(tp, image_to_tensor(target)));
  auto pool_r = mean_axis(tp, f_r, 0);  // (d)
  auto pool_t = mean_axis(tp, f_t, 0);
  return concat(tp, {pool_r, pool_t}, 0);  // (2d)
}

}  // namespace mat
