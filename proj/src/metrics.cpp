#include "mat/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "mat/slice.hpp"

namespace mat {

namespace {

void check_payload(const std::vector<int>& p, const char* who) {
  for (int id : p)
    if (id != kTokNM && id != kTokS && id != kTokD && id != kTokF)
      throw std::invalid_argument(std::string(who) + ": token " + std::to_string(id) +
                                  " is not an operation token");
}

std::vector<int> framed_to_payload(const std::vector<int>& framed) {
  if (framed.size() < 2 || framed.front() != kTokSOS || framed.back() != kTokEOS)
    throw std::invalid_argument("prediction must be framed as [SOS] ... [EOS]");
  for (size_t i = 1; i + 1 < framed.size(); ++i)
    if (framed[i] == kTokSOS || framed[i] == kTokEOS)
      throw std::invalid_argument("prediction has interior framing tokens");
  return std::vector<int>(framed.begin() + 1, framed.end() - 1);
}

}  // namespace

double ada_acc_payload(const std::vector<int>& pred, const std::vector<int>& gt) {
  check_payload(pred, "ada_acc pred");
  check_payload(gt, "ada_acc gt");
  std::vector<int> a = pred, b = gt;
  const size_t len = std::max<size_t>(std::max(a.size(), b.size()), 1);
  while (a.size() < len) a.push_back(kTokNM);
  while (b.size() < len) b.push_back(kTokNM);
  size_t match = 0;
  for (size_t i = 0; i < len; ++i)
    if (a[i] == b[i]) ++match;
  return (double)match / (double)len;
}

int strict_match_payload(const std::vector<int>& pred, const std::vector<int>& gt) {
  return ada_acc_payload(pred, gt) == 1.0 ? 1 : 0;
}

double ada_acc(const std::vector<int>& pred_framed, const std::vector<int>& gt_payload) {
  return ada_acc_payload(framed_to_payload(pred_framed), gt_payload);
}

int strict_match(const std::vector<int>& pred_framed, const std::vector<int>& gt_payload) {
  return strict_match_payload(framed_to_payload(pred_framed), gt_payload);
}

MetricsReport aggregate(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  MetricsReport r;
  struct Acc {
    double ada = 0.0;
    double strict = 0.0;
    int64_t n = 0;
  };
  Acc total;
  std::map<int, Acc> per_n;
  std::map<std::string, Acc> per_seq;
  for (const auto& row : rows) {
    total.ada += row.ada;
    total.strict += row.strict;
    total.n++;
    auto& an = per_n[row.n];
    an.ada += row.ada;
    an.strict += row.strict;
    an.n++;
    auto& as = per_seq[tokens_str(row.gt_payload, "-")];
    as.ada += row.ada;
    as.strict += row.strict;
    as.n++;
  }
  r.count = total.n;
  r.mean_ada = total.ada / (double)total.n;
  r.mean_strict = total.strict / (double)total.n;
  for (auto& [k, a] : per_n) r.by_n[k] = {a.ada / a.n, a.strict / a.n, a.n};
  for (auto& [k, a] : per_seq) r.by_sequence[k] = {a.ada / a.n, a.strict / a.n, a.n};
  return r;
}

void write_report_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "set_id,t,n,ada_acc,strict_match,pred_tokens,gt_tokens\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.ada);
    f << r.set_id << "," << r.t << "," << r.n << "," << buf << "," << r.strict << ","
      << tokens_str(r.pred_payload, "-") << "," << tokens_str(r.gt_payload, "-") << "\n";
  }
}

void write_summary_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  char buf[96];
  f << "scope,key,count,ada_acc,strict_match\n";
  std::snprintf(buf, sizeof(buf), "all,,%lld,%.9g,%.9g\n", (long long)report.count,
                report.mean_ada, report.mean_strict);
  f << buf;
  for (const auto& [n, b] : report.by_n) {
    std::snprintf(buf, sizeof(buf), "n,%d,%lld,%.9g,%.9g\n", n, (long long)b.count, b.mean_ada,
                  b.mean_strict);
    f << buf;
  }
  for (const auto& [seq, b] : report.by_sequence) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", (long long)b.count, b.mean_ada, b.mean_strict);
    f << "sequence," << seq << "," << buf;
  }
}

int ClassTable::index_of(const std::vector<int>& padded) const {
  for (size_t i = 0; i < sequences.size(); ++i)
    if (sequences[i] == padded) return (int)i;
  return -1;
}

ClassTable ClassTable::from_manifest(const DatasetManifest& manifest) {
  ClassTable t;
  for (const auto& rec : manifest.records) {
    std::vector<int> padded;
    padded.reserve(4);
    for (char e : rec.editors) padded.push_back(token_for_editor(e));
    if (t.index_of(padded) < 0) t.sequences.push_back(std::move(padded));
  }
  std::sort(t.sequences.begin(), t.sequences.end());
  return t;
}

std::vector<int> mc_cls_eval(Tape* tp, const TensorPtr& pooled, const TensorPtr& head_w,
                             const TensorPtr& head_b, const ClassTable& table) {
  if (table.sequences.empty()) throw std::invalid_argument("mc_cls_eval: empty class table");
  const int classes = (int)table.sequences.size();
  if (head_w->shape.size() != 2 || head_w->shape[1] != classes)
    throw std::invalid_argument("mc_cls_eval: head must map features to " + std::to_string(classes) +
                                " classes");
  auto feat = reshape(tp, pooled, {1, (int)pooled->numel()});
  auto logits = add(tp, matmul(tp, feat, head_w), head_b);
  auto probs = softmax_last(tp, logits);
  int best = 0;
  for (int c = 1; c < classes; ++c)
    if (probs->value[(size_t)c] > probs->value[(size_t)best]) best = c;
  return table.sequences[(size_t)best];
}

}  // namespace mat
