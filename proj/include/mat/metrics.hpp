#pragma once

#include <map>
#include <string>
#include <vector>

#include "mat/autograd.hpp"
#include "mat/synth.hpp"

namespace mat {

// Payload-level sequence accuracy. Both payloads are NM-padded to a common
// length and compared position by position, order strictly respected. Two
// empty payloads compare as a single NM pair and score 1.
double ada_acc_payload(const std::vector<int>& pred, const std::vector<int>& gt);
int strict_match_payload(const std::vector<int>& pred, const std::vector<int>& gt);

// Framed-prediction entry points: pred must be [SOS] payload [EOS] with no
// interior framing tokens (throws otherwise); gt is given as payload.
double ada_acc(const std::vector<int>& pred_framed, const std::vector<int>& gt_payload);
int strict_match(const std::vector<int>& pred_framed, const std::vector<int>& gt_payload);

struct MetricsRow {
  int set_id = 0;
  int t = 0;
  int n = 0;
  double ada = 0.0;
  int strict = 0;
  std::vector<int> pred_payload;
  std::vector<int> gt_payload;
};

struct Breakdown {
  double mean_ada = 0.0;
  double mean_strict = 0.0;
  int64_t count = 0;
};

struct MetricsReport {
  double mean_ada = 0.0;
  double mean_strict = 0.0;
  int64_t count = 0;
  std::map<int, Breakdown> by_n;
  std::map<std::string, Breakdown> by_sequence;  // keyed by gt payload string
};

MetricsReport aggregate(const std::vector<MetricsRow>& rows);

void write_report_csv(const std::vector<MetricsRow>& rows, const std::string& path);
void write_summary_csv(const MetricsReport& report, const std::string& path);

// Class table for the flat multi-class baseline: one class per distinct
// padded label sequence seen in the manifest.
struct ClassTable {
  std::vector<std::vector<int>> sequences;  // padded payloads, length T
  int index_of(const std::vector<int>& padded) const;  // -1 when unseen
  static ClassTable from_manifest(const DatasetManifest& manifest);
};

// Single softmax over the class table attached to pooled encoder features;
// returns the argmax row's sequence.
std::vector<int> mc_cls_eval(Tape* tp, const TensorPtr& pooled, const TensorPtr& head_w,
                             const TensorPtr& head_b, const ClassTable& table);

}  // namespace mat
