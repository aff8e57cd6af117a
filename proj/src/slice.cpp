#include "mat/slice.hpp"

#include <stdexcept>

namespace mat {

int token_for_editor(char e) {
  switch (e) {
    case 'S': return kTokS;
    case 'D': return kTokD;
    case 'F': return kTokF;
    default: throw std::invalid_argument(std::string("unknown editor label '") + e + "'");
  }
}

const char* token_name(int id) {
  switch (id) {
    case kTokSOS: return "SOS";
    case kTokEOS: return "EOS";
    case kTokNM: return "NM";
    case kTokS: return "S";
    case kTokD: return "D";
    case kTokF: return "F";
    default: throw std::invalid_argument("unknown token id " + std::to_string(id));
  }
}

std::string tokens_str(const std::vector<int>& ids, const char* sep) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) s += sep;
    s += token_name(ids[i]);
  }
  return s;
}

std::vector<int> slice_labels(const std::vector<char>& editors, int t, int n) {
  const int stages = (int)editors.size();
  if (!(1 <= n && n <= t && t <= stages))
    throw std::invalid_argument("slice: need 1 <= n <= t <= " + std::to_string(stages) +
                                ", got t=" + std::to_string(t) + " n=" + std::to_string(n));
  std::vector<int> out;
  out.reserve((size_t)stages);
  for (int k = t - n + 1; k <= t; ++k) out.push_back(token_for_editor(editors[(size_t)k - 1]));
  while ((int)out.size() < stages) out.push_back(kTokNM);
  return out;
}

SlicePair slice_pair(const ImageSequence& seq, int t, int n) {
  if ((int)seq.images.size() != seq.stages() + 1)
    throw std::invalid_argument("slice_pair: sequence must hold exactly stages+1 images");
  SlicePair p;
  p.sliced_labels = slice_labels(seq.editors, t, n);
  p.t = t;
  p.n = n;
  p.target = &seq.images[(size_t)t];
  p.reference = &seq.images[(size_t)(t - n)];
  return p;
}

std::vector<std::pair<int, int>> enumerate_slice_indices(int stages) {
  std::vector<std::pair<int, int>> out;
  for (int t = 1; t <= stages; ++t)
    for (int n = 1; n <= t; ++n) out.emplace_back(t, n);
  return out;
}

std::vector<SlicePair> enumerate_slices(const ImageSequence& seq) {
  std::vector<SlicePair> out;
  for (auto [t, n] : enumerate_slice_indices(seq.stages())) out.push_back(slice_pair(seq, t, n));
  return out;
}

TokenSequence tokenize(Tape* tp, const std::vector<int>& sliced_labels, const TensorPtr& table) {
  if (table->shape.size() != 2 || table->shape[0] != kVocabSize)
    throw std::invalid_argument("tokenize: table must be (6, d)");
  TokenSequence ts;
  ts.ids.reserve(sliced_labels.size() + 2);
  ts.ids.push_back(kTokSOS);
  for (int id : sliced_labels) {
    if (id != kTokNM && id != kTokS && id != kTokD && id != kTokF)
      throw std::invalid_argument("tokenize: label id " + std::to_string(id) + " not an operation token");
    ts.ids.push_back(id);
  }
  ts.ids.push_back(kTokEOS);
  ts.embedded = transpose(tp, embedding(tp, table, ts.ids));  // d x (T+2)
  return ts;
}

std::vector<int> strip_tokens(const std::vector<int>& framed) {
  if (framed.size() < 2 || framed.front() != kTokSOS)
    throw std::invalid_argument("strip_tokens: sequence must start with SOS");
  size_t end = framed.size();
  for (size_t i = 1; i < framed.size(); ++i) {
    if (framed[i] == kTokEOS) { end = i; break; }
  }
  std::vector<int> payload(framed.begin() + 1, framed.begin() + (std::ptrdiff_t)end);
  while (!payload.empty() && payload.back() == kTokNM) payload.pop_back();
  return payload;
}

}  // namespace mat
