#pragma once

#include <string>
#include <vector>

#include "mat/autograd.hpp"
#include "mat/image.hpp"

namespace mat {

// Token vocabulary. Fixed ids keep checkpoints and tests stable.
constexpr int kTokSOS = 0;
constexpr int kTokEOS = 1;
constexpr int kTokNM = 2;
constexpr int kTokS = 3;
constexpr int kTokD = 4;
constexpr int kTokF = 5;
constexpr int kVocabSize = 6;

int token_for_editor(char e);           // 'S','D','F' -> 3,4,5
const char* token_name(int id);         // "SOS","EOS","NM","S","D","F"
std::string tokens_str(const std::vector<int>& ids, const char* sep = " ");

// An original image plus its stage-edited successors and per-stage labels.
struct ImageSequence {
  std::vector<Image> images;  // I_0 .. I_T
  std::vector<char> editors;  // M_1 .. M_T, each of 'S','D','F'
  int stages() const { return (int)editors.size(); }
};

// A (reference, target) pair with its sliced, NM-padded label sequence.
// Image members point into the source sequence; the pair does not own them.
struct SlicePair {
  const Image* target = nullptr;
  const Image* reference = nullptr;
  int t = 0;
  int n = 0;
  std::vector<int> sliced_labels;  // length T over {S,D,F,NM} token ids
};

// labels-only core: M_{t-n+1}..M_t followed by (T-n) NM tokens
std::vector<int> slice_labels(const std::vector<char>& editors, int t, int n);

SlicePair slice_pair(const ImageSequence& seq, int t, int n);

// all (t, n) with 1 <= n <= t <= T, t ascending then n ascending
std::vector<SlicePair> enumerate_slices(const ImageSequence& seq);
std::vector<std::pair<int, int>> enumerate_slice_indices(int stages);

struct TokenSequence {
  std::vector<int> ids;  // [SOS] + sliced labels + [EOS], length T+2
  TensorPtr embedded;    // d x (T+2)
};

// Frames the sliced labels with SOS/EOS and looks the ids up in the
// 6-row embedding table (recorded on the tape when training).
TokenSequence tokenize(Tape* tp, const std::vector<int>& sliced_labels, const TensorPtr& table);

// Drops SOS/EOS and trailing NM padding, recovering the operation list.
std::vector<int> strip_tokens(const std::vector<int>& framed);

}  // namespace mat
