#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mat/rng.hpp"
#include "mat/slice.hpp"
#include "mat/synth.hpp"

using namespace mat;

namespace {

ImageSequence tiny_sequence(std::vector<char> editors) {
  ImageSequence seq;
  seq.editors = std::move(editors);
  seq.images.resize(seq.editors.size() + 1, Image(4, 4));
  for (size_t i = 0; i < seq.images.size(); ++i)
    seq.images[i].px[0] = (float)i;  // make stages distinguishable
  return seq;
}

}  // namespace

TEST_CASE("slice rule: t=4 n=3 keeps M2..M4 and pads one NM") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  auto p = slice_pair(seq, 4, 3);
  CHECK(p.reference == &seq.images[1]);
  CHECK(p.target == &seq.images[4]);
  CHECK(p.sliced_labels == std::vector<int>{kTokD, kTokF, kTokD, kTokNM});
}

TEST_CASE("slice rule: t=4 n=4 uses the real image and no padding") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  auto p = slice_pair(seq, 4, 4);
  CHECK(p.reference == &seq.images[0]);
  CHECK(p.sliced_labels == std::vector<int>{kTokS, kTokD, kTokF, kTokD});
}

TEST_CASE("slice rule: t=1 n=1 pads three NM") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  auto p = slice_pair(seq, 1, 1);
  CHECK(p.reference == &seq.images[0]);
  CHECK(p.sliced_labels == std::vector<int>{kTokS, kTokNM, kTokNM, kTokNM});
}

TEST_CASE("indices outside 1 <= n <= t <= T are rejected") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  CHECK_THROWS_AS(slice_pair(seq, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(slice_pair(seq, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(slice_pair(seq, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(slice_pair(seq, 2, 0), std::invalid_argument);
}

TEST_CASE("enumeration yields the triangular number of pairs in order") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  auto all = enumerate_slices(seq);
  CHECK(all.size() == 10);
  int idx = 0;
  for (int t = 1; t <= 4; ++t)
    for (int n = 1; n <= t; ++n, ++idx) {
      CHECK(all[(size_t)idx].t == t);
      CHECK(all[(size_t)idx].n == n);
      CHECK((int)all[(size_t)idx].sliced_labels.size() == 4);
      // invariant: first n entries real, rest NM
      for (int i = 0; i < 4; ++i) {
        if (i < n) CHECK(all[(size_t)idx].sliced_labels[(size_t)i] != kTokNM);
        else CHECK(all[(size_t)idx].sliced_labels[(size_t)i] == kTokNM);
      }
    }

  auto single = tiny_sequence({'S'});
  // labels must cover all editors only in the 4-stage pipeline; a length-1
  // sequence still slices
  auto one = enumerate_slices(single);
  CHECK(one.size() == 1);
  CHECK(one[0].t == 1);
  CHECK(one[0].n == 1);
}

TEST_CASE("slicing does not mutate the source sequence") {
  auto seq = tiny_sequence({'S', 'D', 'F', 'D'});
  auto images_before = seq.images[2].px;
  auto editors_before = seq.editors;
  (void)enumerate_slices(seq);
  CHECK(seq.images[2].px == images_before);
  CHECK(seq.editors == editors_before);
}

TEST_CASE("for fixed t the non-NM prefix grows by one per n") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<char> editors;
    for (int i = 0; i < 4; ++i) editors.push_back(kEditorIds[rng.randint(3)]);
    for (int t = 1; t <= 4; ++t) {
      int prev = -1;
      for (int n = 1; n <= t; ++n) {
        auto labels = slice_labels(editors, t, n);
        int non_nm = 0;
        for (int id : labels)
          if (id != kTokNM) ++non_nm;
        if (prev >= 0) CHECK(non_nm == prev + 1);
        prev = non_nm;
      }
    }
  }
}

TEST_CASE("tokenize frames with SOS/EOS and stacks table rows") {
  auto table = tensor({kVocabSize, 3});
  Rng rng(8);
  for (auto& v : table->value) v = rng.uniform_f(-0.1f, 0.1f);

  auto ts = tokenize(nullptr, {kTokS, kTokD, kTokF, kTokNM}, table);
  CHECK(ts.ids == std::vector<int>{0, 3, 4, 5, 2, 1});
  CHECK(ts.embedded->shape == std::vector<int>{3, 6});
  for (int j = 0; j < 6; ++j)
    for (int r = 0; r < 3; ++r)
      CHECK(ts.embedded->value[(size_t)r * 6 + j] ==
            table->value[(size_t)ts.ids[(size_t)j] * 3 + r]);

  auto six = tokenize(nullptr, {kTokD, kTokF, kTokD, kTokNM}, table);
  CHECK(six.ids.size() == 6);
  CHECK(six.ids.front() == kTokSOS);
  CHECK(six.ids.back() == kTokEOS);
  CHECK_THROWS_AS(tokenize(nullptr, {kTokSOS}, table), std::invalid_argument);
}

TEST_CASE("round trip: strip recovers the sliced operation list") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<char> editors;
    for (int i = 0; i < 4; ++i) editors.push_back(kEditorIds[rng.randint(3)]);
    const int t = 1 + (int)rng.randint(4);
    const int n = 1 + (int)rng.randint(t);
    auto sliced = slice_labels(editors, t, n);
    auto table = tensor({kVocabSize, 2});
    auto ts = tokenize(nullptr, sliced, table);
    auto recovered = strip_tokens(ts.ids);
    std::vector<int> expect;
    for (int k = t - n + 1; k <= t; ++k) expect.push_back(token_for_editor(editors[(size_t)k - 1]));
    CHECK(recovered == expect);
  }
}
