#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mat/fft.hpp"
#include "mat/synth.hpp"

using namespace mat;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("base image generation is deterministic and seed-sensitive") {
  auto a = gen_base_image(7, 64);
  auto b = gen_base_image(7, 64);
  CHECK(a.img.px == b.img.px);
  for (int r = 0; r < kNumRegions; ++r) CHECK(a.masks[(size_t)r] == b.masks[(size_t)r]);

  auto c = gen_base_image(8, 64);
  int64_t diff = 0;
  for (size_t i = 0; i < a.img.px.size(); ++i)
    if (a.img.px[i] != c.img.px[i]) ++diff;
  CHECK((double)diff / (double)a.img.px.size() >= 0.01);

  CHECK_THROWS_AS(gen_base_image(1, 48), std::invalid_argument);
}

TEST_CASE("masks are pairwise disjoint and non-empty for 100 seeds at every size") {
  for (int size : {32, 64, 128}) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      auto b = gen_base_image(seed, size);
      int64_t counts[4] = {};
      for (int r = 0; r < kNumRegions; ++r)
        for (auto v : b.masks[(size_t)r]) counts[r] += v;
      for (int r = 0; r < kNumRegions; ++r) CHECK(counts[r] > 0);
      for (size_t i = 0; i < b.masks[0].size(); ++i) {
        const int overlap = b.masks[0][i] + b.masks[1][i] + b.masks[2][i] + b.masks[3][i];
        REQUIRE(overlap <= 1);
      }
    }
  }
}

TEST_CASE("editor F never writes outside the mask plus a 2-pixel halo") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto b = gen_base_image(hash_seed(100, seed), 64);
    const int region = (int)(seed % kNumRegions);
    auto edited = apply_editor(b.img, b.masks, region, editor_paradigm('F'), hash_seed(seed, 1));
    // halo = two dilations of the mask
    Mask halo = b.masks[(size_t)region];
    for (int pass = 0; pass < 2; ++pass) {
      Mask next = halo;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (halo[(size_t)y * 64 + x]) continue;
          const bool nb = (x > 0 && halo[(size_t)y * 64 + x - 1]) ||
                          (x < 63 && halo[(size_t)y * 64 + x + 1]) ||
                          (y > 0 && halo[(size_t)(y - 1) * 64 + x]) ||
                          (y < 63 && halo[(size_t)(y + 1) * 64 + x]);
          if (nb) next[(size_t)y * 64 + x] = 1;
        }
      halo = next;
    }
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (!halo[(size_t)y * 64 + x]) REQUIRE(edited.at(c, y, x) == b.img.at(c, y, x));
  }
}

TEST_CASE("editor S perturbs most pixels outside its region") {
  int ok = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto b = gen_base_image(hash_seed(200, seed), 64);
    const int region = (int)(seed % kNumRegions);
    auto edited = apply_editor(b.img, b.masks, region, editor_paradigm('S'), hash_seed(seed, 2));
    int64_t outside = 0, changed = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (b.masks[(size_t)region][(size_t)y * 64 + x]) continue;
        ++outside;
        for (int c = 0; c < 3; ++c)
          if (edited.at(c, y, x) != b.img.at(c, y, x)) { ++changed; break; }
      }
    if ((double)changed / (double)outside > 0.5) ++ok;
  }
  CHECK(ok == 20);
}

TEST_CASE("editor D raises the region's high/low band-energy density ratio >= 3x") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto b = gen_base_image(hash_seed(300, seed), 64);
    const double before = region_high_low_energy_ratio(b.img, b.masks[kMouth]);
    auto edited = apply_editor(b.img, b.masks, kMouth, editor_paradigm('D'), hash_seed(seed, 3));
    const double after = region_high_low_energy_ratio(edited, b.masks[kMouth]);
    CHECK(after >= 3.0 * before);
  }
}

TEST_CASE("apply_editor rejects unknown regions and editors") {
  auto b = gen_base_image(1, 32);
  CHECK_THROWS_AS(apply_editor(b.img, b.masks, 7, editor_paradigm('S'), 1), std::invalid_argument);
  CHECK_THROWS_AS(editor_paradigm('X'), std::invalid_argument);
  CHECK_THROWS_AS(region_from_name("ear"), std::invalid_argument);
}

TEST_CASE("exactly 36 surjective editor assignments exist") {
  // brute force over 3^4
  int count = 0;
  for (int a = 0; a < 81; ++a) {
    int digits[4], v = a;
    bool seen[3] = {};
    for (int i = 0; i < 4; ++i) {
      digits[i] = v % 3;
      seen[digits[i]] = true;
      v /= 3;
    }
    if (seen[0] && seen[1] && seen[2]) ++count;
  }
  CHECK(count == 36);
}

TEST_CASE("sampled plans are always surjective and near-uniform") {
  Rng rng(77);
  std::map<std::string, int> freq;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto p = sample_plan(rng);
    bool seen[3] = {};
    for (char e : p.editors)
      for (int k = 0; k < 3; ++k)
        if (e == kEditorIds[k]) seen[k] = true;
    REQUIRE((seen[0] && seen[1] && seen[2]));
    // region order must be a permutation
    int rsum = 0;
    for (int r : p.region_order) rsum += 1 << r;
    REQUIRE(rsum == 15);
    freq[std::string(p.editors.begin(), p.editors.end())]++;
  }
  CHECK(freq.size() == 36);
  for (const auto& [seq, count] : freq) {
    const double f = (double)count / draws;
    CHECK(f == doctest::Approx(1.0 / 36).epsilon(0.36));  // 1/36 +- 0.01 absolute
    CHECK(std::fabs(f - 1.0 / 36) <= 0.01);
  }
}

TEST_CASE("quality score behaves as a contrast statistic") {
  Image constant(64, 64);
  for (auto& v : constant.px) v = 0.5f;
  CHECK(quality_score(constant) < 0.2f);

  auto b = gen_base_image(5, 64);
  CHECK(quality_score(b.img) > 0.2f);

  // horizontal flip invariance
  Image flipped(64, 64);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) flipped.at(c, y, x) = b.img.at(c, y, 63 - x);
  CHECK(quality_score(flipped) == doctest::Approx(quality_score(b.img)).epsilon(1e-6));
}

TEST_CASE("gen_dataset writes N sets, reproducibly, with in-mask stage changes") {
  GenConfig cfg;
  cfg.sets = 10;
  cfg.size = 32;
  cfg.seed = 42;
  auto dir_a = fresh_dir("mat_gen_a");
  auto dir_b = fresh_dir("mat_gen_b");
  cfg.out_dir = dir_a.string();
  auto m1 = gen_dataset(cfg);
  cfg.out_dir = dir_b.string();
  auto m2 = gen_dataset(cfg);

  CHECK(m1.records.size() == 10);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir_a))
    if (e.path().extension() == ".ppm") ++files;
  CHECK(files == 50);
  CHECK(read_file((dir_a / "manifest.jsonl").string()) ==
        read_file((dir_b / "manifest.jsonl").string()));
  for (const auto& rec : m1.records)
    CHECK(read_file((dir_a / rec.paths[3]).string()) == read_file((dir_b / rec.paths[3]).string()));

  // reload and verify the stage-k image changes inside the stage-k mask
  auto loaded = load_manifest((dir_a / "manifest.jsonl").string());
  REQUIRE(loaded.records.size() == 10);
  for (const auto& rec : loaded.records) {
    auto base = gen_base_image(rec.seed, cfg.size);
    for (int k = 1; k <= 4; ++k) {
      auto prev = load_ppm((dir_a / rec.paths[(size_t)k - 1]).string());
      auto cur = load_ppm((dir_a / rec.paths[(size_t)k]).string());
      const auto& mask = base.masks[(size_t)rec.region_order[(size_t)k - 1]];
      int64_t changed = 0;
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < cfg.size * cfg.size; ++i)
          if (mask[(size_t)i] && prev.px[(size_t)c * cfg.size * cfg.size + i] !=
                                     cur.px[(size_t)c * cfg.size * cfg.size + i])
            ++changed;
      CHECK(changed > 0);
    }
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("manifest round trip preserves records") {
  GeneratedSet gs = gen_set(9, 32);
  DatasetManifest m;
  m.size = 32;
  m.seed = 9;
  m.quality_threshold = 0.2f;
  SetRecord rec;
  rec.id = 0;
  rec.seed = 9;
  rec.region_order = gs.plan.region_order;
  rec.editors = gs.plan.editors;
  for (int k = 0; k < 5; ++k) rec.paths[(size_t)k] = "img" + std::to_string(k) + ".ppm";
  rec.quality = gs.quality;
  m.records.push_back(rec);
  auto path = (fs::temp_directory_path() / "mat_manifest_rt.jsonl").string();
  save_manifest(m, path);
  auto back = load_manifest(path);
  CHECK(back.records.size() == 1);
  CHECK(back.records[0].editors == rec.editors);
  CHECK(back.records[0].region_order == rec.region_order);
  CHECK(back.records[0].seed == rec.seed);
  fs::remove(path);
}

TEST_CASE("ppm io quantizes to 8 bits and round-trips") {
  GeneratedSet gs = gen_set(3, 32);
  auto path = (fs::temp_directory_path() / "mat_rt.ppm").string();
  save_ppm(gs.stages[2], path);
  auto back = load_ppm(path);
  REQUIRE(back.px.size() == gs.stages[2].px.size());
  for (size_t i = 0; i < back.px.size(); ++i)
    CHECK(std::fabs(back.px[i] - gs.stages[2].px[i]) <= 0.5f / 255.0f + 1e-6f);
  // a second save of the loaded image is byte-stable
  auto path2 = (fs::temp_directory_path() / "mat_rt2.ppm").string();
  save_ppm(back, path2);
  CHECK(read_file(path) == read_file(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("editor separability oracle reaches 95 percent") {
  CHECK(editor_separability_accuracy(42, 200, 200, 64) >= 0.95);
}

TEST_CASE("a final S edit pulls the spectrum toward the pure-S signature") {
  CHECK(overwrite_property_rate(42, 40, 64) >= 0.9);
}

TEST_CASE("edit detector separates edited from untouched regions") {
  double edited_min = 1e9, untouched_max = 0.0;
  for (uint64_t s = 0; s < 20; ++s) {
    GeneratedSet gs = gen_set(hash_seed(1234, s), 64);
    for (int k = 1; k <= 4; ++k)
      for (int j = 0; j < 4; ++j) {
        const int reg = gs.plan.region_order[(size_t)j];
        const double res = region_edit_residual(gs.stages[(size_t)k], gs.base.masks[(size_t)reg], 64, 64);
        if (j < k) edited_min = std::min(edited_min, res);
        else untouched_max = std::max(untouched_max, res);
      }
  }
  CHECK(edited_min > untouched_max * 2.0);
}
