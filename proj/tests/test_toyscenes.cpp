#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "test_support.hpp"
#include "udaforge/rng.hpp"
#include "udaforge/toyscenes.hpp"

using namespace udaforge;
using testsup::expect_error;
using testsup::TempDir;

namespace {

Sample fake_sample(int h, int w, std::vector<std::uint8_t> labels, int num_classes,
                   Domain d = Domain::source) {
  Sample s;
  s.image = Tensor::zeros({3, h, w});
  s.labels = {h, w, std::move(labels)};
  s.domain = d;
  s.num_classes = num_classes;
  s.seed = 0;
  return s;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("generate_scene is deterministic and well-formed") {
  SceneSpec spec = SceneSpec::defaults();
  for (Domain d : {Domain::source, Domain::target}) {
    Sample a = generate_scene(spec, d, 123);
    Sample b = generate_scene(spec, d, 123);
    CHECK(same_bits(a.image, b.image));
    CHECK(a.labels.v == b.labels.v);
    CHECK(a.seed == 123);
    CHECK(a.domain == d);
    for (double v : a.image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(static_cast<double>(static_cast<float>(v)) == v);  // float32-exact
    }
    for (std::uint8_t lab : a.labels.v) CHECK(lab < spec.num_classes);
  }
  Sample s1 = generate_scene(spec, Domain::source, 5);
  Sample s2 = generate_scene(spec, Domain::source, 6);
  CHECK_FALSE(same_bits(s1.image, s2.image));
}

TEST_CASE("bare spec yields only ground and sky") {
  SceneSpec spec = SceneSpec::defaults();
  for (DomainAppearance* a : {&spec.source, &spec.target}) {
    a->blocks_min = a->blocks_max = 0;
    a->objects_min = a->objects_max = 0;
    a->poles_min = a->poles_max = 0;
  }
  for (Domain d : {Domain::source, Domain::target}) {
    Sample s = generate_scene(spec, d, 77);
    std::set<std::uint8_t> seen(s.labels.v.begin(), s.labels.v.end());
    CHECK(seen == std::set<std::uint8_t>{0, 1});
  }
}

TEST_CASE("rare classes stay rare and earn high weights across 1000 samples") {
  SceneSpec spec = SceneSpec::defaults();
  std::vector<Sample> samples;
  samples.reserve(1000);
  for (int i = 0; i < 1000; ++i) samples.push_back(generate_scene(spec, Domain::source, 40000 + i));

  // independent per-pixel counting, bypassing class_frequencies
  std::vector<std::int64_t> counts(spec.num_classes, 0);
  std::int64_t total = 0;
  for (const Sample& s : samples)
    for (std::uint8_t lab : s.labels.v) {
      ++counts[lab];
      ++total;
    }
  const double pole_freq = static_cast<double>(counts[4]) / total;
  const double object_freq = static_cast<double>(counts[3]) / total;
  CHECK(pole_freq > 0.0);
  CHECK(pole_freq < 0.05);
  CHECK(object_freq + pole_freq < 0.05);

  ClassWeights cw = class_frequencies(samples);
  REQUIRE(cw.w.size() == 5);
  for (int c = 0; c < 5; ++c) {
    CHECK(cw.w[c] == doctest::Approx(1.0 - static_cast<double>(counts[c]) / total).epsilon(1e-12));
    CHECK(cw.w[c] >= 0.0);
    CHECK(cw.w[c] < 1.0);
  }
  CHECK(cw.w[3] > 0.95);
  CHECK(cw.w[4] > 0.95);
  double mass = 0.0;
  for (double w : cw.w) mass += 1.0 - w;
  CHECK(std::abs(mass - 1.0) < 1e-9);
}

TEST_CASE("class_frequencies matches hand examples") {
  Sample s = fake_sample(2, 2, {0, 0, 0, 1}, 2);
  ClassWeights cw = class_frequencies({s});
  CHECK(cw.w[0] == doctest::Approx(0.25));
  CHECK(cw.w[1] == doctest::Approx(0.75));

  Sample mono = fake_sample(2, 2, {1, 1, 1, 1}, 3);
  ClassWeights mw = class_frequencies({mono});
  CHECK(mw.w[0] == doctest::Approx(1.0));
  CHECK(mw.w[1] == doctest::Approx(0.0));
  CHECK(mw.w[2] == doctest::Approx(1.0));

  expect_error("data", "no samples", [] { class_frequencies({}); });
  expect_error("data", "void", [] {
    class_frequencies({fake_sample(1, 2, {255, 255}, 2)});
  });
  expect_error("data", "source-domain", [] {
    class_frequencies({fake_sample(1, 2, {0, 1}, 2, Domain::target)});
  });
}

TEST_CASE("one_hot encodes labels with void as all-zero") {
  Tensor t = one_hot({1, 1, {2}}, 4);
  CHECK(t.shape() == Shape{4, 1, 1});
  CHECK(t.values()[0] == 0.0);
  CHECK(t.values()[1] == 0.0);
  CHECK(t.values()[2] == 1.0);
  CHECK(t.values()[3] == 0.0);

  Tensor voids = one_hot({2, 3, std::vector<std::uint8_t>(6, 255)}, 4);
  for (double v : voids.values()) CHECK(v == 0.0);

  expect_error("data", ">= num_classes", [] { one_hot({1, 1, {7}}, 4); });

  Rng rng(55);
  LabelGrid grid{4, 5, {}};
  for (int i = 0; i < 20; ++i)
    grid.v.push_back(rng.uniform_int(0, 5) == 5 ? 255 : static_cast<std::uint8_t>(rng.uniform_int(0, 4)));
  Tensor hot = one_hot(grid, 5);
  for (int p = 0; p < 20; ++p) {
    double sum = 0.0;
    int arg = -1;
    for (int c = 0; c < 5; ++c) {
      const double v = hot.values()[c * 20 + p];
      sum += v;
      if (v == 1.0) arg = c;
    }
    if (grid.v[p] == 255) {
      CHECK(sum == 0.0);
    } else {
      CHECK(sum == 1.0);
      CHECK(arg == grid.v[p]);
    }
  }
}

TEST_CASE("sample files round-trip losslessly") {
  TempDir tmp("sample_io");
  SceneSpec spec = SceneSpec::defaults();
  Sample s = generate_scene(spec, Domain::target, 9001);
  const std::string path = tmp.sub("one.udas");
  write_sample(s, path);
  Sample r = read_sample(path);
  CHECK(same_bits(s.image, r.image));
  CHECK(s.labels.v == r.labels.v);
  CHECK(r.domain == Domain::target);
  CHECK(r.seed == 9001);
  CHECK(r.num_classes == 5);
}

TEST_CASE("sample reader rejects malformed files") {
  TempDir tmp("sample_bad");
  SceneSpec spec = SceneSpec::defaults();
  Sample s = generate_scene(spec, Domain::source, 3);
  const std::string good = tmp.sub("good.udas");
  write_sample(s, good);

  std::ifstream in(good, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string truncated = tmp.sub("trunc.udas");
  std::ofstream(truncated, std::ios::binary) << data.substr(0, data.size() / 2);
  expect_error("format", "truncated", [&] { read_sample(truncated); });

  const std::string badmagic = tmp.sub("magic.udas");
  std::string flipped = data;
  flipped[0] = 'X';
  std::ofstream(badmagic, std::ios::binary) << flipped;
  expect_error("format", "UDAS1", [&] { read_sample(badmagic); });

  const std::string overlong = tmp.sub("extra.udas");
  std::ofstream(overlong, std::ios::binary) << (data + "zz");
  expect_error("format", "trailing", [&] { read_sample(overlong); });

  expect_error("io", "cannot open", [&] { read_sample(tmp.sub("missing.udas")); });
}

TEST_CASE("write_dataset is reproducible and loadable") {
  TempDir tmp("dataset");
  SceneSpec spec = SceneSpec::defaults();
  spec.height = spec.width = 32;
  write_dataset(tmp.sub("a"), spec, Domain::source, 4, 7);
  write_dataset(tmp.sub("b"), spec, Domain::source, 4, 7);

  namespace fs = std::filesystem;
  int files = 0;
  for (const auto& e : fs::directory_iterator(tmp.sub("a"))) {
    ++files;
    std::ifstream fa(e.path(), std::ios::binary);
    std::ifstream fb(fs::path(tmp.sub("b")) / e.path().filename(), std::ios::binary);
    REQUIRE(static_cast<bool>(fb));
    std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(da == db);
  }
  CHECK(files == 5);  // 4 samples + meta.json

  auto loaded = load_dataset(tmp.sub("a"), false);
  REQUIRE(loaded.size() == 4);
  CHECK(loaded[0].labels.h == 32);

  auto stripped = load_dataset(tmp.sub("a"), true);
  for (const Sample& s : stripped)
    for (std::uint8_t lab : s.labels.v) CHECK(lab == 255);

  write_dataset(tmp.sub("empty"), spec, Domain::target, 0, 9);
  CHECK(load_dataset(tmp.sub("empty"), false).empty());
  CHECK(fs::exists(fs::path(tmp.sub("empty")) / "meta.json"));
}

TEST_CASE("scene spec json survives a round trip and rejects junk") {
  SceneSpec spec = SceneSpec::defaults();
  spec.height = 32;
  spec.freq_skew = 0.25;
  SceneSpec back = scene_spec_from_json(scene_spec_to_json(spec));
  CHECK(back.height == 32);
  CHECK(back.freq_skew == doctest::Approx(0.25));
  CHECK(back.source.palette == spec.source.palette);

  expect_error("config", "unknown key", [] { scene_spec_from_json("{\"bogus\": 1}"); });
  expect_error("config", "multiples of 8", [] { scene_spec_from_json("{\"height\": 30}"); });
  expect_error("config", "not valid JSON", [] { scene_spec_from_json("{"); });
}
