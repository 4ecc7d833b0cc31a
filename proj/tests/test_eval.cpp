#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"
#include "udaforge/eval.hpp"
#include "udaforge/nets.hpp"

using namespace udaforge;
using testsup::expect_error;
using testsup::TempDir;

namespace {

std::string slurp_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LabelGrid grid(int h, int w, std::vector<std::uint8_t> v) {
  LabelGrid g;
  g.h = h;
  g.w = w;
  g.v = std::move(v);
  return g;
}

LabelGrid rand_grid(int h, int w, int num_classes, Rng& rng, double void_frac) {
  LabelGrid g;
  g.h = h;
  g.w = w;
  g.v.resize(static_cast<std::size_t>(h) * w);
  for (auto& x : g.v) {
    if (rng.uniform(0.0, 1.0) < void_frac)
      x = kVoidLabel;
    else
      x = static_cast<std::uint8_t>(rng.uniform_int(0, num_classes - 1));
  }
  return g;
}

// Set-based reference: per class, intersection and union counted directly
// over pixel indices with void ground truth excluded.
MiouResult set_miou(const LabelGrid& pred, const LabelGrid& gt, int num_classes) {
  MiouResult r;
  r.per_class.resize(num_classes);
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.v.size(); ++i) {
      if (gt.v[i] == kVoidLabel) continue;
      const bool in_pred = pred.v[i] == c;
      const bool in_gt = gt.v[i] == c;
      if (in_pred && in_gt) ++inter;
      if (in_pred || in_gt) ++uni;
    }
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += *r.per_class[c];
    ++defined;
  }
  r.mean = defined > 0 ? sum / defined : 0.0;
  return r;
}

Metrics sample_metrics() {
  Metrics m;
  m.checkpoint = "ck/checkpoint_final.udac";
  m.dataset = "data/eval";
  m.per_class = {0.75, std::nullopt, 0.125, 1.0 / 3.0};
  m.miou = (0.75 + 0.125 + 1.0 / 3.0) / 3.0;
  m.pixels_evaluated = 12345;
  return m;
}

// Minimal well-formedness scan for the SVG output: every opened tag is closed
// in order and attribute quotes balance.
void check_xml(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '<') {
      REQUIRE(text[i] != '>');
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    bool in_quote = false;
    while (j < text.size() && (in_quote || text[j] != '>')) {
      if (text[j] == '"') in_quote = !in_quote;
      ++j;
    }
    REQUIRE(j < text.size());
    REQUIRE(!in_quote);
    std::string tag = text.substr(i + 1, j - i - 1);
    if (!tag.empty() && tag[0] == '/') {
      REQUIRE(!stack.empty());
      REQUIRE(stack.back() == tag.substr(1));
      stack.pop_back();
    } else if (!tag.empty() && tag.back() != '/') {
      stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
    }
    i = j + 1;
  }
  REQUIRE(stack.empty());
}

}  // namespace

TEST_CASE("confusion matrix counts pixels and skips void") {
  ConfusionMatrix cm(3);
  CHECK(cm.total() == 0);

  SUBCASE("perfect prediction is diagonal") {
    LabelGrid gt = grid(2, 3, {0, 1, 2, 2, 1, 0});
    confusion_accumulate(gt, gt, cm);
    CHECK(cm.total() == 6);
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(2, 2) == 2);
    CHECK(cm.at(0, 1) == 0);
  }

  SUBCASE("void ground truth contributes nothing") {
    LabelGrid gt = grid(2, 2, {kVoidLabel, kVoidLabel, kVoidLabel, kVoidLabel});
    LabelGrid pred = grid(2, 2, {0, 1, 2, 0});
    confusion_accumulate(pred, gt, cm);
    CHECK(cm.total() == 0);
  }

  SUBCASE("mixed grid lands in the right cells") {
    LabelGrid gt = grid(1, 4, {0, 0, 1, kVoidLabel});
    LabelGrid pred = grid(1, 4, {0, 2, 1, 2});
    confusion_accumulate(pred, gt, cm);
    CHECK(cm.total() == 3);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 2) == 1);
    CHECK(cm.at(1, 1) == 1);
  }

  SUBCASE("errors") {
    expect_error("shape", "different sizes", [&] {
      LabelGrid a = grid(2, 2, {0, 0, 0, 0});
      LabelGrid b = grid(1, 4, {0, 0, 0, 0});
      confusion_accumulate(a, b, cm);
    });
    expect_error("data", "ground-truth label 7", [&] {
      LabelGrid gt = grid(1, 1, {7});
      LabelGrid pred = grid(1, 1, {0});
      confusion_accumulate(pred, gt, cm);
    });
    expect_error("data", "predicted label 9", [&] {
      LabelGrid gt = grid(1, 1, {1});
      LabelGrid pred = grid(1, 1, {9});
      confusion_accumulate(pred, gt, cm);
    });
    expect_error("config", "at least 2", [] { ConfusionMatrix bad(1); });
  }
}

TEST_CASE("confusion accumulation matches a per-pixel counting oracle") {
  Rng rng(501);
  for (int trial = 0; trial < 50; ++trial) {
    const int C = rng.uniform_int(2, 6);
    const int h = rng.uniform_int(3, 10), w = rng.uniform_int(3, 10);
    LabelGrid gt = rand_grid(h, w, C, rng, 0.2);
    LabelGrid pred = rand_grid(h, w, C, rng, 0.0);
    ConfusionMatrix cm(C);
    confusion_accumulate(pred, gt, cm);

    std::vector<std::int64_t> want(static_cast<std::size_t>(C) * C, 0);
    std::int64_t kept = 0;
    for (std::size_t i = 0; i < gt.v.size(); ++i) {
      if (gt.v[i] == kVoidLabel) continue;
      ++want[static_cast<std::size_t>(gt.v[i]) * C + pred.v[i]];
      ++kept;
    }
    REQUIRE(cm.counts == want);
    REQUIRE(cm.total() == kept);
  }
}

TEST_CASE("miou hand values") {
  SUBCASE("perfect two-class prediction") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 5;
    cm.at(1, 1) = 7;
    MiouResult r = miou(cm);
    CHECK(*r.per_class[0] == 1.0);
    CHECK(*r.per_class[1] == 1.0);
    CHECK(r.mean == 1.0);
  }

  SUBCASE("symmetric confusion") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 3;
    MiouResult r = miou(cm);
    // row + col - diag = 4 + 4 - 3
    CHECK(*r.per_class[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(*r.per_class[1] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r.mean == doctest::Approx(0.6).epsilon(1e-15));
  }

  SUBCASE("absent class is excluded from the mean") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 2;
    cm.at(1, 1) = 2;
    MiouResult r = miou(cm);
    CHECK(!r.per_class[2].has_value());
    CHECK(r.mean == 1.0);
  }

  SUBCASE("empty matrix has mean zero") {
    ConfusionMatrix cm(4);
    MiouResult r = miou(cm);
    for (const auto& v : r.per_class) CHECK(!v.has_value());
    CHECK(r.mean == 0.0);
  }
}

TEST_CASE("miou equals the set-based intersection-over-union exactly") {
  Rng rng(733);
  for (int trial = 0; trial < 100; ++trial) {
    const int C = rng.uniform_int(2, 7);
    const int h = rng.uniform_int(4, 15), w = rng.uniform_int(4, 15);
    // occasional skew so some classes vanish entirely
    const int active = trial % 3 == 0 ? rng.uniform_int(1, C) : C;
    LabelGrid gt = rand_grid(h, w, active, rng, trial % 4 == 0 ? 0.6 : 0.15);
    LabelGrid pred = rand_grid(h, w, active, rng, 0.0);

    ConfusionMatrix cm(C);
    confusion_accumulate(pred, gt, cm);
    MiouResult got = miou(cm);
    MiouResult want = set_miou(pred, gt, C);

    REQUIRE(got.per_class.size() == want.per_class.size());
    for (int c = 0; c < C; ++c) {
      REQUIRE(got.per_class[c].has_value() == want.per_class[c].has_value());
      if (got.per_class[c]) REQUIRE(*got.per_class[c] == *want.per_class[c]);
    }
    REQUIRE(got.mean == want.mean);
  }
}

TEST_CASE("miou is equivariant under class relabeling") {
  Rng rng(894);
  const int C = 5, h = 12, w = 9;
  LabelGrid gt = rand_grid(h, w, C, rng, 0.2);
  LabelGrid pred = rand_grid(h, w, C, rng, 0.0);

  std::vector<int> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = C - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);

  auto apply = [&](const LabelGrid& g) {
    LabelGrid out = g;
    for (auto& v : out.v)
      if (v != kVoidLabel) v = static_cast<std::uint8_t>(perm[v]);
    return out;
  };

  ConfusionMatrix cm(C), cmp(C);
  confusion_accumulate(pred, gt, cm);
  confusion_accumulate(apply(pred), apply(gt), cmp);
  MiouResult base = miou(cm);
  MiouResult relabeled = miou(cmp);

  for (int c = 0; c < C; ++c) {
    REQUIRE(base.per_class[c].has_value() == relabeled.per_class[perm[c]].has_value());
    if (base.per_class[c]) REQUIRE(*base.per_class[c] == *relabeled.per_class[perm[c]]);
  }
  CHECK(std::abs(base.mean - relabeled.mean) < 1e-12);
}

TEST_CASE("evaluate_checkpoint scores a generator over a dataset") {
  TempDir dir("eval_ckpt");
  SceneSpec spec = SceneSpec::defaults();
  spec.height = 32;
  spec.width = 32;
  write_dataset(dir.sub("data"), spec, Domain::source, 6, 42);

  GeneratorParams G = GeneratorParams::init(spec.num_classes, 9);
  const std::string ck = dir.sub("g.udac");
  save_checkpoint(G.named(), ck);

  Metrics m = evaluate_checkpoint(ck, dir.sub("data"));
  CHECK(m.checkpoint == ck);
  CHECK(m.dataset == dir.sub("data"));
  CHECK(static_cast<int>(m.per_class.size()) == spec.num_classes);
  for (const auto& v : m.per_class) {
    if (v) {
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  }
  // an untrained generator should be near chance level
  CHECK(m.miou < 0.3);

  std::int64_t labeled = 0;
  for (const Sample& s : load_dataset(dir.sub("data"), false))
    for (auto v : s.labels.v)
      if (v != kVoidLabel) ++labeled;
  CHECK(m.pixels_evaluated == labeled);

  Metrics again = evaluate_checkpoint(ck, dir.sub("data"));
  CHECK(again.miou == m.miou);
  CHECK(again.pixels_evaluated == m.pixels_evaluated);
  for (std::size_t c = 0; c < m.per_class.size(); ++c)
    CHECK(again.per_class[c] == m.per_class[c]);

  GeneratorParams G4 = GeneratorParams::init(4, 9);
  const std::string ck4 = dir.sub("g4.udac");
  save_checkpoint(G4.named(), ck4);
  expect_error("shape", "checkpoint has 4 classes", [&] {
    evaluate_checkpoint(ck4, dir.sub("data"));
  });
}

TEST_CASE("metrics json writes a stable schema and round-trips") {
  TempDir dir("metrics_json");
  const Metrics m = sample_metrics();
  const std::string path = dir.sub("metrics.json");
  write_metrics_json(m, path);

  const std::string text = slurp_text(path);
  CHECK(text.find("\"checkpoint\": \"ck/checkpoint_final.udac\"") != std::string::npos);
  CHECK(text.find("\"iou\": null") != std::string::npos);
  CHECK(text.find("\"pixels_evaluated\": 12345") != std::string::npos);
  CHECK(text.back() == '\n');

  Metrics r = read_metrics_json(path);
  CHECK(r.checkpoint == m.checkpoint);
  CHECK(r.dataset == m.dataset);
  CHECK(r.miou == m.miou);
  CHECK(r.pixels_evaluated == m.pixels_evaluated);
  REQUIRE(r.per_class.size() == m.per_class.size());
  for (std::size_t c = 0; c < m.per_class.size(); ++c) CHECK(r.per_class[c] == m.per_class[c]);

  SUBCASE("unknown keys are rejected") {
    std::ofstream(dir.sub("bad.json")) << "{\"miou\": 0.5, \"surprise\": 1}\n";
    expect_error("config", "unknown key \"surprise\"", [&] {
      read_metrics_json(dir.sub("bad.json"));
    });
  }
  SUBCASE("per_class rows need an iou field") {
    std::ofstream(dir.sub("bad2.json"))
        << "{\"checkpoint\":\"c\",\"dataset\":\"d\",\"per_class\":[{\"class\":0}],"
           "\"miou\":0,\"pixels_evaluated\":0}\n";
    expect_error("format", "iou field", [&] { read_metrics_json(dir.sub("bad2.json")); });
  }
  SUBCASE("missing file") {
    expect_error("io", "cannot open", [&] { read_metrics_json(dir.sub("nope.json")); });
  }
  SUBCASE("not json") {
    std::ofstream(dir.sub("garbage.json")) << "]]]";
    expect_error("config", "not valid JSON", [&] {
      read_metrics_json(dir.sub("garbage.json"));
    });
  }
}

TEST_CASE("train log jsonl round-trips") {
  TempDir dir("log_jsonl");
  TrainLog log;
  for (int i = 0; i < 3; ++i) {
    TrainStepRecord r;
    r.step = i;
    r.lr = 1e-4 * (3 - i);
    r.l_g1 = 1.5 + 0.25 * i;
    r.l_g2_s = 0.01 * i;
    r.l_g2_t = 0.002 * i;
    r.l_g3 = i == 2 ? 0.375 : 0.0;
    r.l_d = 1.25;
    r.mask_fraction = 0.5 * i;
    r.ms = 12.125;  // exact at three decimals
    log.steps.push_back(r);
  }
  const std::string path = dir.sub("train_log.jsonl");
  write_train_log_jsonl(log, path);

  TrainLog r = read_train_log_jsonl(path);
  REQUIRE(r.steps.size() == log.steps.size());
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    CHECK(r.steps[i].step == log.steps[i].step);
    CHECK(r.steps[i].lr == log.steps[i].lr);
    CHECK(r.steps[i].l_g1 == log.steps[i].l_g1);
    CHECK(r.steps[i].l_g2_s == log.steps[i].l_g2_s);
    CHECK(r.steps[i].l_g2_t == log.steps[i].l_g2_t);
    CHECK(r.steps[i].l_g3 == log.steps[i].l_g3);
    CHECK(r.steps[i].l_d == log.steps[i].l_d);
    CHECK(r.steps[i].mask_fraction == log.steps[i].mask_fraction);
    CHECK(r.steps[i].ms == log.steps[i].ms);
  }

  SUBCASE("malformed line is reported with its number") {
    std::ofstream(dir.sub("bad.jsonl")) << "{\"step\":0}\nnot json\n";
    expect_error("config", "line 2", [&] { read_train_log_jsonl(dir.sub("bad.jsonl")); });
  }
}

TEST_CASE("report emission is deterministic and well-formed") {
  TempDir dir("report");
  TrainLog log;
  Rng rng(61);
  for (int i = 0; i < 40; ++i) {
    TrainStepRecord r;
    r.step = i;
    r.lr = 1e-4;
    r.l_g1 = 2.0 * std::exp(-0.05 * i) + rng.uniform(0.0, 0.05);
    r.l_g2_s = 0.01 + rng.uniform(0.0, 0.005);
    r.l_g2_t = 0.001;
    r.l_g3 = i >= 10 ? 0.2 : 0.0;
    r.l_d = 1.3 + rng.uniform(-0.1, 0.1);
    r.mask_fraction = i >= 10 ? 0.4 : 0.0;
    r.ms = 5.0;
    log.steps.push_back(r);
  }
  const Metrics m = sample_metrics();

  emit_report(log, m, dir.sub("out"));
  for (const char* name : {"metrics.json", "per_class.csv", "loss_curves.svg", "mask_fraction.svg"})
    CHECK(std::filesystem::exists(std::filesystem::path(dir.sub("out")) / name));

  const std::string csv = slurp_text(dir.sub("out") + "/per_class.csv");
  CHECK(csv.rfind("class,iou\n", 0) == 0);
  CHECK(csv.find("0,0.75\n") != std::string::npos);
  CHECK(csv.find("\n1,\n") != std::string::npos);  // undefined class stays empty

  const std::string losses = slurp_text(dir.sub("out") + "/loss_curves.svg");
  const std::string mask = slurp_text(dir.sub("out") + "/mask_fraction.svg");
  check_xml(losses);
  check_xml(mask);
  CHECK(losses.find("<polyline") != std::string::npos);
  CHECK(losses.find("l_g2_t") != std::string::npos);
  CHECK(mask.find("mask_fraction") != std::string::npos);

  SUBCASE("regeneration into the same directory is byte-identical") {
    const std::string before_json = slurp_text(dir.sub("out") + "/metrics.json");
    emit_report(log, m, dir.sub("out"));
    CHECK(slurp_text(dir.sub("out") + "/metrics.json") == before_json);
    CHECK(slurp_text(dir.sub("out") + "/loss_curves.svg") == losses);
    CHECK(slurp_text(dir.sub("out") + "/mask_fraction.svg") == mask);
    CHECK(slurp_text(dir.sub("out") + "/per_class.csv") == csv);
  }

  SUBCASE("empty log still renders a valid plot") {
    emit_report(TrainLog{}, m, dir.sub("empty"));
    const std::string svg = slurp_text(dir.sub("empty") + "/loss_curves.svg");
    check_xml(svg);
    CHECK(svg.find("<polyline") == std::string::npos);
    CHECK(svg.find("l_d") != std::string::npos);  // legend survives
  }
}
