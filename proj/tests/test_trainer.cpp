#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"
#include "udaforge/trainer.hpp"

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

SceneSpec small_spec() {
  SceneSpec s = SceneSpec::defaults();
  s.height = 32;
  s.width = 32;
  return s;
}

void gen_pair(const TempDir& dir, int count, std::uint64_t seed) {
  SceneSpec s = small_spec();
  write_dataset(dir.sub("src"), s, Domain::source, count, seed);
  write_dataset(dir.sub("tgt"), s, Domain::target, count, seed + 1);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.total_steps = 6;
  cfg.warmup_steps = 2;
  cfg.batch_size = 2;
  cfg.seed = 77;
  cfg.checkpoint_every = 3;
  return cfg;
}

bool records_equal_modulo_ms(const TrainLog& a, const TrainLog& b) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto& x = a.steps[i];
    const auto& y = b.steps[i];
    if (x.step != y.step || x.lr != y.lr || x.l_g1 != y.l_g1 || x.l_g2_s != y.l_g2_s ||
        x.l_g2_t != y.l_g2_t || x.l_g3 != y.l_g3 || x.l_d != y.l_d ||
        x.mask_fraction != y.mask_fraction)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("poly_lr endpoints are exact and the sequence never increases") {
  TrainConfig cfg;
  cfg.total_steps = 2000;
  CHECK(poly_lr(0, cfg) == 1e-4);
  CHECK(poly_lr(2000, cfg) == 1e-6);

  const double want =
      (1e-4 - 1e-6) * std::pow(1.0 - 1000.0 / 2000.0, 0.9) + 1e-6;
  CHECK(std::abs(poly_lr(1000, cfg) - want) < 1e-12);

  double prev = poly_lr(0, cfg);
  for (int s = 1; s <= 2000; ++s) {
    const double lr = poly_lr(s, cfg);
    REQUIRE(lr <= prev);
    prev = lr;
  }

  expect_error("usage", "[0, total_steps]", [&] { poly_lr(-1, cfg); });
  expect_error("usage", "[0, total_steps]", [&] { poly_lr(2001, cfg); });
}

TEST_CASE("sgd momentum recurrence") {
  Tensor p = Tensor::from_values({1}, {1.0}, true);
  p.grad_mut()[0] = 0.5;
  SgdMomentum plain({p}, 0.0, 0.0);
  plain.step(0.1);
  CHECK(p.values()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK((!p.has_grad() || p.grad()[0] == 0.0));

  Tensor q = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  SgdMomentum opt({q}, 0.9, 0.0);
  opt.step(0.1);
  CHECK(q.values()[0] == 1.0);
  CHECK(q.values()[1] == -2.0);
  CHECK(q.values()[2] == 0.5);

  // scalar recurrence oracle across several steps with momentum and decay
  const double mu = 0.9, wd = 1e-2, lr = 0.05, g = 0.3;
  Tensor r = Tensor::from_values({1}, {2.0}, true);
  SgdMomentum opt2({r}, mu, wd);
  double theta = 2.0, v = 0.0;
  for (int step = 0; step < 5; ++step) {
    r.grad_mut()[0] = g;
    opt2.step(lr);
    v = mu * v + g + wd * theta;
    theta -= lr * v;
    REQUIRE(r.values()[0] == doctest::Approx(theta).epsilon(1e-15));
  }
}

TEST_CASE("adam first-step bound, idle state, scalar oracle") {
  Rng rng(12);
  Tensor p = testsup::rand_tensor({4, 3}, rng, -1.0, 1.0, true);
  std::vector<double> before(p.values().begin(), p.values().end());
  p.zero_grad();
  for (auto& gv : p.grad_mut()) gv = rng.uniform(-5.0, 5.0);
  Adam opt({p}, 0.9, 0.999, 1e-8);
  const double lr = 3e-3;
  opt.step(lr);
  for (std::size_t i = 0; i < p.size(); ++i)
    REQUIRE(std::abs(p.values()[i] - before[i]) <= lr * (1.0 + 1e-6));

  Tensor q = Tensor::from_values({2}, {1.5, -0.5}, true);
  Adam idle({q}, 0.9, 0.999, 1e-8);
  idle.step(0.01);
  CHECK(q.values()[0] == 1.5);
  CHECK(q.values()[1] == -0.5);

  // quadratic f = theta^2 / 2 against a scalar reference
  Tensor t = Tensor::from_values({1}, {1.0}, true);
  Adam opt2({t}, 0.9, 0.999, 1e-8);
  double theta = 1.0, m = 0.0, v = 0.0;
  for (int step = 1; step <= 10; ++step) {
    t.grad_mut()[0] = t.values()[0];
    opt2.step(0.1);
    const double g = theta;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.1 * (m / (1.0 - std::pow(0.9, step))) /
             (std::sqrt(v / (1.0 - std::pow(0.999, step))) + 1e-8);
    REQUIRE(std::abs(t.values()[0] - theta) < 1e-12);
  }
}

TEST_CASE("checkpoints round-trip losslessly and reject corruption") {
  TempDir dir("ckpt");
  GeneratorParams g = GeneratorParams::init(4, 99);
  DiscriminatorParams d = DiscriminatorParams::init(4, 100);
  std::vector<NamedTensor> named = g.named();
  auto dn = d.named();
  named.insert(named.end(), dn.begin(), dn.end());
  const std::string path = dir.sub("a.udac");
  save_checkpoint(named, path);

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    CHECK(loaded[i].first == named[i].first);
    REQUIRE(loaded[i].second.shape() == named[i].second.shape());
    CHECK(std::memcmp(loaded[i].second.values().data(), named[i].second.values().data(),
                      named[i].second.size() * sizeof(double)) == 0);
  }

  GeneratorParams back = generator_from_checkpoint(path);
  Rng rng(3);
  Tensor img = testsup::rand_tensor({1, 3, 16, 16}, rng, 0.0, 1.0, false);
  Graph ga(false), gb(false);
  Tensor outa = generator_forward(ga, g, img);
  Tensor outb = generator_forward(gb, back, img);
  CHECK(std::memcmp(outa.values().data(), outb.values().data(),
                    outa.size() * sizeof(double)) == 0);

  std::string bytes = slurp_text(path);
  bytes[0] = 'X';
  std::ofstream(dir.sub("bad_magic.udac"), std::ios::binary) << bytes;
  expect_error("format", "bad magic", [&] { load_checkpoint(dir.sub("bad_magic.udac")); });
  std::ofstream(dir.sub("short.udac"), std::ios::binary)
      << slurp_text(path).substr(0, 40);
  expect_error("format", "truncated", [&] { load_checkpoint(dir.sub("short.udac")); });
  expect_error("io", "cannot open", [&] { load_checkpoint(dir.sub("missing.udac")); });

  save_checkpoint(d.named(), dir.sub("d_only.udac"));
  expect_error("format", "G.head.weight", [&] {
    generator_from_checkpoint(dir.sub("d_only.udac"));
  });
}

TEST_CASE("train writes logs and checkpoints with the documented layout") {
  TempDir dir("train");
  gen_pair(dir, 6, 400);
  TrainConfig cfg = tiny_config();
  TrainLog log = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out"));

  REQUIRE(log.steps.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(log.steps[i].step == i);
    CHECK(log.steps[i].ms >= 0.0);
    CHECK(log.steps[i].l_g1 > 0.0);
    CHECK(log.steps[i].l_d > 0.0);
  }
  CHECK(log.steps[0].l_g3 == 0.0);
  CHECK(log.steps[1].l_g3 == 0.0);
  CHECK(log.steps[0].mask_fraction == 0.0);
  CHECK(log.steps[0].lr == 1e-4);
  for (int i = 1; i < 6; ++i) REQUIRE(log.steps[i].lr <= log.steps[i - 1].lr);

  const std::string csv = slurp_text(dir.sub("out/train_log.csv"));
  CHECK(csv.rfind("step,lr,l_g1,l_g2_s,l_g2_t,l_g3,l_d,mask_fraction,ms\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  const std::string jsonl = slurp_text(dir.sub("out/train_log.jsonl"));
  std::stringstream lines(jsonl);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    REQUIRE(j["step"] == rows);
    REQUIRE(j.contains("mask_fraction"));
    REQUIRE(j.contains("l_d"));
    ++rows;
  }
  CHECK(rows == 6);

  CHECK(std::filesystem::exists(dir.sub("out/checkpoint_000003.udac")));
  CHECK(std::filesystem::exists(dir.sub("out/checkpoint_000006.udac")));
  CHECK(std::filesystem::exists(dir.sub("out/checkpoint_final.udac")));
  CHECK(slurp_text(dir.sub("out/checkpoint_000006.udac")) ==
        slurp_text(dir.sub("out/checkpoint_final.udac")));
}

TEST_CASE("same seed, same trajectory; different seed diverges") {
  TempDir dir("det");
  gen_pair(dir, 5, 41);
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 4;
  cfg.warmup_steps = 1;
  TrainLog a = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out_a"));
  TrainLog b = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out_b"));
  CHECK(records_equal_modulo_ms(a, b));
  CHECK(slurp_text(dir.sub("out_a/checkpoint_final.udac")) ==
        slurp_text(dir.sub("out_b/checkpoint_final.udac")));

  cfg.seed = 78;
  TrainLog c = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out_c"));
  CHECK(!records_equal_modulo_ms(a, c));
}

TEST_CASE("supervised ablation never touches the adversarial path") {
  TempDir dir("sup");
  gen_pair(dir, 5, 42);
  TrainConfig cfg = tiny_config();
  cfg.enable_adv = false;
  cfg.enable_self_teach = false;
  TrainLog log = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out"));
  for (const auto& r : log.steps) {
    REQUIRE(r.l_g2_s == 0.0);
    REQUIRE(r.l_g2_t == 0.0);
    REQUIRE(r.l_g3 == 0.0);
    REQUIRE(r.l_d == 0.0);
    REQUIRE(r.mask_fraction == 0.0);
    REQUIRE(r.l_g1 > 0.0);
  }
}

TEST_CASE("during warm-up the trajectory matches a w'=0 run bit for bit") {
  TempDir dir("warm");
  gen_pair(dir, 5, 43);
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 4;
  cfg.warmup_steps = 4;  // the whole run is warm-up
  cfg.checkpoint_every = 2;
  TrainLog a = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out_a"));
  TrainConfig cfg0 = cfg;
  cfg0.loss.w_prime = 0.0;
  TrainLog b = train(cfg0, dir.sub("src"), dir.sub("tgt"), dir.sub("out_b"));
  CHECK(records_equal_modulo_ms(a, b));
  CHECK(slurp_text(dir.sub("out_a/checkpoint_000002.udac")) ==
        slurp_text(dir.sub("out_b/checkpoint_000002.udac")));
  CHECK(slurp_text(dir.sub("out_a/checkpoint_final.udac")) ==
        slurp_text(dir.sub("out_b/checkpoint_final.udac")));
}

TEST_CASE("target labels are stripped before the loop can see them") {
  TempDir dir("fire");
  gen_pair(dir, 5, 44);
  // corrupt every target label file, keeping images identical
  for (int i = 0; i < 5; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "tgt/sample_%05d.udas", i);
    Sample s = read_sample(dir.sub(name));
    Rng vandal(1000 + i);
    for (auto& v : s.labels.v)
      v = static_cast<std::uint8_t>(vandal.uniform_int(0, s.num_classes - 1));
    write_sample(s, dir.sub(name));
  }
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 4;
  TrainLog corrupted = train(cfg, dir.sub("src"), dir.sub("tgt"), dir.sub("out_bad"));

  TempDir clean("fireclean");
  gen_pair(clean, 5, 44);
  TrainLog pristine = train(cfg, clean.sub("src"), clean.sub("tgt"), clean.sub("out_ok"));
  CHECK(records_equal_modulo_ms(corrupted, pristine));
  CHECK(slurp_text(dir.sub("out_bad/checkpoint_final.udac")) ==
        slurp_text(clean.sub("out_ok/checkpoint_final.udac")));
}

TEST_CASE("config validation names the offending field") {
  TrainConfig cfg;
  cfg.warmup_steps = cfg.total_steps + 1;
  expect_error("config", "warmup_steps", [&] { cfg.validate(); });
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  expect_error("config", "batch_size", [&] { cfg.validate(); });
  cfg = TrainConfig{};
  cfg.lr_end = 1.0;
  expect_error("config", "lr_end", [&] { cfg.validate(); });
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  expect_error("config", "momentum", [&] { cfg.validate(); });
  cfg = TrainConfig{};
  cfg.mask.t_u = 2.0;
  expect_error("config", "t_u", [&] { cfg.validate(); });

  TempDir dir("val");
  SceneSpec s = small_spec();
  write_dataset(dir.sub("src"), s, Domain::source, 0, 1);
  write_dataset(dir.sub("tgt"), s, Domain::target, 2, 2);
  TrainConfig ok = tiny_config();
  expect_error("data", "empty", [&] { train(ok, dir.sub("src"), dir.sub("tgt"), dir.sub("o")); });
}
