#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "udaforge/config.hpp"
#include "udaforge/rng.hpp"
#include "udaforge/confmask.hpp"
#include "udaforge/eval.hpp"
#include "udaforge/toyscenes.hpp"
#include "udaforge/trainer.hpp"

namespace fs = std::filesystem;
using namespace udaforge;

namespace {

std::string slurp_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "io", std::string(what) + ": cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spew_file(const std::string& path, const std::string& text, const char* what) {
  std::ofstream out(path, std::ios::binary);
  check(static_cast<bool>(out), "io", std::string(what) + ": cannot open " + path + " for writing");
  out << text;
  check(!out.bad(), "io", std::string(what) + ": write failed for " + path);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct CommonFlags {
  std::string config_path;
  std::string source, target, out;
  std::string preset;
  std::uint64_t seed = 0;
};

bool flag_given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* o = sub->get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

// flag > UDA_FORGE_SEED > config file
void resolve_seed(const CLI::App* sub, const CommonFlags& fl, std::uint64_t& dst) {
  if (const char* env = std::getenv("UDA_FORGE_SEED")) {
    std::string s(env);
    std::uint64_t v = 0;
    try {
      std::size_t used = 0;
      v = std::stoull(s, &used);
      check(used == s.size() && !s.empty(), "usage", "");
    } catch (...) {
      fail("usage", "UDA_FORGE_SEED must be an unsigned integer, got \"" + s + "\"");
    }
    dst = v;
  }
  if (flag_given(sub, "--seed")) dst = fl.seed;
}

RunConfig load_config_or_default(const CommonFlags& fl) {
  RunConfig cfg;
  if (!fl.config_path.empty()) cfg = load_run_config(fl.config_path);
  return cfg;
}

void apply_path_flags(const CLI::App* sub, const CommonFlags& fl, RunConfig& cfg) {
  if (flag_given(sub, "--source")) cfg.source = fl.source;
  if (flag_given(sub, "--target")) cfg.target = fl.target;
  if (flag_given(sub, "--out")) cfg.out = fl.out;
}

void progress_printer(const TrainStepRecord& r, int total) {
  if ((r.step + 1) % 100 != 0 && r.step + 1 != total) return;
  std::printf("step %6d/%d  lr %.3e  l_g1 %.4f  l_g2_s %.4f  l_g2_t %.4f  l_g3 %.4f  l_d %.4f  mask %.3f\n",
              r.step + 1, total, r.lr, r.l_g1, r.l_g2_s, r.l_g2_t, r.l_g3, r.l_d,
              r.mask_fraction);
  std::fflush(stdout);
}

void cmd_gen_data(const CommonFlags& fl, const CLI::App* sub, int count_source, int count_target,
                  bool force) {
  RunConfig cfg = load_config_or_default(fl);
  apply_path_flags(sub, fl, cfg);
  std::uint64_t seed = cfg.train.seed;
  resolve_seed(sub, fl, seed);
  check(!cfg.out.empty(), "usage", "gen-data needs --out (or an \"out\" entry in the config)");
  if (fs::exists(cfg.out) && !fs::is_empty(cfg.out) && !force)
    fail("io", "output directory " + cfg.out + " already exists and is not empty (use --force)");
  write_dataset((fs::path(cfg.out) / "source").string(), cfg.scene, Domain::source, count_source,
                seed);
  write_dataset((fs::path(cfg.out) / "target").string(), cfg.scene, Domain::target, count_target,
                derive_seed(seed, 1));
  std::printf("wrote %d source + %d target samples under %s\n", count_source, count_target,
              cfg.out.c_str());
}

void cmd_train(const CommonFlags& fl, const CLI::App* sub) {
  RunConfig cfg = load_config_or_default(fl);
  apply_path_flags(sub, fl, cfg);
  resolve_seed(sub, fl, cfg.train.seed);
  if (!fl.preset.empty()) apply_preset(cfg.train, fl.preset);
  check(!cfg.source.empty() && !cfg.target.empty() && !cfg.out.empty(), "usage",
        "train needs --source, --target and --out (or config entries)");
  cfg.train.validate();
  const int total = cfg.train.total_steps;
  TrainLog log = train(cfg.train, cfg.source, cfg.target, cfg.out,
                       [total](const TrainStepRecord& r) { progress_printer(r, total); });
  std::printf("done: %zu steps logged under %s\n", log.steps.size(), cfg.out.c_str());
}

void cmd_sweep(const CommonFlags& fl, const CLI::App* sub, const std::string& param,
               const std::string& factors_csv, const std::string& eval_dir_flag, int parallel) {
  RunConfig cfg = load_config_or_default(fl);
  apply_path_flags(sub, fl, cfg);
  resolve_seed(sub, fl, cfg.train.seed);
  if (!fl.preset.empty()) apply_preset(cfg.train, fl.preset);
  check(!cfg.source.empty() && !cfg.target.empty() && !cfg.out.empty(), "usage",
        "sweep needs --source, --target and --out (or config entries)");
  cfg.train.validate();

  double LossWeights::*member = nullptr;
  if (param == "w_s")
    member = &LossWeights::w_s;
  else if (param == "w_t")
    member = &LossWeights::w_t;
  else if (param == "w_prime")
    member = &LossWeights::w_prime;
  else
    fail("usage", "unknown sweep param \"" + param + "\" (options: w_s, w_t, w_prime)");

  std::vector<double> factors;
  std::size_t pos = 0;
  while (pos <= factors_csv.size()) {
    std::size_t comma = factors_csv.find(',', pos);
    if (comma == std::string::npos) comma = factors_csv.size();
    const std::string tok = factors_csv.substr(pos, comma - pos);
    pos = comma + 1;
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      const double f = std::stod(tok, &used);
      check(used == tok.size(), "usage", "");
      check(f >= 0.0, "usage", "");
      factors.push_back(f);
    } catch (...) {
      fail("usage", "--factors must be a comma-separated list of numbers >= 0, got \"" + tok +
                        "\"");
    }
  }
  check(!factors.empty(), "usage", "--factors must name at least one factor");
  const std::string eval_dir = eval_dir_flag.empty() ? cfg.target : eval_dir_flag;

  std::vector<double> mious(factors.size(), 0.0);
  std::vector<std::string> run_dirs(factors.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex err_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= factors.size() || failed.load()) return;
      try {
        TrainConfig tc = cfg.train;
        tc.loss.*member = cfg.train.loss.*member * factors[i];
        run_dirs[i] = (fs::path(cfg.out) / ("run_x" + fmt_short(factors[i]))).string();
        train(tc, cfg.source, cfg.target, run_dirs[i]);
        Metrics m = evaluate_checkpoint(
            (fs::path(run_dirs[i]) / "checkpoint_final.udac").string(), eval_dir);
        mious[i] = m.miou;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!failed.exchange(true)) first_error = e.what();
        return;
      }
    }
  };

  const int threads = std::max(1, std::min<int>(parallel, static_cast<int>(factors.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) fail("data", "sweep run failed: " + first_error);

  std::string csv = "factor," + param + ",target_miou\n";
  for (std::size_t i = 0; i < factors.size(); ++i) {
    csv += fmt_short(factors[i]) + "," + fmt_short(cfg.train.loss.*member * factors[i]) + "," +
           fmt_g(mious[i]) + "\n";
    std::printf("factor %s: %s = %s, target mIoU %.4f\n", fmt_short(factors[i]).c_str(),
                param.c_str(), fmt_short(cfg.train.loss.*member * factors[i]).c_str(), mious[i]);
  }
  fs::create_directories(cfg.out);
  spew_file((fs::path(cfg.out) / "sweep.csv").string(), csv, "sweep");
}

void cmd_mask(const std::string& probmap_path, const std::string& confmap_path, double t_u,
              double t_r, int connectivity, int max_rounds, const std::string& out_dir) {
  MapFile prob = read_map(probmap_path);
  MapFile conf = read_map(confmap_path);
  check(prob.channels >= 2, "shape",
        "probability map needs at least 2 channels, got " + std::to_string(prob.channels));
  check(conf.channels == 1, "shape",
        "confidence map must have exactly 1 channel, got " + std::to_string(conf.channels));
  check(prob.h == conf.h && prob.w == conf.w, "shape",
        "probability map is " + std::to_string(prob.h) + "x" + std::to_string(prob.w) +
            " but confidence map is " + std::to_string(conf.h) + "x" + std::to_string(conf.w));

  RealGrid cg;
  cg.h = conf.h;
  cg.w = conf.w;
  cg.v = conf.data;
  Tensor pt = Tensor::from_values({prob.channels, prob.h, prob.w},
                                  std::vector<double>(prob.data.begin(), prob.data.end()));

  Mask seeds = threshold_mask(cg, t_u);
  Mask grown = grow_mask(seeds, pt, t_r, connectivity, max_rounds);
  WeightMap weights = reliability_weights(grown, cg);

  fs::create_directories(out_dir);
  MapFile mout;
  mout.kind = MapFile::mask;
  mout.seed = prob.seed;
  mout.h = grown.h;
  mout.w = grown.w;
  mout.channels = 1;
  mout.data.assign(grown.v.begin(), grown.v.end());
  write_map(mout, (fs::path(out_dir) / "mask.udam").string());

  MapFile wout;
  wout.kind = MapFile::weights;
  wout.seed = prob.seed;
  wout.h = weights.h;
  wout.w = weights.w;
  wout.channels = 1;
  wout.data = weights.v;
  write_map(wout, (fs::path(out_dir) / "weights.udam").string());

  std::size_t on = 0;
  for (auto v : grown.v) on += v;
  std::printf("mask keeps %zu of %zu pixels (%.2f%%)\n", on, grown.v.size(),
              grown.v.empty() ? 0.0 : 100.0 * static_cast<double>(on) / grown.v.size());
}

void cmd_eval(const std::string& checkpoint, const std::string& dataset,
              const std::string& out_dir) {
  Metrics m = evaluate_checkpoint(checkpoint, dataset);
  fs::create_directories(out_dir);
  write_metrics_json(m, (fs::path(out_dir) / "metrics.json").string());
  spew_file((fs::path(out_dir) / "per_class.csv").string(), per_class_csv(m), "per-class csv");
  std::printf("mIoU %.4f over %lld pixels\n", m.miou, static_cast<long long>(m.pixels_evaluated));
}

void cmd_report(const std::string& log_path, const std::string& metrics_path,
                const std::string& out_dir) {
  emit_report(read_train_log_jsonl(log_path), read_metrics_json(metrics_path), out_dir);
  std::printf("report written to %s\n", out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udaforge: adversarial + self-teaching domain adaptation on procedural scenes"};
  app.require_subcommand(1);

  CommonFlags fl;
  app.add_option("--config", fl.config_path, "JSON run configuration file");

  auto* gen = app.add_subcommand("gen-data", "generate source/target datasets");
  int count_source = 200, count_target = 200;
  bool force = false;
  gen->add_option("--out", fl.out, "output directory (creates source/ and target/)");
  gen->add_option("--count-source", count_source, "source sample count")->capture_default_str();
  gen->add_option("--count-target", count_target, "target sample count")->capture_default_str();
  gen->add_option("--seed", fl.seed, "dataset seed");
  gen->add_flag("--force", force, "overwrite an existing non-empty directory");

  auto* tr = app.add_subcommand("train", "train a segmentation generator");
  tr->add_option("--source", fl.source, "labeled source dataset directory");
  tr->add_option("--target", fl.target, "unlabeled target dataset directory");
  tr->add_option("--out", fl.out, "run output directory");
  tr->add_option("--preset", fl.preset,
                 "ablation preset: supervised, adversarial-only, no-region-growing, "
                 "no-disc-weighting, no-class-weighting, full");
  tr->add_option("--seed", fl.seed, "training seed");

  auto* sw = app.add_subcommand("sweep", "train once per loss-weight factor");
  std::string sweep_param, sweep_factors = "0.1,0.25,0.5,1,2,4,10", sweep_eval;
  int sweep_parallel = 1;
  sw->add_option("--param", sweep_param, "weight to scale: w_s, w_t or w_prime")->required();
  sw->add_option("--factors", sweep_factors, "comma-separated scale factors")->capture_default_str();
  sw->add_option("--source", fl.source, "labeled source dataset directory");
  sw->add_option("--target", fl.target, "unlabeled target dataset directory");
  sw->add_option("--eval", sweep_eval, "dataset for the final mIoU (default: the target directory)");
  sw->add_option("--out", fl.out, "sweep output directory");
  sw->add_option("--preset", fl.preset, "ablation preset for the base configuration");
  sw->add_option("--seed", fl.seed, "training seed");
  sw->add_option("--parallel", sweep_parallel, "number of concurrent trainings")->capture_default_str();

  auto* mk = app.add_subcommand("mask", "grow a reliability mask from saved maps");
  std::string probmap, confmap, mask_out;
  double t_u = 0.2, t_r = 1.0 - 1e-5;
  int connectivity = 4, max_rounds = 0;
  mk->add_option("--probmap", probmap, "class probability map (.udam, C channels)")->required();
  mk->add_option("--confmap", confmap, "confidence map (.udam, 1 channel)")->required();
  mk->add_option("--t-u", t_u, "seed threshold")->capture_default_str();
  mk->add_option("--t-r", t_r, "growth threshold")->capture_default_str();
  mk->add_option("--connectivity", connectivity, "4 or 8")->capture_default_str();
  mk->add_option("--max-rounds", max_rounds, "growth wave limit, 0 = grow to fixpoint")->capture_default_str();
  mk->add_option("--out", mask_out, "output directory for mask.udam + weights.udam")->required();

  auto* ev = app.add_subcommand("eval", "score a checkpoint on a labeled dataset");
  std::string eval_ckpt, eval_data, eval_out;
  ev->add_option("--checkpoint", eval_ckpt, "generator checkpoint (.udac)")->required();
  ev->add_option("--dataset", eval_data, "labeled dataset directory")->required();
  ev->add_option("--out", eval_out, "output directory for metrics.json + per_class.csv")
      ->required();

  auto* rp = app.add_subcommand("report", "render plots from a train log and metrics");
  std::string rp_log, rp_metrics, rp_out;
  rp->add_option("--log", rp_log, "train_log.jsonl from a run")->required();
  rp->add_option("--metrics", rp_metrics, "metrics.json from eval")->required();
  rp->add_option("--out", rp_out, "report output directory")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      cmd_gen_data(fl, gen, count_source, count_target, force);
    else if (tr->parsed())
      cmd_train(fl, tr);
    else if (sw->parsed())
      cmd_sweep(fl, sw, sweep_param, sweep_factors, sweep_eval, sweep_parallel);
    else if (mk->parsed())
      cmd_mask(probmap, confmap, t_u, t_r, connectivity, max_rounds, mask_out);
    else if (ev->parsed())
      cmd_eval(eval_ckpt, eval_data, eval_out);
    else if (rp->parsed())
      cmd_report(rp_log, rp_metrics, rp_out);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error[usage]: " << e.what() << std::endl;
    return 2;
  } catch (const Error& e) {
    std::cerr << "error[" << e.code << "]: " << e.what() << std::endl;
    return (e.code == "usage" || e.code == "config") ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
