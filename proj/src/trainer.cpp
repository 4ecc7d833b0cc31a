#include "udaforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "binio.hpp"
#include "udaforge/rng.hpp"

namespace udaforge {

void TrainConfig::validate() const {
  check(total_steps >= 1, "config", "total_steps must be >= 1");
  check(warmup_steps >= 0 && warmup_steps <= total_steps, "config",
        "warmup_steps must lie in [0, total_steps]");
  check(batch_size >= 1, "config", "batch_size must be >= 1");
  check(lr_start > 0.0 && lr_end > 0.0, "config", "lr_start and lr_end must be > 0");
  check(lr_end <= lr_start, "config", "lr_end must be <= lr_start");
  check(lr_power > 0.0, "config", "lr_power must be > 0");
  check(momentum >= 0.0 && momentum < 1.0, "config", "momentum must lie in [0, 1)");
  check(weight_decay >= 0.0, "config", "weight_decay must be >= 0");
  check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "config", "adam_beta1 must lie in [0, 1)");
  check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "config", "adam_beta2 must lie in [0, 1)");
  check(adam_eps > 0.0, "config", "adam_eps must be > 0");
  check(checkpoint_every >= 0, "config", "checkpoint_every must be >= 0");
  loss.validate();
  mask.validate();
}

double poly_lr(int step, const TrainConfig& cfg) {
  check(step >= 0 && step <= cfg.total_steps, "usage",
        "poly_lr step must lie in [0, total_steps]");
  if (step == 0) return cfg.lr_start;
  if (step == cfg.total_steps) return cfg.lr_end;
  const double frac = 1.0 - static_cast<double>(step) / cfg.total_steps;
  return (cfg.lr_start - cfg.lr_end) * std::pow(frac, cfg.lr_power) + cfg.lr_end;
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), wd_(weight_decay) {
  for (const Tensor& t : params_) vel_.emplace_back(t.size(), 0.0);
}

void SgdMomentum::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k];
    auto vals = t.values_mut();
    const bool has = t.has_grad();
    auto g = has ? t.grad() : std::span<const double>{};
    auto& v = vel_[k];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      v[i] = momentum_ * v[i] + (has ? g[i] : 0.0) + wd_ * vals[i];
      vals[i] -= lr * v[i];
    }
    if (has) t.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const Tensor& t : params_) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k];
    auto vals = t.values_mut();
    const bool has = t.has_grad();
    auto g = has ? t.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * gi;
      v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * gi * gi;
      const double mhat = m_[k][i] / c1;
      const double vhat = v_[k][i] / c2;
      vals[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
    if (has) t.zero_grad();
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string record_fields(const TrainStepRecord& r, char sep, bool quote_keys) {
  auto kv = [&](const char* key, const std::string& val) {
    return quote_keys ? "\"" + std::string(key) + "\":" + val : val;
  };
  std::string out;
  out += kv("step", std::to_string(r.step));
  out += sep;
  out += kv("lr", fmt_double(r.lr));
  out += sep;
  out += kv("l_g1", fmt_double(r.l_g1));
  out += sep;
  out += kv("l_g2_s", fmt_double(r.l_g2_s));
  out += sep;
  out += kv("l_g2_t", fmt_double(r.l_g2_t));
  out += sep;
  out += kv("l_g3", fmt_double(r.l_g3));
  out += sep;
  out += kv("l_d", fmt_double(r.l_d));
  out += sep;
  out += kv("mask_fraction", fmt_double(r.mask_fraction));
  out += sep;
  out += kv("ms", fmt_ms(r.ms));
  return out;
}

}  // namespace

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::string out = "step,lr,l_g1,l_g2_s,l_g2_t,l_g3,l_d,mask_fraction,ms\n";
  for (const auto& r : log.steps) out += record_fields(r, ',', false) + "\n";
  binio::spew(path, out, "train log csv");
}

void write_train_log_jsonl(const TrainLog& log, const std::string& path) {
  std::string out;
  for (const auto& r : log.steps) out += "{" + record_fields(r, ',', true) + "}\n";
  binio::spew(path, out, "train log jsonl");
}

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::string out = "UDAC1\n";
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    check(name.size() <= 0xFFFF, "usage", "checkpoint tensor name too long: " + name);
    binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) binio::put<double>(out, v);
  }
  binio::spew(path, out, "checkpoint");
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  binio::Reader r(binio::slurp(path, "checkpoint"), "checkpoint " + path);
  check(r.get_bytes(6) == "UDAC1\n", "format", "checkpoint " + path + ": bad magic");
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name = r.get_bytes(name_len);
    const auto rank = r.get<std::uint32_t>();
    check(rank >= 1 && rank <= 4, "format",
          "checkpoint " + path + ": tensor " + name + " has rank " + std::to_string(rank));
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::uint32_t>();
      check(d >= 1 && d <= (1u << 24), "format",
            "checkpoint " + path + ": tensor " + name + " has invalid dim");
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    std::vector<double> vals(n);
    for (auto& v : vals) v = r.get<double>();
    out.emplace_back(std::move(name), Tensor::from_values(std::move(shape), std::move(vals)));
  }
  r.expect_end();
  return out;
}

GeneratorParams generator_from_checkpoint(const std::string& path) {
  auto loaded = load_checkpoint(path);
  const Tensor* head = nullptr;
  for (const auto& [name, t] : loaded)
    if (name == "G.head.weight") head = &t;
  check(head != nullptr, "format", "checkpoint " + path + " has no G.head.weight tensor");
  check(head->shape().size() == 4, "shape", "G.head.weight must have rank 4");
  GeneratorParams p = GeneratorParams::init(head->dim(0), 0);
  for (auto& [name, t] : p.named()) {
    const Tensor* src = nullptr;
    for (const auto& [n2, t2] : loaded)
      if (n2 == name) src = &t2;
    check(src != nullptr, "format", "checkpoint " + path + " is missing tensor " + name);
    check(src->shape() == t.shape(), "shape",
          "checkpoint tensor " + name + " has shape " + shape_str(src->shape()) +
              ", the net expects " + shape_str(t.shape()));
    std::copy(src->values().begin(), src->values().end(), t.values_mut().begin());
  }
  return p;
}

namespace {

Tensor stack_images(const std::vector<Sample>& ds, const std::vector<int>& idx) {
  const int h = ds[0].image.dim(1), w = ds[0].image.dim(2);
  const std::size_t per = static_cast<std::size_t>(3) * h * w;
  std::vector<double> v(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(ds[idx[i]].image.values().begin(), ds[idx[i]].image.values().end(),
              v.begin() + static_cast<std::ptrdiff_t>(i * per));
  return Tensor::from_values({static_cast<int>(idx.size()), 3, h, w}, std::move(v));
}

Tensor stack_onehot(const std::vector<Sample>& ds, const std::vector<int>& idx, int num_classes) {
  const int h = ds[0].labels.h, w = ds[0].labels.w;
  const std::size_t per = static_cast<std::size_t>(num_classes) * h * w;
  std::vector<double> v(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Tensor oh = one_hot(ds[idx[i]].labels, num_classes);
    std::copy(oh.values().begin(), oh.values().end(),
              v.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor::from_values({static_cast<int>(idx.size()), num_classes, h, w}, std::move(v));
}

std::string checkpoint_name(int completed_steps) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06d.udac", completed_steps);
  return buf;
}

}  // namespace

TrainLog train(const TrainConfig& cfg, const std::string& source_dir,
               const std::string& target_dir, const std::string& out_dir,
               const ProgressFn& progress) {
  cfg.validate();
  // labels stripped at load: the loop below cannot read target supervision
  std::vector<Sample> src = load_dataset(source_dir, false);
  std::vector<Sample> tgt = load_dataset(target_dir, true);
  check(!src.empty(), "data", "source dataset " + source_dir + " is empty");
  check(!tgt.empty(), "data", "target dataset " + target_dir + " is empty");
  const int C = src[0].num_classes;
  const int H = src[0].image.dim(1), W = src[0].image.dim(2);
  check(tgt[0].num_classes == C, "data", "source and target class counts differ");
  check(tgt[0].image.dim(1) == H && tgt[0].image.dim(2) == W, "data",
        "source and target sample sizes differ");
  std::filesystem::create_directories(out_dir);

  GeneratorParams G = GeneratorParams::init(C, derive_seed(cfg.seed, 1));
  DiscriminatorParams D = DiscriminatorParams::init(C, derive_seed(cfg.seed, 2));
  Rng sampler(derive_seed(cfg.seed, 3));

  std::vector<Tensor> g_tensors, d_tensors;
  for (auto& [name, t] : G.named()) g_tensors.push_back(t);
  for (auto& [name, t] : D.named()) d_tensors.push_back(t);
  SgdMomentum g_opt(g_tensors, cfg.momentum, cfg.weight_decay);
  Adam d_opt(d_tensors, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  ClassWeights cw;
  if (cfg.enable_class_weighting)
    cw = class_frequencies(src);
  else
    cw.w.assign(C, 1.0);

  const bool use_d = cfg.enable_adv || cfg.enable_self_teach;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t cplane = static_cast<std::size_t>(C) * plane;
  // Logged losses keep their pixel-sum form, but both optimizers consume
  // gradients of the per-pixel mean: the lr defaults quote a convention that
  // averages over pixels, and feeding them pixel-summed gradients overshoots
  // SGD's stability bound by the pixel count.
  const double inv_plane = 1.0 / static_cast<double>(plane);

  TrainLog log;
  log.steps.reserve(cfg.total_steps);

  auto all_named = [&] {
    std::vector<NamedTensor> named = G.named();
    auto dn = D.named();
    named.insert(named.end(), dn.begin(), dn.end());
    return named;
  };

  for (int step = 0; step < cfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = poly_lr(step, cfg);
    const bool st_active = cfg.enable_self_teach && step >= cfg.warmup_steps;

    std::vector<int> src_idx(cfg.batch_size), tgt_idx(cfg.batch_size);
    for (int& i : src_idx) i = sampler.uniform_int(0, static_cast<int>(src.size()) - 1);
    for (int& i : tgt_idx) i = sampler.uniform_int(0, static_cast<int>(tgt.size()) - 1);

    Tensor src_images = stack_images(src, src_idx);
    Tensor src_onehot = stack_onehot(src, src_idx, C);
    Tensor tgt_images = use_d ? stack_images(tgt, tgt_idx) : Tensor();

    Graph g;
    Tensor p_s = generator_forward(g, G, src_images);
    Tensor p_t = use_d ? generator_forward(g, G, tgt_images) : Tensor();

    TrainStepRecord rec;
    rec.step = step;
    rec.lr = lr;

    if (use_d) {
      std::vector<double> fake_vals;
      fake_vals.reserve(2 * cfg.batch_size * cplane);
      fake_vals.insert(fake_vals.end(), p_s.values().begin(), p_s.values().end());
      fake_vals.insert(fake_vals.end(), p_t.values().begin(), p_t.values().end());
      Tensor fake = Tensor::from_values({2 * cfg.batch_size, C, H, W}, std::move(fake_vals));
      Graph gd;
      Tensor l_d = loss_discriminator(gd, discriminator_forward(gd, D, fake),
                                      discriminator_forward(gd, D, src_onehot));
      rec.l_d = l_d.item();
      gd.backward(gd.scale(l_d, inv_plane));
      d_opt.step(lr);
    }

    Tensor l_g2_s, l_g2_t, l_g3;
    if (use_d) D.set_requires_grad(false);
    Tensor l_g1 = loss_supervised_ce(g, p_s, src_onehot);
    rec.l_g1 = l_g1.item();
    Tensor d_t;
    if (cfg.enable_adv) {
      l_g2_s = loss_adversarial(g, discriminator_forward(g, D, p_s));
      d_t = discriminator_forward(g, D, p_t);
      l_g2_t = loss_adversarial(g, d_t);
      rec.l_g2_s = l_g2_s.item();
      rec.l_g2_t = l_g2_t.item();
    }
    if (st_active) {
      if (!d_t.defined()) d_t = discriminator_forward(g, D, p_t);
      std::vector<double> weights(static_cast<std::size_t>(cfg.batch_size) * plane, 0.0);
      double frac = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        RealGrid conf{H, W, {d_t.values().begin() + static_cast<std::ptrdiff_t>(b * plane),
                             d_t.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * plane)}};
        Mask region = threshold_mask(conf, cfg.mask.t_u);
        if (cfg.enable_region_growing) {
          Tensor probs = Tensor::from_values(
              {C, H, W}, {p_t.values().begin() + static_cast<std::ptrdiff_t>(b * cplane),
                          p_t.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * cplane)});
          region = grow_mask(region, probs, cfg.mask.t_r, cfg.mask.connectivity,
                             cfg.mask.max_growth_rounds);
        }
        std::size_t on = 0;
        for (std::size_t q = 0; q < plane; ++q) {
          if (!region.v[q]) continue;
          ++on;
          weights[b * plane + q] = cfg.enable_disc_weighting ? conf.v[q] : 1.0;
        }
        frac += static_cast<double>(on) / static_cast<double>(plane);
      }
      rec.mask_fraction = frac / cfg.batch_size;
      Tensor w_t = Tensor::from_values({cfg.batch_size, 1, H, W}, std::move(weights));
      l_g3 = loss_self_teach(g, p_t, w_t, cw);
      rec.l_g3 = l_g3.item();
    }

    Tensor total = loss_full(g, l_g1, l_g2_s, l_g2_t, l_g3, cfg.loss, step, cfg.warmup_steps);
    g.backward(g.scale(total, inv_plane));
    g_opt.step(lr);
    if (use_d) D.set_requires_grad(true);

    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                 .count();
    log.steps.push_back(rec);
    if (progress) progress(rec);

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(all_named(), (std::filesystem::path(out_dir) /
                                    checkpoint_name(step + 1)).string());
  }

  save_checkpoint(all_named(), (std::filesystem::path(out_dir) / "checkpoint_final.udac").string());
  write_train_log_csv(log, (std::filesystem::path(out_dir) / "train_log.csv").string());
  write_train_log_jsonl(log, (std::filesystem::path(out_dir) / "train_log.jsonl").string());
  return log;
}

}  // namespace udaforge
