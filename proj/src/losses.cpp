#include "udaforge/losses.hpp"

#include <cmath>

namespace udaforge {

void LossWeights::validate() const {
  check(w_s >= 0.0 && w_t >= 0.0 && w_prime >= 0.0, "config",
        "loss weights must be >= 0, got w_s=" + std::to_string(w_s) + " w_t=" +
            std::to_string(w_t) + " w_prime=" + std::to_string(w_prime));
}

namespace {

double safe_log(double v) { return std::log(v > kLogFloor ? v : kLogFloor); }

void require_unit_range(const Tensor& t, const char* name) {
  for (double v : t.values())
    check(v >= 0.0 && v <= 1.0, "data",
          std::string(name) + ": value " + std::to_string(v) + " outside [0,1]");
}

void require_conf_shape(const Tensor& t, const char* name) {
  check(t.defined() && t.shape().size() == 4 && t.dim(1) == 1, "shape",
        std::string(name) + ": expected [B,1,H,W]" +
            (t.defined() ? ", got " + shape_str(t.shape()) : std::string()));
}

}  // namespace

Tensor loss_supervised_ce(Graph& g, const Tensor& probmap, const Tensor& onehot) {
  check(probmap.defined() && probmap.shape().size() == 4, "shape",
        "loss_supervised_ce: probmap must be [B,C,H,W]");
  check(onehot.defined() && onehot.shape() == probmap.shape(), "shape",
        "loss_supervised_ce: shapes differ, probmap " + shape_str(probmap.shape()) +
            " vs onehot " + (onehot.defined() ? shape_str(onehot.shape()) : "(undefined)"));
  const int B = probmap.dim(0);
  const std::size_t n = probmap.size();
  const double* p = probmap.values().data();
  const double* y = onehot.values().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (y[i] != 0.0) acc -= y[i] * safe_log(p[i]);
  const double inv_b = 1.0 / B;

  return g.emit({}, {acc * inv_b}, [probmap, onehot, inv_b, n](std::span<const double> go) {
    auto* st = probmap.storage();
    if (!st->grad_needed()) return;
    st->ensure_grad();
    const double* p = st->values.data();
    const double* y = onehot.values().data();
    const double g0 = go[0] * inv_b;
    for (std::size_t i = 0; i < n; ++i)
      if (y[i] != 0.0 && p[i] > kLogFloor) st->grad[i] -= g0 * y[i] / p[i];
  });
}

Tensor loss_discriminator(Graph& g, const Tensor& d_on_fake, const Tensor& d_on_real) {
  require_conf_shape(d_on_fake, "loss_discriminator(fake)");
  require_conf_shape(d_on_real, "loss_discriminator(real)");
  require_unit_range(d_on_fake, "loss_discriminator(fake)");
  require_unit_range(d_on_real, "loss_discriminator(real)");
  const double inv_bf = 1.0 / d_on_fake.dim(0);
  const double inv_br = 1.0 / d_on_real.dim(0);
  double acc = 0.0;
  for (double v : d_on_fake.values()) acc -= inv_bf * safe_log(1.0 - v);
  for (double v : d_on_real.values()) acc -= inv_br * safe_log(v);

  return g.emit({}, {acc}, [d_on_fake, d_on_real, inv_bf, inv_br](std::span<const double> go) {
    const double g0 = go[0];
    if (auto* st = d_on_fake.storage(); st->grad_needed()) {
      st->ensure_grad();
      for (std::size_t i = 0; i < st->values.size(); ++i)
        if (1.0 - st->values[i] > kLogFloor)
          st->grad[i] += g0 * inv_bf / (1.0 - st->values[i]);
    }
    if (auto* st = d_on_real.storage(); st->grad_needed()) {
      st->ensure_grad();
      for (std::size_t i = 0; i < st->values.size(); ++i)
        if (st->values[i] > kLogFloor) st->grad[i] -= g0 * inv_br / st->values[i];
    }
  });
}

Tensor loss_adversarial(Graph& g, const Tensor& d_on_fake) {
  require_conf_shape(d_on_fake, "loss_adversarial");
  require_unit_range(d_on_fake, "loss_adversarial");
  const double inv_b = 1.0 / d_on_fake.dim(0);
  double acc = 0.0;
  for (double v : d_on_fake.values()) acc -= inv_b * safe_log(v);

  return g.emit({}, {acc}, [d_on_fake, inv_b](std::span<const double> go) {
    auto* st = d_on_fake.storage();
    if (!st->grad_needed()) return;
    st->ensure_grad();
    const double g0 = go[0] * inv_b;
    for (std::size_t i = 0; i < st->values.size(); ++i)
      if (st->values[i] > kLogFloor) st->grad[i] -= g0 / st->values[i];
  });
}

Tensor loss_self_teach(Graph& g, const Tensor& probmap, const Tensor& weights,
                       const ClassWeights& class_weights) {
  check(probmap.defined() && probmap.shape().size() == 4, "shape",
        "loss_self_teach: probmap must be [B,C,H,W]");
  const int B = probmap.dim(0), C = probmap.dim(1), H = probmap.dim(2), W = probmap.dim(3);
  check(weights.defined() && weights.shape() == Shape{B, 1, H, W}, "shape",
        "loss_self_teach: weights must be [B,1,H,W] matching probmap " +
            shape_str(probmap.shape()) + ", got " +
            (weights.defined() ? shape_str(weights.shape()) : "(undefined)"));
  check(static_cast<int>(class_weights.w.size()) == C, "shape",
        "loss_self_teach: class_weights has " + std::to_string(class_weights.w.size()) +
            " entries for " + std::to_string(C) + " classes");

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double* p = probmap.values().data();
  const double* dr = weights.values().data();
  const double inv_b = 1.0 / B;

  // pseudo-labels: per-pixel argmax, ties to the lowest class; frozen here
  std::vector<std::int32_t> star(static_cast<std::size_t>(B) * plane);
  double acc = 0.0;
  for (int b = 0; b < B; ++b) {
    const std::size_t pb = static_cast<std::size_t>(b) * C * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      int best = 0;
      double bv = p[pb + q];
      for (int c = 1; c < C; ++c) {
        const double v = p[pb + static_cast<std::size_t>(c) * plane + q];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      star[static_cast<std::size_t>(b) * plane + q] = best;
      acc -= dr[static_cast<std::size_t>(b) * plane + q] * class_weights.w[best] * safe_log(bv);
    }
  }

  std::vector<double> cw = class_weights.w;
  return g.emit({}, {acc * inv_b},
                [probmap, weights, star = std::move(star), cw = std::move(cw), B, C, plane,
                 inv_b](std::span<const double> go) {
    // weights and pseudo-labels are constants by design: only probmap moves
    auto* st = probmap.storage();
    if (!st->grad_needed()) return;
    st->ensure_grad();
    const double* dr = weights.values().data();
    const double g0 = go[0] * inv_b;
    for (int b = 0; b < B; ++b) {
      const std::size_t pb = static_cast<std::size_t>(b) * C * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const int c = star[static_cast<std::size_t>(b) * plane + q];
        const std::size_t i = pb + static_cast<std::size_t>(c) * plane + q;
        if (st->values[i] > kLogFloor)
          st->grad[i] -= g0 * dr[static_cast<std::size_t>(b) * plane + q] * cw[c] / st->values[i];
      }
    }
  });
}

Tensor loss_full(Graph& g, const Tensor& l_g1, const Tensor& l_g2_s, const Tensor& l_g2_t,
                 const Tensor& l_g3, const LossWeights& w, int step, int warmup_steps) {
  w.validate();
  check(step >= 0 && warmup_steps >= 0, "config", "loss_full: step and warmup must be >= 0");
  check(l_g1.defined() && l_g1.size() == 1, "shape", "loss_full: l_g1 must be a defined scalar");
  const double eff_prime = step < warmup_steps ? 0.0 : w.w_prime;

  Tensor total = l_g1;
  auto add_term = [&](const Tensor& part, double coeff, const char* name) {
    if (!part.defined() || coeff == 0.0) return;
    check(part.size() == 1, "shape", std::string("loss_full: ") + name + " must be a scalar");
    total = g.add(total, g.scale(part, coeff));
  };
  add_term(l_g2_s, w.w_s, "l_g2_s");
  add_term(l_g2_t, w.w_t, "l_g2_t");
  add_term(l_g3, eff_prime, "l_g3");
  return total;
}

}  // namespace udaforge
