#pragma once

#include "udaforge/common.hpp"
#include "udaforge/tensor.hpp"
#include "udaforge/toyscenes.hpp"

namespace udaforge {

// Loss scale factors. w_s/w_t weigh the adversarial term on source/target,
// w_prime weighs the self-teaching term after warm-up.
struct LossWeights {
  double w_s = 1e-2;
  double w_t = 1e-3;
  double w_prime = 1e-1;
  void validate() const;
};

// All losses sum over pixels inside an image (no per-pixel averaging) and
// take the mean over the batch axis; logs are clamped at 1e-12. Scalars come
// back as graph nodes, so backward() routes gradients to the right inputs.
inline constexpr double kLogFloor = 1e-12;

// -(1/B) sum_p sum_c Y[c] log G[c]. No gradient into the one-hot target.
Tensor loss_supervised_ce(Graph& g, const Tensor& probmap, const Tensor& onehot);

// -(1/Bf) sum_p log(1 - d_fake) - (1/Br) sum_p log(d_real). The two maps may
// carry different batch sizes (fake batches concatenate source and target);
// each branch is normalized by its own. Call on detached probmaps so no
// gradient reaches G.
Tensor loss_discriminator(Graph& g, const Tensor& d_on_fake, const Tensor& d_on_real);

// -(1/B) sum_p log(d_fake). Freeze D's parameters around the enclosing
// backward so only G moves.
Tensor loss_adversarial(Graph& g, const Tensor& d_on_fake);

// -(1/B) sum_p D_R(p) W[c*] log G(p)[c*] with c* the per-pixel argmax.
// Pseudo-labels and weights are constants: no gradient flows into `weights`
// even if it requires one.
Tensor loss_self_teach(Graph& g, const Tensor& probmap, const Tensor& weights,
                       const ClassWeights& class_weights);

// L_G1 + w_s L_G2^s + w_t L_G2^t + w' L_G3, with w' forced to 0 while
// step < warmup_steps. Undefined parts and zero-coefficient terms are skipped
// outright rather than multiplied by zero, so a disabled term leaves the
// arithmetic bit-identical to a graph that never built it.
Tensor loss_full(Graph& g, const Tensor& l_g1, const Tensor& l_g2_s, const Tensor& l_g2_t,
                 const Tensor& l_g3, const LossWeights& w, int step, int warmup_steps);

}  // namespace udaforge
