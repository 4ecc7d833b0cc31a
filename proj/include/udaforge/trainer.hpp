#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "udaforge/confmask.hpp"
#include "udaforge/losses.hpp"
#include "udaforge/nets.hpp"
#include "udaforge/toyscenes.hpp"

namespace udaforge {

struct TrainConfig {
  int total_steps = 2000;
  int warmup_steps = 500;
  int batch_size = 2;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights loss;
  MaskConfig mask;
  bool enable_adv = true;
  bool enable_self_teach = true;
  bool enable_region_growing = true;
  bool enable_disc_weighting = true;
  bool enable_class_weighting = true;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint

  void validate() const;
};

// (lr_start - lr_end) * (1 - step/total_steps)^lr_power + lr_end, exact at
// both endpoints. Requires 0 <= step <= total_steps.
double poly_lr(int step, const TrainConfig& cfg);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// step() consumes and clears the gradients; params without one count as zero
// gradient (weight decay still applies).
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> vel_;
  double momentum_, wd_;
};

// Bias-corrected Adam without weight decay. step() consumes and clears the
// gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1, double beta2, double eps);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

struct TrainStepRecord {
  int step = 0;
  double lr = 0.0;
  double l_g1 = 0.0;
  double l_g2_s = 0.0;
  double l_g2_t = 0.0;
  double l_g3 = 0.0;
  double l_d = 0.0;
  double mask_fraction = 0.0;
  double ms = 0.0;
};

struct TrainLog {
  std::vector<TrainStepRecord> steps;
};

// CSV header: step,lr,l_g1,l_g2_s,l_g2_t,l_g3,l_d,mask_fraction,ms. The JSONL
// mirror carries one object per step with the same keys.
void write_train_log_csv(const TrainLog& log, const std::string& path);
void write_train_log_jsonl(const TrainLog& log, const std::string& path);

// Checkpoint: magic "UDAC1\n", u32 tensor count, then per tensor u16 name
// length, name bytes, u32 rank, u32 dims, float64 values little-endian.
void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Rebuilds generator weights from a checkpoint; tensor names and shapes must
// match the architecture for the class count found in G.head.weight.
GeneratorParams generator_from_checkpoint(const std::string& path);

using ProgressFn = std::function<void(const TrainStepRecord&)>;

// Runs the full loop: per step a source and a target batch are drawn, D is
// updated on the mixed generated batch against source one-hot maps, then G
// descends the composite loss with D frozen. Target samples are loaded with
// labels stripped, so supervision can never leak from the target domain.
// Writes train_log.csv, train_log.jsonl, cadence checkpoints
// (checkpoint_%06d.udac) and checkpoint_final.udac into out_dir.
// Deterministic in cfg.seed.
TrainLog train(const TrainConfig& cfg, const std::string& source_dir,
               const std::string& target_dir, const std::string& out_dir,
               const ProgressFn& progress = {});

}  // namespace udaforge
