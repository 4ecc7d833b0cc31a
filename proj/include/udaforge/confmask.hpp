#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udaforge/common.hpp"
#include "udaforge/tensor.hpp"
#include "udaforge/toyscenes.hpp"

namespace udaforge {

struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // {0,1}
};

// Real-valued grid; carries discriminator confidences on input and the
// reliability weights D_R on output.
struct RealGrid {
  int h = 0, w = 0;
  std::vector<double> v;
};
using WeightMap = RealGrid;

struct MaskConfig {
  double t_u = 0.2;
  double t_r = 1.0 - 1e-5;
  int connectivity = 4;       // 4 or 8
  int max_growth_rounds = 0;  // 0 grows to the fixpoint, k stops after k waves
  void validate() const;
};

// mask(p) = 1 iff conf(p) > t_u, strict.
Mask threshold_mask(const RealGrid& conf, double t_u);

// Region growing from the seed mask over probmap [C,H,W]. Seed pixels take
// c* = per-pixel argmax (ties to the lowest class); a neighbor p' of an
// admitted pixel joins when probmap(p')[c*] > t_r, inheriting c* from the
// pixel that admitted it. FIFO frontier seeded in row-major order; on
// competition between regions the first arrival wins. For t_r >= 0.5 at most
// one class can pass the test at any pixel, so the result is
// order-independent there.
Mask grow_mask(const Mask& seeds, const Tensor& probmap, double t_r, int connectivity,
               int max_growth_rounds = 0);

// Reliability weights: grown * conf elementwise.
WeightMap reliability_weights(const Mask& grown, const RealGrid& conf);

// Per-pixel argmax, ties to the lowest class index.
LabelGrid pseudo_labels(const Tensor& probmap);

// Map file: magic "UDAM1\n", u8 kind, u64 seed, u32 H, u32 W, u32 K, then
// K*H*W float32 channel-last. Same skeleton as the sample format with a free
// channel count and no label block.
struct MapFile {
  enum Kind : std::uint8_t { prob = 0, conf = 1, mask = 2, weights = 3 };
  std::uint8_t kind = 0;
  std::uint64_t seed = 0;
  int h = 0, w = 0, channels = 0;
  std::vector<double> data;  // [K,H,W] in memory
};

void write_map(const MapFile& m, const std::string& path);
MapFile read_map(const std::string& path);

}  // namespace udaforge
