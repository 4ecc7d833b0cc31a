#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "udaforge/common.hpp"
#include "udaforge/tensor.hpp"

namespace udaforge {

enum class Domain : std::uint8_t { source = 0, target = 1 };

const char* domain_name(Domain d);

inline constexpr std::uint8_t kVoidLabel = 255;

struct LabelGrid {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // row-major; kVoidLabel = void
};

// Appearance knobs for one domain. Geometry ranges are inclusive.
struct DomainAppearance {
  std::vector<std::array<double, 3>> palette;  // per-class RGB means in [0,1]
  double noise_sigma = 0.03;
  int blocks_min = 1, blocks_max = 4;
  int objects_min = 0, objects_max = 3;
  int poles_min = 0, poles_max = 2;
};

// Classes: 0 ground, 1 sky, 2 block, 3 object, 4 pole. The shift parameters
// apply on top of the target appearance at render time: the target palette is
// hue-rotated by hue_offset, a sinusoidal brightness texture of amplitude
// texture_amp is added, and drawn object/pole counts are scaled by freq_skew.
struct SceneSpec {
  int height = 64, width = 64;
  int num_classes = 5;
  DomainAppearance source;
  DomainAppearance target;
  double hue_offset = 0.0;
  double texture_amp = 0.0;
  double freq_skew = 1.0;

  static SceneSpec defaults();
  void validate() const;
};

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

struct Sample {
  Tensor image;  // [3,H,W], values in [0,1], float32-quantized
  LabelGrid labels;
  Domain domain = Domain::source;
  std::uint64_t seed = 0;
  int num_classes = 0;
};

// Deterministic in (spec, domain, seed): ground and sky bands split by a
// horizon, blocks above it, small objects on the ground, one-pixel-wide poles.
Sample generate_scene(const SceneSpec& spec, Domain domain, std::uint64_t seed);

struct ClassWeights {
  std::vector<double> w;  // w_c = 1 - freq_c over labeled source pixels
};

// Requires source-domain samples with at least one labeled pixel among them.
ClassWeights class_frequencies(const std::vector<Sample>& samples);

// Void rows encode as all-zero channel vectors.
Tensor one_hot(const LabelGrid& labels, int num_classes);

void write_sample(const Sample& sample, const std::string& path);
Sample read_sample(const std::string& path);

// Writes count samples plus meta.json holding the spec. Sample i uses seed
// derive_seed(base_seed, i).
void write_dataset(const std::string& dir, const SceneSpec& spec, Domain domain, int count,
                   std::uint64_t base_seed);

// Samples sorted by filename. strip_labels voids every label; the trainer
// loads target data this way, so target ground truth cannot reach training.
std::vector<Sample> load_dataset(const std::string& dir, bool strip_labels);

}  // namespace udaforge
