#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "udaforge/tensor.hpp"

namespace udaforge {

using NamedTensor = std::pair<std::string, Tensor>;

// Toy encoder-decoder segmentation net. Encoder: three blocks of
// [conv 3x3 stride 2 pad 1 -> leaky_relu(0.1)] with 16, 32, 64 channels.
// Decoder: bilinear upsample x8, conv 3x3 pad 1 to 32 channels,
// leaky_relu(0.1), conv 1x1 to |C|, softmax over channels.
struct GeneratorParams {
  int num_classes = 0;
  Tensor enc1_w, enc1_b;
  Tensor enc2_w, enc2_b;
  Tensor enc3_w, enc3_b;
  Tensor dec1_w, dec1_b;
  Tensor head_w, head_b;

  // He fan-in initialized weights, zero biases; deterministic in seed.
  static GeneratorParams init(int num_classes, std::uint64_t seed);

  // Fixed order, names prefixed "G."; handles share storage with the fields.
  std::vector<NamedTensor> named() const;
  void set_requires_grad(bool b);
};

// Five conv layers, kernels 4x4 stride 2 pad 1, output channels
// 64, 64, 128, 128, 1, leaky_relu(0.2) between them, sigmoid, then bilinear
// upsample back to the input resolution.
struct DiscriminatorParams {
  int num_classes = 0;
  std::array<Tensor, 5> w;
  std::array<Tensor, 5> b;

  static DiscriminatorParams init(int num_classes, std::uint64_t seed);

  std::vector<NamedTensor> named() const;
  void set_requires_grad(bool b);
};

// image [B,3,H,W], H and W multiples of 8 and >= 16 -> [B,|C|,H,W], each
// pixel a distribution over classes.
Tensor generator_forward(Graph& g, const GeneratorParams& params, const Tensor& image);

// probmap [B,|C|,H,W], H and W >= 32 -> [B,1,H,W] with values in (0,1).
Tensor discriminator_forward(Graph& g, const DiscriminatorParams& params, const Tensor& probmap);

// Spatial sizes after each of the five stride-2 convs, e.g. 64x64 ->
// {32,16,8,4,2} per side.
std::vector<std::array<int, 2>> discriminator_internal_sizes(int h, int w);

}  // namespace udaforge
