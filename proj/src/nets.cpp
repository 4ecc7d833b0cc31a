#include "udaforge/nets.hpp"

#include <cmath>

#include "udaforge/rng.hpp"

namespace udaforge {

namespace {

Tensor he_conv_weight(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t fan_in =
      static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
  const double stdev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = stdev * rng.normal();
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor zero_bias(int n) { return Tensor::zeros({n}, true); }

}  // namespace

GeneratorParams GeneratorParams::init(int num_classes, std::uint64_t seed) {
  check(num_classes >= 2, "config", "num_classes must be >= 2");
  GeneratorParams p;
  p.num_classes = num_classes;
  auto layer_seed = [seed](int i) { return derive_seed(seed, 0x4700u + i); };
  p.enc1_w = he_conv_weight({16, 3, 3, 3}, layer_seed(0));
  p.enc1_b = zero_bias(16);
  p.enc2_w = he_conv_weight({32, 16, 3, 3}, layer_seed(1));
  p.enc2_b = zero_bias(32);
  p.enc3_w = he_conv_weight({64, 32, 3, 3}, layer_seed(2));
  p.enc3_b = zero_bias(64);
  p.dec1_w = he_conv_weight({32, 64, 3, 3}, layer_seed(3));
  p.dec1_b = zero_bias(32);
  p.head_w = he_conv_weight({num_classes, 32, 1, 1}, layer_seed(4));
  p.head_b = zero_bias(num_classes);
  return p;
}

std::vector<NamedTensor> GeneratorParams::named() const {
  return {{"G.enc1.weight", enc1_w}, {"G.enc1.bias", enc1_b},
          {"G.enc2.weight", enc2_w}, {"G.enc2.bias", enc2_b},
          {"G.enc3.weight", enc3_w}, {"G.enc3.bias", enc3_b},
          {"G.dec1.weight", dec1_w}, {"G.dec1.bias", dec1_b},
          {"G.head.weight", head_w}, {"G.head.bias", head_b}};
}

void GeneratorParams::set_requires_grad(bool v) {
  for (auto& [name, t] : named()) t.set_requires_grad(v);
}

DiscriminatorParams DiscriminatorParams::init(int num_classes, std::uint64_t seed) {
  check(num_classes >= 2, "config", "num_classes must be >= 2");
  DiscriminatorParams p;
  p.num_classes = num_classes;
  const int ch[6] = {num_classes, 64, 64, 128, 128, 1};
  for (int i = 0; i < 5; ++i) {
    p.w[i] = he_conv_weight({ch[i + 1], ch[i], 4, 4}, derive_seed(seed, 0x4400u + i));
    p.b[i] = zero_bias(ch[i + 1]);
  }
  return p;
}

std::vector<NamedTensor> DiscriminatorParams::named() const {
  std::vector<NamedTensor> out;
  for (int i = 0; i < 5; ++i) {
    const std::string base = "D.conv" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", w[i]);
    out.emplace_back(base + ".bias", b[i]);
  }
  return out;
}

void DiscriminatorParams::set_requires_grad(bool v) {
  for (auto& [name, t] : named()) t.set_requires_grad(v);
}

Tensor generator_forward(Graph& g, const GeneratorParams& params, const Tensor& image) {
  check(image.defined() && image.shape().size() == 4, "shape", "generator expects a B x 3 x H x W image");
  check(image.dim(1) == 3, "shape",
        "generator expects 3 input channels, got " + shape_str(image.shape()));
  const int h = image.dim(2), w = image.dim(3);
  check(h % 8 == 0 && w % 8 == 0 && h >= 16 && w >= 16, "shape",
        "generator input sides must be multiples of 8 and >= 16, got " + shape_str(image.shape()));
  Tensor x = g.leaky_relu(g.conv2d(image, params.enc1_w, params.enc1_b, 2, 1), 0.1);
  x = g.leaky_relu(g.conv2d(x, params.enc2_w, params.enc2_b, 2, 1), 0.1);
  x = g.leaky_relu(g.conv2d(x, params.enc3_w, params.enc3_b, 2, 1), 0.1);
  x = g.bilinear_upsample(x, h, w);
  x = g.leaky_relu(g.conv2d(x, params.dec1_w, params.dec1_b, 1, 1), 0.1);
  x = g.conv2d(x, params.head_w, params.head_b, 1, 0);
  return g.softmax_channels(x);
}

Tensor discriminator_forward(Graph& g, const DiscriminatorParams& params, const Tensor& probmap) {
  check(probmap.defined() && probmap.shape().size() == 4, "shape",
        "discriminator expects a B x C x H x W map");
  check(probmap.dim(1) == params.num_classes, "shape",
        "discriminator was built for " + std::to_string(params.num_classes) +
            " channels, got " + shape_str(probmap.shape()));
  const int h = probmap.dim(2), w = probmap.dim(3);
  check(h >= 32 && w >= 32, "shape",
        "discriminator input " + shape_str(probmap.shape()) +
            " is below the 32 x 32 minimum");
  Tensor x = probmap;
  for (int i = 0; i < 5; ++i) {
    x = g.conv2d(x, params.w[i], params.b[i], 2, 1);
    if (i < 4) x = g.leaky_relu(x, 0.2);
  }
  x = g.sigmoid(x);
  return g.bilinear_upsample(x, h, w);
}

std::vector<std::array<int, 2>> discriminator_internal_sizes(int h, int w) {
  std::vector<std::array<int, 2>> sizes;
  for (int i = 0; i < 5; ++i) {
    h = (h + 2 - 4) / 2 + 1;
    w = (w + 2 - 4) / 2 + 1;
    sizes.push_back({h, w});
  }
  return sizes;
}

}  // namespace udaforge
