#include "udaforge/confmask.hpp"

#include <cmath>
#include <deque>

#include "binio.hpp"

namespace udaforge {

static constexpr char kMapMagic[] = "UDAM1\n";

void MaskConfig::validate() const {
  check(t_u > 0.0 && t_u < 1.0, "config", "t_u must lie in (0,1), got " + std::to_string(t_u));
  check(t_r > 0.0 && t_r < 1.0, "config", "t_r must lie in (0,1), got " + std::to_string(t_r));
  check(connectivity == 4 || connectivity == 8, "config",
        "connectivity must be 4 or 8, got " + std::to_string(connectivity));
  check(max_growth_rounds >= 0, "config", "max_growth_rounds must be >= 0");
}

Mask threshold_mask(const RealGrid& conf, double t_u) {
  check(conf.h > 0 && conf.w > 0 && conf.v.size() == static_cast<std::size_t>(conf.h) * conf.w,
        "shape", "threshold_mask: malformed confidence grid");
  Mask m{conf.h, conf.w, std::vector<std::uint8_t>(conf.v.size())};
  for (std::size_t i = 0; i < conf.v.size(); ++i) m.v[i] = conf.v[i] > t_u ? 1 : 0;
  return m;
}

namespace {

int argmax_class(const double* prob, std::size_t plane, int C, std::size_t p) {
  int best = 0;
  double bv = prob[p];
  for (int c = 1; c < C; ++c) {
    const double v = prob[static_cast<std::size_t>(c) * plane + p];
    if (v > bv) {
      bv = v;
      best = c;
    }
  }
  return best;
}

}  // namespace

Mask grow_mask(const Mask& seeds, const Tensor& probmap, double t_r, int connectivity,
               int max_growth_rounds) {
  check(probmap.defined() && probmap.shape().size() == 3, "shape",
        "grow_mask: probmap must be [C,H,W]");
  const int C = probmap.dim(0), H = probmap.dim(1), W = probmap.dim(2);
  check(seeds.h == H && seeds.w == W && seeds.v.size() == static_cast<std::size_t>(H) * W, "shape",
        "grow_mask: seeds " + std::to_string(seeds.h) + "x" + std::to_string(seeds.w) +
            " vs probmap " + shape_str(probmap.shape()));
  check(connectivity == 4 || connectivity == 8, "config",
        "grow_mask: connectivity must be 4 or 8");
  check(max_growth_rounds >= 0, "config", "grow_mask: max_growth_rounds must be >= 0");

  const double* prob = probmap.values().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  static constexpr int dy8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int dx8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  static constexpr int dy4[4] = {-1, 0, 0, 1};
  static constexpr int dx4[4] = {0, -1, 1, 0};
  const int* dys = connectivity == 4 ? dy4 : dy8;
  const int* dxs = connectivity == 4 ? dx4 : dx8;
  const int ndirs = connectivity;

  Mask out{H, W, std::vector<std::uint8_t>(plane, 0)};
  std::vector<std::int16_t> cls(plane, -1);

  struct Item {
    std::int32_t p;
    std::int32_t wave;
  };
  std::deque<Item> frontier;
  for (std::size_t p = 0; p < plane; ++p) {
    if (!seeds.v[p]) continue;
    out.v[p] = 1;
    cls[p] = static_cast<std::int16_t>(argmax_class(prob, plane, C, p));
    frontier.push_back({static_cast<std::int32_t>(p), 0});
  }

  while (!frontier.empty()) {
    const auto [p, wave] = frontier.front();
    frontier.pop_front();
    if (max_growth_rounds > 0 && wave >= max_growth_rounds) continue;
    const int y = p / W, x = p % W;
    const int c = cls[p];
    for (int k = 0; k < ndirs; ++k) {
      const int ny = y + dys[k], nx = x + dxs[k];
      if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
      const std::size_t np = static_cast<std::size_t>(ny) * W + nx;
      if (out.v[np]) continue;
      if (prob[static_cast<std::size_t>(c) * plane + np] > t_r) {
        out.v[np] = 1;
        cls[np] = static_cast<std::int16_t>(c);
        frontier.push_back({static_cast<std::int32_t>(np), wave + 1});
      }
    }
  }
  return out;
}

WeightMap reliability_weights(const Mask& grown, const RealGrid& conf) {
  check(grown.h == conf.h && grown.w == conf.w && grown.v.size() == conf.v.size(), "shape",
        "reliability_weights: mask " + std::to_string(grown.h) + "x" + std::to_string(grown.w) +
            " vs confidence " + std::to_string(conf.h) + "x" + std::to_string(conf.w));
  WeightMap w{conf.h, conf.w, std::vector<double>(conf.v.size())};
  for (std::size_t i = 0; i < conf.v.size(); ++i) w.v[i] = grown.v[i] ? conf.v[i] : 0.0;
  return w;
}

LabelGrid pseudo_labels(const Tensor& probmap) {
  check(probmap.defined() && probmap.shape().size() == 3, "shape",
        "pseudo_labels: probmap must be [C,H,W]");
  const int C = probmap.dim(0), H = probmap.dim(1), W = probmap.dim(2);
  const double* prob = probmap.values().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  LabelGrid out{H, W, std::vector<std::uint8_t>(plane)};
  for (std::size_t p = 0; p < plane; ++p)
    out.v[p] = static_cast<std::uint8_t>(argmax_class(prob, plane, C, p));
  return out;
}

void write_map(const MapFile& m, const std::string& path) {
  check(m.h > 0 && m.w > 0 && m.channels > 0 &&
            m.data.size() == static_cast<std::size_t>(m.channels) * m.h * m.w,
        "shape", "write_map: malformed map");
  std::string buf;
  buf.append(kMapMagic, 6);
  binio::put<std::uint8_t>(buf, m.kind);
  binio::put<std::uint64_t>(buf, m.seed);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.h));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.w));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.channels));
  const std::size_t plane = static_cast<std::size_t>(m.h) * m.w;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < m.channels; ++c)
      binio::put<float>(buf, static_cast<float>(m.data[static_cast<std::size_t>(c) * plane + p]));
  binio::spew(path, buf, "write_map");
}

MapFile read_map(const std::string& path) {
  binio::Reader r(binio::slurp(path, "read_map"), "read_map(" + path + ")");
  const std::string magic = r.get_bytes(6);
  check(magic == std::string(kMapMagic, 6), "format",
        "read_map(" + path + "): bad magic, expected \"UDAM1\\n\"");
  MapFile m;
  m.kind = r.get<std::uint8_t>();
  check(m.kind <= MapFile::weights, "format", "read_map(" + path + "): unknown kind byte");
  m.seed = r.get<std::uint64_t>();
  const auto H = r.get<std::uint32_t>();
  const auto W = r.get<std::uint32_t>();
  const auto K = r.get<std::uint32_t>();
  check(H >= 1 && H <= 1 << 14 && W >= 1 && W <= 1 << 14 && K >= 1 && K <= 1024, "format",
        "read_map(" + path + "): implausible dimensions");
  m.h = static_cast<int>(H);
  m.w = static_cast<int>(W);
  m.channels = static_cast<int>(K);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  m.data.resize(plane * K);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::uint32_t c = 0; c < K; ++c) {
      const float v = r.get<float>();
      check(std::isfinite(v), "format", "read_map(" + path + "): non-finite value");
      m.data[static_cast<std::size_t>(c) * plane + p] = static_cast<double>(v);
    }
  r.expect_end();
  return m;
}

}  // namespace udaforge
