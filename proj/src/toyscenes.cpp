#include "udaforge/toyscenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "binio.hpp"
#include "json_util.hpp"
#include "udaforge/rng.hpp"

namespace udaforge {

namespace fs = std::filesystem;
using jsonu::json;

static constexpr char kSampleMagic[] = "UDAS1\n";
static constexpr std::uint8_t kVoid = 255;

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

SceneSpec SceneSpec::defaults() {
  SceneSpec s;
  s.source.palette = {
      {0.36, 0.31, 0.24},  // ground
      {0.56, 0.70, 0.90},  // sky
      {0.58, 0.27, 0.22},  // block
      {0.20, 0.52, 0.26},  // object
      {0.78, 0.76, 0.34},  // pole
  };
  s.source.noise_sigma = 0.03;
  s.target = s.source;
  s.target.noise_sigma = 0.07;
  s.hue_offset = 0.55;
  s.texture_amp = 0.05;
  s.freq_skew = 0.6;
  return s;
}

void SceneSpec::validate() const {
  check(height % 8 == 0 && width % 8 == 0 && height >= 8 && width >= 8, "config",
        "scene dims must be positive multiples of 8, got " + std::to_string(height) + "x" +
            std::to_string(width));
  check(num_classes >= 2 && num_classes <= 254, "config",
        "num_classes must be in [2,254], got " + std::to_string(num_classes));
  for (const DomainAppearance* a : {&source, &target}) {
    check(static_cast<int>(a->palette.size()) == num_classes, "config",
          "palette must list " + std::to_string(num_classes) + " colors, got " +
              std::to_string(a->palette.size()));
    check(a->noise_sigma >= 0.0, "config", "noise_sigma must be >= 0");
    for (auto [lo, hi] : {std::pair{a->blocks_min, a->blocks_max},
                          {a->objects_min, a->objects_max},
                          {a->poles_min, a->poles_max}})
      check(0 <= lo && lo <= hi, "config", "count ranges must satisfy 0 <= min <= max");
  }
  check(freq_skew >= 0.0, "config", "freq_skew must be >= 0");
  check(texture_amp >= 0.0, "config", "texture_amp must be >= 0");
}

// ---------------------------------------------------------------------------
// JSON

static json appearance_to_json(const DomainAppearance& a) {
  json pal = json::array();
  for (auto& c : a.palette) pal.push_back({c[0], c[1], c[2]});
  return json{{"palette", pal},
              {"noise_sigma", a.noise_sigma},
              {"blocks", {a.blocks_min, a.blocks_max}},
              {"objects", {a.objects_min, a.objects_max}},
              {"poles", {a.poles_min, a.poles_max}}};
}

static DomainAppearance appearance_from_json(const json& j, const char* ctx,
                                             const DomainAppearance& fallback) {
  jsonu::check_keys(j, ctx, {"palette", "noise_sigma", "blocks", "objects", "poles"});
  DomainAppearance a = fallback;
  if (j.contains("palette")) {
    check(j["palette"].is_array(), "config", std::string(ctx) + ".palette must be an array");
    a.palette.clear();
    for (const json& c : j["palette"]) {
      check(c.is_array() && c.size() == 3 && c[0].is_number() && c[1].is_number() && c[2].is_number(),
            "config", std::string(ctx) + ".palette entries must be [r,g,b] numbers");
      a.palette.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
    }
  }
  a.noise_sigma = jsonu::get_num(j, ctx, "noise_sigma", a.noise_sigma);
  auto range = [&](const char* key, int& lo, int& hi) {
    if (!j.contains(key)) return;
    const json& r = j[key];
    check(r.is_array() && r.size() == 2 && r[0].is_number_integer() && r[1].is_number_integer(),
          "config", std::string(ctx) + "." + key + " must be [min,max] integers");
    lo = r[0].get<int>();
    hi = r[1].get<int>();
  };
  range("blocks", a.blocks_min, a.blocks_max);
  range("objects", a.objects_min, a.objects_max);
  range("poles", a.poles_min, a.poles_max);
  return a;
}

json scene_spec_to_json_obj(const SceneSpec& s);
SceneSpec scene_spec_from_json_obj(const json& j, const char* ctx);

json scene_spec_to_json_obj(const SceneSpec& s) {
  return json{{"height", s.height},
              {"width", s.width},
              {"num_classes", s.num_classes},
              {"source", appearance_to_json(s.source)},
              {"target", appearance_to_json(s.target)},
              {"hue_offset", s.hue_offset},
              {"texture_amp", s.texture_amp},
              {"freq_skew", s.freq_skew}};
}

SceneSpec scene_spec_from_json_obj(const json& j, const char* ctx) {
  jsonu::check_keys(j, ctx, {"height", "width", "num_classes", "source", "target", "hue_offset",
                             "texture_amp", "freq_skew"});
  SceneSpec s = SceneSpec::defaults();
  s.height = jsonu::get_int(j, ctx, "height", s.height);
  s.width = jsonu::get_int(j, ctx, "width", s.width);
  s.num_classes = jsonu::get_int(j, ctx, "num_classes", s.num_classes);
  if (j.contains("source")) s.source = appearance_from_json(j["source"], "scene.source", s.source);
  if (j.contains("target")) s.target = appearance_from_json(j["target"], "scene.target", s.target);
  s.hue_offset = jsonu::get_num(j, ctx, "hue_offset", s.hue_offset);
  s.texture_amp = jsonu::get_num(j, ctx, "texture_amp", s.texture_amp);
  s.freq_skew = jsonu::get_num(j, ctx, "freq_skew", s.freq_skew);
  s.validate();
  return s;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
  return scene_spec_to_json_obj(spec).dump(2) + "\n";
}

SceneSpec scene_spec_from_json(const std::string& text) {
  return scene_spec_from_json_obj(jsonu::parse(text, "scene spec"), "scene");
}

// ---------------------------------------------------------------------------
// Generation

namespace {

// Rotation of RGB about the gray axis (1,1,1)/sqrt(3) by theta.
std::array<double, 9> hue_matrix(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double t = (1.0 - c) / 3.0, k = s / std::sqrt(3.0);
  return {c + t, t - k, t + k, t + k, c + t, t - k, t - k, t + k, c + t};
}

std::array<double, 3> apply3(const std::array<double, 9>& m, const std::array<double, 3>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Sample generate_scene(const SceneSpec& spec, Domain domain, std::uint64_t seed) {
  spec.validate();
  const int H = spec.height, W = spec.width;
  const bool tgt = domain == Domain::target;
  const DomainAppearance& ap = tgt ? spec.target : spec.source;
  Rng rng(derive_seed(seed, tgt ? 0x7A96 : 0x50C5));

  Sample out;
  out.domain = domain;
  out.seed = seed;
  out.num_classes = spec.num_classes;
  out.labels.h = H;
  out.labels.w = W;
  out.labels.v.assign(static_cast<std::size_t>(H) * W, 0);

  // geometry; draw order is part of the format
  const int horizon = rng.uniform_int(static_cast<int>(std::lround(0.40 * H)),
                                      static_cast<int>(std::lround(0.62 * H)));
  auto skewed = [&](int n) {
    return tgt ? static_cast<int>(std::lround(n * spec.freq_skew)) : n;
  };
  const int n_blocks = rng.uniform_int(ap.blocks_min, ap.blocks_max);
  const int n_objects = skewed(rng.uniform_int(ap.objects_min, ap.objects_max));
  const int n_poles = skewed(rng.uniform_int(ap.poles_min, ap.poles_max));

  auto label_at = [&](int y, int x) -> std::uint8_t& {
    return out.labels.v[static_cast<std::size_t>(y) * W + x];
  };
  for (int y = 0; y < horizon; ++y)
    for (int x = 0; x < W; ++x) label_at(y, x) = 1;  // sky above the horizon

  for (int i = 0; i < n_blocks; ++i) {
    const int bw = rng.uniform_int(std::max(2, W / 8), std::max(3, W / 3));
    const int bh = rng.uniform_int(std::max(2, H / 6), std::max(3, H / 2));
    const int x0 = rng.uniform_int(-bw / 2, W - 1);
    for (int y = std::max(0, horizon - bh); y < horizon; ++y)
      for (int x = std::max(0, x0); x < std::min(W, x0 + bw); ++x) label_at(y, x) = 2;
  }
  for (int i = 0; i < n_objects; ++i) {
    const int ow = rng.uniform_int(2, std::max(2, W / 14));
    const int oh = rng.uniform_int(2, std::max(2, H / 14));
    const int x0 = rng.uniform_int(0, std::max(0, W - ow));
    const int ylo = std::min(horizon + 1, H - oh);
    const int y0 = rng.uniform_int(std::max(0, ylo), H - oh);
    for (int y = y0; y < y0 + oh; ++y)
      for (int x = x0; x < std::min(W, x0 + ow); ++x) label_at(y, x) = 3;
  }
  for (int i = 0; i < n_poles; ++i) {
    const int x = rng.uniform_int(1, W - 2);
    const int len = rng.uniform_int(std::max(2, H / 5), std::max(3, H / 3));
    const int ytop = std::max(0, horizon - len);
    const int ybot = std::min(H, horizon + std::max(2, H / 16));
    for (int y = ytop; y < ybot; ++y) label_at(y, x) = 4;
  }

  // appearance
  const double light = rng.uniform(-0.04, 0.04);
  const double phase_x = rng.uniform(0.0, 6.283185307179586);
  const double phase_y = rng.uniform(0.0, 6.283185307179586);

  std::vector<std::array<double, 3>> palette = ap.palette;
  if (tgt && spec.hue_offset != 0.0) {
    const auto m = hue_matrix(spec.hue_offset);
    for (auto& c : palette) c = apply3(m, c);
  }

  std::vector<double> img(3u * H * W);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::uint8_t lab = label_at(y, x);
      const auto& base = palette[lab];
      double tex = 0.0;
      if (tgt && spec.texture_amp != 0.0)
        tex = spec.texture_amp * std::sin(x * 0.897597901025655 + phase_x) *
              std::sin(y * 1.256637061435917 + phase_y);
      for (int ch = 0; ch < 3; ++ch) {
        double v = base[ch] + light + tex + ap.noise_sigma * rng.normal();
        img[ch * plane + static_cast<std::size_t>(y) * W + x] =
            quantize(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  out.image = Tensor::from_values({3, H, W}, std::move(img));
  return out;
}

// ---------------------------------------------------------------------------

ClassWeights class_frequencies(const std::vector<Sample>& samples) {
  check(!samples.empty(), "data", "class_frequencies: no samples given");
  const int C = samples[0].num_classes;
  std::vector<std::int64_t> counts(C, 0);
  std::int64_t labeled = 0;
  for (const Sample& s : samples) {
    check(s.domain == Domain::source, "data",
          "class_frequencies: requires source-domain samples (target ground truth is off limits)");
    check(s.num_classes == C, "data", "class_frequencies: inconsistent num_classes across samples");
    for (std::uint8_t lab : s.labels.v) {
      if (lab == kVoid) continue;
      check(lab < C, "data", "class_frequencies: label out of range");
      ++counts[lab];
      ++labeled;
    }
  }
  check(labeled > 0, "data", "class_frequencies: every pixel is void");
  ClassWeights cw;
  cw.w.resize(C);
  for (int c = 0; c < C; ++c)
    cw.w[c] = 1.0 - static_cast<double>(counts[c]) / static_cast<double>(labeled);
  return cw;
}

Tensor one_hot(const LabelGrid& labels, int num_classes) {
  check(num_classes >= 1, "data", "one_hot: num_classes must be >= 1");
  check(labels.h > 0 && labels.w > 0 &&
            labels.v.size() == static_cast<std::size_t>(labels.h) * labels.w,
        "shape", "one_hot: malformed label grid");
  const std::size_t plane = labels.v.size();
  std::vector<double> out(static_cast<std::size_t>(num_classes) * plane, 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    const std::uint8_t lab = labels.v[p];
    if (lab == kVoid) continue;
    check(lab < num_classes, "data",
          "one_hot: label " + std::to_string(lab) + " >= num_classes " + std::to_string(num_classes));
    out[static_cast<std::size_t>(lab) * plane + p] = 1.0;
  }
  return Tensor::from_values({num_classes, labels.h, labels.w}, std::move(out));
}

// ---------------------------------------------------------------------------
// Sample file format: magic "UDAS1\n", u8 domain, u64 seed, u32 H, u32 W,
// u32 num_classes, H*W*3 float32 image channel-last, H*W u8 labels.

void write_sample(const Sample& sample, const std::string& path) {
  const int H = sample.labels.h, W = sample.labels.w;
  check(sample.image.defined() && sample.image.shape() == Shape{3, H, W}, "shape",
        "write_sample: image/label shapes disagree");
  std::string buf;
  buf.reserve(23 + static_cast<std::size_t>(H) * W * 13);
  buf.append(kSampleMagic, 6);
  binio::put<std::uint8_t>(buf, static_cast<std::uint8_t>(sample.domain));
  binio::put<std::uint64_t>(buf, sample.seed);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(H));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(W));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(sample.num_classes));
  auto img = sample.image.values();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < plane; ++p)
    for (int ch = 0; ch < 3; ++ch)
      binio::put<float>(buf, static_cast<float>(img[ch * plane + p]));
  buf.append(reinterpret_cast<const char*>(sample.labels.v.data()), plane);
  binio::spew(path, buf, "write_sample");
}

Sample read_sample(const std::string& path) {
  binio::Reader r(binio::slurp(path, "read_sample"), "read_sample(" + path + ")");
  const std::string magic = r.get_bytes(6);
  check(magic == std::string(kSampleMagic, 6), "format",
        "read_sample(" + path + "): bad magic, expected \"UDAS1\\n\"");
  const auto dom = r.get<std::uint8_t>();
  check(dom <= 1, "format", "read_sample(" + path + "): domain byte must be 0 or 1");
  Sample s;
  s.domain = static_cast<Domain>(dom);
  s.seed = r.get<std::uint64_t>();
  const auto H = r.get<std::uint32_t>();
  const auto W = r.get<std::uint32_t>();
  const auto C = r.get<std::uint32_t>();
  check(H >= 1 && H <= 1 << 14 && W >= 1 && W <= 1 << 14, "format",
        "read_sample(" + path + "): implausible dimensions");
  check(C >= 1 && C <= 254, "format", "read_sample(" + path + "): implausible class count");
  s.num_classes = static_cast<int>(C);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> img(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (int ch = 0; ch < 3; ++ch) {
      const float v = r.get<float>();
      check(std::isfinite(v) && v >= 0.0f && v <= 1.0f, "format",
            "read_sample(" + path + "): image value outside [0,1]");
      img[ch * plane + p] = static_cast<double>(v);
    }
  s.image = Tensor::from_values({3, static_cast<int>(H), static_cast<int>(W)}, std::move(img));
  s.labels.h = static_cast<int>(H);
  s.labels.w = static_cast<int>(W);
  const std::string raw = r.get_bytes(plane);
  r.expect_end();
  s.labels.v.assign(raw.begin(), raw.end());
  for (std::uint8_t lab : s.labels.v)
    check(lab == kVoid || lab < C, "format",
          "read_sample(" + path + "): label " + std::to_string(lab) + " out of range");
  return s;
}

void write_dataset(const std::string& dir, const SceneSpec& spec, Domain domain, int count,
                   std::uint64_t base_seed) {
  spec.validate();
  check(count >= 0, "config", "write_dataset: count must be >= 0");
  std::error_code ec;
  fs::create_directories(dir, ec);
  check(!ec, "io", "write_dataset: cannot create " + dir + ": " + ec.message());
  binio::spew((fs::path(dir) / "meta.json").string(), scene_spec_to_json(spec), "write_dataset");
  for (int i = 0; i < count; ++i) {
    Sample s = generate_scene(spec, domain, derive_seed(base_seed, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.udas", i);
    write_sample(s, (fs::path(dir) / name).string());
  }
}

std::vector<Sample> load_dataset(const std::string& dir, bool strip_labels) {
  check(fs::is_directory(dir), "io", "load_dataset: " + dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".udas")
      names.push_back(entry.path().string());
  std::ranges::sort(names);
  std::vector<Sample> out;
  out.reserve(names.size());
  for (const std::string& name : names) {
    Sample s = read_sample(name);
    if (strip_labels) std::ranges::fill(s.labels.v, kVoid);
    if (!out.empty()) {
      check(s.labels.h == out[0].labels.h && s.labels.w == out[0].labels.w &&
                s.num_classes == out[0].num_classes,
            "data", "load_dataset: inconsistent sample shapes in " + dir);
      check(s.domain == out[0].domain, "data", "load_dataset: mixed domains in " + dir);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace udaforge
