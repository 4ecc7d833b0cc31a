#include "udaforge/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace udaforge {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

static void validate_shape(const Shape& s) {
  check(s.size() <= 4, "shape", "tensor order must be <= 4, got " + shape_str(s));
  for (int d : s) check(d > 0, "shape", "tensor dims must be positive, got " + shape_str(s));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  auto st = std::make_shared<detail::Storage>();
  st->values.assign(shape_size(shape), 0.0);
  st->shape = std::move(shape);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::ranges::fill(t.st_->values, value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  check(values.size() == shape_size(shape), "shape",
        "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  auto st = std::make_shared<detail::Storage>();
  st->shape = std::move(shape);
  st->values.assign(values.begin(), values.end());
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::scalar(double v) { return from_values({}, {v}); }

const Shape& Tensor::shape() const {
  check(defined(), "state", "shape() on undefined tensor");
  return st_->shape;
}

int Tensor::dim(int i) const {
  const Shape& s = shape();
  check(i >= 0 && i < static_cast<int>(s.size()), "shape", "dim index out of range");
  return s[i];
}

std::size_t Tensor::size() const {
  check(defined(), "state", "size() on undefined tensor");
  return st_->values.size();
}

bool Tensor::requires_grad() const { return defined() && st_->requires_grad; }

void Tensor::set_requires_grad(bool b) {
  check(defined(), "state", "set_requires_grad on undefined tensor");
  check(!st_->op_output, "state", "set_requires_grad on an op output; detach() first");
  st_->requires_grad = b;
}

std::span<const double> Tensor::values() const {
  check(defined(), "state", "values() on undefined tensor");
  return st_->values;
}

std::span<double> Tensor::values_mut() {
  check(defined(), "state", "values_mut() on undefined tensor");
  return st_->values;
}

double Tensor::item() const {
  check(defined() && st_->values.size() == 1, "shape", "item() needs a scalar tensor");
  return st_->values[0];
}

bool Tensor::has_grad() const { return defined() && !st_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  check(has_grad(), "state", "grad() on tensor with no gradient buffer");
  return st_->grad;
}

std::span<double> Tensor::grad_mut() {
  check(defined(), "state", "grad_mut() on undefined tensor");
  st_->ensure_grad();
  return st_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::ranges::fill(st_->grad, 0.0);
}

Tensor Tensor::detach() const {
  check(defined(), "state", "detach() on undefined tensor");
  auto st = std::make_shared<detail::Storage>();
  st->shape = st_->shape;
  st->values = st_->values;
  return Tensor(std::move(st));
}

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::make_output(Shape shape, std::vector<double> values) {
  Tensor t = Tensor::from_values(std::move(shape), std::move(values));
  if (recording_) {
    t.st_->op_output = true;
    t.st_->producer = this;
    t.st_->ensure_grad();
  }
  return t;
}

void Graph::record(std::function<void()> fn) {
  if (recording_) nodes_.push_back(std::move(fn));
}

void Graph::backward(const Tensor& loss) {
  check(recording_, "state", "backward() on a non-recording graph");
  check(loss.defined(), "state", "backward() on undefined tensor");
  auto* st = loss.storage();
  check(st->op_output && st->producer == this, "state",
        "backward() target was not produced by this graph");
  check(st->values.size() == 1, "state",
        "backward() needs a scalar loss, got shape " + shape_str(st->shape));
  check(!ran_backward_, "state", "backward() called twice; clear() the graph first");
  ran_backward_ = true;
  st->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Graph::clear() {
  nodes_.clear();
  ran_backward_ = false;
}

Tensor Graph::emit(Shape out_shape, std::vector<double> out_values,
                   std::function<void(std::span<const double>)> backward) {
  Tensor out = make_output(std::move(out_shape), std::move(out_values));
  if (recording_) {
    auto ost = out.st_;
    record([ost, fn = std::move(backward)] { fn(ost->grad); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: im2col + dgemm. cols is K x N with K = Cin*kh*kw, N = Ho*Wo; row
// r = (ci*kh + ky)*kw + kx holds input channel ci sampled at kernel offset
// (ky,kx) for every output position.

namespace {

struct ConvDims {
  int B, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo;
  int K() const { return Cin * kh * kw; }
  int N() const { return Ho * Wo; }
};

detail::AlignedVec& conv_scratch(int which, std::size_t n) {
  thread_local detail::AlignedVec bufs[2];
  auto& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b;
}

void im2col(const double* x, const ConvDims& d, double* cols) {
  const int N = d.N();
  for (int ci = 0; ci < d.Cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        double* row = cols + static_cast<std::size_t>((ci * d.kh + ky) * d.kw + kx) * N;
        int lo = 0, hi = d.Wo;
        if (d.pad - kx > 0) lo = (d.pad - kx + d.stride - 1) / d.stride;
        int cap = (d.W + d.pad - kx + d.stride - 1) / d.stride;
        if (cap < hi) hi = cap;
        if (hi < lo) hi = lo;
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          double* out = row + static_cast<std::size_t>(oy) * d.Wo;
          if (iy < 0 || iy >= d.H) {
            std::fill(out, out + d.Wo, 0.0);
            continue;
          }
          const double* in = x + (static_cast<std::size_t>(ci) * d.H + iy) * d.W;
          std::fill(out, out + lo, 0.0);
          std::fill(out + hi, out + d.Wo, 0.0);
          int ix = lo * d.stride - d.pad + kx;
          for (int ox = lo; ox < hi; ++ox, ix += d.stride) out[ox] = in[ix];
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, double* dx) {
  const int N = d.N();
  for (int ci = 0; ci < d.Cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const double* row = cols + static_cast<std::size_t>((ci * d.kh + ky) * d.kw + kx) * N;
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          double* out = dx + (static_cast<std::size_t>(ci) * d.H + iy) * d.W;
          const double* in = row + static_cast<std::size_t>(oy) * d.Wo;
          int ix = -d.pad + kx;
          for (int ox = 0; ox < d.Wo; ++ox, ix += d.stride) {
            if (ix >= 0 && ix < d.W) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Graph::conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride, int padding) {
  check(input.defined() && weight.defined() && bias.defined(), "shape", "conv2d: undefined operand");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  check(xs.size() == 4, "shape", "conv2d: input must be [B,C,H,W], got " + shape_str(xs));
  check(ws.size() == 4, "shape", "conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(ws));
  check(bias.shape() == Shape{ws[0]}, "shape",
        "conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout " + std::to_string(ws[0]));
  check(xs[1] == ws[1], "shape",
        "conv2d: input channels " + std::to_string(xs[1]) + " vs weight channels " + std::to_string(ws[1]) +
            " (input " + shape_str(xs) + ", weight " + shape_str(ws) + ")");
  check(stride >= 1, "shape", "conv2d: stride must be >= 1");
  check(padding >= 0, "shape", "conv2d: padding must be >= 0");
  ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  check(d.H + 2 * d.pad >= d.kh && d.W + 2 * d.pad >= d.kw, "shape",
        "conv2d: kernel " + shape_str({d.kh, d.kw}) + " exceeds padded input " + shape_str(xs) +
            " with padding " + std::to_string(padding));
  d.Ho = (d.H + 2 * d.pad - d.kh) / d.stride + 1;
  d.Wo = (d.W + 2 * d.pad - d.kw) / d.stride + 1;

  const int K = d.K(), N = d.N();
  std::vector<double> out(static_cast<std::size_t>(d.B) * d.Cout * N);
  {
    auto& cols = conv_scratch(0, static_cast<std::size_t>(K) * N);
    Eigen::Map<const RowMat> Wm(weight.values().data(), d.Cout, K);
    for (int b = 0; b < d.B; ++b) {
      im2col(input.values().data() + static_cast<std::size_t>(b) * d.Cin * d.H * d.W, d, cols.data());
      Eigen::Map<const RowMat> Cm(cols.data(), K, N);
      Eigen::Map<RowMat> Om(out.data() + static_cast<std::size_t>(b) * d.Cout * N, d.Cout, N);
      Om.noalias() = Wm * Cm;
      for (int oc = 0; oc < d.Cout; ++oc) Om.row(oc).array() += bias.values()[oc];
    }
  }

  Tensor result = make_output({d.B, d.Cout, d.Ho, d.Wo}, std::move(out));
  if (!recording_) return result;

  auto xst = input.st_, wst = weight.st_, bst = bias.st_, ost = result.st_;
  record([xst, wst, bst, ost, d, K, N] {
    const bool need_dx = xst->grad_needed();
    const bool need_dw = wst->grad_needed();
    const bool need_db = bst->grad_needed();
    if (!need_dx && !need_dw && !need_db) return;
    if (need_dx) xst->ensure_grad();
    if (need_dw) wst->ensure_grad();
    if (need_db) bst->ensure_grad();
    auto& cols = conv_scratch(0, static_cast<std::size_t>(K) * N);
    auto& dcols = conv_scratch(1, static_cast<std::size_t>(K) * N);
    Eigen::Map<const RowMat> Wm(wst->values.data(), d.Cout, K);
    for (int b = 0; b < d.B; ++b) {
      Eigen::Map<const RowMat> Gm(ost->grad.data() + static_cast<std::size_t>(b) * d.Cout * N, d.Cout, N);
      if (need_db) {
        for (int oc = 0; oc < d.Cout; ++oc) bst->grad[oc] += Gm.row(oc).sum();
      }
      if (need_dw) {
        im2col(xst->values.data() + static_cast<std::size_t>(b) * d.Cin * d.H * d.W, d, cols.data());
        Eigen::Map<const RowMat> Cm(cols.data(), K, N);
        Eigen::Map<RowMat> dWm(wst->grad.data(), d.Cout, K);
        dWm.noalias() += Gm * Cm.transpose();
      }
      if (need_dx) {
        Eigen::Map<RowMat> dCm(dcols.data(), K, N);
        dCm.noalias() = Wm.transpose() * Gm;
        col2im_add(dcols.data(), d, xst->grad.data() + static_cast<std::size_t>(b) * d.Cin * d.H * d.W);
      }
    }
  });
  return result;
}

Tensor Graph::leaky_relu(const Tensor& x, double negative_slope) {
  check(x.defined(), "shape", "leaky_relu: undefined operand");
  check(negative_slope > 0.0 && negative_slope < 1.0, "shape",
        "leaky_relu: slope must lie in (0,1), got " + std::to_string(negative_slope));
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : negative_slope * xv[i];
  Tensor result = make_output(x.shape(), std::move(out));
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost, negative_slope] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    for (std::size_t i = 0; i < xst->values.size(); ++i)
      xst->grad[i] += (xst->values[i] > 0.0 ? 1.0 : negative_slope) * ost->grad[i];
  });
  return result;
}

Tensor Graph::softmax_channels(const Tensor& x) {
  check(x.defined() && x.shape().size() == 4, "shape",
        "softmax_channels: input must be [B,C,H,W]" +
            (x.defined() ? ", got " + shape_str(x.shape()) : std::string()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check(C >= 2, "shape", "softmax_channels: needs C >= 2, got C = " + std::to_string(C));
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (int b = 0; b < B; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * C * HW;
    for (int p = 0; p < HW; ++p) {
      double mx = xv[base + p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xv[base + static_cast<std::size_t>(c) * HW + p]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        double e = std::exp(xv[base + static_cast<std::size_t>(c) * HW + p] - mx);
        out[base + static_cast<std::size_t>(c) * HW + p] = e;
        sum += e;
      }
      for (int c = 0; c < C; ++c) out[base + static_cast<std::size_t>(c) * HW + p] /= sum;
    }
  }
  Tensor result = make_output(x.shape(), std::move(out));
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost, B, C, HW] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * C * HW;
      for (int p = 0; p < HW; ++p) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t i = base + static_cast<std::size_t>(c) * HW + p;
          dot += ost->grad[i] * ost->values[i];
        }
        for (int c = 0; c < C; ++c) {
          const std::size_t i = base + static_cast<std::size_t>(c) * HW + p;
          xst->grad[i] += ost->values[i] * (ost->grad[i] - dot);
        }
      }
    }
  });
  return result;
}

namespace {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> w;  // weight on i1
};

LerpAxis lerp_axis(int in, int out) {
  LerpAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    int lo = static_cast<int>(std::floor(src));
    a.i0[o] = lo;
    a.i1[o] = std::min(lo + 1, in - 1);
    a.w[o] = src - lo;
  }
  return a;
}
}  // namespace

Tensor Graph::bilinear_upsample(const Tensor& x, int out_h, int out_w) {
  check(x.defined() && x.shape().size() == 4, "shape",
        "bilinear_upsample: input must be [B,C,H,W]" +
            (x.defined() ? ", got " + shape_str(x.shape()) : std::string()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(out_h >= H && out_w >= W, "shape",
        "bilinear_upsample: output " + shape_str({out_h, out_w}) + " must not shrink input " +
            shape_str({H, W}));
  const LerpAxis ay = lerp_axis(H, out_h);
  const LerpAxis ax = lerp_axis(W, out_w);
  std::vector<double> out(static_cast<std::size_t>(B) * C * out_h * out_w);
  auto xv = x.values();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* in = xv.data() + static_cast<std::size_t>(bc) * H * W;
    double* o = out.data() + static_cast<std::size_t>(bc) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double* r0 = in + static_cast<std::size_t>(ay.i0[oy]) * W;
      const double* r1 = in + static_cast<std::size_t>(ay.i1[oy]) * W;
      const double wy = ay.w[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const double top = r0[ax.i0[ox]] + ax.w[ox] * (r0[ax.i1[ox]] - r0[ax.i0[ox]]);
        const double bot = r1[ax.i0[ox]] + ax.w[ox] * (r1[ax.i1[ox]] - r1[ax.i0[ox]]);
        o[static_cast<std::size_t>(oy) * out_w + ox] = top + wy * (bot - top);
      }
    }
  }
  Tensor result = make_output({B, C, out_h, out_w}, std::move(out));
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost, ay, ax, B, C, H, W, out_h, out_w] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      double* dx = xst->grad.data() + static_cast<std::size_t>(bc) * H * W;
      const double* go = ost->grad.data() + static_cast<std::size_t>(bc) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const double wy = ay.w[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const double g = go[static_cast<std::size_t>(oy) * out_w + ox];
          const double wx = ax.w[ox];
          dx[static_cast<std::size_t>(ay.i0[oy]) * W + ax.i0[ox]] += (1 - wy) * (1 - wx) * g;
          dx[static_cast<std::size_t>(ay.i0[oy]) * W + ax.i1[ox]] += (1 - wy) * wx * g;
          dx[static_cast<std::size_t>(ay.i1[oy]) * W + ax.i0[ox]] += wy * (1 - wx) * g;
          dx[static_cast<std::size_t>(ay.i1[oy]) * W + ax.i1[ox]] += wy * wx * g;
        }
      }
    }
  });
  return result;
}

Tensor Graph::sigmoid(const Tensor& x) {
  check(x.defined(), "shape", "sigmoid: undefined operand");
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor result = make_output(x.shape(), std::move(out));
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    for (std::size_t i = 0; i < xst->values.size(); ++i) {
      const double y = ost->values[i];
      xst->grad[i] += y * (1.0 - y) * ost->grad[i];
    }
  });
  return result;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined(), "shape", "add: undefined operand");
  check(a.shape() == b.shape(), "shape",
        "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor result = make_output(a.shape(), std::move(out));
  if (!recording_) return result;
  auto ast = a.st_, bst = b.st_, ost = result.st_;
  record([ast, bst, ost] {
    if (ast->grad_needed()) {
      ast->ensure_grad();
      for (std::size_t i = 0; i < ast->values.size(); ++i) ast->grad[i] += ost->grad[i];
    }
    if (bst->grad_needed()) {
      bst->ensure_grad();
      for (std::size_t i = 0; i < bst->values.size(); ++i) bst->grad[i] += ost->grad[i];
    }
  });
  return result;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined(), "shape", "mul: undefined operand");
  check(a.shape() == b.shape(), "shape",
        "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor result = make_output(a.shape(), std::move(out));
  if (!recording_) return result;
  auto ast = a.st_, bst = b.st_, ost = result.st_;
  record([ast, bst, ost] {
    if (ast->grad_needed()) {
      ast->ensure_grad();
      for (std::size_t i = 0; i < ast->values.size(); ++i) ast->grad[i] += bst->values[i] * ost->grad[i];
    }
    if (bst->grad_needed()) {
      bst->ensure_grad();
      for (std::size_t i = 0; i < bst->values.size(); ++i) bst->grad[i] += ast->values[i] * ost->grad[i];
    }
  });
  return result;
}

Tensor Graph::scale(const Tensor& x, double k) {
  check(x.defined(), "shape", "scale: undefined operand");
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * xv[i];
  Tensor result = make_output(x.shape(), std::move(out));
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost, k] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    for (std::size_t i = 0; i < xst->values.size(); ++i) xst->grad[i] += k * ost->grad[i];
  });
  return result;
}

Tensor Graph::sum(const Tensor& x) {
  check(x.defined(), "shape", "sum: undefined operand");
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor result = make_output({}, {total});
  if (!recording_) return result;
  auto xst = x.st_, ost = result.st_;
  record([xst, ost] {
    if (!xst->grad_needed()) return;
    xst->ensure_grad();
    const double g = ost->grad[0];
    for (std::size_t i = 0; i < xst->values.size(); ++i) xst->grad[i] += g;
  });
  return result;
}

}  // namespace udaforge
