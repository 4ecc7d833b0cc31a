#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "udaforge/common.hpp"

namespace udaforge {

// Dense row-major tensor of float64, order <= 4. Network data uses the
// B x C x H x W layout. Copying a Tensor copies the handle, not the buffer.
using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// Heap buffers handed to Eigen are 64-byte aligned so vectorized reduction
// splits never depend on where the allocator happened to place them; numeric
// results stay bitwise identical across runs in the same process.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t alignment = 64;
  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }
  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
};
using AlignedVec = std::vector<double, AlignedAlloc<double>>;

struct Storage {
  Shape shape;
  AlignedVec values;
  AlignedVec grad;  // allocated lazily, same length as values
  bool requires_grad = false;
  bool op_output = false;
  const void* producer = nullptr;  // graph that created this op output

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  bool grad_needed() const { return requires_grad || op_output; }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  std::size_t size() const;

  bool requires_grad() const;
  // Toggled freely on any tensor; the trainer uses it to freeze D while G's
  // gradients flow through it.
  void set_requires_grad(bool b);

  std::span<const double> values() const;
  std::span<double> values_mut();
  double item() const;  // scalar only

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Copy of the values as a fresh leaf with requires_grad=false. Gradients
  // never flow across a detach.
  Tensor detach() const;

  detail::Storage* storage() const { return st_.get(); }

 private:
  friend class Graph;
  explicit Tensor(std::shared_ptr<detail::Storage> st) : st_(std::move(st)) {}
  std::shared_ptr<detail::Storage> st_;
};

// Records ops in creation order; backward() replays the tape in exact reverse
// order, so repeated runs are bitwise reproducible. One backward per graph;
// call clear() (or use a fresh Graph) before reusing.
//
// A non-recording graph computes forward values only.
class Graph {
 public:
  Graph() = default;
  explicit Graph(bool recording) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout]; zero padding,
  // out dims floor((H + 2*pad - kh)/stride) + 1.
  Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                int stride, int padding);
  Tensor leaky_relu(const Tensor& x, double negative_slope);
  // softmax over dim 1 of [B,C,H,W], max-subtracted per pixel.
  Tensor softmax_channels(const Tensor& x);
  // Bilinear interpolation with half-pixel centers (align_corners=false):
  // src = (dst + 0.5) * in/out - 0.5, clamped to [0, in-1]; corner samples
  // clamp rather than extrapolate. Scale factors may be fractional.
  Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w);
  Tensor sigmoid(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);  // same shape
  Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
  Tensor scale(const Tensor& x, double k);
  Tensor sum(const Tensor& x);  // -> scalar []

  // Hook for ops with hand-written backward (the losses). `backward` receives
  // the output gradient and must accumulate into its captured inputs.
  Tensor emit(Shape out_shape, std::vector<double> out_values,
              std::function<void(std::span<const double> out_grad)> backward);

  // loss must be a scalar produced by this graph. Seeds d(loss)/d(loss)=1 and
  // accumulates into .grad of every reachable tensor with requires_grad or of
  // op outputs. Rejects a second call without clear().
  void backward(const Tensor& loss);

  void clear();
  std::size_t node_count() const { return nodes_.size(); }
  bool recording() const { return recording_; }

 private:
  Tensor make_output(Shape shape, std::vector<double> values);
  void record(std::function<void()> fn);

  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool ran_backward_ = false;
};

}  // namespace udaforge
