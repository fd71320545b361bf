#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace uwsynth {

// Epsilon floor applied to the per-channel variance when normalizing
// (instance normalization inside adain). Channels whose variance is below
// the floor are treated as constant.
inline constexpr double kVarianceEps = 1e-5;

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::int64_t numel() const {
    return std::int64_t(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense 4-D tensor, (batch, channel, height, width), row-major. Copies are
// shallow handles; the storage address is the tensor's identity on the tape.
// Tensors are treated as immutable once produced by an op; parameters are
// the exception and are updated in place by the optimizer between steps.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(Shape4 shape, bool requires_grad = false);

  static Tensor4 zeros(Shape4 shape) { return Tensor4(shape); }
  static Tensor4 full(Shape4 shape, T value);
  static Tensor4 from(Shape4 shape, std::vector<T> values, bool requires_grad = false);
  static Tensor4 scalar(T value) { return full({1, 1, 1, 1}, value); }

  bool defined() const { return store_ != nullptr; }
  const Shape4& shape() const { return store_->shape; }
  std::int64_t numel() const { return store_->shape.numel(); }

  std::vector<T>& values() { return store_->v; }
  const std::vector<T>& values() const { return store_->v; }
  T* data() { return store_->v.data(); }
  const T* data() const { return store_->v.data(); }

  T& at(int b, int c, int y, int x) { return store_->v[offset(b, c, y, x)]; }
  T at(int b, int c, int y, int x) const { return store_->v[offset(b, c, y, x)]; }

  bool requires_grad() const { return store_->requires_grad; }
  void set_requires_grad(bool on) { store_->requires_grad = on; }

  // Identity key for gradient bookkeeping.
  const void* id() const { return store_.get(); }

  // Value of a 1-element tensor.
  T item() const;

  bool all_finite() const;

 private:
  struct Store {
    Shape4 shape;
    std::vector<T> v;
    bool requires_grad = false;
  };
  std::int64_t offset(int b, int c, int y, int x) const {
    const Shape4& s = store_->shape;
    return ((std::int64_t(b) * s.c + c) * s.h + y) * s.w + x;
  }
  std::shared_ptr<Store> store_;
};

// Reverse-mode tape. Ops record one closure per forward call; backward
// replays them in exact reverse order, summing contributions into per-tensor
// gradient buffers keyed by tensor identity. Single use: one forward pass,
// one backward, after which only the accumulated gradients remain readable.
template <typename T>
class GradTape {
 public:
  using BackFn = std::function<void(GradTape&)>;

  void record(BackFn fn) { records_.push_back(std::move(fn)); }

  // loss must be a 1-element tensor produced under this tape.
  void backward(const Tensor4<T>& loss);

  bool has_grad(const Tensor4<T>& t) const { return grads_.count(t.id()) != 0; }

  // Gradient buffer for t, zero-filled if absent (t unreachable from loss).
  std::vector<T> grad(const Tensor4<T>& t) const;

  // Accumulation buffer used by op backward closures.
  std::vector<T>& grad_buffer(const Tensor4<T>& t);
  const std::vector<T>* find_grad(const Tensor4<T>& t) const;

  std::size_t recorded_ops() const { return records_.size(); }

 private:
  std::vector<BackFn> records_;
  std::unordered_map<const void*, std::vector<T>> grads_;
  std::unordered_map<const void*, std::int64_t> sizes_;
  bool consumed_ = false;
};

// ---- operators ----------------------------------------------------------
// Every op is a pure function of its inputs. Passing a tape records the
// backward closure; a null tape runs forward only.

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, int stride,
                  int padding, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> conv2d_transpose(const Tensor4<T>& x, const Tensor4<T>& kernel,
                            int stride, int padding, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> bias_add(const Tensor4<T>& x, const Tensor4<T>& bias,
                    GradTape<T>* tape = nullptr);  // bias shape (1,C,1,1)

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> scale(const Tensor4<T>& x, T factor, GradTape<T>* tape = nullptr);

// Per-(batch, channel) spatial mean and population standard deviation.
// Index layout of the result: b * channels + c.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> instance_stats(const Tensor4<T>& x);

// Re-normalizes each channel of x to the given per-channel statistics.
// Differentiable w.r.t. x; the style vectors are constants.
template <typename T>
Tensor4<T> adain(const Tensor4<T>& x, const std::vector<T>& style_mean,
                 const std::vector<T>& style_std, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> l1_loss(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> mse_loss(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape = nullptr);

template <typename T>
Tensor4<T> sum(const Tensor4<T>& x, GradTape<T>* tape = nullptr);

// Mirror along the width axis (no tape; data prep / tests).
template <typename T>
Tensor4<T> hflip_w(const Tensor4<T>& x);

// ---- optimizer ----------------------------------------------------------

template <typename T>
struct AdamState {
  T lr = T(2e-4);
  T beta1 = T(0.5);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  long step = 0;

  struct Moments {
    std::vector<T> m, v;
  };
  std::unordered_map<const void*, Moments> moments;
};

// One bias-corrected Adam update over `params` with gradients read from the
// tape (zero where a parameter was unreachable from the loss).
template <typename T>
void adam_step(std::vector<Tensor4<T>>& params, const GradTape<T>& tape,
               AdamState<T>& state);

// ---- threading ----------------------------------------------------------
// Worker cap for the conv kernels. Each worker owns a disjoint slice of the
// output, so results are bit-identical for every thread count.
int max_threads();
void set_max_threads(int n);

using TensorF = Tensor4<float>;
using TensorD = Tensor4<double>;

}  // namespace uwsynth
