#include "uwsynth/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace uwsynth {

std::string Shape4::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
         "x" + std::to_string(w);
}

namespace {

std::atomic<int> g_max_threads{1};

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Runs fn over [0, n) split into contiguous ranges, one per worker.
void parallel_ranges(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  int workers = std::min<std::int64_t>(g_max_threads.load(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::int64_t chunk = (n + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    std::int64_t lo = t * chunk;
    std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace

int max_threads() { return g_max_threads.load(); }

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, bool requires_grad) {
  check(shape.n > 0 && shape.c > 0 && shape.h > 0 && shape.w > 0,
        "tensor shape must be positive, got " + shape.str());
  store_ = std::make_shared<Store>();
  store_->shape = shape;
  store_->v.assign(std::size_t(shape.numel()), T(0));
  store_->requires_grad = requires_grad;
}

template <typename T>
Tensor4<T> Tensor4<T>::full(Shape4 shape, T value) {
  Tensor4 t(shape);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

template <typename T>
Tensor4<T> Tensor4<T>::from(Shape4 shape, std::vector<T> values, bool requires_grad) {
  check(std::int64_t(values.size()) == shape.numel(),
        "data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
  Tensor4 t(shape, requires_grad);
  t.store_->v = std::move(values);
  return t;
}

template <typename T>
T Tensor4<T>::item() const {
  check(numel() == 1, "item() requires a 1-element tensor, got " + shape().str());
  return store_->v[0];
}

template <typename T>
bool Tensor4<T>::all_finite() const {
  for (T v : store_->v)
    if (!std::isfinite(double(v))) return false;
  return true;
}

// ---- tape ----------------------------------------------------------------

template <typename T>
void GradTape<T>::backward(const Tensor4<T>& loss) {
  check(!consumed_, "tape already consumed; a tape runs exactly one backward");
  check(loss.numel() == 1,
        "backward requires a scalar loss, got shape " + loss.shape().str());
  consumed_ = true;
  grad_buffer(loss)[0] = T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(*this);
  records_.clear();
}

template <typename T>
std::vector<T> GradTape<T>::grad(const Tensor4<T>& t) const {
  auto it = grads_.find(t.id());
  if (it != grads_.end()) return it->second;
  return std::vector<T>(std::size_t(t.numel()), T(0));
}

template <typename T>
std::vector<T>& GradTape<T>::grad_buffer(const Tensor4<T>& t) {
  auto it = grads_.find(t.id());
  if (it != grads_.end()) return it->second;
  auto& buf = grads_[t.id()];
  buf.assign(std::size_t(t.numel()), T(0));
  return buf;
}

template <typename T>
const std::vector<T>* GradTape<T>::find_grad(const Tensor4<T>& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

// ---- conv kernels --------------------------------------------------------
// All four data paths are written as gathers: each output element is owned
// by exactly one iteration, so the parallel split stays bit-deterministic.

namespace {

// out(b,o,oy,ox) = sum_{i,u,v} x(b,i,oy*s+u-p,ox*s+v-p) * k(o,i,u,v)
template <typename T>
void conv_forward_kernel(const Tensor4<T>& x, const Tensor4<T>& k, int s, int p,
                         Tensor4<T>& out) {
  const auto [N, Ci, H, W] = x.shape();
  const auto [Co, Ck, Kh, Kw] = k.shape();
  const auto [No, Cq, Ho, Wo] = out.shape();
  const T* xd = x.data();
  const T* kd = k.data();
  T* od = out.data();
  parallel_ranges(std::int64_t(N) * Co, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bo = lo; bo < hi; ++bo) {
      int b = int(bo / Co), o = int(bo % Co);
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = 0;
          for (int i = 0; i < Ci; ++i)
            for (int u = 0; u < Kh; ++u) {
              int iy = oy * s + u - p;
              if (iy < 0 || iy >= H) continue;
              for (int v = 0; v < Kw; ++v) {
                int ix = ox * s + v - p;
                if (ix < 0 || ix >= W) continue;
                acc += xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix] *
                       kd[((std::int64_t(o) * Ci + i) * Kh + u) * Kw + v];
              }
            }
          od[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox] = acc;
        }
    }
  });
}

// gx(b,i,iy,ix) = sum_{o,u,v : (iy+p-u) = oy*s} g(b,o,oy,ox) * k(o,i,u,v)
// Same access pattern as the conv2d_transpose forward pass, which is the
// adjointness identity in code form.
template <typename T>
void conv_input_grad_kernel(const Tensor4<T>& g, const Tensor4<T>& k, int s, int p,
                            Tensor4<T>& gx) {
  const auto [N, Co, Ho, Wo] = g.shape();
  const auto [Ck, Ci, Kh, Kw] = k.shape();
  const auto [Nx, Cx, H, W] = gx.shape();
  const T* gd = g.data();
  const T* kd = k.data();
  T* xd = gx.data();
  parallel_ranges(std::int64_t(N) * Ci, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bi = lo; bi < hi; ++bi) {
      int b = int(bi / Ci), i = int(bi % Ci);
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T acc = 0;
          for (int o = 0; o < Co; ++o)
            for (int u = 0; u < Kh; ++u) {
              int ny = iy + p - u;
              if (ny < 0 || ny % s != 0) continue;
              int oy = ny / s;
              if (oy >= Ho) continue;
              for (int v = 0; v < Kw; ++v) {
                int nx = ix + p - v;
                if (nx < 0 || nx % s != 0) continue;
                int ox = nx / s;
                if (ox >= Wo) continue;
                acc += gd[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox] *
                       kd[((std::int64_t(o) * Ci + i) * Kh + u) * Kw + v];
              }
            }
          xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix] = acc;
        }
    }
  });
}

// gk(o,i,u,v) = sum_{b,oy,ox} g(b,o,oy,ox) * x(b,i,oy*s+u-p,ox*s+v-p)
template <typename T>
void conv_kernel_grad_kernel(const Tensor4<T>& g, const Tensor4<T>& x, int s, int p,
                             Tensor4<T>& gk) {
  const auto [N, Co, Ho, Wo] = g.shape();
  const auto [Nx, Ci, H, W] = x.shape();
  const auto [Ko, Ki, Kh, Kw] = gk.shape();
  const T* gd = g.data();
  const T* xd = x.data();
  T* kd = gk.data();
  parallel_ranges(std::int64_t(Co) * Ci, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t oi = lo; oi < hi; ++oi) {
      int o = int(oi / Ci), i = int(oi % Ci);
      for (int u = 0; u < Kh; ++u)
        for (int v = 0; v < Kw; ++v) {
          T acc = 0;
          for (int b = 0; b < N; ++b)
            for (int oy = 0; oy < Ho; ++oy) {
              int iy = oy * s + u - p;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                int ix = ox * s + v - p;
                if (ix < 0 || ix >= W) continue;
                acc += gd[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox] *
                       xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix];
              }
            }
          kd[((std::int64_t(o) * Ci + i) * Kh + u) * Kw + v] = acc;
        }
    }
  });
}

template <typename T>
void accumulate(std::vector<T>& dst, const Tensor4<T>& src) {
  const auto& v = src.values();
  for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
}

}  // namespace

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, int stride,
                  int padding, GradTape<T>* tape) {
  const Shape4 xs = x.shape(), ks = kernel.shape();
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(padding >= 0, "conv2d: padding must be >= 0");
  check(ks.c == xs.c, "conv2d: kernel expects " + std::to_string(ks.c) +
                          " input channels, input has " + std::to_string(xs.c) +
                          " (input " + xs.str() + ", kernel " + ks.str() + ")");
  int ho = (xs.h + 2 * padding - ks.h) / stride + 1;
  int wo = (xs.w + 2 * padding - ks.w) / stride + 1;
  check(xs.h + 2 * padding >= ks.h && xs.w + 2 * padding >= ks.w,
        "conv2d: kernel " + ks.str() + " larger than padded input " + xs.str());
  Tensor4<T> out({xs.n, ks.n, ho, wo});
  conv_forward_kernel(x, kernel, stride, padding, out);
  if (tape) {
    tape->record([x, kernel, out, stride, padding](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      Tensor4<T> gt = Tensor4<T>::from(out.shape(), *g);
      Tensor4<T> gx(x.shape());
      conv_input_grad_kernel(gt, kernel, stride, padding, gx);
      accumulate(t.grad_buffer(x), gx);
      Tensor4<T> gk(kernel.shape());
      conv_kernel_grad_kernel(gt, x, stride, padding, gk);
      accumulate(t.grad_buffer(kernel), gk);
    });
  }
  return out;
}

namespace {

// Transposed-conv forward as a gather; kernel layout (Cin, Cout, Kh, Kw).
// out(b,o,oy,ox) = sum_{i,u,v : oy+p-u = iy*s} x(b,i,iy,ix) * k(i,o,u,v)
template <typename T>
void deconv_forward_kernel(const Tensor4<T>& x, const Tensor4<T>& k, int s, int p,
                           Tensor4<T>& out) {
  const auto [N, Ci, H, W] = x.shape();
  const auto [Kc, Co, Kh, Kw] = k.shape();
  const auto [No, Cq, Ho, Wo] = out.shape();
  const T* xd = x.data();
  const T* kd = k.data();
  T* od = out.data();
  parallel_ranges(std::int64_t(N) * Co, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bo = lo; bo < hi; ++bo) {
      int b = int(bo / Co), o = int(bo % Co);
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = 0;
          for (int i = 0; i < Ci; ++i)
            for (int u = 0; u < Kh; ++u) {
              int ny = oy + p - u;
              if (ny < 0 || ny % s != 0) continue;
              int iy = ny / s;
              if (iy >= H) continue;
              for (int v = 0; v < Kw; ++v) {
                int nx = ox + p - v;
                if (nx < 0 || nx % s != 0) continue;
                int ix = nx / s;
                if (ix >= W) continue;
                acc += xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix] *
                       kd[((std::int64_t(i) * Co + o) * Kh + u) * Kw + v];
              }
            }
          od[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox] = acc;
        }
    }
  });
}

// gx(b,i,iy,ix) = sum_{o,u,v} g(b,o,iy*s+u-p,ix*s+v-p) * k(i,o,u,v)
template <typename T>
void deconv_input_grad_kernel(const Tensor4<T>& g, const Tensor4<T>& k, int s, int p,
                              Tensor4<T>& gx) {
  const auto [N, Co, Ho, Wo] = g.shape();
  const auto [Ci, Kc, Kh, Kw] = k.shape();
  const auto [Nx, Cx, H, W] = gx.shape();
  const T* gd = g.data();
  const T* kd = k.data();
  T* xd = gx.data();
  parallel_ranges(std::int64_t(N) * Ci, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bi = lo; bi < hi; ++bi) {
      int b = int(bi / Ci), i = int(bi % Ci);
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T acc = 0;
          for (int o = 0; o < Co; ++o)
            for (int u = 0; u < Kh; ++u) {
              int oy = iy * s + u - p;
              if (oy < 0 || oy >= Ho) continue;
              for (int v = 0; v < Kw; ++v) {
                int ox = ix * s + v - p;
                if (ox < 0 || ox >= Wo) continue;
                acc += gd[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox] *
                       kd[((std::int64_t(i) * Co + o) * Kh + u) * Kw + v];
              }
            }
          xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix] = acc;
        }
    }
  });
}

// gk(i,o,u,v) = sum_{b,iy,ix} x(b,i,iy,ix) * g(b,o,iy*s+u-p,ix*s+v-p)
template <typename T>
void deconv_kernel_grad_kernel(const Tensor4<T>& g, const Tensor4<T>& x, int s, int p,
                               Tensor4<T>& gk) {
  const auto [N, Co, Ho, Wo] = g.shape();
  const auto [Nx, Ci, H, W] = x.shape();
  const auto [Ki, Ko, Kh, Kw] = gk.shape();
  const T* gd = g.data();
  const T* xd = x.data();
  T* kd = gk.data();
  parallel_ranges(std::int64_t(Ci) * Co, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t io = lo; io < hi; ++io) {
      int i = int(io / Co), o = int(io % Co);
      for (int u = 0; u < Kh; ++u)
        for (int v = 0; v < Kw; ++v) {
          T acc = 0;
          for (int b = 0; b < N; ++b)
            for (int iy = 0; iy < H; ++iy) {
              int oy = iy * s + u - p;
              if (oy < 0 || oy >= Ho) continue;
              for (int ix = 0; ix < W; ++ix) {
                int ox = ix * s + v - p;
                if (ox < 0 || ox >= Wo) continue;
                acc += xd[((std::int64_t(b) * Ci + i) * H + iy) * W + ix] *
                       gd[((std::int64_t(b) * Co + o) * Ho + oy) * Wo + ox];
              }
            }
          kd[((std::int64_t(i) * Co + o) * Kh + u) * Kw + v] = acc;
        }
    }
  });
}

}  // namespace

template <typename T>
Tensor4<T> conv2d_transpose(const Tensor4<T>& x, const Tensor4<T>& kernel,
                            int stride, int padding, GradTape<T>* tape) {
  const Shape4 xs = x.shape(), ks = kernel.shape();
  check(stride >= 1, "conv2d_transpose: stride must be >= 1");
  check(padding >= 0, "conv2d_transpose: padding must be >= 0");
  check(ks.n == xs.c, "conv2d_transpose: kernel expects " + std::to_string(ks.n) +
                          " input channels, input has " + std::to_string(xs.c) +
                          " (input " + xs.str() + ", kernel " + ks.str() + ")");
  int ho = (xs.h - 1) * stride - 2 * padding + ks.h;
  int wo = (xs.w - 1) * stride - 2 * padding + ks.w;
  check(ho > 0 && wo > 0, "conv2d_transpose: non-positive output size for input " +
                              xs.str() + ", kernel " + ks.str());
  Tensor4<T> out({xs.n, ks.c, ho, wo});
  deconv_forward_kernel(x, kernel, stride, padding, out);
  if (tape) {
    tape->record([x, kernel, out, stride, padding](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      Tensor4<T> gt = Tensor4<T>::from(out.shape(), *g);
      Tensor4<T> gx(x.shape());
      deconv_input_grad_kernel(gt, kernel, stride, padding, gx);
      accumulate(t.grad_buffer(x), gx);
      Tensor4<T> gk(kernel.shape());
      deconv_kernel_grad_kernel(gt, x, stride, padding, gk);
      accumulate(t.grad_buffer(kernel), gk);
    });
  }
  return out;
}

// ---- elementwise ops -----------------------------------------------------

template <typename T>
Tensor4<T> bias_add(const Tensor4<T>& x, const Tensor4<T>& bias, GradTape<T>* tape) {
  const Shape4 xs = x.shape(), bs = bias.shape();
  check(bs.n == 1 && bs.h == 1 && bs.w == 1 && bs.c == xs.c,
        "bias_add: bias must be 1x" + std::to_string(xs.c) + "x1x1, got " + bs.str());
  Tensor4<T> out(xs);
  std::int64_t plane = std::int64_t(xs.h) * xs.w;
  for (int b = 0; b < xs.n; ++b)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.data() + (std::int64_t(b) * xs.c + c) * plane;
      T* dst = out.data() + (std::int64_t(b) * xs.c + c) * plane;
      T bv = bias.values()[c];
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + bv;
    }
  if (tape) {
    tape->record([x, bias, out](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      auto& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
      auto& gb = t.grad_buffer(bias);
      const Shape4 xs = x.shape();
      std::int64_t plane = std::int64_t(xs.h) * xs.w;
      for (int b = 0; b < xs.n; ++b)
        for (int c = 0; c < xs.c; ++c) {
          const T* gsrc = g->data() + (std::int64_t(b) * xs.c + c) * plane;
          T acc = 0;
          for (std::int64_t i = 0; i < plane; ++i) acc += gsrc[i];
          gb[c] += acc;
        }
    });
  }
  return out;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope, GradTape<T>* tape) {
  Tensor4<T> out(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i)
    ov[i] = xv[i] >= T(0) ? xv[i] : slope * xv[i];
  if (tape) {
    tape->record([x, out, slope](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      auto& gx = t.grad_buffer(x);
      const auto& xv = x.values();
      for (std::size_t i = 0; i < xv.size(); ++i)
        gx[i] += (*g)[i] * (xv[i] >= T(0) ? T(1) : slope);
    });
  }
  return out;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x, GradTape<T>* tape) {
  Tensor4<T> out(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i)
    ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
  if (tape) {
    tape->record([x, out](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      auto& gx = t.grad_buffer(x);
      const auto& ov = out.values();
      for (std::size_t i = 0; i < ov.size(); ++i)
        gx[i] += (*g)[i] * ov[i] * (T(1) - ov[i]);
    });
  }
  return out;
}

namespace {
template <typename T>
void check_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}
}  // namespace

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape) {
  check_same_shape(a, b, "add");
  Tensor4<T> out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (tape) {
    tape->record([a, b, out](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
    });
  }
  return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape) {
  check_same_shape(a, b, "mul");
  Tensor4<T> out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (tape) {
    tape->record([a, b, out](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      const auto& av = a.values();
      const auto& bv = b.values();
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * bv[i];
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * av[i];
    });
  }
  return out;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& x, T factor, GradTape<T>* tape) {
  Tensor4<T> out(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * factor;
  if (tape) {
    tape->record([x, out, factor](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      auto& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i] * factor;
    });
  }
  return out;
}

// ---- normalization -------------------------------------------------------

template <typename T>
std::pair<std::vector<T>, std::vector<T>> instance_stats(const Tensor4<T>& x) {
  const Shape4 s = x.shape();
  std::int64_t plane = std::int64_t(s.h) * s.w;
  std::vector<T> mean(std::size_t(s.n) * s.c), dev(std::size_t(s.n) * s.c);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.data() + (std::int64_t(b) * s.c + c) * plane;
      double m = 0;
      for (std::int64_t i = 0; i < plane; ++i) m += p[i];
      m /= double(plane);
      double var = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        double d = p[i] - m;
        var += d * d;
      }
      var /= double(plane);
      mean[std::size_t(b) * s.c + c] = T(m);
      dev[std::size_t(b) * s.c + c] = T(std::sqrt(var));
    }
  return {std::move(mean), std::move(dev)};
}

template <typename T>
Tensor4<T> adain(const Tensor4<T>& x, const std::vector<T>& style_mean,
                 const std::vector<T>& style_std, GradTape<T>* tape) {
  const Shape4 s = x.shape();
  check(int(style_mean.size()) == s.c && int(style_std.size()) == s.c,
        "adain: style vectors must have " + std::to_string(s.c) + " entries, got " +
            std::to_string(style_mean.size()) + "/" + std::to_string(style_std.size()));
  for (T v : style_std)
    check(v >= T(0), "adain: negative style std");

  std::int64_t plane = std::int64_t(s.h) * s.w;
  Tensor4<T> out(s);
  // Per-(b,c) divide-std with the variance floor; saved for backward.
  std::vector<T> mu(std::size_t(s.n) * s.c), sig(std::size_t(s.n) * s.c);
  std::vector<char> floored(std::size_t(s.n) * s.c);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.data() + (std::int64_t(b) * s.c + c) * plane;
      T* q = out.data() + (std::int64_t(b) * s.c + c) * plane;
      double m = 0;
      for (std::int64_t i = 0; i < plane; ++i) m += p[i];
      m /= double(plane);
      double var = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        double d = p[i] - m;
        var += d * d;
      }
      var /= double(plane);
      bool fl = var < kVarianceEps;
      double sd = std::sqrt(fl ? kVarianceEps : var);
      std::size_t bc = std::size_t(b) * s.c + c;
      mu[bc] = T(m);
      sig[bc] = T(sd);
      floored[bc] = fl;
      T sm = style_mean[c], ss = style_std[c];
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = ss * T((p[i] - m) / sd) + sm;
    }
  if (tape) {
    tape->record([x, out, style_std, mu, sig, floored](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      const Shape4 s = x.shape();
      std::int64_t plane = std::int64_t(s.h) * s.w;
      auto& gx = t.grad_buffer(x);
      for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c) {
          std::size_t bc = std::size_t(b) * s.c + c;
          const T* p = x.data() + (std::int64_t(b) * s.c + c) * plane;
          const T* gp = g->data() + (std::int64_t(b) * s.c + c) * plane;
          T* gq = gx.data() + (std::int64_t(b) * s.c + c) * plane;
          double m = mu[bc], sd = sig[bc];
          double ss = style_std[c];
          double gmean = 0;
          for (std::int64_t i = 0; i < plane; ++i) gmean += gp[i];
          gmean /= double(plane);
          if (floored[bc]) {
            // sigma is the constant floor here; only the mean couples elements
            for (std::int64_t i = 0; i < plane; ++i)
              gq[i] += T(ss / sd * (gp[i] - gmean));
          } else {
            double gdot = 0;
            for (std::int64_t i = 0; i < plane; ++i)
              gdot += gp[i] * ((p[i] - m) / sd);
            gdot /= double(plane);
            for (std::int64_t i = 0; i < plane; ++i) {
              double xhat = (p[i] - m) / sd;
              gq[i] += T(ss / sd * (gp[i] - gmean - xhat * gdot));
            }
          }
        }
    });
  }
  return out;
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Tensor4<T> l1_loss(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape) {
  check_same_shape(a, b, "l1_loss");
  const auto& av = a.values();
  const auto& bv = b.values();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(double(av[i]) - double(bv[i]));
  T n = T(av.size());
  Tensor4<T> out = Tensor4<T>::scalar(T(acc / double(av.size())));
  if (tape) {
    tape->record([a, b, out, n](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      T go = (*g)[0] / n;
      const auto& av = a.values();
      const auto& bv = b.values();
      auto& ga = t.grad_buffer(a);
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.size(); ++i) {
        T sgn = av[i] > bv[i] ? T(1) : (av[i] < bv[i] ? T(-1) : T(0));
        ga[i] += go * sgn;
        gb[i] -= go * sgn;
      }
    });
  }
  return out;
}

template <typename T>
Tensor4<T> mse_loss(const Tensor4<T>& a, const Tensor4<T>& b, GradTape<T>* tape) {
  check_same_shape(a, b, "mse_loss");
  const auto& av = a.values();
  const auto& bv = b.values();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    double d = double(av[i]) - double(bv[i]);
    acc += d * d;
  }
  T n = T(av.size());
  Tensor4<T> out = Tensor4<T>::scalar(T(acc / double(av.size())));
  if (tape) {
    tape->record([a, b, out, n](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      T go = (*g)[0] * T(2) / n;
      const auto& av = a.values();
      const auto& bv = b.values();
      auto& ga = t.grad_buffer(a);
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.size(); ++i) {
        T d = av[i] - bv[i];
        ga[i] += go * d;
        gb[i] -= go * d;
      }
    });
  }
  return out;
}

template <typename T>
Tensor4<T> sum(const Tensor4<T>& x, GradTape<T>* tape) {
  double acc = 0;
  for (T v : x.values()) acc += v;
  Tensor4<T> out = Tensor4<T>::scalar(T(acc));
  if (tape) {
    tape->record([x, out](GradTape<T>& t) {
      const std::vector<T>* g = t.find_grad(out);
      if (!g) return;
      T go = (*g)[0];
      auto& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
    });
  }
  return out;
}

template <typename T>
Tensor4<T> hflip_w(const Tensor4<T>& x) {
  const Shape4 s = x.shape();
  Tensor4<T> out(s);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw)
          out.at(b, c, y, xw) = x.at(b, c, y, s.w - 1 - xw);
  return out;
}

// ---- optimizer -----------------------------------------------------------

template <typename T>
void adam_step(std::vector<Tensor4<T>>& params, const GradTape<T>& tape,
               AdamState<T>& state) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(double(state.beta1), double(state.step));
  double bc2 = 1.0 - std::pow(double(state.beta2), double(state.step));
  for (auto& p : params) {
    auto& mom = state.moments[p.id()];
    if (mom.m.empty()) {
      mom.m.assign(std::size_t(p.numel()), T(0));
      mom.v.assign(std::size_t(p.numel()), T(0));
    }
    if (std::int64_t(mom.m.size()) != p.numel())
      throw std::invalid_argument("adam_step: moment size " + std::to_string(mom.m.size()) +
                                  " does not match parameter " + p.shape().str());
    std::vector<T> g = tape.grad(p);
    auto& pv = p.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (T(1) - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (T(1) - state.beta2) * g[i] * g[i];
      T mhat = T(double(mom.m[i]) / bc1);
      T vhat = T(double(mom.v[i]) / bc2);
      pv[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---- instantiations ------------------------------------------------------

#define UWSYNTH_INSTANTIATE(T)                                                        \
  template class Tensor4<T>;                                                          \
  template class GradTape<T>;                                                         \
  template Tensor4<T> conv2d<T>(const Tensor4<T>&, const Tensor4<T>&, int, int,      \
                                GradTape<T>*);                                        \
  template Tensor4<T> conv2d_transpose<T>(const Tensor4<T>&, const Tensor4<T>&, int, \
                                          int, GradTape<T>*);                         \
  template Tensor4<T> bias_add<T>(const Tensor4<T>&, const Tensor4<T>&,              \
                                  GradTape<T>*);                                      \
  template Tensor4<T> leaky_relu<T>(const Tensor4<T>&, T, GradTape<T>*);             \
  template Tensor4<T> sigmoid<T>(const Tensor4<T>&, GradTape<T>*);                   \
  template Tensor4<T> add<T>(const Tensor4<T>&, const Tensor4<T>&, GradTape<T>*);    \
  template Tensor4<T> mul<T>(const Tensor4<T>&, const Tensor4<T>&, GradTape<T>*);    \
  template Tensor4<T> scale<T>(const Tensor4<T>&, T, GradTape<T>*);                  \
  template std::pair<std::vector<T>, std::vector<T>> instance_stats<T>(              \
      const Tensor4<T>&);                                                             \
  template Tensor4<T> adain<T>(const Tensor4<T>&, const std::vector<T>&,             \
                               const std::vector<T>&, GradTape<T>*);                  \
  template Tensor4<T> l1_loss<T>(const Tensor4<T>&, const Tensor4<T>&,               \
                                 GradTape<T>*);                                       \
  template Tensor4<T> mse_loss<T>(const Tensor4<T>&, const Tensor4<T>&,              \
                                  GradTape<T>*);                                      \
  template Tensor4<T> sum<T>(const Tensor4<T>&, GradTape<T>*);                       \
  template Tensor4<T> hflip_w<T>(const Tensor4<T>&);                                  \
  template void adam_step<T>(std::vector<Tensor4<T>>&, const GradTape<T>&,           \
                             AdamState<T>&);

UWSYNTH_INSTANTIATE(float)
UWSYNTH_INSTANTIATE(double)

#undef UWSYNTH_INSTANTIATE

}  // namespace uwsynth
