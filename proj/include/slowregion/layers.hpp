#pragma once

#include <cstdint>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slowregion/tensor.hpp"

namespace slowregion {

// Layer hyperparameters, one flat struct for all kinds. Output spatial size
// follows the usual floor law: out = floor((in + 2p - k)/stride) + 1.
struct LayerSpec {
  enum class Kind { conv, maxpool, relu, fc };

  Kind kind = Kind::relu;
  int out_channels = 0;  // conv
  int kernel = 0;        // conv / maxpool window
  int stride = 1;        // conv / maxpool
  int padding = 0;       // conv
  int units = 0;         // fc

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0) {
    LayerSpec s;
    s.kind = Kind::conv;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec maxpool(int kernel, int stride) {
    LayerSpec s;
    s.kind = Kind::maxpool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = Kind::relu;
    return s;
  }
  static LayerSpec fc(int units) {
    LayerSpec s;
    s.kind = Kind::fc;
    s.units = units;
    return s;
  }
};

inline const char* to_string(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::conv: return "conv";
    case LayerSpec::Kind::maxpool: return "maxpool";
    case LayerSpec::Kind::relu: return "relu";
    case LayerSpec::Kind::fc: return "fc";
  }
  return "?";
}

// Per-call forward state consumed by the matching backward call. One cache
// object per layer per in-flight sample, owned by the caller, so a model can
// run many samples before backpropagating any of them.
template <typename T>
struct LayerCache {
  Tensor<T> x;                       // layer input (conv/relu/fc)
  std::vector<std::int32_t> argmax;  // maxpool winner indices
  std::vector<int> in_shape;         // maxpool input shape (input values not needed)
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

// Opt-in numeric guard: when enabled, layer entry points reject NaN/Inf
// activations with ShapeError instead of propagating them. Off by default
// (costs a full scan per layer call); flip on via SLOWREGION_DEBUG_CHECKS=1
// in the environment or programmatically for tests and debugging sessions.
inline bool& finite_checks_enabled() {
  static bool enabled = [] {
    const char* v = std::getenv("SLOWREGION_DEBUG_CHECKS");
    return v != nullptr && v[0] == '1';
  }();
  return enabled;
}

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (!finite_checks_enabled()) return;
  if (!t.finite()) throw ShapeError(std::string("non-finite values at ") + where);
}

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0 || stride < 1) throw ShapeError("layer window does not fit input");
  return span / stride + 1;
}

}  // namespace detail

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerSpec::Kind kind() const = 0;
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
  // forward never mutates parameters; backward accumulates parameter
  // gradients (call zero_grad between optimizer steps) and returns the
  // input gradient.
  virtual Tensor<T> forward(const Tensor<T>& x, LayerCache<T>& cache) const = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache) = 0;
  virtual std::vector<ParamRef<T>> params() { return {}; }
};

// Dense convolution over C x H x W inputs via im2col + matrix multiply.
// Weights are stored as a (out_c) x (in_c*k*k) matrix.
template <typename T>
class ConvLayer final : public Layer<T> {
 public:
  ConvLayer(int in_channels, const LayerSpec& spec)
      : in_c_(in_channels),
        out_c_(spec.out_channels),
        k_(spec.kernel),
        stride_(spec.stride),
        pad_(spec.padding),
        weight_({spec.out_channels, in_channels * spec.kernel * spec.kernel}),
        bias_({spec.out_channels}),
        grad_weight_(weight_.shape),
        grad_bias_(bias_.shape) {
    if (in_c_ < 1 || out_c_ < 1 || k_ < 1) throw ShapeError("bad conv spec");
  }

  LayerSpec::Kind kind() const override { return LayerSpec::Kind::conv; }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    require_chw(in);
    return {out_c_, detail::conv_out_dim(in[1], k_, stride_, pad_),
            detail::conv_out_dim(in[2], k_, stride_, pad_)};
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCache<T>& cache) const override {
    detail::check_finite(x, "conv input");
    const auto os = out_shape(x.shape);
    const int oh = os[1], ow = os[2];
    const int rows = in_c_ * k_ * k_;
    const int cols = oh * ow;

    std::vector<T> col(static_cast<std::size_t>(rows) * cols);
    im2col(x, oh, ow, col.data());

    Tensor<T> y(os);
    Eigen::Map<const detail::EMat<T>> w(weight_.data.data(), out_c_, rows);
    Eigen::Map<const detail::EMat<T>> xm(col.data(), rows, cols);
    Eigen::Map<detail::EMat<T>> ym(y.data.data(), out_c_, cols);
    ym.noalias() = w * xm;
    for (int c = 0; c < out_c_; ++c) ym.row(c).array() += bias_[static_cast<std::size_t>(c)];

    cache.x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache) override {
    const Tensor<T>& x = cache.x;
    const auto os = out_shape(x.shape);
    if (dy.shape != os) throw ShapeError("conv backward: gradient shape mismatch");
    const int oh = os[1], ow = os[2];
    const int rows = in_c_ * k_ * k_;
    const int cols = oh * ow;

    std::vector<T> col(static_cast<std::size_t>(rows) * cols);
    im2col(x, oh, ow, col.data());

    Eigen::Map<const detail::EMat<T>> dym(dy.data.data(), out_c_, cols);
    Eigen::Map<const detail::EMat<T>> xm(col.data(), rows, cols);
    Eigen::Map<detail::EMat<T>> dwm(grad_weight_.data.data(), out_c_, rows);
    dwm.noalias() += dym * xm.transpose();
    // Summed with a fixed-order loop rather than an Eigen redux: the redux
    // splits its accumulation at a runtime-alignment-dependent offset, which
    // perturbs the last ulp between allocations and breaks bit-identical
    // reruns. (The matrix products above pack into aligned scratch and are
    // order-stable already.)
    for (int c = 0; c < out_c_; ++c) {
      const T* drow = dy.data.data() + static_cast<std::size_t>(c) * cols;
      T acc = T(0);
      for (int j = 0; j < cols; ++j) acc += drow[j];
      grad_bias_[static_cast<std::size_t>(c)] += acc;
    }

    std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
    Eigen::Map<const detail::EMat<T>> w(weight_.data.data(), out_c_, rows);
    Eigen::Map<detail::EMat<T>> dcolm(dcol.data(), rows, cols);
    dcolm.noalias() = w.transpose() * dym;

    Tensor<T> dx(x.shape);
    col2im(dcol.data(), x.shape[1], x.shape[2], oh, ow, dx);
    return dx;
  }

  std::vector<ParamRef<T>> params() override {
    return {{"weight", &weight_, &grad_weight_}, {"bias", &bias_, &grad_bias_}};
  }

 private:
  static void require_chw(const std::vector<int>& in) {
    if (in.size() != 3) throw ShapeError("conv expects a C x H x W input, got " + shape_string(in));
  }

  void im2col(const Tensor<T>& x, int oh, int ow, T* col) const {
    const int h = x.shape[1], w = x.shape[2];
    if (x.shape[0] != in_c_) throw ShapeError("conv input channel mismatch");
    std::size_t r = 0;
    for (int c = 0; c < in_c_; ++c) {
      const T* plane = x.data.data() + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          T* dst = col + r * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? plane[static_cast<std::size_t>(iy) * w + ix]
                                      : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const T* dcol, int h, int w, int oh, int ow, Tensor<T>& dx) const {
    std::size_t r = 0;
    for (int c = 0; c < in_c_; ++c) {
      T* plane = dx.data.data() + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          const T* src = dcol + r * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              if (ix >= 0 && ix < w) plane[static_cast<std::size_t>(iy) * w + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }

  int in_c_, out_c_, k_, stride_, pad_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
};

// Max pooling without padding; output = floor((in - k)/stride) + 1, so a
// trailing remainder row/column is dropped. Ties keep the first maximum in
// scan order.
template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  explicit MaxPoolLayer(const LayerSpec& spec) : k_(spec.kernel), stride_(spec.stride) {
    if (k_ < 1 || stride_ < 1) throw ShapeError("bad maxpool spec");
  }

  LayerSpec::Kind kind() const override { return LayerSpec::Kind::maxpool; }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (in.size() != 3) throw ShapeError("maxpool expects a C x H x W input");
    return {in[0], detail::conv_out_dim(in[1], k_, stride_, 0),
            detail::conv_out_dim(in[2], k_, stride_, 0)};
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCache<T>& cache) const override {
    detail::check_finite(x, "maxpool input");
    const auto os = out_shape(x.shape);
    const int c = os[0], oh = os[1], ow = os[2];
    const int h = x.shape[1], w = x.shape[2];
    Tensor<T> y(os);
    cache.argmax.assign(y.numel(), 0);
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = x.data.data() + static_cast<std::size_t>(ch) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          const int y0 = oy * stride_, x0 = ox * stride_;
          T best = plane[static_cast<std::size_t>(y0) * w + x0];
          int best_idx = y0 * w + x0;
          for (int ky = 0; ky < k_; ++ky) {
            for (int kx = 0; kx < k_; ++kx) {
              const int idx = (y0 + ky) * w + (x0 + kx);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          y.data[o] = best;
          cache.argmax[o] = static_cast<std::int32_t>(best_idx);
        }
      }
    }
    cache.in_shape = x.shape;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache) override {
    const auto& in_shape = cache.in_shape;
    const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
    Tensor<T> dx(in_shape);
    const auto os = out_shape(in_shape);
    if (dy.shape != os) throw ShapeError("maxpool backward: gradient shape mismatch");
    const int per_channel = os[1] * os[2];
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
      T* plane = dx.data.data() + static_cast<std::size_t>(ch) * h * w;
      for (int i = 0; i < per_channel; ++i, ++o) plane[cache.argmax[o]] += dy.data[o];
    }
    return dx;
  }

 private:
  int k_, stride_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  LayerSpec::Kind kind() const override { return LayerSpec::Kind::relu; }

  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, LayerCache<T>& cache) const override {
    detail::check_finite(x, "relu input");
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    cache.x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache) override {
    if (dy.shape != cache.x.shape) throw ShapeError("relu backward: gradient shape mismatch");
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      dx.data[i] = cache.x.data[i] > T(0) ? dy.data[i] : T(0);
    }
    return dx;
  }
};

// Fully connected layer on the flattened input. Weight is (units) x (fan_in).
template <typename T>
class FcLayer final : public Layer<T> {
 public:
  FcLayer(int fan_in, const LayerSpec& spec)
      : fan_in_(fan_in),
        units_(spec.units),
        weight_({spec.units, fan_in}),
        bias_({spec.units}),
        grad_weight_(weight_.shape),
        grad_bias_(bias_.shape) {
    if (fan_in_ < 1 || units_ < 1) throw ShapeError("bad fc spec");
  }

  LayerSpec::Kind kind() const override { return LayerSpec::Kind::fc; }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (static_cast<int>(Tensor<T>::numel_of(in)) != fan_in_) {
      throw ShapeError("fc input " + shape_string(in) + " does not flatten to " +
                       std::to_string(fan_in_));
    }
    return {units_};
  }

  // The matrix-vector products here are written as plain loops on purpose:
  // Eigen's gemv kernel splits its accumulation based on the runtime
  // alignment of the weight pointer, which varies between allocations and
  // would make repeated runs differ in the last ulp. Fixed-order loops keep
  // checkpoints bit-reproducible, and the fc layers are a rounding error in
  // the overall compute next to the convolutions.
  Tensor<T> forward(const Tensor<T>& x, LayerCache<T>& cache) const override {
    detail::check_finite(x, "fc input");
    (void)out_shape(x.shape);
    Tensor<T> y({units_});
    for (int o = 0; o < units_; ++o) {
      T acc = bias_.data[static_cast<std::size_t>(o)];
      const T* row = weight_.data.data() + static_cast<std::size_t>(o) * fan_in_;
      for (int i = 0; i < fan_in_; ++i) acc += row[i] * x.data[static_cast<std::size_t>(i)];
      y.data[static_cast<std::size_t>(o)] = acc;
    }
    cache.x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache) override {
    if (dy.shape != std::vector<int>{units_}) throw ShapeError("fc backward: gradient shape mismatch");
    for (int o = 0; o < units_; ++o) {
      const T g = dy.data[static_cast<std::size_t>(o)];
      T* grow = grad_weight_.data.data() + static_cast<std::size_t>(o) * fan_in_;
      for (int i = 0; i < fan_in_; ++i) grow[i] += g * cache.x.data[static_cast<std::size_t>(i)];
      grad_bias_.data[static_cast<std::size_t>(o)] += g;
    }
    Tensor<T> dx(cache.x.shape);
    for (int o = 0; o < units_; ++o) {
      const T g = dy.data[static_cast<std::size_t>(o)];
      const T* row = weight_.data.data() + static_cast<std::size_t>(o) * fan_in_;
      for (int i = 0; i < fan_in_; ++i) dx.data[static_cast<std::size_t>(i)] += g * row[i];
    }
    return dx;
  }

  std::vector<ParamRef<T>> params() override {
    return {{"weight", &weight_, &grad_weight_}, {"bias", &bias_, &grad_bias_}};
  }

 private:
  int fan_in_, units_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const std::vector<int>& in_shape) {
  switch (spec.kind) {
    case LayerSpec::Kind::conv:
      if (in_shape.size() != 3) throw ShapeError("conv expects a C x H x W input");
      return std::make_unique<ConvLayer<T>>(in_shape[0], spec);
    case LayerSpec::Kind::maxpool:
      return std::make_unique<MaxPoolLayer<T>>(spec);
    case LayerSpec::Kind::relu:
      return std::make_unique<ReluLayer<T>>();
    case LayerSpec::Kind::fc:
      return std::make_unique<FcLayer<T>>(static_cast<int>(Tensor<T>::numel_of(in_shape)), spec);
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace slowregion
