#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "histo/aggregate.hpp"
#include "histo/augment.hpp"
#include "histo/error.hpp"
#include "histo/patching.hpp"
#include "histo/raster.hpp"
#include "histo/seed.hpp"

namespace histo::refnet {

inline constexpr int kClasses = kNumClasses;

struct Shape3 {
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Activation shapes of every layer, derived from the architecture.
struct LayerShapes {
  Shape3 input;
  Shape3 conv1;  // 2x2 conv, valid
  Shape3 pool1;  // 2x2 max-pool, stride 2
  Shape3 conv2;  // 2x2 conv, valid
  Shape3 conv3;  // 4x4 conv, valid
  Shape3 pool2;  // 4x4 max-pool, stride 4
  int flat = 0;
  int hidden = 0;
  int classes = kClasses;
};

/**
 * Baseline network:
 *
 *   conv 2x2 (c1) -> relu -> maxpool 2x2 -> conv 2x2 (c2) -> relu ->
 *   conv 4x4 (c3) -> relu -> maxpool 4x4 -> dense (fc_units) -> relu ->
 *   dense (4) -> softmax
 *
 * All convolutions are stride 1 with no padding. The smallest valid
 * input_side is 17.
 */
struct CnnArchitecture {
  int input_side = 256;
  int c1 = 16;
  int c2 = 32;
  int c3 = 64;
  int fc_units = 512;

  static constexpr int kConv1 = 2;
  static constexpr int kPool1 = 2;
  static constexpr int kConv2 = 2;
  static constexpr int kConv3 = 4;
  static constexpr int kPool2 = 4;

  /// Computes and validates every layer shape; throws ShapeMismatch when a
  /// layer would be empty.
  LayerShapes shapes() const {
    if (c1 < 1 || c2 < 1 || c3 < 1 || fc_units < 1) {
      throw Error(ErrorKind::InvalidArgument, "layer widths must be >= 1");
    }
    auto need = [&](int v, const char* layer) {
      if (v < 1) {
        throw Error(ErrorKind::ShapeMismatch, "input_side " + std::to_string(input_side) +
                                                  " leaves no spatial extent at " + layer);
      }
      return v;
    };
    LayerShapes s;
    s.input = {3, need(input_side, "input"), input_side};
    const int a = need(input_side - kConv1 + 1, "conv1");
    s.conv1 = {c1, a, a};
    const int b = need(a / kPool1, "pool1");
    s.pool1 = {c1, b, b};
    const int d = need(b - kConv2 + 1, "conv2");
    s.conv2 = {c2, d, d};
    const int e = need(d - kConv3 + 1, "conv3");
    s.conv3 = {c3, e, e};
    const int f = need(e / kPool2, "pool2");
    s.pool2 = {c3, f, f};
    s.flat = static_cast<int>(s.pool2.size());
    s.hidden = fc_units;
    return s;
  }

  friend bool operator==(const CnnArchitecture&, const CnnArchitecture&) = default;
};

struct ConvWeights {
  int out_c = 0;
  int in_c = 0;
  int k = 0;
  std::vector<double> w;  // [out][in][ky][kx]
  std::vector<double> b;  // [out]

  int fan_in() const { return in_c * k * k; }
  double weight(int o, int i, int ky, int kx) const {
    return w[((static_cast<std::size_t>(o) * in_c + i) * k + ky) * k + kx];
  }
};

struct DenseWeights {
  int out = 0;
  int in = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> b;  // [out]

  int fan_in() const { return in; }
};

/// Weights and biases of the baseline network, float64.
struct CnnParameters {
  CnnArchitecture arch;
  std::uint64_t seed = 0;
  ConvWeights conv1, conv2, conv3;
  DenseWeights fc1, fc2;

  /// All-zero parameters shaped for `arch`.
  static CnnParameters zeros(const CnnArchitecture& arch) {
    const LayerShapes s = arch.shapes();
    CnnParameters p;
    p.arch = arch;
    auto conv = [](int out, int in, int k) {
      const auto n = static_cast<std::size_t>(out) * in * k * k;
      return ConvWeights{out, in, k, std::vector<double>(n, 0.0),
                         std::vector<double>(static_cast<std::size_t>(out), 0.0)};
    };
    auto dense = [](int out, int in) {
      return DenseWeights{out, in, std::vector<double>(static_cast<std::size_t>(out) * in, 0.0),
                          std::vector<double>(static_cast<std::size_t>(out), 0.0)};
    };
    p.conv1 = conv(arch.c1, 3, CnnArchitecture::kConv1);
    p.conv2 = conv(arch.c2, arch.c1, CnnArchitecture::kConv2);
    p.conv3 = conv(arch.c3, arch.c2, CnnArchitecture::kConv3);
    p.fc1 = dense(arch.fc_units, s.flat);
    p.fc2 = dense(kClasses, arch.fc_units);
    return p;
  }

  /// Visits (name, values, fan_in, is_bias) in declaration order:
  /// conv1.w, conv1.b, conv2.w, ..., fc2.b.
  template <class F>
  void for_each_tensor(F&& f) {
    f("conv1.w", conv1.w, conv1.fan_in(), false);
    f("conv1.b", conv1.b, conv1.fan_in(), true);
    f("conv2.w", conv2.w, conv2.fan_in(), false);
    f("conv2.b", conv2.b, conv2.fan_in(), true);
    f("conv3.w", conv3.w, conv3.fan_in(), false);
    f("conv3.b", conv3.b, conv3.fan_in(), true);
    f("fc1.w", fc1.w, fc1.fan_in(), false);
    f("fc1.b", fc1.b, fc1.fan_in(), true);
    f("fc2.w", fc2.w, fc2.fan_in(), false);
    f("fc2.b", fc2.b, fc2.fan_in(), true);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<CnnParameters*>(this)->for_each_tensor(
        [&](const char* name, std::vector<double>& v, int fan_in, bool bias) {
          f(name, static_cast<const std::vector<double>&>(v), fan_in, bias);
        });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) { n += v.size(); });
    return n;
  }

  /// Throws NonFiniteLoss naming the first tensor holding NaN or Inf.
  void require_finite(const std::string& context = {}) const {
    for_each_tensor([&](const char* name, const std::vector<double>& v, int, bool) {
      for (double x : v) {
        if (!std::isfinite(x)) {
          throw Error(ErrorKind::NonFiniteLoss,
                      (context.empty() ? "" : context + ": ") + "non-finite value in " + name);
        }
      }
    });
  }

  bool same_shape(const CnnParameters& o) const {
    return arch == o.arch;
  }

  friend bool operator==(const CnnParameters& a, const CnnParameters& b) {
    if (!(a.arch == b.arch) || a.seed != b.seed) return false;
    bool eq = true;
    std::vector<const std::vector<double>*> rhs;
    b.for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) { rhs.push_back(&v); });
    std::size_t i = 0;
    a.for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) {
      eq = eq && std::memcmp(v.data(), rhs[i]->data(), v.size() * sizeof(double)) == 0;
      ++i;
    });
    return eq;
  }
};

/// The output layer starts at a tenth of the He scale so the untrained net
/// predicts near-uniformly (initial loss close to ln 4).
inline constexpr double kOutputInitScale = 0.1;

/// He-normal weights, std sqrt(2 / fan_in), with the output layer scaled by
/// kOutputInitScale; zero biases. Normal samples use Box-Muller over
/// SplitMix64 so values are identical on every platform.
inline CnnParameters init_params(const CnnArchitecture& arch, std::uint64_t seed) {
  CnnParameters p = CnnParameters::zeros(arch);
  p.seed = seed;
  SplitMix64 rng(seed);
  p.for_each_tensor([&](const char* name, std::vector<double>& v, int fan_in, bool bias) {
    if (bias) return;
    const double gain = std::string_view(name) == "fc2.w" ? kOutputInitScale : 1.0;
    const double stddev = gain * std::sqrt(2.0 / fan_in);
    for (auto& x : v) {
      const double u1 = 1.0 - rng.uniform01();  // (0, 1]
      const double u2 = rng.uniform01();
      x = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
  });
  return p;
}

/// CHW doubles in [0,1] from an RGB raster (byte / 255).
inline std::vector<double> normalize(const RasterImage& img) {
  std::vector<double> out(img.pixel_count() * 3);
  const auto src = img.bytes();
  const std::size_t plane = img.pixel_count();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out[c * plane + i] = src[i * 3 + c] / 255.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer kernels
// ---------------------------------------------------------------------------

namespace layers {

inline void conv_forward(const ConvWeights& cw, std::span<const double> in, Shape3 is, Shape3 os,
                         std::vector<double>& out) {
  out.assign(os.size(), 0.0);
  const std::size_t oplane = static_cast<std::size_t>(os.h) * os.w;
  const std::size_t iplane = static_cast<std::size_t>(is.h) * is.w;
  for (int o = 0; o < os.c; ++o) {
    double* dst = out.data() + o * oplane;
    std::fill(dst, dst + oplane, cw.b[o]);
    for (int i = 0; i < is.c; ++i) {
      const double* src = in.data() + i * iplane;
      for (int ky = 0; ky < cw.k; ++ky) {
        for (int kx = 0; kx < cw.k; ++kx) {
          const double wv = cw.weight(o, i, ky, kx);
          for (int y = 0; y < os.h; ++y) {
            const double* row = src + static_cast<std::size_t>(y + ky) * is.w + kx;
            double* orow = dst + static_cast<std::size_t>(y) * os.w;
            for (int x = 0; x < os.w; ++x) orow[x] += wv * row[x];
          }
        }
      }
    }
  }
}

/// Accumulates weight/bias gradients into `grad`; writes the input gradient
/// into `din` when non-null.
inline void conv_backward(const ConvWeights& cw, std::span<const double> in, Shape3 is, Shape3 os,
                          std::span<const double> dout, ConvWeights& grad,
                          std::vector<double>* din) {
  const std::size_t oplane = static_cast<std::size_t>(os.h) * os.w;
  const std::size_t iplane = static_cast<std::size_t>(is.h) * is.w;
  if (din) din->assign(is.size(), 0.0);
  for (int o = 0; o < os.c; ++o) {
    const double* g = dout.data() + o * oplane;
    double bsum = 0.0;
    for (std::size_t j = 0; j < oplane; ++j) bsum += g[j];
    grad.b[o] += bsum;
    for (int i = 0; i < is.c; ++i) {
      const double* src = in.data() + i * iplane;
      double* dsrc = din ? din->data() + i * iplane : nullptr;
      for (int ky = 0; ky < cw.k; ++ky) {
        for (int kx = 0; kx < cw.k; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * cw.in_c + i) * cw.k + ky) * cw.k + kx;
          const double wv = cw.w[widx];
          double acc = 0.0;
          for (int y = 0; y < os.h; ++y) {
            const double* row = src + static_cast<std::size_t>(y + ky) * is.w + kx;
            const double* grow = g + static_cast<std::size_t>(y) * os.w;
            for (int x = 0; x < os.w; ++x) acc += grow[x] * row[x];
            if (dsrc) {
              double* drow = dsrc + static_cast<std::size_t>(y + ky) * is.w + kx;
              for (int x = 0; x < os.w; ++x) drow[x] += wv * grow[x];
            }
          }
          grad.w[widx] += acc;
        }
      }
    }
  }
}

inline void relu_forward(std::span<const double> z, std::vector<double>& a) {
  a.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0.0 ? z[i] : 0.0;
}

/// In place: da becomes dz.
inline void relu_backward(std::span<const double> z, std::span<double> da) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(z[i] > 0.0)) da[i] = 0.0;
  }
}

/// k x k max-pool with stride k. `argmax` holds the flat input index chosen
/// for each output; ties keep the first element in row-major order.
inline void maxpool_forward(std::span<const double> in, Shape3 is, int k, Shape3 os,
                            std::vector<double>& out, std::vector<std::uint32_t>& argmax) {
  out.resize(os.size());
  argmax.resize(os.size());
  for (int c = 0; c < os.c; ++c) {
    for (int y = 0; y < os.h; ++y) {
      for (int x = 0; x < os.w; ++x) {
        std::size_t best = (static_cast<std::size_t>(c) * is.h + y * k) * is.w + x * k;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(c) * is.h + y * k + dy) * is.w + x * k + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * os.h + y) * os.w + x;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

inline void maxpool_backward(std::span<const double> dout, std::span<const std::uint32_t> argmax,
                             std::size_t in_size, std::vector<double>& din) {
  din.assign(in_size, 0.0);
  for (std::size_t o = 0; o < dout.size(); ++o) din[argmax[o]] += dout[o];
}

inline void dense_forward(const DenseWeights& dw, std::span<const double> in,
                          std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(dw.out));
  for (int o = 0; o < dw.out; ++o) {
    const double* row = dw.w.data() + static_cast<std::size_t>(o) * dw.in;
    double acc = dw.b[o];
    for (int i = 0; i < dw.in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

inline void dense_backward(const DenseWeights& dw, std::span<const double> in,
                           std::span<const double> dout, DenseWeights& grad,
                           std::vector<double>* din) {
  if (din) din->assign(static_cast<std::size_t>(dw.in), 0.0);
  for (int o = 0; o < dw.out; ++o) {
    const double g = dout[o];
    grad.b[o] += g;
    if (g == 0.0) continue;
    const double* row = dw.w.data() + static_cast<std::size_t>(o) * dw.in;
    double* grow = grad.w.data() + static_cast<std::size_t>(o) * dw.in;
    for (int i = 0; i < dw.in; ++i) grow[i] += g * in[i];
    if (din) {
      for (int i = 0; i < dw.in; ++i) (*din)[i] += g * row[i];
    }
  }
}

}  // namespace layers

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Every intermediate activation of one forward pass.
struct Activations {
  std::vector<double> input;
  std::vector<double> z1, a1, p1;
  std::vector<std::uint32_t> arg1;
  std::vector<double> z2, a2, z3, a3, p2;
  std::vector<std::uint32_t> arg2;
  std::vector<double> h_pre, h;
  std::array<double, kClasses> logits{};
  ClassProbs probs{};
};

/// Numerically stable softmax (max subtracted).
inline ClassProbs softmax(const std::array<double, kClasses>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  ClassProbs p{};
  double sum = 0.0;
  for (int i = 0; i < kClasses; ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

/// -log softmax(logits)[label], via log-sum-exp.
inline double cross_entropy(const std::array<double, kClasses>& logits, int label) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return m + std::log(sum) - logits[label];
}

/// Runs the network on a CHW input of values in [0,1]. Shapes are checked
/// against the construction-time layer shapes.
inline Activations forward(const CnnParameters& params, std::span<const double> input) {
  const LayerShapes s = params.arch.shapes();
  if (input.size() != s.input.size()) {
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(input.size()) +
                                              " values, network expects " +
                                              std::to_string(s.input.size()));
  }
  Activations a;
  a.input.assign(input.begin(), input.end());
  layers::conv_forward(params.conv1, a.input, s.input, s.conv1, a.z1);
  layers::relu_forward(a.z1, a.a1);
  layers::maxpool_forward(a.a1, s.conv1, CnnArchitecture::kPool1, s.pool1, a.p1, a.arg1);
  layers::conv_forward(params.conv2, a.p1, s.pool1, s.conv2, a.z2);
  layers::relu_forward(a.z2, a.a2);
  layers::conv_forward(params.conv3, a.a2, s.conv2, s.conv3, a.z3);
  layers::relu_forward(a.z3, a.a3);
  layers::maxpool_forward(a.a3, s.conv3, CnnArchitecture::kPool2, s.pool2, a.p2, a.arg2);
  layers::dense_forward(params.fc1, a.p2, a.h_pre);
  layers::relu_forward(a.h_pre, a.h);
  std::vector<double> logits;
  layers::dense_forward(params.fc2, a.h, logits);
  std::copy(logits.begin(), logits.end(), a.logits.begin());
  a.probs = softmax(a.logits);
  return a;
}

struct Sample {
  std::vector<double> input;
  ClassLabel label = ClassLabel::Normal;
};

namespace detail {

// Adds d(scale * nll)/d(params) for one sample into `grad`; returns nll.
inline double backprop_one(const CnnParameters& params, const Sample& sample, double scale,
                           CnnParameters& grad) {
  const LayerShapes s = params.arch.shapes();
  const Activations a = forward(params, sample.input);
  const int label = index_of(sample.label);
  const double nll = cross_entropy(a.logits, label);

  std::vector<double> dlogits(kClasses);
  for (int c = 0; c < kClasses; ++c) dlogits[c] = scale * (a.probs[c] - (c == label ? 1.0 : 0.0));

  std::vector<double> dh, dp2, da3, dp1, da2, da1;
  layers::dense_backward(params.fc2, a.h, dlogits, grad.fc2, &dh);
  layers::relu_backward(a.h_pre, dh);
  layers::dense_backward(params.fc1, a.p2, dh, grad.fc1, &dp2);
  layers::maxpool_backward(dp2, a.arg2, s.conv3.size(), da3);
  layers::relu_backward(a.z3, da3);
  layers::conv_backward(params.conv3, a.a2, s.conv2, s.conv3, da3, grad.conv3, &da2);
  layers::relu_backward(a.z2, da2);
  layers::conv_backward(params.conv2, a.p1, s.pool1, s.conv2, da2, grad.conv2, &dp1);
  layers::maxpool_backward(dp1, a.arg1, s.conv1.size(), da1);
  layers::relu_backward(a.z1, da1);
  layers::conv_backward(params.conv1, a.input, s.input, s.conv1, da1, grad.conv1, nullptr);
  return nll;
}

inline void zero(CnnParameters& p) {
  p.for_each_tensor([](const char*, std::vector<double>& v, int, bool) {
    std::fill(v.begin(), v.end(), 0.0);
  });
}

inline void add_into(CnnParameters& dst, const CnnParameters& src) {
  std::vector<const std::vector<double>*> s;
  src.for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) { s.push_back(&v); });
  std::size_t t = 0;
  dst.for_each_tensor([&](const char*, std::vector<double>& v, int, bool) {
    const auto& from = *s[t++];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += from[i];
  });
}

}  // namespace detail

struct LossAndGrad {
  double loss = 0.0;
  CnnParameters grad;
};

/**
 * Mean cross-entropy over the batch and its gradient. Per-sample gradients
 * are summed in batch order, so the result is bitwise identical for any
 * `workers` count.
 */
inline LossAndGrad loss_and_grad(const CnnParameters& params, std::span<const Sample> batch,
                                 unsigned workers = 1) {
  if (batch.empty()) throw Error(ErrorKind::EmptyInput, "empty training batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossAndGrad out{0.0, CnnParameters::zeros(params.arch)};
  out.grad.seed = params.seed;

  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(batch.size())));
  std::vector<CnnParameters> scratch(workers, CnnParameters::zeros(params.arch));
  std::vector<double> nll(batch.size());
  double total = 0.0;
  for (std::size_t first = 0; first < batch.size(); first += workers) {
    const std::size_t n = std::min<std::size_t>(workers, batch.size() - first);
    auto job = [&](std::size_t j) {
      detail::zero(scratch[j]);
      nll[first + j] = detail::backprop_one(params, batch[first + j], scale, scratch[j]);
    };
    if (n == 1) {
      job(0);
    } else {
      std::vector<std::exception_ptr> errors(n);
      {
        std::vector<std::jthread> pool;
        for (std::size_t j = 0; j < n; ++j) {
          pool.emplace_back([&, j] {
            try {
              job(j);
            } catch (...) {
              errors[j] = std::current_exception();
            }
          });
        }
      }
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      detail::add_into(out.grad, scratch[j]);
      total += nll[first + j];
    }
  }
  out.loss = total * scale;
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::NonFiniteLoss, "batch loss is not finite");
  out.grad.require_finite("gradient");
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw Error(ErrorKind::InvalidArgument, "learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "momentum must lie in [0,1)");
    }
    if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
    if (epochs < 0) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 0");
  }
};

struct LabeledPatch {
  Patch patch;
  ClassLabel label = ClassLabel::Normal;
};

struct EpochMetrics {
  int epoch = 0;
  /// Mean minibatch loss over the epoch.
  double loss = 0.0;
  /// Accuracy on the clean (un-augmented) training patches after the epoch.
  double patch_acc = 0.0;
};

struct TrainResult {
  CnnParameters params;
  std::vector<EpochMetrics> metrics;
};

/// Return false to stop training after the current epoch.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

inline std::vector<double> classifier_tensor(const Patch& p, int side) {
  return normalize(to_classifier_input(p, side));
}

inline std::uint64_t shuffle_seed(std::uint64_t seed, int epoch) {
  return splitmix64_mix(seed ^ Fnv1a64().str("shuffle").u64(static_cast<std::uint64_t>(epoch)).value());
}

/// Fraction of samples whose argmax prediction equals the label.
inline double accuracy_on(const CnnParameters& params, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) hits += argmax_label(forward(params, s.input).probs) == s.label;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/**
 * Minibatch SGD with momentum (v <- mu v - lr g; w <- w + v). Each epoch
 * visits the data in a permutation seeded from (cfg.seed, epoch); when
 * `augment` is set the patches are re-augmented every epoch with master seed
 * cfg.seed. Deterministic given (params, dataset order, cfg).
 */
inline TrainResult train(const CnnParameters& initial, std::span<const LabeledPatch> dataset,
                         const TrainConfig& cfg,
                         const std::optional<AugmentConfig>& augment = std::nullopt,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::EmptyInput, "training set is empty");
  const int side = initial.arch.input_side;

  std::vector<Sample> clean;
  clean.reserve(dataset.size());
  for (const auto& lp : dataset) clean.push_back({classifier_tensor(lp.patch, side), lp.label});

  std::vector<Patch> raw;
  if (augment) {
    for (const auto& lp : dataset) raw.push_back(lp.patch);
  }

  TrainResult result{initial, {}};
  CnnParameters& params = result.params;
  CnnParameters velocity = CnnParameters::zeros(initial.arch);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Sample> augmented;
    if (augment) {
      const auto patches = augment_batch(raw, *augment, cfg.seed, epoch, cfg.workers);
      augmented.reserve(patches.size());
      for (std::size_t i = 0; i < patches.size(); ++i) {
        augmented.push_back({classifier_tensor(patches[i], side), dataset[i].label});
      }
    }
    const std::vector<Sample>& source = augment ? augmented : clean;
    const auto order = seeded_permutation(source.size(), SplitMix64(shuffle_seed(cfg.seed, epoch)));

    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - first);
      std::vector<Sample> batch;
      batch.reserve(n);
      for (std::size_t j = 0; j < n; ++j) batch.push_back(source[order[first + j]]);

      LossAndGrad lg;
      try {
        lg = loss_and_grad(params, batch, cfg.workers);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteLoss) throw;
        throw Error(ErrorKind::NonFiniteLoss,
                    "training diverged at epoch " + std::to_string(epoch) + " step " +
                        std::to_string(step) + " (" + e.what() + ")");
      }
      loss_sum += lg.loss * static_cast<double>(n);

      std::vector<std::vector<double>*> g;
      lg.grad.for_each_tensor([&](const char*, std::vector<double>& v, int, bool) { g.push_back(&v); });
      std::vector<std::vector<double>*> vel;
      velocity.for_each_tensor([&](const char*, std::vector<double>& v, int, bool) { vel.push_back(&v); });
      std::size_t t = 0;
      params.for_each_tensor([&](const char*, std::vector<double>& w, int, bool) {
        auto& v = *vel[t];
        const auto& gr = *g[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg.momentum * v[i] - cfg.learning_rate * gr[i];
          w[i] += v[i];
        }
        ++t;
      });
      params.require_finite("training diverged at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step));
      ++step;
    }

    EpochMetrics m{epoch, loss_sum / static_cast<double>(order.size()), accuracy_on(params, clean)};
    result.metrics.push_back(m);
    if (on_epoch && !on_epoch(m)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prediction and inspection
// ---------------------------------------------------------------------------

/// Resizes the patch to `side`, runs the network, and records the full
/// probability vector with its argmax label (lowest index on ties).
inline PredictionRecord predict_patch(const CnnParameters& params, const Patch& patch, int side,
                                      const std::string& model_id = "refnet") {
  const auto a = forward(params, classifier_tensor(patch, side));
  return PredictionRecord::from_probs(patch.image_id, patch.grid_index, model_id, a.probs);
}

/**
 * Renders each first-layer filter as an RGB tile (weights min-max scaled to
 * 0..255 per filter, 128 when constant), magnified `scale` times, tiled in a
 * near-square grid with `gap`-pixel black separators between tiles.
 */
inline RasterImage export_first_layer_filters(const CnnParameters& params, int scale = 16,
                                              int gap = 2) {
  const ConvWeights& cw = params.conv1;
  if (cw.in_c != 3) {
    throw Error(ErrorKind::ShapeMismatch, "first layer must have 3 input channels");
  }
  const int n = cw.out_c;
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const int tile = cw.k * scale;
  RasterImage out(cols * tile + (cols - 1) * gap, rows * tile + (rows - 1) * gap);
  const std::size_t per_filter = static_cast<std::size_t>(cw.in_c) * cw.k * cw.k;
  for (int f = 0; f < n; ++f) {
    const auto first = cw.w.begin() + static_cast<std::ptrdiff_t>(f * per_filter);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(per_filter));
    const double mn = *lo;
    const double mx = *hi;
    const int ox = (f % cols) * (tile + gap);
    const int oy = (f / cols) * (tile + gap);
    for (int ky = 0; ky < cw.k; ++ky) {
      for (int kx = 0; kx < cw.k; ++kx) {
        std::array<std::uint8_t, 3> rgb{};
        for (int c = 0; c < 3; ++c) {
          rgb[c] = mx > mn ? quantize((cw.weight(f, c, ky, kx) - mn) / (mx - mn) * 255.0) : 128;
        }
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            out.set_pixel(ox + kx * scale + dx, oy + ky * scale + dy, rgb);
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------
//
// Layout (little-endian):
//   8 bytes  magic "HISTOCNN"
//   u32      version (1)
//   u32 x 6  input_side, c1, c2, c3, fc_units, classes
//   u64      init seed
//   u32      tensor count
//   per tensor, declaration order: u64 element count, then f64 values

inline constexpr char kCheckpointMagic[8] = {'H', 'I', 'S', 'T', 'O', 'C', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) {
    if (pos_ + n > b_.size()) {
      throw Error(ErrorKind::MalformedFile, std::string("truncated checkpoint reading ") + what, pos_);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const CnnParameters& p) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  for (int v : {p.arch.input_side, p.arch.c1, p.arch.c2, p.arch.c3, p.arch.fc_units, kClasses}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_u64(out, p.seed);
  detail::put_u32(out, 10);
  p.for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) {
    detail::put_u64(out, v.size());
    for (double x : v) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &x, sizeof bits);
      detail::put_u64(out, bits);
    }
  });
  return out;
}

inline CnnParameters decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  const auto magic = r.raw(8, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
    throw Error(ErrorKind::MalformedFile, "not a checkpoint (bad magic)", 0);
  }
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::UnsupportedFormat, "checkpoint version " + std::to_string(version),
                version_at);
  }
  CnnArchitecture arch;
  arch.input_side = static_cast<int>(r.u32("input_side"));
  arch.c1 = static_cast<int>(r.u32("c1"));
  arch.c2 = static_cast<int>(r.u32("c2"));
  arch.c3 = static_cast<int>(r.u32("c3"));
  arch.fc_units = static_cast<int>(r.u32("fc_units"));
  const std::size_t classes_at = r.pos();
  if (r.u32("classes") != kClasses) {
    throw Error(ErrorKind::UnsupportedFormat, "checkpoint class count must be 4", classes_at);
  }
  const std::uint64_t seed = r.u64("seed");
  const std::size_t count_at = r.pos();
  if (r.u32("tensor count") != 10) {
    throw Error(ErrorKind::MalformedFile, "checkpoint must hold 10 tensors", count_at);
  }
  LayerShapes s;
  try {
    s = arch.shapes();
  } catch (const Error& e) {
    throw Error(ErrorKind::MalformedFile, std::string("invalid architecture: ") + e.what());
  }
  // Reject headers promising more values than the file holds before allocating.
  const double values = 13.0 * arch.c1 + arch.c2 * (4.0 * arch.c1 + 1) + arch.c3 * (16.0 * arch.c2 + 1) +
                        arch.fc_units * (static_cast<double>(s.flat) + 1 + kClasses) + kClasses;
  if (values * 8.0 > static_cast<double>(bytes.size())) {
    throw Error(ErrorKind::MalformedFile, "checkpoint too short for its architecture", r.pos());
  }
  CnnParameters p = CnnParameters::zeros(arch);
  p.seed = seed;
  p.for_each_tensor([&](const char* name, std::vector<double>& v, int, bool) {
    const std::size_t at = r.pos();
    const std::uint64_t n = r.u64(name);
    if (n != v.size()) {
      throw Error(ErrorKind::MalformedFile,
                  std::string(name) + " holds " + std::to_string(n) + " values, architecture needs " +
                      std::to_string(v.size()),
                  at);
    }
    for (auto& x : v) {
      const std::uint64_t bits = r.u64(name);
      std::memcpy(&x, &bits, sizeof x);
    }
  });
  if (!r.at_end()) throw Error(ErrorKind::MalformedFile, "trailing bytes after checkpoint", r.pos());
  p.require_finite("checkpoint");
  return p;
}

}  // namespace histo::refnet
