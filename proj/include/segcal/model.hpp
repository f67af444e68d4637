#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "segcal/error.hpp"
#include "segcal/numerics.hpp"
#include "segcal/rng.hpp"

namespace segcal {

// Fixed fully-convolutional segmenter: three 3x3 convolutions with stride 1
// and replicate padding, ReLU between layers, channel widths
// in -> hidden -> hidden -> classes. Small enough that the backward pass is
// derived by hand and runs quickly on one CPU core.
class ModelParams {
 public:
  static constexpr int kLayers = 3;
  static constexpr int kKernel = 3;

  ModelParams(int in_channels, int hidden, int classes)
      : dims_{in_channels, hidden, hidden, classes} {
    if (in_channels < 1 || hidden < 1 || classes < 2)
      throw invalid_input("ModelParams: invalid architecture dims");
    std::size_t total = 0;
    for (int l = 0; l < kLayers; ++l) {
      weight_off_[l] = total;
      total += static_cast<std::size_t>(dims_[l + 1]) * dims_[l] * kKernel * kKernel;
      bias_off_[l] = total;
      total += static_cast<std::size_t>(dims_[l + 1]);
    }
    data_.assign(total, 0.0);
  }

  // Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  static ModelParams init(int in_channels, int hidden, int classes, std::uint64_t seed) {
    ModelParams p(in_channels, hidden, classes);
    std::mt19937_64 rng(mix_seed(seed, 0xC0DEull));
    for (int l = 0; l < kLayers; ++l) {
      const double fan_in = static_cast<double>(p.dims_[l]) * kKernel * kKernel;
      const double fan_out = static_cast<double>(p.dims_[l + 1]) * kKernel * kKernel;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      double* w = p.data_.data() + p.weight_off_[l];
      const std::size_t n = p.bias_off_[l] - p.weight_off_[l];
      for (std::size_t i = 0; i < n; ++i) w[i] = dist(rng);
    }
    return p;
  }

  int in_channels() const { return dims_[0]; }
  int hidden() const { return dims_[1]; }
  int classes() const { return dims_[kLayers]; }
  int layer_in(int l) const { return dims_[l]; }
  int layer_out(int l) const { return dims_[l + 1]; }

  std::size_t size() const { return data_.size(); }
  std::vector<double>& flat() { return data_; }
  const std::vector<double>& flat() const { return data_; }

  double* weights(int l) { return data_.data() + weight_off_[l]; }
  const double* weights(int l) const { return data_.data() + weight_off_[l]; }
  double* biases(int l) { return data_.data() + bias_off_[l]; }
  const double* biases(int l) const { return data_.data() + bias_off_[l]; }
  std::size_t weight_offset(int l) const { return weight_off_[l]; }
  std::size_t bias_offset(int l) const { return bias_off_[l]; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_architecture(const ModelParams& o) const {
    return std::equal(dims_, dims_ + kLayers + 1, o.dims_);
  }

 private:
  int dims_[kLayers + 1];
  std::size_t weight_off_[kLayers] = {};
  std::size_t bias_off_[kLayers] = {};
  std::vector<double> data_;
};

// Intermediate activations captured during a forward pass so the backward
// pass does not recompute them. pre[l] holds the pre-activation output of
// layer l; act[l] holds the (padded) input fed to layer l.
struct ForwardCache {
  std::size_t height = 0, width = 0;
  std::vector<std::vector<double>> padded_in;  // per layer, C_in x (H+2) x (W+2)
  std::vector<std::vector<double>> pre;        // per layer, C_out x H x W
};

namespace detail {

inline void pad_replicate(const double* src, int channels, std::size_t h, std::size_t w,
                          std::vector<double>& dst) {
  const std::size_t hp = h + 2, wp = w + 2;
  dst.resize(static_cast<std::size_t>(channels) * hp * wp);
  for (int ch = 0; ch < channels; ++ch) {
    const double* s = src + static_cast<std::size_t>(ch) * h * w;
    double* d = dst.data() + static_cast<std::size_t>(ch) * hp * wp;
    for (std::size_t r = 0; r < hp; ++r) {
      const std::size_t sr = std::min(h - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                                 0, static_cast<std::ptrdiff_t>(r) - 1)));
      const double* srow = s + sr * w;
      double* drow = d + r * wp;
      drow[0] = srow[0];
      std::copy(srow, srow + w, drow + 1);
      drow[wp - 1] = srow[w - 1];
    }
  }
}

// The three conv kernels below keep a per-row accumulator in cache and walk
// the three column taps of a kernel row in one pass, so the hot loops
// vectorize and each output row is written once.

inline void conv_forward(const double* in_pad, int c_in, const double* weights,
                         const double* bias, double* out, int c_out, std::size_t h,
                         std::size_t w) {
  const std::size_t wp = w + 2, plane = (h + 2) * wp;
  std::vector<double> acc(w);
  for (int oc = 0; oc < c_out; ++oc) {
    double* o = out + static_cast<std::size_t>(oc) * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      std::fill(acc.begin(), acc.end(), bias[oc]);
      for (int ic = 0; ic < c_in; ++ic) {
        const double* ip = in_pad + static_cast<std::size_t>(ic) * plane + r * wp;
        const double* wk = weights + (static_cast<std::size_t>(oc) * c_in + ic) * 9;
        for (int kr = 0; kr < 3; ++kr) {
          const double* __restrict src = ip + static_cast<std::size_t>(kr) * wp;
          const double w0 = wk[kr * 3 + 0], w1 = wk[kr * 3 + 1], w2 = wk[kr * 3 + 2];
          double* __restrict a = acc.data();
          for (std::size_t c = 0; c < w; ++c)
            a[c] += w0 * src[c] + w1 * src[c + 1] + w2 * src[c + 2];
        }
      }
      std::copy(acc.begin(), acc.end(), o + r * w);
    }
  }
}

inline void conv_weight_grad(const double* in_pad, int c_in, const double* dz, int c_out,
                             std::size_t h, std::size_t w, double* d_weights, double* d_bias) {
  const std::size_t wp = w + 2, plane = (h + 2) * wp;
  std::vector<double> t0(w), t1(w), t2(w);
  for (int oc = 0; oc < c_out; ++oc) {
    const double* g = dz + static_cast<std::size_t>(oc) * h * w;
    double bsum = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) bsum += g[i];
    d_bias[oc] += bsum;
    for (int ic = 0; ic < c_in; ++ic) {
      const double* ip = in_pad + static_cast<std::size_t>(ic) * plane;
      double* dwk = d_weights + (static_cast<std::size_t>(oc) * c_in + ic) * 9;
      for (int kr = 0; kr < 3; ++kr) {
        // Column-wise partial products; summed once at the end so the inner
        // loop carries no dependency chain.
        std::fill(t0.begin(), t0.end(), 0.0);
        std::fill(t1.begin(), t1.end(), 0.0);
        std::fill(t2.begin(), t2.end(), 0.0);
        for (std::size_t r = 0; r < h; ++r) {
          const double* __restrict grow = g + r * w;
          const double* __restrict src = ip + (r + kr) * wp;
          double* __restrict a0 = t0.data();
          double* __restrict a1 = t1.data();
          double* __restrict a2 = t2.data();
          for (std::size_t c = 0; c < w; ++c) {
            a0[c] += grow[c] * src[c];
            a1[c] += grow[c] * src[c + 1];
            a2[c] += grow[c] * src[c + 2];
          }
        }
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
          s0 += t0[c];
          s1 += t1[c];
          s2 += t2[c];
        }
        dwk[kr * 3 + 0] += s0;
        dwk[kr * 3 + 1] += s1;
        dwk[kr * 3 + 2] += s2;
      }
    }
  }
}

// Accumulates dL/d(padded input); the caller folds the pad ring back onto
// the border pixels that replicate-padding copied from.
inline void conv_input_grad(const double* weights, const double* dz, int c_in, int c_out,
                            std::size_t h, std::size_t w, std::vector<double>& d_in_pad) {
  const std::size_t wp = w + 2, plane = (h + 2) * wp;
  d_in_pad.assign(static_cast<std::size_t>(c_in) * plane, 0.0);
  std::vector<double> acc(wp);
  for (int ic = 0; ic < c_in; ++ic) {
    double* dp = d_in_pad.data() + static_cast<std::size_t>(ic) * plane;
    for (std::size_t rp = 0; rp < h + 2; ++rp) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int oc = 0; oc < c_out; ++oc) {
        const double* g = dz + static_cast<std::size_t>(oc) * h * w;
        const double* wk = weights + (static_cast<std::size_t>(oc) * c_in + ic) * 9;
        for (int kr = 0; kr < 3; ++kr) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(rp) - kr;
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* __restrict grow = g + static_cast<std::size_t>(r) * w;
          for (int kc = 0; kc < 3; ++kc) {
            const double wv = wk[kr * 3 + kc];
            double* __restrict a = acc.data() + kc;
            for (std::size_t c = 0; c < w; ++c) a[c] += wv * grow[c];
          }
        }
      }
      std::copy(acc.begin(), acc.end(), dp + rp * wp);
    }
  }
}

inline void fold_pad(const double* dp, double* d, std::size_t h, std::size_t w) {
  const std::size_t wp = w + 2;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) d[r * w + c] = dp[(r + 1) * wp + (c + 1)];
  for (std::size_t j = 0; j < wp; ++j) {
    const std::size_t c = std::min(w - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                              0, static_cast<std::ptrdiff_t>(j) - 1)));
    d[c] += dp[j];
    d[(h - 1) * w + c] += dp[(h + 1) * wp + j];
  }
  for (std::size_t i = 1; i <= h; ++i) {
    d[(i - 1) * w] += dp[i * wp];
    d[(i - 1) * w + (w - 1)] += dp[i * wp + (w + 1)];
  }
}

inline void check_image(const ModelParams& params, const DenseArray& image) {
  const int channels = image.rank() == 3 ? static_cast<int>(image.extent(0)) : 1;
  if (channels != params.in_channels())
    throw invalid_input("forward: image channel count does not match the model");
  if (!image.all_finite()) throw invalid_input("forward: non-finite image");
  const std::size_t h = image.extent(image.rank() - 2);
  const std::size_t w = image.extent(image.rank() - 1);
  if (h < 3 || w < 3) throw invalid_input("forward: image must be at least 3x3");
}

}  // namespace detail

// Runs the network, filling `cache` for a later backward pass.
inline DenseArray forward(const ModelParams& params, const DenseArray& image,
                          ForwardCache& cache) {
  detail::check_image(params, image);
  if (!params.all_finite()) throw invalid_state("forward: non-finite parameters");
  const std::size_t h = image.extent(image.rank() - 2);
  const std::size_t w = image.extent(image.rank() - 1);
  cache.height = h;
  cache.width = w;
  cache.padded_in.assign(ModelParams::kLayers, {});
  cache.pre.assign(ModelParams::kLayers, {});

  std::vector<double> act(image.values());
  for (int l = 0; l < ModelParams::kLayers; ++l) {
    detail::pad_replicate(act.data(), params.layer_in(l), h, w, cache.padded_in[l]);
    cache.pre[l].assign(static_cast<std::size_t>(params.layer_out(l)) * h * w, 0.0);
    detail::conv_forward(cache.padded_in[l].data(), params.layer_in(l), params.weights(l),
                         params.biases(l), cache.pre[l].data(), params.layer_out(l), h, w);
    if (l + 1 < ModelParams::kLayers) {
      act = cache.pre[l];
      for (double& v : act) v = v > 0.0 ? v : 0.0;
    }
  }
  return DenseArray::from_data({static_cast<std::size_t>(params.classes()), h, w},
                               cache.pre[ModelParams::kLayers - 1]);
}

// Per-pixel K-class logits for an image; spatial size is preserved.
inline DenseArray forward(const ModelParams& params, const DenseArray& image) {
  ForwardCache cache;
  return forward(params, image, cache);
}

// Exact gradient of (loss o forward) with respect to every parameter, given
// dL/dlogits. Flat layout matches ModelParams::flat(). ReLU subgradient at 0
// is 0.
inline std::vector<double> backward(const ModelParams& params, const ForwardCache& cache,
                                    const DenseArray& grad_logits) {
  const std::size_t h = cache.height, w = cache.width;
  if (grad_logits.rank() != 3 ||
      grad_logits.extent(0) != static_cast<std::size_t>(params.classes()) ||
      grad_logits.extent(1) != h || grad_logits.extent(2) != w)
    throw invalid_input("backward: grad_logits shape does not match the forward pass");

  std::vector<double> grads(params.size(), 0.0);
  std::vector<double> dz(grad_logits.values());
  std::vector<double> d_in_pad;
  for (int l = ModelParams::kLayers - 1; l >= 0; --l) {
    detail::conv_weight_grad(cache.padded_in[l].data(), params.layer_in(l), dz.data(),
                             params.layer_out(l), h, w, grads.data() + params.weight_offset(l),
                             grads.data() + params.bias_offset(l));
    if (l == 0) break;
    detail::conv_input_grad(params.weights(l), dz.data(), params.layer_in(l),
                            params.layer_out(l), h, w, d_in_pad);
    std::vector<double> d_act(static_cast<std::size_t>(params.layer_in(l)) * h * w);
    for (int ch = 0; ch < params.layer_in(l); ++ch)
      detail::fold_pad(d_in_pad.data() + static_cast<std::size_t>(ch) * (h + 2) * (w + 2),
                       d_act.data() + static_cast<std::size_t>(ch) * h * w, h, w);
    const std::vector<double>& pre = cache.pre[l - 1];
    dz.resize(d_act.size());
    for (std::size_t i = 0; i < d_act.size(); ++i) dz[i] = pre[i] > 0.0 ? d_act[i] : 0.0;
  }
  return grads;
}

inline std::vector<double> backward(const ModelParams& params, const DenseArray& image,
                                    const DenseArray& grad_logits) {
  ForwardCache cache;
  forward(params, image, cache);
  return backward(params, cache, grad_logits);
}

}  // namespace segcal
