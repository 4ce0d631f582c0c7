// Copyright 2026 The cwhawq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cwhawq/engine.hpp"

#include <algorithm>
#include <cmath>

#include "cwhawq/error.hpp"
#include "cwhawq/quantizers.hpp"

namespace cwhawq {

// ---------------------------------------------------------------------------
// Kernels. All of them accumulate into their output.
// ---------------------------------------------------------------------------
namespace {

// Four-way split accumulation so the reduction vectorizes.
double dot_n(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double* y, const double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

struct DenseGeom {
  std::size_t batch, in, out;
};

void dense_fwd(const DenseGeom& g, const double* w, const double* x, double* y) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xr = x + n * g.in;
    double* yr = y + n * g.out;
    for (std::size_t o = 0; o < g.out; ++o) {
      yr[o] += dot_n(w + o * g.in, xr, g.in);
    }
  }
}

void dense_igrad(const DenseGeom& g, const double* w, const double* gy, double* gx) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* gxr = gx + n * g.in;
    for (std::size_t o = 0; o < g.out; ++o) {
      const double c = gy[n * g.out + o];
      if (c == 0.0) continue;
      const double* wr = w + o * g.in;
      for (std::size_t i = 0; i < g.in; ++i) gxr[i] += c * wr[i];
    }
  }
}

void dense_wgrad(const DenseGeom& g, const double* gy, const double* x, double* gw) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xr = x + n * g.in;
    for (std::size_t o = 0; o < g.out; ++o) {
      const double c = gy[n * g.out + o];
      if (c == 0.0) continue;
      double* gwr = gw + o * g.in;
      for (std::size_t i = 0; i < g.in; ++i) gwr[i] += c * xr[i];
    }
  }
}

struct ConvGeom {
  std::size_t batch, in_c, out_c, h, w, kh, kw;
  std::size_t plane() const { return h * w; }
};

bool plane_is_zero(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] != 0.0) return false;
  return true;
}

// cols[(c,i,j), (r,q)] = x[c, r+i-ph, q+j-pw], zero outside the image.
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const long ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  double* out = cols;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double* xp = x + c * g.plane();
    for (long i = 0; i < static_cast<long>(g.kh); ++i)
      for (long j = 0; j < static_cast<long>(g.kw); ++j) {
        const long dh = i - ph, dw = j - pw;
        for (long r = 0; r < H; ++r, out += W) {
          const long sr = r + dh;
          if (sr < 0 || sr >= H) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* xr = xp + sr * W;
          for (long q = 0; q < W; ++q) {
            const long sq = q + dw;
            out[q] = (sq >= 0 && sq < W) ? xr[sq] : 0.0;
          }
        }
      }
  }
}

// Adjoint of im2col, accumulating into gx.
void col2im_add(const ConvGeom& g, const double* cols, double* gx) {
  const long ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const double* in = cols;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double* xp = gx + c * g.plane();
    for (long i = 0; i < static_cast<long>(g.kh); ++i)
      for (long j = 0; j < static_cast<long>(g.kw); ++j) {
        const long dh = i - ph, dw = j - pw;
        const long q0 = std::max(0L, -dw), q1 = std::min(W, W - dw);
        for (long r = 0; r < H; ++r, in += W) {
          const long sr = r + dh;
          if (sr < 0 || sr >= H) continue;
          double* xr = xp + sr * W + dw;
          for (long q = q0; q < q1; ++q) xr[q] += in[q];
        }
      }
  }
}

// y[n,o,h,w] += sum_{c,i,j} wt[o,c,i,j] * x[n,c,h+i-ph,w+j-pw]
void conv_fwd(const ConvGeom& g, const double* wt, const double* x, double* y) {
  const std::size_t hw = g.plane(), K = g.in_c * g.kh * g.kw;
  std::vector<double> cols(K * hw);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x + n * g.in_c * hw;
    if (plane_is_zero(xn, g.in_c * hw)) continue;
    im2col(g, xn, cols.data());
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double* yp = y + (n * g.out_c + o) * hw;
      const double* wo = wt + o * K;
      for (std::size_t k = 0; k < K; ++k)
        if (wo[k] != 0.0) axpy(yp, cols.data() + k * hw, wo[k], hw);
    }
  }
}

// gx[n,c,h+i-ph,w+j-pw] += wt[o,c,i,j] * gy[n,o,h,w]
void conv_igrad(const ConvGeom& g, const double* wt, const double* gy, double* gx) {
  const std::size_t hw = g.plane(), K = g.in_c * g.kh * g.kw;
  std::vector<double> gcols(K * hw);
  for (std::size_t n = 0; n < g.batch; ++n) {
    bool any = false;
    std::fill(gcols.begin(), gcols.end(), 0.0);
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const double* gp = gy + (n * g.out_c + o) * hw;
      if (plane_is_zero(gp, hw)) continue;
      any = true;
      const double* wo = wt + o * K;
      for (std::size_t k = 0; k < K; ++k)
        if (wo[k] != 0.0) axpy(gcols.data() + k * hw, gp, wo[k], hw);
    }
    if (any) col2im_add(g, gcols.data(), gx + n * g.in_c * hw);
  }
}

// gw[o,c,i,j] += sum_{n,h,w} gy[n,o,h,w] * x[n,c,h+i-ph,w+j-pw]
void conv_wgrad(const ConvGeom& g, const double* gy, const double* x, double* gw) {
  const std::size_t hw = g.plane(), K = g.in_c * g.kh * g.kw;
  std::vector<double> cols(K * hw);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x + n * g.in_c * hw;
    if (plane_is_zero(xn, g.in_c * hw)) continue;
    bool built = false;
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const double* gp = gy + (n * g.out_c + o) * hw;
      if (plane_is_zero(gp, hw)) continue;
      if (!built) {
        im2col(g, xn, cols.data());
        built = true;
      }
      double* go = gw + o * K;
      for (std::size_t k = 0; k < K; ++k) go[k] += dot_n(gp, cols.data() + k * hw, hw);
    }
  }
}

// Adds bias[o] to every element of output channel o (channel = trailing block of `inner` values).
void add_bias(const std::vector<double>& bias, std::size_t batch, std::size_t inner, double* y) {
  const std::size_t out = bias.size();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      double* p = y + (n * out + o) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] += bias[o];
    }
}

void bias_grad(std::size_t batch, std::size_t out, std::size_t inner, const double* gy, double* gb) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      const double* p = gy + (n * out + o) * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += p[k];
      gb[o] += s;
    }
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

// ---------------------------------------------------------------------------
// Engine internals with access to the cache.
// ---------------------------------------------------------------------------
struct EngineAccess {
  static std::size_t per_sample_in(const Model& m, std::size_t l) {
    return l == 0 ? numel(m.input_shape()) : numel(m.output_shape(l - 1));
  }
  static const Shape& in_shape(const Model& m, std::size_t l) {
    return l == 0 ? m.input_shape() : m.output_shape(l - 1);
  }

  static const std::vector<double>& weights(const Model& m, const ForwardCache& c, std::size_t l) {
    return c.eff_w_[l].empty() ? m.params(l).weight.data : c.eff_w_[l];
  }

  static DenseGeom dense_geom(const Dense& d, std::size_t batch) { return {batch, d.in, d.out}; }
  static ConvGeom conv_geom(const Model& m, const Conv2d& cv, std::size_t l, std::size_t batch) {
    const Shape& s = in_shape(m, l);
    return {batch, cv.in_channels, cv.out_channels, s[1], s[2], cv.kernel_h, cv.kernel_w};
  }

  /// ReLU pass mask value: derivative of the (possibly PACT-quantized) ReLU.
  // Pass-through mask of a ReLU layer's input: 0 < x (< alpha when PACT).
  static std::vector<double> relu_mask(const Model& m, std::size_t l, const std::vector<double>& x) {
    std::vector<double> mask(x.size());
    auto it = m.quant().activations.find(l);
    if (it == m.quant().activations.end()) {
      for (std::size_t k = 0; k < x.size(); ++k) mask[k] = x[k] > 0.0 ? 1.0 : 0.0;
      return mask;
    }
    const std::size_t cs = m.activation_channel_size(l), C = it->second.alpha.size(), per = C * cs;
    for (std::size_t base = 0; base < x.size(); base += per)
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double a = it->second.alpha[ch];
        const std::size_t b = base + ch * cs;
        for (std::size_t k = b; k < b + cs; ++k) mask[k] = (x[k] > 0.0 && x[k] < a) ? 1.0 : 0.0;
      }
    return mask;
  }

  static void check_fresh(const Model& m, const ForwardCache& c) {
    require(c.model_id_ == m.id() && c.model_version_ == m.version(),
            "stale forward cache: the model was replaced or mutated after the forward pass");
  }

  static void quantize_weights(const Model& m, ForwardCache& c, std::size_t l) {
    auto it = m.quant().weights.find(l);
    if (it == m.quant().weights.end()) return;
    const auto& w = m.params(l).weight.data;
    const std::size_t channels = m.weight_channels(l), cs = m.weight_channel_size(l);
    c.eff_w_[l].assign(w.size(), 0.0);
    c.w_pass_[l].assign(w.size(), 1.0);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      std::span<const double> slice(w.data() + ch * cs, cs);
      const int bits = it->second.bits[ch];
      double* dst = c.eff_w_[l].data() + ch * cs;
      double* pass = c.w_pass_[l].data() + ch * cs;
      if (bits == 2) {
        const auto r = quantize_weights_sawb2(slice, m.quant().sawb);
        std::copy(r.values.begin(), r.values.end(), dst);
        for (std::size_t k = 0; k < cs; ++k) pass[k] = std::abs(slice[k]) <= r.alpha ? 1.0 : 0.0;
      } else {
        double alpha = 0.0;
        for (double v : slice) alpha = std::max(alpha, std::abs(v));
        if (alpha == 0.0) continue;
        for (std::size_t k = 0; k < cs; ++k) dst[k] = quantize_uniform_value(slice[k], bits, alpha);
      }
    }
  }

  static ForwardCache run_forward(const Model& m, const Tensor& inputs) {
    const std::size_t in_size = numel(m.input_shape());
    require(inputs.shape.size() == m.input_shape().size() + 1 &&
                std::equal(m.input_shape().begin(), m.input_shape().end(), inputs.shape.begin() + 1),
            "input batch shape " + to_string(inputs.shape) + " does not match model input [N," +
                to_string(m.input_shape()).substr(1));
    require(inputs.size() == inputs.shape[0] * in_size, "input batch data length mismatch");
    const std::size_t batch = inputs.shape[0];
    require(batch >= 1, "batch must not be empty");

    ForwardCache c;
    c.model_id_ = m.id();
    c.model_version_ = m.version();
    c.batch_ = batch;
    const std::size_t L = m.layer_count();
    c.acts_.resize(L + 1);
    c.eff_w_.resize(L);
    c.w_pass_.resize(L);
    c.argmax_.resize(L);
    c.acts_[0] = inputs.data;

    for (std::size_t l = 0; l < L; ++l) {
      const std::vector<double>& x = c.acts_[l];
      std::vector<double>& y = c.acts_[l + 1];
      const std::size_t out_size = numel(m.output_shape(l));
      y.assign(batch * out_size, 0.0);
      std::visit(overloaded{
                     [&](const Dense& d) {
                       quantize_weights(m, c, l);
                       if (d.bias) add_bias(m.params(l).bias.data, batch, 1, y.data());
                       dense_fwd(dense_geom(d, batch), weights(m, c, l).data(), x.data(), y.data());
                     },
                     [&](const Conv2d& cv) {
                       quantize_weights(m, c, l);
                       const ConvGeom g = conv_geom(m, cv, l, batch);
                       add_bias(m.params(l).bias.data, batch, g.plane(), y.data());
                       conv_fwd(g, weights(m, c, l).data(), x.data(), y.data());
                     },
                     [&](const Relu&) {
                       auto it = m.quant().activations.find(l);
                       if (it == m.quant().activations.end()) {
                         for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
                       } else {
                         const std::size_t cs = m.activation_channel_size(l), C = it->second.alpha.size();
                         for (std::size_t base = 0; base < y.size(); base += out_size)
                           for (std::size_t ch = 0; ch < C; ++ch) {
                             const double a = it->second.alpha[ch];
                             const int bits = it->second.bits[ch];
                             const std::size_t b = base + ch * cs;
                             for (std::size_t k = b; k < b + cs; ++k) y[k] = pact_value(x[k] > 0.0 ? x[k] : 0.0, a, bits);
                           }
                       }
                     },
                     [&](const Sigmoid&) {
                       for (std::size_t k = 0; k < y.size(); ++k) y[k] = 1.0 / (1.0 + std::exp(-x[k]));
                     },
                     [&](const MaxPool2x2&) {
                       const Shape& s = in_shape(m, l);
                       const std::size_t C = s[0], H = s[1], W = s[2], Ho = H / 2, Wo = W / 2;
                       auto& am = c.argmax_[l];
                       am.assign(y.size(), 0);
                       for (std::size_t n = 0; n < batch; ++n)
                         for (std::size_t ch = 0; ch < C; ++ch) {
                           const std::size_t ib = (n * C + ch) * H * W, ob = (n * C + ch) * Ho * Wo;
                           for (std::size_t r = 0; r < Ho; ++r)
                             for (std::size_t q = 0; q < Wo; ++q) {
                               // First maximal element in row-major window order wins ties.
                               std::size_t best = ib + (2 * r) * W + 2 * q;
                               for (std::size_t dr = 0; dr < 2; ++dr)
                                 for (std::size_t dq = 0; dq < 2; ++dq) {
                                   const std::size_t idx = ib + (2 * r + dr) * W + 2 * q + dq;
                                   if (x[idx] > x[best]) best = idx;
                                 }
                               y[ob + r * Wo + q] = x[best];
                               am[ob + r * Wo + q] = static_cast<std::uint32_t>(best);
                             }
                         }
                     },
                     [&](const Flatten&) { y = x; },
                 },
                 m.layers()[l]);
    }
    return c;
  }

  static void apply_head(const Model& m, ForwardCache& c, const Batch& batch) {
    require(m.head().has_value(), "model has no loss head");
    const std::size_t B = c.batch_, K = m.output_size();
    const auto& z = c.acts_.back();
    c.labels_ = batch.labels;
    if (std::holds_alternative<SoftmaxCrossEntropy>(*m.head())) {
      require(batch.labels.size() == B, "label count " + std::to_string(batch.labels.size()) +
                                            " does not match batch size " + std::to_string(B));
      c.probs_.assign(B * K, 0.0);
      double total = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        const int y = batch.labels[n];
        require(y >= 0 && static_cast<std::size_t>(y) < K,
                "label " + std::to_string(y) + " out of range for " + std::to_string(K) + " classes");
        const double* zr = z.data() + n * K;
        const double mx = *std::max_element(zr, zr + K);
        double se = 0.0;
        for (std::size_t k = 0; k < K; ++k) se += std::exp(zr[k] - mx);
        for (std::size_t k = 0; k < K; ++k) c.probs_[n * K + k] = std::exp(zr[k] - mx) / se;
        total += std::log(se) + mx - zr[y];
      }
      c.loss_ = total / static_cast<double>(B);
    } else {
      const auto& q = std::get<QuadraticHead>(*m.head());
      double total = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        const double* zr = z.data() + n * K;
        for (std::size_t r = 0; r < K; ++r)
          for (std::size_t s = 0; s < K; ++s) total += 0.5 * zr[r] * q.matrix[r * K + s] * zr[s];
      }
      c.loss_ = total / static_cast<double>(B);
    }
    c.has_loss_ = true;
    if (!std::isfinite(c.loss_)) fail(ErrorCode::kNumerical, "loss is not finite");
  }

  /// d loss / d output.
  static std::vector<double> head_grad(const Model& m, const ForwardCache& c) {
    const std::size_t B = c.batch_, K = m.output_size();
    std::vector<double> g(B * K, 0.0);
    const double inv = 1.0 / static_cast<double>(B);
    if (std::holds_alternative<SoftmaxCrossEntropy>(*m.head())) {
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t k = 0; k < K; ++k)
          g[n * K + k] = (c.probs_[n * K + k] - (static_cast<int>(k) == c.labels_[n] ? 1.0 : 0.0)) * inv;
    } else {
      const auto& q = std::get<QuadraticHead>(*m.head());
      const auto& z = c.acts_.back();
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t r = 0; r < K; ++r) {
          double s = 0.0;
          for (std::size_t t = 0; t < K; ++t) s += q.matrix[r * K + t] * z[n * K + t];
          g[n * K + r] = s * inv;
        }
    }
    return g;
  }

  /// Directional derivative of head_grad along output tangent zdot.
  static std::vector<double> head_grad_tangent(const Model& m, const ForwardCache& c, const std::vector<double>& zdot) {
    const std::size_t B = c.batch_, K = m.output_size();
    std::vector<double> g(B * K, 0.0);
    if (zdot.empty()) return g;
    const double inv = 1.0 / static_cast<double>(B);
    if (std::holds_alternative<SoftmaxCrossEntropy>(*m.head())) {
      for (std::size_t n = 0; n < B; ++n) {
        const double* p = c.probs_.data() + n * K;
        const double* zd = zdot.data() + n * K;
        double pz = 0.0;
        for (std::size_t k = 0; k < K; ++k) pz += p[k] * zd[k];
        for (std::size_t k = 0; k < K; ++k) g[n * K + k] = p[k] * (zd[k] - pz) * inv;
      }
    } else {
      const auto& q = std::get<QuadraticHead>(*m.head());
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t r = 0; r < K; ++r) {
          double s = 0.0;
          for (std::size_t t = 0; t < K; ++t) s += q.matrix[r * K + t] * zdot[n * K + t];
          g[n * K + r] = s * inv;
        }
    }
    return g;
  }

  /// Reverse pass from d loss / d output. Fills grads[i] = d loss / d acts_[i]
  /// for i >= stop_at (grads[0] only when input_grad is requested).
  static Gradient run_backward(const Model& m, const ForwardCache& c, std::vector<double> out_grad, bool input_grad,
                               std::vector<std::vector<double>>* keep) {
    check_fresh(m, c);
    const std::size_t L = m.layer_count(), B = c.batch_;
    require(out_grad.size() == B * m.output_size(), "output gradient length mismatch");
    Gradient grad = Gradient::zeros_like(m);
    std::vector<std::vector<double>> local;
    auto& grads = keep ? *keep : local;
    grads.assign(L + 1, {});
    grads[L] = std::move(out_grad);

    for (std::size_t l = L; l-- > 0;) {
      const bool need_gx = l > 0 || input_grad;
      const std::vector<double>& gy = grads[l + 1];
      const std::vector<double>& x = c.acts_[l];
      std::vector<double> gx;
      if (need_gx) gx.assign(x.size(), 0.0);
      std::visit(overloaded{
                     [&](const Dense& d) {
                       const DenseGeom g = dense_geom(d, B);
                       auto& gw = grad.layers[l].weight.data;
                       dense_wgrad(g, gy.data(), x.data(), gw.data());
                       if (!c.w_pass_[l].empty())
                         for (std::size_t k = 0; k < gw.size(); ++k) gw[k] *= c.w_pass_[l][k];
                       if (d.bias) bias_grad(B, d.out, 1, gy.data(), grad.layers[l].bias.data.data());
                       if (need_gx) dense_igrad(g, weights(m, c, l).data(), gy.data(), gx.data());
                     },
                     [&](const Conv2d& cv) {
                       const ConvGeom g = conv_geom(m, cv, l, B);
                       auto& gw = grad.layers[l].weight.data;
                       conv_wgrad(g, gy.data(), x.data(), gw.data());
                       if (!c.w_pass_[l].empty())
                         for (std::size_t k = 0; k < gw.size(); ++k) gw[k] *= c.w_pass_[l][k];
                       bias_grad(B, cv.out_channels, g.plane(), gy.data(), grad.layers[l].bias.data.data());
                       if (need_gx) conv_igrad(g, weights(m, c, l).data(), gy.data(), gx.data());
                     },
                     [&](const Relu&) {
                       const std::size_t per = numel(m.output_shape(l));
                       auto it = m.quant().activations.find(l);
                       if (it != m.quant().activations.end()) {
                         const std::size_t cs = m.activation_channel_size(l), C = it->second.alpha.size();
                         auto& ga = grad.alpha[l];
                         ga.assign(C, 0.0);
                         for (std::size_t base = 0; base < x.size(); base += per)
                           for (std::size_t ch = 0; ch < C; ++ch) {
                             const double a = it->second.alpha[ch];
                             const std::size_t b = base + ch * cs;
                             for (std::size_t k = b; k < b + cs; ++k)
                               if (x[k] >= a) ga[ch] += gy[k];
                           }
                       }
                       if (need_gx) {
                         const std::vector<double> mask = relu_mask(m, l, x);
                         for (std::size_t k = 0; k < x.size(); ++k) gx[k] = gy[k] * mask[k];
                       }
                     },
                     [&](const Sigmoid&) {
                       const auto& y = c.acts_[l + 1];
                       if (need_gx)
                         for (std::size_t k = 0; k < x.size(); ++k) gx[k] = gy[k] * y[k] * (1.0 - y[k]);
                     },
                     [&](const MaxPool2x2&) {
                       if (need_gx)
                         for (std::size_t k = 0; k < gy.size(); ++k) gx[c.argmax_[l][k]] += gy[k];
                     },
                     [&](const Flatten&) {
                       if (need_gx) gx = gy;
                     },
                 },
                 m.layers()[l]);
      grads[l] = std::move(gx);
    }
    return grad;
  }
};

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

std::vector<double> Gradient::flatten() const {
  std::vector<double> flat;
  for (const auto& p : layers) {
    flat.insert(flat.end(), p.weight.data.begin(), p.weight.data.end());
    flat.insert(flat.end(), p.bias.data.begin(), p.bias.data.end());
  }
  return flat;
}

Gradient Gradient::zeros_like(const Model& model) {
  Gradient g;
  g.layers.resize(model.layer_count());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto& p = model.params(l);
    if (!p.weight.empty()) g.layers[l].weight = Tensor(p.weight.shape);
    if (!p.bias.empty()) g.layers[l].bias = Tensor(p.bias.shape);
  }
  return g;
}

Gradient Gradient::unflatten(const Model& model, std::span<const double> flat) {
  require(flat.size() == model.param_count(), "flat gradient length " + std::to_string(flat.size()) +
                                                  " does not match parameter count " +
                                                  std::to_string(model.param_count()));
  Gradient g = zeros_like(model);
  std::size_t k = 0;
  for (auto& p : g.layers) {
    for (auto& v : p.weight.data) v = flat[k++];
    for (auto& v : p.bias.data) v = flat[k++];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

ForwardCache forward(const Model& model, const Tensor& inputs) { return EngineAccess::run_forward(model, inputs); }

LossResult forward_loss(const Model& model, const Batch& batch) {
  ForwardCache c = EngineAccess::run_forward(model, batch.inputs);
  EngineAccess::apply_head(model, c, batch);
  const double loss = c.loss();
  return {loss, std::move(c)};
}

Gradient backward(const Model& model, const ForwardCache& cache) {
  require(cache.has_loss(), "backward needs a cache produced by forward_loss");
  EngineAccess::check_fresh(model, cache);
  return EngineAccess::run_backward(model, cache, EngineAccess::head_grad(model, cache), false, nullptr);
}

OutputBackward backward_from_output(const Model& model, const ForwardCache& cache,
                                    std::span<const double> output_grad) {
  std::vector<std::vector<double>> grads;
  OutputBackward out;
  out.grad = EngineAccess::run_backward(model, cache, std::vector<double>(output_grad.begin(), output_grad.end()),
                                        true, &grads);
  out.input_grad = std::move(grads[0]);
  return out;
}

std::size_t activation_size(const Model& model, std::size_t site) {
  require(site < model.layer_count(), "activation site " + std::to_string(site) + " out of range");
  return numel(model.output_shape(site));
}

HessianVectorProduct::HessianVectorProduct(const Model& model, const Batch& batch)
    : model_(&model), target_(HvpTarget::kWeights), dim_(model.param_count()) {
  cache_ = forward_loss(model, batch).cache;
  grad_ = EngineAccess::run_backward(model, cache_, EngineAccess::head_grad(model, cache_), false, &out_grads_);
}

HessianVectorProduct::HessianVectorProduct(const Model& model, const Batch& batch, std::size_t site)
    : model_(&model), target_(HvpTarget::kActivations), site_(site) {
  require(site < model.layer_count(), "activation site " + std::to_string(site) + " out of range");
  dim_ = batch.size() * activation_size(model, site);
  cache_ = forward_loss(model, batch).cache;
  grad_ = EngineAccess::run_backward(model, cache_, EngineAccess::head_grad(model, cache_), false, &out_grads_);
  require(!std::holds_alternative<Flatten>(model.layers()[site]),
          "layer " + std::to_string(site) + " (flatten) has no activations of its own");
}

std::vector<double> HessianVectorProduct::apply(std::span<const double> v) const {
  return apply_impl(target_ == HvpTarget::kWeights, site_, v);
}

std::vector<double> HessianVectorProduct::apply_weights(std::span<const double> v) const {
  return apply_impl(true, 0, v);
}

std::vector<double> HessianVectorProduct::apply_activations(std::size_t site, std::span<const double> v) const {
  return apply_impl(false, site, v);
}

std::vector<double> HessianVectorProduct::apply_impl(bool weights, std::size_t site,
                                                     std::span<const double> v) const {
  const Model& m = *model_;
  EngineAccess::check_fresh(m, cache_);
  const std::size_t B = cache_.batch_size();
  if (!weights) {
    require(site < m.layer_count(), "activation site " + std::to_string(site) + " out of range");
    require(!std::holds_alternative<Flatten>(m.layers()[site]),
            "layer " + std::to_string(site) + " (flatten) has no activations of its own");
  }
  const std::size_t dim = weights ? m.param_count() : B * activation_size(m, site);
  require(v.size() == dim, "HVP direction has length " + std::to_string(v.size()) + ", expected " +
                                std::to_string(dim));
  const std::size_t L = m.layer_count();
  const std::size_t first = weights ? 0 : site + 1;

  // Tangent of the activations; empty means identically zero.
  std::vector<std::vector<double>> xdot(L + 1);
  if (!weights) xdot[first].assign(v.begin(), v.end());

  auto wdot_of = [&](std::size_t l) -> std::vector<double> {
    const auto& p = m.params(l);
    std::vector<double> wd(v.begin() + static_cast<long>(m.weight_offset(l)),
                           v.begin() + static_cast<long>(m.weight_offset(l) + p.weight.size()));
    const auto& pass = cache_.w_pass_[l];
    if (!pass.empty())
      for (std::size_t k = 0; k < wd.size(); ++k) wd[k] *= pass[k];
    return wd;
  };
  auto bdot_of = [&](std::size_t l) {
    return std::span<const double>(v.data() + m.bias_offset(l), m.params(l).bias.size());
  };
  auto is_zero = [](std::span<const double> s) {
    return std::all_of(s.begin(), s.end(), [](double d) { return d == 0.0; });
  };

  const auto& acts = cache_.acts_;
  const auto& eff = cache_.eff_w_;
  auto W = [&](std::size_t l) -> const std::vector<double>& {
    return eff[l].empty() ? m.params(l).weight.data : eff[l];
  };

  // R-forward.
  std::vector<std::vector<double>> wdots(L);
  for (std::size_t l = first; l < L; ++l) {
    const std::vector<double>& xd = xdot[l];
    std::vector<double> yd;
    const std::size_t out_size = B * numel(m.output_shape(l));
    std::visit(overloaded{
                   [&](const Dense& d) {
                     const DenseGeom g = EngineAccess::dense_geom(d, B);
                     if (weights) wdots[l] = wdot_of(l);
                     const bool wz = !weights || is_zero(wdots[l]);
                     const bool bz = !weights || !d.bias || is_zero(bdot_of(l));
                     if (xd.empty() && wz && bz) return;
                     yd.assign(out_size, 0.0);
                     if (!bz) {
                       auto b = bdot_of(l);
                       add_bias(std::vector<double>(b.begin(), b.end()), B, 1, yd.data());
                     }
                     if (!xd.empty()) dense_fwd(g, W(l).data(), xd.data(), yd.data());
                     if (!wz) dense_fwd(g, wdots[l].data(), acts[l].data(), yd.data());
                   },
                   [&](const Conv2d& cv) {
                     const ConvGeom g = EngineAccess::conv_geom(m, cv, l, B);
                     if (weights) wdots[l] = wdot_of(l);
                     const bool wz = !weights || is_zero(wdots[l]);
                     const bool bz = !weights || is_zero(bdot_of(l));
                     if (xd.empty() && wz && bz) return;
                     yd.assign(out_size, 0.0);
                     if (!bz) {
                       auto b = bdot_of(l);
                       add_bias(std::vector<double>(b.begin(), b.end()), B, g.plane(), yd.data());
                     }
                     if (!xd.empty()) conv_fwd(g, W(l).data(), xd.data(), yd.data());
                     if (!wz) conv_fwd(g, wdots[l].data(), acts[l].data(), yd.data());
                   },
                   [&](const Relu&) {
                     if (xd.empty()) return;
                     const std::vector<double> mask = EngineAccess::relu_mask(m, l, acts[l]);
                     yd.resize(out_size);
                     for (std::size_t k = 0; k < out_size; ++k) yd[k] = xd[k] * mask[k];
                   },
                   [&](const Sigmoid&) {
                     if (xd.empty()) return;
                     const auto& y = acts[l + 1];
                     yd.resize(out_size);
                     for (std::size_t k = 0; k < out_size; ++k) yd[k] = xd[k] * y[k] * (1.0 - y[k]);
                   },
                   [&](const MaxPool2x2&) {
                     if (xd.empty()) return;
                     yd.resize(out_size);
                     const auto& am = cache_.argmax_[l];
                     for (std::size_t k = 0; k < out_size; ++k) yd[k] = xd[am[k]];
                   },
                   [&](const Flatten&) { yd = xd; },
               },
               m.layers()[l]);
    xdot[l + 1] = std::move(yd);
  }

  // Tangent of the head gradient.
  std::vector<double> gdot = EngineAccess::head_grad_tangent(m, cache_, xdot[L]);

  std::vector<double> result(dim, 0.0);
  // R-backward.
  for (std::size_t l = L; l-- > first;) {
    const std::vector<double>& gy = out_grads_[l + 1];
    const std::vector<double>& x = acts[l];
    const std::vector<double>& xd = xdot[l];
    // The activation target needs the tangent down to the site output; weights
    // need it only while a weight layer remains below.
    bool need_gx = !weights || l > 0;
    std::vector<double> gxd;
    if (need_gx) gxd.assign(x.size(), 0.0);
    std::visit(overloaded{
                   [&](const Dense& d) {
                     const DenseGeom g = EngineAccess::dense_geom(d, B);
                     if (weights) {
                       std::vector<double> gw(m.params(l).weight.size(), 0.0);
                       dense_wgrad(g, gdot.data(), x.data(), gw.data());
                       if (!xd.empty()) dense_wgrad(g, gy.data(), xd.data(), gw.data());
                       const auto& pass = cache_.w_pass_[l];
                       double* dst = result.data() + m.weight_offset(l);
                       for (std::size_t k = 0; k < gw.size(); ++k) dst[k] = pass.empty() ? gw[k] : gw[k] * pass[k];
                       if (d.bias) bias_grad(B, d.out, 1, gdot.data(), result.data() + m.bias_offset(l));
                     }
                     if (need_gx) {
                       dense_igrad(g, W(l).data(), gdot.data(), gxd.data());
                       if (weights && !is_zero(wdots[l])) dense_igrad(g, wdots[l].data(), gy.data(), gxd.data());
                     }
                   },
                   [&](const Conv2d& cv) {
                     const ConvGeom g = EngineAccess::conv_geom(m, cv, l, B);
                     if (weights) {
                       std::vector<double> gw(m.params(l).weight.size(), 0.0);
                       conv_wgrad(g, gdot.data(), x.data(), gw.data());
                       if (!xd.empty()) conv_wgrad(g, gy.data(), xd.data(), gw.data());
                       const auto& pass = cache_.w_pass_[l];
                       double* dst = result.data() + m.weight_offset(l);
                       for (std::size_t k = 0; k < gw.size(); ++k) dst[k] = pass.empty() ? gw[k] : gw[k] * pass[k];
                       bias_grad(B, cv.out_channels, g.plane(), gdot.data(), result.data() + m.bias_offset(l));
                     }
                     if (need_gx) {
                       conv_igrad(g, W(l).data(), gdot.data(), gxd.data());
                       if (weights && !is_zero(wdots[l])) conv_igrad(g, wdots[l].data(), gy.data(), gxd.data());
                     }
                   },
                   [&](const Relu&) {
                     if (!need_gx) return;
                     const std::vector<double> mask = EngineAccess::relu_mask(m, l, x);
                     for (std::size_t k = 0; k < x.size(); ++k) gxd[k] = gdot[k] * mask[k];
                   },
                   [&](const Sigmoid&) {
                     if (!need_gx) return;
                     const auto& y = acts[l + 1];
                     for (std::size_t k = 0; k < x.size(); ++k) {
                       const double d1 = y[k] * (1.0 - y[k]);
                       gxd[k] = gdot[k] * d1;
                       if (!xd.empty()) gxd[k] += gy[k] * d1 * (1.0 - 2.0 * y[k]) * xd[k];
                     }
                   },
                   [&](const MaxPool2x2&) {
                     if (!need_gx) return;
                     const auto& am = cache_.argmax_[l];
                     for (std::size_t k = 0; k < gdot.size(); ++k) gxd[am[k]] += gdot[k];
                   },
                   [&](const Flatten&) {
                     if (need_gx) gxd = gdot;
                   },
               },
               m.layers()[l]);
    gdot = std::move(gxd);
  }
  if (!weights) result = std::move(gdot);
  return result;
}

std::vector<double> hvp(const Model& model, const Batch& batch, std::span<const double> v, HvpTarget target,
                        std::optional<std::size_t> site) {
  if (target == HvpTarget::kWeights) return HessianVectorProduct(model, batch).apply(v);
  require(site.has_value(), "activation HVP needs a layer site");
  return HessianVectorProduct(model, batch, *site).apply(v);
}

}  // namespace cwhawq
