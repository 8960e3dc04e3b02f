#include "ion/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "ion/simd/kernels.hpp"

namespace ion::ops {
namespace {

template <typename T>
bool tracking(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (!x.defined() || x.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected a rank-" + std::to_string(rank) +
                                " tensor, got " + (x.defined() ? shape_str(x.shape()) : "undefined"));
}

struct Dims4 {
  std::size_t b, c, h, w;
};

template <typename T>
Dims4 dims4(const Tensor<T>& x) {
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// ---- conv2d ---------------------------------------------------------------

// Output columns [lo, hi) read an in-bounds input column for kernel offset kx.
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t w, std::size_t wo, std::size_t kx,
                                                      std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  while (lo < wo && lo * stride + kx < pad) ++lo;
  std::size_t hi = lo;
  while (hi < wo && hi * stride + kx < pad + w) ++hi;
  return {lo, hi};
}

template <typename T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_cols(w, wo, kx, stride, pad);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          std::fill(dst, dst + lo, T(0));
          if (lo < hi) {
            const std::size_t first = lo * stride + kx - pad;
            if (stride == 1) {
              std::copy(src + first, src + first + (hi - lo), dst + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + kx - pad];
            }
          }
          std::fill(dst + hi, dst + wo, T(0));
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_cols(w, wo, kx, stride, pad);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          if (lo >= hi) continue;
          if (stride == 1) {
            T* d = dst + (lo + kx - pad);
            for (std::size_t ox = lo; ox < hi; ++ox) d[ox - lo] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + kx - pad] += src[ox];
          }
        }
      }
}

// Uninitialised scratch storage reused across calls on the same thread.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<std::unique_ptr<T[]>> bufs;
  thread_local std::vector<std::size_t> sizes;
  if (bufs.size() <= slot) {
    bufs.resize(slot + 1);
    sizes.resize(slot + 1, 0);
  }
  if (sizes[slot] < n) {
    bufs[slot].reset(new T[n]);
    sizes[slot] = n;
  }
  return bufs[slot].get();
}

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                         const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < k || (padded - k) % stride != 0)
    throw std::invalid_argument(std::string("conv2d: ") + axis + " = " + std::to_string(in) +
                                " with kernel " + std::to_string(k) + ", pad " +
                                std::to_string(pad) + ", stride " + std::to_string(stride) +
                                " gives a non-integral output size");
  return (padded - k) / stride + 1;
}

// ---- bicubic --------------------------------------------------------------

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

// Taps for every output sample of a 2x upsampling of a length-n axis.
std::vector<Taps> upsample_taps(std::size_t n) {
  std::vector<Taps> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int j = 0; j < 4; ++j) {
      const auto idx = static_cast<std::ptrdiff_t>(base) + j - 1;
      taps[o].index[j] = static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(n) - 1));
      taps[o].weight[j] = cubic_weight(t - static_cast<double>(j - 1));
    }
  }
  return taps;
}

template <typename T>
T log_sum_exp_row(const T* z, std::size_t k, std::size_t stride, T& max_out) {
  T m = z[0];
  for (std::size_t c = 1; c < k; ++c) m = std::max(m, z[c * stride]);
  T s = 0;
  for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * stride] - m);
  max_out = m;
  return m + std::log(s);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  const auto [nb, cin, h, w] = dims4(x);
  const std::size_t cout = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw std::invalid_argument("conv2d: input channels Cin = " + std::to_string(cin) +
                                " but weight expects " + std::to_string(weight.dim(1)));
  if (weight.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(cout) + ")");
  const std::size_t ho = conv_out_dim(h, k, stride, pad, "H");
  const std::size_t wo = conv_out_dim(w, k, stride, pad, "W");
  const std::size_t ckk = cin * k * k;
  const std::size_t plane = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> out(Shape{nb, cout, ho, wo});
  T* col = direct ? nullptr : scratch<T>(0, ckk * plane);
  for (std::size_t b = 0; b < nb; ++b) {
    const T* xb = x.ptr() + b * cin * h * w;
    T* ob = out.ptr() + b * cout * plane;
    if (bias.defined())
      for (std::size_t co = 0; co < cout; ++co)
        std::fill(ob + co * plane, ob + (co + 1) * plane, bias.ptr()[co]);
    const T* cols = xb;
    if (!direct) {
      im2col(xb, cin, h, w, k, stride, pad, ho, wo, col);
      cols = col;
    }
    simd::gemm_nn(cout, plane, ckk, weight.ptr(), ckk, cols, plane, ob, plane);
  }

  if (tracking(tape, {&x, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("conv2d", {x, weight, bias}, out,
                 [x, weight, bias, out, stride, pad, k, ho, wo, direct]() mutable {
                   const auto [nb, cin, h, w] = dims4(x);
                   const std::size_t cout = weight.dim(0);
                   const std::size_t ckk = cin * k * k;
                   const std::size_t plane = ho * wo;
                   const T* gout = out.grad().data();
                   T* col = direct ? nullptr : scratch<T>(0, ckk * plane);
                   T* dcol = direct ? nullptr : scratch<T>(1, ckk * plane);
                   for (std::size_t b = 0; b < nb; ++b) {
                     const T* gb = gout + b * cout * plane;
                     if (bias.defined() && bias.requires_grad()) {
                       T* gbias = bias.grad().data();
                       for (std::size_t co = 0; co < cout; ++co) {
                         T s = 0;
                         for (std::size_t i = 0; i < plane; ++i) s += gb[co * plane + i];
                         gbias[co] += s;
                       }
                     }
                     const T* xb = x.ptr() + b * cin * h * w;
                     if (weight.requires_grad()) {
                       const T* cols = xb;
                       if (!direct) {
                         im2col(xb, cin, h, w, k, stride, pad, ho, wo, col);
                         cols = col;
                       }
                       simd::gemm_nt(cout, ckk, plane, gb, plane, cols, plane, weight.grad().data(),
                                     ckk);
                     }
                     if (x.requires_grad()) {
                       T* gx = x.grad().data() + b * cin * h * w;
                       if (direct) {
                         simd::gemm_tn(cin, plane, cout, weight.ptr(), ckk, gb, plane, gx, plane);
                       } else {
                         std::fill(dcol, dcol + ckk * plane, T(0));
                         simd::gemm_tn(ckk, plane, cout, weight.ptr(), ckk, gb, plane, dcol, plane);
                         col2im_add(dcol, cin, h, w, k, stride, pad, ho, wo, gx);
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& stats, BatchNormOptions options) {
  require_rank(x, 4, "batchnorm2d");
  const auto [nb, c, h, w] = dims4(x);
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c)
    throw std::invalid_argument("batchnorm2d: parameters sized for " +
                                std::to_string(gamma.numel()) + " channels, input has C = " +
                                std::to_string(c));
  if (!options.train && stats.updates == 0)
    throw std::logic_error("batchnorm2d: eval mode with uninitialised statistics");
  const std::size_t plane = h * w;
  const std::size_t count = nb * plane;
  std::vector<T> mean(c), invstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (options.train) {
      double s = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* p = x.ptr() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* p = x.ptr() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      const double m = options.momentum;
      stats.running_mean.ptr()[ch] =
          static_cast<T>((1 - m) * stats.running_mean.ptr()[ch] + m * mu);
      stats.running_var.ptr()[ch] =
          static_cast<T>((1 - m) * stats.running_var.ptr()[ch] + m * unbiased);
    } else {
      mean[ch] = stats.running_mean.ptr()[ch];
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(stats.running_var.ptr()[ch] + options.eps));
    }
  }
  if (options.train) ++stats.updates;

  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = x.ptr() + (b * c + ch) * plane;
      T* q = out.ptr() + (b * c + ch) * plane;
      T* xh = xhat.ptr() + (b * c + ch) * plane;
      const T g = gamma.ptr()[ch], bt = beta.ptr()[ch], mu = mean[ch], is = invstd[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        q[i] = g * xh[i] + bt;
      }
    }

  if (tracking(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    const bool train = options.train;
    tape->record("batchnorm2d", {x, gamma, beta}, out,
                 [x, gamma, beta, out, xhat, invstd, train]() mutable {
                   const auto [nb, c, h, w] = dims4(x);
                   const std::size_t plane = h * w;
                   const auto count = static_cast<T>(nb * plane);
                   const T* gy = out.grad().data();
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     T sum_dy = 0, sum_dy_xhat = 0;
                     for (std::size_t b = 0; b < nb; ++b) {
                       const std::size_t off = (b * c + ch) * plane;
                       for (std::size_t i = 0; i < plane; ++i) {
                         sum_dy += gy[off + i];
                         sum_dy_xhat += gy[off + i] * xhat.ptr()[off + i];
                       }
                     }
                     if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
                     if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
                     if (!x.requires_grad()) continue;
                     const T g = gamma.ptr()[ch];
                     const T is = invstd[ch];
                     T* gx = x.grad().data();
                     for (std::size_t b = 0; b < nb; ++b) {
                       const std::size_t off = (b * c + ch) * plane;
                       for (std::size_t i = 0; i < plane; ++i) {
                         if (train) {
                           gx[off + i] += g * is / count *
                                          (count * gy[off + i] - sum_dy -
                                           xhat.ptr()[off + i] * sum_dy_xhat);
                         } else {
                           gx[off + i] += g * is * gy[off + i];
                         }
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, const Tensor<T>& x, T slope) {
  if (!(slope > T(0) && slope < T(1)))
    throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  Tensor<T> out(x.shape());
  const T* p = x.ptr();
  T* q = out.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) q[i] = p[i] > T(0) ? p[i] : slope * p[i];
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("leaky_relu", {x}, out, [x, out, slope]() mutable {
      const T* p = x.ptr();
      const T* gy = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += p[i] > T(0) ? gy[i] : slope * gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x, 4, "maxpool2d");
  const auto [nb, c, h, w] = dims4(x);
  if (h % 2 || w % 2)
    throw std::invalid_argument("maxpool2d: spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{nb, c, ho, wo});
  std::vector<std::uint32_t> arg(out.numel());
  for (std::size_t bc = 0; bc < nb * c; ++bc) {
    const T* p = x.ptr() + bc * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (p[idx] > p[best]) best = idx;
          }
        const std::size_t o = bc * ho * wo + oy * wo + ox;
        out.ptr()[o] = p[best];
        arg[o] = static_cast<std::uint32_t>(bc * h * w + best);
      }
  }
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("maxpool2d", {x}, out, [x, out, arg = std::move(arg)]() mutable {
      const T* gy = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += gy[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> avgpool2d(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x, 4, "avgpool2d");
  const auto [nb, c, h, w] = dims4(x);
  if (h % 2 || w % 2)
    throw std::invalid_argument("avgpool2d: spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{nb, c, ho, wo});
  for (std::size_t bc = 0; bc < nb * c; ++bc) {
    const T* p = x.ptr() + bc * h * w;
    T* q = out.ptr() + bc * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        q[oy * wo + ox] = T(0.25) * (p[2 * oy * w + 2 * ox] + p[2 * oy * w + 2 * ox + 1] +
                                     p[(2 * oy + 1) * w + 2 * ox] + p[(2 * oy + 1) * w + 2 * ox + 1]);
  }
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("avgpool2d", {x}, out, [x, out]() mutable {
      const auto [nb, c, h, w] = dims4(x);
      const std::size_t ho = h / 2, wo = w / 2;
      const T* gy = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t bc = 0; bc < nb * c; ++bc)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            gx[bc * h * w + y * w + xx] += T(0.25) * gy[bc * ho * wo + (y / 2) * wo + xx / 2];
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bicubic(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x, 4, "upsample_bicubic");
  const auto [nb, c, h, w] = dims4(x);
  const auto taps_w = upsample_taps(w);
  const auto taps_h = upsample_taps(h);
  const std::size_t w2 = 2 * w, h2 = 2 * h;
  // Horizontal pass into (h, 2w), then vertical pass into (2h, 2w).
  std::vector<T> mid(nb * c * h * w2);
  for (std::size_t bc = 0; bc < nb * c; ++bc)
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = x.ptr() + (bc * h + y) * w;
      T* dst = mid.data() + (bc * h + y) * w2;
      for (std::size_t o = 0; o < w2; ++o) {
        double s = 0;
        for (int j = 0; j < 4; ++j) s += taps_w[o].weight[j] * src[taps_w[o].index[j]];
        dst[o] = static_cast<T>(s);
      }
    }
  Tensor<T> out(Shape{nb, c, h2, w2});
  for (std::size_t bc = 0; bc < nb * c; ++bc)
    for (std::size_t o = 0; o < h2; ++o) {
      T* dst = out.ptr() + (bc * h2 + o) * w2;
      std::fill(dst, dst + w2, T(0));
      for (int j = 0; j < 4; ++j) {
        const T* src = mid.data() + (bc * h + taps_h[o].index[j]) * w2;
        simd::axpy(w2, static_cast<T>(taps_h[o].weight[j]), src, dst);
      }
    }
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("upsample_bicubic", {x}, out, [x, out, taps_w, taps_h]() mutable {
      const auto [nb, c, h, w] = dims4(x);
      const std::size_t w2 = 2 * w, h2 = 2 * h;
      const T* gy = out.grad().data();
      std::vector<T> gmid(nb * c * h * w2, T(0));
      for (std::size_t bc = 0; bc < nb * c; ++bc)
        for (std::size_t o = 0; o < h2; ++o) {
          const T* src = gy + (bc * h2 + o) * w2;
          for (int j = 0; j < 4; ++j)
            simd::axpy(w2, static_cast<T>(taps_h[o].weight[j]), src,
                       gmid.data() + (bc * h + taps_h[o].index[j]) * w2);
        }
      T* gx = x.grad().data();
      for (std::size_t bc = 0; bc < nb * c; ++bc)
        for (std::size_t y = 0; y < h; ++y) {
          const T* src = gmid.data() + (bc * h + y) * w2;
          T* dst = gx + (bc * h + y) * w;
          for (std::size_t o = 0; o < w2; ++o)
            for (int j = 0; j < 4; ++j)
              dst[taps_w[o].index[j]] += static_cast<T>(taps_w[o].weight[j]) * src[o];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto da = dims4(a), db = dims4(b);
  if (da.b != db.b || da.h != db.h || da.w != db.w)
    throw std::invalid_argument("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const std::size_t plane = da.h * da.w;
  const std::size_t ca = da.c * plane, cb = db.c * plane;
  Tensor<T> out(Shape{da.b, da.c + db.c, da.h, da.w});
  for (std::size_t n = 0; n < da.b; ++n) {
    std::copy_n(a.ptr() + n * ca, ca, out.ptr() + n * (ca + cb));
    std::copy_n(b.ptr() + n * cb, cb, out.ptr() + n * (ca + cb) + ca);
  }
  if (tracking(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record("concat_channels", {a, b}, out, [a, b, out, ca, cb]() mutable {
      const T* gy = out.grad().data();
      const std::size_t nb = a.dim(0);
      for (std::size_t n = 0; n < nb; ++n) {
        if (a.requires_grad()) {
          T* ga = a.grad().data() + n * ca;
          const T* src = gy + n * (ca + cb);
          for (std::size_t i = 0; i < ca; ++i) ga[i] += src[i];
        }
        if (b.requires_grad()) {
          T* gb = b.grad().data() + n * cb;
          const T* src = gy + n * (ca + cb) + ca;
          for (std::size_t i = 0; i < cb; ++i) gb[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const auto d = dims4(x);
  if (count == 0 || begin + count > d.c)
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside C = " +
                                std::to_string(d.c));
  const std::size_t plane = d.h * d.w;
  Tensor<T> out(Shape{d.b, count, d.h, d.w});
  for (std::size_t n = 0; n < d.b; ++n)
    std::copy_n(x.ptr() + (n * d.c + begin) * plane, count * plane,
                out.ptr() + n * count * plane);
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("slice_channels", {x}, out, [x, out, begin, count, d, plane]() mutable {
      const T* gy = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t n = 0; n < d.b; ++n) {
        T* dst = gx + (n * d.c + begin) * plane;
        const T* src = gy + n * count * plane;
        for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = std::tanh(x.ptr()[i]);
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("tanh", {x}, out, [x, out]() mutable {
      const T* y = out.ptr();
      const T* gy = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (tracking(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record("add", {a, b}, out, [a, b, out]() mutable {
      const T* gy = out.grad().data();
      if (a.requires_grad())
        for (std::size_t i = 0; i < a.numel(); ++i) a.grad()[i] += gy[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < b.numel(); ++i) b.grad()[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (tracking(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record("mul", {a, b}, out, [a, b, out]() mutable {
      const T* gy = out.grad().data();
      if (a.requires_grad())
        for (std::size_t i = 0; i < a.numel(); ++i) a.grad()[i] += gy[i] * b.ptr()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < b.numel(); ++i) b.grad()[i] += gy[i] * a.ptr()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = scale * x.ptr()[i] + shift;
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("affine", {x}, out, [x, out, scale]() mutable {
      const T* gy = out.grad().data();
      for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += scale * gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("sum", {x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : x.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const auto d = dims4(x);
  const std::size_t plane = d.h * d.w;
  Tensor<T> out(Shape{d.b, d.c});
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += x.ptr()[bc * plane + i];
    out.ptr()[bc] = static_cast<T>(s / static_cast<double>(plane));
  }
  if (tracking(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record("global_avg_pool", {x}, out, [x, out, d, plane]() mutable {
      const T inv = T(1) / static_cast<T>(plane);
      for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
        const T g = out.grad()[bc] * inv;
        T* gx = x.grad().data() + bc * plane;
        for (std::size_t i = 0; i < plane; ++i) gx[i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t nb = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in)
    throw std::invalid_argument("linear: input features " + std::to_string(in) +
                                " but weight expects " + std::to_string(weight.dim(1)));
  if (bias.defined() && bias.numel() != outf)
    throw std::invalid_argument("linear: bias must have " + std::to_string(outf) + " entries");
  Tensor<T> out(Shape{nb, outf});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t o = 0; o < outf; ++o)
      out.ptr()[b * outf + o] = (bias.defined() ? bias.ptr()[o] : T(0)) +
                                simd::dot(in, x.ptr() + b * in, weight.ptr() + o * in);
  if (tracking(tape, {&x, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("linear", {x, weight, bias}, out, [x, weight, bias, out, nb, in, outf]() mutable {
      const T* gy = out.grad().data();
      if (bias.defined() && bias.requires_grad())
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t o = 0; o < outf; ++o) bias.grad()[o] += gy[b * outf + o];
      if (weight.requires_grad())
        simd::gemm_tn(outf, in, nb, gy, outf, x.ptr(), in, weight.grad().data(), in);
      if (x.requires_grad())
        simd::gemm_nn(nb, in, outf, gy, outf, weight.ptr(), in, x.grad().data(), in);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                std::span<const std::int32_t> targets,
                                std::optional<std::int32_t> ignore_id) {
  if (logits.rank() != 2 && logits.rank() != 4)
    throw std::invalid_argument("softmax_cross_entropy: logits must be (B,K) or (B,K,H,W), got " +
                                shape_str(logits.shape()));
  const std::size_t nb = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  if (targets.size() != nb * plane)
    throw std::invalid_argument("softmax_cross_entropy: expected " + std::to_string(nb * plane) +
                                " targets, got " + std::to_string(targets.size()));
  std::size_t counted = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::int32_t t = targets[i];
    if (ignore_id && t == *ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw std::invalid_argument("softmax_cross_entropy: target " + std::to_string(t) +
                                  " at position " + std::to_string(i) + " outside [0, " +
                                  std::to_string(k) + ")");
    ++counted;
  }
  double total = 0;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t t = targets[b * plane + p];
      if (ignore_id && t == *ignore_id) continue;
      const T* z = logits.ptr() + b * k * plane + p;
      T m;
      const T lse = log_sum_exp_row(z, k, plane, m);
      total += static_cast<double>(lse - z[static_cast<std::size_t>(t) * plane]);
    }
  Tensor<T> out = Tensor<T>::scalar(counted ? static_cast<T>(total / static_cast<double>(counted)) : T(0));
  if (counted && tracking(tape, {&logits})) {
    out.set_requires_grad(true);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    tape->record("softmax_cross_entropy", {logits}, out,
                 [logits, out, tgt = std::move(tgt), ignore_id, nb, k, plane, counted]() mutable {
                   const T scale = out.grad()[0] / static_cast<T>(counted);
                   T* gz = logits.grad().data();
                   for (std::size_t b = 0; b < nb; ++b)
                     for (std::size_t p = 0; p < plane; ++p) {
                       const std::int32_t t = tgt[b * plane + p];
                       if (ignore_id && t == *ignore_id) continue;
                       const T* z = logits.ptr() + b * k * plane + p;
                       T m;
                       const T lse = log_sum_exp_row(z, k, plane, m);
                       T* g = gz + b * k * plane + p;
                       for (std::size_t c = 0; c < k; ++c) {
                         const T prob = std::exp(z[c * plane] - lse);
                         g[c * plane] += scale * (prob - (static_cast<std::int32_t>(c) == t ? T(1) : T(0)));
                       }
                     }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.ptr()[i] - b.ptr()[i]);
  const auto n = static_cast<double>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / n));
  if (tracking(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record("l1_loss", {a, b}, out, [a, b, out]() mutable {
      const T scale = out.grad()[0] / static_cast<T>(a.numel());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const T diff = a.ptr()[i] - b.ptr()[i];
        const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        if (a.requires_grad()) a.grad()[i] += scale * sgn;
        if (b.requires_grad()) b.grad()[i] -= scale * sgn;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(Tape<T>* tape, const Tensor<T>& logits, T label) {
  if (label != T(0) && label != T(1))
    throw std::invalid_argument("bce_with_logits: label must be 0 or 1");
  double s = 0;
  for (T z : logits.data()) {
    // max(z,0) - z*label + log(1 + exp(-|z|))
    s += std::max(z, T(0)) - z * label + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(logits.numel())));
  if (tracking(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record("bce_with_logits", {logits}, out, [logits, out, label]() mutable {
      const T scale = out.grad()[0] / static_cast<T>(logits.numel());
      for (std::size_t i = 0; i < logits.numel(); ++i) {
        const T z = logits.ptr()[i];
        const T sig = T(1) / (T(1) + std::exp(-z));
        logits.grad()[i] += scale * (sig - label);
      }
    });
  }
  return out;
}

template <typename T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& logits) {
  if (logits.rank() != 2 && logits.rank() != 4)
    throw std::invalid_argument("argmax_channels: expected (B,K) or (B,K,H,W), got " +
                                shape_str(logits.shape()));
  const std::size_t nb = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  std::vector<std::int32_t> ids(nb * plane);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const T* z = logits.ptr() + b * k * plane + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (z[c * plane] > z[best * plane]) best = c;
      ids[b * plane + p] = static_cast<std::int32_t>(best);
    }
  return ids;
}

#define ION_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> conv2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                            std::size_t, std::size_t);                                           \
  template Tensor<T> batchnorm2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                 BatchNormStats<T>&, BatchNormOptions);                          \
  template Tensor<T> leaky_relu(Tape<T>*, const Tensor<T>&, T);                                   \
  template Tensor<T> maxpool2d(Tape<T>*, const Tensor<T>&);                                       \
  template Tensor<T> avgpool2d(Tape<T>*, const Tensor<T>&);                                       \
  template Tensor<T> upsample_bicubic(Tape<T>*, const Tensor<T>&);                                \
  template Tensor<T> concat_channels(Tape<T>*, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> slice_channels(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);        \
  template Tensor<T> tanh(Tape<T>*, const Tensor<T>&);                                            \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> affine(Tape<T>*, const Tensor<T>&, T, T);                                    \
  template Tensor<T> sum(Tape<T>*, const Tensor<T>&);                                             \
  template Tensor<T> global_avg_pool(Tape<T>*, const Tensor<T>&);                                 \
  template Tensor<T> linear(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> softmax_cross_entropy(Tape<T>*, const Tensor<T>&,                            \
                                           std::span<const std::int32_t>,                         \
                                           std::optional<std::int32_t>);                          \
  template Tensor<T> l1_loss(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> bce_with_logits(Tape<T>*, const Tensor<T>&, T);                              \
  template std::vector<std::int32_t> argmax_channels(const Tensor<T>&);

ION_INSTANTIATE_OPS(float)
ION_INSTANTIATE_OPS(double)
#undef ION_INSTANTIATE_OPS

}  // namespace ion::ops
