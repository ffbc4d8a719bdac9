#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "telkit/tensor.hpp"

namespace telkit {

// All kernels accumulate in double and store in S. Convolutions are
// cross-correlations with zero "same" padding and odd kernel extents.

// ---------------------------------------------------------------------------
// 2D convolution: x [H,W,Cin], w [kH,kW,Cin,Cout], b [Cout] -> [H,W,Cout]

template <class S>
BasicTensor<S> conv2d(const BasicTensor<S>& x, const BasicTensor<S>& w,
                      const BasicTensor<S>& b) {
  require(x.rank() == 3 && w.rank() == 4, "conv2d: expects x[H,W,C], w[kH,kW,Cin,Cout]");
  const std::ptrdiff_t H = x.dim(0), W = x.dim(1);
  const std::size_t Cin = x.dim(2), Cout = w.dim(3);
  const std::ptrdiff_t kH = w.dim(0), kW = w.dim(1);
  require(w.dim(2) == Cin, "conv2d: input channels " + std::to_string(Cin) +
                               " do not match kernel " + to_string(w.shape()));
  require(kH % 2 == 1 && kW % 2 == 1, "conv2d: kernel extents must be odd");
  require(b.size() == Cout, "conv2d: bias size mismatch");
  BasicTensor<S> y({x.dim(0), x.dim(1), Cout});
  std::vector<double> acc(Cout);
  for (std::ptrdiff_t i = 0; i < H; ++i) {
    for (std::ptrdiff_t j = 0; j < W; ++j) {
      for (std::size_t co = 0; co < Cout; ++co) acc[co] = b[co];
      for (std::ptrdiff_t di = 0; di < kH; ++di) {
        const std::ptrdiff_t ii = i + di - kH / 2;
        if (ii < 0 || ii >= H) continue;
        for (std::ptrdiff_t dj = 0; dj < kW; ++dj) {
          const std::ptrdiff_t jj = j + dj - kW / 2;
          if (jj < 0 || jj >= W) continue;
          const S* xr = x.data() + (ii * W + jj) * Cin;
          const S* wt = w.data() + (di * kW + dj) * Cin * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double xv = xr[ci];
            const S* wr = wt + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) acc[co] += xv * wr[co];
          }
        }
      }
      S* yr = y.data() + (i * W + j) * Cout;
      for (std::size_t co = 0; co < Cout; ++co) yr[co] = static_cast<S>(acc[co]);
    }
  }
  return y;
}

/// Accumulates into dw and db; overwrites *dx when given.
template <class S>
void conv2d_backward(const BasicTensor<S>& x, const BasicTensor<S>& w,
                     const BasicTensor<S>& dy, BasicTensor<S>* dx,
                     BasicTensor<S>& dw, BasicTensor<S>& db) {
  const std::ptrdiff_t H = x.dim(0), W = x.dim(1);
  const std::size_t Cin = x.dim(2), Cout = w.dim(3);
  const std::ptrdiff_t kH = w.dim(0), kW = w.dim(1);
  require(dy.shape() == Shape({x.dim(0), x.dim(1), Cout}),
          "conv2d_backward: gradient shape mismatch");
  std::vector<double> dwacc(w.size(), 0.0), dbacc(Cout, 0.0);
  std::vector<double> dxacc(dx ? x.size() : 0, 0.0);
  for (std::ptrdiff_t i = 0; i < H; ++i) {
    for (std::ptrdiff_t j = 0; j < W; ++j) {
      const S* g = dy.data() + (i * W + j) * Cout;
      for (std::size_t co = 0; co < Cout; ++co) dbacc[co] += g[co];
      for (std::ptrdiff_t di = 0; di < kH; ++di) {
        const std::ptrdiff_t ii = i + di - kH / 2;
        if (ii < 0 || ii >= H) continue;
        for (std::ptrdiff_t dj = 0; dj < kW; ++dj) {
          const std::ptrdiff_t jj = j + dj - kW / 2;
          if (jj < 0 || jj >= W) continue;
          const std::size_t q = static_cast<std::size_t>(ii * W + jj) * Cin;
          const std::size_t tap = static_cast<std::size_t>(di * kW + dj);
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double xv = x[q + ci];
            const S* wr = w.data() + (tap * Cin + ci) * Cout;
            double* dwr = dwacc.data() + (tap * Cin + ci) * Cout;
            double s = 0.0;
            for (std::size_t co = 0; co < Cout; ++co) {
              dwr[co] += xv * g[co];
              s += double{wr[co]} * g[co];
            }
            if (dx) dxacc[q + ci] += s;
          }
        }
      }
    }
  }
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += static_cast<S>(dwacc[k]);
  for (std::size_t k = 0; k < Cout; ++k) db[k] += static_cast<S>(dbacc[k]);
  if (dx) {
    *dx = BasicTensor<S>(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) (*dx)[k] = static_cast<S>(dxacc[k]);
  }
}

// ---------------------------------------------------------------------------
// 1D convolution with dilation: x [T,Cin], w [k,Cin,Cout] -> [T,Cout].
// Tap j reads x[t + (j - k/2) * dilation].

template <class S>
BasicTensor<S> conv1d(const BasicTensor<S>& x, const BasicTensor<S>& w,
                      const BasicTensor<S>& b, std::size_t dilation = 1) {
  require(x.rank() == 2 && w.rank() == 3, "conv1d: expects x[T,C], w[k,Cin,Cout]");
  const std::ptrdiff_t T = x.dim(0), K = w.dim(0);
  const std::size_t Cin = x.dim(1), Cout = w.dim(2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  require(w.dim(1) == Cin, "conv1d: input channels do not match kernel");
  require(K % 2 == 1, "conv1d: kernel extent must be odd");
  require(b.size() == Cout, "conv1d: bias size mismatch");
  BasicTensor<S> y({x.dim(0), Cout});
  std::vector<double> acc(Cout);
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    for (std::size_t co = 0; co < Cout; ++co) acc[co] = b[co];
    for (std::ptrdiff_t j = 0; j < K; ++j) {
      const std::ptrdiff_t tt = t + (j - K / 2) * d;
      if (tt < 0 || tt >= T) continue;
      const S* xr = x.data() + tt * Cin;
      const S* wt = w.data() + j * Cin * Cout;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double xv = xr[ci];
        const S* wr = wt + ci * Cout;
        for (std::size_t co = 0; co < Cout; ++co) acc[co] += xv * wr[co];
      }
    }
    S* yr = y.data() + t * Cout;
    for (std::size_t co = 0; co < Cout; ++co) yr[co] = static_cast<S>(acc[co]);
  }
  return y;
}

template <class S>
void conv1d_backward(const BasicTensor<S>& x, const BasicTensor<S>& w,
                     const BasicTensor<S>& dy, std::size_t dilation,
                     BasicTensor<S>* dx, BasicTensor<S>& dw,
                     BasicTensor<S>& db) {
  const std::ptrdiff_t T = x.dim(0), K = w.dim(0);
  const std::size_t Cin = x.dim(1), Cout = w.dim(2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  require(dy.shape() == Shape({x.dim(0), Cout}),
          "conv1d_backward: gradient shape mismatch");
  std::vector<double> dwacc(w.size(), 0.0), dbacc(Cout, 0.0);
  std::vector<double> dxacc(dx ? x.size() : 0, 0.0);
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    const S* g = dy.data() + t * Cout;
    for (std::size_t co = 0; co < Cout; ++co) dbacc[co] += g[co];
    for (std::ptrdiff_t j = 0; j < K; ++j) {
      const std::ptrdiff_t tt = t + (j - K / 2) * d;
      if (tt < 0 || tt >= T) continue;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double xv = x[tt * Cin + ci];
        const S* wr = w.data() + (j * Cin + ci) * Cout;
        double* dwr = dwacc.data() + (j * Cin + ci) * Cout;
        double s = 0.0;
        for (std::size_t co = 0; co < Cout; ++co) {
          dwr[co] += xv * g[co];
          s += double{wr[co]} * g[co];
        }
        if (dx) dxacc[tt * Cin + ci] += s;
      }
    }
  }
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += static_cast<S>(dwacc[k]);
  for (std::size_t k = 0; k < Cout; ++k) db[k] += static_cast<S>(dbacc[k]);
  if (dx) {
    *dx = BasicTensor<S>(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) (*dx)[k] = static_cast<S>(dxacc[k]);
  }
}

// ---------------------------------------------------------------------------
// Deformable 1D convolution. Tap j of output t samples x at the fractional
// position t + (j - k/2) * dilation + offsets[t, j] by linear interpolation;
// rows outside [0, T) read as zero.

namespace detail {

struct LerpTap {
  std::ptrdiff_t r0;
  double a;  // weight of row r0 + 1
};

inline LerpTap lerp_tap(std::ptrdiff_t t, std::ptrdiff_t j, std::ptrdiff_t K,
                        std::ptrdiff_t d, double offset) {
  const double p = static_cast<double>(t + (j - K / 2) * d) + offset;
  const double f = std::floor(p);
  return {static_cast<std::ptrdiff_t>(f), p - f};
}

template <class S>
void lerp_sample(const BasicTensor<S>& x, LerpTap tap, std::vector<double>& s) {
  const std::ptrdiff_t T = x.dim(0);
  const std::size_t C = x.dim(1);
  std::fill(s.begin(), s.end(), 0.0);
  if (tap.r0 >= 0 && tap.r0 < T) {
    const S* r = x.data() + tap.r0 * C;
    for (std::size_t c = 0; c < C; ++c) s[c] += (1.0 - tap.a) * r[c];
  }
  if (tap.r0 + 1 >= 0 && tap.r0 + 1 < T) {
    const S* r = x.data() + (tap.r0 + 1) * C;
    for (std::size_t c = 0; c < C; ++c) s[c] += tap.a * r[c];
  }
}

}  // namespace detail

template <class S>
BasicTensor<S> deform_conv1d(const BasicTensor<S>& x,
                             const BasicTensor<S>& offsets,
                             const BasicTensor<S>& w, const BasicTensor<S>& b,
                             std::size_t dilation = 1) {
  const std::ptrdiff_t T = x.dim(0), K = w.dim(0);
  const std::size_t Cin = x.dim(1), Cout = w.dim(2);
  require(w.dim(1) == Cin && K % 2 == 1 && b.size() == Cout,
          "deform_conv1d: kernel mismatch");
  require(offsets.shape() == Shape({x.dim(0), w.dim(0)}),
          "deform_conv1d: offsets must be [T,k]");
  BasicTensor<S> y({x.dim(0), Cout});
  std::vector<double> acc(Cout), s(Cin);
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    for (std::size_t co = 0; co < Cout; ++co) acc[co] = b[co];
    for (std::ptrdiff_t j = 0; j < K; ++j) {
      detail::lerp_sample(
          x, detail::lerp_tap(t, j, K, dilation, offsets(t, j)), s);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const S* wr = w.data() + (j * Cin + ci) * Cout;
        for (std::size_t co = 0; co < Cout; ++co) acc[co] += s[ci] * wr[co];
      }
    }
    for (std::size_t co = 0; co < Cout; ++co) {
      y(t, co) = static_cast<S>(acc[co]);
    }
  }
  return y;
}

/// Overwrites dx and doffsets; accumulates into dw, db.
template <class S>
void deform_conv1d_backward(const BasicTensor<S>& x,
                            const BasicTensor<S>& offsets,
                            const BasicTensor<S>& w, const BasicTensor<S>& dy,
                            std::size_t dilation, BasicTensor<S>& dx,
                            BasicTensor<S>& doffsets, BasicTensor<S>& dw,
                            BasicTensor<S>& db) {
  const std::ptrdiff_t T = x.dim(0), K = w.dim(0);
  const std::size_t Cin = x.dim(1), Cout = w.dim(2);
  std::vector<double> dwacc(w.size(), 0.0), dbacc(Cout, 0.0);
  std::vector<double> dxacc(x.size(), 0.0), doff(offsets.size(), 0.0);
  std::vector<double> s(Cin), gs(Cin);
  auto row = [&](std::ptrdiff_t r, std::size_t c) -> double {
    return (r >= 0 && r < T) ? double{x[r * Cin + c]} : 0.0;
  };
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    const S* g = dy.data() + t * Cout;
    for (std::size_t co = 0; co < Cout; ++co) dbacc[co] += g[co];
    for (std::ptrdiff_t j = 0; j < K; ++j) {
      const auto tap = detail::lerp_tap(t, j, K, dilation, offsets(t, j));
      detail::lerp_sample(x, tap, s);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const S* wr = w.data() + (j * Cin + ci) * Cout;
        double* dwr = dwacc.data() + (j * Cin + ci) * Cout;
        double acc = 0.0;
        for (std::size_t co = 0; co < Cout; ++co) {
          dwr[co] += s[ci] * g[co];
          acc += double{wr[co]} * g[co];
        }
        gs[ci] = acc;
      }
      double dp = 0.0;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        if (tap.r0 >= 0 && tap.r0 < T) {
          dxacc[tap.r0 * Cin + ci] += (1.0 - tap.a) * gs[ci];
        }
        if (tap.r0 + 1 >= 0 && tap.r0 + 1 < T) {
          dxacc[(tap.r0 + 1) * Cin + ci] += tap.a * gs[ci];
        }
        dp += gs[ci] * (row(tap.r0 + 1, ci) - row(tap.r0, ci));
      }
      doff[t * K + j] += dp;
    }
  }
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += static_cast<S>(dwacc[k]);
  for (std::size_t k = 0; k < Cout; ++k) db[k] += static_cast<S>(dbacc[k]);
  dx = BasicTensor<S>(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) dx[k] = static_cast<S>(dxacc[k]);
  doffsets = BasicTensor<S>(offsets.shape());
  for (std::size_t k = 0; k < doff.size(); ++k) {
    doffsets[k] = static_cast<S>(doff[k]);
  }
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <class S>
BasicTensor<S> relu(const BasicTensor<S>& x) {
  BasicTensor<S> y = x;
  for (auto& v : y.values()) v = v > S{0} ? v : S{0};
  return y;
}

/// Gradient through ReLU given its output `y`.
template <class S>
BasicTensor<S> relu_backward(const BasicTensor<S>& y, const BasicTensor<S>& dy) {
  BasicTensor<S> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > S{0})) dx[i] = S{0};
  }
  return dx;
}

/// Max pooling along time with window = stride = k; x [T,C] -> [T/k, C].
/// `argmax` receives the source row of every output element.
template <class S>
BasicTensor<S> maxpool1d(const BasicTensor<S>& x, std::size_t k,
                         std::vector<std::size_t>& argmax) {
  const std::size_t T = x.dim(0), C = x.dim(1), To = T / k;
  BasicTensor<S> y({To, C});
  argmax.assign(To * C, 0);
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = t * k;
      for (std::size_t r = t * k + 1; r < (t + 1) * k; ++r) {
        if (x(r, c) > x(best, c)) best = r;
      }
      y(t, c) = x(best, c);
      argmax[t * C + c] = best;
    }
  }
  return y;
}

template <class S>
BasicTensor<S> maxpool1d_backward(const Shape& input_shape,
                                  const std::vector<std::size_t>& argmax,
                                  const BasicTensor<S>& dy) {
  BasicTensor<S> dx(input_shape);
  const std::size_t C = input_shape[1];
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx[argmax[i] * C + i % C] += dy[i];
  }
  return dx;
}

/// Fully connected: x [B,N], w [N,M], b [M] -> [B,M].
template <class S>
BasicTensor<S> linear(const BasicTensor<S>& x, const BasicTensor<S>& w,
                      const BasicTensor<S>& b) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0) &&
              b.size() == w.dim(1),
          "linear: shape mismatch " + to_string(x.shape()) + " x " +
              to_string(w.shape()));
  const std::size_t B = x.dim(0), N = x.dim(1), M = w.dim(1);
  BasicTensor<S> y({B, M});
  std::vector<double> acc(M);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t m = 0; m < M; ++m) acc[m] = b[m];
    for (std::size_t n = 0; n < N; ++n) {
      const double xv = x(r, n);
      const S* wr = w.data() + n * M;
      for (std::size_t m = 0; m < M; ++m) acc[m] += xv * wr[m];
    }
    for (std::size_t m = 0; m < M; ++m) y(r, m) = static_cast<S>(acc[m]);
  }
  return y;
}

template <class S>
void linear_backward(const BasicTensor<S>& x, const BasicTensor<S>& w,
                     const BasicTensor<S>& dy, BasicTensor<S>* dx,
                     BasicTensor<S>& dw, BasicTensor<S>& db) {
  const std::size_t B = x.dim(0), N = x.dim(1), M = w.dim(1);
  std::vector<double> dwacc(w.size(), 0.0), dbacc(M, 0.0);
  if (dx) *dx = BasicTensor<S>(x.shape());
  for (std::size_t r = 0; r < B; ++r) {
    const S* g = dy.data() + r * M;
    for (std::size_t m = 0; m < M; ++m) dbacc[m] += g[m];
    for (std::size_t n = 0; n < N; ++n) {
      const double xv = x(r, n);
      const S* wr = w.data() + n * M;
      double* dwr = dwacc.data() + n * M;
      double s = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        dwr[m] += xv * g[m];
        s += double{wr[m]} * g[m];
      }
      if (dx) (*dx)(r, n) = static_cast<S>(s);
    }
  }
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += static_cast<S>(dwacc[k]);
  for (std::size_t k = 0; k < M; ++k) db[k] += static_cast<S>(dbacc[k]);
}

// ---------------------------------------------------------------------------
// Temporal RoI pooling

/// Row range [first, last) pooled by one bin spanning [lo, hi) in snippet
/// coordinates. Bins that cover no snippet fall back to the nearest one.
inline std::pair<std::size_t, std::size_t> roi_bin_rows(double lo, double hi,
                                                        std::size_t T) {
  const double t = static_cast<double>(T);
  const double f = std::clamp(std::floor(lo), 0.0, t);
  const double l = std::clamp(std::ceil(hi), 0.0, t);
  if (l > f) return {static_cast<std::size_t>(f), static_cast<std::size_t>(l)};
  const double mid = std::clamp(std::floor(0.5 * (lo + hi)), 0.0, t - 1.0);
  const auto r = static_cast<std::size_t>(mid);
  return {r, r + 1};
}

/// Max-pools `feature` [T,C] over `bins` equal sub-ranges of [lo, hi]
/// (snippet coordinates) -> [bins, C]. `argmax` receives source rows.
template <class S>
BasicTensor<S> roi_pool_1d(const BasicTensor<S>& feature, double lo, double hi,
                           std::size_t bins, std::vector<std::size_t>& argmax) {
  require(feature.rank() == 2 && feature.dim(0) >= 1, "roi_pool_1d: expects [T,C]");
  require(bins >= 1, "roi_pool_1d: bins must be >= 1");
  if (!(lo <= hi)) throw std::invalid_argument("roi_pool_1d: inverted interval");
  const std::size_t T = feature.dim(0), C = feature.dim(1);
  BasicTensor<S> y({bins, C});
  argmax.assign(bins * C, 0);
  const double step = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double blo = lo + step * static_cast<double>(b);
    const double bhi = b + 1 == bins ? hi : lo + step * static_cast<double>(b + 1);
    const auto [first, last] = roi_bin_rows(blo, bhi, T);
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = first;
      for (std::size_t r = first + 1; r < last; ++r) {
        if (feature(r, c) > feature(best, c)) best = r;
      }
      y(b, c) = feature(best, c);
      argmax[b * C + c] = best;
    }
  }
  return y;
}

/// Scatter-adds `dy` [bins,C] into `dfeature` at the recorded argmax rows.
template <class S>
void roi_pool_1d_backward(const std::vector<std::size_t>& argmax,
                          const BasicTensor<S>& dy, BasicTensor<S>& dfeature) {
  const std::size_t C = dfeature.dim(1);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dfeature[argmax[i] * C + i % C] += dy[i];
  }
}

// ---------------------------------------------------------------------------
// Layer objects: own their parameters and cache what backward needs.

template <class S>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout)
      : weight({kh, kw, cin, cout}), bias({cout}) {}

  BasicTensor<S> forward(const BasicTensor<S>& x) {
    input_ = x;
    return conv2d(x, weight.value, bias.value);
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy) {
    BasicTensor<S> dx;
    conv2d_backward(input_, weight.value, dy, &dx, weight.grad, bias.grad);
    return dx;
  }
  void init(std::mt19937_64& rng) {
    const auto& s = weight.value.shape();
    he_uniform(weight.value, s[0] * s[1] * s[2], rng);
    bias.value.zero();
  }
  void collect(ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Param<S> weight, bias;

 private:
  BasicTensor<S> input_;
};

template <class S>
class Conv1dLayer {
 public:
  Conv1dLayer() = default;
  Conv1dLayer(std::size_t k, std::size_t cin, std::size_t cout,
              std::size_t dilation = 1)
      : weight({k, cin, cout}), bias({cout}), dilation_(dilation) {}

  BasicTensor<S> forward(const BasicTensor<S>& x) {
    input_ = x;
    return conv1d(x, weight.value, bias.value, dilation_);
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy, bool need_dx = true) {
    BasicTensor<S> dx;
    conv1d_backward(input_, weight.value, dy, dilation_, need_dx ? &dx : nullptr,
                    weight.grad, bias.grad);
    return dx;
  }
  void init(std::mt19937_64& rng) {
    const auto& s = weight.value.shape();
    he_uniform(weight.value, s[0] * s[1], rng);
    bias.value.zero();
  }
  void collect(ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
  std::size_t dilation() const { return dilation_; }

  Param<S> weight, bias;

 private:
  std::size_t dilation_ = 1;
  BasicTensor<S> input_;
};

/// Deformable 1D convolution whose per-position tap offsets come from a
/// plain conv1d over the same input; the offset branch starts at zero, so a
/// fresh layer behaves like a dilated conv1d.
template <class S>
class DeformConv1dLayer {
 public:
  DeformConv1dLayer() = default;
  DeformConv1dLayer(std::size_t k, std::size_t cin, std::size_t cout,
                    std::size_t dilation = 1)
      : offset_conv(k, cin, k, dilation),
        weight({k, cin, cout}),
        bias({cout}),
        dilation_(dilation) {}

  BasicTensor<S> forward(const BasicTensor<S>& x) {
    input_ = x;
    offsets_ = offset_conv.forward(x);
    return deform_conv1d(x, offsets_, weight.value, bias.value, dilation_);
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy) {
    BasicTensor<S> dx, doff;
    deform_conv1d_backward(input_, offsets_, weight.value, dy, dilation_, dx,
                           doff, weight.grad, bias.grad);
    auto dx_off = offset_conv.backward(doff);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_off[i];
    return dx;
  }
  void init(std::mt19937_64& rng) {
    offset_conv.weight.value.zero();
    offset_conv.bias.value.zero();
    const auto& s = weight.value.shape();
    he_uniform(weight.value, s[0] * s[1], rng);
    bias.value.zero();
  }
  void collect(ParamList<S>& out, const std::string& prefix) {
    offset_conv.collect(out, prefix + ".offset");
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Conv1dLayer<S> offset_conv;
  Param<S> weight, bias;

 private:
  std::size_t dilation_ = 1;
  BasicTensor<S> input_, offsets_;
};

template <class S>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out) : weight({in, out}), bias({out}) {}

  BasicTensor<S> forward(const BasicTensor<S>& x) {
    input_ = x;
    return linear(x, weight.value, bias.value);
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy, bool need_dx = true) {
    BasicTensor<S> dx;
    linear_backward(input_, weight.value, dy, need_dx ? &dx : nullptr,
                    weight.grad, bias.grad);
    return dx;
  }
  void init(std::mt19937_64& rng) {
    he_uniform(weight.value, weight.value.dim(0), rng);
    bias.value.zero();
  }
  void collect(ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Param<S> weight, bias;

 private:
  BasicTensor<S> input_;
};

}  // namespace telkit
