#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/engine/tape.hpp"
#include "echosynth/engine/tensor.hpp"

namespace echosynth::engine {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatF = Eigen::Map<MatF>;
using MapConstMatF = Eigen::Map<const MatF>;

using Int3 = std::array<int, 3>;

inline void check_finite(const Tensor& t, const std::string& op) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t.data()[i]))
      throw std::runtime_error(op + ": non-finite input at flat index " + std::to_string(i));
}

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Geometry of a strided convolution between an "image" side [C, D, H, W]
// and a "grid" side [Do, Ho, Wo]. conv3d maps image -> grid; its adjoint
// (and conv_transpose3d) maps grid -> image.
struct ConvGeom {
  int C, D, H, W;        // image side, per sample
  int kd, kh, kw;
  int sd, sh, sw;
  int pd, ph, pw;
  int Do, Ho, Wo;        // grid side, per sample

  std::int64_t rows() const { return static_cast<std::int64_t>(C) * kd * kh * kw; }
  std::int64_t cols() const { return static_cast<std::int64_t>(Do) * Ho * Wo; }
  std::int64_t image_numel() const { return static_cast<std::int64_t>(C) * D * H * W; }

  static int out_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
};

inline ConvGeom make_conv_geom(int C, Int3 in, Int3 k, Int3 s, Int3 p, const std::string& op) {
  for (int i = 0; i < 3; ++i) {
    require(k[i] >= 1, op + ": kernel extent must be >= 1");
    require(s[i] >= 1, op + ": stride must be >= 1");
    require(p[i] >= 0, op + ": padding must be >= 0");
  }
  ConvGeom g;
  g.C = C;
  g.D = in[0]; g.H = in[1]; g.W = in[2];
  g.kd = k[0]; g.kh = k[1]; g.kw = k[2];
  g.sd = s[0]; g.sh = s[1]; g.sw = s[2];
  g.pd = p[0]; g.ph = p[1]; g.pw = p[2];
  g.Do = ConvGeom::out_extent(g.D, g.kd, g.sd, g.pd);
  g.Ho = ConvGeom::out_extent(g.H, g.kh, g.sh, g.ph);
  g.Wo = ConvGeom::out_extent(g.W, g.kw, g.sw, g.pw);
  require(g.Do >= 1 && g.Ho >= 1 && g.Wo >= 1,
          op + ": non-positive output extent for input " + std::to_string(g.D) + "x" +
              std::to_string(g.H) + "x" + std::to_string(g.W) + ", kernel " + std::to_string(g.kd) +
              "x" + std::to_string(g.kh) + "x" + std::to_string(g.kw));
  return g;
}

// col[(c,dz,dy,dx), (od,oh,ow)] = image[c, od*sd+dz-pd, oh*sh+dy-ph, ow*sw+dx-pw] (0 when padded).
inline void im2col_3d(const float* image, const ConvGeom& g, float* col) {
  const std::int64_t P = g.cols();
  float* dst = col;
  for (int c = 0; c < g.C; ++c) {
    const float* chan = image + static_cast<std::int64_t>(c) * g.D * g.H * g.W;
    for (int dz = 0; dz < g.kd; ++dz)
      for (int dy = 0; dy < g.kh; ++dy)
        for (int dx = 0; dx < g.kw; ++dx) {
          for (int od = 0; od < g.Do; ++od) {
            const int id = od * g.sd + dz - g.pd;
            if (id < 0 || id >= g.D) {
              std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(g.Ho) * g.Wo);
              dst += static_cast<std::int64_t>(g.Ho) * g.Wo;
              continue;
            }
            for (int oh = 0; oh < g.Ho; ++oh) {
              const int ih = oh * g.sh + dy - g.ph;
              if (ih < 0 || ih >= g.H) {
                std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(g.Wo));
                dst += g.Wo;
                continue;
              }
              const float* row = chan + (static_cast<std::int64_t>(id) * g.H + ih) * g.W;
              if (g.sw == 1) {
                for (int ow = 0; ow < g.Wo; ++ow) {
                  const int iw = ow + dx - g.pw;
                  dst[ow] = (iw >= 0 && iw < g.W) ? row[iw] : 0.0f;
                }
              } else {
                for (int ow = 0; ow < g.Wo; ++ow) {
                  const int iw = ow * g.sw + dx - g.pw;
                  dst[ow] = (iw >= 0 && iw < g.W) ? row[iw] : 0.0f;
                }
              }
              dst += g.Wo;
            }
          }
        }
  }
  (void)P;
}

// Adjoint of im2col_3d: accumulates col back into the image layout.
inline void col2im_3d(const float* col, const ConvGeom& g, float* image) {
  const float* src = col;
  for (int c = 0; c < g.C; ++c) {
    float* chan = image + static_cast<std::int64_t>(c) * g.D * g.H * g.W;
    for (int dz = 0; dz < g.kd; ++dz)
      for (int dy = 0; dy < g.kh; ++dy)
        for (int dx = 0; dx < g.kw; ++dx) {
          for (int od = 0; od < g.Do; ++od) {
            const int id = od * g.sd + dz - g.pd;
            if (id < 0 || id >= g.D) {
              src += static_cast<std::int64_t>(g.Ho) * g.Wo;
              continue;
            }
            for (int oh = 0; oh < g.Ho; ++oh) {
              const int ih = oh * g.sh + dy - g.ph;
              if (ih < 0 || ih >= g.H) {
                src += g.Wo;
                continue;
              }
              float* row = chan + (static_cast<std::int64_t>(id) * g.H + ih) * g.W;
              for (int ow = 0; ow < g.Wo; ++ow) {
                const int iw = ow * g.sw + dx - g.pw;
                if (iw >= 0 && iw < g.W) row[iw] += src[ow];
              }
              src += g.Wo;
            }
          }
        }
  }
}

}  // namespace detail

// ---- convolution -----------------------------------------------------------

// x: [N, Cin, D, H, W], w: [Cout, Cin, kd, kh, kw], bias: [Cout] or null.
// Output extent per axis: (in + 2*pad - k) / stride + 1.
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* bias,
                     Int3 stride, Int3 pad, Tape* tape) {
  detail::require(x.ndim() == 5, "conv3d: input must be [N,C,D,H,W], got " + shape_str(x.shape()));
  detail::require(w.ndim() == 5, "conv3d: weight must be [Cout,Cin,kd,kh,kw], got " + shape_str(w.shape()));
  detail::require(x.dim(1) == w.dim(1),
                  "conv3d: input channels " + std::to_string(x.dim(1)) +
                      " != weight Cin " + std::to_string(w.dim(1)));
  const int N = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
  if (bias) {
    detail::require(bias->ndim() == 1 && bias->dim(0) == Cout,
                    "conv3d: bias must be [Cout], got " + shape_str(bias->shape()));
  }
  const auto g = detail::make_conv_geom(Cin, {x.dim(2), x.dim(3), x.dim(4)},
                                        {w.dim(2), w.dim(3), w.dim(4)}, stride, pad, "conv3d");
  const std::int64_t K = g.rows(), P = g.cols();

  Tensor out = Tensor::zeros({N, Cout, g.Do, g.Ho, g.Wo});
  std::vector<float> col(static_cast<std::size_t>(K * P));
  MapConstMatF Wm(w.data(), Cout, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col_3d(x.data() + static_cast<std::int64_t>(n) * g.image_numel(), g, col.data());
    MapConstMatF Cm(col.data(), K, P);
    MapMatF Ym(out.data() + static_cast<std::int64_t>(n) * Cout * P, Cout, P);
    Ym.noalias() = Wm * Cm;
    if (bias)
      for (int co = 0; co < Cout; ++co) Ym.row(co).array() += bias->data()[co];
  }

  if (tape) {
    Tensor xc = x, wc = w, outc = out;
    Tensor bc = bias ? *bias : Tensor{};
    out.node = tape->record([xc, wc, bc, outc, g, N, Cin, Cout, K, P]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      std::vector<float> col(static_cast<std::size_t>(K * P));
      std::vector<float> gcol(static_cast<std::size_t>(K * P));
      MapConstMatF Wm(wc.data(), Cout, K);
      MapMatF dW(wc.grad(), Cout, K);
      float* dx = xc.grad();
      float* db = bc.defined() ? bc.grad() : nullptr;
      for (int n = 0; n < N; ++n) {
        detail::im2col_3d(xc.data() + static_cast<std::int64_t>(n) * g.image_numel(), g, col.data());
        MapConstMatF Cm(col.data(), K, P);
        MapConstMatF Gy(gy + static_cast<std::int64_t>(n) * Cout * P, Cout, P);
        dW.noalias() += Gy * Cm.transpose();
        MapMatF Gc(gcol.data(), K, P);
        Gc.noalias() = Wm.transpose() * Gy;
        detail::col2im_3d(gcol.data(), g, dx + static_cast<std::int64_t>(n) * g.image_numel());
        if (db) {
          // fixed-order scalar accumulation: vectorized reductions split by
          // buffer address, which breaks bit-exact reruns
          const float* gyn = gy + static_cast<std::int64_t>(n) * Cout * P;
          for (int co = 0; co < Cout; ++co) {
            float acc = 0.0f;
            const float* row = gyn + static_cast<std::int64_t>(co) * P;
            for (int p = 0; p < P; ++p) acc += row[p];
            db[co] += acc;
          }
        }
      }
    });
    out.tape = tape;
  }
  return out;
}

// x: [N, Cin, D, H, W], w: [Cin, Cout, kd, kh, kw], bias: [Cout] or null.
// Output extent per axis: (in - 1)*stride - 2*pad + k. Adjoint of conv3d:
// <conv3d(a, w), b> == <a, conv_transpose3d(b, w)> for matching geometry.
inline Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor* bias,
                               Int3 stride, Int3 pad, Tape* tape) {
  detail::require(x.ndim() == 5, "conv_transpose3d: input must be [N,C,D,H,W], got " + shape_str(x.shape()));
  detail::require(w.ndim() == 5,
                  "conv_transpose3d: weight must be [Cin,Cout,kd,kh,kw], got " + shape_str(w.shape()));
  detail::require(x.dim(1) == w.dim(0),
                  "conv_transpose3d: input channels " + std::to_string(x.dim(1)) +
                      " != weight Cin " + std::to_string(w.dim(0)));
  const int N = x.dim(0), Cin = x.dim(1), Cout = w.dim(1);
  if (bias) {
    detail::require(bias->ndim() == 1 && bias->dim(0) == Cout,
                    "conv_transpose3d: bias must be [Cout], got " + shape_str(bias->shape()));
  }
  const int D = x.dim(2), H = x.dim(3), W = x.dim(4);
  Int3 out{};
  const Int3 in{D, H, W}, k{w.dim(2), w.dim(3), w.dim(4)};
  for (int i = 0; i < 3; ++i) {
    detail::require(stride[i] >= 1 && pad[i] >= 0, "conv_transpose3d: bad stride/pad");
    out[i] = (in[i] - 1) * stride[i] - 2 * pad[i] + k[i];
    detail::require(out[i] >= 1, "conv_transpose3d: non-positive output extent " +
                                     std::to_string(out[i]) + " on axis " + std::to_string(i));
  }
  // The grid side of the geometry is this op's input; the image side is its output.
  auto g = detail::make_conv_geom(Cout, out, k, stride, pad, "conv_transpose3d");
  detail::require(g.Do == D && g.Ho == H && g.Wo == W, "conv_transpose3d: inconsistent geometry");
  const std::int64_t K = g.rows(), P = g.cols();  // P == D*H*W of the input

  Tensor y = Tensor::zeros({N, Cout, out[0], out[1], out[2]});
  std::vector<float> gcol(static_cast<std::size_t>(K * P));
  MapConstMatF Wm(w.data(), Cin, K);  // [Cin, Cout*kd*kh*kw]
  for (int n = 0; n < N; ++n) {
    MapConstMatF Xm(x.data() + static_cast<std::int64_t>(n) * Cin * P, Cin, P);
    MapMatF Gc(gcol.data(), K, P);
    Gc.noalias() = Wm.transpose() * Xm;
    detail::col2im_3d(gcol.data(), g, y.data() + static_cast<std::int64_t>(n) * g.image_numel());
    if (bias) {
      float* yc = y.data() + static_cast<std::int64_t>(n) * g.image_numel();
      const std::int64_t spatial = static_cast<std::int64_t>(out[0]) * out[1] * out[2];
      for (int co = 0; co < Cout; ++co)
        for (std::int64_t i = 0; i < spatial; ++i) yc[co * spatial + i] += bias->data()[co];
    }
  }

  if (tape) {
    Tensor xc = x, wc = w, yc = y;
    Tensor bc = bias ? *bias : Tensor{};
    y.node = tape->record([xc, wc, bc, yc, g, N, Cin, Cout, K, P]() mutable {
      if (!yc.has_grad()) return;
      const float* gy = yc.grad();
      std::vector<float> col(static_cast<std::size_t>(K * P));
      MapConstMatF Wm(wc.data(), Cin, K);
      MapMatF dW(wc.grad(), Cin, K);
      float* dx = xc.grad();
      float* db = bc.defined() ? bc.grad() : nullptr;
      const std::int64_t spatial = g.image_numel() / Cout;
      for (int n = 0; n < N; ++n) {
        detail::im2col_3d(gy + static_cast<std::int64_t>(n) * g.image_numel(), g, col.data());
        MapConstMatF Cm(col.data(), K, P);
        MapConstMatF Xm(xc.data() + static_cast<std::int64_t>(n) * Cin * P, Cin, P);
        MapMatF dX(dx + static_cast<std::int64_t>(n) * Cin * P, Cin, P);
        dX.noalias() += Wm * Cm;
        dW.noalias() += Xm * Cm.transpose();
        if (db) {
          const float* gyn = gy + static_cast<std::int64_t>(n) * g.image_numel();
          for (int co = 0; co < Cout; ++co) {
            double s = 0.0;
            for (std::int64_t i = 0; i < spatial; ++i) s += gyn[co * spatial + i];
            db[co] += static_cast<float>(s);
          }
        }
      }
    });
    y.tape = tape;
  }
  return y;
}

// ---- trilinear upsampling --------------------------------------------------

namespace detail {

struct AxisLerp {
  std::vector<int> i0, i1;
  std::vector<float> w1;  // weight of i1; weight of i0 is 1-w1
};

inline AxisLerp make_axis_lerp(int n_in, int n_out) {
  AxisLerp a;
  a.i0.resize(n_out);
  a.i1.resize(n_out);
  a.w1.resize(n_out);
  for (int o = 0; o < n_out; ++o) {
    double src = (n_out == 1) ? 0.0
                              : static_cast<double>(o) * (n_in - 1) / static_cast<double>(n_out - 1);
    int i0 = static_cast<int>(src);
    if (i0 > n_in - 1) i0 = n_in - 1;
    int i1 = (i0 + 1 < n_in) ? i0 + 1 : i0;
    a.i0[o] = i0;
    a.i1[o] = i1;
    a.w1[o] = static_cast<float>(src - i0);
  }
  return a;
}

}  // namespace detail

// Align-corners trilinear interpolation; every spatial extent is multiplied
// by factor. Corner voxels map exactly onto input corners.
inline Tensor upsample_trilinear(const Tensor& x, int factor, Tape* tape) {
  detail::require(x.ndim() == 5, "upsample_trilinear: input must be [N,C,D,H,W]");
  detail::require(factor >= 1, "upsample_trilinear: factor must be >= 1, got " + std::to_string(factor));
  const int N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int Do = D * factor, Ho = H * factor, Wo = W * factor;
  const auto az = detail::make_axis_lerp(D, Do);
  const auto ay = detail::make_axis_lerp(H, Ho);
  const auto ax = detail::make_axis_lerp(W, Wo);

  Tensor out = Tensor::zeros({N, C, Do, Ho, Wo});
  const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
  const std::int64_t out_sp = static_cast<std::int64_t>(Do) * Ho * Wo;
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    const float* src = x.data() + nc * in_sp;
    float* dst = out.data() + nc * out_sp;
    for (int od = 0; od < Do; ++od) {
      const float wz = az.w1[od];
      const float* s0 = src + static_cast<std::int64_t>(az.i0[od]) * H * W;
      const float* s1 = src + static_cast<std::int64_t>(az.i1[od]) * H * W;
      for (int oh = 0; oh < Ho; ++oh) {
        const float wy = ay.w1[oh];
        const float* r00 = s0 + static_cast<std::int64_t>(ay.i0[oh]) * W;
        const float* r01 = s0 + static_cast<std::int64_t>(ay.i1[oh]) * W;
        const float* r10 = s1 + static_cast<std::int64_t>(ay.i0[oh]) * W;
        const float* r11 = s1 + static_cast<std::int64_t>(ay.i1[oh]) * W;
        for (int ow = 0; ow < Wo; ++ow) {
          const float wx = ax.w1[ow];
          const int x0 = ax.i0[ow], x1 = ax.i1[ow];
          const float v00 = r00[x0] + wx * (r00[x1] - r00[x0]);
          const float v01 = r01[x0] + wx * (r01[x1] - r01[x0]);
          const float v10 = r10[x0] + wx * (r10[x1] - r10[x0]);
          const float v11 = r11[x0] + wx * (r11[x1] - r11[x0]);
          const float v0 = v00 + wy * (v01 - v00);
          const float v1 = v10 + wy * (v11 - v10);
          *dst++ = v0 + wz * (v1 - v0);
        }
      }
    }
  }

  if (tape) {
    Tensor xc = x, outc = out;
    out.node = tape->record([xc, outc, az, ay, ax, N, C, D, H, W, Do, Ho, Wo]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* gx = xc.grad();
      const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
      const std::int64_t out_sp = static_cast<std::int64_t>(Do) * Ho * Wo;
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        const float* gsrc = gy + nc * out_sp;
        float* gdst = gx + nc * in_sp;
        for (int od = 0; od < Do; ++od) {
          const float wz = az.w1[od];
          for (int oh = 0; oh < Ho; ++oh) {
            const float wy = ay.w1[oh];
            for (int ow = 0; ow < Wo; ++ow) {
              const float g = *gsrc++;
              if (g == 0.0f) continue;
              const float wx = ax.w1[ow];
              const float c000 = (1 - wz) * (1 - wy) * (1 - wx), c001 = (1 - wz) * (1 - wy) * wx;
              const float c010 = (1 - wz) * wy * (1 - wx), c011 = (1 - wz) * wy * wx;
              const float c100 = wz * (1 - wy) * (1 - wx), c101 = wz * (1 - wy) * wx;
              const float c110 = wz * wy * (1 - wx), c111 = wz * wy * wx;
              float* p0 = gdst + (static_cast<std::int64_t>(az.i0[od]) * H + ay.i0[oh]) * W;
              float* p1 = gdst + (static_cast<std::int64_t>(az.i0[od]) * H + ay.i1[oh]) * W;
              float* p2 = gdst + (static_cast<std::int64_t>(az.i1[od]) * H + ay.i0[oh]) * W;
              float* p3 = gdst + (static_cast<std::int64_t>(az.i1[od]) * H + ay.i1[oh]) * W;
              p0[ax.i0[ow]] += g * c000;
              p0[ax.i1[ow]] += g * c001;
              p1[ax.i0[ow]] += g * c010;
              p1[ax.i1[ow]] += g * c011;
              p2[ax.i0[ow]] += g * c100;
              p2[ax.i1[ow]] += g * c101;
              p3[ax.i0[ow]] += g * c110;
              p3[ax.i1[ow]] += g * c111;
            }
          }
        }
      }
    });
    out.tape = tape;
  }
  return out;
}

// ---- pointwise activations -------------------------------------------------

enum class Act { relu, leaky_relu, tanh, sigmoid };

inline Tensor activation(const Tensor& x, Act kind, float alpha, Tape* tape) {
  detail::require(x.defined(), "activation: undefined input");
  if (kind == Act::leaky_relu) detail::require(alpha >= 0.0f, "activation: negative slope must be >= 0");
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  const float* src = x.data();
  float* dst = out.data();
  switch (kind) {
    case Act::relu:
      for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
      break;
    case Act::leaky_relu:
      for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : alpha * src[i];
      break;
    case Act::tanh:
      for (std::int64_t i = 0; i < n; ++i) dst[i] = std::tanh(src[i]);
      break;
    case Act::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) dst[i] = 1.0f / (1.0f + std::exp(-src[i]));
      break;
  }
  if (tape) {
    Tensor xc = x, outc = out;
    out.node = tape->record([xc, outc, kind, alpha, n]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      const float* xv = xc.data();
      const float* yv = outc.data();
      float* gx = xc.grad();
      switch (kind) {
        case Act::relu:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0f ? gy[i] : 0.0f;
          break;
        case Act::leaky_relu:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0f ? gy[i] : alpha * gy[i];
          break;
        case Act::tanh:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0f - yv[i] * yv[i]);
          break;
        case Act::sigmoid:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * yv[i] * (1.0f - yv[i]);
          break;
      }
    });
    out.tape = tape;
  }
  return out;
}

// ---- instance norm ---------------------------------------------------------

// Normalizes each (sample, channel) over its D*H*W voxels with population
// variance, then applies the per-channel affine (gamma, beta).
inline Tensor instance_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              float eps, Tape* tape) {
  detail::require(x.ndim() == 5, "instance_norm3d: input must be [N,C,D,H,W]");
  detail::require(eps > 0.0f, "instance_norm3d: eps must be > 0");
  const int N = x.dim(0), C = x.dim(1);
  const std::int64_t M = static_cast<std::int64_t>(x.dim(2)) * x.dim(3) * x.dim(4);
  detail::require(M >= 2, "instance_norm3d: spatial size must be >= 2, got " + std::to_string(M));
  detail::require(gamma.ndim() == 1 && gamma.dim(0) == C, "instance_norm3d: gamma must be [C]");
  detail::require(beta.ndim() == 1 && beta.dim(0) == C, "instance_norm3d: beta must be [C]");

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
  auto invstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(N) * C);
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    const float* src = x.data() + nc * M;
    float* dst = out.data() + nc * M;
    float* xh = xhat->data() + nc * M;
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < M; ++i) sum += src[i];
    const double mean = sum / static_cast<double>(M);
    for (std::int64_t i = 0; i < M; ++i) {
      const double d = src[i] - mean;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(M);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*invstd)[static_cast<std::size_t>(nc)] = is;
    const int c = static_cast<int>(nc % C);
    const float gam = gamma.data()[c], bet = beta.data()[c], mu = static_cast<float>(mean);
    for (std::int64_t i = 0; i < M; ++i) {
      xh[i] = (src[i] - mu) * is;
      dst[i] = gam * xh[i] + bet;
    }
  }

  if (tape) {
    Tensor xc = x, gc = gamma, bc = beta, outc = out;
    out.node = tape->record([xc, gc, bc, outc, xhat, invstd, N, C, M]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* gx = xc.grad();
      float* gg = gc.grad();
      float* gb = bc.grad();
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        const int c = static_cast<int>(nc % C);
        const float* g = gy + nc * M;
        const float* xh = xhat->data() + nc * M;
        float* dx = gx + nc * M;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t i = 0; i < M; ++i) {
          sum_g += g[i];
          sum_gx += static_cast<double>(g[i]) * xh[i];
        }
        gb[c] += static_cast<float>(sum_g);
        gg[c] += static_cast<float>(sum_gx);
        const float gam = gc.data()[c];
        const float is = (*invstd)[static_cast<std::size_t>(nc)];
        const float mg = static_cast<float>(sum_g / static_cast<double>(M));
        const float mgx = static_cast<float>(sum_gx / static_cast<double>(M));
        for (std::int64_t i = 0; i < M; ++i)
          dx[i] += gam * is * (g[i] - mg - xh[i] * mgx);
      }
    });
    out.tape = tape;
  }
  return out;
}

// ---- structural / elementwise ----------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape) {
  detail::require(a.ndim() == 5 && b.ndim() == 5, "concat_channels: inputs must be [N,C,D,H,W]");
  detail::require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3) &&
                      a.dim(4) == b.dim(4),
                  "concat_channels: mismatched shapes " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::int64_t S = static_cast<std::int64_t>(a.dim(2)) * a.dim(3) * a.dim(4);
  Tensor out = Tensor::zeros({N, Ca + Cb, a.dim(2), a.dim(3), a.dim(4)});
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * (Ca + Cb)) * S,
                a.data() + static_cast<std::int64_t>(n) * Ca * S, sizeof(float) * Ca * S);
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * (Ca + Cb) + Ca) * S,
                b.data() + static_cast<std::int64_t>(n) * Cb * S, sizeof(float) * Cb * S);
  }
  if (tape) {
    Tensor ac = a, bc = b, outc = out;
    out.node = tape->record([ac, bc, outc, N, Ca, Cb, S]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* ga = ac.grad();
      float* gb = bc.grad();
      for (int n = 0; n < N; ++n) {
        const float* gya = gy + (static_cast<std::int64_t>(n) * (Ca + Cb)) * S;
        const float* gyb = gya + static_cast<std::int64_t>(Ca) * S;
        for (std::int64_t i = 0; i < Ca * S; ++i) ga[static_cast<std::int64_t>(n) * Ca * S + i] += gya[i];
        for (std::int64_t i = 0; i < Cb * S; ++i) gb[static_cast<std::int64_t>(n) * Cb * S + i] += gyb[i];
      }
    });
    out.tape = tape;
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  detail::require(a.shape() == b.shape(), "add: mismatched shapes " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape) {
    Tensor ac = a, bc = b, outc = out;
    out.node = tape->record([ac, bc, outc]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* ga = ac.grad();
      float* gb = bc.grad();
      for (std::int64_t i = 0; i < outc.numel(); ++i) {
        ga[i] += gy[i];
        gb[i] += gy[i];
      }
    });
    out.tape = tape;
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  detail::require(a.shape() == b.shape(), "mul: mismatched shapes");
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape) {
    Tensor ac = a, bc = b, outc = out;
    out.node = tape->record([ac, bc, outc]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* ga = ac.grad();
      float* gb = bc.grad();
      for (std::int64_t i = 0; i < outc.numel(); ++i) {
        ga[i] += gy[i] * bc.data()[i];
        gb[i] += gy[i] * ac.data()[i];
      }
    });
    out.tape = tape;
  }
  return out;
}

// a*x + b, elementwise with scalar coefficients.
inline Tensor affine(const Tensor& x, float a, float b, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data()[i] = a * x.data()[i] + b;
  if (tape) {
    Tensor xc = x, outc = out;
    out.node = tape->record([xc, outc, a]() mutable {
      if (!outc.has_grad()) return;
      const float* gy = outc.grad();
      float* gx = xc.grad();
      for (std::int64_t i = 0; i < outc.numel(); ++i) gx[i] += a * gy[i];
    });
    out.tape = tape;
  }
  return out;
}

inline Tensor scale(const Tensor& x, float a, Tape* tape) { return affine(x, a, 0.0f, tape); }

// ---- reductions and losses -------------------------------------------------

inline Tensor sum(const Tensor& x, Tape* tape) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tape) {
    Tensor xc = x, outc = out;
    out.node = tape->record([xc, outc]() mutable {
      if (!outc.has_grad()) return;
      const float g = outc.grad()[0];
      float* gx = xc.grad();
      for (std::int64_t i = 0; i < xc.numel(); ++i) gx[i] += g;
    });
    out.tape = tape;
  }
  return out;
}

inline Tensor mean(const Tensor& x, Tape* tape) {
  const std::int64_t n = x.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (tape) {
    Tensor xc = x, outc = out;
    out.node = tape->record([xc, outc, n]() mutable {
      if (!outc.has_grad()) return;
      const float g = outc.grad()[0] / static_cast<float>(n);
      float* gx = xc.grad();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
    out.tape = tape;
  }
  return out;
}

// mean(|a - b|); the subgradient at a == b is taken as 0.
inline Tensor mean_abs_diff(const Tensor& a, const Tensor& b, Tape* tape) {
  detail::require(a.shape() == b.shape(), "mean_abs_diff: mismatched shapes");
  const std::int64_t n = a.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (tape) {
    Tensor ac = a, bc = b, outc = out;
    out.node = tape->record([ac, bc, outc, n]() mutable {
      if (!outc.has_grad()) return;
      const float g = outc.grad()[0] / static_cast<float>(n);
      float* ga = ac.grad();
      float* gb = bc.grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const float d = ac.data()[i] - bc.data()[i];
        const float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
        ga[i] += g * s;
        gb[i] -= g * s;
      }
    });
    out.tape = tape;
  }
  return out;
}

// Numerically stable mean BCE of logits against a constant target in {0, 1}:
// mean(max(z,0) - z*t + log(1 + exp(-|z|))).
inline Tensor bce_with_logits_mean(const Tensor& logits, float target, Tape* tape) {
  detail::require(target == 0.0f || target == 1.0f, "bce_with_logits_mean: target must be 0 or 1");
  check_finite(logits, "bce_with_logits_mean");
  const std::int64_t n = logits.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits.data()[i];
    acc += std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::fabs(z)));
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (tape) {
    Tensor lc = logits, outc = out;
    out.node = tape->record([lc, outc, target, n]() mutable {
      if (!outc.has_grad()) return;
      const float g = outc.grad()[0] / static_cast<float>(n);
      float* gl = lc.grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const float sig = 1.0f / (1.0f + std::exp(-lc.data()[i]));
        gl[i] += g * (sig - target);
      }
    });
    out.tape = tape;
  }
  return out;
}

}  // namespace echosynth::engine
