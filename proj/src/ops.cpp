#include "wavediff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "wavediff/wavelet.hpp"

namespace wavediff::ag {

namespace {

#if defined(__GLIBC__)
// Activation tensors exceed the default mmap threshold; keeping them on the
// heap avoids an mmap/munmap round trip per allocation in the training loop.
const bool kMallocTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

// ---------------------------------------------------------------------------
// Raw broadcasting kernels.
// ---------------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides with 0 where the source extent is 1 (broadcast axis).
std::vector<int64_t> broadcast_strides(const Shape& src, const Shape& dst) {
  const size_t r = dst.size(), rs = src.size();
  std::vector<int64_t> st(r, 0);
  int64_t stride = 1;
  for (size_t i = rs; i-- > 0;) {
    const size_t j = i + (r - rs);
    st[j] = (src[i] == 1 && dst[j] != 1) ? 0 : stride;
    stride *= src[i];
  }
  return st;
}

template <typename F>
NDTensor broadcast_binary(const NDTensor& a, const NDTensor& b, const char* op, F f) {
  if (a.same_shape(b)) {  // fast path
    NDTensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape(), op);
  NDTensor out(os);
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  const size_t r = os.size();
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < out.size(); ++o) {
    out[o] = f(a[ia], b[ib]);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < os[d]) break;
      ia -= sa[d] * os[d];
      ib -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

NDTensor raw_reduce_to(const NDTensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  // target must broadcast to x.shape()
  Shape check = broadcast_shape(x.shape(), target, "sum_to");
  if (check != x.shape()) {
    throw std::invalid_argument("sum_to: target " + shape_str(target) +
                                " does not broadcast to " + shape_str(x.shape()));
  }
  NDTensor out(target);
  auto st = broadcast_strides(target, x.shape());
  const Shape& xs = x.shape();
  const size_t r = xs.size();
  std::vector<int64_t> idx(r, 0);
  int64_t io = 0;
  for (int64_t i = 0; i < x.size(); ++i) {
    out[io] += x[i];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      io += st[d];
      if (idx[d] < xs[d]) break;
      io -= st[d] * xs[d];
      idx[d] = 0;
    }
  }
  return out;
}

NDTensor raw_broadcast_to(const NDTensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  Shape check = broadcast_shape(x.shape(), target, "broadcast_to");
  if (check != target) {
    throw std::invalid_argument("broadcast_to: " + shape_str(x.shape()) + " -> " +
                                shape_str(target) + " is not a pure broadcast");
  }
  NDTensor out(target);
  auto st = broadcast_strides(x.shape(), target);
  const size_t r = target.size();
  std::vector<int64_t> idx(r, 0);
  int64_t ix = 0;
  for (int64_t o = 0; o < out.size(); ++o) {
    out[o] = x[ix];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ix += st[d];
      if (idx[d] < target[d]) break;
      ix -= st[d] * target[d];
      idx[d] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw matmul kernels.
// ---------------------------------------------------------------------------

void check_2d(const Value& v, const char* op) {
  if (v.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D, got " + shape_str(v.shape()));
  }
}

NDTensor raw_matmul(const NDTensor& a, const NDTensor& b, bool ta, bool tb) {
  const int64_t m = ta ? a.dim(1) : a.dim(0);
  const int64_t k = ta ? a.dim(0) : a.dim(1);
  const int64_t kb = tb ? b.dim(1) : b.dim(0);
  const int64_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dims disagree, " + shape_str(a.shape()) +
                                (ta ? "^T" : "") + " x " + shape_str(b.shape()) +
                                (tb ? "^T" : ""));
  }
  NDTensor out({m, n});
  const int64_t lda = a.dim(1), ldb = b.dim(1);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      out.at2(i, j) = acc;
    }
  }
  return out;
}

NDTensor raw_bmm(const NDTensor& a, const NDTensor& b, bool ta, bool tb) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("bmm: need matching 3-D batches, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const int64_t B = a.dim(0);
  const int64_t m = ta ? a.dim(2) : a.dim(1);
  const int64_t k = ta ? a.dim(1) : a.dim(2);
  const int64_t kb = tb ? b.dim(2) : b.dim(1);
  const int64_t n = tb ? b.dim(1) : b.dim(2);
  if (k != kb) throw std::invalid_argument("bmm: inner dims disagree");
  NDTensor out({B, m, n});
  const int64_t lda = a.dim(2), ldb = b.dim(2);
  const int64_t pa = a.dim(1) * a.dim(2), pb = b.dim(1) * b.dim(2);
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < B; ++bi) {
    const double* ap = a.data() + bi * pa;
    const double* bp = b.data() + bi * pb;
    double* op = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) {
          const double av = ta ? ap[p * lda + i] : ap[i * lda + p];
          const double bv = tb ? bp[j * ldb + p] : bp[p * ldb + j];
          acc += av * bv;
        }
        op[i * n + j] = acc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw convolution kernels (cross-correlation, NCHW, zero padding).
// The three maps conv / input-grad / weight-grad are the faces of one
// trilinear form, so their vjps permute among themselves.
// ---------------------------------------------------------------------------

int64_t conv_out_extent(int64_t in, int64_t kk, int stride, int pad) {
  return (in + 2 * pad - kk) / stride + 1;
}

// Register-blocked row kernel for 3x3 stride-1 pad-1 correlations: the output
// row is streamed once per input channel with nine fused multiply-adds per
// pixel. r0/r2 may be null at the image borders.
inline void conv3_row(double* orow, const double* r0, const double* r1, const double* r2,
                      const double* t, int64_t W) {
  auto edge = [&](int64_t ow) {
    double acc = 0.0;
    const bool l = ow > 0, r = ow + 1 < W;
    if (r0) {
      if (l) acc += t[0] * r0[ow - 1];
      acc += t[1] * r0[ow];
      if (r) acc += t[2] * r0[ow + 1];
    }
    if (l) acc += t[3] * r1[ow - 1];
    acc += t[4] * r1[ow];
    if (r) acc += t[5] * r1[ow + 1];
    if (r2) {
      if (l) acc += t[6] * r2[ow - 1];
      acc += t[7] * r2[ow];
      if (r) acc += t[8] * r2[ow + 1];
    }
    orow[ow] += acc;
  };
  edge(0);
  if (r0 && r2) {
    for (int64_t ow = 1; ow + 1 < W; ++ow) {
      orow[ow] += t[0] * r0[ow - 1] + t[1] * r0[ow] + t[2] * r0[ow + 1] + t[3] * r1[ow - 1] +
                  t[4] * r1[ow] + t[5] * r1[ow + 1] + t[6] * r2[ow - 1] + t[7] * r2[ow] +
                  t[8] * r2[ow + 1];
    }
  } else if (r0) {
    for (int64_t ow = 1; ow + 1 < W; ++ow) {
      orow[ow] += t[0] * r0[ow - 1] + t[1] * r0[ow] + t[2] * r0[ow + 1] + t[3] * r1[ow - 1] +
                  t[4] * r1[ow] + t[5] * r1[ow + 1];
    }
  } else if (r2) {
    for (int64_t ow = 1; ow + 1 < W; ++ow) {
      orow[ow] += t[3] * r1[ow - 1] + t[4] * r1[ow] + t[5] * r1[ow + 1] + t[6] * r2[ow - 1] +
                  t[7] * r2[ow] + t[8] * r2[ow + 1];
    }
  } else {
    for (int64_t ow = 1; ow + 1 < W; ++ow) {
      orow[ow] += t[3] * r1[ow - 1] + t[4] * r1[ow] + t[5] * r1[ow + 1];
    }
  }
  if (W > 1) edge(W - 1);
}

// dst[b,co] += sum_ci taps(co,ci) (*) src[b,ci], taps given by a lookup so the
// same driver serves the forward pass and the flipped-kernel input gradient.
template <typename TapFn>
void conv3_s1_p1_plane(const double* src, double* dst, int64_t B, int64_t Cs, int64_t Cd,
                       int64_t H, int64_t W, TapFn taps) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t cd = 0; cd < Cd; ++cd) {
      double* op = dst + ((b * Cd + cd) * H) * W;
      for (int64_t cs = 0; cs < Cs; ++cs) {
        double t[9];
        taps(cd, cs, t);
        const double* xp = src + ((b * Cs + cs) * H) * W;
        for (int64_t oh = 0; oh < H; ++oh) {
          const double* r0 = oh > 0 ? xp + (oh - 1) * W : nullptr;
          const double* r2 = oh + 1 < H ? xp + (oh + 1) * W : nullptr;
          conv3_row(op + oh * W, r0, xp + oh * W, r2, t, W);
        }
      }
    }
  }
}

// dst[b,cd,:] += sum_cs weight(cd,cs) * src[b,cs,:], input channels blocked in
// fours to amortize the output stream.
template <typename WFn>
void conv1x1_plane(const double* src, double* dst, int64_t B, int64_t Cs, int64_t Cd, int64_t hw,
                   WFn weight) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t cd = 0; cd < Cd; ++cd) {
      double* op = dst + (b * Cd + cd) * hw;
      int64_t cs = 0;
      for (; cs + 4 <= Cs; cs += 4) {
        const double w0 = weight(cd, cs), w1 = weight(cd, cs + 1);
        const double w2 = weight(cd, cs + 2), w3 = weight(cd, cs + 3);
        const double* s0 = src + (b * Cs + cs) * hw;
        const double* s1 = s0 + hw;
        const double* s2 = s1 + hw;
        const double* s3 = s2 + hw;
        for (int64_t i = 0; i < hw; ++i) {
          op[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i] + w3 * s3[i];
        }
      }
      for (; cs < Cs; ++cs) {
        const double wv = weight(cd, cs);
        const double* sp = src + (b * Cs + cs) * hw;
        for (int64_t i = 0; i < hw; ++i) op[i] += wv * sp[i];
      }
    }
  }
}

NDTensor raw_conv2d(const NDTensor& x, const NDTensor& w, int stride, int pad) {
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = conv_out_extent(H, kh, stride, pad);
  const int64_t Wo = conv_out_extent(W, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  NDTensor out({B, Cout, Ho, Wo});
  const double* wd = w.data();
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
    conv3_s1_p1_plane(x.data(), out.data(), B, Cin, Cout, H, W,
                      [wd, Cin](int64_t co, int64_t ci, double* t) {
                        const double* wp = wd + (co * Cin + ci) * 9;
                        for (int k = 0; k < 9; ++k) t[k] = wp[k];
                      });
    return out;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    conv1x1_plane(x.data(), out.data(), B, Cin, Cout, H * W,
                  [wd, Cin](int64_t co, int64_t ci) { return wd[co * Cin + ci]; });
    return out;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < Cout; ++co) {
      double* op = out.data() + ((b * Cout + co) * Ho) * Wo;
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const double* xp = x.data() + ((b * Cin + ci) * H) * W;
        const double* wp = w.data() + ((co * Cin + ci) * kh) * kw;
        for (int64_t r = 0; r < kh; ++r) {
          for (int64_t c = 0; c < kw; ++c) {
            const double wv = wp[r * kw + c];
            if (wv == 0.0) continue;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xp + ih * W;
              double* orow = op + oh * Wo;
              // iw = ow*stride - pad + c must lie in [0, W)
              int64_t lo = 0, hi = Wo;
              if (stride == 1) {
                lo = std::max<int64_t>(0, pad - c);
                hi = std::min<int64_t>(Wo, W - c + pad);
                const double* xr = xrow + lo - pad + c;
                for (int64_t ow = lo; ow < hi; ++ow) orow[ow] += wv * xr[ow - lo];
              } else {
                for (int64_t ow = lo; ow < hi; ++ow) {
                  const int64_t iw = ow * stride - pad + c;
                  if (iw < 0 || iw >= W) continue;
                  orow[ow] += wv * xrow[iw];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

NDTensor raw_conv2d_input_grad(const NDTensor& g, const NDTensor& w, int stride, int pad,
                               int64_t H, int64_t W) {
  const int64_t B = g.dim(0), Cout = g.dim(1), Ho = g.dim(2), Wo = g.dim(3);
  const int64_t Cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  NDTensor dx({B, Cin, H, W});
  const double* wd = w.data();
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1 && Ho == H && Wo == W) {
    // adjoint of a same-padded correlation: correlate with the flipped kernel
    conv3_s1_p1_plane(g.data(), dx.data(), B, Cout, Cin, H, W,
                      [wd, Cin](int64_t ci, int64_t co, double* t) {
                        const double* wp = wd + (co * Cin + ci) * 9;
                        for (int k = 0; k < 9; ++k) t[k] = wp[8 - k];
                      });
    return dx;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    conv1x1_plane(g.data(), dx.data(), B, Cout, Cin, H * W,
                  [wd, Cin](int64_t ci, int64_t co) { return wd[co * Cin + ci]; });
    return dx;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
      double* dp = dx.data() + ((b * Cin + ci) * H) * W;
      for (int64_t co = 0; co < Cout; ++co) {
        const double* gp = g.data() + ((b * Cout + co) * Ho) * Wo;
        const double* wp = w.data() + ((co * Cin + ci) * kh) * kw;
        for (int64_t r = 0; r < kh; ++r) {
          for (int64_t c = 0; c < kw; ++c) {
            const double wv = wp[r * kw + c];
            if (wv == 0.0) continue;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= H) continue;
              double* drow = dp + ih * W;
              const double* grow = gp + oh * Wo;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + c;
                if (iw < 0 || iw >= W) continue;
                drow[iw] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

NDTensor raw_conv2d_weight_grad(const NDTensor& x, const NDTensor& g, int stride, int pad,
                                int64_t kh, int64_t kw) {
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = g.dim(1), Ho = g.dim(2), Wo = g.dim(3);
  NDTensor dw({Cout, Cin, kh, kw});
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1 && Ho == H && Wo == W) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t co = 0; co < Cout; ++co) {
      for (int64_t ci = 0; ci < Cin; ++ci) {
        double acc[9] = {0};
        for (int64_t b = 0; b < B; ++b) {
          const double* xp = x.data() + ((b * Cin + ci) * H) * W;
          const double* gp = g.data() + ((b * Cout + co) * H) * W;
          for (int64_t oh = 0; oh < H; ++oh) {
            const double* grow = gp + oh * W;
            for (int64_t r = 0; r < 3; ++r) {
              const int64_t ih = oh + r - 1;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xp + ih * W;
              double a0 = 0.0, a1 = 0.0, a2 = 0.0;
              for (int64_t ow = 1; ow + 1 < W; ++ow) {
                a0 += xrow[ow - 1] * grow[ow];
                a1 += xrow[ow] * grow[ow];
                a2 += xrow[ow + 1] * grow[ow];
              }
              // edge columns
              a1 += xrow[0] * grow[0];
              if (W > 1) {
                a2 += xrow[1] * grow[0];
                a0 += xrow[W - 2] * grow[W - 1];
                a1 += xrow[W - 1] * grow[W - 1];
              }
              acc[r * 3 + 0] += a0;
              acc[r * 3 + 1] += a1;
              acc[r * 3 + 2] += a2;
            }
          }
        }
        double* wp = dw.data() + (co * Cin + ci) * 9;
        for (int k = 0; k < 9; ++k) wp[k] = acc[k];
      }
    }
    return dw;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    const int64_t hw = H * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t co = 0; co < Cout; ++co) {
      for (int64_t ci = 0; ci < Cin; ++ci) {
        double acc = 0.0;
        for (int64_t b = 0; b < B; ++b) {
          const double* xp = x.data() + (b * Cin + ci) * hw;
          const double* gp = g.data() + (b * Cout + co) * hw;
          for (int64_t i = 0; i < hw; ++i) acc += xp[i] * gp[i];
        }
        dw.data()[co * Cin + ci] = acc;
      }
    }
    return dw;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < Cout; ++co) {
    for (int64_t ci = 0; ci < Cin; ++ci) {
      double* wp = dw.data() + ((co * Cin + ci) * kh) * kw;
      for (int64_t r = 0; r < kh; ++r) {
        for (int64_t c = 0; c < kw; ++c) {
          double acc = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            const double* xp = x.data() + ((b * Cin + ci) * H) * W;
            const double* gp = g.data() + ((b * Cout + co) * Ho) * Wo;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xp + ih * W;
              const double* grow = gp + oh * Wo;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + c;
                if (iw < 0 || iw >= W) continue;
                acc += xrow[iw] * grow[ow];
              }
            }
          }
          wp[r * kw + c] = acc;
        }
      }
    }
  }
  return dw;
}

int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

NDTensor raw_pad_reflect(const NDTensor& x, int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  NDTensor out({B, C, H + 2 * pad, W + 2 * pad});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H + 2 * pad; ++i)
        for (int64_t j = 0; j < W + 2 * pad; ++j)
          out.at4(b, c, i, j) = x.at4(b, c, reflect_index(i - pad, H), reflect_index(j - pad, W));
  return out;
}

NDTensor raw_pad_reflect_adjoint(const NDTensor& g, int pad) {
  const int64_t B = g.dim(0), C = g.dim(1), H = g.dim(2) - 2 * pad, W = g.dim(3) - 2 * pad;
  NDTensor dx({B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < g.dim(2); ++i)
        for (int64_t j = 0; j < g.dim(3); ++j)
          dx.at4(b, c, reflect_index(i - pad, H), reflect_index(j - pad, W)) += g.at4(b, c, i, j);
  return dx;
}

// primitive builders used inside vjps
Value conv2d_prim(const Value& x, const Value& w, int stride, int pad);
Value conv2d_input_grad_prim(const Value& g, const Value& w, int stride, int pad, int64_t H,
                             int64_t W);
Value conv2d_weight_grad_prim(const Value& x, const Value& g, int stride, int pad, int64_t kh,
                              int64_t kw);

Value conv2d_prim(const Value& x, const Value& w, int stride, int pad) {
  const int64_t H = x.shape()[2], W = x.shape()[3];
  const int64_t kh = w.shape()[2], kw = w.shape()[3];
  NDTensor out = raw_conv2d(x.val(), w.val(), stride, pad);
  return x.tape->emplace(
      std::move(out), {x, w}, "conv2d",
      [x, w, stride, pad, H, W, kh, kw](const Value&, const Value& g, std::vector<Value>& gi) {
        gi[0] = conv2d_input_grad_prim(g, w, stride, pad, H, W);
        gi[1] = conv2d_weight_grad_prim(x, g, stride, pad, kh, kw);
      });
}

Value conv2d_input_grad_prim(const Value& g, const Value& w, int stride, int pad, int64_t H,
                             int64_t W) {
  NDTensor out = raw_conv2d_input_grad(g.val(), w.val(), stride, pad, H, W);
  const int64_t kh = w.shape()[2], kw = w.shape()[3];
  return g.tape->emplace(
      std::move(out), {g, w}, "conv2d_input_grad",
      [g, w, stride, pad, kh, kw](const Value&, const Value& u, std::vector<Value>& gi) {
        gi[0] = conv2d_prim(u, w, stride, pad);
        gi[1] = conv2d_weight_grad_prim(u, g, stride, pad, kh, kw);
      });
}

Value conv2d_weight_grad_prim(const Value& x, const Value& g, int stride, int pad, int64_t kh,
                              int64_t kw) {
  NDTensor out = raw_conv2d_weight_grad(x.val(), g.val(), stride, pad, kh, kw);
  const int64_t H = x.shape()[2], W = x.shape()[3];
  return x.tape->emplace(
      std::move(out), {x, g}, "conv2d_weight_grad",
      [x, g, stride, pad, H, W](const Value&, const Value& v, std::vector<Value>& gi) {
        gi[0] = conv2d_input_grad_prim(g, v, stride, pad, H, W);
        gi[1] = conv2d_prim(x, v, stride, pad);
      });
}

template <typename F, typename DF>
Value unary_from_output(const Value& x, const char* name, F f, DF dfdy) {
  // dfdy builds the local derivative from the op's own output node, keeping
  // higher-order gradients exact.
  NDTensor out(x.shape());
  const NDTensor& xv = x.val();
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape->emplace(std::move(out), {x}, name,
                         [dfdy](const Value& self, const Value& g, std::vector<Value>& gi) {
                           gi[0] = mul(g, dfdy(self));
                         });
}

Value pad_ch(const Value& x, int64_t before, int64_t after);

int64_t ch_plane(const Shape& s) {
  int64_t p = 1;
  for (size_t i = 2; i < s.size(); ++i) p *= s[i];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

Value add(const Value& a, const Value& b) {
  NDTensor out = broadcast_binary(a.val(), b.val(), "add", [](double x, double y) { return x + y; });
  Shape sa = a.shape(), sb = b.shape();
  return a.tape->emplace(std::move(out), {a, b}, "add",
                         [sa, sb](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = sum_to(g, sa);
                           gi[1] = sum_to(g, sb);
                         });
}

Value sub(const Value& a, const Value& b) { return add(a, neg(b)); }

Value mul(const Value& a, const Value& b) {
  NDTensor out = broadcast_binary(a.val(), b.val(), "mul", [](double x, double y) { return x * y; });
  Shape sa = a.shape(), sb = b.shape();
  return a.tape->emplace(std::move(out), {a, b}, "mul",
                         [a, b, sa, sb](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = sum_to(mul(g, b), sa);
                           gi[1] = sum_to(mul(g, a), sb);
                         });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value scale(const Value& a, double s) {
  NDTensor out = wavediff::scale(a.val(), s);
  return a.tape->emplace(std::move(out), {a}, "scale",
                         [s](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = scale(g, s);
                         });
}

Value add_scalar(const Value& a, double c) {
  NDTensor out(a.shape());
  const NDTensor& av = a.val();
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  return a.tape->emplace(std::move(out), {a}, "add_scalar",
                         [](const Value&, const Value& g, std::vector<Value>& gi) { gi[0] = g; });
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

Value matmul(const Value& a, const Value& b, bool ta, bool tb) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  NDTensor out = raw_matmul(a.val(), b.val(), ta, tb);
  return a.tape->emplace(std::move(out), {a, b}, "matmul",
                         [a, b, ta, tb](const Value&, const Value& g, std::vector<Value>& gi) {
                           if (!ta && !tb) {
                             gi[0] = matmul(g, b, false, true);
                             gi[1] = matmul(a, g, true, false);
                           } else if (!ta && tb) {
                             gi[0] = matmul(g, b, false, false);
                             gi[1] = matmul(g, a, true, false);
                           } else if (ta && !tb) {
                             gi[0] = matmul(b, g, false, true);
                             gi[1] = matmul(a, g, false, false);
                           } else {
                             gi[0] = matmul(b, g, true, true);
                             gi[1] = matmul(g, a, true, true);
                           }
                         });
}

Value bmm(const Value& a, const Value& b, bool ta, bool tb) {
  NDTensor out = raw_bmm(a.val(), b.val(), ta, tb);
  return a.tape->emplace(std::move(out), {a, b}, "bmm",
                         [a, b, ta, tb](const Value&, const Value& g, std::vector<Value>& gi) {
                           if (!ta && !tb) {
                             gi[0] = bmm(g, b, false, true);
                             gi[1] = bmm(a, g, true, false);
                           } else if (!ta && tb) {
                             gi[0] = bmm(g, b, false, false);
                             gi[1] = bmm(g, a, true, false);
                           } else if (ta && !tb) {
                             gi[0] = bmm(b, g, false, true);
                             gi[1] = bmm(a, g, false, false);
                           } else {
                             gi[0] = bmm(b, g, true, true);
                             gi[1] = bmm(g, a, true, true);
                           }
                         });
}

Value dense(const Value& x, const Value& w, const Value& bias) {
  check_2d(x, "dense");
  check_2d(w, "dense");
  if (x.shape()[1] != w.shape()[1]) {
    throw std::invalid_argument("dense: inner dims disagree, input " + shape_str(x.shape()) +
                                " vs weight " + shape_str(w.shape()));
  }
  Value y = matmul(x, w, false, true);
  if (bias.valid()) {
    if (bias.shape() != Shape{w.shape()[0]}) {
      throw std::invalid_argument("dense: bias shape " + shape_str(bias.shape()) +
                                  " does not match output width " + std::to_string(w.shape()[0]));
    }
    y = add(y, bias);
  }
  return y;
}

Value conv2d(const Value& x, const Value& w, const Value& bias, int stride, int pad,
             PadMode mode) {
  if (x.shape().size() != 4 || w.shape().size() != 4) {
    throw std::invalid_argument("conv2d: need 4-D input and weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (x.shape()[1] != w.shape()[1]) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " vs weight " + shape_str(w.shape()));
  }
  const int64_t kh = w.shape()[2], kw = w.shape()[3];
  const bool odd = (kh % 2 == 1 && kw % 2 == 1);
  const bool stride2_kernel = (kh == 2 && kw == 2 && stride == 2);
  if (!odd && !stride2_kernel) {
    throw std::invalid_argument("conv2d: kernel must be odd or a stride-2 2x2 kernel");
  }
  Value cx = x;
  int effective_pad = pad;
  if (mode == PadMode::kReflect && pad > 0) {
    cx = pad_reflect(x, pad);
    effective_pad = 0;
  }
  Value y = conv2d_prim(cx, w, stride, effective_pad);
  if (bias.valid()) {
    if (bias.shape() != Shape{w.shape()[0]}) {
      throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                  " does not match " + std::to_string(w.shape()[0]) + " channels");
    }
    y = add(y, reshape(bias, {w.shape()[0], 1, 1}));
  }
  return y;
}

Value pad_reflect(const Value& x, int pad) {
  if (pad >= x.shape()[2] || pad >= x.shape()[3]) {
    throw std::invalid_argument("pad_reflect: pad must be smaller than spatial extents");
  }
  NDTensor out = raw_pad_reflect(x.val(), pad);
  return x.tape->emplace(std::move(out), {x}, "pad_reflect",
                         [pad](const Value& self, const Value& g, std::vector<Value>& gi) {
                           NDTensor dx = raw_pad_reflect_adjoint(g.val(), pad);
                           gi[0] = g.tape->emplace(
                               std::move(dx), {g}, "pad_reflect_adjoint",
                               [pad](const Value&, const Value& u, std::vector<Value>& gg) {
                                 gg[0] = pad_reflect(u, pad);
                               });
                         });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Value sigmoid(const Value& x) {
  auto f = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary_from_output(x, "sigmoid", f, [](const Value& y) {
    return mul(y, add_scalar(neg(y), 1.0));  // y*(1-y)
  });
}

Value tanh_op(const Value& x) {
  return unary_from_output(x, "tanh", [](double v) { return std::tanh(v); },
                           [](const Value& y) { return add_scalar(neg(mul(y, y)), 1.0); });
}

Value softplus(const Value& x) {
  NDTensor out(x.shape());
  const NDTensor& xv = x.val();
  for (int64_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
  }
  return x.tape->emplace(std::move(out), {x}, "softplus",
                         [x](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = mul(g, sigmoid(x));
                         });
}

Value leaky_relu(const Value& x, double slope) {
  NDTensor out(x.shape());
  NDTensor mask(x.shape());
  const NDTensor& xv = x.val();
  for (int64_t i = 0; i < xv.size(); ++i) {
    const bool pos = xv[i] > 0;
    out[i] = pos ? xv[i] : slope * xv[i];
    mask[i] = pos ? 1.0 : slope;
  }
  return x.tape->emplace(std::move(out), {x}, "leaky_relu",
                         [mask](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = mul(g, g.tape->constant(mask));
                         });
}

Value silu(const Value& x) { return mul(x, sigmoid(x)); }

Value abs_op(const Value& x) {
  NDTensor out(x.shape());
  NDTensor sign(x.shape());
  const NDTensor& xv = x.val();
  for (int64_t i = 0; i < xv.size(); ++i) {
    out[i] = std::fabs(xv[i]);
    sign[i] = xv[i] > 0 ? 1.0 : (xv[i] < 0 ? -1.0 : 0.0);
  }
  return x.tape->emplace(std::move(out), {x}, "abs",
                         [sign](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = mul(g, g.tape->constant(sign));
                         });
}

Value rsqrt(const Value& x) {
  return unary_from_output(x, "rsqrt", [](double v) { return 1.0 / std::sqrt(v); },
                           [](const Value& y) { return scale(mul(mul(y, y), y), -0.5); });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

Value sum_all(const Value& x) {
  NDTensor out = NDTensor::scalar(wavediff::sum(x.val()));
  Shape xs = x.shape();
  return x.tape->emplace(std::move(out), {x}, "sum_all",
                         [xs](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = broadcast_to(g, xs);
                         });
}

Value mean_all(const Value& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Value sum_last(const Value& x) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw std::invalid_argument("sum_last: rank-0 tensor");
  const int64_t n = xs.back();
  const int64_t rows = x.size() / std::max<int64_t>(n, 1);
  Shape os = xs;
  os.back() = 1;
  NDTensor out(os);
  const NDTensor& xv = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += xv[r * n + i];
    out[r] = acc;
  }
  Shape full = xs;
  return x.tape->emplace(std::move(out), {x}, "sum_last",
                         [full](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = broadcast_to(g, full);
                         });
}

Value sum_to(const Value& x, Shape target) {
  if (x.shape() == target) return x;
  NDTensor out = raw_reduce_to(x.val(), target);
  Shape xs = x.shape();
  return x.tape->emplace(std::move(out), {x}, "sum_to",
                         [xs](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = broadcast_to(g, xs);
                         });
}

Value broadcast_to(const Value& x, Shape target) {
  if (x.shape() == target) return x;
  NDTensor out = raw_broadcast_to(x.val(), target);
  Shape xs = x.shape();
  return x.tape->emplace(std::move(out), {x}, "broadcast_to",
                         [xs](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = sum_to(g, xs);
                         });
}

Value reshape(const Value& x, Shape shape) {
  NDTensor out = x.val().reshaped(shape);
  Shape xs = x.shape();
  return x.tape->emplace(std::move(out), {x}, "reshape",
                         [xs](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = reshape(g, xs);
                         });
}

Value softmax_last(const Value& x) {
  const Shape& xs = x.shape();
  const int64_t n = xs.back();
  const int64_t rows = x.size() / n;
  NDTensor out(xs);
  const NDTensor& xv = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(xv[r * n + i])) {
        throw std::runtime_error("softmax: nonfinite input logit");
      }
      mx = std::max(mx, xv[r * n + i]);
    }
    double denom = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      out[r * n + i] = std::exp(xv[r * n + i] - mx);
      denom += out[r * n + i];
    }
    for (int64_t i = 0; i < n; ++i) out[r * n + i] /= denom;
  }
  return x.tape->emplace(std::move(out), {x}, "softmax",
                         [](const Value& self, const Value& g, std::vector<Value>& gi) {
                           Value dot = sum_last(mul(g, self));  // [..., 1]
                           gi[0] = mul(self, sub(g, dot));
                         });
}

Value concat_ch(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_ch: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw std::invalid_argument("concat_ch: need rank >= 2");
  int64_t total_c = 0;
  for (const Value& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || s[0] != s0[0]) {
      throw std::invalid_argument("concat_ch: incompatible shapes");
    }
    for (size_t d = 2; d < s.size(); ++d) {
      if (s[d] != s0[d]) throw std::invalid_argument("concat_ch: incompatible shapes");
    }
    total_c += s[1];
  }
  Shape os = s0;
  os[1] = total_c;
  NDTensor out(os);
  const int64_t B = s0[0];
  const int64_t plane = ch_plane(s0);
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const Value& p : parts) {
    offsets.push_back(off);
    const int64_t pc = p.shape()[1];
    const NDTensor& pv = p.val();
    for (int64_t b = 0; b < B; ++b) {
      const double* src = pv.data() + b * pc * plane;
      double* dst = out.data() + (b * total_c + off) * plane;
      for (int64_t i = 0; i < pc * plane; ++i) dst[i] = src[i];
    }
    off += pc;
  }
  std::vector<int64_t> widths;
  for (const Value& p : parts) widths.push_back(p.shape()[1]);
  return parts[0].tape->emplace(std::move(out), parts, "concat_ch",
                                [offsets, widths](const Value&, const Value& g,
                                                  std::vector<Value>& gi) {
                                  for (size_t k = 0; k < offsets.size(); ++k) {
                                    gi[k] = slice_ch(g, offsets[k], offsets[k] + widths[k]);
                                  }
                                });
}

Value slice_ch(const Value& x, int64_t c0, int64_t c1) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || c0 < 0 || c1 > xs[1] || c0 >= c1) {
    throw std::invalid_argument("slice_ch: bad channel range");
  }
  Shape os = xs;
  os[1] = c1 - c0;
  NDTensor out(os);
  const int64_t B = xs[0], C = xs[1], plane = ch_plane(xs);
  const NDTensor& xv = x.val();
  for (int64_t b = 0; b < B; ++b) {
    const double* src = xv.data() + (b * C + c0) * plane;
    double* dst = out.data() + b * (c1 - c0) * plane;
    for (int64_t i = 0; i < (c1 - c0) * plane; ++i) dst[i] = src[i];
  }
  const int64_t after = C - c1;
  return x.tape->emplace(std::move(out), {x}, "slice_ch",
                         [c0, after](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = pad_ch(g, c0, after);
                         });
}

namespace {

Value pad_ch(const Value& x, int64_t before, int64_t after) {
  const Shape& xs = x.shape();
  Shape os = xs;
  os[1] = xs[1] + before + after;
  NDTensor out(os);
  const int64_t B = xs[0], C = xs[1], plane = ch_plane(xs);
  const NDTensor& xv = x.val();
  for (int64_t b = 0; b < B; ++b) {
    const double* src = xv.data() + b * C * plane;
    double* dst = out.data() + (b * os[1] + before) * plane;
    for (int64_t i = 0; i < C * plane; ++i) dst[i] = src[i];
  }
  const int64_t c0 = before, c1 = before + C;
  return x.tape->emplace(std::move(out), {x}, "pad_ch",
                         [c0, c1](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = slice_ch(g, c0, c1);
                         });
}

}  // namespace

// ---------------------------------------------------------------------------
// Haar ops
// ---------------------------------------------------------------------------

Value haar_dwt(const Value& x) {
  NDTensor out = wavediff::dwt_packed(x.val());
  return x.tape->emplace(std::move(out), {x}, "haar_dwt",
                         [](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = haar_idwt(g);
                         });
}

Value haar_idwt(const Value& y) {
  NDTensor out = wavediff::idwt_packed(y.val());
  return y.tape->emplace(std::move(out), {y}, "haar_idwt",
                         [](const Value&, const Value& g, std::vector<Value>& gi) {
                           gi[0] = haar_dwt(g);
                         });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Value group_norm_noaffine(const Value& x, int groups, double eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("group_norm: expected NCHW");
  const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (groups <= 0 || C % groups != 0) {
    throw std::invalid_argument("group_norm: channels " + std::to_string(C) +
                                " not divisible by groups " + std::to_string(groups));
  }
  const int64_t n = (C / groups) * H * W;
  Value xr = reshape(x, {B * groups, n});
  Value mu = scale(sum_last(xr), 1.0 / static_cast<double>(n));
  Value xc = sub(xr, mu);
  Value var = scale(sum_last(mul(xc, xc)), 1.0 / static_cast<double>(n));
  Value inv = rsqrt(add_scalar(var, eps));
  return reshape(mul(xc, inv), xs);
}

Value group_norm(const Value& x, int groups, const Value& gamma, const Value& beta, double eps) {
  const int64_t C = x.shape()[1];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw std::invalid_argument("group_norm: gamma/beta must have shape [C]");
  }
  Value xn = group_norm_noaffine(x, groups, eps);
  return add(mul(xn, reshape(gamma, {C, 1, 1})), reshape(beta, {C, 1, 1}));
}

Value mean_pool_hw(const Value& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("mean_pool_hw: expected NCHW");
  const int64_t B = xs[0], C = xs[1], hw = xs[2] * xs[3];
  Value flat = reshape(x, {B, C, hw});
  Value summed = sum_last(flat);  // [B,C,1]
  return scale(reshape(summed, {B, C}), 1.0 / static_cast<double>(hw));
}

Value detach(const Value& x) { return x.tape->leaf(x.val(), false); }

}  // namespace wavediff::ag
