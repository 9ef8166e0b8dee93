#include "wavediff/wavelet.hpp"

#include <stdexcept>

namespace wavediff {

namespace {

void require_4d_even(const NDTensor& x, const char* op) {
  if (x.ndim() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected 4-D NCHW, got " +
                                shape_str(x.shape()));
  }
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw std::invalid_argument(std::string(op) + ": spatial extents must be even, got " +
                                shape_str(x.shape()));
  }
}

}  // namespace

NDTensor dwt_packed(const NDTensor& x) {
  require_4d_even(x, "dwt");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Hh = H / 2, Wh = W / 2;
  NDTensor y({B, 4 * C, Hh, Wh});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t i = 0; i < Hh; ++i) {
        for (int64_t j = 0; j < Wh; ++j) {
          const double a = x.at4(b, c, 2 * i, 2 * j);
          const double bb = x.at4(b, c, 2 * i, 2 * j + 1);
          const double cc = x.at4(b, c, 2 * i + 1, 2 * j);
          const double d = x.at4(b, c, 2 * i + 1, 2 * j + 1);
          // Kernels LL^T, LH^T, HL^T, HH^T with L=[1,1]/sqrt2, H=[-1,1]/sqrt2;
          // every entry is +-1/2.
          y.at4(b, c, i, j) = 0.5 * (a + bb + cc + d);
          y.at4(b, C + c, i, j) = 0.5 * (-a + bb - cc + d);
          y.at4(b, 2 * C + c, i, j) = 0.5 * (-a - bb + cc + d);
          y.at4(b, 3 * C + c, i, j) = 0.5 * (a - bb - cc + d);
        }
      }
    }
  }
  return y;
}

NDTensor idwt_packed(const NDTensor& y) {
  if (y.ndim() != 4) {
    throw std::invalid_argument("idwt: expected 4-D NCHW, got " + shape_str(y.shape()));
  }
  if (y.dim(1) % 4 != 0) {
    throw std::invalid_argument("idwt: channel count " + std::to_string(y.dim(1)) +
                                " not divisible by 4");
  }
  const int64_t B = y.dim(0), C = y.dim(1) / 4, Hh = y.dim(2), Wh = y.dim(3);
  NDTensor x({B, C, 2 * Hh, 2 * Wh});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t i = 0; i < Hh; ++i) {
        for (int64_t j = 0; j < Wh; ++j) {
          const double ll = y.at4(b, c, i, j);
          const double lh = y.at4(b, C + c, i, j);
          const double hl = y.at4(b, 2 * C + c, i, j);
          const double hh = y.at4(b, 3 * C + c, i, j);
          x.at4(b, c, 2 * i, 2 * j) = 0.5 * (ll - lh - hl + hh);
          x.at4(b, c, 2 * i, 2 * j + 1) = 0.5 * (ll + lh - hl - hh);
          x.at4(b, c, 2 * i + 1, 2 * j) = 0.5 * (ll - lh + hl - hh);
          x.at4(b, c, 2 * i + 1, 2 * j + 1) = 0.5 * (ll + lh + hl + hh);
        }
      }
    }
  }
  return x;
}

SubbandSet dwt(const NDTensor& x) {
  NDTensor packed = dwt_packed(x);
  return unpack(packed, 1);
}

NDTensor idwt(const SubbandSet& s) { return idwt_packed(pack(s)); }

NDTensor pack(const SubbandSet& s) {
  if (!s.ll.same_shape(s.lh) || !s.ll.same_shape(s.hl) || !s.ll.same_shape(s.hh)) {
    throw std::invalid_argument("pack: subband shapes differ");
  }
  const int64_t B = s.ll.dim(0), C = s.ll.dim(1), H = s.ll.dim(2), W = s.ll.dim(3);
  NDTensor y({B, 4 * C, H, W});
  const int64_t plane = C * H * W;
  for (int64_t b = 0; b < B; ++b) {
    double* dst = y.data() + b * 4 * plane;
    const NDTensor* bands[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
    for (int k = 0; k < 4; ++k) {
      const double* src = bands[k]->data() + b * plane;
      for (int64_t i = 0; i < plane; ++i) dst[k * plane + i] = src[i];
    }
  }
  return y;
}

SubbandSet unpack(const NDTensor& y, int level) {
  if (y.ndim() != 4 || y.dim(1) % 4 != 0) {
    throw std::invalid_argument("unpack: need NCHW with channels divisible by 4, got " +
                                shape_str(y.shape()));
  }
  const int64_t B = y.dim(0), C = y.dim(1) / 4, H = y.dim(2), W = y.dim(3);
  SubbandSet s;
  s.level = level;
  NDTensor* bands[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
  const int64_t plane = C * H * W;
  for (int k = 0; k < 4; ++k) {
    *bands[k] = NDTensor({B, C, H, W});
    for (int64_t b = 0; b < B; ++b) {
      const double* src = y.data() + (b * 4 + k) * plane;
      double* dst = bands[k]->data() + b * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i];
    }
  }
  return s;
}

NDTensor multilevel_dwt(const NDTensor& x, int levels) {
  if (levels < 1) throw std::invalid_argument("multilevel_dwt: levels must be >= 1");
  NDTensor y = x;
  for (int k = 0; k < levels; ++k) y = dwt_packed(y);
  return y;
}

NDTensor multilevel_idwt(const NDTensor& y, int levels) {
  if (levels < 1) throw std::invalid_argument("multilevel_idwt: levels must be >= 1");
  NDTensor x = y;
  for (int k = 0; k < levels; ++k) x = idwt_packed(x);
  return x;
}

}  // namespace wavediff
