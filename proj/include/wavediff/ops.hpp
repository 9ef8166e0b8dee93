#pragma once

#include <vector>

#include "wavediff/autograd.hpp"

namespace wavediff::ag {

// ---------------------------------------------------------------------------
// Elementwise arithmetic. add/mul broadcast numpy-style (trailing alignment,
// extents equal or 1); everything else requires exact shapes.
// Derivatives: d(a+b) = (da, db); d(a*b) = (b, a); broadcast axes are summed
// out on the way back.
// ---------------------------------------------------------------------------
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double c);

// ---------------------------------------------------------------------------
// Linear maps.
// ---------------------------------------------------------------------------
Value matmul(const Value& a, const Value& b, bool trans_a = false, bool trans_b = false);
Value bmm(const Value& a, const Value& b, bool trans_a = false, bool trans_b = false);
/// x[B,N] * w[M,N]^T + bias[M] -> [B,M]
Value dense(const Value& x, const Value& w, const Value& bias);

enum class PadMode { kZero, kReflect };

/// Cross-correlation, NCHW. Odd kernels or stride-2 2x2 kernels; zero or
/// reflect padding. Bias may be an invalid Value for none.
Value conv2d(const Value& x, const Value& w, const Value& bias, int stride, int pad,
             PadMode mode = PadMode::kZero);

Value pad_reflect(const Value& x, int pad);

// ---------------------------------------------------------------------------
// Activations. silu(x) = x*sigmoid(x) is composed, so every derivative order
// is exact; leaky_relu/abs use the a.e. subgradient (mask frozen).
// ---------------------------------------------------------------------------
Value sigmoid(const Value& x);
Value tanh_op(const Value& x);
Value softplus(const Value& x);  // log(1 + e^x), overflow-safe
Value leaky_relu(const Value& x, double slope = 0.2);
Value silu(const Value& x);
Value abs_op(const Value& x);
Value rsqrt(const Value& x);  // x^(-1/2), x > 0

// ---------------------------------------------------------------------------
// Reductions and shape ops.
// ---------------------------------------------------------------------------
Value sum_all(const Value& x);   // -> [1]
Value mean_all(const Value& x);  // -> [1]
Value sum_last(const Value& x);  // sum over last axis, keepdim -> [..., 1]
Value sum_to(const Value& x, Shape target);      // reduce broadcast axes
Value broadcast_to(const Value& x, Shape target);
Value reshape(const Value& x, Shape shape);
Value softmax_last(const Value& x);

// Channel-axis (axis 1) surgery on NCHW tensors.
Value concat_ch(const std::vector<Value>& parts);
Value slice_ch(const Value& x, int64_t c0, int64_t c1);

// ---------------------------------------------------------------------------
// Orthonormal Haar transform on packed subbands, channel blocks [ll,lh,hl,hh].
// Orthonormality makes the adjoint the inverse, so each op is the other's vjp.
// ---------------------------------------------------------------------------
Value haar_dwt(const Value& x);   // [B,C,H,W] -> [B,4C,H/2,W/2]
Value haar_idwt(const Value& y);  // [B,4C,H,W] -> [B,C,2H,2W]

// ---------------------------------------------------------------------------
// Composites.
// ---------------------------------------------------------------------------
/// Per-group standardization then affine. eps defaults to 1e-6; channel count
/// must divide by groups.
Value group_norm(const Value& x, int groups, const Value& gamma, const Value& beta,
                 double eps = 1e-6);
Value group_norm_noaffine(const Value& x, int groups, double eps = 1e-6);
Value mean_pool_hw(const Value& x);  // [B,C,H,W] -> [B,C]

/// Cuts the graph: returns a fresh non-differentiable leaf with x's value.
Value detach(const Value& x);

}  // namespace wavediff::ag
