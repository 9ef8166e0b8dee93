#pragma once

#include "wavediff/tensor.hpp"

namespace wavediff {

/// The four Haar subbands of one decomposition level. Channel order
/// [ll, lh, hl, hh] is the frozen wire-format contract everywhere a packed
/// layout appears (files, checkpoints, network tensors).
struct SubbandSet {
  NDTensor ll, lh, hl, hh;
  int level = 1;
};

/// Orthonormal Haar analysis: per-channel stride-2 correlation with the four
/// 2x2 kernels built from L = [1,1]/sqrt(2) and H = [-1,1]/sqrt(2). Input
/// spatial extents must be even; no padding.
SubbandSet dwt(const NDTensor& x);

/// Exact inverse of dwt (the kernels form an orthonormal 4x4 map per block).
NDTensor idwt(const SubbandSet& s);

/// Channel-concatenate subbands: [B,C,H,W] per band -> [B,4C,H,W].
NDTensor pack(const SubbandSet& s);
/// Split a packed tensor back into subbands; channels must divide by 4.
SubbandSet unpack(const NDTensor& y, int level = 1);

/// Raw packed-layout kernels (dwt+pack / unpack+idwt fused); these back both
/// the public API above and the autograd ops.
NDTensor dwt_packed(const NDTensor& x);
NDTensor idwt_packed(const NDTensor& y);

/// Full packet decomposition: dwt+pack applied to all channels, repeated
/// `levels` times. [B,C,H,W] -> [B,4^k*C,H/2^k,W/2^k].
NDTensor multilevel_dwt(const NDTensor& x, int levels);
NDTensor multilevel_idwt(const NDTensor& y, int levels);

}  // namespace wavediff
