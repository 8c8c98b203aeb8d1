#pragma once

// Training objectives as graph builders over the valid-pixel set.
// Depth-like inputs are H x W nodes; ground truth and mask are constants.
// Every loss is normalized by N, the number of valid pixels.

#include "uqdepth/array.hpp"
#include "uqdepth/autodiff.hpp"

namespace uqd {

struct LossConfig {
  double lambda = 0.15;
  double alpha = 0.2;
  double variance_floor = 1e-6;

  void validate() const;
};

// (1/N) sum d_i^2 - (lambda/N^2) (sum d_i)^2,  d_i = log y_i - log gt_i
ad::Var si_loss(ad::Var y, const Array& gt, const Mask& mask, const LossConfig& cfg = {});

// (1/N) sum [C_i (1 - lambda) d_i^2 - alpha log C_i]
//
// The scale-invariant term is applied per pixel, i.e. evaluated at N = 1,
// which reduces it to (1 - lambda) d_i^2.
ad::Var lc_loss(ad::Var y, ad::Var confidence, const Array& gt, const Mask& mask, const LossConfig& cfg = {});

// (1/N) sum 1/2 [(gt_i - mu_i)^2 / s2_i + log s2_i], s2 clamped to variance_floor.
ad::Var gnll_loss(ad::Var mu, ad::Var s2, const Array& gt, const Mask& mask, const LossConfig& cfg = {});

}  // namespace uqd
