// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "mspnf/scene_io.hpp"

namespace mspnf {

/// Reported in place of +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at kPsnrCap.
double psnr(const Image& a, const Image& b);

double mse(const Image& a, const Image& b);

/// Gaussian-window SSIM (11x11, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2) over valid
/// window positions, averaged over positions and then channels.
double ssim(const Image& a, const Image& b);

}  // namespace mspnf
