#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedhp/common.hpp"
#include "fedhp/optics.hpp"

namespace fedhp::metrics {

/// Per-band quality plus band means. psnr is computed from the whole-signal
/// MSE; ssim is the mean over bands.
struct QualityReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<double> band_psnr;
  std::vector<double> band_ssim;
};

/// Cap reported when MSE is exactly zero, so CSV stays finite and parseable.
inline constexpr double kPsnrCapDb = 99.0;

/// 10*log10(peak^2 / MSE) with the zero-MSE cap.
double psnr(std::span<const float> a, std::span<const float> b, double peak);

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5, K1=0.01,
/// K2=0.03, dynamic range 1). Both images must be at least 11x11.
double ssim(std::span<const float> a, std::span<const float> b, std::size_t h,
            std::size_t w);

/// PSNR over the full cube plus per-band PSNR/SSIM and the band-mean SSIM.
QualityReport evaluate_cube(const optics::HyperspectralCube& recon,
                            const optics::HyperspectralCube& truth);

}  // namespace fedhp::metrics
