#include "fedhp/metrics.hpp"

#include <cmath>

namespace fedhp::metrics {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kRange = 1.0;

std::vector<double> gaussian_kernel_1d() {
  std::vector<double> k(kWindow);
  const double c = (kWindow - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-mode separable Gaussian filter: output is (h-10) x (w-10).
std::vector<double> gauss_filter_valid(std::span<const double> img,
                                       std::size_t h, std::size_t w) {
  static const std::vector<double> k = gaussian_kernel_1d();
  const std::size_t wo = w - kWindow + 1;
  const std::size_t ho = h - kWindow + 1;
  std::vector<double> rows(h * wo, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += k[t] * img[i * w + j + t];
      rows[i * wo + j] = s;
    }
  std::vector<double> out(ho * wo, 0.0);
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += k[t] * rows[(i + t) * wo + j];
      out[i * wo + j] = s;
    }
  return out;
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b, double peak) {
  if (a.size() != b.size()) throw InvalidInput("psnr: size mismatch");
  if (a.empty()) throw InvalidInput("psnr: empty input");
  if (peak <= 0.0) throw InvalidInput("psnr: peak must be > 0");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCapDb;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(std::span<const float> a, std::span<const float> b, std::size_t h,
            std::size_t w) {
  if (a.size() != b.size() || a.size() != h * w)
    throw InvalidInput("ssim: size mismatch");
  if (h < kWindow || w < kWindow)
    throw InvalidInput("ssim: image smaller than 11x11 window");

  std::vector<double> da(a.size()), db(b.size()), daa(a.size()), dbb(a.size()),
      dab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] = a[i];
    db[i] = b[i];
    daa[i] = da[i] * da[i];
    dbb[i] = db[i] * db[i];
    dab[i] = da[i] * db[i];
  }
  const auto mu_a = gauss_filter_valid(da, h, w);
  const auto mu_b = gauss_filter_valid(db, h, w);
  const auto e_aa = gauss_filter_valid(daa, h, w);
  const auto e_bb = gauss_filter_valid(dbb, h, w);
  const auto e_ab = gauss_filter_valid(dab, h, w);

  const double c1 = (kK1 * kRange) * (kK1 * kRange);
  const double c2 = (kK2 * kRange) * (kK2 * kRange);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_a.size());
}

QualityReport evaluate_cube(const optics::HyperspectralCube& recon,
                            const optics::HyperspectralCube& truth) {
  if (recon.height != truth.height || recon.width != truth.width ||
      recon.bands != truth.bands)
    throw InvalidInput("evaluate_cube: shape mismatch");

  QualityReport r;
  r.psnr_db = psnr(recon.values, truth.values, 1.0);

  const std::size_t hw = recon.height * recon.width;
  std::vector<float> ba(hw), bb(hw);
  double ssim_acc = 0.0;
  for (std::size_t n = 0; n < recon.bands; ++n) {
    for (std::size_t h = 0; h < recon.height; ++h)
      for (std::size_t w = 0; w < recon.width; ++w) {
        ba[h * recon.width + w] = recon.at(h, w, n);
        bb[h * recon.width + w] = truth.at(h, w, n);
      }
    r.band_psnr.push_back(psnr(ba, bb, 1.0));
    r.band_ssim.push_back(ssim(ba, bb, recon.height, recon.width));
    ssim_acc += r.band_ssim.back();
  }
  r.ssim = ssim_acc / static_cast<double>(recon.bands);
  return r;
}

}  // namespace fedhp::metrics
