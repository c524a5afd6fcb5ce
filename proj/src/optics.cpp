#include "fedhp/optics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fedhp::optics {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace

HyperspectralCube HyperspectralCube::zeros(std::size_t h, std::size_t w,
                                           std::size_t n) {
  return {h, w, n, std::vector<float>(h * w * n, 0.0f)};
}

void HyperspectralCube::validate() const {
  require(height >= 1 && width >= 1 && bands >= 1, "cube: empty dimension");
  require(values.size() == size(), "cube: value count does not match shape");
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericalError("cube: non-finite value");
    require(v >= 0.0f && v <= 1.0f, "cube: value outside [0,1]");
  }
}

CodedAperture CodedAperture::zeros(std::size_t h, std::size_t w) {
  return {h, w, std::vector<float>(h * w, 0.0f)};
}

CodedAperture CodedAperture::ones(std::size_t h, std::size_t w) {
  return {h, w, std::vector<float>(h * w, 1.0f)};
}

void CodedAperture::validate() const {
  require(height >= 1 && width >= 1, "mask: empty dimension");
  require(transmittance.size() == height * width,
          "mask: value count does not match shape");
  for (float v : transmittance) {
    if (!std::isfinite(v)) throw NumericalError("mask: non-finite value");
    require(v >= 0.0f && v <= 1.0f, "mask: transmittance outside [0,1]");
  }
}

void DispersionModel::validate(std::size_t bands) const {
  require(step >= 0, "dispersion: step must be >= 0");
  require(anchor_band < bands, "dispersion: anchor band out of range");
}

Measurement Measurement::zeros(std::size_t h, std::size_t w) {
  return {h, w, std::vector<float>(h * w, 0.0f)};
}

void Measurement::validate() const {
  require(height >= 1 && width >= 1, "measurement: empty dimension");
  require(values.size() == height * width,
          "measurement: value count does not match shape");
  for (float v : values)
    if (!std::isfinite(v)) throw NumericalError("measurement: non-finite value");
}

void NoiseModel::validate() const {
  require(sigma >= 0.0, "noise: sigma must be >= 0");
  if (kind == Kind::none) require(sigma == 0.0, "noise: sigma must be 0 when off");
}

MaskDistribution MaskDistribution::bernoulli(double p) {
  MaskDistribution d;
  d.kind = Kind::bernoulli;
  d.p = p;
  return d;
}

MaskDistribution MaskDistribution::smoothed(double corr_length,
                                            double threshold, bool binarize) {
  MaskDistribution d;
  d.kind = Kind::smoothed_threshold;
  d.corr_length = corr_length;
  d.threshold = threshold;
  d.binarize = binarize;
  return d;
}

MaskDistribution MaskDistribution::perturbed(CodedAperture reference,
                                             double flip_rate) {
  MaskDistribution d;
  d.kind = Kind::perturbed_reference;
  d.reference = std::move(reference);
  d.flip_rate = flip_rate;
  return d;
}

bool MaskDistribution::distribution_equal(const MaskDistribution& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case Kind::bernoulli:
      return p == other.p;
    case Kind::smoothed_threshold:
      return corr_length == other.corr_length && threshold == other.threshold &&
             binarize == other.binarize;
    case Kind::perturbed_reference:
      return flip_rate == other.flip_rate &&
             reference.height == other.reference.height &&
             reference.width == other.reference.width &&
             reference.transmittance == other.reference.transmittance;
  }
  return false;
}

void MaskDistribution::validate() const {
  switch (kind) {
    case Kind::bernoulli:
      require(p >= 0.0 && p <= 1.0, "mask distribution: p outside [0,1]");
      break;
    case Kind::smoothed_threshold:
      require(corr_length > 0.0, "mask distribution: correlation length <= 0");
      require(threshold > 0.0 && threshold < 1.0,
              "mask distribution: threshold outside (0,1)");
      break;
    case Kind::perturbed_reference:
      require(flip_rate >= 0.0 && flip_rate <= 1.0,
              "mask distribution: flip rate outside [0,1]");
      reference.validate();
      break;
  }
}

ScenarioSpec ScenarioSpec::shaking(MaskDistribution shared, std::size_t clients,
                                   std::size_t masks_per_client) {
  ScenarioSpec s;
  s.kind = Kind::hardware_shaking;
  s.clients = clients;
  s.masks_per_client = masks_per_client;
  s.distributions.assign(clients, std::move(shared));
  return s;
}

ScenarioSpec ScenarioSpec::discrepancy(std::vector<MaskDistribution> per_client,
                                       std::size_t masks_per_client) {
  ScenarioSpec s;
  s.kind = Kind::manufacturing_discrepancy;
  s.clients = per_client.size();
  s.masks_per_client = masks_per_client;
  s.distributions = std::move(per_client);
  return s;
}

void ScenarioSpec::validate() const {
  require(clients >= 1, "scenario: need at least one client");
  require(masks_per_client >= 1, "scenario: need at least one mask per client");
  require(distributions.size() == clients,
          "scenario: one distribution per client required");
  for (const auto& d : distributions) d.validate();
  if (kind == Kind::hardware_shaking) {
    for (std::size_t c = 1; c < clients; ++c)
      require(distributions[0].distribution_equal(distributions[c]),
              "scenario: hardware shaking requires one shared distribution");
  } else if (clients > 1) {
    bool any_differ = false;
    for (std::size_t a = 0; a < clients && !any_differ; ++a)
      for (std::size_t b = a + 1; b < clients; ++b)
        if (!distributions[a].distribution_equal(distributions[b])) {
          any_differ = true;
          break;
        }
    require(any_differ,
            "scenario: manufacturing discrepancy requires at least two "
            "distinct distributions");
  }
}

HyperspectralCube shift(const HyperspectralCube& cube,
                        const DispersionModel& disp) {
  disp.validate(cube.bands);
  const std::size_t delta = disp.total_shift(cube.bands);
  HyperspectralCube out =
      HyperspectralCube::zeros(cube.height, cube.width + delta, cube.bands);
  for (std::size_t n = 0; n < cube.bands; ++n) {
    const std::size_t off = disp.offset(n);
    for (std::size_t h = 0; h < cube.height; ++h)
      for (std::size_t w = 0; w < cube.width; ++w)
        out.at(h, w + off, n) = cube.at(h, w, n);
  }
  return out;
}

Measurement encode(const HyperspectralCube& cube, const CodedAperture& mask,
                   const DispersionModel& disp, const NoiseModel& noise,
                   Rng& rng) {
  if (mask.height != cube.height || mask.width != cube.width)
    throw InvalidInput("encode: mask dimensions must match cube spatial dims");
  disp.validate(cube.bands);
  noise.validate();

  const std::size_t wd = cube.width + disp.total_shift(cube.bands);
  std::vector<double> acc(cube.height * wd, 0.0);
  // Band-ascending summation order is part of the contract.
  for (std::size_t n = 0; n < cube.bands; ++n) {
    const std::size_t off = disp.offset(n);
    for (std::size_t h = 0; h < cube.height; ++h)
      for (std::size_t w = 0; w < cube.width; ++w)
        acc[h * wd + w + off] += static_cast<double>(cube.at(h, w, n)) *
                                 static_cast<double>(mask.at(h, w));
  }
  if (noise.kind == NoiseModel::Kind::additive_gaussian)
    for (auto& v : acc) v += noise.sigma * rng.normal();

  Measurement y = Measurement::zeros(cube.height, wd);
  for (std::size_t i = 0; i < acc.size(); ++i)
    y.values[i] = static_cast<float>(acc[i]);
  return y;
}

Measurement encode(const HyperspectralCube& cube, const CodedAperture& mask,
                   const DispersionModel& disp) {
  Rng unused(0);
  return encode(cube, mask, disp, NoiseModel::off(), unused);
}

HyperspectralCube shift_back(const Measurement& y, const DispersionModel& disp,
                             std::size_t bands) {
  if (bands < 1) throw InvalidInput("shift_back: bands must be >= 1");
  disp.validate(bands);
  const std::size_t delta = disp.total_shift(bands);
  if (y.width < delta + 1)
    throw InvalidInput("shift_back: measurement narrower than total shift");
  const std::size_t w_out = y.width - delta;
  HyperspectralCube out = HyperspectralCube::zeros(y.height, w_out, bands);
  for (std::size_t n = 0; n < bands; ++n) {
    const std::size_t off = disp.offset(n);
    if (off + w_out > y.width)
      throw InvalidInput("shift_back: band window out of range");
    for (std::size_t h = 0; h < y.height; ++h)
      for (std::size_t w = 0; w < w_out; ++w)
        out.at(h, w, n) = y.at(h, w + off);
  }
  return out;
}

namespace {

CodedAperture sample_bernoulli(double p, std::size_t h, std::size_t w,
                               Rng& rng) {
  CodedAperture m = CodedAperture::zeros(h, w);
  for (auto& v : m.transmittance) v = rng.uniform() < p ? 1.0f : 0.0f;
  return m;
}

CodedAperture sample_smoothed(const MaskDistribution& d, std::size_t h,
                              std::size_t w, Rng& rng) {
  std::vector<double> noise(h * w);
  for (auto& v : noise) v = rng.uniform();

  // Box blur with half-width ceil(l); kernel normalized over in-range taps.
  const long r = static_cast<long>(std::ceil(d.corr_length));
  std::vector<double> blurred(h * w, 0.0);
  for (long i = 0; i < static_cast<long>(h); ++i) {
    for (long j = 0; j < static_cast<long>(w); ++j) {
      double sum = 0.0;
      std::size_t count = 0;
      for (long di = -r; di <= r; ++di) {
        for (long dj = -r; dj <= r; ++dj) {
          const long ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) ||
              jj >= static_cast<long>(w))
            continue;
          sum += noise[static_cast<std::size_t>(ii) * w +
                       static_cast<std::size_t>(jj)];
          ++count;
        }
      }
      blurred[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)] =
          sum / static_cast<double>(count);
    }
  }

  CodedAperture m = CodedAperture::zeros(h, w);
  if (d.binarize) {
    std::vector<double> sorted = blurred;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t q = std::min(
        sorted.size() - 1,
        static_cast<std::size_t>(d.threshold * static_cast<double>(sorted.size())));
    const double cut = sorted[q];
    for (std::size_t i = 0; i < blurred.size(); ++i)
      m.transmittance[i] = blurred[i] > cut ? 1.0f : 0.0f;
  } else {
    const auto [lo, hi] = std::minmax_element(blurred.begin(), blurred.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < blurred.size(); ++i)
      m.transmittance[i] =
          range > 0.0 ? static_cast<float>((blurred[i] - *lo) / range) : 0.0f;
  }
  return m;
}

CodedAperture sample_perturbed(const MaskDistribution& d, std::size_t h,
                               std::size_t w, Rng& rng) {
  if (d.reference.height != h || d.reference.width != w)
    throw InvalidInput("sample_mask: reference dimensions mismatch");
  CodedAperture m = d.reference;
  for (auto& v : m.transmittance)
    if (rng.uniform() < d.flip_rate) v = 1.0f - v;
  return m;
}

}  // namespace

CodedAperture sample_mask(const MaskDistribution& dist, std::size_t h,
                          std::size_t w, Rng& rng) {
  dist.validate();
  if (h < 1 || w < 1) throw InvalidInput("sample_mask: empty dimensions");
  switch (dist.kind) {
    case MaskDistribution::Kind::bernoulli:
      return sample_bernoulli(dist.p, h, w, rng);
    case MaskDistribution::Kind::smoothed_threshold:
      return sample_smoothed(dist, h, w, rng);
    case MaskDistribution::Kind::perturbed_reference:
      return sample_perturbed(dist, h, w, rng);
  }
  throw InvalidInput("sample_mask: unknown distribution kind");
}

Scenario make_scenario(const ScenarioSpec& spec, std::size_t h, std::size_t w,
                       const Rng& rng) {
  spec.validate();
  Scenario out;
  out.reserve(spec.clients);
  for (std::size_t c = 0; c < spec.clients; ++c) {
    ClientMasks cm;
    cm.distribution = spec.distributions[c];
    const Rng client_rng = rng.fork(c);
    for (std::size_t k = 0; k < spec.masks_per_client; ++k) {
      Rng mask_rng = client_rng.fork(k);
      cm.masks.push_back(sample_mask(cm.distribution, h, w, mask_rng));
    }
    out.push_back(std::move(cm));
  }
  return out;
}

}  // namespace fedhp::optics
