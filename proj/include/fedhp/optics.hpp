#pragma once

#include <cstddef>
#include <vector>

#include "fedhp/common.hpp"
#include "fedhp/rng.hpp"

namespace fedhp::optics {

/// 3D signal, row-major with the band index fastest. Ground-truth cubes are
/// expected to satisfy validate() (finite, values in [0,1]); shifted and
/// shifted-back volumes reuse the type without the [0,1] constraint.
struct HyperspectralCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> values;

  static HyperspectralCube zeros(std::size_t h, std::size_t w, std::size_t n);

  float at(std::size_t h, std::size_t w, std::size_t n) const {
    return values[(h * width + w) * bands + n];
  }
  float& at(std::size_t h, std::size_t w, std::size_t n) {
    return values[(h * width + w) * bands + n];
  }
  std::size_t size() const { return height * width * bands; }

  /// Ground-truth contract: dims >= 1, finite, every value in [0,1].
  void validate() const;
};

/// Per-pixel transmittance pattern, entries in [0,1].
struct CodedAperture {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> transmittance;

  static CodedAperture zeros(std::size_t h, std::size_t w);
  static CodedAperture ones(std::size_t h, std::size_t w);

  float at(std::size_t h, std::size_t w) const {
    return transmittance[h * width + w];
  }
  float& at(std::size_t h, std::size_t w) { return transmittance[h * width + w]; }

  void validate() const;
};

/// Integer per-band horizontal displacement: band n is placed at
/// step*(n - anchor_band) relative to the anchor, and all placements are
/// translated so the smallest offset lands on column 0. Total widening is
/// step*(bands-1).
struct DispersionModel {
  int step = 2;
  std::size_t anchor_band = 0;

  std::size_t total_shift(std::size_t bands) const {
    return static_cast<std::size_t>(step) * (bands - 1);
  }
  /// Translated offset of band n; with step >= 0 this is step*n.
  std::size_t offset(std::size_t n) const {
    return static_cast<std::size_t>(step) * n;
  }
  void validate(std::size_t bands) const;
};

/// Single 2D snapshot; width = cube width + total shift. Values can exceed 1
/// because bands are summed.
struct Measurement {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  static Measurement zeros(std::size_t h, std::size_t w);

  float at(std::size_t h, std::size_t w) const { return values[h * width + w]; }
  float& at(std::size_t h, std::size_t w) { return values[h * width + w]; }

  void validate() const;
};

struct NoiseModel {
  enum class Kind { none, additive_gaussian };
  Kind kind = Kind::none;
  double sigma = 0.0;

  static NoiseModel off() { return {}; }
  static NoiseModel gaussian(double sigma) {
    return {Kind::additive_gaussian, sigma};
  }
  void validate() const;
};

/// Sampling law a client's coded apertures are drawn from.
///   bernoulli:           i.i.d. {0,1} entries with mean p
///   smoothed_threshold:  white noise box-blurred with half-width ceil(l),
///                        then thresholded at quantile t (binarize) or
///                        min-max rescaled to [0,1]
///   perturbed_reference: each reference entry flipped x -> 1-x with
///                        probability r
struct MaskDistribution {
  enum class Kind { bernoulli, smoothed_threshold, perturbed_reference };
  Kind kind = Kind::bernoulli;

  double p = 0.5;             // bernoulli
  double corr_length = 2.0;   // smoothed_threshold, > 0
  double threshold = 0.5;     // smoothed_threshold, in (0,1)
  bool binarize = true;       // smoothed_threshold
  CodedAperture reference;    // perturbed_reference
  double flip_rate = 0.0;     // perturbed_reference, in [0,1]

  static MaskDistribution bernoulli(double p);
  static MaskDistribution smoothed(double corr_length, double threshold,
                                   bool binarize);
  static MaskDistribution perturbed(CodedAperture reference, double flip_rate);

  bool distribution_equal(const MaskDistribution& other) const;
  void validate() const;
};

/// Two hardware-induced heterogeneity settings:
///   hardware_shaking:         all clients share one mask distribution,
///                             samples differ
///   manufacturing_discrepancy: at least two clients have different mask
///                             distributions
struct ScenarioSpec {
  enum class Kind { hardware_shaking, manufacturing_discrepancy };
  Kind kind = Kind::hardware_shaking;
  std::size_t clients = 3;
  std::size_t masks_per_client = 2;
  std::vector<MaskDistribution> distributions;  // one entry per client

  static ScenarioSpec shaking(MaskDistribution shared, std::size_t clients,
                              std::size_t masks_per_client);
  static ScenarioSpec discrepancy(std::vector<MaskDistribution> per_client,
                                  std::size_t masks_per_client);
  void validate() const;
};

/// The masks one client holds, together with the distribution that produced
/// them.
struct ClientMasks {
  MaskDistribution distribution;
  std::vector<CodedAperture> masks;
};

using Scenario = std::vector<ClientMasks>;

/// Disperses each band to its translated offset; uncovered regions are zero.
/// Output is H x (W + total_shift) x bands.
HyperspectralCube shift(const HyperspectralCube& cube,
                        const DispersionModel& disp);

/// CASSI forward model: each band is modulated by the mask, dispersed to its
/// offset, and all bands are summed (band-ascending, float64 accumulators);
/// noise is added last. Equivalently the mask travels with each band to its
/// shifted position.
Measurement encode(const HyperspectralCube& cube, const CodedAperture& mask,
                   const DispersionModel& disp, const NoiseModel& noise,
                   Rng& rng);

/// Noise-free convenience overload.
Measurement encode(const HyperspectralCube& cube, const CodedAperture& mask,
                   const DispersionModel& disp);

/// Reconstruction-input initialization: band n is the width-W window of the
/// measurement starting at that band's offset.
HyperspectralCube shift_back(const Measurement& y, const DispersionModel& disp,
                             std::size_t bands);

CodedAperture sample_mask(const MaskDistribution& dist, std::size_t h,
                          std::size_t w, Rng& rng);

/// Draws masks_per_client masks for every client from its recorded
/// distribution, on disjoint substreams of rng.
Scenario make_scenario(const ScenarioSpec& spec, std::size_t h, std::size_t w,
                       const Rng& rng);

}  // namespace fedhp::optics
