#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedhp/optics.hpp"

using namespace fedhp;
using namespace fedhp::optics;

namespace {

HyperspectralCube random_cube(std::size_t h, std::size_t w, std::size_t n,
                              Rng& rng) {
  HyperspectralCube c = HyperspectralCube::zeros(h, w, n);
  for (auto& v : c.values) v = static_cast<float>(rng.uniform());
  return c;
}

CodedAperture random_mask(std::size_t h, std::size_t w, Rng& rng) {
  CodedAperture m = CodedAperture::zeros(h, w);
  for (auto& v : m.transmittance) v = static_cast<float>(rng.uniform());
  return m;
}

// Independent encoder: for every output pixel, walk bands in ascending order
// and add the (mask * cube) contribution whose dispersed position lands
// there. Double accumulation, cast to float once, mirroring the contract.
Measurement encode_oracle(const HyperspectralCube& x, const CodedAperture& m,
                          const DispersionModel& d) {
  const std::size_t delta = d.total_shift(x.bands);
  Measurement y = Measurement::zeros(x.height, x.width + delta);
  for (std::size_t h = 0; h < x.height; ++h)
    for (std::size_t wo = 0; wo < y.width; ++wo) {
      double acc = 0.0;
      for (std::size_t n = 0; n < x.bands; ++n) {
        const std::size_t off = d.offset(n);
        if (wo < off || wo - off >= x.width) continue;
        const std::size_t w = wo - off;
        acc += static_cast<double>(x.at(h, w, n)) *
               static_cast<double>(m.at(h, w));
      }
      y.at(h, wo) = static_cast<float>(acc);
    }
  return y;
}

// Per-pixel placement oracle for shift.
HyperspectralCube shift_oracle(const HyperspectralCube& x,
                               const DispersionModel& d) {
  const std::size_t delta = d.total_shift(x.bands);
  HyperspectralCube out =
      HyperspectralCube::zeros(x.height, x.width + delta, x.bands);
  for (std::size_t h = 0; h < x.height; ++h)
    for (std::size_t w = 0; w < x.width; ++w)
      for (std::size_t n = 0; n < x.bands; ++n)
        out.at(h, w + d.offset(n), n) = x.at(h, w, n);
  return out;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  return a.empty() || std::memcmp(a.data(), b.data(), a.size() * 4) == 0;
}

}  // namespace

TEST_CASE("shift: single band is the identity") {
  Rng rng(7);
  auto c = random_cube(4, 5, 1, rng);
  for (int s : {0, 1, 3}) {
    auto out = shift(c, DispersionModel{s, 0});
    CHECK(out.width == 5);
    CHECK(bit_equal(out.values, c.values));
  }
}

TEST_CASE("shift: 1x1x2 cube lands at forced offsets") {
  HyperspectralCube c{1, 1, 2, {0.25f, 0.75f}};
  auto out = shift(c, DispersionModel{1, 0});
  REQUIRE(out.width == 2);
  CHECK(out.at(0, 0, 0) == 0.25f);
  CHECK(out.at(0, 1, 0) == 0.0f);
  CHECK(out.at(0, 0, 1) == 0.0f);
  CHECK(out.at(0, 1, 1) == 0.75f);
}

TEST_CASE("shift: random cubes match the placement oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto c = random_cube(3, 3, 3, rng);
    DispersionModel d{2, rng.below(3)};
    auto got = shift(c, d);
    auto want = shift_oracle(c, d);
    CHECK(bit_equal(got.values, want.values));
  }
}

TEST_CASE("encode: all-ones mask with one band returns the band") {
  Rng rng(3);
  auto c = random_cube(4, 4, 1, rng);
  auto y = encode(c, CodedAperture::ones(4, 4), DispersionModel{2, 0});
  CHECK(bit_equal(y.values, c.values));
}

TEST_CASE("encode: all-zeros mask annihilates") {
  Rng rng(4);
  auto c = random_cube(5, 3, 4, rng);
  auto y = encode(c, CodedAperture::zeros(5, 3), DispersionModel{1, 0});
  for (float v : y.values) CHECK(v == 0.0f);
}

TEST_CASE("encode: 2x2x2 hand-enumerated case") {
  // Bands: band0 = [a b; c d], band1 = [e f; g h]; mask [m0 m1; m2 m3]; s=1.
  HyperspectralCube c{2, 2, 2, {
      0.1f, 0.5f,   // (0,0,:) = a, e
      0.2f, 0.6f,   // (0,1,:) = b, f
      0.3f, 0.7f,   // (1,0,:) = c, g
      0.4f, 0.8f,   // (1,1,:) = d, h
  }};
  CodedAperture m{2, 2, {1.0f, 0.5f, 0.25f, 1.0f}};
  auto y = encode(c, m, DispersionModel{1, 0});
  REQUIRE(y.width == 3);
  // Row 0: [a*1, b*0.5 + e*1, f*0.5]
  CHECK(y.at(0, 0) == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(y.at(0, 1) == doctest::Approx(0.2 * 0.5 + 0.5).epsilon(1e-7));
  CHECK(y.at(0, 2) == doctest::Approx(0.6 * 0.5).epsilon(1e-7));
  // Row 1: [c*0.25, d*1 + g*0.25, h*1]
  CHECK(y.at(1, 0) == doctest::Approx(0.3 * 0.25).epsilon(1e-7));
  CHECK(y.at(1, 1) == doctest::Approx(0.4 + 0.7 * 0.25).epsilon(1e-7));
  CHECK(y.at(1, 2) == doctest::Approx(0.8).epsilon(1e-7));
  CHECK(bit_equal(y.values, encode_oracle(c, m, DispersionModel{1, 0}).values));
}

TEST_CASE("encode: bit-exact against the naive oracle on random instances") {
  Rng rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t h = 1 + rng.below(8);
    const std::size_t w = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(6);
    auto c = random_cube(h, w, n, rng);
    auto m = random_mask(h, w, rng);
    DispersionModel d{static_cast<int>(rng.below(4)), rng.below(n)};
    CHECK(bit_equal(encode(c, m, d).values, encode_oracle(c, m, d).values));
  }
}

TEST_CASE("encode: linearity within 1e-5 relative (noise off)") {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    auto x1 = random_cube(6, 6, 4, rng);
    auto x2 = random_cube(6, 6, 4, rng);
    auto m = random_mask(6, 6, rng);
    const double a = rng.uniform() * 4.0 - 2.0;
    const double b = rng.uniform() * 4.0 - 2.0;
    HyperspectralCube mix = x1;
    for (std::size_t i = 0; i < mix.values.size(); ++i)
      mix.values[i] = static_cast<float>(a * x1.values[i] + b * x2.values[i]);
    DispersionModel d{2, 0};
    auto ym = encode(mix, m, d);
    auto y1 = encode(x1, m, d);
    auto y2 = encode(x2, m, d);
    for (std::size_t i = 0; i < ym.values.size(); ++i) {
      const double want = a * y1.values[i] + b * y2.values[i];
      const double got = ym.values[i];
      CHECK(std::abs(got - want) <=
            1e-5 * std::max(1.0, std::max(std::abs(got), std::abs(want))));
    }
  }
}

TEST_CASE("encode: mask monotonicity on nonnegative cubes") {
  Rng rng(17);
  auto c = random_cube(5, 5, 3, rng);
  auto m1 = random_mask(5, 5, rng);
  CodedAperture m2 = m1;
  for (auto& v : m2.transmittance)
    v = std::min(1.0f, v + static_cast<float>(rng.uniform()) * (1.0f - v));
  DispersionModel d{1, 0};
  auto y1 = encode(c, m1, d);
  auto y2 = encode(c, m2, d);
  for (std::size_t i = 0; i < y1.values.size(); ++i)
    CHECK(y1.values[i] <= y2.values[i] + 1e-12f);
}

TEST_CASE("encode: shape law and dimension mismatch") {
  Rng rng(5);
  auto c = random_cube(4, 6, 5, rng);
  for (int s : {0, 1, 2, 3}) {
    auto y = encode(c, CodedAperture::ones(4, 6), DispersionModel{s, 0});
    CHECK(y.width == 6 + static_cast<std::size_t>(s) * 4);
  }
  CHECK_THROWS_AS(encode(c, CodedAperture::ones(3, 6), DispersionModel{1, 0}),
                  InvalidInput);
}

TEST_CASE("encode: gaussian noise is deterministic per seed") {
  Rng rng(99);
  auto c = random_cube(4, 4, 2, rng);
  auto m = random_mask(4, 4, rng);
  Rng n1(1234), n2(1234), n3(777);
  auto y1 = encode(c, m, DispersionModel{1, 0}, NoiseModel::gaussian(0.05), n1);
  auto y2 = encode(c, m, DispersionModel{1, 0}, NoiseModel::gaussian(0.05), n2);
  auto y3 = encode(c, m, DispersionModel{1, 0}, NoiseModel::gaussian(0.05), n3);
  CHECK(bit_equal(y1.values, y2.values));
  CHECK_FALSE(bit_equal(y1.values, y3.values));
}

TEST_CASE("shift_back: zero shift copies the measurement to every band") {
  Measurement y{2, 3, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}};
  auto cube = shift_back(y, DispersionModel{0, 0}, 3);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 3; ++w)
        CHECK(cube.at(h, w, n) == y.at(h, w));
}

TEST_CASE("shift_back: 1x2 measurement splits into per-band windows") {
  Measurement y{1, 2, {0.3f, 0.9f}};
  auto cube = shift_back(y, DispersionModel{1, 0}, 2);
  REQUIRE(cube.width == 1);
  CHECK(cube.at(0, 0, 0) == 0.3f);
  CHECK(cube.at(0, 0, 1) == 0.9f);
}

TEST_CASE("shift_back: windows match direct extraction after shift") {
  Rng rng(21);
  auto c = random_cube(4, 5, 3, rng);
  DispersionModel d{2, 0};
  auto shifted = shift(c, d);
  // Sum over bands (what a measurement with an all-ones mask would hold).
  Measurement y = encode(c, CodedAperture::ones(4, 5), d);
  auto back = shift_back(y, d, 3);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 5; ++w)
        CHECK(back.at(h, w, n) == y.at(h, w + d.offset(n)));
  // Round trip through a single band recovers the cube exactly.
  auto c1 = random_cube(4, 5, 1, rng);
  auto y1 = encode(c1, CodedAperture::ones(4, 5), d);
  auto b1 = shift_back(y1, d, 1);
  CHECK(bit_equal(b1.values, c1.values));
  CHECK_THROWS_AS(shift_back(Measurement{2, 3, {0, 0, 0, 0, 0, 0}},
                             DispersionModel{2, 0}, 3),
                  InvalidInput);
}

TEST_CASE("sample_mask: bernoulli p=1 gives all ones") {
  Rng rng(1);
  auto m = sample_mask(MaskDistribution::bernoulli(1.0), 8, 8, rng);
  for (float v : m.transmittance) CHECK(v == 1.0f);
}

TEST_CASE("sample_mask: perturbed reference with r=0 is the reference") {
  Rng rng(2);
  auto ref = sample_mask(MaskDistribution::bernoulli(0.5), 8, 8, rng);
  Rng rng2(3);
  auto m = sample_mask(MaskDistribution::perturbed(ref, 0.0), 8, 8, rng2);
  CHECK(bit_equal(m.transmittance, ref.transmittance));
}

TEST_CASE("sample_mask: bernoulli p=0.5 mean within [0.45,0.55] for 99% of seeds") {
  std::size_t in_range = 0;
  const std::size_t trials = 1000;
  for (std::size_t seed = 0; seed < trials; ++seed) {
    Rng rng(seed * 2654435761ULL + 17);
    auto m = sample_mask(MaskDistribution::bernoulli(0.5), 64, 64, rng);
    double mean = 0.0;
    for (float v : m.transmittance) mean += v;
    mean /= static_cast<double>(m.transmittance.size());
    if (mean >= 0.45 && mean <= 0.55) ++in_range;
  }
  CHECK(in_range >= 990);
}

TEST_CASE("sample_mask: identical seeds give bit-identical masks") {
  for (auto dist :
       {MaskDistribution::bernoulli(0.3),
        MaskDistribution::smoothed(1.5, 0.4, true),
        MaskDistribution::smoothed(2.0, 0.5, false)}) {
    Rng a(555), b(555);
    auto ma = sample_mask(dist, 16, 16, a);
    auto mb = sample_mask(dist, 16, 16, b);
    CHECK(bit_equal(ma.transmittance, mb.transmittance));
  }
}

TEST_CASE("sample_mask: smoothed threshold stays in range and binarizes") {
  Rng rng(8);
  auto mb = sample_mask(MaskDistribution::smoothed(2.0, 0.5, true), 32, 32, rng);
  for (float v : mb.transmittance) CHECK((v == 0.0f || v == 1.0f));
  auto mc = sample_mask(MaskDistribution::smoothed(2.0, 0.5, false), 32, 32, rng);
  float lo = 1.0f, hi = 0.0f;
  for (float v : mc.transmittance) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
}

TEST_CASE("make_scenario: shaking yields distinct masks from one distribution") {
  auto spec = ScenarioSpec::shaking(MaskDistribution::bernoulli(0.5), 3, 2);
  auto scenario = make_scenario(spec, 16, 16, Rng(10));
  REQUIRE(scenario.size() == 3);
  std::vector<const CodedAperture*> all;
  for (const auto& cm : scenario) {
    CHECK(cm.distribution.distribution_equal(spec.distributions[0]));
    REQUIRE(cm.masks.size() == 2);
    for (const auto& m : cm.masks) all.push_back(&m);
  }
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      CHECK_FALSE(bit_equal(all[i]->transmittance, all[j]->transmittance));
}

TEST_CASE("make_scenario: discrepancy mask means follow their distributions") {
  auto spec = ScenarioSpec::discrepancy(
      {MaskDistribution::bernoulli(0.3), MaskDistribution::bernoulli(0.5),
       MaskDistribution::bernoulli(0.7)},
      4);
  auto scenario = make_scenario(spec, 64, 64, Rng(77));
  const double expected[3] = {0.3, 0.5, 0.7};
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    std::size_t count = 0;
    for (const auto& m : scenario[c].masks)
      for (float v : m.transmittance) {
        mean += v;
        ++count;
      }
    mean /= static_cast<double>(count);
    CHECK(std::abs(mean - expected[c]) < 0.05);
  }
}

TEST_CASE("make_scenario: C=1 shaking and discrepancy coincide") {
  auto sh = ScenarioSpec::shaking(MaskDistribution::bernoulli(0.4), 1, 3);
  ScenarioSpec di;
  di.kind = ScenarioSpec::Kind::manufacturing_discrepancy;
  di.clients = 1;
  di.masks_per_client = 3;
  di.distributions = {MaskDistribution::bernoulli(0.4)};
  auto a = make_scenario(sh, 12, 12, Rng(5));
  auto b = make_scenario(di, 12, 12, Rng(5));
  REQUIRE(a.size() == 1);
  REQUIRE(b.size() == 1);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(bit_equal(a[0].masks[k].transmittance, b[0].masks[k].transmittance));
}

TEST_CASE("make_scenario: invariant violations are rejected") {
  ScenarioSpec bad;
  bad.kind = ScenarioSpec::Kind::manufacturing_discrepancy;
  bad.clients = 2;
  bad.masks_per_client = 1;
  bad.distributions = {MaskDistribution::bernoulli(0.5),
                       MaskDistribution::bernoulli(0.5)};
  CHECK_THROWS_AS(make_scenario(bad, 8, 8, Rng(1)), InvalidInput);

  ScenarioSpec wrong_count = ScenarioSpec::shaking(
      MaskDistribution::bernoulli(0.5), 3, 2);
  wrong_count.distributions.pop_back();
  CHECK_THROWS_AS(make_scenario(wrong_count, 8, 8, Rng(1)), InvalidInput);
}
