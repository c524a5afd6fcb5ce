#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "fedhp/dataio.hpp"

using namespace fedhp;
using namespace fedhp::dataio;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("fedhp_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("tensor container: random round trip is bit-exact") {
  TempDir tmp;
  Rng rng(3);
  std::vector<std::size_t> shape = {3, 5, 7};
  std::vector<float> data(105);
  for (auto& v : data) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  const auto file = tmp.path / "t.fht";
  save_tensor(file, shape, data);
  const auto loaded = load_tensor(file);
  CHECK(loaded.shape == shape);
  REQUIRE(loaded.data.size() == data.size());
  CHECK(std::memcmp(loaded.data.data(), data.data(), data.size() * 4) == 0);
}

TEST_CASE("tensor container: zero extent gives an empty accepted payload") {
  TempDir tmp;
  const auto file = tmp.path / "empty.fht";
  std::vector<std::size_t> shape = {4, 0, 2};
  save_tensor(file, shape, {});
  const auto loaded = load_tensor(file);
  CHECK(loaded.shape == shape);
  CHECK(loaded.data.empty());
}

TEST_CASE("tensor container: error classes are distinct") {
  TempDir tmp;
  const auto file = tmp.path / "t.fht";
  std::vector<std::size_t> shape = {2, 2};
  const std::vector<float> payload = {1.f, 2.f, 3.f, 4.f};
  save_tensor(file, shape, payload);

  SUBCASE("missing file") {
    try {
      load_tensor(tmp.path / "absent.fht");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind == IoError::Kind::open_failed);
    }
  }
  SUBCASE("bad magic") {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    try {
      load_tensor(file);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind == IoError::Kind::bad_magic);
    }
  }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(file, std::filesystem::file_size(file) - 5);
    try {
      load_tensor(file);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind == IoError::Kind::truncated);
    }
  }
  SUBCASE("trailing bytes") {
    std::ofstream f(file, std::ios::app | std::ios::binary);
    f.write("zz", 2);
    f.close();
    try {
      load_tensor(file);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind == IoError::Kind::size_mismatch);
    }
  }
  SUBCASE("extent overflow") {
    // rank 2, extents 0xffffffff x 0xffffffff
    std::ofstream f(tmp.path / "o.fht", std::ios::binary | std::ios::trunc);
    const unsigned char header[] = {'F', 'H', 'T', '1', 2, 0, 0, 0,
                                    0xff, 0xff, 0xff, 0xff,
                                    0xff, 0xff, 0xff, 0xff};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    f.close();
    try {
      load_tensor(tmp.path / "o.fht");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind == IoError::Kind::extent_overflow);
    }
  }
}

TEST_CASE("checkpoint: manifest round trip preserves every entry") {
  TempDir tmp;
  Rng rng(5);
  CheckpointData data;
  data.round = 7;
  data.config_hash = "deadbeef";
  for (const char* role : {"param", "optimizer", "mask"}) {
    CheckpointEntry e;
    e.group = std::string("g.") + role;
    e.name = "tensor/with.odd-name";
    e.role = role;
    e.shape = {2, 3};
    for (int i = 0; i < 6; ++i)
      e.data.push_back(static_cast<float>(rng.uniform()));
    data.entries.push_back(e);
  }
  save_checkpoint(tmp.path / "ckpt", data);
  const auto loaded = load_checkpoint(tmp.path / "ckpt");
  CHECK(loaded.round == 7);
  CHECK(loaded.config_hash == "deadbeef");
  REQUIRE(loaded.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.entries[i].group == data.entries[i].group);
    CHECK(loaded.entries[i].role == data.entries[i].role);
    CHECK(loaded.entries[i].shape == data.entries[i].shape);
    CHECK(std::memcmp(loaded.entries[i].data.data(),
                      data.entries[i].data.data(),
                      data.entries[i].data.size() * 4) == 0);
  }
}

TEST_CASE("gen_synthetic_cube: normalized range and valid values") {
  Rng rng(11);
  const auto cube = gen_synthetic_cube(rng, 16, 16, 4, 0.25);
  cube.validate();
  float lo = 1.0f, hi = 0.0f;
  for (float v : cube.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
}

TEST_CASE("gen_synthetic_cube: adjacent bands correlate far above noise") {
  // Mean Pearson correlation between adjacent bands across 100 samples,
  // compared to the same statistic on white noise.
  const auto band_corr = [](const optics::HyperspectralCube& c) {
    double total = 0.0;
    for (std::size_t n = 0; n + 1 < c.bands; ++n) {
      double ma = 0, mb = 0;
      const std::size_t hw = c.height * c.width;
      for (std::size_t h = 0; h < c.height; ++h)
        for (std::size_t w = 0; w < c.width; ++w) {
          ma += c.at(h, w, n);
          mb += c.at(h, w, n + 1);
        }
      ma /= hw;
      mb /= hw;
      double saa = 0, sbb = 0, sab = 0;
      for (std::size_t h = 0; h < c.height; ++h)
        for (std::size_t w = 0; w < c.width; ++w) {
          const double da = c.at(h, w, n) - ma;
          const double db = c.at(h, w, n + 1) - mb;
          saa += da * da;
          sbb += db * db;
          sab += da * db;
        }
      total += sab / std::sqrt(saa * sbb + 1e-12);
    }
    return total / static_cast<double>(c.bands - 1);
  };

  double synth = 0.0, noise = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(1000 + i);
    synth += band_corr(gen_synthetic_cube(rng, 12, 12, 4, 0.25));
    optics::HyperspectralCube white = optics::HyperspectralCube::zeros(12, 12, 4);
    Rng wr(2000 + i);
    for (auto& v : white.values) v = static_cast<float>(wr.uniform());
    noise += band_corr(white);
  }
  synth /= 100.0;
  noise /= 100.0;
  CHECK(synth > 0.5);
  CHECK(synth > noise + 0.3);
}

TEST_CASE("split_dataset: partition laws") {
  Rng rng(21);
  SUBCASE("9 into 3 equal parts") {
    const auto parts = split_dataset(9, 3, rng);
    for (const auto& p : parts) CHECK(p.size() == 3);
  }
  SUBCASE("10 into 3 parts differing by at most one") {
    const auto parts = split_dataset(10, 3, rng);
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.size());
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes == std::vector<std::size_t>{3, 3, 4});
  }
  SUBCASE("disjoint union covers everything; same seed repeats") {
    const auto a = split_dataset(17, 4, Rng(9));
    const auto b = split_dataset(17, 4, Rng(9));
    CHECK(a == b);
    std::vector<bool> seen(17, false);
    for (const auto& part : a)
      for (std::size_t i : part) {
        CHECK_FALSE(seen[i]);
        seen[i] = true;
      }
    for (bool s : seen) CHECK(s);
  }
}

TEST_CASE("dataset directory round trip") {
  TempDir tmp;
  DatasetSpec spec;
  spec.count = 4;
  spec.height = 8;
  spec.width = 8;
  spec.bands = 3;
  const auto cubes = load_or_generate_cubes(spec, Rng(55));
  REQUIRE(cubes.size() == 4);
  save_dataset(tmp.path / "ds", cubes);
  const auto loaded = load_dataset(tmp.path / "ds");
  REQUIRE(loaded.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::memcmp(loaded[i].values.data(), cubes[i].values.data(),
                      cubes[i].values.size() * 4) == 0);

  DatasetSpec from_files = spec;
  from_files.source = DatasetSpec::Source::files;
  from_files.path = (tmp.path / "ds").string();
  from_files.count = 3;
  const auto subset = load_or_generate_cubes(from_files, Rng(1));
  CHECK(subset.size() == 3);
}
