#include "fedhp/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace fedhp::dataio {

namespace {

constexpr char kMagic[4] = {'F', 'H', 'T', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

static_assert(std::numeric_limits<float>::is_iec559 && sizeof(float) == 4,
              "float must be 32-bit IEEE-754");

}  // namespace

void save_tensor(const std::filesystem::path& path,
                 std::span<const std::size_t> shape,
                 std::span<const float> data) {
  std::size_t numel = 1;
  for (std::size_t e : shape) {
    if (e > std::numeric_limits<std::uint32_t>::max())
      throw InvalidInput("save_tensor: extent exceeds u32");
    if (e != 0 && numel > std::numeric_limits<std::size_t>::max() / e)
      throw InvalidInput("save_tensor: extent product overflow");
    numel *= e;
  }
  if (numel != data.size())
    throw InvalidInput("save_tensor: payload does not match extents");

  std::string buf;
  buf.reserve(4 + 4 + 4 * shape.size() + 4 * data.size());
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put_u32(buf, static_cast<std::uint32_t>(e));
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed,
                  "save_tensor: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out)
    throw IoError(IoError::Kind::open_failed,
                  "save_tensor: write failed for " + path.string());
}

LoadedTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Kind::open_failed,
                  "load_tensor: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());

  if (buf.size() < 8)
    throw IoError(IoError::Kind::truncated,
                  "load_tensor: file shorter than header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, "load_tensor: bad magic");
  const std::uint32_t rank = get_u32(p + 4);
  if (buf.size() < 8 + 4ULL * rank)
    throw IoError(IoError::Kind::truncated,
                  "load_tensor: truncated extent list");

  LoadedTensor t;
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = get_u32(p + 8 + 4 * i);
    if (e != 0 && numel > std::numeric_limits<std::size_t>::max() / e / 4)
      throw IoError(IoError::Kind::extent_overflow,
                    "load_tensor: extent product overflow");
    numel *= e;
    t.shape.push_back(e);
  }
  const std::size_t header = 8 + 4ULL * rank;
  const std::size_t expected = header + 4 * numel;
  if (buf.size() < expected)
    throw IoError(IoError::Kind::truncated,
                  "load_tensor: truncated payload");
  if (buf.size() > expected)
    throw IoError(IoError::Kind::size_mismatch,
                  "load_tensor: trailing bytes after payload");

  t.data.resize(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    const std::uint32_t bits = get_u32(p + header + 4 * i);
    std::memcpy(&t.data[i], &bits, 4);
  }
  return t;
}

const CheckpointEntry* CheckpointData::find(const std::string& group,
                                            const std::string& name) const {
  for (const auto& e : entries)
    if (e.group == group && e.name == name) return &e;
  return nullptr;
}

std::vector<const CheckpointEntry*> CheckpointData::group_entries(
    const std::string& group) const {
  std::vector<const CheckpointEntry*> out;
  for (const auto& e : entries)
    if (e.group == group) out.push_back(&e);
  return out;
}

namespace {

std::string tensor_file_name(const CheckpointEntry& e, std::size_t index) {
  std::string s = "tensors/" + std::to_string(index) + "__" + e.group + "." +
                  e.name + ".fht";
  for (auto& c : s)
    if (c == '/' && &c != &s[7]) c = '_';  // keep the tensors/ separator
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const CheckpointData& data) {
  std::filesystem::create_directories(dir / "tensors");
  nlohmann::json manifest;
  manifest["format"] = "fedhp-checkpoint-v1";
  manifest["round"] = data.round;
  manifest["config_hash"] = data.config_hash;
  manifest["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < data.entries.size(); ++i) {
    const auto& e = data.entries[i];
    const std::string rel = tensor_file_name(e, i);
    save_tensor(dir / rel, e.shape, e.data);
    nlohmann::json j;
    j["group"] = e.group;
    j["name"] = e.name;
    j["role"] = e.role;
    j["shape"] = e.shape;
    j["file"] = rel;
    manifest["tensors"].push_back(std::move(j));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed,
                  "save_checkpoint: cannot write manifest");
  out << manifest.dump(2) << "\n";
}

CheckpointData load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in)
    throw IoError(IoError::Kind::open_failed,
                  "load_checkpoint: cannot open manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_manifest,
                  std::string("load_checkpoint: manifest parse: ") + e.what());
  }
  if (manifest.value("format", "") != "fedhp-checkpoint-v1")
    throw IoError(IoError::Kind::bad_manifest,
                  "load_checkpoint: unknown manifest format");

  CheckpointData data;
  data.round = manifest.value("round", std::uint64_t{0});
  data.config_hash = manifest.value("config_hash", "");
  for (const auto& j : manifest.at("tensors")) {
    CheckpointEntry e;
    e.group = j.at("group").get<std::string>();
    e.name = j.at("name").get<std::string>();
    e.role = j.at("role").get<std::string>();
    e.shape = j.at("shape").get<std::vector<std::size_t>>();
    const auto t = load_tensor(dir / j.at("file").get<std::string>());
    if (t.shape != e.shape)
      throw IoError(IoError::Kind::bad_manifest,
                    "load_checkpoint: shape mismatch for " + e.group + "." +
                        e.name);
    e.data = t.data;
    data.entries.push_back(std::move(e));
  }
  return data;
}

void DatasetSpec::validate() const {
  if (count < 2) throw InvalidInput("dataset: count must be >= 2");
  if (split <= 0.0 || split >= 1.0)
    throw InvalidInput("dataset: split fraction must be in (0,1)");
  if (height < 1 || width < 1 || bands < 1)
    throw InvalidInput("dataset: empty dimension");
  if (source == Source::files && path.empty())
    throw InvalidInput("dataset: files source requires a path");
}

optics::HyperspectralCube gen_synthetic_cube(Rng& rng, std::size_t h,
                                             std::size_t w, std::size_t bands,
                                             double smoothness) {
  if (h < 1 || w < 1 || bands < 1)
    throw InvalidInput("gen_synthetic_cube: empty dimension");
  if (smoothness <= 0.0)
    throw InvalidInput("gen_synthetic_cube: smoothness must be > 0");

  const std::size_t bumps = 4 + rng.below(4);
  std::vector<double> acc(h * w * bands, 0.0);
  const double base_sigma =
      std::max(1.0, smoothness * static_cast<double>(std::min(h, w)));
  for (std::size_t g = 0; g < bumps; ++g) {
    const double ch = rng.uniform() * static_cast<double>(h);
    const double cw = rng.uniform() * static_cast<double>(w);
    const double sigma = base_sigma * (0.5 + rng.uniform());
    const double amp = 0.3 + 0.7 * rng.uniform();
    // Low-order cosine mixture keeps adjacent bands correlated.
    double c1 = (rng.uniform() * 2.0 - 1.0);
    double c2 = (rng.uniform() * 2.0 - 1.0) / 2.0;
    double c3 = (rng.uniform() * 2.0 - 1.0) / 3.0;
    std::vector<double> profile(bands);
    for (std::size_t n = 0; n < bands; ++n) {
      const double u =
          bands > 1 ? static_cast<double>(n) / static_cast<double>(bands - 1)
                    : 0.0;
      profile[n] = 1.0 + c1 * std::cos(3.14159265358979 * u) +
                   c2 * std::cos(2.0 * 3.14159265358979 * u) +
                   c3 * std::cos(3.0 * 3.14159265358979 * u);
    }
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double dh = (static_cast<double>(i) - ch) / sigma;
        const double dw = (static_cast<double>(j) - cw) / sigma;
        const double bump = amp * std::exp(-0.5 * (dh * dh + dw * dw));
        for (std::size_t n = 0; n < bands; ++n)
          acc[(i * w + j) * bands + n] += bump * profile[n];
      }
  }

  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double range = *hi - *lo;
  optics::HyperspectralCube cube = optics::HyperspectralCube::zeros(h, w, bands);
  if (range > 0.0)
    for (std::size_t i = 0; i < acc.size(); ++i)
      cube.values[i] = static_cast<float>((acc[i] - *lo) / range);
  return cube;
}

std::vector<std::vector<std::size_t>> split_dataset(std::size_t n,
                                                    std::size_t c,
                                                    const Rng& rng) {
  if (c < 1) throw InvalidInput("split_dataset: need at least one part");
  if (n < c) throw InvalidInput("split_dataset: fewer items than parts");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng shuffle_rng = rng.fork(0x5917);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = shuffle_rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::vector<std::size_t>> parts(c);
  const std::size_t base = n / c;
  const std::size_t extra = n % c;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    parts[k].assign(perm.begin() + static_cast<long>(pos),
                    perm.begin() + static_cast<long>(pos + len));
    pos += len;
  }
  return parts;
}

std::vector<optics::HyperspectralCube> load_or_generate_cubes(
    const DatasetSpec& spec, const Rng& rng) {
  spec.validate();
  if (spec.source == DatasetSpec::Source::files) {
    auto cubes = load_dataset(spec.path);
    if (cubes.size() < spec.count)
      throw InvalidInput("dataset: directory holds fewer cubes than count");
    cubes.resize(spec.count);
    return cubes;
  }
  std::vector<optics::HyperspectralCube> cubes;
  cubes.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Rng cube_rng = rng.fork(i);
    cubes.push_back(gen_synthetic_cube(cube_rng, spec.height, spec.width,
                                       spec.bands, spec.smoothness));
  }
  return cubes;
}

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<optics::HyperspectralCube>& cubes) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "fedhp-dataset-v1";
  manifest["cubes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    const auto& c = cubes[i];
    const std::string rel = "cube_" + std::to_string(i) + ".fht";
    const std::size_t shape[3] = {c.height, c.width, c.bands};
    save_tensor(dir / rel, shape, c.values);
    manifest["cubes"].push_back(rel);
  }
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed, "save_dataset: cannot write manifest");
  out << manifest.dump(2) << "\n";
}

std::vector<optics::HyperspectralCube> load_dataset(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in)
    throw IoError(IoError::Kind::open_failed,
                  "load_dataset: cannot open manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_manifest,
                  std::string("load_dataset: manifest parse: ") + e.what());
  }
  std::vector<optics::HyperspectralCube> cubes;
  for (const auto& rel : manifest.at("cubes")) {
    const auto t = load_tensor(dir / rel.get<std::string>());
    if (t.shape.size() != 3)
      throw IoError(IoError::Kind::bad_manifest, "load_dataset: cube must be rank 3");
    optics::HyperspectralCube c{t.shape[0], t.shape[1], t.shape[2], t.data};
    c.validate();
    cubes.push_back(std::move(c));
  }
  return cubes;
}

}  // namespace fedhp::dataio
