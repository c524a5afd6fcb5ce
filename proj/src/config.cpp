#include "fedhp/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

namespace fedhp::cli {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(ctx + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": bad type for '" + key + "'");
  }
}

optics::MaskDistribution parse_distribution(const json& j,
                                            const std::string& ctx) {
  check_keys(j, ctx,
             {"kind", "p", "correlation_length", "threshold", "binarize",
              "reference", "flip_rate"});
  const std::string kind = get_or<std::string>(j, "kind", "bernoulli", ctx);
  if (kind == "bernoulli")
    return optics::MaskDistribution::bernoulli(
        get_or<double>(j, "p", 0.5, ctx));
  if (kind == "smoothed-threshold")
    return optics::MaskDistribution::smoothed(
        get_or<double>(j, "correlation_length", 2.0, ctx),
        get_or<double>(j, "threshold", 0.5, ctx),
        get_or<bool>(j, "binarize", true, ctx));
  if (kind == "perturbed-reference") {
    const std::string ref = get_or<std::string>(j, "reference", "", ctx);
    if (ref.empty())
      throw ConfigError(ctx + ": perturbed-reference needs 'reference'");
    const auto t = dataio::load_tensor(ref);
    if (t.shape.size() != 2)
      throw ConfigError(ctx + ": reference mask must be rank 2");
    optics::CodedAperture mask{t.shape[0], t.shape[1], t.data};
    mask.validate();
    return optics::MaskDistribution::perturbed(
        std::move(mask), get_or<double>(j, "flip_rate", 0.0, ctx));
  }
  throw ConfigError(ctx + ": unknown distribution kind '" + kind + "'");
}

json distribution_json(const optics::MaskDistribution& d) {
  json j;
  switch (d.kind) {
    case optics::MaskDistribution::Kind::bernoulli:
      j["kind"] = "bernoulli";
      j["p"] = d.p;
      break;
    case optics::MaskDistribution::Kind::smoothed_threshold:
      j["kind"] = "smoothed-threshold";
      j["correlation_length"] = d.corr_length;
      j["threshold"] = d.threshold;
      j["binarize"] = d.binarize;
      break;
    case optics::MaskDistribution::Kind::perturbed_reference:
      j["kind"] = "perturbed-reference";
      j["flip_rate"] = d.flip_rate;
      j["reference"] = "(inline)";
      break;
  }
  return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.scenario =
      optics::ScenarioSpec::shaking(optics::MaskDistribution::bernoulli(0.5),
                                    3, 2);
  c.backbone.bands = c.data.bands;
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& root) {
  check_keys(root, "config",
             {"seed", "output", "data", "optics", "scenario", "model",
              "training"});
  ExperimentConfig c = defaults();
  c.seed = get_or<std::uint64_t>(root, "seed", c.seed, "config");
  c.output = get_or<std::string>(root, "output", c.output, "config");

  if (root.contains("data")) {
    const json& j = root.at("data");
    check_keys(j, "data",
               {"source", "path", "count", "height", "width", "bands", "split",
                "smoothness"});
    const std::string source = get_or<std::string>(j, "source", "synthetic", "data");
    if (source == "synthetic")
      c.data.source = dataio::DatasetSpec::Source::synthetic;
    else if (source == "files")
      c.data.source = dataio::DatasetSpec::Source::files;
    else
      throw ConfigError("data: unknown source '" + source + "'");
    c.data.path = get_or<std::string>(j, "path", c.data.path, "data");
    c.data.count = get_or<std::size_t>(j, "count", c.data.count, "data");
    c.data.height = get_or<std::size_t>(j, "height", c.data.height, "data");
    c.data.width = get_or<std::size_t>(j, "width", c.data.width, "data");
    c.data.bands = get_or<std::size_t>(j, "bands", c.data.bands, "data");
    c.data.split = get_or<double>(j, "split", c.data.split, "data");
    c.data.smoothness =
        get_or<double>(j, "smoothness", c.data.smoothness, "data");
  }

  if (root.contains("optics")) {
    const json& j = root.at("optics");
    check_keys(j, "optics", {"dispersion", "noise"});
    if (j.contains("dispersion")) {
      const json& d = j.at("dispersion");
      check_keys(d, "optics.dispersion", {"step", "anchor_band"});
      c.dispersion.step = get_or<int>(d, "step", c.dispersion.step, "optics");
      c.dispersion.anchor_band = get_or<std::size_t>(
          d, "anchor_band", c.dispersion.anchor_band, "optics");
    }
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      check_keys(n, "optics.noise", {"kind", "sigma"});
      const std::string kind = get_or<std::string>(n, "kind", "none", "optics");
      if (kind == "none")
        c.noise = optics::NoiseModel::off();
      else if (kind == "additive-gaussian")
        c.noise = optics::NoiseModel::gaussian(
            get_or<double>(n, "sigma", 0.0, "optics"));
      else
        throw ConfigError("optics.noise: unknown kind '" + kind + "'");
    }
  }

  if (root.contains("scenario")) {
    const json& j = root.at("scenario");
    check_keys(j, "scenario",
               {"kind", "clients", "masks_per_client", "distributions"});
    const std::string kind =
        get_or<std::string>(j, "kind", "hardware-shaking", "scenario");
    const std::size_t clients =
        get_or<std::size_t>(j, "clients", 3, "scenario");
    const std::size_t masks =
        get_or<std::size_t>(j, "masks_per_client", 2, "scenario");
    std::vector<optics::MaskDistribution> dists;
    if (j.contains("distributions")) {
      const json& arr = j.at("distributions");
      if (!arr.is_array())
        throw ConfigError("scenario.distributions: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i)
        dists.push_back(parse_distribution(
            arr[i], "scenario.distributions[" + std::to_string(i) + "]"));
    } else {
      dists.push_back(optics::MaskDistribution::bernoulli(0.5));
    }
    if (kind == "hardware-shaking") {
      if (dists.size() == 1)
        c.scenario = optics::ScenarioSpec::shaking(dists[0], clients, masks);
      else {
        c.scenario.kind = optics::ScenarioSpec::Kind::hardware_shaking;
        c.scenario.clients = clients;
        c.scenario.masks_per_client = masks;
        c.scenario.distributions = std::move(dists);
      }
    } else if (kind == "manufacturing-discrepancy") {
      if (dists.size() == 1 && clients > 1)
        throw ConfigError(
            "scenario: manufacturing-discrepancy needs per-client "
            "distributions");
      c.scenario.kind = optics::ScenarioSpec::Kind::manufacturing_discrepancy;
      c.scenario.clients = clients;
      c.scenario.masks_per_client = masks;
      c.scenario.distributions = std::move(dists);
    } else {
      throw ConfigError("scenario: unknown kind '" + kind + "'");
    }
  }

  if (root.contains("model")) {
    const json& j = root.at("model");
    check_keys(j, "model", {"backbone", "prompt"});
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      check_keys(b, "model.backbone", {"blocks", "channels", "adaptor_hidden"});
      c.backbone.blocks =
          get_or<std::size_t>(b, "blocks", c.backbone.blocks, "model");
      c.backbone.channels =
          get_or<std::size_t>(b, "channels", c.backbone.channels, "model");
      c.backbone.adaptor_hidden = get_or<std::size_t>(
          b, "adaptor_hidden", c.backbone.adaptor_hidden, "model");
    }
    if (j.contains("prompt")) {
      const json& p = j.at("prompt");
      check_keys(p, "model.prompt", {"channels"});
      c.prompt.channels =
          get_or<std::size_t>(p, "channels", c.prompt.channels, "model");
    }
  }

  if (root.contains("training")) {
    const json& j = root.at("training");
    check_keys(j, "training",
               {"algorithm", "rounds", "prompt_iters", "adaptor_iters",
                "local_iters", "pretrain_iters", "batch", "lr_prompt",
                "lr_adaptor", "lr_backbone", "lr_halving_period", "fedprox_mu",
                "participation", "unseen_masks_per_distribution"});
    auto& t = c.training;
    t.algorithm = federation::algorithm_from_name(
        get_or<std::string>(j, "algorithm", "fedhp", "training"));
    t.rounds = get_or<std::uint64_t>(j, "rounds", t.rounds, "training");
    t.prompt_iters =
        get_or<std::uint64_t>(j, "prompt_iters", t.prompt_iters, "training");
    t.adaptor_iters =
        get_or<std::uint64_t>(j, "adaptor_iters", t.adaptor_iters, "training");
    t.local_iters =
        get_or<std::uint64_t>(j, "local_iters", t.local_iters, "training");
    t.pretrain_iters = get_or<std::uint64_t>(j, "pretrain_iters",
                                             t.pretrain_iters, "training");
    t.batch = get_or<std::size_t>(j, "batch", t.batch, "training");
    t.lr_prompt.initial =
        get_or<double>(j, "lr_prompt", t.lr_prompt.initial, "training");
    t.lr_adaptor.initial =
        get_or<double>(j, "lr_adaptor", t.lr_adaptor.initial, "training");
    t.lr_backbone.initial =
        get_or<double>(j, "lr_backbone", t.lr_backbone.initial, "training");
    const std::uint64_t period = get_or<std::uint64_t>(
        j, "lr_halving_period", t.lr_prompt.halving_period, "training");
    t.lr_prompt.halving_period = period;
    t.lr_adaptor.halving_period = period;
    t.lr_backbone.halving_period = period;
    t.fedprox_mu = get_or<double>(j, "fedprox_mu", t.fedprox_mu, "training");
    t.participation =
        get_or<std::size_t>(j, "participation", t.participation, "training");
    t.unseen_masks_per_distribution = get_or<std::size_t>(
        j, "unseen_masks_per_distribution", t.unseen_masks_per_distribution,
        "training");
  }

  c.backbone.bands = c.data.bands;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw IoError(IoError::Kind::open_failed,
                  "config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  data.validate();
  dispersion.validate(data.bands);
  noise.validate();
  scenario.validate();
  backbone.validate();
  prompt.validate();
  training.validate();
  if (data.count < 2 * scenario.clients)
    throw ConfigError("config: data.count must be >= 2 * scenario.clients");
}

nlohmann::json ExperimentConfig::to_json() const {
  json root;
  root["seed"] = seed;
  root["output"] = output;
  json& d = root["data"];
  d["source"] =
      data.source == dataio::DatasetSpec::Source::synthetic ? "synthetic"
                                                            : "files";
  d["path"] = data.path;
  d["count"] = data.count;
  d["height"] = data.height;
  d["width"] = data.width;
  d["bands"] = data.bands;
  d["split"] = data.split;
  d["smoothness"] = data.smoothness;
  json& o = root["optics"];
  o["dispersion"]["step"] = dispersion.step;
  o["dispersion"]["anchor_band"] = dispersion.anchor_band;
  o["noise"]["kind"] =
      noise.kind == optics::NoiseModel::Kind::none ? "none"
                                                   : "additive-gaussian";
  o["noise"]["sigma"] = noise.sigma;
  json& s = root["scenario"];
  s["kind"] = scenario.kind == optics::ScenarioSpec::Kind::hardware_shaking
                  ? "hardware-shaking"
                  : "manufacturing-discrepancy";
  s["clients"] = scenario.clients;
  s["masks_per_client"] = scenario.masks_per_client;
  s["distributions"] = json::array();
  for (const auto& dist : scenario.distributions)
    s["distributions"].push_back(distribution_json(dist));
  json& m = root["model"];
  m["backbone"]["blocks"] = backbone.blocks;
  m["backbone"]["channels"] = backbone.channels;
  m["backbone"]["adaptor_hidden"] = backbone.adaptor_hidden;
  m["prompt"]["channels"] = prompt.channels;
  json& t = root["training"];
  t["algorithm"] = federation::algorithm_name(training.algorithm);
  t["rounds"] = training.rounds;
  t["prompt_iters"] = training.prompt_iters;
  t["adaptor_iters"] = training.adaptor_iters;
  t["local_iters"] = training.local_iters;
  t["pretrain_iters"] = training.pretrain_iters;
  t["batch"] = training.batch;
  t["lr_prompt"] = training.lr_prompt.initial;
  t["lr_adaptor"] = training.lr_adaptor.initial;
  t["lr_backbone"] = training.lr_backbone.initial;
  t["lr_halving_period"] = training.lr_prompt.halving_period;
  t["fedprox_mu"] = training.fedprox_mu;
  t["participation"] = training.participation;
  t["unseen_masks_per_distribution"] = training.unseen_masks_per_distribution;
  return root;
}

std::string ExperimentConfig::hash() const {
  const std::string dump = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

federation::FederationSetup ExperimentConfig::make_setup() const {
  return federation::build_setup(data, scenario, dispersion, noise, backbone,
                                 prompt, training, seed);
}

}  // namespace fedhp::cli
