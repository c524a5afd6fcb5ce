#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fedhp/dataio.hpp"
#include "fedhp/federation.hpp"
#include "fedhp/learncore/model.hpp"
#include "fedhp/optics.hpp"

namespace fedhp::cli {

/// One JSON document describing a full experiment. Parsing fills defaults,
/// rejects unknown keys, and validates ranges; to_json() emits the resolved
/// document (all defaults filled) that is written beside every run's outputs
/// and is sufficient to reproduce it.
struct ExperimentConfig {
  std::uint64_t seed = 1234;
  std::string output = "runs/out";
  dataio::DatasetSpec data;
  optics::DispersionModel dispersion;
  optics::NoiseModel noise;
  optics::ScenarioSpec scenario;
  learncore::BackboneConfig backbone;
  learncore::PromptConfig prompt;
  federation::TrainingConfig training;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig defaults();

  nlohmann::json to_json() const;
  /// FNV-1a hash of the resolved document, hex string.
  std::string hash() const;

  federation::FederationSetup make_setup() const;
  void validate() const;
};

}  // namespace fedhp::cli
