#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "fedhp/config.hpp"
#include "fedhp/federation.hpp"

namespace fedhp::cli {

/// Fixed CSV rendering of a metrics history: header
/// round,client,split,mask_kind,psnr_db,ssim,loss with 6-significant-digit
/// values, byte-stable across identical runs.
std::string metrics_csv(const std::vector<federation::MetricsRow>& rows);

/// Writes the dataset cubes (dataset.json + one container file per cube).
void cmd_gen_data(const ExperimentConfig& config,
                  const std::filesystem::path& out);

/// Writes the scenario's per-client masks (scenario.json + container files).
void cmd_gen_masks(const ExperimentConfig& config,
                   const std::filesystem::path& out);

/// Pre-trains every client backbone and saves one checkpoint per client.
void cmd_pretrain(const ExperimentConfig& config,
                  const std::filesystem::path& out);

/// Full federated run: writes metrics.csv, resolved_config.json, and a final
/// checkpoint under <out>/checkpoint.
federation::FederationResult cmd_federate(const ExperimentConfig& config,
                                          const std::filesystem::path& out);

struct EvaluateCell {
  std::size_t client = 0;     // SIZE_MAX = all clients pooled
  std::string mask_kind;      // "seen" | "unseen"
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
};

/// Re-evaluates a finished run over `trials` trials, resampling the unseen
/// masks with trial-indexed seeds; returns and prints mean/std per client
/// and pooled.
std::vector<EvaluateCell> cmd_evaluate(const std::filesystem::path& run_dir,
                                       std::size_t trials, std::ostream& os);

struct GradCheckSummary {
  double backbone = 0.0, prompt = 0.0, adaptor = 0.0, overall = 0.0;
};

/// Gradient fidelity report on the config's model (randomized initialization
/// so every layer participates).
GradCheckSummary cmd_gradcheck(const ExperimentConfig& config,
                               std::ostream& os);

/// Per-round per-client parameter counts for every algorithm.
void cmd_commcost(const ExperimentConfig& config, std::ostream& os);

}  // namespace fedhp::cli
