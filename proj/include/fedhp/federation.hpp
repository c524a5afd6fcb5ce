#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedhp/dataio.hpp"
#include "fedhp/learncore/model.hpp"
#include "fedhp/learncore/optim.hpp"
#include "fedhp/optics.hpp"
#include "fedhp/rng.hpp"

namespace fedhp::federation {

enum class Algorithm { fedhp, fedavg, fedprox, scaffold, joint, local_only };

const char* algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

/// Iteration budgets and optimizer settings. The full-scale reference
/// configuration (documented, not the desk default) is: pretrain 4e4
/// iterations, 1.25e5 total, batch 12, initial rates 1e-4, halving every
/// 2e4 iterations, three clients with full participation.
struct TrainingConfig {
  Algorithm algorithm = Algorithm::fedhp;
  std::uint64_t rounds = 20;           // global rounds T
  std::uint64_t prompt_iters = 20;     // per-round prompt stage S_p
  std::uint64_t adaptor_iters = 20;    // per-round adaptor stage S_b
  std::uint64_t local_iters = 40;      // per-round S for backbone baselines
  std::uint64_t pretrain_iters = 500;  // S_pre
  std::size_t batch = 2;
  learncore::LRSchedule lr_prompt{1e-4, 500};
  learncore::LRSchedule lr_adaptor{1e-4, 500};
  learncore::LRSchedule lr_backbone{1e-3, 500};
  double fedprox_mu = 0.01;
  std::size_t participation = 0;  // clients per round; 0 = all
  std::size_t unseen_masks_per_distribution = 1;

  void validate() const;
};

/// One client's private state. The pre-trained backbone is frozen for the
/// prompt algorithms; adaptors and their optimizer state never leave the
/// client.
struct ClientState {
  std::size_t id = 0;
  std::vector<optics::HyperspectralCube> train_cubes;
  std::vector<optics::HyperspectralCube> test_cubes;
  optics::ClientMasks masks;  // training masks + the recording distribution
  learncore::ParamGroup backbone;
  learncore::ParamGroup adaptors;
  learncore::ParamGroup prompt;
  learncore::AdamState opt_backbone;
  learncore::AdamState opt_adaptor;
  learncore::AdamState opt_prompt;
  std::uint64_t prompt_schedule_step = 0;  // survives per-round prompt resets
  learncore::GradList control;             // SCAFFOLD c_i
  Rng train_rng{0};

  std::size_t data_count() const { return train_cubes.size(); }
};

struct ServerState {
  learncore::ParamGroup global_prompt;    // prompt algorithms
  learncore::ParamGroup global_backbone;  // backbone baselines + joint
  learncore::AdamState opt_joint;
  learncore::GradList control;  // SCAFFOLD c
  std::uint64_t round = 0;
  Rng train_rng{0};  // joint training batches
};

/// Everything a run needs; mutated in place by run_federation.
struct FederationSetup {
  TrainingConfig training;
  learncore::BackboneConfig backbone_cfg;
  learncore::PromptConfig prompt_cfg;
  optics::DispersionModel dispersion;
  optics::NoiseModel noise;
  optics::ScenarioSpec scenario;
  std::vector<ClientState> clients;
  ServerState server;
  Rng eval_rng{0};
  Rng select_rng{0};
  std::vector<std::size_t> update_order;  // empty = ascending ids
};

/// Deterministic construction of clients, masks, data splits, and parameter
/// initializations from a root seed.
FederationSetup build_setup(const dataio::DatasetSpec& data,
                            const optics::ScenarioSpec& scenario,
                            const optics::DispersionModel& dispersion,
                            const optics::NoiseModel& noise,
                            const learncore::BackboneConfig& backbone_cfg,
                            const learncore::PromptConfig& prompt_cfg,
                            const TrainingConfig& training, std::uint64_t seed);

struct MetricsRow {
  std::uint64_t round = 0;
  std::size_t client = 0;
  std::string split;      // "train" | "test"
  std::string mask_kind;  // "seen" | "unseen"
  double psnr_db = 0.0;
  double ssim = 0.0;
  double loss = 0.0;
};

/// Audit of every tensor exchanged with the server, used both for the
/// communication-cost accounting and for checking that adaptors stay local.
struct MessageRecord {
  std::uint64_t round = 0;
  std::size_t client = 0;
  enum class Direction { download, upload } direction = Direction::download;
  std::string group;
  std::string tensor;
  std::size_t count = 0;
};

struct FederationResult {
  std::vector<MetricsRow> history;
  std::vector<MessageRecord> messages;
};

/// Trains the client backbone on its own encoded pairs for `iters`
/// iterations (masks resampled per batch), then marks it frozen.
void pretrain_client(ClientState& client, std::uint64_t iters,
                     const FederationSetup& ctx);

/// Two-stage local update: stage 1 copies the global prompt and trains only
/// the prompt for sp iterations; stage 2 trains only the adaptors for sb
/// iterations. The frozen backbone is untouched; returns the local prompt.
learncore::ParamGroup local_update_fedhp(ClientState& client,
                                         const learncore::ParamGroup& global_prompt,
                                         std::uint64_t sp, std::uint64_t sb,
                                         const FederationSetup& ctx);

/// Plain local training of the whole backbone from the global model.
learncore::ParamGroup local_update_fedavg(ClientState& client,
                                          const learncore::ParamGroup& theta_g,
                                          std::uint64_t iters,
                                          const FederationSetup& ctx);

/// FedAvg plus the proximal gradient mu*(theta - theta_g); mu = 0 follows
/// the exact FedAvg path.
learncore::ParamGroup local_update_fedprox(ClientState& client,
                                           const learncore::ParamGroup& theta_g,
                                           std::uint64_t iters, double mu,
                                           const FederationSetup& ctx);

struct ScaffoldUpdate {
  learncore::ParamGroup theta;
  learncore::GradList control_delta;  // c_i(new) - c_i(old)
};

/// SCAFFOLD local update: every step corrects the gradient with c - c_i;
/// afterwards c_i <- c_i - c + (theta_g - theta_c) / (iters * lr).
ScaffoldUpdate local_update_scaffold(ClientState& client,
                                     const learncore::ParamGroup& theta_g,
                                     const learncore::GradList& server_control,
                                     std::uint64_t iters,
                                     const FederationSetup& ctx);

/// The control-variate recurrence on one tensor list (exposed for direct
/// verification against hand-computed values).
learncore::GradList scaffold_control_update(
    const learncore::GradList& c_i, const learncore::GradList& c,
    const learncore::ParamGroup& theta_g, const learncore::ParamGroup& theta_c,
    std::uint64_t iters, double lr);

/// Data-size weighted average, reduced in the order given (callers pass
/// ascending client id). Weights are n_c / sum(n).
learncore::ParamGroup aggregate(
    const std::vector<std::pair<const learncore::ParamGroup*, std::size_t>>&
        contributions);

/// Trains one backbone on the union of all clients' cubes and masks
/// (privacy-ignoring reference). Mutates theta/opt in place.
void train_centralized_joint(
    learncore::ParamGroup& theta, learncore::AdamState& opt,
    const std::vector<const optics::HyperspectralCube*>& cubes,
    const std::vector<const optics::CodedAperture*>& masks,
    std::uint64_t iters, Rng& rng, const FederationSetup& ctx);

/// Per-round, per-client parameter counts moved in each direction.
struct CommCost {
  std::size_t download = 0;
  std::size_t upload = 0;
};
CommCost comm_cost(Algorithm algorithm,
                   const learncore::BackboneConfig& backbone_cfg,
                   const learncore::PromptConfig& prompt_cfg);

/// The deployed model snapshot used when evaluating a client.
struct EvalModel {
  const learncore::ParamGroup* backbone = nullptr;
  const learncore::ParamGroup* adaptors = nullptr;  // null for baselines
  const learncore::ParamGroup* prompt = nullptr;    // null for baselines
};

EvalModel deployed_model(const FederationSetup& ctx, const ClientState& client);

/// Reconstructs one cube through the deployed model.
optics::HyperspectralCube reconstruct(const EvalModel& model,
                                      const optics::HyperspectralCube& truth,
                                      const optics::CodedAperture& mask,
                                      const FederationSetup& ctx, Rng& rng);

struct CellMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double loss = 0.0;
};

/// Mean quality of a model over a {cubes} x {masks} grid.
CellMetrics evaluate_cell(const EvalModel& model,
                          const std::vector<const optics::HyperspectralCube*>& cubes,
                          const std::vector<const optics::CodedAperture*>& masks,
                          const FederationSetup& ctx, Rng& rng);

/// Fresh evaluation masks: `per_distribution` draws from every client's
/// recorded distribution, shared by all clients in that evaluation.
std::vector<optics::CodedAperture> sample_unseen_masks(
    const FederationSetup& ctx, std::size_t per_distribution, Rng& rng);

/// Runs pretraining (prompt algorithms) plus T rounds of select ->
/// distribute -> local update -> aggregate, evaluating every client each
/// round on train/test cubes under seen/unseen masks.
FederationResult run_federation(FederationSetup& setup);

}  // namespace fedhp::federation
