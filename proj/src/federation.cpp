#include "fedhp/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedhp/learncore/graph.hpp"
#include "fedhp/metrics.hpp"

namespace fedhp::federation {

using learncore::AdamState;
using learncore::BoundGroup;
using learncore::GradList;
using learncore::GraphF;
using learncore::Group;
using learncore::ParamGroup;
using learncore::TensorF;
using optics::CodedAperture;
using optics::HyperspectralCube;
using optics::Measurement;

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::fedhp: return "fedhp";
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::scaffold: return "scaffold";
    case Algorithm::joint: return "joint";
    case Algorithm::local_only: return "local-only";
  }
  return "?";
}

Algorithm algorithm_from_name(const std::string& name) {
  for (Algorithm a : {Algorithm::fedhp, Algorithm::fedavg, Algorithm::fedprox,
                      Algorithm::scaffold, Algorithm::joint,
                      Algorithm::local_only})
    if (name == algorithm_name(a)) return a;
  throw InvalidInput("unknown algorithm '" + name + "'");
}

void TrainingConfig::validate() const {
  if (batch < 1) throw InvalidInput("training: batch must be >= 1");
  if (lr_prompt.initial <= 0 || lr_adaptor.initial <= 0 ||
      lr_backbone.initial <= 0)
    throw InvalidInput("training: learning rates must be > 0");
  if (lr_prompt.halving_period < 1 || lr_adaptor.halving_period < 1 ||
      lr_backbone.halving_period < 1)
    throw InvalidInput("training: halving period must be >= 1");
  if (fedprox_mu < 0) throw InvalidInput("training: fedprox mu must be >= 0");
}

namespace {

GradList zeros_like(const ParamGroup& g) {
  GradList out;
  for (const auto& [name, t] : g.tensors)
    out.emplace_back(name, TensorF::zeros(t.shape));
  return out;
}

bool gradlist_all_zero(const GradList& g) {
  for (const auto& [_, t] : g)
    for (float v : t.v)
      if (v != 0.0f) return false;
  return true;
}

struct Sample {
  const HyperspectralCube* cube;
  const CodedAperture* mask;
};

Sample draw_sample(const std::vector<const HyperspectralCube*>& cubes,
                   const std::vector<const CodedAperture*>& masks, Rng& rng) {
  return {cubes[rng.below(cubes.size())], masks[rng.below(masks.size())]};
}

std::vector<const HyperspectralCube*> cube_ptrs(
    const std::vector<HyperspectralCube>& cubes) {
  std::vector<const HyperspectralCube*> out;
  out.reserve(cubes.size());
  for (const auto& c : cubes) out.push_back(&c);
  return out;
}

std::vector<const CodedAperture*> mask_ptrs(
    const std::vector<CodedAperture>& masks) {
  std::vector<const CodedAperture*> out;
  out.reserve(masks.size());
  for (const auto& m : masks) out.push_back(&m);
  return out;
}

/// One Adam step of the plain backbone objective on a freshly drawn batch.
/// `tweak` may adjust the gradients (proximal / control-variate terms).
template <typename TweakFn>
void backbone_train_step(ParamGroup& theta, AdamState& opt,
                         const std::vector<const HyperspectralCube*>& cubes,
                         const std::vector<const CodedAperture*>& masks,
                         Rng& rng, const FederationSetup& ctx,
                         const TweakFn& tweak) {
  const auto& tc = ctx.training;
  GraphF g;
  auto bt = bind_group(g, theta);
  GraphF::Var total{};
  for (std::size_t b = 0; b < tc.batch; ++b) {
    const Sample s = draw_sample(cubes, masks, rng);
    const Measurement y =
        optics::encode(*s.cube, *s.mask, ctx.dispersion, ctx.noise, rng);
    auto y_in = g.input(learncore::measurement_tensor(y), "y");
    auto y_init = g.shift_back(y_in, ctx.dispersion.step,
                               ctx.backbone_cfg.bands, "y_init");
    auto xhat = backbone_graph<float>(g, ctx.backbone_cfg, bt, nullptr, y_init);
    auto l = g.mse(xhat, g.input(learncore::cube_tensor(*s.cube), "x"), "loss");
    total = b == 0 ? l : g.add(total, l);
  }
  auto loss = g.scale(total, 1.0f / static_cast<float>(tc.batch));
  g.backward(loss, {Group::backbone});
  GradList grads = collect_grads(g, bt);
  tweak(grads, theta);
  adam_step(theta, grads, opt, tc.lr_backbone.rate(opt.step));
}

const auto no_tweak = [](GradList&, const ParamGroup&) {};

/// One Adam step of the prompt objective; trains exactly `which`.
void fedhp_train_step(ClientState& client, Group which,
                      const FederationSetup& ctx) {
  const auto& tc = ctx.training;
  const auto cubes = cube_ptrs(client.train_cubes);
  const auto masks = mask_ptrs(client.masks.masks);

  GraphF g;
  auto bt = bind_group(g, client.backbone);
  auto ba = bind_group(g, client.adaptors);
  auto bp = bind_group(g, client.prompt);
  GraphF::Var total{};
  for (std::size_t b = 0; b < tc.batch; ++b) {
    const Sample s = draw_sample(cubes, masks, client.train_rng);
    const Measurement y = optics::encode(*s.cube, *s.mask, ctx.dispersion,
                                         ctx.noise, client.train_rng);
    auto mask_in = g.input(
        learncore::pad_mask_to_measurement(*s.mask, ctx.dispersion,
                                           ctx.backbone_cfg.bands),
        "mask");
    auto prompt = prompt_graph(g, bp, mask_in);
    auto y_in = g.input(learncore::measurement_tensor(y), "y");
    auto y2 = g.add(y_in, prompt, "y_prompted");
    auto y_init = g.shift_back(y2, ctx.dispersion.step,
                               ctx.backbone_cfg.bands, "y_init");
    auto xhat = backbone_graph(g, ctx.backbone_cfg, bt, &ba, y_init);
    auto l = g.mse(xhat, g.input(learncore::cube_tensor(*s.cube), "x"), "loss");
    total = b == 0 ? l : g.add(total, l);
  }
  auto loss = g.scale(total, 1.0f / static_cast<float>(tc.batch));
  g.backward(loss, {which});

  if (which == Group::prompt) {
    GradList grads = collect_grads(g, bp);
    adam_step(client.prompt, grads, client.opt_prompt,
              tc.lr_prompt.rate(client.prompt_schedule_step));
    client.prompt_schedule_step += 1;
  } else {
    GradList grads = collect_grads(g, ba);
    adam_step(client.adaptors, grads, client.opt_adaptor,
              tc.lr_adaptor.rate(client.opt_adaptor.step));
  }
}

}  // namespace

FederationSetup build_setup(const dataio::DatasetSpec& data,
                            const optics::ScenarioSpec& scenario,
                            const optics::DispersionModel& dispersion,
                            const optics::NoiseModel& noise,
                            const learncore::BackboneConfig& backbone_cfg,
                            const learncore::PromptConfig& prompt_cfg,
                            const TrainingConfig& training,
                            std::uint64_t seed) {
  data.validate();
  scenario.validate();
  dispersion.validate(data.bands);
  noise.validate();
  backbone_cfg.validate();
  prompt_cfg.validate();
  training.validate();
  if (backbone_cfg.bands != data.bands)
    throw InvalidInput("setup: model bands must match dataset bands");
  if (data.count < 2 * scenario.clients)
    throw InvalidInput(
        "setup: need at least two cubes per client (train + test)");

  FederationSetup s;
  s.training = training;
  s.backbone_cfg = backbone_cfg;
  s.prompt_cfg = prompt_cfg;
  s.dispersion = dispersion;
  s.noise = noise;
  s.scenario = scenario;

  const Rng root(seed);
  auto cubes = dataio::load_or_generate_cubes(data, root.fork(1));
  auto parts = dataio::split_dataset(cubes.size(), scenario.clients, root.fork(2));
  auto scenario_masks =
      optics::make_scenario(scenario, data.height, data.width, root.fork(3));

  const Rng init = root.fork(4);
  {
    Rng r = init.fork(0);
    s.server.global_prompt = learncore::init_prompt(prompt_cfg, r);
  }
  {
    Rng r = init.fork(1);
    s.server.global_backbone = learncore::init_backbone(backbone_cfg, r);
  }
  s.server.opt_joint = AdamState::like(s.server.global_backbone);
  s.server.control = zeros_like(s.server.global_backbone);
  s.server.train_rng = root.fork(5);

  const Rng client_train = root.fork(6);
  for (std::size_t c = 0; c < scenario.clients; ++c) {
    ClientState client;
    client.id = c;
    const auto& idx = parts[c];
    if (idx.size() < 2)
      throw InvalidInput("setup: client " + std::to_string(c) +
                         " has fewer than two cubes");
    std::size_t n_train = static_cast<std::size_t>(
        std::lround(data.split * static_cast<double>(idx.size())));
    n_train = std::min(std::max<std::size_t>(n_train, 1), idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? client.train_cubes : client.test_cubes)
          .push_back(cubes[idx[i]]);
    client.masks = scenario_masks[c];
    {
      Rng r = init.fork(10 + c);
      client.backbone = learncore::init_backbone(backbone_cfg, r);
    }
    {
      Rng r = init.fork(100 + c);
      client.adaptors = learncore::init_adaptors(backbone_cfg, r);
    }
    client.prompt = s.server.global_prompt;
    client.opt_backbone = AdamState::like(client.backbone);
    client.opt_adaptor = AdamState::like(client.adaptors);
    client.opt_prompt = AdamState::like(client.prompt);
    client.control = zeros_like(client.backbone);
    client.train_rng = client_train.fork(c);
    s.clients.push_back(std::move(client));
  }
  s.eval_rng = root.fork(7);
  s.select_rng = root.fork(8);
  return s;
}

void pretrain_client(ClientState& client, std::uint64_t iters,
                     const FederationSetup& ctx) {
  if (client.train_cubes.empty() || client.masks.masks.empty())
    throw InvalidInput("pretrain: client needs data and at least one mask");
  const auto cubes = cube_ptrs(client.train_cubes);
  const auto masks = mask_ptrs(client.masks.masks);
  client.backbone.trainable = true;
  for (std::uint64_t i = 0; i < iters; ++i)
    backbone_train_step(client.backbone, client.opt_backbone, cubes, masks,
                        client.train_rng, ctx, no_tweak);
  client.backbone.trainable = false;
}

ParamGroup local_update_fedhp(ClientState& client,
                              const ParamGroup& global_prompt,
                              std::uint64_t sp, std::uint64_t sb,
                              const FederationSetup& ctx) {
  if (global_prompt.tensors.size() != client.prompt.tensors.size())
    throw InvalidInput("fedhp: global prompt shape mismatch");
  for (std::size_t i = 0; i < global_prompt.tensors.size(); ++i)
    if (global_prompt.tensors[i].second.shape !=
        client.prompt.tensors[i].second.shape)
      throw InvalidInput("fedhp: global prompt shape mismatch");

  client.prompt.tensors = global_prompt.tensors;
  // The received prompt is a fresh parameter vector; moments from the
  // previous round's local trajectory do not apply to it. The learning-rate
  // schedule keeps its own counter.
  client.opt_prompt = learncore::AdamState::like(client.prompt);
  for (std::uint64_t i = 0; i < sp; ++i)
    fedhp_train_step(client, Group::prompt, ctx);
  for (std::uint64_t i = 0; i < sb; ++i)
    fedhp_train_step(client, Group::adaptor, ctx);
  return client.prompt;
}

ParamGroup local_update_fedavg(ClientState& client, const ParamGroup& theta_g,
                               std::uint64_t iters,
                               const FederationSetup& ctx) {
  return local_update_fedprox(client, theta_g, iters, 0.0, ctx);
}

ParamGroup local_update_fedprox(ClientState& client, const ParamGroup& theta_g,
                                std::uint64_t iters, double mu,
                                const FederationSetup& ctx) {
  if (theta_g.tensors.size() != client.backbone.tensors.size())
    throw InvalidInput("local update: global backbone shape mismatch");
  client.backbone.tensors = theta_g.tensors;
  const auto cubes = cube_ptrs(client.train_cubes);
  const auto masks = mask_ptrs(client.masks.masks);
  // mu = 0 skips the term entirely so the FedAvg path is followed bitwise.
  const auto tweak = [&](GradList& grads, const ParamGroup& theta) {
    if (mu == 0.0) return;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& pg = theta_g.tensors[i].second;
      const auto& pc = theta.tensors[i].second;
      auto& g = grads[i].second;
      for (std::size_t j = 0; j < g.v.size(); ++j)
        g.v[j] = static_cast<float>(
            static_cast<double>(g.v[j]) +
            mu * (static_cast<double>(pc.v[j]) - static_cast<double>(pg.v[j])));
    }
  };
  for (std::uint64_t i = 0; i < iters; ++i)
    backbone_train_step(client.backbone, client.opt_backbone, cubes, masks,
                        client.train_rng, ctx, tweak);
  return client.backbone;
}

GradList scaffold_control_update(const GradList& c_i, const GradList& c,
                                 const ParamGroup& theta_g,
                                 const ParamGroup& theta_c,
                                 std::uint64_t iters, double lr) {
  if (iters == 0 || lr <= 0.0)
    throw InvalidInput("scaffold: control update needs iters >= 1 and lr > 0");
  GradList out;
  const double inv = 1.0 / (static_cast<double>(iters) * lr);
  for (std::size_t i = 0; i < c_i.size(); ++i) {
    TensorF t = c_i[i].second;
    const auto& tg = theta_g.tensors[i].second;
    const auto& tc = theta_c.tensors[i].second;
    for (std::size_t j = 0; j < t.v.size(); ++j)
      t.v[j] = static_cast<float>(
          static_cast<double>(c_i[i].second.v[j]) -
          static_cast<double>(c[i].second.v[j]) +
          (static_cast<double>(tg.v[j]) - static_cast<double>(tc.v[j])) * inv);
    out.emplace_back(c_i[i].first, std::move(t));
  }
  return out;
}

ScaffoldUpdate local_update_scaffold(ClientState& client,
                                     const ParamGroup& theta_g,
                                     const GradList& server_control,
                                     std::uint64_t iters,
                                     const FederationSetup& ctx) {
  if (theta_g.tensors.size() != client.backbone.tensors.size())
    throw InvalidInput("scaffold: global backbone shape mismatch");
  client.backbone.tensors = theta_g.tensors;
  const auto cubes = cube_ptrs(client.train_cubes);
  const auto masks = mask_ptrs(client.masks.masks);

  // Zero variates on both sides leave the gradients untouched, keeping the
  // first round bit-identical to FedAvg.
  const bool correction_active =
      !(gradlist_all_zero(server_control) && gradlist_all_zero(client.control));
  const auto tweak = [&](GradList& grads, const ParamGroup&) {
    if (!correction_active) return;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& g = grads[i].second;
      const auto& cg = server_control[i].second;
      const auto& ci = client.control[i].second;
      for (std::size_t j = 0; j < g.v.size(); ++j)
        g.v[j] = static_cast<float>(static_cast<double>(g.v[j]) +
                                    static_cast<double>(cg.v[j]) -
                                    static_cast<double>(ci.v[j]));
    }
  };

  const double lr_round =
      ctx.training.lr_backbone.rate(client.opt_backbone.step);
  for (std::uint64_t i = 0; i < iters; ++i)
    backbone_train_step(client.backbone, client.opt_backbone, cubes, masks,
                        client.train_rng, ctx, tweak);

  GradList updated = scaffold_control_update(client.control, server_control,
                                             theta_g, client.backbone, iters,
                                             lr_round);
  ScaffoldUpdate result;
  result.theta = client.backbone;
  result.control_delta = zeros_like(client.backbone);
  for (std::size_t i = 0; i < updated.size(); ++i)
    for (std::size_t j = 0; j < updated[i].second.v.size(); ++j)
      result.control_delta[i].second.v[j] =
          updated[i].second.v[j] - client.control[i].second.v[j];
  client.control = std::move(updated);
  return result;
}

ParamGroup aggregate(
    const std::vector<std::pair<const ParamGroup*, std::size_t>>& contributions) {
  if (contributions.empty())
    throw InvalidInput("aggregate: empty contribution list");
  double total = 0.0;
  for (const auto& [_, n] : contributions) total += static_cast<double>(n);
  if (total <= 0.0) throw InvalidInput("aggregate: total weight must be > 0");

  const ParamGroup& first = *contributions[0].first;
  for (const auto& [g, _] : contributions) {
    if (g->tensors.size() != first.tensors.size())
      throw InvalidInput("aggregate: group layout mismatch");
    for (std::size_t i = 0; i < first.tensors.size(); ++i)
      if (g->tensors[i].second.shape != first.tensors[i].second.shape ||
          g->tensors[i].first != first.tensors[i].first)
        throw InvalidInput("aggregate: tensor layout mismatch");
  }

  ParamGroup out = first;
  for (std::size_t i = 0; i < out.tensors.size(); ++i) {
    auto& t = out.tensors[i].second;
    std::vector<double> acc(t.v.size(), 0.0);
    for (const auto& [g, n] : contributions) {
      const double w = static_cast<double>(n) / total;
      const auto& src = g->tensors[i].second;
      for (std::size_t j = 0; j < acc.size(); ++j)
        acc[j] += w * static_cast<double>(src.v[j]);
    }
    for (std::size_t j = 0; j < acc.size(); ++j)
      t.v[j] = static_cast<float>(acc[j]);
  }
  return out;
}

void train_centralized_joint(
    ParamGroup& theta, AdamState& opt,
    const std::vector<const HyperspectralCube*>& cubes,
    const std::vector<const CodedAperture*>& masks, std::uint64_t iters,
    Rng& rng, const FederationSetup& ctx) {
  if (cubes.empty() || masks.empty())
    throw InvalidInput("joint: needs data and at least one mask");
  for (std::uint64_t i = 0; i < iters; ++i)
    backbone_train_step(theta, opt, cubes, masks, rng, ctx, no_tweak);
}

CommCost comm_cost(Algorithm algorithm,
                   const learncore::BackboneConfig& backbone_cfg,
                   const learncore::PromptConfig& prompt_cfg) {
  Rng dummy(0);
  const std::size_t theta =
      learncore::init_backbone(backbone_cfg, dummy).param_count();
  const std::size_t phi = learncore::init_prompt(prompt_cfg, dummy).param_count();
  switch (algorithm) {
    case Algorithm::fedhp:
      return {phi, phi};
    case Algorithm::fedavg:
    case Algorithm::fedprox:
      return {theta, theta};
    case Algorithm::scaffold:
      return {2 * theta, 2 * theta};
    case Algorithm::joint:
    case Algorithm::local_only:
      return {0, 0};
  }
  return {};
}

EvalModel deployed_model(const FederationSetup& ctx, const ClientState& client) {
  EvalModel m;
  switch (ctx.training.algorithm) {
    case Algorithm::fedhp:
      m.backbone = &client.backbone;
      m.adaptors = &client.adaptors;
      m.prompt = &ctx.server.global_prompt;
      break;
    case Algorithm::local_only:
      m.backbone = &client.backbone;
      m.adaptors = &client.adaptors;
      m.prompt = &client.prompt;
      break;
    case Algorithm::fedavg:
    case Algorithm::fedprox:
    case Algorithm::scaffold:
    case Algorithm::joint:
      m.backbone = &ctx.server.global_backbone;
      break;
  }
  return m;
}

HyperspectralCube reconstruct(const EvalModel& model,
                              const HyperspectralCube& truth,
                              const CodedAperture& mask,
                              const FederationSetup& ctx, Rng& rng) {
  Measurement y = optics::encode(truth, mask, ctx.dispersion, ctx.noise, rng);
  if (model.prompt) {
    const TensorF prompt = learncore::prompt_forward(
        *model.prompt, mask, ctx.dispersion, ctx.backbone_cfg.bands);
    y = learncore::apply_prompt(y, prompt);
  }
  const HyperspectralCube y_init =
      optics::shift_back(y, ctx.dispersion, ctx.backbone_cfg.bands);
  const TensorF xhat = learncore::backbone_forward(
      ctx.backbone_cfg, *model.backbone, model.adaptors,
      learncore::cube_tensor(y_init));
  return learncore::tensor_cube(xhat);
}

CellMetrics evaluate_cell(const EvalModel& model,
                          const std::vector<const HyperspectralCube*>& cubes,
                          const std::vector<const CodedAperture*>& masks,
                          const FederationSetup& ctx, Rng& rng) {
  if (cubes.empty() || masks.empty())
    throw InvalidInput("evaluate: empty cube or mask set");
  CellMetrics acc;
  std::size_t n = 0;
  for (const auto* cube : cubes)
    for (const auto* mask : masks) {
      const HyperspectralCube xhat = reconstruct(model, *cube, *mask, ctx, rng);
      const auto report = metrics::evaluate_cube(xhat, *cube);
      acc.psnr_db += report.psnr_db;
      acc.ssim += report.ssim;
      acc.loss += learncore::mse_loss(learncore::cube_tensor(xhat),
                                      learncore::cube_tensor(*cube));
      ++n;
    }
  acc.psnr_db /= static_cast<double>(n);
  acc.ssim /= static_cast<double>(n);
  acc.loss /= static_cast<double>(n);
  return acc;
}

std::vector<CodedAperture> sample_unseen_masks(const FederationSetup& ctx,
                                               std::size_t per_distribution,
                                               Rng& rng) {
  std::vector<CodedAperture> out;
  const std::size_t h = ctx.clients.front().masks.masks.front().height;
  const std::size_t w = ctx.clients.front().masks.masks.front().width;
  for (const auto& client : ctx.clients)
    for (std::size_t k = 0; k < per_distribution; ++k)
      out.push_back(
          optics::sample_mask(client.masks.distribution, h, w, rng));
  return out;
}

namespace {

void record_group(std::vector<MessageRecord>& log, std::uint64_t round,
                  std::size_t client, MessageRecord::Direction dir,
                  const char* group, const ParamGroup& params) {
  for (const auto& [name, t] : params.tensors)
    log.push_back({round, client, dir, group, name, t.numel()});
}

void record_control(std::vector<MessageRecord>& log, std::uint64_t round,
                    std::size_t client, MessageRecord::Direction dir,
                    const GradList& control) {
  for (const auto& [name, t] : control)
    log.push_back({round, client, dir, "control", name, t.numel()});
}

std::vector<std::size_t> select_participants(FederationSetup& s,
                                             std::uint64_t round) {
  const std::size_t c = s.clients.size();
  std::size_t want = s.training.participation;
  if (want == 0 || want >= c) {
    std::vector<std::size_t> all(c);
    for (std::size_t i = 0; i < c; ++i) all[i] = i;
    return all;
  }
  Rng rng = s.select_rng.fork(round);
  std::vector<std::size_t> pool(c);
  for (std::size_t i = 0; i < c; ++i) pool[i] = i;
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(want);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> update_order_of(const FederationSetup& s,
                                         const std::vector<std::size_t>& participants) {
  if (s.update_order.empty()) return participants;
  std::vector<std::size_t> order;
  for (std::size_t id : s.update_order)
    if (std::find(participants.begin(), participants.end(), id) !=
        participants.end())
      order.push_back(id);
  if (order.size() != participants.size())
    throw InvalidInput("run_federation: update order must cover participants");
  return order;
}

void evaluate_round(FederationSetup& s, std::uint64_t round,
                    std::vector<MetricsRow>& history) {
  Rng round_rng = s.eval_rng.fork(round);
  Rng mask_rng = round_rng.fork(0);
  const auto unseen = sample_unseen_masks(
      s, s.training.unseen_masks_per_distribution, mask_rng);
  const auto unseen_p = mask_ptrs(unseen);

  for (const auto& client : s.clients) {
    const EvalModel model = deployed_model(s, client);
    const auto train_p = cube_ptrs(client.train_cubes);
    const auto test_p = cube_ptrs(client.test_cubes);
    const auto seen_p = mask_ptrs(client.masks.masks);

    const struct {
      const char* split;
      const char* kind;
      const std::vector<const HyperspectralCube*>* cubes;
      const std::vector<const CodedAperture*>* masks;
    } cells[4] = {
        {"train", "seen", &train_p, &seen_p},
        {"train", "unseen", &train_p, &unseen_p},
        {"test", "seen", &test_p, &seen_p},
        {"test", "unseen", &test_p, &unseen_p},
    };
    for (std::size_t i = 0; i < 4; ++i) {
      Rng cell_rng = round_rng.fork(1 + client.id * 4 + i);
      const CellMetrics m =
          evaluate_cell(model, *cells[i].cubes, *cells[i].masks, s, cell_rng);
      history.push_back({round, client.id, cells[i].split, cells[i].kind,
                         m.psnr_db, m.ssim, m.loss});
    }
  }
}

}  // namespace

FederationResult run_federation(FederationSetup& s) {
  s.training.validate();
  if (s.clients.empty()) throw InvalidInput("run_federation: no clients");
  FederationResult result;
  const Algorithm algo = s.training.algorithm;

  // Pretraining happens once, before the first round; calling again on the
  // same setup resumes where the previous call stopped.
  if ((algo == Algorithm::fedhp || algo == Algorithm::local_only) &&
      s.server.round == 0)
    for (auto& client : s.clients)
      pretrain_client(client, s.training.pretrain_iters, s);

  const std::uint64_t start = s.server.round;
  for (std::uint64_t t = start; t < start + s.training.rounds; ++t) {
    const auto participants = select_participants(s, t);
    const auto order = update_order_of(s, participants);

    switch (algo) {
      case Algorithm::fedhp: {
        for (std::size_t id : order) {
          auto& client = s.clients[id];
          record_group(result.messages, t, id,
                       MessageRecord::Direction::download, "prompt",
                       s.server.global_prompt);
          const ParamGroup phi = local_update_fedhp(
              client, s.server.global_prompt, s.training.prompt_iters,
              s.training.adaptor_iters, s);
          record_group(result.messages, t, id, MessageRecord::Direction::upload,
                       "prompt", phi);
        }
        std::vector<std::pair<const ParamGroup*, std::size_t>> contrib;
        for (std::size_t id : participants)
          contrib.emplace_back(&s.clients[id].prompt,
                               s.clients[id].data_count());
        s.server.global_prompt = aggregate(contrib);
        break;
      }
      case Algorithm::local_only: {
        for (std::size_t id : order) {
          auto& client = s.clients[id];
          local_update_fedhp(client, client.prompt, s.training.prompt_iters,
                             s.training.adaptor_iters, s);
        }
        break;
      }
      case Algorithm::fedavg:
      case Algorithm::fedprox: {
        const double mu =
            algo == Algorithm::fedprox ? s.training.fedprox_mu : 0.0;
        for (std::size_t id : order) {
          auto& client = s.clients[id];
          record_group(result.messages, t, id,
                       MessageRecord::Direction::download, "backbone",
                       s.server.global_backbone);
          const ParamGroup theta = local_update_fedprox(
              client, s.server.global_backbone, s.training.local_iters, mu, s);
          record_group(result.messages, t, id, MessageRecord::Direction::upload,
                       "backbone", theta);
        }
        std::vector<std::pair<const ParamGroup*, std::size_t>> contrib;
        for (std::size_t id : participants)
          contrib.emplace_back(&s.clients[id].backbone,
                               s.clients[id].data_count());
        s.server.global_backbone = aggregate(contrib);
        break;
      }
      case Algorithm::scaffold: {
        std::vector<GradList> deltas(s.clients.size());
        for (std::size_t id : order) {
          auto& client = s.clients[id];
          record_group(result.messages, t, id,
                       MessageRecord::Direction::download, "backbone",
                       s.server.global_backbone);
          record_control(result.messages, t, id,
                         MessageRecord::Direction::download, s.server.control);
          ScaffoldUpdate u = local_update_scaffold(
              client, s.server.global_backbone, s.server.control,
              s.training.local_iters, s);
          record_group(result.messages, t, id, MessageRecord::Direction::upload,
                       "backbone", u.theta);
          record_control(result.messages, t, id,
                         MessageRecord::Direction::upload, u.control_delta);
          deltas[id] = std::move(u.control_delta);
        }
        std::vector<std::pair<const ParamGroup*, std::size_t>> contrib;
        for (std::size_t id : participants)
          contrib.emplace_back(&s.clients[id].backbone,
                               s.clients[id].data_count());
        s.server.global_backbone = aggregate(contrib);
        const double inv_total = 1.0 / static_cast<double>(s.clients.size());
        for (std::size_t id : participants)
          for (std::size_t i = 0; i < s.server.control.size(); ++i)
            for (std::size_t j = 0; j < s.server.control[i].second.v.size(); ++j)
              s.server.control[i].second.v[j] = static_cast<float>(
                  static_cast<double>(s.server.control[i].second.v[j]) +
                  inv_total * static_cast<double>(deltas[id][i].second.v[j]));
        break;
      }
      case Algorithm::joint: {
        std::vector<const HyperspectralCube*> cubes;
        std::vector<const CodedAperture*> masks;
        for (const auto& client : s.clients) {
          for (const auto& c : client.train_cubes) cubes.push_back(&c);
          for (const auto& m : client.masks.masks) masks.push_back(&m);
        }
        train_centralized_joint(s.server.global_backbone, s.server.opt_joint,
                                cubes, masks, s.training.local_iters,
                                s.server.train_rng, s);
        break;
      }
    }

    evaluate_round(s, t, result.history);
    s.server.round = t + 1;
  }
  return result;
}

}  // namespace fedhp::federation
