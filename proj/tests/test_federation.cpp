#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedhp/federation.hpp"
#include "fedhp/learncore/model.hpp"

using namespace fedhp;
using namespace fedhp::federation;
using learncore::GradList;
using learncore::ParamGroup;
using learncore::TensorF;

namespace {

// Small, fast setup shared by most cases: 12x12x3 cubes, B=1 Cf=4 model.
FederationSetup small_setup(Algorithm algo, std::size_t clients = 2,
                            std::uint64_t seed = 404) {
  dataio::DatasetSpec data;
  data.count = clients * 3;
  data.height = 12;
  data.width = 12;
  data.bands = 3;
  data.split = 0.67;

  auto scenario = optics::ScenarioSpec::shaking(
      optics::MaskDistribution::bernoulli(0.5), clients, 2);

  learncore::BackboneConfig bcfg{1, 4, 2, 3};
  learncore::PromptConfig pcfg{3};

  TrainingConfig tc;
  tc.algorithm = algo;
  tc.rounds = 2;
  tc.prompt_iters = 3;
  tc.adaptor_iters = 3;
  tc.local_iters = 4;
  tc.pretrain_iters = 5;
  tc.batch = 1;
  tc.lr_backbone = {1e-3, 500};

  return build_setup(data, scenario, optics::DispersionModel{2, 0},
                     optics::NoiseModel::off(), bcfg, pcfg, tc, seed);
}

double train_set_loss(const ClientState& client, const FederationSetup& ctx) {
  double total = 0.0;
  Rng rng(0);
  for (const auto& cube : client.train_cubes) {
    const auto y = optics::encode(cube, client.masks.masks[0], ctx.dispersion,
                                  ctx.noise, rng);
    const auto y_init = optics::shift_back(y, ctx.dispersion, cube.bands);
    const auto xhat = learncore::backbone_forward(
        ctx.backbone_cfg, client.backbone, nullptr,
        learncore::cube_tensor(y_init));
    total += learncore::mse_loss(xhat, learncore::cube_tensor(cube));
  }
  return total / static_cast<double>(client.train_cubes.size());
}

ParamGroup scalar_group(float value) {
  ParamGroup g;
  g.tag = learncore::Group::prompt;
  g.tensors.emplace_back("w", TensorF({1}, {value}));
  return g;
}

}  // namespace

TEST_CASE("pretrain: zero iterations keep the initialization") {
  auto s = small_setup(Algorithm::fedhp);
  const ParamGroup before = s.clients[0].backbone;
  pretrain_client(s.clients[0], 0, s);
  CHECK(s.clients[0].backbone.bitwise_equal(before));
  CHECK_FALSE(s.clients[0].backbone.trainable);
}

TEST_CASE("pretrain: 200 desk iterations reduce the fixed-batch loss") {
  auto s = small_setup(Algorithm::fedhp);
  const double before = train_set_loss(s.clients[0], s);
  pretrain_client(s.clients[0], 200, s);
  const double after = train_set_loss(s.clients[0], s);
  CHECK(after < before);
}

TEST_CASE("pretrain: identical seed, data, and masks give identical backbones") {
  auto s1 = small_setup(Algorithm::fedhp);
  auto s2 = small_setup(Algorithm::fedhp);
  pretrain_client(s1.clients[0], 30, s1);
  pretrain_client(s2.clients[0], 30, s2);
  CHECK(s1.clients[0].backbone.bitwise_equal(s2.clients[0].backbone));
}

TEST_CASE("pretrain: empty dataset is rejected") {
  auto s = small_setup(Algorithm::fedhp);
  s.clients[0].train_cubes.clear();
  CHECK_THROWS_AS(pretrain_client(s.clients[0], 1, s), InvalidInput);
}

TEST_CASE("fedhp local update: zero iterations copy the global prompt") {
  auto s = small_setup(Algorithm::fedhp);
  pretrain_client(s.clients[0], 3, s);
  ParamGroup global = s.server.global_prompt;
  for (auto& [_, t] : global.tensors)
    for (auto& v : t.v) v += 0.01f;
  const ParamGroup phi = local_update_fedhp(s.clients[0], global, 0, 0, s);
  CHECK(phi.bitwise_equal(global));
  CHECK(s.clients[0].prompt.bitwise_equal(global));
}

TEST_CASE("fedhp local update: frozen backbone and stage isolation") {
  auto s = small_setup(Algorithm::fedhp);
  auto& client = s.clients[0];
  pretrain_client(client, 5, s);
  const ParamGroup theta_before = client.backbone;
  const ParamGroup adaptors_before = client.adaptors;

  // Stage 1 only: prompt trains, adaptors bitwise untouched.
  local_update_fedhp(client, s.server.global_prompt, 4, 0, s);
  CHECK(client.backbone.bitwise_equal(theta_before));
  CHECK(client.adaptors.bitwise_equal(adaptors_before));
  CHECK_FALSE(client.prompt.bitwise_equal(s.server.global_prompt));

  // Stage 2 only: adaptors train, prompt bitwise untouched.
  const ParamGroup phi_post_stage1 = client.prompt;
  local_update_fedhp(client, phi_post_stage1, 0, 4, s);
  CHECK(client.backbone.bitwise_equal(theta_before));
  CHECK(client.prompt.bitwise_equal(phi_post_stage1));
  CHECK_FALSE(client.adaptors.bitwise_equal(adaptors_before));
}

TEST_CASE("fedhp local update: rejects mis-shaped global prompt") {
  auto s = small_setup(Algorithm::fedhp);
  pretrain_client(s.clients[0], 1, s);
  ParamGroup wrong = s.server.global_prompt;
  wrong.tensors.pop_back();
  CHECK_THROWS_AS(local_update_fedhp(s.clients[0], wrong, 1, 0, s),
                  InvalidInput);
}

TEST_CASE("aggregate: weighted means and idempotence") {
  const ParamGroup a = scalar_group(0.2f), b = scalar_group(0.4f);
  const auto equal = aggregate({{&a, 5}, {&b, 5}});
  CHECK(equal.at("w").v[0] == doctest::Approx(0.3).epsilon(1e-7));

  const ParamGroup z = scalar_group(0.0f), four = scalar_group(4.0f);
  const auto weighted = aggregate({{&z, 1}, {&four, 3}});
  CHECK(weighted.at("w").v[0] == doctest::Approx(3.0).epsilon(1e-7));

  const auto same = aggregate({{&a, 2}, {&a, 7}, {&a, 1}});
  CHECK(same.bitwise_equal(a));

  CHECK_THROWS_AS(aggregate({}), InvalidInput);
}

TEST_CASE("fedprox: mu=0 follows the FedAvg trajectory bitwise") {
  auto s1 = small_setup(Algorithm::fedavg);
  auto s2 = small_setup(Algorithm::fedprox);
  const ParamGroup theta0 = s1.server.global_backbone;
  const ParamGroup a =
      local_update_fedavg(s1.clients[0], theta0, 50, s1);
  const ParamGroup b =
      local_update_fedprox(s2.clients[0], theta0, 50, 0.0, s2);
  CHECK(a.bitwise_equal(b));
}

TEST_CASE("fedprox: proximal gradient vanishes at the global model") {
  // First step starts exactly at theta_g, so a huge mu changes nothing.
  auto s1 = small_setup(Algorithm::fedavg);
  auto s2 = small_setup(Algorithm::fedprox);
  const ParamGroup theta0 = s1.server.global_backbone;
  const ParamGroup a = local_update_fedavg(s1.clients[0], theta0, 1, s1);
  const ParamGroup b =
      local_update_fedprox(s2.clients[0], theta0, 1, 1e6, s2);
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    for (std::size_t j = 0; j < a.tensors[i].second.v.size(); ++j)
      CHECK(a.tensors[i].second.v[j] == b.tensors[i].second.v[j]);
}

TEST_CASE("fedprox: large mu keeps the local model closer to the global one") {
  auto s1 = small_setup(Algorithm::fedprox);
  auto s2 = small_setup(Algorithm::fedprox);
  const ParamGroup theta0 = s1.server.global_backbone;
  const ParamGroup free_run =
      local_update_fedprox(s1.clients[0], theta0, 40, 0.0, s1);
  const ParamGroup tight =
      local_update_fedprox(s2.clients[0], theta0, 40, 1e3, s2);

  const auto dist = [&](const ParamGroup& g) {
    double d = 0.0;
    for (std::size_t i = 0; i < g.tensors.size(); ++i)
      for (std::size_t j = 0; j < g.tensors[i].second.v.size(); ++j) {
        const double diff = static_cast<double>(g.tensors[i].second.v[j]) -
                            theta0.tensors[i].second.v[j];
        d += diff * diff;
      }
    return std::sqrt(d);
  };
  CHECK(dist(tight) < dist(free_run));
}

TEST_CASE("scaffold: control update matches the closed form") {
  GradList c_i, c;
  c_i.emplace_back("w", TensorF({1}, {0.5f}));
  c.emplace_back("w", TensorF({1}, {0.2f}));
  const ParamGroup theta_g = scalar_group(1.0f);
  const ParamGroup theta_c = scalar_group(0.6f);
  // c_i - c + (theta_g - theta_c)/(S*lr) = 0.5 - 0.2 + 0.4/(4*0.1) = 1.3
  const auto updated = scaffold_control_update(c_i, c, theta_g, theta_c, 4, 0.1);
  CHECK(updated[0].second.v[0] == doctest::Approx(1.3).epsilon(1e-6));
  CHECK_THROWS_AS(scaffold_control_update(c_i, c, theta_g, theta_c, 0, 0.1),
                  InvalidInput);
}

TEST_CASE("scaffold: zero variates reproduce FedAvg bitwise") {
  auto s1 = small_setup(Algorithm::fedavg);
  auto s2 = small_setup(Algorithm::scaffold);
  const ParamGroup theta0 = s1.server.global_backbone;
  const ParamGroup a = local_update_fedavg(s1.clients[0], theta0, 10, s1);
  const auto b = local_update_scaffold(s2.clients[0], theta0,
                                       s2.server.control, 10, s2);
  CHECK(a.bitwise_equal(b.theta));
}

TEST_CASE("scaffold: variates stay finite over a ten-round run") {
  auto s = small_setup(Algorithm::scaffold);
  s.training.rounds = 10;
  s.training.local_iters = 3;
  run_federation(s);
  for (const auto& client : s.clients)
    for (const auto& [_, t] : client.control)
      CHECK(t.all_finite());
  for (const auto& [_, t] : s.server.control) CHECK(t.all_finite());
}

TEST_CASE("run_federation: zero rounds leave everything at initialization") {
  auto s = small_setup(Algorithm::fedhp);
  s.training.rounds = 0;
  const ParamGroup phi0 = s.server.global_prompt;
  const auto result = run_federation(s);
  CHECK(result.history.empty());
  CHECK(result.messages.empty());
  CHECK(s.server.global_prompt.bitwise_equal(phi0));
}

TEST_CASE("run_federation: single-client FedAvg equals plain local training") {
  auto s1 = small_setup(Algorithm::fedavg, 1);
  s1.training.rounds = 5;
  s1.training.local_iters = 4;
  const ParamGroup theta0 = s1.server.global_backbone;
  run_federation(s1);

  auto s2 = small_setup(Algorithm::fedavg, 1);
  const ParamGroup direct =
      local_update_fedavg(s2.clients[0], theta0, 5 * 4, s2);
  CHECK(s1.server.global_backbone.bitwise_equal(direct));
}

TEST_CASE("run_federation: history bookkeeping is exactly T x C x 4 rows") {
  auto s = small_setup(Algorithm::fedavg, 3);
  s.training.rounds = 2;
  s.training.local_iters = 2;
  const auto result = run_federation(s);
  REQUIRE(result.history.size() == 2 * 3 * 4);
  std::size_t i = 0;
  for (std::uint64_t round = 0; round < 2; ++round)
    for (std::size_t client = 0; client < 3; ++client)
      for (const char* cell : {"train/seen", "train/unseen", "test/seen",
                               "test/unseen"}) {
        const auto& row = result.history[i++];
        CHECK(row.round == round);
        CHECK(row.client == client);
        CHECK(row.split + "/" + row.mask_kind == cell);
        CHECK(std::isfinite(row.psnr_db));
        CHECK(std::isfinite(row.ssim));
        CHECK(std::isfinite(row.loss));
      }
}

TEST_CASE("run_federation: deterministic given the seed") {
  auto s1 = small_setup(Algorithm::fedhp, 2, 777);
  auto s2 = small_setup(Algorithm::fedhp, 2, 777);
  const auto r1 = run_federation(s1);
  const auto r2 = run_federation(s2);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].psnr_db == r2.history[i].psnr_db);
    CHECK(r1.history[i].ssim == r2.history[i].ssim);
    CHECK(r1.history[i].loss == r2.history[i].loss);
  }
  CHECK(s1.server.global_prompt.bitwise_equal(s2.server.global_prompt));
}

TEST_CASE("run_federation: invariant to the client update schedule") {
  auto s1 = small_setup(Algorithm::fedhp, 3);
  auto s2 = small_setup(Algorithm::fedhp, 3);
  s2.update_order = {2, 0, 1};
  const auto r1 = run_federation(s1);
  const auto r2 = run_federation(s2);
  CHECK(s1.server.global_prompt.bitwise_equal(s2.server.global_prompt));
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i)
    CHECK(r1.history[i].psnr_db == r2.history[i].psnr_db);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(s1.clients[c].prompt.bitwise_equal(s2.clients[c].prompt));
    CHECK(s1.clients[c].adaptors.bitwise_equal(s2.clients[c].adaptors));
  }
}

TEST_CASE("run_federation: FedHP never touches the pre-trained backbones") {
  auto s = small_setup(Algorithm::fedhp, 2);
  s.training.rounds = 1;
  run_federation(s);
  std::vector<ParamGroup> snapshot;
  for (const auto& c : s.clients) snapshot.push_back(c.backbone);
  for (int round = 0; round < 3; ++round) {
    run_federation(s);  // resumes one more round
    for (std::size_t c = 0; c < s.clients.size(); ++c)
      CHECK(s.clients[c].backbone.bitwise_equal(snapshot[c]));
  }
}

TEST_CASE("run_federation: adaptors never appear in server messages") {
  auto s = small_setup(Algorithm::fedhp, 2);
  const auto result = run_federation(s);
  CHECK_FALSE(result.messages.empty());
  for (const auto& msg : result.messages) {
    CHECK(msg.group == "prompt");
    CHECK(msg.tensor.find("adaptor") == std::string::npos);
  }
}

TEST_CASE("run_federation: message audit matches comm_cost exactly") {
  for (Algorithm algo : {Algorithm::fedhp, Algorithm::fedavg,
                         Algorithm::scaffold, Algorithm::local_only}) {
    auto s = small_setup(algo, 2);
    s.training.rounds = 2;
    const auto result = run_federation(s);
    const auto cost = comm_cost(algo, s.backbone_cfg, s.prompt_cfg);

    // per (round, client): sum of download and upload counts
    for (std::uint64_t round = 0; round < 2; ++round)
      for (std::size_t client = 0; client < 2; ++client) {
        std::size_t down = 0, up = 0;
        for (const auto& m : result.messages)
          if (m.round == round && m.client == client) {
            if (m.direction == MessageRecord::Direction::download)
              down += m.count;
            else
              up += m.count;
          }
        CHECK(down == cost.download);
        CHECK(up == cost.upload);
      }
  }
}

TEST_CASE("comm_cost: fedhp moves only the prompt") {
  learncore::BackboneConfig bcfg{2, 8, 4, 4};
  learncore::PromptConfig pcfg{4};
  Rng rng(1);
  const std::size_t phi = learncore::init_prompt(pcfg, rng).param_count();
  const std::size_t theta = learncore::init_backbone(bcfg, rng).param_count();

  const auto hp = comm_cost(Algorithm::fedhp, bcfg, pcfg);
  CHECK(hp.upload == phi);
  CHECK(hp.download == phi);
  const auto avg = comm_cost(Algorithm::fedavg, bcfg, pcfg);
  CHECK(avg.upload == theta);
  const auto sc = comm_cost(Algorithm::scaffold, bcfg, pcfg);
  CHECK(sc.upload == 2 * theta);
  CHECK(sc.download == 2 * theta);
  // Desk defaults: the prompt upload is under a tenth of the backbone's.
  CHECK(static_cast<double>(hp.upload) < 0.1 * static_cast<double>(avg.upload));
}

TEST_CASE("joint: one client with its masks equals plain pre-training") {
  auto s1 = small_setup(Algorithm::joint, 1);
  auto s2 = small_setup(Algorithm::fedhp, 1);
  // Same initial backbone and rng stream on both paths.
  s2.clients[0].backbone = s1.server.global_backbone;
  s2.clients[0].opt_backbone =
      learncore::AdamState::like(s2.clients[0].backbone);
  s2.clients[0].train_rng = s1.server.train_rng;

  std::vector<const optics::HyperspectralCube*> cubes;
  std::vector<const optics::CodedAperture*> masks;
  for (const auto& c : s1.clients[0].train_cubes) cubes.push_back(&c);
  for (const auto& m : s1.clients[0].masks.masks) masks.push_back(&m);
  // Joint pools all clients' data; with one client that is the client data.
  s2.clients[0].train_cubes = s1.clients[0].train_cubes;
  s2.clients[0].masks = s1.clients[0].masks;
  train_centralized_joint(s1.server.global_backbone, s1.server.opt_joint,
                          cubes, masks, 25, s1.server.train_rng, s1);
  pretrain_client(s2.clients[0], 25, s2);
  CHECK(s1.server.global_backbone.bitwise_equal(s2.clients[0].backbone));
}

TEST_CASE("run_federation: gaussian measurement noise stays deterministic") {
  auto make = [] {
    auto s = small_setup(Algorithm::fedavg, 2, 606);
    s.noise = optics::NoiseModel::gaussian(0.01);
    s.training.rounds = 1;
    s.training.local_iters = 3;
    return s;
  };
  auto s1 = make();
  auto s2 = make();
  const auto r1 = run_federation(s1);
  const auto r2 = run_federation(s2);
  CHECK(s1.server.global_backbone.bitwise_equal(s2.server.global_backbone));
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i)
    CHECK(r1.history[i].psnr_db == r2.history[i].psnr_db);
}

TEST_CASE("participation subsets evaluate all clients but update a subset") {
  auto s = small_setup(Algorithm::fedavg, 3);
  s.training.rounds = 2;
  s.training.participation = 2;
  const auto result = run_federation(s);
  CHECK(result.history.size() == 2 * 3 * 4);
  for (std::uint64_t round = 0; round < 2; ++round) {
    std::size_t participants = 0;
    std::vector<bool> seen(3, false);
    for (const auto& m : result.messages)
      if (m.round == round &&
          m.direction == MessageRecord::Direction::download && !seen[m.client]) {
        seen[m.client] = true;
        ++participants;
      }
    CHECK(participants == 2);
  }
}
