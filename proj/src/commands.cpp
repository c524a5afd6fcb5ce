#include "fedhp/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fedhp/learncore/gradcheck.hpp"
#include "fedhp/metrics.hpp"

namespace fedhp::cli {

using federation::Algorithm;
using federation::FederationSetup;
using learncore::ParamGroup;

namespace {

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out)
    throw IoError(IoError::Kind::open_failed, "cannot write " + path.string());
  out << text;
}

void append_group(dataio::CheckpointData& ckpt, const std::string& group,
                  const ParamGroup& params, const learncore::AdamState* opt) {
  for (const auto& [name, t] : params.tensors)
    ckpt.entries.push_back({group, name, "param", t.shape, t.v});
  if (opt) {
    for (const auto& [name, t] : opt->m)
      ckpt.entries.push_back({group, "m:" + name, "optimizer", t.shape, t.v});
    for (const auto& [name, t] : opt->v)
      ckpt.entries.push_back({group, "v:" + name, "optimizer", t.shape, t.v});
  }
}

void restore_group(const dataio::CheckpointData& ckpt, const std::string& group,
                   ParamGroup& params) {
  for (auto& [name, t] : params.tensors) {
    const auto* e = ckpt.find(group, name);
    if (!e)
      throw IoError(IoError::Kind::bad_manifest,
                    "checkpoint: missing tensor " + group + "/" + name);
    if (e->shape != t.shape)
      throw IoError(IoError::Kind::bad_manifest,
                    "checkpoint: shape mismatch for " + group + "/" + name);
    t.v = e->data;
  }
}

std::string client_group(std::size_t id, const char* which) {
  return "client" + std::to_string(id) + "." + which;
}

}  // namespace

std::string metrics_csv(const std::vector<federation::MetricsRow>& rows) {
  std::string out = "round,client,split,mask_kind,psnr_db,ssim,loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round);
    out += ',';
    out += std::to_string(r.client);
    out += ',';
    out += r.split;
    out += ',';
    out += r.mask_kind;
    out += ',';
    out += fmt6(r.psnr_db);
    out += ',';
    out += fmt6(r.ssim);
    out += ',';
    out += fmt6(r.loss);
    out += '\n';
  }
  return out;
}

void cmd_gen_data(const ExperimentConfig& config,
                  const std::filesystem::path& out) {
  const Rng root(config.seed);
  const auto cubes = dataio::load_or_generate_cubes(config.data, root.fork(1));
  dataio::save_dataset(out / "dataset", cubes);
  write_text(out / "resolved_config.json", config.to_json().dump(2) + "\n");
}

void cmd_gen_masks(const ExperimentConfig& config,
                   const std::filesystem::path& out) {
  const Rng root(config.seed);
  const auto scenario = optics::make_scenario(
      config.scenario, config.data.height, config.data.width, root.fork(3));
  std::filesystem::create_directories(out / "masks");
  nlohmann::json manifest;
  manifest["format"] = "fedhp-masks-v1";
  manifest["clients"] = nlohmann::json::array();
  for (std::size_t c = 0; c < scenario.size(); ++c) {
    nlohmann::json cj;
    cj["client"] = c;
    cj["masks"] = nlohmann::json::array();
    for (std::size_t k = 0; k < scenario[c].masks.size(); ++k) {
      const auto& m = scenario[c].masks[k];
      const std::string rel =
          "masks/client" + std::to_string(c) + "_mask" + std::to_string(k) +
          ".fht";
      const std::size_t shape[2] = {m.height, m.width};
      dataio::save_tensor(out / rel, shape, m.transmittance);
      cj["masks"].push_back(rel);
    }
    manifest["clients"].push_back(std::move(cj));
  }
  write_text(out / "scenario.json", manifest.dump(2) + "\n");
  write_text(out / "resolved_config.json", config.to_json().dump(2) + "\n");
}

void cmd_pretrain(const ExperimentConfig& config,
                  const std::filesystem::path& out) {
  FederationSetup setup = config.make_setup();
  for (auto& client : setup.clients) {
    federation::pretrain_client(client, config.training.pretrain_iters, setup);
    dataio::CheckpointData ckpt;
    ckpt.round = 0;
    ckpt.config_hash = config.hash();
    append_group(ckpt, "backbone", client.backbone, &client.opt_backbone);
    dataio::save_checkpoint(
        out / ("client" + std::to_string(client.id)), ckpt);
  }
  write_text(out / "resolved_config.json", config.to_json().dump(2) + "\n");
}

federation::FederationResult cmd_federate(const ExperimentConfig& config,
                                          const std::filesystem::path& out) {
  FederationSetup setup = config.make_setup();
  federation::FederationResult result = federation::run_federation(setup);

  std::filesystem::create_directories(out);
  write_text(out / "metrics.csv", metrics_csv(result.history));
  write_text(out / "resolved_config.json", config.to_json().dump(2) + "\n");

  dataio::CheckpointData ckpt;
  ckpt.round = setup.server.round;
  ckpt.config_hash = config.hash();
  append_group(ckpt, "server.prompt", setup.server.global_prompt, nullptr);
  append_group(ckpt, "server.backbone", setup.server.global_backbone, nullptr);
  for (const auto& client : setup.clients) {
    append_group(ckpt, client_group(client.id, "backbone"), client.backbone,
                 &client.opt_backbone);
    append_group(ckpt, client_group(client.id, "adaptor"), client.adaptors,
                 &client.opt_adaptor);
    append_group(ckpt, client_group(client.id, "prompt"), client.prompt,
                 &client.opt_prompt);
  }
  dataio::save_checkpoint(out / "checkpoint", ckpt);
  return result;
}

std::vector<EvaluateCell> cmd_evaluate(const std::filesystem::path& run_dir,
                                       std::size_t trials, std::ostream& os) {
  if (trials < 1) throw InvalidInput("evaluate: trials must be >= 1");
  const ExperimentConfig config =
      ExperimentConfig::load(run_dir / "resolved_config.json");
  const dataio::CheckpointData ckpt =
      dataio::load_checkpoint(run_dir / "checkpoint");

  FederationSetup setup = config.make_setup();
  restore_group(ckpt, "server.prompt", setup.server.global_prompt);
  restore_group(ckpt, "server.backbone", setup.server.global_backbone);
  for (auto& client : setup.clients) {
    restore_group(ckpt, client_group(client.id, "backbone"), client.backbone);
    restore_group(ckpt, client_group(client.id, "adaptor"), client.adaptors);
    restore_group(ckpt, client_group(client.id, "prompt"), client.prompt);
  }

  const std::size_t n_clients = setup.clients.size();
  // [client][kind][trial] -> psnr, ssim
  std::vector<std::vector<std::vector<double>>> psnr(
      n_clients + 1, std::vector<std::vector<double>>(2)),
      ssim(n_clients + 1, std::vector<std::vector<double>>(2));

  const Rng eval_root = Rng(config.seed).fork(0xE7A1);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng trial_rng = eval_root.fork(trial);
    Rng mask_rng = trial_rng.fork(0);
    const auto unseen = federation::sample_unseen_masks(
        setup, config.training.unseen_masks_per_distribution, mask_rng);
    std::vector<const optics::CodedAperture*> unseen_p;
    for (const auto& m : unseen) unseen_p.push_back(&m);

    for (const auto& client : setup.clients) {
      const auto model = federation::deployed_model(setup, client);
      std::vector<const optics::HyperspectralCube*> test_p;
      for (const auto& c : client.test_cubes) test_p.push_back(&c);
      std::vector<const optics::CodedAperture*> seen_p;
      for (const auto& m : client.masks.masks) seen_p.push_back(&m);

      Rng c_rng = trial_rng.fork(1 + client.id);
      const auto seen_m =
          federation::evaluate_cell(model, test_p, seen_p, setup, c_rng);
      const auto unseen_m =
          federation::evaluate_cell(model, test_p, unseen_p, setup, c_rng);
      psnr[client.id][0].push_back(seen_m.psnr_db);
      psnr[client.id][1].push_back(unseen_m.psnr_db);
      ssim[client.id][0].push_back(seen_m.ssim);
      ssim[client.id][1].push_back(unseen_m.ssim);
      psnr[n_clients][0].push_back(seen_m.psnr_db);
      psnr[n_clients][1].push_back(unseen_m.psnr_db);
      ssim[n_clients][0].push_back(seen_m.ssim);
      ssim[n_clients][1].push_back(unseen_m.ssim);
    }
  }

  const auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::vector<EvaluateCell> cells;
  os << "client,mask_kind,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
  const char* kinds[2] = {"seen", "unseen"};
  for (std::size_t c = 0; c <= n_clients; ++c) {
    for (std::size_t k = 0; k < 2; ++k) {
      const auto [pm, ps] = mean_std(psnr[c][k]);
      const auto [sm, ss] = mean_std(ssim[c][k]);
      EvaluateCell cell;
      cell.client = c == n_clients ? static_cast<std::size_t>(-1) : c;
      cell.mask_kind = kinds[k];
      cell.psnr_mean = pm;
      cell.psnr_std = ps;
      cell.ssim_mean = sm;
      cell.ssim_std = ss;
      cells.push_back(cell);
      os << (c == n_clients ? std::string("all") : std::to_string(c)) << ','
         << kinds[k] << ',' << fmt6(pm) << ',' << fmt6(ps) << ',' << fmt6(sm)
         << ',' << fmt6(ss) << '\n';
    }
  }
  return cells;
}

GradCheckSummary cmd_gradcheck(const ExperimentConfig& config,
                               std::ostream& os) {
  const Rng root(config.seed);
  Rng init = root.fork(0xD1);
  Rng data_rng = root.fork(0xD2);
  Rng coord_rng = root.fork(0xD3);

  // Random initialization everywhere (no zeroed output layers) so every
  // coordinate has signal.
  Rng r1 = init.fork(0), r2 = init.fork(1), r3 = init.fork(2);
  const ParamGroup theta = learncore::init_backbone(config.backbone, r1);
  const ParamGroup adaptors =
      learncore::init_adaptors(config.backbone, r2, false);
  const ParamGroup prompt = learncore::init_prompt(config.prompt, r3, false);

  const auto cube = dataio::gen_synthetic_cube(
      data_rng, config.data.height, config.data.width, config.data.bands,
      config.data.smoothness);
  Rng mask_rng = root.fork(0xD4);
  const auto mask = optics::sample_mask(config.scenario.distributions.front(),
                                        config.data.height, config.data.width,
                                        mask_rng);
  const auto y = optics::encode(cube, mask, config.dispersion);

  const auto y_t = learncore::measurement_tensor(y);
  const auto mask_t = learncore::pad_mask_to_measurement(mask, config.dispersion,
                                                         config.data.bands);
  const auto x_t = learncore::cube_tensor(cube);
  const auto bcfg = config.backbone;
  const int step = config.dispersion.step;

  const auto build = [&](learncore::GraphD& g,
                         const std::vector<learncore::BoundGroup<double>>& b) {
    auto mask_in = g.input(learncore::tensor_cast<double>(mask_t), "mask");
    auto pvar = prompt_graph(g, b[1], mask_in);
    auto y_in = g.input(learncore::tensor_cast<double>(y_t), "y");
    auto y2 = g.add(y_in, pvar);
    auto y_init = g.shift_back(y2, step, bcfg.bands);
    auto xhat = backbone_graph(g, bcfg, b[0], &b[2], y_init);
    return g.mse(xhat, g.input(learncore::tensor_cast<double>(x_t), "x"));
  };

  const auto report = learncore::grad_check({theta, prompt, adaptors}, build,
                                            coord_rng, 1e-3, 50);
  GradCheckSummary summary;
  summary.backbone = report.group_error("backbone");
  summary.prompt = report.group_error("prompt");
  summary.adaptor = report.group_error("adaptor");
  summary.overall = report.max_rel_error;
  os << "group,max_rel_error\n";
  os << "backbone," << fmt6(summary.backbone) << '\n';
  os << "prompt," << fmt6(summary.prompt) << '\n';
  os << "adaptor," << fmt6(summary.adaptor) << '\n';
  os << "overall," << fmt6(summary.overall) << '\n';
  return summary;
}

void cmd_commcost(const ExperimentConfig& config, std::ostream& os) {
  os << "algorithm,download_per_client,upload_per_client\n";
  for (Algorithm a : {Algorithm::fedhp, Algorithm::fedavg, Algorithm::fedprox,
                      Algorithm::scaffold, Algorithm::joint,
                      Algorithm::local_only}) {
    const auto cost = federation::comm_cost(a, config.backbone, config.prompt);
    os << federation::algorithm_name(a) << ',' << cost.download << ','
       << cost.upload << '\n';
  }
}

}  // namespace fedhp::cli
