// Acceptance suite: every criterion prints one PASS/FAIL line. The two
// long-horizon criteria (learning-speed ordering and attention
// concentration) live in acceptance_long.cpp.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gp/experiment.hpp"
#include "gp/gnn.hpp"
#include "gp/invariance.hpp"
#include "gp/ppo.hpp"
#include "gp/rng.hpp"
#include "testutil.hpp"

using namespace gp;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void report(const char* name, bool pass, const std::string& detail) {
  std::printf("[ACCEPTANCE] %-34s %s  (%s)\n", name, pass ? "PASS" : "FAIL", detail.c_str());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("shaping policy-invariance") {
  Timer timer;
  const InvarianceReport r = run_invariance_check(1);
  const double elapsed = timer.seconds();
  const bool pass = r.all_potential_match && r.control_detected && elapsed < 10.0;
  report("shaping-policy-invariance", pass,
         "20/20 potential draws matched=" + std::string(r.all_potential_match ? "yes" : "no") +
             ", control changes=" + std::to_string(r.control_changes) + "/20, " +
             std::to_string(elapsed) + "s");
  CHECK(r.all_potential_match);
  CHECK(r.control_detected);
  CHECK(elapsed < 10.0);
}

TEST_CASE("gnn layer oracle equivalence") {
  Timer timer;
  Rng rng(2024);
  double worst_gcn = 0.0, worst_gat = 0.0, worst_mean = 0.0, worst_lstm = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(8));
    const Tensor a = gptest::random_adjacency(rng, n, 0.45, trial % 3 == 0);
    const Adjacency adj = Adjacency::from_dense(a);
    const auto am = gptest::to_mat(a);

    const Tensor h = gptest::random_tensor(rng, n, 64);
    const auto hm = gptest::to_mat(h);

    GcnLayerParams gcn{gptest::random_tensor(rng, 64, 64), gptest::random_tensor(rng, 1, 64)};
    worst_gcn = std::max(worst_gcn,
                         gptest::max_abs_diff(gptest::naive_gcn(am, hm, gptest::to_mat(gcn.weight),
                                                                gptest::to_mat(gcn.bias)[0], Act::relu),
                                              gcn_layer(adj, h, gcn, Act::relu)));

    std::vector<GatHeadParams> heads;
    for (int k = 0; k < 4; ++k)
      heads.push_back({gptest::random_tensor(rng, 64, 16), gptest::random_tensor(rng, 32, 1)});
    worst_gat = std::max(
        worst_gat, gptest::max_abs_diff(gptest::naive_gat(am, hm, heads, Act::leaky_relu),
                                        gat_layer(adj, h, heads, Act::leaky_relu, 0.01, nullptr, 1)));

    SageLayerParams mean_layer;
    mean_layer.lstm_aggregator = false;
    mean_layer.weight = gptest::random_tensor(rng, 128, 64);
    mean_layer.bias = gptest::random_tensor(rng, 1, 64);
    worst_mean = std::max(
        worst_mean, gptest::max_abs_diff(
                        gptest::naive_sage_mean(am, hm, gptest::to_mat(mean_layer.weight),
                                                gptest::to_mat(mean_layer.bias)[0], Act::relu),
                        sage_layer(adj, h, mean_layer, Act::relu)));

    const int hid = 16;
    const Tensor hs = gptest::random_tensor(rng, n, hid);
    SageLayerParams lstm_layer;
    lstm_layer.lstm_aggregator = true;
    lstm_layer.lstm =
        LstmParams{gptest::random_tensor(rng, hid, 4 * hid), gptest::random_tensor(rng, hid, 4 * hid),
                   gptest::random_tensor(rng, 1, 4 * hid), gptest::random_tensor(rng, 1, 4 * hid)};
    lstm_layer.weight = gptest::random_tensor(rng, 2 * hid, hid);
    lstm_layer.bias = gptest::random_tensor(rng, 1, hid);
    worst_lstm = std::max(worst_lstm,
                          gptest::max_abs_diff(gptest::naive_sage_lstm(gptest::to_mat(a),
                                                                       gptest::to_mat(hs), lstm_layer,
                                                                       Act::relu),
                                               sage_layer(adj, hs, lstm_layer, Act::relu)));
  }
  const double elapsed = timer.seconds();
  const bool pass =
      worst_gcn < 1e-12 && worst_gat < 1e-12 && worst_mean < 1e-12 && worst_lstm < 1e-10 && elapsed < 30;
  char detail[256];
  std::snprintf(detail, sizeof(detail), "gcn %.2e, gat %.2e, sage-mean %.2e, sage-lstm %.2e, %.1fs",
                worst_gcn, worst_gat, worst_mean, worst_lstm, elapsed);
  report("gnn-layer-oracle-equivalence", pass, detail);
  CHECK(worst_gcn < 1e-12);
  CHECK(worst_gat < 1e-12);
  CHECK(worst_mean < 1e-12);
  CHECK(worst_lstm < 1e-10);
  CHECK(elapsed < 30.0);
}

TEST_CASE("gradient integrity") {
  Timer timer;
  Rng rng(77);
  double worst_shaping = 0.0;
  int shaping_instances = 0;
  auto shaping_instance = [&](GnnFamily family, std::size_t hidden, std::size_t heads) {
    PotentialConfig pc;
    pc.family = family;
    pc.feature_dim = 64;
    pc.hidden = hidden;
    pc.heads = heads;
    PotentialModel model(pc, rng);
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    const Tensor a = gptest::random_adjacency(rng, n, 0.5, false);
    const Adjacency adj = Adjacency::from_dense(a);
    const Tensor x = gptest::random_tensor(rng, n, 64);
    std::vector<std::pair<int, int>> base{{0, 1}};
    if (n > 1) base.push_back({n - 1, 0});
    const double err =
        gptest::max_grad_rel_err(model.parameters(), [&] { return model.loss(adj, x, base); });
    worst_shaping = std::max(worst_shaping, err);
    ++shaping_instances;
  };
  shaping_instance(GnnFamily::GCN, 64, 4);
  shaping_instance(GnnFamily::GCN, 64, 4);
  shaping_instance(GnnFamily::GAT, 64, 4);
  shaping_instance(GnnFamily::GAT, 64, 4);
  shaping_instance(GnnFamily::SAGE, 16, 4);

  double worst_ppo = 0.0;
  int ppo_instances = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const int b = 4 + static_cast<int>(rng.uniform_int(5));
    Tensor logits = gptest::random_tensor(rng, b, 3, -1.5, 1.5, true);
    std::vector<int> actions(b);
    std::vector<double> adv(b), old(b);
    for (int i = 0; i < b; ++i) {
      actions[i] = static_cast<int>(rng.uniform_int(3));
      adv[i] = rng.uniform(-2.0, 2.0);
      old[i] = rng.uniform(-1.5, 0.0);
    }
    const Tensor adv_t = Tensor::from_vector(b, 1, adv);
    const Tensor old_t = Tensor::from_vector(b, 1, old);
    const double err = gptest::max_grad_rel_err({logits}, [&] {
      const Tensor new_lp = select_per_row(log_softmax_rows(logits), actions);
      const Tensor ratio = exp_op(sub(new_lp, old_t));
      return mean_all(minimum(mul(ratio, adv_t), mul(clamp(ratio, 0.8, 1.2), adv_t)));
    });
    worst_ppo = std::max(worst_ppo, err);
    ++ppo_instances;
  }
  const double elapsed = timer.seconds();
  const bool pass = worst_shaping < 1e-4 && worst_ppo < 1e-4 && elapsed < 120.0;
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "shaping loss err %.2e (%d instances), ppo surrogate err %.2e (%d instances), %.1fs",
                worst_shaping, shaping_instances, worst_ppo, ppo_instances, elapsed);
  report("gradient-integrity", pass, detail);
  CHECK(worst_shaping < 1e-4);
  CHECK(worst_ppo < 1e-4);
  CHECK(shaping_instances >= 5);
  CHECK(ppo_instances >= 5);
  CHECK(elapsed < 120.0);
}

TEST_CASE("loss arithmetic") {
  Rng rng(31);
  // constant phi: smoothness exactly zero
  PotentialConfig pc;
  pc.family = GnnFamily::GCN;
  pc.feature_dim = 8;
  pc.hidden = 8;
  PotentialModel constant_model(pc, rng);
  for (Tensor p : constant_model.parameters()) std::fill(p.values().begin(), p.values().end(), 0.0);
  const Tensor a = gptest::random_adjacency(rng, 5, 0.6, false);
  const Adjacency adj = Adjacency::from_dense(a);
  const Tensor phi_const = constant_model.phi(adj, Tensor::zeros(5, 8));
  const double lprop_const = laplacian_smoothness(adj, phi_const).item();

  // two-node hand case: phi = (0.2, 0.9), one symmetric edge
  const Adjacency two = Adjacency::from_dense(Tensor::from_vector(2, 2, {0, 1, 1, 0}));
  const double lprop_hand =
      laplacian_smoothness(two, Tensor::from_vector(2, 1, {0.2, 0.9})).item();

  // single base case at phi = 0.5
  const double l0 =
      shaping_loss(constant_model, Tensor::zeros(1, 1), Tensor::zeros(1, 8), {{0, 1}}).item();

  const bool pass = lprop_const == 0.0 && std::abs(lprop_hand - 0.98) <= 1e-12 &&
                    std::abs(l0 - std::log(2.0)) <= 1e-12;
  char detail[256];
  std::snprintf(detail, sizeof(detail), "const L_prop=%g, hand L_prop=%.17g, single-case L0=%.17g",
                lprop_const, lprop_hand, l0);
  report("loss-arithmetic", pass, detail);
  CHECK(lprop_const == 0.0);
  CHECK(std::abs(lprop_hand - 0.98) <= 1e-12);
  CHECK(std::abs(l0 - std::log(2.0)) <= 1e-12);
}

TEST_CASE("gat attention normalization during a training run") {
  set_gat_attention_check(true);
  const std::uint64_t before = gat_attention_checks_performed();
  PpoConfig ppo;
  ppo.n_envs = 4;
  ppo.rollout_steps = 64;
  ppo.total_steps = 16384;
  ShapingConfig shaping;
  shaping.family = "gat";
  Trainer trainer(EnvSpec{}, ppo, shaping, 11);
  bool violated = false;
  std::string detail;
  try {
    trainer.train();
  } catch (const std::logic_error& e) {
    violated = true;
    detail = e.what();
  }
  set_gat_attention_check(false);
  const std::uint64_t checks = gat_attention_checks_performed() - before;
  const bool pass = !violated && checks > 0;
  report("gat-attention-normalization", pass,
         violated ? detail : std::to_string(checks) + " layer forwards verified to 1e-6");
  CHECK_FALSE(violated);
  CHECK(checks > 0);
}

TEST_CASE("determinism: identical config and seed reproduce metrics byte-for-byte") {
  const fs::path root = fs::temp_directory_path() / "gp_accept_determinism";
  fs::remove_all(root);
  nlohmann::json j = nlohmann::json::object();
  apply_config_override(j, "ppo.n_envs=4");
  apply_config_override(j, "ppo.rollout_steps=32");
  apply_config_override(j, "ppo.total_steps=2048");
  apply_config_override(j, "shaping.family=gcn");
  apply_config_override(j, "eval_episodes=2");
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  run_single(cfg, 123, (root / "a").string());
  run_single(cfg, 123, (root / "b").string());
  const std::string a = read_file(root / "a" / "metrics.csv");
  const std::string b = read_file(root / "b" / "metrics.csv");
  const bool pass = !a.empty() && a == b;
  report("determinism", pass, std::to_string(a.size()) + " bytes compared");
  CHECK(pass);
}

TEST_CASE("baseline reduction: shaping_scale 0 is bitwise-identical to shaping none") {
  const fs::path root = fs::temp_directory_path() / "gp_accept_reduction";
  fs::remove_all(root);
  nlohmann::json j = nlohmann::json::object();
  apply_config_override(j, "ppo.n_envs=4");
  apply_config_override(j, "ppo.rollout_steps=32");
  apply_config_override(j, "ppo.total_steps=2048");
  apply_config_override(j, "eval_episodes=2");
  nlohmann::json j_scaled = j;
  apply_config_override(j_scaled, "shaping.family=gat");
  apply_config_override(j_scaled, "ppo.shaping_scale=0.0");
  run_single(ExperimentConfig::from_json(j), 321, (root / "none").string());
  run_single(ExperimentConfig::from_json(j_scaled), 321, (root / "scale0").string());
  const std::string a = read_file(root / "none" / "metrics.csv");
  const std::string b = read_file(root / "scale0" / "metrics.csv");
  const bool pass = !a.empty() && a == b;
  report("baseline-reduction", pass, std::to_string(a.size()) + " bytes compared");
  CHECK(pass);
}
