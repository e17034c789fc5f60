#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "litens/datasets.hpp"
#include "litens/errors.hpp"
#include "litens/models.hpp"
#include "litens/rng.hpp"
#include "litens/training.hpp"

using litens::Activation;
using litens::Dataset;
using litens::EnsembleConfig;
using litens::MlpParams;
using litens::RngStream;

namespace {

MlpParams depth0(std::vector<double> w, double b) {
  MlpParams p;
  p.layer_sizes = {static_cast<int>(w.size()), 1};
  p.activation = Activation::kSoftplus;
  p.theta = std::move(w);
  p.theta.push_back(b);
  return p;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("cross entropy examples") {
  CHECK(litens::cross_entropy(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(litens::cross_entropy(50.0, 1) < 1e-20);
  CHECK(litens::cross_entropy(-3.0, 0) ==
        doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-15));
  CHECK(litens::cross_entropy(-3.0, 0) == doctest::Approx(0.04858735157).epsilon(1e-9));
  CHECK(litens::cross_entropy(1000.0, 0) == 1000.0);  // stable linear tail
  CHECK(litens::cross_entropy(-1000.0, 1) == 1000.0);
  CHECK_THROWS_AS((void)litens::cross_entropy(0.0, 2), litens::UsageError);
}

TEST_CASE("cos squared examples and properties") {
  const double eps = 1e-6;
  const std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  CHECK(litens::cos_squared(e1, e2, eps) == 0.0);
  CHECK(litens::cos_squared(e1, std::vector<double>{2.0, 0.0}, eps) ==
        doctest::Approx(4.0 / (4.0 + eps)).epsilon(1e-15));
  CHECK(litens::cos_squared(std::vector<double>{1.0, 1.0}, e1, eps) ==
        doctest::Approx(1.0 / (2.0 + eps)).epsilon(1e-15));

  // zero vector: stabilizer keeps it finite and zero
  CHECK(litens::cos_squared(std::vector<double>{0.0, 0.0}, e1, eps) == 0.0);

  RngStream rng(3, "cos2_prop");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 2 + rng.uniform_int(7);
    std::vector<double> v(dim), w(dim);
    double nv = 0.0, nw = 0.0;
    do {
      for (auto& e : v) e = rng.uniform(-3.0, 3.0);
      for (auto& e : w) e = rng.uniform(-3.0, 3.0);
      nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      nw = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    } while (nv < 1.0 || nw < 1.0);

    const double base = litens::cos_squared(v, w, eps);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(litens::cos_squared(w, v, eps) == doctest::Approx(base).epsilon(1e-15));

    const double a = rng.uniform(0.5, 2.0) * (trial % 2 ? -1.0 : 1.0);
    const double b = rng.uniform(0.5, 2.0);
    std::vector<double> va = v, wb = w;
    for (auto& e : va) e *= a;
    for (auto& e : wb) e *= b;
    const double scaled = litens::cos_squared(va, wb, eps);
    CHECK(std::abs(scaled - base) / std::max(base, 1e-12) < 1e-4);
  }

  CHECK_THROWS_AS(
      (void)litens::cos_squared(e1, std::vector<double>{1.0, 2.0, 3.0}, eps),
      litens::ShapeError);
}

TEST_CASE("diversity penalty examples") {
  const double eps = 1e-6;
  {
    const std::vector<MlpParams> models{depth0({1.0, 0.0}, 0.0),
                                        depth0({0.0, 1.0}, 0.0)};
    CHECK(litens::diversity_penalty(models, std::vector<double>{1.0, 2.0}, eps) ==
          0.0);
  }
  {
    // identical pair: cos2 = nn^2 / (nn^2 + eps) with nn = |w|^2 = 0.58
    const std::vector<MlpParams> models{depth0({0.7, -0.3}, 0.1),
                                        depth0({0.7, -0.3}, 0.1)};
    CHECK(litens::diversity_penalty(models, std::vector<double>{0.5, 0.5}, eps) ==
          doctest::Approx(0.58 * 0.58 / (0.58 * 0.58 + eps)).epsilon(1e-9));
  }
  {
    const std::vector<MlpParams> models{depth0({1.0, 0.0}, 0.0),
                                        depth0({0.0, 1.0}, 0.0),
                                        depth0({1.0, 1.0}, 0.0)};
    const double p =
        litens::diversity_penalty(models, std::vector<double>{1.0, 1.0}, eps);
    CHECK(p == doctest::Approx(1.0).epsilon(1e-6));

    // permutation invariance
    std::vector<MlpParams> perm{models[2], models[0], models[1]};
    CHECK(litens::diversity_penalty(perm, std::vector<double>{1.0, 1.0}, eps) ==
          doctest::Approx(p).epsilon(1e-12));
  }
  const std::vector<MlpParams> one{depth0({1.0}, 0.0)};
  CHECK_THROWS_AS((void)litens::diversity_penalty(one, std::vector<double>{1.0}, eps),
                  litens::UsageError);
}

TEST_CASE("objective with lambda 0 is exactly the sum of CE objectives") {
  RngStream rng(14, "lam0");
  const std::vector<int> layers{2, 8, 1};
  std::vector<MlpParams> models{litens::mlp_init(layers, Activation::kSoftplus, 1),
                                litens::mlp_init(layers, Activation::kSoftplus, 2)};
  const int batch = 16;
  std::vector<double> X(2 * batch), Y(batch);
  for (auto& v : X) v = rng.uniform(-10.0, 10.0);
  for (auto& y : Y) y = rng.uniform() < 0.5 ? 0.0 : 1.0;

  const litens::BatchStats joint =
      litens::lit_objective(models, X, Y, batch, 0.0, 1e-6, nullptr);

  double separate = 0.0;
  for (const MlpParams& m : models) {
    const std::vector<MlpParams> single{m};
    separate +=
        litens::lit_objective(single, X, Y, batch, 0.0, 1e-6, nullptr).objective;
  }
  CHECK(joint.objective == separate);  // bitwise: no penalty leakage
  CHECK(joint.penalty > 0.0);          // the statistic is still measured
  CHECK(joint.mean_cos2 > 0.0);
}

TEST_CASE("objective theta-gradients match finite differences") {
  // 2-model width-8 softplus ensemble over a batch of 20 random points.
  RngStream rng(77, "fd_obj");
  const std::vector<int> layers{2, 8, 8, 1};
  std::vector<MlpParams> models{litens::mlp_init(layers, Activation::kSoftplus, 5),
                                litens::mlp_init(layers, Activation::kSoftplus, 6)};
  const int batch = 20;
  std::vector<double> X(2 * batch), Y(batch);
  for (auto& v : X) v = rng.uniform(-10.0, 10.0);
  for (auto& y : Y) y = rng.uniform() < 0.5 ? 0.0 : 1.0;

  const double lambda = 0.1, eps = 1e-6, step = 1e-4;
  std::vector<std::vector<double>> grads;
  (void)litens::lit_objective(models, X, Y, batch, lambda, eps, &grads);

  double worst = 0.0;
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t k = 0; k < models[m].theta.size(); ++k) {
      const double saved = models[m].theta[k];
      models[m].theta[k] = saved + step;
      const double up =
          litens::lit_objective(models, X, Y, batch, lambda, eps, nullptr).objective;
      models[m].theta[k] = saved - step;
      const double down =
          litens::lit_objective(models, X, Y, batch, lambda, eps, nullptr).objective;
      models[m].theta[k] = saved;
      worst = std::max(worst, rel_err(grads[m][k], (up - down) / (2.0 * step)));
    }
  }
  CHECK_MESSAGE(worst < 1e-3, "worst rel err ", worst);
}

TEST_CASE("adam step examples") {
  EnsembleConfig cfg;
  cfg.learning_rate = 0.001;

  std::vector<double> params{1.0};
  litens::AdamState state;
  litens::adam_step(params, std::vector<double>{1.0}, state, cfg);
  CHECK(params[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-7));
  CHECK(state.step == 1);

  std::vector<double> frozen{0.25, -0.5};
  litens::AdamState s2;
  for (int i = 0; i < 5; ++i) {
    litens::adam_step(frozen, std::vector<double>{0.0, 0.0}, s2, cfg);
  }
  CHECK(frozen[0] == 0.25);
  CHECK(frozen[1] == -0.5);
  CHECK(s2.step == 5);
}

TEST_CASE("config validation") {
  EnsembleConfig cfg;
  cfg.layer_sizes = {2, 8, 1};
  cfg.activation = Activation::kSoftplus;
  CHECK_NOTHROW(litens::validate(cfg, 2));

  // M above the input dimension is legal; the oversize diagnostic owns
  // that case
  EnsembleConfig over = cfg;
  over.M = 3;
  CHECK_NOTHROW(litens::validate(over, 2));

  EnsembleConfig bad = cfg;
  bad.M = 0;
  CHECK_THROWS_AS(litens::validate(bad, 2), litens::UsageError);

  bad = cfg;
  bad.lambda = -0.5;
  CHECK_THROWS_AS(litens::validate(bad, 2), litens::UsageError);

  bad = cfg;
  bad.eps_stab = 0.0;
  CHECK_THROWS_AS(litens::validate(bad, 2), litens::UsageError);

  bad = cfg;
  bad.accuracy_epsilon = 1.0;
  CHECK_THROWS_AS(litens::validate(bad, 2), litens::UsageError);

  bad = cfg;
  bad.layer_sizes = {3, 8, 1};  // dataset dim mismatch
  CHECK_THROWS_AS(litens::validate(bad, 2), litens::ShapeError);
}

TEST_CASE("training is bitwise reproducible") {
  const litens::RuleCase rc = litens::builtin_case("case1");
  const Dataset data = litens::gen_confounded(rc.rules, rc.domain, 256, 4);
  EnsembleConfig cfg;
  cfg.M = 2;
  cfg.layer_sizes = {2, 8, 1};
  cfg.activation = Activation::kSoftplus;
  cfg.epochs = 3;
  cfg.seed = 12;

  const litens::TrainResult a = litens::train_ensemble(data, cfg);
  const litens::TrainResult b = litens::train_ensemble(data, cfg);
  REQUIRE(a.models.size() == 2);
  for (int m = 0; m < 2; ++m) {
    REQUIRE(a.models[m].theta.size() == b.models[m].theta.size());
    CHECK(std::memcmp(a.models[m].theta.data(), b.models[m].theta.data(),
                      a.models[m].theta.size() * sizeof(double)) == 0);
  }
  CHECK(a.history.objective == b.history.objective);
  CHECK(a.history.mean_cos2 == b.history.mean_cos2);
  CHECK(a.history.epochs() == 3);
  CHECK(a.history.models() == 2);

  // different seed moves the trajectory
  cfg.seed = 13;
  const litens::TrainResult c = litens::train_ensemble(data, cfg);
  CHECK(std::memcmp(a.models[0].theta.data(), c.models[0].theta.data(),
                    a.models[0].theta.size() * sizeof(double)) != 0);
}

TEST_CASE("training rejects single-label data") {
  Dataset data;
  data.dim = 2;
  data.domain = litens::cube_domain(2, -1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    data.X.push_back(0.1 * i);
    data.X.push_back(-0.1 * i);
    data.Y.push_back(1);
  }
  EnsembleConfig cfg;
  cfg.M = 1;
  cfg.layer_sizes = {2, 4, 1};
  cfg.activation = Activation::kSoftplus;
  cfg.epochs = 1;
  CHECK_THROWS_AS((void)litens::train_ensemble(data, cfg), litens::UsageError);
}

TEST_CASE("penalty steers the pair apart on case 1") {
  const litens::RuleCase rc = litens::builtin_case("case1");
  const Dataset data = litens::gen_confounded(rc.rules, rc.domain, 600, 2);
  EnsembleConfig cfg;
  cfg.M = 2;
  cfg.layer_sizes = {2, 16, 16, 1};
  cfg.activation = Activation::kSoftplus;
  cfg.epochs = 40;
  cfg.seed = 1;
  cfg.lambda = 0.1;

  const litens::TrainResult lit = litens::train_ensemble(data, cfg);
  cfg.lambda = 0.0;
  const litens::TrainResult control = litens::train_ensemble(data, cfg);

  // identical seeds: the only difference is the penalty term
  CHECK(lit.history.mean_cos2.back() < control.history.mean_cos2.back());
  for (int m = 0; m < 2; ++m) {
    CHECK(lit.history.train_accuracy.back()[m] > 0.8);
  }
}

TEST_CASE("oversize diagnostic") {
  EnsembleConfig cfg;
  cfg.M = 2;
  cfg.accuracy_epsilon = 0.05;

  litens::TrainingHistory clean;
  clean.cross_entropy = {{0.1, 0.1}};
  clean.train_accuracy = {{1.0, 0.99}};
  clean.mean_cos2 = {0.01};
  clean.objective = {0.2};
  const litens::OversizeDiagnostic ok = litens::m_oversize_diagnostic(clean, cfg);
  CHECK_FALSE(ok.flagged);
  CHECK(ok.low_models.empty());

  litens::TrainingHistory low = clean;
  low.train_accuracy = {{1.0, 0.6}};
  const litens::OversizeDiagnostic flagged = litens::m_oversize_diagnostic(low, cfg);
  CHECK(flagged.flagged);
  REQUIRE(flagged.low_models.size() == 1);
  CHECK(flagged.low_models[0] == 1);
  CHECK(flagged.report.find("1") != std::string::npos);
}

TEST_CASE("history csv layout") {
  litens::TrainingHistory h;
  h.cross_entropy = {{0.5, 0.6}, {0.4, 0.5}};
  h.train_accuracy = {{0.7, 0.65}, {0.8, 0.75}};
  h.mean_cos2 = {0.3, 0.2};
  h.objective = {1.2, 1.0};
  h.notes = {"note one"};

  const auto path =
      std::filesystem::temp_directory_path() / "litens_history_test.csv";
  litens::save_history_csv(h, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# note one");
  std::getline(in, line);
  CHECK(line == "epoch,ce_0,ce_1,acc_0,acc_1,mean_cos2,objective");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
}
