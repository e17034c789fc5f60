#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "litens/datasets.hpp"
#include "litens/models.hpp"

namespace litens {

struct EnsembleConfig {
  int M = 2;
  double lambda = 0.1;
  double eps_stab = 1e-6;
  double accuracy_epsilon = 0.05;
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 128;
  int epochs = 60;
  std::uint64_t seed = 1;
  std::vector<int> layer_sizes;  // includes input dim and final 1
  Activation activation = Activation::kSoftplus;
};

// Throws UsageError on inconsistent settings. M > input dimension is legal
// but reported through the training notes (the usual outcome is the oversize
// flag, not a crash).
void validate(const EnsembleConfig& config, int input_dim);

struct TrainingHistory {
  std::vector<std::vector<double>> cross_entropy;   // epoch x model, batch-mean
  std::vector<std::vector<double>> train_accuracy;  // epoch x model, full set
  std::vector<double> mean_cos2;                    // epoch, mean over pairs
  std::vector<double> objective;                    // epoch, batch-mean
  std::vector<std::string> notes;                   // diagnostics

  int epochs() const { return static_cast<int>(objective.size()); }
  int models() const {
    return cross_entropy.empty() ? 0 : static_cast<int>(cross_entropy[0].size());
  }
};

// CSV columns: epoch, ce_0..ce_{M-1}, acc_0..acc_{M-1}, mean_cos2,
// objective. Notes become leading `#` comment lines.
void save_history_csv(const TrainingHistory& history,
                      const std::filesystem::path& path);

// Stable logit form: softplus(z) - y z. Never NaN for finite logits.
double cross_entropy(double logit, int y);

// (v.w)^2 / ((v.v)(w.w) + eps_stab), in [0, 1].
double cos_squared(std::span<const double> v, std::span<const double> w,
                   double eps_stab);

// Sum over unordered model pairs of cos_squared of the log-odds input
// gradients at x.
double diversity_penalty(std::span<const MlpParams> models,
                         std::span<const double> x, double eps_stab);

struct BatchStats {
  double objective = 0.0;
  double penalty = 0.0;            // batch mean of the pair-sum of cos^2
  double mean_cos2 = 0.0;          // penalty normalized by the pair count
  std::vector<double> model_ce;    // batch mean per model
};

// The training objective as one reusable graph: batch mean over x of
// [ sum_m CE_m + lambda * sum_{a<b} cos^2(g_a, g_b) ]. Gradient nodes and
// cos^2 statistics exist at every lambda; with lambda = 0 the objective node
// is built from the cross-entropy terms alone, so it equals their sum
// exactly.
class LitGraph {
 public:
  LitGraph(std::span<const int> layer_sizes, Activation activation, int M,
           double lambda, double eps_stab, int batch);
  ~LitGraph();
  LitGraph(LitGraph&&) noexcept;
  LitGraph& operator=(LitGraph&&) noexcept;

  int batch() const { return batch_; }

  // X column-major (dim x batch), Y one label per column. With grads
  // non-null, runs backward and writes d(objective)/d(theta_m) into
  // (*grads)[m], resized to the parameter count.
  BatchStats eval(std::span<const MlpParams> models, std::span<const double> X,
                  std::span<const double> Y,
                  std::vector<std::vector<double>>* grads);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int batch_ = 0;
};

// One-shot convenience over LitGraph.
BatchStats lit_objective(std::span<const MlpParams> models,
                         std::span<const double> X, std::span<const double> Y,
                         int batch, double lambda, double eps_stab,
                         std::vector<std::vector<double>>* grads = nullptr);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const EnsembleConfig& config);

struct TrainResult {
  std::vector<MlpParams> models;
  TrainingHistory history;
};

// Joint minimization over shuffled mini-batches. M = 1 is the normal
// training baseline. Bitwise-reproducible for fixed seed, config, and data.
// Throws NumericError naming the epoch and batch if the objective goes
// non-finite.
TrainResult train_ensemble(const Dataset& data, const EnsembleConfig& config);

struct OversizeDiagnostic {
  bool flagged = false;
  std::vector<int> low_models;  // final accuracy < 1 - accuracy_epsilon
  std::string report;
};

// The M-oversize check: an ensemble too large for the data shows up as a
// member that never reaches the accuracy bar.
OversizeDiagnostic m_oversize_diagnostic(const TrainingHistory& history,
                                         const EnsembleConfig& config);

}  // namespace litens
