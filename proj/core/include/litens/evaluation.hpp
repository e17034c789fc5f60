#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "litens/datasets.hpp"
#include "litens/models.hpp"

namespace litens {

struct PerturbationSpec {
  double sigma = 0.0;      // 0 picks 1e-4 times the widest box edge
  int n_samples = 100000;  // Monte Carlo draws for the empirical MI
};

// Fraction of n uniform domain samples where the rounded model prediction
// equals the rule label.
double agreement(const MlpParams& model, const GroundTruthRule& rule,
                 const DomainBox& domain, int n, std::uint64_t seed);

struct Matching {
  std::vector<int> rule_for_model;  // model m is scored against rule_for_model[m]
  double total = 0.0;
};

// Exhaustive search over permutations maximizing the summed agreement,
// ties to the lexicographically smallest permutation. Requires a square
// matrix with M <= 8.
Matching match_models(const std::vector<std::vector<double>>& agreement_matrix);

// Mean over points of pairwise cos^2 of log-odds input gradients. points is
// row-major (n x dim).
std::vector<std::vector<double>> cos2_stats(std::span<const MlpParams> models,
                                            std::span<const double> points,
                                            int n, int dim, double eps_stab);

// -1/2 ln(1 - cos2); +infinity at cos2 >= 1 (the divergent case).
double mi_formula(double cos2);

// Draws isotropic Gaussian perturbations, projects onto both gradients, and
// returns -1/2 ln(1 - corr^2) of the two projections. Converges to
// mi_formula(cos_squared(grad_i, grad_j, 0)) as n_samples grows. Throws
// UsageError on a zero gradient.
double mi_empirical(std::span<const double> grad_i, std::span<const double> grad_j,
                    const PerturbationSpec& spec, std::uint64_t seed);

struct GridSpec {
  int dim_i = 0;
  int dim_j = 1;
  int resolution = 100;
  int projection_samples = 256;  // draws for the non-projected dimensions
  std::uint64_t seed = 0;
};

// Lattice of model outputs over (dim_i, dim_j), row-major with dim_i as the
// slow index. 2D models give exact logits. Higher-dimensional models give
// the mean classification probability over projection_samples uniform draws
// of the remaining dimensions, reported back as a logit;
// projection_samples = 0 is an error then.
std::vector<double> grid_logits(const MlpParams& model, const DomainBox& domain,
                                const GridSpec& spec);

// Rows `dim_i,dim_j,value` after `#` metadata lines (axes, resolution,
// domain).
void save_grid_csv(std::span<const double> grid, const DomainBox& domain,
                   const GridSpec& spec, const std::filesystem::path& path);

struct MiTriple {
  double cos2 = 0.0;
  double formula = 0.0;
  double empirical = 0.0;
};

struct EvaluationReport {
  std::vector<std::vector<double>> agreement;  // model x rule
  Matching matching;                           // empty unless square
  std::vector<std::vector<double>> mean_cos2;  // model x model
  std::vector<MiTriple> mi_check;              // one per unordered model pair
  std::vector<double> train_accuracy;          // on the provided dataset
};

EvaluationReport build_report(std::span<const MlpParams> models,
                              std::span<const GroundTruthRule> rules,
                              const Dataset& train, const DomainBox& domain,
                              const PerturbationSpec& spec, int n_eval,
                              std::uint64_t seed);

void save_report_json(const EvaluationReport& report,
                      const std::filesystem::path& path);
EvaluationReport load_report_json(const std::filesystem::path& path);

// Flat table: one `kind,i,j,value` row per scalar in the report.
void save_report_csv(const EvaluationReport& report,
                     const std::filesystem::path& path);

}  // namespace litens
