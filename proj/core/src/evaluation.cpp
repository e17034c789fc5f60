#include "litens/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <numeric>

#include "litens/errors.hpp"
#include "litens/rng.hpp"
#include "litens/training.hpp"

namespace litens {

namespace {

using json = nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double t = std::exp(z);
  return t / (1.0 + t);
}

std::vector<double> uniform_points(const DomainBox& domain, int n, RngStream& rng) {
  std::vector<double> pts(static_cast<std::size_t>(n) * domain.dim());
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < domain.dim(); ++d) {
      pts[static_cast<std::size_t>(i) * domain.dim() + d] =
          rng.uniform(domain.lower[d], domain.upper[d]);
    }
  }
  return pts;
}

// inf-tolerant JSON scalar: encodes the divergent MI value as a string
json mi_scalar(double v) {
  if (std::isfinite(v)) return v;
  return "divergent";
}

double mi_scalar_back(const json& j) {
  if (j.is_string()) return kInf;
  return j.get<double>();
}

}  // namespace

double agreement(const MlpParams& model, const GroundTruthRule& rule,
                 const DomainBox& domain, int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("agreement: n must be >= 1");
  if (model.input_dim() != domain.dim()) {
    throw ShapeError(fmt::format("agreement: model input dim {} vs domain dim {}",
                                 model.input_dim(), domain.dim()));
  }
  RngStream rng(seed, "agreement");
  const std::vector<double> pts = uniform_points(domain, n, rng);
  const std::vector<double> logits = mlp_logits(model, pts, n);
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const std::span<const double> x{pts.data() + static_cast<std::size_t>(i) * domain.dim(),
                                    static_cast<std::size_t>(domain.dim())};
    const int pred = logits[i] >= 0.0 ? 1 : 0;
    hits += pred == rule.label(x);
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Matching match_models(const std::vector<std::vector<double>>& agreement_matrix) {
  const int m = static_cast<int>(agreement_matrix.size());
  if (m == 0) throw UsageError("match_models: empty matrix");
  if (m > 8) throw UsageError("match_models: exhaustive search capped at M = 8");
  for (const auto& row : agreement_matrix) {
    if (static_cast<int>(row.size()) != m) {
      throw UsageError(fmt::format("match_models: matrix is {}x{}, must be square", m,
                                   row.size()));
    }
  }
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  Matching best;
  best.total = -kInf;
  do {
    double total = 0.0;
    for (int i = 0; i < m; ++i) total += agreement_matrix[i][perm[i]];
    // strict > plus lexicographic enumeration order = smallest tying permutation
    if (total > best.total) {
      best.total = total;
      best.rule_for_model = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::vector<double>> cos2_stats(std::span<const MlpParams> models,
                                            std::span<const double> points,
                                            int n, int dim, double eps_stab) {
  if (n < 1) throw UsageError("cos2_stats: need at least one point");
  if (static_cast<std::int64_t>(points.size()) != std::int64_t{n} * dim) {
    throw ShapeError(fmt::format("cos2_stats: points span has {} values, expected {}x{}",
                                 points.size(), n, dim));
  }
  const int M = static_cast<int>(models.size());
  std::vector<std::vector<double>> acc(M, std::vector<double>(M, 0.0));
  std::vector<std::vector<double>> grads(M);
  for (int i = 0; i < n; ++i) {
    const std::span<const double> x{points.data() + static_cast<std::size_t>(i) * dim,
                                    static_cast<std::size_t>(dim)};
    for (int a = 0; a < M; ++a) grads[a] = mlp_input_gradient(models[a], x);
    for (int a = 0; a < M; ++a) {
      for (int b = a; b < M; ++b) {
        const double c = cos_squared(grads[a], grads[b], eps_stab);
        acc[a][b] += c;
        if (b != a) acc[b][a] += c;
      }
    }
  }
  for (auto& row : acc) {
    for (double& v : row) v /= static_cast<double>(n);
  }
  return acc;
}

double mi_formula(double cos2) {
  if (cos2 < 0.0) throw UsageError(fmt::format("mi_formula: cos2 {} below 0", cos2));
  if (cos2 >= 1.0) return kInf;
  return -0.5 * std::log1p(-cos2);
}

double mi_empirical(std::span<const double> grad_i, std::span<const double> grad_j,
                    const PerturbationSpec& spec, std::uint64_t seed) {
  if (grad_i.size() != grad_j.size()) {
    throw ShapeError(fmt::format("mi_empirical: gradient sizes {} and {} differ",
                                 grad_i.size(), grad_j.size()));
  }
  if (spec.n_samples < 2) throw UsageError("mi_empirical: need at least 2 samples");
  if (!(spec.sigma > 0.0)) throw UsageError("mi_empirical: sigma must be > 0");
  auto norm2 = [](std::span<const double> v) {
    double s = 0.0;
    for (double t : v) s += t * t;
    return s;
  };
  if (norm2(grad_i) == 0.0 || norm2(grad_j) == 0.0) {
    throw UsageError("mi_empirical: zero gradient");
  }

  RngStream rng(seed, "mi_perturb");
  const std::size_t dim = grad_i.size();
  double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int s = 0; s < spec.n_samples; ++s) {
    double a = 0.0, b = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double delta = spec.sigma * rng.normal();
      a += delta * grad_i[d];
      b += delta * grad_j[d];
    }
    sa += a;
    sb += b;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  const double n = static_cast<double>(spec.n_samples);
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n;
  const double vb = sbb - sb * sb / n;
  const double rho2 = cov * cov / (va * vb);
  if (rho2 >= 1.0) return kInf;
  return -0.5 * std::log1p(-rho2);
}

std::vector<double> grid_logits(const MlpParams& model, const DomainBox& domain,
                                const GridSpec& spec) {
  const int dim = domain.dim();
  if (model.input_dim() != dim) {
    throw ShapeError(fmt::format("grid_logits: model input dim {} vs domain dim {}",
                                 model.input_dim(), dim));
  }
  if (spec.resolution < 2) throw UsageError("grid_logits: resolution must be >= 2");
  if (spec.dim_i < 0 || spec.dim_i >= dim || spec.dim_j < 0 || spec.dim_j >= dim ||
      spec.dim_i == spec.dim_j) {
    throw UsageError(fmt::format("grid_logits: invalid axes ({}, {}) for dimension {}",
                                 spec.dim_i, spec.dim_j, dim));
  }
  const int res = spec.resolution;
  auto lattice = [&](int axis, int k) {
    return domain.lower[axis] + domain.width(axis) * k / (res - 1);
  };

  std::vector<double> grid(static_cast<std::size_t>(res) * res);
  if (dim == 2) {
    std::vector<double> pts(static_cast<std::size_t>(res) * res * 2);
    for (int a = 0; a < res; ++a) {
      for (int b = 0; b < res; ++b) {
        double* x = pts.data() + (static_cast<std::size_t>(a) * res + b) * 2;
        x[spec.dim_i] = lattice(spec.dim_i, a);
        x[spec.dim_j] = lattice(spec.dim_j, b);
      }
    }
    grid = mlp_logits(model, pts, res * res);
    return grid;
  }

  if (spec.projection_samples < 1) {
    throw UsageError("grid_logits: projection sample count required for models "
                     "with more than 2 dimensions");
  }
  const int S = spec.projection_samples;
  RngStream rng(spec.seed, "grid_projection");
  const std::vector<double> base = uniform_points(domain, S, rng);
  std::vector<double> pts(static_cast<std::size_t>(S) * dim);
  for (int a = 0; a < res; ++a) {
    for (int b = 0; b < res; ++b) {
      for (int s = 0; s < S; ++s) {
        double* x = pts.data() + static_cast<std::size_t>(s) * dim;
        std::copy_n(base.data() + static_cast<std::size_t>(s) * dim, dim, x);
        x[spec.dim_i] = lattice(spec.dim_i, a);
        x[spec.dim_j] = lattice(spec.dim_j, b);
      }
      const std::vector<double> logits = mlp_logits(model, pts, S);
      double p = 0.0;
      for (double z : logits) p += logistic(z);
      p /= static_cast<double>(S);
      // mean probability, reported on the logit scale; clamp keeps the
      // saturated cells finite
      p = std::clamp(p, 1e-12, 1.0 - 1e-12);
      grid[static_cast<std::size_t>(a) * res + b] = std::log(p / (1.0 - p));
    }
  }
  return grid;
}

void save_grid_csv(std::span<const double> grid, const DomainBox& domain,
                   const GridSpec& spec, const std::filesystem::path& path) {
  const int res = spec.resolution;
  if (static_cast<std::int64_t>(grid.size()) != std::int64_t{res} * res) {
    throw ShapeError(fmt::format("save_grid_csv: grid has {} cells, expected {}x{}",
                                 grid.size(), res, res));
  }
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << fmt::format("# axes: {} {}\n", spec.dim_i, spec.dim_j);
  out << fmt::format("# resolution: {}\n", res);
  out << fmt::format("# domain: [{:.17g}, {:.17g}] x [{:.17g}, {:.17g}]\n",
                     domain.lower[spec.dim_i], domain.upper[spec.dim_i],
                     domain.lower[spec.dim_j], domain.upper[spec.dim_j]);
  if (domain.dim() > 2) {
    out << fmt::format("# projection_samples: {}\n", spec.projection_samples);
  }
  out << "dim_i,dim_j,value\n";
  for (int a = 0; a < res; ++a) {
    const double vi = domain.lower[spec.dim_i] + domain.width(spec.dim_i) * a / (res - 1);
    for (int b = 0; b < res; ++b) {
      const double vj = domain.lower[spec.dim_j] + domain.width(spec.dim_j) * b / (res - 1);
      out << fmt::format("{:.17g},{:.17g},{:.17g}\n", vi, vj,
                         grid[static_cast<std::size_t>(a) * res + b]);
    }
  }
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

EvaluationReport build_report(std::span<const MlpParams> models,
                              std::span<const GroundTruthRule> rules,
                              const Dataset& train, const DomainBox& domain,
                              const PerturbationSpec& spec, int n_eval,
                              std::uint64_t seed) {
  const int M = static_cast<int>(models.size());
  const int K = static_cast<int>(rules.size());
  if (M < 1) throw UsageError("build_report: no models");

  EvaluationReport report;

  // same sample set for every cell so model columns are directly comparable
  const std::uint64_t agreement_seed = derive_seed(seed, "agreement_points");
  report.agreement.assign(M, std::vector<double>(K, 0.0));
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      report.agreement[m][k] = agreement(models[m], rules[k], domain, n_eval,
                                         agreement_seed);
    }
  }
  if (M == K && M <= 8 && M > 0) report.matching = match_models(report.agreement);

  if (train.size() > 0) {
    report.mean_cos2 = cos2_stats(models, train.X, train.size(), train.dim, 1e-6);
    report.train_accuracy.reserve(M);
    for (int m = 0; m < M; ++m) {
      const std::vector<double> logits = mlp_logits(models[m], train.X, train.size());
      int hits = 0;
      for (int i = 0; i < train.size(); ++i) {
        hits += (logits[i] >= 0.0 ? 1 : 0) == train.Y[i];
      }
      report.train_accuracy.push_back(static_cast<double>(hits) /
                                      static_cast<double>(train.size()));
    }
  }

  PerturbationSpec mi_spec = spec;
  if (!(mi_spec.sigma > 0.0)) {
    double widest = 0.0;
    for (int d = 0; d < domain.dim(); ++d) widest = std::max(widest, domain.width(d));
    mi_spec.sigma = 1e-4 * widest;
  }
  int pair_index = 0;
  for (int a = 0; a < M; ++a) {
    for (int b = a + 1; b < M; ++b, ++pair_index) {
      RngStream rng(seed, "mi_point", pair_index);
      std::vector<double> x(domain.dim());
      MiTriple triple;
      bool ok = false;
      for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
        for (int d = 0; d < domain.dim(); ++d) {
          x[d] = rng.uniform(domain.lower[d], domain.upper[d]);
        }
        const std::vector<double> ga = mlp_input_gradient(models[a], x);
        const std::vector<double> gb = mlp_input_gradient(models[b], x);
        auto zero = [](const std::vector<double>& g) {
          return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
        };
        if (zero(ga) || zero(gb)) continue;  // dead spot, resample
        triple.cos2 = cos_squared(ga, gb, 0.0);
        triple.formula = mi_formula(std::min(triple.cos2, 1.0));
        triple.empirical = mi_empirical(ga, gb, mi_spec,
                                        derive_seed(seed, "mi_samples", pair_index));
        ok = true;
      }
      if (!ok) {
        throw NumericError(fmt::format(
            "build_report: gradients of models {} and {} vanish on 16 sampled points",
            a, b));
      }
      report.mi_check.push_back(triple);
    }
  }
  return report;
}

void save_report_json(const EvaluationReport& report,
                      const std::filesystem::path& path) {
  json j;
  j["agreement"] = report.agreement;
  j["matching"]["rule_for_model"] = report.matching.rule_for_model;
  j["matching"]["total"] = report.matching.total;
  j["mean_cos2"] = report.mean_cos2;
  json mi = json::array();
  for (const MiTriple& t : report.mi_check) {
    json e;
    e["cos2"] = t.cos2;
    e["formula"] = mi_scalar(t.formula);
    e["empirical"] = mi_scalar(t.empirical);
    mi.push_back(e);
  }
  j["mi_check"] = std::move(mi);
  j["train_accuracy"] = report.train_accuracy;
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << j.dump(1) << '\n';
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

EvaluationReport load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  json j;
  try {
    in >> j;
    EvaluationReport report;
    report.agreement = j.at("agreement").get<std::vector<std::vector<double>>>();
    report.matching.rule_for_model =
        j.at("matching").at("rule_for_model").get<std::vector<int>>();
    report.matching.total = j.at("matching").at("total").get<double>();
    report.mean_cos2 = j.at("mean_cos2").get<std::vector<std::vector<double>>>();
    for (const json& e : j.at("mi_check")) {
      MiTriple t;
      t.cos2 = e.at("cos2").get<double>();
      t.formula = mi_scalar_back(e.at("formula"));
      t.empirical = mi_scalar_back(e.at("empirical"));
      report.mi_check.push_back(t);
    }
    report.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
    return report;
  } catch (const json::exception& e) {
    throw IoError(fmt::format("malformed report '{}': {}", path.string(), e.what()));
  }
}

void save_report_csv(const EvaluationReport& report,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << "kind,i,j,value\n";
  auto matrix = [&](std::string_view kind, const std::vector<std::vector<double>>& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      for (std::size_t jx = 0; jx < m[i].size(); ++jx) {
        out << fmt::format("{},{},{},{:.17g}\n", kind, i, jx, m[i][jx]);
      }
    }
  };
  matrix("agreement", report.agreement);
  matrix("mean_cos2", report.mean_cos2);
  for (std::size_t m = 0; m < report.matching.rule_for_model.size(); ++m) {
    out << fmt::format("matching,{},0,{}\n", m, report.matching.rule_for_model[m]);
  }
  if (!report.matching.rule_for_model.empty()) {
    out << fmt::format("matching_total,0,0,{:.17g}\n", report.matching.total);
  }
  for (std::size_t p = 0; p < report.mi_check.size(); ++p) {
    out << fmt::format("mi_cos2,{},0,{:.17g}\n", p, report.mi_check[p].cos2);
    out << fmt::format("mi_formula,{},0,{:.17g}\n", p, report.mi_check[p].formula);
    out << fmt::format("mi_empirical,{},0,{:.17g}\n", p, report.mi_check[p].empirical);
  }
  for (std::size_t m = 0; m < report.train_accuracy.size(); ++m) {
    out << fmt::format("train_accuracy,{},0,{:.17g}\n", m, report.train_accuracy[m]);
  }
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

}  // namespace litens
