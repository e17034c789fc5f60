#include "litens/training.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>

#include "litens/errors.hpp"
#include "litens/mlp_graph.hpp"
#include "litens/rng.hpp"

namespace litens {

void validate(const EnsembleConfig& config, int input_dim) {
  if (config.M < 1) throw UsageError("M must be >= 1");
  if (config.lambda < 0.0) throw UsageError("lambda must be >= 0");
  if (!(config.eps_stab > 0.0)) throw UsageError("eps_stab must be > 0");
  if (!(config.accuracy_epsilon > 0.0 && config.accuracy_epsilon < 1.0)) {
    throw UsageError("accuracy_epsilon must lie in (0, 1)");
  }
  if (!(config.learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(config.adam_beta1 >= 0.0 && config.adam_beta1 < 1.0) ||
      !(config.adam_beta2 >= 0.0 && config.adam_beta2 < 1.0)) {
    throw UsageError("adam betas must lie in [0, 1)");
  }
  if (!(config.adam_eps > 0.0)) throw UsageError("adam_eps must be > 0");
  if (config.batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (config.epochs < 1) throw UsageError("epochs must be >= 1");
  if (config.layer_sizes.size() < 2 || config.layer_sizes.back() != 1) {
    throw UsageError("layer_sizes must run from the input dimension to 1");
  }
  for (int s : config.layer_sizes) {
    if (s <= 0) throw UsageError("layer sizes must be positive");
  }
  if (input_dim > 0 && config.layer_sizes.front() != input_dim) {
    throw ShapeError(fmt::format("model expects input dimension {}, data has {}",
                                 config.layer_sizes.front(), input_dim));
  }
}

void save_history_csv(const TrainingHistory& history,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  for (const std::string& note : history.notes) out << "# " << note << '\n';
  const int M = history.models();
  out << "epoch";
  for (int m = 0; m < M; ++m) out << fmt::format(",ce_{}", m);
  for (int m = 0; m < M; ++m) out << fmt::format(",acc_{}", m);
  out << ",mean_cos2,objective\n";
  for (int e = 0; e < history.epochs(); ++e) {
    out << e;
    for (int m = 0; m < M; ++m) out << fmt::format(",{:.17g}", history.cross_entropy[e][m]);
    for (int m = 0; m < M; ++m) out << fmt::format(",{:.17g}", history.train_accuracy[e][m]);
    out << fmt::format(",{:.17g},{:.17g}\n", history.mean_cos2[e], history.objective[e]);
  }
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

double cross_entropy(double logit, int y) {
  if (y != 0 && y != 1) throw UsageError(fmt::format("label {} is not binary", y));
  const double sp = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
  return sp - y * logit;
}

double cos_squared(std::span<const double> v, std::span<const double> w,
                   double eps_stab) {
  if (v.size() != w.size()) {
    throw ShapeError(fmt::format("cos_squared: sizes {} and {} differ", v.size(), w.size()));
  }
  double vw = 0.0, vv = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    vw += v[i] * w[i];
    vv += v[i] * v[i];
    ww += w[i] * w[i];
  }
  return vw * vw / (vv * ww + eps_stab);
}

double diversity_penalty(std::span<const MlpParams> models,
                         std::span<const double> x, double eps_stab) {
  if (models.size() < 2) throw UsageError("diversity_penalty needs M >= 2 models");
  std::vector<std::vector<double>> grads;
  grads.reserve(models.size());
  for (const MlpParams& m : models) grads.push_back(mlp_input_gradient(m, x));
  double total = 0.0;
  for (std::size_t a = 0; a + 1 < grads.size(); ++a) {
    for (std::size_t b = a + 1; b < grads.size(); ++b) {
      total += cos_squared(grads[a], grads[b], eps_stab);
    }
  }
  return total;
}

struct LitGraph::Impl {
  ad::Tape tape;
  ad::NodeId x_leaf = ad::kInvalidNode;
  ad::NodeId y_leaf = ad::kInvalidNode;
  std::vector<MlpGraph> models;
  std::vector<ad::NodeId> ce_rows;
  std::vector<ad::NodeId> cos2_nodes;  // unordered pairs, a-major
  ad::NodeId objective = ad::kInvalidNode;
  std::vector<int> layer_sizes;
  int M = 0;
  int dim = 0;
  std::int64_t pcount = 0;
  double lambda = 0.0;
};

LitGraph::LitGraph(std::span<const int> layer_sizes, Activation activation, int M,
                   double lambda, double eps_stab, int batch)
    : impl_(std::make_unique<Impl>()), batch_(batch) {
  if (M < 1) throw UsageError("LitGraph: M must be >= 1");
  if (batch < 1) throw UsageError("LitGraph: batch must be >= 1");
  if (lambda < 0.0) throw UsageError("LitGraph: lambda must be >= 0");
  if (!(eps_stab > 0.0)) throw UsageError("LitGraph: eps_stab must be > 0");

  Impl& im = *impl_;
  im.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  im.M = M;
  im.lambda = lambda;
  im.dim = layer_sizes.empty() ? 0 : layer_sizes[0];

  ad::Tape& t = im.tape;
  im.x_leaf = t.input({im.dim, batch});
  im.y_leaf = t.input({1, batch});
  for (int m = 0; m < M; ++m) {
    im.models.push_back(append_mlp(t, im.x_leaf, layer_sizes, activation, true));
  }
  {
    MlpParams probe;
    probe.layer_sizes = im.layer_sizes;
    im.pcount = probe.parameter_count();
  }

  for (int m = 0; m < M; ++m) {
    const ad::NodeId z = im.models[m].logit;
    im.ce_rows.push_back(t.add(t.softplus(z), t.negate(t.multiply(im.y_leaf, z))));
  }
  const ad::NodeId eps_node = t.constant(eps_stab);
  for (int a = 0; a < M; ++a) {
    for (int b = a + 1; b < M; ++b) {
      const ad::NodeId ga = im.models[a].input_gradient;
      const ad::NodeId gb = im.models[b].input_gradient;
      const ad::NodeId num = t.square(t.dot(ga, gb));
      const ad::NodeId den = t.add(t.multiply(t.dot(ga, ga), t.dot(gb, gb)), eps_node);
      im.cos2_nodes.push_back(t.multiply(num, t.reciprocal(den)));
    }
  }

  // Batch means. Cross-entropy rows always span the batch; a cos^2 node may
  // be a single column (depth-0 gradients are x-independent), in which case
  // its mean is itself.
  std::vector<ad::NodeId> terms;
  for (int m = 0; m < M; ++m) {
    terms.push_back(t.multiply(t.constant(1.0 / batch), t.sum(im.ce_rows[m])));
  }
  if (lambda > 0.0) {
    for (const ad::NodeId c : im.cos2_nodes) {
      const int cols = t.shape(c).cols;
      terms.push_back(t.multiply(t.constant(lambda / cols), t.sum(c)));
    }
  }
  im.objective = terms.size() == 1 ? terms[0] : t.add_n(terms);
}

LitGraph::~LitGraph() = default;
LitGraph::LitGraph(LitGraph&&) noexcept = default;
LitGraph& LitGraph::operator=(LitGraph&&) noexcept = default;

BatchStats LitGraph::eval(std::span<const MlpParams> models,
                          std::span<const double> X, std::span<const double> Y,
                          std::vector<std::vector<double>>* grads) {
  Impl& im = *impl_;
  if (static_cast<int>(models.size()) != im.M) {
    throw ShapeError(fmt::format("LitGraph built for {} models, got {}", im.M,
                                 models.size()));
  }
  for (const MlpParams& m : models) {
    if (m.layer_sizes != im.layer_sizes) {
      throw ShapeError("model layer sizes do not match the graph");
    }
  }
  if (static_cast<std::int64_t>(X.size()) != std::int64_t{im.dim} * batch_) {
    throw ShapeError(fmt::format("X has {} values, expected {}x{}", X.size(), im.dim,
                                 batch_));
  }
  if (static_cast<int>(Y.size()) != batch_) {
    throw ShapeError(fmt::format("Y has {} values, expected {}", Y.size(), batch_));
  }

  ad::Tape& t = im.tape;
  t.bind(im.x_leaf, X);
  t.bind(im.y_leaf, Y);
  for (int m = 0; m < im.M; ++m) bind_mlp(t, im.models[m], models[m]);
  t.forward();

  BatchStats stats;
  stats.objective = t.scalar_value(im.objective);
  stats.model_ce.resize(im.M);
  for (int m = 0; m < im.M; ++m) {
    const auto row = t.value(im.ce_rows[m]);
    stats.model_ce[m] =
        std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }
  for (const ad::NodeId c : im.cos2_nodes) {
    const auto row = t.value(c);
    stats.penalty +=
        std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }
  stats.mean_cos2 =
      im.cos2_nodes.empty() ? 0.0 : stats.penalty / static_cast<double>(im.cos2_nodes.size());

  if (grads != nullptr) {
    t.backward(im.objective);
    grads->resize(im.M);
    for (int m = 0; m < im.M; ++m) {
      (*grads)[m].resize(im.pcount);
      collect_parameter_adjoints(t, im.models[m], (*grads)[m]);
    }
  }
  return stats;
}

BatchStats lit_objective(std::span<const MlpParams> models,
                         std::span<const double> X, std::span<const double> Y,
                         int batch, double lambda, double eps_stab,
                         std::vector<std::vector<double>>* grads) {
  if (models.empty()) throw UsageError("lit_objective: no models");
  LitGraph graph(models[0].layer_sizes, models[0].activation,
                 static_cast<int>(models.size()), lambda, eps_stab, batch);
  return graph.eval(models, X, Y, grads);
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const EnsembleConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeError(fmt::format("adam_step: {} params vs {} grads", params.size(),
                                 grads.size()));
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: moment size does not match params");
  }
  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
  }
}

namespace {

std::vector<double> training_accuracies(const std::vector<MlpParams>& models,
                                        std::span<const double> X_cols,
                                        std::span<const int> Y, int n) {
  std::vector<double> acc;
  acc.reserve(models.size());
  for (const MlpParams& m : models) {
    const std::vector<double> logits = mlp_logits(m, X_cols, n);
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      const int pred = logits[i] >= 0.0 ? 1 : 0;
      hits += pred == Y[i];
    }
    acc.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  return acc;
}

}  // namespace

TrainResult train_ensemble(const Dataset& data, const EnsembleConfig& config) {
  validate(config, data.dim);
  const int n = data.size();
  if (n < 1) throw UsageError("train_ensemble: empty dataset");
  const bool has0 = std::find(data.Y.begin(), data.Y.end(), 0) != data.Y.end();
  const bool has1 = std::find(data.Y.begin(), data.Y.end(), 1) != data.Y.end();
  if (!has0 || !has1) {
    throw UsageError("train_ensemble: dataset is degenerate (single label)");
  }

  TrainResult result;
  for (int m = 0; m < config.M; ++m) {
    result.models.push_back(mlp_init(config.layer_sizes, config.activation,
                                     derive_seed(config.seed, "init", m)));
  }
  TrainingHistory& history = result.history;
  if (config.M > data.dim) {
    history.notes.push_back(
        fmt::format("M={} exceeds the input dimension D={}; pairwise orthogonality "
                    "cannot be satisfied everywhere, watch the oversize diagnostic",
                    config.M, data.dim));
  }

  const int B = std::min(config.batch_size, n);
  const int full_batches = n / B;
  const int tail = n - full_batches * B;
  LitGraph graph(config.layer_sizes, config.activation, config.M, config.lambda,
                 config.eps_stab, B);
  std::unique_ptr<LitGraph> tail_graph;
  if (tail > 0) {
    tail_graph = std::make_unique<LitGraph>(config.layer_sizes, config.activation,
                                            config.M, config.lambda, config.eps_stab,
                                            tail);
  }

  std::vector<AdamState> adam(config.M);
  std::vector<std::vector<double>> grads;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> bx(static_cast<std::size_t>(B) * data.dim);
  std::vector<double> by(B);
  bool ratio_logged = false;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream shuffle(config.seed, "shuffle", epoch);
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle.uniform_int(static_cast<std::uint64_t>(i) + 1));
      std::swap(perm[i], perm[j]);
    }

    std::vector<double> epoch_ce(config.M, 0.0);
    double epoch_cos2 = 0.0, epoch_obj = 0.0;
    const int batches = full_batches + (tail > 0 ? 1 : 0);
    for (int b = 0; b < batches; ++b) {
      const int bsize = b < full_batches ? B : tail;
      const int start = b * B;
      bx.resize(static_cast<std::size_t>(bsize) * data.dim);
      by.resize(bsize);
      for (int k = 0; k < bsize; ++k) {
        const int row = perm[start + k];
        for (int d = 0; d < data.dim; ++d) {
          bx[static_cast<std::size_t>(k) * data.dim + d] =
              data.X[static_cast<std::size_t>(row) * data.dim + d];
        }
        by[k] = static_cast<double>(data.Y[row]);
      }

      LitGraph& g = b < full_batches ? graph : *tail_graph;
      const BatchStats stats = g.eval(result.models, bx, by, &grads);
      if (!std::isfinite(stats.objective)) {
        throw NumericError(fmt::format("non-finite objective at epoch {}, batch {}",
                                       epoch, b),
                           epoch, b);
      }
      if (!ratio_logged && config.M > 1) {
        double ce_sum = std::accumulate(stats.model_ce.begin(), stats.model_ce.end(), 0.0);
        if (ce_sum > 0.0) {
          history.notes.push_back(fmt::format(
              "initial penalty/CE ratio: {:.6g} (lambda-weighted: {:.6g})",
              stats.penalty / ce_sum, config.lambda * stats.penalty / ce_sum));
        }
        ratio_logged = true;
      }
      for (int m = 0; m < config.M; ++m) {
        adam_step(result.models[m].theta, grads[m], adam[m], config);
        epoch_ce[m] += stats.model_ce[m] * bsize;
      }
      epoch_cos2 += stats.mean_cos2 * bsize;
      epoch_obj += stats.objective * bsize;
    }

    for (double& v : epoch_ce) v /= n;
    history.cross_entropy.push_back(std::move(epoch_ce));
    history.mean_cos2.push_back(epoch_cos2 / n);
    history.objective.push_back(epoch_obj / n);
    // row-major (n x dim) doubles as column-major (dim x n): points stay
    // contiguous either way
    history.train_accuracy.push_back(training_accuracies(result.models, data.X, data.Y, n));
  }

  const OversizeDiagnostic diag = m_oversize_diagnostic(history, config);
  history.notes.push_back(diag.report);
  return result;
}

OversizeDiagnostic m_oversize_diagnostic(const TrainingHistory& history,
                                         const EnsembleConfig& config) {
  if (history.epochs() == 0) throw UsageError("m_oversize_diagnostic: empty history");
  OversizeDiagnostic diag;
  const auto& final_acc = history.train_accuracy.back();
  const double bar = 1.0 - config.accuracy_epsilon;
  for (std::size_t m = 0; m < final_acc.size(); ++m) {
    if (final_acc[m] < bar) diag.low_models.push_back(static_cast<int>(m));
  }
  diag.flagged = !diag.low_models.empty();
  if (!diag.flagged) {
    diag.report = fmt::format(
        "oversize diagnostic: ok, all {} models reached training accuracy >= {:.4g}",
        final_acc.size(), bar);
  } else {
    std::string names;
    for (int m : diag.low_models) {
      names += fmt::format("{}{} ({:.4f})", names.empty() ? "" : ", ", m, final_acc[m]);
    }
    diag.report = fmt::format(
        "oversize diagnostic: FLAGGED, model(s) {} below the {:.4g} accuracy bar; "
        "M={} likely exceeds the number of independent rules in the data",
        names, bar, config.M);
  }
  return diag;
}

}  // namespace litens
