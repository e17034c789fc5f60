#include "litens/models.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "litens/errors.hpp"
#include "litens/rng.hpp"

namespace litens {

namespace {

using json = nlohmann::json;

void check_layer_sizes(std::span<const int> layer_sizes) {
  if (layer_sizes.size() < 2) {
    throw UsageError("layer_sizes needs at least an input dimension and the output 1");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw UsageError(fmt::format("layer size {} is not positive", s));
  }
  if (layer_sizes.back() != 1) {
    throw UsageError(fmt::format("output layer must have size 1, got {}", layer_sizes.back()));
  }
}

double activate(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? x : 0.0;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double activate_deriv(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? 1.0 : 0.0;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double t = std::exp(x);
  return t / (1.0 + t);
}

}  // namespace

std::string_view activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "softplus";
}

Activation activation_from_name(std::string_view name) {
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "relu") return Activation::kRelu;
  throw UsageError(fmt::format("unknown activation '{}'", name));
}

std::int64_t MlpParams::parameter_count() const {
  std::int64_t total = 0;
  for (int l = 0; l < layer_count(); ++l) {
    total += std::int64_t{rows(l)} * cols(l) + rows(l);
  }
  return total;
}

std::int64_t MlpParams::layer_offset(int layer) const {
  std::int64_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += std::int64_t{rows(l)} * cols(l) + rows(l);
  }
  return off;
}

std::span<double> MlpParams::weights(int layer) {
  return {theta.data() + layer_offset(layer),
          static_cast<std::size_t>(std::int64_t{rows(layer)} * cols(layer))};
}

std::span<const double> MlpParams::weights(int layer) const {
  return {theta.data() + layer_offset(layer),
          static_cast<std::size_t>(std::int64_t{rows(layer)} * cols(layer))};
}

std::span<double> MlpParams::biases(int layer) {
  return {theta.data() + layer_offset(layer) + std::int64_t{rows(layer)} * cols(layer),
          static_cast<std::size_t>(rows(layer))};
}

std::span<const double> MlpParams::biases(int layer) const {
  return {theta.data() + layer_offset(layer) + std::int64_t{rows(layer)} * cols(layer),
          static_cast<std::size_t>(rows(layer))};
}

void validate(const MlpParams& params) {
  check_layer_sizes(params.layer_sizes);
  if (static_cast<std::int64_t>(params.theta.size()) != params.parameter_count()) {
    throw ShapeError(fmt::format("theta holds {} values, layer sizes imply {}",
                                 params.theta.size(), params.parameter_count()));
  }
  for (double v : params.theta) {
    if (!std::isfinite(v)) throw NumericError("non-finite model parameter");
  }
}

MlpParams mlp_init(std::span<const int> layer_sizes, Activation activation,
                   std::uint64_t seed) {
  check_layer_sizes(layer_sizes);
  MlpParams p;
  p.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  p.activation = activation;
  p.theta.assign(p.parameter_count(), 0.0);
  RngStream rng(seed, "mlp_init");
  for (int l = 0; l < p.layer_count(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.cols(l)));
    for (double& w : p.weights(l)) w = rng.normal(0.0, scale);
    // biases stay zero
  }
  return p;
}

double mlp_logit(const MlpParams& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != params.input_dim()) {
    throw ShapeError(fmt::format("input has {} entries, model expects {}", x.size(),
                                 params.input_dim()));
  }
  std::vector<double> h(x.begin(), x.end());
  std::vector<double> next;
  for (int l = 0; l < params.layer_count(); ++l) {
    const int r = params.rows(l), c = params.cols(l);
    const auto W = params.weights(l);
    const auto b = params.biases(l);
    next.assign(r, 0.0);
    for (int j = 0; j < c; ++j) {
      const double hj = h[j];
      const double* col = W.data() + std::int64_t{j} * r;
      for (int i = 0; i < r; ++i) next[i] += col[i] * hj;
    }
    const bool last = l + 1 == params.layer_count();
    for (int i = 0; i < r; ++i) {
      next[i] += b[i];
      if (!last) next[i] = activate(params.activation, next[i]);
    }
    h.swap(next);
  }
  return h[0];
}

std::vector<double> mlp_logits(const MlpParams& params, std::span<const double> X,
                               int batch) {
  const int dim = params.input_dim();
  if (static_cast<std::int64_t>(X.size()) != std::int64_t{dim} * batch) {
    throw ShapeError(fmt::format("batch block has {} values, expected {}x{}",
                                 X.size(), dim, batch));
  }
  Eigen::MatrixXd h = Eigen::Map<const Eigen::MatrixXd>(X.data(), dim, batch);
  for (int l = 0; l < params.layer_count(); ++l) {
    const int r = params.rows(l), c = params.cols(l);
    Eigen::Map<const Eigen::MatrixXd> W(params.weights(l).data(), r, c);
    Eigen::Map<const Eigen::VectorXd> b(params.biases(l).data(), r);
    Eigen::MatrixXd z = (W * h).colwise() + b;
    if (l + 1 < params.layer_count()) {
      for (double& v : z.reshaped()) v = activate(params.activation, v);
    }
    h = std::move(z);
  }
  return {h.data(), h.data() + batch};
}

std::vector<double> mlp_input_gradient(const MlpParams& params,
                                       std::span<const double> x) {
  const int dim = params.input_dim();
  if (static_cast<int>(x.size()) != dim) {
    throw ShapeError(fmt::format("input has {} entries, model expects {}", x.size(), dim));
  }
  const int L = params.layer_count();
  std::vector<Eigen::VectorXd> preacts(L - 1);
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(x.data(), dim);
  for (int l = 0; l + 1 < L; ++l) {
    Eigen::Map<const Eigen::MatrixXd> W(params.weights(l).data(), params.rows(l),
                                        params.cols(l));
    Eigen::Map<const Eigen::VectorXd> b(params.biases(l).data(), params.rows(l));
    preacts[l] = W * h + b;
    h.resize(preacts[l].size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      h[i] = activate(params.activation, preacts[l][i]);
    }
  }

  // g = W_0^T D_0 ... W_{L-2}^T D_{L-2} w_{L-1}^T, built from the top down.
  Eigen::Map<const Eigen::MatrixXd> Wtop(params.weights(L - 1).data(),
                                         params.rows(L - 1), params.cols(L - 1));
  Eigen::VectorXd g = Wtop.transpose() * Eigen::VectorXd::Ones(1);
  for (int l = L - 2; l >= 0; --l) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g[i] *= activate_deriv(params.activation, preacts[l][i]);
    }
    Eigen::Map<const Eigen::MatrixXd> W(params.weights(l).data(), params.rows(l),
                                        params.cols(l));
    g = (W.transpose() * g).eval();
  }
  return {g.data(), g.data() + g.size()};
}

std::string mlp_to_json(const MlpParams& params) {
  json j;
  j["layer_sizes"] = params.layer_sizes;
  j["activation"] = activation_name(params.activation);
  json weights = json::array();
  json biases = json::array();
  for (int l = 0; l < params.layer_count(); ++l) {
    const int r = params.rows(l), c = params.cols(l);
    const auto W = params.weights(l);
    std::vector<double> row_major(static_cast<std::size_t>(r) * c);
    for (int i = 0; i < r; ++i) {
      for (int jx = 0; jx < c; ++jx) {
        row_major[static_cast<std::size_t>(i) * c + jx] = W[std::int64_t{jx} * r + i];
      }
    }
    weights.push_back(row_major);
    const auto b = params.biases(l);
    biases.push_back(std::vector<double>(b.begin(), b.end()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  return j.dump(1);
}

MlpParams mlp_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(fmt::format("model JSON parse failure: {}", e.what()));
  }
  MlpParams p;
  try {
    p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    p.activation = activation_from_name(j.at("activation").get<std::string>());
    check_layer_sizes(p.layer_sizes);
    p.theta.assign(p.parameter_count(), 0.0);
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (static_cast<int>(weights.size()) != p.layer_count() ||
        static_cast<int>(biases.size()) != p.layer_count()) {
      throw ShapeError("weights/biases layer count does not match layer_sizes");
    }
    for (int l = 0; l < p.layer_count(); ++l) {
      const int r = p.rows(l), c = p.cols(l);
      const auto row_major = weights.at(l).get<std::vector<double>>();
      if (static_cast<std::int64_t>(row_major.size()) != std::int64_t{r} * c) {
        throw ShapeError(fmt::format("layer {} weight matrix has {} entries, expected {}",
                                     l, row_major.size(), r * c));
      }
      auto W = p.weights(l);
      for (int i = 0; i < r; ++i) {
        for (int jx = 0; jx < c; ++jx) {
          W[std::int64_t{jx} * r + i] = row_major[static_cast<std::size_t>(i) * c + jx];
        }
      }
      const auto b = biases.at(l).get<std::vector<double>>();
      if (static_cast<int>(b.size()) != r) {
        throw ShapeError(fmt::format("layer {} bias has {} entries, expected {}", l,
                                     b.size(), r));
      }
      std::copy(b.begin(), b.end(), p.biases(l).begin());
    }
  } catch (const json::exception& e) {
    throw IoError(fmt::format("model JSON structure failure: {}", e.what()));
  }
  validate(p);
  return p;
}

void save_mlp(const MlpParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << mlp_to_json(params) << '\n';
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

MlpParams load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return mlp_from_json(buf.str());
}

}  // namespace litens
