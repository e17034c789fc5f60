#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace litens {

enum class Activation { kSoftplus, kRelu };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

// One fully connected scorer mapping R^D to a single pre-logistic logit.
// layer_sizes lists the input dimension, hidden widths, and the final 1.
// Probability = logistic(logit); predicted label = 1 iff probability >= 0.5,
// which is logit >= 0.
//
// All parameters live in one flat vector: for each layer, the weight matrix
// (out x in, column-major) followed by the bias. The flat layout is what the
// optimizer and the tape bind against; serialization converts to row-major
// at the boundary.
struct MlpParams {
  std::vector<int> layer_sizes;
  Activation activation = Activation::kSoftplus;
  std::vector<double> theta;

  int input_dim() const { return layer_sizes.front(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int hidden_count() const { return layer_count() - 1; }
  int rows(int layer) const { return layer_sizes[layer + 1]; }
  int cols(int layer) const { return layer_sizes[layer]; }

  std::int64_t parameter_count() const;
  std::int64_t layer_offset(int layer) const;

  std::span<double> weights(int layer);
  std::span<const double> weights(int layer) const;
  std::span<double> biases(int layer);
  std::span<const double> biases(int layer) const;
};

// Throws UsageError on bad layer lists, ShapeError on theta size mismatch,
// NumericError on non-finite parameters.
void validate(const MlpParams& params);

// Weights drawn N(0, 1/fan_in) per layer, biases zero. Deterministic per
// seed: the same call yields bitwise-identical parameters.
MlpParams mlp_init(std::span<const int> layer_sizes, Activation activation,
                   std::uint64_t seed);

double mlp_logit(const MlpParams& params, std::span<const double> x);

// X holds batch column-major (dim x batch); returns one logit per column.
std::vector<double> mlp_logits(const MlpParams& params, std::span<const double> X,
                               int batch);

// Analytic gradient of the logit with respect to x (direct evaluation, no
// tape). The tape-built expression in mlp_graph.hpp must match this.
std::vector<double> mlp_input_gradient(const MlpParams& params,
                                       std::span<const double> x);

// JSON layout: {"layer_sizes": [...], "activation": "softplus"|"relu",
// "weights": [[row-major matrix], ...], "biases": [[...], ...]}.
std::string mlp_to_json(const MlpParams& params);
MlpParams mlp_from_json(const std::string& text);
void save_mlp(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_mlp(const std::filesystem::path& path);

}  // namespace litens
