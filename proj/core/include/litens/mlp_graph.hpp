#pragma once

#include <span>
#include <vector>

#include "litens/autodiff.hpp"
#include "litens/models.hpp"

namespace litens {

// An MLP appended to a tape: the logit and, optionally, the analytic input
// gradient of the logit, both differentiable with respect to the weight and
// bias leaves.
struct MlpGraph {
  ad::NodeId input = ad::kInvalidNode;           // dim x batch leaf, shared
  std::vector<ad::NodeId> weights;               // parameter leaves per layer
  std::vector<ad::NodeId> biases;
  std::vector<ad::NodeId> preacts;               // hidden pre-activations
  ad::NodeId logit = ad::kInvalidNode;           // 1 x batch
  ad::NodeId input_gradient = ad::kInvalidNode;  // dim x batch (dim x 1 at depth 0)
};

// Builds logit = W_L a(... a(W_0 x + b_0) ...) + b_L onto the tape. With
// build_input_gradient, also builds
//   g = W_0^T D_0 W_1^T D_1 ... W_{L-1}^T 1
// where D_l is the elementwise activation derivative at pre-activation l
// (logistic for softplus, step for relu). At depth 0 the gradient node
// reproduces the weight vector exactly, bitwise.
MlpGraph append_mlp(ad::Tape& tape, ad::NodeId input,
                    std::span<const int> layer_sizes, Activation activation,
                    bool build_input_gradient);

// Binds the graph's leaves from the flat parameter vector.
void bind_mlp(ad::Tape& tape, const MlpGraph& graph, const MlpParams& params);

// Gathers d(seed)/d(theta) from the leaf adjoints after backward(), laid out
// like MlpParams::theta. out.size() must equal the parameter count.
void collect_parameter_adjoints(const ad::Tape& tape, const MlpGraph& graph,
                                std::span<double> out);

}  // namespace litens
