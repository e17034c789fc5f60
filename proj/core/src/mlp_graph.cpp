#include "litens/mlp_graph.hpp"

#include <cstring>
#include <fmt/format.h>

#include "litens/errors.hpp"

namespace litens {

MlpGraph append_mlp(ad::Tape& tape, ad::NodeId input,
                    std::span<const int> layer_sizes, Activation activation,
                    bool build_input_gradient) {
  if (layer_sizes.size() < 2 || layer_sizes.back() != 1) {
    throw UsageError("append_mlp: layer_sizes must run from input dim to 1");
  }
  const int L = static_cast<int>(layer_sizes.size()) - 1;
  const ad::Shape in_shape = tape.shape(input);
  if (in_shape.rows != layer_sizes[0]) {
    throw ShapeError(fmt::format("append_mlp: input node has {} rows, expected {}",
                                 in_shape.rows, layer_sizes[0]),
                     input);
  }

  MlpGraph g;
  g.input = input;
  ad::NodeId h = input;
  for (int l = 0; l < L; ++l) {
    const int r = layer_sizes[l + 1], c = layer_sizes[l];
    const ad::NodeId W = tape.parameter({r, c});
    const ad::NodeId b = tape.parameter({r, 1});
    g.weights.push_back(W);
    g.biases.push_back(b);
    ad::NodeId z = tape.add(tape.matvec(W, h), b);
    if (l + 1 < L) {
      g.preacts.push_back(z);
      h = activation == Activation::kRelu ? tape.relu(z) : tape.softplus(z);
    } else {
      h = z;
    }
  }
  g.logit = h;

  if (build_input_gradient) {
    // Top weight row transposed; matvec against the exact constant 1 keeps
    // depth-0 gradients bitwise equal to the weights.
    ad::NodeId grad = tape.matvec(g.weights[L - 1], tape.constant(1.0), true);
    for (int l = L - 2; l >= 0; --l) {
      const ad::NodeId deriv = activation == Activation::kRelu
                                   ? tape.step(g.preacts[l])
                                   : tape.logistic(g.preacts[l]);
      grad = tape.matvec(g.weights[l], tape.multiply(deriv, grad), true);
    }
    g.input_gradient = grad;
  }
  return g;
}

void bind_mlp(ad::Tape& tape, const MlpGraph& graph, const MlpParams& params) {
  if (static_cast<int>(graph.weights.size()) != params.layer_count()) {
    throw ShapeError(fmt::format("bind_mlp: graph has {} layers, params have {}",
                                 graph.weights.size(), params.layer_count()));
  }
  for (int l = 0; l < params.layer_count(); ++l) {
    tape.bind(graph.weights[l], params.weights(l));
    tape.bind(graph.biases[l], params.biases(l));
  }
}

void collect_parameter_adjoints(const ad::Tape& tape, const MlpGraph& graph,
                                std::span<double> out) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < graph.weights.size(); ++l) {
    for (ad::NodeId leaf : {graph.weights[l], graph.biases[l]}) {
      const auto adj = tape.adjoint(leaf);
      if (off + adj.size() > out.size()) {
        throw ShapeError("collect_parameter_adjoints: output buffer too small");
      }
      std::memcpy(out.data() + off, adj.data(), adj.size() * sizeof(double));
      off += adj.size();
    }
  }
  if (off != out.size()) {
    throw ShapeError(fmt::format(
        "collect_parameter_adjoints: wrote {} adjoints into a buffer of {}", off,
        out.size()));
  }
}

}  // namespace litens
