#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "litens/autodiff.hpp"
#include "litens/errors.hpp"
#include "litens/mlp_graph.hpp"
#include "litens/models.hpp"
#include "litens/rng.hpp"

using litens::Activation;
using litens::RngStream;
using litens::ad::NodeId;
using litens::ad::Op;
using litens::ad::Shape;
using litens::ad::Tape;

namespace {

// Relative below the floor turns absolute: partials near zero sit in the
// central-difference noise (|f| * eps / step), which a 1e-8 denominator
// would amplify past any honest tolerance.
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

struct BoundLeaf {
  NodeId id;
  std::vector<double> vals;
};

// Central difference of the seed w.r.t. one leaf entry, via forward() only.
// The tape is treated as a black-box evaluator; backward() is never involved.
double fd_partial(Tape& tape, NodeId seed, BoundLeaf& leaf, std::size_t idx,
                  double step) {
  const double saved = leaf.vals[idx];
  leaf.vals[idx] = saved + step;
  tape.bind(leaf.id, leaf.vals);
  tape.forward();
  const double up = tape.scalar_value(seed);
  leaf.vals[idx] = saved - step;
  tape.bind(leaf.id, leaf.vals);
  tape.forward();
  const double down = tape.scalar_value(seed);
  leaf.vals[idx] = saved;
  tape.bind(leaf.id, leaf.vals);
  return (up - down) / (2.0 * step);
}

double worst_fd_error(Tape& tape, NodeId seed, std::vector<BoundLeaf>& leaves,
                      double step) {
  for (BoundLeaf& l : leaves) tape.bind(l.id, l.vals);
  tape.forward();
  tape.backward(seed);
  std::vector<std::vector<double>> analytic;
  for (const BoundLeaf& l : leaves) {
    const auto adj = tape.adjoint(l.id);
    analytic.emplace_back(adj.begin(), adj.end());
  }
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t k = 0; k < leaves[li].vals.size(); ++k) {
      const double fd = fd_partial(tape, seed, leaves[li], k, step);
      worst = std::max(worst, rel_err(analytic[li][k], fd));
    }
  }
  tape.forward();
  return worst;
}

std::vector<double> draw_vec(RngStream& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& e : v) e = rng.uniform(lo, hi);
  return v;
}

// Random values bounded away from zero, both signs.
std::vector<double> draw_vec_nonzero(RngStream& rng, std::size_t n, double lo,
                                     double hi) {
  std::vector<double> v(n);
  for (double& e : v) {
    e = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  return v;
}

// Weights the seed so every output entry has a distinct adjoint; catches
// backward rules that are right only in aggregate.
NodeId weighted_sum(Tape& tape, NodeId out, RngStream& rng,
                    std::vector<BoundLeaf>& leaves) {
  const Shape s = tape.shape(out);
  const NodeId w = tape.input(s);
  BoundLeaf leaf{w, draw_vec(rng, static_cast<std::size_t>(s.size()), 0.25, 1.5)};
  tape.bind(w, leaf.vals);
  leaves.push_back(std::move(leaf));
  return tape.sum(tape.multiply(out, w));
}

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  const NodeId x = tape.input({1, 1});
  const NodeId lg = tape.logistic(x);
  const NodeId sp = tape.softplus(x);
  tape.bind(x, 0.0);
  tape.forward();
  CHECK(tape.scalar_value(lg) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tape.scalar_value(sp) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tape t2;
  const NodeId w = t2.parameter({2, 1});
  const NodeId v = t2.input({2, 1});
  const NodeId d = t2.dot(w, v);
  t2.bind(w, std::vector<double>{1.0, 2.0});
  t2.bind(v, std::vector<double>{3.0, 4.0});
  t2.forward();
  CHECK(t2.scalar_value(d) == 11.0);
}

TEST_CASE("backward examples") {
  Tape tape;
  const NodeId w = tape.parameter({2, 1});
  const NodeId x = tape.input({2, 1});
  const NodeId d = tape.dot(w, x);
  tape.bind(w, std::vector<double>{1.0, 2.0});
  tape.bind(x, std::vector<double>{3.0, 4.0});
  tape.forward();
  tape.backward(d);
  const auto gw = tape.adjoint(w);
  CHECK(gw[0] == 3.0);
  CHECK(gw[1] == 4.0);
  const auto gx = tape.adjoint(x);
  CHECK(gx[0] == 1.0);
  CHECK(gx[1] == 2.0);

  Tape t2;
  const NodeId theta = t2.parameter({1, 1});
  const NodeId sq = t2.square(theta);
  t2.bind(theta, 3.0);
  t2.forward();
  t2.backward(sq);
  CHECK(t2.adjoint(theta)[0] == 6.0);
}

TEST_CASE("step is flat and 0 at 0") {
  Tape tape;
  const NodeId x = tape.input({3, 1});
  const NodeId st = tape.step(x);
  const NodeId seed = tape.sum(st);
  tape.bind(x, std::vector<double>{-0.2, 0.0, 0.5});
  tape.forward();
  const auto v = tape.value(st);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 1.0);
  tape.backward(seed);
  const auto g = tape.adjoint(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("per-op gradients match central finite differences") {
  // 100 random points per op, relative error <= 1e-4. relu draws its inputs
  // bounded away from the kink.
  constexpr int kTrials = 100;
  constexpr double kStep = 1e-5;
  constexpr double kTol = 1e-4;

  struct OpCase {
    const char* name;
    std::function<double(RngStream&, int)> run;  // returns worst error
  };

  auto unary_case = [](NodeId (Tape::*build)(NodeId), double lo, double hi,
                       bool nonzero) {
    return [build, lo, hi, nonzero](RngStream& rng, int trial) {
      Tape tape;
      const int rows = 1 + static_cast<int>(rng.uniform_int(4));
      const int cols = 1 + static_cast<int>(rng.uniform_int(3));
      const NodeId a = tape.input({rows, cols});
      std::vector<BoundLeaf> leaves;
      const std::size_t n = static_cast<std::size_t>(rows) * cols;
      leaves.push_back({a, nonzero ? draw_vec_nonzero(rng, n, lo, hi)
                                   : draw_vec(rng, n, lo, hi)});
      const NodeId out = (tape.*build)(a);
      const NodeId seed = weighted_sum(tape, out, rng, leaves);
      (void)trial;
      return worst_fd_error(tape, seed, leaves, kStep);
    };
  };

  auto binary_case = [](NodeId (Tape::*build)(NodeId, NodeId), int mode) {
    // mode 0: equal shapes; 1: right scalar; 2: right column-broadcast
    return [build, mode](RngStream& rng, int trial) {
      Tape tape;
      const int rows = 2 + static_cast<int>(rng.uniform_int(3));
      const int cols = 1 + static_cast<int>(rng.uniform_int(3));
      const NodeId a = tape.input({rows, cols});
      Shape bshape{rows, cols};
      if (mode == 1) bshape = {1, 1};
      if (mode == 2) bshape = {rows, 1};
      const NodeId b = tape.input(bshape);
      std::vector<BoundLeaf> leaves;
      leaves.push_back({a, draw_vec(rng, static_cast<std::size_t>(rows) * cols,
                                    -2.0, 2.0)});
      leaves.push_back(
          {b, draw_vec(rng, static_cast<std::size_t>(bshape.size()), -2.0, 2.0)});
      const NodeId out =
          trial % 2 == 0 ? (tape.*build)(a, b) : (tape.*build)(b, a);
      const NodeId seed = weighted_sum(tape, out, rng, leaves);
      return worst_fd_error(tape, seed, leaves, kStep);
    };
  };

  auto matvec_case = [](bool transpose) {
    return [transpose](RngStream& rng, int) {
      Tape tape;
      const int m = 2 + static_cast<int>(rng.uniform_int(3));
      const int n = 2 + static_cast<int>(rng.uniform_int(3));
      const int cols = 1 + static_cast<int>(rng.uniform_int(3));
      const NodeId mat = tape.parameter({m, n});
      const NodeId vec = tape.input({transpose ? m : n, cols});
      std::vector<BoundLeaf> leaves;
      leaves.push_back(
          {mat, draw_vec(rng, static_cast<std::size_t>(m) * n, -1.5, 1.5)});
      leaves.push_back({vec, draw_vec(rng,
                                      static_cast<std::size_t>(transpose ? m : n) * cols,
                                      -1.5, 1.5)});
      const NodeId out = tape.matvec(mat, vec, transpose);
      const NodeId seed = weighted_sum(tape, out, rng, leaves);
      return worst_fd_error(tape, seed, leaves, kStep);
    };
  };

  const std::vector<OpCase> cases = {
      {"add", binary_case(&Tape::add, 0)},
      {"add scalar", binary_case(&Tape::add, 1)},
      {"add column", binary_case(&Tape::add, 2)},
      {"multiply", binary_case(&Tape::multiply, 0)},
      {"multiply scalar", binary_case(&Tape::multiply, 1)},
      {"multiply column", binary_case(&Tape::multiply, 2)},
      {"matvec", matvec_case(false)},
      {"matvec transpose", matvec_case(true)},
      {"dot", binary_case(&Tape::dot, 0)},
      {"softplus", unary_case(&Tape::softplus, -3.0, 3.0, false)},
      {"relu", unary_case(&Tape::relu, 0.01, 3.0, true)},
      {"logistic", unary_case(&Tape::logistic, -3.0, 3.0, false)},
      {"log", unary_case(&Tape::log, 0.2, 3.0, false)},
      {"negate", unary_case(&Tape::negate, -2.0, 2.0, false)},
      {"reciprocal", unary_case(&Tape::reciprocal, 0.3, 2.0, true)},
      {"square", unary_case(&Tape::square, -2.0, 2.0, false)},
      {"sum", [](RngStream& rng, int) {
         Tape tape;
         const int rows = 1 + static_cast<int>(rng.uniform_int(5));
         const int cols = 1 + static_cast<int>(rng.uniform_int(3));
         const NodeId a = tape.input({rows, cols});
         std::vector<BoundLeaf> leaves;
         leaves.push_back(
             {a, draw_vec(rng, static_cast<std::size_t>(rows) * cols, -2.0, 2.0)});
         const NodeId seed = tape.sum(tape.square(a));
         return worst_fd_error(tape, seed, leaves, kStep);
       }},
      {"add_n", [](RngStream& rng, int) {
         Tape tape;
         const int rows = 1 + static_cast<int>(rng.uniform_int(4));
         std::vector<BoundLeaf> leaves;
         std::vector<NodeId> terms;
         for (int t = 0; t < 3; ++t) {
           const NodeId a = tape.input({rows, 1});
           leaves.push_back({a, draw_vec(rng, rows, -2.0, 2.0)});
           terms.push_back(a);
         }
         const NodeId out = tape.add_n(terms);
         const NodeId seed = weighted_sum(tape, out, rng, leaves);
         return worst_fd_error(tape, seed, leaves, kStep);
       }},
  };

  for (const OpCase& c : cases) {
    RngStream rng(0xad1f00d, c.name);
    double worst = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      worst = std::max(worst, c.run(rng, trial));
    }
    CHECK_MESSAGE(worst <= kTol, std::string(c.name), " worst rel err ", worst);
  }
}

TEST_CASE("input gradient node: depth 0 is the weight vector, bitwise") {
  const std::vector<int> layers{3, 1};
  const litens::MlpParams params = litens::mlp_init(layers, Activation::kRelu, 7);
  Tape tape;
  const litens::MlpGraph graph =
      litens::append_mlp(tape, tape.input({3, 1}), layers, Activation::kRelu, true);
  litens::bind_mlp(tape, graph, params);
  tape.bind(graph.input, std::vector<double>{0.3, -0.7, 2.0});
  tape.forward();
  const auto g = tape.value(graph.input_gradient);
  const auto w = params.weights(0);
  REQUIRE(g.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::memcmp(&g[i], &w[i], sizeof(double)) == 0);
  }
}

TEST_CASE("input gradient node matches finite differences of the logit") {
  const double kStep = 1e-5;
  for (const Activation act : {Activation::kSoftplus, Activation::kRelu}) {
    CAPTURE(activation_name(act));
    RngStream rng(42, "igrad_fd", act == Activation::kRelu ? 1 : 0);
    const std::vector<int> layers{2, 8, 8, 1};
    const litens::MlpParams params = litens::mlp_init(layers, act, 11);
    Tape tape;
    const litens::MlpGraph graph =
        litens::append_mlp(tape, tape.input({2, 1}), layers, act, true);
    litens::bind_mlp(tape, graph, params);

    int checked = 0;
    while (checked < 20) {
      BoundLeaf x{graph.input, draw_vec(rng, 2, -10.0, 10.0)};
      tape.bind(x.id, x.vals);
      tape.forward();
      if (act == Activation::kRelu) {
        // kink-avoiding filter on every hidden pre-activation
        bool near_kink = false;
        for (const NodeId p : graph.preacts) {
          for (const double v : tape.value(p)) {
            near_kink |= std::abs(v) < 1e-3;
          }
        }
        if (near_kink) continue;
      }
      const auto g = tape.value(graph.input_gradient);
      const std::vector<double> analytic(g.begin(), g.end());
      for (std::size_t d = 0; d < 2; ++d) {
        const double fd = fd_partial(tape, graph.logit, x, d, kStep);
        CHECK(rel_err(analytic[d], fd) < 1e-4);
      }
      ++checked;
    }
  }
}

TEST_CASE("double backprop: penalty gradients match finite differences") {
  // cos^2 of two width-8 MLP input gradients, differentiated w.r.t. all
  // parameters of both models.
  RngStream rng(99, "dbp");
  for (const Activation act : {Activation::kSoftplus, Activation::kRelu}) {
    CAPTURE(activation_name(act));
    const std::vector<int> layers{2, 8, 8, 1};
    Tape tape;
    const NodeId x = tape.input({2, 1});
    const litens::MlpGraph ga = litens::append_mlp(tape, x, layers, act, true);
    const litens::MlpGraph gb = litens::append_mlp(tape, x, layers, act, true);
    const NodeId num = tape.square(tape.dot(ga.input_gradient, gb.input_gradient));
    const NodeId den = tape.add(
        tape.multiply(tape.dot(ga.input_gradient, ga.input_gradient),
                      tape.dot(gb.input_gradient, gb.input_gradient)),
        tape.constant(1e-6));
    const NodeId cos2 = tape.multiply(num, tape.reciprocal(den));

    const litens::MlpParams pa = litens::mlp_init(layers, act, 21);
    const litens::MlpParams pb = litens::mlp_init(layers, act, 22);
    litens::bind_mlp(tape, ga, pa);
    litens::bind_mlp(tape, gb, pb);

    std::vector<BoundLeaf> leaves;
    for (const litens::MlpGraph* g : {&ga, &gb}) {
      const litens::MlpParams& p = g == &ga ? pa : pb;
      for (int l = 0; l < p.layer_count(); ++l) {
        leaves.push_back({g->weights[l],
                          {p.weights(l).begin(), p.weights(l).end()}});
        leaves.push_back({g->biases[l], {p.biases(l).begin(), p.biases(l).end()}});
      }
    }
    tape.bind(x, std::vector<double>{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)});
    const double worst = worst_fd_error(tape, cos2, leaves, 1e-4);
    CHECK_MESSAGE(worst < 1e-3, "worst rel err ", worst);
  }
}

TEST_CASE("grad_check library helper") {
  Tape tape;
  const NodeId theta = tape.parameter({1, 1});
  const NodeId sq = tape.square(theta);
  tape.bind(theta, 3.0);
  tape.forward();
  const NodeId leaves[] = {theta};
  CHECK(litens::ad::grad_check(tape, sq, leaves, 1e-5) < 1e-7);

  const std::vector<int> layers{2, 8, 8, 1};
  Tape t2;
  const litens::MlpGraph graph = litens::append_mlp(
      t2, t2.input({2, 1}), layers, Activation::kSoftplus, false);
  litens::bind_mlp(t2, graph, litens::mlp_init(layers, Activation::kSoftplus, 3));
  t2.bind(graph.input, std::vector<double>{1.5, -2.5});
  t2.forward();
  const NodeId xleaf[] = {graph.input};
  CHECK(litens::ad::grad_check(t2, graph.logit, xleaf, 1e-5) < 1e-4);
}

TEST_CASE("two passes produce bitwise-identical values and adjoints") {
  const std::vector<int> layers{2, 8, 1};
  Tape tape;
  const litens::MlpGraph graph = litens::append_mlp(
      tape, tape.input({2, 4}), layers, Activation::kSoftplus, true);
  litens::bind_mlp(tape, graph, litens::mlp_init(layers, Activation::kSoftplus, 5));
  RngStream rng(8, "det");
  tape.bind(graph.input, draw_vec(rng, 8, -10.0, 10.0));
  const NodeId seed = tape.sum(graph.input_gradient);

  tape.forward();
  tape.backward(seed);
  const auto v1 = tape.value(graph.logit);
  const std::vector<double> val1(v1.begin(), v1.end());
  const auto a1 = tape.adjoint(graph.weights[0]);
  const std::vector<double> adj1(a1.begin(), a1.end());

  tape.forward();
  tape.backward(seed);
  CHECK(std::memcmp(val1.data(), tape.value(graph.logit).data(),
                    val1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(adj1.data(), tape.adjoint(graph.weights[0]).data(),
                    adj1.size() * sizeof(double)) == 0);
}

TEST_CASE("batched columns equal per-column evaluation") {
  Tape tape;
  const NodeId mat = tape.parameter({3, 2});
  const NodeId x = tape.input({2, 5});
  const NodeId b = tape.parameter({3, 1});
  const NodeId out = tape.softplus(tape.add(tape.matvec(mat, x), b));
  RngStream rng(31, "batch");
  const std::vector<double> mv = draw_vec(rng, 6, -1.0, 1.0);
  const std::vector<double> bv = draw_vec(rng, 3, -1.0, 1.0);
  const std::vector<double> xv = draw_vec(rng, 10, -5.0, 5.0);
  tape.bind(mat, mv);
  tape.bind(b, bv);
  tape.bind(x, xv);
  tape.forward();
  const auto batched = tape.value(out);

  for (int c = 0; c < 5; ++c) {
    Tape single;
    const NodeId m1 = single.parameter({3, 2});
    const NodeId x1 = single.input({2, 1});
    const NodeId b1 = single.parameter({3, 1});
    const NodeId o1 = single.softplus(single.add(single.matvec(m1, x1), b1));
    single.bind(m1, mv);
    single.bind(b1, bv);
    single.bind(x1, std::vector<double>{xv[2 * c], xv[2 * c + 1]});
    single.forward();
    const auto col = single.value(o1);
    for (int r = 0; r < 3; ++r) {
      CHECK(batched[3 * c + r] == doctest::Approx(col[r]).epsilon(1e-13));
    }
  }
}

TEST_CASE("shape and binding errors") {
  Tape tape;
  const NodeId a = tape.input({2, 1});
  const NodeId b = tape.input({3, 1});
  CHECK_THROWS_AS((void)tape.add(a, b), litens::ShapeError);
  CHECK_THROWS_AS((void)tape.dot(a, b), litens::ShapeError);

  const NodeId mat = tape.parameter({3, 2});
  CHECK_THROWS_AS((void)tape.matvec(mat, b), litens::ShapeError);

  CHECK_THROWS_AS(tape.bind(a, std::vector<double>{1.0}), litens::ShapeError);

  // constants are not bindable leaves
  const NodeId c = tape.constant(2.0);
  CHECK_THROWS_AS(tape.bind(c, 1.0), litens::Error);

  // unbound leaf at forward()
  Tape t2;
  const NodeId u = t2.input({2, 1});
  (void)t2.softplus(u);
  CHECK_THROWS_AS(t2.forward(), litens::Error);

  // non-scalar backward seed
  Tape t3;
  const NodeId v = t3.input({2, 1});
  const NodeId sp = t3.softplus(v);
  t3.bind(v, std::vector<double>{1.0, 2.0});
  t3.forward();
  CHECK_THROWS_AS(t3.backward(sp), litens::ShapeError);
}
