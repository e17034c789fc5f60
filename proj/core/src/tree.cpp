#include "litens/tree.hpp"

#include <algorithm>
#include <cstdint>
#include <fmt/format.h>
#include <vector>

#include "litens/errors.hpp"
#include "litens/rng.hpp"

namespace litens {

namespace {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;  // weighted child Gini
};

double gini(std::int64_t n1, std::int64_t n) {
  if (n == 0) return 0.0;
  const double p1 = static_cast<double>(n1) / static_cast<double>(n);
  return 2.0 * p1 * (1.0 - p1);
}

struct Builder {
  std::span<const double> X;
  std::span<const int> Y;
  int dim;
  int max_depth;
  int min_leaf;
  std::vector<int> idx;
  std::vector<std::pair<double, int>> scratch;  // (value, row) sort buffer
  std::vector<TreeNode> nodes;

  double feature(int row, int f) const {
    return X[static_cast<std::size_t>(row) * dim + f];
  }

  SplitChoice best_split(int begin, int end) {
    const std::int64_t n = end - begin;
    std::int64_t n1_total = 0;
    for (int k = begin; k < end; ++k) n1_total += Y[idx[k]];

    SplitChoice best;
    for (int f = 0; f < dim; ++f) {
      scratch.clear();
      for (int k = begin; k < end; ++k) {
        scratch.emplace_back(feature(idx[k], f), idx[k]);
      }
      std::sort(scratch.begin(), scratch.end());

      std::int64_t left_n = 0, left_n1 = 0;
      for (std::int64_t i = 0; i + 1 < n; ++i) {
        left_n += 1;
        left_n1 += Y[scratch[i].second];
        if (scratch[i].first == scratch[i + 1].first) continue;
        if (left_n < min_leaf || n - left_n < min_leaf) continue;
        const double lo = scratch[i].first, hi = scratch[i + 1].first;
        const double mid = lo + (hi - lo) / 2.0;
        if (!(lo < mid && mid <= hi)) continue;  // adjacent doubles
        const double impurity =
            (static_cast<double>(left_n) * gini(left_n1, left_n) +
             static_cast<double>(n - left_n) * gini(n1_total - left_n1, n - left_n)) /
            static_cast<double>(n);
        // strict < keeps the lowest feature index, then lowest threshold
        if (!best.found || impurity < best.impurity) {
          best.found = true;
          best.feature = f;
          best.threshold = mid;
          best.impurity = impurity;
        }
      }
    }
    return best;
  }

  int build(int begin, int end, int depth) {
    const std::int64_t n = end - begin;
    std::int64_t n1 = 0;
    for (int k = begin; k < end; ++k) n1 += Y[idx[k]];

    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[id].leaf_probability = static_cast<double>(n1) / static_cast<double>(n);

    const bool pure = n1 == 0 || n1 == n;
    const bool depth_capped = max_depth >= 0 && depth >= max_depth;
    if (pure || depth_capped || n < 2 * min_leaf) return id;

    const SplitChoice split = best_split(begin, end);
    if (!split.found) return id;

    auto mid_it = std::partition(idx.begin() + begin, idx.begin() + end, [&](int row) {
      return feature(row, split.feature) < split.threshold;
    });
    const int mid = static_cast<int>(mid_it - idx.begin());

    nodes[id].split_feature = split.feature;
    nodes[id].threshold = split.threshold;
    const int left = build(begin, mid, depth + 1);
    nodes[id].left = left;
    const int right = build(mid, end, depth + 1);
    nodes[id].right = right;
    return id;
  }
};

}  // namespace

double DecisionTree::predict_proba(std::span<const double> x) const {
  int id = 0;
  while (!nodes[id].is_leaf()) {
    const TreeNode& n = nodes[id];
    id = x[n.split_feature] < n.threshold ? n.left : n.right;
  }
  return nodes[id].leaf_probability;
}

int DecisionTree::predict_label(std::span<const double> x) const {
  return predict_proba(x) >= 0.5 ? 1 : 0;
}

double ForestParams::predict_proba(std::span<const double> x) const {
  double total = 0.0;
  for (const DecisionTree& t : trees) total += t.predict_proba(x);
  return total / static_cast<double>(trees.size());
}

int ForestParams::predict_label(std::span<const double> x) const {
  return predict_proba(x) >= 0.5 ? 1 : 0;
}

DecisionTree tree_fit(std::span<const double> X, std::span<const int> Y, int dim,
                      int max_depth, int min_leaf) {
  const int n = static_cast<int>(Y.size());
  if (n < 1) throw UsageError("tree_fit: empty dataset");
  if (dim < 1) throw UsageError("tree_fit: dimension must be positive");
  if (static_cast<std::size_t>(n) * dim != X.size()) {
    throw ShapeError(fmt::format("tree_fit: X has {} values, expected {}x{}",
                                 X.size(), n, dim));
  }
  if (min_leaf < 1) throw UsageError("tree_fit: min_leaf must be >= 1");

  Builder b{X, Y, dim, max_depth, min_leaf, {}, {}, {}};
  b.idx.resize(n);
  for (int i = 0; i < n; ++i) b.idx[i] = i;
  b.build(0, n, 0);

  DecisionTree tree;
  tree.nodes = std::move(b.nodes);
  return tree;
}

ForestParams forest_fit(std::span<const double> X, std::span<const int> Y, int dim,
                        int n_trees, int max_depth, std::uint64_t seed) {
  if (n_trees < 1) throw UsageError("forest_fit: n_trees must be >= 1");
  const int n = static_cast<int>(Y.size());
  if (n < 1) throw UsageError("forest_fit: empty dataset");

  ForestParams forest;
  std::vector<double> bx(static_cast<std::size_t>(n) * dim);
  std::vector<int> by(n);
  for (int t = 0; t < n_trees; ++t) {
    forest.bootstrap_seeds.push_back(derive_seed(seed, "bootstrap", t));
    RngStream rng(seed, "bootstrap", t);
    for (int i = 0; i < n; ++i) {
      const int row = static_cast<int>(rng.uniform_int(n));
      std::copy_n(X.begin() + static_cast<std::size_t>(row) * dim, dim,
                  bx.begin() + static_cast<std::size_t>(i) * dim);
      by[i] = Y[row];
    }
    forest.trees.push_back(tree_fit(bx, by, dim, max_depth, 1));
  }
  return forest;
}

}  // namespace litens
