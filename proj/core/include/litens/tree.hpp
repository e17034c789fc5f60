#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace litens {

// CART with Gini impurity. split_feature < 0 marks a leaf carrying the
// class-1 fraction of its training rows.
struct TreeNode {
  int split_feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double leaf_probability = 0.0;

  bool is_leaf() const { return split_feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict_proba(std::span<const double> x) const;
  int predict_label(std::span<const double> x) const;  // 1 iff proba >= 0.5
};

struct ForestParams {
  std::vector<DecisionTree> trees;
  std::vector<std::uint64_t> bootstrap_seeds;

  // Mean of tree leaf probabilities.
  double predict_proba(std::span<const double> x) const;
  int predict_label(std::span<const double> x) const;
};

// X is row-major (n rows of dim each). max_depth < 0 is unlimited.
// Splits are midpoints between adjacent distinct sorted feature values;
// ties in Gini gain resolve to the lowest feature index, then the lowest
// threshold, so refitting is deterministic.
DecisionTree tree_fit(std::span<const double> X, std::span<const int> Y, int dim,
                      int max_depth = -1, int min_leaf = 1);

// Bootstrap-resampled trees, one derived seed per tree.
ForestParams forest_fit(std::span<const double> X, std::span<const int> Y, int dim,
                        int n_trees, int max_depth, std::uint64_t seed);

}  // namespace litens
