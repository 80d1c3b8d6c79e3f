#pragma once

#include "ftbo/gp.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace ftbo::rf {

using diff::Matrix;
using diff::Vector;

// CART-bagging regressor: bootstrap sample per tree, greedy variance
// reduction splits. Predictive uncertainty is the across-tree standard
// deviation, so LCB applies to it like to any other surrogate.
class RandomForest {
 public:
  struct Config {
    int n_trees = 100;
    int min_leaf = 2;
    int max_depth = 24;
    std::uint64_t seed = 0;
  };

  RandomForest() = default;
  explicit RandomForest(Config cfg) : cfg_(cfg) {}

  void fit(const Matrix& x, const Vector& y);
  std::vector<gp::GaussianPrediction> predict(const Matrix& xq) const;

 private:
  struct Node {
    int feature = -1;    // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0;  // leaf mean
    int left = -1;
    int right = -1;
  };
  struct Tree {
    std::vector<Node> nodes;
    double eval(const Eigen::RowVectorXd& x) const;
  };

  Tree build_tree(const Matrix& x, const Vector& y,
                  const std::vector<int>& rows, std::mt19937_64& rng) const;

  Config cfg_{};
  std::vector<Tree> trees_;
};

}  // namespace ftbo::rf
