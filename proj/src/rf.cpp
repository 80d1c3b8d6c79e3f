#include "ftbo/rf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ftbo::rf {

double RandomForest::Tree::eval(const Eigen::RowVectorXd& x) const {
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const Node& n = nodes[static_cast<std::size_t>(at)];
    at = (x(n.feature) <= n.threshold) ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(at)].value;
}

RandomForest::Tree RandomForest::build_tree(const Matrix& x, const Vector& y,
                                            const std::vector<int>& rows,
                                            std::mt19937_64& rng) const {
  Tree tree;
  const int d = static_cast<int>(x.cols());
  // features considered per split: the classic p/3 regression heuristic
  const int mtry = std::max(1, d / 3);

  struct Item {
    std::vector<int> rows;
    int depth;
    int node;
  };
  const auto mean_of = [&](const std::vector<int>& r) {
    double m = 0.0;
    for (int i : r) m += y(i);
    return m / static_cast<double>(r.size());
  };

  tree.nodes.push_back({});
  std::vector<Item> stack;
  stack.push_back({rows, 0, 0});
  while (!stack.empty()) {
    Item item = std::move(stack.back());
    stack.pop_back();
    const int node_id = item.node;
    const double mean = mean_of(item.rows);
    bool constant = true;
    for (int i : item.rows)
      if (std::abs(y(i) - y(item.rows.front())) > 0.0) {
        constant = false;
        break;
      }
    if (static_cast<int>(item.rows.size()) < 2 * cfg_.min_leaf ||
        item.depth >= cfg_.max_depth || constant) {
      tree.nodes[static_cast<std::size_t>(node_id)] = {-1, 0.0, mean, -1, -1};
      continue;
    }

    // candidate features for this split
    std::vector<int> feats(static_cast<std::size_t>(d));
    std::iota(feats.begin(), feats.end(), 0);
    for (int i = d - 1; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(feats[static_cast<std::size_t>(i)],
                feats[static_cast<std::size_t>(pick(rng))]);
    }
    feats.resize(static_cast<std::size_t>(mtry));

    double best_score = std::numeric_limits<double>::infinity();
    int best_feat = -1;
    double best_thr = 0.0;
    std::vector<int> order = item.rows;
    for (int f : feats) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return x(a, f) < x(b, f);
      });
      // prefix sums for O(n) split scan
      double sum_left = 0.0, sumsq_left = 0.0;
      double sum_all = 0.0, sumsq_all = 0.0;
      for (int i : order) {
        sum_all += y(i);
        sumsq_all += y(i) * y(i);
      }
      const int n = static_cast<int>(order.size());
      for (int i = 0; i < n - 1; ++i) {
        const double yi = y(order[static_cast<std::size_t>(i)]);
        sum_left += yi;
        sumsq_left += yi * yi;
        const int nl = i + 1;
        const int nr = n - nl;
        if (nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
        const double xl = x(order[static_cast<std::size_t>(i)], f);
        const double xr = x(order[static_cast<std::size_t>(i + 1)], f);
        if (xr <= xl) continue;  // no split between equal values
        const double sum_right = sum_all - sum_left;
        const double sumsq_right = sumsq_all - sumsq_left;
        const double sse_left = sumsq_left - sum_left * sum_left / nl;
        const double sse_right = sumsq_right - sum_right * sum_right / nr;
        const double score = sse_left + sse_right;
        if (score < best_score) {
          best_score = score;
          best_feat = f;
          best_thr = 0.5 * (xl + xr);
        }
      }
    }
    if (best_feat < 0) {
      tree.nodes[static_cast<std::size_t>(node_id)] = {-1, 0.0, mean, -1, -1};
      continue;
    }
    std::vector<int> left, right;
    for (int i : item.rows)
      (x(i, best_feat) <= best_thr ? left : right).push_back(i);
    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    const int right_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[static_cast<std::size_t>(node_id)] = {best_feat, best_thr, 0.0,
                                                     left_id, right_id};
    stack.push_back({std::move(right), item.depth + 1, right_id});
    stack.push_back({std::move(left), item.depth + 1, left_id});
  }
  return tree;
}

void RandomForest::fit(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size() || x.rows() == 0)
    throw std::invalid_argument("RandomForest: bad training data");
  trees_.clear();
  trees_.reserve(static_cast<std::size_t>(cfg_.n_trees));
  std::mt19937_64 rng(cfg_.seed);
  const int n = static_cast<int>(x.rows());
  std::uniform_int_distribution<int> boot(0, n - 1);
  for (int t = 0; t < cfg_.n_trees; ++t) {
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int& r : rows) r = boot(rng);
    trees_.push_back(build_tree(x, y, rows, rng));
  }
}

std::vector<gp::GaussianPrediction> RandomForest::predict(
    const Matrix& xq) const {
  if (trees_.empty()) throw std::runtime_error("RandomForest: not fitted");
  std::vector<gp::GaussianPrediction> out(static_cast<std::size_t>(xq.rows()));
  const double nt = static_cast<double>(trees_.size());
  for (Eigen::Index i = 0; i < xq.rows(); ++i) {
    double sum = 0.0, sumsq = 0.0;
    for (const Tree& t : trees_) {
      const double v = t.eval(xq.row(i));
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / nt;
    const double var = std::max(0.0, sumsq / nt - mean * mean);
    out[static_cast<std::size_t>(i)] = {mean, std::sqrt(var)};
  }
  return out;
}

}  // namespace ftbo::rf
