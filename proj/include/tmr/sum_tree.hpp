#pragma once

#include <cstddef>
#include <vector>

namespace tmr {

/// Complete binary tree over a fixed set of leaves where every internal node
/// stores the sum of its children. Supports O(log N) point updates and
/// O(log N) inverse-CDF lookups (prefix search), which is what makes
/// weight-proportional sampling from a large buffer cheap.
///
/// Leaves are indexed [0, leaf_count). Internally the leaf array is padded to
/// the next power of two; padding leaves stay at weight zero forever.
class SumTree {
  public:
    explicit SumTree(std::size_t leaf_count);

    std::size_t leaf_count() const { return leaf_count_; }
    double total() const { return nodes_[1]; }
    double leaf(std::size_t i) const;

    /// Replace the weight of one leaf and refresh all ancestor sums.
    /// Throws std::out_of_range for a bad index, std::invalid_argument for a
    /// negative or non-finite weight.
    void set(std::size_t leaf, double weight);

    /// Return the unique leaf i with cumsum(leaves[0..i]) <= u < cumsum(leaves[0..i+1]).
    /// Requires 0 <= u < total(). Zero-weight leaves are never returned.
    std::size_t find_prefix(double u) const;

    /// Nodes touched by the most recent set()/find_prefix() call.
    int last_op_node_visits() const { return last_visits_; }

  private:
    std::size_t leaf_count_;
    std::size_t base_;            // power-of-two padded leaf count
    std::vector<double> nodes_;   // 1-indexed; leaves live at [base_, 2*base_)
    mutable int last_visits_ = 0;
};

}  // namespace tmr
