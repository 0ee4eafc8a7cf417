#include "tmr/sum_tree.hpp"

#include <cmath>
#include <stdexcept>

namespace tmr {

SumTree::SumTree(std::size_t leaf_count) : leaf_count_(leaf_count) {
    if (leaf_count == 0) throw std::invalid_argument("SumTree: leaf_count must be positive");
    base_ = 1;
    while (base_ < leaf_count_) base_ <<= 1;
    nodes_.assign(2 * base_, 0.0);
}

double SumTree::leaf(std::size_t i) const {
    if (i >= leaf_count_) throw std::out_of_range("SumTree::leaf: index out of range");
    return nodes_[base_ + i];
}

void SumTree::set(std::size_t leaf, double weight) {
    if (leaf >= leaf_count_) throw std::out_of_range("SumTree::set: leaf index out of range");
    if (!(weight >= 0.0) || !std::isfinite(weight))
        throw std::invalid_argument("SumTree::set: weight must be finite and nonnegative");
    std::size_t node = base_ + leaf;
    nodes_[node] = weight;
    int visits = 1;
    while (node > 1) {
        node >>= 1;
        nodes_[node] = nodes_[2 * node] + nodes_[2 * node + 1];
        ++visits;
    }
    last_visits_ = visits;
}

std::size_t SumTree::find_prefix(double u) const {
    const double tot = total();
    if (tot <= 0.0) throw std::invalid_argument("SumTree::find_prefix: tree has zero total weight");
    if (!(u >= 0.0) || u >= tot || !std::isfinite(u))
        throw std::invalid_argument("SumTree::find_prefix: u outside [0, total())");
    std::size_t node = 1;
    int visits = 1;
    while (node < base_) {
        const std::size_t left = 2 * node;
        if (u < nodes_[left]) {
            node = left;
        } else {
            u -= nodes_[left];
            node = left + 1;
        }
        ++visits;
    }
    last_visits_ = visits;
    return node - base_;
}

}  // namespace tmr
