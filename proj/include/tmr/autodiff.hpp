#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace tmr::ad {

using Mat = Eigen::MatrixXd;

/// A named trainable tensor with a persistent gradient accumulator.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    mutable std::uint64_t reads = 0;  // counts tape uses, for access audits

    Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape at matrix granularity. Every op records a closure that
/// scatters the node's gradient into its inputs; backward() replays them in
/// reverse creation order (creation order is already topological).
class Tape {
  public:
    Var leaf(Parameter& p);        // one node per parameter per tape; grads flow into p.grad
    Var constant(Mat value);       // no gradient propagates past it

    const Mat& value(Var v) const { return nodes_[check(v)].value; }
    const Mat& grad(Var v) const { return nodes_[check(v)].grad; }

    void backward(Var scalar_loss);

    std::size_t size() const { return nodes_.size(); }

    // Node plumbing for op implementations.
    Var make(Mat value);
    void set_back(Var v, std::function<void(Tape&)> back);
    Mat& grad_mut(Var v) { return nodes_[check(v)].grad; }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&)> back;
    };

    std::size_t check(Var v) const;

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> leaf_cache_;
};

/// Count of Tape::backward invocations since the last reset; the trainer uses
/// it to show which strategies pay for extra per-example passes.
std::uint64_t backward_invocations();
void reset_backward_invocations();

// ---- ops -------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);     // a * b
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var add(Tape& t, Var a, Var b);
Var add_rowvec(Tape& t, Var a, Var row);  // broadcast a 1 x c row over every row of a
Var scale(Tape& t, Var a, double c);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index n);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var gather_rows(Tape& t, Var a, std::vector<int> rows);
Var softmax_rows(Tape& t, Var a);
Var log_softmax_rows(Tape& t, Var a);
Var layer_norm_rows(Tape& t, Var x, Var gain, Var bias);  // gain/bias are 1 x c
Var gelu(Tape& t, Var a);
Var dropout(Tape& t, Var a, double rate, std::uint64_t seed);  // inverted dropout; rate 0 is identity

/// -(1/r) * sum_i log_probs(i, targets[i]); log_probs is r x V.
Var nll_mean(Tape& t, Var log_probs, std::vector<int> targets);

/// Mean over positions of softplus(-z) + (1 - y) z, the stable form of
/// per-position binary cross-entropy on pre-activations z (n x 1) with
/// y = 1 for "original" positions.
Var bce_with_logits_mean(Tape& t, Var z, std::vector<double> y);

Var mean_scalars(Tape& t, const std::vector<Var>& scalars);

/// Throws std::runtime_error naming `where` if the node holds NaN/Inf.
void check_finite(const Tape& t, Var v, const char* where);

}  // namespace tmr::ad
