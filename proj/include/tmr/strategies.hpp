#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tmr/replay_buffer.hpp"
#include "tmr/text.hpp"

namespace tmr {

enum class InitKind { average, lsr, linucb };
enum class UpdateKind { loss_diff, grad_norm, grad_bound };

InitKind parse_init_kind(const std::string& s);
UpdateKind parse_update_kind(const std::string& s);
std::string to_string(InitKind k);
std::string to_string(UpdateKind k);

struct StrategyConfig {
    InitKind init_kind = InitKind::average;
    UpdateKind update_kind = UpdateKind::loss_diff;
    double ridge = 1.0;      // least-squares regularizer
    double ucb_alpha = 1.0;  // exploration coefficient
    int feature_dim = 32;    // equals max sequence length
    long lsr_refit_every = 100;

    void validate() const;
};

/// Token ids of the corrupted sequence scaled by vocabulary size, zero-padded
/// to feature_dim; every component lands in [0, 1].
Eigen::VectorXd example_features(const CorruptedExample& ex, int vocab_size, int feature_dim);

// ---- initialization strategies ----------------------------------------

double init_weight_average(const BufferStats& stats);

struct LsrState {
    std::optional<Eigen::VectorXd> theta;
    long fitted_at_step = -1;
};

/// Ridge solution of min_theta sum (theta.x - r)^2; the normal-equation
/// residual is checked to 1e-6 relative.
LsrState lsr_fit(const std::vector<std::pair<Eigen::VectorXd, double>>& entries, double ridge);

struct InitOutcome {
    double weight = 0.0;
    bool used_fallback = false;  // unfitted state fell back to the buffer average
};

/// max(0, theta.x); falls back to the average when no fit has happened yet.
InitOutcome lsr_init_weight(const LsrState& state, const Eigen::VectorXd& x,
                            const BufferStats& fallback);

struct LinUcbState {
    Eigen::MatrixXd A;  // ridge identity plus sum of feature outer products
    Eigen::VectorXd b;
    explicit LinUcbState(int dim);
};

/// max(0, theta_hat.x + ucb_alpha * sqrt(x' A^-1 x)) with theta_hat = A^-1 b.
double linucb_init_weight(const LinUcbState& state, const Eigen::VectorXd& x, double ucb_alpha);

/// A += x x', b += reward * x.
void linucb_observe(LinUcbState& state, const Eigen::VectorXd& x, double reward);

// ---- update strategies -------------------------------------------------

/// |curr - prev|, or nothing on the first observation. The caller records
/// curr as the entry's last loss either way.
std::optional<double> update_weight_loss_diff(std::optional<double> prev_loss, double curr_loss);

double update_weight_grad_norm(double norm);

/// Euclidean norm of the per-token loss gradient at the sigmoid pre-activations.
double update_weight_grad_bound(const Eigen::VectorXd& logit_grads);

}  // namespace tmr
