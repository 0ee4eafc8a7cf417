#include "tmr/strategies.hpp"

#include <cmath>
#include <stdexcept>

namespace tmr {

InitKind parse_init_kind(const std::string& s) {
    if (s == "average") return InitKind::average;
    if (s == "lsr") return InitKind::lsr;
    if (s == "linucb") return InitKind::linucb;
    throw std::invalid_argument("unknown init_strategy: " + s);
}

UpdateKind parse_update_kind(const std::string& s) {
    if (s == "loss_diff") return UpdateKind::loss_diff;
    if (s == "grad_norm") return UpdateKind::grad_norm;
    if (s == "grad_bound") return UpdateKind::grad_bound;
    throw std::invalid_argument("unknown update_strategy: " + s);
}

std::string to_string(InitKind k) {
    switch (k) {
        case InitKind::average: return "average";
        case InitKind::lsr: return "lsr";
        case InitKind::linucb: return "linucb";
    }
    return "?";
}

std::string to_string(UpdateKind k) {
    switch (k) {
        case UpdateKind::loss_diff: return "loss_diff";
        case UpdateKind::grad_norm: return "grad_norm";
        case UpdateKind::grad_bound: return "grad_bound";
    }
    return "?";
}

void StrategyConfig::validate() const {
    if (!(ridge > 0.0)) throw std::invalid_argument("StrategyConfig: ridge must be positive");
    if (!(ucb_alpha > 0.0)) throw std::invalid_argument("StrategyConfig: ucb_alpha must be positive");
    if (feature_dim < 1) throw std::invalid_argument("StrategyConfig: feature_dim must be positive");
    if (lsr_refit_every < 1) throw std::invalid_argument("StrategyConfig: lsr_refit_every must be positive");
}

Eigen::VectorXd example_features(const CorruptedExample& ex, int vocab_size, int feature_dim) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(feature_dim);
    const int n = std::min<int>(ex.n_real, feature_dim);
    for (int i = 0; i < n; ++i)
        x(i) = static_cast<double>(ex.tokens[static_cast<std::size_t>(i)]) /
               static_cast<double>(vocab_size);
    return x;
}

double init_weight_average(const BufferStats& stats) { return stats.mean_weight; }

LsrState lsr_fit(const std::vector<std::pair<Eigen::VectorXd, double>>& entries, double ridge) {
    if (entries.empty()) throw std::invalid_argument("lsr_fit: need at least one entry");
    const Eigen::Index dim = entries.front().first.size();
    Eigen::MatrixXd gram = ridge * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    for (const auto& [x, r] : entries) {
        if (!x.allFinite() || !std::isfinite(r)) throw std::runtime_error("lsr_fit: non-finite input");
        gram.noalias() += x * x.transpose();
        rhs.noalias() += r * x;
    }
    Eigen::VectorXd theta = gram.ldlt().solve(rhs);
    if (!theta.allFinite()) throw std::runtime_error("lsr_fit: solve produced non-finite solution");
    const double residual = (gram * theta - rhs).norm();
    const double scale = std::max(1.0, rhs.norm());
    if (residual / scale > 1e-6) throw std::runtime_error("lsr_fit: normal-equation residual too large");
    LsrState state;
    state.theta = std::move(theta);
    return state;
}

InitOutcome lsr_init_weight(const LsrState& state, const Eigen::VectorXd& x,
                            const BufferStats& fallback) {
    if (!state.theta.has_value()) return {init_weight_average(fallback), true};
    return {std::max(0.0, state.theta->dot(x)), false};
}

LinUcbState::LinUcbState(int dim)
    : A(Eigen::MatrixXd::Identity(dim, dim)), b(Eigen::VectorXd::Zero(dim)) {
    if (dim < 1) throw std::invalid_argument("LinUcbState: dim must be positive");
}

double linucb_init_weight(const LinUcbState& state, const Eigen::VectorXd& x, double ucb_alpha) {
    if (!x.allFinite()) throw std::invalid_argument("linucb_init_weight: non-finite features");
    Eigen::LLT<Eigen::MatrixXd> llt(state.A);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("linucb_init_weight: A is not positive-definite");
    const Eigen::VectorXd theta_hat = llt.solve(state.b);
    const Eigen::VectorXd a_inv_x = llt.solve(x);
    const double score = theta_hat.dot(x) + ucb_alpha * std::sqrt(std::max(0.0, x.dot(a_inv_x)));
    return std::max(0.0, score);
}

void linucb_observe(LinUcbState& state, const Eigen::VectorXd& x, double reward) {
    if (!x.allFinite() || !std::isfinite(reward))
        throw std::invalid_argument("linucb_observe: non-finite input");
    state.A.noalias() += x * x.transpose();
    state.b.noalias() += reward * x;
}

std::optional<double> update_weight_loss_diff(std::optional<double> prev_loss, double curr_loss) {
    if (!std::isfinite(curr_loss)) throw std::invalid_argument("update_weight_loss_diff: non-finite loss");
    if (!prev_loss.has_value()) return std::nullopt;
    return std::abs(curr_loss - *prev_loss);
}

double update_weight_grad_norm(double norm) {
    if (!(norm >= 0.0) || !std::isfinite(norm))
        throw std::invalid_argument("update_weight_grad_norm: norm must be finite and nonnegative");
    return norm;
}

double update_weight_grad_bound(const Eigen::VectorXd& logit_grads) {
    if (!logit_grads.allFinite())
        throw std::invalid_argument("update_weight_grad_bound: non-finite gradient vector");
    return logit_grads.norm();
}

}  // namespace tmr
