#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tmr/adam.hpp"
#include "tmr/config.hpp"
#include "tmr/model.hpp"
#include "tmr/replay_buffer.hpp"
#include "tmr/strategies.hpp"
#include "tmr/text.hpp"

namespace tmr {

enum class TrainMode { tmr, electra_baseline };

TrainMode parse_mode(const std::string& s);
std::string to_string(TrainMode m);

struct TrainConfig {
    TrainMode mode = TrainMode::tmr;
    std::filesystem::path corpus;
    std::filesystem::path out_dir;
    std::uint64_t seed = 42;
    long steps = 2000;
    int batch_size = 16;         // K
    std::size_t buffer_capacity = 1024;  // N
    double lambda = 50.0;
    double mask_rate = 0.15;
    double alpha = 1.0;
    bool priority_floor = false;
    int max_vocab = 8192;
    StrategyConfig strategy;
    ModelConfig model;  // vocab_size filled in once the vocabulary exists
    AdamConfig adam;
    long eval_every = 50;
    long checkpoint_every = 500;
    int drift_eval_positions = 512;

    bool skip_discriminator = false;  // test hook: drop the discriminator term entirely

    static TrainConfig from_config(const Config& cfg);
    void validate() const;
};

struct StepMetrics {
    long step = 0;
    double loss_g = 0.0;
    double loss_d = 0.0;
    double loss_combined = 0.0;
    double drift_exact_recovery = 0.0;
    double fresh_replaced_fraction = 0.0;
    std::size_t buffer_live = 0;
    double buffer_mean_w = 1.0;
    double buffer_min_w = 0.0;
    double buffer_max_w = 0.0;
    double step_ms = 0.0;
    // Extras surfaced in the run report, not in the CSV.
    double mean_sampled_age = 0.0;
    long max_sampled_age = 0;
    std::uint64_t backward_calls = 0;
    std::uint64_t update_attempts = 0;
    std::uint64_t stale_updates = 0;
};

struct RunReport {
    std::string config_echo;
    std::string config_hash;
    std::vector<StepMetrics> series;
    std::vector<std::string> checkpoints;
    double final_drift_slope = 0.0;
    long nan_step = -1;
    int threads = 1;
};

/// Joint pretraining: mask, generate, corrupt, buffer add/sample, classify,
/// one optimizer step, then sampled-entry weight refresh.
class Trainer {
  public:
    Trainer(TrainConfig cfg, Vocab vocab, std::vector<TokenSequence> windows);

    StepMetrics pretrain_step();

    /// Exact-recovery fraction over a held-out, seed-fixed eval batch of at
    /// least `min_masked_positions` masked slots.
    double drift_metric(std::size_t min_masked_positions);

    long current_step() const { return step_; }
    ModelParams& model() { return model_; }
    const Vocab& vocab() const { return vocab_; }
    ReplayBuffer* buffer() { return buffer_ ? &*buffer_ : nullptr; }
    const TrainConfig& config() const { return cfg_; }
    Adam& optimizer() { return adam_; }

  private:
    std::vector<MaskedExample> draw_masked_batch();
    void audit_buffer_labels() const;
    void apply_weight_updates(const std::vector<SampledEntry>& draws,
                              const std::vector<double>& sampled_losses, StepMetrics& metrics);
    double initial_weight(const CorruptedExample& ex);

    TrainConfig cfg_;
    Vocab vocab_;
    std::vector<TokenSequence> windows_;
    ModelParams model_;
    Adam adam_;
    std::optional<ReplayBuffer> buffer_;
    LsrState lsr_;
    std::optional<LinUcbState> linucb_;
    double linucb_reward_max_ = 0.0;
    bool lsr_fallback_logged_ = false;

    Rng data_rng_;
    Rng gen_rng_;
    Rng buffer_rng_;
    long step_ = 0;
    double last_drift_ = 0.0;
};

/// Full run: vocabulary, trainer, incremental metrics CSV, checkpoints at the
/// configured cadence, JSON run report. Aborts on non-finite losses with the
/// offending step recorded in the report.
RunReport run_pretraining(const Config& cfg);

struct BenchRow {
    std::string strategy;
    double seconds_per_100_iters = 0.0;
    double backward_calls_per_step = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;  // baseline, loss_diff, grad_bound, grad_norm
    bool ordering_ok = false;    // grad_norm > grad_bound > loss_diff
    bool loss_diff_overhead_ok = false;  // loss_diff <= 1.10 * baseline
    double loss_diff_ratio = 0.0;
};

/// Times each update strategy over the same config and seed.
BenchResult bench_strategies(const Config& tmpl, long iterations);

}  // namespace tmr
