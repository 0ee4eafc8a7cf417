#pragma once

#include <string>
#include <vector>

#include "tmr/autodiff.hpp"
#include "tmr/rng.hpp"
#include "tmr/text.hpp"

namespace tmr {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

struct TowerConfig {
    int layers = 2;
    int hidden = 16;
    int heads = 2;
    int ffn_mult = 4;
};

struct ModelConfig {
    int vocab_size = 0;
    int emb_dim = 16;
    int max_seq_len = 32;
    TowerConfig gen{2, 16, 2, 4};
    TowerConfig disc{2, 32, 4, 4};
    double dropout = 0.0;

    void validate() const;  // throws std::invalid_argument on inconsistent shapes
};

/// One pre-layer-norm encoder block.
struct Block {
    Parameter ln1_gain, ln1_bias;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_gain, ln2_bias;
    Parameter ff_in, ff_in_b, ff_out, ff_out_b;
};

struct TowerParams {
    Parameter input_proj;  // emb x hidden adapter from the shared table
    Parameter pos_emb;     // max_seq_len x hidden, learned
    std::vector<Block> blocks;
    Parameter final_gain, final_bias;

    TowerParams(const std::string& prefix, const ModelConfig& mc, const TowerConfig& tc);
    void collect(std::vector<Parameter*>& out);
};

/// Generator and discriminator towers over one physically shared embedding
/// table (a single gradient accumulator serves both paths).
struct ModelParams {
    ModelConfig config;
    Parameter embedding;     // vocab x emb, shared
    TowerParams gen, disc;
    Parameter gen_out_proj;  // hidden_g x emb, ties MLM logits back to the table
    Parameter disc_head_w;   // hidden_d x 1 sigmoid head

    explicit ModelParams(ModelConfig cfg);
    void init(Rng& rng);

    std::vector<Parameter*> all_params();
    std::vector<Parameter*> generator_params();      // tower + out_proj; embedding excluded
    std::vector<Parameter*> discriminator_params();  // tower + head; embedding excluded
    void zero_grads();
};

struct AttnCapture {
    std::vector<Mat> attention;  // row-stochastic matrices, per layer per head
};

struct GenForwardExample {
    Var hidden;      // n x hidden_g contextual states
    Var mlm_states;  // r x emb projected states at the masked positions
    Var log_probs;   // r x vocab, rows are log-distributions over the vocabulary
};

struct DiscForwardExample {
    Var hidden;            // n x hidden_d contextual states
    Var preact;            // n x 1 sigmoid pre-activations (kept for the gradient bound)
    Eigen::VectorXd probs; // sigmoid(preact) values
};

GenForwardExample generator_forward_example(Tape& t, ModelParams& p, const MaskedExample& m,
                                            std::uint64_t dropout_seed = 0, AttnCapture* cap = nullptr);

/// Mean over masked positions of -log p(original token | masked input).
Var generator_example_loss(Tape& t, const GenForwardExample& fwd, const MaskedExample& m);

DiscForwardExample discriminator_forward_example(Tape& t, ModelParams& p, const std::vector<int>& tokens,
                                                 int n_real, std::uint64_t dropout_seed = 0,
                                                 AttnCapture* cap = nullptr);

/// Mean over real positions of per-token BCE against original/replaced labels.
Var discriminator_example_loss(Tape& t, const DiscForwardExample& fwd,
                               const std::vector<TokenLabel>& labels);

struct GeneratorBatch {
    std::vector<GenForwardExample> examples;
    std::vector<Var> losses;  // per-example scalars
    Var loss;                 // batch mean
};
GeneratorBatch forward_generator(Tape& t, ModelParams& p, const std::vector<MaskedExample>& batch,
                                 std::uint64_t dropout_seed = 0);

struct DiscriminatorBatch {
    std::vector<DiscForwardExample> examples;
    std::vector<Var> losses;  // per-example scalars, exposed for the loss-diff strategy
    Var loss;                 // batch mean
};
DiscriminatorBatch forward_discriminator(Tape& t, ModelParams& p,
                                         const std::vector<const CorruptedExample*>& batch,
                                         std::uint64_t dropout_seed = 0);

/// One categorical draw per masked position from exp(log_probs), temperature 1.
/// Sampling happens on plain values, outside any tape.
std::vector<int> sample_replacements(const Mat& log_probs, Rng& rng);

/// Per-token gradient of the example's BCE loss at the sigmoid pre-activations:
/// (sigmoid(z_t) - y_t) / n. Needs only forward activations and labels.
Eigen::VectorXd discriminator_logit_grads(const Eigen::VectorXd& probs,
                                          const std::vector<TokenLabel>& labels);

/// Euclidean norm of the discriminator-parameter gradient per example,
/// computed as a size-1 forward+backward loop. Clobbers grad accumulators.
std::vector<double> per_example_grad_norms(ModelParams& p,
                                           const std::vector<const CorruptedExample*>& batch);

}  // namespace tmr
