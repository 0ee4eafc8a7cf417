#include "tmr/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tmr {

void ModelConfig::validate() const {
    if (vocab_size < 5) throw std::invalid_argument("ModelConfig: vocab_size too small");
    if (emb_dim < 1 || max_seq_len < 2) throw std::invalid_argument("ModelConfig: bad dimensions");
    for (const TowerConfig* tc : {&gen, &disc}) {
        if (tc->layers < 1 || tc->hidden < 1 || tc->heads < 1 || tc->ffn_mult < 1)
            throw std::invalid_argument("ModelConfig: tower dimensions must be positive");
        if (tc->hidden % tc->heads != 0)
            throw std::invalid_argument("ModelConfig: hidden size must be divisible by head count");
    }
    if (gen.hidden > disc.hidden)
        throw std::invalid_argument("ModelConfig: generator hidden size must not exceed discriminator's");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("ModelConfig: bad dropout rate");
}

namespace {

Block make_block(const std::string& prefix, int hidden, int ffn) {
    return Block{
        Parameter(prefix + "/ln1_gain", 1, hidden), Parameter(prefix + "/ln1_bias", 1, hidden),
        Parameter(prefix + "/wq", hidden, hidden),  Parameter(prefix + "/bq", 1, hidden),
        Parameter(prefix + "/wk", hidden, hidden),  Parameter(prefix + "/bk", 1, hidden),
        Parameter(prefix + "/wv", hidden, hidden),  Parameter(prefix + "/bv", 1, hidden),
        Parameter(prefix + "/wo", hidden, hidden),  Parameter(prefix + "/bo", 1, hidden),
        Parameter(prefix + "/ln2_gain", 1, hidden), Parameter(prefix + "/ln2_bias", 1, hidden),
        Parameter(prefix + "/ff_in", hidden, ffn),  Parameter(prefix + "/ff_in_b", 1, ffn),
        Parameter(prefix + "/ff_out", ffn, hidden), Parameter(prefix + "/ff_out_b", 1, hidden),
    };
}

}  // namespace

TowerParams::TowerParams(const std::string& prefix, const ModelConfig& mc, const TowerConfig& tc)
    : input_proj(prefix + "/in_proj", mc.emb_dim, tc.hidden),
      pos_emb(prefix + "/pos", mc.max_seq_len, tc.hidden),
      final_gain(prefix + "/final_ln_gain", 1, tc.hidden),
      final_bias(prefix + "/final_ln_bias", 1, tc.hidden) {
    blocks.reserve(static_cast<std::size_t>(tc.layers));
    for (int l = 0; l < tc.layers; ++l)
        blocks.push_back(make_block(prefix + "/b" + std::to_string(l), tc.hidden, tc.hidden * tc.ffn_mult));
}

void TowerParams::collect(std::vector<Parameter*>& out) {
    out.push_back(&input_proj);
    out.push_back(&pos_emb);
    for (Block& b : blocks) {
        for (Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                             &b.wo, &b.bo, &b.ln2_gain, &b.ln2_bias, &b.ff_in, &b.ff_in_b,
                             &b.ff_out, &b.ff_out_b})
            out.push_back(p);
    }
    out.push_back(&final_gain);
    out.push_back(&final_bias);
}

ModelParams::ModelParams(ModelConfig cfg)
    : config(std::move(cfg)),
      embedding("embedding", config.vocab_size, config.emb_dim),
      gen("gen", config, config.gen),
      disc("disc", config, config.disc),
      gen_out_proj("gen/out_proj", config.gen.hidden, config.emb_dim),
      disc_head_w("disc/head_w", config.disc.hidden, 1) {
    config.validate();
}

void ModelParams::init(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 0.02);
    for (Parameter* p : all_params()) {
        const auto slash = p->name.rfind('/');
        const std::string leaf = slash == std::string::npos ? p->name : p->name.substr(slash + 1);
        const bool is_gain = leaf.find("gain") != std::string::npos;
        const bool is_bias = leaf.find("bias") != std::string::npos || leaf == "bq" || leaf == "bk" ||
                             leaf == "bv" || leaf == "bo" || leaf == "ff_in_b" || leaf == "ff_out_b";
        if (is_gain) {
            p->value.setOnes();
        } else if (is_bias) {
            p->value.setZero();
        } else {
            for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = normal(rng);
        }
    }
}

std::vector<Parameter*> ModelParams::all_params() {
    std::vector<Parameter*> out;
    out.push_back(&embedding);
    gen.collect(out);
    out.push_back(&gen_out_proj);
    disc.collect(out);
    out.push_back(&disc_head_w);
    return out;
}

std::vector<Parameter*> ModelParams::generator_params() {
    std::vector<Parameter*> out;
    gen.collect(out);
    out.push_back(&gen_out_proj);
    return out;
}

std::vector<Parameter*> ModelParams::discriminator_params() {
    std::vector<Parameter*> out;
    disc.collect(out);
    out.push_back(&disc_head_w);
    return out;
}

void ModelParams::zero_grads() {
    for (Parameter* p : all_params()) p->zero_grad();
}

namespace {

Var encoder_block(Tape& t, Block& b, const TowerConfig& tc, Var x, double dropout_rate,
                  std::uint64_t dropout_seed, const std::string& where, AttnCapture* cap) {
    const int head_dim = tc.hidden / tc.heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Var normed = ad::layer_norm_rows(t, x, t.leaf(b.ln1_gain), t.leaf(b.ln1_bias));
    Var q = ad::add_rowvec(t, ad::matmul(t, normed, t.leaf(b.wq)), t.leaf(b.bq));
    Var k = ad::add_rowvec(t, ad::matmul(t, normed, t.leaf(b.wk)), t.leaf(b.bk));
    Var v = ad::add_rowvec(t, ad::matmul(t, normed, t.leaf(b.wv)), t.leaf(b.bv));

    std::vector<Var> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(tc.heads));
    for (int h = 0; h < tc.heads; ++h) {
        const Eigen::Index off = static_cast<Eigen::Index>(h) * head_dim;
        Var qh = ad::slice_cols(t, q, off, head_dim);
        Var kh = ad::slice_cols(t, k, off, head_dim);
        Var vh = ad::slice_cols(t, v, off, head_dim);
        Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), attn_scale);
        Var attn = ad::softmax_rows(t, scores);
        if (cap) cap->attention.push_back(t.value(attn));
        head_outputs.push_back(ad::matmul(t, attn, vh));
    }
    Var merged = tc.heads == 1 ? head_outputs.front() : ad::concat_cols(t, head_outputs);
    Var attn_out = ad::add_rowvec(t, ad::matmul(t, merged, t.leaf(b.wo)), t.leaf(b.bo));
    attn_out = ad::dropout(t, attn_out, dropout_rate, dropout_seed);
    x = ad::add(t, x, attn_out);

    Var normed2 = ad::layer_norm_rows(t, x, t.leaf(b.ln2_gain), t.leaf(b.ln2_bias));
    Var ff = ad::add_rowvec(t, ad::matmul(t, normed2, t.leaf(b.ff_in)), t.leaf(b.ff_in_b));
    ff = ad::gelu(t, ff);
    ff = ad::add_rowvec(t, ad::matmul(t, ff, t.leaf(b.ff_out)), t.leaf(b.ff_out_b));
    ff = ad::dropout(t, ff, dropout_rate, dropout_seed + 1);
    x = ad::add(t, x, ff);

    ad::check_finite(t, x, where.c_str());
    return x;
}

Var tower_forward(Tape& t, ModelParams& p, TowerParams& tower, const TowerConfig& tc,
                  const std::string& prefix, const std::vector<int>& tokens, int n_real,
                  std::uint64_t dropout_seed, AttnCapture* cap) {
    if (n_real < 1 || static_cast<std::size_t>(n_real) > tokens.size())
        throw std::invalid_argument("tower_forward: bad n_real");
    std::vector<int> ids(tokens.begin(), tokens.begin() + n_real);
    for (int id : ids)
        if (id < 0 || id >= p.config.vocab_size)
            throw std::invalid_argument("tower_forward: token id out of vocabulary range");

    Var emb = ad::gather_rows(t, t.leaf(p.embedding), std::move(ids));
    Var x = ad::matmul(t, emb, t.leaf(tower.input_proj));
    std::vector<int> positions(static_cast<std::size_t>(n_real));
    for (int i = 0; i < n_real; ++i) positions[static_cast<std::size_t>(i)] = i;
    Var pos = ad::gather_rows(t, t.leaf(tower.pos_emb), std::move(positions));
    x = ad::add(t, x, pos);

    for (std::size_t l = 0; l < tower.blocks.size(); ++l) {
        x = encoder_block(t, tower.blocks[l], tc, x, p.config.dropout,
                          dropout_seed + 31 * l, prefix + "/b" + std::to_string(l), cap);
    }
    return ad::layer_norm_rows(t, x, t.leaf(tower.final_gain), t.leaf(tower.final_bias));
}

}  // namespace

GenForwardExample generator_forward_example(Tape& t, ModelParams& p, const MaskedExample& m,
                                            std::uint64_t dropout_seed, AttnCapture* cap) {
    GenForwardExample out;
    out.hidden = tower_forward(t, p, p.gen, p.config.gen, "gen", m.input.ids, m.input.n_real,
                               dropout_seed, cap);
    Var states = ad::matmul(t, out.hidden, t.leaf(p.gen_out_proj));  // n x emb
    out.mlm_states = ad::gather_rows(t, states, m.mask_positions);
    Var logits = ad::matmul_nt(t, out.mlm_states, t.leaf(p.embedding));
    out.log_probs = ad::log_softmax_rows(t, logits);
    return out;
}

Var generator_example_loss(Tape& t, const GenForwardExample& fwd, const MaskedExample& m) {
    return ad::nll_mean(t, fwd.log_probs, m.originals);
}

DiscForwardExample discriminator_forward_example(Tape& t, ModelParams& p, const std::vector<int>& tokens,
                                                 int n_real, std::uint64_t dropout_seed,
                                                 AttnCapture* cap) {
    DiscForwardExample out;
    out.hidden = tower_forward(t, p, p.disc, p.config.disc, "disc", tokens, n_real, dropout_seed, cap);
    out.preact = ad::matmul(t, out.hidden, t.leaf(p.disc_head_w));  // n x 1
    const Mat& z = t.value(out.preact);
    out.probs = (1.0 / (1.0 + (-z.col(0).array()).exp())).matrix();
    return out;
}

Var discriminator_example_loss(Tape& t, const DiscForwardExample& fwd,
                               const std::vector<TokenLabel>& labels) {
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        y[i] = labels[i] == TokenLabel::original ? 1.0 : 0.0;
    return ad::bce_with_logits_mean(t, fwd.preact, std::move(y));
}

GeneratorBatch forward_generator(Tape& t, ModelParams& p, const std::vector<MaskedExample>& batch,
                                 std::uint64_t dropout_seed) {
    if (batch.empty()) throw std::invalid_argument("forward_generator: empty batch");
    GeneratorBatch out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.examples.push_back(generator_forward_example(t, p, batch[i], dropout_seed + 1000 * i));
        out.losses.push_back(generator_example_loss(t, out.examples.back(), batch[i]));
    }
    out.loss = ad::mean_scalars(t, out.losses);
    return out;
}

DiscriminatorBatch forward_discriminator(Tape& t, ModelParams& p,
                                         const std::vector<const CorruptedExample*>& batch,
                                         std::uint64_t dropout_seed) {
    if (batch.empty()) throw std::invalid_argument("forward_discriminator: empty batch");
    DiscriminatorBatch out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const CorruptedExample& ex = *batch[i];
        out.examples.push_back(
            discriminator_forward_example(t, p, ex.tokens, ex.n_real, dropout_seed + 1000 * i));
        out.losses.push_back(discriminator_example_loss(t, out.examples.back(), ex.labels));
    }
    out.loss = ad::mean_scalars(t, out.losses);
    return out;
}

std::vector<int> sample_replacements(const Mat& log_probs, Rng& rng) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(log_probs.rows()));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (Eigen::Index r = 0; r < log_probs.rows(); ++r) {
        const double u = uniform(rng);
        double cum = 0.0;
        int pick = static_cast<int>(log_probs.cols()) - 1;
        for (Eigen::Index c = 0; c < log_probs.cols(); ++c) {
            cum += std::exp(log_probs(r, c));
            if (u < cum) {
                pick = static_cast<int>(c);
                break;
            }
        }
        out.push_back(pick);
    }
    return out;
}

Eigen::VectorXd discriminator_logit_grads(const Eigen::VectorXd& probs,
                                          const std::vector<TokenLabel>& labels) {
    if (static_cast<std::size_t>(probs.size()) != labels.size())
        throw std::invalid_argument("discriminator_logit_grads: size mismatch");
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    Eigen::VectorXd g(probs.size());
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double y = labels[static_cast<std::size_t>(i)] == TokenLabel::original ? 1.0 : 0.0;
        g(i) = (probs(i) - y) * inv_n;
    }
    return g;
}

std::vector<double> per_example_grad_norms(ModelParams& p,
                                           const std::vector<const CorruptedExample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("per_example_grad_norms: empty batch");
    std::vector<double> norms;
    norms.reserve(batch.size());
    auto disc_params = p.discriminator_params();
    for (const CorruptedExample* ex : batch) {
        p.zero_grads();
        Tape t;
        auto fwd = discriminator_forward_example(t, p, ex->tokens, ex->n_real);
        Var loss = discriminator_example_loss(t, fwd, ex->labels);
        t.backward(loss);
        double sq = 0.0;
        for (Parameter* param : disc_params) sq += param->grad.squaredNorm();
        norms.push_back(std::sqrt(sq));
    }
    p.zero_grads();
    return norms;
}

}  // namespace tmr
