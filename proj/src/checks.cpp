#include "tmr/checks.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "tmr/replay_buffer.hpp"
#include "tmr/strategies.hpp"
#include "tmr/trainer.hpp"

namespace tmr {

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

void print_results(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
}

GradCheckReport finite_difference_check(const std::vector<Parameter*>& params,
                                        const std::function<Var(Tape&)>& build_loss, double h) {
    for (Parameter* p : params) p->zero_grad();
    std::map<const Parameter*, Mat> analytic;
    {
        Tape t;
        Var loss = build_loss(t);
        t.backward(loss);
        for (Parameter* p : params) analytic[p] = p->grad;
        for (Parameter* p : params) p->zero_grad();
    }

    auto eval = [&]() {
        Tape t;
        return t.value(build_loss(t))(0, 0);
    };

    GradCheckReport report;
    for (Parameter* p : params) {
        const Mat& a = analytic[p];
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + h;
            const double up = eval();
            p->value.data()[i] = saved - h;
            const double down = eval();
            p->value.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(a.data()[i]), std::abs(numeric), 1e-4});
            const double rel = std::abs(a.data()[i] - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = p->name;
            }
        }
    }
    return report;
}

ToyFixture make_toy_fixture(std::uint64_t seed) {
    ToyFixture fx;
    fx.config.vocab_size = 24;
    fx.config.emb_dim = 8;
    fx.config.max_seq_len = 12;
    fx.config.gen = {2, 8, 2, 4};
    fx.config.disc = {2, 8, 2, 4};
    fx.model = std::make_unique<ModelParams>(fx.config);
    Rng rng(seed);
    fx.model->init(rng);

    std::uniform_int_distribution<int> tok(4, fx.config.vocab_size - 1);
    std::uniform_int_distribution<int> len(6, fx.config.max_seq_len);
    for (int k = 0; k < 3; ++k) {
        TokenSequence seq;
        seq.n_real = len(rng);
        seq.ids.assign(static_cast<std::size_t>(fx.config.max_seq_len), Vocab::pad_id);
        seq.ids[0] = Vocab::cls_id;
        for (int i = 1; i < seq.n_real; ++i) seq.ids[static_cast<std::size_t>(i)] = tok(rng);
        MaskedExample m = mask_sequence(seq, 0.25, rng);
        std::vector<int> sampled;
        for (std::size_t i = 0; i < m.mask_positions.size(); ++i) sampled.push_back(tok(rng));
        fx.corrupted.push_back(assemble_corrupted(m, sampled));
        fx.masked.push_back(std::move(m));
    }
    return fx;
}

// ---- sampling ----------------------------------------------------------

namespace {

CorruptedExample tiny_example() {
    CorruptedExample ex;
    ex.tokens = {Vocab::cls_id, 4};
    ex.original.ids = {Vocab::cls_id, 4};
    ex.original.n_real = 2;
    ex.n_real = 2;
    ex.mask_positions = {1};
    ex.labels = {TokenLabel::original, TokenLabel::original};
    return ex;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

std::vector<CheckResult> verify_sampling() {
    std::vector<CheckResult> results;
    const std::vector<double> weights = {1.0, 2.0, 3.0, 4.0};
    constexpr std::size_t draws = 1'000'000;
    constexpr std::size_t chunk = 4096;

    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
        ReplayBuffer buf(weights.size(), alpha);
        std::vector<std::uint64_t> ids;
        for (double w : weights) ids.push_back(buf.add(tiny_example(), w, 0).id);

        double denom = 0.0;
        for (double w : weights) denom += std::pow(w, alpha);

        Rng rng(derive_seed(7, static_cast<std::uint64_t>(alpha * 64)));
        std::map<std::uint64_t, std::size_t> counts;
        std::size_t done = 0;
        while (done < draws) {
            const std::size_t k = std::min(chunk, draws - done);
            auto sampled = buf.sample(k, rng);
            for (const auto& s : *sampled) ++counts[s.id];
            done += k;
        }

        double worst = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            const double expected = std::pow(weights[i], alpha) / denom;
            const double freq = static_cast<double>(counts[ids[i]]) / static_cast<double>(draws);
            worst = std::max(worst, std::abs(freq - expected));
        }
        std::ostringstream name;
        name << "sampling-law alpha=" << alpha;
        results.push_back({name.str(),
                           "max |freq - P(i)| = " + format_double(worst) + " over 1e6 draws (tol 0.01)",
                           worst < 0.01});
    }
    return results;
}

// ---- buffer complexity and eviction --------------------------------------

std::vector<CheckResult> verify_buffer() {
    std::vector<CheckResult> results;

    bool complexity_ok = true;
    std::ostringstream detail;
    for (std::size_t n : {16u, 64u, 256u, 1024u, 4096u, 16384u, 65536u}) {
        const int expected = static_cast<int>(std::ceil(std::log2(static_cast<double>(n)))) + 1;
        ReplayBuffer buf(n, 1.0);
        Rng rng(11);
        std::vector<std::uint64_t> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back(buf.add(tiny_example(), 1.0 + (i % 7), 0).id);

        const int add_visits = buf.tree().last_op_node_visits();
        buf.update(ids[n / 2], 3.5);
        const int update_visits = buf.tree().last_op_node_visits();
        buf.sample(1, rng);
        const int sample_visits = buf.tree().last_op_node_visits();

        if (add_visits != expected || update_visits != expected || sample_visits != expected)
            complexity_ok = false;
        detail << "N=" << n << ":" << add_visits << "/" << update_visits << "/" << sample_visits << " ";
    }
    {
        std::ostringstream d;
        d << detail.str() << "(expected ceil(log2 N)+1 for add/update/sample)";
        results.push_back({"buffer-complexity", d.str(), complexity_ok});
    }

    // Randomized eviction audit against a shadow map.
    constexpr std::size_t capacity = 64;
    constexpr int ops = 10'000;
    ReplayBuffer buf(capacity, 1.0);
    Rng rng(13);
    std::uniform_real_distribution<double> weight(0.0, 10.0);
    std::uniform_int_distribution<int> op(0, 2);
    std::map<std::uint64_t, std::pair<double, long>> shadow;  // id -> (weight, insert_step)
    bool eviction_ok = true;
    std::size_t evictions = 0;
    for (int i = 0; i < ops && eviction_ok; ++i) {
        if (shadow.empty() || op(rng) != 0) {
            const double w = weight(rng);
            const long step = i;
            AddResult r = buf.add(tiny_example(), w, step);
            if (r.evicted_id.has_value()) {
                ++evictions;
                // Victim must be minimal by (weight, insert_step, id).
                std::uint64_t best = shadow.begin()->first;
                for (const auto& [id, ws] : shadow) {
                    const auto& [bw, bs] = shadow.at(best);
                    if (std::tie(ws.first, ws.second, id) < std::tie(bw, bs, best)) best = id;
                }
                if (*r.evicted_id != best) eviction_ok = false;
                shadow.erase(*r.evicted_id);
            }
            shadow[r.id] = {w, step};
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, shadow.size() - 1);
            auto it = shadow.begin();
            std::advance(it, pick(rng));
            const double w = weight(rng);
            buf.update(it->first, w);
            it->second.first = w;
        }
        if (buf.live_count() > capacity) eviction_ok = false;
        if (buf.live_count() != shadow.size()) eviction_ok = false;
    }
    results.push_back({"buffer-eviction",
                       std::to_string(ops) + " randomized ops, " + std::to_string(evictions) +
                           " evictions, capacity-64 respected, victims min-weight oldest-first",
                       eviction_ok});
    return results;
}

// ---- gradients -----------------------------------------------------------

std::vector<CheckResult> verify_gradients() {
    std::vector<CheckResult> results;
    constexpr double tol = 1e-4;
    constexpr double lambda = 50.0;

    ToyFixture fx = make_toy_fixture(21);
    ModelParams& model = *fx.model;
    auto params = model.all_params();

    auto gen_loss = [&](Tape& t) { return forward_generator(t, model, fx.masked).loss; };
    auto disc_loss = [&](Tape& t) {
        std::vector<const CorruptedExample*> batch;
        for (const auto& ex : fx.corrupted) batch.push_back(&ex);
        return ad::scale(t, forward_discriminator(t, model, batch).loss, lambda);
    };
    auto combined_loss = [&](Tape& t) { return ad::add(t, gen_loss(t), disc_loss(t)); };

    {
        auto r = finite_difference_check(params, gen_loss);
        results.push_back({"grad-generator-loss",
                           "max rel err " + format_double(r.max_rel_error) + " at " + r.worst_param +
                               " (tol 1e-4)",
                           r.max_rel_error < tol});
    }
    {
        auto r = finite_difference_check(params, disc_loss);
        results.push_back({"grad-discriminator-loss",
                           "max rel err " + format_double(r.max_rel_error) + " at " + r.worst_param +
                               " (tol 1e-4)",
                           r.max_rel_error < tol});
    }
    {
        auto r = finite_difference_check(params, combined_loss);
        results.push_back({"grad-combined-loss",
                           "max rel err " + format_double(r.max_rel_error) + " at " + r.worst_param +
                               " (tol 1e-4)",
                           r.max_rel_error < tol});
    }
    {
        Parameter head("probe/head_w", 2, fx.config.disc.hidden);
        Rng rng(5);
        std::normal_distribution<double> normal(0.0, 0.5);
        for (Eigen::Index i = 0; i < head.value.size(); ++i) head.value.data()[i] = normal(rng);
        auto probe_loss = [&](Tape& t) {
            std::vector<Var> losses;
            for (std::size_t k = 0; k < fx.corrupted.size(); ++k) {
                auto fwd = discriminator_forward_example(t, model, fx.corrupted[k].tokens,
                                                         fx.corrupted[k].n_real);
                Var h_cls = ad::gather_rows(t, fwd.hidden, {0});
                Var logits = ad::matmul_nt(t, h_cls, t.leaf(head));
                Var log_probs = ad::log_softmax_rows(t, logits);
                losses.push_back(ad::nll_mean(t, log_probs, {static_cast<int>(k % 2)}));
            }
            return ad::mean_scalars(t, losses);
        };
        auto probe_params = model.discriminator_params();
        probe_params.push_back(&model.embedding);
        probe_params.push_back(&head);
        auto r = finite_difference_check(probe_params, probe_loss);
        results.push_back({"grad-probe-loss",
                           "max rel err " + format_double(r.max_rel_error) + " at " + r.worst_param +
                               " (tol 1e-4)",
                           r.max_rel_error < tol});
    }
    {
        // The corruption sampling is a tape boundary: the discriminator loss
        // must leave every generator-tower parameter at exactly zero gradient.
        model.zero_grads();
        Tape t;
        t.backward(disc_loss(t));
        double max_abs = 0.0;
        for (Parameter* p : model.generator_params())
            max_abs = std::max(max_abs, p->grad.cwiseAbs().maxCoeff());
        model.zero_grads();
        results.push_back({"grad-stopped-generator",
                           "max |dL_D/d(theta_G)| = " + format_double(max_abs) + " (must be exactly 0)",
                           max_abs == 0.0});
    }
    {
        // Shared-embedding gradient splits additively across the two paths.
        model.zero_grads();
        Tape t1;
        t1.backward(gen_loss(t1));
        Mat g_gen = model.embedding.grad;
        model.zero_grads();
        Tape t2;
        t2.backward(disc_loss(t2));
        Mat g_disc = model.embedding.grad;
        model.zero_grads();
        Tape t3;
        t3.backward(combined_loss(t3));
        const double diff = (model.embedding.grad - (g_gen + g_disc)).cwiseAbs().maxCoeff();
        model.zero_grads();
        results.push_back({"grad-embedding-additivity",
                           "max |combined - (gen + disc)| = " + format_double(diff) + " (tol 1e-12)",
                           diff < 1e-12});
    }
    return results;
}

// ---- drift ----------------------------------------------------------------

std::vector<CheckResult> verify_drift(const Config& cfg) {
    std::vector<CheckResult> results;

    TrainConfig tc = TrainConfig::from_config(cfg);
    Vocab vocab = Vocab::build(tc.corpus, static_cast<std::size_t>(tc.max_vocab));
    std::vector<TokenSequence> windows = load_corpus_windows(vocab, tc.corpus, tc.model.max_seq_len);
    Trainer trainer(tc, vocab, std::move(windows));

    constexpr std::size_t eval_positions = 10'000;
    const double v = static_cast<double>(vocab.size());
    const double uniform_p = 1.0 / v;
    const double rec0 = trainer.drift_metric(eval_positions);
    const double se = std::sqrt(uniform_p * (1.0 - uniform_p) / static_cast<double>(eval_positions));
    const double dev0 = std::abs(rec0 - uniform_p);
    results.push_back({"drift-step0-uniform",
                       "recovery " + format_double(rec0) + " vs 1/V=" + format_double(uniform_p) +
                           ", |diff| " + format_double(dev0) + " <= 3 SE (" + format_double(3 * se) + ")",
                       dev0 <= 3.0 * se});

    for (long s = 0; s < tc.steps; ++s) trainer.pretrain_step();
    const double rec1 = trainer.drift_metric(eval_positions);
    results.push_back({"drift-trained-recovery",
                       "recovery " + format_double(rec1) + " after " + std::to_string(tc.steps) +
                           " steps vs " + format_double(rec0) + " at step 0 (need >= 5x)",
                       rec1 >= 5.0 * rec0});
    return results;
}

}  // namespace tmr
