#include "tmr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tmr/checkpoint.hpp"

namespace tmr {

TrainMode parse_mode(const std::string& s) {
    if (s == "tmr") return TrainMode::tmr;
    if (s == "electra_baseline") return TrainMode::electra_baseline;
    throw ConfigError("unknown mode: " + s + " (expected tmr | electra_baseline)");
}

std::string to_string(TrainMode m) {
    return m == TrainMode::tmr ? "tmr" : "electra_baseline";
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig tc;
    tc.mode = parse_mode(cfg.get("mode"));
    tc.corpus = cfg.get("corpus");
    tc.out_dir = cfg.get("out_dir");
    tc.seed = static_cast<std::uint64_t>(cfg.get_long("seed"));
    tc.steps = cfg.get_long("steps");
    tc.batch_size = cfg.get_int("batch_size");
    tc.buffer_capacity = static_cast<std::size_t>(cfg.get_long("buffer_capacity"));
    tc.lambda = cfg.get_double("lambda");
    tc.mask_rate = cfg.get_double("mask_rate");
    tc.alpha = cfg.get_double("alpha");
    tc.priority_floor = cfg.get_bool("priority_floor");
    tc.max_vocab = cfg.get_int("max_vocab");
    tc.strategy.init_kind = parse_init_kind(cfg.get("init_strategy"));
    tc.strategy.update_kind = parse_update_kind(cfg.get("update_strategy"));
    tc.strategy.ridge = cfg.get_double("ridge");
    tc.strategy.ucb_alpha = cfg.get_double("ucb_alpha");
    tc.strategy.feature_dim = cfg.get_int("max_seq_len");
    tc.strategy.lsr_refit_every = cfg.get_long("lsr_refit_every");
    tc.model.emb_dim = cfg.get_int("emb_dim");
    tc.model.max_seq_len = cfg.get_int("max_seq_len");
    tc.model.gen = {cfg.get_int("gen_layers"), cfg.get_int("gen_hidden"), cfg.get_int("gen_heads"), 4};
    tc.model.disc = {cfg.get_int("disc_layers"), cfg.get_int("disc_hidden"), cfg.get_int("disc_heads"), 4};
    tc.model.dropout = cfg.get_double("dropout");
    tc.adam.lr = cfg.get_double("lr");
    tc.adam.warmup_steps = cfg.get_long("warmup_steps");
    tc.eval_every = cfg.get_long("eval_every");
    tc.checkpoint_every = cfg.get_long("checkpoint_every");
    tc.drift_eval_positions = cfg.get_int("drift_eval_positions");
    tc.validate();
    return tc;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (steps < 0) throw ConfigError("steps must be nonnegative");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0,1)");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be positive");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (drift_eval_positions < 1) throw ConfigError("drift_eval_positions must be positive");
    strategy.validate();
    if (mode == TrainMode::tmr && buffer_capacity < static_cast<std::size_t>(batch_size))
        std::cerr << "warning: buffer_capacity < batch_size; the buffer can never warm up and "
                     "training will keep falling back to fresh batches\n";
}

Trainer::Trainer(TrainConfig cfg, Vocab vocab, std::vector<TokenSequence> windows)
    : cfg_(std::move(cfg)),
      vocab_(std::move(vocab)),
      windows_(std::move(windows)),
      model_([&] {
          ModelConfig mc = cfg_.model;
          mc.vocab_size = vocab_.size();
          return mc;
      }()),
      adam_(model_.all_params(), cfg_.adam),
      data_rng_(derive_seed(cfg_.seed, seed_stream::data)),
      gen_rng_(derive_seed(cfg_.seed, seed_stream::generator)),
      buffer_rng_(derive_seed(cfg_.seed, seed_stream::buffer)) {
    if (windows_.empty()) throw std::invalid_argument("Trainer: no corpus windows");
    Rng init_rng(derive_seed(cfg_.seed, seed_stream::model_init));
    model_.init(init_rng);
    if (cfg_.mode == TrainMode::tmr) {
        buffer_.emplace(cfg_.buffer_capacity, cfg_.alpha, cfg_.priority_floor);
        if (cfg_.strategy.init_kind == InitKind::linucb)
            linucb_.emplace(cfg_.strategy.feature_dim);
    }
}

std::vector<MaskedExample> Trainer::draw_masked_batch() {
    std::uniform_int_distribution<std::size_t> pick(0, windows_.size() - 1);
    std::vector<MaskedExample> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int k = 0; k < cfg_.batch_size; ++k) {
        const TokenSequence& seq = windows_[pick(data_rng_)];
        batch.push_back(mask_sequence(seq, cfg_.mask_rate, data_rng_));
    }
    return batch;
}

double Trainer::initial_weight(const CorruptedExample& ex) {
    const BufferStats stats = buffer_->stats();
    switch (cfg_.strategy.init_kind) {
        case InitKind::average:
            return init_weight_average(stats);
        case InitKind::lsr: {
            const auto x = example_features(ex, vocab_.size(), cfg_.strategy.feature_dim);
            const InitOutcome out = lsr_init_weight(lsr_, x, stats);
            if (out.used_fallback && !lsr_fallback_logged_) {
                std::cerr << "note: lsr initializer unfitted, falling back to buffer average until "
                             "the first refit\n";
                lsr_fallback_logged_ = true;
            }
            return out.weight;
        }
        case InitKind::linucb: {
            const auto x = example_features(ex, vocab_.size(), cfg_.strategy.feature_dim);
            return linucb_init_weight(*linucb_, x, cfg_.strategy.ucb_alpha);
        }
    }
    return stats.mean_weight;
}

void Trainer::apply_weight_updates(const std::vector<SampledEntry>& draws,
                                   const std::vector<double>& sampled_losses, StepMetrics& metrics) {
    metrics.update_attempts += draws.size();

    // One weight refresh per distinct entry per iteration; repeated draws of
    // the same entry within a batch share the same feedback anyway.
    std::vector<std::size_t> first_draw;
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < draws.size(); ++i)
        if (seen.insert(draws[i].id).second) first_draw.push_back(i);

    // Exact per-example norms and the pre-activation bound are refreshed under
    // the post-step model, so both need their own per-example passes; the
    // loss-difference signal reuses the training-pass losses.
    std::vector<double> refreshed(draws.size(), 0.0);
    if (cfg_.strategy.update_kind == UpdateKind::grad_norm) {
        std::vector<const CorruptedExample*> batch;
        batch.reserve(draws.size());
        for (const auto& d : draws) batch.push_back(&d.example);
        const std::vector<double> norms = per_example_grad_norms(model_, batch);
        for (std::size_t i = 0; i < draws.size(); ++i) refreshed[i] = update_weight_grad_norm(norms[i]);
    } else if (cfg_.strategy.update_kind == UpdateKind::grad_bound) {
        for (std::size_t i = 0; i < draws.size(); ++i) {
            Tape t;
            auto fwd = discriminator_forward_example(t, model_, draws[i].example.tokens,
                                                     draws[i].example.n_real);
            refreshed[i] =
                update_weight_grad_bound(discriminator_logit_grads(fwd.probs, draws[i].example.labels));
        }
    }

    for (std::size_t i : first_draw) {
        const SampledEntry& draw = draws[i];
        BufferEntry* entry = buffer_->find(draw.id);
        const double curr_loss = sampled_losses[i];

        std::optional<double> new_weight;
        switch (cfg_.strategy.update_kind) {
            case UpdateKind::loss_diff:
                new_weight = update_weight_loss_diff(entry ? entry->last_loss : std::nullopt, curr_loss);
                break;
            case UpdateKind::grad_norm:
            case UpdateKind::grad_bound:
                new_weight = refreshed[i];
                break;
        }

        // Reward for the bandit initializer: |loss delta| scaled by its
        // running maximum, observable from the second sampling onward.
        if (linucb_ && entry && entry->last_loss.has_value()) {
            const double raw = std::abs(curr_loss - *entry->last_loss);
            linucb_reward_max_ = std::max(linucb_reward_max_, raw);
            const double reward = linucb_reward_max_ > 0.0 ? raw / linucb_reward_max_ : 0.0;
            linucb_observe(*linucb_, example_features(draw.example, vocab_.size(),
                                                      cfg_.strategy.feature_dim), reward);
        }

        if (entry) entry->last_loss = curr_loss;
        if (new_weight.has_value()) {
            if (buffer_->update(draw.id, *new_weight) == UpdateResult::stale) ++metrics.stale_updates;
        } else if (!entry) {
            ++metrics.stale_updates;
        }
    }
}

StepMetrics Trainer::pretrain_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t backward_before = ad::backward_invocations();
    ++step_;
    StepMetrics metrics;
    metrics.step = step_;

    model_.zero_grads();

    // (1)-(2) draw and mask a fresh batch
    const std::vector<MaskedExample> masked = draw_masked_batch();

    // (3) generator forward and loss
    Tape tape;
    GeneratorBatch gen = forward_generator(tape, model_, masked,
                                           derive_seed(cfg_.seed, 100 + static_cast<std::uint64_t>(step_)));

    // (4) sample replacements and assemble the fresh corrupted batch
    std::vector<CorruptedExample> fresh;
    fresh.reserve(masked.size());
    for (std::size_t k = 0; k < masked.size(); ++k) {
        const auto sampled = sample_replacements(tape.value(gen.examples[k].log_probs), gen_rng_);
        fresh.push_back(assemble_corrupted(masked[k], sampled));
    }
    double fresh_replaced = 0.0;
    for (const auto& ex : fresh) fresh_replaced += replaced_fraction(ex);
    metrics.fresh_replaced_fraction = fresh_replaced / static_cast<double>(fresh.size());

    // (5) buffer adds, then draw the discriminator batch
    std::vector<SampledEntry> draws;
    bool replayed = false;
    if (cfg_.mode == TrainMode::tmr) {
        const bool cold = buffer_->live_count() < static_cast<std::size_t>(cfg_.batch_size) ||
                          !(buffer_->total_priority() > 0.0);
        for (const auto& ex : fresh) buffer_->add(ex, initial_weight(ex), step_);
        if (!cold) {
            auto sampled = buffer_->sample(static_cast<std::size_t>(cfg_.batch_size), buffer_rng_);
            if (sampled.has_value()) {
                draws = std::move(*sampled);
                replayed = true;
            }
        }
    }
    std::vector<const CorruptedExample*> disc_batch;
    disc_batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
    if (replayed) {
        long age_sum = 0;
        for (const auto& d : draws) {
            disc_batch.push_back(&d.example);
            const BufferEntry* e = buffer_->find(d.id);
            const long age = e ? step_ - e->insert_step : 0;
            age_sum += age;
            metrics.max_sampled_age = std::max(metrics.max_sampled_age, age);
        }
        metrics.mean_sampled_age = static_cast<double>(age_sum) / static_cast<double>(draws.size());
    } else {
        for (const auto& ex : fresh) disc_batch.push_back(&ex);
    }

    // (6) discriminator forward and loss; (7) one backward plus Adam
    metrics.loss_g = tape.value(gen.loss)(0, 0);
    std::vector<double> sampled_losses;
    if (!cfg_.skip_discriminator) {
        DiscriminatorBatch disc = forward_discriminator(
            tape, model_, disc_batch, derive_seed(cfg_.seed, 500 + static_cast<std::uint64_t>(step_)));
        metrics.loss_d = tape.value(disc.loss)(0, 0);
        Var combined = ad::add(tape, gen.loss, ad::scale(tape, disc.loss, cfg_.lambda));
        metrics.loss_combined = tape.value(combined)(0, 0);
        sampled_losses.reserve(disc.losses.size());
        for (Var v : disc.losses) sampled_losses.push_back(tape.value(v)(0, 0));
        tape.backward(combined);
    } else {
        metrics.loss_combined = metrics.loss_g;
        tape.backward(gen.loss);
    }
    if (!std::isfinite(metrics.loss_combined))
        throw std::runtime_error("non-finite loss at step " + std::to_string(step_));
    adam_.step();

    // (8) post-step weight refresh for the sampled entries
    if (replayed) apply_weight_updates(draws, sampled_losses, metrics);

    if (cfg_.mode == TrainMode::tmr && cfg_.strategy.init_kind == InitKind::lsr &&
        step_ % cfg_.strategy.lsr_refit_every == 0 && buffer_->live_count() > 0) {
        std::vector<std::pair<Eigen::VectorXd, double>> entries;
        entries.reserve(buffer_->live_count());
        buffer_->for_each_live([&](const BufferEntry& e) {
            entries.emplace_back(example_features(e.example, vocab_.size(), cfg_.strategy.feature_dim),
                                 e.weight);
        });
        lsr_ = lsr_fit(entries, cfg_.strategy.ridge);
        lsr_.fitted_at_step = step_;
    }

    if (step_ == 1 || step_ % cfg_.eval_every == 0) {
        last_drift_ = drift_metric(static_cast<std::size_t>(cfg_.drift_eval_positions));
        audit_buffer_labels();
    }
    metrics.drift_exact_recovery = last_drift_;

    if (buffer_) {
        const BufferStats stats = buffer_->stats();
        metrics.buffer_live = stats.live_count;
        metrics.buffer_mean_w = stats.mean_weight;
        metrics.buffer_min_w = stats.min_weight;
        metrics.buffer_max_w = stats.max_weight;
    }

    metrics.backward_calls = ad::backward_invocations() - backward_before;
    metrics.step_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

double Trainer::drift_metric(std::size_t min_masked_positions) {
    Rng eval_rng(derive_seed(cfg_.seed, seed_stream::drift_eval));
    std::uniform_int_distribution<std::size_t> pick(0, windows_.size() - 1);
    std::size_t masked_total = 0;
    std::size_t recovered = 0;
    while (masked_total < min_masked_positions) {
        const TokenSequence& seq = windows_[pick(eval_rng)];
        const MaskedExample m = mask_sequence(seq, cfg_.mask_rate, eval_rng);
        Tape t;
        const auto fwd = generator_forward_example(t, model_, m);
        const auto sampled = sample_replacements(t.value(fwd.log_probs), eval_rng);
        for (std::size_t i = 0; i < sampled.size(); ++i)
            if (sampled[i] == m.originals[i]) ++recovered;
        masked_total += sampled.size();
    }
    return static_cast<double>(recovered) / static_cast<double>(masked_total);
}

void Trainer::audit_buffer_labels() const {
    if (!buffer_) return;
    int audited = 0;
    buffer_->for_each_live([&](const BufferEntry& e) {
        if (audited >= 16) return;
        ++audited;
        if (compute_labels(e.example.tokens, e.example.original) != e.example.labels)
            throw std::logic_error("buffer audit: stored labels disagree with recomputation");
    });
}

namespace {

std::string csv_header() {
    return "step,loss_g,loss_d,loss_combined,drift_exact_recovery,fresh_replaced_fraction,"
           "buffer_live,buffer_mean_w,buffer_min_w,buffer_max_w,step_ms";
}

std::string csv_row(const StepMetrics& m) {
    std::ostringstream out;
    out.precision(17);
    out << m.step << ',' << m.loss_g << ',' << m.loss_d << ',' << m.loss_combined << ','
        << m.drift_exact_recovery << ',' << m.fresh_replaced_fraction << ',' << m.buffer_live << ','
        << m.buffer_mean_w << ',' << m.buffer_min_w << ',' << m.buffer_max_w << ',' << m.step_ms;
    return out.str();
}

CheckpointMeta make_meta(const Config& cfg, const Vocab& vocab, long step) {
    CheckpointMeta meta;
    meta.step = step;
    meta.config_hash = cfg.hash();
    meta.extra["mode"] = cfg.get("mode");
    meta.extra["vocab_size"] = std::to_string(vocab.size());
    for (const char* key : {"emb_dim", "max_seq_len", "gen_layers", "gen_hidden", "gen_heads",
                            "disc_layers", "disc_hidden", "disc_heads", "dropout"})
        meta.extra[key] = cfg.get(key);
    return meta;
}

double drift_slope(const std::vector<std::pair<long, double>>& points) {
    if (points.size() < 2) return 0.0;
    double sx = 0, sy = 0,
           sxx = 0, sxy = 0;
    for (auto [x, y] : points) {
        sx += static_cast<double>(x);
        sy += y;
        sxx += static_cast<double>(x) * static_cast<double>(x);
        sxy += static_cast<double>(x) * y;
    }
    const double n = static_cast<double>(points.size());
    const double denom = n * sxx - sx * sx;
    return denom == 0.0 ? 0.0 : (n * sxy - sx * sy) / denom;
}

void write_report_json(const std::filesystem::path& path, const Config& cfg, const RunReport& report) {
    nlohmann::json j;
    j["config"] = cfg.values();
    j["config_hash"] = report.config_hash;
    j["threads"] = report.threads;
    j["final_drift_slope"] = report.final_drift_slope;
    j["nan_step"] = report.nan_step;
    j["checkpoints"] = report.checkpoints;
    nlohmann::json series = nlohmann::json::array();
    for (const auto& m : report.series) {
        series.push_back({{"step", m.step},
                          {"loss_g", m.loss_g},
                          {"loss_d", m.loss_d},
                          {"loss_combined", m.loss_combined},
                          {"drift_exact_recovery", m.drift_exact_recovery},
                          {"fresh_replaced_fraction", m.fresh_replaced_fraction},
                          {"buffer_live", m.buffer_live},
                          {"buffer_mean_w", m.buffer_mean_w},
                          {"buffer_min_w", m.buffer_min_w},
                          {"buffer_max_w", m.buffer_max_w},
                          {"step_ms", m.step_ms},
                          {"mean_sampled_age", m.mean_sampled_age},
                          {"max_sampled_age", m.max_sampled_age},
                          {"backward_calls", m.backward_calls},
                          {"update_attempts", m.update_attempts},
                          {"stale_updates", m.stale_updates}});
    }
    j["series"] = std::move(series);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write run report: " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace

RunReport run_pretraining(const Config& cfg) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    std::filesystem::create_directories(tc.out_dir);

    Vocab vocab = Vocab::build(tc.corpus, static_cast<std::size_t>(tc.max_vocab));
    vocab.save(tc.out_dir / "vocab.tsv");
    std::vector<TokenSequence> windows = load_corpus_windows(vocab, tc.corpus, tc.model.max_seq_len);

    Trainer trainer(tc, vocab, std::move(windows));

    RunReport report;
    report.config_echo = cfg.echo();
    report.config_hash = cfg.hash();

    auto checkpoint_at = [&](long step) {
        std::ostringstream name;
        name << "ckpt_step" << std::setw(7) << std::setfill('0') << step;
        const std::filesystem::path stem = tc.out_dir / name.str();
        save_checkpoint(stem, trainer.model(), make_meta(cfg, trainer.vocab(), step), trainer.buffer());
        report.checkpoints.push_back(stem.string());
    };

    std::ofstream csv(tc.out_dir / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write metrics CSV in " + tc.out_dir.string());
    csv << csv_header() << "\n";

    checkpoint_at(0);

    std::vector<std::pair<long, double>> drift_points;
    try {
        for (long s = 0; s < tc.steps; ++s) {
            StepMetrics m = trainer.pretrain_step();
            report.series.push_back(m);
            csv << csv_row(m) << "\n";
            csv.flush();
            if (m.step == 1 || m.step % tc.eval_every == 0)
                drift_points.emplace_back(m.step, m.drift_exact_recovery);
            if (tc.checkpoint_every > 0 && m.step % tc.checkpoint_every == 0 && m.step != tc.steps)
                checkpoint_at(m.step);
        }
    } catch (const std::runtime_error&) {
        report.nan_step = trainer.current_step();
        write_report_json(tc.out_dir / "report.json", cfg, report);
        throw;
    }

    if (tc.steps > 0) checkpoint_at(tc.steps);
    report.final_drift_slope = drift_slope(drift_points);
    write_report_json(tc.out_dir / "report.json", cfg, report);
    return report;
}

BenchResult bench_strategies(const Config& tmpl, long iterations) {
    if (iterations < 1) throw ConfigError("bench iterations must be positive");

    struct Variant {
        const char* name;
        const char* mode;
        const char* update;
    };
    const Variant variants[] = {
        {"baseline", "electra_baseline", "loss_diff"},
        {"loss_diff", "tmr", "loss_diff"},
        {"grad_bound", "tmr", "grad_bound"},
        {"grad_norm", "tmr", "grad_norm"},
    };

    BenchResult result;
    for (const Variant& v : variants) {
        Config cfg = tmpl;
        cfg.set("mode", v.mode);
        cfg.set("update_strategy", v.update);

        TrainConfig tc = TrainConfig::from_config(cfg);
        tc.steps = iterations;
        Vocab vocab = Vocab::build(tc.corpus, static_cast<std::size_t>(tc.max_vocab));
        std::vector<TokenSequence> windows = load_corpus_windows(vocab, tc.corpus, tc.model.max_seq_len);
        Trainer trainer(tc, std::move(vocab), std::move(windows));

        ad::reset_backward_invocations();
        const auto t0 = std::chrono::steady_clock::now();
        for (long s = 0; s < iterations; ++s) trainer.pretrain_step();
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        BenchRow row;
        row.strategy = v.name;
        row.seconds_per_100_iters = seconds * 100.0 / static_cast<double>(iterations);
        row.backward_calls_per_step =
            static_cast<double>(ad::backward_invocations()) / static_cast<double>(iterations);
        result.rows.push_back(row);
    }

    const double t_base = result.rows[0].seconds_per_100_iters;
    const double t_ld = result.rows[1].seconds_per_100_iters;
    const double t_gb = result.rows[2].seconds_per_100_iters;
    const double t_gn = result.rows[3].seconds_per_100_iters;
    result.ordering_ok = t_gn > t_gb && t_gb > t_ld;
    result.loss_diff_ratio = t_ld / t_base;
    result.loss_diff_overhead_ok = result.loss_diff_ratio <= 1.10;
    return result;
}

}  // namespace tmr
