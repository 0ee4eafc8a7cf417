#include "tmr/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tmr/adam.hpp"
#include "tmr/checkpoint.hpp"

namespace tmr {

void ProbeTask::validate() const {
    if (train.empty() || dev.empty()) throw std::runtime_error("probe task: both splits must be nonempty");
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    for (const auto& item : train) {
        if (item.label < 0 || item.label >= num_classes)
            throw std::runtime_error("probe task: label out of range");
        seen[static_cast<std::size_t>(item.label)] = true;
    }
    for (bool s : seen)
        if (!s) throw std::runtime_error("probe task: every class must appear in the train split");
}

ProbeTask ProbeTask::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open probe task: " + path.string());
    std::vector<Item> items;
    std::string line;
    int max_label = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("malformed task line: " + line);
        Item item;
        item.label = std::stoi(line.substr(0, tab));
        item.text = line.substr(tab + 1);
        max_label = std::max(max_label, item.label);
        items.push_back(std::move(item));
    }
    ProbeTask task;
    task.num_classes = max_label + 1;
    const std::size_t dev_from = items.size() - items.size() / 5;
    task.train.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(dev_from));
    task.dev.assign(items.begin() + static_cast<std::ptrdiff_t>(dev_from), items.end());
    task.validate();
    return task;
}

void ProbeTask::save_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write probe task: " + path.string());
    for (const auto& item : train) out << item.label << '\t' << item.text << '\n';
    for (const auto& item : dev) out << item.label << '\t' << item.text << '\n';
}

ProbeTask make_bundled_task(const Vocab& vocab, const std::vector<TokenSequence>& windows,
                            std::uint64_t seed, int train_per_class, int dev_per_class) {
    if (windows.empty()) throw std::invalid_argument("make_bundled_task: no corpus windows");
    if (vocab.size() < 8) throw std::invalid_argument("make_bundled_task: vocabulary too small");

    // Sentinels are the two rarest vocabulary words; they get scrubbed from the
    // base sentences so class labels stay exact.
    const int sentinel_a = vocab.size() - 1;
    const int sentinel_b = vocab.size() - 2;
    const int filler = 4;  // most frequent real token

    Rng rng(derive_seed(seed, seed_stream::probe));
    std::uniform_int_distribution<std::size_t> pick_window(0, windows.size() - 1);

    auto make_item = [&](int label) {
        const TokenSequence& base = windows[pick_window(rng)];
        std::vector<int> toks;
        for (int i = 1; i < base.n_real; ++i) {
            int id = base.ids[static_cast<std::size_t>(i)];
            if (id == sentinel_a || id == sentinel_b || id == Vocab::unk_id) id = filler;
            toks.push_back(id);
        }
        if (toks.size() < 3) toks.resize(3, filler);
        std::uniform_int_distribution<std::size_t> pick_pos(0, toks.size() - 1);
        if (label == 1) {
            std::size_t pa = pick_pos(rng), pb = pick_pos(rng);
            while (pb == pa) pb = pick_pos(rng);
            toks[pa] = sentinel_a;
            toks[pb] = sentinel_b;
        } else {
            std::uniform_int_distribution<int> which(0, 1);
            toks[pick_pos(rng)] = which(rng) == 0 ? sentinel_a : sentinel_b;
        }
        std::ostringstream text;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (i) text << ' ';
            text << vocab.decode_token(toks[i]);
        }
        return ProbeTask::Item{label, text.str()};
    };

    ProbeTask task;
    task.num_classes = 2;
    for (int i = 0; i < train_per_class; ++i) {
        task.train.push_back(make_item(0));
        task.train.push_back(make_item(1));
    }
    for (int i = 0; i < dev_per_class; ++i) {
        task.dev.push_back(make_item(0));
        task.dev.push_back(make_item(1));
    }
    task.validate();
    return task;
}

Var classify_loss(Tape& t, Var h_cls, Parameter& head_w, int label) {
    Var logits = ad::matmul_nt(t, h_cls, t.leaf(head_w));  // 1 x C
    Var log_probs = ad::log_softmax_rows(t, logits);
    return ad::nll_mean(t, log_probs, {label});
}

namespace {

TokenSequence encode_item(const Vocab& vocab, const std::string& text, int max_seq_len) {
    auto windows = encode_windows(vocab, text, max_seq_len);
    if (windows.empty()) throw std::runtime_error("probe item encodes to an empty sequence");
    return windows.front();  // truncate long items to one window
}

struct ProbeModel {
    std::unique_ptr<ModelParams> model;
    Parameter head;
    ProbeModel(std::unique_ptr<ModelParams> m, int num_classes)
        : model(std::move(m)), head("probe/head_w", num_classes, model->config.disc.hidden) {}
};

Var item_loss(Tape& t, ProbeModel& pm, const TokenSequence& seq, int label) {
    auto fwd = discriminator_forward_example(t, *pm.model, seq.ids, seq.n_real);
    Var h_cls = ad::gather_rows(t, fwd.hidden, {0});
    return classify_loss(t, h_cls, pm.head, label);
}

int item_prediction(Tape& t, ProbeModel& pm, const TokenSequence& seq) {
    auto fwd = discriminator_forward_example(t, *pm.model, seq.ids, seq.n_real);
    Var h_cls = ad::gather_rows(t, fwd.hidden, {0});
    Var logits = ad::matmul_nt(t, h_cls, t.leaf(pm.head));
    Eigen::Index best = 0;
    t.value(logits).row(0).maxCoeff(&best);
    return static_cast<int>(best);
}

}  // namespace

FineTuneResult fine_tune(const std::filesystem::path& ckpt_stem, const Vocab& vocab,
                         const ProbeTask& task, int epochs, double lr, std::uint64_t seed) {
    task.validate();
    LoadedCheckpoint loaded = load_checkpoint(ckpt_stem);
    ProbeModel pm(std::move(loaded.model), task.num_classes);
    const int max_seq_len = pm.model->config.max_seq_len;

    Rng head_rng(derive_seed(seed, seed_stream::model_init));
    std::normal_distribution<double> normal(0.0, 0.02);
    for (Eigen::Index i = 0; i < pm.head.value.size(); ++i) pm.head.value.data()[i] = normal(head_rng);

    std::vector<TokenSequence> train_seqs, dev_seqs;
    for (const auto& item : task.train) train_seqs.push_back(encode_item(vocab, item.text, max_seq_len));
    for (const auto& item : task.dev) dev_seqs.push_back(encode_item(vocab, item.text, max_seq_len));

    // Body plus head end to end; the generator tower stays untouched.
    std::vector<Parameter*> trainable = pm.model->discriminator_params();
    trainable.push_back(&pm.model->embedding);
    trainable.push_back(&pm.head);
    AdamConfig acfg;
    acfg.lr = lr;
    acfg.warmup_steps = 0;
    Adam adam(trainable, acfg);

    Rng shuffle_rng(derive_seed(seed, seed_stream::probe));
    std::vector<std::size_t> order(task.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    constexpr std::size_t batch_size = 8;
    FineTuneResult result;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += batch_size) {
            const std::size_t end = std::min(order.size(), at + batch_size);
            for (Parameter* p : trainable) p->zero_grad();
            Tape t;
            std::vector<Var> losses;
            for (std::size_t i = at; i < end; ++i)
                losses.push_back(item_loss(t, pm, train_seqs[order[i]], task.train[order[i]].label));
            Var loss = ad::mean_scalars(t, losses);
            t.backward(loss);
            adam.step();
            epoch_loss += t.value(loss)(0, 0);
            ++batches;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < dev_seqs.size(); ++i) {
        Tape t;
        if (item_prediction(t, pm, dev_seqs[i]) == task.dev[i].label) ++correct;
    }
    result.dev_accuracy = static_cast<double>(correct) / static_cast<double>(dev_seqs.size());
    return result;
}

std::vector<CompareRow> compare_checkpoints(const std::vector<std::filesystem::path>& ckpt_stems,
                                            const Vocab& vocab, const ProbeTask& task,
                                            const std::vector<std::uint64_t>& seeds, int epochs,
                                            double lr, int jobs) {
    if (ckpt_stems.empty()) throw std::invalid_argument("compare_checkpoints: no checkpoints");
    if (seeds.empty()) throw std::invalid_argument("compare_checkpoints: no seeds");

    struct Job {
        std::size_t ckpt;
        std::size_t seed;
    };
    std::vector<Job> queue;
    for (std::size_t c = 0; c < ckpt_stems.size(); ++c)
        for (std::size_t s = 0; s < seeds.size(); ++s) queue.push_back({c, s});

    std::vector<std::vector<double>> acc(ckpt_stems.size(), std::vector<double>(seeds.size(), 0.0));
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            Job job{};
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= queue.size()) return;
                job = queue[next++];
            }
            const double a =
                fine_tune(ckpt_stems[job.ckpt], vocab, task, epochs, lr, seeds[job.seed]).dev_accuracy;
            std::lock_guard<std::mutex> lock(mu);
            acc[job.ckpt][job.seed] = a;
        }
    };
    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(queue.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }

    std::vector<CompareRow> rows;
    for (std::size_t c = 0; c < ckpt_stems.size(); ++c) {
        LoadedCheckpoint loaded = load_checkpoint(ckpt_stems[c]);  // metadata only
        CompareRow row;
        auto it = loaded.meta.extra.find("mode");
        row.mode = it == loaded.meta.extra.end() ? "?" : it->second;
        row.pretrain_step = loaded.meta.step;
        row.n_seeds = static_cast<int>(seeds.size());
        double sum = 0.0;
        for (double a : acc[c]) sum += a;
        row.mean_acc = sum / static_cast<double>(seeds.size());
        double sq = 0.0;
        for (double a : acc[c]) sq += (a - row.mean_acc) * (a - row.mean_acc);
        row.std_acc = seeds.size() > 1 ? std::sqrt(sq / static_cast<double>(seeds.size() - 1)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string compare_table_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream out;
    out << "mode,pretrain_step,mean_acc,std_acc,n_seeds\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.mode << ',' << r.pretrain_step << ',' << r.mean_acc << ',' << r.std_acc << ','
            << r.n_seeds << '\n';
    return out.str();
}

}  // namespace tmr
