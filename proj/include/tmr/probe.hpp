#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tmr/model.hpp"
#include "tmr/text.hpp"

namespace tmr {

/// Labeled text-classification task; the TSV holds "label<TAB>text" lines and
/// the last fifth of the file is the dev split.
struct ProbeTask {
    struct Item {
        int label = 0;
        std::string text;
    };
    std::vector<Item> train, dev;
    int num_classes = 2;

    static ProbeTask load_tsv(const std::filesystem::path& path);
    void save_tsv(const std::filesystem::path& path) const;
    void validate() const;
};

/// Synthetic token-pattern task over the pretraining vocabulary: class 1 means
/// both sentinel tokens occur in the sentence, class 0 exactly one. Bases are
/// real corpus windows with the sentinels scrubbed first, so labels are clean.
ProbeTask make_bundled_task(const Vocab& vocab, const std::vector<TokenSequence>& windows,
                            std::uint64_t seed, int train_per_class, int dev_per_class);

/// Cross-entropy of the classifier head on a CLS representation:
/// -log softmax(h W^T)[label].
Var classify_loss(Tape& t, Var h_cls, Parameter& head_w, int label);

struct FineTuneResult {
    double dev_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

/// Load a checkpoint and fine-tune the discriminator body plus a fresh head.
/// Generator parameters are never read (their tape read counters stay at 0).
FineTuneResult fine_tune(const std::filesystem::path& ckpt_stem, const Vocab& vocab,
                         const ProbeTask& task, int epochs, double lr, std::uint64_t seed);

struct CompareRow {
    std::string mode;
    long pretrain_step = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    int n_seeds = 0;
};

/// Fine-tune every checkpoint over the given seeds; rows come back in the
/// order the checkpoints were listed. `jobs` bounds parallel workers.
std::vector<CompareRow> compare_checkpoints(const std::vector<std::filesystem::path>& ckpt_stems,
                                            const Vocab& vocab, const ProbeTask& task,
                                            const std::vector<std::uint64_t>& seeds, int epochs,
                                            double lr, int jobs);

std::string compare_table_csv(const std::vector<CompareRow>& rows);

}  // namespace tmr
