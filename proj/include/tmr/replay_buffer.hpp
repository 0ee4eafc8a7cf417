#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tmr/rng.hpp"
#include "tmr/sum_tree.hpp"
#include "tmr/text.hpp"

namespace tmr {

struct BufferEntry {
    std::uint64_t id = 0;
    CorruptedExample example;
    double weight = 0.0;
    long insert_step = 0;
    long sample_count = 0;
    std::optional<double> last_loss;  // tracked for the loss-difference strategy
};

struct BufferStats {
    double mean_weight = 1.0;  // defined as 1.0 for an empty buffer
    double min_weight = 0.0;
    double max_weight = 0.0;
    std::size_t live_count = 0;
};

struct AddResult {
    std::uint64_t id = 0;
    std::optional<std::uint64_t> evicted_id;
};

struct SampledEntry {
    std::uint64_t id = 0;
    CorruptedExample example;
    double probability = 0.0;  // exact P(i) at draw time
};

enum class UpdateResult { updated, stale };

/// Fixed-capacity prioritized store. Each entry carries a nonnegative weight
/// w; the sum tree holds w^alpha per slot so a draw costs O(log N) and the
/// probability of drawing entry i is w_i^alpha / sum_j w_j^alpha. A full
/// buffer evicts the entry with the lowest raw weight (oldest first on ties)
/// before accepting a new one.
///
/// Single-writer: all mutating calls belong to the training thread.
class ReplayBuffer {
  public:
    ReplayBuffer(std::size_t capacity, double alpha, bool priority_floor = false);

    std::size_t capacity() const { return capacity_; }
    std::size_t live_count() const { return live_; }
    double alpha() const { return alpha_; }
    double total_priority() const { return tree_.total(); }
    const SumTree& tree() const { return tree_; }

    /// Insert an example, evicting the minimum-weight entry if full.
    AddResult add(CorruptedExample example, double init_weight, long step);

    /// Replace the weight of a live entry; stale ids report UpdateResult::stale
    /// and leave the buffer untouched (the entry may have been evicted between
    /// sampling and update).
    UpdateResult update(std::uint64_t id, double new_weight);

    /// k independent weight-proportional draws with replacement. Returns
    /// nullopt while the buffer is empty or all priorities are zero.
    std::optional<std::vector<SampledEntry>> sample(std::size_t k, Rng& rng);

    BufferStats stats() const;

    const BufferEntry* find(std::uint64_t id) const;
    BufferEntry* find(std::uint64_t id);

    template <class F>
    void for_each_live(F&& fn) const {
        for (const auto& slot : slots_)
            if (slot.has_value()) fn(*slot);
    }

    /// Rebuild contents from checkpointed entries (ids and counters kept).
    void restore(std::vector<BufferEntry> entries, std::uint64_t next_id);
    std::uint64_t next_id() const { return next_id_; }

    // Op counters (baseline mode asserts these stay at zero).
    std::uint64_t add_count() const { return add_count_; }
    std::uint64_t draw_count() const { return draw_count_; }
    std::uint64_t update_count() const { return update_count_; }
    std::uint64_t stale_update_count() const { return stale_update_count_; }
    std::uint64_t eviction_count() const { return eviction_count_; }

  private:
    double priority_of(double weight) const;
    void place(std::size_t slot, BufferEntry entry);
    std::uint64_t evict_min();

    std::size_t capacity_;
    double alpha_;
    bool priority_floor_;
    std::vector<std::optional<BufferEntry>> slots_;
    std::vector<std::size_t> free_slots_;
    std::unordered_map<std::uint64_t, std::size_t> slot_of_;
    // Eviction order: raw weight, then insert_step, then id (all ascending).
    std::set<std::tuple<double, long, std::uint64_t>> eviction_order_;
    SumTree tree_;
    std::size_t live_ = 0;
    std::uint64_t next_id_ = 0;

    std::uint64_t add_count_ = 0;
    std::uint64_t draw_count_ = 0;
    std::uint64_t update_count_ = 0;
    std::uint64_t stale_update_count_ = 0;
    std::uint64_t eviction_count_ = 0;
};

}  // namespace tmr
