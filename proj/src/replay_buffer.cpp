#include "tmr/replay_buffer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tmr {

ReplayBuffer::ReplayBuffer(std::size_t capacity, double alpha, bool priority_floor)
    : capacity_(capacity), alpha_(alpha), priority_floor_(priority_floor),
      slots_(capacity), tree_(capacity == 0 ? 1 : capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument("ReplayBuffer: alpha must be finite and nonnegative");
    free_slots_.reserve(capacity);
    for (std::size_t i = capacity; i-- > 0;) free_slots_.push_back(i);
}

double ReplayBuffer::priority_of(double weight) const {
    const double w = priority_floor_ ? std::max(weight, 1e-8) : weight;
    return std::pow(w, alpha_);  // pow(0, 0) == 1, so alpha=0 keeps every entry sampleable
}

void ReplayBuffer::place(std::size_t slot, BufferEntry entry) {
    slot_of_[entry.id] = slot;
    eviction_order_.insert({entry.weight, entry.insert_step, entry.id});
    tree_.set(slot, priority_of(entry.weight));
    slots_[slot] = std::move(entry);
    ++live_;
}

std::uint64_t ReplayBuffer::evict_min() {
    const auto [w, step, id] = *eviction_order_.begin();
    eviction_order_.erase(eviction_order_.begin());
    const std::size_t slot = slot_of_.at(id);
    slot_of_.erase(id);
    slots_[slot].reset();
    tree_.set(slot, 0.0);
    free_slots_.push_back(slot);
    --live_;
    ++eviction_count_;
    return id;
}

AddResult ReplayBuffer::add(CorruptedExample example, double init_weight, long step) {
    if (!(init_weight >= 0.0) || !std::isfinite(init_weight))
        throw std::invalid_argument("ReplayBuffer::add: weight must be finite and nonnegative");

    AddResult result;
    if (live_ == capacity_) result.evicted_id = evict_min();

    BufferEntry entry;
    entry.id = next_id_++;
    entry.example = std::move(example);
    entry.weight = init_weight;
    entry.insert_step = step;
    result.id = entry.id;

    const std::size_t slot = free_slots_.back();
    free_slots_.pop_back();
    place(slot, std::move(entry));
    ++add_count_;
    return result;
}

UpdateResult ReplayBuffer::update(std::uint64_t id, double new_weight) {
    if (!(new_weight >= 0.0) || !std::isfinite(new_weight))
        throw std::invalid_argument("ReplayBuffer::update: weight must be finite and nonnegative");
    auto it = slot_of_.find(id);
    if (it == slot_of_.end()) {
        ++stale_update_count_;
        return UpdateResult::stale;
    }
    BufferEntry& entry = *slots_[it->second];
    eviction_order_.erase({entry.weight, entry.insert_step, entry.id});
    entry.weight = new_weight;
    eviction_order_.insert({entry.weight, entry.insert_step, entry.id});
    tree_.set(it->second, priority_of(new_weight));
    ++update_count_;
    return UpdateResult::updated;
}

std::optional<std::vector<SampledEntry>> ReplayBuffer::sample(std::size_t k, Rng& rng) {
    if (live_ == 0 || !(tree_.total() > 0.0)) return std::nullopt;

    std::vector<SampledEntry> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double total = tree_.total();
        std::uniform_real_distribution<double> dist(0.0, total);
        double u = dist(rng);
        if (u >= total) u = std::nextafter(total, 0.0);  // guard the half-open interval
        const std::size_t slot = tree_.find_prefix(u);
        BufferEntry& entry = *slots_[slot];
        entry.sample_count += 1;
        out.push_back({entry.id, entry.example, tree_.leaf(slot) / total});
        ++draw_count_;
    }
    return out;
}

BufferStats ReplayBuffer::stats() const {
    BufferStats s;
    s.live_count = live_;
    if (live_ == 0) return s;  // mean stays at the documented empty default 1.0
    double sum = 0.0;
    double mn = std::numeric_limits<double>::infinity();
    double mx = 0.0;
    for (const auto& slot : slots_) {
        if (!slot) continue;
        sum += slot->weight;
        mn = std::min(mn, slot->weight);
        mx = std::max(mx, slot->weight);
    }
    s.mean_weight = sum / static_cast<double>(live_);
    s.min_weight = mn;
    s.max_weight = mx;
    return s;
}

const BufferEntry* ReplayBuffer::find(std::uint64_t id) const {
    auto it = slot_of_.find(id);
    return it == slot_of_.end() ? nullptr : &*slots_[it->second];
}

BufferEntry* ReplayBuffer::find(std::uint64_t id) {
    auto it = slot_of_.find(id);
    return it == slot_of_.end() ? nullptr : &*slots_[it->second];
}

void ReplayBuffer::restore(std::vector<BufferEntry> entries, std::uint64_t next_id) {
    if (entries.size() > capacity_) throw std::invalid_argument("ReplayBuffer::restore: too many entries");
    slots_.assign(capacity_, std::nullopt);
    slot_of_.clear();
    eviction_order_.clear();
    free_slots_.clear();
    for (std::size_t i = capacity_; i-- > 0;) free_slots_.push_back(i);
    for (std::size_t i = 0; i < capacity_; ++i) tree_.set(i, 0.0);
    live_ = 0;
    for (auto& e : entries) {
        const std::size_t slot = free_slots_.back();
        free_slots_.pop_back();
        place(slot, std::move(e));
    }
    next_id_ = next_id;
}

}  // namespace tmr
