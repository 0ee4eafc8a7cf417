#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tmr/replay_buffer.hpp"
#include "tmr/sum_tree.hpp"

using namespace tmr;

namespace {

CorruptedExample example_with_token(int token = 4) {
    CorruptedExample ex;
    ex.tokens = {Vocab::cls_id, token};
    ex.original.ids = {Vocab::cls_id, token};
    ex.original.n_real = 2;
    ex.n_real = 2;
    ex.mask_positions = {1};
    ex.labels = {TokenLabel::original, TokenLabel::original};
    return ex;
}

SumTree tree_with_leaves(const std::vector<double>& leaves) {
    SumTree tree(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) tree.set(i, leaves[i]);
    return tree;
}

}  // namespace

TEST_CASE("sum tree set updates leaves and total") {
    SumTree tree = tree_with_leaves({1, 2, 3, 4});
    CHECK(tree.total() == doctest::Approx(10.0));
    tree.set(2, 0.0);
    CHECK(tree.leaf(0) == 1.0);
    CHECK(tree.leaf(1) == 2.0);
    CHECK(tree.leaf(2) == 0.0);
    CHECK(tree.leaf(3) == 4.0);
    CHECK(tree.total() == doctest::Approx(7.0));
}

TEST_CASE("sum tree set to current value keeps total") {
    SumTree tree = tree_with_leaves({1, 2, 3, 4});
    const double before = tree.total();
    tree.set(1, 2.0);
    CHECK(tree.total() == before);
}

TEST_CASE("sum tree node visits equal depth plus one") {
    SumTree tree(1024);
    tree.set(13, 1.0);
    CHECK(tree.last_op_node_visits() == 11);
    tree.set(512, 2.0);
    CHECK(tree.last_op_node_visits() == 11);
    (void)tree.find_prefix(0.5);
    CHECK(tree.last_op_node_visits() == 11);
}

TEST_CASE("sum tree rejects bad input") {
    SumTree tree = tree_with_leaves({1, 2});
    CHECK_THROWS_AS(tree.set(2, 1.0), std::out_of_range);
    CHECK_THROWS_AS(tree.set(0, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(tree.set(0, std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(tree.find_prefix(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(tree.find_prefix(3.0), std::invalid_argument);
    SumTree empty(4);
    CHECK_THROWS_AS(empty.find_prefix(0.0), std::invalid_argument);
}

TEST_CASE("find_prefix follows the cumulative sums") {
    SumTree tree = tree_with_leaves({1, 2, 3, 4});
    CHECK(tree.find_prefix(0.5) == 0);
    CHECK(tree.find_prefix(2.9) == 1);
    CHECK(tree.find_prefix(6.0) == 3);

    // Brute-force cumulative-sum oracle across a grid of query points.
    const std::vector<double> leaves = {0.7, 0.0, 2.5, 1.1, 0.0, 3.3};
    SumTree t2 = tree_with_leaves(leaves);
    for (double u = 0.0; u < t2.total(); u += 0.0173) {
        double cum = 0.0;
        std::size_t expected = 0;
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            if (u < cum + leaves[i]) {
                expected = i;
                break;
            }
            cum += leaves[i];
        }
        CHECK(t2.find_prefix(u) == expected);
    }
}

TEST_CASE("zero-weight leaves are never returned") {
    SumTree tree = tree_with_leaves({0, 5});
    for (double u : {0.0, 0.1, 2.5, 4.999}) CHECK(tree.find_prefix(u) == 1);
}

TEST_CASE("find_prefix is uniform over equal leaves") {
    constexpr std::size_t n = 8;
    SumTree tree(n);
    for (std::size_t i = 0; i < n; ++i) tree.set(i, 1.0);
    Rng rng(99);
    std::uniform_real_distribution<double> dist(0.0, tree.total());
    std::vector<std::size_t> counts(n, 0);
    constexpr int draws = 1'000'000;
    for (int i = 0; i < draws; ++i) ++counts[tree.find_prefix(dist(rng))];
    for (std::size_t i = 0; i < n; ++i) {
        const double freq = static_cast<double>(counts[i]) / draws;
        CHECK(std::abs(freq - 1.0 / n) < 0.01 * (1.0 / n) + 0.001);
    }
}

TEST_CASE("buffer add fills then evicts the minimum weight entry") {
    ReplayBuffer buf(2, 1.0);
    const auto a = buf.add(example_with_token(4), 1.0, 0);
    const auto b = buf.add(example_with_token(5), 2.0, 0);
    CHECK(buf.live_count() == 2);
    CHECK_FALSE(a.evicted_id.has_value());
    CHECK_FALSE(b.evicted_id.has_value());

    const auto c = buf.add(example_with_token(6), 1.5, 1);
    CHECK(buf.live_count() == 2);
    REQUIRE(c.evicted_id.has_value());
    CHECK(*c.evicted_id == a.id);  // lowest weight goes first
    CHECK(buf.find(a.id) == nullptr);
    CHECK(buf.find(b.id) != nullptr);
}

TEST_CASE("eviction ties break on insert step, oldest first") {
    ReplayBuffer buf(2, 1.0);
    const auto a = buf.add(example_with_token(4), 1.0, 0);
    const auto b = buf.add(example_with_token(5), 1.0, 1);
    const auto c = buf.add(example_with_token(6), 5.0, 2);
    REQUIRE(c.evicted_id.has_value());
    CHECK(*c.evicted_id == a.id);
    CHECK(buf.find(b.id) != nullptr);
}

TEST_CASE("buffer update changes sampling mass and tolerates stale ids") {
    ReplayBuffer buf(2, 1.0);
    const auto a = buf.add(example_with_token(4), 2.0, 0);
    CHECK(buf.update(a.id, 3.0) == UpdateResult::updated);
    CHECK(buf.tree().total() == doctest::Approx(3.0));

    CHECK(buf.update(a.id, 0.0) == UpdateResult::updated);
    CHECK(buf.live_count() == 1);  // unsampleable but still live
    Rng rng(1);
    CHECK_FALSE(buf.sample(1, rng).has_value());

    // Construct the eviction race: sample-then-evict-then-update.
    const auto b = buf.add(example_with_token(5), 1.0, 1);
    const auto c = buf.add(example_with_token(6), 1.0, 2);  // evicts a (weight 0)
    REQUIRE(c.evicted_id.has_value());
    CHECK(*c.evicted_id == a.id);
    const double total_before = buf.total_priority();
    CHECK(buf.update(a.id, 9.0) == UpdateResult::stale);
    CHECK(buf.total_priority() == total_before);
    CHECK(buf.stale_update_count() == 1);
    (void)b;
}

TEST_CASE("buffer rejects invalid weights") {
    ReplayBuffer buf(2, 1.0);
    CHECK_THROWS_AS(buf.add(example_with_token(), -1.0, 0), std::invalid_argument);
    const auto a = buf.add(example_with_token(), 1.0, 0);
    CHECK_THROWS_AS(buf.update(a.id, std::nan("")), std::invalid_argument);
}

TEST_CASE("sampled probabilities are exact priority fractions") {
    ReplayBuffer buf(2, 0.5);
    const auto a = buf.add(example_with_token(4), 1.0, 0);
    const auto b = buf.add(example_with_token(5), 4.0, 0);
    Rng rng(7);
    auto draws = buf.sample(64, rng);
    REQUIRE(draws.has_value());
    for (const auto& d : *draws) {
        if (d.id == a.id) CHECK(d.probability == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        if (d.id == b.id) CHECK(d.probability == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("sampling with alpha zero is uniform regardless of weights") {
    ReplayBuffer buf(4, 0.0);
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(buf.add(example_with_token(4 + i), 1.0 + 3.0 * i, 0).id);
    Rng rng(17);
    std::map<std::uint64_t, int> counts;
    constexpr int rounds = 50;
    constexpr std::size_t k = 2048;
    for (int r = 0; r < rounds; ++r) {
        auto draws = buf.sample(k, rng);
        REQUIRE(draws.has_value());
        for (const auto& d : *draws) ++counts[d.id];
    }
    const double total = static_cast<double>(rounds) * static_cast<double>(k);
    for (auto id : ids) CHECK(std::abs(counts[id] / total - 0.25) < 0.01);
}

TEST_CASE("sample increments sample_count once per draw") {
    ReplayBuffer buf(1, 1.0);
    const auto a = buf.add(example_with_token(), 1.0, 0);
    Rng rng(3);
    auto draws = buf.sample(5, rng);
    REQUIRE(draws.has_value());
    CHECK(draws->size() == 5);  // with replacement, one entry can fill the batch
    CHECK(buf.find(a.id)->sample_count == 5);
    CHECK(buf.draw_count() == 5);
}

TEST_CASE("empty buffer is not ready to sample") {
    ReplayBuffer buf(4, 1.0);
    Rng rng(1);
    CHECK_FALSE(buf.sample(1, rng).has_value());
}

TEST_CASE("buffer stats") {
    ReplayBuffer buf(8, 1.0);
    SUBCASE("empty buffer mean defaults to one") {
        const auto s = buf.stats();
        CHECK(s.mean_weight == 1.0);
        CHECK(s.live_count == 0);
    }
    SUBCASE("mean over raw weights") {
        buf.add(example_with_token(4), 1.0, 0);
        buf.add(example_with_token(5), 3.0, 0);
        const auto s = buf.stats();
        CHECK(s.mean_weight == doctest::Approx(2.0));
        CHECK(s.min_weight == 1.0);
        CHECK(s.max_weight == 3.0);
        CHECK(s.live_count == 2);
    }
    SUBCASE("constant weights") {
        ReplayBuffer big(1000, 1.0);
        for (int i = 0; i < 1000; ++i) big.add(example_with_token(), 0.5, 0);
        const auto s = big.stats();
        CHECK(s.mean_weight == doctest::Approx(0.5));
        CHECK(s.min_weight == 0.5);
        CHECK(s.max_weight == 0.5);
    }
}

TEST_CASE("priority floor keeps zero-weight entries sampleable when enabled") {
    ReplayBuffer buf(2, 1.0, true);
    buf.add(example_with_token(), 0.0, 0);
    CHECK(buf.total_priority() > 0.0);
    ReplayBuffer plain(2, 1.0, false);
    plain.add(example_with_token(), 0.0, 0);
    CHECK(plain.total_priority() == 0.0);
}

TEST_CASE("tree total matches live priorities under random op interleavings") {
    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
        CAPTURE(alpha);
        ReplayBuffer buf(32, alpha);
        Rng rng(123);
        std::uniform_real_distribution<double> weight(0.0, 5.0);
        std::uniform_int_distribution<int> op(0, 3);
        std::vector<std::uint64_t> live_ids;
        for (int i = 0; i < 3000; ++i) {
            const int o = live_ids.empty() ? 0 : op(rng);
            if (o <= 1) {
                const auto r = buf.add(example_with_token(), weight(rng), i);
                if (r.evicted_id)
                    live_ids.erase(std::find(live_ids.begin(), live_ids.end(), *r.evicted_id));
                live_ids.push_back(r.id);
            } else if (o == 2) {
                std::uniform_int_distribution<std::size_t> pick(0, live_ids.size() - 1);
                buf.update(live_ids[pick(rng)], weight(rng));
            } else if (buf.total_priority() > 0.0) {
                buf.sample(4, rng);
            }
            CHECK(buf.live_count() <= buf.capacity());
        }
        double expected = 0.0;
        buf.for_each_live([&](const BufferEntry& e) { expected += std::pow(e.weight, alpha); });
        CHECK(buf.total_priority() == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("buffer restore rebuilds contents exactly") {
    ReplayBuffer buf(8, 1.0);
    for (int i = 0; i < 5; ++i) buf.add(example_with_token(4 + i), 0.5 + i, i);
    std::vector<BufferEntry> snapshot;
    buf.for_each_live([&](const BufferEntry& e) { snapshot.push_back(e); });

    ReplayBuffer copy(8, 1.0);
    copy.restore(snapshot, buf.next_id());
    CHECK(copy.live_count() == buf.live_count());
    CHECK(copy.total_priority() == doctest::Approx(buf.total_priority()));
    for (const auto& e : snapshot) {
        const BufferEntry* found = copy.find(e.id);
        REQUIRE(found != nullptr);
        CHECK(found->weight == e.weight);
        CHECK(found->insert_step == e.insert_step);
        CHECK(found->example.tokens == e.example.tokens);
    }
}
