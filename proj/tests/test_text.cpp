#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "tmr/text.hpp"

using namespace tmr;

namespace {

std::filesystem::path write_temp_corpus(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

TokenSequence make_sequence(int n_real, int max_seq_len = 32, int fill = 4) {
    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(max_seq_len), Vocab::pad_id);
    seq.ids[0] = Vocab::cls_id;
    for (int i = 1; i < n_real; ++i) seq.ids[static_cast<std::size_t>(i)] = fill + (i % 3);
    seq.n_real = n_real;
    return seq;
}

}  // namespace

TEST_CASE("vocab orders reserved ids then frequency then lexicographic") {
    const Vocab v = Vocab::build_from_lines({"a a b"}, 6);
    CHECK(v.size() == 6);
    CHECK(v.encode_token("a") == 4);
    CHECK(v.encode_token("b") == 5);
    CHECK(v.decode_token(Vocab::pad_id) == "[PAD]");
    CHECK(v.decode_token(Vocab::mask_id) == "[MASK]");
    CHECK(v.decode_token(Vocab::cls_id) == "[CLS]");
    CHECK(v.encode_token("zebra") == Vocab::unk_id);
}

TEST_CASE("vocab construction is deterministic") {
    const std::vector<std::string> lines = {"the cat sat", "the dog ran", "cat and dog"};
    const Vocab a = Vocab::build_from_lines(lines, 64);
    const Vocab b = Vocab::build_from_lines(lines, 64);
    CHECK(a.id_to_token == b.id_to_token);
}

TEST_CASE("vocab caps size and rejects empty corpora") {
    const Vocab v = Vocab::build_from_lines({"a b c d e f g"}, 6);
    CHECK(v.size() == 6);
    CHECK_THROWS(Vocab::build_from_lines({"", "   "}, 64));
}

TEST_CASE("vocab file round trip") {
    const Vocab v = Vocab::build_from_lines({"the cat sat on the mat"}, 16);
    const auto path = std::filesystem::temp_directory_path() / "tmr_vocab_test.tsv";
    v.save(path);
    const Vocab loaded = Vocab::load(path);
    CHECK(loaded.id_to_token == v.id_to_token);
}

TEST_CASE("windows carry CLS, PAD fill, and document splits") {
    const Vocab v = Vocab::build_from_lines({"a b c d e"}, 16);
    const auto windows = encode_windows(v, "a b c d e", 4);
    REQUIRE(windows.size() == 2);  // 5 content tokens, 3 per window
    CHECK(windows[0].ids[0] == Vocab::cls_id);
    CHECK(windows[0].n_real == 4);
    CHECK(windows[1].n_real == 3);
    CHECK(windows[1].ids[3] == Vocab::pad_id);
    CHECK(windows[1].ids.size() == 4);
}

TEST_CASE("decode inverts encode for in-vocab text") {
    const std::string text = "The cat  sat on\tthe mat";
    const Vocab v = Vocab::build_from_lines({text}, 32);
    const auto windows = encode_windows(v, text, 16);
    REQUIRE(windows.size() == 1);
    CHECK(decode(v, windows[0].ids, windows[0].n_real) == "the cat sat on the mat");
}

TEST_CASE("mask count follows the rate with a floor of one") {
    Rng rng(5);
    SUBCASE("20 content positions at 0.15 give 3 masks") {
        const auto m = mask_sequence(make_sequence(21), 0.15, rng);
        CHECK(m.mask_positions.size() == 3);
    }
    SUBCASE("2 content positions at 0.15 still mask one") {
        const auto m = mask_sequence(make_sequence(3), 0.15, rng);
        CHECK(m.mask_positions.size() == 1);
    }
}

TEST_CASE("masking replaces tokens and records originals") {
    Rng rng(7);
    const TokenSequence seq = make_sequence(12);
    const auto m = mask_sequence(seq, 0.25, rng);
    CHECK(std::is_sorted(m.mask_positions.begin(), m.mask_positions.end()));
    for (std::size_t i = 0; i < m.mask_positions.size(); ++i) {
        const auto p = static_cast<std::size_t>(m.mask_positions[i]);
        CHECK(m.input.ids[p] == Vocab::mask_id);
        CHECK(m.originals[i] == seq.ids[p]);
    }
}

TEST_CASE("mask positions cover every content slot and never CLS or PAD") {
    const TokenSequence seq = make_sequence(10);
    Rng rng(11);
    std::set<int> seen;
    for (int trial = 0; trial < 10'000; ++trial) {
        const auto m = mask_sequence(seq, 0.3, rng);
        for (int p : m.mask_positions) {
            CHECK(p >= 1);
            CHECK(p < seq.n_real);
            seen.insert(p);
        }
    }
    CHECK(seen.size() == static_cast<std::size_t>(seq.n_real - 1));
}

TEST_CASE("masking is reproducible for a fixed seed") {
    const TokenSequence seq = make_sequence(16);
    Rng r1(42), r2(42);
    const auto a = mask_sequence(seq, 0.2, r1);
    const auto b = mask_sequence(seq, 0.2, r2);
    CHECK(a.mask_positions == b.mask_positions);
    CHECK(a.input.ids == b.input.ids);
}

TEST_CASE("mask_sequence rejects degenerate input") {
    Rng rng(1);
    CHECK_THROWS(mask_sequence(make_sequence(1), 0.15, rng));
    CHECK_THROWS(mask_sequence(make_sequence(8), 0.0, rng));
    CHECK_THROWS(mask_sequence(make_sequence(8), 1.0, rng));
}

TEST_CASE("assemble_corrupted labels replacements") {
    const TokenSequence seq = make_sequence(8);
    Rng rng(3);
    const auto m = mask_sequence(seq, 0.3, rng);
    REQUIRE(m.mask_positions.size() >= 2);

    SUBCASE("sampled equal to originals stays fully original") {
        const auto ex = assemble_corrupted(m, m.originals);
        CHECK(ex.tokens == seq.ids);
        for (auto l : ex.labels) CHECK(l == TokenLabel::original);
        CHECK(replaced_fraction(ex) == 0.0);
    }
    SUBCASE("sampled all different marks every mask position replaced") {
        std::vector<int> sampled(m.originals.size(), 7);
        for (std::size_t i = 0; i < sampled.size(); ++i)
            if (sampled[i] == m.originals[i]) sampled[i] = 8;
        const auto ex = assemble_corrupted(m, sampled);
        for (int p : ex.mask_positions)
            CHECK(ex.labels[static_cast<std::size_t>(p)] == TokenLabel::replaced);
        CHECK(replaced_fraction(ex) == 1.0);
    }
    SUBCASE("mixed outcome labels per position") {
        std::vector<int> sampled = m.originals;
        sampled[1] = sampled[1] == 9 ? 10 : 9;  // second mask recovers, except forced different
        const auto ex = assemble_corrupted(m, sampled);
        CHECK(ex.labels[static_cast<std::size_t>(m.mask_positions[0])] == TokenLabel::original);
        CHECK(ex.labels[static_cast<std::size_t>(m.mask_positions[1])] == TokenLabel::replaced);
        const double expected =
            1.0 / static_cast<double>(m.mask_positions.size());
        CHECK(replaced_fraction(ex) == doctest::Approx(expected));
    }
    SUBCASE("length mismatch is rejected") {
        CHECK_THROWS(assemble_corrupted(m, std::vector<int>(m.originals.size() + 1, 5)));
    }
}

TEST_CASE("positions outside mask stay original even for half-replaced pairs") {
    // Two masked, one replaced: the worked 50% case.
    TokenSequence seq = make_sequence(5);
    MaskedExample m;
    m.input = seq;
    m.mask_positions = {1, 3};
    m.originals = {seq.ids[1], seq.ids[3]};
    m.input.ids[1] = Vocab::mask_id;
    m.input.ids[3] = Vocab::mask_id;
    const auto ex = assemble_corrupted(m, {seq.ids[1], 9});
    CHECK(replaced_fraction(ex) == doctest::Approx(0.5));
    CHECK(ex.labels[2] == TokenLabel::original);
    CHECK(ex.labels[4] == TokenLabel::original);
}

TEST_CASE("labels recomputed from the same inputs are identical") {
    const TokenSequence seq = make_sequence(9);
    Rng rng(19);
    const auto m = mask_sequence(seq, 0.3, rng);
    std::vector<int> sampled = m.originals;
    sampled[0] = 11;
    const auto ex = assemble_corrupted(m, sampled);
    CHECK(compute_labels(ex.tokens, ex.original) == ex.labels);
    CHECK(compute_labels(ex.tokens, ex.original) == compute_labels(ex.tokens, ex.original));
}

TEST_CASE("corpus loading produces windows for every line") {
    const auto path = write_temp_corpus("tmr_text_corpus.txt", "a b c\nd e\n\n");
    const Vocab v = Vocab::build(path, 32);
    const auto windows = load_corpus_windows(v, path, 8);
    CHECK(windows.size() == 2);  // the blank line contributes nothing
    CHECK_THROWS(load_corpus_windows(v, "missing_file.txt", 8));
}
