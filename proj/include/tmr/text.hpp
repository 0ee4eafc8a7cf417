#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "tmr/rng.hpp"

namespace tmr {

/// Whitespace-token vocabulary with four reserved ids. Built from a corpus by
/// frequency (lexicographic tie-break), so the same corpus always yields the
/// same id assignment.
struct Vocab {
    static constexpr int pad_id = 0;
    static constexpr int mask_id = 1;
    static constexpr int cls_id = 2;
    static constexpr int unk_id = 3;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int encode_token(const std::string& token) const;
    const std::string& decode_token(int id) const;

    static Vocab build_from_lines(const std::vector<std::string>& lines, std::size_t max_vocab);
    static Vocab build(const std::filesystem::path& corpus_path, std::size_t max_vocab);

    void save(const std::filesystem::path& path) const;  // "token<TAB>id" lines
    static Vocab load(const std::filesystem::path& path);
};

/// One fixed window: position 0 is CLS, content follows, PAD fills the tail.
/// n_real counts CLS plus content (PAD excluded from masking and losses).
struct TokenSequence {
    std::vector<int> ids;
    int n_real = 0;
};

struct MaskedExample {
    TokenSequence input;              // original with masked positions set to MASK
    std::vector<int> mask_positions;  // sorted, never position 0
    std::vector<int> originals;       // tokens removed, aligned with mask_positions
};

enum class TokenLabel : std::uint8_t { original = 0, replaced = 1 };

struct CorruptedExample {
    std::vector<int> tokens;          // original with sampled replacements at mask positions
    TokenSequence original;
    std::vector<TokenLabel> labels;   // per position over [0, n_real)
    std::vector<int> mask_positions;
    int n_real = 0;
};

std::vector<std::string> tokenize(const std::string& text);

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Encode one document into CLS-prefixed, PAD-filled windows of max_seq_len.
std::vector<TokenSequence> encode_windows(const Vocab& vocab, const std::string& line, int max_seq_len);

std::vector<TokenSequence> load_corpus_windows(const Vocab& vocab, const std::filesystem::path& path,
                                               int max_seq_len);

std::string decode(const Vocab& vocab, const std::vector<int>& ids, int n_real);

/// Mask r = max(1, round(mask_rate * (n_real - 1))) distinct non-CLS positions.
MaskedExample mask_sequence(const TokenSequence& seq, double mask_rate, Rng& rng);

std::vector<TokenLabel> compute_labels(const std::vector<int>& tokens, const TokenSequence& original);

/// Overwrite mask positions with the sampled tokens and label every position.
CorruptedExample assemble_corrupted(const MaskedExample& masked, const std::vector<int>& sampled);

/// Fraction of masked positions whose token differs from the original.
double replaced_fraction(const CorruptedExample& ex);

}  // namespace tmr
