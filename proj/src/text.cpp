#include "tmr/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tmr {

namespace {
const char* kReserved[4] = {"[PAD]", "[MASK]", "[CLS]", "[UNK]"};
}

int Vocab::encode_token(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? unk_id : it->second;
}

const std::string& Vocab::decode_token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab::decode_token: bad id");
    return id_to_token[static_cast<std::size_t>(id)];
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

Vocab Vocab::build_from_lines(const std::vector<std::string>& lines, std::size_t max_vocab) {
    if (max_vocab < 5) throw std::invalid_argument("Vocab: max_vocab must be at least 5");
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& line : lines)
        for (auto& tok : tokenize(line)) ++counts[tok];
    if (counts.empty()) throw std::runtime_error("Vocab: corpus is empty");

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > max_vocab - 4) ranked.resize(max_vocab - 4);

    Vocab v;
    for (const char* r : kReserved) {
        v.token_to_id[r] = v.size();
        v.id_to_token.emplace_back(r);
    }
    for (auto& [tok, n] : ranked) {
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    }
    return v;
}

Vocab Vocab::build(const std::filesystem::path& corpus_path, std::size_t max_vocab) {
    return build_from_lines(read_lines(corpus_path), max_vocab);
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocab file: " + path.string());
    for (int id = 0; id < size(); ++id) out << id_to_token[static_cast<std::size_t>(id)] << '\t' << id << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path.string());
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("malformed vocab line: " + line);
        std::string tok = line.substr(0, tab);
        int id = std::stoi(line.substr(tab + 1));
        if (id != v.size()) throw std::runtime_error("vocab ids must be dense and ordered");
        v.token_to_id[tok] = id;
        v.id_to_token.push_back(tok);
    }
    if (v.size() < 5) throw std::runtime_error("vocab file too small");
    return v;
}

std::vector<TokenSequence> encode_windows(const Vocab& vocab, const std::string& line, int max_seq_len) {
    if (max_seq_len < 2) throw std::invalid_argument("max_seq_len must be at least 2");
    std::vector<int> content;
    for (auto& tok : tokenize(line)) content.push_back(vocab.encode_token(tok));

    std::vector<TokenSequence> windows;
    const int chunk = max_seq_len - 1;
    for (std::size_t start = 0; start < content.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(content.size(), start + static_cast<std::size_t>(chunk));
        TokenSequence seq;
        seq.ids.assign(static_cast<std::size_t>(max_seq_len), Vocab::pad_id);
        seq.ids[0] = Vocab::cls_id;
        for (std::size_t i = start; i < end; ++i) seq.ids[1 + i - start] = content[i];
        seq.n_real = 1 + static_cast<int>(end - start);
        windows.push_back(std::move(seq));
    }
    return windows;
}

std::vector<TokenSequence> load_corpus_windows(const Vocab& vocab, const std::filesystem::path& path,
                                               int max_seq_len) {
    std::vector<TokenSequence> all;
    for (const auto& line : read_lines(path)) {
        auto windows = encode_windows(vocab, line, max_seq_len);
        all.insert(all.end(), windows.begin(), windows.end());
    }
    if (all.empty()) throw std::runtime_error("corpus produced no usable windows: " + path.string());
    return all;
}

std::string decode(const Vocab& vocab, const std::vector<int>& ids, int n_real) {
    std::ostringstream out;
    bool first = true;
    for (int t = 0; t < n_real; ++t) {
        const int id = ids[static_cast<std::size_t>(t)];
        if (id == Vocab::cls_id || id == Vocab::pad_id) continue;
        if (!first) out << ' ';
        out << vocab.decode_token(id);
        first = false;
    }
    return out.str();
}

MaskedExample mask_sequence(const TokenSequence& seq, double mask_rate, Rng& rng) {
    if (seq.n_real < 2) throw std::invalid_argument("mask_sequence: need CLS plus at least one content token");
    if (!(mask_rate > 0.0) || !(mask_rate < 1.0))
        throw std::invalid_argument("mask_sequence: mask_rate must be in (0,1)");

    const int content = seq.n_real - 1;
    const int r = std::max(1, static_cast<int>(std::lround(mask_rate * content)));

    // Partial Fisher-Yates over the content positions [1, n_real).
    std::vector<int> positions(static_cast<std::size_t>(content));
    for (int i = 0; i < content; ++i) positions[static_cast<std::size_t>(i)] = 1 + i;
    for (int i = 0; i < r; ++i) {
        std::uniform_int_distribution<int> pick(i, content - 1);
        std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(pick(rng))]);
    }
    positions.resize(static_cast<std::size_t>(r));
    std::sort(positions.begin(), positions.end());

    MaskedExample m;
    m.input = seq;
    m.mask_positions = positions;
    m.originals.reserve(positions.size());
    for (int p : positions) {
        m.originals.push_back(seq.ids[static_cast<std::size_t>(p)]);
        m.input.ids[static_cast<std::size_t>(p)] = Vocab::mask_id;
    }
    return m;
}

std::vector<TokenLabel> compute_labels(const std::vector<int>& tokens, const TokenSequence& original) {
    std::vector<TokenLabel> labels(static_cast<std::size_t>(original.n_real), TokenLabel::original);
    for (int t = 0; t < original.n_real; ++t) {
        if (tokens[static_cast<std::size_t>(t)] != original.ids[static_cast<std::size_t>(t)])
            labels[static_cast<std::size_t>(t)] = TokenLabel::replaced;
    }
    return labels;
}

CorruptedExample assemble_corrupted(const MaskedExample& masked, const std::vector<int>& sampled) {
    if (sampled.size() != masked.mask_positions.size())
        throw std::invalid_argument("assemble_corrupted: sampled token count must match mask positions");

    CorruptedExample ex;
    ex.original = masked.input;
    for (std::size_t i = 0; i < masked.mask_positions.size(); ++i)
        ex.original.ids[static_cast<std::size_t>(masked.mask_positions[i])] = masked.originals[i];
    ex.n_real = ex.original.n_real;

    ex.tokens = ex.original.ids;
    for (std::size_t i = 0; i < masked.mask_positions.size(); ++i)
        ex.tokens[static_cast<std::size_t>(masked.mask_positions[i])] = sampled[i];

    ex.mask_positions = masked.mask_positions;
    ex.labels = compute_labels(ex.tokens, ex.original);
    return ex;
}

double replaced_fraction(const CorruptedExample& ex) {
    if (ex.mask_positions.empty())
        throw std::invalid_argument("replaced_fraction: example has no recorded mask positions");
    std::size_t replaced = 0;
    for (int p : ex.mask_positions)
        if (ex.labels[static_cast<std::size_t>(p)] == TokenLabel::replaced) ++replaced;
    return static_cast<double>(replaced) / static_cast<double>(ex.mask_positions.size());
}

}  // namespace tmr
