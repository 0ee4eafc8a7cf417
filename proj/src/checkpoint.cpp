#include "tmr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; this build targets little-endian hosts");

namespace tmr {

namespace {

struct TensorRecord {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    std::uint64_t offset = 0;
};

void append_rowmajor(std::vector<double>& blob, const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) blob.push_back(m(r, c));
}

Mat read_rowmajor(const std::vector<double>& blob, const TensorRecord& rec) {
    Mat m(rec.rows, rec.cols);
    std::size_t at = rec.offset / sizeof(double);
    for (Eigen::Index r = 0; r < rec.rows; ++r)
        for (Eigen::Index c = 0; c < rec.cols; ++c) m(r, c) = blob[at++];
    return m;
}

std::vector<std::pair<std::string, Mat>> buffer_tensors(const ReplayBuffer& buffer, int max_seq_len) {
    std::vector<const BufferEntry*> live;
    buffer.for_each_live([&](const BufferEntry& e) { live.push_back(&e); });
    const Eigen::Index n = static_cast<Eigen::Index>(live.size());
    const Eigen::Index w = max_seq_len;
    Mat tokens = Mat::Zero(n, w), original = Mat::Zero(n, w), mask_ind = Mat::Zero(n, w);
    Mat meta = Mat::Zero(n, 7);
    for (Eigen::Index i = 0; i < n; ++i) {
        const BufferEntry& e = *live[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < w; ++j) {
            tokens(i, j) = e.example.tokens[static_cast<std::size_t>(j)];
            original(i, j) = e.example.original.ids[static_cast<std::size_t>(j)];
        }
        for (int p : e.example.mask_positions) mask_ind(i, p) = 1.0;
        meta(i, 0) = static_cast<double>(e.id);
        meta(i, 1) = e.weight;
        meta(i, 2) = static_cast<double>(e.insert_step);
        meta(i, 3) = static_cast<double>(e.sample_count);
        meta(i, 4) = e.last_loss.has_value() ? 1.0 : 0.0;
        meta(i, 5) = e.last_loss.value_or(0.0);
        meta(i, 6) = static_cast<double>(e.example.n_real);
    }
    Mat state(1, 1);
    state(0, 0) = static_cast<double>(buffer.next_id());
    return {{"buffer/tokens", std::move(tokens)},
            {"buffer/original", std::move(original)},
            {"buffer/mask_ind", std::move(mask_ind)},
            {"buffer/meta", std::move(meta)},
            {"buffer/state", std::move(state)}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, ModelParams& model, const CheckpointMeta& meta,
                     const ReplayBuffer* buffer) {
    std::vector<TensorRecord> records;
    std::vector<double> blob;

    auto push = [&](const std::string& name, const Mat& m) {
        records.push_back({name, m.rows(), m.cols(), blob.size() * sizeof(double)});
        append_rowmajor(blob, m);
    };
    for (Parameter* p : model.all_params()) push(p->name, p->value);
    if (buffer)
        for (auto& [name, m] : buffer_tensors(*buffer, model.config.max_seq_len)) push(name, m);

    std::ofstream manifest(stem.string() + ".manifest");
    if (!manifest) throw std::runtime_error("cannot write checkpoint manifest: " + stem.string());
    manifest << "tmr-checkpoint v1\n";
    manifest << "step " << meta.step << "\n";
    manifest << "config_hash " << meta.config_hash << "\n";
    for (const auto& [k, v] : meta.extra) manifest << "meta " << k << "=" << v << "\n";
    for (const auto& r : records)
        manifest << "tensor " << r.name << " " << r.rows << " " << r.cols << " f64 " << r.offset << "\n";

    std::ofstream out(stem.string() + ".blob", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint blob: " + stem.string());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write on checkpoint blob: " + stem.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem) {
    std::ifstream manifest(stem.string() + ".manifest");
    if (!manifest) throw std::runtime_error("cannot open checkpoint manifest: " + stem.string());

    LoadedCheckpoint result;
    std::vector<TensorRecord> records;
    std::string line;
    if (!std::getline(manifest, line) || line != "tmr-checkpoint v1")
        throw std::runtime_error("unrecognized checkpoint format: " + stem.string());
    while (std::getline(manifest, line)) {
        std::istringstream in(line);
        std::string tag;
        in >> tag;
        if (tag == "step") {
            in >> result.meta.step;
        } else if (tag == "config_hash") {
            in >> result.meta.config_hash;
        } else if (tag == "meta") {
            std::string kv;
            in >> kv;
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw std::runtime_error("malformed meta line: " + line);
            result.meta.extra[kv.substr(0, eq)] = kv.substr(eq + 1);
        } else if (tag == "tensor") {
            TensorRecord r;
            std::string dtype;
            in >> r.name >> r.rows >> r.cols >> dtype >> r.offset;
            if (dtype != "f64") throw std::runtime_error("unsupported tensor dtype: " + dtype);
            records.push_back(std::move(r));
        } else if (!tag.empty()) {
            throw std::runtime_error("unrecognized manifest line: " + line);
        }
    }

    std::ifstream blob_in(stem.string() + ".blob", std::ios::binary | std::ios::ate);
    if (!blob_in) throw std::runtime_error("cannot open checkpoint blob: " + stem.string());
    const std::streamsize bytes = blob_in.tellg();
    if (bytes % static_cast<std::streamsize>(sizeof(double)) != 0)
        throw std::runtime_error("checkpoint blob has a partial double: " + stem.string());
    std::vector<double> blob(static_cast<std::size_t>(bytes) / sizeof(double));
    blob_in.seekg(0);
    blob_in.read(reinterpret_cast<char*>(blob.data()), bytes);
    if (!blob_in) throw std::runtime_error("short read on checkpoint blob: " + stem.string());

    auto meta_int = [&](const std::string& key) {
        auto it = result.meta.extra.find(key);
        if (it == result.meta.extra.end())
            throw std::runtime_error("checkpoint missing meta key: " + key);
        return std::stoi(it->second);
    };
    auto meta_double = [&](const std::string& key) {
        auto it = result.meta.extra.find(key);
        if (it == result.meta.extra.end())
            throw std::runtime_error("checkpoint missing meta key: " + key);
        return std::stod(it->second);
    };

    ModelConfig cfg;
    cfg.vocab_size = meta_int("vocab_size");
    cfg.emb_dim = meta_int("emb_dim");
    cfg.max_seq_len = meta_int("max_seq_len");
    cfg.gen = {meta_int("gen_layers"), meta_int("gen_hidden"), meta_int("gen_heads"), 4};
    cfg.disc = {meta_int("disc_layers"), meta_int("disc_hidden"), meta_int("disc_heads"), 4};
    cfg.dropout = meta_double("dropout");
    result.model = std::make_unique<ModelParams>(cfg);

    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;

    for (Parameter* p : result.model->all_params()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor: " + p->name);
        const TensorRecord& r = *it->second;
        if (r.rows != p->value.rows() || r.cols != p->value.cols())
            throw std::runtime_error("checkpoint shape mismatch for tensor: " + p->name);
        p->value = read_rowmajor(blob, r);
    }

    if (by_name.count("buffer/meta")) {
        const Mat tokens = read_rowmajor(blob, *by_name.at("buffer/tokens"));
        const Mat original = read_rowmajor(blob, *by_name.at("buffer/original"));
        const Mat mask_ind = read_rowmajor(blob, *by_name.at("buffer/mask_ind"));
        const Mat meta = read_rowmajor(blob, *by_name.at("buffer/meta"));
        const Mat state = read_rowmajor(blob, *by_name.at("buffer/state"));
        std::vector<BufferEntry> entries;
        entries.reserve(static_cast<std::size_t>(meta.rows()));
        for (Eigen::Index i = 0; i < meta.rows(); ++i) {
            BufferEntry e;
            e.id = static_cast<std::uint64_t>(meta(i, 0));
            e.weight = meta(i, 1);
            e.insert_step = static_cast<long>(meta(i, 2));
            e.sample_count = static_cast<long>(meta(i, 3));
            if (meta(i, 4) != 0.0) e.last_loss = meta(i, 5);
            e.example.n_real = static_cast<int>(meta(i, 6));
            const Eigen::Index w = tokens.cols();
            e.example.tokens.resize(static_cast<std::size_t>(w));
            e.example.original.ids.resize(static_cast<std::size_t>(w));
            e.example.original.n_real = e.example.n_real;
            for (Eigen::Index j = 0; j < w; ++j) {
                e.example.tokens[static_cast<std::size_t>(j)] = static_cast<int>(tokens(i, j));
                e.example.original.ids[static_cast<std::size_t>(j)] = static_cast<int>(original(i, j));
                if (mask_ind(i, j) != 0.0) e.example.mask_positions.push_back(static_cast<int>(j));
            }
            e.example.labels = compute_labels(e.example.tokens, e.example.original);
            entries.push_back(std::move(e));
        }
        result.buffer = {std::move(entries), static_cast<std::uint64_t>(state(0, 0))};
    }
    return result;
}

}  // namespace tmr
