#include "tmr/config.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace tmr {

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        {"corpus", "data/tiny_corpus.txt", "plain UTF-8 corpus, one document per line"},
        {"out_dir", "tmr_out", "output directory for reports, metrics, checkpoints"},
        {"mode", "tmr", "training mode: tmr | electra_baseline"},
        {"seed", "42", "master seed; all rng streams derive from it"},
        {"steps", "2000", "pretraining steps"},
        {"batch_size", "16", "sequences per step (K)"},
        {"buffer_capacity", "1024", "replay buffer capacity (N)"},
        {"lambda", "50", "discriminator loss weight in the combined objective"},
        {"mask_rate", "0.15", "fraction of content positions masked per sequence"},
        {"alpha", "1.0", "prioritization exponent; 0 gives uniform sampling"},
        {"init_strategy", "average", "new-entry weight: average | lsr | linucb"},
        {"update_strategy", "loss_diff", "sampled-entry weight: loss_diff | grad_norm | grad_bound"},
        {"ridge", "1.0", "least-squares regularizer for the lsr initializer"},
        {"ucb_alpha", "1.0", "exploration coefficient for the linucb initializer"},
        {"lsr_refit_every", "100", "steps between lsr refits over buffer contents"},
        {"priority_floor", "false", "clamp priorities to 1e-8 instead of allowing exact zero"},
        {"max_seq_len", "32", "window length including the leading CLS"},
        {"max_vocab", "8192", "vocabulary cap including the 4 reserved ids"},
        {"emb_dim", "16", "shared embedding width"},
        {"gen_layers", "2", "generator encoder layers"},
        {"gen_hidden", "16", "generator hidden size"},
        {"gen_heads", "2", "generator attention heads"},
        {"disc_layers", "2", "discriminator encoder layers"},
        {"disc_hidden", "32", "discriminator hidden size"},
        {"disc_heads", "4", "discriminator attention heads"},
        {"dropout", "0.0", "single dropout rate applied inside encoder blocks"},
        {"lr", "1e-3", "Adam base learning rate"},
        {"warmup_steps", "100", "linear learning-rate warmup length"},
        {"eval_every", "50", "steps between drift measurements and buffer audits"},
        {"checkpoint_every", "500", "checkpoint cadence; 0 keeps only step 0 and final"},
        {"drift_eval_positions", "512", "masked positions in the in-run drift probe"},
        {"probe_epochs", "3", "fine-tuning epochs for the probe"},
        {"probe_lr", "1e-4", "fine-tuning learning rate"},
        {"probe_seeds", "3", "fine-tuning seeds per checkpoint"},
        {"jobs", "1", "parallel fine-tuning workers for the probe"},
    };
    return schema;
}

Config Config::defaults() {
    Config c;
    for (const auto& k : config_schema()) {
        c.values_[k.key] = k.default_value;
        c.overridden_[k.key] = false;
    }
    return c;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    it->second = value;
    overridden_[key] = true;
}

bool Config::has_default(const std::string& key) const {
    auto it = overridden_.find(key);
    if (it == overridden_.end()) throw ConfigError("unknown config key: " + key);
    return !it->second;
}

void Config::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    std::vector<std::string> unknown;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed config line " + std::to_string(lineno) + ": " + line);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (values_.find(key) == values_.end()) {
            unknown.push_back(key);
            continue;
        }
        values_[key] = value;
        overridden_[key] = true;
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config key";
        if (unknown.size() > 1) msg += "s";
        msg += ":";
        for (const auto& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

long Config::get_long(const std::string& key) const {
    try {
        std::size_t pos = 0;
        long v = std::stol(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + get(key) + "'");
    }
}

int Config::get_int(const std::string& key) const { return static_cast<int>(get_long(key)); }

double Config::get_double(const std::string& key) const {
    try {
        std::size_t pos = 0;
        double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + get(key) + "'");
    }
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string Config::hash() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64-bit
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [k, v] : values_) {
        mix(k);
        mix("=");
        mix(v);
        mix("\n");
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

std::string Config::echo() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
    return out.str();
}

}  // namespace tmr
