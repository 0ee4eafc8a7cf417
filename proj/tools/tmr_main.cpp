#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "tmr/checks.hpp"
#include "tmr/config.hpp"
#include "tmr/probe.hpp"
#include "tmr/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string flag_name(const std::string& key) {
    std::string out = "--";
    for (char c : key) out.push_back(c == '_' ? '-' : c);
    return out;
}

struct ConfigCli {
    std::string config_path;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key=value config file; flags override its values");
        for (const auto& key : tmr::config_schema()) {
            app->add_option_function<std::string>(
                   flag_name(key.key),
                   [this, k = key.key](const std::string& v) { overrides[k] = v; },
                   key.help + " (default: " + key.default_value + ")")
                ->type_name("VALUE");
        }
    }

    tmr::Config resolve() const {
        tmr::Config cfg = tmr::Config::defaults();
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        return cfg;
    }
};

const char* kBufferKeys[] = {"buffer_capacity", "alpha",     "init_strategy",  "update_strategy",
                             "ridge",           "ucb_alpha", "lsr_refit_every", "priority_floor"};

void warn_ignored_buffer_flags(const ConfigCli& cli, const tmr::Config& cfg) {
    if (cfg.get("mode") != "electra_baseline") return;
    for (const char* key : kBufferKeys) {
        if (cli.overrides.count(key))
            std::cerr << "warning: " << flag_name(key)
                      << " is ignored in electra_baseline mode (no memory buffer)\n";
    }
}

bool wildcard_match(const std::string& pattern, const std::string& text) {
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& patterns) {
    std::vector<fs::path> stems;
    auto push_stem = [&stems](fs::path p) {
        if (p.extension() == ".manifest" || p.extension() == ".blob") p.replace_extension();
        if (std::find(stems.begin(), stems.end(), p) == stems.end()) stems.push_back(p);
    };
    for (const std::string& pattern : patterns) {
        if (pattern.find('*') == std::string::npos) {
            push_stem(pattern);
            continue;
        }
        const fs::path pat(pattern);
        const fs::path dir = pat.parent_path().empty() ? fs::path(".") : pat.parent_path();
        std::vector<fs::path> found;
        if (fs::is_directory(dir)) {
            for (const auto& entry : fs::directory_iterator(dir)) {
                if (wildcard_match(pat.filename().string(), entry.path().filename().string()))
                    found.push_back(entry.path());
            }
        }
        std::sort(found.begin(), found.end());
        for (auto& f : found) push_stem(f);
    }
    return stems;
}

int cmd_pretrain(const ConfigCli& cli) {
    tmr::Config cfg = cli.resolve();
    warn_ignored_buffer_flags(cli, cfg);
    tmr::RunReport report = tmr::run_pretraining(cfg);
    std::cout << "pretraining finished: " << report.series.size() << " steps\n";
    if (!report.series.empty()) {
        const auto& last = report.series.back();
        std::cout << "final loss_g " << last.loss_g << ", loss_d " << last.loss_d
                  << ", drift_exact_recovery " << last.drift_exact_recovery << "\n";
    }
    std::cout << "outputs in " << cfg.get("out_dir") << " (metrics.csv, report.json, checkpoints)\n";
    return 0;
}

int cmd_verify(const ConfigCli& cli, const std::string& suite) {
    tmr::Config cfg = cli.resolve();
    std::vector<tmr::CheckResult> results;
    if (suite == "sampling") {
        results = tmr::verify_sampling();
    } else if (suite == "gradients") {
        results = tmr::verify_gradients();
    } else if (suite == "buffer") {
        results = tmr::verify_buffer();
    } else if (suite == "drift") {
        results = tmr::verify_drift(cfg);
    } else {
        throw tmr::ConfigError("unknown verify suite: " + suite +
                               " (expected sampling | gradients | buffer | drift)");
    }
    tmr::print_results(results);
    return tmr::all_pass(results) ? 0 : 1;
}

int cmd_bench(const ConfigCli& cli, long iterations) {
    tmr::Config cfg = cli.resolve();
    tmr::BenchResult bench = tmr::bench_strategies(cfg, iterations);

    std::ostringstream csv;
    csv << "strategy,seconds_per_100_iters,backward_calls_per_step\n";
    csv.precision(6);
    for (const auto& row : bench.rows)
        csv << row.strategy << ',' << row.seconds_per_100_iters << ',' << row.backward_calls_per_step
            << '\n';
    std::cout << csv.str();
    std::cout << "ordering grad_norm > grad_bound > loss_diff: " << (bench.ordering_ok ? "OK" : "VIOLATED")
              << "\n";
    std::cout << "loss_diff / baseline = " << bench.loss_diff_ratio
              << (bench.loss_diff_overhead_ok ? " (<= 1.10 OK)" : " (exceeds 1.10)") << "\n";

    const fs::path out_dir = cfg.get("out_dir");
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "bench.csv");
    out << csv.str();
    return bench.ordering_ok && bench.loss_diff_overhead_ok ? 0 : 1;
}

int cmd_probe(const ConfigCli& cli, const std::vector<std::string>& ckpt_patterns,
              const std::string& task_path, const std::string& vocab_path, const std::string& out_path) {
    tmr::Config cfg = cli.resolve();
    std::vector<fs::path> stems = expand_checkpoints(ckpt_patterns);
    if (stems.empty()) throw std::runtime_error("no checkpoints matched");
    for (const auto& stem : stems)
        if (!fs::exists(stem.string() + ".manifest"))
            throw std::runtime_error("checkpoint not found: " + stem.string());

    const fs::path vocab_file =
        vocab_path.empty() ? stems.front().parent_path() / "vocab.tsv" : fs::path(vocab_path);
    tmr::Vocab vocab = tmr::Vocab::load(vocab_file);

    tmr::ProbeTask task;
    if (!task_path.empty()) {
        task = tmr::ProbeTask::load_tsv(task_path);
    } else {
        auto windows = tmr::load_corpus_windows(vocab, cfg.get("corpus"), cfg.get_int("max_seq_len"));
        task = tmr::make_bundled_task(vocab, windows, static_cast<std::uint64_t>(cfg.get_long("seed")),
                                      48, 64);
    }

    std::vector<std::uint64_t> seeds;
    const std::uint64_t base = static_cast<std::uint64_t>(cfg.get_long("seed"));
    for (int i = 0; i < cfg.get_int("probe_seeds"); ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));

    auto rows = tmr::compare_checkpoints(stems, vocab, task, seeds, cfg.get_int("probe_epochs"),
                                         cfg.get_double("probe_lr"), cfg.get_int("jobs"));
    const std::string csv = tmr::compare_table_csv(rows);
    std::cout << csv;

    const fs::path out_file = out_path.empty() ? fs::path(cfg.get("out_dir")) / "probe_compare.csv"
                                               : fs::path(out_path);
    fs::create_directories(out_file.parent_path().empty() ? fs::path(".") : out_file.parent_path());
    std::ofstream out(out_file);
    out << csv;
    std::cout << "written to " << out_file.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-replay pretraining for a generator/discriminator transformer pair"};
    app.require_subcommand(1);

    ConfigCli pretrain_cli, verify_cli, bench_cli, probe_cli;

    CLI::App* pretrain = app.add_subcommand("pretrain", "run the pretraining loop");
    pretrain_cli.attach(pretrain);

    CLI::App* verify = app.add_subcommand("verify", "run a property suite: sampling | gradients | buffer | drift");
    std::string suite;
    verify->add_option("suite", suite, "suite name")->required();
    verify_cli.attach(verify);

    CLI::App* bench = app.add_subcommand("bench", "time the update strategies over identical configs");
    long iterations = 100;
    bench->add_option("--iterations", iterations, "iterations per strategy (default: 100)");
    bench_cli.attach(bench);

    CLI::App* probe = app.add_subcommand("probe", "fine-tune checkpoints on a classification task");
    std::vector<std::string> ckpts;
    std::string task_path, vocab_path, out_path;
    probe->add_option("--checkpoints", ckpts, "checkpoint stems or globs")->required()->expected(-1);
    probe->add_option("--task", task_path, "task TSV (label<TAB>text); default: bundled synthetic task");
    probe->add_option("--vocab", vocab_path, "vocab file; default: vocab.tsv next to the first checkpoint");
    probe->add_option("--out", out_path, "comparison CSV path; default: <out_dir>/probe_compare.csv");
    probe_cli.attach(probe);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pretrain->parsed()) return cmd_pretrain(pretrain_cli);
        if (verify->parsed()) return cmd_verify(verify_cli, suite);
        if (bench->parsed()) return cmd_bench(bench_cli, iterations);
        if (probe->parsed()) return cmd_probe(probe_cli, ckpts, task_path, vocab_path, out_path);
    } catch (const tmr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
