#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "seslr/config.hpp"
#include "seslr/continual.hpp"

namespace fs = std::filesystem;
using namespace seslr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

fs::path resolve_out_dir(const std::string& configured) {
    fs::path dir(configured);
    if (dir.is_relative())
        if (const char* root = std::getenv("SESLR_OUT_ROOT")) dir = fs::path(root) / dir;
    return dir;
}

bool wants(const OutputConfig& out, const std::string& fmt) {
    return std::find(out.formats.begin(), out.formats.end(), fmt) != out.formats.end();
}

void write_outputs(const ExperimentConfig& cfg, const RunResult& rr, const fs::path& dir) {
    fs::create_directories(dir);
    if (wants(cfg.output, "txt")) write_report_txt(rr.report, dir / "report.txt");
    if (wants(cfg.output, "json")) write_report_json(rr.report, dir / "report.json");
    if (wants(cfg.output, "csv")) write_confusion_csv(rr.report, dir / "confusion.csv");
    if (cfg.output.write_buffer && rr.buffer.has_value()) rr.buffer->save(dir / "buffer.slrb");
}

std::vector<uint8_t> load_extractor_blob(const ExperimentConfig& cfg, const ExperimentSetup& setup) {
    Network net(setup.net_spec, Rng::derive(setup.seed, "init"));
    net.load_params(cfg.extractor_path);
    return net.save_state_bytes();
}

RunResult run_one(const ExperimentConfig& cfg, const std::vector<uint8_t>* blob) {
    ExperimentSetup setup = build_setup(cfg);
    ExperimentData data = prepare_data(cfg);
    std::vector<uint8_t> own_blob;
    if (!blob && !cfg.extractor_path.empty()) {
        own_blob = load_extractor_blob(cfg, setup);
        blob = &own_blob;
    }
    RunResult rr = run_experiment(setup, cfg.strategy.kind, data, blob);
    rr.report.config_echo = cfg.echo_json();
    return rr;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets) {
    ExperimentConfig cfg = load_config_with_overrides(config_path, sets);
    RunResult rr = run_one(cfg, nullptr);
    fs::path dir = resolve_out_dir(cfg.output.directory);
    write_outputs(cfg, rr, dir);
    std::cout << "strategy " << rr.report.strategy << "  seed " << rr.report.seed << "  faa "
              << rr.report.faa << "  recency_bias " << rr.report.recency_bias_fraction << "\n";
    std::cout << "outputs written to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& out_file) {
    ExperimentConfig cfg = load_config_with_overrides(config_path, sets);
    ExperimentSetup setup = build_setup(cfg);
    ExperimentData data = prepare_data(cfg);
    Network net(setup.net_spec, Rng::derive(setup.seed, "init"));
    auto losses = pretrain(net, data.pretrain_set, setup.strategy, data.stream.batch_size, setup.time_steps,
                           setup.seed);
    fs::path out = out_file.empty() ? resolve_out_dir(cfg.output.directory) / "extractor.slrp"
                                    : fs::path(out_file);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    net.save_params(out);
    std::cout << "pretrained " << losses.size() << " epochs";
    if (!losses.empty()) std::cout << ", final loss " << losses.back();
    std::cout << "; parameters saved to " << out.string() << "\n";
    return kExitOk;
}

struct SweepPoint {
    ExperimentConfig cfg;
    std::string value_text;
    uint64_t seed;
    fs::path dir;
    MetricsReport report;
    bool done = false;
};

// pretraining depends on these paths; sweeping any of them forbids
// sharing one pretrained extractor across points
bool affects_pretraining(const std::string& param) {
    static const char* prefixes[] = {"dataset.", "model.", "seed", "extractor_path",
                                     "strategy.pretrain", "strategy.optimizer", "strategy.lr_pretrain"};
    for (const char* p : prefixes)
        if (param.rfind(p, 0) == 0) return true;
    return false;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    return out;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& sets, const std::string& param,
              const std::string& values_csv, const std::string& seeds_csv, unsigned jobs) {
    std::vector<std::string> values;
    {
        std::istringstream is(values_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) values.push_back(tok);
    }
    if (values.empty()) throw ConfigError("sweep: no values given");

    ExperimentConfig base = load_config_with_overrides(config_path, sets);
    std::vector<uint64_t> seeds;
    if (seeds_csv.empty()) {
        seeds.push_back(base.seed);
    } else {
        std::istringstream is(seeds_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) seeds.push_back(std::stoull(tok));
    }

    fs::path root = resolve_out_dir(base.output.directory);
    const bool share_pretraining = !affects_pretraining(param);

    // validate every point before any training starts
    std::vector<SweepPoint> points;
    for (uint64_t seed : seeds)
        for (const std::string& v : values) {
            std::vector<std::string> overrides = sets;
            overrides.push_back(param + "=" + v);
            overrides.push_back("seed=" + std::to_string(seed));
            SweepPoint pt;
            pt.cfg = load_config_with_overrides(config_path, overrides);
            pt.value_text = v;
            pt.seed = seed;
            pt.dir = root / "points" / (sanitize(param) + "=" + sanitize(v) + "__seed=" + std::to_string(seed));
            points.push_back(std::move(pt));
        }

    std::map<uint64_t, std::vector<uint8_t>> blob_cache;
    std::mutex blob_mutex;
    std::atomic<size_t> next{0};
    std::mutex fail_mutex;
    std::string failure;

    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1)) {
            SweepPoint& pt = points[i];
            try {
                const std::vector<uint8_t>* blob = nullptr;
                std::vector<uint8_t> local;
                if (share_pretraining) {
                    std::unique_lock lock(blob_mutex);
                    auto it = blob_cache.find(pt.seed);
                    if (it == blob_cache.end()) {
                        lock.unlock();
                        ExperimentSetup setup = build_setup(pt.cfg);
                        ExperimentData data = prepare_data(pt.cfg);
                        local = make_pretrained_state(setup, data);
                        lock.lock();
                        it = blob_cache.emplace(pt.seed, std::move(local)).first;
                    }
                    local = it->second;
                    blob = &local;
                    lock.unlock();
                    RunResult rr = [&] {
                        ExperimentSetup setup = build_setup(pt.cfg);
                        ExperimentData data = prepare_data(pt.cfg);
                        return run_experiment(setup, pt.cfg.strategy.kind, data, blob);
                    }();
                    rr.report.config_echo = pt.cfg.echo_json();
                    write_outputs(pt.cfg, rr, pt.dir);
                    pt.report = rr.report;
                } else {
                    RunResult rr = run_one(pt.cfg, nullptr);
                    write_outputs(pt.cfg, rr, pt.dir);
                    pt.report = rr.report;
                }
                pt.done = true;
            } catch (const std::exception& e) {
                std::scoped_lock lock(fail_mutex);
                if (failure.empty()) failure = e.what();
            }
        }
    };

    unsigned n_threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(points.size())));
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (!failure.empty()) {
        std::cerr << "sweep point failed: " << failure << "\n";
        return kExitRuntime;
    }

    fs::create_directories(root);
    {
        std::ofstream csv(root / "sweep.csv", std::ios::trunc);
        csv << "param,value,seed,faa,recency_bias,buffer_payload_bytes,wallclock_seconds\n";
        for (const auto& pt : points)
            csv << param << "," << pt.value_text << "," << pt.seed << "," << pt.report.faa << ","
                << pt.report.recency_bias_fraction << "," << pt.report.buffer_payload_bytes << ","
                << pt.report.wallclock_seconds << "\n";
    }
    {
        std::ofstream csv(root / "summary.csv", std::ios::trunc);
        csv << "param,value,runs,faa_mean,faa_std,recency_bias_mean,recency_bias_std\n";
        for (const std::string& v : values) {
            std::vector<double> faas, biases;
            for (const auto& pt : points)
                if (pt.value_text == v) {
                    faas.push_back(pt.report.faa);
                    biases.push_back(pt.report.recency_bias_fraction);
                }
            auto mean = [](const std::vector<double>& xs) {
                double s = 0.0;
                for (double x : xs) s += x;
                return s / static_cast<double>(xs.size());
            };
            auto stddev = [&](const std::vector<double>& xs, double m) {
                if (xs.size() < 2) return 0.0;
                double s = 0.0;
                for (double x : xs) s += (x - m) * (x - m);
                return std::sqrt(s / static_cast<double>(xs.size() - 1));
            };
            double fm = mean(faas), bm = mean(biases);
            csv << param << "," << v << "," << faas.size() << "," << fm << "," << stddev(faas, fm) << ","
                << bm << "," << stddev(biases, bm) << "\n";
        }
    }
    std::cout << "sweep complete: " << points.size() << " runs, results under " << root.string() << "\n";
    return kExitOk;
}

int cmd_report(const std::string& dir_arg) {
    fs::path dir(dir_arg);
    if (!fs::exists(dir)) {
        std::cerr << "report: directory " << dir.string() << " does not exist\n";
        return kExitRuntime;
    }
    std::vector<MetricsReport> reports;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "report.json")
            reports.push_back(read_report_json(entry.path()));
    if (reports.empty()) {
        std::cerr << "report: no report.json files under " << dir.string() << "\n";
        return kExitRuntime;
    }
    std::sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
        if (a.strategy != b.strategy) return a.strategy < b.strategy;
        if (a.seed != b.seed) return a.seed < b.seed;
        return a.faa > b.faa;
    });

    std::ostringstream table;
    table << "strategy        seed        faa   recency_bias   buffer_bytes\n";
    for (const auto& r : reports) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-14s %5llu %10.4f %14.4f %14llu\n", r.strategy.c_str(),
                      static_cast<unsigned long long>(r.seed), r.faa, r.recency_bias_fraction,
                      static_cast<unsigned long long>(r.buffer_payload_bytes));
        table << line;
    }
    table << "\nper-strategy mean faa:\n";
    std::map<std::string, std::vector<double>> by_strategy;
    for (const auto& r : reports) by_strategy[r.strategy].push_back(r.faa);
    for (const auto& [name, faas] : by_strategy) {
        double m = 0.0;
        for (double f : faas) m += f;
        m /= static_cast<double>(faas.size());
        double sd = 0.0;
        if (faas.size() > 1) {
            for (double f : faas) sd += (f - m) * (f - m);
            sd = std::sqrt(sd / static_cast<double>(faas.size() - 1));
        }
        char line[120];
        std::snprintf(line, sizeof(line), "%-14s %10.4f +- %.4f (%zu runs)\n", name.c_str(), m, sd,
                      faas.size());
        table << line;
    }

    std::cout << table.str();
    std::ofstream txt(dir / "comparison.txt", std::ios::trunc);
    txt << table.str();
    std::ofstream csv(dir / "comparison.csv", std::ios::trunc);
    csv << "strategy,seed,faa,recency_bias,buffer_payload_bytes,wallclock_seconds\n";
    for (const auto& r : reports)
        csv << r.strategy << "," << r.seed << "," << r.faa << "," << r.recency_bias_fraction << ","
            << r.buffer_payload_bytes << "," << r.wallclock_seconds << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SESLR continual-learning lab: spiking networks with bit-packed latent replay"};
    app.require_subcommand(1);

    std::string config_path, out_file, param, values_csv, seeds_csv, report_dir;
    std::vector<std::string> sets;
    unsigned jobs = 1;

    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("--config", config_path, "experiment config (json)")->required();
    run->add_option("--set", sets, "override a config value, e.g. strategy.noise_sigma=0.4");

    auto* sweep = app.add_subcommand("sweep", "run one experiment per parameter value");
    sweep->add_option("--config", config_path, "experiment config (json)")->required();
    sweep->add_option("--param", param, "dotted config path to sweep")->required();
    sweep->add_option("--values", values_csv, "comma-separated values")->required();
    sweep->add_option("--seeds", seeds_csv, "comma-separated seeds (default: config seed)");
    sweep->add_option("--jobs", jobs, "parallel worker threads");
    sweep->add_option("--set", sets, "fixed overrides applied to every point");

    auto* report = app.add_subcommand("report", "render comparison tables from stored runs");
    report->add_option("--dir", report_dir, "directory holding run outputs")->required();

    auto* pre = app.add_subcommand("pretrain", "pretrain and persist network parameters for reuse");
    pre->add_option("--config", config_path, "experiment config (json)")->required();
    pre->add_option("--out", out_file, "parameter file to write (default <output dir>/extractor.slrp)");
    pre->add_option("--set", sets, "override a config value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, sets);
        if (sweep->parsed()) return cmd_sweep(config_path, sets, param, values_csv, seeds_csv, jobs);
        if (report->parsed()) return cmd_report(report_dir);
        if (pre->parsed()) return cmd_pretrain(config_path, sets, out_file);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
