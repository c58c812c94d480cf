// nestsvd: run, oracle and gradcheck commands over JSON experiment configs.
//
// Exit codes: 0 success, 1 gradient check failure, 2 invalid config or
// arguments, 3 training aborted, 4 any other runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "nestsvd/checkpoint.hpp"
#include "nestsvd/config.hpp"
#include "nestsvd/errors.hpp"
#include "nestsvd/experiment.hpp"
#include "nestsvd/parallel.hpp"

namespace fs = std::filesystem;
using namespace nestsvd;

namespace {

constexpr int kExitGradcheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;
constexpr int kExitRuntime = 4;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

int configure_threads(const Options& opt) {
    int threads = 1;
    if (opt.threads) {
        threads = *opt.threads;
    } else if (const char* env = std::getenv("NESTSVD_THREADS"); env && *env) {
        try {
            std::size_t used = 0;
            threads = std::stoi(env, &used);
            if (used != std::string(env).size()) threads = 0;
        } catch (const std::exception&) {
            threads = 0;
        }
        if (threads < 1) throw InputError("NESTSVD_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    if (threads < 1) throw InputError("--threads must be positive");
    set_thread_count(threads);
    return threads;
}

/// Loads and resolves the config, then applies command-line overrides so the
/// resolved copy on disk reproduces the run.
Experiment prepare(const Options& opt, fs::path& out_dir) {
    configure_threads(opt);
    Json config = load_config(opt.config);
    if (opt.seed) config["train"]["seed"] = *opt.seed;
    if (opt.out) config["output_dir"] = *opt.out;
    out_dir = config["output_dir"].get<std::string>();
    return build_experiment(config);
}

std::vector<CheckpointEntry> checkpoint_entries(const FunctionSystem& params, const FunctionSystem& ema) {
    std::vector<CheckpointEntry> entries;
    entries.push_back({"f", params.f.spec, params.f.params});
    if (params.g) entries.push_back({"g", params.g->spec, params.g->params});
    entries.push_back({"f_ema", ema.f.spec, ema.f.params});
    if (ema.g) entries.push_back({"g_ema", ema.g->spec, ema.g->params});
    return entries;
}

int cmd_run(const Options& opt) {
    fs::path dir;
    const Experiment ex = prepare(opt, dir);
    fs::create_directories(dir);
    write_text(dir / "config.resolved.json", ex.config.dump(2) + "\n");

    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());
    const LogSink sink = [&](const LogEntry& entry) {
        metrics << log_entry_json(entry).dump() << '\n';
        metrics.flush();
        std::cerr << "iter " << entry.iteration << "  loss " << entry.loss.total << "  skipped " << entry.skipped
                  << '\n';
    };
    const TrainResult result = train(ex.train, ex.init, *ex.backend, ex.masks, *ex.train_sampler, sink);

    const EvaluationResult eval = evaluate_experiment(ex, ex.use_ema ? result.ema : result.params);
    const std::string csv = eval_csv(eval.report);
    write_text(dir / "eval.csv", csv);
    write_text(dir / "eval.json", eval_json(ex, eval).dump(2) + "\n");
    save_checkpoint(dir / "checkpoint.bin", checkpoint_entries(result.params, result.ema));
    std::cout << csv;
    if (result.skipped > 0) std::cout << "skipped iterations: " << result.skipped << '\n';
    if (eval.dropped > 0) std::cout << "evaluation samples dropped for anomalies: " << eval.dropped << '\n';
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

int cmd_oracle(const Options& opt) {
    fs::path dir;
    const Experiment ex = prepare(opt, dir);
    const OracleTables tables = oracle_tables(ex);
    fs::create_directories(dir);
    write_text(dir / "oracle_spectrum.csv", tables.spectrum_csv);
    write_text(dir / "oracle_functions.csv", tables.functions_csv);
    std::cout << tables.spectrum_csv << "wrote " << dir.string() << '\n';
    return 0;
}

int cmd_gradcheck(const Options& opt) {
    fs::path dir;
    const Experiment ex = prepare(opt, dir);
    if (ex.train.method != Method::nestedlora) {
        throw ConfigError("/method", "gradcheck covers the nestedlora cotangents only");
    }
    const bool exact = ex.train_sampler->kind() == SamplerKind::full_population;
    const bool exact_objective = exact && ex.masks.mode != MaskMode::sequential;
    const GradcheckReport report =
        gradcheck(ex.gradcheck, ex.init, *ex.backend, ex.masks, gradcheck_batch(ex), exact, exact_objective);
    std::cout << "probe,parameter,analytic,numeric,relative_error\n";
    for (const auto& e : report.entries) {
        std::cout << e.probe << ',' << e.parameter << ',' << e.analytic << ',' << e.numeric << ','
                  << e.relative_error << '\n';
    }
    std::cout << "max relative error: " << report.max_relative_error << " (tolerance " << ex.gradcheck.tolerance
              << ")\n";
    if (report.passed) {
        std::cout << "gradcheck passed\n";
        return 0;
    }
    const auto& worst = report.entries[static_cast<std::size_t>(report.worst)];
    std::cerr << "gradcheck FAILED at parameter " << worst.parameter << " (" << worst.probe << "): analytic "
              << worst.analytic << ", numeric " << worst.numeric << ", relative error " << worst.relative_error
              << '\n';
    return kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nested low-rank operator SVD: training, exact oracles and gradient checks"};
    app.require_subcommand(1);
    Options opt;
    auto add_common = [&opt](CLI::App* sub) {
        sub->add_option("config", opt.config, "experiment config (JSON)")->required();
        sub->add_option("--seed", opt.seed, "override train.seed");
        sub->add_option("--out", opt.out, "override output_dir");
        sub->add_option("--threads", opt.threads, "worker threads (default: NESTSVD_THREADS or 1)");
    };
    CLI::App* run = app.add_subcommand("run", "train, evaluate and write run artifacts");
    CLI::App* oracle = app.add_subcommand("oracle", "write exact spectra and functions");
    CLI::App* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
    for (CLI::App* sub : {run, oracle, grad}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(opt);
        if (oracle->parsed()) return cmd_oracle(opt);
        return cmd_gradcheck(opt);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted: " << e.what() << '\n';
        return kExitAborted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
