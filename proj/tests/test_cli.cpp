// End-to-end checks of the nestsvd executable: artifacts, exit codes,
// determinism and the oracle tables.

#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "nestsvd/checkpoint.hpp"
#include "nestsvd/config.hpp"
#include "nestsvd/experiment.hpp"

namespace fs = std::filesystem;
using namespace nestsvd;

namespace {

/// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("nestsvd_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI with `args` from inside `dir`.
Outcome cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && NESTSVD_THREADS=1 '" NESTSVD_CLI_PATH "' " + args +
                            " > stdout.txt 2> stderr.txt";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(dir / "stdout.txt");
    o.err = slurp(dir / "stderr.txt");
    fs::remove(dir / "stdout.txt");
    fs::remove(dir / "stderr.txt");
    return o;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<std::string> cells(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

const char* kMatrixConfig = R"({
  "problem": {"type": "matrix", "random": {"rows": 8, "cols": 6, "seed": 3}},
  "modes": 3,
  "train": {"iterations": 200, "optimizer": {"type": "sgd_momentum", "lr": 0.05}, "lr_schedule": "constant",
            "eval_every": 50},
  "output_dir": "run"
})";

}  // namespace

TEST_CASE("zero-iteration run writes every artifact and evaluates the initial model") {
    const fs::path dir = scratch("zero");
    Json c = Json::parse(kMatrixConfig);
    c["train"]["iterations"] = 0;
    write(dir / "cfg.json", c.dump(2));
    const Outcome o = cli(dir, "run cfg.json");
    REQUIRE(o.code == 0);
    for (const char* f : {"metrics.jsonl", "eval.json", "eval.csv", "checkpoint.bin", "config.resolved.json"}) {
        CHECK(fs::exists(dir / "run" / f));
    }
    const auto rows = lines(slurp(dir / "run" / "eval.csv"));
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "mode,eigenvalue_estimate,relative_error_pct,angle_distance,norm_sigma,group_id,subspace_distance");
    CHECK(cells(rows[1]).size() == 7);
    CHECK(rows[4].rfind("orthogonality_error,", 0) == 0);
    CHECK(slurp(dir / "run" / "metrics.jsonl").empty());

    // The checkpoint holds the initial parameters bit for bit.
    const Experiment ex = build_experiment(Json::parse(slurp(dir / "run" / "config.resolved.json")));
    const auto entries = load_checkpoint(dir / "run" / "checkpoint.bin");
    REQUIRE(entries.size() == 4);
    CHECK(entries[0].name == "f");
    CHECK(entries[1].name == "g");
    CHECK(entries[0].params.values == ex.init.f.params.values);
    CHECK(entries[1].params.values == ex.init.g->params.values);
    CHECK(entries[2].params.values == ex.init.f.params.values);

    // eval.json mirrors eval.csv on the initial model.
    const Json e = Json::parse(slurp(dir / "run" / "eval.json"));
    const EvalReport r = evaluate_experiment(ex, ex.init).report;
    REQUIRE(e["modes"].size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(e["modes"][k]["eigenvalue_estimate"].get<double>() == r.eigenvalue_estimates(static_cast<Index>(k)));
    }
    CHECK(eval_csv(r) == slurp(dir / "run" / "eval.csv"));
}

TEST_CASE("training run logs metrics and reproduces byte for byte") {
    const fs::path dir = scratch("determinism");
    write(dir / "cfg.json", kMatrixConfig);
    REQUIRE(cli(dir, "run cfg.json --out a").code == 0);
    REQUIRE(cli(dir, "run cfg.json --out b").code == 0);
    REQUIRE(cli(dir, "run cfg.json --out c --seed 9").code == 0);
    const std::string a = slurp(dir / "a" / "eval.csv");
    CHECK(a == slurp(dir / "b" / "eval.csv"));
    CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
    CHECK(a != slurp(dir / "c" / "eval.csv"));
    CHECK(Json::parse(slurp(dir / "c" / "config.resolved.json"))["train"]["seed"] == 9);

    // Logged at 0, 50, 100, 150 and the final iteration 199.
    const auto log = lines(slurp(dir / "a" / "metrics.jsonl"));
    REQUIRE(log.size() == 5);
    const Json last = Json::parse(log.back());
    CHECK(last["iteration"] == 199);
    CHECK(last["norms"].size() == 3);
    CHECK(last["loss"].get<double>() < Json::parse(log.front())["loss"].get<double>());

    // Re-running the resolved config elsewhere reproduces eval.csv.
    fs::copy_file(dir / "a" / "config.resolved.json", dir / "resolved.json");
    REQUIRE(cli(dir, "run resolved.json --out again").code == 0);
    CHECK(slurp(dir / "again" / "eval.csv") == a);
}

TEST_CASE("thread count does not change results") {
    const fs::path dir = scratch("threads");
    Json c = Json::parse(R"({"problem": {"type": "hydrogen2d"}, "modes": 3,
        "model": {"hidden_widths": [8], "fourier": {"features": 4}},
        "train": {"iterations": 5, "batch_size": 8, "eval_every": 5}, "eval": {"samples": 64}})");
    write(dir / "cfg.json", c.dump());
    REQUIRE(cli(dir, "run cfg.json --out one --threads 1").code == 0);
    REQUIRE(cli(dir, "run cfg.json --out three --threads 3").code == 0);
    CHECK(slurp(dir / "one" / "eval.csv") == slurp(dir / "three" / "eval.csv"));
    const auto rows = lines(slurp(dir / "one" / "eval.csv"));
    CHECK(rows.size() == 5);  // header, 3 modes, orthogonality
}

TEST_CASE("commands write only inside the output directory") {
    const fs::path dir = scratch("containment");
    write(dir / "cfg.json", kMatrixConfig);
    REQUIRE(cli(dir, "run cfg.json").code == 0);
    REQUIRE(cli(dir, "oracle cfg.json --out o").code == 0);
    REQUIRE(cli(dir, "gradcheck cfg.json").code == 0);
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) names.insert(entry.path().filename().string());
    CHECK(names == std::set<std::string>{"cfg.json", "run", "o"});
}

TEST_CASE("invalid configs exit 2 with a line-precise message") {
    const fs::path dir = scratch("invalid");
    write(dir / "cfg.json", "{\n  \"problem\": {\"type\": \"matrix\", \"matrix\": [[1]]},\n  \"modes\": 1,\n"
                            "  \"train\": {\n    \"ema_decay\": 2\n  }\n}\n");
    Outcome o = cli(dir, "run cfg.json");
    CHECK(o.code == 2);
    CHECK(o.err.find("cfg.json:5:18: /train/ema_decay") != std::string::npos);

    write(dir / "syntax.json", "{\n  \"modes\": 1,\n  \"problem\": {\"type\": \"matrix\" \"matrix\": [[1]]}\n}\n");
    o = cli(dir, "run syntax.json");
    CHECK(o.code == 2);
    CHECK(o.err.find("syntax.json:3:") != std::string::npos);

    CHECK(cli(dir, "run missing.json").code == 2);
    CHECK(cli(dir, "run").code == 2);
    CHECK(cli(dir, "bogus cfg.json").code == 2);
    CHECK(cli(dir, "run cfg.json --threads 0").code == 2);
    CHECK_FALSE(fs::exists(dir / "runs"));
}

TEST_CASE("training abort exits 3") {
    const fs::path dir = scratch("abort");
    // Every operator value exceeds the anomaly threshold, so every iteration is skipped.
    write(dir / "cfg.json", R"({"problem": {"type": "hydrogen2d", "anomaly_threshold": 1e-300}, "modes": 2,
        "model": {"hidden_widths": [4], "fourier": null}, "train": {"iterations": 20, "batch_size": 8},
        "output_dir": "run"})");
    const Outcome o = cli(dir, "run cfg.json");
    CHECK(o.code == 3);
    CHECK(o.err.find("aborted") != std::string::npos);
}

TEST_CASE("gradcheck passes for matrix, hydrogen and dependence-kernel configs") {
    const fs::path dir = scratch("gradcheck");
    write(dir / "m.json", kMatrixConfig);
    write(dir / "h.json", R"({"problem": {"type": "hydrogen2d"}, "modes": 3,
        "model": {"hidden_widths": [16, 16], "fourier": {"features": 8}}, "gradcheck": {"batch_size": 16}})");
    write(dir / "c.json", R"({"problem": {"type": "discrete_cdk", "random": {"rows": 8, "cols": 6, "seed": 1}},
        "modes": 3, "masks": {"type": "sequential"}})");
    for (const char* f : {"m.json", "h.json", "c.json"}) {
        const Outcome o = cli(dir, std::string("gradcheck ") + f);
        CHECK_MESSAGE(o.code == 0, f << ": " << o.out << o.err);
        CHECK(o.out.find("max relative error") != std::string::npos);
    }
}

TEST_CASE("a corrupted gradient fails the check with the offending parameter") {
    const fs::path dir = scratch("corrupt");
    Json c = Json::parse(kMatrixConfig);
    c["gradcheck"]["corrupt"] = true;
    write(dir / "cfg.json", c.dump());
    const Outcome o = cli(dir, "gradcheck cfg.json");
    CHECK(o.code == 1);
    CHECK(o.err.find("FAILED at parameter ") != std::string::npos);

    c["gradcheck"]["corrupt"] = false;
    c["method"] = "neuralef_unbiased";
    c["problem"] = Json::parse(R"({"type": "matrix", "matrix": [[2, 0], [0, 1]], "self_adjoint": true})");
    c["modes"] = 2;
    write(dir / "nef.json", c.dump());
    CHECK(cli(dir, "gradcheck nef.json").code == 2);
}

TEST_CASE("oracle spectra") {
    const fs::path dir = scratch("oracle");
    write(dir / "diag.json", R"({"problem": {"type": "matrix", "matrix": [[3, 0, 0], [0, 2, 0], [0, 0, 1]]},
        "modes": 3})");
    REQUIRE(cli(dir, "oracle diag.json --out d").code == 0);
    CHECK(slurp(dir / "d" / "oracle_spectrum.csv") ==
          "mode,value,group_id,multiplicity\n1,3,0,1\n2,2,1,1\n3,1,2,1\n");
    const auto fn = lines(slurp(dir / "d" / "oracle_functions.csv"));
    CHECK(fn.front() == "side,index,fn_1,fn_2,fn_3");
    CHECK(fn.size() == 1 + 3 + 3);

    write(dir / "pmf.json", R"({"problem": {"type": "discrete_cdk", "pmf": [[0.4, 0.1], [0.1, 0.4]]}, "modes": 1})");
    REQUIRE(cli(dir, "oracle pmf.json --out p").code == 0);
    CHECK(slurp(dir / "p" / "oracle_spectrum.csv") == "mode,value,group_id,multiplicity\n1,0.6,0,1\n");

    write(dir / "h.json", R"({"problem": {"type": "hydrogen2d"}, "modes": 16, "oracle": {"grid_points": 5}})");
    REQUIRE(cli(dir, "oracle h.json --out h").code == 0);
    const auto spec = lines(slurp(dir / "h" / "oracle_spectrum.csv"));
    REQUIRE(spec.size() == 17);
    const std::vector<std::pair<double, std::string>> shells = {{1.0, "1"}, {1.0 / 9, "3"}, {1.0 / 25, "5"},
                                                                 {1.0 / 49, "7"}};
    std::size_t row = 1;
    for (std::size_t s = 0; s < shells.size(); ++s) {
        for (int k = 0; k < std::stoi(shells[s].second); ++k, ++row) {
            const auto c = cells(spec[row]);
            CHECK(std::stod(c[1]) == doctest::Approx(shells[s].first).epsilon(1e-11));
            CHECK(c[2] == std::to_string(s));
            CHECK(c[3] == shells[s].second);
        }
    }
    const auto grid = lines(slurp(dir / "h" / "oracle_functions.csv"));
    CHECK(grid.size() == 1 + 25);
    CHECK(cells(grid.front()).size() == 2 + 16);

    write(dir / "big.json", R"({"problem": {"type": "matrix", "random": {"rows": 600, "cols": 4}}, "modes": 1})");
    CHECK(cli(dir, "oracle big.json --out b").code == 2);
}
