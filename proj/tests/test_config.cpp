#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nestsvd/config.hpp"
#include "nestsvd/experiment.hpp"
#include "nestsvd/linalg.hpp"

using namespace nestsvd;

namespace {

std::string error_pointer(const Json& raw) {
    try {
        resolve_config(raw);
    } catch (const ConfigError& e) {
        return e.pointer();
    }
    return "<accepted>";
}

Json matrix_config() {
    return Json::parse(R"({"problem": {"type": "matrix", "matrix": [[3, 0, 0], [0, 2, 0], [0, 0, 1], [0, 0, 0]]},
                           "modes": 2})");
}

/// Tabular parameters whose rows are `table`, flattened row-major.
ModelParams table_params(const Matrix& table) {
    ModelParams p;
    p.values.resize(table.size());
    for (Index i = 0; i < table.rows(); ++i)
        for (Index j = 0; j < table.cols(); ++j) p.values(i * table.cols() + j) = table(i, j);
    return p;
}

}  // namespace

TEST_CASE("hydrogen defaults mirror the published training setup") {
    const Json c = resolve_config(Json::parse(R"({"problem": {"type": "hydrogen2d"}, "modes": 16})"));
    const Json& t = c["train"];
    CHECK(t["optimizer"]["type"] == "rmsprop");
    CHECK(t["optimizer"]["lr"].get<double>() == 1e-4);
    CHECK(t["lr_schedule"] == "cosine");
    CHECK(t["ema_decay"].get<double>() == 0.995);
    CHECK(t["batch_size"].get<Index>() == 128);
    CHECK(t["sampler"]["type"] == "gaussian");
    CHECK(t["sampler"]["std"][0].get<double>() == 16.0);
    CHECK(c["eval"]["sampler"]["type"] == "uniform_box");
    CHECK(c["eval"]["sampler"]["lo"][0].get<double>() == -100.0);
    CHECK(c["eval"]["sampler"]["hi"][1].get<double>() == 100.0);
    CHECK(c["model"]["head_mode"] == "disjoint_heads");
    CHECK(c["model"]["hidden_widths"] == Json::array({128, 128}));
    CHECK(c["model"]["activation"] == "softplus");
    CHECK(c["model"]["fourier"]["scale"].get<double>() == 0.1);
    CHECK(c["model"]["fourier"]["append_raw_input"] == true);
}

TEST_CASE("oscillator defaults use the narrower sampler and box") {
    const Json c = resolve_config(Json::parse(R"({"problem": {"type": "oscillator2d", "shift": 6}, "modes": 8})"));
    CHECK(c["train"]["sampler"]["std"][1].get<double>() == 4.0);
    CHECK(c["eval"]["sampler"]["hi"][0].get<double>() == 5.0);
    CHECK(error_pointer(Json::parse(R"({"problem": {"type": "oscillator2d"}, "modes": 8})")) == "/problem/shift");
}

TEST_CASE("resolution is idempotent") {
    const std::vector<std::string> sources = {
        R"({"problem": {"type": "matrix", "random": {"rows": 8, "cols": 6, "seed": 3}}, "modes": 3})",
        R"({"problem": {"type": "matrix", "random": {"rows": 5, "cols": 5, "seed": 1}, "self_adjoint": true},
            "modes": 2, "method": "neuralef_unbiased", "train": {"sampler": {"type": "indices"}, "batch_size": 8}})",
        R"({"problem": {"type": "discrete_cdk", "pmf": [[0.4, 0.1], [0.1, 0.4]]}, "modes": 1,
            "masks": {"type": "sequential"}})",
        R"({"problem": {"type": "hydrogen2d"}, "modes": 4, "model": {"fourier": null},
            "eval": {"grouping": [[0], [1, 2, 3]], "measures": ["angle_distance"]}})",
    };
    for (const auto& s : sources) {
        const Json once = resolve_config(Json::parse(s));
        CHECK(resolve_config(once) == once);
    }
}

TEST_CASE("seeded random sources are inlined and reproducible") {
    const Json raw = Json::parse(R"({"problem": {"type": "matrix", "random": {"rows": 8, "cols": 6, "seed": 3}}, "modes": 3})");
    const Json a = resolve_config(raw), b = resolve_config(raw);
    CHECK(a == b);
    CHECK(a["problem"]["matrix"].size() == 8);
    CHECK(a["problem"]["matrix"][0].size() == 6);
    CHECK_FALSE(a["problem"].contains("random"));
    Json other = raw;
    other["problem"]["random"]["seed"] = 4;
    CHECK(resolve_config(other)["problem"]["matrix"] != a["problem"]["matrix"]);

    const Json p = resolve_config(Json::parse(
        R"({"problem": {"type": "discrete_cdk", "random": {"rows": 8, "cols": 6, "seed": 2}}, "modes": 3})"));
    const Matrix pmf = [&] {
        Matrix m(8, 6);
        for (Index i = 0; i < 8; ++i)
            for (Index j = 0; j < 6; ++j) m(i, j) = p["problem"]["pmf"][i][j].get<double>();
        return m;
    }();
    CHECK(pmf.minCoeff() > 0);
    CHECK(std::abs(pmf.sum() - 1.0) < 1e-12);
}

TEST_CASE("validation errors name the offending pointer") {
    auto with = [](const char* patch) {
        Json c = matrix_config();
        c.merge_patch(Json::parse(patch));
        return error_pointer(c);
    };
    CHECK(error_pointer(matrix_config()) == "<accepted>");
    CHECK(with(R"({"modes": 4})") == "/modes");
    CHECK(with(R"({"modes": 0})") == "/modes");
    CHECK(with(R"({"extra": 1})") == "/extra");
    CHECK(with(R"({"masks": {"weights": [1, 2, 3]}})") == "/masks/weights");
    CHECK(with(R"({"masks": {"weights": [1, -2]}})") == "/masks/weights/1");
    CHECK(with(R"({"masks": {"type": "sequential", "weights": [1, 1]}})") == "/masks/weights");
    CHECK(with(R"({"masks": {"type": "fancy"}})") == "/masks/type");
    CHECK(with(R"({"train": {"batch_size": 16}})") == "/train/batch_size");
    CHECK(with(R"({"train": {"sampler": {"type": "indices"}, "batch_size": 6}})") == "<accepted>");
    CHECK(with(R"({"train": {"sampler": {"type": "indices"}, "batch_size": 7}})") == "/train/batch_size");
    CHECK(with(R"({"train": {"optimizer": {"lr": 0}}})") == "/train/optimizer/lr");
    CHECK(with(R"({"train": {"ema_decay": 1.0}})") == "/train/ema_decay");
    CHECK(with(R"({"train": {"iterations": 2.5}})") == "/train/iterations");
    CHECK(with(R"({"train": {"seed": -1}})") == "/train/seed");
    CHECK(with(R"({"model": {"hidden_widths": [8]}})") == "/model/hidden_widths");
    CHECK(with(R"({"method": "neuralef_unbiased"})") == "/method");
    CHECK(with(R"({"eval": {"grouping": [[0], [0, 1]]}})") == "/eval/grouping");
    CHECK(with(R"({"eval": {"measures": ["angle"]}})") == "/eval/measures/0");
    CHECK(with(R"({"problem": {"matrix": [[1, 2], [3]]}})") == "/problem/matrix/1");
    CHECK(with(R"({"problem": {"self_adjoint": true}})") == "/problem/matrix");
    CHECK(with(R"({"problem": {"file": "x.csv"}})") == "/problem/matrix");

    CHECK(error_pointer(Json::parse(R"({"modes": 1})")) == "/problem");
    CHECK(error_pointer(Json::parse(R"({"problem": {"type": "hydrogen2d"}, "modes": 2,
        "model": {"activation": "sin_cos", "hidden_widths": [8, 7]}})")) == "/model/hidden_widths/1");
    CHECK(error_pointer(Json::parse(R"({"problem": {"type": "discrete_cdk", "pmf": [[0.5, 0.1], [0.1, 0.4]]},
        "modes": 1})")) == "/problem/pmf");
    CHECK(error_pointer(Json::parse(R"({"problem": {"type": "discrete_cdk", "pmf": [[0.4, 0.1], [0.1, 0.4]]},
        "modes": 2})")) == "/modes");
}

TEST_CASE("oversize matrices are rejected before any oracle runs") {
    const Json big = Json::parse(R"({"problem": {"type": "matrix", "random": {"rows": 513, "cols": 2}}, "modes": 1})");
    CHECK(error_pointer(big) == "/problem/random/rows");
    Json inline_big = matrix_config();
    inline_big["problem"]["matrix"] = Json::array();
    for (int i = 0; i < 513; ++i) inline_big["problem"]["matrix"].push_back(Json::array({1.0}));
    inline_big["modes"] = 1;
    CHECK(error_pointer(inline_big) == "/problem/matrix");
}

TEST_CASE("data files resolve against the config directory") {
    const auto dir = std::filesystem::temp_directory_path() / "nestsvd_test_config";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "a.csv");
        out << "# a 3x2 matrix\n1, 2\n3 4\n\n5,6\n";
    }
    const Json c = resolve_config(
        Json::parse(R"({"problem": {"type": "matrix", "file": "a.csv"}, "modes": 2})"), dir);
    CHECK(c["problem"]["matrix"] == Json::parse("[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]"));
    CHECK_FALSE(c["problem"].contains("file"));
    {
        std::ofstream out(dir / "bad.csv");
        out << "1,2\n3,x\n";
    }
    CHECK(error_pointer(Json::parse(R"({"problem": {"type": "matrix", "file": "bad.csv"}, "modes": 1})")) ==
          "/problem/file");
    std::filesystem::remove_all(dir);
}

TEST_CASE("pointer locations") {
    const std::string text = "{\n  \"a\": 1,\n  \"b\": {\"c\": [10, 20]},\n  \"d\": \"x\"\n}\n";
    CHECK(locate_json_pointer(text, "/a") == std::pair{2, 8});
    CHECK(locate_json_pointer(text, "/b/c/1") == std::pair{3, 19});
    CHECK(locate_json_pointer(text, "/d") == std::pair{4, 8});
    // a missing key falls back to the deepest existing parent
    CHECK(locate_json_pointer(text, "/b/missing") == std::pair{3, 8});
    CHECK(locate_json_pointer(text, "") == std::pair{1, 1});
    CHECK_FALSE(locate_json_pointer("  ", "/a").has_value());
}

TEST_CASE("syntax errors report line and column") {
    try {
        parse_config_text("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
        FAIL("accepted malformed JSON");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).rfind("cfg.json:3:", 0) == 0);
    }
}

TEST_CASE("evaluating the exact solution of a matrix problem") {
    Json raw = Json::parse(R"({"problem": {"type": "matrix", "random": {"rows": 7, "cols": 5, "seed": 11}},
                               "modes": 3})");
    const Experiment ex = build_experiment(resolve_config(raw));
    const auto svd = linalg::exact_svd(ex.matrix);
    // Optimal functions are singular functions scaled by sqrt(sigma).
    const Vector root = svd.singular_values.head(3).cwiseSqrt();
    FunctionSystem opt = ex.init;
    opt.f.params = table_params(std::sqrt(5.0) * svd.right_vectors.leftCols(3) * root.asDiagonal());
    opt.g->params = table_params(std::sqrt(7.0) * svd.left_vectors.leftCols(3) * root.asDiagonal());
    const EvalReport r = evaluate_experiment(ex, opt).report;
    for (Index k = 0; k < 3; ++k) {
        CHECK(r.eigenvalue_estimates(k) == doctest::Approx(svd.singular_values(k)).epsilon(1e-12));
        CHECK(r.norm_spectrum(k) == doctest::Approx(svd.singular_values(k)).epsilon(1e-12));
        CHECK(r.relative_errors(k) < 1e-9);
        CHECK(r.angle_distances(k) < 1e-6);
    }
    CHECK(r.orthogonality_error < 1e-20);
}

TEST_CASE("evaluating the exact solution of a dependence-kernel problem") {
    const Json raw = Json::parse(R"({"problem": {"type": "discrete_cdk", "pmf": [[0.4, 0.1], [0.1, 0.4]]}, "modes": 1})");
    const Experiment ex = build_experiment(resolve_config(raw));
    CHECK(ex.truth_values(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(ex.masks.padded);
    FunctionSystem opt = ex.init;
    // f = sqrt(0.6) * (1, -1) is the unit-variance antisymmetric function scaled.
    Matrix f(2, 1);
    f << std::sqrt(0.6), -std::sqrt(0.6);
    opt.f.params = table_params(f);
    opt.g->params = table_params(f);
    const EvalReport r = evaluate_experiment(ex, opt).report;
    CHECK(r.eigenvalue_estimates(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.norm_spectrum(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.angle_distances(0) < 1e-6);
    CHECK(r.orthogonality_error < 1e-20);
}

TEST_CASE("unselected measures are blank") {
    Json raw = matrix_config();
    raw["eval"] = Json::parse(R"({"measures": ["norm_spectrum"]})");
    const Experiment ex = build_experiment(resolve_config(raw));
    const EvalReport r = evaluate_experiment(ex, ex.init).report;
    CHECK(std::isnan(r.eigenvalue_estimates(0)));
    CHECK(std::isnan(r.angle_distances(1)));
    CHECK(std::isnan(r.orthogonality_error));
    CHECK(r.norm_spectrum(0) > 0);
}

TEST_CASE("hydrogen experiment truth and grouping") {
    const Experiment ex = build_experiment(resolve_config(Json::parse(
        R"({"problem": {"type": "hydrogen2d"}, "modes": 16, "model": {"hidden_widths": [8], "fourier": null}})")));
    REQUIRE(ex.grouping.groups.size() == 4);
    const std::vector<std::size_t> sizes = {1, 3, 5, 7};
    const std::vector<double> values = {1.0, 1.0 / 9, 1.0 / 25, 1.0 / 49};
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(ex.grouping.groups[k].size() == sizes[k]);
        CHECK(ex.truth_values(ex.grouping.groups[k].front()) == doctest::Approx(values[k]).epsilon(1e-14));
    }
    CHECK(ex.self_adjoint);
    CHECK_FALSE(ex.init.g.has_value());
}
