#pragma once

// Run orchestration behind the command-line tool: builds every component of an
// experiment from a resolved config, evaluates learned functions against the
// problem's exact solution, and renders the on-disk artifacts.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nestsvd/config.hpp"
#include "nestsvd/eval.hpp"
#include "nestsvd/nestedlora.hpp"
#include "nestsvd/operators.hpp"
#include "nestsvd/problems.hpp"
#include "nestsvd/training.hpp"

namespace nestsvd {

enum class ProblemKind { matrix, hydrogen2d, oscillator2d, discrete_cdk };

struct Experiment {
    Json config;  // resolved
    ProblemKind kind = ProblemKind::matrix;
    Index modes = 0;
    bool self_adjoint = true;

    std::shared_ptr<const OperatorBackend> backend;
    NestingMasks masks;
    FunctionSystem init;
    std::optional<Sampler> train_sampler;
    std::optional<Sampler> eval_sampler;
    TrainConfig train;
    GradcheckConfig gradcheck;
    Index gradcheck_batch = 0;  // 0 for full-population problems

    Index eval_samples = 0;  // continuous problems only
    bool use_ema = true;
    std::vector<std::string> measures;

    Matrix matrix;                          // matrix problems
    std::optional<DiscreteCdkInstance> cdk;  // discrete_cdk problems
    Vector truth_values;                    // top `modes` exact values, descending
    DegeneracyGrouping grouping;

    bool continuous() const { return kind == ProblemKind::hydrogen2d || kind == ProblemKind::oscillator2d; }
};

std::string to_string(ProblemKind kind);

/// Builds backend, masks, initial models, samplers and ground truth.
Experiment build_experiment(const Json& resolved);

/// Exact functions at `points` (index columns for discrete problems), S x modes,
/// unit-normalized under the base measure. `g_side` selects the left functions of
/// non-self-adjoint problems.
Matrix truth_functions(const Experiment& ex, const Matrix& points, bool g_side = false);

struct EvaluationResult {
    EvalReport report;
    Index samples = 0;
    Index dropped = 0;  // evaluation rows discarded for operator anomalies
};

/// Evaluates `system` with the configured evaluation sampler and measures.
EvaluationResult evaluate_experiment(const Experiment& ex, const FunctionSystem& system);

/// The sample batch the gradient check runs on.
SampleBatch gradcheck_batch(const Experiment& ex);

Json log_entry_json(const LogEntry& entry);
Json eval_json(const Experiment& ex, const EvaluationResult& result);

struct OracleTables {
    std::string spectrum_csv;   // mode,value,group_id,multiplicity
    std::string functions_csv;  // coordinates then one column per exact function
};

OracleTables oracle_tables(const Experiment& ex);

}  // namespace nestsvd
