#pragma once

// Stochastic training: samplers, optimizers, learning-rate schedules, parameter
// EMA and the iteration loop that ties a backend to the nested objective.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nestsvd/nestedlora.hpp"
#include "nestsvd/operators.hpp"
#include "nestsvd/random.hpp"

namespace nestsvd {

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { rmsprop, adam, sgd_momentum };
enum class LrSchedule { constant, cosine };

std::string to_string(OptimizerKind kind);
std::string to_string(LrSchedule schedule);
OptimizerKind parse_optimizer(const std::string& name);
LrSchedule parse_schedule(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::rmsprop;
    double lr = 1e-4;
    double alpha = 0.99;  // RMSProp smoothing
    double eps = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double momentum = 0.0;  // SGD only
};

struct OptimizerState {
    Vector first;   // momentum buffer / Adam first moment
    Vector second;  // RMSProp or Adam second moment
    long steps = 0;
};

/// One update in place. Throws NumericalError naming the first non-finite gradient entry.
void optimizer_step(const OptimizerConfig& config, OptimizerState& state, Vector& params, const Vector& grad,
                    double lr);

/// base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base_lr, long step, long total);
double scheduled_lr(LrSchedule schedule, double base_lr, long step, long total);

/// ema <- decay * ema + (1 - decay) * params.
void ema_update(Vector& ema, const Vector& params, double decay);

// ---------------------------------------------------------------------------
// Samplers

enum class SamplerKind { gaussian, uniform_box, indices, joint_pairs, full_population };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

struct SamplerConfig {
    SamplerKind kind = SamplerKind::gaussian;
    Vector mean;  // gaussian, per dimension
    Vector std;
    Vector lo;  // uniform_box
    Vector hi;
    Index x_domain = 0;  // indices/full_population: f-side domain size (matrix columns)
    Index y_domain = 0;  // g-side domain size (matrix rows); 0 for self-adjoint problems
    Matrix pmf;          // joint_pairs
};

/// Draws sample batches. Continuous kinds expose their density so the
/// Hamiltonian backend can importance-weight against Lebesgue measure.
class Sampler {
public:
    explicit Sampler(SamplerConfig config);

    SampleBatch draw(Index batch_size, Rng& rng) const;
    SamplerKind kind() const { return config_.kind; }
    const SamplerConfig& config() const { return config_; }
    bool continuous() const;
    double density(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
    /// Density over Lebesgue measure for continuous kinds, w == 1 otherwise.
    ImportanceScheme importance() const;

private:
    SamplerConfig config_;
    std::vector<double> flat_pmf_;
};

// ---------------------------------------------------------------------------
// Training loop

enum class Method { nestedlora, neuralef_unbiased };

std::string to_string(Method method);
Method parse_method(const std::string& name);

struct TrainConfig {
    Index iterations = 1000;
    Index batch_size = 128;
    OptimizerConfig optimizer;
    LrSchedule schedule = LrSchedule::cosine;
    double ema_decay = 0.995;
    std::uint64_t seed = 0;
    Index eval_every = 100;
    Method method = Method::nestedlora;
    double max_skip_fraction = 0.01;
};

struct LogEntry {
    Index iteration = 0;
    double lr = 0;
    LossReport loss;
    Vector rayleigh;  // per-mode batch Rayleigh quotients
    Vector norms;     // per-mode batch norms of f
    Index skipped = 0;
};

struct TrainResult {
    FunctionSystem params;
    FunctionSystem ema;
    std::vector<LogEntry> log;
    Index skipped = 0;
};

using LogSink = std::function<void(const LogEntry&)>;

/// Total parameter count of f, plus g when present.
Index system_parameter_count(const FunctionSystem& system);
Vector flatten_params(const FunctionSystem& system);
void assign_params(FunctionSystem& system, const Vector& flat);

/// Parameter gradient of one iteration from a batch evaluation. With a
/// self-adjoint backend f receives df + dg, since g is f.
Vector system_gradient(const FunctionSystem& system, const OperatorBackend& backend, const NestingMasks& masks,
                       Method method, const SampleBatch& batch, const BatchEvaluation& eval, bool exact);

/// Objective report and per-mode diagnostics of a batch evaluation.
LogEntry describe_batch(const NestingMasks& masks, const OperatorBackend& backend, const BatchEvaluation& eval,
                        bool exact);

/// Iterates draw -> evaluate -> cotangents -> backward -> optimizer -> EMA.
/// Iterations whose batch carries operator anomalies or non-finite values are
/// skipped; exceeding max_skip_fraction of all iterations throws TrainingAborted.
TrainResult train(const TrainConfig& config, FunctionSystem init, const OperatorBackend& backend,
                  const NestingMasks& masks, const Sampler& sampler, const LogSink& sink = {});

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckConfig {
    double epsilon = 1e-5;
    Index coordinates = 24;
    Index directions = 4;
    double tolerance = 1e-5;
    bool corrupt = false;  // negative control: perturbs the analytic gradient
    std::uint64_t seed = 0;
};

struct GradcheckEntry {
    std::string probe;  // "param <k>" or "direction <k>"
    Index parameter = -1;
    double analytic = 0;
    double numeric = 0;
    double relative_error = 0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double max_relative_error = 0;
    Index worst = -1;  // entry index
    bool passed = true;
};

/// Compares the cotangent-assembled gradient with central differences of a
/// surrogate objective in which operator outputs are frozen at the current
/// parameters. Joint and unnested masks use the one-shot objective; sequential
/// masks use per-prefix LoRA losses whose earlier modes are frozen. When
/// `exact_objective` is set (full-population, symmetric masks) the true objective
/// with live operator outputs is checked as well.
GradcheckReport gradcheck(const GradcheckConfig& config, const FunctionSystem& system,
                          const OperatorBackend& backend, const NestingMasks& masks, const SampleBatch& batch,
                          bool exact, bool exact_objective);

}  // namespace nestsvd
