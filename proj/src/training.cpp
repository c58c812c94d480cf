#include "nestsvd/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "nestsvd/errors.hpp"

namespace nestsvd {

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
    }
    return "?";
}

std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::cosine ? "cosine" : "constant"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "rmsprop") return OptimizerKind::rmsprop;
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd_momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
    throw InputError("unknown optimizer '" + name + "'");
}

LrSchedule parse_schedule(const std::string& name) {
    if (name == "cosine") return LrSchedule::cosine;
    if (name == "constant") return LrSchedule::constant;
    throw InputError("unknown learning-rate schedule '" + name + "'");
}

void optimizer_step(const OptimizerConfig& config, OptimizerState& state, Vector& params, const Vector& grad,
                    double lr) {
    if (grad.size() != params.size()) throw InputError("gradient and parameter sizes differ");
    for (Index i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad(i))) {
            throw NumericalError("non-finite gradient at parameter " + std::to_string(i));
        }
    }
    ++state.steps;
    switch (config.kind) {
        case OptimizerKind::sgd_momentum: {
            if (config.momentum == 0) {
                params -= lr * grad;
                return;
            }
            // PyTorch convention: the first buffer is the gradient itself, no dampening
            if (state.first.size() == 0) {
                state.first = grad;
            } else {
                state.first = config.momentum * state.first + grad;
            }
            params -= lr * state.first;
            return;
        }
        case OptimizerKind::rmsprop: {
            if (state.second.size() == 0) state.second = Vector::Zero(params.size());
            state.second = config.alpha * state.second + (1 - config.alpha) * grad.cwiseAbs2();
            params.array() -= lr * grad.array() / (state.second.array().sqrt() + config.eps);
            return;
        }
        case OptimizerKind::adam: {
            if (state.first.size() == 0) state.first = Vector::Zero(params.size());
            if (state.second.size() == 0) state.second = Vector::Zero(params.size());
            state.first = config.beta1 * state.first + (1 - config.beta1) * grad;
            state.second = config.beta2 * state.second + (1 - config.beta2) * grad.cwiseAbs2();
            const double c1 = 1 - std::pow(config.beta1, static_cast<double>(state.steps));
            const double c2 = 1 - std::pow(config.beta2, static_cast<double>(state.steps));
            params.array() -= lr * (state.first.array() / c1) / ((state.second.array() / c2).sqrt() + config.eps);
            return;
        }
    }
}

double cosine_lr(double base_lr, long step, long total) {
    if (total <= 0) return base_lr;
    const double t = static_cast<double>(std::clamp(step, 0L, total)) / static_cast<double>(total);
    return base_lr * 0.5 * (1 + std::cos(std::numbers::pi * t));
}

double scheduled_lr(LrSchedule schedule, double base_lr, long step, long total) {
    return schedule == LrSchedule::cosine ? cosine_lr(base_lr, step, total) : base_lr;
}

void ema_update(Vector& ema, const Vector& params, double decay) {
    if (!(decay >= 0 && decay < 1)) throw InputError("EMA decay must lie in [0, 1)");
    if (ema.size() != params.size()) throw InputError("EMA and parameter sizes differ");
    ema = decay * ema + (1 - decay) * params;
}

// ---------------------------------------------------------------------------

std::string to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::gaussian: return "gaussian";
        case SamplerKind::uniform_box: return "uniform_box";
        case SamplerKind::indices: return "indices";
        case SamplerKind::joint_pairs: return "joint_pairs";
        case SamplerKind::full_population: return "full_population";
    }
    return "?";
}

SamplerKind parse_sampler_kind(const std::string& name) {
    if (name == "gaussian") return SamplerKind::gaussian;
    if (name == "uniform_box") return SamplerKind::uniform_box;
    if (name == "indices") return SamplerKind::indices;
    if (name == "joint_pairs") return SamplerKind::joint_pairs;
    if (name == "full_population") return SamplerKind::full_population;
    throw InputError("unknown sampler '" + name + "'");
}

Sampler::Sampler(SamplerConfig config) : config_(std::move(config)) {
    switch (config_.kind) {
        case SamplerKind::gaussian:
            if (config_.mean.size() == 0 || config_.mean.size() != config_.std.size()) {
                throw InputError("gaussian sampler needs mean and std of equal, non-zero length");
            }
            if ((config_.std.array() <= 0).any()) throw InputError("gaussian sampler std must be positive");
            break;
        case SamplerKind::uniform_box:
            if (config_.lo.size() == 0 || config_.lo.size() != config_.hi.size()) {
                throw InputError("uniform_box sampler needs lo and hi of equal, non-zero length");
            }
            if ((config_.hi.array() <= config_.lo.array()).any()) throw InputError("uniform_box needs hi > lo");
            break;
        case SamplerKind::indices:
        case SamplerKind::full_population:
            if (config_.x_domain < 1) throw InputError("index sampler needs a positive domain size");
            break;
        case SamplerKind::joint_pairs:
            if (config_.pmf.size() == 0 || (config_.pmf.array() < 0).any()) {
                throw InputError("joint_pairs sampler needs a non-negative pmf");
            }
            // row-major flattening: entry (i, j) is outcome i * cols + j
            for (Index i = 0; i < config_.pmf.rows(); ++i)
                for (Index j = 0; j < config_.pmf.cols(); ++j) flat_pmf_.push_back(config_.pmf(i, j));
            break;
    }
}

bool Sampler::continuous() const {
    return config_.kind == SamplerKind::gaussian || config_.kind == SamplerKind::uniform_box;
}

namespace {

Matrix index_range_column(Index n) {
    Matrix out(n, 1);
    for (Index i = 0; i < n; ++i) out(i, 0) = static_cast<double>(i);
    return out;
}

}  // namespace

SampleBatch Sampler::draw(Index batch_size, Rng& rng) const {
    SampleBatch out;
    switch (config_.kind) {
        case SamplerKind::gaussian: {
            const Index d = config_.mean.size();
            std::normal_distribution<double> normal;
            out.x.resize(batch_size, d);
            for (Index b = 0; b < batch_size; ++b)
                for (Index k = 0; k < d; ++k) out.x(b, k) = config_.mean(k) + config_.std(k) * normal(rng);
            return out;
        }
        case SamplerKind::uniform_box: {
            const Index d = config_.lo.size();
            std::uniform_real_distribution<double> uniform;
            out.x.resize(batch_size, d);
            for (Index b = 0; b < batch_size; ++b)
                for (Index k = 0; k < d; ++k)
                    out.x(b, k) = config_.lo(k) + (config_.hi(k) - config_.lo(k)) * uniform(rng);
            return out;
        }
        case SamplerKind::indices: {
            std::uniform_int_distribution<Index> ux(0, config_.x_domain - 1);
            out.x.resize(batch_size, 1);
            for (Index b = 0; b < batch_size; ++b) out.x(b, 0) = static_cast<double>(ux(rng));
            if (config_.y_domain > 0) {
                std::uniform_int_distribution<Index> uy(0, config_.y_domain - 1);
                out.y.resize(batch_size, 1);
                for (Index b = 0; b < batch_size; ++b) out.y(b, 0) = static_cast<double>(uy(rng));
            }
            return out;
        }
        case SamplerKind::joint_pairs: {
            std::discrete_distribution<Index> pick(flat_pmf_.begin(), flat_pmf_.end());
            out.x.resize(batch_size, 1);
            out.y.resize(batch_size, 1);
            for (Index b = 0; b < batch_size; ++b) {
                const Index k = pick(rng);
                out.x(b, 0) = static_cast<double>(k / config_.pmf.cols());
                out.y(b, 0) = static_cast<double>(k % config_.pmf.cols());
            }
            return out;
        }
        case SamplerKind::full_population:
            out.x = index_range_column(config_.x_domain);
            if (config_.y_domain > 0) out.y = index_range_column(config_.y_domain);
            return out;
    }
    return out;
}

double Sampler::density(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (config_.kind == SamplerKind::gaussian) {
        double log_p = 0;
        for (Index k = 0; k < x.size(); ++k) {
            const double z = (x(k) - config_.mean(k)) / config_.std(k);
            log_p += -0.5 * z * z - std::log(config_.std(k)) - 0.5 * std::log(2 * std::numbers::pi);
        }
        return std::exp(log_p);
    }
    if (config_.kind == SamplerKind::uniform_box) {
        double vol = 1;
        for (Index k = 0; k < x.size(); ++k) {
            if (x(k) < config_.lo(k) || x(k) > config_.hi(k)) return 0.0;
            vol *= config_.hi(k) - config_.lo(k);
        }
        return 1.0 / vol;
    }
    throw InputError("sampler '" + to_string(config_.kind) + "' has no density");
}

ImportanceScheme Sampler::importance() const {
    ImportanceScheme s;
    s.sampler_id = to_string(config_.kind);
    if (continuous()) {
        const Sampler copy = *this;
        s.density_over_base = [copy](const Eigen::Ref<const Eigen::RowVectorXd>& x) { return copy.density(x); };
    }
    return s;
}

// ---------------------------------------------------------------------------

std::string to_string(Method method) {
    return method == Method::nestedlora ? "nestedlora" : "neuralef_unbiased";
}

Method parse_method(const std::string& name) {
    if (name == "nestedlora") return Method::nestedlora;
    if (name == "neuralef_unbiased") return Method::neuralef_unbiased;
    throw InputError("unknown method '" + name + "'");
}

Index system_parameter_count(const FunctionSystem& system) {
    return system.f.params.values.size() + (system.g ? system.g->params.values.size() : 0);
}

Vector flatten_params(const FunctionSystem& system) {
    Vector out(system_parameter_count(system));
    const Index nf = system.f.params.values.size();
    out.head(nf) = system.f.params.values;
    if (system.g) out.tail(out.size() - nf) = system.g->params.values;
    return out;
}

void assign_params(FunctionSystem& system, const Vector& flat) {
    if (flat.size() != system_parameter_count(system)) throw InputError("flat parameter size mismatch");
    const Index nf = system.f.params.values.size();
    system.f.params.values = flat.head(nf);
    if (system.g) system.g->params.values = flat.tail(flat.size() - nf);
}

Vector system_gradient(const FunctionSystem& system, const OperatorBackend& backend, const NestingMasks& masks,
                       Method method, const SampleBatch& batch, const BatchEvaluation& eval, bool exact) {
    if (method == Method::neuralef_unbiased) {
        if (!backend.self_adjoint()) throw InputError("the NeuralEF baseline needs a self-adjoint operator");
        const Matrix d = neuralef_batch_cotangent(eval, exact);
        return model_backward(system.f.params, system.f.spec, batch.x, d);
    }
    const Cotangents c = batch_cotangents(masks, eval, exact);
    if (backend.self_adjoint()) {
        return model_backward(system.f.params, system.f.spec, batch.x, c.df + c.dg);
    }
    if (!system.g) throw InputError("asymmetric problems need a g model");
    Vector out(system_parameter_count(system));
    const Index nf = system.f.params.values.size();
    out.head(nf) = model_backward(system.f.params, system.f.spec, batch.x, c.df);
    out.tail(out.size() - nf) = model_backward(system.g->params, system.g->spec, batch.y, c.dg);
    return out;
}

LogEntry describe_batch(const NestingMasks& masks, const OperatorBackend& backend, const BatchEvaluation& eval,
                        bool exact) {
    LogEntry e;
    e.loss = batch_objective(masks, eval, exact);
    const Vector f2 = eval.f_values.colwise().squaredNorm().transpose() / static_cast<double>(eval.f_values.rows());
    const Vector g2 = eval.g_values.colwise().squaredNorm().transpose() / static_cast<double>(eval.g_values.rows());
    e.norms = f2.cwiseSqrt();
    if (backend.self_adjoint()) {
        const Vector num = eval.f_values.cwiseProduct(eval.t_adjoint).colwise().mean().transpose();
        e.rayleigh = num.cwiseQuotient(f2);
    } else {
        const Vector num = eval.g_values.cwiseProduct(eval.t_forward).colwise().mean().transpose();
        e.rayleigh = num.cwiseQuotient(f2.cwiseProduct(g2).cwiseSqrt());
    }
    return e;
}

namespace {

void validate_config(const TrainConfig& c, const OperatorBackend& backend, const Sampler& sampler) {
    if (c.iterations < 0) throw InputError("iterations must be non-negative");
    if (!(c.optimizer.lr > 0)) throw InputError("learning rate must be positive");
    if (!(c.ema_decay >= 0 && c.ema_decay < 1)) throw InputError("ema_decay must lie in [0, 1)");
    if (c.eval_every < 1) throw InputError("eval_every must be at least 1");
    if (sampler.kind() != SamplerKind::full_population && (c.batch_size < 4 || c.batch_size % 2 != 0)) {
        throw InputError("batch_size " + std::to_string(c.batch_size) + " must be even and at least 4");
    }
    if (c.method == Method::neuralef_unbiased && !backend.self_adjoint()) {
        throw InputError("the NeuralEF baseline needs a self-adjoint operator");
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, FunctionSystem init, const OperatorBackend& backend,
                  const NestingMasks& masks, const Sampler& sampler, const LogSink& sink) {
    validate_config(config, backend, sampler);
    const bool exact = sampler.kind() == SamplerKind::full_population;
    TrainResult result;
    result.params = std::move(init);
    Vector flat = flatten_params(result.params);
    Vector ema = flat;
    OptimizerState state;
    Rng rng = make_stream(config.seed, "sampler");
    const double budget = config.max_skip_fraction * static_cast<double>(config.iterations);

    for (Index it = 0; it < config.iterations; ++it) {
        const SampleBatch batch = sampler.draw(config.batch_size, rng);
        const double lr = scheduled_lr(config.schedule, config.optimizer.lr, it, config.iterations);
        BatchEvaluation eval;
        Vector grad;
        std::string reason;
        try {
            eval = backend.evaluate(result.params, batch);
            if (!eval.anomalies.empty()) {
                reason = std::to_string(eval.anomalies.size()) + " anomalous samples, first row " +
                         std::to_string(eval.anomalies.front());
            } else {
                grad = system_gradient(result.params, backend, masks, config.method, batch, eval, exact);
                if (!grad.allFinite()) reason = "non-finite gradient";
            }
        } catch (const NumericalError& e) {
            reason = e.what();
        }
        if (!reason.empty()) {
            ++result.skipped;
            if (static_cast<double>(result.skipped) > budget) {
                std::ostringstream os;
                os << "aborting at iteration " << it << ": " << result.skipped << " skipped iterations exceed "
                   << config.max_skip_fraction * 100 << "% of " << config.iterations << "; last cause: " << reason;
                throw TrainingAborted(os.str());
            }
            continue;
        }
        if (it % config.eval_every == 0 || it + 1 == config.iterations) {
            LogEntry entry = describe_batch(masks, backend, eval, exact);
            entry.iteration = it;
            entry.lr = lr;
            entry.skipped = result.skipped;
            if (sink) sink(entry);
            result.log.push_back(std::move(entry));
        }
        optimizer_step(config.optimizer, state, flat, grad, lr);
        assign_params(result.params, flat);
        ema_update(ema, flat, config.ema_decay);
    }
    result.ema = result.params;
    assign_params(result.ema, ema);
    return result;
}

// ---------------------------------------------------------------------------

namespace {

double masked_metric(const NestingMasks& masks, const Matrix& f, const Matrix& g, bool exact) {
    if (exact) return metric_loss(masks, compute_lambda(f), compute_lambda(g));
    const BatchHalves hf = batch_split(f.rows()), hg = batch_split(g.rows());
    const Matrix fa = compute_lambda(take_rows(f, hf.first)), fb = compute_lambda(take_rows(f, hf.second));
    const Matrix ga = compute_lambda(take_rows(g, hg.first)), gb = compute_lambda(take_rows(g, hg.second));
    return 0.5 * (metric_loss(masks, fa, gb) + metric_loss(masks, fb, ga));
}

struct FrozenBatch {
    Matrix f, g, t_forward, t_adjoint;
};

// Objective with frozen operator outputs; its parameter gradient is what the
// cotangent engine claims to compute.
double surrogate(const NestingMasks& masks, const FrozenBatch& frozen, Matrix f, Matrix g, bool exact) {
    if (masks.padded) {
        f = pad_constant_mode(f);
        g = pad_constant_mode(g);
    }
    const Vector m = masks.vector_mask;
    double value = 0;
    for (Index l = 0; l < masks.size(); ++l) {
        value -= 2 * m(l) * (f.col(l).dot(frozen.t_adjoint.col(l)) / static_cast<double>(f.rows()) +
                             g.col(l).dot(frozen.t_forward.col(l)) / static_cast<double>(g.rows()));
    }
    if (masks.mode != MaskMode::sequential) return value + masked_metric(masks, f, g, exact);
    // sequential: prefix l sees modes before l frozen and mode l live
    for (Index l = 0; l < masks.size(); ++l) {
        Matrix uf = frozen.f.leftCols(l + 1), ug = frozen.g.leftCols(l + 1);
        uf.col(l) = f.col(l);
        ug.col(l) = g.col(l);
        value += masked_metric(no_nesting_masks(l + 1), uf, ug, exact);
    }
    return value;
}

Matrix live_g(const FunctionSystem& sys, const OperatorBackend& backend, const SampleBatch& batch,
              const Matrix& f) {
    return backend.self_adjoint() ? f : (*sys.g)(batch.y);
}

double relative_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

GradcheckReport gradcheck(const GradcheckConfig& config, const FunctionSystem& system,
                          const OperatorBackend& backend, const NestingMasks& masks, const SampleBatch& batch,
                          bool exact, bool exact_objective) {
    if (!(config.epsilon > 0)) throw InputError("gradcheck epsilon must be positive");
    const BatchEvaluation eval0 = backend.evaluate(system, batch);
    if (!eval0.anomalies.empty()) {
        throw NumericalError("gradcheck batch has anomalous row " + std::to_string(eval0.anomalies.front()));
    }
    Vector analytic = system_gradient(system, backend, masks, Method::nestedlora, batch, eval0, exact);
    const Vector theta0 = flatten_params(system);
    const Index p = theta0.size();

    FrozenBatch frozen{eval0.f_values, eval0.g_values, eval0.t_forward, eval0.t_adjoint};
    if (masks.padded) {
        frozen.f = pad_constant_mode(frozen.f);
        frozen.g = pad_constant_mode(frozen.g);
        frozen.t_forward = pad_constant_mode(frozen.t_forward);
        frozen.t_adjoint = pad_constant_mode(frozen.t_adjoint);
    }

    Rng rng = make_stream(config.seed, "gradcheck");
    std::vector<Index> coords(static_cast<std::size_t>(p));
    std::iota(coords.begin(), coords.end(), Index{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(std::min(config.coordinates, p)));
    std::sort(coords.begin(), coords.end());

    if (config.corrupt && !coords.empty()) {
        const Index k = coords.front();
        analytic(k) = 1.5 * analytic(k) + 1e-3 * std::max(analytic.cwiseAbs().maxCoeff(), 1e-12);
    }
    const double floor = 1e-3 * std::max(analytic.cwiseAbs().maxCoeff(), 1e-12);

    FunctionSystem probe = system;
    auto surrogate_at = [&](const Vector& theta) {
        assign_params(probe, theta);
        const Matrix f = probe.f(batch.x);
        return surrogate(masks, frozen, f, live_g(probe, backend, batch, f), exact);
    };
    auto true_at = [&](const Vector& theta) {
        assign_params(probe, theta);
        return batch_objective(masks, backend.evaluate(probe, batch), true).total;
    };

    GradcheckReport report;
    auto record = [&](GradcheckEntry e) {
        e.relative_error = relative_error(e.analytic, e.numeric, floor);
        if (!(e.relative_error < config.tolerance)) report.passed = false;
        if (report.worst < 0 || !(e.relative_error <= report.max_relative_error)) {
            report.max_relative_error = e.relative_error;
            report.worst = static_cast<Index>(report.entries.size());
        }
        report.entries.push_back(std::move(e));
    };
    const double h = config.epsilon;
    for (Index k : coords) {
        Vector plus = theta0, minus = theta0;
        plus(k) += h;
        minus(k) -= h;
        record({"param " + std::to_string(k), k, analytic(k), (surrogate_at(plus) - surrogate_at(minus)) / (2 * h), 0});
        if (exact_objective) {
            record({"objective param " + std::to_string(k), k, analytic(k),
                    (true_at(plus) - true_at(minus)) / (2 * h), 0});
        }
    }
    for (Index d = 0; d < config.directions; ++d) {
        Vector u = gaussian_matrix(p, 1, rng);
        u /= u.norm();
        const double num = (surrogate_at(theta0 + h * u) - surrogate_at(theta0 - h * u)) / (2 * h);
        record({"direction " + std::to_string(d), -1, analytic.dot(u), num, 0});
    }
    return report;
}

}  // namespace nestsvd
