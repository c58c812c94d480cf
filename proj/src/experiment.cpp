#include "nestsvd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "nestsvd/linalg.hpp"
#include "nestsvd/random.hpp"

namespace nestsvd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Rows per model call during evaluation; bounds the stencil's activation memory.
constexpr Index kEvalChunk = 2048;

Vector json_vector(const Json& v) {
    Vector x(static_cast<Index>(v.size()));
    for (std::size_t k = 0; k < v.size(); ++k) x(static_cast<Index>(k)) = v[k].get<double>();
    return x;
}

Matrix json_matrix(const Json& v) {
    Matrix m(static_cast<Index>(v.size()), static_cast<Index>(v.at(0).size()));
    for (Index i = 0; i < m.rows(); ++i) m.row(i) = json_vector(v[static_cast<std::size_t>(i)]).transpose();
    return m;
}

Json vector_json(const Vector& v) {
    Json out = Json::array();
    for (Index k = 0; k < v.size(); ++k) out.push_back(v(k));  // NaN serializes as null
    return out;
}

SamplerConfig sampler_config(const Json& s, const Experiment& ex) {
    SamplerConfig c;
    c.kind = parse_sampler_kind(s.at("type").get<std::string>());
    switch (c.kind) {
        case SamplerKind::gaussian:
            c.mean = json_vector(s.at("mean"));
            c.std = json_vector(s.at("std"));
            break;
        case SamplerKind::uniform_box:
            c.lo = json_vector(s.at("lo"));
            c.hi = json_vector(s.at("hi"));
            break;
        case SamplerKind::indices:
        case SamplerKind::full_population:
            if (ex.kind == ProblemKind::matrix) {
                c.x_domain = ex.matrix.cols();
                c.y_domain = ex.self_adjoint ? 0 : ex.matrix.rows();
            } else {
                c.x_domain = ex.cdk->pmf.rows();
                c.y_domain = ex.cdk->pmf.cols();
            }
            break;
        case SamplerKind::joint_pairs:
            c.pmf = ex.cdk->pmf;
            break;
    }
    return c;
}

ProblemKind parse_problem_kind(const std::string& name) {
    if (name == "matrix") return ProblemKind::matrix;
    if (name == "hydrogen2d") return ProblemKind::hydrogen2d;
    if (name == "oscillator2d") return ProblemKind::oscillator2d;
    if (name == "discrete_cdk") return ProblemKind::discrete_cdk;
    throw InputError("unknown problem type '" + name + "'");
}

ModelSpec model_spec(const Json& m, Index modes, Index domain, std::uint64_t seed) {
    ModelSpec spec;
    spec.output_modes = modes;
    spec.head_mode = parse_head_mode(m.at("head_mode").get<std::string>());
    if (spec.head_mode == HeadMode::tabular) {
        spec.domain_size = domain;
        return spec;
    }
    spec.input_dim = 2;
    for (const auto& w : m.at("hidden_widths")) spec.hidden_widths.push_back(w.get<Index>());
    spec.activation = parse_activation(m.at("activation").get<std::string>());
    if (!m.at("fourier").is_null()) {
        const Json& f = m.at("fourier");
        Rng rng = make_stream(seed, "fourier");
        spec.fourier = make_fourier_map(f.at("features").get<Index>(), 2, f.at("scale").get<double>(),
                                        f.at("append_raw_input").get<bool>(), rng);
    }
    spec.validate();
    return spec;
}

Matrix take_index_rows(const Matrix& table, const Matrix& points) {
    Matrix out(points.rows(), table.cols());
    for (Index b = 0; b < points.rows(); ++b) {
        const auto i = static_cast<Index>(points(b, 0));
        if (i < 0 || i >= table.rows()) throw InputError("index " + std::to_string(i) + " outside the domain");
        out.row(b) = table.row(i);
    }
    return out;
}

Matrix index_points(Index n) {
    Matrix x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = static_cast<double>(i);
    return x;
}

std::string number_cell(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

struct ExactFunctions {
    Matrix f;  // point-free tables for discrete problems
    Matrix g;
};

ExactFunctions discrete_truth(const Experiment& ex) {
    ExactFunctions t;
    const Index l = ex.modes;
    if (ex.kind == ProblemKind::matrix) {
        if (ex.self_adjoint) {
            const auto eig = linalg::exact_symmetric_eig(ex.matrix);
            t.f = std::sqrt(static_cast<double>(ex.matrix.rows())) * eig.eigenvectors.leftCols(l);
        } else {
            const auto svd = linalg::exact_svd(ex.matrix);
            t.f = std::sqrt(static_cast<double>(ex.matrix.cols())) * svd.right_vectors.leftCols(l);
            t.g = std::sqrt(static_cast<double>(ex.matrix.rows())) * svd.left_vectors.leftCols(l);
        }
    } else {
        t.f = ex.cdk->f_truth().leftCols(l);
        t.g = ex.cdk->g_truth().leftCols(l);
    }
    return t;
}

void mask_measures(const std::vector<std::string>& measures, EvalReport& r) {
    auto wanted = [&](const char* name) { return std::find(measures.begin(), measures.end(), name) != measures.end(); };
    if (!wanted("eigenvalue_estimate")) r.eigenvalue_estimates.setConstant(kNaN);
    if (!wanted("relative_error")) r.relative_errors.setConstant(kNaN);
    if (!wanted("angle_distance")) r.angle_distances.setConstant(kNaN);
    if (!wanted("norm_spectrum")) r.norm_spectrum.setConstant(kNaN);
    if (!wanted("subspace_distance")) r.subspace_distances.setConstant(kNaN);
    if (!wanted("orthogonality_error")) r.orthogonality_error = kNaN;
}

}  // namespace

std::string to_string(ProblemKind kind) {
    switch (kind) {
        case ProblemKind::matrix: return "matrix";
        case ProblemKind::hydrogen2d: return "hydrogen2d";
        case ProblemKind::oscillator2d: return "oscillator2d";
        case ProblemKind::discrete_cdk: return "discrete_cdk";
    }
    return "?";
}

Experiment build_experiment(const Json& c) {
    Experiment ex;
    ex.config = c;
    const Json& p = c.at("problem");
    ex.kind = parse_problem_kind(p.at("type").get<std::string>());
    ex.modes = c.at("modes").get<Index>();
    const Json& t = c.at("train");
    const auto seed = t.at("seed").get<std::uint64_t>();
    const Index l = ex.modes;

    switch (ex.kind) {
        case ProblemKind::matrix: {
            ex.matrix = json_matrix(p.at("matrix"));
            ex.self_adjoint = p.at("self_adjoint").get<bool>();
            ex.backend = std::make_shared<MatrixBackend>(ex.matrix, ex.self_adjoint);
            ex.truth_values = ex.self_adjoint ? Vector(linalg::exact_symmetric_eig(ex.matrix).eigenvalues.head(l))
                                              : Vector(linalg::exact_svd(ex.matrix).singular_values.head(l));
            break;
        }
        case ProblemKind::discrete_cdk: {
            ex.cdk = make_discrete_cdk(json_matrix(p.at("pmf")));
            ex.self_adjoint = false;
            ex.backend = std::make_shared<CdkBackend>();
            ex.truth_values = ex.cdk->centered.singular_values.head(l);
            break;
        }
        case ProblemKind::hydrogen2d:
        case ProblemKind::oscillator2d: {
            ex.self_adjoint = true;
            const bool hydrogen = ex.kind == ProblemKind::hydrogen2d;
            const double shift = p.at("shift").get<double>();
            ex.truth_values.resize(l);
            if (hydrogen) {
                const auto states = hydrogen_states(static_cast<int>(l));
                for (Index k = 0; k < l; ++k) ex.truth_values(k) = hydrogen_eigenvalue(states[static_cast<std::size_t>(k)]) + shift;
            } else {
                const auto states = oscillator_states(static_cast<int>(l));
                for (Index k = 0; k < l; ++k) {
                    ex.truth_values(k) = oscillator_shifted_eigenvalue(states[static_cast<std::size_t>(k)], shift);
                }
            }
            break;
        }
    }

    ex.train_sampler.emplace(sampler_config(t.at("sampler"), ex));
    const Json& e = c.at("eval");
    ex.eval_sampler.emplace(sampler_config(e.at("sampler"), ex));

    if (ex.continuous()) {
        HamiltonianSpec spec;
        const bool hydrogen = ex.kind == ProblemKind::hydrogen2d;
        spec.potential = hydrogen ? PointFunction(coulomb2d) : PointFunction(harmonic2d);
        spec.shift = p.at("shift").get<double>();
        spec.fd_epsilon = p.at("fd_epsilon").get<double>();
        spec.anomaly_threshold = p.at("anomaly_threshold").get<double>();
        ex.backend = std::make_shared<HamiltonianBackend>(spec, ex.train_sampler->importance());
    }

    const Json& m = c.at("masks");
    const std::string mask_type = m.at("type").get<std::string>();
    const bool pad = ex.backend->constant_mode();
    if (mask_type == "joint") ex.masks = joint_masks(json_vector(m.at("weights")), pad);
    else if (mask_type == "sequential") ex.masks = sequential_masks(l, pad);
    else ex.masks = no_nesting_masks(l, pad);

    Index x_domain = 0, y_domain = 0;
    if (ex.kind == ProblemKind::matrix) {
        x_domain = ex.matrix.cols();
        y_domain = ex.matrix.rows();
    } else if (ex.kind == ProblemKind::discrete_cdk) {
        x_domain = ex.cdk->pmf.rows();
        y_domain = ex.cdk->pmf.cols();
    }
    const ModelSpec f_spec = model_spec(c.at("model"), l, x_domain, seed);
    ex.init.f = Model{f_spec, init_params(f_spec, seed, "init")};
    if (!ex.self_adjoint) {
        ModelSpec g_spec = f_spec;
        g_spec.domain_size = y_domain;
        ex.init.g = Model{g_spec, init_params(g_spec, seed, "init_g")};
    }

    ex.train.iterations = t.at("iterations").get<Index>();
    ex.train.batch_size = t.contains("batch_size") ? t.at("batch_size").get<Index>() : 0;
    const Json& o = t.at("optimizer");
    ex.train.optimizer.kind = parse_optimizer(o.at("type").get<std::string>());
    ex.train.optimizer.lr = o.at("lr").get<double>();
    ex.train.optimizer.alpha = o.at("alpha").get<double>();
    ex.train.optimizer.eps = o.at("eps").get<double>();
    ex.train.optimizer.beta1 = o.at("beta1").get<double>();
    ex.train.optimizer.beta2 = o.at("beta2").get<double>();
    ex.train.optimizer.momentum = o.at("momentum").get<double>();
    ex.train.schedule = parse_schedule(t.at("lr_schedule").get<std::string>());
    ex.train.ema_decay = t.at("ema_decay").get<double>();
    ex.train.seed = seed;
    ex.train.eval_every = t.at("eval_every").get<Index>();
    ex.train.method = parse_method(c.at("method").get<std::string>());
    ex.train.max_skip_fraction = t.at("max_skip_fraction").get<double>();

    const Json& g = c.at("gradcheck");
    ex.gradcheck.epsilon = g.at("epsilon").get<double>();
    ex.gradcheck.coordinates = g.at("coordinates").get<Index>();
    ex.gradcheck.directions = g.at("directions").get<Index>();
    ex.gradcheck.tolerance = g.at("tolerance").get<double>();
    ex.gradcheck.corrupt = g.at("corrupt").get<bool>();
    ex.gradcheck.seed = seed;
    ex.gradcheck_batch = g.contains("batch_size") ? g.at("batch_size").get<Index>() : 0;

    ex.eval_samples = e.contains("samples") ? e.at("samples").get<Index>() : 0;
    ex.use_ema = e.at("use_ema").get<bool>();
    for (const auto& name : e.at("measures")) ex.measures.push_back(name.get<std::string>());
    if (e.at("grouping").is_string()) {
        ex.grouping = DegeneracyGrouping::from_values(ex.truth_values);
    } else {
        for (const auto& group : e.at("grouping")) ex.grouping.groups.push_back(group.get<std::vector<Index>>());
    }
    return ex;
}

Matrix truth_functions(const Experiment& ex, const Matrix& points, bool g_side) {
    const Index l = ex.modes;
    if (!ex.continuous()) {
        const ExactFunctions t = discrete_truth(ex);
        return take_index_rows(g_side && !ex.self_adjoint ? t.g : t.f, points);
    }
    Matrix out(points.rows(), l);
    if (ex.kind == ProblemKind::hydrogen2d) {
        const auto states = hydrogen_states(static_cast<int>(l));
        for (Index b = 0; b < points.rows(); ++b)
            for (Index k = 0; k < l; ++k)
                out(b, k) = hydrogen_normalized(states[static_cast<std::size_t>(k)], points(b, 0), points(b, 1));
    } else {
        const auto states = oscillator_states(static_cast<int>(l));
        for (Index b = 0; b < points.rows(); ++b)
            for (Index k = 0; k < l; ++k)
                out(b, k) = oscillator_eigenfunction(states[static_cast<std::size_t>(k)], points(b, 0), points(b, 1));
    }
    return out;
}

EvaluationResult evaluate_experiment(const Experiment& ex, const FunctionSystem& system) {
    EvalInputs in;
    in.self_adjoint = ex.self_adjoint;
    in.truth_values = ex.truth_values;
    in.grouping = ex.grouping;
    EvaluationResult result;

    if (ex.kind == ProblemKind::matrix) {
        const double n = static_cast<double>(ex.matrix.rows()), mcols = static_cast<double>(ex.matrix.cols());
        const Matrix cols = index_points(ex.matrix.cols());
        in.f = system.f(cols);
        // (Tf)(i) = sqrt(N/M) sum_j A_ij f(j); means are uniform over indices.
        const Matrix tf = std::sqrt(n / mcols) * ex.matrix * in.f;
        in.truth_f = truth_functions(ex, cols);
        if (ex.self_adjoint) {
            in.operator_terms = (in.f.cwiseProduct(tf)).colwise().mean().transpose();
        } else {
            const Matrix rows = index_points(ex.matrix.rows());
            in.g = (*system.g)(rows);
            in.operator_terms = (in.g.cwiseProduct(tf)).colwise().mean().transpose();
            in.truth_g = truth_functions(ex, rows, true);
        }
        result.samples = ex.matrix.cols();
    } else if (ex.kind == ProblemKind::discrete_cdk) {
        const DiscreteCdkInstance& cdk = *ex.cdk;
        const Matrix xs = index_points(cdk.pmf.rows()), ys = index_points(cdk.pmf.cols());
        const Matrix f = system.f(xs), g = (*system.g)(ys);
        // Centered kernel: E_p[f(X) g(Y)] - E[f(X)] E[g(Y)].
        in.operator_terms = (f.transpose() * cdk.pmf * g).diagonal() -
                            (f.transpose() * cdk.p_x).cwiseProduct(g.transpose() * cdk.p_y);
        // Row scaling sqrt(N p) turns plain means into expectations under p.
        const Vector sx = (static_cast<double>(cdk.pmf.rows()) * cdk.p_x).cwiseSqrt();
        const Vector sy = (static_cast<double>(cdk.pmf.cols()) * cdk.p_y).cwiseSqrt();
        in.f = sx.asDiagonal() * f;
        in.g = sy.asDiagonal() * g;
        in.truth_f = sx.asDiagonal() * truth_functions(ex, xs);
        in.truth_g = sy.asDiagonal() * truth_functions(ex, ys, true);
        result.samples = cdk.pmf.rows();
    } else {
        const Sampler& train_sampler = *ex.train_sampler;
        const Sampler& eval_sampler = *ex.eval_sampler;
        Rng rng = make_stream(ex.train.seed, "eval");
        const Matrix points = eval_sampler.draw(ex.eval_samples, rng).x;
        const Matrix truth = truth_functions(ex, points);
        const Index l = ex.modes;
        std::vector<Index> kept;
        Matrix f(points.rows(), l), tf(points.rows(), l), tr(points.rows(), l);
        for (Index start = 0; start < points.rows(); start += kEvalChunk) {
            const Index count = std::min(kEvalChunk, points.rows() - start);
            SampleBatch chunk;
            chunk.x = points.middleRows(start, count);
            const BatchEvaluation ev = ex.backend->evaluate(system, chunk);
            std::vector<bool> anomalous(static_cast<std::size_t>(count), false);
            for (Index a : ev.anomalies) anomalous[static_cast<std::size_t>(a)] = true;
            for (Index b = 0; b < count; ++b) {
                if (anomalous[static_cast<std::size_t>(b)] || !ev.f_values.row(b).allFinite() ||
                    !ev.t_forward.row(b).allFinite()) {
                    continue;
                }
                const auto x = points.row(start + b);
                const double w_te = eval_sampler.density(x);
                // Models carry f / sqrt(w_tr); re-weighting by w_tr / w_te moves
                // plain means from the training measure to the evaluation measure.
                const double s = std::sqrt(train_sampler.density(x) / w_te);
                const auto r = static_cast<Index>(kept.size());
                f.row(r) = s * ev.f_values.row(b);
                tf.row(r) = s * ev.t_forward.row(b);
                tr.row(r) = truth.row(start + b) / std::sqrt(w_te);
                kept.push_back(start + b);
            }
        }
        const auto n = static_cast<Index>(kept.size());
        if (n < 2) throw NumericalError("evaluation kept fewer than 2 samples after dropping anomalies");
        in.f = f.topRows(n);
        in.truth_f = tr.topRows(n);
        in.operator_terms = in.f.cwiseProduct(tf.topRows(n)).colwise().mean().transpose();
        result.samples = n;
        result.dropped = points.rows() - n;
    }
    result.report = evaluate_report(in);
    mask_measures(ex.measures, result.report);
    return result;
}

SampleBatch gradcheck_batch(const Experiment& ex) {
    Rng rng = make_stream(ex.train.seed, "gradcheck_batch");
    return ex.train_sampler->draw(ex.gradcheck_batch, rng);
}

Json log_entry_json(const LogEntry& entry) {
    Json j = Json::object();
    j["iteration"] = entry.iteration;
    j["lr"] = entry.lr;
    j["loss"] = entry.loss.total;
    j["operator_term"] = entry.loss.operator_term;
    j["metric_term"] = entry.loss.metric_term;
    j["rayleigh"] = vector_json(entry.rayleigh);
    j["norms"] = vector_json(entry.norms);
    j["skipped"] = entry.skipped;
    return j;
}

Json eval_json(const Experiment& ex, const EvaluationResult& result) {
    const EvalReport& r = result.report;
    Json j = Json::object();
    j["problem"] = to_string(ex.kind);
    j["parameters"] = ex.use_ema ? "ema" : "final";
    j["samples"] = result.samples;
    j["dropped_anomalies"] = result.dropped;
    Json modes = Json::array();
    for (Index k = 0; k < r.eigenvalue_estimates.size(); ++k) {
        const Index gid = r.group_ids[static_cast<std::size_t>(k)];
        Json m = Json::object();
        m["mode"] = k + 1;
        m["truth"] = k < ex.truth_values.size() ? ex.truth_values(k) : kNaN;
        m["eigenvalue_estimate"] = r.eigenvalue_estimates(k);
        m["relative_error_pct"] = r.relative_errors(k);
        m["angle_distance"] = r.angle_distances(k);
        m["norm_sigma"] = r.norm_spectrum(k);
        m["group_id"] = gid;
        m["subspace_distance"] = r.subspace_distances(gid);
        m["collapsed"] = static_cast<bool>(r.collapsed[static_cast<std::size_t>(k)]);
        modes.push_back(std::move(m));
    }
    j["modes"] = modes;
    j["groups"] = ex.grouping.groups;
    j["orthogonality_error"] = r.orthogonality_error;
    return j;
}

OracleTables oracle_tables(const Experiment& ex) {
    OracleTables out;
    const Index l = ex.modes;
    const std::vector<Index> ids = ex.grouping.group_ids(l);
    std::ostringstream spec;
    spec << "mode,value,group_id,multiplicity\n";
    for (Index k = 0; k < l; ++k) {
        const Index gid = ids[static_cast<std::size_t>(k)];
        spec << k + 1 << ',' << number_cell(ex.truth_values(k)) << ',' << gid << ','
             << ex.grouping.groups[static_cast<std::size_t>(gid)].size() << '\n';
    }
    out.spectrum_csv = spec.str();

    std::ostringstream fn;
    auto header = [&](const char* coords, const char* prefix) {
        fn << coords;
        for (Index k = 0; k < l; ++k) fn << ',' << prefix << k + 1;
        fn << '\n';
    };
    auto rows = [&](const std::string& lead, const Matrix& points, const Matrix& values) {
        for (Index b = 0; b < points.rows(); ++b) {
            fn << lead;
            for (Index d = 0; d < points.cols(); ++d) fn << (lead.empty() && d == 0 ? "" : ",") << number_cell(points(b, d));
            for (Index k = 0; k < l; ++k) fn << ',' << number_cell(values(b, k));
            fn << '\n';
        }
    };
    if (ex.continuous()) {
        const Json& o = ex.config.at("oracle");
        const auto n = o.at("grid_points").get<Index>();
        const Vector lo = json_vector(o.at("lo")), hi = json_vector(o.at("hi"));
        Matrix grid(n * n, 2);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                grid(i * n + j, 0) = lo(0) + (hi(0) - lo(0)) * static_cast<double>(i) / static_cast<double>(n - 1);
                grid(i * n + j, 1) = lo(1) + (hi(1) - lo(1)) * static_cast<double>(j) / static_cast<double>(n - 1);
            }
        header("x,y", "phi_");
        rows("", grid, truth_functions(ex, grid));
    } else {
        // Singular functions are unit-normalized under the base measure of each side.
        header("side,index", "fn_");
        const Index nx = ex.kind == ProblemKind::matrix ? ex.matrix.cols() : ex.cdk->pmf.rows();
        const Matrix xs = index_points(nx);
        rows(ex.self_adjoint ? "f" : (ex.kind == ProblemKind::matrix ? "f" : "x"), xs, truth_functions(ex, xs));
        if (!ex.self_adjoint) {
            const Index ny = ex.kind == ProblemKind::matrix ? ex.matrix.rows() : ex.cdk->pmf.cols();
            const Matrix ys = index_points(ny);
            rows(ex.kind == ProblemKind::matrix ? "g" : "y", ys, truth_functions(ex, ys, true));
        }
    }
    out.functions_csv = fn.str();
    return out;
}

}  // namespace nestsvd
