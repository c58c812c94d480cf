#include "nestsvd/operators.hpp"

#include <cmath>
#include <sstream>

#include "nestsvd/errors.hpp"

namespace nestsvd {

namespace {

Matrix stencil_points(const Matrix& batch, double eps) {
    const Index s = batch.rows(), d = batch.cols();
    Matrix stacked((2 * d + 1) * s, d);
    stacked.topRows(s) = batch;
    for (Index i = 0; i < d; ++i) {
        stacked.middleRows((1 + 2 * i) * s, s) = batch;
        stacked.middleRows((1 + 2 * i) * s, s).col(i).array() += eps;
        stacked.middleRows((2 + 2 * i) * s, s) = batch;
        stacked.middleRows((2 + 2 * i) * s, s).col(i).array() -= eps;
    }
    return stacked;
}

void require_finite_stencil(const Matrix& values, const Matrix& points) {
    for (Index r = 0; r < values.rows(); ++r) {
        if (!values.row(r).allFinite()) {
            std::ostringstream os;
            os << "non-finite function value at stencil point (" << points.row(r) << ")";
            throw NumericalError(os.str());
        }
    }
}

// Laplacian of already-evaluated stencil values laid out as in stencil_points.
Matrix stencil_laplacian(const Matrix& values, Index s, Index d, double eps) {
    const auto center = values.topRows(s);
    Matrix lap = Matrix::Zero(s, values.cols());
    for (Index i = 0; i < d; ++i) {
        lap += values.middleRows((1 + 2 * i) * s, s) + values.middleRows((2 + 2 * i) * s, s) - 2.0 * center;
    }
    return lap / (eps * eps);
}

Matrix index_range(Index n) {
    Matrix idx(n, 1);
    for (Index i = 0; i < n; ++i) idx(i, 0) = static_cast<double>(i);
    return idx;
}

Vector weights_or_ones(const Vector& w, Index n, const char* what) {
    if (w.size() == 0) return Vector::Ones(n);
    if (w.size() != n) throw InputError(std::string(what) + " importance has the wrong length");
    if (!(w.minCoeff() > 0) || !w.allFinite()) throw InputError(std::string(what) + " importance must be positive");
    return w;
}

void check_indices(const std::vector<Index>& idx, Index n, const char* what) {
    for (Index i : idx) {
        if (i < 0 || i >= n) {
            throw InputError(std::string(what) + " index " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
        }
    }
}

Matrix gather(const Matrix& full, const std::vector<Index>& idx) {
    Matrix out(static_cast<Index>(idx.size()), full.cols());
    for (std::size_t b = 0; b < idx.size(); ++b) out.row(static_cast<Index>(b)) = full.row(idx[b]);
    return out;
}

std::vector<Index> flag_anomalies(const Matrix& t, double threshold) {
    std::vector<Index> rows;
    for (Index b = 0; b < t.rows(); ++b) {
        if (!t.row(b).allFinite() || t.row(b).cwiseAbs().maxCoeff() > threshold) rows.push_back(b);
    }
    return rows;
}

}  // namespace

std::vector<Index> index_column(const Matrix& batch) {
    if (batch.cols() != 1) throw InputError("expected a single column of indices");
    std::vector<Index> idx(static_cast<std::size_t>(batch.rows()));
    for (Index b = 0; b < batch.rows(); ++b) {
        const double v = batch(b, 0);
        if (!(v >= 0) || std::floor(v) != v) throw InputError("indices must be non-negative integers");
        idx[static_cast<std::size_t>(b)] = static_cast<Index>(v);
    }
    return idx;
}

LaplacianResult fd_laplacian(const BatchFunction& f, const Matrix& batch, double eps) {
    if (!(eps > 0)) throw InputError("finite-difference epsilon must be positive");
    const Matrix points = stencil_points(batch, eps);
    const Matrix values = f(points);
    if (values.rows() != points.rows()) throw InputError("evaluator returned the wrong number of rows");
    require_finite_stencil(values, points);
    return {stencil_laplacian(values, batch.rows(), batch.cols(), eps), values.topRows(batch.rows())};
}

OperatorApplication negative_hamiltonian_apply(const BatchFunction& model, const HamiltonianSpec& spec,
                                               const ImportanceScheme& importance, const Matrix& batch) {
    if (!spec.potential) throw InputError("Hamiltonian needs a potential");
    if (!(spec.fd_epsilon > 0)) throw InputError("fd_epsilon must be positive");
    const Index s = batch.rows(), d = batch.cols();
    const Matrix points = stencil_points(batch, spec.fd_epsilon);
    const Matrix raw = model(points);
    if (raw.rows() != points.rows()) throw InputError("model returned the wrong number of rows");
    require_finite_stencil(raw, points);

    // The operator acts on the unweighted function sqrt(w) * f~.
    Matrix unweighted = raw;
    Vector sqrt_w_center(s);
    for (Index r = 0; r < points.rows(); ++r) {
        const double w = importance(points.row(r));
        if (!(w > 0) || !std::isfinite(w)) {
            std::ostringstream os;
            os << "importance weight " << w << " at (" << points.row(r) << ") is not positive";
            throw NumericalError(os.str());
        }
        const double sw = std::sqrt(w);
        unweighted.row(r) *= sw;
        if (r < s) sqrt_w_center(r) = sw;
    }
    const Matrix lap = stencil_laplacian(unweighted, s, d, spec.fd_epsilon);

    OperatorApplication out;
    out.f_values = raw.topRows(s);
    Matrix t(s, raw.cols());
    for (Index b = 0; b < s; ++b) {
        const double v = spec.potential(batch.row(b));
        t.row(b) = spec.scale_kinetic * lap.row(b) / sqrt_w_center(b) - v * out.f_values.row(b);
    }
    if (spec.shift != 0.0) t += spec.shift * out.f_values;
    out.t_values = std::move(t);
    out.anomalies = flag_anomalies(out.t_values, spec.anomaly_threshold);
    return out;
}

MatrixApplication matrix_operator_apply(const Matrix& a, const BatchFunction& model_f,
                                        const BatchFunction& model_g, const std::vector<Index>& batch_rows,
                                        const std::vector<Index>& batch_cols,
                                        const MatrixImportance& importance) {
    const Index n = a.rows(), m = a.cols();
    check_indices(batch_rows, n, "row");
    check_indices(batch_cols, m, "column");
    const Vector w_rows = weights_or_ones(importance.rows, n, "row");
    const Vector w_cols = weights_or_ones(importance.cols, m, "column");

    const Matrix f_tilde = model_f(index_range(m));
    const Matrix g_tilde = model_g(index_range(n));
    const Matrix f_full = w_cols.cwiseSqrt().asDiagonal() * f_tilde;
    const Matrix g_full = w_rows.cwiseSqrt().asDiagonal() * g_tilde;

    const double ratio = static_cast<double>(n) / static_cast<double>(m);
    const Matrix tf = std::sqrt(ratio) * (a * f_full);                // N x L
    const Matrix tg = std::sqrt(1.0 / ratio) * (a.transpose() * g_full);  // M x L

    MatrixApplication out;
    out.forward.t_values = w_rows.cwiseSqrt().cwiseInverse().asDiagonal() * tf;
    out.forward.t_values = gather(out.forward.t_values, batch_rows);
    out.forward.f_values = gather(g_tilde, batch_rows);
    out.adjoint.t_values = w_cols.cwiseSqrt().cwiseInverse().asDiagonal() * tg;
    out.adjoint.t_values = gather(out.adjoint.t_values, batch_cols);
    out.adjoint.f_values = gather(f_tilde, batch_cols);
    return out;
}

KernelApplication kernel_operator_apply(const KernelFunction& k, const BatchFunction& model_f,
                                        const BatchFunction& model_g, const Matrix& batch_x,
                                        const Matrix& batch_y) {
    const Index s1 = batch_x.rows(), s2 = batch_y.rows();
    if (s1 == 0 || s2 == 0) throw InputError("kernel batches must be non-empty");
    KernelApplication out;
    out.kernel.resize(s1, s2);
    for (Index i = 0; i < s1; ++i) {
        for (Index j = 0; j < s2; ++j) {
            const double v = k(batch_x.row(i), batch_y.row(j));
            if (!std::isfinite(v)) {
                throw NumericalError("kernel is non-finite at pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
            }
            out.kernel(i, j) = v;
        }
    }
    out.f_values = model_f(batch_y);
    out.g_values = model_g(batch_x);
    out.forward.t_values = out.kernel * out.f_values / static_cast<double>(s2);
    out.forward.f_values = out.g_values;
    out.adjoint.t_values = out.kernel.transpose() * out.g_values / static_cast<double>(s1);
    out.adjoint.f_values = out.f_values;
    return out;
}

Vector kernel_operator_terms(const KernelApplication& app) {
    return (app.forward.f_values.cwiseProduct(app.forward.t_values)).colwise().mean().transpose();
}

Vector cdk_pair_contraction(const Matrix& f_values, const Matrix& g_values) {
    if (f_values.rows() != g_values.rows() || f_values.cols() != g_values.cols()) {
        throw InputError("paired f and g values must have matching shapes");
    }
    if (f_values.rows() == 0) throw InputError("empty batch");
    Vector out(f_values.cols() + 1);
    out(0) = 1.0;
    out.tail(f_values.cols()) = f_values.cwiseProduct(g_values).colwise().mean().transpose();
    return out;
}

MatrixBackend::MatrixBackend(Matrix a, bool self_adjoint, MatrixImportance importance)
    : a_(std::move(a)), self_adjoint_(self_adjoint), importance_(std::move(importance)) {
    if (self_adjoint_) {
        if (a_.rows() != a_.cols()) throw InputError("self-adjoint matrix problem needs a square matrix");
        const double scale = std::max(1.0, a_.cwiseAbs().maxCoeff());
        if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw InputError("self-adjoint matrix problem needs a symmetric matrix");
        }
    }
}

BatchEvaluation MatrixBackend::evaluate(const FunctionSystem& system, const SampleBatch& batch) const {
    const std::vector<Index> cols = index_column(batch.x);
    BatchEvaluation out;
    if (self_adjoint_) {
        const BatchFunction f = as_batch_function(system.f);
        const MatrixApplication app = matrix_operator_apply(a_, f, f, cols, cols, {importance_.cols, importance_.cols});
        out.f_values = app.adjoint.f_values;
        out.g_values = out.f_values;
        out.t_adjoint = app.adjoint.t_values;
        out.t_forward = app.adjoint.t_values;
        return out;
    }
    if (!system.g) throw InputError("asymmetric matrix problem needs a g model");
    const std::vector<Index> rows = index_column(batch.y);
    const MatrixApplication app = matrix_operator_apply(a_, as_batch_function(system.f),
                                                        as_batch_function(*system.g), rows, cols, importance_);
    out.f_values = app.adjoint.f_values;
    out.t_adjoint = app.adjoint.t_values;
    out.g_values = app.forward.f_values;
    out.t_forward = app.forward.t_values;
    return out;
}

HamiltonianBackend::HamiltonianBackend(HamiltonianSpec spec, ImportanceScheme importance)
    : spec_(std::move(spec)), importance_(std::move(importance)) {}

BatchEvaluation HamiltonianBackend::evaluate(const FunctionSystem& system, const SampleBatch& batch) const {
    const OperatorApplication app =
        negative_hamiltonian_apply(as_batch_function(system.f), spec_, importance_, batch.x);
    BatchEvaluation out;
    out.f_values = app.f_values;
    out.g_values = app.f_values;
    out.t_forward = app.t_values;
    out.t_adjoint = app.t_values;
    out.anomalies = app.anomalies;
    return out;
}

BatchEvaluation CdkBackend::evaluate(const FunctionSystem& system, const SampleBatch& batch) const {
    if (!system.g) throw InputError("dependence kernel problem needs a g model");
    if (batch.x.rows() != batch.y.rows()) throw InputError("dependence kernel needs paired samples");
    BatchEvaluation out;
    out.f_values = system.f(batch.x);
    out.g_values = (*system.g)(batch.y);
    // E_p(x,y)[f(X) g(Y)]: the paired partner stands in for the operator output.
    out.t_adjoint = out.g_values;
    out.t_forward = out.f_values;
    return out;
}

}  // namespace nestsvd
