#pragma once

// Operator backends. Every backend hands back paired values in the importance-
// weighted convention: models represent f~ = f / sqrt(w_tr), and operator
// outputs are (Tf)(x) / sqrt(w_tr(x)), so plain batch means estimate inner
// products under the base measure.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nestsvd/linalg.hpp"
#include "nestsvd/models.hpp"

namespace nestsvd {

/// Maps an S x D batch to S x L values.
using BatchFunction = std::function<Matrix(const Matrix&)>;
/// Scalar function of one point (a row of a batch).
using PointFunction = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>;
using KernelFunction = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&,
                                            const Eigen::Ref<const Eigen::RowVectorXd>&)>;

inline BatchFunction as_batch_function(const Model& model) {
    return [&model](const Matrix& x) { return model(x); };
}

struct OperatorApplication {
    Matrix t_values;
    Matrix f_values;
    std::vector<Index> anomalies;  // rows whose operator value is non-finite or over threshold
};

struct LaplacianResult {
    Matrix laplacian;
    Matrix values;
};

/// Central-difference Laplacian from one call of `f` on the stacked (2D+1)S stencil.
LaplacianResult fd_laplacian(const BatchFunction& f, const Matrix& batch, double eps);

struct HamiltonianSpec {
    PointFunction potential;
    double scale_kinetic = 1.0;
    double shift = 0.0;
    double fd_epsilon = 0.01;
    Index n_particles = 1;
    double anomaly_threshold = 1e5;
};

/// w_tr(x) = p_tr(x) / mu(x). An empty density means w_tr == 1.
struct ImportanceScheme {
    std::string sampler_id = "base";
    PointFunction density_over_base;

    double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
        return density_over_base ? density_over_base(x) : 1.0;
    }
};

/// t = scale * lap(sqrt(w) f~) / sqrt(w) - V f~ + c f~, with f_values = f~.
OperatorApplication negative_hamiltonian_apply(const BatchFunction& model, const HamiltonianSpec& spec,
                                               const ImportanceScheme& importance, const Matrix& batch);

struct MatrixApplication {
    OperatorApplication forward;  // t = (Tf)(i_b), f_values = g(i_b)
    OperatorApplication adjoint;  // t = (T*g)(j_b), f_values = f(j_b)
};

/// Per-index importance weights for the matrix backend; empty vectors mean uniform sampling.
struct MatrixImportance {
    Vector rows;
    Vector cols;
};

/// T maps functions on the M column indices to functions on the N row indices,
/// with uniform probability measures on both. (Tf)(i) = sqrt(N/M) sum_j A_ij f(j)
/// keeps T adjoint-consistent and makes its singular values those of A.
MatrixApplication matrix_operator_apply(const Matrix& a, const BatchFunction& model_f,
                                        const BatchFunction& model_g, const std::vector<Index>& batch_rows,
                                        const std::vector<Index>& batch_cols,
                                        const MatrixImportance& importance = {});

struct KernelApplication {
    Matrix kernel;    // S1 x S2, kernel(i, j) = k(x_i, y_j)
    Matrix f_values;  // f at batch_y
    Matrix g_values;  // g at batch_x
    OperatorApplication forward;  // t = K f / S2 at batch_x, paired with g
    OperatorApplication adjoint;  // t = K^T g / S1 at batch_y, paired with f
};

KernelApplication kernel_operator_apply(const KernelFunction& k, const BatchFunction& model_f,
                                        const BatchFunction& model_g, const Matrix& batch_x,
                                        const Matrix& batch_y);

/// Per-mode (1 / (S1 S2)) sum_ij g_l(x_i) K_ij f_l(y_j).
Vector kernel_operator_terms(const KernelApplication& app);

/// Mean of f_l(x_b) g_l(y_b) over jointly drawn pairs, prefixed by the constant mode's value 1.
Vector cdk_pair_contraction(const Matrix& f_values, const Matrix& g_values);

// ---------------------------------------------------------------------------
// Backend interface shared by the training loop and the gradient checker.

/// f-side samples x and g-side samples y. For self-adjoint problems y is unused;
/// for paired problems row b of x and y is one joint draw.
struct SampleBatch {
    Matrix x;
    Matrix y;
};

struct FunctionSystem {
    Model f;
    std::optional<Model> g;  // absent for self-adjoint problems, where g == f
};

struct BatchEvaluation {
    Matrix f_values;   // at x
    Matrix g_values;   // at y (aliases f_values when self-adjoint)
    Matrix t_forward;  // Tf side, paired row-wise with g_values
    Matrix t_adjoint;  // T*g side, paired row-wise with f_values
    std::vector<Index> anomalies;
};

class OperatorBackend {
public:
    virtual ~OperatorBackend() = default;
    virtual BatchEvaluation evaluate(const FunctionSystem& system, const SampleBatch& batch) const = 0;
    virtual bool self_adjoint() const = 0;
    /// True when the operator carries a known constant top mode that is padded in.
    virtual bool constant_mode() const { return false; }
};

class MatrixBackend final : public OperatorBackend {
public:
    MatrixBackend(Matrix a, bool self_adjoint, MatrixImportance importance = {});
    BatchEvaluation evaluate(const FunctionSystem& system, const SampleBatch& batch) const override;
    bool self_adjoint() const override { return self_adjoint_; }
    const Matrix& matrix() const { return a_; }
    const MatrixImportance& importance() const { return importance_; }

private:
    Matrix a_;
    bool self_adjoint_;
    MatrixImportance importance_;
};

class HamiltonianBackend final : public OperatorBackend {
public:
    HamiltonianBackend(HamiltonianSpec spec, ImportanceScheme importance);
    BatchEvaluation evaluate(const FunctionSystem& system, const SampleBatch& batch) const override;
    bool self_adjoint() const override { return true; }
    const HamiltonianSpec& spec() const { return spec_; }
    const ImportanceScheme& importance() const { return importance_; }

private:
    HamiltonianSpec spec_;
    ImportanceScheme importance_;
};

/// Un-centered dependence kernel p(x,y)/(p(x)p(y)) estimated from joint pairs;
/// its trivial constant mode is supplied by padding downstream.
class CdkBackend final : public OperatorBackend {
public:
    BatchEvaluation evaluate(const FunctionSystem& system, const SampleBatch& batch) const override;
    bool self_adjoint() const override { return false; }
    bool constant_mode() const override { return true; }
};

std::vector<Index> index_column(const Matrix& batch);

}  // namespace nestsvd
