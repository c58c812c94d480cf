#pragma once

// Nested low-rank-approximation objective and its per-sample cotangents.
//
//   L = -2 sum_l m_l <g_l|T f_l> + sum_{l,l'} M_{ll'} <f_l|f_l'> <g_l|g_l'>
//
// Everything below works on S x L value arrays; parameter gradients come from
// handing the cotangents to model_backward.

#include <string>
#include <vector>

#include "nestsvd/linalg.hpp"
#include "nestsvd/operators.hpp"

namespace nestsvd {

enum class MaskMode { joint, sequential, none };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

struct NestingMasks {
    Vector vector_mask;
    Matrix matrix_mask;
    MaskMode mode = MaskMode::joint;
    bool padded = false;  // constant mode prepended as entry 0

    Index size() const { return vector_mask.size(); }
};

/// m_l = sum_{i >= l} w_i, M_ij = m_max(i,j). Padding duplicates m_1 in front.
NestingMasks joint_masks(const Vector& weights, bool set_first_mode_const = false);
/// m = 1, M_il = 1{i <= l}.
NestingMasks sequential_masks(Index modes, bool set_first_mode_const = false);
/// m = 1, M = 1: plain LoRA, which identifies the top subspace only.
NestingMasks no_nesting_masks(Index modes, bool set_first_mode_const = false);

/// (1/S) V^T V.
Matrix compute_lambda(const Matrix& v);

double metric_loss(const NestingMasks& masks, const Matrix& lambda_f, const Matrix& lambda_g);

struct LossReport {
    double total = 0;
    double operator_term = 0;
    double metric_term = 0;
    Vector per_mode;  // <g_l|T f_l> estimates
};

LossReport nested_objective(const NestingMasks& masks, const Vector& operator_terms, const Matrix& lambda_f,
                            const Matrix& lambda_g);

struct Cotangents {
    Matrix df;
    Matrix dg;
};

/// df[b,l] = 2(-m_l t_adjoint[b,l] + sum_i M_il f[b,i] Lg[i,l]) / S_f, and dg likewise
/// with (t_forward, g, Lf). Lambdas must not depend on the rows they multiply.
Cotangents nestedlora_cotangents(const NestingMasks& masks, const Matrix& f_values, const Matrix& g_values,
                                 const Matrix& t_forward, const Matrix& t_adjoint, const Matrix& lambda_f_indep,
                                 const Matrix& lambda_g_indep);

struct BatchHalves {
    std::vector<Index> first;   // 0 .. S/2 - 1
    std::vector<Index> second;  // S/2 .. S - 1
};

/// Requires S even and S >= 4.
BatchHalves batch_split(Index batch_size);

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows);

/// Cotangents where rows of each half see the Gram estimates of the other half.
/// With `exact` the Gram matrices come from the whole batch instead (full-population use).
Cotangents batch_cotangents(const NestingMasks& masks, const BatchEvaluation& eval, bool exact);

/// Objective estimate matching batch_cotangents: metric term symmetrized over
/// the two half-batch pairings, or computed from full Gram matrices when `exact`.
LossReport batch_objective(const NestingMasks& masks, const BatchEvaluation& eval, bool exact);

/// Prepends / removes the literal all-ones column of the constant mode.
Matrix pad_constant_mode(const Matrix& values);
Matrix strip_constant_mode(const Matrix& values);

/// Unbiased NeuralEF cotangent 4(-T phi_l + sum_{i<l} <phi_i|phi_l> T phi_i) / S.
Matrix neuralef_unbiased_cotangent(const Matrix& phi, const Matrix& t_phi, const Matrix& gram_indep);

/// Batch L2 normalization phi = f / sqrt(mean f^2) per column, with its backward pass.
struct NormalizedBatch {
    Matrix phi;
    Vector norms;
};
NormalizedBatch l2_normalize_columns(const Matrix& f);
Matrix l2_normalize_backward(const NormalizedBatch& nb, const Matrix& dphi);

/// NeuralEF cotangent with respect to the raw model outputs of a self-adjoint
/// evaluation: normalizes, uses the other half's Gram for the coupling (or the
/// full batch's when `exact`), then pulls back through the normalization.
Matrix neuralef_batch_cotangent(const BatchEvaluation& eval, bool exact);

}  // namespace nestsvd
