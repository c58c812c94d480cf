#pragma once

// Evaluation measures: Rayleigh quotients, norm-based spectrum estimates,
// angle and subspace distances against ground truth, orthogonality, Nystrom
// extension and Rayleigh-Ritz post-processing.
//
// Every value array here is S x L with rows scaled so that plain column means
// estimate inner products under the problem's base measure.

#include <string>
#include <vector>

#include "nestsvd/linalg.hpp"
#include "nestsvd/operators.hpp"

namespace nestsvd {

/// Modes whose empirical norm falls below this are reported as collapsed.
inline constexpr double kCollapsedNorm = 1e-8;

struct RayleighResult {
    Vector values;  // NaN for collapsed modes
    std::vector<bool> collapsed;
};

/// <f|Tf> / <f|f> per mode.
RayleighResult rayleigh_quotient(const Matrix& f_values, const Matrix& t_values);

/// |estimate - truth| / truth * 100; truth must be positive.
double relative_eigenvalue_error(double estimate, double truth);

/// sqrt(mean f^2 * mean g^2) per mode.
Vector spectrum_from_norms(const Matrix& f_values, const Matrix& g_values);
/// mean f^2 per mode, the eigenvalue estimate of scaled eigenfunctions.
Vector spectrum_from_norms(const Matrix& f_values);

struct DegeneracyGrouping {
    std::vector<std::vector<Index>> groups;

    /// Consecutive modes whose truth values agree within rel_tol * max(1, |value|).
    static DegeneracyGrouping from_values(const Vector& truth, double rel_tol = 1e-9);
    static DegeneracyGrouping singletons(Index modes);
    /// Throws InputError unless groups partition [0, modes).
    void validate(Index modes) const;
    std::vector<Index> group_ids(Index modes) const;
};

/// (2/pi) arccos |<learned_l|truth_l>| per mode after each degenerate group of
/// `learned` is whitened and rotated onto the truth by Procrustes.
Vector angle_distance(const Matrix& learned, const Matrix& truth, const DegeneracyGrouping& grouping);

/// 1 - ||Qa^T Qb||_F^2 / K for orthonormal bases of the column spans.
/// Symmetric in its arguments bit for bit. Throws NumericalError on rank deficiency.
double subspace_distance(const Matrix& a, const Matrix& b);

/// ||G - I||_F^2 / L^2 with G the empirical Gram matrix of the columns.
double orthogonality_error(const Matrix& f_values);

/// (1 / (sigma N)) sum_j k(x, y_j) v_j. Throws NumericalError when sigma <= 1e-10.
double nystrom_extend(const KernelFunction& k, const Matrix& train_points, const Vector& right_vector, double sigma,
                      const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct RitzResult {
    Vector values;       // descending
    Matrix coefficients;  // columns are Ritz vectors in the basis
    double asymmetry = 0;
    bool symmetrized = false;  // true when asymmetry exceeded 1e-8 (a warning is printed)
};

/// Ritz pairs of B_ij = <basis_i|T basis_j> for an orthonormal basis.
RitzResult rayleigh_ritz(const Matrix& basis_values, const Matrix& t_basis_values);

// ---------------------------------------------------------------------------

struct EvalInputs {
    bool self_adjoint = true;
    Matrix f;               // learned f values
    Matrix g;               // learned g values; unused when self_adjoint
    Vector operator_terms;  // <g_l|T f_l> (or <f_l|T f_l>) per mode
    Matrix truth_f;         // optional, same rows as f
    Matrix truth_g;         // optional, same rows as g
    Vector truth_values;    // per mode; NaN where unknown
    DegeneracyGrouping grouping;
};

struct EvalReport {
    Vector eigenvalue_estimates;
    Vector relative_errors;  // percent, NaN where the truth is not positive
    Vector angle_distances;
    Vector norm_spectrum;
    std::vector<Index> group_ids;
    Vector subspace_distances;  // per group
    double orthogonality_error = 0;
    std::vector<bool> collapsed;
};

/// Rayleigh quotients (normalized <g|Tf> for singular problems), norm spectrum,
/// distances against whatever truth is provided, and the orthogonality of the
/// unit-normalized learned functions (worst side for singular problems).
EvalReport evaluate_report(const EvalInputs& in);

/// One row per mode plus a trailing orthogonality_error row; NaN cells are empty.
std::string eval_csv(const EvalReport& report);

}  // namespace nestsvd
