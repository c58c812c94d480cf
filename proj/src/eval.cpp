#include "nestsvd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "nestsvd/errors.hpp"

namespace nestsvd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector mean_squares(const Matrix& v) {
    return v.colwise().squaredNorm().transpose() / static_cast<double>(v.rows());
}

Matrix take_cols(const Matrix& m, const std::vector<Index>& cols) {
    Matrix out(m.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = m.col(cols[k]);
    return out;
}

Matrix unit_columns(const Matrix& v) {
    Matrix out = v;
    const Vector norms = mean_squares(v).cwiseSqrt();
    for (Index l = 0; l < v.cols(); ++l) {
        if (norms(l) > kCollapsedNorm) out.col(l) /= norms(l);
    }
    return out;
}

// Whitened group when its Gram matrix is invertible, unit columns otherwise.
Matrix orthonormal_group(const Matrix& v) {
    try {
        return linalg::whiten_columns(v);
    } catch (const InputError&) {
        return unit_columns(v);
    }
}

double sorted_square_sum(const Matrix& m) {
    std::vector<double> sq;
    sq.reserve(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.size(); ++i) sq.push_back(m.data()[i] * m.data()[i]);
    std::sort(sq.begin(), sq.end());
    double s = 0;
    for (double x : sq) s += x;
    return s;
}

Matrix gram_inverse_sqrt(const Matrix& a, const char* name) {
    const Matrix gram = a.transpose() * a / static_cast<double>(a.rows());
    const linalg::EigResult<double> eig = linalg::exact_symmetric_eig(Matrix(0.5 * (gram + gram.transpose())));
    const double largest = eig.eigenvalues(0), smallest = eig.eigenvalues(eig.eigenvalues.size() - 1);
    if (!(largest > 0) || !(smallest > 1e-12 * largest)) {
        std::ostringstream os;
        os << "subspace_distance: " << name << " is rank deficient, smallest singular value "
           << std::sqrt(std::max(smallest, 0.0)) << " vs largest " << std::sqrt(std::max(largest, 0.0));
        throw NumericalError(os.str());
    }
    const Vector inv = eig.eigenvalues.cwiseSqrt().cwiseInverse();
    return eig.eigenvectors * inv.asDiagonal() * eig.eigenvectors.transpose();
}

}  // namespace

RayleighResult rayleigh_quotient(const Matrix& f_values, const Matrix& t_values) {
    if (f_values.rows() != t_values.rows() || f_values.cols() != t_values.cols()) {
        throw InputError("rayleigh_quotient: shape mismatch");
    }
    RayleighResult r;
    const Vector norms = mean_squares(f_values);
    const Vector num = f_values.cwiseProduct(t_values).colwise().mean().transpose();
    r.values.resize(f_values.cols());
    for (Index l = 0; l < f_values.cols(); ++l) {
        const bool collapsed = !(std::sqrt(norms(l)) >= kCollapsedNorm);
        r.collapsed.push_back(collapsed);
        r.values(l) = collapsed ? kNaN : num(l) / norms(l);
    }
    return r;
}

double relative_eigenvalue_error(double estimate, double truth) {
    if (!(truth > 0)) throw InputError("relative eigenvalue error needs a positive true eigenvalue");
    return std::abs(estimate - truth) / truth * 100.0;
}

Vector spectrum_from_norms(const Matrix& f_values, const Matrix& g_values) {
    if (f_values.cols() != g_values.cols()) throw InputError("spectrum_from_norms: mode counts differ");
    return mean_squares(f_values).cwiseProduct(mean_squares(g_values)).cwiseSqrt();
}

Vector spectrum_from_norms(const Matrix& f_values) { return mean_squares(f_values); }

DegeneracyGrouping DegeneracyGrouping::from_values(const Vector& truth, double rel_tol) {
    DegeneracyGrouping g;
    for (Index l = 0; l < truth.size(); ++l) {
        const bool join = l > 0 && std::abs(truth(l) - truth(l - 1)) <= rel_tol * std::max(1.0, std::abs(truth(l)));
        if (join) {
            g.groups.back().push_back(l);
        } else {
            g.groups.push_back({l});
        }
    }
    return g;
}

DegeneracyGrouping DegeneracyGrouping::singletons(Index modes) {
    DegeneracyGrouping g;
    for (Index l = 0; l < modes; ++l) g.groups.push_back({l});
    return g;
}

void DegeneracyGrouping::validate(Index modes) const {
    std::vector<int> seen(static_cast<std::size_t>(modes), 0);
    for (const auto& group : groups) {
        if (group.empty()) throw InputError("degeneracy grouping has an empty group");
        for (Index l : group) {
            if (l < 0 || l >= modes) throw InputError("degeneracy grouping names mode " + std::to_string(l));
            ++seen[static_cast<std::size_t>(l)];
        }
    }
    for (Index l = 0; l < modes; ++l) {
        if (seen[static_cast<std::size_t>(l)] != 1) {
            throw InputError("degeneracy grouping is not a partition: mode " + std::to_string(l) + " appears " +
                             std::to_string(seen[static_cast<std::size_t>(l)]) + " times");
        }
    }
}

std::vector<Index> DegeneracyGrouping::group_ids(Index modes) const {
    std::vector<Index> ids(static_cast<std::size_t>(modes), -1);
    for (std::size_t k = 0; k < groups.size(); ++k)
        for (Index l : groups[k]) ids[static_cast<std::size_t>(l)] = static_cast<Index>(k);
    return ids;
}

Vector angle_distance(const Matrix& learned, const Matrix& truth, const DegeneracyGrouping& grouping) {
    if (learned.rows() != truth.rows() || learned.cols() != truth.cols()) {
        throw InputError("angle_distance: shape mismatch");
    }
    grouping.validate(learned.cols());
    Vector out(learned.cols());
    for (const auto& group : grouping.groups) {
        const Matrix ref = unit_columns(take_cols(truth, group));
        const Matrix aligned = linalg::procrustes_align(orthonormal_group(take_cols(learned, group)), ref).aligned;
        for (std::size_t k = 0; k < group.size(); ++k) {
            const Index c = static_cast<Index>(k);
            const double na = aligned.col(c).norm(), nr = ref.col(c).norm();
            const double cosine = na > 0 && nr > 0 ? std::min(1.0, std::abs(aligned.col(c).dot(ref.col(c))) / (na * nr))
                                                   : 0.0;
            out(group[k]) = 2.0 / std::numbers::pi * std::acos(cosine);
        }
    }
    return out;
}

double subspace_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() == 0) {
        throw InputError("subspace_distance: shape mismatch");
    }
    const double s = static_cast<double>(a.rows());
    const Matrix wa = gram_inverse_sqrt(a, "first argument");
    const Matrix wb = gram_inverse_sqrt(b, "second argument");
    // average of both orders makes the result exactly symmetric
    const Matrix ab = wa * (a.transpose() * b / s) * wb;
    const Matrix ba = wb * (b.transpose() * a / s) * wa;
    const double overlap = 0.5 * (sorted_square_sum(ab) + sorted_square_sum(ba));
    return std::clamp(1.0 - overlap / static_cast<double>(a.cols()), 0.0, 1.0);
}

double orthogonality_error(const Matrix& f_values) {
    if (f_values.rows() < 1) throw InputError("orthogonality_error needs at least one sample");
    const Index l = f_values.cols();
    const Matrix gram = f_values.transpose() * f_values / static_cast<double>(f_values.rows());
    return (gram - Matrix::Identity(l, l)).squaredNorm() / static_cast<double>(l * l);
}

double nystrom_extend(const KernelFunction& k, const Matrix& train_points, const Vector& right_vector, double sigma,
                      const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    if (!(sigma > 1e-10)) {
        throw NumericalError("Nystrom extension needs sigma > 1e-10, got " + std::to_string(sigma));
    }
    if (train_points.rows() != right_vector.size()) throw InputError("Nystrom: point and vector sizes differ");
    double s = 0;
    for (Index j = 0; j < train_points.rows(); ++j) s += k(x, train_points.row(j)) * right_vector(j);
    return s / (sigma * static_cast<double>(train_points.rows()));
}

RitzResult rayleigh_ritz(const Matrix& basis_values, const Matrix& t_basis_values) {
    if (basis_values.rows() != t_basis_values.rows() || basis_values.cols() != t_basis_values.cols()) {
        throw InputError("rayleigh_ritz: shape mismatch");
    }
    const Matrix b = basis_values.transpose() * t_basis_values / static_cast<double>(basis_values.rows());
    RitzResult r;
    r.asymmetry = (b - b.transpose()).cwiseAbs().maxCoeff();
    if (r.asymmetry > 1e-8) {
        r.symmetrized = true;
        std::cerr << "warning: Rayleigh-Ritz matrix asymmetric by " << r.asymmetry << "; symmetrizing\n";
    }
    const linalg::EigResult<double> eig = linalg::exact_symmetric_eig(Matrix(0.5 * (b + b.transpose())));
    r.values = eig.eigenvalues;
    r.coefficients = eig.eigenvectors;
    return r;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_report(const EvalInputs& in) {
    const Index l = in.f.cols();
    if (in.operator_terms.size() != l) throw InputError("evaluate_report: operator terms do not match the modes");
    const Matrix& g = in.self_adjoint ? in.f : in.g;
    if (g.cols() != l) throw InputError("evaluate_report: f and g mode counts differ");
    in.grouping.validate(l);

    EvalReport r;
    const Vector f2 = mean_squares(in.f), g2 = mean_squares(g);
    r.norm_spectrum = in.self_adjoint ? f2 : spectrum_from_norms(in.f, g);
    r.eigenvalue_estimates.resize(l);
    r.relative_errors = Vector::Constant(l, kNaN);
    for (Index k = 0; k < l; ++k) {
        const bool collapsed = !(std::sqrt(f2(k)) >= kCollapsedNorm) || !(std::sqrt(g2(k)) >= kCollapsedNorm);
        r.collapsed.push_back(collapsed);
        r.eigenvalue_estimates(k) = collapsed ? kNaN : in.operator_terms(k) / std::sqrt(f2(k) * g2(k));
        if (!collapsed && k < in.truth_values.size() && in.truth_values(k) > 0) {
            r.relative_errors(k) = relative_eigenvalue_error(r.eigenvalue_estimates(k), in.truth_values(k));
        }
    }
    r.group_ids = in.grouping.group_ids(l);

    auto worst = [](double a, double b) { return std::isnan(a) || std::isnan(b) ? kNaN : std::max(a, b); };
    r.angle_distances = Vector::Constant(l, kNaN);
    r.subspace_distances = Vector::Constant(static_cast<Index>(in.grouping.groups.size()), kNaN);
    const bool have_f = in.truth_f.size() > 0;
    const bool have_g = in.self_adjoint || in.truth_g.size() > 0;
    if (have_f && have_g) {
        r.angle_distances = angle_distance(in.f, in.truth_f, in.grouping);
        if (!in.self_adjoint) r.angle_distances = r.angle_distances.binaryExpr(angle_distance(g, in.truth_g, in.grouping), worst);
        for (std::size_t k = 0; k < in.grouping.groups.size(); ++k) {
            const auto& group = in.grouping.groups[k];
            try {
                double d = subspace_distance(take_cols(in.f, group), take_cols(in.truth_f, group));
                if (!in.self_adjoint) d = worst(d, subspace_distance(take_cols(g, group), take_cols(in.truth_g, group)));
                r.subspace_distances(static_cast<Index>(k)) = d;
            } catch (const NumericalError&) {
                // a collapsed mode leaves the group's span undefined
            }
        }
    }
    r.orthogonality_error = orthogonality_error(unit_columns(in.f));
    if (!in.self_adjoint) r.orthogonality_error = std::max(r.orthogonality_error, orthogonality_error(unit_columns(g)));
    return r;
}

namespace {

std::string cell(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

std::string eval_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "mode,eigenvalue_estimate,relative_error_pct,angle_distance,norm_sigma,group_id,subspace_distance\n";
    for (Index l = 0; l < r.eigenvalue_estimates.size(); ++l) {
        const Index gid = r.group_ids[static_cast<std::size_t>(l)];
        os << l + 1 << ',' << cell(r.eigenvalue_estimates(l)) << ',' << cell(r.relative_errors(l)) << ','
           << cell(r.angle_distances(l)) << ',' << cell(r.norm_spectrum(l)) << ',' << gid << ','
           << cell(r.subspace_distances(gid)) << '\n';
    }
    os << "orthogonality_error," << cell(r.orthogonality_error) << ",,,,,\n";
    return os.str();
}

}  // namespace nestsvd
