#include "nestsvd/nestedlora.hpp"

#include <sstream>

#include "nestsvd/errors.hpp"

namespace nestsvd {

namespace {

void require_square_shape(const Matrix& m, Index n, const char* what) {
    if (m.rows() != n || m.cols() != n) {
        std::ostringstream os;
        os << what << " is " << m.rows() << "x" << m.cols() << ", expected " << n << "x" << n;
        throw InputError(os.str());
    }
}

void require_columns(const Matrix& m, Index n, const char* what) {
    if (m.cols() != n) {
        std::ostringstream os;
        os << what << " has " << m.cols() << " modes, masks have " << n;
        throw InputError(os.str());
    }
}

Vector prepend_first(const Vector& v) {
    Vector out(v.size() + 1);
    out(0) = v(0);
    out.tail(v.size()) = v;
    return out;
}

// (f (M .* Lambda))[b,l] = sum_i f[b,i] M_il Lambda_il
Matrix metric_pull(const Matrix& values, const Matrix& mask, const Matrix& lambda) {
    return values * mask.cwiseProduct(lambda);
}

}  // namespace

std::string to_string(MaskMode mode) {
    switch (mode) {
        case MaskMode::joint: return "joint";
        case MaskMode::sequential: return "sequential";
        case MaskMode::none: return "none";
    }
    return "?";
}

MaskMode parse_mask_mode(const std::string& name) {
    if (name == "joint") return MaskMode::joint;
    if (name == "sequential") return MaskMode::sequential;
    if (name == "none") return MaskMode::none;
    throw InputError("unknown mask type '" + name + "'");
}

NestingMasks joint_masks(const Vector& weights, bool set_first_mode_const) {
    if (weights.size() < 1) throw InputError("joint masks need at least one weight");
    for (Index i = 0; i < weights.size(); ++i) {
        if (!(weights(i) > 0) || !std::isfinite(weights(i))) {
            std::ostringstream os;
            os << "joint-mask weight " << i << " is " << weights(i) << "; weights must be positive";
            throw InputError(os.str());
        }
    }
    NestingMasks out;
    out.mode = MaskMode::joint;
    out.padded = set_first_mode_const;
    Vector m(weights.size());
    double acc = 0;
    for (Index i = weights.size(); i-- > 0;) {
        acc += weights(i);
        m(i) = acc;
    }
    out.vector_mask = set_first_mode_const ? prepend_first(m) : m;
    const Index n = out.vector_mask.size();
    out.matrix_mask.resize(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) out.matrix_mask(i, j) = out.vector_mask(std::max(i, j));
    return out;
}

NestingMasks sequential_masks(Index modes, bool set_first_mode_const) {
    if (modes < 1) throw InputError("sequential masks need at least one mode");
    const Index n = modes + (set_first_mode_const ? 1 : 0);
    NestingMasks out;
    out.mode = MaskMode::sequential;
    out.padded = set_first_mode_const;
    out.vector_mask = Vector::Ones(n);
    out.matrix_mask = Matrix::Ones(n, n).triangularView<Eigen::Upper>();
    return out;
}

NestingMasks no_nesting_masks(Index modes, bool set_first_mode_const) {
    if (modes < 1) throw InputError("masks need at least one mode");
    const Index n = modes + (set_first_mode_const ? 1 : 0);
    NestingMasks out;
    out.mode = MaskMode::none;
    out.padded = set_first_mode_const;
    out.vector_mask = Vector::Ones(n);
    out.matrix_mask = Matrix::Ones(n, n);
    return out;
}

Matrix compute_lambda(const Matrix& v) {
    if (v.rows() < 1) throw InputError("compute_lambda needs at least one sample");
    return v.transpose() * v / static_cast<double>(v.rows());
}

double metric_loss(const NestingMasks& masks, const Matrix& lambda_f, const Matrix& lambda_g) {
    require_square_shape(lambda_f, masks.size(), "lambda_f");
    require_square_shape(lambda_g, masks.size(), "lambda_g");
    return masks.matrix_mask.cwiseProduct(lambda_f).cwiseProduct(lambda_g).sum();
}

LossReport nested_objective(const NestingMasks& masks, const Vector& operator_terms, const Matrix& lambda_f,
                            const Matrix& lambda_g) {
    if (operator_terms.size() != masks.size()) throw InputError("operator terms do not match the masks");
    LossReport r;
    r.per_mode = operator_terms;
    r.operator_term = -2.0 * masks.vector_mask.dot(operator_terms);
    r.metric_term = metric_loss(masks, lambda_f, lambda_g);
    r.total = r.operator_term + r.metric_term;
    return r;
}

Cotangents nestedlora_cotangents(const NestingMasks& masks, const Matrix& f_values, const Matrix& g_values,
                                 const Matrix& t_forward, const Matrix& t_adjoint, const Matrix& lambda_f_indep,
                                 const Matrix& lambda_g_indep) {
    const Index n = masks.size();
    if (t_adjoint.size() == 0 || t_forward.size() == 0) {
        throw InputError("asymmetric operators need both forward and adjoint applications");
    }
    require_columns(f_values, n, "f_values");
    require_columns(g_values, n, "g_values");
    require_columns(t_forward, n, "t_forward");
    require_columns(t_adjoint, n, "t_adjoint");
    if (t_adjoint.rows() != f_values.rows() || t_forward.rows() != g_values.rows()) {
        throw InputError("operator values must be paired row-wise with the function values");
    }
    require_square_shape(lambda_f_indep, n, "lambda_f");
    require_square_shape(lambda_g_indep, n, "lambda_g");

    const auto m = masks.vector_mask.transpose();
    Cotangents c;
    c.df = (2.0 / static_cast<double>(f_values.rows())) *
           (metric_pull(f_values, masks.matrix_mask, lambda_g_indep) - (t_adjoint.array().rowwise() * m.array()).matrix());
    c.dg = (2.0 / static_cast<double>(g_values.rows())) *
           (metric_pull(g_values, masks.matrix_mask, lambda_f_indep) - (t_forward.array().rowwise() * m.array()).matrix());
    return c;
}

BatchHalves batch_split(Index batch_size) {
    if (batch_size < 4 || batch_size % 2 != 0) {
        throw InputError("batch size " + std::to_string(batch_size) +
                         " cannot be split; use an even batch size of at least 4");
    }
    BatchHalves h;
    for (Index i = 0; i < batch_size / 2; ++i) h.first.push_back(i);
    for (Index i = batch_size / 2; i < batch_size; ++i) h.second.push_back(i);
    return h;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

Matrix pad_constant_mode(const Matrix& values) {
    Matrix out(values.rows(), values.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(values.cols()) = values;
    return out;
}

Matrix strip_constant_mode(const Matrix& values) {
    if (values.cols() < 1) throw InputError("nothing to strip");
    return values.rightCols(values.cols() - 1);
}

namespace {

BatchEvaluation padded_view(const NestingMasks& masks, const BatchEvaluation& eval) {
    if (!masks.padded) return eval;
    BatchEvaluation p;
    p.f_values = pad_constant_mode(eval.f_values);
    p.g_values = pad_constant_mode(eval.g_values);
    p.t_forward = pad_constant_mode(eval.t_forward);
    p.t_adjoint = pad_constant_mode(eval.t_adjoint);
    return p;
}

// Cotangent rows of `values` where each half uses the other half's Gram of `partner`.
Matrix split_metric(const Matrix& values, const Matrix& partner, const Matrix& mask) {
    const BatchHalves hv = batch_split(values.rows());
    const BatchHalves hp = batch_split(partner.rows());
    const Matrix lam_first = compute_lambda(take_rows(partner, hp.first));
    const Matrix lam_second = compute_lambda(take_rows(partner, hp.second));
    Matrix out(values.rows(), values.cols());
    const Index half = values.rows() / 2;
    out.topRows(half) = metric_pull(values.topRows(half), mask, lam_second);
    out.bottomRows(values.rows() - half) = metric_pull(values.bottomRows(values.rows() - half), mask, lam_first);
    return out;
}

}  // namespace

Cotangents batch_cotangents(const NestingMasks& masks, const BatchEvaluation& eval, bool exact) {
    const BatchEvaluation p = padded_view(masks, eval);
    Cotangents c;
    if (exact) {
        c = nestedlora_cotangents(masks, p.f_values, p.g_values, p.t_forward, p.t_adjoint, compute_lambda(p.f_values),
                                  compute_lambda(p.g_values));
    } else {
        const Index n = masks.size();
        require_columns(p.f_values, n, "f_values");
        require_columns(p.g_values, n, "g_values");
        // Operator part from the shared routine with zero Gram, metric part from the split.
        const Matrix zero = Matrix::Zero(n, n);
        c = nestedlora_cotangents(masks, p.f_values, p.g_values, p.t_forward, p.t_adjoint, zero, zero);
        c.df += (2.0 / static_cast<double>(p.f_values.rows())) * split_metric(p.f_values, p.g_values, masks.matrix_mask);
        c.dg += (2.0 / static_cast<double>(p.g_values.rows())) * split_metric(p.g_values, p.f_values, masks.matrix_mask);
    }
    if (masks.padded) {
        c.df = strip_constant_mode(c.df);
        c.dg = strip_constant_mode(c.dg);
    }
    return c;
}

LossReport batch_objective(const NestingMasks& masks, const BatchEvaluation& eval, bool exact) {
    const BatchEvaluation p = padded_view(masks, eval);
    const Vector terms = p.g_values.cwiseProduct(p.t_forward).colwise().mean().transpose();
    if (exact) return nested_objective(masks, terms, compute_lambda(p.f_values), compute_lambda(p.g_values));
    const BatchHalves hf = batch_split(p.f_values.rows());
    const BatchHalves hg = batch_split(p.g_values.rows());
    const Matrix fa = compute_lambda(take_rows(p.f_values, hf.first));
    const Matrix fb = compute_lambda(take_rows(p.f_values, hf.second));
    const Matrix ga = compute_lambda(take_rows(p.g_values, hg.first));
    const Matrix gb = compute_lambda(take_rows(p.g_values, hg.second));
    LossReport r = nested_objective(masks, terms, fa, gb);
    r.metric_term = 0.5 * (metric_loss(masks, fa, gb) + metric_loss(masks, fb, ga));
    r.total = r.operator_term + r.metric_term;
    return r;
}

Matrix neuralef_unbiased_cotangent(const Matrix& phi, const Matrix& t_phi, const Matrix& gram_indep) {
    const Index l = phi.cols();
    if (t_phi.rows() != phi.rows() || t_phi.cols() != l) throw InputError("phi and T phi shapes differ");
    require_square_shape(gram_indep, l, "gram");
    // coupling[i,l] = <phi_i|phi_l> for i < l only
    const Matrix coupling = gram_indep.triangularView<Eigen::StrictlyUpper>();
    return (4.0 / static_cast<double>(phi.rows())) * (-t_phi + t_phi * coupling);
}

NormalizedBatch l2_normalize_columns(const Matrix& f) {
    NormalizedBatch nb;
    nb.norms = (f.colwise().squaredNorm() / static_cast<double>(f.rows())).cwiseSqrt().transpose();
    for (Index l = 0; l < nb.norms.size(); ++l) {
        if (!(nb.norms(l) > 0)) throw NumericalError("mode " + std::to_string(l) + " has zero batch norm");
    }
    nb.phi = f * nb.norms.cwiseInverse().asDiagonal();
    return nb;
}

Matrix l2_normalize_backward(const NormalizedBatch& nb, const Matrix& dphi) {
    const double s = static_cast<double>(nb.phi.rows());
    const Eigen::RowVectorXd proj = dphi.cwiseProduct(nb.phi).colwise().sum() / s;
    Matrix out = dphi - nb.phi * proj.asDiagonal();
    return out * nb.norms.cwiseInverse().asDiagonal();
}

Matrix neuralef_batch_cotangent(const BatchEvaluation& eval, bool exact) {
    const NormalizedBatch nb = l2_normalize_columns(eval.f_values);
    const Matrix t_phi = eval.t_adjoint * nb.norms.cwiseInverse().asDiagonal();
    Matrix dphi;
    if (exact) {
        dphi = neuralef_unbiased_cotangent(nb.phi, t_phi, compute_lambda(nb.phi));
    } else {
        const BatchHalves h = batch_split(nb.phi.rows());
        const Index half = nb.phi.rows() / 2;
        const Matrix gram_first = compute_lambda(take_rows(nb.phi, h.first));
        const Matrix gram_second = compute_lambda(take_rows(nb.phi, h.second));
        dphi.resize(nb.phi.rows(), nb.phi.cols());
        // each half is scaled by the full batch size so the halves add up to one estimate
        const Matrix coupling_a = gram_second.triangularView<Eigen::StrictlyUpper>();
        const Matrix coupling_b = gram_first.triangularView<Eigen::StrictlyUpper>();
        const double scale = 4.0 / static_cast<double>(nb.phi.rows());
        dphi.topRows(half) = scale * (-t_phi.topRows(half) + t_phi.topRows(half) * coupling_a);
        dphi.bottomRows(half) = scale * (-t_phi.bottomRows(half) + t_phi.bottomRows(half) * coupling_b);
    }
    return l2_normalize_backward(nb, dphi);
}

}  // namespace nestsvd
