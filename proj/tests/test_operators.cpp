#include "doctest.h"

#include <cmath>
#include <numbers>

#include "nestsvd/operators.hpp"
#include "nestsvd/problems.hpp"
#include "nestsvd/random.hpp"

using namespace nestsvd;

namespace {

BatchFunction pointwise(std::function<double(double, double)> f) {
    return [f](const Matrix& x) {
        Matrix v(x.rows(), 1);
        for (Index r = 0; r < x.rows(); ++r) v(r, 0) = f(x(r, 0), x.cols() > 1 ? x(r, 1) : 0.0);
        return v;
    };
}

BatchFunction table_function(const Matrix& table) {
    return [table](const Matrix& idx) {
        Matrix out(idx.rows(), table.cols());
        for (Index b = 0; b < idx.rows(); ++b) out.row(b) = table.row(static_cast<Index>(idx(b, 0)));
        return out;
    };
}

std::vector<Index> all_indices(Index n) {
    std::vector<Index> v(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

}  // namespace

TEST_CASE("finite-difference laplacian is exact on quadratics") {
    Matrix x1 = (Matrix(3, 1) << -1.5, 0.0, 2.25).finished();
    auto lap1 = fd_laplacian(pointwise([](double x, double) { return x * x; }), x1, 0.01);
    CHECK((lap1.laplacian.array() - 2.0).abs().maxCoeff() < 1e-8);
    CHECK(lap1.values(2, 0) == doctest::Approx(2.25 * 2.25));

    Matrix x2 = (Matrix(2, 2) << 0.3, -0.7, 1.0, 2.0).finished();
    auto lap2 = fd_laplacian(pointwise([](double x, double y) { return x * x + y * y; }), x2, 0.1);
    CHECK((lap2.laplacian.array() - 4.0).abs().maxCoeff() < 1e-10);
}

TEST_CASE("finite-difference laplacian accuracy on smooth functions") {
    const double eps = 0.01;
    Matrix x = Matrix::Constant(1, 1, std::numbers::pi / 2);
    auto lap = fd_laplacian(pointwise([](double v, double) { return std::sin(v); }), x, eps);
    CHECK(lap.laplacian(0, 0) == doctest::Approx(2 * (std::cos(eps) - 1) / (eps * eps)).epsilon(1e-9));
    CHECK(std::abs(lap.laplacian(0, 0) + 1) < 1e-4);

    // exp(x + 2y) has laplacian 5 exp(x + 2y); error shrinks like eps^2
    Matrix p = (Matrix(1, 2) << 0.2, -0.1).finished();
    auto f = pointwise([](double a, double b) { return std::exp(a + 2 * b); });
    const double exact = 5 * std::exp(0.0);
    const double e1 = std::abs(fd_laplacian(f, p, 0.02).laplacian(0, 0) - exact);
    const double e2 = std::abs(fd_laplacian(f, p, 0.01).laplacian(0, 0) - exact);
    CHECK(e2 < e1 / 3.5);
    CHECK(e2 < 1e-3);
}

TEST_CASE("finite-difference laplacian uses one stacked evaluation") {
    int calls = 0;
    Index rows = 0;
    BatchFunction f = [&](const Matrix& x) {
        ++calls;
        rows = x.rows();
        return Matrix(x.rowwise().squaredNorm());
    };
    fd_laplacian(f, Matrix::Zero(7, 2), 0.01);
    CHECK(calls == 1);
    CHECK(rows == 35);

    BatchFunction bad = [](const Matrix& x) {
        Matrix v = Matrix::Ones(x.rows(), 1);
        v(x.rows() - 1, 0) = std::nan("");
        return v;
    };
    CHECK_THROWS_AS(fd_laplacian(bad, Matrix::Zero(2, 2), 0.01), NumericalError);
}

TEST_CASE("negative hamiltonian basics") {
    HamiltonianSpec spec;
    spec.potential = [](const auto&) { return 0.0; };
    spec.scale_kinetic = 0.5;
    Matrix x = (Matrix(3, 1) << -1, 0.5, 3).finished();
    auto app = negative_hamiltonian_apply(pointwise([](double v, double) { return v * v; }), spec, {}, x);
    CHECK((app.t_values.array() - 1.0).abs().maxCoeff() < 1e-8);

    Rng rng = make_stream(1, "shift");
    Matrix pts = gaussian_matrix(20, 2, rng);
    HamiltonianSpec h0;
    h0.potential = harmonic2d;
    HamiltonianSpec h16 = h0;
    h16.shift = 16;
    auto f = pointwise([](double a, double b) { return std::sin(a) * std::cos(2 * b) + a * b; });
    auto t0 = negative_hamiltonian_apply(f, h0, {}, pts);
    auto t16 = negative_hamiltonian_apply(f, h16, {}, pts);
    CHECK(t16.t_values == Matrix(t0.t_values + 16.0 * t0.f_values));
}

TEST_CASE("hydrogen ground state rayleigh quotient") {
    HamiltonianSpec spec;
    spec.potential = coulomb2d;
    // midpoint grid on the ball of radius 25 minus the radius-0.05 core
    const double h = 0.05;
    std::vector<Eigen::RowVector2d> pts;
    for (double x = -25 + h / 2; x < 25; x += h)
        for (double y = -25 + h / 2; y < 25; y += h) {
            const double r = std::hypot(x, y);
            if (r >= 0.05 && r <= 25) pts.emplace_back(x, y);
        }
    Matrix batch(static_cast<Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) batch.row(static_cast<Index>(i)) = pts[i];
    auto ground = pointwise([](double x, double y) { return hydrogen_normalized({0, 0}, x, y); });
    auto app = negative_hamiltonian_apply(ground, spec, {}, batch);
    const double rq = app.f_values.cwiseProduct(app.t_values).sum() / app.f_values.squaredNorm();
    CHECK(std::abs(rq - hydrogen_eigenvalue({0, 0})) < 0.02);
}

TEST_CASE("importance weighting leaves the operator ratio unchanged") {
    // Model f~ = psi / sqrt(w) must see the same eigen-relation as psi with w == 1.
    HamiltonianSpec spec;
    spec.potential = harmonic2d;
    ImportanceScheme gauss;
    gauss.sampler_id = "gaussian";
    gauss.density_over_base = [](const auto& x) {
        return std::exp(-x.squaredNorm() / 8.0) / (8.0 * std::numbers::pi);
    };
    auto psi = [](double x, double y) { return oscillator_eigenfunction({1, 0}, x, y); };
    auto weighted = [&](const Matrix& x) {
        Matrix v(x.rows(), 1);
        for (Index r = 0; r < x.rows(); ++r) v(r, 0) = psi(x(r, 0), x(r, 1)) / std::sqrt(gauss(x.row(r)));
        return v;
    };
    Rng rng = make_stream(2, "importance");
    Matrix pts = gaussian_matrix(30, 2, rng, 1.5);
    auto plain = negative_hamiltonian_apply(pointwise(psi), spec, {}, pts);
    auto imp = negative_hamiltonian_apply(weighted, spec, gauss, pts);
    for (Index b = 0; b < pts.rows(); ++b) {
        if (std::abs(plain.f_values(b, 0)) < 1e-3) continue;
        CHECK(imp.t_values(b, 0) / imp.f_values(b, 0) ==
              doctest::Approx(plain.t_values(b, 0) / plain.f_values(b, 0)).epsilon(1e-6));
    }
}

TEST_CASE("anomalies are flagged by row") {
    HamiltonianSpec spec;
    spec.potential = coulomb2d;
    Matrix pts = (Matrix(3, 2) << 1, 0, 0, 0, 0.5, 0.5).finished();
    auto app = negative_hamiltonian_apply(pointwise([](double, double) { return 1.0; }), spec, {}, pts);
    REQUIRE(app.anomalies.size() == 1);
    CHECK(app.anomalies[0] == 1);
}

TEST_CASE("matrix operator examples") {
    Matrix d = Eigen::Vector3d(3, 2, 1).asDiagonal();
    Matrix e1 = Matrix::Zero(3, 1);
    e1(0, 0) = 1;
    auto app = matrix_operator_apply(d, table_function(e1), table_function(e1), all_indices(3), all_indices(3));
    CHECK(app.forward.t_values == Matrix(3.0 * e1));

    Rng rng = make_stream(3, "matrix-op");
    Matrix f = gaussian_matrix(4, 2, rng), g = gaussian_matrix(4, 2, rng);
    auto id = matrix_operator_apply(Matrix::Identity(4, 4), table_function(f), table_function(g), all_indices(4), all_indices(4));
    CHECK(id.forward.t_values == f);
    CHECK(id.adjoint.t_values == g);
    CHECK_THROWS_AS(matrix_operator_apply(d, table_function(e1), table_function(e1), {3}, {0}), InputError);
}

TEST_CASE("matrix operator adjoint identity") {
    Rng rng = make_stream(4, "adjoint");
    for (int trial = 0; trial < 10; ++trial) {
        Matrix a = gaussian_matrix(6, 4, rng);
        Matrix f = gaussian_matrix(4, 3, rng), g = gaussian_matrix(6, 3, rng);
        MatrixImportance imp;
        if (trial % 2) {
            imp.rows = uniform_matrix(6, 1, rng, 0.2, 2.0);
            imp.cols = uniform_matrix(4, 1, rng, 0.2, 2.0);
        }
        auto app = matrix_operator_apply(a, table_function(f), table_function(g), all_indices(6), all_indices(4), imp);
        // importance-sampled means: weights w/N on rows and w/M on columns
        const Vector qr = imp.rows.size() ? Vector(imp.rows / 6.0) : Vector::Constant(6, 1.0 / 6);
        const Vector qc = imp.cols.size() ? Vector(imp.cols / 4.0) : Vector::Constant(4, 1.0 / 4);
        const Vector lhs = (app.forward.f_values.cwiseProduct(app.forward.t_values)).transpose() * qr;
        const Vector rhs = (app.adjoint.f_values.cwiseProduct(app.adjoint.t_values)).transpose() * qc;
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("matrix operator importance invariance") {
    Rng rng = make_stream(5, "invariance");
    Matrix b = gaussian_matrix(5, 5, rng);
    Matrix a = b + b.transpose();
    Matrix f = gaussian_matrix(5, 2, rng);  // unweighted function values
    auto quadratic_form = [&](const Vector& w) {
        const Matrix f_tilde = w.cwiseSqrt().cwiseInverse().asDiagonal() * f;
        auto app = matrix_operator_apply(a, table_function(f_tilde), table_function(f_tilde), all_indices(5), all_indices(5), {w, w});
        return Vector((app.adjoint.f_values.cwiseProduct(app.adjoint.t_values)).transpose() * (w / 5.0));
    };
    const Vector base = quadratic_form(Vector::Ones(5));
    for (int trial = 0; trial < 5; ++trial) {
        Vector w = uniform_matrix(5, 1, rng, 0.1, 3.0);
        w *= 5.0 / w.sum();  // sampling probabilities w/5 sum to one
        CHECK((quadratic_form(w) - base).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("kernel operator") {
    Rng rng = make_stream(6, "kernel");
    Matrix x = gaussian_matrix(5, 1, rng), y = gaussian_matrix(7, 1, rng);
    auto ident = [](const Matrix& v) { return v; };
    auto zero = kernel_operator_apply([](const auto&, const auto&) { return 0.0; }, ident, ident, x, y);
    CHECK(zero.kernel.cwiseAbs().maxCoeff() == 0.0);

    auto ones = kernel_operator_apply([](const auto&, const auto&) { return 1.0; }, ident, ident, x, y);
    CHECK(ones.kernel == Matrix::Ones(5, 7));
    CHECK(kernel_operator_terms(ones)(0) == doctest::Approx(x.mean() * y.mean()));

    // adjoint identity on the finite populations
    auto k = [](const auto& a, const auto& b) { return std::exp(-(a - b).squaredNorm()) + a(0) * b(0); };
    auto app = kernel_operator_apply(k, ident, [](const Matrix& v) { return Matrix(v.array().sin()); }, x, y);
    const double lhs = app.forward.f_values.cwiseProduct(app.forward.t_values).mean();
    const double rhs = app.adjoint.f_values.cwiseProduct(app.adjoint.t_values).mean();
    CHECK(std::abs(lhs - rhs) < 1e-12);

    // rank-one kernel u(x)u(y) with u = f = identity under N(0,1): <f|Kf> = (E[u f])^2 = 1
    Matrix bx = gaussian_matrix(10000, 1, rng), by = gaussian_matrix(10000, 1, rng);
    auto rank_one = kernel_operator_apply([](const auto& a, const auto& b) { return a(0) * b(0); }, ident, ident, bx, by);
    const double est = kernel_operator_terms(rank_one)(0);
    // product of two independent means of x^2, each with variance 2/S
    const double sigma = std::sqrt(2 * 2.0 / 10000);
    CHECK(std::abs(est - 1.0) < 3 * sigma);
}

TEST_CASE("dependence-kernel pair contraction") {
    Matrix ones = Matrix::Ones(6, 2);
    Vector term = cdk_pair_contraction(ones, ones);
    CHECK(term.size() == 3);
    CHECK(term(0) == 1.0);
    CHECK(term(1) == 1.0);

    Rng rng = make_stream(7, "cdk-pair");
    const Index s = 20000;
    Matrix f = gaussian_matrix(s, 1, rng), g = gaussian_matrix(s, 1, rng);
    CHECK(std::abs(cdk_pair_contraction(f, g)(1)) < 3.0 / std::sqrt(double(s)));

    // binary symmetric pmf [[0.4,0.1],[0.1,0.4]] enumerated with its exact frequencies
    Matrix fx(10, 1), gy(10, 1);
    const int xs[10] = {0, 0, 0, 0, 1, 1, 1, 1, 0, 1};
    const int ys[10] = {0, 0, 0, 0, 1, 1, 1, 1, 1, 0};
    for (int b = 0; b < 10; ++b) {
        fx(b, 0) = xs[b] == 0 ? 1 : -1;
        gy(b, 0) = ys[b] == 0 ? 1 : -1;
    }
    CHECK(cdk_pair_contraction(fx, gy)(1) == doctest::Approx(0.6).epsilon(1e-15));
}
