#pragma once

// Closed-form ground truth: 2D hydrogen and harmonic oscillator eigenpairs,
// the special functions behind them, and discrete dependence-kernel instances.

#include <vector>

#include "nestsvd/linalg.hpp"

namespace nestsvd {

double hermite_physicists(int n, double z);

/// Normalized 1D oscillator eigenfunction for V = x^2.
double oscillator_1d(int n, double x);

struct OscillatorState {
    int nx = 0;
    int ny = 0;
    int shell() const { return nx + ny; }
};

double oscillator_eigenfunction(const OscillatorState& state, double x, double y);
/// Eigenvalue of laplacian - |x|^2 + c, i.e. c - 2(n + 1).
double oscillator_shifted_eigenvalue(const OscillatorState& state, double c);
/// Shell-ordered product states; within shell n, nx runs from n down to 0.
std::vector<OscillatorState> oscillator_states(int count);

/// Terminating series 1F1(a; b; z) for a in {0, -1, -2, ...} and b >= 1.
double confluent_1f1_terminating(int a, int b, double z);

struct HydrogenState {
    int n = 0;
    int l = 0;
};

double hydrogen_radial(const HydrogenState& state, double r);
double hydrogen_angular(int l, double theta);
/// Printed closed form, radial times angular part, in polar coordinates.
double hydrogen_eigenfunction(const HydrogenState& state, double r, double theta);
/// Closed form divided by its quadrature norm; throws NumericalError when the
/// printed normalization is off by more than 5%.
double hydrogen_normalized(const HydrogenState& state, double x, double y);
/// Squared L2 norm of the printed closed form, by radial quadrature.
double hydrogen_norm_squared(const HydrogenState& state);
/// Eigenvalue (2n + 1)^-2 of laplacian + 1/|x|.
double hydrogen_eigenvalue(const HydrogenState& state);
/// Shell-ordered states; within shell n, l runs 0, 1, -1, 2, -2, ...
std::vector<HydrogenState> hydrogen_states(int count);

/// -1/|x|; the origin maps to -infinity.
double coulomb2d(const Eigen::Ref<const Eigen::RowVectorXd>& x);
double harmonic2d(const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct DiscreteCdkInstance {
    Matrix pmf;  // |X| x |Y| joint probabilities
    Vector p_x;
    Vector p_y;
    /// SVD of sqrt(p_x) k sqrt(p_y) with k = p/(p_x p_y) - 1 (constant mode removed).
    linalg::SvdResult<double> centered;
    /// SVD of the un-subtracted weighted ratio matrix.
    linalg::SvdResult<double> ratio;

    /// Singular functions on X and Y, normalized in L2(p_x) and L2(p_y).
    Matrix f_truth() const;
    Matrix g_truth() const;
};

DiscreteCdkInstance make_discrete_cdk(const Matrix& pmf);

}  // namespace nestsvd
