#include "nestsvd/problems.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "nestsvd/errors.hpp"

namespace nestsvd {

namespace {

constexpr int kMaxOscillatorLevel = 30;

double factorial(int n) { return std::tgamma(static_cast<double>(n) + 1.0); }

}  // namespace

double hermite_physicists(int n, double z) {
    if (n < 0) throw InputError("Hermite degree must be non-negative");
    double prev = 1.0;
    if (n == 0) return prev;
    double cur = 2.0 * z;
    for (int k = 1; k < n; ++k) {
        const double next = 2.0 * z * cur - 2.0 * k * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

double oscillator_1d(int n, double x) {
    if (n < 0 || n > kMaxOscillatorLevel) {
        throw InputError("oscillator level " + std::to_string(n) + " outside [0, 30]");
    }
    const double log_norm = -0.5 * (n * std::log(2.0) + std::lgamma(n + 1.0)) - 0.25 * std::log(std::numbers::pi);
    return std::exp(log_norm - 0.5 * x * x) * hermite_physicists(n, x);
}

double oscillator_eigenfunction(const OscillatorState& state, double x, double y) {
    return oscillator_1d(state.nx, x) * oscillator_1d(state.ny, y);
}

double oscillator_shifted_eigenvalue(const OscillatorState& state, double c) {
    return c - 2.0 * (state.shell() + 1);
}

std::vector<OscillatorState> oscillator_states(int count) {
    std::vector<OscillatorState> out;
    for (int n = 0; static_cast<int>(out.size()) < count; ++n) {
        for (int nx = n; nx >= 0 && static_cast<int>(out.size()) < count; --nx) out.push_back({nx, n - nx});
    }
    return out;
}

double confluent_1f1_terminating(int a, int b, double z) {
    if (a > 0) throw InputError("1F1 series only supported for non-positive integer a");
    if (b < 1) throw InputError("1F1 needs a positive integer b");
    double term = 1.0, sum = 1.0;
    for (int k = 0; k < -a; ++k) {
        term *= static_cast<double>(a + k) / static_cast<double>(b + k) * z / static_cast<double>(k + 1);
        sum += term;
    }
    return sum;
}

double hydrogen_radial(const HydrogenState& s, double r) {
    if (s.n < 0 || std::abs(s.l) > s.n) throw InputError("hydrogen state needs n >= 0 and |l| <= n");
    if (r < 0) throw InputError("radius must be non-negative");
    const int al = std::abs(s.l);
    const double beta = 1.0 / (s.n + 0.5);
    const double norm = beta / factorial(2 * al) *
                        std::sqrt(factorial(s.n + al) / ((2.0 * s.n + 1.0) * factorial(s.n - al)));
    return norm * std::pow(beta * r, al) * std::exp(-beta * r / 2.0) *
           confluent_1f1_terminating(-s.n + al, 2 * al + 1, beta * r);
}

double hydrogen_angular(int l, double theta) {
    if (l > 0) return std::cos(l * theta) / std::sqrt(std::numbers::pi);
    if (l < 0) return std::sin(l * theta) / std::sqrt(std::numbers::pi);
    return 1.0 / std::sqrt(2.0 * std::numbers::pi);
}

double hydrogen_eigenfunction(const HydrogenState& state, double r, double theta) {
    return hydrogen_radial(state, r) * hydrogen_angular(state.l, theta);
}

double hydrogen_norm_squared(const HydrogenState& state) {
    // The angular factor is unit-normalized; integrate R(r)^2 r dr by composite Simpson.
    const double r_max = 80.0 * (state.n + 1);
    const int intervals = 40000;
    const double h = r_max / intervals;
    double sum = 0;
    for (int i = 0; i <= intervals; ++i) {
        const double r = i * h;
        const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double v = hydrogen_radial(state, r);
        sum += w * v * v * r;
    }
    return sum * h / 3.0;
}

double hydrogen_normalized(const HydrogenState& state, double x, double y) {
    static std::mutex cache_mutex;
    static std::map<std::pair<int, int>, double> cache;
    double scale;
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        auto it = cache.find({state.n, state.l});
        if (it == cache.end()) {
            const double norm = std::sqrt(hydrogen_norm_squared(state));
            if (std::abs(norm - 1.0) > 0.05) {
                throw NumericalError("hydrogen state (" + std::to_string(state.n) + "," + std::to_string(state.l) +
                                     ") closed form is off by factor " + std::to_string(norm));
            }
            it = cache.emplace(std::make_pair(state.n, state.l), 1.0 / norm).first;
        }
        scale = it->second;
    }
    return scale * hydrogen_eigenfunction(state, std::hypot(x, y), std::atan2(y, x));
}

double hydrogen_eigenvalue(const HydrogenState& state) {
    const double d = 2.0 * state.n + 1.0;
    return 1.0 / (d * d);
}

std::vector<HydrogenState> hydrogen_states(int count) {
    std::vector<HydrogenState> out;
    for (int n = 0; static_cast<int>(out.size()) < count; ++n) {
        out.push_back({n, 0});
        for (int l = 1; l <= n; ++l) {
            out.push_back({n, l});
            out.push_back({n, -l});
        }
    }
    out.resize(static_cast<std::size_t>(count));
    return out;
}

double coulomb2d(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const double r = x.norm();
    if (r == 0) return -std::numeric_limits<double>::infinity();
    return -1.0 / r;
}

double harmonic2d(const Eigen::Ref<const Eigen::RowVectorXd>& x) { return x.squaredNorm(); }

Matrix DiscreteCdkInstance::f_truth() const {
    return p_x.cwiseSqrt().cwiseInverse().asDiagonal() * centered.left_vectors;
}

Matrix DiscreteCdkInstance::g_truth() const {
    return p_y.cwiseSqrt().cwiseInverse().asDiagonal() * centered.right_vectors;
}

DiscreteCdkInstance make_discrete_cdk(const Matrix& pmf) {
    if (pmf.size() == 0) throw InputError("empty pmf");
    if (!pmf.allFinite() || pmf.minCoeff() < 0) throw InputError("pmf entries must be finite and non-negative");
    if (std::abs(pmf.sum() - 1.0) > 1e-9) throw InputError("pmf must sum to 1");
    DiscreteCdkInstance out;
    out.pmf = pmf;
    out.p_x = pmf.rowwise().sum();
    out.p_y = pmf.colwise().sum().transpose();
    if (out.p_x.minCoeff() <= 0 || out.p_y.minCoeff() <= 0) throw InputError("pmf has a zero marginal");
    const Vector sx = out.p_x.cwiseSqrt(), sy = out.p_y.cwiseSqrt();
    const Matrix weighted = sx.cwiseInverse().asDiagonal() * pmf * sy.cwiseInverse().asDiagonal();
    out.ratio = linalg::exact_svd(weighted);
    out.centered = linalg::exact_svd(Matrix(weighted - sx * sy.transpose()));
    return out;
}

}  // namespace nestsvd
