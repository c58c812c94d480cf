#include "nestsvd/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "nestsvd/errors.hpp"
#include "nestsvd/parallel.hpp"

namespace nestsvd {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// (in, out) for each dense layer of one network.
std::vector<std::pair<Index, Index>> layer_shapes(const ModelSpec& spec) {
    std::vector<std::pair<Index, Index>> shapes;
    Index in = spec.feature_dim();
    for (Index w : spec.hidden_widths) {
        shapes.emplace_back(in, w);
        in = w;
    }
    shapes.emplace_back(in, spec.network_outputs());
    return shapes;
}

Matrix activate(const Matrix& z, Activation act) {
    if (act == Activation::softplus) {
        // Overflow-safe max(z, 0) + log1p(exp(-|z|)). log1p(e) is evaluated as
        // log(u) e / (u - 1) with u = 1 + e, which keeps full accuracy and lets
        // Eigen vectorize; scalar log1p was the hottest call in training.
        const Eigen::ArrayXXd e = (-z.array().abs()).exp();
        const Eigen::ArrayXXd u = 1.0 + e;
        return (z.array().max(0.0) + (u == 1.0).select(e, u.log() * e / (u - 1.0))).matrix();
    }
    const Index half = z.cols() / 2;
    Matrix out(z.rows(), z.cols());
    out.leftCols(half) = z.leftCols(half).array().sin().matrix();
    out.rightCols(z.cols() - half) = z.rightCols(z.cols() - half).array().cos().matrix();
    return out;
}

Matrix activation_derivative(const Matrix& z, Activation act) {
    if (act == Activation::softplus) {
        // sigmoid via e = exp(-|z|): 1/(1+e) for z >= 0, e/(1+e) otherwise.
        const Eigen::ArrayXXd e = (-z.array().abs()).exp();
        return (z.array() >= 0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
    }
    const Index half = z.cols() / 2;
    Matrix out(z.rows(), z.cols());
    out.leftCols(half) = z.leftCols(half).array().cos().matrix();
    out.rightCols(z.cols() - half) = -z.rightCols(z.cols() - half).array().sin().matrix();
    return out;
}

Matrix network_input(const ModelSpec& spec, const Matrix& batch) {
    if (spec.fourier) return fourier_features(*spec.fourier, batch);
    return batch;
}

void check_layer(const Matrix& values, std::size_t layer) {
    if (!values.allFinite()) {
        throw NumericalError("non-finite activation in layer " + std::to_string(layer));
    }
}

// Forward through one network whose parameters start at `theta`; keeps
// pre-activations when `pre` is non-null.
Matrix network_forward(const double* theta, const ModelSpec& spec, const Matrix& input,
                       std::vector<Matrix>* pre, std::vector<Matrix>* post) {
    const auto shapes = layer_shapes(spec);
    Matrix a = input;
    for (std::size_t layer = 0; layer < shapes.size(); ++layer) {
        const auto [in, out] = shapes[layer];
        RowMajorMap w(theta, out, in);
        Eigen::Map<const Vector> b(theta + in * out, out);
        theta += in * out + out;
        if (post) post->push_back(a);
        Matrix z = a * w.transpose();
        z.rowwise() += b.transpose();
        check_layer(z, layer);
        if (layer + 1 == shapes.size()) return z;
        if (pre) pre->push_back(z);
        a = activate(z, spec.activation);
        check_layer(a, layer);
    }
    return a;  // unreachable: the output layer always exists
}

void network_backward(const double* theta, double* grad, const ModelSpec& spec, const Matrix& input,
                      const Matrix& cotangent) {
    const auto shapes = layer_shapes(spec);
    std::vector<Matrix> pre, post;
    network_forward(theta, spec, input, &pre, &post);

    std::vector<Index> offsets;
    Index offset = 0;
    for (const auto& [in, out] : shapes) {
        offsets.push_back(offset);
        offset += in * out + out;
    }

    Matrix dz = cotangent;
    for (std::size_t layer = shapes.size(); layer-- > 0;) {
        const auto [in, out] = shapes[layer];
        RowMajorMutMap gw(grad + offsets[layer], out, in);
        Eigen::Map<Vector> gb(grad + offsets[layer] + in * out, out);
        gw.noalias() += dz.transpose() * post[layer];
        gb += dz.colwise().sum().transpose();
        if (layer == 0) break;
        RowMajorMap w(theta + offsets[layer], out, in);
        Matrix da = dz * w;
        dz = da.cwiseProduct(activation_derivative(pre[layer - 1], spec.activation));
    }
}

std::vector<Index> tabular_rows(const ModelSpec& spec, const Matrix& batch) {
    if (batch.cols() != 1) throw InputError("tabular model expects a single index column");
    std::vector<Index> rows(static_cast<std::size_t>(batch.rows()));
    for (Index b = 0; b < batch.rows(); ++b) {
        const double v = batch(b, 0);
        const auto idx = static_cast<Index>(std::llround(v));
        if (!(v >= 0) || idx >= spec.domain_size || static_cast<double>(idx) != v) {
            std::ostringstream os;
            os << "tabular index " << v << " at row " << b << " outside [0, " << spec.domain_size << ")";
            throw InputError(os.str());
        }
        rows[static_cast<std::size_t>(b)] = idx;
    }
    return rows;
}

void check_shapes(const ModelParams& params, const ModelSpec& spec, const Matrix& batch) {
    if (params.values.size() != spec.parameter_count()) {
        std::ostringstream os;
        os << "parameter vector has " << params.values.size() << " entries, spec declares "
           << spec.parameter_count();
        throw InputError(os.str());
    }
    if (spec.head_mode != HeadMode::tabular && batch.cols() != spec.input_dim) {
        std::ostringstream os;
        os << "batch has " << batch.cols() << " columns, model expects " << spec.input_dim;
        throw InputError(os.str());
    }
    if (!batch.allFinite()) throw InputError("batch contains non-finite points");
}

}  // namespace

std::string to_string(HeadMode mode) {
    switch (mode) {
        case HeadMode::disjoint_heads: return "disjoint_heads";
        case HeadMode::shared_trunk: return "shared_trunk";
        case HeadMode::tabular: return "tabular";
    }
    return "?";
}

std::string to_string(Activation act) { return act == Activation::softplus ? "softplus" : "sin_cos"; }

HeadMode parse_head_mode(const std::string& name) {
    if (name == "disjoint_heads") return HeadMode::disjoint_heads;
    if (name == "shared_trunk") return HeadMode::shared_trunk;
    if (name == "tabular") return HeadMode::tabular;
    throw InputError("unknown head_mode '" + name + "'");
}

Activation parse_activation(const std::string& name) {
    if (name == "softplus") return Activation::softplus;
    if (name == "sin_cos") return Activation::sin_cos;
    throw InputError("unknown activation '" + name + "'");
}

FourierFeatureMap make_fourier_map(Index features, Index input_dim, double scale, bool append_raw_input,
                                   Rng& rng) {
    if (features < 1 || input_dim < 1) throw InputError("Fourier map needs positive feature and input counts");
    if (!(scale > 0)) throw InputError("Fourier scale must be positive");
    FourierFeatureMap map;
    map.projection = gaussian_matrix(features, input_dim, rng, std::sqrt(2.0 * std::numbers::pi * scale));
    map.scale = scale;
    map.append_raw_input = append_raw_input;
    return map;
}

Matrix fourier_features(const FourierFeatureMap& map, const Matrix& batch) {
    if (batch.cols() != map.input_dim()) {
        throw InputError("Fourier map expects " + std::to_string(map.input_dim()) + " input columns");
    }
    const Index k = map.feature_count();
    const Matrix proj = batch * map.projection.transpose();
    Matrix out(batch.rows(), map.output_dim());
    out.leftCols(k) = proj.array().cos().matrix();
    out.middleCols(k, k) = proj.array().sin().matrix();
    if (map.append_raw_input) out.rightCols(batch.cols()) = batch;
    return out;
}

void ModelSpec::validate() const {
    if (output_modes < 1) throw InputError("model needs at least one output mode");
    if (head_mode == HeadMode::tabular) {
        if (domain_size < 1) throw InputError("tabular model requires an enumerated input domain (domain_size >= 1)");
        return;
    }
    if (input_dim < 1) throw InputError("model input_dim must be positive");
    for (Index w : hidden_widths) {
        if (w < 1) throw InputError("hidden widths must be positive");
        if (activation == Activation::sin_cos && w % 2 != 0) {
            throw InputError("sin_cos activation needs even hidden widths, got " + std::to_string(w));
        }
    }
    if (fourier && fourier->input_dim() != input_dim) {
        throw InputError("Fourier projection width does not match input_dim");
    }
}

Index ModelSpec::feature_dim() const { return fourier ? fourier->output_dim() : input_dim; }

Index ModelSpec::network_outputs() const { return head_mode == HeadMode::disjoint_heads ? 1 : output_modes; }

Index ModelSpec::network_parameter_count() const {
    if (head_mode == HeadMode::tabular) return domain_size * output_modes;
    Index total = 0;
    for (const auto& [in, out] : layer_shapes(*this)) total += in * out + out;
    return total;
}

Index ModelSpec::parameter_count() const {
    return network_parameter_count() * (head_mode == HeadMode::disjoint_heads ? output_modes : 1);
}

std::pair<Index, Index> head_slice(const ModelSpec& spec, Index mode) {
    if (spec.head_mode != HeadMode::disjoint_heads) throw InputError("head_slice needs disjoint heads");
    const Index p = spec.network_parameter_count();
    return {mode * p, (mode + 1) * p};
}

Matrix model_forward(const ModelParams& params, const ModelSpec& spec, const Matrix& batch) {
    check_shapes(params, spec, batch);
    const Index L = spec.output_modes;
    if (spec.head_mode == HeadMode::tabular) {
        const auto rows = tabular_rows(spec, batch);
        RowMajorMap table(params.values.data(), spec.domain_size, L);
        Matrix out(batch.rows(), L);
        for (Index b = 0; b < batch.rows(); ++b) out.row(b) = table.row(rows[static_cast<std::size_t>(b)]);
        return out;
    }
    const Matrix input = network_input(spec, batch);
    if (spec.head_mode == HeadMode::shared_trunk) {
        return network_forward(params.values.data(), spec, input, nullptr, nullptr);
    }
    Matrix out(batch.rows(), L);
    const Index p = spec.network_parameter_count();
    parallel_for(static_cast<std::size_t>(L), [&](std::size_t l) {
        const auto head = static_cast<Index>(l);
        out.col(head) = network_forward(params.values.data() + head * p, spec, input, nullptr, nullptr);
    });
    return out;
}

Vector model_backward(const ModelParams& params, const ModelSpec& spec, const Matrix& batch,
                      const Matrix& cotangent) {
    check_shapes(params, spec, batch);
    const Index L = spec.output_modes;
    if (cotangent.rows() != batch.rows() || cotangent.cols() != L) {
        throw InputError("cotangent shape does not match model output");
    }
    Vector grad = Vector::Zero(spec.parameter_count());
    if (spec.head_mode == HeadMode::tabular) {
        const auto rows = tabular_rows(spec, batch);
        RowMajorMutMap table(grad.data(), spec.domain_size, L);
        for (Index b = 0; b < batch.rows(); ++b) table.row(rows[static_cast<std::size_t>(b)]) += cotangent.row(b);
        return grad;
    }
    const Matrix input = network_input(spec, batch);
    if (spec.head_mode == HeadMode::shared_trunk) {
        network_backward(params.values.data(), grad.data(), spec, input, cotangent);
        return grad;
    }
    const Index p = spec.network_parameter_count();
    parallel_for(static_cast<std::size_t>(L), [&](std::size_t l) {
        const auto head = static_cast<Index>(l);
        network_backward(params.values.data() + head * p, grad.data() + head * p, spec, input,
                         cotangent.col(head));
    });
    return grad;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed, std::string_view stream) {
    spec.validate();
    Rng rng = make_stream(seed, stream);
    ModelParams params;
    params.values.resize(spec.parameter_count());
    if (spec.head_mode == HeadMode::tabular) {
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(spec.output_modes)));
        for (Index i = 0; i < params.values.size(); ++i) params.values(i) = normal(rng);
        return params;
    }
    const auto shapes = layer_shapes(spec);
    const Index networks = spec.head_mode == HeadMode::disjoint_heads ? spec.output_modes : 1;
    Index k = 0;
    for (Index net = 0; net < networks; ++net) {
        for (std::size_t layer = 0; layer < shapes.size(); ++layer) {
            const auto [in, out] = shapes[layer];
            const double bound = std::sqrt(3.0 / static_cast<double>(in));
            const double gain = layer + 1 == shapes.size() ? 0.1 : 1.0;
            std::uniform_real_distribution<double> uniform(-bound, bound);
            for (Index i = 0; i < in * out + out; ++i) params.values(k++) = gain * uniform(rng);
        }
    }
    return params;
}

}  // namespace nestsvd
