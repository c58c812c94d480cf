#pragma once

// Parametric function models f: X -> R^L with hand-written reverse-mode
// accumulation. Rows of every batch are samples; columns of every output are modes.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nestsvd/linalg.hpp"
#include "nestsvd/random.hpp"

namespace nestsvd {

enum class HeadMode { disjoint_heads, shared_trunk, tabular };
enum class Activation { softplus, sin_cos };

std::string to_string(HeadMode mode);
std::string to_string(Activation act);
HeadMode parse_head_mode(const std::string& name);
Activation parse_activation(const std::string& name);

/// Frozen random Fourier embedding x -> (cos(Bx), sin(Bx)[, x]).
struct FourierFeatureMap {
    Matrix projection;  // K x D, entries ~ N(0, 2*pi*scale)
    double scale = 1.0;
    bool append_raw_input = true;

    Index feature_count() const { return projection.rows(); }
    Index input_dim() const { return projection.cols(); }
    Index output_dim() const { return 2 * feature_count() + (append_raw_input ? input_dim() : 0); }
};

FourierFeatureMap make_fourier_map(Index features, Index input_dim, double scale, bool append_raw_input,
                                   Rng& rng);

/// Columns ordered as cos block, sin block, then the raw input when requested.
Matrix fourier_features(const FourierFeatureMap& map, const Matrix& batch);

struct ModelSpec {
    Index input_dim = 1;
    Index output_modes = 1;
    HeadMode head_mode = HeadMode::shared_trunk;
    std::vector<Index> hidden_widths;
    Activation activation = Activation::softplus;
    std::optional<FourierFeatureMap> fourier;
    Index domain_size = 0;  // tabular only: inputs are row indices in [0, domain_size)

    /// Throws InputError describing the first inconsistency.
    void validate() const;

    Index feature_dim() const;
    /// Outputs of one network: 1 per head when heads are disjoint, L otherwise.
    Index network_outputs() const;
    Index network_parameter_count() const;
    Index parameter_count() const;
};

struct ModelParams {
    Vector values;
};

/// S x L outputs. Throws NumericalError naming the layer if an activation turns non-finite.
Matrix model_forward(const ModelParams& params, const ModelSpec& spec, const Matrix& batch);

/// Sum over (b, l) of cotangent(b, l) * d f_l(x_b) / d theta.
Vector model_backward(const ModelParams& params, const ModelSpec& spec, const Matrix& batch,
                      const Matrix& cotangent);

/// Fan-in scaled uniform weights and biases (std 1/sqrt(fan_in)), last layer scaled
/// by 0.1; tabular entries i.i.d. N(0, 1/L).
/// Draws come from the named sub-stream so f and g models can share a master seed.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed, std::string_view stream = "init");

/// Parameter slice owned by head `mode` in disjoint-heads mode.
std::pair<Index, Index> head_slice(const ModelSpec& spec, Index mode);

struct Model {
    ModelSpec spec;
    ModelParams params;

    Matrix operator()(const Matrix& batch) const { return model_forward(params, spec, batch); }
};

}  // namespace nestsvd
