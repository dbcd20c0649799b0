#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bridgeflow/matrix.hpp"
#include "bridgeflow/rng.hpp"

namespace bridgeflow::nn {

// Layer vocabulary for the velocity-field family. A net is a flat sequence;
// residual_gate closes a block that begins at the layer_norm immediately
// preceding the block's adaln_modulation: it adds gate .* stream onto the
// value the stream had at that layer_norm's input. Blocks do not nest.
enum class LayerKind {
    Dense,            // y = x W + b
    LayerNorm,        // row-wise (x - mean) / sqrt(var + eps), no affine params
    SiLU,             // x * sigmoid(x)
    Softplus,         // log(1 + e^x), used for positive output heads
    AdaLNModulation,  // [scale|shift|gate] regressed from the conditioning vector
    ResidualGate,     // y = block_input + gate .* x
};

struct LayerSpec {
    LayerKind kind;
    Index in_dim = 0;
    Index out_dim = 0;
    Index cond_dim = 0;  // AdaLNModulation only

    static LayerSpec dense(Index in, Index out) { return {LayerKind::Dense, in, out, 0}; }
    static LayerSpec layer_norm(Index dim) { return {LayerKind::LayerNorm, dim, dim, 0}; }
    static LayerSpec silu(Index dim) { return {LayerKind::SiLU, dim, dim, 0}; }
    static LayerSpec softplus(Index dim) { return {LayerKind::Softplus, dim, dim, 0}; }
    static LayerSpec adaln_modulation(Index dim, Index cond) {
        return {LayerKind::AdaLNModulation, dim, dim, cond};
    }
    static LayerSpec residual_gate(Index dim) { return {LayerKind::ResidualGate, dim, dim, 0}; }

    bool has_params() const {
        return kind == LayerKind::Dense || kind == LayerKind::AdaLNModulation;
    }
};

// Named layer sequence. Parameter names are "<name>.<layer index>.W" / ".b".
struct Net {
    std::string name;
    std::vector<LayerSpec> layers;

    Net() = default;
    Net(std::string net_name, std::vector<LayerSpec> specs);

    Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
    Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
    bool has_modulation() const;
    Index cond_dim() const;  // 0 when the net has no modulation layers

    std::string param_name(std::size_t layer, const char* role) const;
};

// Parameters plus Adam state. Moments are lazily created with matching shapes.
struct ParamStore {
    std::map<std::string, Matrix> params;
    std::map<std::string, Matrix> adam_m;
    std::map<std::string, Matrix> adam_v;
    std::int64_t step = 0;

    const Matrix& at(const std::string& name) const;
    Matrix& at(const std::string& name);
    bool bitwise_equal(const ParamStore& other) const;
};

using GradMap = std::map<std::string, Matrix>;

// Per-layer activation cache produced by forward_cached.
struct Tape {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> ln_norm;      // LayerNorm: normalized output
    std::vector<Vector> ln_inv_std;   // LayerNorm: 1/sqrt(var+eps) per row
    std::vector<Matrix> mod_scale;    // AdaLNModulation caches
    std::vector<Matrix> mod_gate;
    std::vector<Matrix> cond;         // conditioning used by modulation layers
    std::vector<Matrix> anchors;      // block entry values, indexed by gate layer
    Matrix output;
};

struct BackpropResult {
    GradMap param_grads;
    Matrix input_grad;
    Matrix cond_grad;  // empty when the net takes no conditioning
};

// Pure function of (params, inputs, conditioning).
Matrix forward(const Net& net, const ParamStore& params, const Matrix& inputs,
               const Matrix* conditioning = nullptr);

Matrix forward_cached(const Net& net, const ParamStore& params, const Matrix& inputs,
                      const Matrix* conditioning, Tape& tape);

// Exact reverse-mode gradients of forward. Recomputes activations internally.
BackpropResult backward(const Net& net, const ParamStore& params, const Matrix& inputs,
                        const Matrix* conditioning, const Matrix& output_grad);

BackpropResult backward_from_tape(const Net& net, const ParamStore& params, const Tape& tape,
                                  const Matrix& output_grad);

// Sum `extra` into `into` (missing keys are inserted).
void accumulate_grads(GradMap& into, const GradMap& extra);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam; increments the step counter. Parameters with
// no entry in `grads` are left untouched (their moments still decay on the
// shared step counter only when an update arrives, keeping the op local).
void adam_step(ParamStore& params, const GradMap& grads, const AdamConfig& cfg);

// Glorot-uniform dense init; biases zero. Registers W/b for layered nets.
void init_params(ParamStore& store, const Net& net, Rng& rng, bool zero_output_head = false);

// Checkpoint container format: magic "BFCK", version byte, u32 tensor count,
// then per tensor: u32 name length, name bytes, u32 rows, u32 cols, row-major
// little-endian f64 payload. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::map<std::string, Matrix>& tensors);
std::map<std::string, Matrix> load_checkpoint(const std::string& path);

}  // namespace bridgeflow::nn
