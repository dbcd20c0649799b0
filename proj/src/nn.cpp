#include "bridgeflow/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace bridgeflow::nn {

namespace {

constexpr double kLayerNormEps = 1e-6;

void validate_structure(const Net& net) {
    Index dim = net.input_dim();
    bool in_block = false;       // an adaln_modulation is pending a residual_gate
    Index block_cond = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (l.in_dim <= 0 || l.out_dim <= 0)
            throw ShapeError("net '" + net.name + "': layer " + std::to_string(i) +
                             " has non-positive dims");
        if (l.in_dim != dim)
            throw ShapeError("net '" + net.name + "': layer " + std::to_string(i) +
                             " expects input dim " + std::to_string(l.in_dim) + ", got " +
                             std::to_string(dim));
        switch (l.kind) {
            case LayerKind::AdaLNModulation:
                if (in_block)
                    throw ShapeError("net '" + net.name + "': nested adaln_modulation at layer " +
                                     std::to_string(i));
                if (i == 0 || net.layers[i - 1].kind != LayerKind::LayerNorm)
                    throw ShapeError("net '" + net.name + "': adaln_modulation at layer " +
                                     std::to_string(i) + " must follow a layer_norm");
                if (l.cond_dim <= 0)
                    throw ShapeError("net '" + net.name + "': adaln_modulation needs cond_dim");
                if (block_cond != 0 && block_cond != l.cond_dim)
                    throw ShapeError("net '" + net.name + "': inconsistent conditioning widths");
                block_cond = l.cond_dim;
                in_block = true;
                break;
            case LayerKind::ResidualGate:
                if (!in_block)
                    throw ShapeError("net '" + net.name + "': residual_gate at layer " +
                                     std::to_string(i) + " without adaln_modulation");
                in_block = false;
                break;
            default:
                break;
        }
        dim = l.out_dim;
    }
    if (in_block)
        throw ShapeError("net '" + net.name + "': adaln_modulation without closing residual_gate");
}

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

inline double softplus(double x) {
    // log(1+e^x) without overflow for large |x|
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void layer_norm_forward(const Matrix& x, Matrix& y, Vector& inv_std) {
    const Index n = x.rows(), d = x.cols();
    y.resize(n, d);
    inv_std.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[i] = is;
        y.row(i) = ((x.row(i).array() - mean) * is).matrix();
    }
}

// dL/dx for y = (x-mean)*inv_std: dx = is*(dy - mean(dy) - y*mean(dy.*y))
void layer_norm_backward(const Matrix& y, const Vector& inv_std, const Matrix& dy, Matrix& dx) {
    const Index n = y.rows(), d = y.cols();
    dx.resize(n, d);
    for (Index i = 0; i < n; ++i) {
        const double m1 = dy.row(i).mean();
        const double m2 = (dy.row(i).array() * y.row(i).array()).sum() / static_cast<double>(d);
        dx.row(i) = (inv_std[i] * (dy.row(i).array() - m1 - y.row(i).array() * m2)).matrix();
    }
}

}  // namespace

Net::Net(std::string net_name, std::vector<LayerSpec> specs)
    : name(std::move(net_name)), layers(std::move(specs)) {
    validate_structure(*this);
}

bool Net::has_modulation() const {
    for (const auto& l : layers)
        if (l.kind == LayerKind::AdaLNModulation) return true;
    return false;
}

Index Net::cond_dim() const {
    for (const auto& l : layers)
        if (l.kind == LayerKind::AdaLNModulation) return l.cond_dim;
    return 0;
}

std::string Net::param_name(std::size_t layer, const char* role) const {
    return name + "." + std::to_string(layer) + "." + role;
}

const Matrix& ParamStore::at(const std::string& n) const {
    auto it = params.find(n);
    if (it == params.end()) throw InputError("missing parameter '" + n + "'");
    return it->second;
}

Matrix& ParamStore::at(const std::string& n) {
    auto it = params.find(n);
    if (it == params.end()) throw InputError("missing parameter '" + n + "'");
    return it->second;
}

bool ParamStore::bitwise_equal(const ParamStore& other) const {
    if (step != other.step || params.size() != other.params.size()) return false;
    for (const auto& [k, v] : params) {
        auto it = other.params.find(k);
        if (it == other.params.end() || it->second.rows() != v.rows() ||
            it->second.cols() != v.cols())
            return false;
        if (std::memcmp(v.data(), it->second.data(), sizeof(double) * v.size()) != 0) return false;
    }
    return true;
}

Matrix forward_cached(const Net& net, const ParamStore& params, const Matrix& inputs,
                      const Matrix* conditioning, Tape& tape) {
    require_shape(inputs.cols() == net.input_dim(),
                  "net '" + net.name + "': input has " + std::to_string(inputs.cols()) +
                      " cols, expected " + std::to_string(net.input_dim()));
    const bool needs_cond = net.has_modulation();
    if (needs_cond && conditioning == nullptr)
        throw ShapeError("net '" + net.name + "': conditioning required");
    if (!needs_cond && conditioning != nullptr)
        throw ShapeError("net '" + net.name + "': conditioning given but net has no modulation");
    if (needs_cond) {
        require_shape(conditioning->cols() == net.cond_dim(),
                      "net '" + net.name + "': conditioning has " +
                          std::to_string(conditioning->cols()) + " cols, expected " +
                          std::to_string(net.cond_dim()));
        require_shape(conditioning->rows() == inputs.rows(),
                      "net '" + net.name + "': conditioning batch mismatch");
    }

    const std::size_t L = net.layers.size();
    tape.inputs.assign(L, Matrix());
    tape.ln_norm.assign(L, Matrix());
    tape.ln_inv_std.assign(L, Vector());
    tape.mod_scale.assign(L, Matrix());
    tape.mod_gate.assign(L, Matrix());
    tape.cond.assign(L, Matrix());
    tape.anchors.assign(L, Matrix());

    Matrix h = inputs;
    Matrix anchor;                    // stream value at the block-opening layer_norm input
    Matrix pending_gate;              // gate from the block's modulation layer
    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& l = net.layers[i];
        tape.inputs[i] = h;
        switch (l.kind) {
            case LayerKind::Dense: {
                const Matrix& W = params.at(net.param_name(i, "W"));
                const Matrix& b = params.at(net.param_name(i, "b"));
                require_shape(W.rows() == l.in_dim && W.cols() == l.out_dim,
                              "net '" + net.name + "': bad W shape at layer " + std::to_string(i));
                h = (h * W).rowwise() + b.row(0);
                break;
            }
            case LayerKind::LayerNorm: {
                anchor = h;  // candidate block entry; consumed by a following gate
                Matrix y;
                layer_norm_forward(h, y, tape.ln_inv_std[i]);
                tape.ln_norm[i] = y;
                h = std::move(y);
                break;
            }
            case LayerKind::SiLU:
                h = h.unaryExpr([](double v) { return silu(v); });
                break;
            case LayerKind::Softplus:
                h = h.unaryExpr([](double v) { return softplus(v); });
                break;
            case LayerKind::AdaLNModulation: {
                const Matrix& W = params.at(net.param_name(i, "W"));
                const Matrix& b = params.at(net.param_name(i, "b"));
                const Index d = l.out_dim;
                require_shape(W.rows() == l.cond_dim && W.cols() == 3 * d,
                              "net '" + net.name + "': bad modulation shape at layer " +
                                  std::to_string(i));
                Matrix m = ((*conditioning) * W).rowwise() + b.row(0);
                tape.cond[i] = *conditioning;
                tape.mod_scale[i] = m.leftCols(d);
                pending_gate = m.rightCols(d);
                tape.mod_gate[i] = pending_gate;
                h = (h.array() * (1.0 + m.leftCols(d).array()) + m.middleCols(d, d).array())
                        .matrix();
                break;
            }
            case LayerKind::ResidualGate: {
                tape.anchors[i] = anchor;
                h = (anchor.array() + pending_gate.array() * h.array()).matrix();
                break;
            }
        }
    }
    tape.output = h;
    return h;
}

Matrix forward(const Net& net, const ParamStore& params, const Matrix& inputs,
               const Matrix* conditioning) {
    Tape tape;
    return forward_cached(net, params, inputs, conditioning, tape);
}

BackpropResult backward_from_tape(const Net& net, const ParamStore& params, const Tape& tape,
                                  const Matrix& output_grad) {
    require_shape(output_grad.cols() == net.output_dim() &&
                      output_grad.rows() == tape.output.rows(),
                  "net '" + net.name + "': output_grad shape mismatch");

    BackpropResult res;
    const std::size_t L = net.layers.size();
    if (net.has_modulation())
        res.cond_grad = Matrix::Zero(output_grad.rows(), net.cond_dim());

    Matrix dh = output_grad;
    // Anchor gradient waiting to be added once the backward pass crosses the
    // entry layer of the block it belongs to.
    Matrix pending_anchor_grad;
    std::ptrdiff_t pending_entry = -1;
    Matrix pending_gate_grad;  // consumed by the block's modulation layer

    // For each residual_gate: the index of the layer_norm opening its block
    // (the layer before the block's adaln_modulation).
    std::vector<std::ptrdiff_t> block_entry(L, -1);
    {
        std::ptrdiff_t last_mod = -1;
        for (std::size_t i = 0; i < L; ++i) {
            if (net.layers[i].kind == LayerKind::AdaLNModulation)
                last_mod = static_cast<std::ptrdiff_t>(i);
            if (net.layers[i].kind == LayerKind::ResidualGate) block_entry[i] = last_mod - 1;
        }
    }

    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(L) - 1; i >= 0; --i) {
        const LayerSpec& l = net.layers[static_cast<std::size_t>(i)];
        const Matrix& x = tape.inputs[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::Dense: {
                const Matrix& W = params.at(net.param_name(static_cast<std::size_t>(i), "W"));
                res.param_grads[net.param_name(static_cast<std::size_t>(i), "W")] =
                    x.transpose() * dh;
                res.param_grads[net.param_name(static_cast<std::size_t>(i), "b")] =
                    dh.colwise().sum();
                dh = dh * W.transpose();
                break;
            }
            case LayerKind::LayerNorm: {
                Matrix dx;
                layer_norm_backward(tape.ln_norm[static_cast<std::size_t>(i)],
                                    tape.ln_inv_std[static_cast<std::size_t>(i)], dh, dx);
                dh = std::move(dx);
                break;
            }
            case LayerKind::SiLU:
                dh = (dh.array() * x.unaryExpr([](double v) { return silu_grad(v); }).array())
                         .matrix();
                break;
            case LayerKind::Softplus:
                dh = (dh.array() * x.unaryExpr([](double v) { return sigmoid(v); }).array())
                         .matrix();
                break;
            case LayerKind::AdaLNModulation: {
                const std::size_t li = static_cast<std::size_t>(i);
                const Matrix& W = params.at(net.param_name(li, "W"));
                const Index d = l.out_dim;
                Matrix dm(dh.rows(), 3 * d);
                dm.leftCols(d) = (dh.array() * x.array()).matrix();         // d scale
                dm.middleCols(d, d) = dh;                                   // d shift
                dm.rightCols(d) = pending_gate_grad;                        // d gate
                res.param_grads[net.param_name(li, "W")] = tape.cond[li].transpose() * dm;
                res.param_grads[net.param_name(li, "b")] = dm.colwise().sum();
                res.cond_grad += dm * W.transpose();
                dh = (dh.array() * (1.0 + tape.mod_scale[li].array())).matrix();
                break;
            }
            case LayerKind::ResidualGate: {
                const std::size_t li = static_cast<std::size_t>(i);
                // locate the block's modulation layer to fetch the gate
                std::ptrdiff_t mod = i - 1;
                while (net.layers[static_cast<std::size_t>(mod)].kind !=
                       LayerKind::AdaLNModulation)
                    --mod;
                const Matrix& gate = tape.mod_gate[static_cast<std::size_t>(mod)];
                pending_anchor_grad = dh;
                pending_entry = block_entry[li];
                pending_gate_grad = (dh.array() * x.array()).matrix();
                dh = (dh.array() * gate.array()).matrix();
                break;
            }
        }
        if (pending_entry == i) {
            dh += pending_anchor_grad;
            pending_entry = -1;
        }
    }
    res.input_grad = std::move(dh);
    return res;
}

BackpropResult backward(const Net& net, const ParamStore& params, const Matrix& inputs,
                        const Matrix* conditioning, const Matrix& output_grad) {
    Tape tape;
    forward_cached(net, params, inputs, conditioning, tape);
    return backward_from_tape(net, params, tape, output_grad);
}

void accumulate_grads(GradMap& into, const GradMap& extra) {
    for (const auto& [k, g] : extra) {
        auto it = into.find(k);
        if (it == into.end())
            into.emplace(k, g);
        else
            it->second += g;
    }
}

void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg) {
    store.step += 1;
    const double t = static_cast<double>(store.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& [name, g] : grads) {
        auto pit = store.params.find(name);
        if (pit == store.params.end())
            throw InputError("adam_step: gradient for unknown parameter '" + name + "'");
        Matrix& p = pit->second;
        require_shape(g.rows() == p.rows() && g.cols() == p.cols(),
                      "adam_step: gradient shape mismatch for '" + name + "'");
        if (!g.allFinite())
            throw TrainingError("adam_step: non-finite gradient for parameter '" + name + "'");
        Matrix& m = store.adam_m.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
        Matrix& v = store.adam_v.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square();
        p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    }
}

void init_params(ParamStore& store, const Net& net, Rng& rng, bool zero_output_head) {
    // index of the last dense layer (the output head when requested)
    std::ptrdiff_t last_dense = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].kind == LayerKind::Dense) last_dense = static_cast<std::ptrdiff_t>(i);

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (l.kind == LayerKind::Dense) {
            Matrix W(l.in_dim, l.out_dim);
            if (zero_output_head && static_cast<std::ptrdiff_t>(i) == last_dense) {
                W.setZero();
            } else {
                const double bound =
                    std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim));
                for (Index r = 0; r < W.rows(); ++r)
                    for (Index c = 0; c < W.cols(); ++c) W(r, c) = rng.uniform(-bound, bound);
            }
            store.params[net.param_name(i, "W")] = std::move(W);
            store.params[net.param_name(i, "b")] = Matrix::Zero(1, l.out_dim);
        } else if (l.kind == LayerKind::AdaLNModulation) {
            // zero-init so scale/shift/gate all start at zero and each block
            // is the identity on its stream
            store.params[net.param_name(i, "W")] = Matrix::Zero(l.cond_dim, 3 * l.out_dim);
            store.params[net.param_name(i, "b")] = Matrix::Zero(1, 3 * l.out_dim);
        }
    }
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw ParseError("checkpoint: truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Matrix>& tensors) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("checkpoint: cannot open '" + tmp + "' for writing");
        f.write("BFCK", 4);
        const unsigned char version = 1;
        f.write(reinterpret_cast<const char*>(&version), 1);
        write_u32(f, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& [name, m] : tensors) {
            write_u32(f, static_cast<std::uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(f, static_cast<std::uint32_t>(m.rows()));
            write_u32(f, static_cast<std::uint32_t>(m.cols()));
            f.write(reinterpret_cast<const char*>(m.data()),
                    static_cast<std::streamsize>(sizeof(double) * m.size()));
        }
        if (!f) throw InputError("checkpoint: write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw InputError("checkpoint: cannot rename '" + tmp + "' to '" + path + "'");
}

std::map<std::string, Matrix> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "BFCK", 4) != 0)
        throw ParseError("checkpoint '" + path + "': bad magic at byte 0");
    unsigned char version = 0;
    f.read(reinterpret_cast<char*>(&version), 1);
    if (!f || version != 1)
        throw ParseError("checkpoint '" + path + "': unsupported version at byte 4");
    const std::uint32_t count = read_u32(f);
    std::map<std::string, Matrix> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const std::uint32_t rows = read_u32(f);
        const std::uint32_t cols = read_u32(f);
        Matrix m(rows, cols);
        f.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!f)
            throw ParseError("checkpoint '" + path + "': truncated tensor '" + name + "' at byte " +
                             std::to_string(static_cast<long long>(f.tellg())));
        tensors.emplace(std::move(name), std::move(m));
    }
    f.peek();
    if (!f.eof())
        throw ParseError("checkpoint '" + path + "': trailing bytes after tensor " +
                         std::to_string(count));
    return tensors;
}

}  // namespace bridgeflow::nn
