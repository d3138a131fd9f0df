#pragma once

#include <map>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cmmd {

enum class Activation { softplus, sigmoid, identity };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::softplus: return "softplus";
        case Activation::sigmoid: return "sigmoid";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "softplus") return Activation::softplus;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "identity") return Activation::identity;
    throw std::invalid_argument("unknown activation: " + s);
}

struct HeadSpec {
    std::string name;
    std::size_t width = 0;
};

struct MlpSpec {
    std::vector<std::size_t> layer_widths; // input width first, output width last
    Activation hidden_activation = Activation::softplus;
    double dropout_rate = 0.0;
    std::vector<HeadSpec> heads; // slices of the final layer; empty = single "out" head

    std::size_t input_width() const { return layer_widths.front(); }
    std::size_t output_width() const { return layer_widths.back(); }
    std::size_t num_layers() const { return layer_widths.size() - 1; }

    void validate() const {
        if (layer_widths.size() < 2)
            throw std::invalid_argument("mlp: need at least input and output widths");
        for (auto w : layer_widths)
            if (w == 0) throw std::invalid_argument("mlp: zero layer width");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("mlp: dropout rate in [0,1)");
        if (!heads.empty()) {
            std::size_t total = 0;
            for (const auto& h : heads) total += h.width;
            if (total != output_width())
                throw std::invalid_argument("mlp: head slices must partition the final width");
        }
    }
};

// Named parameter map with deterministic (lexicographic) iteration order.
struct ParameterStore {
    std::map<std::string, Tensor> params;

    Tensor& at(const std::string& path) {
        auto it = params.find(path);
        if (it == params.end()) throw std::out_of_range("missing parameter: " + path);
        return it->second;
    }
    const Tensor& at(const std::string& path) const {
        auto it = params.find(path);
        if (it == params.end()) throw std::out_of_range("missing parameter: " + path);
        return it->second;
    }
    bool contains(const std::string& path) const { return params.count(path) != 0; }
    std::size_t count() const { return params.size(); }
};

using GradMap = std::map<std::string, Tensor>;

// Leaves bound on a tape, one per parameter path.
struct BoundParams {
    std::map<std::string, Var> vars;

    Var at(const std::string& path) const {
        auto it = vars.find(path);
        if (it == vars.end()) throw std::out_of_range("unbound parameter: " + path);
        return it->second;
    }
};

inline BoundParams bind(Tape& tape, const ParameterStore& store) {
    BoundParams bound;
    for (const auto& [path, tensor] : store.params) {
        Tensor t = tensor;
        t.requires_grad = true;
        bound.vars[path] = tape.leaf(t);
    }
    return bound;
}

inline GradMap collect_grads(const Tape& tape, const BoundParams& bound) {
    GradMap grads;
    for (const auto& [path, var] : bound.vars) grads[path] = tape.grad(var);
    return grads;
}

inline std::string layer_weight_path(const std::string& prefix, std::size_t layer) {
    return prefix + "/layer" + std::to_string(layer) + "/weight";
}
inline std::string layer_bias_path(const std::string& prefix, std::size_t layer) {
    return prefix + "/layer" + std::to_string(layer) + "/bias";
}

// Glorot-uniform weights, zero biases.
inline void init_mlp_params(const MlpSpec& spec, ParameterStore& store,
                            const std::string& prefix, Rng& rng) {
    spec.validate();
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        std::size_t fan_in = spec.layer_widths[l];
        std::size_t fan_out = spec.layer_widths[l + 1];
        double bound = std::sqrt(6.0 / double(fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (auto& v : w.values) v = rng.uniform(-bound, bound);
        store.params[layer_weight_path(prefix, l)] = std::move(w);
        store.params[layer_bias_path(prefix, l)] = Tensor::zeros({fan_out});
    }
}

// Affine -> activation -> dropout for hidden layers; the final layer is affine
// only, split into named head slices. Head activations are the caller's job.
inline std::map<std::string, Var> mlp_forward(Tape& tape, const MlpSpec& spec,
                                              const BoundParams& bound,
                                              const std::string& prefix, Var input,
                                              bool train_mode, Rng& rng) {
    spec.validate();
    const Tensor& in = tape.value(input);
    if (in.rank() != 2 || in.cols() != spec.input_width())
        throw std::invalid_argument("mlp_forward: input width " + in.shape_str() +
                                    " does not match spec width " +
                                    std::to_string(spec.input_width()));
    Var h = input;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        Var w = bound.at(layer_weight_path(prefix, l));
        Var b = bound.at(layer_bias_path(prefix, l));
        h = tape.add(tape.matmul(h, w), b);
        if (l + 1 < spec.num_layers()) {
            switch (spec.hidden_activation) {
                case Activation::softplus: h = tape.softplus(h); break;
                case Activation::sigmoid: h = tape.sigmoid(h); break;
                case Activation::identity: break;
            }
            h = tape.dropout(h, spec.dropout_rate, train_mode, rng);
        }
    }
    std::map<std::string, Var> out;
    if (spec.heads.empty()) {
        out["out"] = h;
    } else {
        std::size_t off = 0;
        for (const auto& head : spec.heads) {
            out[head.name] = tape.slice_last(h, off, head.width);
            off += head.width;
        }
    }
    return out;
}

} // namespace cmmd
