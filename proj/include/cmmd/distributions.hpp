#pragma once

#include "autograd.hpp"
#include "nn.hpp"
#include "tensor.hpp"

namespace cmmd {

inline constexpr double kLogVarClamp = 7.0;
inline constexpr double kProbClamp = 1e-7;
inline constexpr double kLogTwoPi = 1.8378770664093454836; // ln(2*pi)

struct GaussianParams {
    Var mean;
    Var log_var;
};

struct BernoulliParams {
    Var logits;
};

enum class CategoricalMode { softmax, independent_sigmoid, single_sigmoid };

inline std::string to_string(CategoricalMode m) {
    switch (m) {
        case CategoricalMode::softmax: return "softmax";
        case CategoricalMode::independent_sigmoid: return "independent_sigmoid";
        case CategoricalMode::single_sigmoid: return "single_sigmoid";
    }
    return "?";
}

inline CategoricalMode categorical_mode_from_string(const std::string& s) {
    if (s == "softmax") return CategoricalMode::softmax;
    if (s == "independent_sigmoid") return CategoricalMode::independent_sigmoid;
    if (s == "single_sigmoid") return CategoricalMode::single_sigmoid;
    throw std::invalid_argument("unknown categorical mode: " + s);
}

struct CategoricalParams {
    Var logits;
    CategoricalMode mode = CategoricalMode::softmax;
};

// z = mean + exp(log_var / 2) * noise
inline Var reparam_sample(Tape& tape, const GaussianParams& params, Var noise) {
    require_same_shape("reparam_sample", tape.value(params.mean), tape.value(noise));
    Var std_dev = tape.exp_(tape.scale(params.log_var, 0.5));
    return tape.add(params.mean, tape.mul(std_dev, noise));
}

// KL(q || p) between diagonal Gaussians, per dimension and totalled per row.
// per_dim = 0.5 * (exp(lq - lp) + (mq - mp)^2 * exp(-lp) - 1 + lp - lq)
struct KlResult {
    Var per_dim; // batch x dim
    Var total;   // batch
};

inline KlResult gaussian_kl(Tape& tape, const GaussianParams& q, const GaussianParams& p) {
    require_same_shape("gaussian_kl", tape.value(q.mean), tape.value(p.mean));
    require_same_shape("gaussian_kl", tape.value(q.log_var), tape.value(p.log_var));
    Var dl = tape.sub(q.log_var, p.log_var);
    Var var_ratio = tape.exp_(dl);
    Var diff = tape.sub(q.mean, p.mean);
    Var mahal = tape.mul(tape.square(diff), tape.exp_(tape.neg(p.log_var)));
    Var inner = tape.sub(tape.add(var_ratio, mahal), tape.add_const(dl, 1.0));
    Var per_dim = tape.scale(inner, 0.5);
    return {per_dim, tape.sum_last(per_dim)};
}

// log N(x; mean, exp(log_var)) summed over dims -> batch vector
inline Var gaussian_log_prob(Tape& tape, const GaussianParams& params, Var x) {
    require_same_shape("gaussian_log_prob", tape.value(params.mean), tape.value(x));
    Var diff = tape.sub(x, params.mean);
    Var mahal = tape.mul(tape.square(diff), tape.exp_(tape.neg(params.log_var)));
    Var per_dim = tape.scale(
        tape.add(tape.add_const(params.log_var, kLogTwoPi), mahal), -0.5);
    return tape.sum_last(per_dim);
}

// Bernoulli log-likelihood with probabilities clamped to [1e-7, 1-1e-7].
inline Var bernoulli_log_prob(Tape& tape, const BernoulliParams& params, Var x) {
    require_same_shape("bernoulli_log_prob", tape.value(params.logits), tape.value(x));
    Var p = tape.clamp(tape.sigmoid(params.logits), kProbClamp, 1.0 - kProbClamp);
    Var one_minus_x = tape.add_const(tape.neg(x), 1.0);
    Var one_minus_p = tape.add_const(tape.neg(p), 1.0);
    Var per_dim = tape.add(tape.mul(x, tape.log_(p)),
                           tape.mul(one_minus_x, tape.log_(one_minus_p)));
    return tape.sum_last(per_dim);
}

// softmax mode: log-softmax dotted with one-hot rows; sigmoid modes reduce to
// independent Bernoulli terms per class.
inline Var categorical_log_prob(Tape& tape, const CategoricalParams& params, Var y) {
    require_same_shape("categorical_log_prob", tape.value(params.logits), tape.value(y));
    if (params.mode == CategoricalMode::softmax) {
        const Tensor& yt = tape.value(y);
        for (std::size_t r = 0; r < yt.rows(); ++r) {
            double s = 0.0;
            bool onehot = true;
            for (std::size_t c = 0; c < yt.cols(); ++c) {
                double v = yt.at(r, c);
                if (v != 0.0 && v != 1.0) onehot = false;
                s += v;
            }
            if (!onehot || s != 1.0)
                throw std::invalid_argument(
                    "categorical_log_prob: softmax mode requires one-hot rows");
        }
        return tape.sum_last(tape.mul(tape.log_softmax(params.logits), y));
    }
    return bernoulli_log_prob(tape, BernoulliParams{params.logits}, y);
}

} // namespace cmmd
