#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "nn.hpp"

namespace cmmd {

enum class DecoderFamily { gaussian, bernoulli };
enum class PriorMode { conditional, standard_normal };
enum class ClassifyFrom { prior, posterior };

inline std::string to_string(DecoderFamily f) {
    return f == DecoderFamily::gaussian ? "gaussian" : "bernoulli";
}
inline DecoderFamily decoder_family_from_string(const std::string& s) {
    if (s == "gaussian") return DecoderFamily::gaussian;
    if (s == "bernoulli") return DecoderFamily::bernoulli;
    throw std::invalid_argument("unknown decoder family: " + s);
}
inline std::string to_string(PriorMode m) {
    return m == PriorMode::conditional ? "conditional" : "standard_normal";
}
inline PriorMode prior_mode_from_string(const std::string& s) {
    if (s == "conditional") return PriorMode::conditional;
    if (s == "standard_normal") return PriorMode::standard_normal;
    throw std::invalid_argument("unknown prior mode: " + s);
}

struct Modality {
    std::string name;
    std::size_t width = 0;
    DecoderFamily family = DecoderFamily::gaussian;
};

struct ModalityPartition {
    std::vector<Modality> observed;
    std::vector<Modality> missing;

    std::size_t observed_width() const {
        std::size_t w = 0;
        for (const auto& m : observed) w += m.width;
        return w;
    }
    std::size_t missing_width() const {
        std::size_t w = 0;
        for (const auto& m : missing) w += m.width;
        return w;
    }

    void validate() const {
        if (observed.empty()) throw std::invalid_argument("partition: observed set empty");
        std::map<std::string, int> seen;
        for (const auto& m : observed) ++seen[m.name];
        for (const auto& m : missing) ++seen[m.name];
        for (const auto& [name, cnt] : seen)
            if (cnt > 1)
                throw std::invalid_argument("partition: duplicate modality " + name);
        for (const auto& m : observed)
            if (m.width == 0) throw std::invalid_argument("partition: zero width " + m.name);
        for (const auto& m : missing)
            if (m.width == 0) throw std::invalid_argument("partition: zero width " + m.name);
    }
};

struct MultiModalBatch {
    std::vector<Tensor> observed; // one per observed modality, batch x width
    std::vector<Tensor> missing;  // one per missing modality
    Tensor labels;                // batch x K, one-hot or multi-hot

    std::size_t size() const {
        if (!observed.empty()) return observed[0].rows();
        return labels.rows();
    }
};

struct CmmdModel {
    ModalityPartition partition;
    MlpSpec encoder_spec;
    MlpSpec prior_spec;
    MlpSpec classifier_spec;
    std::vector<MlpSpec> decoder_specs; // parallel to partition.missing
    std::size_t latent_dim = 0;
    std::size_t num_classes = 0;
    CategoricalMode classifier_mode = CategoricalMode::softmax;
    PriorMode prior_mode = PriorMode::conditional;
    ClassifyFrom classify_from = ClassifyFrom::prior;
    std::optional<double> fixed_decoder_var;
    ParameterStore params;

    void validate() const {
        partition.validate();
        std::size_t o = partition.observed_width();
        std::size_t m = partition.missing_width();
        if (encoder_spec.input_width() != o + m + num_classes)
            throw std::invalid_argument("model: encoder input width must be " +
                                        std::to_string(o + m + num_classes));
        if (prior_mode == PriorMode::conditional && prior_spec.input_width() != o)
            throw std::invalid_argument("model: prior input width must be " +
                                        std::to_string(o));
        if (classifier_spec.input_width() != latent_dim)
            throw std::invalid_argument("model: classifier input width must be latent_dim");
        if (decoder_specs.size() != partition.missing.size())
            throw std::invalid_argument("model: one decoder spec per missing modality");
        for (std::size_t i = 0; i < decoder_specs.size(); ++i)
            if (decoder_specs[i].input_width() != o + latent_dim)
                throw std::invalid_argument("model: decoder input width must be " +
                                            std::to_string(o + latent_dim));
        if (fixed_decoder_var && *fixed_decoder_var <= 0.0)
            throw std::invalid_argument("model: fixed decoder variance must be positive");
    }
};

// Canonical two-head spec for (mean, log_var) networks.
inline MlpSpec gaussian_head_spec(std::vector<std::size_t> hidden, std::size_t in_width,
                                  std::size_t out_dim, double dropout = 0.2) {
    MlpSpec spec;
    spec.layer_widths.push_back(in_width);
    for (auto h : hidden) spec.layer_widths.push_back(h);
    spec.layer_widths.push_back(2 * out_dim);
    spec.dropout_rate = dropout;
    spec.heads = {{"mean", out_dim}, {"log_var", out_dim}};
    return spec;
}

inline MlpSpec logits_head_spec(std::vector<std::size_t> hidden, std::size_t in_width,
                                std::size_t out_dim, double dropout = 0.2) {
    MlpSpec spec;
    spec.layer_widths.push_back(in_width);
    for (auto h : hidden) spec.layer_widths.push_back(h);
    spec.layer_widths.push_back(out_dim);
    spec.dropout_rate = dropout;
    spec.heads = {{"logits", out_dim}};
    return spec;
}

inline void init_model_params(CmmdModel& model, Rng& rng) {
    model.validate();
    Rng r0 = rng.derive(1);
    init_mlp_params(model.encoder_spec, model.params, "encoder", r0);
    if (model.prior_mode == PriorMode::conditional) {
        Rng r1 = rng.derive(2);
        init_mlp_params(model.prior_spec, model.params, "prior", r1);
    }
    Rng r2 = rng.derive(3);
    init_mlp_params(model.classifier_spec, model.params, "classifier", r2);
    for (std::size_t i = 0; i < model.decoder_specs.size(); ++i) {
        Rng rd = rng.derive(16 + i);
        init_mlp_params(model.decoder_specs[i], model.params,
                        "decoder/" + model.partition.missing[i].name, rd);
    }
}

namespace model_detail {

inline void check_widths(const char* what, const std::vector<Tensor>& xs,
                         const std::vector<Modality>& mods) {
    if (xs.size() != mods.size())
        throw std::invalid_argument(std::string(what) + ": modality count mismatch");
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i].rank() != 2 || xs[i].cols() != mods[i].width)
            throw std::invalid_argument(std::string(what) + ": width mismatch for modality " +
                                        mods[i].name);
}

inline Var concat_modalities(Tape& tape, const std::vector<Tensor>& xs) {
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x));
    return vars.size() == 1 ? vars[0] : tape.concat(vars);
}

inline Tensor standard_normal_noise(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor noise = Tensor::zeros({rows, cols});
    for (auto& v : noise.values) v = rng.normal();
    return noise;
}

} // namespace model_detail

// q(z | x_O, x_M, y): concat in declaration order (observed, missing, label)
inline GaussianParams encode(Tape& tape, const CmmdModel& model, const BoundParams& bound,
                             const std::vector<Tensor>& x_obs,
                             const std::vector<Tensor>& x_mis, const Tensor& y,
                             bool train_mode, Rng& rng) {
    model_detail::check_widths("encode", x_obs, model.partition.observed);
    model_detail::check_widths("encode", x_mis, model.partition.missing);
    if (y.rank() != 2 || y.cols() != model.num_classes)
        throw std::invalid_argument("encode: label width mismatch");
    std::vector<Var> parts;
    for (const auto& x : x_obs) parts.push_back(tape.leaf(x));
    for (const auto& x : x_mis) parts.push_back(tape.leaf(x));
    parts.push_back(tape.leaf(y));
    Var input = tape.concat(parts);
    auto heads = mlp_forward(tape, model.encoder_spec, bound, "encoder", input, train_mode, rng);
    return {heads.at("mean"),
            tape.clamp(heads.at("log_var"), -kLogVarClamp, kLogVarClamp)};
}

// p(z | x_O); standard_normal mode ignores x_O entirely
inline GaussianParams prior(Tape& tape, const CmmdModel& model, const BoundParams& bound,
                            const std::vector<Tensor>& x_obs, bool train_mode, Rng& rng) {
    model_detail::check_widths("prior", x_obs, model.partition.observed);
    std::size_t batch = x_obs[0].rows();
    if (model.prior_mode == PriorMode::standard_normal) {
        Var zero_mean = tape.leaf(Tensor::zeros({batch, model.latent_dim}));
        Var zero_lv = tape.leaf(Tensor::zeros({batch, model.latent_dim}));
        return {zero_mean, zero_lv};
    }
    Var input = model_detail::concat_modalities(tape, x_obs);
    auto heads = mlp_forward(tape, model.prior_spec, bound, "prior", input, train_mode, rng);
    return {heads.at("mean"),
            tape.clamp(heads.at("log_var"), -kLogVarClamp, kLogVarClamp)};
}

struct DecoderOutput {
    std::string modality;
    DecoderFamily family;
    GaussianParams gaussian;  // family == gaussian
    BernoulliParams bernoulli; // family == bernoulli
};

// p(x_M | x_O, z): one MLP per missing modality on concat(x_O, z)
inline std::vector<DecoderOutput> decode(Tape& tape, const CmmdModel& model,
                                         const BoundParams& bound,
                                         const std::vector<Tensor>& x_obs, Var z,
                                         bool train_mode, Rng& rng) {
    model_detail::check_widths("decode", x_obs, model.partition.observed);
    // copy the row count: tape.value references are invalidated by later ops
    std::size_t z_rows;
    {
        const Tensor& zt = tape.value(z);
        if (zt.rank() != 2 || zt.cols() != model.latent_dim)
            throw std::invalid_argument("decode: z width mismatch");
        z_rows = zt.rows();
    }
    std::vector<Var> parts;
    for (const auto& x : x_obs) parts.push_back(tape.leaf(x));
    parts.push_back(z);
    Var input = tape.concat(parts);
    std::vector<DecoderOutput> outputs;
    for (std::size_t i = 0; i < model.partition.missing.size(); ++i) {
        const Modality& mod = model.partition.missing[i];
        auto heads = mlp_forward(tape, model.decoder_specs[i], bound,
                                 "decoder/" + mod.name, input, train_mode, rng);
        DecoderOutput out;
        out.modality = mod.name;
        out.family = mod.family;
        if (mod.family == DecoderFamily::gaussian) {
            out.gaussian.mean = heads.at("mean");
            if (model.fixed_decoder_var) {
                double lv = std::log(*model.fixed_decoder_var);
                out.gaussian.log_var =
                    tape.leaf(Tensor::full({z_rows, mod.width}, lv));
            } else {
                out.gaussian.log_var =
                    tape.clamp(heads.at("log_var"), -kLogVarClamp, kLogVarClamp);
            }
        } else {
            out.bernoulli.logits = heads.at("logits");
        }
        outputs.push_back(out);
    }
    return outputs;
}

// p(y | z)
inline CategoricalParams classify(Tape& tape, const CmmdModel& model,
                                  const BoundParams& bound, Var z, bool train_mode,
                                  Rng& rng) {
    const Tensor& zt = tape.value(z);
    if (zt.rank() != 2 || zt.cols() != model.latent_dim)
        throw std::invalid_argument("classify: z width mismatch");
    auto heads =
        mlp_forward(tape, model.classifier_spec, bound, "classifier", z, train_mode, rng);
    return {heads.at("logits"), model.classifier_mode};
}

struct ForwardOutputs {
    GaussianParams q_params;
    GaussianParams prior_params;
    Var z_q;
    Var z_p;
    std::vector<DecoderOutput> decoder_params; // from z_q
    CategoricalParams class_params;            // from z_p
};

// Training-time routing: decoders read z ~ q, the classifier reads z ~ p.
inline ForwardOutputs forward_train(Tape& tape, const CmmdModel& model,
                                    const BoundParams& bound, const MultiModalBatch& batch,
                                    Rng& rng) {
    std::size_t n = batch.size();
    ForwardOutputs out;
    Rng enc_rng = rng.derive(101);
    out.q_params = encode(tape, model, bound, batch.observed, batch.missing, batch.labels,
                          true, enc_rng);
    Rng pri_rng = rng.derive(102);
    out.prior_params = prior(tape, model, bound, batch.observed, true, pri_rng);
    Rng noise_rng = rng.derive(103);
    Tensor noise_q = model_detail::standard_normal_noise(n, model.latent_dim, noise_rng);
    Tensor noise_p = model_detail::standard_normal_noise(n, model.latent_dim, noise_rng);
    out.z_q = reparam_sample(tape, out.q_params, tape.leaf(noise_q));
    out.z_p = reparam_sample(tape, out.prior_params, tape.leaf(noise_p));
    Rng dec_rng = rng.derive(104);
    out.decoder_params = decode(tape, model, bound, batch.observed, out.z_q, true, dec_rng);
    Rng cls_rng = rng.derive(105);
    Var z_cls = model.classify_from == ClassifyFrom::prior ? out.z_p : out.z_q;
    out.class_params = classify(tape, model, bound, z_cls, true, cls_rng);
    return out;
}

struct TestOutputs {
    std::map<std::string, Tensor> generated; // decoder mean / Bernoulli probs
    Tensor class_probs;                      // batch x K
    Tensor z_p;
};

// Test-time routing (no x_M anywhere): z ~ p(z|x_O), generated modality is the
// decoder mean (Gaussian) or sigmoid probabilities (Bernoulli). Outputs may be
// averaged over several prior samples.
inline TestOutputs forward_test(const CmmdModel& model, const std::vector<Tensor>& x_obs,
                                Rng& rng, std::size_t num_samples = 1) {
    if (num_samples < 1) throw std::invalid_argument("forward_test: num_samples >= 1");
    Tape tape;
    BoundParams bound = bind(tape, model.params);
    Rng eval_rng = rng.derive(201);
    GaussianParams p = prior(tape, model, bound, x_obs, false, eval_rng);
    std::size_t n = x_obs[0].rows();

    TestOutputs out;
    Rng noise_rng = rng.derive(202);
    Tensor class_acc;
    for (std::size_t s = 0; s < num_samples; ++s) {
        Tensor noise = model_detail::standard_normal_noise(n, model.latent_dim, noise_rng);
        Var z = reparam_sample(tape, p, tape.leaf(noise));
        if (s == 0) out.z_p = tape.value(z);
        {
            Rng dec_rng = rng.derive(203);
            auto dec = decode(tape, model, bound, x_obs, z, false, dec_rng);
            for (const auto& d : dec) {
                Tensor gen = d.family == DecoderFamily::gaussian
                                 ? tape.value(d.gaussian.mean)
                                 : tape.value(tape.sigmoid(d.bernoulli.logits));
                auto it = out.generated.find(d.modality);
                if (it == out.generated.end()) {
                    out.generated[d.modality] = std::move(gen);
                } else {
                    for (std::size_t i = 0; i < gen.size(); ++i) it->second[i] += gen[i];
                }
            }
        }
        Rng cls_rng = rng.derive(204);
        CategoricalParams cp = classify(tape, model, bound, z, false, cls_rng);
        Tensor probs;
        if (model.classifier_mode == CategoricalMode::softmax) {
            probs = tape.value(tape.exp_(tape.log_softmax(cp.logits)));
        } else {
            probs = tape.value(tape.sigmoid(cp.logits));
        }
        if (class_acc.values.empty()) {
            class_acc = probs;
        } else {
            for (std::size_t i = 0; i < probs.size(); ++i) class_acc[i] += probs[i];
        }
    }
    for (auto& v : class_acc.values) v /= double(num_samples);
    out.class_probs = class_acc;
    for (auto& [name, gen] : out.generated)
        for (auto& v : gen.values) v /= double(num_samples);
    return out;
}

} // namespace cmmd
