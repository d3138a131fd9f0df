#pragma once

#include <chrono>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "objective.hpp"

namespace cmmd {

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t t = 0;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// One Adam update. Gradients are of the function being minimized.
inline void adam_step(ParameterStore& params, const GradMap& grads, AdamState& state) {
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (auto& [path, p] : params.params) {
        auto git = grads.find(path);
        if (git == grads.end())
            throw std::invalid_argument("adam: missing gradient for " + path);
        const Tensor& g = git->second;
        if (!g.all_finite())
            throw std::runtime_error("adam: non-finite gradient for " + path);
        Tensor& m = state.m.try_emplace(path, Tensor::zeros(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(path, Tensor::zeros(p.shape)).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    ObjectiveConfig objective;
    bool shuffle = true;
    std::size_t eval_every = 0; // 0 = never
    double learning_rate = 1e-4;
    double grad_clip_norm = 0.0; // 0 = off

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train: epochs >= 1 required");
        if (batch_size < 2) throw std::invalid_argument("train: batch_size >= 2 required");
        objective.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    ObjectiveBreakdown mean_breakdown;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

// ---- checkpoint ----------------------------------------------------------

inline constexpr char kCkptMagic[9] = "CMMDCKPT";
inline constexpr std::uint32_t kCkptVersion = 1;

namespace trainer_detail {

inline void write_param_block(std::ostream& out,
                              const std::map<std::string, Tensor>& params) {
    data_detail::write_le<std::uint64_t>(out, params.size());
    for (const auto& [path, t] : params) {
        if (path.size() > 0xffff) throw std::invalid_argument("checkpoint: path too long");
        data_detail::write_le<std::uint16_t>(out, std::uint16_t(path.size()));
        out.write(path.data(), std::streamsize(path.size()));
        out.put(char(t.rank()));
        for (auto e : t.shape) data_detail::write_le<std::uint64_t>(out, e);
        for (double v : t.values) data_detail::write_le_double(out, v);
    }
}

inline std::map<std::string, Tensor> read_param_block(std::istream& in) {
    std::uint64_t count = data_detail::read_le<std::uint64_t>(in, "param count");
    std::map<std::string, Tensor> params;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint16_t len = data_detail::read_le<std::uint16_t>(in, "path length");
        std::string path(len, '\0');
        in.read(path.data(), len);
        if (!in) throw std::runtime_error("checkpoint: truncated path");
        int rank = in.get();
        if (rank < 0) throw std::runtime_error("checkpoint: truncated rank");
        std::vector<std::size_t> shape;
        for (int r = 0; r < rank; ++r)
            shape.push_back(std::size_t(data_detail::read_le<std::uint64_t>(in, "extent")));
        Tensor t = Tensor::zeros(shape);
        for (auto& v : t.values) v = data_detail::read_le_double(in, "values");
        params[path] = std::move(t);
    }
    return params;
}

} // namespace trainer_detail

// Layout: magic, version, parameter block, then a trainer trailer (manifest,
// epoch counter, Adam state). A file ending after the parameter block is a
// valid bare parameter checkpoint.
inline void save_checkpoint(const CmmdModel& model, const AdamState& state,
                            std::size_t epochs_done, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open for write " + path);
    out.write(kCkptMagic, 8);
    data_detail::write_le<std::uint32_t>(out, kCkptVersion);
    trainer_detail::write_param_block(out, model.params.params);
    std::string manifest = model_manifest(model);
    data_detail::write_le<std::uint32_t>(out, std::uint32_t(manifest.size()));
    out.write(manifest.data(), std::streamsize(manifest.size()));
    data_detail::write_le<std::uint64_t>(out, epochs_done);
    data_detail::write_le<std::uint64_t>(out, state.t);
    data_detail::write_le_double(out, state.learning_rate);
    trainer_detail::write_param_block(out, state.m);
    trainer_detail::write_param_block(out, state.v);
    if (!out) throw std::runtime_error("checkpoint: write failed " + path);
}

struct Checkpoint {
    CmmdModel model;
    AdamState state;
    std::size_t epochs_done = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = data_detail::read_le<std::uint32_t>(in, "version");
    if (version != kCkptVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    auto params = trainer_detail::read_param_block(in);

    std::uint32_t manifest_len = data_detail::read_le<std::uint32_t>(in, "manifest length");
    std::string manifest(manifest_len, '\0');
    in.read(manifest.data(), manifest_len);
    if (!in) throw std::runtime_error("checkpoint: truncated manifest in " + path);

    Checkpoint ckpt;
    ckpt.model = model_from_manifest(manifest);
    ckpt.model.params.params = std::move(params);
    ckpt.epochs_done = std::size_t(data_detail::read_le<std::uint64_t>(in, "epoch"));
    ckpt.state.t = data_detail::read_le<std::uint64_t>(in, "adam step");
    ckpt.state.learning_rate = data_detail::read_le_double(in, "learning rate");
    ckpt.state.m = trainer_detail::read_param_block(in);
    ckpt.state.v = trainer_detail::read_param_block(in);
    return ckpt;
}

// ---- training loop -------------------------------------------------------

namespace trainer_detail {

inline void clip_gradients(GradMap& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& [path, g] : grads)
        for (double v : g.values) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    double s = max_norm / norm;
    for (auto& [path, g] : grads)
        for (auto& v : g.values) v *= s;
}

} // namespace trainer_detail

// Minibatch SVGB on the negated objective. Deterministic: the rng used for
// epoch e is derived from (seed, e) only, so resuming at an epoch boundary
// reproduces an uninterrupted run bit-exactly.
inline TrainHistory fit(CmmdModel& model, const Dataset& dataset, const TrainConfig& cfg,
                        AdamState* state_io = nullptr, std::size_t start_epoch = 0,
                        const std::string& abort_checkpoint_path = "") {
    cfg.validate();
    model.validate();
    AdamState local_state;
    AdamState& state = state_io ? *state_io : local_state;
    state.learning_rate = cfg.learning_rate;

    TrainHistory history;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::uint64_t epoch_seed = splitmix64(cfg.seed ^ splitmix64(epoch + 1));
        auto batches = batch_indices(dataset.manifest.rows, cfg.batch_size, cfg.shuffle,
                                     epoch_seed, 2);
        ObjectiveBreakdown sum;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            MultiModalBatch batch = make_batch(dataset, model.partition, batches[b]);
            Tape tape;
            BoundParams bound = bind(tape, model.params);
            Rng batch_rng = Rng::derived(epoch_seed, b + 1);
            ObjectiveVars obj;
            try {
                obj = cmmd_loss(tape, model, bound, batch, cfg.objective, batch_rng);
            } catch (const std::runtime_error&) {
                if (!abort_checkpoint_path.empty())
                    save_checkpoint(model, state, epoch, abort_checkpoint_path);
                throw;
            }
            tape.backward(tape.neg(obj.total)); // maximize the objective
            GradMap grads = collect_grads(tape, bound);
            trainer_detail::clip_gradients(grads, cfg.grad_clip_norm);
            adam_step(model.params, grads, state);

            sum.recon_log_prob += obj.values.recon_log_prob;
            sum.class_log_prob += obj.values.class_log_prob;
            sum.kl_term += obj.values.kl_term;
            sum.mmd_term += obj.values.mmd_term;
            sum.total_objective += obj.values.total_objective;
        }
        double nb = double(batches.size());
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_breakdown = {sum.recon_log_prob / nb, sum.class_log_prob / nb,
                              sum.kl_term / nb, sum.mmd_term / nb,
                              sum.total_objective / nb};
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);
    }
    return history;
}

// Stage 1 trains with the encoder label input zeroed and no classification
// term, so the label-input weights and the classifier receive exactly zero
// gradient. Stage 2 re-initializes only the label-input rows of the first
// encoder layer and the classifier, then trains the full objective.
inline TrainHistory two_stage_fit(CmmdModel& model, const Dataset& unlabeled,
                                  const Dataset& labeled, const TrainConfig& stage1_cfg,
                                  const TrainConfig& stage2_cfg) {
    model.validate();
    if (unlabeled.manifest.num_classes != model.num_classes ||
        labeled.manifest.num_classes != model.num_classes)
        throw std::invalid_argument("two_stage: class count mismatch between stages");
    for (const auto& mod : model.partition.observed)
        if (unlabeled.modalities.find(mod.name) == unlabeled.modalities.end() ||
            labeled.modalities.find(mod.name) == labeled.modalities.end())
            throw std::invalid_argument("two_stage: partition mismatch between stages (" +
                                        mod.name + ")");

    TrainConfig cfg1 = stage1_cfg;
    cfg1.objective.drop_labels = true;
    AdamState state1;
    TrainHistory history = fit(model, unlabeled, cfg1, &state1);

    // Stage 2: carry over all weights, re-randomize label-input rows and the
    // classifier, then train the full objective on the labeled set.
    std::size_t label_offset =
        model.partition.observed_width() + model.partition.missing_width();
    RngFactory factory(stage2_cfg.seed);
    Rng reinit = factory.stream(7001);
    {
        Tensor& w = model.params.at(layer_weight_path("encoder", 0));
        std::size_t fan_in = model.encoder_spec.layer_widths[0];
        std::size_t fan_out = model.encoder_spec.layer_widths[1];
        double bound = std::sqrt(6.0 / double(fan_in + fan_out));
        for (std::size_t r = label_offset; r < w.rows(); ++r)
            for (std::size_t c = 0; c < w.cols(); ++c)
                w.at(r, c) = reinit.uniform(-bound, bound);
    }
    {
        ParameterStore fresh;
        Rng cls_rng = factory.stream(7002);
        init_mlp_params(model.classifier_spec, fresh, "classifier", cls_rng);
        for (auto& [path, t] : fresh.params) model.params.at(path) = t;
    }

    AdamState state2;
    TrainHistory h2 = fit(model, labeled, stage2_cfg, &state2);
    for (auto& rec : h2.epochs) {
        rec.epoch += stage1_cfg.epochs;
        history.epochs.push_back(rec);
    }
    return history;
}

} // namespace cmmd
