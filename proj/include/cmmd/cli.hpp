#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "diagnostics.hpp"
#include "gradcheck.hpp"
#include "model_io.hpp"
#include "trainer.hpp"

namespace cmmd {

// exit codes: 0 success, 1 runtime/I-O, 2 configuration
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline void apply_env_seed(RunConfig& cfg, const std::string& key, std::ostream& log) {
    const char* env = std::getenv("CMMD_SEED");
    if (!env) return;
    cfg.set(key, env);
    log << "CMMD_SEED override in effect: " << key << " = " << env << "\n";
}

inline void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/config_resolved.txt");
    if (!out) throw std::runtime_error("cannot write resolved config in " + out_dir);
    out << cfg.echo();
}

inline SynthConfig synth_config(const RunConfig& cfg) {
    SynthConfig sc;
    sc.rows = cfg.get_size("synth.rows", 1000);
    sc.num_classes = cfg.get_size("synth.num_classes", 4);
    sc.latent_dim = cfg.get_size("synth.latent_dim", 8);
    sc.class_sep = cfg.get_double("synth.class_sep", 3.0);
    sc.label_noise = cfg.get_double("synth.label_noise", 0.0);
    sc.seed = cfg.get_u64("synth.seed", 0);
    std::string mods = cfg.require_string("synth.modalities");
    for (const auto& item : RunConfig::split_list(mods)) {
        // name:width:depth:noise:family
        std::vector<std::string> f;
        std::istringstream is(item);
        std::string part;
        while (std::getline(is, part, ':')) f.push_back(part);
        if (f.size() != 5)
            throw ConfigError("synth.modalities entry must be name:width:depth:noise:family, got " +
                              item);
        SynthModalityConfig mc;
        mc.name = f[0];
        mc.width = std::stoull(f[1]);
        mc.depth = std::stoull(f[2]);
        mc.noise_scale = std::stod(f[3]);
        mc.family = decoder_family_from_string(f[4]);
        sc.modalities.push_back(mc);
    }
    cfg.note_default("synth.rows", std::to_string(sc.rows));
    cfg.note_default("synth.num_classes", std::to_string(sc.num_classes));
    cfg.note_default("synth.latent_dim", std::to_string(sc.latent_dim));
    cfg.note_default("synth.seed", std::to_string(sc.seed));
    return sc;
}

inline std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : RunConfig::split_list(s)) out.push_back(std::stoull(item));
    return out;
}

inline CmmdModel build_model(const RunConfig& cfg, const DatasetManifest& manifest) {
    CmmdModel model;
    auto info_for = [&](const std::string& name) -> const ModalityInfo& {
        for (const auto& info : manifest.modalities)
            if (info.name == name) return info;
        throw ConfigError("model references unknown modality " + name);
    };
    for (const auto& name : RunConfig::split_list(cfg.require_string("model.observed"))) {
        const ModalityInfo& info = info_for(name);
        model.partition.observed.push_back({info.name, info.width, info.family});
    }
    for (const auto& name : RunConfig::split_list(cfg.require_string("model.missing"))) {
        const ModalityInfo& info = info_for(name);
        model.partition.missing.push_back({info.name, info.width, info.family});
    }
    model.latent_dim = cfg.get_size("model.latent_dim", 8);
    model.num_classes = manifest.num_classes;
    model.classifier_mode = categorical_mode_from_string(
        cfg.get_string("model.classifier_mode", to_string(manifest.label_mode)));
    model.prior_mode =
        prior_mode_from_string(cfg.get_string("model.prior_mode", "conditional"));
    std::string cf = cfg.get_string("model.classify_from", "prior");
    if (cf != "prior" && cf != "posterior")
        throw ConfigError("model.classify_from must be prior or posterior");
    model.classify_from = cf == "prior" ? ClassifyFrom::prior : ClassifyFrom::posterior;
    double fixed_var = cfg.get_double("model.fixed_decoder_var", 0.0);
    if (fixed_var > 0.0) model.fixed_decoder_var = fixed_var;

    double dropout = cfg.get_double("model.dropout", 0.2);
    auto enc_hidden = parse_widths(cfg.get_string("model.encoder_hidden", "64"));
    auto prior_hidden = parse_widths(cfg.get_string("model.prior_hidden", "64"));
    auto cls_hidden = parse_widths(cfg.get_string("model.classifier_hidden", "32"));
    auto dec_hidden = parse_widths(cfg.get_string("model.decoder_hidden", "64"));

    std::size_t o = model.partition.observed_width();
    std::size_t m = model.partition.missing_width();
    model.encoder_spec =
        gaussian_head_spec(enc_hidden, o + m + model.num_classes, model.latent_dim, dropout);
    model.prior_spec = gaussian_head_spec(prior_hidden, o, model.latent_dim, dropout);
    model.classifier_spec =
        logits_head_spec(cls_hidden, model.latent_dim, model.num_classes, dropout);
    for (const auto& mod : model.partition.missing) {
        if (mod.family == DecoderFamily::gaussian)
            model.decoder_specs.push_back(
                gaussian_head_spec(dec_hidden, o + model.latent_dim, mod.width, dropout));
        else
            model.decoder_specs.push_back(
                logits_head_spec(dec_hidden, o + model.latent_dim, mod.width, dropout));
    }
    model.validate();
    cfg.note_default("model.latent_dim", std::to_string(model.latent_dim));
    cfg.note_default("model.dropout", std::to_string(dropout));
    cfg.note_default("model.prior_mode", to_string(model.prior_mode));
    return model;
}

inline ObjectiveConfig objective_config(const RunConfig& cfg) {
    ObjectiveConfig oc;
    oc.omega = cfg.get_double("objective.omega", 0.5);
    oc.alpha = cfg.get_double("objective.alpha", 10.0);
    oc.lambda = cfg.get_double("objective.lambda", 1000.0);
    std::string bw = cfg.get_string("objective.kernel_bandwidth", "latent_dim");
    if (bw == "latent_dim") {
        oc.kernel.bandwidth_policy = BandwidthPolicy::latent_dim;
    } else if (bw == "median") {
        oc.kernel.bandwidth_policy = BandwidthPolicy::median_heuristic;
    } else {
        oc.kernel.bandwidth_policy = BandwidthPolicy::fixed;
        oc.kernel.fixed_sigma_sq = std::stod(bw);
    }
    std::string scales = cfg.get_string("objective.kernel_scales", "1");
    oc.kernel.scales.clear();
    for (const auto& s : RunConfig::split_list(scales))
        oc.kernel.scales.push_back(std::stod(s));
    std::string est = cfg.get_string("objective.estimator", "u_statistic");
    if (est == "u_statistic") oc.estimator = MmdEstimator::u_statistic;
    else if (est == "v_statistic") oc.estimator = MmdEstimator::v_statistic;
    else throw ConfigError("objective.estimator must be u_statistic or v_statistic");
    oc.validate();
    cfg.note_default("objective.omega", std::to_string(oc.omega));
    cfg.note_default("objective.alpha", std::to_string(oc.alpha));
    cfg.note_default("objective.lambda", std::to_string(oc.lambda));
    cfg.note_default("objective.kernel_bandwidth", bw);
    return oc;
}

inline TrainConfig train_config(const RunConfig& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_size("trainer.epochs", 100);
    tc.batch_size = cfg.get_size("trainer.batch_size", 256);
    tc.seed = cfg.get_u64("trainer.seed", 0);
    tc.shuffle = cfg.get_bool("trainer.shuffle", true);
    tc.eval_every = cfg.get_size("trainer.eval_every", 0);
    tc.learning_rate = cfg.get_double("trainer.learning_rate", 1e-4);
    tc.grad_clip_norm = cfg.get_double("trainer.grad_clip_norm", 0.0);
    tc.objective = objective_config(cfg);
    tc.validate();
    cfg.note_default("trainer.epochs", std::to_string(tc.epochs));
    cfg.note_default("trainer.batch_size", std::to_string(tc.batch_size));
    cfg.note_default("trainer.seed", std::to_string(tc.seed));
    cfg.note_default("trainer.learning_rate", std::to_string(tc.learning_rate));
    return tc;
}

inline void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "epoch,recon_log_prob,class_log_prob,kl_term,mmd_term,total_objective,"
           "wall_seconds\n";
    for (const auto& rec : history.epochs)
        out << rec.epoch << "," << rec.mean_breakdown.recon_log_prob << ","
            << rec.mean_breakdown.class_log_prob << "," << rec.mean_breakdown.kl_term << ","
            << rec.mean_breakdown.mmd_term << "," << rec.mean_breakdown.total_objective
            << "," << rec.wall_seconds << "\n";
}

// Shared forward_test pass over a dataset so eval and generate agree exactly.
struct EvalOutputs {
    std::map<std::string, Tensor> generated; // full-dataset matrices
    Tensor class_scores;                     // rows x K
};

inline EvalOutputs run_forward_test(const CmmdModel& model, const Dataset& ds,
                                    std::uint64_t seed, std::size_t num_samples) {
    EvalOutputs out;
    std::size_t n = ds.manifest.rows;
    for (const auto& mod : model.partition.missing)
        out.generated[mod.name] = Tensor::zeros({n, mod.width});
    out.class_scores = Tensor::zeros({n, model.num_classes});

    auto batches = batch_indices(n, 512, false, 0);
    RngFactory factory(seed);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        MultiModalBatch batch = make_batch(ds, model.partition, batches[b]);
        Rng rng = factory.stream(9001, b);
        TestOutputs res = forward_test(model, batch.observed, rng, num_samples);
        for (std::size_t r = 0; r < batches[b].size(); ++r) {
            std::size_t row = batches[b][r];
            for (const auto& mod : model.partition.missing) {
                const Tensor& gen = res.generated.at(mod.name);
                for (std::size_t c = 0; c < mod.width; ++c)
                    out.generated[mod.name].at(row, c) = gen.at(r, c);
            }
            for (std::size_t c = 0; c < model.num_classes; ++c)
                out.class_scores.at(row, c) = res.class_probs.at(r, c);
        }
    }
    return out;
}

inline void check_partition_against_dataset(const CmmdModel& model, const Dataset& ds) {
    auto check = [&](const Modality& mod) {
        for (const auto& info : ds.manifest.modalities)
            if (info.name == mod.name) {
                if (info.width != mod.width)
                    throw std::runtime_error("checkpoint/dataset width mismatch for " +
                                             mod.name);
                return;
            }
        throw std::runtime_error("checkpoint modality " + mod.name +
                                 " not present in dataset");
    };
    for (const auto& mod : model.partition.observed) check(mod);
    for (const auto& mod : model.partition.missing) check(mod);
    if (ds.manifest.num_classes != model.num_classes)
        throw std::runtime_error("checkpoint/dataset class count mismatch");
}

struct EvalMetrics {
    std::optional<double> error;
    std::optional<double> map;
    std::map<std::string, double> rmse_by_modality;
};

inline EvalMetrics compute_eval_metrics(const CmmdModel& model, const Dataset& ds,
                                        const EvalOutputs& outputs) {
    EvalMetrics metrics;
    if (model.classifier_mode == CategoricalMode::independent_sigmoid) {
        metrics.map =
            mean_average_precision(outputs.class_scores, ds.labels).mean_average_precision;
    } else {
        std::vector<std::size_t> truth = predict_labels(ds.labels);
        metrics.error = error_rate(predict_labels(outputs.class_scores), truth);
    }
    for (const auto& mod : model.partition.missing)
        metrics.rmse_by_modality[mod.name] =
            rmse(outputs.generated.at(mod.name), ds.modality(mod.name));
    return metrics;
}

inline void write_eval_csv(const EvalMetrics& metrics, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "metric,target,value\n";
    if (metrics.error) out << "error_rate,labels," << *metrics.error << "\n";
    if (metrics.map) out << "map,labels," << *metrics.map << "\n";
    for (const auto& [name, v] : metrics.rmse_by_modality)
        out << "rmse," << name << "," << v << "\n";
}

} // namespace cli_detail

// ---- commands ------------------------------------------------------------

inline int cmd_synth(RunConfig cfg, const std::string& out_dir, std::ostream& log) {
    cli_detail::apply_env_seed(cfg, "synth.seed", log);
    SynthConfig sc = cli_detail::synth_config(cfg);
    bool standardize = cfg.get_bool("synth.standardize", false);
    cfg.reject_unknown();
    cli_detail::echo_config(cfg, out_dir);
    Dataset ds = gen_synth_multimodal(sc);
    if (standardize)
        for (const auto& mc : sc.modalities)
            if (mc.family == DecoderFamily::gaussian) standardize_modality(ds, mc.name);
    save_dataset(ds, out_dir);
    log << "synth: wrote " << ds.manifest.rows << " rows to " << out_dir << "\n";
    return 0;
}

struct TrainOptions {
    bool omega_sweep = false;
    std::string resume_checkpoint;
};

inline int cmd_train(RunConfig cfg, const std::string& data_dir, const std::string& out_dir,
                     const TrainOptions& opts, std::ostream& log) {
    cli_detail::apply_env_seed(cfg, "trainer.seed", log);
    Dataset train = load_dataset(data_dir);

    std::string stage = cfg.get_string("trainer.stage", "single");
    std::string unlabeled_dir = cfg.get_string("data.unlabeled", "");
    std::size_t stage1_epochs = cfg.get_size("trainer.stage1_epochs", 0);
    TrainConfig tc = cli_detail::train_config(cfg);
    CmmdModel model = cli_detail::build_model(cfg, train.manifest);
    cfg.reject_unknown();
    cli_detail::echo_config(cfg, out_dir);

    auto run_single = [&](CmmdModel m, TrainConfig c, const std::string& dir) {
        std::filesystem::create_directories(dir);
        AdamState state;
        std::size_t start_epoch = 0;
        if (!opts.resume_checkpoint.empty()) {
            Checkpoint ckpt = load_checkpoint(opts.resume_checkpoint);
            m = std::move(ckpt.model);
            state = std::move(ckpt.state);
            start_epoch = ckpt.epochs_done;
        } else {
            Rng init = RngFactory(c.seed).stream(11);
            init_model_params(m, init);
        }
        TrainHistory history =
            fit(m, train, c, &state, start_epoch, dir + "/abort.ckpt");
        save_checkpoint(m, state, c.epochs, dir + "/checkpoint.ckpt");
        cli_detail::write_history_csv(history, dir + "/metrics.csv");
        return std::make_pair(std::move(m), std::move(history));
    };

    if (opts.omega_sweep) {
        std::ofstream sweep(out_dir + "/sweep.csv");
        if (!sweep) throw std::runtime_error("cannot write sweep.csv");
        sweep.precision(17);
        sweep << "omega,final_total_objective,final_kl,final_mmd\n";
        for (int i = 0; i <= 10; ++i) {
            double omega = double(i) / 10.0;
            TrainConfig c = tc;
            c.objective.omega = omega;
            std::ostringstream dir;
            dir << out_dir << "/omega_" << std::fixed;
            dir.precision(1);
            dir << omega;
            auto [m, history] = run_single(model, c, dir.str());
            const auto& last = history.epochs.back().mean_breakdown;
            sweep << omega << "," << last.total_objective << "," << last.kl_term << ","
                  << last.mmd_term << "\n";
            log << "omega " << omega << ": total " << last.total_objective << "\n";
        }
        return 0;
    }

    if (stage == "two_stage") {
        if (unlabeled_dir.empty())
            throw ConfigError("two_stage training requires data.unlabeled");
        if (stage1_epochs == 0)
            throw ConfigError("two_stage training requires trainer.stage1_epochs");
        Dataset unlabeled = load_dataset(unlabeled_dir);
        Rng init = RngFactory(tc.seed).stream(11);
        init_model_params(model, init);
        TrainConfig cfg1 = tc;
        cfg1.epochs = stage1_epochs;
        AdamState state;
        TrainHistory history = two_stage_fit(model, unlabeled, train, cfg1, tc);
        save_checkpoint(model, state, tc.epochs, out_dir + "/checkpoint.ckpt");
        cli_detail::write_history_csv(history, out_dir + "/metrics.csv");
        log << "two-stage training complete\n";
        return 0;
    }
    if (stage != "single") throw ConfigError("trainer.stage must be single or two_stage");

    auto [m, history] = run_single(model, tc, out_dir);
    log << "training complete: final objective "
        << history.epochs.back().mean_breakdown.total_objective << "\n";
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& out_dir, std::uint64_t seed,
                    std::size_t num_samples, std::ostream& log) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Dataset ds = load_dataset(data_dir);
    cli_detail::check_partition_against_dataset(ckpt.model, ds);
    auto outputs = cli_detail::run_forward_test(ckpt.model, ds, seed, num_samples);
    auto metrics = cli_detail::compute_eval_metrics(ckpt.model, ds, outputs);
    std::filesystem::create_directories(out_dir);
    cli_detail::write_eval_csv(metrics, out_dir + "/metrics.csv");
    if (metrics.error) log << "error_rate " << *metrics.error << "\n";
    if (metrics.map) log << "map " << *metrics.map << "\n";
    for (const auto& [name, v] : metrics.rmse_by_modality)
        log << "rmse[" << name << "] " << v << "\n";
    return 0;
}

inline int cmd_generate(const std::string& checkpoint_path, const std::string& data_dir,
                        const std::string& out_dir, std::uint64_t seed,
                        std::size_t num_samples, std::ostream& log) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Dataset ds = load_dataset(data_dir);
    cli_detail::check_partition_against_dataset(ckpt.model, ds);
    auto outputs = cli_detail::run_forward_test(ckpt.model, ds, seed, num_samples);
    std::filesystem::create_directories(out_dir);
    for (const auto& [name, matrix] : outputs.generated) {
        save_matrix(matrix, out_dir + "/" + name + "_generated.cmmdmat");
        log << "wrote " << name << "_generated.cmmdmat (" << matrix.rows() << " rows)\n";
    }
    return 0;
}

inline int cmd_collapse(const std::string& checkpoint_path, const std::string& data_dir,
                        const std::string& out_dir, const CollapseConfig& ccfg,
                        std::uint64_t seed, std::ostream& log) {
    ccfg.validate();
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Dataset ds = load_dataset(data_dir);
    cli_detail::check_partition_against_dataset(ckpt.model, ds);
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/collapse.csv");
    if (!out) throw std::runtime_error("cannot write collapse.csv");
    out.precision(17);
    out << "pairing,epsilon,fraction\n";
    Rng rng(seed);
    for (CollapsePairing pairing : ccfg.pairings) {
        Tensor matrix = per_dim_kl_matrix(ckpt.model, ds, pairing, rng);
        CollapseCurve curve = collapse_curve(matrix, pairing, ccfg);
        for (std::size_t i = 0; i < curve.epsilon.size(); ++i)
            out << to_string(pairing) << "," << curve.epsilon[i] << ","
                << curve.collapsed_fraction[i] << "\n";
        log << to_string(pairing) << ": fraction at max epsilon "
            << curve.collapsed_fraction.back() << "\n";
    }
    return 0;
}

inline int cmd_gradcheck(RunConfig cfg, std::ostream& log) {
    cli_detail::apply_env_seed(cfg, "trainer.seed", log);
    std::uint64_t seed = cfg.get_u64("trainer.seed", 0);
    double tol = cfg.get_double("gradcheck.tolerance", 1e-4);
    double h = cfg.get_double("gradcheck.step", 1e-5);
    cfg.reject_unknown();

    // small fixed architecture covering both decoder families
    CmmdModel model;
    model.partition.observed = {{"viewA", 3, DecoderFamily::gaussian}};
    model.partition.missing = {{"viewB", 3, DecoderFamily::gaussian},
                               {"viewC", 2, DecoderFamily::bernoulli}};
    model.latent_dim = 2;
    model.num_classes = 2;
    model.encoder_spec = gaussian_head_spec({5}, 3 + 5 + 2, 2, 0.2);
    model.prior_spec = gaussian_head_spec({4}, 3, 2, 0.2);
    model.classifier_spec = logits_head_spec({4}, 2, 2, 0.2);
    model.decoder_specs = {gaussian_head_spec({5}, 3 + 2, 3, 0.2),
                           logits_head_spec({5}, 3 + 2, 2, 0.2)};
    Rng init = RngFactory(seed).stream(11);
    init_model_params(model, init);

    // seeded 4-point batch
    Rng data_rng = RngFactory(seed).stream(12);
    MultiModalBatch batch;
    auto rand_matrix = [&](std::size_t rows, std::size_t cols, bool binary) {
        Tensor t = Tensor::zeros({rows, cols});
        for (auto& v : t.values)
            v = binary ? double(data_rng.uniform() < 0.5) : data_rng.normal();
        return t;
    };
    batch.observed = {rand_matrix(4, 3, false)};
    batch.missing = {rand_matrix(4, 3, false), rand_matrix(4, 2, true)};
    batch.labels = Tensor::zeros({4, 2});
    for (std::size_t r = 0; r < 4; ++r) batch.labels.at(r, data_rng.integer(2)) = 1.0;

    ObjectiveConfig oc;
    oc.omega = 0.5;
    GradCheckReport report = grad_check_objective(model, batch, oc, seed + 77, h);
    log << "gradcheck: worst relative error per parameter group\n";
    for (const auto& [path, err] : report.worst_by_group)
        log << "  " << path << "  " << err << "\n";
    log << "max relative error: " << report.max_relative_error << " (tolerance " << tol
        << ")\n";
    return report.passed(tol) ? 0 : 1;
}

} // namespace cmmd
