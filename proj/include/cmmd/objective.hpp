#pragma once

#include <cmath>
#include <vector>

#include "mmd.hpp"
#include "model.hpp"

namespace cmmd {

struct ObjectiveConfig {
    double omega = 0.5;  // 1.0 recovers the plain variational lower bound
    double alpha = 10.0;
    double lambda = 1000.0;
    KernelConfig kernel;
    MmdEstimator estimator = MmdEstimator::u_statistic;
    // unsupervised pre-training: zero the encoder's label input and skip the
    // classification term (the label-input weights and the classifier then
    // receive exactly zero gradient)
    bool drop_labels = false;

    void validate() const {
        if (omega < 0.0 || omega > 1.0)
            throw std::invalid_argument("objective: omega must be in [0,1]");
        if (alpha <= 0.0) throw std::invalid_argument("objective: alpha must be positive");
        if (lambda <= 0.0) throw std::invalid_argument("objective: lambda must be positive");
        kernel.validate();
    }
};

// The objective is maximized: total = recon + alpha*class - omega*kl
// - (1-omega)*lambda*mmd. The trainer minimizes its negation.
struct ObjectiveBreakdown {
    double recon_log_prob = 0.0;
    double class_log_prob = 0.0;
    double kl_term = 0.0;
    double mmd_term = 0.0;
    double total_objective = 0.0;
};

struct ObjectiveVars {
    ObjectiveBreakdown values;
    Var total; // differentiable scalar
    ForwardOutputs forward;
};

// One marginal-posterior sample per row: resample (x_M, y) uniformly from the
// batch, keep the row's own x_O, encode and draw z.
inline Var marginal_q_samples(Tape& tape, const CmmdModel& model, const BoundParams& bound,
                              const MultiModalBatch& batch, Rng& rng,
                              bool train_mode = true) {
    std::size_t n = batch.size();
    if (n < 2) throw std::invalid_argument("marginal_q_samples: batch size >= 2 required");
    Rng idx_rng = rng.derive(301);
    std::vector<Tensor> x_mis_resampled;
    Tensor y_resampled = Tensor::zeros(batch.labels.shape);
    std::vector<std::size_t> idx(n);
    for (std::size_t r = 0; r < n; ++r) idx[r] = idx_rng.integer(n);
    for (const auto& xm : batch.missing) {
        Tensor t = Tensor::zeros(xm.shape);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < xm.cols(); ++c) t.at(r, c) = xm.at(idx[r], c);
        x_mis_resampled.push_back(std::move(t));
    }
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < batch.labels.cols(); ++c)
            y_resampled.at(r, c) = batch.labels.at(idx[r], c);

    Rng enc_rng = rng.derive(302);
    GaussianParams q = encode(tape, model, bound, batch.observed, x_mis_resampled,
                              y_resampled, train_mode, enc_rng);
    Rng noise_rng = rng.derive(303);
    Tensor noise =
        model_detail::standard_normal_noise(n, model.latent_dim, noise_rng);
    return reparam_sample(tape, q, tape.leaf(noise));
}

inline ObjectiveVars cmmd_loss(Tape& tape, const CmmdModel& model, const BoundParams& bound,
                               const MultiModalBatch& batch, const ObjectiveConfig& cfg,
                               Rng& rng) {
    cfg.validate();
    if (batch.size() < 2)
        throw std::invalid_argument("cmmd_loss: batch size >= 2 required");

    ObjectiveVars result;
    const MultiModalBatch* effective = &batch;
    MultiModalBatch unlabeled;
    if (cfg.drop_labels) {
        unlabeled = batch;
        for (auto& v : unlabeled.labels.values) v = 0.0;
        effective = &unlabeled;
    }
    Rng fwd_rng = rng.derive(401);
    result.forward = forward_train(tape, model, bound, *effective, fwd_rng);
    const ForwardOutputs& fwd = result.forward;

    // reconstruction: mean over batch of summed per-modality log-likelihoods
    Var recon{};
    for (std::size_t i = 0; i < fwd.decoder_params.size(); ++i) {
        const DecoderOutput& d = fwd.decoder_params[i];
        Var lp = d.family == DecoderFamily::gaussian
                     ? gaussian_log_prob(tape, d.gaussian, tape.leaf(batch.missing[i]))
                     : bernoulli_log_prob(tape, d.bernoulli, tape.leaf(batch.missing[i]));
        recon = recon.valid() ? tape.add(recon, lp) : lp;
    }
    if (!recon.valid()) recon = tape.leaf(Tensor::zeros({batch.size()}));
    Var recon_mean = tape.mean_all(recon);

    Var class_mean =
        cfg.drop_labels
            ? tape.leaf(Tensor::scalar(0.0))
            : tape.mean_all(
                  categorical_log_prob(tape, fwd.class_params, tape.leaf(batch.labels)));

    Var kl_mean = tape.mean_all(gaussian_kl(tape, fwd.q_params, fwd.prior_params).total);

    Rng mq_rng = rng.derive(402);
    Var q_marginal = marginal_q_samples(tape, model, bound, *effective, mq_rng, true);
    Var mmd = mmd_sq(tape, q_marginal, fwd.z_p, cfg.kernel, cfg.estimator);

    Var total = tape.add(
        tape.sub(tape.add(recon_mean, tape.scale(class_mean, cfg.alpha)),
                 tape.scale(kl_mean, cfg.omega)),
        tape.scale(mmd, -(1.0 - cfg.omega) * cfg.lambda));

    result.total = total;
    result.values.recon_log_prob = tape.value(recon_mean)[0];
    result.values.class_log_prob = tape.value(class_mean)[0];
    result.values.kl_term = tape.value(kl_mean)[0];
    result.values.mmd_term = tape.value(mmd)[0];
    result.values.total_objective = tape.value(total)[0];
    if (!std::isfinite(result.values.total_objective))
        throw std::runtime_error(
            "cmmd_loss: non-finite total (recon=" + std::to_string(result.values.recon_log_prob) +
            " class=" + std::to_string(result.values.class_log_prob) +
            " kl=" + std::to_string(result.values.kl_term) +
            " mmd=" + std::to_string(result.values.mmd_term) + ")");
    return result;
}

// Plain variational lower bound: cmmd_loss at omega = 1 (the MMD estimate is
// still reported but carries zero weight).
inline ObjectiveVars elbo(Tape& tape, const CmmdModel& model, const BoundParams& bound,
                          const MultiModalBatch& batch, const ObjectiveConfig& cfg,
                          Rng& rng) {
    ObjectiveConfig ecfg = cfg;
    ecfg.omega = 1.0;
    return cmmd_loss(tape, model, bound, batch, ecfg, rng);
}

struct MiReport {
    double avg_kl = 0.0;
    double marginal_kl_estimate = 0.0;
    double mi_estimate = 0.0; // avg_kl - marginal_kl_estimate
    double mc_standard_error = 0.0;
    bool holds = true; // avg_kl >= mi_estimate - 3*SE
};

namespace objective_detail {

inline double gaussian_log_density_row(const Tensor& mean, const Tensor& log_var,
                                       std::size_t row, const std::vector<double>& z) {
    double lp = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
        double m = mean.at(row, c), lv = log_var.at(row, c);
        double diff = z[c] - m;
        lp += -0.5 * (kLogTwoPi + lv + diff * diff * std::exp(-lv));
    }
    return lp;
}

inline double logsumexp(const std::vector<double>& xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

} // namespace objective_detail

// Monte-Carlo decomposition of the average KL into the marginal KL plus the
// conditional mutual information: MI = E[KL(q||p)] - E[KL(q(z|x_O)||p(z|x_O))],
// where q(z|x_O) is the empirical mixture over resampled (x_M, y) tuples.
inline MiReport mi_decomposition(const CmmdModel& model,
                                 const std::vector<MultiModalBatch>& dataset_rows,
                                 Rng& rng, std::size_t n_mc) {
    if (dataset_rows.empty()) throw std::invalid_argument("mi_decomposition: empty dataset");
    if (n_mc < 1) throw std::invalid_argument("mi_decomposition: n_mc >= 1");
    std::size_t n = dataset_rows.size();

    Tape tape;
    BoundParams bound = bind(tape, model.params);

    // Assemble a full-dataset batch (one row each).
    MultiModalBatch all;
    all.observed.resize(model.partition.observed.size());
    all.missing.resize(model.partition.missing.size());
    for (std::size_t m = 0; m < all.observed.size(); ++m) {
        std::size_t w = model.partition.observed[m].width;
        all.observed[m] = Tensor::zeros({n, w});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c)
                all.observed[m].at(r, c) = dataset_rows[r].observed[m].at(0, c);
    }
    for (std::size_t m = 0; m < all.missing.size(); ++m) {
        std::size_t w = model.partition.missing[m].width;
        all.missing[m] = Tensor::zeros({n, w});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c)
                all.missing[m].at(r, c) = dataset_rows[r].missing[m].at(0, c);
    }
    all.labels = Tensor::zeros({n, model.num_classes});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < model.num_classes; ++c)
            all.labels.at(r, c) = dataset_rows[r].labels.at(0, c);

    Rng eval_rng = rng.derive(501);
    GaussianParams q = encode(tape, model, bound, all.observed, all.missing, all.labels,
                              false, eval_rng);
    GaussianParams p = prior(tape, model, bound, all.observed, false, eval_rng);
    const Tensor& qm = tape.value(q.mean);
    const Tensor& qlv = tape.value(q.log_var);
    const Tensor& pm = tape.value(p.mean);
    const Tensor& plv = tape.value(p.log_var);

    // avg term-by-term KL (closed form)
    double avg_kl = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < model.latent_dim; ++c) {
            double dl = qlv.at(r, c) - plv.at(r, c);
            double diff = qm.at(r, c) - pm.at(r, c);
            avg_kl += 0.5 * (std::exp(dl) + diff * diff * std::exp(-plv.at(r, c)) - 1.0 - dl);
        }
    avg_kl /= double(n);

    // Monte-Carlo marginal KL: for each row, draw z from the mixture
    // q(z|x_O) = 1/n_mc sum_k q(z|x_O, x_M^k, y^k) and evaluate the log ratio
    // against the prior using the same mixture components.
    Rng mc_rng = rng.derive(502);
    std::vector<double> per_row(n);
    for (std::size_t r = 0; r < n; ++r) {
        // encoder params for n_mc resampled tuples sharing row r's x_O
        std::vector<Tensor> x_obs_rep(all.observed.size());
        for (std::size_t m = 0; m < all.observed.size(); ++m) {
            std::size_t w = all.observed[m].cols();
            x_obs_rep[m] = Tensor::zeros({n_mc, w});
            for (std::size_t k = 0; k < n_mc; ++k)
                for (std::size_t c = 0; c < w; ++c)
                    x_obs_rep[m].at(k, c) = all.observed[m].at(r, c);
        }
        std::vector<std::size_t> comp_idx(n_mc);
        for (std::size_t k = 0; k < n_mc; ++k) comp_idx[k] = mc_rng.integer(n);
        std::vector<Tensor> x_mis_rep(all.missing.size());
        for (std::size_t m = 0; m < all.missing.size(); ++m) {
            std::size_t w = all.missing[m].cols();
            x_mis_rep[m] = Tensor::zeros({n_mc, w});
            for (std::size_t k = 0; k < n_mc; ++k)
                for (std::size_t c = 0; c < w; ++c)
                    x_mis_rep[m].at(k, c) = all.missing[m].at(comp_idx[k], c);
        }
        Tensor y_rep = Tensor::zeros({n_mc, model.num_classes});
        for (std::size_t k = 0; k < n_mc; ++k)
            for (std::size_t c = 0; c < model.num_classes; ++c)
                y_rep.at(k, c) = all.labels.at(comp_idx[k], c);

        Tape mix_tape;
        BoundParams mix_bound = bind(mix_tape, model.params);
        Rng enc_rng = rng.derive(503);
        GaussianParams comp = encode(mix_tape, model, mix_bound, x_obs_rep, x_mis_rep,
                                     y_rep, false, enc_rng);
        const Tensor& cm = mix_tape.value(comp.mean);
        const Tensor& clv = mix_tape.value(comp.log_var);

        // draw z from a uniformly chosen mixture component
        std::size_t pick = mc_rng.integer(n_mc);
        std::vector<double> z(model.latent_dim);
        for (std::size_t c = 0; c < model.latent_dim; ++c)
            z[c] = cm.at(pick, c) +
                   std::exp(0.5 * clv.at(pick, c)) * mc_rng.normal();

        std::vector<double> comp_lp(n_mc);
        for (std::size_t k = 0; k < n_mc; ++k)
            comp_lp[k] = objective_detail::gaussian_log_density_row(cm, clv, k, z);
        double log_mix =
            objective_detail::logsumexp(comp_lp) - std::log(double(n_mc));
        double log_prior = 0.0;
        for (std::size_t c = 0; c < model.latent_dim; ++c) {
            double m = pm.at(r, c), lv = plv.at(r, c);
            double diff = z[c] - m;
            log_prior += -0.5 * (kLogTwoPi + lv + diff * diff * std::exp(-lv));
        }
        per_row[r] = log_mix - log_prior;
    }

    double marginal_kl = 0.0;
    for (double v : per_row) marginal_kl += v;
    marginal_kl /= double(n);
    double var = 0.0;
    for (double v : per_row) var += (v - marginal_kl) * (v - marginal_kl);
    var = n > 1 ? var / double(n - 1) : 0.0;

    MiReport report;
    report.avg_kl = avg_kl;
    report.marginal_kl_estimate = marginal_kl;
    report.mi_estimate = avg_kl - marginal_kl;
    report.mc_standard_error = std::sqrt(var / double(n));
    report.holds = avg_kl >= report.mi_estimate - 3.0 * report.mc_standard_error;
    return report;
}

inline MiReport mi_upper_bound_check(const CmmdModel& model,
                                     const std::vector<MultiModalBatch>& dataset_rows,
                                     Rng& rng, std::size_t n_mc = 64) {
    return mi_decomposition(model, dataset_rows, rng, n_mc);
}

} // namespace cmmd
