#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace cmmd {

enum class CollapsePairing { q_vs_prior, prior_vs_std, q_vs_std, priorO_vs_qM };

inline std::string to_string(CollapsePairing p) {
    switch (p) {
        case CollapsePairing::q_vs_prior: return "q_vs_prior";
        case CollapsePairing::prior_vs_std: return "prior_vs_std";
        case CollapsePairing::q_vs_std: return "q_vs_std";
        case CollapsePairing::priorO_vs_qM: return "priorO_vs_qM";
    }
    return "?";
}

inline CollapsePairing collapse_pairing_from_string(const std::string& s) {
    if (s == "q_vs_prior") return CollapsePairing::q_vs_prior;
    if (s == "prior_vs_std") return CollapsePairing::prior_vs_std;
    if (s == "q_vs_std") return CollapsePairing::q_vs_std;
    if (s == "priorO_vs_qM") return CollapsePairing::priorO_vs_qM;
    throw std::invalid_argument("unknown collapse pairing: " + s);
}

struct CollapseConfig {
    double delta = 0.01;
    std::vector<double> epsilon_grid; // default: 61 points on [0, 6]
    std::vector<CollapsePairing> pairings = {CollapsePairing::q_vs_prior,
                                             CollapsePairing::prior_vs_std};

    CollapseConfig() {
        epsilon_grid.resize(61);
        for (std::size_t i = 0; i < 61; ++i) epsilon_grid[i] = 6.0 * double(i) / 60.0;
    }

    void validate() const {
        if (delta <= 0.0 || delta >= 1.0)
            throw std::invalid_argument("collapse: delta in (0,1)");
        if (epsilon_grid.empty())
            throw std::invalid_argument("collapse: empty epsilon grid");
        for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
            if (epsilon_grid[i] < 0.0)
                throw std::invalid_argument("collapse: negative epsilon");
            if (i > 0 && epsilon_grid[i] <= epsilon_grid[i - 1])
                throw std::invalid_argument("collapse: grid must be strictly increasing");
        }
    }
};

struct CollapseCurve {
    CollapsePairing pairing;
    std::vector<double> epsilon;
    std::vector<double> collapsed_fraction;
};

struct CollapseReport {
    std::vector<CollapseCurve> curves;
};

namespace diag_detail {

inline double kl_1d(double mq, double lq, double mp, double lp) {
    double dl = lq - lp;
    double diff = mq - mp;
    return 0.5 * (std::exp(dl) + diff * diff * std::exp(-lp) - 1.0 - dl);
}

} // namespace diag_detail

// Per-datapoint, per-dimension analytic KL for the requested pairing.
// priorO_vs_qM is a proxy: KL between p(z|x_O) and the encoder evaluated with
// the observed and label blocks zeroed, keeping only x_M.
inline Tensor per_dim_kl_matrix(const CmmdModel& model, const Dataset& dataset,
                                CollapsePairing pairing, Rng& rng) {
    model.validate();
    dataset.validate();
    std::size_t n = dataset.manifest.rows;

    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    MultiModalBatch batch = make_batch(dataset, model.partition, all_rows);

    bool needs_labels =
        pairing == CollapsePairing::q_vs_prior || pairing == CollapsePairing::q_vs_std;
    if (needs_labels && batch.labels.size() == 0)
        throw std::invalid_argument("per_dim_kl_matrix: pairing needs labels");

    Tape tape;
    BoundParams bound = bind(tape, model.params);
    Rng eval_rng = rng.derive(601);

    auto zeros_like = [&](std::size_t cols) { return Tensor::zeros({n, cols}); };

    GaussianParams left, right;
    switch (pairing) {
        case CollapsePairing::q_vs_prior:
            left = encode(tape, model, bound, batch.observed, batch.missing, batch.labels,
                          false, eval_rng);
            right = prior(tape, model, bound, batch.observed, false, eval_rng);
            break;
        case CollapsePairing::prior_vs_std: {
            left = prior(tape, model, bound, batch.observed, false, eval_rng);
            right = {tape.leaf(zeros_like(model.latent_dim)),
                     tape.leaf(zeros_like(model.latent_dim))};
            break;
        }
        case CollapsePairing::q_vs_std: {
            left = encode(tape, model, bound, batch.observed, batch.missing, batch.labels,
                          false, eval_rng);
            right = {tape.leaf(zeros_like(model.latent_dim)),
                     tape.leaf(zeros_like(model.latent_dim))};
            break;
        }
        case CollapsePairing::priorO_vs_qM: {
            left = prior(tape, model, bound, batch.observed, false, eval_rng);
            std::vector<Tensor> zero_obs;
            for (const auto& mod : model.partition.observed)
                zero_obs.push_back(zeros_like(mod.width));
            Tensor zero_labels = zeros_like(model.num_classes);
            right = encode(tape, model, bound, zero_obs, batch.missing, zero_labels,
                           false, eval_rng);
            break;
        }
    }

    const Tensor& lm = tape.value(left.mean);
    const Tensor& llv = tape.value(left.log_var);
    const Tensor& rm = tape.value(right.mean);
    const Tensor& rlv = tape.value(right.log_var);
    Tensor out = Tensor::zeros({n, model.latent_dim});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < model.latent_dim; ++c)
            out.at(r, c) =
                diag_detail::kl_1d(lm.at(r, c), llv.at(r, c), rm.at(r, c), rlv.at(r, c));
    return out;
}

// Fraction of dimensions i with #{n : matrix[n,i] < eps} >= (1-delta)*N.
inline double collapse_fraction(const Tensor& matrix, double eps, double delta) {
    if (matrix.rank() != 2 || matrix.size() == 0)
        throw std::invalid_argument("collapse_fraction: nonempty rank-2 matrix required");
    if (eps < 0.0) throw std::invalid_argument("collapse_fraction: eps >= 0");
    if (delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("collapse_fraction: delta in (0,1)");
    std::size_t n = matrix.rows(), d = matrix.cols();
    double threshold = (1.0 - delta) * double(n);
    std::size_t collapsed = 0;
    for (std::size_t i = 0; i < d; ++i) {
        std::size_t within = 0;
        for (std::size_t r = 0; r < n; ++r)
            if (matrix.at(r, i) < eps) ++within;
        if (double(within) >= threshold) ++collapsed;
    }
    return double(collapsed) / double(d);
}

inline CollapseCurve collapse_curve(const Tensor& matrix, CollapsePairing pairing,
                                    const CollapseConfig& cfg) {
    cfg.validate();
    CollapseCurve curve;
    curve.pairing = pairing;
    curve.epsilon = cfg.epsilon_grid;
    for (double eps : cfg.epsilon_grid)
        curve.collapsed_fraction.push_back(collapse_fraction(matrix, eps, cfg.delta));
    return curve;
}

// Same counting rule applied to raw decoder variances instead of KLs.
inline CollapseCurve variance_collapse(const Tensor& variances,
                                       const std::vector<double>& eps_grid,
                                       double delta = 0.01) {
    if (variances.rank() != 2 || variances.size() == 0)
        throw std::invalid_argument("variance_collapse: nonempty rank-2 matrix required");
    for (double v : variances.values)
        if (v <= 0.0) throw std::invalid_argument("variance_collapse: non-positive variance");
    CollapseCurve curve;
    curve.pairing = CollapsePairing::q_vs_prior; // unused tag
    curve.epsilon = eps_grid;
    for (double eps : eps_grid)
        curve.collapsed_fraction.push_back(collapse_fraction(variances, eps, delta));
    return curve;
}

// ---- task metrics --------------------------------------------------------

// Argmax ties break toward the lowest class index.
inline std::vector<std::size_t> predict_labels(const Tensor& scores) {
    if (scores.rank() != 2) throw std::invalid_argument("predict: rank-2 scores required");
    std::vector<std::size_t> out(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < scores.cols(); ++c)
            if (scores.at(r, c) > scores.at(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

inline double error_rate(const std::vector<std::size_t>& predicted,
                         const std::vector<std::size_t>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("error_rate: length mismatch");
    if (predicted.empty()) throw std::invalid_argument("error_rate: empty input");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] != truth[i]) ++wrong;
    return double(wrong) / double(predicted.size());
}

inline double rmse(const Tensor& generated, const Tensor& truth) {
    require_same_shape("rmse", generated, truth);
    if (generated.size() == 0) throw std::invalid_argument("rmse: empty input");
    double sq = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        double d = generated[i] - truth[i];
        sq += d * d;
    }
    return std::sqrt(sq / double(generated.size()));
}

struct MapResult {
    double mean_average_precision = 0.0;
    std::vector<std::size_t> skipped_classes; // no positives in the eval set
};

// Per class: rank datapoints by score descending (ties by datapoint index),
// AP = mean of precision-at-rank over positive positions.
inline MapResult mean_average_precision(const Tensor& scores, const Tensor& labels) {
    require_same_shape("mAP", scores, labels);
    if (scores.rank() != 2) throw std::invalid_argument("mAP: rank-2 required");
    std::size_t n = scores.rows(), k = scores.cols();
    MapResult result;
    double sum_ap = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t positives = 0;
        for (std::size_t r = 0; r < n; ++r)
            if (labels.at(r, c) != 0.0) ++positives;
        if (positives == 0) {
            result.skipped_classes.push_back(c);
            continue;
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores.at(a, c) > scores.at(b, c);
        });
        double ap = 0.0;
        std::size_t hits = 0;
        for (std::size_t rank = 0; rank < n; ++rank) {
            if (labels.at(order[rank], c) != 0.0) {
                ++hits;
                ap += double(hits) / double(rank + 1);
            }
        }
        sum_ap += ap / double(positives);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("mAP: no positives in any class");
    result.mean_average_precision = sum_ap / double(used);
    return result;
}

} // namespace cmmd
