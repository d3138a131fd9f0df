#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "autograd.hpp"
#include "tensor.hpp"

namespace cmmd {

enum class BandwidthPolicy { fixed, latent_dim, median_heuristic };
enum class MmdEstimator { u_statistic, v_statistic };

struct KernelConfig {
    BandwidthPolicy bandwidth_policy = BandwidthPolicy::latent_dim;
    double fixed_sigma_sq = 1.0; // used when policy == fixed
    std::vector<double> scales = {1.0};

    void validate() const {
        if (scales.empty()) throw std::invalid_argument("kernel: need at least one scale");
        for (double s : scales)
            if (s <= 0.0) throw std::invalid_argument("kernel: non-positive scale");
        if (bandwidth_policy == BandwidthPolicy::fixed && fixed_sigma_sq <= 0.0)
            throw std::invalid_argument("kernel: non-positive bandwidth");
    }
};

namespace mmd_detail {

inline double median_pairwise_sq_dist(const Tensor& a, const Tensor& b) {
    std::vector<double> d;
    d.reserve(a.rows() * b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) {
                double diff = a.at(i, c) - b.at(j, c);
                s += diff * diff;
            }
            d.push_back(s);
        }
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    double med = d[d.size() / 2];
    return med > 0.0 ? med : 1.0;
}

inline double resolve_sigma_sq(const KernelConfig& cfg, std::size_t dim,
                               const Tensor* a = nullptr, const Tensor* b = nullptr) {
    cfg.validate();
    switch (cfg.bandwidth_policy) {
        case BandwidthPolicy::fixed: return cfg.fixed_sigma_sq;
        case BandwidthPolicy::latent_dim: return double(dim);
        case BandwidthPolicy::median_heuristic:
            if (!a || !b)
                throw std::invalid_argument("kernel: median heuristic needs sample sets");
            return 0.5 * median_pairwise_sq_dist(*a, *b);
    }
    throw std::logic_error("kernel: bad policy");
}

// |a_i - b_j|^2 as n x m matrix via row norms and one cross product
inline Var pairwise_sq_dists(Tape& tape, Var a, Var b) {
    std::size_t n = tape.value(a).rows();
    std::size_t m = tape.value(b).rows();
    Var a_sq = tape.reshape(tape.sum_last(tape.square(a)), {n, 1});
    Var b_sq = tape.reshape(tape.sum_last(tape.square(b)), {1, m});
    Var cross = tape.matmul(a, tape.transpose(b));
    Var ones_m = tape.leaf(Tensor::full({1, m}, 1.0));
    Var ones_n = tape.leaf(Tensor::full({n, 1}, 1.0));
    Var d = tape.add(tape.sub(tape.matmul(a_sq, ones_m), tape.scale(cross, 2.0)),
                     tape.matmul(ones_n, b_sq));
    // analytic distances are nonnegative; zero out fp noise below 0
    return tape.clamp(d, 0.0, std::numeric_limits<double>::infinity());
}

// mean over scales of exp(-d / (2 sigma^2 scale)), applied elementwise
inline Var kernel_from_dists(Tape& tape, Var dists, double sigma_sq,
                             const std::vector<double>& scales) {
    Var acc{};
    for (double s : scales) {
        Var k = tape.exp_(tape.scale(dists, -1.0 / (2.0 * sigma_sq * s)));
        acc = acc.valid() ? tape.add(acc, k) : k;
    }
    return tape.scale(acc, 1.0 / double(scales.size()));
}

} // namespace mmd_detail

// k(a, b) for two single points (rank-1 tensors)
inline double gaussian_kernel(const Tensor& a, const Tensor& b, const KernelConfig& cfg) {
    if (a.shape != b.shape || a.rank() != 1)
        throw std::invalid_argument("gaussian_kernel: rank-1 equal shapes required");
    double sigma_sq = mmd_detail::resolve_sigma_sq(cfg, a.shape[0]);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        d += diff * diff;
    }
    double acc = 0.0;
    for (double s : cfg.scales) acc += std::exp(-d / (2.0 * sigma_sq * s));
    return acc / double(cfg.scales.size());
}

// Squared MMD between two sample sets (rows are samples). u_statistic skips
// diagonal terms in the within-set averages; v_statistic keeps them.
inline Var mmd_sq(Tape& tape, Var samples_a, Var samples_b, const KernelConfig& cfg,
                  MmdEstimator estimator = MmdEstimator::u_statistic) {
    const Tensor& ta = tape.value(samples_a);
    const Tensor& tb = tape.value(samples_b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
        throw std::invalid_argument("mmd_sq: rank-2 sets with equal dims required");
    // canonical argument order: the estimator is symmetric in the sets, so
    // computing in a content-determined order makes mmd(A,B) == mmd(B,A)
    // bit-exact
    if (std::lexicographical_compare(tb.values.begin(), tb.values.end(),
                                     ta.values.begin(), ta.values.end()))
        std::swap(samples_a, samples_b);
    // canonical row order within each set: permutation-equal multisets then
    // produce identical kernel matrices, so v-stat on identical multisets is
    // exactly zero
    auto sort_rows = [&tape](Var v) {
        const Tensor& x = tape.value(v);
        std::vector<std::size_t> order(x.rows());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
                if (x.at(i, c) < x.at(j, c)) return true;
                if (x.at(i, c) > x.at(j, c)) return false;
            }
            return false;
        });
        return tape.gather_rows(v, std::move(order));
    };
    samples_a = sort_rows(samples_a);
    samples_b = sort_rows(samples_b);
    const Tensor& sa = tape.value(samples_a);
    const Tensor& sb = tape.value(samples_b);
    std::size_t n = sa.rows(), m = sb.rows();
    if (estimator == MmdEstimator::u_statistic && (n < 2 || m < 2))
        throw std::invalid_argument("mmd_sq: u-statistic needs at least 2 samples per set");
    if (n < 1 || m < 1) throw std::invalid_argument("mmd_sq: empty sample set");

    double sigma_sq = mmd_detail::resolve_sigma_sq(cfg, sa.cols(), &sa, &sb);

    Var k_aa = mmd_detail::kernel_from_dists(
        tape, mmd_detail::pairwise_sq_dists(tape, samples_a, samples_a), sigma_sq, cfg.scales);
    Var k_bb = mmd_detail::kernel_from_dists(
        tape, mmd_detail::pairwise_sq_dists(tape, samples_b, samples_b), sigma_sq, cfg.scales);
    Var k_ab = mmd_detail::kernel_from_dists(
        tape, mmd_detail::pairwise_sq_dists(tape, samples_a, samples_b), sigma_sq, cfg.scales);

    Var term_aa, term_bb;
    if (estimator == MmdEstimator::u_statistic) {
        Tensor mask_a = Tensor::full({n, n}, 1.0);
        for (std::size_t i = 0; i < n; ++i) mask_a.at(i, i) = 0.0;
        Tensor mask_b = Tensor::full({m, m}, 1.0);
        for (std::size_t i = 0; i < m; ++i) mask_b.at(i, i) = 0.0;
        term_aa = tape.scale(tape.sum_all(tape.mul(k_aa, tape.leaf(mask_a))),
                             1.0 / double(n * (n - 1)));
        term_bb = tape.scale(tape.sum_all(tape.mul(k_bb, tape.leaf(mask_b))),
                             1.0 / double(m * (m - 1)));
    } else {
        term_aa = tape.mean_all(k_aa);
        term_bb = tape.mean_all(k_bb);
    }
    Var term_ab = tape.mean_all(k_ab);
    return tape.add(tape.sub(term_aa, tape.scale(term_ab, 2.0)), term_bb);
}

// Tape-free convenience for diagnostics and tests.
inline double mmd_sq_value(const Tensor& a, const Tensor& b, const KernelConfig& cfg,
                           MmdEstimator estimator = MmdEstimator::u_statistic) {
    Tape tape;
    return tape.value(mmd_sq(tape, tape.leaf(a), tape.leaf(b), cfg, estimator))[0];
}

} // namespace cmmd
