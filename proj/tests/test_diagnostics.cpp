#include <catch2/catch_amalgamated.hpp>

#include <cmmd/diagnostics.hpp>

using namespace cmmd;

namespace {

CmmdModel tiny_model(std::uint64_t seed, PriorMode prior_mode = PriorMode::conditional) {
    CmmdModel model;
    model.partition.observed = {{"viewA", 4, DecoderFamily::gaussian}};
    model.partition.missing = {{"viewB", 3, DecoderFamily::gaussian}};
    model.latent_dim = 3;
    model.num_classes = 2;
    model.prior_mode = prior_mode;
    model.encoder_spec = gaussian_head_spec({6}, 4 + 3 + 2, 3, 0.0);
    model.prior_spec = gaussian_head_spec({6}, 4, 3, 0.0);
    model.classifier_spec = logits_head_spec({4}, 3, 2, 0.0);
    model.decoder_specs = {gaussian_head_spec({6}, 4 + 3, 3, 0.0)};
    Rng init = RngFactory(seed).stream(11);
    init_model_params(model, init);
    return model;
}

Dataset tiny_dataset(std::uint64_t seed, std::size_t rows = 64) {
    SynthConfig sc;
    sc.rows = rows;
    sc.num_classes = 2;
    sc.latent_dim = 3;
    sc.seed = seed;
    sc.modalities = {{"viewA", 4, 1, 0.2, DecoderFamily::gaussian},
                     {"viewB", 3, 1, 0.2, DecoderFamily::gaussian}};
    return gen_synth_multimodal(sc);
}

} // namespace

TEST_CASE("collapse_fraction matches direct counting on random matrices") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 4 + rng.integer(50), d = 1 + rng.integer(8);
        Tensor m = Tensor::zeros({n, d});
        for (auto& v : m.values) v = rng.uniform(0.0, 2.0);
        double eps = rng.uniform(0.0, 2.0);
        double delta = rng.uniform(0.01, 0.5);
        std::size_t collapsed = 0;
        for (std::size_t j = 0; j < d; ++j) {
            std::size_t within = 0;
            for (std::size_t r = 0; r < n; ++r)
                if (m.at(r, j) < eps) ++within;
            if (double(within) >= (1.0 - delta) * double(n)) ++collapsed;
        }
        CHECK(collapse_fraction(m, eps, delta) == double(collapsed) / double(d));
    }
}

TEST_CASE("collapse_fraction on the constructed 100x2 example") {
    // dim 0: all rows under eps; dim 1: 96 of 100 rows under eps
    Tensor ex = Tensor::zeros({100, 2});
    for (std::size_t r = 0; r < 100; ++r) {
        ex.at(r, 0) = 0.1;
        ex.at(r, 1) = r < 96 ? 0.1 : 3.0;
    }
    CHECK(collapse_fraction(ex, 0.5, 0.01) == 0.5);
    CHECK(collapse_fraction(ex, 0.5, 0.05) == 1.0);

    CHECK_THROWS_AS(collapse_fraction(Tensor::zeros({3}), 0.5, 0.01),
                    std::invalid_argument);
    CHECK_THROWS_AS(collapse_fraction(ex, -1.0, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(collapse_fraction(ex, 0.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(collapse_fraction(ex, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("collapse_curve is monotone nondecreasing in epsilon") {
    Rng rng(24);
    Tensor m = Tensor::zeros({40, 5});
    for (auto& v : m.values) v = rng.uniform(0.0, 4.0);
    CollapseConfig cfg;
    CollapseCurve curve = collapse_curve(m, CollapsePairing::q_vs_prior, cfg);
    REQUIRE(curve.epsilon.size() == 61);
    CHECK(curve.epsilon.front() == 0.0);
    CHECK(curve.epsilon.back() == 6.0);
    for (std::size_t i = 1; i < curve.collapsed_fraction.size(); ++i)
        CHECK(curve.collapsed_fraction[i] >= curve.collapsed_fraction[i - 1]);

    CollapseConfig bad;
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = CollapseConfig{};
    bad.epsilon_grid = {1.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("variance_collapse counts small variances and rejects non-positive entries") {
    Tensor v({4, 2}, {1e-4, 1.0, 1e-4, 1.0, 1e-4, 1.0, 1e-4, 1.0});
    CollapseCurve curve = variance_collapse(v, {1e-3, 2.0});
    CHECK(curve.collapsed_fraction[0] == 0.5);
    CHECK(curve.collapsed_fraction[1] == 1.0);

    Tensor bad({1, 2}, {0.0, 1.0});
    CHECK_THROWS_AS(variance_collapse(bad, {1.0}), std::invalid_argument);
}

TEST_CASE("per_dim_kl_matrix matches a hand-computed KL for each pairing") {
    CmmdModel model = tiny_model(1);
    Dataset ds = tiny_dataset(2, 16);
    auto kl_1d = [](double mq, double lq, double mp, double lp) {
        double dl = lq - lp, diff = mq - mp;
        return 0.5 * (std::exp(dl) + diff * diff * std::exp(-lp) - 1.0 - dl);
    };

    // recompute q and prior directly and compare one entry of q_vs_prior
    Rng r1(77), r2(77);
    Tensor mat = per_dim_kl_matrix(model, ds, CollapsePairing::q_vs_prior, r1);
    REQUIRE(mat.shape == std::vector<std::size_t>{16, 3});
    for (double v : mat.values) CHECK(v >= 0.0);

    std::vector<std::size_t> all(16);
    std::iota(all.begin(), all.end(), 0);
    MultiModalBatch batch = make_batch(ds, model.partition, all);
    Tape tape;
    BoundParams bound = bind(tape, model.params);
    Rng eval_rng = r2.derive(601);
    GaussianParams q = encode(tape, model, bound, batch.observed, batch.missing,
                              batch.labels, false, eval_rng);
    GaussianParams p = prior(tape, model, bound, batch.observed, false, eval_rng);
    const Tensor& qm = tape.value(q.mean);
    const Tensor& qlv = tape.value(q.log_var);
    const Tensor& pm = tape.value(p.mean);
    const Tensor& plv = tape.value(p.log_var);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(mat.at(r, c) == Catch::Approx(kl_1d(qm.at(r, c), qlv.at(r, c),
                                                      pm.at(r, c), plv.at(r, c)))
                                      .margin(1e-12));
}

TEST_CASE("prior_vs_std is identically zero under a standard-normal prior") {
    CmmdModel model = tiny_model(3, PriorMode::standard_normal);
    Dataset ds = tiny_dataset(4, 12);
    Rng rng(5);
    Tensor mat = per_dim_kl_matrix(model, ds, CollapsePairing::prior_vs_std, rng);
    for (double v : mat.values) CHECK(v == 0.0);
}

TEST_CASE("priorO_vs_qM pairing runs and is seed-stable") {
    CmmdModel model = tiny_model(6);
    Dataset ds = tiny_dataset(7, 12);
    Rng r1(8), r2(8);
    Tensor a = per_dim_kl_matrix(model, ds, CollapsePairing::priorO_vs_qM, r1);
    Tensor b = per_dim_kl_matrix(model, ds, CollapsePairing::priorO_vs_qM, r2);
    CHECK(a.values == b.values);
    for (double v : a.values) CHECK(v >= 0.0);
}

TEST_CASE("predict_labels takes the argmax with ties broken toward lower index") {
    Tensor s({3, 3}, {0.1, 0.7, 0.2, 0.5, 0.5, 0.3, 0.2, 0.2, 0.2});
    auto pred = predict_labels(s);
    CHECK(pred == std::vector<std::size_t>{1, 0, 0});
    CHECK_THROWS_AS(predict_labels(Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("error_rate and rmse match hand counts") {
    CHECK(error_rate({0, 1, 2, 1}, {0, 1, 1, 1}) == 0.25);
    CHECK(error_rate({0}, {0}) == 0.0);
    CHECK_THROWS_AS(error_rate({0, 1}, {0}), std::invalid_argument);
    CHECK_THROWS_AS(error_rate({}, {}), std::invalid_argument);

    Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor b({2, 2}, {1.0, 2.0, 3.0, 6.0});
    CHECK(rmse(a, b) == Catch::Approx(std::sqrt(4.0 / 4.0)).margin(1e-12));
    CHECK(rmse(a, a) == 0.0);
    CHECK_THROWS_AS(rmse(a, Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("mean_average_precision matches a brute-force oracle") {
    Rng rng(26);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 4 + rng.integer(20), k = 1 + rng.integer(4);
        Tensor scores = Tensor::zeros({n, k});
        Tensor labels = Tensor::zeros({n, k});
        for (auto& v : scores.values) v = rng.uniform();
        for (auto& v : labels.values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;

        // oracle with explicit ranking and precision-at-hit averaging
        double sum_ap = 0.0;
        std::size_t used = 0;
        std::vector<std::size_t> skipped;
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<std::size_t> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return scores.at(a, c) > scores.at(b, c);
            });
            std::size_t pos = 0;
            for (std::size_t r = 0; r < n; ++r) pos += labels.at(r, c) != 0.0;
            if (pos == 0) {
                skipped.push_back(c);
                continue;
            }
            double ap = 0.0;
            std::size_t hits = 0;
            for (std::size_t rank = 0; rank < n; ++rank)
                if (labels.at(idx[rank], c) != 0.0)
                    ap += double(++hits) / double(rank + 1);
            sum_ap += ap / double(pos);
            ++used;
        }
        if (used == 0) {
            CHECK_THROWS_AS(mean_average_precision(scores, labels),
                            std::invalid_argument);
            continue;
        }
        MapResult res = mean_average_precision(scores, labels);
        CHECK(res.mean_average_precision == Catch::Approx(sum_ap / used).margin(1e-12));
        CHECK(res.skipped_classes == skipped);
    }
}

TEST_CASE("mean_average_precision hand example with ties") {
    // class 0: scores rank rows (2, 0, 1); positives rows 0 and 2
    // AP = (1/1 + 2/2) / 2 = 1.0 for perfect, here hit at ranks 1 and 2
    Tensor scores({3, 1}, {0.5, 0.2, 0.9});
    Tensor labels({3, 1}, {1.0, 0.0, 1.0});
    MapResult res = mean_average_precision(scores, labels);
    CHECK(res.mean_average_precision == Catch::Approx(1.0).margin(1e-12));

    // ties: equal scores keep datapoint order (stable sort)
    Tensor tied({3, 1}, {0.5, 0.5, 0.5});
    Tensor lab2({3, 1}, {0.0, 1.0, 0.0});
    MapResult res2 = mean_average_precision(tied, lab2);
    CHECK(res2.mean_average_precision == Catch::Approx(0.5).margin(1e-12));

    // perfect ranking scores 1.0 regardless of class count
    Tensor s3({4, 2}, {0.9, 0.1, 0.8, 0.2, 0.2, 0.8, 0.1, 0.9});
    Tensor l3({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(mean_average_precision(s3, l3).mean_average_precision ==
          Catch::Approx(1.0).margin(1e-12));
}
