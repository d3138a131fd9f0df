#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <cmmd/data.hpp>

using namespace cmmd;

namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

SynthConfig small_synth(std::uint64_t seed, std::size_t rows = 400) {
    SynthConfig sc;
    sc.rows = rows;
    sc.num_classes = 3;
    sc.latent_dim = 4;
    sc.seed = seed;
    sc.class_sep = 3.0;
    sc.modalities = {{"viewA", 5, 1, 0.1, DecoderFamily::gaussian},
                     {"viewB", 4, 1, 0.1, DecoderFamily::gaussian}};
    return sc;
}

} // namespace

TEST_CASE("synthetic generation is deterministic in the seed") {
    Dataset a = gen_synth_multimodal(small_synth(5));
    Dataset b = gen_synth_multimodal(small_synth(5));
    Dataset c = gen_synth_multimodal(small_synth(6));
    CHECK(a.modality("viewA").values == b.modality("viewA").values);
    CHECK(a.labels.values == b.labels.values);
    CHECK(a.modality("viewA").values != c.modality("viewA").values);

    // labels are exactly one-hot
    for (std::size_t r = 0; r < a.manifest.rows; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += a.labels.at(r, k);
        CHECK(s == 1.0);
    }
    SynthConfig bad = small_synth(1);
    bad.modalities.clear();
    CHECK_THROWS_AS(gen_synth_multimodal(bad), std::invalid_argument);
}

TEST_CASE("classes are separable: a nearest-centroid probe beats 85% accuracy") {
    SynthConfig sc = small_synth(7, 600);
    sc.class_sep = 6.0;
    sc.modalities[0].noise_scale = 0.05;
    Dataset ds = gen_synth_multimodal(sc);
    const Tensor& x = ds.modality("viewA");

    // centroids from the first 400 rows, evaluation on the rest
    std::vector<std::vector<double>> centroid(3, std::vector<double>(5, 0.0));
    std::vector<double> count(3, 0.0);
    for (std::size_t r = 0; r < 400; ++r) {
        std::size_t c = 0;
        while (ds.labels.at(r, c) == 0.0) ++c;
        for (std::size_t j = 0; j < 5; ++j) centroid[c][j] += x.at(r, j);
        count[c] += 1.0;
    }
    for (std::size_t c = 0; c < 3; ++c)
        for (auto& v : centroid[c]) v /= count[c];

    std::size_t correct = 0;
    for (std::size_t r = 400; r < 600; ++r) {
        std::size_t truth = 0;
        while (ds.labels.at(r, truth) == 0.0) ++truth;
        std::size_t best = 0;
        double best_d = 1e18;
        for (std::size_t c = 0; c < 3; ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                double diff = x.at(r, j) - centroid[c][j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == truth) ++correct;
    }
    CHECK(double(correct) / 200.0 > 0.85);
}

TEST_CASE("standardize then destandardize recovers the original features") {
    Dataset ds = gen_synth_multimodal(small_synth(9));
    Tensor original = ds.modality("viewA");
    standardize_modality(ds, "viewA");
    const Tensor& z = ds.modality("viewA");
    REQUIRE(ds.manifest.stats.count("viewA") == 1);
    const FeatureStats& stats = ds.manifest.stats.at("viewA");

    for (std::size_t c = 0; c < z.cols(); ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) mean += z.at(r, c);
        mean /= double(z.rows());
        for (std::size_t r = 0; r < z.rows(); ++r) {
            double d = z.at(r, c) - mean;
            var += d * d;
        }
        var /= double(z.rows());
        CHECK(mean == Catch::Approx(0.0).margin(1e-10));
        CHECK(var == Catch::Approx(1.0).margin(1e-10));
    }

    Tensor back = z;
    destandardize(back, stats);
    for (std::size_t i = 0; i < back.size(); ++i)
        CHECK(back[i] == Catch::Approx(original[i]).margin(1e-10));

    // apply_standardization reproduces the stored transformation
    Tensor again = original;
    apply_standardization(again, stats);
    for (std::size_t i = 0; i < again.size(); ++i)
        CHECK(again[i] == Catch::Approx(z[i]).margin(1e-12));
}

TEST_CASE("rotate_image: zero angle is the identity, quarter turn matches the oracle") {
    Rng rng(3);
    Tensor img = Tensor::zeros({5, 5});
    for (auto& v : img.values) v = rng.uniform();

    Tensor same = rotate_image(img, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(same[i] == Catch::Approx(img[i]).margin(1e-12));

    // odd size keeps grid points on grid points for a 90-degree rotation
    Tensor quarter = rotate_image(img, M_PI / 2.0);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            CHECK(quarter.at(r, c) == Catch::Approx(img.at(c, 4 - r)).margin(1e-10));

    CHECK_THROWS_AS(rotate_image(Tensor::zeros({5}), 0.3), std::invalid_argument);
}

TEST_CASE("two-view digits pair each image with a same-class peer") {
    Rng rng(4);
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 30; ++i) {
        Tensor img = Tensor::zeros({6, 6});
        for (auto& v : img.values) v = rng.uniform();
        images.push_back(std::move(img));
        labels.push_back(std::size_t(i % 3));
    }
    TwoViewDigits tv = make_two_view_digits(images, labels, 11);
    CHECK(tv.x_observed.shape == std::vector<std::size_t>{30, 36});
    CHECK(tv.x_missing.shape == std::vector<std::size_t>{30, 36});
    REQUIRE(tv.peer_index.size() == 30);
    for (std::size_t i = 0; i < 30; ++i)
        CHECK(labels[tv.peer_index[i]] == labels[i]);
    for (double v : tv.x_missing.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    TwoViewDigits tv2 = make_two_view_digits(images, labels, 11);
    CHECK(tv.x_observed.values == tv2.x_observed.values);
    TwoViewDigits tv3 = make_two_view_digits(images, labels, 12);
    CHECK(tv.x_missing.values != tv3.x_missing.values);

    std::vector<Tensor> bad = images;
    bad[0].at(0, 0) = 2.0;
    CHECK_THROWS_AS(make_two_view_digits(bad, labels, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_two_view_digits({}, {}, 1), std::invalid_argument);
}

TEST_CASE("idx parser reads a hand-built fixture") {
    std::string img_path = temp_path("cmmd_test_images.idx");
    std::string lab_path = temp_path("cmmd_test_labels.idx");
    {
        // two 2x3 images: values 0..5 and 250..255
        std::ofstream out(img_path, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        for (int v : {0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255})
            out.put(char(v));
    }
    {
        std::ofstream out(lab_path, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 1, 0, 0, 0, 2};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        out.put(char(7));
        out.put(char(0));
    }
    Tensor imgs = load_idx(img_path);
    REQUIRE(imgs.shape == std::vector<std::size_t>{2, 2, 3});
    CHECK(imgs[0] == 0.0);
    CHECK(imgs[5] == Catch::Approx(5.0 / 255.0).margin(1e-12));
    CHECK(imgs[11] == 1.0);
    Tensor labs = load_idx(lab_path);
    REQUIRE(labs.shape == std::vector<std::size_t>{2});
    CHECK(labs[0] == 7.0);
    CHECK(labs[1] == 0.0);

    { // truncated image payload
        std::ofstream out(img_path, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        out.put(char(1));
    }
    CHECK_THROWS_AS(load_idx(img_path), std::runtime_error);
    { // unknown magic
        std::ofstream out(img_path, std::ios::binary);
        const unsigned char header[] = {0, 0, 9, 9, 0, 0, 0, 1};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
    }
    CHECK_THROWS_AS(load_idx(img_path), std::runtime_error);
    std::remove(img_path.c_str());
    std::remove(lab_path.c_str());
}

TEST_CASE("matrix container roundtrips float-representable values exactly") {
    Tensor t = Tensor::zeros({3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.25 * double(i) - 1.0;
    std::string path = temp_path("cmmd_test_matrix.cmmdmat");
    save_matrix(t, path);
    Tensor back = load_matrix(path);
    CHECK(back.shape == t.shape);
    CHECK(back.values == t.values);

    CHECK_THROWS_AS(save_matrix(Tensor::zeros({3}), path), std::invalid_argument);
    {
        std::ofstream out(path, std::ios::binary);
        out << "WRONGMAGIC";
    }
    CHECK_THROWS_AS(load_matrix(path), std::runtime_error);
    CHECK_THROWS_AS(load_matrix(temp_path("cmmd_test_matrix_missing.cmmdmat")),
                    std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("dataset persistence roundtrips manifest, stats, data and labels") {
    Dataset ds = gen_synth_multimodal(small_synth(13, 50));
    standardize_modality(ds, "viewB");
    std::string dir = temp_path("cmmd_test_dataset");
    save_dataset(ds, dir);
    Dataset back = load_dataset(dir);

    CHECK(back.manifest.rows == 50);
    CHECK(back.manifest.num_classes == 3);
    CHECK(back.manifest.label_mode == CategoricalMode::softmax);
    REQUIRE(back.manifest.modalities.size() == 2);
    CHECK(back.manifest.modalities[0].name == "viewA");
    CHECK(back.manifest.modalities[1].width == 4);
    REQUIRE(back.manifest.stats.count("viewB") == 1);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(back.manifest.stats.at("viewB").mean[c] ==
              ds.manifest.stats.at("viewB").mean[c]);
        CHECK(back.manifest.stats.at("viewB").stddev[c] ==
              ds.manifest.stats.at("viewB").stddev[c]);
    }
    // data goes through f32 storage
    for (std::size_t i = 0; i < ds.modality("viewA").size(); ++i)
        CHECK(back.modality("viewA")[i] ==
              Catch::Approx(ds.modality("viewA")[i]).margin(1e-6));
    CHECK(back.labels.values == ds.labels.values);

    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), std::runtime_error);
}

TEST_CASE("batch_indices covers every row once and drops short tails on request") {
    auto batches = batch_indices(10, 4, false, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0] == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(batches[2] == std::vector<std::size_t>{8, 9});

    auto dropped = batch_indices(10, 4, false, 0, 3);
    CHECK(dropped.size() == 2);

    auto shuffled = batch_indices(100, 16, true, 42);
    std::set<std::size_t> seen;
    for (const auto& b : shuffled) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 100);
    auto shuffled2 = batch_indices(100, 16, true, 42);
    CHECK(shuffled == shuffled2);
    auto other_seed = batch_indices(100, 16, true, 43);
    CHECK(shuffled != other_seed);

    CHECK_THROWS_AS(batch_indices(10, 0, false, 0), std::invalid_argument);
}

TEST_CASE("make_batch gathers the requested rows into the partition layout") {
    Dataset ds = gen_synth_multimodal(small_synth(15, 20));
    ModalityPartition part{{{"viewA", 5, DecoderFamily::gaussian}},
                           {{"viewB", 4, DecoderFamily::gaussian}}};
    MultiModalBatch batch = make_batch(ds, part, {3, 0, 7});
    REQUIRE(batch.observed.size() == 1);
    REQUIRE(batch.missing.size() == 1);
    CHECK(batch.observed[0].shape == std::vector<std::size_t>{3, 5});
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(batch.observed[0].at(0, c) == ds.modality("viewA").at(3, c));
        CHECK(batch.observed[0].at(1, c) == ds.modality("viewA").at(0, c));
        CHECK(batch.observed[0].at(2, c) == ds.modality("viewA").at(7, c));
    }
    for (std::size_t k = 0; k < 3; ++k) CHECK(batch.labels.at(1, k) == ds.labels.at(0, k));

    ModalityPartition bad{{{"viewA", 6, DecoderFamily::gaussian}}, {}};
    CHECK_THROWS_AS(make_batch(ds, bad, {0}), std::invalid_argument);
    ModalityPartition unknown{{{"viewZ", 5, DecoderFamily::gaussian}}, {}};
    CHECK_THROWS_AS(make_batch(ds, unknown, {0}), std::out_of_range);
}
