#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cmmd {

struct ModalityInfo {
    std::string name;
    std::size_t width = 0;
    DecoderFamily family = DecoderFamily::gaussian;
};

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct DatasetManifest {
    std::vector<ModalityInfo> modalities;
    std::size_t num_classes = 0;
    CategoricalMode label_mode = CategoricalMode::softmax;
    std::size_t rows = 0;
    std::map<std::string, FeatureStats> stats; // present iff modality standardized
};

struct Dataset {
    DatasetManifest manifest;
    std::map<std::string, Tensor> modalities; // rows x width
    Tensor labels;                            // rows x K, one-hot or multi-hot

    const Tensor& modality(const std::string& name) const {
        auto it = modalities.find(name);
        if (it == modalities.end())
            throw std::out_of_range("dataset: unknown modality " + name);
        return it->second;
    }

    void validate() const {
        for (const auto& info : manifest.modalities) {
            const Tensor& t = modality(info.name);
            if (t.rank() != 2 || t.rows() != manifest.rows || t.cols() != info.width)
                throw std::invalid_argument("dataset: shape mismatch for " + info.name);
        }
        if (labels.rank() != 2 || labels.rows() != manifest.rows ||
            labels.cols() != manifest.num_classes)
            throw std::invalid_argument("dataset: label shape mismatch");
    }
};

// ---- synthetic generation ------------------------------------------------

struct SynthModalityConfig {
    std::string name;
    std::size_t width = 0;
    std::size_t depth = 1; // tanh-squash layers after the affine map
    double noise_scale = 0.1;
    DecoderFamily family = DecoderFamily::gaussian;
};

struct SynthConfig {
    std::size_t num_classes = 4;
    std::size_t latent_dim = 8; // ground-truth latent dimension
    std::vector<SynthModalityConfig> modalities;
    double label_noise = 0.0;
    double class_sep = 3.0;
    std::size_t rows = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes == 0 || latent_dim == 0 || rows == 0)
            throw std::invalid_argument("synth: positive dims/rows required");
        if (modalities.empty())
            throw std::invalid_argument("synth: at least one modality");
        for (const auto& m : modalities) {
            if (m.width == 0) throw std::invalid_argument("synth: zero modality width");
            if (m.noise_scale < 0.0)
                throw std::invalid_argument("synth: negative noise scale");
        }
        if (label_noise < 0.0 || label_noise >= 1.0)
            throw std::invalid_argument("synth: label noise in [0,1)");
    }
};

// Class c drawn uniformly, latent t ~ N(mu_c, I) with seeded class means, each
// modality a fixed random affine map plus tanh layers plus Gaussian noise.
inline Dataset gen_synth_multimodal(const SynthConfig& cfg) {
    cfg.validate();
    RngFactory factory(cfg.seed);

    // class means: random directions scaled to |mu| = class_sep
    Rng mean_rng = factory.stream(1);
    std::vector<std::vector<double>> class_means(cfg.num_classes,
                                                 std::vector<double>(cfg.latent_dim));
    for (auto& mu : class_means) {
        double norm = 0.0;
        for (auto& v : mu) {
            v = mean_rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : mu) v = cfg.class_sep * v / (norm > 0 ? norm : 1.0);
    }

    // per-modality fixed maps
    struct ModalityMap {
        Tensor w0, b0;                 // latent -> width
        std::vector<Tensor> wk, bk;    // width -> width squash layers
    };
    std::vector<ModalityMap> maps;
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
        const auto& mc = cfg.modalities[m];
        Rng mr = factory.stream(100 + m);
        ModalityMap mm;
        mm.w0 = Tensor::zeros({cfg.latent_dim, mc.width});
        for (auto& v : mm.w0.values) v = mr.normal() / std::sqrt(double(cfg.latent_dim));
        mm.b0 = Tensor::zeros({mc.width});
        for (auto& v : mm.b0.values) v = 0.1 * mr.normal();
        for (std::size_t d = 0; d < mc.depth; ++d) {
            Tensor w = Tensor::zeros({mc.width, mc.width});
            for (auto& v : w.values) v = mr.normal() / std::sqrt(double(mc.width));
            Tensor b = Tensor::zeros({mc.width});
            for (auto& v : b.values) v = 0.1 * mr.normal();
            mm.wk.push_back(std::move(w));
            mm.bk.push_back(std::move(b));
        }
        maps.push_back(std::move(mm));
    }

    Dataset ds;
    ds.manifest.num_classes = cfg.num_classes;
    ds.manifest.label_mode = CategoricalMode::softmax;
    ds.manifest.rows = cfg.rows;
    for (const auto& mc : cfg.modalities) {
        ds.manifest.modalities.push_back({mc.name, mc.width, mc.family});
        ds.modalities[mc.name] = Tensor::zeros({cfg.rows, mc.width});
    }
    ds.labels = Tensor::zeros({cfg.rows, cfg.num_classes});

    Rng row_rng = factory.stream(2);
    for (std::size_t r = 0; r < cfg.rows; ++r) {
        std::size_t c = row_rng.integer(cfg.num_classes);
        std::vector<double> t(cfg.latent_dim);
        for (std::size_t i = 0; i < cfg.latent_dim; ++i)
            t[i] = class_means[c][i] + row_rng.normal();
        for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
            const auto& mc = cfg.modalities[m];
            const auto& mm = maps[m];
            std::vector<double> x(mc.width);
            for (std::size_t j = 0; j < mc.width; ++j) {
                double s = mm.b0[j];
                for (std::size_t i = 0; i < cfg.latent_dim; ++i)
                    s += t[i] * mm.w0.at(i, j);
                x[j] = s;
            }
            for (std::size_t d = 0; d < mc.depth; ++d) {
                std::vector<double> y(mc.width);
                for (std::size_t j = 0; j < mc.width; ++j) {
                    double s = mm.bk[d][j];
                    for (std::size_t i = 0; i < mc.width; ++i)
                        s += x[i] * mm.wk[d].at(i, j);
                    y[j] = std::tanh(s);
                }
                x = std::move(y);
            }
            Tensor& out = ds.modalities[mc.name];
            for (std::size_t j = 0; j < mc.width; ++j)
                out.at(r, j) = x[j] + mc.noise_scale * row_rng.normal();
        }
        std::size_t label = c;
        if (cfg.label_noise > 0.0 && row_rng.uniform() < cfg.label_noise)
            label = row_rng.integer(cfg.num_classes);
        ds.labels.at(r, label) = 1.0;
    }
    ds.validate();
    return ds;
}

// ---- standardization -----------------------------------------------------

inline void standardize_modality(Dataset& ds, const std::string& name) {
    Tensor& x = ds.modalities.at(name);
    FeatureStats stats;
    stats.mean.resize(x.cols());
    stats.stddev.resize(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) mean += x.at(r, c);
        mean /= double(x.rows());
        double var = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double d = x.at(r, c) - mean;
            var += d * d;
        }
        var /= double(x.rows());
        double sd = std::sqrt(var);
        if (sd < 1e-12) sd = 1.0;
        stats.mean[c] = mean;
        stats.stddev[c] = sd;
        for (std::size_t r = 0; r < x.rows(); ++r)
            x.at(r, c) = (x.at(r, c) - mean) / sd;
    }
    ds.manifest.stats[name] = std::move(stats);
}

inline void apply_standardization(Tensor& x, const FeatureStats& stats) {
    for (std::size_t c = 0; c < x.cols(); ++c)
        for (std::size_t r = 0; r < x.rows(); ++r)
            x.at(r, c) = (x.at(r, c) - stats.mean[c]) / stats.stddev[c];
}

inline void destandardize(Tensor& x, const FeatureStats& stats) {
    for (std::size_t c = 0; c < x.cols(); ++c)
        for (std::size_t r = 0; r < x.rows(); ++r)
            x.at(r, c) = x.at(r, c) * stats.stddev[c] + stats.mean[c];
}

// ---- two-view digits (rotation + uniform noise) --------------------------

// Bilinear rotation about the image center with zero padding. pad_to_32
// rotates on a 32x32 canvas and crops back to 28x28.
inline Tensor rotate_image(const Tensor& img, double angle, bool pad_to_32 = false) {
    if (img.rank() != 2) throw std::invalid_argument("rotate: rank-2 image required");
    std::size_t h = img.rows(), w = img.cols();
    std::size_t ph = h, pw = w, off = 0;
    std::vector<double> src;
    if (pad_to_32 && h == 28 && w == 28) {
        ph = pw = 32;
        off = 2;
    }
    src.assign(ph * pw, 0.0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) src[(r + off) * pw + c + off] = img.at(r, c);

    double cy = (double(ph) - 1.0) / 2.0, cx = (double(pw) - 1.0) / 2.0;
    double ca = std::cos(angle), sa = std::sin(angle);
    Tensor out = Tensor::zeros({h, w});
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double ry = double(r + off) - cy, rx = double(c + off) - cx;
            // inverse rotation to sample the source
            double sy = ca * ry + sa * rx + cy;
            double sx = -sa * ry + ca * rx + cx;
            long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
            double fy = sy - double(y0), fx = sx - double(x0);
            double acc = 0.0;
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx) {
                    long yy = y0 + dy, xx = x0 + dx;
                    if (yy < 0 || xx < 0 || yy >= long(ph) || xx >= long(pw)) continue;
                    double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
                    acc += wgt * src[std::size_t(yy) * pw + std::size_t(xx)];
                }
            out.at(r, c) = acc;
        }
    }
    return out;
}

struct TwoViewDigits {
    Tensor x_observed; // n x (h*w), rotated
    Tensor x_missing;  // n x (h*w), same-class peer plus uniform noise
    std::vector<std::size_t> peer_index;
};

// x_O: each image rotated by U[-pi/4, pi/4]; x_M: a uniformly chosen
// same-class image plus per-pixel U[0,1] noise, truncated to [0,1].
inline TwoViewDigits make_two_view_digits(const std::vector<Tensor>& images,
                                          const std::vector<std::size_t>& labels,
                                          std::uint64_t seed, bool pad_to_32 = false) {
    if (images.empty() || images.size() != labels.size())
        throw std::invalid_argument("two_view: images/labels mismatch");
    for (const auto& img : images)
        for (double v : img.values)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("two_view: pixel values must be in [0,1]");
    std::size_t n = images.size();
    std::size_t h = images[0].rows(), w = images[0].cols();

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

    RngFactory factory(seed);
    Rng rot_rng = factory.stream(1);
    Rng peer_rng = factory.stream(2);
    Rng noise_rng = factory.stream(3);

    TwoViewDigits out;
    out.x_observed = Tensor::zeros({n, h * w});
    out.x_missing = Tensor::zeros({n, h * w});
    out.peer_index.resize(n);
    const double quarter_pi = 0.25 * 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        double angle = rot_rng.uniform(-quarter_pi, quarter_pi);
        Tensor rotated = rotate_image(images[i], angle, pad_to_32);
        for (std::size_t p = 0; p < h * w; ++p) out.x_observed.at(i, p) = rotated[p];

        const auto& peers = by_class.at(labels[i]);
        std::size_t peer = peers[peer_rng.integer(peers.size())];
        out.peer_index[i] = peer;
        for (std::size_t p = 0; p < h * w; ++p) {
            double v = images[peer].values[p] + noise_rng.uniform();
            out.x_missing.at(i, p) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
    }
    return out;
}

// ---- IDX ingestion -------------------------------------------------------

namespace data_detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw std::runtime_error("idx: truncated while reading " + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = (unsigned char)((std::uint64_t(v) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw std::runtime_error("file truncated while reading " + what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return T(v);
}

inline void write_le_double(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<std::uint64_t>(out, bits);
}
inline double read_le_double(std::istream& in, const std::string& what) {
    std::uint64_t bits = read_le<std::uint64_t>(in, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
inline void write_le_float(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<std::uint32_t>(out, bits);
}
inline float read_le_float(std::istream& in, const std::string& what) {
    std::uint32_t bits = read_le<std::uint32_t>(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace data_detail

// Parses IDX u8 images (magic 0x00000803, values scaled to [0,1]) and labels
// (magic 0x00000801, returned as raw values).
inline Tensor load_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + path);
    std::uint32_t magic = data_detail::read_be_u32(in, "magic");
    if (magic == 0x00000803) {
        std::uint32_t n = data_detail::read_be_u32(in, "count");
        std::uint32_t h = data_detail::read_be_u32(in, "rows");
        std::uint32_t w = data_detail::read_be_u32(in, "cols");
        std::vector<unsigned char> raw(std::size_t(n) * h * w);
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (!in) throw std::runtime_error("idx: truncated image data in " + path);
        Tensor out = Tensor::zeros({n, h, w});
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = double(raw[i]) / 255.0;
        return out;
    }
    if (magic == 0x00000801) {
        std::uint32_t n = data_detail::read_be_u32(in, "count");
        std::vector<unsigned char> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (!in) throw std::runtime_error("idx: truncated label data in " + path);
        Tensor out = Tensor::zeros({n});
        for (std::size_t i = 0; i < n; ++i) out[i] = double(raw[i]);
        return out;
    }
    throw std::runtime_error("idx: unsupported magic in " + path);
}

// ---- CMMDMAT container ---------------------------------------------------

inline constexpr char kMatMagic[8] = {'C', 'M', 'M', 'D', 'M', 'A', 'T', '\0'};
inline constexpr std::uint32_t kMatVersion = 1;

inline void save_matrix(const Tensor& t, const std::string& path) {
    if (t.rank() != 2) throw std::invalid_argument("save_matrix: rank-2 required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(kMatMagic, 7);
    data_detail::write_le<std::uint32_t>(out, kMatVersion);
    data_detail::write_le<std::uint64_t>(out, t.rows());
    data_detail::write_le<std::uint64_t>(out, t.cols());
    for (double v : t.values) data_detail::write_le_float(out, float(v));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[7];
    in.read(magic, 7);
    if (!in || std::memcmp(magic, kMatMagic, 7) != 0)
        throw std::runtime_error("bad matrix magic in " + path);
    std::uint32_t version = data_detail::read_le<std::uint32_t>(in, "version");
    if (version != kMatVersion)
        throw std::runtime_error("unsupported matrix version in " + path);
    std::uint64_t rows = data_detail::read_le<std::uint64_t>(in, "rows");
    std::uint64_t cols = data_detail::read_le<std::uint64_t>(in, "cols");
    Tensor t = Tensor::zeros({std::size_t(rows), std::size_t(cols)});
    for (auto& v : t.values) v = double(data_detail::read_le_float(in, "values"));
    return t;
}

// ---- dataset persistence -------------------------------------------------

namespace data_detail {

inline std::string join_doubles(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

inline std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(std::stod(item));
    return out;
}

} // namespace data_detail

// Layout: <dir>/manifest.txt plus one CMMDMAT file per modality and labels.
inline void save_dataset(const Dataset& ds, const std::string& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    std::ofstream mf(dir + "/manifest.txt");
    if (!mf) throw std::runtime_error("cannot write manifest in " + dir);
    mf << "rows = " << ds.manifest.rows << "\n";
    mf << "num_classes = " << ds.manifest.num_classes << "\n";
    mf << "label_mode = " << to_string(ds.manifest.label_mode) << "\n";
    for (const auto& info : ds.manifest.modalities) {
        mf << "modality = " << info.name << ":" << info.width << ":"
           << to_string(info.family) << "\n";
        auto it = ds.manifest.stats.find(info.name);
        if (it != ds.manifest.stats.end()) {
            mf << "stats_mean/" << info.name << " = "
               << data_detail::join_doubles(it->second.mean) << "\n";
            mf << "stats_std/" << info.name << " = "
               << data_detail::join_doubles(it->second.stddev) << "\n";
        }
    }
    for (const auto& info : ds.manifest.modalities)
        save_matrix(ds.modality(info.name), dir + "/" + info.name + ".cmmdmat");
    save_matrix(ds.labels, dir + "/labels.cmmdmat");
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.txt");
    if (!mf) throw std::runtime_error("cannot open manifest in " + dir);
    Dataset ds;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("manifest: malformed line: " + line);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "rows") {
            ds.manifest.rows = std::stoull(val);
        } else if (key == "num_classes") {
            ds.manifest.num_classes = std::stoull(val);
        } else if (key == "label_mode") {
            ds.manifest.label_mode = categorical_mode_from_string(val);
        } else if (key == "modality") {
            auto c1 = val.find(':');
            auto c2 = val.rfind(':');
            if (c1 == std::string::npos || c1 == c2)
                throw std::runtime_error("manifest: malformed modality: " + val);
            ModalityInfo info;
            info.name = val.substr(0, c1);
            info.width = std::stoull(val.substr(c1 + 1, c2 - c1 - 1));
            info.family = decoder_family_from_string(val.substr(c2 + 1));
            ds.manifest.modalities.push_back(info);
        } else if (key.rfind("stats_mean/", 0) == 0) {
            ds.manifest.stats[key.substr(11)].mean = data_detail::split_doubles(val);
        } else if (key.rfind("stats_std/", 0) == 0) {
            ds.manifest.stats[key.substr(10)].stddev = data_detail::split_doubles(val);
        } else {
            throw std::runtime_error("manifest: unknown key: " + key);
        }
    }
    for (const auto& info : ds.manifest.modalities)
        ds.modalities[info.name] = load_matrix(dir + "/" + info.name + ".cmmdmat");
    ds.labels = load_matrix(dir + "/labels.cmmdmat");
    ds.validate();
    return ds;
}

// ---- batching ------------------------------------------------------------

// Seeded Fisher-Yates over row indices; the final short batch is dropped when
// smaller than min_batch (training needs >= 2 rows for the MMD u-statistic).
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t rows,
                                                           std::size_t batch_size,
                                                           bool shuffle,
                                                           std::uint64_t seed,
                                                           std::size_t min_batch = 1) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch_size >= 1");
    std::vector<std::size_t> order(rows);
    for (std::size_t i = 0; i < rows; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(seed);
        for (std::size_t i = rows; i > 1; --i) {
            std::size_t j = rng.integer(i);
            std::swap(order[i - 1], order[j]);
        }
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < rows; start += batch_size) {
        std::size_t end = std::min(rows, start + batch_size);
        if (end - start < min_batch) break;
        out.emplace_back(order.begin() + long(start), order.begin() + long(end));
    }
    return out;
}

// Split a dataset's rows into the model's observed/missing layout.
inline MultiModalBatch make_batch(const Dataset& ds, const ModalityPartition& partition,
                                  const std::vector<std::size_t>& rows) {
    MultiModalBatch batch;
    auto gather = [&](const Modality& mod) {
        const Tensor& src = ds.modality(mod.name);
        if (src.cols() != mod.width)
            throw std::invalid_argument("make_batch: width mismatch for " + mod.name);
        Tensor t = Tensor::zeros({rows.size(), mod.width});
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < mod.width; ++c)
                t.at(r, c) = src.at(rows[r], c);
        return t;
    };
    for (const auto& mod : partition.observed) batch.observed.push_back(gather(mod));
    for (const auto& mod : partition.missing) batch.missing.push_back(gather(mod));
    batch.labels = Tensor::zeros({rows.size(), ds.manifest.num_classes});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < ds.manifest.num_classes; ++c)
            batch.labels.at(r, c) = ds.labels.at(rows[r], c);
    return batch;
}

inline std::vector<MultiModalBatch> dataset_rows(const Dataset& ds,
                                                 const ModalityPartition& partition) {
    std::vector<MultiModalBatch> rows;
    rows.reserve(ds.manifest.rows);
    for (std::size_t r = 0; r < ds.manifest.rows; ++r)
        rows.push_back(make_batch(ds, partition, {r}));
    return rows;
}

} // namespace cmmd
