#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <cmmd/data.hpp>
#include <cmmd/diagnostics.hpp>

using namespace cmmd;

namespace {

namespace fs = std::filesystem;

fs::path work_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "cmmd_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

int run(const std::string& args) {
    std::string cmd = std::string(CMMD_CLI_BIN) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// value of the first CSV line whose prefix matches, e.g. "rmse,viewB,"
double csv_value(const fs::path& path, const std::string& prefix) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(prefix, 0) == 0) return std::stod(line.substr(prefix.size()));
    FAIL("no line with prefix " + prefix + " in " + path.string());
    return 0.0;
}

std::size_t count_lines(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

fs::path synth_config_path() {
    fs::path p = work_root() / "synth.cfg";
    if (!fs::exists(p))
        write_file(p,
                   "[synth]\n"
                   "rows = 160\n"
                   "num_classes = 2\n"
                   "latent_dim = 3\n"
                   "seed = 3\n"
                   "modalities = viewA:4:1:0.2:gaussian, viewB:3:1:0.2:gaussian\n");
    return p;
}

fs::path train_config_path() {
    fs::path p = work_root() / "train.cfg";
    if (!fs::exists(p))
        write_file(p,
                   "[model]\n"
                   "observed = viewA\n"
                   "missing = viewB\n"
                   "latent_dim = 3\n"
                   "encoder_hidden = 6\n"
                   "prior_hidden = 6\n"
                   "classifier_hidden = 4\n"
                   "decoder_hidden = 6\n"
                   "dropout = 0.2\n"
                   "[trainer]\n"
                   "epochs = 2\n"
                   "batch_size = 32\n"
                   "seed = 5\n"
                   "learning_rate = 1e-3\n"
                   "[objective]\n"
                   "omega = 0.5\n");
    return p;
}

// shared dataset for the pipeline tests, generated once through the CLI
fs::path dataset_dir() {
    fs::path dir = work_root() / "data";
    if (!fs::exists(dir / "manifest.txt")) {
        int rc = run("synth --config " + synth_config_path().string() + " --out " +
                     dir.string());
        REQUIRE(rc == 0);
    }
    return dir;
}

fs::path trained_dir() {
    fs::path dir = work_root() / "trained";
    if (!fs::exists(dir / "checkpoint.ckpt")) {
        int rc = run("train --config " + train_config_path().string() + " --data " +
                     dataset_dir().string() + " --out " + dir.string());
        REQUIRE(rc == 0);
    }
    return dir;
}

} // namespace

TEST_CASE("argument and config errors exit with code 2") {
    fs::path out = work_root() / "err";
    CHECK(run("bogus_subcommand") == 2);
    CHECK(run("synth --config " + synth_config_path().string()) == 2); // missing --out
    CHECK(run("synth --config " + synth_config_path().string() + " --set noequals --out " +
              out.string()) == 2);
    CHECK(run("synth --config " + synth_config_path().string() +
              " --set bogus.key=1 --out " + out.string()) == 2);
    CHECK(run("synth --set synth.modalities=viewA:4:1:gaussian --out " + out.string()) ==
          2); // malformed modality entry
    CHECK(run("train --config " + train_config_path().string() +
              " --set objective.omega=2.0 --data " + dataset_dir().string() + " --out " +
              out.string()) == 2);
    CHECK(run("train --config " + train_config_path().string() +
              " --set trainer.stage=bogus --data " + dataset_dir().string() + " --out " +
              out.string()) == 2);
}

TEST_CASE("missing inputs exit with code 1") {
    fs::path out = work_root() / "err1";
    CHECK(run("train --config " + train_config_path().string() + " --data " +
              (work_root() / "no_such_dataset").string() + " --out " + out.string()) == 1);
    CHECK(run("eval --checkpoint " + (work_root() / "no_such.ckpt").string() + " --data " +
              dataset_dir().string() + " --out " + out.string()) == 1);
}

TEST_CASE("synth writes a loadable dataset and echoes the resolved config") {
    fs::path dir = dataset_dir();
    Dataset ds = load_dataset(dir.string());
    CHECK(ds.manifest.rows == 160);
    CHECK(ds.manifest.num_classes == 2);
    REQUIRE(ds.manifest.modalities.size() == 2);
    CHECK(ds.manifest.modalities[0].name == "viewA");

    std::string echo = slurp(dir / "config_resolved.txt");
    CHECK(echo.find("[synth]") != std::string::npos);
    CHECK(echo.find("rows = 160") != std::string::npos);
    CHECK(echo.find("seed = 3") != std::string::npos);
}

TEST_CASE("train writes a checkpoint, per-epoch metrics, and the resolved config") {
    fs::path dir = trained_dir();
    CHECK(fs::exists(dir / "checkpoint.ckpt"));

    std::string metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.rfind("epoch,recon_log_prob,class_log_prob,kl_term,mmd_term,"
                        "total_objective,wall_seconds\n",
                        0) == 0);
    CHECK(count_lines(dir / "metrics.csv") == 3); // header + 2 epochs

    std::string echo = slurp(dir / "config_resolved.txt");
    CHECK(echo.find("[objective]") != std::string::npos);
    CHECK(echo.find("omega = 0.5") != std::string::npos);
    CHECK(echo.find("alpha = 10") != std::string::npos); // defaulted value echoed
}

TEST_CASE("eval and generate agree on the generated modality") {
    fs::path ckpt = trained_dir() / "checkpoint.ckpt";
    fs::path eval_dir = work_root() / "eval";
    fs::path gen_dir = work_root() / "gen";
    REQUIRE(run("eval --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + eval_dir.string() +
                " --seed 5 --samples 4") == 0);
    REQUIRE(run("generate --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + gen_dir.string() +
                " --seed 5 --samples 4") == 0);

    double err = csv_value(eval_dir / "metrics.csv", "error_rate,labels,");
    CHECK(err >= 0.0);
    CHECK(err <= 1.0);

    Dataset ds = load_dataset(dataset_dir().string());
    Tensor gen = load_matrix((gen_dir / "viewB_generated.cmmdmat").string());
    REQUIRE(gen.shape == std::vector<std::size_t>{160, 3});
    double reported = csv_value(eval_dir / "metrics.csv", "rmse,viewB,");
    CHECK(rmse(gen, ds.modality("viewB")) == Catch::Approx(reported).margin(1e-12));

    // same seed and sample count: byte-identical metrics
    fs::path eval2 = work_root() / "eval2";
    REQUIRE(run("eval --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + eval2.string() +
                " --seed 5 --samples 4") == 0);
    CHECK(slurp(eval_dir / "metrics.csv") == slurp(eval2 / "metrics.csv"));

    // a different seed changes the Monte Carlo estimate
    fs::path eval3 = work_root() / "eval3";
    REQUIRE(run("eval --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + eval3.string() +
                " --seed 6 --samples 4") == 0);
    CHECK(csv_value(eval3 / "metrics.csv", "rmse,viewB,") != reported);
}

TEST_CASE("CMMD_SEED environment variable overrides the configured seed") {
    fs::path a = work_root() / "env_a";
    fs::path b = work_root() / "env_b";
    REQUIRE(setenv("CMMD_SEED", "77", 1) == 0);
    int rc = run("synth --config " + synth_config_path().string() + " --out " + a.string());
    REQUIRE(unsetenv("CMMD_SEED") == 0);
    REQUIRE(rc == 0);
    CHECK(slurp(a / "config_resolved.txt").find("seed = 77") != std::string::npos);

    REQUIRE(run("synth --config " + synth_config_path().string() +
                " --set synth.seed=77 --out " + b.string()) == 0);
    Dataset da = load_dataset(a.string());
    Dataset db = load_dataset(b.string());
    for (const auto& info : da.manifest.modalities)
        CHECK(da.modality(info.name).values == db.modality(info.name).values);
    CHECK(da.labels.values == db.labels.values);
}

TEST_CASE("omega sweep trains the full grid and tabulates it") {
    fs::path dir = work_root() / "sweep";
    REQUIRE(run("train --config " + train_config_path().string() +
                " --set trainer.epochs=1 --data " + dataset_dir().string() + " --out " +
                dir.string() + " --omega-sweep") == 0);
    CHECK(count_lines(dir / "sweep.csv") == 12); // header + 11 omegas
    for (int i = 0; i <= 10; ++i) {
        std::ostringstream sub;
        sub << "omega_" << std::fixed;
        sub.precision(1);
        sub << double(i) / 10.0;
        CHECK(fs::exists(dir / sub.str() / "checkpoint.ckpt"));
        CHECK(fs::exists(dir / sub.str() / "metrics.csv"));
    }
}

TEST_CASE("resuming training matches an uninterrupted run") {
    fs::path half = work_root() / "resume_half";
    fs::path full = work_root() / "resume_full";
    fs::path cont = work_root() / "resume_cont";
    std::string common = "train --config " + train_config_path().string() + " --data " +
                         dataset_dir().string();
    REQUIRE(run(common + " --set trainer.epochs=2 --out " + half.string()) == 0);
    REQUIRE(run(common + " --set trainer.epochs=4 --out " + full.string()) == 0);
    REQUIRE(run(common + " --set trainer.epochs=4 --resume " +
                (half / "checkpoint.ckpt").string() + " --out " + cont.string()) == 0);
    CHECK(slurp(full / "checkpoint.ckpt") == slurp(cont / "checkpoint.ckpt"));
    CHECK(count_lines(cont / "metrics.csv") == 3); // header + epochs 2 and 3
}

TEST_CASE("collapse writes a curve per pairing") {
    fs::path ckpt = trained_dir() / "checkpoint.ckpt";
    fs::path dir = work_root() / "collapse";
    REQUIRE(run("collapse --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + dir.string() + " --seed 4") == 0);
    std::string csv = slurp(dir / "collapse.csv");
    CHECK(csv.rfind("pairing,epsilon,fraction\n", 0) == 0);
    CHECK(csv.find("q_vs_prior,") != std::string::npos);
    CHECK(csv.find("prior_vs_std,") != std::string::npos);
    CHECK(count_lines(dir / "collapse.csv") == 1 + 2 * 61);

    fs::path dir2 = work_root() / "collapse2";
    REQUIRE(run("collapse --checkpoint " + ckpt.string() + " --data " +
                dataset_dir().string() + " --out " + dir2.string() +
                " --pairing priorO_vs_qM") == 0);
    std::string csv2 = slurp(dir2 / "collapse.csv");
    CHECK(csv2.find("priorO_vs_qM,") != std::string::npos);
    CHECK(csv2.find("q_vs_prior,") == std::string::npos);
    CHECK(count_lines(dir2 / "collapse.csv") == 1 + 61);
}

TEST_CASE("gradcheck passes on the built-in architecture") {
    CHECK(run("gradcheck --set trainer.seed=2") == 0);
}
