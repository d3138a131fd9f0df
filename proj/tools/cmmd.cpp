#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <cmmd/cli.hpp>

namespace {

cmmd::RunConfig load_config(const std::string& path,
                            const std::vector<std::string>& overrides) {
    cmmd::RunConfig cfg =
        path.empty() ? cmmd::RunConfig::parse("") : cmmd::RunConfig::parse_file(path);
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw cmmd::ConfigError("--set expects section.key=value, got " + ov);
        cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    return cfg;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const cmmd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional-prior multi-modal latent variable model"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, checkpoint_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    std::size_t num_samples = 8;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config)
            cmd->add_option("--config", config_path, "config file (ini-style)");
        cmd->add_option("--set", overrides, "override: section.key=value")
            ->take_all();
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, true);
    synth->add_option("--out", out_dir, "output dataset directory")->required();

    cmmd::TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, true);
    train->add_option("--data", data_dir, "training dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_flag("--omega-sweep", train_opts.omega_sweep,
                    "train at omega = 0.0, 0.1, ..., 1.0");
    train->add_option("--resume", train_opts.resume_checkpoint,
                      "resume from a checkpoint");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--data", data_dir, "eval dataset directory")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--seed", seed, "eval rng seed");
    eval->add_option("--samples", num_samples, "prior samples per datapoint");

    auto* generate = app.add_subcommand("generate", "generate missing modalities");
    generate->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    generate->add_option("--data", data_dir, "dataset directory")->required();
    generate->add_option("--out", out_dir, "output directory")->required();
    generate->add_option("--seed", seed, "generation rng seed");
    generate->add_option("--samples", num_samples, "prior samples per datapoint");

    std::vector<std::string> pairing_names;
    auto* collapse = app.add_subcommand("collapse", "posterior collapse diagnostics");
    collapse->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    collapse->add_option("--data", data_dir, "dataset directory")->required();
    collapse->add_option("--out", out_dir, "output directory")->required();
    collapse->add_option("--seed", seed, "diagnostic rng seed");
    collapse->add_option("--pairing", pairing_names,
                         "pairings (default q_vs_prior, prior_vs_std)")
        ->take_all();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    return guarded([&]() -> int {
        if (synth->parsed())
            return cmmd::cmd_synth(load_config(config_path, overrides), out_dir, std::cerr);
        if (train->parsed())
            return cmmd::cmd_train(load_config(config_path, overrides), data_dir, out_dir,
                                   train_opts, std::cerr);
        if (eval->parsed())
            return cmmd::cmd_eval(checkpoint_path, data_dir, out_dir, seed, num_samples,
                                  std::cerr);
        if (generate->parsed())
            return cmmd::cmd_generate(checkpoint_path, data_dir, out_dir, seed,
                                      num_samples, std::cerr);
        if (collapse->parsed()) {
            cmmd::CollapseConfig ccfg;
            if (!pairing_names.empty()) {
                ccfg.pairings.clear();
                for (const auto& name : pairing_names)
                    ccfg.pairings.push_back(cmmd::collapse_pairing_from_string(name));
            }
            return cmmd::cmd_collapse(checkpoint_path, data_dir, out_dir, ccfg, seed,
                                      std::cerr);
        }
        if (gradcheck->parsed())
            return cmmd::cmd_gradcheck(load_config(config_path, overrides), std::cerr);
        return 2;
    });
}
