#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hetsurv/commands.hpp"
#include "hetsurv/errors.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool paper_scale = false;
    bool seed_set = false;
    std::uint64_t seed = 0;
};

hetsurv::Config resolve_config(const CommonArgs& args) {
    hetsurv::Config config;
    if (!args.config_path.empty()) config = hetsurv::load_config(args.config_path);
    if (args.paper_scale) hetsurv::apply_paper_scale(config);
    for (const auto& entry : args.overrides) {
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) {
            throw hetsurv::ConfigError("--set expects key=value, got \"" + entry + "\"");
        }
        hetsurv::apply_config_entry(config, entry.substr(0, eq), entry.substr(eq + 1));
    }
    if (args.seed_set) config.train_seed = args.seed;
    config.validate();
    return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (dotted key = value lines)");
    cmd->add_option("--set", args.overrides, "override a config entry, key=value (repeatable)");
    cmd->add_flag("--paper-scale", args.paper_scale,
                  "use the swept-optimal hyperparameters (batch 128, epochs 500, lr 3e-4, dropout 0.3)");
    cmd->add_option("--seed", args.seed, "rng seed (overrides train.seed)")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hetsurv: multimodal heterogeneous-graph survival pipeline"};
    app.require_subcommand(1);

    CommonArgs common;

    std::string out_path, cohort_path, ckpt_path, scheme_text = "PGC";

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort file");
    add_common(generate, common);
    generate->add_option("--out", out_path, "output cohort path")->required();

    CLI::App* train = app.add_subcommand("train", "train a checkpoint on a cohort");
    add_common(train, common);
    train->add_option("cohort", cohort_path, "cohort file")->required();
    train->add_option("--out", out_path, "output checkpoint path")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "cross-validate or score a checkpoint");
    add_common(evaluate, common);
    evaluate->add_option("cohort", cohort_path, "cohort file")->required();
    evaluate->add_option("--ckpt", ckpt_path, "checkpoint (required for eval.mode = single)");
    evaluate->add_option("--out", out_path, "metrics JSON path")->required();

    CLI::App* predict = app.add_subcommand("predict", "per-patient risk CSV for one scheme");
    add_common(predict, common);
    predict->add_option("cohort", cohort_path, "cohort file")->required();
    predict->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    predict->add_option("--scheme", scheme_text, "modality scheme (e.g. P, GC, PGC)");
    predict->add_option("--out", out_path, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const hetsurv::Config config = resolve_config(common);
        if (generate->parsed()) {
            hetsurv::cmd_generate(config, out_path);
        } else if (train->parsed()) {
            hetsurv::cmd_train(config, cohort_path, out_path);
        } else if (evaluate->parsed()) {
            hetsurv::cmd_evaluate(config, cohort_path, ckpt_path, out_path);
        } else if (predict->parsed()) {
            hetsurv::cmd_predict(config, ckpt_path, cohort_path, hetsurv::Scheme::parse(scheme_text),
                                 out_path);
        }
    } catch (const hetsurv::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::MissingModalityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hetsurv::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
