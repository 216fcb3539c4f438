#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimlite/pipeline.hpp"

namespace {

struct Args {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string analyze_mode;
};

void add_common_options(CLI::App* sub, Args& args) {
    sub->add_option("--config", args.config_path, "experiment configuration file")
        ->required();
    sub->add_option("--override", args.overrides,
                    "section.key=value settings applied after the file");
    sub->add_option("--out", args.out_dir, "output directory")->required();
}

mimlite::Config load_config(const Args& args) {
    mimlite::Config cfg = mimlite::Config::parse_file(args.config_path);
    for (const std::string& o : args.overrides) cfg.apply_override(o);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Masked-image pretraining, attention distillation, fine-tuning, and\n"
        "representation analysis for compact vision transformers."};
    app.require_subcommand(1);

    Args args;
    CLI::App* pretrain = app.add_subcommand(
        "pretrain", "masked-autoencoder pretraining (plus [distill] if enabled)");
    CLI::App* distill = app.add_subcommand(
        "distill", "pretraining with distillation forced on");
    CLI::App* finetune = app.add_subcommand("finetune", "supervised fine-tuning");
    CLI::App* probe = app.add_subcommand("probe", "linear probe on frozen features");
    CLI::App* analyze = app.add_subcommand(
        "analyze", "representation analysis (cka | attention | reserve)");
    CLI::App* run = app.add_subcommand(
        "run", "every configured stage, expanding [sweep.*] arms");
    for (CLI::App* sub : {pretrain, distill, finetune, probe, analyze, run}) {
        add_common_options(sub, args);
    }
    analyze->add_option("mode", args.analyze_mode,
                        "analysis mode, overriding [analyze] mode")
        ->check(CLI::IsMember({"cka", "attention", "reserve"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the usage error
        return code == 0 ? 0 : 2;
    }

    try {
        mimlite::Config cfg = load_config(args);
        if (pretrain->parsed()) {
            mimlite::run_pretrain(mimlite::ExperimentConfig::from_config(cfg), args.out_dir);
        } else if (distill->parsed()) {
            cfg.apply_override("distill.enabled=true");
            mimlite::run_pretrain(mimlite::ExperimentConfig::from_config(cfg), args.out_dir);
        } else if (finetune->parsed()) {
            mimlite::run_finetune(mimlite::ExperimentConfig::from_config(cfg), args.out_dir);
        } else if (probe->parsed()) {
            mimlite::run_probe(mimlite::ExperimentConfig::from_config(cfg), args.out_dir);
        } else if (analyze->parsed()) {
            if (!args.analyze_mode.empty()) {
                cfg.apply_override("analyze.mode=" + args.analyze_mode);
            }
            mimlite::run_analyze(mimlite::ExperimentConfig::from_config(cfg), args.out_dir);
        } else {
            mimlite::run_experiment(cfg, args.out_dir);
        }
        return 0;
    } catch (const mimlite::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
