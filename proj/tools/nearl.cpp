#include <CLI11.hpp>
#include <iostream>

#include "nearl/commands.hpp"
#include "nearl/error.hpp"

namespace {

struct Options {
    std::string config;
    std::string checkpoint;
    std::string suite;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nearl: cross-modal adapters over a frozen two-tower model"};
    app.require_subcommand(1);
    Options opt;

    const auto add = [&](const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opt.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
        return sub;
    };
    CLI::App* gen = add("gen-data", "generate the synthetic dataset");
    CLI::App* train = add("train", "train the adapter bank");
    CLI::App* eval = add("eval", "score a model on the val and test splits");
    CLI::App* ablate = add("ablate", "run an ablation suite");
    CLI::App* params = add("params", "audit the trainable parameter count");
    CLI::App* analyze = add("analyze", "cosine-gap and PCA analysis of image embeddings");
    for (CLI::App* sub : {eval, analyze}) {
        sub->add_option("--checkpoint", opt.checkpoint, "NEARL1 checkpoint (overrides the config)");
    }
    ablate->add_option("--suite", opt.suite, "modules | depth | rank | layer_groups (overrides the config)");

    CLI11_PARSE(app, argc, argv);

    try {
        nearl::RunConfig config = nearl::load_run_config(opt.config);
        if (!opt.checkpoint.empty()) config.checkpoint = std::filesystem::absolute(opt.checkpoint).lexically_normal();
        if (!opt.suite.empty()) config.suite = opt.suite;

        if (gen->parsed()) nearl::cmd_gen_data(config, std::cout);
        else if (train->parsed()) nearl::cmd_train(config, std::cout);
        else if (eval->parsed()) nearl::cmd_eval(config, std::cout);
        else if (ablate->parsed()) nearl::cmd_ablate(config, std::cout);
        else if (params->parsed()) nearl::cmd_params(config, std::cout);
        else if (analyze->parsed()) nearl::cmd_analyze(config, std::cout);
    } catch (const nearl::Error& e) {
        std::cerr << "error: " << nearl::to_string(e.kind()) << ": " << e.what() << "\n";
        return nearl::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
