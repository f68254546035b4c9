#include "invargc/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace invargc;
    CLI::App app{"Granger causal discovery across environments with latent confounders"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    cli::GenerateOptions gen;
    std::uint64_t gen_seed = 0;
    auto* generate = app.add_subcommand("generate", "simulate a multi-environment benchmark dataset");
    generate->add_option("--config", gen.config, "generator config JSON")->required();
    generate->add_option("--out", gen.out, "output dataset directory")->required();
    auto* gen_seed_opt = generate->add_option("--seed", gen_seed, "random seed (overrides the config)");

    cli::FitOptions fit;
    double lambda_z = 0.0, lambda_w = 0.0;
    auto* fit_cmd = app.add_subcommand("fit", "fit a linear or nonlinear model to a dataset directory");
    fit_cmd->add_option("--data", fit.data, "dataset directory")->required();
    fit_cmd->add_option("--mode", fit.mode, "linear or nonlinear")->required();
    auto* lz_opt = fit_cmd->add_option("--lambda-z", lambda_z, "latent penalty (default scales with T)");
    fit_cmd->add_option("--alpha", fit.alpha, "within-environment share of the weight penalty, in (0, 1)")
        ->capture_default_str();
    auto* lw_opt = fit_cmd->add_option("--lambda-w", lambda_w, "weight penalty (default scales with T)");
    fit_cmd->add_option("--latents", fit.latents, "number of latent series")->capture_default_str();
    fit_cmd->add_option("--max-iters", fit.max_iters, "iteration cap, 0 for the solver default")->capture_default_str();
    fit_cmd->add_option("--tol", fit.tol, "relative convergence tolerance")->capture_default_str();
    fit_cmd->add_option("--out", fit.out, "output model.json")->required();
    fit_cmd->add_option("--seed", fit.seed, "random seed")->capture_default_str();

    cli::EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "score a fitted model against a ground-truth graph");
    eval->add_option("--model", ev.model, "model.json")->required();
    eval->add_option("--truth", ev.truth, "graph.json")->required();
    eval->add_option("--out", ev.out, "output report.json")->required();

    cli::BenchmarkOptions bench;
    std::string methods_csv = "invargc-linear,invargc-nonlinear,var-lasso";
    auto* benchmark = app.add_subcommand("benchmark", "generate, fit and evaluate over several seeds");
    benchmark->add_option("--config", bench.config, "generator config JSON")->required();
    benchmark->add_option("--seeds", bench.seeds, "number of seeds, run as 0..n-1")->capture_default_str();
    benchmark->add_option("--methods", methods_csv, "comma-separated methods")->capture_default_str();
    benchmark->add_option("--out-md", bench.out_md, "Markdown table")->required();
    benchmark->add_option("--out-json", bench.out_json, "JSON report")->required();

    std::vector<std::string> faults;
    auto* check = app.add_subcommand("check", "run the numerical self-test battery");
    check->add_option("--inject-fault", faults)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kValidation;
    }

    if (*generate) {
        if (*gen_seed_opt) gen.seed = gen_seed;
        return cli::cmd_generate(gen, std::cout, std::cerr);
    }
    if (*fit_cmd) {
        if (*lz_opt) fit.lambda_z = lambda_z;
        if (*lw_opt) fit.lambda_w = lambda_w;
        return cli::cmd_fit(fit, std::cout, std::cerr);
    }
    if (*eval) return cli::cmd_eval(ev, std::cout, std::cerr);
    if (*benchmark) {
        return cli::guarded(std::cerr, [&] {
            bench.methods = cli::parse_methods(methods_csv);
            return cli::cmd_benchmark(bench, std::cout, std::cerr);
        });
    }
    return cli::guarded(std::cerr, [&] { return cli::cmd_check(cli::parse_faults(faults), std::cout, std::cerr); });
}
