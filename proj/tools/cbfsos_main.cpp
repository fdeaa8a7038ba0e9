#include <string>

#include <CLI11.hpp>

#include "cbfsos/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"polynomial control barrier function toolkit"};
    std::string command, file;
    cbfsos::CliFlags flags;
    app.add_option("command", command, "one of: verify, verify-hocbf, verify-multi, synth-descent, synth-compact, simulate, export-sdpa")
        ->required();
    app.add_option("file", file, "problem description file")->required();
    app.add_option("--out", flags.out, "output directory for reports and artifacts");
    app.add_option("--degree", flags.degree, "multiplier degree override");
    app.add_option("--tol", flags.tol, "interior-point tolerance override");
    app.add_option("--max-iter", flags.max_iter, "interior-point iteration cap override");
    auto* seed_opt = app.add_option("--seed", flags.seed, "sampling seed override");
    app.add_option("--jobs", flags.jobs, "worker count (accepted; solves run sequentially)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    flags.seed_set = seed_opt->count() > 0;
    return cbfsos::run(command, file, flags);
}
