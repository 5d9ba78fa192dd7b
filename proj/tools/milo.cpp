#include "milo/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    using namespace milo::cli;

    CLI::App app{"Learning-based mixed-integer optimization: data generation, training, evaluation"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* g = app.add_subcommand("generate", "Sample coefficients and train/val/test instance sets");
    g->add_option("--problem", gen.problem, "Problem family")
        ->check(CLI::IsMember({"iqp", "inp", "mirb", "rb2d"}, CLI::ignore_case));
    g->add_option("--n", gen.n, "Number of integer variables (MIRB: per block)");
    g->add_option("--m", gen.m, "Number of constraints (IQP/INP)");
    g->add_option("--seed", gen.seed, "Master seed");
    g->add_option("--train", gen.train, "Training instances");
    g->add_option("--val", gen.val, "Validation instances");
    g->add_option("--test", gen.test, "Test instances");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_flag("--stamp", gen.stamp, "Record a timestamp in the manifest");

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train the solution map and correction layer");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--method", tr.method, "Correction method")
        ->check(CLI::IsMember({"rc", "lt", "rs", "rl"}, CLI::ignore_case));
    t->add_option("--lambda", tr.lambda, "Penalty weight");
    t->add_option("--lr", tr.lr, "Learning rate");
    t->add_option("--batch", tr.batch, "Batch size");
    t->add_option("--epochs", tr.epochs, "Maximum epochs");
    t->add_option("--patience", tr.patience, "Early-stopping patience in epochs");
    t->add_option("--seed", tr.seed, "Initialization and shuffling seed");
    t->add_option("--hidden", tr.hidden, "Hidden width (0 = family default)");
    t->add_option("--temperature", tr.temperature, "Gumbel temperature (rc)");
    t->add_option("--slope", tr.slope, "Threshold sigmoid slope (lt)");
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_flag("--stamp", tr.stamp, "Record a timestamp in the manifest");

    EvalOptions ev;
    std::string project = "on";
    auto* e = app.add_subcommand("eval", "Evaluate trained weights on the test split");
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--weights", ev.weights, "Weights container")->required();
    e->add_option("--method", ev.method, "Expected correction method");
    e->add_option("--project", project, "Run feasibility projection")->check(CLI::IsMember({"on", "off"}));
    e->add_option("--proj-step", ev.proj_step, "Projection step size");
    e->add_option("--proj-max-iter", ev.proj_max_iter, "Projection iteration cap");
    e->add_option("--tol", ev.tol, "Feasibility tolerance");
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_flag("!--no-timing", ev.timing, "Write zero times for byte-stable output");
    e->add_flag("--stamp", ev.stamp, "Record a timestamp in the manifest");

    BenchOptions be;
    auto* b = app.add_subcommand("bench", "Compare methods on the test split");
    b->add_option("--data", be.data, "Dataset directory")->required();
    b->add_option("--models", be.models, "Directory holding <method>/weights.milo");
    b->add_option("--methods", be.methods, "Methods: rc, lt, rs, rl (append -p to project), rr, oracle")
        ->delimiter(',');
    b->add_option("--tol", be.tol, "Feasibility tolerance");
    b->add_option("--proj-step", be.proj_step, "Projection step size");
    b->add_option("--proj-max-iter", be.proj_max_iter, "Projection iteration cap");
    b->add_option("--oracle-window", be.oracle_window, "Oracle half-width per integer variable");
    b->add_option("--out", be.out, "Output directory")->required();
    b->add_flag("!--no-timing", be.timing, "Write zero times for byte-stable output");
    b->add_flag("--stamp", be.stamp, "Record a timestamp in the manifest");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*g) return run_generate(gen);
        if (*t) return run_train(tr);
        if (*e) {
            ev.project = project == "on";
            return run_eval(ev);
        }
        if (*b) return run_bench(be, std::cout);
    } catch (const std::exception& ex) {
        std::cerr << "milo: " << ex.what() << '\n';
        return 1;
    }
    return 1;
}
