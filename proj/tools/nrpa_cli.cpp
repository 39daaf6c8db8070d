#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "nrpa/evaluation.hpp"

using namespace nrpa::cli;

int main(int argc, char** argv) {
    CLI::App app{"NRPA review-based rating prediction"};
    app.require_subcommand(1);

    PrepareArgs prepare;
    auto* p = app.add_subcommand("prepare", "parse raw reviews into a prepared dataset");
    p->add_option("--input", prepare.input, "raw review file")->required();
    p->add_option("--format", prepare.format, "amazon-json or csv")->capture_default_str();
    p->add_option("--out", prepare.out, "output directory")->required();
    p->add_option("--seed", prepare.seed, "split seed")->capture_default_str();
    p->add_option("--min-count", prepare.min_count, "minimum token frequency")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train a model");
    t->add_option("--data", train.data, "prepared dataset directory")->required();
    t->add_option("--config", train.config, "config file")->required();
    t->add_option("--out", train.out, "run directory")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "score a checkpoint on a split");
    e->add_option("--checkpoint", eval.checkpoint)->required();
    e->add_option("--data", eval.data)->required();
    e->add_option("--split", eval.split, "val or test")->capture_default_str();
    e->add_option("--ablation", eval.ablation, "e.g. word=uniform,review=uniform");
    e->add_flag("--clip", eval.clip, "clamp predictions to [1,5]");
    e->add_option("--threads", eval.threads, "evaluation threads")->capture_default_str();
    e->add_option("--metrics", eval.metrics, "metrics CSV path");
    e->add_option("--trace", eval.trace, "write per-pair attention JSONL");

    AblateArgs ablate;
    auto* a = app.add_subcommand("ablate", "train and score every attention variant");
    a->add_option("--data", ablate.data)->required();
    a->add_option("--config", ablate.config)->required();
    a->add_option("--out", ablate.out, "CSV path")->required();

    SweepArgs sweep;
    sweep.dims = nrpa::kDefaultIdDims;
    auto* s = app.add_subcommand("sweep", "train across id embedding sizes");
    s->add_option("--data", sweep.data)->required();
    s->add_option("--config", sweep.config)->required();
    s->add_option("--dims", sweep.dims, "comma list")->delimiter(',')->capture_default_str();
    s->add_option("--out", sweep.out, "CSV path")->required();

    InspectArgs inspect;
    auto* i = app.add_subcommand("inspect", "show attention weights for one pair");
    i->add_option("--checkpoint", inspect.checkpoint)->required();
    i->add_option("--data", inspect.data)->required();
    i->add_option("--user", inspect.user)->required();
    i->add_option("--item", inspect.item)->required();
    i->add_option("--top", inspect.top, "words shown per review")->capture_default_str();
    i->add_option("--trace", inspect.trace, "also write the JSON trace");

    SynthArgs synth;
    auto* y = app.add_subcommand("synth", "write a synthetic two-aspect corpus as CSV");
    y->add_option("--seed", synth.seed)->capture_default_str();
    y->add_option("--users", synth.users)->capture_default_str();
    y->add_option("--items", synth.items)->capture_default_str();
    y->add_option("--per-user", synth.per_user)->capture_default_str();
    y->add_option("--out", synth.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*p) return cmd_prepare(prepare, std::cout, std::cerr);
    if (*t) return cmd_train(train, std::cout, std::cerr);
    if (*e) return cmd_eval(eval, std::cout, std::cerr);
    if (*a) return cmd_ablate(ablate, std::cout, std::cerr);
    if (*s) return cmd_sweep(sweep, std::cout, std::cerr);
    if (*i) return cmd_inspect(inspect, std::cout, std::cerr);
    if (*y) return cmd_synth(synth, std::cout, std::cerr);
    return kExitUsage;
}
