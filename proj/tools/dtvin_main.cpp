#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dtvin/dataset.hpp"
#include "dtvin/evaluator.hpp"
#include "dtvin/tabular.hpp"
#include "dtvin/trainer.hpp"
#include "json.hpp"

namespace mw = dtvin::mazeworld;
namespace vn = dtvin::vinet;
namespace tr = dtvin::trainer;
namespace ev = dtvin::evaluator;
using nlohmann::json;

namespace {

// Reads a flat JSON object whose keys are the long flag names of the selected subcommand.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App& root) : root_(root) {}

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const std::string& name = opt->get_lnames().front();
            if (opt->get_type_size() == 0) {
                if (opt->count() > 0 || default_also) j[name] = opt->count() > 0;
            } else if (opt->count() > 0) {
                j[name] = opt->results().front();
            } else if (default_also) {
                j[name] = opt->get_default_str();
            }
        }
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            input >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<std::string> parents;
        for (const CLI::App* sub : root_.get_subcommands()) parents = {sub->get_name()};
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_boolean()) {
                item.inputs = {value.get<bool>() ? "true" : "false"};
            } else if (value.is_string()) {
                item.inputs = {value.get<std::string>()};
            } else if (value.is_array()) {
                std::string joined;
                for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
                item.inputs = {joined};
            } else {
                item.inputs = {value.dump()};
            }
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    const CLI::App& root_;
};

struct GenArgs {
    int size = 15;
    std::size_t train = 2000;
    std::size_t val = 200;
    std::size_t test = 200;
    std::uint64_t seed = 0;
    std::string out;
    bool moore = false;
    double extra_openings = 0.0;

    json echo() const {
        return {{"size", size}, {"train", train}, {"val", val}, {"test", test}, {"seed", seed},
                {"out", out}, {"moore", moore}, {"extra-openings", extra_openings}};
    }
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::string log;
    std::string resume;
    std::string variant = "fully-dynamic";
    std::string loss = "adaptive";
    std::string normalization = "by_K";
    std::string length = "expert";
    std::string batch_unit = "grouped";
    int depth = 100;
    int jump = 10;
    int latent_actions = 4;
    bool no_softmax = false;
    int epochs = 50;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    std::size_t val_tasks = 200;
    int restarts = 1;
    int restart_epochs = 3;
    int workers = 1;

    json echo() const {
        return {{"data", data}, {"out", out}, {"log", log}, {"resume", resume}, {"variant", variant}, {"loss", loss},
                {"normalization", normalization}, {"length", length}, {"batch-unit", batch_unit}, {"depth", depth},
                {"jump", jump}, {"latent-actions", latent_actions}, {"no-softmax", no_softmax}, {"epochs", epochs},
                {"lr", lr}, {"batch", batch}, {"seed", seed}, {"val-tasks", val_tasks}, {"restarts", restarts},
                {"restart-epochs", restart_epochs}, {"workers", workers},
                {"kernel", 3}, {"conv-kernel", 3}};
    }
};

struct EvalArgs {
    std::string data;
    std::string ckpt;
    std::string report;
    std::string csv;
    std::string split = "test";
    std::string buckets;
    double noise = 0.0;
    std::size_t limit = 0;
    std::uint64_t seed = 0;
    int workers = 1;

    json echo() const {
        return {{"data", data}, {"ckpt", ckpt}, {"report", report}, {"csv", csv}, {"split", split}, {"buckets", buckets},
                {"noise", noise}, {"limit", limit}, {"seed", seed}, {"workers", workers}};
    }
};

struct GradcheckArgs {
    tr::GradcheckOptions options;
    std::string variant = "fully-dynamic";
    std::string loss = "adaptive";
    bool no_softmax = false;
    double tolerance = 1e-6;
};

struct OracleArgs {
    int size = 7;
    int steps = 20;
    std::uint64_t seed = 0;
    std::size_t mazes = 20;
    bool moore = false;
    double perturb = 0.0;
};

mw::Split parse_split(const std::string& name) {
    if (name == "train") return mw::Split::Train;
    if (name == "val") return mw::Split::Val;
    if (name == "test") return mw::Split::Test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

int run_gen(const GenArgs& a) {
    mw::DatasetSpec spec{a.size, a.train, a.val, a.test, a.seed,
                         a.moore ? mw::TransitionType::Moore : mw::TransitionType::News, a.extra_openings};
    const auto bundle = mw::build_dataset(spec);
    const auto files = mw::write_dataset_files(bundle, spec, a.out, a.echo().dump());
    std::cout << "wrote " << files.train.string() << ", " << files.val.string() << ", " << files.test.string() << ", "
              << files.manifest.string() << ", " << files.histogram.string() << "\n";
    return 0;
}

tr::TrainConfig train_config(const TrainArgs& a, const mw::Dataset& train_set) {
    tr::TrainConfig c;
    c.network.variant = vn::parse_variant(a.variant);
    c.network.apply_softmax = !a.no_softmax;
    c.network.size = train_set.size;
    c.network.depth = a.depth;
    c.network.jump = a.jump;
    c.network.latent_actions = a.latent_actions;
    c.network.actions = mw::action_count(train_set.type);
    c.network.validate();
    c.lr = a.lr;
    c.batch = a.batch;
    c.batch_unit = tr::parse_batch_unit(a.batch_unit);
    c.epochs = a.epochs;
    c.loss = tr::parse_loss(a.loss);
    c.normalization = tr::parse_normalization(a.normalization);
    c.length = tr::parse_length(a.length);
    c.seed = a.seed;
    c.val_tasks = a.val_tasks;
    c.restarts = a.restarts;
    c.restart_epochs = a.restart_epochs;
    c.workers = a.workers;
    return c;
}

int run_train(const TrainArgs& a) {
    const auto train_set = mw::read_dataset(mw::split_path(a.data, mw::Split::Train), mw::Split::Train);
    const auto val_set = mw::read_dataset(mw::split_path(a.data, mw::Split::Val), mw::Split::Val);
    if (train_set.size != val_set.size || train_set.type != val_set.type) {
        throw std::invalid_argument("train and val splits disagree on maze size or transition type");
    }
    const auto config = train_config(a, train_set);
    tr::TrainPaths paths;
    paths.checkpoint = a.out;
    paths.log = a.log.empty() ? a.out + ".log" : a.log;
    if (!a.resume.empty()) paths.resume = a.resume;
    paths.config_json = a.echo().dump();
    const auto result = tr::train(
        config, train_set, val_set, paths,
        [](const tr::EpochMetrics& m) {
            std::printf("epoch %d loss %.5f val_sr %.2f grad_l1_early %.4g nan %zu (%.1fs)\n", m.epoch, m.mean_loss,
                        m.val_sr.value_or(-1.0), m.grad_l1_early, m.nan_incidents, m.wall_seconds);
            std::fflush(stdout);
        },
        [](int candidate, double val_sr) {
            std::printf("restart candidate %d warm-up val_sr %.2f\n", candidate, val_sr);
            std::fflush(stdout);
        });
    std::printf("best val_sr %.2f at epoch %d -> %s\n", result.best_val_sr, result.best_epoch, a.out.c_str());
    return 0;
}

int run_eval(const EvalArgs& a) {
    const auto split = parse_split(a.split);
    const auto dataset = mw::read_dataset(mw::split_path(a.data, split), split);
    const auto params = vn::read_checkpoint(a.ckpt).model;
    ev::EvalOptions opt;
    opt.edges = a.buckets.empty() ? ev::default_edges(dataset.size) : ev::parse_edges(a.buckets);
    opt.noise_sigma = a.noise;
    opt.limit = a.limit;
    opt.seed = a.seed;
    opt.workers = a.workers;
    const auto report = ev::evaluate(dataset, params, opt);
    auto j = json::parse(ev::report_json(report));
    j["run_config"] = a.echo();
    {
        std::ofstream out(a.report, std::ios::binary | std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) throw std::runtime_error("cannot write report " + a.report);
    }
    if (!a.csv.empty()) {
        std::ofstream out(a.csv, std::ios::binary | std::ios::trunc);
        out << ev::report_csv(report);
        if (!out) throw std::runtime_error("cannot write report " + a.csv);
    }
    std::cout << ev::report_csv(report);
    return 0;
}

int run_gradcheck(GradcheckArgs a) {
    a.options.variant = vn::parse_variant(a.variant);
    a.options.loss = tr::parse_loss(a.loss);
    a.options.apply_softmax = !a.no_softmax;
    const auto r = tr::gradcheck(a.options);
    const bool pass = r.finite && r.max_rel_error <= a.tolerance;
    json j = {{"variant", a.variant}, {"loss", a.loss}, {"seed", a.options.seed}, {"eps", a.options.eps},
              {"max_rel_error", r.max_rel_error}, {"worst_param", r.worst_param}, {"checked", r.checked},
              {"skipped_kinks", r.skipped_kinks}, {"finite", r.finite}, {"pass", pass}};
    std::cout << j.dump() << "\n";
    return pass ? 0 : 1;
}

int run_oracle(const OracleArgs& a) {
    const auto r = vn::oracle_check(a.size, a.steps, a.seed, a.mazes,
                                    a.moore ? mw::TransitionType::Moore : mw::TransitionType::News, a.perturb);
    json j = {{"size", a.size}, {"steps", a.steps}, {"seed", a.seed}, {"mazes", r.mazes}, {"max_abs_error", r.max_abs_error},
              {"distance_mismatches", r.distance_mismatches}, {"pass", r.passed}};
    std::cout << j.dump() << "\n";
    return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("DT-VIN maze planning toolkit");
    app.require_subcommand(1);
    app.fallthrough();
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "JSON file with keys named like the subcommand flags; flags override it");
    app.config_formatter(std::make_shared<JsonConfig>(app));
    const auto kVariants = CLI::IsMember({"invariant", "state-dynamic", "obs-dynamic", "fully-dynamic"});
    const auto kLosses = CLI::IsMember({"adaptive", "full", "single", "final"});
    const std::string config_note = "Options may also come from --config FILE.json (flags win).";

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate train/val/test maze datasets");
    g->fallthrough();
    g->footer(config_note);
    g->add_option("--size", gen.size, "Maze side length M")->capture_default_str()->check(CLI::Range(5, 1000));
    g->add_option("--train", gen.train, "Training mazes")->capture_default_str();
    g->add_option("--val", gen.val, "Validation mazes")->capture_default_str();
    g->add_option("--test", gen.test, "Test mazes")->capture_default_str();
    g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_flag("--moore", gen.moore, "8-neighbour transitions instead of NEWS");
    g->add_option("--extra-openings", gen.extra_openings, "Probability of removing extra walls")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));

    TrainArgs trn;
    auto* t = app.add_subcommand("train", "Train a planning network with the highway loss");
    t->fallthrough();
    t->footer(config_note);
    t->add_option("--data", trn.data, "Dataset directory")->required();
    t->add_option("--out", trn.out, "Best-validation checkpoint path")->required();
    t->add_option("--log", trn.log, "Training log (JSON lines); default <out>.log");
    t->add_option("--resume", trn.resume, "Resume from a <out>.last state checkpoint");
    t->add_option("--variant", trn.variant, "Kernel variant")->capture_default_str()->check(kVariants);
    t->add_option("--loss", trn.loss, "Highway loss variant")->capture_default_str()->check(kLosses);
    t->add_option("--normalization", trn.normalization, "Loss normalization")->capture_default_str()->check(CLI::IsMember({"by_K", "by_K_times_D"}));
    t->add_option("--length", trn.length, "Path length estimate")->capture_default_str()->check(
        CLI::IsMember({"expert", "half", "double", "zero", "depth", "noisy", "l1"}));
    t->add_option("--batch-unit", trn.batch_unit, "Batch unit")->capture_default_str()->check(CLI::IsMember({"grouped", "positions", "mazes"}));
    t->add_option("--depth", trn.depth, "Planning depth N")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--jump", trn.jump, "Highway loss interval J")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--latent-actions", trn.latent_actions, "Latent actions")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_flag("--no-softmax", trn.no_softmax, "Disable kernel softmax normalization");
    t->add_option("--epochs", trn.epochs, "Epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
    t->add_option("--lr", trn.lr, "RMSprop learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
    t->add_option("--batch", trn.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--seed", trn.seed, "Init and shuffling seed")->capture_default_str();
    t->add_option("--val-tasks", trn.val_tasks, "Validation tasks per epoch")->capture_default_str();
    t->add_option("--restarts", trn.restarts, "Initialisations tried before committing to one (1 = none)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    t->add_option("--restart-epochs", trn.restart_epochs, "Warm-up epochs per restart candidate")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    t->add_option("--workers", trn.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    EvalArgs evl;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint by greedy rollouts");
    e->fallthrough();
    e->footer(config_note);
    e->add_option("--data", evl.data, "Dataset directory")->required();
    e->add_option("--ckpt", evl.ckpt, "Checkpoint")->required();
    e->add_option("--report", evl.report, "Report JSON path")->required();
    e->add_option("--csv", evl.csv, "Report CSV path");
    e->add_option("--split", evl.split, "Dataset split")->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
    e->add_option("--buckets", evl.buckets, "SPL bucket edges e1,e2,...; default by maze size");
    e->add_option("--noise", evl.noise, "Gaussian noise sigma on the map channel")->capture_default_str()->check(
        CLI::NonNegativeNumber);
    e->add_option("--limit", evl.limit, "Evaluate a seeded subsample of this many tasks (0 = all)")->capture_default_str();
    e->add_option("--seed", evl.seed, "Subsample and noise seed")->capture_default_str();
    e->add_option("--workers", evl.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
    c->fallthrough();
    c->footer(config_note);
    c->add_option("--size", gc.options.size, "Maze size")->capture_default_str()->check(CLI::Range(5, 64));
    c->add_option("--depth", gc.options.depth, "Planning depth")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--jump", gc.options.jump, "Highway loss interval")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--variant", gc.variant, "Kernel variant")->capture_default_str()->check(kVariants);
    c->add_option("--loss", gc.loss, "Highway loss variant")->capture_default_str()->check(kLosses);
    c->add_flag("--no-softmax", gc.no_softmax, "Disable kernel softmax");
    c->add_option("--seed", gc.options.seed, "Seed")->capture_default_str();
    c->add_option("--eps", gc.options.eps, "Finite-difference step")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--max-coords", gc.options.max_coords, "Coordinates checked per tensor")->capture_default_str();
    c->add_option("--tolerance", gc.tolerance, "Pass threshold on max relative error")->capture_default_str();
    c->add_flag("--corrupt-gradient", gc.options.corrupt, "Perturb one analytic gradient entry (negative control)");

    OracleArgs orc;
    auto* o = app.add_subcommand("oracle-check", "Check the planner against tabular value iteration");
    o->fallthrough();
    o->footer(config_note);
    o->add_option("--size", orc.size, "Maze size")->capture_default_str()->check(CLI::Range(5, 256));
    o->add_option("--steps", orc.steps, "Backups")->capture_default_str()->check(CLI::NonNegativeNumber);
    o->add_option("--seed", orc.seed, "Seed")->capture_default_str();
    o->add_option("--mazes", orc.mazes, "Mazes")->capture_default_str();
    o->add_flag("--moore", orc.moore, "8-neighbour transitions");
    o->add_option("--perturb", orc.perturb, "Add this to one kernel entry per maze")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 2;
    }

    try {
        if (g->parsed()) return run_gen(gen);
        if (t->parsed()) return run_train(trn);
        if (e->parsed()) return run_eval(evl);
        if (c->parsed()) return run_gradcheck(gc);
        if (o->parsed()) return run_oracle(orc);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 2;
}
