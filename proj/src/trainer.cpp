#include "dtvin/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dtvin/evaluator.hpp"
#include "dtvin/parallel.hpp"
#include "json.hpp"

namespace dtvin::trainer {
namespace {

template <typename E, std::size_t N>
E parse_named(const std::string& name, const E (&values)[N], const char* (*to_name)(E), const char* what) {
    std::string options;
    for (E v : values) {
        if (name == to_name(v)) {
            return v;
        }
        options += options.empty() ? "" : ", ";
        options += to_name(v);
    }
    throw std::invalid_argument(std::string("unknown ") + what + " '" + name + "' (expected " + options + ")");
}

constexpr LossVariant kLosses[] = {LossVariant::AdaptiveHighway, LossVariant::FullHighway, LossVariant::SingleHighway,
                                   LossVariant::FinalOnly};
constexpr Normalization kNorms[] = {Normalization::ByK, Normalization::ByKTimesD};
constexpr LengthEstimate kLengths[] = {LengthEstimate::Expert, LengthEstimate::Half,          LengthEstimate::Double,
                                       LengthEstimate::Zero,   LengthEstimate::Depth,         LengthEstimate::NoisyGaussian,
                                       LengthEstimate::Manhattan};
constexpr BatchUnit kUnits[] = {BatchUnit::Positions, BatchUnit::Mazes, BatchUnit::Grouped};

constexpr std::uint64_t kEpochStream = 0x65706f6368ull;
constexpr std::uint64_t kValStream = 0x76616cull;
constexpr std::uint64_t kLengthStream = 0x6c656eull;
constexpr std::uint64_t kRestartStream = 0x72657374ull;

}  // namespace

const char* loss_name(LossVariant v) {
    switch (v) {
        case LossVariant::AdaptiveHighway: return "adaptive";
        case LossVariant::FullHighway: return "full";
        case LossVariant::SingleHighway: return "single";
        case LossVariant::FinalOnly: return "final";
    }
    return "?";
}
LossVariant parse_loss(const std::string& name) {
    return parse_named(name, kLosses, loss_name, "loss variant");
}

const char* normalization_name(Normalization n) {
    return n == Normalization::ByK ? "by_K" : "by_K_times_D";
}
Normalization parse_normalization(const std::string& name) {
    return parse_named(name, kNorms, normalization_name, "normalization");
}

const char* length_name(LengthEstimate e) {
    switch (e) {
        case LengthEstimate::Expert: return "expert";
        case LengthEstimate::Half: return "half";
        case LengthEstimate::Double: return "double";
        case LengthEstimate::Zero: return "zero";
        case LengthEstimate::Depth: return "depth";
        case LengthEstimate::NoisyGaussian: return "noisy";
        case LengthEstimate::Manhattan: return "l1";
    }
    return "?";
}
LengthEstimate parse_length(const std::string& name) {
    return parse_named(name, kLengths, length_name, "length estimate");
}

const char* batch_unit_name(BatchUnit u) {
    switch (u) {
        case BatchUnit::Positions: return "positions";
        case BatchUnit::Mazes: return "mazes";
        case BatchUnit::Grouped: return "grouped";
    }
    return "?";
}
BatchUnit parse_batch_unit(const std::string& name) {
    return parse_named(name, kUnits, batch_unit_name, "batch unit");
}

std::vector<int> active_layers(std::span<const int> recorded, int length, LossVariant variant) {
    if (recorded.empty()) {
        throw std::invalid_argument("active_layers: no recorded layers");
    }
    std::vector<int> out;
    switch (variant) {
        case LossVariant::AdaptiveHighway:
            for (int n : recorded) {
                if (n >= length) {
                    out.push_back(n);
                }
            }
            break;
        case LossVariant::FullHighway: out.assign(recorded.begin(), recorded.end()); break;
        case LossVariant::SingleHighway:
            for (int n : recorded) {
                if (n >= length) {
                    out.push_back(n);
                    break;
                }
            }
            break;
        case LossVariant::FinalOnly: break;
    }
    if (out.empty()) {
        out.push_back(recorded.back());
    }
    return out;
}

std::size_t count_terms(std::span<const int> recorded, std::span<const TrainSample> samples, LossVariant variant) {
    std::size_t k = 0;
    for (const auto& s : samples) {
        k += active_layers(recorded, s.length, variant).size();
    }
    return k;
}

NodeId highway_terms(DiffGraph& graph, const vinet::PlanNodes& planned, std::span<const TrainSample> samples,
                     const vinet::ParamNodes& params, LossVariant variant, std::size_t& terms) {
    if (samples.empty()) {
        throw std::invalid_argument("highway_loss: empty sample set");
    }
    std::vector<int> layers;
    for (const auto& [n, id] : planned.recorded) {
        layers.push_back(n);
    }
    std::vector<NodeId> ce;
    for (const auto& s : samples) {
        for (int n : active_layers(layers, s.length, variant)) {
            const auto idx = static_cast<std::size_t>(std::find(layers.begin(), layers.end(), n) - layers.begin());
            const NodeId logits = vinet::policy_logits(graph, planned.recorded[idx].second, s.position, params);
            ce.push_back(graph.cross_entropy(logits, static_cast<std::size_t>(s.label)));
        }
    }
    terms = ce.size();
    return graph.weighted_sum(ce, 1.0);
}

HighwayLoss highway_loss(DiffGraph& graph, const vinet::PlanNodes& planned, std::span<const TrainSample> samples,
                         const vinet::ParamNodes& params, LossVariant variant, Normalization normalization) {
    std::size_t k = 0;
    const NodeId sum = highway_terms(graph, planned, samples, params, variant, k);
    double denom = static_cast<double>(k);
    if (normalization == Normalization::ByKTimesD) {
        denom *= static_cast<double>(samples.size());
    }
    const NodeId ids[] = {sum};
    return HighwayLoss{graph.weighted_sum(ids, 1.0 / denom), k};
}

int estimate_length(LengthEstimate estimate, int expert, Cell pos, Cell goal, int depth, std::mt19937_64& rng) {
    switch (estimate) {
        case LengthEstimate::Expert: return expert;
        case LengthEstimate::Half: return std::max(1, (expert + 1) / 2);
        case LengthEstimate::Double: return 2 * expert;
        case LengthEstimate::Zero: return 0;
        case LengthEstimate::Depth: return depth;
        case LengthEstimate::NoisyGaussian: {
            const double e = std::normal_distribution<double>(1.0, 1.0)(rng);
            return static_cast<int>(std::lround(expert * std::max(e, 0.0)));
        }
        case LengthEstimate::Manhattan: return std::abs(pos.row - goal.row) + std::abs(pos.col - goal.col);
    }
    return expert;
}

std::vector<TrainSample> make_samples(const mazeworld::Dataset& dataset, LengthEstimate estimate, int depth,
                                      std::uint64_t seed) {
    std::mt19937_64 rng(mazeworld::derive_seed(seed, kLengthStream));
    std::vector<TrainSample> out;
    for (std::size_t m = 0; m < dataset.tasks.size(); ++m) {
        const auto& task = dataset.tasks[m];
        for (const Cell& c : task.start_cells()) {
            const int l = task.distance(c);
            out.push_back(TrainSample{m, c, task.label(c), estimate_length(estimate, l, c, task.goal, depth, rng)});
        }
    }
    return out;
}

bool rmsprop_step(std::map<std::string, NdArray>& params, const std::map<std::string, NdArray>& grads, RmsPropState& state,
                  double lr, double alpha, double eps) {
    for (const auto& [name, g] : grads) {
        if (!params.contains(name) || params.at(name).shape() != g.shape()) {
            throw std::invalid_argument("rmsprop_step: gradient '" + name + "' does not match a parameter");
        }
        if (!g.all_finite()) {
            ++state.rejected;
            return false;
        }
    }
    for (const auto& [name, g] : grads) {
        auto& theta = params.at(name);
        auto [it, fresh] = state.square_avg.try_emplace(name, g.shape());
        auto& s = it->second;
        for (std::size_t k = 0; k < g.size(); ++k) {
            s[k] = alpha * s[k] + (1.0 - alpha) * g[k] * g[k];
            theta[k] -= lr * g[k] / (std::sqrt(s[k]) + eps);
        }
    }
    return true;
}

BatchResult batch_gradient(const vinet::ModelParams& params, const mazeworld::Dataset& dataset,
                           std::span<const TrainSample> batch, const TrainConfig& config) {
    BatchResult result;
    if (batch.empty()) {
        throw std::invalid_argument("batch_gradient: empty batch");
    }
    // Groups of consecutive samples on the same maze.
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    for (std::size_t k = 0; k < batch.size();) {
        std::size_t e = k;
        while (e < batch.size() && batch[e].maze == batch[k].maze) {
            ++e;
        }
        groups.emplace_back(k, e);
        k = e;
    }
    std::vector<int> layers;
    for (int n = config.network.jump; n <= config.network.depth; n += config.network.jump) {
        layers.push_back(n);
    }
    if (layers.empty() || layers.back() != config.network.depth) {
        layers.push_back(config.network.depth);
    }
    result.terms = count_terms(layers, batch, config.loss);
    double denom = static_cast<double>(result.terms);
    if (config.normalization == Normalization::ByKTimesD) {
        denom *= static_cast<double>(batch.size());
    }

    struct Slot {
        double loss = 0.0;
        double l1 = 0.0;
        bool finite = true;
        std::map<std::string, NdArray> grads;
    };
    std::vector<Slot> slots(groups.size());
    parallel_for(groups.size(), config.workers, [&](std::size_t g) {
        auto& slot = slots[g];
        const auto samples = batch.subspan(groups[g].first, groups[g].second - groups[g].first);
        const auto& task = dataset.tasks.at(samples.front().maze);
        try {
            DiffGraph graph;
            const auto p = vinet::add_params(graph, params);
            const NodeId obs = graph.constant(vinet::make_observation(task).stacked());
            const auto planned = vinet::plan(graph, obs, p, config.network);
            std::size_t k = 0;
            const NodeId sum = highway_terms(graph, planned, samples, p, config.loss, k);
            slot.loss = graph.value(sum)[0] / denom;
            graph.backward(sum, 1.0 / denom);
            const std::size_t early = std::min(config.telemetry_layers, planned.recorded.size());
            for (std::size_t i = 0; i < early; ++i) {
                slot.l1 += graph.grad(planned.recorded[i].second).abs_sum();
            }
            slot.l1 /= static_cast<double>(std::max<std::size_t>(early, 1));
            for (const auto& [name, id] : p) {
                slot.grads.emplace(name, graph.grad(id));
            }
            slot.finite = std::isfinite(slot.loss) && std::isfinite(slot.l1);
        } catch (const vinet::NonFiniteValue&) {
            slot.finite = false;
        } catch (const gradcore::NumericError&) {
            slot.finite = false;
        }
    });

    for (auto& slot : slots) {
        if (!slot.finite) {
            result.finite = false;
            continue;
        }
        result.loss += slot.loss;
        result.grad_l1_early += slot.l1;
        for (auto& [name, g] : slot.grads) {
            auto [it, fresh] = result.grads.try_emplace(name, std::move(g));
            if (!fresh) {
                for (std::size_t k = 0; k < g.size(); ++k) {
                    it->second[k] += g[k];
                }
            }
        }
    }
    for (const auto& [name, g] : result.grads) {
        result.finite = result.finite && g.all_finite();
    }
    return result;
}

std::vector<std::vector<TrainSample>> make_batches(std::span<const TrainSample> samples, const TrainConfig& config,
                                                   std::mt19937_64& rng) {
    if (config.batch == 0) {
        throw std::invalid_argument("batch size must be positive");
    }
    std::vector<std::vector<TrainSample>> batches;
    auto by_maze = [](const TrainSample& a, const TrainSample& b) { return a.maze < b.maze; };
    if (config.batch_unit == BatchUnit::Positions) {
        std::vector<TrainSample> order(samples.begin(), samples.end());
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k = 0; k < order.size(); k += config.batch) {
            std::vector<TrainSample> b(order.begin() + static_cast<long>(k),
                                       order.begin() + static_cast<long>(std::min(order.size(), k + config.batch)));
            std::stable_sort(b.begin(), b.end(), by_maze);
            batches.push_back(std::move(b));
        }
        return batches;
    }
    std::map<std::size_t, std::vector<TrainSample>> per_maze;
    for (const auto& s : samples) {
        per_maze[s.maze].push_back(s);
    }
    std::vector<std::size_t> mazes;
    for (const auto& [m, list] : per_maze) {
        mazes.push_back(m);
    }
    std::shuffle(mazes.begin(), mazes.end(), rng);
    if (config.batch_unit == BatchUnit::Grouped) {
        std::vector<TrainSample> order;
        for (std::size_t m : mazes) {
            auto& list = per_maze[m];
            std::shuffle(list.begin(), list.end(), rng);
            order.insert(order.end(), list.begin(), list.end());
        }
        for (std::size_t k = 0; k < order.size(); k += config.batch) {
            std::vector<TrainSample> b(order.begin() + static_cast<long>(k),
                                       order.begin() + static_cast<long>(std::min(order.size(), k + config.batch)));
            std::stable_sort(b.begin(), b.end(), by_maze);
            batches.push_back(std::move(b));
        }
        return batches;
    }
    for (std::size_t k = 0; k < mazes.size(); k += config.batch) {
        std::vector<std::size_t> chunk(mazes.begin() + static_cast<long>(k),
                                       mazes.begin() + static_cast<long>(std::min(mazes.size(), k + config.batch)));
        std::sort(chunk.begin(), chunk.end());
        std::vector<TrainSample> b;
        for (std::size_t m : chunk) {
            b.insert(b.end(), per_maze[m].begin(), per_maze[m].end());
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

EpochMetrics train_epoch(vinet::ModelParams& params, RmsPropState& state, const mazeworld::Dataset& dataset,
                         std::span<const TrainSample> samples, const TrainConfig& config, int epoch) {
    if (samples.empty()) {
        throw std::invalid_argument("train_epoch: no training samples");
    }
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(mazeworld::derive_seed(config.seed, kEpochStream, static_cast<std::uint64_t>(epoch)));
    const auto batches = make_batches(samples, config, rng);
    EpochMetrics m;
    m.epoch = epoch;
    double loss_sum = 0.0, l1_sum = 0.0;
    std::size_t finite_batches = 0;
    for (const auto& batch : batches) {
        auto r = batch_gradient(params, dataset, batch, config);
        if (!r.finite) {
            ++m.nan_incidents;
            ++m.rejected;
            ++state.rejected;
            continue;
        }
        if (!rmsprop_step(params.tensors, r.grads, state, config.lr, config.rms_alpha, config.rms_eps)) {
            ++m.nan_incidents;
            ++m.rejected;
            continue;
        }
        ++m.steps;
        ++finite_batches;
        loss_sum += r.loss;
        l1_sum += r.grad_l1_early;
        m.grad_l1_early_max = std::max(m.grad_l1_early_max, r.grad_l1_early);
    }
    m.failed = m.steps == 0;
    m.mean_loss = finite_batches ? loss_sum / static_cast<double>(finite_batches) : std::nan("");
    m.grad_l1_early = finite_batches ? l1_sum / static_cast<double>(finite_batches) : std::nan("");
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

std::filesystem::path last_checkpoint_path(const std::filesystem::path& best) {
    auto p = best;
    p += ".last";
    return p;
}

namespace {

nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

vinet::Checkpoint state_checkpoint(const vinet::ModelParams& params, const RmsPropState& state, int epoch, double best_sr,
                                   int best_epoch) {
    vinet::Checkpoint ck{params, {}};
    for (const auto& [name, s] : state.square_avg) {
        ck.extra.emplace("opt.square_avg." + name, s);
    }
    ck.extra.emplace("meta.epoch", NdArray::scalar(epoch));
    ck.extra.emplace("meta.best_val_sr", NdArray::scalar(best_sr));
    ck.extra.emplace("meta.best_epoch", NdArray::scalar(best_epoch));
    ck.extra.emplace("meta.rejected", NdArray::scalar(static_cast<double>(state.rejected)));
    return ck;
}

void check_network(const vinet::NetworkConfig& net, const mazeworld::Dataset& ds, const char* what) {
    if (net.size != ds.size) {
        throw std::invalid_argument(std::string(what) + " mazes are " + std::to_string(ds.size) + "x" +
                                    std::to_string(ds.size) + " but the network is configured for M=" +
                                    std::to_string(net.size));
    }
    if (net.actions != mazeworld::action_count(ds.type)) {
        throw std::invalid_argument(std::string(what) + " set uses " + mazeworld::transition_name(ds.type) +
                                    " moves but the policy head has " + std::to_string(net.actions) + " actions");
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, const mazeworld::Dataset& train_set, const mazeworld::Dataset& val_set,
                  const TrainPaths& paths, const EpochCallback& on_epoch, const RestartCallback& on_restart) {
    config.network.validate();
    check_network(config.network, train_set, "training");
    check_network(config.network, val_set, "validation");
    if (config.epochs < 0) {
        throw std::invalid_argument("epochs must be non-negative");
    }
    if (config.restarts < 1) {
        throw std::invalid_argument("restarts must be at least 1");
    }

    TrainResult result;
    RmsPropState state;
    vinet::ModelParams params;
    int first_epoch = 1;
    if (paths.resume) {
        auto ck = vinet::read_checkpoint(*paths.resume);
        params = std::move(ck.model);
        if (params.config.variant != config.network.variant || params.config.size != config.network.size ||
            params.config.depth != config.network.depth || params.config.jump != config.network.jump ||
            params.config.apply_softmax != config.network.apply_softmax) {
            throw std::invalid_argument("resume checkpoint " + paths.resume->string() + " was trained with a different network");
        }
        for (auto& [name, t] : ck.extra) {
            const std::string prefix = "opt.square_avg.";
            if (name.starts_with(prefix)) {
                state.square_avg.emplace(name.substr(prefix.size()), t);
            }
        }
        first_epoch = static_cast<int>(ck.extra.at("meta.epoch")[0]) + 1;
        result.best_val_sr = ck.extra.at("meta.best_val_sr")[0];
        result.best_epoch = static_cast<int>(ck.extra.at("meta.best_epoch")[0]);
        state.rejected = static_cast<std::size_t>(ck.extra.at("meta.rejected")[0]);
        result.best = std::filesystem::exists(paths.checkpoint) ? vinet::read_checkpoint(paths.checkpoint).model : params;
    } else {
        params = vinet::init_params(config.network, config.seed);
        result.best = params;
    }

    const auto samples = make_samples(train_set, config.length, config.network.depth, config.seed);
    const auto val_tasks =
        evaluator::select_tasks(val_set, config.val_tasks, mazeworld::derive_seed(config.seed, kValStream));

    if (!paths.log.empty() && !paths.resume) {
        std::ofstream(paths.log, std::ios::trunc);
    }
    {
        auto sidecar = paths.checkpoint;
        sidecar += ".json";
        std::ofstream out(sidecar, std::ios::trunc);
        out << nlohmann::json::parse(paths.config_json).dump(2) << '\n';
        if (!out) {
            throw std::runtime_error("cannot write " + sidecar.string());
        }
    }

    if (config.epochs == 0 || first_epoch > config.epochs) {
        if (!paths.resume) {
            vinet::write_checkpoint(paths.checkpoint, vinet::Checkpoint{params, {}});
            vinet::write_checkpoint(last_checkpoint_path(paths.checkpoint), state_checkpoint(params, state, 0, -1.0, 0));
        }
        return result;
    }

    auto run_epoch = [&](vinet::ModelParams& p, RmsPropState& st, int epoch) {
        auto m = train_epoch(p, st, train_set, samples, config, epoch);
        m.val_sr = evaluator::success_rate(val_set, val_tasks, p, config.workers);
        return m;
    };
    auto log_epoch = [&](const EpochMetrics& m) {
        if (!paths.log.empty()) {
            nlohmann::json line = {{"epoch", m.epoch},
                                   {"mean_loss", number_or_null(m.mean_loss)},
                                   {"grad_l1_early", number_or_null(m.grad_l1_early)},
                                   {"grad_l1_early_max", number_or_null(m.grad_l1_early_max)},
                                   {"nan_incidents", m.nan_incidents},
                                   {"steps", m.steps},
                                   {"failed", m.failed},
                                   {"val_sr", *m.val_sr},
                                   {"wall_seconds", m.wall_seconds}};
            std::ofstream log(paths.log, std::ios::app);
            log << line.dump() << '\n';
            if (!log) {
                throw std::runtime_error("cannot append to training log " + paths.log.string());
            }
        }
        result.history.push_back(m);
        if (on_epoch) {
            on_epoch(m);
        }
    };

    if (!paths.resume && config.restarts > 1) {
        const int warmup = std::min(config.epochs, std::max(1, config.restart_epochs));
        struct Candidate {
            vinet::ModelParams params;
            RmsPropState state;
            std::vector<EpochMetrics> history;
            vinet::ModelParams best;
            double best_sr = -1.0;
            int best_epoch = 0;
        };
        std::optional<Candidate> chosen;
        for (int r = 0; r < config.restarts; ++r) {
            Candidate c;
            c.params = r == 0 ? params : vinet::init_params(config.network, mazeworld::derive_seed(config.seed, kRestartStream, r));
            c.best = c.params;
            for (int epoch = 1; epoch <= warmup; ++epoch) {
                auto m = run_epoch(c.params, c.state, epoch);
                if (*m.val_sr > c.best_sr) {
                    c.best_sr = *m.val_sr;
                    c.best_epoch = epoch;
                    c.best = c.params;
                }
                c.history.push_back(m);
            }
            if (on_restart) {
                on_restart(r, *c.history.back().val_sr);
            }
            if (!chosen || *c.history.back().val_sr > *chosen->history.back().val_sr) {
                chosen = std::move(c);
            }
        }
        params = std::move(chosen->params);
        state = std::move(chosen->state);
        result.best = std::move(chosen->best);
        result.best_val_sr = chosen->best_sr;
        result.best_epoch = chosen->best_epoch;
        vinet::write_checkpoint(paths.checkpoint, vinet::Checkpoint{result.best, {}});
        vinet::write_checkpoint(last_checkpoint_path(paths.checkpoint),
                                state_checkpoint(params, state, warmup, result.best_val_sr, result.best_epoch));
        for (const auto& m : chosen->history) {
            log_epoch(m);
        }
        first_epoch = warmup + 1;
    }

    for (int epoch = first_epoch; epoch <= config.epochs; ++epoch) {
        auto m = run_epoch(params, state, epoch);
        if (*m.val_sr > result.best_val_sr) {
            result.best_val_sr = *m.val_sr;
            result.best_epoch = epoch;
            result.best = params;
            vinet::write_checkpoint(paths.checkpoint, vinet::Checkpoint{params, {}});
        }
        vinet::write_checkpoint(last_checkpoint_path(paths.checkpoint),
                                state_checkpoint(params, state, epoch, result.best_val_sr, result.best_epoch));
        log_epoch(m);
    }
    return result;
}

gradcore::FdReport gradcheck(const GradcheckOptions& options) {
    vinet::NetworkConfig net;
    net.variant = options.variant;
    net.apply_softmax = options.apply_softmax;
    net.size = options.size;
    net.depth = options.depth;
    net.jump = options.jump;
    const auto params = vinet::init_params(net, options.seed);
    auto maze = mazeworld::generate_maze(options.size, mazeworld::derive_seed(options.seed, 0x67726164ull), 0.3);
    auto task = mazeworld::make_task(std::move(maze.grid), maze.goal, mazeworld::TransitionType::News);
    mazeworld::Dataset ds;
    ds.size = options.size;
    ds.tasks.push_back(std::move(task));
    const auto samples = make_samples(ds, LengthEstimate::Expert, options.depth, options.seed);

    DiffGraph graph;
    const auto p = vinet::add_params(graph, params);
    const auto planned = vinet::plan(graph, graph.constant(vinet::make_observation(ds.tasks[0]).stacked()), p, net);
    const auto loss = highway_loss(graph, planned, samples, p, options.loss, Normalization::ByK);
    gradcore::FdOptions fd;
    fd.eps = options.eps;
    fd.seed = options.seed;
    fd.max_coords_per_param = options.max_coords;
    if (options.corrupt) {
        fd.analytic_hook = [](const std::string&, NdArray& g) { g[0] += 0.1 * (1.0 + std::abs(g[0])); };
    }
    return gradcore::finite_difference_check(graph, loss.loss, fd);
}

}  // namespace dtvin::trainer
