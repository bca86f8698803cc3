#include "dtvin/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "dtvin/parallel.hpp"
#include "json.hpp"

namespace dtvin::evaluator {
namespace {

std::optional<double> percent(std::size_t part, std::size_t whole) {
    if (whole == 0) {
        return std::nullopt;
    }
    return 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

nlohmann::json rate_json(std::optional<double> v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string rate_csv(std::optional<double> v) {
    return v ? nlohmann::json(*v).dump() : std::string();
}

}  // namespace

std::optional<double> Bucket::sr() const {
    return percent(successes, count);
}
std::optional<double> Bucket::opt_rate() const {
    return percent(optimal, count);
}
std::optional<double> EvalReport::sr() const {
    return percent(successes, count);
}
std::optional<double> EvalReport::opt_rate() const {
    return percent(optimal, count);
}

RolloutOutcome rollout(const mazeworld::MazeTask& task, Cell start, const Policy& policy) {
    if (!task.grid.is_road(start)) {
        throw std::invalid_argument("rollout: start (" + std::to_string(start.row) + "," + std::to_string(start.col) +
                                    ") is not a road cell");
    }
    const auto mv = mazeworld::moves(task.type);
    const int limit = task.size() * task.size();
    RolloutOutcome out;
    out.spl = task.distance(start);
    Cell cur = start;
    while (cur != task.goal && out.steps < limit) {
        const int a = policy(cur);
        if (a >= 0 && static_cast<std::size_t>(a) < mv.size()) {
            const Cell next{cur.row + mv[static_cast<std::size_t>(a)].drow, cur.col + mv[static_cast<std::size_t>(a)].dcol};
            if (task.grid.is_road(next)) {
                cur = next;
            }
        }
        ++out.steps;
    }
    out.success = cur == task.goal;
    out.optimal = out.success && out.steps == out.spl;
    return out;
}

Policy greedy_policy(const vinet::NdArray& value_map, const vinet::ModelParams& params) {
    return [&value_map, &params](Cell c) {
        const auto logits = vinet::policy_logits(value_map, c, params);
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    };
}

namespace {

vinet::Observation observe(const mazeworld::MazeTask& task, double noise_sigma, std::mt19937_64& rng) {
    if (noise_sigma == 0.0) {
        return vinet::make_observation(task);
    }
    return vinet::make_observation(mazeworld::add_observation_noise(task.grid, noise_sigma, rng), task.goal);
}

void check_compatible(const mazeworld::Dataset& dataset, const vinet::ModelParams& params) {
    if (params.config.size != dataset.size) {
        throw std::invalid_argument("checkpoint was trained for M=" + std::to_string(params.config.size) +
                                    " but the dataset has M=" + std::to_string(dataset.size));
    }
    if (params.config.actions != mazeworld::action_count(dataset.type)) {
        throw std::invalid_argument("checkpoint policy has " + std::to_string(params.config.actions) +
                                    " actions but the dataset uses " + mazeworld::transition_name(dataset.type) + " moves");
    }
}

// A planner that diverges yields a policy that never moves.
Policy planned_policy(const vinet::Observation& obs, const vinet::ModelParams& params) {
    std::shared_ptr<vinet::NdArray> value;
    try {
        value = std::make_shared<vinet::NdArray>(vinet::plan_values(obs, params).final_value());
    } catch (const vinet::NonFiniteValue&) {
        return [](Cell) { return -1; };
    }
    return [value, &params](Cell c) {
        const auto logits = vinet::policy_logits(*value, c, params);
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    };
}

}  // namespace

RolloutOutcome rollout(const mazeworld::MazeTask& task, Cell start, const vinet::ModelParams& params, double noise_sigma,
                       std::mt19937_64& rng) {
    return rollout(task, start, planned_policy(observe(task, noise_sigma, rng), params));
}

std::vector<Bucket> make_buckets(const std::vector<int>& edges) {
    if (edges.size() < 2) {
        throw std::invalid_argument("bucket edges need at least two values");
    }
    std::vector<Bucket> out;
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
        if (edges[k] >= edges[k + 1]) {
            throw std::invalid_argument("bucket edges must be strictly increasing");
        }
        out.push_back(Bucket{edges[k], edges[k + 1], k + 2 == edges.size(), 0, 0, 0});
    }
    return out;
}

std::vector<int> default_edges(int size) {
    if (size >= 35) {
        return {1, 100, 200, 300};
    }
    return {1, 20, 40, 80};
}

std::vector<int> parse_edges(const std::string& csv) {
    std::vector<int> edges;
    std::stringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            edges.push_back(std::stoi(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw std::invalid_argument("bad bucket edge '" + item + "'");
        }
    }
    make_buckets(edges);
    return edges;
}

std::vector<EvalTask> select_tasks(const mazeworld::Dataset& dataset, std::size_t limit, std::uint64_t seed) {
    std::vector<EvalTask> all;
    for (std::size_t m = 0; m < dataset.tasks.size(); ++m) {
        for (const Cell& c : dataset.tasks[m].start_cells()) {
            all.push_back(EvalTask{m, c});
        }
    }
    if (limit == 0 || limit >= all.size()) {
        return all;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(limit);
    std::stable_sort(all.begin(), all.end(), [](const EvalTask& a, const EvalTask& b) { return a.maze < b.maze; });
    return all;
}

EvalReport evaluate(const mazeworld::Dataset& dataset, const std::vector<EvalTask>& tasks, const PolicyFactory& factory,
                    const std::vector<int>& edges, int workers) {
    EvalReport report;
    report.buckets = make_buckets(edges);

    std::map<std::size_t, std::vector<std::size_t>> by_maze;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        by_maze[tasks[k].maze].push_back(k);
    }
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups(by_maze.begin(), by_maze.end());
    std::vector<RolloutOutcome> outcomes(tasks.size());
    parallel_for(groups.size(), workers, [&](std::size_t g) {
        const auto& task = dataset.tasks.at(groups[g].first);
        const Policy policy = factory(groups[g].first, task);
        for (std::size_t k : groups[g].second) {
            outcomes[k] = rollout(task, tasks[k].start, policy);
        }
    });

    for (const auto& o : outcomes) {
        auto it = std::find_if(report.buckets.begin(), report.buckets.end(), [&](const Bucket& b) { return b.contains(o.spl); });
        if (it == report.buckets.end()) {
            ++report.excluded;
            continue;
        }
        ++it->count;
        it->successes += o.success ? 1 : 0;
        it->optimal += o.optimal ? 1 : 0;
        ++report.count;
        report.successes += o.success ? 1 : 0;
        report.optimal += o.optimal ? 1 : 0;
    }
    return report;
}

EvalReport evaluate(const mazeworld::Dataset& dataset, const vinet::ModelParams& params, const EvalOptions& options) {
    check_compatible(dataset, params);
    const auto tasks = select_tasks(dataset, options.limit, options.seed);
    auto factory = [&](std::size_t maze, const mazeworld::MazeTask& task) -> Policy {
        std::mt19937_64 rng(mazeworld::derive_seed(options.seed, 0x6e6f697365ull, maze));
        return planned_policy(observe(task, options.noise_sigma, rng), params);
    };
    auto report = evaluate(dataset, tasks, factory, options.edges.empty() ? default_edges(dataset.size) : options.edges,
                           options.workers);
    report.variant = vinet::variant_name(params.config.variant);
    report.depth = params.config.depth;
    report.jump = params.config.jump;
    report.noise_sigma = options.noise_sigma;
    return report;
}

double success_rate(const mazeworld::Dataset& dataset, const std::vector<EvalTask>& tasks, const vinet::ModelParams& params,
                    int workers) {
    check_compatible(dataset, params);
    auto factory = [&](std::size_t, const mazeworld::MazeTask& task) -> Policy {
        return planned_policy(vinet::make_observation(task), params);
    };
    const auto report = evaluate(dataset, tasks, factory, {0, 1 << 20}, workers);
    return report.sr().value_or(0.0);
}

std::string report_json(const EvalReport& report) {
    nlohmann::json j;
    j["buckets"] = nlohmann::json::array();
    for (const auto& b : report.buckets) {
        j["buckets"].push_back({{"spl_lo", b.lo},
                                {"spl_hi", b.hi},
                                {"closed", b.closed},
                                {"count", b.count},
                                {"sr", rate_json(b.sr())},
                                {"or", rate_json(b.opt_rate())}});
    }
    j["overall"] = {{"count", report.count}, {"sr", rate_json(report.sr())}, {"or", rate_json(report.opt_rate())}};
    j["excluded"] = report.excluded;
    j["config"] = {{"variant", report.variant},
                   {"depth", report.depth},
                   {"jump", report.jump},
                   {"noise_sigma", report.noise_sigma}};
    return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "spl_lo,spl_hi,count,sr,or\n";
    for (const auto& b : report.buckets) {
        out << b.lo << ',' << b.hi << ',' << b.count << ',' << rate_csv(b.sr()) << ',' << rate_csv(b.opt_rate()) << '\n';
    }
    return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
    auto write = [](const std::filesystem::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) {
            throw std::runtime_error("cannot write report " + path.string());
        }
    };
    write(json_path, report_json(report));
    if (!csv_path.empty()) {
        write(csv_path, report_csv(report));
    }
}

}  // namespace dtvin::evaluator
