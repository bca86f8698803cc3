#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dtvin/dataset.hpp"
#include "dtvin/vinet.hpp"

namespace dtvin::evaluator {

using mazeworld::Cell;

struct RolloutOutcome {
    bool success = false;
    int steps = 0;
    int spl = 0;
    bool optimal = false;
};

/// Chooses an action index at the current cell.
using Policy = std::function<int(Cell)>;

/// Greedy walk from `start`. Illegal moves keep the agent in place and still cost a step.
/// Stops at the goal or after M*M steps. Throws if `start` is not a road cell.
RolloutOutcome rollout(const mazeworld::MazeTask& task, Cell start, const Policy& policy);

/// Argmax policy (ties to the lowest index) over the logits of a planned value map.
Policy greedy_policy(const vinet::NdArray& value_map, const vinet::ModelParams& params);

/// Plans once on the task's observation, noised with `noise_sigma` using `rng`, then rolls out.
RolloutOutcome rollout(const mazeworld::MazeTask& task, Cell start, const vinet::ModelParams& params, double noise_sigma,
                       std::mt19937_64& rng);

struct Bucket {
    int lo = 0;
    int hi = 0;
    bool closed = false;  // hi included
    std::size_t count = 0;
    std::size_t successes = 0;
    std::size_t optimal = 0;

    bool contains(int spl) const { return spl >= lo && (closed ? spl <= hi : spl < hi); }
    std::optional<double> sr() const;
    std::optional<double> opt_rate() const;
};

struct EvalReport {
    std::vector<Bucket> buckets;
    std::size_t count = 0;
    std::size_t successes = 0;
    std::size_t optimal = 0;
    /// Tasks whose SPL lies outside every bucket.
    std::size_t excluded = 0;
    std::string variant;
    int depth = 0;
    int jump = 0;
    double noise_sigma = 0.0;

    std::optional<double> sr() const;
    std::optional<double> opt_rate() const;
};

/// Edges e1 < ... < ek give [e1,e2), ..., [e(k-1), ek].
std::vector<Bucket> make_buckets(const std::vector<int>& edges);
std::vector<int> default_edges(int size);
std::vector<int> parse_edges(const std::string& csv);

struct EvalTask {
    std::size_t maze = 0;
    Cell start;
};

/// All (maze, start) pairs in maze order, or a seeded subsample of `limit` of them when limit > 0.
std::vector<EvalTask> select_tasks(const mazeworld::Dataset& dataset, std::size_t limit, std::uint64_t seed);

struct EvalOptions {
    std::vector<int> edges;
    double noise_sigma = 0.0;
    std::size_t limit = 0;
    std::uint64_t seed = 0;
    int workers = 1;
};

/// Builds the policy for one maze; called once per distinct maze.
using PolicyFactory = std::function<Policy(std::size_t maze, const mazeworld::MazeTask& task)>;

EvalReport evaluate(const mazeworld::Dataset& dataset, const std::vector<EvalTask>& tasks, const PolicyFactory& factory,
                    const std::vector<int>& edges, int workers = 1);

/// Plans each maze once (noise seeded per maze) and evaluates every selected start.
/// Throws if the model was built for a different M or action set.
EvalReport evaluate(const mazeworld::Dataset& dataset, const vinet::ModelParams& params, const EvalOptions& options);

/// Success rate in percent over the given tasks, 0 for an empty set.
double success_rate(const mazeworld::Dataset& dataset, const std::vector<EvalTask>& tasks, const vinet::ModelParams& params,
                    int workers = 1);

/// Canonical JSON (sorted keys, two-space indent); empty buckets render SR/OR as null.
std::string report_json(const EvalReport& report);
/// Header "spl_lo,spl_hi,count,sr,or"; empty buckets leave SR/OR blank.
std::string report_csv(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path = {});

}  // namespace dtvin::evaluator
