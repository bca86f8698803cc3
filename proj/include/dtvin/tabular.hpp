#pragma once

#include <cstddef>
#include <vector>

#include "dtvin/maze.hpp"
#include "dtvin/vinet.hpp"

namespace dtvin::vinet {

/// Dense finite MDP. transition and reward are indexed [s][a][s'] flattened.
struct TabularMDP {
    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<double> transition;
    std::vector<double> reward;
    double gamma = 1.0;

    double& T(std::size_t s, std::size_t a, std::size_t s2) { return transition[(s * actions + a) * states + s2]; }
    double T(std::size_t s, std::size_t a, std::size_t s2) const { return transition[(s * actions + a) * states + s2]; }
    double& R(std::size_t s, std::size_t a, std::size_t s2) { return reward[(s * actions + a) * states + s2]; }
    double R(std::size_t s, std::size_t a, std::size_t s2) const { return reward[(s * actions + a) * states + s2]; }

    static TabularMDP zeros(std::size_t states, std::size_t actions, double gamma);
};

/// V^(0..N); entry n is the value table after n backups. Throws std::invalid_argument if a
/// transition row does not sum to 1 or gamma is outside [0, 1].
std::vector<std::vector<double>> tabular_value_iteration(const TabularMDP& mdp, int steps);

/// One state per cell. Deterministic moves; blocked moves stay in place; obstacles self-loop.
/// Every step from a non-goal cell costs -1, the goal is absorbing with reward 0.
TabularMDP maze_to_mdp(const mazeworld::MazeTask& task, double gamma = 1.0);

/// Hand-set M x M x A x 3 x 3 kernel mirroring maze_to_mdp: one-hot on the move target for road
/// cells, centre for obstacles, all zero at the goal so its value stays 0.
NdArray oracle_kernel(const mazeworld::MazeTask& task);

/// Reward map R = -1 everywhere, the companion of oracle_kernel.
NdArray oracle_reward(int size);

/// Fully dynamic parameters, softmax on, that plan the maze well enough for greedy rollouts to
/// follow shortest paths: near one-hot transitions, reward -1 on roads, -wall on obstacles and
/// +goal at the goal, and a policy head reading each neighbour's value.
ModelParams expert_params(int size, mazeworld::TransitionType type, int depth, int jump = 10);

struct OracleCheckReport {
    bool passed = true;
    std::size_t mazes = 0;
    /// Largest |planner - tabular| over all layers, cells and mazes.
    double max_abs_error = 0.0;
    /// Road cells where V^(n) != -min(n, BFS distance).
    std::size_t distance_mismatches = 0;
};

/// Plans `mazes` random mazes with the hand-set kernels and compares every layer against tabular
/// value iteration (tolerance 1e-10) and against the BFS distances. `perturbation` is added to
/// one kernel entry of each maze as a negative control.
OracleCheckReport oracle_check(int size, int steps, std::uint64_t seed, std::size_t mazes = 20,
                               mazeworld::TransitionType type = mazeworld::TransitionType::News,
                               double perturbation = 0.0);

}  // namespace dtvin::vinet
