#include "dtvin/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dtvin::vinet {

using mazeworld::Cell;

TabularMDP TabularMDP::zeros(std::size_t states, std::size_t actions, double gamma) {
    TabularMDP mdp;
    mdp.states = states;
    mdp.actions = actions;
    mdp.transition.assign(states * actions * states, 0.0);
    mdp.reward.assign(states * actions * states, 0.0);
    mdp.gamma = gamma;
    return mdp;
}

std::vector<std::vector<double>> tabular_value_iteration(const TabularMDP& mdp, int steps) {
    if (steps < 0) {
        throw std::invalid_argument("tabular_value_iteration: steps must be non-negative");
    }
    if (!(mdp.gamma >= 0.0 && mdp.gamma <= 1.0)) {
        throw std::invalid_argument("tabular_value_iteration: gamma must lie in [0, 1]");
    }
    const std::size_t n_entries = mdp.states * mdp.actions * mdp.states;
    if (mdp.transition.size() != n_entries || mdp.reward.size() != n_entries) {
        throw std::invalid_argument("tabular_value_iteration: table sizes do not match states x actions x states");
    }
    for (std::size_t s = 0; s < mdp.states; ++s) {
        for (std::size_t a = 0; a < mdp.actions; ++a) {
            double row = 0.0;
            for (std::size_t s2 = 0; s2 < mdp.states; ++s2) {
                row += mdp.T(s, a, s2);
            }
            if (std::abs(row - 1.0) > 1e-9) {
                throw std::invalid_argument("tabular_value_iteration: T(.|s=" + std::to_string(s) + ",a=" + std::to_string(a) +
                                            ") sums to " + std::to_string(row));
            }
        }
    }
    std::vector<std::vector<double>> out;
    out.emplace_back(mdp.states, 0.0);
    for (int n = 0; n < steps; ++n) {
        const auto& prev = out.back();
        std::vector<double> next(mdp.states);
        for (std::size_t s = 0; s < mdp.states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < mdp.actions; ++a) {
                double q = 0.0;
                for (std::size_t s2 = 0; s2 < mdp.states; ++s2) {
                    const double p = mdp.T(s, a, s2);
                    if (p != 0.0) {
                        q += p * (mdp.R(s, a, s2) + mdp.gamma * prev[s2]);
                    }
                }
                best = std::max(best, q);
            }
            next[s] = best;
        }
        out.push_back(std::move(next));
    }
    return out;
}

TabularMDP maze_to_mdp(const mazeworld::MazeTask& task, double gamma) {
    const auto& g = task.grid;
    const auto mv = mazeworld::moves(task.type);
    auto mdp = TabularMDP::zeros(g.cells().size(), mv.size(), gamma);
    for (int r = 0; r < g.size(); ++r) {
        for (int c = 0; c < g.size(); ++c) {
            const Cell cell{r, c};
            const std::size_t s = g.index(cell);
            for (std::size_t a = 0; a < mv.size(); ++a) {
                std::size_t target = s;
                const Cell nb{r + mv[a].drow, c + mv[a].dcol};
                if (cell != task.goal && g.is_road(cell) && g.is_road(nb)) {
                    target = g.index(nb);
                }
                mdp.T(s, a, target) = 1.0;
                mdp.R(s, a, target) = cell == task.goal ? 0.0 : -1.0;
            }
        }
    }
    return mdp;
}

NdArray oracle_kernel(const mazeworld::MazeTask& task) {
    const auto& g = task.grid;
    const auto mv = mazeworld::moves(task.type);
    const std::size_t m = static_cast<std::size_t>(g.size()), a_count = mv.size();
    NdArray k(Shape{m, m, a_count, 3, 3});
    for (int r = 0; r < g.size(); ++r) {
        for (int c = 0; c < g.size(); ++c) {
            const Cell cell{r, c};
            if (cell == task.goal) {
                continue;
            }
            for (std::size_t a = 0; a < a_count; ++a) {
                const Cell nb{r + mv[a].drow, c + mv[a].dcol};
                std::size_t u = 1, v = 1;
                if (g.is_road(cell) && g.is_road(nb)) {
                    u = static_cast<std::size_t>(1 - mv[a].drow);
                    v = static_cast<std::size_t>(1 - mv[a].dcol);
                }
                k[(((g.index(cell)) * a_count + a) * 3 + u) * 3 + v] = 1.0;
            }
        }
    }
    return k;
}

NdArray oracle_reward(int size) {
    const auto m = static_cast<std::size_t>(size);
    return NdArray(Shape{m, m}, -1.0);
}

ModelParams expert_params(int size, mazeworld::TransitionType type, int depth, int jump) {
    constexpr double kSharp = 40.0;
    constexpr double kWall = 10.0;
    constexpr double kGoal = 10.0;
    const auto mv = mazeworld::moves(type);
    const int real = static_cast<int>(mv.size());

    NetworkConfig config;
    config.variant = KernelVariant::FullyDynamic;
    config.apply_softmax = true;
    config.size = size;
    config.latent_actions = real + 1;  // last latent action stays put
    config.actions = real;
    config.depth = depth;
    config.jump = jump;

    ModelParams p;
    p.config = config;
    for (const auto& [name, shape] : param_shapes(config)) {
        p.tensors.emplace(name, NdArray(shape));
    }
    auto& rw = p.at("reward.w");
    rw[0] = kWall - 1.0;
    rw[1] = kGoal + 1.0;
    p.at("reward.b")[0] = -kWall;

    auto& tw = p.at("transition.w");
    auto& tb = p.at("transition.b");
    tb.fill(-2.0 * kSharp);
    for (int a = 0; a <= real; ++a) {
        const std::size_t base = static_cast<std::size_t>(a) * 9;
        if (a == real) {
            tb[base + 4] = 0.0;
            continue;
        }
        const auto& m = mv[static_cast<std::size_t>(a)];
        // Kernel entry (1-dr, 1-dc) reads the move target; the conv tap (1+dr, 1+dc) sees it.
        const std::size_t entry = base + static_cast<std::size_t>((1 - m.drow) * 3 + (1 - m.dcol));
        tw[entry * 9 + static_cast<std::size_t>((1 + m.drow) * 3 + (1 + m.dcol))] = kSharp;
        tw[entry * 9 + 4] = kSharp;
        tb[entry] = -1.5 * kSharp;
        tb[base + 4] = 0.0;
    }

    auto& pw = p.at("policy.w");
    for (int a = 0; a < real; ++a) {
        const auto& m = mv[static_cast<std::size_t>(a)];
        pw.at(static_cast<std::size_t>(a), static_cast<std::size_t>((1 + m.drow) * 3 + (1 + m.dcol))) = 1.0;
    }
    return p;
}

OracleCheckReport oracle_check(int size, int steps, std::uint64_t seed, std::size_t mazes, mazeworld::TransitionType type,
                               double perturbation) {
    if (steps < 0) {
        throw std::invalid_argument("oracle_check: steps must be non-negative");
    }
    OracleCheckReport report;
    for (std::size_t k = 0; k < mazes; ++k) {
        auto maze = mazeworld::generate_maze(size, mazeworld::derive_seed(seed, k));
        auto task = mazeworld::make_task(std::move(maze.grid), maze.goal, type);
        auto kernel = oracle_kernel(task);
        if (perturbation != 0.0) {
            const Cell start = task.start_cells().front();
            const std::size_t actions = mazeworld::moves(type).size();
            for (std::size_t a = 0; a < actions; ++a) {
                kernel[(task.grid.index(start) * actions + a) * 9 + 4] += perturbation;
            }
        }
        const auto table = tabular_value_iteration(maze_to_mdp(task), steps);
        const auto stack = plan_values(oracle_reward(size), kernel, steps, 1);
        for (std::size_t i = 0; i < stack.layers.size(); ++i) {
            const auto n = static_cast<std::size_t>(stack.layers[i]);
            const NdArray& v = stack.values[i];
            for (std::size_t s = 0; s < v.size(); ++s) {
                report.max_abs_error = std::max(report.max_abs_error, std::abs(v[s] - table[n][s]));
                const Cell c{static_cast<int>(s) / size, static_cast<int>(s) % size};
                const auto d = task.distance(c);
                if (task.grid.is_road(c) && d != mazeworld::kUnreachable &&
                    v[s] != -static_cast<double>(std::min<std::size_t>(n, d))) {
                    ++report.distance_mismatches;
                }
            }
        }
        ++report.mazes;
    }
    report.passed = report.max_abs_error <= 1e-10 && report.distance_mismatches == 0;
    return report;
}

}  // namespace dtvin::vinet
