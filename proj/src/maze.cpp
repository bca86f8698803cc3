#include "dtvin/maze.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

namespace dtvin::mazeworld {
namespace {

constexpr std::array<Move, 8> kMoves = {{
    {-1, 0},   // N
    {0, 1},    // E
    {0, -1},   // W
    {1, 0},    // S
    {-1, 1},   // NE
    {-1, -1},  // NW
    {1, 1},    // SE
    {1, -1},   // SW
}};

constexpr std::array<const char*, 8> kActionNames = {"N", "E", "W", "S", "NE", "NW", "SE", "SW"};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30u)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27u)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31u);
}

}  // namespace

std::span<const Move> moves(TransitionType type) {
    return std::span<const Move>(kMoves.data(), static_cast<std::size_t>(action_count(type)));
}

int action_count(TransitionType type) {
    return type == TransitionType::News ? 4 : 8;
}

const char* action_name(int action) {
    if (action < 0 || action >= 8) {
        return "?";
    }
    return kActionNames[static_cast<std::size_t>(action)];
}

TransitionType parse_transition(const std::string& name) {
    if (name == "news" || name == "NEWS") {
        return TransitionType::News;
    }
    if (name == "moore" || name == "MOORE") {
        return TransitionType::Moore;
    }
    throw std::invalid_argument("unknown transition type '" + name + "'");
}

const char* transition_name(TransitionType type) {
    return type == TransitionType::News ? "news" : "moore";
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return splitmix64(h ^ c);
}

MazeGrid::MazeGrid(int size, std::uint8_t fill)
    : size_(size), cells_(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), fill) {}

MazeGrid::MazeGrid(int size, std::vector<std::uint8_t> cells) : size_(size), cells_(std::move(cells)) {
    if (cells_.size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size)) {
        throw std::invalid_argument("MazeGrid: cell count does not match size");
    }
    for (auto v : cells_) {
        if (v != kObstacle && v != kRoad) {
            throw std::invalid_argument("MazeGrid: cells must be 0 or 1");
        }
    }
}

std::size_t MazeGrid::road_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), kRoad));
}

gradcore::NdArray MazeGrid::to_array() const {
    gradcore::NdArray a(gradcore::Shape{static_cast<std::size_t>(size_), static_cast<std::size_t>(size_)});
    for (std::size_t k = 0; k < cells_.size(); ++k) {
        a[k] = cells_[k];
    }
    return a;
}

GeneratedMaze generate_maze(int size, std::uint64_t seed, double extra_openings) {
    if (size < 5) {
        throw std::invalid_argument("generate_maze: size must be at least 5, got " + std::to_string(size));
    }
    if (!(extra_openings >= 0.0 && extra_openings <= 1.0)) {
        throw std::invalid_argument("generate_maze: extra_openings must lie in [0, 1]");
    }
    std::mt19937_64 rng(seed);
    MazeGrid grid(size, kObstacle);

    // Lattice cells sit at odd coordinates.
    std::vector<int> lattice;
    for (int k = 1; k < size; k += 2) {
        lattice.push_back(k);
    }
    const int n = static_cast<int>(lattice.size());
    auto to_cell = [&](int li, int lj) { return Cell{lattice[static_cast<std::size_t>(li)], lattice[static_cast<std::size_t>(lj)]}; };

    std::vector<char> visited(static_cast<std::size_t>(n * n), 0);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<std::pair<int, int>> stack;
    stack.emplace_back(pick(rng), pick(rng));
    visited[static_cast<std::size_t>(stack.back().first * n + stack.back().second)] = 1;
    grid.set(to_cell(stack.back().first, stack.back().second), kRoad);

    while (!stack.empty()) {
        auto [li, lj] = stack.back();
        std::array<std::pair<int, int>, 4> candidates{};
        int count = 0;
        for (const Move& m : moves(TransitionType::News)) {
            const int ni = li + m.drow, nj = lj + m.dcol;
            if (ni >= 0 && nj >= 0 && ni < n && nj < n && !visited[static_cast<std::size_t>(ni * n + nj)]) {
                candidates[static_cast<std::size_t>(count++)] = {ni, nj};
            }
        }
        if (count == 0) {
            stack.pop_back();
            continue;
        }
        std::uniform_int_distribution<int> choose(0, count - 1);
        auto [ni, nj] = candidates[static_cast<std::size_t>(choose(rng))];
        const Cell from = to_cell(li, lj), to = to_cell(ni, nj);
        grid.set(Cell{(from.row + to.row) / 2, (from.col + to.col) / 2}, kRoad);
        grid.set(to, kRoad);
        visited[static_cast<std::size_t>(ni * n + nj)] = 1;
        stack.emplace_back(ni, nj);
    }

    if (extra_openings > 0.0) {
        std::bernoulli_distribution open(extra_openings);
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const bool between_rows = r % 2 == 0 && r > 0 && r + 1 < size && c % 2 == 1;
                const bool between_cols = c % 2 == 0 && c > 0 && c + 1 < size && r % 2 == 1;
                if (!between_rows && !between_cols) {
                    continue;
                }
                if (grid.at(Cell{r, c}) == kObstacle && open(rng)) {
                    grid.set(Cell{r, c}, kRoad);
                }
            }
        }
    }

    std::vector<Cell> roads;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            if (grid.at(Cell{r, c}) == kRoad) {
                roads.push_back(Cell{r, c});
            }
        }
    }
    std::uniform_int_distribution<std::size_t> goal_pick(0, roads.size() - 1);
    return GeneratedMaze{std::move(grid), roads[goal_pick(rng)]};
}

DistanceMap bfs_distance(const MazeGrid& grid, Cell goal, TransitionType type) {
    if (!grid.in_bounds(goal) || !grid.is_road(goal)) {
        throw std::invalid_argument("bfs_distance: goal must be a road cell");
    }
    DistanceMap dist(grid.cells().size(), kUnreachable);
    std::deque<Cell> frontier;
    dist[grid.index(goal)] = 0;
    frontier.push_back(goal);
    // Moves are symmetric (legal iff the target is a road), so searching outward from the goal
    // yields distances to it.
    while (!frontier.empty()) {
        const Cell c = frontier.front();
        frontier.pop_front();
        const std::uint16_t next = static_cast<std::uint16_t>(dist[grid.index(c)] + 1);
        for (const Move& m : moves(type)) {
            const Cell nb{c.row + m.drow, c.col + m.dcol};
            if (grid.is_road(nb) && dist[grid.index(nb)] == kUnreachable) {
                dist[grid.index(nb)] = next;
                frontier.push_back(nb);
            }
        }
    }
    return dist;
}

LabelMap optimal_action_labels(const DistanceMap& dist, const MazeGrid& grid, TransitionType type) {
    LabelMap labels(dist.size(), kNoLabel);
    const auto mv = moves(type);
    for (int r = 0; r < grid.size(); ++r) {
        for (int c = 0; c < grid.size(); ++c) {
            const Cell cell{r, c};
            const std::uint16_t d = dist[grid.index(cell)];
            if (!grid.is_road(cell) || d == 0 || d == kUnreachable) {
                continue;
            }
            int best = -1;
            std::uint16_t best_d = kUnreachable;
            for (std::size_t a = 0; a < mv.size(); ++a) {
                const Cell nb{r + mv[a].drow, c + mv[a].dcol};
                if (!grid.is_road(nb)) {
                    continue;
                }
                const std::uint16_t nd = dist[grid.index(nb)];
                if (nd < best_d) {
                    best_d = nd;
                    best = static_cast<int>(a);
                }
            }
            labels[grid.index(cell)] = static_cast<std::int8_t>(best);
        }
    }
    return labels;
}

std::vector<Cell> MazeTask::start_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < grid.size(); ++r) {
        for (int c = 0; c < grid.size(); ++c) {
            const Cell cell{r, c};
            const auto d = distance(cell);
            if (grid.is_road(cell) && d != 0 && d != kUnreachable) {
                out.push_back(cell);
            }
        }
    }
    return out;
}

MazeTask make_task(MazeGrid grid, Cell goal, TransitionType type) {
    MazeTask task;
    task.dist = bfs_distance(grid, goal, type);
    task.labels = optimal_action_labels(task.dist, grid, type);
    task.grid = std::move(grid);
    task.goal = goal;
    task.type = type;
    return task;
}

gradcore::NdArray add_observation_noise(const MazeGrid& grid, double sigma, std::mt19937_64& rng) {
    if (sigma < 0.0) {
        throw std::invalid_argument("add_observation_noise: sigma must be non-negative");
    }
    gradcore::NdArray out = grid.to_array();
    if (sigma == 0.0) {
        return out;
    }
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : out.storage()) {
        v = std::clamp(v + noise(rng), 0.0, 1.0);
    }
    return out;
}

}  // namespace dtvin::mazeworld
