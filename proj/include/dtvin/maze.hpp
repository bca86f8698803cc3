#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtvin/ndarray.hpp"

namespace dtvin::mazeworld {

enum class TransitionType : std::uint8_t { News = 0, Moore = 1 };

inline constexpr std::uint16_t kUnreachable = 65535;
inline constexpr std::uint8_t kObstacle = 0;
inline constexpr std::uint8_t kRoad = 1;

struct Cell {
    int row = 0;
    int col = 0;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct Move {
    int drow;
    int dcol;
};

/// Action order: N, E, W, S, then NE, NW, SE, SW for Moore.
std::span<const Move> moves(TransitionType type);
int action_count(TransitionType type);
const char* action_name(int action);
TransitionType parse_transition(const std::string& name);
const char* transition_name(TransitionType type);

/// Square occupancy grid, 0 = obstacle, 1 = road.
class MazeGrid {
public:
    MazeGrid() = default;
    explicit MazeGrid(int size, std::uint8_t fill = kObstacle);
    MazeGrid(int size, std::vector<std::uint8_t> cells);

    int size() const { return size_; }
    bool in_bounds(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < size_ && c.col < size_; }
    bool is_road(Cell c) const { return in_bounds(c) && cells_[index(c)] == kRoad; }
    std::uint8_t at(Cell c) const { return cells_[index(c)]; }
    void set(Cell c, std::uint8_t v) { cells_[index(c)] = v; }
    std::size_t index(Cell c) const {
        return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(size_) + static_cast<std::size_t>(c.col);
    }
    const std::vector<std::uint8_t>& cells() const { return cells_; }
    std::size_t road_count() const;
    /// Map as an M x M array of 0/1 doubles.
    gradcore::NdArray to_array() const;

    friend bool operator==(const MazeGrid&, const MazeGrid&) = default;

private:
    int size_ = 0;
    std::vector<std::uint8_t> cells_;
};

struct GeneratedMaze {
    MazeGrid grid;
    Cell goal;
};

/// Randomized depth-first backtracker over the odd-coordinate lattice, then each wall
/// separating two lattice cells is knocked out with probability `extra_openings`.
/// The goal is drawn uniformly among road cells.
GeneratedMaze generate_maze(int size, std::uint64_t seed, double extra_openings = 0.0);

using DistanceMap = std::vector<std::uint16_t>;
using LabelMap = std::vector<std::int8_t>;
inline constexpr std::int8_t kNoLabel = -1;

/// Unit-cost shortest-path distances to `goal`; kUnreachable where no path exists.
DistanceMap bfs_distance(const MazeGrid& grid, Cell goal, TransitionType type);
/// Expert action per reachable non-goal road cell (lowest action index on ties), kNoLabel elsewhere.
LabelMap optimal_action_labels(const DistanceMap& dist, const MazeGrid& grid, TransitionType type);

struct MazeTask {
    MazeGrid grid;
    Cell goal;
    DistanceMap dist;
    LabelMap labels;
    TransitionType type = TransitionType::News;

    int size() const { return grid.size(); }
    std::uint16_t distance(Cell c) const { return dist[grid.index(c)]; }
    std::int8_t label(Cell c) const { return labels[grid.index(c)]; }
    /// Road cells with a finite, positive distance to the goal, row-major order.
    std::vector<Cell> start_cells() const;
};

MazeTask make_task(MazeGrid grid, Cell goal, TransitionType type);

/// clip(grid + N(0, sigma^2), 0, 1) per cell.
gradcore::NdArray add_observation_noise(const MazeGrid& grid, double sigma, std::mt19937_64& rng);

/// Deterministic seed mixing so every maze owns an independent stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace dtvin::mazeworld
