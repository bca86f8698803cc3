#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtvin/maze.hpp"

namespace dtvin::mazeworld {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

const char* split_name(Split split);

struct Dataset {
    std::vector<MazeTask> tasks;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    int size = 0;
    TransitionType type = TransitionType::News;
};

struct DatasetSpec {
    int size = 15;
    std::size_t train = 1;
    std::size_t val = 1;
    std::size_t test = 1;
    std::uint64_t seed = 0;
    TransitionType type = TransitionType::News;
    double extra_openings = 0.0;
};

struct DatasetBundle {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Generates the three splits with pairwise-distinct obstacle layouts. A maze whose layout
/// was already produced is regenerated from the next derived seed.
DatasetBundle build_dataset(const DatasetSpec& spec);

/// Binary layout (little-endian): "DTVD", u32 version=1, u32 M, u32 count, u8 transition;
/// per maze M*M grid bytes, u16 goal row, u16 goal col, M*M u16 distances.
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, Split split = Split::Train);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path, Split split = Split::Train);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Histogram of start-cell shortest path lengths, index = SPL.
std::vector<std::size_t> spl_histogram(const Dataset& dataset);

struct DatasetFiles {
    std::filesystem::path train;
    std::filesystem::path val;
    std::filesystem::path test;
    std::filesystem::path manifest;
    std::filesystem::path histogram;
};

/// Writes train/val/test .dtvd files, manifest.json (seed, sigma, split sizes, checksums,
/// plus `config_echo`) and spl_histogram.csv into `dir`.
DatasetFiles write_dataset_files(const DatasetBundle& bundle, const DatasetSpec& spec, const std::filesystem::path& dir,
                                 const std::string& config_echo_json = "{}");

/// Resolves a split file inside a dataset directory.
std::filesystem::path split_path(const std::filesystem::path& dir, Split split);

}  // namespace dtvin::mazeworld
