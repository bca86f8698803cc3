#include "dtvin/dataset.hpp"

#include <openssl/sha.h>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace dtvin::mazeworld {
namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kMaxAttempts = 10000;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xffu));
    out.push_back(static_cast<std::uint8_t>(v >> 8u));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xffu));
    }
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8u));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(k)]) << (8 * k);
        }
        pos_ += 4;
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error("dataset: truncated file");
        }
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

Dataset generate_split(const DatasetSpec& spec, Split split, std::size_t count, std::unordered_set<std::string>& seen) {
    Dataset ds;
    ds.split = split;
    ds.seed = spec.seed;
    ds.size = spec.size;
    ds.type = spec.type;
    ds.tasks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            const auto seed = derive_seed(spec.seed, static_cast<std::uint64_t>(split), i, attempt);
            auto maze = generate_maze(spec.size, seed, spec.extra_openings);
            std::string key(maze.grid.cells().begin(), maze.grid.cells().end());
            if (!seen.insert(std::move(key)).second) {
                continue;
            }
            ds.tasks.push_back(make_task(std::move(maze.grid), maze.goal, spec.type));
            placed = true;
        }
        if (!placed) {
            throw std::runtime_error("build_dataset: could not find a fresh maze layout for " + std::string(split_name(split)) +
                                     " index " + std::to_string(i) + "; too many mazes requested for size " +
                                     std::to_string(spec.size));
        }
    }
    return ds;
}

}  // namespace

const char* split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

DatasetBundle build_dataset(const DatasetSpec& spec) {
    if (spec.train < 1 || spec.val < 1 || spec.test < 1) {
        throw std::invalid_argument("build_dataset: every split needs at least one maze");
    }
    std::unordered_set<std::string> seen;
    DatasetBundle bundle;
    bundle.train = generate_split(spec, Split::Train, spec.train, seen);
    bundle.val = generate_split(spec, Split::Val, spec.val, seen);
    bundle.test = generate_split(spec, Split::Test, spec.test, seen);
    return bundle;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
    std::vector<std::uint8_t> out = {'D', 'T', 'V', 'D'};
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(dataset.size));
    put_u32(out, static_cast<std::uint32_t>(dataset.tasks.size()));
    out.push_back(static_cast<std::uint8_t>(dataset.type));
    for (const auto& task : dataset.tasks) {
        if (task.size() != dataset.size) {
            throw std::invalid_argument("encode_dataset: task size differs from dataset size");
        }
        out.insert(out.end(), task.grid.cells().begin(), task.grid.cells().end());
        put_u16(out, static_cast<std::uint16_t>(task.goal.row));
        put_u16(out, static_cast<std::uint16_t>(task.goal.col));
        for (std::uint16_t d : task.dist) {
            put_u16(out, d);
        }
    }
    return out;
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, Split split) {
    Reader in(bytes);
    if (in.u8() != 'D' || in.u8() != 'T' || in.u8() != 'V' || in.u8() != 'D') {
        throw std::runtime_error("dataset: bad magic");
    }
    const auto version = in.u32();
    if (version != kVersion) {
        throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
    }
    Dataset ds;
    ds.split = split;
    ds.size = static_cast<int>(in.u32());
    const auto count = in.u32();
    const auto type = in.u8();
    if (type > 1) {
        throw std::runtime_error("dataset: bad transition type");
    }
    ds.type = static_cast<TransitionType>(type);
    const std::size_t cells = static_cast<std::size_t>(ds.size) * static_cast<std::size_t>(ds.size);
    ds.tasks.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::vector<std::uint8_t> grid(cells);
        for (auto& v : grid) {
            v = in.u8();
        }
        MazeTask task;
        task.grid = MazeGrid(ds.size, std::move(grid));
        task.goal.row = in.u16();
        task.goal.col = in.u16();
        task.dist.resize(cells);
        for (auto& d : task.dist) {
            d = in.u16();
        }
        if (!task.grid.is_road(task.goal) || task.dist[task.grid.index(task.goal)] != 0) {
            throw std::runtime_error("dataset: maze " + std::to_string(k) + " has an invalid goal");
        }
        task.type = ds.type;
        task.labels = optimal_action_labels(task.dist, task.grid, ds.type);
        ds.tasks.push_back(std::move(task));
    }
    if (!in.done()) {
        throw std::runtime_error("dataset: trailing bytes");
    }
    return ds;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string() + " for reading");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    write_file_bytes(path, encode_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path, Split split) {
    try {
        return decode_dataset(read_file_bytes(path), split);
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes.data(), bytes.size(), digest);
    std::ostringstream out;
    for (unsigned char b : digest) {
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
    }
    return out.str();
}

std::vector<std::size_t> spl_histogram(const Dataset& dataset) {
    std::vector<std::size_t> hist;
    for (const auto& task : dataset.tasks) {
        for (const Cell& c : task.start_cells()) {
            const std::size_t d = task.distance(c);
            if (hist.size() <= d) {
                hist.resize(d + 1, 0);
            }
            ++hist[d];
        }
    }
    return hist;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Split split) {
    return dir / (std::string(split_name(split)) + ".dtvd");
}

DatasetFiles write_dataset_files(const DatasetBundle& bundle, const DatasetSpec& spec, const std::filesystem::path& dir,
                                 const std::string& config_echo_json) {
    std::filesystem::create_directories(dir);
    DatasetFiles files{split_path(dir, Split::Train), split_path(dir, Split::Val), split_path(dir, Split::Test),
                       dir / "manifest.json", dir / "spl_histogram.csv"};

    nlohmann::json manifest;
    manifest["seed"] = spec.seed;
    manifest["sigma"] = bundle.train.noise_sigma;
    manifest["size"] = spec.size;
    manifest["transition"] = transition_name(spec.type);
    manifest["extra_openings"] = spec.extra_openings;
    manifest["format_version"] = kVersion;
    const std::pair<const Dataset*, const std::filesystem::path*> splits[] = {
        {&bundle.train, &files.train}, {&bundle.val, &files.val}, {&bundle.test, &files.test}};
    for (auto [ds, path] : splits) {
        auto bytes = encode_dataset(*ds);
        write_file_bytes(*path, bytes);
        manifest["split_sizes"][split_name(ds->split)] = ds->tasks.size();
        manifest["checksums"][path->filename().string()] = "sha256:" + sha256_hex(bytes);
    }
    manifest["config"] = nlohmann::json::parse(config_echo_json);
    std::ofstream(files.manifest) << manifest.dump(2) << '\n';

    const auto h_train = spl_histogram(bundle.train);
    const auto h_val = spl_histogram(bundle.val);
    const auto h_test = spl_histogram(bundle.test);
    const std::size_t rows = std::max({h_train.size(), h_val.size(), h_test.size()});
    std::ofstream hist(files.histogram);
    hist << "spl,train,val,test\n";
    auto at = [](const std::vector<std::size_t>& h, std::size_t k) { return k < h.size() ? h[k] : std::size_t{0}; };
    for (std::size_t k = 1; k < rows; ++k) {
        hist << k << ',' << at(h_train, k) << ',' << at(h_val, k) << ',' << at(h_test, k) << '\n';
    }
    if (!hist) {
        throw std::runtime_error("write failed: " + files.histogram.string());
    }
    return files;
}

}  // namespace dtvin::mazeworld
