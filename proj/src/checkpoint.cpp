#include "dtvin/checkpoint.hpp"

#include <bit>
#include <stdexcept>

#include "dtvin/dataset.hpp"

namespace dtvin::vinet {
namespace {

constexpr std::uint32_t kVersion = 1;

void put_uint(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int k = 0; k < bytes; ++k) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xffu));
    }
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t uint(int bytes) {
        if (pos_ + static_cast<std::size_t>(bytes) > bytes_.size()) {
            throw std::runtime_error("checkpoint: truncated file");
        }
        std::uint64_t v = 0;
        for (int k = 0; k < bytes; ++k) {
            v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * k);
        }
        return v;
    }
    std::string str(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error("checkpoint: truncated file");
        }
        std::string s(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const NdArray& t) {
    if (name.size() > 0xffff) {
        throw std::invalid_argument("checkpoint: tensor name too long");
    }
    put_uint(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    put_uint(out, t.rank(), 1);
    for (std::size_t d : t.shape()) {
        put_uint(out, d, 4);
    }
    for (double v : t.storage()) {
        put_uint(out, std::bit_cast<std::uint64_t>(v), 8);
    }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const auto& cfg = ckpt.model.config;
    check_params(ckpt.model);
    std::vector<std::uint8_t> out = {'D', 'T', 'V', 'C'};
    put_uint(out, kVersion, 4);
    put_uint(out, static_cast<std::uint8_t>(cfg.variant), 1);
    put_uint(out, cfg.apply_softmax ? 1u : 0u, 1);
    for (int v : {cfg.size, cfg.kernel, cfg.conv_kernel, cfg.latent_actions, cfg.depth, cfg.jump}) {
        put_uint(out, static_cast<std::uint32_t>(v), 4);
    }
    for (const auto& [name, t] : ckpt.model.tensors) {
        put_tensor(out, name, t);
    }
    for (const auto& [name, t] : ckpt.extra) {
        if (ckpt.model.tensors.contains(name)) {
            throw std::invalid_argument("checkpoint: auxiliary tensor '" + name + "' shadows a model tensor");
        }
        put_tensor(out, name, t);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (in.str(4) != "DTVC") {
        throw std::runtime_error("checkpoint: bad magic");
    }
    const auto version = in.uint(4);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    auto& cfg = ckpt.model.config;
    const auto variant = in.uint(1);
    if (variant > 3) {
        throw std::runtime_error("checkpoint: bad kernel variant " + std::to_string(variant));
    }
    cfg.variant = static_cast<KernelVariant>(variant);
    cfg.apply_softmax = (in.uint(1) & 1u) != 0;
    for (int* field : {&cfg.size, &cfg.kernel, &cfg.conv_kernel, &cfg.latent_actions, &cfg.depth, &cfg.jump}) {
        *field = static_cast<int>(in.uint(4));
    }
    std::map<std::string, NdArray> all;
    while (!in.done()) {
        const auto name = in.str(static_cast<std::size_t>(in.uint(2)));
        const auto rank = static_cast<std::size_t>(in.uint(1));
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(in.uint(4));
        }
        NdArray t(shape);
        for (double& v : t.storage()) {
            v = std::bit_cast<double>(in.uint(8));
        }
        if (!all.emplace(name, std::move(t)).second) {
            throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
        }
    }
    auto policy = all.find("policy.w");
    if (policy == all.end() || policy->second.rank() != 2) {
        throw std::runtime_error("checkpoint: missing policy.w");
    }
    cfg.actions = static_cast<int>(policy->second.dim(0));
    const auto shapes = param_shapes(cfg);
    for (auto& [name, t] : all) {
        (shapes.contains(name) ? ckpt.model.tensors : ckpt.extra).emplace(name, std::move(t));
    }
    check_params(ckpt.model);
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    mazeworld::write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(mazeworld::read_file_bytes(path));
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace dtvin::vinet
