#include "dtvin/vinet.hpp"

#include <cmath>

namespace dtvin::vinet {
namespace {

std::size_t sz(int v) {
    return static_cast<std::size_t>(v);
}

}  // namespace

const char* variant_name(KernelVariant variant) {
    switch (variant) {
        case KernelVariant::FullyInvariant: return "invariant";
        case KernelVariant::LatentStateDynamic: return "state-dynamic";
        case KernelVariant::ObservationDynamic: return "obs-dynamic";
        case KernelVariant::FullyDynamic: return "fully-dynamic";
    }
    return "?";
}

KernelVariant parse_variant(const std::string& name) {
    for (auto v : {KernelVariant::FullyInvariant, KernelVariant::LatentStateDynamic, KernelVariant::ObservationDynamic,
                   KernelVariant::FullyDynamic}) {
        if (name == variant_name(v)) {
            return v;
        }
    }
    throw std::invalid_argument("unknown kernel variant '" + name +
                                "' (expected invariant, state-dynamic, obs-dynamic or fully-dynamic)");
}

void NetworkConfig::validate() const {
    if (size < 1 || kernel < 1 || kernel % 2 == 0 || conv_kernel < 1 || conv_kernel % 2 == 0) {
        throw std::invalid_argument("network config: M must be positive and F, F' odd");
    }
    if (latent_actions < 1 || actions < 1) {
        throw std::invalid_argument("network config: action counts must be positive");
    }
    if (depth < 1 || jump < 1) {
        throw std::invalid_argument("network config: depth and jump must be at least 1");
    }
}

const NdArray& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::invalid_argument("model has no tensor '" + name + "'");
    }
    return it->second;
}

NdArray& ModelParams::at(const std::string& name) {
    return const_cast<NdArray&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) {
        n += t.size();
    }
    return n;
}

std::map<std::string, Shape> param_shapes(const NetworkConfig& config) {
    config.validate();
    const std::size_t a = sz(config.latent_actions), f = sz(config.kernel), fp = sz(config.conv_kernel);
    const std::size_t m = sz(config.size);
    std::map<std::string, Shape> shapes = {
        {"reward.w", {1, 2, 1, 1}},
        {"reward.b", {1}},
        {"policy.w", {sz(config.actions), 9}},
        {"policy.b", {sz(config.actions)}},
    };
    switch (config.variant) {
        case KernelVariant::FullyInvariant: shapes["transition.kernel"] = {a, f, f}; break;
        case KernelVariant::LatentStateDynamic: shapes["transition.kernel"] = {m, m, a, f, f}; break;
        case KernelVariant::ObservationDynamic:
        case KernelVariant::FullyDynamic:
            shapes["transition.w"] = {a * f * f, 1, fp, fp};
            shapes["transition.b"] = {a * f * f};
            break;
    }
    return shapes;
}

ModelParams init_params(const NetworkConfig& config, std::uint64_t seed) {
    ModelParams params;
    params.config = config;
    std::mt19937_64 rng(seed);
    const double kernel_fan = static_cast<double>(config.kernel * config.kernel);
    const double conv_fan = static_cast<double>(config.conv_kernel * config.conv_kernel);
    const std::map<std::string, double> fan_in = {
        {"reward.w", 2.0},          {"reward.b", 2.0},          {"policy.w", 9.0},
        {"policy.b", 9.0},          {"transition.w", conv_fan}, {"transition.b", conv_fan},
        {"transition.kernel", kernel_fan},
    };
    // std::map iteration order keeps the draw sequence fixed.
    for (const auto& [name, shape] : param_shapes(config)) {
        const double bound = 1.0 / std::sqrt(fan_in.at(name));
        std::uniform_real_distribution<double> dist(-bound, bound);
        NdArray t(shape);
        for (double& v : t.storage()) {
            v = dist(rng);
        }
        params.tensors.emplace(name, std::move(t));
    }
    return params;
}

void check_params(const ModelParams& params) {
    for (const auto& [name, shape] : param_shapes(params.config)) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end()) {
            throw std::invalid_argument("model is missing tensor '" + name + "'");
        }
        if (it->second.shape() != shape) {
            throw std::invalid_argument("tensor '" + name + "' has shape " + gradcore::shape_to_string(it->second.shape()) +
                                        ", expected " + gradcore::shape_to_string(shape));
        }
    }
}

NdArray Observation::stacked() const {
    const std::size_t m = map.dim(0);
    NdArray out(Shape{m, m, 2});
    for (std::size_t k = 0; k < m * m; ++k) {
        out[2 * k] = map[k];
        out[2 * k + 1] = goal[k];
    }
    return out;
}

Observation make_observation(const NdArray& map, mazeworld::Cell goal) {
    if (map.rank() != 2 || map.dim(0) != map.dim(1)) {
        throw std::invalid_argument("observation map must be M x M");
    }
    Observation obs{map, NdArray(map.shape())};
    obs.goal.at(sz(goal.row), sz(goal.col)) = 1.0;
    return obs;
}

Observation make_observation(const mazeworld::MazeTask& task) {
    return make_observation(task.grid.to_array(), task.goal);
}

ParamNodes add_params(DiffGraph& graph, const ModelParams& params) {
    check_params(params);
    ParamNodes nodes;
    for (const auto& [name, t] : params.tensors) {
        nodes[name] = graph.parameter(name, t);
    }
    return nodes;
}

NodeId reward_mapping(DiffGraph& graph, NodeId obs, const ParamNodes& p) {
    const std::size_t m = graph.value(obs).dim(0);
    const NodeId r = graph.conv2d_same(obs, p.at("reward.w"), p.at("reward.b"));
    return graph.reshape(r, Shape{m, m});
}

NodeId transition_mapping(DiffGraph& graph, NodeId obs, const ParamNodes& p, const NetworkConfig& config) {
    const std::size_t m = graph.value(obs).dim(0);
    const std::size_t a = sz(config.latent_actions), f = sz(config.kernel);
    NodeId kernel = 0;
    if (config.variant == KernelVariant::FullyInvariant || config.variant == KernelVariant::LatentStateDynamic) {
        kernel = p.at("transition.kernel");
    } else {
        // Transition conv sees the map channel only.
        const NdArray& stacked = graph.value(obs);
        NdArray map_channel(Shape{m, m, 1});
        for (std::size_t k = 0; k < m * m; ++k) {
            map_channel[k] = stacked[2 * k];
        }
        const NodeId raw = graph.conv2d_same(graph.constant(std::move(map_channel)), p.at("transition.w"), p.at("transition.b"));
        if (config.variant == KernelVariant::FullyDynamic) {
            kernel = graph.reshape(raw, Shape{m, m, a, f, f});
        } else {
            kernel = graph.reshape(graph.spatial_mean(raw), Shape{a, f, f});
        }
    }
    if (config.apply_softmax) {
        kernel = graph.softmax(kernel, f * f);
    }
    return kernel;
}

NodeId vi_step(DiffGraph& graph, NodeId reward, NodeId value, NodeId kernel) {
    return graph.max_over_actions(graph.dynamic_patch_sum(graph.add(reward, value), kernel));
}

NodeId policy_logits(DiffGraph& graph, NodeId value_map, mazeworld::Cell pos, const ParamNodes& p) {
    const NodeId patch = graph.gather_window(value_map, pos.row, pos.col, 3);
    return graph.linear(patch, p.at("policy.w"), p.at("policy.b"));
}

PlanNodes plan(DiffGraph& graph, NodeId reward, NodeId kernel, int depth, int jump) {
    if (depth < 0 || jump < 1) {
        throw std::invalid_argument("plan: need N >= 0 and J >= 1");
    }
    PlanNodes out{reward, kernel, {}};
    NodeId value = graph.constant(NdArray(graph.value(reward).shape()));
    if (depth == 0) {
        out.recorded.emplace_back(0, value);
        return out;
    }
    for (int n = 1; n <= depth; ++n) {
        value = vi_step(graph, reward, value, kernel);
        if (!graph.value(value).all_finite()) {
            throw NonFiniteValue(n);
        }
        if (n % jump == 0 || n == depth) {
            out.recorded.emplace_back(n, value);
        }
    }
    return out;
}

PlanNodes plan(DiffGraph& graph, NodeId obs, const ParamNodes& p, const NetworkConfig& config) {
    const NodeId reward = reward_mapping(graph, obs, p);
    const NodeId kernel = transition_mapping(graph, obs, p, config);
    return plan(graph, reward, kernel, config.depth, config.jump);
}

namespace {

ValueStack collect(const DiffGraph& graph, const PlanNodes& nodes) {
    ValueStack stack;
    for (const auto& [n, id] : nodes.recorded) {
        stack.layers.push_back(n);
        stack.values.push_back(graph.value(id));
    }
    return stack;
}

}  // namespace

ValueStack plan_values(const Observation& obs, const ModelParams& params) {
    if (obs.size() != params.config.size) {
        throw std::invalid_argument("observation is " + std::to_string(obs.size()) + "x" + std::to_string(obs.size()) +
                                    " but the model was built for M=" + std::to_string(params.config.size));
    }
    DiffGraph graph;
    const auto p = add_params(graph, params);
    const NodeId x = graph.constant(obs.stacked());
    return collect(graph, plan(graph, x, p, params.config));
}

ValueStack plan_values(const NdArray& reward, const NdArray& kernel, int depth, int jump) {
    DiffGraph graph;
    const NodeId r = graph.constant(reward);
    const NodeId k = graph.constant(kernel);
    return collect(graph, plan(graph, r, k, depth, jump));
}

std::vector<double> policy_logits(const NdArray& value_map, mazeworld::Cell pos, const ModelParams& params) {
    const NdArray& w = params.at("policy.w");
    const NdArray& b = params.at("policy.b");
    const int m = static_cast<int>(value_map.dim(0));
    double patch[9];
    for (int du = -1; du <= 1; ++du) {
        for (int dv = -1; dv <= 1; ++dv) {
            const int r = pos.row + du, c = pos.col + dv;
            const bool inside = r >= 0 && c >= 0 && r < m && c < m;
            patch[(du + 1) * 3 + dv + 1] = inside ? value_map.at(sz(r), sz(c)) : 0.0;
        }
    }
    std::vector<double> logits(b.size());
    for (std::size_t a = 0; a < logits.size(); ++a) {
        double acc = b[a];
        for (std::size_t k = 0; k < 9; ++k) {
            acc += w.at(a, k) * patch[k];
        }
        logits[a] = acc;
    }
    return logits;
}

}  // namespace dtvin::vinet
