#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtvin/graph.hpp"
#include "dtvin/maze.hpp"

namespace dtvin::vinet {

using gradcore::DiffGraph;
using gradcore::NdArray;
using gradcore::NodeId;
using gradcore::Shape;

enum class KernelVariant : std::uint8_t {
    FullyInvariant = 0,
    LatentStateDynamic = 1,
    ObservationDynamic = 2,
    FullyDynamic = 3,
};

/// CLI spelling: invariant, state-dynamic, obs-dynamic, fully-dynamic.
const char* variant_name(KernelVariant variant);
KernelVariant parse_variant(const std::string& name);

struct NetworkConfig {
    KernelVariant variant = KernelVariant::FullyDynamic;
    bool apply_softmax = true;
    int size = 15;            // M
    int kernel = 3;           // F
    int conv_kernel = 3;      // F'
    int latent_actions = 4;   // |A| of the latent MDP
    int actions = 4;          // real actions emitted by the policy head
    int depth = 100;          // N
    int jump = 10;            // J

    void validate() const;
};

/// Named tensors:
///   reward.w  1 x 2 x 1 x 1, reward.b 1
///   transition.kernel  A x F x F (invariant) or M x M x A x F x F (state-dynamic)
///   transition.w  A*F*F x 1 x F' x F', transition.b A*F*F (obs/fully dynamic)
///   policy.w  actions x 9, policy.b actions
struct ModelParams {
    NetworkConfig config;
    std::map<std::string, NdArray> tensors;

    const NdArray& at(const std::string& name) const;
    NdArray& at(const std::string& name);
    std::size_t count() const;
};

/// Shapes each tensor must have under `config`.
std::map<std::string, Shape> param_shapes(const NetworkConfig& config);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for conv/linear weights and biases; kernel tensors of
/// the invariant and state-dynamic variants use fan_in = F*F.
ModelParams init_params(const NetworkConfig& config, std::uint64_t seed);

/// Throws std::invalid_argument naming the first tensor that is missing or misshapen.
void check_params(const ModelParams& params);

struct Observation {
    NdArray map;   // M x M
    NdArray goal;  // M x M one-hot

    int size() const { return static_cast<int>(map.dim(0)); }
    /// M x M x 2, channel 0 = map, channel 1 = goal.
    NdArray stacked() const;
};

Observation make_observation(const mazeworld::MazeTask& task);
Observation make_observation(const NdArray& map, mazeworld::Cell goal);

/// Raised when a planning layer produces a non-finite value.
class NonFiniteValue : public std::runtime_error {
public:
    explicit NonFiniteValue(int layer)
        : std::runtime_error("non-finite value at planning layer " + std::to_string(layer)), layer_(layer) {}
    int layer() const { return layer_; }

private:
    int layer_;
};

/// Parameter leaves of a graph, keyed by tensor name.
using ParamNodes = std::map<std::string, NodeId>;

ParamNodes add_params(DiffGraph& graph, const ModelParams& params);

/// R[i,j] = w_map*map + w_goal*goal + b. `obs` is M x M x 2; result M x M.
NodeId reward_mapping(DiffGraph& graph, NodeId obs, const ParamNodes& p);
/// Kernel node shaped A x F x F or M x M x A x F x F, softmax-normalized per (state, action) if enabled.
NodeId transition_mapping(DiffGraph& graph, NodeId obs, const ParamNodes& p, const NetworkConfig& config);
/// max_a sum_{u,v} T[i,j,a,u,v] (R + V)[i-u, j-v].
NodeId vi_step(DiffGraph& graph, NodeId reward, NodeId value, NodeId kernel);
/// 3x3 zero-padded patch of `value_map` around `pos`, then the linear head.
NodeId policy_logits(DiffGraph& graph, NodeId value_map, mazeworld::Cell pos, const ParamNodes& p);

struct PlanNodes {
    NodeId reward = 0;
    NodeId kernel = 0;
    /// (n, V^(n)) for n mod J == 0 and n == N, n ascending.
    std::vector<std::pair<int, NodeId>> recorded;
};

/// Stacks N VI layers from V^(0) = 0. Throws NonFiniteValue on divergence.
PlanNodes plan(DiffGraph& graph, NodeId reward, NodeId kernel, int depth, int jump);
PlanNodes plan(DiffGraph& graph, NodeId obs, const ParamNodes& p, const NetworkConfig& config);

struct ValueStack {
    std::vector<int> layers;
    std::vector<NdArray> values;

    const NdArray& final_value() const { return values.back(); }
};

/// Value-only planning on a private graph.
ValueStack plan_values(const Observation& obs, const ModelParams& params);
ValueStack plan_values(const NdArray& reward, const NdArray& kernel, int depth, int jump);

/// Logits from a concrete value map.
std::vector<double> policy_logits(const NdArray& value_map, mazeworld::Cell pos, const ModelParams& params);

}  // namespace dtvin::vinet
