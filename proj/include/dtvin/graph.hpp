#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtvin/ndarray.hpp"

namespace dtvin::gradcore {

using NodeId = std::size_t;

/// Raised when an operation sees non-finite input (upstream numeric blowup).
class NumericError : public std::runtime_error {
public:
    NumericError(NodeId node, const std::string& what)
        : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
    NodeId node() const { return node_; }

private:
    NodeId node_;
};

enum class OpKind : std::uint8_t {
    Constant,
    Parameter,
    Add,
    Reshape,
    Softmax,
    Conv2dSame,
    SpatialMean,
    DynamicPatchSum,
    MaxOverActions,
    GatherWindow,
    Linear,
    CrossEntropy,
    WeightedSum,
};

const char* op_name(OpKind op);

/// Tape of operation records over 64-bit arrays.
///
/// Operations evaluate eagerly as they are appended, so values are available
/// immediately. Because ids are assigned in append order the tape is already
/// topologically sorted; backward() walks it in strictly reverse order and
/// recompute() replays it forward after leaf values are edited.
class DiffGraph {
public:
    NodeId constant(NdArray value);
    /// Registers a named learnable leaf. Names must be unique within a graph.
    NodeId parameter(const std::string& name, NdArray value);

    NodeId add(NodeId a, NodeId b);
    NodeId reshape(NodeId x, Shape shape);
    /// Softmax over consecutive groups of `group` trailing elements.
    NodeId softmax(NodeId x, std::size_t group);
    /// input H x W x Cin, kernel Cout x Cin x F x F (F odd), bias Cout -> H x W x Cout.
    NodeId conv2d_same(NodeId input, NodeId kernel, NodeId bias);
    /// H x W x C -> C, arithmetic mean over both spatial axes.
    NodeId spatial_mean(NodeId x);
    /// field M x M, kernel A x F x F (state-invariant) or M x M x A x F x F -> M x M x A.
    /// Q[i,j,a] = sum_{u,v} T[i,j,a,u+c,v+c] * field[i-u, j-v], zero outside the grid.
    NodeId dynamic_patch_sum(NodeId field, NodeId kernel);
    /// M x M x A -> M x M, ties to the lowest action index.
    NodeId max_over_actions(NodeId q);
    /// size x size window of an M x M map centred at (row, col), zero padded, flattened row-major.
    NodeId gather_window(NodeId map, int row, int col, int size);
    /// weights Out x In, bias Out.
    NodeId linear(NodeId x, NodeId weights, NodeId bias);
    /// -log softmax(logits)[label], shape {1}.
    NodeId cross_entropy(NodeId logits, std::size_t label);
    /// scale * sum of the given scalar nodes.
    NodeId weighted_sum(std::span<const NodeId> scalars, double scale);

    std::size_t size() const { return nodes_.size(); }
    OpKind op(NodeId id) const { return nodes_.at(id).op; }
    std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
    const NdArray& value(NodeId id) const { return nodes_.at(id).value; }
    /// Gradient from the last backward(); zeros for nodes the loss does not depend on.
    NdArray grad(NodeId id) const;
    /// Argmax map recorded by a max_over_actions node.
    std::span<const std::int32_t> argmax(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

    const std::map<std::string, NodeId>& parameters() const { return params_; }
    NodeId parameter_id(const std::string& name) const;
    /// Leaf value access for in-place edits; call recompute() afterwards.
    NdArray& leaf_value(NodeId id);

    /// Reverse pass from a single-element node, seeding d(loss)/d(loss) = seed.
    void backward(NodeId loss, double seed = 1.0);
    /// Replays the forward pass. Returns false if any max_over_actions argmax changed.
    bool recompute();
    /// Lowest node id holding a non-finite value, if any.
    std::optional<NodeId> first_non_finite() const;

private:
    struct Node {
        OpKind op = OpKind::Constant;
        std::vector<NodeId> inputs;
        NdArray value;
        NdArray grad;
        std::vector<std::int32_t> ints;
        double scale = 1.0;
        bool requires_grad = false;
    };

    NodeId push(Node node);
    void forward(NodeId id);
    void backward_node(NodeId id);
    NdArray& grad_slot(NodeId id);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> params_;
    NodeId grads_valid_upto_ = 0;
    bool has_grads_ = false;
};

struct FdOptions {
    double eps = 1e-5;
    /// Coordinates checked per parameter tensor; tensors at most this large are checked exhaustively.
    std::size_t max_coords_per_param = 64;
    std::uint64_t seed = 0;
    /// Test hook applied to each analytic gradient before comparison.
    std::function<void(const std::string&, NdArray&)> analytic_hook;
};

struct FdReport {
    bool finite = true;
    std::optional<NodeId> non_finite_node;
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose perturbation moved an argmax (non-differentiable point), excluded.
    std::size_t skipped_kinks = 0;
};

/// Central-difference check of d(loss)/d(param) for every registered parameter (or the named subset).
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|). Leaves the graph in its
/// original state.
FdReport finite_difference_check(DiffGraph& graph, NodeId loss, const FdOptions& options = {},
                                 std::span<const std::string> params = {});

}  // namespace dtvin::gradcore
