#include "dtvin/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dtvin::gradcore {
namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

}  // namespace

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Constant: return "constant";
        case OpKind::Parameter: return "parameter";
        case OpKind::Add: return "add";
        case OpKind::Reshape: return "reshape";
        case OpKind::Softmax: return "softmax";
        case OpKind::Conv2dSame: return "conv2d_same";
        case OpKind::SpatialMean: return "spatial_mean";
        case OpKind::DynamicPatchSum: return "dynamic_patch_sum";
        case OpKind::MaxOverActions: return "max_over_actions";
        case OpKind::GatherWindow: return "gather_window";
        case OpKind::Linear: return "linear";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::WeightedSum: return "weighted_sum";
    }
    return "?";
}

NodeId DiffGraph::push(Node node) {
    for (NodeId in : node.inputs) {
        require(in < nodes_.size(), "DiffGraph: input id out of range");
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    nodes_.push_back(std::move(node));
    const NodeId id = nodes_.size() - 1;
    if (nodes_[id].op != OpKind::Constant && nodes_[id].op != OpKind::Parameter) {
        forward(id);
    }
    return id;
}

NodeId DiffGraph::constant(NdArray value) {
    Node n;
    n.op = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId DiffGraph::parameter(const std::string& name, NdArray value) {
    require(!params_.contains(name), "DiffGraph: duplicate parameter '" + name + "'");
    Node n;
    n.op = OpKind::Parameter;
    n.value = std::move(value);
    n.requires_grad = true;
    NodeId id = push(std::move(n));
    params_.emplace(name, id);
    return id;
}

NodeId DiffGraph::add(NodeId a, NodeId b) {
    require(value(a).shape() == value(b).shape(), "add: shape mismatch " + shape_to_string(value(a).shape()) +
                                                       " vs " + shape_to_string(value(b).shape()));
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    return push(std::move(n));
}

NodeId DiffGraph::reshape(NodeId x, Shape shape) {
    require(shape_size(shape) == value(x).size(), "reshape: element count mismatch");
    Node n;
    n.op = OpKind::Reshape;
    n.inputs = {x};
    n.value = NdArray(std::move(shape));
    return push(std::move(n));
}

NodeId DiffGraph::softmax(NodeId x, std::size_t group) {
    require(group >= 1 && value(x).size() % group == 0, "softmax: group must divide the array size");
    Node n;
    n.op = OpKind::Softmax;
    n.inputs = {x};
    n.ints = {static_cast<std::int32_t>(group)};
    return push(std::move(n));
}

NodeId DiffGraph::conv2d_same(NodeId input, NodeId kernel, NodeId bias) {
    const auto& in = value(input);
    const auto& k = value(kernel);
    require(in.rank() == 3, "conv2d_same: input must be H x W x Cin");
    require(k.rank() == 4 && k.dim(2) == k.dim(3), "conv2d_same: kernel must be Cout x Cin x F x F");
    require(k.dim(2) % 2 == 1, "conv2d_same: kernel size must be odd, got " + std::to_string(k.dim(2)));
    require(k.dim(1) == in.dim(2), "conv2d_same: channel mismatch");
    require(value(bias).size() == k.dim(0), "conv2d_same: bias size must equal Cout");
    Node n;
    n.op = OpKind::Conv2dSame;
    n.inputs = {input, kernel, bias};
    return push(std::move(n));
}

NodeId DiffGraph::spatial_mean(NodeId x) {
    require(value(x).rank() == 3, "spatial_mean: input must be H x W x C");
    Node n;
    n.op = OpKind::SpatialMean;
    n.inputs = {x};
    return push(std::move(n));
}

NodeId DiffGraph::dynamic_patch_sum(NodeId field, NodeId kernel) {
    const auto& f = value(field);
    const auto& k = value(kernel);
    require(f.rank() == 2 && f.dim(0) == f.dim(1), "dynamic_patch_sum: field must be M x M");
    if (k.rank() == 3) {
        require(k.dim(1) == k.dim(2) && k.dim(1) % 2 == 1, "dynamic_patch_sum: kernel must be A x F x F, F odd");
    } else {
        require(k.rank() == 5, "dynamic_patch_sum: kernel must be A x F x F or M x M x A x F x F");
        require(k.dim(0) == f.dim(0) && k.dim(1) == f.dim(1),
                "dynamic_patch_sum: kernel grid " + shape_to_string(k.shape()) + " does not match field M=" +
                    std::to_string(f.dim(0)));
        require(k.dim(3) == k.dim(4) && k.dim(3) % 2 == 1, "dynamic_patch_sum: kernel F must be odd");
    }
    Node n;
    n.op = OpKind::DynamicPatchSum;
    n.inputs = {field, kernel};
    return push(std::move(n));
}

NodeId DiffGraph::max_over_actions(NodeId q) {
    const auto& v = value(q);
    require(v.rank() == 3 && v.dim(2) >= 1, "max_over_actions: input must be M x M x A with A >= 1");
    Node n;
    n.op = OpKind::MaxOverActions;
    n.inputs = {q};
    return push(std::move(n));
}

NodeId DiffGraph::gather_window(NodeId map, int row, int col, int size) {
    const auto& m = value(map);
    require(m.rank() == 2, "gather_window: map must be rank 2");
    require(size >= 1 && size % 2 == 1, "gather_window: size must be odd");
    require(row >= 0 && col >= 0 && static_cast<std::size_t>(row) < m.dim(0) &&
                static_cast<std::size_t>(col) < m.dim(1),
            "gather_window: position off grid");
    Node n;
    n.op = OpKind::GatherWindow;
    n.inputs = {map};
    n.ints = {row, col, size};
    return push(std::move(n));
}

NodeId DiffGraph::linear(NodeId x, NodeId weights, NodeId bias) {
    const auto& w = value(weights);
    require(w.rank() == 2, "linear: weights must be Out x In");
    require(value(x).size() == w.dim(1), "linear: input has " + std::to_string(value(x).size()) +
                                              " values, weights expect " + std::to_string(w.dim(1)));
    require(value(bias).size() == w.dim(0), "linear: bias size must equal Out");
    Node n;
    n.op = OpKind::Linear;
    n.inputs = {x, weights, bias};
    return push(std::move(n));
}

NodeId DiffGraph::cross_entropy(NodeId logits, std::size_t label) {
    require(label < value(logits).size(), "cross_entropy: label " + std::to_string(label) + " out of range");
    Node n;
    n.op = OpKind::CrossEntropy;
    n.inputs = {logits};
    n.ints = {static_cast<std::int32_t>(label)};
    return push(std::move(n));
}

NodeId DiffGraph::weighted_sum(std::span<const NodeId> scalars, double scale) {
    Node n;
    n.op = OpKind::WeightedSum;
    n.inputs.assign(scalars.begin(), scalars.end());
    for (NodeId s : n.inputs) {
        require(s < nodes_.size() && nodes_[s].value.size() == 1, "weighted_sum: inputs must be scalars");
    }
    n.scale = scale;
    return push(std::move(n));
}

NodeId DiffGraph::parameter_id(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("DiffGraph: unknown parameter '" + name + "'");
    }
    return it->second;
}

NdArray& DiffGraph::leaf_value(NodeId id) {
    Node& n = nodes_.at(id);
    require(n.op == OpKind::Constant || n.op == OpKind::Parameter, "leaf_value: node is not a leaf");
    return n.value;
}

std::span<const std::int32_t> DiffGraph::argmax(NodeId id) const {
    const Node& n = nodes_.at(id);
    require(n.op == OpKind::MaxOverActions, "argmax: node is not max_over_actions");
    return n.ints;
}

NdArray DiffGraph::grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (!has_grads_ || id > grads_valid_upto_ || !n.requires_grad) {
        return NdArray(n.value.shape());
    }
    return n.grad;
}

NdArray& DiffGraph::grad_slot(NodeId id) {
    return nodes_[id].grad;
}

std::optional<NodeId> DiffGraph::first_non_finite() const {
    for (NodeId i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].value.all_finite()) {
            return i;
        }
    }
    return std::nullopt;
}

bool DiffGraph::recompute() {
    bool same = true;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == OpKind::Constant || n.op == OpKind::Parameter) {
            continue;
        }
        if (n.op == OpKind::MaxOverActions) {
            std::vector<std::int32_t> before = n.ints;
            forward(i);
            same = same && before == n.ints;
        } else {
            forward(i);
        }
    }
    has_grads_ = false;
    return same;
}

void DiffGraph::forward(NodeId id) {
    Node& n = nodes_[id];
    switch (n.op) {
        case OpKind::Constant:
        case OpKind::Parameter:
            return;
        case OpKind::Add: {
            const auto& a = nodes_[n.inputs[0]].value;
            const auto& b = nodes_[n.inputs[1]].value;
            n.value = NdArray(a.shape());
            for (std::size_t k = 0; k < a.size(); ++k) {
                n.value[k] = a[k] + b[k];
            }
            return;
        }
        case OpKind::Reshape: {
            Shape shape = n.value.shape();
            n.value = nodes_[n.inputs[0]].value.reshaped(std::move(shape));
            return;
        }
        case OpKind::Softmax: {
            const auto& x = nodes_[n.inputs[0]].value;
            if (!x.all_finite()) {
                throw NumericError(id, "softmax: non-finite input");
            }
            const auto group = static_cast<std::size_t>(n.ints[0]);
            n.value = NdArray(x.shape());
            for (std::size_t g0 = 0; g0 < x.size(); g0 += group) {
                double mx = x[g0];
                for (std::size_t k = 1; k < group; ++k) {
                    mx = std::max(mx, x[g0 + k]);
                }
                double z = 0.0;
                for (std::size_t k = 0; k < group; ++k) {
                    const double e = std::exp(x[g0 + k] - mx);
                    n.value[g0 + k] = e;
                    z += e;
                }
                for (std::size_t k = 0; k < group; ++k) {
                    n.value[g0 + k] /= z;
                }
            }
            return;
        }
        case OpKind::Conv2dSame: {
            const auto& in = nodes_[n.inputs[0]].value;
            const auto& k = nodes_[n.inputs[1]].value;
            const auto& b = nodes_[n.inputs[2]].value;
            const std::size_t h = in.dim(0), w = in.dim(1), cin = in.dim(2);
            const std::size_t cout = k.dim(0), f = k.dim(2);
            const long c = static_cast<long>(f / 2);
            n.value = NdArray(Shape{h, w, cout});
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    double* out = &n.value[(i * w + j) * cout];
                    for (std::size_t co = 0; co < cout; ++co) {
                        out[co] = b[co];
                    }
                    for (std::size_t p = 0; p < f; ++p) {
                        const long ii = static_cast<long>(i) + static_cast<long>(p) - c;
                        if (ii < 0 || ii >= static_cast<long>(h)) {
                            continue;
                        }
                        for (std::size_t q = 0; q < f; ++q) {
                            const long jj = static_cast<long>(j) + static_cast<long>(q) - c;
                            if (jj < 0 || jj >= static_cast<long>(w)) {
                                continue;
                            }
                            const double* src = &in[(static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin];
                            for (std::size_t co = 0; co < cout; ++co) {
                                double acc = 0.0;
                                for (std::size_t ci = 0; ci < cin; ++ci) {
                                    acc += k[((co * cin + ci) * f + p) * f + q] * src[ci];
                                }
                                out[co] += acc;
                            }
                        }
                    }
                }
            }
            return;
        }
        case OpKind::SpatialMean: {
            const auto& x = nodes_[n.inputs[0]].value;
            const std::size_t hw = x.dim(0) * x.dim(1), ch = x.dim(2);
            n.value = NdArray(Shape{ch});
            for (std::size_t s = 0; s < hw; ++s) {
                for (std::size_t k = 0; k < ch; ++k) {
                    n.value[k] += x[s * ch + k];
                }
            }
            for (std::size_t k = 0; k < ch; ++k) {
                n.value[k] /= static_cast<double>(hw);
            }
            return;
        }
        case OpKind::DynamicPatchSum: {
            const auto& field = nodes_[n.inputs[0]].value;
            const auto& t = nodes_[n.inputs[1]].value;
            const bool invariant = t.rank() == 3;
            const std::size_t m = field.dim(0);
            const std::size_t a_count = invariant ? t.dim(0) : t.dim(2);
            const std::size_t f = invariant ? t.dim(1) : t.dim(3);
            const long c = static_cast<long>(f / 2);
            const std::size_t per_cell = a_count * f * f;
            n.value = NdArray(Shape{m, m, a_count});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double* tk = invariant ? &t[0] : &t[(i * m + j) * per_cell];
                    for (std::size_t a = 0; a < a_count; ++a) {
                        double acc = 0.0;
                        for (long u = -c; u <= c; ++u) {
                            const long ii = static_cast<long>(i) - u;
                            if (ii < 0 || ii >= static_cast<long>(m)) {
                                continue;
                            }
                            for (long v = -c; v <= c; ++v) {
                                const long jj = static_cast<long>(j) - v;
                                if (jj < 0 || jj >= static_cast<long>(m)) {
                                    continue;
                                }
                                acc += tk[(a * f + static_cast<std::size_t>(u + c)) * f + static_cast<std::size_t>(v + c)] *
                                       field[static_cast<std::size_t>(ii) * m + static_cast<std::size_t>(jj)];
                            }
                        }
                        n.value[(i * m + j) * a_count + a] = acc;
                    }
                }
            }
            return;
        }
        case OpKind::MaxOverActions: {
            const auto& q = nodes_[n.inputs[0]].value;
            const std::size_t cells = q.dim(0) * q.dim(1), a_count = q.dim(2);
            n.value = NdArray(Shape{q.dim(0), q.dim(1)});
            n.ints.assign(cells, 0);
            for (std::size_t s = 0; s < cells; ++s) {
                const double* row = &q[s * a_count];
                std::size_t best = 0;
                for (std::size_t a = 1; a < a_count; ++a) {
                    if (row[a] > row[best]) {
                        best = a;
                    }
                }
                n.value[s] = row[best];
                n.ints[s] = static_cast<std::int32_t>(best);
            }
            return;
        }
        case OpKind::GatherWindow: {
            const auto& m = nodes_[n.inputs[0]].value;
            const int row = n.ints[0], col = n.ints[1], size = n.ints[2], c = size / 2;
            const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
            n.value = NdArray(Shape{static_cast<std::size_t>(size * size)});
            for (int p = 0; p < size; ++p) {
                for (int q = 0; q < size; ++q) {
                    const int ii = row + p - c, jj = col + q - c;
                    if (ii >= 0 && ii < h && jj >= 0 && jj < w) {
                        n.value[static_cast<std::size_t>(p * size + q)] =
                            m[static_cast<std::size_t>(ii * w + jj)];
                    }
                }
            }
            return;
        }
        case OpKind::Linear: {
            const auto& x = nodes_[n.inputs[0]].value;
            const auto& w = nodes_[n.inputs[1]].value;
            const auto& b = nodes_[n.inputs[2]].value;
            const std::size_t out = w.dim(0), in = w.dim(1);
            n.value = NdArray(Shape{out});
            for (std::size_t o = 0; o < out; ++o) {
                double acc = b[o];
                for (std::size_t k = 0; k < in; ++k) {
                    acc += w[o * in + k] * x[k];
                }
                n.value[o] = acc;
            }
            return;
        }
        case OpKind::CrossEntropy: {
            const auto& z = nodes_[n.inputs[0]].value;
            if (!z.all_finite()) {
                throw NumericError(id, "cross_entropy: non-finite logits");
            }
            double mx = z[0];
            for (std::size_t k = 1; k < z.size(); ++k) {
                mx = std::max(mx, z[k]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < z.size(); ++k) {
                s += std::exp(z[k] - mx);
            }
            const auto label = static_cast<std::size_t>(n.ints[0]);
            n.value = NdArray::scalar(mx + std::log(s) - z[label]);
            return;
        }
        case OpKind::WeightedSum: {
            double s = 0.0;
            for (NodeId in : n.inputs) {
                s += nodes_[in].value[0];
            }
            n.value = NdArray::scalar(n.scale * s);
            return;
        }
    }
}

void DiffGraph::backward(NodeId loss, double seed) {
    require(loss < nodes_.size(), "backward: loss id out of range");
    require(nodes_[loss].value.size() == 1, "backward: loss must be a single value");
    for (NodeId i = 0; i <= loss; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad) {
            if (n.grad.shape() == n.value.shape()) {
                n.grad.fill(0.0);
            } else {
                n.grad = NdArray(n.value.shape());
            }
        }
    }
    grads_valid_upto_ = loss;
    has_grads_ = true;
    if (!nodes_[loss].requires_grad) {
        return;
    }
    nodes_[loss].grad[0] = seed;
    for (NodeId i = loss + 1; i-- > 0;) {
        if (nodes_[i].requires_grad) {
            backward_node(i);
        }
    }
}

void DiffGraph::backward_node(NodeId id) {
    Node& n = nodes_[id];
    const NdArray& g = n.grad;
    auto wants = [this](NodeId in) { return nodes_[in].requires_grad; };
    switch (n.op) {
        case OpKind::Constant:
        case OpKind::Parameter:
            return;
        case OpKind::Add: {
            for (NodeId in : n.inputs) {
                if (!wants(in)) {
                    continue;
                }
                NdArray& gi = grad_slot(in);
                for (std::size_t k = 0; k < g.size(); ++k) {
                    gi[k] += g[k];
                }
            }
            return;
        }
        case OpKind::Reshape: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            for (std::size_t k = 0; k < g.size(); ++k) {
                gi[k] += g[k];
            }
            return;
        }
        case OpKind::Softmax: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            const auto group = static_cast<std::size_t>(n.ints[0]);
            const NdArray& y = n.value;
            for (std::size_t g0 = 0; g0 < y.size(); g0 += group) {
                double dot = 0.0;
                for (std::size_t k = 0; k < group; ++k) {
                    dot += g[g0 + k] * y[g0 + k];
                }
                for (std::size_t k = 0; k < group; ++k) {
                    gi[g0 + k] += y[g0 + k] * (g[g0 + k] - dot);
                }
            }
            return;
        }
        case OpKind::Conv2dSame: {
            const NodeId in_id = n.inputs[0], k_id = n.inputs[1], b_id = n.inputs[2];
            const auto& in = nodes_[in_id].value;
            const auto& k = nodes_[k_id].value;
            const std::size_t h = in.dim(0), w = in.dim(1), cin = in.dim(2);
            const std::size_t cout = k.dim(0), f = k.dim(2);
            const long c = static_cast<long>(f / 2);
            NdArray* gin = wants(in_id) ? &grad_slot(in_id) : nullptr;
            NdArray* gk = wants(k_id) ? &grad_slot(k_id) : nullptr;
            NdArray* gb = wants(b_id) ? &grad_slot(b_id) : nullptr;
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    const double* go = &g[(i * w + j) * cout];
                    if (gb != nullptr) {
                        for (std::size_t co = 0; co < cout; ++co) {
                            (*gb)[co] += go[co];
                        }
                    }
                    for (std::size_t p = 0; p < f; ++p) {
                        const long ii = static_cast<long>(i) + static_cast<long>(p) - c;
                        if (ii < 0 || ii >= static_cast<long>(h)) {
                            continue;
                        }
                        for (std::size_t q = 0; q < f; ++q) {
                            const long jj = static_cast<long>(j) + static_cast<long>(q) - c;
                            if (jj < 0 || jj >= static_cast<long>(w)) {
                                continue;
                            }
                            const std::size_t src = (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin;
                            for (std::size_t co = 0; co < cout; ++co) {
                                if (go[co] == 0.0) {
                                    continue;
                                }
                                for (std::size_t ci = 0; ci < cin; ++ci) {
                                    const std::size_t kk = ((co * cin + ci) * f + p) * f + q;
                                    if (gk != nullptr) {
                                        (*gk)[kk] += go[co] * in[src + ci];
                                    }
                                    if (gin != nullptr) {
                                        (*gin)[src + ci] += go[co] * k[kk];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            return;
        }
        case OpKind::SpatialMean: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            const auto& x = nodes_[n.inputs[0]].value;
            const std::size_t hw = x.dim(0) * x.dim(1), ch = x.dim(2);
            for (std::size_t s = 0; s < hw; ++s) {
                for (std::size_t k = 0; k < ch; ++k) {
                    gi[s * ch + k] += g[k] / static_cast<double>(hw);
                }
            }
            return;
        }
        case OpKind::DynamicPatchSum: {
            const NodeId f_id = n.inputs[0], t_id = n.inputs[1];
            const auto& field = nodes_[f_id].value;
            const auto& t = nodes_[t_id].value;
            NdArray* gf = wants(f_id) ? &grad_slot(f_id) : nullptr;
            NdArray* gt = wants(t_id) ? &grad_slot(t_id) : nullptr;
            const bool invariant = t.rank() == 3;
            const std::size_t m = field.dim(0);
            const std::size_t a_count = invariant ? t.dim(0) : t.dim(2);
            const std::size_t f = invariant ? t.dim(1) : t.dim(3);
            const long c = static_cast<long>(f / 2);
            const std::size_t per_cell = a_count * f * f;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t base = invariant ? 0 : (i * m + j) * per_cell;
                    for (std::size_t a = 0; a < a_count; ++a) {
                        const double gq = g[(i * m + j) * a_count + a];
                        if (gq == 0.0) {
                            continue;
                        }
                        for (long u = -c; u <= c; ++u) {
                            const long ii = static_cast<long>(i) - u;
                            if (ii < 0 || ii >= static_cast<long>(m)) {
                                continue;
                            }
                            for (long v = -c; v <= c; ++v) {
                                const long jj = static_cast<long>(j) - v;
                                if (jj < 0 || jj >= static_cast<long>(m)) {
                                    continue;
                                }
                                const std::size_t ti =
                                    base + (a * f + static_cast<std::size_t>(u + c)) * f + static_cast<std::size_t>(v + c);
                                const std::size_t fi = static_cast<std::size_t>(ii) * m + static_cast<std::size_t>(jj);
                                if (gt != nullptr) {
                                    (*gt)[ti] += gq * field[fi];
                                }
                                if (gf != nullptr) {
                                    (*gf)[fi] += gq * t[ti];
                                }
                            }
                        }
                    }
                }
            }
            return;
        }
        case OpKind::MaxOverActions: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            const std::size_t a_count = nodes_[n.inputs[0]].value.dim(2);
            for (std::size_t s = 0; s < n.ints.size(); ++s) {
                gi[s * a_count + static_cast<std::size_t>(n.ints[s])] += g[s];
            }
            return;
        }
        case OpKind::GatherWindow: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            const auto& m = nodes_[n.inputs[0]].value;
            const int row = n.ints[0], col = n.ints[1], size = n.ints[2], c = size / 2;
            const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
            for (int p = 0; p < size; ++p) {
                for (int q = 0; q < size; ++q) {
                    const int ii = row + p - c, jj = col + q - c;
                    if (ii >= 0 && ii < h && jj >= 0 && jj < w) {
                        gi[static_cast<std::size_t>(ii * w + jj)] += g[static_cast<std::size_t>(p * size + q)];
                    }
                }
            }
            return;
        }
        case OpKind::Linear: {
            const NodeId x_id = n.inputs[0], w_id = n.inputs[1], b_id = n.inputs[2];
            const auto& x = nodes_[x_id].value;
            const auto& w = nodes_[w_id].value;
            const std::size_t out = w.dim(0), in = w.dim(1);
            NdArray* gx = wants(x_id) ? &grad_slot(x_id) : nullptr;
            NdArray* gw = wants(w_id) ? &grad_slot(w_id) : nullptr;
            NdArray* gb = wants(b_id) ? &grad_slot(b_id) : nullptr;
            for (std::size_t o = 0; o < out; ++o) {
                if (gb != nullptr) {
                    (*gb)[o] += g[o];
                }
                for (std::size_t k = 0; k < in; ++k) {
                    if (gw != nullptr) {
                        (*gw)[o * in + k] += g[o] * x[k];
                    }
                    if (gx != nullptr) {
                        (*gx)[k] += g[o] * w[o * in + k];
                    }
                }
            }
            return;
        }
        case OpKind::CrossEntropy: {
            if (!wants(n.inputs[0])) {
                return;
            }
            NdArray& gi = grad_slot(n.inputs[0]);
            const auto& z = nodes_[n.inputs[0]].value;
            double mx = z[0];
            for (std::size_t k = 1; k < z.size(); ++k) {
                mx = std::max(mx, z[k]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < z.size(); ++k) {
                s += std::exp(z[k] - mx);
            }
            const auto label = static_cast<std::size_t>(n.ints[0]);
            for (std::size_t k = 0; k < z.size(); ++k) {
                const double p = std::exp(z[k] - mx) / s;
                gi[k] += g[0] * (p - (k == label ? 1.0 : 0.0));
            }
            return;
        }
        case OpKind::WeightedSum: {
            for (NodeId in : n.inputs) {
                if (wants(in)) {
                    grad_slot(in)[0] += n.scale * g[0];
                }
            }
            return;
        }
    }
}

FdReport finite_difference_check(DiffGraph& graph, NodeId loss, const FdOptions& options,
                                 std::span<const std::string> params) {
    if (!(options.eps > 0.0)) {
        throw std::invalid_argument("finite_difference_check: eps must be positive");
    }
    FdReport report;
    std::vector<std::string> names;
    if (params.empty()) {
        for (const auto& [name, id] : graph.parameters()) {
            names.push_back(name);
        }
    } else {
        names.assign(params.begin(), params.end());
    }

    if (!graph.value(loss).all_finite()) {
        report.finite = false;
        report.non_finite_node = graph.first_non_finite();
        return report;
    }
    graph.backward(loss);
    std::map<std::string, NdArray> analytic;
    for (const auto& name : names) {
        NdArray g = graph.grad(graph.parameter_id(name));
        if (options.analytic_hook) {
            options.analytic_hook(name, g);
        }
        analytic.emplace(name, std::move(g));
    }

    std::mt19937_64 rng(options.seed);
    const double eps = options.eps;
    for (const auto& name : names) {
        const NodeId pid = graph.parameter_id(name);
        const std::size_t count = graph.value(pid).size();
        std::vector<std::size_t> coords;
        if (count <= options.max_coords_per_param) {
            for (std::size_t k = 0; k < count; ++k) {
                coords.push_back(k);
            }
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, count - 1);
            for (std::size_t k = 0; k < options.max_coords_per_param; ++k) {
                coords.push_back(pick(rng));
            }
        }
        for (std::size_t k : coords) {
            const double original = graph.leaf_value(pid)[k];
            graph.leaf_value(pid)[k] = original + eps;
            bool smooth = graph.recompute();
            const double f_plus = graph.value(loss)[0];
            std::optional<NodeId> bad_plus = std::isfinite(f_plus) ? std::nullopt : graph.first_non_finite();
            graph.leaf_value(pid)[k] = original - eps;
            smooth = graph.recompute() && smooth;
            const double f_minus = graph.value(loss)[0];
            std::optional<NodeId> bad_minus = std::isfinite(f_minus) ? std::nullopt : graph.first_non_finite();
            graph.leaf_value(pid)[k] = original;
            graph.recompute();
            if (bad_plus || bad_minus) {
                report.finite = false;
                report.non_finite_node = bad_plus ? bad_plus : bad_minus;
                return report;
            }
            if (!smooth) {
                ++report.skipped_kinks;
                continue;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic.at(name)[k];
            const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric));
            ++report.checked;
            if (report.worst_param.empty() || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = name;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace dtvin::gradcore
