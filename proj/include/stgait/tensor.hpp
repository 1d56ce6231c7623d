#pragma once

// Dense n-dimensional tensors with dynamic reverse-mode differentiation.
//
// A Tensor is a shared handle onto a TensorNode. Operations producing a
// tensor from inputs that require gradients record their inputs and a
// gradient rule on the result node; backward() walks those records in
// reverse topological order. Nothing is recorded when no input requires
// gradients, so inference allocates no graph.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stgait/errors.hpp"

namespace stgait {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatMap = Eigen::Map<RowMat<Scalar>>;

template <typename Scalar>
using ConstRowMatMap = Eigen::Map<const RowMat<Scalar>>;

inline Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename Scalar>
struct TensorNode {
    Shape shape;
    Vec<Scalar> data;
    Vec<Scalar> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    // Propagates this node's grad into its inputs' grads.
    std::function<void(TensorNode&)> backward;

    bool has_grad() const { return grad.size() == data.size() && data.size() > 0; }

    Vec<Scalar>& grad_buffer() {
        if (!has_grad()) grad = Vec<Scalar>::Zero(data.size());
        return grad;
    }
};

template <typename Scalar>
class Tensor {
public:
    using Node = TensorNode<Scalar>;
    using scalar_type = Scalar;

    Tensor() = default;

    Tensor(Shape shape, Vec<Scalar> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        for (Index d : shape) {
            if (d <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
        }
        if (numel(shape) != data.size()) {
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + to_string(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const Index n = numel(shape);
        return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
    }

    static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
        const Index n = numel(shape);
        return Tensor(std::move(shape), Vec<Scalar>::Constant(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
        Vec<Scalar> v(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar x : values) v[i++] = x;
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(Scalar value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index ndim() const { return static_cast<Index>(node_->shape.size()); }
    Index dim(Index axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
    Index size() const { return node_->data.size(); }

    const Vec<Scalar>& data() const { return node_->data; }

    /// In-place access for parameter updates and initialization. Must not be
    /// used on tensors that are inputs to a recorded graph still awaiting backward.
    Vec<Scalar>& mutable_data() { return node_->data; }

    Scalar item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }

    Scalar operator[](Index flat) const { return node_->data[flat]; }

    Scalar at(std::initializer_list<Index> idx) const { return node_->data[offset(idx)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->has_grad(); }
    const Vec<Scalar>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.resize(0); }

    /// Same values, no recorded history.
    Tensor detach() const { return Tensor(shape(), data(), false); }

    const std::shared_ptr<Node>& node() const { return node_; }

    Index offset(std::initializer_list<Index> idx) const {
        if (static_cast<Index>(idx.size()) != ndim()) {
            throw DimensionError("index rank does not match shape " + to_string(shape()));
        }
        Index off = 0;
        std::size_t d = 0;
        for (Index i : idx) {
            off = off * node_->shape[d] + i;
            ++d;
        }
        return off;
    }

private:
    std::shared_ptr<Node> node_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
    return Tensor<To>(t.shape(), t.data().template cast<To>(), requires_grad);
}

namespace detail {

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
    for (const auto* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

/// Wraps an op result, recording inputs and the gradient rule only when needed.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Vec<Scalar> data, std::vector<Tensor<Scalar>> inputs,
                           std::function<void(TensorNode<Scalar>&)> rule) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    Tensor<Scalar> out(std::move(shape), std::move(data), needs);
    if (needs) {
        auto& node = *out.node();
        node.inputs.reserve(inputs.size());
        for (const auto& t : inputs) node.inputs.push_back(t.node());
        node.backward = std::move(rule);
    }
    return out;
}

}  // namespace detail

/// Ordered record of the nodes reachable from a root, inputs before consumers.
template <typename Scalar>
struct ComputationTape {
    std::vector<TensorNode<Scalar>*> nodes;

    static ComputationTape record(const Tensor<Scalar>& root) {
        ComputationTape tape;
        std::unordered_set<const TensorNode<Scalar>*> visited;
        // Iterative post-order DFS; deep graphs must not overflow the stack.
        std::vector<std::pair<TensorNode<Scalar>*, std::size_t>> stack;
        stack.emplace_back(root.node().get(), 0);
        visited.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                TensorNode<Scalar>* child = node->inputs[next++].get();
                if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            } else {
                tape.nodes.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }
};

/// Reverse-mode pass from a scalar. Gradients accumulate into existing grads.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
    auto tape = ComputationTape<Scalar>::record(loss);
    loss.node()->grad_buffer()[0] += Scalar(1);
    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
        TensorNode<Scalar>& node = **it;
        if (node.backward && node.has_grad()) node.backward(node);
    }
}

}  // namespace stgait
