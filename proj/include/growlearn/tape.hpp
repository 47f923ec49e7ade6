// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

/// Handle to a value recorded on a GradTape.
struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
    [[nodiscard]] bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Reverse-mode gradient tape.
///
/// Every op appends one node holding its forward value and a closure that
/// scatters the node's gradient into its inputs. Nodes are appended in
/// execution order, so walking them backwards from the loss is a valid
/// topological order.
class GradTape {
public:
    using BackwardFn = std::function<void(GradTape&, std::size_t self)>;

    Var leaf(Tensor value, bool requires_grad = true) { return push(std::move(value), requires_grad, nullptr); }
    Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

    Var push(Tensor value, bool requires_grad, BackwardFn backward) {
        nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
        return Var{nodes_.size() - 1};
    }

    [[nodiscard]] const Tensor& value(Var v) const { return node(v).value; }
    [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Gradient accumulator for `v`, allocated as zeros on first use.
    Tensor& grad_buffer(Var v) {
        auto& n = node(v);
        if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
        return n.grad;
    }

    /// Accumulated gradient; zeros when nothing flowed into `v`.
    [[nodiscard]] Tensor gradient(Var v) const {
        const auto& n = node(v);
        if (n.grad.empty()) return Tensor(n.value.shape(), 0.0f);
        return n.grad;
    }

    [[nodiscard]] bool has_gradient(std::size_t id) const { return !nodes_[id].grad.empty(); }

    void backward(Var loss) {
        if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size()) {
            throw StateError("backward called without a recorded forward pass");
        }
        if (nodes_[loss.id].value.size() != 1) {
            throw StateError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
        }
        if (backward_done_) throw StateError("backward already ran on this tape");
        backward_done_ = true;
        grad_buffer(loss).fill(1.0f);
        visit_order_.clear();
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            visit_order_.push_back(i);
            n.backward(*this, i);
        }
    }

    /// Node ids whose backward closure ran, in the order they ran.
    [[nodiscard]] const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        visit_order_.clear();
        backward_done_ = false;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Node& node(Var v) {
        if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable not recorded on this tape");
        return nodes_[v.id];
    }
    [[nodiscard]] const Node& node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable not recorded on this tape");
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> visit_order_;
    bool backward_done_ = false;
};

} // namespace growlearn
