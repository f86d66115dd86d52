#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "primo/errors.hpp"

namespace primo {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() noexcept
{
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode() noexcept
{
    thread_local bool enabled = true;
    return enabled;
}

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until a gradient reaches this node
    bool requires_grad = false;
    std::uint64_t id = next_node_id();
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad()
    {
        if (grad.empty())
            grad.assign(value.size(), 0.0);
        return grad;
    }
};

} // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major float64 array that may participate in a define-by-run graph.
///
/// Tensor is a cheap handle: copies share the same node. Use clone() for a
/// deep copy. Ops producing a Tensor record parents and a backward rule when
/// any input requires a gradient and grad mode is on.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>())
    {
        if (shape_size(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value)
    {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

    /// Row-major matrix from nested rows.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false)
    {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.front().size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c)
                throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data), requires_grad);
    }

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    [[nodiscard]] std::uint64_t id() const { return node_->id; }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    /// Rows/cols of a rank-2 tensor.
    [[nodiscard]] std::size_t rows() const { return require_matrix().shape[0]; }
    [[nodiscard]] std::size_t cols() const { return require_matrix().shape[1]; }

    [[nodiscard]] std::span<const double> data() const { return node_->value; }
    [[nodiscard]] std::span<double> mutable_data() { return node_->value; }
    [[nodiscard]] const std::vector<double>& values() const { return node_->value; }

    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient buffer; zeros when nothing has flowed back yet.
    [[nodiscard]] std::vector<double> grad() const
    {
        return node_->grad.empty() ? std::vector<double>(node_->value.size(), 0.0) : node_->grad;
    }
    [[nodiscard]] std::span<const double> grad_view() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    [[nodiscard]] double item() const
    {
        if (size() != 1)
            throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const
    {
        return node_->value[i * cols() + j];
    }

    /// Same values, fresh node, no history.
    [[nodiscard]] Tensor detach() const { return Tensor(node_->shape, node_->value, false); }
    [[nodiscard]] Tensor clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

    [[nodiscard]] detail::Node& node() const { return *node_; }
    [[nodiscard]] const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    /// Builds an op output. Parents and the backward rule are kept only when
    /// some parent needs a gradient and grad mode is on.
    static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward_fn)
    {
        Tensor out(std::move(shape), std::move(value));
        if (!detail::grad_mode())
            return out;
        bool needs = false;
        for (const auto& p : parents)
            needs = needs || p.requires_grad();
        if (!needs)
            return out;
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents)
            out.node_->parents.push_back(p.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

private:
    const detail::Node& require_matrix() const
    {
        if (node_->shape.size() != 2)
            throw DimensionError("expected a rank-2 tensor, got " + shape_str(node_->shape));
        return *node_;
    }

    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node that requires one, including leaves shared across uses.
inline void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad())
        return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            detail::Node* parent = node->parents[next_parent++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node().ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && !node->grad.empty())
            node->backward_fn(*node);
    }
}

/// A trainable leaf with its AdamW state.
///
/// Copies are deep: a copied Parameter owns an independent tensor.
class Parameter {
public:
    Parameter() = default;

    Parameter(std::string name, Shape shape, std::vector<double> init)
        : name_(std::move(name)), tensor_(std::move(shape), std::move(init), true),
          first_moment_(tensor_.size(), 0.0), second_moment_(tensor_.size(), 0.0)
    {
    }

    Parameter(const Parameter& other)
        : name_(other.name_), tensor_(other.tensor_.defined() ? other.tensor_.clone() : Tensor{}),
          first_moment_(other.first_moment_), second_moment_(other.second_moment_), steps_(other.steps_)
    {
    }

    Parameter& operator=(const Parameter& other)
    {
        if (this != &other) {
            Parameter copy(other);
            *this = std::move(copy);
        }
        return *this;
    }

    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;
    ~Parameter() = default;

    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] const Tensor& tensor() const noexcept { return tensor_; }
    [[nodiscard]] Tensor& tensor() noexcept { return tensor_; }
    [[nodiscard]] const Shape& shape() const { return tensor_.shape(); }
    [[nodiscard]] std::size_t size() const { return tensor_.size(); }
    [[nodiscard]] std::span<double> values() { return tensor_.mutable_data(); }
    [[nodiscard]] std::span<const double> values() const { return tensor_.data(); }

    std::vector<double>& first_moment() noexcept { return first_moment_; }
    std::vector<double>& second_moment() noexcept { return second_moment_; }
    [[nodiscard]] const std::vector<double>& first_moment() const noexcept { return first_moment_; }
    [[nodiscard]] const std::vector<double>& second_moment() const noexcept { return second_moment_; }
    [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }
    void increment_steps() noexcept { ++steps_; }

    void reset_optimizer_state()
    {
        std::fill(first_moment_.begin(), first_moment_.end(), 0.0);
        std::fill(second_moment_.begin(), second_moment_.end(), 0.0);
        steps_ = 0;
    }

private:
    std::string name_;
    Tensor tensor_;
    std::vector<double> first_moment_;
    std::vector<double> second_moment_;
    std::uint64_t steps_ = 0;
};

} // namespace primo
