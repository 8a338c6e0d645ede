#include "capcore/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace capcore {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static void check_shape(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape shape) {
    check_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.impl_->data) v = value;
    return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.impl_->data) v = rng.normal(0.0, stddev);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw ShapeError("index rank mismatch");
    int64_t flat = 0;
    size_t a = 0;
    for (int64_t i : idx) {
        flat = flat * s[a] + i;
        ++a;
    }
    return impl_->data[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

Tensor Tensor::grad() const {
    Tensor g = Tensor::zeros(impl_->shape);
    if (!impl_->grad.empty()) g.impl_->data = impl_->grad;
    return g;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

// ---------------------------------------------------------------------------
// GradTape

namespace {
thread_local GradTape* t_active_tape = nullptr;
std::atomic<bool> g_narrow{false};
} // namespace

GradTape::Scope::Scope(GradTape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
GradTape::Scope::~Scope() { t_active_tape = prev_; }

GradTape* GradTape::active() { return t_active_tape; }

GradTape::~GradTape() { detach_all(); }

void GradTape::detach_all() {
    for (Node& node : nodes_) {
        if (node.out && node.out->tape == this) {
            node.out->tape = nullptr;
            node.out->node = -1;
        }
    }
}

int GradTape::ensure_recorded(const std::shared_ptr<TensorImpl>& impl) {
    if (impl->tape == this && impl->node >= 0) return impl->node;
    Node node;
    node.numel = static_cast<int64_t>(impl->data.size());
    node.out = impl;
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    impl->tape = this;
    impl->node = static_cast<int>(nodes_.size()) - 1;
    return impl->node;
}

void GradTape::record_output(const std::shared_ptr<TensorImpl>& out,
                             std::vector<int> parents, PullFn pull) {
    if (consumed_) throw Error("grad tape already consumed by backward()");
    Node node;
    node.parents = std::move(parents);
    node.numel = static_cast<int64_t>(out->data.size());
    node.pull = std::move(pull);
    node.out = out;
    nodes_.push_back(std::move(node));
    out->tape = this;
    out->node = static_cast<int>(nodes_.size()) - 1;
}

std::vector<std::pair<Tensor, Tensor>> GradTape::backward(const Tensor& loss) {
    if (consumed_) throw Error("backward() called twice on the same tape");
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss");
    }
    if (loss.impl()->tape != this || loss.impl()->node < 0) {
        throw Error("backward() on a tensor detached from this tape");
    }

    const int loss_node = loss.impl()->node;
    std::vector<std::vector<double>> grads(nodes_.size());
    grads[static_cast<size_t>(loss_node)].assign(1, 1.0);

    for (int id = loss_node; id >= 0; --id) {
        Node& node = nodes_[static_cast<size_t>(id)];
        std::vector<double>& g = grads[static_cast<size_t>(id)];
        if (g.empty() || node.is_leaf) continue;
        std::vector<std::span<double>> parent_views;
        parent_views.reserve(node.parents.size());
        for (int pid : node.parents) {
            std::vector<double>& pg = grads[static_cast<size_t>(pid)];
            if (pg.empty()) pg.assign(static_cast<size_t>(nodes_[static_cast<size_t>(pid)].numel), 0.0);
            parent_views.emplace_back(pg);
        }
        node.pull(g, parent_views);
        g.clear();
        g.shrink_to_fit();
    }

    std::vector<std::pair<Tensor, Tensor>> result;
    for (size_t id = 0; id < nodes_.size(); ++id) {
        Node& node = nodes_[id];
        if (!node.is_leaf || grads[id].empty()) continue;
        if (!node.out->requires_grad) continue;
        if (node.out->grad.empty()) {
            node.out->grad = grads[id];
        } else {
            for (size_t i = 0; i < grads[id].size(); ++i) node.out->grad[i] += grads[id][i];
        }
        Tensor leaf;
        leaf.impl_ = node.out;
        result.emplace_back(leaf, leaf.grad());
    }

    consumed_ = true;
    detach_all();
    for (Node& node : nodes_) node.pull = nullptr; // release saved operands
    return result;
}

bool tape_should_record(const std::shared_ptr<TensorImpl>& impl) {
    GradTape* tape = GradTape::active();
    if (!tape) return false;
    if (impl->requires_grad) return true;
    return impl->tape == tape && impl->node >= 0;
}

void set_narrow_activations(bool enabled) { g_narrow.store(enabled); }
bool narrow_activations() { return g_narrow.load(); }

namespace detail {

void finalize_forward(Tensor& t, const char* op_name) {
    std::vector<double>& data = t.mutable_data();
    if (g_narrow.load()) {
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    }
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op_name) + " produced a non-finite value");
        }
    }
}

} // namespace detail

} // namespace capcore
