#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "capcore/errors.hpp"
#include "capcore/rng.hpp"

namespace capcore {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class GradTape;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    // Position on the currently recording tape, -1 when detached.
    int node = -1;
    GradTape* tape = nullptr;
    // Leaf gradient, accumulated across backward() calls until zero_grad().
    std::vector<double> grad;
};

// Value-semantics handle over a shared row-major buffer. Cheap to copy;
// copies alias the same storage. Forward ops validate that results stay
// finite and raise NumericError otherwise.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
    size_t rank() const { return impl_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& mutable_data() { return impl_->data; }
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;
    double operator()(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
    double operator()(int64_t i, int64_t j) const {
        return impl_->data[static_cast<size_t>(i * impl_->shape[1] + j)];
    }

    Tensor& set_requires_grad(bool v);
    bool requires_grad() const { return impl_->requires_grad; }

    // Leaf gradient as a tensor (zeros when none has been accumulated).
    Tensor grad() const;
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void zero_grad();

    // Same storage identity (aliasing), not value equality.
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend class GradTape;
};

// One recorded differentiable operation: where the output came from and how
// to push its cotangent back into the parents.
using PullFn = std::function<void(const std::vector<double>& out_grad,
                                  const std::vector<std::span<double>>& parent_grads)>;

// Dynamically recorded reverse-mode tape. Records while active on the
// current thread (RAII Scope); backward() walks nodes in reverse creation
// order exactly once, accumulates into leaf gradients additively, then
// releases the recording. A tape is confined to one logical thread.
class GradTape {
public:
    GradTape() = default;
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    class Scope {
    public:
        explicit Scope(GradTape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradTape* prev_;
    };

    static GradTape* active();

    // Gradients of `loss` (a scalar recorded on this tape) for every
    // requires_grad leaf, keyed by the leaf tensor. Also accumulates into
    // each leaf's grad buffer. A tape can be walked once.
    std::vector<std::pair<Tensor, Tensor>> backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Recording interface used by the op layer.
    int ensure_recorded(const std::shared_ptr<TensorImpl>& impl);
    void record_output(const std::shared_ptr<TensorImpl>& out,
                       std::vector<int> parents, PullFn pull);

private:
    struct Node {
        std::vector<int> parents;
        int64_t numel = 0;
        PullFn pull;
        std::shared_ptr<TensorImpl> out; // leaf impl or op output
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;

    void detach_all();
};

// True when `impl` should take part in recording on the active tape.
bool tape_should_record(const std::shared_ptr<TensorImpl>& impl);

// Optional reduced-precision emulation: when enabled, every op output is
// rounded through IEEE binary32 before being stored. Off by default; the
// training module pairs it with loss scaling.
void set_narrow_activations(bool enabled);
bool narrow_activations();

namespace detail {
void finalize_forward(Tensor& t, const char* op_name);
}

} // namespace capcore
