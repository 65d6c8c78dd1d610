#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "defocus/common.hpp"
#include "defocus/rng.hpp"

namespace defocus {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
class Tape;

/// Dense n-d array (row-major, N x C x H x W for 4-d) with an optional
/// gradient buffer filled in by Tape::backward. Copies are shallow; the
/// payload is shared. Values are treated as immutable once the tensor has
/// been produced by an op; leaves (parameters, data) may be mutated
/// directly between tape runs.
template <typename T>
class Tensor {
public:
    struct Payload {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        bool tracked = false;  // participates in gradient flow
        uint64_t grad_epoch = 0;
        uint64_t written_epoch = 0;
    };

    Tensor() = default;

    explicit Tensor(Shape shape) : d_(std::make_shared<Payload>()) {
        d_->shape = std::move(shape);
        d_->values.assign(static_cast<size_t>(shape_numel(d_->shape)), T(0));
    }

    Tensor(Shape shape, std::vector<T> values) : d_(std::make_shared<Payload>()) {
        const int64_t n = shape_numel(shape);
        if (n != static_cast<int64_t>(values.size()))
            throw InternalError("tensor shape " + shape_str(shape) + " expects " + std::to_string(n) +
                                " values, got " + std::to_string(values.size()));
        d_->shape = std::move(shape);
        d_->values = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.d_->values) x = v;
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.d_->values) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& x : t.d_->values) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

    std::span<T> values() { return d_->values; }
    std::span<const T> values() const { return d_->values; }
    T* data() { return d_->values.data(); }
    const T* data() const { return d_->values.data(); }

    // empty until a backward pass has touched this tensor; stale after a
    // later backward on a tape that does not involve this tensor
    std::span<const T> grad() const { return d_->grad; }

    void clear_grad() {
        d_->grad.clear();
        d_->grad_epoch = 0;
        d_->written_epoch = 0;
    }

    bool requires_grad() const { return d_->requires_grad; }

    Tensor& set_requires_grad(bool v = true) {
        d_->requires_grad = v;
        if (v) d_->tracked = true;
        return *this;
    }

    bool tracked() const { return d_->tracked; }
    void mark_tracked() { d_->tracked = true; }

    // element accessors for tests and glue code (4-d / 2-d / flat)
    T& at(int n, int c, int y, int x) {
        const Shape& s = d_->shape;
        return d_->values[static_cast<size_t>(((int64_t(n) * s[1] + c) * s[2] + y) * s[3] + x)];
    }
    T at(int n, int c, int y, int x) const { return const_cast<Tensor*>(this)->at(n, c, y, x); }
    T& operator[](int64_t i) { return d_->values[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return d_->values[static_cast<size_t>(i)]; }

    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<Payload>(*d_);
        return t;
    }

    bool all_finite() const {
        for (const T& v : d_->values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::shared_ptr<Payload> payload() const { return d_; }

private:
    std::shared_ptr<Payload> d_;
    friend class Tape<T>;
};

/// Reverse-mode tape. Ops append one node each in execution order;
/// backward() replays the node list once, in reverse. Gradients
/// accumulate additively, so a tensor consumed by k ops receives the sum
/// of k contributions. Owned by a single thread.
template <typename T>
class Tape {
public:
    using Payload = typename Tensor<T>::Payload;

    struct Node {
        std::shared_ptr<Payload> out;
        std::vector<std::shared_ptr<Payload>> inputs;
        std::function<void()> backward;
        const char* op = "";
    };

    void record(Tensor<T> out, std::vector<Tensor<T>> inputs, std::function<void()> backward,
                const char* op = "") {
        Node n;
        n.out = out.payload();
        n.inputs.reserve(inputs.size());
        for (auto& in : inputs) n.inputs.push_back(in.payload());
        n.backward = std::move(backward);
        n.op = op;
        nodes_.push_back(std::move(n));
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Every
    /// tracked tensor touched by the tape ends up with a gradient buffer;
    /// tensors not upstream of the loss are left at zero.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw InternalError("backward expects a scalar loss, got shape " + shape_str(loss.shape()));
        epoch_ = next_epoch();
        auto lp = loss.payload();
        ensure_grad(*lp);
        lp->grad[0] = T(1);
        lp->written_epoch = epoch_;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            ensure_grad(*it->out);
            if (it->out->written_epoch == epoch_) it->backward();
        }
        // guarantee zero (not absent) grads for non-participating tensors
        for (auto& n : nodes_) {
            for (auto& in : n.inputs)
                if (in->tracked) ensure_grad(*in);
        }
    }

    uint64_t epoch() const { return epoch_; }

    void ensure_grad(Payload& p) {
        if (p.grad_epoch != epoch_) {
            p.grad.assign(p.values.size(), T(0));
            p.grad_epoch = epoch_;
        }
    }

    // Adds `contrib[i]` into the gradient of `p`. Used by op backward fns.
    void accumulate(Payload& p, const T* contrib, int64_t n) {
        ensure_grad(p);
        for (int64_t i = 0; i < n; ++i) p.grad[static_cast<size_t>(i)] += contrib[i];
        p.written_epoch = epoch_;
    }

    // Grants an op's backward direct accumulation access; caller must add, not assign.
    std::span<T> grad_buffer(Payload& p) {
        ensure_grad(p);
        p.written_epoch = epoch_;
        return p.grad;
    }

private:
    // Epochs are globally unique so stale gradient buffers from an earlier
    // tape are never mistaken for this backward pass's buffers.
    static uint64_t next_epoch() {
        static std::atomic<uint64_t> counter{0};
        return counter.fetch_add(1, std::memory_order_relaxed) + 1;
    }

    std::vector<Node> nodes_;
    uint64_t epoch_ = 0;
};

}  // namespace defocus
