#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spamae/common.hpp"
#include "spamae/rng.hpp"

namespace spamae {

class Tensor;

namespace detail {

// One recorded op / value. The DAG of TensorImpl nodes doubles as the
// gradient tape: creation order is a topological order of the graph,
// and backward() replays it in reverse.
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same numel as data
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void()> backward_fn;  // accumulates into parents' grads

    size_t numel() const { return data.size(); }
    void ensure_grad();
};

}  // namespace detail

// Handle with shared-value semantics (copies alias the same storage),
// fp64 everywhere.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_vector(std::vector<double> values, const Shape& shape,
                              bool requires_grad = false);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    size_t ndim() const { return shape().size(); }
    size_t dim(size_t i) const { return shape()[i]; }
    size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();   // allocates and zero-fills
    void clear_grad();  // drops the buffer entirely

    // New leaf with copied data, detached from the tape.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar. Populates grads of every
    // requires_grad leaf reachable from this value, then consumes the tape
    // (parent links and backward closures are released).
    void backward();

    detail::TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<detail::TensorImpl> share() const;
    static Tensor adopt(std::shared_ptr<detail::TensorImpl> impl);

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Integer index block used by embedding lookups and row gathers.
struct Indices {
    Shape shape;                // e.g. {B, K}
    std::vector<int64_t> flat;  // row-major
    size_t numel() const { return flat.size(); }
};

// ---- differentiable primitives -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor pow_scalar(const Tensor& a, double p);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// 2D x 2D, 3D x 3D (batched, equal leading dim), 3D x 2D (shared rhs).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);

// axis < 0 counts from the end (-1 = last).
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

// Normalizes over the last axis; gain/bias have that axis's length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Unit L2 norm over the last axis.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);

Tensor slice(const Tensor& a, int axis, size_t start, size_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// out[idx...] = table[idx[...], :]; gradient scatter-adds into the table.
Tensor embedding(const Tensor& table, const Indices& idx);

// Row gather over the second-to-last axis:
//   x (B,T,d), idx (B,T') -> (B,T',d); x (T,d), idx (T') -> (T',d).
// This is the masked-select primitive used for token keep/restore.
Tensor gather_rows(const Tensor& x, const Indices& idx);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace spamae
