#include "spamae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace spamae {

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h    = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_str(const std::string& s, uint64_t seed) {
    return fnv1a(s.data(), s.size(), seed);
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

namespace detail {
void TensorImpl::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}
}  // namespace detail

using detail::TensorImpl;

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
    auto impl   = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data  = std::move(data);
    return impl;
}

// Records the op on the tape iff any input requires grad; constant
// subgraphs stay detached and cost nothing at backward time.
Tensor finish_op(std::shared_ptr<TensorImpl> out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn) {
    bool rg = false;
    for (const auto& t : inputs) rg = rg || t.requires_grad();
    out->requires_grad = rg;
    if (rg) {
        for (const auto& t : inputs) out->parents.push_back(t.share());
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor::adopt(std::move(out));
}

int normalize_axis(int axis, size_t ndim) {
    int a = axis < 0 ? axis + static_cast<int>(ndim) : axis;
    if (a < 0 || a >= static_cast<int>(ndim))
        throw shape_error("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(ndim));
    return a;
}

void axis_extents(const Shape& s, int axis, size_t& outer, size_t& n, size_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    n = s[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

// gemm kernels, all accumulate into c.
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci       = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c (m,k) += a (m,n) * b^T where b is (k,n)
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t n, size_t k) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci       = c + i * k;
        for (size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s         = 0.0;
            for (size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

// c (k,n) += a^T * b where a is (m,k), b is (m,n)
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

enum class BinaryMode { Equal, ScalarRhs, ScalarLhs, SuffixRhs, SuffixLhs };

BinaryMode classify_binary(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return BinaryMode::Equal;
    if (shape_numel(b) == 1) return BinaryMode::ScalarRhs;
    if (shape_numel(a) == 1) return BinaryMode::ScalarLhs;
    if (is_suffix(b, a)) return BinaryMode::SuffixRhs;
    if (is_suffix(a, b)) return BinaryMode::SuffixLhs;
    throw shape_error(std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                      " and " + shape_to_string(b));
}

}  // namespace

// ---- Tensor basics ---------------------------------------------------------

Tensor Tensor::adopt(std::shared_ptr<detail::TensorImpl> impl) {
    return Tensor(std::move(impl));
}

std::shared_ptr<detail::TensorImpl> Tensor::share() const { return impl_; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto impl           = new_impl(shape, std::vector<double>(shape_numel(shape), 0.0));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    auto impl           = new_impl(shape, std::vector<double>(shape_numel(shape), value));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::from_vector(std::vector<double> values, const Shape& shape,
                           bool requires_grad) {
    if (values.size() != shape_numel(shape))
        throw shape_error("from_vector: " + std::to_string(values.size()) +
                          " values do not fill shape " + shape_to_string(shape));
    auto impl           = new_impl(shape, std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * stddev;
    return from_vector(std::move(v), shape, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->shape;
}

size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->data;
}

std::span<const double> Tensor::data() const {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw contract_error("item(): tensor is not scalar, shape " +
                                           shape_to_string(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (!impl_) throw contract_error("use of undefined tensor");
    impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw contract_error("grad(): gradient not populated");
    return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
    if (!impl_) throw contract_error("use of undefined tensor");
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_) throw contract_error("use of undefined tensor");
    impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::clear_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
    if (!impl_) return Tensor();
    auto impl = new_impl(impl_->shape, impl_->data);
    return Tensor(std::move(impl));
}

void Tensor::backward() {
    if (!impl_) throw contract_error("backward(): undefined tensor");
    if (numel() != 1)
        throw contract_error("backward(): loss must be scalar, got shape " +
                             shape_to_string(shape()));
    if (!impl_->requires_grad) return;  // nothing trainable below

    // Topological order via iterative DFS over parent links; postorder has
    // every node after its parents, so the reversed list is the tape replay
    // order (consumers before producers).
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        std::shared_ptr<TensorImpl> node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_, 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            auto p = f.node->parents[f.next_parent++];
            if (p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    impl_->ensure_grad();
    impl_->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = it->get();
        if (node->backward_fn && node->grad.size() == node->data.size()) {
            node->backward_fn();
        }
        // Consume the tape: release closures and parent links.
        node->backward_fn = nullptr;
        node->parents.clear();
    }
}

// ---- elementwise binary ----------------------------------------------------

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA bwd_a,
                 BwdB bwd_b) {
    BinaryMode mode = classify_binary(a.shape(), b.shape(), name);
    const Shape& out_shape =
        (mode == BinaryMode::ScalarLhs || mode == BinaryMode::SuffixLhs) ? b.shape()
                                                                         : a.shape();
    const size_t n  = shape_numel(out_shape);
    const size_t bn = b.numel();
    const size_t an = a.numel();

    std::vector<double> out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    switch (mode) {
        case BinaryMode::Equal:
            for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
            break;
        case BinaryMode::ScalarRhs:
            for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[0]);
            break;
        case BinaryMode::ScalarLhs:
            for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[0], pb[i]);
            break;
        case BinaryMode::SuffixRhs:
            for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i % bn]);
            break;
        case BinaryMode::SuffixLhs:
            for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i % an], pb[i]);
            break;
    }

    auto impl        = new_impl(out_shape, std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    auto bi          = b.share();
    return finish_op(std::move(impl), {a, b}, [outp, ai, bi, mode, bwd_a, bwd_b]() {
        const double* g  = outp->grad.data();
        const double* pa = ai->data.data();
        const double* pb = bi->data.data();
        const size_t n   = outp->data.size();
        const size_t an  = ai->data.size();
        const size_t bn  = bi->data.size();
        if (ai->requires_grad) {
            ai->ensure_grad();
            double* da = ai->grad.data();
            switch (mode) {
                case BinaryMode::Equal:
                case BinaryMode::SuffixLhs:  // lhs smaller: reduce
                    if (mode == BinaryMode::Equal)
                        for (size_t i = 0; i < n; ++i) da[i] += bwd_a(g[i], pa[i], pb[i]);
                    else
                        for (size_t i = 0; i < n; ++i)
                            da[i % an] += bwd_a(g[i], pa[i % an], pb[i]);
                    break;
                case BinaryMode::ScalarRhs:
                    for (size_t i = 0; i < n; ++i) da[i] += bwd_a(g[i], pa[i], pb[0]);
                    break;
                case BinaryMode::ScalarLhs:
                    for (size_t i = 0; i < n; ++i) da[0] += bwd_a(g[i], pa[0], pb[i]);
                    break;
                case BinaryMode::SuffixRhs:
                    for (size_t i = 0; i < n; ++i)
                        da[i] += bwd_a(g[i], pa[i], pb[i % bn]);
                    break;
            }
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            double* db = bi->grad.data();
            switch (mode) {
                case BinaryMode::Equal:
                    for (size_t i = 0; i < n; ++i) db[i] += bwd_b(g[i], pa[i], pb[i]);
                    break;
                case BinaryMode::ScalarRhs:
                    for (size_t i = 0; i < n; ++i) db[0] += bwd_b(g[i], pa[i], pb[0]);
                    break;
                case BinaryMode::ScalarLhs:
                case BinaryMode::SuffixLhs:
                    if (mode == BinaryMode::ScalarLhs)
                        for (size_t i = 0; i < n; ++i) db[i] += bwd_b(g[i], pa[0], pb[i]);
                    else
                        for (size_t i = 0; i < n; ++i)
                            db[i] += bwd_b(g[i], pa[i % an], pb[i]);
                    break;
                case BinaryMode::SuffixRhs:
                    for (size_t i = 0; i < n; ++i)
                        db[i % bn] += bwd_b(g[i], pa[i], pb[i % bn]);
                    break;
            }
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

// ---- elementwise unary -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    const size_t n = a.numel();
    std::vector<double> out(n);
    const double* pa = a.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);

    auto impl        = new_impl(a.shape(), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, bwd]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        const double* x = ai->data.data();
        const double* y = outp->data.data();
        double* da      = ai->grad.data();
        const size_t n  = outp->data.size();
        for (size_t i = 0; i < n; ++i) da[i] += bwd(g[i], x[i], y[i]);
    });
}

constexpr double kInvSqrt2   = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; }, [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x * c; },
        [c](double g, double, double) { return g * c; });
}

Tensor pow_scalar(const Tensor& a, double p) {
    return unary_op(
        a, [p](double x) { return std::pow(x, p); },
        [p](double g, double x, double) { return g * p * std::pow(x, p - 1.0); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        a, [](double x) { return -x; }, [](double g, double, double) { return -g; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); },
        [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); },
        [](double g, double x, double) { return g / x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Tensor gelu(const Tensor& a) {
    // Exact erf form; derivative is Phi(x) + x*phi(x).
    return unary_op(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double g, double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return g * (cdf + x * pdf);
        });
}

// ---- matmul / transpose / reshape ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool a3   = sa.size() == 3;
    const bool b3   = sb.size() == 3;
    if ((sa.size() != 2 && !a3) || (sb.size() != 2 && !b3))
        throw shape_error("matmul: expected rank 2 or 3 operands, got " +
                          shape_to_string(sa) + " and " + shape_to_string(sb));
    if (a3 && b3 && sa[0] != sb[0])
        throw shape_error("matmul: batch dims differ, " + shape_to_string(sa) + " vs " +
                          shape_to_string(sb));
    if (!a3 && b3)
        throw shape_error("matmul: 2D x 3D unsupported, " + shape_to_string(sa) + " x " +
                          shape_to_string(sb));

    const size_t batch = a3 ? sa[0] : 1;
    const size_t m     = a3 ? sa[1] : sa[0];
    const size_t k     = a3 ? sa[2] : sa[1];
    const size_t kb    = b3 ? sb[1] : sb[0];
    const size_t n     = b3 ? sb[2] : sb[1];
    if (k != kb)
        throw shape_error("matmul: inner dimensions do not match, " + shape_to_string(sa) +
                          " x " + shape_to_string(sb));

    Shape out_shape = a3 ? Shape{batch, m, n} : Shape{m, n};
    std::vector<double> out(batch * m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (size_t bi = 0; bi < batch; ++bi) {
        const double* ab = pa + bi * m * k;
        const double* bb = b3 ? pb + bi * k * n : pb;
        gemm_nn(ab, bb, out.data() + bi * m * n, m, k, n);
    }

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    auto bi_         = b.share();
    return finish_op(std::move(impl), {a, b}, [outp, ai, bi_, batch, m, k, n, b3]() {
        const double* g  = outp->grad.data();
        const double* pa = ai->data.data();
        const double* pb = bi_->data.data();
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (size_t bb = 0; bb < batch; ++bb) {
                const double* bslab = b3 ? pb + bb * k * n : pb;
                gemm_nt(g + bb * m * n, bslab, ai->grad.data() + bb * m * k, m, n, k);
            }
        }
        if (bi_->requires_grad) {
            bi_->ensure_grad();
            if (b3) {
                for (size_t bb = 0; bb < batch; ++bb)
                    gemm_tn(pa + bb * m * k, g + bb * m * n, bi_->grad.data() + bb * k * n,
                            m, k, n);
            } else {
                // shared rhs: sum over the batch
                for (size_t bb = 0; bb < batch; ++bb)
                    gemm_tn(pa + bb * m * k, g + bb * m * n, bi_->grad.data(), m, k, n);
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.size() < 2)
        throw shape_error("transpose: rank >= 2 required, got " + shape_to_string(s));
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 1], out_shape[s.size() - 2]);
    const size_t m     = s[s.size() - 2];
    const size_t n     = s[s.size() - 1];
    const size_t batch = a.numel() / (m * n);

    std::vector<double> out(a.numel());
    const double* pa = a.data().data();
    for (size_t bi = 0; bi < batch; ++bi) {
        const double* src = pa + bi * m * n;
        double* dst       = out.data() + bi * m * n;
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, batch, m, n]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        for (size_t bi = 0; bi < batch; ++bi) {
            const double* src = g + bi * m * n;  // shape (n, m)
            double* dst       = ai->grad.data() + bi * m * n;
            for (size_t j = 0; j < n; ++j)
                for (size_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
        }
    });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw shape_error("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                          shape_to_string(shape));
    auto impl        = new_impl(shape, std::vector<double>(a.data().begin(), a.data().end()));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        double* da      = ai->grad.data();
        for (size_t i = 0; i < outp->data.size(); ++i) da[i] += g[i];
    });
}

// ---- softmax family --------------------------------------------------------

namespace {

void check_finite_for(const Tensor& a, const char* op) {
    for (double v : a.data())
        if (std::isnan(v)) throw numeric_error(std::string(op) + ": NaN input");
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    check_finite_for(a, "softmax");
    const int ax = normalize_axis(axis, a.ndim());
    size_t outer, n, inner;
    axis_extents(a.shape(), ax, outer, n, inner);

    std::vector<double> out(a.numel());
    const double* pa = a.data().data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * n * inner + in;
            double mx         = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
            double z = 0.0;
            for (size_t j = 0; j < n; ++j) {
                const double e      = std::exp(pa[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            const double iz = 1.0 / z;
            for (size_t j = 0; j < n; ++j) out[base + j * inner] *= iz;
        }
    }

    auto impl        = new_impl(a.shape(), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, outer, n, inner]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        const double* y = outp->data.data();
        double* da      = ai->grad.data();
        for (size_t o = 0; o < outer; ++o) {
            for (size_t in = 0; in < inner; ++in) {
                const size_t base = o * n * inner + in;
                double dot        = 0.0;
                for (size_t j = 0; j < n; ++j)
                    dot += g[base + j * inner] * y[base + j * inner];
                for (size_t j = 0; j < n; ++j) {
                    const size_t idx = base + j * inner;
                    da[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& a, int axis) {
    check_finite_for(a, "log_softmax");
    const int ax = normalize_axis(axis, a.ndim());
    size_t outer, n, inner;
    axis_extents(a.shape(), ax, outer, n, inner);

    std::vector<double> out(a.numel());
    const double* pa = a.data().data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * n * inner + in;
            double mx         = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
            double z = 0.0;
            for (size_t j = 0; j < n; ++j) z += std::exp(pa[base + j * inner] - mx);
            const double lse = mx + std::log(z);
            for (size_t j = 0; j < n; ++j)
                out[base + j * inner] = pa[base + j * inner] - lse;
        }
    }

    auto impl        = new_impl(a.shape(), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, outer, n, inner]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        const double* y = outp->data.data();  // log-probs
        double* da      = ai->grad.data();
        for (size_t o = 0; o < outer; ++o) {
            for (size_t in = 0; in < inner; ++in) {
                const size_t base = o * n * inner + in;
                double gsum       = 0.0;
                for (size_t j = 0; j < n; ++j) gsum += g[base + j * inner];
                for (size_t j = 0; j < n; ++j) {
                    const size_t idx = base + j * inner;
                    da[idx] += g[idx] - std::exp(y[idx]) * gsum;
                }
            }
        }
    });
}

// ---- layer_norm / l2_normalize ----------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw shape_error("layer_norm: rank >= 1 required");
    const size_t d    = s.back();
    const size_t rows = x.numel() / d;
    if (gain.numel() != d || bias.numel() != d)
        throw shape_error("layer_norm: gain/bias length " +
                          std::to_string(gain.numel()) + "/" +
                          std::to_string(bias.numel()) + " does not match last axis " +
                          std::to_string(d));

    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const double* px = x.data().data();
    const double* pg = gain.data().data();
    const double* pb = bias.data().data();
    for (size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mu         = 0.0;
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r]       = inv;
        for (size_t j = 0; j < d; ++j) {
            const double h    = (row[j] - mu) * inv;
            xhat[r * d + j]   = h;
            out[r * d + j]    = h * pg[j] + pb[j];
        }
    }

    auto impl        = new_impl(s, std::move(out));
    TensorImpl* outp = impl.get();
    auto xi          = x.share();
    auto gi          = gain.share();
    auto bi          = bias.share();
    auto xhat_p      = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_p       = std::make_shared<std::vector<double>>(std::move(inv_std));
    return finish_op(std::move(impl), {x, gain, bias},
                     [outp, xi, gi, bi, xhat_p, inv_p, rows, d]() {
        const double* g  = outp->grad.data();
        const double* xh = xhat_p->data();
        const double* pg = gi->data.data();
        if (gi->requires_grad) {
            gi->ensure_grad();
            double* dg = gi->grad.data();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xh[r * d + j];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            double* db = bi->grad.data();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
        }
        if (xi->requires_grad) {
            xi->ensure_grad();
            double* dx = xi->grad.data();
            for (size_t r = 0; r < rows; ++r) {
                const double inv = (*inv_p)[r];
                double m1 = 0.0, m2 = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    const double dyg = g[r * d + j] * pg[j];
                    m1 += dyg;
                    m2 += dyg * xh[r * d + j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (size_t j = 0; j < d; ++j) {
                    const double dyg = g[r * d + j] * pg[j];
                    dx[r * d + j] += inv * (dyg - m1 - xh[r * d + j] * m2);
                }
            }
        }
    });
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw shape_error("l2_normalize: rank >= 1 required");
    const size_t d    = s.back();
    const size_t rows = x.numel() / d;

    std::vector<double> out(x.numel());
    std::vector<double> norms(rows);
    const double* px = x.data().data();
    for (size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (size_t j = 0; j < d; ++j) sq += px[r * d + j] * px[r * d + j];
        const double nv = std::max(std::sqrt(sq), eps);
        norms[r]        = nv;
        for (size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] / nv;
    }

    auto impl        = new_impl(s, std::move(out));
    TensorImpl* outp = impl.get();
    auto xi          = x.share();
    auto norms_p     = std::make_shared<std::vector<double>>(std::move(norms));
    return finish_op(std::move(impl), {x}, [outp, xi, norms_p, rows, d]() {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = outp->grad.data();
        const double* y = outp->data.data();
        double* dx      = xi->grad.data();
        for (size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
            const double inv = 1.0 / (*norms_p)[r];
            for (size_t j = 0; j < d; ++j)
                dx[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) * inv;
        }
    });
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto impl        = new_impl({1}, {s});
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double g = outp->grad[0];
        for (auto& v : ai->grad) v += g;
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s         = 0.0;
    for (double v : a.data()) s += v;
    s *= inv;
    auto impl        = new_impl({1}, {s});
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, inv]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double g = outp->grad[0] * inv;
        for (auto& v : ai->grad) v += g;
    });
}

Tensor sum_axis(const Tensor& a, int axis) {
    const int ax = normalize_axis(axis, a.ndim());
    size_t outer, n, inner;
    axis_extents(a.shape(), ax, outer, n, inner);
    Shape out_shape;
    for (size_t i = 0; i < a.ndim(); ++i)
        if (static_cast<int>(i) != ax) out_shape.push_back(a.shape()[i]);
    if (out_shape.empty()) out_shape = {1};

    std::vector<double> out(outer * inner, 0.0);
    const double* pa = a.data().data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < n; ++j)
            for (size_t in = 0; in < inner; ++in)
                out[o * inner + in] += pa[(o * n + j) * inner + in];

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, outer, n, inner]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        double* da      = ai->grad.data();
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < n; ++j)
                for (size_t in = 0; in < inner; ++in)
                    da[(o * n + j) * inner + in] += g[o * inner + in];
    });
}

// ---- slice / concat -----------------------------------------------------------

Tensor slice(const Tensor& a, int axis, size_t start, size_t len) {
    const int ax = normalize_axis(axis, a.ndim());
    size_t outer, n, inner;
    axis_extents(a.shape(), ax, outer, n, inner);
    if (start + len > n)
        throw shape_error("slice: [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") exceeds axis length " +
                          std::to_string(n));

    Shape out_shape                   = a.shape();
    out_shape[static_cast<size_t>(ax)] = len;
    std::vector<double> out(outer * len * inner);
    const double* pa = a.data().data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < len; ++j)
            std::copy_n(pa + (o * n + start + j) * inner, inner,
                        out.data() + (o * len + j) * inner);

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto ai          = a.share();
    return finish_op(std::move(impl), {a}, [outp, ai, outer, n, inner, start, len]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const double* g = outp->grad.data();
        double* da      = ai->grad.data();
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < len; ++j) {
                const double* src = g + (o * len + j) * inner;
                double* dst       = da + (o * n + start + j) * inner;
                for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw contract_error("concat: no inputs");
    const int ax = normalize_axis(axis, parts[0].ndim());
    Shape out_shape = parts[0].shape();
    size_t total    = 0;
    for (const auto& p : parts) {
        if (p.ndim() != out_shape.size())
            throw shape_error("concat: rank mismatch");
        for (size_t i = 0; i < out_shape.size(); ++i) {
            if (static_cast<int>(i) == ax) continue;
            if (p.shape()[i] != out_shape[i])
                throw shape_error("concat: shape mismatch " + shape_to_string(p.shape()) +
                                  " vs " + shape_to_string(out_shape));
        }
        total += p.shape()[static_cast<size_t>(ax)];
    }
    out_shape[static_cast<size_t>(ax)] = total;

    size_t outer, n_out, inner;
    axis_extents(out_shape, ax, outer, n_out, inner);
    std::vector<double> out(shape_numel(out_shape));
    size_t offset = 0;
    for (const auto& p : parts) {
        const size_t np  = p.shape()[static_cast<size_t>(ax)];
        const double* pp = p.data().data();
        for (size_t o = 0; o < outer; ++o)
            for (size_t j = 0; j < np; ++j)
                std::copy_n(pp + (o * np + j) * inner, inner,
                            out.data() + (o * n_out + offset + j) * inner);
        offset += np;
    }

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    std::vector<std::shared_ptr<TensorImpl>> part_impls;
    std::vector<size_t> part_ns;
    for (const auto& p : parts) {
        part_impls.push_back(p.share());
        part_ns.push_back(p.shape()[static_cast<size_t>(ax)]);
    }
    return finish_op(std::move(impl), parts,
                     [outp, part_impls, part_ns, outer, n_out, inner]() {
        const double* g = outp->grad.data();
        size_t offset   = 0;
        for (size_t pi = 0; pi < part_impls.size(); ++pi) {
            const size_t np = part_ns[pi];
            auto& part      = part_impls[pi];
            if (part->requires_grad) {
                part->ensure_grad();
                double* da = part->grad.data();
                for (size_t o = 0; o < outer; ++o)
                    for (size_t j = 0; j < np; ++j) {
                        const double* src = g + (o * n_out + offset + j) * inner;
                        double* dst       = da + (o * np + j) * inner;
                        for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
                    }
            }
            offset += np;
        }
    });
}

// ---- embedding / gather_rows ---------------------------------------------------

Tensor embedding(const Tensor& table, const Indices& idx) {
    if (table.ndim() != 2)
        throw shape_error("embedding: table must be 2D, got " +
                          shape_to_string(table.shape()));
    const size_t rows = table.dim(0);
    const size_t d    = table.dim(1);
    for (int64_t v : idx.flat)
        if (v < 0 || static_cast<size_t>(v) >= rows)
            throw contract_error("embedding: index " + std::to_string(v) +
                                 " out of table range [0, " + std::to_string(rows) + ")");

    Shape out_shape = idx.shape;
    out_shape.push_back(d);
    std::vector<double> out(idx.numel() * d);
    const double* pt = table.data().data();
    for (size_t i = 0; i < idx.numel(); ++i)
        std::copy_n(pt + static_cast<size_t>(idx.flat[i]) * d, d, out.data() + i * d);

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto ti          = table.share();
    auto flat        = std::make_shared<std::vector<int64_t>>(idx.flat);
    return finish_op(std::move(impl), {table}, [outp, ti, flat, d]() {
        if (!ti->requires_grad) return;
        ti->ensure_grad();
        const double* g = outp->grad.data();
        double* dt      = ti->grad.data();
        for (size_t i = 0; i < flat->size(); ++i) {
            double* dst       = dt + static_cast<size_t>((*flat)[i]) * d;
            const double* src = g + i * d;
            for (size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Tensor gather_rows(const Tensor& x, const Indices& idx) {
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3)
        throw shape_error("gather_rows: rank 2 or 3 required, got " + shape_to_string(s));
    const bool batched = s.size() == 3;
    const size_t B     = batched ? s[0] : 1;
    const size_t T     = batched ? s[1] : s[0];
    const size_t d     = batched ? s[2] : s[1];
    if (batched && (idx.shape.size() != 2 || idx.shape[0] != B))
        throw shape_error("gather_rows: index shape " + shape_to_string(idx.shape) +
                          " does not match input " + shape_to_string(s));
    if (!batched && idx.shape.size() != 1)
        throw shape_error("gather_rows: 1D indices required for a 2D input");
    const size_t Tp = batched ? idx.shape[1] : idx.shape[0];
    for (int64_t v : idx.flat)
        if (v < 0 || static_cast<size_t>(v) >= T)
            throw contract_error("gather_rows: row index " + std::to_string(v) +
                                 " out of range [0, " + std::to_string(T) + ")");

    Shape out_shape = batched ? Shape{B, Tp, d} : Shape{Tp, d};
    std::vector<double> out(B * Tp * d);
    const double* px = x.data().data();
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < Tp; ++t) {
            const size_t src = static_cast<size_t>(idx.flat[b * Tp + t]);
            std::copy_n(px + (b * T + src) * d, d, out.data() + (b * Tp + t) * d);
        }

    auto impl        = new_impl(std::move(out_shape), std::move(out));
    TensorImpl* outp = impl.get();
    auto xi          = x.share();
    auto flat        = std::make_shared<std::vector<int64_t>>(idx.flat);
    return finish_op(std::move(impl), {x}, [outp, xi, flat, B, T, Tp, d]() {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = outp->grad.data();
        double* dx      = xi->grad.data();
        for (size_t b = 0; b < B; ++b)
            for (size_t t = 0; t < Tp; ++t) {
                const size_t dst  = static_cast<size_t>((*flat)[b * Tp + t]);
                double* drow      = dx + (b * T + dst) * d;
                const double* src = g + (b * Tp + t) * d;
                for (size_t j = 0; j < d; ++j) drow[j] += src[j];
            }
    });
}

}  // namespace spamae
