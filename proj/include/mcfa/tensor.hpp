#pragma once

// Dense double-precision tensors and a define-by-run reverse-mode autodiff
// tape. The tape (Graph) is built per forward pass, consumed by one backward
// pass and discarded; parameter tensors outlive graphs and accumulate
// gradients additively until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcfa {

namespace detail {

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace detail

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until the tensor participates in a backward pass
};

class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}

    explicit Tensor(std::vector<int> shape) : impl_(std::make_shared<TensorImpl>()) {
        impl_->shape = std::move(shape);
        impl_->values.assign(detail::shape_numel(impl_->shape), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> values)
        : impl_(std::make_shared<TensorImpl>()) {
        if (detail::shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor values length " + std::to_string(values.size()) +
                                        " does not match shape " + detail::shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->values = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.impl_->values.begin(), t.impl_->values.end(), v);
        return t;
    }

    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return impl_->values.size(); }

    std::vector<double>& values() { return impl_->values; }
    const std::vector<double>& values() const { return impl_->values; }
    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }

    double value() const {
        if (size() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " +
                                                     detail::shape_str(impl_->shape));
        return impl_->values[0];
    }

    double at(int i) const { return impl_->values.at(static_cast<std::size_t>(i)); }
    double at(int i, int j) const {
        return impl_->values[static_cast<std::size_t>(i) * impl_->shape[1] + j];
    }
    double at(int c, int y, int x) const {
        return impl_->values[(static_cast<std::size_t>(c) * impl_->shape[1] + y) * impl_->shape[2] + x];
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    // Allocates (zeroed) on first use; length always matches values.
    std::vector<double>& ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
        return impl_->grad;
    }

    const std::vector<double>& grad() const {
        if (impl_->grad.empty())
            const_cast<TensorImpl*>(impl_.get())->grad.assign(impl_->values.size(), 0.0);
        return impl_->grad;
    }

    void zero_grad() {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    // Deep copy of shape+values; gradient state is not copied.
    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->values = impl_->values;
        return t;
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Append-only tape of recorded operations. Every op executes its forward
// eagerly, records a closure that adds local gradients to its operands, and
// counts the scalar arithmetic it performed (used by the cascade laziness
// checks). Single-threaded; one Graph per thread.
class Graph {
public:
    Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                  int stride, int padding) {
        if (input.rank() != 3)
            throw std::invalid_argument("conv2d: input must be [C,H,W], got " +
                                        detail::shape_str(input.shape()));
        if (kernel.rank() != 4)
            throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,kh,kw], got " +
                                        detail::shape_str(kernel.shape()));
        if (bias.rank() != 1)
            throw std::invalid_argument("conv2d: bias must be rank 1");
        if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
        if (padding < 0) throw std::invalid_argument("conv2d: padding must be nonnegative");
        const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
        const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
        if (kernel.dim(1) != cin)
            throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                        " input channels, input has " + std::to_string(cin));
        if (bias.dim(0) != cout)
            throw std::invalid_argument("conv2d: bias length != output channels");
        if (kh > h + 2 * padding || kw > w + 2 * padding)
            throw std::invalid_argument("conv2d: kernel larger than padded input");
        const int ho = (h + 2 * padding - kh) / stride + 1;
        const int wo = (w + 2 * padding - kw) / stride + 1;

        Tensor out({cout, ho, wo});
        conv2d_forward(input.data(), kernel.data(), bias.data(), out.data(),
                       cin, h, w, cout, kh, kw, stride, padding, ho, wo);
        scalar_ops_ += static_cast<std::uint64_t>(cout) * ho * wo * cin * kh * kw;

        auto xi = input.impl(), ki = kernel.impl(), bi = bias.impl(), oi = out.impl();
        record([xi, ki, bi, oi, cin, h, w, cout, kh, kw, stride, padding, ho, wo] {
            if (oi->grad.empty()) return;
            const double* go = oi->grad.data();
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            if (ki->grad.empty()) ki->grad.assign(ki->values.size(), 0.0);
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            conv2d_backward(xi->values.data(), ki->values.data(), go,
                            xi->grad.data(), ki->grad.data(), bi->grad.data(),
                            cin, h, w, cout, kh, kw, stride, padding, ho, wo);
        });
        return out;
    }

    Tensor avg_pool2d(const Tensor& input, int window, int stride) {
        check_pool_args(input, window, stride, "avg_pool2d");
        const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
        const int ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
        Tensor out({c, ho, wo});
        const double inv = 1.0 / (static_cast<double>(window) * window);
        const double* x = input.data();
        double* o = out.data();
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < window; ++ky) {
                        const double* row = x + (static_cast<std::size_t>(ci) * h + oy * stride + ky) * w +
                                            ox * stride;
                        for (int kx = 0; kx < window; ++kx) acc += row[kx];
                    }
                    o[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox] = acc * inv;
                }
        scalar_ops_ += static_cast<std::uint64_t>(c) * ho * wo * window * window;

        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, c, h, w, window, stride, ho, wo, inv] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            const double* go = oi->grad.data();
            double* gx = xi->grad.data();
            for (int ci = 0; ci < c; ++ci)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        const double g = go[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox] * inv;
                        for (int ky = 0; ky < window; ++ky) {
                            double* row = gx + (static_cast<std::size_t>(ci) * h + oy * stride + ky) * w +
                                          ox * stride;
                            for (int kx = 0; kx < window; ++kx) row[kx] += g;
                        }
                    }
        });
        return out;
    }

    Tensor max_pool2d(const Tensor& input, int window, int stride) {
        check_pool_args(input, window, stride, "max_pool2d");
        const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
        const int ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
        Tensor out({c, ho, wo});
        auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
        const double* x = input.data();
        double* o = out.data();
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx) {
                            const std::size_t idx =
                                (static_cast<std::size_t>(ci) * h + oy * stride + ky) * w +
                                ox * stride + kx;
                            // strict > keeps the first (row-major) maximum on ties
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    const std::size_t oidx = (static_cast<std::size_t>(ci) * ho + oy) * wo + ox;
                    o[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                }
        scalar_ops_ += static_cast<std::uint64_t>(c) * ho * wo * window * window;

        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, argmax] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[(*argmax)[i]] += oi->grad[i];
        });
        return out;
    }

    Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
        if (input.rank() != 1)
            throw std::invalid_argument("fully_connected: input must be rank 1, got " +
                                        detail::shape_str(input.shape()));
        if (weight.rank() != 2)
            throw std::invalid_argument("fully_connected: weight must be [Din,Dout]");
        if (bias.rank() != 1 || bias.dim(0) != weight.dim(1))
            throw std::invalid_argument("fully_connected: bias length != Dout");
        const int din = weight.dim(0), dout = weight.dim(1);
        if (input.dim(0) != din)
            throw std::invalid_argument("fully_connected: input length " +
                                        std::to_string(input.dim(0)) + " != weight rows " +
                                        std::to_string(din));
        Tensor out({dout}, bias.values());
        const double* x = input.data();
        const double* wt = weight.data();
        double* o = out.data();
        for (int i = 0; i < din; ++i) {
            const double xi_v = x[i];
            const double* wrow = wt + static_cast<std::size_t>(i) * dout;
            for (int j = 0; j < dout; ++j) o[j] += xi_v * wrow[j];
        }
        scalar_ops_ += static_cast<std::uint64_t>(din) * dout;

        auto xi = input.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
        record([xi, wi, bi, oi, din, dout] {
            if (oi->grad.empty()) return;
            const double* go = oi->grad.data();
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            if (wi->grad.empty()) wi->grad.assign(wi->values.size(), 0.0);
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            for (int j = 0; j < dout; ++j) bi->grad[j] += go[j];
            const double* x = xi->values.data();
            const double* wt = wi->values.data();
            for (int i = 0; i < din; ++i) {
                const double xv = x[i];
                const double* wrow = wt + static_cast<std::size_t>(i) * dout;
                double* gwrow = wi->grad.data() + static_cast<std::size_t>(i) * dout;
                double acc = 0.0;
                for (int j = 0; j < dout; ++j) {
                    gwrow[j] += xv * go[j];
                    acc += wrow[j] * go[j];
                }
                xi->grad[i] += acc;
            }
        });
        return out;
    }

    Tensor relu(const Tensor& input) {
        Tensor out(input.shape());
        const double* x = input.data();
        double* o = out.data();
        for (std::size_t i = 0; i < input.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
        scalar_ops_ += input.size();

        auto xi = input.impl(), oi = out.impl();
        record([xi, oi] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
#ifdef MCFA_FAULT_RELU_GRAD
                xi->grad[i] += oi->grad[i];
#else
                // gradient at exactly 0 is 0
                xi->grad[i] += xi->values[i] > 0.0 ? oi->grad[i] : 0.0;
#endif
        });
        return out;
    }

    // Numerically stable softmax over a vector (max-subtraction before exp).
    Tensor softmax(const Tensor& input) {
        if (input.rank() != 1 || input.dim(0) < 1)
            throw std::invalid_argument("softmax: input must be a nonempty vector");
        const int d = input.dim(0);
        Tensor out({d});
        const double* x = input.data();
        double* o = out.data();
        double m = x[0];
        for (int i = 1; i < d; ++i) m = std::max(m, x[i]);
        double z = 0.0;
        for (int i = 0; i < d; ++i) {
            o[i] = std::exp(x[i] - m);
            z += o[i];
        }
        const double invz = 1.0 / z;
        for (int i = 0; i < d; ++i) o[i] *= invz;
        scalar_ops_ += 3 * static_cast<std::uint64_t>(d);

        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, d] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            const double* y = oi->values.data();
            const double* go = oi->grad.data();
            double dotv = 0.0;
            for (int i = 0; i < d; ++i) dotv += y[i] * go[i];
            for (int i = 0; i < d; ++i) xi->grad[i] += y[i] * (go[i] - dotv);
        });
        return out;
    }

    Tensor concat(const Tensor& a, const Tensor& b) {
        if (a.rank() != 1 || b.rank() != 1)
            throw std::invalid_argument("concat: both operands must be vectors, got " +
                                        detail::shape_str(a.shape()) + " and " +
                                        detail::shape_str(b.shape()));
        const int na = a.dim(0), nb = b.dim(0);
        Tensor out({na + nb});
        std::copy(a.data(), a.data() + na, out.data());
        std::copy(b.data(), b.data() + nb, out.data() + na);
        scalar_ops_ += out.size();

        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi, na, nb] {
            if (oi->grad.empty()) return;
            if (na > 0) {
                if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
                for (int i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
            }
            if (nb > 0) {
                if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
                for (int i = 0; i < nb; ++i) bi->grad[i] += oi->grad[na + i];
            }
        });
        return out;
    }

    Tensor flatten(const Tensor& input) {
        Tensor out({static_cast<int>(input.size())}, input.values());
        scalar_ops_ += input.size();
        auto xi = input.impl(), oi = out.impl();
        record([xi, oi] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
        return out;
    }

    Tensor slice(const Tensor& input, int offset, int length) {
        if (input.rank() != 1)
            throw std::invalid_argument("slice: input must be a vector");
        if (offset < 0 || length < 0 || offset + length > input.dim(0))
            throw std::invalid_argument("slice: range [" + std::to_string(offset) + "," +
                                        std::to_string(offset + length) + ") out of bounds for length " +
                                        std::to_string(input.dim(0)));
        Tensor out({length});
        std::copy(input.data() + offset, input.data() + offset + length, out.data());
        scalar_ops_ += out.size();
        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, offset, length] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.assign(xi->values.size(), 0.0);
            for (int i = 0; i < length; ++i) xi->grad[offset + i] += oi->grad[i];
        });
        return out;
    }

    Tensor add(const Tensor& a, const Tensor& b) {
        check_same_shape(a, b, "add");
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
        scalar_ops_ += a.size();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                ai->grad[i] += oi->grad[i];
                bi->grad[i] += oi->grad[i];
            }
        });
        return out;
    }

    Tensor sub(const Tensor& a, const Tensor& b) {
        check_same_shape(a, b, "sub");
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
        scalar_ops_ += a.size();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                ai->grad[i] += oi->grad[i];
                bi->grad[i] -= oi->grad[i];
            }
        });
        return out;
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        check_same_shape(a, b, "mul");
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
        scalar_ops_ += a.size();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                ai->grad[i] += bi->values[i] * oi->grad[i];
                bi->grad[i] += ai->values[i] * oi->grad[i];
            }
        });
        return out;
    }

    Tensor scale(const Tensor& a, double c) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
        scalar_ops_ += a.size();
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi, c] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += c * oi->grad[i];
        });
        return out;
    }

    Tensor sum(const Tensor& a) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
        Tensor out = Tensor::scalar(acc);
        scalar_ops_ += a.size();
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            const double g = oi->grad[0];
            for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += g;
        });
        return out;
    }

    Tensor dot(const Tensor& a, const Tensor& b) {
        check_same_shape(a, b, "dot");
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
        Tensor out = Tensor::scalar(acc);
        scalar_ops_ += a.size();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            if (bi->grad.empty()) bi->grad.assign(bi->values.size(), 0.0);
            const double g = oi->grad[0];
            for (std::size_t i = 0; i < ai->values.size(); ++i) {
                ai->grad[i] += g * bi->values[i];
                bi->grad[i] += g * ai->values[i];
            }
        });
        return out;
    }

    Tensor log(const Tensor& a) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.data()[i] <= 0.0)
                throw std::invalid_argument("log: nonpositive input " + std::to_string(a.data()[i]));
            out.data()[i] = std::log(a.data()[i]);
        }
        scalar_ops_ += a.size();
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                ai->grad[i] += oi->grad[i] / ai->values[i];
        });
        return out;
    }

    // Gradient passes through where lo <= x <= hi, zero where the value was clamped.
    Tensor clamp(const Tensor& a, double lo, double hi) {
        if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i)
            out.data()[i] = std::min(std::max(a.data()[i], lo), hi);
        scalar_ops_ += a.size();
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi, lo, hi] {
            if (oi->grad.empty()) return;
            if (ai->grad.empty()) ai->grad.assign(ai->values.size(), 0.0);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const double x = ai->values[i];
                if (x >= lo && x <= hi) ai->grad[i] += oi->grad[i];
            }
        });
        return out;
    }

    // Seeds d(root)/d(root) = 1 and replays the tape in reverse. Operand
    // gradients accumulate additively; pre-existing gradients (e.g. from a
    // previous sample's backward into shared parameters) are kept.
    void backward(const Tensor& root) {
        if (root.size() != 1)
            throw std::invalid_argument("backward: root must be scalar, shape " +
                                        detail::shape_str(root.shape()));
        auto ri = root.impl();
        if (ri->grad.empty()) ri->grad.assign(1, 0.0);
        ri->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it).backward();
    }

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t scalar_ops() const { return scalar_ops_; }

    void clear() {
        nodes_.clear();
        scalar_ops_ = 0;
    }

private:
    struct Node {
        std::function<void()> backward;
    };

    void record(std::function<void()> fn) { nodes_.push_back({std::move(fn)}); }

    static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.shape() != b.shape())
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        detail::shape_str(a.shape()) + " vs " +
                                        detail::shape_str(b.shape()));
    }

    static void check_pool_args(const Tensor& input, int window, int stride, const char* op) {
        if (input.rank() != 3)
            throw std::invalid_argument(std::string(op) + ": input must be [C,H,W], got " +
                                        detail::shape_str(input.shape()));
        if (window < 1 || stride < 1)
            throw std::invalid_argument(std::string(op) + ": window and stride must be positive");
        if (window > input.dim(1) || window > input.dim(2))
            throw std::invalid_argument(std::string(op) + ": window " + std::to_string(window) +
                                        " exceeds spatial extent " + detail::shape_str(input.shape()));
    }

    // Cross-correlation; per output element the accumulation order is
    // (ci, ky, kx) ascending, starting from the bias.
    static void conv2d_forward(const double* x, const double* k, const double* b, double* o,
                               int cin, int h, int w, int cout, int kh, int kw,
                               int stride, int pad, int ho, int wo) {
        for (int co = 0; co < cout; ++co)
            std::fill(o + static_cast<std::size_t>(co) * ho * wo,
                      o + static_cast<std::size_t>(co + 1) * ho * wo, b[co]);
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < cin; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv =
                            k[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        int ox_lo, ox_hi;
                        col_range(kx, pad, stride, w, wo, ox_lo, ox_hi);
                        if (ox_lo > ox_hi) continue;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const double* xrow =
                                x + (static_cast<std::size_t>(ci) * h + iy) * w +
                                (ox_lo * stride + kx - pad);
                            double* orow =
                                o + (static_cast<std::size_t>(co) * ho + oy) * wo + ox_lo;
                            const int n = ox_hi - ox_lo + 1;
                            if (stride == 1)
                                for (int i = 0; i < n; ++i) orow[i] += wv * xrow[i];
                            else
                                for (int i = 0; i < n; ++i) orow[i] += wv * xrow[i * stride];
                        }
                    }
    }

    static void conv2d_backward(const double* x, const double* k, const double* go,
                                double* gx, double* gk, double* gb,
                                int cin, int h, int w, int cout, int kh, int kw,
                                int stride, int pad, int ho, int wo) {
        for (int co = 0; co < cout; ++co) {
            const double* gplane = go + static_cast<std::size_t>(co) * ho * wo;
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += gplane[i];
            gb[co] += acc;
        }
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < cin; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::size_t kidx =
                            ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx;
                        const double wv = k[kidx];
                        double wgrad = 0.0;
                        int ox_lo, ox_hi;
                        col_range(kx, pad, stride, w, wo, ox_lo, ox_hi);
                        if (ox_lo > ox_hi) continue;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const std::size_t xbase =
                                (static_cast<std::size_t>(ci) * h + iy) * w +
                                (ox_lo * stride + kx - pad);
                            const double* xrow = x + xbase;
                            double* gxrow = gx + xbase;
                            const double* gorow =
                                go + (static_cast<std::size_t>(co) * ho + oy) * wo + ox_lo;
                            const int n = ox_hi - ox_lo + 1;
                            if (stride == 1)
                                for (int i = 0; i < n; ++i) {
                                    wgrad += xrow[i] * gorow[i];
                                    gxrow[i] += wv * gorow[i];
                                }
                            else
                                for (int i = 0; i < n; ++i) {
                                    wgrad += xrow[i * stride] * gorow[i];
                                    gxrow[i * stride] += wv * gorow[i];
                                }
                        }
                        gk[kidx] += wgrad;
                    }
    }

    // Valid output-column range for a given kernel column: ix = ox*stride + kx - pad in [0, w).
    static void col_range(int kx, int pad, int stride, int w, int wo, int& lo, int& hi) {
        lo = 0;
        if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
        hi = std::min(wo - 1, (w - 1 - kx + pad) / stride);
    }

    std::vector<Node> nodes_;
    std::uint64_t scalar_ops_ = 0;
};

}  // namespace mcfa
