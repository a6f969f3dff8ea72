#pragma once
/*
autodiff.hpp
------------
Minimal reverse-mode automatic differentiation on dense 64-bit float
tensors. Tensors are handles onto graph nodes; every operation records
its parents and a backprop closure, and backward() runs one reverse
topological sweep from a scalar loss. detach() copies values across a
gradient barrier, and NoGradGuard suspends recording entirely.
*/

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace refineppi::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized lazily during backward
    bool tracked = false;      // reachable from a parameter leaf
    bool is_leaf = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    std::size_t size() const { return values.size(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

inline thread_local int nograd_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::nograd_depth == 0; }

// Scoped suspension of graph recording; ops executed under the guard
// produce untracked value-only tensors.
class NoGradGuard {
  public:
    NoGradGuard() { ++detail::nograd_depth; }
    ~NoGradGuard() { --detail::nograd_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> values) {
        if (shape_size(shape) != values.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return constant({1}, {v}); }

    static Tensor zeros(Shape shape) {
        std::vector<double> v(shape_size(shape), 0.0);
        return constant(std::move(shape), std::move(v));
    }

    // Trainable leaf.
    static Tensor param(Shape shape, std::vector<double> values) {
        Tensor t = constant(std::move(shape), std::move(values));
        t.node_->tracked = true;
        t.node_->is_leaf = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    bool tracked() const { return node_->tracked; }
    bool is_leaf() const { return node_->is_leaf; }

    const std::vector<double>& values() const { return node_->values; }
    // Mutable access for optimizers / checkpoint loading; only sensible on leaves.
    std::vector<double>& values_mut() { return node_->values; }

    bool has_grad() const { return node_->grad.size() == node_->values.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::runtime_error("Tensor: gradient has not been computed");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

    double value() const {
        if (size() != 1) throw std::invalid_argument("Tensor::value: tensor of shape " +
                                                     shape_str(shape()) + " is not scalar");
        return node_->values[0];
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop);
};

inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    bool track = false;
    if (grad_enabled()) {
        for (const Tensor& p : parents)
            if (p.tracked()) { track = true; break; }
    }
    if (track) {
        n->tracked = true;
        n->parents.reserve(parents.size());
        for (const Tensor& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        for (int p = 0; p < 2; ++p) {
            auto& par = *n.parents[static_cast<std::size_t>(p)];
            par.ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) par.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) {
            pa.grad[i] += n.grad[i];
            pb.grad[i] -= n.grad[i];
        }
    });
}

// Elementwise product for equal shapes; if one operand is a scalar it
// broadcasts over the other. No other broadcasting exists.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.size() == 1 && b.size() != 1) return mul(b, a);
    if (b.size() == 1 && a.size() != 1) {
        double s = b.values()[0];
        std::vector<double> v(a.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * s;
        return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            double s = pb.values[0];
            double acc = 0.0;
            for (std::size_t i = 0; i < n.size(); ++i) {
                pa.grad[i] += n.grad[i] * s;
                acc += n.grad[i] * pa.values[i];
            }
            pb.grad[0] += acc;
        });
    }
    check_same_shape("mul", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) {
            pa.grad[i] += n.grad[i] * pb.values[i];
            pb.grad[i] += n.grad[i] * pa.values[i];
        }
    });
}

inline Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

// (m,k) x (k,n) -> (m,n), or (m,k) x (k) -> (m).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || (b.rank() != 2 && b.rank() != 1))
        throw std::invalid_argument("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    std::size_t m = a.shape()[0], k = a.shape()[1];
    std::size_t kb = b.shape()[0];
    std::size_t n = (b.rank() == 2) ? b.shape()[1] : 1;
    if (k != kb)
        throw std::invalid_argument("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                                    shape_str(b.shape()));
    std::vector<double> v(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double aik = av[i * k + kk];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += aik * bv[kk * n + j];
        }
    Shape out_shape = (b.rank() == 2) ? Shape{m, n} : Shape{m};
    return make_op(std::move(out_shape), std::move(v), {a, b}, [m, k, n](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        // dA = dC B^T ; dB = A^T dC
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += nd.grad[i * n + j] * pb.values[kk * n + j];
                pa.grad[i * k + kk] += acc;
            }
        for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    acc += pa.values[i * k + kk] * nd.grad[i * n + j];
                pb.grad[kk * n + j] += acc;
            }
    });
}

// Flattens all inputs, in order, into one rank-1 tensor.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t total = 0;
    for (const Tensor& p : parts) total += p.size();
    std::vector<double> v;
    v.reserve(total);
    for (const Tensor& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    return make_op({total}, std::move(v), parts, [](detail::Node& n) {
        std::size_t off = 0;
        for (auto& pp : n.parents) {
            pp->ensure_grad();
            for (std::size_t i = 0; i < pp->size(); ++i) pp->grad[i] += n.grad[off + i];
            off += pp->size();
        }
    });
}

inline double sigmoid_stable(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// x * sigmoid(x), the smooth nonlinearity used throughout the network.
inline Tensor silu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * sigmoid_stable(a.values()[i]);
    return make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) {
            double s = sigmoid_stable(p.values[i]);
            p.grad[i] += n.grad[i] * (s * (1.0 + p.values[i] * (1.0 - s)));
        }
    });
}

inline double softplus_stable(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline Tensor softplus(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = softplus_stable(a.values()[i]);
    return make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            p.grad[i] += n.grad[i] * sigmoid_stable(p.values[i]);
    });
}

// Elementwise log(1 + x); domain x > -1. Used to compress long-tailed
// nonnegative features into a numerically tame range.
inline Tensor log1p(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a.values()[i];
        if (x <= -1.0) throw std::invalid_argument("log1p: input <= -1");
        v[i] = std::log1p(x);
    }
    return make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            p.grad[i] += n.grad[i] / (1.0 + p.values[i]);
    });
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return make_op({1}, {s}, {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    double inv = 1.0 / static_cast<double>(a.size());
    return make_op({1}, {s * inv}, {a}, [inv](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += n.grad[0] * inv;
    });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    check_same_shape("dot", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
    return make_op({1}, {s}, {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            pa.grad[i] += n.grad[0] * pb.values[i];
            pb.grad[i] += n.grad[0] * pa.values[i];
        }
    });
}

// Sum of squared entries (any shape).
inline Tensor sq_norm(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x * x;
    return make_op({1}, {s}, {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += n.grad[0] * 2.0 * p.values[i];
    });
}

inline Tensor trace(const Tensor& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1])
        throw std::invalid_argument("trace: expected a square matrix, got " + shape_str(a.shape()));
    std::size_t d = a.shape()[0];
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a.values()[i * d + i];
    return make_op({1}, {s}, {a}, [d](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < d; ++i) p.grad[i * d + i] += n.grad[0];
    });
}

// Elementwise Huber: 0.5 x^2 within delta, delta (|x| - delta/2) outside.
// The derivative is clamp(x, -delta, delta), continuous at |x| = delta.
inline Tensor huber(const Tensor& a, double delta) {
    if (delta <= 0.0) throw std::invalid_argument("huber: delta must be positive");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a.values()[i];
        v[i] = (std::abs(x) <= delta) ? 0.5 * x * x : delta * (std::abs(x) - 0.5 * delta);
    }
    return make_op(a.shape(), std::move(v), {a}, [delta](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            p.grad[i] += n.grad[i] * std::clamp(p.values[i], -delta, delta);
    });
}

// Huber applied to the Euclidean norm of the input, as a scalar. This is
// the per-atom term of the refinement loss: quadratic in the residual
// below delta, linear above.
inline Tensor huber_norm(const Tensor& a, double delta) {
    if (delta <= 0.0) throw std::invalid_argument("huber_norm: delta must be positive");
    double sq = 0.0;
    for (double x : a.values()) sq += x * x;
    double r = std::sqrt(sq);
    double v = (r <= delta) ? 0.5 * sq : delta * (r - 0.5 * delta);
    return make_op({1}, {v}, {a}, [delta, r](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        if (r <= delta) {
            for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += n.grad[0] * p.values[i];
        } else {
            double s = delta / r;
            for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += n.grad[0] * s * p.values[i];
        }
    });
}

// Value-identical copy that is excluded from the graph.
inline Tensor detach(const Tensor& a) {
    return Tensor::constant(a.shape(), a.values());
}

// Reverse sweep from a scalar loss. Gradients of every node reachable
// from the loss are reset first, so each call yields exactly d(loss)/d(leaf);
// calling backward twice on the same loss tensor is an error.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->tracked)
        throw std::runtime_error("backward: loss does not depend on any tracked parameter");
    if (root->backward_done)
        throw std::runtime_error("backward: already called on this loss; rebuild the graph first");

    // Iterative post-order DFS; `order` ends child-before-parent reversed below.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* parent = node->parents[idx].get();
            ++idx;
            if (parent->tracked && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (detail::Node* n : order) n->grad.assign(n->values.size(), 0.0);
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
    root->backward_done = true;
}

}  // namespace refineppi::ad
