#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ultr/rng.hpp"

// Minimal differentiable building blocks: contiguous-buffer kernels, a
// reverse-mode tape over vector-valued nodes, AdaGrad, and the
// finite-difference contract every model must pass. Templated on the scalar
// type: float for training, double for gradient verification.

namespace ultr::nn {

// ---------------------------------------------------------------- kernels

template <class T>
inline T dot(const T* a, const T* b, int n) {
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// y = W x, W row-major [m x n]
template <class T>
inline void matvec(const T* W, const T* x, T* y, int m, int n) {
    for (int i = 0; i < m; ++i) y[i] = dot(W + static_cast<size_t>(i) * n, x, n);
}

// y += W x
template <class T>
inline void matvec_acc(const T* W, const T* x, T* y, int m, int n) {
    for (int i = 0; i < m; ++i) y[i] += dot(W + static_cast<size_t>(i) * n, x, n);
}

// dW += g outer x
template <class T>
inline void outer_acc(T* dW, const T* g, const T* x, int m, int n) {
    for (int i = 0; i < m; ++i) {
        T* row = dW + static_cast<size_t>(i) * n;
        const T gi = g[i];
#pragma omp simd
        for (int j = 0; j < n; ++j) row[j] += gi * x[j];
    }
}

// dx += W^T g
template <class T>
inline void matvec_t_acc(const T* W, const T* g, T* dx, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const T* row = W + static_cast<size_t>(i) * n;
        const T gi = g[i];
#pragma omp simd
        for (int j = 0; j < n; ++j) dx[j] += gi * row[j];
    }
}

template <class T>
inline T sigmoid_scalar(T x) {
    return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                  : T(1) - T(1) / (T(1) + std::exp(x));
}

// ------------------------------------------------------------- parameters

template <class T>
struct Tensor {
    std::string name;
    std::vector<int> shape;  // rank 1 or 2, row-major
    std::vector<T> v;
    std::vector<T> accum;  // AdaGrad state

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() > 1 ? shape[1] : 1; }
    size_t size() const { return v.size(); }
};

template <class T>
struct ParameterSet {
    std::vector<Tensor<T>> tensors;

    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        if (find(name)) throw std::invalid_argument("duplicate tensor name: " + name);
        tensors.push_back(Tensor<T>{name, std::move(shape), std::vector<T>(n, T(0)),
                                    std::vector<T>(n, T(0))});
        return tensors.back();
    }

    // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fan_in = cols.
    Tensor<T>& add_uniform(const std::string& name, std::vector<int> shape, Rng& rng) {
        Tensor<T>& t = add(name, std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
        for (auto& x : t.v) x = static_cast<T>(rng.uniform(-bound, bound));
        return t;
    }

    Tensor<T>* find(const std::string& name) {
        for (auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
    const Tensor<T>* find(const std::string& name) const {
        return const_cast<ParameterSet*>(this)->find(name);
    }
    Tensor<T>& at(const std::string& name) {
        if (auto* t = find(name)) return *t;
        throw std::out_of_range("no tensor named " + name);
    }
    const Tensor<T>& at(const std::string& name) const {
        return const_cast<ParameterSet*>(this)->at(name);
    }

    size_t total_size() const {
        size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    double squared_norm() const {
        double s = 0;
        for (const auto& t : tensors)
            for (T x : t.v) s += static_cast<double>(x) * static_cast<double>(x);
        return s;
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& t : tensors) {
            Tensor<U>& o = out.add(t.name, t.shape);
            for (size_t i = 0; i < t.v.size(); ++i) o.v[i] = static_cast<U>(t.v[i]);
        }
        return out;
    }
};

// Gradient buffer aligned with a ParameterSet.
template <class T>
struct Gradients {
    std::vector<std::vector<T>> g;

    Gradients() = default;
    explicit Gradients(const ParameterSet<T>& p) {
        g.reserve(p.tensors.size());
        for (const auto& t : p.tensors) g.emplace_back(t.size(), T(0));
    }
    void zero() {
        for (auto& v : g) std::fill(v.begin(), v.end(), T(0));
    }
    void axpy(T alpha, const Gradients<T>& other) {
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t j = 0; j < g[i].size(); ++j) g[i][j] += alpha * other.g[i][j];
    }
};

// accum += grad^2; param -= lr * grad / sqrt(accum + eps)
template <class T>
inline void adagrad_step(ParameterSet<T>& p, const Gradients<T>& grads, T lr,
                         T eps = T(1e-10)) {
    if (lr <= 0 || eps <= 0) throw std::invalid_argument("adagrad: lr, eps must be > 0");
    if (grads.g.size() != p.tensors.size())
        throw std::invalid_argument("adagrad: gradient/parameter mismatch");
    for (size_t ti = 0; ti < p.tensors.size(); ++ti) {
        auto& t = p.tensors[ti];
        const auto& g = grads.g[ti];
        for (size_t i = 0; i < t.size(); ++i) {
            t.accum[i] += g[i] * g[i];
            t.v[i] -= lr * g[i] / std::sqrt(t.accum[i] + eps);
        }
    }
}

// ------------------------------------------------------------------ tape

template <class T>
class Tape {
  public:
    using Idx = int;

    Idx input(const T* x, int n) {
        Node nd;
        nd.op = Op::Input;
        nd.val.assign(x, x + n);
        return push(std::move(nd));
    }
    Idx input(const std::vector<T>& x) { return input(x.data(), static_cast<int>(x.size())); }

    Idx constant_zeros(int n) {
        Node nd;
        nd.op = Op::Input;
        nd.val.assign(n, T(0));
        return push(std::move(nd));
    }

    // One node per tensor per tape; gradients flow into grads.g[tensor index].
    Idx param(ParameterSet<T>& p, Gradients<T>& grads, const std::string& name) {
        for (size_t ti = 0; ti < p.tensors.size(); ++ti) {
            if (p.tensors[ti].name != name) continue;
            auto key = std::make_pair(&p.tensors[ti], &grads);
            auto it = param_cache_.find(key.first);
            if (it != param_cache_.end()) return it->second;
            Node nd;
            nd.op = Op::Param;
            nd.val = p.tensors[ti].v;
            nd.gsink = &grads.g[ti];
            Idx idx = push(std::move(nd));
            param_cache_.emplace(key.first, idx);
            return idx;
        }
        throw std::out_of_range("tape: no tensor named " + name);
    }

    Idx matvec(Idx W, Idx x, int m, int n) {
        check_len(W, m * n);
        check_len(x, n);
        Node nd;
        nd.op = Op::MatVec;
        nd.a = W;
        nd.b = x;
        nd.i0 = m;
        nd.i1 = n;
        nd.val.resize(m);
        nn::matvec(nodes_[W].val.data(), nodes_[x].val.data(), nd.val.data(), m, n);
        return push(std::move(nd));
    }

    Idx add(Idx a, Idx b) {
        check_same(a, b);
        Node nd = unary(Op::Add, a);
        nd.b = b;
        for (size_t i = 0; i < nd.val.size(); ++i) nd.val[i] += nodes_[b].val[i];
        return push(std::move(nd));
    }

    Idx sub(Idx a, Idx b) {
        check_same(a, b);
        Node nd = unary(Op::Sub, a);
        nd.b = b;
        for (size_t i = 0; i < nd.val.size(); ++i) nd.val[i] -= nodes_[b].val[i];
        return push(std::move(nd));
    }

    Idx mul(Idx a, Idx b) {
        check_same(a, b);
        Node nd = unary(Op::Mul, a);
        nd.b = b;
        for (size_t i = 0; i < nd.val.size(); ++i) nd.val[i] *= nodes_[b].val[i];
        return push(std::move(nd));
    }

    Idx scale(Idx a, T c) {
        Node nd = unary(Op::Scale, a);
        nd.f0 = c;
        for (auto& v : nd.val) v *= c;
        return push(std::move(nd));
    }

    Idx sigmoid(Idx a) {
        Node nd = unary(Op::Sigmoid, a);
        for (auto& v : nd.val) v = sigmoid_scalar(v);
        return push(std::move(nd));
    }

    Idx tanh_(Idx a) {
        Node nd = unary(Op::Tanh, a);
        for (auto& v : nd.val) v = std::tanh(v);
        return push(std::move(nd));
    }

    Idx elu(Idx a) {
        Node nd = unary(Op::Elu, a);
        for (auto& v : nd.val) v = v > T(0) ? v : std::exp(v) - T(1);
        return push(std::move(nd));
    }

    Idx slice(Idx a, int off, int len) {
        check_len_at_least(a, off + len);
        Node nd;
        nd.op = Op::Slice;
        nd.a = a;
        nd.i0 = off;
        nd.val.assign(nodes_[a].val.begin() + off, nodes_[a].val.begin() + off + len);
        return push(std::move(nd));
    }

    Idx concat2(Idx a, Idx b) {
        Node nd;
        nd.op = Op::Concat2;
        nd.a = a;
        nd.b = b;
        nd.i0 = static_cast<int>(nodes_[a].val.size());
        nd.val = nodes_[a].val;
        nd.val.insert(nd.val.end(), nodes_[b].val.begin(), nodes_[b].val.end());
        return push(std::move(nd));
    }

    // Row r of a [rows x cols] table node; gradient accumulates into that row.
    Idx row(Idx table, int r, int rows, int cols) {
        check_len(table, rows * cols);
        if (r < 0 || r >= rows) throw std::out_of_range("tape: embedding row out of range");
        Node nd;
        nd.op = Op::Row;
        nd.a = table;
        nd.i0 = r;
        nd.i1 = cols;
        const T* base = nodes_[table].val.data() + static_cast<size_t>(r) * cols;
        nd.val.assign(base, base + cols);
        return push(std::move(nd));
    }

    // Inverted dropout: scales kept units by 1/(1-rate) in training mode and
    // is the identity in evaluation mode.
    Idx dropout(Idx a, double rate, Rng& rng, bool train) {
        if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout rate in [0,1)");
        Node nd = unary(Op::Dropout, a);
        nd.aux.resize(nd.val.size());
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
        for (size_t i = 0; i < nd.val.size(); ++i) {
            const T m = (!train || rng.uniform() >= rate) ? (train ? keep_scale : T(1)) : T(0);
            nd.aux[i] = m;
            nd.val[i] *= m;
        }
        return push(std::move(nd));
    }

    Idx sum(Idx a) {
        Node nd;
        nd.op = Op::Sum;
        nd.a = a;
        T s = 0;
        for (T v : nodes_[a].val) s += v;
        nd.val.assign(1, s);
        return push(std::move(nd));
    }

    Idx dot_(Idx a, Idx b) {
        check_same(a, b);
        Node nd;
        nd.op = Op::Dot;
        nd.a = a;
        nd.b = b;
        nd.val.assign(1, nn::dot(nodes_[a].val.data(), nodes_[b].val.data(),
                                 static_cast<int>(nodes_[a].val.size())));
        return push(std::move(nd));
    }

    Idx stack(const std::vector<Idx>& scalars) {
        Node nd;
        nd.op = Op::Stack;
        nd.multi = scalars;
        nd.val.resize(scalars.size());
        for (size_t i = 0; i < scalars.size(); ++i) {
            check_len(scalars[i], 1);
            nd.val[i] = nodes_[scalars[i]].val[0];
        }
        return push(std::move(nd));
    }

    Idx softmax(Idx a) {
        Node nd = unary(Op::Softmax, a);
        T m = nd.val[0];
        for (T v : nd.val) m = std::max(m, v);
        T z = 0;
        for (auto& v : nd.val) {
            v = std::exp(v - m);
            z += v;
        }
        for (auto& v : nd.val) v /= z;
        return push(std::move(nd));
    }

    // Scalar loss sum_d w_d * (logsumexp(s) - s_d); the per-document listwise
    // softmax cross-entropy weighted by w.
    Idx weighted_softmax_ce(Idx scores, const std::vector<double>& w) {
        const auto& s = nodes_[scores].val;
        if (w.size() != s.size()) throw std::invalid_argument("weights length mismatch");
        Node nd;
        nd.op = Op::WeightedCE;
        nd.a = scores;
        const int n = static_cast<int>(s.size());
        double m = s[0];
        for (T v : s) m = std::max(m, static_cast<double>(v));
        double z = 0;
        for (T v : s) z += std::exp(static_cast<double>(v) - m);
        const double lse = m + std::log(z);
        nd.aux.resize(2 * n);
        double wsum = 0, loss = 0;
        for (int i = 0; i < n; ++i) {
            const double soft = std::exp(static_cast<double>(s[i]) - lse);
            nd.aux[i] = static_cast<T>(soft);
            nd.aux[n + i] = static_cast<T>(w[i]);
            wsum += w[i];
            loss += w[i] * (lse - static_cast<double>(s[i]));
        }
        nd.f0 = static_cast<T>(wsum);
        nd.val.assign(1, static_cast<T>(loss));
        return push(std::move(nd));
    }

    // Binary cross-entropy through a sigmoid on a scalar logit, with the
    // probability clamped to [clamp, 1-clamp] before the logs.
    Idx bce_logit(Idx logit, double target, double clamp) {
        check_len(logit, 1);
        Node nd;
        nd.op = Op::BceLogit;
        nd.a = logit;
        const double p = sigmoid_scalar(static_cast<double>(nodes_[logit].val[0]));
        const double pc = std::min(1.0 - clamp, std::max(clamp, p));
        nd.f0 = static_cast<T>(target);
        nd.f1 = (p > clamp && p < 1.0 - clamp) ? T(1) : T(0);  // gradient gate
        nd.aux.assign(1, static_cast<T>(p));
        nd.val.assign(1, static_cast<T>(-target * std::log(pc) -
                                        (1.0 - target) * std::log(1.0 - pc)));
        return push(std::move(nd));
    }

    const std::vector<T>& val(Idx i) const { return nodes_[i].val; }
    T scalar(Idx i) const {
        check_len(i, 1);
        return nodes_[i].val[0];
    }

    void backward(Idx out) {
        check_len(out, 1);
        for (auto& nd : nodes_) nd.adj.assign(nd.val.size(), T(0));
        nodes_[out].adj[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) step_back(nodes_[i]);
    }

    size_t size() const { return nodes_.size(); }

  private:
    enum class Op : uint8_t {
        Input, Param, MatVec, Add, Sub, Mul, Scale, Sigmoid, Tanh, Elu,
        Slice, Concat2, Row, Dropout, Sum, Dot, Stack, Softmax, WeightedCE, BceLogit,
    };

    struct Node {
        Op op = Op::Input;
        int a = -1, b = -1;
        int i0 = 0, i1 = 0;
        T f0 = 0, f1 = 0;
        std::vector<T> val, adj, aux;
        std::vector<int> multi;
        std::vector<T>* gsink = nullptr;
    };

    Node unary(Op op, Idx a) {
        Node nd;
        nd.op = op;
        nd.a = a;
        nd.val = nodes_[a].val;
        return nd;
    }

    Idx push(Node&& nd) {
        nodes_.push_back(std::move(nd));
        return static_cast<Idx>(nodes_.size() - 1);
    }

    void check_len(Idx i, int n) const {
        if (static_cast<int>(nodes_[i].val.size()) != n)
            throw std::invalid_argument("tape: dimension mismatch");
    }
    void check_len_at_least(Idx i, int n) const {
        if (static_cast<int>(nodes_[i].val.size()) < n)
            throw std::invalid_argument("tape: dimension mismatch");
    }
    void check_same(Idx a, Idx b) const {
        if (nodes_[a].val.size() != nodes_[b].val.size())
            throw std::invalid_argument("tape: dimension mismatch");
    }

    void step_back(Node& nd) {
        const size_t n = nd.val.size();
        switch (nd.op) {
            case Op::Input:
                break;
            case Op::Param:
                if (nd.gsink)
                    for (size_t i = 0; i < n; ++i) (*nd.gsink)[i] += nd.adj[i];
                break;
            case Op::MatVec: {
                Node& W = nodes_[nd.a];
                Node& x = nodes_[nd.b];
                outer_acc(W.adj.data(), nd.adj.data(), x.val.data(), nd.i0, nd.i1);
                matvec_t_acc(W.val.data(), nd.adj.data(), x.adj.data(), nd.i0, nd.i1);
                break;
            }
            case Op::Add:
                for (size_t i = 0; i < n; ++i) {
                    nodes_[nd.a].adj[i] += nd.adj[i];
                    nodes_[nd.b].adj[i] += nd.adj[i];
                }
                break;
            case Op::Sub:
                for (size_t i = 0; i < n; ++i) {
                    nodes_[nd.a].adj[i] += nd.adj[i];
                    nodes_[nd.b].adj[i] -= nd.adj[i];
                }
                break;
            case Op::Mul:
                for (size_t i = 0; i < n; ++i) {
                    nodes_[nd.a].adj[i] += nd.adj[i] * nodes_[nd.b].val[i];
                    nodes_[nd.b].adj[i] += nd.adj[i] * nodes_[nd.a].val[i];
                }
                break;
            case Op::Scale:
                for (size_t i = 0; i < n; ++i) nodes_[nd.a].adj[i] += nd.adj[i] * nd.f0;
                break;
            case Op::Sigmoid:
                for (size_t i = 0; i < n; ++i)
                    nodes_[nd.a].adj[i] += nd.adj[i] * nd.val[i] * (T(1) - nd.val[i]);
                break;
            case Op::Tanh:
                for (size_t i = 0; i < n; ++i)
                    nodes_[nd.a].adj[i] += nd.adj[i] * (T(1) - nd.val[i] * nd.val[i]);
                break;
            case Op::Elu:
                for (size_t i = 0; i < n; ++i)
                    nodes_[nd.a].adj[i] +=
                        nd.adj[i] * (nodes_[nd.a].val[i] > T(0) ? T(1) : nd.val[i] + T(1));
                break;
            case Op::Slice:
                for (size_t i = 0; i < n; ++i) nodes_[nd.a].adj[nd.i0 + i] += nd.adj[i];
                break;
            case Op::Concat2: {
                const size_t na = static_cast<size_t>(nd.i0);
                for (size_t i = 0; i < na; ++i) nodes_[nd.a].adj[i] += nd.adj[i];
                for (size_t i = na; i < n; ++i) nodes_[nd.b].adj[i - na] += nd.adj[i];
                break;
            }
            case Op::Row: {
                T* base = nodes_[nd.a].adj.data() + static_cast<size_t>(nd.i0) * nd.i1;
                for (size_t i = 0; i < n; ++i) base[i] += nd.adj[i];
                break;
            }
            case Op::Dropout:
                for (size_t i = 0; i < n; ++i) nodes_[nd.a].adj[i] += nd.adj[i] * nd.aux[i];
                break;
            case Op::Sum:
                for (auto& a : nodes_[nd.a].adj) a += nd.adj[0];
                break;
            case Op::Dot: {
                const T g = nd.adj[0];
                auto& A = nodes_[nd.a];
                auto& B = nodes_[nd.b];
                for (size_t i = 0; i < A.val.size(); ++i) {
                    A.adj[i] += g * B.val[i];
                    B.adj[i] += g * A.val[i];
                }
                break;
            }
            case Op::Stack:
                for (size_t i = 0; i < nd.multi.size(); ++i)
                    nodes_[nd.multi[i]].adj[0] += nd.adj[i];
                break;
            case Op::Softmax: {
                T inner = 0;
                for (size_t i = 0; i < n; ++i) inner += nd.adj[i] * nd.val[i];
                for (size_t i = 0; i < n; ++i)
                    nodes_[nd.a].adj[i] += nd.val[i] * (nd.adj[i] - inner);
                break;
            }
            case Op::WeightedCE: {
                const T g = nd.adj[0];
                auto& s = nodes_[nd.a];
                const size_t ns = s.val.size();
                for (size_t i = 0; i < ns; ++i)
                    s.adj[i] += g * (nd.f0 * nd.aux[i] - nd.aux[ns + i]);
                break;
            }
            case Op::BceLogit: {
                // d/dlogit = p - target when the clamp is inactive, else 0
                nodes_[nd.a].adj[0] += nd.adj[0] * nd.f1 * (nd.aux[0] - nd.f0);
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<const void*, Idx> param_cache_;
};

// dense(input, W, b) = W x + b
template <class T>
typename Tape<T>::Idx dense(Tape<T>& tp, typename Tape<T>::Idx W,
                            typename Tape<T>::Idx x, typename Tape<T>::Idx b, int m,
                            int n) {
    return tp.add(tp.matvec(W, x, m, n), b);
}

// LSTM cell taking the input contribution (sum of W_i x_i + b) precomputed;
// gate order (i, f, g, o).
template <class T>
std::pair<typename Tape<T>::Idx, typename Tape<T>::Idx> lstm_cell_pre(
    Tape<T>& tp, typename Tape<T>::Idx pre, typename Tape<T>::Idx h_prev,
    typename Tape<T>::Idx c_prev, typename Tape<T>::Idx U, int hidden) {
    auto gates = tp.add(pre, tp.matvec(U, h_prev, 4 * hidden, hidden));
    auto i = tp.sigmoid(tp.slice(gates, 0, hidden));
    auto f = tp.sigmoid(tp.slice(gates, hidden, hidden));
    auto g = tp.tanh_(tp.slice(gates, 2 * hidden, hidden));
    auto o = tp.sigmoid(tp.slice(gates, 3 * hidden, hidden));
    auto c = tp.add(tp.mul(f, c_prev), tp.mul(i, g));
    auto h = tp.mul(o, tp.tanh_(c));
    return {h, c};
}

// Standard LSTM cell; W [4h x in], U [4h x h], b [4h]. Returns (h_t, c_t).
template <class T>
std::pair<typename Tape<T>::Idx, typename Tape<T>::Idx> lstm_cell(
    Tape<T>& tp, typename Tape<T>::Idx x, typename Tape<T>::Idx h_prev,
    typename Tape<T>::Idx c_prev, typename Tape<T>::Idx W, typename Tape<T>::Idx U,
    typename Tape<T>::Idx b, int in_dim, int hidden) {
    auto pre = tp.add(tp.matvec(W, x, 4 * hidden, in_dim), b);
    return lstm_cell_pre(tp, pre, h_prev, c_prev, U, hidden);
}

// Bi-directional encoding: element i is [forward state at i; backward state
// at i]. Inputs are existing tape nodes of equal dimension.
template <class T>
std::vector<typename Tape<T>::Idx> bilstm_encode(
    Tape<T>& tp, const std::vector<typename Tape<T>::Idx>& xs,
    typename Tape<T>::Idx Wf, typename Tape<T>::Idx Uf, typename Tape<T>::Idx bf,
    typename Tape<T>::Idx Wb, typename Tape<T>::Idx Ub, typename Tape<T>::Idx bb,
    int in_dim, int hidden) {
    const int n = static_cast<int>(xs.size());
    std::vector<typename Tape<T>::Idx> fwd(n), bwd(n);
    auto h = tp.constant_zeros(hidden);
    auto c = tp.constant_zeros(hidden);
    for (int i = 0; i < n; ++i) {
        std::tie(h, c) = lstm_cell(tp, xs[i], h, c, Wf, Uf, bf, in_dim, hidden);
        fwd[i] = h;
    }
    h = tp.constant_zeros(hidden);
    c = tp.constant_zeros(hidden);
    for (int i = n - 1; i >= 0; --i) {
        std::tie(h, c) = lstm_cell(tp, xs[i], h, c, Wb, Ub, bb, in_dim, hidden);
        bwd[i] = h;
    }
    std::vector<typename Tape<T>::Idx> out(n);
    for (int i = 0; i < n; ++i) out[i] = tp.concat2(fwd[i], bwd[i]);
    return out;
}

// ------------------------------------------------------- forward-only LSTM

// Preallocated forward pass used on frozen models (imputation, evaluation).
template <class T>
struct LstmFwd {
    int in = 0, hidden = 0;
    const T* W = nullptr;  // [4h x in]
    const T* U = nullptr;  // [4h x h]
    const T* b = nullptr;  // [4h]
    std::vector<T> gates;  // work, 4h

    void bind(const Tensor<T>& w, const Tensor<T>& u, const Tensor<T>& bias) {
        hidden = u.cols();
        in = w.cols();
        W = w.v.data();
        U = u.v.data();
        b = bias.v.data();
        gates.resize(4 * hidden);
    }

    // gates must already hold the input contribution; adds U h + b and applies
    // the cell. h/c are updated in place.
    void apply(T* h, T* c) {
        for (int i = 0; i < 4 * hidden; ++i) gates[i] += b[i];
        matvec_acc(U, h, gates.data(), 4 * hidden, hidden);
        for (int j = 0; j < hidden; ++j) {
            const T ig = sigmoid_scalar(gates[j]);
            const T fg = sigmoid_scalar(gates[hidden + j]);
            const T gg = std::tanh(gates[2 * hidden + j]);
            const T og = sigmoid_scalar(gates[3 * hidden + j]);
            c[j] = fg * c[j] + ig * gg;
            h[j] = og * std::tanh(c[j]);
        }
    }

    void step(const T* x, T* h, T* c) {
        matvec(W, x, gates.data(), 4 * hidden, in);
        apply(h, c);
    }
};

// ------------------------------------------------------------- grad check

struct GradCheckItem {
    std::string name;
    double max_abs_err = 0;
    double max_rel_err = 0;
};

struct GradientReport {
    std::vector<GradCheckItem> items;
    double max_rel_error = 0;
    double tolerance = 0;
    bool pass = false;
};

// Central finite differences over every parameter element. `forward` must be
// a pure function of the current parameter values. Relative error uses an
// absolute floor so the check is meaningful near zero gradients.
template <class F>
GradientReport grad_check(ParameterSet<double>& params, F&& forward,
                          const Gradients<double>& analytic, double step = 1e-5,
                          double tolerance = 1e-4) {
    if (step <= 0) throw std::invalid_argument("grad_check: step must be > 0");
    GradientReport rep;
    rep.tolerance = tolerance;
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
        auto& t = params.tensors[ti];
        GradCheckItem item;
        item.name = t.name;
        for (size_t i = 0; i < t.size(); ++i) {
            const double saved = t.v[i];
            t.v[i] = saved + step;
            const double up = forward();
            t.v[i] = saved - step;
            const double down = forward();
            t.v[i] = saved;
            const double fd = (up - down) / (2 * step);
            const double an = analytic.g[ti][i];
            const double abs_err = std::abs(an - fd);
            const double rel =
                abs_err / std::max({std::abs(an), std::abs(fd), 1e-2});
            item.max_abs_err = std::max(item.max_abs_err, abs_err);
            item.max_rel_err = std::max(item.max_rel_err, rel);
        }
        rep.max_rel_error = std::max(rep.max_rel_error, item.max_rel_err);
        rep.items.push_back(std::move(item));
    }
    rep.pass = rep.max_rel_error < tolerance;
    return rep;
}

// ------------------------------------------------------------ checkpoints

// Self-describing text format with hexfloat values: exact round trip at the
// stored precision.
template <class T>
void save_checkpoint(const ParameterSet<T>& p,
                     const std::map<std::string, long long>& meta,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << "ultr-ckpt 1\n";
    out << "dtype " << (sizeof(T) == 4 ? "f32" : "f64") << '\n';
    for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
    char buf[48];
    for (const auto& t : p.tensors) {
        out << "tensor " << t.name << ' ' << t.shape.size();
        for (int d : t.shape) out << ' ' << d;
        out << '\n';
        for (size_t i = 0; i < t.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", static_cast<double>(t.v[i]));
            out << buf << (i + 1 == t.size() ? '\n' : ' ');
        }
        if (t.size() == 0) out << '\n';
    }
    out << "end\n";
}

template <class T>
struct Checkpoint {
    std::map<std::string, long long> meta;
    ParameterSet<T> params;

    long long meta_at(const std::string& key) const {
        const auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error("checkpoint missing meta " + key);
        return it->second;
    }
};

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string word;
    long long version = 0;
    if (!(in >> word >> version) || word != "ultr-ckpt" || version != 1)
        throw std::runtime_error("bad checkpoint header in " + path);
    std::string dtype;
    if (!(in >> word >> dtype) || word != "dtype")
        throw std::runtime_error("bad checkpoint dtype in " + path);
    const std::string want = sizeof(T) == 4 ? "f32" : "f64";
    if (dtype != want)
        throw std::runtime_error("checkpoint dtype " + dtype + ", expected " + want);

    Checkpoint<T> ck;
    while (in >> word) {
        if (word == "end") return ck;
        if (word == "meta") {
            std::string key;
            long long v;
            if (!(in >> key >> v)) throw std::runtime_error("bad meta in " + path);
            ck.meta[key] = v;
        } else if (word == "tensor") {
            std::string name;
            size_t rank = 0;
            if (!(in >> name >> rank)) throw std::runtime_error("bad tensor header");
            std::vector<int> shape(rank);
            for (auto& d : shape) in >> d;
            auto& t = ck.params.add(name, shape);
            for (size_t i = 0; i < t.size(); ++i) {
                std::string tok;
                if (!(in >> tok)) throw std::runtime_error("truncated tensor " + name);
                t.v[i] = static_cast<T>(std::strtod(tok.c_str(), nullptr));
            }
        } else {
            throw std::runtime_error("unexpected token '" + word + "' in " + path);
        }
    }
    throw std::runtime_error("checkpoint missing end marker: " + path);
}

}  // namespace ultr::nn
