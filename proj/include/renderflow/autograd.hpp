#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "renderflow/tensor.hpp"

namespace rf {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over Tensor<T>. Dynamic graph: every op allocates a
// node holding the forward value and a closure that scatters the node's grad
// into its parents. Everything is sequential and fixed-order, so two runs on
// identical inputs are bitwise identical.
// ---------------------------------------------------------------------------

template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on demand during backward
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backfn;

    bool has_grad() const { return grad.numel() == val.numel() && val.numel() > 0; }
    void ensure_grad() {
        if (!has_grad()) grad = Tensor<T>::zeros(val.shape);
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    n->needs_grad = false;
    return n;
}

template <class T>
Var<T> leaf(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    n->needs_grad = true;
    return n;
}

template <class T>
Var<T> make_node(Tensor<T> val, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backfn) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(val);
    for (auto& p : parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) {
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

// Backward from a scalar root. Iterative topological order (graphs can be a
// few thousand nodes deep over a full training step).
template <class T>
void backward(const Var<T>& root) {
    if (root->val.numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.v[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backfn && n->has_grad()) n->backfn(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "add");
    Tensor<T> out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] += b->val.v[i];
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) b->grad.v[i] += n.grad.v[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor<T> out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] -= b->val.v[i];
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) b->grad.v[i] -= n.grad.v[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor<T> out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] *= b->val.v[i];
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                a->grad.v[i] += n.grad.v[i] * b->val.v[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                b->grad.v[i] += n.grad.v[i] * a->val.v[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) x *= s;
    return make_node<T>(std::move(out), {a}, [a, s](Node<T>& n) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += s * n.grad.v[i];
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) x += s;
    return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
    });
}

template <class T>
Var<T> vabs(const Var<T>& a) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) x = std::abs(x);
    return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            T x = a->val.v[i];
            T s = (x > T(0)) ? T(1) : (x < T(0) ? T(-1) : T(0));  // subgradient 0 at 0
            a->grad.v[i] += s * n.grad.v[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Row-vector broadcast over the last axis of a (N, D) tensor
// ---------------------------------------------------------------------------

template <class T>
inline void check_rowvec(const Tensor<T>& x, const Tensor<T>& v, const char* what) {
    if (x.rank() < 1 || v.numel() != x.shape.back())
        throw std::invalid_argument(std::string(what) + ": vector length " +
                                    std::to_string(v.numel()) + " vs row width " +
                                    std::to_string(x.shape.empty() ? 0 : x.shape.back()));
}

template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& vec) {
    check_rowvec(x->val, vec->val, "add_rowvec");
    const int d = x->val.shape.back();
    const std::int64_t rows = x->val.numel() / d;
    Tensor<T> out = x->val;
    for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out.v[r * d + j] += vec->val.v[j];
    return make_node<T>(std::move(out), {x, vec}, [x, vec, rows, d](Node<T>& n) {
        if (x->needs_grad) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) x->grad.v[i] += n.grad.v[i];
        }
        if (vec->needs_grad) {
            vec->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) vec->grad.v[j] += n.grad.v[r * d + j];
        }
    });
}

template <class T>
Var<T> mul_rowvec(const Var<T>& x, const Var<T>& vec) {
    check_rowvec(x->val, vec->val, "mul_rowvec");
    const int d = x->val.shape.back();
    const std::int64_t rows = x->val.numel() / d;
    Tensor<T> out = x->val;
    for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out.v[r * d + j] *= vec->val.v[j];
    return make_node<T>(std::move(out), {x, vec}, [x, vec, rows, d](Node<T>& n) {
        if (x->needs_grad) {
            x->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) x->grad.v[r * d + j] += n.grad.v[r * d + j] * vec->val.v[j];
        }
        if (vec->needs_grad) {
            vec->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) vec->grad.v[j] += n.grad.v[r * d + j] * x->val.v[r * d + j];
        }
    });
}

// Columns [c0, c1) of a (..., D) tensor.
template <class T>
Var<T> slice_cols(const Var<T>& x, int c0, int c1) {
    const int d = x->val.shape.back();
    if (c0 < 0 || c1 > d || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const std::int64_t rows = x->val.numel() / d;
    const int w = c1 - c0;
    std::vector<int> oshape = x->val.shape;
    oshape.back() = w;
    Tensor<T> out(oshape);
    for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < w; ++j) out.v[r * w + j] = x->val.v[r * d + c0 + j];
    return make_node<T>(std::move(out), {x}, [x, rows, d, w, c0](Node<T>& n) {
        x->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j) x->grad.v[r * d + c0 + j] += n.grad.v[r * w + j];
    });
}

// ---------------------------------------------------------------------------
// Linear layer: y(N, Dout) = x(N, Din) * W(Dout, Din)^T [+ b]
// ---------------------------------------------------------------------------
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
    const int din = x->val.shape.back();
    if (w->val.rank() != 2 || w->val.dim(1) != din)
        throw std::invalid_argument("linear: weight shape " + w->val.shape_str() +
                                    " incompatible with input " + x->val.shape_str());
    const int dout = w->val.dim(0);
    const std::int64_t n = x->val.numel() / din;
    if (b && b->val.numel() != dout) throw std::invalid_argument("linear: bias length mismatch");

    std::vector<int> oshape = x->val.shape;
    oshape.back() = dout;
    Tensor<T> out(oshape);
    gemm_nt_acc(x->val.data(), w->val.data(), out.data(), static_cast<int>(n), dout, din);
    if (b)
        for (std::int64_t r = 0; r < n; ++r)
            for (int j = 0; j < dout; ++j) out.v[r * dout + j] += b->val.v[j];

    std::vector<Var<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node<T>(std::move(out), std::move(parents), [x, w, b, n, din, dout](Node<T>& g) {
        if (x->needs_grad) {
            x->ensure_grad();
            gemm_nn_acc(g.grad.data(), w->val.data(), x->grad.data(), static_cast<int>(n), din, dout);
        }
        if (w->needs_grad) {
            w->ensure_grad();
            gemm_tn_acc(g.grad.data(), x->val.data(), w->grad.data(), dout, din, static_cast<int>(n));
        }
        if (b && b->needs_grad) {
            b->ensure_grad();
            for (std::int64_t r = 0; r < n; ++r)
                for (int j = 0; j < dout; ++j) b->grad.v[j] += g.grad.v[r * dout + j];
        }
    });
}

// ---------------------------------------------------------------------------
// LayerNorm over the last axis with affine (gamma, beta)
// ---------------------------------------------------------------------------
template <class T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const int d = x->val.shape.back();
    if (gamma->val.numel() != d || beta->val.numel() != d)
        throw std::invalid_argument("layernorm: affine size mismatch");
    const std::int64_t rows = x->val.numel() / d;
    Tensor<T> out(x->val.shape);
    Tensor<T> xhat(x->val.shape);          // saved normalized input
    Tensor<T> rstd({static_cast<int>(rows)});
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x->val.data() + r * d;
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= T(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) {
            T t = xr[j] - mean;
            var += t * t;
        }
        var /= T(d);
        T rs = T(1) / std::sqrt(var + eps);
        rstd.v[r] = rs;
        for (int j = 0; j < d; ++j) {
            T h = (xr[j] - mean) * rs;
            xhat.v[r * d + j] = h;
            out.v[r * d + j] = h * gamma->val.v[j] + beta->val.v[j];
        }
    }
    return make_node<T>(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, rows, d, xhat = std::move(xhat),
                         rstd = std::move(rstd)](Node<T>& g) {
        if (gamma->needs_grad) {
            gamma->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j)
                    gamma->grad.v[j] += g.grad.v[r * d + j] * xhat.v[r * d + j];
        }
        if (beta->needs_grad) {
            beta->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) beta->grad.v[j] += g.grad.v[r * d + j];
        }
        if (x->needs_grad) {
            x->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                T sum1 = T(0), sum2 = T(0);
                for (int j = 0; j < d; ++j) {
                    T dy = g.grad.v[r * d + j] * gamma->val.v[j];
                    sum1 += dy;
                    sum2 += dy * xhat.v[r * d + j];
                }
                sum1 /= T(d);
                sum2 /= T(d);
                for (int j = 0; j < d; ++j) {
                    T dy = g.grad.v[r * d + j] * gamma->val.v[j];
                    x->grad.v[r * d + j] += rstd.v[r] * (dy - sum1 - xhat.v[r * d + j] * sum2);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
Var<T> gelu(const Var<T>& a) {
    // tanh approximation
    const T c0 = T(0.7978845608028654);  // sqrt(2/pi)
    const T c1 = T(0.044715);
    Tensor<T> out = a->val;
    for (auto& x : out.v) {
        T u = c0 * (x + c1 * x * x * x);
        x = T(0.5) * x * (T(1) + std::tanh(u));
    }
    return make_node<T>(std::move(out), {a}, [a, c0, c1](Node<T>& n) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            T x = a->val.v[i];
            T u = c0 * (x + c1 * x * x * x);
            T th = std::tanh(u);
            T du = c0 * (T(1) + T(3) * c1 * x * x);
            T d = T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
            a->grad.v[i] += d * n.grad.v[i];
        }
    });
}

template <class T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) {
        T s = T(1) / (T(1) + std::exp(-x));
        x = x * s;
    }
    return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            T x = a->val.v[i];
            T s = T(1) / (T(1) + std::exp(-x));
            a->grad.v[i] += (s + x * s * (T(1) - s)) * n.grad.v[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> mean_all(const Var<T>& a) {
    const std::int64_t n = a->val.numel();
    T acc = T(0);
    for (auto x : a->val.v) acc += x;
    Tensor<T> out = Tensor<T>::scalar(acc / T(n));
    return make_node<T>(std::move(out), {a}, [a, n](Node<T>& g) {
        a->ensure_grad();
        T s = g.grad.v[0] / T(n);
        for (std::int64_t i = 0; i < n; ++i) a->grad.v[i] += s;
    });
}

// Mean over rows of (N, D) -> (1, D)
template <class T>
Var<T> mean_rows(const Var<T>& a) {
    const int d = a->val.shape.back();
    const std::int64_t rows = a->val.numel() / d;
    Tensor<T> out({1, d});
    for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out.v[j] += a->val.v[r * d + j];
    for (int j = 0; j < d; ++j) out.v[j] /= T(rows);
    return make_node<T>(std::move(out), {a}, [a, rows, d](Node<T>& g) {
        a->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) a->grad.v[r * d + j] += g.grad.v[j] / T(rows);
    });
}

// Mean squared error against a second var (usually a constant target).
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

template <class T>
Var<T> l1(const Var<T>& a, const Var<T>& b) {
    return mean_all(vabs(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Multi-head attention (fused). q:(Nq,D) k,v:(Nk,D). Softmax over keys.
// ---------------------------------------------------------------------------
template <class T>
Var<T> multihead_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
    const int d = q->val.shape.back();
    if (d % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    if (k->val.shape.back() != d || v->val.shape.back() != d)
        throw std::invalid_argument("attention: q/k/v width mismatch");
    const int hd = d / heads;
    const int nq = static_cast<int>(q->val.numel() / d);
    const int nk = static_cast<int>(k->val.numel() / d);
    const T scl = T(1) / std::sqrt(T(hd));

    Tensor<T> out(q->val.shape);
    Tensor<T> probs({heads, nq, nk});  // saved softmax for backward
    std::vector<T> row(static_cast<size_t>(nk));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (int i = 0; i < nq; ++i) {
            const T* qi = q->val.data() + static_cast<size_t>(i) * d + off;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < nk; ++j) {
                const T* kj = k->val.data() + static_cast<size_t>(j) * d + off;
                T s = T(0);
                for (int p = 0; p < hd; ++p) s += qi[p] * kj[p];
                row[static_cast<size_t>(j)] = s * scl;
                mx = std::max(mx, row[static_cast<size_t>(j)]);
            }
            T denom = T(0);
            for (int j = 0; j < nk; ++j) {
                T e = std::exp(row[static_cast<size_t>(j)] - mx);
                row[static_cast<size_t>(j)] = e;
                denom += e;
            }
            T* pi = probs.data() + (static_cast<size_t>(h) * nq + i) * nk;
            for (int j = 0; j < nk; ++j) pi[j] = row[static_cast<size_t>(j)] / denom;
            T* oi = out.data() + static_cast<size_t>(i) * d + off;
            for (int p = 0; p < hd; ++p) oi[p] = T(0);
            for (int j = 0; j < nk; ++j) {
                const T pj = pi[j];
                const T* vj = v->val.data() + static_cast<size_t>(j) * d + off;
                for (int p = 0; p < hd; ++p) oi[p] += pj * vj[p];
            }
        }
    }
    return make_node<T>(std::move(out), {q, k, v},
                        [q, k, v, heads, hd, d, nq, nk, scl, probs = std::move(probs)](Node<T>& g) {
        if (q->needs_grad) q->ensure_grad();
        if (k->needs_grad) k->ensure_grad();
        if (v->needs_grad) v->ensure_grad();
        std::vector<T> dp(static_cast<size_t>(nk));
        for (int h = 0; h < heads; ++h) {
            const int off = h * hd;
            for (int i = 0; i < nq; ++i) {
                const T* go = g.grad.data() + static_cast<size_t>(i) * d + off;
                const T* pi = probs.data() + (static_cast<size_t>(h) * nq + i) * nk;
                // dP and dV
                T dot_pp = T(0);
                for (int j = 0; j < nk; ++j) {
                    const T* vj = v->val.data() + static_cast<size_t>(j) * d + off;
                    T s = T(0);
                    for (int p = 0; p < hd; ++p) s += go[p] * vj[p];
                    dp[static_cast<size_t>(j)] = s;
                    dot_pp += s * pi[j];
                    if (v->needs_grad) {
                        T* dvj = v->grad.data() + static_cast<size_t>(j) * d + off;
                        for (int p = 0; p < hd; ++p) dvj[p] += pi[j] * go[p];
                    }
                }
                if (!q->needs_grad && !k->needs_grad) continue;
                const T* qi = q->val.data() + static_cast<size_t>(i) * d + off;
                T* dqi = q->needs_grad ? q->grad.data() + static_cast<size_t>(i) * d + off : nullptr;
                for (int j = 0; j < nk; ++j) {
                    T ds = pi[j] * (dp[static_cast<size_t>(j)] - dot_pp) * scl;
                    const T* kj = k->val.data() + static_cast<size_t>(j) * d + off;
                    if (dqi)
                        for (int p = 0; p < hd; ++p) dqi[p] += ds * kj[p];
                    if (k->needs_grad) {
                        T* dkj = k->grad.data() + static_cast<size_t>(j) * d + off;
                        for (int p = 0; p < hd; ++p) dkj[p] += ds * qi[p];
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Rotary position embedding. Rotates consecutive pairs within each head slice
// by angle position * theta_j, theta_j = base^(-2j/head_dim). Exact inverse
// rotation in backward.
// ---------------------------------------------------------------------------
template <class T>
Var<T> rope_apply(const Var<T>& x, const std::vector<int>& positions, int heads,
                  double base = 10000.0) {
    const int d = x->val.shape.back();
    if (d % heads != 0) throw std::invalid_argument("rope: dim not divisible by heads");
    const int hd = d / heads;
    if (hd % 2 != 0) throw std::invalid_argument("rope: head_dim must be even");
    const std::int64_t n = x->val.numel() / d;
    if (static_cast<std::int64_t>(positions.size()) != n)
        throw std::invalid_argument("rope: one position per token required");

    const int pairs = hd / 2;
    std::vector<double> theta(static_cast<size_t>(pairs));
    for (int j = 0; j < pairs; ++j)
        theta[static_cast<size_t>(j)] = std::pow(base, -2.0 * j / static_cast<double>(hd));

    auto rotate = [positions, theta, n, d, heads, hd, pairs](const Tensor<T>& src, Tensor<T>& dst,
                                                             double sign) {
        for (std::int64_t i = 0; i < n; ++i) {
            double pos = static_cast<double>(positions[static_cast<size_t>(i)]);
            for (int h = 0; h < heads; ++h) {
                const std::int64_t off = i * d + h * hd;
                for (int j = 0; j < pairs; ++j) {
                    double ang = sign * pos * theta[static_cast<size_t>(j)];
                    T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
                    T a = src.v[off + 2 * j], b = src.v[off + 2 * j + 1];
                    dst.v[off + 2 * j] = a * c - b * s;
                    dst.v[off + 2 * j + 1] = a * s + b * c;
                }
            }
        }
    };
    Tensor<T> out(x->val.shape);
    rotate(x->val, out, 1.0);
    return make_node<T>(std::move(out), {x}, [x, rotate](Node<T>& g) {
        x->ensure_grad();
        Tensor<T> gx(g.grad.shape);
        rotate(g.grad, gx, -1.0);
        for (std::int64_t i = 0; i < gx.numel(); ++i) x->grad.v[i] += gx.v[i];
    });
}

// ---------------------------------------------------------------------------
// Image-structured ops on (F, H, W, C) tensors
// ---------------------------------------------------------------------------

inline void check_clip_shape(const std::vector<int>& s, const char* what) {
    if (s.size() != 4) throw std::invalid_argument(std::string(what) + ": expected (F,H,W,C)");
}

// 2x2 average pool; H and W must be even.
template <class T>
Var<T> downsample2(const Var<T>& x) {
    check_clip_shape(x->val.shape, "downsample2");
    const int f = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2), c = x->val.dim(3);
    if (h % 2 || w % 2) throw std::invalid_argument("downsample2: odd spatial size");
    Tensor<T> out({f, h / 2, w / 2, c});
    auto idx = [w, c](int fr, int y, int xx, int ch, int hh) {
        return ((static_cast<std::int64_t>(fr) * hh + y) * w + xx) * c + ch;
    };
    for (int fr = 0; fr < f; ++fr)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx)
                for (int ch = 0; ch < c; ++ch) {
                    T s = x->val.v[idx(fr, 2 * y, 2 * xx, ch, h)] +
                          x->val.v[idx(fr, 2 * y, 2 * xx + 1, ch, h)] +
                          x->val.v[idx(fr, 2 * y + 1, 2 * xx, ch, h)] +
                          x->val.v[idx(fr, 2 * y + 1, 2 * xx + 1, ch, h)];
                    out.v[((static_cast<std::int64_t>(fr) * (h / 2) + y) * (w / 2) + xx) * c + ch] =
                        s * T(0.25);
                }
    return make_node<T>(std::move(out), {x}, [x, f, h, w, c](Node<T>& g) {
        x->ensure_grad();
        for (int fr = 0; fr < f; ++fr)
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx)
                    for (int ch = 0; ch < c; ++ch) {
                        T gv = g.grad.v[((static_cast<std::int64_t>(fr) * (h / 2) + y) * (w / 2) + xx) * c + ch] * T(0.25);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                x->grad.v[((static_cast<std::int64_t>(fr) * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch] += gv;
                    }
    });
}

// mean(|dx(pred) - dx(gt)|) + mean(|dy(pred) - dy(gt)|) with forward
// finite differences per channel. Each directional mean is over its own
// element count, so a pure ramp mismatch of slope (a-b) scores |a-b|.
template <class T>
Var<T> gradient_l1(const Var<T>& pred, const Var<T>& gt) {
    check_clip_shape(pred->val.shape, "gradient_l1");
    check_same_shape(pred->val, gt->val, "gradient_l1");
    const int f = pred->val.dim(0), h = pred->val.dim(1), w = pred->val.dim(2), c = pred->val.dim(3);
    auto at = [h, w, c](const Tensor<T>& t, int fr, int y, int xx, int ch) {
        return t.v[((static_cast<std::int64_t>(fr) * h + y) * w + xx) * c + ch];
    };
    const std::int64_t nx = static_cast<std::int64_t>(f) * h * (w - 1) * c;
    const std::int64_t ny = static_cast<std::int64_t>(f) * (h - 1) * w * c;
    if (nx <= 0 || ny <= 0) throw std::invalid_argument("gradient_l1: image too small");

    T accx = T(0), accy = T(0);
    for (int fr = 0; fr < f; ++fr)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ch = 0; ch < c; ++ch) {
                    if (xx + 1 < w) {
                        T gp = at(pred->val, fr, y, xx + 1, ch) - at(pred->val, fr, y, xx, ch);
                        T gg = at(gt->val, fr, y, xx + 1, ch) - at(gt->val, fr, y, xx, ch);
                        accx += std::abs(gp - gg);
                    }
                    if (y + 1 < h) {
                        T gp = at(pred->val, fr, y + 1, xx, ch) - at(pred->val, fr, y, xx, ch);
                        T gg = at(gt->val, fr, y + 1, xx, ch) - at(gt->val, fr, y, xx, ch);
                        accy += std::abs(gp - gg);
                    }
                }
    Tensor<T> out = Tensor<T>::scalar(accx / T(nx) + accy / T(ny));
    return make_node<T>(std::move(out), {pred, gt}, [pred, gt, f, h, w, c, nx, ny, at](Node<T>& g) {
        const T gs = g.grad.v[0];
        auto scatter = [&](const Var<T>& tgt, T sign_mult) {
            if (!tgt->needs_grad) return;
            tgt->ensure_grad();
            for (int fr = 0; fr < f; ++fr)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        for (int ch = 0; ch < c; ++ch) {
                            const std::int64_t base = ((static_cast<std::int64_t>(fr) * h + y) * w + xx) * c + ch;
                            if (xx + 1 < w) {
                                T dgp = at(pred->val, fr, y, xx + 1, ch) - at(pred->val, fr, y, xx, ch);
                                T dgg = at(gt->val, fr, y, xx + 1, ch) - at(gt->val, fr, y, xx, ch);
                                T df = dgp - dgg;
                                T s = (df > T(0)) ? T(1) : (df < T(0) ? T(-1) : T(0));
                                s *= sign_mult * gs / T(nx);
                                tgt->grad.v[base + c] += s;
                                tgt->grad.v[base] -= s;
                            }
                            if (y + 1 < h) {
                                T dgp = at(pred->val, fr, y + 1, xx, ch) - at(pred->val, fr, y, xx, ch);
                                T dgg = at(gt->val, fr, y + 1, xx, ch) - at(gt->val, fr, y, xx, ch);
                                T df = dgp - dgg;
                                T s = (df > T(0)) ? T(1) : (df < T(0) ? T(-1) : T(0));
                                s *= sign_mult * gs / T(ny);
                                tgt->grad.v[base + static_cast<std::int64_t>(w) * c] += s;
                                tgt->grad.v[base] -= s;
                            }
                        }
        };
        scatter(pred, T(1));
        scatter(gt, T(-1));
    });
}

// ---------------------------------------------------------------------------
// Patch rearrangement. (F,H,W,C) <-> (F*Hp*Wp, C*p*p) with token index
// ((f*Hp + r)*Wp + col) and feature index ((dy*p + dx)*C + ch). Pure
// permutations; exact inverses of each other.
// ---------------------------------------------------------------------------

template <class T>
Var<T> patchify_rearrange(const Var<T>& clip, int p) {
    check_clip_shape(clip->val.shape, "patchify");
    const int f = clip->val.dim(0), h = clip->val.dim(1), w = clip->val.dim(2), c = clip->val.dim(3);
    if (p <= 0 || h % p || w % p) throw std::invalid_argument("patchify: patch must divide H and W");
    const int hp = h / p, wp = w / p;
    Tensor<T> out({f * hp * wp, c * p * p});
    const int fw = c * p * p;
    for (int fr = 0; fr < f; ++fr)
        for (int r = 0; r < hp; ++r)
            for (int col = 0; col < wp; ++col) {
                const std::int64_t tok = (static_cast<std::int64_t>(fr) * hp + r) * wp + col;
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        for (int ch = 0; ch < c; ++ch)
                            out.v[tok * fw + (dy * p + dx) * c + ch] =
                                clip->val.v[((static_cast<std::int64_t>(fr) * h + r * p + dy) * w + col * p + dx) * c + ch];
            }
    return make_node<T>(std::move(out), {clip}, [clip, f, h, w, c, p, hp, wp, fw](Node<T>& g) {
        clip->ensure_grad();
        for (int fr = 0; fr < f; ++fr)
            for (int r = 0; r < hp; ++r)
                for (int col = 0; col < wp; ++col) {
                    const std::int64_t tok = (static_cast<std::int64_t>(fr) * hp + r) * wp + col;
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            for (int ch = 0; ch < c; ++ch)
                                clip->grad.v[((static_cast<std::int64_t>(fr) * h + r * p + dy) * w + col * p + dx) * c + ch] +=
                                    g.grad.v[tok * fw + (dy * p + dx) * c + ch];
                }
    });
}

template <class T>
Var<T> unpatchify_rearrange(const Var<T>& tokens, int f, int h, int w, int c, int p) {
    if (p <= 0 || h % p || w % p) throw std::invalid_argument("unpatchify: patch must divide H and W");
    const int hp = h / p, wp = w / p;
    const int fw = c * p * p;
    if (tokens->val.numel() != static_cast<std::int64_t>(f) * hp * wp * fw)
        throw std::invalid_argument("unpatchify: token grid size mismatch");
    Tensor<T> out({f, h, w, c});
    for (int fr = 0; fr < f; ++fr)
        for (int r = 0; r < hp; ++r)
            for (int col = 0; col < wp; ++col) {
                const std::int64_t tok = (static_cast<std::int64_t>(fr) * hp + r) * wp + col;
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        for (int ch = 0; ch < c; ++ch)
                            out.v[((static_cast<std::int64_t>(fr) * h + r * p + dy) * w + col * p + dx) * c + ch] =
                                tokens->val.v[tok * fw + (dy * p + dx) * c + ch];
            }
    return make_node<T>(std::move(out), {tokens}, [tokens, f, h, w, c, p, hp, wp, fw](Node<T>& g) {
        tokens->ensure_grad();
        for (int fr = 0; fr < f; ++fr)
            for (int r = 0; r < hp; ++r)
                for (int col = 0; col < wp; ++col) {
                    const std::int64_t tok = (static_cast<std::int64_t>(fr) * hp + r) * wp + col;
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            for (int ch = 0; ch < c; ++ch)
                                tokens->grad.v[tok * fw + (dy * p + dx) * c + ch] +=
                                    g.grad.v[((static_cast<std::int64_t>(fr) * h + r * p + dy) * w + col * p + dx) * c + ch];
                }
    });
}

}  // namespace rf
