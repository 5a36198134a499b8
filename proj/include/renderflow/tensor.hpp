#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "renderflow/common.hpp"

namespace rf {

// Dense row-major tensor of arbitrary rank. Plain value type: the autograd
// layer wraps it, the bridge/inference code uses it directly.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T value) { return Tensor(std::move(s), value); }
    static Tensor scalar(T value) { return Tensor({1}, value); }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
    T operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <class T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

// ---------------------------------------------------------------------------
// GEMM kernels. All axpy-ordered so the inner loop is a contiguous stream the
// compiler can vectorize. Accumulating variants (C +=) serve the backward
// pass. Deterministic: each output element is a fixed-order sequential sum.
// ---------------------------------------------------------------------------

// C(M,N) += A(M,K) * B(N,K)^T   (dot of contiguous rows)
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<size_t>(i) * k;
        T* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C(M,N) += A(M,K) * B(K,N)
template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<size_t>(i) * k;
        T* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            T av = ai[p];
            const T* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(M,N) += A(K,M)^T * B(K,N)
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int p = 0; p < k; ++p) {
        const T* ap = a + static_cast<size_t>(p) * m;
        const T* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            T av = ap[i];
            T* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace rf
