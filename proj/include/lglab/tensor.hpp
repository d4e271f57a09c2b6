#pragma once

// Dense row-major tensors plus the handful of kernels everything else is
// built from: matmul, causal tempered softmax, layer norm, two-layer MLP.
// Double precision is the default; float is available for inference paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lglab {

enum class Activation { ReLU, GELU };

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
class basic_tensor {
  public:
    basic_tensor() = default;
    explicit basic_tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
        size_t n = 1;
        for (int e : shape_) {
            require(e >= 0, "tensor: negative extent");
            n *= static_cast<size_t>(e);
        }
        data_.assign(n, fill);
    }
    basic_tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        size_t n = 1;
        for (int e : shape_) n *= static_cast<size_t>(e);
        require(n == data_.size(), "tensor: data length does not match shape");
    }

    static basic_tensor matrix(int r, int c) { return basic_tensor({r, c}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int rows() const {
        require(rank() == 2, "tensor: rows() needs a matrix");
        return shape_[0];
    }
    int cols() const {
        require(rank() == 2, "tensor: cols() needs a matrix");
        return shape_[1];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    T* row(int i) { return data_.data() + static_cast<size_t>(i) * shape_[1]; }
    const T* row(int i) const { return data_.data() + static_cast<size_t>(i) * shape_[1]; }

    bool same_shape(const basic_tensor& o) const { return shape_ == o.shape_; }

    template <typename U>
    basic_tensor<U> cast() const {
        basic_tensor<U> out(shape_);
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

  private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = basic_tensor<double>;
using TensorF = basic_tensor<float>;

template <typename T>
bool all_finite(const basic_tensor<T>& t) {
    for (size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

// ---------------------------------------------------------------- matmul

template <typename T>
basic_tensor<T> matmul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: matrices required");
    require(a.cols() == b.rows(), "matmul: inner extents differ");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    basic_tensor<T> c({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int t = 0; t < k; ++t) {
            const T av = arow[t];
            const T* brow = b.row(t);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// c = a * b^T; both operands are read row-contiguously.
template <typename T>
basic_tensor<T> matmul_nt(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul_nt: matrices required");
    require(a.cols() == b.cols(), "matmul_nt: inner extents differ");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    basic_tensor<T> c({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int j = 0; j < n; ++j) {
            const T* brow = b.row(j);
            T acc = T(0);
            for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
            crow[j] = acc;
        }
    }
    return c;
}

// c = a^T * b
template <typename T>
basic_tensor<T> matmul_tn(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul_tn: matrices required");
    require(a.rows() == b.rows(), "matmul_tn: inner extents differ");
    const int m = a.cols(), k = a.rows(), n = b.cols();
    basic_tensor<T> c({m, n});
    for (int t = 0; t < k; ++t) {
        const T* arow = a.row(t);
        const T* brow = b.row(t);
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c.row(i);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <typename T>
basic_tensor<T> transpose(const basic_tensor<T>& a) {
    require(a.rank() == 2, "transpose: matrix required");
    basic_tensor<T> out({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// y[r] = sum_c M[r,c] x[c]; M applied as a linear map to a single vector.
template <typename T>
void matvec(const basic_tensor<T>& m, std::span<const T> x, std::span<T> y) {
    require(m.cols() == static_cast<int>(x.size()), "matvec: shape mismatch");
    require(m.rows() == static_cast<int>(y.size()), "matvec: shape mismatch");
    for (int r = 0; r < m.rows(); ++r) {
        const T* mr = m.row(r);
        T acc = T(0);
        for (int c = 0; c < m.cols(); ++c) acc += mr[c] * x[static_cast<size_t>(c)];
        y[static_cast<size_t>(r)] = acc;
    }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T acc = T(0);
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// ------------------------------------------------- causal tempered softmax

// One attention row: scores[0..i] are the admissible keys for query i.
// Row-max subtraction keeps exp() in range for any finite scores.
template <typename T>
void causal_softmax_row(std::span<T> scores, T tau) {
    T m = scores[0];
    for (T s : scores) m = std::max(m, s);
    T denom = T(0);
    for (T& s : scores) {
        s = std::exp(tau * (s - m));
        denom += s;
    }
    for (T& s : scores) s /= denom;
}

// Rows above the diagonal are exactly zero; each row sums to one.
template <typename T>
basic_tensor<T> causal_tempered_softmax(const basic_tensor<T>& s, T tau) {
    require(s.rank() == 2 && s.rows() == s.cols(), "causal_tempered_softmax: square matrix required");
    require(tau > T(0), "causal_tempered_softmax: tau must be positive");
    const int n = s.rows();
    basic_tensor<T> p({n, n});
    std::vector<T> buf;
    for (int i = 0; i < n; ++i) {
        buf.assign(s.row(i), s.row(i) + i + 1);
        causal_softmax_row(std::span<T>(buf.data(), buf.size()), tau);
        std::copy(buf.begin(), buf.end(), p.row(i));
    }
    return p;
}

// ----------------------------------------------------------- layer norm

inline constexpr double kLayerNormGuard = 1e-12;

// Zero-mean, then scale so the Euclidean length is sqrt(d). The guard under
// the square root keeps the constant-vector case at exactly zero.
template <typename T>
void layer_norm_inplace(std::span<T> x) {
    const size_t d = x.size();
    require(d >= 1, "layer_norm: empty vector");
    T mu = T(0);
    for (T v : x) mu += v;
    mu /= static_cast<T>(d);
    T ms = T(0);
    for (T& v : x) {
        v -= mu;
        ms += v * v;
    }
    ms /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(ms + static_cast<T>(kLayerNormGuard));
    for (T& v : x) v *= inv;
}

template <typename T>
basic_tensor<T> layer_norm(const basic_tensor<T>& x) {
    basic_tensor<T> out = x;
    if (out.rank() == 2) {
        for (int i = 0; i < out.rows(); ++i)
            layer_norm_inplace(std::span<T>(out.row(i), static_cast<size_t>(out.cols())));
    } else {
        layer_norm_inplace(std::span<T>(out.data(), out.size()));
    }
    return out;
}

// ------------------------------------------------------------ activations

template <typename T>
T relu(T x) {
    return x > T(0) ? x : T(0);
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <typename T>
T activate(T x, Activation a) {
    return a == Activation::ReLU ? relu(x) : gelu(x);
}

// d(gelu)/dx = Phi(x) + x * phi(x)
template <typename T>
T gelu_grad(T x) {
    const T phi = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
    const T Phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    return Phi + x * phi;
}

// ----------------------------------------------------------------- MLP

// W2 * act(W1 y + b1) + b2, all map convention (matrix times column vector).
template <typename T>
std::vector<T> mlp_apply(std::span<const T> y, const basic_tensor<T>& w1, std::span<const T> b1,
                         const basic_tensor<T>& w2, std::span<const T> b2, Activation act) {
    require(w1.cols() == static_cast<int>(y.size()), "mlp_apply: W1/input mismatch");
    require(w1.rows() == static_cast<int>(b1.size()), "mlp_apply: W1/b1 mismatch");
    require(w2.cols() == w1.rows(), "mlp_apply: W2/W1 mismatch");
    require(w2.rows() == static_cast<int>(b2.size()), "mlp_apply: W2/b2 mismatch");
    std::vector<T> h(static_cast<size_t>(w1.rows()));
    matvec(w1, y, std::span<T>(h));
    for (size_t i = 0; i < h.size(); ++i) h[i] = activate(h[i] + b1[i], act);
    std::vector<T> out(static_cast<size_t>(w2.rows()));
    matvec(w2, std::span<const T>(h.data(), h.size()), std::span<T>(out));
    for (size_t i = 0; i < out.size(); ++i) out[i] += b2[i];
    return out;
}

}  // namespace lglab
