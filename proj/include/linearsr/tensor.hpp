#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"

namespace linearsr {

/// Dense n-dimensional array, row-major. Immutable-by-convention value type:
/// ops return fresh tensors, nothing mutates a shared buffer.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape_, T fill = T(0))
        : shape(std::move(shape_)), data(count_elems(shape), fill) {
        check_extents(shape);
    }

    Tensor(std::vector<std::size_t> shape_, std::vector<T> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        check_extents(shape);
        if (count_elems(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(count_elems(shape)));
    }

    static std::size_t count_elems(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto e : s) n *= e;
        return n;
    }

    static void check_extents(const std::vector<std::size_t>& s) {
        for (auto e : s)
            if (e == 0) throw ShapeError("zero extent");
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t extent(std::size_t axis) const {
        if (axis >= shape.size()) throw ShapeError("axis out of range");
        return shape[axis];
    }

    /// Row-major flat index from a multi-index.
    std::size_t flat_index(const std::vector<std::size_t>& idx) const {
        if (idx.size() != shape.size()) throw ShapeError("index rank mismatch");
        std::size_t f = 0;
        for (std::size_t a = 0; a < shape.size(); ++a) {
            if (idx[a] >= shape[a]) throw ShapeError("index out of bounds");
            f = f * shape[a] + idx[a];
        }
        return f;
    }

    std::vector<std::size_t> multi_index(std::size_t flat) const {
        std::vector<std::size_t> idx(shape.size());
        for (std::size_t a = shape.size(); a-- > 0;) {
            idx[a] = flat % shape[a];
            flat /= shape[a];
        }
        return idx;
    }

    T& at(const std::vector<std::size_t>& idx) { return data[flat_index(idx)]; }
    const T& at(const std::vector<std::size_t>& idx) const { return data[flat_index(idx)]; }

    // 2-D convenience
    T& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& x : data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count_elems(new_shape) != data.size()) throw ShapeError("reshape changes element count");
        return Tensor(std::move(new_shape), data);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

namespace detail {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}
} // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
    if (a.shape[1] != b.shape[0])
        throw ShapeError("matmul inner dims: " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> out({m, n});
    // ikj order, cache-friendly on row-major
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = &a.data[i * k];
        T* orow = &out.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = &b.data[p * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects rank-2");
    Tensor<T> out({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out = a;
    for (T& x : out.data) x = f(x);
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return map(a, [](T x) { return x > T(0) ? x : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return map(a, [](T x) { return x / (T(1) + std::exp(-x)); });
}

/// tanh-approximation GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    return map(a, [](T x) {
        const T c = T(0.7978845608028654); // sqrt(2/pi)
        return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out = a;
    for (T& x : out.data) x *= s;
    return out;
}

template <typename T>
T reduce_sum(const Tensor<T>& a) {
    T s = T(0);
    for (const T& x : a.data) s += x;
    return s;
}

template <typename T>
T reduce_mean(const Tensor<T>& a) {
    return reduce_sum(a) / static_cast<T>(a.size());
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
    if (a.rank() != b.rank()) throw ShapeError("concat rank mismatch");
    if (axis >= a.rank()) throw ShapeError("concat axis out of range");
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.shape[i] != b.shape[i])
            throw ShapeError("concat non-axis extents differ: " + a.shape_str() + " vs " + b.shape_str());

    std::vector<std::size_t> out_shape = a.shape;
    out_shape[axis] += b.shape[axis];
    Tensor<T> out(out_shape);

    // outer = product of dims before axis, inner = product after
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
    const std::size_t a_block = a.shape[axis] * inner;
    const std::size_t b_block = b.shape[axis] * inner;

    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&a.data[o * a_block], a_block, &out.data[o * (a_block + b_block)]);
        std::copy_n(&b.data[o * b_block], b_block, &out.data[o * (a_block + b_block) + a_block]);
    }
    return out;
}

/// Inverse of concat: split along `axis` at offset `first_extent`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split(const Tensor<T>& x, std::size_t axis, std::size_t first_extent) {
    if (axis >= x.rank()) throw ShapeError("split axis out of range");
    if (first_extent == 0 || first_extent >= x.shape[axis]) throw ShapeError("split extent out of range");

    std::vector<std::size_t> sa = x.shape, sb = x.shape;
    sa[axis] = first_extent;
    sb[axis] = x.shape[axis] - first_extent;
    Tensor<T> a(sa), b(sb);

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    const std::size_t a_block = sa[axis] * inner;
    const std::size_t b_block = sb[axis] * inner;

    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&x.data[o * (a_block + b_block)], a_block, &a.data[o * a_block]);
        std::copy_n(&x.data[o * (a_block + b_block) + a_block], b_block, &b.data[o * b_block]);
    }
    return {std::move(a), std::move(b)};
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
    detail::require_same_shape(a, b, "max_rel_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double x = static_cast<double>(a.data[i]);
        const double y = static_cast<double>(b.data[i]);
        m = std::max(m, std::abs(x - y) / (std::abs(y) + floor));
    }
    return m;
}

} // namespace linearsr
