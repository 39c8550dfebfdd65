#pragma once

#include <cstddef>
#include <tuple>

#include "linearsr/errors.hpp"
#include "linearsr/tensor.hpp"

namespace linearsr {

struct AttentionConfig {
    std::size_t num_heads = 1;
    std::size_t head_dim = 16;
    double epsilon = 1e-6; // denominator stabilizer; ReLU features genuinely hit zero

    std::size_t model_dim() const { return num_heads * head_dim; }

    void validate() const {
        if (num_heads == 0 || head_dim == 0) throw ShapeError("attention config: zero dims");
        if (!(epsilon > 0)) throw DomainError("attention config: epsilon must be > 0");
    }
};

/// Fixed-size global summary of the processed tokens:
///   kv_summary[a][b] = sum_j relu(k_j)[a] * v_j[b]
///   k_summary[a]     = sum_j relu(k_j)[a]
template <typename T>
struct AttentionState {
    Tensor<T> kv_summary; // d x d
    Tensor<T> k_summary;  // d
};

namespace detail {

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention expects rank-2 q,k,v");
    if (!q.same_shape(k) || !q.same_shape(v))
        throw ShapeError("attention q,k,v shapes differ: " + q.shape_str() + " " + k.shape_str() +
                         " " + v.shape_str());
    if (q.shape[0] == 0) throw ShapeError("attention needs N >= 1");
}

template <typename T>
void check_finite_inputs(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (!q.all_finite() || !k.all_finite() || !v.all_finite())
        throw NonFiniteError("attention input contains NaN/Inf");
}

// Peak auxiliary element count of the last linear forward, for the
// O(d^2)-memory assertion. Thread-local so parallel callers don't race.
inline thread_local std::size_t g_linear_attn_aux_elems = 0;

} // namespace detail

inline std::size_t last_linear_attention_aux_elems() { return detail::g_linear_attn_aux_elems; }

/// Summation order is ascending token index (bit-reproducible). All
/// accumulation runs in f64 regardless of the storage dtype, so the f32 path
/// stays within rounding of the f64 one.
template <typename T>
AttentionState<T> accumulate_attention_state(const Tensor<T>& k, const Tensor<T>& v) {
    const std::size_t n = k.shape[0], d = k.shape[1];
    std::vector<double> kv_acc(d * d, 0.0), ks_acc(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const T* krow = &k.data[j * d];
        const T* vrow = &v.data[j * d];
        for (std::size_t a = 0; a < d; ++a) {
            const double ka = krow[a] > T(0) ? static_cast<double>(krow[a]) : 0.0;
            if (ka == 0.0) continue;
            ks_acc[a] += ka;
            double* out = &kv_acc[a * d];
            for (std::size_t b = 0; b < d; ++b) out[b] += ka * static_cast<double>(vrow[b]);
        }
    }
    AttentionState<T> st{Tensor<T>({d, d}), Tensor<T>({d})};
    for (std::size_t i = 0; i < d * d; ++i) st.kv_summary.data[i] = static_cast<T>(kv_acc[i]);
    for (std::size_t a = 0; a < d; ++a) st.k_summary.data[a] = static_cast<T>(ks_acc[a]);
    return st;
}

/// Reordered evaluation: summaries first, then one pass over queries.
/// o_i = relu(q_i)·KV / (relu(q_i)·Ksum + eps). Theta(N d^2) work, O(d^2) aux.
template <typename T>
Tensor<T> linear_attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   double epsilon) {
    detail::check_qkv(q, k, v);
    detail::check_finite_inputs(q, k, v);
    if (!(epsilon > 0)) throw DomainError("epsilon must be > 0");

    const std::size_t n = q.shape[0], d = q.shape[1];
    AttentionState<T> st = accumulate_attention_state(k, v);
    detail::g_linear_attn_aux_elems = d * d + d;

    Tensor<T> out({n, d});
    std::vector<double> num(d);
    for (std::size_t i = 0; i < n; ++i) {
        const T* qrow = &q.data[i * d];
        std::fill(num.begin(), num.end(), 0.0);
        double den = epsilon;
        for (std::size_t a = 0; a < d; ++a) {
            const double qa = qrow[a] > T(0) ? static_cast<double>(qrow[a]) : 0.0;
            if (qa == 0.0) continue;
            den += qa * static_cast<double>(st.k_summary.data[a]);
            const T* kv = &st.kv_summary.data[a * d];
            for (std::size_t b = 0; b < d; ++b) num[b] += qa * static_cast<double>(kv[b]);
        }
        T* orow = &out.data[i * d];
        for (std::size_t b = 0; b < d; ++b) orow[b] = static_cast<T>(num[b] / den);
    }
    return out;
}

template <typename T>
Tensor<T> linear_attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const AttentionConfig& cfg) {
    cfg.validate();
    return linear_attention_forward(q, k, v, cfg.epsilon);
}

/// Un-reordered evaluation of the same formula: materializes the N x N
/// similarity S = relu(Q) relu(K)^T, then o_i = (S V)_i / (sum_j S_ij + eps).
/// Theta(N^2 d) work. Correctness oracle and benchmark baseline.
template <typename T>
Tensor<T> naive_attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  double epsilon) {
    detail::check_qkv(q, k, v);
    detail::check_finite_inputs(q, k, v);
    if (!(epsilon > 0)) throw DomainError("epsilon must be > 0");

    const std::size_t n = q.shape[0], d = q.shape[1];
    Tensor<T> qf = relu(q), kf = relu(k);

    // S = relu(Q) relu(K)^T, the N x N similarity matrix (f64 accumulation).
    Tensor<T> s({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        const T* qrow = &qf.data[i * d];
        T* srow = &s.data[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            const T* krow = &kf.data[j * d];
            double acc = 0;
            for (std::size_t b = 0; b < d; ++b)
                acc += static_cast<double>(qrow[b]) * static_cast<double>(krow[b]);
            srow[j] = static_cast<T>(acc);
        }
    }

    Tensor<T> out({n, d});
    std::vector<double> num(d);
    for (std::size_t i = 0; i < n; ++i) {
        const T* srow = &s.data[i * n];
        std::fill(num.begin(), num.end(), 0.0);
        double den = epsilon;
        for (std::size_t j = 0; j < n; ++j) {
            const double sij = static_cast<double>(srow[j]);
            den += sij;
            if (sij == 0.0) continue;
            const T* vrow = &v.data[j * d];
            for (std::size_t b = 0; b < d; ++b) num[b] += sij * static_cast<double>(vrow[b]);
        }
        T* orow = &out.data[i * d];
        for (std::size_t b = 0; b < d; ++b) orow[b] = static_cast<T>(num[b] / den);
    }
    return out;
}

template <typename T>
Tensor<T> naive_attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  const AttentionConfig& cfg) {
    cfg.validate();
    return naive_attention_forward(q, k, v, cfg.epsilon);
}

struct AttentionGrads {
    TensorD dq, dk, dv;
};

/// Exact reverse-mode gradients of linear_attention_forward.
/// ReLU subgradient at 0 is 0. Same O(N d^2) cost as the forward.
inline AttentionGrads linear_attention_vjp(const TensorD& q, const TensorD& k, const TensorD& v,
                                           const TensorD& upstream, double epsilon) {
    detail::check_qkv(q, k, v);
    if (!upstream.same_shape(q)) throw ShapeError("upstream grad shape mismatch");
    if (!(epsilon > 0)) throw DomainError("epsilon must be > 0");

    const std::size_t n = q.shape[0], d = q.shape[1];
    TensorD qf = relu(q), kf = relu(k);
    AttentionState<double> st = accumulate_attention_state(k, v);
    const TensorD& m = st.kv_summary; // d x d
    const TensorD& s = st.k_summary;  // d

    AttentionGrads g{TensorD({n, d}), TensorD({n, d}), TensorD({n, d})};
    TensorD dm({d, d});
    TensorD ds({d});

    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &qf.data[i * d];
        const double* gi = &upstream.data[i * d];

        double den = epsilon;
        std::vector<double> num(d, 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            if (p[a] == 0.0) continue;
            den += p[a] * s.data[a];
            const double* mrow = &m.data[a * d];
            for (std::size_t b = 0; b < d; ++b) num[b] += p[a] * mrow[b];
        }

        // d(num_i) = g_i / den; d(den_i) = -(g_i . num_i) / den^2
        double g_dot_num = 0.0;
        for (std::size_t b = 0; b < d; ++b) g_dot_num += gi[b] * num[b];
        const double dden = -g_dot_num / (den * den);

        double* dq = &g.dq.data[i * d];
        for (std::size_t a = 0; a < d; ++a) {
            if (q.data[i * d + a] <= 0.0) continue; // relu'(q)=0, subgradient 0 at 0
            const double* mrow = &m.data[a * d];
            double acc = dden * s.data[a];
            for (std::size_t b = 0; b < d; ++b) acc += gi[b] * mrow[b] / den;
            dq[a] = acc;
        }

        for (std::size_t a = 0; a < d; ++a) {
            if (p[a] == 0.0) continue;
            ds.data[a] += dden * p[a];
            double* dmrow = &dm.data[a * d];
            for (std::size_t b = 0; b < d; ++b) dmrow[b] += p[a] * gi[b] / den;
        }
    }

    // m[a][b] = sum_j kf[j][a] v[j][b]; s[a] = sum_j kf[j][a]
    for (std::size_t j = 0; j < n; ++j) {
        const double* kfj = &kf.data[j * d];
        const double* vj = &v.data[j * d];
        double* dkj = &g.dk.data[j * d];
        double* dvj = &g.dv.data[j * d];
        for (std::size_t a = 0; a < d; ++a) {
            const double* dmrow = &dm.data[a * d];
            if (kfj[a] > 0.0) {
                for (std::size_t b = 0; b < d; ++b) dvj[b] += kfj[a] * dmrow[b];
            }
            if (k.data[j * d + a] > 0.0) {
                double acc = ds.data[a];
                for (std::size_t b = 0; b < d; ++b) acc += dmrow[b] * vj[b];
                dkj[a] = acc;
            }
        }
    }
    return g;
}

inline AttentionGrads linear_attention_vjp(const TensorD& q, const TensorD& k, const TensorD& v,
                                           const TensorD& upstream, const AttentionConfig& cfg) {
    cfg.validate();
    return linear_attention_vjp(q, k, v, upstream, cfg.epsilon);
}

/// Projection weights around the per-head kernel. Head layout is [N, h, d]:
/// token row x = [head0 | head1 | ...] after the input projections.
struct MultiHeadParams {
    TensorD wq, wk, wv; // model_dim x model_dim
    TensorD wo;         // model_dim x model_dim
};

namespace detail {
inline TensorD head_slice(const TensorD& x, std::size_t h, std::size_t d) {
    const std::size_t n = x.shape[0];
    TensorD out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(&x.data[i * x.shape[1] + h * d], d, &out.data[i * d]);
    return out;
}

inline void head_unslice(TensorD& dst, const TensorD& part, std::size_t h, std::size_t d) {
    const std::size_t n = dst.shape[0];
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(&part.data[i * d], d, &dst.data[i * dst.shape[1] + h * d]);
}
} // namespace detail

/// Per-head linear attention over x: [N, h*d], heads re-merged, output projection applied.
inline TensorD multi_head_wrap(const TensorD& x, const MultiHeadParams& p, const AttentionConfig& cfg) {
    cfg.validate();
    if (x.rank() != 2) throw ShapeError("multi_head_wrap expects rank-2 tokens");
    if (x.shape[1] != cfg.model_dim())
        throw ShapeError("token dim " + std::to_string(x.shape[1]) + " != heads*head_dim " +
                         std::to_string(cfg.model_dim()));

    TensorD q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
    TensorD merged({x.shape[0], cfg.model_dim()});
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        TensorD oh = linear_attention_forward(detail::head_slice(q, h, cfg.head_dim),
                                              detail::head_slice(k, h, cfg.head_dim),
                                              detail::head_slice(v, h, cfg.head_dim), cfg.epsilon);
        detail::head_unslice(merged, oh, h, cfg.head_dim);
    }
    return matmul(merged, p.wo);
}

} // namespace linearsr
