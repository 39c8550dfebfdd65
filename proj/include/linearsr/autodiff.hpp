#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "linearsr/attention.hpp"
#include "linearsr/tensor.hpp"

namespace linearsr {

/// Reverse-mode tape over TensorD. Nodes only reference earlier nodes, so
/// walking the tape backwards is a valid topological order. One tape per
/// forward pass; build, call backward(root), read grads, discard.
class Tape {
public:
    using Var = std::size_t;

    Var leaf(TensorD value) {
        nodes_.push_back({std::move(value), {}, nullptr});
        return nodes_.size() - 1;
    }

    const TensorD& value(Var v) const { return nodes_[v].value; }
    const TensorD& grad(Var v) const { return nodes_[v].grad; }

    Var matmul(Var a, Var b) {
        TensorD out = linearsr::matmul(value(a), value(b));
        return record(std::move(out), [this, a, b](const TensorD& g) {
            accumulate(a, linearsr::matmul(g, linearsr::transpose(value(b))));
            accumulate(b, linearsr::matmul(linearsr::transpose(value(a)), g));
        });
    }

    Var add(Var a, Var b) {
        return record(linearsr::add(value(a), value(b)), [this, a, b](const TensorD& g) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        return record(linearsr::sub(value(a), value(b)), [this, a, b](const TensorD& g) {
            accumulate(a, g);
            accumulate(b, linearsr::scale(g, -1.0));
        });
    }

    Var mul(Var a, Var b) {
        return record(linearsr::mul(value(a), value(b)), [this, a, b](const TensorD& g) {
            accumulate(a, linearsr::mul(g, value(b)));
            accumulate(b, linearsr::mul(g, value(a)));
        });
    }

    Var scale(Var a, double s) {
        return record(linearsr::scale(value(a), s), [this, a, s](const TensorD& g) {
            accumulate(a, linearsr::scale(g, s));
        });
    }

    Var relu(Var a) {
        return record(linearsr::relu(value(a)), [this, a](const TensorD& g) {
            TensorD dx = g;
            const TensorD& x = value(a);
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                if (x.data[i] <= 0.0) dx.data[i] = 0.0;
            accumulate(a, std::move(dx));
        });
    }

    Var silu(Var a) {
        return record(linearsr::silu(value(a)), [this, a](const TensorD& g) {
            TensorD dx = g;
            const TensorD& x = value(a);
            for (std::size_t i = 0; i < dx.data.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
                dx.data[i] *= s * (1.0 + x.data[i] * (1.0 - s));
            }
            accumulate(a, std::move(dx));
        });
    }

    Var gelu(Var a) {
        return record(linearsr::gelu(value(a)), [this, a](const TensorD& g) {
            TensorD dx = g;
            const TensorD& x = value(a);
            const double c = 0.7978845608028654;
            for (std::size_t i = 0; i < dx.data.size(); ++i) {
                const double xi = x.data[i];
                const double u = c * (xi + 0.044715 * xi * xi * xi);
                const double th = std::tanh(u);
                const double du = c * (1.0 + 3.0 * 0.044715 * xi * xi);
                dx.data[i] *= 0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * du;
            }
            accumulate(a, std::move(dx));
        });
    }

    Var reshape(Var a, std::vector<std::size_t> shape) {
        TensorD out = value(a).reshaped(shape);
        return record(std::move(out), [this, a](const TensorD& g) {
            accumulate(a, g.reshaped(value(a).shape));
        });
    }

    /// Add a length-n vector to every row of an [m, n] matrix.
    Var add_row_vector(Var a, Var row) {
        const TensorD& x = value(a);
        const TensorD& r = value(row);
        if (x.rank() != 2 || r.size() != x.shape[1]) throw ShapeError("add_row_vector shapes");
        TensorD out = x;
        for (std::size_t i = 0; i < x.shape[0]; ++i)
            for (std::size_t j = 0; j < x.shape[1]; ++j) out.data[i * x.shape[1] + j] += r.data[j];
        return record(std::move(out), [this, a, row](const TensorD& g) {
            accumulate(a, g);
            TensorD dr(value(row).shape);
            const std::size_t n = g.shape[1];
            for (std::size_t i = 0; i < g.shape[0]; ++i)
                for (std::size_t j = 0; j < n; ++j) dr.data[j] += g.data[i * n + j];
            accumulate(row, std::move(dr));
        });
    }

    Var concat(Var a, Var b, std::size_t axis) {
        return record(linearsr::concat(value(a), value(b), axis), [this, a, b, axis](const TensorD& g) {
            auto [ga, gb] = linearsr::split(g, axis, value(a).shape[axis]);
            accumulate(a, std::move(ga));
            accumulate(b, std::move(gb));
        });
    }

    /// Mean of squared entries of (a - b); scalar output as a rank-0 tensor.
    Var mse(Var a, Var b) {
        const TensorD& x = value(a);
        const TensorD& y = value(b);
        detail::require_same_shape(x, y, "mse");
        double acc = 0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = x.data[i] - y.data[i];
            acc += d * d;
        }
        TensorD out({}, std::vector<double>{acc / static_cast<double>(x.size())});
        return record(std::move(out), [this, a, b](const TensorD& g) {
            const TensorD& x = value(a);
            const TensorD& y = value(b);
            const double s = 2.0 * g.data[0] / static_cast<double>(x.size());
            TensorD dx = x;
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                dx.data[i] = s * (x.data[i] - y.data[i]);
            accumulate(b, linearsr::scale(dx, -1.0));
            accumulate(a, std::move(dx));
        });
    }

    /// Sum of squared entries of (a - b); used for per-sample CFM terms.
    Var sse(Var a, Var b) {
        Var m = mse(a, b);
        return scale(m, static_cast<double>(value(a).size()));
    }

    /// LayerNorm over the last axis of an [m, n] matrix with learned gamma/beta (length n).
    Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
        const TensorD& x = value(a);
        if (x.rank() != 2) throw ShapeError("layer_norm expects rank-2");
        const std::size_t m = x.shape[0], n = x.shape[1];
        if (value(gamma).size() != n || value(beta).size() != n)
            throw ShapeError("layer_norm gamma/beta length");

        TensorD xhat({m, n});
        TensorD inv_std({m});
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = &x.data[i * n];
            double mean = 0;
            for (std::size_t j = 0; j < n; ++j) mean += row[j];
            mean /= static_cast<double>(n);
            double var = 0;
            for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= static_cast<double>(n);
            inv_std.data[i] = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < n; ++j)
                xhat.data[i * n + j] = (row[j] - mean) * inv_std.data[i];
        }
        TensorD out({m, n});
        const TensorD& gm = value(gamma);
        const TensorD& bt = value(beta);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.data[i * n + j] = xhat.data[i * n + j] * gm.data[j] + bt.data[j];

        return record(std::move(out),
                      [this, a, gamma, beta, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](const TensorD& g) {
            const std::size_t m = g.shape[0], n = g.shape[1];
            const TensorD& gm = value(gamma);
            TensorD dgamma({n}), dbeta({n}), dx({m, n});
            for (std::size_t i = 0; i < m; ++i) {
                double sum_gh = 0, sum_gh_xhat = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gh = g.data[i * n + j] * gm.data[j];
                    sum_gh += gh;
                    sum_gh_xhat += gh * xhat.data[i * n + j];
                    dgamma.data[j] += g.data[i * n + j] * xhat.data[i * n + j];
                    dbeta.data[j] += g.data[i * n + j];
                }
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double gh = g.data[i * n + j] * gm.data[j];
                    dx.data[i * n + j] = inv_std.data[i] *
                        (gh - inv_n * sum_gh - xhat.data[i * n + j] * inv_n * sum_gh_xhat);
                }
            }
            accumulate(gamma, std::move(dgamma));
            accumulate(beta, std::move(dbeta));
            accumulate(a, std::move(dx));
        });
    }

    /// Single-head ReLU linear attention as one node; the analytic VJP from
    /// attention.hpp supplies the backward rule.
    Var linear_attention(Var q, Var k, Var v, double epsilon) {
        TensorD out = linear_attention_forward(value(q), value(k), value(v), epsilon);
        return record(std::move(out), [this, q, k, v, epsilon](const TensorD& g) {
            AttentionGrads ag = linear_attention_vjp(value(q), value(k), value(v), g, epsilon);
            accumulate(q, std::move(ag.dq));
            accumulate(k, std::move(ag.dk));
            accumulate(v, std::move(ag.dv));
        });
    }

    /// Depthwise 3x3 conv over [C, H, W] with zero same-padding.
    /// Kernel is [C, 3, 3]: channel c of the output sees only channel c of the input.
    Var depthwise_conv3x3(Var x, Var kernel) {
        TensorD out = depthwise_forward(value(x), value(kernel));
        return record(std::move(out), [this, x, kernel](const TensorD& g) {
            auto [dx, dk] = depthwise_backward(value(x), value(kernel), g);
            accumulate(x, std::move(dx));
            accumulate(kernel, std::move(dk));
        });
    }

    /// Strided conv over [Cin, H, W] -> [Cout, H/s, W/s]; kernel [Cout, Cin, kh, kw],
    /// zero padding (kh-1)/2, stride must divide the padded extent evenly.
    Var conv2d(Var x, Var kernel, Var bias, std::size_t stride) {
        TensorD out = conv2d_forward(value(x), value(kernel), value(bias), stride);
        return record(std::move(out), [this, x, kernel, bias, stride](const TensorD& g) {
            auto [dx, dk, db] = conv2d_backward(value(x), value(kernel), g, stride);
            accumulate(x, std::move(dx));
            accumulate(kernel, std::move(dk));
            accumulate(bias, std::move(db));
        });
    }

    /// Columns [lo, hi) of an [m, n] matrix.
    Var slice_cols(Var a, std::size_t lo, std::size_t hi) {
        const TensorD& x = value(a);
        if (x.rank() != 2 || hi > x.shape[1] || lo >= hi) throw ShapeError("slice_cols range");
        const std::size_t m = x.shape[0], n = x.shape[1], w = hi - lo;
        TensorD out({m, w});
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(&x.data[i * n + lo], w, &out.data[i * w]);
        return record(std::move(out), [this, a, lo, w](const TensorD& g) {
            TensorD dx(value(a).shape);
            const std::size_t n = dx.shape[1];
            for (std::size_t i = 0; i < g.shape[0]; ++i)
                std::copy_n(&g.data[i * w], w, &dx.data[i * n + lo]);
            accumulate(a, std::move(dx));
        });
    }

    /// [N, C] tokens (row-major pixel order) -> [C, H, W] grid, N = H*W.
    Var tokens_to_grid(Var a, std::size_t h, std::size_t w) {
        const TensorD& x = value(a);
        if (x.rank() != 2 || x.shape[0] != h * w) throw ShapeError("tokens_to_grid: N != H*W");
        const std::size_t c = x.shape[1];
        TensorD out({c, h, w});
        for (std::size_t p = 0; p < h * w; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) out.data[ch * h * w + p] = x.data[p * c + ch];
        return record(std::move(out), [this, a, h, w](const TensorD& g) {
            const std::size_t c = g.shape[0];
            TensorD dx({h * w, c});
            for (std::size_t p = 0; p < h * w; ++p)
                for (std::size_t ch = 0; ch < c; ++ch) dx.data[p * c + ch] = g.data[ch * h * w + p];
            accumulate(a, std::move(dx));
        });
    }

    /// [C, H, W] grid -> [N, C] tokens, inverse of tokens_to_grid.
    Var grid_to_tokens(Var a) {
        const TensorD& x = value(a);
        if (x.rank() != 3) throw ShapeError("grid_to_tokens expects [C,H,W]");
        const std::size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
        TensorD out({hw, c});
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) out.data[p * c + ch] = x.data[ch * hw + p];
        return record(std::move(out), [this, a](const TensorD& g) {
            const TensorD& x = value(a);
            const std::size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
            TensorD dx(x.shape);
            for (std::size_t p = 0; p < hw; ++p)
                for (std::size_t ch = 0; ch < c; ++ch) dx.data[ch * hw + p] = g.data[p * c + ch];
            accumulate(a, std::move(dx));
        });
    }

    /// Seeds d(root)/d(root) = 1 (rank-0 root) or a caller-supplied seed, then
    /// sweeps the tape in reverse.
    void backward(Var root, TensorD seed = TensorD({}, std::vector<double>{1.0})) {
        if (!nodes_[root].value.same_shape(seed)) throw ShapeError("backward seed shape mismatch");
        for (auto& n : nodes_)
            if (n.grad.data.empty()) n.grad = TensorD(n.value.shape);
        nodes_[root].grad = std::move(seed);
        for (std::size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward(nodes_[i].grad);
    }

    // Plain-tensor helpers, also used outside the tape.
    static TensorD depthwise_forward(const TensorD& x, const TensorD& kernel) {
        if (x.rank() != 3) throw ShapeError("depthwise_conv3x3 expects [C,H,W]");
        if (kernel.rank() != 3 || kernel.shape[1] != 3 || kernel.shape[2] != 3 ||
            kernel.shape[0] != x.shape[0])
            throw ShapeError("depthwise kernel must be [C,3,3] matching input channels");
        const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        TensorD out({c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    double acc = 0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const long ii = static_cast<long>(i) + di;
                            const long jj = static_cast<long>(j) + dj;
                            if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) ||
                                jj >= static_cast<long>(w))
                                continue;
                            acc += kernel.data[(ch * 3 + (di + 1)) * 3 + (dj + 1)] *
                                   x.data[(ch * h + ii) * w + jj];
                        }
                    out.data[(ch * h + i) * w + j] = acc;
                }
        return out;
    }

    static std::pair<TensorD, TensorD> depthwise_backward(const TensorD& x, const TensorD& kernel,
                                                          const TensorD& g) {
        const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        TensorD dx(x.shape), dk(kernel.shape);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double go = g.data[(ch * h + i) * w + j];
                    if (go == 0.0) continue;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const long ii = static_cast<long>(i) + di;
                            const long jj = static_cast<long>(j) + dj;
                            if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) ||
                                jj >= static_cast<long>(w))
                                continue;
                            dx.data[(ch * h + ii) * w + jj] +=
                                go * kernel.data[(ch * 3 + (di + 1)) * 3 + (dj + 1)];
                            dk.data[(ch * 3 + (di + 1)) * 3 + (dj + 1)] +=
                                go * x.data[(ch * h + ii) * w + jj];
                        }
                }
        return {std::move(dx), std::move(dk)};
    }

    static TensorD conv2d_forward(const TensorD& x, const TensorD& kernel, const TensorD& bias,
                                  std::size_t stride) {
        if (x.rank() != 3 || kernel.rank() != 4) throw ShapeError("conv2d expects [Cin,H,W], [Cout,Cin,kh,kw]");
        if (kernel.shape[1] != x.shape[0]) throw ShapeError("conv2d channel mismatch");
        if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
        const std::size_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
        const std::size_t cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
        if (bias.size() != cout) throw ShapeError("conv2d bias length");
        if (h % stride != 0 || w % stride != 0)
            throw ShapeError("conv2d stride must divide spatial extents");
        const std::size_t oh = h / stride, ow = w / stride;
        const long ph = static_cast<long>(kh - 1) / 2, pw = static_cast<long>(kw - 1) / 2;

        TensorD out({cout, oh, ow});
        for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = bias.data[oc];
                    for (std::size_t ic = 0; ic < cin; ++ic)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const long ii = static_cast<long>(i * stride + ki) - ph;
                                const long jj = static_cast<long>(j * stride + kj) - pw;
                                if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) ||
                                    jj >= static_cast<long>(w))
                                    continue;
                                acc += kernel.data[((oc * cin + ic) * kh + ki) * kw + kj] *
                                       x.data[(ic * h + ii) * w + jj];
                            }
                    out.data[(oc * oh + i) * ow + j] = acc;
                }
        return out;
    }

    static std::tuple<TensorD, TensorD, TensorD> conv2d_backward(const TensorD& x,
                                                                 const TensorD& kernel,
                                                                 const TensorD& g,
                                                                 std::size_t stride) {
        const std::size_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
        const std::size_t cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
        const std::size_t oh = g.shape[1], ow = g.shape[2];
        const long ph = static_cast<long>(kh - 1) / 2, pw = static_cast<long>(kw - 1) / 2;
        TensorD dx(x.shape), dk(kernel.shape), db({cout});
        for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const double go = g.data[(oc * oh + i) * ow + j];
                    if (go == 0.0) continue;
                    db.data[oc] += go;
                    for (std::size_t ic = 0; ic < cin; ++ic)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const long ii = static_cast<long>(i * stride + ki) - ph;
                                const long jj = static_cast<long>(j * stride + kj) - pw;
                                if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) ||
                                    jj >= static_cast<long>(w))
                                    continue;
                                dx.data[(ic * h + ii) * w + jj] +=
                                    go * kernel.data[((oc * cin + ic) * kh + ki) * kw + kj];
                                dk.data[((oc * cin + ic) * kh + ki) * kw + kj] +=
                                    go * x.data[(ic * h + ii) * w + jj];
                            }
                }
        return {std::move(dx), std::move(dk), std::move(db)};
    }

private:
    struct Node {
        TensorD value;
        TensorD grad;
        std::function<void(const TensorD&)> backward;
    };

    Var record(TensorD value, std::function<void(const TensorD&)> bwd) {
        nodes_.push_back({std::move(value), {}, std::move(bwd)});
        return nodes_.size() - 1;
    }

    void accumulate(Var v, TensorD g) {
        TensorD& dst = nodes_[v].grad;
        if (dst.data.empty()) {
            dst = std::move(g);
            return;
        }
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
    }

    std::vector<Node> nodes_;
};

} // namespace linearsr
