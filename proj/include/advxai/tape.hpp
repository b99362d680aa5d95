#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape owns every value produced during one forward pass. Ops append a node
// holding the output value, its parents and a backward closure; nodes are
// appended in execution order, so the tape is topologically sorted by
// construction. backward() walks it once in reverse and accumulates gradients
// additively into every node that requires them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advxai/tensor.hpp"

namespace advxai {

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
};

template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    Var leaf(Tensor<T> value, bool requires_grad = false) {
        ensure_open();
        nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
        return Var{nodes_.size() - 1};
    }

    /// Appends an op output. It requires a gradient iff any parent does; the
    /// closure is dropped otherwise.
    Var record(Tensor<T> value, std::span<const Var> parents, BackwardFn fn) {
        ensure_open();
        bool needs = false;
        for (const Var p : parents) needs = needs || node(p).requires_grad;
        nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
        return Var{nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    bool has_grad(Var v) const { return !node(v).grad.empty(); }

    const Tensor<T>& grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.empty()) {
            throw std::logic_error("tape: node " + std::to_string(v.id) + " has no gradient");
        }
        return n.grad;
    }

    /// Gradient accumulator of a node, zero-initialized on first access.
    Tensor<T>& grad_buffer(Var v) {
        Node& n = node(v);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    void backward(Var loss) {
        if (consumed_) throw std::logic_error("tape: backward called twice on the same tape");
        const Node& l = node(loss);
        if (l.value.size() != 1) {
            throw std::invalid_argument("tape: backward needs a scalar loss, got shape " +
                                        shape_string(l.value.shape()));
        }
        consumed_ = true;
        if (!l.requires_grad) return;
        grad_buffer(loss)[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
        }
    }

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Node& node(Var v) {
        if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable " + std::to_string(v.id));
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable " + std::to_string(v.id));
        return nodes_[v.id];
    }
    void ensure_open() const {
        if (consumed_) throw std::logic_error("tape: cannot record on a consumed tape");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Patch matrix of one image: cols[(c*kh + i)*kw + j][oy*ow + ox].
template <typename T>
void im2col(const T* img, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
    const std::size_t p_count = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                T* row = cols + ((c * kh + i) * kw + j) * p_count;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    T* out = row + oy * ow;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(out, out + ow, T{0});
                        continue;
                    }
                    const T* src = img + (c * h + static_cast<std::size_t>(y)) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        out[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[x];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* img) {
    const std::size_t p_count = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                const T* row = cols + ((c * kh + i) * kw + j) * p_count;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = img + (c * h + static_cast<std::size_t>(y)) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        if (x >= 0 && x < static_cast<std::ptrdiff_t>(w)) dst[x] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
/// input [N,C,H,W], kernel [F,C,kH,kW], bias [F] -> [N,F,H',W'].
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
    const Tensor<T>& x = tape.value(input);
    const Tensor<T>& k = tape.value(kernel);
    const Tensor<T>& b = tape.value(bias);
    detail::require(x.rank() == 4, "conv2d: input must be rank 4 [N,C,H,W], got " + shape_string(x.shape()));
    detail::require(k.rank() == 4, "conv2d: kernel must be rank 4 [F,C,kH,kW], got " + shape_string(k.shape()));
    detail::require(stride >= 1, "conv2d: stride must be positive");
    detail::require(k.dim(1) == x.dim(1), "conv2d: channel dimension mismatch, input C=" + std::to_string(x.dim(1)) +
                                              " kernel C=" + std::to_string(k.dim(1)));
    detail::require(k.dim(2) <= x.dim(2) + 2 * padding, "conv2d: kernel height " + std::to_string(k.dim(2)) +
                                                            " exceeds padded input height " +
                                                            std::to_string(x.dim(2) + 2 * padding));
    detail::require(k.dim(3) <= x.dim(3) + 2 * padding, "conv2d: kernel width " + std::to_string(k.dim(3)) +
                                                            " exceeds padded input width " +
                                                            std::to_string(x.dim(3) + 2 * padding));
    detail::require(b.rank() == 1 && b.dim(0) == k.dim(0),
                    "conv2d: bias must have shape [F=" + std::to_string(k.dim(0)) + "], got " + shape_string(b.shape()));

    const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t filters = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = detail::conv_extent(h, kh, stride, padding);
    const std::size_t ow = detail::conv_extent(w, kw, stride, padding);
    const std::size_t p_count = oh * ow, patch = c_in * kh * kw;

    Tensor<T> out({n_batch, filters, oh, ow});
    std::vector<T> cols(patch * p_count);
    for (std::size_t n = 0; n < n_batch; ++n) {
        detail::im2col(x.data().data() + n * c_in * h * w, c_in, h, w, kh, kw, stride, padding, oh, ow, cols.data());
        T* o = out.data().data() + n * filters * p_count;
        for (std::size_t f = 0; f < filters; ++f) {
            T* orow = o + f * p_count;
            std::fill(orow, orow + p_count, b[f]);
            const T* krow = k.data().data() + f * patch;
            for (std::size_t q = 0; q < patch; ++q) {
                const T a = krow[q];
                const T* crow = cols.data() + q * p_count;
                for (std::size_t p = 0; p < p_count; ++p) orow[p] += a * crow[p];
            }
        }
    }

    const Var parents[] = {input, kernel, bias};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(input);
        const Tensor<T>& kv = t.value(kernel);
        const bool need_x = t.requires_grad(input), need_k = t.requires_grad(kernel), need_b = t.requires_grad(bias);
        T* dx = need_x ? t.grad_buffer(input).data().data() : nullptr;
        T* dk = need_k ? t.grad_buffer(kernel).data().data() : nullptr;
        T* db = need_b ? t.grad_buffer(bias).data().data() : nullptr;
        std::vector<T> cols_t(need_k ? patch * p_count : 0);
        std::vector<T> cols_n(need_k ? patch * p_count : 0);
        std::vector<T> dcols(need_x ? patch * p_count : 0);
        for (std::size_t n = 0; n < n_batch; ++n) {
            const T* gn = g.data().data() + n * filters * p_count;
            if (need_b) {
                for (std::size_t f = 0; f < filters; ++f) {
                    T s{0};
                    for (std::size_t p = 0; p < p_count; ++p) s += gn[f * p_count + p];
                    db[f] += s;
                }
            }
            if (need_k) {
                detail::im2col(xv.data().data() + n * c_in * h * w, c_in, h, w, kh, kw, stride, padding, oh, ow,
                               cols_n.data());
                for (std::size_t q = 0; q < patch; ++q)
                    for (std::size_t p = 0; p < p_count; ++p) cols_t[p * patch + q] = cols_n[q * p_count + p];
                for (std::size_t f = 0; f < filters; ++f) {
                    T* dkrow = dk + f * patch;
                    for (std::size_t p = 0; p < p_count; ++p) {
                        const T a = gn[f * p_count + p];
                        if (a == T{0}) continue;
                        const T* crow = cols_t.data() + p * patch;
                        for (std::size_t q = 0; q < patch; ++q) dkrow[q] += a * crow[q];
                    }
                }
            }
            if (need_x) {
                std::fill(dcols.begin(), dcols.end(), T{0});
                for (std::size_t f = 0; f < filters; ++f) {
                    const T* krow = kv.data().data() + f * patch;
                    const T* grow = gn + f * p_count;
                    for (std::size_t q = 0; q < patch; ++q) {
                        const T a = krow[q];
                        T* drow = dcols.data() + q * p_count;
                        for (std::size_t p = 0; p < p_count; ++p) drow[p] += a * grow[p];
                    }
                }
                detail::col2im_add(dcols.data(), c_in, h, w, kh, kw, stride, padding, oh, ow, dx + n * c_in * h * w);
            }
        }
    });
}

/// Elementwise max(0, v). The gradient at v == 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(input);
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > T{0}) dx[i] += g[i];
    });
}

/// Per-window maximum over [N,C,H,W]. Ties route the gradient to the first
/// maximum in row-major window order.
template <typename T>
Var max_pool2d(Tape<T>& tape, Var input, std::size_t window, std::size_t stride) {
    const Tensor<T>& x = tape.value(input);
    detail::require(x.rank() == 4, "max_pool2d: input must be rank 4 [N,C,H,W], got " + shape_string(x.shape()));
    detail::require(window >= 1 && stride >= 1, "max_pool2d: window and stride must be positive");
    detail::require(window <= x.dim(2), "max_pool2d: window " + std::to_string(window) + " exceeds height " +
                                            std::to_string(x.dim(2)));
    detail::require(window <= x.dim(3), "max_pool2d: window " + std::to_string(window) + " exceeds width " +
                                            std::to_string(x.dim(3)));
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = x.data().data() + pl * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (oy * stride) * w + ox * stride;
                for (std::size_t i = 0; i < window; ++i) {
                    for (std::size_t j = 0; j < window; ++j) {
                        const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                const std::size_t o = (pl * oh + oy) * ow + ox;
                out[o] = src[best];
                (*argmax)[o] = pl * h * w + best;
            }
        }
    }
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
    });
}

/// Spatial mean per channel: [N,C,H,W] -> [N,C].
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    detail::require(x.rank() == 4, "global_avg_pool: input must be rank 4 [N,C,H,W], got " + shape_string(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
    Tensor<T> out({x.dim(0), x.dim(1)});
    for (std::size_t pl = 0; pl < planes; ++pl) {
        T s{0};
        for (std::size_t i = 0; i < area; ++i) s += x[pl * area + i];
        out[pl] = s / static_cast<T>(area);
    }
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T share = g[pl] / static_cast<T>(area);
            for (std::size_t i = 0; i < area; ++i) dx[pl * area + i] += share;
        }
    });
}

/// [N, ...] -> [N, prod(...)].
template <typename T>
Var flatten(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    detail::require(x.rank() >= 1, "flatten: input must have a batch dimension");
    const std::size_t n = x.dim(0);
    Tensor<T> out = x.reshaped({n, x.size() / n});
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

/// Affine map: input [N,D] . weights [D,K] + bias [K].
template <typename T>
Var dense(Tape<T>& tape, Var input, Var weights, Var bias) {
    const Tensor<T>& x = tape.value(input);
    const Tensor<T>& wt = tape.value(weights);
    const Tensor<T>& b = tape.value(bias);
    detail::require(x.rank() == 2, "dense: input must be rank 2 [N,D], got " + shape_string(x.shape()));
    detail::require(wt.rank() == 2, "dense: weights must be rank 2 [D,K], got " + shape_string(wt.shape()));
    detail::require(x.dim(1) == wt.dim(0), "dense: inner dimension mismatch, input D=" + std::to_string(x.dim(1)) +
                                               " weights D=" + std::to_string(wt.dim(0)));
    detail::require(b.rank() == 1 && b.dim(0) == wt.dim(1),
                    "dense: bias must have shape [K=" + std::to_string(wt.dim(1)) + "], got " + shape_string(b.shape()));
    const std::size_t rows = x.dim(0), d = x.dim(1), k = wt.dim(1);
    Tensor<T> out({rows, k});
    for (std::size_t n = 0; n < rows; ++n) {
        T* o = out.data().data() + n * k;
        std::copy(b.data().begin(), b.data().end(), o);
        for (std::size_t i = 0; i < d; ++i) {
            const T a = x[n * d + i];
            if (a == T{0}) continue;
            const T* wrow = wt.data().data() + i * k;
            for (std::size_t j = 0; j < k; ++j) o[j] += a * wrow[j];
        }
    }
    const Var parents[] = {input, weights, bias};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(input);
        const Tensor<T>& wv = t.value(weights);
        if (t.requires_grad(bias)) {
            Tensor<T>& db = t.grad_buffer(bias);
            for (std::size_t n = 0; n < rows; ++n)
                for (std::size_t j = 0; j < k; ++j) db[j] += g[n * k + j];
        }
        if (t.requires_grad(weights)) {
            Tensor<T>& dw = t.grad_buffer(weights);
            for (std::size_t n = 0; n < rows; ++n) {
                const T* grow = g.data().data() + n * k;
                for (std::size_t i = 0; i < d; ++i) {
                    const T a = xv[n * d + i];
                    if (a == T{0}) continue;
                    T* dwrow = dw.data().data() + i * k;
                    for (std::size_t j = 0; j < k; ++j) dwrow[j] += a * grow[j];
                }
            }
        }
        if (t.requires_grad(input)) {
            Tensor<T>& dx = t.grad_buffer(input);
            for (std::size_t n = 0; n < rows; ++n) {
                const T* grow = g.data().data() + n * k;
                for (std::size_t i = 0; i < d; ++i) {
                    const T* wrow = wv.data().data() + i * k;
                    T s{0};
                    for (std::size_t j = 0; j < k; ++j) s += grow[j] * wrow[j];
                    dx[n * d + i] += s;
                }
            }
        }
    });
}

/// Numerically stable row-wise softmax of a [N,K] matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t n = 0; n < rows; ++n) {
        const T* z = logits.data().data() + n * k;
        const T m = *std::max_element(z, z + k);
        T s{0};
        for (std::size_t j = 0; j < k; ++j) s += (p[n * k + j] = std::exp(z[j] - m));
        for (std::size_t j = 0; j < k; ++j) p[n * k + j] /= s;
    }
    return p;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
    const Tensor<T>& z = tape.value(logits);
    detail::require(z.rank() == 2, "softmax_cross_entropy: logits must be rank 2 [N,K], got " + shape_string(z.shape()));
    const std::size_t rows = z.dim(0), k = z.dim(1);
    detail::require(labels.size() == rows, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                               " labels for batch of " + std::to_string(rows));
    std::vector<int> lab(labels.begin(), labels.end());
    for (std::size_t n = 0; n < rows; ++n) {
        detail::require(lab[n] >= 0 && static_cast<std::size_t>(lab[n]) < k,
                        "softmax_cross_entropy: label " + std::to_string(lab[n]) + " at row " + std::to_string(n) +
                            " outside [0," + std::to_string(k) + ")");
    }
    T loss{0};
    for (std::size_t n = 0; n < rows; ++n) {
        const T* zr = z.data().data() + n * k;
        const T m = *std::max_element(zr, zr + k);
        T s{0};
        for (std::size_t j = 0; j < k; ++j) s += std::exp(zr[j] - m);
        loss += std::log(s) + m - zr[lab[n]];
    }
    loss /= static_cast<T>(rows);
    const Var parents[] = {logits};
    return tape.record(Tensor<T>({1}, std::vector<T>{loss}), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> p = softmax_rows(t.value(logits));
        Tensor<T>& dz = t.grad_buffer(logits);
        const T scale = g[0] / static_cast<T>(rows);
        for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t j = 0; j < k; ++j) {
                const T onehot = static_cast<std::size_t>(lab[n]) == j ? T{1} : T{0};
                dz[n * k + j] += (p[n * k + j] - onehot) * scale;
            }
        }
    });
}

/// Sum over rows of logits[n, classes[n]]: a scalar whose gradient is the
/// per-row class score gradient.
template <typename T>
Var pick(Tape<T>& tape, Var logits, std::span<const int> classes) {
    const Tensor<T>& z = tape.value(logits);
    detail::require(z.rank() == 2, "pick: logits must be rank 2 [N,K], got " + shape_string(z.shape()));
    const std::size_t rows = z.dim(0), k = z.dim(1);
    detail::require(classes.size() == rows, "pick: one class per row required");
    std::vector<int> cls(classes.begin(), classes.end());
    T s{0};
    for (std::size_t n = 0; n < rows; ++n) {
        detail::require(cls[n] >= 0 && static_cast<std::size_t>(cls[n]) < k,
                        "pick: class " + std::to_string(cls[n]) + " outside [0," + std::to_string(k) + ")");
        s += z[n * k + static_cast<std::size_t>(cls[n])];
    }
    const Var parents[] = {logits};
    return tape.record(Tensor<T>({1}, std::vector<T>{s}), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dz = t.grad_buffer(logits);
        for (std::size_t n = 0; n < rows; ++n) dz[n * k + static_cast<std::size_t>(cls[n])] += g[0];
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    T s{0};
    for (const T v : x.data()) s += v;
    const Var parents[] = {input};
    return tape.record(Tensor<T>({1}, std::vector<T>{s}), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& x = tape.value(a);
    const Tensor<T>& y = tape.value(b);
    detail::require(x.shape() == y.shape(), "add: shape mismatch " + shape_string(x.shape()) + " vs " +
                                                shape_string(y.shape()));
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    const Var parents[] = {a, b};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        for (const Var v : {a, b}) {
            if (!t.requires_grad(v)) continue;
            Tensor<T>& d = t.grad_buffer(v);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

/// Elementwise product.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& x = tape.value(a);
    const Tensor<T>& y = tape.value(b);
    detail::require(x.shape() == y.shape(), "mul: shape mismatch " + shape_string(x.shape()) + " vs " +
                                                shape_string(y.shape()));
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    const Var parents[] = {a, b};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(a);
        const Tensor<T>& yv = t.value(b);
        if (t.requires_grad(a)) {
            Tensor<T>& d = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * yv[i];
        }
        if (t.requires_grad(b)) {
            Tensor<T>& d = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * xv[i];
        }
    });
}

/// Adds a constant to every element.
template <typename T>
Var shift(Tape<T>& tape, Var input, T offset) {
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + offset;
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var input, T factor) {
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
    const Var parents[] = {input};
    return tape.record(std::move(out), parents, [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
    });
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename T, typename F>
Tensor<T> finite_difference_gradient(F&& f, const Tensor<T>& x, T h) {
    if (!(h > T{0})) throw std::invalid_argument("finite_difference_gradient: step must be positive");
    Tensor<T> probe = x;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const T up = f(static_cast<const Tensor<T>&>(probe));
        probe[i] = x[i] - h;
        const T down = f(static_cast<const Tensor<T>&>(probe));
        probe[i] = x[i];
        out[i] = (up - down) / (T{2} * h);
    }
    return out;
}

}  // namespace advxai
