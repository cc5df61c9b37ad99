#include "mnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mnn {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

TensorImplPtr make_node(std::vector<int> shape, std::vector<TensorImplPtr> parents) {
    auto node = std::make_shared<TensorImpl>();
    node->shape = std::move(shape);
    node->data.resize(shape_numel(node->shape));
    node->parents = std::move(parents);
    for (const auto& p : node->parents)
        if (p->requires_grad) node->requires_grad = true;
    return node;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(shape_numel(impl->shape), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("Tensor::from: data length does not match shape");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Tensor Tensor::normal(std::vector<int> shape, double mean, double stddev, Rng& rng,
                      bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor is not scalar");
    return data()[0];
}

// --- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: expects rank-2 tensors");
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    auto node = make_node({m, n}, {a.ptr(), b.ptr()});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* out = node->data.data();
    for (int i = 0; i < m; ++i) {
        double* orow = out + static_cast<size_t>(i) * n;
        std::fill(orow, orow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = ad[static_cast<size_t>(i) * k + p];
            const double* brow = bd + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (node->requires_grad) {
        TensorImpl* an = a.impl();
        TensorImpl* bn = b.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [an, bn, on, m, k, n]() {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dY * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g + static_cast<size_t>(i) * n;
                        const double* brow = bn->data.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[static_cast<size_t>(i) * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * dY
                for (int i = 0; i < m; ++i) {
                    const double* arow = an->data.data() + static_cast<size_t>(i) * k;
                    const double* grow = g + static_cast<size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const double av = arow[p];
                        if (av == 0.0) continue;
                        double* brow = bn->grad.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (x.shape().size() != 2 || w.shape().size() != 2)
        throw ShapeError("linear: expects rank-2 tensors");
    const int N = x.shape()[0], in = x.shape()[1];
    const int out = w.shape()[0];
    if (w.shape()[1] != in)
        throw ShapeError("linear: weight columns " + std::to_string(w.shape()[1]) +
                         " do not match input features " + std::to_string(in));
    auto node = make_node({N, out}, {x.ptr(), w.ptr()});
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* y = node->data.data();
    for (int i = 0; i < N; ++i) {
        const double* xrow = xd + static_cast<size_t>(i) * in;
        double* yrow = y + static_cast<size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            const double* wrow = wd + static_cast<size_t>(o) * in;
            double acc = 0.0;
            for (int j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
            yrow[o] = acc;
        }
    }
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* wn = w.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, wn, on, N, in, out]() {
            const double* g = on->grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < N; ++i) {
                    const double* grow = g + static_cast<size_t>(i) * out;
                    double* xg = xn->grad.data() + static_cast<size_t>(i) * in;
                    for (int o = 0; o < out; ++o) {
                        const double gv = grow[o];
                        if (gv == 0.0) continue;
                        const double* wrow = wn->data.data() + static_cast<size_t>(o) * in;
                        for (int j = 0; j < in; ++j) xg[j] += gv * wrow[j];
                    }
                }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int i = 0; i < N; ++i) {
                    const double* grow = g + static_cast<size_t>(i) * out;
                    const double* xrow = xn->data.data() + static_cast<size_t>(i) * in;
                    for (int o = 0; o < out; ++o) {
                        const double gv = grow[o];
                        if (gv == 0.0) continue;
                        double* wg = wn->grad.data() + static_cast<size_t>(o) * in;
                        for (int j = 0; j < in; ++j) wg[j] += gv * xrow[j];
                    }
                }
            }
        };
    }
    return Tensor(node);
}

// --- conv2d ----------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
    if (input.shape().size() != 4 || weight.shape().size() != 4)
        throw ShapeError("conv2d: expects rank-4 input and weight");
    const int N = input.shape()[0], Ci = input.shape()[1];
    const int H = input.shape()[2], W = input.shape()[3];
    const int Co = weight.shape()[0], Ciw = weight.shape()[1];
    const int kh = weight.shape()[2], kw = weight.shape()[3];
    if (Ci != Ciw) throw ShapeError("conv2d: input channels disagree with weight");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw ShapeError("conv2d: kernel larger than padded input");
    if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;

    auto node = make_node({N, Co, Ho, Wo}, {input.ptr(), weight.ptr()});
    const double* x = input.data().data();
    const double* w = weight.data().data();
    double* y = node->data.data();
    const size_t xs_n = static_cast<size_t>(Ci) * H * W;
    const size_t ys_n = static_cast<size_t>(Co) * Ho * Wo;
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
            double* yp = y + n * ys_n + static_cast<size_t>(co) * Ho * Wo;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const double* xp = x + n * xs_n + static_cast<size_t>(ci) * H * W;
                        const double* wp =
                            w + ((static_cast<size_t>(co) * Ci + ci) * kh) * kw;
                        for (int r = 0; r < kh; ++r) {
                            const int ih = oh * stride - padding + r;
                            if (ih < 0 || ih >= H) continue;
                            const double* xrow = xp + static_cast<size_t>(ih) * W;
                            const double* wrow = wp + static_cast<size_t>(r) * kw;
                            for (int c = 0; c < kw; ++c) {
                                const int iw = ow * stride - padding + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[iw] * wrow[c];
                            }
                        }
                    }
                    yp[static_cast<size_t>(oh) * Wo + ow] = acc;
                }
        }
    }
    if (node->requires_grad) {
        TensorImpl* xn = input.impl();
        TensorImpl* wn = weight.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, wn, on, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride,
                             padding]() {
            const double* g = on->grad.data();
            const size_t xs_n = static_cast<size_t>(Ci) * H * W;
            const size_t ys_n = static_cast<size_t>(Co) * Ho * Wo;
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const double* gp = g + n * ys_n + static_cast<size_t>(co) * Ho * Wo;
                    for (int oh = 0; oh < Ho; ++oh)
                        for (int ow = 0; ow < Wo; ++ow) {
                            const double gv = gp[static_cast<size_t>(oh) * Wo + ow];
                            if (gv == 0.0) continue;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const size_t xoff = n * xs_n + static_cast<size_t>(ci) * H * W;
                                const size_t woff =
                                    ((static_cast<size_t>(co) * Ci + ci) * kh) * kw;
                                for (int r = 0; r < kh; ++r) {
                                    const int ih = oh * stride - padding + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int c = 0; c < kw; ++c) {
                                        const int iw = ow * stride - padding + c;
                                        if (iw < 0 || iw >= W) continue;
                                        const size_t xi = xoff + static_cast<size_t>(ih) * W + iw;
                                        const size_t wi = woff + static_cast<size_t>(r) * kw + c;
                                        if (need_x) xn->grad[xi] += gv * wn->data[wi];
                                        if (need_w) wn->grad[wi] += gv * xn->data[xi];
                                    }
                                }
                            }
                        }
                }
        };
    }
    return Tensor(node);
}

// --- elementwise -----------------------------------------------------------

namespace {

// Builds an elementwise unary node given forward value and local derivative
// as functions of the input value (derivative may also use the output value).
template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& x, Fwd fwd, Dfn dfn) {
    auto node = make_node(x.shape(), {x.ptr()});
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) node->data[i] = fwd(x.data()[i]);
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, on, dfn, n]() {
            xn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                xn->grad[i] += on->grad[i] * dfn(xn->data[i], on->data[i]);
        };
    }
    return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto node = make_node(a.shape(), {a.ptr(), b.ptr()});
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) node->data[i] = a.data()[i] + b.data()[i];
    if (node->requires_grad) {
        TensorImpl* an = a.impl();
        TensorImpl* bn = b.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [an, bn, on, n]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
            }
        };
    }
    return Tensor(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto node = make_node(a.shape(), {a.ptr(), b.ptr()});
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) node->data[i] = a.data()[i] * b.data()[i];
    if (node->requires_grad) {
        TensorImpl* an = a.impl();
        TensorImpl* bn = b.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [an, bn, on, n]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->data[i];
            }
        };
    }
    return Tensor(node);
}

Tensor affine(const Tensor& x, double scale, double shift) {
    return unary_op(
        x, [scale, shift](double v) { return scale * v + shift; },
        [scale](double, double) { return scale; });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
    return unary_op(
        x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data())
        if (!(v > 0.0)) throw DomainError("log: non-positive input");
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data())
        if (v < 0.0) throw DomainError("sqrt: negative input");
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

// --- broadcasting helpers ----------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || x.shape()[1] != b.shape()[0])
        throw ShapeError("add_bias: expects [N,F] + [F]");
    const int N = x.shape()[0], F = x.shape()[1];
    auto node = make_node(x.shape(), {x.ptr(), b.ptr()});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < F; ++j)
            node->data[static_cast<size_t>(i) * F + j] =
                x.data()[static_cast<size_t>(i) * F + j] + b.data()[j];
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* bn = b.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, bn, on, N, F]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < static_cast<size_t>(N) * F; ++i)
                    xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < F; ++j)
                        bn->grad[j] += on->grad[static_cast<size_t>(i) * F + j];
            }
        };
    }
    return Tensor(node);
}

Tensor channel_scale(const Tensor& x, const Tensor& g) {
    const auto& xs = x.shape();
    if (g.shape().size() != 1)
        throw ShapeError("channel_scale: gate must be rank-1");
    int C;
    size_t inner;
    int N;
    if (xs.size() == 2) {
        N = xs[0];
        C = xs[1];
        inner = 1;
    } else if (xs.size() == 4) {
        N = xs[0];
        C = xs[1];
        inner = static_cast<size_t>(xs[2]) * xs[3];
    } else {
        throw ShapeError("channel_scale: expects [N,F] or [N,C,H,W] input");
    }
    if (C != g.shape()[0])
        throw ShapeError("channel_scale: gate width does not match channels");
    auto node = make_node(xs, {x.ptr(), g.ptr()});
    const size_t per_n = static_cast<size_t>(C) * inner;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double gv = g.data()[c];
            const size_t off = n * per_n + c * inner;
            for (size_t i = 0; i < inner; ++i)
                node->data[off + i] = x.data()[off + i] * gv;
        }
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* gn = g.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, gn, on, N, C, inner, per_n]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double gv = gn->data[c];
                        const size_t off = n * per_n + c * inner;
                        for (size_t i = 0; i < inner; ++i)
                            xn->grad[off + i] += on->grad[off + i] * gv;
                    }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const size_t off = n * per_n + c * inner;
                        double acc = 0.0;
                        for (size_t i = 0; i < inner; ++i)
                            acc += on->grad[off + i] * xn->data[off + i];
                        gn->grad[c] += acc;
                    }
            }
        };
    }
    return Tensor(node);
}

// --- pooling / reshape -------------------------------------------------------

Tensor maxpool2d(const Tensor& x, int k) {
    if (x.shape().size() != 4) throw ShapeError("maxpool2d: expects [N,C,H,W]");
    if (k <= 0) throw ShapeError("maxpool2d: kernel must be positive");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (k > H || k > W) throw ShapeError("maxpool2d: kernel larger than input");
    const int Ho = H / k, Wo = W / k;
    auto node = make_node({N, C, Ho, Wo}, {x.ptr()});
    auto argmax = std::make_shared<std::vector<size_t>>(node->data.size());
    const size_t xs_c = static_cast<size_t>(H) * W;
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(n) * C + c) * xs_c;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    size_t besti = 0;
                    for (int r = 0; r < k; ++r)
                        for (int s = 0; s < k; ++s) {
                            const size_t xi =
                                base + static_cast<size_t>(oh * k + r) * W + (ow * k + s);
                            if (x.data()[xi] > best) {
                                best = x.data()[xi];
                                besti = xi;
                            }
                        }
                    node->data[oi] = best;
                    (*argmax)[oi] = besti;
                }
        }
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, on, argmax]() {
            xn->ensure_grad();
            for (size_t i = 0; i < on->data.size(); ++i)
                xn->grad[(*argmax)[i]] += on->grad[i];
        };
    }
    return Tensor(node);
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.size())
        throw ShapeError("reshape: element count mismatch");
    auto node = make_node(std::move(shape), {x.ptr()});
    node->data = x.data();
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, on]() {
            xn->ensure_grad();
            for (size_t i = 0; i < on->data.size(); ++i) xn->grad[i] += on->grad[i];
        };
    }
    return Tensor(node);
}

// --- reductions / losses ------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto node = make_node({1}, {x.ptr()});
    node->data[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, on]() {
            xn->ensure_grad();
            for (double& g : xn->grad) g += on->grad[0];
        };
    }
    return Tensor(node);
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    auto node = make_node({1}, {x.ptr()});
    node->data[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0) * inv;
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, on, inv]() {
            xn->ensure_grad();
            for (double& g : xn->grad) g += on->grad[0] * inv;
        };
    }
    return Tensor(node);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    const size_t n = pred.size();
    const double inv = 1.0 / static_cast<double>(n);
    auto node = make_node({1}, {pred.ptr(), target.ptr()});
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    node->data[0] = acc * inv;
    if (node->requires_grad) {
        TensorImpl* pn = pred.impl();
        TensorImpl* tn = target.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [pn, tn, on, n, inv]() {
            const double g = on->grad[0] * 2.0 * inv;
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    pn->grad[i] += g * (pn->data[i] - tn->data[i]);
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    tn->grad[i] -= g * (pn->data[i] - tn->data[i]);
            }
        };
    }
    return Tensor(node);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2) throw ShapeError("cross_entropy: expects [N,C] logits");
    const int N = logits.shape()[0], C = logits.shape()[1];
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("cross_entropy: label count does not match batch");
    for (int lab : labels)
        if (lab < 0 || lab >= C) throw IndexError("cross_entropy: label out of range");
    auto node = make_node({1}, {logits.ptr()});
    // softmax probabilities, saved for the backward pass
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double loss = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * C;
        double mx = row[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < C; ++j) z += std::exp(row[j] - mx);
        const double logz = std::log(z) + mx;
        for (int j = 0; j < C; ++j)
            (*probs)[static_cast<size_t>(i) * C + j] = std::exp(row[j] - logz);
        loss += logz - row[labels[i]];
    }
    node->data[0] = loss / N;
    if (node->requires_grad) {
        TensorImpl* ln = logits.impl();
        TensorImpl* on = node.get();
        auto labs = std::make_shared<std::vector<int>>(labels);
        node->backward_fn = [ln, on, probs, labs, N, C]() {
            ln->ensure_grad();
            const double g = on->grad[0] / N;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j) {
                    double d = (*probs)[static_cast<size_t>(i) * C + j];
                    if (j == (*labs)[i]) d -= 1.0;
                    ln->grad[static_cast<size_t>(i) * C + j] += g * d;
                }
        };
    }
    return Tensor(node);
}

// --- batch norm --------------------------------------------------------------

Tensor batchnorm2d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps, std::vector<double>& batch_mean,
                         std::vector<double>& batch_var) {
    if (x.shape().size() != 4) throw ShapeError("batchnorm2d: expects [N,C,H,W]");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.shape() != std::vector<int>{C} || beta.shape() != std::vector<int>{C})
        throw ShapeError("batchnorm2d: gamma/beta width does not match channels");
    const size_t inner = static_cast<size_t>(H) * W;
    const size_t per_n = static_cast<size_t>(C) * inner;
    const double M = static_cast<double>(N) * inner;

    batch_mean.assign(C, 0.0);
    batch_var.assign(C, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t off = n * per_n + c * inner;
            for (size_t i = 0; i < inner; ++i) batch_mean[c] += x.data()[off + i];
        }
    for (int c = 0; c < C; ++c) batch_mean[c] /= M;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t off = n * per_n + c * inner;
            for (size_t i = 0; i < inner; ++i) {
                const double d = x.data()[off + i] - batch_mean[c];
                batch_var[c] += d * d;
            }
        }
    for (int c = 0; c < C; ++c) batch_var[c] /= M;

    auto node = make_node(x.shape(), {x.ptr(), gamma.ptr(), beta.ptr()});
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(C);
    for (int c = 0; c < C; ++c) (*inv_std)[c] = 1.0 / std::sqrt(batch_var[c] + eps);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t off = n * per_n + c * inner;
            for (size_t i = 0; i < inner; ++i) {
                const double xh = (x.data()[off + i] - batch_mean[c]) * (*inv_std)[c];
                (*xhat)[off + i] = xh;
                node->data[off + i] = gamma.data()[c] * xh + beta.data()[c];
            }
        }
    if (node->requires_grad) {
        TensorImpl* xn = x.impl();
        TensorImpl* gn = gamma.impl();
        TensorImpl* bn = beta.impl();
        TensorImpl* on = node.get();
        node->backward_fn = [xn, gn, bn, on, xhat, inv_std, N, C, inner, per_n, M]() {
            // per channel: dgamma = sum dy*xhat, dbeta = sum dy,
            // dx = gamma*inv_std*(dy - mean(dy) - xhat*mean(dy*xhat))
            std::vector<double> sum_dy(C, 0.0), sum_dyxh(C, 0.0);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const size_t off = n * per_n + c * inner;
                    for (size_t i = 0; i < inner; ++i) {
                        sum_dy[c] += on->grad[off + i];
                        sum_dyxh[c] += on->grad[off + i] * (*xhat)[off + i];
                    }
                }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int c = 0; c < C; ++c) gn->grad[c] += sum_dyxh[c];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int c = 0; c < C; ++c) bn->grad[c] += sum_dy[c];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double a = gn->data[c] * (*inv_std)[c];
                        const double mdy = sum_dy[c] / M;
                        const double mdyxh = sum_dyxh[c] / M;
                        const size_t off = n * per_n + c * inner;
                        for (size_t i = 0; i < inner; ++i)
                            xn->grad[off + i] +=
                                a * (on->grad[off + i] - mdy - (*xhat)[off + i] * mdyxh);
                    }
            }
        };
    }
    return Tensor(node);
}

Tensor batchnorm2d_eval(const Tensor& x, const std::vector<double>& gamma,
                        const std::vector<double>& beta,
                        const std::vector<double>& running_mean,
                        const std::vector<double>& running_var, double eps) {
    if (x.shape().size() != 4) throw ShapeError("batchnorm2d: expects [N,C,H,W]");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (static_cast<int>(gamma.size()) != C)
        throw ShapeError("batchnorm2d: gamma width does not match channels");
    const size_t inner = static_cast<size_t>(H) * W;
    const size_t per_n = static_cast<size_t>(C) * inner;
    Tensor out = Tensor::zeros(x.shape());
    for (int c = 0; c < C; ++c) {
        const double scale = gamma[c] / std::sqrt(running_var[c] + eps);
        const double shift = beta[c] - running_mean[c] * scale;
        for (int n = 0; n < N; ++n) {
            const size_t off = n * per_n + c * inner;
            for (size_t i = 0; i < inner; ++i)
                out.data()[off + i] = x.data()[off + i] * scale + shift;
        }
    }
    return out;
}

// --- backward / optimizer ------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    TensorImpl* root = loss.impl();
    if (!root->requires_grad) return;

    // iterative post-order DFS to get a topological order
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn();
}

void sgd_step(std::vector<Tensor>& params, const std::vector<double>& lrs, double momentum,
              std::vector<std::vector<double>>& velocity) {
    if (lrs.size() != params.size())
        throw ContractError("sgd_step: one learning rate per parameter required");
    if (velocity.size() != params.size())
        velocity.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (velocity[i].size() != p.size()) velocity[i].assign(p.size(), 0.0);
        if (p.grad().size() != p.size()) continue;  // no gradient this step
        auto& v = velocity[i];
        for (size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum * v[j] + p.grad()[j];
            p.data()[j] -= lrs[i] * v[j];
        }
    }
}

void sgd_step(std::vector<Tensor>& params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity) {
    sgd_step(params, std::vector<double>(params.size(), lr), momentum, velocity);
}

}  // namespace mnn
