#include "edmsr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "edmsr/rng.hpp"

namespace edmsr {

namespace {

void check_rank(const Tensor& t, size_t rank, const char* op) {
    require(t.shape.size() == rank,
            std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                shape_str(t.shape));
}

int64_t spatial_numel(const Tensor& t) {
    int64_t s = 1;
    for (size_t i = 2; i < t.shape.size(); ++i)
        s *= t.shape[i];
    return s;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// output extent of a padded strided convolution
int64_t conv_out(int64_t n, int64_t k, int64_t pad, int64_t stride) {
    return (n + 2 * pad - k) / stride + 1;
}

}  // namespace

Graph::NodeId Graph::push(Node node, const char* op) {
    node.op = op;
    if (check_finite_ && !node.value.all_finite())
        fail(std::string("graph: non-finite value produced by ") + op);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

bool Graph::any_input_needs_grad(const std::vector<NodeId>& ids) const {
    for (NodeId id : ids)
        if (nodes_[static_cast<size_t>(id)].needs_grad)
            return true;
    return false;
}

Tensor& Graph::grad_buf(NodeId id) {
    if (!grad_alloc_[static_cast<size_t>(id)]) {
        grads_[static_cast<size_t>(id)] = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
        grad_alloc_[static_cast<size_t>(id)] = 1;
    }
    return grads_[static_cast<size_t>(id)];
}

const Tensor& Graph::grad(NodeId id) const {
    require(backward_done_, "graph: grad() requested before backward()");
    require(!grads_.empty() && grad_alloc_[static_cast<size_t>(id)],
            "graph: node did not receive a gradient");
    return grads_[static_cast<size_t>(id)];
}

// ---------------------------------------------------------------- leaves --

Graph::NodeId Graph::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n), "input");
}

Graph::NodeId Graph::input_grad(Tensor value) {
    Node n;
    n.value      = std::move(value);
    n.needs_grad = true;
    return push(std::move(n), "input");
}

Graph::NodeId Graph::param(ParameterStore& store, const std::string& name) {
    Node n;
    n.value = store.get(name);  // copy; the tape owns its values
    if (store.trainable(name)) {
        n.needs_grad = true;
        n.bound      = &store.get(name);
    }
    return push(std::move(n), "param");
}

// ----------------------------------------------------------- convolution --

// Shared 2D/3D direct convolution. Treats 2D as 3D with a singleton leading
// spatial dim and 1-tap kernel along it.
struct ConvKernels {
    static void forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                        int64_t kd, int64_t kh, int64_t kw, int64_t stride, bool is3d) {
        const int64_t B  = x.shape[0];
        const int64_t Ci = x.shape[1];
        const int64_t D  = is3d ? x.shape[2] : 1;
        const int64_t H  = x.shape[is3d ? 3 : 2];
        const int64_t W  = x.shape[is3d ? 4 : 3];
        const int64_t Co = w.shape[0];
        const int64_t pd = kd / 2, ph = kh / 2, pw = kw / 2;
        const int64_t OD = conv_out(D, kd, pd, is3d ? stride : 1);
        const int64_t OH = conv_out(H, kh, ph, stride);
        const int64_t OW = conv_out(W, kw, pw, stride);

        const int64_t xs_c = D * H * W, xs_b = Ci * xs_c;
        const int64_t ys_c = OD * OH * OW, ys_b = Co * ys_c;
        const int64_t ws_o = Ci * kd * kh * kw;

        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t co = 0; co < Co; ++co) {
                double* yp      = y.data.data() + bb * ys_b + co * ys_c;
                const double bv = b.data[static_cast<size_t>(co)];
                for (int64_t i = 0; i < ys_c; ++i)
                    yp[i] = bv;
            }

        auto lo_of = [](int64_t pad, int64_t k, int64_t s) {
            const int64_t a = pad - k;
            return a > 0 ? (a + s - 1) / s : 0;
        };

        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const double* xp = x.data.data() + bb * xs_b + ci * xs_c;
                    double* yp       = y.data.data() + bb * ys_b + co * ys_c;
                    const double* wp = w.data.data() + co * ws_o + ci * kd * kh * kw;
                    const int64_t sd = is3d ? stride : 1;
                    for (int64_t zk = 0; zk < kd; ++zk) {
                        const int64_t zlo = lo_of(pd, zk, sd);
                        const int64_t zhi = std::min(OD - 1, (D - 1 + pd - zk) / sd);
                        for (int64_t yk = 0; yk < kh; ++yk) {
                            const int64_t ylo = lo_of(ph, yk, stride);
                            const int64_t yhi = std::min(OH - 1, (H - 1 + ph - yk) / stride);
                            for (int64_t xk = 0; xk < kw; ++xk) {
                                const double wv = wp[(zk * kh + yk) * kw + xk];
                                if (wv == 0.0)
                                    continue;
                                const int64_t xlo = lo_of(pw, xk, stride);
                                const int64_t xhi = std::min(OW - 1, (W - 1 + pw - xk) / stride);
                                for (int64_t oz = zlo; oz <= zhi; ++oz) {
                                    const int64_t iz = oz * sd + zk - pd;
                                    for (int64_t oy = ylo; oy <= yhi; ++oy) {
                                        const int64_t iy  = oy * stride + yk - ph;
                                        const double* xrow = xp + (iz * H + iy) * W;
                                        double* yrow       = yp + (oz * OH + oy) * OW;
                                        if (stride == 1) {
                                            const double* xq = xrow + (xlo + xk - pw);
                                            for (int64_t ox = xlo; ox <= xhi; ++ox)
                                                yrow[ox] += wv * xq[ox - xlo];
                                        } else {
                                            for (int64_t ox = xlo; ox <= xhi; ++ox)
                                                yrow[ox] += wv * xrow[ox * stride + xk - pw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
    }

    static void backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor* gx,
                         Tensor* gw, Tensor* gb, int64_t kd, int64_t kh, int64_t kw,
                         int64_t stride, bool is3d) {
        const int64_t B  = x.shape[0];
        const int64_t Ci = x.shape[1];
        const int64_t D  = is3d ? x.shape[2] : 1;
        const int64_t H  = x.shape[is3d ? 3 : 2];
        const int64_t W  = x.shape[is3d ? 4 : 3];
        const int64_t Co = w.shape[0];
        const int64_t pd = kd / 2, ph = kh / 2, pw = kw / 2;
        const int64_t OD = conv_out(D, kd, pd, is3d ? stride : 1);
        const int64_t OH = conv_out(H, kh, ph, stride);
        const int64_t OW = conv_out(W, kw, pw, stride);

        const int64_t xs_c = D * H * W, xs_b = Ci * xs_c;
        const int64_t ys_c = OD * OH * OW, ys_b = Co * ys_c;
        const int64_t ws_o = Ci * kd * kh * kw;
        const int64_t sd   = is3d ? stride : 1;

        auto lo_of = [](int64_t pad, int64_t k, int64_t s) {
            const int64_t a = pad - k;
            return a > 0 ? (a + s - 1) / s : 0;
        };

        if (gb) {
            for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t co = 0; co < Co; ++co) {
                    const double* gp = gy.data.data() + bb * ys_b + co * ys_c;
                    double acc = 0.0;
                    for (int64_t i = 0; i < ys_c; ++i)
                        acc += gp[i];
                    gb->data[static_cast<size_t>(co)] += acc;
                }
        }

        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t co = 0; co < Co; ++co)
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const double* xp = x.data.data() + bb * xs_b + ci * xs_c;
                    const double* gp = gy.data.data() + bb * ys_b + co * ys_c;
                    const double* wp = w.data.data() + co * ws_o + ci * kd * kh * kw;
                    double* gxp = gx ? gx->data.data() + bb * xs_b + ci * xs_c : nullptr;
                    double* gwp = gw ? gw->data.data() + co * ws_o + ci * kd * kh * kw : nullptr;

                    for (int64_t zk = 0; zk < kd; ++zk) {
                        const int64_t zlo = lo_of(pd, zk, sd);
                        const int64_t zhi = std::min(OD - 1, (D - 1 + pd - zk) / sd);
                        for (int64_t yk = 0; yk < kh; ++yk) {
                            const int64_t ylo = lo_of(ph, yk, stride);
                            const int64_t yhi = std::min(OH - 1, (H - 1 + ph - yk) / stride);
                            for (int64_t xk = 0; xk < kw; ++xk) {
                                const int64_t xlo = lo_of(pw, xk, stride);
                                const int64_t xhi = std::min(OW - 1, (W - 1 + pw - xk) / stride);
                                const double wv   = wp[(zk * kh + yk) * kw + xk];
                                double wacc       = 0.0;
                                for (int64_t oz = zlo; oz <= zhi; ++oz) {
                                    const int64_t iz = oz * sd + zk - pd;
                                    for (int64_t oy = ylo; oy <= yhi; ++oy) {
                                        const int64_t iy   = oy * stride + yk - ph;
                                        const double* grow = gp + (oz * OH + oy) * OW;
                                        const double* xrow = xp + (iz * H + iy) * W;
                                        double* gxrow = gxp ? gxp + (iz * H + iy) * W : nullptr;
                                        for (int64_t ox = xlo; ox <= xhi; ++ox) {
                                            const int64_t ix = ox * stride + xk - pw;
                                            const double g   = grow[ox];
                                            if (gxrow)
                                                gxrow[ix] += wv * g;
                                            wacc += g * xrow[ix];
                                        }
                                    }
                                }
                                if (gwp)
                                    gwp[(zk * kh + yk) * kw + xk] += wacc;
                            }
                        }
                    }
                }
    }
};

Graph::NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    check_rank(xv, 4, "conv2d");
    check_rank(wv, 4, "conv2d weight");
    require(wv.shape[1] == xv.shape[1], "conv2d: channel mismatch");
    require(wv.shape[2] == wv.shape[3] && (wv.shape[2] == 1 || wv.shape[2] == 3),
            "conv2d: kernel must be 1x1 or 3x3");
    require(bv.shape.size() == 1 && bv.shape[0] == wv.shape[0], "conv2d: bad bias shape");
    require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");

    const int64_t k = wv.shape[2];
    Tensor y({xv.shape[0], wv.shape[0], conv_out(xv.shape[2], k, k / 2, stride),
              conv_out(xv.shape[3], k, k / 2, stride)});
    ConvKernels::forward(xv, wv, bv, y, 1, k, k, stride, false);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x, w, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, w, b, k, stride](Graph& g, NodeId self) {
        const Tensor& gy   = g.grads_[static_cast<size_t>(self)];
        const bool need_x  = g.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool need_w  = g.nodes_[static_cast<size_t>(w)].needs_grad;
        const bool need_b  = g.nodes_[static_cast<size_t>(b)].needs_grad;
        Tensor* gx = need_x ? &g.grad_buf(x) : nullptr;
        Tensor* gw = need_w ? &g.grad_buf(w) : nullptr;
        Tensor* gb = need_b ? &g.grad_buf(b) : nullptr;
        ConvKernels::backward(g.value(x), g.value(w), gy, gx, gw, gb, 1, k, k, stride, false);
    };
    return push(std::move(n), "conv2d");
}

Graph::NodeId Graph::conv3d(NodeId x, NodeId w, NodeId b, int stride) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    check_rank(xv, 5, "conv3d");
    check_rank(wv, 5, "conv3d weight");
    require(wv.shape[1] == xv.shape[1], "conv3d: channel mismatch");
    require(wv.shape[2] == wv.shape[3] && wv.shape[3] == wv.shape[4] &&
                (wv.shape[2] == 1 || wv.shape[2] == 3),
            "conv3d: kernel must be 1x1x1 or 3x3x3");
    require(bv.shape.size() == 1 && bv.shape[0] == wv.shape[0], "conv3d: bad bias shape");
    require(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");

    const int64_t k = wv.shape[2];
    Tensor y({xv.shape[0], wv.shape[0], conv_out(xv.shape[2], k, k / 2, stride),
              conv_out(xv.shape[3], k, k / 2, stride), conv_out(xv.shape[4], k, k / 2, stride)});
    ConvKernels::forward(xv, wv, bv, y, k, k, k, stride, true);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x, w, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, w, b, k, stride](Graph& g, NodeId self) {
        const Tensor& gy  = g.grads_[static_cast<size_t>(self)];
        const bool need_x = g.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool need_w = g.nodes_[static_cast<size_t>(w)].needs_grad;
        const bool need_b = g.nodes_[static_cast<size_t>(b)].needs_grad;
        Tensor* gx = need_x ? &g.grad_buf(x) : nullptr;
        Tensor* gw = need_w ? &g.grad_buf(w) : nullptr;
        Tensor* gb = need_b ? &g.grad_buf(b) : nullptr;
        ConvKernels::backward(g.value(x), g.value(w), gy, gx, gw, gb, k, k, k, stride, true);
    };
    return push(std::move(n), "conv3d");
}

Graph::NodeId Graph::nearest_up2(NodeId x) {
    const Tensor& xv = value(x);
    require(xv.shape.size() == 4 || xv.shape.size() == 5, "nearest_up2: expects (B,C,sp..)");
    std::vector<int64_t> oshape = xv.shape;
    for (size_t i = 2; i < oshape.size(); ++i)
        oshape[i] *= 2;
    Tensor y(oshape);

    const int64_t B = xv.shape[0], C = xv.shape[1];
    const bool is3d = xv.shape.size() == 5;
    const int64_t D = is3d ? xv.shape[2] : 1;
    const int64_t H = xv.shape[is3d ? 3 : 2], W = xv.shape[is3d ? 4 : 3];
    const int64_t OD = is3d ? 2 * D : 1, OH = 2 * H, OW = 2 * W;

    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* xp = xv.data.data() + bc * D * H * W;
        double* yp       = y.data.data() + bc * OD * OH * OW;
        for (int64_t z = 0; z < OD; ++z)
            for (int64_t yy = 0; yy < OH; ++yy) {
                const double* xrow = xp + ((is3d ? z / 2 : 0) * H + yy / 2) * W;
                double* yrow       = yp + (z * OH + yy) * OW;
                for (int64_t xx = 0; xx < OW; ++xx)
                    yrow[xx] = xrow[xx / 2];
            }
    }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, C, D, H, W, is3d](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        const int64_t OD = is3d ? 2 * D : 1, OH = 2 * H, OW = 2 * W;
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const double* gp = gy.data.data() + bc * OD * OH * OW;
            double* gxp      = gx.data.data() + bc * D * H * W;
            for (int64_t z = 0; z < OD; ++z)
                for (int64_t yy = 0; yy < OH; ++yy) {
                    const double* grow = gp + (z * OH + yy) * OW;
                    double* gxrow      = gxp + ((is3d ? z / 2 : 0) * H + yy / 2) * W;
                    for (int64_t xx = 0; xx < OW; ++xx)
                        gxrow[xx / 2] += grow[xx];
                }
        }
    };
    return push(std::move(n), "nearest_up2");
}

Graph::NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    require(xv.shape.size() >= 1, "linear: bad input rank");
    check_rank(wv, 2, "linear weight");
    const int64_t in  = wv.shape[1];
    const int64_t out = wv.shape[0];
    require(xv.shape.back() == in, "linear: input feature mismatch");
    require(bv.shape.size() == 1 && bv.shape[0] == out, "linear: bad bias shape");

    std::vector<int64_t> oshape = xv.shape;
    oshape.back()               = out;
    Tensor y(oshape);
    const int64_t M = xv.numel() / in;
    for (int64_t m = 0; m < M; ++m) {
        const double* xr = xv.data.data() + m * in;
        double* yr       = y.data.data() + m * out;
        for (int64_t o = 0; o < out; ++o) {
            const double* wr = wv.data.data() + o * in;
            double acc       = bv.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < in; ++i)
                acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x, w, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, w, b, M, in, out](Graph& g, NodeId self) {
        const Tensor& gy  = g.grads_[static_cast<size_t>(self)];
        const Tensor& xv  = g.value(x);
        const Tensor& wv  = g.value(w);
        const bool need_x = g.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool need_w = g.nodes_[static_cast<size_t>(w)].needs_grad;
        const bool need_b = g.nodes_[static_cast<size_t>(b)].needs_grad;
        Tensor* gx = need_x ? &g.grad_buf(x) : nullptr;
        Tensor* gw = need_w ? &g.grad_buf(w) : nullptr;
        Tensor* gb = need_b ? &g.grad_buf(b) : nullptr;
        for (int64_t m = 0; m < M; ++m) {
            const double* gr = gy.data.data() + m * out;
            const double* xr = xv.data.data() + m * in;
            for (int64_t o = 0; o < out; ++o) {
                const double gv = gr[o];
                if (gb)
                    gb->data[static_cast<size_t>(o)] += gv;
                const double* wr = wv.data.data() + o * in;
                if (gx) {
                    double* gxr = gx->data.data() + m * in;
                    for (int64_t i = 0; i < in; ++i)
                        gxr[i] += gv * wr[i];
                }
                if (gw) {
                    double* gwr = gw->data.data() + o * in;
                    for (int64_t i = 0; i < in; ++i)
                        gwr[i] += gv * xr[i];
                }
            }
        }
    };
    return push(std::move(n), "linear");
}

Graph::NodeId Graph::silu(NodeId x) {
    const Tensor& xv = value(x);
    Tensor y(xv.shape);
    for (size_t i = 0; i < xv.data.size(); ++i)
        y.data[i] = xv.data[i] * sigmoid(xv.data[i]);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        const Tensor& xv = g.value(x);
        Tensor& gx       = g.grad_buf(x);
        for (size_t i = 0; i < xv.data.size(); ++i) {
            const double s = sigmoid(xv.data[i]);
            gx.data[i] += gy.data[i] * s * (1.0 + xv.data[i] * (1.0 - s));
        }
    };
    return push(std::move(n), "silu");
}

Graph::NodeId Graph::group_norm(NodeId x, NodeId gamma, NodeId beta, int groups) {
    constexpr double kEps = 1e-5;
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    require(xv.shape.size() >= 2, "group_norm: expects (B,C,..)");
    const int64_t B = xv.shape[0], C = xv.shape[1];
    require(groups >= 1 && C % groups == 0, "group_norm: group count must divide channels");
    require(gv.shape.size() == 1 && gv.shape[0] == C, "group_norm: bad gamma shape");
    require(bv.shape.size() == 1 && bv.shape[0] == C, "group_norm: bad beta shape");

    const int64_t S  = spatial_numel(xv);
    const int64_t Cg = C / groups;
    const int64_t n  = Cg * S;

    Tensor y(xv.shape);
    auto mean_inv = std::make_shared<std::vector<double>>(2 * B * groups);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < groups; ++g) {
            const double* xp = xv.data.data() + (b * C + g * Cg) * S;
            double sum = 0.0, sq = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                sum += xp[i];
                sq += xp[i] * xp[i];
            }
            const double mu  = sum / static_cast<double>(n);
            const double var = std::max(0.0, sq / static_cast<double>(n) - mu * mu);
            const double inv = 1.0 / std::sqrt(var + kEps);
            (*mean_inv)[2 * (b * groups + g)]     = mu;
            (*mean_inv)[2 * (b * groups + g) + 1] = inv;
            for (int64_t c = 0; c < Cg; ++c) {
                const int64_t ch = g * Cg + c;
                const double ga  = gv.data[static_cast<size_t>(ch)];
                const double be  = bv.data[static_cast<size_t>(ch)];
                const double* xr = xv.data.data() + (b * C + ch) * S;
                double* yr       = y.data.data() + (b * C + ch) * S;
                for (int64_t i = 0; i < S; ++i)
                    yr[i] = ga * (xr[i] - mu) * inv + be;
            }
        }

    Node node;
    node.value      = std::move(y);
    node.inputs     = {x, gamma, beta};
    node.needs_grad = any_input_needs_grad(node.inputs);
    node.back = [x, gamma, beta, groups, B, C, Cg, S, n, mean_inv](Graph& g, NodeId self) {
        const Tensor& gy  = g.grads_[static_cast<size_t>(self)];
        const Tensor& xv  = g.value(x);
        const Tensor& gv  = g.value(gamma);
        const bool need_x = g.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool need_g = g.nodes_[static_cast<size_t>(gamma)].needs_grad;
        const bool need_b = g.nodes_[static_cast<size_t>(beta)].needs_grad;
        Tensor* gx = need_x ? &g.grad_buf(x) : nullptr;
        Tensor* gg = need_g ? &g.grad_buf(gamma) : nullptr;
        Tensor* gb = need_b ? &g.grad_buf(beta) : nullptr;

        for (int64_t b = 0; b < B; ++b)
            for (int64_t gr = 0; gr < groups; ++gr) {
                const double mu  = (*mean_inv)[2 * (b * groups + gr)];
                const double inv = (*mean_inv)[2 * (b * groups + gr) + 1];
                // accumulate the two reductions the input gradient needs
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int64_t c = 0; c < Cg; ++c) {
                    const int64_t ch = gr * Cg + c;
                    const double ga  = gv.data[static_cast<size_t>(ch)];
                    const double* xr = xv.data.data() + (b * C + ch) * S;
                    const double* dy = gy.data.data() + (b * C + ch) * S;
                    double dg = 0.0, db = 0.0;
                    for (int64_t i = 0; i < S; ++i) {
                        const double xh  = (xr[i] - mu) * inv;
                        const double dxh = dy[i] * ga;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dg += dy[i] * xh;
                        db += dy[i];
                    }
                    if (gg)
                        gg->data[static_cast<size_t>(ch)] += dg;
                    if (gb)
                        gb->data[static_cast<size_t>(ch)] += db;
                }
                if (gx) {
                    const double m1 = sum_dxh / static_cast<double>(n);
                    const double m2 = sum_dxh_xh / static_cast<double>(n);
                    for (int64_t c = 0; c < Cg; ++c) {
                        const int64_t ch = gr * Cg + c;
                        const double ga  = gv.data[static_cast<size_t>(ch)];
                        const double* xr = xv.data.data() + (b * C + ch) * S;
                        const double* dy = gy.data.data() + (b * C + ch) * S;
                        double* dx       = gx->data.data() + (b * C + ch) * S;
                        for (int64_t i = 0; i < S; ++i) {
                            const double xh = (xr[i] - mu) * inv;
                            dx[i] += inv * (dy[i] * ga - m1 - xh * m2);
                        }
                    }
                }
            }
    };
    return push(std::move(node), "group_norm");
}

Graph::NodeId Graph::attention(NodeId q, NodeId k, NodeId v) {
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    check_rank(qv, 4, "attention");
    require(qv.shape == kv.shape && kv.shape == vv.shape,
            "attention: Q, K, V must share shape (B,heads,S,dh)");
    const int64_t B = qv.shape[0], Hh = qv.shape[1], S = qv.shape[2], Dh = qv.shape[3];
    const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));

    Tensor y(qv.shape);
    auto attn = std::make_shared<std::vector<double>>(static_cast<size_t>(B * Hh * S * S));

    for (int64_t bh = 0; bh < B * Hh; ++bh) {
        const double* qp = qv.data.data() + bh * S * Dh;
        const double* kp = kv.data.data() + bh * S * Dh;
        const double* vp = vv.data.data() + bh * S * Dh;
        double* ap       = attn->data() + bh * S * S;
        double* yp       = y.data.data() + bh * S * Dh;
        for (int64_t i = 0; i < S; ++i) {
            double* arow = ap + i * S;
            double mx    = -1e300;
            for (int64_t j = 0; j < S; ++j) {
                double dot = 0.0;
                for (int64_t d = 0; d < Dh; ++d)
                    dot += qp[i * Dh + d] * kp[j * Dh + d];
                arow[j] = dot * scale;
                mx      = std::max(mx, arow[j]);
            }
            double denom = 0.0;
            for (int64_t j = 0; j < S; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                denom += arow[j];
            }
            const double invd = 1.0 / denom;
            for (int64_t j = 0; j < S; ++j)
                arow[j] *= invd;
            for (int64_t d = 0; d < Dh; ++d) {
                double acc = 0.0;
                for (int64_t j = 0; j < S; ++j)
                    acc += arow[j] * vp[j * Dh + d];
                yp[i * Dh + d] = acc;
            }
        }
    }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {q, k, v};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [q, k, v, B, Hh, S, Dh, scale, attn](Graph& g, NodeId self) {
        const Tensor& gy  = g.grads_[static_cast<size_t>(self)];
        const Tensor& qv  = g.value(q);
        const Tensor& kv  = g.value(k);
        const Tensor& vv  = g.value(v);
        const bool need_q = g.nodes_[static_cast<size_t>(q)].needs_grad;
        const bool need_k = g.nodes_[static_cast<size_t>(k)].needs_grad;
        const bool need_v = g.nodes_[static_cast<size_t>(v)].needs_grad;
        Tensor* gq = need_q ? &g.grad_buf(q) : nullptr;
        Tensor* gk = need_k ? &g.grad_buf(k) : nullptr;
        Tensor* gv = need_v ? &g.grad_buf(v) : nullptr;

        std::vector<double> da(static_cast<size_t>(S));
        for (int64_t bh = 0; bh < B * Hh; ++bh) {
            const double* qp = qv.data.data() + bh * S * Dh;
            const double* kp = kv.data.data() + bh * S * Dh;
            const double* vp = vv.data.data() + bh * S * Dh;
            const double* ap = attn->data() + bh * S * S;
            const double* gp = gy.data.data() + bh * S * Dh;
            for (int64_t i = 0; i < S; ++i) {
                const double* arow = ap + i * S;
                // dV += A^T dY  and  dA = dY V^T
                double dot_sum = 0.0;
                for (int64_t j = 0; j < S; ++j) {
                    double dij = 0.0;
                    for (int64_t d = 0; d < Dh; ++d)
                        dij += gp[i * Dh + d] * vp[j * Dh + d];
                    if (gv)
                        for (int64_t d = 0; d < Dh; ++d)
                            gv->data[static_cast<size_t>(bh * S * Dh + j * Dh + d)] +=
                                arow[j] * gp[i * Dh + d];
                    da[static_cast<size_t>(j)] = dij;
                    dot_sum += dij * arow[j];
                }
                if (!gq && !gk)
                    continue;
                for (int64_t j = 0; j < S; ++j) {
                    const double ds = arow[j] * (da[static_cast<size_t>(j)] - dot_sum) * scale;
                    if (gq)
                        for (int64_t d = 0; d < Dh; ++d)
                            gq->data[static_cast<size_t>(bh * S * Dh + i * Dh + d)] +=
                                ds * kp[j * Dh + d];
                    if (gk)
                        for (int64_t d = 0; d < Dh; ++d)
                            gk->data[static_cast<size_t>(bh * S * Dh + j * Dh + d)] +=
                                ds * qp[i * Dh + d];
                }
            }
        }
    };
    return push(std::move(n), "attention");
}

Graph::NodeId Graph::concat_channels(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.shape.size() == bv.shape.size() && av.shape.size() >= 2,
            "concat_channels: rank mismatch");
    for (size_t i = 0; i < av.shape.size(); ++i)
        if (i != 1)
            require(av.shape[i] == bv.shape[i], "concat_channels: non-channel dims differ");

    std::vector<int64_t> oshape = av.shape;
    oshape[1] += bv.shape[1];
    Tensor y(oshape);
    const int64_t B = av.shape[0];
    const int64_t Sa = av.numel() / B, Sb = bv.numel() / B;
    for (int64_t i = 0; i < B; ++i) {
        std::copy_n(av.data.begin() + i * Sa, Sa, y.data.begin() + i * (Sa + Sb));
        std::copy_n(bv.data.begin() + i * Sb, Sb, y.data.begin() + i * (Sa + Sb) + Sa);
    }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {a, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [a, b, B, Sa, Sb](Graph& g, NodeId self) {
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        if (g.nodes_[static_cast<size_t>(a)].needs_grad) {
            Tensor& ga = g.grad_buf(a);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < Sa; ++j)
                    ga.data[static_cast<size_t>(i * Sa + j)] +=
                        gy.data[static_cast<size_t>(i * (Sa + Sb) + j)];
        }
        if (g.nodes_[static_cast<size_t>(b)].needs_grad) {
            Tensor& gb = g.grad_buf(b);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < Sb; ++j)
                    gb.data[static_cast<size_t>(i * Sb + j)] +=
                        gy.data[static_cast<size_t>(i * (Sa + Sb) + Sa + j)];
        }
    };
    return push(std::move(n), "concat_channels");
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.shape == bv.shape, "add: shape mismatch " + shape_str(av.shape) + " vs " +
                                      shape_str(bv.shape));
    Tensor y(av.shape);
    for (size_t i = 0; i < av.data.size(); ++i)
        y.data[i] = av.data[i] + bv.data[i];

    Node n;
    n.value      = std::move(y);
    n.inputs     = {a, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [a, b](Graph& g, NodeId self) {
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        if (g.nodes_[static_cast<size_t>(a)].needs_grad)
            g.add_grad(a, gy.data);
        if (g.nodes_[static_cast<size_t>(b)].needs_grad)
            g.add_grad(b, gy.data);
    };
    return push(std::move(n), "add");
}

Graph::NodeId Graph::scale_shift(NodeId x, NodeId scale, NodeId shift) {
    const Tensor& xv = value(x);
    const Tensor& sv = value(scale);
    const Tensor& tv = value(shift);
    require(xv.shape.size() >= 2, "scale_shift: expects (B,C,..)");
    const int64_t B = xv.shape[0], C = xv.shape[1];
    require(sv.shape == std::vector<int64_t>({B, C}) && tv.shape == sv.shape,
            "scale_shift: scale/shift must be (B,C)");
    const int64_t S = spatial_numel(xv);

    Tensor y(xv.shape);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double sc  = 1.0 + sv.data[static_cast<size_t>(b * C + c)];
            const double sh  = tv.data[static_cast<size_t>(b * C + c)];
            const double* xr = xv.data.data() + (b * C + c) * S;
            double* yr       = y.data.data() + (b * C + c) * S;
            for (int64_t i = 0; i < S; ++i)
                yr[i] = xr[i] * sc + sh;
        }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x, scale, shift};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, scale, shift, B, C, S](Graph& g, NodeId self) {
        const Tensor& gy  = g.grads_[static_cast<size_t>(self)];
        const Tensor& xv  = g.value(x);
        const Tensor& sv  = g.value(scale);
        const bool need_x = g.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool need_s = g.nodes_[static_cast<size_t>(scale)].needs_grad;
        const bool need_t = g.nodes_[static_cast<size_t>(shift)].needs_grad;
        Tensor* gx = need_x ? &g.grad_buf(x) : nullptr;
        Tensor* gs = need_s ? &g.grad_buf(scale) : nullptr;
        Tensor* gt = need_t ? &g.grad_buf(shift) : nullptr;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double sc  = 1.0 + sv.data[static_cast<size_t>(b * C + c)];
                const double* dy = gy.data.data() + (b * C + c) * S;
                const double* xr = xv.data.data() + (b * C + c) * S;
                double acc_s = 0.0, acc_t = 0.0;
                double* dx = gx ? gx->data.data() + (b * C + c) * S : nullptr;
                for (int64_t i = 0; i < S; ++i) {
                    if (dx)
                        dx[i] += dy[i] * sc;
                    acc_s += dy[i] * xr[i];
                    acc_t += dy[i];
                }
                if (gs)
                    gs->data[static_cast<size_t>(b * C + c)] += acc_s;
                if (gt)
                    gt->data[static_cast<size_t>(b * C + c)] += acc_t;
            }
    };
    return push(std::move(n), "scale_shift");
}

// --------------------------------------------------------------- layout --

Graph::NodeId Graph::reshape(NodeId x, std::vector<int64_t> shape) {
    const Tensor& xv = value(x);
    require(Tensor::numel_of(shape) == xv.numel(), "reshape: element count mismatch");
    Tensor y(shape, xv.data);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x](Graph& g, NodeId self) {
        if (g.nodes_[static_cast<size_t>(x)].needs_grad)
            g.add_grad(x, g.grads_[static_cast<size_t>(self)].data);
    };
    return push(std::move(n), "reshape");
}

Graph::NodeId Graph::channels_last(NodeId x) {
    const Tensor& xv = value(x);
    require(xv.shape.size() >= 3, "channels_last: expects (B,C,sp..)");
    const int64_t B = xv.shape[0], C = xv.shape[1], S = spatial_numel(xv);
    Tensor y({B, S, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* xr = xv.data.data() + (b * C + c) * S;
            double* yp       = y.data.data() + b * S * C + c;
            for (int64_t s = 0; s < S; ++s)
                yp[s * C] = xr[s];
        }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, C, S](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double* gxr      = gx.data.data() + (b * C + c) * S;
                const double* gp = gy.data.data() + b * S * C + c;
                for (int64_t s = 0; s < S; ++s)
                    gxr[s] += gp[s * C];
            }
    };
    return push(std::move(n), "channels_last");
}

Graph::NodeId Graph::channels_first(NodeId x, std::vector<int64_t> spatial) {
    const Tensor& xv = value(x);
    check_rank(xv, 3, "channels_first");
    const int64_t B = xv.shape[0], S = xv.shape[1], C = xv.shape[2];
    int64_t sp = 1;
    for (int64_t d : spatial)
        sp *= d;
    require(sp == S, "channels_first: spatial dims do not match token count");

    std::vector<int64_t> oshape = {B, C};
    oshape.insert(oshape.end(), spatial.begin(), spatial.end());
    Tensor y(oshape);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            double* yr       = y.data.data() + (b * C + c) * S;
            const double* xp = xv.data.data() + b * S * C + c;
            for (int64_t s = 0; s < S; ++s)
                yr[s] = xp[s * C];
        }

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, C, S](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double* gp = gy.data.data() + (b * C + c) * S;
                double* gxp      = gx.data.data() + b * S * C + c;
                for (int64_t s = 0; s < S; ++s)
                    gxp[s * C] += gp[s];
            }
    };
    return push(std::move(n), "channels_first");
}

Graph::NodeId Graph::split_heads(NodeId x, int heads) {
    const Tensor& xv = value(x);
    check_rank(xv, 3, "split_heads");
    const int64_t B = xv.shape[0], S = xv.shape[1], C = xv.shape[2];
    require(heads >= 1 && C % heads == 0, "split_heads: heads must divide channels");
    const int64_t Dh = C / heads;
    Tensor y({B, heads, S, Dh});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t s = 0; s < S; ++s)
                std::copy_n(xv.data.begin() + (b * S + s) * C + h * Dh, Dh,
                            y.data.begin() + ((b * heads + h) * S + s) * Dh);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, S, C, heads, Dh](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t s = 0; s < S; ++s)
                    for (int64_t d = 0; d < Dh; ++d)
                        gx.data[static_cast<size_t>((b * S + s) * C + h * Dh + d)] +=
                            gy.data[static_cast<size_t>(((b * heads + h) * S + s) * Dh + d)];
    };
    return push(std::move(n), "split_heads");
}

Graph::NodeId Graph::merge_heads(NodeId x) {
    const Tensor& xv = value(x);
    check_rank(xv, 4, "merge_heads");
    const int64_t B = xv.shape[0], Hh = xv.shape[1], S = xv.shape[2], Dh = xv.shape[3];
    const int64_t C = Hh * Dh;
    Tensor y({B, S, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < Hh; ++h)
            for (int64_t s = 0; s < S; ++s)
                std::copy_n(xv.data.begin() + ((b * Hh + h) * S + s) * Dh, Dh,
                            y.data.begin() + (b * S + s) * C + h * Dh);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, Hh, S, Dh, C](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < Hh; ++h)
                for (int64_t s = 0; s < S; ++s)
                    for (int64_t d = 0; d < Dh; ++d)
                        gx.data[static_cast<size_t>(((b * Hh + h) * S + s) * Dh + d)] +=
                            gy.data[static_cast<size_t>((b * S + s) * C + h * Dh + d)];
    };
    return push(std::move(n), "merge_heads");
}

Graph::NodeId Graph::slice_last(NodeId x, int64_t start, int64_t len) {
    const Tensor& xv = value(x);
    require(!xv.shape.empty(), "slice_last: scalar input");
    const int64_t L = xv.shape.back();
    require(start >= 0 && len >= 1 && start + len <= L, "slice_last: range out of bounds");
    std::vector<int64_t> oshape = xv.shape;
    oshape.back()               = len;
    Tensor y(oshape);
    const int64_t M = xv.numel() / L;
    for (int64_t m = 0; m < M; ++m)
        std::copy_n(xv.data.begin() + m * L + start, len, y.data.begin() + m * len);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, start, len, L, M](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t m = 0; m < M; ++m)
            for (int64_t i = 0; i < len; ++i)
                gx.data[static_cast<size_t>(m * L + start + i)] +=
                    gy.data[static_cast<size_t>(m * len + i)];
    };
    return push(std::move(n), "slice_last");
}

Graph::NodeId Graph::sample_scale(NodeId x, std::vector<double> coeff) {
    const Tensor& xv = value(x);
    require(!xv.shape.empty() && xv.shape[0] == static_cast<int64_t>(coeff.size()),
            "sample_scale: one coefficient per batch element required");
    const int64_t B = xv.shape[0];
    const int64_t S = xv.numel() / B;
    Tensor y(xv.shape);
    for (int64_t b = 0; b < B; ++b) {
        const double c = coeff[static_cast<size_t>(b)];
        for (int64_t i = 0; i < S; ++i)
            y.data[static_cast<size_t>(b * S + i)] = c * xv.data[static_cast<size_t>(b * S + i)];
    }

    auto cf = std::make_shared<std::vector<double>>(std::move(coeff));
    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, B, S, cf](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (int64_t b = 0; b < B; ++b) {
            const double c = (*cf)[static_cast<size_t>(b)];
            for (int64_t i = 0; i < S; ++i)
                gx.data[static_cast<size_t>(b * S + i)] +=
                    c * gy.data[static_cast<size_t>(b * S + i)];
        }
    };
    return push(std::move(n), "sample_scale");
}

Graph::NodeId Graph::mul_scalar(NodeId x, double s) {
    const Tensor& xv = value(x);
    Tensor y(xv.shape);
    for (size_t i = 0; i < xv.data.size(); ++i)
        y.data[i] = s * xv.data[i];

    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, s](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const Tensor& gy = g.grads_[static_cast<size_t>(self)];
        Tensor& gx       = g.grad_buf(x);
        for (size_t i = 0; i < gy.data.size(); ++i)
            gx.data[i] += s * gy.data[i];
    };
    return push(std::move(n), "mul_scalar");
}

// ------------------------------------------------------------ reductions --

Graph::NodeId Graph::mse(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.shape == bv.shape, "mse: shape mismatch");
    const int64_t N = av.numel();
    double acc      = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double d = av.data[static_cast<size_t>(i)] - bv.data[static_cast<size_t>(i)];
        acc += d * d;
    }
    Tensor y({1});
    y.data[0] = acc / static_cast<double>(N);

    Node n;
    n.value      = std::move(y);
    n.inputs     = {a, b};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [a, b, N](Graph& g, NodeId self) {
        const double gy  = g.grads_[static_cast<size_t>(self)].data[0];
        const Tensor& av = g.value(a);
        const Tensor& bv = g.value(b);
        const double k   = 2.0 * gy / static_cast<double>(N);
        const bool need_a = g.nodes_[static_cast<size_t>(a)].needs_grad;
        const bool need_b = g.nodes_[static_cast<size_t>(b)].needs_grad;
        Tensor* ga = need_a ? &g.grad_buf(a) : nullptr;
        Tensor* gb = need_b ? &g.grad_buf(b) : nullptr;
        for (int64_t i = 0; i < N; ++i) {
            const double d = k * (av.data[static_cast<size_t>(i)] - bv.data[static_cast<size_t>(i)]);
            if (ga)
                ga->data[static_cast<size_t>(i)] += d;
            if (gb)
                gb->data[static_cast<size_t>(i)] -= d;
        }
    };
    return push(std::move(n), "mse");
}

Graph::NodeId Graph::weighted_sum(NodeId x, Tensor weights) {
    const Tensor& xv = value(x);
    require(xv.shape == weights.shape, "weighted_sum: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < xv.data.size(); ++i)
        acc += xv.data[i] * weights.data[i];
    Tensor y({1});
    y.data[0] = acc;

    auto w = std::make_shared<Tensor>(std::move(weights));
    Node n;
    n.value      = std::move(y);
    n.inputs     = {x};
    n.needs_grad = any_input_needs_grad(n.inputs);
    n.back = [x, w](Graph& g, NodeId self) {
        if (!g.nodes_[static_cast<size_t>(x)].needs_grad)
            return;
        const double gy = g.grads_[static_cast<size_t>(self)].data[0];
        Tensor& gx      = g.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += gy * w->data[i];
    };
    return push(std::move(n), "weighted_sum");
}

void Graph::add_grad(NodeId id, const std::vector<double>& g) {
    Tensor& buf = grad_buf(id);
    for (size_t i = 0; i < g.size(); ++i)
        buf.data[i] += g[i];
}

void Graph::backward(NodeId loss) {
    require(!backward_done_, "graph: backward() called twice without a new forward");
    require(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(), "graph: bad loss node");
    require(nodes_[static_cast<size_t>(loss)].value.numel() == 1,
            "graph: loss must be a scalar");
    backward_done_ = true;

    grads_.resize(nodes_.size());
    grad_alloc_.assign(nodes_.size(), 0);
    grad_buf(loss).data[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || !grad_alloc_[static_cast<size_t>(id)] || !n.back)
            continue;
        n.back(*this, id);
    }

    // fold leaf gradients into the bound parameter store
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (!n.bound || !grad_alloc_[i])
            continue;
        n.bound->ensure_grad();
        auto& dst      = *n.bound->grad;
        const auto& g  = grads_[i].data;
        for (size_t j = 0; j < g.size(); ++j)
            dst[j] += g[j];
    }
}

// ------------------------------------------------------------ grad check --

GradCheckReport grad_check(ParameterStore& store, const BuildLossFn& build_loss,
                           int64_t n_coords, double h, uint64_t seed) {
    // analytic gradients
    store.zero_grads();
    {
        Graph g;
        Graph::NodeId loss = build_loss(g);
        g.backward(loss);
    }

    struct Coord {
        std::string name;
        int64_t idx;
    };
    std::vector<Coord> all;
    for (auto& [name, e] : store.entries()) {
        if (!e.trainable)
            continue;
        for (int64_t i = 0; i < e.tensor.numel(); ++i)
            all.push_back({name, i});
    }
    require(!all.empty(), "grad_check: store has no trainable parameters");

    Rng rng(seed);
    std::vector<Coord> picked;
    if (static_cast<int64_t>(all.size()) <= n_coords) {
        picked = all;
    } else {
        for (int64_t i = 0; i < n_coords; ++i)
            picked.push_back(all[static_cast<size_t>(rng.uniform_int(
                static_cast<int64_t>(all.size())))]);
    }

    GradCheckReport rep;
    rep.coords_checked = static_cast<int64_t>(picked.size());
    for (const Coord& c : picked) {
        Tensor& t          = store.get(c.name);
        const double saved = t.data[static_cast<size_t>(c.idx)];
        const double ana   = (*t.grad)[static_cast<size_t>(c.idx)];

        t.data[static_cast<size_t>(c.idx)] = saved + h;
        double lp;
        {
            Graph g;
            lp = g.value(build_loss(g)).data[0];
        }
        t.data[static_cast<size_t>(c.idx)] = saved - h;
        double lm;
        {
            Graph g;
            lm = g.value(build_loss(g)).data[0];
        }
        t.data[static_cast<size_t>(c.idx)] = saved;

        const double num = (lp - lm) / (2.0 * h);
        const double abs = std::fabs(ana - num);
        const double rel = abs / std::max({std::fabs(ana), std::fabs(num), 1e-8});
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_param = c.name + "[" + std::to_string(c.idx) + "]";
        }
        rep.max_abs_err = std::max(rep.max_abs_err, abs);
    }
    return rep;
}

}  // namespace edmsr
