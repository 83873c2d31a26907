#include "stvid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace stvid {

namespace {

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&, GradMap&)> bw, const char* name) {
    check_finite(value, name);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->tracked) n->tracked = true;
    n->parents = std::move(parents);
    if (n->tracked) n->backward_fn = std::move(bw);
    return n;
}

void accum(GradMap& gm, const Var& p, Tensor g) {
    if (!p->tracked) return;
    auto it = gm.find(p.get());
    if (it == gm.end()) {
        gm.emplace(p.get(), std::move(g));
    } else {
        Tensor& t = it->second;
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += g.data[i];
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ConfigError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// strides around one axis: (outer, n, inner)
struct AxisView {
    std::int64_t outer, n, inner;
};
AxisView axis_view(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisView v{1, shape[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) v.inner *= shape[static_cast<std::size_t>(i)];
    return v;
}

}  // namespace

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->tracked = requires_grad;
    return n;
}

Var constant(Tensor v) { return leaf(std::move(v), false); }

GradMap backward(const Var& root) {
    if (root->value.numel() != 1) throw ConfigError("backward: root must be scalar");
    GradMap gm;
    if (!root->tracked) return gm;

    // postorder over tracked nodes: producers before consumers, root last
    std::vector<const Node*> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<const Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            const Node* p = node->parents[next].get();
            ++next;
            if (p->tracked && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    gm.emplace(root.get(), Tensor::full(root->value.shape, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node* n = *it;
        auto g = gm.find(n);
        if (g == gm.end() || !n->backward_fn) continue;
        n->backward_fn(g->second, gm);
    }
    return gm;
}

Tensor grad_of(const GradMap& gm, const Var& v) {
    auto it = gm.find(v.get());
    if (it == gm.end()) return Tensor::zeros(v->value.shape);
    return it->second;
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_op(std::move(out), {a, b},
                   [a, b](const Tensor& g, GradMap& gm) {
                       accum(gm, a, g);
                       accum(gm, b, g);
                   },
                   "add");
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return make_op(std::move(out), {a, b},
                   [a, b](const Tensor& g, GradMap& gm) {
                       accum(gm, a, g);
                       Tensor gb = g;
                       for (double& v : gb.data) v = -v;
                       accum(gm, b, std::move(gb));
                   },
                   "sub");
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_op(std::move(out), {a, b},
                   [a, b](const Tensor& g, GradMap& gm) {
                       Tensor ga = g, gb = g;
                       for (std::size_t i = 0; i < g.data.size(); ++i) {
                           ga.data[i] *= b->value.data[i];
                           gb.data[i] *= a->value.data[i];
                       }
                       accum(gm, a, std::move(ga));
                       accum(gm, b, std::move(gb));
                   },
                   "mul");
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v += s;
    return make_op(std::move(out), {a},
                   [a](const Tensor& g, GradMap& gm) { accum(gm, a, g); }, "add_scalar");
}

Var mul_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v *= s;
    return make_op(std::move(out), {a},
                   [a, s](const Tensor& g, GradMap& gm) {
                       Tensor ga = g;
                       for (double& v : ga.data) v *= s;
                       accum(gm, a, std::move(ga));
                   },
                   "mul_scalar");
}

Var silu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) {
        double s = 1.0 / (1.0 + std::exp(-v));
        v = v * s;
    }
    return make_op(std::move(out), {x},
                   [x](const Tensor& g, GradMap& gm) {
                       Tensor gx = g;
                       for (std::size_t i = 0; i < g.data.size(); ++i) {
                           double v = x->value.data[i];
                           double s = 1.0 / (1.0 + std::exp(-v));
                           gx.data[i] *= s * (1.0 + v * (1.0 - s));
                       }
                       accum(gm, x, std::move(gx));
                   },
                   "silu");
}

// ---------------- reductions ----------------

Var sum_all(const Var& x) {
    double acc = 0.0;
    for (double v : x->value.data) acc += v;
    Tensor out({}, {acc});
    return make_op(std::move(out), {x},
                   [x](const Tensor& g, GradMap& gm) {
                       accum(gm, x, Tensor::full(x->value.shape, g.data[0]));
                   },
                   "sum_all");
}

Var mean_all(const Var& x) {
    double inv = 1.0 / static_cast<double>(x->value.numel());
    double acc = 0.0;
    for (double v : x->value.data) acc += v;
    Tensor out({}, {acc * inv});
    return make_op(std::move(out), {x},
                   [x, inv](const Tensor& g, GradMap& gm) {
                       accum(gm, x, Tensor::full(x->value.shape, g.data[0] * inv));
                   },
                   "mean_all");
}

Var mse(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean_all(mul(d, d));
}

// ---------------- linear algebra ----------------

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
        throw ConfigError("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
    int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
            double av = A.at(i, l);
            for (int j = 0; j < n; ++j) out.at(i, j) += av * B.at(l, j);
        }
    return make_op(std::move(out), {a, b},
                   [a, b, m, k, n](const Tensor& g, GradMap& gm) {
                       Tensor ga({m, k}), gb({k, n});
                       for (int i = 0; i < m; ++i)
                           for (int j = 0; j < n; ++j) {
                               double gv = g.at(i, j);
                               for (int l = 0; l < k; ++l) {
                                   ga.at(i, l) += gv * b->value.at(l, j);
                                   gb.at(l, j) += gv * a->value.at(i, l);
                               }
                           }
                       accum(gm, a, std::move(ga));
                       accum(gm, b, std::move(gb));
                   },
                   "matmul");
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    const Tensor& B = b->value;
    if (X.rank() != 2 || W.rank() != 2 || B.rank() != 1 || X.shape[1] != W.shape[1] || W.shape[0] != B.shape[0])
        throw ConfigError("linear: incompatible shapes x" + X.shape_str() + " w" + W.shape_str() + " b" + B.shape_str());
    int n = X.shape[0], k = X.shape[1], o = W.shape[0];
    Tensor out({n, o});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) {
            double acc = B.at(j);
            for (int l = 0; l < k; ++l) acc += X.at(i, l) * W.at(j, l);
            out.at(i, j) = acc;
        }
    return make_op(std::move(out), {x, w, b},
                   [x, w, b, n, k, o](const Tensor& g, GradMap& gm) {
                       Tensor gx({n, k}), gw({o, k}), gb({o});
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < o; ++j) {
                               double gv = g.at(i, j);
                               gb.at(j) += gv;
                               for (int l = 0; l < k; ++l) {
                                   gx.at(i, l) += gv * w->value.at(j, l);
                                   gw.at(j, l) += gv * x->value.at(i, l);
                               }
                           }
                       accum(gm, x, std::move(gx));
                       accum(gm, w, std::move(gw));
                       accum(gm, b, std::move(gb));
                   },
                   "linear");
}

// ---------------- convolutions ----------------

Tensor conv2d_fw(const Tensor& x, const Tensor& k, int ph, int pw) {
    if (x.rank() != 4 || k.rank() != 4)
        throw ConfigError("conv2d: expected rank-4 x and k, got x" + x.shape_str() + " k" + k.shape_str());
    int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    int O = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    if (k.shape[1] != C)
        throw ConfigError("conv2d: kernel input-channel axis " + std::to_string(k.shape[1]) +
                          " does not match x channel axis " + std::to_string(C));
    if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd, got " + k.shape_str());
    int Ho = H + 2 * ph - kh + 1, Wo = W + 2 * pw - kw + 1;
    if (Ho < 1 || Wo < 1) throw ConfigError("conv2d: kernel larger than padded input");
    Tensor out({N, O, Ho, Wo});
    // accumulation order per output element is (c, ih, iw) ascending, matching
    // the reference nested-loop oracle bit for bit
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            double* op = &out.data[(static_cast<std::size_t>(n) * O + o) * Ho * Wo];
            for (int c = 0; c < C; ++c) {
                const double* xp = &x.data[(static_cast<std::size_t>(n) * C + c) * H * W];
                const double* kp = &k.data[(static_cast<std::size_t>(o) * C + c) * kh * kw];
                for (int oh = 0; oh < Ho; ++oh) {
                    int ih0 = std::max(0, ph - oh), ih1 = std::min(kh, H + ph - oh);
                    double* orow = op + static_cast<std::size_t>(oh) * Wo;
                    for (int ih = ih0; ih < ih1; ++ih) {
                        const double* xrow = xp + static_cast<std::size_t>(oh + ih - ph) * W;
                        const double* krow = kp + static_cast<std::size_t>(ih) * kw;
                        for (int iw = 0; iw < kw; ++iw) {
                            double kv = krow[iw];
                            int ow0 = std::max(0, pw - iw), ow1 = std::min(Wo, W + pw - iw);
                            const double* xq = xrow + (ow0 + iw - pw);
                            double* oq = orow + ow0;
                            for (int ow = ow0; ow < ow1; ++ow) *oq++ += kv * *xq++;
                        }
                    }
                }
            }
        }
    return out;
}

Var conv2d(const Var& x, const Var& k, int ph, int pw) {
    Tensor out = conv2d_fw(x->value, k->value, ph, pw);
    return make_op(std::move(out), {x, k},
                   [x, k, ph, pw](const Tensor& g, GradMap& gm) {
                       const Tensor& X = x->value;
                       const Tensor& K = k->value;
                       int N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
                       int O = K.shape[0], kh = K.shape[2], kw = K.shape[3];
                       int Ho = g.shape[2], Wo = g.shape[3];
                       Tensor gx(X.shape), gk(K.shape);
                       for (int n = 0; n < N; ++n)
                           for (int o = 0; o < O; ++o) {
                               const double* gp = &g.data[(static_cast<std::size_t>(n) * O + o) * Ho * Wo];
                               for (int c = 0; c < C; ++c) {
                                   const double* xp = &X.data[(static_cast<std::size_t>(n) * C + c) * H * W];
                                   double* gxp = &gx.data[(static_cast<std::size_t>(n) * C + c) * H * W];
                                   for (int ih = 0; ih < kh; ++ih)
                                       for (int iw = 0; iw < kw; ++iw) {
                                           double kv = K.at(o, c, ih, iw);
                                           double acc = 0.0;
                                           int oh0 = std::max(0, ph - ih), oh1 = std::min(Ho, H + ph - ih);
                                           int ow0 = std::max(0, pw - iw), ow1 = std::min(Wo, W + pw - iw);
                                           for (int oh = oh0; oh < oh1; ++oh) {
                                               const double* grow = gp + static_cast<std::size_t>(oh) * Wo + ow0;
                                               const double* xrow =
                                                   xp + static_cast<std::size_t>(oh + ih - ph) * W + (ow0 + iw - pw);
                                               double* gxrow =
                                                   gxp + static_cast<std::size_t>(oh + ih - ph) * W + (ow0 + iw - pw);
                                               for (int ow = ow0; ow < ow1; ++ow) {
                                                   double gv = *grow++;
                                                   *gxrow++ += gv * kv;
                                                   acc += gv * *xrow++;
                                               }
                                           }
                                           gk.at(o, c, ih, iw) += acc;
                                       }
                               }
                           }
                       accum(gm, x, std::move(gx));
                       accum(gm, k, std::move(gk));
                   },
                   "conv2d");
}

Tensor conv1d_time_fw(const Tensor& x, const Tensor& k, int pad) {
    if (x.rank() != 4 || k.rank() != 3)
        throw ConfigError("conv1d_time: expected x rank 4 and k rank 3, got x" + x.shape_str() + " k" + k.shape_str());
    int T = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    int O = k.shape[0], kt = k.shape[2];
    if (k.shape[1] != C)
        throw ConfigError("conv1d_time: kernel channel axis " + std::to_string(k.shape[1]) +
                          " does not match x channel axis " + std::to_string(C));
    if (kt % 2 == 0) throw ConfigError("conv1d_time: kt must be odd, got " + std::to_string(kt));
    int To = T + 2 * pad - kt + 1;
    if (To < 1)
        throw ConfigError("conv1d_time: kt " + std::to_string(kt) + " exceeds padded length " +
                          std::to_string(T + 2 * pad));
    Tensor out({To, O, H, W});
    std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (int t = 0; t < To; ++t)
        for (int o = 0; o < O; ++o) {
            double* op = &out.data[(static_cast<std::size_t>(t) * O + o) * plane];
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < kt; ++j) {
                    int tt = t + j - pad;
                    if (tt < 0 || tt >= T) continue;
                    double w = k.at(o, c, j);
                    const double* ip = &x.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                    for (std::int64_t i = 0; i < plane; ++i) op[i] += w * ip[i];
                }
        }
    return out;
}

Var conv1d_time(const Var& x, const Var& k, int pad) {
    Tensor out = conv1d_time_fw(x->value, k->value, pad);
    return make_op(std::move(out), {x, k},
                   [x, k, pad](const Tensor& g, GradMap& gm) {
                       const Tensor& X = x->value;
                       const Tensor& K = k->value;
                       int T = X.shape[0], C = X.shape[1];
                       int O = K.shape[0], kt = K.shape[2];
                       int To = g.shape[0];
                       std::int64_t plane = static_cast<std::int64_t>(X.shape[2]) * X.shape[3];
                       Tensor gx(X.shape), gk(K.shape);
                       for (int t = 0; t < To; ++t)
                           for (int o = 0; o < O; ++o) {
                               const double* gp = &g.data[(static_cast<std::size_t>(t) * O + o) * plane];
                               for (int c = 0; c < C; ++c)
                                   for (int j = 0; j < kt; ++j) {
                                       int tt = t + j - pad;
                                       if (tt < 0 || tt >= T) continue;
                                       double w = K.at(o, c, j);
                                       double* gxp = &gx.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                                       const double* xp = &X.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                                       double acc = 0.0;
                                       for (std::int64_t i = 0; i < plane; ++i) {
                                           gxp[i] += w * gp[i];
                                           acc += gp[i] * xp[i];
                                       }
                                       gk.at(o, c, j) += acc;
                                   }
                           }
                       accum(gm, x, std::move(gx));
                       accum(gm, k, std::move(gk));
                   },
                   "conv1d_time");
}

Var time_down_conv(const Var& x, const Var& k) {
    const Tensor& X = x->value;
    const Tensor& K = k->value;
    if (X.rank() != 4 || K.rank() != 3 || K.shape[1] != X.shape[1])
        throw ConfigError("time_down_conv: incompatible shapes x" + X.shape_str() + " k" + K.shape_str());
    int T = X.shape[0], C = X.shape[1];
    int O = K.shape[0], kt = K.shape[2];
    if (kt % 2 == 0) throw ConfigError("time_down_conv: kt must be odd");
    if (T % 2 != 0) throw ConfigError("time_down_conv: T must be even, got " + std::to_string(T));
    int pad = (kt - 1) / 2;
    int To = T / 2;
    std::int64_t plane = static_cast<std::int64_t>(X.shape[2]) * X.shape[3];
    Tensor out({To, O, X.shape[2], X.shape[3]});
    for (int t = 0; t < To; ++t)
        for (int o = 0; o < O; ++o) {
            double* op = &out.data[(static_cast<std::size_t>(t) * O + o) * plane];
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < kt; ++j) {
                    int tt = 2 * t + j - pad;
                    if (tt < 0 || tt >= T) continue;
                    double w = K.at(o, c, j);
                    const double* ip = &X.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                    for (std::int64_t i = 0; i < plane; ++i) op[i] += w * ip[i];
                }
        }
    return make_op(std::move(out), {x, k},
                   [x, k](const Tensor& g, GradMap& gm) {
                       const Tensor& X = x->value;
                       const Tensor& K = k->value;
                       int T = X.shape[0], C = X.shape[1];
                       int O = K.shape[0], kt = K.shape[2];
                       int pad = (kt - 1) / 2, To = T / 2;
                       std::int64_t plane = static_cast<std::int64_t>(X.shape[2]) * X.shape[3];
                       Tensor gx(X.shape), gk(K.shape);
                       for (int t = 0; t < To; ++t)
                           for (int o = 0; o < O; ++o) {
                               const double* gp = &g.data[(static_cast<std::size_t>(t) * O + o) * plane];
                               for (int c = 0; c < C; ++c)
                                   for (int j = 0; j < kt; ++j) {
                                       int tt = 2 * t + j - pad;
                                       if (tt < 0 || tt >= T) continue;
                                       double w = K.at(o, c, j);
                                       double* gxp = &gx.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                                       const double* xp = &X.data[(static_cast<std::size_t>(tt) * C + c) * plane];
                                       double acc = 0.0;
                                       for (std::int64_t i = 0; i < plane; ++i) {
                                           gxp[i] += w * gp[i];
                                           acc += gp[i] * xp[i];
                                       }
                                       gk.at(o, c, j) += acc;
                                   }
                           }
                       accum(gm, x, std::move(gx));
                       accum(gm, k, std::move(gk));
                   },
                   "time_down_conv");
}

Var time_up_conv(const Var& x, const Var& k) {
    const Tensor& X = x->value;
    const Tensor& K = k->value;
    if (X.rank() != 4 || K.rank() != 3 || K.shape[1] != X.shape[1])
        throw ConfigError("time_up_conv: incompatible shapes x" + X.shape_str() + " k" + K.shape_str());
    int T = X.shape[0], C = X.shape[1];
    int O = K.shape[0], kt = K.shape[2];
    int To = 2 * T;
    std::int64_t plane = static_cast<std::int64_t>(X.shape[2]) * X.shape[3];
    // out[2i + j] += k[j] * x[i]
    Tensor out({To, O, X.shape[2], X.shape[3]});
    for (int t = 0; t < To; ++t)
        for (int o = 0; o < O; ++o) {
            double* op = &out.data[(static_cast<std::size_t>(t) * O + o) * plane];
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < kt; ++j) {
                    int num = t - j;
                    if (num < 0 || num % 2 != 0) continue;
                    int i0 = num / 2;
                    if (i0 >= T) continue;
                    double w = K.at(o, c, j);
                    const double* ip = &X.data[(static_cast<std::size_t>(i0) * C + c) * plane];
                    for (std::int64_t i = 0; i < plane; ++i) op[i] += w * ip[i];
                }
        }
    return make_op(std::move(out), {x, k},
                   [x, k](const Tensor& g, GradMap& gm) {
                       const Tensor& X = x->value;
                       const Tensor& K = k->value;
                       int T = X.shape[0], C = X.shape[1];
                       int O = K.shape[0], kt = K.shape[2];
                       int To = 2 * T;
                       std::int64_t plane = static_cast<std::int64_t>(X.shape[2]) * X.shape[3];
                       Tensor gx(X.shape), gk(K.shape);
                       for (int t = 0; t < To; ++t)
                           for (int o = 0; o < O; ++o) {
                               const double* gp = &g.data[(static_cast<std::size_t>(t) * O + o) * plane];
                               for (int c = 0; c < C; ++c)
                                   for (int j = 0; j < kt; ++j) {
                                       int num = t - j;
                                       if (num < 0 || num % 2 != 0) continue;
                                       int i0 = num / 2;
                                       if (i0 >= T) continue;
                                       double w = K.at(o, c, j);
                                       double* gxp = &gx.data[(static_cast<std::size_t>(i0) * C + c) * plane];
                                       const double* xp = &X.data[(static_cast<std::size_t>(i0) * C + c) * plane];
                                       double acc = 0.0;
                                       for (std::int64_t i = 0; i < plane; ++i) {
                                           gxp[i] += w * gp[i];
                                           acc += gp[i] * xp[i];
                                       }
                                       gk.at(o, c, j) += acc;
                                   }
                           }
                       accum(gm, x, std::move(gx));
                       accum(gm, k, std::move(gk));
                   },
                   "time_up_conv");
}

// ---------------- bias / embedding ----------------

Var add_channel_bias(const Var& x, const Var& b) {
    const Tensor& X = x->value;
    const Tensor& B = b->value;
    if (X.rank() < 2 || B.rank() != 1 || B.shape[0] != X.shape[1])
        throw ConfigError("add_channel_bias: bias " + B.shape_str() + " does not match channel axis of " + X.shape_str());
    int N = X.shape[0], C = X.shape[1];
    std::int64_t inner = X.numel() / (static_cast<std::int64_t>(N) * C);
    Tensor out = X;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double bv = B.at(c);
            double* p = &out.data[(static_cast<std::size_t>(n) * C + c) * inner];
            for (std::int64_t i = 0; i < inner; ++i) p[i] += bv;
        }
    return make_op(std::move(out), {x, b},
                   [x, b, N, C, inner](const Tensor& g, GradMap& gm) {
                       accum(gm, x, g);
                       Tensor gb({C});
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                               const double* p = &g.data[(static_cast<std::size_t>(n) * C + c) * inner];
                               double acc = 0.0;
                               for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
                               gb.at(c) += acc;
                           }
                       accum(gm, b, std::move(gb));
                   },
                   "add_channel_bias");
}

Var add_sample_channel(const Var& x, const Var& e) {
    const Tensor& X = x->value;
    const Tensor& E = e->value;
    if (X.rank() < 2 || E.rank() != 2 || E.shape[0] != X.shape[0] || E.shape[1] != X.shape[1])
        throw ConfigError("add_sample_channel: embedding " + E.shape_str() + " does not match " + X.shape_str());
    int N = X.shape[0], C = X.shape[1];
    std::int64_t inner = X.numel() / (static_cast<std::int64_t>(N) * C);
    Tensor out = X;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double ev = E.at(n, c);
            double* p = &out.data[(static_cast<std::size_t>(n) * C + c) * inner];
            for (std::int64_t i = 0; i < inner; ++i) p[i] += ev;
        }
    return make_op(std::move(out), {x, e},
                   [x, e, N, C, inner](const Tensor& g, GradMap& gm) {
                       accum(gm, x, g);
                       Tensor ge({N, C});
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                               const double* p = &g.data[(static_cast<std::size_t>(n) * C + c) * inner];
                               double acc = 0.0;
                               for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
                               ge.at(n, c) = acc;
                           }
                       accum(gm, e, std::move(ge));
                   },
                   "add_sample_channel");
}

Var row_select(const Var& table, const std::vector<int>& rows) {
    const Tensor& T = table->value;
    if (T.rank() != 2) throw ConfigError("row_select: table must be rank 2, got " + T.shape_str());
    int R = T.shape[0], E = T.shape[1];
    int n = static_cast<int>(rows.size());
    for (int r : rows)
        if (r < 0 || r >= R) throw ConfigError("row_select: row " + std::to_string(r) + " out of range [0," + std::to_string(R) + ")");
    Tensor out({n, E});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < E; ++j) out.at(i, j) = T.at(rows[static_cast<std::size_t>(i)], j);
    return make_op(std::move(out), {table},
                   [table, rows, E](const Tensor& g, GradMap& gm) {
                       Tensor gt(table->value.shape);
                       for (std::size_t i = 0; i < rows.size(); ++i)
                           for (int j = 0; j < E; ++j) gt.at(rows[i], j) += g.at(static_cast<int>(i), j);
                       accum(gm, table, std::move(gt));
                   },
                   "row_select");
}

// ---------------- attention ----------------

Var attention(const Var& q, const Var& k, const Var& v) {
    const Tensor& Q = q->value;
    const Tensor& K = k->value;
    const Tensor& V = v->value;
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2)
        throw ConfigError("attention: q,k,v must be rank 2");
    if (Q.shape[0] == 0) throw ConfigError("attention: empty sequence (L == 0)");
    if (Q.shape[1] != K.shape[1] || K.shape[0] != V.shape[0] || Q.shape[1] != V.shape[1])
        throw ConfigError("attention: incompatible shapes q" + Q.shape_str() + " k" + K.shape_str() + " v" + V.shape_str());
    int L = Q.shape[0], D = Q.shape[1], Lk = K.shape[0];
    double scale = 1.0 / std::sqrt(static_cast<double>(D));

    // softmax(q kᵀ * scale), rows over keys
    Tensor P({L, Lk});
    for (int i = 0; i < L; ++i) {
        double mx = -1e300;
        for (int j = 0; j < Lk; ++j) {
            double s = 0.0;
            for (int d = 0; d < D; ++d) s += Q.at(i, d) * K.at(j, d);
            P.at(i, j) = s * scale;
            mx = std::max(mx, P.at(i, j));
        }
        double z = 0.0;
        for (int j = 0; j < Lk; ++j) {
            P.at(i, j) = std::exp(P.at(i, j) - mx);
            z += P.at(i, j);
        }
        for (int j = 0; j < Lk; ++j) P.at(i, j) /= z;
    }
    Tensor out({L, D});
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < Lk; ++j) {
            double p = P.at(i, j);
            for (int d = 0; d < D; ++d) out.at(i, d) += p * V.at(j, d);
        }
    return make_op(std::move(out), {q, k, v},
                   [q, k, v, P, L, Lk, D, scale](const Tensor& g, GradMap& gm) {
                       const Tensor& Q = q->value;
                       const Tensor& K = k->value;
                       const Tensor& V = v->value;
                       Tensor gq({L, D}), gk({Lk, D}), gv({Lk, D});
                       for (int i = 0; i < L; ++i) {
                           // dP then dS row by row
                           std::vector<double> dP(static_cast<std::size_t>(Lk), 0.0);
                           for (int j = 0; j < Lk; ++j) {
                               double acc = 0.0;
                               for (int d = 0; d < D; ++d) acc += g.at(i, d) * V.at(j, d);
                               dP[static_cast<std::size_t>(j)] = acc;
                           }
                           double dot = 0.0;
                           for (int j = 0; j < Lk; ++j) dot += dP[static_cast<std::size_t>(j)] * P.at(i, j);
                           for (int j = 0; j < Lk; ++j) {
                               double p = P.at(i, j);
                               double ds = p * (dP[static_cast<std::size_t>(j)] - dot) * scale;
                               for (int d = 0; d < D; ++d) {
                                   gq.at(i, d) += ds * K.at(j, d);
                                   gk.at(j, d) += ds * Q.at(i, d);
                                   gv.at(j, d) += P.at(i, j) * g.at(i, d);
                               }
                           }
                       }
                       // gv accumulated P-weighted above already includes all rows
                       accum(gm, q, std::move(gq));
                       accum(gm, k, std::move(gk));
                       accum(gm, v, std::move(gv));
                   },
                   "attention");
}

// ---------------- normalization ----------------

Var group_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& X = x->value;
    const Tensor& G = gamma->value;
    const Tensor& B = beta->value;
    if (X.rank() < 2) throw ConfigError("group_norm: x must have at least 2 axes, got " + X.shape_str());
    int N = X.shape[0], C = X.shape[1];
    if (G.rank() != 1 || B.rank() != 1 || G.shape[0] != C || B.shape[0] != C)
        throw ConfigError("group_norm: affine params " + G.shape_str() + "/" + B.shape_str() +
                          " do not match channel axis of " + X.shape_str());
    std::int64_t M = X.numel() / N;            // elements per sample
    std::int64_t inner = M / C;                // elements per channel per sample
    Tensor xhat(X.shape);
    std::vector<double> inv_std(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        const double* p = &X.data[static_cast<std::size_t>(n) * M];
        double mean = 0.0;
        for (std::int64_t i = 0; i < M; ++i) mean += p[i];
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (std::int64_t i = 0; i < M; ++i) {
            double d = p[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(M);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(n)] = inv;
        double* xp = &xhat.data[static_cast<std::size_t>(n) * M];
        for (std::int64_t i = 0; i < M; ++i) xp[i] = (p[i] - mean) * inv;
    }
    Tensor out(X.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double gc = G.at(c), bc = B.at(c);
            const double* xp = &xhat.data[(static_cast<std::size_t>(n) * C + c) * inner];
            double* op = &out.data[(static_cast<std::size_t>(n) * C + c) * inner];
            for (std::int64_t i = 0; i < inner; ++i) op[i] = gc * xp[i] + bc;
        }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, N, C, M, inner](const Tensor& g, GradMap& gm) {
                       const Tensor& G = gamma->value;
                       Tensor gx(x->value.shape), gg({C}), gb({C});
                       for (int n = 0; n < N; ++n) {
                           // dxhat = g * gamma_c, reduced stats over the sample
                           std::vector<double> dxhat(static_cast<std::size_t>(M));
                           double m1 = 0.0, m2 = 0.0;
                           for (int c = 0; c < C; ++c) {
                               double gc = G.at(c);
                               const double* gp = &g.data[(static_cast<std::size_t>(n) * C + c) * inner];
                               const double* xp = &xhat.data[(static_cast<std::size_t>(n) * C + c) * inner];
                               double* dp = &dxhat[static_cast<std::size_t>(c * inner)];
                               double sg = 0.0, sgx = 0.0;
                               for (std::int64_t i = 0; i < inner; ++i) {
                                   dp[i] = gp[i] * gc;
                                   m1 += dp[i];
                                   m2 += dp[i] * xp[i];
                                   sg += gp[i];
                                   sgx += gp[i] * xp[i];
                               }
                               gb.at(c) += sg;
                               gg.at(c) += sgx;
                           }
                           m1 /= static_cast<double>(M);
                           m2 /= static_cast<double>(M);
                           double inv = inv_std[static_cast<std::size_t>(n)];
                           const double* xp = &xhat.data[static_cast<std::size_t>(n) * M];
                           double* gxp = &gx.data[static_cast<std::size_t>(n) * M];
                           for (std::int64_t i = 0; i < M; ++i)
                               gxp[i] = inv * (dxhat[static_cast<std::size_t>(i)] - m1 - xp[i] * m2);
                       }
                       accum(gm, x, std::move(gx));
                       accum(gm, gamma, std::move(gg));
                       accum(gm, beta, std::move(gb));
                   },
                   "group_norm");
}

// ---------------- shape ops ----------------

Tensor resize_nearest_fw(const Tensor& x, int axis, Resize dir) {
    AxisView v = axis_view(x.shape, axis);
    std::vector<int> oshape = x.shape;
    if (dir == Resize::down) {
        if (v.n % 2 != 0)
            throw ConfigError("resize_nearest: down requires even extent on axis " + std::to_string(axis) +
                              ", got " + std::to_string(v.n));
        oshape[static_cast<std::size_t>(axis)] = static_cast<int>(v.n / 2);
    } else {
        oshape[static_cast<std::size_t>(axis)] = static_cast<int>(v.n * 2);
    }
    Tensor out(oshape);
    std::int64_t on = oshape[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t i = 0; i < on; ++i) {
            std::int64_t src = (dir == Resize::down) ? 2 * i : i / 2;
            const double* ip = &x.data[static_cast<std::size_t>((o * v.n + src) * v.inner)];
            double* op = &out.data[static_cast<std::size_t>((o * on + i) * v.inner)];
            for (std::int64_t j = 0; j < v.inner; ++j) op[j] = ip[j];
        }
    return out;
}

Var resize_nearest(const Var& x, int axis, Resize dir) {
    Tensor out = resize_nearest_fw(x->value, axis, dir);
    return make_op(std::move(out), {x},
                   [x, axis, dir](const Tensor& g, GradMap& gm) {
                       AxisView v = axis_view(x->value.shape, axis);
                       Tensor gx(x->value.shape);
                       std::int64_t on = g.shape[static_cast<std::size_t>(axis)];
                       for (std::int64_t o = 0; o < v.outer; ++o)
                           for (std::int64_t i = 0; i < on; ++i) {
                               std::int64_t src = (dir == Resize::down) ? 2 * i : i / 2;
                               const double* gp = &g.data[static_cast<std::size_t>((o * on + i) * v.inner)];
                               double* xp = &gx.data[static_cast<std::size_t>((o * v.n + src) * v.inner)];
                               for (std::int64_t j = 0; j < v.inner; ++j) xp[j] += gp[j];
                           }
                       accum(gm, x, std::move(gx));
                   },
                   "resize_nearest");
}

Var concat(const Var& a, const Var& b, int axis) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != B.rank()) throw ConfigError("concat: rank mismatch " + A.shape_str() + " vs " + B.shape_str());
    for (int i = 0; i < A.rank(); ++i)
        if (i != axis && A.shape[static_cast<std::size_t>(i)] != B.shape[static_cast<std::size_t>(i)])
            throw ConfigError("concat: extent mismatch on axis " + std::to_string(i) + ": " + A.shape_str() +
                              " vs " + B.shape_str());
    AxisView va = axis_view(A.shape, axis);
    AxisView vb = axis_view(B.shape, axis);
    std::vector<int> oshape = A.shape;
    oshape[static_cast<std::size_t>(axis)] = static_cast<int>(va.n + vb.n);
    Tensor out(oshape);
    std::int64_t on = va.n + vb.n;
    for (std::int64_t o = 0; o < va.outer; ++o) {
        double* op = &out.data[static_cast<std::size_t>(o * on * va.inner)];
        const double* ap = &A.data[static_cast<std::size_t>(o * va.n * va.inner)];
        const double* bp = &B.data[static_cast<std::size_t>(o * vb.n * vb.inner)];
        std::copy(ap, ap + va.n * va.inner, op);
        std::copy(bp, bp + vb.n * vb.inner, op + va.n * va.inner);
    }
    return make_op(std::move(out), {a, b},
                   [a, b, axis](const Tensor& g, GradMap& gm) {
                       AxisView va = axis_view(a->value.shape, axis);
                       AxisView vb = axis_view(b->value.shape, axis);
                       Tensor ga(a->value.shape), gb(b->value.shape);
                       std::int64_t on = va.n + vb.n;
                       for (std::int64_t o = 0; o < va.outer; ++o) {
                           const double* gp = &g.data[static_cast<std::size_t>(o * on * va.inner)];
                           std::copy(gp, gp + va.n * va.inner, &ga.data[static_cast<std::size_t>(o * va.n * va.inner)]);
                           std::copy(gp + va.n * va.inner, gp + on * va.inner,
                                     &gb.data[static_cast<std::size_t>(o * vb.n * vb.inner)]);
                       }
                       accum(gm, a, std::move(ga));
                       accum(gm, b, std::move(gb));
                   },
                   "concat");
}

Var slice(const Var& x, int axis, int start, int len) {
    const Tensor& X = x->value;
    AxisView v = axis_view(X.shape, axis);
    if (start < 0 || len < 1 || start + len > v.n)
        throw ConfigError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of bounds on axis " + std::to_string(axis) + " of " + X.shape_str());
    std::vector<int> oshape = X.shape;
    oshape[static_cast<std::size_t>(axis)] = len;
    Tensor out(oshape);
    for (std::int64_t o = 0; o < v.outer; ++o) {
        const double* ip = &X.data[static_cast<std::size_t>((o * v.n + start) * v.inner)];
        double* op = &out.data[static_cast<std::size_t>(o * len * v.inner)];
        std::copy(ip, ip + len * v.inner, op);
    }
    return make_op(std::move(out), {x},
                   [x, axis, start, len](const Tensor& g, GradMap& gm) {
                       AxisView v = axis_view(x->value.shape, axis);
                       Tensor gx(x->value.shape);
                       for (std::int64_t o = 0; o < v.outer; ++o) {
                           const double* gp = &g.data[static_cast<std::size_t>(o * len * v.inner)];
                           double* xp = &gx.data[static_cast<std::size_t>((o * v.n + start) * v.inner)];
                           std::copy(gp, gp + len * v.inner, xp);
                       }
                       accum(gm, x, std::move(gx));
                   },
                   "slice");
}

Var site(const Var& x, int h, int w) {
    const Tensor& X = x->value;
    if (X.rank() != 4) throw ConfigError("site: x must be rank 4, got " + X.shape_str());
    int T = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
    if (h < 0 || h >= H || w < 0 || w >= W) throw ConfigError("site: (h,w) out of range");
    Tensor out({T, C});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) out.at(t, c) = X.at(t, c, h, w);
    return make_op(std::move(out), {x},
                   [x, h, w, T, C](const Tensor& g, GradMap& gm) {
                       Tensor gx(x->value.shape);
                       for (int t = 0; t < T; ++t)
                           for (int c = 0; c < C; ++c) gx.at(t, c, h, w) = g.at(t, c);
                       accum(gm, x, std::move(gx));
                   },
                   "site");
}

Var scatter_sites(const std::vector<Var>& sites, int H, int W) {
    if (sites.empty() || static_cast<int>(sites.size()) != H * W)
        throw ConfigError("scatter_sites: expected H*W site tensors");
    int T = sites[0]->value.shape[0], C = sites[0]->value.shape[1];
    Tensor out({T, C, H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const Tensor& s = sites[static_cast<std::size_t>(h * W + w)]->value;
            if (s.rank() != 2 || s.shape[0] != T || s.shape[1] != C)
                throw ConfigError("scatter_sites: site shape mismatch " + s.shape_str());
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < C; ++c) out.at(t, c, h, w) = s.at(t, c);
        }
    return make_op(std::move(out), sites,
                   [sites, H, W, T, C](const Tensor& g, GradMap& gm) {
                       for (int h = 0; h < H; ++h)
                           for (int w = 0; w < W; ++w) {
                               Tensor gs({T, C});
                               for (int t = 0; t < T; ++t)
                                   for (int c = 0; c < C; ++c) gs.at(t, c) = g.at(t, c, h, w);
                               accum(gm, sites[static_cast<std::size_t>(h * W + w)], std::move(gs));
                           }
                   },
                   "scatter_sites");
}

// ---------------- gradient checking ----------------

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps) {
    Var xv = leaf(x, true);
    Var y = f(xv);
    if (y->value.numel() != 1) throw ConfigError("grad_check: f must return a scalar");
    require_finite(y->value, "grad_check f(x)");
    GradMap gm = backward(y);
    Tensor g = grad_of(gm, xv);

    auto eval = [&f](const Tensor& t) {
        Var out = f(leaf(t, false));
        require_finite(out->value, "grad_check f(x +/- eps)");
        return out->value.data[0];
    };

    double max_err = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] += eps;
        xm.data[i] -= eps;
        double fd = (eval(xp) - eval(xm)) / (2.0 * eps);
        double ad = g.data[i];
        double denom = std::max({1e-8, std::fabs(fd), std::fabs(ad)});
        max_err = std::max(max_err, std::fabs(ad - fd) / denom);
    }
    return max_err;
}

}  // namespace stvid
