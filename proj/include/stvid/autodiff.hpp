#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "stvid/tensor.hpp"

namespace stvid {

struct Node;
using Var = std::shared_ptr<Node>;

// Gradients are kept outside the graph so concurrent backward passes over shared
// leaves (one per batch item) never touch the same storage.
using GradMap = std::unordered_map<const Node*, Tensor>;

struct Node {
    Tensor value;
    bool requires_grad = false;  // leaf the optimizer may update
    bool tracked = false;        // true if this node or any ancestor requires grad
    std::vector<Var> parents;
    // Propagates the incoming gradient to the parents' GradMap entries.
    std::function<void(const Tensor& gout, GradMap& gm)> backward_fn;
};

Var leaf(Tensor v, bool requires_grad = true);
Var constant(Tensor v);

// Reverse pass: visits each tracked node exactly once in reverse topological order.
// `root` must be scalar (numel == 1).
GradMap backward(const Var& root);

// Gradient of `root` w.r.t. `v`; zeros if v never received a contribution.
Tensor grad_of(const GradMap& gm, const Var& v);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var silu(const Var& x);

// ---- reductions ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mse(const Var& a, const Var& b);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);               // [m,k] x [k,n]
Var linear(const Var& x, const Var& w, const Var& b); // [n,k],[o,k],[o] -> [n,o]

// ---- convolutions ----
// x [N,C,H,W], k [O,C,kh,kw], zero padding (ph,pw); plain cross-correlation.
Var conv2d(const Var& x, const Var& k, int ph, int pw);
// x [T,C,H,W], k [O,C,kt], zero padding along T; every spatial site independent.
Var conv1d_time(const Var& x, const Var& k, int pad);
// stride-2 temporal conv, pad (kt-1)/2: out[t] reads x[2t + j - pad].  T even.
Var time_down_conv(const Var& x, const Var& k);
// transposed stride-2 temporal conv, kt <= 3: out[2i + j] += k[j] * x[i].
Var time_up_conv(const Var& x, const Var& k);

// ---- bias / embedding broadcast ----
Var add_channel_bias(const Var& x, const Var& b);     // [N,C,H,W] + [C]
Var add_sample_channel(const Var& x, const Var& e);   // [N,C,H,W] + [N,C]
Var row_select(const Var& table, const std::vector<int>& rows);  // [R,E] -> [n,E]

// ---- attention ----
// q,k,v [L,D]; softmax(q kᵀ / sqrt(D)) v.  Rows of the weight matrix sum to 1.
Var attention(const Var& q, const Var& k, const Var& v);

// ---- normalization ----
// Single-group GroupNorm over all non-leading axes per index of axis 0,
// with per-channel (axis 1) affine parameters.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- shape ops ----
enum class Resize { up, down };
// Nearest-neighbor resize by 2 along `axis`: down keeps even indices, up repeats.
Var resize_nearest(const Var& x, int axis, Resize dir);
Var concat(const Var& a, const Var& b, int axis);
Var slice(const Var& x, int axis, int start, int len);
// Column [T,C] of a [T,C,H,W] map at spatial site (h,w).
Var site(const Var& x, int h, int w);
// Inverse of site(): sites in row-major (h,w) order, each [T,C].
Var scatter_sites(const std::vector<Var>& sites, int H, int W);

// Tensor-level forward kernels (shared with inference paths and test oracles).
Tensor conv2d_fw(const Tensor& x, const Tensor& k, int ph, int pw);
Tensor conv1d_time_fw(const Tensor& x, const Tensor& k, int pad);
Tensor resize_nearest_fw(const Tensor& x, int axis, Resize dir);

// Max relative error between the autodiff gradient of f at x and central
// differences, elementwise, with denominator floor 1e-8.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace stvid
