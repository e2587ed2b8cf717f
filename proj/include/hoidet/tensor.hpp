#pragma once

// Small reverse-mode autodiff engine over dense row-major double tensors.
// Graphs are built eagerly by the free functions below and freed when the
// last Value handle goes out of scope. Parameters are leaves created with
// needs_grad=true; their .g buffers persist across backward() calls and
// accumulate until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoidet::ag {

using Scalar = double;

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
    std::vector<int> shape;
    std::vector<Scalar> x;
    std::vector<Scalar> g;
    bool needs_grad = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backprop;
    std::vector<Scalar> aux;  // op-specific cache (e.g. im2col buffer)

    size_t numel() const {
        size_t n = 1;
        for (int d : shape) n *= size_t(d);
        return n;
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    void ensure_grad() {
        if (g.size() != x.size()) g.assign(x.size(), 0.0);
    }
};

// Thread-local switch; evaluation-mode forwards skip graph recording.
bool& grad_enabled();

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

Value make_value(std::vector<int> shape, bool needs_grad = false);
Value constant(std::vector<int> shape, const std::vector<Scalar>& data);
Value scalar(Scalar v);
Scalar item(const Value& v);

// elementwise / broadcast
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, Scalar s);
Value add_scalar(const Value& a, Scalar s);
Value rsub_scalar(Scalar s, const Value& a);  // s - a
Value add_rowvec(const Value& a, const Value& v);  // [R,C] + [C]
Value mul_colvec(const Value& a, const Value& v);  // [R,C] * [R,1]
Value div_colvec(const Value& a, const Value& v);
Value minimum(const Value& a, const Value& b);
Value maximum(const Value& a, const Value& b);
Value clamp_min(const Value& a, Scalar lo);

// nonlinearities
Value relu(const Value& a);
Value sigmoid(const Value& a);
Value exp_(const Value& a);
Value log_(const Value& a);
Value sqrt_(const Value& a);
Value square(const Value& a);
Value abs_(const Value& a);
Value pow_const(const Value& a, Scalar p);
Value softplus(const Value& a);  // log(1 + exp(x)), stable

// linear algebra
Value matmul(const Value& a, const Value& b);     // [m,k]x[k,n]
Value matmul_nt(const Value& a, const Value& b);  // [m,k] x [n,k]^T -> [m,n]
Value transpose(const Value& a);

// shape ops
Value reshape(const Value& a, std::vector<int> shape);
Value slice_rows(const Value& a, int r0, int r1);
Value slice_cols(const Value& a, int c0, int c1);
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value gather_rows(const Value& a, const std::vector<int>& idx);
Value gather_cols(const Value& a, const std::vector<int>& idx);
Value pick_per_row(const Value& a, const std::vector<int>& col);  // -> [R,1]

// reductions / normalization
Value sum_all(const Value& a);   // -> [1]
Value mean_all(const Value& a);  // -> [1]
Value sum_cols(const Value& a);  // [R,C] -> [R,1]
Value sum_rows(const Value& a);  // [R,C] -> [1,C]
Value softmax_rows(const Value& a);
Value log_softmax_rows(const Value& a);
Value layer_norm(const Value& x, const Value& gamma, const Value& beta, Scalar eps = 1e-5);

// x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]; zero padding
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);

void backward(const Value& loss);

}  // namespace hoidet::ag
