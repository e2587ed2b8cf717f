#include "hoidet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hoidet::ag {

using EMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

Value make_value(std::vector<int> shape, bool needs_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->x.assign(n->numel(), 0.0);
    n->needs_grad = needs_grad;
    return n;
}

Value constant(std::vector<int> shape, const std::vector<Scalar>& data) {
    auto n = make_value(std::move(shape));
    if (n->numel() != data.size()) throw std::invalid_argument("constant: size mismatch");
    n->x = data;
    return n;
}

Value scalar(Scalar v) {
    auto n = make_value({1});
    n->x[0] = v;
    return n;
}

Scalar item(const Value& v) {
    if (v->numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return v->x[0];
}

namespace {

bool same_shape(const Value& a, const Value& b) { return a->shape == b->shape; }

// Registers `out` as the child of `parents` with backward `fn` when grads are
// on and some parent wants them; otherwise leaves the node as a plain buffer.
void attach(Value& out, std::vector<Value> parents, std::function<void(Node&)> fn) {
    bool any = false;
    for (auto& p : parents) any = any || p->needs_grad;
    if (!grad_enabled() || !any) return;
    out->needs_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

void add_grad(const Value& p, size_t i, Scalar v) {
    if (p->needs_grad) p->g[i] += v;
}

Value unary(const Value& a, const std::function<Scalar(Scalar)>& f,
            const std::function<Scalar(Scalar, Scalar)>& dfdx /* (x, y) -> dy/dx */) {
    auto out = make_value(a->shape);
    for (size_t i = 0; i < a->x.size(); ++i) out->x[i] = f(a->x[i]);
    attach(out, {a}, [a, dfdx](Node& self) {
        if (!a->needs_grad) return;
        for (size_t i = 0; i < a->x.size(); ++i) a->g[i] += self.g[i] * dfdx(a->x[i], self.x[i]);
    });
    return out;
}

}  // namespace

Value add(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("add: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = a->x[i] + b->x[i];
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            add_grad(a, i, self.g[i]);
            add_grad(b, i, self.g[i]);
        }
    });
    return out;
}

Value sub(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("sub: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = a->x[i] - b->x[i];
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            add_grad(a, i, self.g[i]);
            add_grad(b, i, -self.g[i]);
        }
    });
    return out;
}

Value mul(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("mul: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = a->x[i] * b->x[i];
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            add_grad(a, i, self.g[i] * b->x[i]);
            add_grad(b, i, self.g[i] * a->x[i]);
        }
    });
    return out;
}

Value div(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("div: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = a->x[i] / b->x[i];
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            add_grad(a, i, self.g[i] / b->x[i]);
            add_grad(b, i, -self.g[i] * a->x[i] / (b->x[i] * b->x[i]));
        }
    });
    return out;
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value scale(const Value& a, Scalar s) {
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = a->x[i] * s;
    attach(out, {a}, [a, s](Node& self) {
        if (!a->needs_grad) return;
        for (size_t i = 0; i < self.g.size(); ++i) a->g[i] += self.g[i] * s;
    });
    return out;
}

Value add_scalar(const Value& a, Scalar s) {
    return unary(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return 1.0; });
}

Value rsub_scalar(Scalar s, const Value& a) {
    return unary(a, [s](Scalar x) { return s - x; }, [](Scalar, Scalar) { return -1.0; });
}

Value add_rowvec(const Value& a, const Value& v) {
    int R = a->rows(), C = a->cols();
    if (int(v->numel()) != C) throw std::invalid_argument("add_rowvec: size mismatch");
    auto out = make_value(a->shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out->x[size_t(r) * C + c] = a->x[size_t(r) * C + c] + v->x[c];
    attach(out, {a, v}, [a, v, R, C](Node& self) {
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) {
                add_grad(a, size_t(r) * C + c, self.g[size_t(r) * C + c]);
                add_grad(v, c, self.g[size_t(r) * C + c]);
            }
    });
    return out;
}

Value mul_colvec(const Value& a, const Value& v) {
    int R = a->rows(), C = a->cols();
    if (int(v->numel()) != R) throw std::invalid_argument("mul_colvec: size mismatch");
    auto out = make_value(a->shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out->x[size_t(r) * C + c] = a->x[size_t(r) * C + c] * v->x[r];
    attach(out, {a, v}, [a, v, R, C](Node& self) {
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) {
                size_t i = size_t(r) * C + c;
                add_grad(a, i, self.g[i] * v->x[r]);
                add_grad(v, r, self.g[i] * a->x[i]);
            }
    });
    return out;
}

Value div_colvec(const Value& a, const Value& v) {
    int R = a->rows(), C = a->cols();
    if (int(v->numel()) != R) throw std::invalid_argument("div_colvec: size mismatch");
    auto out = make_value(a->shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out->x[size_t(r) * C + c] = a->x[size_t(r) * C + c] / v->x[r];
    attach(out, {a, v}, [a, v, R, C](Node& self) {
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) {
                size_t i = size_t(r) * C + c;
                add_grad(a, i, self.g[i] / v->x[r]);
                add_grad(v, r, -self.g[i] * a->x[i] / (v->x[r] * v->x[r]));
            }
    });
    return out;
}

Value minimum(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("minimum: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = std::min(a->x[i], b->x[i]);
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            if (a->x[i] <= b->x[i]) add_grad(a, i, self.g[i]);
            else add_grad(b, i, self.g[i]);
        }
    });
    return out;
}

Value maximum(const Value& a, const Value& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("maximum: shape mismatch");
    auto out = make_value(a->shape);
    for (size_t i = 0; i < out->x.size(); ++i) out->x[i] = std::max(a->x[i], b->x[i]);
    attach(out, {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.g.size(); ++i) {
            if (a->x[i] >= b->x[i]) add_grad(a, i, self.g[i]);
            else add_grad(b, i, self.g[i]);
        }
    });
    return out;
}

Value clamp_min(const Value& a, Scalar lo) {
    return unary(
        a, [lo](Scalar x) { return std::max(x, lo); },
        [lo](Scalar x, Scalar) { return x >= lo ? 1.0 : 0.0; });
}

Value relu(const Value& a) {
    return unary(a, [](Scalar x) { return x > 0 ? x : 0.0; },
                 [](Scalar x, Scalar) { return x > 0 ? 1.0 : 0.0; });
}

Value sigmoid(const Value& a) {
    return unary(
        a,
        [](Scalar x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Value exp_(const Value& a) {
    return unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Value log_(const Value& a) {
    return unary(a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return 1.0 / x; });
}

Value sqrt_(const Value& a) {
    return unary(a, [](Scalar x) { return std::sqrt(x); },
                 [](Scalar, Scalar y) { return 0.5 / y; });
}

Value square(const Value& a) {
    return unary(a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return 2.0 * x; });
}

Value abs_(const Value& a) {
    return unary(a, [](Scalar x) { return std::abs(x); },
                 [](Scalar x, Scalar) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Value pow_const(const Value& a, Scalar p) {
    return unary(a, [p](Scalar x) { return std::pow(x, p); },
                 [p](Scalar x, Scalar) { return p * std::pow(x, p - 1.0); });
}

Value softplus(const Value& a) {
    return unary(
        a,
        [](Scalar x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](Scalar x, Scalar) {
            return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
}

Value matmul(const Value& a, const Value& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("matmul: shape mismatch");
    int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_value({m, n});
    MapM(out->x.data(), m, n).noalias() = MapC(a->x.data(), m, k) * MapC(b->x.data(), k, n);
    attach(out, {a, b}, [a, b, m, k, n](Node& self) {
        MapC dy(self.g.data(), m, n);
        if (a->needs_grad)
            MapM(a->g.data(), m, k).noalias() += dy * MapC(b->x.data(), k, n).transpose();
        if (b->needs_grad)
            MapM(b->g.data(), k, n).noalias() += MapC(a->x.data(), m, k).transpose() * dy;
    });
    return out;
}

Value matmul_nt(const Value& a, const Value& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
        throw std::invalid_argument("matmul_nt: shape mismatch");
    int m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = make_value({m, n});
    MapM(out->x.data(), m, n).noalias() =
        MapC(a->x.data(), m, k) * MapC(b->x.data(), n, k).transpose();
    attach(out, {a, b}, [a, b, m, k, n](Node& self) {
        MapC dy(self.g.data(), m, n);
        if (a->needs_grad)
            MapM(a->g.data(), m, k).noalias() += dy * MapC(b->x.data(), n, k);
        if (b->needs_grad)
            MapM(b->g.data(), n, k).noalias() += dy.transpose() * MapC(a->x.data(), m, k);
    });
    return out;
}

Value transpose(const Value& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("transpose: need 2-d");
    int R = a->shape[0], C = a->shape[1];
    auto out = make_value({C, R});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out->x[size_t(c) * R + r] = a->x[size_t(r) * C + c];
    attach(out, {a}, [a, R, C](Node& self) {
        if (!a->needs_grad) return;
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) a->g[size_t(r) * C + c] += self.g[size_t(c) * R + r];
    });
    return out;
}

Value reshape(const Value& a, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    if (n != a->numel()) throw std::invalid_argument("reshape: element count mismatch");
    auto out = make_value(std::move(shape));
    out->x = a->x;
    attach(out, {a}, [a](Node& self) {
        if (!a->needs_grad) return;
        for (size_t i = 0; i < self.g.size(); ++i) a->g[i] += self.g[i];
    });
    return out;
}

Value slice_rows(const Value& a, int r0, int r1) {
    int R = a->rows(), C = a->cols();
    if (r0 < 0 || r1 > R || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    auto out = make_value({r1 - r0, C});
    std::copy(a->x.begin() + size_t(r0) * C, a->x.begin() + size_t(r1) * C, out->x.begin());
    attach(out, {a}, [a, r0, C](Node& self) {
        if (!a->needs_grad) return;
        for (size_t i = 0; i < self.g.size(); ++i) a->g[size_t(r0) * C + i] += self.g[i];
    });
    return out;
}

Value slice_cols(const Value& a, int c0, int c1) {
    int R = a->rows(), C = a->cols();
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    int W = c1 - c0;
    auto out = make_value({R, W});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < W; ++c) out->x[size_t(r) * W + c] = a->x[size_t(r) * C + c0 + c];
    attach(out, {a}, [a, c0, C, W](Node& self) {
        if (!a->needs_grad) return;
        int R = self.rows();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) a->g[size_t(r) * C + c0 + c] += self.g[size_t(r) * W + c];
    });
    return out;
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int C = parts[0]->cols(), R = 0;
    for (auto& p : parts) {
        if (p->cols() != C) throw std::invalid_argument("concat_rows: col mismatch");
        R += p->rows();
    }
    auto out = make_value({R, C});
    size_t off = 0;
    for (auto& p : parts) {
        std::copy(p->x.begin(), p->x.end(), out->x.begin() + off);
        off += p->x.size();
    }
    attach(out, parts, [parts](Node& self) {
        size_t off = 0;
        for (auto& p : parts) {
            if (p->needs_grad)
                for (size_t i = 0; i < p->x.size(); ++i) p->g[i] += self.g[off + i];
            off += p->x.size();
        }
    });
    return out;
}

Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int R = parts[0]->rows(), C = 0;
    for (auto& p : parts) {
        if (p->rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
        C += p->cols();
    }
    auto out = make_value({R, C});
    int c0 = 0;
    for (auto& p : parts) {
        int W = p->cols();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) out->x[size_t(r) * C + c0 + c] = p->x[size_t(r) * W + c];
        c0 += W;
    }
    attach(out, parts, [parts, R, C](Node& self) {
        int c0 = 0;
        for (auto& p : parts) {
            int W = p->cols();
            if (p->needs_grad)
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < W; ++c)
                        p->g[size_t(r) * W + c] += self.g[size_t(r) * C + c0 + c];
            c0 += W;
        }
    });
    return out;
}

Value gather_rows(const Value& a, const std::vector<int>& idx) {
    int R = a->rows(), C = a->cols();
    for (int i : idx)
        if (i < 0 || i >= R) throw std::invalid_argument("gather_rows: index out of range");
    auto out = make_value({int(idx.size()), C});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(a->x.begin() + size_t(idx[r]) * C, a->x.begin() + size_t(idx[r] + 1) * C,
                  out->x.begin() + r * C);
    attach(out, {a}, [a, idx, C](Node& self) {
        if (!a->needs_grad) return;
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < C; ++c) a->g[size_t(idx[r]) * C + c] += self.g[r * C + c];
    });
    return out;
}

Value gather_cols(const Value& a, const std::vector<int>& idx) {
    int R = a->rows(), C = a->cols();
    for (int i : idx)
        if (i < 0 || i >= C) throw std::invalid_argument("gather_cols: index out of range");
    int W = int(idx.size());
    auto out = make_value({R, W});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < W; ++c) out->x[size_t(r) * W + c] = a->x[size_t(r) * C + idx[c]];
    attach(out, {a}, [a, idx, C, W](Node& self) {
        if (!a->needs_grad) return;
        int R = self.rows();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) a->g[size_t(r) * C + idx[c]] += self.g[size_t(r) * W + c];
    });
    return out;
}

Value pick_per_row(const Value& a, const std::vector<int>& col) {
    int R = a->rows(), C = a->cols();
    if (int(col.size()) != R) throw std::invalid_argument("pick_per_row: index count mismatch");
    for (int c : col)
        if (c < 0 || c >= C) throw std::invalid_argument("pick_per_row: index out of range");
    auto out = make_value({R, 1});
    for (int r = 0; r < R; ++r) out->x[r] = a->x[size_t(r) * C + col[r]];
    attach(out, {a}, [a, col, C](Node& self) {
        if (!a->needs_grad) return;
        for (int r = 0; r < self.rows(); ++r) a->g[size_t(r) * C + col[r]] += self.g[r];
    });
    return out;
}

Value sum_all(const Value& a) {
    auto out = make_value({1});
    Scalar s = 0;
    for (Scalar v : a->x) s += v;
    out->x[0] = s;
    attach(out, {a}, [a](Node& self) {
        if (!a->needs_grad) return;
        for (size_t i = 0; i < a->x.size(); ++i) a->g[i] += self.g[0];
    });
    return out;
}

Value mean_all(const Value& a) { return scale(sum_all(a), 1.0 / Scalar(a->numel())); }

Value sum_cols(const Value& a) {
    int R = a->rows(), C = a->cols();
    auto out = make_value({R, 1});
    for (int r = 0; r < R; ++r) {
        Scalar s = 0;
        for (int c = 0; c < C; ++c) s += a->x[size_t(r) * C + c];
        out->x[r] = s;
    }
    attach(out, {a}, [a, C](Node& self) {
        if (!a->needs_grad) return;
        for (int r = 0; r < self.rows(); ++r)
            for (int c = 0; c < C; ++c) a->g[size_t(r) * C + c] += self.g[r];
    });
    return out;
}

Value sum_rows(const Value& a) {
    int R = a->rows(), C = a->cols();
    auto out = make_value({1, C});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out->x[c] += a->x[size_t(r) * C + c];
    attach(out, {a}, [a, R, C](Node& self) {
        if (!a->needs_grad) return;
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) a->g[size_t(r) * C + c] += self.g[c];
    });
    return out;
}

Value softmax_rows(const Value& a) {
    int R = a->rows(), C = a->cols();
    auto out = make_value(a->shape);
    for (int r = 0; r < R; ++r) {
        const Scalar* xr = a->x.data() + size_t(r) * C;
        Scalar* yr = out->x.data() + size_t(r) * C;
        Scalar mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        Scalar z = 0;
        for (int c = 0; c < C; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            z += yr[c];
        }
        for (int c = 0; c < C; ++c) yr[c] /= z;
    }
    attach(out, {a}, [a, R, C](Node& self) {
        if (!a->needs_grad) return;
        for (int r = 0; r < R; ++r) {
            const Scalar* y = self.x.data() + size_t(r) * C;
            const Scalar* gy = self.g.data() + size_t(r) * C;
            Scalar dot = 0;
            for (int c = 0; c < C; ++c) dot += y[c] * gy[c];
            for (int c = 0; c < C; ++c) a->g[size_t(r) * C + c] += y[c] * (gy[c] - dot);
        }
    });
    return out;
}

Value log_softmax_rows(const Value& a) {
    int R = a->rows(), C = a->cols();
    auto out = make_value(a->shape);
    for (int r = 0; r < R; ++r) {
        const Scalar* xr = a->x.data() + size_t(r) * C;
        Scalar* yr = out->x.data() + size_t(r) * C;
        Scalar mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        Scalar z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(xr[c] - mx);
        Scalar lz = mx + std::log(z);
        for (int c = 0; c < C; ++c) yr[c] = xr[c] - lz;
    }
    attach(out, {a}, [a](Node& self) {
        if (!a->needs_grad) return;
        int R = self.rows(), C = self.cols();
        for (int r = 0; r < R; ++r) {
            const Scalar* y = self.x.data() + size_t(r) * C;
            const Scalar* gy = self.g.data() + size_t(r) * C;
            Scalar gsum = 0;
            for (int c = 0; c < C; ++c) gsum += gy[c];
            for (int c = 0; c < C; ++c) a->g[size_t(r) * C + c] += gy[c] - std::exp(y[c]) * gsum;
        }
    });
    return out;
}

Value layer_norm(const Value& x, const Value& gamma, const Value& beta, Scalar eps) {
    int R = x->rows(), C = x->cols();
    if (int(gamma->numel()) != C || int(beta->numel()) != C)
        throw std::invalid_argument("layer_norm: gain/bias size mismatch");
    auto out = make_value(x->shape);
    out->aux.resize(size_t(R) * (C + 1));  // xhat rows + inv-sigma per row
    Scalar* xhat = out->aux.data();
    Scalar* isig = out->aux.data() + size_t(R) * C;
    for (int r = 0; r < R; ++r) {
        const Scalar* xr = x->x.data() + size_t(r) * C;
        Scalar mu = 0;
        for (int c = 0; c < C; ++c) mu += xr[c];
        mu /= C;
        Scalar var = 0;
        for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= C;
        Scalar is = 1.0 / std::sqrt(var + eps);
        isig[r] = is;
        for (int c = 0; c < C; ++c) {
            Scalar h = (xr[c] - mu) * is;
            xhat[size_t(r) * C + c] = h;
            out->x[size_t(r) * C + c] = gamma->x[c] * h + beta->x[c];
        }
    }
    attach(out, {x, gamma, beta}, [x, gamma, beta, R, C](Node& self) {
        const Scalar* xhat = self.aux.data();
        const Scalar* isig = self.aux.data() + size_t(R) * C;
        for (int r = 0; r < R; ++r) {
            const Scalar* gy = self.g.data() + size_t(r) * C;
            const Scalar* h = xhat + size_t(r) * C;
            Scalar m1 = 0, m2 = 0;
            for (int c = 0; c < C; ++c) {
                Scalar dh = gy[c] * gamma->x[c];
                m1 += dh;
                m2 += dh * h[c];
            }
            m1 /= C;
            m2 /= C;
            for (int c = 0; c < C; ++c) {
                if (gamma->needs_grad) gamma->g[c] += gy[c] * h[c];
                if (beta->needs_grad) beta->g[c] += gy[c];
                if (x->needs_grad) {
                    Scalar dh = gy[c] * gamma->x[c];
                    x->g[size_t(r) * C + c] += isig[r] * (dh - m1 - h[c] * m2);
                }
            }
        }
    });
    return out;
}

namespace {

void im2col(const Scalar* x, int Cin, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, Scalar* col) {
    // col layout: [Cin*kh*kw, Ho*Wo]
    int ncol = Ho * Wo;
    for (int ci = 0; ci < Cin; ++ci)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                Scalar* dst = col + size_t((ci * kh + dy) * kw + dx) * ncol;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + dy - pad;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + dx - pad;
                        dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                ? x[(size_t(ci) * H + iy) * W + ix]
                                                : 0.0;
                    }
                }
            }
}

void col2im_add(const Scalar* col, int Cin, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, Scalar* gx) {
    int ncol = Ho * Wo;
    for (int ci = 0; ci < Cin; ++ci)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                const Scalar* src = col + size_t((ci * kh + dy) * kw + dx) * ncol;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + dx - pad;
                        if (ix < 0 || ix >= W) continue;
                        gx[(size_t(ci) * H + iy) * W + ix] += src[oy * Wo + ox];
                    }
                }
            }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    if (x->shape.size() != 3 || w->shape.size() != 4)
        throw std::invalid_argument("conv2d: expected x[C,H,W], w[Co,Ci,kh,kw]");
    int Cin = x->shape[0], H = x->shape[1], W = x->shape[2];
    int Cout = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[1] != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (int(b->numel()) != Cout) throw std::invalid_argument("conv2d: bias size mismatch");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: input smaller than kernel");
    int K = Cin * kh * kw, ncol = Ho * Wo;

    auto out = make_value({Cout, Ho, Wo});
    out->aux.resize(size_t(K) * ncol);
    im2col(x->x.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo, out->aux.data());
    MapM y(out->x.data(), Cout, ncol);
    y.noalias() = MapC(w->x.data(), Cout, K) * MapC(out->aux.data(), K, ncol);
    for (int co = 0; co < Cout; ++co) y.row(co).array() += b->x[co];

    attach(out, {x, w, b}, [x, w, b, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K,
                            ncol](Node& self) {
        MapC dy(self.g.data(), Cout, ncol);
        if (w->needs_grad)
            MapM(w->g.data(), Cout, K).noalias() += dy * MapC(self.aux.data(), K, ncol).transpose();
        if (b->needs_grad)
            for (int co = 0; co < Cout; ++co) b->g[co] += dy.row(co).sum();
        if (x->needs_grad) {
            std::vector<Scalar> dcol(size_t(K) * ncol);
            MapM(dcol.data(), K, ncol).noalias() = MapC(w->x.data(), Cout, K).transpose() * dy;
            col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo, x->g.data());
        }
    });
    return out;
}

void backward(const Value& loss) {
    if (loss->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, i] = stack.back();
        if (i < node->parents.size()) {
            Node* p = node->parents[i++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->ensure_grad();
    loss->g[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace hoidet::ag
