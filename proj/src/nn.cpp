#include "hoidet/nn.hpp"

#include <cmath>

namespace hoidet::nn {

using namespace ag;

Value ParamStore::create(const std::string& name, std::vector<int> shape) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto v = make_value(std::move(shape), /*needs_grad=*/true);
    items_.emplace_back(name, v);
    return v;
}

Value ParamStore::find(const std::string& name) const {
    for (auto& [n, v] : items_)
        if (n == name) return v;
    return nullptr;
}

size_t ParamStore::count_scalars() const {
    size_t n = 0;
    for (auto& [name, v] : items_) n += v->numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : items_) v->g.assign(v->x.size(), 0.0);
}

void init_xavier_uniform(const Value& w, int fan_in, int fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& x : w->x) x = rng.uniform(-a, a);
}

void init_normal(const Value& w, double stdev, Rng& rng) {
    for (auto& x : w->x) x = rng.normal() * stdev;
}

void init_zeros(const Value& w) { std::fill(w->x.begin(), w->x.end(), 0.0); }
void init_ones(const Value& w) { std::fill(w->x.begin(), w->x.end(), 1.0); }

void init_unit_rows(const Value& w, Rng& rng) {
    int R = w->rows(), C = w->cols();
    for (int r = 0; r < R; ++r) {
        double n2 = 0;
        do {
            n2 = 0;
            for (int c = 0; c < C; ++c) {
                double v = rng.normal();
                w->x[size_t(r) * C + c] = v;
                n2 += v * v;
            }
        } while (n2 < 1e-12);
        double inv = 1.0 / std::sqrt(n2);
        for (int c = 0; c < C; ++c) w->x[size_t(r) * C + c] *= inv;
    }
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    W = ps.create(name + ".weight", {out, in});
    b = ps.create(name + ".bias", {out});
    init_xavier_uniform(W, in, out, rng);
    double k = 1.0 / std::sqrt(double(in));
    for (auto& v : b->x) v = rng.uniform(-k, k);
}

Value Linear::operator()(const Value& x) const { return add_rowvec(matmul_nt(x, W), b); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
    gamma = ps.create(name + ".gain", {dim});
    beta = ps.create(name + ".bias", {dim});
    init_ones(gamma);
    init_zeros(beta);
}

Value LayerNorm::operator()(const Value& x) const { return layer_norm(x, gamma, beta); }

Mlp::Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng)
    : l1(ps, name + ".l1", in, hidden, rng),
      l2(ps, name + ".l2", hidden, hidden, rng),
      l3(ps, name + ".l3", hidden, out, rng) {}

Value Mlp::operator()(const Value& x) const { return l3(relu(l2(relu(l1(x))))); }

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, int dim,
                                       int heads, Rng& rng)
    : q(ps, name + ".q", dim, dim, rng),
      k(ps, name + ".k", dim, dim, rng),
      v(ps, name + ".v", dim, dim, rng),
      o(ps, name + ".o", dim, dim, rng),
      heads(heads),
      dim(dim) {
    if (dim % heads != 0) throw std::invalid_argument("attention dim not divisible by heads");
    // plain xavier q/k leaves the softmax nearly uniform, so early decoder
    // outputs barely depend on the keys; a sharper start shortens that phase
    constexpr double kQkInitGain = 3.0;
    for (auto& x : q.W->x) x *= kQkInitGain;
    for (auto& x : k.W->x) x *= kQkInitGain;
}

Value MultiHeadAttention::operator()(const Value& query, const Value& key,
                                     const Value& value) const {
    Value Q = q(query), K = k(key), V = v(value);
    int dh = dim / heads;
    double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Value> ctx;
    ctx.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Value Qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Value Kh = slice_cols(K, h * dh, (h + 1) * dh);
        Value Vh = slice_cols(V, h * dh, (h + 1) * dh);
        Value attn = softmax_rows(scale(matmul_nt(Qh, Kh), inv_sqrt));
        ctx.push_back(matmul(attn, Vh));
    }
    return o(concat_cols(ctx));
}

EncoderLayer::EncoderLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn,
                           Rng& rng)
    : self_attn(ps, name + ".self", dim, heads, rng),
      ff1(ps, name + ".ff1", dim, ffn, rng),
      ff2(ps, name + ".ff2", ffn, dim, rng),
      norm1(ps, name + ".norm1", dim),
      norm2(ps, name + ".norm2", dim) {}

Value EncoderLayer::operator()(const Value& src, const Value& pos) const {
    Value qk = pos ? add(src, pos) : src;
    Value x = norm1(add(src, self_attn(qk, qk, src)));
    return norm2(add(x, ff2(relu(ff1(x)))));
}

DecoderLayer::DecoderLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn,
                           Rng& rng)
    : self_attn(ps, name + ".self", dim, heads, rng),
      cross_attn(ps, name + ".cross", dim, heads, rng),
      ff1(ps, name + ".ff1", dim, ffn, rng),
      ff2(ps, name + ".ff2", ffn, dim, rng),
      norm1(ps, name + ".norm1", dim),
      norm2(ps, name + ".norm2", dim),
      norm3(ps, name + ".norm3", dim) {}

Value DecoderLayer::operator()(const Value& tgt, const Value& query_pos, const Value& memory,
                               const Value& mem_pos) const {
    Value qk = query_pos ? add(tgt, query_pos) : tgt;
    Value x = norm1(add(tgt, self_attn(qk, qk, tgt)));
    Value cq = query_pos ? add(x, query_pos) : x;
    Value ck = mem_pos ? add(memory, mem_pos) : memory;
    x = norm2(add(x, cross_attn(cq, ck, memory)));
    return norm3(add(x, ff2(relu(ff1(x)))));
}

ConvLayer::ConvLayer(ParamStore& ps, const std::string& name, int cin, int cout, int k,
                     int str, int padding, Rng& rng)
    : stride(str), pad(padding) {
    W = ps.create(name + ".weight", {cout, cin, k, k});
    b = ps.create(name + ".bias", {cout});
    init_xavier_uniform(W, cin * k * k, cout * k * k, rng);
    double bk = 1.0 / std::sqrt(double(cin) * k * k);
    for (auto& v : b->x) v = rng.uniform(-bk, bk);
}

Value ConvLayer::operator()(const Value& x) const { return conv2d(x, W, b, stride, pad); }

}  // namespace hoidet::nn
