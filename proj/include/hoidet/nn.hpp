#pragma once

#include "hoidet/rng.hpp"
#include "hoidet/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace hoidet::nn {

using ag::Value;

// Named registry of learnable leaves. Iteration order is creation order and
// defines the checkpoint layout.
class ParamStore {
public:
    Value create(const std::string& name, std::vector<int> shape);
    Value find(const std::string& name) const;  // nullptr when absent
    const std::vector<std::pair<std::string, Value>>& items() const { return items_; }
    size_t count_scalars() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Value>> items_;
};

void init_xavier_uniform(const Value& w, int fan_in, int fan_out, Rng& rng);
void init_normal(const Value& w, double stdev, Rng& rng);
void init_zeros(const Value& w);
void init_ones(const Value& w);
void init_unit_rows(const Value& w, Rng& rng);  // each row uniform on the sphere

struct Linear {
    Value W;  // [out, in]
    Value b;  // [out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
    Value operator()(const Value& x) const;  // [R,in] -> [R,out]
};

struct LayerNorm {
    Value gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim);
    Value operator()(const Value& x) const;
};

// 3-layer perceptron head (hidden relu, plain final layer)
struct Mlp {
    Linear l1, l2, l3;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng);
    Value operator()(const Value& x) const;
};

struct MultiHeadAttention {
    Linear q, k, v, o;
    int heads = 1, dim = 0;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng);
    // query [T,C], key [S,C], value [S,C]
    Value operator()(const Value& query, const Value& key, const Value& value) const;
};

// Post-norm transformer encoder layer; spatial positions are added to q/k.
struct EncoderLayer {
    MultiHeadAttention self_attn;
    Linear ff1, ff2;
    LayerNorm norm1, norm2;
    EncoderLayer() = default;
    EncoderLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn, Rng& rng);
    Value operator()(const Value& src, const Value& pos) const;
};

// Post-norm transformer decoder layer: self-attention over queries, then
// cross-attention into the encoded memory, then the feed-forward block.
// `query_pos` is added to q/k of self-attention and to q of cross-attention;
// `mem_pos` to cross-attention keys. Either may be null.
struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    Linear ff1, ff2;
    LayerNorm norm1, norm2, norm3;
    DecoderLayer() = default;
    DecoderLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn, Rng& rng);
    Value operator()(const Value& tgt, const Value& query_pos, const Value& memory,
                     const Value& mem_pos) const;
};

struct ConvLayer {
    Value W, b;
    int stride = 1, pad = 1;
    ConvLayer() = default;
    ConvLayer(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
              int pad, Rng& rng);
    Value operator()(const Value& x) const;
};

}  // namespace hoidet::nn
