#include <doctest.h>

#include "hoidet/nn.hpp"
#include "hoidet/rng.hpp"
#include "hoidet/tensor.hpp"

#include <cmath>
#include <functional>

using namespace hoidet;
using namespace hoidet::ag;

namespace {

Value randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    auto v = make_value(std::move(shape), true);
    for (auto& x : v->x) x = rng.normal() * scale;
    return v;
}

// Central finite differences against the analytic gradient of a scalar loss.
double max_grad_error(const std::vector<Value>& inputs,
                      const std::function<Value()>& build, double eps = 1e-6) {
    Value loss = build();
    for (auto& in : inputs) in->g.assign(in->x.size(), 0.0);
    backward(loss);
    double worst = 0.0;
    for (auto& in : inputs) {
        for (size_t i = 0; i < in->x.size(); ++i) {
            double keep = in->x[i];
            in->x[i] = keep + eps;
            double up = item(build());
            in->x[i] = keep - eps;
            double dn = item(build());
            in->x[i] = keep;
            double fd = (up - dn) / (2 * eps);
            double err = std::abs(fd - in->g[i]) / std::max({1.0, std::abs(fd), std::abs(in->g[i])});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise and broadcast ops match finite differences") {
    Rng rng(7);
    auto a = randn({3, 4}, rng);
    auto b = randn({3, 4}, rng);
    auto cv = randn({3, 1}, rng);
    for (auto& x : cv->x) x += 3.0;  // keep divisors away from zero
    auto rv = randn({4}, rng);
    for (auto& x : b->x) x += 2.5;

    CHECK(max_grad_error({a, b}, [&] { return sum_all(mul(add(a, b), sub(a, b))); }) < 1e-7);
    CHECK(max_grad_error({a, b}, [&] { return sum_all(div(a, b)); }) < 1e-7);
    CHECK(max_grad_error({a, rv}, [&] { return sum_all(square(add_rowvec(a, rv))); }) < 1e-7);
    CHECK(max_grad_error({a, cv}, [&] { return sum_all(mul_colvec(a, cv)); }) < 1e-7);
    CHECK(max_grad_error({a, cv}, [&] { return sum_all(div_colvec(a, cv)); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return mean_all(scale(add_scalar(a, 1.5), -2.0)); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(rsub_scalar(1.0, a)); }) < 1e-7);
}

TEST_CASE("nonlinearities match finite differences") {
    Rng rng(11);
    auto a = randn({2, 5}, rng);
    auto pos = randn({2, 5}, rng);
    for (auto& x : pos->x) x = std::abs(x) + 0.5;

    CHECK(max_grad_error({a}, [&] { return sum_all(relu(a)); }) < 1e-6);
    CHECK(max_grad_error({a}, [&] { return sum_all(sigmoid(a)); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(exp_(a)); }) < 1e-7);
    CHECK(max_grad_error({pos}, [&] { return sum_all(log_(pos)); }) < 1e-7);
    CHECK(max_grad_error({pos}, [&] { return sum_all(sqrt_(pos)); }) < 1e-7);
    CHECK(max_grad_error({pos}, [&] { return sum_all(pow_const(pos, 2.7)); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(softplus(a)); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(abs_(a)); }) < 1e-6);
}

TEST_CASE("matmul family matches finite differences") {
    Rng rng(13);
    auto a = randn({3, 4}, rng);
    auto b = randn({4, 2}, rng);
    auto bt = randn({2, 4}, rng);

    CHECK(max_grad_error({a, b}, [&] { return sum_all(square(matmul(a, b))); }) < 1e-6);
    CHECK(max_grad_error({a, bt}, [&] { return sum_all(square(matmul_nt(a, bt))); }) < 1e-6);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(transpose(a))); }) < 1e-6);
}

TEST_CASE("shape ops match finite differences") {
    Rng rng(17);
    auto a = randn({4, 6}, rng);
    auto b = randn({2, 6}, rng);
    auto c = randn({4, 3}, rng);

    CHECK(max_grad_error({a}, [&] { return sum_all(square(reshape(a, {6, 4}))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(slice_rows(a, 1, 3))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(slice_cols(a, 2, 5))); }) < 1e-7);
    CHECK(max_grad_error({a, b}, [&] { return sum_all(square(concat_rows({a, b}))); }) < 1e-7);
    CHECK(max_grad_error({a, c}, [&] { return sum_all(square(concat_cols({a, c}))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] {
              return sum_all(square(gather_rows(a, {2, 0, 2})));
          }) < 1e-7);
    CHECK(max_grad_error({a}, [&] {
              return sum_all(square(gather_cols(a, {5, 0, 5, 1})));
          }) < 1e-7);
    CHECK(max_grad_error({a}, [&] {
              return sum_all(square(pick_per_row(a, {1, 0, 5, 3})));
          }) < 1e-7);
}

TEST_CASE("reductions, softmax, layer norm match finite differences") {
    Rng rng(19);
    auto a = randn({3, 5}, rng);
    auto gamma = randn({5}, rng, 0.3);
    for (auto& x : gamma->x) x += 1.0;
    auto beta = randn({5}, rng, 0.3);

    CHECK(max_grad_error({a}, [&] { return sum_all(square(sum_cols(a))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(sum_rows(a))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(softmax_rows(a))); }) < 1e-7);
    CHECK(max_grad_error({a}, [&] { return sum_all(square(log_softmax_rows(a))); }) < 1e-6);
    CHECK(max_grad_error({a, gamma, beta},
                         [&] { return sum_all(square(layer_norm(a, gamma, beta))); }) < 1e-6);
}

TEST_CASE("min/max ops match finite differences away from ties") {
    Rng rng(23);
    auto a = randn({3, 4}, rng);
    auto b = randn({3, 4}, rng);
    CHECK(max_grad_error({a, b}, [&] { return sum_all(square(minimum(a, b))); }) < 1e-6);
    CHECK(max_grad_error({a, b}, [&] { return sum_all(square(maximum(a, b))); }) < 1e-6);
    CHECK(max_grad_error({a}, [&] { return sum_all(clamp_min(a, 0.1)); }) < 1e-6);
}

TEST_CASE("conv2d matches finite differences") {
    Rng rng(29);
    auto x = randn({2, 6, 7}, rng);
    auto w = randn({3, 2, 3, 3}, rng, 0.5);
    auto b = randn({3}, rng, 0.1);
    CHECK(max_grad_error({x, w, b}, [&] {
              return sum_all(square(conv2d(x, w, b, 2, 1)));
          }) < 1e-6);
    CHECK(max_grad_error({x, w, b}, [&] {
              return sum_all(square(conv2d(x, w, b, 1, 0)));
          }) < 1e-6);
}

TEST_CASE("attention and transformer layers match finite differences") {
    Rng rng(31);
    nn::ParamStore ps;
    nn::MultiHeadAttention mha(ps, "mha", 8, 2, rng);
    auto q = randn({3, 8}, rng, 0.7);
    auto kv = randn({5, 8}, rng, 0.7);

    std::vector<Value> inputs{q, kv};
    for (auto& [name, p] : ps.items()) inputs.push_back(p);
    CHECK(max_grad_error(inputs, [&] { return sum_all(square(mha(q, kv, kv))); }, 1e-6) < 1e-5);

    nn::ParamStore ps2;
    nn::DecoderLayer dec(ps2, "dec", 8, 2, 16, rng);
    auto tgt = randn({3, 8}, rng, 0.5);
    auto qpos = randn({3, 8}, rng, 0.5);
    auto mem = randn({4, 8}, rng, 0.5);
    auto mpos = randn({4, 8}, rng, 0.5);
    std::vector<Value> inputs2{tgt, qpos, mem, mpos};
    for (auto& [name, p] : ps2.items()) inputs2.push_back(p);
    CHECK(max_grad_error(inputs2, [&] {
              return sum_all(square(dec(tgt, qpos, mem, mpos)));
          }, 1e-6) < 1e-5);
}

TEST_CASE("no-grad mode skips graph recording") {
    Rng rng(37);
    auto a = randn({2, 2}, rng);
    ag::NoGradGuard guard;
    auto y = square(a);
    CHECK_FALSE(y->needs_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("grad accumulates across backward calls on leaves") {
    auto a = constant({2}, {1.0, 2.0});
    a->needs_grad = true;
    auto l1 = sum_all(square(a));
    backward(l1);
    CHECK(a->g[0] == doctest::Approx(2.0));
    auto l2 = sum_all(square(a));
    backward(l2);
    CHECK(a->g[0] == doctest::Approx(4.0));
}
