#include <doctest.h>

#include "hoidet/training.hpp"

#include "hoidet/geometry.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

using namespace hoidet;
using namespace hoidet::train;

namespace {

LabelSpace toy_space() {
    std::vector<ObjectRec> objects{{0, "ball", "a"}, {1, "box", "a"}, {2, "cone", "a"},
                                   {3, "ring", "a"}};
    std::vector<VerbRec> verbs{{0, "hold", "holding", false},
                               {1, "lift", "lifting", false},
                               {2, "kick", "kicking", false},
                               {3, "watch", "watching", false},
                               {4, "no_interaction", "", true}};
    std::vector<TripletRec> triplets{{0, 0, 0}, {1, 0, 1},  {2, 1, 0},  {3, 1, 2},
                                     {4, 2, 0}, {5, 2, 3},  {6, 3, 1},  {7, 3, 2},
                                     {8, 3, 3}, {9, 4, 0},  {10, 4, 1}, {11, 4, 2}};
    return build_label_space(objects, verbs, triplets);
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_q = 4;
    cfg.channels = 16;
    cfg.n_layers = 2;
    cfg.enc_layers = 1;
    cfg.heads = 2;
    cfg.backbone_channels = 8;
    cfg.image_size = 16;
    cfg.c_t = 16;
    cfg.theta_obj = 10.0;
    cfg.theta_inter = 10.0;
    return cfg;
}

std::vector<double> hoi_embedding(const LabelSpace& ls, const vlkt::EmbeddingProvider& provider,
                                  int hoi) {
    const auto& tr = ls.triplets[size_t(hoi)];
    return provider.embed_text(
        vlkt::hoi_prompt(ls.verbs[size_t(tr.verb_id)], ls.objects[size_t(tr.object_id)]));
}

Image random_image(int h, int w, uint64_t seed) {
    Image img;
    img.h = h;
    img.w = w;
    img.hwc.resize(size_t(h) * w * 3);
    Rng rng(seed);
    for (auto& v : img.hwc) v = static_cast<float>(rng.uniform());
    return img;
}

// Exhaustive reference matcher: minimum total, ties broken by the
// lexicographically smallest (query(gt0), query(gt1), ...) vector.
struct BruteForce {
    double total = std::numeric_limits<double>::infinity();
    std::vector<int> r;
};

BruteForce brute_force(const std::vector<std::vector<double>>& cost) {
    int n_q = static_cast<int>(cost.size());
    int g = cost.empty() ? 0 : static_cast<int>(cost[0].size());
    BruteForce best;
    std::vector<int> cur(g, -1);
    std::vector<bool> used(n_q, false);

    std::function<void(int, double)> rec = [&](int gi, double acc) {
        if (gi == g) {
            if (acc < best.total - 1e-12 ||
                (std::abs(acc - best.total) <= 1e-12 && cur < best.r)) {
                best.total = acc;
                best.r = cur;
            }
            return;
        }
        for (int q = 0; q < n_q; ++q) {
            if (used[q]) continue;
            used[q] = true;
            cur[gi] = q;
            rec(gi + 1, acc + cost[q][gi]);
            used[q] = false;
        }
    };
    if (best.r.empty() && g > 0) best.r.assign(g, n_q);  // lexicographic sentinel
    rec(0, 0.0);
    return best;
}

std::vector<int> assignment_of(const MatchResult& m, int g) {
    std::vector<int> r(g, -1);
    for (auto [q, gi] : m.pairs) r[gi] = q;
    return r;
}

double softplus_ref(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }

}  // namespace

TEST_CASE("hungarian matches the exhaustive reference on random matrices") {
    Rng rng(404);
    for (int trial = 0; trial < 60; ++trial) {
        int n_q = 1 + rng.uniform_int(7);
        int g = 1 + rng.uniform_int(n_q);
        std::vector<std::vector<double>> cost(n_q, std::vector<double>(g));
        for (auto& row : cost)
            for (double& c : row) c = rng.uniform(-3.0, 3.0);
        auto got = hungarian_match(cost);
        auto ref = brute_force(cost);
        double total = 0;
        for (auto [q, gi] : got.pairs) total += cost[q][gi];
        CHECK(total == doctest::Approx(ref.total).epsilon(1e-12));
        CHECK(assignment_of(got, g) == ref.r);
        CHECK(got.pairs.size() + got.unmatched_queries.size() == size_t(n_q));
    }
}

TEST_CASE("hungarian tie-breaking is lexicographic on integer matrices") {
    Rng rng(405);
    for (int trial = 0; trial < 80; ++trial) {
        int n_q = 1 + rng.uniform_int(6);
        int g = 1 + rng.uniform_int(n_q);
        std::vector<std::vector<double>> cost(n_q, std::vector<double>(g));
        for (auto& row : cost)
            for (double& c : row) c = double(rng.uniform_int(3));  // many ties
        auto got = hungarian_match(cost);
        auto ref = brute_force(cost);
        double total = 0;
        for (auto [q, gi] : got.pairs) total += cost[q][gi];
        CHECK(total == ref.total);
        CHECK(assignment_of(got, g) == ref.r);
    }
}

TEST_CASE("hungarian hand cases") {
    SUBCASE("unique diagonal optimum") {
        auto m = hungarian_match({{1, 2}, {2, 1}});
        CHECK(assignment_of(m, 2) == std::vector<int>{0, 1});
        CHECK(m.unmatched_queries.empty());
    }
    SUBCASE("all-equal costs resolve to identity") {
        auto m = hungarian_match({{5, 5}, {5, 5}, {5, 5}});
        CHECK(assignment_of(m, 2) == std::vector<int>{0, 1});
        CHECK(m.unmatched_queries == std::vector<int>{2});
    }
    SUBCASE("lexicographic choice among several optima") {
        // optima: (0,1), (0,2), (2,1); smallest vector is (0,1)
        auto m = hungarian_match({{0, 1}, {1, 0}, {0, 0}});
        CHECK(assignment_of(m, 2) == std::vector<int>{0, 1});
    }
    SUBCASE("cheaper-indexed query must not break optimality") {
        // gt0 could use q0, but only (1,0) reaches total 0
        auto m = hungarian_match({{0, 0}, {0, 10}});
        CHECK(assignment_of(m, 2) == std::vector<int>{1, 0});
    }
    SUBCASE("adding a constant to one gt column keeps the assignment") {
        std::vector<std::vector<double>> cost{{0.3, 1.1, 0.2},
                                              {0.9, 0.4, 0.8},
                                              {0.6, 0.5, 0.7},
                                              {1.4, 0.1, 0.9}};
        auto base = hungarian_match(cost);
        auto shifted = cost;
        for (auto& row : shifted) row[1] += 11.5;
        auto moved = hungarian_match(shifted);
        CHECK(base.pairs == moved.pairs);
    }
    SUBCASE("degenerate shapes") {
        auto none = hungarian_match({{}, {}});
        CHECK(none.pairs.empty());
        CHECK(none.unmatched_queries == std::vector<int>{0, 1});
        CHECK(hungarian_match({}).pairs.empty());
    }
    SUBCASE("errors") {
        CHECK_THROWS(hungarian_match({{1.0, 2.0}}));  // two gts, one query
        CHECK_THROWS(hungarian_match({{std::nan("")}, {1.0}}));
        double inf = std::numeric_limits<double>::infinity();
        CHECK_THROWS(hungarian_match({{inf}, {1.0}}));
    }
}

TEST_CASE("hungarian runtime on 200 assorted matrices") {
    Rng rng(406);
    auto t0 = std::chrono::steady_clock::now();
    for (int trial = 0; trial < 200; ++trial) {
        int n_q = 1 + rng.uniform_int(7);
        int g = 1 + rng.uniform_int(n_q);
        std::vector<std::vector<double>> cost(n_q, std::vector<double>(g));
        for (auto& row : cost)
            for (double& c : row) c = rng.uniform(-5.0, 5.0);
        auto got = hungarian_match(cost);
        CHECK(got.pairs.size() == size_t(g));
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 5.0);
}

TEST_CASE("prepare_targets maps hoi ids to classifier columns") {
    auto ls = toy_space();
    std::vector<GtInstance> gts(3);
    gts[0].hoi_ids = {0, 6};
    gts[1].hoi_ids = {9};       // will be untrained below
    gts[2].hoi_ids = {9, 3};

    SUBCASE("identity mapping, triplet mode") {
        std::vector<int> col_of(12);
        std::iota(col_of.begin(), col_of.end(), 0);
        auto t = prepare_targets(gts, col_of, 12, ls, false);
        REQUIRE(t.gts.size() == 3);
        CHECK(t.label_cols[0] == std::vector<int>{0, 6});
        CHECK(t.label_cols[1] == std::vector<int>{9});
        CHECK(t.n_cols == 12);
    }
    SUBCASE("untrained categories drop out, empty instances vanish") {
        std::vector<int> col_of(12, -1);
        col_of[0] = 0;
        col_of[3] = 1;
        auto t = prepare_targets(gts, col_of, 2, ls, false);
        REQUIRE(t.gts.size() == 2);  // gts[1] had only hoi 9
        CHECK(t.label_cols[0] == std::vector<int>{0});
        CHECK(t.label_cols[1] == std::vector<int>{1});
    }
    SUBCASE("verb mode collapses triplets to verbs") {
        std::vector<int> col_of(5);
        std::iota(col_of.begin(), col_of.end(), 0);
        auto t = prepare_targets(gts, col_of, 5, ls, true);
        // hoi 0 -> verb 0, hoi 6 -> verb 3; hoi 9 -> verb 4; hoi 3 -> verb 1
        CHECK(t.label_cols[0] == std::vector<int>{0, 3});
        CHECK(t.label_cols[1] == std::vector<int>{4});
        CHECK(t.label_cols[2] == std::vector<int>{1, 4});
    }
    SUBCASE("out-of-range hoi id throws") {
        std::vector<int> col_of(12, 0);
        std::vector<GtInstance> bad(1);
        bad[0].hoi_ids = {12};
        CHECK_THROWS(prepare_targets(bad, col_of, 12, ls, false));
    }
}

TEST_CASE("pair_cost agrees with a direct transcription") {
    PreparedTargets t;
    GtInstance gt;
    gt.human_box = {0.4, 0.5, 0.2, 0.3};
    gt.object_box = {0.6, 0.5, 0.1, 0.2};
    gt.object_id = 1;
    t.gts.push_back(gt);
    t.label_cols.push_back({0, 2});
    t.n_cols = 3;

    double hb[4] = {0.45, 0.48, 0.22, 0.26};
    double ob[4] = {0.55, 0.52, 0.12, 0.24};
    double ol[3] = {0.2, 1.1, -0.4};
    double il[3] = {0.5, -1.0, 1.5};
    LossWeights w;
    FocalParams fp;

    double got = pair_cost(hb, ob, ol, 3, il, t, 0, w, fp);

    double box_term = (0.05 + 0.02 + 0.02 + 0.04) + (0.05 + 0.02 + 0.02 + 0.04);
    auto bh = geom::from_cxcywh(hb[0], hb[1], hb[2], hb[3]);
    auto bo = geom::from_cxcywh(ob[0], ob[1], ob[2], ob[3]);
    auto gh = geom::from_cxcywh(0.4, 0.5, 0.2, 0.3);
    auto go = geom::from_cxcywh(0.6, 0.5, 0.1, 0.2);
    double giou_term = (1 - geom::giou(bh, gh)) + (1 - geom::giou(bo, go));
    double denom = std::exp(0.2) + std::exp(1.1) + std::exp(-0.4);
    double cls_term = -std::exp(1.1) / denom;
    double inter = 0;
    for (int col : {0, 2}) {
        double p = 1.0 / (1.0 + std::exp(-il[col]));
        inter += fp.alpha * std::pow(1 - p, fp.gamma) * (-std::log(p + 1e-8)) -
                 (1 - fp.alpha) * std::pow(p, fp.gamma) * (-std::log(1 - p + 1e-8));
    }
    inter /= 2;
    double want = 2.5 * box_term + giou_term + cls_term + inter;
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    SUBCASE("box weight scales only the box term") {
        LossWeights w2 = w;
        w2.lambda_b = 5.0;
        double got2 = pair_cost(hb, ob, ol, 3, il, t, 0, w2, fp);
        CHECK(got2 - got == doctest::Approx(2.5 * box_term).epsilon(1e-10));
    }
    SUBCASE("perfect boxes zero the geometry terms") {
        double ph[4] = {0.4, 0.5, 0.2, 0.3};
        double po[4] = {0.6, 0.5, 0.1, 0.2};
        double got3 = pair_cost(ph, po, ol, 3, il, t, 0, w, fp);
        CHECK(got3 == doctest::Approx(cls_term + inter).epsilon(1e-7));
    }
}

namespace {

// Minimal one-layer ForwardResult stand-in for loss-formula tests.
ForwardResult fake_result(const std::vector<double>& hb, const std::vector<double>& ob,
                          const std::vector<double>& ol, int n_obj_cols,
                          const std::vector<double>& il, int n_cols) {
    ForwardResult r;
    int n_q = static_cast<int>(hb.size()) / 4;
    r.preds.human_boxes.push_back(ag::constant({n_q, 4}, hb));
    r.preds.object_boxes.push_back(ag::constant({n_q, 4}, ob));
    r.preds.object_logits.push_back(ag::constant({n_q, n_obj_cols}, ol));
    r.preds.inter_logits.push_back(ag::constant({n_q, n_cols}, il));
    return r;
}

}  // namespace

TEST_CASE("compute_losses formulas on a hand-built layer") {
    PreparedTargets t;
    GtInstance gt;
    gt.human_box = {0.4, 0.5, 0.2, 0.3};
    gt.object_box = {0.6, 0.5, 0.1, 0.2};
    gt.object_id = 1;
    t.gts.push_back(gt);
    t.label_cols.push_back({0, 2});
    t.n_cols = 3;

    std::vector<double> hb{0.4, 0.5, 0.2, 0.3, 0.1, 0.1, 0.05, 0.05};
    std::vector<double> ob{0.6, 0.5, 0.1, 0.2, 0.9, 0.9, 0.05, 0.05};
    std::vector<double> ol{1.0, -0.5, 0.3, 0.2, 0.2, 0.2};
    std::vector<double> il{0.3, -0.7, 1.2, -0.1, 0.4, -2.0};

    MatchResult match;
    match.pairs = {{0, 0}};
    match.unmatched_queries = {1};

    LossOptions opt;
    opt.use_mimic = false;

    auto r = fake_result(hb, ob, ol, 3, il, 3);
    auto lb = compute_losses(r, t, {match}, opt, {});

    SUBCASE("perfect matched boxes give zero box and giou losses") {
        CHECK(lb.l_box[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(lb.l_giou[0] == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("object cross-entropy is the weighted mean over queries") {
        auto logp = [&](const double* z, int idx) {
            double mx = std::max({z[0], z[1], z[2]});
            double den = std::exp(z[0] - mx) + std::exp(z[1] - mx) + std::exp(z[2] - mx);
            return (z[idx] - mx) - std::log(den);
        };
        double want = (-logp(ol.data(), 1) * 1.0 - logp(ol.data() + 3, 2) * 0.1) / 1.1;
        CHECK(lb.l_obj_ce[0] == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("focal at alpha=0.5, gamma=0 is half the summed BCE over n_pos") {
        LossOptions bce_opt = opt;
        bce_opt.focal = {0.5, 0.0};
        auto lb2 = compute_losses(r, t, {match}, bce_opt, {});
        double bce = 0;
        std::vector<double> y{1, 0, 1, 0, 0, 0};
        for (int i = 0; i < 6; ++i)
            bce += y[i] * softplus_ref(-il[i]) + (1 - y[i]) * softplus_ref(il[i]);
        CHECK(lb2.l_inter_focal[0] == doctest::Approx(0.5 * bce / 2).epsilon(1e-10));
    }
    SUBCASE("focal default parameters, transcribed directly") {
        double want = 0;
        std::vector<double> y{1, 0, 1, 0, 0, 0};
        for (int i = 0; i < 6; ++i) {
            double p = 1.0 / (1.0 + std::exp(-il[i]));
            want += y[i] * 0.25 * std::pow(1 - p, 2.0) * softplus_ref(-il[i]) +
                    (1 - y[i]) * 0.75 * std::pow(p, 2.0) * softplus_ref(il[i]);
        }
        CHECK(lb.l_inter_focal[0] == doctest::Approx(want / 2).epsilon(1e-10));
    }
    SUBCASE("total is the weighted sum of the parts") {
        double want = 2.5 * lb.l_box[0] + 1.0 * lb.l_giou[0] + 1.0 * lb.l_obj_ce[0] +
                      1.0 * lb.l_inter_focal[0];
        CHECK(lb.total_value == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("compute_losses with no ground truth") {
    PreparedTargets t;
    t.n_cols = 3;
    std::vector<double> hb{0.4, 0.5, 0.2, 0.3, 0.1, 0.1, 0.05, 0.05};
    std::vector<double> ob{0.6, 0.5, 0.1, 0.2, 0.9, 0.9, 0.05, 0.05};
    std::vector<double> ol{1.0, -0.5, 0.3, 0.2, 0.2, 0.2};
    std::vector<double> il{0.3, -0.7, 1.2, -0.1, 0.4, -2.0};
    auto r = fake_result(hb, ob, ol, 3, il, 3);

    MatchResult empty_match;
    empty_match.unmatched_queries = {0, 1};
    LossOptions opt;
    opt.use_mimic = false;
    auto lb = compute_losses(r, t, {empty_match}, opt, {});

    CHECK(lb.l_box[0] == 0.0);
    CHECK(lb.l_giou[0] == 0.0);
    // every query targets the no-object column at weight 0.1
    auto logp = [&](const double* z, int idx) {
        double mx = std::max({z[0], z[1], z[2]});
        return (z[idx] - mx) - std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx) +
                                        std::exp(z[2] - mx));
    };
    double want = (-logp(ol.data(), 2) * 0.1 - logp(ol.data() + 3, 2) * 0.1) / 0.2;
    CHECK(lb.l_obj_ce[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::isfinite(lb.total_value));
}

TEST_CASE("mimic term wiring") {
    PreparedTargets t;
    t.n_cols = 2;
    std::vector<double> hb{0.4, 0.5, 0.2, 0.3};
    std::vector<double> ob{0.6, 0.5, 0.1, 0.2};
    std::vector<double> ol{0.1, 0.2};
    std::vector<double> il{0.3, -0.3};
    auto r = fake_result(hb, ob, ol, 2, il, 2);
    r.layers.p_a.push_back(ag::constant({2, 4}, {1.0, 0.0, 0.5, 0.25, 0.0, 1.0, 0.5, 0.75}));

    std::vector<double> teacher{0.5, 0.5, 0.5, 0.5};
    MatchResult match;
    match.unmatched_queries = {0};

    LossOptions opt;
    opt.use_mimic = true;
    auto lb = compute_losses(r, t, {match}, opt, teacher);
    // pooled = (0.5, 0.5, 0.5, 0.5), matching the teacher exactly
    CHECK(lb.l_mimic == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> teacher2{0.9, 0.5, 0.5, 0.5};
    auto lb2 = compute_losses(r, t, {match}, opt, teacher2);
    CHECK(lb2.l_mimic == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(lb2.total_value - lb.total_value == doctest::Approx(20.0 * 0.1).epsilon(1e-9));

    LossOptions off = opt;
    off.use_mimic = false;
    auto lb3 = compute_losses(r, t, {match}, off, teacher2);
    CHECK(lb3.l_mimic == 0.0);
    CHECK_THROWS(compute_losses(r, t, {match}, opt, {}));  // mimic on, no teacher

    // verb-mode results carry no projected features, so mimic has no student
    auto bare = fake_result(hb, ob, ol, 2, il, 2);
    CHECK_THROWS(compute_losses(bare, t, {match}, opt, teacher));
}

namespace {

struct LossFixture {
    LabelSpace ls = toy_space();
    vlkt::SyntheticTextProvider provider{11, 16};
    GenModel model;
    Image img = random_image(16, 16, 21);
    PreparedTargets targets;
    LossOptions opt;
    std::vector<double> teacher;

    LossFixture() : model(build_model(tiny_config(), ls, &provider, 9)) {
        std::vector<GtInstance> gts(2);
        gts[0].human_box = {0.3, 0.35, 0.2, 0.25};
        gts[0].object_box = {0.6, 0.5, 0.18, 0.22};
        gts[0].object_id = 1;
        gts[0].hoi_ids = {1, 6};
        gts[1].human_box = {0.55, 0.6, 0.25, 0.2};
        gts[1].object_box = {0.4, 0.7, 0.15, 0.18};
        gts[1].object_id = 0;
        gts[1].hoi_ids = {0};
        std::vector<int> col_of(12);
        std::iota(col_of.begin(), col_of.end(), 0);
        targets = prepare_targets(gts, col_of, 12, ls, false);
        teacher = hoi_embedding(ls, provider, 1);
    }

    double loss_with(const std::vector<MatchResult>& matches) {
        auto r = forward(model, img);
        return compute_losses(r, targets, matches, opt, teacher).total_value;
    }
};

}  // namespace

TEST_CASE("analytic gradients of the full training loss match finite differences") {
    LossFixture fx;

    // matching is frozen at the base point so the objective stays smooth
    std::vector<MatchResult> matches;
    {
        ag::NoGradGuard eval;
        auto r0 = forward(fx.model, fx.img);
        for (int k = 0; k < fx.model.cfg.n_layers; ++k)
            matches.push_back(
                hungarian_match(build_cost_matrix(r0, k, fx.targets, fx.opt.weights, fx.opt.focal)));
    }

    auto r = forward(fx.model, fx.img);
    auto lb = compute_losses(r, fx.targets, matches, fx.opt, fx.teacher);
    fx.model.params.zero_grad();
    ag::backward(lb.total);

    const double eps = 1e-5;
    double worst = 0;
    std::string worst_name;
    Rng pick(77);
    int probes = 0;
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& [name, p] : fx.model.params.items()) {
        if (!p->needs_grad) continue;
        int n = static_cast<int>(p->x.size());
        for (int s = 0; s < std::min(2, n); ++s) {
            int i = pick.uniform_int(n);
            double keep = p->x[i];
            double analytic = p->g[i];
            ag::NoGradGuard eval;
            p->x[i] = keep + eps;
            double up = fx.loss_with(matches);
            p->x[i] = keep - eps;
            double down = fx.loss_with(matches);
            p->x[i] = keep;
            double fd = (up - down) / (2 * eps);
            double rel = std::abs(analytic - fd) /
                         std::max({1e-3, std::abs(analytic), std::abs(fd)});
            if (rel > worst) {
                worst = rel;
                worst_name = name + "[" + std::to_string(i) + "]";
            }
            ++probes;
        }
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    INFO("worst " << worst << " at " << worst_name << ", " << probes << " probes in " << secs
                  << "s");
    CHECK(worst < 1e-4);
    CHECK(probes > 200);
}

TEST_CASE("adamw groups, freezing, and clipping") {
    SUBCASE("classifier rows use the low learning rate") {
        nn::ParamStore ps;
        auto a = ps.create("head.weight", {1, 2});
        auto c = ps.create("inter_classifier.weight", {1, 2});
        a->x = {1.0, 1.0};
        c->x = {1.0, 1.0};
        OptimConfig cfg;
        cfg.lr = 1e-2;
        cfg.lr_classifier = 1e-3;
        cfg.weight_decay = 0;
        cfg.clip_norm = 0;
        AdamW opt(ps, cfg);
        a->g = {1.0, 1.0};
        c->g = {1.0, 1.0};
        opt.step(1.0);
        // first Adam step moves by ~lr regardless of gradient scale
        CHECK(1.0 - a->x[0] == doctest::Approx(1e-2).epsilon(1e-6));
        CHECK(1.0 - c->x[0] == doctest::Approx(1e-3).epsilon(1e-6));
    }
    SUBCASE("frozen parameters are not even tracked") {
        nn::ParamStore ps;
        auto a = ps.create("w", {1, 1});
        auto f = ps.create("frozen", {1, 1});
        f->needs_grad = false;
        a->x = {2.0};
        f->x = {3.0};
        OptimConfig cfg;
        AdamW opt(ps, cfg);
        a->g = {1.0};
        opt.step(1.0);
        CHECK(f->x[0] == 3.0);
        CHECK(a->x[0] != 2.0);
    }
    SUBCASE("gradient clipping rescales to the threshold") {
        nn::ParamStore ps;
        auto a = ps.create("w", {1, 4});
        OptimConfig cfg;  // clip_norm = 0.1
        AdamW opt(ps, cfg);
        a->g = {3.0, 0.0, 4.0, 0.0};
        double pre = opt.clip_gradients();
        CHECK(pre == doctest::Approx(5.0));
        double post = std::sqrt(a->g[0] * a->g[0] + a->g[2] * a->g[2]);
        CHECK(post == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(opt.last_grad_norm() == doctest::Approx(5.0));
    }
    SUBCASE("decoupled weight decay shrinks weights with zero gradient") {
        nn::ParamStore ps;
        auto a = ps.create("w", {1, 1});
        a->x = {4.0};
        OptimConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.5;
        cfg.clip_norm = 0;
        AdamW opt(ps, cfg);
        a->g = {0.0};
        opt.step(1.0);
        CHECK(a->x[0] == doctest::Approx(4.0 * (1 - 0.1 * 0.5)).epsilon(1e-12));
    }
    SUBCASE("adamw minimizes a quadratic") {
        nn::ParamStore ps;
        auto x = ps.create("x", {1, 1});
        x->x = {3.0};
        OptimConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0;
        cfg.clip_norm = 0;
        AdamW opt(ps, cfg);
        for (int i = 0; i < 200; ++i) {
            ps.zero_grad();
            auto diff = ag::add_scalar(x, -1.0);
            auto loss = ag::sum_all(ag::square(diff));
            ag::backward(loss);
            opt.step(1.0);
        }
        CHECK(std::abs(x->x[0] - 1.0) < 0.05);
    }
}

namespace {

std::vector<TrainSample> tiny_dataset(const LabelSpace& ls,
                                      const vlkt::EmbeddingProvider& provider, int n,
                                      uint64_t seed) {
    std::vector<TrainSample> out;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        TrainSample s;
        s.image_id = "img" + std::to_string(i);
        s.image = random_image(16, 16, mix_seed(seed, uint64_t(i) + 1));
        GtInstance gt;
        gt.human_box = {rng.uniform(0.25, 0.45), rng.uniform(0.3, 0.5), 0.2, 0.25};
        gt.object_box = {rng.uniform(0.5, 0.7), rng.uniform(0.4, 0.6), 0.15, 0.2};
        int hoi = rng.uniform_int(ls.n_hoi());
        gt.object_id = ls.triplets[hoi].object_id;
        gt.hoi_ids = {hoi};
        s.gts.push_back(gt);
        s.teacher = hoi_embedding(ls, provider, hoi);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("train runs, logs, and is deterministic") {
    auto ls = toy_space();
    vlkt::SyntheticTextProvider provider(11, 16);
    auto data = tiny_dataset(ls, provider, 4, 31);

    std::string metrics_path = "train_metrics_test.ndjson";
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 7;
    cfg.metrics_path = metrics_path;

    auto model = build_model(tiny_config(), ls, &provider, 9);
    auto stats = train::train(model, data, ls, cfg);
    CHECK(stats.steps == 6);
    REQUIRE(stats.loss_curve.size() == 6);
    for (double v : stats.loss_curve) CHECK(std::isfinite(v));

    SUBCASE("metrics file carries the late learning-rate drop") {
        std::ifstream in(metrics_path);
        REQUIRE(in.good());
        std::string line;
        std::vector<nlohmann::json> recs;
        while (std::getline(in, line))
            if (!line.empty()) recs.push_back(nlohmann::json::parse(line));
        REQUIRE(recs.size() == 6);
        CHECK(recs[0]["lr"].get<double>() == doctest::Approx(1e-4));
        CHECK(recs[5]["lr"].get<double>() == doctest::Approx(1e-5));  // epoch 2 of 3
        CHECK(recs[3]["grad_norm"].get<double>() > 0.0);
        CHECK(recs[2]["step"].get<int>() == 2);
    }
    SUBCASE("same seed reproduces the loss curve exactly") {
        auto model2 = build_model(tiny_config(), ls, &provider, 9);
        auto stats2 = train::train(model2, data, ls, cfg);
        CHECK(stats2.loss_curve == stats.loss_curve);
    }
    SUBCASE("a different data order changes the curve") {
        auto model3 = build_model(tiny_config(), ls, &provider, 9);
        TrainConfig cfg3 = cfg;
        cfg3.seed = 8;
        auto stats3 = train::train(model3, data, ls, cfg3);
        CHECK(stats3.loss_curve != stats.loss_curve);
    }
    std::remove(metrics_path.c_str());
}

TEST_CASE("frozen text classifiers stay bitwise identical through training") {
    auto ls = toy_space();
    vlkt::SyntheticTextProvider provider(11, 16);
    auto cfg_model = tiny_config();
    cfg_model.freeze_text_classifiers = true;
    auto model = build_model(cfg_model, ls, &provider, 9);

    auto inter_before = model.inter_cls.weights->x;
    auto obj_before = model.obj_cls.weights->x;

    std::vector<double> no_object_snapshot;
    ag::Value no_object_param;
    for (const auto& [name, p] : model.params.items())
        if (name == "no_object.embed") {
            no_object_snapshot = p->x;
            no_object_param = p;
        }
    REQUIRE(no_object_param);

    auto data = tiny_dataset(ls, provider, 4, 33);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.seed = 5;
    train::train(model, data, ls, cfg);

    CHECK(model.inter_cls.weights->x == inter_before);
    CHECK(model.obj_cls.weights->x == obj_before);
    CHECK(no_object_param->x != no_object_snapshot);  // still trainable
}

TEST_CASE("zero-shot training restricts the interaction classifier to seen rows") {
    auto ls = toy_space();
    vlkt::SyntheticTextProvider provider(11, 16);
    auto model = build_model(tiny_config(), ls, &provider, 9);

    SplitSpec split;
    split.setting = ZeroShotSetting::NF_UC;
    split.seen = {0, 1, 2, 3, 4, 5, 6, 7, 8};
    split.unseen = {9, 10, 11};

    auto data = tiny_dataset(ls, provider, 4, 35);
    // one sample whose only labels are unseen: it must be skipped, not crash
    data[2].gts[0].hoi_ids = {9};
    data[2].teacher = hoi_embedding(ls, provider, 9);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 3;
    cfg.split = &split;
    auto stats = train::train(model, data, ls, cfg);
    CHECK(stats.steps == 2);
    CHECK(model.inter_cls.active_rows == split.seen);
}

TEST_CASE("training aborts on a poisoned model instead of looping") {
    auto ls = toy_space();
    vlkt::SyntheticTextProvider provider(11, 16);
    auto model = build_model(tiny_config(), ls, &provider, 9);
    // poison past the last relu so the NaN reaches the box heads
    bool poisoned = false;
    for (const auto& [name, p] : model.params.items())
        if (name.find("human_box_head.l3") != std::string::npos) {
            p->x[0] = std::nan("");
            poisoned = true;
        }
    REQUIRE(poisoned);

    auto data = tiny_dataset(ls, provider, 2, 41);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 3;
    CHECK_THROWS(train::train(model, data, ls, cfg));
}

TEST_CASE("a few optimizer steps reduce the loss on a fixed micro-batch") {
    auto ls = toy_space();
    vlkt::SyntheticTextProvider provider(11, 16);
    auto model = build_model(tiny_config(), ls, &provider, 9);
    auto data = tiny_dataset(ls, provider, 2, 51);

    TrainConfig cfg;
    cfg.epochs = 15;  // 15 steps over the same two images
    cfg.batch_size = 2;
    cfg.seed = 13;
    cfg.optim.lr = 5e-4;
    auto stats = train::train(model, data, ls, cfg);
    REQUIRE(stats.loss_curve.size() == 15);
    double first = (stats.loss_curve[0] + stats.loss_curve[1] + stats.loss_curve[2]) / 3;
    double last = (stats.loss_curve[12] + stats.loss_curve[13] + stats.loss_curve[14]) / 3;
    CHECK(last < first);
}
