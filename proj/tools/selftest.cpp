// Oracle suites runnable from the packaged binary without any data on disk:
// the library answers are checked against small exhaustive or definitional
// reference implementations kept local to this file.

#include "hoidet/evaluation.hpp"
#include "hoidet/rng.hpp"
#include "hoidet/tensor.hpp"
#include "hoidet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <vector>

namespace {

using namespace hoidet;

LabelSpace tiny_space() {
    return build_label_space({{0, "ball", "a"}, {1, "cup", "a"}},
                             {{0, "hold", "holding", false}, {1, "kick", "kicking", false}},
                             {{0, 0, 0}, {1, 1, 0}, {2, 0, 1}});
}

// --------------------------------------------------------------------------
// autograd kernels

bool autograd_kernels(uint64_t seed) {
    Rng rng(seed);
    auto a = ag::make_value({8, 8}, true);
    for (auto& v : a->x) v = rng.normal();
    auto loss = ag::sum_all(ag::square(ag::softmax_rows(a)));
    ag::backward(loss);
    double gsum = 0;
    for (double g : a->g) gsum += std::abs(g);
    return std::isfinite(ag::item(loss)) && std::isfinite(gsum) && gsum > 0;
}

// --------------------------------------------------------------------------
// Hungarian matcher against exhaustive enumeration

double exhaustive_min(const std::vector<std::vector<double>>& cost, size_t g,
                      std::vector<char>& used, double acc) {
    size_t n_gt = cost.empty() ? 0 : cost[0].size();
    if (g == n_gt) return acc;
    double best = HUGE_VAL;
    for (size_t q = 0; q < cost.size(); ++q) {
        if (used[q]) continue;
        used[q] = 1;
        best = std::min(best, exhaustive_min(cost, g + 1, used, acc + cost[q][g]));
        used[q] = 0;
    }
    return best;
}

bool hungarian_oracle(uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < 200; ++trial) {
        int n_gt = 1 + rng.uniform_int(7);
        int n_q = n_gt + rng.uniform_int(8 - n_gt);
        std::vector<std::vector<double>> cost(static_cast<size_t>(n_q));
        for (auto& row : cost) row.resize(static_cast<size_t>(n_gt));
        for (auto& row : cost)
            for (auto& c : row) c = rng.uniform(-5, 5);

        auto m = train::hungarian_match(cost);
        if (m.pairs.size() != size_t(n_gt)) return false;
        std::sort(m.pairs.begin(), m.pairs.end(),
                  [](auto& a, auto& b) { return a.second < b.second; });
        double total = 0;
        for (auto [q, g] : m.pairs) total += cost[size_t(q)][size_t(g)];

        std::vector<char> used(size_t(n_q), 0);
        if (total != exhaustive_min(cost, 0, used, 0.0)) {
            std::fprintf(stderr, "selftest: matcher missed the optimum on trial %d\n", trial);
            return false;
        }
    }
    return true;
}

// --------------------------------------------------------------------------
// mAP evaluator against a definitional reference

double iou_ref(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    double inter = ix * iy;
    double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double ap_ref(const std::vector<int>& tp, int64_t n_gt) {
    int total = std::accumulate(tp.begin(), tp.end(), 0);
    double ap = 0.0;
    for (int k = 1; k <= total; ++k) {
        double best = 0.0;
        int cum = 0;
        for (size_t i = 0; i < tp.size(); ++i) {
            cum += tp[i];
            if (cum >= k) best = std::max(best, double(cum) / double(i + 1));
        }
        ap += best;
    }
    return ap / double(n_gt);
}

bool map_oracle(uint64_t seed) {
    auto ls = tiny_space();
    Rng rng(seed);
    auto rand_box = [&]() -> std::array<double, 4> {
        double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
        return {x, y, x + rng.uniform(4, 14), y + rng.uniform(4, 14)};
    };
    auto jitter = [&](const std::array<double, 4>& b) -> std::array<double, 4> {
        double dx = rng.uniform(-0.4, 0.4) * (b[2] - b[0]);
        double dy = rng.uniform(-0.4, 0.4) * (b[3] - b[1]);
        return {b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy};
    };

    data::DatasetManifest gt;
    std::vector<infer::ImageDetections> dets;
    for (int i = 0; i < 20; ++i) {
        data::ImageRecord rec;
        rec.image_id = "scene_" + std::to_string(i);
        rec.width = rec.height = 64;
        int n_ann = 1 + rng.uniform_int(3);
        for (int a = 0; a < n_ann; ++a) {
            data::Annotation an;
            an.human_box = rand_box();
            an.object_box = rand_box();
            int hoi = rng.uniform_int(3);
            an.object_id = ls.expansion_map[size_t(hoi)];
            an.hoi_ids = {hoi};
            rec.annotations.push_back(an);
        }
        gt.images.push_back(rec);

        infer::ImageDetections im{rec.image_id, {}};
        int n_det = 4 + rng.uniform_int(5);
        for (int d = 0; d < n_det; ++d) {
            infer::Detection cand;
            int hoi = rng.uniform_int(3);
            if (rng.uniform() < 0.6) {
                const auto& src = rec.annotations[size_t(rng.uniform_int(int(rec.annotations.size())))];
                cand.human_box = jitter(src.human_box);
                cand.object_box = jitter(src.object_box);
                if (rng.uniform() < 0.7) hoi = src.hoi_ids[0];
            } else {
                cand.human_box = rand_box();
                cand.object_box = rand_box();
            }
            cand.hoi_id = hoi;
            cand.object_id = ls.expansion_map[size_t(hoi)];
            cand.score = rng.uniform();
            im.dets.push_back(cand);
        }
        dets.push_back(im);
    }

    auto r = eval::evaluate(dets, gt, ls);

    // reference pass: same greedy protocol, independent arithmetic
    struct G {
        int hoi;
        std::array<double, 4> h, o;
        bool used = false;
    };
    std::map<std::string, std::vector<G>> by_image;
    std::vector<int64_t> counts(3, 0);
    for (const auto& rec : gt.images)
        for (const auto& a : rec.annotations)
            for (int h : a.hoi_ids) {
                by_image[rec.image_id].push_back({h, a.human_box, a.object_box});
                ++counts[size_t(h)];
            }

    for (size_t h = 0; h < 3; ++h) {
        struct C {
            double score;
            const std::string* img;
            const infer::Detection* d;
        };
        std::vector<C> cands;
        for (const auto& im : dets)
            for (const auto& d : im.dets)
                if (size_t(d.hoi_id) == h) cands.push_back({d.score, &im.image_id, &d});
        std::stable_sort(cands.begin(), cands.end(),
                         [](const C& a, const C& b) { return a.score > b.score; });
        std::vector<int> tp;
        for (const auto& c : cands) {
            auto& gts = by_image[*c.img];
            int best = -1;
            double best_ov = 0.5;
            for (size_t g = 0; g < gts.size(); ++g) {
                if (gts[g].used || gts[g].hoi != int(h)) continue;
                double ov = std::min(iou_ref(c.d->human_box, gts[g].h),
                                     iou_ref(c.d->object_box, gts[g].o));
                if (ov > best_ov) {
                    best_ov = ov;
                    best = int(g);
                }
            }
            if (best >= 0) gts[size_t(best)].used = true;
            tp.push_back(best >= 0 ? 1 : 0);
        }
        if (counts[h] == 0) continue;
        double want = ap_ref(tp, counts[h]);
        if (std::abs(r.per_hoi_ap[h] - want) > 1e-9) {
            std::fprintf(stderr, "selftest: AP mismatch on hoi %zu: %.12f vs %.12f\n", h,
                         r.per_hoi_ap[h], want);
            return false;
        }
    }
    return true;
}

// --------------------------------------------------------------------------
// analytic gradients against central differences (one entry per tensor)

bool gradient_spot_check(uint64_t seed) {
    auto ls = tiny_space();
    ModelConfig cfg;
    cfg.n_q = 4;
    cfg.channels = 16;
    cfg.n_layers = 2;
    cfg.enc_layers = 1;
    cfg.heads = 4;
    cfg.backbone_channels = 4;
    cfg.image_size = 16;
    cfg.c_t = 16;
    cfg.theta_obj = 10.0;
    cfg.theta_inter = 5.0;

    vlkt::SyntheticTextProvider provider(seed, cfg.c_t);
    auto model = build_model(cfg, ls, &provider, seed + 1);

    Image img;
    img.h = img.w = 16;
    img.hwc.resize(size_t(16) * 16 * 3);
    Rng rng(seed + 2);
    for (auto& v : img.hwc) v = float(rng.uniform());

    std::vector<train::GtInstance> gts(2);
    gts[0].human_box = {0.3, 0.4, 0.25, 0.3};
    gts[0].object_box = {0.6, 0.5, 0.2, 0.2};
    gts[0].object_id = 0;
    gts[0].hoi_ids = {0};
    gts[1].human_box = {0.7, 0.6, 0.3, 0.35};
    gts[1].object_box = {0.35, 0.3, 0.22, 0.28};
    gts[1].object_id = 1;
    gts[1].hoi_ids = {2};

    std::vector<int> col_of(size_t(ls.n_hoi()));
    std::iota(col_of.begin(), col_of.end(), 0);
    auto targets = train::prepare_targets(gts, col_of, ls.n_hoi(), ls, false);
    auto teacher = provider.embed_text("a fixed target for the mimic term");

    train::LossOptions opt;

    // matching is held fixed at the base point so the loss is smooth
    auto r0 = forward(model, img);
    std::vector<train::MatchResult> matches;
    for (int k = 0; k < cfg.n_layers; ++k)
        matches.push_back(train::hungarian_match(
            train::build_cost_matrix(r0, k, targets, opt.weights, opt.focal)));

    auto loss_value = [&]() {
        ag::NoGradGuard guard;
        auto r = forward(model, img);
        return train::compute_losses(r, targets, matches, opt, teacher).total_value;
    };

    model.params.zero_grad();
    {
        auto r = forward(model, img);
        auto lb = train::compute_losses(r, targets, matches, opt, teacher);
        ag::backward(lb.total);
    }

    const double eps = 1e-5;
    double max_rel = 0.0;
    Rng pick(seed + 3);
    for (const auto& [name, p] : model.params.items()) {
        if (!p->needs_grad) continue;
        p->ensure_grad();
        size_t i = size_t(pick.uniform_int(int(p->x.size())));
        double keep = p->x[i];
        p->x[i] = keep + eps;
        double up = loss_value();
        p->x[i] = keep - eps;
        double dn = loss_value();
        p->x[i] = keep;

        double fd = (up - dn) / (2 * eps);
        double an = p->g[i];
        double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        if (rel > max_rel) max_rel = rel;
        if (rel > 1e-4) {
            std::fprintf(stderr, "selftest: gradient mismatch at %s[%zu]: %.3e vs %.3e\n",
                         name.c_str(), i, an, fd);
            return false;
        }
    }
    return max_rel < 1e-4;
}

}  // namespace

int run_selftest(uint64_t seed) {
    struct Suite {
        const char* name;
        bool (*fn)(uint64_t);
    };
    const Suite suites[] = {{"autograd kernels", autograd_kernels},
                            {"matcher vs exhaustive", hungarian_oracle},
                            {"mAP vs reference", map_oracle},
                            {"gradients vs finite differences", gradient_spot_check}};
    int failures = 0;
    for (const auto& s : suites) {
        bool ok = s.fn(seed);
        std::printf("selftest: %-33s %s\n", s.name, ok ? "ok" : "FAILED");
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
