#include "hoidet/training.hpp"

#include "hoidet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace hoidet::train {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path assignment over rows=gts, cols=queries.
// a is G x N_q with G <= N_q; returns r[g] = assigned query.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& a) {
    int n = static_cast<int>(a.size());
    if (n == 0) return {};
    int m = static_cast<int>(a[0].size());
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> r(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) r[p[j] - 1] = j - 1;
    return r;
}

double assignment_total(const std::vector<std::vector<double>>& cost, const std::vector<int>& r) {
    double total = 0;
    for (size_t g = 0; g < r.size(); ++g) total += cost[r[g]][g];
    return total;
}

// Optimal completion when some gts are pinned to given queries. Returns the
// full assignment vector, or empty when infeasible.
std::vector<int> solve_with_fixed(const std::vector<std::vector<double>>& cost, int n_q,
                                  const std::vector<int>& fixed) {
    int g_total = static_cast<int>(cost[0].size());
    std::vector<int> free_gts, free_qs;
    std::vector<bool> q_used(n_q, false);
    for (int g = 0; g < g_total; ++g) {
        if (fixed[g] >= 0)
            q_used[fixed[g]] = true;
        else
            free_gts.push_back(g);
    }
    for (int q = 0; q < n_q; ++q)
        if (!q_used[q]) free_qs.push_back(q);
    if (free_gts.empty()) return fixed;

    std::vector<std::vector<double>> sub(free_gts.size(),
                                         std::vector<double>(free_qs.size()));
    for (size_t i = 0; i < free_gts.size(); ++i)
        for (size_t j = 0; j < free_qs.size(); ++j) sub[i][j] = cost[free_qs[j]][free_gts[i]];
    auto sub_r = solve_assignment(sub);
    auto full = fixed;
    for (size_t i = 0; i < free_gts.size(); ++i) full[free_gts[i]] = free_qs[sub_r[i]];
    return full;
}

}  // namespace

MatchResult hungarian_match(const std::vector<std::vector<double>>& cost) {
    int n_q = static_cast<int>(cost.size());
    MatchResult res;
    if (n_q == 0) return res;
    int g = static_cast<int>(cost[0].size());
    if (g == 0) {
        res.unmatched_queries.resize(n_q);
        std::iota(res.unmatched_queries.begin(), res.unmatched_queries.end(), 0);
        return res;
    }
    if (g > n_q) throw std::runtime_error("more ground truths than queries");
    for (const auto& row : cost)
        for (double c : row)
            if (!std::isfinite(c)) throw std::runtime_error("non-finite assignment cost");

    // rows=gts, cols=queries for the solver
    std::vector<std::vector<double>> a(g, std::vector<double>(n_q));
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < n_q; ++j) a[i][j] = cost[j][i];
    auto r = solve_assignment(a);
    double best = assignment_total(cost, r);
    double tol = 1e-9 * std::max(1.0, std::abs(best));

    // Lexicographic tie refinement: pin gts in order to the smallest query
    // that still permits an optimal completion. Re-solves only happen when an
    // alternative query is actually cheaper-indexed and plausibly optimal.
    std::vector<int> fixed(g, -1);
    for (int gi = 0; gi < g; ++gi) {
        std::vector<bool> taken(n_q, false);
        for (int k = 0; k < gi; ++k) taken[fixed[k]] = true;
        for (int q = 0; q < r[gi]; ++q) {
            if (taken[q]) continue;
            auto trial = fixed;
            trial[gi] = q;
            auto full = solve_with_fixed(cost, n_q, trial);
            if (assignment_total(cost, full) <= best + tol) {
                r = full;
                break;
            }
        }
        fixed[gi] = r[gi];
    }

    std::vector<bool> used(n_q, false);
    for (int gi = 0; gi < g; ++gi) {
        res.pairs.emplace_back(r[gi], gi);
        used[r[gi]] = true;
    }
    std::sort(res.pairs.begin(), res.pairs.end(),
              [](const auto& x, const auto& y) { return x.second < y.second; });
    for (int q = 0; q < n_q; ++q)
        if (!used[q]) res.unmatched_queries.push_back(q);
    return res;
}

PreparedTargets prepare_targets(const std::vector<GtInstance>& gts,
                                const std::vector<int>& col_of_hoi, int n_cols,
                                const LabelSpace& ls, bool verb_mode) {
    PreparedTargets t;
    t.n_cols = n_cols;
    for (const auto& gt : gts) {
        std::set<int> cols;
        for (int h : gt.hoi_ids) {
            if (h < 0 || (verb_mode && h >= static_cast<int>(ls.triplets.size())))
                throw std::runtime_error("hoi id out of range: " + std::to_string(h));
            int base = verb_mode ? ls.triplets[size_t(h)].verb_id : h;
            if (base < 0 || base >= static_cast<int>(col_of_hoi.size()))
                throw std::runtime_error("hoi id out of range: " + std::to_string(h));
            int col = col_of_hoi[size_t(base)];
            if (col >= 0) cols.insert(col);
        }
        if (cols.empty()) continue;  // instance carries no trainable category
        t.gts.push_back(gt);
        t.label_cols.emplace_back(cols.begin(), cols.end());
    }
    return t;
}

namespace {

double softmax_prob(const double* logits, int n, int idx) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double denom = 0;
    for (int i = 0; i < n; ++i) denom += std::exp(logits[i] - mx);
    return std::exp(logits[idx] - mx) / denom;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

std::array<double, 4> box_of(const double* p) { return {p[0], p[1], p[2], p[3]}; }

geom::Box corners_of(const std::array<double, 4>& c) {
    return geom::from_cxcywh(c[0], c[1], c[2], c[3]);
}

double l1(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += std::abs(a[i] - b[i]);
    return s;
}

}  // namespace

double pair_cost(const double* human_box, const double* object_box, const double* object_logits,
                 int n_object_logits, const double* inter_logits, const PreparedTargets& t,
                 int gt_index, const LossWeights& w, const FocalParams& fp) {
    const auto& gt = t.gts[gt_index];
    double box_term = l1(box_of(human_box), gt.human_box) + l1(box_of(object_box), gt.object_box);
    double giou_term = (1.0 - geom::giou(corners_of(box_of(human_box)), corners_of(gt.human_box))) +
                       (1.0 - geom::giou(corners_of(box_of(object_box)), corners_of(gt.object_box)));
    double cls_term = -softmax_prob(object_logits, n_object_logits, gt.object_id);

    // Focal-consistent matching cost, averaged over the gt's positive labels.
    double inter_term = 0;
    for (int col : t.label_cols[gt_index]) {
        double p = sigmoid(inter_logits[col]);
        double pos = fp.alpha * std::pow(1.0 - p, fp.gamma) * (-std::log(p + 1e-8));
        double neg = (1.0 - fp.alpha) * std::pow(p, fp.gamma) * (-std::log(1.0 - p + 1e-8));
        inter_term += pos - neg;
    }
    inter_term /= static_cast<double>(t.label_cols[gt_index].size());

    return w.lambda_b * box_term + w.lambda_u * giou_term + w.lambda_c_o * cls_term +
           w.lambda_c_a * inter_term;
}

std::vector<std::vector<double>> build_cost_matrix(const ForwardResult& r, int layer,
                                                   const PreparedTargets& t,
                                                   const LossWeights& w, const FocalParams& fp) {
    const auto& hb = r.preds.human_boxes[layer];
    const auto& ob = r.preds.object_boxes[layer];
    const auto& ol = r.preds.object_logits[layer];
    const auto& il = r.preds.inter_logits[layer];
    int n_q = hb->rows();
    int g = static_cast<int>(t.gts.size());
    std::vector<std::vector<double>> cost(n_q, std::vector<double>(g));
    for (int q = 0; q < n_q; ++q)
        for (int gi = 0; gi < g; ++gi)
            cost[q][gi] = pair_cost(hb->x.data() + q * 4, ob->x.data() + q * 4,
                                    ol->x.data() + size_t(q) * ol->cols(), ol->cols(),
                                    il->x.data() + size_t(q) * il->cols(), t, gi, w, fp);
    return cost;
}

namespace {

// Focal terms from logits, numerically stable: -log sigmoid(z) = softplus(-z).
ag::Value focal_sum(const ag::Value& logits, const std::vector<double>& multi_hot,
                    const FocalParams& fp) {
    auto y = ag::constant(logits->shape, multi_hot);
    auto p = ag::sigmoid(logits);
    auto log_p = ag::neg(ag::softplus(ag::neg(logits)));
    auto log_1mp = ag::neg(ag::softplus(logits));
    auto pos = ag::mul(y, ag::scale(ag::mul(ag::pow_const(ag::rsub_scalar(1.0, p), fp.gamma),
                                            ag::neg(log_p)),
                                    fp.alpha));
    auto neg = ag::mul(ag::rsub_scalar(1.0, y),
                       ag::scale(ag::mul(ag::pow_const(p, fp.gamma), ag::neg(log_1mp)),
                                 1.0 - fp.alpha));
    return ag::sum_all(ag::add(pos, neg));
}

}  // namespace

LossBreakdown compute_losses(const ForwardResult& r, const PreparedTargets& t,
                             const std::vector<MatchResult>& match_per_layer,
                             const LossOptions& opt, const std::vector<double>& teacher) {
    int n_layers = static_cast<int>(r.preds.human_boxes.size());
    if (static_cast<int>(match_per_layer.size()) != n_layers)
        throw std::runtime_error("need one match result per decoder layer");
    int g = static_cast<int>(t.gts.size());
    const auto& w = opt.weights;

    LossBreakdown out;
    ag::Value total;
    auto add_term = [&](const ag::Value& v) { total = total ? ag::add(total, v) : v; };

    for (int k = 0; k < n_layers; ++k) {
        const auto& match = match_per_layer[k];
        int n_q = r.preds.human_boxes[k]->rows();
        int n_cols = r.preds.inter_logits[k]->cols();

        ag::Value box_l, giou_l;
        if (g > 0) {
            std::vector<int> mq, mg;
            for (auto [q, gi] : match.pairs) {
                mq.push_back(q);
                mg.push_back(gi);
            }
            std::vector<double> ht(g * 4), ot(g * 4);
            for (int i = 0; i < g; ++i)
                for (int c = 0; c < 4; ++c) {
                    ht[i * 4 + c] = t.gts[mg[i]].human_box[c];
                    ot[i * 4 + c] = t.gts[mg[i]].object_box[c];
                }
            auto pred_h = ag::gather_rows(r.preds.human_boxes[k], mq);
            auto pred_o = ag::gather_rows(r.preds.object_boxes[k], mq);
            auto tgt_h = ag::constant({g, 4}, ht);
            auto tgt_o = ag::constant({g, 4}, ot);
            box_l = ag::scale(
                ag::add(ag::sum_all(geom::l1_rows(pred_h, tgt_h)),
                        ag::sum_all(geom::l1_rows(pred_o, tgt_o))),
                1.0 / g);
            giou_l = ag::scale(
                ag::add(ag::sum_all(ag::rsub_scalar(1.0, geom::giou_rows(pred_h, tgt_h))),
                        ag::sum_all(ag::rsub_scalar(1.0, geom::giou_rows(pred_o, tgt_o)))),
                1.0 / g);
        } else {
            box_l = ag::scalar(0.0);
            giou_l = ag::scalar(0.0);
        }

        // object cross-entropy over all queries; unmatched queries target the
        // no-object column with weight no_object_weight (PyTorch-style
        // weighted mean)
        int n_obj_cols = r.preds.object_logits[k]->cols();
        std::vector<int> target_col(n_q, n_obj_cols - 1);
        for (auto [q, gi] : match.pairs) target_col[q] = t.gts[gi].object_id;
        std::vector<double> ce_w(n_q);
        double w_sum = 0;
        for (int q = 0; q < n_q; ++q) {
            ce_w[q] = target_col[q] == n_obj_cols - 1 ? opt.no_object_weight : 1.0;
            w_sum += ce_w[q];
        }
        auto logp = ag::log_softmax_rows(r.preds.object_logits[k]);
        auto picked = ag::pick_per_row(logp, target_col);
        auto weights_col = ag::constant({n_q, 1}, ce_w);
        auto ce_l = ag::scale(ag::neg(ag::sum_all(ag::mul(picked, weights_col))), 1.0 / w_sum);

        // interaction focal loss over all queries; matched queries carry their
        // gt's multi-hot labels, the rest all-zeros; normalized by the number
        // of positive labels
        std::vector<double> multi_hot(size_t(n_q) * n_cols, 0.0);
        int n_pos = 0;
        for (auto [q, gi] : match.pairs)
            for (int col : t.label_cols[gi]) {
                multi_hot[size_t(q) * n_cols + col] = 1.0;
                ++n_pos;
            }
        auto focal_l = ag::scale(focal_sum(r.preds.inter_logits[k], multi_hot, opt.focal),
                                 1.0 / std::max(n_pos, 1));

        out.l_box.push_back(ag::item(box_l));
        out.l_giou.push_back(ag::item(giou_l));
        out.l_obj_ce.push_back(ag::item(ce_l));
        out.l_inter_focal.push_back(ag::item(focal_l));

        add_term(ag::scale(box_l, w.lambda_b));
        add_term(ag::scale(giou_l, w.lambda_u));
        add_term(ag::scale(ce_l, w.lambda_c_o));
        add_term(ag::scale(focal_l, w.lambda_c_a));
    }

    if (opt.use_mimic) {
        if (teacher.empty()) throw std::runtime_error("mimic enabled but no teacher embedding");
        if (r.layers.p_a.empty())
            throw std::runtime_error(
                "mimic requires the triplet classifier's projected features");
        auto mim = vlkt::mimic_loss(teacher, r.layers.p_a.back(), opt.mimic_norm);
        out.l_mimic = ag::item(mim);
        add_term(ag::scale(mim, w.lambda_mimic));
    }

    out.total = total;
    out.total_value = ag::item(total);
    return out;
}

AdamW::AdamW(nn::ParamStore& params, OptimConfig cfg) : cfg_(cfg) {
    for (const auto& [name, p] : params.items()) {
        if (!p->needs_grad) continue;
        double lr = name.find("classifier.weight") != std::string::npos ? cfg.lr_classifier
                                                                        : cfg.lr;
        slots_.push_back({p, std::vector<double>(p->x.size(), 0.0),
                          std::vector<double>(p->x.size(), 0.0), lr});
        p->ensure_grad();
    }
}

double AdamW::clip_gradients() {
    double sq = 0;
    for (auto& s : slots_)
        for (double gval : s.p->g) sq += gval * gval;
    double norm = std::sqrt(sq);
    last_norm_ = norm;
    if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) {
        double scale = cfg_.clip_norm / norm;
        for (auto& s : slots_)
            for (double& gval : s.p->g) gval *= scale;
    }
    return norm;
}

void AdamW::step(double lr_scale) {
    clip_gradients();
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& s : slots_) {
        double lr = s.lr * lr_scale;
        for (size_t i = 0; i < s.p->x.size(); ++i) {
            double gval = s.p->g[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1 - cfg_.beta1) * gval;
            s.v[i] = cfg_.beta2 * s.v[i] + (1 - cfg_.beta2) * gval * gval;
            double mh = s.m[i] / bc1;
            double vh = s.v[i] / bc2;
            s.p->x[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                               cfg_.weight_decay * s.p->x[i]);
        }
    }
}

TrainStats train(GenModel& model, const std::vector<TrainSample>& dataset, const LabelSpace& ls,
                 const TrainConfig& cfg, const AugmentFn& augment) {
    if (dataset.empty()) throw std::runtime_error("empty training dataset");

    // Column layout for interaction targets. Zero-shot training restricts the
    // classifier to seen rows; inference later widens back to all rows.
    bool verb_mode = model.verb_mode();
    int n_base = verb_mode ? ls.n_verbs() : ls.n_hoi();
    std::vector<int> col_of(n_base, -1);
    if (!verb_mode && cfg.split) {
        model.inter_cls.active_rows = cfg.split->seen;
        for (size_t i = 0; i < cfg.split->seen.size(); ++i) col_of[cfg.split->seen[i]] = int(i);
    } else {
        for (int i = 0; i < n_base; ++i) col_of[i] = i;
        if (!verb_mode) model.inter_cls.active_rows.clear();
    }
    int n_cols = 0;
    for (int c : col_of) n_cols = std::max(n_cols, c + 1);

    std::vector<int> seen_hoi;
    if (cfg.split) {
        seen_hoi.assign(cfg.split->seen.begin(), cfg.split->seen.end());
        std::sort(seen_hoi.begin(), seen_hoi.end());
    }

    AdamW optim(model.params, cfg.optim);
    std::ofstream metrics;
    if (!cfg.metrics_path.empty()) {
        metrics.open(cfg.metrics_path);
        if (!metrics) throw std::runtime_error("cannot write metrics to " + cfg.metrics_path);
    }

    int drop_step_epoch = (cfg.epochs * 2) / 3;
    TrainStats stats;
    Rng order_rng(mix_seed(cfg.seed, fnv1a64("epoch-order")));
    Rng aug_rng(mix_seed(cfg.seed, fnv1a64("augment")));

    std::vector<int> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr_scale = epoch >= drop_step_epoch ? 0.1 : 1.0;
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[size_t(order_rng.uniform_int(int(i)))]);

        for (size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            size_t stop = std::min(idx.size(), start + cfg.batch_size);
            ag::Value batch_loss;
            double batch_value = 0;
            double sum_box = 0, sum_giou = 0, sum_ce = 0, sum_focal = 0, sum_mimic = 0;
            for (size_t bi = start; bi < stop; ++bi) {
                TrainSample sample = dataset[idx[bi]];
                if (augment) sample = augment(sample, aug_rng);
                if (cfg.split) {
                    // zero-shot: strip unseen labels; drop seen-less instances
                    std::vector<GtInstance> kept;
                    for (auto gt : sample.gts) {
                        std::vector<int> filt;
                        for (int h : gt.hoi_ids)
                            if (std::binary_search(seen_hoi.begin(), seen_hoi.end(), h))
                                filt.push_back(h);
                        if (!filt.empty()) {
                            gt.hoi_ids = std::move(filt);
                            kept.push_back(std::move(gt));
                        }
                    }
                    sample.gts = std::move(kept);
                }

                auto result = forward(model, sample.image);
                auto targets = prepare_targets(sample.gts, col_of, n_cols, ls, verb_mode);
                std::vector<MatchResult> matches;
                for (int k = 0; k < model.cfg.n_layers; ++k)
                    matches.push_back(hungarian_match(
                        build_cost_matrix(result, k, targets, cfg.loss.weights, cfg.loss.focal)));
                auto lb = compute_losses(result, targets, matches, cfg.loss, sample.teacher);
                batch_loss = batch_loss ? ag::add(batch_loss, lb.total) : lb.total;
                batch_value += lb.total_value;
                sum_box += std::accumulate(lb.l_box.begin(), lb.l_box.end(), 0.0);
                sum_giou += std::accumulate(lb.l_giou.begin(), lb.l_giou.end(), 0.0);
                sum_ce += std::accumulate(lb.l_obj_ce.begin(), lb.l_obj_ce.end(), 0.0);
                sum_focal += std::accumulate(lb.l_inter_focal.begin(), lb.l_inter_focal.end(), 0.0);
                sum_mimic += lb.l_mimic;
            }
            double denom = double(stop - start);
            batch_loss = ag::scale(batch_loss, 1.0 / denom);
            batch_value /= denom;

            if (!std::isfinite(batch_value))
                throw std::runtime_error("training diverged: non-finite loss at step " +
                                         std::to_string(stats.steps));

            model.params.zero_grad();
            ag::backward(batch_loss);
            optim.step(lr_scale);

            stats.loss_curve.push_back(batch_value);
            if (metrics.is_open()) {
                nlohmann::json rec{{"step", stats.steps},
                                   {"epoch", epoch},
                                   {"loss", batch_value},
                                   {"loss_box", sum_box / denom},
                                   {"loss_giou", sum_giou / denom},
                                   {"loss_obj_ce", sum_ce / denom},
                                   {"loss_inter_focal", sum_focal / denom},
                                   {"loss_mimic", sum_mimic / denom},
                                   {"lr", cfg.optim.lr * lr_scale},
                                   {"grad_norm", optim.last_grad_norm()}};
                metrics << rec.dump() << "\n";
            }
            ++stats.steps;
        }
    }

    if (!cfg.checkpoint_path.empty())
        save_checkpoint(model, cfg.checkpoint_path, cfg.checkpoint_metadata);
    return stats;
}

}  // namespace hoidet::train
