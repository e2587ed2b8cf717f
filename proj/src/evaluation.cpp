#include "hoidet/evaluation.hpp"

#include "hoidet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace hoidet::eval {

namespace {

geom::Box as_box(const std::array<double, 4>& c) { return {c[0], c[1], c[2], c[3]}; }

}  // namespace

std::optional<size_t> match_detection(const infer::Detection& det,
                                      const std::vector<GtPair>& gts,
                                      const std::vector<char>& used) {
    if (used.size() != gts.size())
        throw std::invalid_argument("match_detection: one used flag per GT pair");

    std::optional<size_t> best;
    double best_overlap = 0.5;  // both IoUs must clear 0.5 strictly
    for (size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].hoi_id != det.hoi_id) continue;
        double overlap = std::min(geom::iou(as_box(det.human_box), as_box(gts[g].human_box)),
                                  geom::iou(as_box(det.object_box), as_box(gts[g].object_box)));
        if (overlap > best_overlap) {
            best_overlap = overlap;
            best = g;
        }
    }
    return best;
}

double average_precision(const std::vector<char>& is_tp, int64_t n_gt) {
    if (n_gt <= 0) throw std::invalid_argument("average_precision: n_gt must be positive");

    std::vector<double> prec(is_tp.size());
    int64_t cum = 0;
    for (size_t i = 0; i < is_tp.size(); ++i) {
        if (is_tp[i]) ++cum;
        prec[i] = double(cum) / double(i + 1);
    }

    // sweep right to left so `best` is the envelope precision at each recall
    // level; recall advances by 1/n_gt exactly at the true positives
    double best = 0.0, ap = 0.0;
    for (size_t i = is_tp.size(); i-- > 0;) {
        best = std::max(best, prec[i]);
        if (is_tp[i]) ap += best;
    }
    return ap / double(n_gt);
}

namespace {

double mean_over(const std::vector<int>& ids, const EvalReport& r) {
    double sum = 0.0;
    int n = 0;
    for (int h : ids) {
        if (h < 0 || size_t(h) >= r.per_hoi_ap.size())
            throw std::runtime_error("evaluate: split references hoi id " + std::to_string(h) +
                                     " outside the label space");
        if (r.counts[size_t(h)] > 0) {
            sum += r.per_hoi_ap[size_t(h)];
            ++n;
        }
    }
    return n > 0 ? sum / n : std::nan("");
}

}  // namespace

EvalReport evaluate(const std::vector<infer::ImageDetections>& dets,
                    const data::DatasetManifest& gt, const LabelSpace& ls,
                    const SplitSpec* split) {
    const size_t n_hoi = ls.triplets.size();

    std::unordered_map<std::string, size_t> img_index;
    for (size_t i = 0; i < gt.images.size(); ++i) img_index.emplace(gt.images[i].image_id, i);

    for (const auto& im : dets) {
        if (!img_index.count(im.image_id))
            throw std::runtime_error("evaluate: detections reference unknown image " +
                                     im.image_id);
        for (const auto& d : im.dets) {
            if (d.hoi_id < 0 || size_t(d.hoi_id) >= n_hoi)
                throw std::runtime_error("evaluate: detection hoi id out of range");
            if (!(d.human_box[0] < d.human_box[2] && d.human_box[1] < d.human_box[3]) ||
                !(d.object_box[0] < d.object_box[2] && d.object_box[1] < d.object_box[3]) ||
                !std::isfinite(d.score))
                throw std::runtime_error("evaluate: malformed detection in image " + im.image_id);
        }
    }

    EvalReport r;
    r.counts.assign(n_hoi, 0);
    std::vector<std::vector<GtPair>> gt_pairs(gt.images.size());
    for (size_t i = 0; i < gt.images.size(); ++i)
        for (const auto& a : gt.images[i].annotations)
            for (int h : a.hoi_ids) {
                if (h < 0 || size_t(h) >= n_hoi)
                    throw std::runtime_error("evaluate: GT hoi id out of range");
                gt_pairs[i].push_back({a.human_box, a.object_box, h});
                ++r.counts[size_t(h)];
            }

    std::vector<std::vector<char>> used(gt.images.size());
    for (size_t i = 0; i < used.size(); ++i) used[i].assign(gt_pairs[i].size(), 0);

    r.per_hoi_ap.assign(n_hoi, std::nan(""));
    struct Cand {
        double score;
        size_t img;
        const infer::Detection* d;
    };
    for (size_t h = 0; h < n_hoi; ++h) {
        std::vector<Cand> cands;
        for (const auto& im : dets)
            for (const auto& d : im.dets)
                if (size_t(d.hoi_id) == h) cands.push_back({d.score, img_index[im.image_id], &d});
        // ranking is global across the dataset; ties keep file order
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.score > b.score; });

        std::vector<char> tp;
        tp.reserve(cands.size());
        for (const auto& c : cands) {
            auto m = match_detection(*c.d, gt_pairs[c.img], used[c.img]);
            if (m) used[c.img][*m] = 1;
            tp.push_back(m.has_value());
        }
        if (r.counts[h] > 0) r.per_hoi_ap[h] = average_precision(tp, r.counts[h]);
    }

    std::vector<int> all;
    for (size_t h = 0; h < n_hoi; ++h) all.push_back(int(h));
    r.map_full = mean_over(all, r);

    std::vector<int> rare, non_rare;
    if (split && (!split->rare.empty() || !split->non_rare.empty())) {
        rare = split->rare;
        non_rare = split->non_rare;
    } else if (ls.has_counts()) {
        auto rs = rare_split(ls.train_counts);
        rare = rs.rare;
        non_rare = rs.non_rare;
    }
    r.map_rare = rare.empty() && non_rare.empty() ? std::nan("") : mean_over(rare, r);
    r.map_nonrare = rare.empty() && non_rare.empty() ? std::nan("") : mean_over(non_rare, r);

    if (split && (!split->seen.empty() || !split->unseen.empty())) {
        r.map_seen = mean_over(split->seen, r);
        r.map_unseen = mean_over(split->unseen, r);
    } else {
        r.map_seen = r.map_unseen = std::nan("");
    }
    return r;
}

nlohmann::json report_to_json(const EvalReport& r, const LabelSpace& ls) {
    if (r.per_hoi_ap.size() != ls.triplets.size() || r.counts.size() != ls.triplets.size())
        throw std::invalid_argument("report_to_json: report does not match the label space");

    auto put = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    nlohmann::json cats = nlohmann::json::array();
    for (size_t h = 0; h < r.per_hoi_ap.size(); ++h) {
        const auto& t = ls.triplets[h];
        cats.push_back({{"hoi_id", int(h)},
                        {"verb", ls.verbs[size_t(t.verb_id)].name},
                        {"object", ls.objects[size_t(t.object_id)].name},
                        {"n_gt", r.counts[h]},
                        {"ap", put(r.per_hoi_ap[h])}});
    }
    return nlohmann::json{{"map",
                           {{"full", put(r.map_full)},
                            {"rare", put(r.map_rare)},
                            {"nonrare", put(r.map_nonrare)},
                            {"seen", put(r.map_seen)},
                            {"unseen", put(r.map_unseen)}}},
                          {"categories", cats}};
}

void save_report_json(const EvalReport& r, const LabelSpace& ls, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report to " + path);
    out << report_to_json(r, ls).dump(2) << "\n";
}

void save_report_csv(const EvalReport& r, const LabelSpace& ls, const std::string& path) {
    if (r.per_hoi_ap.size() != ls.triplets.size())
        throw std::invalid_argument("save_report_csv: report does not match the label space");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report to " + path);

    out << "hoi_id,verb,object,n_gt,ap\n";
    char buf[64];
    for (size_t h = 0; h < r.per_hoi_ap.size(); ++h) {
        const auto& t = ls.triplets[h];
        out << h << ',' << ls.verbs[size_t(t.verb_id)].name << ','
            << ls.objects[size_t(t.object_id)].name << ',' << r.counts[h] << ',';
        if (std::isfinite(r.per_hoi_ap[h])) {
            std::snprintf(buf, sizeof buf, "%.10g", r.per_hoi_ap[h]);
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace hoidet::eval
