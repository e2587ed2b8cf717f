#include "hoidet/inference.hpp"

#include "hoidet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace hoidet::infer {

std::vector<double> compose_scores(const std::vector<double>& s_a,
                                   const std::vector<double>& s_o, int n_q,
                                   const LabelSpace& ls) {
    size_t n_a = ls.triplets.size(), n_o = ls.objects.size();
    if (s_a.size() != size_t(n_q) * n_a || s_o.size() != size_t(n_q) * n_o)
        throw std::invalid_argument("compose_scores: shape mismatch");

    std::vector<double> out(s_a.size());
    std::vector<double> row(n_o);
    for (int i = 0; i < n_q; ++i) {
        std::copy_n(s_o.begin() + size_t(i) * n_o, n_o, row.begin());
        auto e = expand_object_scores(row, ls);
        for (size_t h = 0; h < n_a; ++h)
            out[size_t(i) * n_a + h] = s_a[size_t(i) * n_a + h] + e[h] * e[h];
    }
    return out;
}

namespace {

std::array<double, 4> to_pixel_corners(const double* cxcywh, int img_w, int img_h) {
    double cx = cxcywh[0] * img_w, cy = cxcywh[1] * img_h;
    double w = cxcywh[2] * img_w, h = cxcywh[3] * img_h;
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

geom::Box as_box(const std::array<double, 4>& c) { return {c[0], c[1], c[2], c[3]}; }

}  // namespace

std::vector<Detection> select_topk(const std::vector<double>& composed,
                                   const std::vector<double>& human_boxes,
                                   const std::vector<double>& object_boxes, int n_q,
                                   const LabelSpace& ls, int k, int img_w, int img_h) {
    if (k < 1) throw std::invalid_argument("select_topk: K must be at least 1");
    size_t n_a = ls.triplets.size();
    if (composed.size() != size_t(n_q) * n_a)
        throw std::invalid_argument("select_topk: score shape mismatch");
    if (human_boxes.size() != size_t(n_q) * 4 || object_boxes.size() != size_t(n_q) * 4)
        throw std::invalid_argument("select_topk: box shape mismatch");

    std::vector<size_t> cells(composed.size());
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    std::sort(cells.begin(), cells.end(), [&](size_t a, size_t b) {
        if (composed[a] != composed[b]) return composed[a] > composed[b];
        return a < b;  // row-major order is exactly (query, hoi)
    });
    if (cells.size() > size_t(k)) cells.resize(size_t(k));

    std::vector<Detection> out;
    out.reserve(cells.size());
    for (size_t cell : cells) {
        int q = int(cell / n_a), h = int(cell % n_a);
        Detection d;
        d.human_box = to_pixel_corners(&human_boxes[size_t(q) * 4], img_w, img_h);
        d.object_box = to_pixel_corners(&object_boxes[size_t(q) * 4], img_w, img_h);
        d.hoi_id = h;
        d.object_id = ls.expansion_map[size_t(h)];
        d.score = composed[cell];
        out.push_back(d);
    }
    return out;
}

std::vector<Detection> triplet_nms(std::vector<Detection> dets, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("triplet_nms: iou threshold must be in (0,1]");

    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });

    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& key : kept) {
            if (key.hoi_id != d.hoi_id) continue;
            if (geom::iou(as_box(key.human_box), as_box(d.human_box)) > iou_threshold &&
                geom::iou(as_box(key.object_box), as_box(d.object_box)) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> detect(const GenModel& model, const Image& img, const LabelSpace& ls,
                              int k, double iou_threshold) {
    if (!model.verb_mode() && !model.inter_cls.active_rows.empty())
        throw std::runtime_error("detect: model still restricted to seen rows; "
                                 "inference uses the full classifier");

    ag::NoGradGuard guard;
    auto r = forward(model, img);
    int n_q = model.cfg.n_q;
    size_t n_a = ls.triplets.size(), n_o = ls.objects.size();

    const auto& inter = r.preds.inter_logits.back();
    const auto& obj = r.preds.object_logits.back();

    // sigmoid interaction scores per triplet; verb-mode logits are gathered
    // through each triplet's verb first
    std::vector<double> s_a(size_t(n_q) * n_a);
    if (model.verb_mode()) {
        size_t n_v = ls.verbs.size();
        for (int i = 0; i < n_q; ++i)
            for (size_t h = 0; h < n_a; ++h) {
                double z = inter->x[size_t(i) * n_v + size_t(ls.triplets[h].verb_id)];
                s_a[size_t(i) * n_a + h] = 1.0 / (1.0 + std::exp(-z));
            }
    } else {
        for (size_t i = 0; i < s_a.size(); ++i) s_a[i] = 1.0 / (1.0 + std::exp(-inter->x[i]));
    }

    // softmax over the real object classes, no-object column dropped first
    std::vector<double> s_o(size_t(n_q) * n_o);
    for (int i = 0; i < n_q; ++i) {
        const double* z = &obj->x[size_t(i) * (n_o + 1)];
        double mx = *std::max_element(z, z + n_o);
        double denom = 0;
        for (size_t c = 0; c < n_o; ++c) denom += std::exp(z[c] - mx);
        for (size_t c = 0; c < n_o; ++c) s_o[size_t(i) * n_o + c] = std::exp(z[c] - mx) / denom;
    }

    auto composed = compose_scores(s_a, s_o, n_q, ls);
    auto top = select_topk(composed, r.preds.human_boxes.back()->x,
                           r.preds.object_boxes.back()->x, n_q, ls, k, img.w, img.h);
    return triplet_nms(std::move(top), iou_threshold);
}

nlohmann::json detection_to_json(const Detection& d, const std::string& image_id) {
    return {{"image_id", image_id},
            {"human_box", d.human_box},
            {"object_box", d.object_box},
            {"object_id", d.object_id},
            {"hoi_id", d.hoi_id},
            {"score", d.score}};
}

void save_detections(const std::vector<ImageDetections>& all, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& im : all)
        for (const auto& d : im.dets) arr.push_back(detection_to_json(d, im.image_id));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write detections to " + path);
    out << arr.dump(2) << "\n";
}

std::vector<ImageDetections> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open detections file " + path);
    nlohmann::json arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw std::runtime_error(path + ": detections must be a JSON array");

    std::vector<ImageDetections> out;
    std::unordered_map<std::string, size_t> index_of;
    for (const auto& j : arr) {
        Detection d;
        d.human_box = j.at("human_box").get<std::array<double, 4>>();
        d.object_box = j.at("object_box").get<std::array<double, 4>>();
        d.object_id = j.at("object_id").get<int>();
        d.hoi_id = j.at("hoi_id").get<int>();
        d.score = j.at("score").get<double>();
        if (!std::isfinite(d.score)) throw std::runtime_error(path + ": non-finite score");
        for (auto& b : {d.human_box, d.object_box})
            if (!(b[0] < b[2] && b[1] < b[3]))
                throw std::runtime_error(path + ": degenerate detection box");
        std::string id = j.at("image_id").get<std::string>();
        auto [it, fresh] = index_of.try_emplace(id, out.size());
        if (fresh) out.push_back({id, {}});
        out[it->second].dets.push_back(d);
    }
    return out;
}

namespace {

void draw_rect(Image& img, const std::array<double, 4>& box, float r, float g, float b) {
    int x0 = std::clamp(int(std::lround(box[0])), 0, img.w - 1);
    int y0 = std::clamp(int(std::lround(box[1])), 0, img.h - 1);
    int x1 = std::clamp(int(std::lround(box[2])), 0, img.w - 1);
    int y1 = std::clamp(int(std::lround(box[3])), 0, img.h - 1);
    auto put = [&](int x, int y) {
        size_t i = (size_t(y) * img.w + x) * 3;
        img.hwc[i] = r;
        img.hwc[i + 1] = g;
        img.hwc[i + 2] = b;
    };
    for (int x = x0; x <= x1; ++x) {
        put(x, y0);
        put(x, y1);
    }
    for (int y = y0; y <= y1; ++y) {
        put(x0, y);
        put(x1, y);
    }
}

}  // namespace

Image render_detections(const Image& img, const std::vector<Detection>& dets) {
    Image out = img;
    for (const auto& d : dets) {
        draw_rect(out, d.human_box, 0.98f, 0.78f, 0.05f);
        draw_rect(out, d.object_box, 0.05f, 0.05f, 0.05f);
    }
    return out;
}

}  // namespace hoidet::infer
