#include "hoidet/data.hpp"

#include "hoidet/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace hoidet::data {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// manifest IO

namespace {

json box_to_json(const std::array<double, 4>& b) { return json{b[0], b[1], b[2], b[3]}; }

std::array<double, 4> box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

void check_box(const std::array<double, 4>& b, int w, int h, const std::string& where) {
    for (double v : b)
        if (!std::isfinite(v)) throw std::runtime_error(where + ": non-finite box coordinate");
    if (!(b[0] < b[2]) || !(b[1] < b[3]))
        throw std::runtime_error(where + ": degenerate box (needs x1<x2 and y1<y2)");
    if (b[0] < 0 || b[1] < 0 || b[2] > w || b[3] > h)
        throw std::runtime_error(where + ": box outside image bounds");
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["label_space_path"] = m.label_space_path;
    j["images"] = json::array();
    for (const auto& rec : m.images) {
        json ji{{"image_id", rec.image_id},
                {"file", rec.file},
                {"width", rec.width},
                {"height", rec.height}};
        ji["annotations"] = json::array();
        for (const auto& a : rec.annotations)
            ji["annotations"].push_back({{"human_box", box_to_json(a.human_box)},
                                         {"object_box", box_to_json(a.object_box)},
                                         {"object_id", a.object_id},
                                         {"hoi_ids", a.hoi_ids}});
        j["images"].push_back(std::move(ji));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(1) << "\n";
}

DatasetManifest load_manifest(const std::string& path, const LabelSpace* ls) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    json j;
    in >> j;

    DatasetManifest m;
    m.label_space_path = j.value("label_space_path", std::string());
    for (const auto& ji : j.at("images")) {
        ImageRecord rec;
        rec.image_id = ji.at("image_id").get<std::string>();
        rec.file = ji.at("file").get<std::string>();
        rec.width = ji.at("width").get<int>();
        rec.height = ji.at("height").get<int>();
        if (rec.width <= 0 || rec.height <= 0)
            throw std::runtime_error(rec.image_id + ": non-positive image size");
        for (const auto& ja : ji.at("annotations")) {
            Annotation a;
            a.human_box = box_from_json(ja.at("human_box"));
            a.object_box = box_from_json(ja.at("object_box"));
            a.object_id = ja.at("object_id").get<int>();
            a.hoi_ids = ja.at("hoi_ids").get<std::vector<int>>();
            check_box(a.human_box, rec.width, rec.height, rec.image_id + " human_box");
            check_box(a.object_box, rec.width, rec.height, rec.image_id + " object_box");
            if (ls) {
                if (a.object_id < 0 || a.object_id >= ls->n_objects())
                    throw std::runtime_error(rec.image_id + ": unknown object id " +
                                             std::to_string(a.object_id));
                for (int hid : a.hoi_ids) {
                    if (hid < 0 || hid >= ls->n_hoi())
                        throw std::runtime_error(rec.image_id + ": unknown hoi id " +
                                                 std::to_string(hid));
                    if (ls->triplets[size_t(hid)].object_id != a.object_id)
                        throw std::runtime_error(rec.image_id + ": hoi " + std::to_string(hid) +
                                                 " does not involve object " +
                                                 std::to_string(a.object_id));
                }
            }
            rec.annotations.push_back(std::move(a));
        }
        m.images.push_back(std::move(rec));
    }
    return m;
}

std::string resolve_data_path(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    if (const char* root = std::getenv("GENHOI_DATA_DIR"); root && *root)
        return (fs::path(root) / path).string();
    return path;
}

std::vector<int64_t> counts_from_manifest(const DatasetManifest& m, int n_hoi) {
    std::vector<int64_t> counts(size_t(n_hoi), 0);
    for (const auto& rec : m.images)
        for (const auto& a : rec.annotations)
            for (int hid : a.hoi_ids) {
                if (hid < 0 || hid >= n_hoi)
                    throw std::runtime_error("hoi id out of range in manifest: " +
                                             std::to_string(hid));
                ++counts[size_t(hid)];
            }
    return counts;
}

// ---------------------------------------------------------------------------
// geometry predicates

namespace {

double inter_area(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    double w = std::min(a[2], b[2]) - std::max(a[0], b[0]);
    double h = std::min(a[3], b[3]) - std::max(a[1], b[1]);
    return w > 0 && h > 0 ? w * h : 0.0;
}

double area(const std::array<double, 4>& b) { return (b[2] - b[0]) * (b[3] - b[1]); }

double cx(const std::array<double, 4>& b) { return (b[0] + b[2]) / 2; }
double cy(const std::array<double, 4>& b) { return (b[1] + b[3]) / 2; }

}  // namespace

bool predicate_holds(VerbPredicate kind, const std::array<double, 4>& human,
                     const std::array<double, 4>& object, int width, int height) {
    double inter = inter_area(human, object);
    bool disjoint = inter == 0.0;
    double x_overlap = std::min(human[2], object[2]) - std::max(human[0], object[0]);
    double w_min = std::min(human[2] - human[0], object[2] - object[0]);
    double hgap = std::max(object[0] - human[2], human[0] - object[2]);
    double dy = cy(object) - cy(human);
    double dist = std::hypot(cx(object) - cx(human), dy);

    switch (kind) {
        case VerbPredicate::Overlap:
            return inter / area(object) >= 0.25;
        case VerbPredicate::Above:
            return disjoint && cy(human) < cy(object) && x_overlap >= 0.5 * w_min;
        case VerbPredicate::Beside:
            return disjoint && hgap >= 0 && hgap <= 0.15 * width &&
                   std::abs(dy) <= 0.25 * height;
        case VerbPredicate::Far:
            return disjoint && dist >= 0.5 * width;
        case VerbPredicate::NoInteraction:
            for (auto k : {VerbPredicate::Overlap, VerbPredicate::Above, VerbPredicate::Beside,
                           VerbPredicate::Far})
                if (predicate_holds(k, human, object, width, height)) return false;
            return true;
    }
    return false;
}

std::vector<VerbRule> make_default_rules(const LabelSpace& ls) {
    std::vector<VerbRule> rules;
    for (const auto& v : ls.verbs) {
        VerbRule r;
        r.verb_id = v.id;
        if (v.is_no_interaction)
            r.kind = VerbPredicate::NoInteraction;
        else if (v.name == "hold")
            r.kind = VerbPredicate::Overlap;
        else if (v.name == "lift")
            r.kind = VerbPredicate::Above;
        else if (v.name == "kick")
            r.kind = VerbPredicate::Beside;
        else if (v.name == "watch")
            r.kind = VerbPredicate::Far;
        else
            throw std::runtime_error("no geometry rule for verb: " + v.name);
        rules.push_back(r);
    }
    return rules;
}

std::vector<int> label_pair(const std::array<double, 4>& human,
                            const std::array<double, 4>& object, int object_id,
                            const LabelSpace& ls, const std::vector<VerbRule>& rules,
                            int width, int height) {
    std::vector<int> out;
    for (const auto& t : ls.triplets) {
        if (t.object_id != object_id) continue;
        auto rule = std::find_if(rules.begin(), rules.end(),
                                 [&](const VerbRule& r) { return r.verb_id == t.verb_id; });
        if (rule == rules.end())
            throw std::runtime_error("no rule for verb id " + std::to_string(t.verb_id));
        if (predicate_holds(rule->kind, human, object, width, height)) out.push_back(t.id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

struct Rgb {
    float r, g, b;
};

constexpr Rgb kBackground{0.93f, 0.93f, 0.90f};
constexpr Rgb kPerson{0.16f, 0.22f, 0.58f};

Rgb object_color(int object_id) {
    switch (object_id % 4) {
        case 0: return {0.85f, 0.16f, 0.16f};  // ball: red
        case 1: return {0.12f, 0.60f, 0.22f};  // box: green
        case 2: return {0.90f, 0.55f, 0.10f};  // cone: orange
        default: return {0.55f, 0.15f, 0.65f}; // ring: purple
    }
}

void put(Image& img, int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    size_t i = (size_t(y) * img.w + x) * 3;
    img.hwc[i] = c.r;
    img.hwc[i + 1] = c.g;
    img.hwc[i + 2] = c.b;
}

// Paints every pixel whose center lies inside `box` and satisfies `inside`
// in normalized glyph coordinates u, v in [0,1].
template <class Fn>
void paint(Image& img, const std::array<double, 4>& box, Rgb color, Fn inside) {
    int x0 = std::max(0, int(std::floor(box[0])));
    int y0 = std::max(0, int(std::floor(box[1])));
    int x1 = std::min(img.w - 1, int(std::ceil(box[2])));
    int y1 = std::min(img.h - 1, int(std::ceil(box[3])));
    double bw = box[2] - box[0], bh = box[3] - box[1];
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double px = x + 0.5, py = y + 0.5;
            if (px < box[0] || px >= box[2] || py < box[1] || py >= box[3]) continue;
            double u = (px - box[0]) / bw, v = (py - box[1]) / bh;
            if (inside(u, v)) put(img, x, y, color);
        }
}

void draw_person(Image& img, const std::array<double, 4>& box) {
    // head disc over a torso slab, enough to be recognizably asymmetric
    paint(img, box, kPerson, [](double u, double v) {
        double du = u - 0.5, dv = (v - 0.18) / 0.18;
        if (du * du / (0.22 * 0.22) + dv * dv <= 1.0) return true;          // head
        return u > 0.28 && u < 0.72 && v > 0.34 && v < 1.0;                 // torso
    });
}

void draw_object(Image& img, const std::array<double, 4>& box, int object_id) {
    Rgb c = object_color(object_id);
    switch (object_id % 4) {
        case 0:  // filled disc
            paint(img, box, c, [](double u, double v) {
                double du = u - 0.5, dv = v - 0.5;
                return du * du + dv * dv <= 0.25;
            });
            break;
        case 1:  // filled square
            paint(img, box, c, [](double, double) { return true; });
            break;
        case 2:  // upward triangle
            paint(img, box, c, [](double u, double v) { return std::abs(u - 0.5) <= v / 2; });
            break;
        default:  // ring
            paint(img, box, c, [](double u, double v) {
                double du = u - 0.5, dv = v - 0.5;
                double r2 = du * du + dv * dv;
                return r2 <= 0.25 && r2 >= 0.25 * 0.55 * 0.55;
            });
    }
}

}  // namespace

Image render_scene(const ImageRecord& rec, const LabelSpace& ls) {
    (void)ls;
    Image img;
    img.h = rec.height;
    img.w = rec.width;
    img.hwc.assign(size_t(img.h) * img.w * 3, 0.f);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) put(img, x, y, kBackground);
    for (const auto& a : rec.annotations) {
        draw_person(img, a.human_box);
        draw_object(img, a.object_box, a.object_id);
    }
    return img;
}

// ---------------------------------------------------------------------------
// scene generation

GenSpec genspec_from_json(const json& j) {
    GenSpec s;
    s.n_images = j.value("n_images", s.n_images);
    s.image_size = j.value("image_size", s.image_size);
    s.long_tail_exponent = j.value("long_tail_exponent", s.long_tail_exponent);
    s.two_pair_prob = j.value("two_pair_prob", s.two_pair_prob);
    s.retry_budget = j.value("retry_budget", s.retry_budget);
    s.seed = j.value("seed", s.seed);
    if (s.n_images <= 0 || s.image_size < 32 || s.retry_budget < 1)
        throw std::runtime_error("invalid generator spec");
    return s;
}

json genspec_to_json(const GenSpec& s) {
    return json{{"n_images", s.n_images},
                {"image_size", s.image_size},
                {"long_tail_exponent", s.long_tail_exponent},
                {"two_pair_prob", s.two_pair_prob},
                {"retry_budget", s.retry_budget},
                {"seed", s.seed}};
}

namespace {

std::array<double, 4> box_around(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

bool box_ok(const std::array<double, 4>& b, int s, double min_side) {
    return b[0] >= 1 && b[1] >= 1 && b[2] <= s - 1 && b[3] <= s - 1 &&
           b[2] - b[0] >= min_side && b[3] - b[1] >= min_side;
}

// One placement proposal aimed at the target predicate; the caller re-checks
// the exact predicate afterwards.
struct Placement {
    std::array<double, 4> human, object;
};

Placement propose(VerbPredicate kind, int s, Rng& rng) {
    double f = s / 64.0;
    double hw = rng.uniform(18, 32) * f, hh = rng.uniform(22, 36) * f;
    double ow = rng.uniform(14, 26) * f, oh = rng.uniform(14, 26) * f;
    double margin_h = std::max(hw, hh) / 2 + 1;
    double margin_o = std::max(ow, oh) / 2 + 1;
    double hx = rng.uniform(margin_h, s - margin_h);
    double hy = rng.uniform(margin_h, s - margin_h);
    double ox, oy;
    switch (kind) {
        case VerbPredicate::Overlap:
            ox = hx + rng.uniform(-0.4, 0.4) * hw;
            oy = hy + rng.uniform(-0.4, 0.4) * hh;
            break;
        case VerbPredicate::Above:
            ox = hx + rng.uniform(-0.2, 0.2) * std::min(hw, ow);
            oy = hy + hh / 2 + oh / 2 + rng.uniform(1.0, 8.0) * f;
            break;
        case VerbPredicate::Beside: {
            double gap = rng.uniform(0.0, 0.12) * s;
            double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
            ox = hx + side * (hw / 2 + gap + ow / 2);
            oy = hy + rng.uniform(-0.15, 0.15) * s;
            break;
        }
        case VerbPredicate::Far: {
            double angle = rng.uniform(0, 2 * 3.14159265358979323846);
            double d = rng.uniform(0.55, 0.9) * s;
            ox = hx + d * std::cos(angle);
            oy = hy + d * std::sin(angle);
            break;
        }
        case VerbPredicate::NoInteraction:
        default:
            ox = rng.uniform(margin_o, s - margin_o);
            oy = rng.uniform(margin_o, s - margin_o);
    }
    return {box_around(hx, hy, hw, hh), box_around(ox, oy, ow, oh)};
}

int sample_power_law(const std::vector<double>& cumulative, Rng& rng) {
    double u = rng.uniform() * cumulative.back();
    return int(std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
}

}  // namespace

GenResult generate_dataset(const LabelSpace& ls, const std::vector<VerbRule>& rules,
                           const GenSpec& spec, const std::string& out_dir,
                           const std::string& label_space_path) {
    GenResult out;
    out.manifest.label_space_path = label_space_path;
    out.hoi_counts.assign(size_t(ls.n_hoi()), 0);

    std::vector<double> cumulative;
    double acc = 0;
    for (int k = 0; k < ls.n_hoi(); ++k) {
        acc += std::pow(double(k + 1), -spec.long_tail_exponent);
        cumulative.push_back(acc);
    }
    auto rule_of = [&](int verb_id) {
        for (const auto& r : rules)
            if (r.verb_id == verb_id) return r;
        throw std::runtime_error("no rule for verb id " + std::to_string(verb_id));
    };

    if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "images");

    int s = spec.image_size;
    double min_side = 6.0 * s / 64.0;
    for (int i = 0; i < spec.n_images; ++i) {
        Rng rng(mix_seed(spec.seed, uint64_t(i)));
        ImageRecord rec;
        char name[32];
        std::snprintf(name, sizeof(name), "img_%06d", i);
        rec.image_id = name;
        rec.file = std::string("images/") + name + ".png";
        rec.width = rec.height = s;

        int n_pairs = rng.bernoulli(spec.two_pair_prob) ? 2 : 1;
        for (int p = 0; p < n_pairs; ++p) {
            int hoi = sample_power_law(cumulative, rng);
            const auto& trip = ls.triplets[size_t(hoi)];
            auto rule = rule_of(trip.verb_id);
            bool placed = false;
            for (int attempt = 0; attempt < spec.retry_budget && !placed; ++attempt) {
                auto prop = propose(rule.kind, s, rng);
                if (!box_ok(prop.human, s, min_side) || !box_ok(prop.object, s, min_side))
                    continue;
                if (!predicate_holds(rule.kind, prop.human, prop.object, s, s)) continue;
                Annotation a;
                a.human_box = prop.human;
                a.object_box = prop.object;
                a.object_id = trip.object_id;
                a.hoi_ids = label_pair(prop.human, prop.object, trip.object_id, ls, rules, s, s);
                for (int hid : a.hoi_ids) ++out.hoi_counts[size_t(hid)];
                rec.annotations.push_back(std::move(a));
                placed = true;
            }
            if (!placed)
                out.rejected.push_back(rec.image_id + ": no placement for verb " +
                                       ls.verbs[size_t(trip.verb_id)].name + " on object " +
                                       ls.objects[size_t(trip.object_id)].name + " within " +
                                       std::to_string(spec.retry_budget) + " tries");
        }
        if (!out_dir.empty()) {
            auto img = render_scene(rec, ls);
            write_png((fs::path(out_dir) / rec.file).string(), img);
        }
        out.manifest.images.push_back(std::move(rec));
    }

    if (!out_dir.empty())
        save_manifest(out.manifest, (fs::path(out_dir) / "manifest.json").string());
    return out;
}

// ---------------------------------------------------------------------------
// teacher embeddings

std::vector<double> synthetic_teacher(const ImageRecord& rec, const LabelSpace& ls,
                                      const vlkt::EmbeddingProvider& provider) {
    std::vector<double> mean(size_t(provider.dim()), 0.0);
    int n = 0;
    for (const auto& a : rec.annotations)
        for (int hid : a.hoi_ids) {
            const auto& t = ls.triplets[size_t(hid)];
            auto e = provider.embed_text(
                vlkt::hoi_prompt(ls.verbs[size_t(t.verb_id)], ls.objects[size_t(t.object_id)]));
            for (size_t d = 0; d < mean.size(); ++d) mean[d] += e[d];
            ++n;
        }
    if (n == 0) {
        mean = provider.embed_text(kBackgroundPrompt);
    } else {
        for (double& v : mean) v /= n;
    }
    double norm = 0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
        throw std::runtime_error(rec.image_id + ": teacher embedding collapsed to zero");
    for (double& v : mean) v /= norm;
    return mean;
}

// ---------------------------------------------------------------------------
// sample assembly and augmentation

namespace {

std::array<double, 4> to_cxcywh_norm(const std::array<double, 4>& px, int w, int h) {
    return {(px[0] + px[2]) / 2 / w, (px[1] + px[3]) / 2 / h, (px[2] - px[0]) / w,
            (px[3] - px[1]) / h};
}

}  // namespace

namespace {

std::vector<train::TrainSample> samples_of(const DatasetManifest& m, const LabelSpace& ls,
                                           const vlkt::EmbeddingProvider* provider,
                                           const vlkt::KeyedEmbeddings* teachers,
                                           const std::string* manifest_dir) {
    std::vector<train::TrainSample> out;
    for (const auto& rec : m.images) {
        train::TrainSample sample;
        sample.image_id = rec.image_id;
        if (manifest_dir) {
            sample.image = read_png((fs::path(*manifest_dir) / rec.file).string());
            if (sample.image.w != rec.width || sample.image.h != rec.height)
                throw std::runtime_error(rec.image_id + ": PNG size does not match manifest");
        } else {
            sample.image = render_scene(rec, ls);
        }
        for (const auto& a : rec.annotations) {
            train::GtInstance gt;
            gt.human_box = to_cxcywh_norm(a.human_box, rec.width, rec.height);
            gt.object_box = to_cxcywh_norm(a.object_box, rec.width, rec.height);
            gt.object_id = a.object_id;
            gt.hoi_ids = a.hoi_ids;
            sample.gts.push_back(std::move(gt));
        }
        if (teachers)
            sample.teacher = teachers->lookup(rec.image_id);
        else if (provider)
            sample.teacher = synthetic_teacher(rec, ls, *provider);
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace

std::vector<train::TrainSample> load_samples(const DatasetManifest& m,
                                             const std::string& manifest_dir,
                                             const LabelSpace& ls,
                                             const vlkt::EmbeddingProvider* provider,
                                             const vlkt::KeyedEmbeddings* teachers) {
    return samples_of(m, ls, provider, teachers, &manifest_dir);
}

std::vector<train::TrainSample> render_samples(const DatasetManifest& m, const LabelSpace& ls,
                                               const vlkt::EmbeddingProvider* provider,
                                               const vlkt::KeyedEmbeddings* teachers) {
    return samples_of(m, ls, provider, teachers, nullptr);
}

namespace {

// Rebuild an ImageRecord-shaped view of a TrainSample so the teacher can be
// recomputed after augmentation changes the labels.
ImageRecord record_of(const train::TrainSample& s, int w, int h) {
    ImageRecord rec;
    rec.image_id = s.image_id;
    rec.width = w;
    rec.height = h;
    for (const auto& gt : s.gts) {
        Annotation a;
        a.human_box = {(gt.human_box[0] - gt.human_box[2] / 2) * w,
                       (gt.human_box[1] - gt.human_box[3] / 2) * h,
                       (gt.human_box[0] + gt.human_box[2] / 2) * w,
                       (gt.human_box[1] + gt.human_box[3] / 2) * h};
        a.object_box = {(gt.object_box[0] - gt.object_box[2] / 2) * w,
                        (gt.object_box[1] - gt.object_box[3] / 2) * h,
                        (gt.object_box[0] + gt.object_box[2] / 2) * w,
                        (gt.object_box[1] + gt.object_box[3] / 2) * h};
        a.object_id = gt.object_id;
        a.hoi_ids = gt.hoi_ids;
        rec.annotations.push_back(std::move(a));
    }
    return rec;
}

Image hflip_image(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.hwc[(size_t(y) * img.w + x) * 3 + c] =
                    img.hwc[(size_t(y) * img.w + (img.w - 1 - x)) * 3 + c];
    return out;
}

Image scale_image(const Image& img, double s) {
    Image out = img;
    double cx = img.w / 2.0, cy = img.h / 2.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            // inverse map: where did this output pixel come from
            int sx = int(std::lround(cx + (x + 0.5 - cx) / s - 0.5));
            int sy = int(std::lround(cy + (y + 0.5 - cy) / s - 0.5));
            for (int c = 0; c < 3; ++c) {
                float v = kBackground.r;
                if (c == 1) v = kBackground.g;
                if (c == 2) v = kBackground.b;
                if (sx >= 0 && sy >= 0 && sx < img.w && sy < img.h)
                    v = img.hwc[(size_t(sy) * img.w + sx) * 3 + c];
                out.hwc[(size_t(y) * img.w + x) * 3 + c] = v;
            }
        }
    return out;
}

}  // namespace

train::AugmentFn make_augmenter(const LabelSpace& ls, const std::vector<VerbRule>& rules,
                                const vlkt::EmbeddingProvider* provider) {
    return [&ls, rules, provider](const train::TrainSample& in, Rng& rng) {
        train::TrainSample out = in;
        int w = out.image.w, h = out.image.h;

        bool flip = rng.bernoulli(0.5);
        double s = rng.uniform(0.9, 1.1);

        auto rec = record_of(out, w, h);
        if (flip) {
            out.image = hflip_image(out.image);
            for (auto& a : rec.annotations) {
                a.human_box = {w - a.human_box[2], a.human_box[1], w - a.human_box[0],
                               a.human_box[3]};
                a.object_box = {w - a.object_box[2], a.object_box[1], w - a.object_box[0],
                                a.object_box[3]};
            }
        }
        out.image = scale_image(out.image, s);
        double cx = w / 2.0, cy = h / 2.0;
        auto scale_box = [&](std::array<double, 4>& b) {
            b = {cx + (b[0] - cx) * s, cy + (b[1] - cy) * s, cx + (b[2] - cx) * s,
                 cy + (b[3] - cy) * s};
            b[0] = std::clamp(b[0], 0.0, double(w));
            b[2] = std::clamp(b[2], 0.0, double(w));
            b[1] = std::clamp(b[1], 0.0, double(h));
            b[3] = std::clamp(b[3], 0.0, double(h));
        };

        std::vector<Annotation> kept;
        for (auto& a : rec.annotations) {
            scale_box(a.human_box);
            scale_box(a.object_box);
            if (a.human_box[2] - a.human_box[0] < 2 || a.human_box[3] - a.human_box[1] < 2 ||
                a.object_box[2] - a.object_box[0] < 2 || a.object_box[3] - a.object_box[1] < 2)
                continue;
            a.hoi_ids = label_pair(a.human_box, a.object_box, a.object_id, ls, rules, w, h);
            if (!a.hoi_ids.empty()) kept.push_back(a);
        }
        rec.annotations = std::move(kept);

        out.gts.clear();
        for (const auto& a : rec.annotations) {
            train::GtInstance gt;
            gt.human_box = to_cxcywh_norm(a.human_box, w, h);
            gt.object_box = to_cxcywh_norm(a.object_box, w, h);
            gt.object_id = a.object_id;
            gt.hoi_ids = a.hoi_ids;
            out.gts.push_back(std::move(gt));
        }
        // synthetic teachers track the surviving labels; fixed per-image
        // teachers (imported files) stay as loaded
        if (provider && !in.teacher.empty()) out.teacher = synthetic_teacher(rec, ls, *provider);
        return out;
    };
}

// ---------------------------------------------------------------------------
// run configuration

namespace {

vlkt::MimicNorm mimic_norm_from_string(const std::string& s) {
    if (s == "l1" || s == "L1") return vlkt::MimicNorm::L1;
    if (s == "l2" || s == "L2") return vlkt::MimicNorm::L2;
    throw std::runtime_error("mimic_norm must be \"l1\" or \"l2\", got \"" + s + "\"");
}

std::string mimic_norm_to_string(vlkt::MimicNorm n) {
    return n == vlkt::MimicNorm::L1 ? "l1" : "l2";
}

}  // namespace

RunConfig runconfig_from_json(const json& j) {
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        c.loss.weights.lambda_b = l.value("lambda_b", c.loss.weights.lambda_b);
        c.loss.weights.lambda_u = l.value("lambda_u", c.loss.weights.lambda_u);
        c.loss.weights.lambda_c_o = l.value("lambda_c_o", c.loss.weights.lambda_c_o);
        c.loss.weights.lambda_c_a = l.value("lambda_c_a", c.loss.weights.lambda_c_a);
        c.loss.weights.lambda_mimic = l.value("lambda_mimic", c.loss.weights.lambda_mimic);
        c.loss.focal.alpha = l.value("focal_alpha", c.loss.focal.alpha);
        c.loss.focal.gamma = l.value("focal_gamma", c.loss.focal.gamma);
        c.loss.no_object_weight = l.value("no_object_weight", c.loss.no_object_weight);
        c.loss.use_mimic = l.value("use_mimic", c.loss.use_mimic);
        c.loss.mimic_norm = mimic_norm_from_string(
            l.value("mimic_norm", mimic_norm_to_string(c.loss.mimic_norm)));
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        c.optim.lr = o.value("lr", c.optim.lr);
        c.optim.lr_classifier = o.value("lr_classifier", c.optim.lr_classifier);
        c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
        c.optim.beta1 = o.value("beta1", c.optim.beta1);
        c.optim.beta2 = o.value("beta2", c.optim.beta2);
        c.optim.eps = o.value("eps", c.optim.eps);
        c.optim.clip_norm = o.value("clip_norm", c.optim.clip_norm);
    }
    if (j.contains("gen")) c.gen = genspec_from_json(j.at("gen"));
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.label_space_path = j.value("label_space_path", c.label_space_path);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.eval_dataset_dir = j.value("eval_dataset_dir", c.eval_dataset_dir);
    c.run_dir = j.value("run_dir", c.run_dir);
    c.split_path = j.value("split_path", c.split_path);
    c.text_keys_path = j.value("text_keys_path", c.text_keys_path);
    c.text_matrix_path = j.value("text_matrix_path", c.text_matrix_path);
    c.teacher_keys_path = j.value("teacher_keys_path", c.teacher_keys_path);
    c.teacher_matrix_path = j.value("teacher_matrix_path", c.teacher_matrix_path);
    c.augment = j.value("augment", c.augment);
    c.topk = j.value("topk", c.topk);
    c.nms_iou_threshold = j.value("nms_iou_threshold", c.nms_iou_threshold);
    c.detection_score_min = j.value("detection_score_min", c.detection_score_min);
    if (c.epochs < 1 || c.batch_size < 1 || c.topk < 1)
        throw std::runtime_error("epochs, batch_size, and topk must be positive");
    return c;
}

json runconfig_to_json(const RunConfig& c) {
    json j;
    j["model"] = model_config_to_json(c.model);
    j["loss"] = {{"lambda_b", c.loss.weights.lambda_b},
                 {"lambda_u", c.loss.weights.lambda_u},
                 {"lambda_c_o", c.loss.weights.lambda_c_o},
                 {"lambda_c_a", c.loss.weights.lambda_c_a},
                 {"lambda_mimic", c.loss.weights.lambda_mimic},
                 {"focal_alpha", c.loss.focal.alpha},
                 {"focal_gamma", c.loss.focal.gamma},
                 {"no_object_weight", c.loss.no_object_weight},
                 {"use_mimic", c.loss.use_mimic},
                 {"mimic_norm", mimic_norm_to_string(c.loss.mimic_norm)}};
    j["optim"] = {{"lr", c.optim.lr},
                  {"lr_classifier", c.optim.lr_classifier},
                  {"weight_decay", c.optim.weight_decay},
                  {"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"eps", c.optim.eps},
                  {"clip_norm", c.optim.clip_norm}};
    j["gen"] = genspec_to_json(c.gen);
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["label_space_path"] = c.label_space_path;
    j["dataset_dir"] = c.dataset_dir;
    j["eval_dataset_dir"] = c.eval_dataset_dir;
    j["run_dir"] = c.run_dir;
    j["split_path"] = c.split_path;
    j["text_keys_path"] = c.text_keys_path;
    j["text_matrix_path"] = c.text_matrix_path;
    j["teacher_keys_path"] = c.teacher_keys_path;
    j["teacher_matrix_path"] = c.teacher_matrix_path;
    j["augment"] = c.augment;
    j["topk"] = c.topk;
    j["nms_iou_threshold"] = c.nms_iou_threshold;
    j["detection_score_min"] = c.detection_score_min;
    return j;
}

RunConfig load_runconfig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    in >> j;
    return runconfig_from_json(j);
}

std::string config_hash(const json& canonical) {
    uint64_t h = fnv1a64(canonical.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace hoidet::data
