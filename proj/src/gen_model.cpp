#include "hoidet/gen_model.hpp"

#include "hoidet/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace hoidet {

void ModelConfig::validate() const {
    if (n_q < 1) throw std::runtime_error("n_q must be >= 1");
    if (n_layers < 1) throw std::runtime_error("n_layers must be >= 1");
    if (channels % heads != 0) throw std::runtime_error("channels must divide by heads");
    if (classifier_mode != "triplet" && classifier_mode != "verb")
        throw std::runtime_error("classifier_mode must be 'triplet' or 'verb'");
    if (c_t < 8) throw std::runtime_error("c_t must be >= 8");
    if (image_size < 8) throw std::runtime_error("image_size must be >= 8");
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.n_q = j.value("n_q", c.n_q);
    c.channels = j.value("channels", c.channels);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.heads = j.value("heads", c.heads);
    c.backbone_channels = j.value("backbone_channels", c.backbone_channels);
    c.image_size = j.value("image_size", c.image_size);
    c.c_t = j.value("c_t", c.c_t);
    c.classifier_mode = j.value("classifier_mode", c.classifier_mode);
    c.use_pge = j.value("use_pge", c.use_pge);
    c.use_ige = j.value("use_ige", c.use_ige);
    c.use_object_text = j.value("use_object_text", c.use_object_text);
    c.use_interaction_text = j.value("use_interaction_text", c.use_interaction_text);
    c.theta_obj = j.value("theta_obj", c.theta_obj);
    c.theta_inter = j.value("theta_inter", c.theta_inter);
    c.freeze_text_classifiers = j.value("freeze_text_classifiers", c.freeze_text_classifiers);
    c.validate();
    return c;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"n_q", c.n_q},
                {"channels", c.channels},
                {"n_layers", c.n_layers},
                {"enc_layers", c.enc_layers},
                {"heads", c.heads},
                {"backbone_channels", c.backbone_channels},
                {"image_size", c.image_size},
                {"c_t", c.c_t},
                {"classifier_mode", c.classifier_mode},
                {"use_pge", c.use_pge},
                {"use_ige", c.use_ige},
                {"use_object_text", c.use_object_text},
                {"use_interaction_text", c.use_interaction_text},
                {"theta_obj", c.theta_obj},
                {"theta_inter", c.theta_inter},
                {"freeze_text_classifiers", c.freeze_text_classifiers}};
}

ag::Value image_to_planes(const Image& img) {
    auto v = ag::make_value({3, img.h, img.w}, false);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                v->x[(c * img.h + y) * img.w + x] = img.at(y, x, c);
    return v;
}

ag::Value sine_positions(int hp, int wp, int channels) {
    if (channels % 2 != 0) throw std::runtime_error("position channels must be even");
    int half = channels / 2;
    auto pos = ag::make_value({hp * wp, channels}, false);
    const double two_pi = 2.0 * M_PI;
    for (int y = 0; y < hp; ++y) {
        for (int x = 0; x < wp; ++x) {
            double ye = (y + 0.5) / hp * two_pi;
            double xe = (x + 0.5) / wp * two_pi;
            double* row = pos->x.data() + size_t(y * wp + x) * channels;
            for (int d = 0; d < half; ++d) {
                double t = std::pow(10000.0, 2.0 * (d / 2) / half);
                row[d] = (d % 2 == 0) ? std::sin(ye / t) : std::cos(ye / t);
                row[half + d] = (d % 2 == 0) ? std::sin(xe / t) : std::cos(xe / t);
            }
        }
    }
    return pos;
}

namespace {

void fill_classifier_rows(const ag::Value& w, const std::vector<std::string>& prompts,
                          const vlkt::EmbeddingProvider& provider) {
    int c_t = w->cols();
    if (provider.dim() != c_t) throw std::runtime_error("provider dim does not match c_t");
    for (size_t r = 0; r < prompts.size(); ++r) {
        auto e = provider.embed_text(prompts[r]);
        std::copy(e.begin(), e.end(), w->x.begin() + r * c_t);
    }
}

}  // namespace

GenModel build_model(const ModelConfig& cfg, const LabelSpace& ls,
                     const vlkt::EmbeddingProvider* provider, uint64_t seed) {
    cfg.validate();
    GenModel m;
    m.cfg = cfg;
    m.n_objects = ls.n_objects();
    m.n_hoi = ls.n_hoi();
    m.n_verbs = ls.n_verbs();

    Rng rng(mix_seed(seed, fnv1a64("model-init")));
    auto& ps = m.params;
    int C = cfg.channels, bc = cfg.backbone_channels, nq = cfg.n_q;

    m.backbone.emplace_back(ps, "backbone.0", 3, bc, 3, 2, 1, rng);
    m.backbone.emplace_back(ps, "backbone.1", bc, 2 * bc, 3, 2, 1, rng);
    m.backbone.emplace_back(ps, "backbone.2", 2 * bc, 4 * bc, 3, 2, 1, rng);
    m.backbone.emplace_back(ps, "backbone.3", 4 * bc, 4 * bc, 3, 1, 1, rng);
    m.proj = nn::ConvLayer(ps, "input_proj", 4 * bc, C, 1, 1, 0, rng);

    for (int k = 0; k < cfg.enc_layers; ++k)
        m.encoder.emplace_back(ps, "encoder." + std::to_string(k), C, cfg.heads, 2 * C, rng);

    if (cfg.use_pge) {
        m.q_h = ps.create("queries.human", {nq, C});
        m.q_o = ps.create("queries.object", {nq, C});
        m.p_q = ps.create("queries.position", {nq, C});
        nn::init_normal(m.q_h, 1.0, rng);
        nn::init_normal(m.q_o, 1.0, rng);
        nn::init_normal(m.p_q, 1.0, rng);
    } else {
        m.q_u = ps.create("queries.unified", {nq, C});
        nn::init_normal(m.q_u, 1.0, rng);
    }
    if (!cfg.use_ige) {
        m.e_a = ps.create("queries.interaction", {nq, C});
        nn::init_normal(m.e_a, 1.0, rng);
    }

    for (int k = 0; k < cfg.n_layers; ++k) {
        m.inst_dec.emplace_back(ps, "inst_dec." + std::to_string(k), C, cfg.heads, 2 * C, rng);
        m.inter_dec.emplace_back(ps, "inter_dec." + std::to_string(k), C, cfg.heads, 2 * C, rng);
    }

    m.human_box_head = nn::Mlp(ps, "human_box_head", C, C, 4, rng);
    m.object_box_head = nn::Mlp(ps, "object_box_head", C, C, 4, rng);

    m.obj_proj = nn::Linear(ps, "obj_proj", C, cfg.c_t, rng);
    m.no_obj_row = ps.create("no_object.embed", {1, cfg.c_t});
    nn::init_unit_rows(m.no_obj_row, rng);

    bool trainable = !cfg.freeze_text_classifiers;
    auto obj_w = ps.create("obj_classifier.weight", {m.n_objects, cfg.c_t});
    if (cfg.use_object_text && provider) {
        fill_classifier_rows(obj_w, vlkt::object_prompts(ls), *provider);
    } else {
        nn::init_unit_rows(obj_w, rng);
    }
    obj_w->needs_grad = trainable;
    m.obj_cls = {obj_w, cfg.theta_obj, trainable, {}};

    if (m.verb_mode()) {
        m.verb_head = nn::Linear(ps, "verb_head", C, m.n_verbs, rng);
    } else {
        m.inter_proj = nn::Linear(ps, "inter_proj", C, cfg.c_t, rng);
        auto inter_w = ps.create("inter_classifier.weight", {m.n_hoi, cfg.c_t});
        if (cfg.use_interaction_text && provider) {
            fill_classifier_rows(inter_w, vlkt::hoi_prompts(ls), *provider);
        } else {
            nn::init_unit_rows(inter_w, rng);
        }
        inter_w->needs_grad = trainable;
        m.inter_cls = {inter_w, cfg.theta_inter, trainable, {}};
    }
    return m;
}

ag::Value build_instance_queries(const GenModel& m) {
    if (m.cfg.use_pge)
        return ag::concat_rows({ag::add(m.q_h, m.p_q), ag::add(m.q_o, m.p_q)});
    return ag::concat_rows({m.q_u, m.q_u});
}

ag::Value make_interaction_queries(const GenModel& m, const ag::Value& v_h,
                                   const ag::Value& v_o) {
    if (m.cfg.use_ige) return ag::scale(ag::add(v_h, v_o), 0.5);
    return m.cfg.use_pge ? ag::add(m.e_a, m.p_q) : m.e_a;
}

ForwardResult forward(const GenModel& m, const Image& img) {
    if (img.h < 8 || img.w < 8)
        throw std::runtime_error("image smaller than the backbone stride");
    if (static_cast<int>(img.hwc.size()) != img.h * img.w * 3)
        throw std::runtime_error("image buffer size mismatch");

    auto x = image_to_planes(img);
    for (const auto& conv : m.backbone) x = ag::relu(conv(x));
    x = m.proj(x);

    int C = m.cfg.channels;
    int hp = x->shape[1], wp = x->shape[2];
    auto tokens = ag::transpose(ag::reshape(x, {C, hp * wp}));
    auto pos = sine_positions(hp, wp, C);
    for (const auto& enc : m.encoder) tokens = enc(tokens, pos);

    int nq = m.cfg.n_q;
    auto q_ins = build_instance_queries(m);
    auto tgt = ag::make_value({2 * nq, C}, false);

    ForwardResult r;
    for (int k = 0; k < m.cfg.n_layers; ++k) {
        tgt = m.inst_dec[k](tgt, q_ins, tokens, pos);
        auto v_h = ag::slice_rows(tgt, 0, nq);
        auto v_o = ag::slice_rows(tgt, nq, 2 * nq);
        r.layers.v_h.push_back(v_h);
        r.layers.v_o.push_back(v_o);

        r.preds.human_boxes.push_back(ag::sigmoid(m.human_box_head(v_h)));
        r.preds.object_boxes.push_back(ag::sigmoid(m.object_box_head(v_o)));

        auto obj_feats = m.obj_proj(v_o);
        auto real = vlkt::cosine_scores(obj_feats, m.obj_cls);
        vlkt::Classifier no_obj{m.no_obj_row, m.cfg.theta_obj, true, {}};
        r.preds.object_logits.push_back(
            ag::concat_cols({real, vlkt::cosine_scores(obj_feats, no_obj)}));
    }

    auto va = ag::make_value({nq, C}, false);
    for (int k = 0; k < m.cfg.n_layers; ++k) {
        auto qa = make_interaction_queries(m, r.layers.v_h[k], r.layers.v_o[k]);
        r.layers.q_a.push_back(qa);
        va = m.inter_dec[k](va, qa, tokens, pos);
        r.layers.v_a.push_back(va);
        if (m.verb_mode()) {
            r.preds.inter_logits.push_back(m.verb_head(va));
        } else {
            auto pa = m.inter_proj(va);
            r.layers.p_a.push_back(pa);
            r.preds.inter_logits.push_back(vlkt::cosine_scores(pa, m.inter_cls));
        }
    }
    return r;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const GenModel& m, const std::string& path, const json& metadata) {
    json meta = metadata;
    meta["model"] = model_config_to_json(m.cfg);
    std::string header = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("GHCK", 4);
    write_pod<uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_pod<uint64_t>(out, m.params.items().size());
    for (const auto& [name, p] : m.params.items()) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(out, static_cast<uint32_t>(p->shape.size()));
        for (int d : p->shape) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
        std::vector<float> buf(p->x.begin(), p->x.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const LabelSpace& ls) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GHCK", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    auto header_len = read_pod<uint64_t>(in);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("truncated checkpoint header in " + path);

    LoadedCheckpoint lc;
    lc.metadata = json::parse(header);
    auto cfg = model_config_from_json(lc.metadata.at("model"));
    lc.model = build_model(cfg, ls, nullptr, 0);

    auto n_params = read_pod<uint64_t>(in);
    if (n_params != lc.model.params.items().size())
        throw std::runtime_error("checkpoint parameter count mismatch");
    for (uint64_t i = 0; i < n_params; ++i) {
        auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto ndims = read_pod<uint32_t>(in);
        std::vector<int> shape(ndims);
        for (auto& d : shape) d = static_cast<int>(read_pod<uint64_t>(in));
        auto p = lc.model.params.find(name);
        if (!p) throw std::runtime_error("unknown parameter in checkpoint: " + name);
        if (p->shape != shape) throw std::runtime_error("shape mismatch for parameter " + name);
        std::vector<float> buf(p->x.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated checkpoint payload at " + name);
        for (size_t k = 0; k < buf.size(); ++k) p->x[k] = buf[k];
    }
    return lc;
}

}  // namespace hoidet
