#include "hoidet/vlkt.hpp"

#include "hoidet/rng.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hoidet::vlkt {

namespace {
constexpr double kVerbWeight = 1.0;
constexpr double kObjectWeight = 1.0;
constexpr double kContextWeight = 0.5;

void normalize(std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-12) throw std::runtime_error("cannot normalize a zero vector");
    for (double& x : v) x /= n;
}

void axpy(std::vector<double>& acc, double a, const std::vector<double>& v) {
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += a * v[i];
}
}  // namespace

std::string hoi_prompt(const VerbRec& verb, const ObjectRec& object) {
    if (verb.is_no_interaction)
        return "A photo of a person and " + object.article + " " + object.name;
    if (verb.gerund.empty())
        throw std::runtime_error("verb '" + verb.name + "' has no gerund form");
    return "A photo of a person " + verb.gerund + " " + object.article + " " + object.name;
}

std::string object_prompt(const ObjectRec& object) {
    return "A photo of " + object.article + " " + object.name;
}

std::vector<std::string> hoi_prompts(const LabelSpace& ls) {
    std::vector<std::string> out;
    out.reserve(ls.n_hoi());
    for (const auto& t : ls.triplets)
        out.push_back(hoi_prompt(ls.verbs[t.verb_id], ls.objects[t.object_id]));
    return out;
}

std::vector<std::string> object_prompts(const LabelSpace& ls) {
    std::vector<std::string> out;
    out.reserve(ls.n_objects());
    for (const auto& o : ls.objects) out.push_back(object_prompt(o));
    return out;
}

SyntheticTextProvider::SyntheticTextProvider(uint64_t seed, int c_t) : seed_(seed), c_t_(c_t) {
    if (c_t < 8) throw std::runtime_error("embedding dimension must be at least 8");
}

std::vector<double> SyntheticTextProvider::token_vector(const std::string& token) const {
    Rng rng(mix_seed(seed_, fnv1a64(token)));
    std::vector<double> v(c_t_);
    for (auto& x : v) x = rng.normal();
    normalize(v);
    return v;
}

namespace {
// Splits "<head> a/an <object>" at the last article word; returns false when
// no standalone article is present.
bool split_at_article(const std::string& s, std::string& head, std::string& object) {
    size_t an = s.rfind(" an ");
    size_t a = s.rfind(" a ");
    size_t cut, len;
    if (an != std::string::npos && (a == std::string::npos || an > a)) {
        cut = an;
        len = 4;
    } else if (a != std::string::npos) {
        cut = a;
        len = 3;
    } else {
        return false;
    }
    head = s.substr(0, cut);
    object = s.substr(cut + len);
    return !object.empty();
}
}  // namespace

std::vector<double> SyntheticTextProvider::embed_text(const std::string& prompt) const {
    const std::string person_prefix = "A photo of a person ";
    const std::string photo_prefix_a = "A photo of a ";
    const std::string photo_prefix_an = "A photo of an ";

    std::vector<double> acc(c_t_, 0.0);
    if (prompt.rfind(person_prefix, 0) == 0) {
        std::string rest = prompt.substr(person_prefix.size());
        std::string head, object;
        if (split_at_article(" " + rest, head, object)) {
            // head keeps the leading sentinel space; trim it
            size_t start = head.find_first_not_of(' ');
            std::string verb_tok = start == std::string::npos ? "and" : head.substr(start);
            axpy(acc, kVerbWeight, token_vector(verb_tok));
            axpy(acc, kObjectWeight, token_vector(object));
            axpy(acc, kContextWeight, token_vector("person"));
            normalize(acc);
            return acc;
        }
    } else if (prompt.rfind(photo_prefix_an, 0) == 0) {
        axpy(acc, kObjectWeight, token_vector(prompt.substr(photo_prefix_an.size())));
        axpy(acc, kContextWeight, token_vector("photo"));
        normalize(acc);
        return acc;
    } else if (prompt.rfind(photo_prefix_a, 0) == 0) {
        axpy(acc, kObjectWeight, token_vector(prompt.substr(photo_prefix_a.size())));
        axpy(acc, kContextWeight, token_vector("photo"));
        normalize(acc);
        return acc;
    }
    // Anything outside the templates embeds as a single token.
    return token_vector(prompt);
}

EmbeddingMatrix load_embedding_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EMB1", 4) != 0)
        throw std::runtime_error("bad embedding file magic in " + path);
    uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    if (!in || rows == 0 || cols == 0)
        throw std::runtime_error("bad embedding file header in " + path);
    EmbeddingMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.resize(rows * cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated embedding file: " + path);
    for (float x : m.data)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + path);
    return m;
}

void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    out.write("EMB1", 4);
    uint64_t rows = m.rows, cols = m.cols;
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("failed writing embedding file: " + path);
}

size_t renormalize_rows(EmbeddingMatrix& m) {
    size_t fixed = 0;
    for (size_t r = 0; r < m.rows; ++r) {
        double n = 0;
        for (size_t c = 0; c < m.cols; ++c) n += double(m.row(r)[c]) * m.row(r)[c];
        n = std::sqrt(n);
        if (std::abs(n - 1.0) > 1e-3) {
            if (n < 1e-12) throw std::runtime_error("zero-norm embedding row");
            for (size_t c = 0; c < m.cols; ++c) m.row(r)[c] = static_cast<float>(m.row(r)[c] / n);
            ++fixed;
        }
    }
    if (fixed > 0)
        std::fprintf(stderr, "warning: renormalized %zu embedding rows with non-unit norm\n",
                     fixed);
    return fixed;
}

KeyedEmbeddings::KeyedEmbeddings(const std::string& keys_path, const std::string& matrix_path) {
    std::ifstream in(keys_path);
    if (!in) throw std::runtime_error("cannot open keys file: " + keys_path);
    std::string line;
    std::vector<std::string> keys;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        keys.push_back(line);
    }
    while (!keys.empty() && keys.back().empty()) keys.pop_back();
    matrix_ = load_embedding_matrix(matrix_path);
    if (keys.size() != matrix_.rows)
        throw std::runtime_error("keys/matrix row mismatch: " + std::to_string(keys.size()) +
                                 " keys vs " + std::to_string(matrix_.rows) + " rows");
    renormalize_rows(matrix_);
    for (size_t i = 0; i < keys.size(); ++i) {
        if (!index_.emplace(keys[i], i).second)
            throw std::runtime_error("duplicate key: " + keys[i]);
    }
}

std::vector<double> KeyedEmbeddings::lookup(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::runtime_error("no embedding for key: " + key);
    std::vector<double> v(matrix_.cols);
    for (size_t c = 0; c < matrix_.cols; ++c) v[c] = matrix_.row(it->second)[c];
    return v;
}

std::vector<double> FileTextProvider::embed_text(const std::string& prompt) const {
    return store_.lookup(prompt);
}

Classifier init_classifier(const std::vector<std::string>& prompts,
                           const EmbeddingProvider& provider, double theta, bool trainable) {
    if (prompts.empty()) throw std::runtime_error("classifier needs at least one prompt");
    Classifier cls;
    cls.theta = theta;
    cls.trainable = trainable;
    cls.weights = ag::make_value({static_cast<int>(prompts.size()), provider.dim()}, trainable);
    for (size_t r = 0; r < prompts.size(); ++r) {
        std::vector<double> e;
        try {
            e = provider.embed_text(prompts[r]);
        } catch (const std::exception& ex) {
            throw std::runtime_error("embedding failed for prompt '" + prompts[r] +
                                     "': " + ex.what());
        }
        std::copy(e.begin(), e.end(), cls.weights->x.begin() + r * provider.dim());
    }
    return cls;
}

Classifier init_classifier_from_matrix(const EmbeddingMatrix& m, double theta, bool trainable) {
    EmbeddingMatrix fixed = m;
    renormalize_rows(fixed);
    Classifier cls;
    cls.theta = theta;
    cls.trainable = trainable;
    cls.weights = ag::make_value({static_cast<int>(fixed.rows), static_cast<int>(fixed.cols)},
                                 trainable);
    for (size_t i = 0; i < fixed.data.size(); ++i) cls.weights->x[i] = fixed.data[i];
    return cls;
}

namespace {
ag::Value normalize_rows_graph(const ag::Value& v) {
    auto norms = ag::sqrt_(ag::clamp_min(ag::sum_cols(ag::square(v)), 1e-24));
    return ag::div_colvec(v, norms);
}
}  // namespace

ag::Value cosine_scores(const ag::Value& features, const Classifier& cls) {
    if (features->cols() != cls.weights->cols())
        throw std::runtime_error("feature dim does not match classifier dim");
    for (int r = 0; r < features->rows(); ++r) {
        double n = 0;
        for (int c = 0; c < features->cols(); ++c) {
            double x = features->x[r * features->cols() + c];
            n += x * x;
        }
        if (n < 1e-20)
            throw std::runtime_error("cosine score undefined for zero-norm feature row " +
                                     std::to_string(r));
    }
    ag::Value rows = cls.weights;
    if (!cls.active_rows.empty()) rows = ag::gather_rows(rows, cls.active_rows);
    auto sims = ag::matmul_nt(normalize_rows_graph(features), normalize_rows_graph(rows));
    return ag::scale(sims, cls.theta);
}

ag::Value mimic_loss(const std::vector<double>& teacher, const ag::Value& interaction_features,
                     MimicNorm norm) {
    if (static_cast<int>(teacher.size()) != interaction_features->cols())
        throw std::runtime_error("teacher dim does not match interaction features");
    int n_q = interaction_features->rows();
    if (n_q < 1) throw std::runtime_error("mimic loss needs at least one query");
    auto pooled = ag::scale(ag::sum_rows(interaction_features), 1.0 / n_q);
    auto t = ag::constant({1, static_cast<int>(teacher.size())}, teacher);
    auto diff = ag::sub(pooled, t);
    return norm == MimicNorm::L1 ? ag::mean_all(ag::abs_(diff)) : ag::mean_all(ag::square(diff));
}

}  // namespace hoidet::vlkt
