#pragma once

#include "hoidet/label_space.hpp"
#include "hoidet/tensor.hpp"

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace hoidet::vlkt {

// Prompt templates used for classifier initialization and export.
std::string hoi_prompt(const VerbRec& verb, const ObjectRec& object);
std::string object_prompt(const ObjectRec& object);
std::vector<std::string> hoi_prompts(const LabelSpace& ls);
std::vector<std::string> object_prompts(const LabelSpace& ls);

class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<double> embed_text(const std::string& prompt) const = 0;
    virtual int dim() const = 0;
};

// Deterministic stand-in for a text encoder. Prompts built from the templates
// above decompose into verb/object/context tokens, each mapped to a fixed
// unit vector drawn from hash(seed, token); the mix is re-normalized. Triplets
// sharing a verb or an object therefore get correlated embeddings, which is
// what makes zero-shot transfer observable on synthetic data.
class SyntheticTextProvider : public EmbeddingProvider {
  public:
    SyntheticTextProvider(uint64_t seed, int c_t);
    std::vector<double> embed_text(const std::string& prompt) const override;
    int dim() const override { return c_t_; }

    std::vector<double> token_vector(const std::string& token) const;

  private:
    uint64_t seed_;
    int c_t_;
};

// Row-major float32 matrix with the EMB1 on-disk layout.
struct EmbeddingMatrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<float> data;

    const float* row(size_t r) const { return data.data() + r * cols; }
    float* row(size_t r) { return data.data() + r * cols; }
};

EmbeddingMatrix load_embedding_matrix(const std::string& path);
void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path);

// Renormalizes rows whose norm is off unit by more than 1e-3. Returns the
// number of adjusted rows and warns on stderr when nonzero.
size_t renormalize_rows(EmbeddingMatrix& m);

// Embeddings keyed by string (exported prompts, or image ids for teacher
// vectors): a text file with one key per line plus an EMB1 matrix in the same
// order.
class KeyedEmbeddings {
  public:
    KeyedEmbeddings(const std::string& keys_path, const std::string& matrix_path);
    std::vector<double> lookup(const std::string& key) const;
    bool contains(const std::string& key) const { return index_.count(key) > 0; }
    int dim() const { return static_cast<int>(matrix_.cols); }

  private:
    EmbeddingMatrix matrix_;
    std::unordered_map<std::string, size_t> index_;
};

// Provider backed by a keyed embedding file; unknown prompts are an error.
class FileTextProvider : public EmbeddingProvider {
  public:
    FileTextProvider(const std::string& keys_path, const std::string& matrix_path)
        : store_(keys_path, matrix_path) {}
    std::vector<double> embed_text(const std::string& prompt) const override;
    int dim() const override { return store_.dim(); }

  private:
    KeyedEmbeddings store_;
};

// Category classifier holding one embedding row per label plus the logit
// scale. Rows start unit-norm; frozen classifiers never change after
// construction.
struct Classifier {
    ag::Value weights;            // [n_rows, c_t]
    double theta = 100.0;
    bool trainable = false;
    std::vector<int> active_rows; // train-time row subset; empty = all
};

Classifier init_classifier(const std::vector<std::string>& prompts,
                           const EmbeddingProvider& provider, double theta, bool trainable);
Classifier init_classifier_from_matrix(const EmbeddingMatrix& m, double theta, bool trainable);

// Eq. 3 scoring: theta * cosine(v, w_j) for each classifier row (restricted
// to active_rows when set). Builds graph nodes, so it is usable in training.
ag::Value cosine_scores(const ag::Value& features, const Classifier& cls);

enum class MimicNorm { L1, L2 };

// Eq. 4: distance between the teacher vector and the query-mean of the
// interaction features, averaged over dimensions.
ag::Value mimic_loss(const std::vector<double>& teacher, const ag::Value& interaction_features,
                     MimicNorm norm);

}  // namespace hoidet::vlkt
