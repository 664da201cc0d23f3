#pragma once

#include <map>
#include <string>
#include <vector>

#include "plad/autograd.hpp"
#include "plad/params.hpp"
#include "plad/point_cloud.hpp"
#include "plad/rng.hpp"

namespace plad {

struct PromptConfig {
  // Template phrases around the shared learnable context tokens.
  std::string prefix_normal = "a point cloud of a";
  std::string suffix_normal = "normal object";
  std::string prefix_defect = "a point cloud of a";
  std::string suffix_defect = "defective object";
  int context_length = 4;

  // Text transformer dimensions.
  int text_layers = 2;
  int text_dim = 32;
  int text_heads = 2;
  int out_dim = 32;  // must match the patch embedding width

  double tau_init = 0.07;

  void validate() const;
};

// Fixed word-level vocabulary. Words are whitespace-separated template tokens;
// ids are assigned by sorted order so the mapping is independent of the order
// sentences were supplied in.
class Vocabulary {
 public:
  explicit Vocabulary(const std::vector<std::string>& sentences);

  // Throws std::invalid_argument naming the first unknown word.
  std::vector<int> tokenize(const std::string& sentence) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

// Both class embeddings plus the shared temperature, ready for scoring.
struct TextEmbeddings {
  ag::Tensor normal;  // [1, D], unit norm
  ag::Tensor defect;  // [1, D], unit norm
  ag::Tensor tau;     // [1, 1], clamped to [1e-3, 1]
};

// Hybrid prompts: per class, fixed template ids around shared learnable
// context vectors, encoded by a small bidirectional transformer whose
// last-token state is projected to the embedding width.
class PromptModel {
 public:
  PromptModel(const PromptConfig& cfg, ParamRegistry& reg, Rng& rng);

  const Vocabulary& vocab() const { return vocab_; }
  const PromptConfig& config() const { return cfg_; }

  // Fixed template token ids for one class (0 normal, 1 defective).
  const std::vector<int>& prefix_ids(int cls) const;
  const std::vector<int>& suffix_ids(int cls) const;

  // [len, text_dim] embedded sequence: prefix rows, context rows, suffix rows,
  // plus positional encodings.
  ag::Tensor build_sequence(int cls) const;

  // Encode one embedded sequence to a unit [1, out_dim] vector.
  ag::Tensor encode_sequence(const ag::Tensor& seq) const;

  TextEmbeddings encode() const;

 private:
  PromptConfig cfg_;
  Vocabulary vocab_;
  std::vector<int> prefix_ids_[2], suffix_ids_[2];

  ag::Tensor embed_, context_, pos_;
  struct Layer {
    ag::Tensor ln1_g, ln1_b;
    ag::Tensor wq, bq, wk, wv, bv, wo, bo;
    ag::Tensor ln2_g, ln2_b;
    ag::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  };
  std::vector<Layer> layers_;
  ag::Tensor final_ln_g_, final_ln_b_;
  ag::Tensor proj_w_, proj_b_;
  ag::Tensor tau_;
};

// P(normal), P(defective) for a whole cloud: softmax over the two cosine
// similarities divided by the temperature. Requires a unit-norm input row.
ag::Tensor classify_global(const ag::Tensor& global, const TextEmbeddings& text);

// Inverse-distance interpolation map from patch centers to points: each point
// takes the k_up nearest centers with weights 1/(dist + 1e-8), normalized.
ag::SparseMap interpolation_map(const PointCloud& cloud, const PatchSet& patches,
                                int k_up = 3);

struct PointScores {
  ag::Tensor patch;  // [G, 1] defective-class probability per patch
  ag::Tensor point;  // [N, 1] interpolated per-point score
};

// Per-patch defective probabilities from unit-norm patch embeddings, then
// per-point scores by inverse-distance interpolation.
PointScores score_points(const ag::Tensor& z, const TextEmbeddings& text,
                         const PointCloud& cloud, const PatchSet& patches,
                         int k_up = 3);

}  // namespace plad
