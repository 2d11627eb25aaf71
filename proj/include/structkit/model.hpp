#pragma once

// Structure-aware encoder-decoder Transformer with the AST-paths and data-flow
// auxiliary heads. Every forward op has a hand-written backward pass.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "structkit/numkit.hpp"
#include "structkit/structure.hpp"

namespace structkit::model {

using numkit::Tensor;
using structure::BoolMatrix;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int h_max = 12;
  int phi_buckets = 32;
  int phi_max_distance = 128;
  int d_dfp = 8;
  int d_app = 32;
  int max_code_tokens = 256;
  int max_leaves = 64;
  int max_vars = 32;
  int max_target_tokens = 256;

  int d_head() const { return d_model / n_heads; }
  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// T5-style distance bucket: exact below 8, logarithmic up to `max_distance`,
/// clamped to the last bucket.
int relative_bucket(int distance, int n_buckets, int max_distance);

/// Which source structures reach the encoder.
struct StructureFlags {
  bool ast = true;
  bool dfg = true;
};

/// Encoder sequence: <cls>, code tokens, <sep>, AST leaves, DFG variables.
struct EncoderInput {
  std::vector<int> token_ids;               // code or text tokens, no specials
  std::vector<std::vector<int>> leaf_types;  // per leaf, node type ids root -> leaf
  std::size_t n_vars = 0;
  BoolMatrix link_ast;                       // |S| x |leaves|
  BoolMatrix link_dfg;                       // |S| x |V|
  BoolMatrix adjacency;                      // |V| x |V|
  std::vector<double> similarity;            // |leaves| x |leaves|, row-major

  std::size_t code_len() const { return token_ids.size(); }
  std::size_t n_leaves() const { return leaf_types.size(); }
  std::size_t length() const { return 2 + code_len() + n_leaves() + n_vars; }
  std::size_t cls() const { return 0; }
  std::size_t code_begin() const { return 1; }
  std::size_t sep() const { return 1 + code_len(); }
  std::size_t leaf_begin() const { return 2 + code_len(); }
  std::size_t var_begin() const { return 2 + code_len() + n_leaves(); }
  bool text_mode() const { return n_leaves() == 0 && n_vars == 0; }
};

/// Builds the encoder input of a program, applying the config's sequence caps.
EncoderInput make_encoder_input(const structure::StructuredCode& code, const ModelConfig& cfg,
                                StructureFlags flags = {});
/// Structure-absent encoder input (text mode).
EncoderInput make_text_input(std::span<const minilang::Token> tokens, const ModelConfig& cfg);

struct TargetLabels {
  std::vector<int> token_ids;                 // code tokens, without <eos>
  std::vector<std::vector<int>> path_types;   // per token, root -> leaf type ids, at most h_max long
  BoolMatrix flow;                            // |T| x |T| data-flow targets
  bool has_structure = false;
};

TargetLabels make_target_labels(const structure::StructuredCode& code, const ModelConfig& cfg);
TargetLabels make_text_target(std::span<const minilang::Token> tokens, const ModelConfig& cfg);

struct Example {
  EncoderInput source;
  TargetLabels target;
};

/// Leaf embedding: sum over the path of E_type(type) * E_height(height).
Tensor embed_leaf(std::span<const int> path_types, const Tensor& type_table, const Tensor& height_table);

/// Per-pair role in the encoder's structure-aware attention.
enum class PairKind : std::uint8_t { Open, Masked, Relative, LeafLeaf };

struct BiasPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<PairKind> kind;
  std::vector<int> bucket;    // Relative pairs
  std::vector<double> sim;    // LeafLeaf pairs

  std::size_t index(std::size_t i, std::size_t j) const { return i * cols + j; }
};

BiasPlan plan_encoder_bias(const EncoderInput& input, const ModelConfig& cfg);
BiasPlan plan_causal_bias(std::size_t length, const ModelConfig& cfg);

/// Realized additive bias of one head: phi(bucket) for relative pairs,
/// w_a sim + w_b for leaf pairs, 0 for open pairs and -inf for masked pairs.
Tensor realize_bias(const BiasPlan& plan, std::span<const double> phi_row, double w_a, double w_b);

/// Per-head bias matrices for one encoder layer (phi: heads x buckets, w_a/w_b: heads).
std::vector<Tensor> build_attention_bias(const EncoderInput& input, const ModelConfig& cfg, const Tensor& phi,
                                         const Tensor& w_a, const Tensor& w_b);

struct LossWeights {
  double app = 0.1;  // alpha_1
  double dfp = 0.1;  // alpha_2
  double dfp_positive_weight = 1.0;
};

struct LossBreakdown {
  double lm = 0.0;
  double app = 0.0;
  double dfp = 0.0;
  double total = 0.0;
};

double combined_loss(double lm, double app, double dfp, double alpha1, double alpha2);

struct TeacherForced {
  Tensor logits;                           // (|T|+1) x vocab
  Tensor hidden;                           // (|T|+1) x d, final decoder states
  std::vector<std::vector<int>> app_pred;  // per token, argmax type per ancestor (true path heights)
  std::vector<std::vector<int>> app_true;
  Tensor dfp_prob;                         // |T| x |T|
};

struct DecodeOptions {
  int beam = 1;
  int max_len = 256;
};

struct DecodeResult {
  std::vector<int> tokens;  // without <eos>
  double log_prob = 0.0;
  bool truncated = false;
};

class StructModel {
 public:
  StructModel(ModelConfig cfg, std::uint64_t seed);
  StructModel(const StructModel&) = delete;
  StructModel& operator=(const StructModel&) = delete;
  StructModel(StructModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  numkit::ParamStore& params() { return store_; }
  const numkit::ParamStore& params() const { return store_; }

  /// Forward pass only.
  LossBreakdown loss(const Example& ex, const LossWeights& w) const;
  /// Forward and backward; parameter grads are incremented by scale * dL/dθ.
  /// Auxiliary heads with zero weight get no gradient at all.
  LossBreakdown accumulate_gradients(const Example& ex, const LossWeights& w, double scale = 1.0);

  Tensor encode(const EncoderInput& input) const;
  /// Post-softmax attention weights, [layer][head], each length x length.
  std::vector<std::vector<Tensor>> encoder_attention(const EncoderInput& input) const;

  /// Final decoder states for the shifted target sequence (start token, then tokens).
  Tensor decoder_hidden(const EncoderInput& input, std::span<const int> target_ids) const;

  TeacherForced teacher_forced(const Example& ex) const;

  /// APP distribution logits for one hidden state at one height.
  std::vector<double> app_logits(std::span<const double> hidden, int height) const;
  /// DFP probabilities over all ordered position pairs of the given hidden states.
  Tensor dfp_probabilities(const Tensor& hidden, std::size_t n_positions) const;

  /// Greedy (beam == 1) or beam search. Auxiliary heads are not evaluated.
  DecodeResult decode(const EncoderInput& input, const DecodeOptions& opts) const;

 private:
  struct Impl;
  ModelConfig cfg_;
  numkit::ParamStore store_;
};

}  // namespace structkit::model
