#pragma once

// Denoising-autoencoder data: span corruption of code tokens and random drops
// of AST leaves, per-leaf ancestors and DFG variables.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "structkit/model.hpp"

namespace structkit::corruption {

struct CorruptionConfig {
  double token_corrupt_rate = 0.35;
  double span_mean = 12.0;
  double structure_drop_rate = 0.35;
  std::array<double, 3> op_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};  // mask, random, delete
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

enum class TokenFate : std::uint8_t { Kept, Masked, Replaced, Deleted };

struct Survival {
  TokenFate fate = TokenFate::Kept;
  int new_index = -1;  // -1 when deleted
};

struct TokenCorruption {
  std::vector<minilang::Token> tokens;
  std::vector<Survival> survival;   // one entry per original token
  std::vector<int> sampled_lengths;  // raw Poisson draws, one per span
  std::vector<int> span_lengths;     // lengths actually applied
  std::size_t affected = 0;

  double affected_fraction() const {
    return survival.empty() ? 0.0 : static_cast<double>(affected) / static_cast<double>(survival.size());
  }
};

/// Spans are applied until ceil(rate * n) original tokens are affected. Random
/// replacements draw from the non-special part of the vocabulary.
TokenCorruption corrupt_tokens(std::span<const minilang::Token> tokens, const minilang::Vocabulary& vocab,
                               const CorruptionConfig& cfg, std::mt19937_64& rng);

struct StructureCorruption {
  std::vector<int> kept_leaves;     // original leaf indices, ascending
  std::vector<int> kept_variables;  // original variable indices, ascending
  std::vector<structure::RootLeafPath> paths;  // thinned paths of the kept leaves
  structure::LeafSimilarity similarity;         // recomputed on the thinned paths
  std::size_t dropped_leaves = 0;
  std::size_t dropped_variables = 0;
};

/// Drops floor(rate * n) leaves and variables and thins every kept leaf's
/// interior ancestors independently at the same rate. The first path node and
/// the leaf itself always stay.
StructureCorruption corrupt_structure(const structure::StructuredCode& code, const CorruptionConfig& cfg,
                                      std::mt19937_64& rng);

struct DaeExample {
  model::Example example;
  TokenCorruption tokens;
  StructureCorruption structure;
};

/// Corrupted encoder side, clean target side. Masked and replaced tokens keep
/// their links, deleted ones lose them; a variable with no surviving linked
/// token is dropped.
DaeExample make_dae_example(const structure::StructuredCode& code, const minilang::Vocabulary& vocab,
                            const model::ModelConfig& model_cfg, const CorruptionConfig& cfg, std::mt19937_64& rng);

/// Per-example generator seeded with global_seed ^ index.
std::mt19937_64 example_rng(std::uint64_t global_seed, std::uint64_t index);

}  // namespace structkit::corruption
