#include "structkit/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "structkit/errors.hpp"

namespace structkit::corruption {

using structure::BoolMatrix;

void CorruptionConfig::validate() const {
  auto rate = [](double r, const char* name) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  rate(token_corrupt_rate, "token_corrupt_rate");
  rate(structure_drop_rate, "structure_drop_rate");
  if (!(span_mean > 0.0)) throw ConfigError("span_mean must be positive");
  double sum = 0.0;
  for (double p : op_mix) {
    rate(p, "op_mix entries");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("op_mix must sum to 1");
}

TokenCorruption corrupt_tokens(std::span<const minilang::Token> tokens, const minilang::Vocabulary& vocab,
                               const CorruptionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  TokenCorruption out;
  const std::size_t n = tokens.size();
  out.survival.resize(n);
  if (n == 0) return out;

  const auto budget = static_cast<std::size_t>(std::ceil(cfg.token_corrupt_rate * static_cast<double>(n) - 1e-9));
  std::poisson_distribution<int> span_len(cfg.span_mean);
  std::discrete_distribution<int> op(cfg.op_mix.begin(), cfg.op_mix.end());
  const int first_regular = minilang::kSpecialCount;
  const int last_id = static_cast<int>(vocab.size()) - 1;
  std::uniform_int_distribution<int> random_token(first_regular, std::max(first_regular, last_id));

  std::vector<bool> hit(n, false);
  std::vector<TokenFate> fate(n, TokenFate::Kept);
  std::vector<int> replacement(n, -1);
  std::vector<std::size_t> free_positions;
  while (out.affected < budget) {
    free_positions.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!hit[i]) free_positions.push_back(i);
    }
    if (free_positions.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, free_positions.size() - 1);
    const std::size_t start = free_positions[pick(rng)];
    const int sampled = span_len(rng);
    out.sampled_lengths.push_back(sampled);
    std::size_t run = 0;
    while (start + run < n && !hit[start + run]) ++run;
    const std::size_t len =
        std::max<std::size_t>(1, std::min({static_cast<std::size_t>(std::max(sampled, 0)), budget - out.affected, run}));
    const TokenFate f = std::array{TokenFate::Masked, TokenFate::Replaced, TokenFate::Deleted}[op(rng)];
    for (std::size_t i = start; i < start + len; ++i) {
      hit[i] = true;
      fate[i] = f;
      if (f == TokenFate::Replaced) replacement[i] = random_token(rng);
    }
    out.span_lengths.push_back(static_cast<int>(len));
    out.affected += len;
  }

  for (std::size_t i = 0; i < n; ++i) {
    out.survival[i].fate = fate[i];
    if (fate[i] == TokenFate::Deleted) continue;
    minilang::Token t = tokens[i];
    if (fate[i] == TokenFate::Masked) {
      t.id = minilang::kMask;
      t.text = vocab.key(minilang::kMask);
      t.continuation = false;
    } else if (fate[i] == TokenFate::Replaced) {
      t.id = replacement[i];
      t.text = vocab.key(replacement[i]);
      t.continuation = false;
    }
    out.survival[i].new_index = static_cast<int>(out.tokens.size());
    out.tokens.push_back(std::move(t));
  }
  return out;
}

namespace {

std::vector<int> keep_after_drop(std::size_t n, double rate, std::mt19937_64& rng, std::size_t& dropped) {
  dropped = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> kept(order.begin() + static_cast<std::ptrdiff_t>(dropped), order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace

StructureCorruption corrupt_structure(const structure::StructuredCode& code, const CorruptionConfig& cfg,
                                      std::mt19937_64& rng) {
  cfg.validate();
  StructureCorruption out;
  out.kept_leaves = keep_after_drop(code.paths.size(), cfg.structure_drop_rate, rng, out.dropped_leaves);
  out.kept_variables = keep_after_drop(code.dfg.size(), cfg.structure_drop_rate, rng, out.dropped_variables);
  std::bernoulli_distribution drop(cfg.structure_drop_rate);
  for (int l : out.kept_leaves) {
    const auto& src = code.paths[static_cast<std::size_t>(l)];
    structure::RootLeafPath path;
    path.leaf = src.leaf;
    for (std::size_t k = 0; k < src.size(); ++k) {
      // the top node and the leaf always stay, so every pair still shares a node
      const bool pinned = k == 0 || k + 1 == src.size();
      if (!pinned && drop(rng)) continue;
      path.node_ids.push_back(src.node_ids[k]);
      path.node_types.push_back(src.node_types[k]);
    }
    out.paths.push_back(std::move(path));
  }
  out.similarity = structure::leaf_similarity(out.paths);
  return out;
}

DaeExample make_dae_example(const structure::StructuredCode& code, const minilang::Vocabulary& vocab,
                            const model::ModelConfig& model_cfg, const CorruptionConfig& cfg, std::mt19937_64& rng) {
  DaeExample dae;
  dae.tokens = corrupt_tokens(code.tokens, vocab, cfg, rng);
  dae.structure = corrupt_structure(code, cfg, rng);
  const auto& tc = dae.tokens;
  const auto& sc = dae.structure;

  // variables keep only if a linked token survived
  std::vector<int> vars;
  for (int v : sc.kept_variables) {
    bool linked = false;
    for (std::size_t i = 0; i < code.tokens.size() && !linked; ++i) {
      linked = tc.survival[i].fate != TokenFate::Deleted && code.dfg.link(i, static_cast<std::size_t>(v));
    }
    if (linked) vars.push_back(v);
  }

  std::vector<int> origin(tc.tokens.size());
  for (std::size_t i = 0; i < tc.survival.size(); ++i) {
    if (tc.survival[i].new_index >= 0) origin[static_cast<std::size_t>(tc.survival[i].new_index)] = static_cast<int>(i);
  }

  auto& in = dae.example.source;
  const std::size_t s = std::min(tc.tokens.size(), static_cast<std::size_t>(model_cfg.max_code_tokens));
  const std::size_t nl = std::min(sc.kept_leaves.size(), static_cast<std::size_t>(model_cfg.max_leaves));
  const std::size_t nv = std::min(vars.size(), static_cast<std::size_t>(model_cfg.max_vars));
  for (std::size_t i = 0; i < s; ++i) in.token_ids.push_back(tc.tokens[i].id);
  for (std::size_t l = 0; l < nl; ++l) {
    std::vector<int> types;
    for (auto t : sc.paths[l].node_types) types.push_back(static_cast<int>(t));
    in.leaf_types.push_back(std::move(types));
  }
  in.n_vars = nv;
  in.link_ast = BoolMatrix(s, nl);
  in.link_dfg = BoolMatrix(s, nv);
  for (std::size_t i = 0; i < s; ++i) {
    const auto o = static_cast<std::size_t>(origin[i]);
    for (std::size_t l = 0; l < nl; ++l) in.link_ast.set(i, l, code.link_ast(o, static_cast<std::size_t>(sc.kept_leaves[l])));
    for (std::size_t v = 0; v < nv; ++v) in.link_dfg.set(i, v, code.dfg.link(o, static_cast<std::size_t>(vars[v])));
  }
  in.adjacency = BoolMatrix(nv, nv);
  for (std::size_t a = 0; a < nv; ++a) {
    for (std::size_t b = 0; b < nv; ++b) {
      in.adjacency.set(a, b, code.dfg.adjacency(static_cast<std::size_t>(vars[a]), static_cast<std::size_t>(vars[b])));
    }
  }
  in.similarity.assign(nl * nl, 0.0);
  for (std::size_t a = 0; a < nl; ++a) {
    for (std::size_t b = 0; b < nl; ++b) in.similarity[a * nl + b] = sc.similarity(a, b);
  }

  dae.example.target = model::make_target_labels(code, model_cfg);
  return dae;
}

std::mt19937_64 example_rng(std::uint64_t global_seed, std::uint64_t index) {
  return std::mt19937_64(global_seed ^ index);
}

}  // namespace structkit::corruption
