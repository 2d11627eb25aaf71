#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "structkit/corruption.hpp"
#include "structkit/errors.hpp"

using namespace structkit;
using namespace structkit::corruption;

namespace {

const minilang::Vocabulary& vocab() {
  static const minilang::Vocabulary v = minilang::Vocabulary::build(oracle::programs(200, 1));
  return v;
}

model::ModelConfig model_config() {
  model::ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab().size());
  return cfg;
}

structure::StructuredCode code_of(const std::string& p) { return structure::extract(p, vocab(), 12); }

}  // namespace

TEST_CASE("config validation") {
  CorruptionConfig c;
  CHECK_NOTHROW(c.validate());
  c.token_corrupt_rate = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.op_mix = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.span_mean = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("token corruption") {
  const CorruptionConfig cfg;
  SUBCASE("empty input") {
    std::mt19937_64 rng(1);
    const auto out = corrupt_tokens({}, vocab(), cfg, rng);
    CHECK(out.tokens.empty());
    CHECK(out.survival.empty());
    CHECK(out.affected == 0);
  }
  SUBCASE("survival map is consistent and the budget is met exactly") {
    for (const auto& p : oracle::programs(200, 2)) {
      const auto code = code_of(p);
      std::mt19937_64 rng(std::hash<std::string>{}(p));
      const auto out = corrupt_tokens(code.tokens, vocab(), cfg, rng);
      const std::size_t n = code.tokens.size();
      REQUIRE(out.survival.size() == n);
      CHECK(out.affected == static_cast<std::size_t>(std::ceil(0.35 * static_cast<double>(n) - 1e-9)));
      std::size_t touched = 0, next = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = out.survival[i];
        touched += s.fate != TokenFate::Kept;
        if (s.fate == TokenFate::Deleted) {
          CHECK(s.new_index == -1);
          continue;
        }
        REQUIRE(s.new_index == static_cast<int>(next));
        const auto& t = out.tokens[next++];
        if (s.fate == TokenFate::Kept) CHECK(t.id == code.tokens[i].id);
        if (s.fate == TokenFate::Masked) CHECK(t.id == minilang::kMask);
        if (s.fate == TokenFate::Replaced) CHECK_FALSE(minilang::Vocabulary::is_special(t.id));
        CHECK(t.leaf == code.tokens[i].leaf);
      }
      CHECK(next == out.tokens.size());
      CHECK(touched == out.affected);
      int applied = 0;
      for (int l : out.span_lengths) {
        CHECK(l >= 1);
        applied += l;
      }
      CHECK(static_cast<std::size_t>(applied) == out.affected);
      CHECK(out.sampled_lengths.size() == out.span_lengths.size());
    }
  }
  SUBCASE("a single op kind") {
    CorruptionConfig masks;
    masks.op_mix = {1.0, 0.0, 0.0};
    const auto code = code_of(oracle::programs(1, 3)[0]);
    std::mt19937_64 rng(4);
    const auto out = corrupt_tokens(code.tokens, vocab(), masks, rng);
    CHECK(out.tokens.size() == code.tokens.size());
    std::size_t masked = 0;
    for (const auto& t : out.tokens) masked += t.id == minilang::kMask;
    CHECK(masked == out.affected);
  }
  SUBCASE("same seed, same output") {
    const auto code = code_of(oracle::programs(1, 5)[0]);
    std::mt19937_64 a(9), b(9);
    const auto x = corrupt_tokens(code.tokens, vocab(), cfg, a), y = corrupt_tokens(code.tokens, vocab(), cfg, b);
    REQUIRE(x.tokens.size() == y.tokens.size());
    for (std::size_t i = 0; i < x.tokens.size(); ++i) CHECK(x.tokens[i].id == y.tokens[i].id);
    CHECK(x.sampled_lengths == y.sampled_lengths);
  }
}

TEST_CASE("structure corruption") {
  const CorruptionConfig cfg;
  SUBCASE("ten leaves lose exactly three") {
    const auto code = code_of("x = a + b * c - d;");
    REQUIRE(code.paths.size() == 10);
    REQUIRE(code.dfg.size() == 5);
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::mt19937_64 rng(s);
      const auto out = corrupt_structure(code, cfg, rng);
      CHECK(out.dropped_leaves == 3);
      CHECK(out.kept_leaves.size() == 7);
      CHECK(out.dropped_variables == 1);
      CHECK(std::is_sorted(out.kept_leaves.begin(), out.kept_leaves.end()));
    }
  }
  SUBCASE("thinned paths keep their leaf and a valid similarity") {
    for (const auto& p : oracle::programs(100, 6)) {
      const auto code = code_of(p);
      std::mt19937_64 rng(7);
      const auto out = corrupt_structure(code, cfg, rng);
      CHECK(out.dropped_leaves == static_cast<std::size_t>(std::floor(0.35 * static_cast<double>(code.paths.size()) + 1e-9)));
      for (std::size_t k = 0; k < out.paths.size(); ++k) {
        const auto& orig = code.paths[static_cast<std::size_t>(out.kept_leaves[k])];
        CHECK(out.paths[k].node_ids.back() == orig.node_ids.back());
        CHECK(out.paths[k].size() <= orig.size());
        CHECK(out.similarity(k, k) == std::log(2.0));
        for (std::size_t j = 0; j < out.paths.size(); ++j) {
          CHECK(out.similarity(k, j) == out.similarity(j, k));
          CHECK(out.similarity(k, j) > 0.0);
          CHECK(out.similarity(k, j) <= std::log(2.0));
        }
      }
    }
  }
  SUBCASE("drop rate zero changes nothing") {
    CorruptionConfig none;
    none.structure_drop_rate = 0.0;
    const auto code = code_of("if (a < 2) { b = a; } return b;");
    std::mt19937_64 rng(1);
    const auto out = corrupt_structure(code, none, rng);
    CHECK(out.kept_leaves.size() == code.paths.size());
    CHECK(out.kept_variables.size() == code.dfg.size());
    for (std::size_t k = 0; k < out.paths.size(); ++k) CHECK(out.paths[k].node_ids == code.paths[k].node_ids);
    CHECK(out.similarity.values == code.similarity.values);
  }
}

TEST_CASE("denoising examples") {
  const auto mcfg = model_config();
  SUBCASE("all rates zero reproduce the clean input") {
    CorruptionConfig none;
    none.token_corrupt_rate = 0.0;
    none.structure_drop_rate = 0.0;
    for (const auto& p : oracle::programs(30, 8)) {
      const auto code = code_of(p);
      std::mt19937_64 rng(1);
      const auto dae = make_dae_example(code, vocab(), mcfg, none, rng);
      const auto clean = model::make_encoder_input(code, mcfg);
      const auto& in = dae.example.source;
      CHECK(in.token_ids == clean.token_ids);
      CHECK(in.leaf_types == clean.leaf_types);
      CHECK(in.n_vars == clean.n_vars);
      CHECK(in.link_ast == clean.link_ast);
      CHECK(in.link_dfg == clean.link_dfg);
      CHECK(in.adjacency == clean.adjacency);
      CHECK(in.similarity == clean.similarity);
    }
  }
  SUBCASE("deleting the only token of a variable drops the variable") {
    CorruptionConfig del;
    del.token_corrupt_rate = 0.25;  // one of four tokens
    del.structure_drop_rate = 0.0;
    del.op_mix = {0.0, 0.0, 1.0};
    const auto code = code_of("x = a;");
    int seen = 0;
    for (std::uint64_t s = 0; s < 200 && seen < 3; ++s) {
      std::mt19937_64 rng(s);
      const auto dae = make_dae_example(code, vocab(), mcfg, del, rng);
      if (dae.tokens.survival[2].fate != TokenFate::Deleted) continue;
      ++seen;
      const auto& in = dae.example.source;
      REQUIRE(in.token_ids.size() == 3);  // x = ;
      CHECK(in.n_vars == 1);               // only x survives
      CHECK(in.link_dfg.rows() == 3);
      CHECK(in.link_dfg.coordinates() == std::vector<std::pair<int, int>>{{0, 0}});
      CHECK(in.adjacency.count() == 0);   // the x <- a edge went with a
      CHECK(in.n_leaves() == 4);           // the leaf itself is still there
      CHECK(in.link_ast.coordinates() == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 3}});
    }
    CHECK(seen == 3);
  }
  SUBCASE("masked tokens keep their links") {
    CorruptionConfig mask;
    mask.token_corrupt_rate = 0.25;
    mask.structure_drop_rate = 0.0;
    mask.op_mix = {1.0, 0.0, 0.0};
    const auto code = code_of("x = a;");
    std::mt19937_64 rng(3);
    const auto dae = make_dae_example(code, vocab(), mcfg, mask, rng);
    const auto& in = dae.example.source;
    CHECK(in.n_vars == 2);
    CHECK(in.link_dfg == code.dfg.link);
    CHECK(in.link_ast == code.link_ast);
  }
  SUBCASE("targets are never corrupted") {
    const CorruptionConfig cfg;
    for (const auto& p : oracle::programs(50, 9)) {
      const auto code = code_of(p);
      std::mt19937_64 rng(2);
      const auto dae = make_dae_example(code, vocab(), mcfg, cfg, rng);
      const auto clean = model::make_target_labels(code, mcfg);
      CHECK(dae.example.target.token_ids == clean.token_ids);
      CHECK(dae.example.target.path_types == clean.path_types);
      CHECK(dae.example.target.flow == clean.flow);
      CHECK(dae.example.target.flow == structure::data_flow_targets(code.dfg.link, code.dfg.adjacency));
    }
  }
  SUBCASE("links reference survivors only and shapes agree") {
    const CorruptionConfig cfg;
    for (const auto& p : oracle::programs(50, 10)) {
      const auto code = code_of(p);
      auto rng = example_rng(77, 3);
      const auto dae = make_dae_example(code, vocab(), mcfg, cfg, rng);
      const auto& in = dae.example.source;
      CHECK(in.link_ast.rows() == in.code_len());
      CHECK(in.link_ast.cols() == in.n_leaves());
      CHECK(in.link_dfg.rows() == in.code_len());
      CHECK(in.link_dfg.cols() == in.n_vars);
      CHECK(in.similarity.size() == in.n_leaves() * in.n_leaves());
      for (std::size_t i = 0; i < in.code_len(); ++i) CHECK(in.link_ast.row_sum(i) <= 1);
      for (std::size_t v = 0; v < in.n_vars; ++v) CHECK(in.link_dfg.col_sum(v) >= 1);
      CHECK(in.length() >= 2);
    }
  }
  SUBCASE("per-example seeds are reproducible") {
    const auto code = code_of(oracle::programs(1, 11)[0]);
    auto a = example_rng(5, 12), b = example_rng(5, 12), c = example_rng(5, 13);
    const CorruptionConfig cfg;
    const auto x = make_dae_example(code, vocab(), mcfg, cfg, a);
    const auto y = make_dae_example(code, vocab(), mcfg, cfg, b);
    const auto z = make_dae_example(code, vocab(), mcfg, cfg, c);
    CHECK(x.example.source.token_ids == y.example.source.token_ids);
    CHECK(x.example.source.leaf_types == y.example.source.leaf_types);
    CHECK(x.structure.kept_variables == y.structure.kept_variables);
    CHECK((x.example.source.token_ids != z.example.source.token_ids ||
           x.structure.kept_leaves != z.structure.kept_leaves));
  }
}

TEST_CASE("corruption statistics concentrate") {
  const CorruptionConfig cfg;
  structkit::pipeline::GeneratorConfig big;
  big.min_lexemes = 260;
  double affected = 0, sampled = 0;
  std::size_t spans = 0, n = 0;
  for (const auto& p : oracle::programs(200, 12, big)) {
    const auto code = code_of(p);
    REQUIRE(code.tokens.size() >= 200);
    const std::span<const minilang::Token> head(code.tokens.data(), 200);
    auto rng = example_rng(1, n++);
    const auto out = corrupt_tokens(head, vocab(), cfg, rng);
    affected += out.affected_fraction();
    for (int l : out.sampled_lengths) sampled += l, ++spans;
  }
  CHECK(std::abs(affected / static_cast<double>(n) - 0.35) <= 0.02);
  CHECK(std::abs(sampled / static_cast<double>(spans) - 12.0) <= 1.0);
}
