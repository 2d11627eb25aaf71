#include <algorithm>
#include <cmath>

#include "structkit/errors.hpp"
#include "structkit/model.hpp"

namespace structkit::model {

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(vocab_size > minilang::kSpecialCount, "vocab_size must cover the special tokens");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model must be a positive multiple of n_heads");
  require(n_enc_layers >= 0 && n_dec_layers >= 1, "need at least one decoder layer");
  require(d_ff > 0, "d_ff must be positive");
  require(h_max >= 2, "H_max must be at least 2");
  require(phi_buckets >= 1 && phi_max_distance >= 1, "phi bucket settings must be positive");
  require(d_dfp > 0 && d_app > 0 && d_dfp + d_app <= d_model, "d_dfp + d_app must fit in d_model");
  require(max_code_tokens > 0 && max_leaves > 0 && max_vars > 0 && max_target_tokens > 0,
          "sequence caps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},         {"d_model", d_model},
          {"n_enc_layers", n_enc_layers},     {"n_dec_layers", n_dec_layers},
          {"n_heads", n_heads},               {"d_ff", d_ff},
          {"h_max", h_max},                   {"phi_buckets", phi_buckets},
          {"phi_max_distance", phi_max_distance}, {"d_dfp", d_dfp},
          {"d_app", d_app},                   {"max_code_tokens", max_code_tokens},
          {"max_leaves", max_leaves},         {"max_vars", max_vars},
          {"max_target_tokens", max_target_tokens}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size");
  c.d_model = j.at("d_model");
  c.n_enc_layers = j.at("n_enc_layers");
  c.n_dec_layers = j.at("n_dec_layers");
  c.n_heads = j.at("n_heads");
  c.d_ff = j.at("d_ff");
  c.h_max = j.at("h_max");
  c.phi_buckets = j.at("phi_buckets");
  c.phi_max_distance = j.at("phi_max_distance");
  c.d_dfp = j.at("d_dfp");
  c.d_app = j.at("d_app");
  c.max_code_tokens = j.at("max_code_tokens");
  c.max_leaves = j.at("max_leaves");
  c.max_vars = j.at("max_vars");
  c.max_target_tokens = j.at("max_target_tokens");
  c.validate();
  return c;
}

int relative_bucket(int distance, int n_buckets, int max_distance) {
  distance = std::abs(distance);
  const int exact = std::min(8, std::max(1, n_buckets / 2));
  if (distance < exact) return distance;
  if (n_buckets <= exact || max_distance <= exact) return n_buckets - 1;
  const double frac = std::log(static_cast<double>(distance) / exact) / std::log(static_cast<double>(max_distance) / exact);
  const int b = exact + static_cast<int>(frac * (n_buckets - exact));
  return std::min(b, n_buckets - 1);
}

EncoderInput make_encoder_input(const structure::StructuredCode& code, const ModelConfig& cfg, StructureFlags flags) {
  EncoderInput in;
  const std::size_t s = std::min(code.tokens.size(), static_cast<std::size_t>(cfg.max_code_tokens));
  for (std::size_t i = 0; i < s; ++i) in.token_ids.push_back(code.tokens[i].id);

  const std::size_t n_leaves = flags.ast ? std::min(code.paths.size(), static_cast<std::size_t>(cfg.max_leaves)) : 0;
  for (std::size_t l = 0; l < n_leaves; ++l) {
    std::vector<int> types;
    for (auto t : code.paths[l].node_types) types.push_back(static_cast<int>(t));
    in.leaf_types.push_back(std::move(types));
  }
  in.link_ast = BoolMatrix(s, n_leaves);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t l = 0; l < n_leaves; ++l) in.link_ast.set(i, l, code.link_ast(i, l));
  }
  in.similarity.assign(n_leaves * n_leaves, 0.0);
  for (std::size_t a = 0; a < n_leaves; ++a) {
    for (std::size_t b = 0; b < n_leaves; ++b) in.similarity[a * n_leaves + b] = code.similarity(a, b);
  }

  const std::size_t nv = flags.dfg ? std::min(code.dfg.size(), static_cast<std::size_t>(cfg.max_vars)) : 0;
  in.n_vars = nv;
  in.link_dfg = BoolMatrix(s, nv);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t v = 0; v < nv; ++v) in.link_dfg.set(i, v, code.dfg.link(i, v));
  }
  in.adjacency = BoolMatrix(nv, nv);
  for (std::size_t a = 0; a < nv; ++a) {
    for (std::size_t b = 0; b < nv; ++b) in.adjacency.set(a, b, code.dfg.adjacency(a, b));
  }
  return in;
}

EncoderInput make_text_input(std::span<const minilang::Token> tokens, const ModelConfig& cfg) {
  EncoderInput in;
  const std::size_t s = std::min(tokens.size(), static_cast<std::size_t>(cfg.max_code_tokens));
  for (std::size_t i = 0; i < s; ++i) in.token_ids.push_back(tokens[i].id);
  in.link_ast = BoolMatrix(s, 0);
  in.link_dfg = BoolMatrix(s, 0);
  in.adjacency = BoolMatrix(0, 0);
  return in;
}

TargetLabels make_target_labels(const structure::StructuredCode& code, const ModelConfig& cfg) {
  TargetLabels t;
  t.has_structure = true;
  const std::size_t n = std::min(code.tokens.size(), static_cast<std::size_t>(cfg.max_target_tokens));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tok = code.tokens[i];
    t.token_ids.push_back(tok.id);
    std::vector<int> types;
    const auto& path = code.paths.at(static_cast<std::size_t>(tok.leaf));
    const std::size_t keep = std::min(path.size(), static_cast<std::size_t>(cfg.h_max));
    for (std::size_t k = path.size() - keep; k < path.size(); ++k) types.push_back(static_cast<int>(path.node_types[k]));
    t.path_types.push_back(std::move(types));
  }
  const auto full = structure::data_flow_targets(code.dfg.link, code.dfg.adjacency);
  t.flow = BoolMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) t.flow.set(i, j, full(i, j));
  }
  return t;
}

TargetLabels make_text_target(std::span<const minilang::Token> tokens, const ModelConfig& cfg) {
  TargetLabels t;
  const std::size_t n = std::min(tokens.size(), static_cast<std::size_t>(cfg.max_target_tokens));
  for (std::size_t i = 0; i < n; ++i) t.token_ids.push_back(tokens[i].id);
  t.flow = BoolMatrix(n, n);
  return t;
}

Tensor embed_leaf(std::span<const int> path_types, const Tensor& type_table, const Tensor& height_table) {
  const std::size_t d = type_table.cols();
  Tensor e = Tensor::matrix(1, d);
  const std::size_t len = path_types.size();
  if (len > height_table.rows()) throw HeightOverflow(static_cast<int>(len) - 1, static_cast<int>(height_table.rows()));
  for (std::size_t i = 0; i < len; ++i) {
    const int type = path_types[i];
    if (type < 0 || static_cast<std::size_t>(type) >= type_table.rows()) throw UnknownNodeType(type);
    const std::size_t height = len - 1 - i;
    for (std::size_t c = 0; c < d; ++c) e[c] += type_table(static_cast<std::size_t>(type), c) * height_table(height, c);
  }
  return e;
}

BiasPlan plan_encoder_bias(const EncoderInput& in, const ModelConfig& cfg) {
  enum class Seg { Special, Code, Leaf, Var };
  const std::size_t n = in.length();
  auto segment = [&](std::size_t p) {
    if (p == in.cls() || p == in.sep()) return Seg::Special;
    if (p < in.sep()) return Seg::Code;
    if (p < in.var_begin()) return Seg::Leaf;
    return Seg::Var;
  };
  BiasPlan plan;
  plan.rows = plan.cols = n;
  plan.kind.assign(n * n, PairKind::Masked);
  plan.bucket.assign(n * n, 0);
  plan.sim.assign(n * n, 0.0);
  const std::size_t nl = in.n_leaves();
  for (std::size_t i = 0; i < n; ++i) {
    const Seg si = segment(i);
    for (std::size_t j = 0; j < n; ++j) {
      const Seg sj = segment(j);
      const std::size_t k = plan.index(i, j);
      PairKind kind = PairKind::Masked;
      if (si == Seg::Special || sj == Seg::Special) {
        kind = PairKind::Open;
      } else if (si == Seg::Code && sj == Seg::Code) {
        kind = PairKind::Relative;
        plan.bucket[k] = relative_bucket(static_cast<int>(i) - static_cast<int>(j), cfg.phi_buckets, cfg.phi_max_distance);
      } else if (si == Seg::Leaf && sj == Seg::Leaf) {
        kind = PairKind::LeafLeaf;
        plan.sim[k] = in.similarity[(i - in.leaf_begin()) * nl + (j - in.leaf_begin())];
      } else if (si == Seg::Var && sj == Seg::Var) {
        const std::size_t a = i - in.var_begin(), b = j - in.var_begin();
        kind = (a == b || in.adjacency(a, b)) ? PairKind::Open : PairKind::Masked;
      } else if (si == Seg::Code && sj == Seg::Leaf) {
        kind = in.link_ast(i - in.code_begin(), j - in.leaf_begin()) ? PairKind::Open : PairKind::Masked;
      } else if (si == Seg::Leaf && sj == Seg::Code) {
        kind = in.link_ast(j - in.code_begin(), i - in.leaf_begin()) ? PairKind::Open : PairKind::Masked;
      } else if (si == Seg::Code && sj == Seg::Var) {
        kind = in.link_dfg(i - in.code_begin(), j - in.var_begin()) ? PairKind::Open : PairKind::Masked;
      } else if (si == Seg::Var && sj == Seg::Code) {
        kind = in.link_dfg(j - in.code_begin(), i - in.var_begin()) ? PairKind::Open : PairKind::Masked;
      }
      // leaf <-> var stays masked
      plan.kind[k] = kind;
    }
  }
  return plan;
}

BiasPlan plan_causal_bias(std::size_t length, const ModelConfig& cfg) {
  BiasPlan plan;
  plan.rows = plan.cols = length;
  plan.kind.assign(length * length, PairKind::Masked);
  plan.bucket.assign(length * length, 0);
  plan.sim.assign(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      plan.kind[plan.index(i, j)] = PairKind::Relative;
      plan.bucket[plan.index(i, j)] = relative_bucket(static_cast<int>(i - j), cfg.phi_buckets, cfg.phi_max_distance);
    }
  }
  return plan;
}

Tensor realize_bias(const BiasPlan& plan, std::span<const double> phi_row, double w_a, double w_b) {
  Tensor bias = Tensor::matrix(plan.rows, plan.cols);
  for (std::size_t k = 0; k < plan.kind.size(); ++k) {
    switch (plan.kind[k]) {
      case PairKind::Open: bias[k] = 0.0; break;
      case PairKind::Masked: bias[k] = numkit::kNegInf; break;
      case PairKind::Relative: bias[k] = phi_row[static_cast<std::size_t>(plan.bucket[k])]; break;
      case PairKind::LeafLeaf: bias[k] = w_a * plan.sim[k] + w_b; break;
    }
  }
  return bias;
}

std::vector<Tensor> build_attention_bias(const EncoderInput& input, const ModelConfig& cfg, const Tensor& phi,
                                         const Tensor& w_a, const Tensor& w_b) {
  const BiasPlan plan = plan_encoder_bias(input, cfg);
  std::vector<Tensor> out;
  for (int h = 0; h < cfg.n_heads; ++h) {
    out.push_back(realize_bias(plan, phi.row(static_cast<std::size_t>(h)), w_a[static_cast<std::size_t>(h)],
                               w_b[static_cast<std::size_t>(h)]));
  }
  return out;
}

double combined_loss(double lm, double app, double dfp, double alpha1, double alpha2) {
  return lm + alpha1 * app + alpha2 * dfp;
}

}  // namespace structkit::model
